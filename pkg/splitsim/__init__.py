#  Copyright (c) 2025 Markus Ressel
#  .
#  Permission is hereby granted, free of charge, to any person obtaining a copy
#  of this software and associated documentation files (the "Software"), to deal
#  in the Software without restriction, including without limitation the rights
#  to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
#  copies of the Software, and to permit persons to whom the Software is
#  furnished to do so, subject to the following conditions:
#  .
#  The above copyright notice and this permission notice shall be included in all
#  copies or substantial portions of the Software.
#  .
#  THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
#  IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
#  FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
#  AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
#  LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
#  OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
#  SOFTWARE.

import logging

from splitsim.const import *

LOGGER = logging.getLogger(__name__)

# global list of all commands
COMMAND_LIST = []

# global list of all acceptance criteria
CRITERIA_LIST = []


def generate_command_list() -> str:
    """
    :return: a text description of all available commands
    """
    visible = list(filter(lambda x: not x[KEY_HIDDEN], COMMAND_LIST))
    if len(visible) <= 0:
        return "There are no commands."

    sorted_commands = sorted(visible, key=lambda x: (x[KEY_NAMES][0].lower(), len(x[KEY_ARGUMENTS])))
    help_messages = list(map(lambda x: x[KEY_HELP_MESSAGE], sorted_commands))
    return "\n\n".join(help_messages)


def find_command(name: str) -> dict or None:
    """
    :param name: one of the names of a command
    :return: the command entry or None
    """
    for entry in COMMAND_LIST:
        if name in entry[KEY_NAMES]:
            return entry
    return None
