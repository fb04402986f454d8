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
import sys
import traceback

from splitsim.const import EXIT_CONFIG_ERROR, EXIT_ERROR, EXIT_INVARIANT_VIOLATION
from splitsim.util import write_message

LOGGER = logging.getLogger(__name__)


class ErrorHandler:
    """
    Interface for error handlers
    """

    def on_validation_error(self, command: str, exception: Exception, help_message: str) -> int or None:
        """
        This method is called when an exception is raised during
        command line argument validation.
        :param command: the command name
        :param exception: the exception
        :param help_message: help message for the command that failed validation
        :return: the exit code if the error was handled, None otherwise
        """
        return None

    def on_config_error(self, command: str, exception: Exception) -> int or None:
        """
        This method is called when a scenario file or a config override is invalid
        :param command: the command name
        :param exception: the exception
        :return: the exit code if the error was handled, None otherwise
        """
        return None

    def on_invariant_violation(self, command: str, exception: Exception) -> int or None:
        """
        This method is called when the simulated system breaks one of its invariants
        :param command: the command name
        :param exception: the exception
        :return: the exit code if the error was handled, None otherwise
        """
        return None

    def on_execution_error(self, command: str, exception: Exception) -> int or None:
        """
        This method is called when any other exception is raised during
        the execution of a command
        :param command: the command name
        :param exception: the exception
        :return: the exit code if the error was handled, None otherwise
        """
        return None


class DefaultErrorHandler(ErrorHandler):

    def __init__(self, print_error: bool = False, stream=None):
        """
        Creates an instance
        :param print_error: Whether to print a stacktrace on execution errors
        :param stream: output stream, stderr if not given
        """
        self.print_error = print_error
        self.stream = stream

    def _write(self, text: str):
        write_message(text, self.stream if self.stream is not None else sys.stderr)

    def on_validation_error(self, command: str, exception: Exception, help_message: str) -> int:
        self._write("\n".join([
            ":exclamation: {}".format(str(exception)),
            "",
            help_message
        ]))
        return EXIT_CONFIG_ERROR

    def on_config_error(self, command: str, exception: Exception) -> int:
        self._write(":exclamation: {}".format(str(exception)))
        return EXIT_CONFIG_ERROR

    def on_invariant_violation(self, command: str, exception: Exception) -> int:
        self._write(":rotating_light: Invariant violated: {}".format(str(exception)))
        return EXIT_INVARIANT_VIOLATION

    def on_execution_error(self, command: str, exception: Exception) -> int:
        if self.print_error:
            exception_text = "\n".join(list(map(lambda x: "{}:{}\n\t{}".format(x.filename, x.lineno, x.line),
                                                traceback.extract_tb(exception.__traceback__))))
            text = ":boom: {}\n{}".format(str(exception), exception_text)
        else:
            text = ":boom: There was an error executing '{}': {}".format(command, str(exception))
        self._write(text)
        return EXIT_ERROR


DEFAULT_ERROR_HANDLER = DefaultErrorHandler()
