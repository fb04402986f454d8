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
import functools
import logging
from typing import List

from splitsim.argument import Argument
from splitsim.const import *
from splitsim.error_handler import DEFAULT_ERROR_HANDLER, ErrorHandler
from splitsim.errors import ConfigError, SimulationError
from splitsim.help import generate_help_message
from splitsim.parser import parse_command_args
from splitsim.util import find_duplicates

LOGGER = logging.getLogger(__name__)


def _dispatch(handlers: List[ErrorHandler], method: str, *args) -> int:
    for handler in handlers:
        code = getattr(handler, method)(*args)
        if code is not None:
            return code
    return EXIT_ERROR


def _create_callback_wrapper(func: callable, name: str, help_message: str,
                             arguments: [Argument],
                             error_handlers: List[ErrorHandler]) -> callable:
    """
    Creates the wrapper function for the callback function
    :param func: the function to wrap
    :param name: command name
    :param help_message: command help message
    :param arguments: command arguments
    :param error_handlers: list of error handlers
    :return: wrapper function taking the command line tokens after the command name and returning an exit code
    """
    if not callable(func):
        raise AttributeError("Unsupported type: {}".format(func))

    @functools.wraps(func)
    def wrapper(tokens: [str] = None, **kwargs) -> int:
        try:
            parsed_args = parse_command_args(tokens, arguments)
        except ValueError as ex:
            LOGGER.debug("Error parsing command arguments: {}".format(ex))
            return _dispatch(error_handlers, "on_validation_error", name, ex, help_message)

        # convert argument names to python param naming convention (snake-case)
        kw_function_args = dict(map(lambda x: (x[0].lower().replace("-", "_"), x[1]), list(parsed_args.items())))
        try:
            result = func(**{**kw_function_args, **kwargs})
        except ConfigError as ex:
            LOGGER.debug("Config error in command {}: {}".format(name, ex))
            return _dispatch(error_handlers, "on_config_error", name, ex)
        except SimulationError as ex:
            LOGGER.exception("Invariant violation in command {}".format(name))
            return _dispatch(error_handlers, "on_invariant_violation", name, ex)
        except Exception as ex:
            # error while executing wrapped function
            LOGGER.exception("Error in command {}".format(name))
            return _dispatch(error_handlers, "on_execution_error", name, ex)
        return EXIT_OK if result is None else int(result)

    return wrapper


def check_command_name_clashes(names: List[str]):
    """
    Checks if a command name has been used multiple times and raises an exception if so
    :param names: command names added in this decorator call
    """
    from splitsim import COMMAND_LIST

    t = []
    t.extend(map(lambda x: x[KEY_NAMES], COMMAND_LIST))
    t.extend([names])
    t = functools.reduce(list.__add__, t)

    duplicates = find_duplicates(t)
    if len(duplicates) > 0:
        clashing = ", ".join(duplicates.keys())
        raise ValueError("Command names must be unique! Clashing names: {}".format(clashing))


def check_argument_name_clashes(arguments: List[Argument]):
    """
    Checks if an argument name of a command has been used multiple times and raises an exception if so
    :param arguments: arguments of a command to check
    """
    duplicates = find_duplicates(list(map(lambda x: x.name, arguments)))
    if len(duplicates) > 0:
        clashing = ", ".join(duplicates.keys())
        raise ValueError("Argument names must be unique per command! Clashing arguments: {}".format(clashing))


def check_optional_argument_after_other(command_name: str, arguments: List[Argument]):
    """
    Checks the order of arguments to make sure no required argument is defined after an optional one
    :param command_name: command name the arguments belong to
    :param arguments: arguments to check
    """
    optional_detected = False
    for arg in arguments:
        if not arg.optional and optional_detected:
            raise AssertionError(
                "Required argument after optional argument in command {}: {}".format(command_name, arg.name))
        if arg.optional:
            optional_detected = True


def command(name: str or [str], description: str = None,
            arguments: [Argument] = None,
            hidden: bool = None,
            error_handler: ErrorHandler = None):
    """
    Decorator to turn a function into a command line command
    :param name: Name of the command
    :param description: a short description of the command
    :param arguments: list of command argument description objects
    :param hidden: whether the command should be hidden from help output
    :param error_handler: a customized error handler
    """
    from splitsim import COMMAND_LIST

    name = [name] if not isinstance(name, list) else name
    if arguments is None:
        arguments = []

    if hidden is None:
        hidden = False

    check_command_name_clashes(name)
    check_argument_name_clashes(arguments)
    check_optional_argument_after_other(name[0], arguments)

    help_message = generate_help_message(name, description, arguments)

    error_handlers = [DEFAULT_ERROR_HANDLER]
    if error_handler is not None:
        error_handlers.insert(0, error_handler)

    def callback_decorator(func: callable):
        """
        Callback decorator function
        :param func: the function to wrap
        :return: wrapper function
        """
        wrapper = _create_callback_wrapper(func, name[0], help_message, arguments, error_handlers)
        COMMAND_LIST.append(
            {
                KEY_NAMES: name,
                KEY_DESCRIPTION: description,
                KEY_ARGUMENTS: arguments,
                KEY_HELP_MESSAGE: help_message,
                KEY_HIDDEN: hidden,
                KEY_FUNCTION: wrapper,
            }
        )
        return wrapper

    return callback_decorator


def criterion(number: int, title: str):
    """
    Decorator registering an acceptance check run by the verify command
    :param number: position in the report, unique
    :param title: one line summary of what is checked
    """
    from splitsim import CRITERIA_LIST

    duplicates = find_duplicates(list(map(lambda x: x[KEY_NUMBER], CRITERIA_LIST)) + [number])
    if len(duplicates) > 0:
        raise ValueError("Criterion numbers must be unique! Clashing number: {}".format(number))

    def criterion_decorator(func: callable):
        CRITERIA_LIST.append(
            {
                KEY_NUMBER: number,
                KEY_TITLE: title,
                KEY_FUNCTION: func,
            }
        )
        CRITERIA_LIST.sort(key=lambda x: x[KEY_NUMBER])
        return func

    return criterion_decorator
