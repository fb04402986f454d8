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
import re

from splitsim.const import ARG_VALUE_SEPARATOR_CHAR, LIST_SEPARATOR_CHAR, MIX_FIELD_SEPARATOR_CHAR, NS_PER_US, \
    NS_PER_MS, NS_PER_S
from splitsim.util import find_duplicates

LOGGER = logging.getLogger(__name__)

_NUMBER_SUFFIXES = {"k": 1_000, "K": 1_000, "M": 1_000_000, "G": 1_000_000_000}
_DURATION_SUFFIXES = {"ns": 1, "us": NS_PER_US, "µs": NS_PER_US, "ms": NS_PER_MS, "s": NS_PER_S}
_DURATION_PATTERN = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*(ns|us|µs|ms|s)?\s*$")


class Argument:
    """
    Command argument description
    """

    def __init__(self, name: str or [str], description: str, example: str, type: type = str, converter: callable = None,
                 flag: bool = False, optional: bool = False, default: any = None, validator: callable = None,
                 multiple: bool = False):
        """
        Creates a command argument object
        :param name: the name (or names) of the argument
        :param description: a short description of the argument
        :param example: an example (string!) value for this argument
        :param type: the expected type of the argument
        :param converter: a converter function to convert the string value to the expected type
        :param flag: whether this argument should be treated as a flag
        :param optional: specifies if this argument is optional
        :param default: an optional default value
        :param validator: a validator function
        :param multiple: whether the argument may be given more than once (the parsed value is a list)
        """
        for c in name:
            if c.isspace():
                raise ValueError("Argument name must not contain whitespace!")
        self.names = [name.strip()] if not isinstance(name, list) else name
        self.names = list(map(lambda x: x.strip(), self.names))
        self._validate_names()

        self.description = description.strip()
        self.example = example
        self.flag = flag
        self.type = bool if flag else type
        if converter is None:
            if self.type is str:
                self.converter = lambda x: x
            elif self.type is bool:
                self.converter = boolean_converter
            elif self.type is int:
                self.converter = int_converter
            elif self.type is float:
                self.converter = float_converter
            else:
                raise ValueError("If you want to use a custom type, you have to provide a converter function too!")
        else:
            self.converter = converter
        self.optional = optional or multiple
        self.multiple = multiple
        self.default = default
        self.validator = validator

    @property
    def name(self) -> str:
        return self.names[0]

    def parse_arg_value(self, arg: str) -> any:
        """
        Tries to parse the given value
        :param arg: the string value
        :return: the parsed value
        """
        if arg is None:
            if self.multiple:
                return list(self.default or [])
            if self.optional:
                return self.default
            else:
                raise ValueError("Missing required argument: '{}'".format(self.names[0]))

        try:
            parsed = self.converter(arg)
        except (TypeError, ArithmeticError) as ex:
            raise ValueError("Invalid value for argument '{}': '{}' ({})".format(self.names[0], arg, ex))
        self.validate(parsed, arg)
        return parsed

    def validate(self, parsed: any, raw: any = None):
        if self.validator is not None:
            if not self.validator(parsed):
                raise ValueError("Invalid value for argument '{}': '{}'".format(
                    self.names[0], raw if raw is not None else parsed))

    def _validate_names(self):
        """
        Validates argument names and raises an exception if something is invalid
        """
        for name in self.names:
            if ARG_VALUE_SEPARATOR_CHAR in name:
                raise ValueError("Argument names must not contain '=' character: {}".format(name))

        duplicates = find_duplicates(self.names)
        if len(duplicates) > 0:
            clashing = ", ".join(map(str, duplicates.keys()))
            raise ValueError("Argument names must be unique! Clashing arguments: {}".format(clashing))


class Flag(Argument):
    """
    Convenience class for specifying a flag argument
    """

    def __init__(self, name: str or [str], description: str):
        """
        Creates a command argument object
        :param name: the name (or names) of the argument
        :param description: a short description of the argument
        """
        super().__init__(name, description, example="", type=bool, flag=True, optional=True, default=False)


class Selection(Argument):
    """
    Convenience class for a command argument based on a predefined selection of allowed values
    """

    def __init__(self, name: str, description: str, allowed_values: [any], type: type = str, converter: callable = None,
                 optional: bool = None, default: any = None):
        """
        Constructor
        :param name: the name of the argument
        :param description: a short description of the argument
        :param allowed_values: list of allowed (target type) values
        :param type: the expected type of the argument
        :param converter: a converter function to convert the string value to the expected type
        :param optional: specifies if this argument is optional
        :param default: an optional default value
        """
        self.allowed_values = allowed_values

        def validator(x):
            return x in self.allowed_values

        super().__init__(name, description, example=allowed_values[0], type=type, converter=converter,
                         optional=optional, default=default, validator=validator)


class Setting(Argument):
    """
    A dotted configuration key, always optional, with a typed default
    """

    def __init__(self, name: str, description: str, example: str, type: type = str, converter: callable = None,
                 default: any = None, validator: callable = None, allowed_values: [any] = None):
        """
        :param name: dotted key, f.ex. "fabric.mmio_read_ns"
        :param description: a short description of the key
        :param example: an example (string!) value
        :param type: the expected type of the value
        :param converter: a converter function to convert the string value to the expected type
        :param default: the default value, None means "derived from other keys"
        :param validator: a validator function
        :param allowed_values: optional list of allowed (target type) values
        """
        self.allowed_values = allowed_values
        if allowed_values is not None and validator is None:
            def validator(x):
                return x in self.allowed_values

        super().__init__(name, description, example=example, type=type, converter=converter,
                         optional=True, default=default, validator=validator)

    @property
    def section(self) -> str:
        return self.name.split(".", 1)[0]

    def coerce(self, value: any) -> any:
        """
        Converts a raw string or checks an already typed value
        :param value: string or typed value
        :return: the typed value
        """
        if value is None:
            return None
        if isinstance(value, str) and self.type is not str:
            return self.parse_arg_value(value)
        if self.type is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        self.validate(value)
        return value

    def format_value(self, value: any) -> str:
        """
        Canonical text form of a value of this key
        """
        if value is None:
            return ""
        if isinstance(value, (list, tuple)):
            return LIST_SEPARATOR_CHAR.join(
                MIX_FIELD_SEPARATOR_CHAR.join(map(str, x)) if isinstance(x, tuple) else str(x) for x in value)
        if isinstance(value, bool):
            return "true" if value else "false"
        return str(value)


def boolean_converter(value: str) -> bool:
    """
    Converts a string to a boolean
    :param value: string value
    :return: boolean
    """
    s = str(value).lower()
    if s in ['y', 'yes', 'true', 't', '1', 'on']:
        return True
    elif s in ['n', 'no', 'false', 'f', '0', 'off']:
        return False
    else:
        raise ValueError("Invalid value '{}'".format(value))


def float_converter(value: str) -> float:
    """
    Converts a string to a float
    :param value: string value
    :return: float
    """
    value = str(value).strip()
    if '%' == value[-1]:
        return float(value[:-1]) / 100.0
    else:
        return float(value)


def int_converter(value: str) -> int:
    """
    Converts a string to an integer, accepting k/M/G multipliers ("100k" -> 100000)
    :param value: string value
    :return: integer
    """
    value = str(value).strip().replace("_", "")
    if len(value) > 0 and value[-1] in _NUMBER_SUFFIXES:
        return int(round(float(value[:-1]) * _NUMBER_SUFFIXES[value[-1]]))
    return int(value)


def duration_converter(value: str) -> int:
    """
    Converts a duration to nanoseconds, plain numbers are nanoseconds ("30us" -> 30000)
    :param value: string value
    :return: nanoseconds
    """
    match = _DURATION_PATTERN.match(str(value).replace("_", ""))
    if match is None:
        raise ValueError("Invalid duration '{}'".format(value))
    number, unit = match.groups()
    return int(round(float(number) * _DURATION_SUFFIXES[unit or "ns"]))


def rate_list_converter(value: str) -> tuple:
    """
    Converts a comma separated list of rates ("100k,200k") to a tuple of integers
    """
    rates = tuple(int_converter(x) for x in str(value).split(LIST_SEPARATOR_CHAR) if len(x.strip()) > 0)
    if len(rates) <= 0:
        raise ValueError("Empty rate list")
    return rates


def mix_converter(value: str) -> tuple:
    """
    Converts a request mix ("GET:0.995:10us,RANGE:0.005:10ms") to a tuple of (kind, probability, service_ns)
    """
    entries = []
    for item in str(value).split(LIST_SEPARATOR_CHAR):
        item = item.strip()
        if len(item) <= 0:
            continue
        fields = item.split(MIX_FIELD_SEPARATOR_CHAR)
        if len(fields) != 3:
            raise ValueError("Invalid mix entry '{}', expected KIND:PROBABILITY:SERVICE".format(item))
        kind, probability, service = fields
        entries.append((kind.strip(), float_converter(probability), duration_converter(service)))
    if len(entries) <= 0:
        raise ValueError("Empty request mix")
    return tuple(entries)
