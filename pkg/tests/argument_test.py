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

from splitsim.argument import Argument, Flag, Selection, Setting, duration_converter, int_converter, mix_converter, \
    rate_list_converter
from tests import TestBase


class ArgumentTest(TestBase):

    def test_str_argument(self):
        arg = Argument(
            name="str_arg",
            description="str description",
            example="text"
        )

        self.assertEqual(arg.parse_arg_value("sample"), "sample")

    def test_bool_argument(self):
        arg = Argument(
            name="boolean_arg",
            description="boolean description",
            type=bool,
            example="0"
        )

        self.assertFalse(arg.parse_arg_value("0"))
        self.assertTrue(arg.parse_arg_value("on"))
        self.assertRaises(ValueError, arg.parse_arg_value, "maybe")

    def test_int_argument(self):
        arg = Argument(
            name="int_arg",
            description="int description",
            type=int,
            example="0"
        )

        self.assertEqual(arg.parse_arg_value("0"), 0)
        self.assertEqual(arg.parse_arg_value("01"), 1)
        self.assertEqual(arg.parse_arg_value("10"), 10)
        self.assertEqual(arg.parse_arg_value("64k"), 64_000)

    def test_float_argument(self):
        arg = Argument(
            name="float_arg",
            description="float description",
            type=float,
            example="1.2"
        )

        self.assertEqual(arg.parse_arg_value("0"), 0.0)
        self.assertEqual(arg.parse_arg_value("01"), 1.0)
        self.assertEqual(arg.parse_arg_value("10"), 10.0)
        self.assertEqual(arg.parse_arg_value("10.2"), 10.2)
        self.assertEqual(arg.parse_arg_value("3%"), 0.03)

    def test_custom_type_needs_converter(self):
        self.assertRaises(ValueError, Argument, name="list_arg", description="list", example="1,2", type=list)

    def test_validator(self):
        arg = Argument(
            name="jobs",
            description="positive",
            type=int,
            example="1",
            validator=lambda x: x > 0
        )

        self.assertEqual(arg.parse_arg_value("3"), 3)
        self.assertRaises(ValueError, arg.parse_arg_value, "0")

    def test_name_with_separator(self):
        self.assertRaises(ValueError, Argument, name="a=b", description="invalid", example="x")

    def test_duplicate_names(self):
        self.assertRaises(ValueError, Argument, name=["jobs", "jobs"], description="invalid", example="x")

    def test_flag_defaults_to_false(self):
        flag = Flag(name=["trace", "t"], description="flag")

        self.assertTrue(flag.flag)
        self.assertTrue(flag.optional)
        self.assertFalse(flag.parse_arg_value(None))

    def test_selection(self):
        arg = Selection(name="policy", description="policy", allowed_values=["fifo", "shinjuku_sq"])

        self.assertEqual(arg.parse_arg_value("fifo"), "fifo")
        self.assertRaises(ValueError, arg.parse_arg_value, "round_robin")

    def test_multiple_is_optional(self):
        arg = Argument(name="set", description="override", example="a=1", multiple=True)

        self.assertTrue(arg.optional)
        self.assertEqual(arg.parse_arg_value(None), [])


class ConverterTest(TestBase):

    def test_int_suffixes(self):
        self.assertEqual(int_converter("1.5M"), 1_500_000)
        self.assertEqual(int_converter("2G"), 2_000_000_000)
        self.assertEqual(int_converter("65_536"), 65_536)

    def test_durations(self):
        self.assertEqual(duration_converter("750"), 750)
        self.assertEqual(duration_converter("30us"), 30_000)
        self.assertEqual(duration_converter("1.5ms"), 1_500_000)
        self.assertEqual(duration_converter("38.4s"), 38_400_000_000)
        self.assertRaises(ValueError, duration_converter, "ten seconds")

    def test_rate_list(self):
        self.assertEqual(rate_list_converter("100k, 200k,1.05M"), (100_000, 200_000, 1_050_000))
        self.assertRaises(ValueError, rate_list_converter, ",")

    def test_mix(self):
        mix = mix_converter("GET:0.995:10us,RANGE:0.005:10ms")

        self.assertEqual(mix, (("GET", 0.995, 10_000), ("RANGE", 0.005, 10_000_000)))
        self.assertRaises(ValueError, mix_converter, "GET:1.0")


class SettingTest(TestBase):

    def test_coerce_string(self):
        setting = Setting("sched.slice", "slice", "30us", type=int, converter=duration_converter, default=30_000)

        self.assertEqual(setting.section, "sched")
        self.assertEqual(setting.coerce("10us"), 10_000)
        self.assertEqual(setting.coerce(5_000), 5_000)
        self.assertIsNone(setting.coerce(None))

    def test_allowed_values(self):
        setting = Setting("sched.policy", "policy", "fifo", allowed_values=["fifo", "shinjuku_sq"], default="fifo")

        self.assertEqual(setting.coerce("shinjuku_sq"), "shinjuku_sq")
        self.assertRaises(ValueError, setting.coerce, "round_robin")

    def test_format_value(self):
        mix = Setting("workload.mix", "mix", "GET:1:10us", type=tuple, converter=mix_converter)
        flag = Setting("queue.reserve_check", "reserve", "false", type=bool)

        self.assertEqual(mix.format_value((("GET", 1.0, 10_000),)), "GET:1.0:10000")
        self.assertEqual(flag.format_value(True), "true")
        self.assertEqual(flag.format_value(None), "")
