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

import io

from splitsim import COMMAND_LIST, find_command, generate_command_list
from splitsim.argument import Argument, Flag
from splitsim.cli import main
from splitsim.const import EXIT_CONFIG_ERROR, EXIT_ERROR, EXIT_INVARIANT_VIOLATION, EXIT_OK, KEY_FUNCTION, KEY_NAMES
from splitsim.decorator import command
from splitsim.error_handler import DefaultErrorHandler
from splitsim.errors import BadConfig, InvariantViolation
from splitsim.help import generate_help_message, generate_settings_help
from splitsim.config import SETTINGS
from tests import TestBase


class CommandTest(TestBase):

    def test_command_name_clash(self):
        self.assertRaises(ValueError, command, name=["run"], description="again")

    def test_argument_name_clash(self):
        arguments = [
            Argument(name=["rate"], description="a", example="1"),
            Argument(name=["rate"], description="b", example="2"),
        ]
        self.assertRaises(ValueError, command, name=["clash_args"], description="x", arguments=arguments)

    def test_required_after_optional(self):
        arguments = [
            Argument(name=["a"], description="a", example="1", optional=True),
            Argument(name=["b"], description="b", example="2"),
        ]
        self.assertRaises(AssertionError, command, name=["bad_order"], description="x", arguments=arguments)

    def test_exit_codes(self):
        stream = io.StringIO()
        handler = DefaultErrorHandler(stream=stream)

        @command(name=["exit_codes_test"], description="raises", hidden=True, error_handler=handler,
                 arguments=[Argument(name=["what"], description="what to do", example="ok")])
        def raising(what: str):
            if what == "config":
                raise BadConfig("bad value")
            if what == "invariant":
                raise InvariantViolation("broken")
            if what == "boom":
                raise RuntimeError("boom")
            return None

        self.assertEqual(raising(["--what", "ok"]), EXIT_OK)
        self.assertEqual(raising(["--what", "config"]), EXIT_CONFIG_ERROR)
        self.assertEqual(raising(["--what", "invariant"]), EXIT_INVARIANT_VIOLATION)
        self.assertEqual(raising(["--what", "boom"]), EXIT_ERROR)
        self.assertEqual(raising([]), EXIT_CONFIG_ERROR)
        output = stream.getvalue()
        self.assertIn("bad value", output)
        self.assertIn("Invariant violated: broken", output)
        self.assertIn("Missing required argument: 'what'", output)

    def test_hidden_command(self):
        @command(name=["hidden_test"], description="not listed", hidden=True)
        def hidden():
            return 0

        self.assertIsNotNone(find_command("hidden_test"))
        self.assertNotIn("hidden_test", generate_command_list())
        self.assertEqual(find_command("hidden_test")[KEY_FUNCTION]([]), EXIT_OK)

    def test_find_command(self):
        self.assertEqual(find_command("run")[KEY_NAMES], ["run"])
        self.assertIsNone(find_command("nope"))
        self.assertIn("run", [x[KEY_NAMES][0] for x in COMMAND_LIST])


class HelpTest(TestBase):

    def test_help_message(self):
        message = generate_help_message(["sweep", "s"], "Runs a sweep", [
            Argument(name=["rate", "r"], description="Offered load", example="100k", type=int, optional=True,
                     default=1),
            Flag(name=["trace"], description="Write the trace"),
        ])
        lines = message.splitlines()
        self.assertEqual(lines[0], "splitsim sweep (s) [FLAGS] [ARGS]")
        self.assertIn("Flags:", lines)
        self.assertIn("Arguments:", lines)
        self.assertEqual(lines[-1], "  splitsim sweep --trace --rate 100k")

    def test_settings_help(self):
        text = generate_settings_help(SETTINGS)
        self.assertTrue(text.startswith("[experiment]"))
        self.assertIn("[fabric]", text)
        self.assertIn("experiment.seed", text)
        self.assertIn("one of: sweep, switch_path, ablation, memtier", text)


class MainTest(TestBase):

    def test_no_command(self):
        self.assertEqual(main([]), EXIT_CONFIG_ERROR)

    def test_help(self):
        self.assertEqual(main(["--help"]), EXIT_OK)
        self.assertEqual(main(["help"]), EXIT_OK)

    def test_unknown_command(self):
        self.assertEqual(main(["simulate"]), EXIT_CONFIG_ERROR)

    def test_keys(self):
        self.assertEqual(main(["keys"]), EXIT_OK)
        self.assertEqual(main(["keys", "--section", "fabric"]), EXIT_OK)
        self.assertEqual(main(["keys", "memtier"]), EXIT_OK)
        self.assertEqual(main(["keys", "--section", "gpu"]), EXIT_CONFIG_ERROR)

    def test_run_missing_scenario(self):
        self.assertEqual(main(["run", "--scenario", "no_such_scenario"]), EXIT_CONFIG_ERROR)

    def test_run_unknown_key(self):
        self.assertEqual(main(["run", "-s", "fifo_wave16", "--set", "sched.nothing=1"]), EXIT_CONFIG_ERROR)

    def test_run_bad_value(self):
        self.assertEqual(main(["run", "-s", "fifo_wave16", "--set", "sched.policy=lottery"]), EXIT_CONFIG_ERROR)

    def test_verify_bad_criteria(self):
        self.assertEqual(main(["verify", "--criteria", "x"]), EXIT_CONFIG_ERROR)
