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
import os
import sys

from splitsim import COMMAND_LIST, find_command, generate_command_list
from splitsim.argument import Argument, Flag, Selection, int_converter
from splitsim.config import SETTINGS, Settings, default_scenario_dir, find_scenario
from splitsim.const import *
from splitsim.criteria import Verification, run_criteria
from splitsim.decorator import command
from splitsim.experiment import run_experiment
from splitsim.help import generate_settings_help
from splitsim.parser import split_command_from_args
from splitsim.util import write_message

LOGGER = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _resolve_scenario(scenario: str) -> str:
    if os.path.isfile(scenario):
        return scenario
    return find_scenario(scenario, default_scenario_dir())


def _criteria_converter(value: str) -> [int]:
    return [int(x) for x in value.split(LIST_SEPARATOR_CHAR) if len(x.strip()) > 0]


SET_ARGUMENT = Argument(name=["set"], description="Config override KEY=VALUE", example="sched.slice=10us",
                        multiple=True)
SEED_ARGUMENT = Argument(name=["seed"], description="Override of experiment.seed", example="7", type=int,
                         converter=int_converter, optional=True)
JOBS_ARGUMENT = Argument(name=["jobs", "j"], description="Rate points simulated in parallel", example="4",
                         type=int, optional=True, default=1, validator=lambda x: x > 0)
VERBOSE_FLAG = Flag(name=["verbose", "v"], description="Log per event detail")


@command(name=["run"],
         description="Runs a scenario and writes metrics.csv and manifest.json",
         arguments=[
             Argument(name=["scenario", "s"], description="Scenario file or name of a shipped scenario",
                      example="fifo_wave16"),
             SET_ARGUMENT,
             SEED_ARGUMENT,
             Argument(name=["out", "o"], description="Output directory", example="results/fifo",
                      optional=True, default="results"),
             Flag(name=["trace", "t"], description="Write the kernel event trace"),
             JOBS_ARGUMENT,
             VERBOSE_FLAG,
         ])
def run(scenario: str, set: [str], seed: int or None, out: str, trace: bool, jobs: int, verbose: bool) -> int:
    settings = Settings.load(_resolve_scenario(scenario), set, seed)
    LOGGER.info("Running {} ({}) with config {}".format(
        scenario, settings["experiment.kind"], settings.digest()[:12]))
    summary = run_experiment(settings, out, jobs=jobs, trace=trace)
    write_message(":white_check_mark: {} done, results in {}".format(summary["kind"], out))
    for key, value in summary.items():
        if key != "kind":
            write_message("  {}: {}".format(key, value))
    return EXIT_OK


@command(name=["verify"],
         description="Runs the acceptance checks against the shipped scenarios",
         arguments=[
             Argument(name=["scenarios", "d"], description="Directory holding the scenario files",
                      example="scenarios", optional=True, default=None),
             Argument(name=["criteria", "c"], description="Comma separated subset of checks", example="1,2,3",
                      type=list, converter=_criteria_converter, optional=True, default=None),
             SET_ARGUMENT,
             SEED_ARGUMENT,
             JOBS_ARGUMENT,
             VERBOSE_FLAG,
         ])
def verify(scenarios: str or None, criteria: [int] or None, set: [str], seed: int or None, jobs: int,
           verbose: bool) -> int:
    directory = default_scenario_dir() if scenarios is None else scenarios
    results = run_criteria(Verification(directory, set, seed, jobs), criteria)
    failed = 0
    for number, title, result in results:
        mark = ":white_check_mark:" if result.passed else ":x:"
        write_message("{} {:>2}. {}: {}".format(mark, number, title, result.detail))
        failed += 0 if result.passed else 1
    if failed > 0:
        write_message(":warning: {} of {} checks failed".format(failed, len(results)))
        return EXIT_ERROR
    write_message(":tada: all {} checks passed".format(len(results)))
    return EXIT_OK


@command(name=["keys"],
         description="Lists every config key with its default",
         arguments=[
             Selection(name=["section"], description="Only list the keys of this section",
                       allowed_values=list(dict.fromkeys(map(lambda x: x.section, SETTINGS))), optional=True),
             VERBOSE_FLAG,
         ])
def keys(section: str or None, verbose: bool) -> int:
    settings = SETTINGS if section is None else list(filter(lambda x: x.section == section, SETTINGS))
    write_message(generate_settings_help(settings))
    return EXIT_OK


@command(name=["help"],
         description="Shows this help",
         arguments=[VERBOSE_FLAG])
def help_command(verbose: bool) -> int:
    write_message(generate_command_list())
    return EXIT_OK


def main(argv: [str] = None) -> int:
    """
    Entry point of the splitsim console script
    :param argv: command line without the program name
    :return: exit code
    """
    argv = sys.argv[1:] if argv is None else list(argv)
    verbose = any(a in ("--verbose", "-v") for a in argv)
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)

    if len(argv) <= 0 or argv[0] in ("--help", "-h"):
        write_message(generate_command_list())
        return EXIT_OK if len(argv) > 0 else EXIT_CONFIG_ERROR

    name, tokens = split_command_from_args(argv)
    entry = find_command(name)
    if entry is None:
        names = ", ".join(x[KEY_NAMES][0] for x in COMMAND_LIST)
        write_message(":exclamation: Unknown command '{}', expected one of: {}".format(name, names), sys.stderr)
        return EXIT_CONFIG_ERROR
    return entry[KEY_FUNCTION](tokens)
