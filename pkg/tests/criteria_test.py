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
import os
import tempfile

from splitsim.config import default_scenario_dir
from splitsim.criteria import ORACLE_LAYOUTS, Verification, fabric_fidelity, oracle_schedule, queue_oracle, \
    run_criteria, shinjuku_tail
from splitsim.decorator import criterion
from splitsim.errors import ScenarioNotFound
from splitsim import CRITERIA_LIST
from splitsim.const import KEY_NUMBER
from splitsim.queues import MessageQueue, PollResult
from splitsim.workloads_metrics import rng_for
from tests import TestBase


class LossyQueue(MessageQueue):
    """
    Ring that loses every fifth consumed entry
    """

    def poll(self, port, at: int) -> PollResult:
        result = super().poll(port, at)
        if result.entry is not None and self.counters["dequeued"] % 5 == 0:
            return PollResult(None, result.cost)
        return result


class FixedSaturation(Verification):
    """
    Short runs of the shipped scenarios with a given saturation
    """

    def __init__(self, value: float or None):
        super().__init__(default_scenario_dir())
        self.value = value
        self.asked = []

    def settings(self, name: str, **changes):
        return super().settings(name, **changes).replace(**{
            "experiment.duration": "4ms", "experiment.warmup": "1ms", "experiment.drain": "30ms"})

    def saturation(self, name: str, **changes) -> float or None:
        self.asked.append(name)
        return self.value


class CriteriaTest(TestBase):

    def test_registry(self):
        numbers = list(map(lambda x: x[KEY_NUMBER], CRITERIA_LIST))
        self.assertEqual(numbers, list(range(1, 12)))

    def test_duplicate_number(self):
        self.assertRaises(ValueError, criterion, 1, "again")

    def test_queue_oracle(self):
        self.assertEqual(queue_oracle(6, 500, 1), 0)
        self.assertEqual(queue_oracle(6, 500, 9), 0)

    def test_oracle_schedule_every_layout(self):
        for i, (backing, write_pte) in enumerate(ORACLE_LAYOUTS):
            with self.subTest(backing=backing, write_pte=write_pte):
                self.assertEqual(oracle_schedule(backing, write_pte, 2_000, rng_for(3, i)), 0)

    def test_oracle_schedule_catches_lost_entries(self):
        for i, (backing, write_pte) in enumerate(ORACLE_LAYOUTS):
            with self.subTest(backing=backing, write_pte=write_pte):
                found = oracle_schedule(backing, write_pte, 2_000, rng_for(3, i), queue_type=LossyQueue)
                self.assertGreater(found, 0)

    def test_shinjuku_tail_runs_at_half_saturation(self):
        verification = FixedSaturation(40_000.0)

        result = shinjuku_tail(verification)

        self.assertIn("at 20000/s", result.detail)
        self.assertEqual(verification.asked, ["shinjuku_sq"])

    def test_shinjuku_tail_without_saturation(self):
        result = shinjuku_tail(FixedSaturation(None))

        self.assertFalse(result.passed)
        self.assertEqual(result.detail, "no saturation found for: shinjuku_sq")

    def test_fabric_fidelity(self):
        result = fabric_fidelity(Verification(default_scenario_dir()))
        self.assertTrue(result.passed, result.detail)
        self.assertIn("msix_e2e_ns=1600", result.detail)

    def test_fabric_fidelity_other_profile(self):
        result = fabric_fidelity(Verification(default_scenario_dir(), ["fabric.profile=upi"]))
        self.assertFalse(result.passed)
        self.assertIn("mmio_read_ns 100 != 750", result.detail)

    def test_run_subset(self):
        results = run_criteria(Verification(default_scenario_dir()), [1])
        self.assertEqual(len(results), 1)
        number, title, result = results[0]
        self.assertEqual(number, 1)
        self.assertTrue(result.passed)

    def test_missing_scenario_dir(self):
        with tempfile.TemporaryDirectory() as directory:
            verification = Verification(os.path.join(directory, "nothing"))
            self.assertRaises(ScenarioNotFound, run_criteria, verification, [1])
