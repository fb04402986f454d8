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
import struct
import tempfile

from splitsim.errors import BadConfig
from splitsim.memtier import ADVICE_PAGEOUT, ADVICE_WILLNEED, LADDER_NS, LOOP_PROFILES, AccessPattern, \
    LoopCostModel, PagedMemory, Tier, TieringConfig, TieringSimulation, TraceAccessPattern, ladder_slot, \
    pack_ids, unpack_ids
from tests import TestBase


class LadderTest(TestBase):

    def test_periods(self):
        self.assertEqual(LADDER_NS[0], 600_000_000)
        self.assertEqual(LADDER_NS[-1], 9_600_000_000)

    def test_slot(self):
        self.assertEqual(ladder_slot(1.0), 0)
        self.assertEqual(ladder_slot(0.5), 2)
        self.assertEqual(ladder_slot(0.0), len(LADDER_NS) - 1)


class LoopCostTest(TestBase):

    def test_profiles(self):
        offload = LOOP_PROFILES["offload"]

        self.assertEqual(offload.duration_ns(1), 1_018_000_000)
        self.assertEqual(offload.duration_ns(16), 364_000_000)
        self.assertEqual(LOOP_PROFILES["onhost"].duration_ns(1), 623_000_000)

    def test_invalid_parallelism(self):
        self.assertRaises(BadConfig, LoopCostModel(1.0, 1.0).duration_ns, 0)
        self.assertRaises(BadConfig, TieringConfig, loop_profile="gpu")


class WireFormatTest(TestBase):

    def test_ids(self):
        data = pack_ids([3, 1 << 40])

        self.assertEqual(len(data), 4 + 2 * 8)
        self.assertEqual(unpack_ids(data), [3, 1 << 40])
        self.assertEqual(unpack_ids(b"\x00" + pack_ids([]), 1), [])


class PagedMemoryTest(TestBase):

    def test_touch_sets_access_bit(self):
        memory = PagedMemory(2)

        self.assertEqual(memory.pages, 128)
        self.assertEqual(memory.memory_touch(65), 0)
        self.assertEqual(memory.batches[1].access_bits, 0b10)
        self.assertRaises(BadConfig, memory.memory_touch, 128)

    def test_slow_page_faults_its_batch(self):
        memory = PagedMemory(2, fault_penalty_ns=50_000)
        memory.madvise(struct.pack("<B", ADVICE_PAGEOUT) + pack_ids([0, 1]))

        self.assertEqual(memory.fast_fraction(), 0.0)
        self.assertEqual(memory.memory_touch(3), 50_000)
        self.assertEqual(memory.memory_touch(4), 0)
        self.assertIs(memory.batches[0].tier, Tier.FAST)
        self.assertEqual(memory.epoch_faults, 1)
        self.assertEqual(memory.fast_fraction(), 0.5)

    def test_harvest_clears_bits(self):
        memory = PagedMemory(2, tlb_flush_ns=200)
        for page in (0, 1, 64):
            memory.memory_touch(page)

        reply = memory.harvest(pack_ids([0, 1]))
        cleared, flush_ns, first, second = struct.unpack("<QQQQ", reply)

        self.assertEqual(cleared, 3)
        self.assertEqual(flush_ns, 600)
        self.assertEqual(first, 0b11)
        self.assertEqual(second, 0b1)
        self.assertEqual(memory.batches[0].access_bits, 0)
        self.assertEqual(memory.counters["tlb_flush_ns"], 600)

    def test_madvise(self):
        memory = PagedMemory(3)

        reply = memory.madvise(struct.pack("<B", ADVICE_PAGEOUT) + pack_ids([0, 2]))
        self.assertEqual(struct.unpack("<I", reply)[0], 2)
        reply = memory.madvise(struct.pack("<B", ADVICE_WILLNEED) + pack_ids([0, 1]))
        self.assertEqual(struct.unpack("<I", reply)[0], 1)
        self.assertRaises(BadConfig, memory.madvise, struct.pack("<B", 9) + pack_ids([0]))


class AccessPatternTest(TestBase):

    def test_hot_set(self):
        pattern = AccessPattern(100, hot_fraction=0.2, pages_per_touch=8, seed=5)

        self.assertEqual(len(pattern.hot), 20)
        self.assertEqual(len(pattern.window(0)), 20 * 8)
        self.assertEqual(pattern.hot, AccessPattern(100, hot_fraction=0.2, seed=5).hot)

    def test_zipf_skips_cold_ranks(self):
        pattern = AccessPattern(100, hot_fraction=0.2, pages_per_touch=8, zipf_s=2.0, seed=5)
        touched = sum(len(pattern.window(i)) for i in range(50))

        self.assertLess(touched, 50 * 20 * 8)
        self.assertGreaterEqual(touched, 50 * 8)

    def test_trace(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "trace.txt")
            with open(path, "w") as f:
                f.write("# time page\n200 5\n100 3\n\n300 7\n")
            pattern = TraceAccessPattern(path)

            self.assertEqual(pattern.until(250), [3, 5])
            self.assertEqual(pattern.until(250), [])
            self.assertEqual(pattern.until(1000), [7])

            with open(path, "w") as f:
                f.write("100\n")
            self.assertRaises(BadConfig, TraceAccessPattern, path)


class TieringSimulationTest(TestBase):

    def test_epoch_must_fit_the_scan_grid(self):
        self.assertRaises(BadConfig, TieringSimulation, batches=4, epoch_ns=1_000_000_000)

    def test_converges_to_hot_set(self):
        simulation = TieringSimulation(batches=100, epochs=4, config=TieringConfig(seed=3))

        result = simulation.run()

        self.assertEqual([e.index for e in result.epochs], [0, 1, 2, 3])
        self.assertEqual(result.epochs[0].faults, 0)
        for epoch in result.epochs:
            self.assertEqual(epoch.promoted + epoch.demoted, 100)
        for batch_id in simulation.pattern.hot:
            self.assertIs(simulation.memory.batches[batch_id].tier, Tier.FAST)
        self.assertLess(result.epochs[-1].mean_cleared, result.epochs[0].mean_cleared)
        self.assertEqual(result.loop_duration_ns, 364_000_000)

    def test_clear_cost_is_charged_to_the_scan(self):
        durations = []
        for tlb_flush_ns in (0, 1_000):
            simulation = TieringSimulation(batches=4, epochs=1, tlb_flush_ns=tlb_flush_ns)
            for page in range(simulation.memory.pages):
                simulation.memory.memory_touch(page)

            scan = simulation.agent.scan_iteration(0)

            self.assertEqual(scan.cleared, 256)
            durations.append(scan.duration)
        self.assertEqual(durations[1] - durations[0], 256 * 1_000)

    def test_deterministic(self):
        first = TieringSimulation(batches=32, epochs=2, config=TieringConfig(seed=9)).run()
        second = TieringSimulation(batches=32, epochs=2, config=TieringConfig(seed=9)).run()

        self.assertEqual(first.epochs, second.epochs)
