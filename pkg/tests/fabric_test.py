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

from splitsim.errors import AlreadyRegistered, BadConfig, BadVector, PastEvent, UnmappedAddress, ZeroLength
from splitsim.fabric import Direction, Fabric, LatencyModel, Memory, PteType, Side, Simulator
from tests import TestBase

REGION_BASE = 0x1000
HOST_CPU = 0
AGENT = "agent"


def _fabric(**overrides) -> Fabric:
    sim = Simulator()
    fabric = Fabric(sim, LatencyModel.from_profile("mount-evans", **overrides))
    fabric.memory.map_region("queue", REGION_BASE, 0x1000)
    fabric.add_host_cpu(HOST_CPU)
    fabric.add_node(AGENT, Side.IPU)
    return fabric


class SimulatorTest(TestBase):

    def test_same_time_events_keep_schedule_order(self):
        sim = Simulator()
        fired = []
        for name in ["a", "b", "c"]:
            sim.call_at(10, None, "test", fired.append, name)
        sim.call_at(5, None, "test", fired.append, "first")

        sim.run()

        self.assertEqual(fired, ["first", "a", "b", "c"])
        self.assertEqual(sim.now(), 10)

    def test_past_event(self):
        sim = Simulator()
        sim.run(until=100)

        self.assertEqual(sim.now(), 100)
        self.assertRaises(PastEvent, sim.call_at, 50, None, "late", print)

    def test_cancel(self):
        sim = Simulator()
        fired = []
        event = sim.call_at(10, None, "test", fired.append, 1)
        sim.cancel(event)

        self.assertIsNone(sim.peek())
        self.assertEqual(sim.run(), 0)
        self.assertEqual(fired, [])

    def test_run_until_stops_before_later_events(self):
        sim = Simulator()
        fired = []
        sim.call_at(10, None, "test", fired.append, 1)
        sim.call_at(30, None, "test", fired.append, 2)

        sim.run(until=20)

        self.assertEqual(fired, [1])
        self.assertEqual(sim.now(), 20)
        self.assertEqual(sim.peek(), 30)


class LatencyModelTest(TestBase):

    def test_profiles(self):
        mount_evans = LatencyModel.from_profile("mount-evans")
        upi = LatencyModel.from_profile("upi")
        onhost = LatencyModel.from_profile("onhost")

        self.assertEqual(mount_evans.mmio_read_ns, 750)
        self.assertEqual(mount_evans.bus_transit_ns, 910)
        self.assertEqual(upi.mmio_read_ns, 100)
        self.assertEqual(upi.mmio_write_ns, 20)
        self.assertEqual(onhost.mmio_read_ns, 0)

    def test_overrides(self):
        model = LatencyModel.from_profile("mount-evans", mmio_read_ns=500, clflush_ns=None)

        self.assertEqual(model.mmio_read_ns, 500)
        self.assertEqual(model.clflush_ns, 100)

    def test_invalid(self):
        self.assertRaises(BadConfig, LatencyModel.from_profile, "cxl")
        self.assertRaises(BadConfig, LatencyModel, mmio_read_ns=-1)
        self.assertRaises(BadConfig, LatencyModel, msix_e2e_ns=100)


class MemoryTest(TestBase):

    def test_overlap(self):
        memory = Memory()
        memory.map_region("a", 0, 128)

        self.assertRaises(BadConfig, memory.map_region, "b", 64, 128)
        self.assertRaises(UnmappedAddress, memory.region_of, 256)

    def test_versioned_visibility(self):
        memory = Memory()
        memory.store(0, "old", 10)
        memory.store(0, "new", 20)

        self.assertEqual(memory.load(0, 5), (None, 0))
        self.assertEqual(memory.load(0, 15)[0], "old")
        self.assertEqual(memory.load(0, 20)[0], "new")
        self.assertEqual(memory.visible_at(0), 20)


class FabricTest(TestBase):

    def test_uc_read_cost_per_word(self):
        fabric = _fabric()

        _, cost = fabric.mmio_read(HOST_CPU, REGION_BASE, width=16)

        self.assertEqual(cost, 1500)
        self.assertEqual(fabric.nodes[HOST_CPU].busy_ns, 1500)

    def test_unmapped_read(self):
        fabric = _fabric()

        self.assertRaises(UnmappedAddress, fabric.mmio_read, HOST_CPU, 0x10)

    def test_uc_write_becomes_visible_after_transit(self):
        fabric = _fabric()

        cost = fabric.mmio_write(HOST_CPU, REGION_BASE, 42, at=0)

        self.assertEqual(cost, 50)
        self.assertIsNone(fabric.memory.load(REGION_BASE, 959)[0])
        self.assertEqual(fabric.memory.load(REGION_BASE, 960)[0], 42)

    def test_wt_read_hits_after_first_miss(self):
        fabric = _fabric()
        fabric.memory.store(REGION_BASE, 7, 0)

        value, first = fabric.mmio_read(HOST_CPU, REGION_BASE, pte=PteType.WT, at=10)
        _, second = fabric.mmio_read(HOST_CPU, REGION_BASE, pte=PteType.WT, at=20)
        fabric.clflush(HOST_CPU, REGION_BASE, at=30)
        _, third = fabric.mmio_read(HOST_CPU, REGION_BASE, pte=PteType.WT, at=40)

        self.assertEqual(value, 7)
        self.assertEqual(first, 750)
        self.assertEqual(second, 0)
        self.assertEqual(third, 750)
        self.assertEqual(fabric.counters["wt_hits"], 1)
        self.assertEqual(fabric.counters["wt_misses"], 2)

    def test_stale_wt_hit_without_flush(self):
        fabric = _fabric()
        fabric.memory.store(REGION_BASE, 1, 0)
        fabric.mmio_read(HOST_CPU, REGION_BASE, pte=PteType.WT, at=10)
        fabric.memory.store(REGION_BASE, 2, 20)

        value, _ = fabric.mmio_read(HOST_CPU, REGION_BASE, pte=PteType.WT, at=30)

        self.assertEqual(value, 1)
        self.assertEqual(fabric.coherence_violations, 0)

    def test_prefetch_hides_read_latency(self):
        fabric = _fabric()
        fabric.memory.store(REGION_BASE, 3, 0)

        fabric.prefetch(HOST_CPU, REGION_BASE, at=0)
        _, early = fabric.mmio_read(HOST_CPU, REGION_BASE, pte=PteType.WT, at=100)
        fabric.prefetch(HOST_CPU, REGION_BASE, at=1000)
        _, late = fabric.mmio_read(HOST_CPU, REGION_BASE, pte=PteType.WT, at=2000)

        self.assertEqual(early, 750)
        self.assertEqual(late, 0)

    def test_wc_stores_wait_for_fence(self):
        fabric = _fabric()

        store = fabric.mmio_write(HOST_CPU, REGION_BASE, 1, pte=PteType.WC, at=0)
        self.assertEqual(store, 5)
        self.assertEqual(fabric.wc_pending(HOST_CPU), 1)
        self.assertIsNone(fabric.memory.load(REGION_BASE, 10_000)[0])

        flush = fabric.wc_flush(HOST_CPU, at=10)

        self.assertEqual(flush, 100)
        self.assertEqual(fabric.wc_pending(HOST_CPU), 0)
        self.assertIsNone(fabric.memory.load(REGION_BASE, 1019)[0])
        self.assertEqual(fabric.memory.load(REGION_BASE, 1020)[0], 1)

    def test_wc_drains_on_line_change(self):
        fabric = _fabric()

        fabric.mmio_write(HOST_CPU, REGION_BASE, 1, pte=PteType.WC, at=0)
        cost = fabric.mmio_write(HOST_CPU, REGION_BASE + 64, 2, pte=PteType.WC, at=10)

        self.assertEqual(cost, 105)
        self.assertEqual(fabric.memory.load(REGION_BASE, 10_000)[0], 1)
        self.assertEqual(fabric.wc_pending(HOST_CPU), 1)

    def test_msix_end_to_end(self):
        fabric = _fabric()
        received = []

        def handler(cpu, at):
            received.append((cpu, at, at + fabric.interrupt_entry(cpu, at)))

        fabric.register_irq_handler(HOST_CPU, handler)
        fabric.send_msix(AGENT, HOST_CPU, at=0)
        fabric.sim.run()

        self.assertEqual(received, [(HOST_CPU, 1250, 1600)])
        self.assertEqual(fabric.nodes[AGENT].busy_ns, 340)

    def test_msix_vector_checks(self):
        fabric = _fabric()
        fabric.register_irq_handler(HOST_CPU, lambda cpu, at: None)

        self.assertRaises(BadVector, fabric.send_msix, AGENT, 99)
        self.assertRaises(AlreadyRegistered, fabric.register_irq_handler, HOST_CPU, lambda cpu, at: None)

    def test_msix_without_handler_is_dropped(self):
        fabric = _fabric()

        fabric.send_msix(AGENT, HOST_CPU, at=0)
        fabric.sim.run()

        self.assertEqual(fabric.counters["msix_dropped"], 1)

    def test_dma(self):
        fabric = _fabric()
        done = []

        fabric.dma_transfer(Direction.HOST_TO_SOC, 256, AGENT, at=0, writes=[(REGION_BASE, "x")],
                            on_complete=done.append)
        fabric.sim.run()

        self.assertEqual(done, [2040])
        self.assertEqual(fabric.memory.load(REGION_BASE, 2040)[0], "x")
        self.assertRaises(ZeroLength, fabric.dma_transfer, Direction.SOC_TO_HOST, 0, AGENT)

    def test_ipu_access_costs(self):
        fabric = _fabric()

        self.assertEqual(fabric.ipu_access(AGENT, 64, PteType.WB), 20)
        self.assertEqual(fabric.ipu_access(AGENT, 64, PteType.UC), 480)
