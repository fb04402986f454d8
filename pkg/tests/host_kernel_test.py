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

from splitsim.config import Settings
from splitsim.errors import LifecycleViolation
from splitsim.experiment import Deployment
from splitsim.fabric import Fabric, LatencyModel, Side, Simulator
from splitsim.host_kernel import EventKind, HostConfig, HostKernel, SwitchCostModel, Thread, ThreadState
from splitsim.queues import MmioPort
from splitsim.wave_api import EnclaveSpec, SwitchTier, WaveRuntime
from tests import TestBase


def _kernel(cpus=(0,), **config) -> HostKernel:
    sim = Simulator()
    fabric = Fabric(sim, LatencyModel.from_profile("mount-evans"))
    for cpu in cpus:
        fabric.add_host_cpu(cpu)
    fabric.add_node("agent", Side.IPU)
    wave = WaveRuntime(fabric)
    enclave, = wave.start_wave([EnclaveSpec(0, list(cpus), agent_node="agent", queue_capacity=64)])
    ports = {cpu: MmioPort(fabric, cpu) for cpu in cpus}
    return HostKernel(sim, fabric, wave, enclave, HostConfig(prefetch=False, **config), ports)


class SwitchCostModelTest(TestBase):

    def test_kernel_cost_per_tier(self):
        model = SwitchCostModel()

        self.assertEqual(model.switch_ns(SwitchTier.BASELINE), 1_587)
        self.assertEqual(model.switch_ns(SwitchTier.IPU_WB), 1_104)
        self.assertEqual(model.switch_ns(SwitchTier.HOST_WC_WT), 1_214)
        self.assertEqual(model.switch_ns(SwitchTier.PRESTAGE), 2_235)

    def test_critical_path_matches_targets(self):
        model = SwitchCostModel()

        for tier, target in SwitchCostModel.TARGETS.items():
            low, high = SwitchCostModel.BANDS[tier]
            self.assertEqual(model.critical_path_ns(tier), target)
            self.assertTrue(low <= target <= high)

    def test_prestaged_path_has_no_interrupt(self):
        stages = SwitchCostModel().stages(SwitchTier.PRESTAGE)

        self.assertNotIn("msix", stages)
        self.assertEqual(stages["read_txn"], 0)

    def test_override(self):
        model = SwitchCostModel(switch_ns=2_435)

        self.assertEqual(model.switch_ns(SwitchTier.BASELINE), 2_435)
        self.assertEqual(model.switch_ns(SwitchTier.PRESTAGE), 2_435)


class LifecycleTest(TestBase):

    def test_admit_twice(self):
        kernel = _kernel()
        kernel.admit(Thread(1, 1_000), 0)

        self.assertEqual(kernel.threads[1].state, ThreadState.RUNNABLE)
        self.assertRaises(LifecycleViolation, kernel.admit, Thread(1, 1_000), 10)

    def test_illegal_events(self):
        kernel = _kernel()
        kernel.admit(Thread(1, 1_000), 0)

        self.assertRaises(LifecycleViolation, kernel.raise_event, EventKind.WAKEUP, 1, None, 10)
        self.assertRaises(LifecycleViolation, kernel.raise_event, EventKind.BLOCKED, 1, 0, 10)
        self.assertRaises(LifecycleViolation, kernel.raise_event, EventKind.CREATED, 2, None, 10)
        self.assertRaises(LifecycleViolation, kernel.block_current, 0, EventKind.WAKEUP, 10)

    def test_trace_lines(self):
        lines = []
        kernel = _kernel()
        kernel.trace = lines.append

        kernel.admit(Thread(7, 1_000), 42)

        self.assertEqual(lines, ["42\t-\tCREATED\t7"])

    def test_spurious_interrupt(self):
        kernel = _kernel()

        kernel.handle_msix(0, 100)

        self.assertEqual(kernel.counters["spurious_msix"], 1)
        self.assertGreater(kernel.cpus[0].kernel_free_at, 100)


class FallbackTest(TestBase):

    def test_fallback_runs_threads_in_order(self):
        kernel = _kernel()
        for tid in range(1, 4):
            kernel.admit(Thread(tid, 10_000), 0)

        kernel.kill_agent(0)
        kernel.sim.run()

        starts = [kernel.threads[tid].first_run_at for tid in range(1, 4)]
        self.assertEqual(starts, [2_000, 15_000, 28_000])
        self.assertEqual(kernel.conservation(), (3, 3))
        self.assertEqual(kernel.counters["agent_kills"], 1)

    def test_fallback_round_robin(self):
        kernel = _kernel(fallback_tick_ns=1_000_000)
        kernel.admit(Thread(1, 3_000_000), 0)
        kernel.admit(Thread(2, 3_000_000), 0)

        kernel.kill_agent(0)
        kernel.sim.run()

        self.assertEqual(kernel.conservation(), (2, 2))
        self.assertGreaterEqual(kernel.counters["PREEMPT_ACK"], 2)
        for tid in (1, 2):
            self.assertEqual(kernel.threads[tid].run_ns, 3_000_000)
            self.assertEqual(kernel.threads[tid].state, ThreadState.DEPARTED)

    def test_fallback_spreads_over_cpus(self):
        kernel = _kernel(cpus=(0, 1))
        kernel.admit(Thread(1, 10_000), 0)
        kernel.admit(Thread(2, 10_000), 0)

        kernel.kill_agent(0)

        self.assertEqual(kernel.running_map(), {0: 1, 1: 2})


class WatchdogTest(TestBase):

    def test_stalled_agent_is_replaced_and_restarted(self):
        settings = Settings({
            "host.workers": 1,
            "sched.stall_at_ms": "1",
            "watchdog.deadline": "2ms",
            "watchdog.period": "500us",
            "watchdog.restart_after_ms": "5",
        })
        deployment = Deployment(settings)
        sim, kernel = deployment.sim, deployment.kernel
        for tid, at, service in [(1, 0, 10_000), (2, 1_500_000, 100_000), (3, 1_500_000, 100_000),
                                 (4, 10_000_000, 10_000)]:
            sim.call_at(at, "net", "arrival", kernel.admit, Thread(tid, service, arrival=at), at)

        deployment.start()
        sim.run(until=20_000_000)

        self.assertEqual(kernel.counters["agent_kills"], 1)
        self.assertEqual(kernel.counters["agent_restarts"], 1)
        self.assertEqual(kernel.counters["restart_view_mismatches"], 0)
        self.assertEqual(kernel.conservation(), (4, 4))
        self.assertTrue(deployment.agent.alive)
        self.assertGreaterEqual(kernel.threads[4].first_run_at, 10_000_000)

    def test_healthy_sleeping_agent_survives(self):
        settings = Settings({"host.workers": 1, "watchdog.deadline": "1ms", "watchdog.period": "500us"})
        deployment = Deployment(settings)
        sim, kernel = deployment.sim, deployment.kernel
        sim.call_at(5_000_000, "net", "arrival", kernel.admit, Thread(1, 10_000, arrival=5_000_000), 5_000_000)

        deployment.start()
        sim.run(until=10_000_000)

        self.assertEqual(kernel.counters["agent_kills"], 0)
        self.assertEqual(kernel.conservation(), (1, 1))


class PreemptAuditTest(TestBase):

    def test_bound_sums_delivery_switch_and_slack(self):
        self.assertEqual(_kernel(slice_ns=30_000, switch_ns=2_235, preempt_slack_ns=0).preempt_bound_ns,
                         30_000 + 1_600 + 350 + 750 + 2_235)
        self.assertEqual(_kernel(slice_ns=30_000, switch_ns=2_235).preempt_bound_ns,
                         30_000 + 1_600 + 350 + 750 + 2_235 + 5_000)

    def test_no_bound_without_slice(self):
        self.assertIsNone(_kernel().preempt_bound_ns)

    def test_slack_from_settings(self):
        settings = Settings({"host.workers": 1, "sched.policy": "shinjuku_sq", "host.preempt_slack": "1us"})

        kernel = Deployment(settings).kernel

        self.assertEqual(kernel.config.preempt_slack_ns, 1_000)
        self.assertEqual(kernel.preempt_bound_ns, 30_000 + 1_600 + 350 + 750 + 2_235 + 1_000)
