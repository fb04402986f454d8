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
from splitsim.errors import BadConfig, InvariantViolation
from splitsim.experiment import BATCH_TID_BASE, Deployment
from splitsim.host_kernel import Thread
from splitsim.sched_agents import AGENT_TYPES, AgentThread, FifoAgent, PolicyConfig, PolicyKind, Runqueue, \
    ShinjukuMqAgent, agent_policy
from tests import TestBase


def _deploy(**values) -> Deployment:
    values.setdefault("host.workers", 1)
    return Deployment(Settings(values))


def _run(deployment: Deployment, arrivals: [tuple], until: int) -> list:
    """
    :param arrivals: (tid, arrival, service_ns, slo_class)
    :return: (tid, finish time) in finish order
    """
    sim, kernel = deployment.sim, deployment.kernel
    finished = []

    def on_finish(thread, cpu, at):
        finished.append((thread.tid, at))
        return 0

    kernel.on_thread_finish = on_finish
    for tid, at, service, slo_class in arrivals:
        sim.call_at(at, "net", "arrival", kernel.admit, Thread(tid, service, arrival=at, slo_class=slo_class), at)
    deployment.start()
    sim.run(until=until)
    return finished


class RunqueueTest(TestBase):

    def test_fifo(self):
        queue = Runqueue()
        queue.push(1, 10)
        queue.push(2, 20)

        self.assertEqual(queue.head_since(), 10)
        self.assertIn(2, queue)
        self.assertTrue(queue.remove(2))
        self.assertFalse(queue.remove(2))
        self.assertEqual(queue.pop(), 1)
        self.assertIsNone(queue.pop())
        self.assertIsNone(queue.head_since())


class RegistryTest(TestBase):

    def test_every_policy_has_an_agent(self):
        for kind in PolicyKind:
            self.assertIn(kind, AGENT_TYPES)
        self.assertIs(AGENT_TYPES[PolicyKind.FIFO], FifoAgent)

    def test_duplicate_registration(self):
        with self.assertRaises(ValueError):
            @agent_policy(PolicyKind.FIFO)
            class Other(FifoAgent):
                pass

    def test_preemptive_policy_needs_slice(self):
        self.assertRaises(BadConfig, PolicyConfig, kind=PolicyKind.SHINJUKU_SQ, slice_ns=0)
        self.assertRaises(BadConfig, PolicyConfig, slo_classes=0)
        self.assertEqual(PolicyConfig(kind=PolicyKind.FIFO, slice_ns=None).slice_ns, None)


class FifoAgentTest(TestBase):

    def test_run_to_completion_in_arrival_order(self):
        deployment = _deploy()

        finished = _run(deployment, [(1, 0, 10_000, 0), (2, 10_000, 10_000, 0), (3, 20_000, 10_000, 0)], 5_000_000)

        self.assertEqual([tid for tid, _ in finished], [1, 2, 3])
        self.assertEqual(deployment.kernel.conservation(), (3, 3))
        self.assertEqual(deployment.kernel.counters["preemptions"], 0)
        self.assertEqual(deployment.enclave.txn_region.illegal_transitions, 0)

    def test_prestaged_decisions_are_taken_locally(self):
        deployment = _deploy()

        _run(deployment, [(tid, tid * 1_000, 20_000, 0) for tid in range(1, 6)], 5_000_000)

        self.assertGreater(deployment.kernel.counters["local_dispatch_hits"], 0)
        self.assertGreater(deployment.agent.counters["prestaged"], 0)

    def test_long_request_blocks_short_one(self):
        deployment = _deploy()

        finished = dict(_run(deployment, [(1, 0, 200_000, 0), (2, 1_000, 10_000, 0)], 5_000_000))

        self.assertGreater(finished[2], 200_000)


class ShinjukuAgentTest(TestBase):

    def test_short_request_overtakes_long_one(self):
        deployment = _deploy(**{"sched.policy": "shinjuku_sq", "sched.slice": "30us"})

        finished = dict(_run(deployment, [(1, 0, 200_000, 0), (2, 1_000, 10_000, 0)], 5_000_000))

        self.assertLess(finished[2], 100_000)
        self.assertGreater(finished[1], finished[2])
        self.assertGreater(deployment.kernel.counters["preemptions"], 0)
        self.assertEqual(deployment.kernel.preempt_bound_violations, 0)

    def test_lone_thread_is_renewed(self):
        deployment = _deploy(**{"sched.policy": "shinjuku_sq", "sched.slice": "30us"})

        _run(deployment, [(1, 0, 200_000, 0)], 5_000_000)

        self.assertGreater(deployment.agent.counters["renewals"], 0)
        self.assertEqual(deployment.kernel.conservation(), (1, 1))


class ShinjukuMqAgentTest(TestBase):

    def setUp(self):
        self.deployment = _deploy(**{"sched.policy": "shinjuku_mq", "workload.mix": "GET:0.5:10us,RANGE:0.5:10ms"})
        self.agent = self.deployment.agent

    def test_is_multi_queue(self):
        self.assertIsInstance(self.agent, ShinjukuMqAgent)
        self.assertEqual(len(self.agent.runqueues), 2)

    def test_strict_priority(self):
        self.agent.enqueue(AgentThread(1, slo_class=1), 0)
        self.agent.enqueue(AgentThread(2, slo_class=0), 5)

        self.assertEqual(self.agent.queued_tids(), [2, 1])
        self.assertEqual(self.agent.pick(10), 2)
        self.assertEqual(self.agent.pick(10), 1)
        self.assertIsNone(self.agent.pick(10))

    def test_starvation_bound_is_one_slice(self):
        self.assertEqual(self.agent.policy.starvation_bound_ns, 30_000)
        self.agent.enqueue(AgentThread(3, slo_class=1), 0)
        self.agent.enqueue(AgentThread(4, slo_class=0), 0)
        self.agent.enqueue(AgentThread(5, slo_class=0), 0)

        self.assertEqual(self.agent.pick(29_999), 4)
        self.assertEqual(self.agent.pick(30_000), 3)
        self.assertEqual(self.agent.counters["starvation_picks"], 1)
        self.assertEqual(self.agent.pick(30_000), 5)

    def test_starvation_bound_override(self):
        agent = _deploy(**{"sched.policy": "shinjuku_mq", "workload.mix": "GET:0.5:10us,RANGE:0.5:10ms",
                           "sched.mq_starvation": "1ms"}).agent
        agent.enqueue(AgentThread(3, slo_class=1), 0)
        agent.enqueue(AgentThread(4, slo_class=0), 0)

        self.assertEqual(agent.policy.starvation_bound_ns, 1_000_000)
        self.assertEqual(agent.pick(30_000), 4)
        self.assertEqual(agent.pick(30_000), 3)
        self.assertEqual(agent.counters["starvation_picks"], 0)

    def test_unknown_class_goes_last(self):
        self.agent.enqueue(AgentThread(5, slo_class=7), 0)

        self.assertEqual(list(self.agent.runqueues[-1]), [5])
        self.assertEqual(self.agent.counters["unknown_slo"], 1)

    def test_queued_twice(self):
        self.agent.enqueue(AgentThread(6, slo_class=0), 0)

        self.assertRaises(InvariantViolation, self.agent.enqueue, AgentThread(6, slo_class=1), 1)


class ShinjukuShenangoAgentTest(TestBase):

    def test_idle_cores_go_to_batch_and_come_back(self):
        deployment = _deploy(**{
            "sched.policy": "shinjuku_shenango",
            "host.workers": 2,
            "sched.batch_threads": 2,
        })
        kernel = deployment.kernel

        finished = _run(deployment, [(1, 1_000_000, 10_000, 0)], 3_000_000)

        self.assertEqual([tid for tid, _ in finished], [1])
        self.assertGreaterEqual(deployment.agent.counters["grants"], 2)
        self.assertGreaterEqual(deployment.agent.counters["reclaims"], 1)
        self.assertLess(finished[0][1], 1_100_000)
        batch = [tid for tid in kernel.running_map().values() if tid is not None and tid >= BATCH_TID_BASE]
        self.assertEqual(len(batch), 2)
