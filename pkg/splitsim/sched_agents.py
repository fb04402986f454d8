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
"""
Scheduling agents: poll loops over the wave runtime implementing FIFO, Shinjuku (single and
multi queue) and Shinjuku with Shenango style core sharing for batch work.
"""
import enum
import logging
from collections import Counter, deque
from dataclasses import dataclass

from splitsim.errors import BadConfig, InvariantViolation
from splitsim.fabric import Simulator
from splitsim.host_kernel import EventKind, KernelEvent
from splitsim.queues import Decision, MemoryPort, MessageQueue, TxnState
from splitsim.util import ceil_div
from splitsim.wave_api import AgentCosts, Enclave, WaveRuntime

LOGGER = logging.getLogger(__name__)


class PolicyKind(enum.Enum):
    FIFO = "fifo"
    SHINJUKU_SQ = "shinjuku_sq"
    SHINJUKU_MQ = "shinjuku_mq"
    SHINJUKU_SHENANGO = "shinjuku_shenango"

    @property
    def preemptive(self) -> bool:
        return self is not PolicyKind.FIFO


@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind = PolicyKind.FIFO
    slice_ns: int = 30_000
    prestage: bool = True
    prestage_depth: int = 1
    grant_polls: int = 10
    mq_starvation_ns: int = None
    slo_classes: int = 1
    stall_at: int = None

    def __post_init__(self):
        if self.kind.preemptive and (self.slice_ns is None or self.slice_ns <= 0):
            raise BadConfig("Policy '{}' needs a positive time slice, got {}".format(self.kind.value, self.slice_ns))
        if self.slo_classes <= 0:
            raise BadConfig("At least one SLO class is required")

    @property
    def starvation_bound_ns(self) -> int:
        return self.slice_ns if self.mq_starvation_ns is None else self.mq_starvation_ns


class Runqueue:
    """
    FIFO ordered thread ids, remembering when each entry was queued
    """

    def __init__(self, slo_class: int = 0):
        self.slo_class = slo_class
        self._entries = deque()

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return (tid for tid, _ in self._entries)

    def __contains__(self, tid: int) -> bool:
        return any(t == tid for t, _ in self._entries)

    def push(self, tid: int, at: int):
        self._entries.append((tid, at))

    def pop(self) -> int or None:
        if len(self._entries) <= 0:
            return None
        return self._entries.popleft()[0]

    def remove(self, tid: int) -> bool:
        for entry in self._entries:
            if entry[0] == tid:
                self._entries.remove(entry)
                return True
        return False

    def head_since(self) -> int or None:
        if len(self._entries) <= 0:
            return None
        return self._entries[0][1]


@dataclass
class AgentThread:
    """
    What the agent knows about one thread
    """
    tid: int
    slo_class: int = 0
    batch: bool = False
    state: str = "runnable"


AGENT_TYPES = {}


def agent_policy(kind: PolicyKind):
    """
    Registers an agent implementation for a policy kind
    """

    def decorator(cls):
        if kind in AGENT_TYPES:
            raise ValueError("Policy '{}' is already registered".format(kind.value))
        cls.KIND = kind
        AGENT_TYPES[kind] = cls
        return cls

    return decorator


def create_agent(policy: PolicyConfig, *args, **kwargs) -> "Agent":
    """
    Instantiates the agent registered for the kind of the given policy
    """
    agent_type = AGENT_TYPES.get(policy.kind)
    if agent_type is None:
        raise BadConfig("No agent for policy '{}'".format(policy.kind.value))
    return agent_type(*args, policy=policy, **kwargs)


class Agent:
    """
    Base poll loop: ingest messages, observe transaction outcomes, let the policy decide.

    The loop runs back to back while it has work. Without work it sleeps and wakes on the
    loop tick grid once a queue entry, an outcome or a policy timer becomes due.
    """
    KIND = None

    def __init__(self, sim: Simulator, wave: WaveRuntime, enclave: Enclave, node_id, costs: AgentCosts,
                 msg_port: MemoryPort, txn_port: MemoryPort, policy: PolicyConfig = None):
        self.sim = sim
        self.wave = wave
        self.enclave = enclave
        self.region = enclave.txn_region
        self.node_id = node_id
        self.costs = costs
        self.policy = policy if policy is not None else PolicyConfig(kind=self.KIND)
        self.msg_port = msg_port
        self.txn_port = txn_port
        self.cpus = list(enclave.cpus)

        self.alive = True
        self.stalled = False
        self.stall_at = self.policy.stall_at
        self.last_heartbeat_at = 0
        self.counters = Counter()

        self.threads = {}
        self.running = {cpu: None for cpu in self.cpus}
        self.run_since = {cpu: None for cpu in self.cpus}
        self.staged = {cpu: None for cpu in self.cpus}
        self.preempt_pending = set()
        self._reset_queues()

        self._event = None
        self._wake_at = None
        self._sleep_from = None

        self.sources = []
        seen = set()
        for queue in enclave.cpu_queues.values():
            if id(queue) not in seen:
                seen.add(id(queue))
                self.add_source(queue, msg_port)
        self.region.on_visible = self.notify

    def add_source(self, queue: MessageQueue, port: MemoryPort):
        """
        Adds a queue the loop polls, entries are KernelEvents
        """
        self.sources.append((queue, port))
        queue.on_visible = self.notify

    # policy interface

    def _reset_queues(self):
        self.runqueue = Runqueue()

    def enqueue(self, info: AgentThread, at: int):
        if info.tid in self.runqueue:
            raise InvariantViolation("Thread {} is queued twice".format(info.tid))
        self.runqueue.push(info.tid, at)

    def dequeue(self, tid: int) -> bool:
        return self.runqueue.remove(tid)

    def pick(self, at: int) -> int or None:
        return self.runqueue.pop()

    def waiting(self) -> int:
        """
        :return: number of latency sensitive threads waiting for a cpu
        """
        return len(self.runqueue)

    def queued_tids(self) -> [int]:
        return list(self.runqueue)

    def schedule(self, t: int) -> (int, bool):
        t, dispatched = self._dispatch_idle(t)
        t, prestaged = self._prestage(t)
        return t, dispatched or prestaged

    def next_deadline(self, t: int) -> int or None:
        return None

    # loop

    def start(self, at: int = 0):
        self.last_heartbeat_at = at
        self._schedule_iteration(at)

    def heartbeat(self, at: int) -> int:
        """
        :return: time of the last sign of progress, a healthy sleeping agent counts as alive now
        """
        if self.alive and not self.stalled and self._sleep_from is not None:
            return at
        return self.last_heartbeat_at

    def _schedule_iteration(self, at: int):
        if self._event is not None and not self._event.cancelled and self._wake_at <= at:
            return
        self.sim.cancel(self._event)
        self._wake_at = at
        self._event = self.sim.call_at(at, self.node_id, "agent", self._iterate)

    def _iterate(self):
        self._event = None
        self._wake_at = None
        self._sleep_from = None
        if not self.alive:
            return
        t0 = self.sim.now()
        if self.stall_at is not None and t0 >= self.stall_at:
            self.stalled = True
            LOGGER.debug("Agent {} stalled at {} ns".format(self.node_id, t0))
            return
        t, worked = self.step(t0)
        self.last_heartbeat_at = t
        if worked:
            self._schedule_iteration(t)
        else:
            self._sleep(t)

    def step(self, at: int) -> (int, bool):
        """
        One loop iteration starting at the given time
        :return: (end of the iteration, whether it did any work)
        """
        t = at
        worked = False
        for queue, port in self.sources:
            while True:
                result = self.wave.poll_message(self.enclave, port, t, queue)
                t += self.costs.scaled(result.cost)
                if result.entry is None:
                    break
                t += self._ingest(result.entry, t)
                worked = True
        t += self.costs.tick
        for cpu in self.cpus:
            observed = self.region.observe(cpu, t)
            if observed is not None:
                self._on_outcome(cpu, observed[0], observed[1], t)
                worked = True
        t, acted = self.schedule(t)
        self.counters["iterations"] += 1
        return t, worked or acted

    def _sleep(self, t: int):
        self._sleep_from = t
        candidates = []
        for queue, _ in self.sources:
            visible = queue.next_visible_at()
            if visible is not None:
                candidates.append(visible)
        for slot in self.region.slots.values():
            if slot.state in (TxnState.COMPLETE, TxnState.FAILED) and slot.outcome_visible_at is not None:
                candidates.append(slot.outcome_visible_at)
        deadline = self.next_deadline(t)
        if deadline is not None:
            candidates.append(deadline)
        if len(candidates) > 0:
            self._schedule_iteration(min(self._align(v) for v in candidates))

    def _align(self, visible: int) -> int:
        base = self._sleep_from
        if visible <= base:
            return base
        tick = self.costs.tick
        return base + ceil_div(visible - base, tick) * tick

    def notify(self, visible: int):
        """
        Something the agent consumes becomes visible at the given time
        """
        if not self.alive or self._sleep_from is None:
            return
        self._schedule_iteration(self._align(visible))

    # ingest

    def _ingest(self, event: KernelEvent, t: int) -> int:
        """
        Applies one kernel event to the agent's view
        :return: extra cost
        """
        self.counters["messages"] += 1
        kind = event.kind
        info = self.threads.get(event.tid)
        cpu = event.cpu

        if kind in (EventKind.CREATED, EventKind.WAKEUP):
            if info is None:
                info = AgentThread(event.tid, event.slo_class, event.batch)
                self.threads[event.tid] = info
            info.state = "runnable"
            self.enqueue(info, t)
            return 0

        if kind is EventKind.PREEMPT_ACK:
            self.preempt_pending.discard(cpu)
            if self.staged.get(cpu) == event.tid:
                # renewed on the same cpu
                return 0
            if self.running.get(cpu) == event.tid:
                self.running[cpu] = None
                self.run_since[cpu] = None
            if info is not None:
                info.state = "runnable"
                self.enqueue(info, t)
            return 0

        if cpu is not None and self.running.get(cpu) == event.tid:
            self.running[cpu] = None
            self.run_since[cpu] = None
            self.preempt_pending.discard(cpu)
        if kind is EventKind.DEPARTED:
            self.threads.pop(event.tid, None)
            self.dequeue(event.tid)
        elif kind is EventKind.BLOCKED and info is not None:
            info.state = "blocked"
        elif kind is EventKind.YIELD and info is not None:
            info.state = "runnable"
            self.enqueue(info, t)
        return self._kick(cpu, t)

    def _kick(self, cpu: int or None, t: int) -> int:
        """
        A cpu went idle with an unclaimed pre-staged decision, send the interrupt skipped at commit time
        """
        if cpu is None:
            return 0
        slot = self.region.slot(cpu)
        if slot.state is not TxnState.STAGED or slot.msix_sent:
            return 0
        self.counters["kicks"] += 1
        return self.costs.scaled(self.wave.txns_commit(self.enclave, [cpu], self.node_id, t, msix=True))

    def _on_outcome(self, cpu: int, outcome: TxnState, decision: Decision, t: int):
        self.preempt_pending.discard(cpu)
        if self.staged.get(cpu) == decision.tid:
            self.staged[cpu] = None
        info = self.threads.get(decision.tid)
        if outcome is TxnState.COMPLETE:
            self.counters["dispatched"] += 1
            if decision.tid is not None:
                self.running[cpu] = decision.tid
                visible = self.region.slot(cpu).outcome_visible_at
                self.run_since[cpu] = t if visible is None else visible
                if info is not None:
                    info.state = "running"
            return
        self.counters["failed"] += 1
        if info is not None and info.state == "staged":
            info.state = "runnable"
            self.enqueue(info, t)

    # decisions

    def _is_idle(self, cpu: int) -> bool:
        return self.running[cpu] is None and self.staged[cpu] is None and self.region.state(cpu) is TxnState.EMPTY

    def _stage(self, cpu: int, tid: int, t: int, preempt: bool = False, msix: bool = True) -> int:
        """
        Opens and commits one decision
        :return: cursor after the decision
        """
        t += self.costs.create_ns
        decision = Decision(cpu, tid, preempt)
        t += self.costs.scaled(self.wave.txn_create(self.enclave, decision, self.txn_port, t))
        t += self.costs.scaled(self.wave.txns_commit(self.enclave, [cpu], self.node_id, t, msix=msix))
        self.staged[cpu] = tid
        info = self.threads.get(tid)
        if info is not None:
            info.state = "staged"
        self.counters["decisions"] += 1
        return t

    def _dispatch_idle(self, t: int) -> (int, bool):
        acted = False
        for cpu in self.cpus:
            if not self._is_idle(cpu):
                continue
            tid = self.pick(t)
            if tid is None:
                break
            t = self._stage(cpu, tid, t)
            acted = True
        return t, acted

    def _prestage_target(self, cpu: int) -> bool:
        return True

    def _prestage(self, t: int) -> (int, bool):
        if not self.policy.prestage:
            return t, False
        acted = False
        for cpu in self.cpus:
            if self.waiting() < self.policy.prestage_depth:
                break
            if self.running[cpu] is None or self.staged[cpu] is not None \
                    or self.region.state(cpu) is not TxnState.EMPTY or cpu in self.preempt_pending:
                continue
            if not self._prestage_target(cpu):
                continue
            t = self._stage(cpu, self.pick(t), t, msix=False)
            self.counters["prestaged"] += 1
            acted = True
        return t, acted

    # lifecycle

    def kill(self, at: int):
        self.alive = False
        self.sim.cancel(self._event)
        self._event = None
        self._sleep_from = None
        self.counters["kills"] += 1
        LOGGER.debug("Agent {} killed at {} ns".format(self.node_id, at))

    def restart(self, at: int, runnable: [tuple], running: dict):
        """
        Starts over from the host's thread table
        :param runnable: (tid, slo_class, batch) of RUNNABLE threads, oldest first
        :param running: { cpu -> (tid, slo_class, batch) or None }
        """
        for queue, port in self.sources:
            stale, _ = queue.drain(port, at)
            self.counters["stale_messages"] += len(stale)
        self.threads = {}
        self._reset_queues()
        self.preempt_pending = set()
        for cpu in self.cpus:
            self.staged[cpu] = None
            self.running[cpu] = None
            self.run_since[cpu] = None
            entry = running.get(cpu)
            if entry is not None:
                tid, slo_class, batch = entry
                self.threads[tid] = AgentThread(tid, slo_class, batch, "running")
                self.running[cpu] = tid
                self.run_since[cpu] = at
        for tid, slo_class, batch in runnable:
            info = AgentThread(tid, slo_class, batch)
            self.threads[tid] = info
            self.enqueue(info, at)
        self.alive = True
        self.stalled = False
        self.stall_at = None
        self.counters["restarts"] += 1
        self.start(at)


@agent_policy(PolicyKind.FIFO)
class FifoAgent(Agent):
    """
    Run to completion in arrival order
    """


@agent_policy(PolicyKind.SHINJUKU_SQ)
class ShinjukuAgent(Agent):
    """
    Single queue with a fixed time slice, preempted threads go to the tail
    """

    def _slice_target(self, cpu: int) -> bool:
        tid = self.running[cpu]
        if tid is None or cpu in self.preempt_pending:
            return False
        info = self.threads.get(tid)
        return info is None or not info.batch

    def schedule(self, t: int) -> (int, bool):
        t, preempted = self.timer_check(t)
        t, acted = super().schedule(t)
        return t, preempted or acted

    def timer_check(self, t: int) -> (int, bool):
        """
        Preempts threads that used up their slice
        :return: (cursor, whether a preemption was issued)
        """
        acted = False
        for cpu in self.cpus:
            if not self._slice_target(cpu) or self.run_since[cpu] is None:
                continue
            if t - self.run_since[cpu] < self.policy.slice_ns:
                continue
            slot = self.region.slot(cpu)
            if slot.state is TxnState.STAGED:
                if not slot.decision.preempt:
                    t += self.costs.scaled(self.region.restage(cpu, self.txn_port, t, preempt=True))
                t += self.costs.scaled(self.wave.txns_commit(self.enclave, [cpu], self.node_id, t, msix=True))
                self.counters["preemptions"] += 1
            elif slot.state is TxnState.EMPTY:
                tid = self.pick(t)
                if tid is None:
                    # nothing waits, the thread continues after a fresh slice
                    tid = self.running[cpu]
                    self.counters["renewals"] += 1
                else:
                    self.counters["preemptions"] += 1
                t = self._stage(cpu, tid, t, preempt=True)
            else:
                continue
            self.preempt_pending.add(cpu)
            acted = True
        return t, acted

    def next_deadline(self, t: int) -> int or None:
        deadlines = [self.run_since[cpu] + self.policy.slice_ns for cpu in self.cpus
                     if self._slice_target(cpu) and self.run_since[cpu] is not None]
        return min(deadlines) if len(deadlines) > 0 else None


@agent_policy(PolicyKind.SHINJUKU_MQ)
class ShinjukuMqAgent(ShinjukuAgent):
    """
    One runqueue per SLO class, strict priority with a starvation bound for lower classes
    """

    def _reset_queues(self):
        self.runqueues = [Runqueue(i) for i in range(self.policy.slo_classes)]

    def queue_of(self, slo_class: int or None) -> Runqueue:
        if slo_class is None or not 0 <= slo_class < len(self.runqueues):
            self.counters["unknown_slo"] += 1
            return self.runqueues[-1]
        return self.runqueues[slo_class]

    def enqueue(self, info: AgentThread, at: int):
        if any(info.tid in q for q in self.runqueues):
            raise InvariantViolation("Thread {} is queued twice".format(info.tid))
        self.queue_of(info.slo_class).push(info.tid, at)

    def dequeue(self, tid: int) -> bool:
        return any(q.remove(tid) for q in self.runqueues)

    def pick(self, at: int) -> int or None:
        candidates = [q for q in self.runqueues if len(q) > 0]
        if len(candidates) <= 0:
            return None
        starved = [q for q in candidates[1:] if at - q.head_since() >= self.policy.starvation_bound_ns]
        if len(starved) > 0:
            self.counters["starvation_picks"] += 1
            return min(starved, key=lambda q: q.head_since()).pop()
        return candidates[0].pop()

    def waiting(self) -> int:
        return sum(len(q) for q in self.runqueues)

    def queued_tids(self) -> [int]:
        return [tid for q in self.runqueues for tid in q]


@agent_policy(PolicyKind.SHINJUKU_SHENANGO)
class ShinjukuShenangoAgent(ShinjukuAgent):
    """
    Shinjuku for latency sensitive threads, idle cores are lent to batch threads
    and taken back as soon as latency work waits
    """

    def _reset_queues(self):
        super()._reset_queues()
        self.batch_pool = deque()
        self._empty_since = None

    def enqueue(self, info: AgentThread, at: int):
        if info.batch:
            if info.tid in self.batch_pool:
                raise InvariantViolation("Batch thread {} is queued twice".format(info.tid))
            self.batch_pool.append(info.tid)
        else:
            super().enqueue(info, at)

    def dequeue(self, tid: int) -> bool:
        if tid in self.batch_pool:
            self.batch_pool.remove(tid)
            return True
        return super().dequeue(tid)

    def queued_tids(self) -> [int]:
        return super().queued_tids() + list(self.batch_pool)

    def _runs_batch(self, cpu: int) -> bool:
        tid = self.running[cpu]
        info = self.threads.get(tid) if tid is not None else None
        return info is not None and info.batch

    def _prestage_target(self, cpu: int) -> bool:
        return not self._runs_batch(cpu)

    def schedule(self, t: int) -> (int, bool):
        t, preempted = self.timer_check(t)
        t, dispatched = self._dispatch_idle(t)
        t, rebalanced = self.core_rebalance(t)
        t, prestaged = self._prestage(t)
        return t, preempted or dispatched or rebalanced or prestaged

    def core_rebalance(self, t: int) -> (int, bool):
        """
        Reclaims batch cores while latency work waits, grants idle cores after a quiet period
        :return: (cursor, whether a core changed hands)
        """
        acted = False
        if self.waiting() > 0:
            self._empty_since = None
            for cpu in self.cpus:
                if self.waiting() <= 0:
                    break
                if not self._runs_batch(cpu) or cpu in self.preempt_pending or self.staged[cpu] is not None \
                        or self.region.state(cpu) is not TxnState.EMPTY:
                    continue
                t = self._stage(cpu, self.pick(t), t, preempt=True)
                self.preempt_pending.add(cpu)
                self.counters["reclaims"] += 1
                acted = True
            return t, acted

        if self._empty_since is None:
            self._empty_since = t
        if t - self._empty_since < self._grant_delay():
            return t, False
        for cpu in self.cpus:
            if len(self.batch_pool) <= 0:
                break
            if not self._is_idle(cpu):
                continue
            t = self._stage(cpu, self.batch_pool.popleft(), t)
            self.counters["grants"] += 1
            acted = True
        return t, acted

    def _grant_delay(self) -> int:
        return self.policy.grant_polls * self.costs.tick

    def next_deadline(self, t: int) -> int or None:
        deadline = super().next_deadline(t)
        if self.waiting() <= 0 and len(self.batch_pool) > 0 and any(self._is_idle(cpu) for cpu in self.cpus):
            since = t if self._empty_since is None else self._empty_since
            grant = since + self._grant_delay()
            deadline = grant if deadline is None else min(deadline, grant)
        return deadline
