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
Simulated host mechanisms: CPUs, threads, kernel events, the context switch cost model,
interrupt handling, the agent watchdog and the on-host fallback policy.
"""
import enum
import logging
from collections import Counter, OrderedDict, deque
from dataclasses import dataclass

from splitsim.const import CACHELINE_BYTES, WORD_BYTES
from splitsim.errors import AgentCrash, InvariantViolation, LifecycleViolation, NoDecision
from splitsim.fabric import Fabric, LatencyModel, PteType, Simulator
from splitsim.queues import Decision, MemoryPort, MmioPort, TxnRegion, TxnState
from splitsim.util import ceil_div
from splitsim.wave_api import AgentCosts, Enclave, SwitchTier, WaveRuntime

LOGGER = logging.getLogger(__name__)


class ThreadState(enum.Enum):
    RUNNABLE = "RUNNABLE"
    RUNNING = "RUNNING"
    BLOCKED = "BLOCKED"
    DEPARTED = "DEPARTED"


class EventKind(enum.Enum):
    CREATED = "CREATED"
    WAKEUP = "WAKEUP"
    BLOCKED = "BLOCKED"
    YIELD = "YIELD"
    PREEMPT_ACK = "PREEMPT_ACK"
    DEPARTED = "DEPARTED"


# event kind -> (allowed current states, resulting state)
_LIFECYCLE = {
    EventKind.CREATED: ({None}, ThreadState.RUNNABLE),
    EventKind.WAKEUP: ({ThreadState.BLOCKED}, ThreadState.RUNNABLE),
    EventKind.BLOCKED: ({ThreadState.RUNNING}, ThreadState.BLOCKED),
    EventKind.YIELD: ({ThreadState.RUNNING}, ThreadState.RUNNABLE),
    EventKind.PREEMPT_ACK: ({ThreadState.RUNNING}, ThreadState.RUNNABLE),
    EventKind.DEPARTED: ({ThreadState.RUNNING, ThreadState.RUNNABLE, ThreadState.BLOCKED}, ThreadState.DEPARTED),
}

# events after which the cpu looks for its next thread
_SWITCH_EVENTS = {EventKind.BLOCKED, EventKind.YIELD, EventKind.DEPARTED}


@dataclass(eq=False)
class Thread:
    tid: int
    service_ns: int or None
    arrival: int = 0
    enclave_id: int = 0
    slo_class: int = 0
    kind: str = "GET"
    batch: bool = False
    request: any = None
    state: ThreadState = None
    cpu: int = None
    remaining_ns: int = None
    runnable_since: int = None
    first_run_at: int = None
    run_ns: int = 0
    preemptions: int = 0

    def __post_init__(self):
        if self.remaining_ns is None:
            self.remaining_ns = self.service_ns


@dataclass(frozen=True)
class KernelEvent:
    kind: EventKind
    tid: int
    cpu: int or None
    timestamp: int
    seq: int
    slo_class: int = 0
    batch: bool = False


class SwitchCostModel:
    """
    Voluntary context switch critical path per optimization tier.

    The kernel side cost of each tier is the measured total minus the futex block and the fabric
    path the simulator models under the default cost table, so the simulated critical path lands
    on the measured medians.
    """
    TARGETS = OrderedDict([
        (SwitchTier.BASELINE, 13_420),
        (SwitchTier.IPU_WB, 10_050),
        (SwitchTier.HOST_WC_WT, 6_505),
        (SwitchTier.PRESTAGE, 3_680),
    ])
    BANDS = OrderedDict([
        (SwitchTier.BASELINE, (13_310, 13_530)),
        (SwitchTier.IPU_WB, (9_940, 10_160)),
        (SwitchTier.HOST_WC_WT, (6_100, 6_910)),
        (SwitchTier.PRESTAGE, (3_320, 4_040)),
    ])
    ENTRY_PAYLOAD_BYTES = CACHELINE_BYTES - WORD_BYTES

    def __init__(self, futex_block_ns: int = 1_000, switch_ns: int = None, loop_tick_ns: int = 200,
                 loop_tick_uc_ns: int = 1_160):
        self.futex_block_ns = futex_block_ns
        self.override = switch_ns
        self.loop_tick_ns = loop_tick_ns
        self.loop_tick_uc_ns = loop_tick_uc_ns

    def stages(self, tier: SwitchTier, latency: LatencyModel = None) -> OrderedDict:
        """
        Modeled fabric stages of the critical path between a block and the next thread start
        """
        latency = LatencyModel() if latency is None else latency
        words = ceil_div(self.ENTRY_PAYLOAD_BYTES, WORD_BYTES)
        stages = OrderedDict()
        if tier.host_write_pte is PteType.WC:
            stages["send_message"] = words * latency.wc_store_ns + latency.wc_flush_ns \
                                     + latency.wc_store_ns + latency.wc_flush_ns
            outcome = latency.wc_store_ns + latency.wc_flush_ns
        else:
            stages["send_message"] = words * latency.mmio_write_ns + latency.mmio_write_ns
            outcome = latency.mmio_write_ns
        wt = tier.host_read_pte is PteType.WT

        if not tier.prestage:
            uc = tier.ipu_pte is PteType.UC
            costs = AgentCosts.for_placement(None, tier.ipu_pte, latency.msix_send_ns, self.loop_tick_ns,
                                             self.loop_tick_uc_ns)
            if uc:
                ingest = (1 + words + 1) * latency.ipu_uc_word_ns
                empty_poll = latency.ipu_uc_word_ns
                txn_write = ceil_div(TxnRegion.DECISION_BYTES, WORD_BYTES) * latency.ipu_uc_word_ns
            else:
                ingest = 3 * latency.ipu_wb_line_ns
                empty_poll = latency.ipu_wb_line_ns
                txn_write = ceil_div(TxnRegion.DECISION_BYTES, CACHELINE_BYTES) * latency.ipu_wb_line_ns
            stages["bus_transit"] = latency.bus_transit_ns
            stages["agent"] = costs.tick // 2 + ingest + empty_poll + costs.tick + costs.create_ns + txn_write
            stages["msix"] = latency.msix_e2e_ns
            stages["handler_flush"] = latency.clflush_ns if wt else 0
            if wt:
                stages["read_txn"] = latency.mmio_read_ns
            else:
                stages["read_txn"] = ceil_div(TxnRegion.DECISION_BYTES, WORD_BYTES) * latency.mmio_read_ns
        else:
            # prefetched during the futex block
            stages["read_txn"] = 0
        stages["set_outcome"] = outcome
        stages["outcome_flush"] = latency.clflush_ns if wt else 0
        return stages

    def fabric_path_ns(self, tier: SwitchTier, latency: LatencyModel = None) -> int:
        return sum(self.stages(tier, latency).values())

    def switch_ns(self, tier: SwitchTier) -> int:
        if self.override is not None:
            return self.override
        return max(0, self.TARGETS[tier] - self.futex_block_ns - self.fabric_path_ns(tier))

    def critical_path_ns(self, tier: SwitchTier, latency: LatencyModel = None) -> int:
        return self.futex_block_ns + self.fabric_path_ns(tier, latency) + self.switch_ns(tier)


@dataclass(frozen=True)
class HostConfig:
    futex_block_ns: int = 1_000
    switch_ns: int = 2_235
    prefetch: bool = True
    prestage: bool = True
    fallback_tick_ns: int = 1_000_000
    fallback_switch_ns: int = 2_000
    watchdog_deadline_ns: int = 20_000_000
    watchdog_period_ns: int = 1_000_000
    restart_after_ns: int = None
    slice_ns: int = None
    preempt_slack_ns: int = 5_000


class HostCpu:
    __slots__ = ("cpu", "port", "msg_port", "current", "run_started", "start_overhead", "finish_event", "finish_at",
                 "kernel_free_at", "fallback_event", "latency_ns", "batch_ns")

    def __init__(self, cpu: int, port: MemoryPort, msg_port: MemoryPort = None):
        self.cpu = cpu
        self.port = port
        self.msg_port = port if msg_port is None else msg_port
        self.current = None
        self.run_started = None
        self.start_overhead = 0
        self.finish_event = None
        self.finish_at = None
        self.kernel_free_at = 0
        self.fallback_event = None
        self.latency_ns = 0
        self.batch_ns = 0


class HostKernel:
    """
    Host side mechanism layer of one scheduling enclave
    """

    def __init__(self, sim: Simulator, fabric: Fabric, wave: WaveRuntime, enclave: Enclave, config: HostConfig,
                 ports: dict, net_port: MemoryPort = None, trace: callable = None, msg_ports: dict = None):
        """
        :param ports: { cpu -> memory port towards the enclave's queue and transaction region }
        :param net_port: port used for events that are not raised by a worker cpu (thread creation)
        :param trace: optional callable receiving one trace line per kernel event
        :param msg_ports: { cpu -> port towards the message queue } if it differs from the transaction region port
        """
        self.sim = sim
        self.fabric = fabric
        self.wave = wave
        self.enclave = enclave
        self.region = enclave.txn_region
        self.config = config
        self.cpus = OrderedDict((cpu, HostCpu(cpu, ports[cpu], (msg_ports or {}).get(cpu))) for cpu in enclave.cpus)
        self.net_port = net_port
        self.trace = trace
        self.threads = {}
        self.agent = None
        self.fallback_active = False
        self._fallback_queue = deque()
        self._event_seq = 0
        self._watchdog_event = None
        self.counters = Counter()
        self.preempt_bound_violations = 0

        self.on_claim = None
        self.on_thread_start = None
        self.on_thread_finish = None
        self.on_departed = None

        for cpu in self.cpus:
            wave.register_irq_handler(cpu, self.handle_msix)
            port = self.cpus[cpu].port
            if isinstance(port, MmioPort) and port.read_pte is PteType.WT:
                fabric.add_coherence_lines(cpu, [self.region.slot(cpu).addr])

    def attach_agent(self, agent):
        self.agent = agent

    def start_watchdog(self, at: int = 0):
        self._watchdog_event = self.sim.call_at(at + self.config.watchdog_period_ns, "host", "watchdog",
                                                self._watchdog_tick)

    def _watchdog_tick(self):
        self.watchdog_check(self.sim.now())
        self._watchdog_event = self.sim.call_after(self.config.watchdog_period_ns, "host", "watchdog",
                                                   self._watchdog_tick)

    def _trace(self, at: int, cpu, kind: str, tid):
        if self.trace is not None:
            self.trace("{}\t{}\t{}\t{}".format(at, "-" if cpu is None else cpu, kind, "-" if tid is None else tid))

    @property
    def agent_alive(self) -> bool:
        return self.agent is not None and self.agent.alive and not self.fallback_active

    def runnable_threads(self) -> [Thread]:
        """
        :return: RUNNABLE threads in the order they became runnable
        """
        runnable = [t for t in self.threads.values() if t.state is ThreadState.RUNNABLE]
        return sorted(runnable, key=lambda t: (t.runnable_since, t.tid))

    def running_map(self) -> dict:
        return {cpu: c.current for cpu, c in self.cpus.items()}

    # lifecycle

    def admit(self, thread: Thread, at: int, notify: bool = True) -> int:
        """
        Registers a new thread and raises CREATED
        :return: cost charged for the notification
        """
        if thread.tid in self.threads:
            raise LifecycleViolation("Thread {} exists already".format(thread.tid))
        thread.enclave_id = self.enclave.enclave_id
        self.threads[thread.tid] = thread
        return self.raise_event(EventKind.CREATED, thread.tid, None, at, notify=notify)

    def raise_event(self, kind: EventKind, tid: int, cpu: int or None, at: int, notify: bool = True) -> int:
        """
        Applies a lifecycle event and sends it to the agent
        :return: cost of sending the message
        """
        thread = self.threads.get(tid)
        if thread is None:
            raise LifecycleViolation("Unknown thread {}".format(tid))
        allowed, new_state = _LIFECYCLE[kind]
        if thread.state not in allowed:
            raise LifecycleViolation("{} of thread {} in state {}".format(
                kind.value, tid, None if thread.state is None else thread.state.value))

        thread.state = new_state
        if new_state is not ThreadState.RUNNING:
            thread.cpu = None
        if new_state is ThreadState.RUNNABLE:
            thread.runnable_since = at
        self.counters[kind.value] += 1
        self._trace(at, cpu, kind.value, tid)

        if kind is EventKind.DEPARTED and self.on_departed is not None:
            self.on_departed(thread, at)

        cost = 0
        if self.fallback_active:
            if new_state is ThreadState.RUNNABLE:
                self._fallback_queue.append(tid)
                self._fallback_fill(at)
        elif notify and self.agent is not None:
            cost = self._send(KernelEvent(kind, tid, cpu, at, self._next_seq(), thread.slo_class, thread.batch),
                              cpu, at)
        return cost

    def _next_seq(self) -> int:
        self._event_seq += 1
        return self._event_seq

    def _send(self, event: KernelEvent, cpu: int or None, at: int) -> int:
        port = self.cpus[cpu].msg_port if cpu is not None else self.net_port
        try:
            result = self.wave.send_message(self.enclave, event, port, at)
        except AgentCrash as ex:
            LOGGER.debug("Agent crashed at {} ns: {}".format(at, ex))
            self.counters["agent_crashes"] += 1
            self.kill_agent(at)
            return 0
        if not result.ok:
            # reserve-check mode, retry once the consumer made room
            self.counters["send_retries"] += 1
            self.sim.call_at(at + self.config.watchdog_period_ns // 100 + 1, cpu, "resend", self._resend, event, cpu)
        return result.cost

    def _resend(self, event: KernelEvent, cpu: int or None):
        if not self.fallback_active:
            self._send(event, cpu, self.sim.now())

    # running threads

    def _start(self, cpu: int, thread: Thread, at: int):
        c = self.cpus[cpu]
        thread.state = ThreadState.RUNNING
        thread.cpu = cpu
        if thread.first_run_at is None:
            thread.first_run_at = at
        c.current = thread.tid
        c.run_started = at
        c.kernel_free_at = at
        c.start_overhead = self.on_thread_start(thread, cpu, at) if self.on_thread_start is not None else 0
        self.counters["switches"] += 1
        self._trace(at, cpu, "RUN", thread.tid)
        if thread.remaining_ns is not None:
            c.finish_at = at + c.start_overhead + thread.remaining_ns
            c.finish_event = self.sim.call_at(c.finish_at, cpu, "finish", self._on_finish, cpu, thread.tid)
        else:
            c.finish_at = None
            c.finish_event = None

    def _stop(self, cpu: int, at: int) -> Thread:
        """
        Takes the current thread off the cpu and accounts its run time
        """
        c = self.cpus[cpu]
        thread = self.threads[c.current]
        self.sim.cancel(c.finish_event)
        c.finish_event = None
        ran = max(0, at - c.run_started)
        if thread.remaining_ns is not None:
            thread.remaining_ns = max(0, thread.remaining_ns - max(0, ran - c.start_overhead))
        thread.run_ns += ran
        if thread.batch:
            c.batch_ns += ran
        else:
            c.latency_ns += ran
        self._audit_run(thread, ran)
        c.current = None
        c.run_started = None
        c.start_overhead = 0
        return thread

    @property
    def preempt_bound_ns(self) -> int or None:
        """
        Longest run of a preemptible thread: the slice, MSI-X delivery, the handler's interrupt entry
        and decision read, the switch and the configured agent reaction slack
        """
        if self.config.slice_ns is None:
            return None
        latency = self.fabric.latency
        return self.config.slice_ns + latency.msix_e2e_ns + latency.msix_receive_ns + latency.mmio_read_ns \
            + self.config.switch_ns + self.config.preempt_slack_ns

    def _audit_run(self, thread: Thread, ran: int):
        if thread.batch or self.config.slice_ns is None or self.fallback_active:
            return
        if ran > self.preempt_bound_ns and thread.remaining_ns > 0:
            self.preempt_bound_violations += 1

    def _on_finish(self, cpu: int, tid: int):
        c = self.cpus[cpu]
        if c.current != tid:
            raise InvariantViolation("Finish of thread {} on cpu {} which runs {}".format(tid, cpu, c.current))
        at = self.sim.now()
        thread = self.threads[tid]
        cost = self.on_thread_finish(thread, cpu, at) if self.on_thread_finish is not None else 0
        self.block_current(cpu, EventKind.DEPARTED, at + cost)

    def block_current(self, cpu: int, kind: EventKind, at: int) -> str:
        """
        The running thread blocks, yields or departs: notify the agent and look for the next thread
        :return: "switched" or "idle"
        """
        if kind not in _SWITCH_EVENTS:
            raise LifecycleViolation("{} is not a voluntary switch".format(kind.value))
        c = self.cpus[cpu]
        thread = self._stop(cpu, at)
        t = at
        if self.config.prefetch and not self.fallback_active:
            t += c.port.prefetch(self.region.slot(cpu).addr, t)
        t += self.config.futex_block_ns
        t += self.raise_event(kind, thread.tid, cpu, t)
        c.kernel_free_at = t
        return self.try_local_dispatch(cpu, t)

    def try_local_dispatch(self, cpu: int, at: int) -> str:
        """
        Checks the transaction slot for a pre-staged decision
        :return: "switched" or "idle"
        """
        c = self.cpus[cpu]
        c.kernel_free_at = max(c.kernel_free_at, at)
        if c.current is not None:
            return "switched"
        if self.fallback_active:
            return self._fallback_dispatch(cpu, c.kernel_free_at)
        if not self.config.prestage:
            self._trace(at, cpu, "IDLE", None)
            return "idle"
        try:
            decision, cost = self.region.read_txn(cpu, c.port, at, prefetched=self.config.prefetch, claim=False)
        except NoDecision as ex:
            c.kernel_free_at = at + ex.cost
            self.counters["local_dispatch_misses"] += 1
            self._trace(at, cpu, "IDLE", None)
            return "idle"
        self.region.claim(cpu)
        self.counters["local_dispatch_hits"] += 1
        return self._enforce(cpu, decision, at + cost)

    def _enforce(self, cpu: int, decision: Decision, at: int) -> str:
        c = self.cpus[cpu]
        t = at
        if c.current is not None:
            preempted = self._stop(cpu, t)
            preempted.preemptions += 1
            self.counters["preemptions"] += 1
            t += self.raise_event(EventKind.PREEMPT_ACK, preempted.tid, cpu, t)

        target = self.threads.get(decision.tid) if decision.tid is not None else None
        if decision.tid is not None and (target is None or target.state is not ThreadState.RUNNABLE):
            self.counters["failed_txns"] += 1
            t += self.region.set_txn_outcome(cpu, TxnState.FAILED, c.port, t)
            c.kernel_free_at = t
            self._trace(t, cpu, "FAILED", decision.tid)
            return "idle"

        t += self.region.set_txn_outcome(cpu, TxnState.COMPLETE, c.port, t)
        if target is None:
            c.kernel_free_at = t
            self._trace(t, cpu, "IDLE", None)
            return "idle"
        if self.on_claim is not None:
            t += self.on_claim(target, cpu, t)
        t += self.config.switch_ns
        self._start(cpu, target, t)
        return "switched"

    def handle_msix(self, cpu: int, arrival: int):
        """
        Interrupt handler: flush stale lines, read the decision, preempt if directed, switch
        """
        c = self.cpus[cpu]
        start = max(arrival, c.kernel_free_at)
        t = start + self.fabric.interrupt_entry(cpu, start)
        self.counters["msix_handled"] += 1
        if self.fallback_active:
            self._spurious(cpu, start, t)
            return
        try:
            decision, cost = self.region.read_txn(cpu, c.port, t, prefetched=False, claim=False)
        except NoDecision as ex:
            self._spurious(cpu, start, t + ex.cost)
            return
        t += cost
        if c.current is not None and not decision.preempt:
            # pre-staged for the next voluntary switch, leave it for try_local_dispatch
            self.counters["msix_deferred"] += 1
            self._extend(cpu, t - start)
            c.kernel_free_at = max(c.kernel_free_at, t)
            return
        self.region.claim(cpu)
        self._enforce(cpu, decision, t)

    def _spurious(self, cpu: int, start: int, end: int):
        self.counters["spurious_msix"] += 1
        LOGGER.debug("Spurious interrupt on cpu {} at {} ns".format(cpu, start))
        self._extend(cpu, end - start)
        c = self.cpus[cpu]
        c.kernel_free_at = max(c.kernel_free_at, end)

    def _extend(self, cpu: int, delay: int):
        """
        Pushes the finish of the running thread back by the time spent in the interrupt handler
        """
        c = self.cpus[cpu]
        if c.current is None or c.finish_event is None or delay <= 0:
            return
        self.sim.cancel(c.finish_event)
        c.finish_at += delay
        c.start_overhead += delay
        c.finish_event = self.sim.call_at(c.finish_at, cpu, "finish", self._on_finish, cpu, c.current)

    # watchdog and fallback

    def watchdog_check(self, at: int) -> str:
        """
        Kills the agent if runnable work waits and it has not made progress within the deadline
        :return: "ok" or "agent_killed"
        """
        if not self.agent_alive:
            return "ok"
        if at - self.agent.heartbeat(at) <= self.config.watchdog_deadline_ns:
            return "ok"
        if not any(t.state is ThreadState.RUNNABLE for t in self.threads.values()):
            return "ok"
        LOGGER.debug("Watchdog: no decision for {} ns, killing agent".format(at - self.agent.heartbeat(at)))
        self.kill_agent(at)
        return "agent_killed"

    def kill_agent(self, at: int):
        if self.fallback_active:
            return
        self.counters["agent_kills"] += 1
        if self.agent is not None:
            self.agent.kill(at)
        self.region.abort_staged()
        self.fallback_active = True
        self._fallback_queue = deque(t.tid for t in self.runnable_threads())
        self._fallback_fill(at)
        for cpu, c in self.cpus.items():
            if c.current is not None:
                self._arm_fallback_tick(cpu, max(at, c.run_started or at))
        if self.config.restart_after_ns is not None:
            self.sim.call_at(at + self.config.restart_after_ns, "host", "restart", self.restart_agent)

    def restart_agent(self):
        """
        Hands control back to a fresh agent instance, which re-reads the thread table
        """
        at = self.sim.now()
        if not self.fallback_active or self.agent is None:
            return
        self.fallback_active = False
        self._fallback_queue.clear()
        for c in self.cpus.values():
            self.sim.cancel(c.fallback_event)
            c.fallback_event = None
        self.counters["agent_restarts"] += 1
        snapshot = [(t.tid, t.slo_class, t.batch) for t in self.runnable_threads()]
        running = {}
        for cpu, tid in self.running_map().items():
            thread = self.threads.get(tid) if tid is not None else None
            running[cpu] = None if thread is None else (thread.tid, thread.slo_class, thread.batch)
        self.agent.restart(at, snapshot, running)
        if set(self.agent.queued_tids()) != set(tid for tid, _, _ in snapshot):
            self.counters["restart_view_mismatches"] += 1
            LOGGER.warning("Restarted agent's runqueue differs from the host thread table")

    def _fallback_fill(self, at: int):
        for cpu, c in self.cpus.items():
            if len(self._fallback_queue) <= 0:
                break
            if c.current is None:
                self._fallback_dispatch(cpu, max(at, c.kernel_free_at))

    def _fallback_dispatch(self, cpu: int, at: int) -> str:
        c = self.cpus[cpu]
        while len(self._fallback_queue) > 0:
            thread = self.threads[self._fallback_queue.popleft()]
            if thread.state is not ThreadState.RUNNABLE:
                continue
            t = at + self.config.fallback_switch_ns
            self._start(cpu, thread, t)
            self._arm_fallback_tick(cpu, t)
            return "switched"
        self._trace(at, cpu, "IDLE", None)
        return "idle"

    def _arm_fallback_tick(self, cpu: int, at: int):
        c = self.cpus[cpu]
        self.sim.cancel(c.fallback_event)
        c.fallback_event = self.sim.call_at(at + self.config.fallback_tick_ns, cpu, "fallback_tick",
                                            self._fallback_tick, cpu, c.current)

    def _fallback_tick(self, cpu: int, tid: int):
        c = self.cpus[cpu]
        c.fallback_event = None
        if not self.fallback_active or c.current != tid:
            return
        at = self.sim.now()
        if len(self._fallback_queue) <= 0:
            self._arm_fallback_tick(cpu, at)
            return
        thread = self._stop(cpu, at)
        # the re-queued thread may already have refilled this cpu
        self.raise_event(EventKind.PREEMPT_ACK, thread.tid, cpu, at)
        if c.current is None:
            self._fallback_dispatch(cpu, at)

    # accounting

    def conservation(self) -> (int, int):
        """
        :return: (number of CREATED events, number of DEPARTED events)
        """
        return self.counters[EventKind.CREATED.value], self.counters[EventKind.DEPARTED.value]
