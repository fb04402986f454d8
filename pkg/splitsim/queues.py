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
Valid-flag message rings and per-CPU transaction regions, layered on fabric memory operations.

A ring entry is one cacheline: payload words followed by a flag word. The producer writes the
payload, fences, then sets the flag to the entry sequence number. The consumer loads the flag,
reads the entry if the flag matches the expected sequence number and clears the flag.
"""
import enum
import logging
from collections import Counter, deque, namedtuple
from dataclasses import dataclass, replace

from splitsim.const import CACHELINE_BYTES, WORD_BYTES
from splitsim.errors import AgentCrash, BadConfig, BadState, EntryTooLarge, InvariantViolation, NoDecision, \
    SlotBusy
from splitsim.fabric import Direction, Fabric, PteType, Side, Simulator

LOGGER = logging.getLogger(__name__)

EnqueueResult = namedtuple("EnqueueResult", ["ok", "cost", "visible_at"])
PollResult = namedtuple("PollResult", ["entry", "cost"])


class Backing(enum.Enum):
    MMIO = "mmio"
    DMA = "dma"


class MemoryPort:
    """
    The way one node reaches one memory: every access returns the cost charged to the node
    """

    def __init__(self, fabric: Fabric, node_id):
        self.fabric = fabric
        self.node_id = node_id

    def write(self, addr: int, value, width: int, at: int) -> (int, int or None):
        """
        :return: (cost, time the value becomes visible or None while buffered)
        """
        raise NotImplementedError()

    def read(self, addr: int, width: int, at: int, use_prefetch: bool = True) -> (any, int):
        """
        :return: (value, cost)
        """
        raise NotImplementedError()

    def fence(self, at: int) -> (int, int or None):
        return 0, None

    def flush_line(self, addr: int, at: int) -> int:
        return 0

    def prefetch(self, addr: int, at: int) -> int:
        return 0


class MmioPort(MemoryPort):
    """
    Host CPU reaching SoC memory across the bus
    """

    def __init__(self, fabric: Fabric, cpu: int, write_pte: PteType = PteType.UC, read_pte: PteType = PteType.UC):
        super().__init__(fabric, cpu)
        self.write_pte = write_pte
        self.read_pte = read_pte

    def write(self, addr: int, value, width: int, at: int) -> (int, int or None):
        cost = self.fabric.mmio_write(self.node_id, addr, value, pte=self.write_pte, width=width, at=at)
        if self.write_pte is PteType.WC:
            return cost, None
        return cost, at + cost + self.fabric.latency.bus_transit_ns

    def read(self, addr: int, width: int, at: int, use_prefetch: bool = True) -> (any, int):
        return self.fabric.mmio_read(self.node_id, addr, width=width, pte=self.read_pte, at=at,
                                     use_prefetch=use_prefetch)

    def fence(self, at: int) -> (int, int or None):
        if self.write_pte is not PteType.WC or self.fabric.wc_pending(self.node_id) <= 0:
            return 0, None
        cost = self.fabric.wc_flush(self.node_id, at)
        return cost, at + cost + self.fabric.latency.bus_transit_ns

    def flush_line(self, addr: int, at: int) -> int:
        if self.read_pte is not PteType.WT:
            return 0
        return self.fabric.clflush(self.node_id, addr, at)

    def prefetch(self, addr: int, at: int) -> int:
        if self.read_pte is not PteType.WT:
            return 0
        return self.fabric.prefetch(self.node_id, addr, at)


class LocalPort(MemoryPort):
    """
    Coherent access of a node to memory on its own side (IPU core on SoC DRAM, host core on host DRAM)
    """

    def __init__(self, fabric: Fabric, node_id, pte: PteType = PteType.WB):
        super().__init__(fabric, node_id)
        self.pte = pte
        self.side = fabric.nodes[node_id].side

    def _cost(self, width: int) -> int:
        if self.side is Side.IPU:
            return self.fabric.ipu_access(self.node_id, width, self.pte)
        return self.fabric.host_local_access(self.node_id, width)

    def write(self, addr: int, value, width: int, at: int) -> (int, int or None):
        cost = self._cost(width)
        self.fabric.memory.region_of(addr)
        self.fabric.memory.store(addr, value, at + cost)
        return cost, at + cost

    def read(self, addr: int, width: int, at: int, use_prefetch: bool = True) -> (any, int):
        self.fabric.memory.region_of(addr)
        return self.fabric.memory.load(addr, at)[0], self._cost(width)


class MessageQueue:
    """
    Single producer, single consumer ring of fixed size entries with a per-entry valid flag
    """

    def __init__(self, fabric: Fabric, name: str, base: int, capacity: int = 65536,
                 entry_size: int = CACHELINE_BYTES, backing: Backing = Backing.MMIO, enclave_id: int = 0,
                 reserve_check: bool = False, reserve_batch: int = 1024, dma_batch: int = 32):
        if capacity <= 0 or capacity & (capacity - 1) != 0:
            raise BadConfig("Queue capacity must be a power of two: {}".format(capacity))
        if entry_size < 2 * WORD_BYTES or entry_size % WORD_BYTES != 0:
            raise BadConfig("Queue entry size must be a multiple of {} and hold a flag: {}".format(
                WORD_BYTES, entry_size))
        self.fabric = fabric
        self.name = name
        self.base = base
        self.capacity = capacity
        self.entry_size = entry_size
        self.backing = backing
        self.enclave_id = enclave_id
        self.reserve_check = reserve_check
        self.reserve_batch = reserve_batch
        self.dma_batch = dma_batch
        home = Side.HOST if backing is Backing.DMA else Side.IPU
        self.region = fabric.memory.map_region(name, base, capacity * entry_size, home)

        self.head = 0
        self.tail = 0
        self._reserved_until = 0
        self._local = deque()
        self._dma_inflight = False
        self._dma_entries = []
        self._dma_event = None
        self.on_visible = None
        self.counters = Counter()

    @property
    def payload_bytes(self) -> int:
        return self.entry_size - WORD_BYTES

    def __len__(self) -> int:
        return self.tail - self.head

    def next_visible_at(self) -> int or None:
        """
        :return: time the head entry becomes consumable, None if nothing is pending or a DMA batch is in flight
        """
        if len(self._local) > 0:
            return 0
        if self._dma_inflight or self.tail <= self.head:
            return None
        return self.fabric.memory.visible_at(self._flag_addr(self.head))

    def _slot_addr(self, index: int) -> int:
        return self.base + (index % self.capacity) * self.entry_size

    def _flag_addr(self, index: int) -> int:
        return self._slot_addr(index) + self.payload_bytes

    def enqueue(self, entry, port: MemoryPort, at: int, nbytes: int = None) -> EnqueueResult:
        """
        Writes an entry and then sets its valid flag
        :param entry: the entry
        :param port: producer memory port
        :param at: start time
        :param nbytes: entry size, the full payload if not given
        :return: the result, ok is False only if reserve-check mode found no free slot
        """
        nbytes = self.payload_bytes if nbytes is None else nbytes
        if nbytes > self.payload_bytes:
            raise EntryTooLarge("Entry of {} bytes does not fit queue '{}' ({} bytes)".format(
                nbytes, self.name, self.payload_bytes))

        t = at
        if self.reserve_check:
            if self.tail >= self._reserved_until:
                # refresh the consumer head, reserve the next batch
                _, cost = port.read(self._flag_addr(self.head), WORD_BYTES, t)
                t += cost
                free = self.capacity - (self.tail - self.head)
                self._reserved_until = self.tail + min(self.reserve_batch, free)
                self.counters["reservations"] += 1
                if free <= 0:
                    self.counters["rejected"] += 1
                    return EnqueueResult(False, t - at, None)
        elif self.tail - self.head >= self.capacity:
            self.counters["overflows"] += 1
            raise AgentCrash("Queue '{}' overflowed ({} entries)".format(self.name, self.capacity))

        index = self.tail
        seq = index + 1
        cost, _ = port.write(self._slot_addr(index), (seq, entry), nbytes, t)
        t += cost
        cost, _ = port.fence(t)
        t += cost
        cost, visible = port.write(self._flag_addr(index), seq, WORD_BYTES, t)
        t += cost
        cost, fenced = port.fence(t)
        t += cost
        if fenced is not None:
            visible = fenced

        self.tail += 1
        self.counters["enqueued"] += 1
        if self.on_visible is not None:
            self.on_visible(visible)
        return EnqueueResult(True, t - at, visible)

    def poll(self, port: MemoryPort, at: int) -> PollResult:
        """
        Returns the oldest valid entry and clears its flag
        :param port: consumer memory port
        :param at: poll time
        :return: (entry or None, cost)
        """
        if self.backing is Backing.DMA:
            return self._poll_dma(port, at)

        t = at
        flag, cost = port.read(self._flag_addr(self.head), WORD_BYTES, t)
        t += cost
        if flag != self.head + 1:
            self.counters["empty_polls"] += 1
            return PollResult(None, t - at)

        value, cost = port.read(self._slot_addr(self.head), self.payload_bytes, t)
        t += cost
        if value is None or value[0] != flag:
            raise InvariantViolation("Torn read in queue '{}': flag {} but payload {}".format(
                self.name, flag, None if value is None else value[0]))
        cost, _ = port.write(self._flag_addr(self.head), 0, WORD_BYTES, t)
        t += cost

        self.head += 1
        self.counters["dequeued"] += 1
        return PollResult(value[1], t - at)

    def _poll_dma(self, port: MemoryPort, at: int) -> PollResult:
        # entries already moved to SoC memory are read locally
        if len(self._local) > 0:
            entry = self._local.popleft()
            self.head += 1
            self.counters["dequeued"] += 1
            return PollResult(entry, port.fabric.ipu_access(port.node_id, self.entry_size))

        cost = port.fabric.ipu_access(port.node_id, WORD_BYTES)
        if self._dma_inflight:
            return PollResult(None, cost)

        memory = self.fabric.memory
        entries = []
        index = self.head
        while len(entries) < self.dma_batch and index < self.tail:
            flag, _ = memory.load(self._flag_addr(index), at)
            if flag != index + 1:
                break
            value, _ = memory.load(self._slot_addr(index), at)
            if value is None or value[0] != flag:
                raise InvariantViolation("Torn read in queue '{}' at index {}".format(self.name, index))
            entries.append(value[1])
            memory.store(self._flag_addr(index), 0, at)
            index += 1

        if len(entries) <= 0:
            self.counters["empty_polls"] += 1
            return PollResult(None, cost)

        self._dma_inflight = True
        self._dma_entries = entries
        self.counters["dma_batches"] += 1
        self._dma_event = self.fabric.dma_transfer(Direction.HOST_TO_SOC, len(entries) * self.entry_size,
                                                   port.node_id, at=at + cost, on_complete=self._dma_done)
        return PollResult(None, cost + self.fabric.latency.dma_setup_ns)

    def _land_dma_batch(self):
        self._local.extend(self._dma_entries)
        self._dma_entries = []
        self._dma_event = None
        self._dma_inflight = False

    def _dma_done(self, done: int):
        self._land_dma_batch()
        if self.on_visible is not None:
            self.on_visible(done)

    def drain(self, port: MemoryPort, at: int) -> (list, int):
        """
        Consumes every visible entry, waiting for an in-flight DMA batch to land
        :return: (entries, cost)
        """
        entries = []
        t = at
        while True:
            result = self.poll(port, t)
            t += result.cost
            if result.entry is None:
                if self._dma_inflight:
                    # the batch lands here instead of through its completion event
                    t = max(t, self._dma_event.fire_at)
                    Simulator.cancel(self._dma_event)
                    self._land_dma_batch()
                    self.counters["drain_dma_waits"] += 1
                    continue
                break
            entries.append(result.entry)
        return entries, t - at


class TxnState(enum.Enum):
    EMPTY = "EMPTY"
    STAGED = "STAGED"
    CLAIMED = "CLAIMED"
    COMPLETE = "COMPLETE"
    FAILED = "FAILED"


_LEGAL_TRANSITIONS = {
    TxnState.EMPTY: {TxnState.STAGED},
    TxnState.STAGED: {TxnState.CLAIMED},
    TxnState.CLAIMED: {TxnState.COMPLETE, TxnState.FAILED},
    TxnState.COMPLETE: {TxnState.EMPTY},
    TxnState.FAILED: {TxnState.EMPTY},
}


@dataclass
class Decision:
    """
    A scheduling decision for one host CPU
    """
    cpu: int
    tid: int or None
    preempt: bool = False
    enclave_id: int = 0
    txn_seq: int = 0


class TxnSlot:
    __slots__ = ("cpu", "addr", "state", "decision", "txn_seq", "msix_sent", "outcome_visible_at", "staged_at")

    def __init__(self, cpu: int, addr: int):
        self.cpu = cpu
        self.addr = addr
        self.state = TxnState.EMPTY
        self.decision = None
        self.txn_seq = 0
        self.msix_sent = False
        self.outcome_visible_at = None
        self.staged_at = None


class TxnRegion:
    """
    One decision slot per host CPU; the agent writes, the owning host CPU reads
    """
    DECISION_BYTES = 48

    def __init__(self, fabric: Fabric, name: str, base: int, cpus: [int], enclave_id: int = 0,
                 home: Side = Side.IPU):
        self.fabric = fabric
        self.name = name
        self.enclave_id = enclave_id
        cpus = sorted(cpus)
        self.region = fabric.memory.map_region(name, base, max(1, len(cpus)) * CACHELINE_BYTES, home)
        self.slots = {cpu: TxnSlot(cpu, base + i * CACHELINE_BYTES) for i, cpu in enumerate(cpus)}
        self.on_visible = None
        self.transitions = Counter()
        self.illegal_transitions = 0

    def slot(self, cpu: int) -> TxnSlot:
        if cpu not in self.slots:
            raise BadState("No transaction slot for cpu {} in region '{}'".format(cpu, self.name))
        return self.slots[cpu]

    def state(self, cpu: int) -> TxnState:
        return self.slot(cpu).state

    def _transition(self, slot: TxnSlot, new_state: TxnState):
        if new_state not in _LEGAL_TRANSITIONS[slot.state]:
            self.illegal_transitions += 1
            raise BadState("Illegal transition {} -> {} on cpu {}".format(
                slot.state.value, new_state.value, slot.cpu))
        self.transitions[(slot.state, new_state)] += 1
        slot.state = new_state

    def txn_create(self, decision: Decision, port: MemoryPort, at: int) -> int:
        """
        Writes a decision into the slot of its CPU
        :return: cost
        """
        slot = self.slot(decision.cpu)
        if slot.state is not TxnState.EMPTY:
            raise SlotBusy("Slot of cpu {} is {}".format(decision.cpu, slot.state.value))
        slot.txn_seq += 1
        decision.txn_seq = slot.txn_seq
        decision.enclave_id = self.enclave_id
        cost, _ = port.write(slot.addr, (slot.txn_seq, decision), self.DECISION_BYTES, at)
        slot.decision = decision
        slot.msix_sent = False
        slot.outcome_visible_at = None
        slot.staged_at = at + cost
        self._transition(slot, TxnState.STAGED)
        return cost

    def txns_commit(self, cpus: [int], sender, at: int, msix: bool = True) -> int:
        """
        Publishes staged decisions, optionally notifying each CPU with an MSI-X
        :return: cost
        """
        cost = 0
        for cpu in cpus:
            slot = self.slot(cpu)
            if slot.state is not TxnState.STAGED:
                raise BadState("Cannot commit slot of cpu {} in state {}".format(cpu, slot.state.value))
            if msix and not slot.msix_sent:
                self.fabric.send_msix(sender, cpu, at + cost)
                cost += self.fabric.latency.msix_send_ns
                slot.msix_sent = True
        return cost

    def restage(self, cpu: int, port: MemoryPort, at: int, preempt: bool = True) -> int:
        """
        Turns an unclaimed pre-staged decision into a preempting one
        :return: cost
        """
        slot = self.slot(cpu)
        if slot.state is not TxnState.STAGED:
            raise BadState("Cannot restage slot of cpu {} in state {}".format(cpu, slot.state.value))
        slot.decision = replace(slot.decision, preempt=preempt)
        cost, _ = port.write(slot.addr, (slot.txn_seq, slot.decision), self.DECISION_BYTES, at)
        return cost

    def read_txn(self, cpu: int, port: MemoryPort, at: int, prefetched: bool = True,
                 claim: bool = True) -> (Decision, int):
        """
        Reads the slot of a CPU from the host
        :param cpu: the owning host cpu
        :param port: the cpu's memory port
        :param at: read time
        :param prefetched: whether an earlier prefetch may hide the read
        :param claim: transition the slot to CLAIMED
        :return: (decision, cost)
        """
        slot = self.slot(cpu)
        value, cost = port.read(slot.addr, self.DECISION_BYTES, at, use_prefetch=prefetched)
        if slot.state is not TxnState.STAGED or value is None or value[0] != slot.txn_seq:
            raise NoDecision(cpu, cost)
        if claim:
            self._transition(slot, TxnState.CLAIMED)
        return value[1], cost

    def claim(self, cpu: int):
        self._transition(self.slot(cpu), TxnState.CLAIMED)

    def set_txn_outcome(self, cpu: int, outcome: TxnState, port: MemoryPort, at: int) -> int:
        """
        Reports COMPLETE or FAILED for a claimed decision
        :return: cost
        """
        slot = self.slot(cpu)
        if slot.state is not TxnState.CLAIMED:
            raise BadState("Cannot set outcome of slot of cpu {} in state {}".format(cpu, slot.state.value))
        if outcome not in (TxnState.COMPLETE, TxnState.FAILED):
            raise BadState("Invalid outcome {}".format(outcome))
        t = at
        cost, visible = port.write(slot.addr + self.DECISION_BYTES, outcome.value, WORD_BYTES, t)
        t += cost
        cost, fenced = port.fence(t)
        t += cost
        if fenced is not None:
            visible = fenced
        t += port.flush_line(slot.addr, t)
        self._transition(slot, outcome)
        slot.outcome_visible_at = visible
        if self.on_visible is not None:
            self.on_visible(visible)
        return t - at

    def observe(self, cpu: int, at: int) -> (TxnState, Decision) or None:
        """
        Agent side scan of one slot: a visible outcome is consumed and the slot returns to EMPTY
        :return: (outcome, decision) or None
        """
        slot = self.slot(cpu)
        if slot.state not in (TxnState.COMPLETE, TxnState.FAILED):
            return None
        if slot.outcome_visible_at is None or slot.outcome_visible_at > at:
            return None
        outcome = slot.state
        decision = slot.decision
        self._transition(slot, TxnState.EMPTY)
        slot.decision = None
        return outcome, decision

    def abort_staged(self) -> [Decision]:
        """
        Withdraws every unclaimed decision, used when the agent is killed
        :return: the withdrawn decisions
        """
        aborted = []
        for slot in self.slots.values():
            if slot.state is TxnState.STAGED:
                self._transition(slot, TxnState.CLAIMED)
                self._transition(slot, TxnState.FAILED)
                self._transition(slot, TxnState.EMPTY)
                aborted.append(slot.decision)
                slot.decision = None
            elif slot.state in (TxnState.COMPLETE, TxnState.FAILED):
                self._transition(slot, TxnState.EMPTY)
                slot.decision = None
        return aborted
