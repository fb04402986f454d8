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
The narrow boundary between host mechanisms and IPU policies.

Host facing calls: send_message, read_txn, set_txn_outcome, register_irq_handler.
IPU facing calls: poll_message, txn_create, txns_commit, custom_call.
Setup: start_wave and its individually callable steps (create_queue, destroy_queue,
associate_queue_with_cpu, create_txn_region).
"""
import enum
import logging
import struct
from collections import Counter
from dataclasses import dataclass, field

from splitsim.const import CACHELINE_BYTES, WORD_BYTES
from splitsim.errors import BadConfig, EnclaveViolation, UnknownOpcode
from splitsim.fabric import Fabric, PteType, Side
from splitsim.queues import Backing, Decision, EnqueueResult, MemoryPort, MessageQueue, PollResult, TxnRegion, \
    TxnState
from splitsim.util import ceil_div, find_duplicates

LOGGER = logging.getLogger(__name__)

_CALL_HEADER = struct.Struct("<HI")
_ADDRESS_SPACE_BASE = 0x1000_0000


class SwitchTier(enum.Enum):
    """
    Cumulative fabric optimizations
    """
    BASELINE = "baseline"
    IPU_WB = "ipu_wb"
    HOST_WC_WT = "host_wc_wt"
    PRESTAGE = "prestage"

    @property
    def rank(self) -> int:
        return list(SwitchTier).index(self)

    @property
    def ipu_pte(self) -> PteType:
        return PteType.WB if self.rank >= 1 else PteType.UC

    @property
    def host_write_pte(self) -> PteType:
        return PteType.WC if self.rank >= 2 else PteType.UC

    @property
    def host_read_pte(self) -> PteType:
        return PteType.WT if self.rank >= 2 else PteType.UC

    @property
    def prestage(self) -> bool:
        return self.rank >= 3


@dataclass(frozen=True)
class AgentCosts:
    """
    Agent side compute costs, all multiplied by the slowdown factor
    """
    loop_tick_ns: int = 200
    decision_ns: int = 426
    msix_send_ns: int = 340
    slowdown: float = 1.0

    DECISION_IPU_WB_NS = 426
    DECISION_IPU_UC_NS = 1_013
    DECISION_HOST_NS = 770

    def scaled(self, cost: int) -> int:
        return int(round(cost * self.slowdown))

    @property
    def tick(self) -> int:
        return max(1, self.scaled(self.loop_tick_ns))

    @property
    def create_ns(self) -> int:
        """
        Cost of opening a decision without the notification
        """
        return self.scaled(max(0, self.decision_ns - self.msix_send_ns))

    @classmethod
    def for_placement(cls, location: Side, ipu_pte: PteType, msix_send_ns: int, loop_tick_ns: int = 200,
                      loop_tick_uc_ns: int = 1_160, decision_ns: int = None, slowdown: float = 1.0) -> "AgentCosts":
        """
        Picks the loop tick and per decision cost for an agent placement
        """
        if location is Side.HOST:
            default_decision, tick = cls.DECISION_HOST_NS, loop_tick_ns
        elif ipu_pte is PteType.UC:
            default_decision, tick = cls.DECISION_IPU_UC_NS, loop_tick_uc_ns
        else:
            default_decision, tick = cls.DECISION_IPU_WB_NS, loop_tick_ns
        return cls(loop_tick_ns=tick,
                   decision_ns=default_decision if decision_ns is None else decision_ns,
                   msix_send_ns=msix_send_ns,
                   slowdown=slowdown)


@dataclass
class CustomCall:
    """
    A private subsystem extension call, arguments travel as raw little-endian bytes
    """
    subsystem: str
    opcode: int
    args: bytes = b""
    reply: bytes = b""

    def serialize(self) -> bytes:
        return _CALL_HEADER.pack(self.opcode, len(self.args)) + self.args

    @classmethod
    def deserialize(cls, subsystem: str, data: bytes) -> "CustomCall":
        opcode, length = _CALL_HEADER.unpack_from(data)
        args = bytes(data[_CALL_HEADER.size:_CALL_HEADER.size + length])
        if len(args) != length:
            raise ValueError("Truncated custom call: expected {} argument bytes, got {}".format(length, len(args)))
        return cls(subsystem, opcode, args)


@dataclass
class EnclaveSpec:
    enclave_id: int
    cpus: [int]
    subsystem: str = "sched"
    agent_node: any = None
    agent_side: Side = Side.IPU
    queue_capacity: int = 65536
    backing: Backing = Backing.MMIO
    reserve_check: bool = False
    reserve_batch: int = 1024
    dma_batch: int = 32
    deadline_ms: float = 20.0


@dataclass
class Enclave:
    """
    A partition of host CPUs and memory owned by one agent
    """
    enclave_id: int
    cpus: tuple
    subsystem: str = "sched"
    agent_node: any = None
    deadline_ms: float = 20.0
    ranges: list = field(default_factory=list)
    queues: list = field(default_factory=list)
    cpu_queues: dict = field(default_factory=dict)
    txn_region: TxnRegion = None

    def owns_cpu(self, cpu: int) -> bool:
        return cpu in self.cpus

    def queue_for(self, cpu: int or None) -> MessageQueue:
        if cpu is not None and cpu in self.cpu_queues:
            return self.cpu_queues[cpu]
        if len(self.queues) <= 0:
            raise BadConfig("Enclave {} has no message queue".format(self.enclave_id))
        return self.queues[0]


class WaveRuntime:
    """
    Owns enclaves, their queues and transaction regions, and the custom call registry
    """

    def __init__(self, fabric: Fabric):
        self.fabric = fabric
        self.enclaves = {}
        self.counters = Counter()
        self._next_base = _ADDRESS_SPACE_BASE
        self._custom_handlers = {}

    def allocate(self, size: int) -> int:
        """
        :return: base address of a fresh cacheline aligned range
        """
        base = self._next_base
        self._next_base += ceil_div(size, CACHELINE_BYTES) * CACHELINE_BYTES + CACHELINE_BYTES
        return base

    def start_wave(self, specs: [EnclaveSpec]) -> [Enclave]:
        """
        Creates enclaves with one global message queue and one transaction region each
        :param specs: enclave descriptions
        :return: enclave handles
        """
        all_cpus = [cpu for spec in specs for cpu in spec.cpus]
        all_cpus.extend(cpu for enclave in self.enclaves.values() for cpu in enclave.cpus)
        duplicates = find_duplicates(all_cpus)
        if len(duplicates) > 0:
            raise BadConfig("Host cpus must belong to one enclave only! Clashing cpus: {}".format(
                ", ".join(map(str, sorted(duplicates.keys())))))
        ids = find_duplicates([spec.enclave_id for spec in specs] + list(self.enclaves.keys()))
        if len(ids) > 0:
            raise BadConfig("Enclave ids must be unique! Clashing ids: {}".format(", ".join(map(str, ids.keys()))))

        result = []
        for spec in specs:
            if len(spec.cpus) <= 0:
                raise BadConfig("Enclave {} owns no cpus".format(spec.enclave_id))
            if spec.backing is Backing.DMA and spec.agent_side is not Side.IPU:
                raise BadConfig("DMA backed queues need an agent on the IPU")
            enclave = Enclave(spec.enclave_id, tuple(sorted(spec.cpus)), spec.subsystem, spec.agent_node,
                              spec.deadline_ms)
            self.enclaves[enclave.enclave_id] = enclave
            queue = self.create_queue(enclave, "enclave{}.messages".format(enclave.enclave_id),
                                      capacity=spec.queue_capacity, backing=spec.backing,
                                      reserve_check=spec.reserve_check, reserve_batch=spec.reserve_batch,
                                      dma_batch=spec.dma_batch, home=spec.agent_side)
            for cpu in enclave.cpus:
                self.associate_queue_with_cpu(enclave, queue, cpu)
            self.create_txn_region(enclave, home=spec.agent_side)
            LOGGER.debug("Started enclave {} with cpus {}".format(enclave.enclave_id, list(enclave.cpus)))
            result.append(enclave)
        return result

    def create_queue(self, enclave: Enclave, name: str, capacity: int = 65536, backing: Backing = Backing.MMIO,
                     reserve_check: bool = False, reserve_batch: int = 1024, dma_batch: int = 32,
                     home: Side = Side.IPU) -> MessageQueue:
        base = self.allocate(capacity * CACHELINE_BYTES)
        queue = MessageQueue(self.fabric, name, base, capacity=capacity, backing=backing,
                             enclave_id=enclave.enclave_id, reserve_check=reserve_check,
                             reserve_batch=reserve_batch, dma_batch=dma_batch)
        if backing is not Backing.DMA:
            queue.region.home = home
        enclave.queues.append(queue)
        enclave.ranges.append((base, capacity * CACHELINE_BYTES))
        return queue

    def destroy_queue(self, enclave: Enclave, queue: MessageQueue, port: MemoryPort, at: int) -> (list, int):
        """
        Drains a queue and then removes it
        :return: (drained entries, cost)
        """
        self._check_queue(enclave, queue)
        entries, cost = queue.drain(port, at)
        enclave.queues.remove(queue)
        enclave.cpu_queues = {cpu: q for cpu, q in enclave.cpu_queues.items() if q is not queue}
        enclave.ranges = [r for r in enclave.ranges if r[0] != queue.base]
        self.fabric.memory.unmap_region(queue.name)
        return entries, cost

    def associate_queue_with_cpu(self, enclave: Enclave, queue: MessageQueue, cpu: int):
        self._check_queue(enclave, queue)
        self._check_cpu(enclave, cpu)
        enclave.cpu_queues[cpu] = queue

    def create_txn_region(self, enclave: Enclave, home: Side = Side.IPU) -> TxnRegion:
        size = max(1, len(enclave.cpus)) * CACHELINE_BYTES
        base = self.allocate(size)
        enclave.txn_region = TxnRegion(self.fabric, "enclave{}.txns".format(enclave.enclave_id), base,
                                       list(enclave.cpus), enclave_id=enclave.enclave_id, home=home)
        enclave.ranges.append((base, size))
        return enclave.txn_region

    # host facing

    def send_message(self, enclave: Enclave, event, port: MemoryPort, at: int) -> EnqueueResult:
        """
        Enqueues a kernel event for the agent of the enclave
        """
        cpu = getattr(event, "cpu", None)
        if cpu is not None:
            self._check_cpu(enclave, cpu)
        return enclave.queue_for(cpu).enqueue(event, port, at)

    def read_txn(self, enclave: Enclave, cpu: int, port: MemoryPort, at: int, prefetched: bool = True,
                 claim: bool = True) -> (Decision, int):
        self._check_cpu(enclave, cpu)
        return enclave.txn_region.read_txn(cpu, port, at, prefetched=prefetched, claim=claim)

    def set_txn_outcome(self, enclave: Enclave, cpu: int, outcome: TxnState, port: MemoryPort, at: int) -> int:
        self._check_cpu(enclave, cpu)
        return enclave.txn_region.set_txn_outcome(cpu, outcome, port, at)

    def register_irq_handler(self, cpu: int, handler: callable):
        self.fabric.register_irq_handler(cpu, handler)

    # IPU facing

    def poll_message(self, enclave: Enclave, port: MemoryPort, at: int, queue: MessageQueue = None) -> PollResult:
        queue = enclave.queue_for(None) if queue is None else queue
        self._check_queue(enclave, queue)
        return queue.poll(port, at)

    def txn_create(self, enclave: Enclave, decision: Decision, port: MemoryPort, at: int) -> int:
        self._check_cpu(enclave, decision.cpu)
        return enclave.txn_region.txn_create(decision, port, at)

    def txns_commit(self, enclave: Enclave, cpus: [int], sender, at: int, msix: bool = True) -> int:
        for cpu in cpus:
            self._check_cpu(enclave, cpu)
        return enclave.txn_region.txns_commit(cpus, sender, at, msix=msix)

    def register_custom_handler(self, subsystem: str, opcode: int, handler: callable):
        """
        :param handler: callable(args: bytes) -> reply bytes, runs on the host shim
        """
        self._custom_handlers[(subsystem, opcode)] = handler

    def custom_call(self, enclave: Enclave, call: CustomCall, initiator, at: int) -> (bytes, int):
        """
        Serializes a call, moves it to the host and returns the reply
        :return: (reply bytes, cost charged to the initiator)
        """
        if call.subsystem != enclave.subsystem:
            self.counters["cross_enclave_accesses"] += 1
            raise EnclaveViolation("Enclave {} ({}) cannot issue '{}' calls".format(
                enclave.enclave_id, enclave.subsystem, call.subsystem))
        handler = self._custom_handlers.get((call.subsystem, call.opcode))
        if handler is None:
            raise UnknownOpcode("No handler for opcode {} of subsystem '{}'".format(call.opcode, call.subsystem))

        data = call.serialize()
        delivered = CustomCall.deserialize(call.subsystem, data)
        reply = handler(delivered.args)
        call.reply = reply
        cost = self._transport_cost(len(data), initiator) + self._transport_cost(len(reply), initiator)
        self.counters["custom_calls"] += 1
        return reply, cost

    def _transport_cost(self, length: int, initiator) -> int:
        if length <= 0:
            return 0
        node = self.fabric.nodes[initiator]
        if length > CACHELINE_BYTES:
            self.counters["custom_call_dma"] += 1
            return node.charge(self.fabric.dma_duration(length), "dma")
        return node.charge(ceil_div(length, WORD_BYTES) * self.fabric.latency.mmio_write_ns, "mmio")

    def _check_cpu(self, enclave: Enclave, cpu: int):
        if not enclave.owns_cpu(cpu):
            self.counters["cross_enclave_accesses"] += 1
            raise EnclaveViolation("Cpu {} does not belong to enclave {}".format(cpu, enclave.enclave_id))

    def _check_queue(self, enclave: Enclave, queue: MessageQueue):
        if queue.enclave_id != enclave.enclave_id:
            self.counters["cross_enclave_accesses"] += 1
            raise EnclaveViolation("Queue '{}' does not belong to enclave {}".format(queue.name, enclave.enclave_id))
