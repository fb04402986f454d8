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
Virtual clock, event scheduler and the PCIe interconnect between the host and the IPU.

All costs are integer nanoseconds. Operations return the cost they charged to the issuing
node so that actors can advance their own local time cursor.
"""
import enum
import heapq
import logging
from bisect import insort
from collections import Counter
from dataclasses import dataclass, fields

from splitsim.const import CACHELINE_BYTES, WORD_BYTES
from splitsim.errors import BadConfig, BadVector, PastEvent, UnmappedAddress, ZeroLength, AlreadyRegistered
from splitsim.util import ceil_div

LOGGER = logging.getLogger(__name__)

# number of historic values kept per memory word
_CELL_HISTORY = 8


class PteType(enum.Enum):
    """
    Page mapping types
    """
    UC = "UC"
    WC = "WC"
    WT = "WT"
    WB = "WB"


class Side(enum.Enum):
    HOST = "host"
    IPU = "ipu"


class Direction(enum.Enum):
    HOST_TO_SOC = "host->soc"
    SOC_TO_HOST = "soc->host"


@dataclass(frozen=True)
class LatencyModel:
    """
    Fabric cost table (all values in nanoseconds)
    """
    mmio_read_ns: int = 750
    mmio_write_ns: int = 50
    msix_send_ns: int = 340
    msix_receive_ns: int = 350
    msix_e2e_ns: int = 1600
    dma_setup_ns: int = 2000
    dma_per_cacheline_ns: int = 10
    clflush_ns: int = 100
    wt_hit_ns: int = 0
    wc_store_ns: int = 5
    wc_flush_ns: int = 100
    ipu_wb_line_ns: int = 20
    ipu_uc_word_ns: int = 60
    host_local_line_ns: int = 0
    profile_name: str = "mount-evans"

    def __post_init__(self):
        for f in fields(self):
            if f.name == "profile_name":
                continue
            value = getattr(self, f.name)
            if value < 0:
                raise BadConfig("Latency '{}' must not be negative: {}".format(f.name, value))
        if self.msix_e2e_ns < self.msix_send_ns + self.msix_receive_ns:
            raise BadConfig("msix_e2e_ns ({}) must cover msix_send_ns + msix_receive_ns ({})".format(
                self.msix_e2e_ns, self.msix_send_ns + self.msix_receive_ns))

    @property
    def bus_transit_ns(self) -> int:
        """
        :return: one-way posted transaction latency across the bus
        """
        return self.msix_e2e_ns - self.msix_send_ns - self.msix_receive_ns

    @classmethod
    def from_profile(cls, name: str, **overrides) -> "LatencyModel":
        """
        Creates a latency model from a named profile
        :param name: profile name
        :param overrides: individual cost overrides, None values are ignored
        :return: the latency model
        """
        if name not in PROFILES:
            raise BadConfig("Unknown fabric profile '{}', expected one of: {}".format(name, ", ".join(PROFILES)))
        values = dict(PROFILES[name])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(profile_name=name, **values)


def _zero_costs() -> dict:
    return {f.name: 0 for f in fields(LatencyModel) if f.name != "profile_name"}


PROFILES = {
    "mount-evans": {},
    "upi": {"mmio_read_ns": 100, "mmio_write_ns": 20},
    "onhost": _zero_costs(),
}


class SimEvent:
    """
    A scheduled callback
    """
    __slots__ = ("fire_at", "target", "kind", "callback", "args", "seq", "cancelled")

    def __init__(self, fire_at: int, target, kind: str, callback: callable = None, args: tuple = ()):
        self.fire_at = fire_at
        self.target = target
        self.kind = kind
        self.callback = callback
        self.args = args
        self.seq = -1
        self.cancelled = False

    def __repr__(self) -> str:
        return "SimEvent({}@{} -> {} #{})".format(self.kind, self.fire_at, self.target, self.seq)


class Simulator:
    """
    Deterministic discrete event core, events dispatch in (fire_at, seq) order
    """

    def __init__(self, trace: callable = None):
        """
        :param trace: optional callable invoked with every dispatched event
        """
        self._now = 0
        self._seq = 0
        self._queue = []
        self.dispatched = 0
        self.trace = trace

    def now(self) -> int:
        return self._now

    def schedule(self, event: SimEvent) -> int:
        """
        Enqueues an event
        :param event: the event
        :return: the event id
        """
        if event.fire_at < self._now:
            raise PastEvent("Event '{}' at {} ns is in the past (now {} ns)".format(
                event.kind, event.fire_at, self._now))
        event.seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (event.fire_at, event.seq, event))
        return event.seq

    def call_at(self, fire_at: int, target, kind: str, callback: callable, *args) -> SimEvent:
        event = SimEvent(int(fire_at), target, kind, callback, args)
        self.schedule(event)
        return event

    def call_after(self, delay: int, target, kind: str, callback: callable, *args) -> SimEvent:
        return self.call_at(self._now + delay, target, kind, callback, *args)

    @staticmethod
    def cancel(event: SimEvent or None):
        if event is not None:
            event.cancelled = True

    def peek(self) -> int or None:
        """
        :return: fire time of the next live event or None
        """
        while self._queue and self._queue[0][2].cancelled:
            heapq.heappop(self._queue)
        if not self._queue:
            return None
        return self._queue[0][0]

    def step(self) -> SimEvent or None:
        """
        Dispatches the next live event
        :return: the dispatched event or None if the queue is empty
        """
        while self._queue:
            fire_at, _, event = heapq.heappop(self._queue)
            if event.cancelled:
                continue
            self._now = fire_at
            self.dispatched += 1
            if self.trace is not None:
                self.trace(event)
            if event.callback is not None:
                event.callback(*event.args)
            return event
        return None

    def run(self, until: int = None, max_events: int = None) -> int:
        """
        Runs the simulation
        :param until: stop before the first event later than this time and advance the clock to it
        :param max_events: maximum number of events to dispatch
        :return: number of dispatched events
        """
        count = 0
        while True:
            if max_events is not None and count >= max_events:
                break
            head = self.peek()
            if head is None or (until is not None and head > until):
                break
            self.step()
            count += 1
        if until is not None and until > self._now and (max_events is None or count < max_events):
            self._now = until
        return count


class Node:
    """
    A CPU (host or IPU) that operations are charged to
    """
    __slots__ = ("node_id", "side", "busy_ns", "charges")

    def __init__(self, node_id, side: Side):
        self.node_id = node_id
        self.side = side
        self.busy_ns = 0
        self.charges = Counter()

    def charge(self, cost: int, category: str = "fabric") -> int:
        self.busy_ns += cost
        self.charges[category] += cost
        return cost

    def __repr__(self) -> str:
        return "Node({}, {})".format(self.node_id, self.side.value)


class MemoryRegion:

    def __init__(self, name: str, base: int, size: int, home: Side):
        self.name = name
        self.base = base
        self.size = size
        self.home = home

    @property
    def end(self) -> int:
        return self.base + self.size

    def contains(self, addr: int) -> bool:
        return self.base <= addr < self.end


class Memory:
    """
    Word addressed memory of both sides; every store is versioned and becomes visible at a given time
    """

    def __init__(self):
        self._regions = []
        self._cells = {}
        self._version = 0

    def map_region(self, name: str, base: int, size: int, home: Side = Side.IPU) -> MemoryRegion:
        if size <= 0:
            raise BadConfig("Region '{}' must have a positive size".format(name))
        region = MemoryRegion(name, base, size, home)
        for other in self._regions:
            if region.base < other.end and other.base < region.end:
                raise BadConfig("Region '{}' overlaps region '{}'".format(name, other.name))
        self._regions.append(region)
        return region

    def unmap_region(self, name: str):
        self._regions = [r for r in self._regions if r.name != name]

    def region_of(self, addr: int) -> MemoryRegion:
        for region in self._regions:
            if region.contains(addr):
                return region
        raise UnmappedAddress(addr)

    def store(self, addr: int, value, visible_at: int) -> int:
        self._version += 1
        cell = self._cells.get(addr)
        if cell is None:
            cell = []
            self._cells[addr] = cell
        insort(cell, (visible_at, self._version, value), key=lambda x: (x[0], x[1]))
        if len(cell) > _CELL_HISTORY:
            del cell[0]
        return self._version

    def load(self, addr: int, at: int) -> tuple:
        """
        :return: (value, version) visible at the given time, (None, 0) if never written
        """
        cell = self._cells.get(addr)
        if cell is not None:
            for visible_at, version, value in reversed(cell):
                if visible_at <= at:
                    return value, version
        return None, 0

    def visible_at(self, addr: int) -> int or None:
        """
        :return: the visibility time of the latest store to the address
        """
        cell = self._cells.get(addr)
        if not cell:
            return None
        return max(x[0] for x in cell)

    def line_snapshot(self, line: int, at: int) -> dict:
        base = line * CACHELINE_BYTES
        snapshot = {}
        for addr in range(base, base + CACHELINE_BYTES, WORD_BYTES):
            if addr in self._cells:
                snapshot[addr] = self.load(addr, at)
        return snapshot


class _WcBuffer:
    __slots__ = ("line", "pending")

    def __init__(self):
        self.line = None
        self.pending = {}


class Fabric:
    """
    PCIe interconnect model: host MMIO with per CPU WT caches and WC buffers, MSI-X delivery and DMA
    """

    def __init__(self, sim: Simulator, latency: LatencyModel, memory: Memory = None):
        self.sim = sim
        self.latency = latency
        self.memory = memory if memory is not None else Memory()
        self.nodes = {}
        self.counters = Counter()
        self.coherence_violations = 0
        self._host_cpus = set()
        self._wt = {}
        self._prefetched = {}
        self._last_flush = {}
        self._wc = {}
        self._coherence_lines = {}
        self._irq_handlers = {}

    def add_node(self, node_id, side: Side) -> Node:
        if node_id in self.nodes:
            raise BadConfig("Node '{}' exists already".format(node_id))
        node = Node(node_id, side)
        self.nodes[node_id] = node
        if side is Side.HOST:
            self._wt[node_id] = {}
            self._prefetched[node_id] = {}
            self._last_flush[node_id] = {}
            self._wc[node_id] = _WcBuffer()
            self._coherence_lines[node_id] = set()
        return node

    def add_host_cpu(self, cpu: int) -> Node:
        node = self.add_node(cpu, Side.HOST)
        self._host_cpus.add(cpu)
        return node

    @property
    def host_cpus(self) -> [int]:
        return sorted(self._host_cpus)

    def _at(self, at: int or None) -> int:
        return self.sim.now() if at is None else at

    # host side MMIO

    def mmio_read(self, cpu, addr: int, width: int = WORD_BYTES, pte: PteType = PteType.UC, at: int = None,
                  use_prefetch: bool = True) -> tuple:
        """
        Host load from SoC memory
        :param cpu: issuing host node
        :param addr: address
        :param width: number of bytes read
        :param pte: mapping type of the page
        :param at: issue time
        :param use_prefetch: whether an earlier prefetch of the line may hide the latency
        :return: (value, cost)
        """
        at = self._at(at)
        self.memory.region_of(addr)
        if pte is PteType.WT:
            value, cost = self._wt_read(cpu, addr, width, at, use_prefetch)
        else:
            value = self.memory.load(addr, at)[0]
            cost = ceil_div(width, WORD_BYTES) * self.latency.mmio_read_ns
            self.counters["mmio_reads"] += 1
        self.nodes[cpu].charge(cost, "mmio")
        return value, cost

    def _wt_read(self, cpu, addr: int, width: int, at: int, use_prefetch: bool) -> tuple:
        cache = self._wt[cpu]
        prefetched = self._prefetched[cpu]
        cost = 0
        first = addr // CACHELINE_BYTES
        last = (addr + width - 1) // CACHELINE_BYTES
        for line in range(first, last + 1):
            issued = prefetched.pop(line, None)
            if line in cache and (issued is None or (use_prefetch and at - issued >= self.latency.mmio_read_ns)):
                cost += self.latency.wt_hit_ns
                self.counters["wt_hits"] += 1
            else:
                cache[line] = self.memory.line_snapshot(line, at)
                cost += self.latency.mmio_read_ns
                self.counters["wt_misses"] += 1

        value, version = cache[first].get(addr, (None, 0))
        flushed_at = self._last_flush[cpu].get(first)
        if flushed_at is not None and version < self.memory.load(addr, flushed_at)[1]:
            self.coherence_violations += 1
        return value, cost

    def mmio_write(self, cpu, addr: int, value, pte: PteType = PteType.UC, width: int = WORD_BYTES,
                   at: int = None) -> int:
        """
        Host store to SoC memory
        :return: cost
        """
        at = self._at(at)
        self.memory.region_of(addr)
        if pte is PteType.WC:
            cost = self._wc_write(cpu, addr, value, width, at)
        else:
            cost = ceil_div(width, WORD_BYTES) * self.latency.mmio_write_ns
            version = self.memory.store(addr, value, at + cost + self.latency.bus_transit_ns)
            line = addr // CACHELINE_BYTES
            cached = self._wt[cpu].get(line)
            if cached is not None:
                cached[addr] = (value, version)
            self.counters["mmio_writes"] += 1
        self.nodes[cpu].charge(cost, "mmio")
        return cost

    def _wc_write(self, cpu, addr: int, value, width: int, at: int) -> int:
        buffer = self._wc[cpu]
        line = addr // CACHELINE_BYTES
        cost = 0
        if buffer.line is not None and buffer.line != line:
            cost += self._drain_wc(cpu, at)
        buffer.line = line
        buffer.pending[addr] = value
        self.counters["wc_stores"] += 1
        return cost + ceil_div(width, WORD_BYTES) * self.latency.wc_store_ns

    def _drain_wc(self, cpu, at: int) -> int:
        buffer = self._wc[cpu]
        if not buffer.pending:
            return 0
        visible = at + self.latency.wc_flush_ns + self.latency.bus_transit_ns
        for addr, value in buffer.pending.items():
            self.memory.store(addr, value, visible)
        buffer.pending.clear()
        buffer.line = None
        self.counters["wc_flushes"] += 1
        return self.latency.wc_flush_ns

    def wc_flush(self, cpu, at: int = None) -> int:
        """
        Store fence: drains the write-combining buffer of a CPU
        :return: cost
        """
        cost = self._drain_wc(cpu, self._at(at))
        self.nodes[cpu].charge(cost, "mmio")
        return cost

    def wc_pending(self, cpu) -> int:
        return len(self._wc[cpu].pending)

    def clflush(self, cpu, addr: int, at: int = None) -> int:
        """
        Invalidates one cacheline in the WT cache of a CPU
        :return: cost
        """
        at = self._at(at)
        line = addr // CACHELINE_BYTES
        self._wt[cpu].pop(line, None)
        self._prefetched[cpu].pop(line, None)
        self._last_flush[cpu][line] = at
        self.counters["clflushes"] += 1
        return self.nodes[cpu].charge(self.latency.clflush_ns, "mmio")

    def prefetch(self, cpu, addr: int, at: int = None) -> int:
        """
        Issues a non-blocking load of a whole cacheline into the WT cache
        :return: cost (always 0)
        """
        at = self._at(at)
        line = addr // CACHELINE_BYTES
        self._wt[cpu][line] = self.memory.line_snapshot(line, at)
        self._prefetched[cpu][line] = at
        self.counters["prefetches"] += 1
        return 0

    # local (coherent) accesses

    def ipu_access(self, node_id, nbytes: int, pte: PteType = PteType.WB) -> int:
        """
        Charges an IPU core for touching SoC memory through its own mapping
        :return: cost
        """
        if pte is PteType.WB:
            cost = ceil_div(nbytes, CACHELINE_BYTES) * self.latency.ipu_wb_line_ns
        else:
            cost = ceil_div(nbytes, WORD_BYTES) * self.latency.ipu_uc_word_ns
        return self.nodes[node_id].charge(cost, "local")

    def host_local_access(self, node_id, nbytes: int) -> int:
        cost = ceil_div(nbytes, CACHELINE_BYTES) * self.latency.host_local_line_ns
        return self.nodes[node_id].charge(cost, "local")

    # interrupts

    def register_irq_handler(self, cpu: int, handler: callable):
        if cpu not in self._host_cpus:
            raise BadVector("No online host cpu {}".format(cpu))
        if cpu in self._irq_handlers:
            raise AlreadyRegistered("An interrupt handler is already registered for cpu {}".format(cpu))
        self._irq_handlers[cpu] = handler

    def add_coherence_lines(self, cpu: int, addrs: [int]):
        """
        Registers lines that are flushed from the WT cache of a CPU whenever it takes an interrupt
        """
        self._coherence_lines[cpu].update(addr // CACHELINE_BYTES for addr in addrs)

    def send_msix(self, sender, vector: int, at: int = None) -> SimEvent:
        """
        Sends an interrupt to a host CPU
        :param sender: sending node
        :param vector: target host cpu
        :param at: send start time
        :return: the arrival event
        """
        if vector not in self._host_cpus:
            raise BadVector("No online host cpu {}".format(vector))
        at = self._at(at)
        self.nodes[sender].charge(self.latency.msix_send_ns, "msix")
        arrival = at + self.latency.msix_send_ns + self.latency.bus_transit_ns
        self.counters["msix_sent"] += 1
        return self.sim.call_at(arrival, vector, "msix", self._deliver_msix, vector, at)

    def _deliver_msix(self, cpu: int, sent_at: int):
        handler = self._irq_handlers.get(cpu)
        if handler is None:
            self.counters["msix_dropped"] += 1
            LOGGER.debug("Dropped interrupt for cpu {} sent at {} ns".format(cpu, sent_at))
            return
        self.counters["msix_delivered"] += 1
        handler(cpu, self.sim.now())

    def interrupt_entry(self, cpu: int, at: int) -> int:
        """
        Charges interrupt entry on a host CPU: receive cost, WC drain and software coherence flushes
        :return: cost
        """
        node = self.nodes[cpu]
        cost = node.charge(self.latency.msix_receive_ns, "msix")
        cost += node.charge(self._drain_wc(cpu, at + cost), "mmio")
        for line in sorted(self._coherence_lines[cpu]):
            cost += self.clflush(cpu, line * CACHELINE_BYTES, at + cost)
        return cost

    # DMA

    def dma_transfer(self, direction: Direction, length: int, initiator, at: int = None, writes: [tuple] = (),
                     on_complete: callable = None) -> SimEvent:
        """
        Starts a DMA transfer
        :param direction: transfer direction
        :param length: number of bytes
        :param initiator: node that programs the engine
        :param at: start time
        :param writes: (addr, value) pairs applied atomically at completion
        :param on_complete: callable invoked with the completion time
        :return: the completion event
        """
        if length <= 0:
            raise ZeroLength("DMA transfer length must be positive: {}".format(length))
        at = self._at(at)
        self.nodes[initiator].charge(self.latency.dma_setup_ns, "dma")
        done = at + self.dma_duration(length)
        self.counters["dma_transfers"] += 1
        self.counters["dma_bytes"] += length
        return self.sim.call_at(done, initiator, "dma", self._complete_dma, list(writes), on_complete, direction)

    def dma_duration(self, length: int) -> int:
        return self.latency.dma_setup_ns + ceil_div(length, CACHELINE_BYTES) * self.latency.dma_per_cacheline_ns

    def _complete_dma(self, writes: [tuple], on_complete: callable, direction: Direction):
        done = self.sim.now()
        for addr, value in writes:
            self.memory.store(addr, value, done)
        if on_complete is not None:
            on_complete(done)
