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
Memory tiering: a Thompson sampling agent classifying 256 KiB batches as hot or cold from
harvested access bits, the host shim owning page tiers and access bits, and a driver that
replays an access pattern over several migration epochs.
"""
import enum
import logging
import math
import struct
from collections import Counter, namedtuple
from dataclasses import dataclass, field

import numpy as np

from splitsim.const import NS_PER_MS, PAGES_PER_BATCH
from splitsim.errors import BadConfig
from splitsim.fabric import Fabric, LatencyModel, Side, Simulator
from splitsim.wave_api import CustomCall, Enclave, EnclaveSpec, WaveRuntime
from splitsim.workloads_metrics import rng_for

LOGGER = logging.getLogger(__name__)

SUBSYSTEM = "memtier"
OP_HARVEST = 1
OP_MADVISE = 2

ADVICE_WILLNEED = 0
ADVICE_PAGEOUT = 1

# 300 ms is left out, it scans too aggressively
LADDER_NS = tuple(int(ms * NS_PER_MS) for ms in (600, 1_200, 2_400, 4_800, 9_600))

_COUNT = struct.Struct("<I")
_ADVICE = struct.Struct("<B")
_WORD = struct.Struct("<Q")


class Tier(enum.Enum):
    FAST = "FAST"
    SLOW = "SLOW"


@dataclass
class Batch:
    batch_id: int
    tier: Tier = Tier.FAST
    access_bits: int = 0
    faults: int = 0


@dataclass
class BetaState:
    alpha: float = 1.0
    beta: float = 1.0
    scan_period_idx: int = 0
    next_scan_due: int = 0
    scans: int = 0


@dataclass(frozen=True)
class LoopCostModel:
    """
    Scan loop wall time as a serial part plus a part divided across IPU cpus
    """
    serial_ms: float
    parallel_ms: float

    def duration_ns(self, parallelism: int) -> int:
        if parallelism <= 0:
            raise BadConfig("Parallelism must be positive: {}".format(parallelism))
        return int(round((self.serial_ms + self.parallel_ms / parallelism) * NS_PER_MS))


LOOP_PROFILES = {
    "offload": LoopCostModel(320.4, 697.6),
    "onhost": LoopCostModel(288.1, 334.9),
}


def ladder_slot(draw: float) -> int:
    """
    Maps a Thompson draw to a scan period, a higher draw scans more often
    """
    return min(len(LADDER_NS) - 1, int(math.floor((1.0 - draw) * len(LADDER_NS))))


def pack_ids(batch_ids: [int]) -> bytes:
    return _COUNT.pack(len(batch_ids)) + b"".join(_WORD.pack(b) for b in batch_ids)


def unpack_ids(data: bytes, offset: int = 0) -> [int]:
    (count,) = _COUNT.unpack_from(data, offset)
    offset += _COUNT.size
    return [_WORD.unpack_from(data, offset + i * _WORD.size)[0] for i in range(count)]


class PagedMemory:
    """
    Host shim: page tiers and access bits of every batch
    """

    def __init__(self, batches: int, fault_penalty_ns: int = 50_000, tlb_flush_ns: int = 200):
        if batches <= 0:
            raise BadConfig("At least one batch is required")
        self.batches = [Batch(i) for i in range(batches)]
        self.fault_penalty_ns = fault_penalty_ns
        self.tlb_flush_ns = tlb_flush_ns
        self.epoch_faults = 0
        self.counters = Counter()

    @property
    def pages(self) -> int:
        return len(self.batches) * PAGES_PER_BATCH

    def batch_of(self, page: int) -> Batch:
        if not 0 <= page < self.pages:
            raise BadConfig("Page {} is outside of {} pages".format(page, self.pages))
        return self.batches[page // PAGES_PER_BATCH]

    def memory_touch(self, page: int, tid: int = None) -> int:
        """
        Sets the access bit of a page, a SLOW page faults its whole batch back to FAST
        :return: latency charged to the touching thread
        """
        batch = self.batch_of(page)
        cost = 0
        if batch.tier is Tier.SLOW:
            batch.tier = Tier.FAST
            batch.faults += 1
            self.epoch_faults += 1
            self.counters["faults"] += 1
            cost = self.fault_penalty_ns
        batch.access_bits |= 1 << (page % PAGES_PER_BATCH)
        return cost

    def harvest(self, args: bytes) -> bytes:
        """
        Returns and clears the access bits of the requested batches.
        The reply carries the cleared bit count and the host time spent flushing their TLB entries.
        """
        batch_ids = unpack_ids(args)
        bitmaps = []
        cleared = 0
        for batch_id in batch_ids:
            batch = self.batches[batch_id]
            bitmaps.append(batch.access_bits)
            cleared += bin(batch.access_bits).count("1")
            batch.access_bits = 0
        flush_ns = cleared * self.tlb_flush_ns
        self.counters["cleared_bits"] += cleared
        self.counters["tlb_flush_ns"] += flush_ns
        return _WORD.pack(cleared) + _WORD.pack(flush_ns) + b"".join(_WORD.pack(b) for b in bitmaps)

    def madvise(self, args: bytes) -> bytes:
        (advice,) = _ADVICE.unpack_from(args)
        batch_ids = unpack_ids(args, _ADVICE.size)
        if advice not in (ADVICE_WILLNEED, ADVICE_PAGEOUT):
            raise BadConfig("Unknown advice {}".format(advice))
        tier = Tier.FAST if advice == ADVICE_WILLNEED else Tier.SLOW
        applied = 0
        for batch_id in batch_ids:
            batch = self.batches[batch_id]
            if batch.tier is not tier:
                batch.tier = tier
                applied += 1
        self.counters["migrated"] += applied
        return _COUNT.pack(applied)

    def reset_epoch(self):
        self.epoch_faults = 0

    def fast_fraction(self) -> float:
        return sum(1 for b in self.batches if b.tier is Tier.FAST) / len(self.batches)

    def register(self, wave: WaveRuntime):
        wave.register_custom_handler(SUBSYSTEM, OP_HARVEST, self.harvest)
        wave.register_custom_handler(SUBSYSTEM, OP_MADVISE, self.madvise)


ScanResult = namedtuple("ScanResult", ["at", "due", "accessed", "cleared", "duration"])
EpochRecord = namedtuple("EpochRecord", ["index", "faults", "fast_fraction", "promoted", "demoted", "mean_cleared"])


@dataclass(frozen=True)
class TieringConfig:
    theta: float = 0.5
    prior_alpha: float = 1.0
    prior_beta: float = 1.0
    parallelism: int = 16
    loop_profile: str = "offload"
    seed: int = 1

    def __post_init__(self):
        if self.loop_profile not in LOOP_PROFILES:
            raise BadConfig("Unknown loop profile '{}', expected one of: {}".format(
                self.loop_profile, ", ".join(LOOP_PROFILES)))


class TieringAgent:
    """
    Thompson sampling over per-batch Beta posteriors of "accessed since the last scan"
    """

    def __init__(self, wave: WaveRuntime, enclave: Enclave, node_id, batches: int, config: TieringConfig):
        self.wave = wave
        self.enclave = enclave
        self.node_id = node_id
        self.config = config
        self.loop_cost = LOOP_PROFILES[config.loop_profile]
        self.states = [BetaState(config.prior_alpha, config.prior_beta) for _ in range(batches)]
        self._rngs = [rng_for(config.seed, batch_id) for batch_id in range(batches)]

    def draw(self, batch_id: int) -> float:
        state = self.states[batch_id]
        return float(self._rngs[batch_id].beta(state.alpha, state.beta))

    def due_batches(self, at: int) -> [int]:
        return [i for i, s in enumerate(self.states) if s.next_scan_due <= at]

    def scan_iteration(self, at: int) -> ScanResult:
        """
        Harvests the access bits of every due batch, updates their posteriors and picks their next scan period
        """
        due = self.due_batches(at)
        if len(due) <= 0:
            return ScanResult(at, 0, 0, 0, 0)
        call = CustomCall(SUBSYSTEM, OP_HARVEST, pack_ids(due))
        reply, cost = self.wave.custom_call(self.enclave, call, self.node_id, at)
        cleared, flush_ns = _WORD.unpack_from(reply)[0], _WORD.unpack_from(reply, _WORD.size)[0]

        accessed = 0
        for i, batch_id in enumerate(due):
            (bitmap,) = _WORD.unpack_from(reply, _WORD.size * (i + 2))
            state = self.states[batch_id]
            if bitmap != 0:
                state.alpha += 1
                accessed += 1
            else:
                state.beta += 1
            state.scans += 1
            state.scan_period_idx = ladder_slot(self.draw(batch_id))
            state.next_scan_due = at + LADDER_NS[state.scan_period_idx]

        # the reply waits for the host side clears
        duration = self.loop_cost.duration_ns(self.config.parallelism) + cost + flush_ns
        return ScanResult(at, len(due), accessed, cleared, duration)

    def epoch_classify_and_migrate(self, at: int) -> (list, list):
        """
        Classifies every batch with a fresh draw and sends the resulting migrations to the host
        :return: (promoted batch ids, demoted batch ids)
        """
        hot = [self.draw(i) >= self.config.theta for i in range(len(self.states))]
        promote = [i for i, h in enumerate(hot) if h]
        demote = [i for i, h in enumerate(hot) if not h]
        applied = []
        for advice, batch_ids in ((ADVICE_WILLNEED, promote), (ADVICE_PAGEOUT, demote)):
            if len(batch_ids) <= 0:
                applied.append(0)
                continue
            args = _ADVICE.pack(advice) + pack_ids(batch_ids)
            reply, _ = self.wave.custom_call(self.enclave, CustomCall(SUBSYSTEM, OP_MADVISE, args), self.node_id, at)
            applied.append(_COUNT.unpack(reply)[0])
        LOGGER.debug("Epoch migration at {} ns: {} promoted, {} demoted".format(at, applied[0], applied[1]))
        return promote, demote


class AccessPattern:
    """
    Synthetic access generator: a fixed hot set, each hot batch touches a fixed page subset
    in every window it is active, with probability falling off with its zipf rank
    """

    def __init__(self, batches: int, hot_fraction: float = 0.2, pages_per_touch: int = 8, zipf_s: float = 0.0,
                 seed: int = 1):
        rng = rng_for(seed, 0xACCE55)
        hot_count = int(round(batches * hot_fraction))
        self.hot = sorted(int(b) for b in rng.permutation(batches)[:hot_count])
        self.probabilities = {b: (rank + 1) ** -zipf_s for rank, b in enumerate(self.hot)}
        self.pages = {b: sorted(int(p) for p in rng.choice(PAGES_PER_BATCH, size=pages_per_touch, replace=False))
                      for b in self.hot}
        self._rng = rng_for(seed, 0x70C4)

    def window(self, start: int) -> [int]:
        """
        :return: pages touched in the window starting at the given time
        """
        touched = []
        for batch_id in self.hot:
            p = self.probabilities[batch_id]
            if p < 1.0 and self._rng.random() >= p:
                continue
            base = batch_id * PAGES_PER_BATCH
            touched.extend(base + page for page in self.pages[batch_id])
        return touched


class TraceAccessPattern:
    """
    Replays "time_ns page_id" lines
    """

    def __init__(self, path: str):
        records = []
        with open(path) as f:
            for number, line in enumerate(f, start=1):
                line = line.strip()
                if len(line) <= 0 or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise BadConfig("{}:{}: expected 'time_ns page_id', got '{}'".format(path, number, line))
                records.append((int(parts[0]), int(parts[1])))
        records.sort()
        self.records = records
        self._next = 0

    def until(self, end: int) -> [int]:
        """
        :return: pages touched before the given time, each record is returned once
        """
        pages = []
        while self._next < len(self.records) and self.records[self._next][0] < end:
            pages.append(self.records[self._next][1])
            self._next += 1
        return pages


@dataclass
class TieringResult:
    scans: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    loop_duration_ns: int = 0
    touch_cost_ns: int = 0


class TieringSimulation:
    """
    Steps an access pattern, scan iterations on the shortest ladder period and epoch migrations
    """

    def __init__(self, batches: int = 512, epochs: int = 6, epoch_ns: int = 38_400_000_000,
                 window_ns: int = 100_000_000, config: TieringConfig = TieringConfig(), pattern=None,
                 fault_penalty_ns: int = 50_000, tlb_flush_ns: int = 200):
        if epoch_ns % LADDER_NS[0] != 0:
            raise BadConfig("The epoch ({} ns) must be a multiple of the shortest scan period".format(epoch_ns))
        self.epochs = epochs
        self.epoch_ns = epoch_ns
        self.window_ns = window_ns
        self.config = config

        self.sim = Simulator()
        self.fabric = Fabric(self.sim, LatencyModel())
        self.fabric.add_host_cpu(0)
        self.fabric.add_node("tier-agent", Side.IPU)
        self.wave = WaveRuntime(self.fabric)
        self.enclave = self.wave.start_wave([EnclaveSpec(1, [0], subsystem=SUBSYSTEM, agent_node="tier-agent")])[0]
        self.memory = PagedMemory(batches, fault_penalty_ns, tlb_flush_ns)
        self.memory.register(self.wave)
        self.agent = TieringAgent(self.wave, self.enclave, "tier-agent", batches, config)
        self.pattern = pattern if pattern is not None else AccessPattern(batches, seed=config.seed)

    def _touch(self, pages: [int]) -> int:
        return sum(self.memory.memory_touch(page) for page in pages)

    def _pages_until(self, window_start: int) -> [int]:
        if isinstance(self.pattern, TraceAccessPattern):
            return self.pattern.until(window_start + self.window_ns)
        return self.pattern.window(window_start)

    def run(self) -> TieringResult:
        result = TieringResult()
        result.loop_duration_ns = self.agent.loop_cost.duration_ns(self.config.parallelism)

        # initial load touches everything
        for page in range(self.memory.pages):
            self.memory.memory_touch(page)

        grid = LADDER_NS[0]
        busy_until = 0
        next_window = 0
        end = self.epochs * self.epoch_ns
        t = 0
        while t < end:
            while next_window <= t:
                result.touch_cost_ns += self._touch(self._pages_until(next_window))
                next_window += self.window_ns
            if busy_until <= t:
                scan = self.agent.scan_iteration(t)
                result.scans.append(scan)
                busy_until = t + scan.duration
            t += grid
            if t % self.epoch_ns == 0:
                index = t // self.epoch_ns - 1
                faults = self.memory.epoch_faults
                start = index * self.epoch_ns
                cleared = [s.cleared for s in result.scans if start <= s.at < t]
                promote, demote = self.agent.epoch_classify_and_migrate(t)
                self.memory.reset_epoch()
                record = EpochRecord(index, faults, self.memory.fast_fraction(), len(promote), len(demote),
                                     float(np.mean(cleared)) if len(cleared) > 0 else 0.0)
                result.epochs.append(record)
                LOGGER.info("Epoch {}: {} faults, FAST fraction {:.3f}".format(
                    index, faults, record.fast_fraction))
        return result
