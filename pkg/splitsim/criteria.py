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
Acceptance checks run by the verify command. Each check compares ratios, orderings
or audit counters of simulated runs against the expected shape.
"""
import filecmp
import logging
import os
import tempfile
from collections import OrderedDict, deque, namedtuple

import numpy as np

from splitsim import CRITERIA_LIST
from splitsim.config import Settings, find_scenario
from splitsim.const import KEY_FUNCTION, KEY_NUMBER, KEY_TITLE
from splitsim.decorator import criterion
from splitsim.errors import SimulationError
from splitsim.experiment import run_point, saturation, sweep, switch_path, tiering, primary_kind
from splitsim.fabric import Fabric, PteType, Side, Simulator
from splitsim.host_kernel import SwitchCostModel
from splitsim.memtier import LOOP_PROFILES
from splitsim.queues import Backing, LocalPort, MessageQueue, MmioPort
from splitsim.wave_api import SwitchTier
from splitsim.workloads_metrics import rng_for, write_metrics

LOGGER = logging.getLogger(__name__)

CriterionResult = namedtuple("CriterionResult", ["passed", "detail"])

# measured gains of the cumulative optimization tiers
ABLATION_GAINS = (1.02, 0.31, 0.32)
ABLATION_TOLERANCE = 0.25
WAVE16_GAIN = 0.057
WAVE16_TOLERANCE = 0.03
ONHOST_MAX_GAIN = 0.03
TAIL_IMPROVEMENT = 10.0
SHINJUKU_LOAD = 0.5
MQ_GAIN = 0.208
MQ_TOLERANCE = 0.10
RPC_MAX_GAP = 0.05
COLOCATION_TOLERANCE = 0.10
HOT_FRACTION_TOLERANCE = 0.05
LOOP_RATIO = 364 / 1_018
LOOP_RATIO_TOLERANCE = 0.15
SWITCH_TOLERANCE = 0.10
UPI_MAX_DELTA = 0.05
ORACLE_SCHEDULES = 100_000
ORACLE_OPERATIONS = 32
ORACLE_LAYOUTS = ((Backing.MMIO, PteType.UC), (Backing.MMIO, PteType.WC), (Backing.DMA, PteType.WB))


class Verification:
    """
    Loads scenario files and caches sweeps shared by several checks
    """

    def __init__(self, scenario_dir: str, overrides: [str] = None, seed: int = None, jobs: int = 1):
        self.scenario_dir = scenario_dir
        self.overrides = overrides or []
        self.seed = seed
        self.jobs = jobs
        self._sweeps = {}

    def settings(self, name: str, **changes) -> Settings:
        settings = Settings.load(find_scenario(name, self.scenario_dir), self.overrides, self.seed)
        return settings.replace(**changes) if len(changes) > 0 else settings

    def sweep(self, name: str, **changes) -> list:
        key = (name, tuple(sorted(changes.items())))
        if key not in self._sweeps:
            LOGGER.info("Sweeping {} {}".format(name, dict(changes) if len(changes) > 0 else ""))
            self._sweeps[key] = sweep(self.settings(name, **changes), jobs=self.jobs)
        return self._sweeps[key]

    def saturation(self, name: str, **changes) -> float or None:
        return saturation(self.settings(name, **changes), self.sweep(name, **changes))


def _gain(value: float, reference: float) -> float:
    return value / reference - 1.0


def _fmt(value: float or None) -> str:
    return "n/a" if value is None else "{:.0f}".format(value)


def _missing(**saturations) -> CriterionResult or None:
    missing = [name for name, value in saturations.items() if value is None]
    if len(missing) > 0:
        return CriterionResult(False, "no saturation found for: {}".format(", ".join(missing)))
    return None


@criterion(1, "Fabric costs equal the configured defaults")
def fabric_fidelity(verification: Verification) -> CriterionResult:
    latency = verification.settings("fifo_wave16").latency_model()
    expected = OrderedDict([("mmio_read_ns", 750), ("mmio_write_ns", 50), ("msix_send_ns", 340),
                            ("msix_receive_ns", 350), ("msix_e2e_ns", 1_600)])

    sim = Simulator()
    fabric = Fabric(sim, latency)
    fabric.add_host_cpu(0)
    fabric.add_node("ipu", Side.IPU)
    fabric.memory.map_region("fidelity", 0x1000, 4096, Side.IPU)
    received = []
    fabric.register_irq_handler(0, lambda cpu, at: received.append(at + fabric.interrupt_entry(cpu, at)))
    _, read = fabric.mmio_read(0, 0x1000, pte=PteType.UC, at=0)
    write = fabric.mmio_write(0, 0x1040, 1, pte=PteType.UC, at=0)
    fabric.send_msix("ipu", 0, at=0)
    sim.run()
    measured = OrderedDict([("mmio_read_ns", read), ("mmio_write_ns", write),
                            ("msix_send_ns", latency.msix_send_ns), ("msix_receive_ns", latency.msix_receive_ns),
                            ("msix_e2e_ns", received[0] if len(received) > 0 else None)])
    wrong = ["{} {} != {}".format(k, measured[k], v) for k, v in expected.items()
             if getattr(latency, k) != v or measured[k] != v]
    if len(wrong) > 0:
        return CriterionResult(False, ", ".join(wrong))
    return CriterionResult(True, ", ".join("{}={}".format(k, v) for k, v in measured.items()))


@criterion(2, "Voluntary switch critical path per optimization tier")
def switch_tiers(verification: Verification) -> CriterionResult:
    medians = switch_path(verification.settings("ablation"))
    parts = []
    passed = True
    for tier, median in medians.items():
        target = SwitchCostModel.TARGETS[tier]
        ok = abs(median - target) <= SWITCH_TOLERANCE * target
        passed = passed and ok
        parts.append("{} {:.0f}/{} ns".format(tier.value, median, target))
    return CriterionResult(passed, ", ".join(parts))


@criterion(3, "Saturation increases with every optimization tier")
def ablation_monotonicity(verification: Verification) -> CriterionResult:
    values = [verification.saturation("ablation", **{"sched.tier": tier.value}) for tier in SwitchTier]
    missing = _missing(**{tier.value: v for tier, v in zip(SwitchTier, values)})
    if missing is not None:
        return missing
    gains = [_gain(b, a) for a, b in zip(values, values[1:])]
    increasing = all(g > 0 for g in gains)
    close = all(abs(g - expected) <= ABLATION_TOLERANCE for g, expected in zip(gains, ABLATION_GAINS))
    detail = "saturation {}, gains {}".format(
        " < ".join(_fmt(v) for v in values), ", ".join("{:+.0%}".format(g) for g in gains))
    return CriterionResult(increasing and close, detail)


@criterion(4, "Wave-15 < On-Host < Wave-16 FIFO saturation")
def placement_ordering(verification: Verification) -> CriterionResult:
    wave15 = verification.saturation("fifo_wave15")
    onhost = verification.saturation("fifo_onhost")
    wave16 = verification.saturation("fifo_wave16")
    missing = _missing(wave15=wave15, onhost=onhost, wave16=wave16)
    if missing is not None:
        return missing
    wave16_gain = _gain(wave16, wave15)
    onhost_gain = _gain(onhost, wave15)
    passed = wave15 < onhost < wave16 \
        and abs(wave16_gain - WAVE16_GAIN) <= WAVE16_TOLERANCE \
        and onhost_gain <= ONHOST_MAX_GAIN
    return CriterionResult(passed, "wave15 {}, onhost {} ({:+.1%}), wave16 {} ({:+.1%})".format(
        _fmt(wave15), _fmt(onhost), onhost_gain, _fmt(wave16), wave16_gain))


@criterion(5, "Preemption keeps short requests fast behind long ones")
def shinjuku_tail(verification: Verification) -> CriterionResult:
    saturation = verification.saturation("shinjuku_sq")
    missing = _missing(shinjuku_sq=saturation)
    if missing is not None:
        return missing
    shinjuku = verification.settings("shinjuku_sq")
    fifo = shinjuku.replace(**{"sched.policy": "fifo"})
    rate = SHINJUKU_LOAD * saturation
    kind = primary_kind(shinjuku)
    preemptive = run_point(shinjuku, rate)
    baseline = run_point(fifo, rate)
    p99_shinjuku, p99_fifo = preemptive.p99(kind), baseline.p99(kind)
    if p99_shinjuku is None or p99_fifo is None:
        return CriterionResult(False, "no {} samples at {:.0f}/s".format(kind, rate))
    passed = p99_fifo >= TAIL_IMPROVEMENT * p99_shinjuku and preemptive.preempt_bound_violations == 0
    return CriterionResult(passed, "{} p99 at {:.0f}/s: fifo {} ns, shinjuku {} ns, {} slice overruns".format(
        kind, rate, p99_fifo, p99_shinjuku, preemptive.preempt_bound_violations))


@criterion(6, "Multi-queue beats single queue, on-host scheduler saturates lowest")
def rpc_policies(verification: Verification) -> CriterionResult:
    scenarios = ("rpc_offload_all", "rpc_onhost_all", "rpc_onhost_sched")
    values = OrderedDict()
    for policy in ("shinjuku_sq", "shinjuku_mq"):
        for name in scenarios:
            values[(policy, name)] = verification.saturation(name, **{"sched.policy": policy})
    missing = _missing(**{"{}/{}".format(*k): v for k, v in values.items()})
    if missing is not None:
        return missing
    mq_gain = _gain(values[("shinjuku_mq", "rpc_offload_all")], values[("shinjuku_sq", "rpc_offload_all")])
    lowest = all(values[(policy, "rpc_onhost_sched")] < min(values[(policy, "rpc_offload_all")],
                                                           values[(policy, "rpc_onhost_all")])
                 for policy in ("shinjuku_sq", "shinjuku_mq"))
    passed = abs(mq_gain - MQ_GAIN) <= MQ_TOLERANCE and lowest
    detail = "MQ over SQ {:+.1%}; ".format(mq_gain) + ", ".join(
        "{}/{} {}".format(policy, name, _fmt(v)) for (policy, name), v in values.items())
    return CriterionResult(passed, detail)


@criterion(7, "Offload-All keeps up with OnHost-All using fewer host cpus")
def rpc_offload(verification: Verification) -> CriterionResult:
    offload = verification.saturation("rpc_offload_all")
    onhost = verification.saturation("rpc_onhost_all")
    missing = _missing(offload_all=offload, onhost_all=onhost)
    if missing is not None:
        return missing
    gap = abs(_gain(offload, onhost))
    return CriterionResult(gap <= RPC_MAX_GAP, "offload_all {}, onhost_all {}, gap {:.1%}".format(
        _fmt(offload), _fmt(onhost), gap))


@criterion(8, "Co-located batch work leaves latency intact and yields cores under load")
def colocation(verification: Verification) -> CriterionResult:
    colocated = verification.sweep("shenango")
    alone = verification.sweep("shenango", **{"sched.policy": "shinjuku_sq"})
    settings = verification.settings("shenango")
    kind = primary_kind(settings)
    limit = saturation(settings.replace(**{"sched.policy": "shinjuku_sq"}), alone)

    deviations = []
    for with_batch, without in zip(colocated, alone):
        if limit is not None and with_batch.rate >= limit:
            continue
        a, b = with_batch.p99(kind), without.p99(kind)
        if a is None or b is None:
            continue
        deviations.append(abs(a - b) / b)
    idle = run_point(settings, 0).batch_share
    shares = [idle] + [r.batch_share for r in colocated]
    monotone = all(b <= a + 1e-9 for a, b in zip(shares, shares[1:]))
    worst = max(deviations) if len(deviations) > 0 else 0.0
    passed = len(deviations) > 0 and worst <= COLOCATION_TOLERANCE and monotone \
        and idle >= 0.9 and shares[-1] <= 0.1
    return CriterionResult(passed, "worst p99 deviation {:.1%} over {} points, batch share {}".format(
        worst, len(deviations), " > ".join("{:.2f}".format(s) for s in shares)))


def _non_increasing(values: list) -> bool:
    return all(b <= a for a, b in zip(values, values[1:]))


@criterion(9, "Tiering converges onto the hot set")
def tiering_convergence(verification: Verification) -> CriterionResult:
    settings = verification.settings("memtier_p16")
    _, result = tiering(settings)
    settled = result.epochs[2:]
    faults = [e.faults for e in settled]
    cleared = [e.mean_cleared for e in settled]
    fast = result.epochs[-1].fast_fraction
    hot = settings["memtier.hot_fraction"]
    offload = LOOP_PROFILES["offload"]
    ratio = offload.duration_ns(16) / offload.duration_ns(1)
    passed = _non_increasing(faults) and _non_increasing(cleared) \
        and abs(fast - hot) <= HOT_FRACTION_TOLERANCE \
        and abs(ratio - LOOP_RATIO) <= LOOP_RATIO_TOLERANCE * LOOP_RATIO
    return CriterionResult(passed, "faults {}, FAST fraction {:.3f}, loop ratio {:.3f}".format(
        faults, fast, ratio))


def oracle_schedule(backing: Backing, write_pte: PteType, operations: int, rng: np.random.Generator,
                    queue_type: type = MessageQueue) -> int:
    """
    Drives one host produced ring with random enqueues and polls next to a deque.
    Gaps between operations are drawn up to twice the bus transit time, so polls often
    run before the last entry is visible; an empty poll only counts when the head was visible.
    :param backing: how the IPU consumer reaches the entries
    :param write_pte: mapping of the host producer, ignored for DMA backed rings
    :return: number of mismatches
    """
    sim = Simulator()
    fabric = Fabric(sim, Settings().latency_model())
    fabric.add_host_cpu(0)
    fabric.add_node("consumer", Side.IPU)
    queue = queue_type(fabric, "oracle", 0x1000_0000, capacity=8, backing=backing, dma_batch=4)
    if backing is Backing.DMA:
        producer = LocalPort(fabric, 0)
    else:
        producer = MmioPort(fabric, 0, write_pte=write_pte)
    consumer = LocalPort(fabric, "consumer")

    # (entry, visible_at) in enqueue order
    oracle = deque()
    free = {"producer": 0, "consumer": 0}
    gaps = rng.integers(0, 2 * fabric.latency.bus_transit_ns, size=operations)
    mismatches = 0
    t = 0
    next_item = 0
    for enqueue, gap in zip(rng.random(operations) < 0.5, gaps):
        actor = "producer" if enqueue else "consumer"
        t = max(t + int(gap), free[actor])
        sim.run(until=t)
        if enqueue:
            if len(queue) >= queue.capacity:
                continue
            result = queue.enqueue(next_item, producer, t)
            oracle.append((next_item, result.visible_at))
            next_item += 1
        else:
            result = queue.poll(consumer, t)
            if result.entry is not None:
                if len(oracle) <= 0 or result.entry != oracle[0][0]:
                    mismatches += 1
                else:
                    oracle.popleft()
            elif len(oracle) > 0 and oracle[0][1] <= t and queue.next_visible_at() is not None:
                mismatches += 1
        free[actor] = t + result.cost

    sim.run()
    at = max([sim.now(), t] + [visible for _, visible in oracle])
    rest, _ = queue.drain(consumer, at)
    mismatches += int(rest != [entry for entry, _ in oracle])
    return mismatches


def queue_oracle(schedules: int, operations: int, seed: int) -> int:
    """
    Runs seeded oracle schedules round robin over MMIO rings with UC and WC producers and DMA backed rings
    :return: number of mismatches over all schedules
    """
    mismatches = 0
    for i in range(schedules):
        backing, write_pte = ORACLE_LAYOUTS[i % len(ORACLE_LAYOUTS)]
        found = oracle_schedule(backing, write_pte, operations, rng_for(seed, 0xF1F0, i))
        if found > 0:
            LOGGER.warning("Oracle schedule {} ({} ring, {} producer) found {} mismatches".format(
                i, backing.value, write_pte.value, found))
        mismatches += found
    return mismatches


@criterion(10, "Queue ordering, transaction audit, conservation, determinism and fallback liveness")
def property_suites(verification: Verification) -> CriterionResult:
    base = verification.settings("shinjuku_sq")
    rate = float(np.median(base["experiment.rates"]))
    mismatches = queue_oracle(ORACLE_SCHEDULES, ORACLE_OPERATIONS, base["experiment.seed"])

    first = run_point(base, rate)
    second = run_point(base, rate)
    with tempfile.TemporaryDirectory() as tmp:
        a, b = os.path.join(tmp, "a.csv"), os.path.join(tmp, "b.csv")
        write_metrics(a, [first.row()])
        write_metrics(b, [second.row()])
        deterministic = filecmp.cmp(a, b, shallow=False)

    stalled = run_point(base.replace(**{"sched.stall_at_ms": 5.0, "watchdog.restart_after_ms": 10.0}), rate)
    live = stalled.drained and stalled.counters["agent_kills"] >= 1 and stalled.counters["agent_restarts"] >= 1 \
        and stalled.counters["restart_view_mismatches"] == 0

    checks = OrderedDict([
        ("queue oracle", mismatches == 0),
        ("transaction audit", first.illegal_transitions == 0 and stalled.illegal_transitions == 0),
        ("conservation", first.drained and second.drained),
        ("determinism", deterministic),
        ("fallback liveness", live),
    ])
    failed = [name for name, ok in checks.items() if not ok]
    return CriterionResult(len(failed) <= 0, "failed: {}".format(", ".join(failed)) if failed
                           else "{} oracle schedules, {} kills, {} restarts".format(
                               ORACLE_SCHEDULES, stalled.counters["agent_kills"],
                               stalled.counters["agent_restarts"]))


@criterion(11, "A faster interconnect barely moves saturation")
def upi_profile(verification: Verification) -> CriterionResult:
    upi = verification.saturation("upi_profile")
    reference = verification.saturation("upi_profile", **{"fabric.profile": "mount-evans"})
    missing = _missing(upi=upi, mount_evans=reference)
    if missing is not None:
        return missing
    delta = _gain(upi, reference)
    return CriterionResult(abs(delta) < UPI_MAX_DELTA, "upi {}, mount-evans {}, delta {:+.1%}".format(
        _fmt(upi), _fmt(reference), delta))


def run_criteria(verification: Verification, numbers: [int] = None) -> list:
    """
    Runs acceptance checks in order
    :param numbers: subset to run, all if not given
    :return: [(number, title, CriterionResult)]
    """
    results = []
    for entry in CRITERIA_LIST:
        if numbers and entry[KEY_NUMBER] not in numbers:
            continue
        LOGGER.info("Checking criterion {}: {}".format(entry[KEY_NUMBER], entry[KEY_TITLE]))
        try:
            result = entry[KEY_FUNCTION](verification)
        except SimulationError as ex:
            LOGGER.exception("Criterion {} broke an invariant".format(entry[KEY_NUMBER]))
            result = CriterionResult(False, "{}: {}".format(type(ex).__name__, ex))
        results.append((entry[KEY_NUMBER], entry[KEY_TITLE], result))
    return results
