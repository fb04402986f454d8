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
Composes fabric, runtime, host kernel, agent and workloads into runnable experiments.
"""
import heapq
import logging
import os
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from multiprocessing import Pool

import numpy as np

from splitsim.config import Settings
from splitsim.const import MANIFEST_FILE_NAME, METRICS_FILE_NAME, NS_PER_MS, NS_PER_S, TRACE_FILE_NAME
from splitsim.errors import NeverSaturates, NoSamples
from splitsim.fabric import Fabric, PteType, Side, Simulator
from splitsim.host_kernel import HostConfig, HostKernel, SwitchCostModel, Thread
from splitsim.memtier import AccessPattern, TieringConfig, TieringSimulation, TraceAccessPattern
from splitsim.queues import Backing, LocalPort, MmioPort
from splitsim.rpc_net import Client, RpcStack, find_rpc_scenario
from splitsim.sched_agents import PolicyConfig, PolicyKind, create_agent
from splitsim.wave_api import AgentCosts, EnclaveSpec, SwitchTier, WaveRuntime
from splitsim.workloads_metrics import LatencyRecorder, LoadSpec, SweepPoint, batch_share, find_saturation, \
    generate, write_manifest, write_metrics

LOGGER = logging.getLogger(__name__)

AGENT_NODE = "agent"
NET_NODE = "net"
BATCH_TID_BASE = 1 << 40


def _ms(value) -> int or None:
    return None if value is None else int(round(value * NS_PER_MS))


class ArrivalFeeder:
    """
    Schedules arrivals one at a time so the event queue never holds the whole stream
    """

    def __init__(self, sim: Simulator, arrivals, callback: callable):
        self.sim = sim
        self._arrivals = iter(arrivals)
        self._callback = callback
        self._schedule_next()

    def _schedule_next(self):
        arrival = next(self._arrivals, None)
        if arrival is not None:
            self.sim.call_at(arrival.time, NET_NODE, "arrival", self._fire, arrival)

    def _fire(self, arrival):
        self._callback(arrival)
        self._schedule_next()


class Deployment:
    """
    One simulated machine: host cpus, an enclave, its agent and optionally the RPC stack
    """

    def __init__(self, settings: Settings, workers: int = None, trace: callable = None):
        self.settings = settings
        self.tier = SwitchTier(settings["sched.tier"])
        self.rpc_scenario = None if settings["rpc.scenario"] == "none" else find_rpc_scenario(settings["rpc.scenario"])
        if self.rpc_scenario is not None:
            self.location = self.rpc_scenario.sched_location
            workers = self.rpc_scenario.worker_cpus if workers is None else workers
        else:
            self.location = Side.HOST if settings["sched.location"] == "host" else Side.IPU
            workers = settings["host.workers"] if workers is None else workers

        self.ipu_pte = PteType(settings.get("sched.ipu_pte", self.tier.ipu_pte.value))
        self.write_pte = PteType(settings.get("host.write_pte", self.tier.host_write_pte.value))
        self.read_pte = PteType(settings.get("host.read_pte", self.tier.host_read_pte.value))
        self.prestage = settings.get("sched.prestage", self.tier.prestage)
        self.prefetch = settings.get("host.prefetch", self.tier.prestage)
        self.kind = PolicyKind(settings["sched.policy"])
        backing = Backing(settings["queue.backing"])

        latency = settings.latency_model()
        self.sim = Simulator()
        self.fabric = Fabric(self.sim, latency)
        self.cpus = list(range(workers))
        for cpu in self.cpus:
            self.fabric.add_host_cpu(cpu)
        self.fabric.add_node(AGENT_NODE, self.location)
        self.fabric.add_node(NET_NODE, Side.HOST)
        self.wave = WaveRuntime(self.fabric)
        self.enclave = self.wave.start_wave([EnclaveSpec(
            0, self.cpus, agent_node=AGENT_NODE, agent_side=self.location,
            queue_capacity=settings["queue.capacity"], backing=backing,
            reserve_check=settings["queue.reserve_check"], reserve_batch=settings["queue.reserve_batch"],
            dma_batch=settings["queue.dma_batch"], deadline_ms=settings["watchdog.deadline"] / NS_PER_MS,
        )])[0]

        if self.location is Side.IPU:
            ports = {cpu: MmioPort(self.fabric, cpu, self.write_pte, self.read_pte) for cpu in self.cpus}
            net_port = MmioPort(self.fabric, NET_NODE, self.write_pte, self.read_pte)
            agent_port = LocalPort(self.fabric, AGENT_NODE, self.ipu_pte)
        else:
            ports = {cpu: LocalPort(self.fabric, cpu) for cpu in self.cpus}
            net_port = LocalPort(self.fabric, NET_NODE)
            agent_port = LocalPort(self.fabric, AGENT_NODE)
        msg_ports = None
        if backing is Backing.DMA:
            msg_ports = {cpu: LocalPort(self.fabric, cpu) for cpu in self.cpus}
            net_port = LocalPort(self.fabric, NET_NODE)

        switch_model = SwitchCostModel(settings["host.futex_block_ns"], settings["host.switch_ns"],
                                       settings["sched.loop_tick_ns"], settings["sched.loop_tick_uc_ns"])
        self.switch_model = switch_model
        restart = settings["watchdog.restart_after_ms"]
        self.kernel = HostKernel(self.sim, self.fabric, self.wave, self.enclave, HostConfig(
            futex_block_ns=settings["host.futex_block_ns"],
            switch_ns=switch_model.switch_ns(self.tier),
            prefetch=self.prefetch,
            prestage=self.prestage,
            fallback_tick_ns=settings["host.fallback_tick"],
            fallback_switch_ns=settings["host.fallback_switch_ns"],
            watchdog_deadline_ns=settings["watchdog.deadline"],
            watchdog_period_ns=settings["watchdog.period"],
            restart_after_ns=_ms(restart),
            slice_ns=settings["sched.slice"] if self.kind.preemptive else None,
            preempt_slack_ns=settings["host.preempt_slack"],
        ), ports, net_port=net_port, trace=trace, msg_ports=msg_ports)

        self.costs = AgentCosts.for_placement(self.location, self.ipu_pte, latency.msix_send_ns,
                                              settings["sched.loop_tick_ns"], settings["sched.loop_tick_uc_ns"],
                                              settings["sched.decision_ns"], settings["sched.slowdown"])
        policy = PolicyConfig(
            kind=self.kind,
            slice_ns=settings["sched.slice"],
            prestage=self.prestage,
            prestage_depth=settings["sched.prestage_depth"],
            grant_polls=settings["sched.shenango_grant_polls"],
            mq_starvation_ns=settings["sched.mq_starvation"],
            slo_classes=len(settings["workload.mix"]),
            stall_at=_ms(settings["sched.stall_at_ms"]),
        )
        self.agent = create_agent(policy, self.sim, self.wave, self.enclave, AGENT_NODE, self.costs,
                                  agent_port, agent_port)
        self.kernel.attach_agent(self.agent)

        self.rpc = None
        if self.rpc_scenario is not None:
            self.rpc = RpcStack(self.sim, self.fabric, self.wave, self.enclave, self.kernel, self.rpc_scenario,
                                AGENT_NODE, rx_actors=settings["rpc.rx_cpus"], parse_ns=settings["rpc.parse_ns"],
                                payload_bytes=settings["rpc.payload_bytes"], payload_pte=self.read_pte,
                                warmup=settings["experiment.warmup"], queue_capacity=settings["queue.capacity"])
            for queue, port in self.rpc.sources:
                self.agent.add_source(queue, port)

        if self.kind is PolicyKind.SHINJUKU_SHENANGO:
            count = settings.get("sched.batch_threads", len(self.cpus))
            for i in range(count):
                self.kernel.admit(Thread(BATCH_TID_BASE + i, None, kind="BATCH", batch=True), 0)

    def start(self):
        self.agent.start(0)
        self.kernel.start_watchdog(0)


@dataclass
class PointResult:
    rate: float
    offered: int = 0
    completed: int = 0
    throughput: float = 0.0
    latency: OrderedDict = field(default_factory=OrderedDict)
    latency_client: OrderedDict = field(default_factory=OrderedDict)
    batch_share: float = 0.0
    created: int = 0
    departed: int = 0
    drained: bool = True
    preempt_bound_violations: int = 0
    illegal_transitions: int = 0
    coherence_violations: int = 0
    counters: OrderedDict = field(default_factory=OrderedDict)
    trace: list = None

    def p99(self, kind: str) -> int or None:
        value = self.latency.get(kind, {}).get("p99")
        return None if value in (None, "") else value

    def row(self, **extra) -> OrderedDict:
        row = OrderedDict(extra)
        row["rate"] = self.rate
        row["offered"] = self.offered
        row["completed"] = self.completed
        row["throughput"] = self.throughput
        for kind, summary in self.latency.items():
            for key, value in summary.items():
                row["{}_{}".format(kind.lower(), key)] = value
        for kind, summary in self.latency_client.items():
            for key, value in summary.items():
                row["latency_client_{}_{}".format(kind.lower(), key)] = value
        row["batch_share"] = self.batch_share
        row["created"] = self.created
        row["departed"] = self.departed
        row["drained"] = int(self.drained)
        row["preempt_bound_violations"] = self.preempt_bound_violations
        row["illegal_transitions"] = self.illegal_transitions
        row["coherence_violations"] = self.coherence_violations
        row.update(self.counters)
        return row


def run_point(settings: Settings, rate: float, trace: bool = False) -> PointResult:
    """
    Simulates one offered load
    """
    lines = [] if trace else None
    deployment = Deployment(settings, trace=lines.append if trace else None)
    sim, kernel = deployment.sim, deployment.kernel
    duration, warmup = settings["experiment.duration"], settings["experiment.warmup"]
    mix, seed = settings["workload.mix"], settings["experiment.seed"]
    recorder = LatencyRecorder()
    offered = Counter()

    if deployment.rpc is not None:
        rpc = deployment.rpc
        load = LoadSpec(rate, mix, seed, duration, warmup, stream=0)
        latency_client = LoadSpec(rate * settings["rpc.latency_client_share"], mix, seed, duration, warmup, stream=1)
        streams = heapq.merge(((a.time, 0, a) for a in generate(load)),
                              ((a.time, 1, a) for a in generate(latency_client)))
        for req_id, (_, client, arrival) in enumerate(streams):
            rpc.submit(arrival, Client.LOAD if client == 0 else Client.LATENCY, req_id)
    else:
        def admit(arrival):
            thread = Thread(arrival.seq, arrival.service_ns, arrival=arrival.time, slo_class=arrival.slo_class,
                            kind=arrival.kind)
            if arrival.time >= warmup:
                offered[arrival.kind] += 1
            kernel.admit(thread, arrival.time)

        def finished(thread, cpu, at):
            if not thread.batch and thread.arrival >= warmup:
                recorder.record(thread.kind, at - thread.arrival)
            return 0

        kernel.on_thread_finish = finished
        ArrivalFeeder(sim, generate(LoadSpec(rate, mix, seed, duration, warmup)), admit)

    deployment.start()
    end = duration + settings["experiment.drain"]
    sim.run(until=end)
    return _collect(deployment, rate, recorder, offered, end, lines)


def _collect(deployment: Deployment, rate: float, recorder: LatencyRecorder, offered: Counter, end: int,
             lines: list) -> PointResult:
    settings = deployment.settings
    kernel = deployment.kernel
    window = settings["experiment.duration"] - settings["experiment.warmup"]
    result = PointResult(rate)
    if deployment.rpc is not None:
        rpc = deployment.rpc
        recorder = rpc.recorders[Client.LOAD]
        result.offered = rpc.offered[Client.LOAD]
        result.latency_client = OrderedDict(
            (kind, rpc.recorders[Client.LATENCY].summary(kind)) for kind, _, _ in settings["workload.mix"])
    else:
        result.offered = sum(offered.values())
    result.completed = recorder.completed
    result.throughput = result.completed * NS_PER_S / window if window > 0 else 0.0
    result.latency = OrderedDict((kind, recorder.summary(kind)) for kind, _, _ in settings["workload.mix"])

    batch_ns = sum(c.batch_ns for c in kernel.cpus.values())
    for cpu, c in kernel.cpus.items():
        if c.current is not None and kernel.threads[c.current].batch:
            batch_ns += max(0, end - c.run_started)
    result.batch_share = batch_share(batch_ns, end, len(kernel.cpus))

    batch_threads = sum(1 for t in kernel.threads.values() if t.batch)
    result.created, result.departed = kernel.conservation()
    result.created -= batch_threads
    result.drained = result.created == result.departed
    if not result.drained:
        LOGGER.warning("Rate {}: {} threads did not depart before the end of the run".format(
            rate, result.created - result.departed))
    result.preempt_bound_violations = kernel.preempt_bound_violations
    result.illegal_transitions = deployment.enclave.txn_region.illegal_transitions
    result.coherence_violations = deployment.fabric.coherence_violations

    counters = OrderedDict()
    for name in ("switches", "preemptions", "local_dispatch_hits", "local_dispatch_misses", "spurious_msix",
                 "msix_deferred", "failed_txns", "agent_kills", "agent_restarts", "restart_view_mismatches",
                 "send_retries"):
        counters[name] = kernel.counters[name]
    for name in ("decisions", "dispatched", "prestaged", "kicks", "renewals", "grants", "reclaims", "iterations"):
        counters["agent_" + name] = deployment.agent.counters[name]
    counters["msix_sent"] = deployment.fabric.counters["msix_sent"]
    result.counters = counters
    result.trace = lines
    return result


def _run_point_args(args) -> PointResult:
    return run_point(*args)


def sweep(settings: Settings, rates: [float] = None, jobs: int = 1, trace: bool = False) -> [PointResult]:
    """
    Runs every rate of the sweep, independent points may run in parallel processes
    """
    rates = list(settings["experiment.rates"] if rates is None else rates)
    work = [(settings, rate, trace) for rate in rates]
    if jobs > 1 and len(work) > 1:
        with Pool(min(jobs, len(work))) as pool:
            results = pool.map(_run_point_args, work)
    else:
        results = []
        for args in work:
            results.append(_run_point_args(args))
            LOGGER.info("Rate {:.0f}/s: throughput {:.0f}/s".format(args[1], results[-1].throughput))
    return results


def primary_kind(settings: Settings) -> str:
    return settings["workload.mix"][0][0]


def saturation(settings: Settings, results: [PointResult], kind: str = None) -> float or None:
    """
    :return: saturation throughput of a sweep, None if the sweep never saturates
    """
    kind = primary_kind(settings) if kind is None else kind
    curve = [SweepPoint(r.rate, r.offered, r.completed, r.p99(kind)) for r in results]
    try:
        return find_saturation(curve, settings["experiment.saturation_multiplier"],
                               settings["experiment.completion_ratio"])
    except (NeverSaturates, NoSamples) as ex:
        LOGGER.warning(str(ex))
        return None


def switch_path(settings: Settings, tiers: [SwitchTier] = None) -> OrderedDict:
    """
    Measures the gap between a voluntary block and the next thread start on a single worker
    :return: { tier -> median gap in ns }
    """
    tiers = list(SwitchTier) if tiers is None else tiers
    count = settings["experiment.switch_threads"]
    service = settings["experiment.switch_service"]
    result = OrderedDict()
    for tier in tiers:
        variant = settings.replace(**{"sched.tier": tier.value, "sched.policy": "fifo", "rpc.scenario": "none"})
        deployment = Deployment(variant, workers=1)
        finishes = []

        def finished(thread, cpu, at, finishes=finishes):
            finishes.append(at)
            return 0

        deployment.kernel.on_thread_finish = finished
        # service times vary a little so the agent loop phase varies between switches
        threads = [Thread(i, service + (i * 37) % 1_000) for i in range(count)]
        for thread in threads:
            deployment.kernel.admit(thread, 0)
        # no watchdog, the run ends once the backlog is gone
        deployment.agent.start(0)
        deployment.sim.run()
        starts = sorted(t.first_run_at for t in threads)
        gaps = [starts[i + 1] - finishes[i] for i in range(min(len(finishes), len(starts) - 1))]
        result[tier] = float(np.median(gaps))
        LOGGER.info("Switch path {}: median {:.0f} ns over {} switches".format(tier.value, result[tier], len(gaps)))
    return result


def ablation(settings: Settings, jobs: int = 1) -> OrderedDict:
    """
    FIFO saturation throughput per cumulative optimization tier
    :return: { tier -> saturation or None }
    """
    result = OrderedDict()
    for tier in SwitchTier:
        variant = settings.replace(**{"sched.tier": tier.value})
        result[tier] = saturation(variant, sweep(variant, jobs=jobs))
        LOGGER.info("Tier {}: saturation {}".format(tier.value, result[tier]))
    return result


def tiering(settings: Settings) -> (TieringSimulation, object):
    config = TieringConfig(theta=settings["memtier.theta"], prior_alpha=settings["memtier.prior_alpha"],
                           prior_beta=settings["memtier.prior_beta"], parallelism=settings["memtier.parallelism"],
                           loop_profile=settings["memtier.loop_profile"], seed=settings["experiment.seed"])
    batches = settings["memtier.batches"]
    if settings["memtier.trace_path"] is not None:
        pattern = TraceAccessPattern(settings["memtier.trace_path"])
    else:
        pattern = AccessPattern(batches, settings["memtier.hot_fraction"], settings["memtier.pages_per_touch"],
                                settings["memtier.zipf_s"], settings["experiment.seed"])
    simulation = TieringSimulation(batches, settings["memtier.epochs"], settings["memtier.epoch"],
                                   settings["memtier.window"], config, pattern,
                                   settings["memtier.fault_penalty"], settings["memtier.tlb_flush_ns"])
    return simulation, simulation.run()


def run_experiment(settings: Settings, out_dir: str, jobs: int = 1, trace: bool = False) -> OrderedDict:
    """
    Runs the experiment kind of the settings and writes metrics, manifest and optional trace
    :return: summary values, also written to the manifest
    """
    os.makedirs(out_dir, exist_ok=True)
    kind = settings["experiment.kind"]
    rows = []
    summary = OrderedDict([("kind", kind)])
    labels = OrderedDict([("policy", settings["sched.policy"]), ("scenario", settings["rpc.scenario"]),
                          ("tier", settings["sched.tier"])])

    if kind == "sweep":
        results = sweep(settings, jobs=jobs, trace=trace)
        rows = [r.row(**labels) for r in results]
        summary["saturation"] = saturation(settings, results)
        if trace:
            with open(os.path.join(out_dir, TRACE_FILE_NAME), "w") as f:
                for r in results:
                    f.write("# rate={}\n".format(r.rate))
                    f.writelines(line + "\n" for line in r.trace)
    elif kind == "switch_path":
        medians = switch_path(settings)
        summary["median_ns"] = OrderedDict((tier.value, median) for tier, median in medians.items())
        for tier, median in medians.items():
            low, high = SwitchCostModel.BANDS[tier]
            target = SwitchCostModel.TARGETS[tier]
            rows.append(OrderedDict([("tier", tier.value), ("median_ns", median), ("target_ns", target),
                                     ("band_low_ns", low), ("band_high_ns", high),
                                     ("error", (median - target) / target)]))
    elif kind == "ablation":
        saturations = ablation(settings, jobs=jobs)
        previous = None
        for tier, value in saturations.items():
            gain = "" if previous in (None, 0) or value is None else value / previous - 1.0
            rows.append(OrderedDict([("tier", tier.value), ("saturation", value if value is not None else ""),
                                     ("gain", gain)]))
            previous = value
        summary["saturation"] = OrderedDict((tier.value, value) for tier, value in saturations.items())
    elif kind == "memtier":
        simulation, result = tiering(settings)
        for record in result.epochs:
            rows.append(OrderedDict(record._asdict()))
        summary["loop_duration_ns"] = result.loop_duration_ns
        summary["cleared_bits"] = simulation.memory.counters["cleared_bits"]
        summary["tlb_flush_ns"] = simulation.memory.counters["tlb_flush_ns"]

    write_metrics(os.path.join(out_dir, METRICS_FILE_NAME), rows)
    write_manifest(os.path.join(out_dir, MANIFEST_FILE_NAME), settings, {"summary": summary})
    return summary
