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

import hashlib
import logging
import os
from collections import OrderedDict
from dataclasses import fields
from typing import List

from splitsim.argument import Setting, duration_converter, float_converter, int_converter, mix_converter, \
    rate_list_converter
from splitsim.errors import BadConfig, ScenarioNotFound, UnknownKey
from splitsim.fabric import LatencyModel, PROFILES
from splitsim.parser import parse_assignment, parse_config_text

LOGGER = logging.getLogger(__name__)


def _positive(x) -> bool:
    return x is not None and x > 0


def _non_negative(x) -> bool:
    return x is not None and x >= 0


def _power_of_two(x) -> bool:
    return x is not None and x > 0 and (x & (x - 1)) == 0


def _fraction(x) -> bool:
    return x is not None and 0.0 <= x <= 1.0


def _latency_settings() -> List[Setting]:
    result = []
    for f in fields(LatencyModel):
        if f.name == "profile_name":
            continue
        result.append(Setting(
            name="fabric.{}".format(f.name),
            description="Override of the profile cost '{}' (ns)".format(f.name),
            example=str(f.default),
            type=int, converter=duration_converter, validator=_non_negative,
        ))
    return result


SETTINGS = [
    # experiment
    Setting("experiment.kind", "What to run", "sweep",
            allowed_values=["sweep", "switch_path", "ablation", "memtier"], default="sweep"),
    Setting("experiment.seed", "Seed of all random streams", "1", type=int, default=1),
    Setting("experiment.duration", "Arrival window of one rate point", "20ms",
            type=int, converter=duration_converter, default=20_000_000, validator=_positive),
    Setting("experiment.warmup", "Leading part of the arrival window excluded from metrics", "2ms",
            type=int, converter=duration_converter, default=2_000_000, validator=_non_negative),
    Setting("experiment.drain", "Time allowed after the arrival window for in-flight work", "50ms",
            type=int, converter=duration_converter, default=50_000_000, validator=_non_negative),
    Setting("experiment.rates", "Offered loads of a sweep (requests/s)", "100k,200k",
            type=tuple, converter=rate_list_converter, default=(100_000, 200_000, 400_000)),
    Setting("experiment.saturation_multiplier", "Tail bound as a multiple of the unloaded p99", "10",
            type=float, default=10.0, validator=_positive),
    Setting("experiment.completion_ratio", "Minimum completed/offered ratio below saturation", "0.99",
            type=float, default=0.99, validator=_fraction),
    Setting("experiment.switch_threads", "Backlog size of the context switch microbenchmark", "200",
            type=int, converter=int_converter, default=200, validator=_positive),
    Setting("experiment.switch_service", "Service time of microbenchmark threads", "50us",
            type=int, converter=duration_converter, default=50_000, validator=_positive),

    # fabric
    Setting("fabric.profile", "Fabric cost preset", "mount-evans",
            allowed_values=list(PROFILES.keys()), default="mount-evans"),
    *_latency_settings(),

    # host
    Setting("host.workers", "Worker CPUs owned by the scheduling enclave", "16",
            type=int, default=16, validator=_positive),
    Setting("host.futex_block_ns", "Kernel work between a voluntary block and the decision read", "1000",
            type=int, converter=duration_converter, default=1_000, validator=_non_negative),
    Setting("host.switch_ns", "Context switch cost, derived from the switch tier if unset", "2235",
            type=int, converter=duration_converter, validator=_non_negative),
    Setting("host.fallback_tick", "Round robin slice of the on-host fallback policy", "1ms",
            type=int, converter=duration_converter, default=1_000_000, validator=_positive),
    Setting("host.fallback_switch_ns", "Context switch cost of the on-host fallback policy", "2000",
            type=int, converter=duration_converter, default=2_000, validator=_non_negative),
    Setting("host.preempt_slack", "Agent reaction time the slice audit allows past slice, interrupt and switch costs",
            "5us", type=int, converter=duration_converter, default=5_000, validator=_non_negative),
    Setting("host.prefetch", "Prefetch the decision line when a thread blocks, derived from the tier if unset",
            "true", type=bool),
    Setting("host.write_pte", "Mapping of the host side of the message queue, derived from the tier if unset",
            "WC", allowed_values=["UC", "WC"]),
    Setting("host.read_pte", "Mapping of the transaction region on the host, derived from the tier if unset",
            "WT", allowed_values=["UC", "WT"]),

    # scheduling agent
    Setting("sched.policy", "Scheduling policy of the agent", "fifo",
            allowed_values=["fifo", "shinjuku_sq", "shinjuku_mq", "shinjuku_shenango"], default="fifo"),
    Setting("sched.location", "Where the agent runs", "ipu", allowed_values=["ipu", "host"], default="ipu"),
    Setting("sched.tier", "Cumulative optimization tier", "prestage",
            allowed_values=["baseline", "ipu_wb", "host_wc_wt", "prestage"], default="prestage"),
    Setting("sched.ipu_pte", "Mapping of queues on the IPU, derived from the tier if unset", "WB",
            allowed_values=["UC", "WB"]),
    Setting("sched.prestage", "Pre-stage decisions for busy CPUs, derived from the tier if unset", "true",
            type=bool),
    Setting("sched.slice", "Preemption time slice", "30us",
            type=int, converter=duration_converter, default=30_000, validator=_positive),
    Setting("sched.loop_tick_ns", "Agent loop granularity under WB mappings", "200",
            type=int, converter=duration_converter, default=200, validator=_positive),
    Setting("sched.loop_tick_uc_ns", "Agent loop granularity under UC mappings", "1160",
            type=int, converter=duration_converter, default=1_160, validator=_positive),
    Setting("sched.decision_ns", "Agent cost of opening one decision, derived if unset", "426",
            type=int, converter=duration_converter, validator=_non_negative),
    Setting("sched.slowdown", "Multiplier applied to every agent side cost", "1.0",
            type=float, default=1.0, validator=_positive),
    Setting("sched.stall_at_ms", "Agent stops making progress at this time (fault injection)", "5",
            type=float, validator=_non_negative),
    Setting("sched.prestage_depth", "Minimum runqueue depth before decisions are pre-staged", "1",
            type=int, default=1, validator=_positive),
    Setting("sched.shenango_grant_polls", "Empty loop iterations before an idle core is granted to batch work",
            "10", type=int, default=10, validator=_positive),
    Setting("sched.mq_starvation", "Longest wait of a lower priority queue head, one slice if unset",
            "30us", type=int, converter=duration_converter, validator=_positive),
    Setting("sched.batch_threads", "Batch threads of the co-location policy, one per worker if unset", "16",
            type=int, validator=_non_negative),

    # watchdog
    Setting("watchdog.deadline", "Longest time without a decision before the agent is killed", "20ms",
            type=int, converter=duration_converter, default=20_000_000, validator=_positive),
    Setting("watchdog.period", "Watchdog check period", "1ms",
            type=int, converter=duration_converter, default=1_000_000, validator=_positive),
    Setting("watchdog.restart_after_ms", "Restart a killed agent after this many milliseconds", "10",
            type=float, validator=_non_negative),

    # message queues
    Setting("queue.capacity", "Entries per message queue (power of two)", "65536",
            type=int, converter=int_converter, default=65_536, validator=_power_of_two),
    Setting("queue.backing", "How the agent reaches host produced entries", "mmio",
            allowed_values=["mmio", "dma"], default="mmio"),
    Setting("queue.reserve_check", "Producers reserve batches of slots instead of crashing on overflow", "false",
            type=bool, default=False),
    Setting("queue.reserve_batch", "Enqueues between two head refreshes in reserve-check mode", "1024",
            type=int, converter=int_converter, default=1_024, validator=_positive),
    Setting("queue.dma_batch", "Maximum entries moved by one DMA batch read", "32",
            type=int, default=32, validator=_positive),

    # workload
    Setting("workload.mix", "Request classes as KIND:PROBABILITY:SERVICE, SLO classes follow the order",
            "GET:0.995:10us,RANGE:0.005:10ms", type=tuple, converter=mix_converter,
            default=(("GET", 1.0, 10_000),)),

    # rpc
    Setting("rpc.scenario", "RPC deployment, none disables the RPC stack", "offload_all",
            allowed_values=["none", "onhost_all", "onhost_sched", "offload_all"], default="none"),
    Setting("rpc.rx_cpus", "RX actors of the RPC stack", "8", type=int, default=8, validator=_positive),
    Setting("rpc.parse_ns", "RPC stack cost per request", "30us",
            type=int, converter=duration_converter, default=30_000, validator=_non_negative),
    Setting("rpc.payload_bytes", "Request payload size", "256",
            type=int, converter=int_converter, default=256, validator=_positive),
    Setting("rpc.latency_client_share", "Rate of the latency client relative to the load client", "1%",
            type=float, converter=float_converter, default=0.01, validator=_fraction),

    # memory tiering
    Setting("memtier.batches", "Number of 256 KiB batches", "512", type=int, converter=int_converter,
            default=512, validator=_positive),
    Setting("memtier.hot_fraction", "Share of batches in the synthetic hot set", "20%",
            type=float, converter=float_converter, default=0.2, validator=_fraction),
    Setting("memtier.zipf_s", "Zipf exponent of hot batch touch probabilities, 0 touches every hot batch", "0",
            type=float, default=0.0, validator=_non_negative),
    Setting("memtier.pages_per_touch", "Pages of a batch touched in one access window", "8",
            type=int, default=8, validator=lambda x: 0 < x <= 64),
    Setting("memtier.window", "Access window of the synthetic generator", "100ms",
            type=int, converter=duration_converter, default=100_000_000, validator=_positive),
    Setting("memtier.trace_path", "Access trace with 'time_ns page_id' lines, replaces the generator", "trace.txt"),
    Setting("memtier.parallelism", "IPU CPUs the scan loop is divided across", "16",
            type=int, default=16, validator=_positive),
    Setting("memtier.loop_profile", "Loop cost profile", "offload",
            allowed_values=["offload", "onhost"], default="offload"),
    Setting("memtier.epochs", "Number of migration epochs to simulate", "6",
            type=int, default=6, validator=_positive),
    Setting("memtier.epoch", "Migration epoch length", "38.4s",
            type=int, converter=duration_converter, default=38_400_000_000, validator=_positive),
    Setting("memtier.theta", "Hotness threshold on the Thompson draw", "0.5",
            type=float, default=0.5, validator=_fraction),
    Setting("memtier.prior_alpha", "Beta prior alpha", "1", type=float, default=1.0, validator=_positive),
    Setting("memtier.prior_beta", "Beta prior beta", "1", type=float, default=1.0, validator=_positive),
    Setting("memtier.fault_penalty", "Cost charged to a thread touching a SLOW page", "50us",
            type=int, converter=duration_converter, default=50_000, validator=_non_negative),
    Setting("memtier.tlb_flush_ns", "Host cost per cleared access bit", "200",
            type=int, converter=duration_converter, default=200, validator=_non_negative),
]

SETTINGS_BY_NAME = OrderedDict((s.name, s) for s in SETTINGS)


class Settings:
    """
    Immutable, fully typed set of config values
    """

    def __init__(self, values: dict = None):
        """
        :param values: { key -> raw string or typed value }, missing keys use their default
        """
        resolved = OrderedDict((name, setting.default) for name, setting in SETTINGS_BY_NAME.items())
        for key, value in (values or {}).items():
            setting = SETTINGS_BY_NAME.get(key)
            if setting is None:
                raise UnknownKey(key)
            try:
                resolved[key] = setting.coerce(value)
            except ValueError as ex:
                raise BadConfig(str(ex))
        self._values = resolved
        self._validate()

    def _validate(self):
        if self["experiment.warmup"] >= self["experiment.duration"]:
            raise BadConfig("experiment.warmup ({}) must be shorter than experiment.duration ({})".format(
                self["experiment.warmup"], self["experiment.duration"]))
        total = sum(p for _, p, _ in self["workload.mix"])
        if abs(total - 1.0) > 1e-6:
            raise BadConfig("workload.mix probabilities must sum to 1 but sum to {}".format(total))
        if self["sched.location"] == "host" and self["rpc.scenario"] == "offload_all":
            raise BadConfig("rpc.scenario 'offload_all' requires sched.location 'ipu'")

    def __getitem__(self, key: str) -> any:
        if key not in self._values:
            raise UnknownKey(key)
        return self._values[key]

    def get(self, key: str, default: any = None) -> any:
        value = self[key]
        return default if value is None else value

    def __eq__(self, other) -> bool:
        return isinstance(other, Settings) and self._values == other._values

    def __hash__(self) -> int:
        return hash(self.canonical_text())

    def items(self):
        return self._values.items()

    def section(self, name: str) -> dict:
        """
        :return: { short key -> value } of all keys of a section, f.ex. "fabric"
        """
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self._values.items() if k.startswith(prefix)}

    def replace(self, **changes) -> "Settings":
        """
        Creates a modified copy, use dict unpacking for dotted keys: replace(**{"sched.tier": "baseline"})
        """
        values = OrderedDict((k, v) for k, v in self._values.items() if v is not None)
        values.update(changes)
        return Settings(values)

    def canonical_text(self) -> str:
        lines = []
        for key, value in self._values.items():
            if value is None:
                continue
            lines.append("{}={}".format(key, SETTINGS_BY_NAME[key].format_value(value)))
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """
        :return: SHA-256 of the canonical key=value text
        """
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def latency_model(self) -> LatencyModel:
        overrides = {k: v for k, v in self.section("fabric").items() if k != "profile"}
        return LatencyModel.from_profile(self["fabric.profile"], **overrides)

    @classmethod
    def from_text(cls, text: str, overrides: List[str] = None, seed: int = None) -> "Settings":
        """
        Parses config file content
        :param text: file content
        :param overrides: "key=value" assignments applied after the file
        :param seed: optional override of experiment.seed
        :return: settings
        """
        try:
            values = parse_config_text(text)
            for assignment in overrides or []:
                key, value = parse_assignment(assignment)
                values[key] = value
        except ValueError as ex:
            raise BadConfig(str(ex))
        if seed is not None:
            values["experiment.seed"] = seed
        return cls(values)

    @classmethod
    def load(cls, path: str, overrides: List[str] = None, seed: int = None) -> "Settings":
        """
        Loads a scenario file
        """
        if not os.path.isfile(path):
            raise ScenarioNotFound(path)
        with open(path) as f:
            text = f.read()
        LOGGER.debug("Loading scenario {}".format(path))
        return cls.from_text(text, overrides, seed)


def find_scenario(name: str, directory: str) -> str:
    """
    Resolves a scenario name ("fifo_wave16") to a file in the given directory
    """
    candidates = [name, name + ".cfg"]
    for candidate in candidates:
        path = os.path.join(directory, candidate)
        if os.path.isfile(path):
            return path
    raise ScenarioNotFound(os.path.join(directory, name + ".cfg"))


def default_scenario_dir() -> str:
    """
    :return: the "scenarios" directory shipped next to the package
    """
    return os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios")
