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
Open loop Poisson load, latency histograms, saturation detection and metrics output.
"""
import csv
import json
import logging
import platform
from collections import OrderedDict, namedtuple
from dataclasses import dataclass
from importlib import metadata

import numpy as np
from hdrh.histogram import HdrHistogram

from splitsim.errors import BadConfig, NeverSaturates, NoSamples

LOGGER = logging.getLogger(__name__)

Arrival = namedtuple("Arrival", ["seq", "time", "kind", "service_ns", "slo_class"])

# 1 ns .. 100 s at 3 significant figures, bucket error <= 0.1%
HISTOGRAM_LOWEST = 1
HISTOGRAM_HIGHEST = 100_000_000_000
HISTOGRAM_DIGITS = 3

_CHUNK = 4096


@dataclass(frozen=True)
class LoadSpec:
    """
    An open loop Poisson arrival process over a mix of request kinds
    """
    rate: float
    mix: tuple = (("GET", 1.0, 10_000),)
    seed: int = 1
    duration: int = 20_000_000
    warmup: int = 2_000_000
    stream: int = 0

    def __post_init__(self):
        if self.rate < 0:
            raise BadConfig("Rate must not be negative: {}".format(self.rate))
        if len(self.mix) <= 0:
            raise BadConfig("The request mix is empty")
        total = sum(p for _, p, _ in self.mix)
        if abs(total - 1.0) > 1e-6:
            raise BadConfig("Mix probabilities must sum to 1 but sum to {}".format(total))
        if not 0 <= self.warmup < self.duration:
            raise BadConfig("Warmup ({}) must be shorter than the duration ({})".format(self.warmup, self.duration))

    @property
    def kinds(self) -> [str]:
        return [kind for kind, _, _ in self.mix]


def rng_for(seed: int, *spawn_key: int) -> np.random.Generator:
    """
    Independent deterministic stream for a (seed, key...) pair
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(spawn_key)))


def generate(spec: LoadSpec):
    """
    Yields arrivals with exponential inter-arrival times until the end of the load window
    """
    if spec.rate <= 0:
        return
    rng = rng_for(spec.seed, spec.stream)
    mean_gap = 1e9 / spec.rate
    probabilities = np.array([p for _, p, _ in spec.mix], dtype=float)
    probabilities = probabilities / probabilities.sum()
    t = 0.0
    seq = 0
    while True:
        gaps = rng.exponential(mean_gap, _CHUNK)
        classes = rng.choice(len(spec.mix), size=_CHUNK, p=probabilities)
        for gap, slo_class in zip(gaps, classes):
            t += gap
            if t >= spec.duration:
                return
            kind, _, service_ns = spec.mix[slo_class]
            yield Arrival(seq, int(t), kind, service_ns, int(slo_class))
            seq += 1


class LatencyRecorder:
    """
    One histogram per request class
    """

    def __init__(self):
        self._histograms = OrderedDict()
        self.dispatched = 0
        self.completed = 0

    def _histogram(self, name: str) -> HdrHistogram:
        histogram = self._histograms.get(name)
        if histogram is None:
            histogram = HdrHistogram(HISTOGRAM_LOWEST, HISTOGRAM_HIGHEST, HISTOGRAM_DIGITS)
            self._histograms[name] = histogram
        return histogram

    def record(self, name: str, latency_ns: int):
        self._histogram(name).record_value(min(HISTOGRAM_HIGHEST, max(HISTOGRAM_LOWEST, int(latency_ns))))
        self.completed += 1

    @property
    def classes(self) -> [str]:
        return list(self._histograms.keys())

    def count(self, name: str) -> int:
        histogram = self._histograms.get(name)
        return 0 if histogram is None else histogram.get_total_count()

    def percentile(self, name: str, q: float) -> int:
        """
        :param name: request class
        :param q: percentile in [0, 100]
        :return: latency in ns
        """
        histogram = self._histograms.get(name)
        if histogram is None or histogram.get_total_count() <= 0:
            raise NoSamples(name)
        return histogram.get_value_at_percentile(q)

    def mean(self, name: str) -> float:
        histogram = self._histograms.get(name)
        if histogram is None or histogram.get_total_count() <= 0:
            raise NoSamples(name)
        return histogram.get_mean_value()

    def summary(self, name: str) -> OrderedDict:
        """
        :return: count, p50, p99 and p99.9 of a class, empty values if it has no samples
        """
        result = OrderedDict([("count", self.count(name))])
        for label, q in (("p50", 50.0), ("p99", 99.0), ("p999", 99.9)):
            try:
                result[label] = self.percentile(name, q)
            except NoSamples:
                result[label] = ""
        return result


SweepPoint = namedtuple("SweepPoint", ["rate", "offered", "completed", "p99"])


def find_saturation(curve: [SweepPoint], threshold_multiplier: float = 10.0, completion_ratio: float = 0.99,
                    unloaded_p99: float = None) -> float:
    """
    Largest offered rate that completes at least completion_ratio of its offers and keeps p99
    within threshold_multiplier times the unloaded p99, interpolated between sweep points
    :param curve: sweep points ordered by rate
    :param threshold_multiplier: tail bound relative to the unloaded p99
    :param completion_ratio: minimum completed / offered
    :param unloaded_p99: reference p99, the p99 of the lowest rate with samples if not given
    :return: saturation throughput
    """
    if len(curve) <= 0:
        raise ValueError("Empty curve")
    curve = sorted(curve, key=lambda p: p.rate)
    reference = unloaded_p99
    if reference is None:
        reference = next((p.p99 for p in curve if p.p99 is not None), None)
        if reference is None:
            raise NoSamples("sweep")
    bound = threshold_multiplier * reference

    def ratio(point: SweepPoint) -> float:
        return 1.0 if point.offered <= 0 else point.completed / point.offered

    def passes(point: SweepPoint) -> bool:
        if point.p99 is None:
            # an idle point has nothing to complete
            return point.offered <= 0
        return ratio(point) >= completion_ratio and point.p99 <= bound

    failing = next((i for i, p in enumerate(curve) if not passes(p)), None)
    if failing is None:
        raise NeverSaturates("All {} sweep points are below saturation, highest rate {}".format(
            len(curve), curve[-1].rate))
    if failing == 0:
        return float(curve[0].rate)

    good, bad = curve[failing - 1], curve[failing]
    good_p99 = reference if good.p99 is None else good.p99
    fractions = [1.0]
    if bad.p99 is None or bad.p99 > bound:
        if bad.p99 is None or bad.p99 <= good_p99:
            fractions.append(0.0)
        else:
            fractions.append((bound - good_p99) / (bad.p99 - good_p99))
    if ratio(bad) < completion_ratio:
        drop = ratio(good) - ratio(bad)
        fractions.append(0.0 if drop <= 0 else (ratio(good) - completion_ratio) / drop)
    fraction = min(1.0, max(0.0, min(fractions)))
    return good.rate + fraction * (bad.rate - good.rate)


def batch_share(batch_ns: int, elapsed_ns: int, cpus: int) -> float:
    """
    :return: batch cpu time as a fraction of the worker cpu time available
    """
    available = elapsed_ns * cpus
    if available <= 0:
        return 0.0
    return min(1.0, batch_ns / available)


def slope(xs: [float], ys: [float]) -> float:
    """
    :return: least squares slope of ys over xs
    """
    if len(xs) < 2:
        raise ValueError("At least two points are required")
    return float(np.polyfit(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float), 1)[0])


def write_metrics(path: str, rows: [dict]):
    """
    Writes one CSV row per run, the header is the union of all keys in first seen order
    """
    columns = []
    for row in rows:
        for key in row.keys():
            if key not in columns:
                columns.append(key)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, restval="", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format_cell(v) for k, v in row.items()})
    LOGGER.info("Wrote {} rows to {}".format(len(rows), path))


def _format_cell(value) -> str:
    if isinstance(value, float):
        return "{:.6g}".format(value)
    return value


def _version(package: str) -> str:
    try:
        return metadata.version(package)
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(path: str, settings, extra: dict = None):
    """
    Records everything needed to reproduce a metrics file
    """
    manifest = OrderedDict([
        ("config_digest", settings.digest()),
        ("seed", settings["experiment.seed"]),
        ("config", settings.canonical_text().splitlines()),
        ("versions", OrderedDict([
            ("splitsim", _version("splitsim")),
            ("python", platform.python_version()),
            ("numpy", np.__version__),
            ("hdrhistogram", _version("hdrhistogram")),
        ])),
    ])
    if extra:
        manifest.update(extra)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
