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

import os
import tempfile

from splitsim.config import Settings, SETTINGS_BY_NAME, default_scenario_dir, find_scenario
from splitsim.errors import BadConfig, ConfigError, ScenarioNotFound, UnknownKey
from tests import TestBase


class SettingsTest(TestBase):

    def test_defaults(self):
        settings = Settings()

        self.assertEqual(settings["experiment.kind"], "sweep")
        self.assertEqual(settings["experiment.seed"], 1)
        self.assertEqual(settings["sched.slice"], 30_000)
        self.assertEqual(settings["queue.capacity"], 65_536)
        self.assertIsNone(settings["host.switch_ns"])
        self.assertEqual(settings.get("host.switch_ns", 7), 7)

    def test_every_key_has_a_section(self):
        sections = {"experiment", "fabric", "host", "sched", "watchdog", "queue", "workload", "rpc", "memtier"}
        for name, setting in SETTINGS_BY_NAME.items():
            self.assertIn(setting.section, sections, name)

    def test_unknown_key(self):
        self.assertRaises(UnknownKey, Settings, {"sched.polcy": "fifo"})
        self.assertRaises(UnknownKey, Settings().__getitem__, "nope")

    def test_bad_value(self):
        self.assertRaises(BadConfig, Settings, {"sched.policy": "round_robin"})
        self.assertRaises(BadConfig, Settings, {"queue.capacity": "1000"})
        self.assertRaises(BadConfig, Settings, {"experiment.duration": "0"})

    def test_warmup_must_be_shorter_than_duration(self):
        self.assertRaises(BadConfig, Settings, {"experiment.duration": "2ms", "experiment.warmup": "2ms"})

    def test_mix_must_sum_to_one(self):
        self.assertRaises(BadConfig, Settings, {"workload.mix": "GET:0.5:10us,RANGE:0.4:10ms"})

    def test_offload_rpc_requires_ipu_agent(self):
        self.assertRaises(BadConfig, Settings, {"sched.location": "host", "rpc.scenario": "offload_all"})

    def test_config_errors_share_a_base(self):
        self.assertTrue(issubclass(UnknownKey, ConfigError))
        self.assertTrue(issubclass(ScenarioNotFound, ConfigError))

    def test_replace(self):
        base = Settings()
        changed = base.replace(**{"sched.tier": "baseline", "host.workers": 4})

        self.assertEqual(changed["sched.tier"], "baseline")
        self.assertEqual(changed["host.workers"], 4)
        self.assertEqual(base["sched.tier"], "prestage")
        self.assertNotEqual(base, changed)

    def test_digest_is_stable(self):
        a = Settings({"experiment.rates": "100k,200k", "sched.slice": "10us"})
        b = Settings({"sched.slice": 10_000, "experiment.rates": (100_000, 200_000)})

        self.assertEqual(a, b)
        self.assertEqual(a.digest(), b.digest())
        self.assertNotEqual(a.digest(), a.replace(**{"experiment.seed": 2}).digest())

    def test_canonical_text_skips_derived(self):
        text = Settings().canonical_text()

        self.assertIn("sched.policy=fifo\n", text)
        self.assertNotIn("host.switch_ns=", text)

    def test_section(self):
        section = Settings({"rpc.rx_cpus": "4"}).section("rpc")

        self.assertEqual(section["rx_cpus"], 4)
        self.assertEqual(section["scenario"], "none")

    def test_latency_model(self):
        model = Settings({"fabric.profile": "upi", "fabric.mmio_write_ns": "30"}).latency_model()

        self.assertEqual(model.profile_name, "upi")
        self.assertEqual(model.mmio_read_ns, 100)
        self.assertEqual(model.mmio_write_ns, 30)

    def test_from_text(self):
        text = """
        # small scenario
        sched.policy = shinjuku_sq
        experiment.rates = 10k,20k
        experiment.seed = 5
        """
        settings = Settings.from_text(text, overrides=["sched.slice=5us"], seed=9)

        self.assertEqual(settings["sched.policy"], "shinjuku_sq")
        self.assertEqual(settings["experiment.rates"], (10_000, 20_000))
        self.assertEqual(settings["sched.slice"], 5_000)
        self.assertEqual(settings["experiment.seed"], 9)

    def test_from_text_override_wins(self):
        settings = Settings.from_text("host.workers = 8", overrides=["host.workers=2"])

        self.assertEqual(settings["host.workers"], 2)

    def test_from_text_bad_line(self):
        self.assertRaises(BadConfig, Settings.from_text, "host.workers 8")
        self.assertRaises(BadConfig, Settings.from_text, "", overrides=["host.workers"])


class ScenarioFileTest(TestBase):

    def test_load_and_find(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "small.cfg")
            with open(path, "w") as f:
                f.write("host.workers = 3\n")

            self.assertEqual(find_scenario("small", directory), path)
            self.assertEqual(find_scenario("small.cfg", directory), path)
            self.assertEqual(Settings.load(path)["host.workers"], 3)
            self.assertRaises(ScenarioNotFound, find_scenario, "missing", directory)
            self.assertRaises(ScenarioNotFound, Settings.load, os.path.join(directory, "missing.cfg"))

    def test_shipped_scenarios_parse(self):
        directory = default_scenario_dir()
        names = sorted(x for x in os.listdir(directory) if x.endswith(".cfg"))

        self.assertIn("fifo_wave16.cfg", names)
        for name in names:
            Settings.load(os.path.join(directory, name))
