# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

import tempfile
import textwrap
import unittest
from pathlib import Path

from parameterized import parameterized

from config import check_option, load_config, load_schema, write_config
from errors import ConfigError


class TestLoadConfig(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / "run.yaml"

    def _write(self, text):
        self.path.write_text(textwrap.dedent(text), encoding="utf-8")
        return self.path

    def _diagnostics(self, text, **kwargs):
        with self.assertRaises(ConfigError) as ctx:
            load_config(self._write(text), **kwargs)
        return ctx.exception.diagnostics

    def test_defaults(self):
        config = load_config()
        self.assertEqual(config.seed, 0)
        self.assertEqual(config.jobs, 1)
        self.assertEqual(config.scenario.n_vehicles, 1500)
        self.assertEqual(config.clustering.criterion, "aic")
        self.assertEqual(config.clustering.k_range, range(1, 11))
        self.assertEqual(config.model.horizons, (10, 30, 50))
        self.assertEqual(config.env.window_seconds, 900.0)
        self.assertEqual(config.training.split, (0.7, 0.2, 0.1))
        self.assertEqual([a.label for a in config.archetypes], ["conservative", "moderate", "aggressive"])

    def test_empty_file(self):
        self.assertEqual(load_config(self._write("")), load_config())

    def test_overrides(self):
        config = load_config(
            self._write(
                """
                env:
                  window-minutes: 2
                  span: both
                model:
                  horizons: [5, 20]
                  families: [seq2seq, rnn]
                run:
                  seed: 3
                """
            ),
            jobs=4,
        )
        self.assertEqual(config.env.window_seconds, 120.0)
        self.assertEqual(config.env.span, "both")
        self.assertEqual(config.model.horizons, (5, 20))
        self.assertEqual(config.model.families, ("seq2seq", "rnn"))
        self.assertEqual(config.seed, 3)
        self.assertEqual(config.scenario.seed, 3)
        self.assertEqual(config.jobs, 4)

    def test_command_line_seed_wins(self):
        config = load_config(self._write("run:\n  seed: 3\n"), seed=7)
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.scenario.seed, 7)

    def test_line_numbers(self):
        diagnostics = self._diagnostics(
            """\
            scenario:
              n-vehicles: 0
            bogus:
              x: 1
            model:
              colour: red
              dropout: high
            """
        )
        self.assertEqual(len(diagnostics), 4)
        self.assertTrue(diagnostics[0].startswith(f"{self.path}:2: scenario.n-vehicles"))
        self.assertTrue(diagnostics[1].startswith(f"{self.path}:3: unknown section 'bogus'"))
        self.assertTrue(diagnostics[2].startswith(f"{self.path}:6: unknown option 'model.colour'"))
        self.assertTrue(diagnostics[3].startswith(f"{self.path}:7: model.dropout"))

    def test_invalid_yaml(self):
        diagnostics = self._diagnostics("model:\n  horizons: [10, 30\n")
        self.assertIn("invalid YAML", diagnostics[0])

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(Path(self.tmp.name) / "absent.yaml")

    @parameterized.expand([
        ("k_order", "clustering:\n  k-min: 5\n  k-max: 2\n", "k-min"),
        ("k_vehicles", "scenario:\n  n-vehicles: 4\n", "k-max"),
        ("split", "training:\n  split: [0.5, 0.2, 0.1]\n", "training.split"),
        ("cnn_history", "model:\n  history-len: 8\n  conv-kernel: 5\n", "history-len"),
        ("seeds", "evaluation:\n  seeds: []\n", "seeds"),
        ("families", "model:\n  families: []\n", "families"),
        ("weights", "archetypes:\n  styles:\n    - {label: a, mean-speed: 20, mean-accel: 0.1, accel-range: 1, weight: 0.4}\n", "weights"),
        ("style_keys", "archetypes:\n  styles:\n    - {label: a, weight: 1.0}\n", "missing"),
    ])
    def test_cross_checks(self, _, text, fragment):
        diagnostics = [d for d in self._diagnostics(text) if fragment in d]
        self.assertTrue(diagnostics)
        # every case sets its first offending option on line 2
        self.assertTrue(diagnostics[0].startswith(f"{self.path}:2: "), diagnostics)

    def test_cross_check_line_of_option_set_in_file(self):
        # k-max keeps its default, so the line is that of n-vehicles
        diagnostics = self._diagnostics("clustering:\n  restarts: 2\nscenario:\n  n-vehicles: 4\n")
        self.assertEqual(diagnostics, [f"{self.path}:4: clustering: k-max exceeds the number of vehicles"])

    def test_invalid_command_line_jobs(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config(jobs=0)
        self.assertTrue(ctx.exception.diagnostics[0].startswith("--jobs"))

    def test_custom_styles(self):
        config = load_config(
            self._write(
                """
                archetypes:
                  noise-scale: 0.0
                  styles:
                    - {label: calm, mean-speed: 20, mean-accel: 0.05, accel-range: 0.6, weight: 0.5}
                    - {label: brisk, mean-speed: 27, mean-accel: 0.15, accel-range: 1.2, weight: 0.5}
                """
            )
        )
        self.assertEqual([a.label for a in config.archetypes], ["calm", "brisk"])
        self.assertEqual(config.archetypes[1].mean_speed, 27.0)
        self.assertEqual(config.archetypes[0].noise_scale, 0.0)

    def test_written_config_loads_back(self):
        config = load_config(
            self._write(
                """
                scenario:
                  n-vehicles: 40
                  duration: 1200
                clustering:
                  k-max: 3
                  criterion: bic
                evaluation:
                  window-minutes: [1, 15]
                """
            ),
            seed=5,
        )
        resolved = Path(self.tmp.name) / "resolved.yaml"
        write_config(config, resolved)
        self.assertEqual(load_config(resolved), config)


class TestCheckOption(unittest.TestCase):
    def setUp(self):
        self.schema = load_schema()

    @parameterized.expand([
        ("int_ok", "scenario", "n-vehicles", 10, None),
        ("bool_is_not_int", "scenario", "n-vehicles", True, "expected int"),
        ("float_accepts_int", "scenario", "duration", 60, None),
        ("choice", "env", "span", "future", "is not one of"),
        ("maximum", "model", "dropout", 0.99, "above the maximum"),
        ("list_type", "model", "horizons", 10, "expected a list"),
        ("list_items", "model", "horizons", [10, "x"], "expected int"),
        ("list_choices", "model", "families", ["seq2seq", "gru"], "is not one of"),
    ])
    def test_option(self, _, section, option, value, problem):
        result = check_option(self.schema[section][option], value)
        if problem is None:
            self.assertIsNone(result)
        else:
            self.assertIn(problem, result)
