"""
Tests unitaires du gestionnaire d'expériences.
"""
import os
import unittest
import sys
import tempfile
from pathlib import Path
from unittest import mock

import pandas as pd

# Ajouter le répertoire parent au path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.exceptions import ConfigurationError, EvaluationError, ReportError
from src.core.manager import LOG_LEVEL_ENV, ExperimentManager, domain_seed


class TestExperimentManager(unittest.TestCase):
    """Tests de ExperimentManager."""

    def setUp(self):
        self.manager = ExperimentManager()
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_unknown_log_level(self):
        with mock.patch.dict(os.environ, {LOG_LEVEL_ENV: "BAVARD"}):
            with self.assertRaises(ConfigurationError):
                ExperimentManager()

    def test_domain_seeds_are_distinct(self):
        seeds = [domain_seed(0, i) for i in range(3)]
        self.assertEqual(len(set(seeds)), 3)
        self.assertEqual(seeds, [domain_seed(0, i) for i in range(3)])
        self.assertNotEqual(domain_seed(1, 0), seeds[0])

    def test_resolve_baseline(self):
        df = pd.DataFrame({"model_id": ["exp_baseline_unet", "exp_segclr"]})
        self.assertEqual(ExperimentManager._resolve_baseline(df, None), "exp_baseline_unet")
        self.assertEqual(ExperimentManager._resolve_baseline(df, "exp_segclr"), "exp_segclr")
        self.assertIsNone(ExperimentManager._resolve_baseline(df[df["model_id"] == "exp_segclr"], None))
        with self.assertRaises(EvaluationError):
            ExperimentManager._resolve_baseline(df, "absent")

    def test_load_manifest_errors(self):
        with self.assertRaises(EvaluationError):
            self.manager.load_manifest(self.root)
        (self.root / "run_manifest.json").write_text("{pas du json", encoding="utf-8")
        with self.assertRaises(EvaluationError):
            self.manager.load_manifest(self.root)

    def test_report_requires_models(self):
        with self.assertRaises(ReportError):
            self.manager.report([self.root / "absent.csv"], self.root / "out", models=[])


if __name__ == '__main__':
    unittest.main(verbosity=2)
