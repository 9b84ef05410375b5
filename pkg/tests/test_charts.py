"""
Tests des graphiques de métriques relatives et d'historique.
"""
import unittest
import sys
import tempfile
from pathlib import Path
from unittest import mock

import pandas as pd

# Ajouter le répertoire parent au path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.exceptions import VisualizationError
from src.visualization.charts import SegmentationCharts


class TestSegmentationCharts(unittest.TestCase):
    """Tests de SegmentationCharts."""

    def setUp(self):
        self.charts = SegmentationCharts()
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.relative = pd.DataFrame({
            "model_id": ["baseline", "baseline", "segclr", "segclr"],
            "seed": [0, 1, 0, 1],
            "domain": ["tgt"] * 4,
            "rel_dice": [0.0, 0.0, 4.0, 6.0],
            "rel_uvd": [0.0, 0.0, -3.0, -1.0],
        })
        self.bands = pd.DataFrame({
            "model_id": ["segclr", "segclr"],
            "domain": ["tgt", "tgt"],
            "metric": ["rel_dice", "rel_uvd"],
            "mean": [5.0, -2.0],
            "ci_low": [-7.7, -14.7],
            "ci_high": [17.7, 10.7],
        })
        self.history = pd.DataFrame({
            "loss_total": [3.0, 2.0],
            "loss_sup": [0.1, 0.05],
            "loss_con_source": [1.0, 0.9],
            "loss_con_target": [1.1, 1.0],
            "val_dice": [40.0, 55.0],
        })

    def tearDown(self):
        self.charts.close_all()
        self.tmp.cleanup()

    def test_relative_metrics_saved(self):
        path = self.root / "relative_tgt.png"
        self.charts.plot_relative_metrics(self.relative, self.bands, "tgt", save_path=path)
        self.assertTrue(path.exists())

    def test_unknown_domain(self):
        with self.assertRaises(VisualizationError):
            self.charts.plot_relative_metrics(self.relative, self.bands, "absent")

    def test_relative_metrics_failure_keeps_cause(self):
        with mock.patch("src.visualization.charts.plt.subplots", side_effect=RuntimeError("backend")):
            with self.assertRaises(VisualizationError) as context:
                self.charts.plot_relative_metrics(self.relative, self.bands, "tgt")
        self.assertIsInstance(context.exception.__cause__, RuntimeError)
        self.assertIn("backend", str(context.exception))

    def test_training_history_saved(self):
        path = self.root / "history.png"
        self.charts.plot_training_history(self.history, save_path=path)
        self.assertTrue(path.exists())

    def test_empty_history(self):
        with self.assertRaises(VisualizationError):
            self.charts.plot_training_history(pd.DataFrame())

    def test_training_history_failure_keeps_cause(self):
        with mock.patch("src.visualization.charts.plt.subplots", side_effect=RuntimeError("backend")):
            with self.assertRaises(VisualizationError) as context:
                self.charts.plot_training_history(self.history)
        self.assertIsInstance(context.exception.__cause__, RuntimeError)


if __name__ == '__main__':
    unittest.main(verbosity=2)
