"""
Tests du chargement des configurations YAML.
"""
import unittest
import sys
import tempfile
from pathlib import Path

# Ajouter le répertoire parent au path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.config import (config_hash, load_experiment_plan, load_generation_config,
                             parse_experiment_plan, parse_generation_config, read_yaml)
from src.core.exceptions import ConfigurationError
from src.core.models import BASELINE, SEGCLR, SIMSIAM_PRETRAIN, UPPER_BOUND

CONFIG_DIR = Path(__file__).parent.parent / "configs"


class TestExperimentPlan(unittest.TestCase):
    """Tests de parse_experiment_plan."""

    def setUp(self):
        self.document = {
            "name": "exp",
            "source_domains": ["a"],
            "target_domains": ["b"],
            "seeds": [0, 1],
            "loss": {"tau": 0.1},
            "models": [
                {"name": "base", "model_variant": "baseline_unet"},
                {"name": "seg", "model_variant": "segclr", "pairing": "s+a"},
            ],
        }

    def assertConfigError(self, document, fragment):
        with self.assertRaises(ConfigurationError) as context:
            parse_experiment_plan(document)
        self.assertIn(fragment, str(context.exception))

    def test_models_inherit_common_fields(self):
        plan = parse_experiment_plan(self.document)
        self.assertEqual(plan.model_ids, ["base", "seg"])
        self.assertEqual(plan.baseline_model, "base")
        seg = plan.get("seg")
        self.assertEqual(seg.pairing, "s+a")
        self.assertEqual(seg.loss.tau, 0.1)
        self.assertEqual(seg.loss.lambda_sup, 20.0)
        self.assertEqual(seg.source_domains, ("a",))
        self.assertEqual(plan.seeds, [0, 1])

    def test_nested_override_is_merged(self):
        self.document["models"][1]["loss"] = {"lambda_sup": 5.0}
        seg = parse_experiment_plan(self.document).get("seg")
        self.assertEqual(seg.loss.tau, 0.1)
        self.assertEqual(seg.loss.lambda_sup, 5.0)

    def test_error_names_field_path(self):
        self.document["models"][1]["loss"] = {"tau": "chaud"}
        self.assertConfigError(self.document, "models[1].loss.tau")

    def test_validation_error_names_field_path(self):
        self.document["models"][1]["loss"] = {"tau": -1.0}
        self.assertConfigError(self.document, "models[1].loss.tau")

    def test_unknown_key(self):
        self.document["learning_rate"] = 0.1
        self.assertConfigError(self.document, "learning_rate: clé inconnue")

    def test_invalid_augment(self):
        self.document["augment"] = {"p_hflip": 2.0}
        self.assertConfigError(self.document, "augment.p_hflip")

    def test_projection_must_match_head(self):
        self.document["models"][1]["projection"] = "pool"
        self.assertConfigError(self.document, "arch.head_kind")

    def test_duplicate_and_unknown_baseline(self):
        self.document["models"][1]["name"] = "base"
        self.assertConfigError(self.document, "dupliqués")
        self.document["models"][1]["name"] = "seg"
        self.document["baseline_model"] = "absent"
        self.assertConfigError(self.document, "baseline_model")

    def test_source_and_target_overlap(self):
        self.document["target_domains"] = ["a"]
        self.assertConfigError(self.document, "target_domains")

    def test_with_seeds(self):
        plan = parse_experiment_plan(self.document).with_seeds([4, 5, 6])
        self.assertTrue(all(c.seeds == (4, 5, 6) for c in plan.configs))
        with self.assertRaises(ConfigurationError):
            plan.with_seeds([])
        with self.assertRaises(ConfigurationError):
            plan.get("absent")

    def test_ablation_protocol(self):
        self.document["protocol"] = {"kind": "ablation", "fractions": [1.0, 0.25, 0.0]}
        plan = parse_experiment_plan(self.document)
        self.assertEqual(plan.model_ids, ["base", "seg_f1", "seg_f0.25", "seg_f0"])
        self.assertEqual(plan.get("seg_f0.25").unlabeled_fraction, 0.25)
        self.assertEqual(plan.protocol, "ablation")
        self.document["protocol"] = {"kind": "ablation", "fractions": [2.0]}
        self.assertConfigError(self.document, "fractions")

    def test_dg_grid_protocol(self):
        document = {"name": "dg", "seeds": [0], "protocol": {"kind": "dg_grid", "domains": ["x", "y"]}}
        plan = parse_experiment_plan(document)
        self.assertEqual(len(plan.configs), 6)
        self.assertEqual(plan.baseline_model, "dg_baseline_unet_x")
        self.assertTrue(all(c.target_domains == () for c in plan.configs))
        self.assertEqual(plan.get("dg_segclr_all").source_domains, ("x", "y"))

    def test_unknown_protocol(self):
        self.document["protocol"] = {"kind": "grid"}
        self.assertConfigError(self.document, "protocol.kind")


class TestGenerationConfig(unittest.TestCase):
    """Tests de parse_generation_config."""

    def test_error_names_domain_index(self):
        document = {"domains": [{"domain_id": "a"}, {"domain_id": "b", "slice_spacing": 0.0}]}
        with self.assertRaises(ConfigurationError) as context:
            parse_generation_config(document)
        self.assertIn("domains[1].slice_spacing", str(context.exception))

    def test_duplicate_domain(self):
        with self.assertRaises(ConfigurationError):
            parse_generation_config({"domains": [{"domain_id": "a"}, {"domain_id": "a"}]})

    def test_invalid_split(self):
        with self.assertRaises(ConfigurationError):
            parse_generation_config({"domains": [{"domain_id": "a"}], "split": [0.5, 0.5, 0.5]})
        with self.assertRaises(ConfigurationError):
            parse_generation_config({"domains": []})


class TestShippedConfigs(unittest.TestCase):
    """Les fichiers de configurations/ se chargent sans erreur."""

    def test_domains(self):
        config = load_generation_config(CONFIG_DIR / "domains.yaml")
        self.assertEqual([d.domain_id for d in config.domains], ["device_a", "device_b", "disease_b"])
        self.assertEqual(config.domains[2].class_set, ("IRF", "SRF"))

    def test_experiment_files(self):
        for name in ("uda_device.yaml", "uda_disease.yaml", "ablation.yaml", "dg_grid.yaml",
                     "multi_domain.yaml"):
            plan = load_experiment_plan(CONFIG_DIR / name)
            self.assertTrue(plan.configs, name)
            self.assertIsNotNone(plan.baseline_model, name)

    def test_device_plan_variants(self):
        plan = load_experiment_plan(CONFIG_DIR / "uda_device.yaml")
        variants = {c.model_variant for c in plan.configs}
        self.assertTrue({BASELINE, SEGCLR, SIMSIAM_PRETRAIN, UPPER_BOUND} <= variants)
        self.assertEqual(plan.get("segclr_pool").arch.head_kind, "pool")

    def test_multi_domain_plan_uses_labeled_union(self):
        plan = load_experiment_plan(CONFIG_DIR / "multi_domain.yaml")
        every_domain = ("device_a", "device_b", "disease_b")
        union = plan.get("segclr_all")
        self.assertEqual(union.model_variant, SEGCLR)
        self.assertEqual(union.source_domains, every_domain)
        self.assertEqual(union.target_domains, ())
        self.assertEqual(union.labeled_domains, every_domain)
        self.assertFalse(union.uses_target_pool)
        for config in plan.configs:
            self.assertEqual(config.target_domains, (), config.name)
            self.assertFalse(config.uses_target_pool, config.name)
            self.assertEqual(tuple(config.domains_to_evaluate), every_domain, config.name)
        for domain in every_domain:
            self.assertEqual(plan.get(f"segclr_{domain}").source_domains, (domain,))
            self.assertEqual(plan.get(f"baseline_{domain}").model_variant, BASELINE)
        self.assertEqual(plan.baseline_model, "baseline_all")
        self.assertEqual(len(plan.seeds), 5)


class TestYaml(unittest.TestCase):
    """Tests de read_yaml et config_hash."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_invalid_documents(self):
        with self.assertRaises(ConfigurationError):
            read_yaml(self.root / "absent.yaml")
        (self.root / "list.yaml").write_text("- a\n- b\n", encoding="utf-8")
        with self.assertRaises(ConfigurationError):
            read_yaml(self.root / "list.yaml")
        (self.root / "bad.yaml").write_text("a: [1, 2\n", encoding="utf-8")
        with self.assertRaises(ConfigurationError):
            read_yaml(self.root / "bad.yaml")

    def test_hash_ignores_key_order(self):
        self.assertEqual(config_hash({"a": 1, "b": [1, 2]}), config_hash({"b": [1, 2], "a": 1}))
        self.assertNotEqual(config_hash({"a": 1}), config_hash({"a": 2}))


if __name__ == '__main__':
    unittest.main(verbosity=2)
