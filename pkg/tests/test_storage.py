"""
Tests de la persistance des jeux de données et du catalogue de domaines.
"""
import unittest
import sys
import tempfile
from pathlib import Path

# Ajouter le répertoire parent au path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.exceptions import DatasetIOError
from src.data.catalog import DomainCatalog
from src.data.storage import MANIFEST_NAME, load_dataset, save_dataset
from src.data.synthdata import generate_domain, split_dataset
from tests.fixtures import small_spec


class TestDatasetStorage(unittest.TestCase):
    """Tests de save_dataset / load_dataset."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        volumes = generate_domain(small_spec(n_volumes=4, labeled_slices_per_volume=2), seed=2)
        self.split = split_dataset(volumes, (0.5, 0.25, 0.25), seed=2)

    def tearDown(self):
        self.tmp.cleanup()

    def test_save_then_load_is_bit_identical(self):
        save_dataset(self.split, self.root / "dom_a")
        loaded = load_dataset(self.root / "dom_a")
        self.assertEqual(loaded.sizes, self.split.sizes)
        for name in ("train", "val", "test"):
            for original, reloaded in zip(self.split.get(name), loaded.get(name)):
                self.assertTrue(original.equals(reloaded), original.volume_id)

    def test_rewrite_gives_identical_bytes(self):
        save_dataset(self.split, self.root / "a")
        save_dataset(self.split, self.root / "b")
        for path in sorted((self.root / "a").rglob("*")):
            if path.is_file():
                twin = self.root / "b" / path.relative_to(self.root / "a")
                self.assertEqual(path.read_bytes(), twin.read_bytes(), path.name)

    def test_truncated_payload(self):
        directory = save_dataset(self.split, self.root / "dom_a")
        payload = next((directory / "train").glob("*.img"))
        payload.write_bytes(payload.read_bytes()[:-4])
        with self.assertRaises(DatasetIOError) as context:
            load_dataset(directory)
        self.assertIn("Incohérence de forme", str(context.exception))

    def test_missing_manifest(self):
        directory = save_dataset(self.split, self.root / "dom_a")
        (directory / "val" / MANIFEST_NAME).unlink()
        with self.assertRaises(DatasetIOError):
            load_dataset(directory)

    def test_corrupt_manifest(self):
        directory = save_dataset(self.split, self.root / "dom_a")
        manifest = directory / "test" / MANIFEST_NAME
        manifest.write_text(manifest.read_text(encoding="utf-8").replace("volumes = 1", "volumes = 3"),
                            encoding="utf-8")
        with self.assertRaises(DatasetIOError):
            load_dataset(directory)

    def test_missing_directory(self):
        with self.assertRaises(DatasetIOError):
            load_dataset(self.root / "absent")


class TestDomainCatalog(unittest.TestCase):
    """Tests du catalogue paresseux et du comptage des lectures."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        for index, domain in enumerate(("dom_a", "dom_b")):
            volumes = generate_domain(small_spec(domain, n_volumes=4), seed=index)
            save_dataset(split_dataset(volumes, (0.5, 0.25, 0.25), seed=index), self.root / domain)

    def tearDown(self):
        self.tmp.cleanup()

    def test_lazy_loading_and_counts(self):
        catalog = DomainCatalog(self.root)
        self.assertEqual(catalog.available_domains(), ["dom_a", "dom_b"])
        self.assertEqual(catalog.read_counts(), {})

        samples = catalog.labeled_samples("dom_a")
        self.assertEqual(len(samples), 2 * 4)
        volume, index = samples[0]
        self.assertEqual(volume.domain_id, "dom_a")
        self.assertIn(index, volume.labeled_slice_indices)

        catalog.unlabeled_volumes("dom_a")
        counts = catalog.read_counts()
        self.assertEqual(counts["dom_a"]["file_loads"], 1)
        self.assertEqual(counts["dom_a"]["label_reads"], 1)
        self.assertEqual(counts["dom_a"]["unlabeled_reads"], 1)
        self.assertEqual(catalog.reads_for("dom_b"), 0)

    def test_unknown_domain(self):
        with self.assertRaises(DatasetIOError):
            DomainCatalog(self.root).labeled_samples("dom_z")

    def test_merge_and_reset(self):
        catalog = DomainCatalog(self.root)
        catalog.merge_counts({"dom_b": {"unlabeled_reads": 2}})
        self.assertEqual(catalog.reads_for("dom_b"), 2)
        catalog.reset_counts()
        self.assertEqual(catalog.read_counts(), {})

    def test_in_memory_catalog(self):
        volumes = generate_domain(small_spec("mem", n_volumes=4), seed=0)
        catalog = DomainCatalog.from_splits({"mem": split_dataset(volumes, (0.5, 0.25, 0.25), 0)})
        self.assertEqual(len(catalog.evaluation_volumes("mem")), 1)
        self.assertEqual(len(catalog.unlabeled_volumes("mem")), 2)
        self.assertNotIn("file_loads", catalog.read_counts()["mem"])
        self.assertEqual(catalog.read_counts()["mem"]["evaluation_reads"], 1)


if __name__ == '__main__':
    unittest.main(verbosity=2)
