"""
Petits jeux de données partagés par les tests.
"""
from dataclasses import replace

from src.core.models import (AppearanceSpec, ArchitectureSpec, ContentSpec, DomainSpec, ExperimentConfig,
                             GLOBAL_CLASSES)
from src.data.catalog import DomainCatalog
from src.data.synthdata import generate_domain, split_dataset


def small_spec(domain_id: str = "dom_a", n_volumes: int = 6, slices: int = 4, size: int = 16,
               **kwargs) -> DomainSpec:
    return DomainSpec(domain_id=domain_id, n_volumes=n_volumes, slices_per_volume=slices,
                      slice_shape=(size, size), **kwargs)


def small_catalog(size: int = 16, n_volumes: int = 6) -> DomainCatalog:
    """Catalogue en mémoire : une source et une cible qui ne diffère que par l'apparence."""
    source = small_spec("src", n_volumes=n_volumes, size=size)
    target = small_spec("tgt", n_volumes=n_volumes, size=size,
                        appearance=AppearanceSpec(noise_std=0.1, contrast_gain=0.7, blur_sigma=0.5),
                        class_set=GLOBAL_CLASSES[:2])
    splits = {spec.domain_id: split_dataset(generate_domain(spec, 3), (0.5, 0.25, 0.25), 3)
              for spec in (source, target)}
    return DomainCatalog.from_splits(splits)


def small_config(**overrides) -> ExperimentConfig:
    arch = ArchitectureSpec(depth=2, base_channels=4, input_shape=(16, 16), mlp_units=16,
                            groupnorm_groups=2)
    config = ExperimentConfig(name="test", source_domains=("src",), target_domains=("tgt",),
                              epochs=2, batch_size_sup=2, batch_size_con=2, seeds=(0,),
                              arch=arch, sigma_um=150.0)
    return replace(config, **overrides)


def three_domain_catalog(size: int = 16, n_volumes: int = 6) -> DomainCatalog:
    """Catalogue en mémoire à trois domaines : apparence, puis contenu et classes différents."""
    specs = (
        small_spec("src", n_volumes=n_volumes, size=size),
        small_spec("tgt", n_volumes=n_volumes, size=size,
                   appearance=AppearanceSpec(noise_std=0.1, contrast_gain=0.7, blur_sigma=0.5)),
        small_spec("dis", n_volumes=n_volumes, size=size, class_set=GLOBAL_CLASSES[:2],
                   content=ContentSpec(lesion_density=5.0, lesion_scale=3.5)),
    )
    splits = {spec.domain_id: split_dataset(generate_domain(spec, 3), (0.5, 0.25, 0.25), 3)
              for spec in specs}
    return DomainCatalog.from_splits(splits)
