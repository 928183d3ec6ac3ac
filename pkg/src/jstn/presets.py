"""Named synthetic scenarios used by the CLI, the tests and the acceptance suite.

All presets share the heterogeneous shape: SN, SI and T observe the same
five latent classes through 12, 8 and 10 features, 200 rows per class.

- ``clean``: well separated classes, no corruption. Both JSTN and a
  target-only learner approach 100%.
- ``separable``: classes remain separable in the latent space, but the target
  carries strong noise in the seven feature directions that hold no class
  information. Ninety or so labelled rows are too few to learn to ignore it,
  while the unlabelled rows and the source alignment can.
- ``hard``: ``separable`` plus isotropic noise on the auxiliary source and
  the target, and perturbed class geometry on SI. It also applies an
  observed-space shift, which shows up in synthesized CSVs but is removed by
  per-domain z-scoring before training.
- ``tiny``: a small, fast problem for unit tests.
"""

from __future__ import annotations

from dataclasses import replace
from functools import partial
from pathlib import Path

from .data import SHARED_CATEGORIES, DomainDataset, DomainEntry, Manifest, SynthSpec, save_csv, synth_domains

_BASE = SynthSpec()

PRESETS: dict[str, SynthSpec] = {
    "clean": _BASE,
    "separable": replace(_BASE, separation=5.0, nuisance={"T": 10.0}),
    "hard": replace(
        _BASE,
        separation=5.0,
        nuisance={"T": 10.0},
        noise={"SI": 0.5, "T": 0.3},
        shift={"SI": 1.0, "T": 1.0},
        rotation={"SI": 0.5},
    ),
    "tiny": replace(_BASE, dims={"SN": 6, "SI": 5, "T": 4}, per_class={"SN": 20, "SI": 12, "T": 33},
                    n_classes=3, latent_dim=2),
}


def preset_spec(name: str, seed: int = 0) -> SynthSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return replace(PRESETS[name], seed=seed)


def preset_domains(name: str, seed: int = 0) -> dict[str, DomainDataset]:
    return synth_domains(preset_spec(name, seed)).domains


def preset_source(name: str):
    """A picklable ``seed -> domains`` callable for the ablation harness."""
    preset_spec(name)
    return partial(preset_domains, name)


def write_synthetic(spec: SynthSpec, out_dir, classes: list[str] | None = None) -> Manifest:
    """Write each synthetic domain as ``<role>.csv`` plus ``manifest.json``.

    Class names default to the shared intrusion categories when K = 5.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if classes is None:
        classes = list(SHARED_CATEGORIES) if spec.n_classes == len(SHARED_CATEGORIES) else \
            [f"class{k}" for k in range(spec.n_classes)]
    entries = []
    for role, ds in synth_domains(spec).domains.items():
        cols = save_csv(ds, out / f"{role}.csv", classes)
        entries.append(DomainEntry(role=role, path=f"{role}.csv", label_column="label", feature_columns=cols,
                                   name=f"synthetic_{role}"))
    manifest = Manifest(classes, entries)
    manifest.dump(out / "manifest.json")
    return manifest
