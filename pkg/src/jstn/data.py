"""Domain datasets: CSV ingestion, per-domain normalisation, stratified
labelled/unlabelled target splits and a synthetic heterogeneous generator.

Labels are stored as 0-based class indices into a shared class list.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, SchemaError

ROLES = ("SN", "SI", "T", "TL", "TU")
SHARED_CATEGORIES = ("benign", "dos", "ddos", "reconnaissance", "password")


@dataclass
class DomainDataset:
    name: str
    role: str
    X: np.ndarray
    y: np.ndarray | None = None
    n_classes: int = 5
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    # TU ground truth, held for evaluation only; never read by training code
    y_eval: np.ndarray | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise DataError(f"unknown role {self.role!r}")
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise DataError(f"{self.name}: feature matrix must be 2-D")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape[0] != self.X.shape[0]:
                raise DataError(f"{self.name}: {self.X.shape[0]} rows but {self.y.shape[0]} labels")
            if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
                raise DataError(f"{self.name}: labels outside [0, {self.n_classes - 1}]")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def class_counts(self) -> np.ndarray:
        y = self.y if self.y is not None else self.y_eval
        if y is None:
            return np.zeros(self.n_classes, dtype=int)
        return np.bincount(y, minlength=self.n_classes)


def check_domains(domains: dict[str, DomainDataset]) -> None:
    ks = {ds.n_classes for ds in domains.values()}
    if len(ks) > 1:
        raise DataError(f"domains disagree on the number of classes: {sorted(ks)}")
    sn, si = domains.get("SN"), domains.get("SI")
    if sn is not None and si is not None and not si.n < sn.n:
        warnings.warn(f"source II domain ({si.n} rows) is not smaller than source NI ({sn.n} rows)", UserWarning)
    tu = domains.get("TU")
    if tu is not None and tu.y is not None:
        raise DataError("TU must not carry training labels (use y_eval for held-out truth)")


# ---------------------------------------------------------------------------
# CSV


def load_csv(path, label_column: str | None, feature_columns: list[str] | None, classes: list[str],
             role: str = "T", name: str | None = None, delimiter: str = ",",
             label_map: dict[str, str] | None = None) -> DomainDataset:
    """Read a CSV with a header row into a dataset.

    Raw label strings go through ``label_map`` (alias -> class name) if given
    and must then name one of ``classes``. ``feature_columns=None`` takes every
    column except the label.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        dupes = sorted({h for h in header if header.count(h) > 1})
        if dupes:
            raise SchemaError(f"{path}: duplicate header names {dupes}")
        if label_column is not None and label_column not in header:
            raise SchemaError(f"{path}: missing label column {label_column!r}")
        if feature_columns is None:
            feature_columns = [h for h in header if h != label_column]
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing feature columns {missing}")
        fidx = [header.index(c) for c in feature_columns]
        lidx = header.index(label_column) if label_column is not None else None
        class_index = {c: i for i, c in enumerate(classes)}
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            vals = []
            for j in fidx:
                try:
                    vals.append(float(row[j]))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-numeric value {row[j]!r} in column {header[j]!r}") from None
            rows.append(vals)
            if lidx is not None:
                raw = row[lidx].strip()
                mapped = label_map.get(raw, raw) if label_map else raw
                if mapped not in class_index:
                    raise DataError(f"{path}:{lineno}: label {raw!r} is not in the class mapping")
                labels.append(class_index[mapped])
    if not rows:
        raise DataError(f"{path}: no data rows")
    y = np.asarray(labels, dtype=np.int64) if lidx is not None else None
    return DomainDataset(name or path.stem, role, np.asarray(rows), y, n_classes=len(classes))


def save_csv(ds: DomainDataset, path, classes: list[str], feature_prefix: str = "f", label_column: str = "label") -> list[str]:
    """Write a dataset so that :func:`load_csv` restores it bit-exactly. Returns the feature column names."""
    cols = [f"{feature_prefix}{j}" for j in range(ds.d)]
    y = ds.y if ds.y is not None else ds.y_eval
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols + ([label_column] if y is not None else []))
        for i in range(ds.n):
            # repr() of a Python float is the shortest string that round-trips
            row = [repr(float(v)) for v in ds.X[i]]
            if y is not None:
                row.append(classes[int(y[i])])
            w.writerow(row)
    return cols


@dataclass
class DomainEntry:
    role: str
    path: str
    label_column: str | None = "label"
    feature_columns: list[str] | None = None
    delimiter: str = ","
    name: str | None = None


@dataclass
class Manifest:
    classes: list[str]
    domains: list[DomainEntry]
    label_map: dict[str, str] = field(default_factory=dict)
    base_dir: Path = Path(".")

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise DataError(f"{path}: manifest not found")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: manifest is not valid JSON ({exc})") from None
        try:
            domains = [DomainEntry(**d) for d in raw["domains"]]
            classes = list(raw["classes"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: malformed manifest ({exc})") from None
        return cls(classes, domains, dict(raw.get("label_map", {})), path.parent)

    def dump(self, path) -> None:
        doc = {
            "classes": self.classes,
            "label_map": self.label_map,
            "domains": [{k: v for k, v in vars(d).items() if v is not None} for d in self.domains],
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    def read(self) -> dict[str, DomainDataset]:
        out = {}
        for entry in self.domains:
            p = Path(entry.path)
            if not p.is_absolute():
                p = self.base_dir / p
            role = entry.role
            label_col = entry.label_column
            ds = load_csv(p, label_col, entry.feature_columns, self.classes, role=role,
                          name=entry.name, delimiter=entry.delimiter, label_map=self.label_map)
            if role == "TU" and ds.y is not None:
                ds = replace(ds, y=None, y_eval=ds.y)
            if role in out:
                raise DataError(f"manifest lists role {role} twice")
            out[role] = ds
        if "SN" not in out and "SI" not in out:
            raise DataError("manifest needs at least one source domain (SN or SI)")
        if "T" not in out and "TL" not in out:
            raise DataError("manifest needs a target domain (T, or TL with TU)")
        return out


# ---------------------------------------------------------------------------
# normalisation, splitting, subsampling


def normalize(stats_from: DomainDataset, apply_to: DomainDataset | None = None) -> DomainDataset:
    """Per-feature z-score using statistics of ``stats_from``; zero-variance
    features are only centred."""
    target = stats_from if apply_to is None else apply_to
    mean = stats_from.X.mean(axis=0)
    std = stats_from.X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return replace(target, X=(target.X - mean) / std, mean=mean, std=std)


@dataclass(frozen=True)
class SplitSpec:
    labeled: int = 1
    unlabeled: int = 10
    stratified: bool = True
    seed: int = 0

    @classmethod
    def parse(cls, ratio: str, stratified: bool = True, seed: int = 0) -> "SplitSpec":
        try:
            a, b = (int(t) for t in str(ratio).split(":"))
        except ValueError:
            raise ValueError(f"ratio must look like '1:10', got {ratio!r}") from None
        if a <= 0 or b <= 0:
            raise ValueError(f"ratio parts must be positive, got {ratio!r}")
        return cls(a, b, stratified, seed)

    @property
    def ratio(self) -> str:
        return f"{self.labeled}:{self.unlabeled}"


def _largest_remainder(counts: np.ndarray, total: int) -> np.ndarray:
    exact = counts * total / counts.sum()
    base = np.floor(exact).astype(int)
    short = total - base.sum()
    order = np.argsort(-(exact - base), kind="stable")
    base[order[:short]] += 1
    return np.minimum(base, counts)


def split_target(full: DomainDataset, spec: SplitSpec) -> tuple[DomainDataset, DomainDataset]:
    """Split a labelled target into TL and TU at the spec's ratio.

    TU keeps its truth in ``y_eval`` only.
    """
    if full.y is None:
        raise DataError("target split needs labels on the full target")
    rng = np.random.default_rng(spec.seed)
    n = full.n
    n_tl = int(round(n * spec.labeled / (spec.labeled + spec.unlabeled)))
    n_tl = min(max(n_tl, 1), n - 1)
    if spec.stratified:
        counts = np.bincount(full.y, minlength=full.n_classes)
        alloc = _largest_remainder(counts, n_tl)
        if alloc.sum() < n_tl:
            warnings.warn("stratified split could not honour the ratio exactly", UserWarning)
        starved = np.flatnonzero((counts > 0) & (alloc == 0))
        if starved.size:
            warnings.warn(f"classes {starved.tolist()} get no labelled target instance", UserWarning)
        tl_idx = []
        for k in range(full.n_classes):
            members = np.flatnonzero(full.y == k)
            tl_idx.append(rng.permutation(members)[: alloc[k]])
        tl_idx = np.sort(np.concatenate(tl_idx))
    else:
        tl_idx = np.sort(rng.permutation(n)[:n_tl])
    mask = np.zeros(n, dtype=bool)
    mask[tl_idx] = True
    tl = replace(full, name=f"{full.name}_TL", role="TL", X=full.X[mask], y=full.y[mask])
    tu = replace(full, name=f"{full.name}_TU", role="TU", X=full.X[~mask], y=None, y_eval=full.y[~mask])
    return tl, tu


def stratified_subsample(ds: DomainDataset, n: int, seed: int = 0) -> DomainDataset:
    """Seeded class-proportional subsample of ``n`` rows."""
    if n >= ds.n:
        return ds
    y = ds.y if ds.y is not None else ds.y_eval
    rng = np.random.default_rng(seed)
    if y is None:
        idx = np.sort(rng.permutation(ds.n)[:n])
    else:
        alloc = _largest_remainder(np.bincount(y, minlength=ds.n_classes), n)
        idx = np.sort(np.concatenate([rng.permutation(np.flatnonzero(y == k))[: alloc[k]] for k in range(ds.n_classes)]))
    return replace(ds, X=ds.X[idx], y=None if ds.y is None else ds.y[idx],
                   y_eval=None if ds.y_eval is None else ds.y_eval[idx])


# ---------------------------------------------------------------------------
# synthetic heterogeneous domains


@dataclass(frozen=True)
class SynthSpec:
    """Gaussian classes in a shared latent space, viewed by each domain
    through its own orthonormal linear map.

    ``separation`` is the minimum distance between latent class means in
    units of ``within_std``. ``rotation`` perturbs each domain's copy of the
    class means (a per-domain random offset of that many within-stds),
    ``shift`` adds a constant offset in observed space, ``noise`` adds
    isotropic observed-space noise and ``nuisance`` adds noise confined to
    the directions orthogonal to the class-carrying subspace. All are
    per-domain dicts.
    """

    dims: dict = field(default_factory=lambda: {"SN": 12, "SI": 8, "T": 10})
    n_classes: int = 5
    per_class: dict = field(default_factory=lambda: {"SN": 200, "SI": 200, "T": 200})
    latent_dim: int = 3
    separation: float = 6.0
    within_std: float = 1.0
    noise: dict = field(default_factory=lambda: {"SN": 0.0, "SI": 0.0, "T": 0.0})
    shift: dict = field(default_factory=lambda: {"SN": 0.0, "SI": 0.0, "T": 0.0})
    rotation: dict = field(default_factory=lambda: {"SN": 0.0, "SI": 0.0, "T": 0.0})
    nuisance: dict = field(default_factory=lambda: {"SN": 0.0, "SI": 0.0, "T": 0.0})
    seed: int = 0


@dataclass
class SynthResult:
    domains: dict[str, DomainDataset]
    latent_means: np.ndarray
    latent: dict[str, np.ndarray]


def _class_means(rng, K: int, m: int, min_dist: float) -> np.ndarray:
    best, best_gap = None, -1.0
    for _ in range(64):
        M = rng.standard_normal((K, m))
        gaps = np.linalg.norm(M[:, None] - M[None], axis=2)[np.triu_indices(K, 1)]
        if gaps.min() > best_gap:
            best, best_gap = M, gaps.min()
    return best * (min_dist / best_gap)


def synth_domains(spec: SynthSpec = SynthSpec()) -> SynthResult:
    K, m = spec.n_classes, spec.latent_dim
    if K < 2:
        raise ValueError("need at least two classes")
    for role in ("SN", "SI", "T"):
        if role in spec.dims and (spec.per_class.get(role, 0) <= 0 or spec.dims[role] < m):
            raise ValueError(f"{role}: need positive counts and at least latent_dim={m} features")
    rng = np.random.default_rng(spec.seed)
    means = _class_means(rng, K, m, spec.separation * spec.within_std)
    domains, latent = {}, {}
    for role in ("SN", "SI", "T"):
        if role not in spec.dims:
            continue
        d, n_k = int(spec.dims[role]), int(spec.per_class[role])
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        A, N = Q[:, :m], Q[:, m:]
        offset = rng.standard_normal((K, m)) * spec.rotation.get(role, 0.0) * spec.within_std
        y = np.repeat(np.arange(K), n_k)
        z = means[y] + offset[y] + spec.within_std * rng.standard_normal((y.size, m))
        X = z @ A.T
        X += (spec.nuisance.get(role, 0.0) * rng.standard_normal((y.size, d - m))) @ N.T
        X += spec.shift.get(role, 0.0) * rng.standard_normal(d)
        X += spec.noise.get(role, 0.0) * rng.standard_normal(X.shape)
        perm = rng.permutation(y.size)
        domains[role] = DomainDataset(f"synth_{role}", role, X[perm], y[perm], n_classes=K)
        latent[role] = z[perm]
    return SynthResult(domains, means, latent)
