"""Pseudo-label refiner: accept a pseudo-label for an unlabelled target
instance only when the classifier argmax and the nearest labelled centroid
(by cosine similarity) agree."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import class_centroids


@dataclass(frozen=True)
class PseudoLabelAssignment:
    index: int
    y_nn: int
    y_gs: int
    accepted: bool
    epoch: int


@dataclass
class RefineResult:
    y_nn: np.ndarray
    y_gs: np.ndarray
    accepted: np.ndarray  # boolean mask over TU
    epoch: int = 0

    @property
    def accepted_idx(self) -> np.ndarray:
        return np.flatnonzero(self.accepted)

    @property
    def accepted_labels(self) -> np.ndarray:
        return self.y_nn[self.accepted]

    @property
    def accepted_count(self) -> int:
        return int(self.accepted.sum())

    @property
    def acceptance_rate(self) -> float:
        return self.accepted_count / max(self.accepted.size, 1)

    def histogram(self, n_classes: int) -> np.ndarray:
        return np.bincount(self.accepted_labels, minlength=n_classes)

    def assignments(self) -> list[PseudoLabelAssignment]:
        return [
            PseudoLabelAssignment(i, int(a), int(b), bool(c), self.epoch)
            for i, (a, b, c) in enumerate(zip(self.y_nn, self.y_gs, self.accepted))
        ]

    def precision(self, truth: np.ndarray) -> float:
        """Fraction of accepted pseudo-labels that are correct (nan if none accepted)."""
        if self.accepted_count == 0:
            return float("nan")
        return float(np.mean(self.accepted_labels == np.asarray(truth)[self.accepted]))


def labeled_centroids(labeled: list[tuple[np.ndarray, np.ndarray]], n_classes: int, literal_total: bool = False):
    """Per-class centroids over the union of labelled (features, labels) pairs.

    ``literal_total`` divides each class sum by the size of the whole union.
    """
    feats = np.vstack([np.asarray(f, dtype=np.float64) for f, _ in labeled])
    labels = np.concatenate([np.asarray(y, dtype=np.int64) for _, y in labeled])
    return class_centroids(feats, labels, n_classes, literal_total)


def cosine_matrix(F: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity; any pair with a zero vector scores -1."""
    nf = np.linalg.norm(F, axis=1)
    nc = np.linalg.norm(C, axis=1)
    denom = np.outer(nf, nc)
    ok = denom > 0
    out = np.full(denom.shape, -1.0)
    out[ok] = (F @ C.T)[ok] / denom[ok]
    return out


def cosine_similarity(a, b) -> float:
    return float(cosine_matrix(np.atleast_2d(a), np.atleast_2d(b))[0, 0])


def geometric_labels(F: np.ndarray, centroids: np.ndarray, present: np.ndarray | None = None) -> np.ndarray:
    sims = cosine_matrix(np.atleast_2d(F), centroids)
    if present is not None:
        sims[:, ~present] = -np.inf
    # argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(sims, axis=1)


def geometric_label(f_u, centroids: np.ndarray, present: np.ndarray | None = None) -> int:
    return int(geometric_labels(np.atleast_2d(f_u), centroids, present)[0])


def refine(logits_TU: np.ndarray, f_TU: np.ndarray, centroids: np.ndarray,
           present: np.ndarray | None = None, epoch: int = 0, use_consensus: bool = True) -> RefineResult:
    """Consensus pseudo-labelling of TU.

    With ``use_consensus=False`` every instance keeps its classifier label
    (the no-refiner ablation).
    """
    y_nn = np.argmax(np.asarray(logits_TU), axis=1)
    y_gs = geometric_labels(np.asarray(f_TU), centroids, present)
    accepted = (y_nn == y_gs) if use_consensus else np.ones_like(y_nn, dtype=bool)
    return RefineResult(y_nn=y_nn, y_gs=y_gs, accepted=accepted, epoch=epoch)
