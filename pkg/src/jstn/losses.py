"""Loss terms of the joint semantic transfer objective and the
divergence-based source weighting.

Class labels are 0-based integer arrays throughout. Per-class statistics
skip classes that are absent from one side and renormalise over the
classes that remain; each skip is logged at debug level.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParameterError
from .errors import DataError

log = logging.getLogger(__name__)


def check_labels(labels, n_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        bad = y[(y < 0) | (y >= n_classes)][0]
        raise DataError(f"label {bad} outside [0, {n_classes - 1}]")
    return y


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def averaging_matrix(labels: np.ndarray, n_classes: int, literal_total: bool = False):
    """Rows k hold 1/n_k on members of class k (or 1/n when ``literal_total``).

    Returns the K x n matrix and a boolean mask of classes with members.
    """
    n = labels.size
    M = np.zeros((n_classes, n))
    if n:
        M[labels, np.arange(n)] = 1.0
    counts = M.sum(axis=1)
    present = counts > 0
    if literal_total:
        M = M / max(n, 1)
    else:
        M[present] /= counts[present, None]
    return M, present


def class_centroids(features: np.ndarray, labels, n_classes: int, literal_total: bool = False):
    """Per-class mean feature rows (K x d) plus the presence mask."""
    y = check_labels(labels, n_classes)
    M, present = averaging_matrix(y, n_classes, literal_total)
    return M @ np.asarray(features, dtype=np.float64), present


# ---------------------------------------------------------------------------
# supervised terms


def cross_entropy(logits: Node, labels, n_classes: int | None = None) -> Node:
    """Mean cross-entropy of plain softmax(logits) against integer labels."""
    K = logits.shape[1] if n_classes is None else n_classes
    y = check_labels(labels, K)
    if y.size != logits.shape[0]:
        raise DataError(f"{logits.shape[0]} logit rows but {y.size} labels")
    logp = ad.safe_log(ad.softmax(logits))
    picked = ad.sum(ad.mul(logp, ad.constant(one_hot(y, K))))
    return ad.scale(picked, -1.0 / y.size)


def supervision_loss(logits_S: Node, labels_S) -> Node:
    return cross_entropy(logits_S, labels_S)


def implicit_hard_loss(logits_TL: Node, labels_TL) -> Node:
    return cross_entropy(logits_TL, labels_TL)


# ---------------------------------------------------------------------------
# scenario semantic


def scenario_discriminator_loss(d_src: Node, d_tgt: Node) -> Node:
    """Domain BCE with sources labelled 1 and target labelled 0.

    ``d_src``/``d_tgt`` are clamped discriminator probabilities.
    """
    src_term = ad.mean(ad.safe_log(d_src))
    tgt_term = ad.mean(ad.safe_log(1.0 - d_tgt))
    return ad.scale(ad.add(src_term, tgt_term), -1.0)


def scenario_discriminator_loss_literal(d_src: np.ndarray, d_tgt: np.ndarray) -> float:
    """The printed form mean(log D_src) + mean(1 - log D_tgt); inspection only, never trained."""
    d_src = np.clip(np.asarray(d_src, dtype=np.float64), ad.PROB_EPS, 1.0)
    d_tgt = np.clip(np.asarray(d_tgt, dtype=np.float64), ad.PROB_EPS, 1.0)
    return float(np.mean(np.log(d_src)) + np.mean(1.0 - np.log(d_tgt)))


def soft_label_table(logits, labels, T: float, n_classes: int | None = None):
    """Per-class mean tempered softmax (the detached teacher).

    Returns a K x K array and a presence mask; rows of absent classes are NaN.
    """
    vals = logits.values if isinstance(logits, Node) else np.asarray(logits, dtype=np.float64)
    K = vals.shape[1] if n_classes is None else n_classes
    probs = ad.softmax_rows_with_temperature(ad.constant(vals), T).values
    table, present = class_centroids(probs, labels, K)
    table[~present] = np.nan
    return table, present


def scenario_distribution_loss(logits_SN: Node, labels_SN, logits_SI: Node, labels_SI, T1: float,
                               teacher: tuple[np.ndarray, np.ndarray] | None = None) -> Node:
    """Cross-entropy between SN per-class mean tempered softmax (teacher, no
    gradient) and the SI counterpart, averaged over classes present in both.

    ``teacher`` short-circuits the SN table with a precomputed (table, present) pair.
    """
    if not T1 > 0:
        raise ParameterError(f"T1 must be positive, got {T1}")
    K = logits_SI.shape[1]
    q, q_present = teacher if teacher is not None else soft_label_table(logits_SN, labels_SN, T1, K)
    y_si = check_labels(labels_SI, K)
    M, p_present = averaging_matrix(y_si, K)
    shared = np.flatnonzero(q_present & p_present)
    skipped = np.flatnonzero(q_present ^ p_present)
    if skipped.size:
        log.debug("scenario distribution loss: classes %s present in one source only", skipped.tolist())
    if shared.size == 0:
        warnings.warn("no class present in both sources; scenario distribution loss is zero", RuntimeWarning)
        return ad.scale(ad.sum(logits_SI), 0.0)
    p_all = ad.softmax_rows_with_temperature(logits_SI, T1)
    p_k = ad.matmul(ad.constant(M[shared]), p_all)
    ce = ad.sum(ad.mul(ad.safe_log(p_k), ad.constant(q[shared])))
    return ad.scale(ce, -1.0 / shared.size)


# ---------------------------------------------------------------------------
# weighted implicit semantic


def implicit_soft_loss(p_TL: Node, labels_TL, q_table: np.ndarray, q_present: np.ndarray | None = None) -> Node:
    """-(1/n_used) sum_i q[y_i] . log p_i over instances whose class has a teacher row."""
    K = p_TL.shape[1]
    y = check_labels(labels_TL, K)
    if q_present is None:
        q_present = ~np.isnan(q_table).any(axis=1)
    used = np.flatnonzero(q_present[y])
    if used.size == 0:
        warnings.warn("no labelled target instance has a teacher row; soft loss is zero", RuntimeWarning)
        return ad.scale(ad.sum(p_TL), 0.0)
    if used.size < y.size:
        log.debug("implicit soft loss: %d of %d instances lack a teacher row", y.size - used.size, y.size)
    logp = ad.safe_log(ad.take_rows(p_TL, used) if used.size < y.size else p_TL)
    teacher = ad.constant(q_table[y[used]])
    return ad.scale(ad.sum(ad.mul(logp, teacher)), -1.0 / used.size)


def source_target_divergence(f_S, labels_S, f_TL, labels_TL, n_classes: int, literal_total: bool = False) -> float:
    """Mean squared distance between matching class centroids of two domains.

    With ``literal_total`` the centroids divide by the whole domain size and
    the average runs over all K classes, as the equations are printed.
    """
    fS = f_S.values if isinstance(f_S, Node) else np.asarray(f_S, dtype=np.float64)
    fT = f_TL.values if isinstance(f_TL, Node) else np.asarray(f_TL, dtype=np.float64)
    mu_s, ps = class_centroids(fS, labels_S, n_classes, literal_total)
    mu_t, pt = class_centroids(fT, labels_TL, n_classes, literal_total)
    if literal_total:
        return float(((mu_s - mu_t) ** 2).sum() / n_classes)
    shared = ps & pt
    if not shared.any():
        raise DataError("source and labelled target share no class")
    return float(((mu_s[shared] - mu_t[shared]) ** 2).sum(axis=1).mean())


def source_weight(d: float) -> float:
    """e^d / (e^d + 1) + 0.25, which keeps the weight in [0.75, 1.25).

    Written as 1.25 - 1/(e^d + 1). For d beyond about 37 the gap to 1.25 is
    below float64 resolution; the result is then rounded down to the largest
    double under 1.25 so the open upper bound survives.
    """
    if d < 0:
        raise ParameterError(f"divergence must be non-negative, got {d}")
    w = 1.25 - 1.0 / (np.exp(min(float(d), 700.0)) + 1.0)
    return float(min(w, _BELOW_UPPER))


_BELOW_UPPER = float(np.nextafter(1.25, 0.0))


def weighted_implicit_loss(l_hd: Node, l_sf_sn: Node | None, l_sf_si: Node | None,
                           omega_sn: float, omega_si: float, alpha: float) -> Node:
    """(1 - alpha) * l_hd + alpha * mean over available sources of omega * l_sf."""
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    soft = [(w, l) for w, l in ((omega_sn, l_sf_sn), (omega_si, l_sf_si)) if l is not None]
    total = ad.scale(l_hd, 1.0 - alpha)
    for w, l in soft:
        total = ad.add(total, ad.scale(l, alpha * w / len(soft)))
    return total


# ---------------------------------------------------------------------------
# hierarchical explicit semantic


def centroid_alignment_loss(f_S: Node, labels_S, f_T: Node, labels_T, n_classes: int) -> Node:
    """Triplet centroid alignment: source, target and pooled centroids per class."""
    yS = check_labels(labels_S, n_classes)
    yT = check_labels(labels_T, n_classes)
    MS, pS = averaging_matrix(yS, n_classes)
    MT, pT = averaging_matrix(yT, n_classes)
    shared = np.flatnonzero(pS & pT)
    if shared.size < n_classes:
        log.debug("centroid alignment: skipping classes %s", np.flatnonzero(~(pS & pT)).tolist())
    if shared.size == 0:
        return ad.scale(ad.add(ad.sum(f_S), ad.sum(f_T)), 0.0)
    mu_s = ad.matmul(ad.constant(MS[shared]), f_S)
    mu_t = ad.matmul(ad.constant(MT[shared]), f_T)
    nS = np.bincount(yS, minlength=n_classes)[shared].astype(float)
    nT = np.bincount(yT, minlength=n_classes)[shared].astype(float)
    wS = (nS / (nS + nT))[:, None]
    # pooled centroid is the count-weighted mean of the two side centroids
    mu_st = ad.add(ad.mul(mu_s, ad.constant(wS)), ad.mul(mu_t, ad.constant(1.0 - wS)))
    terms = ad.add(ad.add(ad.sq_l2_rowdiff(mu_s, mu_t), ad.sq_l2_rowdiff(mu_s, mu_st)), ad.sq_l2_rowdiff(mu_t, mu_st))
    return ad.sum(terms)


def representative_alignment_loss(reps_S: dict[int, Node], reps_T: dict[int, Node]) -> Node | None:
    """Mean pairwise squared distance between source and target representatives,
    per class, averaged over classes that have representatives on both sides."""
    shared = sorted(set(reps_S) & set(reps_T))
    if not shared:
        return None
    total = None
    for k in shared:
        rs, rt = reps_S[k], reps_T[k]
        ii, jj = np.meshgrid(np.arange(rs.shape[0]), np.arange(rt.shape[0]), indexing="ij")
        d = ad.sum(ad.sq_l2_rowdiff(ad.take_rows(rs, ii.ravel()), ad.take_rows(rt, jj.ravel())))
        term = ad.scale(d, 1.0 / (len(shared) * rs.shape[0] * rt.shape[0]))
        total = term if total is None else ad.add(total, term)
    return total


# ---------------------------------------------------------------------------
# assembly


@dataclass
class LossBreakdown:
    l_sup: float = 0.0
    l_hd: float = 0.0
    l_sf_sn: float = 0.0
    l_sf_si: float = 0.0
    l_wis: float = 0.0
    l_esc: float = 0.0
    l_esr: float = 0.0
    l_ssd: float = 0.0
    l_ssc: float = 0.0
    omega_sn: float = 0.0
    omega_si: float = 0.0
    total: float = 0.0
    extras: dict = field(default_factory=dict, repr=False)

    def as_record(self) -> dict:
        d = asdict(self)
        d.pop("extras")
        d.pop("l_wis")
        return d


def total_objective(terms: dict[str, Node | None], beta: float, lam: float, gamma: float, eta: float) -> Node:
    """l_sup + l_wis + beta*l_esc + lam*l_esr + gamma*l_ssd + eta*l_ssc.

    Missing terms (None) and zero coefficients drop out of the graph entirely.
    """
    coeffs = {"l_sup": 1.0, "l_wis": 1.0, "l_esc": beta, "l_esr": lam, "l_ssd": gamma, "l_ssc": eta}
    total = None
    for name, c in coeffs.items():
        node = terms.get(name)
        if node is None or c == 0.0:
            continue
        part = node if c == 1.0 else ad.scale(node, c)
        total = part if total is None else ad.add(total, part)
    if total is None:
        raise DataError("objective has no active terms")
    return total
