"""End-to-end training loop, target evaluation, and the ablation/sweep harness."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import losses as L
from .clustering import RepSet, select_representatives
from .config import SWEEPABLE, TrainConfig
from .data import DomainDataset, SplitSpec, check_domains, normalize, split_target
from .errors import ConfigError, DataError, NumericalError
from .metrics import MetricsReport, evaluate, paired_t_test
from .model import InitSpec, JstnModel, classify, discriminate, encode, init_model, save_checkpoint
from .plr import RefineResult, labeled_centroids, refine

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# data plumbing


@dataclass
class TrainBatch:
    """Normalised arrays for one training step. ``y_TU`` is evaluation-only truth."""

    n_classes: int
    X_TL: np.ndarray
    y_TL: np.ndarray
    X_TU: np.ndarray
    X_SN: np.ndarray | None = None
    y_SN: np.ndarray | None = None
    X_SI: np.ndarray | None = None
    y_SI: np.ndarray | None = None
    y_TU: np.ndarray | None = None

    @property
    def sources(self) -> list[str]:
        return [r for r in ("SN", "SI") if getattr(self, f"X_{r}") is not None]

    def subset(self, picks: dict[str, np.ndarray]) -> "TrainBatch":
        changes = {}
        for role, idx in picks.items():
            changes[f"X_{role}"] = getattr(self, f"X_{role}")[idx]
            for yname in (f"y_{role}",):
                y = getattr(self, yname, None)
                if y is not None:
                    changes[yname] = y[idx]
        return replace(self, **changes)


def prepare_domains(domains: dict[str, DomainDataset], cfg: TrainConfig) -> TrainBatch:
    """Normalise each domain on its own statistics and split the target if needed."""
    check_domains(domains)
    K = next(iter(domains.values())).n_classes
    if "T" in domains:
        target = domains["T"]
        if cfg.normalize:
            target = normalize(target)
        tl, tu = split_target(target, SplitSpec.parse(cfg.ratio, cfg.stratified, cfg.seed))
    elif "TL" in domains and "TU" in domains:
        tl, tu = domains["TL"], domains["TU"]
        if tl.y is None:
            raise DataError("TL domain has no labels")
        if cfg.normalize:
            pooled = DomainDataset("T", "T", np.vstack([tl.X, tu.X]))
            tl, tu = normalize(pooled, tl), normalize(pooled, tu)
    else:
        raise DataError("need a full target T or both TL and TU")
    batch = TrainBatch(K, tl.X, tl.y, tu.X, y_TU=tu.y_eval)
    for role, enabled in (("SN", cfg.use_sn), ("SI", cfg.use_si)):
        ds = domains.get(role)
        if ds is None or not enabled:
            continue
        if ds.y is None:
            raise DataError(f"source domain {role} has no labels")
        if cfg.normalize:
            ds = normalize(ds)
        setattr(batch, f"X_{role}", ds.X)
        setattr(batch, f"y_{role}", ds.y)
    if not batch.sources:
        raise DataError("no enabled source domain has data")
    return batch


def model_for(batch: TrainBatch, cfg: TrainConfig) -> JstnModel:
    dims = {"T": batch.X_TL.shape[1]}
    for role in batch.sources:
        dims[role] = getattr(batch, f"X_{role}").shape[1]
    return init_model(dims, n_classes=batch.n_classes, d_c=cfg.d_c, hidden=cfg.hidden, slope=cfg.slope,
                      init=InitSpec(gain=cfg.init_gain, seed=cfg.seed))


# ---------------------------------------------------------------------------
# one step: forward, frozen plan, loss assembly


@dataclass
class Forward:
    feats: dict[str, ad.Node]
    logits: dict[str, ad.Node]


def forward(model: JstnModel, batch: TrainBatch) -> Forward:
    feats, logits = {}, {}
    for role in batch.sources + ["TL", "TU"]:
        f = encode(model, ad.constant(getattr(batch, f"X_{role}")), role)
        feats[role] = f
        logits[role] = classify(model, f)
    return Forward(feats, logits)


@dataclass
class StepPlan:
    """Everything that is held constant within one gradient step."""

    ssc_teacher: tuple[np.ndarray, np.ndarray] | None
    soft_tables: dict[str, tuple[np.ndarray, np.ndarray]]
    omegas: dict[str, float]
    refined: RefineResult
    reps_S: dict[int, RepSet] = field(default_factory=dict)
    reps_T: dict[int, RepSet] = field(default_factory=dict)

    @property
    def target_labels(self) -> np.ndarray:
        return self.refined.accepted_labels


def _source_feats(fw: Forward, batch: TrainBatch) -> tuple[list[ad.Node], np.ndarray]:
    nodes = [fw.feats[r] for r in batch.sources]
    labels = np.concatenate([getattr(batch, f"y_{r}") for r in batch.sources])
    return nodes, labels


def make_plan(fw: Forward, batch: TrainBatch, cfg: TrainConfig, rng: np.random.Generator, epoch: int = 0) -> StepPlan:
    K = batch.n_classes
    literal = cfg.literal_paper_normalization
    ssc_teacher = None
    if "SN" in batch.sources and "SI" in batch.sources:
        ssc_teacher = L.soft_label_table(fw.logits["SN"], batch.y_SN, cfg.T1, K)
    soft_tables, omegas = {}, {}
    for role in batch.sources:
        y = getattr(batch, f"y_{role}")
        soft_tables[role] = L.soft_label_table(fw.logits[role], y, cfg.T2, K)
        if cfg.use_weighting:
            d = L.source_target_divergence(fw.feats[role], y, fw.feats["TL"], batch.y_TL, K, literal)
            omegas[role] = L.source_weight(d)
        else:
            omegas[role] = 1.0
    labeled = [(fw.feats[r].values, getattr(batch, f"y_{r}")) for r in batch.sources]
    labeled.append((fw.feats["TL"].values, batch.y_TL))
    centroids, present = labeled_centroids(labeled, K, literal)
    refined = refine(fw.logits["TU"].values, fw.feats["TU"].values, centroids, present,
                     epoch=epoch, use_consensus=cfg.use_plr)
    plan = StepPlan(ssc_teacher, soft_tables, omegas, refined)
    if cfg.lam > 0:
        src_nodes, y_S = _source_feats(fw, batch)
        f_S = np.vstack([n.values for n in src_nodes])
        f_T = np.vstack([fw.feats["TL"].values, fw.feats["TU"].values[refined.accepted_idx]])
        y_T = np.concatenate([batch.y_TL, refined.accepted_labels])
        opts = dict(max_iter=cfg.kmeans_max_iter, tol=cfg.kmeans_tol)
        plan.reps_S = select_representatives(f_S, y_S, K, cfg.R, rng, side="source", **opts)
        plan.reps_T = select_representatives(f_T, y_T, K, cfg.R, rng, side="target", **opts)
    return plan


def _rep_nodes(f: ad.Node, reps: dict[int, RepSet]) -> dict[int, ad.Node]:
    n = f.shape[0]
    return {k: ad.matmul(ad.constant(rs.averaging_matrix(n)), f) for k, rs in reps.items()}


@dataclass
class StepLosses:
    terms: dict[str, ad.Node | None]
    total: ad.Node
    breakdown: L.LossBreakdown


def build_losses(model: JstnModel, fw: Forward, batch: TrainBatch, plan: StepPlan, cfg: TrainConfig) -> StepLosses:
    src_nodes, y_S = _source_feats(fw, batch)
    terms: dict[str, ad.Node | None] = {}
    subterms: dict[str, ad.Node | None] = {"l_sf_SN": None, "l_sf_SI": None}

    logits_S = ad.concat_rows([fw.logits[r] for r in batch.sources]) if len(batch.sources) > 1 else fw.logits[batch.sources[0]]
    terms["l_sup"] = L.supervision_loss(logits_S, y_S)

    l_hd = L.implicit_hard_loss(fw.logits["TL"], batch.y_TL)
    subterms["l_hd"] = l_hd
    if cfg.alpha > 0:
        p_TL = ad.softmax(fw.logits["TL"])
        for role in batch.sources:
            table, present = plan.soft_tables[role]
            subterms[f"l_sf_{role}"] = L.implicit_soft_loss(p_TL, batch.y_TL, table, present)
    terms["l_wis"] = L.weighted_implicit_loss(
        l_hd, subterms["l_sf_SN"], subterms["l_sf_SI"],
        plan.omegas.get("SN", 0.0), plan.omegas.get("SI", 0.0), cfg.alpha,
    )

    f_S = ad.concat_rows(src_nodes) if len(src_nodes) > 1 else src_nodes[0]
    acc_idx = plan.refined.accepted_idx
    if acc_idx.size:
        f_T = ad.concat_rows([fw.feats["TL"], ad.take_rows(fw.feats["TU"], acc_idx)])
    else:
        f_T = fw.feats["TL"]
    y_T = np.concatenate([batch.y_TL, plan.target_labels])
    K = batch.n_classes
    terms["l_esc"] = L.centroid_alignment_loss(f_S, y_S, f_T, y_T, K) if cfg.beta > 0 else None
    if cfg.lam > 0:
        terms["l_esr"] = L.representative_alignment_loss(_rep_nodes(f_S, plan.reps_S), _rep_nodes(f_T, plan.reps_T))
    else:
        terms["l_esr"] = None

    if cfg.gamma > 0:
        f_src = ad.grad_reverse(f_S, cfg.grl_lambda)
        f_tgt = ad.grad_reverse(ad.concat_rows([fw.feats["TL"], fw.feats["TU"]]), cfg.grl_lambda)
        terms["l_ssd"] = L.scenario_discriminator_loss(discriminate(model, f_src), discriminate(model, f_tgt))
    else:
        terms["l_ssd"] = None

    if cfg.eta > 0 and plan.ssc_teacher is not None:
        terms["l_ssc"] = L.scenario_distribution_loss(fw.logits["SN"], batch.y_SN, fw.logits["SI"], batch.y_SI,
                                                      cfg.T1, teacher=plan.ssc_teacher)
    else:
        terms["l_ssc"] = None

    total = L.total_objective(terms, cfg.beta, cfg.lam, cfg.gamma, cfg.eta)

    def val(node):
        return 0.0 if node is None else node.item()

    bd = L.LossBreakdown(
        l_sup=val(terms["l_sup"]), l_hd=val(l_hd), l_sf_sn=val(subterms["l_sf_SN"]), l_sf_si=val(subterms["l_sf_SI"]),
        l_wis=val(terms["l_wis"]), l_esc=val(terms["l_esc"]), l_esr=val(terms["l_esr"]), l_ssd=val(terms["l_ssd"]),
        l_ssc=val(terms["l_ssc"]), omega_sn=plan.omegas.get("SN", 0.0), omega_si=plan.omegas.get("SI", 0.0),
        total=total.item(),
    )
    all_terms = {**terms, "l_hd": l_hd, "l_sf_sn": subterms["l_sf_SN"], "l_sf_si": subterms["l_sf_SI"]}
    return StepLosses(all_terms, total, bd)


def check_finite(bd: L.LossBreakdown, epoch: int) -> None:
    for name, value in bd.as_record().items():
        if not math.isfinite(value):
            raise NumericalError(name, epoch)


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochReport:
    epoch: int
    losses: L.LossBreakdown
    accepted_count: int
    acceptance_rate: float
    pseudo_label_precision: float | None = None
    raw_label_precision: float | None = None
    tu_accuracy: float | None = None
    seconds: float = 0.0

    def record(self) -> dict:
        """The metrics-stream line. Wall-clock time is left out so the stream is reproducible."""
        rec = {"epoch": self.epoch, **self.losses.as_record(),
               "accepted_count": self.accepted_count, "acceptance_rate": self.acceptance_rate}
        for key in ("pseudo_label_precision", "raw_label_precision", "tu_accuracy"):
            value = getattr(self, key)
            if value is not None:
                rec[key] = None if math.isnan(value) else value
        return rec


@dataclass
class TrainResult:
    model: JstnModel
    reports: list[EpochReport]
    config: TrainConfig


def _minibatches(batch: TrainBatch, size: int, rng: np.random.Generator):
    roles = batch.sources + ["TL", "TU"]
    sizes = {r: getattr(batch, f"X_{r}").shape[0] for r in roles}
    steps = max(1, math.ceil(max(sizes.values()) / size))
    perms = {r: rng.permutation(n) for r, n in sizes.items()}
    for s in range(steps):
        picks = {}
        for r, n in sizes.items():
            chunk = max(1, math.ceil(n / steps))
            picks[r] = perms[r][s * chunk:(s + 1) * chunk] if s * chunk < n else perms[r][:chunk]
        yield batch.subset(picks)


def train(batch: TrainBatch, cfg: TrainConfig, model: JstnModel | None = None,
          out_dir: str | Path | None = None, on_epoch: Callable[[EpochReport], None] | None = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs of full-batch (default) training.

    With ``out_dir`` the metrics stream, timings and checkpoints are written
    there as the run progresses. A non-finite loss raises
    :class:`NumericalError`; checkpoints already written are kept.
    """
    cfg.validate()
    model = model if model is not None else model_for(batch, cfg)
    params = model.params()
    state = ad.AdamState(params, lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, epsilon=cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed + 7919)
    out = Path(out_dir) if out_dir is not None else None
    metrics_fh = timings_fh = None
    if out is not None:
        (out / "ckpt").mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.jsonl", "w", encoding="utf-8")
        timings_fh = open(out / "timings.jsonl", "w", encoding="utf-8")
    reports: list[EpochReport] = []
    digest = cfg.digest()
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            steps = [batch] if cfg.batch_size == 0 else list(_minibatches(batch, cfg.batch_size, rng))
            for step_batch in steps:
                fw = forward(model, step_batch)
                plan = make_plan(fw, step_batch, cfg, rng, epoch)
                step = build_losses(model, fw, step_batch, plan, cfg)
                check_finite(step.breakdown, epoch)
                ad.backward(step.total)
                ad.adam_step(params, state)
            report = EpochReport(epoch, step.breakdown, plan.refined.accepted_count, plan.refined.acceptance_rate)
            if cfg.monitor_tu and step_batch.y_TU is not None:
                truth = step_batch.y_TU
                report.pseudo_label_precision = plan.refined.precision(truth)
                report.raw_label_precision = float(np.mean(plan.refined.y_nn == truth))
                report.tu_accuracy = report.raw_label_precision
            report.seconds = time.perf_counter() - t0
            reports.append(report)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(report.record()) + "\n")
                timings_fh.write(json.dumps({"epoch": epoch, "seconds": report.seconds}) + "\n")
                if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                    save_checkpoint(model, out / "ckpt" / f"epoch_{epoch:05d}.npz", digest)
            if on_epoch is not None:
                on_epoch(report)
        if out is not None:
            save_checkpoint(model, out / "ckpt" / "final.npz", digest)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
            timings_fh.close()
    return TrainResult(model, reports, cfg)


def train_target_only(batch: TrainBatch, cfg: TrainConfig) -> JstnModel:
    """Baseline: the target encoder and classifier trained on TL alone."""
    model = init_model({"T": batch.X_TL.shape[1]}, n_classes=batch.n_classes, d_c=cfg.d_c, hidden=cfg.hidden,
                       slope=cfg.slope, init=InitSpec(gain=cfg.init_gain, seed=cfg.seed))
    params = model.encoders["T"].params() + model.classifier.params()
    state = ad.AdamState(params, lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, epsilon=cfg.adam_eps)
    x = ad.constant(batch.X_TL)
    for epoch in range(1, cfg.epochs + 1):
        loss = L.cross_entropy(classify(model, encode(model, x, "TL")), batch.y_TL)
        if not math.isfinite(loss.item()):
            raise NumericalError("l_hd", epoch)
        ad.backward(loss)
        ad.adam_step(params, state)
    return model


def predict_target(model: JstnModel, X: np.ndarray) -> np.ndarray:
    logits = classify(model, encode(model, ad.constant(X), "TU")).values
    return np.argmax(logits, axis=1)


def evaluate_target(model: JstnModel, X_TU: np.ndarray, y_TU: np.ndarray, n_classes: int | None = None) -> MetricsReport:
    return evaluate(predict_target(model, X_TU), y_TU, n_classes if n_classes is not None else model.n_classes)


# ---------------------------------------------------------------------------
# ablation and sweep harness

VARIANTS: dict[str, dict] = {
    "alpha=0": {"alpha": 0.0},
    "no_wi": {"use_weighting": False},
    "beta=0": {"beta": 0.0},
    "lambda=0": {"lam": 0.0},
    "beta=lambda=0": {"beta": 0.0, "lam": 0.0},
    "no_plr": {"use_plr": False},
    "eta=0": {"eta": 0.0},
    "gamma=0": {"gamma": 0.0},
    "sn_only": {"use_si": False},
    "si_only": {"use_sn": False},
}


def variant_config(base: TrainConfig, name: str) -> TrainConfig:
    if name == "full":
        return base
    if name not in VARIANTS:
        raise ConfigError(f"unknown ablation variant {name!r}; choose from {['full', *VARIANTS]}")
    return base.replace(**VARIANTS[name])


DomainSource = Callable[[int], dict[str, DomainDataset]]


@dataclass
class RunSummary:
    label: str
    seed: int
    accuracy: float
    metrics: MetricsReport


def run_once(domains: dict[str, DomainDataset], cfg: TrainConfig, label: str = "full") -> RunSummary:
    batch = prepare_domains(domains, cfg)
    if batch.y_TU is None:
        raise DataError("evaluation needs held-out TU truth")
    result = train(batch, cfg)
    report = evaluate_target(result.model, batch.X_TU, batch.y_TU, batch.n_classes)
    return RunSummary(label, cfg.seed, report.accuracy, report)


def _job(args):
    source, seed, label, cfg = args
    domains = source(seed)
    return run_once(domains, cfg.replace(seed=seed), label)


def _map(jobs, workers: int):
    if workers <= 1:
        return [_job(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


@dataclass
class AblationResult:
    seeds: list[int]
    accuracy: dict[str, list[float]]
    ttests: dict[str, dict]

    def means(self) -> dict[str, float]:
        return {k: float(np.mean(v)) for k, v in self.accuracy.items()}

    def rows(self) -> list[dict]:
        out = []
        for name, accs in self.accuracy.items():
            row = {"variant": name, "mean_accuracy": float(np.mean(accs)), "std_accuracy": float(np.std(accs)),
                   "accuracies": accs}
            if name in self.ttests:
                row.update(self.ttests[name])
            out.append(row)
        return out


def run_ablation(source: DomainSource, base: TrainConfig, seeds: list[int], variants: list[str] | None = None,
                 workers: int = 1) -> AblationResult:
    """Train the full model and each variant on every seed; paired t-test full vs variant."""
    names = ["full"] + [v for v in (variants or list(VARIANTS)) if v != "full"]
    jobs = [(source, s, name, variant_config(base, name)) for name in names for s in seeds]
    results = _map(jobs, workers)
    acc: dict[str, list[float]] = {name: [] for name in names}
    for r in results:
        acc[r.label].append(r.accuracy)
    tests = {}
    for name in names[1:]:
        if len(seeds) >= 2:
            tt = paired_t_test(acc["full"], acc[name])
            tests[name] = {"t": tt.t, "p": tt.p, "mean_gain": tt.mean_diff}
    return AblationResult(list(seeds), acc, tests)


def run_sweep(param: str, values: list[float], base: TrainConfig, source: DomainSource, seeds: list[int],
              workers: int = 1) -> list[dict]:
    from .config import canonical_key

    key = canonical_key(param)
    if key not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {param!r}; sweepable: {', '.join(SWEEPABLE)}")
    jobs = [(source, s, f"{key}={v}", base.replace(**{key: v})) for v in values for s in seeds]
    results = _map(jobs, workers)
    rows = []
    for (_, s, _, cfg), r in zip(jobs, results):
        rows.append({"param": key, "value": getattr(cfg, key), "seed": s, "accuracy": r.accuracy,
                     "f1": r.metrics.f1})
    return rows
