"""Acceptance suite: one PASS/FAIL line per criterion.

Each test prints its verdict line (visible even under output capture) and
then asserts it, so ``pytest -v`` shows both the line and the outcome.
Criteria 4 to 6 train many models; they take most of the suite's runtime.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

import jstn
from jstn import autodiff as ad
from jstn import losses as L
from jstn import trainer as T
from jstn.cli import main
from jstn.clustering import select_representatives
from jstn.config import TrainConfig
from jstn.gradcheck import grl_probe, run_gradcheck
from jstn.metrics import evaluate
from jstn.presets import preset_domains

SEEDS = list(range(10))
TOY = Path(jstn.__file__).parent / "toy" / "manifest.json"
# paper defaults except the encoder width (see README, "Acceptance suite")
ACCEPT = TrainConfig(hidden=32)


@pytest.fixture
def verdict(capsys):
    def emit(number: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}")
        assert ok, detail

    return emit


# ---------------------------------------------------------------------------
# 1. gradient fidelity


def test_c1_gradient_fidelity(verdict):
    report = run_gradcheck(SEEDS, h=1e-5, threshold=1e-4)
    worst = max(report.max_error, key=report.max_error.get)
    ok = report.passed and report.seconds < 30.0
    verdict(1, "gradient fidelity", ok,
            f"worst term {worst} rel err {report.max_error[worst]:.2e} (limit 1e-4) over 10 seeds, "
            f"{report.seconds:.1f}s (limit 30s)")


# ---------------------------------------------------------------------------
# 2. loss identities


def _esr_on_identical_sets(f, y, K, R):
    """ESR between two identical per-class point sets, representatives chosen by the training pipeline."""
    reps_S = select_representatives(f, y, K, R, np.random.default_rng(1), side="source")
    reps_T = select_representatives(f.copy(), y.copy(), K, R, np.random.default_rng(1), side="target")
    return L.representative_alignment_loss({k: ad.constant(r.reps) for k, r in reps_S.items()},
                                           {k: ad.constant(r.reps) for k, r in reps_T.items()}).item()


def _identity_failures() -> list[str]:
    bad = []
    rng = np.random.default_rng(0)
    esr_default = []
    for trial in range(20):
        K = int(rng.integers(2, 6))
        y = np.concatenate([np.arange(K), rng.integers(0, K, 20)])
        f = rng.standard_normal((y.size, 3)) * 5
        esc = L.centroid_alignment_loss(ad.constant(f), y, ad.constant(f.copy()), y.copy(), K).item()
        if esc != 0.0:
            bad.append(f"ESC={esc} on identical sets (trial {trial})")
        r1 = _esr_on_identical_sets(f, y, K, 1)
        if r1 != 0.0:
            bad.append(f"ESR={r1} on identical sets with R=1 (trial {trial})")
        esr_default.append(_esr_on_identical_sets(f, y, K, TrainConfig().R))
    if max(esr_default) != 0.0:
        bad.append(f"ESR on identical sets with the default R={TrainConfig().R} is {min(esr_default):.3g} to "
                   f"{max(esr_default):.3g}, not 0: the all-pairs representative distance counts within-set pairs")

    for trial in range(200):
        K = int(rng.integers(2, 7))
        q = rng.dirichlet(np.ones(K), size=K)
        y = rng.integers(0, K, 8)
        p = rng.dirichlet(np.ones(K), size=8)
        H = float(np.mean(-(q[y] * np.log(q[y])).sum(axis=1)))
        soft = L.implicit_soft_loss(ad.constant(p), y, q).item()
        if soft < H - 1e-9:
            bad.append(f"soft loss {soft} below teacher entropy {H}")
        if abs(soft - H) <= 1e-9:
            bad.append(f"soft loss equals entropy although p != q (trial {trial})")
        at_q = L.implicit_soft_loss(ad.constant(q[y]), y, q).item()
        if abs(at_q - H) > 1e-9:
            bad.append(f"soft loss at p = q differs from entropy by {abs(at_q - H):.1e}")

    if L.source_weight(0.0) != 0.75:
        bad.append(f"omega(0) = {L.source_weight(0.0)}")
    if abs(L.source_weight(math.log(3.0)) - 1.0) > 1e-12:
        bad.append(f"omega(ln 3) = {L.source_weight(math.log(3.0))}")
    grid = np.linspace(0.0, 50.0, 5001)
    w = np.array([L.source_weight(d) for d in grid])
    if np.any(np.diff(w) < 0):
        bad.append("omega not monotone on [0, 50]")
    if not np.all(w < 1.25):
        bad.append(f"omega reaches {w.max()!r} on [0, 50]")
    return bad


def test_c2_loss_identities(verdict):
    bad = _identity_failures()
    verdict(2, "loss identities", not bad,
            "ESC/ESR zero on identical sets, soft loss >= teacher entropy with equality iff p = q (1e-9), "
            "omega(0)=0.75, omega(ln 3)=1, monotone, < 1.25 on [0, 50]" if not bad else "; ".join(bad[:5]))


# ---------------------------------------------------------------------------
# 3. metric oracle


def _oracle(pred, truth, K):
    n = len(truth)
    P, R, F = [], [], []
    for k in range(K):
        tp = sum(1 for p, t in zip(pred, truth) if p == k and t == k)
        fp = sum(1 for p, t in zip(pred, truth) if p == k and t != k)
        fn = sum(1 for p, t in zip(pred, truth) if p != k and t == k)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        w = (tp + fn) / n
        P.append(w * prec)
        R.append(w * rec)
        F.append(w * f1)
    return math.fsum(P), math.fsum(R), math.fsum(F)


def test_c3_metric_oracle(verdict):
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        K = int(rng.integers(2, 7))
        n = int(rng.integers(1, 60))
        truth, pred = rng.integers(0, K, n), rng.integers(0, K, n)
        r = evaluate(pred, truth, K)
        mismatches += (r.precision, r.recall, r.f1) != _oracle(pred.tolist(), truth.tolist(), K)
    f1 = evaluate([0, 0, 1, 1], [0, 0, 0, 1], 2).f1
    ok = mismatches == 0 and abs(f1 - 0.7667) <= 1e-4
    verdict(3, "metric oracle", ok, f"{mismatches}/1000 mismatches (exact equality); K=2 example F1 = {f1:.6f}")


# ---------------------------------------------------------------------------
# 4. transfer gain on `separable`


def test_c4_transfer_gain(verdict):
    gains, times = [], []
    for seed in SEEDS:
        cfg = ACCEPT.replace(seed=seed)
        batch = T.prepare_domains(preset_domains("separable", seed), cfg)
        t0 = time.perf_counter()
        model = T.train(batch, cfg).model
        times.append(time.perf_counter() - t0)
        acc = T.evaluate_target(model, batch.X_TU, batch.y_TU).accuracy
        base = T.evaluate_target(T.train_target_only(batch, cfg), batch.X_TU, batch.y_TU).accuracy
        gains.append(acc - base)
    wins = sum(g >= 0.05 for g in gains)
    ok = wins >= 8 and max(times) <= 120.0
    per_seed = " ".join(f"{100 * g:+.1f}" for g in gains)
    verdict(4, "synthetic transfer gain", ok,
            f"{wins}/10 seeds gain >= 5 points (need 8); gains {per_seed}; slowest run {max(times):.0f}s (limit 120s)")


# ---------------------------------------------------------------------------
# 5 and 6 share the runs on `hard`


@pytest.fixture(scope="module")
def hard_runs():
    """Per-seed accuracy of the full model and every variant, plus the full runs' epoch reports."""
    acc = {name: [] for name in ["full", *T.VARIANTS]}
    reports = []
    for seed in SEEDS:
        domains = preset_domains("hard", seed)
        cfg = ACCEPT.replace(seed=seed, monitor_tu=True)
        batch = T.prepare_domains(domains, cfg)
        result = T.train(batch, cfg)
        acc["full"].append(T.evaluate_target(result.model, batch.X_TU, batch.y_TU).accuracy)
        reports.append(result.reports)
        for name in T.VARIANTS:
            acc[name].append(T.run_once(domains, T.variant_config(ACCEPT.replace(seed=seed), name), name).accuracy)
    return acc, reports


def test_c5_ablation_ordering(verdict, hard_runs):
    from jstn.metrics import paired_t_test

    acc, _ = hard_runs
    means = {k: float(np.mean(v)) for k, v in acc.items()}
    beaten = [k for k in T.VARIANTS if means[k] > means["full"]]
    tests = {k: paired_t_test(acc["full"], acc[k]) for k in ("si_only", "beta=lambda=0")}
    significant = all(t.p < 0.05 and t.mean_diff > 0 for t in tests.values())
    ok = not beaten and significant
    table = ", ".join(f"{k} {100 * v:.1f}" for k, v in means.items())
    sig = ", ".join(f"{k} p={t.p:.3g}" for k, t in tests.items())
    verdict(5, "ablation ordering", ok,
            f"means: {table}; variants above full: {beaten or 'none'}; {sig} (need p < 0.05)")


def test_c6_pseudo_label_value(verdict, hard_runs):
    _, reports = hard_runs
    violations = []
    for seed, reps in zip(SEEDS, reports):
        for r in reps:
            if r.epoch <= 50:
                continue
            p = r.pseudo_label_precision
            if p is None or math.isnan(p) or p < r.raw_label_precision:
                violations.append((seed, r.epoch))
    worst = min(
        (r.pseudo_label_precision - r.raw_label_precision for reps in reports for r in reps
         if r.epoch > 50 and r.pseudo_label_precision is not None and not math.isnan(r.pseudo_label_precision)),
        default=float("nan"))
    first = ", ".join(f"seed {s} epoch {e}" for s, e in violations[:3])
    verdict(6, "pseudo-label refinement value", not violations,
            f"{len(violations)} violating epochs after 50 over 10 seeds{' (' + first + ')' if first else ''}; "
            f"smallest margin {worst:+.4f}")


# ---------------------------------------------------------------------------
# 7. gradient reversal


def test_c7_gradient_reversal(verdict):
    probes = [grl_probe(seed) for seed in SEEDS]
    ok = all(p.discriminator_improves and p.encoder_opposes for p in probes)
    drop = max(p.bce_after_discriminator_step - p.bce_before for p in probes)
    verdict(7, "gradient reversal", ok,
            f"D step lowers BCE on all seeds (largest change {drop:+.2e}); encoder gradient sign opposite to "
            f"the true BCE gradient: {all(p.encoder_opposes for p in probes)}")


# ---------------------------------------------------------------------------
# 8. determinism and 9. CSV pipeline


def test_c8_determinism(verdict, tmp_path):
    streams = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = main(["train", "--manifest", str(TOY), "--seed", "3", "--set", "epochs=200", "--out", str(out)])
        assert code == 0
        streams.append((out / "metrics.jsonl").read_bytes())
    ok = streams[0] == streams[1] and len(streams[0].splitlines()) == 200
    verdict(8, "determinism", ok, f"two runs, metrics.jsonl identical: {streams[0] == streams[1]} "
                                  f"({len(streams[0])} bytes, {len(streams[0].splitlines())} lines)")


def test_c9_csv_pipeline(verdict, tmp_path):
    doc = json.loads(TOY.read_text())
    rows = sum(len((TOY.parent / d["path"]).read_text().splitlines()) - 1 for d in doc["domains"])
    code = main(["train", "--manifest", str(TOY), "--out", str(tmp_path)])
    final = json.loads((tmp_path / "final.json").read_text()) if code == 0 else {}
    acc = final.get("metrics", {}).get("accuracy", float("nan"))
    verdict(9, "CSV pipeline", code == 0 and rows == 300,
            f"train on the bundled {rows}-row toy CSV triple (default config) exit {code}, TU accuracy {acc:.3f}")
