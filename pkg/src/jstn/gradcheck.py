"""Finite-difference verification of every loss term on tiny random problems.

Each seed builds a small model and random SN/SI/TL/TU data, freezes a step
plan (teachers, source weights, pseudo-labels, representative memberships)
and compares the backpropagated gradient of each term with central
differences over every parameter entry.

The discriminator term is special: the gradient reversal layer makes the
encoders see ``-grl_lambda`` times the true derivative. The reference
gradient applies the same sign rule, so a flipped or missing reversal
fails the check rather than hiding in it.
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses as L
from .config import TrainConfig
from .model import discriminate
from .trainer import TrainBatch, build_losses, forward, make_plan, model_for

TERMS = ("l_sup", "l_hd", "l_sf_sn", "l_sf_si", "l_wis", "l_esc", "l_esr", "l_ssd", "l_ssc", "total")
THRESHOLD = 1e-4
STEP = 1e-5


@dataclass
class GradcheckReport:
    max_error: dict[str, float]
    per_seed: list[dict[str, float]] = field(default_factory=list)
    threshold: float = THRESHOLD
    seconds: float = 0.0

    @property
    def failed(self) -> list[str]:
        return [name for name, err in self.max_error.items() if not err <= self.threshold]

    @property
    def passed(self) -> bool:
        return not self.failed

    def lines(self) -> list[str]:
        return [f"{name:8s} max_rel_err={err:.3e} {'ok' if err <= self.threshold else 'FAIL'}"
                for name, err in self.max_error.items()]


def tiny_problem(seed: int, n_classes: int = 3) -> tuple[TrainBatch, TrainConfig]:
    """Random data with every class present in each labelled set."""
    rng = np.random.default_rng(seed)
    K = n_classes

    def labels(n):
        y = np.concatenate([np.arange(K), rng.integers(0, K, n - K)])
        return rng.permutation(y)

    batch = TrainBatch(
        n_classes=K,
        X_TL=rng.standard_normal((9, 6)), y_TL=labels(9),
        X_TU=rng.standard_normal((15, 6)),
        X_SN=rng.standard_normal((12, 5)), y_SN=labels(12),
        X_SI=rng.standard_normal((9, 4)), y_SI=labels(9),
    )
    # larger coefficients than the defaults so every term matters in the total
    cfg = TrainConfig(hidden=5, d_c=3, R=2, seed=seed, alpha=0.3, beta=0.2, lam=0.2, gamma=0.5, eta=0.2)
    return batch, cfg


def _term_values(model, batch, plan, cfg) -> dict[str, float]:
    step = build_losses(model, forward(model, batch), batch, plan, cfg)
    out = {name: (0.0 if step.terms.get(name) is None else step.terms[name].item()) for name in TERMS[:-1]}
    out["total"] = step.total.item()
    return out


def check_seed(seed: int, h: float = STEP) -> dict[str, float]:
    """Relative error per term for one random problem."""
    batch, cfg = tiny_problem(seed)
    model = model_for(batch, cfg)
    fw = forward(model, batch)
    plan = make_plan(fw, batch, cfg, np.random.default_rng(seed), epoch=1)
    named = model.named_params()

    # analytic gradients, one backward pass per term on a fresh graph
    analytic: dict[str, dict[str, np.ndarray]] = {}
    for term in TERMS:
        model.zero_grad()
        step = build_losses(model, forward(model, batch), batch, plan, cfg)
        node = step.total if term == "total" else step.terms.get(term)
        if node is None:
            raise RuntimeError(f"term {term} is inactive in the gradcheck problem")
        ad.backward(node)
        analytic[term] = {n: (np.zeros_like(p.values) if p.grad is None else p.grad.copy()) for n, p in named.items()}
    model.zero_grad()

    # central differences of all term values at once
    numeric = {term: {n: np.zeros_like(p.values) for n, p in named.items()} for term in TERMS}
    for pname, p in named.items():
        flat = p.values.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            plus = _term_values(model, batch, plan, cfg)
            flat[i] = old - h
            minus = _term_values(model, batch, plan, cfg)
            flat[i] = old
            for term in TERMS:
                numeric[term][pname].reshape(-1)[i] = (plus[term] - minus[term]) / (2.0 * h)

    # gradient reversal: encoders receive -grl_lambda times the adversarial part
    for pname in named:
        if not pname.startswith("E_"):
            continue
        adv = numeric["l_ssd"][pname]
        numeric["total"][pname] = numeric["total"][pname] - (1.0 + cfg.grl_lambda) * cfg.gamma * adv
        numeric["l_ssd"][pname] = -cfg.grl_lambda * adv
    errors = {}
    for term in TERMS:
        a = np.concatenate([analytic[term][n].ravel() for n in named])
        b = np.concatenate([numeric[term][n].ravel() for n in named])
        errors[term] = ad.relative_error(a, b)
    return errors


def run_gradcheck(seeds=range(10), h: float = STEP, threshold: float = THRESHOLD) -> GradcheckReport:
    t0 = time.perf_counter()
    per_seed = [check_seed(s, h) for s in seeds]
    worst = {term: max(r[term] for r in per_seed) for term in TERMS}
    return GradcheckReport(worst, per_seed, threshold, time.perf_counter() - t0)


@dataclass
class GrlProbe:
    """Outcome of one plain gradient step on the adversarial loss alone."""

    bce_before: float
    bce_after_discriminator_step: float
    bce_after_encoder_step: float
    encoder_grad: np.ndarray  # what backprop delivers to the encoders
    encoder_true_grad: np.ndarray  # central differences of the BCE itself

    @property
    def discriminator_improves(self) -> bool:
        return self.bce_after_discriminator_step < self.bce_before

    @property
    def encoder_opposes(self) -> bool:
        """Encoders are pushed uphill on the BCE: every informative entry has the opposite sign."""
        g, t = self.encoder_grad, self.encoder_true_grad
        big = np.abs(t) > 1e-8 * max(np.abs(t).max(), 1e-300)
        return bool(np.all(np.sign(g[big]) == -np.sign(t[big])) and self.bce_after_encoder_step > self.bce_before)


def grl_probe(seed: int = 0, lr: float = 0.05) -> GrlProbe:
    batch, cfg = tiny_problem(seed)
    model = model_for(batch, cfg)
    named = model.named_params()
    enc = [p for n, p in named.items() if n.startswith("E_")]
    disc = [p for n, p in named.items() if n.startswith("D.")]

    def bce() -> ad.Node:
        fw = forward(model, batch)
        f_S = ad.concat_rows([fw.feats[r] for r in batch.sources])
        f_T = ad.concat_rows([fw.feats["TL"], fw.feats["TU"]])
        return L.scenario_discriminator_loss(discriminate(model, ad.grad_reverse(f_S, cfg.grl_lambda)),
                                             discriminate(model, ad.grad_reverse(f_T, cfg.grl_lambda)))

    model.zero_grad()
    before = bce()
    ad.backward(before)
    enc_grad = np.concatenate([p.grad.ravel() for p in enc])
    enc_true = np.concatenate([ad.numeric_grad(lambda: bce().item(), p).ravel() for p in enc])
    saved = {id(p): p.values.copy() for p in enc + disc}
    grads = {id(p): p.grad.copy() for p in enc + disc}

    for p in disc:
        p.values -= lr * grads[id(p)]
    after_d = bce().item()
    for p in disc:
        p.values[...] = saved[id(p)]
    for p in enc:
        p.values -= lr * grads[id(p)]
    after_e = bce().item()
    for p in enc:
        p.values[...] = saved[id(p)]
    return GrlProbe(before.item(), after_d, after_e, enc_grad, enc_true)


@contextlib.contextmanager
def corrupted_adjoint(op: str = "leaky_relu", factor: float = 1.5):
    """Temporarily scale the backward pass of ``autodiff.<op>`` by ``factor``.

    A negative control: the check must fail while this is active.
    """
    original = getattr(ad, op)

    def wrapped(*args, **kwargs):
        out = original(*args, **kwargs)
        inner = out._backward
        if inner is not None:
            out._backward = lambda g: inner(factor * g)
        return out

    setattr(ad, op, wrapped)
    try:
        yield
    finally:
        setattr(ad, op, original)
