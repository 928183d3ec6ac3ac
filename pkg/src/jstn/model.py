"""The network: per-domain encoders into a shared subspace, a shared
classifier and a single-layer domain discriminator."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Node, ParameterError

ROLES = ("SN", "SI", "T")


@dataclass(frozen=True)
class InitSpec:
    scheme: str = "scaled_uniform"
    gain: float = 1.0
    seed: int = 0


@dataclass
class Affine:
    W: Node
    b: Node

    def __call__(self, x: Node) -> Node:
        return ad.add(ad.matmul(x, self.W), self.b)

    def params(self) -> list[Node]:
        return [self.W, self.b]


@dataclass
class Encoder:
    """Two affine layers, LeakyReLU between them: in -> hidden -> d_C."""

    hidden: Affine
    out: Affine
    slope: float

    @property
    def in_dim(self) -> int:
        return self.hidden.W.shape[0]

    def __call__(self, x: Node) -> Node:
        h = ad.leaky_relu(self.hidden(x), self.slope)
        return self.out(h)

    def params(self) -> list[Node]:
        return self.hidden.params() + self.out.params()


@dataclass
class JstnModel:
    encoders: dict[str, Encoder]
    classifier: Affine
    discriminator: Affine
    d_c: int
    n_classes: int
    hidden: int
    slope: float
    input_dims: dict[str, int] = field(default_factory=dict)

    def params(self) -> list[Node]:
        out: list[Node] = []
        for role in ROLES:
            if role in self.encoders:
                out.extend(self.encoders[role].params())
        out.extend(self.classifier.params())
        out.extend(self.discriminator.params())
        return out

    def named_params(self) -> dict[str, Node]:
        named: dict[str, Node] = {}
        for role in ROLES:
            if role in self.encoders:
                enc = self.encoders[role]
                named[f"E_{role}.hidden.W"] = enc.hidden.W
                named[f"E_{role}.hidden.b"] = enc.hidden.b
                named[f"E_{role}.out.W"] = enc.out.W
                named[f"E_{role}.out.b"] = enc.out.b
        named["C.W"] = self.classifier.W
        named["C.b"] = self.classifier.b
        named["D.W"] = self.discriminator.W
        named["D.b"] = self.discriminator.b
        return named

    def zero_grad(self) -> None:
        ad.zero_grad(self.params())


def _affine(rng: np.random.Generator, fan_in: int, fan_out: int, spec: InitSpec, name: str) -> Affine:
    if spec.scheme == "zeros":
        W = np.zeros((fan_in, fan_out))
    elif spec.scheme == "scaled_uniform":
        bound = spec.gain / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    else:
        raise ParameterError(f"unknown init scheme {spec.scheme!r}")
    return Affine(ad.parameter(W, f"{name}.W"), ad.parameter(np.zeros((1, fan_out)), f"{name}.b"))


def init_model(
    input_dims: dict[str, int],
    n_classes: int = 5,
    d_c: int = 3,
    hidden: int = 128,
    slope: float = 0.01,
    init: InitSpec = InitSpec(),
) -> JstnModel:
    """Build a model with one encoder per role present in ``input_dims``.

    Roles are ``SN``, ``SI`` and ``T``; a single-source model simply omits one.
    Weights are uniform in +-gain/sqrt(fan_in), biases start at zero.
    """
    for key, val in [("n_classes", n_classes), ("d_c", d_c), ("hidden", hidden), *input_dims.items()]:
        if int(val) <= 0:
            raise ParameterError(f"{key} must be positive, got {val}")
    unknown = set(input_dims) - set(ROLES)
    if unknown:
        raise ParameterError(f"unknown encoder roles {sorted(unknown)}")
    rng = np.random.default_rng(init.seed)
    encoders = {}
    # fixed role order keeps parameter draws independent of dict ordering
    for role in ROLES:
        if role not in input_dims:
            continue
        d_in = int(input_dims[role])
        encoders[role] = Encoder(
            _affine(rng, d_in, hidden, init, f"E_{role}.hidden"),
            _affine(rng, hidden, d_c, init, f"E_{role}.out"),
            slope,
        )
    classifier = _affine(rng, d_c, n_classes, init, "C")
    discriminator = _affine(rng, d_c, 1, init, "D")
    return JstnModel(
        encoders=encoders,
        classifier=classifier,
        discriminator=discriminator,
        d_c=d_c,
        n_classes=n_classes,
        hidden=hidden,
        slope=slope,
        input_dims={r: int(input_dims[r]) for r in ROLES if r in input_dims},
    )


def encoder_role(domain_role: str) -> str:
    """Map a dataset role to its encoder: TL and TU both use the target encoder."""
    if domain_role in ("T", "TL", "TU"):
        return "T"
    if domain_role in ("SN", "SI"):
        return domain_role
    raise ParameterError(f"unknown domain role {domain_role!r}")


def encode(model: JstnModel, x: Node, domain_role: str) -> Node:
    role = encoder_role(domain_role)
    if role not in model.encoders:
        raise ParameterError(f"model has no encoder for role {role}")
    enc = model.encoders[role]
    if x.shape[1] != enc.in_dim:
        raise DimensionError(f"encoder {role}: expected {enc.in_dim} input features, got {x.shape[1]}")
    return enc(x)


def classify(model: JstnModel, f: Node) -> Node:
    if f.shape[1] != model.d_c:
        raise DimensionError(f"classifier expects width {model.d_c}, got {f.shape[1]}")
    return model.classifier(f)


def discriminate(model: JstnModel, f: Node, eps: float = ad.PROB_EPS) -> Node:
    """Probability of 'source' per row, clamped into [eps, 1 - eps]."""
    if f.shape[1] != model.d_c:
        raise DimensionError(f"discriminator expects width {model.d_c}, got {f.shape[1]}")
    return ad.clamp(ad.sigmoid(model.discriminator(f)), eps, 1.0 - eps)


def predict(model: JstnModel, x: np.ndarray, domain_role: str = "T") -> np.ndarray:
    """Class indices (0-based) by argmax of the logits; ties go to the lowest index."""
    logits = classify(model, encode(model, ad.constant(x), domain_role)).values
    return np.argmax(logits, axis=1)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: JstnModel, path: str | Path, config_hash: str = "") -> None:
    arrays = {name: p.values for name, p in model.named_params().items()}
    meta = {
        "d_c": model.d_c,
        "n_classes": model.n_classes,
        "hidden": model.hidden,
        "slope": model.slope,
        "input_dims": model.input_dims,
        "config_hash": config_hash,
    }
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path) -> tuple[JstnModel, str]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        model = init_model(
            meta["input_dims"],
            n_classes=meta["n_classes"],
            d_c=meta["d_c"],
            hidden=meta["hidden"],
            slope=meta["slope"],
            init=InitSpec(scheme="zeros"),
        )
        for name, p in model.named_params().items():
            p.values = data[name].copy()
            p.zero_grad()
    return model, meta["config_hash"]


def params_digest(model: JstnModel) -> str:
    h = hashlib.sha256()
    for name, p in model.named_params().items():
        h.update(name.encode())
        h.update(p.values.tobytes())
    return h.hexdigest()
