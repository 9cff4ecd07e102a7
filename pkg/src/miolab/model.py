"""Encoder/projector MLPs with hand-written backpropagation.

Row-vector convention: a layer maps a batch ``a`` of shape ``(B, in)`` to
``act(norm(a @ W + b))``. ``norm`` is either the identity or per-feature
batch standardization (batch mean and biased variance, ``eps = 1e-5``, no
learned affine).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Iterator, Literal

import numpy as np

from .numerics import DimensionError, DomainError, Rng

__all__ = [
    "MlpSpec",
    "ModelSpec",
    "Layer",
    "ModelState",
    "ForwardTrace",
    "AuditResult",
    "AuditError",
    "CheckpointError",
    "init_params",
    "forward",
    "backward",
    "finite_diff_audit",
    "save_checkpoint",
    "load_checkpoint",
    "default_model_spec",
]

BN_EPS = 1e-5
CHECKPOINT_VERSION = 1

Activation = Literal["relu", "identity"]
Norm = Literal["none", "batch"]


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    activations: tuple[str, ...] = ()
    norms: tuple[str, ...] = ()
    bias: bool = True

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2:
            raise DomainError("an MLP needs at least one layer (two widths)")
        if any(w < 1 for w in widths):
            raise DomainError(f"layer widths must be positive, got {widths}")
        n = len(widths) - 1
        acts = tuple(self.activations) or ("relu",) * n
        norms = tuple(self.norms) or ("none",) * n
        if len(acts) != n or len(norms) != n:
            raise DomainError(f"need {n} activations and norms, got {len(acts)} and {len(norms)}")
        if any(a not in ("relu", "identity") for a in acts):
            raise DomainError(f"unknown activation in {acts}")
        if any(m not in ("none", "batch") for m in norms):
            raise DomainError(f"unknown normalization in {norms}")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "activations", acts)
        object.__setattr__(self, "norms", norms)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "activations": list(self.activations),
            "norms": list(self.norms),
            "bias": self.bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["widths"]), tuple(d["activations"]), tuple(d["norms"]), bool(d["bias"]))


@dataclass(frozen=True)
class ModelSpec:
    encoder: MlpSpec
    projector: MlpSpec

    def __post_init__(self):
        if self.encoder.widths[-1] != self.projector.widths[0]:
            raise DomainError("projector input width must equal encoder output width")

    def to_dict(self) -> dict:
        return {"encoder": self.encoder.to_dict(), "projector": self.projector.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(MlpSpec.from_dict(d["encoder"]), MlpSpec.from_dict(d["projector"]))


def default_model_spec(
    input_dim: int = 32,
    hidden: int = 64,
    out_dim: int = 32,
    projector_hidden_layers: int = 1,
    batch_norm: bool = True,
) -> ModelSpec:
    """Encoder ``input -> hidden -> hidden`` ending in ReLU; projector with
    ``projector_hidden_layers`` hidden ReLU layers and a linear output."""
    norm = "batch" if batch_norm else "none"
    enc = MlpSpec((input_dim, hidden, hidden), ("relu", "relu"), (norm, "none"))
    k = int(projector_hidden_layers)
    if k < 0:
        raise DomainError("projector_hidden_layers must be >= 0")
    proj = MlpSpec(
        (hidden,) + (hidden,) * k + (out_dim,),
        ("relu",) * k + ("identity",),
        (norm,) * k + ("none",),
    )
    return ModelSpec(enc, proj)


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray

    def copy(self) -> "Layer":
        return Layer(self.W.copy(), self.b.copy())


@dataclass
class ModelState:
    encoder: list[Layer]
    projector: list[Layer]
    seed: int | None = None

    def layers(self) -> Iterator[tuple[str, Layer]]:
        for i, l in enumerate(self.encoder):
            yield f"encoder.{i}", l
        for i, l in enumerate(self.projector):
            yield f"projector.{i}", l

    def arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for name, l in self.layers():
            yield f"{name}.W", l.W
            yield f"{name}.b", l.b

    @property
    def n_params(self) -> int:
        return sum(a.size for _, a in self.arrays())

    def copy(self) -> "ModelState":
        return ModelState([l.copy() for l in self.encoder], [l.copy() for l in self.projector], self.seed)

    def zeros_like(self) -> "ModelState":
        z = lambda l: Layer(np.zeros_like(l.W), np.zeros_like(l.b))  # noqa: E731
        return ModelState([z(l) for l in self.encoder], [z(l) for l in self.projector], self.seed)


def _init_mlp(spec: MlpSpec, rng: Rng) -> list[Layer]:
    layers = []
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        W = rng.substream(i).normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))
        layers.append(Layer(W, np.zeros(fan_out)))
    return layers


def init_params(spec: ModelSpec, rng: Rng) -> ModelState:
    """He-normal weights (variance ``2 / fan_in``), zero biases."""
    return ModelState(_init_mlp(spec.encoder, rng.substream(0)), _init_mlp(spec.projector, rng.substream(1)), rng.seed)


def _check_state(state: ModelState, spec: ModelSpec):
    for mlp, layers, tag in ((spec.encoder, state.encoder, "encoder"), (spec.projector, state.projector, "projector")):
        if len(layers) != mlp.n_layers:
            raise DimensionError(f"{tag} has {len(layers)} layers, spec wants {mlp.n_layers}")
        for i, l in enumerate(layers):
            want = (mlp.widths[i], mlp.widths[i + 1])
            if l.W.shape != want or l.b.shape != (want[1],):
                raise DimensionError(f"{tag}.{i} has W{l.W.shape} b{l.b.shape}, spec wants W{want}")


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class _LayerCache:
    a_in: np.ndarray
    pre: np.ndarray
    xhat: np.ndarray | None
    inv_std: np.ndarray | None
    mean: np.ndarray | None
    out: np.ndarray


@dataclass
class ForwardTrace:
    x: np.ndarray
    h: np.ndarray
    z: np.ndarray
    encoder: list[_LayerCache] = field(repr=False)
    projector: list[_LayerCache] = field(repr=False)

    def batch_stats(self) -> dict:
        """Per-layer batch mean and inverse std of the normalized layers."""
        out = {}
        for tag, caches in (("encoder", self.encoder), ("projector", self.projector)):
            for i, c in enumerate(caches):
                if c.mean is not None:
                    out[f"{tag}.{i}"] = (c.mean, c.inv_std)
        return out


def _mlp_forward(spec: MlpSpec, layers: list[Layer], a: np.ndarray) -> tuple[np.ndarray, list[_LayerCache]]:
    caches = []
    for i, layer in enumerate(layers):
        pre = a @ layer.W
        if spec.bias:
            pre = pre + layer.b
        xhat = inv_std = mean = None
        t = pre
        if spec.norms[i] == "batch":
            mean = pre.mean(axis=0)
            var = ((pre - mean) ** 2).mean(axis=0)
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (pre - mean) * inv_std
            t = xhat
        out = np.maximum(t, 0.0) if spec.activations[i] == "relu" else t
        caches.append(_LayerCache(a, pre, xhat, inv_std, mean, out))
        a = out
    return a, caches


def forward(state: ModelState, spec: ModelSpec, x) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.encoder.widths[0]:
        raise DimensionError(f"input must be (B, {spec.encoder.widths[0]}), got {x.shape}")
    _check_state(state, spec)
    h, enc = _mlp_forward(spec.encoder, state.encoder, x)
    if spec.encoder.activations[-1] == "relu":
        assert np.all(h >= 0), "ReLU encoder produced a negative feature"
    z, proj = _mlp_forward(spec.projector, state.projector, h)
    return ForwardTrace(x=x, h=h, z=z, encoder=enc, projector=proj)


def _mlp_backward(spec: MlpSpec, layers: list[Layer], caches: list[_LayerCache], g: np.ndarray):
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        c, layer = caches[i], layers[i]
        t = c.xhat if c.xhat is not None else c.pre
        if spec.activations[i] == "relu":
            g = g * (t > 0)
        if spec.norms[i] == "batch":
            n = g.shape[0]
            gsum = g.sum(axis=0)
            gx = (g * c.xhat).sum(axis=0)
            g = c.inv_std * (g - gsum / n - c.xhat * gx / n)
        dW = c.a_in.T @ g
        db = g.sum(axis=0) if spec.bias else np.zeros_like(layer.b)
        grads[i] = Layer(dW, db)
        g = g @ layer.W.T
    return grads, g


def backward(state: ModelState, spec: ModelSpec, trace: ForwardTrace, grad_z) -> ModelState:
    """Exact parameter gradients given ``dL/dz`` for the traced batch."""
    grad_z = np.asarray(grad_z, dtype=np.float64)
    if grad_z.shape != trace.z.shape:
        raise DimensionError(f"grad_z shape {grad_z.shape} does not match z {trace.z.shape}")
    if len(trace.encoder) != len(state.encoder) or len(trace.projector) != len(state.projector):
        raise DimensionError("trace was produced by a different model")
    gp, g_h = _mlp_backward(spec.projector, state.projector, trace.projector, grad_z)
    ge, _ = _mlp_backward(spec.encoder, state.encoder, trace.encoder, g_h)
    return ModelState(ge, gp, state.seed)


# ---------------------------------------------------------------------------
# finite-difference audit


class AuditError(RuntimeError):
    pass


@dataclass(frozen=True)
class AuditResult:
    max_rel_err: float
    worst_parameter: str
    checked: int


def finite_diff_audit(
    state: ModelState,
    spec: ModelSpec,
    x,
    loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
    step: float = 1e-5,
    max_params: int | None = None,
    rng: Rng | None = None,
    backward_fn: Callable = backward,
) -> AuditResult:
    """Compare :func:`backward` against central differences.

    ``loss(z)`` returns ``(value, dL/dz)``. Every scalar parameter is probed
    unless ``max_params`` is given, in which case a seeded random subset of
    that size is used. The error is ``max |analytic - numeric|`` over the
    probed entries divided by the largest ``|numeric|`` among them.
    """
    if not 1e-7 <= step <= 1e-3:
        raise DomainError(f"step must lie in [1e-7, 1e-3], got {step}")
    trace = forward(state, spec, x)
    value, gz = loss(trace.z)
    grads = backward_fn(state, spec, trace, gz)

    probe = [(name, a, g, j) for (name, a), (_, g) in zip(state.arrays(), grads.arrays()) for j in range(a.size)]
    if max_params is not None and len(probe) > max_params:
        pick = (rng or Rng(0)).generator.choice(len(probe), size=max_params, replace=False)
        probe = [probe[k] for k in np.sort(pick)]

    analytic = np.empty(len(probe))
    numeric = np.empty(len(probe))
    work = state.copy()
    warrays = dict(work.arrays())
    for k, (name, a, g, j) in enumerate(probe):
        target = warrays[name].reshape(-1)
        orig = target[j]
        vals = []
        for sgn in (1.0, -1.0):
            target[j] = orig + sgn * step
            v, _ = loss(forward(work, spec, x).z)
            if not np.isfinite(v):
                raise AuditError(f"non-finite loss when perturbing {name}[{j}]")
            vals.append(v)
        target[j] = orig
        numeric[k] = (vals[0] - vals[1]) / (2 * step)
        analytic[k] = g.reshape(-1)[j]

    diff = np.abs(analytic - numeric)
    scale = max(np.max(np.abs(numeric)), 1e-300)
    worst = int(np.argmax(diff))
    name, _, _, j = probe[worst]
    return AuditResult(float(diff[worst] / scale), f"{name}[{j}]", len(probe))


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(ValueError):
    pass


def _fingerprint(state: ModelState) -> str:
    h = hashlib.sha256()
    for name, a in state.arrays():
        h.update(name.encode())
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def save_checkpoint(path, state: ModelState, spec: ModelSpec, extra: dict | None = None) -> None:
    """JSON document with per-layer row-major weights written as shortest
    round-trip decimals, so loading restores every bit."""
    doc = {
        "format": "miolab-checkpoint",
        "schema_version": CHECKPOINT_VERSION,
        "seed": state.seed,
        "spec": spec.to_dict(),
        "layers": [
            {"name": name, "rows": l.W.shape[0], "cols": l.W.shape[1], "W": l.W.ravel().tolist(), "b": l.b.tolist()}
            for name, l in state.layers()
        ],
        "sha256": _fingerprint(state),
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ModelState, ModelSpec]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != "miolab-checkpoint" or doc.get("schema_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} is not a version-{CHECKPOINT_VERSION} miolab checkpoint")
    spec = ModelSpec.from_dict(doc["spec"])
    enc, proj = [], []
    for entry in doc["layers"]:
        W = np.array(entry["W"], dtype=np.float64).reshape(entry["rows"], entry["cols"])
        layer = Layer(W, np.array(entry["b"], dtype=np.float64))
        (enc if entry["name"].startswith("encoder") else proj).append(layer)
    state = ModelState(enc, proj, doc.get("seed"))
    try:
        _check_state(state, spec)
    except DimensionError as exc:
        raise CheckpointError(str(exc)) from exc
    if _fingerprint(state) != doc.get("sha256"):
        raise CheckpointError(f"{path}: parameter checksum mismatch")
    return state, spec
