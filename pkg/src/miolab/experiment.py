"""Versioned experiment documents and the run functions behind each subcommand.

An experiment document is JSON::

    {"schema_version": 1, "seed": 0, "output_dir": "runs/demo",
     "dataset": {"kind": "vector", ...}, "model": {...},
     "train": {...}, "probe": {...}, "checkpoint_every": 0}

Every section is optional except ``schema_version``; omitted keys take the
library defaults and unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .data_augment import (
    AugmentPolicy,
    CifarFormatError,
    VectorAugment,
    VectorDatasetSpec,
    load_cifar10_binary,
    make_vector_dataset,
)
from .evaluation import ProbeConfig, extract_features, linear_probe
from .fn_geometry import GeometryConfig, monte_carlo_phi
from .losses import LossConfig, get_loss
from .mi_oracle import DiscreteJoint, random_joint, verify_bound
from .model import (
    CheckpointError,
    ModelSpec,
    ModelState,
    default_model_spec,
    finite_diff_audit,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .numerics import DimensionError, DomainError, Rng
from .pairing import build_pairs
from .trainer import METRICS_COLUMNS, TrainConfig, pretrain, write_metrics_csv

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "CifarSubsetSpec",
    "ModelConfig",
    "ExperimentConfig",
    "SweepSpec",
    "SWEEP_PARAMETERS",
    "parse_experiment",
    "load_experiment",
    "parse_sweep",
    "load_sweep",
    "config_hash",
    "write_manifest",
    "load_dataset",
    "run_pretrain",
    "run_probe",
    "run_experiment",
    "run_sweep",
    "run_gradcheck",
    "run_model_gradcheck",
    "run_mibound",
    "run_geometry",
    "geometry_regime_failures",
    "write_csv",
    "threads_from_env",
    "random_encoder",
    "versions",
    "PROBE_COLUMNS",
    "SWEEP_COLUMNS",
    "SUMMARY_COLUMNS",
    "GRADCHECK_COLUMNS",
    "MIBOUND_COLUMNS",
    "GEOMETRY_COLUMNS",
    "METRICS_COLUMNS",
]


class ConfigError(ValueError):
    """Invalid experiment document; the message starts with the field path."""


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class CifarSubsetSpec:
    path: str
    test_path: str | None = None
    max_records: int | None = None
    test_max_records: int | None = None
    kind: str = "cifar"


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    out_dim: int = 32
    projector_hidden_layers: int = 1
    batch_norm: bool = True

    def build(self, input_dim: int) -> ModelSpec:
        return default_model_spec(input_dim, self.hidden, self.out_dim, self.projector_hidden_layers, self.batch_norm)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    dataset: VectorDatasetSpec | CifarSubsetSpec = field(default_factory=VectorDatasetSpec)
    test_samples_per_class: int = 256
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    checkpoint_every: int = 0

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(
            self,
            seed=int(seed),
            train=dataclasses.replace(self.train, seed=int(seed)),
            probe=dataclasses.replace(self.probe, seed=int(seed)),
        )

    def to_dict(self, with_output_dir: bool = True) -> dict:
        """Round-trippable document. Manifests and the config hash leave out
        ``output_dir`` so the same run written elsewhere is byte-identical."""
        train = dataclasses.asdict(self.train)
        train.pop("seed")
        aug = train.pop("augment")
        aug["kind"] = "image" if isinstance(self.train.augment, AugmentPolicy) else "vector"
        train["augment"] = aug
        probe = dataclasses.asdict(self.probe)
        probe.pop("seed")
        ds = dataclasses.asdict(self.dataset)
        if isinstance(self.dataset, VectorDatasetSpec):
            ds["kind"] = "vector"
        doc = {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "dataset": ds,
            "test_samples_per_class": self.test_samples_per_class,
            "model": dataclasses.asdict(self.model),
            "train": train,
            "probe": probe,
            "checkpoint_every": self.checkpoint_every,
        }
        if not with_output_dir:
            del doc["output_dir"]
        return doc


def _check_type(value, default, path: str):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and len(value) == len(default)
        if ok:
            value = tuple(_check_type(v, d, f"{path}[{i}]") for i, (v, d) in enumerate(zip(value, default)))
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {json.dumps(value)}")
    return value


def _build(cls, data, path: str, skip=(), **fixed):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip and f.name not in fixed}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")
    kw = dict(fixed)
    for key, value in data.items():
        f = names[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        if default is None and key in ("max_records", "test_max_records"):
            if value is not None and not (isinstance(value, int) and not isinstance(value, bool)):
                raise ConfigError(f"{path}.{key}: expected int or null")
        elif default is None and key == "test_path":
            if value is not None and not isinstance(value, str):
                raise ConfigError(f"{path}.{key}: expected string or null")
        elif default is None and key == "path":
            if not isinstance(value, str):
                raise ConfigError(f"{path}.{key}: expected string")
        else:
            value = _check_type(value, default, f"{path}.{key}")
        kw[key] = value
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except (DomainError, DimensionError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_experiment(doc: Any, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    """Validate a decoded experiment document."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected an object")
    allowed = {"schema_version"} | {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {json.dumps(doc.get('schema_version'))}")

    base = ExperimentConfig()
    top = {}
    for key in ("seed", "output_dir", "test_samples_per_class", "checkpoint_every"):
        if key in doc:
            top[key] = _check_type(doc[key], getattr(base, key), key)
    if seed is not None:
        top["seed"] = int(seed)
    if output_dir is not None:
        top["output_dir"] = str(output_dir)
    s = top.get("seed", base.seed)
    if top.get("checkpoint_every", 0) < 0:
        raise ConfigError("checkpoint_every: must be >= 0")
    if top.get("test_samples_per_class", 1) < 1:
        raise ConfigError("test_samples_per_class: must be >= 1")

    ds_doc = dict(doc.get("dataset", {}))
    kind = ds_doc.pop("kind", "vector")
    if kind == "vector":
        dataset = _build(VectorDatasetSpec, ds_doc, "dataset")
    elif kind == "cifar":
        dataset = _build(CifarSubsetSpec, ds_doc, "dataset", skip=("kind",))
    else:
        raise ConfigError(f"dataset.kind: expected 'vector' or 'cifar', got {json.dumps(kind)}")

    model = _build(ModelConfig, doc.get("model", {}), "model")
    if model.projector_hidden_layers < 0:
        raise ConfigError("model.projector_hidden_layers: must be >= 0")
    if model.hidden < 1 or model.out_dim < 1:
        raise ConfigError("model: hidden and out_dim must be >= 1")

    tr_doc = dict(doc.get("train", {}))
    if not isinstance(tr_doc, dict):
        raise ConfigError("train: expected an object")
    aug_doc = dict(tr_doc.pop("augment", {}))
    aug_kind = aug_doc.pop("kind", "image" if kind == "cifar" else "vector")
    if aug_kind == "vector":
        augment = _build(VectorAugment, aug_doc, "train.augment")
    elif aug_kind == "image":
        augment = _build(AugmentPolicy, aug_doc, "train.augment")
    else:
        raise ConfigError(f"train.augment.kind: expected 'vector' or 'image', got {json.dumps(aug_kind)}")
    if (aug_kind == "image") != (kind == "cifar"):
        raise ConfigError("train.augment.kind: image augmentation requires a cifar dataset and vice versa")
    train = _build(TrainConfig, tr_doc, "train", augment=augment, seed=s)
    probe = _build(ProbeConfig, doc.get("probe", {}), "probe", seed=s)
    return ExperimentConfig(dataset=dataset, model=model, train=train, probe=probe, **top)


def _read_json(path) -> Any:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def load_experiment(path, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    try:
        return parse_experiment(_read_json(path), seed, output_dir)
    except ConfigError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(str(path)) else f"{path}: {msg}") from None


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(with_output_dir=False), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def versions() -> dict:
    return {"miolab": __version__, "numpy": np.__version__, "python": platform.python_version()}


def write_manifest(out_dir, command: str, seed: int, config: dict, config_sha256: str | None = None) -> Path:
    """Run manifest: command, config and its hash, seed, library versions.
    Written before any long computation so a crashed run stays identifiable."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config_sha256 is None:
        config_sha256 = hashlib.sha256(json.dumps(config, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
    doc = {
        "command": command,
        "config_sha256": config_sha256,
        "seed": seed,
        "versions": versions(),
        "config": config,
    }
    path = out / "manifest.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def write_csv(path, columns, rows) -> None:
    """Rows are dicts; floats are written with ``repr`` so they round-trip."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (r[c] for c in columns)])


# ---------------------------------------------------------------------------
# data


def _images_to_array(samples):
    x = np.stack([s.pixels for s in samples])
    y = np.array([s.label for s in samples])
    return x, y


def load_dataset(cfg: ExperimentConfig):
    """``(x_train, y_train, x_test, y_test)``. Vector data draws a fresh
    test split around the same class means; a CIFAR file without
    ``test_path`` keeps its last fifth for testing."""
    ds = cfg.dataset
    if isinstance(ds, VectorDatasetSpec):
        x, y = make_vector_dataset(ds, "train")
        xt, yt = make_vector_dataset(ds, "test", cfg.test_samples_per_class)
        return x, y, xt, yt
    try:
        x, y = _images_to_array(load_cifar10_binary(ds.path, ds.max_records))
        if ds.test_path is not None:
            xt, yt = _images_to_array(load_cifar10_binary(ds.test_path, ds.test_max_records))
        else:
            cut = len(x) - max(1, len(x) // 5)
            x, xt, y, yt = x[:cut], x[cut:], y[:cut], y[cut:]
    except OSError as exc:
        raise ConfigError(f"dataset.path: {exc.filename}: {exc.strerror}") from None
    except CifarFormatError as exc:
        raise ConfigError(f"dataset.path: {exc}") from None
    return x, y, xt, yt


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(len(x), -1)


def _input_dim(x: np.ndarray) -> int:
    return int(np.prod(x.shape[1:]))


# ---------------------------------------------------------------------------
# pretrain / probe


def run_pretrain(cfg: ExperimentConfig, out_dir=None, data=None) -> dict:
    """Pre-train, writing ``manifest.json``, ``metrics.csv`` (one row per
    epoch, appended as it goes), periodic ``checkpoint_epochNNNN.json`` and
    the final ``checkpoint.json``. Raises :class:`DivergenceError` as-is."""
    out = Path(out_dir or cfg.output_dir)
    write_manifest(out, "pretrain", cfg.seed, cfg.to_dict(with_output_dir=False), config_hash(cfg))
    x, _, _, _ = data if data is not None else load_dataset(cfg)
    spec = cfg.model.build(_input_dim(x))
    metrics = out / "metrics.csv"
    write_metrics_csv(metrics, [])

    def on_epoch(epoch, state, row):
        write_metrics_csv(metrics, [row], append=True)
        if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_epoch{epoch + 1:04d}.json", state, spec)

    state, rows = pretrain(cfg.train, x, spec, on_epoch=on_epoch)
    save_checkpoint(out / "checkpoint.json", state, spec)
    return {"state": state, "spec": spec, "rows": rows, "checkpoint": out / "checkpoint.json"}


PROBE_COLUMNS = ("encoder", "train_accuracy", "val_accuracy", "test_accuracy", "epochs_run", "best_epoch")


def random_encoder(cfg: ExperimentConfig, spec: ModelSpec) -> ModelState:
    """The untrained initialisation that :func:`run_pretrain` starts from."""
    return init_params(spec, Rng(cfg.train.seed).substream(0))


def run_probe(cfg: ExperimentConfig, checkpoint=None, out_dir=None, data=None, state=None, spec=None) -> dict:
    """Linear probe on frozen encoder features of the trained model and of
    its random initialisation. Writes ``probe.csv`` and ``probe_trace.csv``."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    x, y, xt, yt = data if data is not None else load_dataset(cfg)
    if state is None:
        try:
            state, spec = load_checkpoint(checkpoint)
        except CheckpointError as exc:
            raise ConfigError(f"checkpoint: {exc}") from None
    expected = cfg.model.build(_input_dim(x))
    if spec != expected:
        raise ConfigError("checkpoint: model spec does not match the experiment's model section")
    x, xt = _flat(x), _flat(xt)
    reports = {}
    for name, st in (("trained", state), ("random", random_encoder(cfg, spec))):
        reports[name] = linear_probe(
            extract_features(st, spec, x), y, extract_features(st, spec, xt), yt, cfg.probe
        )
    rows = [
        {
            "encoder": name,
            "train_accuracy": r.train_accuracy,
            "val_accuracy": r.val_accuracy,
            "test_accuracy": r.test_accuracy,
            "epochs_run": r.epochs_run,
            "best_epoch": r.best_epoch,
        }
        for name, r in reports.items()
    ]
    write_csv(out / "probe.csv", PROBE_COLUMNS, rows)
    trace = [
        {"encoder": name, "epoch": e, "val_accuracy": float(a)}
        for name, r in reports.items()
        for e, a in enumerate(r.trace)
    ]
    write_csv(out / "probe_trace.csv", ("encoder", "epoch", "val_accuracy"), trace)
    return reports


SUMMARY_COLUMNS = (
    "final_loss",
    "pos_sim",
    "neg_sim",
    "gap",
    "probe_test_accuracy",
    "random_test_accuracy",
    "margin",
)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Pre-train then probe; returns the summary numbers."""
    out = Path(out_dir or cfg.output_dir)
    data = load_dataset(cfg)
    res = run_pretrain(cfg, out, data)
    reports = run_probe(cfg, out_dir=out, data=data, state=res["state"], spec=res["spec"])
    last = res["rows"][-1] if res["rows"] else None
    trained, rand = reports["trained"].test_accuracy, reports["random"].test_accuracy
    return {
        "final_loss": last.loss if last else float("nan"),
        "pos_sim": last.pos_sim if last else float("nan"),
        "neg_sim": last.neg_sim if last else float("nan"),
        "gap": (last.pos_sim - last.neg_sim) if last else float("nan"),
        "probe_test_accuracy": trained,
        "random_test_accuracy": rand,
        "margin": trained - rand,
    }


# ---------------------------------------------------------------------------
# sweeps

SWEEP_PARAMETERS = {
    "lambda": ("train", "lam"),
    "batch_size": ("train", "batch_size"),
    "tau": ("train", "tau"),
    "base_lr": ("train", "base_lr"),
    "projector_hidden_layers": ("model", "projector_hidden_layers"),
}


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    base: ExperimentConfig
    seed_mode: str = "shared"

    def child_seed(self, index: int) -> int:
        """``shared`` reuses the base seed so every value sees the same data
        order and initialisation; ``derived`` hashes (seed, index)."""
        if self.seed_mode == "shared":
            return self.base.seed
        return int(np.random.SeedSequence([self.base.seed, index]).generate_state(1)[0])

    def child(self, index: int) -> ExperimentConfig:
        section, key = SWEEP_PARAMETERS[self.parameter]
        value = self.values[index]
        cfg = self.base
        if section == "train":
            try:
                cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **{key: value}))
            except DomainError as exc:
                raise ConfigError(f"values[{index}]: {exc}") from None
        else:
            cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, **{key: value}))
        return cfg.with_seed(self.child_seed(index))


def parse_sweep(doc: Any, base_dir=".", seed: int | None = None, output_dir: str | None = None) -> SweepSpec:
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected an object")
    unknown = sorted(set(doc) - {"schema_version", "parameter", "values", "base", "seed_mode"})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {json.dumps(doc.get('schema_version'))}")
    param = doc.get("parameter")
    if param not in SWEEP_PARAMETERS:
        raise ConfigError(f"parameter: expected one of {sorted(SWEEP_PARAMETERS)}, got {json.dumps(param)}")
    values = doc.get("values")
    if not isinstance(values, list) or not values:
        raise ConfigError("values: expected a non-empty list")
    integer = param in ("batch_size", "projector_hidden_layers")
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
            raise ConfigError(f"values[{i}]: expected {'int' if integer else 'number'}, got {json.dumps(v)}")
    mode = doc.get("seed_mode", "shared")
    if mode not in ("shared", "derived"):
        raise ConfigError(f"seed_mode: expected 'shared' or 'derived', got {json.dumps(mode)}")
    base = doc.get("base", {"schema_version": SCHEMA_VERSION})
    if isinstance(base, str):
        base = _read_json(Path(base_dir) / base)
    try:
        base_cfg = parse_experiment(base, seed, output_dir)
    except ConfigError as exc:
        raise ConfigError(f"base.{exc}") from None
    values = tuple(v if integer else float(v) for v in values)
    spec = SweepSpec(param, values, base_cfg, mode)
    for i in range(len(values)):
        spec.child(i)
    return spec


def load_sweep(path, seed: int | None = None, output_dir: str | None = None) -> SweepSpec:
    try:
        return parse_sweep(_read_json(path), Path(path).parent, seed, output_dir)
    except ConfigError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(str(path)) else f"{path}: {msg}") from None


SWEEP_COLUMNS = ("index", "parameter", "value", "seed", "status", "error") + SUMMARY_COLUMNS


def _sweep_child(spec: SweepSpec, index: int, out: Path) -> dict:
    cfg = spec.child(index)
    row = {"index": index, "parameter": spec.parameter, "value": spec.values[index], "seed": cfg.seed}
    try:
        res = run_experiment(cfg, out / f"run{index:03d}")
        row.update(status="ok", error="", **res)
    except Exception as exc:  # a failed child is recorded, the sweep carries on
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}", **{c: float("nan") for c in SUMMARY_COLUMNS})
    return row


def run_sweep(spec: SweepSpec, out_dir=None, workers: int = 1) -> list[dict]:
    """Run every value of the sweep and write ``sweep.csv``.

    Child seeds are fixed before anything runs, so ``workers > 1`` (one
    process per child) yields the same rows as sequential execution.
    """
    out = Path(out_dir or spec.base.output_dir)
    write_manifest(
        out,
        "sweep",
        spec.base.seed,
        {"parameter": spec.parameter, "values": list(spec.values), "seed_mode": spec.seed_mode, "base": spec.base.to_dict(with_output_dir=False)},
    )
    idx = range(len(spec.values))
    if workers > 1 and len(spec.values) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_child, [spec] * len(idx), idx, [out] * len(idx)))
    else:
        rows = [_sweep_child(spec, i, out) for i in idx]
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    return rows


# ---------------------------------------------------------------------------
# gradient audit

GRADCHECK_COLUMNS = ("loss", "mode", "n", "d", "trial", "seed", "max_rel_err", "worst_coordinate")


def _fd_loss_grad(fn, z, pairs, cfg, step):
    base = fn(z, pairs, cfg)
    numeric = np.empty_like(z)
    work = z.copy()
    for idx in np.ndindex(z.shape):
        orig = work[idx]
        work[idx] = orig + step
        up = fn(work, pairs, cfg).value
        work[idx] = orig - step
        down = fn(work, pairs, cfg).value
        work[idx] = orig
        numeric[idx] = (up - down) / (2 * step)
    diff = np.abs(base.grad_z - numeric)
    worst = np.unravel_index(int(np.argmax(diff)), diff.shape)
    return float(diff[worst] / max(np.max(np.abs(numeric)), 1e-300)), (int(worst[0]), int(worst[1]))


def run_gradcheck(
    losses=("mio", "infonce", "mio_l2"),
    modes=("dot", "cosine"),
    sizes=(2, 4, 8),
    dims=(4, 16),
    trials: int = 50,
    seed: int = 0,
    tau: float = 0.5,
    lam: float = 1.0,
    step: float = 1e-5,
) -> list[dict]:
    """Central-difference check of each loss's ``dL/dz``.

    Trial ``t`` uses batch size ``sizes[t % len(sizes)]`` and dimension
    ``dims[(t // len(sizes)) % len(dims)]`` with embeddings from substream
    ``t``; the same embeddings are shared by every loss and mode.
    """
    for n in sizes:
        if not 1 <= n <= 16:
            raise DomainError(f"batch size {n} outside the supported range [1, 16]")
        if n < 2 and "infonce" in losses:
            raise DomainError("infonce needs at least two pairs per batch")
    for d in dims:
        if not 1 <= d <= 64:
            raise DomainError(f"dimension {d} outside the supported range [1, 64]")
    root = Rng(seed)
    rows = []
    for t in range(trials):
        n, d = sizes[t % len(sizes)], dims[(t // len(sizes)) % len(dims)]
        z = root.substream(t).normal(0.0, 1.0, (2 * n, d))
        pairs = build_pairs(n)
        for name in losses:
            fn = get_loss(name)
            for mode in modes:
                cfg = LossConfig(tau=tau, lam=lam if name == "mio_l2" else 0.0, mode=mode)
                err, coord = _fd_loss_grad(fn, z, pairs, cfg, step)
                rows.append(
                    {
                        "loss": name,
                        "mode": mode,
                        "n": n,
                        "d": d,
                        "trial": t,
                        "seed": seed,
                        "max_rel_err": err,
                        "worst_coordinate": f"z[{coord[0]},{coord[1]}]",
                    }
                )
    return rows


def run_model_gradcheck(
    losses=("mio", "infonce", "mio_l2"),
    modes=("dot", "cosine"),
    trials: int = 2,
    seed: int = 0,
    batch_norm: bool = True,
    n: int = 4,
    step: float = 1e-5,
) -> list[dict]:
    """End-to-end parameter-gradient audit through a small encoder and
    projector (batch standardization on by default)."""
    spec = default_model_spec(input_dim=6, hidden=8, out_dim=4, projector_hidden_layers=1, batch_norm=batch_norm)
    pairs = build_pairs(n)
    root = Rng(seed)
    rows = []
    for t in range(trials):
        r = root.substream(1000 + t)
        state = init_params(spec, r.substream(0))
        x = r.substream(1).normal(0.0, 1.0, (2 * n, 6))
        for name in losses:
            fn = get_loss(name)
            for mode in modes:
                cfg = LossConfig(tau=0.5, lam=1.0 if name == "mio_l2" else 0.0, mode=mode)

                def loss(z, fn=fn, cfg=cfg):
                    rep = fn(z, pairs, cfg)
                    return rep.value, rep.grad_z

                res = finite_diff_audit(state, spec, x, loss, step=step)
                rows.append(
                    {
                        "loss": name,
                        "mode": mode,
                        "n": n,
                        "d": 4,
                        "trial": t,
                        "seed": seed,
                        "max_rel_err": res.max_rel_err,
                        "worst_coordinate": res.worst_parameter,
                    }
                )
    return rows


# ---------------------------------------------------------------------------
# MI bound

MIBOUND_COLUMNS = ("kind", "trial", "k", "loss", "i_pos", "i_neg_tilde", "slack")


def run_mibound(ks=(2, 4, 8), trials: int = 100, seed: int = 0, alpha: float = 1.0) -> list[dict]:
    """One ``independent`` row per ``k`` (uniform product joint) followed by
    ``trials`` Dirichlet joints per ``k``, joint ``(k, t)`` from substream
    ``(k, t)``."""
    for k in ks:
        if k < 2:
            raise DomainError(f"alphabet size k={k} is degenerate; need k >= 2")
    if trials < 0:
        raise DomainError("trials must be >= 0")
    root = Rng(seed)
    rows = []
    for k in ks:
        joints = [("independent", -1, DiscreteJoint(np.full((k, k), 1.0 / (k * k))))]
        joints += [("dirichlet", t, random_joint(k, root.substream(k, t), alpha)) for t in range(trials)]
        for kind, t, j in joints:
            rep = verify_bound(j)
            rows.append(
                {
                    "kind": kind,
                    "trial": t,
                    "k": k,
                    "loss": rep.loss,
                    "i_pos": rep.i_pos,
                    "i_neg_tilde": rep.i_neg_tilde,
                    "slack": rep.slack,
                }
            )
    return rows


# ---------------------------------------------------------------------------
# geometry

GEOMETRY_COLUMNS = ("eta", "trials", "mean_abs_phi", "max_abs_phi", "frac_cos_positive")


def run_geometry(cfg: GeometryConfig, etas=(4, 8, 16, 32), trials: int = 100_000, seed: int = 0) -> list[dict]:
    """Deviation statistics per ``eta``; ``eta`` uses substream ``eta``."""
    root = Rng(seed)
    rows = []
    for eta in etas:
        stats = monte_carlo_phi(dataclasses.replace(cfg, eta=int(eta)), trials, root.substream(int(eta)))
        rows.append(
            {
                "eta": int(eta),
                "trials": stats.trials,
                "mean_abs_phi": stats.mean_abs_phi,
                "max_abs_phi": stats.max_abs_phi,
                "frac_cos_positive": stats.frac_cos_positive,
            }
        )
    return rows


def geometry_regime_failures(cfg: GeometryConfig, rows: list[dict]) -> list[str]:
    """Checks that apply when the centroid is at least ten spreads from the
    origin with uniform weights: every trial keeps a positive cosine, no
    deviation reaches a right angle, and the mean deviation falls as eta
    grows (non-increasing when sigma is zero)."""
    if math.hypot(*cfg.centroid) < 10 * cfg.sigma or cfg.weight_mode != "uniform_p" or cfg.p <= 0:
        return []
    fails = []
    for r in rows:
        if r["frac_cos_positive"] != 1.0:
            fails.append(f"eta={r['eta']}: frac_cos_positive={r['frac_cos_positive']!r} < 1")
        if not r["max_abs_phi"] < math.pi / 2:
            fails.append(f"eta={r['eta']}: max_abs_phi={r['max_abs_phi']!r} >= pi/2")
    ordered = sorted(rows, key=lambda r: r["eta"])
    for a, b in zip(ordered, ordered[1:]):
        worse = b["mean_abs_phi"] > a["mean_abs_phi"] if cfg.sigma == 0 else b["mean_abs_phi"] >= a["mean_abs_phi"]
        if worse:
            fails.append(
                f"mean_abs_phi not decreasing: eta={a['eta']} {a['mean_abs_phi']!r} -> eta={b['eta']} {b['mean_abs_phi']!r}"
            )
    return fails


def threads_from_env(default: int = 1) -> int:
    """Worker cap from ``MIO_LAB_THREADS`` (positive integer)."""
    raw = os.environ.get("MIO_LAB_THREADS")
    if raw is None or raw == "":
        return default
    try:
        v = int(raw)
    except ValueError:
        raise ConfigError(f"MIO_LAB_THREADS: expected a positive integer, got {raw!r}") from None
    if v < 1:
        raise ConfigError(f"MIO_LAB_THREADS: expected a positive integer, got {raw!r}")
    return v

