"""Command-line driver.

Exit codes: 0 success, 1 assertion or tolerance failure, 2 usage or
configuration error, 3 numerical divergence during training.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .experiment import (
    GEOMETRY_COLUMNS,
    GRADCHECK_COLUMNS,
    MIBOUND_COLUMNS,
    ConfigError,
    geometry_regime_failures,
    load_experiment,
    load_sweep,
    run_geometry,
    run_gradcheck,
    run_mibound,
    run_model_gradcheck,
    run_pretrain,
    run_probe,
    run_sweep,
    threads_from_env,
    write_csv,
    write_manifest,
)
from .fn_geometry import GeometryConfig
from .numerics import DimensionError, DomainError
from .plotting import PlotError, plot_csv
from .trainer import DivergenceError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("miolab")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}") from None
    return a, b


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands


def cmd_pretrain(args) -> int:
    cfg = load_experiment(args.config, args.seed, args.out)
    res = run_pretrain(cfg)
    rows = res["rows"]
    if rows:
        r = rows[-1]
        print(f"epochs={len(rows)} loss={r.loss:.6f} pos_sim={r.pos_sim:.4f} neg_sim={r.neg_sim:.4f}")
    print(f"checkpoint: {res['checkpoint']}")
    return EXIT_OK


def cmd_probe(args) -> int:
    cfg = load_experiment(args.config, args.seed, args.out)
    ckpt = args.checkpoint or str(Path(cfg.output_dir) / "checkpoint.json")
    if not Path(ckpt).is_file():
        raise ConfigError(f"checkpoint: {ckpt}: no such file")
    reports = run_probe(cfg, ckpt)
    for name, r in reports.items():
        print(f"{name:8s} test={r.test_accuracy:.4f} val={r.val_accuracy:.4f} epochs={r.epochs_run}")
    print(f"margin={reports['trained'].test_accuracy - reports['random'].test_accuracy:+.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    losses = ["mio", "infonce", "mio_l2"] if args.loss == "all" else [args.loss]
    modes = ["dot", "cosine"] if args.mode == "both" else [args.mode]
    rows = run_gradcheck(losses, modes, args.sizes, args.dims, args.trials, args.seed, args.tau, args.lam)
    checks = [(r, args.tolerance) for r in rows]
    if args.model_trials:
        bn = run_model_gradcheck(losses, modes, args.model_trials, args.seed)
        checks += [(dict(r, loss=r["loss"] + "+model"), args.bn_tolerance) for r in bn]
    worst: dict[tuple, tuple[float, dict]] = {}
    for r, tol in checks:
        key = (r["loss"], r["mode"])
        if key not in worst or r["max_rel_err"] > worst[key][0]:
            worst[key] = (r["max_rel_err"], r)
    print(f"{'loss':14s} {'mode':7s} {'max_rel_err':>12s}")
    for (loss, mode), (err, _) in worst.items():
        print(f"{loss:14s} {mode:7s} {err:12.3e}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "gradcheck.csv", GRADCHECK_COLUMNS, [r for r, _ in checks])
    bad = [(r, tol) for r, tol in checks if not r["max_rel_err"] <= tol]
    for r, tol in bad:
        _err(
            f"tolerance breach: loss={r['loss']} mode={r['mode']} seed={r['seed']} trial={r['trial']} "
            f"coordinate={r['worst_coordinate']} rel_err={r['max_rel_err']:.3e} > {tol:g}"
        )
    return EXIT_FAIL if bad else EXIT_OK


def cmd_mibound(args) -> int:
    out = Path(args.out)
    write_manifest(out, "mibound", args.seed, {"k": args.k, "trials": args.trials, "alpha": args.alpha})
    rows = run_mibound(args.k, args.trials, args.seed, args.alpha)
    write_csv(out / "mibound.csv", MIBOUND_COLUMNS, rows)
    worst = min(r["slack"] for r in rows)
    print(f"joints={len(rows)} min_slack={worst:.3e}")
    for r in rows:
        if r["kind"] == "independent":
            print(f"independent k={r['k']} slack={r['slack']!r} (2 ln 2 = {2 * math.log(2)!r})")
    bad = [r for r in rows if r["slack"] < -args.tolerance]
    for r in bad:
        _err(f"bound violated: k={r['k']} trial={r['trial']} slack={r['slack']!r}")
    return EXIT_FAIL if bad else EXIT_OK


def cmd_geometry(args) -> int:
    base = {}
    if args.config:
        try:
            with open(args.config) as fh:
                base = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"{args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        if not isinstance(base, dict):
            raise ConfigError(f"{args.config}: expected an object")
        allowed = {"centroid", "sigma", "t_p", "weight_mode", "p", "eta"}
        unknown = sorted(set(base) - allowed)
        if unknown:
            raise ConfigError(f"{args.config}: {unknown[0]}: unknown key")
        if "centroid" in base:
            base["centroid"] = tuple(base["centroid"])
    for key in ("centroid", "sigma", "t_p", "weight_mode", "p"):
        v = getattr(args, key)
        if v is not None:
            base[key] = v
    base.setdefault("eta", min(args.eta))
    try:
        cfg = GeometryConfig(**base)
        for eta in args.eta:
            GeometryConfig(**dict(base, eta=eta))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    manifest_cfg = {k: list(v) if isinstance(v, tuple) else v for k, v in base.items()}
    write_manifest(out, "geometry", args.seed, dict(manifest_cfg, etas=args.eta, trials=args.trials))
    rows = run_geometry(cfg, args.eta, args.trials, args.seed)
    write_csv(out / "geometry.csv", GEOMETRY_COLUMNS, rows)
    for r in rows:
        print(
            f"eta={r['eta']:3d} mean|phi|={r['mean_abs_phi']:.5f} max|phi|={r['max_abs_phi']:.5f} "
            f"frac_cos>0={r['frac_cos_positive']:.6f}"
        )
    fails = geometry_regime_failures(cfg, rows)
    for f in fails:
        _err(f)
    return EXIT_FAIL if fails else EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_sweep(args.config, args.seed, args.out)
    workers = threads_from_env() if args.parallel else 1
    rows = run_sweep(spec, workers=workers)
    for r in rows:
        if r["status"] == "ok":
            print(
                f"{r['parameter']}={r['value']!r} loss={r['final_loss']:.5f} gap={r['gap']:.4f} "
                f"probe={r['probe_test_accuracy']:.4f} margin={r['margin']:+.4f}"
            )
        else:
            print(f"{r['parameter']}={r['value']!r} FAILED {r['error']}")
    return EXIT_FAIL if any(r["status"] != "ok" for r in rows) else EXIT_OK


def cmd_plot(args) -> int:
    plot_csv(args.csv, args.x, args.y, args.out, args.title or "")
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="miolab", description="Contrastive-loss experiments on desk-scale data.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("pretrain", help="self-supervised pre-training from an experiment document")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="override output_dir")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("probe", help="linear probe of trained and random encoders")
    s.add_argument("--config", required=True)
    s.add_argument("--checkpoint", help="default: <output_dir>/checkpoint.json")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="override output_dir")
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("gradcheck", help="finite-difference audit of loss gradients")
    s.add_argument("--loss", choices=("all", "mio", "infonce", "mio_l2"), default="all")
    s.add_argument("--mode", choices=("both", "dot", "cosine"), default="both")
    s.add_argument("--sizes", type=_int_list, default=[2, 4, 8], help="comma-separated N values (<= 16)")
    s.add_argument("--dims", type=_int_list, default=[4, 16], help="comma-separated D values (<= 64)")
    s.add_argument("--trials", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tau", type=float, default=0.5)
    s.add_argument("--lam", type=float, default=1.0)
    s.add_argument("--tolerance", type=float, default=1e-6)
    s.add_argument("--model-trials", type=int, default=1, help="end-to-end audits with batch standardization")
    s.add_argument("--bn-tolerance", type=float, default=1e-4)
    s.add_argument("--out", help="directory for gradcheck.csv")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("mibound", help="exact check of the mutual-information bound")
    s.add_argument("--k", type=_int_list, default=[2, 4, 8])
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--tolerance", type=float, default=1e-12)
    s.add_argument("--out", default="runs/mibound")
    s.set_defaults(func=cmd_mibound)

    s = sub.add_parser("geometry", help="Monte Carlo false-negative deviation angles")
    s.add_argument("--config", help="JSON object with GeometryConfig fields")
    s.add_argument("--eta", type=_int_list, default=[4, 8, 16, 32])
    s.add_argument("--trials", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--centroid", type=_pair)
    s.add_argument("--sigma", type=float)
    s.add_argument("--t-p", dest="t_p", type=int)
    s.add_argument("--weight-mode", dest="weight_mode", choices=("uniform_p", "random_p"))
    s.add_argument("--p", type=float)
    s.add_argument("--out", default="runs/geometry")
    s.set_defaults(func=cmd_geometry)

    s = sub.add_parser("sweep", help="ablation sweep over one hyper-parameter")
    s.add_argument("--config", required=True, help="sweep document")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="override the base output_dir")
    s.add_argument("--parallel", action="store_true", help="one process per value, capped by MIO_LAB_THREADS")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("plot", help="SVG line chart from CSV columns")
    s.add_argument("csv")
    s.add_argument("--x", required=True)
    s.add_argument("--y", type=_str_list, required=True, help="comma-separated column names")
    s.add_argument("--out", required=True)
    s.add_argument("--title")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        _err(f"divergence: {exc}")
        return EXIT_DIVERGED
    except (ConfigError, PlotError, DomainError, DimensionError) as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
