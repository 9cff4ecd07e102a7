"""One PASS/FAIL line per acceptance criterion, at its stated tolerance."""

import dataclasses
import math
import time

import numpy as np
import pytest

from miolab import data_augment as da
from miolab.cli import EXIT_OK, main
from miolab.data_augment import AugmentPolicy, ImageSample, augment_image, load_cifar10_binary, write_cifar10_binary
from miolab.evaluation import extract_features, is_collapsed
from miolab.experiment import (
    ExperimentConfig,
    geometry_regime_failures,
    load_dataset,
    run_experiment,
    run_gradcheck,
    run_mibound,
    run_model_gradcheck,
    run_pretrain,
)
from miolab.fn_geometry import GeometryConfig, symmetric_fn_probability
from miolab.experiment import run_geometry
from miolab.losses import LossConfig, mio_anchor_grad, mio_grad_z
from miolab.model import load_checkpoint
from miolab.numerics import Rng
from miolab.pairing import build_pairs
from miolab.trainer import TrainConfig, lr_at

from conftest import rel_err
from test_cli import TINY, snapshot, write_json


# ------------------------------------------------------------ 1 gradients

def test_criterion_1_gradient_fidelity(verdict):
    t0 = time.perf_counter()
    rows = run_gradcheck(trials=50, seed=0)
    plain = max(r["max_rel_err"] for r in rows)
    bn = max(r["max_rel_err"] for r in run_model_gradcheck(trials=1, seed=0, batch_norm=True))
    combos = {(r["loss"], r["mode"], r["n"], r["d"]) for r in rows}
    secs = time.perf_counter() - t0
    ok = plain <= 1e-6 and bn <= 1e-4 and len(combos) == 3 * 2 * 3 * 2 and secs < 30
    verdict(1, ok, f"max rel err {plain:.2e} (<= 1e-6), with batch standardization {bn:.2e} (<= 1e-4), "
                   f"{len(rows)} audits over {len(combos)} loss/mode/N/D cells, {secs:.1f} s (< 30 s)")


# ----------------------------------------------------- 2 anchor-form match

def test_criterion_2_anchor_form(verdict):
    cfg = LossConfig(tau=1.0, mode="dot")
    worst = 0.0
    for b in range(20):
        n = 2 + b % 7
        z = Rng(1000 + b).normal(0, 0.5, (2 * n, 3 + b % 5))
        pairs = build_pairs(n)
        worst = max(worst, rel_err(mio_grad_z(z, pairs, cfg).grad_z, 2 * mio_anchor_grad(z, pairs, cfg)))
    verdict(2, worst <= 1e-10, f"full gradient vs 2x per-anchor form, worst rel err {worst:.2e} over 20 batches (<= 1e-10)")


# ------------------------------------------------------- 3 combinatorics

def test_criterion_3_pair_counts(verdict):
    bad = [n for n in range(1, 513) if (lambda p: (p.t_p, p.t_n))(build_pairs(n)) != (2 * n, 4 * n * n - 4 * n)]
    grid_bad = []
    for n in range(1, 9):
        p = build_pairs(n)
        v = 2 * n
        pos = {(a, b) for a in range(v) for b in range(v) if a != b and a // 2 == b // 2}
        neg = {(a, b) for a in range(v) for b in range(v) if a // 2 != b // 2}
        if {tuple(r) for r in p.positives} != pos or {tuple(r) for r in p.negatives} != neg:
            grid_bad.append(n)
    n128 = build_pairs(128).t_n
    ok = not bad and not grid_bad and n128 == 65024
    verdict(3, ok, f"T_P=2N and T_N=4N^2-4N for N=1..512 ({len(bad)} mismatches), N=128 gives {n128} negatives, "
                   f"grid oracle agrees for N<=8 ({len(grid_bad)} mismatches)")


# --------------------------------------------------------------- 4 MI bound

def test_criterion_4_mi_bound(verdict):
    t0 = time.perf_counter()
    rows = run_mibound((2, 4, 8), trials=100, seed=0)
    secs = time.perf_counter() - t0
    dirichlet = [r for r in rows if r["kind"] != "independent"]
    ind = [r for r in rows if r["kind"] == "independent"]
    worst = min(r["slack"] for r in dirichlet)
    ind_err = max(abs(r["slack"] - 2 * math.log(2)) for r in ind)
    ok = len(dirichlet) == 300 and worst >= -1e-12 and ind_err <= 1e-12 and secs < 5
    verdict(4, ok, f"min slack {worst:.4f} over 300 Dirichlet joints (>= -1e-12), independent joint "
                   f"|slack - 2 ln 2| = {ind_err:.1e} (<= 1e-12), {secs:.2f} s (< 5 s)")


# ---------------------------------------------------------- 5 geometry

def test_criterion_5_false_negative_geometry(verdict):
    t0 = time.perf_counter()
    prob = symmetric_fn_probability(4, 2, 4)
    cfg = GeometryConfig(centroid=(10.0, 0.0), sigma=1.0, weight_mode="uniform_p")
    rows = run_geometry(cfg, (4, 8, 16, 32), trials=100_000, seed=0)
    fails = geometry_regime_failures(cfg, rows)
    secs = time.perf_counter() - t0
    means = [r["mean_abs_phi"] for r in rows]
    frac = min(r["frac_cos_positive"] for r in rows)
    mx = max(r["max_abs_phi"] for r in rows)
    ok = prob == 0.25 and frac == 1.0 and mx < math.pi / 2 and all(np.diff(means) < 0) and not fails and secs < 60
    verdict(5, ok, f"P(fn)={prob!r} (exactly 0.25), cos(phi)>0 in {frac:.0%} of trials, max|phi|={mx:.4f} (< pi/2), "
                   f"mean|phi| over eta 4,8,16,32 = {', '.join(f'{m:.4f}' for m in means)}, {secs:.1f} s (< 60 s)")


# ----------------------------------------------- 6 and 7 training benchmark

BENCH = ExperimentConfig(seed=0)


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    """Benchmark runs keyed by lambda, computed on demand and shared."""
    cache = {}

    def run(lam):
        if lam not in cache:
            cfg = dataclasses.replace(BENCH, train=dataclasses.replace(BENCH.train, lam=lam))
            out = tmp_path_factory.mktemp(f"bench_lam{lam:g}")
            t0 = time.perf_counter()
            res = run_experiment(cfg, out)
            res["seconds"] = time.perf_counter() - t0
            res["out"] = out
            res["cfg"] = cfg
            cache[lam] = res
        return cache[lam]

    return run


def test_criterion_6a_similarity_gap(bench, verdict):
    r = bench(1.0)
    ok = r["gap"] >= 0.3 and r["seconds"] < 300
    verdict("6a", ok, f"pos {r['pos_sim']:.4f} - neg {r['neg_sim']:.4f} = gap {r['gap']:.4f} (>= 0.3), "
                      f"run {r['seconds']:.0f} s (< 300 s)")


def test_criterion_6b_probe_accuracy(bench, verdict):
    r = bench(1.0)
    verdict("6b", r["probe_test_accuracy"] >= 0.90,
            f"trained-encoder probe test accuracy {r['probe_test_accuracy']:.4f} (>= 0.90)")


def test_criterion_6b_probe_margin(bench, verdict):
    r = bench(1.0)
    verdict("6b", r["margin"] >= 0.15,
            f"trained {r['probe_test_accuracy']:.4f} - random encoder {r['random_test_accuracy']:.4f} "
            f"= margin {100 * r['margin']:.2f} points (>= 15)")


def test_criterion_6_no_collapse(bench, verdict):
    r = bench(1.0)
    state, spec = load_checkpoint(r["out"] / "checkpoint.json")
    x, _, _, _ = load_dataset(r["cfg"])
    h = extract_features(state, spec, x)
    rank = int(np.linalg.matrix_rank(h))
    stats = {"gap": r["gap"], "mean_pos": r["pos_sim"]}
    verdict("6", rank > 1 and not is_collapsed(stats), f"trained feature rank {rank} (> 1), collapse flag {is_collapsed(stats)}")


def test_criterion_7_lambda_sweep(bench, verdict):
    runs = {lam: bench(lam) for lam in (0.0, 1.0, 100.0)}
    g1, g100 = runs[1.0]["gap"], runs[100.0]["gap"]
    m1, m100 = runs[1.0]["margin"], runs[100.0]["margin"]
    ok = g100 < g1 and m100 < m1
    detail = "; ".join(f"lambda={lam:g}: gap {r['gap']:.4f}, margin {100 * r['margin']:+.2f}" for lam, r in runs.items())
    verdict(7, ok, f"{detail} (lambda=100 strictly worse than lambda=1 on both)")


# ---------------------------------------------------------- 8 determinism

def test_criterion_8_cli_determinism(tmp_path, verdict):
    cfg = write_json(tmp_path / "tiny.json", TINY)
    sweep = write_json(tmp_path / "sweep.json", {"schema_version": 1, "parameter": "lambda", "values": [0, 1], "base": TINY})
    commands = {
        "pretrain": lambda o: [["pretrain", "--config", cfg, "--out", o]],
        "probe": lambda o: [["pretrain", "--config", cfg, "--out", o], ["probe", "--config", cfg, "--out", o]],
        "gradcheck": lambda o: [["gradcheck", "--trials", "6", "--out", o]],
        "mibound": lambda o: [["mibound", "--trials", "20", "--out", o]],
        "geometry": lambda o: [["geometry", "--trials", "5000", "--out", o]],
        "sweep": lambda o: [["sweep", "--config", sweep, "--out", o]],
        "plot": lambda o: [["pretrain", "--config", cfg, "--out", o],
                           ["plot", f"{o}/metrics.csv", "--x", "epoch", "--y", "loss,pos_sim", "--out", f"{o}/m.svg"]],
    }
    differing = []
    for name, argv in commands.items():
        snaps = []
        for rep in ("a", "b"):
            out = tmp_path / name / rep
            for args in argv(str(out)):
                assert main(args) == EXIT_OK, (name, args)
            snaps.append(snapshot(out))
        if snaps[0] != snaps[1] or not snaps[0]:
            differing.append(name)
    verdict(8, not differing, f"{len(commands)} subcommands rerun byte-identical modulo wall-clock columns"
                              + (f"; differing: {', '.join(differing)}" if differing else ""))


# --------------------------------------------- 9 schedule and augmentation

def test_criterion_9_schedule_and_augmentation(tmp_path, monkeypatch, verdict):
    cfg = TrainConfig(base_lr=1.5, warmup_epochs=10, schedule_horizon=1000, epochs=100)
    jump = abs(lr_at(cfg, 10 - 1e-9) - lr_at(cfg, 10))
    bounds = lr_at(cfg, 10) == 1.5 and lr_at(cfg, 1000) == 0.0 and abs(lr_at(cfg, 505) - 0.75) <= 1e-15

    def boom(*a, **k):
        raise AssertionError("blur called at side 32")

    monkeypatch.setattr(da, "_gaussian_blur", boom)
    blurred = 0
    for seed in range(200):
        trace = []
        img = ImageSample(Rng(seed).random((32, 32, 3)))
        augment_image(img, AugmentPolicy(), Rng(seed), trace)
        blurred += "blur" in trace

    samples = [ImageSample(np.round(Rng(s).random((32, 32, 3)) * 255) / 255, label=s % 10) for s in range(12)]
    first, second = tmp_path / "a.bin", tmp_path / "b.bin"
    write_cifar10_binary(first, samples)
    loaded = load_cifar10_binary(first)
    write_cifar10_binary(second, loaded)
    same = first.read_bytes() == second.read_bytes() and all(
        np.array_equal(a.pixels, b.pixels) and a.label == b.label for a, b in zip(samples, loaded)
    )
    ok = jump <= 1e-12 * 1.5 and bounds and blurred == 0 and same
    verdict(9, ok, f"lr junction jump {jump:.1e} (<= 1e-12 base), boundary values exact: {bounds}, "
                   f"blur fired {blurred}/200 times at side 32, CIFAR fixture round-trip bit-exact: {same}")
