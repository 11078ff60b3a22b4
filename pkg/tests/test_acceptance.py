"""End-to-end acceptance criteria A1-A8.

Each test records one PASS/FAIL line (printed in the terminal summary) and
then asserts it. Training runs are shared through a cache so that every
(kind, lambda, seed, mode, grl) configuration is trained once per session.
"""

import functools
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gradsuite import LOSS_CASES, OP_CASES, TOL, grad_reverse_error, random_graph, worst_error
from rnalab import autodiff as ad
from rnalab import losses as L
from rnalab.autodiff import Tensor
from rnalab.cli import EXIT_INPUT, EXIT_NUMERIC, main
from rnalab.data import BenchmarkConfig, Mode, make_benchmark
from rnalab.diagnostics import modality_drop_experiment, weaker_stream
from rnalab.experiments import default_grl, run_once
from rnalab.io import load_split, save_split
from rnalab.losses import LossConfig, LossKind, Orientation
from rnalab.model import load_checkpoint, save_checkpoint
from rnalab.trainer import TrainConfig, train

SEEDS = (0, 1, 2, 3, 4)
LAMBDAS = (0.5, 1.0, 2.0)
BENCH = BenchmarkConfig()  # "unbalance-8": s_a/s_v = 8, three domains, six classes


def record(name, ok, detail):
    ACCEPTANCE_LINES[name] = f"{name} {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[name])
    return ok


@functools.lru_cache(maxsize=None)
def summary(kind, lam, seed, mode=Mode.DG, grl=False):
    config = TrainConfig(seed=seed, mode=mode, loss=LossConfig(kind=LossKind(kind), lam=lam), grl=default_grl(grl))
    return run_once(BENCH, config).summary


def mean_of(key, kind, lam=1.0, **kw):
    return float(np.mean([summary(kind, lam, s, **kw)[key] for s in SEEDS]))


# ---------------------------------------------------------------- A1


def test_a1_gradient_suite():
    start = time.perf_counter()
    errors = {f"op:{n}": worst_error(f, np.random.default_rng(7)) for n, f in OP_CASES.items()}
    errors.update({f"loss:{n}": worst_error(f, np.random.default_rng(11)) for n, f in LOSS_CASES.items()})
    errors["grad_reverse"] = max(grad_reverse_error(np.random.default_rng(3)) for _ in range(20))
    errors["random_graphs"] = worst_error(random_graph, np.random.default_rng(2024))
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = errors[worst] < TOL and elapsed < 30
    assert record("A1", ok, f"{len(errors)} cases, worst rel err {errors[worst]:.2e} ({worst}), {elapsed:.1f}s")


# ---------------------------------------------------------------- A2


def _norm_rows(norm, seed):
    x = np.random.default_rng(seed).normal(size=(4, 3))
    return Tensor(norm * x / np.linalg.norm(x, axis=1, keepdims=True))


def test_a2_loss_oracles():
    v, a = _norm_rows(10.0, 0), _norm_rows(32.0, 1)
    values = {
        "rna": (L.rna_loss(v, a, Orientation.AS_WRITTEN).item(), 0.47265625),
        "rna_swapped": (L.rna_loss(a, v, Orientation.AS_WRITTEN).item(), 4.84),
        "hna": (L.hna_loss(v, a, k=10.0).item(), 484.0),
        "rna_sub": (L.rna_sub_loss(v, a).item(), 484.0),
    }
    exact = all(abs(got - want) < 1e-9 for got, want in values.values())
    g = np.random.default_rng(5)
    fv, fa = Tensor(g.normal(size=(6, 4)) + 0.3), Tensor(4 * g.normal(size=(6, 4)))
    base = L.rna_loss(fv, fa).item()
    invariant = all(
        abs(L.rna_loss(ad.scalar_multiply(fv, c), ad.scalar_multiply(fa, c)).item() - base) < 1e-9
        for c in (0.1, 1.0, 7.0))
    hna_base, sub_base = L.hna_loss(fv, fa).item(), L.rna_sub_loss(fv, fa).item()
    not_invariant = all(
        abs(L.hna_loss(ad.scalar_multiply(fv, c), ad.scalar_multiply(fa, c)).item() - hna_base) > 1e-6
        and abs(L.rna_sub_loss(ad.scalar_multiply(fv, c), ad.scalar_multiply(fa, c)).item() - sub_base) > 1e-6
        for c in (0.1, 7.0))
    ok = exact and invariant and not_invariant
    detail = ", ".join(f"{k}={got:.10g}" for k, (got, _) in values.items())
    assert record("A2", ok, f"{detail}; rna scale-invariant={invariant}, hna/rna_sub scale-dependent={not_invariant}")


# ---------------------------------------------------------------- A3


def test_a3_norm_rebalance():
    start = time.perf_counter()
    base = mean_of("norm_ratio", "NONE", 0.0)
    rna = mean_of("norm_ratio", "RNA", 1.0)
    elapsed = time.perf_counter() - start
    ok = base > 2 and rna < 1.1 and elapsed < 300
    assert record("A3", ok, f"E_max/E_min deepall {base:.3f} (>2), rna {rna:.4f} (<1.1), {elapsed:.0f}s (<300s)")


# ---------------------------------------------------------------- A4


@functools.lru_cache(maxsize=None)
def drop_table(seed):
    return modality_drop_experiment(TrainConfig(seed=seed), make_benchmark(BENCH, seed, Mode.DG))


def test_a4_modality_drop():
    sep, joint, joint_rna = [], [], []
    for seed in SEEDS:
        table = {r["run"]: r for r in drop_table(seed)}
        weak = weaker_stream(list(table.values()))
        col = f"acc_{weak}"
        sep.append(table[f"separate-{weak}"][col])
        joint.append(table["joint"][col])
        joint_rna.append(table["joint+RNA"][col])
    drop = np.mean(sep) - np.mean(joint)
    ok = drop > 0.02 and np.mean(joint_rna) > np.mean(joint)
    assert record("A4", ok, f"weaker stream: separate {np.mean(sep):.3f}, joint {np.mean(joint):.3f} "
                            f"(drop {100 * drop:.1f} pts > 2), joint+RNA {np.mean(joint_rna):.3f}")


def test_fusion_can_beat_each_stream():
    """Informative: late fusion outscores both solo streams under joint training."""
    fused = np.mean([{r["run"]: r for r in drop_table(s)}["joint"]["acc_fused"] for s in SEEDS])
    solo = [np.mean([{r["run"]: r for r in drop_table(s)}["joint"][c] for s in SEEDS]) for c in ("acc_v", "acc_a")]
    assert fused > max(solo)


# ---------------------------------------------------------------- A5


def test_a5_dg_gain_and_lambda_robustness():
    deepall = mean_of("target_accuracy", "NONE", 0.0)
    rna = mean_of("target_accuracy", "RNA", 1.0)
    minima = {kind: min(mean_of("target_accuracy", kind, lam) for lam in LAMBDAS) for kind in ("RNA", "RNA_SUB", "HNA")}
    ok = rna >= deepall + 0.02 and minima["RNA"] >= minima["RNA_SUB"] and minima["RNA"] >= minima["HNA"]
    mins = ", ".join(f"{k} {v:.3f}" for k, v in minima.items())
    assert record("A5", ok, f"target acc deepall {deepall:.3f}, rna {rna:.3f} (+{100 * (rna - deepall):.1f} pts >= 2); "
                            f"min over lambda: {mins}")


# ---------------------------------------------------------------- A6


@pytest.mark.xfail(strict=True, reason="visual-stream concentration does not rise under RNA on the synthetic "
                                       "benchmark; see the decisions ledger")
def test_a6_relevant_feature_concentration():
    base = {m: mean_of(f"topk_fraction_{m}", "NONE", 0.0) for m in ("v", "a")}
    rna = {m: mean_of(f"topk_fraction_{m}", "RNA", 1.0) for m in ("v", "a")}
    ok = all(rna[m] >= base[m] for m in ("v", "a"))
    assert record("A6", ok, f"top-K fraction visual deepall {base['v']:.3f} -> rna {rna['v']:.3f}, "
                            f"audio deepall {base['a']:.3f} -> rna {rna['a']:.3f}")


# ---------------------------------------------------------------- A7


def test_a7_uda_extension():
    uda = dict(mode=Mode.UDA)
    source_only = mean_of("target_accuracy", "NONE", 0.0, **uda)
    rna = mean_of("target_accuracy", "RNA", 1.0, **uda)
    grl = mean_of("target_accuracy", "NONE", 0.0, grl=True, **uda)
    rna_grl = mean_of("target_accuracy", "RNA", 1.0, grl=True, **uda)
    ok = rna >= source_only + 0.01 and rna_grl >= grl
    assert record("A7", ok, f"source-only {source_only:.3f}, rna {rna:.3f} (+{100 * (rna - source_only):.1f} pts >= 1); "
                            f"grl {grl:.3f}, rna+grl {rna_grl:.3f}")


# ---------------------------------------------------------------- A8


TINY = "[data]\ntrain_per_domain = 60\ntest_per_domain = 40\n[train]\niterations = 20\nbatch_size = 16\n" \
       "lr_v_milestones = 10\nlr_a_milestones = 5,10,15\nlog_interval = 5\n"


def test_a8_determinism_and_round_trips(tmp_path):
    checks = {}
    bench = BenchmarkConfig(train_per_domain=200, test_per_domain=100)
    config = TrainConfig(iterations=150, batch_size=32, seed=3, log_interval=10,
                         lr_v=replace(TrainConfig().lr_v, milestones=(100,)),
                         lr_a=replace(TrainConfig().lr_a, milestones=(50, 100)))
    split = make_benchmark(bench, 3, Mode.DG)
    (m1, log1), (m2, log2) = train(config, split), train(config, split)
    checks["trainlog bitwise"] = log1.to_jsonl() == log2.to_jsonl() and all(
        np.array_equal(p.values, q.values) for p, q in zip(m1.parameters(), m2.parameters()))

    for mode in (Mode.DG, Mode.UDA):
        for fmt in ("binary", "csv"):
            s = make_benchmark(bench, 1, mode)
            save_split(s, bench, tmp_path / f"{mode.value}-{fmt}", fmt)
            checks[f"dataset {mode.value}/{fmt}"] = load_split(tmp_path / f"{mode.value}-{fmt}").equals(s)
    save_checkpoint(m1, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    checks["checkpoint"] = back.config == m1.config and all(
        np.array_equal(p.values, q.values) for p, q in zip(m1.parameters(), back.parameters()))

    cfg = tmp_path / "tiny.ini"
    cfg.write_text(TINY)
    data = str(tmp_path / "data")
    main(["--config", str(cfg), "gen", "--out", data])
    main(["--config", str(cfg), "train", "--data", data, "--out", str(tmp_path / "run")])
    (tmp_path / "bad.ckpt").write_bytes(b"RNAM garbage")
    crafted = {
        "unknown key": (["--set", "loss.bogus=1", "gen", "--out", str(tmp_path / "x")], EXIT_INPUT),
        "bad value": (["--set", "train.iterations=abc", "gen", "--out", str(tmp_path / "x")], EXIT_INPUT),
        "missing data": (["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "x")], EXIT_INPUT),
        "corrupt checkpoint": (["eval", "--checkpoint", str(tmp_path / "bad.ckpt"), "--data", data], EXIT_INPUT),
        "mode mismatch": (["--config", str(cfg), "--set", "data.mode=UDA", "train", "--data", data,
                           "--out", str(tmp_path / "x")], EXIT_INPUT),
        "divergence": (["--config", str(cfg), "--set", "loss.kind=RNA_SUB", "train", "--data", data,
                        "--out", str(tmp_path / "nan")], EXIT_NUMERIC),
    }
    with np.errstate(all="ignore"):
        for name, (argv, code) in crafted.items():
            checks[f"exit {name}"] = main(argv) == code
    failed = [k for k, v in checks.items() if not v]
    assert record("A8", not failed, f"{len(checks)} checks" + (f", failed: {failed}" if failed else " all hold"))
