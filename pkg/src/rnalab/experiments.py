"""One-call experiment runs and grid sweeps over seeds, loss kinds and lambda."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import BenchmarkConfig, BenchmarkSplit, Mode, make_benchmark
from .diagnostics import norm_report, topk_norm_fraction
from .errors import ConfigError
from .losses import LossConfig, LossKind
from .model import TwoStreamModel
from .trainer import GRLConfig, TrainConfig, TrainLog, evaluate, train


@dataclass
class RunResult:
    model: TwoStreamModel
    log: TrainLog
    summary: dict


def summarize(model: TwoStreamModel, log: TrainLog, split: BenchmarkSplit, config: TrainConfig) -> dict:
    """Final metrics of a trained model: target accuracy, norm balance, top-K shares."""
    target = evaluate(model, split.target.test, breakdown=True)
    source = evaluate(model, split.source_test())
    out = {
        "label": run_label(config),
        "mode": config.mode.value,
        "kind": config.loss.kind.value,
        "lambda": config.loss.lam,
        "seed": config.seed,
        "grl": bool(config.grl and config.grl.enabled),
        "target_accuracy": target["accuracy"],
        "target_accuracy_v": target["accuracy_v"],
        "target_accuracy_a": target["accuracy_a"],
        "source_accuracy": source["accuracy"],
        "diverged_at": log.diverged_at,
    }
    if log.diverged_at is None:
        train_report = norm_report(model, split.source_train())
        k = max(1, model.config.feature_dim // 4)
        frac_v, frac_a = topk_norm_fraction(model, split.target.test, k)
        out.update(
            E_v=train_report.mean_norm["visual"],
            E_a=train_report.mean_norm["audio"],
            norm_ratio=train_report.ratio,
            delta=train_report.delta,
            topk=k,
            topk_fraction_v=frac_v,
            topk_fraction_a=frac_a,
        )
    return out


def run_label(config: TrainConfig) -> str:
    label = config.loss.label
    if config.grl and config.grl.enabled:
        label = "grl" if config.loss.kind is LossKind.NONE else f"{label}+grl"
    if config.streams != ("v", "a"):
        label = f"{label}-{''.join(config.streams)}only"
    return label


def run_once(bench: BenchmarkConfig, config: TrainConfig, stop_on_nan: bool = True) -> RunResult:
    """Build the split for ``config.seed`` and train one model on it."""
    split = make_benchmark(bench, config.seed, config.mode)
    model, log = train(config, split, stop_on_nan=stop_on_nan)
    return RunResult(model, log, summarize(model, log, split, config))


def _run_summary(args) -> dict:
    bench, config = args
    return run_once(bench, config).summary


@dataclass(frozen=True)
class SweepGrid:
    kinds: tuple[str, ...] = ("RNA",)
    lambdas: tuple[float, ...] = (1.0,)
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if not (self.kinds and self.lambdas and self.seeds):
            raise ConfigError("sweep grid is empty: need at least one kind, lambda and seed")

    def configs(self, base: TrainConfig) -> list[TrainConfig]:
        out = []
        for kind, lam, seed in itertools.product(self.kinds, self.lambdas, self.seeds):
            out.append(replace(base, seed=int(seed), loss=replace(base.loss, kind=LossKind(kind), lam=float(lam))))
        return out


def run_sweep(bench: BenchmarkConfig, base: TrainConfig, grid: SweepGrid, jobs: int = 1) -> list[dict]:
    """Every (kind, lambda, seed) run's summary, in grid order."""
    work = [(bench, cfg) for cfg in grid.configs(base)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_summary, work))
    return [_run_summary(w) for w in work]


def aggregate(summaries: list[dict], metric: str = "target_accuracy") -> list[dict]:
    """Mean and sample std of ``metric`` per (mode, kind, lambda) cell, sorted by key."""
    cells: dict[tuple, list[float]] = {}
    for s in summaries:
        cells.setdefault((s["mode"], s["label"], s["kind"], float(s["lambda"])), []).append(float(s[metric]))
    rows = []
    for (mode, label, kind, lam), values in sorted(cells.items(), key=lambda kv: (kv[0][2], kv[0][3], kv[0][1], kv[0][0])):
        std = float(np.std(values, ddof=1)) if len(values) >= 2 else math.nan
        rows.append({
            "mode": mode, "label": label, "kind": kind, "lambda": lam,
            "n": len(values), "mean": float(np.mean(values)), "std": std,
        })
    return rows


def default_grl(enabled: bool = True) -> GRLConfig | None:
    return GRLConfig() if enabled else None


__all__ = [
    "Mode",
    "LossConfig",
    "RunResult",
    "SweepGrid",
    "aggregate",
    "default_grl",
    "run_label",
    "run_once",
    "run_sweep",
    "summarize",
]
