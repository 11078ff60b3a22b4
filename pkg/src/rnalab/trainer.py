"""Mini-batch SGD training for the supervised, multi-source DG and UDA regimes.

A step is: forward both streams on a pooled labeled source batch, cross-entropy
on the fused logits, plus ``lambda`` times the configured alignment term on the
source features. In UDA mode an unlabeled target batch of the same size is
also encoded and contributes its own alignment term; optionally a domain
discriminator is attached through a gradient-reversal op.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import BenchmarkSplit, Mode, MultiModalBatch
from .errors import ConfigError, NumericalError, StateError
from .losses import LossConfig, LossKind, alignment_loss, check_feature_dims, mean_feature_norm, total_loss
from .model import (
    MLP,
    LayerConfig,
    TwoStreamModel,
    argmax_rows,
    forward,
    forward_single_stream,
    init_model,
    stream_key,
)


@dataclass(frozen=True)
class StepSchedule:
    """Piecewise-constant learning rate: ``base * gamma ** (#milestones <= it)``."""

    base: float
    milestones: tuple[int, ...] = ()
    gamma: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.base <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.base}")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ConfigError(f"milestones must be strictly increasing, got {self.milestones}")
        if self.gamma <= 0:
            raise ConfigError(f"decay factor must be positive, got {self.gamma}")

    def at(self, iteration: int) -> float:
        passed = sum(1 for m in self.milestones if iteration >= m)
        return self.base * self.gamma**passed


@dataclass(frozen=True)
class GRLConfig:
    enabled: bool = True
    grl_weight: float = 1.0
    hidden: int = 64
    lr: float = 0.01
    ramp_fraction: float = 0.25

    def weight_at(self, iteration: int, iterations: int) -> float:
        ramp = self.ramp_fraction * iterations
        if ramp <= 0:
            return self.grl_weight
        return self.grl_weight * min(1.0, iteration / ramp)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 128
    lr_v: StepSchedule = field(default_factory=lambda: StepSchedule(0.03, (700,), 0.2))
    lr_a: StepSchedule = field(default_factory=lambda: StepSchedule(0.03, (350, 700, 1050), 0.1))
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    mode: Mode = Mode.DG
    grl: GRLConfig | None = None
    log_interval: int = 50
    streams: tuple[str, ...] = ("v", "a")
    layers: LayerConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "streams", tuple(stream_key(s) for s in self.streams))
        if self.iterations < 1 or self.batch_size < 1 or self.log_interval < 1:
            raise ConfigError("iterations, batch_size and log_interval must be positive")
        if not self.streams or len(set(self.streams)) != len(self.streams):
            raise ConfigError(f"streams must be a non-empty set of modalities, got {self.streams}")
        for name, sched in (("lr_v", self.lr_v), ("lr_a", self.lr_a)):
            if sched.milestones and sched.milestones[-1] > self.iterations:
                raise ConfigError(f"{name} milestone {sched.milestones[-1]} beyond {self.iterations} iterations")
        if self.grl is not None and self.grl.enabled and self.mode is not Mode.UDA:
            raise ConfigError("the gradient-reversal baseline needs UDA mode (it trains on target inputs)")


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    checkpoint: str | None = None
    diverged_at: int | None = None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainLog":
        return cls([json.loads(line) for line in text.splitlines() if line.strip()])

    def last(self) -> dict:
        return self.records[-1]


class Discriminator:
    """MLP on concatenated (f_v, f_a) features that predicts source (0) vs target (1)."""

    def __init__(self, in_dim: int, hidden: int, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 991]))
        self.net = MLP.build([in_dim, hidden, 2], rng)

    def __call__(self, features: Tensor) -> Tensor:
        return self.net(features)

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()


def _apply(params, lr: float) -> None:
    for p in params:
        if p.grad is None:
            raise StateError("sgd_step called before a backward pass populated the gradients")
    for p in params:
        p.values = p.values - lr * p.grad
        p.grad = None


def sgd_step(model: TwoStreamModel, lr_v: float, lr_a: float, streams=("v", "a")) -> None:
    """Plain SGD on each stream with its own learning rate; clears the gradients."""
    rates = {"v": lr_v, "a": lr_a}
    for s in streams:
        _apply(model.stream_parameters(s), rates[stream_key(s)])


def _ce(logits: Tensor, labels) -> Tensor:
    return ad.softmax_cross_entropy(logits, labels)


def _classification_loss(result, labels, config: TrainConfig) -> Tensor:
    streams = config.streams
    if len(streams) == 1:
        return _ce(result.logits_v if streams[0] == "v" else result.logits_a, labels)
    ce = _ce(result.fused_logits, labels)
    if config.loss.per_stream_ce:
        ce = ad.add(ce, ad.add(_ce(result.logits_v, labels), _ce(result.logits_a, labels)))
    return ce


def train_step(
    model: TwoStreamModel,
    batch: MultiModalBatch,
    config: TrainConfig,
    iteration: int,
    target=None,
    discriminator: Discriminator | None = None,
    grl_weight: float = 0.0,
) -> dict:
    """One forward/backward/update. Returns scalar diagnostics for logging."""
    lr_v, lr_a = config.lr_v.at(iteration), config.lr_a.at(iteration)
    src = forward(model, batch)
    ce = _classification_loss(src, batch.labels, config)
    two_streams = len(config.streams) == 2
    align = alignment_loss(config.loss, src.f_v, src.f_a) if two_streams else None
    stats = {}
    tgt = None
    if target is not None:
        tgt = forward(model, target)
        if two_streams:
            tgt_align = alignment_loss(config.loss, tgt.f_v, tgt.f_a)
            if tgt_align is not None:
                align = ad.add(align, tgt_align)
    loss = total_loss(ce, align, config.loss.lam)
    if discriminator is not None:
        if tgt is None:
            raise ConfigError("gradient reversal needs a target batch")
        feats = ad.concat_rows([
            ad.concat_cols([src.f_v, src.f_a]),
            ad.concat_cols([tgt.f_v, tgt.f_a]),
        ])
        domain = np.concatenate([np.zeros(len(batch), dtype=np.int64), np.ones(len(target), dtype=np.int64)])
        dlogits = discriminator(ad.grad_reverse(feats, grl_weight))
        dloss = _ce(dlogits, domain)
        loss = ad.add(loss, dloss)
        stats["domain_loss"] = dloss.item()
        stats["disc_acc"] = float(np.mean(argmax_rows(dlogits.values) == domain))
    if not math.isfinite(loss.item()):
        raise NumericalError(f"non-finite loss at iteration {iteration}")
    loss.backward()
    sgd_step(model, lr_v, lr_a, config.streams)
    if discriminator is not None:
        _apply(discriminator.parameters(), config.grl.lr if config.grl else 0.01)
    e_v = mean_feature_norm(src.f_v.detach()).item()
    e_a = mean_feature_norm(src.f_a.detach()).item()
    stats.update(
        total=loss.item(),
        ce=ce.item(),
        align=align.item() if align is not None else 0.0,
        E_v=e_v,
        E_a=e_a,
        delta=abs(e_v - e_a),
        lr_v=lr_v,
        lr_a=lr_a,
    )
    return stats


def grl_train_step(
    model: TwoStreamModel,
    discriminator: Discriminator,
    source_batch: MultiModalBatch,
    target_batch,
    grl_weight: float,
    config: TrainConfig,
    iteration: int = 0,
) -> dict:
    """Joint step with the domain discriminator attached through gradient reversal."""
    if config.mode is not Mode.UDA:
        raise ConfigError(f"gradient reversal step requires UDA mode, got {config.mode.value}")
    if target_batch is None:
        raise ConfigError("gradient reversal needs a target batch")
    return train_step(model, source_batch, config, iteration, target_batch, discriminator, grl_weight)


def _check_compatible(config: TrainConfig, split: BenchmarkSplit) -> None:
    if config.mode is Mode.UDA and split.mode is not Mode.UDA:
        raise ConfigError(f"UDA training needs a UDA split, got {split.mode.value}")
    if config.mode is not Mode.UDA and split.mode is Mode.UDA:
        raise ConfigError(f"{config.mode.value} training cannot use a UDA split")


def _layers_for(config: TrainConfig, split: BenchmarkSplit) -> LayerConfig:
    if config.layers is not None:
        return config.layers
    b = split.base
    return LayerConfig(dim_v=b.dim_v, dim_a=b.dim_a, class_count=b.class_count)


def train(
    config: TrainConfig,
    split: BenchmarkSplit,
    on_batch: Callable[[MultiModalBatch, object], None] | None = None,
    model: TwoStreamModel | None = None,
    stop_on_nan: bool = False,
) -> tuple[TwoStreamModel, TrainLog]:
    """Train a fresh two-stream model on ``split`` and return it with its log.

    ``on_batch(source_batch, target_view_or_None)`` is called with every batch
    drawn, which makes sampler purity checkable from the outside.

    A non-finite loss raises :class:`NumericalError` unless ``stop_on_nan``,
    in which case training halts, ``log.diverged_at`` is set and the model is
    returned as it stood.
    """
    _check_compatible(config, split)
    layers = _layers_for(config, split)
    check_feature_dims(config.loss, layers.feature_dim, layers.feature_dim)
    model = model or init_model(config.seed, layers)
    pool = split.source_train()
    target_pool = split.target_unlabeled() if config.mode is Mode.UDA else None
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 4242]))
    grl = config.grl if config.grl is not None and config.grl.enabled else None
    disc = Discriminator(2 * layers.feature_dim, grl.hidden, config.seed) if grl else None

    log = TrainLog()
    last_good = None
    for it in range(config.iterations):
        batch = pool.take(rng.integers(0, len(pool), size=config.batch_size))
        target = None
        if target_pool is not None:
            target = target_pool.take(rng.integers(0, len(target_pool), size=config.batch_size))
        if on_batch is not None:
            on_batch(batch, target)
        weight = grl.weight_at(it, config.iterations) if grl else 0.0
        try:
            stats = train_step(model, batch, config, it, target, disc, weight)
            if not all(math.isfinite(v) for v in stats.values()):
                raise NumericalError(f"non-finite statistics at iteration {it}")
        except NumericalError as exc:
            if stop_on_nan:
                log.diverged_at = it
                break
            raise NumericalError(str(exc), last_good_iteration=last_good) from None
        last_good = it
        if (it + 1) % config.log_interval == 0 or it + 1 == config.iterations:
            log.records.append({"iteration": it + 1, **stats, "grl_weight": weight})
    return model, log


# ---------------------------------------------------------------- evaluation


def _accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    return float(np.count_nonzero(pred == labels)) / len(labels) if len(labels) else float("nan")


def _predictions(logits: np.ndarray) -> np.ndarray:
    # rows with non-finite logits (a diverged model) never count as correct
    pred = argmax_rows(np.nan_to_num(logits, nan=0.0, posinf=0.0, neginf=0.0))
    pred[~np.isfinite(logits).all(axis=1)] = -1
    return pred


def evaluate(model: TwoStreamModel, dataset: MultiModalBatch, breakdown: bool = False) -> dict:
    """Top-1 accuracy of the fused prediction, optionally per stream and per domain."""
    result = forward(model, dataset)
    fused = _predictions(result.fused_logits.values)
    metrics = {"accuracy": _accuracy(fused, dataset.labels), "n": len(dataset)}
    if breakdown:
        pred_v = _predictions(result.logits_v.values)
        pred_a = _predictions(result.logits_a.values)
        metrics["accuracy_v"] = _accuracy(pred_v, dataset.labels)
        metrics["accuracy_a"] = _accuracy(pred_a, dataset.labels)
        per_domain = {}
        for d in np.unique(dataset.domain_ids):
            mask = dataset.domain_ids == d
            per_domain[int(d)] = {
                "accuracy": _accuracy(fused[mask], dataset.labels[mask]),
                "accuracy_v": _accuracy(pred_v[mask], dataset.labels[mask]),
                "accuracy_a": _accuracy(pred_a[mask], dataset.labels[mask]),
                "n": int(mask.sum()),
            }
        metrics["per_domain"] = per_domain
    return metrics


def stream_accuracy(model: TwoStreamModel, dataset: MultiModalBatch, modality: str) -> float:
    logits = forward_single_stream(model, dataset, modality)
    return _accuracy(_predictions(logits.values), dataset.labels)


def config_to_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["mode"] = config.mode.value
    d["loss"]["kind"] = config.loss.kind.value
    d["loss"]["orientation"] = config.loss.orientation.value
    return d


__all__ = [
    "Discriminator",
    "GRLConfig",
    "LossKind",
    "StepSchedule",
    "TrainConfig",
    "TrainLog",
    "config_to_dict",
    "evaluate",
    "grl_train_step",
    "sgd_step",
    "stream_accuracy",
    "train",
    "train_step",
]
