"""Feature-norm analyses: per-domain norm statistics, the norm distance between
streams, top-K relevant-feature norm share, and the modality-drop experiment.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import BenchmarkSplit, Mode, MultiModalBatch
from .errors import ConfigError
from .losses import LossConfig, LossKind
from .model import STREAMS, TwoStreamModel, encode, stream_key
from .trainer import TrainConfig, evaluate, train

MODALITY_NAMES = {"v": "visual", "a": "audio"}


@dataclass
class StreamStats:
    mean: float
    std: float
    min: float
    max: float
    n: int


@dataclass
class NormReport:
    """Norm statistics of encoder outputs over one dataset.

    ``per_domain[modality][domain_id]`` holds row-norm statistics;
    ``mean_norm`` pools every row of a modality.
    """

    mean_norm: dict[str, float]
    delta: float
    ratio: float
    per_domain: dict[str, dict[int, StreamStats]]
    histogram: dict[str, list[float]]
    topk: int
    topk_fraction: dict[str, float]
    relevance: str = "l1"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_domain"] = {
            m: {str(k): v for k, v in doms.items()} for m, doms in d["per_domain"].items()
        }
        return d

    def rows(self) -> list[dict]:
        """Flat (modality, domain) rows for tabular export."""
        out = []
        for m, doms in self.per_domain.items():
            for dom, st in sorted(doms.items()):
                out.append({"modality": m, "domain": dom, **asdict(st)})
        return out


def features(model: TwoStreamModel, dataset) -> dict[str, np.ndarray]:
    return {
        "visual": encode(model, dataset.x_v, "v").values,
        "audio": encode(model, dataset.x_a, "a").values,
    }


def dimension_profile(f: np.ndarray) -> np.ndarray:
    """Mean absolute activation of each feature dimension."""
    return np.abs(f).mean(axis=0)


def relevance_scores(model: TwoStreamModel, modality: str, relevance: str = "l1") -> np.ndarray:
    """How strongly each feature dimension drives that stream's classifier."""
    w = np.abs(model.classifier(modality).weight.values)  # feature_dim x C
    if relevance == "l1":
        return w.sum(axis=1)
    if relevance == "linf":
        return w.max(axis=1)
    raise ConfigError(f"unknown relevance measure {relevance!r}; use 'l1' or 'linf'")


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    # stable sort on -score keeps the lower index first among ties
    return np.argsort(-scores, kind="stable")[:k]


def _fraction(profile: np.ndarray, scores: np.ndarray, k: int) -> float:
    total = profile.sum()
    if total == 0:
        return 0.0
    # summing in index order makes K == feature_dim reproduce ``total`` exactly
    return float(profile[np.sort(top_k_indices(scores, k))].sum() / total)


def _check_k(model: TwoStreamModel, k: int) -> None:
    dim = model.config.feature_dim
    if not 1 <= k <= dim:
        raise ConfigError(f"K must lie in [1, {dim}], got {k}")


def topk_norm_fraction(
    model: TwoStreamModel, dataset, k: int, relevance: str = "l1"
) -> tuple[float, float]:
    """Share of total per-dimension magnitude held by the K most relevant dims, per stream."""
    _check_k(model, k)
    feats = features(model, dataset)
    return tuple(
        _fraction(dimension_profile(feats[MODALITY_NAMES[s]]), relevance_scores(model, s, relevance), k)
        for s in STREAMS
    )


def _stats(norms: np.ndarray) -> StreamStats:
    return StreamStats(float(norms.mean()), float(norms.std()), float(norms.min()), float(norms.max()), int(norms.size))


def norm_report(
    model: TwoStreamModel, dataset: MultiModalBatch, k: int | None = None, relevance: str = "l1"
) -> NormReport:
    if len(dataset) == 0:
        raise ConfigError("norm report needs a non-empty dataset")
    k = k if k is not None else max(1, model.config.feature_dim // 4)
    _check_k(model, k)
    feats = features(model, dataset)
    mean_norm, per_domain, histogram, fractions = {}, {}, {}, {}
    domains = np.unique(dataset.domain_ids)
    for s in STREAMS:
        name = MODALITY_NAMES[s]
        f = feats[name]
        norms = np.linalg.norm(f, axis=1)
        mean_norm[name] = float(norms.mean())
        per_domain[name] = {int(d): _stats(norms[dataset.domain_ids == d]) for d in domains}
        profile = dimension_profile(f)
        histogram[name] = profile.tolist()
        fractions[name] = _fraction(profile, relevance_scores(model, s, relevance), k)
    e_v, e_a = mean_norm["visual"], mean_norm["audio"]
    lo, hi = min(e_v, e_a), max(e_v, e_a)
    ratio = hi / lo if lo > 0 else float("inf")
    return NormReport(mean_norm, abs(e_v - e_a), ratio, per_domain, histogram, k, fractions, relevance)


# ---------------------------------------------------------------- modality drop

DROP_ROWS = ("separate-v", "separate-a", "joint", "joint+RNA")
DROP_COLUMNS = ("acc_v", "acc_a", "acc_fused")


def _test_set(split: BenchmarkSplit) -> MultiModalBatch:
    return split.target.test


def modality_drop_experiment(
    config: TrainConfig, split: BenchmarkSplit, rna: LossConfig | None = None
) -> list[dict]:
    """Solo-stream test accuracies under separate training, joint training and joint+RNA.

    Every run shares ``config`` (seed, schedule, iterations); only the trained
    streams and the alignment loss differ. The ``separate-v`` row reports
    the visual-only model, so its ``acc_a`` is whatever the untouched audio
    stream scores at initialisation (and vice versa).
    """
    if split.mode is Mode.UDA:
        raise ConfigError("modality drop runs on DG or supervised splits")
    rna = rna or LossConfig(kind=LossKind.RNA)
    runs = {
        "separate-v": replace(config, streams=("v",), loss=LossConfig(kind=LossKind.NONE)),
        "separate-a": replace(config, streams=("a",), loss=LossConfig(kind=LossKind.NONE)),
        "joint": replace(config, streams=("v", "a"), loss=LossConfig(kind=LossKind.NONE)),
        "joint+RNA": replace(config, streams=("v", "a"), loss=rna),
    }
    test = _test_set(split)
    table = []
    for row in DROP_ROWS:
        model, _ = train(runs[row], split)
        m = evaluate(model, test, breakdown=True)
        table.append({"run": row, "acc_v": m["accuracy_v"], "acc_a": m["accuracy_a"], "acc_fused": m["accuracy"]})
    return table


def weaker_stream(table: list[dict]) -> str:
    """Which stream ('v' or 'a') scores lower under joint training."""
    joint = next(r for r in table if r["run"] == "joint")
    return "v" if joint["acc_v"] <= joint["acc_a"] else "a"


def modality_name(stream: str) -> str:
    return MODALITY_NAMES[stream_key(stream)]


__all__ = [
    "DROP_COLUMNS",
    "DROP_ROWS",
    "NormReport",
    "StreamStats",
    "dimension_profile",
    "features",
    "modality_drop_experiment",
    "norm_report",
    "relevance_scores",
    "top_k_indices",
    "topk_norm_fraction",
    "weaker_stream",
]
