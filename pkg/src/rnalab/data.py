"""Synthetic paired-modality datasets with controllable domain shift.

Each domain shares the same class geometry in a latent space and differs in
how that latent is embedded into each modality: a per-domain perturbation of
a shared orthonormal mixing basis plus an additive class-irrelevant offset.
Modalities can be given very different input scales to provoke feature-norm
unbalance downstream.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError

MODALITIES = ("visual", "audio")

# stream tags for seeding; keep stable, they define the benchmark
_TAG_MEANS, _TAG_MIX_BASE, _TAG_MIX_DOMAIN, _TAG_NUISANCE, _TAG_SAMPLE = 1, 2, 3, 4, 5


class Mode(str, Enum):
    DG = "DG"
    UDA = "UDA"
    SUPERVISED = "SUPERVISED"


@dataclass(frozen=True)
class BaseSpec:
    """Parameters shared by every domain of a benchmark.

    ``latent_noise=None`` means 0.3 * class_separation. The default of 0 keeps
    all sample noise modality-specific, so the two streams carry independent
    evidence and fusing them beats either one alone.
    """

    latent_dim: int = 10
    class_count: int = 6
    dim_v: int = 32
    dim_a: int = 32
    class_separation: float = 3.0
    latent_noise: float | None = 0.0
    noise_sigma: float = 1.0
    scale_v: float = 1.0
    scale_a: float = 8.0
    nuisance_strength: float = 2.0
    mixing_shift_v: float = 0.5
    mixing_shift_a: float = 0.6

    @property
    def sigma_z(self) -> float:
        return 0.3 * self.class_separation if self.latent_noise is None else self.latent_noise

    def validate(self) -> None:
        if min(self.latent_dim, self.class_count, self.dim_v, self.dim_a) < 1:
            raise ConfigError("latent_dim, class_count, dim_v and dim_a must be positive")
        if self.latent_dim > min(self.dim_v, self.dim_a):
            raise ShapeError(
                f"latent_dim={self.latent_dim} exceeds a modality dim "
                f"(dim_v={self.dim_v}, dim_a={self.dim_a}); orthonormal mixing impossible"
            )
        if self.scale_v <= 0 or self.scale_a <= 0:
            raise ConfigError("modality scales must be positive")
        if self.noise_sigma < 0 or self.sigma_z < 0:
            raise ConfigError("noise levels must be non-negative")
        if min(self.nuisance_strength, self.mixing_shift_v, self.mixing_shift_a) < 0:
            raise ConfigError("nuisance strengths and mixing shifts must be non-negative")


@dataclass
class DomainSpec:
    """One synthetic domain.

    ``mixing_v`` / ``mixing_a`` are ``d_m x d_z`` with orthonormal columns;
    a latent row vector ``z`` embeds as ``z @ mixing.T``.
    """

    domain_id: int
    latent_dim: int
    class_count: int
    class_means: np.ndarray
    modality_dims: tuple[int, int]
    mixing_v: np.ndarray
    mixing_a: np.ndarray
    nuisance_v: np.ndarray
    nuisance_a: np.ndarray
    modality_scales: tuple[float, float]
    noise_sigma: float
    latent_noise: float

    def __eq__(self, other):
        if not isinstance(other, DomainSpec):
            return NotImplemented
        for f in dataclasses.fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True


@dataclass
class MultiModalBatch:
    """Paired samples: row i of ``x_v`` and row i of ``x_a`` describe one sample."""

    x_v: np.ndarray
    x_a: np.ndarray
    labels: np.ndarray
    domain_ids: np.ndarray

    def __post_init__(self):
        self.x_v = np.asarray(self.x_v, dtype=np.float64)
        self.x_a = np.asarray(self.x_a, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.domain_ids = np.asarray(self.domain_ids, dtype=np.int64)
        n = self.x_v.shape[0]
        if self.x_a.shape[0] != n or self.labels.shape != (n,) or self.domain_ids.shape != (n,):
            raise ShapeError(
                f"batch parts disagree on sample count: x_v {self.x_v.shape}, x_a {self.x_a.shape}, "
                f"labels {self.labels.shape}, domain_ids {self.domain_ids.shape}"
            )

    def __len__(self) -> int:
        return self.x_v.shape[0]

    def take(self, idx) -> "MultiModalBatch":
        return MultiModalBatch(self.x_v[idx], self.x_a[idx], self.labels[idx], self.domain_ids[idx])

    def unlabeled(self) -> "UnlabeledBatch":
        return UnlabeledBatch(self.x_v, self.x_a, self.domain_ids)

    def equals(self, other: "MultiModalBatch") -> bool:
        return (
            np.array_equal(self.x_v, other.x_v)
            and np.array_equal(self.x_a, other.x_a)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.domain_ids, other.domain_ids)
        )

    @staticmethod
    def concat(batches) -> "MultiModalBatch":
        batches = list(batches)
        return MultiModalBatch(
            np.concatenate([b.x_v for b in batches]),
            np.concatenate([b.x_a for b in batches]),
            np.concatenate([b.labels for b in batches]),
            np.concatenate([b.domain_ids for b in batches]),
        )


@dataclass
class UnlabeledBatch:
    """Training view of target data for adaptation: inputs only, no labels."""

    x_v: np.ndarray
    x_a: np.ndarray
    domain_ids: np.ndarray

    def __len__(self) -> int:
        return self.x_v.shape[0]

    def take(self, idx) -> "UnlabeledBatch":
        return UnlabeledBatch(self.x_v[idx], self.x_a[idx], self.domain_ids[idx])


@dataclass
class DomainData:
    spec: DomainSpec
    train: MultiModalBatch
    test: MultiModalBatch


@dataclass
class BenchmarkSplit:
    """Source domains, one target domain and the protocol they are used under.

    In UDA mode the trainer should only ever touch ``target_unlabeled()``;
    target labels live on ``target.train`` / ``target.test`` for evaluation.
    """

    mode: Mode
    sources: list[DomainData]
    target: DomainData
    seed: int = 0
    base: BaseSpec = field(default_factory=BaseSpec)

    def source_train(self) -> MultiModalBatch:
        return MultiModalBatch.concat(d.train for d in self.sources)

    def source_test(self) -> MultiModalBatch:
        return MultiModalBatch.concat(d.test for d in self.sources)

    def target_unlabeled(self) -> UnlabeledBatch:
        if self.mode is not Mode.UDA:
            raise ConfigError(f"target inputs are not available for training in {self.mode.value} mode")
        return self.target.train.unlabeled()

    def equals(self, other: "BenchmarkSplit") -> bool:
        if self.mode != other.mode or len(self.sources) != len(other.sources):
            return False
        pairs = list(zip(self.sources, other.sources)) + [(self.target, other.target)]
        return all(
            a.spec == b.spec and a.train.equals(b.train) and a.test.equals(b.test) for a, b in pairs
        )


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def _orthonormal_columns(mat: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(mat)
    # fix the sign ambiguity of QR so the basis is a deterministic function of mat
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def make_domain(seed: int, base: BaseSpec, domain_index: int) -> DomainSpec:
    """Build domain ``domain_index`` of the benchmark seeded by ``seed``.

    Class means depend on ``seed`` only, so every domain shares them. The
    mixing basis of modality m is the QR factor of ``B_m + shift_m * G_{m,d}``
    where ``B_m`` is shared and ``G_{m,d}`` is drawn per domain. Each
    modality also gets a random offset of norm ``nuisance_strength``.
    """
    base.validate()
    if domain_index < 0:
        raise ConfigError(f"domain_index must be >= 0, got {domain_index}")
    d_z, c = base.latent_dim, base.class_count
    means = _rng(seed, _TAG_MEANS).standard_normal((c, d_z))
    means = base.class_separation * means / np.linalg.norm(means, axis=1, keepdims=True)

    mixings, nuisances = [], []
    dims = (base.dim_v, base.dim_a)
    shifts = (base.mixing_shift_v, base.mixing_shift_a)
    for m, (d_m, shift) in enumerate(zip(dims, shifts)):
        shared = _rng(seed, _TAG_MIX_BASE, m).standard_normal((d_m, d_z))
        own = _rng(seed, _TAG_MIX_DOMAIN, domain_index, m).standard_normal((d_m, d_z))
        mixings.append(_orthonormal_columns(shared + shift * own))
        direction = _unit(_rng(seed, _TAG_NUISANCE, domain_index, m).standard_normal(d_m))
        nuisances.append(base.nuisance_strength * direction)

    return DomainSpec(
        domain_id=domain_index,
        latent_dim=d_z,
        class_count=c,
        class_means=means,
        modality_dims=dims,
        mixing_v=mixings[0],
        mixing_a=mixings[1],
        nuisance_v=nuisances[0],
        nuisance_a=nuisances[1],
        modality_scales=(base.scale_v, base.scale_a),
        noise_sigma=base.noise_sigma,
        latent_noise=base.sigma_z,
    )


def _f32(x: np.ndarray) -> np.ndarray:
    # samples are kept at float32 precision so the on-disk container round-trips exactly
    return x.astype(np.float32).astype(np.float64)


def sample_batch(spec: DomainSpec, n: int, seed: int) -> MultiModalBatch:
    """Draw ``n`` labeled paired samples from ``spec``."""
    if n < 1:
        raise ConfigError(f"need at least one sample, got n={n}")
    rng = _rng(seed, _TAG_SAMPLE, spec.domain_id)
    labels = rng.integers(0, spec.class_count, size=n)
    z = spec.class_means[labels] + spec.latent_noise * rng.standard_normal((n, spec.latent_dim))
    out = []
    for mixing, nuisance, scale in (
        (spec.mixing_v, spec.nuisance_v, spec.modality_scales[0]),
        (spec.mixing_a, spec.nuisance_a, spec.modality_scales[1]),
    ):
        noise = spec.noise_sigma * rng.standard_normal((n, mixing.shape[0]))
        out.append(_f32(scale * (z @ mixing.T + nuisance + noise)))
    return MultiModalBatch(out[0], out[1], labels, np.full(n, spec.domain_id))


@dataclass(frozen=True)
class BenchmarkConfig:
    """Which domains play which role and how many samples each holds."""

    base: BaseSpec = field(default_factory=BaseSpec)
    domains: int = 3
    target_domain: int = 2
    source_domain: int = 0  # UDA only
    train_per_domain: int = 2000
    test_per_domain: int = 1000

    def __post_init__(self):
        if min(self.domains, self.train_per_domain, self.test_per_domain) < 1:
            raise ConfigError("domains, train_per_domain and test_per_domain must be positive")


def _domain_data(seed: int, base: BaseSpec, index: int, cfg: BenchmarkConfig) -> DomainData:
    spec = make_domain(seed, base, index)
    # train and test draws use disjoint seed streams
    train = sample_batch(spec, cfg.train_per_domain, seed=2 * seed)
    test = sample_batch(spec, cfg.test_per_domain, seed=2 * seed + 1)
    return DomainData(spec, train, test)


def make_dg_benchmark(config: BenchmarkConfig, seed: int) -> BenchmarkSplit:
    """All domains except ``target_domain`` become labeled sources."""
    if config.domains < 3:
        raise ConfigError(f"DG needs at least 2 source domains plus a target; got {config.domains} domains")
    if not 0 <= config.target_domain < config.domains:
        raise ConfigError(f"target_domain={config.target_domain} outside [0, {config.domains})")
    sources = [
        _domain_data(seed, config.base, i, config)
        for i in range(config.domains)
        if i != config.target_domain
    ]
    target = _domain_data(seed, config.base, config.target_domain, config)
    return BenchmarkSplit(Mode.DG, sources, target, seed=seed, base=config.base)


def make_uda_benchmark(config: BenchmarkConfig, seed: int) -> BenchmarkSplit:
    """One labeled source, one target whose training inputs are exposed unlabeled."""
    for name, idx in (("source_domain", config.source_domain), ("target_domain", config.target_domain)):
        if not 0 <= idx < config.domains:
            raise ConfigError(f"{name}={idx} outside [0, {config.domains})")
    if config.domains < 2 or config.source_domain == config.target_domain:
        raise ConfigError("UDA needs two distinct domains (one source, one target)")
    source = _domain_data(seed, config.base, config.source_domain, config)
    target = _domain_data(seed, config.base, config.target_domain, config)
    return BenchmarkSplit(Mode.UDA, [source], target, seed=seed, base=config.base)


def make_supervised_benchmark(config: BenchmarkConfig, seed: int) -> BenchmarkSplit:
    """Train and test within one domain (``target_domain``)."""
    data = _domain_data(seed, config.base, config.target_domain, config)
    return BenchmarkSplit(Mode.SUPERVISED, [data], data, seed=seed, base=config.base)


def make_benchmark(config: BenchmarkConfig, seed: int, mode: Mode) -> BenchmarkSplit:
    mode = Mode(mode)
    if mode is Mode.DG:
        return make_dg_benchmark(config, seed)
    if mode is Mode.UDA:
        return make_uda_benchmark(config, seed)
    return make_supervised_benchmark(config, seed)
