"""Feature-norm alignment losses and the comparison losses they are ablated against.

All norm-based losses act on the batch mean of per-sample L2 feature norms,
``E_m = mean_i ||f_m[i]||``, and stay differentiable with respect to both
streams' features.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from . import autodiff as ad
from .autodiff import EPS, Tensor
from .errors import ConfigError, DegenerateFeaturesError


class LossKind(str, Enum):
    RNA = "RNA"
    HNA = "HNA"
    RNA_SUB = "RNA_SUB"
    COS = "COS"
    MSE = "MSE"
    ORTH = "ORTH"
    NONE = "NONE"


class Orientation(str, Enum):
    AS_WRITTEN = "AS_WRITTEN"  # E_v / E_a
    MIN_OVER_MAX = "MIN_OVER_MAX"  # smaller norm over larger norm, bounded in [0, 1)


def _enum_text(value) -> str:
    return value.value if isinstance(value, Enum) else str(value).strip().upper()


@dataclass(frozen=True)
class LossConfig:
    kind: LossKind = LossKind.RNA
    lam: float = 1.0
    hna_k: float = 10.0
    orientation: Orientation = Orientation.AS_WRITTEN
    per_stream_ce: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", LossKind(_enum_text(self.kind)))
            object.__setattr__(self, "orientation", Orientation(_enum_text(self.orientation)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.lam < 0:
            raise ConfigError(f"loss.lambda must be >= 0, got {self.lam}")
        if self.hna_k <= 0:
            raise ConfigError(f"loss.hna_k must be > 0, got {self.hna_k}")

    @property
    def label(self) -> str:
        return "deepall" if self.kind is LossKind.NONE else self.kind.value.lower()


def mean_feature_norm(f: Tensor) -> Tensor:
    return ad.mean(ad.row_l2_norm(f))


def _ratio(num: Tensor, den: Tensor) -> Tensor:
    if den.item() <= EPS:
        raise DegenerateFeaturesError(
            f"mean feature norm {den.item():.3g} is too small to divide by; a stream has collapsed"
        )
    return ad.divide(num, den)


def rna_from_norms(e_v: Tensor, e_a: Tensor, orientation=Orientation.AS_WRITTEN) -> Tensor:
    """``(ratio - 1)^2`` on two scalar mean norms."""
    if Orientation(orientation) is Orientation.MIN_OVER_MAX and e_v.item() > e_a.item():
        ratio = _ratio(e_a, e_v)
    else:
        ratio = _ratio(e_v, e_a)
    return ad.square(ad.subtract(ratio, Tensor(1.0)))


def rna_loss(f_v: Tensor, f_a: Tensor, orientation=Orientation.AS_WRITTEN) -> Tensor:
    return rna_from_norms(mean_feature_norm(f_v), mean_feature_norm(f_a), orientation)


def hna_from_norms(e_v: Tensor, e_a: Tensor, k: float = 10.0) -> Tensor:
    kk = Tensor(float(k))
    return ad.add(ad.square(ad.subtract(e_v, kk)), ad.square(ad.subtract(e_a, kk)))


def hna_loss(f_v: Tensor, f_a: Tensor, k: float = 10.0) -> Tensor:
    if k <= 0:
        raise ConfigError(f"hna k must be > 0, got {k}")
    return hna_from_norms(mean_feature_norm(f_v), mean_feature_norm(f_a), k)


def rna_sub_from_norms(e_v: Tensor, e_a: Tensor) -> Tensor:
    return ad.square(ad.subtract(e_v, e_a))


def rna_sub_loss(f_v: Tensor, f_a: Tensor) -> Tensor:
    return rna_sub_from_norms(mean_feature_norm(f_v), mean_feature_norm(f_a))


def _paired(f_v: Tensor, f_a: Tensor, name: str) -> None:
    if f_v.shape != f_a.shape:
        raise ConfigError(f"{name} needs paired features of equal shape, got {f_v.shape} and {f_a.shape}")


def _row_cosine(f_v: Tensor, f_a: Tensor) -> Tensor:
    return ad.divide(ad.row_dot(f_v, f_a), ad.multiply(ad.row_l2_norm(f_v), ad.row_l2_norm(f_a)))


def cos_sim_loss(f_v: Tensor, f_a: Tensor) -> Tensor:
    _paired(f_v, f_a, "cosine loss")
    return ad.subtract(Tensor(1.0), ad.mean(_row_cosine(f_v, f_a)))


def mse_align_loss(f_v: Tensor, f_a: Tensor) -> Tensor:
    _paired(f_v, f_a, "MSE loss")
    diff = ad.subtract(f_v, f_a)
    return ad.mean(ad.row_dot(diff, diff))


def orth_loss(f_v: Tensor, f_a: Tensor) -> Tensor:
    """Mean squared cosine between paired rows; zero when they are orthogonal."""
    _paired(f_v, f_a, "orthogonality loss")
    return ad.mean(ad.square(_row_cosine(f_v, f_a)))


def total_loss(ce: Tensor, align: Tensor | None, lam: float) -> Tensor:
    if align is None or lam == 0:
        return ce
    return ad.add(ce, ad.scalar_multiply(align, lam))


def alignment_loss(config: LossConfig, f_v: Tensor, f_a: Tensor) -> Tensor | None:
    """The alignment term selected by ``config`` (``None`` for kind NONE)."""
    kind = config.kind
    if kind is LossKind.NONE:
        return None
    if kind is LossKind.RNA:
        return rna_loss(f_v, f_a, config.orientation)
    if kind is LossKind.HNA:
        return hna_loss(f_v, f_a, config.hna_k)
    if kind is LossKind.RNA_SUB:
        return rna_sub_loss(f_v, f_a)
    if kind is LossKind.COS:
        return cos_sim_loss(f_v, f_a)
    if kind is LossKind.MSE:
        return mse_align_loss(f_v, f_a)
    if kind is LossKind.ORTH:
        return orth_loss(f_v, f_a)
    raise ConfigError(f"unhandled loss kind {kind}")


def rna_uda_loss(f_v_src, f_a_src, f_v_tgt, f_a_tgt, orientation=Orientation.AS_WRITTEN) -> Tensor:
    """Source and target terms are computed separately and summed."""
    return ad.add(rna_loss(f_v_src, f_a_src, orientation), rna_loss(f_v_tgt, f_a_tgt, orientation))


def check_feature_dims(config: LossConfig, feature_dim_v: int, feature_dim_a: int) -> None:
    if config.kind in (LossKind.COS, LossKind.MSE, LossKind.ORTH) and feature_dim_v != feature_dim_a:
        raise ConfigError(
            f"{config.kind.value} loss needs equal feature dims, got {feature_dim_v} and {feature_dim_a}"
        )
