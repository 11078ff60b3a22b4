"""Two-stream late-fusion classifier.

Each modality has its own MLP encoder and linear classifier; the fused
prediction is the sum of the two streams' logits. Features used for norm
statistics are the encoder outputs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, FormatError, ShapeError

CHECKPOINT_MAGIC = b"RNAM"
CHECKPOINT_VERSION = 1

STREAMS = ("v", "a")
_MODALITY_ALIASES = {"visual": "v", "v": "v", "rgb": "v", "audio": "a", "a": "a"}


def stream_key(modality: str) -> str:
    try:
        return _MODALITY_ALIASES[modality.lower()]
    except (KeyError, AttributeError):
        raise ConfigError(f"unknown modality {modality!r}; expected 'visual' or 'audio'") from None


@dataclass(frozen=True)
class LayerConfig:
    dim_v: int = 32
    dim_a: int = 32
    hidden: tuple[int, ...] = (64,)
    feature_dim: int = 32
    class_count: int = 6
    feature_relu: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        sizes = (self.dim_v, self.dim_a, self.feature_dim, self.class_count, *self.hidden)
        if min(sizes) < 1:
            raise ConfigError(f"layer sizes must be positive, got {self}")


class Linear:
    def __init__(self, weight: Tensor, bias: Tensor):
        self.weight = weight
        self.bias = bias

    @classmethod
    def glorot(cls, fan_in: int, fan_out: int, rng: np.random.Generator) -> "Linear":
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add_bias(ad.matmul(x, self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class MLP:
    """Linear layers with relu between them; ``output_relu`` adds one after the last."""

    def __init__(self, layers: list[Linear], output_relu: bool = False):
        self.layers = layers
        self.output_relu = output_relu

    @classmethod
    def build(cls, sizes: list[int], rng: np.random.Generator, output_relu: bool = False) -> "MLP":
        return cls([Linear.glorot(i, o, rng) for i, o in zip(sizes[:-1], sizes[1:])], output_relu)

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            if i:
                x = ad.relu(x)
            x = layer(x)
        return ad.relu(x) if self.output_relu else x

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


@dataclass
class ForwardResult:
    f_v: Tensor
    f_a: Tensor
    logits_v: Tensor
    logits_a: Tensor
    fused_logits: Tensor


@dataclass
class TwoStreamModel:
    config: LayerConfig
    encoder_v: MLP
    encoder_a: MLP
    classifier_v: Linear
    classifier_a: Linear
    seed: int | None = field(default=None)

    def encoder(self, stream: str) -> MLP:
        return self.encoder_v if stream_key(stream) == "v" else self.encoder_a

    def classifier(self, stream: str) -> Linear:
        return self.classifier_v if stream_key(stream) == "v" else self.classifier_a

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for s in STREAMS:
            for i, layer in enumerate(self.encoder(s).layers):
                out.append((f"encoder_{s}.{i}.weight", layer.weight))
                out.append((f"encoder_{s}.{i}.bias", layer.bias))
            clf = self.classifier(s)
            out.append((f"classifier_{s}.weight", clf.weight))
            out.append((f"classifier_{s}.bias", clf.bias))
        return out

    def stream_parameters(self, stream: str) -> list[Tensor]:
        s = stream_key(stream)
        return self.encoder(s).parameters() + self.classifier(s).parameters()

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.values.copy() for name, p in self.named_parameters()}

    def copy(self) -> "TwoStreamModel":
        clone = init_model(0, self.config)
        for (_, dst), (_, src) in zip(clone.named_parameters(), self.named_parameters()):
            dst.values = src.values.copy()
        clone.seed = self.seed
        return clone


def init_model(seed: int, config: LayerConfig | None = None) -> TwoStreamModel:
    """Glorot-uniform weights, zero biases, deterministic per ``seed``."""
    config = config or LayerConfig()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 77]))
    hidden = list(config.hidden)
    enc_v = MLP.build([config.dim_v, *hidden, config.feature_dim], rng, config.feature_relu)
    enc_a = MLP.build([config.dim_a, *hidden, config.feature_dim], rng, config.feature_relu)
    clf_v = Linear.glorot(config.feature_dim, config.class_count, rng)
    clf_a = Linear.glorot(config.feature_dim, config.class_count, rng)
    return TwoStreamModel(config, enc_v, enc_a, clf_v, clf_a, seed=seed)


def _as_input(x, expected: int, stream: str) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.values.ndim != 2 or t.shape[1] != expected:
        raise ShapeError(f"{stream} input has shape {t.shape}, model expects n x {expected}")
    return t


def encode(model: TwoStreamModel, x, stream: str) -> Tensor:
    s = stream_key(stream)
    enc = model.encoder(s)
    return enc(_as_input(x, enc.in_dim, "visual" if s == "v" else "audio"))


def forward(model: TwoStreamModel, batch) -> ForwardResult:
    """Run both streams; ``batch`` needs ``x_v`` and ``x_a`` (labels unused)."""
    f_v = encode(model, batch.x_v, "v")
    f_a = encode(model, batch.x_a, "a")
    logits_v = model.classifier_v(f_v)
    logits_a = model.classifier_a(f_a)
    return ForwardResult(f_v, f_a, logits_v, logits_a, ad.add(logits_v, logits_a))


def forward_single_stream(model: TwoStreamModel, batch, modality: str) -> Tensor:
    s = stream_key(modality)
    x = batch.x_v if s == "v" else batch.x_a
    return model.classifier(s)(encode(model, x, s))


def argmax_rows(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(np.asarray(logits), axis=1)


def predict(model: TwoStreamModel, batch) -> np.ndarray:
    return argmax_rows(forward(model, batch).fused_logits.values)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: TwoStreamModel, path) -> None:
    """Versioned header, JSON layer config, then named little-endian float64 tensors."""
    meta = json.dumps({"layers": asdict(model.config), "seed": model.seed}, sort_keys=True).encode()
    params = model.named_parameters()
    chunks = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(meta)), meta,
              struct.pack("<I", len(params))]
    for name, p in params:
        raw = name.encode()
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", p.values.ndim) + struct.pack(f"<{p.values.ndim}I", *p.shape))
        chunks.append(p.values.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> TwoStreamModel:
    buf = Path(path).read_bytes()
    try:
        return _parse_checkpoint(buf)
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from exc


def _parse_checkpoint(buf: bytes) -> TwoStreamModel:
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, meta_len = struct.unpack_from("<HI", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 10
    meta = json.loads(buf[pos:pos + meta_len])
    pos += meta_len
    layers = meta["layers"]
    layers["hidden"] = tuple(layers["hidden"])
    model = init_model(0, LayerConfig(**layers))
    model.seed = meta.get("seed")
    expected = dict(model.named_parameters())
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if count != len(expected):
        raise FormatError(f"checkpoint holds {count} tensors, model needs {len(expected)}")
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        if pos + 8 * n > len(buf):
            raise FormatError("checkpoint truncated")
        values = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape)
        pos += 8 * n
        target = expected[name]
        if target.shape != tuple(shape):
            raise FormatError(f"{name}: shape {tuple(shape)} does not match layer config {target.shape}")
        target.values = values.astype(np.float64)
    if pos != len(buf):
        raise FormatError("trailing bytes after last tensor")
    return model
