"""Dataset container files (binary and CSV) and benchmark manifests.

Binary layout, little-endian throughout::

    b"RNAD" | u16 version | u32 n, d_v, d_a, C | u32 labels[n] | u16 domain_ids[n]
    | f32 x_v[n*d_v] | f32 x_a[n*d_a]

The CSV variant has a header row ``label,domain_id,v0..,a0..`` and one sample
per line.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .data import BaseSpec, BenchmarkConfig, BenchmarkSplit, DomainData, Mode, MultiModalBatch, make_domain
from .errors import ConfigError, FormatError

DATASET_MAGIC = b"RNAD"
DATASET_VERSION = 1
MANIFEST_NAME = "manifest.json"
_HEADER = struct.Struct("<4sH4I")


def write_rnad(batch: MultiModalBatch, class_count: int, path) -> None:
    n, d_v = batch.x_v.shape
    d_a = batch.x_a.shape[1]
    parts = [
        _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, d_v, d_a, class_count),
        batch.labels.astype("<u4").tobytes(),
        batch.domain_ids.astype("<u2").tobytes(),
        batch.x_v.astype("<f4").tobytes(),
        batch.x_a.astype("<f4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def read_rnad(path) -> tuple[MultiModalBatch, int]:
    """Returns the batch and the class count stored in the header."""
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: too short for a dataset header")
    magic, version, n, d_v, d_a, c = _HEADER.unpack_from(buf, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    expected = _HEADER.size + 4 * n + 2 * n + 4 * n * d_v + 4 * n * d_a
    if len(buf) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(buf)}")
    pos = _HEADER.size
    labels = np.frombuffer(buf, "<u4", n, pos).astype(np.int64)
    pos += 4 * n
    domains = np.frombuffer(buf, "<u2", n, pos).astype(np.int64)
    pos += 2 * n
    x_v = np.frombuffer(buf, "<f4", n * d_v, pos).reshape(n, d_v).astype(np.float64)
    pos += 4 * n * d_v
    x_a = np.frombuffer(buf, "<f4", n * d_a, pos).reshape(n, d_a).astype(np.float64)
    if n and labels.max() >= c:
        raise FormatError(f"{path}: label {labels.max()} outside class count {c}")
    return MultiModalBatch(x_v, x_a, labels, domains), int(c)


def write_csv(batch: MultiModalBatch, path) -> None:
    d_v, d_a = batch.x_v.shape[1], batch.x_a.shape[1]
    header = ["label", "domain_id"] + [f"v{i}" for i in range(d_v)] + [f"a{i}" for i in range(d_a)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(batch)):
            # repr() of a float is the shortest string that parses back to the same value
            w.writerow(
                [int(batch.labels[i]), int(batch.domain_ids[i])]
                + [repr(float(x)) for x in batch.x_v[i]]
                + [repr(float(x)) for x in batch.x_a[i]]
            )


def read_csv(path) -> MultiModalBatch:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["label", "domain_id"]:
        raise FormatError(f"{path}: missing 'label,domain_id,...' header")
    header = rows[0]
    d_v = sum(1 for h in header if h.startswith("v"))
    d_a = sum(1 for h in header if h.startswith("a"))
    if 2 + d_v + d_a != len(header):
        raise FormatError(f"{path}: unrecognised columns in header")
    try:
        body = np.array([[float(x) for x in r] for r in rows[1:]], dtype=np.float64).reshape(-1, len(header))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return MultiModalBatch(body[:, 2:2 + d_v], body[:, 2 + d_v:], body[:, 0].astype(np.int64), body[:, 1].astype(np.int64))


def _write(batch: MultiModalBatch, class_count: int, path: Path, fmt: str) -> None:
    if fmt == "binary":
        write_rnad(batch, class_count, path)
    elif fmt == "csv":
        write_csv(batch, path)
    else:
        raise ConfigError(f"unknown format {fmt!r}; expected 'binary' or 'csv'")


def _read(path: Path, fmt: str) -> MultiModalBatch:
    return read_rnad(path)[0] if fmt == "binary" else read_csv(path)


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _base_to_dict(base: BaseSpec) -> dict:
    return dataclasses.asdict(base)


def save_split(split: BenchmarkSplit, bench: BenchmarkConfig, out_dir, fmt: str = "binary", extra=None) -> Path:
    """One file per domain (train rows then test rows) plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = "rnad" if fmt == "binary" else "csv"
    entries = []
    roles = [("source", d) for d in split.sources]
    if split.mode is not Mode.SUPERVISED:
        roles.append(("target", split.target))
    for role, dom in roles:
        name = f"domain{dom.spec.domain_id}.{suffix}"
        _write(MultiModalBatch.concat([dom.train, dom.test]), dom.spec.class_count, out / name, fmt)
        entries.append({
            "file": name,
            "domain": dom.spec.domain_id,
            "role": role,
            "train": len(dom.train),
            "test": len(dom.test),
        })
    manifest = {
        "format": fmt,
        "mode": split.mode.value,
        "seed": split.seed,
        "base": _base_to_dict(split.base),
        "benchmark": {k: v for k, v in dataclasses.asdict(bench).items() if k != "base"},
        "domains": entries,
        **(extra or {}),
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out / MANIFEST_NAME


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST_NAME
    if not path.is_file():
        raise FormatError(f"no {MANIFEST_NAME} in {data_dir}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None


def load_split(data_dir) -> BenchmarkSplit:
    """Rebuild the in-memory split; domain specs are regenerated from the manifest seed."""
    manifest = read_manifest(data_dir)
    try:
        fmt = manifest["format"]
        mode = Mode(manifest["mode"])
        seed = int(manifest["seed"])
        base = BaseSpec(**manifest["base"])
        entries = manifest["domains"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{data_dir}: malformed manifest ({exc})") from None
    sources, target = [], None
    for e in entries:
        batch = _read(Path(data_dir) / e["file"], fmt)
        n_train = int(e["train"])
        if len(batch) != n_train + int(e["test"]):
            raise FormatError(f"{e['file']}: row count disagrees with manifest")
        dom = DomainData(make_domain(seed, base, int(e["domain"])), batch.take(slice(0, n_train)),
                         batch.take(slice(n_train, None)))
        if e["role"] == "target":
            target = dom
        else:
            sources.append(dom)
    if mode is Mode.SUPERVISED and target is None and sources:
        target = sources[0]
    if target is None or not sources:
        raise FormatError(f"{data_dir}: manifest lacks a source or target domain")
    return BenchmarkSplit(mode, sources, target, seed=seed, base=base)
