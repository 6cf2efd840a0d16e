"""Readers and writers for the on-disk artifacts (all little-endian)."""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .graph import InteractionLog, ItemGraph
from .modality import ModalityMask

GRAPH_MAGIC = b"GGR1"
FEATURE_MAGIC = b"GMC1"
CHECKPOINT_MAGIC = b"GMP1"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _check_magic(buf: bytes, magic: bytes, path) -> None:
    if buf[:4] != magic:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")


def read_interactions(path: str | Path) -> InteractionLog:
    """Two tab-separated columns ``user_id<TAB>item_id`` per line, no header."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 2 or not cols[0] or not cols[1]:
                raise FormatError(f"{path}:{lineno}: expected 'user_id<TAB>item_id', got {line!r}")
            pairs.append((cols[0].strip(), cols[1].strip()))
    return InteractionLog.from_pairs(pairs)


def write_interactions(path: str | Path, pairs: Iterable[tuple[object, object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for u, i in pairs:
            fh.write(f"{u}\t{i}\n")


def write_graph(path: str | Path, g: ItemGraph) -> None:
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(struct.pack("<IQQ", FORMAT_VERSION, g.n, g.targets.shape[0]))
        fh.write(g.offsets.astype("<u8").tobytes())
        fh.write(g.targets.astype("<u4").tobytes())


def read_graph(path: str | Path) -> ItemGraph:
    buf = Path(path).read_bytes()
    _check_magic(buf, GRAPH_MAGIC, path)
    n, entries = struct.unpack_from("<QQ", buf, 8)
    off = 24
    need = off + 8 * (n + 1) + 4 * entries
    if len(buf) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(buf)}")
    offsets = np.frombuffer(buf, dtype="<u8", count=n + 1, offset=off).astype(np.int64)
    targets = np.frombuffer(buf, dtype="<u4", count=entries, offset=off + 8 * (n + 1)).astype(np.int64)
    if offsets[0] != 0 or offsets[-1] != entries or np.any(np.diff(offsets) < 0):
        raise FormatError(f"{path}: corrupt offsets")
    return ItemGraph(offsets, targets)


def write_id_map(path: str | Path, ids: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dense_id", "external_id"])
        for k, ext in enumerate(ids):
            w.writerow([k, ext])


def write_features(path: str | Path, mat: np.ndarray) -> None:
    mat = np.asarray(mat)
    if mat.ndim != 2:
        raise FormatError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IQQ", FORMAT_VERSION, mat.shape[0], mat.shape[1]))
        fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def read_features(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    _check_magic(buf, FEATURE_MAGIC, path)
    rows, cols = struct.unpack_from("<QQ", buf, 8)
    if len(buf) != 24 + 4 * rows * cols:
        raise FormatError(f"{path}: size does not match {rows}x{cols} header")
    data = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=24)
    return data.reshape(rows, cols).astype(np.float64)


def write_mask(path: str | Path, mask: ModalityMask, names: Iterable[str]) -> None:
    names = list(names)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "modality", "observed"])
        for i, row in enumerate(mask.observed):
            for m, obs in enumerate(row):
                w.writerow([i, names[m], int(obs)])


def read_mask(path: str | Path, names: list[str], n_items: int) -> ModalityMask:
    """Parse a mask CSV; modality is a name from ``names`` or an integer index."""
    obs = np.ones((n_items, len(names)), dtype=bool)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["item_id", "modality", "observed"]:
            raise FormatError(f"{path}: header must be item_id,modality,observed")
        for lineno, rec in enumerate(reader, start=2):
            try:
                i = int(rec["item_id"])
                mod = rec["modality"]
                m = names.index(mod) if mod in names else int(mod)
                val = int(rec["observed"])
            except (ValueError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if not (0 <= i < n_items and 0 <= m < len(names) and val in (0, 1)):
                raise FormatError(f"{path}:{lineno}: value out of range")
            obs[i, m] = bool(val)
    return ModalityMask(obs)


def write_checkpoint(path: str | Path, params: dict[str, np.ndarray], meta: dict) -> None:
    names = list(params)
    manifest = dict(meta)
    manifest["params"] = [[k, list(params[k].shape)] for k in names]
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(params[k], dtype="<f4").tobytes())


def read_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    _check_magic(buf, CHECKPOINT_MAGIC, path)
    (length,) = struct.unpack_from("<Q", buf, 8)
    manifest = json.loads(buf[16 : 16 + length].decode("utf-8"))
    off = 16 + length
    params = {}
    for name, shape in manifest["params"]:
        count = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 4 * count
    if off != len(buf):
        raise FormatError(f"{path}: trailing or missing parameter bytes")
    return params, manifest


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
