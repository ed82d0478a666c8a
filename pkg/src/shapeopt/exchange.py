"""File formats: constellation exchange (JSON) and symbol-batch replay.

Constellation exchange files are JSON objects with the fields

    {"points": [[x0, x1, x2, x3], ...],   # N x 4
     "pmf":    [p0, ...],                  # N
     "metadata": {"name": ..., "base": ..., "lambda": ..., "n_ball": ...}}

Floats are serialized with Python's shortest-round-trip repr, so reading
back a written file reproduces the arrays bit-exactly.  Metadata keys
beyond the ones above are preserved as-is.

Symbol batches use a little-endian binary layout:

    magic "SOPB" | u16 version | u16 reserved | i64 seed | u64 n
    | f64 tx_scale | u16 len + utf8 config fingerprint
    | u16 len + utf8 channel fingerprint
    | n  * i64   tx indices
    | 4n * f64   tx values
    | 4n * f64   rx values
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .channel import SymbolBatch
from .constellation import Constellation4D
from .errors import ConfigError

BATCH_MAGIC = b"SOPB"
BATCH_VERSION = 1


def write_constellation(path, c: Constellation4D, metadata: dict | None = None):
    meta = dict(metadata or {})
    meta.setdefault("name", c.name)
    doc = {
        "points": c.points.tolist(),
        "pmf": c.pmf.tolist(),
        "metadata": meta,
    }
    Path(path).write_text(json.dumps(doc))


def read_constellation(path) -> tuple[Constellation4D, dict]:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed constellation file at line {e.lineno}") from e
    for key in ("points", "pmf", "metadata"):
        if key not in doc:
            raise ConfigError(f"{path}: missing field {key!r}")
    points = np.asarray(doc["points"], dtype=np.float64)
    pmf = np.asarray(doc["pmf"], dtype=np.float64)
    meta = doc["metadata"]
    c = Constellation4D(points, pmf, name=str(meta.get("name", "")))
    return c, meta


def _pack_str(s: str) -> bytes:
    b = s.encode()
    return struct.pack("<H", len(b)) + b


def write_symbol_batch(path, batch: SymbolBatch):
    n = batch.n_symbols
    head = BATCH_MAGIC + struct.pack("<HHqQd", BATCH_VERSION, 0, batch.seed, n, batch.tx_scale)
    head += _pack_str(batch.config_fingerprint) + _pack_str(batch.channel_fingerprint)
    body = (
        batch.tx_indices.astype("<i8").tobytes()
        + batch.tx.astype("<f8").tobytes()
        + batch.rx.astype("<f8").tobytes()
    )
    Path(path).write_bytes(head + body)


def read_symbol_batch(path) -> SymbolBatch:
    raw = Path(path).read_bytes()
    if raw[:4] != BATCH_MAGIC:
        raise ConfigError(f"{path}: not a symbol-batch file")
    version, _, seed, n, tx_scale = struct.unpack_from("<HHqQd", raw, 4)
    if version != BATCH_VERSION:
        raise ConfigError(f"{path}: unsupported batch version {version}")
    off = 4 + struct.calcsize("<HHqQd")

    def unpack_str(off):
        (ln,) = struct.unpack_from("<H", raw, off)
        off += 2
        return raw[off : off + ln].decode(), off + ln

    fp, off = unpack_str(off)
    chan_fp, off = unpack_str(off)
    idx = np.frombuffer(raw, dtype="<i8", count=n, offset=off).copy()
    off += 8 * n
    tx = np.frombuffer(raw, dtype="<f8", count=4 * n, offset=off).reshape(n, 4).copy()
    off += 32 * n
    rx = np.frombuffer(raw, dtype="<f8", count=4 * n, offset=off).reshape(n, 4).copy()
    return SymbolBatch(idx, tx, rx, tx_scale=tx_scale, seed=seed,
                       config_fingerprint=fp, channel_fingerprint=chan_fp)
