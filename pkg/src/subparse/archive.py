"""Binary archive for word-level attention tensors.

Layout (all integers little-endian):

    magic  b"DSMA"
    u16    format version
    u32    header length, then that many bytes of UTF-8 JSON
    per record:
        u32    record header length, then that many bytes of UTF-8 JSON
               (word forms, dimensions, free-form metadata)
        raw    float32 tensor [layers][heads][n][n], C order
        u32    CRC32 of record header bytes + tensor bytes

Tensors round-trip bit-exactly.  Rows are validated as row-stochastic on
load because only reduced word-level attention belongs in an archive.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"DSMA"
VERSION = 1

_ROW_SUM_TOL = 1e-4


class ArchiveError(Exception):
    pass


@dataclass(frozen=True)
class ArchiveHeader:
    model: str
    layers: tuple[int, ...]
    heads: int
    sentences: int
    version: int = VERSION

    def to_dict(self) -> dict:
        return {"model": self.model, "layers": list(self.layers),
                "heads": self.heads, "sentences": self.sentences}


@dataclass
class ArchiveRecord:
    """One sentence (or sentence variant): words plus its attention tensor.

    ``tensor`` has shape (len(header.layers), heads, n, n); the layer axis
    follows the header's layer list order.
    """

    words: tuple[str, ...]
    tensor: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.words)


def _encode_json(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False).encode("utf-8")


def _validate_tensor(tensor: np.ndarray, n: int, index: int) -> np.ndarray:
    if tensor.ndim != 4 or tensor.shape[2:] != (n, n):
        raise ArchiveError(f"record {index}: bad tensor shape {tensor.shape}")
    if not np.isfinite(tensor).all():
        raise ArchiveError(f"record {index}: non-finite tensor values")
    deviation = np.abs(tensor.astype(np.float64).sum(axis=-1) - 1.0).max()
    if deviation > _ROW_SUM_TOL:
        raise ArchiveError(
            f"record {index}: rows deviate from stochastic by {deviation:.2e}")
    return tensor


def write_archive(target, model: str, layers: list[int], heads: int,
                  records: list[ArchiveRecord]) -> None:
    """Write records to ``target`` (path or binary file object)."""
    own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
    handle = open(target, "wb") if own else target
    try:
        header = ArchiveHeader(model=model, layers=tuple(layers), heads=heads,
                               sentences=len(records))
        header_bytes = _encode_json(header.to_dict())
        handle.write(MAGIC)
        handle.write(struct.pack("<H", VERSION))
        handle.write(struct.pack("<I", len(header_bytes)))
        handle.write(header_bytes)
        for index, record in enumerate(records):
            tensor = np.ascontiguousarray(record.tensor, dtype="<f4")
            _validate_tensor(tensor, record.n, index)
            if tensor.shape[0] != len(layers) or tensor.shape[1] != heads:
                raise ArchiveError(
                    f"record {index}: tensor shape {tensor.shape} does not match "
                    f"archive dimensions ({len(layers)}, {heads}, n, n)")
            rec_header = _encode_json({
                "words": list(record.words),
                "n": record.n,
                "meta": record.meta,
            })
            payload = tensor.tobytes()
            handle.write(struct.pack("<I", len(rec_header)))
            handle.write(rec_header)
            handle.write(payload)
            handle.write(struct.pack("<I", zlib.crc32(rec_header + payload)))
    finally:
        if own:
            handle.close()


def _read_exact(handle, count: int, what: str) -> bytes:
    data = handle.read(count)
    if len(data) != count:
        raise ArchiveError(f"truncated archive while reading {what}")
    return data


def read_archive(source) -> tuple[ArchiveHeader, list[ArchiveRecord]]:
    """Read an archive from ``source`` (path, bytes, or binary file object)."""
    if isinstance(source, bytes):
        return read_archive(io.BytesIO(source))
    own = isinstance(source, str) or hasattr(source, "__fspath__")
    handle = open(source, "rb") if own else source
    try:
        magic = _read_exact(handle, 4, "magic")
        if magic != MAGIC:
            raise ArchiveError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(handle, 2, "version"))
        if version != VERSION:
            raise ArchiveError(f"unsupported archive version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(handle, 4, "header length"))
        header_dict = json.loads(_read_exact(handle, header_len, "header"))
        header = ArchiveHeader(
            model=header_dict["model"],
            layers=tuple(header_dict["layers"]),
            heads=int(header_dict["heads"]),
            sentences=int(header_dict["sentences"]),
            version=version,
        )
        n_layers = len(header.layers)
        records = []
        for index in range(header.sentences):
            (rec_len,) = struct.unpack(
                "<I", _read_exact(handle, 4, f"record {index} header length"))
            rec_bytes = _read_exact(handle, rec_len, f"record {index} header")
            try:
                rec_header = json.loads(rec_bytes)
            except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                raise ArchiveError(f"record {index}: corrupt header ({exc})") from exc
            n = int(rec_header["n"])
            payload_len = n_layers * header.heads * n * n * 4
            payload = _read_exact(handle, payload_len, f"record {index} tensor")
            (stored_crc,) = struct.unpack(
                "<I", _read_exact(handle, 4, f"record {index} checksum"))
            actual_crc = zlib.crc32(rec_bytes + payload)
            if stored_crc != actual_crc:
                raise ArchiveError(f"record {index}: checksum mismatch")
            tensor = np.frombuffer(payload, dtype="<f4").reshape(
                (n_layers, header.heads, n, n)).copy()
            _validate_tensor(tensor, n, index)
            records.append(ArchiveRecord(words=tuple(rec_header["words"]),
                                         tensor=tensor,
                                         meta=rec_header.get("meta", {})))
        if handle.read(1):
            raise ArchiveError("trailing bytes after final record")
        return header, records
    finally:
        if own:
            handle.close()
