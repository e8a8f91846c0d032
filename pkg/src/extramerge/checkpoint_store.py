"""Binary checkpoint files and the step-indexed manifest.

File layout (all little-endian)::

    offset  size   field
    0       4      magic b"XMG1"
    4       1      dtype code, 0x08 = float64
    5       3      reserved, zero
    8       8      d as u64
    16      8*d    IEEE-754 doubles

The manifest is a UTF-8 text file with one ``step<TAB>path<TAB>d<TAB>crc64hex``
line per checkpoint; paths are stored relative to the manifest's directory.
The checksum is CRC-64/XZ over the payload bytes only.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import crcmod
import numpy as np

from .errors import (
    ChecksumMismatchError,
    DataError,
    DimensionMismatchError,
    HeaderMismatchError,
    NonFiniteError,
)

MAGIC = b"XMG1"
DTYPE_F64 = 0x08
HEADER = struct.Struct("<4sB3xQ")
HEADER_SIZE = HEADER.size  # 16
_LE_F64 = np.dtype("<f8")

# CRC-64/XZ (a.k.a. CRC-64/GO-ECMA): check value for b"123456789" is 0x995DC9BBDF1939FA.
_crc64 = crcmod.mkCrcFun(0x142F0E1EBA9EA3693, initCrc=0, rev=True, xorOut=0xFFFFFFFFFFFFFFFF)

DEFAULT_CHUNK_LEN = 1 << 20


def crc64(data: bytes, crc: int = 0) -> int:
    """CRC-64/XZ of ``data``, optionally continuing from a previous value."""
    return _crc64(data, crc)


def as_parameter_vector(x, what="vector") -> np.ndarray:
    """Validate and convert ``x`` to a 1-D finite float64 array (no copy if possible)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DataError(f"{what} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(what)
    return arr


@dataclass(frozen=True)
class CheckpointRecord:
    step: int
    path: Path
    d: int
    checksum: int

    def __post_init__(self):
        if self.step < 0:
            raise DataError(f"step must be non-negative, got {self.step}")
        if self.d <= 0:
            raise DataError(f"d must be positive, got {self.d}")
        object.__setattr__(self, "path", Path(self.path))


@dataclass
class CheckpointManifest:
    """Ordered index of checkpoints of one training run.

    Records are kept sorted by step; all share the same dimension ``d``.
    """

    records: list[CheckpointRecord] = field(default_factory=list)
    d: int | None = None

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: r.step)
        steps = [r.step for r in self.records]
        if len(set(steps)) != len(steps):
            raise DataError("manifest steps must be strictly increasing")
        dims = {r.d for r in self.records}
        if len(dims) > 1:
            raise DataError(f"manifest mixes dimensions {sorted(dims)}")
        if dims:
            (d,) = dims
            if self.d is not None and self.d != d:
                raise DimensionMismatchError(self.d, d)
            self.d = d

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[CheckpointRecord]:
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def steps(self) -> list[int]:
        return [r.step for r in self.records]

    def step_differences(self) -> list[int]:
        s = self.steps
        return [b - a for a, b in zip(s[:-1], s[1:])]

    def record_at(self, step: int) -> CheckpointRecord:
        for r in self.records:
            if r.step == step:
                return r
        raise KeyError(step)

    def append(self, record: CheckpointRecord):
        if self.records and record.step <= self.records[-1].step:
            raise DataError(
                f"step {record.step} does not follow last step {self.records[-1].step}"
            )
        if self.d is not None and record.d != self.d:
            raise DimensionMismatchError(self.d, record.d)
        self.d = record.d
        self.records.append(record)

    def filtered(self, start_step: int | None = None, end_step: int | None = None):
        """Sub-manifest restricted to ``start_step <= step <= end_step``."""
        recs = [
            r
            for r in self.records
            if (start_step is None or r.step >= start_step)
            and (end_step is None or r.step <= end_step)
        ]
        return CheckpointManifest(recs, self.d)

    def save(self, path):
        """Write the manifest; record paths are made relative to its directory."""
        path = Path(path)
        base = path.parent.resolve()
        lines = []
        for r in self.records:
            p = Path(r.path).resolve()
            try:
                rel = p.relative_to(base)
            except ValueError:
                rel = Path(os.path.relpath(p, base))
            lines.append(f"{r.step}\t{rel.as_posix()}\t{r.d}\t{r.checksum:016x}\n")
        path.write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CheckpointManifest":
        path = Path(path)
        base = path.parent
        records = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
            step, rel, d, crc = parts
            try:
                records.append(CheckpointRecord(int(step), base / rel, int(d), int(crc, 16)))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
        if not records:
            raise DataError(f"{path}: empty manifest")
        steps = [r.step for r in records]
        if steps != sorted(steps) or len(set(steps)) != len(steps):
            raise DataError(f"{path}: steps must be strictly increasing")
        return cls(records)


def write_checkpoint(vec, step: int, dest) -> CheckpointRecord:
    """Write ``vec`` to ``dest`` and return its manifest record.

    Non-finite entries are rejected before anything touches the disk.
    """
    arr = as_parameter_vector(vec, "checkpoint")
    payload = arr.astype(_LE_F64, copy=False).tobytes()
    dest = Path(dest)
    with open(dest, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, DTYPE_F64, arr.size))
        fh.write(payload)
    return CheckpointRecord(step, dest, arr.size, crc64(payload))


def _read_header(fh, record: CheckpointRecord, expected_d: int | None):
    raw = fh.read(HEADER_SIZE)
    if len(raw) != HEADER_SIZE:
        raise HeaderMismatchError(f"{record.path}: file shorter than header")
    magic, dtype, d = HEADER.unpack(raw)
    if magic != MAGIC:
        raise HeaderMismatchError(f"{record.path}: bad magic {magic!r}")
    if dtype != DTYPE_F64:
        raise HeaderMismatchError(f"{record.path}: unsupported dtype code {dtype:#04x}")
    if raw[5:8] != b"\x00\x00\x00":
        raise HeaderMismatchError(f"{record.path}: reserved bytes not zero")
    if d != record.d or (expected_d is not None and d != expected_d):
        raise HeaderMismatchError(f"{record.path}: header d={d}, manifest d={record.d}")
    size = os.fstat(fh.fileno()).st_size
    if size != HEADER_SIZE + 8 * d:
        raise HeaderMismatchError(
            f"{record.path}: size {size} bytes, expected {HEADER_SIZE + 8 * d}"
        )
    return d


def stream_chunks(
    record: CheckpointRecord, chunk_len: int = DEFAULT_CHUNK_LEN, expected_d: int | None = None
) -> Iterator[np.ndarray]:
    """Yield consecutive float64 slices of at most ``chunk_len`` entries.

    The checksum is verified incrementally; a mismatch raises before the
    final slice is yielded, so a consumer that only commits its result
    after exhausting the iterator never acts on corrupted data.
    """
    if chunk_len < 1:
        raise ValueError("chunk_len must be >= 1")
    with open(record.path, "rb") as fh:
        d = _read_header(fh, record, expected_d)
        crc = 0
        remaining = d
        while remaining:
            n = min(chunk_len, remaining)
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise HeaderMismatchError(f"{record.path}: truncated payload")
            crc = crc64(buf, crc)
            remaining -= n
            chunk = np.frombuffer(buf, dtype=_LE_F64).astype(np.float64)
            if not remaining and crc != record.checksum:
                raise ChecksumMismatchError(record.path, record.checksum, crc)
            if not np.all(np.isfinite(chunk)):
                raise NonFiniteError(str(record.path))
            yield chunk


def read_checkpoint(record: CheckpointRecord, expected_d: int | None = None) -> np.ndarray:
    with open(record.path, "rb") as fh:
        d = _read_header(fh, record, expected_d)
        payload = fh.read(8 * d)
    actual = crc64(payload)
    if actual != record.checksum:
        raise ChecksumMismatchError(record.path, record.checksum, actual)
    arr = np.frombuffer(payload, dtype=_LE_F64).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(str(record.path))
    return arr


def iter_source_chunks(source, chunk_len: int, expected_d: int | None = None):
    """Chunks of either an in-memory vector or a :class:`CheckpointRecord`."""
    if isinstance(source, CheckpointRecord):
        yield from stream_chunks(source, chunk_len, expected_d)
        return
    arr = as_parameter_vector(source)
    if expected_d is not None and arr.size != expected_d:
        raise DimensionMismatchError(expected_d, arr.size)
    if chunk_len < 1:
        raise ValueError("chunk_len must be >= 1")
    for start in range(0, arr.size, chunk_len):
        yield arr[start : start + chunk_len]


def materialize(source) -> np.ndarray:
    """Load a record into memory, or validate an in-memory vector."""
    if isinstance(source, CheckpointRecord):
        return read_checkpoint(source)
    return as_parameter_vector(source)


def source_dim(source) -> int:
    if isinstance(source, CheckpointRecord):
        return source.d
    return as_parameter_vector(source).size


def common_dim(sources: Sequence) -> int:
    dims = [source_dim(s) for s in sources]
    for d in dims[1:]:
        if d != dims[0]:
            raise DimensionMismatchError(dims[0], d)
    return dims[0]


def write_run(vectors: Sequence, steps: Sequence[int], directory, prefix="ckpt") -> CheckpointManifest:
    """Write a sequence of vectors as ``<prefix>_<step>.xmg`` plus ``manifest.tsv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = CheckpointManifest()
    for vec, step in zip(vectors, steps):
        manifest.append(write_checkpoint(vec, int(step), directory / f"{prefix}_{int(step):09d}.xmg"))
    manifest.save(directory / "manifest.tsv")
    return manifest
