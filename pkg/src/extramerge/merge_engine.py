"""Latest-weight averaging (LAWA) of checkpoint sequences.

Index convention: position ``i = 0`` is the *newest* checkpoint of a window,
so a window anchored at step ``t`` with interval ``tau`` is
``theta[t], theta[t - tau], ..., theta[t - (n-1) tau]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .checkpoint_store import (
    DEFAULT_CHUNK_LEN,
    CheckpointManifest,
    common_dim,
    iter_source_chunks,
)
from .errors import (
    InsufficientCheckpointsError,
    NonFiniteError,
    SpacingError,
)

WEIGHT_SUM_TOL = 1e-12


def uniform_weights(n: int) -> np.ndarray:
    """PMA weights, ``1/n`` each."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.full(n, 1.0 / n)


def ema_weights(n: int, gamma: float) -> np.ndarray:
    """Truncated, normalized geometric weights ``gamma**i / sum_j gamma**j``.

    ``i = 0`` is the newest checkpoint. ``gamma = 1`` reduces to uniform.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    w = gamma ** np.arange(n, dtype=np.float64)
    return w / w.sum()


def validate_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
    return w


@dataclass(frozen=True)
class MergeSchedule:
    tau: int
    n: int
    weights: np.ndarray

    def __post_init__(self):
        if self.tau < 1 or self.n < 1:
            raise ValueError("tau and n must be positive")
        w = validate_weights(self.weights)
        if w.size != self.n:
            raise ValueError(f"expected {self.n} weights, got {w.size}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, tau: int, n: int):
        return cls(tau, n, uniform_weights(n))

    @classmethod
    def ema(cls, tau: int, n: int, gamma: float):
        return cls(tau, n, ema_weights(n, gamma))


@dataclass(frozen=True)
class MergedCheckpoint:
    anchor_step: int
    params: np.ndarray
    schedule: MergeSchedule


def _neumaier_weighted_sum(chunks: Sequence[np.ndarray], weights: np.ndarray) -> np.ndarray:
    # Element-wise compensated sum in ascending i; each output entry depends
    # only on its own column, so the result is independent of chunking.
    s = weights[0] * chunks[0]
    c = np.zeros_like(s)
    for w, x in zip(weights[1:], chunks[1:]):
        term = w * x
        t = s + term
        c += np.where(np.abs(s) >= np.abs(term), (s - t) + term, (term - t) + s)
        s = t
    return s + c


def weighted_average(sources: Sequence, weights, chunk_len: int = DEFAULT_CHUNK_LEN) -> np.ndarray:
    """``sum_i weights[i] * sources[i]`` computed chunk by chunk.

    ``sources`` may mix in-memory vectors and :class:`CheckpointRecord`s.
    """
    w = validate_weights(weights)
    if len(sources) != w.size:
        raise ValueError(f"{len(sources)} sources but {w.size} weights")
    d = common_dim(sources)
    out = np.empty(d)
    pos = 0
    iters = [iter_source_chunks(s, chunk_len, d) for s in sources]
    for chunks in zip(*iters):
        part = _neumaier_weighted_sum(chunks, w)
        out[pos : pos + part.size] = part
        pos += part.size
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("weighted average")
    return out


def window_steps(anchor_step: int, tau: int, n: int) -> list[int]:
    """Steps averaged by a window anchored at ``anchor_step``, newest first."""
    return [anchor_step - i * tau for i in range(n)]


def select_records(manifest: CheckpointManifest, tau: int, count: int, end_step: int | None = None):
    """The ``count`` records at steps ``end, end - tau, ...``, oldest first.

    Raises if the manifest is too short, or if any required step is missing
    (checkpoints are never resampled to fit ``tau``).
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if len(manifest) == 0:
        raise InsufficientCheckpointsError(count, 0)
    end = manifest.steps[-1] if end_step is None else end_step
    wanted = [end - j * tau for j in range(count - 1, -1, -1)]
    by_step = {r.step: r for r in manifest}
    available = sum(1 for r in manifest if r.step <= end)
    if available < count:
        raise InsufficientCheckpointsError(count, available)
    missing = [s for s in wanted if s not in by_step]
    if missing:
        raise SpacingError(f"no checkpoint at step(s) {missing[:5]} for tau={tau} ending at {end}")
    return [by_step[s] for s in wanted]


def sliding_pma(
    manifest: CheckpointManifest,
    tau: int,
    n: int,
    count: int,
    weights=None,
    chunk_len: int = DEFAULT_CHUNK_LEN,
    start_step: int | None = None,
    end_step: int | None = None,
) -> list[MergedCheckpoint]:
    """``count`` consecutive merged checkpoints, oldest first.

    Output ``s`` averages the ``n`` checkpoints ending at
    ``end - (count - 1 - s) * tau``. All raw checkpoints are streamed once and
    each window uses the same kernel as :func:`weighted_average`, so results
    are bit-identical to computing every window from scratch.
    """
    if n < 1 or count < 1:
        raise ValueError("n and count must be >= 1")
    schedule = MergeSchedule(tau, n, uniform_weights(n) if weights is None else weights)
    if start_step is not None or end_step is not None:
        manifest = manifest.filtered(start_step, end_step)
    records = select_records(manifest, tau, n + count - 1)
    d = manifest.d
    outs = [np.empty(d) for _ in range(count)]
    pos = 0
    iters = [iter_source_chunks(r, chunk_len, d) for r in records]
    for chunks in zip(*iters):
        for s in range(count):
            # window s covers records[s : s + n]; newest first
            window = chunks[s : s + n][::-1]
            part = _neumaier_weighted_sum(window, schedule.weights)
            outs[s][pos : pos + part.size] = part
        pos += chunks[0].size
    merged = []
    for s, params in enumerate(outs):
        if not np.all(np.isfinite(params)):
            raise NonFiniteError("merged checkpoint")
        merged.append(MergedCheckpoint(records[s + n - 1].step, params, schedule))
    return merged


def merge_latest(manifest: CheckpointManifest, tau: int, weights, chunk_len=DEFAULT_CHUNK_LEN,
                 end_step: int | None = None) -> MergedCheckpoint:
    """A single LAWA merge of the newest ``len(weights)`` checkpoints."""
    w = validate_weights(weights)
    (merged,) = sliding_pma(manifest, tau, w.size, 1, w, chunk_len, end_step=end_step)
    return merged

