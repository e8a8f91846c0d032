"""Extrapolation along the rank-1 subspace of merged checkpoints.

The pipeline is: sliding-window PMA merges -> Gram PCA over the last ``K``
merged states -> orient the top direction along the latest displacement ->
greedy line search from the newest merged state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .checkpoint_store import DEFAULT_CHUNK_LEN, CheckpointManifest, as_parameter_vector
from .errors import DimensionMismatchError, ZeroStrideError
from .merge_engine import sliding_pma
from .subspace_pca import SubspaceResult, analyze_subspace

LossOracle = Callable[[np.ndarray], float]

ITERATIVE = "iterative-stride"
GRID = "grid"
DEFAULT_ALPHA = 0.1
DEFAULT_MAX_STEPS = 20
# Multipliers of the last merged displacement tried in grid mode.
DEFAULT_GRID = tuple(round(0.2 * i, 10) for i in range(11))

NON_IMPROVEMENT = "non-improvement"
MAX_STEPS = "max_steps"


@dataclass(frozen=True)
class LineSearchConfig:
    alpha: float = DEFAULT_ALPHA
    max_steps: int = DEFAULT_MAX_STEPS
    mode: str = ITERATIVE
    grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.mode not in (ITERATIVE, GRID):
            raise ValueError(f"unknown line-search mode {self.mode!r}")
        if self.mode == GRID and self.grid is None:
            object.__setattr__(self, "grid", DEFAULT_GRID)
        if self.grid is not None:
            g = tuple(float(x) for x in self.grid)
            if not g or g[0] != 0.0 or any(b <= a for a, b in zip(g, g[1:])):
                raise ValueError("grid must start at 0 and be strictly ascending")
            object.__setattr__(self, "grid", g)


@dataclass
class LineSearchResult:
    """Outcome of a line search.

    ``candidates`` holds ``(k, loss)`` for every evaluated point, ``k = 0``
    being the anchor. ``offsets[k]`` is the distance travelled along the
    direction for candidate ``k``.
    """

    candidates: list[tuple[int, float]]
    offsets: list[float]
    best_k: int
    best_loss: float
    best_params: np.ndarray
    terminated_by: str
    anchor_loss: float = field(default=math.nan)

    @property
    def improved(self) -> bool:
        return self.best_loss < self.anchor_loss


def adaptive_stride(z_newest: float, z_previous: float, alpha: float = DEFAULT_ALPHA) -> float:
    """Stride ``alpha * |z_newest - z_previous|``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    delta = alpha * abs(z_newest - z_previous)
    if delta == 0.0:
        raise ZeroStrideError()
    return delta


def _loss(loss_eval: LossOracle, theta) -> float:
    return float(loss_eval(theta))


def line_search(anchor, direction, delta: float, loss_eval: LossOracle,
                config: LineSearchConfig | None = None) -> LineSearchResult:
    """Search ``anchor + offset * direction`` for the lowest loss.

    In iterative mode the offsets are ``k * delta`` for ``k = 1, 2, ...`` and
    the search stops at the first candidate whose loss exceeds the *anchor*
    loss (or is not finite), or after ``max_steps`` candidates. In grid mode
    the offsets are ``grid[k] * delta`` and every grid point is evaluated.
    The anchor itself is always a candidate, so the result is never worse.
    """
    config = config or LineSearchConfig()
    anchor = as_parameter_vector(anchor, "anchor")
    direction = as_parameter_vector(direction, "direction")
    if anchor.size != direction.size:
        raise DimensionMismatchError(anchor.size, direction.size)
    if not (delta > 0 and math.isfinite(delta)):
        raise ValueError(f"delta must be positive and finite, got {delta}")

    anchor_loss = _loss(loss_eval, anchor)
    if not math.isfinite(anchor_loss):
        raise ValueError(f"anchor loss is not finite: {anchor_loss!r}")
    candidates = [(0, anchor_loss)]
    offsets = [0.0]
    best_k, best_loss = 0, anchor_loss

    if config.mode == GRID:
        terminated_by = MAX_STEPS
        for k, mult in enumerate(config.grid[1:], start=1):
            off = mult * delta
            loss = _loss(loss_eval, anchor + off * direction)
            candidates.append((k, loss))
            offsets.append(off)
            if math.isfinite(loss) and loss < best_loss:
                best_k, best_loss = k, loss
    else:
        terminated_by = MAX_STEPS
        for k in range(1, config.max_steps + 1):
            off = k * delta
            loss = _loss(loss_eval, anchor + off * direction)
            candidates.append((k, loss))
            offsets.append(off)
            if not math.isfinite(loss) or loss > anchor_loss:
                terminated_by = NON_IMPROVEMENT
                break
            if loss < best_loss:
                best_k, best_loss = k, loss

    # only the winner is materialized
    best_params = anchor if best_k == 0 else anchor + offsets[best_k] * direction
    return LineSearchResult(candidates, offsets, best_k, best_loss, best_params,
                            terminated_by, anchor_loss)


def extrapolate_states(merged: Sequence, loss_eval: LossOracle,
                       config: LineSearchConfig | None = None,
                       chunk_len: int = DEFAULT_CHUNK_LEN):
    """Extra-Merge on an explicit sequence of merged states, oldest first."""
    config = config or LineSearchConfig()
    if len(merged) < 2:
        raise ValueError("need at least two merged states")
    sub = analyze_subspace(merged, orient_direction=True, chunk_len=chunk_len)
    if config.mode == GRID:
        delta = adaptive_stride(sub.projections[-1], sub.projections[-2], 1.0)
    else:
        delta = adaptive_stride(sub.projections[-1], sub.projections[-2], config.alpha)
    anchor = as_parameter_vector(merged[-1])
    result = line_search(anchor, sub.u1, delta, loss_eval, config)
    return result, sub


def run_extra_merge(manifest: CheckpointManifest, tau: int, n: int, K: int,
                    config: LineSearchConfig | None, loss_eval: LossOracle,
                    chunk_len: int = DEFAULT_CHUNK_LEN, start_step: int | None = None,
                    end_step: int | None = None) -> tuple[LineSearchResult, SubspaceResult]:
    """End-to-end Extra-Merge from a checkpoint manifest.

    Builds ``K`` sliding PMA merges (window ``n``, interval ``tau``) ending at
    the newest checkpoint (or ``end_step``), then extrapolates from the
    newest merge. ``start_step`` drops earlier checkpoints from consideration.
    """
    if K < 2:
        raise ValueError("K must be >= 2")
    merged = sliding_pma(manifest, tau, n, K, chunk_len=chunk_len,
                         start_step=start_step, end_step=end_step)
    return extrapolate_states([m.params for m in merged], loss_eval, config, chunk_len)
