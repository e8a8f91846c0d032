"""Rank-1 subspace analysis of checkpoint sequences.

PCA of ``K`` states in dimension ``d >> K`` goes through the ``K x K`` Gram
matrix of the mean-centered states: its top eigenvector ``q`` gives the
principal direction ``sum_i q_i x_i`` (normalized) in parameter space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .checkpoint_store import (
    DEFAULT_CHUNK_LEN,
    as_parameter_vector,
    common_dim,
    iter_source_chunks,
    materialize,
)
from .errors import (
    DegenerateSpectrumError,
    DimensionMismatchError,
    NumericalDegeneracyError,
    OrientationUndefinedError,
)
from .linalg import jacobi_eigh
from .merge_engine import _neumaier_weighted_sum

# Inner products are reduced over fixed absolute index blocks, independent of
# the streaming chunk size, which keeps the Gram matrix bit-identical for any
# chunk_len.
REDUCTION_BLOCK = 1 << 14
DEGENERATE_REL = 1e-12
NEG_EIG_TOL = 1e-9
CLASSIFY_REL_TOL = 1e-4

MONOTONE = "monotone-decreasing"
CONVEX_BASIN = "convex-basin"
OTHER = "other"


@dataclass(frozen=True)
class GramDecomposition:
    gram: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @property
    def k(self) -> int:
        return self.gram.shape[0]

    @property
    def mean_sq_norm(self) -> float:
        """Mean squared norm of the centered states, ``trace(G) / K``."""
        return float(np.trace(self.gram)) / self.k

    @property
    def q1(self) -> np.ndarray:
        return self.eigvecs[:, 0]


@dataclass(frozen=True)
class SubspaceResult:
    u1: np.ndarray
    evr: np.ndarray
    projections: np.ndarray
    oriented: bool
    eigvals: np.ndarray

    @property
    def r1(self) -> float:
        return float(self.evr[0])


@dataclass(frozen=True)
class InterpolationProfile:
    alphas: np.ndarray
    losses: np.ndarray
    classification: str


def _blocks(sources, chunk_len, d):
    """Yield ``(K, b)`` arrays covering ``[0, d)`` in fixed REDUCTION_BLOCK pieces."""
    iters = [iter_source_chunks(s, chunk_len, d) for s in sources]
    pending: list[list[np.ndarray]] = [[] for _ in sources]
    buffered = 0
    for chunks in zip(*iters):
        for buf, c in zip(pending, chunks):
            buf.append(c)
        buffered += chunks[0].size
        while buffered >= REDUCTION_BLOCK:
            joined = [np.concatenate(buf) for buf in pending]
            yield np.stack([j[:REDUCTION_BLOCK] for j in joined])
            pending = [[j[REDUCTION_BLOCK:]] for j in joined]
            buffered -= REDUCTION_BLOCK
    if buffered:
        yield np.stack([np.concatenate(buf) for buf in pending])


def _center(block: np.ndarray) -> np.ndarray:
    k = block.shape[0]
    mean = _neumaier_weighted_sum(list(block), np.full(k, 1.0 / k))
    return block - mean


def _orient_q(q: np.ndarray) -> np.ndarray:
    # deterministic sign: projections should trend upward with the index
    trend = float(np.dot(q, np.arange(q.size) - (q.size - 1) / 2.0))
    if trend < 0 or (trend == 0 and q[np.argmax(np.abs(q))] < 0):
        return -q
    return q


def gram_pca(states: Sequence, chunk_len: int = DEFAULT_CHUNK_LEN) -> GramDecomposition:
    """Centered Gram matrix of ``states`` and its eigen-decomposition.

    ``states`` may be vectors or checkpoint records; they are streamed in
    chunks of ``chunk_len`` entries.
    """
    k = len(states)
    if k < 2:
        raise ValueError("gram_pca needs at least two states")
    d = common_dim(states)
    iu = np.triu_indices(k)
    sums = np.zeros(len(iu[0]))
    comp = np.zeros_like(sums)
    for block in _blocks(states, chunk_len, d):
        x = _center(block)
        part = np.array([np.sum(x[i] * x[j]) for i, j in zip(*iu)])
        t = sums + part
        comp += np.where(np.abs(sums) >= np.abs(part), (sums - t) + part, (part - t) + sums)
        sums = t
    g = np.zeros((k, k))
    g[iu] = sums + comp
    g = g + np.triu(g, 1).T
    w, q = jacobi_eigh(g)
    floor = -NEG_EIG_TOL * max(1.0, float(np.trace(g)))
    if w[-1] < floor:
        raise NumericalDegeneracyError(f"Gram matrix not PSD: eigenvalue {w[-1]!r}")
    w = np.maximum(w, 0.0)
    q = q.copy()
    q[:, 0] = _orient_q(q[:, 0])
    return GramDecomposition(g, w, q)


def check_dominant(decomp: GramDecomposition):
    threshold = DEGENERATE_REL * max(1.0, decomp.mean_sq_norm)
    if decomp.eigvals[0] < threshold:
        raise DegenerateSpectrumError(
            f"leading eigenvalue {decomp.eigvals[0]:.3e} below {threshold:.3e}"
        )


def top_direction(decomp: GramDecomposition, states: Sequence, chunk_len: int = DEFAULT_CHUNK_LEN) -> np.ndarray:
    """Unit principal direction ``sum_i q_i x_i / ||sum_i q_i x_i||``."""
    check_dominant(decomp)
    if len(states) != decomp.k:
        raise ValueError(f"decomposition has K={decomp.k}, got {len(states)} states")
    d = common_dim(states)
    q = decomp.q1
    u = np.empty(d)
    pos = 0
    for block in _blocks(states, chunk_len, d):
        x = _center(block)
        part = q @ x
        u[pos : pos + part.size] = part
        pos += part.size
    norm = np.linalg.norm(u)
    if not norm > 0:
        raise DegenerateSpectrumError("principal direction vanished")
    return u / norm


def evr_spectrum(decomp: GramDecomposition) -> np.ndarray:
    """Explained variance ratios ``eigval_k / sum(eigvals)``."""
    total = float(np.sum(decomp.eigvals))
    if not total > 0:
        raise DegenerateSpectrumError("all-zero spectrum: degenerate trajectory")
    return decomp.eigvals / total


def orient(u1, newest, previous) -> np.ndarray:
    """Flip ``u1`` so that it points along ``newest - previous``."""
    u1 = as_parameter_vector(u1, "direction")
    newest = as_parameter_vector(newest, "newest state")
    previous = as_parameter_vector(previous, "previous state")
    if not (u1.size == newest.size == previous.size):
        raise DimensionMismatchError(u1.size, newest.size if newest.size != u1.size else previous.size)
    s = float(np.dot(newest - previous, u1))
    if s == 0.0:
        raise OrientationUndefinedError()
    return u1 if s > 0 else -u1


def project(state, direction) -> float:
    state = as_parameter_vector(state, "state")
    direction = as_parameter_vector(direction, "direction")
    if state.size != direction.size:
        raise DimensionMismatchError(direction.size, state.size)
    return float(np.dot(state, direction))


def analyze_subspace(states: Sequence, orient_direction: bool = True,
                     chunk_len: int = DEFAULT_CHUNK_LEN) -> SubspaceResult:
    """Gram PCA, top direction, optional orientation and projections.

    ``states`` are ordered oldest to newest; orientation uses the last two.
    """
    decomp = gram_pca(states, chunk_len)
    u1 = top_direction(decomp, states, chunk_len)
    vecs = [materialize(s) for s in states]
    if orient_direction:
        u1 = orient(u1, vecs[-1], vecs[-2])
    z = np.array([project(v, u1) for v in vecs])
    return SubspaceResult(u1, evr_spectrum(decomp), z, orient_direction, decomp.eigvals)


def classify_profile(losses, rel_tol: float = CLASSIFY_REL_TOL) -> str:
    """Shape of a loss profile along a segment.

    ``convex-basin`` if some interior loss undercuts both endpoints, and
    ``monotone-decreasing`` if the loss never rises and ends lower than it
    started; the tolerance is relative to the endpoint loss span.
    """
    losses = np.asarray(losses, dtype=np.float64)
    first, last = losses[0], losses[-1]
    tol = rel_tol * abs(first - last)
    if losses.size > 2 and losses[1:-1].min() < min(first, last) - tol:
        return CONVEX_BASIN
    if last < first and np.all(np.diff(losses) <= tol):
        return MONOTONE
    return OTHER


def interpolation_scan(a, b, grid_size: int, loss_eval: Callable[[np.ndarray], float],
                       rel_tol: float = CLASSIFY_REL_TOL) -> InterpolationProfile:
    """Loss along ``(1 - alpha) a + alpha b`` on a uniform grid including both ends."""
    if grid_size < 3:
        raise ValueError("grid_size must be >= 3")
    a = as_parameter_vector(a, "endpoint a")
    b = as_parameter_vector(b, "endpoint b")
    if a.size != b.size:
        raise DimensionMismatchError(a.size, b.size)
    alphas = np.linspace(0.0, 1.0, grid_size)
    losses = np.empty(grid_size)
    for i, alpha in enumerate(alphas):
        if i == 0:
            theta = a
        elif i == grid_size - 1:
            theta = b
        else:
            theta = (1.0 - alpha) * a + alpha * b
        losses[i] = float(loss_eval(theta))
    return InterpolationProfile(alphas, losses, classify_profile(losses, rel_tol))
