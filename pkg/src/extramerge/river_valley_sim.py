"""Synthetic river-valley landscape and SGD dynamics.

The loss is ``ell(t) + 0.5 * sum_j lambda_j z_j**2`` where ``t = v.(w - w_star)``
is the river coordinate and ``z`` are the mountain coordinates in the
eigenbasis of the mountain Hessian. SGD with a constant drift along the river
and isotropic mountain-only noise decouples into

    t[k+1] = t[k] - eta * (ell'(t[k]) + mu_F)
    z[k+1] = (1 - eta * lambda) * z[k] + eta * g[k],   g[k] ~ N(0, sigma^2 I)

so each mountain coordinate is an AR(1) process. The river is linear,
``ell(t) = ell_prime0 * t``, unless ``floor_curvature > 0`` adds a quadratic
term that gives line searches a finite minimum.

Random streams: simulation ``i`` of an experiment run with base seed ``b``
uses ``np.random.SeedSequence(b, spawn_key=(i,))`` (the ``i``-th child of
``SeedSequence(b).spawn``) driving a PCG64 generator. Each stream first draws
the stationary initial mountain state, then the per-step noise in step order.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .checkpoint_store import as_parameter_vector, write_run
from .errors import DimensionMismatchError, UnstableSpecError
from .extra_merge import LineSearchConfig, run_extra_merge
from .subspace_pca import (
    CONVEX_BASIN,
    MONOTONE,
    analyze_subspace,
    gram_pca,
    interpolation_scan,
    top_direction,
)

_NOISE_BLOCK = 1024
DK_SLACK = 1e-12


def stationary_variance(eta, lam, sigma):
    """Stationary variance ``eta sigma^2 / (2 lam - eta lam^2)`` of the AR(1) coordinate."""
    lam = np.asarray(lam, dtype=np.float64)
    el = eta * lam
    if np.any(el <= 0) or np.any(el >= 2):
        raise UnstableSpecError(f"eta*lambda must lie in (0, 2), got {el}")
    out = eta * sigma**2 / (2.0 * lam - eta * lam**2)
    return float(out) if out.ndim == 0 else out


def signal_variance(delta_t: float, K: int) -> float:
    """Population variance of ``{-s * delta_t}`` for ``s = 0..K-1``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return delta_t**2 * (K * K - 1) / 12.0


def _vec(text: str) -> np.ndarray:
    return np.array([float(x) for x in text.split(",") if x.strip()])


@dataclass(frozen=True)
class ValleySpec:
    """River-valley landscape and SGD parameters.

    ``v`` defaults to the first coordinate axis and ``w_star`` to the origin.
    The mountain eigenbasis is a random orthonormal complement of ``v``
    drawn from ``basis_seed``.
    """

    d: int
    eta: float
    sigma: float
    mu_F: float
    ell_prime0: float
    lambdas: np.ndarray
    v: np.ndarray | None = None
    w_star: np.ndarray | None = None
    floor_curvature: float = 0.0
    basis_seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be >= 2")
        lam = np.asarray(self.lambdas, dtype=np.float64)
        if lam.shape != (self.d - 1,):
            raise ValueError(f"need {self.d - 1} mountain eigenvalues, got {lam.shape}")
        if np.any(lam <= 0):
            raise ValueError("mountain eigenvalues must be positive")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.eta * lam.max() >= 2:
            raise UnstableSpecError(f"eta * max(lambda) = {self.eta * lam.max()} >= 2")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.floor_curvature < 0:
            raise ValueError("floor_curvature must be non-negative")
        v = np.eye(self.d)[0] if self.v is None else as_parameter_vector(self.v, "v").copy()
        if v.size != self.d:
            raise DimensionMismatchError(self.d, v.size)
        if abs(np.linalg.norm(v) - 1.0) > 1e-10:
            raise ValueError("v must have unit norm")
        w = np.zeros(self.d) if self.w_star is None else as_parameter_vector(self.w_star, "w_star").copy()
        if w.size != self.d:
            raise DimensionMismatchError(self.d, w.size)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w_star", w)

    @property
    def m(self) -> int:
        return self.d - 1

    @property
    def drift(self) -> float:
        """Per-step river speed ``ell_prime0 + mu_F`` (at ``t = 0``)."""
        return self.ell_prime0 + self.mu_F

    def delta_t(self, T: int) -> float:
        """River progress between checkpoints ``T`` steps apart."""
        return T * self.eta * self.drift

    def epsilon(self, T: int) -> float:
        return float(np.max(np.abs(1.0 - self.eta * self.lambdas)) ** T)

    @cached_property
    def stationary_variances(self) -> np.ndarray:
        return stationary_variance(self.eta, self.lambdas, self.sigma)

    @cached_property
    def mountain_basis(self) -> np.ndarray:
        """``(d, d-1)`` orthonormal columns spanning the complement of ``v``."""
        rng = np.random.default_rng(self.basis_seed)
        a = rng.standard_normal((self.d, self.d))
        a[:, 0] = self.v
        q, r = np.linalg.qr(a)
        q = q * np.sign(np.diag(r))
        basis = q[:, 1:]
        # remove the rounding-level leak onto v
        basis -= np.outer(self.v, self.v @ basis)
        basis, _ = np.linalg.qr(basis)
        return basis

    def river_loss(self, t):
        return self.ell_prime0 * t + self.floor_curvature * np.square(t)

    def river_grad(self, t):
        return self.ell_prime0 + 2.0 * self.floor_curvature * t

    def embed(self, t, z) -> np.ndarray:
        """Full-space states ``w_star + t v + Q z`` (batched over leading axes)."""
        t = np.asarray(t, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        return self.w_star + t[..., None] * self.v + z @ self.mountain_basis.T

    def coords(self, w):
        """River and mountain coordinates of full-space state(s) ``w``."""
        x = np.asarray(w, dtype=np.float64) - self.w_star
        return x @ self.v, x @ self.mountain_basis

    def with_drift(self, drift: float) -> "ValleySpec":
        """Same landscape with river speed ``drift``, keeping the gradient/drift split."""
        if self.drift > 0:
            frac = self.ell_prime0 / self.drift
        else:
            frac = 0.5
        return replace(self, ell_prime0=frac * drift, mu_F=(1.0 - frac) * drift)

    def to_text(self) -> str:
        items = {
            "d": self.d,
            "eta": repr(self.eta),
            "sigma": repr(self.sigma),
            "mu_F": repr(self.mu_F),
            "ell_prime0": repr(self.ell_prime0),
            "floor_curvature": repr(self.floor_curvature),
            "basis_seed": self.basis_seed,
            "lambdas": ",".join(repr(float(x)) for x in self.lambdas),
            "v": ",".join(repr(float(x)) for x in self.v),
            "w_star": ",".join(repr(float(x)) for x in self.w_star),
        }
        return "".join(f"{k}={v}\n" for k, v in items.items())

    @classmethod
    def from_text(cls, text: str) -> "ValleySpec":
        kv = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"expected key=value, got {line!r}")
            kv[key.strip()] = value.strip()
        known = {"d", "eta", "sigma", "mu_F", "ell_prime0", "floor_curvature",
                 "basis_seed", "lambdas", "v", "w_star"}
        unknown = set(kv) - known
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        lam = _vec(kv["lambdas"])
        d = int(kv.get("d", lam.size + 1))
        return cls(
            d=d,
            eta=float(kv["eta"]),
            sigma=float(kv["sigma"]),
            mu_F=float(kv.get("mu_F", 0.0)),
            ell_prime0=float(kv.get("ell_prime0", 0.0)),
            lambdas=lam,
            v=_vec(kv["v"]) if "v" in kv else None,
            w_star=_vec(kv["w_star"]) if "w_star" in kv else None,
            floor_curvature=float(kv.get("floor_curvature", 0.0)),
            basis_seed=int(kv.get("basis_seed", 0)),
        )

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ValleySpec":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- closed forms


def _window_factor(a, N: int, T: int):
    r = np.arange(1, N)
    powers = np.power.outer(np.asarray(a, dtype=np.float64), r * T)
    return (N + 2.0 * np.sum((N - r) * powers, axis=-1)) / N**2


def exact_avg_deviation(spec: ValleySpec, N: int, T: int) -> float:
    """Expected squared river deviation of the mean of ``N`` stationary checkpoints ``T`` apart."""
    if N < 1 or T < 1:
        raise ValueError("N and T must be >= 1")
    a = 1.0 - spec.eta * spec.lambdas
    return float(np.sum(spec.stationary_variances * _window_factor(a, N, T)))


def bound_avg_deviation(spec: ValleySpec, N: int, T: int) -> tuple[float, float]:
    """``(bound, epsilon)`` with ``bound = (1/N)(1 + 2 eps / (1 - eps)) sum_j var_j``."""
    if N < 1 or T < 1:
        raise ValueError("N and T must be >= 1")
    eps = spec.epsilon(T)
    if eps >= 1.0:
        raise UnstableSpecError(f"epsilon = {eps} >= 1")
    total = float(np.sum(spec.stationary_variances))
    return (1.0 + 2.0 * eps / (1.0 - eps)) * total / N, eps


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else float("inf")


def snr_theory(spec: ValleySpec, N: int, T: int, K: int) -> float:
    """Signal variance over the expected merged deviation (the closed-form SNR)."""
    return _ratio(signal_variance(spec.delta_t(T), K), exact_avg_deviation(spec, N, T))


def drift_for_snr(spec: ValleySpec, rho: float, N: int, T: int, K: int) -> float:
    """River speed giving ``snr_theory == rho`` for this landscape."""
    if K < 2:
        raise ValueError("K must be >= 2 for a non-zero signal")
    noise = exact_avg_deviation(spec, N, T)
    delta_t = np.sqrt(12.0 * rho * noise / (K * K - 1))
    return float(delta_t / (T * spec.eta))


def default_spec() -> ValleySpec:
    """d = 21, lambda log-spaced in [0.5, 5], eta = 0.1, sigma = 1.

    River speed tuned so that N = 8, K = 4, T = 25 gives a closed-form SNR of 4,
    split evenly between the river gradient and the extra drift.
    """
    base = ValleySpec(d=21, eta=0.1, sigma=1.0, mu_F=0.0, ell_prime0=0.0,
                      lambdas=np.geomspace(0.5, 5.0, 20))
    return base.with_drift(drift_for_snr(base, 4.0, N=8, T=25, K=4))


HIGH_NOISE_T = 100


def high_noise_spec() -> ValleySpec:
    """Default landscape with a slow river; checkpoints ``HIGH_NOISE_T`` apart are nearly independent."""
    base = default_spec()
    return replace(base, ell_prime0=0.1, mu_F=0.1)


# ------------------------------------------------------------------ simulation


@dataclass
class Trajectory:
    """Recorded states ``k = 0, every, 2 every, ...`` of one simulation."""

    river_coords: np.ndarray
    mountain_coords: np.ndarray
    seed: int
    every: int = 1

    def __len__(self):
        return self.river_coords.size

    @property
    def steps(self) -> np.ndarray:
        return np.arange(len(self)) * self.every

    def states(self, spec: ValleySpec) -> np.ndarray:
        return spec.embed(self.river_coords, self.mountain_coords)


def seed_sequences(seed: int, n: int) -> list[np.random.SeedSequence]:
    return [np.random.SeedSequence(seed, spawn_key=(i,)) for i in range(n)]


def _river_path(spec: ValleySpec, steps: int, every: int) -> np.ndarray:
    ks = np.arange(0, steps + 1, every)
    if spec.floor_curvature == 0.0:
        return -ks * (spec.eta * spec.drift)
    t = np.empty(steps + 1)
    t[0] = 0.0
    for k in range(steps):
        t[k + 1] = t[k] - spec.eta * (spec.river_grad(t[k]) + spec.mu_F)
    return t[ks]


def _simulate_batch(spec: ValleySpec, steps: int, seqs: Sequence[np.random.SeedSequence],
                    every: int = 1):
    """River path ``(R,)`` and mountain states ``(S, R, d-1)`` at steps ``0, every, ...``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if every < 1 or steps % every:
        raise ValueError("every must divide steps")
    rngs = [np.random.Generator(np.random.PCG64(s)) for s in seqs]
    sd = np.sqrt(spec.stationary_variances)
    z = np.stack([rng.standard_normal(spec.m) for rng in rngs]) * sd
    a = 1.0 - spec.eta * spec.lambdas
    scale = spec.eta * spec.sigma
    n_rec = steps // every + 1
    out = np.empty((len(rngs), n_rec, spec.m))
    out[:, 0] = z
    k = 0
    while k < steps:
        b = min(_NOISE_BLOCK, steps - k)
        g = np.stack([rng.standard_normal((b, spec.m)) for rng in rngs], axis=1)
        for i in range(b):
            z = a * z + scale * g[i]
            k += 1
            if k % every == 0:
                out[:, k // every] = z
    return _river_path(spec, steps, every), out


def simulate(spec: ValleySpec, steps: int, seed: int, every: int = 1) -> Trajectory:
    """One SGD run of ``steps`` steps from the stationary mountain distribution, ``t0 = 0``."""
    t, z = _simulate_batch(spec, steps, [np.random.SeedSequence(seed)], every)
    return Trajectory(t, z[0], seed, every)


def simulate_checkpoints(spec: ValleySpec, count: int, T: int, n_seeds: int, seed: int = 0):
    """``count`` checkpoints spaced ``T`` for each of ``n_seeds`` replicate streams.

    Returns the river coordinates ``(count,)`` and mountain coordinates
    ``(n_seeds, count, d-1)``.
    """
    if count == 1:
        # a single stationary draw; still consume one step so the stream layout matches
        t, z = _simulate_batch(spec, T, seed_sequences(seed, n_seeds), T)
        return t[:1], z[:, :1]
    return _simulate_batch(spec, (count - 1) * T, seed_sequences(seed, n_seeds), T)


def write_trajectory_checkpoints(spec: ValleySpec, traj: Trajectory, directory):
    """Write full-space states of ``traj`` as a checkpoint run (step = SGD iteration)."""
    return write_run(traj.states(spec), traj.steps, directory)


def valley_loss(spec: ValleySpec, w) -> float:
    w = as_parameter_vector(w, "parameters")
    if w.size != spec.d:
        raise DimensionMismatchError(spec.d, w.size)
    t, z = spec.coords(w)
    return float(spec.river_loss(t) + 0.5 * np.sum(spec.lambdas * z * z))


class ValleyOracle:
    """Loss oracle bound to one landscape."""

    def __init__(self, spec: ValleySpec):
        self.spec = spec

    def __call__(self, w) -> float:
        return valley_loss(self.spec, w)


def river_deviation_sq(z) -> np.ndarray:
    """``D(w)^2`` from mountain coordinates (last axis)."""
    return np.sum(np.square(z), axis=-1)


# ----------------------------------------------------------------- experiments


@dataclass
class MonteCarloEstimate:
    mean: float
    stderr: float
    n_seeds: int


def _estimate(samples) -> MonteCarloEstimate:
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.size
    se = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return MonteCarloEstimate(float(np.mean(samples)), se, n)


def monte_carlo_avg_deviation(spec: ValleySpec, N: int, T: int, n_seeds: int,
                              seed: int = 0) -> MonteCarloEstimate:
    """Seed-mean of ``D(mean of N checkpoints T apart)^2`` with its standard error."""
    if n_seeds < 100:
        raise ValueError("n_seeds must be >= 100")
    _, z = simulate_checkpoints(spec, N, T, n_seeds, seed)
    return _estimate(river_deviation_sq(z.mean(axis=1)))


def theorem1_grid(spec: ValleySpec, Ns: Iterable[int], Ts: Iterable[int], n_seeds: int,
                  seed: int = 0) -> list[dict]:
    """Monte-Carlo vs exact vs bound for every ``(N, T)`` cell.

    Per ``T`` one batch of ``max(N)`` checkpoints is simulated; the cell for
    ``N`` averages its first ``N`` checkpoints, which is exactly what
    :func:`monte_carlo_avg_deviation` would compute with the same seed.
    """
    Ns = sorted(set(Ns))
    rows = []
    for T in Ts:
        _, z = simulate_checkpoints(spec, max(Ns), T, n_seeds, seed)
        for N in Ns:
            est = _estimate(river_deviation_sq(z[:, :N].mean(axis=1)))
            exact = exact_avg_deviation(spec, N, T)
            bound, eps = bound_avg_deviation(spec, N, T)
            rows.append(dict(N=N, T=T, empirical=est.mean, stderr=est.stderr, exact=exact,
                             bound=bound, epsilon=eps,
                             z_score=(est.mean - exact) / est.stderr if est.stderr > 0 else 0.0))
    return rows


def _sliding_means(x, N: int, K: int, axis: int):
    """Means of windows ``[s, s + N)`` for ``s = 0..K-1`` along ``axis``."""
    x = np.moveaxis(x, axis, 0)
    out = np.stack([x[s : s + N].mean(axis=0) for s in range(K)])
    return np.moveaxis(out, 0, axis)


def centered_noise_covariance(spec: ValleySpec, N: int, T: int, K: int) -> np.ndarray:
    """Diagonal (mountain eigenbasis) of ``(1/K) sum_s E[e_s e_s^T]`` for centered merged noise."""
    J = np.eye(K) - 1.0 / K
    a = 1.0 - spec.eta * spec.lambdas
    lags = np.abs(np.arange(N + K - 1)[:, None] - np.arange(N + K - 1)[None, :])
    diag = np.empty(spec.m)
    for j, (aj, vj) in enumerate(zip(a, spec.stationary_variances)):
        raw_cov = vj * np.power(aj, lags * T)
        # window averaging operator: merged_s = (1/N) sum_{i<N} raw_{s+i}
        A = np.zeros((K, N + K - 1))
        for s in range(K):
            A[s, s : s + N] = 1.0 / N
        c = A @ raw_cov @ A.T
        diag[j] = np.trace(J @ c @ J) / K
    return diag


@dataclass
class SimStats:
    """Aggregated alignment experiment; ``per_seed`` holds the raw arrays."""

    empirical_avg_dev_sq: float
    exact_avg_dev_sq: float
    bound_avg_dev_sq: float
    epsilon: float
    sin_angle: float
    dk_bound: float
    snr: float
    n_seeds: int
    snr_theory: float = float("nan")
    sigma_sig2: float = float("nan")
    sigma_noise2: float = float("nan")
    noise_trace: float = float("nan")
    gap: float = float("nan")
    dk_holds_fraction: float = float("nan")
    n_gap_positive: int = 0
    per_seed: dict = field(default_factory=dict, repr=False)


def _merged_batch(spec, N, T, K, n_seeds, seed):
    t, z = simulate_checkpoints(spec, N + K - 1, T, n_seeds, seed)
    return _sliding_means(t, N, K, 0), _sliding_means(z, N, K, 1), t, z


def measure_snr(spec: ValleySpec, N: int, T: int, K: int, n_seeds: int, seed: int = 0) -> dict:
    """Measured signal variance, merged deviation and their ratio."""
    tbar, zbar, _, _ = _merged_batch(spec, N, T, K, n_seeds, seed)
    sig = float(np.mean(np.square(tbar - tbar.mean())))
    dev = _estimate(river_deviation_sq(zbar).mean(axis=1))
    return dict(N=N, T=T, K=K, signal=sig, noise=dev.mean, noise_se=dev.stderr,
                rho=_ratio(sig, dev.mean), rho_theory=snr_theory(spec, N, T, K))


def pca_alignment_experiment(spec: ValleySpec, N: int, T: int, K: int, n_seeds: int,
                             seed: int = 0) -> SimStats:
    """PCA of ``K`` sliding merges per seed against the known river direction.

    For every seed the Davis-Kahan form ``|u.v|^2 >= 1 - (||S_hat - S|| / gap)^2``
    is checked, where ``S_hat`` is the sample covariance (``1/K``) of the
    centered merged states and ``S = sig2 v v^T + Sigma_noise`` is built from
    the known river direction, the signal variance and the exact centered
    mountain covariance.
    """
    if spec.drift <= 0:
        raise ValueError("alignment needs a positive river drift")
    tbar, zbar, _, _ = _merged_batch(spec, N, T, K, n_seeds, seed)
    t_c = tbar - tbar.mean()
    sig2 = float(np.mean(t_c**2))
    noise_diag = centered_noise_covariance(spec, N, T, K)
    Q = spec.mountain_basis
    v = spec.v
    sigma_pop = sig2 * np.outer(v, v) + (Q * noise_diag) @ Q.T
    sigma_noise2 = float(noise_diag.max())
    gap = sig2 - sigma_noise2

    sin = np.empty(n_seeds)
    cos2 = np.empty(n_seeds)
    err = np.empty(n_seeds)
    dk = np.full(n_seeds, np.nan)
    holds = np.zeros(n_seeds, dtype=bool)
    dev = river_deviation_sq(zbar).mean(axis=1)
    for i in range(n_seeds):
        states = spec.embed(tbar, zbar[i])
        decomp = gram_pca(list(states))
        u = top_direction(decomp, list(states))
        c2 = min(1.0, float(np.dot(u, v)) ** 2)
        cos2[i] = c2
        sin[i] = np.sqrt(1.0 - c2)
        x = states - states.mean(axis=0)
        sigma_hat = x.T @ x / K
        err[i] = float(np.max(np.abs(np.linalg.eigvalsh(sigma_hat - sigma_pop))))
        if gap > 0:
            dk[i] = err[i] / gap
            holds[i] = c2 >= 1.0 - dk[i] ** 2 - DK_SLACK
    bound, eps = bound_avg_deviation(spec, N, T)
    noise_emp = float(np.mean(dev))
    return SimStats(
        empirical_avg_dev_sq=noise_emp,
        exact_avg_dev_sq=exact_avg_deviation(spec, N, T),
        bound_avg_dev_sq=bound,
        epsilon=eps,
        sin_angle=float(np.mean(sin)),
        dk_bound=float(np.nanmean(dk)) if gap > 0 else float("nan"),
        snr=_ratio(sig2, noise_emp),
        n_seeds=n_seeds,
        snr_theory=snr_theory(spec, N, T, K),
        sigma_sig2=sig2,
        sigma_noise2=sigma_noise2,
        noise_trace=float(noise_diag.sum()),
        gap=gap,
        dk_holds_fraction=float(np.mean(holds[~np.isnan(dk)])) if gap > 0 else float("nan"),
        n_gap_positive=n_seeds if gap > 0 else 0,
        per_seed=dict(sin_angle=sin, cos2=cos2, op_error=err, dk_ratio=dk, dk_holds=holds,
                      avg_dev_sq=dev),
    )


def _strictly_monotone(z) -> bool:
    dz = np.diff(z)
    return bool(np.all(dz > 0) or np.all(dz < 0))


def rank1_experiment(spec: ValleySpec, N: int, K: int, T: int, n_seeds: int, seed: int = 0) -> dict:
    """Leading EVR and projection monotonicity of merged vs raw trajectories.

    Both use the same run: the raw trajectory is the last ``K`` checkpoints,
    the merged one the ``K`` sliding windows of ``N`` ending at the same step.
    """
    tbar, zbar, t, z = _merged_batch(spec, N, T, K, n_seeds, seed)
    out = {key: np.empty(n_seeds) for key in ("r1_merged", "r1_raw")}
    out["mono_merged"] = np.zeros(n_seeds, dtype=bool)
    out["mono_raw"] = np.zeros(n_seeds, dtype=bool)
    for i in range(n_seeds):
        merged = list(spec.embed(tbar, zbar[i]))
        raw = list(spec.embed(t[-K:], z[i, -K:]))
        sm = analyze_subspace(merged)
        sr = analyze_subspace(raw)
        out["r1_merged"][i] = sm.r1
        out["r1_raw"][i] = sr.r1
        out["mono_merged"][i] = _strictly_monotone(sm.projections)
        out["mono_raw"][i] = _strictly_monotone(sr.projections)
    return out


def interpolation_experiment(spec: ValleySpec, N: int, T: int, n_seeds: int,
                             grid_size: int = 21, seed: int = 0) -> dict:
    """Shape of the loss between consecutive raw and consecutive merged checkpoints."""
    tbar, zbar, t, z = _merged_batch(spec, N, T, 2, n_seeds, seed)
    oracle = ValleyOracle(spec)
    raw_cls, merged_cls = [], []
    for i in range(n_seeds):
        ra, rb = spec.embed(t[-2:], z[i, -2:])
        ma, mb = spec.embed(tbar, zbar[i])
        raw_cls.append(interpolation_scan(ra, rb, grid_size, oracle).classification)
        merged_cls.append(interpolation_scan(ma, mb, grid_size, oracle).classification)
    raw_cls = np.array(raw_cls)
    merged_cls = np.array(merged_cls)
    return dict(raw=raw_cls, merged=merged_cls,
                raw_convex_fraction=float(np.mean(raw_cls == CONVEX_BASIN)),
                merged_monotone_fraction=float(np.mean(merged_cls == MONOTONE)))


def extra_merge_experiment(spec: ValleySpec, N: int, K: int, T: int, n_seeds: int,
                           config: LineSearchConfig | None = None, seed: int = 0,
                           workdir=None) -> dict:
    """Run the full manifest-based pipeline on simulated checkpoints, once per seed."""
    config = config or LineSearchConfig()
    count = N + K - 1
    t, z = simulate_checkpoints(spec, count, T, n_seeds, seed)
    oracle = ValleyOracle(spec)
    anchor = np.empty(n_seeds)
    best = np.empty(n_seeds)
    best_k = np.empty(n_seeds, dtype=int)
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        for i in range(n_seeds):
            manifest = write_run(spec.embed(t, z[i]), np.arange(count) * T, Path(tmp) / f"seed{i}")
            res, _ = run_extra_merge(manifest, T, N, K, config, oracle)
            anchor[i], best[i], best_k[i] = res.anchor_loss, res.best_loss, res.best_k
    return dict(anchor_loss=anchor, best_loss=best, best_k=best_k,
                never_worse_fraction=float(np.mean(best <= anchor)),
                improved_fraction=float(np.mean(best < anchor)))
