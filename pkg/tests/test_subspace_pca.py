import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from extramerge.checkpoint_store import write_run
from extramerge.errors import DegenerateSpectrumError, DimensionMismatchError, OrientationUndefinedError
from extramerge.linalg import jacobi_eigh
from extramerge.subspace_pca import (
    CONVEX_BASIN,
    MONOTONE,
    OTHER,
    GramDecomposition,
    analyze_subspace,
    classify_profile,
    evr_spectrum,
    gram_pca,
    interpolation_scan,
    orient,
    project,
    top_direction,
)


def svd_direction(states):
    """Dense oracle: top left singular vector of the centered d x K matrix."""
    x = np.asarray(states, dtype=float)
    x = x - x.mean(axis=0)
    u, s, _ = np.linalg.svd(x.T, full_matrices=False)
    return u[:, 0], s**2


def test_jacobi_matches_lapack():
    rng = np.random.default_rng(1)
    for n in (1, 2, 3, 6, 17):
        a = rng.standard_normal((n, n))
        a = a + a.T
        w, v = jacobi_eigh(a)
        np.testing.assert_allclose(w, np.linalg.eigvalsh(a)[::-1], atol=1e-12)
        np.testing.assert_allclose(v.T @ v, np.eye(n), atol=1e-12)
        np.testing.assert_allclose(a @ v, v * w, atol=1e-11)


def test_jacobi_uses_symmetric_part():
    w, _ = jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))
    np.testing.assert_allclose(w, [2.0, 0.0], atol=1e-15)
    with pytest.raises(ValueError):
        jacobi_eigh(np.ones((2, 3)))


def test_symmetric_pair():
    states = [np.array([1.0, 0, 0]), np.array([-1.0, 0, 0])]
    dec = gram_pca(states)
    np.testing.assert_array_equal(dec.gram, [[1.0, -1.0], [-1.0, 1.0]])
    np.testing.assert_allclose(dec.eigvals, [2.0, 0.0], atol=1e-15)
    u = top_direction(dec, states)
    np.testing.assert_allclose(np.abs(u), [1.0, 0, 0], atol=1e-15)


def test_identical_states_degenerate():
    states = [np.array([1.0, 2.0, 3.0])] * 3
    dec = gram_pca(states)
    np.testing.assert_array_equal(dec.gram, np.zeros((3, 3)))
    np.testing.assert_array_equal(dec.eigvals, np.zeros(3))
    with pytest.raises(DegenerateSpectrumError, match="no dominant direction"):
        top_direction(dec, states)
    with pytest.raises(DegenerateSpectrumError):
        evr_spectrum(dec)


def test_three_point_dense_oracle():
    states = [np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([2.0, 1.0])]
    dec = gram_pca(states)
    x = np.array([[-1, -1 / 3], [0, -1 / 3], [1, 2 / 3]])
    np.testing.assert_allclose(dec.gram, x @ x.T, atol=1e-15)
    # non-zero spectrum equals that of the d x d scatter matrix
    scatter = np.linalg.eigvalsh(x.T @ x)[::-1]
    np.testing.assert_allclose(dec.eigvals[:2], scatter, atol=1e-14)
    assert dec.eigvals[2] == pytest.approx(0.0, abs=1e-14)
    u_ref, _ = svd_direction(states)
    assert abs(np.dot(top_direction(dec, states), u_ref)) == pytest.approx(1.0, abs=1e-14)


def test_collinear_states():
    w = np.array([1.0, -2.0, 0.5, 3.0])
    states = [i * w for i in range(5)]
    u = top_direction(gram_pca(states), states)
    assert abs(np.dot(u, w / np.linalg.norm(w))) == pytest.approx(1.0, abs=1e-14)


def test_random_against_svd():
    rng = np.random.default_rng(7)
    states = list(rng.standard_normal((5, 20)))
    u_ref, _ = svd_direction(states)
    u = top_direction(gram_pca(states), states)
    assert abs(np.dot(u, u_ref)) >= 1 - 1e-8


def test_k_lt_2_and_mismatch():
    with pytest.raises(ValueError):
        gram_pca([np.ones(3)])
    with pytest.raises(DimensionMismatchError):
        gram_pca([np.ones(3), np.ones(4)])


def test_evr_examples():
    g = np.zeros((2, 2))
    q = np.eye(2)
    assert evr_spectrum(GramDecomposition(g, np.array([2.0, 0.0]), q)).tolist() == [1.0, 0.0]
    assert evr_spectrum(GramDecomposition(g, np.array([3.0, 1.0]), q)).tolist() == [0.75, 0.25]


def test_orient_examples():
    prev = np.zeros(2)
    assert orient([1.0, 0.0], [2.0, 0.0], prev).tolist() == [1.0, 0.0]
    assert orient([1.0, 0.0], [-3.0, 1.0], prev).tolist() == [-1.0, 0.0]
    with pytest.raises(OrientationUndefinedError, match="orientation undefined"):
        orient([0.0, 1.0], [5.0, 0.0], prev)


def test_project_examples():
    assert project([3.0, 4.0], [1.0, 0.0]) == 3.0
    v = np.array([0.6, 0.8])
    assert project(v, v) == pytest.approx(1.0, abs=1e-15)
    assert project([0.0, 0.0], v) == 0.0
    with pytest.raises(DimensionMismatchError):
        project([1.0], v)


def test_interpolation_quadratic():
    prof = interpolation_scan([1.0, 0.0], [-1.0, 0.0], 5, lambda t: float(np.dot(t, t)))
    np.testing.assert_allclose(prof.losses, [1, 0.25, 0, 0.25, 1], atol=1e-15)
    assert prof.classification == CONVEX_BASIN
    assert prof.alphas.tolist() == [0, 0.25, 0.5, 0.75, 1]


def test_interpolation_linear_and_constant():
    prof = interpolation_scan([1.0], [0.0], 3, lambda t: float(t[0]))
    assert prof.losses.tolist() == [1.0, 0.5, 0.0]
    assert prof.classification == MONOTONE
    prof = interpolation_scan([2.0, 1.0], [2.0, 1.0], 4, lambda t: float(t.sum()))
    assert prof.classification == OTHER


def test_interpolation_grid_too_small():
    with pytest.raises(ValueError):
        interpolation_scan([0.0], [1.0], 2, lambda t: 0.0)


def test_classify_increasing_is_other():
    assert classify_profile([0.0, 0.5, 1.0]) == OTHER


def test_analyze_subspace_orientation_and_projections():
    w = np.array([0.0, 3.0, 4.0])
    states = [i * w + 0.01 * (-1) ** i * np.array([1.0, 0, 0]) for i in range(4)]
    sub = analyze_subspace(states)
    assert np.dot(sub.u1, w) > 0
    assert np.all(np.diff(sub.projections) > 0)
    assert sub.r1 > 0.999
    assert np.linalg.norm(sub.u1) == pytest.approx(1.0, abs=1e-12)


def test_records_and_chunking_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    d = 40000  # spans several reduction blocks
    vecs = rng.standard_normal((4, d)) + np.linspace(0, 1, 4)[:, None]
    m = write_run(vecs, [0, 1, 2, 3], tmp_path)
    ref = gram_pca(list(vecs), chunk_len=1 << 20)
    u_ref = top_direction(ref, list(vecs))
    for chunk_len in (1000, 7777, 16384):
        dec = gram_pca(list(m), chunk_len=chunk_len)
        assert dec.gram.tobytes() == ref.gram.tobytes()
        assert top_direction(dec, list(m), chunk_len).tobytes() == u_ref.tobytes()


def _instances():
    return st.tuples(st.integers(2, 6), st.integers(2, 50), st.integers(0, 2**31))


def _random_states(k, d, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((k, d)) * rng.uniform(0.1, 10, size=(1, d))


def _dominant(k, d, seed):
    x = _random_states(k, d, seed)
    _, s2 = svd_direction(x)
    return s2.size < 2 or s2[0] > 1.01 * s2[1]


@given(_instances(), st.floats(-100, 100))
def test_translation_invariance(inst, shift):
    k, d, seed = inst
    x = _random_states(k, d, seed)
    c = np.random.default_rng(seed + 1).standard_normal(d) * shift
    a, b = gram_pca(list(x)), gram_pca(list(x + c))
    scale = max(1.0, float(np.abs(a.gram).max()))
    np.testing.assert_allclose(a.gram, b.gram, atol=1e-9 * scale * (1 + abs(shift)))
    np.testing.assert_allclose(a.eigvals, b.eigvals, atol=1e-9 * scale * (1 + abs(shift)))
    if _dominant(k, d, seed):
        ua, ub = top_direction(a, list(x)), top_direction(b, list(x + c))
        assert abs(np.dot(ua, ub)) >= 1 - 1e-8


@given(_instances())
def test_rotation_equivariance(inst):
    k, d, seed = inst
    x = _random_states(k, d, seed)
    q, _ = np.linalg.qr(np.random.default_rng(seed + 2).standard_normal((d, d)))
    xr = x @ q.T
    a, b = gram_pca(list(x)), gram_pca(list(xr))
    if _dominant(k, d, seed):
        ua, ub = top_direction(a, list(x)), top_direction(b, list(xr))
        assert abs(np.dot(q @ ua, ub)) >= 1 - 1e-8


@given(_instances(), st.floats(0.01, 100))
def test_scaling(inst, s):
    k, d, seed = inst
    x = _random_states(k, d, seed)
    a, b = gram_pca(list(x)), gram_pca(list(s * x))
    np.testing.assert_allclose(b.eigvals, s * s * a.eigvals, rtol=1e-9, atol=1e-9 * s * s * a.eigvals[0])
    np.testing.assert_allclose(evr_spectrum(b), evr_spectrum(a), atol=1e-9)
    if _dominant(k, d, seed):
        assert abs(np.dot(top_direction(a, list(x)), top_direction(b, list(s * x)))) >= 1 - 1e-8


@given(_instances())
def test_gram_invariants(inst):
    k, d, seed = inst
    dec = gram_pca(list(_random_states(k, d, seed)))
    assert np.array_equal(dec.gram, dec.gram.T)
    assert np.all(dec.eigvals >= 0) and np.all(np.diff(dec.eigvals) <= 0)
    np.testing.assert_allclose(dec.eigvecs.T @ dec.eigvecs, np.eye(k), atol=1e-12)
    evr = evr_spectrum(dec)
    assert abs(evr.sum() - 1) <= 1e-9


@given(st.integers(2, 20), st.integers(0, 2**31))
def test_orientation_property(d, seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    new, old = rng.standard_normal(d), rng.standard_normal(d)
    v = orient(u, new, old)
    assert np.dot(new - old, v) >= 0


@given(st.integers(3, 15), st.integers(0, 2**31))
def test_interpolation_endpoints_exact(grid, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(4), rng.standard_normal(4)
    f = lambda t: float(np.sum(np.sin(t)))
    prof = interpolation_scan(a, b, grid, f)
    assert prof.losses[0] == f(a) and prof.losses[-1] == f(b)
    assert np.all(np.diff(prof.alphas) > 0)
