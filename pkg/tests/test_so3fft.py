import numpy as np
import pytest
import scipy.integrate
from hypothesis import given, settings
from hypothesis import strategies as st

from so3net.errors import BandLimitError, GridMismatchError
from so3net.signals import EulerGrid, QuadratureGrid, SpatialSignalSO3, SpectralSignal, coefficient_column, haar_inner, ragged_index
from so3net.so3fft import (
    FftPlan,
    analyze,
    analyze_adjoint,
    analyze_column,
    analyze_column_adjoint,
    analyze_column_sphere,
    beta_weights,
    evaluate,
    fill_poles,
    ft_direct,
    ft_fast,
    ift_direct,
    ift_fast,
    synthesize,
    synthesize_adjoint,
    synthesize_column_sphere,
    synthesize_column_sphere_adjoint,
)
from so3net.wigner import wigner_D


def rand_signal(rng, L, shape=()):
    n = SpectralSignal.zeros(L).coeffs.size
    return SpectralSignal(L, rng.standard_normal(shape + (n,)) + 1j * rng.standard_normal(shape + (n,)))


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def cdot(a, b):
    return np.vdot(b, a)  # <a, b> = sum a conj(b)


# --- beta weights ------------------------------------------------------------


def test_beta_weight_k0():
    assert beta_weights(0)[0] == pytest.approx(1 / np.pi, abs=1e-16)


def test_beta_weights_conjugate_symmetric():
    w = beta_weights(20)
    np.testing.assert_allclose(w[::-1], np.conj(w), atol=1e-16)


def test_beta_weights_match_adaptive_quadrature():
    K = 50
    w = beta_weights(K)
    for k in range(-K, K + 1):
        re = scipy.integrate.quad(lambda b: np.cos(k * b) * np.sin(b), 0, np.pi, limit=200, epsabs=1e-14)[0]
        im = scipy.integrate.quad(lambda b: np.sin(k * b) * np.sin(b), 0, np.pi, limit=200, epsabs=1e-14)[0]
        assert abs(w[K + k] - (re + 1j * im) / (2 * np.pi)) <= 1e-12


def test_beta_weights_negative():
    with pytest.raises(ValueError):
        beta_weights(-1)


# --- direct route ------------------------------------------------------------


def test_ft_direct_constant():
    grid = EulerGrid.for_bandlimit(3)
    x = ft_direct(SpatialSignalSO3(grid, np.full(grid.shape, 2.5 - 1j)), 3)
    assert x.coeffs[0] == pytest.approx(2.5 - 1j, abs=1e-13)
    assert np.abs(x.coeffs[1:]).max() <= 1e-13


@pytest.mark.parametrize("l,m,n", [(1, 0, -1), (2, 1, 2), (3, -2, 0)])
def test_ft_direct_of_wigner_entry(l, m, n):
    L = 3
    grid = EulerGrid.for_bandlimit(L)
    aa, bb, gg = np.meshgrid(grid.alpha, grid.beta, grid.gamma, indexing="ij")
    vals = np.array([wigner_D(l, a, b, g, method="expm")[m + l, n + l] for a, b, g in zip(aa.ravel(), bb.ravel(), gg.ravel())])
    x = ft_direct(SpatialSignalSO3(grid, vals.reshape(grid.shape)), L)
    dense = x.dense()
    assert dense[l, -m + L, -n + L] == pytest.approx(1.0, abs=1e-12)
    dense[l, -m + L, -n + L] = 0
    assert np.abs(dense).max() <= 1e-12


def test_ft_direct_inverts_ift_direct_l12():
    L = 12
    rng = np.random.default_rng(0)
    x = rand_signal(rng, L)
    grid = EulerGrid.for_bandlimit(L)
    assert rel(ft_direct(ift_direct(x, grid), L).coeffs, x.coeffs) <= 1e-10


def test_ft_direct_rejects_coarse_grid():
    with pytest.raises(BandLimitError):
        ft_direct(SpatialSignalSO3(EulerGrid(4, 5, 4), np.zeros((4, 5, 4))), 3)


def test_ift_direct_zero_and_constant():
    grid = EulerGrid.for_bandlimit(2)
    assert np.all(ift_direct(SpectralSignal.zeros(2), grid).samples == 0)
    x = SpectralSignal.zeros(2)
    x.coeffs[0] = 3.0
    np.testing.assert_allclose(ift_direct(x, grid).samples, 3.0, atol=1e-14)


def test_ift_direct_single_coefficient():
    # xhat at (l, m, n) = (1, 0, -1) multiplies D^1_{0, 1}
    grid = EulerGrid.for_bandlimit(2)
    x = SpectralSignal.zeros(1)
    x.coeffs[1 + 1 * 3 + 0] = 1.0  # degree-1 block, row m = 0, col n = -1
    s = ift_direct(x, grid).samples
    aa, bb, gg = np.meshgrid(grid.alpha, grid.beta, grid.gamma, indexing="ij")
    ref = np.array([wigner_D(1, a, b, g)[1, 2] for a, b, g in zip(aa.ravel(), bb.ravel(), gg.ravel())])
    assert np.abs(s.ravel() - ref).max() <= 1e-13


def test_evaluate_matches_ift_direct():
    rng = np.random.default_rng(1)
    x = rand_signal(rng, 5)
    grid = EulerGrid.for_bandlimit(5)
    aa, bb, gg = np.meshgrid(grid.alpha, grid.beta, grid.gamma, indexing="ij")
    np.testing.assert_allclose(evaluate(x, aa, bb, gg), ift_direct(x, grid).samples, atol=1e-11)


# --- fast route --------------------------------------------------------------


def test_ft_fast_zero():
    plan = FftPlan(4)
    assert np.all(ft_fast(SpatialSignalSO3(plan.grid, np.zeros(plan.grid.shape)), plan).coeffs == 0)


def test_ift_fast_constant():
    plan = FftPlan(3)
    x = SpectralSignal.zeros(3)
    x.coeffs[0] = 1.0
    np.testing.assert_allclose(ift_fast(x, plan).samples, 1.0, atol=1e-14)


@pytest.mark.parametrize("L", [0, 1, 2, 5, 12, 16])
def test_fast_round_trip(L):
    plan = FftPlan(L)
    x = rand_signal(np.random.default_rng(L), L)
    assert rel(ft_fast(ift_fast(x, plan), plan).coeffs, x.coeffs) <= 1e-9


def test_fast_matches_direct_analysis():
    L = 12
    plan = FftPlan(L)
    rng = np.random.default_rng(2)
    for _ in range(5):
        s = ift_fast(rand_signal(rng, L), plan)
        assert rel(ft_fast(s, plan).coeffs, ft_direct(s, L).coeffs) <= 1e-9


def test_ift_fast_matches_ift_direct_l8():
    L = 8
    plan = FftPlan(L)
    x = rand_signal(np.random.default_rng(3), L)
    assert np.abs(ift_fast(x, plan).samples - ift_direct(x, plan.grid).samples).max() <= 1e-10


@pytest.mark.parametrize("oversample", [2, 3])
def test_fast_round_trip_oversampled(oversample):
    L = 6
    plan = FftPlan(L, EulerGrid.for_bandlimit(L, oversample))
    x = rand_signal(np.random.default_rng(4), L)
    assert rel(ft_fast(ift_fast(x, plan), plan).coeffs, x.coeffs) <= 1e-12


def test_batched_transform():
    L = 3
    plan = FftPlan(L)
    x = rand_signal(np.random.default_rng(5), L, (2, 3))
    s = ift_fast(x, plan)
    assert s.samples.shape == (2, 3) + plan.grid.shape
    np.testing.assert_allclose(s.samples[1, 2], ift_fast(SpectralSignal(L, x.coeffs[1, 2]), plan).samples, atol=1e-13)


def test_ift_fast_pads_lower_band_limit():
    plan = FftPlan(5)
    x = rand_signal(np.random.default_rng(6), 3)
    y = ft_fast(ift_fast(x, plan), plan)
    np.testing.assert_allclose(y.coeffs[: x.coeffs.size], x.coeffs, atol=1e-12)
    assert np.abs(y.coeffs[x.coeffs.size :]).max() <= 1e-12


def test_plan_errors():
    plan = FftPlan(3)
    with pytest.raises(GridMismatchError):
        ft_fast(SpatialSignalSO3(EulerGrid(10, 11, 10), np.zeros((10, 11, 10))), plan)
    with pytest.raises(BandLimitError):
        ift_fast(rand_signal(np.random.default_rng(0), 4), plan)
    with pytest.raises(GridMismatchError):
        FftPlan(2, EulerGrid(7, 8, 7))


def test_subspace_preserved():
    # a signal in X_1 has all its weight in coefficient column n = -1
    L = 6
    plan = FftPlan(L)
    rng = np.random.default_rng(7)
    col = rng.standard_normal((L + 1, 2 * L + 1)) + 1j * rng.standard_normal((L + 1, 2 * L + 1))
    x = SpectralSignal.from_column(col, coefficient_column(1))
    s = ift_fast(x, plan).samples
    # check the right-action eigencharacter on grid nodes first
    g = plan.grid.gamma
    np.testing.assert_allclose(np.roll(s, -1, axis=2), np.exp(-1j * g[1]) * s, atol=1e-12)
    y = ft_fast(SpatialSignalSO3(plan.grid, s), plan)
    assert y.off_column_residue(1) <= 1e-10


def test_zero_extension_quadrature_aliases():
    L = 8
    x = rand_signal(np.random.default_rng(8), L)
    errs = []
    for f in (1, 2, 4):
        plan = FftPlan(L, EulerGrid.for_bandlimit(L, f))
        s = ift_fast(x, plan)
        assert rel(ft_fast(s, plan).coeffs, x.coeffs) <= 1e-12
        errs.append(rel(ft_fast(s, plan, beta_quadrature="zero_extension").coeffs, x.coeffs))
    assert errs[0] > 1e-3
    assert errs[0] > errs[1] > errs[2]


# --- properties --------------------------------------------------------------


def test_parseval():
    L = 5
    x = rand_signal(np.random.default_rng(9), L)
    q = QuadratureGrid.for_bandlimit(L)
    s = ift_direct(x, q)
    assert haar_inner(q, s, s).real == pytest.approx(x.norm() ** 2, rel=1e-8)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), a=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_linearity(seed, a):
    L = 4
    plan = FftPlan(L)
    rng = np.random.default_rng(seed)
    x, y = rand_signal(rng, L), rand_signal(rng, L)
    lhs = ift_fast(SpectralSignal(L, a * x.coeffs + y.coeffs), plan).samples
    rhs = a * ift_fast(x, plan).samples + ift_fast(y, plan).samples
    assert np.abs(lhs - rhs).max() <= 1e-11 * (1 + abs(a)) * np.abs(rhs).max()


def conjugation_sign(L):
    # brute force: transform conj(x) and compare with conj of the reflected coefficients
    plan = FftPlan(L)
    x = rand_signal(np.random.default_rng(10), L)
    y = ft_fast(SpatialSignalSO3(plan.grid, np.conj(ift_fast(x, plan).samples)), plan)
    X, Y = x.dense(), y.dense()
    return Y / np.where(X == 0, 1, np.conj(X[:, ::-1, ::-1]))


def test_conjugation_rule_fitted_at_l4():
    L = 4
    r = conjugation_sign(L)
    k = np.arange(-L, L + 1)
    frozen = (-1.0) ** (k[:, None] + k[None, :])
    mask = np.abs(k)[None, :, None] <= np.arange(L + 1)[:, None, None]
    mask = mask & (np.abs(k)[None, None, :] <= np.arange(L + 1)[:, None, None])
    np.testing.assert_allclose(r[mask], np.broadcast_to(frozen, r.shape)[mask], atol=1e-10)


@pytest.mark.parametrize("L", [2, 6, 10])
def test_real_scalar_reality_constraint(L):
    # real band-limited X_0 signal: xhat^l_{m,0} = (-1)^m conj(xhat^l_{-m,0})
    plan = FftPlan(L)
    rng = np.random.default_rng(L)
    x = SpectralSignal.from_column(rand_signal(rng, L).column(0), 0)
    s = ift_fast(x, plan).samples.real
    col = ft_fast(SpatialSignalSO3(plan.grid, s), plan).column(0)
    k = np.arange(-L, L + 1)
    assert np.abs(col - (-1.0) ** k * np.conj(col[:, ::-1])).max() <= 1e-12


# --- adjoints and column transforms ------------------------------------------


def test_synthesize_adjoint():
    L = 4
    plan = FftPlan(L, EulerGrid.for_bandlimit(L, 2))
    rng = np.random.default_rng(11)
    X = rand_signal(rng, L, (2,)).dense()
    g = rng.standard_normal((2,) + plan.grid.shape) + 1j * rng.standard_normal((2,) + plan.grid.shape)
    lhs, rhs = cdot(synthesize(plan, X), g), cdot(X, synthesize_adjoint(plan, g))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_analyze_adjoint():
    L = 4
    plan = FftPlan(L, EulerGrid.for_bandlimit(L, 2))
    rng = np.random.default_rng(12)
    x = rng.standard_normal(plan.grid.shape) + 1j * rng.standard_normal(plan.grid.shape)
    G = rand_signal(rng, L).dense()
    lhs, rhs = cdot(analyze(plan, x), G), cdot(x, analyze_adjoint(plan, G))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


@pytest.mark.parametrize("n", [-1, 0, 1])
def test_column_adjoints(n):
    L = 5
    plan = FftPlan(L, EulerGrid.for_bandlimit(L, 2))
    rng = np.random.default_rng(13 + n)
    na, nb, ng = plan.grid.shape
    X = (rng.standard_normal((3, L + 1, 2 * L + 1)) + 1j * rng.standard_normal((3, L + 1, 2 * L + 1))) * (
        np.abs(np.arange(-L, L + 1))[None, :] <= np.arange(L + 1)[:, None]
    )
    w = rng.standard_normal((3, na, nb)) + 1j * rng.standard_normal((3, na, nb))
    x = rng.standard_normal((3, na, nb, ng)) + 1j * rng.standard_normal((3, na, nb, ng))
    lhs, rhs = cdot(synthesize_column_sphere(plan, X, n), w), cdot(X, synthesize_column_sphere_adjoint(plan, w, n))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)
    lhs, rhs = cdot(analyze_column(plan, x, n), X), cdot(x, analyze_column_adjoint(plan, X, n))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_column_route_matches_full_transform():
    L = 5
    plan = FftPlan(L)
    rng = np.random.default_rng(14)
    x = rng.standard_normal(plan.grid.shape) + 1j * rng.standard_normal(plan.grid.shape)
    full = analyze(plan, x)
    for n in (-1, 0, 2):
        np.testing.assert_allclose(analyze_column(plan, x, n), full[:, :, n + L], atol=1e-12)


def test_fill_poles_recovers_band_limited_values():
    L = 6
    plan = FftPlan(L, EulerGrid(16, 16, 16))
    rng = np.random.default_rng(15)
    X = rng.standard_normal((L + 1, 2 * L + 1)) + 1j * rng.standard_normal((L + 1, 2 * L + 1))
    w = synthesize_column_sphere(plan, X, -1)
    filled = fill_poles(plan, np.where(np.arange(16)[None, :] % 15 == 0, 0.0, w), -1)
    assert np.abs(filled - w).max() <= 1e-12
    sx = SpectralSignal.from_column(X, -1)
    np.testing.assert_allclose(analyze_column_sphere(plan, filled, -1), sx.column(-1), atol=1e-12)


def test_ragged_degree_index():
    l, m, n = ragged_index(2)
    assert l.tolist()[:10] == [0] + [1] * 9
    assert m.tolist()[1:4] == [-1, -1, -1] and n.tolist()[1:4] == [-1, 0, 1]
