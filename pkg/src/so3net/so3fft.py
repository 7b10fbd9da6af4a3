"""Fourier transforms on SO(3).

Two routes are provided:

* the fast route (:class:`FftPlan`, :func:`ft_fast`, :func:`ift_fast`) uses 3-D FFTs
  on the torus extension of the Euler-angle grid and contracts with the
  ``Delta^l`` matrices;
* the direct route (:func:`ft_direct`, :func:`ift_direct`) evaluates the Wigner
  functions through the matrix exponential and integrates in beta with
  Gauss-Legendre quadrature.  It is slow and exists to check the fast one.

The torus extension uses ``Z(a) Y(b) Z(c) = Z(a + pi) Y(2pi - b) Z(c + pi)``, so the
samples on ``beta in (pi, 2pi)`` are a permutation of those on ``[0, pi]`` and the
extended function of a band-limited signal is a trigonometric polynomial.  The
``sin(beta)`` Haar factor restricted to ``[0, pi]`` is applied as an exact
convolution of torus coefficients with :func:`beta_weights`.

All dense spectral arrays have shape ``(..., L+1, 2L+1, 2L+1)`` indexed
``[l, m + L, n + L]``; "column" arrays drop the last axis for a fixed ``n``.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.fft

from .errors import BandLimitError, GridMismatchError
from .signals import EulerGrid, SpatialSignalSO3, SpectralSignal, degree_mask
from .wigner import delta_stack, generator, wigner_d

_FFT_WORKERS = 1  # deterministic and cheap at desk scale


def beta_weights(max_k: int) -> np.ndarray:
    """``w_k = (1/2pi) int_0^pi exp(i k beta) sin(beta) dbeta`` for ``k = -max_k..max_k``.

    Entry ``max_k + k`` holds ``w_k``.
    """
    if max_k < 0:
        raise ValueError("max_k must be non-negative")
    k = np.arange(-max_k, max_k + 1)

    def E(j):
        # int_0^pi exp(i j b) db
        out = np.zeros(j.shape, dtype=complex)
        out[j == 0] = np.pi
        odd = (j % 2) != 0
        out[odd] = 2j / j[odd]
        return out

    return (E(k + 1) - E(k - 1)) / (2j) / (2.0 * np.pi)


def _torus_freqs(n: int) -> np.ndarray:
    return np.rint(scipy.fft.fftfreq(n) * n).astype(int)


class FftPlan:
    """Precomputed tables for the fast transform at band limit ``L`` on ``grid``.

    The plan is immutable after construction and may be shared between threads.
    """

    def __init__(self, L: int, grid: Optional[EulerGrid] = None):
        if L < 0:
            raise BandLimitError("band limit must be non-negative")
        grid = grid or EulerGrid.for_bandlimit(L)
        grid.check(L)
        if grid.n_alpha % 2 or grid.n_gamma % 2:
            raise GridMismatchError("fast transform needs even n_alpha and n_gamma")
        self.L = L
        self.grid = grid
        S = 2 * L + 1
        self.size = S
        na, nb, ng = grid.shape
        self.n_beta_torus = nbt = 2 * (nb - 1)

        self.deltas = delta_stack(L)
        self.deltas.setflags(write=False)
        k = np.arange(-L, L + 1)
        # R[m, n, l, s] = Delta^l_{s,m} Delta^l_{s,n}
        R = np.einsum("lsm,lsn->mnls", self.deltas, self.deltas)
        self._R = np.ascontiguousarray(R)
        sign = (-1.0) ** (k[:, None] + k[None, :])
        self.phase_synth = sign * 1j ** ((k[None, :] - k[:, None]) % 4)  # (-1)^(m+n) i^(n-m)
        self.phase_analysis = sign * 1j ** ((k[:, None] - k[None, :]) % 4)  # (-1)^(m+n) i^(m-n)
        self.degree_factor = np.pi * (2 * np.arange(L + 1) + 1.0)

        freqs_b = _torus_freqs(nbt)
        max_k = int(np.abs(freqs_b).max(initial=0)) + L
        w = beta_weights(max_k)
        # W[s', s] = w_{s' - s}
        self.W = w[max_k + freqs_b[:, None] - k[None, :]]
        self.w_table = w

        self.idx_alpha = k % na
        self.idx_gamma = k % ng
        self.idx_beta = k % nbt
        self.gamma_phase = np.exp(-1j * np.outer(k, grid.gamma))  # (S, n_gamma)

        kb = np.arange(nb, nbt)
        self._ext_beta = nbt - kb
        self._ext_alpha = (np.arange(na) + na // 2) % na
        self._ext_gamma = (np.arange(ng) + ng // 2) % ng
        for a in (self._R, self.phase_synth, self.phase_analysis, self.W):
            a.setflags(write=False)

    # -- tables ----------------------------------------------------------

    def R_column(self, n: int) -> np.ndarray:
        """``R[m, l, s] = Delta^l_{s,m} Delta^l_{s,n}`` for a fixed column ``n``."""
        return self._R[:, n + self.L]

    @property
    def n_total(self) -> int:
        na, _, ng = self.grid.shape
        return na * self.n_beta_torus * ng

    # -- torus helpers -----------------------------------------------------

    def _extend(self, x: np.ndarray, gamma_axis: bool = True, n: int = 0) -> np.ndarray:
        """Samples on [0, pi] in beta -> samples on the full beta torus."""
        if gamma_axis:
            tail = x[..., self._ext_alpha, :, :][..., self._ext_beta, :][..., self._ext_gamma]
        else:
            tail = x[..., self._ext_alpha, :][..., self._ext_beta] * (-1.0) ** n
        return np.concatenate([x, tail], axis=-2 if gamma_axis else -1)

    def _extend_adjoint(self, g: np.ndarray, gamma_axis: bool = True, n: int = 0) -> np.ndarray:
        nb = self.grid.n_beta
        if gamma_axis:
            out = g[..., :nb, :].copy()
            tail = g[..., nb:, :]
            # the index maps are injective, so plain fancy += accumulates correctly
            out[..., self._ext_alpha[:, None, None], self._ext_beta[None, :, None], self._ext_gamma[None, None, :]] += tail
        else:
            out = g[..., :nb].copy()
            tail = g[..., nb:] * (-1.0) ** n
            out[..., self._ext_alpha[:, None], self._ext_beta[None, :]] += tail
        return out


# ---------------------------------------------------------------------------
# fast route on dense arrays


def _flatten_batch(a: np.ndarray, tail: int):
    lead = a.shape[: a.ndim - tail]
    return a.reshape((-1,) + a.shape[a.ndim - tail :]), lead


def synthesize(plan: FftPlan, X: np.ndarray) -> np.ndarray:
    """Dense coefficients ``(..., L+1, S, S)`` -> samples ``(..., n_alpha, n_beta, n_gamma)``."""
    L, S = plan.L, plan.size
    Xb, lead = _flatten_batch(np.asarray(X, dtype=complex), 3)
    b = Xb.shape[0]
    Xm = Xb.reshape(b, L + 1, S * S).transpose(2, 0, 1)  # (M, b, L+1)
    T = Xm @ plan._R.reshape(S * S, L + 1, S)  # (M, b, S_s)
    T = T.reshape(S, S, b, S) * plan.phase_synth[:, :, None, None]
    x = _torus_synthesis(plan, T.transpose(2, 0, 3, 1))  # (b, m, s, n) in
    return x.reshape(lead + plan.grid.shape)


def _torus_synthesis(plan: FftPlan, T: np.ndarray) -> np.ndarray:
    """Inverse DFT of sparse torus coefficients ``(b, m, s, n)``, kept on ``beta in [0, pi]``.

    One axis at a time so that only rows holding nonzero coefficients are transformed.
    """
    b, S = T.shape[0], plan.size
    na, nb, ng = plan.grid.shape
    G = np.zeros((b, S, S, ng), dtype=complex)
    G[..., plan.idx_gamma] = T
    G = scipy.fft.ifft(G, axis=3, norm="forward", overwrite_x=True, workers=_FFT_WORKERS)
    H = np.zeros((b, S, plan.n_beta_torus, ng), dtype=complex)
    H[:, :, plan.idx_beta] = G
    H = scipy.fft.ifft(H, axis=2, norm="forward", overwrite_x=True, workers=_FFT_WORKERS)[:, :, :nb]
    x = np.zeros((b, na, nb, ng), dtype=complex)
    x[:, plan.idx_alpha] = H
    return scipy.fft.ifft(x, axis=1, norm="forward", overwrite_x=True, workers=_FFT_WORKERS)


def _torus_synthesis_adjoint(plan: FftPlan, g: np.ndarray) -> np.ndarray:
    nb = plan.grid.n_beta
    F = scipy.fft.fft(g, axis=1, workers=_FFT_WORKERS)[:, plan.idx_alpha]
    H = np.zeros(F.shape[:2] + (plan.n_beta_torus, F.shape[3]), dtype=complex)
    H[:, :, :nb] = F
    H = scipy.fft.fft(H, axis=2, overwrite_x=True, workers=_FFT_WORKERS)[:, :, plan.idx_beta]
    return scipy.fft.fft(H, axis=3, overwrite_x=True, workers=_FFT_WORKERS)[..., plan.idx_gamma]


def synthesize_adjoint(plan: FftPlan, g: np.ndarray) -> np.ndarray:
    L, S = plan.L, plan.size
    gb, lead = _flatten_batch(np.asarray(g, dtype=complex), 3)
    b = gb.shape[0]
    T = _torus_synthesis_adjoint(plan, gb)  # (b, m, s, n)
    T = T.transpose(1, 3, 0, 2) * np.conj(plan.phase_synth)[:, :, None, None]  # (m, n, b, s)
    T = T.reshape(S * S, b, S)
    Xm = T @ plan._R.reshape(S * S, L + 1, S).transpose(0, 2, 1)  # (M, b, L+1)
    X = Xm.transpose(1, 2, 0).reshape((b, L + 1, S, S)) * degree_mask(L)
    return X.reshape(lead + (L + 1, S, S))


def _scatter_torus(plan: FftPlan, T: np.ndarray) -> np.ndarray:
    b = T.shape[0]
    na, _, ng = plan.grid.shape
    F = np.zeros((b, na, plan.n_beta_torus, ng), dtype=complex)
    F[:, plan.idx_alpha[:, None, None], plan.idx_beta[None, :, None], plan.idx_gamma[None, None, :]] = T
    return F


def _gather_torus(plan: FftPlan, F: np.ndarray) -> np.ndarray:
    return F[:, plan.idx_alpha[:, None, None], plan.idx_beta[None, :, None], plan.idx_gamma[None, None, :]]


BETA_QUADRATURES = ("torus", "zero_extension")


def analyze(plan: FftPlan, x: np.ndarray, beta_quadrature: str = "torus") -> np.ndarray:
    """Samples ``(..., n_alpha, n_beta, n_gamma)`` -> dense coefficients ``(..., L+1, S, S)``.

    ``beta_quadrature="zero_extension"`` replaces the exact torus quadrature by a
    plain DFT of ``x sin(beta)`` padded with zeros on ``(pi, 2pi)``.  It aliases
    at ``O(1 / n_beta)`` and is kept only for comparison.
    """
    if beta_quadrature not in BETA_QUADRATURES:
        raise ValueError(f"beta_quadrature must be one of {BETA_QUADRATURES}, got {beta_quadrature!r}")
    L, S = plan.L, plan.size
    xb, lead = _flatten_batch(np.asarray(x, dtype=complex), 3)
    b = xb.shape[0]
    na, nb, ng = plan.grid.shape
    # alpha and gamma first on [0, pi]; the torus tail is then (-1)^(m+n) times a beta reflection
    C = scipy.fft.fft(xb, axis=3, norm="forward", workers=_FFT_WORKERS)[..., plan.idx_gamma]
    C = scipy.fft.fft(C, axis=1, norm="forward", overwrite_x=True, workers=_FFT_WORKERS)[:, plan.idx_alpha]
    if beta_quadrature == "zero_extension":
        ext = np.zeros((b, S, plan.n_beta_torus, S), dtype=complex)
        ext[:, :, :nb] = C * np.sin(plan.grid.beta)[None, None, :, None]
        C = scipy.fft.fft(ext, axis=2, norm="forward", overwrite_x=True, workers=_FFT_WORKERS)
        xe = C[:, :, plan.idx_beta].transpose(1, 3, 0, 2)
    else:
        k = np.arange(-L, L + 1)
        sign = (-1.0) ** (k[:, None] + k[None, :])
        tail = C[:, :, plan._ext_beta, :] * sign[None, :, None, :]
        ext = np.concatenate([C, tail], axis=2)
        C = scipy.fft.fft(ext, axis=2, norm="forward", overwrite_x=True, workers=_FFT_WORKERS)  # (b, m, s', n)
        xe = np.einsum("bmtn,ts->mnbs", C, plan.W)  # torus coeffs of x sin(beta) 1_[0,pi]
    xe = xe * plan.phase_analysis[:, :, None, None]
    Xm = xe.reshape(S * S, b, S) @ plan._R.reshape(S * S, L + 1, S).transpose(0, 2, 1)  # (M, b, L+1)
    X = Xm.transpose(1, 2, 0).reshape(b, L + 1, S, S) * plan.degree_factor[:, None, None]
    return X.reshape(lead + (L + 1, S, S))


def analyze_adjoint(plan: FftPlan, G: np.ndarray) -> np.ndarray:
    L, S = plan.L, plan.size
    Gb, lead = _flatten_batch(np.asarray(G, dtype=complex), 3)
    b = Gb.shape[0]
    Gb = Gb * degree_mask(L) * plan.degree_factor[:, None, None]
    Gm = Gb.reshape(b, L + 1, S * S).transpose(2, 0, 1)  # (M, b, L+1)
    xe = Gm @ plan._R.reshape(S * S, L + 1, S)  # (M, b, S)
    xe = xe.reshape(S, S, b, S) * np.conj(plan.phase_analysis)[:, :, None, None]
    C = np.einsum("mnbs,ts->bmtn", xe, np.conj(plan.W))
    na, nb, ng = plan.grid.shape
    F = np.zeros((b, na, plan.n_beta_torus, ng), dtype=complex)
    t_all = np.arange(plan.n_beta_torus)
    F[:, plan.idx_alpha[:, None, None], t_all[None, :, None], plan.idx_gamma[None, None, :]] = C
    ext = scipy.fft.ifftn(F, axes=(1, 2, 3), norm="forward", workers=_FFT_WORKERS) / plan.n_total
    out = plan._extend_adjoint(ext)
    return out.reshape(lead + plan.grid.shape)


def analyze_column(plan: FftPlan, x: np.ndarray, n: int) -> np.ndarray:
    """Column ``n`` of :func:`analyze`, i.e. the transform followed by projection onto ``X_{-n}``.

    Returns ``(..., L+1, S)`` indexed ``[l, m + L]``.
    """
    L, S = plan.L, plan.size
    xb, lead = _flatten_batch(np.asarray(x, dtype=complex), 3)
    if abs(n) > L:
        return np.zeros(lead + (L + 1, S), dtype=complex)
    xn = xb @ plan.gamma_phase[n + L] / plan.grid.n_gamma  # (b, na, nb)
    return analyze_column_sphere(plan, xn, n).reshape(lead + (L + 1, S))


def analyze_column_sphere(plan: FftPlan, w: np.ndarray, n: int) -> np.ndarray:
    """Column ``n`` from the gamma = 0 slice ``w`` ``(..., n_alpha, n_beta)`` of a signal in ``X_{-n}``."""
    L, S = plan.L, plan.size
    wb, lead = _flatten_batch(np.asarray(w, dtype=complex), 2)
    if abs(n) > L:
        return np.zeros(lead + (L + 1, S), dtype=complex)
    ext = plan._extend(wb, gamma_axis=False, n=n)
    C = scipy.fft.fft2(ext, axes=(1, 2), norm="forward", workers=_FFT_WORKERS)
    C = C[:, plan.idx_alpha]  # (b, m, s')
    xe = (C @ plan.W) * plan.phase_analysis[:, n + L][None, :, None]  # (b, m, s)
    Xm = xe.transpose(1, 0, 2) @ plan.R_column(n).transpose(0, 2, 1)  # (m, b, L+1)
    X = Xm.transpose(1, 2, 0) * plan.degree_factor[:, None]
    X = X * degree_mask(L)[:, :, n + L]
    return X.reshape(lead + (L + 1, S))


def fill_poles(plan: FftPlan, w: np.ndarray, n: int) -> np.ndarray:
    """Replace the two pole rows of a gamma = 0 slice by the values a band-limited signal must take.

    The torus extension of a signal band-limited at ``L`` has no beta frequency
    above ``L``.  After the alpha DFT the poles enter each such frequency ``s`` as
    ``P_0 + (-1)^s P_pi``, so averaging the remaining high-frequency content over
    even and odd ``s`` pins both pole values.  Exact for band-limited input.
    """
    L = plan.L
    na, nb, _ = plan.grid.shape
    nbt = plan.n_beta_torus
    freqs = _torus_freqs(nbt)
    high = np.abs(freqs) > L
    even, odd = high & (freqs % 2 == 0), high & (freqs % 2 == 1)
    if not even.any() or not odd.any():
        raise BandLimitError(f"grid with n_beta={nb} leaves no spare beta frequencies at L={L}")
    wb, lead = _flatten_batch(np.asarray(w, dtype=complex).copy(), 2)
    wb[:, :, 0] = 0.0
    wb[:, :, nb - 1] = 0.0
    ext = plan._extend(wb, gamma_axis=False, n=n)
    A = scipy.fft.fft(ext, axis=1, norm="forward", workers=_FFT_WORKERS)  # alpha DFT
    C = scipy.fft.fft(A, axis=2, norm="backward", workers=_FFT_WORKERS)  # unnormalized beta DFT
    # pole rows add P_0 + (-1)^s P_pi to every unnormalized beta coefficient
    s_even = -C[:, :, even].mean(axis=2)
    s_odd = -C[:, :, odd].mean(axis=2)
    p0 = (s_even + s_odd) / 2
    ppi = (s_even - s_odd) / 2
    wb[:, :, 0] = scipy.fft.ifft(p0, axis=1, norm="forward", workers=_FFT_WORKERS)
    wb[:, :, nb - 1] = scipy.fft.ifft(ppi, axis=1, norm="forward", workers=_FFT_WORKERS)
    return wb.reshape(lead + (na, nb))


def analyze_column_adjoint(plan: FftPlan, G: np.ndarray, n: int) -> np.ndarray:
    L = plan.L
    Gb, lead = _flatten_batch(np.asarray(G, dtype=complex), 2)
    b = Gb.shape[0]
    na, nb, ng = plan.grid.shape
    if abs(n) > L:
        return np.zeros(lead + plan.grid.shape, dtype=complex)
    Gb = Gb * degree_mask(L)[:, :, n + L] * plan.degree_factor[:, None]
    xe = Gb.transpose(2, 0, 1) @ plan.R_column(n)  # (m, b, s)
    xe = xe.transpose(1, 0, 2) * np.conj(plan.phase_analysis[:, n + L])[None, :, None]
    C = xe @ np.conj(plan.W).T  # (b, m, s')
    F = np.zeros((b, na, plan.n_beta_torus), dtype=complex)
    F[:, plan.idx_alpha] = C
    ext = scipy.fft.ifft2(F, axes=(1, 2), norm="forward", workers=_FFT_WORKERS) / (na * plan.n_beta_torus)
    xn = plan._extend_adjoint(ext, gamma_axis=False, n=n)
    out = xn[..., None] * np.conj(plan.gamma_phase[n + L])[None, None, None, :] / ng
    return out.reshape(lead + plan.grid.shape)


def synthesize_column_sphere(plan: FftPlan, X: np.ndarray, n: int) -> np.ndarray:
    """Column-``n`` coefficients ``(..., L+1, S)`` -> values at gamma = 0, ``(..., n_alpha, n_beta)``.

    Column ``n`` multiplies ``D_{-m,-n}``, which carries ``exp(i n gamma)``, so the
    full signal is this slice times ``exp(i n gamma)``.
    """
    L = plan.L
    Xb, lead = _flatten_batch(np.asarray(X, dtype=complex), 2)
    b = Xb.shape[0]
    if abs(n) > L:
        return np.zeros(lead + plan.grid.shape[:2], dtype=complex)
    T = Xb.transpose(2, 0, 1) @ plan.R_column(n)  # (m, b, s)
    T = T.transpose(1, 0, 2) * plan.phase_synth[:, n + L][None, :, None]
    na, nb, _ = plan.grid.shape
    F = np.zeros((b, na, plan.n_beta_torus), dtype=complex)
    F[:, plan.idx_alpha[:, None], plan.idx_beta[None, :]] = T
    x = scipy.fft.ifft2(F, axes=(1, 2), norm="forward", workers=_FFT_WORKERS)[:, :, :nb]
    return x.reshape(lead + (na, nb))


def synthesize_column_sphere_adjoint(plan: FftPlan, g: np.ndarray, n: int) -> np.ndarray:
    L, S = plan.L, plan.size
    gb, lead = _flatten_batch(np.asarray(g, dtype=complex), 2)
    b = gb.shape[0]
    if abs(n) > L:
        return np.zeros(lead + (L + 1, S), dtype=complex)
    na, nb, _ = plan.grid.shape
    G = np.zeros((b, na, plan.n_beta_torus), dtype=complex)
    G[:, :, :nb] = gb
    F = scipy.fft.fft2(G, axes=(1, 2), norm="backward", workers=_FFT_WORKERS)
    T = F[:, plan.idx_alpha[:, None], plan.idx_beta[None, :]]  # (b, m, s)
    T = T * np.conj(plan.phase_synth[:, n + L])[None, :, None]
    X = T.transpose(1, 0, 2) @ plan.R_column(n).transpose(0, 2, 1)  # (m, b, L+1)
    X = X.transpose(1, 2, 0) * degree_mask(L)[:, :, n + L]
    return X.reshape(lead + (L + 1, S))


def synthesize_column(plan: FftPlan, X: np.ndarray, n: int) -> np.ndarray:
    """Column-``n`` coefficients -> full samples, exploiting the ``exp(i n gamma)`` factor."""
    sphere = synthesize_column_sphere(plan, X, n)
    return sphere[..., None] * np.exp(1j * n * plan.grid.gamma)


# ---------------------------------------------------------------------------
# public transforms on containers


def ft_fast(x: SpatialSignalSO3, plan: FftPlan, beta_quadrature: str = "torus") -> SpectralSignal:
    if x.grid != plan.grid:
        raise GridMismatchError(f"signal grid {x.grid} does not match plan grid {plan.grid}")
    return SpectralSignal.from_dense(analyze(plan, x.samples, beta_quadrature))


def ift_fast(xhat: SpectralSignal, plan: FftPlan) -> SpatialSignalSO3:
    if xhat.L > plan.L:
        raise BandLimitError(f"plan band limit {plan.L} below signal band limit {xhat.L}")
    dense = _pad_dense(xhat.dense(), plan.L)
    return SpatialSignalSO3(plan.grid, synthesize(plan, dense))


def _pad_dense(dense: np.ndarray, L: int) -> np.ndarray:
    L0 = dense.shape[-3] - 1
    if L0 == L:
        return dense
    out = np.zeros(dense.shape[:-3] + (L + 1, 2 * L + 1, 2 * L + 1), dtype=complex)
    d = L - L0
    out[..., : L0 + 1, d : d + 2 * L0 + 1, d : d + 2 * L0 + 1] = dense
    return out


# ---------------------------------------------------------------------------
# direct route (oracle)


@lru_cache(maxsize=32)
def _wigner_d_table(L: int, betas: tuple) -> tuple:
    """``d^l(beta)`` via the matrix exponential for each beta, zero padded to (Q, S, S)."""
    out = []
    S = 2 * L + 1
    for l in range(L + 1):
        t = np.zeros((len(betas), S, S))
        for q, b in enumerate(betas):
            t[q, L - l : L + l + 1, L - l : L + l + 1] = wigner_d(l, b, method="expm")
        t.setflags(write=False)
        out.append(t)
    return tuple(out)


def ift_direct(xhat: SpectralSignal, grid) -> SpatialSignalSO3:
    """Pointwise synthesis ``x(A) = sum xhat^l_{-m,-n} D^l_{m,n}(A)`` over the grid nodes.

    ``grid`` may be an :class:`EulerGrid` or any object exposing ``alpha``,
    ``beta`` and ``gamma`` node arrays.
    """
    L = xhat.L
    Xf = xhat.dense()[..., ::-1, ::-1]  # Xf[l, m, n] = xhat[l, -m, -n]
    k = np.arange(-L, L + 1)
    Ea = np.exp(-1j * np.outer(grid.alpha, k))
    Eg = np.exp(-1j * np.outer(grid.gamma, k))
    table = _wigner_d_table(L, tuple(np.asarray(grid.beta, dtype=float)))
    Acoef = sum(np.einsum("...mn,qmn->...qmn", Xf[..., l, :, :], table[l]) for l in range(L + 1))
    samples = np.einsum("jm,...qmn,in->...jqi", Ea, Acoef, Eg)
    if isinstance(grid, EulerGrid):
        return SpatialSignalSO3(grid, samples)
    return samples


def evaluate(xhat: SpectralSignal, alpha, beta, gamma) -> np.ndarray:
    """Evaluate a spectral signal at arbitrary Euler angles (broadcast arrays)."""
    L = xhat.L
    alpha, beta, gamma = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (alpha, beta, gamma)))
    shape = alpha.shape
    a, b, c = alpha.ravel(), beta.ravel(), gamma.ravel()
    Xf = xhat.dense()[..., ::-1, ::-1]
    out = np.zeros(xhat.coeffs.shape[:-1] + (a.size,), dtype=complex)
    for l in range(L + 1):
        k = np.arange(-l, l + 1)
        # d^l(beta) = V exp(-i beta m) V^H with i G/2 = V diag(m) V^H
        w, V = np.linalg.eigh(0.5j * generator(l))
        ph = np.exp(-1j * np.outer(b, np.rint(w)))  # (P, S)
        d = np.einsum("ms,ps,ns->pmn", V, ph, V.conj()).real
        D = np.exp(-1j * np.outer(a, k))[:, :, None] * d * np.exp(-1j * np.outer(c, k))[:, None, :]
        blk = Xf[..., l, L - l : L + l + 1, L - l : L + l + 1]
        out = out + np.einsum("...mn,pmn->...p", blk, D)
    return out.reshape(xhat.coeffs.shape[:-1] + shape)


@lru_cache(maxsize=16)
def _direct_analysis_tables(L: int, grid: EulerGrid):
    na, nb, ng = grid.shape
    nbt = 2 * (nb - 1)
    freqs = _torus_freqs(nbt)
    nq = 2 * (nbt + L) + 16
    xg, wg = np.polynomial.legendre.leggauss(nq)
    # map [-1, 1] -> [0, pi]
    bq = 0.5 * np.pi * (xg + 1.0)
    wq = 0.5 * np.pi * wg * np.sin(bq)
    tb = np.pi * np.arange(nbt) / (nb - 1)
    # trigonometric interpolation on the beta torus: g(b) = sum_s c_s exp(i s b)
    dft = np.exp(-1j * np.outer(freqs, tb)) / nbt
    nyq = np.abs(freqs) == nbt // 2 if nbt % 2 == 0 else np.zeros(nbt, bool)
    ev = np.exp(1j * np.outer(bq, freqs))
    ev[:, nyq] = np.cos(np.outer(bq, freqs[nyq]))
    interp = ev @ dft  # (Q, nbt)
    d = _wigner_d_table(L, tuple(bq))
    return interp, wq, d


def ft_direct(x: SpatialSignalSO3, L: int) -> SpectralSignal:
    """``xhat^l_{m,n} = (2l+1) <x, D^l_{-m,-n}>`` by explicit quadrature.

    Alpha and gamma use the trapezoid rule as explicit DFT sums.  The beta
    profile of each ``(m, n)`` Fourier mode is extended to the torus with
    ``g_{m,n}(2pi - b) = (-1)^(m+n) g_{m,n}(b)``, interpolated, and integrated
    against ``d^l_{-m,-n}(beta) sin(beta)`` by Gauss-Legendre quadrature.
    """
    grid = x.grid
    grid.check(L)
    na, nb, ng = grid.shape
    k = np.arange(-L, L + 1)
    Ea = np.exp(-1j * np.outer(k, grid.alpha)) / na
    Eg = np.exp(-1j * np.outer(k, grid.gamma)) / ng
    g = np.einsum("mj,...jki,ni->...mkn", Ea, x.samples, Eg)  # (..., m, beta, n)
    sign = (-1.0) ** (k[:, None] + k[None, :])
    tail = g[..., :, 1 : nb - 1, :][..., :, ::-1, :] * sign[:, None, :]
    gt = np.concatenate([g, tail], axis=-2)  # beta torus, (..., m, nbt, n)
    interp, wq, dtab = _direct_analysis_tables(L, grid)
    gq = np.einsum("qt,...mtn->...mqn", interp, gt)
    dense = np.zeros(x.samples.shape[:-3] + (L + 1, 2 * L + 1, 2 * L + 1), dtype=complex)
    for l in range(L + 1):
        dflip = dtab[l][:, ::-1, ::-1]  # d^l_{-m,-n}
        dense[..., l, :, :] = (2 * l + 1) / 2.0 * np.einsum("...mqn,qmn,q->...mn", gq, dflip, wq)
    dense *= degree_mask(L)
    return SpectralSignal.from_dense(dense)
