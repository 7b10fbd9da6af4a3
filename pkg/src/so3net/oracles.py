"""Brute-force spatial references for the spectral operators.

These evaluate the defining integrals by quadrature over SO(3) and are used by
the self-test and the test suite.  They are slow by design.
"""

from __future__ import annotations

import numpy as np

from .signals import EulerGrid, QuadratureGrid, SpatialSignalSO3, SpectralSignal, euler_to_matrix, matrix_to_euler
from .so3fft import evaluate, ft_direct


def _nodes(grid) -> tuple[np.ndarray, ...]:
    return tuple(a.ravel() for a in np.meshgrid(grid.alpha, grid.beta, grid.gamma, indexing="ij"))


def _pair_products(x: SpectralSignal, psi: SpectralSignal, A: np.ndarray, side: str, chunk: int) -> np.ndarray:
    if x.L != psi.L:
        raise ValueError("band limits differ")
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    # Gauss-Legendre product grid, exact for products of two degree-L signals
    qg = QuadratureGrid.for_bandlimit(x.L)
    qa, qb, qc = _nodes(qg)
    G = euler_to_matrix(qa, qb, qc)  # (Q, 3, 3)
    xg = evaluate(x, qa, qb, qc)
    w = np.broadcast_to(qg.weights[None, :, None], qg.shape).ravel()
    y = np.empty(len(A), dtype=complex)
    for s in range(0, len(A), chunk):
        Ab = A[s : s + chunk]
        if side == "left":
            M = np.einsum("pji,qjk->pqik", Ab, G)  # A^-1 g
        else:
            M = np.einsum("qij,pkj->pqik", G, Ab)  # g A^-1
        a, b, c = matrix_to_euler(M)
        y[s : s + chunk] = np.sum(w * xg * np.conj(evaluate(psi, a, b, c)), axis=-1)
    return y


def convolution_at(x: SpectralSignal, psi: SpectralSignal, alpha, beta, gamma, side: str = "left", chunk: int = 64) -> np.ndarray:
    """Values of ``A -> <x, l_A psi>`` (``side="left"``) or ``A -> <x, r_A psi>`` at the given Euler angles."""
    a, b, c = (np.ravel(v) for v in np.broadcast_arrays(alpha, beta, gamma))
    return _pair_products(x, psi, euler_to_matrix(a, b, c), side, chunk)


def convolution_quadrature(x: SpectralSignal, psi: SpectralSignal, side: str = "left", chunk: int = 64) -> SpectralSignal:
    """Coefficients of ``A -> <x, l_A psi>`` or ``A -> <x, r_A psi>``.

    The function is sampled on an Euler grid and transformed by the direct
    route, so no FFT code is involved.
    """
    eg = EulerGrid.for_bandlimit(x.L)
    y = _pair_products(x, psi, euler_to_matrix(*_nodes(eg)), side, chunk)
    return ft_direct(SpatialSignalSO3(eg, y.reshape(eg.shape)), x.L)


def smoothing_quadrature(x: SpectralSignal, q: int, alpha, beta, gamma, n_theta: int = 256) -> np.ndarray:
    """``(1/2pi) int e^{i q theta} (r_{Z(-theta)} x)(A) dtheta`` with ``(r_B x)(A) = x(A B^-1)``.

    Evaluated at the Euler angles given (broadcast arrays) with ``n_theta``
    equally spaced nodes, exact for band-limited ``x`` once ``n_theta > L + |q|``.
    """
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    alpha, beta, gamma = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (alpha, beta, gamma)))
    vals = evaluate(x, alpha[..., None], beta[..., None], gamma[..., None] + theta)  # x(A Z(theta))
    return np.mean(vals * np.exp(1j * q * theta), axis=-1)
