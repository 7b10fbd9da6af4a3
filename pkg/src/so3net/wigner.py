"""Wigner d- and D-matrices of SO(3).

Matrices are indexed from -l to l; row/column ``k`` of an array holds index
``k - l``.  The representation is fixed by

    D^l(Z(alpha)) = exp(-i alpha Lambda^l),    D^l(Y(beta)) = d^l(beta),

with ``d^l(beta) = exp((beta / 2) G^l)`` and ``G^l = Q^l - (Q^l)^T``.  The factor
one half is what makes ``D^l`` a homomorphism (``G^l`` has spectrum ``{2im}``).
"""

from __future__ import annotations

import functools
import threading

import numpy as np
import scipy.linalg


def _check_degree(l: int) -> int:
    l = int(l)
    if l < 0:
        raise ValueError(f"degree must be non-negative, got {l}")
    return l


def generator(l: int) -> np.ndarray:
    """Skew-symmetric tridiagonal ``Q^l - (Q^l)^T`` with ``Q_{m,m+1} = sqrt((l-m)(l+m+1))``."""
    l = _check_degree(l)
    m = np.arange(-l, l)
    q = np.sqrt((l - m) * (l + m + 1.0))
    Q = np.diag(q, 1)
    return Q - Q.T


def lambda_diag(l: int) -> np.ndarray:
    """Diagonal of ``Lambda^l`` as the integer vector ``-l..l``."""
    l = _check_degree(l)
    return np.arange(-l, l + 1)


_delta_cache: dict[int, np.ndarray] = {}
_delta_lock = threading.Lock()


def _delta_eig(l: int) -> np.ndarray:
    # i G / 2 is Hermitian with eigenvalues -l..l, so the exponential is
    # assembled from an orthonormal eigenbasis rather than a Pade approximant.
    H = 0.5j * generator(l)
    w, V = np.linalg.eigh(H)
    m = np.rint(w)
    # G/2 = -i H  ->  exp(theta G / 2) = V exp(-i theta m) V^H
    E = (V * np.exp(-1j * (np.pi / 2) * m)) @ V.conj().T
    D = E.real
    return _symmetrize_delta(D)


def _symmetrize_delta(D: np.ndarray) -> np.ndarray:
    """Enforce ``Delta_{-s,-m} = (-1)^(s-m) Delta_{s,m}`` by averaging."""
    l = (D.shape[0] - 1) // 2
    k = np.arange(-l, l + 1)
    sign = (-1.0) ** (k[:, None] - k[None, :])
    return 0.5 * (D + sign * D[::-1, ::-1])


def wigner_delta(l: int) -> np.ndarray:
    """``Delta^l = d^l(pi/2)``, computed once per degree and returned read-only."""
    l = _check_degree(l)
    D = _delta_cache.get(l)
    if D is None:
        with _delta_lock:
            D = _delta_cache.get(l)
            if D is None:
                D = _delta_eig(l)
                D.setflags(write=False)
                _delta_cache[l] = D
    return D


def delta_stack(L: int) -> np.ndarray:
    """All ``Delta^l`` for ``l <= L`` zero-padded into a ``(L+1, 2L+1, 2L+1)`` array."""
    out = np.zeros((L + 1, 2 * L + 1, 2 * L + 1))
    for l in range(L + 1):
        out[l, L - l : L + l + 1, L - l : L + l + 1] = wigner_delta(l)
    return out


def wigner_d_via_delta(l: int, beta: float) -> np.ndarray:
    """``d^l_{m,n}(beta) = i^(n-m) sum_s Delta_{s,m} Delta_{s,n} exp(i s beta)``."""
    l = _check_degree(l)
    D = wigner_delta(l)
    k = np.arange(-l, l + 1)
    phase = 1j ** ((k[None, :] - k[:, None]) % 4)
    out = phase * ((D * np.exp(1j * k * beta)[:, None]).T @ D)
    return out.real


def wigner_d(l: int, beta: float, method: str = "delta") -> np.ndarray:
    """Real orthogonal ``d^l(beta)``.

    ``method="delta"`` expands through the cached ``Delta^l`` (shared with the
    FFT); ``method="expm"`` exponentiates the generator directly and serves as
    an independent route.
    """
    if method == "delta":
        return wigner_d_via_delta(l, beta)
    if method == "expm":
        return scipy.linalg.expm(0.5 * beta * generator(l))
    raise ValueError(f"unknown method {method!r}")


def wigner_D(l: int, alpha: float, beta: float, gamma: float, method: str = "delta") -> np.ndarray:
    """``D^l_{m,n}(Z(alpha) Y(beta) Z(gamma)) = exp(-i m alpha - i n gamma) d^l_{m,n}(beta)``."""
    k = lambda_diag(l)
    d = wigner_d(l, beta, method=method)
    return np.exp(-1j * k * alpha)[:, None] * d * np.exp(-1j * k * gamma)[None, :]


@functools.lru_cache(maxsize=None)
def n_coeffs(L: int) -> int:
    """Ragged length ``sum_{l<=L} (2l+1)^2``."""
    return (L + 1) * (2 * L + 1) * (2 * L + 3) // 3
