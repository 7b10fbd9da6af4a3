"""Linear operators acting on Fourier coefficients.

Per degree ``l`` write ``X`` for the ``(2l+1) x (2l+1)`` block of ``xhat`` and
``Psi`` for the filter block.  Then

* left convolution      ``Y = X Psi^H / (2l+1)``
* right covariance      ``Y = Psi^H X / (2l+1)``
* left translation      ``Y = b^T X`` with ``b_{m,n} = D^l_{-m,-n}(B^-1)``

so each degree is independent of the others.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BandLimitError, OrderMismatchError
from .signals import SpectralSignal, coefficient_column, degree_mask, matrix_to_euler, check_rotation
from .wigner import wigner_D


@dataclass
class Filter:
    """Filter coefficients ``psi^l_{n,s}``.

    Full form stores every ``(l, n, s)`` in the ragged layout of
    :class:`SpectralSignal`.  Restricted form (``order`` set to ``p``) keeps only
    the ``s`` column that meets an ``X_p`` input and stores ``psi^l_n`` for
    ``|p| <= l <= L`` and ``-l <= n <= l``, l-major.
    """

    L: int
    coeffs: np.ndarray
    order: Optional[int] = None

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        want = restricted_size(self.L, self.order) if self.order is not None else SpectralSignal.zeros(self.L).coeffs.size
        if self.coeffs.shape[-1] != want:
            raise BandLimitError(f"filter needs {want} coefficients, got {self.coeffs.shape[-1]}")

    @property
    def restricted(self) -> bool:
        return self.order is not None

    def dense(self) -> np.ndarray:
        """Full form: ``(L+1, S, S)``; restricted form: ``(L+1, S)`` indexed ``[l, n + L]``."""
        if self.restricted:
            return restricted_to_dense(self.coeffs, self.L, self.order)
        return SpectralSignal(self.L, self.coeffs).dense()

    @classmethod
    def from_dense(cls, dense: np.ndarray, order: Optional[int] = None) -> "Filter":
        if order is None:
            return cls(dense.shape[-3] - 1, SpectralSignal.from_dense(dense).coeffs)
        L = dense.shape[-2] - 1
        return cls(L, dense_to_restricted(dense, L, order), order)

    def embed(self) -> "Filter":
        """Full-form filter equal to this one at ``s = column(p)`` and zero elsewhere."""
        if not self.restricted:
            return self
        L = self.L
        full = np.zeros(self.coeffs.shape[:-1] + (L + 1, 2 * L + 1, 2 * L + 1), dtype=complex)
        s = coefficient_column(self.order)
        full[..., :, s + L] = self.dense()
        return Filter.from_dense(full)


def restricted_size(L: int, p: int) -> int:
    """``L(L+2)+1`` for ``p = 0`` and ``L(L+2)`` for ``|p| = 1``."""
    p = abs(int(p))
    return (L + 1) ** 2 - p**2 if p <= L else 0


def restricted_mask(L: int, p: int) -> np.ndarray:
    """Valid ``[l, n + L]`` slots of a restricted filter."""
    k = np.arange(-L, L + 1)
    l = np.arange(L + 1)[:, None]
    return (np.abs(k)[None, :] <= l) & (l >= abs(p))


def restricted_to_dense(coeffs: np.ndarray, L: int, p: int) -> np.ndarray:
    out = np.zeros(coeffs.shape[:-1] + (L + 1, 2 * L + 1), dtype=complex)
    out[..., restricted_mask(L, p)] = coeffs
    return out


def dense_to_restricted(dense: np.ndarray, L: int, p: int) -> np.ndarray:
    return dense[..., restricted_mask(L, p)]


def _check_same_band(x: SpectralSignal, psi: Filter) -> None:
    if x.L != psi.L:
        raise BandLimitError(f"band limits differ: signal {x.L}, filter {psi.L}")


def _degree_factor(L: int) -> np.ndarray:
    return 1.0 / (2 * np.arange(L + 1) + 1.0)


def conv_left(xhat: SpectralSignal, psi: Filter) -> SpectralSignal:
    """Left convolution ``yhat^l_{m,n} = (1/(2l+1)) sum_s xhat^l_{m,s} conj(psi^l_{n,s})``."""
    psi = psi.embed()
    _check_same_band(xhat, psi)
    X, P = xhat.dense(), psi.dense()
    Y = np.einsum("...lms,lns->...lmn", X, np.conj(P)) * _degree_factor(xhat.L)[:, None, None]
    return SpectralSignal.from_dense(Y)


def conv_left_restricted(xhat: SpectralSignal, psi: Filter) -> SpectralSignal:
    """Left convolution of an ``X_p`` signal with a filter restricted to ``p``.

    ``yhat^l_{m,n} = (1/(2l+1)) xhat^l_{m,c} conj(psi^l_n)`` with ``c`` the
    column of order ``p``.  The output is not in a single ``X_q`` until smoothed.
    """
    if not psi.restricted:
        raise OrderMismatchError("conv_left_restricted needs a restricted filter")
    _check_same_band(xhat, psi)
    p = psi.order
    if xhat.order is not None and xhat.order != p:
        raise OrderMismatchError(f"signal is tagged X_{xhat.order}, filter restricted to {p}")
    xhat.verify_order(p)
    col = xhat.column(coefficient_column(p))  # (..., L+1, S)
    Y = col[..., :, :, None] * np.conj(psi.dense())[..., :, None, :]
    Y = Y * _degree_factor(xhat.L)[:, None, None] * degree_mask(xhat.L)
    return SpectralSignal.from_dense(Y)


def cov_right(xhat: SpectralSignal, psi: Filter) -> SpectralSignal:
    """Right covariance ``yhat^l_{m,n} = (1/(2l+1)) sum_s xhat^l_{s,n} conj(psi^l_{s,m})``."""
    psi = psi.embed()
    _check_same_band(xhat, psi)
    X, P = xhat.dense(), psi.dense()
    Y = np.einsum("...lsn,lsm->...lmn", X, np.conj(P)) * _degree_factor(xhat.L)[:, None, None]
    return SpectralSignal.from_dense(Y, order=xhat.order)


def smooth(xhat: SpectralSignal, q: int) -> SpectralSignal:
    """Orthogonal projection onto ``X_q``: keep one coefficient column, zero the rest."""
    if abs(q) > xhat.L:
        raise BandLimitError(f"|q| = {abs(q)} exceeds band limit {xhat.L}")
    n = coefficient_column(q)
    return SpectralSignal.from_column(xhat.column(n), n, order=q)


def pool(xhat: SpectralSignal, L_out: int) -> SpectralSignal:
    """Drop every degree above ``L_out``."""
    if L_out > xhat.L or L_out < 0:
        raise BandLimitError(f"cannot pool band limit {xhat.L} to {L_out}")
    n = SpectralSignal.zeros(L_out).coeffs.size
    return SpectralSignal(L_out, xhat.coeffs[..., :n].copy(), xhat.order)


def unpool(xhat: SpectralSignal, L_out: int) -> SpectralSignal:
    """Zero-pad degrees ``L+1 .. L_out``."""
    if L_out < xhat.L:
        raise BandLimitError(f"cannot unpool band limit {xhat.L} to {L_out}")
    out = SpectralSignal.zeros(L_out, xhat.coeffs.shape[:-1], xhat.order)
    out.coeffs[..., : xhat.coeffs.shape[-1]] = xhat.coeffs
    return out


def translation_blocks(L: int, B) -> list[np.ndarray]:
    """``b^l_{m,n} = D^l_{-m,-n}(B^-1)`` for ``l <= L``."""
    B = check_rotation(B)
    a, b, c = matrix_to_euler(B.T)
    return [wigner_D(l, a, b, c)[::-1, ::-1] for l in range(L + 1)]


def rotate_dense(X: np.ndarray, blocks: list[np.ndarray], column: bool = False) -> np.ndarray:
    """Left translation of dense ``(..., L+1, S, S)`` or, with ``column``, ``(..., L+1, S)`` arrays."""
    L = X.shape[-2] - 1 if column else X.shape[-3] - 1
    out = np.zeros_like(X)
    for l in range(L + 1):
        sl = slice(L - l, L + l + 1)
        if column:
            out[..., l, sl] = np.einsum("sm,...s->...m", blocks[l], X[..., l, sl])
        else:
            out[..., l, sl, sl] = np.einsum("sm,...sn->...mn", blocks[l], X[..., l, sl, sl])
    return out


def rotate_spectral(xhat: SpectralSignal, B) -> SpectralSignal:
    """Exact left translation ``F(l_B x)^l_{m,n} = sum_s xhat^l_{s,n} b^l_{s,m}``."""
    blocks = translation_blocks(xhat.L, B)
    return SpectralSignal.from_dense(rotate_dense(xhat.dense(), blocks), order=xhat.order)
