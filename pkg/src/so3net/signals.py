"""Grids, signal containers, Euler-angle geometry and sphere <-> SO(3) association.

Conventions
-----------
* A rotation is ``A = Z(alpha) Y(beta) Z(gamma)`` with ``alpha, gamma`` in
  ``[0, 2pi)`` and ``beta`` in ``[0, pi]``.
* Spatial samples are stored with axes ``(alpha, beta, gamma)`` after any
  leading batch/channel axes.
* Spectral coefficients ``xhat[l, m, n]`` follow ``x = sum xhat^l_{-m,-n} D^l_{m,n}``.
  Since ``D^l_{m,n}`` lies in ``X_n``, a signal in ``X_p`` has its only nonzero
  column at ``n = -p`` (see :func:`coefficient_column`).
* Sphere fields are stored latitude-major, ``values[k_colat, j_lon]``, with
  colatitude nodes including both poles.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import BandLimitError, GridMismatchError, NotOrthogonalError, OrderMismatchError
from .wigner import n_coeffs

TAU = 2.0 * np.pi


def coefficient_column(p: int) -> int:
    """Column index ``n`` carrying a signal of equivariance order ``p``."""
    return -int(p)


# ---------------------------------------------------------------------------
# rotations


def rot_z(theta) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(theta) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(theta) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def euler_to_matrix(alpha, beta, gamma) -> np.ndarray:
    """``Z(alpha) Y(beta) Z(gamma)`` written out entrywise; broadcasts over angle arrays."""
    alpha, beta, gamma = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (alpha, beta, gamma)))
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    A = np.empty(alpha.shape + (3, 3))
    A[..., 0, 0] = ca * cb * cg - sa * sg
    A[..., 0, 1] = -cg * sa - ca * cb * sg
    A[..., 0, 2] = ca * sb
    A[..., 1, 0] = ca * sg + cb * cg * sa
    A[..., 1, 1] = ca * cg - cb * sa * sg
    A[..., 1, 2] = sa * sb
    A[..., 2, 0] = -cg * sb
    A[..., 2, 1] = sb * sg
    A[..., 2, 2] = cb
    return A


def check_rotation(A, tol: float = 1e-10) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (3, 3):
        raise NotOrthogonalError(f"expected (..., 3, 3) matrices, got shape {A.shape}")
    eye = np.swapaxes(A, -1, -2) @ A - np.eye(3)
    if np.abs(eye).max(initial=0.0) > tol or np.abs(np.linalg.det(A) - 1.0).max(initial=0.0) > tol:
        raise NotOrthogonalError("matrix is not a rotation")
    return A


def matrix_to_euler(A, gimbal_tol: float = 1e-12):
    """Inverse of :func:`euler_to_matrix`; uses ``gamma = 0`` on the gimbal locus ``|A33| = 1``.

    Broadcasts over leading axes and returns ``(alpha, beta, gamma)``.
    """
    A = check_rotation(A)
    beta = np.arccos(np.clip(A[..., 2, 2], -1.0, 1.0))
    sb = np.hypot(A[..., 0, 2], A[..., 1, 2])
    regular = sb > gimbal_tol
    alpha = np.where(regular, np.arctan2(A[..., 1, 2], A[..., 0, 2]), 0.0)
    gamma = np.where(regular, np.arctan2(A[..., 2, 1], -A[..., 2, 0]), 0.0)
    north = ~regular & (A[..., 2, 2] > 0)
    south = ~regular & (A[..., 2, 2] <= 0)
    alpha = np.where(north, np.arctan2(A[..., 1, 0], A[..., 0, 0]), alpha)
    alpha = np.where(south, np.arctan2(-A[..., 1, 0], -A[..., 0, 0]), alpha)
    beta = np.where(north, 0.0, np.where(south, np.pi, beta))
    alpha = np.mod(alpha, TAU)
    gamma = np.mod(gamma, TAU)
    # mod can return TAU itself for tiny negative inputs
    alpha = np.where(alpha >= TAU, 0.0, alpha)
    gamma = np.where(gamma >= TAU, 0.0, gamma)
    if np.ndim(alpha) == 0:
        return float(alpha), float(beta), float(gamma)
    return alpha, beta, gamma


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation: alpha, gamma uniform and cos(beta) uniform."""
    alpha, gamma = rng.uniform(0.0, TAU, size=2)
    beta = np.arccos(rng.uniform(-1.0, 1.0))
    return euler_to_matrix(alpha, beta, gamma)


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class EulerGrid:
    """Equiangular grid: ``alpha_j = 2 pi j / n_alpha``, ``beta_k = pi k / (n_beta - 1)``, ``gamma_i = 2 pi i / n_gamma``."""

    n_alpha: int
    n_beta: int
    n_gamma: int

    def __post_init__(self):
        if self.n_alpha < 1 or self.n_gamma < 1 or self.n_beta < 2:
            raise ValueError(f"degenerate grid {self}")

    @classmethod
    def for_bandlimit(cls, L: int, oversample: int = 1) -> "EulerGrid":
        n = oversample * (2 * L + 2)
        return cls(n, n + 1, n)

    @property
    def alpha(self) -> np.ndarray:
        return TAU * np.arange(self.n_alpha) / self.n_alpha

    @property
    def beta(self) -> np.ndarray:
        return np.pi * np.arange(self.n_beta) / (self.n_beta - 1)

    @property
    def gamma(self) -> np.ndarray:
        return TAU * np.arange(self.n_gamma) / self.n_gamma

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_alpha, self.n_beta, self.n_gamma)

    def supports(self, L: int) -> bool:
        return self.n_alpha >= 2 * L + 1 and self.n_gamma >= 2 * L + 1 and self.n_beta >= 2 * L + 2

    def check(self, L: int) -> None:
        if not self.supports(L):
            raise BandLimitError(f"grid {self.shape} too coarse for band limit {L}")


@dataclass(frozen=True)
class QuadratureGrid:
    """Product grid with Gauss-Legendre nodes in ``cos(beta)``; integrates band-limited products exactly.

    ``weights[k]`` already includes the Haar factor so that
    ``sum_{j,k,i} weights[k] f(alpha_j, beta_k, gamma_i)`` approximates ``int f dmu``.
    """

    n_alpha: int
    n_beta: int
    n_gamma: int

    @classmethod
    def for_bandlimit(cls, L: int) -> "QuadratureGrid":
        return cls(2 * L + 2, L + 2, 2 * L + 2)

    @property
    def alpha(self) -> np.ndarray:
        return TAU * np.arange(self.n_alpha) / self.n_alpha

    @property
    def gamma(self) -> np.ndarray:
        return TAU * np.arange(self.n_gamma) / self.n_gamma

    @property
    def beta(self) -> np.ndarray:
        return np.arccos(_gauss_legendre(self.n_beta)[0])

    @property
    def weights(self) -> np.ndarray:
        # dmu = (1/8pi^2) sin(beta) dalpha dbeta dgamma = (1/8pi^2) d(cos beta) ...
        return _gauss_legendre(self.n_beta)[1] / (2.0 * self.n_alpha * self.n_gamma)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_alpha, self.n_beta, self.n_gamma)


@lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def haar_inner(grid: QuadratureGrid, x: np.ndarray, y: np.ndarray) -> complex:
    """``<x, y> = int x conj(y) dmu`` on a :class:`QuadratureGrid`."""
    return complex(np.einsum("...jki,k->...", x * np.conj(y), grid.weights))


# ---------------------------------------------------------------------------
# containers


@dataclass
class SpatialSignalSO3:
    grid: EulerGrid
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.shape[-3:] != self.grid.shape:
            raise GridMismatchError(f"samples {self.samples.shape} do not match grid {self.grid.shape}")


@lru_cache(maxsize=None)
def ragged_index(L: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(l, m, n)`` for every ragged slot, l-major then m then n."""
    ls, ms, ns = [], [], []
    for l in range(L + 1):
        k = np.arange(-l, l + 1)
        mm, nn = np.meshgrid(k, k, indexing="ij")
        ls.append(np.full(mm.size, l))
        ms.append(mm.ravel())
        ns.append(nn.ravel())
    out = tuple(np.concatenate(a) for a in (ls, ms, ns))
    for a in out:
        a.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def degree_mask(L: int) -> np.ndarray:
    """Boolean ``(L+1, 2L+1, 2L+1)`` mask of valid ``|m|, |n| <= l`` slots."""
    k = np.arange(-L, L + 1)
    l = np.arange(L + 1)[:, None, None]
    mask = (np.abs(k)[None, :, None] <= l) & (np.abs(k)[None, None, :] <= l)
    mask.setflags(write=False)
    return mask


def ragged_to_dense(coeffs: np.ndarray, L: int) -> np.ndarray:
    coeffs = np.asarray(coeffs)
    l, m, n = ragged_index(L)
    out = np.zeros(coeffs.shape[:-1] + (L + 1, 2 * L + 1, 2 * L + 1), dtype=complex)
    out[..., l, m + L, n + L] = coeffs
    return out


def dense_to_ragged(dense: np.ndarray, L: int) -> np.ndarray:
    l, m, n = ragged_index(L)
    return dense[..., l, m + L, n + L]


@dataclass
class SpectralSignal:
    """Ragged coefficients ``xhat^l_{m,n}`` with optional leading channel axes.

    ``order`` is the advisory equivariance tag ``p``; use :meth:`verify_order`
    to check it against the data.
    """

    L: int
    coeffs: np.ndarray
    order: Optional[int] = None

    def __post_init__(self):
        if self.L < 0:
            raise BandLimitError(f"band limit must be >= 0, got {self.L}")
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape[-1] != n_coeffs(self.L):
            raise BandLimitError(
                f"expected {n_coeffs(self.L)} coefficients for L={self.L}, got {self.coeffs.shape[-1]}"
            )

    @classmethod
    def zeros(cls, L: int, shape: tuple = (), order: Optional[int] = None) -> "SpectralSignal":
        return cls(L, np.zeros(tuple(shape) + (n_coeffs(L),), dtype=complex), order)

    @classmethod
    def from_dense(cls, dense: np.ndarray, order: Optional[int] = None) -> "SpectralSignal":
        L = dense.shape[-3] - 1
        return cls(L, dense_to_ragged(dense, L), order)

    def dense(self) -> np.ndarray:
        return ragged_to_dense(self.coeffs, self.L)

    def block(self, l: int) -> np.ndarray:
        """Coefficient matrix of degree ``l`` (rows m, cols n, from -l)."""
        start = n_coeffs(l - 1) if l > 0 else 0
        size = (2 * l + 1) ** 2
        return self.coeffs[..., start : start + size].reshape(self.coeffs.shape[:-1] + (2 * l + 1, 2 * l + 1))

    def column(self, n: int) -> np.ndarray:
        """Column ``n`` as a ``(..., L+1, 2L+1)`` array indexed ``[l, m + L]``."""
        if abs(n) > self.L:
            return np.zeros(self.coeffs.shape[:-1] + (self.L + 1, 2 * self.L + 1), dtype=complex)
        return self.dense()[..., n + self.L]

    @classmethod
    def from_column(cls, col: np.ndarray, n: int, order: Optional[int] = None) -> "SpectralSignal":
        L = col.shape[-2] - 1
        dense = np.zeros(col.shape[:-2] + (L + 1, 2 * L + 1, 2 * L + 1), dtype=complex)
        if abs(n) <= L:
            dense[..., n + L] = col * degree_mask(L)[:, :, n + L]
        return cls.from_dense(dense, order)

    def norm(self) -> float:
        """Parseval norm ``sqrt(sum |xhat|^2 / (2l+1))`` (the L2 norm on SO(3))."""
        l = ragged_index(self.L)[0]
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2 / (2 * l + 1))))

    def inner(self, other: "SpectralSignal") -> complex:
        l = ragged_index(self.L)[0]
        return complex(np.sum(self.coeffs * np.conj(other.coeffs) / (2 * l + 1)))

    def off_column_residue(self, p: int) -> float:
        """Largest coefficient magnitude outside the column of order ``p``, relative to the largest overall."""
        _, _, n = ragged_index(self.L)
        scale = np.abs(self.coeffs).max(initial=0.0)
        off = np.abs(self.coeffs[..., n != coefficient_column(p)]).max(initial=0.0)
        return off / scale if scale > 0 else 0.0

    def verify_order(self, p: Optional[int] = None, tol: float = 1e-8) -> None:
        p = self.order if p is None else p
        if p is None:
            return
        if self.off_column_residue(p) > tol:
            raise OrderMismatchError(f"signal is not in X_{p} (off-column residue {self.off_column_residue(p):.3e})")

    def __add__(self, other: "SpectralSignal") -> "SpectralSignal":
        order = self.order if self.order == other.order else None
        return SpectralSignal(self.L, self.coeffs + other.coeffs, order)

    def __sub__(self, other: "SpectralSignal") -> "SpectralSignal":
        order = self.order if self.order == other.order else None
        return SpectralSignal(self.L, self.coeffs - other.coeffs, order)

    def scale(self, c) -> "SpectralSignal":
        return SpectralSignal(self.L, self.coeffs * c, self.order)


@dataclass
class SphereField:
    """Scalar ``T`` or tangent vector ``(U east, V north)`` samples on a lat/lon grid.

    ``values`` has shape ``(n_lat, n_lon)`` for scalars and ``(n_lat, n_lon, 2)``
    for vectors.  Row ``k`` is colatitude ``pi k / (n_lat - 1)``.
    """

    kind: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.kind not in ("scalar", "vector"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        want = 2 if self.kind == "scalar" else 3
        if self.values.ndim != want or (self.kind == "vector" and self.values.shape[-1] != 2):
            raise ValueError(f"bad value shape {self.values.shape} for {self.kind} field")
        if self.values.shape[0] < 2:
            raise ValueError("need at least the two pole rows")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")
        if self.kind == "vector":
            self.values[0] = 0.0
            self.values[-1] = 0.0

    @classmethod
    def vector(cls, u, v) -> "SphereField":
        return cls("vector", np.stack([np.asarray(u, float), np.asarray(v, float)], axis=-1))

    @property
    def n_lat(self) -> int:
        return self.values.shape[0]

    @property
    def n_lon(self) -> int:
        return self.values.shape[1]

    @property
    def colatitude(self) -> np.ndarray:
        return np.pi * np.arange(self.n_lat) / (self.n_lat - 1)

    @property
    def longitude(self) -> np.ndarray:
        return TAU * np.arange(self.n_lon) / self.n_lon

    @property
    def u(self) -> np.ndarray:
        return self.values[..., 0]

    @property
    def v(self) -> np.ndarray:
        return self.values[..., 1]


# ---------------------------------------------------------------------------
# sphere <-> SO(3)


def _bilinear(values: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of ``values[k_colat, j_lon, ...]`` at (longitude, colatitude) points."""
    n_lat, n_lon = values.shape[:2]
    a = np.mod(alpha, TAU) * n_lon / TAU
    b = np.clip(beta, 0.0, np.pi) * (n_lat - 1) / np.pi
    j0 = np.floor(a).astype(int) % n_lon
    k0 = np.minimum(np.floor(b).astype(int), n_lat - 2)
    ta = a - np.floor(a)
    tb = b - k0
    j1 = (j0 + 1) % n_lon
    extra = (slice(None),) + (None,) * (values.ndim - 2)
    ta = ta[extra] if values.ndim > 2 else ta
    tb = tb[extra] if values.ndim > 2 else tb
    return (
        (1 - ta) * (1 - tb) * values[k0, j0]
        + ta * (1 - tb) * values[k0, j1]
        + (1 - ta) * tb * values[k0 + 1, j0]
        + ta * tb * values[k0 + 1, j1]
    )


def _field_on_grid(f: SphereField, grid: EulerGrid) -> np.ndarray:
    """Field values at grid nodes as ``(n_alpha, n_beta, ...)``."""
    if f.n_lon == grid.n_alpha and f.n_lat == grid.n_beta:
        return np.swapaxes(f.values, 0, 1)
    aa, bb = np.meshgrid(grid.alpha, grid.beta, indexing="ij")
    out = _bilinear(f.values, aa.ravel(), bb.ravel())
    return out.reshape(aa.shape + f.values.shape[2:])


def default_grid_for(f: SphereField) -> EulerGrid:
    return EulerGrid(f.n_lon, f.n_lat, f.n_lon)


def associate_scalar(f: SphereField, grid: Optional[EulerGrid] = None) -> SpatialSignalSO3:
    """``x(alpha, beta, gamma) = f(p(alpha, beta))`` for every gamma."""
    if f.kind != "scalar":
        raise OrderMismatchError("associate_scalar needs a scalar field")
    grid = grid or default_grid_for(f)
    vals = _field_on_grid(f, grid)
    samples = np.repeat(vals[:, :, None], grid.n_gamma, axis=2).astype(complex)
    return SpatialSignalSO3(grid, samples)


def associate_vector(xi: SphereField, grid: Optional[EulerGrid] = None) -> SpatialSignalSO3:
    """``x(alpha, beta, gamma) = i (U + i V) exp(-i gamma)``; zero at the poles."""
    if xi.kind != "vector":
        raise OrderMismatchError("associate_vector needs a vector field")
    grid = grid or default_grid_for(xi)
    vals = _field_on_grid(xi, grid)
    w = 1j * (vals[..., 0] + 1j * vals[..., 1])
    w[:, 0] = 0.0
    w[:, -1] = 0.0
    samples = w[:, :, None] * np.exp(-1j * grid.gamma)[None, None, :]
    return SpatialSignalSO3(grid, samples)


def _gamma_profile_residue(x: SpatialSignalSO3, p: int) -> float:
    g = x.grid.gamma
    flat = x.samples * np.exp(1j * p * g)  # constant along gamma iff x in X_p
    spread = np.abs(flat - flat[..., :1]).max(initial=0.0)
    scale = np.abs(x.samples).max(initial=0.0)
    return spread / scale if scale > 0 else 0.0


def extract_vector(x: SpatialSignalSO3, tol: float = 1e-8) -> SphereField:
    """Vector field of an ``X_1`` signal: ``U = Im x``, ``V = -Re x`` read at gamma = 0."""
    if x.samples.ndim != 3:
        raise ValueError("extract_vector takes a single-channel signal")
    residue = _gamma_profile_residue(x, 1)
    if residue > tol:
        raise OrderMismatchError(f"signal is not in X_1 (gamma residue {residue:.3e})")
    w = x.samples[:, :, 0].T
    return SphereField.vector(w.imag, -w.real)


def extract_scalar(x: SpatialSignalSO3, tol: float = 1e-8) -> SphereField:
    """Real scalar field of an ``X_0`` signal read at gamma = 0."""
    if x.samples.ndim != 3:
        raise ValueError("extract_scalar takes a single-channel signal")
    residue = _gamma_profile_residue(x, 0)
    if residue > tol:
        raise OrderMismatchError(f"signal is not in X_0 (gamma residue {residue:.3e})")
    return SphereField("scalar", x.samples[:, :, 0].T.real)


def field_to_complex(f: SphereField) -> np.ndarray:
    """Value at gamma = 0 of the associated function, ``(n_lat, n_lon)`` complex."""
    if f.kind == "vector":
        return -f.v + 1j * f.u
    return f.values.astype(complex)


def complex_to_field(w: np.ndarray, kind: str) -> SphereField:
    if kind == "vector":
        return SphereField.vector(w.imag, -w.real)
    return SphereField("scalar", w.real)


# ---------------------------------------------------------------------------
# spatial left translation (test oracle)


def _trilinear_periodic(samples: np.ndarray, grid: EulerGrid, alpha, beta, gamma) -> np.ndarray:
    na, nb, ng = grid.shape
    # beta in (pi, 2pi) maps back through Z(a)Y(b)Z(c) = Z(a+pi)Y(2pi-b)Z(c+pi)
    beta = np.mod(beta, TAU)
    flip = beta > np.pi
    alpha = np.where(flip, alpha + np.pi, alpha)
    gamma = np.where(flip, gamma + np.pi, gamma)
    beta = np.where(flip, TAU - beta, beta)
    a = np.mod(alpha, TAU) * na / TAU
    b = beta * (nb - 1) / np.pi
    c = np.mod(gamma, TAU) * ng / TAU
    j0 = np.floor(a).astype(int) % na
    k0 = np.minimum(np.floor(b).astype(int), nb - 2)
    i0 = np.floor(c).astype(int) % ng
    ta, tb, tc = a - np.floor(a), b - k0, c - np.floor(c)
    j1, k1, i1 = (j0 + 1) % na, k0 + 1, (i0 + 1) % ng
    out = 0.0
    for jj, wa in ((j0, 1 - ta), (j1, ta)):
        for kk, wb in ((k0, 1 - tb), (k1, tb)):
            for ii, wc in ((i0, 1 - tc), (i1, tc)):
                out = out + wa * wb * wc * samples[..., jj, kk, ii]
    return out


def left_translate_spatial(x: SpatialSignalSO3, B) -> SpatialSignalSO3:
    """``(l_B x)(A) = x(B^-1 A)`` by trilinear interpolation in Euler angles."""
    B = check_rotation(B)
    g = x.grid
    aa, bb, cc = np.meshgrid(g.alpha, g.beta, g.gamma, indexing="ij")
    A = euler_to_matrix(aa, bb, cc)
    C = np.einsum("ji,...jk->...ik", B, A)  # B^T A
    a, b, c = matrix_to_euler(C)
    return SpatialSignalSO3(g, _trilinear_periodic(x.samples, g, a, b, c))


# ---------------------------------------------------------------------------
# metrics on sphere fields


def _pair_difference(X: SphereField, Y: SphereField) -> np.ndarray:
    if X.kind != Y.kind or X.values.shape != Y.values.shape:
        raise GridMismatchError(f"fields differ: {X.kind}{X.values.shape} vs {Y.kind}{Y.values.shape}")
    d = X.values - Y.values
    if X.kind == "vector":
        return np.hypot(d[..., 0], d[..., 1])
    return np.abs(d)


def distance(X: SphereField, Y: SphereField) -> float:
    """``(1 / (A B)) sum sin(beta) |x - y|`` over the ``B x A`` lat/lon nodes."""
    mag = _pair_difference(X, Y)
    w = np.sin(X.colatitude)[:, None]
    return float(np.sum(w * mag) / (X.n_lat * X.n_lon))


def loss_weighted_mse(X: SphereField, Y: SphereField) -> float:
    """``sum sin(beta)^2 [(x1 - y1)^2 + (x2 - y2)^2]``."""
    mag = _pair_difference(X, Y)
    w = np.sin(X.colatitude)[:, None] ** 2
    return float(np.sum(w * mag**2))
