"""Rotation-equivariant layers, a spectral UNet, reverse-mode gradients and training.

Hidden features are carried as coefficient columns: a ``C``-channel signal in
``X_p`` is an array ``(B, C, L+1, S)`` indexed ``[b, c, l, m + L]`` holding
column ``n = -p`` (see :func:`so3net.signals.coefficient_column`).

Gradients of a real loss with respect to a complex array ``z`` use the
convention ``G = dL/dRe(z) + i dL/dIm(z)``.  With it the gradient through a
complex-linear map ``A`` is ``A^H G`` and gradient descent reads ``z -= lr G``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BandLimitError, NonFiniteLossError, OrderMismatchError, TapeConsumedError
from .signals import EulerGrid, SpectralSignal, coefficient_column, degree_mask
from .so3fft import (
    FftPlan,
    analyze_column,
    analyze_column_adjoint,
    synthesize,
    synthesize_adjoint,
    synthesize_column_sphere,
    synthesize_column_sphere_adjoint,
)
from .spectral_ops import restricted_mask, restricted_size, rotate_dense, translation_blocks

log = logging.getLogger(__name__)

ACTIVATIONS = ("leaky_relu", "cubic", "identity")
CUBIC_GAIN = 0.5
SLOPE_RANGE = (1e-6, 1.0)
DEFAULT_OVERSAMPLE = 4  # activation grid factor; sets the aliasing error of leaky ReLU


_SIGN_LOG: Optional[list] = None


class record_activation_signs:
    """Context manager collecting the sign pattern of every leaky-ReLU input.

    Used by gradient checks to tell whether a finite-difference window crossed a kink.
    """

    def __enter__(self) -> list:
        global _SIGN_LOG
        self._prev, _SIGN_LOG = _SIGN_LOG, []
        return _SIGN_LOG

    def __exit__(self, *exc):
        global _SIGN_LOG
        _SIGN_LOG = self._prev
        return False


@lru_cache(maxsize=None)
def layer_plan(L: int, oversample: int) -> FftPlan:
    """Shared transform plan for activations at band limit ``L``."""
    return FftPlan(L, EulerGrid.for_bandlimit(L, oversample))


# ---------------------------------------------------------------------------
# tape


class Var:
    """A value on the tape.  ``name`` is set for parameters."""

    __slots__ = ("value", "name")

    def __init__(self, value, name: Optional[str] = None):
        self.value = value
        self.name = name


class Tape:
    """Records adjoint closures during a forward pass."""

    def __init__(self):
        self._records: list[tuple[tuple[Var, ...], Var, Callable]] = []
        self.consumed = False

    def record(self, inputs: tuple, output: Var, vjp: Callable) -> Var:
        if self.consumed:
            raise TapeConsumedError("tape already replayed")
        self._records.append((inputs, output, vjp))
        return output

    def __len__(self) -> int:
        return len(self._records)


def _record(tape: Optional[Tape], inputs: tuple, value, vjp: Callable) -> Var:
    out = Var(value)
    if tape is not None:
        tape.record(inputs, out, vjp)
    return out


def backward(tape: Tape, output: Var, seed) -> dict[str, np.ndarray]:
    """Replay the tape in reverse from ``output`` with gradient ``seed``.

    Returns gradients of every named :class:`Var` reached, keyed by name.
    """
    if tape.consumed:
        raise TapeConsumedError("tape already replayed")
    tape.consumed = True
    grads: dict[int, np.ndarray] = {id(output): seed}
    params: dict[int, Var] = {}
    for inputs, out, vjp in reversed(tape._records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for v, gi in zip(inputs, vjp(g)):
            if gi is None:
                continue
            if v.name is not None:
                params[id(v)] = v
            k = id(v)
            grads[k] = grads[k] + gi if k in grads else gi
    tape._records.clear()
    return {v.name: grads.get(k, np.zeros_like(v.value)) for k, v in params.items()}


# ---------------------------------------------------------------------------
# primitive ops with explicit adjoints


def degree_weights(L: int) -> np.ndarray:
    return 1.0 / (2 * np.arange(L + 1) + 1.0)


def op_conv(tape, x: Var, w: Var, L: int, p: int) -> Var:
    """Restricted convolution summed over input channels, conjugation dropped.

    ``Y[b, o, l, m, n] = sum_c X[b, c, l, m] W[o, c, l, n] / (2l+1)``, with ``W``
    expanded from its restricted storage.
    """
    mask = restricted_mask(L, p)
    W = np.zeros(w.value.shape[:2] + mask.shape, dtype=complex)
    W[..., mask] = w.value
    f = degree_weights(L)
    X = x.value
    Y = np.einsum("bclm,ocln->bolmn", X, W) * f[:, None, None]

    def vjp(G):
        Gf = G * f[:, None, None]
        gX = np.einsum("bolmn,ocln->bclm", Gf, np.conj(W))
        gW = np.einsum("bclm,bolmn->ocln", np.conj(X), Gf)
        return gX * degree_mask(L)[:, :, L], gW[..., mask]

    return _record(tape, (x, w), Y, vjp)


def leaky_relu(z: np.ndarray, slope: float) -> np.ndarray:
    """Leaky ReLU on real and imaginary parts separately (``max(t, slope t)`` for slope <= 1)."""
    v = np.ascontiguousarray(z, dtype=complex).view(np.float64)
    out = np.multiply(v, slope)
    np.maximum(v, out, out=out)
    return out.view(complex)


def cubic(z: np.ndarray) -> np.ndarray:
    """``z + c z |z|^2``: commutes with multiplication by unit complex numbers."""
    return z + CUBIC_GAIN * z * (z.real**2 + z.imag**2)


def op_spatial_activation(tape, y: Var, slope: Var, L: int, q: int, kind: str, oversample: int) -> Var:
    """Synthesize dense ``Y``, apply the activation pointwise, keep column ``-q`` of the analysis."""
    plan = layer_plan(L, oversample)
    n = coefficient_column(q)
    z = synthesize(plan, y.value)
    a = float(slope.value)
    if kind == "leaky_relu":
        if _SIGN_LOG is not None:
            _SIGN_LOG.append(np.packbits(z.view(np.float64) > 0))
        out = analyze_column(plan, leaky_relu(z, a), n)
    elif kind == "cubic":
        out = analyze_column(plan, cubic(z), n)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    del z  # recomputed in the adjoint; the oversampled samples dominate memory

    def vjp(G):
        z = synthesize(plan, y.value)
        gs = analyze_column_adjoint(plan, G, n)
        if kind == "leaky_relu":
            re_pos, im_pos = z.real > 0, z.imag > 0
            gz = np.where(re_pos, gs.real, a * gs.real) + 1j * np.where(im_pos, gs.imag, a * gs.imag)
            gslope = np.sum(np.where(re_pos, 0.0, z.real) * gs.real) + np.sum(np.where(im_pos, 0.0, z.imag) * gs.imag)
            gslope = np.asarray(gslope)
        else:
            r = z.real**2 + z.imag**2
            # d sigma / dz = 1 + 2c|z|^2, d sigma / d conj(z) = c z^2
            gz = (1 + 2 * CUBIC_GAIN * r) * gs + CUBIC_GAIN * z**2 * np.conj(gs)
            gslope = None
        return synthesize_adjoint(plan, gz), gslope

    return _record(tape, (y, slope), out, vjp)


def op_column(tape, y: Var, L: int, q: int) -> Var:
    """Smoothing of a dense array: keep column ``-q``."""
    n = coefficient_column(q)
    if abs(n) > L:
        raise BandLimitError(f"|q| = {abs(q)} exceeds band limit {L}")
    out = y.value[..., n + L] * degree_mask(L)[:, :, n + L]

    def vjp(G):
        g = np.zeros(y.value.shape, dtype=complex)
        g[..., n + L] = G * degree_mask(L)[:, :, n + L]
        return (g,)

    return _record(tape, (y,), out, vjp)


def op_bias(tape, x: Var, b: Var, L: int) -> Var:
    """Add a real constant per channel to the ``(l, m) = (0, 0)`` coefficient."""
    out = x.value.copy()
    out[:, :, 0, L] += b.value

    def vjp(G):
        return G, np.sum(G[:, :, 0, L].real, axis=0)

    return _record(tape, (x, b), out, vjp)


def op_pool(tape, x: Var, L_out: int) -> Var:
    L = x.value.shape[-2] - 1
    if not 0 <= L_out <= L:
        raise BandLimitError(f"cannot pool band limit {L} to {L_out}")
    sl = slice(L - L_out, L + L_out + 1)
    out = x.value[..., : L_out + 1, sl].copy()

    def vjp(G):
        g = np.zeros(x.value.shape, dtype=complex)
        g[..., : L_out + 1, sl] = G
        return (g,)

    return _record(tape, (x,), out, vjp)


def op_unpool(tape, x: Var, L_out: int) -> Var:
    L = x.value.shape[-2] - 1
    if L_out < L:
        raise BandLimitError(f"cannot unpool band limit {L} to {L_out}")
    sl = slice(L_out - L, L_out + L + 1)
    out = np.zeros(x.value.shape[:-2] + (L_out + 1, 2 * L_out + 1), dtype=complex)
    out[..., : L + 1, sl] = x.value

    def vjp(G):
        return (G[..., : L + 1, sl].copy(),)

    return _record(tape, (x,), out, vjp)


def op_concat(tape, xs: Sequence[Var]) -> Var:
    sizes = [v.value.shape[1] for v in xs]
    out = np.concatenate([v.value for v in xs], axis=1)

    def vjp(G):
        return tuple(np.split(G, np.cumsum(sizes)[:-1], axis=1))

    return _record(tape, tuple(xs), out, vjp)


@lru_cache(maxsize=None)
def loss_plan(L: int) -> FftPlan:
    return FftPlan(L, EulerGrid.for_bandlimit(L))


def sphere_weights(plan: FftPlan, power: int) -> np.ndarray:
    return np.sin(plan.grid.beta)[None, :] ** power * np.ones((plan.grid.n_alpha, 1))


def op_weighted_mse(tape, x: Var, target: np.ndarray, L: int, q: int) -> Var:
    """Mean over the batch of ``sum sin(beta)^2 |x - y|^2`` on the sphere grid at gamma = 0."""
    plan = loss_plan(L)
    n = coefficient_column(q)
    d = synthesize_column_sphere(plan, x.value - target, n)
    w = sphere_weights(plan, 2)
    nb = x.value.shape[0]
    val = np.sum(w * (d.real**2 + d.imag**2)) / nb

    def vjp(G):
        return (float(G) * synthesize_column_sphere_adjoint(plan, 2.0 * w * d / nb, n),)

    return _record(tape, (x,), np.asarray(val), vjp)


# ---------------------------------------------------------------------------
# layers and models


@dataclass
class ConvLayer:
    """``x -> S_q(sigma(F^-1(conv(x, psi))))`` with restricted multi-channel filters."""

    in_channels: int
    out_channels: int
    p: int
    q: int
    L: int
    activation: str = "leaky_relu"
    oversample: int = DEFAULT_OVERSAMPLE
    learnable_slope: bool = True
    weights: np.ndarray = field(default=None, repr=False)
    bias: Optional[np.ndarray] = field(default=None, repr=False)
    slope: float = 0.01

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if max(abs(self.p), abs(self.q)) > self.L:
            raise BandLimitError(f"orders p={self.p}, q={self.q} exceed band limit {self.L}")
        shape = (self.out_channels, self.in_channels, restricted_size(self.L, self.p))
        if self.weights is None:
            self.weights = np.zeros(shape, dtype=complex)
        self.weights = np.asarray(self.weights, dtype=complex)
        if self.weights.shape != shape:
            raise BandLimitError(f"weights shape {self.weights.shape} != {shape}")
        if self.q == 0 and self.bias is None:
            self.bias = np.zeros(self.out_channels)
        if self.q != 0:
            self.bias = None

    @property
    def weights_per_pair(self) -> int:
        return restricted_size(self.L, self.p)

    def init(self, rng: np.random.Generator) -> "ConvLayer":
        """Complex Gaussian weights with per-degree variance ``(2l+1) / in_channels``."""
        mask = restricted_mask(self.L, self.p)
        l = np.broadcast_to(np.arange(self.L + 1)[:, None], mask.shape)[mask]
        std = np.sqrt((2 * l + 1) / self.in_channels / 2)
        shape = self.weights.shape
        self.weights = std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        return self

    def params(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.weights": self.weights}
        if self.bias is not None:
            out[f"{prefix}.bias"] = self.bias
        if self.activation == "leaky_relu" and self.learnable_slope:
            out[f"{prefix}.slope"] = np.asarray(self.slope, dtype=float)
        return out

    def set_params(self, prefix: str, values: dict[str, np.ndarray]) -> None:
        self.weights = np.asarray(values[f"{prefix}.weights"], dtype=complex)
        if self.bias is not None:
            self.bias = np.asarray(values[f"{prefix}.bias"], dtype=float)
        if f"{prefix}.slope" in values:
            self.slope = float(values[f"{prefix}.slope"])

    def apply(self, tape: Optional[Tape], x: Var, prefix: str = "layer") -> Var:
        if x.value.shape[-2:] != (self.L + 1, 2 * self.L + 1):
            raise BandLimitError(f"input shape {x.value.shape[-2:]} does not match band limit {self.L}")
        if x.value.shape[1] != self.in_channels:
            raise OrderMismatchError(f"expected {self.in_channels} channels, got {x.value.shape[1]}")
        w = Var(self.weights, f"{prefix}.weights")
        y = op_conv(tape, x, w, self.L, self.p)
        if self.activation == "identity":
            out = op_column(tape, y, self.L, self.q)
        else:
            name = f"{prefix}.slope" if self.activation == "leaky_relu" and self.learnable_slope else None
            slope = Var(np.asarray(self.slope, dtype=float), name)
            out = op_spatial_activation(tape, y, slope, self.L, self.q, self.activation, self.oversample)
        if self.bias is not None:
            out = op_bias(tape, out, Var(self.bias, f"{prefix}.bias"), self.L)
        return out

    def __call__(self, x: SpectralSignal) -> SpectralSignal:
        """Forward on a container with shape ``(C, n)`` or ``(B, C, n)``."""
        X, lead = _to_columns(x, self.p, self.in_channels)
        out = self.apply(None, Var(X)).value
        return _from_columns(out, self.q, lead)


def _to_columns(x: SpectralSignal, p: int, channels: int) -> tuple[np.ndarray, tuple]:
    if x.order is not None and x.order != p:
        raise OrderMismatchError(f"signal tagged X_{x.order}, expected X_{p}")
    x.verify_order(p)
    col = x.column(coefficient_column(p))
    lead = col.shape[:-2]
    if len(lead) == 1:
        col = col[None]
    if col.ndim != 4 or col.shape[1] != channels:
        raise OrderMismatchError(f"expected (B, {channels}, ...) channels, got {lead}")
    return col, lead


def _from_columns(col: np.ndarray, q: int, lead: tuple) -> SpectralSignal:
    if len(lead) == 1:
        col = col[0]
    return SpectralSignal.from_column(col, coefficient_column(q), order=q)


@dataclass
class UNetModel:
    """Spectral UNet: conv stages with pooling, a bottleneck, unpooling with skip concatenation.

    ``bands[i]`` and ``channels[i]`` describe stage ``i``; stage ``depth`` is the
    bottleneck.  Hidden layers run at order ``hidden``; the linear head maps to
    order ``q``.
    """

    in_channels: int = 1
    out_channels: int = 1
    p: int = 1
    q: int = 1
    hidden: int = 1
    bands: tuple = (16, 12, 8, 4)
    channels: tuple = (8, 16, 32, 64)
    convs_per_stage: int = 1
    activation: str = "leaky_relu"
    oversample: int = DEFAULT_OVERSAMPLE
    learnable_slope: bool = True
    input_scale: float = 1.0
    output_scale: float = 1.0
    layers: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.bands = tuple(int(b) for b in self.bands)
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.bands) != len(self.channels) or not self.bands:
            raise BandLimitError("band and channel schedules must have equal nonzero length")
        if any(b1 <= b2 for b1, b2 in zip(self.bands, self.bands[1:])):
            raise BandLimitError(f"band schedule must strictly decrease, got {self.bands}")
        if self.convs_per_stage < 1:
            raise ValueError("convs_per_stage must be >= 1")
        if not self.layers:
            self.layers = self._build()

    @property
    def depth(self) -> int:
        return len(self.bands) - 1

    @property
    def L(self) -> int:
        return self.bands[0]

    def _layer(self, cin, cout, p, q, L, activation=None) -> ConvLayer:
        return ConvLayer(
            cin, cout, p, q, L,
            activation=activation or self.activation,
            oversample=self.oversample,
            learnable_slope=self.learnable_slope,
        )

    def _stage(self, name, cin, cout, L, first_p) -> dict:
        out = {}
        p = first_p
        for k in range(self.convs_per_stage):
            out[f"{name}.{k}"] = self._layer(cin, cout, p, self.hidden, L)
            cin, p = cout, self.hidden
        return out

    def _build(self) -> dict:
        layers = {}
        d, B, C = self.depth, self.bands, self.channels
        cin, p = self.in_channels, self.p
        for i in range(d):
            layers.update(self._stage(f"enc{i}", cin, C[i], B[i], p))
            cin, p = C[i], self.hidden
        layers.update(self._stage("mid", cin, C[d], B[d], p))
        for i in reversed(range(d)):
            layers.update(self._stage(f"dec{i}", C[i + 1] + C[i], C[i], B[i], self.hidden))
        c_last = C[0] if d > 0 else C[d]
        layers["head"] = self._layer(c_last, self.out_channels, self.hidden, self.q, B[0], activation="identity")
        return layers

    def init(self, seed: int) -> "UNetModel":
        rng = np.random.default_rng(seed)
        for name in sorted(self.layers):
            self.layers[name].init(rng)
        return self

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers.items():
            out.update(layer.params(name))
        return out

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        for name, layer in self.layers.items():
            layer.set_params(name, values)

    def topology(self) -> dict:
        return {
            "kind": "unet",
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "p": self.p,
            "q": self.q,
            "hidden": self.hidden,
            "bands": list(self.bands),
            "channels": list(self.channels),
            "convs_per_stage": self.convs_per_stage,
            "activation": self.activation,
            "oversample": self.oversample,
            "learnable_slope": self.learnable_slope,
            "input_scale": self.input_scale,
            "output_scale": self.output_scale,
        }

    @classmethod
    def from_topology(cls, topo: dict) -> "UNetModel":
        keys = {k: v for k, v in topo.items() if k != "kind"}
        return cls(**keys)

    def _run_stage(self, tape, x, name):
        for k in range(self.convs_per_stage):
            key = f"{name}.{k}"
            x = self.layers[key].apply(tape, x, key)
        return x

    def apply(self, tape: Optional[Tape], x: Var) -> Var:
        d, B = self.depth, self.bands
        skips = []
        for i in range(d):
            x = self._run_stage(tape, x, f"enc{i}")
            skips.append(x)
            x = op_pool(tape, x, B[i + 1])
        x = self._run_stage(tape, x, "mid")
        for i in reversed(range(d)):
            x = op_unpool(tape, x, B[i])
            x = op_concat(tape, [x, skips[i]])
            x = self._run_stage(tape, x, f"dec{i}")
        return self.layers["head"].apply(tape, x, "head")

    def forward_columns(self, X: np.ndarray) -> np.ndarray:
        return self.apply(None, Var(X)).value

    def __call__(self, x: SpectralSignal) -> SpectralSignal:
        X, lead = _to_columns(x, self.p, self.in_channels)
        return _from_columns(self.forward_columns(X), self.q, lead)

    def predict(self, x: SpectralSignal) -> SpectralSignal:
        """Forward pass in data units: inputs divided by ``input_scale``, outputs times ``output_scale``."""
        X, lead = _to_columns(x, self.p, self.in_channels)
        Y = predict_columns(self, X.reshape((-1,) + X.shape[-3:]) / self.input_scale) * self.output_scale
        return _from_columns(Y.reshape(X.shape[:-3] + Y.shape[-3:]), self.q, lead)


def sequential_apply(layers: Sequence[ConvLayer], tape: Optional[Tape], x: Var) -> Var:
    for i, layer in enumerate(layers):
        x = layer.apply(tape, x, f"layer{i}")
    return x


# ---------------------------------------------------------------------------
# equivariance audit


def relative_equivariance_error(forward: Callable[[np.ndarray], np.ndarray], X: np.ndarray, B, column_in: bool = True) -> float:
    """``||rot(f(x)) - f(rot(x))|| / ||f(x)||`` in the Parseval norm, columns in and out."""
    L_in = X.shape[-2] - 1
    Y = forward(X)
    L_out = Y.shape[-2] - 1
    blocks = translation_blocks(max(L_in, L_out), B)
    Yr = forward(rotate_dense(X, blocks[: L_in + 1], column=True))
    rY = rotate_dense(Y, blocks[: L_out + 1], column=True)
    f = degree_weights(L_out)[:, None]
    num = np.sum(np.abs(rY - Yr) ** 2 * f)
    den = np.sum(np.abs(Y) ** 2 * f)
    return float(np.sqrt(num / den)) if den > 0 else 0.0


def off_column_residue(col: np.ndarray) -> float:
    """Off-column residue of a signal stored in column form: zero by construction, checked on the dense embedding."""
    L = col.shape[-2] - 1
    # entries outside |m| <= l are the only coefficients a column array could misplace
    bad = np.abs(col * (1 - degree_mask(L)[:, :, L])).max(initial=0.0)
    scale = np.abs(col).max(initial=0.0)
    return bad / scale if scale > 0 else 0.0


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    """Adaptive-moment state; complex parameters are handled as (re, im) float pairs."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.step += 1
        out = {}
        for name in sorted(params):
            p = np.asarray(params[name])
            g = np.asarray(grads.get(name, np.zeros_like(p)))
            pr = _as_real(p)
            gr = _as_real(g.astype(p.dtype))
            m = self.m.get(name, np.zeros_like(pr))
            v = self.v.get(name, np.zeros_like(pr))
            m = self.beta1 * m + (1 - self.beta1) * gr
            v = self.beta2 * v + (1 - self.beta2) * gr**2
            self.m[name], self.v[name] = m, v
            mh = m / (1 - self.beta1**self.step)
            vh = v / (1 - self.beta2**self.step)
            new = pr - self.lr * mh / (np.sqrt(vh) + self.eps)
            out[name] = _from_real(new, p)
            if name.endswith(".slope"):
                out[name] = np.clip(out[name], *SLOPE_RANGE)
        return out


def _as_real(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    return a.view(np.float64).copy() if np.iscomplexobj(a) else a.astype(np.float64)


def _from_real(r: np.ndarray, like: np.ndarray) -> np.ndarray:
    return r.view(np.complex128).reshape(like.shape) if np.iscomplexobj(like) else r.reshape(like.shape)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    augment: str = "none"
    normalize: bool = True


@dataclass
class TrainResult:
    model: UNetModel
    log: list = field(default_factory=list)
    info: dict = field(default_factory=dict)


def stack_pairs(pairs, p: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``(input, target)`` containers into column arrays ``(N, C, L+1, S)``."""
    X = np.stack([_to_columns_single(x, p) for x, _ in pairs])
    Y = np.stack([_to_columns_single(y, q) for _, y in pairs])
    return X, Y


def _to_columns_single(x: SpectralSignal, p: int) -> np.ndarray:
    col = x.column(coefficient_column(p))
    return col[None] if col.ndim == 2 else col


ACTIVATION_BYTES = 1 << 28  # budget for one layer's oversampled samples


def chunk_size(model: "UNetModel") -> int:
    """Samples per tape so that one layer's oversampled activations stay within budget."""
    worst = 1
    for layer in model.layers.values():
        if layer.activation != "identity":
            na, nb, ng = layer_plan(layer.L, layer.oversample).grid.shape
            worst = max(worst, layer.out_channels * na * nb * ng * 16)
    return max(1, ACTIVATION_BYTES // worst)


def loss_and_grads(model: "UNetModel", X: np.ndarray, Y: np.ndarray) -> tuple[float, dict]:
    """Mean batch loss and its gradients, accumulated chunk by chunk in index order."""
    total, grads = 0.0, {}
    nb = len(X)
    step = chunk_size(model)
    for s in range(0, nb, step):
        xs, ys = X[s : s + step], Y[s : s + step]
        tape = Tape()
        out = model.apply(tape, Var(xs))
        loss = op_weighted_mse(tape, out, ys, model.L, model.q)
        val = float(loss.value)
        if not np.isfinite(val):
            raise NonFiniteLossError(f"loss is {val} on batch samples {s}..{s + len(xs) - 1}")
        w = len(xs) / nb
        total += val * w
        for k, g in backward(tape, loss, np.asarray(w)).items():
            grads[k] = grads[k] + g if k in grads else g
    return total, grads


def evaluate_loss(model: "UNetModel", X: np.ndarray, Y: np.ndarray) -> float:
    total = 0.0
    step = chunk_size(model)
    for s in range(0, len(X), step):
        xb, yb = X[s : s + step], Y[s : s + step]
        out = model.forward_columns(xb)
        total += float(op_weighted_mse(None, Var(out), yb, model.L, model.q).value) * len(xb)
    return total / len(X)


def sphere_distance_columns(A: np.ndarray, Bc: np.ndarray, L: int, q: int) -> np.ndarray:
    """Per-sample distance ``(1/(A B)) sum sin(beta) |a - b|`` between column signals."""
    plan = loss_plan(L)
    d = synthesize_column_sphere(plan, A - Bc, coefficient_column(q))  # (N, C, na, nb)
    w = sphere_weights(plan, 1)
    na, nb = plan.grid.n_alpha, plan.grid.n_beta
    return np.sum(w * np.abs(d), axis=(-1, -2)).sum(axis=1) / (na * nb)


def predict_columns(model: "UNetModel", X: np.ndarray) -> np.ndarray:
    step = chunk_size(model)
    return np.concatenate([model.forward_columns(X[s : s + step]) for s in range(0, len(X), step)])


def train(
    model: UNetModel,
    train_pairs,
    config: TrainConfig,
    val_pairs=None,
    val_rotated_pairs=None,
    augment_fn: Optional[Callable] = None,
) -> TrainResult:
    """Minibatch training with adaptive moments.

    The log has one row per epoch, starting with epoch 0 evaluated before any
    update: ``(epoch, train_loss, val_distance, val_distance_rotated)``.  Epoch
    rows after 0 report the mean minibatch loss seen during that epoch.
    Distances are in the units of the data (normalization undone).
    """
    X, Y = stack_pairs(train_pairs, model.p, model.q)
    in_scale = _rms(X) if config.normalize else 1.0
    out_scale = _rms(Y) if config.normalize else 1.0
    Xn, Yn = X / in_scale, Y / out_scale
    val = _prep_val(val_pairs, model, in_scale)
    val_r = _prep_val(val_rotated_pairs, model, in_scale)
    rng = np.random.default_rng(config.seed)
    opt = OptimizerState(lr=config.lr)
    result = TrainResult(model, info={"normalization": "rms", "in_scale": in_scale, "out_scale": out_scale})

    def val_distance(v):
        if v is None:
            return float("nan")
        Xv, Yv = v
        pred = predict_columns(model, Xv) * out_scale
        return float(np.mean(sphere_distance_columns(pred, Yv, model.L, model.q)))

    init_loss = evaluate_loss(model, Xn, Yn)
    if not np.isfinite(init_loss):
        raise NonFiniteLossError(f"initial loss is {init_loss}")
    result.log.append((0, init_loss, val_distance(val), val_distance(val_r)))
    n = len(Xn)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for s in range(0, n, config.batch_size):
            idx = order[s : s + config.batch_size]
            xb, yb = Xn[idx], Yn[idx]
            if augment_fn is not None:
                xb, yb = augment_fn(xb, yb, rng)
            loss, grads = loss_and_grads(model, xb, yb)
            losses.append(loss * len(idx))
            model.set_params(opt.update(model.params(), grads))
        row = (epoch, float(np.sum(losses) / n), val_distance(val), val_distance(val_r))
        log.info("epoch %d loss %.6g val %.6g val_rot %.6g", *row)
        result.log.append(row)
    model.input_scale, model.output_scale = float(in_scale), float(out_scale)
    return result


def _rms(A: np.ndarray) -> float:
    L = A.shape[-2] - 1
    per = np.sum(np.abs(A) ** 2 * degree_weights(L)[:, None], axis=(-1, -2)).sum(axis=-1)
    r = float(np.sqrt(np.mean(per)))
    return r if r > 0 else 1.0


def _prep_val(pairs, model, in_scale):
    if not pairs:
        return None
    Xv, Yv = stack_pairs(pairs, model.p, model.q)
    return Xv / in_scale, Yv


def rotation_augmenter(p: int, q: int) -> Callable:
    """Random left translation applied to a whole minibatch pair (one rotation per sample)."""
    from .signals import euler_to_matrix

    def augment(xb, yb, rng):
        xs, ys = [], []
        for x, y in zip(xb, yb):
            a, g = rng.uniform(0, 2 * np.pi, 2)
            b = np.arccos(rng.uniform(-1, 1))
            blocks = translation_blocks(x.shape[-2] - 1, euler_to_matrix(a, b, g))
            xs.append(rotate_dense(x, blocks, column=True))
            ys.append(rotate_dense(y, blocks[: y.shape[-2]], column=True))
        return np.stack(xs), np.stack(ys)

    return augment
