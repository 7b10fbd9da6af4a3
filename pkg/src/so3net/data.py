"""Synthetic datasets, rotation augmentation, grid-field files and model checkpoints.

Binary formats are little-endian throughout.

Grid field (``SO3G``)::

    magic   4s   b"SO3G"
    version u32  1
    kind    u8   0 scalar, 1 vector
    n_lat   u32
    n_lon   u32
    payload f64  n_lat * n_lon * (1 | 2), latitude-major, vector as interleaved (U, V)

Checkpoint (``SO3N``)::

    magic    4s   b"SO3N"
    version  u32  1
    n_topo   u32  length of the UTF-8 JSON topology block
    topology n_topo bytes
    payload  f64  parameters in canonical order, complex entries as (re, im) pairs

The canonical parameter order is sorted parameter name; within a filter,
entries run over input/output channel pairs and then l-major, n-minor.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    FileFormatError,
    GridMismatchError,
    MagicMismatchError,
    OrderMismatchError,
    SizeMismatchError,
    UnreadablePathError,
    VersionMismatchError,
)
from .nn import ConvLayer, UNetModel
from .signals import (
    EulerGrid,
    SpectralSignal,
    SphereField,
    coefficient_column,
    complex_to_field,
    degree_mask,
    euler_to_matrix,
    field_to_complex,
)
from .so3fft import FftPlan, analyze_column_sphere, fill_poles, synthesize_column_sphere
from .spectral_ops import rotate_spectral

GRID_MAGIC = b"SO3G"
CKPT_MAGIC = b"SO3N"
FORMAT_VERSION = 1
_GRID_HEADER = struct.Struct("<4sIBII")
_CKPT_HEADER = struct.Struct("<4sII")
KINDS = {"scalar": 0, "vector": 1}
TASKS = ("wind2wind", "temp2wind", "autoencode")


# ---------------------------------------------------------------------------
# random signals


def reality_symmetrize(col: np.ndarray) -> np.ndarray:
    """Project a column-0 array ``[..., l, m + L]`` onto real signals.

    A real signal in ``X_0`` satisfies ``xhat^l_{m,0} = (-1)^m conj(xhat^l_{-m,0})``.
    """
    L = col.shape[-2] - 1
    sign = (-1.0) ** np.arange(-L, L + 1)
    return 0.5 * (col + sign * np.conj(col[..., ::-1]))


def random_bandlimited(
    seed: int,
    L: int,
    p: int,
    decay: float = 1.0,
    channels: Optional[int] = None,
    real: Optional[bool] = None,
) -> SpectralSignal:
    """Random signal in ``X_p``: i.i.d. complex Gaussian column scaled by ``(1+l)^-decay``.

    ``real`` defaults to true for ``p = 0`` (a real scalar field).
    """
    if L < 0 or decay < 0:
        raise ValueError("need L >= 0 and decay >= 0")
    rng = np.random.default_rng(seed)
    shape = ((channels,) if channels else ()) + (L + 1, 2 * L + 1)
    col = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    n = coefficient_column(p)
    with np.errstate(over="ignore"):
        scale = np.power(1.0 + np.arange(L + 1), -float(decay))
    col = col * scale[:, None]
    if abs(n) <= L:
        col = col * degree_mask(L)[:, :, n + L]
    if real if real is not None else p == 0:
        if p != 0:
            raise OrderMismatchError("only X_0 signals can be real")
        col = reality_symmetrize(col)
    return SpectralSignal.from_column(col, n, order=p)


# ---------------------------------------------------------------------------
# synthetic tasks


@dataclass
class SyntheticTask:
    """Input/target pairs from a frozen equivariant teacher.

    ``wind2wind`` maps a vector field to a vector field, ``temp2wind`` a real
    scalar field to a vector field, ``autoencode`` returns the input as target.
    """

    kind: str = "wind2wind"
    L: int = 8
    n_samples: int = 200
    seed: int = 0
    teacher_seed: int = 1234
    noise: float = 0.0
    decay: float = 1.0
    teacher_channels: int = 4

    def __post_init__(self):
        if self.kind not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.kind!r}")

    @property
    def orders(self) -> tuple[int, int]:
        return {"wind2wind": (1, 1), "temp2wind": (0, 1), "autoencode": (1, 1)}[self.kind]

    @property
    def hidden_order(self) -> int:
        return 0 if self.kind == "temp2wind" else 1

    def teacher(self) -> list[ConvLayer]:
        """Two frozen layers: a cubic-activation conv into ``teacher_channels``, then a linear readout.

        The cubic activation is a polynomial, so the activation grid resolves it
        exactly and the teacher is equivariant to rounding error.
        """
        p, q = self.orders
        h = self.hidden_order
        rng = np.random.default_rng(self.teacher_seed)
        first = ConvLayer(1, self.teacher_channels, p, h, self.L, activation="cubic", oversample=2).init(rng)
        last = ConvLayer(self.teacher_channels, 1, h, q, self.L, activation="identity").init(rng)
        return [first, last]


def apply_layers(layers, x: SpectralSignal) -> SpectralSignal:
    for layer in layers:
        x = layer(x)
    return x


def make_dataset(task: SyntheticTask) -> list[tuple[SpectralSignal, SpectralSignal]]:
    """Deterministic list of ``(input, target)`` pairs, each with one channel."""
    p, q = task.orders
    seeds = np.random.SeedSequence(task.seed).generate_state(task.n_samples + 1)
    inputs = [random_bandlimited(int(s), task.L, p, task.decay, channels=1) for s in seeds[:-1]]
    if task.kind == "autoencode":
        return [(x, SpectralSignal(x.L, x.coeffs.copy(), x.order)) for x in inputs]
    teacher = task.teacher()
    stacked = SpectralSignal(task.L, np.stack([x.coeffs for x in inputs]), p)
    targets = apply_layers(teacher, stacked)
    if task.noise > 0:
        rng = np.random.default_rng(int(seeds[-1]))
        n = coefficient_column(q)
        col = targets.column(n)
        col = col + task.noise * (rng.standard_normal(col.shape) + 1j * rng.standard_normal(col.shape)) / np.sqrt(2)
        targets = SpectralSignal.from_column(col, n, order=q)
    return [(x, SpectralSignal(task.L, targets.coeffs[i], q)) for i, x in enumerate(inputs)]


def random_rotation_euler(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation: alpha, gamma uniform and cos(beta) uniform."""
    a, g = rng.uniform(0.0, 2 * np.pi, 2)
    b = np.arccos(rng.uniform(-1.0, 1.0))
    return euler_to_matrix(a, b, g)


def augment_rotate(pair, seed: Optional[int] = None, B: Optional[np.ndarray] = None):
    """Rotate input and target of a pair by the same rotation (random from ``seed`` unless ``B`` given)."""
    if B is None:
        B = random_rotation_euler(np.random.default_rng(seed))
    x, y = pair
    return rotate_spectral(x, B), rotate_spectral(y, B)


def rotated_split(pairs, seed: int):
    """A fixed randomly rotated copy of a split, one rotation per sample."""
    seeds = np.random.SeedSequence(seed).generate_state(len(pairs))
    return [augment_rotate(pair, int(s)) for pair, s in zip(pairs, seeds)]


# ---------------------------------------------------------------------------
# sphere grid <-> spectral columns


def max_bandlimit(n_lat: int, n_lon: int) -> int:
    """Largest band limit a lat/lon grid resolves with room for pole recovery."""
    return max(0, min((n_lon - 1) // 2, (n_lat - 2) // 2))


def field_plan(n_lat: int, n_lon: int, L: Optional[int] = None) -> FftPlan:
    L = max_bandlimit(n_lat, n_lon) if L is None else L
    return FftPlan(L, EulerGrid(n_lon, n_lat, n_lon))


def field_to_spectral(f: SphereField, L: Optional[int] = None) -> SpectralSignal:
    """Coefficients of the associated function, band-limited at ``L``.

    Vector fields carry no information at the poles; the pole values of the
    associated function are restored from the band limit before analysis.
    """
    if f.n_lon % 2:
        raise GridMismatchError(f"n_lon must be even, got {f.n_lon}")
    plan = field_plan(f.n_lat, f.n_lon, L)
    p = 1 if f.kind == "vector" else 0
    n = coefficient_column(p)
    w = field_to_complex(f).T  # (n_lon, n_lat) = (alpha, beta)
    if f.kind == "vector":
        w = fill_poles(plan, w, n)
    col = analyze_column_sphere(plan, w, n)
    if p == 0:
        col = reality_symmetrize(col)
    return SpectralSignal.from_column(col, n, order=p)


def spectral_to_field(x: SpectralSignal, n_lat: int, n_lon: int) -> SphereField:
    """Sample a single-channel ``X_0`` or ``X_1`` signal on a lat/lon grid."""
    if x.order not in (0, 1):
        raise OrderMismatchError(f"need a signal tagged X_0 or X_1, got {x.order}")
    plan = FftPlan(x.L, EulerGrid(n_lon, n_lat, n_lon))
    n = coefficient_column(x.order)
    w = synthesize_column_sphere(plan, x.column(n), n).T
    return complex_to_field(w, "vector" if x.order == 1 else "scalar")


# ---------------------------------------------------------------------------
# grid field files


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UnreadablePathError(f"cannot read {path}: {exc}") from exc


def _write_bytes(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise UnreadablePathError(f"cannot write {path}: {exc}") from exc


def encode_grid_field(f: SphereField) -> bytes:
    header = _GRID_HEADER.pack(GRID_MAGIC, FORMAT_VERSION, KINDS[f.kind], f.n_lat, f.n_lon)
    return header + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def decode_grid_field(data: bytes) -> SphereField:
    if len(data) < _GRID_HEADER.size:
        raise SizeMismatchError(f"file has {len(data)} bytes, header needs {_GRID_HEADER.size}")
    magic, version, kind, n_lat, n_lon = _GRID_HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise MagicMismatchError(f"bad magic {magic!r}, expected {GRID_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"grid file version {version}, reader supports {FORMAT_VERSION}")
    if kind not in (0, 1):
        raise FileFormatError(f"unknown field kind {kind}")
    comps = 1 + kind
    want = n_lat * n_lon * comps * 8
    payload = data[_GRID_HEADER.size :]
    if len(payload) != want:
        raise SizeMismatchError(f"payload has {len(payload)} bytes, header implies {want}")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    shape = (n_lat, n_lon, 2) if kind else (n_lat, n_lon)
    return SphereField("vector" if kind else "scalar", values.reshape(shape))


def write_grid_field(path, f: SphereField) -> None:
    _write_bytes(path, encode_grid_field(f))


def read_grid_field(path) -> SphereField:
    return decode_grid_field(_read_bytes(path))


def read_csv_field(path) -> SphereField:
    """Read ``lon,lat,u,v`` or ``lon,lat,t`` rows (degrees) covering a full lat/lon grid.

    Latitudes must include both poles; rows may come in any order.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UnreadablePathError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise FileFormatError("empty CSV file")
    header = [h.strip().lower() for h in rows[0]]
    if header == ["lon", "lat", "u", "v"]:
        kind = "vector"
    elif header == ["lon", "lat", "t"]:
        kind = "scalar"
    else:
        raise FileFormatError(f"unexpected CSV header {rows[0]}")
    try:
        table = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise FileFormatError(f"non-numeric CSV entry: {exc}") from exc
    if table.ndim != 2 or table.shape[1] != len(header):
        raise FileFormatError("ragged CSV rows")
    lons = np.unique(np.round(np.mod(table[:, 0], 360.0), 9))
    lats = np.unique(np.round(table[:, 1], 9))
    n_lon, n_lat = len(lons), len(lats)
    if n_lat < 2 or lats[0] != -90.0 or lats[-1] != 90.0 or len(table) != n_lat * n_lon:
        raise SizeMismatchError(f"CSV does not cover a full grid with poles ({n_lat} lats x {n_lon} lons, {len(table)} rows)")
    if not np.allclose(lons, 360.0 * np.arange(n_lon) / n_lon, atol=1e-6):
        raise SizeMismatchError("longitudes are not equally spaced from 0")
    if not np.allclose(lats, np.linspace(-90.0, 90.0, n_lat), atol=1e-6):
        raise SizeMismatchError("latitudes are not equally spaced pole to pole")
    j = np.searchsorted(lons, np.round(np.mod(table[:, 0], 360.0), 9))
    k = n_lat - 1 - np.searchsorted(lats, np.round(table[:, 1], 9))  # colatitude index
    values = np.zeros((n_lat, n_lon) + ((2,) if kind == "vector" else ()))
    values[k, j] = table[:, 2:] if kind == "vector" else table[:, 2]
    return SphereField(kind, values)


# ---------------------------------------------------------------------------
# checkpoints


def _param_vector(params: dict[str, np.ndarray]) -> np.ndarray:
    parts = []
    for name in sorted(params):
        a = np.ascontiguousarray(params[name])
        parts.append(a.view(np.float64).ravel() if np.iscomplexobj(a) else a.astype(np.float64).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def _unpack_params(template: dict[str, np.ndarray], flat: np.ndarray) -> dict[str, np.ndarray]:
    out, pos = {}, 0
    for name in sorted(template):
        a = np.asarray(template[name])
        size = a.size * (2 if np.iscomplexobj(a) else 1)
        chunk = flat[pos : pos + size]
        pos += size
        out[name] = chunk.view(np.complex128).reshape(a.shape) if np.iscomplexobj(a) else chunk.reshape(a.shape).copy()
    return out


def encode_checkpoint(model: UNetModel) -> bytes:
    topo = json.dumps(model.topology(), sort_keys=True).encode("utf-8")
    payload = _param_vector(model.params()).astype("<f8").tobytes()
    return _CKPT_HEADER.pack(CKPT_MAGIC, FORMAT_VERSION, len(topo)) + topo + payload


def decode_checkpoint(data: bytes) -> UNetModel:
    if len(data) < _CKPT_HEADER.size:
        raise SizeMismatchError(f"file has {len(data)} bytes, header needs {_CKPT_HEADER.size}")
    magic, version, n_topo = _CKPT_HEADER.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise MagicMismatchError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, reader supports {FORMAT_VERSION}")
    start = _CKPT_HEADER.size
    if len(data) < start + n_topo:
        raise SizeMismatchError("truncated topology block")
    try:
        topo = json.loads(data[start : start + n_topo].decode("utf-8"))
        model = UNetModel.from_topology(topo)
    except (ValueError, TypeError, KeyError) as exc:
        raise FileFormatError(f"bad topology block: {exc}") from exc
    template = model.params()
    want = _param_vector(template).size * 8
    payload = data[start + n_topo :]
    if len(payload) != want:
        raise SizeMismatchError(f"parameter block has {len(payload)} bytes, topology implies {want}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    model.set_params(_unpack_params(template, flat))
    return model


def save_checkpoint(path, model: UNetModel) -> None:
    _write_bytes(path, encode_checkpoint(model))


def load_checkpoint(path) -> UNetModel:
    return decode_checkpoint(_read_bytes(path))
