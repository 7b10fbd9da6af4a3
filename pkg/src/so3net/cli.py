"""Command-line front end: self-test, training, prediction, equivariance audit, rotation."""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import wigner
from .data import (
    SyntheticTask,
    field_to_spectral,
    load_checkpoint,
    make_dataset,
    max_bandlimit,
    random_bandlimited,
    read_grid_field,
    rotated_split,
    save_checkpoint,
    spectral_to_field,
    write_grid_field,
)
from .errors import (
    BandLimitError,
    ConfigError,
    FileFormatError,
    GridMismatchError,
    NonFiniteLossError,
    OrderMismatchError,
    So3NetError,
)
from .nn import (
    DEFAULT_OVERSAMPLE,
    ConvLayer,
    TrainConfig,
    UNetModel,
    Var,
    relative_equivariance_error,
    rotation_augmenter,
    train,
)
from .oracles import convolution_quadrature, smoothing_quadrature
from .signals import EulerGrid, SpectralSignal, coefficient_column, euler_to_matrix, matrix_to_euler, random_rotation
from .so3fft import FftPlan, evaluate, ft_direct, ft_fast, ift_fast
from .spectral_ops import Filter, conv_left, cov_right, rotate_spectral, smooth

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_SHAPE = 5

METRICS_HEADER = ("epoch", "train_loss", "val_distance", "val_distance_rotated")

# brute-force oracles are O(L^6); above these band limits they run at the cap
CONV_ORACLE_MAX_L = 3
SMOOTH_ORACLE_MAX_L = 6
DIRECT_FT_MAX_L = 12

log = logging.getLogger("so3net")


# ---------------------------------------------------------------------------
# self-test


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    note: str = ""

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tol)


def _random_signal(rng: np.random.Generator, L: int) -> SpectralSignal:
    n = SpectralSignal.zeros(L).coeffs.size
    return SpectralSignal(L, rng.standard_normal(n) + 1j * rng.standard_normal(n))


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(a - b)) / scale


def check_orthogonality(L: int, rng: np.random.Generator) -> CheckResult:
    err = 0.0
    for l in range(L + 1):
        D = wigner.wigner_delta(l)
        I = np.eye(2 * l + 1)
        d = wigner.wigner_d(l, rng.uniform(0, np.pi))
        err = max(err, np.abs(D @ D.T - I).max(), np.abs(d @ d.T - I).max())
    return CheckResult("orthogonality", err, 1e-10)


def check_representation(L: int, rng: np.random.Generator) -> CheckResult:
    A, B = random_rotation(rng), random_rotation(rng)
    ea, eb, eab = matrix_to_euler(A), matrix_to_euler(B), matrix_to_euler(A @ B)
    err = 0.0
    for l in range(L + 1):
        lhs = wigner.wigner_D(l, *ea) @ wigner.wigner_D(l, *eb)
        err = max(err, np.abs(lhs - wigner.wigner_D(l, *eab)).max())
    return CheckResult("representation", err, 1e-10)


def check_transform_roundtrip(L: int, rng: np.random.Generator) -> CheckResult:
    plan = FftPlan(L, EulerGrid.for_bandlimit(L))
    x = _random_signal(rng, L)
    y = ft_fast(ift_fast(x, plan), plan)
    return CheckResult("transform_roundtrip", _rel(y.coeffs, x.coeffs), 1e-9)


def check_fast_vs_direct(L: int, rng: np.random.Generator) -> CheckResult:
    Ld = min(L, DIRECT_FT_MAX_L)
    grid = EulerGrid.for_bandlimit(Ld)
    x = _random_signal(rng, Ld)
    samples = ift_fast(x, FftPlan(Ld, grid))
    a = ft_fast(samples, FftPlan(Ld, grid))
    b = ft_direct(samples, Ld)
    return CheckResult("fast_vs_direct", _rel(a.coeffs, b.coeffs), 1e-9, f"L={Ld}")


def check_convolution_oracle(L: int, rng: np.random.Generator) -> CheckResult:
    Lc = min(L, CONV_ORACLE_MAX_L)
    x, psi = _random_signal(rng, Lc), _random_signal(rng, Lc)
    f = Filter(Lc, psi.coeffs)
    err = max(
        _rel(conv_left(x, f).coeffs, convolution_quadrature(x, psi, "left").coeffs),
        _rel(cov_right(x, f).coeffs, convolution_quadrature(x, psi, "right").coeffs),
    )
    return CheckResult("convolution_oracle", err, 1e-8, f"L={Lc}")


def check_smoothing_oracle(L: int, rng: np.random.Generator) -> CheckResult:
    Ls = min(L, SMOOTH_ORACLE_MAX_L)
    x = _random_signal(rng, Ls)
    a, g = rng.uniform(0, 2 * np.pi, (2, 16))
    b = rng.uniform(0, np.pi, 16)
    err = 0.0
    for q in sorted({0, min(1, Ls), -min(1, Ls)}):
        ref = smoothing_quadrature(x, q, a, b, g)
        err = max(err, _rel(evaluate(smooth(x, q), a, b, g), ref))
    return CheckResult("smoothing_oracle", err, 1e-10, f"L={Ls}")


def check_equivariance(L: int, rng: np.random.Generator) -> CheckResult:
    B = random_rotation(rng)
    x, psi = _random_signal(rng, L), Filter(L, _random_signal(rng, L).coeffs)
    err = _rel(rotate_spectral(conv_left(x, psi), B).coeffs, conv_left(rotate_spectral(x, B), psi).coeffs)
    # a full layer with a polynomial activation is exactly equivariant
    p = 1 if L >= 1 else 0
    layer = ConvLayer(2, 2, p, p, min(L, 8), activation="cubic", oversample=2).init(rng)
    X = random_bandlimited(int(rng.integers(2**31)), layer.L, p, channels=2).column(coefficient_column(p))[None]

    def forward(col):
        return layer.apply(None, Var(col)).value

    err = max(err, relative_equivariance_error(forward, X, B))
    return CheckResult("equivariance", err, 1e-9)


CHECKS: tuple[Callable[[int, np.random.Generator], CheckResult], ...] = (
    check_orthogonality,
    check_representation,
    check_transform_roundtrip,
    check_fast_vs_direct,
    check_convolution_oracle,
    check_smoothing_oracle,
    check_equivariance,
)


@contextlib.contextmanager
def corrupted_delta(L: int, eps: float = 1e-3, seed: int = 0):
    """Temporarily replace the cached ``Delta^l`` (``l <= L``) with perturbed copies."""
    saved = dict(wigner._delta_cache)
    rng = np.random.default_rng(seed)
    try:
        for l in range(L + 1):
            D = wigner.wigner_delta(l) + eps * rng.standard_normal((2 * l + 1, 2 * l + 1))
            D.setflags(write=False)
            wigner._delta_cache[l] = D
        yield
    finally:
        wigner._delta_cache.clear()
        wigner._delta_cache.update(saved)


def run_selftest(L: int, seed: int, corrupt_delta: bool = False) -> list[CheckResult]:
    if not 0 <= L <= 32:
        raise ConfigError(f"band limit must be in [0, 32], got {L}")
    ctx = corrupted_delta(L, seed=seed) if corrupt_delta else contextlib.nullcontext()
    results = []
    with ctx:
        for i, check in enumerate(CHECKS):
            rng = np.random.default_rng([seed, i])
            try:
                results.append(check(L, rng))
            except (So3NetError, np.linalg.LinAlgError) as exc:
                name = check.__name__.removeprefix("check_")
                results.append(CheckResult(name, float("inf"), 0.0, f"raised {exc}"))
    return results


def cmd_selftest(args) -> int:
    results = run_selftest(args.bandlimit, args.seed, args.corrupt_delta)
    for r in results:
        status = "ok" if r.ok else "FAIL"
        note = f"  ({r.note})" if r.note else ""
        print(f"{r.name:<22s} max_err={r.error:.3e}  tol={r.tol:.0e}  {status}{note}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        print("failed checks: " + ", ".join(failed))
        return EXIT_NUMERIC
    print("all checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run configuration


def _int(v: str) -> int:
    return int(v)


def _channels(v: str) -> tuple:
    return tuple(int(c) for c in v.replace(" ", "").split(",") if c)


CONFIG_KEYS: dict[str, tuple[Callable, object]] = {
    "band_limit": (_int, 16),
    "depth": (_int, 3),
    "channels": (_channels, (8, 16, 32, 64)),
    "task": (str, "wind2wind"),
    "epochs": (_int, 30),
    "lr": (float, 1e-3),
    "seed": (_int, 0),
    "augment": (str, "none"),
    "train_data": (str, None),
    "val_data": (str, None),
    "output_dir": (str, None),
    "samples": (_int, 200),
    "val_samples": (_int, 20),
    "batch_size": (_int, 8),
    "oversample": (_int, DEFAULT_OVERSAMPLE),
    "convs_per_stage": (_int, 1),
    "activation": (str, "leaky_relu"),
}

CONFIG_HELP = """\
config file: one key=value per line, '#' starts a comment.  Keys:
  band_limit (16)  depth (3)  channels (8,16,32,64; one per stage or a single base width)
  task (wind2wind | temp2wind | autoencode | files)  epochs (30)  lr (0.001)  seed (0)
  augment (none | rotate)  samples (200)  val_samples (20)  batch_size (8)
  oversample (4)  convs_per_stage (1)  activation (leaky_relu | cubic)
  output_dir (required)  train_data, val_data (task=files: directories of
  NAME.input.so3g / NAME.target.so3g grid-field pairs)
outputs in output_dir: model.so3n, metrics.csv, run_info.json
metrics.csv columns: epoch,train_loss,val_distance,val_distance_rotated
  epoch 0 is evaluated before training; later train_loss values are epoch means of
  the minibatch loss on normalized data; distances are in data units (nan without validation data)
"""


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    @property
    def bands(self) -> tuple:
        L, d = self.band_limit, self.depth
        bands = tuple(int(round(L * (d + 1 - i) / (d + 1))) for i in range(d + 1))
        if any(b1 <= b2 for b1, b2 in zip(bands, bands[1:])) or bands[-1] < 1:
            raise ConfigError(f"band_limit {L} is too small for depth {d}")
        return bands

    @property
    def channel_schedule(self) -> tuple:
        c, d = self.channels, self.depth
        if len(c) == 1:
            return tuple(c[0] * 2**i for i in range(d + 1))
        if len(c) != d + 1:
            raise ConfigError(f"channels needs {d + 1} entries for depth {d}, got {len(c)}")
        return c


def parse_config(text: str) -> RunConfig:
    values = {k: default for k, (_, default) in CONFIG_KEYS.items()}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            values[key] = CONFIG_KEYS[key][0](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
    cfg = RunConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.task not in ("wind2wind", "temp2wind", "autoencode", "files"):
        raise ConfigError(f"unknown task {cfg.task!r}")
    if cfg.augment not in ("none", "rotate"):
        raise ConfigError(f"augment must be none or rotate, got {cfg.augment!r}")
    if cfg.activation not in ("leaky_relu", "cubic"):
        raise ConfigError(f"activation must be leaky_relu or cubic, got {cfg.activation!r}")
    for key in ("band_limit", "epochs", "samples", "batch_size", "oversample", "convs_per_stage"):
        if getattr(cfg, key) < (0 if key == "epochs" else 1):
            raise ConfigError(f"{key} out of range: {getattr(cfg, key)}")
    if cfg.depth < 0 or cfg.val_samples < 0 or not cfg.lr > 0:
        raise ConfigError("depth, val_samples must be >= 0 and lr > 0")
    if cfg.output_dir is None:
        raise ConfigError("output_dir is required")
    cfg.bands, cfg.channel_schedule  # schedule errors surface before any work
    if cfg.task == "files":
        if cfg.train_data is None:
            raise ConfigError("task=files needs train_data")
        for key in ("train_data", "val_data"):
            p = getattr(cfg, key)
            if p is not None and not Path(p).is_dir():
                raise FileNotFoundError(f"{key} directory not found: {p}")
    elif cfg.train_data is not None or cfg.val_data is not None:
        raise ConfigError("train_data/val_data are only used with task=files")
    out = Path(cfg.output_dir)
    if out.exists() and not out.is_dir():
        raise FileExistsError(f"output_dir is not a directory: {out}")


def _load_pairs(directory: str, L: int) -> list:
    pairs = []
    d = Path(directory)
    for inp in sorted(d.glob("*.input.so3g")):
        tgt = d / inp.name.replace(".input.so3g", ".target.so3g")
        if not tgt.exists():
            raise FileNotFoundError(f"missing target file for {inp.name}")
        x = field_to_spectral(read_grid_field(inp), L)
        y = field_to_spectral(read_grid_field(tgt), L)
        pairs.append((SpectralSignal(L, x.coeffs[None], x.order), SpectralSignal(L, y.coeffs[None], y.order)))
    if not pairs:
        raise FileNotFoundError(f"no *.input.so3g files in {directory}")
    return pairs


def build_run(cfg: RunConfig):
    """Model and data splits for a configuration."""
    L = cfg.band_limit
    if cfg.task == "files":
        train_pairs = _load_pairs(cfg.train_data, L)
        val_pairs = _load_pairs(cfg.val_data, L) if cfg.val_data else []
        p, q = train_pairs[0][0].order, train_pairs[0][1].order
        hidden = 1 if p == q == 1 else 0
    else:
        task = SyntheticTask(cfg.task, L=L, n_samples=cfg.samples + cfg.val_samples, seed=cfg.seed)
        pairs = make_dataset(task)
        train_pairs, val_pairs = pairs[: cfg.samples], pairs[cfg.samples :]
        (p, q), hidden = task.orders, task.hidden_order
    model = UNetModel(
        p=p,
        q=q,
        hidden=hidden,
        bands=cfg.bands,
        channels=cfg.channel_schedule,
        convs_per_stage=cfg.convs_per_stage,
        activation=cfg.activation,
        oversample=cfg.oversample,
    ).init(cfg.seed)
    val_rot = rotated_split(val_pairs, cfg.seed + 1) if val_pairs else []
    return model, train_pairs, val_pairs, val_rot


def run_training(cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    model, train_pairs, val_pairs, val_rot = build_run(cfg)
    augment = rotation_augmenter(model.p, model.q) if cfg.augment == "rotate" else None
    tc = TrainConfig(epochs=cfg.epochs, lr=cfg.lr, batch_size=cfg.batch_size, seed=cfg.seed, augment=cfg.augment)
    result = train(model, train_pairs, tc, val_pairs, val_rot, augment_fn=augment)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.so3n", model)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for row in result.log:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    info = {
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.values.items()},
        "topology": model.topology(),
        "n_train": len(train_pairs),
        "n_val": len(val_pairs),
        "seconds": time.perf_counter() - t0,
        **result.info,
    }
    (out / "run_info.json").write_text(json.dumps(info, indent=2, sort_keys=True))
    return info


def cmd_train(args) -> int:
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {args.config}: {exc}") from exc
    cfg = parse_config(text)
    info = run_training(cfg)
    print(f"wrote {Path(cfg.output_dir) / 'model.so3n'} ({info['seconds']:.1f} s)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# prediction, audit, rotation


def cmd_predict(args) -> int:
    model = load_checkpoint(args.model)
    f = read_grid_field(args.input)
    want = "vector" if model.p == 1 else "scalar"
    if f.kind != want or model.in_channels != 1:
        raise OrderMismatchError(f"model expects a single {want} field, got {f.kind}")
    if max_bandlimit(f.n_lat, f.n_lon) < model.L:
        raise GridMismatchError(f"grid {f.n_lat}x{f.n_lon} cannot resolve band limit {model.L}")
    if model.out_channels != 1:
        raise OrderMismatchError("only single-channel outputs can be written as grid fields")
    x = field_to_spectral(f, model.L)
    y = model.predict(SpectralSignal(x.L, x.coeffs[None], x.order))
    y = SpectralSignal(y.L, y.coeffs[0], y.order)
    write_grid_field(args.output, spectral_to_field(y, f.n_lat, f.n_lon))
    return EXIT_OK


def equivariance_audit(model: UNetModel, trials: int, seed: int) -> np.ndarray:
    """Relative model-equivariance errors over random rotations, one random input per trial."""
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(trials):
        x = random_bandlimited(int(rng.integers(2**31)), model.L, model.p, channels=model.in_channels)
        X = x.column(coefficient_column(model.p))[None]
        errs.append(relative_equivariance_error(model.forward_columns, X, random_rotation(rng)))
    return np.asarray(errs)


def cmd_equivariance(args) -> int:
    if args.trials < 1:
        raise ConfigError("trials must be >= 1")
    model = load_checkpoint(args.model)
    errs = equivariance_audit(model, args.trials, args.seed)
    print(f"trials={len(errs)} mean_rel_err={errs.mean():.3e} max_rel_err={errs.max():.3e}")
    return EXIT_OK


def rotate_field(f, alpha: float, beta: float, gamma: float):
    """Exact spectral left translation of a grid field by ``Z(alpha) Y(beta) Z(gamma)``."""
    x = field_to_spectral(f)
    y = rotate_spectral(x, euler_to_matrix(alpha, beta, gamma))
    return spectral_to_field(y, f.n_lat, f.n_lon)


def cmd_rotate(args) -> int:
    f = read_grid_field(args.input)
    write_grid_field(args.output, rotate_field(f, args.alpha, args.beta, args.gamma))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="so3net",
        description="SO(3) harmonic analysis and equivariant networks for fields on the sphere.",
        epilog="exit codes: 0 success, 2 config, 3 io, 4 numeric, 5 shape",
    )
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("selftest", help="run numerical self-checks")
    s.add_argument("--bandlimit", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--corrupt-delta", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_selftest)

    s = sub.add_parser(
        "train", help="train a UNet from a key=value config", epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="map a grid-field file through a model")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("equivariance", help="audit a model against random rotations")
    s.add_argument("--model", required=True)
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_equivariance)

    s = sub.add_parser("rotate", help="rotate a grid field exactly in the spectral domain")
    s.add_argument("--input", required=True)
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--beta", type=float, default=0.0)
    s.add_argument("--gamma", type=float, default=0.0)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_rotate)
    return ap


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (FileFormatError, OSError)):
        return EXIT_IO
    if isinstance(exc, (NonFiniteLossError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (GridMismatchError, BandLimitError, OrderMismatchError, ValueError)):
        return EXIT_SHAPE
    raise exc


def main(argv: Optional[list] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # mapped to documented exit codes
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
