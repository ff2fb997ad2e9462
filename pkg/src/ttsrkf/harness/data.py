"""Datasets: synthetic GP and Volterra streams, cascaded-tanks data, CSV IO."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataIOError, InvalidArgument, ResourceLimitError
from ..features import (
    FeatureConfig,
    LagEmbedding,
    dense_features,
    hilbert_se_batch,
    se_prior,
    volterra_batch,
    volterra_windows,
)
from ..tensor_core import dense_cap, tt_random

logger = logging.getLogger(__name__)

TANK_COLUMNS = ("uEst", "yEst", "uVal", "yVal")


@dataclass
class Dataset:
    """Train/test split; rows of ``X`` are filter inputs (points, windows or regressors)."""

    kind: str
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.X_train.shape[1]


def _fmt(x: float) -> str:
    return "%.17g" % x


# --------------------------------------------------------------------------
# generators


def gen_synthetic_gp(
    D: int,
    I: int,
    N: int,
    N_test: int,
    domain: float,
    seed,
    noise_var: float,
    lengthscale: float = 0.5,
    signal_var: float = 1.0,
    input_box: float = 1.0,
) -> Dataset:
    """Draw weights from the reduced-rank SE prior and noisy observations.

    Inputs are uniform in ``[-input_box, input_box]^D``; the true weights are
    stored in ``meta["weights"]`` so noiseless targets can be recomputed.
    """
    M = I**D
    if M > dense_cap():
        raise ResourceLimitError(f"true weights of size {M} exceed the dense cap {dense_cap()}")
    if noise_var < 0:
        raise InvalidArgument("noise_var must be nonnegative")
    config = FeatureConfig("hilbert_se", D, I, lengthscale, signal_var, domain)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(M) * se_prior(config).dense_sqrt().diagonal()
    X = rng.uniform(-input_box, input_box, size=(N + N_test, D))
    f = dense_features(hilbert_se_batch(X, config)) @ w
    y = f + math.sqrt(noise_var) * rng.standard_normal(N + N_test)
    return Dataset("gp", X[:N], y[:N], X[N:], y[N:], {"weights": w, "noise_var": noise_var})


def _tt_eval_batch(cores, factors) -> np.ndarray:
    env = np.ones((factors[0].shape[0], 1))
    for f, c in zip(factors, cores):
        env = np.einsum("na,ni,aib->nb", env, f, c, optimize=True)
    return env[:, 0]


def gen_volterra(
    D: int,
    I: int,
    N: int,
    N_test: int,
    snr_db: float,
    seed,
    true_rank: int = 2,
) -> Dataset:
    """Truncated Volterra system with TT-structured kernel driven by uniform noise.

    The kernel is a random TT of rank ``true_rank`` scaled so that the noiseless
    output has unit RMS on the training part.  Gaussian noise with power
    ``1 / 10**(snr_db / 10)`` is added; ``snr_db = inf`` gives noiseless data.
    """
    if math.isnan(snr_db):
        raise InvalidArgument("snr_db must not be NaN")
    config = FeatureConfig("volterra", D, I)
    memory = I - 1
    seq_w, seq_u, seq_e = np.random.SeedSequence(seed).spawn(3)
    weights = tt_random([I] * D, true_rank, np.random.default_rng(seq_w))
    u = np.random.default_rng(seq_u).uniform(-1.0, 1.0, N + N_test + memory - 1)
    windows = volterra_windows(u, memory)
    clean = _tt_eval_batch(weights.cores, volterra_batch(windows, config))
    scale = 1.0 / math.sqrt(np.mean(clean[:N] ** 2))
    clean *= scale
    weights.cores[0] = weights.cores[0] * scale
    noise_var = 0.0 if math.isinf(snr_db) else 1.0 / 10 ** (snr_db / 10)
    y = clean + math.sqrt(noise_var) * np.random.default_rng(seq_e).standard_normal(clean.size)
    meta = {"weights": weights, "noise_var": noise_var, "input": u, "clean": clean}
    return Dataset("volterra", windows[:N], y[:N], windows[N:], y[N:], meta)


def simulate_tanks(n: int = 1024, seed=0, dt: float = 4.0, noise_std: float = 0.02):
    """Two cascaded tanks with free outflow (Torricelli) and overflow at 10.

    Returns ``(uEst, yEst, uVal, yVal)``; the two input signals are
    independent random-phase multisines in ``[0, 10]``.
    """
    rng = np.random.default_rng(seed)
    k1, k2, k3, k4 = 0.05, 0.05, 0.05, 0.08
    out = []
    for _ in range(2):
        t = np.arange(n)
        freqs = np.arange(1, 40) / (n * 1.0)
        phases = rng.uniform(0, 2 * np.pi, freqs.size)
        sig = np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None]).sum(axis=0)
        u = 5.0 + 5.0 * sig / np.abs(sig).max()
        x1, x2 = 5.0, 5.0
        y = np.empty(n)
        for k in range(n):
            for _ in range(4):
                h = dt / 4
                x1 = min(max(x1 + h * (-k1 * math.sqrt(x1) + k4 * u[k]), 0.0), 10.0)
                x2 = min(max(x2 + h * (k2 * math.sqrt(x1) - k3 * math.sqrt(x2)), 0.0), 10.0)
            y[k] = x2 + noise_std * rng.standard_normal()
        out.extend([u, y])
    return tuple(out)


def tanks_dataset(uEst, yEst, uVal, yVal, lags: LagEmbedding) -> Dataset:
    """One-step-ahead regression data; the embedding is calibrated on the estimation set.

    Targets are standardized with the estimation-set mean and standard
    deviation (stored in ``meta``) because the sine basis has zero mean.
    """
    lags.calibrate(uEst, yEst)
    X_train, idx = lags.embed_series(uEst, yEst)
    X_test, idx_test = lags.embed_series(uVal, yVal)
    yEst = np.asarray(yEst, dtype=float)
    yVal = np.asarray(yVal, dtype=float)
    offset = float(yEst.mean())
    scale = float(yEst.std()) or 1.0
    return Dataset(
        "tanks",
        X_train,
        (yEst[idx] - offset) / scale,
        X_test,
        (yVal[idx_test] - offset) / scale,
        {"first_index": int(idx[0]) if idx.size else None, "lags": lags, "y_offset": offset, "y_scale": scale},
    )


# --------------------------------------------------------------------------
# CSV IO


def read_tanks_csv(path) -> dict:
    """Read a cascaded-tanks CSV with header ``uEst,yEst,uVal,yVal``."""
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise DataIOError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise DataIOError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in TANK_COLUMNS if c not in header]
        if missing:
            raise DataIOError(f"{path}: missing columns {missing} in header {header}")
        pos = [header.index(c) for c in TANK_COLUMNS]
        rows = []
        for n, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataIOError(f"{path}: row {n} has {len(row)} fields, expected {len(header)}")
            vals = []
            for c, p in zip(TANK_COLUMNS, pos):
                try:
                    vals.append(float(row[p]))
                except ValueError:
                    raise DataIOError(f"{path}: row {n}, column {c}: not a number: {row[p]!r}") from None
            rows.append(vals)
    if not rows:
        raise DataIOError(f"{path}: no data rows")
    data = np.array(rows)
    return {c: data[:, k] for k, c in enumerate(TANK_COLUMNS)}


def write_tanks_csv(path, uEst, yEst, uVal, yVal) -> None:
    cols = [np.asarray(c, dtype=float) for c in (uEst, yEst, uVal, yVal)]
    try:
        with Path(path).open("w", newline="") as fh:
            fh.write(",".join(TANK_COLUMNS) + "\n")
            for row in zip(*cols):
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def load_cascaded_tanks(path, lag_config: LagEmbedding) -> Dataset:
    cols = read_tanks_csv(path)
    return tanks_dataset(cols["uEst"], cols["yEst"], cols["uVal"], cols["yVal"], lag_config)


def write_dataset_csv(path, data: Dataset) -> None:
    """Write ``split,x1..xK,y`` rows."""
    K = data.dim
    try:
        with Path(path).open("w", newline="") as fh:
            fh.write(",".join(["split"] + [f"x{k + 1}" for k in range(K)] + ["y"]) + "\n")
            for split, X, y in (("train", data.X_train, data.y_train), ("test", data.X_test, data.y_test)):
                for row, target in zip(X, y):
                    fh.write(",".join([split] + [_fmt(v) for v in row] + [_fmt(target)]) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def read_dataset_csv(path, kind: str = "csv") -> Dataset:
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise DataIOError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[0] != "split" or header[-1] != "y":
            raise DataIOError(f"{path}: header must be split,x1..xK,y")
        parts = {"train": ([], []), "test": ([], [])}
        for n, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataIOError(f"{path}: row {n} has {len(row)} fields, expected {len(header)}")
            if row[0] not in parts:
                raise DataIOError(f"{path}: row {n}: unknown split {row[0]!r}")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError:
                raise DataIOError(f"{path}: row {n}: non-numeric field") from None
            parts[row[0]][0].append(vals[:-1])
            parts[row[0]][1].append(vals[-1])
    K = len(header) - 2

    def arr(split):
        X, y = parts[split]
        return np.array(X, dtype=float).reshape(-1, K), np.array(y, dtype=float)

    X_train, y_train = arr("train")
    X_test, y_test = arr("test")
    return Dataset(kind, X_train, y_train, X_test, y_test, {"path": str(path)})
