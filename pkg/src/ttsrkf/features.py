"""Product-kernel feature maps and their Kronecker-structured priors.

Every feature map returns per-dimension factors so that the full feature
vector ``phi(x) = phi_1(x) kron ... kron phi_D(x)`` is never formed.  Batched
variants return a list of ``D`` arrays of shape ``(N, I)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, InvalidArgument
from .tensor_core import Rank1FeatureTT, TensorTrainMatrix, ttm_from_kron_factors

KINDS = ("hilbert_se", "volterra", "lagged_io_se")


def _per_dim(value, D: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.full(D, float(arr[0]))
    if arr.size != D:
        raise InvalidArgument(f"{name} needs 1 or {D} values, got {arr.size}")
    return arr


@dataclass(frozen=True)
class FeatureConfig:
    """Settings of a feature map.

    ``lengthscale`` and ``domain`` (the half-width of the box on which the
    Hilbert-space basis is defined) may be scalars or per-dimension tuples.
    ``reg`` is the prior variance of the Volterra weights.
    """

    kind: str = "hilbert_se"
    D: int = 3
    num_basis: int = 4
    lengthscale: float | tuple = 1.0
    signal_var: float = 1.0
    domain: float | tuple = 2.0
    reg: float = 1.0
    input_lags: tuple = tuple(range(0, 7))
    output_lags: tuple = tuple(range(1, 8))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown feature kind {self.kind!r}; expected one of {KINDS}")
        if self.num_basis < 1:
            raise InvalidArgument("num_basis must be >= 1")
        if self.D < 1:
            raise InvalidArgument("D must be >= 1")
        if np.any(_per_dim(self.lengthscale, self.D, "lengthscale") <= 0):
            raise InvalidArgument("lengthscale must be positive")
        if np.any(_per_dim(self.domain, self.D, "domain") <= 0):
            raise InvalidArgument("domain half-width must be positive")
        if self.signal_var < 0:
            raise InvalidArgument("signal_var must be nonnegative")
        if self.reg <= 0:
            raise InvalidArgument("reg must be positive")

    @property
    def lengthscales(self) -> np.ndarray:
        return _per_dim(self.lengthscale, self.D, "lengthscale")

    @property
    def domains(self) -> np.ndarray:
        return _per_dim(self.domain, self.D, "domain")

    @property
    def num_features(self) -> int:
        return self.num_basis**self.D


@dataclass
class PriorSpec:
    """Zero-mean Gaussian prior with covariance ``kron(L_d @ L_d.T)``."""

    sqrt_factors: list = field(default_factory=list)

    def __post_init__(self):
        self.sqrt_factors = [np.atleast_2d(np.asarray(f, dtype=float)) for f in self.sqrt_factors]
        for k, f in enumerate(self.sqrt_factors):
            if f.shape[0] != f.shape[1]:
                raise InvalidArgument(f"prior factor {k} must be square, got {f.shape}")
            if not np.all(np.isfinite(f)):
                raise InvalidArgument(f"prior factor {k} is not finite")

    @property
    def mode_sizes(self) -> list[int]:
        return [f.shape[0] for f in self.sqrt_factors]

    def cov_factors(self) -> list[np.ndarray]:
        return [f @ f.T for f in self.sqrt_factors]

    def sqrt_ttm(self, aug_site: int | None = None) -> TensorTrainMatrix:
        return ttm_from_kron_factors(self.sqrt_factors, aug_site)

    def dense_sqrt(self) -> np.ndarray:
        out = np.ones((1, 1))
        for f in self.sqrt_factors:
            out = np.kron(out, f)
        return out

    def dense_cov(self) -> np.ndarray:
        out = np.ones((1, 1))
        for f in self.cov_factors():
            out = np.kron(out, f)
        return out


# --------------------------------------------------------------------------
# Hilbert-space squared exponential


def _hilbert_basis(x: np.ndarray, half_width: float, num_basis: int) -> np.ndarray:
    j = np.arange(1, num_basis + 1)
    return np.sin(np.pi * np.multiply.outer(x + half_width, j) / (2 * half_width)) / np.sqrt(half_width)


def hilbert_se_factors(x, config: FeatureConfig) -> Rank1FeatureTT:
    """Laplacian eigenfunctions on ``[-L, L]`` per input dimension."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != config.D:
        raise InvalidArgument(f"input has {x.size} dimensions, config expects {config.D}")
    doms = config.domains
    if np.any(np.abs(x) > doms) or not np.all(np.isfinite(x)):
        raise DomainError(f"input {x} outside the domain (-{doms}, {doms})")
    return Rank1FeatureTT(
        [_hilbert_basis(x[d], doms[d], config.num_basis) for d in range(config.D)]
    )


def hilbert_se_batch(X, config: FeatureConfig) -> list[np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != config.D:
        raise InvalidArgument(f"inputs have {X.shape[1]} columns, config expects {config.D}")
    doms = config.domains
    if np.any(np.abs(X) > doms) or not np.all(np.isfinite(X)):
        raise DomainError("some inputs lie outside the feature domain")
    return [_hilbert_basis(X[:, d], doms[d], config.num_basis) for d in range(config.D)]


def se_spectral_density(omega, lengthscale: float, scale: float) -> np.ndarray:
    """1-D SE spectral density ``scale * sqrt(2 pi l^2) * exp(-w^2 l^2 / 2)``."""
    omega = np.asarray(omega, dtype=float)
    return scale * np.sqrt(2 * np.pi * lengthscale**2) * np.exp(-0.5 * omega**2 * lengthscale**2)


def hilbert_frequencies(half_width: float, num_basis: int) -> np.ndarray:
    """Square roots of the Laplacian eigenvalues, ``pi j / (2 L)``."""
    return np.pi * np.arange(1, num_basis + 1) / (2 * half_width)


def se_prior(config: FeatureConfig) -> PriorSpec:
    """Diagonal square-root prior factors for the Hilbert-space SE basis.

    The signal variance is split as ``signal_var ** (1/D)`` per dimension so
    the Kronecker product recovers the full spectral density.
    """
    per_dim = config.signal_var ** (1.0 / config.D)
    factors = []
    for ell, half in zip(config.lengthscales, config.domains):
        s = se_spectral_density(hilbert_frequencies(half, config.num_basis), ell, per_dim)
        factors.append(np.diag(np.sqrt(s)))
    return PriorSpec(factors)


# --------------------------------------------------------------------------
# Volterra


def volterra_factors(u_window, config: FeatureConfig) -> Rank1FeatureTT:
    """Monomial factors ``[1, u_t, u_{t-1}, ..., u_{t-I+2}]``, repeated D times.

    ``u_window`` holds the ``I - 1`` most recent inputs, newest first.
    """
    u = np.asarray(u_window, dtype=float).ravel()
    if u.size != config.num_basis - 1:
        raise InvalidArgument(
            f"window needs {config.num_basis - 1} inputs, got {u.size}"
        )
    f = np.concatenate([[1.0], u])
    return Rank1FeatureTT([f] * config.D)


def volterra_batch(windows, config: FeatureConfig) -> list[np.ndarray]:
    W = np.atleast_2d(np.asarray(windows, dtype=float))
    if W.shape[1] != config.num_basis - 1:
        raise InvalidArgument(f"windows need {config.num_basis - 1} columns, got {W.shape[1]}")
    f = np.hstack([np.ones((W.shape[0], 1)), W])
    return [f] * config.D


def volterra_windows(u, memory: int) -> np.ndarray:
    """Sliding windows ``[u_t, ..., u_{t-memory+1}]`` for ``t >= memory - 1``."""
    u = np.asarray(u, dtype=float).ravel()
    n = u.size - memory + 1
    if n <= 0:
        return np.zeros((0, memory))
    return np.stack([u[memory - 1 - k: memory - 1 - k + n] for k in range(memory)], axis=1)


def volterra_prior(config: FeatureConfig) -> PriorSpec:
    """``sqrt(reg)`` on the first factor, identities elsewhere."""
    n = config.num_basis
    factors = [np.eye(n) for _ in range(config.D)]
    factors[0] = np.sqrt(config.reg) * factors[0]
    return PriorSpec(factors)


# --------------------------------------------------------------------------
# lagged input/output regressors


@dataclass
class LagEmbedding:
    """Lagged inputs and outputs rescaled into the SE feature domain.

    Inputs ``u_{t-k}`` for ``k`` in ``input_lags`` and outputs ``y_{t-k}`` for
    ``k`` in ``output_lags`` are concatenated (inputs first).  Each channel is
    mapped affinely so that the min/max of the calibration data land on
    ``-/+ margin * domain``; values beyond the domain are clipped just inside.
    """

    input_lags: tuple = tuple(range(0, 7))
    output_lags: tuple = tuple(range(1, 8))
    domain: float = 1.0
    margin: float = 0.9
    u_range: tuple = (-1.0, 1.0)
    y_range: tuple = (-1.0, 1.0)

    @property
    def D(self) -> int:
        return len(self.input_lags) + len(self.output_lags)

    @property
    def max_lag(self) -> int:
        return max(list(self.input_lags) + list(self.output_lags) + [0])

    def calibrate(self, u, y) -> "LagEmbedding":
        u = np.asarray(u, dtype=float)
        y = np.asarray(y, dtype=float)
        self.u_range = (float(u.min()), float(u.max()))
        self.y_range = (float(y.min()), float(y.max()))
        return self

    def _scale(self, values, rng) -> np.ndarray:
        lo, hi = rng
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        if half == 0:
            out = np.zeros_like(values, dtype=float)
        else:
            out = (np.asarray(values, dtype=float) - mid) / half * self.margin * self.domain
        lim = self.domain * (1 - 1e-9)
        return np.clip(out, -lim, lim)

    def embed(self, u_history, y_history):
        """Regressor for the newest time step, or ``None`` if history is short.

        ``u_history[-1]`` is ``u_t`` and ``y_history[-1]`` is ``y_t``.
        """
        u_history = np.asarray(u_history, dtype=float).ravel()
        y_history = np.asarray(y_history, dtype=float).ravel()
        t = u_history.size - 1
        if t < self.max_lag or y_history.size < u_history.size:
            return None
        us = [u_history[t - k] for k in self.input_lags]
        ys = [y_history[t - k] for k in self.output_lags]
        return np.concatenate([self._scale(us, self.u_range), self._scale(ys, self.y_range)])

    def embed_series(self, u, y) -> tuple[np.ndarray, np.ndarray]:
        """All regressors of a pair of series; returns ``(X, indices)``.

        Row ``n`` of ``X`` belongs to time step ``indices[n]`` (0-based); the
        first emitted index is ``max_lag``.
        """
        u = np.asarray(u, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if u.size != y.size:
            raise InvalidArgument("input and output series differ in length")
        idx = np.arange(self.max_lag, u.size)
        if idx.size == 0:
            return np.zeros((0, self.D)), idx
        cols = [u[idx - k] for k in self.input_lags]
        ucols = self._scale(np.stack(cols, axis=1), self.u_range) if cols else np.zeros((idx.size, 0))
        cols = [y[idx - k] for k in self.output_lags]
        ycols = self._scale(np.stack(cols, axis=1), self.y_range) if cols else np.zeros((idx.size, 0))
        return np.hstack([ucols, ycols]), idx


def lagged_io_embedding(u_history, y_history, lag_config: LagEmbedding):
    """Functional wrapper around :meth:`LagEmbedding.embed`."""
    return lag_config.embed(u_history, y_history)


# --------------------------------------------------------------------------


def feature_batch(X, config: FeatureConfig) -> list[np.ndarray]:
    """Per-dimension factor arrays for a batch of inputs."""
    if config.kind == "volterra":
        return volterra_batch(X, config)
    return hilbert_se_batch(X, config)


def feature_row(factors: Sequence[np.ndarray], n: int) -> Rank1FeatureTT:
    return Rank1FeatureTT([f[n] for f in factors])


def dense_features(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Row-wise Kronecker products, shape ``(N, prod I)``."""
    out = np.ones((factors[0].shape[0], 1))
    for f in factors:
        out = (out[:, :, None] * f[:, None, :]).reshape(out.shape[0], -1)
    return out


def make_prior(config: FeatureConfig) -> PriorSpec:
    if config.kind == "volterra":
        return volterra_prior(config)
    return se_prior(config)
