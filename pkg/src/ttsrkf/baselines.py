"""Reference filters: dense KF, dense square-root KF and the rounding-based TNKF."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgument, NumericalFailure, ResourceLimitError
from .features import PriorSpec
from .tensor_core import (
    Rank1FeatureTT,
    TensorTrain,
    TensorTrainMatrix,
    feasible_ranks,
    qr_pos,
    tt_add,
    tt_dot,
    tt_round,
    tt_scale,
    ttm_add,
    ttm_apply,
    ttm_from_kron_factors,
    ttm_outer,
    ttm_to_dense,
    tt_to_dense,
    zero_tt,
)

DENSE_BASELINE_CAP = 4096


def _dense_phi(phi) -> np.ndarray:
    if isinstance(phi, Rank1FeatureTT):
        return phi.to_dense()
    return np.asarray(phi, dtype=float).ravel()


def _check_finite(state, *arrays, step=None):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalFailure("non-finite value in filter update", state=state, step=step)


@dataclass
class DenseFilterState:
    """Dense Gaussian posterior; exactly one of ``cov`` and ``sqrt`` is set."""

    mean: np.ndarray
    noise_var: float
    cov: np.ndarray | None = None
    sqrt: np.ndarray | None = None
    t: int = 0

    @property
    def covariance(self) -> np.ndarray:
        return self.cov if self.cov is not None else self.sqrt @ self.sqrt.T


def dense_init(prior: PriorSpec, noise_var: float, square_root: bool = False, cap: int = DENSE_BASELINE_CAP) -> DenseFilterState:
    M = int(np.prod(prior.mode_sizes))
    if M > cap:
        raise ResourceLimitError(f"dense filter with M={M} exceeds the cap {cap}")
    if noise_var <= 0:
        raise InvalidArgument("noise_var must be positive")
    mean = np.zeros(M)
    if square_root:
        return DenseFilterState(mean, float(noise_var), sqrt=prior.dense_sqrt())
    return DenseFilterState(mean, float(noise_var), cov=prior.dense_cov())


def dense_kf_step(state: DenseFilterState, phi, y: float) -> DenseFilterState:
    """Measurement update with the Joseph-form covariance."""
    f = _dense_phi(phi)
    P = state.covariance
    with np.errstate(all="ignore"):
        Pf = P @ f
        S = f @ Pf + state.noise_var
        K = Pf / S
        mean = state.mean + K * (y - f @ state.mean)
        A = np.eye(f.size) - np.outer(K, f)
        cov = A @ P @ A.T + state.noise_var * np.outer(K, K)
    _check_finite(state, mean, cov, np.atleast_1d(S), step=state.t + 1)
    if S <= 0:
        raise NumericalFailure(f"innovation variance {S} is not positive", state=state, step=state.t + 1)
    return DenseFilterState(mean, state.noise_var, cov=cov, t=state.t + 1)


def dense_srkf_step(state: DenseFilterState, phi, y: float) -> DenseFilterState:
    """Square-root update: thin QR of ``[(I - K f^T) L, sigma K]^T``, ``L <- R^T``."""
    if state.sqrt is None:
        raise InvalidArgument("square-root update needs a state with a sqrt factor")
    f = _dense_phi(phi)
    L = state.sqrt
    with np.errstate(all="ignore"):
        v = L.T @ f
        S = v @ v + state.noise_var
        K = L @ v / S
        mean = state.mean + K * (y - f @ state.mean)
        stacked = np.hstack([L - np.outer(K, v), np.sqrt(state.noise_var) * K[:, None]])
    _check_finite(state, mean, stacked, step=state.t + 1)
    _, r = qr_pos(stacked.T)
    return DenseFilterState(mean, state.noise_var, sqrt=r.T, t=state.t + 1)


# --------------------------------------------------------------------------
# TNKF


@dataclass
class TnkfState:
    """TT mean and TTm covariance (not a square root), rounded every step."""

    mean: TensorTrain
    cov: TensorTrainMatrix
    noise_var: float
    max_rank_w: object
    max_rank_p: object
    rel_tol: float = 0.0
    t: int = 0

    def mean_dense(self) -> np.ndarray:
        return tt_to_dense(self.mean)

    def covariance_dense(self) -> np.ndarray:
        return ttm_to_dense(self.cov)


def tnkf_init(prior: PriorSpec, rank_w, rank_p, noise_var: float, rel_tol: float = 0.0) -> TnkfState:
    if noise_var <= 0:
        raise InvalidArgument("noise_var must be positive")
    modes = prior.mode_sizes
    cov = ttm_from_kron_factors(prior.cov_factors())
    return TnkfState(zero_tt(modes), cov, float(noise_var), rank_w, rank_p, rel_tol, 0)


def tnkf_covariance_update(state: TnkfState, phi: Rank1FeatureTT) -> tuple[TensorTrainMatrix, TensorTrain, float]:
    """Unrounded ``P - (P phi)(P phi)^T / S`` together with ``P phi`` and ``S``.

    Ranks of the result are ``R_P + R_P**2``.
    """
    Pf = ttm_apply(state.cov, phi.to_tt())
    S = tt_dot(phi.to_tt(), Pf) + state.noise_var
    return ttm_add(state.cov, ttm_outer(Pf, Pf, -1.0 / S)), Pf, S


def tnkf_step(state: TnkfState, phi, y: float) -> TnkfState:
    """Kalman update in TT form followed by TT-rounding of mean and covariance."""
    phi = phi if isinstance(phi, Rank1FeatureTT) else Rank1FeatureTT(phi)
    step = state.t + 1
    with np.errstate(all="ignore"):
        cov, Pf, S = tnkf_covariance_update(state, phi)
        if not np.isfinite(S) or S <= 0:
            raise NumericalFailure(f"innovation variance {S} is not positive", state=state, step=step)
        resid = y - tt_dot(state.mean, phi.to_tt())
        mean = tt_add(state.mean, tt_scale(Pf, resid / S))
        _check_finite(state, *mean.cores, *cov.cores, step=step)
        try:
            mean = tt_round(mean, feasible_ranks(mean.mode_sizes, state.max_rank_w), state.rel_tol)
            cov = tt_round(cov, state.max_rank_p, state.rel_tol)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"rounding failed: {exc}", state=state, step=step) from exc
    _check_finite(state, *mean.cores, *cov.cores, step=step)
    return replace(state, mean=mean, cov=cov, t=step)


def tnkf_predict(state: TnkfState, phi) -> tuple[float, float]:
    """Predictive mean and ``phi^T P phi`` (may be negative once PSD is lost)."""
    phi = phi if isinstance(phi, Rank1FeatureTT) else Rank1FeatureTT(phi)
    f = phi.to_tt()
    return tt_dot(state.mean, f), tt_dot(f, ttm_apply(state.cov, f))


def tnkf_predict_batch(state: TnkfState, factors) -> tuple[np.ndarray, np.ndarray]:
    factors = [np.atleast_2d(np.asarray(f, dtype=float)) for f in factors]
    N = factors[0].shape[0]
    env = np.ones((N, 1))
    for f, c in zip(factors, state.mean.cores):
        env = np.einsum("na,ni,aib->nb", env, f, c, optimize=True)
    means = env[:, 0].copy()
    env = np.ones((N, 1))
    for f, c in zip(factors, state.cov.cores):
        env = np.einsum("na,ni,aijb,nj->nb", env, f, c, f, optimize=True)
    return means, env[:, 0].copy()
