"""Square-root Kalman filter measurement updates in tensor-train format.

The weight mean is a TT and the square-root covariance factor ``L`` (with
``P = L @ L.T``) is a TT-matrix.  One measurement update runs

1. an ALS sweep fitting the TT mean to ``w + K (y - phi.T w)``,
2. an ALS sweep fitting the TTm factor to ``[(I - K phi.T) L, sigma K]``
   (the appended column lives in the augmented core, whose column index
   doubles),
3. the SVD-based truncation of the augmented core once its column
   multiplier reaches ``2**p``.

All contractions go core by core through left/right environments; no
quantity of size ``prod(I)`` is ever formed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .features import PriorSpec
from .tensor_core import (
    Rank1FeatureTT,
    TensorTrain,
    TensorTrainMatrix,
    _shift_left,
    _shift_right,
    feasible_ranks,
    orthogonalize_site,
    ttm_apply,
    ttm_random,
    ttm_to_dense,
    ttm_transpose_apply,
    tt_norm,
    tt_scale,
    tt_to_dense,
)

logger = logging.getLogger(__name__)

SWEEP_ORDERS = ("lr", "rl")


@dataclass(frozen=True)
class SweepConfig:
    max_sweeps: int = 1
    residual_tol: float = 1e-8
    order: str = "lr"

    def __post_init__(self):
        if self.order not in SWEEP_ORDERS:
            raise InvalidArgument(f"sweep order must be one of {SWEEP_ORDERS}")
        if self.max_sweeps < 1:
            raise InvalidArgument("max_sweeps must be >= 1")


@dataclass(frozen=True)
class GaussianPrediction:
    mean: float
    variance: float


@dataclass
class FilterState:
    """Posterior ``N(mean, L L^T)`` after ``t`` measurement updates.

    ``guess`` is the initial iterate of the next covariance sweep.  It is set
    only before the first update (a random TTm with the working ranks); later
    steps warm-start from ``sqrt_factor``.
    """

    mean: TensorTrain
    sqrt_factor: TensorTrainMatrix
    noise_var: float
    p: int
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seed: int | None = None
    guess: TensorTrainMatrix | None = None
    t: int = 0

    @property
    def aug_site(self) -> int:
        return self.sqrt_factor.aug_site

    @property
    def mode_sizes(self) -> list[int]:
        return self.mean.mode_sizes

    def mean_dense(self) -> np.ndarray:
        return tt_to_dense(self.mean)

    def sqrt_dense(self) -> np.ndarray:
        return ttm_to_dense(self.sqrt_factor)

    def covariance_dense(self) -> np.ndarray:
        L = self.sqrt_dense()
        return L @ L.T


# --------------------------------------------------------------------------
# environments
#
# Left environments are built from cores as stored; right environments use
# the same routines on cores with their rank axes swapped.


def _flip(core: np.ndarray) -> np.ndarray:
    return core.transpose(2, 1, 0) if core.ndim == 3 else core.transpose(3, 1, 2, 0)


def _env_pair(E, x, w):
    # E[x, w] with x, w 3-way TT cores
    t = np.tensordot(E, x, axes=(0, 0))  # w i X
    return np.tensordot(t, w, axes=([0, 1], [0, 1]))  # X W


def _env_pair4(E, X, P):
    # E[x, p]; X and P share row and column indices
    t = np.tensordot(E, X, axes=(0, 0))  # p i c X
    return np.tensordot(t, P, axes=([0, 1, 2], [0, 1, 2]))  # X P


def _env_outer(E, X, u, v):
    # E[x, a, w] for the TTm u v^T with u = L (L^T phi), v = L^T phi
    xv = np.tensordot(X, v, axes=(2, 1))  # x i X w W
    eu = np.tensordot(E, u, axes=(1, 0))  # x w i A
    return np.tensordot(eu, xv, axes=([0, 1, 2], [0, 3, 1])).transpose(1, 0, 2)  # X A W


def _core_pair(EL, w, ER):
    t = np.tensordot(EL, w, axes=(1, 0))  # x i W
    return np.tensordot(t, ER, axes=(2, 1))  # x i X


def _core_pair4(EL, P, ER):
    t = np.tensordot(EL, P, axes=(1, 0))  # x i c P
    return np.tensordot(t, ER, axes=(3, 1))  # x i c X


def _core_outer(EL, u, v, ER):
    t = np.tensordot(EL, u, axes=(1, 0))  # x w i A
    t = np.tensordot(t, ER, axes=(3, 1))  # x w i X W
    t = np.tensordot(t, v, axes=([1, 4], [0, 2]))  # x i X c
    return t.transpose(0, 1, 3, 2)


class _MeanProblem:
    """Projection of ``w_prev + coef * u`` onto the TT frame, ``u = L (L^T phi)``."""

    def __init__(self, w_prev: TensorTrain, u: TensorTrain, coef: float):
        self.w = w_prev.cores
        self.u = u.cores
        self.coef = coef

    def edge(self):
        return (np.ones((1, 1)), np.ones((1, 1)))

    def env(self, X, k, E, side):
        w, u = self.w[k], self.u[k]
        if side == "right":
            X, w, u = _flip(X), _flip(w), _flip(u)
        return (_env_pair(E[0], X, w), _env_pair(E[1], X, u))

    def solve(self, d, EL, ER):
        core = _core_pair(EL[0], self.w[d], ER[0])
        if self.coef != 0.0:
            core = core + self.coef * _core_pair(EL[1], self.u[d], ER[1])
        return core


class _CovProblem:
    """Projection of the three-term square-root target onto the TTm frame.

    target = [1 0] kron L
             - (1/S) [1 0] kron u v^T
             + (sigma/S) [0 1] kron e_1^T kron u

    with ``v = L^T phi`` and ``u = L v``; the rank-one product ``u v^T`` is
    never formed.
    """

    def __init__(self, L: TensorTrainMatrix, v: TensorTrain, S: float, sigma: float, u: TensorTrain | None = None):
        self.P = L.cores
        self.v = v.cores
        self.u = (u if u is not None else ttm_apply(L, v)).cores
        self.S = S
        self.sigma = sigma
        self.aug = L.aug_site
        self.m = L.aug_multiplier
        self.J = L.col_sizes

    def first_col(self, k):
        # column of the appended block: block m, j = 0
        return self.m * self.J[k] if k == self.aug else 0

    def edge(self):
        return (np.ones((1, 1)), np.ones((1, 1, 1)), np.ones((1, 1)))

    def env(self, X, k, E, side):
        P, u, v = self.P[k], self.u[k], self.v[k]
        X1 = X[:, :, : P.shape[2], :]
        X3 = X[:, :, self.first_col(k), :]
        if side == "right":
            X1, X3, P, u, v = _flip(X1), _flip(X3), _flip(P), _flip(u), _flip(v)
        return (
            _env_pair4(E[0], X1, P),
            _env_outer(E[1], X1, u, v),
            _env_pair(E[2], X3, u),
        )

    def terms(self, d, EL, ER):
        t1 = _core_pair4(EL[0], self.P[d], ER[0])
        t2 = _core_outer(EL[1], self.u[d], self.v[d], ER[1]) / self.S
        t3 = (self.sigma / self.S) * _core_pair(EL[2], self.u[d], ER[2])
        return t1, t2, t3

    def assemble(self, d, t1, t2, t3):
        cols = 2 * self.P[d].shape[2] if d == self.aug else self.P[d].shape[2]
        out = np.zeros((t1.shape[0], t1.shape[1], cols, t1.shape[3]))
        out[:, :, : t1.shape[2], :] = t1 - t2
        out[:, :, self.first_col(d), :] += t3
        return out

    def solve(self, d, EL, ER):
        return self.assemble(d, *self.terms(d, EL, ER))


def _environments(problem, cores, d):
    D = len(cores)
    EL = problem.edge()
    for k in range(d):
        EL = problem.env(cores[k], k, EL, "left")
    ER = problem.edge()
    for k in range(D - 1, d, -1):
        ER = problem.env(cores[k], k, ER, "right")
    return EL, ER


def _als(cores, problem, start, sweep: SweepConfig, callback=None):
    """Run ALS sweeps; ``cores`` must be in site-``start`` canonical form.

    Returns the updated cores and the final canonical site.
    """
    cores = list(cores)
    D = len(cores)
    left: list = [None] * D
    right: list = [None] * D
    left[0] = problem.edge()
    right[D - 1] = problem.edge()
    for k in range(start):
        left[k + 1] = problem.env(cores[k], k, left[k], "left")
    for k in range(D - 1, start, -1):
        right[k - 1] = problem.env(cores[k], k, right[k], "right")

    direction = 1 if sweep.order == "lr" else -1
    site = start
    previous = None
    for _ in range(sweep.max_sweeps):
        sites = range(site, D) if direction > 0 else range(site, -1, -1)
        for d in sites:
            cores[d] = problem.solve(d, left[d], right[d])
            if not np.all(np.isfinite(cores[d])):
                raise NumericalFailure(f"non-finite core at site {d}")
            if callback is not None:
                callback(d, cores)
            site = d
            if direction > 0 and d < D - 1:
                _shift_right(cores, d)
                left[d + 1] = problem.env(cores[d], d, left[d], "left")
            elif direction < 0 and d > 0:
                _shift_left(cores, d)
                right[d - 1] = problem.env(cores[d], d, right[d], "right")
        # objective = ||target||^2 - ||core||^2, so track the core norm
        current = float(np.sum(cores[site] ** 2))
        if previous is not None and abs(current - previous) <= sweep.residual_tol * max(current, 1e-300):
            break
        previous = current
        direction = -direction
    return cores, site


# --------------------------------------------------------------------------
# initialization


def exact_qr_budget(rank_left: int, rows: int, rank_right: int, cols: int) -> int:
    """Smallest ``p >= 1`` with ``2**(p-1) * cols >= rank_left * rows * rank_right``.

    With this budget the truncation of the augmented core never discards a
    nonzero singular value.
    """
    need = rank_left * rows * rank_right
    p = 1
    while (1 << (p - 1)) * cols < need:
        p += 1
    return p


def _start_site(D: int, sweep: SweepConfig) -> int:
    return 0 if sweep.order == "lr" else D - 1


def init_filter(
    prior: PriorSpec,
    rank_w,
    rank_l,
    noise_var: float,
    p: int | None = None,
    seed: int | None = 0,
    aug_site: int | None = None,
    sweep: SweepConfig | None = None,
) -> FilterState:
    """Zero-mean TT prior, Kronecker square-root prior and a random first guess.

    The mean is a random site-canonical TT whose canonical core is zero, so
    it represents the zero vector exactly while its frame is a random
    orthonormal basis.  ``rank_w``/``rank_l`` are ints or rank vectors and
    are clipped to feasible values.  ``p=None`` picks the smallest budget
    for which the QR step is exact.
    """
    if not isinstance(prior, PriorSpec):
        raise InvalidArgument("prior must be a PriorSpec")
    if noise_var <= 0 or not np.isfinite(noise_var):
        raise InvalidArgument("noise_var must be positive")
    sweep = sweep or SweepConfig()
    modes = prior.mode_sizes
    D = len(modes)
    if aug_site is None:
        aug_site = (D + 1) // 2 - 1
    if not 0 <= aug_site < D:
        raise InvalidArgument(f"aug_site {aug_site} out of range")
    mean_seq, cov_seq = np.random.SeedSequence(seed).spawn(2)

    start = _start_site(D, sweep)
    rw = feasible_ranks(modes, rank_w)
    rng = np.random.default_rng(mean_seq)
    mean_cores = [rng.standard_normal((rw[k], n, rw[k + 1])) for k, n in enumerate(modes)]
    mean = orthogonalize_site(TensorTrain(mean_cores), start)
    mean.cores[start] = np.zeros_like(mean.cores[start])

    L0 = prior.sqrt_ttm(aug_site)
    I, J = L0.row_sizes, L0.col_sizes
    rl = feasible_ranks([i * j for i, j in zip(I, J)], rank_l)
    scale = 1.0 / math.sqrt(max(rl) * max(I) * max(J))
    guess = ttm_random(
        I, J, rl, np.random.default_rng(cov_seq), aug_site, 2, scale, canonical_site=aug_site
    )
    if p is None:
        p = exact_qr_budget(rl[aug_site], I[aug_site], rl[aug_site + 1], J[aug_site])
    if p < 1:
        raise InvalidArgument("p must be >= 1")
    return FilterState(mean, L0, float(noise_var), int(p), sweep, seed, guess, 0)


# --------------------------------------------------------------------------
# measurement update pieces


def _as_phi(phi) -> Rank1FeatureTT:
    if isinstance(phi, Rank1FeatureTT):
        return phi
    return Rank1FeatureTT(phi)


def _rank1_dot(tt: TensorTrain, phi: Rank1FeatureTT) -> float:
    env = np.ones(1)
    for f, c in zip(phi.factors, tt.cores):
        env = np.einsum("a,i,aib->b", env, f, c)
    return float(env[0])


def innovation(state: FilterState, phi, v: TensorTrain | None = None) -> float:
    """``S = ||L^T phi||^2 + noise_var``, never below ``noise_var``."""
    phi = _as_phi(phi)
    if v is None:
        v = ttm_transpose_apply(state.sqrt_factor, phi)
    S = tt_norm(v) ** 2 + state.noise_var
    if not np.isfinite(S) or S < state.noise_var * (1 - 1e-12):
        raise NumericalFailure(f"inadmissible innovation variance {S}", state=state)
    return S


def kalman_gain(state: FilterState, phi, S: float) -> TensorTrain:
    """TT of ``L (L^T phi) / S``; ranks are at most ``R_L**2``."""
    if not S > 0:
        raise NumericalFailure(f"innovation variance must be positive, got {S}", state=state)
    phi = _as_phi(phi)
    v = ttm_transpose_apply(state.sqrt_factor, phi)
    return tt_scale(ttm_apply(state.sqrt_factor, v), 1.0 / S)


def mean_sweep(
    state: FilterState,
    phi,
    y: float,
    S: float | None = None,
    callback: Callable | None = None,
) -> TensorTrain:
    """ALS update of the TT mean.

    Each core is set to the projection of ``w + K (y - phi.T w)`` onto the
    frame of the other cores; the gain is kept factored as ``L (L^T phi)``.
    """
    phi = _as_phi(phi)
    if not np.isfinite(y):
        raise NumericalFailure("non-finite measurement", state=state)
    L = state.sqrt_factor
    v = ttm_transpose_apply(L, phi)
    if S is None:
        S = innovation(state, phi, v)
    resid = y - _rank1_dot(state.mean, phi)
    problem = _MeanProblem(state.mean, ttm_apply(L, v), resid / S)
    start = _start_site(state.mean.ndim, state.sweep)
    work = orthogonalize_site(state.mean, start)
    cores, site = _als(work.cores, problem, start, state.sweep, callback)
    return TensorTrain(cores, site)


def pad_columns(L: TensorTrainMatrix) -> TensorTrainMatrix:
    """Double the augmented column index, filling the new block with zeros."""
    a = L.aug_site
    cores = list(L.cores)
    c = cores[a]
    cores[a] = np.concatenate([c, np.zeros_like(c)], axis=2)
    return L.with_cores(cores, L.canonical_site, 2 * L.aug_multiplier)


def _working_guess(state: FilterState) -> TensorTrainMatrix:
    L = state.sqrt_factor
    if state.guess is not None:
        g = state.guess
        if g.aug_site != L.aug_site or g.aug_multiplier != 2 * L.aug_multiplier:
            raise InvalidArgument("initial guess does not match the augmented layout")
        return g
    return pad_columns(L)


def _require_frame(work: TensorTrainMatrix, prior: TensorTrainMatrix, d: int) -> None:
    if work.canonical_site != d:
        raise InvalidArgument(f"working factor must be in site-{d} canonical form")
    if work.aug_site != prior.aug_site or work.aug_multiplier != 2 * prior.aug_multiplier:
        raise InvalidArgument("working factor must have twice the prior's column blocks")


def _cov_terms(L_prev, L_work, d, phi, S, noise_var):
    _require_frame(L_work, L_prev, d)
    phi = _as_phi(phi)
    v = ttm_transpose_apply(L_prev, phi)
    problem = _CovProblem(L_prev, v, S, math.sqrt(noise_var))
    EL, ER = _environments(problem, L_work.cores, d)
    return problem, problem.terms(d, EL, ER)


def _embed(problem, d, term, block):
    cols = 2 * problem.P[d].shape[2] if d == problem.aug else problem.P[d].shape[2]
    out = np.zeros((term.shape[0], term.shape[1], cols, term.shape[-1]))
    if block == "first":
        out[:, :, : term.shape[2], :] = term
    else:
        out[:, :, problem.first_col(d), :] = term
    return out


def cov_term1(L_prev: TensorTrainMatrix, L_work: TensorTrainMatrix, d: int) -> np.ndarray:
    """Projection of ``[1 0] kron L_prev`` onto the frame of ``L_work`` at ``d``."""
    phi = [np.zeros(n) for n in L_prev.row_sizes]
    problem, (t1, _, _) = _cov_terms(L_prev, L_work, d, phi, 1.0, 0.0)
    return _embed(problem, d, t1, "first")


def cov_term2(L_prev, L_work, d: int, phi, S: float) -> np.ndarray:
    """Projection of ``[1 0] kron L L^T phi S^-1 phi^T L``."""
    problem, (_, t2, _) = _cov_terms(L_prev, L_work, d, phi, S, 0.0)
    return _embed(problem, d, t2, "first")


def cov_term3(L_prev, L_work, d: int, phi, S: float, noise_var: float) -> np.ndarray:
    """Projection of ``[0 1] kron e_1^T kron sigma L L^T phi S^-1``."""
    problem, (_, _, t3) = _cov_terms(L_prev, L_work, d, phi, S, noise_var)
    return _embed(problem, d, t3, "second")


def cov_sweep(
    state: FilterState,
    phi,
    S: float | None = None,
    callback: Callable | None = None,
) -> TensorTrainMatrix:
    """ALS update of the square-root factor; the result has twice the column blocks."""
    phi = _as_phi(phi)
    L = state.sqrt_factor
    v = ttm_transpose_apply(L, phi)
    if S is None:
        S = innovation(state, phi, v)
    problem = _CovProblem(L, v, S, math.sqrt(state.noise_var))
    start = _start_site(L.ndim, state.sweep)
    work = orthogonalize_site(_working_guess(state), start)
    cores, site = _als(work.cores, problem, start, state.sweep, callback)
    return work.with_cores(cores, site)


def truncate_aug(L: TensorTrainMatrix, keep_multiplier: int) -> tuple[TensorTrainMatrix, np.ndarray]:
    """Thin SVD of the augmented core, keeping ``keep_multiplier * J`` columns of ``U S``.

    The right singular vectors are dropped: they cancel in ``L @ L.T``.
    Returns the new factor (site-``aug`` canonical) and all singular values.
    """
    a = L.aug_site
    if a is None:
        raise InvalidArgument("factor has no augmented core")
    L = orthogonalize_site(L, a)
    c = L.cores[a]
    r0, i, cols, r1 = c.shape
    keep = keep_multiplier * L.col_sizes[a]
    mat = c.transpose(0, 1, 3, 2).reshape(r0 * i * r1, cols)
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    k = min(keep, s.size)
    us = np.zeros((mat.shape[0], keep))
    us[:, :k] = u[:, :k] * s[:k]
    cores = list(L.cores)
    cores[a] = us.reshape(r0, i, r1, keep).transpose(0, 1, 3, 2)
    return L.with_cores(cores, a, keep_multiplier), s


def qr_step(L: TensorTrainMatrix, p: int, flush: bool = False) -> TensorTrainMatrix:
    """Restore the column size of the augmented core once the budget is spent.

    With column multiplier ``2**q``: a no-op while ``q < p``; otherwise the
    augmented core is truncated to ``2**(q-1) * J`` columns.  ``flush=True``
    truncates straight to ``J`` columns.
    """
    m = L.aug_multiplier
    q = int(round(math.log2(m))) if m > 0 else 0
    if 1 << q != m:
        raise InvalidArgument(f"column multiplier {m} is not a power of two")
    if flush:
        return L if m == 1 else truncate_aug(L, 1)[0]
    if q < p:
        return L
    return truncate_aug(L, 1 << (q - 1))[0]


def move_aug_index(L: TensorTrainMatrix, direction) -> TensorTrainMatrix:
    """Move the column-block index of the augmented core to a neighbour.

    The augmented core is split by an SVD into a plain core and ``S V^T``,
    which carries the block index and is absorbed into the neighbour.  The
    dense matrix is unchanged; the bond rank becomes the SVD rank.
    """
    step = {"right": 1, "left": -1, 1: 1, -1: -1}.get(direction)
    a = L.aug_site
    if step is None or a is None:
        raise InvalidArgument("need an augmented core and a direction of +-1")
    b = a + step
    if not 0 <= b < L.ndim:
        raise InvalidArgument(f"cannot move the augmented index past the boundary from site {a}")
    m = L.aug_multiplier
    cores = list(L.cores)
    c = cores[a]
    r0, i, _, r1 = c.shape
    J = L.col_sizes[a]
    c5 = c.reshape(r0, i, m, J, r1)
    nb = cores[b]
    if step > 0:
        mat = c5.transpose(0, 1, 3, 2, 4).reshape(r0 * i * J, m * r1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        k = s.size
        cores[a] = u.reshape(r0, i, J, k)
        sv = (s[:, None] * vt).reshape(k, m, r1)
        n0, ni, nj, n1 = nb.shape
        new = np.einsum("kbr,rijs->kibjs", sv, nb)
        cores[b] = new.reshape(k, ni, m * nj, n1)
        site = b
    else:
        mat = c5.transpose(2, 0, 1, 3, 4).reshape(m * r0, i * J * r1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        k = s.size
        cores[a] = vt.reshape(k, i, J, r1)
        us = (u * s).reshape(m, r0, k)
        n0, ni, nj, n1 = nb.shape
        new = np.einsum("qijr,brk->qibjk", nb, us)
        cores[b] = new.reshape(n0, ni, m * nj, k)
        site = b
    return TensorTrainMatrix(cores, b, m, site)


# --------------------------------------------------------------------------
# step and prediction


def step(state: FilterState, phi, y: float, test_phi=None):
    """One measurement update; returns ``(new_state, prediction or None)``.

    On failure a :class:`NumericalFailure` carrying the unchanged pre-step
    state is raised.
    """
    phi = _as_phi(phi)
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            v = ttm_transpose_apply(state.sqrt_factor, phi)
            S = innovation(state, phi, v)
            mean = mean_sweep(state, phi, y, S)
            L = cov_sweep(state, phi, S)
            L = qr_step(L, state.p)
    except NumericalFailure as exc:
        raise NumericalFailure(str(exc), state=state, step=state.t + 1) from exc
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        raise NumericalFailure(f"numerical failure in step {state.t + 1}: {exc}", state=state, step=state.t + 1) from exc
    new = replace(state, mean=mean, sqrt_factor=L, guess=None, t=state.t + 1)
    pred = predict(new, test_phi) if test_phi is not None else None
    return new, pred


def predict(state: FilterState, phi) -> GaussianPrediction:
    """Predictive mean ``phi.T w`` and variance ``||L^T phi||^2``."""
    phi = _as_phi(phi)
    m = _rank1_dot(state.mean, phi)
    var = tt_norm(ttm_transpose_apply(state.sqrt_factor, phi)) ** 2
    return GaussianPrediction(m, var)


def predict_batch(state: FilterState, factors: Sequence[np.ndarray], chunk_entries: int = 1 << 22):
    """Predictive means and variances for a batch of rank-1 features.

    ``factors[d]`` has shape ``(N, I_d)``.  Variances are squared norms of
    QR-compressed square roots, hence nonnegative.
    """
    factors = [np.atleast_2d(np.asarray(f, dtype=float)) for f in factors]
    N = factors[0].shape[0]
    means = np.empty(N)
    env = np.ones((N, 1))
    for f, c in zip(factors, state.mean.cores):
        env = np.einsum("na,ni,aib->nb", env, f, c, optimize=True)
    means[:] = env[:, 0]

    L = state.sqrt_factor
    width = max(c.shape[0] * c.shape[2] * c.shape[3] for c in L.cores)
    chunk = max(1, chunk_entries // max(width * max(L.ranks), 1))
    variances = np.empty(N)
    for lo in range(0, N, chunk):
        hi = min(N, lo + chunk)
        F = np.ones((hi - lo, 1, 1))
        for f, c in zip(factors, L.cores):
            # Y[n, s, j, b] = sum_a,i F[n, a, s] f[n, i] c[a, i, j, b]
            g = np.einsum("nas,ni->nsai", F, f[lo:hi])
            n, s = g.shape[:2]
            y = g.reshape(n * s, -1) @ c.reshape(-1, c.shape[2] * c.shape[3])
            y = y.reshape(n, s * c.shape[2], c.shape[3])
            r = np.linalg.qr(y, mode="r")
            F = np.swapaxes(r, 1, 2)
        variances[lo:hi] = np.sum(F**2, axis=(1, 2))
    return means, variances
