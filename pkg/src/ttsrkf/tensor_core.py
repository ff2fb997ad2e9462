"""Tensor-train vectors and matrices.

Index convention: dimension 1 is the outermost Kronecker factor, i.e. the
dense vector of a TT with cores ``G1, ..., GD`` is the C-order flattening of
the full tensor ``T[i1, ..., iD]``, and ``kron(a1, ..., aD)`` is a rank-1 TT.
Sites are 0-based.

A :class:`TensorTrainMatrix` may carry one *augmented* core whose column
index has size ``aug_multiplier * J``.  The column index of that core is split
as ``c = b * J + j``; the block index ``b`` is the outermost column index of
the dense matrix, so the dense matrix of a TTm with multiplier ``m`` is the
horizontal concatenation of ``m`` blocks of size ``prod(I) x prod(J)``.
"""

from __future__ import annotations

import logging
import os
from typing import Sequence

import numpy as np

from .errors import InvalidArgument, ResourceLimitError

logger = logging.getLogger(__name__)

DEFAULT_DENSE_CAP = 2**24


def dense_cap() -> int:
    """Maximum number of entries a dense oracle may materialize."""
    value = os.environ.get("TTSRKF_DENSE_CAP")
    if value:
        try:
            return int(value)
        except ValueError:
            raise InvalidArgument(f"TTSRKF_DENSE_CAP must be an integer, got {value!r}")
    return DEFAULT_DENSE_CAP


def _check_cap(size: int, cap: int | None) -> None:
    limit = dense_cap() if cap is None else cap
    if size > limit:
        raise ResourceLimitError(
            f"dense reconstruction needs {size} entries, cap is {limit}"
        )


def qr_pos(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Householder QR with the diagonal of R made nonnegative."""
    q, r = np.linalg.qr(a)
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s, r * s[:, None]


def feasible_ranks(mode_sizes: Sequence[int], requested) -> list[int]:
    """Clip requested TT-ranks to ``min(prod left, prod right)``.

    ``requested`` is an int (uniform interior rank) or a sequence of either
    ``D + 1`` ranks (boundaries included) or ``D - 1`` interior ranks.
    """
    sizes = [int(n) for n in mode_sizes]
    D = len(sizes)
    if np.isscalar(requested):
        req = [1] + [int(requested)] * (D - 1) + [1]
    else:
        req = [int(r) for r in requested]
        if len(req) == D - 1:
            req = [1] + req + [1]
        if len(req) != D + 1:
            raise InvalidArgument(f"rank vector needs {D + 1} entries, got {len(req)}")
    if any(r < 1 for r in req):
        raise InvalidArgument(f"ranks must be positive, got {req}")
    out = [1]
    for k in range(1, D):
        left = int(np.prod(sizes[:k], dtype=object))
        right = int(np.prod(sizes[k:], dtype=object))
        out.append(min(req[k], left, right))
    out.append(1)
    if out != [1] + req[1:-1] + [1]:
        logger.debug("ranks %s clipped to %s", req, out)
    return out


class TensorTrain:
    """A vector of length ``prod(mode_sizes)`` stored as a tensor train.

    Parameters
    ----------
    cores : list of ndarray
        Core ``d`` has shape ``(R_d, I_d, R_{d+1})`` with ``R_0 = R_D = 1``.
    canonical_site : int, optional
        If set, cores left of the site are left-orthonormal and cores right of
        it are right-orthonormal.
    """

    def __init__(self, cores: Sequence[np.ndarray], canonical_site: int | None = None):
        cores = [np.asarray(c, dtype=float) for c in cores]
        if not cores:
            raise InvalidArgument("a tensor train needs at least one core")
        for k, c in enumerate(cores):
            if c.ndim != 3:
                raise InvalidArgument(f"core {k} must be 3-way, got shape {c.shape}")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise InvalidArgument("boundary ranks must be 1")
        for k in range(len(cores) - 1):
            if cores[k].shape[2] != cores[k + 1].shape[0]:
                raise InvalidArgument(
                    f"rank mismatch between cores {k} and {k + 1}: "
                    f"{cores[k].shape} vs {cores[k + 1].shape}"
                )
        if canonical_site is not None and not 0 <= canonical_site < len(cores):
            raise InvalidArgument(f"canonical site {canonical_site} out of range")
        self.cores = cores
        self.canonical_site = canonical_site

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def mode_sizes(self) -> list[int]:
        return [c.shape[1] for c in self.cores]

    @property
    def ranks(self) -> list[int]:
        return [1] + [c.shape[2] for c in self.cores]

    @property
    def size(self) -> int:
        return int(np.prod(self.mode_sizes, dtype=object))

    def copy(self) -> "TensorTrain":
        return TensorTrain([c.copy() for c in self.cores], self.canonical_site)

    def to_dense(self, cap: int | None = None) -> np.ndarray:
        return tt_to_dense(self, cap)

    def norm(self) -> float:
        return tt_norm(self)

    def __repr__(self) -> str:
        return (
            f"TensorTrain(modes={self.mode_sizes}, ranks={self.ranks}, "
            f"site={self.canonical_site})"
        )


class TensorTrainMatrix:
    """A ``prod(I) x aug_multiplier * prod(J)`` matrix in TT-matrix format.

    Core ``d`` has shape ``(R_d, I_d, J_d, R_{d+1})`` except the core at
    ``aug_site``, whose column size is ``aug_multiplier * J_d``.
    """

    def __init__(
        self,
        cores: Sequence[np.ndarray],
        aug_site: int | None = None,
        aug_multiplier: int = 1,
        canonical_site: int | None = None,
    ):
        cores = [np.asarray(c, dtype=float) for c in cores]
        if not cores:
            raise InvalidArgument("a TT-matrix needs at least one core")
        for k, c in enumerate(cores):
            if c.ndim != 4:
                raise InvalidArgument(f"core {k} must be 4-way, got shape {c.shape}")
        if cores[0].shape[0] != 1 or cores[-1].shape[3] != 1:
            raise InvalidArgument("boundary ranks must be 1")
        for k in range(len(cores) - 1):
            if cores[k].shape[3] != cores[k + 1].shape[0]:
                raise InvalidArgument(
                    f"rank mismatch between cores {k} and {k + 1}: "
                    f"{cores[k].shape} vs {cores[k + 1].shape}"
                )
        aug_multiplier = int(aug_multiplier)
        if aug_multiplier < 1:
            raise InvalidArgument("aug_multiplier must be >= 1")
        if aug_site is None:
            if aug_multiplier != 1:
                raise InvalidArgument("aug_multiplier > 1 needs an aug_site")
        else:
            if not 0 <= aug_site < len(cores):
                raise InvalidArgument(f"aug site {aug_site} out of range")
            if cores[aug_site].shape[2] % aug_multiplier:
                raise InvalidArgument(
                    f"augmented column size {cores[aug_site].shape[2]} is not a "
                    f"multiple of {aug_multiplier}"
                )
        if canonical_site is not None and not 0 <= canonical_site < len(cores):
            raise InvalidArgument(f"canonical site {canonical_site} out of range")
        self.cores = cores
        self.aug_site = aug_site
        self.aug_multiplier = aug_multiplier
        self.canonical_site = canonical_site

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def row_sizes(self) -> list[int]:
        return [c.shape[1] for c in self.cores]

    @property
    def col_sizes(self) -> list[int]:
        """Base column sizes ``J_d`` (without the augmentation multiplier)."""
        out = [c.shape[2] for c in self.cores]
        if self.aug_site is not None:
            out[self.aug_site] //= self.aug_multiplier
        return out

    @property
    def core_col_sizes(self) -> list[int]:
        """Column sizes as stored in the cores."""
        return [c.shape[2] for c in self.cores]

    @property
    def ranks(self) -> list[int]:
        return [1] + [c.shape[3] for c in self.cores]

    @property
    def shape(self) -> tuple[int, int]:
        rows = int(np.prod(self.row_sizes, dtype=object))
        cols = int(np.prod(self.col_sizes, dtype=object)) * self.aug_multiplier
        return rows, cols

    def copy(self) -> "TensorTrainMatrix":
        return TensorTrainMatrix(
            [c.copy() for c in self.cores],
            self.aug_site,
            self.aug_multiplier,
            self.canonical_site,
        )

    def with_cores(self, cores, canonical_site=None, aug_multiplier=None) -> "TensorTrainMatrix":
        return TensorTrainMatrix(
            cores,
            self.aug_site,
            self.aug_multiplier if aug_multiplier is None else aug_multiplier,
            canonical_site,
        )

    def merged(self) -> TensorTrain:
        """View as a TT over merged ``(row, column)`` indices."""
        cores = [c.reshape(c.shape[0], c.shape[1] * c.shape[2], c.shape[3]) for c in self.cores]
        return TensorTrain(cores, self.canonical_site)

    def _unmerge(self, tt: TensorTrain) -> "TensorTrainMatrix":
        cores = [
            c.reshape(c.shape[0], n_i, n_j, c.shape[2])
            for c, n_i, n_j in zip(tt.cores, self.row_sizes, self.core_col_sizes)
        ]
        return self.with_cores(cores, tt.canonical_site)

    def to_dense(self, cap: int | None = None) -> np.ndarray:
        return ttm_to_dense(self, cap)

    def __repr__(self) -> str:
        return (
            f"TensorTrainMatrix(rows={self.row_sizes}, cols={self.col_sizes}, "
            f"ranks={self.ranks}, aug_site={self.aug_site}, "
            f"aug_multiplier={self.aug_multiplier}, site={self.canonical_site})"
        )


class Rank1FeatureTT:
    """Feature vector ``kron(f_1, ..., f_D)`` kept as its per-dimension factors."""

    def __init__(self, factors: Sequence[np.ndarray]):
        factors = [np.asarray(f, dtype=float).ravel() for f in factors]
        if not factors:
            raise InvalidArgument("need at least one factor")
        self.factors = factors

    @property
    def mode_sizes(self) -> list[int]:
        return [f.size for f in self.factors]

    def to_tt(self) -> TensorTrain:
        return TensorTrain([f.reshape(1, -1, 1) for f in self.factors])

    def to_dense(self, cap: int | None = None) -> np.ndarray:
        _check_cap(int(np.prod(self.mode_sizes, dtype=object)), cap)
        out = np.ones(1)
        for f in self.factors:
            out = np.kron(out, f)
        return out

    def __repr__(self) -> str:
        return f"Rank1FeatureTT(modes={self.mode_sizes})"


# --------------------------------------------------------------------------
# construction and dense conversion


def tt_random(mode_sizes, ranks, rng_seed=None, canonical_site: int | None = None) -> TensorTrain:
    """Random TT with i.i.d. standard normal entries.

    Ranks are clipped to the feasible maxima.  With ``canonical_site`` set the
    result is orthogonalized after sampling.
    """
    mode_sizes = list(mode_sizes)
    if not mode_sizes:
        raise InvalidArgument("mode_sizes must be nonempty")
    r = feasible_ranks(mode_sizes, ranks)
    rng = np.random.default_rng(rng_seed)
    cores = [rng.standard_normal((r[k], n, r[k + 1])) for k, n in enumerate(mode_sizes)]
    tt = TensorTrain(cores)
    if canonical_site is not None:
        tt = orthogonalize_site(tt, canonical_site)
    return tt


def ttm_random(
    row_sizes,
    col_sizes,
    ranks,
    rng_seed=None,
    aug_site: int | None = None,
    aug_multiplier: int = 1,
    scale: float = 1.0,
    canonical_site: int | None = None,
) -> TensorTrainMatrix:
    """Random TTm with i.i.d. ``N(0, scale**2)`` entries.

    Ranks are clipped against the merged mode sizes ``I_d * J_d`` (without
    the augmentation multiplier, which is the tightest case).
    """
    row_sizes, col_sizes = list(row_sizes), list(col_sizes)
    if not row_sizes or len(row_sizes) != len(col_sizes):
        raise InvalidArgument("row and column size lists must be nonempty and equal length")
    merged = [i * j for i, j in zip(row_sizes, col_sizes)]
    r = feasible_ranks(merged, ranks)
    rng = np.random.default_rng(rng_seed)
    cores = []
    for k, (i, j) in enumerate(zip(row_sizes, col_sizes)):
        jc = j * aug_multiplier if k == aug_site else j
        cores.append(scale * rng.standard_normal((r[k], i, jc, r[k + 1])))
    ttm = TensorTrainMatrix(cores, aug_site, aug_multiplier if aug_site is not None else 1)
    if canonical_site is not None:
        ttm = orthogonalize_site(ttm, canonical_site)
    return ttm


def tt_to_dense(tt: TensorTrain, cap: int | None = None) -> np.ndarray:
    """Dense vector of a TT by sequential contraction."""
    _check_cap(tt.size, cap)
    out = tt.cores[0].reshape(-1, tt.cores[0].shape[2])
    for c in tt.cores[1:]:
        out = out @ c.reshape(c.shape[0], -1)
        out = out.reshape(-1, c.shape[2])
    return out.reshape(-1)


def tt_from_dense(
    vec: np.ndarray, mode_sizes, max_ranks=None, rel_tol: float = 0.0
) -> TensorTrain:
    """TT-SVD of a dense vector.  The result is in site-``D-1`` canonical form."""
    mode_sizes = [int(n) for n in mode_sizes]
    vec = np.asarray(vec, dtype=float).reshape(-1)
    if vec.size != int(np.prod(mode_sizes)):
        raise InvalidArgument(f"vector of size {vec.size} does not match modes {mode_sizes}")
    D = len(mode_sizes)
    cap_ranks = feasible_ranks(mode_sizes, max_ranks if max_ranks is not None else vec.size)
    delta = rel_tol * np.linalg.norm(vec) / np.sqrt(max(D - 1, 1))
    cores = []
    rest = vec.reshape(1, -1)
    r_prev = 1
    for k in range(D - 1):
        mat = rest.reshape(r_prev * mode_sizes[k], -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        r = min(_rank_for_tol(s, delta), cap_ranks[k + 1])
        cores.append(u[:, :r].reshape(r_prev, mode_sizes[k], r))
        rest = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(rest.reshape(r_prev, mode_sizes[-1], 1))
    return TensorTrain(cores, canonical_site=D - 1)


def ttm_to_dense(ttm: TensorTrainMatrix, cap: int | None = None) -> np.ndarray:
    """Dense matrix of a TTm (rows and columns in Kronecker order)."""
    rows, cols = ttm.shape
    _check_cap(rows * cols, cap)
    D = ttm.ndim
    out = np.ones((1, 1))
    for c in ttm.cores:
        out = out @ c.reshape(c.shape[0], -1)
        out = out.reshape(-1, c.shape[3])
    # axes: (i1, c1, i2, c2, ..., iD, cD)
    shape = []
    for k in range(D):
        shape += [ttm.row_sizes[k], ttm.core_col_sizes[k]]
    t = out.reshape(shape)
    if ttm.aug_site is not None and ttm.aug_multiplier > 1:
        a = ttm.aug_site
        shape = []
        for k in range(D):
            if k == a:
                shape += [ttm.row_sizes[k], ttm.aug_multiplier, ttm.col_sizes[k]]
            else:
                shape += [ttm.row_sizes[k], ttm.col_sizes[k]]
        t = t.reshape(shape)
        row_axes, col_axes, pos = [], [], 0
        block_axis = None
        for k in range(D):
            row_axes.append(pos)
            if k == a:
                block_axis = pos + 1
                col_axes.append(pos + 2)
                pos += 3
            else:
                col_axes.append(pos + 1)
                pos += 2
        t = t.transpose(row_axes + [block_axis] + col_axes)
    else:
        t = t.transpose(list(range(0, 2 * D, 2)) + list(range(1, 2 * D, 2)))
    return t.reshape(rows, cols)


def dense_to_merged(
    mat: np.ndarray, row_sizes, col_sizes, aug_site: int | None = None, aug_multiplier: int = 1
) -> np.ndarray:
    """Reorder a dense matrix into the merged-index vector of a TTm.

    This is the vectorization under which a TTm in site-``d`` canonical form
    reads ``vec(L) = H_d @ core_d.ravel()``.
    """
    D = len(row_sizes)
    mat = np.asarray(mat, dtype=float)
    if aug_site is not None and aug_multiplier > 1:
        t = mat.reshape(list(row_sizes) + [aug_multiplier] + list(col_sizes))
        axes = []
        for k in range(D):
            axes.append(k)
            if k == aug_site:
                axes.append(D)
            axes.append(D + 1 + k)
    else:
        t = mat.reshape(list(row_sizes) + list(col_sizes))
        axes = []
        for k in range(D):
            axes += [k, D + k]
    return t.transpose(axes).reshape(-1)


def ttm_from_dense(
    mat: np.ndarray,
    row_sizes,
    col_sizes,
    max_ranks=None,
    rel_tol: float = 0.0,
    aug_site: int | None = None,
    aug_multiplier: int = 1,
) -> TensorTrainMatrix:
    """TT-SVD of a dense matrix over merged indices."""
    vec = dense_to_merged(mat, row_sizes, col_sizes, aug_site, aug_multiplier)
    core_cols = [
        j * aug_multiplier if k == aug_site else j for k, j in enumerate(col_sizes)
    ]
    merged = [i * j for i, j in zip(row_sizes, core_cols)]
    tt = tt_from_dense(vec, merged, max_ranks, rel_tol)
    cores = [
        c.reshape(c.shape[0], i, j, c.shape[2]) for c, i, j in zip(tt.cores, row_sizes, core_cols)
    ]
    return TensorTrainMatrix(
        cores, aug_site, aug_multiplier if aug_site is not None else 1, tt.canonical_site
    )


def ttm_from_kron_factors(factor_matrices, aug_site: int | None = None) -> TensorTrainMatrix:
    """Rank-1 TTm whose dense matrix is ``kron(A_1, ..., A_D)``."""
    mats = [np.atleast_2d(np.asarray(a, dtype=float)) for a in factor_matrices]
    if not mats:
        raise InvalidArgument("need at least one factor matrix")
    cores = [a.reshape(1, a.shape[0], a.shape[1], 1) for a in mats]
    return TensorTrainMatrix(cores, aug_site=aug_site)


def ttm_identity(mode_sizes, aug_site: int | None = None) -> TensorTrainMatrix:
    return ttm_from_kron_factors([np.eye(n) for n in mode_sizes], aug_site)


def zero_tt(mode_sizes) -> TensorTrain:
    return TensorTrain([np.zeros((1, n, 1)) for n in mode_sizes])


# --------------------------------------------------------------------------
# canonical forms


def _flat(core: np.ndarray) -> tuple[int, int, int]:
    return core.shape[0], int(np.prod(core.shape[1:-1])), core.shape[-1]


def _shift_right(cores: list, k: int) -> None:
    """Make core ``k`` left-orthonormal and push the R factor into ``k+1``."""
    c = cores[k]
    a, n, b = _flat(c)
    q, r = qr_pos(c.reshape(a * n, b))
    cores[k] = q.reshape(c.shape[:-1] + (q.shape[1],))
    nxt = cores[k + 1]
    cores[k + 1] = (r @ nxt.reshape(nxt.shape[0], -1)).reshape((r.shape[0],) + nxt.shape[1:])


def _shift_left(cores: list, k: int) -> None:
    """Make core ``k`` right-orthonormal and push the factor into ``k-1``."""
    c = cores[k]
    a, n, b = _flat(c)
    q, r = qr_pos(c.reshape(a, n * b).T)
    cores[k] = q.T.reshape((q.shape[1],) + c.shape[1:])
    prv = cores[k - 1]
    cores[k - 1] = (prv.reshape(-1, prv.shape[-1]) @ r.T).reshape(prv.shape[:-1] + (r.shape[0],))


def _orthogonalize_cores(cores: list, site: int, current: int | None = None) -> list:
    cores = list(cores)
    lo = 0 if current is None else current
    hi = len(cores) - 1 if current is None else current
    for k in range(lo, site):
        _shift_right(cores, k)
    for k in range(hi, site, -1):
        _shift_left(cores, k)
    return cores


def orthogonalize_site(x, d: int):
    """Return a copy of ``x`` (TT or TTm) in site-``d`` mixed canonical form.

    For a TTm the row and column index of every core are merged before the
    QR factorizations.
    """
    if not 0 <= d < x.ndim:
        raise InvalidArgument(f"site {d} out of range for {x.ndim} cores")
    cores = _orthogonalize_cores([c.copy() for c in x.cores], d, x.canonical_site)
    if isinstance(x, TensorTrainMatrix):
        return x.with_cores(cores, d)
    return TensorTrain(cores, d)


def canonical_shift(x, direction):
    """Move the canonical site one position with a single QR.

    ``direction`` is ``+1``/``"right"`` or ``-1``/``"left"``.
    """
    if x.canonical_site is None:
        raise InvalidArgument("canonical_shift needs a canonical form")
    step = {"right": 1, "left": -1, 1: 1, -1: -1}.get(direction)
    if step is None:
        raise InvalidArgument(f"direction must be left/right or +-1, got {direction!r}")
    d = x.canonical_site
    if not 0 <= d + step < x.ndim:
        raise InvalidArgument(f"cannot shift site {d} by {step}")
    cores = [c.copy() for c in x.cores]
    if step > 0:
        _shift_right(cores, d)
    else:
        _shift_left(cores, d)
    if isinstance(x, TensorTrainMatrix):
        return x.with_cores(cores, d + step)
    return TensorTrain(cores, d + step)


def check_canonical(x, tol: float = 1e-12) -> bool:
    """True if the orthonormality conditions of ``x.canonical_site`` hold."""
    d = x.canonical_site
    if d is None:
        return False
    for k, c in enumerate(x.cores):
        a, n, b = _flat(c)
        if k < d:
            m = c.reshape(a * n, b)
            g = m.T @ m
        elif k > d:
            m = c.reshape(a, n * b)
            g = m @ m.T
        else:
            continue
        if np.max(np.abs(g - np.eye(g.shape[0]))) > tol:
            return False
    return True


class ProjectionFrame:
    """The linear map from core ``site`` to the full (merged) vector.

    For a TT or TTm in site-``d`` canonical form, ``vec(x) = frame @ core_d``
    where ``core_d`` is flattened in C order.  The frame has orthonormal
    columns.  It is never formed in the filter; :meth:`to_dense` exists for
    small-scale checks.
    """

    def __init__(self, x, site: int):
        if x.canonical_site != site:
            x = orthogonalize_site(x, site)
        self.x = x
        self.site = site

    def to_dense(self, cap: int | None = None) -> np.ndarray:
        tt = self.x.merged() if isinstance(self.x, TensorTrainMatrix) else self.x
        d = self.site
        left = np.ones((1, 1))
        for c in tt.cores[:d]:
            left = (left @ c.reshape(c.shape[0], -1)).reshape(-1, c.shape[2])
        right = np.ones((1, 1))
        for c in reversed(tt.cores[d + 1:]):
            right = (c.reshape(-1, c.shape[2]) @ right).reshape(c.shape[0], -1)
        n = tt.cores[d].shape[1]
        size = left.shape[0] * n * right.shape[1] * left.shape[1] * n * right.shape[0]
        _check_cap(size, cap)
        # frame[(l, i, r), (a, j, b)] = left[l, a] delta_ij right[b, r]
        f = np.einsum("la,ij,br->lirajb", left, np.eye(n), right)
        return f.reshape(left.shape[0] * n * right.shape[1], -1)


# --------------------------------------------------------------------------
# contractions


def tt_dot(a: TensorTrain, b: TensorTrain) -> float:
    """Inner product of two TTs with equal mode sizes."""
    if a.mode_sizes != b.mode_sizes:
        raise InvalidArgument(f"mode mismatch {a.mode_sizes} vs {b.mode_sizes}")
    env = np.ones((1, 1))
    for x, y in zip(a.cores, b.cores):
        env = np.einsum("ab,aic,bid->cd", env, x, y, optimize=True)
    return float(env[0, 0])


def tt_norm(a: TensorTrain) -> float:
    """Frobenius norm, computed through orthogonalization (never negative)."""
    if a.canonical_site is not None:
        return float(np.linalg.norm(a.cores[a.canonical_site]))
    cores = [c.copy() for c in a.cores]
    for k in range(len(cores) - 1):
        _shift_right(cores, k)
    return float(np.linalg.norm(cores[-1]))


def ttm_transpose_apply(L: TensorTrainMatrix, phi) -> TensorTrain:
    """TT of ``L.T @ phi`` for a rank-1 ``phi``; ranks equal those of ``L``."""
    factors = phi.factors if isinstance(phi, Rank1FeatureTT) else phi
    if [len(f) for f in factors] != L.row_sizes:
        raise InvalidArgument(
            f"feature modes {[len(f) for f in factors]} do not match rows {L.row_sizes}"
        )
    cores = [np.einsum("i,aijb->ajb", f, c) for f, c in zip(factors, L.cores)]
    return TensorTrain(cores)


def ttm_apply(L: TensorTrainMatrix, v: TensorTrain) -> TensorTrain:
    """TT of ``L @ v``; ranks multiply."""
    if L.core_col_sizes != v.mode_sizes:
        raise InvalidArgument(f"column sizes {L.core_col_sizes} do not match {v.mode_sizes}")
    cores = []
    for c, w in zip(L.cores, v.cores):
        t = np.einsum("aijb,cjd->acibd", c, w)
        a, cc, i, b, d = t.shape
        cores.append(t.reshape(a * cc, i, b * d))
    return TensorTrain(cores)


def tt_scale(a: TensorTrain, alpha: float) -> TensorTrain:
    cores = [c.copy() for c in a.cores]
    k = a.canonical_site if a.canonical_site is not None else 0
    cores[k] = cores[k] * alpha
    return TensorTrain(cores, a.canonical_site)


def tt_add(a: TensorTrain, b: TensorTrain) -> TensorTrain:
    """Sum of two TTs; ranks add."""
    if a.mode_sizes != b.mode_sizes:
        raise InvalidArgument(f"mode mismatch {a.mode_sizes} vs {b.mode_sizes}")
    D = a.ndim
    if D == 1:
        return TensorTrain([a.cores[0] + b.cores[0]])
    cores = []
    for k, (x, y) in enumerate(zip(a.cores, b.cores)):
        if k == 0:
            cores.append(np.concatenate([x, y], axis=2))
        elif k == D - 1:
            cores.append(np.concatenate([x, y], axis=0))
        else:
            c = np.zeros((x.shape[0] + y.shape[0], x.shape[1], x.shape[2] + y.shape[2]))
            c[: x.shape[0], :, : x.shape[2]] = x
            c[x.shape[0]:, :, x.shape[2]:] = y
            cores.append(c)
    return TensorTrain(cores)


def ttm_add(a: TensorTrainMatrix, b: TensorTrainMatrix) -> TensorTrainMatrix:
    """Sum of two TTms with identical index structure; ranks add."""
    if a.row_sizes != b.row_sizes or a.core_col_sizes != b.core_col_sizes:
        raise InvalidArgument("TTm index structure mismatch")
    s = tt_add(a.merged(), b.merged())
    return a._unmerge(TensorTrain(s.cores))


def ttm_outer(u: TensorTrain, w: TensorTrain, alpha: float = 1.0) -> TensorTrainMatrix:
    """TTm of ``alpha * u @ w.T``; ranks multiply."""
    if u.ndim != w.ndim:
        raise InvalidArgument("outer product needs equal numbers of cores")
    cores = []
    for x, y in zip(u.cores, w.cores):
        t = np.einsum("aib,cjd->acijbd", x, y)
        a, c, i, j, b, d = t.shape
        cores.append(t.reshape(a * c, i, j, b * d))
    cores[0] = cores[0] * alpha
    return TensorTrainMatrix(cores)


# --------------------------------------------------------------------------
# rounding


def _rank_for_tol(s: np.ndarray, delta: float) -> int:
    """Smallest r with ``sum(s[r:]**2) <= delta**2`` (at least 1)."""
    if delta <= 0 or s.size == 0:
        return max(1, int(s.size))
    tail = np.cumsum((s**2)[::-1])[::-1]
    ok = np.nonzero(np.append(tail, 0.0) <= delta**2)[0]
    return max(1, int(ok[0]))


def _round_cores(cores: list, max_ranks, rel_tol: float) -> list:
    D = len(cores)
    cores = _orthogonalize_cores(cores, 0)
    if D == 1:
        return cores
    sizes = [int(np.prod(c.shape[1:-1])) for c in cores]
    caps = feasible_ranks(sizes, max_ranks)
    nrm = np.linalg.norm(cores[0])
    delta = rel_tol * nrm / np.sqrt(D - 1)
    for k in range(D - 1):
        c = cores[k]
        a, n, b = _flat(c)
        u, s, vt = np.linalg.svd(c.reshape(a * n, b), full_matrices=False)
        r = min(_rank_for_tol(s, delta), caps[k + 1])
        cores[k] = u[:, :r].reshape(c.shape[:-1] + (r,))
        nxt = cores[k + 1]
        sv = s[:r, None] * vt[:r]
        cores[k + 1] = (sv @ nxt.reshape(nxt.shape[0], -1)).reshape((r,) + nxt.shape[1:])
    return cores


def tt_round(x, max_ranks=None, rel_tol: float = 0.0):
    """TT-rounding of a TT or TTm.

    Right-to-left orthogonalization followed by a left-to-right sweep of
    truncated SVDs.  Each truncation keeps at most ``max_ranks`` and discards
    at most ``rel_tol * ||x|| / sqrt(D - 1)`` in Frobenius norm.  The result
    is in site-``D-1`` canonical form.
    """
    if max_ranks is None:
        max_ranks = 1 << 62
    cores = _round_cores([c.copy() for c in x.cores], max_ranks, rel_tol)
    D = len(cores)
    if isinstance(x, TensorTrainMatrix):
        return x.with_cores(cores, D - 1)
    return TensorTrain(cores, D - 1)
