import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttsrkf.errors import InvalidArgument, ResourceLimitError
from ttsrkf.tensor_core import (
    ProjectionFrame,
    Rank1FeatureTT,
    TensorTrain,
    TensorTrainMatrix,
    canonical_shift,
    check_canonical,
    dense_to_merged,
    feasible_ranks,
    orthogonalize_site,
    tt_add,
    tt_dot,
    tt_from_dense,
    tt_norm,
    tt_random,
    tt_round,
    tt_to_dense,
    ttm_apply,
    ttm_from_dense,
    ttm_from_kron_factors,
    ttm_identity,
    ttm_outer,
    ttm_random,
    ttm_to_dense,
    ttm_transpose_apply,
)


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def kron_all(vs):
    out = np.ones(1)
    for v in vs:
        out = np.kron(out, v)
    return out


# ---------------------------------------------------------------- construction


def test_random_core_shapes():
    tt = tt_random([4, 4, 4], 4, 0)
    assert [c.shape for c in tt.cores] == [(1, 4, 4), (4, 4, 4), (4, 4, 1)]


def test_random_rank_clipping():
    # feasibility: R_{d+1} <= min(prod left, prod right) = [1, 4, 4, 1]
    assert tt_random([4, 4, 4], 100, 0).ranks == [1, 4, 4, 1]
    assert feasible_ranks([2, 3, 4, 5], 1000) == [1, 2, 6, 5, 1]


def test_random_deterministic():
    a, b = tt_random([3, 4, 2], 3, 1234), tt_random([3, 4, 2], 3, 1234)
    for x, y in zip(a.cores, b.cores):
        assert np.array_equal(x, y)


def test_empty_modes_rejected():
    with pytest.raises(InvalidArgument):
        tt_random([], 2, 0)


def test_rank_vector_forms():
    assert feasible_ranks([4, 4, 4], [1, 2, 3, 1]) == [1, 2, 3, 1]
    assert feasible_ranks([4, 4, 4], [2, 3]) == [1, 2, 3, 1]
    with pytest.raises(InvalidArgument):
        feasible_ranks([4, 4, 4], [1, 2, 3])


# ---------------------------------------------------------------- dense conversion


def test_rank1_unit_vectors():
    phi = Rank1FeatureTT([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    np.testing.assert_array_equal(phi.to_dense(), [0, 1, 0, 0])
    np.testing.assert_array_equal(tt_to_dense(phi.to_tt()), [0, 1, 0, 0])


def test_kron_ttm_dense():
    rng = np.random.default_rng(0)
    A, B = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
    np.testing.assert_allclose(ttm_to_dense(ttm_from_kron_factors([A, B])), np.kron(A, B), atol=1e-15)


@pytest.mark.parametrize("modes", [[4, 4, 4], [2, 3, 4, 2], [5]])
def test_tt_dense_round_trip(modes):
    tt = tt_random(modes, 3, 7)
    dense = tt_to_dense(tt)
    back = tt_from_dense(dense, modes)
    assert np.max(np.abs(tt_to_dense(back) - dense)) <= 1e-12 * max(1, np.abs(dense).max())


def test_ttm_dense_round_trip_with_aug():
    rng = np.random.default_rng(3)
    mat = rng.standard_normal((8, 16))  # rows 2*2*2, cols 2 blocks of 8
    L = ttm_from_dense(mat, [2, 2, 2], [2, 2, 2], aug_site=1, aug_multiplier=2)
    assert L.shape == (8, 16)
    np.testing.assert_allclose(ttm_to_dense(L), mat, atol=1e-12)


def test_aug_block_is_outer_column_index():
    # block b of the augmented core maps to columns b*M .. (b+1)*M
    L = ttm_identity([2, 2], aug_site=0)
    cores = list(L.cores)
    cores[0] = np.concatenate([cores[0], 2 * cores[0]], axis=2)
    L2 = TensorTrainMatrix(cores, 0, 2)
    np.testing.assert_allclose(ttm_to_dense(L2), np.hstack([np.eye(4), 2 * np.eye(4)]))


def test_dense_cap(monkeypatch):
    monkeypatch.setenv("TTSRKF_DENSE_CAP", "10")
    with pytest.raises(ResourceLimitError):
        tt_to_dense(tt_random([4, 4], 2, 0))
    monkeypatch.delenv("TTSRKF_DENSE_CAP")
    assert tt_to_dense(tt_random([4, 4], 2, 0)).size == 16


# ---------------------------------------------------------------- canonical forms


@settings(max_examples=25, deadline=None)
@given(
    modes=st.lists(st.integers(2, 4), min_size=2, max_size=5),
    rank=st.integers(1, 5),
    seed=st.integers(0, 2**32 - 1),
    data=st.data(),
)
def test_orthogonalize_preserves_dense(modes, rank, seed, data):
    tt = tt_random(modes, rank, seed)
    d = data.draw(st.integers(0, len(modes) - 1))
    dense = tt_to_dense(tt)
    out = orthogonalize_site(tt, d)
    assert out.canonical_site == d
    assert check_canonical(out)
    assert rel(tt_to_dense(out), dense) <= 1e-12


def test_orthogonalize_first_last_identical():
    tt = tt_random([3, 4, 3, 2], 3, 5)
    a = tt_to_dense(orthogonalize_site(tt, 0))
    b = tt_to_dense(orthogonalize_site(tt, 3))
    assert rel(a, b) <= 1e-12


def test_left_unfolding_orthonormal():
    tt = orthogonalize_site(tt_random([4, 4, 4], 4, 1), 1)
    q = tt.cores[0].reshape(-1, tt.cores[0].shape[2])
    np.testing.assert_allclose(q.T @ q, np.eye(q.shape[1]), atol=1e-12)


def test_orthogonalize_out_of_range():
    with pytest.raises(InvalidArgument):
        orthogonalize_site(tt_random([2, 2], 2, 0), 2)


def test_ttm_frame_orthonormal():
    # H frame of a merged-index TTm at D=3, I=J=2
    L = ttm_random([2, 2, 2], [2, 2, 2], 3, 0)
    for d in range(3):
        H = ProjectionFrame(L, d).to_dense()
        np.testing.assert_allclose(H.T @ H, np.eye(H.shape[1]), atol=1e-12)
        Ld = orthogonalize_site(L, d)
        vec = dense_to_merged(ttm_to_dense(L), [2, 2, 2], [2, 2, 2])
        np.testing.assert_allclose(H @ Ld.cores[d].ravel(), vec, atol=1e-12)


def test_ttm_frame_with_aug_core():
    L = ttm_random([2, 2, 2], [2, 2, 2], 3, 1, aug_site=1, aug_multiplier=2)
    H = ProjectionFrame(L, 1).to_dense()
    np.testing.assert_allclose(H.T @ H, np.eye(H.shape[1]), atol=1e-12)
    vec = dense_to_merged(ttm_to_dense(L), [2, 2, 2], [2, 2, 2], 1, 2)
    np.testing.assert_allclose(H @ orthogonalize_site(L, 1).cores[1].ravel(), vec, atol=1e-12)


@pytest.mark.parametrize("start,direction", [(0, 1), (1, "right"), (2, -1), (1, "left")])
def test_canonical_shift_matches_full(start, direction):
    tt = orthogonalize_site(tt_random([3, 4, 3], 3, 2), start)
    moved = canonical_shift(tt, direction)
    target = start + (1 if direction in (1, "right") else -1)
    assert moved.canonical_site == target and check_canonical(moved)
    ref = orthogonalize_site(tt, target)
    assert rel(tt_to_dense(moved), tt_to_dense(ref)) <= 1e-12
    # the canonical cores agree up to the sign/rotation freedom, so compare norms
    assert np.isclose(np.linalg.norm(moved.cores[target]), np.linalg.norm(ref.cores[target]), rtol=1e-12)


def test_canonical_shift_boundary():
    tt = orthogonalize_site(tt_random([2, 2], 2, 0), 1)
    with pytest.raises(InvalidArgument):
        canonical_shift(tt, 1)


# ---------------------------------------------------------------- contractions


def test_dot_unit():
    e = Rank1FeatureTT([np.array([1.0, 0.0])] * 2).to_tt()
    assert tt_dot(e, e) == 1.0


def test_dot_dense():
    a, b = tt_random([4, 4, 4], 3, 1), tt_random([4, 4, 4], 2, 2)
    assert abs(tt_dot(a, b) - tt_to_dense(a) @ tt_to_dense(b)) <= 1e-12 * np.linalg.norm(tt_to_dense(a)) * np.linalg.norm(tt_to_dense(b))


def test_dot_canonical_self():
    a = orthogonalize_site(tt_random([3, 3, 3], 3, 4), 1)
    assert np.isclose(tt_dot(a, a), np.sum(a.cores[1] ** 2), rtol=1e-12)
    assert np.isclose(tt_norm(a) ** 2, tt_dot(a, a), rtol=1e-12)


def test_dot_mode_mismatch():
    with pytest.raises(InvalidArgument):
        tt_dot(tt_random([2, 2], 1, 0), tt_random([2, 3], 1, 0))


def test_transpose_apply_diagonal():
    d1, d2 = np.diag([1.0, 2.0]), np.diag([3.0, 5.0])
    L = ttm_from_kron_factors([d1, d2])
    phi = Rank1FeatureTT([np.array([0.0, 1.0]), np.array([1.0, 0.0])])
    v = ttm_transpose_apply(L, phi)
    assert v.ranks == [1, 1, 1]
    np.testing.assert_allclose(tt_to_dense(v), [0, 0, 6, 0])


def test_transpose_apply_dense():
    rng = np.random.default_rng(0)
    L = ttm_random([2, 2, 2], [2, 2, 2], 3, 1)
    phi = Rank1FeatureTT([rng.standard_normal(2) for _ in range(3)])
    v = ttm_transpose_apply(L, phi)
    assert v.ranks == L.ranks
    ref = ttm_to_dense(L).T @ phi.to_dense()
    assert np.max(np.abs(tt_to_dense(v) - ref)) <= 1e-12


def test_transpose_apply_mismatch():
    L = ttm_random([2, 2], [2, 2], 2, 0)
    with pytest.raises(InvalidArgument):
        ttm_transpose_apply(L, Rank1FeatureTT([np.ones(3), np.ones(2)]))


def test_apply_identity():
    v = tt_random([3, 3, 3], 2, 0)
    out = ttm_apply(ttm_identity([3, 3, 3]), v)
    np.testing.assert_allclose(tt_to_dense(out), tt_to_dense(v))


def test_apply_rank_product_witnessed():
    # row modes of 4 so that rank 4 is feasible for the product
    L = ttm_random([4, 4, 4], [2, 2, 2], 2, 0)
    v = tt_random([2, 2, 2], 2, 1)
    out = ttm_apply(L, v)
    assert out.ranks == [1, 4, 4, 1]
    # the bound is attained: rounding without truncation keeps rank 4
    assert tt_round(out).ranks == [1, 4, 4, 1]
    assert np.max(np.abs(tt_to_dense(out) - ttm_to_dense(L) @ tt_to_dense(v))) <= 1e-12


def test_apply_mismatch():
    with pytest.raises(InvalidArgument):
        ttm_apply(ttm_random([2, 2], [2, 2], 1, 0), tt_random([3, 2], 1, 0))


def test_outer_and_add():
    u, w = tt_random([2, 3], 2, 0), tt_random([2, 3], 2, 1)
    out = ttm_outer(u, w, 0.5)
    np.testing.assert_allclose(ttm_to_dense(out), 0.5 * np.outer(tt_to_dense(u), tt_to_dense(w)), atol=1e-13)
    s = tt_add(u, w)
    assert s.ranks == [1, 4, 1]
    np.testing.assert_allclose(tt_to_dense(s), tt_to_dense(u) + tt_to_dense(w), atol=1e-13)


# ---------------------------------------------------------------- rounding


def test_round_at_rank_is_identity():
    tt = tt_random([3, 4, 3], [1, 3, 3, 1], 0)
    out = tt_round(tt, 3)
    assert out.ranks == tt.ranks
    assert rel(tt_to_dense(out), tt_to_dense(tt)) <= 1e-12


def test_round_representable_sum():
    a = Rank1FeatureTT([np.array([1.0, 2.0]), np.array([3.0, 1.0, 0.5])]).to_tt()
    s = tt_add(a, a)
    out = tt_round(s, 1)
    assert out.ranks == [1, 1, 1]
    assert rel(tt_to_dense(out), 2 * tt_to_dense(a)) <= 1e-12


def _sequential_svd_oracle(vec, modes, r):
    """Dense TT-SVD: left-to-right truncated SVDs of the running remainder."""
    rest = vec.reshape(1, -1)
    approx_cores = []
    rp = 1
    for n in modes[:-1]:
        u, s, vt = np.linalg.svd(rest.reshape(rp * n, -1), full_matrices=False)
        k = min(r, s.size)
        approx_cores.append(u[:, :k].reshape(rp, n, k))
        rest = s[:k, None] * vt[:k]
        rp = k
    approx_cores.append(rest.reshape(rp, modes[-1], 1))
    return tt_to_dense(TensorTrain(approx_cores))


def test_round_ttm_matches_sequential_svd():
    rows, cols = [2, 2, 2], [2, 2, 2]
    L = ttm_random(rows, cols, 6, 11)
    out = tt_round(L, 2)
    assert max(out.ranks) <= 2
    vec = dense_to_merged(ttm_to_dense(L), rows, cols)
    ref = _sequential_svd_oracle(vec, [4, 4, 4], 2)
    got = dense_to_merged(ttm_to_dense(out), rows, cols)
    assert np.linalg.norm(got - ref) <= 1e-12 * np.linalg.norm(vec)
    assert np.isclose(np.linalg.norm(got - vec), np.linalg.norm(ref - vec), rtol=1e-10)


@pytest.mark.parametrize("tol", [1e-1, 1e-3])
def test_round_rel_tol(tol):
    rng = np.random.default_rng(0)
    base = tt_random([4, 4, 4, 4], 2, 0)
    noisy = tt_to_dense(base) + 1e-5 * rng.standard_normal(256)
    tt = tt_from_dense(noisy, [4, 4, 4, 4])
    out = tt_round(tt, None, tol)
    assert rel(tt_to_dense(out), noisy) <= tol


# ---------------------------------------------------------------- Kronecker TTm


def test_kron_identity_d3():
    np.testing.assert_array_equal(ttm_to_dense(ttm_from_kron_factors([np.eye(2)] * 3)), np.eye(8))


def test_kron_diag_entries():
    d = np.diag([1.0, 0.5])
    dense = ttm_to_dense(ttm_from_kron_factors([d] * 3))
    expected = kron_all([np.array([1.0, 0.5])] * 3)
    np.testing.assert_allclose(np.diag(dense), expected)
    assert np.count_nonzero(dense - np.diag(np.diag(dense))) == 0


def test_kron_random_3x3():
    rng = np.random.default_rng(1)
    A, B = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    L = ttm_from_kron_factors([A, B])
    assert L.ranks == [1, 1, 1]
    assert np.max(np.abs(ttm_to_dense(L) - np.kron(A, B))) <= 1e-14
