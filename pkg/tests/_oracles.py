"""Dense reference computations shared by the test modules.

Everything here works on explicit vectors and matrices and is kept
independent of the package's filter code.
"""

import numpy as np

from ttsrkf.tensor_core import ProjectionFrame, TensorTrainMatrix, dense_to_merged, ttm_to_dense


def kf_update(w, P, f, y, noise_var):
    """Joseph-form Kalman measurement update."""
    S = f @ P @ f + noise_var
    K = P @ f / S
    w = w + K * (y - f @ w)
    A = np.eye(f.size) - np.outer(K, f)
    return w, A @ P @ A.T + noise_var * np.outer(K, K), S


def sqrt_target(L, f, noise_var):
    """Dense ``[(I - K f^T) L, sigma K]`` padded to twice the columns of ``L``.

    The appended block holds ``sigma K`` in its first column.
    """
    M, C = L.shape
    S = f @ L @ L.T @ f + noise_var
    K = L @ (L.T @ f) / S
    T = np.zeros((M, 2 * C))
    T[:, :C] = L - np.outer(K, L.T @ f)
    T[:, C] = np.sqrt(noise_var) * K
    return T


def term_targets(L, f, noise_var):
    """Dense matrices of the three terms (before projection)."""
    M, C = L.shape
    S = f @ L @ L.T @ f + noise_var
    u = L @ (L.T @ f)
    t1 = np.zeros((M, 2 * C))
    t1[:, :C] = L
    t2 = np.zeros((M, 2 * C))
    t2[:, :C] = np.outer(u, L.T @ f) / S
    t3 = np.zeros((M, 2 * C))
    t3[:, C] = np.sqrt(noise_var) * u / S
    return t1, t2, t3, S


def project(work: TensorTrainMatrix, d: int, dense_target):
    """``H_d^T vec(target)`` reshaped to the shape of core ``d``."""
    H = ProjectionFrame(work, d).to_dense()
    vec = dense_to_merged(dense_target, work.row_sizes, work.col_sizes, work.aug_site, work.aug_multiplier)
    shape = ProjectionFrame(work, d).x.cores[d].shape
    return (H.T @ vec).reshape(shape)


def cov_objective(cores, work_template: TensorTrainMatrix, target):
    L = ttm_to_dense(work_template.with_cores(cores))
    return float(np.sum((L - target) ** 2))


def mean_objective(cores_dense, target):
    return float(np.sum((cores_dense - target) ** 2))


def min_eig(P):
    return float(np.linalg.eigvalsh(0.5 * (P + P.T)).min())


def rel_fro(A, B):
    return float(np.linalg.norm(A - B) / np.linalg.norm(B))
