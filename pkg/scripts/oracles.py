"""
Module oracles.py
Các phép kiểm chứng độc lập: hồi quy Nadaraya–Watson và sự tương đương với H_s,
gradient của mục tiêu AdaBoost, cùng các bộ kiểm tra cận truy hồi, giảm năng lượng và dung lượng.
"""

import logging
import math

import numpy as np
import pandas as pd
from scipy.special import softmax as sp_softmax

from .autograd import Tensor, finite_diff_check, logsumexp, matmul
from .errors import ContractError, NumericDomainError
from .hopfield import (CapacityParams, PatternMemory, ball_points, fixed_point, is_stored, retrieve,
                       retrieval_error_bound, bound_exponent, sphere_patterns, storage_capacity_bound, update)
from .hopular_model import hs_head_forward

logger = logging.getLogger(__name__)


# ================= Nadaraya–Watson =================

def _unit_columns(Z, what):
    norms = np.linalg.norm(Z, axis=0)
    if np.any(norms == 0):
        raise NumericDomainError(f"{what}: vector chuan 0 khong chuan hoa duoc")
    return Z / norms


def nw_regress(Z, Y_lab, z, beta):
    """
    Ước lượng Nadaraya–Watson với nhân RBF qua đẳng thức softmax: g(z) = Y softmax(β Zᵀ z).
    Đầu vào (các cột của Z và z) được chuẩn hóa về chuẩn 1.

    Args:
        Z (np.ndarray): (m, N) các điểm train theo cột
        Y_lab (np.ndarray): (N,) hoặc (k, N) nhãn
        z (np.ndarray): (m,) truy vấn
        beta (float): Độ rộng nhân
    """
    Z = _unit_columns(np.atleast_2d(np.asarray(Z, dtype=np.float64)), 'nw_regress')
    z = _unit_columns(np.asarray(z, dtype=np.float64).reshape(-1, 1), 'nw_regress')[:, 0]
    return np.asarray(Y_lab, dtype=np.float64) @ sp_softmax(beta * (Z.T @ z))


def rbf_kernel_regress(Z, Y_lab, z, beta):
    """Σ yᵢ k(zᵢ, z) / Σ k(zᵢ, z) với k(a, b) = exp(−β/2 ‖a − b‖²) trên đầu vào đã chuẩn hóa."""
    Z = _unit_columns(np.atleast_2d(np.asarray(Z, dtype=np.float64)), 'rbf_kernel_regress')
    z = _unit_columns(np.asarray(z, dtype=np.float64).reshape(-1, 1), 'rbf_kernel_regress')[:, 0]
    kernel = np.exp(-0.5 * beta * np.sum((Z - z[:, None]) ** 2, axis=0))
    return (np.asarray(Y_lab, dtype=np.float64) @ kernel) / kernel.sum()


def equivalence_nw_vs_hs(W_xi, W_X, W_S, X, xi, beta):
    """
    Dựng H_s sao cho Zᵀ = Xᵀ W_Xᵀ, z = W_ξ ξ, Y = W_S W_X X, co giãn các cột của X và ξ
    để ‖W_X x_j‖ = ‖W_ξ ξ‖ = 1, rồi so sánh đầu ra H_s với nw_regress.

    Returns:
        float: ‖hs_head_forward − nw_regress‖∞
    """
    W_xi, W_X, W_S = (np.asarray(W, dtype=np.float64) for W in (W_xi, W_X, W_S))
    X, xi = np.asarray(X, dtype=np.float64), np.asarray(xi, dtype=np.float64)
    h, D = W_X.shape
    if W_xi.shape != (h, D) or W_S.shape != (D, h) or X.ndim != 2 or X.shape[0] != D or xi.shape != (D,):
        raise ContractError(f"equivalence_nw_vs_hs: shape khong khop W_xi={W_xi.shape}, W_X={W_X.shape}, "
                            f"W_S={W_S.shape}, X={X.shape}, xi={xi.shape}")
    key_norms = np.linalg.norm(W_X @ X, axis=0)
    query_norm = float(np.linalg.norm(W_xi @ xi))
    if np.any(key_norms == 0) or query_norm == 0:
        raise ContractError("equivalence_nw_vs_hs: W_X x_j hoac W_xi xi bang 0, khong dung duoc phep the")
    X_unit = X / key_norms
    xi_unit = xi / query_norm

    Z = W_X @ X_unit
    Y = W_S @ Z
    expected = nw_regress(Z, Y, W_xi @ xi_unit, beta)
    actual = hs_head_forward(Tensor(W_xi), Tensor(W_X), Tensor(W_S), Tensor(xi_unit), Tensor(X_unit), beta).data
    return float(np.max(np.abs(actual - expected)))


def random_nw_case(rng, D=6, h=4, n=10):
    """Trọng số và bộ nhớ ngẫu nhiên cho equivalence_nw_vs_hs."""
    return {
        'W_xi': rng.standard_normal((h, D)),
        'W_X': rng.standard_normal((h, D)),
        'W_S': rng.standard_normal((D, h)),
        'X': rng.standard_normal((D, n)),
        'xi': rng.standard_normal(D),
    }


# ================= AdaBoost =================

def _check_labels(y):
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise NumericDomainError("Nhan AdaBoost phai thuoc {-1, +1}")
    return y


def adaboost_loss(Z, y, xi, beta):
    """L(ξ) = lse(β, −Y Zᵀ ξ) dạng Tensor (ξ có thể cần gradient)."""
    margins = -(_check_labels(y)[:, None] * np.asarray(Z, dtype=np.float64).T)
    return logsumexp(matmul(Tensor(margins), xi.reshape(-1, 1)).reshape(-1), beta=beta)


def adaboost_gradient_oracle(Z, y, xi, beta):
    """∂L/∂ξ = −Z Y softmax(−β Y Zᵀ ξ) dạng đóng."""
    y = _check_labels(y)
    Z, xi = np.asarray(Z, dtype=np.float64), np.asarray(xi, dtype=np.float64)
    return -Z @ (y * sp_softmax(-beta * y * (Z.T @ xi)))


def adaboost_via_hs(Z, y, xi, beta):
    """H_s với X = −Z Y và W_X = W_ξ = W_S = I cho ra đúng gradient AdaBoost."""
    y = _check_labels(y)
    X = -np.asarray(Z, dtype=np.float64) * y[None, :]
    eye = Tensor(np.eye(X.shape[0]))
    return hs_head_forward(eye, eye, eye, Tensor(xi), Tensor(X), beta).data


def adaboost_check(Z, y, xi, beta, eps=1e-5):
    """
    Returns:
        tuple: (sai số tương đối sai phân hữu hạn, độ lệch H_s so với dạng đóng)
    """
    closed = adaboost_gradient_oracle(Z, y, xi, beta)
    fd_error = finite_diff_check(lambda x: adaboost_loss(Z, y, x, beta), np.asarray(xi, dtype=np.float64), eps=eps)
    # finite_diff_check so với gradient autograd; dạng đóng so với autograd
    leaf = Tensor(np.asarray(xi, dtype=np.float64), requires_grad=True)
    adaboost_loss(Z, y, leaf, beta).backward()
    closed_error = float(np.max(np.abs(leaf.grad - closed) / (np.abs(leaf.grad) + np.abs(closed) + 1e-12)))
    hs_deviation = float(np.max(np.abs(adaboost_via_hs(Z, y, xi, beta) - closed)))
    return max(fd_error, closed_error), hs_deviation


# ================= bộ kiểm tra =================

def nw_equivalence_suite(n_cases=50, seed=0, betas=(1.0, 100.0)):
    """Độ lệch lớn nhất của equivalence_nw_vs_hs qua các trường hợp ngẫu nhiên có seed."""
    rng = np.random.default_rng(seed)
    rows = []
    for case in range(n_cases):
        params = random_nw_case(rng)
        for beta in betas:
            rows.append({'case': case, 'beta': beta, 'deviation': equivalence_nw_vs_hs(beta=beta, **params)})
    table = pd.DataFrame.from_records(rows)
    logger.info(f"[ORACLE-NW] {n_cases} truong hop, do lech lon nhat {table['deviation'].max():.3e}")
    return table


def adaboost_suite(n_cases=50, seed=0, n_samples=8, dim=3):
    rng = np.random.default_rng(seed)
    rows = []
    for case in range(n_cases):
        Z = rng.standard_normal((dim, n_samples))
        y = rng.choice([-1.0, 1.0], size=n_samples)
        xi = rng.standard_normal(dim)
        beta = float(rng.uniform(0.5, 2.0))
        fd_error, hs_deviation = adaboost_check(Z, y, xi, beta)
        rows.append({'case': case, 'beta': beta, 'fd_error': fd_error, 'hs_deviation': hs_deviation})
    table = pd.DataFrame.from_records(rows)
    logger.info(f"[ORACLE-ADABOOST] {n_cases} truong hop, sai so sai phan lon nhat {table['fd_error'].max():.3e}")
    return table


def retrieval_bound_suite(n_cases=100, seed=0, d=32, n_patterns=8, beta=8.0, pattern_radius=2.0, query_radius=0.1):
    """
    Với mỗi trường hợp: mẫu ngẫu nhiên trên mặt cầu, truy vấn trong khoảng query_radius quanh một mẫu.
    Ghi sai số truy hồi đo được, cận sai số, đối số mũ và khoảng cách sau một bước tới điểm bất động.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for case in range(n_cases):
        mem = PatternMemory(sphere_patterns(rng, d, n_patterns, pattern_radius), beta)
        i = int(rng.integers(n_patterns))
        xi = ball_points(rng, mem.pattern(i), query_radius, 1)[0]
        x_star = fixed_point(mem, i)
        one_step = update(mem, xi)
        rows.append({
            'case': case,
            'pattern': i,
            'error': float(np.linalg.norm(one_step - mem.pattern(i))),
            'bound': retrieval_error_bound(mem, xi, i, x_star),
            'exponent': bound_exponent(mem, xi, i, x_star),
            'one_update_gap': float(np.linalg.norm(one_step - retrieve(mem, xi, tol=1e-10).xi_star)),
        })
    table = pd.DataFrame.from_records(rows)
    applicable = table[table['exponent'] > 0]
    violations = int((applicable['error'] > applicable['bound']).sum())
    logger.info(f"[RETRIEVAL-BOUND] {len(applicable)}/{n_cases} truong hop co so mu duong, {violations} vi pham can, "
                f"khoang cach mot buoc lon nhat {table['one_update_gap'].max():.3e}")
    return table


def energy_descent_suite(n_cases=1000, seed=0, tol=1e-8, max_iter=100):
    """Mức tăng năng lượng lớn nhất giữa hai bước liên tiếp dọc mọi quỹ đạo retrieve()."""
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(n_cases):
        d = int(rng.integers(2, 17))
        n = int(rng.integers(1, 11))
        beta = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
        mem = PatternMemory(rng.standard_normal((d, n)), beta)
        result = retrieve(mem, rng.standard_normal(d), tol=tol, max_iter=max_iter)
        energies = np.asarray(result.energies)
        if energies.size > 1:
            worst = max(worst, float(np.max(np.diff(energies))))
    logger.info(f"[ENERGY] {n_cases} quy dao, muc tang lon nhat {worst:.3e}")
    return worst


def empirical_capacity(d=64, K=1.0, beta=1.0, p=0.001, n_trials=100, seed=0, n_queries=32):
    """
    Tỉ lệ lần thử mà ceil(N_min) mẫu đều trên mặt cầu bán kính K·sqrt(d−1) đều được lưu trữ.

    Returns:
        tuple: (tỉ lệ thành công, số mẫu dùng)
    """
    params = CapacityParams(p=p, K=K, d=d, beta=beta)
    n_patterns = max(2, math.ceil(storage_capacity_bound(params)))
    rng = np.random.default_rng(seed)
    successes = 0
    for _ in range(n_trials):
        mem = PatternMemory(sphere_patterns(rng, d, n_patterns, params.radius), beta)
        if all(is_stored(mem, i, rng, n_queries=n_queries) for i in range(n_patterns)):
            successes += 1
    rate = successes / n_trials
    logger.info(f"[CAPACITY] N={n_patterns}, ti le luu tru thanh cong {rate:.3f} qua {n_trials} lan thu")
    return rate, n_patterns
