"""
Module hopfield.py
Mạng Hopfield hiện đại liên tục: hàm năng lượng, luật cập nhật, truy hồi điểm bất động,
độ tách biệt, các cận sai số truy hồi và cận dung lượng lưu trữ.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp as sp_logsumexp
from scipy.special import softmax as sp_softmax

from .errors import CapacityConditionError, ContractError, DimensionError, NumericDomainError

logger = logging.getLogger(__name__)

# Tham số mặc định khi xấp xỉ điểm bất động x_i*
FIXED_POINT_TOL = 1e-10
FIXED_POINT_MAX_ITER = 100
ENERGY_SLACK = 1e-9


class PatternMemory:
    """
    Bộ nhớ liên kết: ma trận X (d × N, mỗi cột là một mẫu lưu trữ) và hệ số β.

    Bất biến sau khi tạo; `norm_max` = max_i ‖x_i‖ được tính lại khi tạo bộ nhớ mới
    bằng with_patterns().
    """

    def __init__(self, patterns, beta):
        X = np.array(patterns, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] < 1:
            raise ContractError(f"Ma tran mau phai co dang (d, N) voi N >= 1, nhan duoc {X.shape}")
        if not np.all(np.isfinite(X)):
            raise NumericDomainError("Ma tran mau chua NaN/Inf")
        if not np.isfinite(beta) or beta <= 0:
            raise ContractError(f"beta phai > 0, nhan duoc {beta}")
        X.setflags(write=False)
        self.X = X
        self.beta = float(beta)
        self.norm_max = float(np.linalg.norm(X, axis=0).max())

    @property
    def dim(self):
        return self.X.shape[0]

    @property
    def n_patterns(self):
        return self.X.shape[1]

    def pattern(self, i):
        self._check_index(i)
        return self.X[:, i]

    def with_patterns(self, patterns):
        return PatternMemory(patterns, self.beta)

    def with_beta(self, beta):
        return PatternMemory(self.X, beta)

    def _check_index(self, i):
        if not 0 <= i < self.n_patterns:
            raise ContractError(f"Chi so mau {i} ngoai pham vi [0, {self.n_patterns})")

    def _check_state(self, xi):
        xi = np.asarray(xi, dtype=np.float64)
        if xi.shape != (self.dim,):
            raise DimensionError(f"Trang thai xi phai co kich thuoc ({self.dim},), nhan duoc {xi.shape}")
        return xi


@dataclass
class RetrievalResult:
    """Kết quả lặp luật cập nhật tới điểm bất động."""
    xi_star: np.ndarray
    iterations: int
    converged: bool
    final_delta: float
    energies: list = field(default_factory=list)


@dataclass(frozen=True)
class CapacityParams:
    """Tham số cận dung lượng: xác suất thất bại p, hệ số bán kính K, chiều d, β."""
    p: float
    K: float
    d: int
    beta: float

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ContractError(f"p phai trong (0, 1], nhan duoc {self.p}")
        if self.d < 2:
            raise ContractError(f"d phai >= 2, nhan duoc {self.d}")
        if self.K <= 0 or self.beta <= 0:
            raise ContractError("K va beta phai > 0")

    @property
    def a(self):
        return 2.0 / (self.d - 1) * (1.0 + np.log(2.0 * self.beta * self.K ** 2 * self.p * (self.d - 1)))

    @property
    def b(self):
        return 2.0 * self.K ** 2 * self.beta / 5.0

    @property
    def c(self):
        return self.b / lambert_w0(np.exp(self.a + np.log(self.b)))

    @property
    def threshold(self):
        return (2.0 / np.sqrt(self.p)) ** (4.0 / (self.d - 1))

    @property
    def radius(self):
        """Bán kính mặt cầu M = K·sqrt(d-1)."""
        return self.K * np.sqrt(self.d - 1)


# ================= năng lượng và luật cập nhật =================

def energy(mem, xi):
    """
    E = −β⁻¹ log Σ_i exp(β x_iᵀξ) + β⁻¹ log N + ½ξᵀξ + ½M².

    Args:
        mem (PatternMemory): Bộ nhớ mẫu
        xi (np.ndarray): Trạng thái (d,)

    Returns:
        float: Năng lượng
    """
    xi = mem._check_state(xi)
    beta = mem.beta
    lse = sp_logsumexp(beta * (mem.X.T @ xi)) / beta
    return float(-lse + np.log(mem.n_patterns) / beta + 0.5 * xi @ xi + 0.5 * mem.norm_max ** 2)


def softmax_weights(mem, xi):
    """Trọng số p = softmax(β Xᵀ ξ): hệ số tổ hợp lồi của luật cập nhật."""
    xi = mem._check_state(xi)
    return sp_softmax(mem.beta * (mem.X.T @ xi))


def update(mem, xi):
    """ξ_new = X softmax(β Xᵀ ξ); kết quả nằm trong bao lồi của các mẫu lưu trữ."""
    return mem.X @ softmax_weights(mem, xi)


def retrieve(mem, xi, tol=1e-8, max_iter=100):
    """
    Lặp luật cập nhật cho tới khi ‖ξ_{t+1} − ξ_t‖ <= tol hoặc hết số vòng lặp.

    `iterations` đếm số bước cập nhật làm trạng thái dịch chuyển hơn tol; bước cuối
    xác nhận hội tụ không được tính. Năng lượng dọc quỹ đạo được ghi vào `energies`.

    Args:
        mem (PatternMemory): Bộ nhớ mẫu
        xi (np.ndarray): Trạng thái khởi đầu
        tol (float): Ngưỡng hội tụ (> 0)
        max_iter (int): Số bước cập nhật tối đa (>= 1)

    Returns:
        RetrievalResult: Điểm bất động xấp xỉ và thông tin hội tụ
    """
    if not tol > 0:
        raise ContractError(f"tol phai > 0, nhan duoc {tol}")
    if max_iter < 1:
        raise ContractError(f"max_iter phai >= 1, nhan duoc {max_iter}")
    state = mem._check_state(xi).copy()
    energies = [energy(mem, state)]
    iterations, delta, converged = 0, np.inf, False

    for _ in range(max_iter):
        new_state = update(mem, state)
        delta = float(np.linalg.norm(new_state - state))
        energies.append(energy(mem, new_state))
        if energies[-1] > energies[-2] + ENERGY_SLACK:
            logger.warning(f"[RETRIEVE] Nang luong tang {energies[-1] - energies[-2]:.3e} sau buoc {iterations + 1}")
        state = new_state
        if delta <= tol:
            converged = True
            break
        iterations += 1

    if not converged:
        logger.warning(f"[RETRIEVE] Chua hoi tu sau {max_iter} buoc, delta={delta:.3e}")
    return RetrievalResult(xi_star=state, iterations=iterations, converged=converged,
                           final_delta=delta, energies=energies)


def fixed_point(mem, i):
    """Xấp xỉ điểm bất động x_i* gần mẫu x_i bằng retrieve() xuất phát từ x_i."""
    return retrieve(mem, mem.pattern(i), tol=FIXED_POINT_TOL, max_iter=FIXED_POINT_MAX_ITER).xi_star


# ================= độ tách biệt và các cận =================

def separation(mem, i):
    """Δ_i = min_{j≠i} (x_iᵀx_i − x_iᵀx_j)."""
    mem._check_index(i)
    if mem.n_patterns < 2:
        raise ContractError("Do tach biet khong xac dinh khi chi co 1 mau")
    dots = mem.X.T @ mem.X[:, i]
    others = np.delete(dots, i)
    return float(dots[i] - others.max())


def is_well_separated(mem, i):
    """Δ_i >= 2/(βN) + β⁻¹ log(2(N−1)NβM²)."""
    N, beta, M = mem.n_patterns, mem.beta, mem.norm_max
    required = 2.0 / (beta * N) + np.log(2.0 * (N - 1) * N * beta * M ** 2) / beta
    return separation(mem, i) >= required


def bound_exponent(mem, xi, i, x_star=None):
    """Đối số Δ_i − 2·max{‖ξ−x_i‖, ‖x_i*−x_i‖}·M của hàm mũ trong các cận."""
    xi = mem._check_state(xi)
    x_i = mem.pattern(i)
    if x_star is None:
        x_star = fixed_point(mem, i)
    radius = max(np.linalg.norm(xi - x_i), np.linalg.norm(x_star - x_i))
    return separation(mem, i) - 2.0 * radius * mem.norm_max


def retrieval_error_bound(mem, xi, i, x_star=None):
    """
    Cận trên của sai số truy hồi ‖f(ξ) − x_i‖:
    2(N−1)·exp(−β(Δ_i − 2·max{‖ξ−x_i‖, ‖x_i*−x_i‖}·M))·M.
    """
    exponent = bound_exponent(mem, xi, i, x_star)
    return float(2.0 * (mem.n_patterns - 1) * np.exp(-mem.beta * exponent) * mem.norm_max)


def jacobian(mem, xi):
    """J = ∂f/∂ξ = β X (diag(p) − p pᵀ) Xᵀ."""
    p = softmax_weights(mem, xi)
    return mem.beta * mem.X @ (np.diag(p) - np.outer(p, p)) @ mem.X.T


def jacobian_norm_bound(mem, xi, i, x_star=None):
    """Cận ‖J^m‖₂ <= 2βNM²(N−1)·exp(−β(Δ_i − 2·max{...}·M))."""
    N, beta, M = mem.n_patterns, mem.beta, mem.norm_max
    exponent = bound_exponent(mem, xi, i, x_star)
    return float(2.0 * beta * N * M ** 2 * (N - 1) * np.exp(-beta * exponent))


def fixed_point_distance_bound(mem, xi, i, x_star=None):
    """Cận ‖f(ξ) − x_i*‖ <= ‖J^m‖₂·‖ξ − x_i*‖ sau một bước cập nhật."""
    if x_star is None:
        x_star = fixed_point(mem, i)
    xi = mem._check_state(xi)
    return jacobian_norm_bound(mem, xi, i, x_star) * float(np.linalg.norm(xi - x_star))


# ================= Lambert W và dung lượng =================

def lambert_w0(z, max_iter=50):
    """
    Nhánh chính W₀ của hàm Lambert W: nghiệm w của w·e^w = z với z >= −1/e.
    Lặp Halley từ giá trị khởi đầu dựa trên logarit (gần điểm rẽ nhánh dùng chuỗi căn).

    Args:
        z (float): Đối số >= −1/e
        max_iter (int): Số vòng lặp Halley tối đa

    Returns:
        float: W₀(z)
    """
    z = float(z)
    branch_point = -np.exp(-1.0)
    if not np.isfinite(z) or z < branch_point:
        raise NumericDomainError(f"lambert_w0: z phai >= -1/e, nhan duoc {z}")
    if z == 0.0:
        return 0.0
    if z == branch_point:
        return -1.0

    if z < -0.25:
        q = np.sqrt(2.0 * (np.e * z + 1.0))
        w = -1.0 + q - q * q / 3.0
    elif z <= np.e:
        w = np.log1p(z)
    else:
        log_z = np.log(z)
        w = log_z - np.log(log_z)

    for _ in range(max_iter):
        ew = np.exp(w)
        f = w * ew - z
        w1 = w + 1.0
        if w1 == 0.0:
            break
        step = f / (ew * w1 - (w + 2.0) * f / (2.0 * w1))
        w -= step
        if abs(step) <= 1e-15 * (1.0 + abs(w)):
            break
    return float(w)


def storage_capacity_bound(params):
    """
    Cận dưới số mẫu lưu trữ được: N >= sqrt(p)·c^{(d−1)/4}.

    Args:
        params (CapacityParams): Tham số p, K, d, β

    Returns:
        float: N_min
    """
    c, threshold = params.c, params.threshold
    if c < threshold:
        logger.error(f"[CAPACITY] c={c:.6f} nho hon nguong {threshold:.6f}")
        raise CapacityConditionError(
            f"Dieu kien c >= (2/sqrt(p))^(4/(d-1)) khong thoa: c={c:.6f}, nguong={threshold:.6f}",
            c=c, threshold=threshold)
    return float(np.sqrt(params.p) * c ** ((params.d - 1) / 4.0))


# ================= mẫu ngẫu nhiên và kiểm tra lưu trữ =================

def sphere_patterns(rng, d, n, radius=1.0):
    """Sinh n mẫu phân bố đều trên mặt cầu bán kính `radius` trong R^d (các cột)."""
    X = rng.standard_normal((d, n))
    return radius * X / np.linalg.norm(X, axis=0, keepdims=True)


def ball_points(rng, center, radius, n):
    """Sinh n điểm phân bố đều trong hình cầu tâm `center`."""
    d = center.shape[0]
    directions = rng.standard_normal((n, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(n) ** (1.0 / d)
    return center[None, :] + directions * radii[:, None]


def storage_radius(mem, i):
    """Bán kính mặt cầu S_i = ½·sqrt(Δ_i) (0 nếu Δ_i <= 0)."""
    delta = separation(mem, i)
    return 0.5 * np.sqrt(delta) if delta > 0 else 0.0


def is_stored(mem, i, rng, n_queries=32, tol=FIXED_POINT_TOL, max_iter=FIXED_POINT_MAX_ITER, agreement=1e-6):
    """
    Kiểm tra x_i có được lưu trữ: mọi truy vấn trong S_i hội tụ về cùng một điểm bất động
    nằm trong S_i, và S_i không giao với các mặt cầu khác.
    """
    radii = np.array([storage_radius(mem, j) for j in range(mem.n_patterns)])
    if radii[i] <= 0:
        return False
    x_i = mem.pattern(i)
    for j in range(mem.n_patterns):
        if j != i and np.linalg.norm(x_i - mem.pattern(j)) <= radii[i] + radii[j]:
            return False

    fixed_points = []
    for query in ball_points(rng, x_i, radii[i], n_queries):
        result = retrieve(mem, query, tol=tol, max_iter=max_iter)
        if not result.converged:
            return False
        fixed_points.append(result.xi_star)
    fixed_points = np.array(fixed_points)
    if np.max(np.linalg.norm(fixed_points - fixed_points[0], axis=1)) > agreement:
        return False
    return bool(np.linalg.norm(fixed_points[0] - x_i) <= radii[i])
