"""
Module autograd.py
Lõi số học: Tensor float64 với vi phân ngược (reverse-mode), các phép toán cơ bản
dùng cho toàn bộ mô hình và hàm kiểm tra gradient bằng sai phân hữu hạn.
"""

import logging

import numpy as np

from .errors import ContractError, DimensionError, NumericDomainError

logger = logging.getLogger(__name__)


class Tensor:
    """
    Mảng float64 (row-major) kèm đồ thị tính toán để lan truyền ngược.

    Giá trị `data` không bị sửa sau khi tạo; chỉ `grad` được tích lũy khi gọi backward().
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op=''):
        self.data = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) \
            else data.astype(np.float64, copy=False)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # ---------- thuộc tính ----------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def mT(self):
        return swap_last(self)

    def numpy(self):
        return self.data.copy()

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() chi dung cho tensor 1 phan tu, shape={self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    # ---------- toán tử ----------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self):
        return backward(self)


def as_tensor(value):
    """Chuyển số / mảng numpy thành Tensor hằng (không cần gradient)."""
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def _make(data, parents, backward_fn, op):
    # Chỉ giữ đồ thị khi có ít nhất một cha cần gradient
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, _op=op)
    return Tensor(data, _op=op)


def _unbroadcast(grad, shape):
    """Cộng dồn gradient về đúng shape ban đầu sau khi broadcast."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_finite(t, op):
    if not np.all(np.isfinite(t.data)):
        logger.error(f"[{op}] Dau vao chua NaN/Inf, shape={t.shape}")
        raise NumericDomainError(f"{op}: dau vao chua NaN hoac Inf")


def _check_beta(beta, op):
    if not np.isfinite(beta) or beta <= 0:
        raise ContractError(f"{op}: beta phai > 0, nhan duoc {beta}")


# ================= phép toán từng phần tử =================

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _make(a.data + b.data, (a, b), _backward, 'add')


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _make(a.data * b.data, (a, b), _backward, 'mul')


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), 'neg')


def power(a, exponent):
    a = as_tensor(a)
    exponent = float(exponent)

    def _backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)
    return _make(a.data ** exponent, (a,), _backward, 'pow')


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), 'exp')


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericDomainError("log: dau vao phai duong")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), 'log')


def square(a):
    return mul(a, a)


# ================= rút gọn và đổi hình =================

def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(out, (a,), _backward, 'sum')


def tensor_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"reshape: khong the doi {a.shape} thanh {shape}") from e
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), 'reshape')


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), 'transpose')


def swap_last(a):
    """Hoán đổi hai trục cuối (chuyển vị ma trận theo lô)."""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _backward(g):
        return tuple(np.split(g, splits, axis=axis))
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), _backward, 'concat')


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def _backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), _backward, 'stack')


def take(a, indices, axis=0):
    """Lấy các lát theo chỉ số nguyên dọc một trục (embedding lookup)."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < -a.shape[axis] or indices.max() >= a.shape[axis]):
        raise ContractError(f"take: chi so ngoai pham vi truc {axis} co kich thuoc {a.shape[axis]}")

    def _backward(g):
        grad = np.zeros_like(np.moveaxis(a.data, axis, 0))
        np.add.at(grad, indices.reshape(-1), np.moveaxis(g, axis, 0).reshape((-1,) + grad.shape[1:]))
        return (np.moveaxis(grad, 0, axis),)
    return _make(np.take(a.data, indices, axis=axis), (a,), _backward, 'take')


def pick(a, indices):
    """Với a có shape (B, K), trả về a[b, indices[b]] (shape B)."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def _backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, (rows, indices), g)
        return (grad,)
    return _make(a.data[rows, indices], (a,), _backward, 'pick')


# ================= đại số tuyến tính =================

def matmul(a, b):
    """
    Tích ma trận c[i,j] = Σ_l a[i,l]·b[l,j]; hỗ trợ lô theo quy tắc broadcast của numpy.

    Args:
        a (Tensor): shape (..., m, k)
        b (Tensor): shape (..., k, n)

    Returns:
        Tensor: shape (..., m, n)
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        logger.error(f"[MATMUL] Kich thuoc khong khop: {a.shape} va {b.shape}")
        raise DimensionError(f"matmul: kich thuoc khong khop {a.shape} @ {b.shape}")

    def _backward(g):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)
    return _make(a.data @ b.data, (a, b), _backward, 'matmul')


# ================= softmax / log-sum-exp =================

def softmax(v, beta=1.0, axis=-1, mask=None):
    """
    Softmax có hệ số β, ổn định số bằng cách trừ giá trị lớn nhất.

    Args:
        v (Tensor): Đầu vào hữu hạn
        beta (float): Hệ số nhiệt nghịch β > 0
        axis (int): Trục chuẩn hóa
        mask (np.ndarray): Mặt nạ bool; vị trí False có xác suất 0

    Returns:
        Tensor: Xác suất không âm, tổng bằng 1 theo trục
    """
    v = as_tensor(v)
    _check_beta(beta, 'softmax')
    _check_finite(v, 'softmax')
    scores = beta * v.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
        if not np.all(mask.any(axis=axis)):
            raise ContractError("softmax: mat na che het tat ca phan tu cua mot hang")
        scores = np.where(mask, scores, -np.inf)
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (beta * out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (v,), _backward, 'softmax')


def softmax_scaled(v, beta):
    """softmax(β·v) trên trục cuối."""
    return softmax(v, beta=beta, axis=-1)


def logsumexp(v, beta=1.0, axis=-1, keepdims=False):
    """
    β^{-1}·log Σ exp(β v_i), tính với phép dịch theo giá trị lớn nhất.
    Gradient theo v bằng softmax(β v).
    """
    v = as_tensor(v)
    _check_beta(beta, 'logsumexp')
    if v.size == 0 or v.shape[axis] == 0:
        raise NumericDomainError("logsumexp: dau vao rong")
    _check_finite(v, 'logsumexp')
    scores = beta * v.data
    top = scores.max(axis=axis, keepdims=True)
    e = np.exp(scores - top)
    total = e.sum(axis=axis, keepdims=True)
    out = (np.log(total) + top) / beta
    probs = e / total
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * probs,)
    return _make(out, (v,), _backward, 'logsumexp')


def log_softmax(v, axis=-1):
    v = as_tensor(v)
    _check_finite(v, 'log_softmax')
    shifted = v.data - v.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def _backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)
    return _make(out, (v,), _backward, 'log_softmax')


def dropout(t, p, rng, training=True):
    """Inverted dropout: giữ phần tử với xác suất 1-p và nhân 1/(1-p); tắt khi đánh giá."""
    if not training or p <= 0.0:
        return t
    if p >= 1.0:
        return t * np.zeros(t.shape)
    keep = (rng.random(t.shape) >= p) / (1.0 - p)
    return t * keep


# ================= lan truyền ngược =================

def _topological_order(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root):
    """
    Lan truyền ngược từ một tensor vô hướng.

    Mỗi nút được duyệt đúng một lần theo thứ tự tô-pô ngược; gradient của một nút
    là tổng đóng góp từ mọi nút dùng nó.

    Args:
        root (Tensor): Tensor vô hướng (1 phần tử)

    Returns:
        list: Các tensor lá cần gradient, với `.grad` đã được cập nhật
    """
    if root.size != 1:
        raise ContractError(f"backward: goc phai la vo huong, shape={root.shape}")
    if not root.requires_grad:
        raise ContractError("backward: goc khong phu thuoc tham so nao can gradient")

    grads = {id(root): np.ones_like(root.data)}
    leaves = []
    for node in reversed(_topological_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            leaves.append(node)
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad
    return leaves


def finite_diff_check(f, x, eps=1e-6):
    """
    So sánh gradient giải tích với sai phân trung tâm.

    Args:
        f (callable): Hàm nhận Tensor và trả về Tensor vô hướng
        x (Tensor | np.ndarray): Điểm kiểm tra
        eps (float): Bước sai phân trong [1e-7, 1e-3]

    Returns:
        float: max_i |analytic_i − central_i| / (|analytic_i| + |central_i| + 1e-12)
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"finite_diff_check: eps phai trong [1e-7, 1e-3], nhan duoc {eps}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    leaf = Tensor(base.copy(), requires_grad=True)
    value = f(leaf)
    if not np.all(np.isfinite(value.data)):
        raise NumericDomainError("finite_diff_check: f(x) khong huu han")
    if value.requires_grad:
        backward(value)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    central = np.zeros_like(base)
    flat = central.reshape(-1)
    for i in range(base.size):
        shifted = base.copy().reshape(-1)
        shifted[i] += eps
        plus = f(Tensor(shifted.reshape(base.shape))).item()
        shifted[i] -= 2 * eps
        minus = f(Tensor(shifted.reshape(base.shape))).item()
        flat[i] = (plus - minus) / (2 * eps)

    error = np.abs(analytic - central) / (np.abs(analytic) + np.abs(central) + 1e-12)
    return float(error.max()) if error.size else 0.0


def glorot_uniform(rng, shape, fan_in, fan_out):
    """Khởi tạo đều trong ±sqrt(6/(fan_in+fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
