"""
Module hopular_model.py
Kiến trúc Hopular: lớp embedding, L khối Hopular (H_s: bộ nhớ mẫu-mẫu trên tập train,
H_f: bộ nhớ thuộc tính-thuộc tính trên chính mẫu đầu vào) và lớp tổng hợp.

Bố cục: ξ của một mẫu có d·e phần tử, đoạn [j·e, (j+1)·e) là embedding của thuộc tính j.
Bên trong, Ξ được lưu dạng (B, d, e): hàng j của mảng là cột j của Ξ.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .autograd import (Tensor, as_tensor, dropout, glorot_uniform, matmul, reshape, softmax,
                       stack, swap_last, take, tensor_sum, transpose)
from .config import ModelConfig
from .errors import ConfigurationError, ContractError, DimensionError, EncodingError

logger = logging.getLogger(__name__)

N_TYPES = 3
PREDICT_CHUNK = 256


class HopularModel:
    """
    Mô tả kiến trúc (schema + siêu tham số) và tên/kích thước tham số.
    Tham số được giữ ngoài đối tượng dưới dạng dict tên → np.ndarray.
    """

    def __init__(self, schema, config=None):
        self.schema = schema
        self.config = (config or ModelConfig()).validate()
        self.d = schema.n_attributes
        self.e = self.config.embedding_dim
        self.D = self.d * self.e
        self.M = self.config.n_heads
        self.L = self.config.n_blocks
        if self.D % self.M != 0:
            logger.error(f"d*e={self.D} khong chia het cho M={self.M}")
            raise ConfigurationError(f"d*e = {self.D} phai chia het cho so mang Hopfield M = {self.M}")
        self.h = self.D // self.M
        self.beta_eff = self.config.beta_scale / np.sqrt(self.h)

    @property
    def attributes(self):
        return self.schema.attributes

    def parameter_shapes(self):
        """Thứ tự và kích thước tham số: embedding, các khối, lớp tổng hợp."""
        e, D, M, h = self.e, self.D, self.M, self.h
        shapes = {'embed/pos': (self.d, e), 'embed/type': (N_TYPES, e)}
        for j, a in enumerate(self.attributes):
            if a.is_categorical:
                # các lớp, 1 hàng "thiếu", 1 hàng mask-token
                shapes[f'embed/value/{j}'] = (a.cardinality + 2, e)
            else:
                shapes[f'embed/scale/{j}'] = (e,)
                shapes[f'embed/bias/{j}'] = (e,)
                shapes[f'embed/mask/{j}'] = (e,)
        for l in range(self.L):
            shapes[f'block{l}/hs/W_xi'] = (M, h, D)
            shapes[f'block{l}/hs/W_X'] = (M, h, D)
            shapes[f'block{l}/hs/W_S'] = (M, D, h)
            shapes[f'block{l}/hs/W_G'] = (D, M * D)
            shapes[f'block{l}/hf/W_Xi'] = (M, h, e)
            shapes[f'block{l}/hf/W_Y'] = (M, h, e)
            shapes[f'block{l}/hf/W_F'] = (M, e, h)
            shapes[f'block{l}/hf/W_G'] = (e, M * e)
        for j, a in enumerate(self.attributes):
            shapes[f'summary/W/{j}'] = (e, a.output_size)
            shapes[f'summary/b/{j}'] = (a.output_size,)
        return shapes

    def init_params(self, rng):
        """Khởi tạo Glorot đều cho mọi ma trận; bias của lớp tổng hợp bằng 0."""
        params = {}
        for name, shape in self.parameter_shapes().items():
            if name.startswith('summary/b/'):
                params[name] = np.zeros(shape)
            elif len(shape) == 1:
                params[name] = glorot_uniform(rng, shape, 1, shape[0])
            elif len(shape) == 2:
                params[name] = glorot_uniform(rng, shape, shape[1], shape[0])
            else:
                params[name] = glorot_uniform(rng, shape, shape[2], shape[1])
        logger.info(f"Khoi tao {len(params)} tham so, tong {sum(p.size for p in params.values())} phan tu")
        return params

    def check_params(self, params):
        for name, shape in self.parameter_shapes().items():
            if name not in params:
                raise ContractError(f"Thieu tham so {name}")
            if tuple(params[name].shape) != shape:
                raise DimensionError(f"Tham so {name}: shape {params[name].shape}, can {shape}")
        return params

    def tensors(self, params, requires_grad=True):
        """Bọc mỗi tham số thành Tensor lá mới cho một lượt forward."""
        self.check_params(params)
        return {name: Tensor(params[name], requires_grad=requires_grad) for name in self.parameter_shapes()}


@dataclass
class SampleMemory:
    """
    Ma trận mẫu lưu trữ của H_s (hàng = mẫu train đã embedding, mục tiêu luôn bị che).

    Ở chế độ train, mỗi truy vấn b nhìn thấy cột self_index[b] được thay bằng self_stored[b],
    bản sao của chính mẫu đó mang đúng mặt nạ của truy vấn; hoặc cột đó bị loại khi drop_self.
    """
    stored: Tensor
    self_index: np.ndarray = None
    self_stored: Tensor = None
    drop_self: bool = False

    @property
    def n(self):
        return self.stored.shape[0]

    def columns(self, b=None):
        """Ma trận X (d·e × n) mà truy vấn b nhìn thấy."""
        X = self.stored.data.copy()
        if b is not None and self.self_index is not None and not self.drop_self:
            X[self.self_index[b]] = self.self_stored.data[b]
        return X.T


def _as_batch(values, masked, missing, d):
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    masked = np.atleast_2d(np.asarray(masked, dtype=bool))
    missing = np.zeros(values.shape, dtype=bool) if missing is None else np.atleast_2d(np.asarray(missing, dtype=bool))
    if values.shape[1] != d or masked.shape != values.shape or missing.shape != values.shape:
        raise DimensionError(f"Mau dau vao can {d} thuoc tinh, nhan duoc values={values.shape}, masked={masked.shape}")
    return values, masked, missing


def embed_sample(model, P, values, masked, missing=None, training=False, rng=None):
    """
    Embedding từng thuộc tính: giá trị (hoặc mask-token) + vị trí + loại, rồi dropout p_i.

    Args:
        model (HopularModel): Kiến trúc
        P (dict): Tham số dạng Tensor
        values (np.ndarray): (B, d) giá trị đã mã hóa (chỉ số lớp / z-score)
        masked (np.ndarray): (B, d) bool, vị trí dùng mask-token
        missing (np.ndarray): (B, d) bool, vị trí thiếu giá trị

    Returns:
        tuple: (xi (B, d·e), Y (B, d, e))
    """
    values, masked, missing = _as_batch(values, masked, missing, model.d)
    B = values.shape[0]
    columns = []
    for j, a in enumerate(model.attributes):
        if a.is_categorical:
            index = values[:, j].astype(np.int64)
            if np.any(index < 0) or np.any(index > a.missing_index):
                bad = int(index[(index < 0) | (index > a.missing_index)][0])
                raise EncodingError(f"Lop {bad} khong hop le cho thuoc tinh {a.name} (so lop {a.cardinality})")
            index = np.where(masked[:, j], a.cardinality + 1, index)
            value = take(P[f'embed/value/{j}'], index, axis=0)
        else:
            hide = (masked[:, j] | missing[:, j]).astype(np.float64)[:, None]
            z = np.where(hide > 0, 0.0, values[:, j:j + 1])
            value = (Tensor(z) * P[f'embed/scale/{j}'] + P[f'embed/bias/{j}']) * (1.0 - hide) \
                + Tensor(hide) * P[f'embed/mask/{j}']
        columns.append(value + take(P['embed/pos'], [j], axis=0) + take(P['embed/type'], [a.type_id], axis=0))
    Y = stack(columns, axis=1)
    Y = dropout(Y, model.config.dropout[0], rng, training)
    return reshape(Y, (B, model.D)), Y


def build_memory(model, P, train_values, train_missing=None, mode='eval', query_index=None, query_mask=None):
    """
    Embedding toàn bộ tập train làm mẫu lưu trữ cho H_s; mục tiêu luôn bị che.

    Args:
        mode (str): 'eval' hoặc 'train'
        query_index (np.ndarray): (train) chỉ số trong bộ nhớ của từng truy vấn
        query_mask (np.ndarray): (train) mặt nạ của từng truy vấn (che ∪ thay thế)

    Returns:
        SampleMemory: Bộ nhớ mẫu
    """
    train_values = np.atleast_2d(np.asarray(train_values, dtype=np.float64))
    n = train_values.shape[0]
    if n == 0:
        raise ContractError("build_memory: tap train rong")
    if train_missing is None:
        train_missing = np.zeros(train_values.shape, dtype=bool)
    target = model.schema.target_index

    base_mask = np.zeros(train_values.shape, dtype=bool)
    base_mask[:, target] = True
    stored, _ = embed_sample(model, P, train_values, base_mask, train_missing)
    if mode == 'eval':
        memory = SampleMemory(stored=stored)
    elif mode == 'train':
        if query_index is None or query_mask is None:
            raise ContractError("build_memory: che do train can query_index va query_mask")
        query_index = np.asarray(query_index, dtype=np.int64)
        if np.any(query_index < 0) or np.any(query_index >= n):
            raise ContractError(f"build_memory: chi so truy van ngoai pham vi [0, {n})")
        self_mask = np.array(query_mask, dtype=bool, copy=True)
        self_mask[:, target] = True
        if model.config.drop_self_column and n < 2:
            raise ContractError("build_memory: loai cot cua chinh mau can it nhat 2 mau train")
        self_stored, _ = embed_sample(model, P, train_values[query_index], self_mask, train_missing[query_index])
        memory = SampleMemory(stored=stored, self_index=query_index, self_stored=self_stored,
                              drop_self=model.config.drop_self_column)
    else:
        raise ContractError(f"build_memory: che do khong hop le {mode!r}")

    if model.config.detach_memory:
        memory.stored = memory.stored.detach()
        if memory.self_stored is not None:
            memory.self_stored = memory.self_stored.detach()
    return memory


def hs_head_forward(W_xi, W_X, W_S, xi, memory, beta):
    """
    Một mạng Hopfield của H_s: W_S W_X X softmax(β Xᵀ W_Xᵀ W_ξ ξ), softmax trên n mẫu lưu trữ.

    Args:
        W_xi, W_X: (h, d·e); W_S: (d·e, h)
        xi: vector d·e
        memory: X có shape (d·e, n), mỗi cột là một mẫu
    """
    memory = as_tensor(memory)
    if memory.ndim != 2 or memory.shape[1] == 0:
        raise ContractError(f"hs_head_forward: bo nho rong hoac sai shape {memory.shape}")
    xi = reshape(as_tensor(xi), (-1, 1))
    keys = matmul(W_X, memory)
    weights = softmax(matmul(swap_last(keys), matmul(W_xi, xi)), beta=beta, axis=0)
    return reshape(matmul(W_S, matmul(keys, weights)), (-1,))


def hs_attention(model, P, l, xi, memory):
    """
    Trọng số softmax của M mạng trong H_s khối l.

    Returns:
        tuple: (weights (M, B, n), keys (M, n, h), key của bản sao chính mẫu (M, B, h) hoặc None)
    """
    B, n = xi.shape[0], memory.n
    W_xi, W_X = P[f'block{l}/hs/W_xi'], P[f'block{l}/hs/W_X']
    queries = matmul(reshape(xi, (1, B, model.D)), swap_last(W_xi))
    keys = matmul(reshape(memory.stored, (1, n, model.D)), swap_last(W_X))
    scores = matmul(queries, swap_last(keys))

    self_keys, mask = None, None
    if memory.self_index is not None:
        onehot = np.zeros((B, n))
        onehot[np.arange(B), memory.self_index] = 1.0
        if memory.drop_self:
            mask = onehot == 0
        else:
            self_keys = matmul(reshape(memory.self_stored, (1, B, model.D)), swap_last(W_X))
            self_scores = tensor_sum(queries * self_keys, axis=-1, keepdims=True)
            scores = scores * (1.0 - onehot) + self_scores * onehot
    weights = softmax(scores, beta=model.beta_eff, axis=-1, mask=mask)
    return weights, keys, self_keys


def hs_module_forward(model, P, l, xi, memory):
    """H_s: M mạng Hopfield song song trên bộ nhớ mẫu, ghép và chiếu bằng W_G. Trả về (B, d·e)."""
    B = xi.shape[0]
    weights, keys, self_keys = hs_attention(model, P, l, xi, memory)
    heads = matmul(weights, keys)
    if self_keys is not None:
        onehot = np.zeros((B, memory.n))
        onehot[np.arange(B), memory.self_index] = 1.0
        self_weight = tensor_sum(weights * onehot, axis=-1, keepdims=True)
        heads = heads + self_weight * (self_keys - take(keys, memory.self_index, axis=1))
    heads = matmul(heads, swap_last(P[f'block{l}/hs/W_S']))
    joined = reshape(transpose(heads, (1, 0, 2)), (B, model.M * model.D))
    return matmul(joined, swap_last(P[f'block{l}/hs/W_G']))


def hf_attention(model, P, l, Xi, Y):
    B = Xi.shape[0]
    queries = matmul(reshape(Xi, (B, 1, model.d, model.e)), swap_last(P[f'block{l}/hf/W_Xi']))
    keys = matmul(reshape(Y, (B, 1, model.d, model.e)), swap_last(P[f'block{l}/hf/W_Y']))
    weights = softmax(matmul(queries, swap_last(keys)), beta=model.beta_eff, axis=-1)
    return weights, keys


def hf_module_forward(model, P, l, Xi, Y):
    """
    H_f: mỗi cột Ξ truy vấn d embedding thuộc tính của chính mẫu (Y), softmax trên d thuộc tính.
    Xi, Y: (B, d, e). Trả về (B, d, e).
    """
    if tuple(Xi.shape) != tuple(Y.shape) or Xi.shape[1:] != (model.d, model.e):
        raise DimensionError(f"hf_module_forward: Xi {Xi.shape} va Y {Y.shape} can (B, {model.d}, {model.e})")
    B = Xi.shape[0]
    weights, keys = hf_attention(model, P, l, Xi, Y)
    heads = matmul(matmul(weights, keys), swap_last(P[f'block{l}/hf/W_F']))
    joined = reshape(transpose(heads, (0, 2, 1, 3)), (B, model.d, model.M * model.e))
    return matmul(joined, swap_last(P[f'block{l}/hf/W_G']))


def block_forward(model, P, l, xi, Y, memory, training=False, rng=None):
    """ξ ← ξ + H_s(ξ); Ξ ← Ξ + H_f(Ξ); dropout p_h trên đầu ra mỗi module trước phép cộng."""
    B, p_h = xi.shape[0], model.config.dropout[1]
    xi = xi + dropout(hs_module_forward(model, P, l, xi, memory), p_h, rng, training)
    Xi = reshape(xi, (B, model.d, model.e))
    Xi = Xi + dropout(hf_module_forward(model, P, l, Xi, Y), p_h, rng, training)
    return reshape(Xi, (B, model.D))


def summarize(model, P, xi, training=False, rng=None):
    """Ánh xạ e-slice của từng thuộc tính thành logits (phân loại) hoặc một số (liên tục)."""
    B = xi.shape[0]
    Xi = dropout(reshape(xi, (B, model.d, model.e)), model.config.dropout[2], rng, training)
    outputs = []
    for j in range(model.d):
        column = reshape(take(Xi, [j], axis=1), (B, model.e))
        outputs.append(matmul(column, P[f'summary/W/{j}']) + P[f'summary/b/{j}'])
    return outputs


def forward(model, P, values, masked, memory, missing=None, training=False, rng=None):
    """
    Lượt forward đầy đủ: embedding → L khối → tổng hợp.

    Returns:
        list: Với mỗi thuộc tính, Tensor (B, số lớp) hoặc (B, 1)
    """
    if training and rng is None and any(p > 0 for p in model.config.dropout):
        raise ContractError("forward: che do train co dropout can rng")
    xi, Y = embed_sample(model, P, values, masked, missing, training, rng)
    for l in range(model.L):
        xi = block_forward(model, P, l, xi, Y, memory, training, rng)
    return summarize(model, P, xi, training, rng)


def predict(model, params, query_values, query_missing, memory_values, memory_missing):
    """
    Dự đoán khi suy luận: chỉ mục tiêu bị che, bộ nhớ là tập train (không chứa mẫu truy vấn).

    Returns:
        list: Với mỗi thuộc tính, np.ndarray (B, số lớp) hoặc (B, 1)
    """
    P = model.tensors(params, requires_grad=False)
    memory = build_memory(model, P, memory_values, memory_missing, mode='eval')
    query_values = np.atleast_2d(query_values)
    query_missing = np.zeros(query_values.shape, dtype=bool) if query_missing is None else np.atleast_2d(query_missing)
    chunks = [[] for _ in range(model.d)]
    for start in range(0, query_values.shape[0], PREDICT_CHUNK):
        rows = slice(start, start + PREDICT_CHUNK)
        masked = np.zeros(query_values[rows].shape, dtype=bool)
        masked[:, model.schema.target_index] = True
        outputs = forward(model, P, query_values[rows], masked, memory, query_missing[rows])
        for j, out in enumerate(outputs):
            chunks[j].append(out.data)
    return [np.concatenate(c, axis=0) if c else np.zeros((0, a.output_size))
            for c, a in zip(chunks, model.attributes)]
