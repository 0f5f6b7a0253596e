"""
Module training.py
Huấn luyện Hopular: che / thay thế thuộc tính kiểu BERT, hàm mất mát L = γ·L_f + (1−γ)·L_t
với lịch γ cosine, bộ tối ưu LAMB, trọng số chậm EMA và vòng lặp epoch có dừng sớm.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .autograd import Tensor, as_tensor, backward, finite_diff_check, log_softmax, pick, take
from .config import TrainConfig
from .data_loader import encode_rows
from .errors import ContractError, MaskingError, NonFiniteLossError, OptimizerError
from .hopular_model import build_memory, forward

logger = logging.getLogger(__name__)

KEEP, MASK, REPLACE = 0, 1, 2


# ================= che thuộc tính =================

@dataclass(frozen=True)
class MaskPlan:
    """Hành động cho từng vị trí (KEEP / MASK / REPLACE) và dòng cho giá trị thay thế (−1 nếu không có)."""
    actions: np.ndarray
    donors: np.ndarray

    @property
    def masked(self):
        return self.actions == MASK

    @property
    def replaced(self):
        return self.actions == REPLACE


@dataclass(frozen=True)
class MaskedBatch:
    inputs: np.ndarray
    input_missing: np.ndarray
    masked: np.ndarray
    truth: np.ndarray
    feature_positions: np.ndarray
    target_positions: np.ndarray
    loss_mask: np.ndarray


def draw_mask_plan(schema, n_queries, mask_prob, replace_prob, rng, pool_size=0, query_index=None):
    """
    Mỗi thuộc tính (không phải mục tiêu) độc lập: che với xác suất mask_prob,
    thay thế với xác suất replace_prob (loại trừ nhau, xét che trước). Mục tiêu luôn bị che.

    Args:
        pool_size (int): Số dòng train có thể cho giá trị thay thế
        query_index (np.ndarray): Vị trí của từng truy vấn trong tập cho (để không tự cho chính nó)

    Returns:
        MaskPlan: Kế hoạch che
    """
    d = schema.n_attributes
    u = rng.random((n_queries, d))
    actions = np.where(u < mask_prob, MASK, np.where(u < mask_prob + replace_prob, REPLACE, KEEP))
    actions[:, schema.target_index] = MASK

    donors = np.full((n_queries, d), -1, dtype=np.int64)
    replace_at = actions == REPLACE
    if replace_at.any():
        own = np.full(n_queries, -1, dtype=np.int64) if query_index is None else np.asarray(query_index, dtype=np.int64)
        own = np.broadcast_to(own[:, None], (n_queries, d))[replace_at]
        if pool_size < 1 or (pool_size == 1 and np.any(own >= 0)):
            logger.error(f"[MASK] Khong co dong nao de lay gia tri thay the (pool={pool_size})")
            raise MaskingError(f"Thay the can it nhat mot dong khac trong tap cho (pool={pool_size})")
        # chọn đều một dòng khác dòng của chính truy vấn
        draw = np.where(own >= 0, rng.integers(0, max(pool_size - 1, 1), size=own.size),
                        rng.integers(0, pool_size, size=own.size))
        donors[replace_at] = np.where((own >= 0) & (draw >= own), draw + 1, draw)
    return MaskPlan(actions=actions, donors=donors)


def inference_plan(schema, n_queries):
    """Khi suy luận chỉ mục tiêu bị che."""
    actions = np.zeros((n_queries, schema.n_attributes), dtype=np.int64)
    actions[:, schema.target_index] = MASK
    return MaskPlan(actions=actions, donors=np.full(actions.shape, -1, dtype=np.int64))


def apply_mask(schema, values, missing, plan, pool_values=None, pool_missing=None):
    """
    Áp dụng kế hoạch che lên một lô mẫu đã mã hóa.

    Vị trí bị che dùng mask-token; vị trí bị thay thế mang giá trị của dòng cho.
    Giá trị thật (truth) không bao giờ bị sửa; vị trí thiếu giá trị bị loại khỏi mất mát.
    """
    values = np.asarray(values, dtype=np.float64)
    missing = np.zeros(values.shape, dtype=bool) if missing is None else np.asarray(missing, dtype=bool)
    if plan.actions.shape != values.shape:
        raise ContractError(f"apply_mask: ke hoach {plan.actions.shape} khong khop lo {values.shape}")

    inputs, input_missing = values.copy(), missing.copy()
    replaced = plan.replaced
    if replaced.any():
        if pool_values is None:
            raise MaskingError("apply_mask: thay the can tap cho gia tri")
        rows, cols = np.nonzero(replaced)
        donors = plan.donors[rows, cols]
        inputs[rows, cols] = pool_values[donors, cols]
        input_missing[rows, cols] = False if pool_missing is None else pool_missing[donors, cols]

    target = np.zeros(values.shape, dtype=bool)
    target[:, schema.target_index] = True
    hidden = plan.masked | replaced
    return MaskedBatch(
        inputs=inputs,
        input_missing=input_missing,
        masked=plan.masked,
        truth=values,
        feature_positions=hidden & ~target & ~missing,
        target_positions=target & ~missing,
        loss_mask=hidden,
    )


# ================= hàm mất mát =================

def gamma_schedule(epoch, total, start=1.0, kind='cosine'):
    """γ = start·½(1 + cos(π·epoch/total)) (cosine) hoặc γ = start (constant)."""
    if total < 1 or not 0 <= epoch <= total:
        raise ContractError(f"gamma_schedule: can 0 <= epoch <= total va total >= 1, nhan duoc ({epoch}, {total})")
    if kind == 'constant':
        return float(start)
    if kind != 'cosine':
        raise ContractError(f"gamma_schedule: lich khong ton tai {kind!r}")
    return float(start) * 0.5 * (1.0 + math.cos(math.pi * epoch / total))


@dataclass
class LossBreakdown:
    L_f: float
    L_t: float
    gamma: float
    L: float
    objective: Tensor = field(repr=False, default=None)


def _attribute_loss(attribute, pred, truth, rows):
    selected = take(pred, rows, axis=0)
    if attribute.is_categorical:
        return -pick(log_softmax(selected), truth[rows].astype(np.int64)).sum()
    diff = selected.reshape(-1) - truth[rows]
    return (diff * diff).sum()


def _positions_loss(schema, preds, truth, positions):
    total, count = Tensor(0.0), 0
    for j, attribute in enumerate(schema.attributes):
        rows = np.flatnonzero(positions[:, j])
        if rows.size:
            total = total + _attribute_loss(attribute, preds[j], truth[:, j], rows)
            count += rows.size
    return total * (1.0 / count) if count else Tensor(0.0)


def compute_loss(schema, preds, truth, feature_positions, target_positions, gamma):
    """
    L_f: trung bình chung trên mọi vị trí thuộc tính bị che / thay thế; L_t: trung bình trên vị trí mục tiêu.
    Cross-entropy cho thuộc tính phân loại, bình phương sai số cho thuộc tính liên tục.

    Returns:
        LossBreakdown: L_f, L_t, γ, L = γ·L_f + (1−γ)·L_t và Tensor để lan truyền ngược
    """
    if not 0.0 <= gamma <= 1.0:
        raise ContractError(f"compute_loss: gamma phai trong [0, 1], nhan duoc {gamma}")
    truth = np.asarray(truth, dtype=np.float64)
    L_f = _positions_loss(schema, preds, truth, feature_positions)
    L_t = _positions_loss(schema, preds, truth, target_positions)
    objective = as_tensor(gamma) * L_f + as_tensor(1.0 - gamma) * L_t
    return LossBreakdown(L_f=L_f.item(), L_t=L_t.item(), gamma=gamma, L=objective.item(), objective=objective)


# ================= LAMB + EMA =================

@dataclass(frozen=True)
class LambState:
    m: dict
    v: dict
    step: int
    learning_rate: float
    betas: tuple
    eps: float
    weight_decay: float

    @classmethod
    def create(cls, params, learning_rate, betas=(0.9, 0.999), eps=1e-6, weight_decay=0.0):
        if learning_rate < 0:
            raise ContractError(f"LAMB: learning_rate phai >= 0, nhan duoc {learning_rate}")
        zeros = {name: np.zeros_like(w) for name, w in params.items()}
        return cls(m=zeros, v=dict(zeros), step=0, learning_rate=learning_rate,
                   betas=tuple(betas), eps=eps, weight_decay=weight_decay)


def lamb_step(state, params, grads):
    """
    Một bước LAMB cho từng khối tham số:
    r = m̂/(√v̂ + ε), u = r + λw, w ← w − η·φ(‖w‖)/‖u‖·u, φ kẹp trong [0, 10],
    tỉ lệ tin cậy bằng 1 khi một trong hai chuẩn bằng 0.

    Returns:
        tuple: (tham số mới, trạng thái mới)
    """
    beta1, beta2 = state.betas
    step = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, w in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            logger.error(f"[LAMB] Gradient cua {name} chua NaN/Inf")
            raise OptimizerError(f"Gradient khong huu han cho tham so {name}", parameter=name)
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        update = m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * w
        w_norm = min(max(float(np.linalg.norm(w)), 0.0), 10.0)
        u_norm = float(np.linalg.norm(update))
        trust = w_norm / u_norm if w_norm > 0 and u_norm > 0 else 1.0
        new_params[name] = w - state.learning_rate * trust * update
        new_m[name], new_v[name] = m, v
    return new_params, LambState(m=new_m, v=new_v, step=step, learning_rate=state.learning_rate,
                                 betas=state.betas, eps=state.eps, weight_decay=state.weight_decay)


@dataclass(frozen=True)
class EmaState:
    slow: dict
    alpha: float
    k: int = 1
    step: int = 0


def ema_update(state, fast_params):
    """slow ← slow + α(fast − slow) mỗi k bước; trọng số nhanh không bị ghi đè."""
    if not 0.0 < state.alpha <= 1.0:
        raise ContractError(f"ema_update: alpha phai trong (0, 1], nhan duoc {state.alpha}")
    step = state.step + 1
    if step % state.k:
        return EmaState(state.slow, state.alpha, state.k, step)
    slow = {name: s + state.alpha * (fast_params[name] - s) for name, s in state.slow.items()}
    return EmaState(slow, state.alpha, state.k, step)


# ================= vòng lặp huấn luyện =================

@dataclass
class FitResult:
    params: dict
    history: pd.DataFrame
    best_epoch: int
    best_val_loss: float
    stopped_epoch: int


def evaluate_params(model, params, memory_values, memory_missing, query_values, query_missing):
    """
    Mất mát mục tiêu và dự đoán trên các truy vấn (chỉ mục tiêu bị che, bộ nhớ = tập train).

    Returns:
        tuple: (L_t, logits/giá trị dự đoán mục tiêu)
    """
    P = model.tensors(params, requires_grad=False)
    memory = build_memory(model, P, memory_values, memory_missing, mode='eval')
    plan = inference_plan(model.schema, query_values.shape[0])
    batch = apply_mask(model.schema, query_values, query_missing, plan)
    preds = forward(model, P, batch.inputs, batch.masked, memory, batch.input_missing)
    loss = compute_loss(model.schema, preds, batch.truth, batch.feature_positions, batch.target_positions, 0.0)
    return loss.L_t, preds[model.schema.target_index].data


def _snapshot(epoch, batch_no, loss, params):
    return {
        'epoch': epoch,
        'batch': batch_no,
        'L_f': loss.L_f,
        'L_t': loss.L_t,
        'gamma': loss.gamma,
        'param_norms': {name: float(np.linalg.norm(w)) for name, w in params.items()},
    }


def train_step(model, params, opt, ema, train_values, train_missing, rows, gamma, config, rng, epoch=0, batch_no=0):
    """Một bước: che, dựng bộ nhớ, forward, mất mát, backward, LAMB, EMA."""
    plan = draw_mask_plan(model.schema, len(rows), config.mask_prob, config.replace_prob, rng,
                          pool_size=train_values.shape[0], query_index=rows)
    batch = apply_mask(model.schema, train_values[rows], train_missing[rows], plan, train_values, train_missing)
    P = model.tensors(params)
    memory = build_memory(model, P, train_values, train_missing, mode='train', query_index=rows,
                          query_mask=batch.loss_mask)
    preds = forward(model, P, batch.inputs, batch.masked, memory, batch.input_missing, training=True, rng=rng)
    loss = compute_loss(model.schema, preds, batch.truth, batch.feature_positions, batch.target_positions, gamma)
    if not math.isfinite(loss.L):
        logger.error(f"[FIT] Mat mat khong huu han tai epoch {epoch}, lo {batch_no}")
        raise NonFiniteLossError(f"Mat mat khong huu han tai epoch {epoch}", snapshot=_snapshot(epoch, batch_no, loss, params))
    if loss.objective.requires_grad:
        backward(loss.objective)
    grads = {name: P[name].grad if P[name].grad is not None else np.zeros_like(params[name]) for name in params}
    params, opt = lamb_step(opt, params, grads)
    return params, opt, ema_update(ema, params), loss


def fit(model, views, config=None, seed=0, history_file=None, metric_fn=None):
    """
    Huấn luyện mô hình trên views.train, dừng sớm theo mất mát validation của trọng số chậm.

    Args:
        model (HopularModel): Kiến trúc
        views (SplitViews): Dữ liệu đã chia (thống kê chuẩn hóa từ tập train)
        config (TrainConfig): Siêu tham số huấn luyện
        seed (int): Seed cho mọi nguồn ngẫu nhiên
        history_file (str): File JSON-lines ghi lịch sử từng epoch
        metric_fn (callable): (dataset, rows, predictions) -> chỉ số validation

    Returns:
        FitResult: Trọng số chậm tốt nhất theo validation và lịch sử
    """
    config = (config or TrainConfig()).validate()
    rng = np.random.default_rng(seed)
    dataset = views.dataset
    train_values, train_missing = encode_rows(dataset, views.train)
    val_values, val_missing = encode_rows(dataset, views.val)
    n = train_values.shape[0]
    batch_size = config.resolve_batch_size(n)

    params = model.init_params(rng)
    opt = LambState.create(params, config.learning_rate, config.betas, config.eps, config.weight_decay)
    ema = EmaState(slow=dict(params), alpha=config.ema_alpha, k=config.ema_k)
    best_params, best_loss, best_epoch, wait = dict(params), math.inf, -1, 0
    records = []

    logger.info("=" * 60)
    logger.info(f"[FIT] Bat dau huan luyen: n_train={n}, n_val={len(views.val)}, batch={batch_size}, "
                f"L={model.L}, M={model.M}, e={model.e}")
    epoch = 0
    for epoch in range(config.epochs):
        gamma = gamma_schedule(epoch, config.epochs, config.gamma_start, config.gamma_schedule)
        order = rng.permutation(n)
        sums = np.zeros(3)
        for batch_no, start in enumerate(range(0, n, batch_size)):
            rows = order[start:start + batch_size]
            params, opt, ema, loss = train_step(model, params, opt, ema, train_values, train_missing,
                                                rows, gamma, config, rng, epoch, batch_no)
            sums += len(rows) * np.array([loss.L_f, loss.L_t, loss.L])

        val_loss, val_preds = evaluate_params(model, ema.slow, train_values, train_missing, val_values, val_missing)
        record = {'epoch': epoch, 'gamma': gamma, 'L_f': sums[0] / n, 'L_t': sums[1] / n, 'L': sums[2] / n,
                  'val_loss': val_loss}
        if metric_fn is not None:
            record['val_metric'] = metric_fn(dataset, views.val, val_preds)
        records.append(record)

        if val_loss < best_loss:
            best_params, best_loss, best_epoch, wait = dict(ema.slow), val_loss, epoch, 0
        else:
            wait += 1
        if epoch % 100 == 0:
            logger.info(f"[FIT] Epoch {epoch}: L={record['L']:.5f}, val_loss={val_loss:.5f}, gamma={gamma:.3f}")
        if wait >= config.patience:
            logger.info(f"[FIT] Dung som tai epoch {epoch} (khong cai thien trong {config.patience} epoch)")
            break

    history = pd.DataFrame.from_records(records)
    if history_file:
        history.to_json(history_file, orient='records', lines=True, double_precision=15)
        logger.info(f"[FIT] Da ghi lich su vao {history_file}")
    logger.info(f"[FIT] Ket thuc: epoch tot nhat {best_epoch}, val_loss={best_loss:.5f}")
    logger.info("=" * 60)
    return FitResult(params=best_params, history=history, best_epoch=best_epoch,
                     best_val_loss=best_loss, stopped_epoch=epoch)


def model_gradcheck(model, params, values, missing=None, seed=0, gamma=0.5, mask_prob=0.3, replace_prob=0.3, eps=1e-6):
    """
    Kiểm tra gradient toàn mô hình bằng sai phân hữu hạn, với kế hoạch che cố định và dropout tắt.

    Returns:
        dict: Sai số tương đối lớn nhất theo từng tham số
    """
    rng = np.random.default_rng(seed)
    values = np.asarray(values, dtype=np.float64)
    missing = np.zeros(values.shape, dtype=bool) if missing is None else np.asarray(missing, dtype=bool)
    rows = np.arange(values.shape[0])
    plan = draw_mask_plan(model.schema, len(rows), mask_prob, replace_prob, rng,
                          pool_size=len(rows), query_index=rows)
    batch = apply_mask(model.schema, values, missing, plan, values, missing)

    def loss_with(name):
        def f(x):
            P = model.tensors(params, requires_grad=False)
            P[name] = x
            memory = build_memory(model, P, values, missing, mode='train', query_index=rows, query_mask=batch.loss_mask)
            preds = forward(model, P, batch.inputs, batch.masked, memory, batch.input_missing)
            return compute_loss(model.schema, preds, batch.truth, batch.feature_positions,
                                batch.target_positions, gamma).objective
        return f

    errors = {name: finite_diff_check(loss_with(name), params[name], eps=eps) for name in params}
    worst = max(errors, key=errors.get)
    logger.info(f"[GRADCHECK] Sai so lon nhat {errors[worst]:.3e} tai {worst}")
    return errors
