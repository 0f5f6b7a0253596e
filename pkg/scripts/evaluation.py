"""
Module evaluation.py
Đánh giá mô hình: độ chính xác (phân loại), MSE×1000 (hồi quy), baseline k-NN và lớp đa số,
chạy lặp nhiều replicate song song và tìm kiếm lưới siêu tham số.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import sem

from .config import HYPERPARAMETER_GRID
from .data_loader import denormalize, encode_rows, feature_matrix, target_values
from .errors import ContractError
from .hopular_model import HopularModel, predict
from .training import fit

logger = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    """Kết quả đánh giá: accuracy cho phân loại, MSE×1000 cho hồi quy, kèm sai số chuẩn qua các replicate."""
    task: str
    metric: str
    value: float
    stderr: float = 0.0
    split: str = 'test'
    method: str = 'hopular'
    values: list = field(default_factory=list)

    def to_record(self):
        return asdict(self)


def metric_name(task):
    return 'accuracy' if task == 'classification' else 'mse_x1000'


def higher_is_better(task):
    return task == 'classification'


def accuracy(predicted, truth):
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape or predicted.size == 0:
        raise ContractError(f"accuracy: shape khong hop le {predicted.shape} va {truth.shape}")
    return float(np.mean(predicted.astype(np.int64) == truth.astype(np.int64)))


def mse_x1000(predicted, truth):
    """1000 × trung bình bình phương sai số (trên thang đo gốc)."""
    predicted, truth = np.asarray(predicted, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape or predicted.size == 0:
        raise ContractError(f"mse_x1000: shape khong hop le {predicted.shape} va {truth.shape}")
    return float(1000.0 * np.mean((predicted - truth) ** 2))


def target_metric(dataset, rows, target_output):
    """
    Chỉ số trên mục tiêu từ đầu ra mô hình (logits hoặc giá trị z-score).

    Args:
        dataset (Dataset): Dữ liệu có thống kê chuẩn hóa
        rows (np.ndarray): Các dòng được dự đoán
        target_output (np.ndarray): (B, số lớp) hoặc (B, 1)
    """
    truth = target_values(dataset, rows)
    if dataset.schema.task == 'classification':
        return accuracy(np.argmax(target_output, axis=1), truth)
    return mse_x1000(denormalize(dataset, dataset.schema.target_index, target_output[:, 0]), truth)


def evaluate_model(model, params, views, split='test'):
    """Dự đoán trên một tập (bộ nhớ = tập train) và trả về MetricsReport."""
    dataset = views.dataset
    rows = views.rows(split)
    memory_values, memory_missing = encode_rows(dataset, views.train)
    query_values, query_missing = encode_rows(dataset, rows)
    outputs = predict(model, params, query_values, query_missing, memory_values, memory_missing)
    task = dataset.schema.task
    value = target_metric(dataset, rows, outputs[dataset.schema.target_index])
    logger.info(f"[EVAL] {metric_name(task)} tren tap {split}: {value:.4f}")
    return MetricsReport(task=task, metric=metric_name(task), value=value, split=split, values=[value])


# ================= baseline =================

def knn_predict(train_X, train_y, query_X, k, task):
    """
    k láng giềng gần nhất theo khoảng cách Euclid: bỏ phiếu đa số (phân loại) hoặc trung bình (hồi quy).
    Khoảng cách bằng nhau ưu tiên dòng có chỉ số nhỏ hơn; phiếu bằng nhau ưu tiên lớp xuất hiện trước
    trong thứ tự láng giềng.
    """
    train_X, query_X = np.atleast_2d(train_X), np.atleast_2d(query_X)
    train_y = np.asarray(train_y)
    n = train_X.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"knn: k phai trong [1, {n}], nhan duoc {k}")
    predictions = []
    for query in query_X:
        distances = np.sum((train_X - query) ** 2, axis=1)
        neighbours = train_y[np.argsort(distances, kind='stable')[:k]]
        if task == 'classification':
            labels, first_seen, counts = np.unique(neighbours, return_index=True, return_counts=True)
            best = counts == counts.max()
            predictions.append(labels[best][np.argmin(first_seen[best])])
        else:
            predictions.append(float(np.mean(neighbours)))
    return np.asarray(predictions)


def knn_baseline(views, k=1, split='test'):
    """Baseline k-NN trên đặc trưng one-hot + z-score."""
    dataset = views.dataset
    task = dataset.schema.task
    rows = views.rows(split)
    predicted = knn_predict(feature_matrix(dataset, views.train), target_values(dataset, views.train),
                            feature_matrix(dataset, rows), k, task)
    truth = target_values(dataset, rows)
    value = accuracy(predicted, truth) if task == 'classification' else mse_x1000(predicted, truth)
    return MetricsReport(task=task, metric=metric_name(task), value=value, split=split, method=f'knn{k}', values=[value])


def majority_baseline(views, split='test'):
    """Dự đoán lớp phổ biến nhất (phân loại) hoặc trung bình (hồi quy) của tập train."""
    dataset = views.dataset
    task = dataset.schema.task
    train_y = target_values(dataset, views.train)
    truth = target_values(dataset, views.rows(split))
    if task == 'classification':
        labels, counts = np.unique(train_y, return_counts=True)
        value = accuracy(np.full(truth.shape, labels[np.argmax(counts)]), truth)
    else:
        value = mse_x1000(np.full(truth.shape, train_y.mean()), truth)
    return MetricsReport(task=task, metric=metric_name(task), value=value, split=split, method='majority', values=[value])


# ================= replicate và tìm kiếm lưới =================

def _replicate_worker(job):
    views, run_config, seed, history_file = job
    model = HopularModel(views.dataset.schema, run_config.model)
    result = fit(model, views, run_config.training, seed=seed, history_file=history_file, metric_fn=target_metric)
    return seed, result.params, evaluate_model(model, result.params, views, 'test').value, result.best_val_loss


def run_replicates(views, run_config, jobs=1, history_dir=None):
    """
    Huấn luyện run_config.replicates lần với seed = seed gốc + r, có thể song song theo tiến trình.

    Returns:
        tuple: (MetricsReport với trung bình ± sai số chuẩn, list các (seed, params))
    """
    task = views.dataset.schema.task
    seeds = [run_config.seed + r for r in range(run_config.replicates)]
    work = [(views, run_config, seed,
             os.path.join(history_dir, f"history_seed{seed}.jsonl") if history_dir else None) for seed in seeds]
    logger.info(f"[REPLICATE] Chay {len(seeds)} replicate voi {jobs} tien trinh")
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_replicate_worker, work))
    else:
        results = [_replicate_worker(job) for job in work]

    values = [r[2] for r in results]
    stderr = float(sem(values)) if len(values) > 1 else 0.0
    report = MetricsReport(task=task, metric=metric_name(task), value=float(np.mean(values)),
                           stderr=stderr, values=values)
    logger.info(f"[REPLICATE] {report.metric} = {report.value:.4f} ± {report.stderr:.4f}")
    return report, [(r[0], r[1]) for r in results]


def grid_search(views, run_config, grid=None, history_dir=None):
    """
    Tìm kiếm lưới trên các hàng siêu tham số; chọn theo chỉ số trên tập validation.

    Returns:
        tuple: (overrides tốt nhất, DataFrame kết quả từng hàng)
    """
    grid = HYPERPARAMETER_GRID if grid is None else grid
    task = views.dataset.schema.task
    records = []
    logger.info("=" * 60)
    logger.info(f"[GRID] Tim kiem tren {len(grid)} hang sieu tham so")
    for index, overrides in enumerate(grid):
        config = run_config.with_overrides(**overrides)
        model = HopularModel(views.dataset.schema, config.model)
        history_file = os.path.join(history_dir, f"grid_{index}.jsonl") if history_dir else None
        result = fit(model, views, config.training, seed=config.seed, history_file=history_file)
        val_value = evaluate_model(model, result.params, views, 'val').value
        records.append({'row': index, **overrides, 'val_loss': result.best_val_loss, 'val_metric': val_value})
        logger.info(f"[GRID] Hang {index}: val_metric={val_value:.4f}")

    table = pd.DataFrame.from_records(records)
    best = table['val_metric'].idxmax() if higher_is_better(task) else table['val_metric'].idxmin()
    logger.info(f"[GRID] Hang tot nhat: {int(table.loc[best, 'row'])}")
    return grid[int(table.loc[best, 'row'])], table


def summary_table(reports):
    """Bảng tóm tắt cho stdout."""
    frame = pd.DataFrame.from_records([
        {'method': r.method, 'split': r.split, 'metric': r.metric, 'value': r.value, 'stderr': r.stderr}
        for r in reports
    ])
    return frame.to_string(index=False, float_format=lambda v: f"{v:.4f}")


def write_metrics(reports, path):
    """Ghi các MetricsReport ra file JSON-lines."""
    pd.DataFrame.from_records([r.to_record() for r in reports]).to_json(path, orient='records', lines=True,
                                                                                     double_precision=15)
    logger.info(f"Da ghi {len(reports)} ket qua vao {path}")
