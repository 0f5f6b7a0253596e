"""
Module data_collect.py
Sinh các bảng dữ liệu tổng hợp (có seed) và ghi ra CSV + schema để huấn luyện / kiểm thử.
"""

import argparse
import logging
import os

import numpy as np

from .config import get_data_dir
from .data_loader import CATEGORICAL, CONTINUOUS, AttributeSpec, Dataset, TableSchema, save, schema_text
from .errors import ConfigurationError

logger = logging.getLogger(__name__)


def _dataset(schema, values):
    values = np.asarray(values, dtype=np.float64)
    missing = np.zeros(values.shape, dtype=bool)
    values.setflags(write=False)
    missing.setflags(write=False)
    return Dataset(schema=schema, values=values, missing=missing)


def _continuous_schema(n_features, target):
    attributes = [AttributeSpec(f"x{j}", CONTINUOUS) for j in range(n_features)]
    return TableSchema(tuple(attributes + [target]))


def make_planted_table(n_samples=200, n_features=6, n_classes=3, prototypes_per_class=4, noise=0.35, seed=0):
    """
    Bảng phân loại có cấu trúc láng giềng gần nhất: mỗi mẫu là một nguyên mẫu
    (mang nhãn lớp) cộng nhiễu Gauss, nhãn của mẫu là nhãn của nguyên mẫu.

    Returns:
        Dataset: Bảng n_samples dòng, n_features thuộc tính liên tục + nhãn `label`
    """
    rng = np.random.default_rng(seed)
    n_prototypes = n_classes * prototypes_per_class
    prototypes = rng.uniform(-2.0, 2.0, size=(n_prototypes, n_features))
    proto_labels = np.arange(n_prototypes) % n_classes
    chosen = rng.integers(0, n_prototypes, size=n_samples)
    features = prototypes[chosen] + noise * rng.standard_normal((n_samples, n_features))
    schema = _continuous_schema(n_features, AttributeSpec('label', CATEGORICAL, n_classes, True))
    return _dataset(schema, np.column_stack([features, proto_labels[chosen]]))


def make_separable_table(n_samples=40, margin=0.25, seed=0):
    """Bảng 2 thuộc tính liên tục, nhãn 0/1 tách được bằng một đường thẳng với lề `margin`."""
    rng = np.random.default_rng(seed)
    direction = np.array([1.0, -1.0]) / np.sqrt(2.0)
    rows = []
    while len(rows) < n_samples:
        point = rng.uniform(-2.0, 2.0, size=2)
        side = float(point @ direction)
        if abs(side) >= margin:
            rows.append([point[0], point[1], 1.0 if side > 0 else 0.0])
    schema = _continuous_schema(2, AttributeSpec('label', CATEGORICAL, 2, True))
    return _dataset(schema, rows)


def make_regression_table(n_samples=120, n_features=4, noise=0.1, seed=0):
    """Bảng hồi quy: y = sin(x0) + 0.5·x1·x2 − x3 + nhiễu (các cột thừa được bỏ qua)."""
    rng = np.random.default_rng(seed)
    features = rng.uniform(-2.0, 2.0, size=(n_samples, n_features))
    padded = np.pad(features, ((0, 0), (0, max(0, 4 - n_features))))
    target = np.sin(padded[:, 0]) + 0.5 * padded[:, 1] * padded[:, 2] - padded[:, 3]
    target = target + noise * rng.standard_normal(n_samples)
    schema = _continuous_schema(n_features, AttributeSpec('y', CONTINUOUS, 0, True))
    return _dataset(schema, np.column_stack([features, target]))


def make_toy_table(seed=0):
    """Bảng 4 dòng, d=3 (một thuộc tính phân loại, một liên tục, nhãn 2 lớp) dùng cho kiểm tra gradient."""
    rng = np.random.default_rng(seed)
    schema = TableSchema((
        AttributeSpec('color', CATEGORICAL, 3, False, ('red', 'green', 'blue')),
        AttributeSpec('size', CONTINUOUS),
        AttributeSpec('label', CATEGORICAL, 2, True),
    ))
    values = np.column_stack([
        np.array([0, 1, 2, 1]),
        rng.normal(size=4),
        np.array([0, 1, 1, 0]),
    ])
    return _dataset(schema, values)


GENERATORS = {
    'planted': make_planted_table,
    'separable': make_separable_table,
    'regression': make_regression_table,
    'toy': make_toy_table,
}


def save_to_csv(dataset, table_file, schema_file):
    """Ghi bảng ra CSV và schema ra file văn bản (ghi đè nếu đã tồn tại)."""
    os.makedirs(os.path.dirname(os.path.abspath(table_file)), exist_ok=True)
    save(dataset, table_file)
    with open(schema_file, 'w', encoding='utf-8') as fh:
        fh.write(schema_text(dataset.schema))
    logger.info(f"Da ghi schema vao {schema_file}")


def run_task(kind, out_dir=None, n_samples=None, seed=0):
    """
    Sinh một bảng tổng hợp và ghi ra `<out_dir>/<kind>.csv` + `<out_dir>/<kind>_schema.txt`.

    Returns:
        tuple: (đường dẫn bảng, đường dẫn schema)
    """
    if kind not in GENERATORS:
        raise ConfigurationError(f"Loai du lieu tong hop khong ton tai: {kind}; chon mot trong {sorted(GENERATORS)}")
    out_dir = out_dir or get_data_dir()
    kwargs = {'seed': seed}
    if n_samples is not None and kind != 'toy':
        kwargs['n_samples'] = n_samples
    logger.info(f"Bat dau sinh du lieu tong hop '{kind}' (seed={seed})...")
    dataset = GENERATORS[kind](**kwargs)
    table_file = os.path.join(out_dir, f"{kind}.csv")
    schema_file = os.path.join(out_dir, f"{kind}_schema.txt")
    save_to_csv(dataset, table_file, schema_file)
    logger.info(f"Hoan thanh: {dataset.n_rows} dong")
    return table_file, schema_file


def main():
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s',
                        datefmt='%Y-%m-%d %H:%M:%S')
    parser = argparse.ArgumentParser(description="Sinh bang du lieu tong hop.")
    parser.add_argument('--kind', choices=sorted(GENERATORS), default='planted', help='Loai bang du lieu')
    parser.add_argument('--out-dir', default=None, help='Thu muc ghi ket qua (mac dinh HOPULAR_DATA_DIR)')
    parser.add_argument('--n-samples', type=int, default=None, help='So dong')
    parser.add_argument('--seed', type=int, default=0)
    args = parser.parse_args()
    run_task(args.kind, args.out_dir, args.n_samples, args.seed)


if __name__ == "__main__":
    main()
