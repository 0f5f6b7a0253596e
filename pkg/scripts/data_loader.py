"""
Module data_loader.py
Chứa các hàm đọc bảng dữ liệu CSV theo schema, chia tập train/val/test,
chuẩn hóa và mã hóa thuộc tính cho mô hình.
"""

import hashlib
import logging
import os
import re
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.optimize import Bounds, LinearConstraint, milp

from .errors import ConfigurationError, ContractError, EncodingError, ParseError, SchemaError

logger = logging.getLogger(__name__)

CATEGORICAL = 'categorical'
CONTINUOUS = 'continuous'
# Mã loại thuộc tính dùng cho type embedding
TYPE_CATEGORICAL, TYPE_CONTINUOUS, TYPE_TARGET = 0, 1, 2
SPLIT_NAMES = ('train', 'val', 'test')


@dataclass(frozen=True)
class AttributeSpec:
    """Mô tả một thuộc tính: tên, loại, số lớp (phân loại), có phải mục tiêu."""
    name: str
    kind: str
    cardinality: int = 0
    is_target: bool = False
    vocabulary: tuple = ()

    @property
    def is_categorical(self):
        return self.kind == CATEGORICAL

    @property
    def output_size(self):
        """Số chiều dự đoán cuối: số lớp (phân loại) hoặc 1 (liên tục)."""
        return self.cardinality if self.is_categorical else 1

    @property
    def type_id(self):
        if self.is_target:
            return TYPE_TARGET
        return TYPE_CATEGORICAL if self.is_categorical else TYPE_CONTINUOUS

    @property
    def missing_index(self):
        """Chỉ số của lớp "thiếu giá trị" dành riêng cho thuộc tính phân loại."""
        return self.cardinality

    def token_of(self, index):
        return self.vocabulary[index] if self.vocabulary else str(int(index))


@dataclass(frozen=True)
class TableSchema:
    """Danh sách thuộc tính có thứ tự; đúng một thuộc tính là mục tiêu."""
    attributes: tuple

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError(f"Ten thuoc tinh bi trung: {names}")
        targets = [a for a in self.attributes if a.is_target]
        if len(targets) != 1:
            raise SchemaError(f"Schema phai co dung 1 thuoc tinh muc tieu, tim thay {len(targets)}")
        for a in self.attributes:
            if a.kind not in (CATEGORICAL, CONTINUOUS):
                raise SchemaError(f"Loai thuoc tinh khong hop le cho {a.name}: {a.kind}")
            if a.is_categorical and a.cardinality < 2:
                raise SchemaError(f"Thuoc tinh phan loai {a.name} phai co so lop >= 2")
            if a.vocabulary and len(a.vocabulary) != a.cardinality:
                raise SchemaError(f"Tu vung cua {a.name} co {len(a.vocabulary)} gia tri, can {a.cardinality}")

    @property
    def names(self):
        return [a.name for a in self.attributes]

    @property
    def n_attributes(self):
        return len(self.attributes)

    @property
    def target_index(self):
        return next(i for i, a in enumerate(self.attributes) if a.is_target)

    @property
    def target(self):
        return self.attributes[self.target_index]

    @property
    def task(self):
        return 'classification' if self.target.is_categorical else 'regression'

    @property
    def fingerprint(self):
        return hashlib.sha256(schema_text(self).encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class Dataset:
    """
    Bảng dữ liệu đã đọc: giá trị thô theo kiểu (chỉ số lớp hoặc số thực), cờ thiếu giá trị,
    thống kê chuẩn hóa (chỉ từ tập train) và nhãn chia tập của từng dòng.
    """
    schema: TableSchema
    values: np.ndarray
    missing: np.ndarray
    stats: dict = field(default_factory=dict)
    assignment: tuple = ()

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def fingerprint(self):
        digest = hashlib.sha256(self.schema.fingerprint.encode('utf-8'))
        digest.update(np.ascontiguousarray(self.values).tobytes())
        digest.update(np.ascontiguousarray(self.missing).tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class SplitViews:
    """Chỉ số dòng của ba tập, cùng Dataset đã có thống kê chuẩn hóa từ tập train."""
    dataset: Dataset
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def rows(self, name):
        if name not in SPLIT_NAMES:
            raise ContractError(f"Ten tap khong hop le: {name}")
        return getattr(self, name)


# ================= schema =================

def _parse_bool(token, line_no):
    token = token.strip().lower()
    if token in ('true', '1', 'yes'):
        return True
    if token in ('false', '0', 'no'):
        return False
    raise SchemaError(f"Dong {line_no} cua schema: gia tri is_target khong hop le {token!r}")


def parse_schema(text):
    """
    Phân tích nội dung schema: mỗi dòng `name,kind[,cardinality],is_target[,vocab]`,
    với vocab dạng `a|b|c`. Dòng trống và dòng bắt đầu bằng # được bỏ qua.
    """
    attributes = []
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        parts = [p.strip() for p in line.split(',')]
        kind = parts[1].lower() if len(parts) > 1 else ''
        if kind == CATEGORICAL and len(parts) in (4, 5):
            try:
                cardinality = int(parts[2])
            except ValueError as e:
                raise SchemaError(f"Dong {line_no} cua schema: so lop khong hop le {parts[2]!r}") from e
            vocabulary = tuple(parts[4].split('|')) if len(parts) == 5 else ()
            attributes.append(AttributeSpec(parts[0], kind, cardinality,
                                            _parse_bool(parts[3], line_no), vocabulary))
        elif kind == CONTINUOUS and len(parts) == 3:
            attributes.append(AttributeSpec(parts[0], kind, 0, _parse_bool(parts[2], line_no)))
        else:
            raise SchemaError(f"Dong {line_no} cua schema khong hop le: {line!r}")
    if not attributes:
        raise SchemaError("Schema rong")
    return TableSchema(tuple(attributes))


def load_schema(schema_file):
    """Đọc file schema."""
    if not os.path.exists(schema_file):
        logger.error(f"File schema {schema_file} khong ton tai")
        raise SchemaError(f"File schema {schema_file} khong ton tai")
    with open(schema_file, encoding='utf-8') as fh:
        return parse_schema(fh.read())


def schema_text(schema):
    """Chuyển schema về dạng văn bản (ngược với parse_schema)."""
    lines = []
    for a in schema.attributes:
        target = 'true' if a.is_target else 'false'
        if a.is_categorical:
            line = f"{a.name},{CATEGORICAL},{a.cardinality},{target}"
            if a.vocabulary:
                line += ',' + '|'.join(a.vocabulary)
        else:
            line = f"{a.name},{CONTINUOUS},{target}"
        lines.append(line)
    return '\n'.join(lines) + '\n'


# ================= đọc / ghi bảng =================

def _parse_categorical(attribute, token, row):
    if attribute.vocabulary:
        try:
            return attribute.vocabulary.index(token)
        except ValueError:
            pass
    elif re.fullmatch(r'[+-]?\d+', token) and 0 <= int(token) < attribute.cardinality:
        return int(token)
    raise ParseError(f"Dong {row}, cot {attribute.name}: lop khong xac dinh {token!r}",
                     row=row, column=attribute.name, token=token)


def _parse_continuous(attribute, token, row):
    try:
        value = float(token)
    except ValueError as e:
        raise ParseError(f"Dong {row}, cot {attribute.name}: khong doc duoc so thuc {token!r}",
                         row=row, column=attribute.name, token=token) from e
    if not np.isfinite(value):
        raise ParseError(f"Dong {row}, cot {attribute.name}: gia tri khong huu han {token!r}",
                         row=row, column=attribute.name, token=token)
    return value


def parse_table(frame, schema):
    """
    Chuyển DataFrame các chuỗi thành Dataset theo schema.

    Args:
        frame (pd.DataFrame): Bảng đọc với dtype=str, ô trống là thiếu giá trị
        schema (TableSchema): Schema

    Returns:
        Dataset: Dữ liệu đã phân kiểu (chưa có thống kê chuẩn hóa)
    """
    if list(frame.columns) != schema.names:
        logger.error(f"Header {list(frame.columns)} khong khop schema {schema.names}")
        raise SchemaError(f"Header bang {list(frame.columns)} khong khop schema {schema.names}")

    n, d = len(frame), schema.n_attributes
    values = np.zeros((n, d))
    missing = np.zeros((n, d), dtype=bool)
    for j, attribute in enumerate(schema.attributes):
        column = frame[attribute.name].to_numpy()
        for row, raw in enumerate(column):
            token = '' if raw is None else str(raw).strip()
            if token == '':
                missing[row, j] = True
                values[row, j] = attribute.missing_index if attribute.is_categorical else np.nan
            elif attribute.is_categorical:
                values[row, j] = _parse_categorical(attribute, token, row)
            else:
                values[row, j] = _parse_continuous(attribute, token, row)

    keep = ~missing[:, schema.target_index]
    if not keep.all():
        logger.warning(f"Bo qua {int((~keep).sum())} dong thieu gia tri muc tieu")
        values, missing = values[keep], missing[keep]
    values.setflags(write=False)
    missing.setflags(write=False)
    return Dataset(schema=schema, values=values, missing=missing)


def load(table_file, schema_file):
    """
    Đọc bảng CSV (UTF-8, có header, dấu thập phân '.') và schema.

    Args:
        table_file (str): File CSV
        schema_file (str | TableSchema): File schema hoặc schema đã đọc

    Returns:
        Dataset: Dữ liệu đã phân kiểu
    """
    schema = schema_file if isinstance(schema_file, TableSchema) else load_schema(schema_file)
    if not os.path.exists(table_file):
        logger.error(f"File {table_file} khong ton tai")
        raise SchemaError(f"File bang du lieu {table_file} khong ton tai")
    frame = pd.read_csv(table_file, dtype=str, keep_default_na=False, encoding='utf-8')
    dataset = parse_table(frame, schema)
    logger.info(f"Da doc {dataset.n_rows} dong, {schema.n_attributes} thuoc tinh tu {table_file}")
    return dataset


def to_frame(dataset):
    """Chuyển Dataset về DataFrame chuỗi (ô thiếu là chuỗi rỗng)."""
    columns = {}
    for j, attribute in enumerate(dataset.schema.attributes):
        column = []
        for value, is_missing in zip(dataset.values[:, j], dataset.missing[:, j]):
            if is_missing:
                column.append('')
            elif attribute.is_categorical:
                column.append(attribute.token_of(int(value)))
            else:
                column.append(repr(float(value)))
        columns[attribute.name] = column
    return pd.DataFrame(columns, columns=dataset.schema.names)


def save(dataset, table_file):
    """Ghi Dataset ra CSV; số thực dùng biểu diễn repr nên đọc lại chính xác từng bit."""
    to_frame(dataset).to_csv(table_file, index=False, encoding='utf-8')
    logger.info(f"Da ghi {dataset.n_rows} dong vao {table_file}")


# ================= chia tập =================

def _largest_remainder(total, fractions):
    raw = np.asarray(fractions) * total
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind='stable')
    counts[order[:total - counts.sum()]] += 1
    return counts


def _stratified_counts(class_sizes, fractions):
    """
    Làm tròn có kiểm soát bảng (lớp × tập): mỗi ô là floor hoặc ceil của n_c·f_s,
    tổng mỗi lớp giữ nguyên, tổng mỗi tập trong ±1 của n·f_s.
    """
    expected = np.outer(class_sizes, fractions)
    base = np.floor(expected).astype(int)
    frac = expected - base
    row_need = class_sizes - base.sum(axis=1)
    col_frac = frac.sum(axis=0)
    C, S = frac.shape

    A_rows = np.kron(np.eye(C), np.ones(S))
    A_cols = np.kron(np.ones(C), np.eye(S))
    constraints = [
        LinearConstraint(A_rows, row_need, row_need),
        LinearConstraint(A_cols, np.floor(col_frac + 1e-9), np.ceil(col_frac - 1e-9)),
    ]
    result = milp(c=-frac.ravel(), constraints=constraints,
                  integrality=np.ones(C * S), bounds=Bounds(0, 1))
    if not result.success:
        logger.warning(f"[SPLIT] Lam tron co kiem soat that bai: {result.message}; dung lam tron theo lop")
        return np.array([_largest_remainder(n_c, fractions) for n_c in class_sizes])
    return base + np.round(result.x).astype(int).reshape(C, S)


def read_split_file(split_file, n_rows):
    """
    Đọc file chỉ số gồm ba mục [train], [val], [test], mỗi mục là các chỉ số dòng (bắt đầu từ 0).
    """
    sections, current = {name: [] for name in SPLIT_NAMES}, None
    with open(split_file, encoding='utf-8') as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            header = re.fullmatch(r'\[(\w+)\]', line)
            if header:
                current = header.group(1).lower()
                if current not in sections:
                    raise ConfigurationError(f"Dong {line_no}: muc khong hop le [{current}]")
                continue
            if current is None:
                raise ConfigurationError(f"Dong {line_no}: chi so nam ngoai muc [train]/[val]/[test]")
            try:
                sections[current].extend(int(tok) for tok in re.split(r'[\s,]+', line) if tok)
            except ValueError as e:
                raise ConfigurationError(f"Dong {line_no}: chi so khong hop le") from e

    return _check_partition(sections, n_rows)


def _check_partition(parts, n_rows):
    parts = {s: np.asarray(parts.get(s, []), dtype=int) for s in SPLIT_NAMES}
    all_rows = np.concatenate([parts[s] for s in SPLIT_NAMES])
    if len(all_rows) != n_rows or set(all_rows.tolist()) != set(range(n_rows)):
        raise ConfigurationError(f"Cac tap phai phu kin {n_rows} dong, moi dong dung mot lan")
    return parts


def write_split_file(split_file, views):
    with open(split_file, 'w', encoding='utf-8') as fh:
        for name in SPLIT_NAMES:
            fh.write(f"[{name}]\n")
            fh.write(' '.join(str(int(i)) for i in views.rows(name)) + '\n')


def fit_normalization(dataset, train_rows):
    """Tính (mean, std) của từng thuộc tính liên tục chỉ trên các dòng train."""
    stats = {}
    for j, attribute in enumerate(dataset.schema.attributes):
        if attribute.is_categorical:
            continue
        column = dataset.values[train_rows, j]
        column = column[~dataset.missing[train_rows, j]]
        if column.size == 0:
            stats[attribute.name] = (0.0, 0.0)
            continue
        std = float(column.std())
        if std == 0.0:
            logger.warning(f"Cot {attribute.name} la hang so tren tap train; gia tri ma hoa se la 0")
        stats[attribute.name] = (float(column.mean()), std)
    return stats


def split(dataset, spec, seed=0):
    """
    Chia dữ liệu thành train/val/test và tính thống kê chuẩn hóa từ tập train.

    Args:
        dataset (Dataset): Dữ liệu đã đọc
        spec (tuple | str | dict): Bộ ba tỉ lệ (train, val, test), đường dẫn file chỉ số
            hoặc dict {train, val, test} → chỉ số dòng
        seed (int): Seed cho bộ sinh ngẫu nhiên

    Returns:
        SplitViews: Chỉ số ba tập và Dataset có thống kê chuẩn hóa
    """
    n = dataset.n_rows
    rng = np.random.default_rng(seed)
    if isinstance(spec, (str, os.PathLike)):
        parts = read_split_file(spec, n)
    elif isinstance(spec, dict):
        parts = _check_partition(spec, n)
    else:
        fractions = np.asarray(spec, dtype=float)
        if fractions.shape != (3,) or np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
            raise ConfigurationError(f"Ti le chia tap phai la 3 so khong am co tong bang 1, nhan duoc {spec}")
        parts = {s: [] for s in SPLIT_NAMES}
        if dataset.schema.task == 'classification':
            labels = dataset.values[:, dataset.schema.target_index].astype(int)
            classes = np.unique(labels)
            class_rows = [np.flatnonzero(labels == c) for c in classes]
            counts = _stratified_counts(np.array([len(r) for r in class_rows]), fractions)
            for rows, row_counts in zip(class_rows, counts):
                rows = rng.permutation(rows)
                for name, chunk in zip(SPLIT_NAMES, np.split(rows, np.cumsum(row_counts)[:-1])):
                    parts[name].extend(chunk.tolist())
        else:
            rows = rng.permutation(n)
            for name, chunk in zip(SPLIT_NAMES, np.split(rows, np.cumsum(_largest_remainder(n, fractions))[:-1])):
                parts[name].extend(chunk.tolist())
        parts = {s: np.sort(np.asarray(parts[s], dtype=int)) for s in SPLIT_NAMES}

    for name in SPLIT_NAMES:
        if len(parts[name]) == 0:
            logger.error(f"[SPLIT] Tap {name} rong")
            raise ConfigurationError(f"Tap {name} rong sau khi chia")

    assignment = np.empty(n, dtype=object)
    for name in SPLIT_NAMES:
        assignment[parts[name]] = name
    stats = fit_normalization(dataset, parts['train'])
    with_stats = replace(dataset, stats=stats, assignment=tuple(assignment.tolist()))
    logger.info(f"[SPLIT] train={len(parts['train'])}, val={len(parts['val'])}, test={len(parts['test'])}")
    return SplitViews(dataset=with_stats, train=parts['train'], val=parts['val'], test=parts['test'])


# ================= mã hóa =================

def _require_stats(dataset):
    if not dataset.stats and any(not a.is_categorical for a in dataset.schema.attributes):
        raise ContractError("Dataset chua co thong ke chuan hoa; goi split() truoc")


def _zscore(value, mean, std):
    return 0.0 if std == 0.0 else (value - mean) / std


def encode(dataset, row):
    """
    Mã hóa một dòng: phân loại → chỉ số lớp (one-hot được thực hiện trong embedding),
    liên tục → z-score theo thống kê tập train. Giá trị thiếu: lớp "thiếu" hoặc 0.

    Returns:
        list: Giá trị đã mã hóa theo thứ tự thuộc tính
    """
    _require_stats(dataset)
    if not 0 <= row < dataset.n_rows:
        raise ContractError(f"Dong {row} ngoai pham vi [0, {dataset.n_rows})")
    encoded = []
    for j, attribute in enumerate(dataset.schema.attributes):
        value = dataset.values[row, j]
        if attribute.is_categorical:
            index = int(value)
            if not 0 <= index <= attribute.missing_index:
                raise EncodingError(f"Lop {index} khong hop le cho thuoc tinh {attribute.name}")
            encoded.append(index)
        elif dataset.missing[row, j]:
            encoded.append(0.0)
        else:
            mean, std = dataset.stats[attribute.name]
            encoded.append(_zscore(float(value), mean, std))
    return encoded


def encode_rows(dataset, rows):
    """
    Mã hóa nhiều dòng cùng lúc.

    Returns:
        tuple: (values (n, d) float64, missing (n, d) bool)
    """
    _require_stats(dataset)
    rows = np.asarray(rows, dtype=int)
    values = dataset.values[rows].astype(np.float64)
    missing = dataset.missing[rows].copy()
    for j, attribute in enumerate(dataset.schema.attributes):
        if attribute.is_categorical:
            continue
        mean, std = dataset.stats[attribute.name]
        column = np.where(missing[:, j], mean, values[:, j])
        values[:, j] = 0.0 if std == 0.0 else (column - mean) / std
    return values, missing


def denormalize(dataset, attribute_index, z):
    """Đưa giá trị z-score của thuộc tính liên tục về thang đo gốc."""
    attribute = dataset.schema.attributes[attribute_index]
    if attribute.is_categorical:
        raise ContractError(f"Thuoc tinh {attribute.name} khong phai lien tuc")
    mean, std = dataset.stats[attribute.name]
    return np.asarray(z, dtype=np.float64) * std + mean


def target_values(dataset, rows):
    """Giá trị mục tiêu thô (chỉ số lớp hoặc số thực ở thang gốc)."""
    return dataset.values[np.asarray(rows, dtype=int), dataset.schema.target_index].copy()


def feature_matrix(dataset, rows):
    """Ma trận đặc trưng: one-hot (kể cả lớp "thiếu") cho phân loại, z-score cho liên tục."""
    values, _ = encode_rows(dataset, rows)
    blocks = []
    for j, attribute in enumerate(dataset.schema.attributes):
        if attribute.is_target:
            continue
        if attribute.is_categorical:
            blocks.append(np.eye(attribute.cardinality + 1)[values[:, j].astype(int)])
        else:
            blocks.append(values[:, j:j + 1])
    return np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
