"""
Module checkpoint.py
Lưu / đọc checkpoint mô hình: file .npz gồm các mảng `param/<tên>` và một header JSON
(`__header__`) mô tả phiên bản định dạng, schema, siêu tham số, thống kê chuẩn hóa và chia tập.
"""

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .config import ModelConfig
from .data_loader import parse_schema, schema_text
from .errors import CheckpointError, HopularError
from .hopular_model import HopularModel

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
HEADER_KEY = '__header__'
PARAM_PREFIX = 'param/'


@dataclass
class Checkpoint:
    model: HopularModel
    params: dict
    header: dict

    @property
    def stats(self):
        return {name: tuple(v) for name, v in self.header.get('stats', {}).items()}

    @property
    def splits(self):
        return {name: np.asarray(rows, dtype=int) for name, rows in self.header.get('splits', {}).items()}


def save_checkpoint(path, model, params, views=None, training_config=None, extra=None):
    """
    Ghi checkpoint.

    Args:
        path (str): File đích
        model (HopularModel): Kiến trúc
        params (dict): Tham số (tên → np.ndarray)
        views (SplitViews): Dữ liệu đã chia (thống kê chuẩn hóa, chỉ số các tập, dấu vân tay)
        training_config (TrainConfig): Siêu tham số huấn luyện
        extra (dict): Thông tin bổ sung (seed, phiên bản mã, ...)
    """
    model.check_params(params)
    header = {
        'format_version': FORMAT_VERSION,
        'schema': schema_text(model.schema),
        'schema_fingerprint': model.schema.fingerprint,
        'model_config': asdict(model.config),
        'training_config': asdict(training_config) if training_config is not None else None,
        'parameters': list(model.parameter_shapes()),
    }
    if views is not None:
        header['stats'] = views.dataset.stats
        header['splits'] = {name: views.rows(name).tolist() for name in ('train', 'val', 'test')}
        header['data_fingerprint'] = views.dataset.fingerprint
    header.update(extra or {})

    arrays = {PARAM_PREFIX + name: np.asarray(params[name], dtype=np.float64) for name in model.parameter_shapes()}
    arrays[HEADER_KEY] = np.frombuffer(json.dumps(header, sort_keys=True).encode('utf-8'), dtype=np.uint8)
    with open(path, 'wb') as fh:
        np.savez(fh, **arrays)
    logger.info(f"Da luu checkpoint ({len(arrays) - 1} tham so) vao {path}")


def load_checkpoint(path):
    """
    Đọc checkpoint và dựng lại kiến trúc.

    Returns:
        Checkpoint: (model, params, header)
    """
    try:
        with np.load(path, allow_pickle=False) as archive:
            if HEADER_KEY not in archive.files:
                raise CheckpointError(f"Checkpoint {path} thieu header")
            header = json.loads(archive[HEADER_KEY].tobytes().decode('utf-8'))
            params = {key[len(PARAM_PREFIX):]: archive[key].copy()
                      for key in archive.files if key.startswith(PARAM_PREFIX)}
    except (OSError, ValueError, json.JSONDecodeError) as e:
        if isinstance(e, HopularError):
            raise
        logger.error(f"Khong doc duoc checkpoint {path}: {e}")
        raise CheckpointError(f"Khong doc duoc checkpoint {path}: {e}") from e

    if header.get('format_version') != FORMAT_VERSION:
        raise CheckpointError(f"Phien ban checkpoint khong ho tro: {header.get('format_version')}")
    schema = parse_schema(header['schema'])
    if schema.fingerprint != header['schema_fingerprint']:
        raise CheckpointError("Dau van tay schema trong checkpoint khong khop")
    config = dict(header['model_config'])
    config['dropout'] = tuple(config['dropout'])
    model = HopularModel(schema, ModelConfig(**config))
    try:
        model.check_params(params)
    except HopularError as e:
        raise CheckpointError(f"Tham so trong checkpoint khong khop kien truc: {e}") from e
    logger.info(f"Da doc checkpoint {path}")
    return Checkpoint(model=model, params=params, header=header)
