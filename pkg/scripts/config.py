"""
Module config.py
Cấu hình mặc định của Hopular và hàm đọc file cấu hình INI.
"""

import configparser
import logging
import os
from dataclasses import asdict, dataclass, field, replace

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

# Thư mục dữ liệu / kết quả mặc định (có thể ghi đè bằng biến môi trường)
DEFAULT_DATA_DIR = os.path.join(os.path.dirname(__file__), '..', 'data')
DEFAULT_OUTPUT_DIR = os.path.join(os.path.dirname(__file__), '..', 'runs')

# Giá trị mặc định theo bảng siêu tham số của Hopular
DEFAULT_EMBEDDING_DIM = 32
DEFAULT_BLOCKS = 4
DEFAULT_HOPFIELD_NETS = 8
DEFAULT_BETA_SCALE = 1.0
DEFAULT_MASK_PROB = 0.025
DEFAULT_REPLACE_PROB = 0.175
DEFAULT_WEIGHT_DECAY = 0.1
DEFAULT_DROPOUT = (0.1, 0.1, 0.01)  # (p_i, p_h, p_o)
DEFAULT_LEARNING_RATE = 0.001
DEFAULT_LAMB_BETAS = (0.9, 0.999)
DEFAULT_LAMB_EPS = 1e-6
DEFAULT_EMA_ALPHA = 0.005
DEFAULT_EMA_K = 1
DEFAULT_EPOCHS = 10000
DEFAULT_PATIENCE = 500
FULL_BATCH_LIMIT = 2048
MINIBATCH_SIZE = 256

# Lưới tìm kiếm: (số khối L, số mạng Hopfield M, beta_scale, mask, replace, weight decay, dropout)
HYPERPARAMETER_GRID = [
    {'n_blocks': L, 'n_heads': M, 'beta_scale': beta,
     'mask_prob': 0.025, 'replace_prob': 0.175, 'weight_decay': 0.1,
     'dropout': (0.1, 0.1, 0.01)}
    for L, M in [(4, 8), (8, 8), (4, 16), (8, 16)]
    for beta in (1.0, 100.0, 1000.0)
] + [
    {'n_blocks': 8, 'n_heads': 16, 'beta_scale': 1.0,
     'mask_prob': 0.0, 'replace_prob': 0.0, 'weight_decay': 0.0,
     'dropout': (0.0, 0.0, 0.0)},
]


def get_data_dir() -> str:
    """Ưu tiên biến môi trường HOPULAR_DATA_DIR rồi tới thư mục data mặc định."""
    return os.getenv("HOPULAR_DATA_DIR") or DEFAULT_DATA_DIR


def get_output_dir() -> str:
    """Ưu tiên biến môi trường HOPULAR_OUTPUT_DIR rồi tới thư mục runs mặc định."""
    return os.getenv("HOPULAR_OUTPUT_DIR") or DEFAULT_OUTPUT_DIR


@dataclass(frozen=True)
class ModelConfig:
    """Siêu tham số kiến trúc: e, L, M, beta_scale và bộ ba dropout."""
    embedding_dim: int = DEFAULT_EMBEDDING_DIM
    n_blocks: int = DEFAULT_BLOCKS
    n_heads: int = DEFAULT_HOPFIELD_NETS
    beta_scale: float = DEFAULT_BETA_SCALE
    dropout: tuple = DEFAULT_DROPOUT
    drop_self_column: bool = False
    detach_memory: bool = False

    def validate(self):
        if self.embedding_dim < 1:
            raise ConfigurationError(f"embedding_dim phai >= 1, nhan duoc {self.embedding_dim}")
        if self.n_blocks < 0:
            raise ConfigurationError(f"n_blocks phai >= 0, nhan duoc {self.n_blocks}")
        if self.n_heads < 1:
            raise ConfigurationError(f"n_heads phai >= 1, nhan duoc {self.n_heads}")
        if not self.beta_scale > 0:
            raise ConfigurationError(f"beta_scale phai > 0, nhan duoc {self.beta_scale}")
        if len(self.dropout) != 3 or any(not 0.0 <= p <= 1.0 for p in self.dropout):
            raise ConfigurationError(f"dropout phai la bo ba xac suat trong [0, 1], nhan duoc {self.dropout}")
        return self


@dataclass(frozen=True)
class TrainConfig:
    """Siêu tham số huấn luyện: che thuộc tính, lịch gamma, LAMB, EMA, dừng sớm."""
    mask_prob: float = DEFAULT_MASK_PROB
    replace_prob: float = DEFAULT_REPLACE_PROB
    learning_rate: float = DEFAULT_LEARNING_RATE
    betas: tuple = DEFAULT_LAMB_BETAS
    eps: float = DEFAULT_LAMB_EPS
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    ema_alpha: float = DEFAULT_EMA_ALPHA
    ema_k: int = DEFAULT_EMA_K
    epochs: int = DEFAULT_EPOCHS
    patience: int = DEFAULT_PATIENCE
    gamma_start: float = 1.0
    gamma_schedule: str = 'cosine'
    batch_size: int = 0  # 0: tự chọn theo số mẫu

    def validate(self):
        for name in ('mask_prob', 'replace_prob'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} phai trong [0, 1], nhan duoc {value}")
        if self.mask_prob + self.replace_prob > 1.0:
            raise ConfigurationError("mask_prob + replace_prob phai <= 1")
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate phai >= 0, nhan duoc {self.learning_rate}")
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ConfigurationError(f"ema_alpha phai trong (0, 1], nhan duoc {self.ema_alpha}")
        if self.ema_k < 1:
            raise ConfigurationError(f"ema_k phai >= 1, nhan duoc {self.ema_k}")
        if self.epochs < 1 or self.patience < 1:
            raise ConfigurationError("epochs va patience phai >= 1")
        if not 0.0 <= self.gamma_start <= 1.0:
            raise ConfigurationError(f"gamma_start phai trong [0, 1], nhan duoc {self.gamma_start}")
        if self.gamma_schedule not in ('cosine', 'constant'):
            raise ConfigurationError(f"gamma_schedule khong hop le: {self.gamma_schedule}")
        if self.batch_size < 0:
            raise ConfigurationError(f"batch_size phai >= 0, nhan duoc {self.batch_size}")
        return self

    def resolve_batch_size(self, n_samples):
        """Full-batch khi n <= 2048, ngược lại mini-batch 256 (trừ khi đặt batch_size)."""
        if self.batch_size > 0:
            return min(self.batch_size, n_samples)
        return n_samples if n_samples <= FULL_BATCH_LIMIT else MINIBATCH_SIZE


@dataclass(frozen=True)
class RunConfig:
    """Toàn bộ cấu hình một lần chạy."""
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    replicates: int = 1

    def validate(self):
        self.model.validate()
        self.training.validate()
        if self.replicates < 1:
            raise ConfigurationError(f"replicates phai >= 1, nhan duoc {self.replicates}")
        return self

    def to_dict(self):
        return asdict(self)

    def with_overrides(self, **overrides):
        """Trả về bản sao với các trường được ghi đè (khóa phẳng, ví dụ n_blocks=8)."""
        model_fields = set(ModelConfig.__dataclass_fields__)
        train_fields = set(TrainConfig.__dataclass_fields__)
        model_kw = {k: v for k, v in overrides.items() if k in model_fields}
        train_kw = {k: v for k, v in overrides.items() if k in train_fields}
        run_kw = {k: v for k, v in overrides.items() if k in ('seed', 'replicates')}
        unknown = set(overrides) - model_fields - train_fields - {'seed', 'replicates'}
        if unknown:
            raise ConfigurationError(f"Khoa cau hinh khong ton tai: {sorted(unknown)}")
        return replace(self, model=replace(self.model, **model_kw),
                       training=replace(self.training, **train_kw), **run_kw).validate()


def _parse_value(raw, default):
    raw = raw.strip()
    if isinstance(default, bool):
        return raw.lower() in ('1', 'true', 'yes', 'on')
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(float(x) for x in raw.replace(',', ' ').split())
    return raw


def load_run_config(path=None):
    """
    Đọc cấu hình từ file INI với các mục [model], [training], [run].

    Args:
        path (str): Đường dẫn file cấu hình; None trả về cấu hình mặc định

    Returns:
        RunConfig: Cấu hình đã kiểm tra
    """
    if path is None:
        return RunConfig().validate()
    if not os.path.exists(path):
        logger.error(f"File cau hinh {path} khong ton tai")
        raise ConfigurationError(f"File cau hinh {path} khong ton tai")

    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding='utf-8')
    except configparser.Error as e:
        raise ConfigurationError(f"Loi doc file cau hinh {path}: {e}") from e

    overrides = {}
    sections = {'model': ModelConfig(), 'training': TrainConfig(), 'run': RunConfig()}
    for section in parser.sections():
        if section not in sections:
            raise ConfigurationError(f"Muc cau hinh khong ton tai: [{section}]")
        defaults = sections[section]
        for key, raw in parser.items(section):
            if not hasattr(defaults, key):
                raise ConfigurationError(f"Khoa cau hinh khong ton tai: [{section}] {key}")
            try:
                overrides[key] = _parse_value(raw, getattr(defaults, key))
            except ValueError as e:
                raise ConfigurationError(f"Gia tri khong hop le cho [{section}] {key}: {raw!r}") from e

    config = RunConfig().with_overrides(**overrides)
    logger.info(f"Da doc cau hinh tu {path}: {overrides}")
    return config
