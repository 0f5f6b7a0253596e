"""
Module errors.py
Các lớp lỗi của thư viện. Tất cả kế thừa ValueError để code gọi cũ vẫn bắt được.
"""


class HopularError(ValueError):
    """Lỗi gốc của thư viện."""


class DimensionError(HopularError):
    """Kích thước tensor / vector không khớp."""


class NumericDomainError(HopularError):
    """Giá trị ngoài miền số học (NaN, Inf, đối số ngoài miền xác định)."""


class ContractError(HopularError):
    """Vi phạm điều kiện đầu vào của hàm."""


class EncodingError(HopularError):
    """Không mã hóa được giá trị thuộc tính."""


class SchemaError(HopularError):
    """File schema không hợp lệ hoặc không khớp với bảng dữ liệu."""


class ParseError(HopularError):
    """Lỗi đọc giá trị tại một ô cụ thể của bảng."""

    def __init__(self, message, row=None, column=None, token=None):
        super().__init__(message)
        self.row = row
        self.column = column
        self.token = token


class ConfigurationError(HopularError):
    """Cấu hình không hợp lệ."""


class CapacityConditionError(HopularError):
    """Điều kiện c >= (2/sqrt(p))^(4/(d-1)) không thỏa."""

    def __init__(self, message, c, threshold):
        super().__init__(message)
        self.c = c
        self.threshold = threshold


class MaskingError(HopularError):
    """Không thực hiện được phép che / thay thế thuộc tính."""


class OptimizerError(HopularError):
    """Gradient không hữu hạn trong bước tối ưu."""

    def __init__(self, message, parameter=None):
        super().__init__(message)
        self.parameter = parameter


class NonFiniteLossError(HopularError):
    """Hàm mất mát không hữu hạn; kèm ảnh chụp chẩn đoán."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class CheckpointError(HopularError):
    """File checkpoint hỏng hoặc không tương thích."""
