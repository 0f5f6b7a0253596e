"""Hopular: mạng Hopfield hiện đại cho dữ liệu dạng bảng."""

__version__ = "0.1.0"
