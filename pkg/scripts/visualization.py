"""
Module visualization.py
Chứa các hàm vẽ biểu đồ: lịch sử huấn luyện, năng lượng dọc quỹ đạo truy hồi, cận dung lượng.
Biểu đồ được ghi ra file HTML.
"""

import logging

import numpy as np
import plotly.express as px
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from .hopfield import CapacityParams, storage_capacity_bound
from .errors import CapacityConditionError, ContractError

logger = logging.getLogger(__name__)


def plot_training_history(history):
    """
    Vẽ lịch sử huấn luyện: L, L_f, L_t, mất mát validation (trên) và γ (dưới).

    Args:
        history (pd.DataFrame): Bảng lịch sử từ fit()

    Returns:
        go.Figure: Biểu đồ
    """
    if history.empty:
        raise ContractError("Lich su huan luyen rong")
    fig = make_subplots(rows=2, cols=1, shared_xaxes=True, row_heights=[0.7, 0.3],
                        subplot_titles=('Mat mat', 'Gamma'))
    for column in ('L', 'L_f', 'L_t', 'val_loss'):
        if column in history:
            fig.add_trace(go.Scatter(x=history['epoch'], y=history[column], mode='lines', name=column), row=1, col=1)
    fig.add_trace(go.Scatter(x=history['epoch'], y=history['gamma'], mode='lines', name='gamma',
                             line=dict(dash='dot')), row=2, col=1)
    if 'val_metric' in history:
        best = history['val_loss'].idxmin()
        fig.add_annotation(x=history.loc[best, 'epoch'], y=history.loc[best, 'val_loss'], row=1, col=1,
                           text=f"val_metric={history.loc[best, 'val_metric']:.4f}", showarrow=True)
    fig.update_layout(title='Lich su huan luyen Hopular', xaxis2_title='Epoch')
    return fig


def plot_energy_trajectory(energies):
    """Năng lượng theo từng bước của retrieve()."""
    energies = np.asarray(energies, dtype=np.float64)
    fig = px.line(x=np.arange(energies.size), y=energies, markers=True,
                  labels={'x': 'Buoc cap nhat', 'y': 'Nang luong'}, title='Nang luong doc quy dao truy hoi')
    return fig


def plot_capacity_curve(dims, K=1.0, beta=1.0, p=0.001):
    """
    N_min theo chiều d (thang log); các d không thỏa điều kiện của cận bị bỏ qua.
    """
    xs, ys = [], []
    for d in dims:
        try:
            ys.append(storage_capacity_bound(CapacityParams(p=p, K=K, d=int(d), beta=beta)))
            xs.append(int(d))
        except CapacityConditionError:
            logger.warning(f"[CAPACITY] Bo qua d={d}: dieu kien cua can khong thoa")
    fig = go.Figure(go.Scatter(x=xs, y=ys, mode='lines+markers', name='N_min'))
    fig.update_layout(title=f'Can duoi dung luong (K={K}, beta={beta}, p={p})',
                      xaxis_title='d', yaxis_title='N_min', yaxis_type='log')
    return fig


def save_figure(fig, path):
    fig.write_html(path, include_plotlyjs='cdn')
    logger.info(f"Da ghi bieu do vao {path}")
    return path
