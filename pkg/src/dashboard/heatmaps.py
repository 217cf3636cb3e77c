"""
扫描结果热力图：每个 (ε_a, ε_b) 单元的种子均值
"""
from typing import Optional

import pandas as pd
import plotly.graph_objects as go

METRIC_LABELS = {
    "mean_tcv": "TCV 均值",
    "mean_cpc": "CPC_avg 均值",
}


def load_results(path) -> pd.DataFrame:
    """读取长表 CSV；空的 cpc_avg 读为 NaN，flags 读为空串"""
    frame = pd.read_csv(path, keep_default_na=True)
    frame["flags"] = frame["flags"].fillna("")
    frame["cpc_avg"] = pd.to_numeric(frame["cpc_avg"], errors="coerce")
    return frame


def cell_means(frame: pd.DataFrame, policy: str) -> pd.DataFrame:
    """指定策略在各 (ε_a, ε_b) 上的 TCV / CPC 均值"""
    subset = frame[frame["policy"] == policy]
    return (
        subset.groupby(["eps_a", "eps_b"], sort=True)
        .agg(mean_tcv=("tcv", "mean"), mean_cpc=("cpc_avg", "mean"), n_flagged=("flags", lambda s: int((s != "").sum())))
        .reset_index()
    )


def metric_grid(frame: pd.DataFrame, policy: str, metric: str, baseline: Optional[str] = None) -> pd.DataFrame:
    """
    ε_b 为行、ε_a 为列的指标矩阵

    给定 baseline 时返回 policy − baseline 的差值。
    """
    grid = cell_means(frame, policy).pivot(index="eps_b", columns="eps_a", values=metric)
    if baseline:
        grid = grid - cell_means(frame, baseline).pivot(index="eps_b", columns="eps_a", values=metric)
    return grid.sort_index().sort_index(axis=1)


def create_heatmap(grid: pd.DataFrame, title: str, diverging: bool = False) -> go.Figure:
    """ε 轴按对数刻度标注的热力图"""
    if grid.empty:
        fig = go.Figure()
        fig.add_annotation(
            text="没有数据", xref="paper", yref="paper", x=0.5, y=0.5,
            showarrow=False, font=dict(size=20, color="#495057"),
        )
        fig.update_layout(plot_bgcolor='white', paper_bgcolor='white')
        return fig

    fig = go.Figure(
        go.Heatmap(
            z=grid.values,
            x=[f"{v:.0e}" for v in grid.columns],
            y=[f"{v:.0e}" for v in grid.index],
            colorscale="RdBu" if diverging else "Viridis",
            zmid=0.0 if diverging else None,
            colorbar=dict(title=title),
            hovertemplate="ε_a=%{x}<br>ε_b=%{y}<br>%{z:.4g}<extra></extra>",
        )
    )
    fig.update_layout(
        title=title,
        xaxis_title="ε_a (CTR)",
        yaxis_title="ε_b (CVR)",
        plot_bgcolor='white',
        paper_bgcolor='white',
        height=480,
    )
    return fig
