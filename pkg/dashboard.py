"""
Streamlit Dashboard - ε 网格扫描结果可视化
读取 main.py run 写出的 *_results.csv
"""
import sys
from pathlib import Path

import streamlit as st

sys.path.insert(0, str(Path(__file__).resolve().parent))

from src.dashboard.heatmaps import METRIC_LABELS, create_heatmap, load_results, metric_grid  # noqa: E402

RESULTS_DIR = Path("results")

# 页面配置
st.set_page_config(
    page_title="鲁棒自动出价扫描结果",
    page_icon="📊",
    layout="wide",
    initial_sidebar_state="expanded"
)


def main():
    st.title("📊 鲁棒自动出价：ε 网格扫描结果")

    with st.sidebar:
        st.header("⚙️ 设置")
        results_dir = Path(st.text_input("结果目录", value=str(RESULTS_DIR)))
        files = sorted(results_dir.glob("*_results.csv"))
        if not files:
            st.warning(f"{results_dir} 下没有 *_results.csv，请先运行 ./run_sweep.sh")
            st.stop()
        path = st.selectbox("结果文件", files, format_func=lambda p: p.name)

    frame = load_results(path)
    policies = sorted(frame["policy"].unique())

    col1, col2, col3 = st.columns(3)
    col1.metric("单元数", len(frame))
    col2.metric("种子数", frame["seed"].nunique())
    col3.metric("带标记的单元", int((frame["flags"] != "").sum()))

    with st.sidebar:
        policy = st.selectbox("策略", policies, index=len(policies) - 1)
        baseline = st.selectbox("对比基线", ["（无）"] + [p for p in policies if p != policy])
        baseline = None if baseline == "（无）" else baseline

    left, right = st.columns(2)
    for column, metric in zip((left, right), ("mean_tcv", "mean_cpc")):
        grid = metric_grid(frame, policy, metric, baseline)
        title = METRIC_LABELS[metric] + (f"：{policy} − {baseline}" if baseline else f"：{policy}")
        column.plotly_chart(create_heatmap(grid, title, diverging=baseline is not None), use_container_width=True)

    with st.expander("📋 原始结果"):
        st.dataframe(frame, use_container_width=True)


if __name__ == "__main__":
    main()
