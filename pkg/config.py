"""
配置文件
"""
import os


class Config:
    """配置类"""

    # 不确定性预算范围（实验中 ε 的合法区间，0 表示无不确定性）
    EPS_MIN: float = 1e-6
    EPS_MAX: float = 1e-2
    EPS_GRID_POINTS: int = 7  # 默认对数网格点数

    # 冷启动参数
    WARMUP_ROUNDS: int = 5  # 前 N 轮使用低出价
    WARMUP_FRACTION: float = 0.1  # 冷启动出价 = 比例 × B / T

    # 对偶变量拟合
    INITIAL_DUAL_P: float = 1.0
    INITIAL_DUAL_Q: float = 1.0
    MIN_DUAL_SUM: float = 1e-9  # p + q 低于此值视为退化
    MAX_ALTERNATIONS: int = 10  # 活跃集与 LP 交替求解的最大轮数
    SIM_MAX_ALTERNATIONS: int = 3  # 模拟器中每步重新拟合时的交替轮数
    DUAL_MULTI_STARTS: int = 5
    SIM_MULTI_STARTS: int = 1
    OPTIMIZER_TOL: float = 1e-8
    DUAL_UPPER_BOUND: float = 1e6  # 无导数回退搜索的 p、q 上界

    # 联合不确定性的 λ 约束
    JOINT_LAMBDA_MARGIN: float = 1e-3  # 要求 4·λa·λb ≥ 1 + margin
    JOINT_LAMBDA_CAP: float = 1e6
    SINGULAR_TOL: float = 1e-9

    # 竞价分布平滑
    KDE_BANDWIDTH_FLOOR: float = 1e-6

    # 预算核对容差
    BUDGET_TOLERANCE: float = 1e-12

    # 并行任务数
    DEFAULT_JOBS: int = int(os.getenv("AUTOBID_JOBS", "1"))

    # 版本号（git describe 不可用时作为构建标识）
    VERSION: str = "0.3.0"

    # 日志配置
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
