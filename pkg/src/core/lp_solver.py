"""
两约束盒约束线性规划求解模块

    minimize    Σ w_i
    subject to  a1ᵀw = b1（松弛为 |a1ᵀw − b1| ≤ tol）或 a1ᵀw ≤ b1
                a2ᵀw ≤ b2
                0 ≤ w ≤ 1

主路径为对偶搜索：固定 y2 时对 y1 的内层最大化按排序断点精确求解，
外层对 y2 ≥ 0 做倍增定界加黄金分割，随后由互补松弛恢复原始解并校验可行性与对偶间隙。
校验失败时回退到 scipy.optimize.linprog 的 HiGHS 对偶单纯形。
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from loguru import logger
from scipy.optimize import linprog

from src.exceptions import DimensionMismatchError
from src.models.fairness import ReweighWeights, SolverPath, SolverStatus

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
_BRACKET_LIMIT = 1e12
_TIE_FACTORS = (1e-9, 1e-7, 1e-5, 1e-3)
_GAP_TOL = 1e-9
_HIGHS_OPTIONS = {'primal_feasibility_tolerance': 1e-10, 'dual_feasibility_tolerance': 1e-10}


@dataclass(frozen=True)
class TwoConstraintLp:
    """两约束线性规划实例"""
    a1: np.ndarray
    b1: float
    a2: np.ndarray
    b2: float
    equality: bool  # 第一条约束是否为（松弛）等式
    tol: float

    def __post_init__(self):
        a1 = np.asarray(self.a1, dtype=float).reshape(-1)
        a2 = np.asarray(self.a2, dtype=float).reshape(-1)
        if a1.size != a2.size:
            raise DimensionMismatchError(f"约束系数长度不一致: {a1.size} vs {a2.size}")
        if a1.size < 1:
            raise DimensionMismatchError("线性规划至少需要一个变量")
        if not (np.all(np.isfinite(a1)) and np.all(np.isfinite(a2))):
            raise DimensionMismatchError("约束系数包含非有限值")
        if not self.tol > 0:
            raise ValueError(f"tol 必须为正数，实际 {self.tol}")
        object.__setattr__(self, 'a1', a1)
        object.__setattr__(self, 'a2', a2)
        object.__setattr__(self, 'b1', float(self.b1))
        object.__setattr__(self, 'b2', float(self.b2))

    @property
    def n(self) -> int:
        return self.a1.size

    def residuals(self, w: np.ndarray) -> Tuple[float, float]:
        """两条约束的违反量（等式约束取绝对偏差）"""
        first = float(self.a1 @ w - self.b1)
        first = abs(first) if self.equality else max(0.0, first)
        return first, max(0.0, float(self.a2 @ w - self.b2))

    def is_feasible(self, w: np.ndarray) -> bool:
        """在容差内是否可行"""
        slack = self.tol * (1.0 + 1e-6) + 1e-14
        r1, r2 = self.residuals(w)
        box = bool(np.all(w >= -1e-12) and np.all(w <= 1.0 + 1e-9))
        return box and r1 <= slack and r2 <= slack


def _inner_max(c: np.ndarray, a: np.ndarray, b: float, free: bool, tol: float) -> Optional[Tuple[float, float]]:
    """
    最大化 h(y) = Σ min(0, c_i + y·a_i) − y·b（free 时再减 tol·|y|，否则 y ≥ 0）

    Returns:
        Optional[Tuple[float, float]]: (y*, h(y*))，无界时返回 None
    """
    nonzero = a != 0
    breakpoints = -c[nonzero] / a[nonzero]
    weights = np.abs(a[nonzero])
    penalty = tol if free else 0.0
    if free:
        breakpoints = np.append(breakpoints, 0.0)
        weights = np.append(weights, 2.0 * penalty)
    slope_start = float(np.sum(a[a > 0])) - b + penalty
    slope_end = slope_start - float(np.sum(weights))
    if slope_end > 0:
        return None
    if free and slope_start < 0:
        return None

    if slope_start <= 0:
        # 左端斜率非正：y ≥ 0 时取 0，自由变量时左侧平坦，取最小断点
        y = float(np.min(breakpoints)) if free else 0.0
    else:
        order = np.argsort(breakpoints, kind='stable')
        slopes = slope_start - np.cumsum(weights[order])
        y = float(breakpoints[order][np.argmax(slopes <= 0)])
    if not free:
        y = max(y, 0.0)
    value = float(np.sum(np.minimum(0.0, c + y * a))) - y * b - penalty * abs(y)
    return y, value


class _DualSearch:
    """对偶搜索求解器"""

    def __init__(self, lp: TwoConstraintLp):
        self.lp = lp

    def outer(self, y2: float) -> Optional[Tuple[float, float]]:
        lp = self.lp
        inner = _inner_max(1.0 + y2 * lp.a2, lp.a1, lp.b1, lp.equality, lp.tol)
        if inner is None:
            return None
        y1, value = inner
        return y1, value - y2 * lp.b2

    def _value(self, y2: float) -> float:
        return self.outer(y2)[1]

    def maximize(self) -> Optional[Tuple[float, float, float]]:
        """返回 (y1, y2, 对偶值)，对偶无界或定界失败时返回 None"""
        if self.outer(0.0) is None:
            return None
        lo, hi = 0.0, 1.0
        if self._value(hi) > self._value(0.0):
            while self._value(2.0 * hi) > self._value(hi):
                hi *= 2.0
                if hi > _BRACKET_LIMIT:
                    return None
            lo, hi = (hi / 2.0 if hi > 1.0 else 0.0), 2.0 * hi

        x1 = hi - _GOLDEN * (hi - lo)
        x2 = lo + _GOLDEN * (hi - lo)
        f1, f2 = self._value(x1), self._value(x2)
        while hi - lo > 1e-13 * max(1.0, hi):
            if f1 < f2:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + _GOLDEN * (hi - lo)
                f2 = self._value(x2)
            else:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - _GOLDEN * (hi - lo)
                f1 = self._value(x1)

        best_y2 = max((0.0, lo, hi, x1, x2), key=lambda y: (self._value(y), -y))
        y1, value = self.outer(best_y2)
        return y1, best_y2, value

    def recover(self, y1: float, y2: float, dual_value: float) -> Optional[np.ndarray]:
        """由互补松弛恢复原始解，校验可行性与对偶间隙"""
        lp = self.lp
        r = 1.0 + y1 * lp.a1 + y2 * lp.a2
        scale = max(1.0, abs(y1) * float(np.max(np.abs(lp.a1))), y2 * float(np.max(np.abs(lp.a2))))
        rows, rhs = [], []
        if lp.equality or y1 > 0:
            rows.append(lp.a1)
            rhs.append(lp.b1)
        if y2 > 0:
            rows.append(lp.a2)
            rhs.append(lp.b2)

        for factor in _TIE_FACTORS:
            delta = factor * scale
            w = (r < -delta).astype(float)
            ties = np.abs(r) <= delta
            if ties.any() and rows:
                matrix = np.vstack(rows)
                target = np.asarray(rhs) - matrix[:, ~ties] @ w[~ties]
                solution, *_ = np.linalg.lstsq(matrix[:, ties], target, rcond=None)
                w[ties] = np.clip(solution, 0.0, 1.0)
            gap_allowance = _GAP_TOL * max(1.0, abs(dual_value)) + lp.tol * (1.0 + abs(y1))
            if lp.is_feasible(w) and float(w.sum()) - dual_value <= gap_allowance:
                return w
        return None


def solve_dual_search(lp: TwoConstraintLp) -> Optional[np.ndarray]:
    """
    对偶搜索路径

    Returns:
        Optional[np.ndarray]: 通过校验的最优解，否则 None
    """
    search = _DualSearch(lp)
    optimum = search.maximize()
    if optimum is None:
        return None
    y1, y2, value = optimum
    return search.recover(y1, y2, value)


def _linprog_matrices(lp: TwoConstraintLp):
    if lp.equality:
        a_ub = np.vstack([lp.a1, -lp.a1, lp.a2])
        b_ub = np.array([lp.b1 + lp.tol, -lp.b1 + lp.tol, lp.b2])
    else:
        a_ub = np.vstack([lp.a1, lp.a2])
        b_ub = np.array([lp.b1, lp.b2])
    return a_ub, b_ub


def solve_simplex(lp: TwoConstraintLp) -> Optional[np.ndarray]:
    """
    单纯形路径（HiGHS 对偶单纯形）

    Returns:
        Optional[np.ndarray]: 最优解，不可行时返回 None
    """
    a_ub, b_ub = _linprog_matrices(lp)
    result = linprog(np.ones(lp.n), A_ub=a_ub, b_ub=b_ub, bounds=(0.0, 1.0), method='highs-ds',
                     options=_HIGHS_OPTIONS)
    if result.status != 0:
        return None
    return np.clip(result.x, 0.0, 1.0)


def certificate_residual(lp: TwoConstraintLp) -> float:
    """最小可达约束违反量（不可行证书），求解 min s s.t. 各约束违反 ≤ s"""
    a_ub, b_ub = _linprog_matrices(lp)
    if lp.equality:
        b_ub = b_ub.copy()
        b_ub[:2] -= lp.tol
    a_ub = np.hstack([a_ub, -np.ones((a_ub.shape[0], 1))])
    cost = np.zeros(lp.n + 1)
    cost[-1] = 1.0
    bounds = [(0.0, 1.0)] * lp.n + [(0.0, None)]
    result = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method='highs-ds')
    return float(result.x[-1]) if result.status == 0 else float('inf')


def solve(lp: TwoConstraintLp, path: Optional[SolverPath] = None) -> ReweighWeights:
    """
    求解两约束线性规划

    Args:
        lp: 线性规划实例
        path: 指定求解路径，为空时先对偶搜索、失败再回退单纯形

    Returns:
        ReweighWeights: 解及状态
    """
    w, used = None, None
    if path in (None, SolverPath.DUAL_SEARCH):
        w = solve_dual_search(lp)
        used = SolverPath.DUAL_SEARCH
        if w is None and path is None:
            logger.warning("对偶搜索未通过校验，回退到单纯形")
    if w is None and path in (None, SolverPath.SIMPLEX):
        w = solve_simplex(lp)
        used = SolverPath.SIMPLEX

    if w is None:
        residual = certificate_residual(lp)
        logger.warning(f"重加权线性规划不可行: 证书残差 {residual:.3e}")
        return ReweighWeights(
            w=np.zeros(lp.n),
            status=SolverStatus.INFEASIBLE,
            objective=0.0,
            residuals=lp.residuals(np.zeros(lp.n)),
            path=used,
            certificate_residual=residual
        )
    logger.info(f"重加权线性规划求解完成: 路径 {used.value}, 目标值 {float(w.sum()):.6g}")
    return ReweighWeights(
        w=w,
        status=SolverStatus.OPTIMAL,
        objective=float(w.sum()),
        residuals=lp.residuals(w),
        path=used
    )


def utility_floor(i_util: np.ndarray) -> float:
    """min_{v∈[0,1]ⁿ} Σ v_i I_util_i 的闭式解 Σ min(I_util_i, 0)"""
    return float(np.sum(np.minimum(np.asarray(i_util, dtype=float), 0.0)))


def solve_reweigh_basic(i_fair: np.ndarray, i_util: np.ndarray, f_fair_val: float, tol: float = 1e-8,
                        path: Optional[SolverPath] = None) -> ReweighWeights:
    """
    基础重加权问题：min Σw  s.t. Σ w_i I_fair_i = −f（容差 tol），Σ w_i I_util_i ≤ 0

    Args:
        i_fair: 公平性影响
        i_util: 效用影响
        f_fair_val: 验证集公平性值
        tol: 容差
        path: 求解路径

    Returns:
        ReweighWeights: 解
    """
    lp = TwoConstraintLp(a1=i_fair, b1=-f_fair_val, a2=i_util, b2=0.0, equality=True, tol=tol)
    return solve(lp, path)


def solve_reweigh_advanced(i_fair: np.ndarray, i_util: np.ndarray, f_fair_val: float, beta: float,
                           gamma: float, tol: float = 1e-8, path: Optional[SolverPath] = None) -> ReweighWeights:
    """
    (β, γ) 重加权问题：min Σw  s.t. Σ w_i I_fair_i ≤ −(1−β)f，Σ w_i I_util_i ≤ γ·Σ min(I_util_i, 0)

    Args:
        i_fair: 公平性影响
        i_util: 效用影响
        f_fair_val: 验证集公平性值
        beta: 公平性放松系数
        gamma: 效用要求系数
        tol: 容差
        path: 求解路径

    Returns:
        ReweighWeights: 解
    """
    if not 0 <= beta <= 1 or not 0 <= gamma <= 1:
        raise ValueError(f"beta/gamma 必须位于 [0, 1]，实际 {beta}/{gamma}")
    lp = TwoConstraintLp(
        a1=i_fair,
        b1=-(1.0 - beta) * f_fair_val,
        a2=i_util,
        b2=gamma * utility_floor(i_util),
        equality=False,
        tol=tol
    )
    return solve(lp, path)
