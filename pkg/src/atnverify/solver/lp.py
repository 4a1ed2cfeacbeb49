"""Linear programs with bounded variables and two interchangeable backends.

``method="simplex"`` is a dense bounded-variable revised primal simplex
(Phase I with artificials, Dantzig pricing, Bland's rule once the run stalls).
``method="highs"`` delegates to the HiGHS dual simplex; branch-and-bound uses
that backend through :class:`HighsLP`, which keeps the model and its basis
between node solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

try:  # pragma: no cover - import guard
    import highspy
except ImportError:  # pragma: no cover
    highspy = None

INF = float("inf")


@dataclass
class LinearProgram:
    """``min c.x`` s.t. ``row_lo <= A x <= row_hi``, ``col_lo <= x <= col_hi``.

    ``A`` is given in coordinate form ``(rows, cols, vals)``.
    """

    c: np.ndarray
    col_lo: np.ndarray
    col_hi: np.ndarray
    row_lo: np.ndarray
    row_hi: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.row_lo), len(self.c)

    def dense(self) -> np.ndarray:
        A = np.zeros(self.shape)
        np.add.at(A, (self.rows, self.cols), self.vals)
        return A

    def csc(self):
        """Column-compressed ``(start, index, value)`` with duplicates summed."""
        m, n = self.shape
        key = self.cols.astype(np.int64) * max(m, 1) + self.rows
        order = np.argsort(key, kind="stable")
        key, vals = key[order], self.vals[order]
        uniq, first = np.unique(key, return_index=True)
        summed = np.add.reduceat(vals, first) if len(vals) else vals
        cols = uniq // max(m, 1)
        rows = uniq % max(m, 1)
        start = np.searchsorted(cols, np.arange(n + 1))
        return start.astype(np.int32), rows.astype(np.int32), summed

    def residual(self, x) -> float:
        """Largest bound or row violation of ``x``."""
        x = np.asarray(x, dtype=np.float64)
        act = np.bincount(self.rows, weights=self.vals * x[self.cols], minlength=self.shape[0])
        parts = [
            self.col_lo - x,
            x - self.col_hi,
            self.row_lo - act,
            act - self.row_hi,
        ]
        return float(max(0.0, *(np.max(p, initial=0.0) for p in parts)))


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded" | "iteration_limit"
    x: np.ndarray | None = None
    objective: float = INF
    iterations: int = 0
    info: dict = field(default_factory=dict)


def solve_lp(lp: LinearProgram, method: str = "highs", tol: float = 1e-9, max_iter: int | None = None) -> LPResult:
    if np.any(~np.isfinite(lp.col_lo)) or np.any(~np.isfinite(lp.col_hi)):
        raise ValueError("solve_lp requires finite variable bounds")
    if method == "simplex":
        return _simplex(lp, tol, max_iter)
    if method == "highs":
        h = HighsLP(lp)
        return h.solve()
    raise ValueError(f"unknown LP method {method!r}")


# ---------------------------------------------------------------------------
# HiGHS backend
# ---------------------------------------------------------------------------


class HighsLP:
    """Persistent HiGHS model; bounds/coefficients can be changed between solves."""

    def __init__(self, lp: LinearProgram, feas_tol: float = 1e-9):
        if highspy is None:  # pragma: no cover
            raise RuntimeError("highspy is not installed")
        self.lp = lp
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("primal_feasibility_tolerance", feas_tol)
        h.setOptionValue("dual_feasibility_tolerance", feas_tol)
        h.setOptionValue("threads", 1)
        h.setOptionValue("presolve", "off")
        h.setOptionValue("random_seed", 0)
        m, n = lp.shape
        model = highspy.HighsLp()
        model.num_col_ = n
        model.num_row_ = m
        model.col_cost_ = np.asarray(lp.c, dtype=np.float64)
        model.col_lower_ = np.asarray(lp.col_lo, dtype=np.float64)
        model.col_upper_ = np.asarray(lp.col_hi, dtype=np.float64)
        model.row_lower_ = np.where(np.isfinite(lp.row_lo), lp.row_lo, -highspy.kHighsInf)
        model.row_upper_ = np.where(np.isfinite(lp.row_hi), lp.row_hi, highspy.kHighsInf)
        start, index, value = lp.csc()
        model.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        model.a_matrix_.start_ = start
        model.a_matrix_.index_ = index
        model.a_matrix_.value_ = value
        model.a_matrix_.num_col_ = n
        model.a_matrix_.num_row_ = m
        h.passModel(model)
        self.h = h
        self.n = n

    def set_col_bounds(self, idx, lo, hi) -> None:
        idx = np.asarray(idx, dtype=np.int32)
        if len(idx):
            self.h.changeColsBounds(len(idx), idx, np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64))

    def set_coeff(self, row: int, col: int, value: float) -> None:
        self.h.changeCoeff(int(row), int(col), float(value))

    def set_row_bounds(self, row: int, lo: float, hi: float) -> None:
        self.h.changeRowBounds(int(row), lo if np.isfinite(lo) else -highspy.kHighsInf, hi if np.isfinite(hi) else highspy.kHighsInf)

    def solve(self) -> LPResult:
        self.h.run()
        status = self.h.getModelStatus()
        info = self.h.getInfo()
        iters = int(info.simplex_iteration_count)
        S = highspy.HighsModelStatus
        if status == S.kOptimal:
            x = np.array(self.h.getSolution().col_value, dtype=np.float64)
            return LPResult("optimal", x, float(self.h.getInfo().objective_function_value), iters)
        if status == S.kInfeasible:
            return LPResult("infeasible", iterations=iters)
        if status in (S.kUnbounded, S.kUnboundedOrInfeasible):
            # clear the basis and retry once: some statuses come from a stale warm start
            self.h.clearSolver()
            self.h.run()
            status = self.h.getModelStatus()
            if status == S.kOptimal:
                x = np.array(self.h.getSolution().col_value, dtype=np.float64)
                return LPResult("optimal", x, float(self.h.getInfo().objective_function_value), iters)
            if status == S.kInfeasible:
                return LPResult("infeasible", iterations=iters)
            return LPResult("unbounded", iterations=iters)
        # numerical trouble: retry from scratch
        self.h.clearSolver()
        self.h.run()
        status = self.h.getModelStatus()
        if status == S.kOptimal:
            x = np.array(self.h.getSolution().col_value, dtype=np.float64)
            return LPResult("optimal", x, float(self.h.getInfo().objective_function_value), iters)
        if status == S.kInfeasible:
            return LPResult("infeasible", iterations=iters)
        return LPResult("iteration_limit", iterations=iters, info={"highs_status": self.h.modelStatusToString(status)})


# ---------------------------------------------------------------------------
# dense bounded-variable primal simplex
# ---------------------------------------------------------------------------


def _simplex(lp: LinearProgram, tol: float, max_iter: int | None) -> LPResult:
    m, n = lp.shape
    A = lp.dense()
    # y = [x, s], [A, -I] y = 0, s within the row range
    M = np.hstack([A, -np.eye(m)])
    lo = np.concatenate([lp.col_lo, lp.row_lo])
    hi = np.concatenate([lp.col_hi, lp.row_hi])
    cost = np.concatenate([lp.c, np.zeros(m)])
    if np.any(lo > hi + tol):
        return LPResult("infeasible")
    nt = n + m
    y = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
    r = -M @ y
    sign = np.where(r >= 0, 1.0, -1.0)
    # artificials
    M = np.hstack([M, np.diag(sign)])
    lo = np.concatenate([lo, np.zeros(m)])
    hi = np.concatenate([hi, np.full(m, INF)])
    y = np.concatenate([y, np.abs(r)])
    basis = np.arange(nt, nt + m)
    limit = max_iter or 200 * (m + nt) + 1000
    stall_limit = 10 * (m + nt)

    phase1 = np.concatenate([np.zeros(nt), np.ones(m)])
    state = {"iters": 0, "bland": False}
    status = _primal(M, lo, hi, phase1, y, basis, tol, limit, stall_limit, state)
    if status != "optimal":
        return LPResult(status, iterations=state["iters"])
    infeas = float(np.sum(y[nt:]))
    if infeas > max(1e-7, tol * 10):
        return LPResult("infeasible", iterations=state["iters"], info={"phase1": infeas})
    hi[nt:] = 0.0
    y[nt:] = np.minimum(y[nt:], 0.0)
    full_cost = np.concatenate([cost, np.zeros(m)])
    status = _primal(M, lo, hi, full_cost, y, basis, tol, limit, stall_limit, state)
    if status != "optimal":
        return LPResult(status, iterations=state["iters"])
    x = y[:n].copy()
    x = np.clip(x, lp.col_lo, lp.col_hi)
    return LPResult("optimal", x, float(lp.c @ x), state["iters"], info={"bland": state["bland"]})


def _primal(M, lo, hi, cost, y, basis, tol, limit, stall_limit, state) -> str:
    m, nt = M.shape
    is_basic = np.zeros(nt, dtype=bool)
    is_basic[basis] = True
    Binv = np.linalg.inv(M[:, basis])
    since_refactor = 0
    stall = 0

    def recompute():
        nonlocal Binv
        Binv = np.linalg.inv(M[:, basis])
        nb = ~is_basic
        y[basis] = Binv @ (-(M[:, nb] @ y[nb]))

    recompute()
    while True:
        if state["iters"] >= limit:
            return "iteration_limit"
        pi = cost[basis] @ Binv
        d = cost - pi @ M
        d[is_basic] = 0.0
        can_up = (y < hi - tol) & ~is_basic
        can_down = (y > lo + tol) & ~is_basic
        elig_up = can_up & (d < -tol)
        elig_down = can_down & (d > tol)
        elig = elig_up | elig_down
        if not elig.any():
            return "optimal"
        if state["bland"]:
            j = int(np.nonzero(elig)[0][0])
        else:
            score = np.where(elig, np.abs(d), -1.0)
            j = int(np.argmax(score))
        direction = 1.0 if elig_up[j] else -1.0
        alpha = Binv @ M[:, j]
        delta = -direction * alpha  # change of basics per unit step of y_j
        theta = hi[j] - lo[j]
        leave = -1
        leave_to = 0.0
        ratios = np.full(m, INF)
        dec = delta < -tol
        inc = delta > tol
        yb = y[basis]
        ratios[dec] = (yb[dec] - lo[basis][dec]) / -delta[dec]
        ratios[inc] = (hi[basis][inc] - yb[inc]) / delta[inc]
        ratios = np.maximum(ratios, 0.0)
        if np.isfinite(ratios).any():
            best = float(np.min(ratios))
            if best < theta:
                ties = np.nonzero(ratios <= best + 1e-12)[0]
                if state["bland"]:
                    i = int(ties[np.argmin(basis[ties])])
                else:
                    i = int(ties[np.argmax(np.abs(delta[ties]))])
                theta = best
                leave = i
                leave_to = lo[basis[i]] if dec[i] else hi[basis[i]]
        if not np.isfinite(theta):
            return "unbounded"
        state["iters"] += 1
        stall = stall + 1 if theta <= 1e-12 else 0
        if stall > stall_limit:
            state["bland"] = True
        y[basis] = yb + theta * delta
        y[j] = y[j] + direction * theta
        if leave < 0:
            y[j] = hi[j] if direction > 0 else lo[j]
            continue
        out = basis[leave]
        y[out] = leave_to
        basis[leave] = j
        is_basic[out] = False
        is_basic[j] = True
        # product-form update of the inverse
        piv = alpha[leave]
        if abs(piv) < 1e-11:
            recompute()
            since_refactor = 0
            continue
        row = Binv[leave] / piv
        Binv -= np.outer(alpha, row)
        Binv[leave] = row
        since_refactor += 1
        if since_refactor >= 50:
            recompute()
            since_refactor = 0
