"""Linear relaxation of a :class:`~atnverify.model.MiqcpModel` over a box.

Every distinct product ``v_i * v_j`` in the quadratic rows is lifted to an
auxiliary column ``w`` constrained by its McCormick envelope; products with
a factor fixed at build time are substituted linearly. ``y = max(x, 0)`` and
``y = |x|`` get their convex hull over the current interval of ``x``. The
bound-dependent rows are refreshed per node with :meth:`Relaxation.update`.
"""

from __future__ import annotations

import numpy as np

from ..model import MiqcpModel, ModelError
from .lp import INF, LinearProgram


def mccormick(x_bounds, y_bounds) -> list[tuple[float, float, float, str, float]]:
    """Envelope of ``w = x * y`` as rows ``(cx, cy, cw, sense, rhs)`` meaning
    ``cx*x + cy*y + cw*w  sense  rhs``."""
    xl, xu = (float(v) for v in x_bounds)
    yl, yu = (float(v) for v in y_bounds)
    return [
        (-yl, -xl, 1.0, ">=", -xl * yl),
        (-yu, -xu, 1.0, ">=", -xu * yu),
        (-yl, -xu, 1.0, "<=", -xu * yl),
        (-yu, -xl, 1.0, "<=", -xl * yu),
    ]


def _envelope_arrays(xl, xu, yl, yu):
    """Vectorised :func:`mccormick`: coefficient arrays shaped (4, K)."""
    cx = np.stack([-yl, -yu, -yl, -yu])
    cy = np.stack([-xl, -xu, -xu, -xl])
    rhs = np.stack([-xl * yl, -xu * yu, -xu * yl, -xl * yu])
    return cx, cy, rhs


def _corner_bounds(xl, xu, yl, yu):
    c = np.stack([xl * yl, xl * yu, xu * yl, xu * yu])
    return c.min(axis=0), c.max(axis=0)


def _secant(kind: np.ndarray, lo, hi):
    """Slope/intercept of the concave overestimator of max(x,0) or |x| on [lo, hi]."""
    lo_ = np.minimum(lo, 0.0)
    hi_ = np.maximum(hi, 0.0)
    width = hi_ - lo_
    safe = np.where(width > 0, width, 1.0)
    f_lo = np.where(kind, np.abs(lo_), 0.0)
    f_hi = hi_
    slope = np.where(width > 0, (f_hi - f_lo) / safe, 0.0)
    return slope, f_lo - slope * lo_


class Relaxation:
    """Lifted LP of a model. Columns ``[0, n)`` are model variables; the
    remaining ones are product auxiliaries (see :attr:`products`)."""

    def __init__(self, model: MiqcpModel, lb=None, ub=None):
        lb = model.lb if lb is None else np.asarray(lb, dtype=np.float64)
        ub = model.ub if ub is None else np.asarray(ub, dtype=np.float64)
        if np.any(~np.isfinite(lb)) or np.any(~np.isfinite(ub)):
            raise ModelError("all variables need finite bounds")
        self.model = model
        n = model.num_vars
        self.n = n
        fixed = lb == ub
        prod_index: dict[tuple[int, int], int] = {}
        rows, cols, vals = [], [], []
        row_lo, row_hi = [], []

        def sense_bounds(sense, rhs):
            return (rhs if sense in (">=", "=") else -INF, rhs if sense in ("<=", "=") else INF)

        self.root_infeasible = False

        def add_static(idx, coef, sense, rhs):
            """Row with the root-fixed variables folded into the right-hand side."""
            idx = np.asarray(idx, dtype=np.int64)
            coef = np.asarray(coef, dtype=np.float64)
            fx = np.zeros(len(idx), dtype=bool)
            orig = idx < n
            fx[orig] = fixed[idx[orig]]
            rhs = rhs - float(coef[fx] @ lb[idx[fx]])
            idx, coef = idx[~fx], coef[~fx]
            if len(idx) == 0:
                lo, hi = sense_bounds(sense, rhs)
                if lo > 1e-7 * (1 + abs(rhs)) or hi < -1e-7 * (1 + abs(rhs)):
                    self.root_infeasible = True
                return -1
            return add_row(idx, coef, sense, rhs)

        def add_row(idx, coef, sense, rhs):
            r = len(row_lo)
            rows.append(np.full(len(idx), r))
            cols.append(np.asarray(idx, dtype=np.int64))
            vals.append(np.asarray(coef, dtype=np.float64))
            lo, hi = sense_bounds(sense, rhs)
            row_lo.append(lo)
            row_hi.append(hi)
            return r

        for c in model.linear:
            add_static(c.idx, c.coef, c.sense, c.rhs)
        for c in model.quadratic:
            idx = list(c.idx)
            coef = list(c.coef)
            rhs = c.rhs
            for i, j, q in zip(c.qi, c.qj, c.qcoef):
                i, j = int(i), int(j)
                if fixed[i] and fixed[j]:
                    rhs -= q * lb[i] * lb[j]
                elif fixed[i]:
                    idx.append(j)
                    coef.append(q * lb[i])
                elif fixed[j]:
                    idx.append(i)
                    coef.append(q * lb[j])
                else:
                    key = (min(i, j), max(i, j))
                    if key not in prod_index:
                        prod_index[key] = n + len(prod_index)
                    idx.append(prod_index[key])
                    coef.append(q)
            add_static(idx, coef, c.sense, rhs)
        self.num_static = len(row_lo)

        K = len(prod_index)
        self.products = np.array(list(prod_index.keys()), dtype=np.int64).reshape(K, 2)
        self.aux = np.arange(n, n + K, dtype=np.int64)
        # envelope rows: 4 per product, product k -> rows env_row[:, k]
        first = len(row_lo)
        self.env_rows = first + np.arange(4 * K).reshape(K, 4).T
        xl, xu = lb[self.products[:, 0]], ub[self.products[:, 0]]
        yl, yu = lb[self.products[:, 1]], ub[self.products[:, 1]]
        cx, cy, rhs = _envelope_arrays(xl, xu, yl, yu)
        self._env_sense = (">=", ">=", "<=", "<=")
        for k in range(K):
            i, j = self.products[k]
            for r in range(4):
                if i == j:
                    add_row([i, n + k], [cx[r, k] + cy[r, k], 1.0], self._env_sense[r], rhs[r, k])
                else:
                    add_row([i, j, n + k], [cx[r, k], cy[r, k], 1.0], self._env_sense[r], rhs[r, k])
        self.square = self.products[:, 0] == self.products[:, 1] if K else np.zeros(0, bool)

        # piecewise rows
        G = len(model.general)
        self.gen_y = np.array([g.y for g in model.general], dtype=np.int64)
        self.gen_x = np.array([g.x for g in model.general], dtype=np.int64)
        self.gen_abs = np.array([g.kind == "abs" for g in model.general], dtype=bool)
        self.sec_rows = np.zeros(G, dtype=np.int64)
        slope, icpt = _secant(self.gen_abs, lb[self.gen_x], ub[self.gen_x])
        for g in range(G):
            y, x = self.gen_y[g], self.gen_x[g]
            add_row([y, x], [1.0, -1.0], ">=", 0.0)
            if self.gen_abs[g]:
                add_row([y, x], [1.0, 1.0], ">=", 0.0)
            else:
                add_row([y], [1.0], ">=", 0.0)
            self.sec_rows[g] = add_row([y, x], [1.0, -slope[g]], "<=", icpt[g])

        c = np.zeros(n + K)
        np.add.at(c, model.obj_idx, model.obj_coef)
        alo, ahi = _corner_bounds(xl, xu, yl, yu)
        alo = np.where(self.square, np.where((xl <= 0) & (xu >= 0), 0.0, np.minimum(xl**2, xu**2)), alo)
        self.lp = LinearProgram(
            c=c,
            col_lo=np.concatenate([lb, alo]),
            col_hi=np.concatenate([ub, ahi]),
            row_lo=np.array(row_lo, dtype=np.float64),
            row_hi=np.array(row_hi, dtype=np.float64),
            rows=np.concatenate(rows) if rows else np.zeros(0, np.int64),
            cols=np.concatenate(cols) if cols else np.zeros(0, np.int64),
            vals=np.concatenate(vals) if vals else np.zeros(0),
        )
        self.obj_const = model.obj_const
        self.root_lb, self.root_ub = lb.copy(), ub.copy()
        self._state = None

    @property
    def num_products(self) -> int:
        return len(self.products)

    def bound_rows(self, lb, ub):
        """Bound-dependent entries for a node box.

        Returns ``(col_lo, col_hi, coeffs, rhs)``: full column bounds, a dict
        ``(row, col) -> value`` and a dict ``row -> (lo, hi)``.
        """
        n = self.n
        P = self.products
        xl, xu = lb[P[:, 0]], ub[P[:, 0]]
        yl, yu = lb[P[:, 1]], ub[P[:, 1]]
        cx, cy, rhs = _envelope_arrays(xl, xu, yl, yu)
        alo, ahi = _corner_bounds(xl, xu, yl, yu)
        alo = np.where(self.square, np.where((xl <= 0) & (xu >= 0), 0.0, np.minimum(xl**2, xu**2)), alo)
        col_lo = np.concatenate([lb, alo])
        col_hi = np.concatenate([ub, ahi])
        slope, icpt = _secant(self.gen_abs, lb[self.gen_x], ub[self.gen_x])
        return col_lo, col_hi, (cx, cy, rhs), (slope, icpt)

    def lp_for(self, lb, ub) -> LinearProgram:
        """Standalone LP for the node box (used with the dense simplex)."""
        col_lo, col_hi, (cx, cy, rhs), (slope, icpt) = self.bound_rows(lb, ub)
        vals = self.lp.vals.copy()
        row_lo, row_hi = self.lp.row_lo.copy(), self.lp.row_hi.copy()
        pos = self._positions()
        for k in range(self.num_products):
            for r in range(4):
                row = self.env_rows[r, k]
                if self.square[k]:
                    vals[pos[(row, self.products[k, 0])]] = cx[r, k] + cy[r, k]
                else:
                    vals[pos[(row, self.products[k, 0])]] = cx[r, k]
                    vals[pos[(row, self.products[k, 1])]] = cy[r, k]
                if r < 2:
                    row_lo[row] = rhs[r, k]
                else:
                    row_hi[row] = rhs[r, k]
        for g in range(len(self.gen_x)):
            row = self.sec_rows[g]
            vals[pos[(row, self.gen_x[g])]] = -slope[g]
            row_hi[row] = icpt[g]
        return LinearProgram(self.lp.c, col_lo, col_hi, row_lo, row_hi, self.lp.rows, self.lp.cols, vals)

    def _positions(self):
        if self._state is None:
            self._state = {(int(r), int(c)): k for k, (r, c) in enumerate(zip(self.lp.rows, self.lp.cols))}
        return self._state

    def product_violation(self, values) -> np.ndarray:
        """``|w - x*y|`` per lifted product."""
        v = np.asarray(values, dtype=np.float64)
        P = self.products
        return np.abs(v[self.aux] - v[P[:, 0]] * v[P[:, 1]])

    def general_violation(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        x = v[self.gen_x]
        target = np.where(self.gen_abs, np.abs(x), np.maximum(x, 0.0))
        return np.abs(v[self.gen_y] - target)


class HighsNodeLP:
    """Incremental node LP on top of :class:`~atnverify.solver.lp.HighsLP`."""

    def __init__(self, relax: Relaxation):
        from .lp import HighsLP

        self.relax = relax
        self.backend = HighsLP(relax.lp)
        self.cur_lo = relax.lp.col_lo.copy()
        self.cur_hi = relax.lp.col_hi.copy()
        K = relax.num_products
        self.cur_env = _envelope_arrays(
            relax.root_lb[relax.products[:, 0]], relax.root_ub[relax.products[:, 0]],
            relax.root_lb[relax.products[:, 1]], relax.root_ub[relax.products[:, 1]],
        ) if K else (np.zeros((4, 0)),) * 3
        self.cur_sec = _secant(relax.gen_abs, relax.root_lb[relax.gen_x], relax.root_ub[relax.gen_x])

    def solve(self, lb, ub):
        r = self.relax
        col_lo, col_hi, (cx, cy, rhs), (slope, icpt) = r.bound_rows(lb, ub)
        changed = np.nonzero((col_lo != self.cur_lo) | (col_hi != self.cur_hi))[0]
        self.backend.set_col_bounds(changed, col_lo[changed], col_hi[changed])
        self.cur_lo, self.cur_hi = col_lo, col_hi
        if r.num_products:
            ocx, ocy, orhs = self.cur_env
            diff = np.nonzero(np.any((cx != ocx) | (cy != ocy) | (rhs != orhs), axis=0))[0]
            P = r.products
            for k in diff:
                i, j = P[k]
                for q in range(4):
                    row = r.env_rows[q, k]
                    if i == j:
                        self.backend.set_coeff(row, i, cx[q, k] + cy[q, k])
                    else:
                        self.backend.set_coeff(row, i, cx[q, k])
                        self.backend.set_coeff(row, j, cy[q, k])
                    if q < 2:
                        self.backend.set_row_bounds(row, rhs[q, k], INF)
                    else:
                        self.backend.set_row_bounds(row, -INF, rhs[q, k])
            self.cur_env = (cx, cy, rhs)
        if len(r.gen_x):
            os_, oi = self.cur_sec
            diff = np.nonzero((slope != os_) | (icpt != oi))[0]
            for g in diff:
                row = r.sec_rows[g]
                self.backend.set_coeff(row, r.gen_x[g], -slope[g])
                self.backend.set_row_bounds(row, -INF, icpt[g])
            self.cur_sec = (slope, icpt)
        return self.backend.solve()
