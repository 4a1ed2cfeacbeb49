"""Domain propagation: tighten a box using every constraint row.

Each row is a sum of terms, a term being ``a * v_i`` or ``a * v_i * v_j``.
Interval activity bounds give, per term, the range it must lie in for the
row to be satisfiable; single-variable terms then bound their variable and
product terms bound a factor whenever the other factor excludes zero. The
``max``/``abs`` constraints are propagated in both directions. Derived
bounds are relaxed by a small tolerance so rounding never cuts off feasible
points.
"""

from __future__ import annotations

import numpy as np

from ..model import SENSES, MiqcpModel

INFEASIBLE = "infeasible"


class Propagator:
    def __init__(self, model: MiqcpModel, tol: float = 1e-9, max_rounds: int = 20):
        self.model = model
        self.tol = tol
        self.max_rounds = max_rounds
        rows, coef, vi, vj = [], [], [], []
        lo, hi = [], []
        r = 0
        for c in model.linear:
            rows.append(np.full(len(c.idx), r))
            coef.append(c.coef)
            vi.append(c.idx)
            vj.append(np.full(len(c.idx), -1))
            a, b = _range(c.sense, c.rhs)
            lo.append(a)
            hi.append(b)
            r += 1
        for c in model.quadratic:
            k = len(c.idx) + len(c.qi)
            rows.append(np.full(k, r))
            coef.append(np.concatenate([c.coef, c.qcoef]))
            vi.append(np.concatenate([c.idx, c.qi]))
            vj.append(np.concatenate([np.full(len(c.idx), -1), c.qj]))
            a, b = _range(c.sense, c.rhs)
            lo.append(a)
            hi.append(b)
            r += 1
        cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)
        self.row = cat(rows, np.int64)
        self.coef = cat(coef, np.float64)
        self.vi = cat(vi, np.int64)
        self.vj = cat(vj, np.int64)
        self.row_lo = np.array(lo, dtype=np.float64)
        self.row_hi = np.array(hi, dtype=np.float64)
        self.nrows = r
        self.single = self.vj < 0
        self.square = (~self.single) & (self.vi == self.vj)
        self.vj_safe = np.where(self.single, 0, self.vj)
        self.gy = np.array([g.y for g in model.general], dtype=np.int64)
        self.gx = np.array([g.x for g in model.general], dtype=np.int64)
        self.gabs = np.array([g.kind == "abs" for g in model.general], dtype=bool)
        self.binary = model.binary

    def _term_bounds(self, lb, ub):
        a = self.coef
        xl, xu = lb[self.vi], ub[self.vi]
        yl = np.where(self.single, 1.0, lb[self.vj_safe])
        yu = np.where(self.single, 1.0, ub[self.vj_safe])
        c = np.stack([xl * yl, xl * yu, xu * yl, xu * yu])
        plo, phi = c.min(axis=0), c.max(axis=0)
        sq = self.square
        if sq.any():
            straddle = (xl <= 0) & (xu >= 0)
            plo = np.where(sq, np.where(straddle, 0.0, np.minimum(xl**2, xu**2)), plo)
            phi = np.where(sq, np.maximum(xl**2, xu**2), phi)
        tlo = np.where(a >= 0, a * plo, a * phi)
        thi = np.where(a >= 0, a * phi, a * plo)
        return plo, phi, tlo, thi

    def run(self, lb, ub):
        """Tightened copies of ``(lb, ub)``, or ``INFEASIBLE``."""
        lb = np.array(lb, dtype=np.float64)
        ub = np.array(ub, dtype=np.float64)
        for _ in range(self.max_rounds):
            changed = self._round(lb, ub)
            if changed is None:
                return INFEASIBLE
            if not changed:
                break
        return lb, ub

    def _round(self, lb, ub):
        tol = self.tol
        changed = False
        if len(self.row):
            plo, phi, tlo, thi = self._term_bounds(lb, ub)
            amin = np.bincount(self.row, weights=tlo, minlength=self.nrows)
            amax = np.bincount(self.row, weights=thi, minlength=self.nrows)
            slack = tol * (1.0 + np.abs(amin) + np.abs(amax))
            if np.any(amin > self.row_hi + slack + 1e-7) or np.any(amax < self.row_lo - slack - 1e-7):
                return None
            # range each term must lie in
            r = self.row
            need_hi = self.row_hi[r] - (amin[r] - tlo)
            need_lo = self.row_lo[r] - (amax[r] - thi)
            a = self.coef
            nz = a != 0
            safe_a = np.where(nz, a, 1.0)
            # range of the (unscaled) variable or product
            v_lo = np.where(a > 0, need_lo / safe_a, need_hi / safe_a)
            v_hi = np.where(a > 0, need_hi / safe_a, need_lo / safe_a)
            pad = tol * (1.0 + np.abs(v_lo).clip(max=1e12) + np.abs(v_hi).clip(max=1e12)) + 1e-12
            v_lo = np.where(nz, v_lo - pad, -np.inf)
            v_hi = np.where(nz, v_hi + pad, np.inf)
            new_lb = lb.copy()
            new_ub = ub.copy()
            s = self.single & nz
            np.maximum.at(new_lb, self.vi[s], v_lo[s])
            np.minimum.at(new_ub, self.vi[s], v_hi[s])
            # products: divide by the other factor when it excludes zero
            q = (~self.single) & nz & ~self.square
            if q.any():
                for fa, fb in ((self.vi, self.vj_safe), (self.vj_safe, self.vi)):
                    ol, ou = lb[fb[q]], ub[fb[q]]
                    ok = (ol > 1e-9) | (ou < -1e-9)
                    if not ok.any():
                        continue
                    pl, ph = v_lo[q][ok], v_hi[q][ok]
                    dl, du = ol[ok], ou[ok]
                    finite = np.isfinite(pl) & np.isfinite(ph)
                    pl, ph, dl, du = pl[finite], ph[finite], dl[finite], du[finite]
                    c = np.stack([pl / dl, pl / du, ph / dl, ph / du])
                    tgt = fa[q][ok][finite]
                    lo_, hi_ = c.min(axis=0), c.max(axis=0)
                    pad = tol * (1.0 + np.abs(lo_) + np.abs(hi_))
                    np.maximum.at(new_lb, tgt, lo_ - pad)
                    np.minimum.at(new_ub, tgt, hi_ + pad)
            sq = self.square & nz
            if sq.any():
                top = v_hi[sq]
                fin = np.isfinite(top) & (top >= 0)
                rad = np.sqrt(np.maximum(top[fin], 0.0)) * (1 + tol) + tol
                np.maximum.at(new_lb, self.vi[sq][fin], -rad)
                np.minimum.at(new_ub, self.vi[sq][fin], rad)
            res = self._commit(lb, ub, new_lb, new_ub)
            if res is None:
                return None
            changed |= res
        if len(self.gx):
            res = self._general(lb, ub)
            if res is None:
                return None
            changed |= res
        return changed

    def _general(self, lb, ub):
        new_lb, new_ub = lb.copy(), ub.copy()
        x, y = self.gx, self.gy
        xl, xu, yl, yu = lb[x], ub[x], lb[y], ub[y]
        absk = self.gabs
        # forward: y from x
        f_lo = np.where(absk, np.where((xl <= 0) & (xu >= 0), 0.0, np.minimum(np.abs(xl), np.abs(xu))), np.maximum(xl, 0.0))
        f_hi = np.where(absk, np.maximum(np.abs(xl), np.abs(xu)), np.maximum(xu, 0.0))
        np.maximum.at(new_lb, y, f_lo - self.tol)
        np.minimum.at(new_ub, y, f_hi + self.tol)
        # backward: x from y
        b_hi = yu + self.tol  # x <= y (max) and |x| <= y (abs)
        b_lo = np.where(absk, -yu - self.tol, -np.inf)
        # max(x,0) = y with y > 0 forces x = y
        pos = (~absk) & (yl > self.tol)
        b_lo = np.where(pos, yl - self.tol, b_lo)
        # |x| = y with y > 0 and one sign excluded
        a_pos = absk & (yl > self.tol) & (xl > -yl)
        a_neg = absk & (yl > self.tol) & (xu < yl)
        b_lo = np.where(a_pos, yl - self.tol, b_lo)
        b_hi = np.where(a_neg, -yl + self.tol, b_hi)
        np.maximum.at(new_lb, x, b_lo)
        np.minimum.at(new_ub, x, b_hi)
        return self._commit(lb, ub, new_lb, new_ub)

    def _commit(self, lb, ub, new_lb, new_ub):
        b = self.binary
        new_lb[b] = np.ceil(new_lb[b] - 1e-6)
        new_ub[b] = np.floor(new_ub[b] + 1e-6)
        # keep only meaningful improvements
        width = ub - lb
        min_gain = 1e-6 * np.clip(width, 1e-3, 1e6)
        up = new_lb > lb + min_gain
        down = new_ub < ub - min_gain
        if np.any((np.where(up, new_lb, lb) > np.where(down, new_ub, ub) + 1e-7)):
            return None
        lb[up] = new_lb[up]
        ub[down] = new_ub[down]
        # tiny crossings from padding: collapse to a point
        cross = lb > ub
        if cross.any():
            mid = 0.5 * (lb[cross] + ub[cross])
            lb[cross] = mid
            ub[cross] = mid
        return bool(up.any() or down.any())


def _range(sense: str, rhs: float):
    if sense not in SENSES:
        raise ValueError(sense)
    return (rhs if sense in (">=", "=") else -np.inf, rhs if sense in ("<=", "=") else np.inf)
