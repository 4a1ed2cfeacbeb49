"""Mixed-integer quadratically constrained model container.

Constraints come in three families: linear rows ``a.v (<=|>=|=) rhs``,
quadratic rows whose quadratic part is a sum of bilinear terms
``c * v_i * v_j``, and general constraints ``y = max(x, 0)`` / ``y = |x|``.
The objective is linear. Every variable carries finite bounds.
"""

from __future__ import annotations

from collections import Counter
from typing import NamedTuple

import numpy as np

SENSES = ("<=", ">=", "=")
GENERAL_KINDS = ("max0", "abs")


class ModelError(ValueError):
    """Structural problem with a model (unknown variable, unboxed variable, ...)."""


class LinearConstraint(NamedTuple):
    name: str
    idx: np.ndarray
    coef: np.ndarray
    sense: str
    rhs: float


class QuadraticConstraint(NamedTuple):
    name: str
    idx: np.ndarray
    coef: np.ndarray
    qi: np.ndarray
    qj: np.ndarray
    qcoef: np.ndarray
    sense: str
    rhs: float


class GeneralConstraint(NamedTuple):
    name: str
    kind: str  # "max0": y = max(x, 0); "abs": y = |x|
    y: int
    x: int


def _as_terms(idx, coef):
    idx = np.asarray(idx, dtype=np.int64).ravel()
    coef = np.asarray(coef, dtype=np.float64).ravel()
    if idx.shape != coef.shape:
        raise ModelError("index and coefficient arrays differ in length")
    return idx, coef


class MiqcpModel:
    def __init__(self, name: str = "miqcp"):
        self.name = name
        self.var_names: list[str] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._binary: list[bool] = []
        self._name_index: dict[str, int] = {}
        self.linear: list[LinearConstraint] = []
        self.quadratic: list[QuadraticConstraint] = []
        self.general: list[GeneralConstraint] = []
        self.obj_idx = np.zeros(0, dtype=np.int64)
        self.obj_coef = np.zeros(0)
        self.obj_const = 0.0
        self.hint: np.ndarray | None = None
        self.priority: dict[int, int] = {}
        self.categories: Counter = Counter()
        # encoder metadata (how to rebuild an assignment from a forward pass)
        self.layout: list = []
        self.meta: dict = {}

    # -- variables ---------------------------------------------------------

    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    @property
    def lb(self) -> np.ndarray:
        return np.array(self._lb, dtype=np.float64)

    @property
    def ub(self) -> np.ndarray:
        return np.array(self._ub, dtype=np.float64)

    @property
    def binary(self) -> np.ndarray:
        return np.array(self._binary, dtype=bool)

    def add_var(self, name: str, lb: float, ub: float, binary: bool = False) -> int:
        if name in self._name_index:
            raise ModelError(f"duplicate variable name {name!r}")
        lb, ub = float(lb), float(ub)
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if not lb <= ub:
            raise ModelError(f"variable {name}: lb {lb} > ub {ub}")
        vid = len(self.var_names)
        self.var_names.append(name)
        self._lb.append(lb)
        self._ub.append(ub)
        self._binary.append(binary)
        self._name_index[name] = vid
        return vid

    def add_vars(self, prefix: str, lo, hi, binary: bool = False) -> np.ndarray:
        """Array of new variables shaped like ``lo``; names are ``prefix_i_j``."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), lo.shape)
        ids = np.empty(lo.shape, dtype=np.int64)
        for index in np.ndindex(lo.shape):
            suffix = "_".join(str(i) for i in index)
            ids[index] = self.add_var(f"{prefix}_{suffix}" if suffix else prefix, lo[index], hi[index], binary)
        return ids

    def var(self, name: str) -> int:
        return self._name_index[name]

    def set_bounds(self, vid: int, lb: float, ub: float) -> None:
        if not lb <= ub:
            raise ModelError(f"variable {self.var_names[vid]}: lb {lb} > ub {ub}")
        self._lb[vid], self._ub[vid] = float(lb), float(ub)

    def fix(self, vid: int, value: float) -> None:
        self.set_bounds(vid, value, value)

    # -- constraints -------------------------------------------------------

    def _check(self, idx: np.ndarray) -> None:
        if idx.size and (idx.min() < 0 or idx.max() >= self.num_vars):
            raise ModelError("constraint references an unknown variable")

    def _check_sense(self, sense: str) -> None:
        if sense not in SENSES:
            raise ModelError(f"unknown sense {sense!r}")

    def add_linear(self, idx, coef, sense: str, rhs: float, name: str | None = None, category: str = "linear") -> int:
        idx, coef = _as_terms(idx, coef)
        self._check(idx)
        self._check_sense(sense)
        name = name or f"c{len(self.linear)}"
        self.linear.append(LinearConstraint(name, idx, coef, sense, float(rhs)))
        self.categories[category] += 1
        return len(self.linear) - 1

    def add_quadratic(self, idx, coef, qi, qj, qcoef, sense: str, rhs: float, name: str | None = None, category: str = "quadratic") -> int:
        idx, coef = _as_terms(idx, coef)
        qi = np.asarray(qi, dtype=np.int64).ravel()
        qj = np.asarray(qj, dtype=np.int64).ravel()
        qcoef = np.asarray(qcoef, dtype=np.float64).ravel()
        if not qi.shape == qj.shape == qcoef.shape:
            raise ModelError("bilinear term arrays differ in length")
        for arr in (idx, qi, qj):
            self._check(arr)
        self._check_sense(sense)
        name = name or f"qc{len(self.quadratic)}"
        self.quadratic.append(QuadraticConstraint(name, idx, coef, qi, qj, qcoef, sense, float(rhs)))
        self.categories[category] += 1
        return len(self.quadratic) - 1

    def add_bilinear(self, k: int, i: int, j: int, name: str | None = None) -> int:
        """``v_k = v_i * v_j``."""
        return self.add_quadratic([k], [1.0], [i], [j], [-1.0], "=", 0.0, name=name, category="bilinear")

    def add_general(self, kind: str, y: int, x: int, name: str | None = None, category: str | None = None) -> int:
        if kind not in GENERAL_KINDS:
            raise ModelError(f"unknown general constraint kind {kind!r}")
        self._check(np.array([y, x]))
        name = name or f"gc{len(self.general)}"
        self.general.append(GeneralConstraint(name, kind, int(y), int(x)))
        self.categories[category or kind] += 1
        return len(self.general) - 1

    def set_objective(self, idx, coef, const: float = 0.0) -> None:
        idx, coef = _as_terms(idx, coef)
        self._check(idx)
        self.obj_idx, self.obj_coef, self.obj_const = idx, coef, float(const)

    # -- evaluation --------------------------------------------------------

    def objective_value(self, values) -> float:
        values = np.asarray(values, dtype=np.float64)
        return float(values[self.obj_idx] @ self.obj_coef + self.obj_const)

    def _compiled(self):
        key = (len(self.linear), len(self.quadratic), len(self.general))
        if getattr(self, "_cache_key", None) == key:
            return self._cache
        def rows(cons, quad):
            r = [np.full(len(c.idx), k) for k, c in enumerate(cons)]
            lin = (
                np.concatenate(r) if r else np.zeros(0, np.int64),
                np.concatenate([c.idx for c in cons]) if cons else np.zeros(0, np.int64),
                np.concatenate([c.coef for c in cons]) if cons else np.zeros(0),
            )
            sense = np.array([SENSES.index(c.sense) for c in cons], dtype=np.int64)
            rhs = np.array([c.rhs for c in cons], dtype=np.float64)
            q = None
            if quad:
                rq = [np.full(len(c.qi), k) for k, c in enumerate(cons)]
                q = (
                    np.concatenate(rq) if rq else np.zeros(0, np.int64),
                    np.concatenate([c.qi for c in cons]) if cons else np.zeros(0, np.int64),
                    np.concatenate([c.qj for c in cons]) if cons else np.zeros(0, np.int64),
                    np.concatenate([c.qcoef for c in cons]) if cons else np.zeros(0),
                )
            return lin, q, sense, rhs
        gen = (
            np.array([g.y for g in self.general], dtype=np.int64),
            np.array([g.x for g in self.general], dtype=np.int64),
            np.array([g.kind == "abs" for g in self.general], dtype=bool),
        )
        self._cache = (rows(self.linear, False), rows(self.quadratic, True), gen)
        self._cache_key = key
        return self._cache

    def activities(self, values):
        """Row activities ``(linear, quadratic)`` at an assignment."""
        v = np.asarray(values, dtype=np.float64)
        (lin, _, _, _), (qlin, q, _, _), _ = self._compiled()
        act_l = np.bincount(lin[0], weights=lin[2] * v[lin[1]], minlength=len(self.linear))
        act_q = np.bincount(qlin[0], weights=qlin[2] * v[qlin[1]], minlength=len(self.quadratic))
        if q is not None and len(q[0]):
            act_q += np.bincount(q[0], weights=q[3] * v[q[1]] * v[q[2]], minlength=len(self.quadratic))
        return act_l, act_q

    def violations(self, values) -> dict[str, float]:
        """Largest violation per constraint family (0 when satisfied)."""
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (self.num_vars,):
            raise ModelError(f"assignment has {v.size} entries, model has {self.num_vars} variables")
        lb, ub = self.lb, self.ub
        out = {
            "bounds": float(max(0.0, np.max(lb - v, initial=0.0), np.max(v - ub, initial=0.0))),
            "integrality": float(np.max(np.abs(v[self.binary] - np.round(v[self.binary])), initial=0.0)),
        }
        (_, _, sl, rl), (_, _, sq, rq), (gy, gx, gabs) = self._compiled()
        act_l, act_q = self.activities(v)
        out["linear"] = _sense_violations(act_l, sl, rl)
        out["quadratic"] = _sense_violations(act_q, sq, rq)
        target = np.where(gabs, np.abs(v[gx]), np.maximum(v[gx], 0.0))
        out["general"] = float(np.max(np.abs(v[gy] - target), initial=0.0))
        return out

    def max_violation(self, values) -> float:
        return max(self.violations(values).values())

    def is_feasible(self, values, tol: float = 1e-6) -> bool:
        return self.max_violation(values) <= tol

    def stats(self) -> dict:
        binary = int(np.sum(self._binary))
        return {
            "variables": self.num_vars,
            "binary": binary,
            "continuous": self.num_vars - binary,
            "linear": len(self.linear),
            "quadratic": len(self.quadratic),
            "bilinear_terms": int(sum(len(c.qi) for c in self.quadratic)),
            "general": len(self.general),
            "by_category": dict(sorted(self.categories.items())),
        }


def _sense_violations(act: np.ndarray, sense: np.ndarray, rhs: np.ndarray) -> float:
    gap = act - rhs
    viol = np.where(sense == 0, np.maximum(gap, 0.0), np.where(sense == 1, np.maximum(-gap, 0.0), np.abs(gap)))
    return float(np.max(viol, initial=0.0))


def _sense_violation(act: float, sense: str, rhs: float) -> float:
    if sense == "<=":
        return max(0.0, act - rhs)
    if sense == ">=":
        return max(0.0, rhs - act)
    return abs(act - rhs)
