"""Branch-and-bound over the lifted LP relaxation.

Nodes are boxes over the model variables. A node LP is pruned when it is
infeasible or its bound cannot improve the incumbent. Otherwise the node is
split on a fractional binary (priority, then most fractional, then lowest
id), on the argument of a violated ``max``/``abs`` constraint (at 0), or
spatially on a factor of the worst violated product.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..model import MiqcpModel, ModelError
from .lp import solve_lp
from .propagate import INFEASIBLE, Propagator
from .relaxation import HighsNodeLP, Relaxation


class SolverConfigError(ValueError):
    """Invalid solver options."""


@dataclass
class SolveOptions:
    time_limit: float = 60.0
    gap_tol: float = 1e-4
    abs_tol: float = 1e-6
    feas_tol: float = 1e-6
    int_tol: float = 1e-6
    hint: np.ndarray | None = None
    priorities: dict[int, int] | None = None
    threads: int = 1
    seed: int = 0
    node_limit: int | None = None
    open_cap: int = 20000
    lp_method: str = "highs"
    heuristic: Callable | None = None  # values -> full assignment or None
    node_log: bool = False
    min_width: float = 1e-9
    propagate: bool = True

    def __post_init__(self):
        if not (self.time_limit > 0):
            raise SolverConfigError(f"time_limit must be positive, got {self.time_limit}")
        if self.gap_tol < 0 or self.abs_tol < 0:
            raise SolverConfigError("tolerances must be non-negative")
        if self.lp_method not in ("highs", "simplex"):
            raise SolverConfigError(f"unknown lp_method {self.lp_method!r}")


@dataclass
class SolveOutcome:
    status: str  # "optimal" | "timeout" | "infeasible"
    solution_count: int = 0
    objective: float = math.inf
    x: np.ndarray | None = None
    gap: float = math.inf
    bound: float = -math.inf
    nodes: int = 0
    elapsed: float = 0.0
    lp_iterations: int = 0
    unresolved: int = 0
    log: list = field(default_factory=list)

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["node", "depth", "bound", "incumbent", "gap", "time"])
        w.writerows(self.log)
        return buf.getvalue()


@dataclass
class Branch:
    kind: str  # "binary" | "piecewise" | "spatial"
    var: int
    value: float
    down: tuple[np.ndarray, np.ndarray]
    up: tuple[np.ndarray, np.ndarray]


def relative_gap(obj: float, bound: float) -> float:
    if not math.isfinite(obj):
        return math.inf
    return max(0.0, (obj - bound) / max(abs(obj), 1e-9))


def _split(lb, ub, var, down_hi, up_lo):
    dl, du = lb.copy(), ub.copy()
    du[var] = down_hi
    ul, uu = lb.copy(), ub.copy()
    ul[var] = up_lo
    return (dl, du), (ul, uu)


def branch(relax: Relaxation, values, lb, ub, priorities=None, int_tol: float = 1e-6, min_width: float = 1e-9) -> Branch | None:
    """Pick the branching decision at a solved node, or ``None`` when nothing
    is left to split (integral, piecewise and products satisfied or unsplittable)."""
    model = relax.model
    v = np.asarray(values, dtype=np.float64)
    n = relax.n
    binary = model.binary
    free = binary & (lb[:n] < ub[:n])
    frac = np.abs(v[:n] - np.round(v[:n]))
    cand = np.nonzero(free & (frac > int_tol))[0]
    if len(cand):
        pr = priorities or {}
        best = min(cand, key=lambda i: (-pr.get(int(i), 0), -frac[i], int(i)))
        down, up = _split(lb, ub, best, 0.0, 1.0)
        return Branch("binary", int(best), float(v[best]), down, up)

    gviol = relax.general_violation(v)
    if len(gviol):
        for g in np.argsort(-gviol, kind="stable"):
            if gviol[g] <= 1e-9:
                break
            x = relax.gen_x[g]
            if lb[x] < 0.0 < ub[x]:
                down, up = _split(lb, ub, x, 0.0, 0.0)
                return Branch("piecewise", int(x), float(v[x]), down, up)

    if relax.num_products:
        pviol = relax.product_violation(v)
        for k in np.argsort(-pviol, kind="stable"):
            if pviol[k] <= 0.0:
                break
            i, j = relax.products[k]
            wi, wj = ub[i] - lb[i], ub[j] - lb[j]
            for var, w in sorted(((int(i), wi), (int(j), wj)), key=lambda t: -t[1]):
                if model.binary[var] or w <= min_width * max(1.0, abs(v[var])):
                    continue
                at = float(np.clip(v[var], lb[var] + 0.2 * w, ub[var] - 0.2 * w))
                down, up = _split(lb, ub, var, at, at)
                return Branch("spatial", var, at, down, up)
    return None


class _Incumbent:
    def __init__(self, model: MiqcpModel, feas_tol: float):
        self.model = model
        self.tol = feas_tol
        self.obj = math.inf
        self.x = None
        self.count = 0

    def offer(self, values) -> bool:
        if values is None:
            return False
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.model.num_vars,) or not np.all(np.isfinite(values)):
            return False
        if self.model.max_violation(values) > self.tol:
            return False
        obj = self.model.objective_value(values)
        if obj < self.obj - 1e-12:
            self.obj, self.x = obj, values.copy()
            self.count += 1
            return True
        return False


def solve(model: MiqcpModel, opts: SolveOptions | None = None) -> SolveOutcome:
    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    n = model.num_vars
    if np.any(~np.isfinite(model.lb)) or np.any(~np.isfinite(model.ub)):
        raise ModelError("all variables need finite bounds")
    prop = Propagator(model) if opts.propagate else None
    root = (model.lb, model.ub)
    if prop is not None:
        root = prop.run(*root)
    inc = _Incumbent(model, opts.feas_tol)
    if opts.hint is not None:
        inc.offer(opts.hint)
    if root is INFEASIBLE:
        return _finish(SolveOutcome("infeasible"), inc, [], t0, False, -math.inf)
    relax = Relaxation(model, *root)
    if relax.root_infeasible:
        return _finish(SolveOutcome("infeasible"), inc, [], t0, False, -math.inf)
    node_lp = HighsNodeLP(relax) if opts.lp_method == "highs" else None
    out = SolveOutcome("infeasible")
    priorities = opts.priorities if opts.priorities is not None else {}

    def cutoff() -> float:
        if not math.isfinite(inc.obj):
            return math.inf
        return inc.obj - max(opts.abs_tol, opts.gap_tol * abs(inc.obj))

    def lp_solve(lb, ub):
        if node_lp is not None:
            res = node_lp.solve(lb, ub)
            if res.status in ("optimal", "infeasible"):
                return res
        return solve_lp(relax.lp_for(lb, ub), method="simplex")

    counter = 0
    open_heap: list = []  # (bound, -depth, id, lb, ub)
    stack: list = []
    dfs = False
    heapq.heappush(open_heap, (-math.inf, 0, counter, relax.root_lb, relax.root_ub))
    best_bound = -math.inf
    pruned_min = math.inf  # smallest bound among nodes fathomed by the cutoff
    timed_out = False

    def open_min() -> float:
        vals = [e[0] for e in open_heap] + [e[0] for e in stack]
        return min(vals + [pruned_min]) if vals else pruned_min

    while open_heap or stack:
        elapsed = time.perf_counter() - t0
        if elapsed > opts.time_limit or (opts.node_limit is not None and out.nodes >= opts.node_limit):
            timed_out = True
            break
        if dfs:
            bound, negdepth, nid, lb, ub = stack.pop()
            if len(stack) < opts.open_cap // 2:
                open_heap.extend(stack)
                stack = []
                heapq.heapify(open_heap)
                dfs = False
        else:
            bound, negdepth, nid, lb, ub = heapq.heappop(open_heap)
        if bound >= cutoff():
            pruned_min = min(pruned_min, bound)
            continue
        out.nodes += 1
        depth = -negdepth
        if prop is not None and out.nodes > 1:
            tight = prop.run(lb, ub)
            if tight is INFEASIBLE:
                continue
            lb, ub = tight
        res = lp_solve(lb, ub)
        out.lp_iterations += res.iterations
        if res.status == "optimal":
            node_bound = max(bound, res.objective + relax.obj_const)
        elif res.status == "infeasible":
            node_bound = math.inf
        else:
            node_bound = bound
        if opts.node_log:
            best_bound = max(best_bound, min(node_bound, open_min(), inc.obj))
            out.log.append([nid, depth, best_bound, inc.obj, relative_gap(inc.obj, best_bound), round(time.perf_counter() - t0, 6)])
        if res.status == "infeasible":
            continue
        if node_bound >= cutoff():
            pruned_min = min(pruned_min, node_bound)
            continue
        if res.status != "optimal":
            out.unresolved += 1
            continue
        values = res.x
        if opts.heuristic is not None:
            try:
                inc.offer(opts.heuristic(values[:n].copy()))
            except Exception:  # a failing heuristic must never stop the search
                pass
            if node_bound >= cutoff():
                pruned_min = min(pruned_min, node_bound)
                continue
        snapped = values[:n].copy()
        bmask = model.binary
        snapped[bmask] = np.round(snapped[bmask])
        inc.offer(snapped)
        slack = max(opts.abs_tol, opts.gap_tol * abs(node_bound))
        if model.objective_value(snapped) <= node_bound + slack and model.max_violation(snapped) <= opts.feas_tol:
            # the (rounded) LP optimum is feasible and attains the node bound: node solved
            continue
        br = branch(relax, values, lb, ub, priorities, opts.int_tol, opts.min_width)
        if br is None:
            out.unresolved += 1
            continue
        for child_lb, child_ub in (br.down, br.up):
            counter += 1
            entry = (node_bound, -(depth + 1), counter, child_lb, child_ub)
            if dfs:
                stack.append(entry)
            else:
                heapq.heappush(open_heap, entry)
        if not dfs and len(open_heap) > opts.open_cap:
            stack = sorted(open_heap, key=lambda e: (-e[0], e[1], e[2]))
            open_heap = []
            dfs = True

    return _finish(out, inc, [e[0] for e in open_heap] + [e[0] for e in stack] + [pruned_min], t0, timed_out, best_bound)


def _finish(out: SolveOutcome, inc: _Incumbent, open_bounds, t0, timed_out, best_bound) -> SolveOutcome:
    final_bound = min(open_bounds + [inc.obj])
    if timed_out:
        out.status = "timeout"
    else:
        out.status = "optimal" if math.isfinite(inc.obj) else "infeasible"
    out.elapsed = time.perf_counter() - t0
    out.bound = max(best_bound, final_bound) if math.isfinite(final_bound) else final_bound
    out.solution_count = inc.count
    if math.isfinite(inc.obj):
        out.objective = inc.obj
        out.x = inc.x
        out.gap = relative_gap(inc.obj, out.bound)
    return out
