import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog, minimize_scalar

from atnverify.model import MiqcpModel, ModelError
from atnverify.solver import (
    LinearProgram,
    Relaxation,
    SolveOptions,
    SolverConfigError,
    branch,
    mccormick,
    relative_gap,
    solve,
    solve_lp,
)


def lp_from_dense(c, A, row_lo, row_hi, col_lo, col_hi):
    A = np.asarray(A, dtype=np.float64)
    r, k = np.nonzero(A)
    return LinearProgram(
        np.asarray(c, float), np.asarray(col_lo, float), np.asarray(col_hi, float),
        np.asarray(row_lo, float), np.asarray(row_hi, float), r, k, A[r, k],
    )


# -- LP ------------------------------------------------------------------------------


@pytest.mark.parametrize("method", ["simplex", "highs"])
def test_lp_examples(method):
    lp = lp_from_dense([1, 1], [[1, 1]], [1], [math.inf], [0, 0], [1, 1])
    res = solve_lp(lp, method)
    assert res.status == "optimal" and res.objective == pytest.approx(1.0)
    bad = lp_from_dense([1], [[1]], [2], [math.inf], [0], [1])
    assert solve_lp(bad, method).status == "infeasible"


def test_lp_requires_finite_bounds():
    lp = lp_from_dense([1], [[1]], [0], [1], [0], [math.inf])
    with pytest.raises(ValueError):
        solve_lp(lp, "simplex")


def test_degenerate_lp_terminates():
    # vertex (0, 0) is shared by three redundant constraints plus the bounds
    A = [[1, 1], [2, 2], [1, 2], [-1, 1]]
    lp = lp_from_dense([-1, -1], A, [-math.inf] * 4, [0, 0, 0, 0], [0, 0], [1, 1])
    res = solve_lp(lp, "simplex", max_iter=1000)
    assert res.status == "optimal" and res.objective == pytest.approx(0.0)


def test_beale_cycling_example_terminates():
    # classic instance on which textbook Dantzig pricing without anti-cycling loops
    c = [-0.75, 150, -0.02, 6]
    A = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    lp = lp_from_dense(c, A, [-math.inf] * 3, [0, 0, 1], [0] * 4, [10] * 4)
    res = solve_lp(lp, "simplex", max_iter=5000)
    ref = linprog(c, A_ub=A, b_ub=[0, 0, 1], bounds=[(0, 10)] * 4, method="highs")
    assert res.status == "optimal"
    assert res.objective == pytest.approx(ref.fun, abs=1e-8)


def test_lp_random_matches_reference():
    rng = np.random.default_rng(0)
    for t in range(40):
        m, n = rng.integers(2, 8), rng.integers(2, 8)
        A = rng.normal(size=(m, n)) * (rng.random((m, n)) < 0.7)
        x0 = rng.uniform(-1, 1, n)
        act = A @ x0
        row_lo = np.where(rng.random(m) < 0.5, act - rng.random(m), -math.inf)
        row_hi = np.where(rng.random(m) < 0.5, act + rng.random(m), math.inf)
        c = rng.normal(size=n)
        lp = lp_from_dense(c, A, row_lo, row_hi, -2 * np.ones(n), 2 * np.ones(n))
        ub_rows = [(A[i], row_hi[i]) for i in range(m) if np.isfinite(row_hi[i])]
        ub_rows += [(-A[i], -row_lo[i]) for i in range(m) if np.isfinite(row_lo[i])]
        ref = linprog(
            c, A_ub=np.array([r for r, _ in ub_rows]) if ub_rows else None,
            b_ub=np.array([b for _, b in ub_rows]) if ub_rows else None,
            bounds=[(-2, 2)] * n, method="highs",
        )
        for method in ("simplex", "highs"):
            res = solve_lp(lp, method)
            assert res.status == "optimal"
            assert res.objective == pytest.approx(ref.fun, abs=1e-7)
            assert lp.residual(res.x) <= 1e-8


# -- McCormick -----------------------------------------------------------------------


def _envelope_ok(rows, x, y, w, tol=1e-12):
    ok = np.ones_like(x, dtype=bool)
    for cx, cy, cw, sense, rhs in rows:
        act = cx * x + cy * y + cw * w
        ok &= act >= rhs - tol if sense == ">=" else act <= rhs + tol
    return ok


def test_mccormick_example():
    rows = mccormick((0, 1), (0, 2))
    rng = np.random.default_rng(0)
    x, y = rng.uniform(0, 1, 10000), rng.uniform(0, 2, 10000)
    assert np.all(_envelope_ok(rows, x, y, x * y))
    # the four rows are w >= 0, w >= 2x + y - 2, w <= 2x, w <= y
    pts = [(0.5, 1.0)]
    for xv, yv in pts:
        allowed = np.linspace(-1, 3, 4001)
        good = allowed[_envelope_ok(rows, np.full(4001, xv), np.full(4001, yv), allowed)]
        want_lo = max(0.0, 2 * xv + yv - 2)
        want_hi = min(2 * xv, yv)
        assert good.min() == pytest.approx(want_lo, abs=1e-3) and good.max() == pytest.approx(want_hi, abs=1e-3)


def test_mccormick_degenerate_is_exact():
    rows = mccormick((0.3, 0.3), (-1, 2))
    y = np.linspace(-1, 2, 301)
    assert np.all(_envelope_ok(rows, np.full_like(y, 0.3), y, 0.3 * y))
    assert not np.any(_envelope_ok(rows, np.full_like(y, 0.3), y, 0.3 * y + 1e-6))
    assert not np.any(_envelope_ok(rows, np.full_like(y, 0.3), y, 0.3 * y - 1e-6))


def test_mccormick_symmetric():
    rng = np.random.default_rng(1)
    a, b = mccormick((-1, 2), (0.5, 3)), mccormick((0.5, 3), (-1, 2))
    x, y, w = rng.uniform(-1, 2, 5000), rng.uniform(0.5, 3, 5000), rng.uniform(-3, 6, 5000)
    np.testing.assert_array_equal(_envelope_ok(a, x, y, w), _envelope_ok(b, y, x, w))


# -- branching ---------------------------------------------------------------------------


def test_branch_priority_and_spatial_rules():
    m = MiqcpModel()
    b1 = m.add_var("b1", 0, 1, binary=True)
    b2 = m.add_var("b2", 0, 1, binary=True)
    x = m.add_var("x", 0, 2)
    y = m.add_var("y", 0, 1)
    w = m.add_var("w", 0, 2)
    m.add_bilinear(w, x, y)
    relax = Relaxation(m)
    lb, ub = relax.root_lb, relax.root_ub
    v = np.zeros(relax.lp.shape[1])
    v[[b1, b2]] = 0.5, 0.4
    br = branch(relax, v, lb, ub, priorities={b1: 1, b2: 5})
    assert br.kind == "binary" and br.var == b2
    # integral binaries, w - x*y = 0.3 at x* = 0.8: split x (the wider factor) at 0.8
    v[[b1, b2]] = 0, 1
    v[x], v[y] = 0.8, 0.5
    v[relax.aux[0]] = 0.7
    br = branch(relax, v, lb, ub)
    assert br.kind == "spatial" and br.var == x and br.value == pytest.approx(0.8)
    assert br.down[1][x] == br.up[0][x] == pytest.approx(0.8)
    # satisfied product: nothing to branch on
    v[relax.aux[0]] = 0.4
    assert branch(relax, v, lb, ub) is None


def test_branch_clamps_split_point():
    m = MiqcpModel()
    x = m.add_var("x", 0, 1)
    y = m.add_var("y", 0, 0.5)
    w = m.add_var("w", 0, 1)
    m.add_bilinear(w, x, y)
    relax = Relaxation(m)
    v = np.zeros(relax.lp.shape[1])
    v[x], v[y] = 0.01, 0.3
    v[relax.aux[0]] = 0.2
    br = branch(relax, v, relax.root_lb, relax.root_ub)
    assert br.var == x and br.value == pytest.approx(0.2)


# -- branch and bound --------------------------------------------------------------------


def test_solve_binary_example():
    m = MiqcpModel()
    x = m.add_var("x", 0, 1)
    b = m.add_var("b", 0, 1, binary=True)
    m.add_linear([x, b], [1, 1], ">=", 1)
    m.add_linear([x, b], [1, -0.7], ">=", 0)
    m.set_objective([x], [1.0])
    out = solve(m)
    assert out.status == "optimal" and out.objective == pytest.approx(0.7)
    assert out.x[b] == 1 and out.gap <= 1e-4


def test_solve_bilinear_example():
    m = MiqcpModel()
    x = m.add_var("x", 1, 2)
    y = m.add_var("y", 1, 2)
    w = m.add_var("w", 1, 4)
    m.add_bilinear(w, x, y)
    m.add_linear([x, y], [1, 1], "=", 3)
    m.set_objective([w], [1.0])
    out = solve(m, SolveOptions(gap_tol=1e-8))
    assert out.status == "optimal"
    assert out.objective == pytest.approx(2.0, abs=1e-6)
    assert sorted([out.x[x], out.x[y]]) == pytest.approx([1.0, 2.0], abs=1e-5)


def test_solve_infeasible_toy():
    m = MiqcpModel()
    x = m.add_var("x", -5, 5)
    m.add_linear([x], [1], ">=", 1)
    m.add_linear([x], [1], "<=", 0)
    out = solve(m)
    assert out.status == "infeasible" and out.solution_count == 0 and out.x is None


def test_solve_errors():
    with pytest.raises(SolverConfigError):
        SolveOptions(time_limit=0)
    with pytest.raises(SolverConfigError):
        SolveOptions(lp_method="interior")
    m2 = MiqcpModel()
    a = m2.add_var("a", -math.inf, math.inf)
    b = m2.add_var("b", 0, 1)
    m2.add_linear([a, b], [1, 1], ">=", 0)
    m2.set_objective([a], [1.0])
    with pytest.raises(ModelError):
        solve(m2)


def test_relative_gap_formula():
    assert relative_gap(2.0, 1.0) == pytest.approx(0.5)
    assert relative_gap(0.0, 0.0) == 0.0
    assert relative_gap(math.inf, 0.0) == math.inf
    assert relative_gap(1e-12, -1e-12) == pytest.approx(2e-12 / 1e-9)


def _random_instance(seed):
    """Mixed binary/bilinear instance: 4 binaries, x, y, products x*y and b_k*x, b_k*y (k < 2)."""
    rng = np.random.default_rng(seed)
    m = MiqcpModel(f"rand{seed}")
    B = [m.add_var(f"b{k}", 0, 1, binary=True) for k in range(4)]
    xl, yl = rng.uniform(-1, 0.5, 2)
    xu, yu = xl + rng.uniform(0.5, 2), yl + rng.uniform(0.5, 2)
    x = m.add_var("x", xl, xu)
    y = m.add_var("y", yl, yu)
    cx = [xl * yl, xl * yu, xu * yl, xu * yu]
    w = m.add_var("w", min(cx), max(cx))
    m.add_bilinear(w, x, y)
    aux = []
    for k in range(2):
        vx = m.add_var(f"bx{k}", min(0, xl), max(0, xu))
        vy = m.add_var(f"by{k}", min(0, yl), max(0, yu))
        m.add_bilinear(vx, B[k], x)
        m.add_bilinear(vy, B[k], y)
        aux += [vx, vy]
    n = m.num_vars
    b0 = rng.integers(0, 2, 4).astype(float)
    x0, y0 = rng.uniform(xl, xu), rng.uniform(yl, yu)
    p0 = np.concatenate([b0, [x0, y0, x0 * y0], [b0[0] * x0, b0[0] * y0, b0[1] * x0, b0[1] * y0]])
    rows = []
    for _ in range(4):
        a = rng.normal(size=n) * (rng.random(n) < 0.6)
        rhs = float(a @ p0 + rng.uniform(0, 0.3))
        m.add_linear(np.arange(n), a, "<=", rhs)
        rows.append((a, rhs))
    c = rng.normal(size=n)
    m.set_objective(np.arange(n), c)
    return m, (xl, xu, yl, yu), rows, c


def _oracle(box, rows, c):
    """Enumerate binaries; for fixed x the remaining problem is linear in y."""
    xl, xu, yl, yu = box
    best = math.inf

    def f(xv, b):
        xv = np.atleast_1d(np.asarray(xv, dtype=np.float64))
        lo = np.full_like(xv, yl)
        hi = np.full_like(xv, yu)
        # variable order: b0..b3, x, y, w, b0x, b0y, b1x, b1y
        def split(a):
            const = a[:4] @ b + (a[4] + a[7] * b[0] + a[9] * b[1]) * xv
            slope = a[5] + a[6] * xv + a[8] * b[0] + a[10] * b[1]
            return const, slope
        for a, rhs in rows:
            const, slope = split(a)
            room = rhs - const
            with np.errstate(divide="ignore", invalid="ignore"):
                lim = room / slope
            hi = np.where(slope > 1e-15, np.minimum(hi, lim), hi)
            lo = np.where(slope < -1e-15, np.maximum(lo, lim), lo)
            dead = (np.abs(slope) <= 1e-15) & (room < -1e-12)
            lo = np.where(dead, np.inf, lo)
        const, slope = split(c)
        yv = np.where(slope > 0, lo, hi)
        val = const + slope * yv
        return np.where(lo <= hi + 1e-12, val, np.inf)

    for bits in itertools.product((0.0, 1.0), repeat=4):
        b = np.array(bits)
        grid = np.linspace(xl, xu, 20001)
        vals = f(grid, b)
        if not np.isfinite(vals).any():
            continue
        k = int(np.argmin(vals))
        lo_x, hi_x = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
        with np.errstate(invalid="ignore"):
            r = minimize_scalar(lambda t: float(f(t, b)[0]), bounds=(lo_x, hi_x), method="bounded", options={"xatol": 1e-10})
        best = min(best, float(vals[k]), float(r.fun) if np.isfinite(r.fun) else math.inf)
    return best


@pytest.mark.parametrize("seed", range(50))
def test_solve_matches_enumeration(seed):
    m, box, rows, c = _random_instance(seed)
    want = _oracle(box, rows, c)
    out = solve(m, SolveOptions(gap_tol=1e-9, abs_tol=1e-7, time_limit=60))
    assert out.status == "optimal"
    assert m.max_violation(out.x) <= 1e-6
    assert out.objective == pytest.approx(want, abs=1e-4)


def test_simplex_backend_agrees_with_highs():
    for seed in range(5):
        m, *_ = _random_instance(seed)
        a = solve(m, SolveOptions(gap_tol=1e-9, abs_tol=1e-7))
        b = solve(m, SolveOptions(gap_tol=1e-9, abs_tol=1e-7, lp_method="simplex"))
        assert a.status == b.status == "optimal"
        assert a.objective == pytest.approx(b.objective, abs=1e-5)


def test_hint_installs_incumbent_and_saves_nodes():
    for seed in range(5):
        m, *_ = _random_instance(seed)
        base = solve(m, SolveOptions(gap_tol=1e-9, abs_tol=1e-7))
        hinted = solve(m, SolveOptions(gap_tol=1e-9, abs_tol=1e-7, hint=base.x, node_log=True))
        assert hinted.solution_count >= 1
        assert hinted.log[0][3] == pytest.approx(base.objective)
        assert hinted.nodes <= base.nodes
        assert hinted.objective == pytest.approx(base.objective, abs=1e-6)


def test_infeasible_hint_is_ignored():
    m, *_ = _random_instance(0)
    out = solve(m, SolveOptions(hint=np.full(m.num_vars, 1e3), node_log=True))
    assert out.log[0][3] == math.inf and out.status == "optimal"


def test_bound_is_monotone_and_log_csv():
    m, *_ = _random_instance(3)
    out = solve(m, SolveOptions(gap_tol=1e-9, node_log=True))
    bounds = [row[2] for row in out.log]
    assert all(b2 >= b1 - 1e-12 for b1, b2 in zip(bounds, bounds[1:]))
    lines = out.log_csv().splitlines()
    assert lines[0] == "node,depth,bound,incumbent,gap,time" and len(lines) == len(out.log) + 1
    assert out.gap == pytest.approx(relative_gap(out.objective, out.bound))


def test_deterministic():
    m, *_ = _random_instance(7)
    a = solve(m, SolveOptions(gap_tol=1e-9))
    b = solve(m, SolveOptions(gap_tol=1e-9))
    assert (a.status, a.objective, a.nodes) == (b.status, b.objective, b.nodes)
    np.testing.assert_array_equal(a.x, b.x)


def test_node_limit_reports_timeout_with_gap():
    m, *_ = _random_instance(11)
    full = solve(m, SolveOptions(gap_tol=1e-9))
    assert full.nodes > 1
    out = solve(m, SolveOptions(gap_tol=1e-9, node_limit=1, propagate=False))
    assert out.status == "timeout" and out.nodes == 1
    assert out.bound <= full.objective + 1e-9


def test_priorities_change_branching_order():
    m = MiqcpModel()
    bs = [m.add_var(f"b{k}", 0, 1, binary=True) for k in range(3)]
    m.add_linear(bs, [1, 1, 1], "=", 1.5 - 0.5)
    m.add_linear(bs, [1.0, 1.0, -1.0], "<=", 0.5)
    m.set_objective(bs, [-1.0, -1.1, -0.2])
    a = solve(m, SolveOptions(node_log=True, propagate=False))
    b = solve(m, SolveOptions(node_log=True, propagate=False, priorities={bs[2]: 10}))
    assert a.objective == pytest.approx(b.objective)
    assert a.status == b.status == "optimal"


def test_heuristic_callback_failures_are_ignored():
    m, *_ = _random_instance(2)

    def bad(values):
        raise RuntimeError("boom")

    out = solve(m, SolveOptions(heuristic=bad, gap_tol=1e-9))
    ref = solve(m, SolveOptions(gap_tol=1e-9))
    assert out.objective == pytest.approx(ref.objective)
