import math

import highspy
import numpy as np
import pytest

from atnverify.encoder import EncodingConfig, encode
from atnverify.interval import propagate
from atnverify.lpformat import LPFormatError, export_standard_format, parse_standard_format
from atnverify.model import MiqcpModel
from atnverify.network import forward, random_network
from atnverify.solver import SolveOptions, solve
from atnverify.verifier import subregion_box


def assert_same_model(m, m2):
    np.testing.assert_array_equal(m.lb, m2.lb)
    np.testing.assert_array_equal(m.ub, m2.ub)
    np.testing.assert_array_equal(m.binary, m2.binary)
    assert len(m.linear) == len(m2.linear) and len(m.quadratic) == len(m2.quadratic)
    for a, b in zip(m.linear + m.quadratic, m2.linear + m2.quadratic):
        assert a.sense == b.sense and a.rhs == b.rhs
        np.testing.assert_array_equal(a.idx, b.idx)
        np.testing.assert_array_equal(a.coef, b.coef)
    for a, b in zip(m.quadratic, m2.quadratic):
        np.testing.assert_array_equal(a.qi, b.qi)
        np.testing.assert_array_equal(a.qj, b.qj)
        np.testing.assert_array_equal(a.qcoef, b.qcoef)
    assert [(g.kind, g.y, g.x) for g in m.general] == [(g.kind, g.y, g.x) for g in m2.general]
    np.testing.assert_array_equal(m.obj_idx, m2.obj_idx)
    np.testing.assert_array_equal(m.obj_coef, m2.obj_coef)
    assert m.obj_const == m2.obj_const


def toy():
    m = MiqcpModel("toy")
    x = m.add_var("x", -1.5, 2.0)
    y = m.add_var("y[0]", 0.0, 1.0)
    b = m.add_var("b", 0, 1, binary=True)
    w = m.add_var("w", -3.0, 3.0)
    r = m.add_var("r", 0.0, 2.0)
    a = m.add_var("a", 0.0, 2.0)
    k = m.add_var("k", 0.25, 0.25)
    m.add_linear([x, y, b], [1.0, -2.5, 1e-7], "<=", 3.0)
    m.add_linear([x, b], [1.0, 1.0], ">=", -0.1)
    m.add_linear([y, k], [1.0, 1.0], "=", 0.5)
    m.add_quadratic([w], [1.0], [x, y], [y, y], [-1.0, 0.5], "=", 0.0)
    m.add_general("max0", r, x)
    m.add_general("abs", a, x)
    m.set_objective([x, y], [0.1, -1.0], 2.0)
    return m


def test_toy_roundtrip_and_sections():
    m = toy()
    text = export_standard_format(m)
    for section in ("Minimize", "Subject To", "Bounds", "Binaries", "General Constraints", "End"):
        assert section in text
    assert "MAX (" in text and "ABS (" in text and "^ 2" in text
    assert_same_model(m, parse_standard_format(text))


def test_exported_names_are_safe():
    text = export_standard_format(toy())
    assert "y[0]" not in text


@pytest.mark.parametrize("kind,p", [("atn", 1), ("atn", 2), ("mlp", math.inf)])
def test_verification_model_roundtrip(kind, p):
    net = random_network(kind, N=3, D=4, C=3, heads=2, d_head=2, d_mlp=4, seed=0)
    x = np.random.default_rng(0).uniform(0, 1, (3, 4))
    gt = int(np.argmax(forward(net, x)[0]))
    bm = propagate(net, subregion_box(x, 0.1, p)["x"], ball=(x, 0.1, p))
    m = encode(net, x, gt, bm, EncodingConfig(p=p, eps=0.1))
    m2 = parse_standard_format(export_standard_format(m))
    assert_same_model(m, m2)
    assert m2.stats()["variables"] == m.stats()["variables"]


def test_long_rows_wrap():
    m = MiqcpModel()
    ids = m.add_vars("v", np.zeros(300), np.ones(300))
    m.add_linear(ids, np.arange(1, 301) / 7.0, "<=", 10.0)
    m.set_objective(ids[:1], [1.0])
    text = export_standard_format(m)
    assert max(len(line) for line in text.splitlines()) <= 255
    assert_same_model(m, parse_standard_format(text))


def test_external_solver_reads_milp_export(tmp_path):
    rng = np.random.default_rng(5)
    m = MiqcpModel("milp")
    xs = m.add_vars("x", np.zeros(4), np.full(4, 3.0))
    bs = m.add_vars("b", np.zeros(3), np.ones(3), binary=True)
    for _ in range(5):
        idx = np.concatenate([xs, bs])
        m.add_linear(idx, rng.normal(size=7), "<=", float(rng.uniform(0.5, 2)))
    m.add_linear(np.concatenate([xs, bs]), np.ones(7), ">=", 1.0)
    m.set_objective(np.concatenate([xs, bs]), rng.normal(size=7))
    path = tmp_path / "milp.lp"
    path.write_text(export_standard_format(m))
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    assert h.readModel(str(path)) == highspy.HighsStatus.kOk
    h.run()
    ours = solve(m, SolveOptions(gap_tol=1e-9))
    assert h.getInfo().objective_function_value == pytest.approx(ours.objective, abs=1e-6)


def test_parse_errors():
    with pytest.raises(LPFormatError):
        parse_standard_format("")
    with pytest.raises(LPFormatError):
        parse_standard_format("Minimize\n obj: x\nSubject To\n c0: x <=\nEnd\n")
