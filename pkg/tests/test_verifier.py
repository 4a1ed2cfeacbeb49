import json
import math

import numpy as np
import pytest

from atnverify.encoder import ConfigError, PreconditionError
from atnverify.network import forward
from atnverify.verifier import (
    CONTROL,
    Heuristics,
    VerificationQuery,
    is_valid_counterexample,
    shells,
    subregion_box,
    verify,
)

from conftest import attention_net, grid_min_distortion, identity_net

X_ID = np.array([[0.6, 0.4]])


def test_subregion_box_examples():
    bm = subregion_box(np.array([[0.3, 0.3]]), 0.01, 1, np.array([[True, False]]))
    lo, hi = bm["x"]
    np.testing.assert_allclose(lo, [[0.29, 0.3]])
    np.testing.assert_allclose(hi, [[0.31, 0.3]])
    for p in (2, math.inf):
        np.testing.assert_allclose(subregion_box(np.array([[0.3]]), 0.01, p)["x"][0], [[0.29]])
    with pytest.raises(ConfigError):
        subregion_box(np.zeros((1, 1)), 0.0, 1)


def test_shells_cover_the_ball():
    s = shells(1.0, 0.3)
    assert s[0][0] == 0.0 and s[-1][1] == 1.0
    assert all(a[1] == pytest.approx(b[0]) for a, b in zip(s, s[1:]))
    assert len(shells(1.0, 0.05)) == 20
    assert shells(0.3, 0.3) == [(0.0, 0.3)]


def test_heuristics_parse_roundtrip():
    h, step = Heuristics.parse("ia-sigma,rp:0.01,hints,priorities")
    assert h == Heuristics() and step == 0.01
    assert h.label(step) == "ia-sigma,rp:0.01,hints,priorities"
    h, step = Heuristics.parse("control")
    assert h == CONTROL and step is None and h.label() == "control"
    with pytest.raises(ConfigError):
        Heuristics.parse("magic")
    with pytest.raises(ConfigError):
        Heuristics.parse("rp:-1")


def test_query_validation():
    net = identity_net()
    with pytest.raises(ConfigError):
        VerificationQuery(net, X_ID, 0, eps=0.1, eps_step=0.2)
    with pytest.raises(ConfigError):
        VerificationQuery(net, X_ID, 0, p=3)
    with pytest.raises(ConfigError):
        VerificationQuery(net, X_ID, 0, t_limit=0)
    with pytest.raises(PreconditionError):
        verify(VerificationQuery(net, X_ID, 1, eps=0.3))


def test_identity_opt_in_shell_after_boundary():
    r = verify(VerificationQuery(identity_net(), X_ID, 0, p=1, eps=1.0, eps_step=0.05))
    assert r.status == "OPT"
    assert r.objective == pytest.approx(0.2, abs=2e-3)
    # the optimum sits just past 0.2 because of the decision margin
    assert [s["status"] for s in r.shells[:4]] == ["infeasible"] * 4
    assert len(r.shells) == 5 and r.lower_bound == pytest.approx(0.2)
    assert r.objective >= r.lower_bound - 1e-6
    assert is_valid_counterexample(identity_net(), X_ID, r.counterexample, 0, 1, 1.0)


def test_identity_unsat_below_distortion():
    r = verify(VerificationQuery(identity_net(), X_ID, 0, p=1, eps=0.05, eps_step=0.01))
    assert r.status == "UNSAT" and r.lower_bound == 0.05
    assert len(r.shells) == 5 and all(s["status"] == "infeasible" for s in r.shells)
    assert r.counterexample is None


def test_micro_time_limit_is_undetermined():
    net = attention_net(3)
    x = np.array([[0.2, 0.7], [0.5, 0.1]])
    gt = int(np.argmax(forward(net, x)[0]))
    r = verify(VerificationQuery(net, x, gt, p=1, eps=1.0, eps_step=0.5, t_limit=0.001, heuristics=CONTROL))
    assert r.status == "UNDTM" and r.lower_bound == 0.0
    assert sum(s["nodes"] for s in r.shells) == 0


@pytest.mark.parametrize("p", [1, 2, math.inf])
def test_identity_other_norms(p):
    # moving 0.1 + margin/2 on each coordinate in opposite directions:
    # l1 0.2, l2 0.1*sqrt(2), linf 0.1
    want = {1: 0.2, 2: 0.1 * math.sqrt(2), math.inf: 0.1}[p]
    r = verify(VerificationQuery(identity_net(), X_ID, 0, p=p, eps=0.5))
    assert r.status == "OPT" and r.objective == pytest.approx(want, abs=2e-3)


@pytest.mark.parametrize("heur", ["control", "ia", "ia-sigma", "ia-sigma,hints,priorities"])
def test_heuristics_do_not_change_the_optimum(heur):
    net = attention_net(1)
    x = np.array([[0.3, 0.8], [0.6, 0.2]])
    gt = int(np.argmax(forward(net, x)[0]))
    mask = np.array([[False, False], [True, True]])
    want = grid_min_distortion(net, x, gt, [(1, 0), (1, 1)], 2.0, p=1)
    h, _ = Heuristics.parse(heur)
    r = verify(VerificationQuery(net, x, gt, p=1, eps=2.0, eps_step=0.5, perturb_mask=mask, heuristics=h))
    if math.isinf(want):
        assert r.status == "UNSAT"
    else:
        assert r.status == "OPT" and r.objective == pytest.approx(want, abs=2e-3)
        assert is_valid_counterexample(net, x, r.counterexample, gt, 1, 2.0, mask)


def test_partitioned_matches_single_shot():
    net = attention_net(2)
    x = np.array([[0.3, 0.8], [0.6, 0.2]])
    gt = int(np.argmax(forward(net, x)[0]))
    mask = np.array([[False, False], [True, True]])
    a = verify(VerificationQuery(net, x, gt, p=1, eps=2.0, eps_step=0.25, perturb_mask=mask))
    b = verify(VerificationQuery(net, x, gt, p=1, eps=2.0, perturb_mask=mask))
    assert a.status == b.status
    if a.status == "OPT":
        assert a.objective == pytest.approx(b.objective, abs=1e-4)


def test_result_json_shape():
    r = verify(VerificationQuery(identity_net(), X_ID, 0, p=1, eps=0.5, eps_step=0.25))
    d = json.loads(r.to_json())
    assert set(d) >= {"status", "objective", "lower_bound", "gap", "counterexample", "shells"}
    assert set(d["shells"][0]) >= {"eps_min", "eps_max", "status", "nodes", "time"}


def test_is_valid_counterexample_rules():
    net = identity_net()
    assert is_valid_counterexample(net, X_ID, np.array([[0.49, 0.51]]), 0, 1, 0.3)
    assert not is_valid_counterexample(net, X_ID, np.array([[0.55, 0.45]]), 0, 1, 0.3)  # still class 0
    assert not is_valid_counterexample(net, X_ID, np.array([[0.3, 0.7]]), 0, 1, 0.3)  # outside ball
    mask = np.array([[True, False]])
    assert not is_valid_counterexample(net, X_ID, np.array([[0.49, 0.51]]), 0, 1, 0.3, mask)


def test_node_limit_is_a_deterministic_budget():
    net = attention_net(3)
    x = np.array([[0.2, 0.7], [0.5, 0.1]])
    gt = int(np.argmax(forward(net, x)[0]))
    mk = lambda n: VerificationQuery(net, x, gt, p=1, eps=1.0, eps_step=0.25, node_limit=n, heuristics=CONTROL)
    runs = [verify(mk(3)) for _ in range(2)]
    for r in runs:
        assert sum(s["nodes"] for s in r.shells) <= 3
    assert [(r.status, r.lower_bound) for r in runs][0] == (runs[1].status, runs[1].lower_bound)
    with pytest.raises(ConfigError):
        mk(0)
