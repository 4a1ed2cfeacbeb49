import numpy as np
import pytest

from atnverify.interval import (
    BoundsMap,
    SoundnessError,
    activation_bounds,
    affine,
    ball_affine,
    check_soundness,
    layer_norm,
    support_lambda,
    mul,
    propagate,
    relu,
    rho_bounds,
    sparsemax_row_bounds,
)
from atnverify.network import LayerNormSpec, forward_cache, random_network, sparsemax, sparsemax_parts


def batch_violations(net, bm, X, slack=1e-9):
    """Count of sampled intermediate values that leave their interval (batched forward)."""
    _, _, cache = forward_cache(net, X)
    bad = 0
    for name in bm.keys():
        if name not in cache:
            continue
        lo, hi = bm[name]
        v = cache[name]
        bad += int(np.sum((v < lo - slack) | (v > hi + slack)))
    return bad


def sample_box(lo, hi, n, rng):
    return lo + rng.random((n,) + lo.shape) * (hi - lo)


def test_relu_and_product_examples():
    lo, hi = relu(np.array([-1.0]), np.array([2.0]))
    assert (lo[0], hi[0]) == (0.0, 2.0)
    lo, hi = mul(np.array([1.0]), np.array([2.0]), np.array([-1.0]), np.array([1.0]))
    assert (lo[0], hi[0]) == (-2.0, 2.0)


def test_affine_is_exact():
    rng = np.random.default_rng(0)
    W = rng.normal(size=(3, 2))
    lo, hi = -np.ones(3), np.ones(3)
    olo, ohi = affine(lo, hi, W, np.array([0.5, -0.5]))
    np.testing.assert_allclose(olo, -np.abs(W).sum(0) + [0.5, -0.5])
    np.testing.assert_allclose(ohi, np.abs(W).sum(0) + [0.5, -0.5])


def test_layer_norm_tighter_than_naive():
    spec = LayerNormSpec(np.ones(3), np.zeros(3))
    lo, hi = np.zeros(3), np.ones(3)
    olo, ohi = layer_norm(lo, hi, spec)
    # exact: v_0 - mean = (2 v_0 - v_1 - v_2) / 3 in [-2/3, 2/3]; naive subtraction gives [-1, 1]
    np.testing.assert_allclose(olo, -2 / 3)
    np.testing.assert_allclose(ohi, 2 / 3)


def test_activation_bounds_examples():
    a_lo, a_hi = activation_bounds(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    assert a_lo[0] == pytest.approx(0.5) and a_hi[0] == pytest.approx(1.0)
    # dense grid over z_1 confirms containment and attainment at the end points
    vals = np.array([sparsemax([t, 0.0])[0] for t in np.linspace(0, 1, 1001)])
    assert vals.min() == pytest.approx(a_lo[0]) and vals.max() == pytest.approx(a_hi[0])


def test_activation_bounds_degenerate_box():
    z = np.array([0.3, -0.1, 0.2])
    a_lo, a_hi = activation_bounds(z, z)
    np.testing.assert_allclose(a_lo, sparsemax(z))
    np.testing.assert_allclose(a_hi, sparsemax(z))


def test_activation_bounds_small_box_strictly_inside():
    lo, hi = -0.1 * np.ones(3), 0.1 * np.ones(3)
    a_lo, a_hi = activation_bounds(lo, hi)
    assert np.all(a_lo > 0) and np.all(a_hi < 1) and np.all(a_hi - a_lo < 1)
    rng = np.random.default_rng(0)
    P = sparsemax_parts(sample_box(lo, hi, 10000, rng))[0]
    assert np.all(P >= a_lo - 1e-12) and np.all(P <= a_hi + 1e-12)


def test_activation_bounds_monotone_under_widening():
    rng = np.random.default_rng(1)
    for _ in range(200):
        lo = rng.normal(size=4)
        hi = lo + rng.random(4)
        lo2, hi2 = lo - rng.random(4) * 0.3, hi + rng.random(4) * 0.3
        a = activation_bounds(lo, hi)
        b = activation_bounds(lo2, hi2)
        assert np.all(b[0] <= a[0] + 1e-12) and np.all(b[1] >= a[1] - 1e-12)
        assert np.all(b[0] >= 0) and np.all(b[1] <= 1)


def test_support_lambda_examples():
    box = (-np.ones(4), np.ones(4))
    assert support_lambda(1, box) == 1.0
    assert support_lambda(2, box) == -1.0
    assert support_lambda(3, box) == -3.0
    lams = [support_lambda(k, box) for k in range(1, 5)]
    assert all(a >= b for a, b in zip(lams, lams[1:]))


def test_rho_bounds_sampled():
    rng = np.random.default_rng(2)
    for _ in range(20):
        lo = rng.normal(size=5)
        hi = lo + rng.random(5)
        r_lo, r_hi = rho_bounds(lo, hi)
        U = -np.sort(-sample_box(lo, hi, 5000, rng), axis=1)
        k = np.arange(1, 6)
        rho = 1 + k * U - np.cumsum(U, axis=1)
        assert np.all(rho >= r_lo - 1e-12) and np.all(rho <= r_hi + 1e-12)


def test_sparsemax_row_bounds_contain_samples():
    rng = np.random.default_rng(3)
    for sigma in (False, True):
        for _ in range(20):
            lo = rng.normal(size=4)
            hi = lo + 0.5 * rng.random(4)
            rb = sparsemax_row_bounds(lo, hi, sigma)
            U = sample_box(lo, hi, 3000, rng)
            P, tau, *_ = sparsemax_parts(U)
            assert np.all(P >= rb["attn"][0] - 1e-12) and np.all(P <= rb["attn"][1] + 1e-12)
            assert np.all(tau >= rb["tau"][0] - 1e-12) and np.all(tau <= rb["tau"][1] + 1e-12)
            shift = U - tau[:, None]
            assert np.all(shift >= rb["shift"][0] - 1e-12) and np.all(shift <= rb["shift"][1] + 1e-12)


@pytest.mark.parametrize("kind", ["atn", "mlp"])
@pytest.mark.parametrize("sigma", [False, True])
def test_propagate_sound_by_sampling(kind, sigma):
    rng = np.random.default_rng(4)
    net = random_network(kind, N=3, D=4, L=2, heads=2, d_head=2, seed=11)
    x = rng.normal(size=(3, 4))
    bm = BoundsMap()
    bm.set("x", x - 0.1, x + 0.1)
    out = propagate(net, bm["x"], sigma=sigma)
    assert batch_violations(net, out, sample_box(x - 0.1, x + 0.1, 5000, rng)) == 0


@pytest.mark.parametrize("p", [1, 2, np.inf])
def test_ball_bounds_sound(p):
    rng = np.random.default_rng(5)
    net = random_network("atn", N=3, D=4, heads=2, d_head=2, seed=12)
    x = rng.normal(size=(3, 4))
    free = np.zeros((3, 4), bool)
    free[-1] = True
    eps = 0.2
    box = (np.where(free, x - eps, x), np.where(free, x + eps, x))
    out = propagate(net, box, ball=(x, eps, p))
    d = rng.normal(size=(20000, 3, 4)) * free
    if p == 1:
        d = d / np.abs(d).sum(axis=(1, 2), keepdims=True)
    elif p == 2:
        d = d / np.sqrt((d**2).sum(axis=(1, 2), keepdims=True))
    else:
        d = np.sign(d)
    d *= eps * rng.random((20000, 1, 1))
    assert batch_violations(net, out, x + d) == 0
    # ball bounds never wider than box-only bounds
    plain = propagate(net, box)
    for k in ("l0.ln1", "l0.q0", "l0.score0"):
        assert np.all(out[k][1] - out[k][0] <= plain[k][1] - plain[k][0] + 1e-12)


def test_ball_affine_exact_extremes():
    W = np.array([[1.0, -2.0], [3.0, 0.5]])
    x = np.zeros((1, 2))
    free = np.ones((1, 2), bool)
    lo, hi = ball_affine(x, free, 1.0, 1, W)
    np.testing.assert_allclose(hi, [[3.0, 2.0]])  # l1 ball: best single coordinate
    lo, hi = ball_affine(x, free, 1.0, np.inf, W)
    np.testing.assert_allclose(hi, [[4.0, 2.5]])


def test_check_soundness_raises_on_bad_bounds():
    net = random_network("atn", N=2, D=3, seed=0)
    x = np.zeros((2, 3))
    good = propagate(net, (x - 0.1, x + 0.1))
    check_soundness(net, good, samples=200)
    bad = BoundsMap()
    for k in good.keys():
        lo, hi = good[k]
        if k == "logits":
            bad.set(k, lo, lo)
        else:
            bad.set(k, lo, hi)
    with pytest.raises(SoundnessError):
        check_soundness(net, bad, samples=200)


def test_propagate_debug_flag_runs_check():
    net = random_network("mlp", N=2, D=3, seed=0)
    x = np.zeros((2, 3))
    propagate(net, (x - 0.1, x + 0.1), check_samples=100)


def test_bounds_csv_dump():
    net = random_network("atn", N=2, D=3, seed=0)
    x = np.zeros((2, 3))
    text = propagate(net, (x - 0.1, x + 0.1)).to_csv()
    lines = text.splitlines()
    assert lines[0] == "layer,block,row,col,lo,hi"
    assert any(line.startswith("0,attn0,") for line in lines)
    for line in lines[1:]:
        lo, hi = map(float, line.split(",")[-2:])
        assert lo <= hi
