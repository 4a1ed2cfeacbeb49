"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from atnverify.network import AttentionLayerSpec, MLPLayerSpec, NetworkSpec, forward_cache, random_network


ACCEPTANCE: list[str] = []  # PASS/FAIL lines from the acceptance suite


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def simplex_projection_oracle(u):
    """Euclidean projection onto the probability simplex by enumerating every support set.

    For a support S the stationarity conditions give tau = (sum_S u - 1) / |S|;
    the projection is the unique S with u_i > tau on S and u_i <= tau off S.
    """
    u = np.asarray(u, dtype=np.float64)
    D = len(u)
    best, best_d = None, math.inf
    for k in range(1, D + 1):
        for S in itertools.combinations(range(D), k):
            S = list(S)
            tau = (u[S].sum() - 1.0) / k
            p = np.zeros(D)
            p[S] = u[S] - tau
            if np.all(p[S] >= -1e-12):
                rest = np.setdiff1d(np.arange(D), S)
                if np.all(u[rest] <= tau + 1e-12):
                    d = float(np.sum((p - u) ** 2))
                    if d < best_d:
                        best, best_d = np.maximum(p, 0.0), d
    return best


def zero_atn(N=1, D=2, C=2, heads=1, d_head=1, d_mlp=1):
    """ATN whose attention and MLP blocks are all zero: z^L = x."""
    layer = AttentionLayerSpec(
        w_qkv=tuple(np.zeros((D, 3 * d_head)) for _ in range(heads)),
        w_msa=np.zeros((d_head * heads, D)),
        mlp_w1=np.zeros((D, d_mlp)), mlp_b1=np.zeros(d_mlp),
        mlp_w2=np.zeros((d_mlp, D)), mlp_b2=np.zeros(D),
    )
    return NetworkSpec(kind="atn", N=N, D=D, C=C, layers=(layer,),
                       cls_w=np.eye(D, C), cls_b=np.zeros(C), reg_w=np.zeros((D, 1)), reg_b=np.zeros(1))


def identity_net():
    """N=1, D=2 network whose logits equal the input."""
    return zero_atn(1, 2, 2)


def attention_net(seed: int, N=2, D=2, C=2, d_head=1):
    """One sparsemax attention head with zero MLP: only attention shapes the logits."""
    rng = np.random.default_rng(seed)
    layer = AttentionLayerSpec(
        w_qkv=(rng.normal(0, 2.0, size=(D, 3 * d_head)),),
        w_msa=rng.normal(0, 1.0, size=(d_head, D)),
        mlp_w1=np.zeros((D, 1)), mlp_b1=np.zeros(1), mlp_w2=np.zeros((1, D)), mlp_b2=np.zeros(D),
    )
    return NetworkSpec(kind="atn", N=N, D=D, C=C, layers=(layer,),
                       cls_w=rng.normal(0, 1.0, size=(D, C)), cls_b=rng.normal(0, 0.1, size=C),
                       reg_w=np.zeros((D, 1)), reg_b=np.zeros(1))


def relu_net(seed: int, D=2, C=2, hidden=3):
    """N=1 MLP-variant net with one ReLU layer (sub block) and a zero second block."""
    rng = np.random.default_rng(seed)
    layer = MLPLayerSpec(
        sub_w1=rng.normal(0, 1.5, size=(D, hidden)), sub_b1=rng.normal(0, 0.3, size=hidden),
        sub_w2=rng.normal(0, 1.0, size=(hidden, D)), sub_b2=np.zeros(D),
        mlp_w1=np.zeros((D, 1)), mlp_b1=np.zeros(1), mlp_w2=np.zeros((1, D)), mlp_b2=np.zeros(D),
    )
    return NetworkSpec(kind="mlp", N=1, D=D, C=C, layers=(layer,),
                       cls_w=rng.normal(0, 1.0, size=(D, C)), cls_b=rng.normal(0, 0.1, size=C),
                       reg_w=np.zeros((D, 1)), reg_b=np.zeros(1))


def grid_min_distortion(net, x, gt, coords, radius, p=1, res=1e-3, margin=1e-6):
    """Smallest ``l_p`` distortion over a regular grid of perturbations of two coordinates.

    ``coords`` lists the two free ``(token, feature)`` positions. Returns
    ``inf`` when no grid point within ``radius`` is mispredicted.
    """
    assert len(coords) == 2
    steps = np.arange(-radius, radius + res / 2, res)
    A, B = np.meshgrid(steps, steps, indexing="ij")
    a, b = A.ravel(), B.ravel()
    if p == 1:
        dist = np.abs(a) + np.abs(b)
    elif p == 2:
        dist = np.sqrt(a * a + b * b)
    else:
        dist = np.maximum(np.abs(a), np.abs(b))
    keep = dist <= radius + 1e-12
    a, b, dist = a[keep], b[keep], dist[keep]
    best = math.inf
    chunk = 200_000
    for s in range(0, len(a), chunk):
        X = np.repeat(np.asarray(x, dtype=np.float64)[None], len(a[s:s + chunk]), axis=0)
        (t0, k0), (t1, k1) = coords
        X[:, t0, k0] += a[s:s + chunk]
        X[:, t1, k1] += b[s:s + chunk]
        logits, _, _ = forward_cache(net, X)
        others = np.delete(logits, gt, axis=1).max(axis=1)
        bad = others - logits[:, gt] >= margin
        if bad.any():
            best = min(best, float(dist[s:s + chunk][bad].min()))
    return best


@pytest.fixture
def small_atn():
    return random_network("atn", N=3, D=4, C=3, heads=2, d_head=2, d_mlp=4, seed=0)


@pytest.fixture
def small_mlp():
    return random_network("mlp", N=3, D=4, C=3, d_mlp=4, d_sub=6, seed=0)
