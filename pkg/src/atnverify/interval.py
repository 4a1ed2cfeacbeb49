"""Interval (box) bound propagation through the network.

Every intermediate that appears in ``network.forward_cache`` gets a closed
interval. Sparsemax rows are bounded either by the simplex box ``[0, 1]`` or,
with ``sigma=True``, by evaluating sparsemax at the two extreme corners per
output (own input low / others high, and the reverse). Sparsemax output ``i``
is non-decreasing in ``u_i`` and non-increasing in every other input, so the
corners are exact bounds.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .network import AttentionLayerSpec, LayerNormSpec, NetworkSpec, forward_trace, sparsemax_parts


class SoundnessError(RuntimeError):
    """A sampled forward pass escaped a propagated interval."""


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.lo > self.hi:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def __contains__(self, v: float) -> bool:
        return self.lo <= v <= self.hi


class BoundsMap:
    """Write-once map from cache key to elementwise ``(lo, hi)`` arrays."""

    def __init__(self):
        self._lo: dict[str, np.ndarray] = {}
        self._hi: dict[str, np.ndarray] = {}

    def set(self, name: str, lo, hi) -> None:
        if name in self._lo:
            raise KeyError(f"bounds for {name!r} already set")
        lo = np.array(lo, dtype=np.float64)
        hi = np.array(hi, dtype=np.float64)
        # guard float round-off on tight intersections
        hi = np.maximum(hi, lo)
        lo.setflags(write=False)
        hi.setflags(write=False)
        self._lo[name], self._hi[name] = lo, hi

    def __getitem__(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self._lo[name], self._hi[name]

    def __contains__(self, name: str) -> bool:
        return name in self._lo

    def keys(self):
        return self._lo.keys()

    def interval(self, name: str, *index) -> Interval:
        return Interval(float(self._lo[name][index]), float(self._hi[name][index]))

    def violations(self, trace: dict, slack: float = 1e-9) -> list[tuple[str, tuple, float]]:
        """Entries of ``trace`` lying outside their interval by more than ``slack``."""
        out = []
        for name in self._lo:
            if name not in trace:
                continue
            v = np.atleast_1d(np.asarray(trace[name], dtype=np.float64))
            lo, hi = (np.atleast_1d(a) for a in self[name])
            bad = (v < lo - slack) | (v > hi + slack)
            for idx in zip(*np.nonzero(bad)):
                out.append((name, tuple(int(i) for i in idx), float(v[idx])))
        return out

    def to_csv(self) -> str:
        """Dump as CSV ``layer,block,row,col,lo,hi`` (layer -1 = input, L = heads)."""
        buf = io.StringIO()
        buf.write("layer,block,row,col,lo,hi\n")
        for name in self._lo:
            layer, block = _split_key(name)
            lo, hi = self[name]
            if lo.ndim == 1 and block.startswith("tau"):
                lo2, hi2 = lo[:, None], hi[:, None]
            else:
                lo2, hi2 = np.atleast_2d(lo), np.atleast_2d(hi)
            for r in range(lo2.shape[0]):
                for c in range(lo2.shape[1]):
                    buf.write(f"{layer},{block},{r},{c},{float(lo2[r, c])!r},{float(hi2[r, c])!r}\n")
        return buf.getvalue()


def _split_key(name: str) -> tuple[int | str, str]:
    if name.startswith("l") and "." in name and name[1:].split(".")[0].isdigit():
        head, block = name.split(".", 1)
        return int(head[1:]), block
    return ("-1" if name == "x" else "head"), name


# ---------------------------------------------------------------------------
# interval arithmetic primitives
# ---------------------------------------------------------------------------


def affine(lo, hi, W, b=None):
    """Exact interval image of ``v @ W + b`` for ``v`` in the box."""
    c = (lo + hi) / 2.0
    r = (hi - lo) / 2.0
    oc = c @ W
    orad = r @ np.abs(W)
    if b is not None:
        oc = oc + b
    return oc - orad, oc + orad


def mul(alo, ahi, blo, bhi):
    """Four-corner interval product."""
    cands = np.stack([alo * blo, alo * bhi, ahi * blo, ahi * bhi])
    return cands.min(axis=0), cands.max(axis=0)


def relu(lo, hi):
    return np.maximum(lo, 0.0), np.maximum(hi, 0.0)


def ln_matrix(spec: LayerNormSpec) -> np.ndarray:
    """Matrix ``M`` with ``layer_norm_linear(v) = v @ M + b`` (coordinate-wise expansion of the mean)."""
    D = spec.w.shape[0]
    return (np.eye(D) - 1.0 / D) * spec.w[None, :]


def layer_norm(lo, hi, spec: LayerNormSpec | None):
    if spec is None:
        return lo, hi
    return affine(lo, hi, ln_matrix(spec), spec.b)


def activation_bounds(lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Per-output sparsemax bounds over the last axis (vectorized over leading axes).

    ``a_lo[i] = sparsemax(hi with entry i replaced by lo[i])[i]`` and
    ``a_hi[i] = sparsemax(lo with entry i replaced by hi[i])[i]``.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    D = lo.shape[-1]
    eye = np.eye(D, dtype=bool)
    lo_corner = np.where(eye, lo[..., None, :], hi[..., None, :])
    hi_corner = np.where(eye, hi[..., None, :], lo[..., None, :])
    a_lo = np.diagonal(sparsemax_parts(lo_corner)[0], axis1=-2, axis2=-1)
    a_hi = np.diagonal(sparsemax_parts(hi_corner)[0], axis1=-2, axis2=-1)
    return np.clip(a_lo, 0.0, 1.0), np.clip(a_hi, 0.0, 1.0)


def support_lambda(k: int, vector_bounds) -> float:
    """``1 + (k-1)(min lo - max hi)``: a lower bound on ``rho_k`` of the sorted vector."""
    lo, hi = vector_bounds
    u_lo = float(np.min(lo))
    u_hi = float(np.max(hi))
    if u_lo > u_hi:
        raise ValueError("lower bound exceeds upper bound")
    return 1.0 + (k - 1) * (u_lo - u_hi)


def sorted_bounds(lo, hi):
    """Order statistics: k-th largest entry lies in [k-th largest lo, k-th largest hi]."""
    return -np.sort(-lo, axis=-1), -np.sort(-hi, axis=-1)


def rho_bounds(lo, hi):
    """Bounds on ``rho_k = 1 + sum_{j<k}(s_k - s_j)`` of the sorted row."""
    slo, shi = sorted_bounds(lo, hi)
    D = lo.shape[-1]
    k = np.arange(1, D + 1)
    cs_lo = np.cumsum(slo, axis=-1)
    cs_hi = np.cumsum(shi, axis=-1)
    # 1 + k*s_k - sum_{j<=k} s_j = 1 + (k-1) s_k - sum_{j<k} s_j
    ia_lo = 1.0 + (k - 1) * slo - (cs_hi - shi)
    ia_hi = 1.0 + (k - 1) * shi - (cs_lo - slo)
    u_lo = lo.min(axis=-1, keepdims=True)
    u_hi = hi.max(axis=-1, keepdims=True)
    lam = 1.0 + (k - 1) * (u_lo - u_hi)
    r_lo, r_hi = np.maximum(ia_lo, lam), np.minimum(ia_hi, 1.0)
    # rounding in the cumulative sums can cross the two ends on degenerate boxes
    return np.minimum(r_lo, r_hi), np.maximum(r_lo, r_hi)


def sparsemax_row_bounds(lo, hi, sigma: bool) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Bounds for every encoder quantity of sparsemax rows (last axis)."""
    D = lo.shape[-1]
    if sigma:
        a_lo, a_hi = activation_bounds(lo, hi)
    else:
        a_lo, a_hi = np.zeros_like(lo), np.ones_like(hi)
    # tau >= u_i - p_i for every i; tau = u_i - p_i on the support; max p >= 1/D
    tau_lo = np.max(lo - a_hi, axis=-1)
    tau_hi = np.max(hi, axis=-1) - 1.0 / D
    sure = a_lo > 0
    if sure.any():
        tau_hi = np.minimum(tau_hi, np.min(np.where(sure, hi - a_lo, np.inf), axis=-1))
    tau_hi = np.maximum(tau_hi, tau_lo)
    d_lo = lo - tau_hi[..., None]
    d_hi = hi - tau_lo[..., None]
    d_hi = np.minimum(d_hi, a_hi)
    d_lo = np.where(sure, np.maximum(d_lo, a_lo), d_lo)
    d_lo = np.minimum(d_lo, d_hi)
    p_lo = np.maximum(a_lo, np.maximum(d_lo, 0.0))
    p_hi = np.minimum(a_hi, np.maximum(d_hi, 0.0))
    p_lo = np.minimum(p_lo, p_hi)
    r_lo, r_hi = rho_bounds(lo, hi)
    s_lo, s_hi = sorted_bounds(lo, hi)
    return {
        "sorted": (s_lo, s_hi),
        "rho": (r_lo, r_hi),
        "tau": (tau_lo, tau_hi),
        "shift": (d_lo, d_hi),
        "attn": (p_lo, p_hi),
    }


# ---------------------------------------------------------------------------
# network propagation
# ---------------------------------------------------------------------------


def _dual_norm(W, p) -> np.ndarray:
    """Column-wise dual norm of ``W``: the max of ``d @ W[:, j]`` over ``||d||_p <= 1``."""
    A = np.abs(W)
    if p == 1:
        return A.max(axis=0, initial=0.0)
    if p == 2:
        return np.sqrt((A**2).sum(axis=0))
    return A.sum(axis=0)


def ball_affine(x, free, eps: float, p, W, b=None):
    """Exact range of ``x'_n @ W + b`` per token over ``{x' : ||x' - x||_p <= eps}``
    with non-free coordinates held at ``x``."""
    c = x @ W
    if b is not None:
        c = c + b
    rad = np.stack([eps * _dual_norm(W[free[n]], p) for n in range(x.shape[0])])
    return c - rad, c + rad


def propagate(
    net: NetworkSpec,
    input_box,
    sigma: bool = True,
    check_samples: int = 0,
    seed: int = 0,
    ball=None,
) -> BoundsMap:
    """Propagate the input box ``(lo, hi)`` (each ``N x D``) through ``net``.

    ``sigma`` enables activation bounding of sparsemax rows. With
    ``check_samples > 0`` the result is cross-checked on that many random
    inputs from the box and :class:`SoundnessError` is raised on escape.

    ``ball = (x, eps, p)`` additionally intersects the bounds of quantities
    that are affine in the input (first layer norm and Q/K/V projections)
    with their exact range over the ``l_p`` ball, which is much smaller than
    the box for ``p = 1, 2``.
    """
    xlo, xhi = (np.asarray(a, dtype=np.float64) for a in input_box)
    if xlo.shape != (net.N, net.D) or xhi.shape != (net.N, net.D):
        raise ValueError(f"input box must be {net.N} x {net.D}")
    if np.any(xlo > xhi):
        raise ValueError("input box has lo > hi")
    bm = BoundsMap()
    bm.set("x", xlo, xhi)
    zlo, zhi = xlo, xhi
    if ball is not None:
        bx, beps, bp = ball
        bx = np.asarray(bx, dtype=np.float64)
        bfree = xhi > xlo
    for i, layer in enumerate(net.layers):
        p = f"l{i}"
        alo, ahi = layer_norm(zlo, zhi, layer.ln1)
        # exact over the ball while the map from the input is still affine
        lin = None
        if ball is not None and i == 0:
            if layer.ln1 is None:
                lin = (np.eye(net.D), np.zeros(net.D))
            else:
                lin = (ln_matrix(layer.ln1), layer.ln1.b)
            blo, bhi = ball_affine(bx, bfree, beps, bp, *lin)
            alo, ahi = np.maximum(alo, blo), np.minimum(ahi, bhi)
        bm.set(f"{p}.ln1", alo, ahi)
        if isinstance(layer, AttentionLayerSpec):
            mlo, mhi = _attention_bounds(bm, p, alo, ahi, layer, sigma, None if lin is None else (bx, bfree, beps, bp, lin))
        else:
            hlo, hhi = affine(alo, ahi, layer.sub_w1, layer.sub_b1)
            if lin is not None:
                M, b0 = lin
                blo, bhi = ball_affine(bx, bfree, beps, bp, M @ layer.sub_w1, b0 @ layer.sub_w1 + layer.sub_b1)
                hlo, hhi = np.maximum(hlo, blo), np.minimum(hhi, bhi)
            bm.set(f"{p}.subhid", hlo, hhi)
            rlo, rhi = relu(hlo, hhi)
            bm.set(f"{p}.subact", rlo, rhi)
            mlo, mhi = affine(rlo, rhi, layer.sub_w2, layer.sub_b2)
        bm.set(f"{p}.mix", mlo, mhi)
        zhlo, zhhi = mlo + zlo, mhi + zhi
        bm.set(f"{p}.zhat", zhlo, zhhi)
        blo, bhi = layer_norm(zhlo, zhhi, layer.ln2)
        bm.set(f"{p}.ln2", blo, bhi)
        hlo, hhi = affine(blo, bhi, layer.mlp_w1, layer.mlp_b1)
        bm.set(f"{p}.hid", hlo, hhi)
        rlo, rhi = relu(hlo, hhi)
        bm.set(f"{p}.act", rlo, rhi)
        flo, fhi = affine(rlo, rhi, layer.mlp_w2, layer.mlp_b2)
        bm.set(f"{p}.ffn", flo, fhi)
        zlo, zhi = flo + zhlo, fhi + zhhi
        bm.set(f"{p}.z", zlo, zhi)
    llo, lhi = layer_norm(zlo, zhi, net.final_ln)
    bm.set("lnf", llo, lhi)
    mlo, mhi = llo.mean(axis=0), lhi.mean(axis=0)
    bm.set("mean", mlo, mhi)
    bm.set("logits", *affine(mlo, mhi, net.cls_w, net.cls_b))
    rlo, rhi = affine(mlo, mhi, net.reg_w, net.reg_b)
    bm.set("reg", rlo[0], rhi[0])
    if check_samples > 0:
        check_soundness(net, bm, check_samples, seed)
    return bm


def _attention_bounds(bm: BoundsMap, p: str, alo, ahi, layer: AttentionLayerSpec, sigma: bool, ball=None):
    dh = layer.d_head
    scale = 1.0 / math.sqrt(dh)
    cat_lo, cat_hi = [], []
    for h, w in enumerate(layer.w_qkv):
        qkv = []
        for sl in (slice(0, dh), slice(dh, 2 * dh), slice(2 * dh, 3 * dh)):
            lo_, hi_ = affine(alo, ahi, w[:, sl])
            if ball is not None:
                bx, bfree, beps, bp, (M, b0) = ball
                blo, bhi = ball_affine(bx, bfree, beps, bp, M @ w[:, sl], b0 @ w[:, sl])
                lo_, hi_ = np.maximum(lo_, blo), np.minimum(hi_, bhi)
            qkv.append((lo_, np.maximum(hi_, lo_)))
        (qlo, qhi), (klo, khi), (vlo, vhi) = qkv
        bm.set(f"{p}.q{h}", qlo, qhi)
        bm.set(f"{p}.k{h}", klo, khi)
        bm.set(f"{p}.v{h}", vlo, vhi)
        # products q_id * k_jd summed over d
        plo, phi = mul(qlo[:, None, :], qhi[:, None, :], klo[None, :, :], khi[None, :, :])
        slo, shi = plo.sum(axis=-1) * scale, phi.sum(axis=-1) * scale
        bm.set(f"{p}.score{h}", slo, shi)
        rows = sparsemax_row_bounds(slo, shi, sigma)
        for key, (lo_, hi_) in rows.items():
            bm.set(f"{p}.{key}{h}", lo_, hi_)
        attn_lo, attn_hi = rows["attn"]
        # sa_id = sum_j A_ij V_jd: product bound, intersected with the convex hull of V rows
        plo, phi = mul(attn_lo[:, :, None], attn_hi[:, :, None], vlo[None, :, :], vhi[None, :, :])
        sa_lo = np.maximum(plo.sum(axis=1), vlo.min(axis=0)[None, :])
        sa_hi = np.minimum(phi.sum(axis=1), vhi.max(axis=0)[None, :])
        bm.set(f"{p}.sa{h}", sa_lo, sa_hi)
        cat_lo.append(sa_lo)
        cat_hi.append(sa_hi)
    clo, chi = np.concatenate(cat_lo, axis=-1), np.concatenate(cat_hi, axis=-1)
    bm.set(f"{p}.cat", clo, chi)
    return affine(clo, chi, layer.w_msa)


def check_soundness(net: NetworkSpec, bm: BoundsMap, samples: int, seed: int = 0, slack: float = 1e-9) -> None:
    rng = np.random.default_rng(seed)
    xlo, xhi = bm["x"]
    for _ in range(samples):
        x = xlo + rng.random(xlo.shape) * (xhi - xlo)
        bad = bm.violations(forward_trace(net, x), slack)
        if bad:
            name, idx, val = bad[0]
            lo, hi = (np.atleast_1d(a) for a in bm[name])
            raise SoundnessError(f"{name}{list(idx)} = {val!r} escapes [{lo[idx]!r}, {hi[idx]!r}]")
