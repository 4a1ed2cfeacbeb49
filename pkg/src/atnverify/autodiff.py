"""Reverse-mode gradients for the network, written against ``forward_cache``.

Kink conventions: ReLU'(0) = 0; for sparsemax, an entry exactly at the
threshold counts as in-support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import (
    AttentionLayerSpec,
    LayerNormSpec,
    NetworkSpec,
    ShapeError,
    forward_cache,
)


@dataclass(frozen=True)
class LossSpec:
    """``kind="ce"``: cross-entropy of CLS logits against ``label``.
    ``kind="mse"``: squared error of REG against ``target``.
    ``kind="joint"``: ``cls_weight * ce + reg_weight * mse`` (batched training loss).
    """

    kind: str
    label: int | np.ndarray | None = None
    target: float | np.ndarray | None = None
    cls_weight: float = 1.0
    reg_weight: float = 1.0


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sparsemax_jacobian(u) -> np.ndarray:
    """``diag(s) - s s^T / |S|`` with ``s`` the support indicator of sparsemax(u)."""
    from .network import sparsemax_parts

    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        from .network import InvalidInputError

        raise InvalidInputError("sparsemax_jacobian input contains non-finite values")
    _, tau, *_ = sparsemax_parts(u)
    s = (u >= tau).astype(np.float64)
    return np.diag(s) - np.outer(s, s) / s.sum()


def _sparsemax_vjp(g: np.ndarray, score: np.ndarray, tau: np.ndarray) -> np.ndarray:
    s = (score >= tau[..., None]).astype(np.float64)
    mean = (s * g).sum(axis=-1, keepdims=True) / s.sum(axis=-1, keepdims=True)
    return s * (g - mean)


def _ln_vjp(dy, v, spec: LayerNormSpec, grads: dict | None, key: str):
    centered = v - v.mean(axis=-1, keepdims=True)
    if grads is not None:
        axes = tuple(range(dy.ndim - 1))
        grads[key + ".w"] = (dy * centered).sum(axis=axes)
        grads[key + ".b"] = dy.sum(axis=axes)
    wdy = dy * spec.w
    return wdy - wdy.mean(axis=-1, keepdims=True)


def _sum_outer(a, b):
    """Sum over all leading axes of a^T b: (..., m), (..., n) -> (m, n)."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _relu_block_vjp(dout, inp, w1, w2, hid, act, grads, key_w1, key_b1, key_w2, key_b2):
    if grads is not None:
        grads[key_w2] = _sum_outer(act, dout)
        grads[key_b2] = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
    dhid = (dout @ w2.T) * (hid > 0)
    if grads is not None:
        grads[key_w1] = _sum_outer(inp, dhid)
        grads[key_b1] = dhid.reshape(-1, dhid.shape[-1]).sum(axis=0)
    return dhid @ w1.T


def backward(net: NetworkSpec, cache: dict, dlogits: np.ndarray, dreg: np.ndarray, want_params: bool = True):
    """Propagate output cotangents back through the cached forward.

    Returns ``(grad_x, grad_params)``; ``grad_params`` is keyed like
    ``NetworkSpec.parameters`` (None when ``want_params`` is False).
    """
    grads: dict[str, np.ndarray] | None = {} if want_params else None
    mean = cache["mean"]
    dlogits = np.asarray(dlogits, dtype=np.float64)
    dreg = np.asarray(dreg, dtype=np.float64)
    if grads is not None:
        grads["cls_w"] = _sum_outer(mean, dlogits)
        grads["cls_b"] = dlogits.reshape(-1, net.C).sum(axis=0)
        grads["reg_w"] = _sum_outer(mean, dreg[..., None])
        grads["reg_b"] = np.array([dreg.sum()])
    dmean = dlogits @ net.cls_w.T + dreg[..., None] * net.reg_w[:, 0]
    dlnf = np.repeat(dmean[..., None, :], net.N, axis=-2) / net.N
    zL = cache[f"l{net.L - 1}.z"]
    dz = dlnf if net.final_ln is None else _ln_vjp(dlnf, zL, net.final_ln, grads, "final_ln")

    for i in reversed(range(net.L)):
        layer = net.layers[i]
        p, key = f"l{i}", f"layers.{i}"
        db = _relu_block_vjp(
            dz, cache[f"{p}.ln2"], layer.mlp_w1, layer.mlp_w2, cache[f"{p}.hid"], cache[f"{p}.act"],
            grads, f"{key}.mlp_w1", f"{key}.mlp_b1", f"{key}.mlp_w2", f"{key}.mlp_b2",
        )
        dzhat = dz + (db if layer.ln2 is None else _ln_vjp(db, cache[f"{p}.zhat"], layer.ln2, grads, f"{key}.ln2"))
        a = cache[f"{p}.ln1"]
        if isinstance(layer, AttentionLayerSpec):
            da = _attention_vjp(dzhat, a, layer, cache, p, key, grads)
        else:
            da = _relu_block_vjp(
                dzhat, a, layer.sub_w1, layer.sub_w2, cache[f"{p}.subhid"], cache[f"{p}.subact"],
                grads, f"{key}.sub_w1", f"{key}.sub_b1", f"{key}.sub_w2", f"{key}.sub_b2",
            )
        dz = dzhat + (da if layer.ln1 is None else _ln_vjp(da, cache[f"{p}.zin"], layer.ln1, grads, f"{key}.ln1"))
    return dz, grads


def _attention_vjp(dmix, a, layer: AttentionLayerSpec, cache, p, key, grads):
    dh = layer.d_head
    scale = 1.0 / math.sqrt(dh)
    cat = cache[f"{p}.cat"]
    if grads is not None:
        grads[f"{key}.w_msa"] = _sum_outer(cat, dmix)
    dcat = dmix @ layer.w_msa.T
    da = np.zeros_like(a)
    for h, w in enumerate(layer.w_qkv):
        q, k, v = cache[f"{p}.q{h}"], cache[f"{p}.k{h}"], cache[f"{p}.v{h}"]
        attn = cache[f"{p}.attn{h}"]
        dsa = dcat[..., h * dh : (h + 1) * dh]
        dattn = dsa @ np.swapaxes(v, -1, -2)
        dv = np.swapaxes(attn, -1, -2) @ dsa
        dscore = _sparsemax_vjp(dattn, cache[f"{p}.score{h}"], cache[f"{p}.tau{h}"]) * scale
        dq = dscore @ k
        dk = np.swapaxes(dscore, -1, -2) @ q
        dqkv = np.concatenate([dq, dk, dv], axis=-1)
        if grads is not None:
            grads[f"{key}.w_qkv.{h}"] = _sum_outer(a, dqkv)
        da = da + dqkv @ w.T
    return da


def loss_and_cotangents(logits, reg, loss: LossSpec):
    """Mean loss over the batch and its cotangents w.r.t. logits and reg."""
    logits = np.atleast_2d(logits)
    reg = np.atleast_1d(reg)
    B = logits.shape[0]
    value = 0.0
    dlogits = np.zeros_like(logits)
    dreg = np.zeros_like(reg)
    if loss.kind in ("ce", "joint"):
        labels = np.broadcast_to(np.asarray(loss.label, dtype=np.int64), (B,))
        prob = softmax(logits)
        wc = loss.cls_weight if loss.kind == "joint" else 1.0
        value += wc * float(-np.log(prob[np.arange(B), labels] + 1e-300).mean())
        onehot = np.zeros_like(prob)
        onehot[np.arange(B), labels] = 1.0
        dlogits = wc * (prob - onehot) / B
    if loss.kind in ("mse", "joint"):
        target = np.broadcast_to(np.asarray(loss.target, dtype=np.float64), (B,))
        wr = loss.reg_weight if loss.kind == "joint" else 1.0
        err = reg - target
        value += wr * float((err**2).mean())
        dreg = wr * 2.0 * err / B
    if loss.kind not in ("ce", "mse", "joint"):
        raise ValueError(f"unknown loss kind {loss.kind!r}")
    return value, dlogits, dreg


def loss_value(net: NetworkSpec, x, loss: LossSpec) -> float:
    logits, reg, _ = forward_cache(net, x)
    return loss_and_cotangents(logits, reg, loss)[0]


def grad_input(net: NetworkSpec, x, loss: LossSpec) -> np.ndarray:
    """Gradient of the loss with respect to a single input ``x`` (N x D)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.N, net.D):
        raise ShapeError(f"grad_input expects shape {(net.N, net.D)}, got {x.shape}")
    logits, reg, cache = forward_cache(net, x[None])
    _, dlogits, dreg = loss_and_cotangents(logits, reg, loss)
    dx, _ = backward(net, cache, dlogits, dreg, want_params=False)
    return dx[0]


def grad_params(net: NetworkSpec, batch, loss: LossSpec) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and its gradient for every weight of ``net``."""
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    logits, reg, cache = forward_cache(net, X)
    value, dlogits, dreg = loss_and_cotangents(logits, reg, loss)
    _, grads = backward(net, cache, dlogits, dreg, want_params=True)
    params = net.parameters()
    for k, v in params.items():
        grads[k] = np.asarray(grads.get(k, np.zeros_like(v))).reshape(v.shape)
    return value, grads
