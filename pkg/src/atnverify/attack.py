"""Projected gradient attack used for solver hints and as a cross-check."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import LossSpec, grad_input
from .network import NetworkSpec, forward


@dataclass(frozen=True)
class AttackConfig:
    eps: float
    p: float = 1
    steps: int = 100
    step_size: float | None = None  # default eps / 25
    restarts: int = 5
    seed: int = 0
    perturb_mask: np.ndarray | None = None  # True = free coordinate
    margin: float = 1e-6

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.p not in (1, 2, math.inf):
            raise ValueError(f"unsupported norm p={self.p}")


def lp_norm(delta, p) -> float:
    a = np.abs(np.asarray(delta, dtype=np.float64)).ravel()
    if p == 1:
        return float(a.sum())
    if p == 2:
        return float(np.sqrt((a**2).sum()))
    return float(a.max(initial=0.0))


def project_lp_ball(delta, eps: float, p, mask=None) -> np.ndarray:
    """Euclidean projection of ``delta`` onto ``{d : ||d||_p <= eps}``, with masked coordinates zeroed."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    d = np.array(delta, dtype=np.float64)
    if mask is not None:
        d = np.where(np.asarray(mask, dtype=bool), d, 0.0)
    if p == math.inf:
        return np.clip(d, -eps, eps)
    if p == 2:
        norm = np.sqrt(np.sum(d**2))
        return d * (eps / norm) if norm > eps else d
    if p != 1:
        raise ValueError(f"unsupported norm p={p}")
    a = np.abs(d).ravel()
    if a.sum() <= eps:
        return d
    if eps == 0:
        return np.zeros_like(d)
    # threshold for the l1-ball projection, by sorting
    s = np.sort(a)[::-1]
    cs = np.cumsum(s)
    k = np.arange(1, a.size + 1)
    idx = np.nonzero(s - (cs - eps) / k > 0)[0][-1]
    theta = (cs[idx] - eps) / (idx + 1)
    out = np.sign(d) * np.maximum(np.abs(d) - theta, 0.0)
    # guard against rounding pushing the norm over eps
    total = np.abs(out).sum()
    if total > eps:
        out *= eps / total
    return out


def misclassified(net: NetworkSpec, x, gt: int, margin: float = 1e-6) -> bool:
    logits, _ = forward(net, x)
    others = np.delete(logits, gt)
    return bool(np.max(others) - logits[gt] >= margin)


def _direction(g, p):
    if p == math.inf:
        return np.sign(g)
    n = np.sqrt(np.sum(g**2)) if p == 2 else np.sum(np.abs(g))
    return g / n if n > 0 else g


def pgd(net: NetworkSpec, x, gt: int, cfg: AttackConfig) -> np.ndarray | None:
    """First point found with ``argmax != gt`` by at least ``cfg.margin``, or ``None``."""
    x = np.asarray(x, dtype=np.float64)
    mask = np.ones(x.shape, dtype=bool) if cfg.perturb_mask is None else np.asarray(cfg.perturb_mask, dtype=bool)
    if not mask.any() or cfg.eps == 0:
        return None
    step = cfg.step_size if cfg.step_size is not None else cfg.eps / 25.0
    loss = LossSpec("ce", label=int(gt))
    for r in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, r])
        if r == 0:
            delta = np.zeros_like(x)
        else:
            delta = project_lp_ball(rng.uniform(-cfg.eps, cfg.eps, x.shape), cfg.eps, cfg.p, mask)
        for _ in range(cfg.steps):
            g = np.where(mask, grad_input(net, x + delta, loss), 0.0)
            if not np.any(g):
                # flat region of the attention: jitter to escape
                g = np.where(mask, rng.normal(size=x.shape), 0.0)
            delta = project_lp_ball(delta + step * _direction(g, cfg.p), cfg.eps, cfg.p, mask)
            cand = x + delta
            if misclassified(net, cand, gt, cfg.margin):
                return cand
    return None
