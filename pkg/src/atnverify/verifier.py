"""Progressive verification over norm shells of the admissible ball.

Shells ``[k*step, min((k+1)*step, eps)]`` are solved in increasing order
under one wall-clock budget. The first shell with a solution decides the
answer (OPT when solved to optimality, SAT when only an incumbent exists at
timeout); running out of budget without one gives UNDTM with the reached
shell start as a certified lower bound; covering the whole ball gives UNSAT.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackConfig, lp_norm, misclassified, pgd
from .encoder import ConfigError, EncodingConfig, PreconditionError, complete_assignment, encode, input_of
from .interval import BoundsMap, propagate
from .network import NetworkSpec, forward
from .solver import SolveOptions, solve

OPT, SAT, UNDTM, UNSAT = "OPT", "SAT", "UNDTM", "UNSAT"


@dataclass(frozen=True)
class Heuristics:
    """Acceleration switches. ``ia``: bounds from the shell box plus fixing of
    stable units; ``ia_sigma``: sparsemax activation bounds on top; ``hints``:
    PGD counterexample as a warm start; ``priorities``: branch on earlier
    layers and attention binaries first. Partitioning is set through the
    query's ``eps_step``."""

    ia: bool = True
    ia_sigma: bool = True
    hints: bool = True
    priorities: bool = True

    @classmethod
    def parse(cls, spec: str | None):
        """Parse ``"ia,ia-sigma,rp:0.01,hints,priorities"``; returns ``(Heuristics, rp_step or None)``."""
        if spec is None:
            return cls(), None
        flags = {"ia": False, "ia_sigma": False, "hints": False, "priorities": False}
        step = None
        for tok in (t.strip().lower() for t in spec.split(",")):
            if not tok or tok in ("none", "control"):
                continue
            if tok.startswith("rp:"):
                try:
                    step = float(tok[3:])
                except ValueError:
                    raise ConfigError(f"bad partition step in {tok!r}") from None
                if not step > 0:
                    raise ConfigError("partition step must be positive")
            elif tok in ("ia-sigma", "ia_sigma", "iasigma"):
                flags["ia"] = True
                flags["ia_sigma"] = True
            elif tok.replace("-", "_") in flags:
                flags[tok.replace("-", "_")] = True
            else:
                raise ConfigError(f"unknown heuristic {tok!r}")
        return cls(**flags), step

    def label(self, step=None) -> str:
        parts = []
        if self.ia_sigma:
            parts.append("ia-sigma")
        elif self.ia:
            parts.append("ia")
        if step is not None:
            parts.append(f"rp:{step:g}")
        if self.hints:
            parts.append("hints")
        if self.priorities:
            parts.append("priorities")
        return ",".join(parts) or "control"


CONTROL = Heuristics(ia=False, ia_sigma=False, hints=False, priorities=False)


@dataclass
class VerificationQuery:
    net: NetworkSpec
    x: np.ndarray
    gt: int
    p: float = 1
    eps: float = 0.03
    eps_step: float | None = None  # None: one shell covering the whole ball
    t_limit: float = 60.0
    node_limit: int | None = None  # branch-and-bound nodes over all shells; a deterministic budget
    perturb_mask: np.ndarray | None = None  # True = free
    heuristics: Heuristics = field(default_factory=Heuristics)
    margin: float = 1e-6
    eta: float = 1e-6
    gap_tol: float = 1e-4
    seed: int = 0
    threads: int = 1
    node_log: bool = False

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.p not in (1, 2, math.inf):
            raise ConfigError(f"unsupported norm p={self.p}")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        step = self.eps if self.eps_step is None else self.eps_step
        if not (0 < step <= self.eps * (1 + 1e-12)):
            raise ConfigError(f"need 0 < eps_step <= eps, got eps_step={step}, eps={self.eps}")
        self.eps_step = min(step, self.eps)
        if not self.t_limit > 0:
            raise ConfigError("t_limit must be positive")
        if self.node_limit is not None and self.node_limit < 1:
            raise ConfigError("node_limit must be at least 1")


@dataclass
class VerificationResult:
    status: str
    objective: float | None = None
    lower_bound: float = 0.0
    gap: float | None = None
    counterexample: np.ndarray | None = None
    shells: list = field(default_factory=list)
    elapsed: float = 0.0
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "lower_bound": self.lower_bound,
            "gap": self.gap,
            "counterexample": None if self.counterexample is None else self.counterexample.tolist(),
            "shells": self.shells,
            "elapsed": self.elapsed,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def subregion_box(x, eps_max: float, p, mask=None) -> BoundsMap:
    """Box over ``x'`` containing the ``l_p`` ball of radius ``eps_max`` (any p); masked coordinates fixed."""
    if not eps_max > 0:
        raise ConfigError("eps_max must be positive")
    x = np.asarray(x, dtype=np.float64)
    free = np.ones(x.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    r = np.where(free, eps_max, 0.0)
    bm = BoundsMap()
    bm.set("x", x - r, x + r)
    return bm


def shells(eps: float, step: float) -> list[tuple[float, float]]:
    out = []
    k = 0
    while k * step < eps * (1 - 1e-12):
        out.append((k * step, min((k + 1) * step, eps)))
        k += 1
    return out


def is_valid_counterexample(net: NetworkSpec, x, x_prime, gt: int, p, eps: float, mask=None, margin: float = 1e-6) -> bool:
    """Exact-forward validity: mask respected, inside the ball, mispredicted."""
    x, x_prime = np.asarray(x, dtype=np.float64), np.asarray(x_prime, dtype=np.float64)
    if mask is not None and np.any(np.asarray(x_prime != x)[~np.asarray(mask, dtype=bool)]):
        return False
    if lp_norm(x_prime - x, p) > eps + 1e-6:
        return False
    logits, _ = forward(net, x_prime)
    if int(np.argmax(logits)) == gt:
        return False
    return bool(np.max(np.delete(logits, gt)) - logits[gt] >= margin - 1e-6)


def _distance(model_p, delta) -> float:
    return lp_norm(delta, model_p)


class _Repair:
    """Primal heuristic: run the exact network on the relaxation's ``x'``."""

    def __init__(self, model, net, x, gt, p, eps_min, eps_max, margin):
        self.model, self.net, self.x, self.gt = model, net, x, gt
        self.p, self.eps_min, self.eps_max, self.margin = p, eps_min, eps_max, margin
        self.best = math.inf

    def candidate(self, xp):
        delta = xp - self.x
        for kappa in (0.0, 1e-9, 1e-7, 1e-5, 1e-4, 1e-3):
            cand = self.x + delta * (1.0 + kappa)
            d = _distance(self.p, cand - self.x)
            if d > self.eps_max * (1 + 1e-12) or d >= self.best:
                return None
            if d < self.eps_min:
                continue
            if misclassified(self.net, cand, self.gt, self.margin * (1 + 1e-3)):
                return cand
        return None

    def __call__(self, values):
        xp = input_of(self.model, values)
        cand = self.candidate(xp)
        if cand is None:
            return None
        self.best = _distance(self.p, cand - self.x)
        return complete_assignment(self.model, self.net, cand)


def verify(q: VerificationQuery) -> VerificationResult:
    t0 = time.perf_counter()
    net, x, gt = q.net, q.x, int(q.gt)
    if x.shape != (net.N, net.D):
        raise ConfigError(f"input shape {x.shape} does not match network {(net.N, net.D)}")
    logits, _ = forward(net, x)
    if int(np.argmax(logits)) != gt:
        raise PreconditionError(f"network predicts {int(np.argmax(logits))} on the clean input, not gt={gt}")
    subs = shells(q.eps, q.eps_step)
    if not subs:
        raise ConfigError("no sub-regions to verify")
    h = q.heuristics
    mask = None if q.perturb_mask is None else np.asarray(q.perturb_mask, dtype=bool)
    meta = {"heuristics": h.label(q.eps_step if q.eps_step < q.eps else None), "threads": q.threads, "seed": q.seed}

    def elapsed():
        return time.perf_counter() - t0

    def done(res: VerificationResult) -> VerificationResult:
        res.elapsed = elapsed()
        res.meta = meta
        return res

    hint_x = None
    hint_d = None
    if h.hints:
        hint_x = pgd(net, x, gt, AttackConfig(eps=q.eps, p=q.p, seed=q.seed, perturb_mask=mask, margin=q.margin * (1 + 1e-3)))
        if hint_x is not None:
            hint_d = lp_norm(hint_x - x, q.p)
    trace = []
    full_bounds = None
    for emin, emax in subs:
        shell_t0 = time.perf_counter()
        remaining = q.t_limit - elapsed()
        nodes_left = None if q.node_limit is None else q.node_limit - sum(e["nodes"] for e in trace)
        if remaining <= 0 or (nodes_left is not None and nodes_left <= 0):
            return done(VerificationResult(UNDTM, lower_bound=emin, shells=trace))
        if h.ia:
            bounds = propagate(net, _box(subregion_box(x, emax, q.p, mask)), sigma=h.ia_sigma, ball=(x, emax, q.p))
        else:
            if full_bounds is None:
                full_bounds = propagate(net, _box(subregion_box(x, q.eps, q.p, mask)), sigma=False)
            bounds = full_bounds
        cfg = EncodingConfig(
            p=q.p, eps=q.eps, eps_min=emin, eps_max=emax, eta=q.eta, margin=q.margin,
            perturb_mask=mask, use_bounds=h.ia, priorities=h.priorities,
        )
        model = encode(net, x, gt, bounds, cfg)
        hint = None
        if hint_x is not None and emin - 1e-12 <= hint_d <= emax + 1e-12:
            hint = complete_assignment(model, net, hint_x)
        remaining = q.t_limit - elapsed()
        if remaining <= 0:
            trace.append(_shell(emin, emax, "timeout", 0, time.perf_counter() - shell_t0))
            return done(VerificationResult(UNDTM, lower_bound=emin, shells=trace))
        repair = _Repair(model, net, x, gt, q.p, emin, emax, q.margin)
        opts = SolveOptions(
            time_limit=remaining,
            node_limit=nodes_left,
            gap_tol=q.gap_tol,
            hint=hint,
            priorities=dict(model.priority) if h.priorities else None,
            threads=q.threads,
            seed=q.seed,
            heuristic=repair,
            node_log=q.node_log,
        )
        out = solve(model, opts)
        entry = _shell(emin, emax, out.status, out.nodes, time.perf_counter() - shell_t0)
        if q.node_log:
            entry["node_log"] = out.log
        trace.append(entry)
        if out.x is not None:
            xp = _polish(net, x, input_of(model, out.x), gt, q.p, q.margin)
            obj = lp_norm(xp - x, q.p)
            if out.status == "optimal":
                return done(VerificationResult(OPT, objective=obj, lower_bound=emin, gap=out.gap, counterexample=xp, shells=trace))
            bound = out.bound if q.p != 2 else math.sqrt(max(out.bound, 0.0))
            return done(VerificationResult(SAT, objective=obj, lower_bound=max(emin, bound), gap=out.gap, counterexample=xp, shells=trace))
        if out.status == "timeout":
            return done(VerificationResult(UNDTM, lower_bound=emin, shells=trace))
    return done(VerificationResult(UNSAT, lower_bound=q.eps, shells=trace))


def _box(bm: BoundsMap):
    return bm["x"]


def _shell(emin, emax, status, nodes, t) -> dict:
    return {"eps_min": emin, "eps_max": emax, "status": status, "nodes": int(nodes), "time": t}


def _polish(net, x, xp, gt, p, margin):
    """Make the solver point strictly adversarial under the exact forward pass."""
    delta = xp - x
    for kappa in (0.0, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3):
        cand = x + delta * (1.0 + kappa)
        logits, _ = forward(net, cand)
        if int(np.argmax(logits)) != gt and np.max(np.delete(logits, gt)) - logits[gt] >= margin - 1e-6:
            return cand
    return xp
