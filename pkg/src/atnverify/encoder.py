"""MIQCP encoding of the minimum-distortion robustness query.

The model variables mirror ``network.forward_cache`` one scalar per variable,
with bounds from an interval :class:`~atnverify.interval.BoundsMap`. Affine
and layer-norm maps become linear equalities; ReLUs use the Big-M binary
encoding; products of two network quantities become bilinear terms inside
quadratic rows; each sparsemax row gets a sorting permutation, support
indicators with optimal Big-M constants, and ``p = max(u - tau, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .interval import BoundsMap, support_lambda
from .model import MiqcpModel
from .network import AttentionLayerSpec, NetworkSpec, forward, forward_trace, sorting_permutation


class PreconditionError(ValueError):
    """The clean input is not classified as the ground-truth label."""


class ConfigError(ValueError):
    """Invalid encoding/verification configuration."""


@dataclass(frozen=True)
class EncodingConfig:
    p: float = 1
    eps: float = 0.05
    eps_min: float = 0.0
    eps_max: float | None = None
    eta: float = 1e-6
    margin: float = 1e-6
    perturb_mask: np.ndarray | None = None  # N x D bool, True = free
    use_bounds: bool = True  # fix stable ReLU / max / sort / support behaviour from bounds
    priorities: bool = False

    def __post_init__(self):
        if self.p not in (1, 2, math.inf):
            raise ConfigError(f"unsupported norm p={self.p}; expected 1, 2 or inf")
        eps_max = self.eps if self.eps_max is None else self.eps_max
        object.__setattr__(self, "eps_max", float(eps_max))
        if not (0.0 <= self.eps_min < self.eps_max <= self.eps + 1e-12):
            raise ConfigError(
                f"empty or invalid sub-region: need 0 <= eps_min ({self.eps_min}) < eps_max ({self.eps_max}) <= eps ({self.eps})"
            )
        if self.eta <= 0:
            raise ConfigError("eta must be positive")


def big_m_positive(k: int) -> float:
    """Smallest valid constant for ``rho_k <= M * zeta_k``: ``rho_k <= rho_1 = 1`` on sorted vectors."""
    if k < 1:
        raise ValueError("k is 1-based")
    return 1.0


def big_m_negative(k: int, vector_bounds, eta: float) -> float | None:
    """Smallest valid constant for ``-rho_k + eta <= M (1 - zeta_k)``.

    ``None`` means the constraint is not needed because ``rho_k > 0`` always
    holds (the caller fixes ``zeta_k = 1``).
    """
    lam = support_lambda(k, vector_bounds)
    if lam > 0:
        return None
    return abs(lam) + eta


def _key(name: str) -> str:
    return name.replace(".", "_")


class _Builder:
    def __init__(self, model: MiqcpModel, bounds: BoundsMap, cfg: EncodingConfig):
        self.m = model
        self.bm = bounds
        self.cfg = cfg

    def node(self, name: str, var_prefix: str | None = None) -> np.ndarray:
        lo, hi = self.bm[name]
        ids = self.m.add_vars(var_prefix or _key(name), lo, hi)
        self.m.layout.append(("node", name, ids))
        return ids

    def alias(self, name: str, ids: np.ndarray) -> np.ndarray:
        self.m.layout.append(("node", name, ids))
        return ids

    def affine(self, name: str, inp: np.ndarray, W: np.ndarray, b=None, category="affine") -> np.ndarray:
        out = self.node(name)
        rows = out if out.ndim == 2 else out[None]
        for n in range(inp.shape[0]):
            for j in range(W.shape[1]):
                col = W[:, j]
                nz = np.nonzero(col)[0]
                self.m.add_linear(
                    np.concatenate([[rows[n, j]], inp[n, nz]]),
                    np.concatenate([[1.0], -col[nz]]),
                    "=",
                    0.0 if b is None else float(b[j]),
                    category=category,
                )
        return out

    def layer_norm(self, name: str, inp: np.ndarray, spec) -> np.ndarray:
        if spec is None:
            return self.alias(name, inp)
        D = inp.shape[1]
        M = (np.eye(D) - 1.0 / D) * spec.w[None, :]
        return self.affine(name, inp, M, spec.b, category="layer_norm")

    def add(self, name: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        out = self.node(name)
        for idx in np.ndindex(out.shape):
            self.m.add_linear([out[idx], a[idx], b[idx]], [1.0, -1.0, -1.0], "=", 0.0, category="residual")
        return out

    def relu(self, hid_name: str, act_name: str, hid: np.ndarray, priority: int | None) -> np.ndarray:
        act = self.node(act_name)
        lo, hi = self.bm[hid_name]
        bins = np.full(hid.shape, -1, dtype=np.int64)
        for idx in np.ndindex(hid.shape):
            h, a, l, u = hid[idx], act[idx], float(lo[idx]), float(hi[idx])
            if self.cfg.use_bounds and l >= 0:
                self.m.add_linear([a, h], [1.0, -1.0], "=", 0.0, category="relu_stable")
                continue
            if self.cfg.use_bounds and u <= 0:
                self.m.add_linear([a], [1.0], "=", 0.0, category="relu_stable")
                continue
            b = self.m.add_var(f"{_key(act_name)}_on_{'_'.join(map(str, idx))}", 0.0, 1.0, binary=True)
            bins[idx] = b
            if priority is not None:
                self.m.priority[b] = priority
            self.m.add_linear([a, h], [1.0, -1.0], ">=", 0.0, category="relu")
            self.m.add_linear([a, h, b], [1.0, -1.0, -l], "<=", -l, category="relu")
            self.m.add_linear([a, b], [1.0, -u], "<=", 0.0, category="relu")
        self.m.layout.append(("relu", hid_name, bins))
        return act

    def relu_block(self, p: str, tag: str, inp, w1, b1, w2, b2, out_name: str, priority) -> np.ndarray:
        hid = self.affine(f"{p}.{tag}hid", inp, w1, b1)
        act = self.relu(f"{p}.{tag}hid", f"{p}.{tag}act", hid, priority)
        return self.affine(out_name, act, w2, b2)


def encode_sparsemax_row(
    u_vars: np.ndarray,
    row_bounds: dict,
    model: MiqcpModel,
    cfg: EncodingConfig | None = None,
    prefix: str = "sm",
    priority: int | None = None,
) -> dict[str, np.ndarray]:
    """Encode ``p = sparsemax(u)`` for one row of variables.

    ``row_bounds`` maps ``u, sorted, rho, tau, shift, attn`` to ``(lo, hi)``
    (``tau`` scalar, others length D). Returns the created variable ids keyed
    ``perm (D x D), sorted, rho, zeta, supp, tau, shift, attn``; ``attn`` is
    the output.
    """
    cfg = cfg or EncodingConfig()
    m = model
    u_vars = np.asarray(u_vars, dtype=np.int64)
    D = u_vars.size
    ulo, uhi = (np.asarray(a, dtype=np.float64) for a in row_bounds["u"])
    use = cfg.use_bounds

    def pri(v):
        if priority is not None:
            m.priority[int(v)] = priority

    # sorting permutation P[k, j] = 1 iff u_j is the k-th largest
    P = m.add_vars(f"{prefix}_P", np.zeros((D, D)), np.ones((D, D)), binary=True)
    for v in P.ravel():
        pri(v)
    if use:
        for j in range(D):
            others = np.arange(D) != j
            rank_min = int(np.sum(ulo[others] > uhi[j]))
            rank_max = D - 1 - int(np.sum(uhi[others] < ulo[j]))
            for k in range(D):
                if k < rank_min or k > rank_max:
                    m.fix(P[k, j], 0.0)
            if rank_min == rank_max:
                m.fix(P[rank_min, j], 1.0)
    for k in range(D):
        m.add_linear(P[k, :], np.ones(D), "=", 1.0, category="sort")
    for j in range(D):
        m.add_linear(P[:, j], np.ones(D), "=", 1.0, category="sort")

    slo, shi = row_bounds["sorted"]
    uh = m.add_vars(f"{prefix}_sorted", slo, shi)
    for k in range(D):
        m.add_quadratic([uh[k]], [1.0], P[k, :], u_vars, -np.ones(D), "=", 0.0, category="sort_product")
    for k in range(D - 1):
        m.add_linear([uh[k], uh[k + 1]], [1.0, -1.0], ">=", 0.0, category="sort")

    rlo, rhi = row_bounds["rho"]
    rho = m.add_vars(f"{prefix}_rho", rlo, rhi)
    for k in range(D):
        # rho_k = 1 + (k+1) uh_k - sum_{j<=k} uh_j  (0-based k)
        idx = [rho[k]] + [uh[j] for j in range(k + 1)]
        coef = [1.0] + [1.0] * k + [1.0 - (k + 1)]
        m.add_linear(idx, coef, "=", 1.0, category="support")

    alo, ahi = row_bounds["attn"]
    zeta = m.add_vars(f"{prefix}_zeta", np.zeros(D), np.ones(D), binary=True)
    for v in zeta:
        pri(v)
    fixed_one = np.zeros(D, dtype=bool)
    for k in range(D):
        if big_m_negative(k + 1, (ulo, uhi), cfg.eta) is None:
            fixed_one[k] = True
    if use:
        n_sure = int(np.sum(alo > 0))
        n_maybe = int(np.sum(ahi > 0))
        for k in range(D):
            if k < n_sure or rlo[k] > 0:
                fixed_one[k] = True
            elif k >= n_maybe or rhi[k] <= 0:
                m.fix(zeta[k], 0.0)
    for k in range(D):
        if fixed_one[k]:
            m.fix(zeta[k], 1.0)
    for k in range(D):
        m.add_linear([rho[k], zeta[k]], [1.0, -big_m_positive(k + 1)], "<=", 0.0, category="support_bigm")
        if not fixed_one[k]:
            M = big_m_negative(k + 1, (ulo, uhi), cfg.eta)
            m.add_linear([rho[k], zeta[k]], [-1.0, M], "<=", M - cfg.eta, category="support_bigm")
    for k in range(D - 1):
        m.add_linear([zeta[k], zeta[k + 1]], [1.0, -1.0], ">=", 0.0, category="support")
    lb, ub = m.lb, m.ub
    supp = m.add_var(f"{prefix}_supp", float(np.sum(lb[zeta])), float(np.sum(ub[zeta])))
    m.add_linear(np.concatenate([[supp], zeta]), np.concatenate([[1.0], -np.ones(D)]), "=", 0.0, category="support")

    tlo, thi = row_bounds["tau"]
    tau = m.add_var(f"{prefix}_tau", float(tlo), float(thi))
    # tau * s = sum_{k<=s} uh_k - 1, with s = sum zeta and the prefix sum picked by zeta
    m.add_quadratic(
        [],
        [],
        np.concatenate([np.full(D, tau), zeta]),
        np.concatenate([zeta, uh]),
        np.concatenate([np.ones(D), -np.ones(D)]),
        "=",
        -1.0,
        category="threshold",
    )

    dlo, dhi = row_bounds["shift"]
    shift = m.add_vars(f"{prefix}_shift", dlo, dhi)
    for i in range(D):
        m.add_linear([shift[i], u_vars[i], tau], [1.0, -1.0, 1.0], "=", 0.0, category="threshold")
    attn = m.add_vars(f"{prefix}_attn", alo, ahi)
    for i in range(D):
        if use and dlo[i] >= 0:
            m.add_linear([attn[i], shift[i]], [1.0, -1.0], "=", 0.0, category="clip_stable")
        elif use and dhi[i] <= 0:
            m.add_linear([attn[i]], [1.0], "=", 0.0, category="clip_stable")
        else:
            m.add_general("max0", attn[i], shift[i], name=f"{prefix}_clip_{i}", category="clip")
    m.add_linear(attn, np.ones(D), "=", 1.0, category="simplex")
    return {"perm": P, "sorted": uh, "rho": rho, "zeta": zeta, "supp": supp, "tau": tau, "shift": shift, "attn": attn}


def encode_distance(
    x_vars: np.ndarray,
    x: np.ndarray,
    p: float,
    model: MiqcpModel,
    free: np.ndarray | None = None,
    eps_min: float = 0.0,
    eps_max: float | None = None,
) -> int:
    """Add ``D_p(x', x)`` and return its variable (squared distance for ``p = 2``).

    The shell ``eps_min <= D_p <= eps_max`` is imposed on the returned variable's bounds.
    """
    x_vars = np.asarray(x_vars, dtype=np.int64)
    x = np.asarray(x, dtype=np.float64)
    free = np.ones(x.shape, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    if p not in (1, 2, math.inf):
        raise ConfigError(f"unsupported norm p={p}; expected 1, 2 or inf")
    m = model
    lb, ub = m.lb, m.ub
    coords = list(zip(*np.nonzero(free)))
    xv = [int(x_vars[c]) for c in coords]
    dlo = np.array([lb[v] - x[c] for v, c in zip(xv, coords)])
    dhi = np.array([ub[v] - x[c] for v, c in zip(xv, coords)])
    delta = np.array([m.add_var(f"delta_{i}", dlo[i], dhi[i]) for i in range(len(coords))], dtype=np.int64)
    for i, (v, c) in enumerate(zip(xv, coords)):
        m.add_linear([delta[i], v], [1.0, -1.0], "=", -float(x[c]), category="distance")
    amax = np.maximum(np.abs(dlo), np.abs(dhi))
    amin = np.where((dlo > 0) | (dhi < 0), np.minimum(np.abs(dlo), np.abs(dhi)), 0.0)
    hi_total = {1: float(np.sum(amax)), 2: float(np.sum(amax**2))}.get(p, float(np.max(amax, initial=0.0)))
    lo_shell = eps_min if p != 2 else eps_min**2
    hi_shell = hi_total if eps_max is None else (eps_max if p != 2 else eps_max**2)
    hi_shell = min(hi_shell, hi_total) if coords else 0.0
    if lo_shell > hi_shell:
        # empty shell: keep the model well-formed but infeasible
        dist = m.add_var("dist", 0.0, 0.0)
        m.add_linear([dist], [1.0], ">=", lo_shell, category="distance")
    else:
        dist = m.add_var("dist", lo_shell, hi_shell)
    entry = {"delta": delta, "coords": coords, "p": p}
    if p == 2:
        sq = m.add_vars("sq", amin**2, amax**2)
        for i in range(len(delta)):
            m.add_quadratic([sq[i]], [1.0], [delta[i]], [delta[i]], [-1.0], "=", 0.0, category="distance_square")
        m.add_linear(np.concatenate([[dist], sq]), np.concatenate([[1.0], -np.ones(len(sq))]), "=", 0.0, category="distance")
        entry["sq"] = sq
    else:
        absd = m.add_vars("absdelta", amin, amax)
        for i in range(len(delta)):
            m.add_general("abs", absd[i], delta[i], name=f"abs_{i}")
        entry["abs"] = absd
        if p == 1:
            m.add_linear(np.concatenate([[dist], absd]), np.concatenate([[1.0], -np.ones(len(absd))]), "=", 0.0, category="distance")
        else:
            sel = m.add_vars("argmax_delta", np.zeros(len(absd)), np.ones(len(absd)), binary=True)
            top = m.ub[dist]
            for i in range(len(absd)):
                m.add_linear([dist, absd[i]], [1.0, -1.0], ">=", 0.0, category="distance")
                big = top - amin[i]
                m.add_linear([dist, absd[i], sel[i]], [1.0, -1.0, big], "<=", big, category="distance")
            if len(sel):
                m.add_linear(sel, np.ones(len(sel)), "=", 1.0, category="distance")
            entry["sel"] = sel
    entry["dist"] = dist
    m.layout.append(("distance", entry))
    m.meta["distance_var"] = dist
    return dist


def encode(net: NetworkSpec, x, gt: int, bounds: BoundsMap, cfg: EncodingConfig) -> MiqcpModel:
    """Build the model: minimize ``D_p(x', x)`` subject to ``argmax f(x') != gt``
    inside the configured sub-region shell."""
    x = np.asarray(x, dtype=np.float64)
    logits, _ = forward(net, x)
    if int(np.argmax(logits)) != gt:
        raise PreconditionError(f"network predicts {int(np.argmax(logits))} on the clean input, not gt={gt}")
    free = np.ones(x.shape, dtype=bool) if cfg.perturb_mask is None else np.asarray(cfg.perturb_mask, dtype=bool)
    if free.shape != x.shape:
        raise ConfigError(f"perturb_mask shape {free.shape} != input shape {x.shape}")

    m = MiqcpModel("robustness")
    m.meta.update({"gt": int(gt), "p": cfg.p, "eps_min": cfg.eps_min, "eps_max": cfg.eps_max, "margin": cfg.margin, "x": x.copy(), "free": free})
    b = _Builder(m, bounds, cfg)
    L = net.L

    def prio(layer: int, offset: int) -> int | None:
        return 10 * (L - layer) + offset if cfg.priorities else None

    xlo, xhi = bounds["x"]
    xv = m.add_vars("x", np.where(free, xlo, x), np.where(free, xhi, x))
    m.layout.append(("node", "x", xv))
    z = xv
    for i, layer in enumerate(net.layers):
        p = f"l{i}"
        a = b.layer_norm(f"{p}.ln1", z, layer.ln1)
        if isinstance(layer, AttentionLayerSpec):
            mix = _encode_attention(b, p, a, layer, prio(i, 5))
        else:
            mix = b.relu_block(p, "sub", a, layer.sub_w1, layer.sub_b1, layer.sub_w2, layer.sub_b2, f"{p}.mix", prio(i, 5))
        zhat = b.add(f"{p}.zhat", mix, z)
        bb = b.layer_norm(f"{p}.ln2", zhat, layer.ln2)
        ffn = b.relu_block(p, "", bb, layer.mlp_w1, layer.mlp_b1, layer.mlp_w2, layer.mlp_b2, f"{p}.ffn", prio(i, 0))
        z = b.add(f"{p}.z", ffn, zhat)
    lnf = b.layer_norm("lnf", z, net.final_ln)
    mean = b.node("mean")
    for d in range(net.D):
        m.add_linear(np.concatenate([[mean[d]], lnf[:, d]]), np.concatenate([[1.0], -np.full(net.N, 1.0 / net.N)]), "=", 0.0, category="mean")
    lg = b.affine("logits", mean[None, :], net.cls_w, net.cls_b)
    _encode_misprediction(m, bounds, lg, gt, cfg)
    dist = encode_distance(xv, x, cfg.p, m, free, cfg.eps_min, cfg.eps_max)
    m.set_objective([dist], [1.0])
    return m


def _encode_attention(b: _Builder, p: str, a: np.ndarray, layer: AttentionLayerSpec, priority) -> np.ndarray:
    m, bm = b.m, b.bm
    dh = layer.d_head
    scale = 1.0 / math.sqrt(dh)
    N = a.shape[0]
    sas = []
    for h, w in enumerate(layer.w_qkv):
        q = b.affine(f"{p}.q{h}", a, w[:, :dh])
        k = b.affine(f"{p}.k{h}", a, w[:, dh : 2 * dh])
        v = b.affine(f"{p}.v{h}", a, w[:, 2 * dh :])
        score = b.node(f"{p}.score{h}")
        for i in range(N):
            for j in range(N):
                m.add_quadratic([score[i, j]], [1.0], q[i], k[j], np.full(dh, -scale), "=", 0.0, category="score")
        names = ("sorted", "rho", "tau", "shift", "attn")
        rows = {n: [] for n in names + ("perm", "zeta", "supp")}
        slo, shi = bm[f"{p}.score{h}"]
        for i in range(N):
            rb = {"u": (slo[i], shi[i])}
            for n in names:
                lo, hi = bm[f"{p}.{n}{h}"]
                rb[n] = (lo[i], hi[i])
            ids = encode_sparsemax_row(score[i], rb, m, b.cfg, prefix=f"{p}_h{h}_r{i}", priority=priority)
            for n in rows:
                rows[n].append(ids[n])
        for n in names:
            arr = np.array(rows[n], dtype=np.int64)
            m.layout.append(("node", f"{p}.{n}{h}", arr))
        m.layout.append(("perm", f"{p}.score{h}", np.array(rows["perm"], dtype=np.int64)))
        m.layout.append(("zeta", f"{p}.rho{h}", np.array(rows["zeta"], dtype=np.int64)))
        m.layout.append(("supp", f"{p}.supp{h}", np.array(rows["supp"], dtype=np.int64)))
        attn = np.array(rows["attn"], dtype=np.int64)
        sa = b.node(f"{p}.sa{h}")
        for i in range(N):
            for d in range(dh):
                m.add_quadratic([sa[i, d]], [1.0], attn[i], v[:, d], -np.ones(N), "=", 0.0, category="attend")
        sas.append(sa)
    cat = b.alias(f"{p}.cat", np.concatenate(sas, axis=1))
    return b.affine(f"{p}.mix", cat, layer.w_msa)


def _encode_misprediction(m: MiqcpModel, bounds: BoundsMap, lg: np.ndarray, gt: int, cfg: EncodingConfig) -> None:
    lo, hi = bounds["logits"]
    others = [c for c in range(len(lg)) if c != gt]
    if len(others) == 1:
        c = others[0]
        m.add_linear([lg[c], lg[gt]], [1.0, -1.0], ">=", cfg.margin, category="misprediction")
        m.layout.append(("selector", {}))
        return
    sel = {}
    for c in others:
        s = m.add_var(f"wrong_class_{c}", 0.0, 1.0, binary=True)
        sel[c] = s
        big = max(0.0, cfg.margin - (float(lo[c]) - float(hi[gt])))
        if cfg.use_bounds and float(hi[c]) - float(lo[gt]) < cfg.margin:
            m.fix(s, 0.0)
        # lg_c - lg_gt >= margin - big * (1 - s)
        m.add_linear([lg[c], lg[gt], s], [1.0, -1.0, -big], ">=", cfg.margin - big, category="misprediction")
    m.add_linear(list(sel.values()), np.ones(len(sel)), "=", 1.0, category="misprediction")
    m.layout.append(("selector", sel))


def complete_assignment(model: MiqcpModel, net: NetworkSpec, x_prime) -> np.ndarray:
    """Full variable assignment induced by the exact forward pass at ``x_prime``.

    Feasible for the model whenever ``x_prime`` lies in the encoded region and
    is misclassified by at least the margin.
    """
    x_prime = np.asarray(x_prime, dtype=np.float64)
    tr = forward_trace(net, x_prime)
    vals = np.full(model.num_vars, np.nan)
    x = model.meta["x"]
    for entry in model.layout:
        kind = entry[0]
        if kind == "node":
            _, name, ids = entry
            if name == "logits":
                vals[ids.ravel()] = np.asarray(tr[name]).ravel()
            else:
                vals[ids.ravel()] = np.asarray(tr[name]).reshape(ids.shape).ravel()
        elif kind == "perm":
            _, name, ids = entry
            score = tr[name]
            for i in range(ids.shape[0]):
                vals[ids[i].ravel()] = sorting_permutation(score[i]).ravel()
        elif kind == "zeta":
            _, name, ids = entry
            vals[ids.ravel()] = (tr[name] > 0).astype(np.float64).ravel()
        elif kind == "supp":
            _, name, ids = entry
            vals[ids.ravel()] = tr[name].astype(np.float64).ravel()
        elif kind == "relu":
            _, name, ids = entry
            on = (tr[name] > 0).astype(np.float64)
            mask = ids >= 0
            vals[ids[mask]] = on[mask]
        elif kind == "selector":
            sel = entry[1]
            if sel:
                lg = tr["logits"]
                best = max(sel, key=lambda c: lg[c])
                for c, vid in sel.items():
                    vals[vid] = 1.0 if c == best else 0.0
        elif kind == "distance":
            e = entry[1]
            delta = np.array([x_prime[c] - x[c] for c in e["coords"]])
            vals[e["delta"]] = delta
            if e["p"] == 2:
                vals[e["sq"]] = delta**2
                vals[e["dist"]] = float(np.sum(delta**2))
            else:
                vals[e["abs"]] = np.abs(delta)
                if e["p"] == 1:
                    vals[e["dist"]] = float(np.sum(np.abs(delta)))
                else:
                    vals[e["dist"]] = float(np.max(np.abs(delta), initial=0.0))
                    if len(e["sel"]):
                        onehot = np.zeros(len(e["sel"]))
                        onehot[int(np.argmax(np.abs(delta)))] = 1.0
                        vals[e["sel"]] = onehot
    if np.isnan(vals).any():
        missing = [model.var_names[i] for i in np.nonzero(np.isnan(vals))[0][:5]]
        raise RuntimeError(f"assignment incomplete, e.g. {missing}")
    return vals


def input_of(model: MiqcpModel, values) -> np.ndarray:
    """Extract ``x'`` (N x D) from a model assignment."""
    ids = next(e[2] for e in model.layout if e[0] == "node" and e[1] == "x")
    return np.asarray(values, dtype=np.float64)[ids]
