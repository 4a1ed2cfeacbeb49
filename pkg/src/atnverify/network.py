"""Network definitions and exact forward inference for sparsemax ATNs and ReLU MLPs.

All arithmetic is float64. A network maps an ``N x D`` token matrix to CLS
logits (``C``) and a scalar REG output. The MLP variant keeps the residual and
layer-norm topology of the ATN but swaps the attention mixer for a second
two-layer ReLU block.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from typing import Any

import numpy as np


class ShapeError(ValueError):
    """Raised when array shapes are inconsistent with the network."""


class InvalidInputError(ValueError):
    """Raised for non-finite numeric input."""


class ModelParseError(ValueError):
    """Raised when a serialized model violates the documented schema."""


def _frozen(a, ndim: int | None = None, name: str = "array") -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: non-finite entries")
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# sparsemax
# ---------------------------------------------------------------------------


def sparsemax_parts(u: np.ndarray):
    """Sparsemax over the last axis, returning intermediate quantities.

    Returns ``(p, tau, sorted_u, rho, support)`` where ``sorted_u`` is ``u``
    sorted in non-increasing order (stable, so ties keep input order),
    ``rho_k = 1 + k*sorted_k - cumsum_k``, and ``support`` is the support size.
    """
    u = np.asarray(u, dtype=np.float64)
    order = np.argsort(-u, axis=-1, kind="stable")
    uh = np.take_along_axis(u, order, axis=-1)
    d = u.shape[-1]
    k = np.arange(1, d + 1, dtype=np.float64)
    cs = np.cumsum(uh, axis=-1)
    rho = 1.0 + k * uh - cs
    # the admissible set {k : rho_k > 0} is a prefix; its size is the support
    support = np.max(np.where(rho > 0, k, 0.0), axis=-1).astype(np.int64)
    support = np.maximum(support, 1)
    csum_s = np.take_along_axis(cs, (support - 1)[..., None], axis=-1)[..., 0]
    tau = (csum_s - 1.0) / support
    p = np.maximum(u - tau[..., None], 0.0)
    return p, tau, uh, rho, support


def sparsemax(u) -> np.ndarray:
    """Euclidean projection of ``u`` onto the probability simplex."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1 or u.size == 0:
        raise ShapeError(f"sparsemax expects a non-empty vector, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("sparsemax input contains non-finite values")
    return sparsemax_parts(u)[0]


def sorting_permutation(u: np.ndarray) -> np.ndarray:
    """Permutation matrix ``P`` with ``P @ u`` sorted non-increasingly (stable)."""
    u = np.asarray(u, dtype=np.float64)
    order = np.argsort(-u, kind="stable")
    P = np.zeros((u.size, u.size))
    P[np.arange(u.size), order] = 1.0
    return P


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerNormSpec:
    """Linearized layer norm ``w_i * (v_i - mean(v)) + b_i``."""

    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen(self.w, 1, "ln.w"))
        object.__setattr__(self, "b", _frozen(self.b, 1, "ln.b"))
        if self.w.shape != self.b.shape:
            raise ShapeError("layer norm w and b differ in length")


@dataclass(frozen=True)
class AttentionLayerSpec:
    w_qkv: tuple  # per head, D x 3*D_H, columns ordered [Q | K | V]
    w_msa: np.ndarray  # (D_H*H) x D
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray
    ln1: LayerNormSpec | None = None
    ln2: LayerNormSpec | None = None

    def __post_init__(self):
        heads = tuple(_frozen(w, 2, "w_qkv") for w in self.w_qkv)
        if not heads:
            raise ShapeError("attention layer needs at least one head")
        object.__setattr__(self, "w_qkv", heads)
        object.__setattr__(self, "w_msa", _frozen(self.w_msa, 2, "w_msa"))
        _freeze_mlp(self, "mlp")
        D = heads[0].shape[0]
        if heads[0].shape[1] % 3:
            raise ShapeError("w_qkv column count must be 3*D_H")
        dh = heads[0].shape[1] // 3
        for w in heads:
            if w.shape != (D, 3 * dh):
                raise ShapeError(f"w_qkv head shape {w.shape} != {(D, 3 * dh)}")
        if self.w_msa.shape != (dh * len(heads), D):
            raise ShapeError(f"w_msa shape {self.w_msa.shape} != {(dh * len(heads), D)}")
        _check_mlp(self, "mlp", D)
        _check_ln(self.ln1, D)
        _check_ln(self.ln2, D)

    @property
    def D(self) -> int:
        return self.w_qkv[0].shape[0]

    @property
    def heads(self) -> int:
        return len(self.w_qkv)

    @property
    def d_head(self) -> int:
        return self.w_qkv[0].shape[1] // 3


@dataclass(frozen=True)
class MLPLayerSpec:
    """MLP-variant layer: the attention mixer is replaced by ``sub_*`` ReLU block."""

    sub_w1: np.ndarray
    sub_b1: np.ndarray
    sub_w2: np.ndarray
    sub_b2: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray
    ln1: LayerNormSpec | None = None
    ln2: LayerNormSpec | None = None

    def __post_init__(self):
        _freeze_mlp(self, "sub")
        _freeze_mlp(self, "mlp")
        D = self.sub_w1.shape[0]
        _check_mlp(self, "sub", D)
        _check_mlp(self, "mlp", D)
        _check_ln(self.ln1, D)
        _check_ln(self.ln2, D)

    @property
    def D(self) -> int:
        return self.sub_w1.shape[0]


def _freeze_mlp(obj, prefix: str) -> None:
    for suffix, nd in (("w1", 2), ("b1", 1), ("w2", 2), ("b2", 1)):
        name = f"{prefix}_{suffix}"
        object.__setattr__(obj, name, _frozen(getattr(obj, name), nd, name))


def _check_mlp(obj, prefix: str, D: int) -> None:
    w1, b1 = getattr(obj, f"{prefix}_w1"), getattr(obj, f"{prefix}_b1")
    w2, b2 = getattr(obj, f"{prefix}_w2"), getattr(obj, f"{prefix}_b2")
    hidden = w1.shape[1]
    if w1.shape[0] != D:
        raise ShapeError(f"{prefix}_w1 has {w1.shape[0]} rows, expected {D}")
    if b1.shape != (hidden,):
        raise ShapeError(f"{prefix}_b1 length {b1.shape[0]} != {hidden}")
    if w2.shape != (hidden, D):
        raise ShapeError(f"{prefix}_w2 shape {w2.shape} != {(hidden, D)}")
    if b2.shape != (D,):
        raise ShapeError(f"{prefix}_b2 length {b2.shape[0]} != {D}")


def _check_ln(ln: LayerNormSpec | None, D: int) -> None:
    if ln is not None and ln.w.shape != (D,):
        raise ShapeError(f"layer norm length {ln.w.shape[0]} != {D}")


@dataclass(frozen=True)
class NetworkSpec:
    kind: str  # "atn" | "mlp"
    N: int
    D: int
    C: int
    layers: tuple
    cls_w: np.ndarray  # D x C
    cls_b: np.ndarray  # C
    reg_w: np.ndarray  # D x 1
    reg_b: np.ndarray  # 1
    final_ln: LayerNormSpec | None = None

    def __post_init__(self):
        if self.kind not in ("atn", "mlp"):
            raise ModelParseError(f"kind: expected 'atn' or 'mlp', got {self.kind!r}")
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) < 1:
            raise ShapeError("network needs at least one layer")
        if self.C < 2:
            raise ShapeError("class count C must be >= 2")
        want = AttentionLayerSpec if self.kind == "atn" else MLPLayerSpec
        for i, layer in enumerate(self.layers):
            if not isinstance(layer, want):
                raise ShapeError(f"layer {i} is not a {want.__name__}")
            if layer.D != self.D:
                raise ShapeError(f"layer {i} feature dim {layer.D} != {self.D}")
        object.__setattr__(self, "cls_w", _frozen(self.cls_w, 2, "cls_head.w"))
        object.__setattr__(self, "cls_b", _frozen(self.cls_b, 1, "cls_head.b"))
        object.__setattr__(self, "reg_w", _frozen(np.reshape(self.reg_w, (-1, 1)), 2, "reg_head.w"))
        object.__setattr__(self, "reg_b", _frozen(np.reshape(self.reg_b, (1,)), 1, "reg_head.b"))
        if self.cls_w.shape != (self.D, self.C) or self.cls_b.shape != (self.C,):
            raise ShapeError("cls_head shapes inconsistent with D, C")
        if self.reg_w.shape != (self.D, 1):
            raise ShapeError("reg_head.w must be D x 1")
        _check_ln(self.final_ln, self.D)

    @property
    def L(self) -> int:
        return len(self.layers)

    def parameters(self) -> dict[str, np.ndarray]:
        """Flat ``name -> array`` view of every trainable weight."""
        out: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            for f in fields(layer):
                val = getattr(layer, f.name)
                key = f"layers.{i}.{f.name}"
                if isinstance(val, LayerNormSpec):
                    out[key + ".w"] = val.w
                    out[key + ".b"] = val.b
                elif isinstance(val, tuple):
                    for h, w in enumerate(val):
                        out[f"{key}.{h}"] = w
                elif val is not None:
                    out[key] = val
        if self.final_ln is not None:
            out["final_ln.w"] = self.final_ln.w
            out["final_ln.b"] = self.final_ln.b
        out["cls_w"], out["cls_b"] = self.cls_w, self.cls_b
        out["reg_w"], out["reg_b"] = self.reg_w, self.reg_b
        return out

    def with_parameters(self, params: dict[str, np.ndarray]) -> "NetworkSpec":
        """Return a copy with weights taken from ``params`` (same keys as ``parameters``)."""
        layers = []
        for i, layer in enumerate(self.layers):
            kw: dict[str, Any] = {}
            for f in fields(layer):
                val = getattr(layer, f.name)
                key = f"layers.{i}.{f.name}"
                if isinstance(val, LayerNormSpec):
                    kw[f.name] = LayerNormSpec(params[key + ".w"], params[key + ".b"])
                elif isinstance(val, tuple):
                    kw[f.name] = tuple(params[f"{key}.{h}"] for h in range(len(val)))
                elif val is not None:
                    kw[f.name] = params[key]
            layers.append(replace(layer, **kw))
        final_ln = None
        if self.final_ln is not None:
            final_ln = LayerNormSpec(params["final_ln.w"], params["final_ln.b"])
        return replace(
            self,
            layers=tuple(layers),
            final_ln=final_ln,
            cls_w=params["cls_w"],
            cls_b=params["cls_b"],
            reg_w=params["reg_w"],
            reg_b=params["reg_b"],
        )


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def layer_norm_linear(v, spec: LayerNormSpec) -> np.ndarray:
    """``w * (v - mean(v)) + b`` over the last axis."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != spec.w.shape[0]:
        raise ShapeError(f"layer norm expects length {spec.w.shape[0]}, got {v.shape[-1]}")
    return spec.w * (v - v.mean(axis=-1, keepdims=True)) + spec.b


def _ln(v, spec):
    return v if spec is None else layer_norm_linear(v, spec)


def _attention(a: np.ndarray, layer: AttentionLayerSpec, prefix: str, cache: dict) -> np.ndarray:
    dh = layer.d_head
    scale = 1.0 / math.sqrt(dh)
    sas = []
    for h, w in enumerate(layer.w_qkv):
        qkv = a @ w
        q, k, v = qkv[..., :dh], qkv[..., dh : 2 * dh], qkv[..., 2 * dh :]
        score = (q @ np.swapaxes(k, -1, -2)) * scale
        attn, tau, srt, rho, supp = sparsemax_parts(score)
        sa = attn @ v
        cache.update(
            {
                f"{prefix}.q{h}": q,
                f"{prefix}.k{h}": k,
                f"{prefix}.v{h}": v,
                f"{prefix}.score{h}": score,
                f"{prefix}.sorted{h}": srt,
                f"{prefix}.rho{h}": rho,
                f"{prefix}.tau{h}": tau,
                f"{prefix}.supp{h}": supp,
                f"{prefix}.shift{h}": score - tau[..., None],
                f"{prefix}.attn{h}": attn,
                f"{prefix}.sa{h}": sa,
            }
        )
        sas.append(sa)
    cat = np.concatenate(sas, axis=-1)
    cache[f"{prefix}.cat"] = cat
    return cat @ layer.w_msa


def _relu_block(a, w1, b1, w2, b2, prefix: str, tag: str, cache: dict) -> np.ndarray:
    hid = a @ w1 + b1
    act = np.maximum(hid, 0.0)
    cache[f"{prefix}.{tag}hid"] = hid
    cache[f"{prefix}.{tag}act"] = act
    return act @ w2 + b2


def forward_cache(net: NetworkSpec, x) -> tuple[np.ndarray, np.ndarray, dict]:
    """Forward over a batch ``(B, N, D)`` (or a single ``(N, D)``) keeping every intermediate.

    Cache keys: ``x``; per layer ``l{i}.ln1, .q{h}, .k{h}, .v{h}, .score{h}``
    (scaled scores), ``.sorted{h}, .rho{h}, .tau{h}, .supp{h}, .shift{h}``
    (score minus tau), ``.attn{h}, .sa{h}, .cat`` or ``.subhid, .subact``;
    ``.mix, .zhat, .ln2, .hid, .act, .ffn, .z``; then ``lnf, mean, logits, reg``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2:] != (net.N, net.D):
        raise ShapeError(f"input shape {x.shape} does not match N={net.N}, D={net.D}")
    cache: dict[str, np.ndarray] = {"x": x}
    z = x
    for i, layer in enumerate(net.layers):
        p = f"l{i}"
        cache[f"{p}.zin"] = z
        a = _ln(z, layer.ln1)
        cache[f"{p}.ln1"] = a
        if isinstance(layer, AttentionLayerSpec):
            mix = _attention(a, layer, p, cache)
        else:
            mix = _relu_block(a, layer.sub_w1, layer.sub_b1, layer.sub_w2, layer.sub_b2, p, "sub", cache)
        cache[f"{p}.mix"] = mix
        zhat = mix + z
        cache[f"{p}.zhat"] = zhat
        b = _ln(zhat, layer.ln2)
        cache[f"{p}.ln2"] = b
        ffn = _relu_block(b, layer.mlp_w1, layer.mlp_b1, layer.mlp_w2, layer.mlp_b2, p, "", cache)
        cache[f"{p}.ffn"] = ffn
        z = ffn + zhat
        cache[f"{p}.z"] = z
    lnf = _ln(z, net.final_ln)
    mean = lnf.mean(axis=-2)
    logits = mean @ net.cls_w + net.cls_b
    reg = (mean @ net.reg_w)[..., 0] + net.reg_b[0]
    cache.update({"lnf": lnf, "mean": mean, "logits": logits, "reg": reg})
    return logits, reg, cache


def forward(net: NetworkSpec, x) -> tuple[np.ndarray, float]:
    """Exact inference on one input ``x`` (N x D): ``(cls_logits, reg)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"forward expects an N x D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("input contains non-finite values")
    logits, reg, _ = forward_cache(net, x)
    return logits, float(reg)


def forward_trace(net: NetworkSpec, x) -> dict[str, np.ndarray]:
    """Every intermediate quantity of ``forward`` for a single input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"forward_trace expects an N x D matrix, got shape {x.shape}")
    return forward_cache(net, x)[2]


def predict(net: NetworkSpec, x) -> int:
    return int(np.argmax(forward(net, x)[0]))


def msa(z, layer: AttentionLayerSpec) -> np.ndarray:
    """Multi-head sparsemax self-attention of ``z`` (N x D)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != layer.D:
        raise ShapeError(f"msa expects N x {layer.D}, got {z.shape}")
    return _attention(z, layer, "msa", {})


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _enc(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _dec(obj, path: str, ndim: int) -> np.ndarray:
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise ModelParseError(f"{path}: expected an object with 'shape' and 'data'")
    shape, data = obj["shape"], obj["data"]
    if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise ModelParseError(f"{path}.shape: expected a list of non-negative integers")
    if len(shape) != ndim:
        raise ShapeError(f"{path}: expected {ndim}-d shape, got {shape}")
    if not isinstance(data, list) or not all(isinstance(v, (int, float)) for v in data):
        raise ModelParseError(f"{path}.data: expected a list of numbers")
    if len(data) != math.prod(shape):
        raise ShapeError(f"{path}: data length {len(data)} != prod(shape) {math.prod(shape)}")
    return np.array(data, dtype=np.float64).reshape(shape)


def _enc_ln(ln: LayerNormSpec | None):
    return None if ln is None else {"w": _enc(ln.w), "b": _enc(ln.b)}


def _dec_ln(obj, path: str):
    if obj is None:
        return None
    if not isinstance(obj, dict):
        raise ModelParseError(f"{path}: expected object or null")
    return LayerNormSpec(_dec(_field(obj, "w", path), f"{path}.w", 1), _dec(_field(obj, "b", path), f"{path}.b", 1))


def _field(obj: dict, key: str, path: str):
    if key not in obj:
        raise ModelParseError(f"{path}.{key}: missing field")
    return obj[key]


_MLP_KEYS = (("w1", 2), ("b1", 1), ("w2", 2), ("b2", 1))


def net_to_dict(net: NetworkSpec) -> dict:
    layers = []
    for layer in net.layers:
        d: dict[str, Any] = {}
        if isinstance(layer, AttentionLayerSpec):
            d["w_qkv"] = [_enc(w) for w in layer.w_qkv]
            d["w_msa"] = _enc(layer.w_msa)
        else:
            for k, _ in _MLP_KEYS:
                d[f"sub_{k}"] = _enc(getattr(layer, f"sub_{k}"))
        for k, _ in _MLP_KEYS:
            d[f"mlp_{k}"] = _enc(getattr(layer, f"mlp_{k}"))
        d["ln1"] = _enc_ln(layer.ln1)
        d["ln2"] = _enc_ln(layer.ln2)
        layers.append(d)
    return {
        "kind": net.kind,
        "N": net.N,
        "D": net.D,
        "C": net.C,
        "layers": layers,
        "final_ln": _enc_ln(net.final_ln),
        "cls_head": {"w": _enc(net.cls_w), "b": _enc(net.cls_b)},
        "reg_head": {"w": _enc(net.reg_w), "b": _enc(net.reg_b)},
    }


def net_from_dict(obj: dict) -> NetworkSpec:
    if not isinstance(obj, dict):
        raise ModelParseError("model: expected a JSON object")
    kind = _field(obj, "kind", "model")
    if kind not in ("atn", "mlp"):
        raise ModelParseError(f"model.kind: expected 'atn' or 'mlp', got {kind!r}")
    dims = {}
    for key in ("N", "D", "C"):
        v = _field(obj, key, "model")
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ModelParseError(f"model.{key}: expected a positive integer")
        dims[key] = v
    raw_layers = _field(obj, "layers", "model")
    if not isinstance(raw_layers, list):
        raise ModelParseError("model.layers: expected a list")
    layers = []
    for i, ld in enumerate(raw_layers):
        path = f"model.layers[{i}]"
        if not isinstance(ld, dict):
            raise ModelParseError(f"{path}: expected an object")
        kw: dict[str, Any] = {}
        for k, nd in _MLP_KEYS:
            kw[f"mlp_{k}"] = _dec(_field(ld, f"mlp_{k}", path), f"{path}.mlp_{k}", nd)
        kw["ln1"] = _dec_ln(ld.get("ln1"), f"{path}.ln1")
        kw["ln2"] = _dec_ln(ld.get("ln2"), f"{path}.ln2")
        if kind == "atn":
            heads = _field(ld, "w_qkv", path)
            if not isinstance(heads, list):
                raise ModelParseError(f"{path}.w_qkv: expected a list of matrices")
            kw["w_qkv"] = tuple(_dec(w, f"{path}.w_qkv[{h}]", 2) for h, w in enumerate(heads))
            kw["w_msa"] = _dec(_field(ld, "w_msa", path), f"{path}.w_msa", 2)
            layers.append(AttentionLayerSpec(**kw))
        else:
            for k, nd in _MLP_KEYS:
                kw[f"sub_{k}"] = _dec(_field(ld, f"sub_{k}", path), f"{path}.sub_{k}", nd)
            layers.append(MLPLayerSpec(**kw))
    cls = _field(obj, "cls_head", "model")
    reg = _field(obj, "reg_head", "model")
    return NetworkSpec(
        kind=kind,
        layers=tuple(layers),
        final_ln=_dec_ln(obj.get("final_ln"), "model.final_ln"),
        cls_w=_dec(_field(cls, "w", "model.cls_head"), "model.cls_head.w", 2),
        cls_b=_dec(_field(cls, "b", "model.cls_head"), "model.cls_head.b", 1),
        reg_w=_dec(_field(reg, "w", "model.reg_head"), "model.reg_head.w", 2),
        reg_b=_dec(_field(reg, "b", "model.reg_head"), "model.reg_head.b", 1),
        **dims,
    )


def save_model(net: NetworkSpec) -> bytes:
    return json.dumps(net_to_dict(net), indent=1).encode()


def load_model(serialized: bytes | str) -> NetworkSpec:
    try:
        obj = json.loads(serialized)
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"model: invalid JSON ({exc})") from exc
    net = net_from_dict(obj)
    if net.N < 1:
        raise ShapeError("N must be positive")
    return net


def random_network(
    kind: str = "atn",
    N: int = 3,
    D: int = 4,
    C: int = 3,
    L: int = 1,
    heads: int = 2,
    d_head: int = 2,
    d_mlp: int = 4,
    d_sub: int = 8,
    layer_norm: bool = True,
    scale: float = 0.5,
    seed: int | np.random.Generator = 0,
) -> NetworkSpec:
    """Seeded random network, used for tests and desk-scale experiments."""
    rng = np.random.default_rng(seed)

    def mat(r, c, s=scale):
        return rng.normal(0.0, s / math.sqrt(r), size=(r, c))

    def ln():
        if not layer_norm:
            return None
        return LayerNormSpec(1.0 + 0.1 * rng.normal(size=D), 0.1 * rng.normal(size=D))

    layers = []
    for _ in range(L):
        common = dict(
            mlp_w1=mat(D, d_mlp),
            mlp_b1=0.1 * rng.normal(size=d_mlp),
            mlp_w2=mat(d_mlp, D),
            mlp_b2=0.1 * rng.normal(size=D),
            ln1=ln(),
            ln2=ln(),
        )
        if kind == "atn":
            layers.append(
                AttentionLayerSpec(
                    w_qkv=tuple(mat(D, 3 * d_head, 1.0) for _ in range(heads)),
                    w_msa=mat(d_head * heads, D),
                    **common,
                )
            )
        else:
            layers.append(
                MLPLayerSpec(
                    sub_w1=mat(D, d_sub),
                    sub_b1=0.1 * rng.normal(size=d_sub),
                    sub_w2=mat(d_sub, D),
                    sub_b2=0.1 * rng.normal(size=D),
                    **common,
                )
            )
    return NetworkSpec(
        kind=kind,
        N=N,
        D=D,
        C=C,
        layers=tuple(layers),
        final_ln=ln(),
        cls_w=mat(D, C, 1.0),
        cls_b=0.1 * rng.normal(size=C),
        reg_w=mat(D, 1, 1.0),
        reg_b=np.array([0.5]),
    )
