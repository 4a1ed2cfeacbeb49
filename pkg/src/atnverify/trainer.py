"""Synthetic lane-departure data, Adam training and accuracy evaluation.

The generator simulates a vehicle's lateral motion inside its lane with a
smoothed random walk on lateral acceleration. Each sample is the last 10
steps (0.1 s apart) of 14 features, normalized to [0, 1]:

    0, 1    left / right lane exists (binary)
    2       lateral position in the lane (0 = right lane edge, 1 = left)
    3, 4    lateral velocity, lateral acceleration
    5, 6    longitudinal velocity, longitudinal acceleration
    7..13   time to collision for 7 surrounding slots (1 = no vehicle)

Labels come from extrapolating the final lateral state one second ahead
under constant acceleration: class 1 when the vehicle edge crosses the left
boundary first, class 2 for the right one, 0 otherwise. ``gt_reg`` is the
crossing time in seconds (1.0 when there is no departure).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import LossSpec, grad_params
from .network import NetworkSpec, forward_cache, random_network

N_STEPS, N_FEATURES = 10, 14
BINARY_COLUMNS = (0, 1)
DT = 0.1
HORIZON = 1.0
LANE_WIDTH = 3.5
CAR_WIDTH = 1.8
BOUNDARY = (LANE_WIDTH - CAR_WIDTH) / 2  # lateral offset at which the car edge touches a marking

# normalization ranges (physical units)
_LAT_V = (-2.0, 2.0)
_LAT_A = (-3.0, 3.0)
_LON_V = (0.0, 40.0)
_LON_A = (-3.0, 3.0)
_TTC_MAX = 10.0


class TrainingError(RuntimeError):
    pass


@dataclass
class Dataset:
    x: np.ndarray  # (n, 10, 14)
    gt_cls: np.ndarray  # (n,)
    gt_reg: np.ndarray  # (n,)
    binary_columns: tuple = BINARY_COLUMNS
    # final lateral state (position, velocity, acceleration) used for the labels
    state: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.gt_cls = np.asarray(self.gt_cls, dtype=np.int64)
        self.gt_reg = np.asarray(self.gt_reg, dtype=np.float64)
        n = len(self.x)
        if self.x.ndim != 3 or self.gt_cls.shape != (n,) or self.gt_reg.shape != (n,):
            raise ValueError("dataset arrays have inconsistent shapes")
        if np.any((self.gt_reg < 0) | (self.gt_reg > 1)):
            raise ValueError("gt_reg outside [0, 1]")

    def __len__(self):
        return len(self.x)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        st = None if self.state is None else self.state[idx]
        return Dataset(self.x[idx], self.gt_cls[idx], self.gt_reg[idx], self.binary_columns, st)

    def split(self, seed: int = 0, fractions=(0.7, 0.15, 0.15)):
        """Seeded shuffle into train / validation / test."""
        n = len(self)
        perm = np.random.default_rng(seed).permutation(n)
        a = int(round(fractions[0] * n))
        b = a + int(round(fractions[1] * n))
        return self.subset(perm[:a]), self.subset(perm[a:b]), self.subset(perm[b:])


def departure_label(y: float, v: float, a: float, boundary: float = BOUNDARY, horizon: float = HORIZON):
    """First time in ``(0, horizon]`` at which ``y + v t + a t^2 / 2`` reaches ``+-boundary``.

    Returns ``(cls, t)`` with cls 1 for the left (+) side, 2 for the right
    side, and ``(0, horizon)`` without a crossing.
    """
    hits = [(t, cls) for cls, target in ((1, boundary), (2, -boundary))
            for t in _roots(0.5 * a, v, y - target) if 0.0 < t <= horizon]
    if not hits:
        return 0, horizon
    t, cls = min(hits)
    return cls, t


def _roots(qa, qb, qc):
    if abs(qa) < 1e-12:
        return [] if qb == 0 else [-qc / qb]
    disc = qb * qb - 4 * qa * qc
    if disc < 0:
        return []
    s = math.sqrt(disc)
    # numerically stable pair
    q = -0.5 * (qb + math.copysign(s, qb))
    out = [q / qa]
    if q != 0:
        out.append(qc / q)
    return sorted(out)


def _norm(v, lo_hi):
    lo, hi = lo_hi
    return np.clip((v - lo) / (hi - lo), 0.0, 1.0)


def generate_dataset(seed: int = 0, n: int = 5000) -> Dataset:
    """Deterministic synthetic dataset of ``n`` samples."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    X = np.empty((n, N_STEPS, N_FEATURES))
    cls = np.empty(n, dtype=np.int64)
    reg = np.empty(n)
    state = np.empty((n, 3))
    i = 0
    while i < n:
        intent = rng.integers(3)
        drift = (0.0, 0.9, -0.9)[intent] * rng.uniform(0.3, 1.0)
        y = rng.uniform(-0.5, 0.5)
        v = rng.normal(0.0, 0.15)
        a = rng.normal(0.0, 0.2)
        lon_v = rng.uniform(15.0, 35.0)
        lon_a = rng.normal(0.0, 0.4)
        present = rng.random(7) < 0.5
        ttc = rng.uniform(1.5, _TTC_MAX, size=7)
        closing = rng.uniform(-0.5, 1.0, size=7)
        lanes = (rng.random(2) < 0.85).astype(float)
        rows, ok = [], True
        for _ in range(N_STEPS):
            a = 0.7 * a + 0.3 * drift + rng.normal(0.0, 0.15)
            y = y + v * DT + 0.5 * a * DT * DT
            v = v + a * DT
            lon_a = 0.8 * lon_a + rng.normal(0.0, 0.1)
            lon_v = lon_v + lon_a * DT
            ttc = np.maximum(ttc - closing * DT, 0.1)
            if abs(y) >= BOUNDARY:
                ok = False
                break
            t_feat = np.where(present, np.minimum(ttc, _TTC_MAX) / _TTC_MAX, 1.0)
            rows.append(np.concatenate([
                lanes,
                [(y + LANE_WIDTH / 2) / LANE_WIDTH],
                [_norm(v, _LAT_V), _norm(a, _LAT_A), _norm(lon_v, _LON_V), _norm(lon_a, _LON_A)],
                t_feat,
            ]))
        if not ok:
            continue
        X[i] = np.array(rows)
        cls[i], t = departure_label(y, v, a)
        reg[i] = t / HORIZON
        state[i] = (y, v, a)
        i += 1
    return Dataset(X, cls, reg, BINARY_COLUMNS, state)


def relabel(data: Dataset):
    """Labels recomputed from the stored final lateral states."""
    if data.state is None:
        raise ValueError("dataset carries no simulator state")
    out = [departure_label(*s) for s in data.state]
    return np.array([c for c, _ in out], dtype=np.int64), np.array([t / HORIZON for _, t in out])


def csv_header() -> list[str]:
    cols = [f"f_{t}_{k}" for t in range(N_STEPS) for k in range(N_FEATURES)]
    return cols + ["gt_cls", "gt_reg"]


def dataset_to_csv(data: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header())
    for x, c, r in zip(data.x, data.gt_cls, data.gt_reg):
        w.writerow([repr(float(v)) for v in x.ravel()] + [int(c), repr(float(r))])
    return buf.getvalue()


def dataset_from_csv(text: str, N: int = N_STEPS, D: int = N_FEATURES) -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty dataset file")
    head, body = rows[0], [r for r in rows[1:] if r]
    if len(head) != N * D + 2 or head[-2:] != ["gt_cls", "gt_reg"]:
        raise ValueError(f"dataset header must have {N * D} feature columns then gt_cls, gt_reg")
    arr = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, N * D + 2))
    return Dataset(arr[:, : N * D].reshape(-1, N, D), arr[:, -2].astype(np.int64), arr[:, -1])


# -- training ---------------------------------------------------------------


@dataclass
class TrainConfig:
    kind: str = "atn"
    epochs: int = 50
    learning_rate: float = 0.003
    batch_size: int = 64
    heads: int = 2
    d_head: int = 4
    d_mlp: int = 8
    d_sub: int = 16  # MLP variant: hidden width of the block replacing attention
    layers: int = 1
    layer_norm: str = "linear"  # "linear" | "none"
    cls_weight: float = 1.0
    reg_weight: float = 1.0
    init_scale: float = 1.0
    seed: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("atn", "mlp"):
            raise ValueError("kind must be 'atn' or 'mlp'")
        if self.layer_norm not in ("linear", "none"):
            raise ValueError("layer_norm must be 'linear' or 'none'")
        if self.layers not in (1, 2):
            raise ValueError("layers must be 1 or 2")
        for name in ("learning_rate", "batch_size", "heads", "d_head", "d_mlp", "d_sub", "init_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.cls_weight < 0 or self.reg_weight < 0:
            raise ValueError("epochs and loss weights must be non-negative")


class Adam:
    def __init__(self, params: dict, lr=0.003, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            out[k] = p - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return out


def init_network(cfg: TrainConfig, N: int = N_STEPS, D: int = N_FEATURES, C: int = 3) -> NetworkSpec:
    return random_network(
        cfg.kind, N=N, D=D, C=C, L=cfg.layers, heads=cfg.heads, d_head=cfg.d_head,
        d_mlp=cfg.d_mlp, d_sub=cfg.d_sub, layer_norm=cfg.layer_norm == "linear",
        scale=cfg.init_scale, seed=cfg.seed,
    )


def evaluate(net: NetworkSpec, data: Dataset, reg_window: float = 0.1, batch: int = 1024):
    """``(cls_acc, reg_acc)``; regression counts as accurate within ``reg_window`` (inclusive)."""
    if len(data) == 0:
        return 0.0, 0.0
    hits_c = hits_r = 0
    for s in range(0, len(data), batch):
        logits, reg, _ = forward_cache(net, data.x[s : s + batch])
        hits_c += int(np.sum(np.argmax(logits, axis=1) == data.gt_cls[s : s + batch]))
        hits_r += int(np.sum(np.abs(reg - data.gt_reg[s : s + batch]) <= reg_window + 1e-12))
    return hits_c / len(data), hits_r / len(data)


def train(cfg: TrainConfig, train_data: Dataset, val_data: Dataset | None = None, net: NetworkSpec | None = None, log=None) -> NetworkSpec:
    """Adam on cross-entropy + weighted squared error; returns the checkpoint with the best
    validation classification accuracy (ties broken by regression accuracy)."""
    if len(train_data) == 0:
        raise ValueError("training set is empty")
    net = init_network(cfg, train_data.x.shape[1], train_data.x.shape[2]) if net is None else net
    if cfg.epochs == 0:
        return net
    val = val_data if val_data is not None and len(val_data) else train_data
    rng = np.random.default_rng(cfg.seed + 1)
    params = {k: np.array(v) for k, v in net.parameters().items()}
    opt = Adam(params, lr=cfg.learning_rate)
    best, best_key = net, (-1.0, -1.0)
    n = len(train_data)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s : s + cfg.batch_size]
            loss = LossSpec("joint", label=train_data.gt_cls[idx], target=train_data.gt_reg[idx],
                            cls_weight=cfg.cls_weight, reg_weight=cfg.reg_weight)
            value, grads = grad_params(net, train_data.x[idx], loss)
            if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            params = opt.step(params, grads)
            net = net.with_parameters(params)
            total += value * len(idx)
        acc = evaluate(net, val)
        cfg.history.append({"epoch": epoch, "loss": total / n, "val_cls": acc[0], "val_reg": acc[1]})
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs} loss {total / n:.4f} val cls {acc[0]:.4f} reg {acc[1]:.4f}")
        if acc > best_key:
            best, best_key = net, acc
    return best
