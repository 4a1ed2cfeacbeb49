"""Command-line interface: ``atnverify {generate-data,train,attack,verify,ablate,compare,export-model}``.

Exit codes: 0 success, 1 error, 2 undetermined (verification ran out of time).
Environment: ``ATNVERIFY_THREADS`` and ``ATNVERIFY_SEED`` supply defaults for
``--threads`` and ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .attack import AttackConfig, lp_norm, pgd
from .encoder import EncodingConfig, encode
from .interval import propagate
from .lpformat import export_standard_format
from .network import forward, load_model, predict, save_model
from .trainer import TrainConfig, dataset_from_csv, dataset_to_csv, evaluate, generate_dataset, train
from .verifier import OPT, SAT, UNDTM, UNSAT, Heuristics, VerificationQuery, subregion_box, verify

log = logging.getLogger("atnverify")

EXIT_OK, EXIT_ERROR, EXIT_UNDTM = 0, 1, 2

ABLATION_GRID = (
    "control",
    "ia",
    "ia-sigma",
    "rp:{step}",
    "ia,rp:{step}",
    "ia-sigma,rp:{step}",
    "ia-sigma,rp:{step},hints,priorities",
)
ABLATE_HEADER = ["heuristics", "mean_time", "best_time", "worst_time", "mean_nodes", "total_nodes", "statuses"]
COMPARE_HEADER = [
    "sample_index", "atn_status", "atn_value", "atn_marker", "atn_time",
    "mlp_status", "mlp_value", "mlp_marker", "mlp_time",
]


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the generic error code (2 is reserved for UNDTM)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# -- argument helpers --------------------------------------------------------


def _env_int(name, default):
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{name} must be an integer, got {raw!r}") from None


def _parse_p(text: str):
    t = str(text).strip().lower()
    if t in ("inf", "infinity", "linf"):
        return math.inf
    try:
        v = float(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"must be 1, 2 or inf, got {text!r}") from None
    if v not in (1.0, 2.0):
        raise argparse.ArgumentTypeError(f"must be 1, 2 or inf, got {text!r}")
    return int(v)


def parse_mask(spec: str | None, N: int, D: int, binary_columns=()) -> np.ndarray:
    """Perturbation mask (True = may change).

    ``spec`` is a comma list of ``token:T`` (every feature of token T),
    ``feature:K`` (feature K of every token), ``T:K`` (one coordinate) or
    ``all``; ``None`` means all coordinates. Binary columns are fixed
    afterwards in every case.
    """
    if spec is None or spec.strip() in ("", "all"):
        mask = np.ones((N, D), dtype=bool)
    else:
        mask = np.zeros((N, D), dtype=bool)
        for item in (s.strip() for s in spec.split(",")):
            if not item:
                continue
            if item == "all":
                mask[:] = True
                continue
            head, _, tail = item.partition(":")
            try:
                if head == "token":
                    t = int(tail)
                    _check_index(t, N, "token")
                    mask[t, :] = True
                elif head == "feature":
                    k = int(tail)
                    _check_index(k, D, "feature")
                    mask[:, k] = True
                else:
                    t, k = int(head), int(tail)
                    _check_index(t, N, "token")
                    _check_index(k, D, "feature")
                    mask[t, k] = True
            except ValueError:
                raise CliError(f"bad mask item {item!r}") from None
    for c in binary_columns:
        mask[:, c] = False
    return mask


def _check_index(i, n, what):
    if not -n <= i < n:
        raise CliError(f"{what} index {i} out of range 0..{n - 1}")


def binary_columns_of(X: np.ndarray) -> tuple:
    """Columns whose every value in the data is 0 or 1."""
    if X.size == 0:
        return ()
    flat = X.reshape(-1, X.shape[-1])
    return tuple(int(k) for k in range(flat.shape[1]) if np.all((flat[:, k] == 0) | (flat[:, k] == 1)))


def _read_model(path):
    if path is None:
        raise CliError("--model is required")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"model file not found: {path}")
    return load_model(p.read_text())


def _read_data(path, net):
    if path is None:
        raise CliError("--data is required")
    p = Path(path)
    if not p.is_file():
        raise CliError(f"data file not found: {path}")
    return dataset_from_csv(p.read_text(), net.N, net.D)


def _indices(text: str | None, n: int, default=(0,)):
    if text is None:
        idx = list(default)
    else:
        idx = []
        for part in text.split(","):
            part = part.strip()
            if "-" in part[1:]:
                a, b = part.split("-", 1)
                idx.extend(range(int(a), int(b) + 1))
            elif part:
                idx.append(int(part))
    for i in idx:
        if not 0 <= i < n:
            raise CliError(f"sample index {i} out of range (dataset has {n} samples)")
    return idx


def _emit(text: str, out: str | None):
    if out is None or out == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text)
        log.info("wrote %s", out)


def _mask_for(args, net, data):
    cols = () if args.no_auto_mask else binary_columns_of(data.x)
    return parse_mask(args.mask, net.N, net.D, cols)


def _query(args, net, x, gt, mask, heuristics=None, step=None) -> VerificationQuery:
    if heuristics is None:
        heuristics, step_h = Heuristics.parse(args.heuristics)
        step = args.eps_step if args.eps_step is not None else step_h
    return VerificationQuery(
        net=net, x=x, gt=gt, p=args.p, eps=args.eps, eps_step=step, t_limit=args.time_limit,
        node_limit=args.node_limit,
        perturb_mask=mask, heuristics=heuristics, seed=args.seed, threads=args.threads,
        node_log=getattr(args, "verbose", False),
    )


# -- subcommands ---------------------------------------------------------------


def cmd_generate_data(args) -> int:
    data = generate_dataset(args.seed, args.samples)
    _emit(dataset_to_csv(data), args.out)
    counts = np.bincount(data.gt_cls, minlength=3)
    log.info("generated %d samples, classes %s", len(data), counts.tolist())
    return EXIT_OK


def cmd_train(args) -> int:
    if args.data is not None:
        p = Path(args.data)
        if not p.is_file():
            raise CliError(f"data file not found: {args.data}")
        data = dataset_from_csv(p.read_text())
    else:
        data = generate_dataset(args.seed, args.samples)
    tr, va, te = data.split(args.seed)
    cfg = TrainConfig(
        kind=args.kind, epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size,
        layers=args.layers, layer_norm=args.layer_norm, cls_weight=args.cls_weight,
        reg_weight=args.reg_weight, seed=args.seed,
    )
    net = train(cfg, tr, va, log=log.info)
    cls_acc, reg_acc = evaluate(net, te)
    if args.out is None:
        raise CliError("--out is required for train")
    Path(args.out).write_bytes(save_model(net))
    report = {"kind": args.kind, "test_cls_acc": cls_acc, "test_reg_acc": reg_acc,
              "train": len(tr), "val": len(va), "test": len(te), "history": cfg.history, "seed": args.seed}
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2))
    print(json.dumps({k: report[k] for k in ("kind", "test_cls_acc", "test_reg_acc")}))
    return EXIT_OK


def cmd_attack(args) -> int:
    net = _read_model(args.model)
    data = _read_data(args.data, net)
    (i,) = _indices(str(args.sample_index), len(data))
    x = data.x[i]
    gt = predict(net, x)
    mask = _mask_for(args, net, data)
    cfg = AttackConfig(eps=args.eps, p=args.p, steps=args.steps, restarts=args.restarts, seed=args.seed, perturb_mask=mask)
    xp = pgd(net, x, gt, cfg)
    out = {
        "sample_index": i,
        "gt": int(gt),
        "found": xp is not None,
        "counterexample": None if xp is None else xp.tolist(),
        "distortion": None if xp is None else lp_norm(xp - x, args.p),
        "predicted": None if xp is None else predict(net, xp),
        "p": _p_json(args.p),
        "eps": args.eps,
        "seed": args.seed,
    }
    _emit(json.dumps(out, indent=2), args.out)
    return EXIT_OK


def _p_json(p):
    return "inf" if p == math.inf else p


def _verify_one(payload):
    """Worker body shared by ``verify``, ``ablate`` and ``compare``."""
    model_bytes, x, gt, qargs = payload
    from .network import load_model as _load

    net = _load(model_bytes)
    h = Heuristics(**qargs.pop("heuristics"))
    q = VerificationQuery(net=net, x=np.asarray(x), gt=gt, heuristics=h, **qargs)
    return verify(q).to_dict()


def _payload(net, x, gt, q: VerificationQuery):
    d = dict(p=q.p, eps=q.eps, eps_step=q.eps_step, t_limit=q.t_limit, node_limit=q.node_limit, perturb_mask=q.perturb_mask,
             seed=q.seed, threads=1, node_log=False)
    d["heuristics"] = {"ia": q.heuristics.ia, "ia_sigma": q.heuristics.ia_sigma,
                       "hints": q.heuristics.hints, "priorities": q.heuristics.priorities}
    return (save_model(net), np.asarray(x), int(gt), d)


def _run_many(payloads, threads):
    if threads > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(_verify_one, payloads))
    return [_verify_one(p) for p in payloads]


def cmd_verify(args) -> int:
    net = _read_model(args.model)
    data = _read_data(args.data, net)
    (i,) = _indices(str(args.sample_index), len(data))
    x = data.x[i]
    gt = int(data.gt_cls[i]) if args.gt is None else args.gt
    if args.use_prediction:
        gt = predict(net, x)
    mask = _mask_for(args, net, data)
    q = _query(args, net, x, gt, mask)
    res = verify(q)
    d = res.to_dict()
    d["p"] = _p_json(args.p)
    d["eps"] = args.eps
    d["sample_index"] = i
    d["gt"] = gt
    _emit(json.dumps(d, indent=2), args.out)
    log.info("status %s objective %s lower bound %s", res.status, res.objective, res.lower_bound)
    return EXIT_UNDTM if res.status == UNDTM else EXIT_OK


def cmd_ablate(args) -> int:
    net = _read_model(args.model)
    data = _read_data(args.data, net)
    idx = _indices(args.sample_index, len(data), default=range(min(5, len(data))))
    mask = _mask_for(args, net, data)
    step = args.eps_step if args.eps_step is not None else args.eps / 5
    grid = args.grid.split(";") if args.grid else [g.format(step=f"{step:g}") for g in ABLATION_GRID]
    points = []
    for i in idx:
        x = data.x[i]
        gt = predict(net, x)
        points.append((i, x, gt))
    rows = []
    for spec in grid:
        h, st = Heuristics.parse(spec)
        payloads = [_payload(net, x, gt, _query(args, net, x, gt, mask, h, st)) for _, x, gt in points]
        results = _run_many(payloads, args.threads)
        times = [r["elapsed"] for r in results]
        nodes = [sum(s["nodes"] for s in r["shells"]) for r in results]
        rows.append({
            "heuristics": spec,
            "mean_time": statistics.fmean(times),
            "best_time": min(times),
            "worst_time": max(times),
            "mean_nodes": statistics.fmean(nodes),
            "total_nodes": sum(nodes),
            "statuses": ";".join(f"{i}={r['status']}" for (i, _, _), r in zip(points, results)),
        })
        log.info("%s: mean %.3fs nodes %d", spec, rows[-1]["mean_time"], rows[-1]["total_nodes"])
    _emit(_csv(ABLATE_HEADER, rows), args.out)
    return EXIT_OK


def marker(status: str) -> str:
    """Plot marker semantics: exact value, certified lower bound, or beyond the ball."""
    return {OPT: "exact", SAT: "lower", UNDTM: "lower", UNSAT: "geq"}[status]


def reported_value(res: dict, eps: float) -> float:
    if res["status"] == OPT:
        return res["objective"]
    if res["status"] == UNSAT:
        return eps
    return res["lower_bound"]


def cmd_compare(args) -> int:
    if not args.model or len(args.model) != 2:
        raise CliError("compare needs --model ATN --model MLP")
    nets = [_read_model(m) for m in args.model]
    if nets[0].kind != "atn" or nets[1].kind != "mlp":
        log.warning("compare expects an ATN then an MLP; got %s, %s", nets[0].kind, nets[1].kind)
    if (nets[0].N, nets[0].D) != (nets[1].N, nets[1].D):
        raise CliError("models disagree on input shape")
    data = _read_data(args.data, nets[0])
    mask = _mask_for(args, nets[0], data)
    if args.sample_index is not None:
        candidates = _indices(args.sample_index, len(data))
    else:
        candidates = list(np.random.default_rng(args.seed).permutation(len(data)))
    chosen, skipped = [], 0
    for i in candidates:
        i = int(i)
        gt = int(data.gt_cls[i])
        if all(predict(n, data.x[i]) == gt for n in nets):
            chosen.append(i)
        else:
            skipped += 1
            if args.sample_index is not None:
                log.warning("sample %d skipped: not predicted correctly by both models", i)
        if args.sample_index is None and len(chosen) >= args.samples:
            break
    h, st = Heuristics.parse(args.heuristics)
    step = args.eps_step if args.eps_step is not None else st
    results = []
    for net in nets:
        payloads = [_payload(net, data.x[i], int(data.gt_cls[i]), _query(args, net, data.x[i], int(data.gt_cls[i]), mask, h, step)) for i in chosen]
        results.append(_run_many(payloads, args.threads))
    rows = []
    for k, i in enumerate(chosen):
        a, m = results[0][k], results[1][k]
        rows.append({
            "sample_index": i,
            "atn_status": a["status"], "atn_value": reported_value(a, args.eps), "atn_marker": marker(a["status"]), "atn_time": a["elapsed"],
            "mlp_status": m["status"], "mlp_value": reported_value(m, args.eps), "mlp_marker": marker(m["status"]), "mlp_time": m["elapsed"],
        })
    _emit(_csv(COMPARE_HEADER, rows), args.out)
    log.info("compared %d samples (%d skipped)", len(rows), skipped)
    return EXIT_OK


def cmd_export_model(args) -> int:
    net = _read_model(args.model)
    data = _read_data(args.data, net)
    (i,) = _indices(str(args.sample_index), len(data))
    x = data.x[i]
    gt = predict(net, x)
    mask = _mask_for(args, net, data)
    h, _ = Heuristics.parse(args.heuristics)
    emax = args.eps if args.eps_step is None else min(args.eps_step, args.eps)
    box = subregion_box(x, emax, args.p, mask)["x"]
    if h.ia:
        bounds = propagate(net, box, sigma=h.ia_sigma, ball=(x, emax, args.p))
    else:
        bounds = propagate(net, subregion_box(x, args.eps, args.p, mask)["x"], sigma=False)
    cfg = EncodingConfig(p=args.p, eps=args.eps, eps_min=0.0, eps_max=emax, perturb_mask=mask, use_bounds=h.ia, priorities=h.priorities)
    model = encode(net, x, gt, bounds, cfg)
    if args.out is None:
        raise CliError("--out is required for export-model")
    Path(args.out).write_text(export_standard_format(model))
    stats = model.stats()
    stats.update({"sample_index": i, "gt": gt, "eps": args.eps, "eps_max": emax, "p": _p_json(args.p)})
    stats_path = args.stats or str(Path(args.out).with_suffix(".stats.json"))
    Path(stats_path).write_text(json.dumps(stats, indent=2))
    print(json.dumps({"lp": args.out, "stats": stats_path, "binary": stats["binary"], "variables": stats["variables"]}))
    return EXIT_OK


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="atnverify", description="Exact robustness verification for sparsemax attention networks and ReLU MLPs.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, model=True, data=True, query=True):
        p.add_argument("--seed", type=int, default=None, help="seed (default $ATNVERIFY_SEED or 0)")
        p.add_argument("--threads", type=int, default=None, help="worker processes (default $ATNVERIFY_THREADS or CPU count)")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--verbose", "-v", action="store_true")
        if model:
            p.add_argument("--model", help="model JSON")
        if data:
            p.add_argument("--data", help="dataset CSV")
        if query:
            p.add_argument("--eps", type=float, default=0.03)
            p.add_argument("--eps-step", type=float, default=None)
            p.add_argument("--p", type=_parse_p, default=1, help="norm: 1, 2 or inf")
            p.add_argument("--time-limit", type=float, default=60.0, help="seconds per query")
            p.add_argument("--node-limit", type=int, default=None, help="branch-and-bound nodes per query (deterministic budget)")
            p.add_argument("--mask", default=None, help="perturbable coordinates, e.g. 'token:9' or '0:3,1:4'")
            p.add_argument("--no-auto-mask", action="store_true", help="do not fix binary-valued columns")
            p.add_argument("--heuristics", default="ia,ia-sigma,hints,priorities", help="comma list of ia, ia-sigma, rp:STEP, hints, priorities (or 'control')")

    g = sub.add_parser("generate-data", help="write a synthetic lane-departure dataset")
    common(g, model=False, data=False, query=False)
    g.add_argument("--samples", type=int, default=5000)
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="train an ATN or MLP")
    common(t, model=False, query=False)
    t.add_argument("--kind", choices=("atn", "mlp"), default="atn")
    t.add_argument("--samples", type=int, default=5000, help="synthetic samples when --data is not given")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--lr", type=float, default=0.003)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--layers", type=int, choices=(1, 2), default=1)
    t.add_argument("--layer-norm", choices=("linear", "none"), default="linear")
    t.add_argument("--cls-weight", type=float, default=1.0)
    t.add_argument("--reg-weight", type=float, default=1.0)
    t.add_argument("--report", default=None, help="training report JSON")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="PGD search for a counterexample")
    common(a)
    a.add_argument("--sample-index", type=int, default=0)
    a.add_argument("--steps", type=int, default=100)
    a.add_argument("--restarts", type=int, default=5)
    a.set_defaults(func=cmd_attack)

    v = sub.add_parser("verify", help="exact minimal distortion of one sample")
    common(v)
    v.add_argument("--sample-index", type=int, default=0)
    v.add_argument("--gt", type=int, default=None, help="class to verify (default: the dataset label)")
    v.add_argument("--use-prediction", action="store_true", help="verify the model's clean prediction instead of the label")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("ablate", help="heuristic ablation over a sample set")
    common(b)
    b.add_argument("--sample-index", default=None, help="comma list or ranges, e.g. '0-4' (default first 5)")
    b.add_argument("--grid", default=None, help="';'-separated heuristic sets (default: the standard grid)")
    b.set_defaults(func=cmd_ablate)

    c = sub.add_parser("compare", help="ATN vs MLP robustness on shared samples")
    common(c, model=False)
    c.add_argument("--model", action="append", help="give twice: ATN then MLP")
    c.add_argument("--samples", type=int, default=20)
    c.add_argument("--sample-index", default=None)
    c.set_defaults(func=cmd_compare)

    e = sub.add_parser("export-model", help="write the encoding of one query in LP format")
    common(e)
    e.add_argument("--sample-index", type=int, default=0)
    e.add_argument("--stats", default=None, help="constraint statistics JSON (default next to --out)")
    e.set_defaults(func=cmd_export_model)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.seed is None:
            args.seed = _env_int("ATNVERIFY_SEED", 0)
        if args.threads is None:
            args.threads = _env_int("ATNVERIFY_THREADS", os.cpu_count() or 1)
        if args.threads < 1:
            raise CliError("--threads must be >= 1")
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
