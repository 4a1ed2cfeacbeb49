"""Export of a :class:`MiqcpModel` to the LP text format.

The writer emits ``Minimize`` / ``Subject To`` (quadratic parts inside
``[ ]``) / ``Bounds`` / ``Binaries`` / ``General Constraints`` (``MAX`` and
``ABS``) / ``End``, the dialect read by the common commercial and open
solvers. :func:`parse_standard_format` reads the same dialect back into a
model so exports can be checked without an external solver.
"""

from __future__ import annotations

import re

import numpy as np

from .model import MiqcpModel

_SAFE = re.compile(r"[^A-Za-z0-9_.]")
_WRAP = 200  # solvers reject very long lines


class LPFormatError(ValueError):
    pass


def _safe_names(names):
    out, seen = [], set()
    for n in names:
        s = _SAFE.sub("_", n)
        if not s or s[0].isdigit() or s[0] in ".eE":
            s = "v_" + s
        base, k = s, 1
        while s in seen:
            s = f"{base}_{k}"
            k += 1
        seen.add(s)
        out.append(s)
    return out


def _num(v: float) -> str:
    return repr(float(v))


def _linear_terms(idx, coef, names):
    parts = []
    for i, a in zip(idx, coef):
        parts.append(("- " if a < 0 else "+ ") + f"{_num(abs(a))} {names[i]}")
    return parts


def _emit(lines, head, parts, tail=""):
    cur = head
    for p in parts:
        if len(cur) + len(p) + 1 > _WRAP:
            lines.append(cur)
            cur = "   "
        cur += " " + p
    lines.append(cur + tail)


def export_standard_format(model: MiqcpModel) -> str:
    names = _safe_names(model.var_names)
    cnames = _safe_names([c.name for c in model.linear] + [c.name for c in model.quadratic] + [g.name for g in model.general])
    lines = [f"\\ {model.name}", "Minimize"]
    obj = _linear_terms(model.obj_idx, model.obj_coef, names)
    if model.obj_const:
        obj.append(("- " if model.obj_const < 0 else "+ ") + _num(abs(model.obj_const)))
    _emit(lines, " obj:", obj or ["0 " + names[0]] if model.num_vars else ["0"])
    lines.append("Subject To")
    k = 0
    for c in model.linear:
        parts = _linear_terms(c.idx, c.coef, names) or ["0 " + names[0]]
        _emit(lines, f" {cnames[k]}:", parts, f" {c.sense} {_num(c.rhs)}")
        k += 1
    for c in model.quadratic:
        parts = _linear_terms(c.idx, c.coef, names)
        q = []
        for i, j, a in zip(c.qi, c.qj, c.qcoef):
            term = f"{names[i]} ^ 2" if i == j else f"{names[i]} * {names[j]}"
            q.append(("- " if a < 0 else "+ ") + f"{_num(abs(a))} {term}")
        _emit(lines, f" {cnames[k]}:", parts + ["+ ["] + q + ["]"], f" {c.sense} {_num(c.rhs)}")
        k += 1
    lines.append("Bounds")
    lb, ub = model.lb, model.ub
    for i, n in enumerate(names):
        if lb[i] == ub[i]:
            lines.append(f" {n} = {_num(lb[i])}")
        else:
            lo = "-inf" if np.isneginf(lb[i]) else _num(lb[i])
            hi = "+inf" if np.isposinf(ub[i]) else _num(ub[i])
            lines.append(f" {lo} <= {n} <= {hi}")
    binary = [names[i] for i in np.nonzero(model.binary)[0]]
    if binary:
        lines.append("Binaries")
        _emit(lines, "", binary)
    if model.general:
        lines.append("General Constraints")
        for g in model.general:
            op = f"MAX ( {names[g.x]} , 0 )" if g.kind == "max0" else f"ABS ( {names[g.x]} )"
            lines.append(f" {cnames[k]}: {names[g.y]} = {op}")
            k += 1
    lines.append("End")
    return "\n".join(lines) + "\n"


# -- reader ---------------------------------------------------------------

_SECTIONS = {
    "minimize": "obj", "minimum": "obj", "min": "obj",
    "subject to": "cons", "such that": "cons", "st": "cons", "s.t.": "cons",
    "bounds": "bounds", "bound": "bounds",
    "binaries": "bin", "binary": "bin", "bin": "bin",
    "general constraints": "gen", "general constraint": "gen", "gencons": "gen",
    "end": "end",
}
_TOKEN = re.compile(r"\[|\]|\^|\*|<=|>=|=<|=>|=|[+-]|[(),:]|[A-Za-z_.][A-Za-z0-9_.]*|(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")


def _tokens(text):
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if not m:
            raise LPFormatError(f"cannot tokenize near {text[pos:pos + 20]!r}")
        out.append(m.group())
        pos = m.end()
    return out


def _is_num(t):
    return t[0].isdigit() or (t[0] == "." and len(t) > 1 and t[1].isdigit()) or t.lower() in ("inf", "infinity")


def _to_num(t):
    return float("inf") if t.lower() in ("inf", "infinity") else float(t)


def _expr(toks):
    """Parse ``[+-] c name ... [ + [ q terms ] ]`` into linear and quadratic term lists plus a constant."""
    lin, quad, const = [], [], 0.0
    i, in_q = 0, False
    while i < len(toks):
        t = toks[i]
        if t == "[":
            in_q = True
            i += 1
            continue
        if t == "]":
            in_q = False
            i += 1
            if i < len(toks) and toks[i] == "/":
                raise LPFormatError("objective quadratic terms are not supported")
            continue
        sign = 1.0
        while t in "+-" and len(t) == 1:
            sign *= -1.0 if t == "-" else 1.0
            i += 1
            t = toks[i]
        if t == "[":
            continue
        coef = 1.0
        if _is_num(t):
            coef = _to_num(t)
            i += 1
            if i >= len(toks) or toks[i] in "+-[]" and len(toks[i]) == 1:
                const += sign * coef
                continue
            t = toks[i]
        name = t
        i += 1
        if in_q:
            if i < len(toks) and toks[i] == "^":
                quad.append((name, name, sign * coef))
                i += 2
            elif i < len(toks) and toks[i] == "*":
                quad.append((name, toks[i + 1], sign * coef))
                i += 2
            else:
                raise LPFormatError(f"expected a product after {name}")
        else:
            lin.append((name, sign * coef))
    return lin, quad, const


def parse_standard_format(text: str) -> MiqcpModel:
    """Read LP text written by :func:`export_standard_format` (and the same dialect generally)."""
    model_name = "miqcp"
    blocks: dict[str, list[str]] = {"obj": [], "cons": [], "bounds": [], "bin": [], "gen": []}
    section = None
    for raw in text.splitlines():
        if raw.startswith("\\"):
            if section is None and raw[1:].strip():
                model_name = raw[1:].strip()
            continue
        line = raw.split("\\", 1)[0].rstrip()
        if not line.strip():
            continue
        key = line.strip().lower()
        if key in _SECTIONS and not raw[:1].isspace():
            section = _SECTIONS[key]
            if section == "end":
                break
            continue
        if section is None:
            raise LPFormatError(f"text before the first section: {line!r}")
        if raw[:1].isspace() and raw.startswith("    ") and blocks[section]:
            blocks[section][-1] += " " + line.strip()  # continuation
        else:
            blocks[section].append(line.strip())
    if section is None:
        raise LPFormatError("no objective section found")

    # variables in order of first bound declaration, then by appearance
    bounds: dict[str, list[float]] = {}
    order: list[str] = []
    for line in blocks["bounds"]:
        toks = _tokens(line)
        if len(toks) == 5 and toks[1] == "<=" and toks[3] == "<=":
            lo, n, hi = _signed(toks[0]), toks[2], _signed(toks[4])
        elif len(toks) >= 3 and toks[1] == "=":
            n = toks[0]
            lo = hi = _signed("".join(toks[2:]))
        elif len(toks) == 2 and toks[1].lower() == "free":
            n, lo, hi = toks[0], -np.inf, np.inf
        else:
            lo, n, hi = _bound_pieces(toks)
        if n not in bounds:
            order.append(n)
        bounds[n] = [lo, hi]
    binaries = set()
    for line in blocks["bin"]:
        for n in line.split():
            binaries.add(n)
            if n not in bounds:
                order.append(n)
                bounds[n] = [0.0, 1.0]
    m = MiqcpModel(model_name)
    ids = {}

    def vid(n):
        if n not in ids:
            lo, hi = bounds.get(n, (0.0, np.inf))
            ids[n] = m.add_var(n, lo, hi, binary=n in binaries)
        return ids[n]

    for n in order:
        vid(n)
    obj = " ".join(blocks["obj"])
    if obj:
        toks = _tokens(obj)
        if len(toks) > 1 and toks[1] == ":":
            toks = toks[2:]
        lin, _, const = _expr(toks)
        m.set_objective([vid(n) for n, _ in lin], [a for _, a in lin], const)
    for line in blocks["cons"]:
        toks = _tokens(line)
        name = None
        if len(toks) > 1 and toks[1] == ":":
            name, toks = toks[0], toks[2:]
        k = next((i for i, t in enumerate(toks) if t in ("<=", ">=", "=", "=<", "=>")), None)
        if k is None:
            raise LPFormatError(f"constraint without a sense: {line!r}")
        sense = {"=<": "<=", "=>": ">="}.get(toks[k], toks[k])
        rhs = _signed("".join(toks[k + 1:]))
        lin, quad, const = _expr(toks[:k])
        idx = [vid(n) for n, _ in lin]
        coef = [a for _, a in lin]
        if quad:
            m.add_quadratic(idx, coef, [vid(a) for a, _, _ in quad], [vid(b) for _, b, _ in quad], [c for _, _, c in quad], sense, rhs - const, name=name)
        else:
            m.add_linear(idx, coef, sense, rhs - const, name=name)
    for line in blocks["gen"]:
        toks = _tokens(line)
        name = None
        if len(toks) > 1 and toks[1] == ":":
            name, toks = toks[0], toks[2:]
        y, op = toks[0], toks[2].upper()
        if op == "MAX" and toks[-2:] == ["0", ")"] and len(toks) == 8:
            m.add_general("max0", vid(y), vid(toks[4]), name=name)
        elif op == "ABS" and len(toks) == 6:
            m.add_general("abs", vid(y), vid(toks[4]), name=name)
        else:
            raise LPFormatError(f"unsupported general constraint {line!r}")
    return m


def _signed(s: str) -> float:
    s = s.strip().lower()
    if s in ("+inf", "inf", "+infinity", "infinity"):
        return np.inf
    if s in ("-inf", "-infinity"):
        return -np.inf
    try:
        return float(s)
    except ValueError:
        raise LPFormatError(f"expected a number, got {s!r}") from None


def _bound_pieces(toks):
    # re-join sign tokens with their numbers: "- 1.5 <= x <= 2"
    joined, i = [], 0
    while i < len(toks):
        if toks[i] in "+-" and len(toks[i]) == 1 and i + 1 < len(toks) and _is_num(toks[i + 1]):
            joined.append(toks[i] + toks[i + 1])
            i += 2
        else:
            joined.append(toks[i])
            i += 1
    if len(joined) == 5 and joined[1] == "<=" and joined[3] == "<=":
        return _signed(joined[0]), joined[2], _signed(joined[4])
    if len(joined) == 3 and joined[1] == "<=":
        if _is_num(joined[0].lstrip("+-")):
            return _signed(joined[0]), joined[2], np.inf
        return 0.0, joined[0], _signed(joined[2])
    if len(joined) == 3 and joined[1] == ">=":
        return _signed(joined[2]), joined[0], np.inf
    if len(joined) == 3 and joined[1] == "=":
        v = _signed(joined[2])
        return v, joined[0], v
    raise LPFormatError(f"cannot parse bound {' '.join(toks)!r}")
