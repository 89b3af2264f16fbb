"""Write programs in the CPLEX LP text format (write-only)."""

from __future__ import annotations

import math
import re
from fractions import Fraction
from pathlib import Path
from typing import IO

from .model import IntegerProgram, Relation

_BAD = re.compile(r"[^A-Za-z0-9_.]")


def _name(raw: str) -> str:
    s = _BAD.sub("_", raw)
    if not s or s[0].isdigit() or s[0] == ".":
        s = "_" + s
    return s


def _num(v) -> str:
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else repr(float(v))
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return repr(v) if isinstance(v, float) else str(v)


def _expr(coeffs: dict, names: list[str]) -> str:
    if not coeffs:
        return "0 " + names[0] if names else "0"
    parts = []
    for j in sorted(coeffs):
        c = coeffs[j]
        sign = "-" if c < 0 else "+"
        mag = -c if c < 0 else c
        term = names[j] if mag == 1 else f"{_num(mag)} {names[j]}"
        parts.append(f"{sign} {term}")
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def _wrap(line: str, width: int = 240) -> str:
    if len(line) <= width:
        return line
    out, cur = [], ""
    for tok in line.split(" "):
        if len(cur) + len(tok) + 1 > width:
            out.append(cur)
            cur = "   " + tok
        else:
            cur = f"{cur} {tok}" if cur else tok
    out.append(cur)
    return "\n".join(out)


def write_lp(program: IntegerProgram, target: str | Path | IO[str]) -> None:
    names = [_name(v.name) for v in program.variables]
    lines = [f"\\ {program.name}", "Minimize", _wrap(" obj: " + _expr(program.objective, names)),
             "Subject To"]
    ops = {Relation.LE: "<=", Relation.EQ: "=", Relation.GE: ">="}
    for con in program.constraints:
        lines.append(_wrap(f" {_name(con.name)}: {_expr(con.coeffs, names)} {ops[con.relation]} {_num(con.rhs)}"))
    lines.append("Bounds")
    for name, v in zip(names, program.variables):
        lo = "-inf" if math.isinf(v.lb) else _num(v.lb)
        hi = "+inf" if math.isinf(v.ub) else _num(v.ub)
        if lo == "-inf" and hi == "+inf":
            lines.append(f" {name} free")
        else:
            lines.append(f" {lo} <= {name} <= {hi}")
    ints = [name for name, v in zip(names, program.variables) if v.integer]
    if ints:
        lines.append("General")
        for i in range(0, len(ints), 10):
            lines.append(" " + " ".join(ints[i:i + 10]))
    lines.append("End")
    text = "\n".join(lines) + "\n"
    if isinstance(target, (str, Path)):
        Path(target).write_text(text, encoding="utf-8")
    else:
        target.write(text)
