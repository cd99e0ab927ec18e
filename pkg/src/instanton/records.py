"""Structured-text records with exact 17-significant-digit numbers.

A record is one line ``kind key=value key=value ...``; vectors are
comma-separated, complex numbers print as ``re+imj``.  Field names are
fixed per record kind so outputs diff cleanly.
"""
from __future__ import annotations

import numpy as np


def num(v) -> str:
    v = float(v)
    if v == 0:
        v = 0.0
    return f"{v:.17g}"


def vec(values) -> str:
    return ",".join(num(v) for v in np.ravel(values))


def cnum(z) -> str:
    z = complex(z)
    if z.imag == 0:
        return num(z.real)
    im = num(z.imag)
    return f"{num(z.real)}{'' if im.startswith('-') else '+'}{im}j"


def value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return num(v)
    if isinstance(v, complex):
        return cnum(v)
    if isinstance(v, np.ndarray):
        return vec(v)
    if isinstance(v, (list, tuple)):
        if all(isinstance(x, (int, np.integer)) and not isinstance(x, bool) for x in v):
            return ",".join(str(int(x)) for x in v) if v else "-"
        if any(isinstance(x, complex) for x in v):
            return ",".join(cnum(x) for x in v)
        if all(isinstance(x, (float, np.floating)) for x in v):
            return vec(v)
        return ",".join(str(x) for x in v) if v else "-"
    return str(v).replace(" ", "")


def record(kind: str, **fields) -> str:
    return " ".join([kind] + [f"{k}={value(v)}" for k, v in fields.items()])


def parse_record(line: str):
    """Inverse of :func:`record` up to value typing: ``(kind, {key: text})``."""
    parts = line.split()
    out = {}
    for item in parts[1:]:
        k, _, v = item.partition("=")
        out[k] = v
    return parts[0], out
