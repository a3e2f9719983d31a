"""Deterministic JSON rendering with full-precision floats.

The stock json module prints floats with repr (shortest round-trip), which
is lossless but couples the byte output to the repr algorithm. Results
meant for reproducibility audits are easier to diff when every float is
written the same way, so this dumper formats them with 17 significant
digits, enough to reconstruct the double exactly.
"""

from __future__ import annotations

import json
import math

import numpy as np

__all__ = ["dumps"]


def _render(obj, indent: int, level: int, out: list[str]) -> None:
    pad = " " * (indent * (level + 1))
    end_pad = " " * (indent * level)
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"cannot serialize non-finite number {x}")
        out.append(format(x, ".17g"))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _render(obj.tolist(), indent, level, out)
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        out.append("[\n")
        for k, item in enumerate(obj):
            out.append(pad)
            _render(item, indent, level + 1, out)
            out.append(",\n" if k < len(obj) - 1 else "\n")
        out.append(end_pad + "]")
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = list(obj.items())
        for k, (key, value) in enumerate(items):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be strings, got {key!r}")
            out.append(pad + json.dumps(key) + ": ")
            _render(value, indent, level + 1, out)
            out.append(",\n" if k < len(items) - 1 else "\n")
        out.append(end_pad + "}")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} value {obj!r}")


def dumps(obj, indent: int = 2) -> str:
    out: list[str] = []
    _render(obj, indent, 0, out)
    return "".join(out) + "\n"
