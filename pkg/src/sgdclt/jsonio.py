"""JSON/CSV emission helpers: floats carry 17 significant digits so every
value round-trips exactly; matrices serialize row-major."""

from __future__ import annotations

import csv
import math

import numpy as np

__all__ = ["dumps", "dump_matrix", "write_csv"]


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(float(x), ".17g")


def dumps(obj, indent: int = 0) -> str:
    """Serialize dict/list/scalar trees; ndarray becomes a nested list."""
    pad = " " * indent
    if isinstance(obj, dict):
        items = ",\n".join(
            f'{pad}  "{k}": {dumps(v, indent + 2).lstrip()}' for k, v in obj.items()
        )
        return f"{pad}{{\n{items}\n{pad}}}" if obj else f"{pad}{{}}"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent)
    if isinstance(obj, (list, tuple)):
        inner = ", ".join(dumps(v).strip() for v in obj)
        return f"{pad}[{inner}]"
    if isinstance(obj, bool) or isinstance(obj, np.bool_):
        return f"{pad}{'true' if obj else 'false'}"
    if isinstance(obj, (int, np.integer)):
        return f"{pad}{int(obj)}"
    if isinstance(obj, (float, np.floating)):
        return f"{pad}{_fmt_float(float(obj))}"
    if obj is None:
        return f"{pad}null"
    escaped = str(obj).replace("\\", "\\\\").replace('"', '\\"')
    return f'{pad}"{escaped}"'


def dump_matrix(M: np.ndarray) -> dict:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return {"shape": list(M.shape), "data": M.reshape(-1)}


def write_csv(path, header, rows) -> None:
    """RFC-4180 CSV with '.' decimal separator; floats at 17 significant
    digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                format(v, ".17g") if isinstance(v, (float, np.floating)) else v
                for v in row
            ])
