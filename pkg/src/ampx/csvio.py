"""Round-trip-precision CSV and JSON writers shared by the CLI."""

from __future__ import annotations

import json
import math

import numpy as np

from . import __version__

__all__ = ["HEADER", "fmt", "write_table", "dump_json"]

HEADER = f"# ampx {__version__}"


def fmt(v) -> str:
    """17 significant digits, enough to reproduce a double exactly."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return "%.17g" % float(v)


def write_table(fh, names, rows, header=True) -> None:
    if header:
        fh.write(HEADER + "\n")
    fh.write(",".join(names) + "\n")
    for row in rows:
        fh.write(",".join(fmt(v) for v in row) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(obj, fh) -> None:
    """JSON with a version field; non-finite floats become ``null``."""
    json.dump(_clean(obj), fh, indent=2, sort_keys=True)
    fh.write("\n")
