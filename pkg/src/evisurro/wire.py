"""JSON wire format with bit-faithful floats.

Grids travel as flat row-major arrays plus a shape field. Floats are
serialized with 17 significant digits, which round-trips every float64
exactly; the stock json encoder's shortest-repr would too, but a fixed
width makes the contract explicit and byte-deterministic.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["wire_dumps", "grid_payload"]


def _encode(obj, out):
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append('"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"')
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValueError("wire payloads must be finite")
        out.append(format(v, ".17g"))
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(",")
            _encode(str(k), out)
            out.append(":")
            _encode(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = obj.tolist() if isinstance(obj, np.ndarray) else obj
        out.append("[")
        for i, v in enumerate(items):
            if i:
                out.append(",")
            _encode(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj)!r}")


def wire_dumps(obj) -> str:
    out = []
    _encode(obj, out)
    return "".join(out)


def grid_payload(**grids):
    """Flatten named grids (row-major) and attach their common shape."""
    shapes = {np.shape(g) for g in grids.values()}
    if len(shapes) != 1:
        raise ValueError("grids must share one shape")
    (shape,) = shapes
    payload = {"shape": list(shape)}
    for name, grid in grids.items():
        payload[name] = np.asarray(grid, dtype=np.float64).ravel()
    return payload
