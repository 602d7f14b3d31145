"""Named-tensor text format.

Blocks of ``tensor <name> <rows> <cols>`` followed by ``rows*cols``
whitespace-separated values in row-major order.  An optional single
``meta <json>`` line carries free-form metadata.
"""

import json

import numpy as np

from .errors import MalformedHeader, ShapeMismatch


def _fmt(v):
    return repr(float(v))


def write_tensors(path, tensors, meta=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if meta is not None:
            fh.write("meta " + json.dumps(meta, sort_keys=True) + "\n")
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim == 1:
                arr = arr.reshape(-1, 1)
            rows, cols = arr.shape
            fh.write(f"tensor {name} {rows} {cols}\n")
            for row in arr:
                fh.write(" ".join(_fmt(v) for v in row) + "\n")


def read_tensors(path):
    """Return ``(tensors, meta)``; ``meta`` is ``None`` when absent."""
    tensors = {}
    meta = None
    current = None
    values: list[float] = []

    def close(lineno):
        name, rows, cols = current
        if len(values) != rows * cols:
            raise ShapeMismatch(
                f"{path}: tensor {name!r} declares {rows}x{cols} but has {len(values)} values (line {lineno})"
            )
        tensors[name] = np.array(values, dtype=np.float64).reshape(rows, cols)

    with open(path, encoding="utf-8") as fh:
        lineno = 0
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("meta "):
                if meta is not None:
                    raise MalformedHeader(f"{path}:{lineno}: more than one meta line")
                try:
                    meta = json.loads(stripped[5:])
                except json.JSONDecodeError as exc:
                    raise MalformedHeader(f"{path}:{lineno}: bad meta JSON ({exc})") from None
                continue
            if stripped.startswith("tensor"):
                if current is not None:
                    close(lineno)
                parts = stripped.split()
                if len(parts) != 4:
                    raise MalformedHeader(f"{path}:{lineno}: expected 'tensor <name> <rows> <cols>'")
                try:
                    rows, cols = int(parts[2]), int(parts[3])
                except ValueError:
                    raise MalformedHeader(f"{path}:{lineno}: non-integer shape") from None
                if rows < 0 or cols < 0:
                    raise MalformedHeader(f"{path}:{lineno}: negative shape")
                if parts[1] in tensors:
                    raise MalformedHeader(f"{path}:{lineno}: tensor {parts[1]!r} repeated")
                current = (parts[1], rows, cols)
                values = []
                continue
            if current is None:
                raise MalformedHeader(f"{path}:{lineno}: values before any tensor header")
            try:
                values.extend(float(v) for v in stripped.split())
            except ValueError:
                raise MalformedHeader(f"{path}:{lineno}: non-numeric value") from None
        if current is not None:
            close(lineno)
    return tensors, meta
