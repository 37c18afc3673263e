"""Canonical value serialization shared by traces, reports and datasets.

Every value that crosses an audit boundary (primitive inputs, outputs,
parameters) is reduced to plain JSON-compatible Python objects and rendered
with a single canonical encoder: sorted keys, no whitespace, full-precision
float repr. Two values are "equal" for invariance checking exactly when
their canonical encodings are byte-identical, which makes equality bitwise
for floats (0.0 != -0.0, NaN == NaN by token).

NaN and +/-Infinity are emitted as the bare tokens ``NaN``, ``Infinity``
and ``-Infinity``; ``json.loads`` accepts these, so parse(serialize(x))
round-trips byte-exactly.
"""

from __future__ import annotations

import json
import math
from typing import Any

import numpy as np


class CanonicalizationError(TypeError):
    """A value cannot be reduced to the canonical JSON subset."""


_SCALAR_TYPES = (str, bool, int, float, type(None))


def to_jsonable(value: Any) -> Any:
    """Reduce a value to dict/list/str/int/float/bool/None.

    numpy arrays become (nested) lists, numpy scalars become Python
    scalars. Tuples become lists. Dict keys must be strings.
    """
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()] if value.ndim > 1 else [
            to_jsonable(v) for v in value.tolist()
        ]
    if isinstance(value, np.generic):
        return to_jsonable(value.item())
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float, str)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise CanonicalizationError(f"dict keys must be str, got {type(k).__name__}")
            out[k] = to_jsonable(v)
        return out
    raise CanonicalizationError(f"cannot canonicalize value of type {type(value).__name__}")


def _check_jsonable(value: Any) -> None:
    if isinstance(value, _SCALAR_TYPES):
        return
    if isinstance(value, list):
        for v in value:
            _check_jsonable(v)
        return
    if isinstance(value, dict):
        for k, v in value.items():
            if not isinstance(k, str):
                raise CanonicalizationError("dict keys must be str")
            _check_jsonable(v)
        return
    raise CanonicalizationError(f"non-canonical type {type(value).__name__}")


def canonical_dumps(value: Any) -> str:
    """Render an already-jsonable value canonically (deterministic bytes)."""
    _check_jsonable(value)
    return json.dumps(value, sort_keys=True, separators=(",", ":"), allow_nan=True)


def canonical_loads(text: str) -> Any:
    return json.loads(text)


def canonical_equal(a: Any, b: Any) -> bool:
    """Bitwise-style equality through the canonical encoding."""
    return canonical_dumps(to_jsonable(a)) == canonical_dumps(to_jsonable(b))


def all_finite(value: Any) -> bool:
    """True when every numeric leaf of the value is finite."""
    if isinstance(value, bool):
        return True
    if isinstance(value, (int,)):
        return True
    if isinstance(value, float):
        return math.isfinite(value)
    if isinstance(value, np.ndarray):
        return bool(np.all(np.isfinite(value))) if value.dtype.kind in "fc" else True
    if isinstance(value, np.generic):
        return all_finite(value.item())
    if isinstance(value, (list, tuple)):
        return all(all_finite(v) for v in value)
    if isinstance(value, dict):
        return all(all_finite(v) for v in value.values())
    return True
