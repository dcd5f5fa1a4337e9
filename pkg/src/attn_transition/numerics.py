"""Dense float64 array helpers used by every other module.

Arrays are plain ``numpy.ndarray`` objects of dtype float64 with 1 to 4
dimensions.  The helpers add the shape checking and error reporting the
rest of the package relies on; the arithmetic itself is numpy's.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

Range = tuple[int, int]


class DimensionError(ValueError):
    """Raised when array shapes are incompatible."""


class DomainError(ValueError):
    """Raised when an input lies outside an operation's domain."""


def as_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if not 1 <= arr.ndim <= 4:
        raise DimensionError(f"expected 1 to 4 dims, got shape {arr.shape}")
    return arr


def check_finite(a: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{what} contains non-finite values")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over the trailing two dims, batched over the rest.

    Leading dims must match exactly; no broadcasting.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def softmax_lastdim(a: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis.

    ``-inf`` entries receive zero weight.  A slice that is entirely ``-inf``
    has no defined softmax and raises :class:`DomainError`.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] < 1:
        raise DimensionError("softmax over an empty axis")
    if np.any(np.isnan(a)) or np.any(a == np.inf):
        raise DomainError("softmax input contains NaN or +inf")
    peak = a.max(axis=-1, keepdims=True)
    if np.any(peak == -np.inf):
        raise DomainError("softmax slice is entirely -inf")
    z = np.exp(a - peak)
    return z / z.sum(axis=-1, keepdims=True)


def masked_fill(a: np.ndarray, threshold: float, value: float = 0.0, keep: str = "ge") -> np.ndarray:
    """Replace elements failing ``x >= threshold`` (or ``x < threshold``) with ``value``.

    ``keep`` names the predicate an element must satisfy to survive: ``"ge"``
    or ``"lt"``.  Surviving elements are returned bit-identical.
    """
    a = np.asarray(a, dtype=np.float64)
    if keep == "ge":
        passed = a >= threshold
    elif keep == "lt":
        passed = a < threshold
    else:
        raise ValueError(f"unknown predicate {keep!r}")
    return np.where(passed, a, value)


def _resolve(a: np.ndarray, ranges: Sequence[Range]) -> tuple[slice, ...]:
    if len(ranges) > a.ndim:
        raise DimensionError(f"{len(ranges)} ranges for array of shape {a.shape}")
    out = []
    for dim, (start, end) in enumerate(ranges):
        extent = a.shape[dim]
        if start < 0:
            start += extent
        if end < 0:
            end += extent
        if not 0 <= start <= end <= extent:
            raise IndexError(
                f"range [{ranges[dim][0]}, {ranges[dim][1]}) out of bounds for dim {dim} "
                f"with extent {extent}"
            )
        out.append(slice(start, end))
    return tuple(out)


def slice_copy(a: np.ndarray, ranges: Sequence[Range]) -> np.ndarray:
    """Copy of the half-open ``[start, end)`` block per leading dim.

    Negative bounds count from the end of the axis.  Unlisted trailing dims
    are taken whole.
    """
    return np.array(a[_resolve(a, ranges)], dtype=np.float64, copy=True)


def assign_slice(a: np.ndarray, ranges: Sequence[Range], values) -> None:
    """Write ``values`` into the block selected by ``ranges`` in place."""
    idx = _resolve(a, ranges)
    block = a[idx]
    values = np.asarray(values, dtype=np.float64)
    if values.shape != block.shape:
        try:
            values = np.broadcast_to(values, block.shape)
        except ValueError:
            raise DimensionError(
                f"cannot assign shape {values.shape} into block of shape {block.shape}"
            ) from None
    a[idx] = values
