"""Summed-area tables and constrained sliding-window statistics.

A table built from an ``H x W`` map answers any rectangle sum in O(1), which
makes dense stride-1 window scans O(H*W) regardless of the window side.
Indicator maps use exact integer arithmetic; scalar maps accumulate in
float64 for argmax stability.

Only 2-D tables exist: 3-D volumes pick a slice before any window scan.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Region


@dataclass(frozen=True)
class IntegralTable:
    """Cumulative sums with a zero border: ``table[y, x] = sum map[:y, :x]``."""

    table: np.ndarray  # (H+1, W+1)

    @property
    def height(self) -> int:
        return self.table.shape[0] - 1

    @property
    def width(self) -> int:
        return self.table.shape[1] - 1

    def rect_sum(self, y0: int, x0: int, y1: int, x1: int):
        """Sum of the source map over the half-open rect [y0,y1) x [x0,x1)."""
        t = self.table
        return t[y1, x1] - t[y0, x1] - t[y1, x0] + t[y0, x0]

    def window_sums(self, side: int) -> np.ndarray:
        """All stride-1 window sums; output shape (H-side+1, W-side+1)."""
        if side < 1 or side > min(self.height, self.width):
            raise ValueError(f"side {side} infeasible for {self.height}x{self.width}")
        t = self.table
        return (
            t[side:, side:]
            - t[:-side, side:]
            - t[side:, :-side]
            + t[:-side, :-side]
        )


def build_integral(values: np.ndarray) -> IntegralTable:
    """Build the summed-area table of a 2-D scalar or indicator map."""
    values = np.asarray(values)
    if values.ndim != 2 or values.size == 0:
        raise ValueError("expected a non-empty 2-D map")
    dtype = np.int64 if np.issubdtype(values.dtype, np.integer) else np.float64
    table = np.zeros((values.shape[0] + 1, values.shape[1] + 1), dtype=dtype)
    np.cumsum(values, axis=0, dtype=dtype, out=table[1:, 1:])
    np.cumsum(table[1:, 1:], axis=1, out=table[1:, 1:])
    return IntegralTable(table)


def feasible_origin_mask(
    height: int,
    width: int,
    side: int,
    excluded: Iterable[Region] = (),
) -> np.ndarray:
    """Boolean mask over window origins with no overlap against `excluded`.

    An origin (oy, ox) conflicts with an excluded square exactly when it lies
    in a rectangle of origin space, so each exclusion blanks one rectangle;
    this is the vectorized form of per-origin interval tests and never builds
    a pixel-level exclusion map.
    """
    h_out, w_out = height - side + 1, width - side + 1
    if h_out < 1 or w_out < 1:
        raise ValueError(f"side {side} exceeds image bounds ({height},{width})")
    mask = np.ones((h_out, w_out), dtype=bool)
    for r in excluded:
        if r.is_roi:
            raise ValueError("ROI region passed to a square-window scan")
        y0 = max(0, r.y - side + 1)  # type: ignore[operator]
        y1 = min(h_out, r.y + r.side)  # type: ignore[operator]
        x0 = max(0, r.x - side + 1)  # type: ignore[operator]
        x1 = min(w_out, r.x + r.side)  # type: ignore[operator]
        if y0 < y1 and x0 < x1:
            mask[y0:y1, x0:x1] = False
    return mask


def window_argmax(
    table: IntegralTable,
    side: int,
    excluded: Sequence[Region] = (),
    require_positive: bool = False,
):
    """Best feasible window origin by window sum.

    Returns ``((y, x), value)`` with ties broken by smallest (y, x), or None
    when no origin is feasible, or when ``require_positive`` and every
    feasible window sums to <= 0.  ``excluded`` must contain only square
    regions on the same slice as the scanned map.
    """
    sums = table.window_sums(side)
    mask = feasible_origin_mask(table.height, table.width, side, excluded)
    if not mask.any():
        return None
    scores = np.where(mask, sums, -np.inf)
    flat = int(np.argmax(scores))  # first occurrence = smallest (y, x)
    y, x = divmod(flat, scores.shape[1])
    best = sums[y, x]
    if require_positive and best <= 0:
        return None
    value = int(best) if np.issubdtype(sums.dtype, np.integer) else float(best)
    return (int(y), int(x)), value


def window_mean_map(table: IntegralTable, side: int) -> np.ndarray:
    """Mean of every stride-1 window; output shape (H-side+1, W-side+1)."""
    return table.window_sums(side).astype(np.float64) / float(side * side)
