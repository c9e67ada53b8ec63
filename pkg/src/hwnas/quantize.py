"""Signed fixed-point formats and fake quantization.

Convention matches ap_fixed<T, I>: T total bits, I integer bits with the
sign bit counted in I. Resolution is 2**(I - T) and the representable range
is [-2**(I-1), 2**(I-1) - 2**(I-T)]. Rounding is nearest-even with
saturation at the range ends, so quantization is a total, idempotent
function on finite reals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FixedPointFormat:
    total_bits: int
    integer_bits: int

    def __post_init__(self):
        if not (1 <= self.integer_bits <= self.total_bits <= 64):
            raise ValueError(f"invalid fixed-point format "
                             f"({self.total_bits}, {self.integer_bits})")

    @property
    def resolution(self) -> float:
        return 2.0 ** (self.integer_bits - self.total_bits)

    @property
    def min_value(self) -> float:
        return -(2.0 ** (self.integer_bits - 1))

    @property
    def max_value(self) -> float:
        return 2.0 ** (self.integer_bits - 1) - self.resolution

    @property
    def min_int(self) -> int:
        return -(2 ** (self.total_bits - 1))

    @property
    def max_int(self) -> int:
        return 2 ** (self.total_bits - 1) - 1

    def as_pair(self) -> tuple[int, int]:
        return (self.total_bits, self.integer_bits)


def quantize_array(x: np.ndarray, fmt: FixedPointFormat) -> np.ndarray:
    """Snap every element onto the format's grid (nearest-even, saturating)."""
    steps = np.rint(np.asarray(x, dtype=np.float64) / fmt.resolution)
    steps = np.clip(steps, fmt.min_int, fmt.max_int)
    return steps * fmt.resolution


def quantize_value(x: float, fmt: FixedPointFormat) -> float:
    return float(quantize_array(np.asarray(x, dtype=np.float64), fmt))


def in_range(x: np.ndarray, fmt: FixedPointFormat) -> np.ndarray:
    """Straight-through-estimator pass mask: 1 inside the representable
    range, 0 where saturation clipped."""
    x = np.asarray(x, dtype=np.float64)
    return (x >= fmt.min_value) & (x <= fmt.max_value)


def on_grid(x: np.ndarray, fmt: FixedPointFormat) -> bool:
    """True when every element already lies exactly on the format grid."""
    x = np.asarray(x, dtype=np.float64)
    return bool(np.all(quantize_array(x, fmt) == x))


def to_integers(x: np.ndarray, fmt: FixedPointFormat) -> np.ndarray:
    """Integer (step-count) encoding of grid values; inverse of from_integers."""
    steps = np.rint(np.asarray(x, dtype=np.float64) / fmt.resolution)
    steps = np.clip(steps, fmt.min_int, fmt.max_int)
    return steps.astype(np.int64)


def from_integers(steps: np.ndarray, fmt: FixedPointFormat) -> np.ndarray:
    return np.asarray(steps, dtype=np.float64) * fmt.resolution
