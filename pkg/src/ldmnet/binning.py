"""Activation binning and the digital loss term.

At inference, designated activations are rounded to the nearest of ``count``
equally spaced values between ``lo`` and ``hi``; during training the digital
loss penalizes the mean distance from each designated activation to its
nearest bin value.  For the memory network the designated sites are the
controller's sigmoid output vector and the post-read memory value at every
iteration; hidden-layer values are never binned.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import autodiff as ad

__all__ = [
    "BinSpec",
    "BINNABLE_SITES",
    "bin_value",
    "bin_index",
    "digital_loss",
    "digital_loss_node",
    "combined_loss",
    "find_bin_count",
]

# Activation sites that binning (and the digital loss) may touch, and
# nothing else: the controller output vector of each iteration, and the
# value read from memory after the heads move.
BINNABLE_SITES = ("controller_outputs", "read_values")


@dataclass(frozen=True)
class BinSpec:
    """``count`` equally spaced bin values from ``lo`` to ``hi`` inclusive."""

    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("a bin spec needs at least 2 bins")
        if not self.hi > self.lo:
            raise ValueError("bin range must have hi > lo")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.count - 1)

    @cached_property
    def values(self) -> np.ndarray:
        v = self.lo + self.spacing * np.arange(self.count, dtype=np.float64)
        v[-1] = self.hi
        v.flags.writeable = False
        return v

    @classmethod
    def for_sigmoid(cls, count: int) -> "BinSpec":
        return cls(0.0, 1.0, count)

    @classmethod
    def for_tanh(cls, count: int) -> "BinSpec":
        return cls(-1.0, 1.0, count)


def bin_index(a, spec: BinSpec) -> np.ndarray:
    """Index of the nearest bin value; exact midpoint ties go to the lower
    bin.  Inputs outside [lo, hi] clamp to the end bins."""
    a = np.asarray(a, dtype=np.float64)
    idx = np.ceil((a - spec.lo) / spec.spacing - 0.5).astype(np.int64)
    return np.clip(idx, 0, spec.count - 1)


def bin_value(a, spec: BinSpec):
    """Round to the nearest bin value (ties to the lower bin).

    The result is always an exact member of ``spec.values``, which makes
    the operation idempotent.
    """
    out = spec.values[bin_index(a, spec)]
    if np.isscalar(a) or np.ndim(a) == 0:
        return float(out)
    return out


def digital_loss(trace, spec: BinSpec) -> float:
    """Mean distance from each traced activation to its nearest bin value."""
    a = np.asarray(trace, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise ValueError("digital loss needs at least one traced activation")
    d = np.abs(a[:, None] - spec.values[None, :])
    return float(np.mean(np.min(d, axis=1)))


def digital_loss_node(trace: ad.Node, spec: BinSpec) -> ad.Node:
    """Taped digital loss over a flat node of traced activations.

    Differentiable almost everywhere; at a midpoint tie the derivative
    follows the lower bin's branch.
    """
    c = trace.value.size
    a = ad.reshape(trace, (c, 1))
    d = ad.absolute(ad.sub(a, spec.values[None, :]))
    return ad.mean_all(ad.min_reduce(d, axis=1))


def combined_loss(baseline: float, digital: float, digital_weight: float) -> float:
    """Convex combination w*digital + (1-w)*baseline."""
    if not 0.0 <= digital_weight <= 1.0:
        raise ValueError("digital_weight must lie in [0, 1]")
    return digital_weight * digital + (1.0 - digital_weight) * baseline


def find_bin_count(model, samples, unbinned_accuracy: float, cap: int = 64,
                   mem_size: int | None = None):
    """Smallest bin count in [2, cap] whose binned accuracy on ``samples``
    is at least ``unbinned_accuracy``; None when no count up to the cap
    suffices (the model genuinely relies on fine-grained activations).
    """
    if cap < 2:
        raise ValueError("bin search cap must be >= 2")
    if not samples:
        raise ValueError("bin search needs a nonempty validation set")
    from .training import samples_accuracy

    for count in range(2, cap + 1):
        acc = samples_accuracy(model, samples, spec=BinSpec.for_sigmoid(count),
                               mem_size=mem_size)
        if acc >= unbinned_accuracy:
            return count
    return None
