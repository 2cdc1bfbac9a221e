"""Counting the computational states of a binned model.

The state of one iteration is the binned vector of the controller's inputs:
the external input symbols, the read value, and the recurrent state values.
Components are stored as bin indices (input symbols code 0, 1, -1 as
0, 1, 2), so set membership is exact integer equality, never float
comparison.  The count for a given input length is the number of distinct
state vectors seen over a growing sample of inputs; the sample doubles
until the count is unchanged across two consecutive doublings.

A bounded count that stays flat as the input length grows is the behavior
of a fixed transition table; exponential growth instead means the network
leans on its internal state as a memory store, which caps the input length
it can handle at a fixed numeric precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tasks
from .binning import BinSpec
from .model import LdmModel, run
from .training import eval_mem_size

__all__ = [
    "StateCountResult",
    "StateCountCurve",
    "ExpFit",
    "count_states",
    "fit_exponential",
]


@dataclass
class StateCountResult:
    length: int
    count: int
    samples_used: int
    plateaued: bool


@dataclass
class ExpFit:
    """Least-squares fit of ln y = ln a + b x."""

    a: float
    b: float
    r_squared: float | None
    degenerate: bool = False


@dataclass
class StateCountCurve:
    results: list[StateCountResult] = field(default_factory=list)
    fit: ExpFit | None = None


def count_states(model: LdmModel, spec: BinSpec, length: int,
                 task: str = "dyck", seed: int = 0, start: int = 2,
                 sample_cap: int = 2 ** 18, chunk: int = 4096,
                 input_sampler=None, mem_size: int | None = None,
                 override=None) -> StateCountResult:
    """Distinct binned controller-input vectors at one input length.

    Inputs come from the task generator (or ``input_sampler(seed, count)``
    returning sample lists) in deterministic seeded chunks, so the count is
    monotone in the sample size and reproducible.  Returns a non-plateaued
    result instead of failing when the cap is reached while the count is
    still growing.
    """
    if length < 1:
        raise ValueError("length must be positive")
    mem = mem_size or eval_mem_size(model, length)

    def sample(seed_key, count):
        if input_sampler is not None:
            return input_sampler(seed_key, count)
        return tasks.generate(task, (length, length), count, seed=seed_key)

    seen: set[bytes] = set()
    counts: list[int] = []
    total = 0
    chunk_idx = 0
    target = max(2, start)
    plateaued = False
    while True:
        while total < target:
            take = min(chunk, target - total)
            group = sample([seed, 6, length, chunk_idx], take)
            chunk_idx += 1
            by_iters: dict[int, list[tasks.TaskSample]] = {}
            for s in group:
                by_iters.setdefault(s.iterations, []).append(s)
            for part in by_iters.values():
                inputs, _, _ = tasks.collate(part)
                states = run(model, inputs, mem_size=mem, spec=spec,
                             collect_states=True, override=override).states
                rows = np.unique(states.reshape(-1, states.shape[-1]), axis=0)
                seen.update(row.tobytes() for row in rows)
            total += take
        counts.append(len(seen))
        if len(counts) >= 3 and counts[-1] == counts[-2] == counts[-3]:
            plateaued = True
            break
        if total >= sample_cap:
            break
        target = min(2 * target, sample_cap)
    return StateCountResult(length=length, count=len(seen),
                            samples_used=total, plateaued=plateaued)


def fit_exponential(points) -> ExpFit:
    """Fit y = a * exp(b x) by least squares on (x, ln y), with the
    coefficient of determination of that linear fit.

    Needs at least 3 points with strictly positive y.  Constant y has zero
    variance, so no R-squared exists; that case is reported as degenerate
    (a = y, b = 0) rather than fitted.
    """
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise ValueError("exponential fit needs at least 3 points")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.any(y <= 0):
        raise ValueError("exponential fit needs strictly positive y values")
    ly = np.log(y)
    if np.ptp(ly) == 0.0:
        return ExpFit(a=float(y[0]), b=0.0, r_squared=None, degenerate=True)
    b, log_a = np.polyfit(x, ly, 1)
    resid = ly - (log_a + b * x)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    return ExpFit(a=float(np.exp(log_a)), b=float(b),
                  r_squared=1.0 - ss_res / ss_tot)
