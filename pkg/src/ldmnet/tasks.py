"""Generators for the four algorithmic tasks: copy, binary sum,
adversarial binary sum, and balanced-parentheses (Dyck) classification.

Conventions shared by all generators:

* inputs are (steps, input_dim) float arrays with entries in {0, 1, -1};
  -1 marks steps past the end of the data (the copy task's recall phase),
* sum operands are least-significant-bit first, so a single left-to-right
  pass can resolve the carries; one zero pair is appended for the carry-out,
* copy targets are the input bits prepended with an equal number of zeros,
* dyck words use 0 for '(' and 1 for ')'; the label is 1 for balanced
  words, and the per-step target/mask carry it on the final step only.

Every generator is a pure function of (length range, count, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "TASK_NAMES",
    "LengthRange",
    "TaskSample",
    "gen_copy",
    "gen_binary_sum",
    "gen_adversarial_sum",
    "gen_dyck",
    "dyck_oracle",
    "generate",
    "input_dim",
    "is_classification",
    "collate",
    "render_sample",
]

TASK_NAMES = ("copy", "sum", "sum_adversarial", "dyck")


@dataclass(frozen=True)
class LengthRange:
    min_len: int
    max_len: int

    def __post_init__(self):
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError(f"invalid length range [{self.min_len}, {self.max_len}]")


def _as_range(r) -> LengthRange:
    if isinstance(r, LengthRange):
        return r
    lo, hi = r
    return LengthRange(int(lo), int(hi))


@dataclass
class TaskSample:
    """One input sequence with its per-step targets and loss mask."""

    task: str
    length: int                 # data length l (operand bits / word length)
    inputs: np.ndarray          # (iterations, input_dim), entries in {0,1,-1}
    targets: np.ndarray         # (iterations,)
    mask: np.ndarray            # (iterations,) bool, True where loss applies
    label: int | None = None    # classification tasks only
    meta: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return self.inputs.shape[0]


def input_dim(task: str) -> int:
    if task not in TASK_NAMES:
        raise ValueError(f"unknown task {task!r}; choose from {', '.join(TASK_NAMES)}")
    return 2 if task in ("sum", "sum_adversarial") else 1


def is_classification(task: str) -> bool:
    return task == "dyck"


def _draw_lengths(rng, rng_range: LengthRange, count: int) -> np.ndarray:
    return rng.integers(rng_range.min_len, rng_range.max_len + 1, size=count)


# ---------------------------------------------------------------------------
# copy


def _copy_sample(bits: np.ndarray) -> TaskSample:
    l = bits.size
    inputs = np.full((2 * l, 1), -1.0)
    inputs[:l, 0] = bits
    targets = np.concatenate([np.zeros(l), bits.astype(np.float64)])
    mask = np.zeros(2 * l, dtype=bool)
    mask[l:] = True
    return TaskSample("copy", l, inputs, targets, mask)


def gen_copy(length_range, count: int, seed: int) -> list[TaskSample]:
    """Uniform random bit strings; the target repeats them after a silence
    of equal length."""
    rng = np.random.default_rng(seed)
    r = _as_range(length_range)
    out = []
    for l in _draw_lengths(rng, r, count):
        out.append(_copy_sample(rng.integers(0, 2, size=int(l))))
    return out


# ---------------------------------------------------------------------------
# binary sum


def _ripple_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Bitwise LSB-first addition with carry; result is one bit longer."""
    l = a.size
    out = np.zeros(l + 1, dtype=np.int64)
    carry = 0
    for i in range(l):
        total = int(a[i]) + int(b[i]) + carry
        out[i] = total & 1
        carry = total >> 1
    out[l] = carry
    return out


def _sum_sample(task: str, a: np.ndarray, b: np.ndarray, meta=None) -> TaskSample:
    l = a.size
    inputs = np.zeros((l + 1, 2))
    inputs[:l, 0] = a
    inputs[:l, 1] = b
    targets = _ripple_add(a, b).astype(np.float64)
    mask = np.ones(l + 1, dtype=bool)
    return TaskSample(task, l, inputs, targets, mask, meta=meta or {})


def gen_binary_sum(length_range, count: int, seed: int) -> list[TaskSample]:
    """Pairs of uniform random operands, aligned bit by bit."""
    rng = np.random.default_rng(seed)
    r = _as_range(length_range)
    out = []
    for l in _draw_lengths(rng, r, count):
        a = rng.integers(0, 2, size=int(l))
        b = rng.integers(0, 2, size=int(l))
        out.append(_sum_sample("sum", a, b))
    return out


def _fill_runs(a, b, lo: int, hi: int, rng) -> int:
    """Scatter short carry runs (1-runs in a, marker in b) into a[lo:hi),
    keeping a zero between consecutive runs.  Returns the run count."""
    pos = lo
    placed = 0
    while pos < hi:
        if rng.random() < 0.5:
            pos += 1
            continue
        run = int(rng.integers(1, hi - pos + 1))
        a[pos:pos + run] = 1
        b[pos] = 1
        placed += 1
        pos += run + 1
    return placed


def gen_adversarial_sum(length_range, count: int, seed: int) -> list[TaskSample]:
    """Summation samples built to force long carry chains: operand A holds
    maximal runs of 1s, operand B a single 1 at the low end of each run, so
    the carry propagates across the whole run.  One run always spans at
    least half the operand; the rest of the layout is randomized."""
    rng = np.random.default_rng(seed)
    r = _as_range(length_range)
    out = []
    for l in _draw_lengths(rng, r, count):
        l = int(l)
        a = np.zeros(l, dtype=np.int64)
        b = np.zeros(l, dtype=np.int64)
        big = int(rng.integers((l + 1) // 2, l + 1))
        start = int(rng.integers(0, l - big + 1))
        a[start:start + big] = 1
        b[start] = 1
        runs = 1
        # zones end/start one short of the big run to keep it maximal
        runs += _fill_runs(a, b, 0, max(start - 1, 0), rng)
        runs += _fill_runs(a, b, min(start + big + 1, l), l, rng)
        out.append(_sum_sample("sum_adversarial", a, b,
                               meta={"runs": runs, "longest_run": big}))
    return out


# ---------------------------------------------------------------------------
# dyck words


def dyck_oracle(bits) -> bool:
    """Counter scan: 0 opens (+1), 1 closes (-1); a word is balanced iff
    the counter never dips below zero and ends at zero."""
    depth = 0
    for bit in np.asarray(bits).reshape(-1):
        depth += 1 if bit == 0 else -1
        if depth < 0:
            return False
    return depth == 0


@lru_cache(maxsize=None)
def _dyck_log_counts(length: int) -> np.ndarray:
    """log of the number of balanced completions with s steps left from
    height h, for s in [0, length], h in [0, length]."""
    f = np.full((length + 1, length + 2), -np.inf)
    f[0, 0] = 0.0
    for s in range(1, length + 1):
        opened = f[s - 1, 1:length + 2]
        closed = np.full(length + 1, -np.inf)
        closed[1:] = f[s - 1, 0:length]
        f[s, :length + 1] = np.logaddexp(opened, closed)
    return f


def _sample_balanced(rng, length: int) -> np.ndarray:
    """Uniform sample over balanced words of the given (even) length."""
    f = _dyck_log_counts(length)
    bits = np.zeros(length, dtype=np.int64)
    h = 0
    for i in range(length):
        s = length - i
        lo = f[s - 1, h + 1]
        lc = f[s - 1, h - 1] if h > 0 else -np.inf
        p_open = np.exp(lo - np.logaddexp(lo, lc))
        if rng.random() < p_open:
            h += 1
        else:
            bits[i] = 1
            h -= 1
    return bits


def _dyck_sample(bits: np.ndarray, label: int, kind: str) -> TaskSample:
    l = bits.size
    inputs = bits.astype(np.float64)[:, None]
    targets = np.zeros(l)
    targets[-1] = label
    mask = np.zeros(l, dtype=bool)
    mask[-1] = True
    return TaskSample("dyck", l, inputs, targets, mask, label=label,
                      meta={"kind": kind})


def gen_dyck(length_range, count: int, seed: int) -> list[TaskSample]:
    """Half balanced words (uniform over balanced words of an even length),
    half invalid ones.  Invalid words mix single-position flips of balanced
    words with uniform random strings, both confirmed invalid by the
    oracle."""
    rng = np.random.default_rng(seed)
    r = _as_range(length_range)
    out = []
    for l in _draw_lengths(rng, r, count):
        l = int(l)
        if rng.random() < 0.5:
            even = l + 1 if (l % 2 and l + 1 <= r.max_len) else l - (l % 2)
            even = max(even, 2)
            out.append(_dyck_sample(_sample_balanced(rng, even), 1, "balanced"))
        elif rng.random() < 0.5:
            even = max(l - (l % 2), 2)
            bits = _sample_balanced(rng, even)
            bits[rng.integers(0, even)] ^= 1
            assert not dyck_oracle(bits)
            out.append(_dyck_sample(bits, 0, "flip"))
        else:
            while True:
                bits = rng.integers(0, 2, size=l)
                if not dyck_oracle(bits):
                    break
            out.append(_dyck_sample(bits, 0, "random"))
    return out


# ---------------------------------------------------------------------------
# dispatch and batching helpers


_GENERATORS = {
    "copy": gen_copy,
    "sum": gen_binary_sum,
    "sum_adversarial": gen_adversarial_sum,
    "dyck": gen_dyck,
}


def generate(task: str, length_range, count: int, seed: int) -> list[TaskSample]:
    if task not in _GENERATORS:
        raise ValueError(f"unknown task {task!r}; choose from {', '.join(TASK_NAMES)}")
    return _GENERATORS[task](length_range, count, seed)


def collate(samples: list[TaskSample]):
    """Stack equally long samples into (inputs, targets, mask) batch arrays."""
    iters = {s.iterations for s in samples}
    if len(iters) != 1:
        raise ValueError("collate needs samples with a common iteration count")
    inputs = np.stack([s.inputs for s in samples])
    targets = np.stack([s.targets for s in samples])
    mask = samples[0].mask.copy()
    return inputs, targets, mask


def _digits(values) -> str:
    return "".join(str(int(v)) for v in values)


def render_sample(sample: TaskSample) -> str:
    """One tab-separated dataset line: task, length, input, target."""
    l = sample.length
    if sample.task == "copy":
        inp = _digits(sample.inputs[:l, 0])
        tgt = _digits(sample.targets)
    elif sample.task in ("sum", "sum_adversarial"):
        inp = _digits(sample.inputs[:l, 0]) + "+" + _digits(sample.inputs[:l, 1])
        tgt = _digits(sample.targets)
    elif sample.task == "dyck":
        inp = _digits(sample.inputs[:, 0])
        tgt = "valid" if sample.label else "invalid"
    else:
        raise ValueError(f"unknown task {sample.task!r}")
    return f"{sample.task}\t{l}\t{inp}\t{tgt}"
