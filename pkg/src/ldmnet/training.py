"""Optimization loop with a length curriculum, combined loss, validation
gating, and length-extrapolation evaluation.

Training draws a fresh batch every step: one sequence length sampled
uniformly from the current curriculum range, then that many samples from
the task generator.  The curriculum ceiling starts at ``curriculum_start``
(default ``min_len``; it may start lower to bootstrap hard tasks) and
grows by ``curriculum_step`` whenever rolling accuracy at the ceiling
length clears the promotion threshold.  Once the ceiling reaches
``max_len`` the run stops as soon as rolling validation accuracy at
``val_len`` reaches 1.0 and, when the digital loss is active, a bin search
at ``max_target_bins`` or fewer bins succeeds.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import tasks
from .binning import BinSpec, digital_loss_node, find_bin_count
from .model import LdmModel, run, training_graph

__all__ = [
    "TrainConfig",
    "EvalRow",
    "EvalReport",
    "TrainResult",
    "Adam",
    "baseline_loss",
    "train_run",
    "evaluate",
    "per_sample_correct",
    "samples_accuracy",
    "eval_mem_size",
]


@dataclass
class TrainConfig:
    """Everything a training run depends on.  All randomness flows from
    ``seed``; two runs with equal configs produce identical results."""

    task: str = "sum"
    min_len: int = 8
    max_len: int = 20
    val_len: int = 30
    test_lengths: tuple[int, ...] = (200, 900)
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    digital_loss: bool = True
    digital_weight: float = 0.1
    digital_bins: int | None = None       # None: use max_target_bins
    digital_start_step: int = 0
    max_target_bins: int = 5
    bin_search_cap: int = 64
    binned_eval: bool = True
    curriculum_start: int | None = None   # None: min_len; may be < min_len
    curriculum_step: int = 2
    promotion_threshold: float = 0.95
    promotion_window: int = 200
    val_interval: int = 50
    val_batch: int = 32
    log_interval: int = 100
    hidden_units: int = 64
    state_count: int = 6
    mem_size: int | None = None           # None: 2 * longest run length + 4
    eval_count: int = 200
    seed: int = 0
    max_steps: int = 200_000

    def resolved_mem_size(self) -> int:
        if self.mem_size is not None:
            return self.mem_size
        return 2 * max(self.max_len, self.val_len) + 4


@dataclass
class EvalRow:
    length: int
    accuracy: float | None
    binned: bool
    n_bins: int | None
    samples: int
    error: str | None = None


@dataclass
class EvalReport:
    task: str
    rows: list[EvalRow] = field(default_factory=list)


@dataclass
class TrainResult:
    model: LdmModel
    report: EvalReport
    log_lines: list[str]
    converged: bool
    steps: int
    final_val_accuracy: float
    n_bins: int | None


class Adam:
    """Gradient descent with per-parameter first/second moment estimates
    and bias correction; updates happen in place."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 epsilon=1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = epsilon
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def baseline_loss(outputs, targets, mask) -> float:
    """Mean binary cross-entropy over the masked steps, with predictions
    clamped to [1e-7, 1 - 1e-7].  Accepts (steps,) vectors or
    (steps, batch) matrices with a shared (steps,) mask."""
    o = np.asarray(outputs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if o.shape != t.shape or m.shape != o.shape[: m.ndim]:
        raise ValueError(f"shape mismatch: outputs {o.shape}, targets "
                         f"{t.shape}, mask {m.shape}")
    p = np.clip(o[m], 1e-7, 1.0 - 1e-7)
    y = t[m]
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def _baseline_loss_node(out_node, targets_ib: np.ndarray,
                        mask: np.ndarray) -> ad.Node:
    """Taped version of :func:`baseline_loss` for (steps, batch) outputs."""
    steps, batch = targets_ib.shape
    weights = np.broadcast_to(mask[:, None], (steps, batch)).astype(np.float64)
    count = weights.sum()
    p = ad.clip(out_node, 1e-7, 1.0 - 1e-7)
    ll = ad.add(ad.mul(ad.log(p), targets_ib),
                ad.mul(ad.log(ad.scale_shift(p, -1.0, 1.0)), 1.0 - targets_ib))
    return ad.scale_shift(ad.sum_all(ad.mul(ll, weights / count)), -1.0, 0.0)


def eval_mem_size(model: LdmModel, length: int) -> int:
    """Memory sized for an evaluation at the given sequence length."""
    return max(model.mem_size, 2 * length + 4)


def per_sample_correct(model: LdmModel, samples, spec: BinSpec | None = None,
                       mem_size: int | None = None,
                       chunk: int = 256) -> np.ndarray:
    """Boolean correctness per sample.  Sequence tasks count a sample
    correct iff every masked output rounds (threshold 0.5, ties to 1) to
    its target; classification thresholds the final output."""
    correct = np.zeros(len(samples), dtype=bool)
    by_iters: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_iters.setdefault(s.iterations, []).append(i)
    for iters, idxs in by_iters.items():
        for lo in range(0, len(idxs), chunk):
            part = idxs[lo:lo + chunk]
            group = [samples[i] for i in part]
            inputs, targets, mask = tasks.collate(group)
            mem = mem_size or eval_mem_size(model, max(s.length for s in group))
            out = run(model, inputs, mem_size=mem, spec=spec).outputs  # (I, B)
            pred = (out >= 0.5).astype(np.float64)
            ok = np.all(pred[mask, :] == targets.T[mask, :], axis=0)
            correct[part] = ok
    return correct


def samples_accuracy(model: LdmModel, samples, spec: BinSpec | None = None,
                     mem_size: int | None = None) -> float:
    return float(np.mean(per_sample_correct(model, samples, spec=spec,
                                            mem_size=mem_size)))


def evaluate(model: LdmModel, task: str, lengths, count: int,
             binned: bool = False, spec: BinSpec | None = None,
             seed: int = 0) -> EvalReport:
    """Accuracy per length on fresh seeded test sets.

    A length that exhausts memory is reported as an error row; the
    remaining lengths are still evaluated.  Model parameters are never
    touched; binning applies at inference only.
    """
    if binned and spec is None:
        raise ValueError("binned evaluation needs a bin spec")
    report = EvalReport(task=task)
    for length in lengths:
        try:
            samples = tasks.generate(task, (length, length), count,
                                     seed=[seed, 4, length])
            acc = samples_accuracy(model, samples, spec=spec if binned else None)
            report.rows.append(EvalRow(length, acc, binned,
                                       spec.count if binned else None, count))
        except MemoryError:
            report.rows.append(EvalRow(length, None, binned,
                                       spec.count if binned else None, count,
                                       error="out of memory"))
    return report


def _combined_loss_node(l_b: ad.Node, l_d: ad.Node | None,
                        w_d: float) -> ad.Node:
    if l_d is None or w_d == 0.0:
        return l_b
    return ad.add(ad.scale_shift(l_d, w_d, 0.0),
                  ad.scale_shift(l_b, 1.0 - w_d, 0.0))


def train_run(config: TrainConfig, log=None) -> TrainResult:
    """Run the full training protocol and a final extrapolation evaluation.

    Non-convergence is not an error: the result carries the final metrics
    and ``converged=False``.  ``log`` receives one tab-separated line per
    ``log_interval`` steps (defaults to printing).
    """
    emit = log if log is not None else print
    d = tasks.input_dim(config.task)
    mem = config.resolved_mem_size()
    model = LdmModel.create(d, config.hidden_units, config.state_count, mem,
                            seed=[config.seed, 0])
    opt = Adam(model.params(), config.learning_rate, config.beta1,
               config.beta2, config.epsilon)
    length_rng = np.random.default_rng([config.seed, 2])
    dig_bins = config.digital_bins or config.max_target_bins
    dig_spec = BinSpec.for_sigmoid(dig_bins)
    w_d = config.digital_weight if config.digital_loss else 0.0

    cur_max = config.curriculum_start or config.min_len
    window: deque = deque(maxlen=config.promotion_window)        # at val_len
    promo_window: deque = deque(maxlen=config.promotion_window)  # at cur_max
    log_lines: list[str] = []
    val_acc = 0.0
    last_baseline = float("nan")
    last_digital = float("nan")
    converged = False
    n_bins = None
    val_chunks = 0
    next_search_step = 0
    start = time.monotonic()

    def log_line(step):
        line = "\t".join([
            str(step), str(cur_max), f"{last_baseline:.6f}",
            f"{last_digital:.6f}", f"{val_acc:.4f}"])
        log_lines.append(line)
        emit(line)

    even_only = config.task == "dyck"  # odd-length batches would mix
    emit("step\tmax_len\ttrain_loss\tdigital_loss\tval_accuracy")
    step = 0
    while step < config.max_steps:
        step += 1
        low = min(config.min_len, cur_max)
        length = int(length_rng.integers(low, cur_max + 1))
        if even_only:
            length = max(2, length - (length % 2))
        batch = tasks.generate(config.task, (length, length),
                               config.batch_size, seed=[config.seed, 1, step])
        inputs, targets, mask = tasks.collate(batch)

        tape = ad.Tape()
        result, leaves = training_graph(tape, model, inputs)
        l_b = _baseline_loss_node(result.outputs, targets.T, mask)
        l_d = None
        if w_d > 0.0 and step > config.digital_start_step:
            flat = ad.concat([
                ad.reshape(result.controller_trace,
                           (result.controller_trace.value.size,)),
                ad.reshape(result.read_trace, (result.read_trace.value.size,)),
            ], 0)
            l_d = digital_loss_node(flat, dig_spec)
        loss = _combined_loss_node(l_b, l_d, w_d)
        ad.backpropagate(loss)
        opt.step(model.params(), [leaf.gradient for leaf in leaves])
        last_baseline = float(l_b.value)
        last_digital = float(l_d.value) if l_d is not None else 0.0

        if step % config.val_interval == 0:
            val_chunks += 1
            val_samples = tasks.generate(
                config.task, (config.val_len, config.val_len),
                config.val_batch, seed=[config.seed, 3, val_chunks])
            window.extend(per_sample_correct(model, val_samples).tolist())
            val_acc = float(np.mean(window)) if window else 0.0
            full = len(window) == config.promotion_window
            if cur_max < config.max_len:
                # promotion is judged at the current curriculum ceiling;
                # gating on val_len would deadlock before any extrapolation
                promo_samples = tasks.generate(
                    config.task, (cur_max, cur_max), config.val_batch,
                    seed=[config.seed, 7, val_chunks])
                promo_window.extend(
                    per_sample_correct(model, promo_samples).tolist())
                if len(promo_window) == config.promotion_window and \
                        np.mean(promo_window) >= config.promotion_threshold:
                    cur_max = min(cur_max + config.curriculum_step,
                                  config.max_len)
                    promo_window.clear()
            elif full and val_acc == 1.0:
                if config.digital_loss:
                    if step >= next_search_step:
                        n_bins = _final_bin_search(model, config,
                                                   cap=config.max_target_bins)
                        if n_bins is not None:
                            converged = True
                        else:
                            # keep training toward coarser bins; don't pay
                            # for a search on every validation round
                            next_search_step = step + 10 * config.val_interval
                else:
                    converged = True
                if converged:
                    log_line(step)
                    break

        if step % config.log_interval == 0:
            log_line(step)

    if not converged:
        emit(f"# no convergence after {step} steps "
             f"(val_accuracy={val_acc:.4f})")
    if converged and config.digital_loss is False and config.binned_eval:
        n_bins = _final_bin_search(model, config, cap=config.bin_search_cap)
    emit(f"# trained {step} steps in {time.monotonic() - start:.1f}s")

    report = EvalReport(task=config.task)
    if config.eval_count > 0:
        report.rows.extend(evaluate(
            model, config.task, config.test_lengths, config.eval_count,
            binned=False, seed=config.seed).rows)
        if config.binned_eval and n_bins is not None:
            report.rows.extend(evaluate(
                model, config.task, config.test_lengths, config.eval_count,
                binned=True, spec=BinSpec.for_sigmoid(n_bins),
                seed=config.seed).rows)
    return TrainResult(model=model, report=report, log_lines=log_lines,
                       converged=converged, steps=step,
                       final_val_accuracy=val_acc, n_bins=n_bins)


def _final_bin_search(model: LdmModel, config: TrainConfig,
                      cap: int) -> int | None:
    val_set = tasks.generate(config.task, (config.val_len, config.val_len),
                             200, seed=[config.seed, 5])
    unbinned = samples_accuracy(model, val_set)
    return find_bin_count(model, val_set, unbinned, cap=cap)
