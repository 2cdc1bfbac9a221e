"""The localized-memory recurrent network.

A one-hidden-layer controller (ReLU hidden, sigmoid outputs) is coupled to
an external memory array through one read head and one write head.  Each
head occupies a single decimal-valued position; a read averages the two
neighboring cells weighted by the fractional part of the position, and a
write blends into the same two cells, so one iteration touches at most two
cells.  Positions wrap by floating-point modulo, which preserves their
fractional part.

Controller input order per iteration: the external inputs ``x_t`` (width
``input_dim``), the last read value, then the ``state_count`` recurrent
state values.  Output order: move-read gate, move-write gate, read shift,
write shift, write value, then the next state vector.  The two shift
outputs are rescaled from (0,1) to (-1,1); everything else stays a sigmoid.
The last state value is the network's output at every iteration.

Within iteration t the order of operations is: controller step on
(x_t, v_r, s); write the new value at the current write position; move
both heads; read at the new read position.  A step count larger than the
input length feeds -1 for the missing inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import RAW_OPS, Tape, TapeOps
from .binning import BinSpec, bin_index, bin_value

__all__ = [
    "HEAD_CONTROLS",
    "LdmModel",
    "LdmRuntimeState",
    "ControllerStep",
    "UnrollResult",
    "controller_step",
    "head_update",
    "memory_read",
    "memory_write",
    "run",
    "training_graph",
]

# m_r, m_w, delta_r, delta_w, v_w precede the state outputs.
HEAD_CONTROLS = 5


@dataclass
class LdmModel:
    """Controller weights plus architecture hyperparameters.

    ``mem_size`` is the default memory length; evaluation may run the same
    weights against a larger memory since the controller never observes
    absolute positions.
    """

    input_dim: int
    hidden_units: int
    state_count: int
    mem_size: int
    w1: np.ndarray  # (input_dim + 1 + state_count, hidden_units)
    b1: np.ndarray  # (hidden_units,)
    w2: np.ndarray  # (hidden_units, 5 + state_count)
    b2: np.ndarray  # (5 + state_count,)

    @property
    def n_inputs(self) -> int:
        return self.input_dim + 1 + self.state_count

    @property
    def n_outputs(self) -> int:
        return HEAD_CONTROLS + self.state_count

    def params(self) -> list[np.ndarray]:
        """Weight arrays in their declared (checkpoint) order."""
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "LdmModel":
        return LdmModel(self.input_dim, self.hidden_units, self.state_count,
                        self.mem_size, self.w1.copy(), self.b1.copy(),
                        self.w2.copy(), self.b2.copy())

    @classmethod
    def create(cls, input_dim: int, hidden_units: int = 64,
               state_count: int = 6, mem_size: int = 64,
               seed: int = 0) -> "LdmModel":
        """Fresh model with uniform +/-sqrt(6/(fan_in+fan_out)) weights and
        zero biases."""
        if mem_size < 2:
            raise ValueError("mem_size must be at least 2")
        n_in = input_dim + 1 + state_count
        n_out = HEAD_CONTROLS + state_count
        rng = np.random.default_rng(seed)
        lim1 = np.sqrt(6.0 / (n_in + hidden_units))
        lim2 = np.sqrt(6.0 / (hidden_units + n_out))
        return cls(
            input_dim=input_dim,
            hidden_units=hidden_units,
            state_count=state_count,
            mem_size=mem_size,
            w1=rng.uniform(-lim1, lim1, (n_in, hidden_units)),
            b1=np.zeros(hidden_units),
            w2=rng.uniform(-lim2, lim2, (hidden_units, n_out)),
            b2=np.zeros(n_out),
        )


@dataclass
class LdmRuntimeState:
    """Head positions, memory contents, recurrent state, and last read."""

    p_r: np.ndarray      # (batch,)
    p_w: np.ndarray      # (batch,)
    memory: np.ndarray   # (batch, mem_size)
    s: np.ndarray        # (batch, state_count)
    v_r: np.ndarray      # (batch,)


class ControllerStep(NamedTuple):
    move_read: np.ndarray
    move_write: np.ndarray
    delta_read: np.ndarray   # rescaled into (-1, 1)
    delta_write: np.ndarray  # rescaled into (-1, 1)
    write_value: np.ndarray
    state: np.ndarray
    raw: np.ndarray          # full sigmoid output vector, pre-rescale


def controller_step(model: LdmModel, x, v_r, s) -> ControllerStep:
    """One controller evaluation.  Accepts a single sample (x of shape
    (input_dim,), scalar v_r, s of shape (state_count,)) or a batch with a
    leading axis on each argument."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if not batched:
        x = x[None, :]
    v_r = np.atleast_1d(np.asarray(v_r, dtype=np.float64))
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 1:
        s = s[None, :]
    ctrl_in = np.concatenate([x, v_r[:, None], s], axis=1)
    if ctrl_in.shape[1] != model.n_inputs:
        raise ValueError(
            f"controller expects {model.n_inputs} inputs, got {ctrl_in.shape[1]}")
    h = ad.k_relu(ad.k_affine(ctrl_in, model.w1, model.b1))
    raw = ad.k_sigmoid(ad.k_affine(h, model.w2, model.b2))
    out = ControllerStep(
        move_read=raw[:, 0],
        move_write=raw[:, 1],
        delta_read=ad.k_scale_shift(raw[:, 2], 2.0, -1.0),
        delta_write=ad.k_scale_shift(raw[:, 3], 2.0, -1.0),
        write_value=raw[:, 4],
        state=raw[:, HEAD_CONTROLS:],
        raw=raw,
    )
    if batched:
        return out
    return ControllerStep(*(v[0] for v in out[:5]), out.state[0], out.raw[0])


def head_update(p: float, move: float, delta: float, mem_size: int) -> float:
    """New head position fmod((1-move)*p + move*(p+delta), mem_size),
    always landing in [0, mem_size)."""
    return float(ad.k_fmod(ad.k_lerp(move, p + delta, p), float(mem_size)))


def memory_read(memory: np.ndarray, p_r: float) -> float:
    """Average of the two cells around ``p_r`` weighted by its fractional
    part; the upper index wraps to 0 past the end."""
    mem_size = memory.shape[-1]
    j = int(np.floor(p_r)) % mem_size
    w = 1.0 - (p_r - np.floor(p_r))
    return float(ad.k_lerp(w, memory[j], memory[(j + 1) % mem_size]))


def memory_write(memory: np.ndarray, p_w: float, v_w: float) -> np.ndarray:
    """New memory with ``v_w`` blended into the two cells around ``p_w``;
    all other cells are unchanged."""
    mem_size = memory.shape[-1]
    k = np.array([int(np.floor(p_w)) % mem_size])
    k1 = (k + 1) % mem_size
    w = np.array([1.0 - (p_w - np.floor(p_w))])
    v = np.array([float(v_w)])
    return ad.k_write_cells(memory[None, :], k, k1, w, v)[0]


@dataclass
class UnrollResult:
    """Per-iteration outputs and traces of one unroll.

    On the taped path ``outputs`` and the two traces are graph nodes;
    on the raw path they are plain arrays.  ``states`` holds the
    per-iteration binned controller-input vectors as bin-index tuples
    (only collected on binned runs).
    """

    outputs: object           # (iterations, batch)
    state: LdmRuntimeState
    controller_trace: object  # (iterations, batch, 5 + state_count)
    read_trace: object        # (iterations, batch)
    states: np.ndarray | None = None     # (batch, iterations, components) int16
    positions: np.ndarray | None = None  # (iterations, batch, 2) post-move
    memories: np.ndarray | None = None   # (iterations, batch, mem) post-write


def _pad_inputs(inputs: np.ndarray, total_iterations: int | None):
    """Promote to (batch, steps, dim) and extend with -1 rows up to the
    requested iteration count."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, :, :]
    if x.ndim != 3:
        raise ValueError("inputs must be (steps, dim) or (batch, steps, dim)")
    b, l, d = x.shape
    total = l if total_iterations is None else int(total_iterations)
    if total < l:
        raise ValueError(f"total_iterations={total} is less than the "
                         f"input length {l}")
    if total == l:
        return x
    pad = np.full((b, total, d), -1.0)
    pad[:, :l, :] = x
    return pad


def _unroll(ops, weights, x_pad: np.ndarray, mem_size: int,
            spec: BinSpec | None = None,
            override: Callable | None = None,
            collect_states: bool = False,
            trajectory: bool = False) -> UnrollResult:
    """Shared unroll; ``ops`` selects the taped or the raw path."""
    if (spec is not None or override is not None or collect_states
            or trajectory) and ops.grad:
        raise ValueError("binning, overrides, and trace collection run on "
                         "the raw path only")
    if collect_states and spec is None:
        raise ValueError("state collection requires a bin spec")
    w1, b1, w2, b2 = weights
    batch, total, dim = x_pad.shape
    n = (b2.value if ops.grad else b2).shape[0] - HEAD_CONTROLS
    fmem = float(mem_size)

    p_r = ops.constant(np.full(batch, float(mem_size // 2)))
    p_w = ops.constant(np.full(batch, float(mem_size // 2)))
    memory = ops.constant(np.zeros((batch, mem_size)))
    s = ops.constant(np.zeros((batch, n)))
    v_r = ops.constant(np.zeros(batch))

    outputs = []
    ctrl_trace = []
    read_trace = []
    state_rows = [] if collect_states else None
    pos_rows = [] if trajectory else None
    mem_rows = [] if trajectory else None

    for t in range(total):
        x_t = x_pad[:, t, :]
        if collect_states:
            state_rows.append(np.concatenate([
                np.mod(x_t.astype(np.int64), 3),
                bin_index(ops.value(v_r), spec)[:, None],
                bin_index(ops.value(s), spec),
            ], axis=1).astype(np.int16))

        if override is not None:
            o = ops.constant(override(t, x_t, ops.value(v_r), ops.value(s)))
        else:
            ctrl_in = ops.concat([x_t, ops.reshape(v_r, (batch, 1)), s], 1)
            h = ops.relu(ops.affine(ctrl_in, w1, b1))
            o = ops.sigmoid(ops.affine(h, w2, b2))
        if spec is not None:
            o = bin_value(o, spec)

        m_r = ops.column(o, 0)
        m_w = ops.column(o, 1)
        d_r = ops.scale_shift(ops.column(o, 2), 2.0, -1.0)
        d_w = ops.scale_shift(ops.column(o, 3), 2.0, -1.0)
        v_w = ops.column(o, 4)
        s = ops.columns(o, HEAD_CONTROLS, HEAD_CONTROLS + n)

        # write at the pre-move write position
        kf = ops.floor_stopgrad(p_w)
        k = ops.value(kf).astype(np.int64) % mem_size
        k1 = (k + 1) % mem_size
        w_k = ops.scale_shift(ops.sub(p_w, kf), -1.0, 1.0)
        memory = ops.write_cells(memory, k, k1, w_k, v_w)

        # move both heads, wrapping into [0, mem_size)
        p_r = ops.fmod(ops.lerp(m_r, ops.add(p_r, d_r), p_r), fmem)
        p_w = ops.fmod(ops.lerp(m_w, ops.add(p_w, d_w), p_w), fmem)

        # read at the post-move read position
        jf = ops.floor_stopgrad(p_r)
        j = ops.value(jf).astype(np.int64) % mem_size
        j1 = (j + 1) % mem_size
        w_j = ops.scale_shift(ops.sub(p_r, jf), -1.0, 1.0)
        v_r = ops.lerp(w_j, ops.gather(memory, j), ops.gather(memory, j1))
        if spec is not None:
            v_r = bin_value(v_r, spec)

        outputs.append(ops.column(s, n - 1))
        ctrl_trace.append(o)
        read_trace.append(v_r)
        if trajectory:
            pos_rows.append(np.stack([ops.value(p_r), ops.value(p_w)], axis=1))
            mem_rows.append(ops.value(memory).copy())

    final = LdmRuntimeState(
        p_r=ops.value(p_r), p_w=ops.value(p_w), memory=ops.value(memory),
        s=ops.value(s), v_r=ops.value(v_r))
    return UnrollResult(
        outputs=ops.stack(outputs),
        state=final,
        controller_trace=ops.stack(ctrl_trace),
        read_trace=ops.stack(read_trace),
        states=(np.stack(state_rows, axis=1) if collect_states else None),
        positions=(np.stack(pos_rows) if trajectory else None),
        memories=(np.stack(mem_rows) if trajectory else None),
    )


def run(model: LdmModel, inputs, total_iterations: int | None = None,
        mem_size: int | None = None, spec: BinSpec | None = None,
        override: Callable | None = None, collect_states: bool = False,
        trajectory: bool = False) -> UnrollResult:
    """Evaluate the network over an input sequence (no gradients).

    ``spec`` switches on inference binning of the designated activation
    sites.  ``override`` replaces the controller's raw output vector with
    ``override(t, x_t, v_r, s) -> (batch, 5 + state_count)`` for scripted
    runs.  ``collect_states`` additionally records the binned
    controller-input vector of every iteration.
    """
    x_pad = _pad_inputs(inputs, total_iterations)
    return _unroll(
        RAW_OPS, (model.w1, model.b1, model.w2, model.b2), x_pad,
        mem_size or model.mem_size, spec=spec, override=override,
        collect_states=collect_states, trajectory=trajectory)


def training_graph(tape: Tape, model: LdmModel, inputs,
                   total_iterations: int | None = None,
                   mem_size: int | None = None):
    """Record the full unroll on a tape for backpropagation.

    Returns ``(result, leaves)`` where ``leaves`` wrap the model's weight
    arrays in declared order; the same forward kernels as :func:`run` make
    the two paths produce identical values.
    """
    x_pad = _pad_inputs(inputs, total_iterations)
    ops = TapeOps(tape)
    leaves = [tape.parameter(p) for p in model.params()]
    result = _unroll(ops, tuple(leaves), x_pad, mem_size or model.mem_size)
    return result, leaves
