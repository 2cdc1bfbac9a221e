"""Reverse-mode differentiation on a flat operation tape.

A :class:`Node` carries a float64 numpy array (a plain scalar is the 0-d
case; a batch of scalars is a 1-d array).  The :class:`Tape` records nodes
in creation order, which is automatically a topological order, so the
backward pass is a single non-recursive reverse sweep.

Forward arithmetic for every operation lives in module-level ``k_*``
kernels.  The same kernels back :class:`RawOps`, a gradient-free twin of
:class:`TapeOps`, which guarantees that a recorded forward pass and a
plain evaluation produce bit-identical values.

Subgradient conventions (deliberate, deterministic):
  * relu'(0) = 0 and |x|' at 0 = 0,
  * min reductions break ties toward the first (lowest-index) element,
  * ``floor_stopgrad`` contributes no derivative at all,
  * ``fmod(x, m)`` has derivative 1 in x away from multiples of m.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Node",
    "Tape",
    "TapeOps",
    "RawOps",
    "backpropagate",
    "finite_difference_check",
    "FiniteDifferenceReport",
]


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# forward kernels (shared between the taped and the raw evaluation paths)


def k_add(a, b):
    return a + b


def k_sub(a, b):
    return a - b


def k_mul(a, b):
    return a * b


def k_scale_shift(x, scale, shift):
    return scale * x + shift


def k_relu(x):
    return np.maximum(x, 0.0)


def k_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def k_abs(x):
    return np.abs(x)


def k_log(x):
    return np.log(x)


def k_clip(x, lo, hi):
    return np.clip(x, lo, hi)


def k_fmod(x, modulus):
    # np.remainder lands in [0, modulus), except that a tiny negative input
    # can round up to exactly `modulus`; fold that edge back to 0.
    r = np.remainder(x, modulus)
    return np.where(r == modulus, 0.0, r)


def k_floor(x):
    return np.floor(x)


def k_lerp(w, a, b):
    return w * a + (1.0 - w) * b


def k_affine(x, w, b):
    return x @ w + b


def k_concat(parts, axis):
    return np.concatenate(parts, axis=axis)


def k_reshape(x, shape):
    return np.reshape(x, shape)


def k_column(x, j):
    return x[:, j]


def k_columns(x, j0, j1):
    return x[:, j0:j1]


def k_gather(m, idx):
    return m[np.arange(m.shape[0]), idx]


def k_write_cells(m, k, k1, w, v):
    """Blend v into cells k and k+1 of each row: out[k] = w*v + (1-w)*m[k],
    out[k1] = (1-w)*v + w*m[k1]; every other cell is copied unchanged."""
    out = m.copy()
    rows = np.arange(m.shape[0])
    out[rows, k] = w * v + (1.0 - w) * m[rows, k]
    out[rows, k1] = (1.0 - w) * v + w * m[rows, k1]
    return out


def k_stack(parts):
    return np.stack(parts, axis=0)


def k_min_reduce(x, axis):
    return np.min(x, axis=axis)


def k_sum(x):
    return np.sum(x)


def k_mean(x):
    return np.mean(x)


# ---------------------------------------------------------------------------
# graph nodes


class Node:
    """One recorded value; ``grad`` is filled by :func:`backpropagate`."""

    __slots__ = ("value", "grad", "tape", "_parents", "_grad_fn")

    def __init__(self, value, tape, parents=(), grad_fn=None):
        self.value = value
        self.grad = None
        self.tape = tape
        self._parents = parents
        self._grad_fn = grad_fn
        tape._nodes.append(self)

    @property
    def gradient(self) -> np.ndarray:
        """Derivative of the last backpropagated loss w.r.t. this node
        (zeros if the node is unreachable from the loss)."""
        if self.grad is None:
            return np.zeros_like(self.value)
        return self.grad

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return scale_shift(self, -1.0, float(other))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale_shift(self, -1.0, 0.0)

    def __repr__(self):
        return f"Node(value={self.value!r})"


class Tape:
    """Ordered record of one forward computation.

    Creation order is topological order: an operation can only refer to
    nodes that already exist, so reverse iteration visits every node after
    all of its consumers.
    """

    def __init__(self):
        self._nodes: list[Node] = []

    def __len__(self):
        return len(self._nodes)

    def parameter(self, array) -> Node:
        """Wrap a trainable array as a leaf.  The array is referenced, not
        copied, so an in-place optimizer update is visible to the next tape."""
        a = np.asarray(array)
        if a.dtype != np.float64:
            raise TypeError("parameters must be float64 arrays")
        return Node(a, self)

    def constant(self, x) -> Node:
        """Wrap a non-trainable value as a leaf."""
        return Node(_as_array(x), self)

    def record_op(self, kind: str, *operands) -> Node:
        """Record an elementary operation by name.

        Supported kinds: add, mul, affine, relu, sigmoid, abs, min_reduce,
        fmod, floor_stopgrad, lerp.
        """
        try:
            fn = _RECORD_OPS[kind]
        except KeyError:
            raise ValueError(f"unknown op kind: {kind!r}") from None
        return fn(*operands)


def _lift(tape: Tape, x):
    """Nodes pass through; anything else becomes a constant value."""
    if isinstance(x, Node):
        return x
    return _as_array(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape of the operand it belongs to."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# operations


def add(a: Node, b) -> Node:
    if isinstance(b, Node):
        sa, sb = a.value.shape, b.value.shape
        return Node(
            k_add(a.value, b.value), a.tape, (a, b),
            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        )
    sa = a.value.shape
    return Node(k_add(a.value, _as_array(b)), a.tape, (a,),
                lambda g: (_unbroadcast(g, sa),))


def sub(a: Node, b) -> Node:
    if isinstance(b, Node):
        sa, sb = a.value.shape, b.value.shape
        return Node(
            k_sub(a.value, b.value), a.tape, (a, b),
            lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        )
    sa = a.value.shape
    return Node(k_sub(a.value, _as_array(b)), a.tape, (a,),
                lambda g: (_unbroadcast(g, sa),))


def mul(a: Node, b) -> Node:
    if isinstance(b, Node):
        va, vb = a.value, b.value
        return Node(
            k_mul(va, vb), a.tape, (a, b),
            lambda g: (_unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape)),
        )
    vb = _as_array(b)
    sa = a.value.shape
    return Node(k_mul(a.value, vb), a.tape, (a,),
                lambda g: (_unbroadcast(g * vb, sa),))


def scale_shift(x: Node, scale: float, shift: float) -> Node:
    return Node(k_scale_shift(x.value, scale, shift), x.tape, (x,),
                lambda g: (scale * g,))


def relu(x: Node) -> Node:
    mask = (x.value > 0.0).astype(np.float64)
    return Node(k_relu(x.value), x.tape, (x,), lambda g: (g * mask,))


def sigmoid(x: Node) -> Node:
    y = k_sigmoid(x.value)
    return Node(y, x.tape, (x,), lambda g: (g * y * (1.0 - y),))


def absolute(x: Node) -> Node:
    s = np.sign(x.value)  # sign(0) = 0, matching the |x|'(0) = 0 convention
    return Node(k_abs(x.value), x.tape, (x,), lambda g: (g * s,))


def log(x: Node) -> Node:
    v = x.value
    return Node(k_log(v), x.tape, (x,), lambda g: (g / v,))


def clip(x: Node, lo: float, hi: float) -> Node:
    inside = ((x.value > lo) & (x.value < hi)).astype(np.float64)
    return Node(k_clip(x.value, lo, hi), x.tape, (x,), lambda g: (g * inside,))


def fmod(x: Node, modulus: float) -> Node:
    """Floating-point modulo into [0, modulus); derivative 1 w.r.t. x."""
    if modulus <= 0:
        raise ValueError(f"fmod modulus must be positive, got {modulus}")
    return Node(k_fmod(x.value, modulus), x.tape, (x,), lambda g: (g,))


def floor_stopgrad(x: Node) -> Node:
    """Forward floor(x); propagates no derivative to x."""
    return Node(k_floor(x.value), x.tape)


def lerp(w: Node, a: Node, b: Node) -> Node:
    """w*a + (1-w)*b."""
    vw, va, vb = w.value, a.value, b.value
    return Node(
        k_lerp(vw, va, vb), w.tape, (w, a, b),
        lambda g: (
            _unbroadcast(g * (va - vb), vw.shape),
            _unbroadcast(g * vw, va.shape),
            _unbroadcast(g * (1.0 - vw), vb.shape),
        ),
    )


def affine(x: Node, w: Node, b: Node) -> Node:
    """x @ w + b for x of shape (batch, n_in), w (n_in, n_out), b (n_out,)."""
    vx, vw = x.value, w.value
    return Node(
        k_affine(vx, vw, b.value), x.tape, (x, w, b),
        lambda g: (g @ vw.T, vx.T @ g, g.sum(axis=0)),
    )


def concat(parts, axis: int) -> Node:
    """Concatenate nodes and plain arrays; only node operands get gradient."""
    tape = next(p.tape for p in parts if isinstance(p, Node))
    values = [p.value if isinstance(p, Node) else _as_array(p) for p in parts]
    nodes = [p for p in parts if isinstance(p, Node)]
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)
    node_slices = [
        (offsets[i], offsets[i + 1])
        for i, p in enumerate(parts)
        if isinstance(p, Node)
    ]

    def grad_fn(g):
        sl = [slice(None)] * g.ndim
        out = []
        for lo, hi in node_slices:
            sl[axis] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return out

    return Node(k_concat(values, axis), tape, tuple(nodes), grad_fn)


def reshape(x: Node, shape) -> Node:
    orig = x.value.shape
    return Node(k_reshape(x.value, shape), x.tape, (x,),
                lambda g: (g.reshape(orig),))


def column(x: Node, j: int) -> Node:
    shape = x.value.shape

    def grad_fn(g):
        z = np.zeros(shape)
        z[:, j] = g
        return (z,)

    return Node(k_column(x.value, j), x.tape, (x,), grad_fn)


def columns(x: Node, j0: int, j1: int) -> Node:
    shape = x.value.shape

    def grad_fn(g):
        z = np.zeros(shape)
        z[:, j0:j1] = g
        return (z,)

    return Node(k_columns(x.value, j0, j1), x.tape, (x,), grad_fn)


def gather(m: Node, idx: np.ndarray) -> Node:
    """Per-row cell lookup: out[i] = m[i, idx[i]]."""
    shape = m.value.shape
    rows = np.arange(shape[0])

    def grad_fn(g):
        z = np.zeros(shape)
        np.add.at(z, (rows, idx), g)
        return (z,)

    return Node(k_gather(m.value, idx), m.tape, (m,), grad_fn)


def write_cells(m: Node, k: np.ndarray, k1: np.ndarray, w: Node, v: Node) -> Node:
    """Taped version of :func:`k_write_cells`; k and k1 are fixed int rows."""
    vm, vw_, vv = m.value, w.value, v.value
    rows = np.arange(vm.shape[0])

    def grad_fn(g):
        gm = g.copy()
        gk = g[rows, k]
        gk1 = g[rows, k1]
        gm[rows, k] = gk * (1.0 - vw_)
        gm[rows, k1] = gk1 * vw_
        gv = gk * vw_ + gk1 * (1.0 - vw_)
        gw = gk * (vv - vm[rows, k]) + gk1 * (vm[rows, k1] - vv)
        return (gm, gw, gv)

    return Node(k_write_cells(vm, k, k1, vw_, vv), m.tape, (m, w, v), grad_fn)


def stack(parts) -> Node:
    """Stack equal-shape nodes along a new leading axis."""
    tape = parts[0].tape
    return Node(
        k_stack([p.value for p in parts]), tape, tuple(parts),
        lambda g: tuple(g[i] for i in range(len(parts))),
    )


def min_reduce(x: Node, axis: int = -1) -> Node:
    """Minimum along an axis; ties route the derivative to the first
    (lowest-index) minimizer."""
    v = x.value
    idx = np.expand_dims(np.argmin(v, axis=axis), axis)

    def grad_fn(g):
        z = np.zeros_like(v)
        np.put_along_axis(z, idx, np.expand_dims(g, axis), axis)
        return (z,)

    return Node(k_min_reduce(v, axis), x.tape, (x,), grad_fn)


def sum_all(x: Node) -> Node:
    shape = x.value.shape
    return Node(k_sum(x.value), x.tape, (x,),
                lambda g: (np.broadcast_to(g, shape),))


def mean_all(x: Node) -> Node:
    shape = x.value.shape
    n = x.value.size
    return Node(k_mean(x.value), x.tape, (x,),
                lambda g: (np.broadcast_to(g / n, shape),))


_RECORD_OPS = {
    "add": add,
    "mul": mul,
    "affine": affine,
    "relu": relu,
    "sigmoid": sigmoid,
    "abs": absolute,
    "min_reduce": min_reduce,
    "fmod": fmod,
    "floor_stopgrad": floor_stopgrad,
    "lerp": lerp,
}


# ---------------------------------------------------------------------------
# backward pass


def backpropagate(loss: Node) -> None:
    """Fill the ``grad`` slot of every node reachable from ``loss``.

    All derivative slots on the tape are cleared first, so repeated calls
    never accumulate across passes.
    """
    if loss.value.shape != ():
        raise ValueError("backpropagate expects a scalar loss node")
    for n in loss.tape._nodes:
        n.grad = None
    loss.grad = np.ones(())
    for n in reversed(loss.tape._nodes):
        if n._grad_fn is None or n.grad is None:
            continue
        for parent, g in zip(n._parents, n._grad_fn(n.grad)):
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


# ---------------------------------------------------------------------------
# op namespaces for code that runs both taped and raw


class TapeOps:
    """Ops bound to a tape; every call records a node."""

    grad = True

    def __init__(self, tape: Tape):
        self.tape = tape

    def constant(self, x):
        return self.tape.constant(x)

    def value(self, x):
        return x.value

    add = staticmethod(add)
    sub = staticmethod(sub)
    mul = staticmethod(mul)
    scale_shift = staticmethod(scale_shift)
    relu = staticmethod(relu)
    sigmoid = staticmethod(sigmoid)
    absolute = staticmethod(absolute)
    log = staticmethod(log)
    clip = staticmethod(clip)
    fmod = staticmethod(fmod)
    floor_stopgrad = staticmethod(floor_stopgrad)
    lerp = staticmethod(lerp)
    affine = staticmethod(affine)
    concat = staticmethod(concat)
    reshape = staticmethod(reshape)
    column = staticmethod(column)
    columns = staticmethod(columns)
    gather = staticmethod(gather)
    write_cells = staticmethod(write_cells)
    stack = staticmethod(stack)
    min_reduce = staticmethod(min_reduce)
    sum_all = staticmethod(sum_all)
    mean_all = staticmethod(mean_all)


class RawOps:
    """Gradient-free twin of :class:`TapeOps` over plain arrays.

    Calls the same forward kernels, so values match the taped path
    bit-for-bit.
    """

    grad = False

    def constant(self, x):
        return _as_array(x)

    def value(self, x):
        return x

    add = staticmethod(k_add)
    sub = staticmethod(k_sub)
    mul = staticmethod(k_mul)
    scale_shift = staticmethod(k_scale_shift)
    relu = staticmethod(k_relu)
    sigmoid = staticmethod(k_sigmoid)
    absolute = staticmethod(k_abs)
    log = staticmethod(k_log)
    clip = staticmethod(k_clip)
    fmod = staticmethod(k_fmod)
    floor_stopgrad = staticmethod(k_floor)
    lerp = staticmethod(k_lerp)
    affine = staticmethod(k_affine)
    concat = staticmethod(k_concat)
    reshape = staticmethod(k_reshape)
    column = staticmethod(k_column)
    columns = staticmethod(k_columns)
    gather = staticmethod(k_gather)
    write_cells = staticmethod(k_write_cells)
    stack = staticmethod(k_stack)
    min_reduce = staticmethod(k_min_reduce)
    sum_all = staticmethod(k_sum)
    mean_all = staticmethod(k_mean)


RAW_OPS = RawOps()


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class FiniteDifferenceReport:
    """Comparison of analytic derivatives against central differences."""

    max_rel_error: float
    worst: tuple[int, int] | None = None  # (param index, flat offset)
    failures: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def finite_difference_check(params, build_loss, step=1e-5,
                            rel_tol=1e-4, abs_tol=1e-7) -> FiniteDifferenceReport:
    """Compare analytic gradients against (L(t+h) - L(t-h)) / 2h.

    ``params`` is a list of float64 arrays that ``build_loss`` reads; they
    are perturbed in place coordinate by coordinate and restored.
    ``build_loss()`` must rebuild the forward pass from the current array
    contents and return ``(loss_node, leaf_nodes)`` with leaves aligned
    to ``params``.

    A coordinate fails when |analytic - numeric| exceeds ``abs_tol`` and
    also exceeds ``rel_tol`` relative to max(|analytic|, |numeric|).
    """
    loss, leaves = build_loss()
    backpropagate(loss)
    grads = [leaf.gradient.reshape(-1).copy() for leaf in leaves]

    max_rel = 0.0
    worst = None
    failures = []
    for pi, arr in enumerate(params):
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = float(build_loss()[0].value)
            flat[i] = orig - step
            lm = float(build_loss()[0].value)
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * step)
            analytic = grads[pi][i]
            err = abs(analytic - numeric)
            if err <= abs_tol:
                continue
            rel = err / max(abs(analytic), abs(numeric))
            if rel > max_rel:
                max_rel = rel
                worst = (pi, i)
            if rel > rel_tol:
                failures.append((pi, i, rel))
    return FiniteDifferenceReport(max_rel_error=max_rel, worst=worst,
                                  failures=failures)
