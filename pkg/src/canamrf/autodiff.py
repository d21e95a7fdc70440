"""Dense float64 matrix arithmetic with reverse-mode differentiation.

Everything numeric in this package flows through one carrier: a C-contiguous
float64 matrix (a 1 x n matrix stands in for a vector).  Each differentiable
primitive evaluates its forward value eagerly with numpy and appends a record
to a :class:`Tape`; the record holds the operation tag, the input/output node
ids, and a closure computing the vector-Jacobian product from whatever forward
values it captured.  Because records are appended in execution order the tape
is topologically sorted by construction, so :meth:`Tape.backward` is a single
reverse sweep that touches every record exactly once and releases each
intermediate adjoint as soon as its producer has consumed it.

Learnable parameters live in a :class:`ParamStore` (dot-separated path ->
matrix, with a parallel gradient slot per path); `Tape.param` binds a store
slot to a leaf node so `backward` can deposit gradients.  `grad_check`
closes the loop: it compares those gradients against central finite
differences, entry by entry.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

from .errors import NumericError, ShapeError

Array = np.ndarray

LOG_FLOOR = 1e-12


def tensor2(x) -> Array:
    """Coerce `x` to a C-contiguous float64 matrix; 1-D input becomes a row."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={a.ndim}")
    return np.ascontiguousarray(a)


class Node:
    """One value in a taped computation (leaf or primitive output)."""

    __slots__ = ("tape", "nid", "value", "needs_grad")

    def __init__(self, tape: "Tape", nid: int, value: Array, needs_grad: bool):
        self.tape = tape
        self.nid = nid
        self.value = value
        self.needs_grad = needs_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 value, got {self.value.shape}")
        return float(self.value[0, 0])

    def __add__(self, other: "Node") -> "Node":
        return add(self, other)

    def __mul__(self, other: "Node") -> "Node":
        return mul(self, other)

    def __repr__(self) -> str:
        r, c = self.value.shape
        return f"Node(#{self.nid}, {r}x{c}, grad={self.needs_grad})"


class ParamStore:
    """Named parameter matrices with parallel, same-shaped gradient slots."""

    def __init__(self):
        self._values: dict[str, Array] = {}
        self._grads: dict[str, Array] = {}

    def add(self, path: str, value) -> None:
        if path in self._values:
            raise ValueError(f"duplicate parameter path {path!r}")
        v = tensor2(value).copy()
        self._values[path] = v
        self._grads[path] = np.zeros_like(v)

    def value(self, path: str) -> Array:
        return self._values[path]

    def grad(self, path: str) -> Array:
        return self._grads[path]

    def set_grad(self, path: str, g: Array) -> None:
        if g.shape != self._values[path].shape:
            raise ShapeError(
                f"gradient shape {g.shape} != parameter shape "
                f"{self._values[path].shape} at {path!r}"
            )
        self._grads[path] = g

    def zero_grads(self) -> None:
        for path, v in self._values.items():
            self._grads[path] = np.zeros_like(v)

    def paths(self) -> tuple[str, ...]:
        return tuple(self._values)

    def n_entries(self) -> int:
        return sum(v.size for v in self._values.values())

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for path, v in self._values.items():
            out.add(path, v)
        return out

    def __contains__(self, path: str) -> bool:
        return path in self._values

    def __len__(self) -> int:
        return len(self._values)


# A tape record: (output id, input ids, vjp). The vjp maps the output adjoint
# to per-input adjoints (None for inputs that do not need gradients).
_Record = tuple[int, tuple[int, ...], Callable[[Array], tuple[Array | None, ...]]]


class Tape:
    """Ordered record of primitive applications for one backward pass.

    `record=False` builds a value-only tape: primitives still evaluate and
    validate, but nothing is stored and backward is unavailable.  Used for
    inference and for the finite-difference side of `grad_check`.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.records: list[_Record] = []
        self._next_id = 0
        self._param_nodes: dict[tuple[int, str], Node] = {}
        self._param_refs: list[tuple[ParamStore, str, Node]] = []

    def _new_node(self, value: Array, needs_grad: bool) -> Node:
        node = Node(self, self._next_id, value, needs_grad)
        self._next_id += 1
        return node

    def constant(self, value) -> Node:
        """Leaf carrying data; never receives a gradient."""
        return self._new_node(tensor2(value), needs_grad=False)

    def param(self, store: ParamStore, path: str) -> Node:
        """Leaf bound to a store slot; backward deposits its gradient there.

        Requesting the same (store, path) twice returns the same node, so a
        parameter used in several places accumulates one combined adjoint.
        """
        key = (id(store), path)
        node = self._param_nodes.get(key)
        if node is None:
            node = self._new_node(store.value(path), needs_grad=self.record)
            self._param_nodes[key] = node
            self._param_refs.append((store, path, node))
        return node

    def apply(
        self,
        tag: str,
        value: Array,
        inputs: tuple[Node, ...],
        vjp: Callable[[Array], tuple[Array | None, ...]],
    ) -> Node:
        """Register one primitive application and return its output node."""
        if not np.isfinite(value).all():
            raise NumericError(f"{tag}: non-finite value in output")
        needs = self.record and any(n.needs_grad for n in inputs)
        out = self._new_node(value, needs)
        if needs:
            self.records.append((out.nid, tuple(n.nid for n in inputs), vjp))
        return out

    def backward(self, loss: Node) -> None:
        """Populate bound ParamStore gradients with d loss / d param.

        The loss must be scalar (1x1).  Intermediate adjoints are released as
        soon as the record that produced them has been processed.
        """
        if loss.value.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 loss, got {loss.value.shape}")
        if not self.record:
            raise RuntimeError("backward on a non-recording tape")
        adjoints: dict[int, Array] = {loss.nid: np.ones((1, 1))}
        for out_id, input_ids, vjp in reversed(self.records):
            adj = adjoints.pop(out_id, None)
            if adj is None:
                continue  # node does not influence the loss
            for nid, g in zip(input_ids, vjp(adj)):
                if g is None:
                    continue
                acc = adjoints.get(nid)
                if acc is None:
                    adjoints[nid] = g
                else:
                    adjoints[nid] = acc + g
        for store, path, node in self._param_refs:
            g = adjoints.pop(node.nid, None)
            if g is None:
                g = np.zeros_like(store.value(path))
            store.set_grad(path, g)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    """Standard matrix product (p x q) @ (q x r) -> (p x r)."""
    av, bv = a.value, b.value
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: {av.shape} @ {bv.shape}")
    out = av @ bv

    def vjp(adj: Array):
        return (
            adj @ bv.T if a.needs_grad else None,
            av.T @ adj if b.needs_grad else None,
        )

    return a.tape.apply("matmul", out, (a, b), vjp)


def transpose(a: Node) -> Node:
    def vjp(adj: Array):
        return (np.ascontiguousarray(adj.T),)

    return a.tape.apply("transpose", np.ascontiguousarray(a.value.T), (a,), vjp)


def add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add: {a.value.shape} vs {b.value.shape}")

    def vjp(adj: Array):
        return (adj if a.needs_grad else None, adj if b.needs_grad else None)

    return a.tape.apply("add", a.value + b.value, (a, b), vjp)


def mul(a: Node, b: Node) -> Node:
    """Elementwise (Hadamard) product of same-shaped matrices."""
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        raise ShapeError(f"mul: {av.shape} vs {bv.shape}")

    def vjp(adj: Array):
        return (
            adj * bv if a.needs_grad else None,
            adj * av if b.needs_grad else None,
        )

    return a.tape.apply("mul", av * bv, (a, b), vjp)


def scale(a: Node, s: float) -> Node:
    """Multiply every entry by the constant `s`."""
    s = float(s)

    def vjp(adj: Array):
        return (adj * s,)

    return a.tape.apply("scale", a.value * s, (a,), vjp)


def add_const(a: Node, c: float) -> Node:
    def vjp(adj: Array):
        return (adj,)

    return a.tape.apply("add_const", a.value + float(c), (a,), vjp)


def scalar_mul(s: Node, a: Node) -> Node:
    """Multiply matrix `a` by the 1x1 node `s`."""
    if s.value.shape != (1, 1):
        raise ShapeError(f"scalar_mul: scalar operand has shape {s.value.shape}")
    av = a.value
    sv = float(s.value[0, 0])

    def vjp(adj: Array):
        return (
            np.array([[float(np.sum(adj * av))]]) if s.needs_grad else None,
            adj * sv if a.needs_grad else None,
        )

    return s.tape.apply("scalar_mul", av * sv, (s, a), vjp)


def sigmoid(a: Node) -> Node:
    """Logistic function 1/(1+e^-x), evaluated without overflow for any x."""
    out = sigmoid_values(a.value)

    def vjp(adj: Array):
        return (adj * out * (1.0 - out),)

    return a.tape.apply("sigmoid", out, (a,), vjp)


def sigmoid_values(x: Array) -> Array:
    # e^-|x| never overflows; both branches share it.
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def softmax_rows(a: Node) -> Node:
    """Row-wise softmax with per-row max subtraction for stability."""
    out = softmax_rows_values(a.value)

    def vjp(adj: Array):
        inner = np.sum(adj * out, axis=1, keepdims=True)
        return (out * (adj - inner),)

    return a.tape.apply("softmax_rows", out, (a,), vjp)


def softmax_rows_values(x: Array) -> Array:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def sum_all(a: Node) -> Node:
    """Sum of all entries as a 1x1 matrix."""
    av = a.value

    def vjp(adj: Array):
        return (np.full(av.shape, float(adj[0, 0])),)

    return a.tape.apply("sum_all", np.array([[float(av.sum())]]), (a,), vjp)


def flatten_row(a: Node) -> Node:
    """Reshape (r x c) to (1 x r*c), row-major."""
    r, c = a.value.shape

    def vjp(adj: Array):
        return (adj.reshape(r, c),)

    return a.tape.apply("flatten_row", a.value.reshape(1, r * c), (a,), vjp)


def log_floor(a: Node, floor: float = LOG_FLOOR) -> Node:
    """Natural log with the argument clamped below at `floor`."""
    av = a.value
    clamped = np.maximum(av, floor)

    def vjp(adj: Array):
        # Zero slope where the clamp is active.
        return (adj * np.where(av >= floor, 1.0 / clamped, 0.0),)

    return a.tape.apply("log_floor", np.log(clamped), (a,), vjp)


def powc(a: Node, p: float) -> Node:
    """Entrywise power with constant nonnegative exponent, base >= 0."""
    p = float(p)
    if p < 0:
        raise ValueError(f"powc: exponent must be >= 0, got {p}")
    av = a.value
    if np.any(av < 0):
        raise NumericError("powc: negative base")
    out = av**p

    def vjp(adj: Array):
        if p == 0.0:
            return (np.zeros_like(av),)
        # Floor the base so 0^(p-1) cannot blow up for 0 < p < 1.
        base = np.maximum(av, LOG_FLOOR) if p < 1.0 else av
        return (adj * p * base ** (p - 1.0),)

    return a.tape.apply("powc", out, (a,), vjp)


def temporal_conv1d_meanpool(seq: Node, kernel: Node, bias: Node) -> Node:
    """Sliding-window 1D convolution over time, mean-pooled to one vector.

    The T x f sequence is zero-padded symmetrically so there are exactly T
    windows of width w; each window is flattened row-major (time-major) to
    1 x (w*f) and mapped through `kernel` ((w*f) x d) plus `bias` (1 x d).
    The mean over the T window outputs is returned as a single 1 x d row.
    Pooling commutes with the linear map, so the forward pass reduces to
    mean(windows) @ kernel + bias.
    """
    sv, kv, bv = seq.value, kernel.value, bias.value
    t, f = sv.shape
    if t < 1:
        raise ShapeError("temporal_conv1d_meanpool: empty sequence")
    if kv.shape[0] % f != 0:
        raise ShapeError(
            f"temporal_conv1d_meanpool: kernel rows {kv.shape[0]} not a "
            f"multiple of feature dim {f}"
        )
    w = kv.shape[0] // f
    d = kv.shape[1]
    if bv.shape != (1, d):
        raise ShapeError(
            f"temporal_conv1d_meanpool: bias {bv.shape} vs kernel cols {d}"
        )
    pad_left = (w - 1) // 2
    padded = np.zeros((t + w - 1, f))
    padded[pad_left : pad_left + t] = sv
    # windows[i] = padded[i:i+w] flattened; stacked without copying the loop
    # into Python per element (t and w are desk-scale).
    windows = np.empty((t, w * f))
    for i in range(t):
        windows[i] = padded[i : i + w].reshape(-1)
    meanwin = windows.mean(axis=0, keepdims=True)
    out = meanwin @ kv + bv

    def vjp(adj: Array):
        if seq.needs_grad:
            dmean = adj @ kv.T
            dwin = (dmean / t).reshape(w, f)
            dpadded = np.zeros_like(padded)
            for i in range(t):
                dpadded[i : i + w] += dwin
            dseq = dpadded[pad_left : pad_left + t].copy()
        else:
            dseq = None
        return (
            dseq,
            meanwin.T @ adj if kernel.needs_grad else None,
            adj.copy() if bias.needs_grad else None,
        )

    return seq.tape.apply("temporal_conv1d_meanpool", out, (seq, kernel, bias), vjp)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    f: Callable[[ParamStore, Tape], Node],
    store: ParamStore,
    eps: float = 1e-4,
    paths: Iterable[str] | None = None,
) -> float:
    """Max relative error between taped gradients and central differences.

    `f(store, tape)` must build and return the scalar loss node.  Every entry
    of every parameter (or of `paths`, when given) is perturbed by +/-eps; the
    relative error uses the denominator max(1, |analytic|, |central|) so that
    near-zero gradients cannot blow the ratio up.
    """
    if eps <= 0:
        raise ValueError(f"grad_check: eps must be > 0, got {eps}")
    tape = Tape()
    loss = f(store, tape)
    if loss.value.shape != (1, 1):
        raise ShapeError(f"grad_check: loss must be 1x1, got {loss.value.shape}")
    tape.backward(loss)
    selected = tuple(paths) if paths is not None else store.paths()
    analytic = {p: store.grad(p).copy() for p in selected}

    def value_of_loss() -> float:
        return f(store, Tape(record=False)).item()

    max_err = 0.0
    for path in selected:
        w = store.value(path).reshape(-1)
        a = analytic[path].reshape(-1)
        for i in range(w.size):
            orig = w[i]
            try:
                w[i] = orig + eps
                plus = value_of_loss()
                w[i] = orig - eps
                minus = value_of_loss()
            except NumericError as exc:
                raise NumericError(f"{path}[{i}]: {exc}") from exc
            finally:
                w[i] = orig
            central = (plus - minus) / (2.0 * eps)
            err = abs(a[i] - central) / max(1.0, abs(a[i]), abs(central))
            if err > max_err:
                max_err = err
    return max_err


def mean_of(nodes: list[Node]) -> Node:
    """Mean of 1x1 nodes, summed in list order (deterministic reduction)."""
    if not nodes:
        raise ValueError("mean_of: empty list")
    total = nodes[0]
    for n in nodes[1:]:
        total = add(total, n)
    return scale(total, 1.0 / len(nodes))


def he_normal(rng: np.random.Generator, rows: int, cols: int, fan_in: int) -> Array:
    """Gaussian init with std 1/sqrt(fan_in)."""
    return rng.standard_normal((rows, cols)) / math.sqrt(max(1, fan_in))
