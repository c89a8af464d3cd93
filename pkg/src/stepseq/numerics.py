"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` is a node in a computation graph: it owns a numpy array and,
when produced by an operation, a backward closure that maps the incoming
gradient to gradients for its parents. ``Parameter`` is a trainable leaf
with a persistent gradient accumulator. Everything runs in double
precision so finite-difference checks at 1e-4 tolerance are meaningful.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GradientCheckError(AssertionError):
    """Raised by grad_check when the analytic/numeric mismatch exceeds tol."""


class Tensor:
    """Array node in a computation graph.

    ``data`` is always a C-contiguous float64 ndarray. Nodes created with
    parents and a vjp participate in backward(); nodes without are
    constants.
    """

    __slots__ = ("data", "parents", "vjp")

    def __init__(
        self,
        data,
        parents: tuple = (),
        vjp: Callable[[np.ndarray], tuple] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        kind = "Parameter" if isinstance(self, Parameter) else "Tensor"
        return f"{kind}(shape={self.shape})"


class Parameter(Tensor):
    """Trainable leaf tensor with a persistent gradient accumulator.

    ``grad`` always has the same shape as ``data`` and accumulates across
    backward() calls until explicitly zeroed. Names must be unique within
    one model; they key the checkpoint format.
    """

    __slots__ = ("name", "grad")

    def __init__(self, data, name: str):
        super().__init__(data)
        self.name = name
        self.grad = np.zeros_like(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _require_2d(x: Tensor, op: str) -> None:
    if x.data.ndim != 2:
        raise ShapeError(f"{op} expects a 2-d tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a, b) -> Tensor:
    """Matrix product of an M×K and a K×P tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.data, b.data

    def vjp(g):
        return g @ bv.T, av.T @ g

    return Tensor(av @ bv, (a, b), vjp)


def add(a, b) -> Tensor:
    """Elementwise sum of two equal-shape tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return Tensor(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product of two equal-shape tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.data, b.data
    return Tensor(av * bv, (a, b), lambda g: (g * bv, g * av))


def sigmoid(x) -> Tensor:
    """Logistic function, applied per element."""
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return Tensor(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x) -> Tensor:
    """Hyperbolic tangent, applied per element."""
    x = as_tensor(x)
    y = np.tanh(x.data)
    return Tensor(y, (x,), lambda g: (g * (1.0 - y * y),))


def scale(x, k: float) -> Tensor:
    """Multiply every element by the scalar constant k."""
    x = as_tensor(x)
    k = float(k)
    return Tensor(x.data * k, (x,), lambda g: (g * k,))


_ELEMENTWISE = {
    "add": add,
    "mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "scale": scale,
}


def elementwise(kind: str, *operands) -> Tensor:
    """Dispatch to one of the elementwise kinds: add, mul, sigmoid, tanh, scale."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*operands)


def concat_last_axis(parts: Sequence) -> Tensor:
    """Concatenate L×D_i tensors along columns, in list order."""
    if not parts:
        raise ShapeError("concat_last_axis: empty part list")
    parts = [as_tensor(p) for p in parts]
    for p in parts:
        _require_2d(p, "concat_last_axis")
    lead = parts[0].shape[0]
    for p in parts[1:]:
        if p.shape[0] != lead:
            raise ShapeError(
                f"concat_last_axis: leading dims differ, {lead} vs {p.shape[0]}"
            )
    if len(parts) == 1:
        return parts[0]
    widths = [p.shape[1] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=1))

    return Tensor(np.concatenate([p.data for p in parts], axis=1), tuple(parts), vjp)


def mean_over_time(x) -> Tensor:
    """Column-wise mean of an L×D tensor; each row gets gradient 1/L."""
    x = as_tensor(x)
    _require_2d(x, "mean_over_time")
    rows = x.shape[0]
    if rows < 1:
        raise ShapeError("mean_over_time: empty input")

    def vjp(g):
        return (np.broadcast_to(g / rows, x.shape),)

    return Tensor(x.data.mean(axis=0), (x,), vjp)


def log_softmax_rows(logits) -> Tensor:
    """Row-wise log-softmax of an L×C tensor, stabilized by max subtraction."""
    x = as_tensor(logits)
    _require_2d(x, "log_softmax_rows")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return Tensor(out, (x,), vjp)


def nll_loss(log_probs, labels) -> Tensor:
    """Mean over rows of -log_probs[t, labels[t]]."""
    lp = as_tensor(log_probs)
    _require_2d(lp, "nll_loss")
    rows, classes = lp.shape
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (rows,):
        raise ShapeError(f"nll_loss: {rows} rows but {labels.shape} labels")
    for t, lab in enumerate(labels):
        if not 0 <= lab < classes:
            raise IndexError(
                f"nll_loss: label {lab} at timestep {t} outside [0, {classes})"
            )
    picked = lp.data[np.arange(rows), labels]

    def vjp(g):
        dl = np.zeros_like(lp.data)
        dl[np.arange(rows), labels] = -g.item() / rows
        return (dl,)

    return Tensor(-picked.mean(), (lp,), vjp)


def sum_all(x) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    x = as_tensor(x)

    def vjp(g):
        return (np.broadcast_to(g, x.shape),)

    return Tensor(x.data.sum(), (x,), vjp)


def reshape(x, shape) -> Tensor:
    """View the same elements under a new shape."""
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return Tensor(out, (x,), lambda g: (g.reshape(x.shape),))


# ---------------------------------------------------------------------------
# reverse-mode differentiation


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(parameter) into .grad of every reachable Parameter.

    ``loss`` must be scalar. Gradients add onto whatever is already in
    each Parameter's accumulator: calling backward twice without zeroing
    doubles them.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")

    order = _toposort(loss)
    # Stored gradient arrays are never mutated in place: a vjp may return
    # the same array object for several parents (e.g. add), so updates
    # always allocate.
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in order:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g.reshape(node.grad.shape)
            continue
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg


def _toposort(root: Tensor) -> list[Tensor]:
    """Nodes of the graph below root, dependents before dependencies."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad[...] = 0.0


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> float:
    """Compare backward() gradients of ``f`` against central differences.

    ``f`` takes no arguments, reads the current parameter values and
    returns a scalar Tensor; it must be deterministic (fixed rng, dropout
    off). Returns the max over all coordinates of
    |analytic - numeric| / max(1, |numeric|), raising GradientCheckError
    if it exceeds ``tol``.
    """
    saved = [p.grad.copy() for p in params]
    zero_grads(params)
    backward(f())
    analytic = [p.grad.copy() for p in params]
    for p, g in zip(params, saved):
        p.grad = g

    worst = 0.0
    worst_at = ""
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f().data.item()
            flat[i] = orig - h
            lo = f().data.item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * h)
            err = abs(an.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
                worst_at = f"{p.name}[{i}]"
    if worst > tol:
        raise GradientCheckError(
            f"gradient mismatch {worst:.3e} > tol {tol:.1e} at {worst_at}"
        )
    return worst


# ---------------------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp may overflow to inf for very negative inputs; the result still
    # saturates to exactly 0, so only the warning needs suppressing.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))
