"""Dense float64 tensors with reverse-mode automatic differentiation.

Define-by-run: every operation records its parent tensors and a backward
closure on its output, so the graph only exists between a forward pass and
the matching ``backward`` call and is rebuilt from scratch each time.  The
op set is the minimum the variational model needs.  Broadcasting is
deliberately restricted to one pattern, adding a bias row-vector to a
matrix; every other binary op requires exact shape agreement so silent
shape bugs cannot hide behind numpy broadcasting.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "apply_unary",
    "apply_binary",
    "reduce",
    "backward",
    "zero_grads",
    "AdamState",
    "adam_state",
    "adam_step",
    "GradCheckReport",
    "gradient_check",
    "UNARY_KINDS",
    "BINARY_KINDS",
    "REDUCE_KINDS",
    "elu",
    "softplus",
    "sigmoid",
    "exp",
    "log",
    "neg",
    "square",
    "sqrt",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "broadcast_add",
    "scale",
    "shift",
    "concat_cols",
    "slice_cols",
]

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block.

    Useful for prediction passes and finite-difference loops where only
    forward values are needed; skipping closure creation makes repeated
    evaluation of the same graph markedly cheaper.
    """
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """A dense float64 array plus its place in the computation graph.

    ``grad`` stays None until ``backward`` reaches the tensor (lazy
    allocation).  Tensors built directly from data are graph leaves;
    ``requires_grad=True`` marks a leaf as trainable.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a scalar tensor, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # Operator sugar.  Scalar operands are folded into the op directly
    # (scale/shift) instead of being materialised as constant tensors.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __rsub__(self, other):
        return shift(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _leaf(data: np.ndarray, op: str) -> Tensor:
    """Fast constructor for op outputs that carry no gradient."""
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = False
    t.op = op
    t._parents = ()
    t._backward = None
    return t


def _node(data: np.ndarray, op: str, parents: tuple, bwd: Callable) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = True
    t.op = op
    t._parents = parents
    t._backward = bwd
    return t


def _accum(t: Tensor, g: np.ndarray) -> None:
    # Copy on first write: backward closures may hand out views or share
    # one array between two parents, and later `+=` must not alias them.
    if t.grad is None:
        t.grad = np.array(g)
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# unary ops


def _sigmoid_fwd(x):
    # tanh formulation is overflow-free for arbitrarily large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_log_domain(x):
    if x.size and x.min() <= 0.0:
        raise ValueError("log requires strictly positive inputs")


def _check_sqrt_domain(x):
    if x.size and x.min() < 0.0:
        raise ValueError("sqrt requires non-negative inputs")


# kind -> (forward, local derivative as fn(x, out), domain check or None)
_UNARY_RULES: dict[str, tuple] = {
    "elu": (
        lambda x: np.maximum(x, 0.0) + np.expm1(np.minimum(x, 0.0)),
        lambda x, out: np.where(x > 0.0, 1.0, out + 1.0),
        None,
    ),
    "softplus": (
        lambda x: np.logaddexp(0.0, x),
        lambda x, out: _sigmoid_fwd(x),
        None,
    ),
    "sigmoid": (
        _sigmoid_fwd,
        lambda x, out: out * (1.0 - out),
        None,
    ),
    "exp": (
        np.exp,
        lambda x, out: out,
        None,
    ),
    "log": (
        np.log,
        lambda x, out: 1.0 / x,
        _check_log_domain,
    ),
    "neg": (
        np.negative,
        lambda x, out: -1.0,
        None,
    ),
    "square": (
        np.square,
        lambda x, out: 2.0 * x,
        None,
    ),
    "sqrt": (
        np.sqrt,
        lambda x, out: 0.5 / out,
        _check_sqrt_domain,
    ),
}

UNARY_KINDS = tuple(_UNARY_RULES)


def apply_unary(kind: str, x: Tensor) -> Tensor:
    """Apply the elementwise op named ``kind`` to ``x``."""
    try:
        fwd, local_grad, check = _UNARY_RULES[kind]
    except KeyError:
        raise ValueError(f"unknown unary op {kind!r}") from None
    xd = x.data
    if check is not None:
        check(xd)
    out_data = fwd(xd)
    if _GRAD_ENABLED and x.requires_grad:

        def bwd(g, x=x, xd=xd, out_data=out_data, local_grad=local_grad):
            _accum(x, g * local_grad(xd, out_data))

        return _node(out_data, kind, (x,), bwd)
    return _leaf(out_data, kind)


def elu(x: Tensor) -> Tensor:
    return apply_unary("elu", x)


def softplus(x: Tensor) -> Tensor:
    return apply_unary("softplus", x)


def sigmoid(x: Tensor) -> Tensor:
    return apply_unary("sigmoid", x)


def exp(x: Tensor) -> Tensor:
    return apply_unary("exp", x)


def log(x: Tensor) -> Tensor:
    return apply_unary("log", x)


def neg(x: Tensor) -> Tensor:
    return apply_unary("neg", x)


def square(x: Tensor) -> Tensor:
    return apply_unary("square", x)


def sqrt(x: Tensor) -> Tensor:
    return apply_unary("sqrt", x)


def scale(x: Tensor, c: float) -> Tensor:
    """x * c for a python scalar c."""
    c = float(c)
    out_data = x.data * c
    if _GRAD_ENABLED and x.requires_grad:

        def bwd(g, x=x, c=c):
            _accum(x, g * c)

        return _node(out_data, "scale", (x,), bwd)
    return _leaf(out_data, "scale")


def shift(x: Tensor, c: float) -> Tensor:
    """x + c for a python scalar c."""
    out_data = x.data + float(c)
    if _GRAD_ENABLED and x.requires_grad:

        def bwd(g, x=x):
            _accum(x, g)

        return _node(out_data, "shift", (x,), bwd)
    return _leaf(out_data, "shift")


# ---------------------------------------------------------------------------
# binary ops


def _require_same_shape(kind, a, b):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{kind}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    out_data = a.data + b.data
    if _GRAD_ENABLED and (a.requires_grad or b.requires_grad):

        def bwd(g, a=a, b=b):
            if a.requires_grad:
                _accum(a, g)
            if b.requires_grad:
                _accum(b, g)

        return _node(out_data, "add", (a, b), bwd)
    return _leaf(out_data, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    out_data = a.data - b.data
    if _GRAD_ENABLED and (a.requires_grad or b.requires_grad):

        def bwd(g, a=a, b=b):
            if a.requires_grad:
                _accum(a, g)
            if b.requires_grad:
                _accum(b, -g)

        return _node(out_data, "sub", (a, b), bwd)
    return _leaf(out_data, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    out_data = a.data * b.data
    if _GRAD_ENABLED and (a.requires_grad or b.requires_grad):

        def bwd(g, a=a, b=b):
            if a.requires_grad:
                _accum(a, g * b.data)
            if b.requires_grad:
                _accum(b, g * a.data)

        return _node(out_data, "mul", (a, b), bwd)
    return _leaf(out_data, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("div", a, b)
    if b.data.size and np.any(b.data == 0.0):
        raise ValueError("div: denominator contains zero entries")
    out_data = a.data / b.data
    if _GRAD_ENABLED and (a.requires_grad or b.requires_grad):

        def bwd(g, a=a, b=b, out_data=out_data):
            if a.requires_grad:
                _accum(a, g / b.data)
            if b.requires_grad:
                _accum(b, -g * out_data / b.data)

        return _node(out_data, "div", (a, b), bwd)
    return _leaf(out_data, "div")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product (n, k) @ (k, m)."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.data.shape} vs {b.data.shape}")
    out_data = a.data @ b.data
    if _GRAD_ENABLED and (a.requires_grad or b.requires_grad):

        def bwd(g, a=a, b=b):
            if a.requires_grad:
                _accum(a, g @ b.data.T)
            if b.requires_grad:
                _accum(b, a.data.T @ g)

        return _node(out_data, "matmul", (a, b), bwd)
    return _leaf(out_data, "matmul")


def broadcast_add(a: Tensor, b: Tensor) -> Tensor:
    """Add a bias row-vector b of shape (d,) to a matrix a of shape (n, d)."""
    if a.data.ndim != 2 or b.data.ndim != 1 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"broadcast_add expects (n, d) + (d,), got {a.data.shape} and {b.data.shape}"
        )
    out_data = a.data + b.data
    if _GRAD_ENABLED and (a.requires_grad or b.requires_grad):

        def bwd(g, a=a, b=b):
            if a.requires_grad:
                _accum(a, g)
            if b.requires_grad:
                _accum(b, g.sum(axis=0))

        return _node(out_data, "broadcast_add", (a, b), bwd)
    return _leaf(out_data, "broadcast_add")


_BINARY_OPS: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "broadcast_add": broadcast_add,
}

BINARY_KINDS = tuple(_BINARY_OPS)


def apply_binary(kind: str, a: Tensor, b: Tensor) -> Tensor:
    """Apply the binary op named ``kind`` to ``a`` and ``b``."""
    try:
        op = _BINARY_OPS[kind]
    except KeyError:
        raise ValueError(f"unknown binary op {kind!r}") from None
    return op(a, b)


# ---------------------------------------------------------------------------
# structural ops (column concatenation / slicing for multi-block inputs)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along axis 1.  Zero-width blocks are fine."""
    ts = list(tensors)
    if not ts:
        raise ValueError("concat_cols needs at least one tensor")
    rows = ts[0].data.shape[0] if ts[0].data.ndim == 2 else None
    for t in ts:
        if t.data.ndim != 2 or t.data.shape[0] != rows:
            raise ValueError(
                "concat_cols needs 2-D tensors with matching row counts, got "
                + ", ".join(str(t.data.shape) for t in ts)
            )
    out_data = np.concatenate([t.data for t in ts], axis=1)
    if _GRAD_ENABLED and any(t.requires_grad for t in ts):
        widths = [t.data.shape[1] for t in ts]

        def bwd(g, ts=ts, widths=widths):
            offset = 0
            for t, w in zip(ts, widths):
                if t.requires_grad:
                    _accum(t, g[:, offset : offset + w])
                offset += w

        return _node(out_data, "concat_cols", tuple(ts), bwd)
    return _leaf(out_data, "concat_cols")


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Take columns [start, stop) of a 2-D tensor."""
    if x.data.ndim != 2:
        raise ValueError(f"slice_cols needs a 2-D tensor, got shape {x.data.shape}")
    if not (0 <= start <= stop <= x.data.shape[1]):
        raise ValueError(f"slice_cols: bad range [{start}, {stop}) for shape {x.data.shape}")
    out_data = x.data[:, start:stop]
    if _GRAD_ENABLED and x.requires_grad:

        def bwd(g, x=x, start=start, stop=stop):
            full = np.zeros_like(x.data)
            full[:, start:stop] = g
            _accum(x, full)

        return _node(out_data, "slice_cols", (x,), bwd)
    return _leaf(out_data, "slice_cols")


# ---------------------------------------------------------------------------
# reductions


REDUCE_KINDS = ("sum", "mean")


def reduce(kind: str, x: Tensor, axis: int | None = None) -> Tensor:
    """Reduce ``x`` with sum or mean, over one axis or all elements."""
    if kind not in REDUCE_KINDS:
        raise ValueError(f"unknown reduce op {kind!r}")
    nd = x.data.ndim
    if axis is not None:
        if not isinstance(axis, int) or not (-nd <= axis < nd):
            raise ValueError(f"reduce: axis {axis!r} invalid for shape {x.data.shape}")
        if axis < 0:
            axis += nd
    if kind == "sum":
        out_data = np.asarray(np.sum(x.data, axis=axis))
        inv_count = 1.0
    else:
        out_data = np.asarray(np.mean(x.data, axis=axis))
        count = x.data.size if axis is None else x.data.shape[axis]
        inv_count = 1.0 / count
    if _GRAD_ENABLED and x.requires_grad:

        def bwd(g, x=x, axis=axis, inv_count=inv_count, kind=kind):
            if kind == "mean":
                g = g * inv_count
            if axis is None:
                _accum(x, np.broadcast_to(g, x.data.shape))
            else:
                _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.data.shape))

        return _node(out_data, kind, (x,), bwd)
    return _leaf(out_data, kind)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Populate ``grad`` on every tensor the scalar ``loss`` depends on.

    Walks the recorded graph once in reverse topological order.  If
    ``params`` is given, parameters the loss does not reach get an exact
    zero gradient so optimizers can treat the set uniformly.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        nid = id(node)
        if nid in visited:
            continue
        visited.add(nid)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators for one fixed parameter list."""

    lr: float
    beta1: float
    beta2: float
    eps: float
    step_count: int
    first_moment: list
    second_moment: list


def adam_state(
    params: Iterable[Tensor],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    ps = list(params)
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        step_count=0,
        first_moment=[np.zeros_like(p.data) for p in ps],
        second_moment=[np.zeros_like(p.data) for p in ps],
    )


def adam_step(params: Iterable[Tensor], state: AdamState) -> None:
    """Apply one in-place Adam update and clear the gradients."""
    ps = list(params)
    if len(ps) != len(state.first_moment):
        raise ValueError(
            f"adam_step: {len(ps)} params but state tracks {len(state.first_moment)}"
        )
    for i, p in enumerate(ps):
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {i} has no gradient (run backward first)")
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step_count
    bias2 = 1.0 - b2 ** state.step_count
    step_scale = state.lr / bias1
    for p, m, v in zip(ps, state.first_moment, state.second_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p.data -= step_scale * m / (np.sqrt(v / bias2) + state.eps)
        p.grad = None


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Per-parameter worst relative deviation of analytic vs numeric grads."""

    tol: float
    max_rel_dev: dict

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.max_rel_dev.values())

    @property
    def worst(self) -> tuple:
        if not self.max_rel_dev:
            return ("", 0.0)
        name = max(self.max_rel_dev, key=self.max_rel_dev.get)
        return (name, self.max_rel_dev[name])

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        lines = [f"gradient check ({status}, tol={self.tol:g})"]
        for name, dev in sorted(self.max_rel_dev.items()):
            lines.append(f"  {name}: {dev:.3e}")
        return "\n".join(lines)


def gradient_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    tol: float = 1e-4,
    h: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients of the scalar loss ``f()`` to central
    finite differences.

    The deviation for each element is |analytic - numeric| divided by
    max(1, |analytic|, |numeric|), so large gradients are compared
    relatively and near-zero gradients absolutely.  ``f`` must rebuild its
    graph on every call and be deterministic (freeze any sampling noise).
    """
    if isinstance(params, Mapping):
        named = dict(params)
    else:
        named = {f"p{i}": p for i, p in enumerate(params)}

    for p in named.values():
        p.grad = None
    loss = f()
    backward(loss, named.values())
    analytic = {k: p.grad.copy() for k, p in named.items()}

    max_rel_dev: dict[str, float] = {}
    with no_grad():
        for name, p in named.items():
            flat = p.data.reshape(-1)
            a = analytic[name].reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = f().item()
                flat[i] = orig - h
                f_minus = f().item()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                denom = max(1.0, abs(a[i]), abs(numeric))
                dev = abs(a[i] - numeric) / denom
                if dev > worst:
                    worst = dev
            max_rel_dev[name] = worst
    return GradCheckReport(tol=tol, max_rel_dev=max_rel_dev)
