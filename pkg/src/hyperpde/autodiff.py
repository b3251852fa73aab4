"""Reverse-mode tape over numpy arrays, with second-order forward duals.

The tape records vectorized array operations (one node per batched op, not
per scalar). Physics losses need ds/dx and d2s/dx2 of the network *and*
gradients of those derivatives with respect to weights, so input
derivatives are carried as forward-mode dual triples (value, first, second)
whose components are themselves tape variables. Backward through the triple
then yields exact weight gradients of the residuals.

Values are float64 ndarrays (scalars are 0-d). Every node's value is
checked for NaN/Inf at construction; failures name the offending node.
"""

from __future__ import annotations

import numpy as np

from .exceptions import NonFiniteError, ShapeError, UnknownPrimitiveError
from .nets import Activation, Architecture

__all__ = [
    "Tape", "Var", "Dual2", "grad",
    "matmul", "linear", "act", "reshape", "slice1d", "vsum", "vmean",
    "square", "dual_input", "dual_linear", "dual_act",
    "taped_forward", "weight_vars_from_flat", "eval_with_input_derivs",
]


class _Node:
    __slots__ = ("op", "value", "parents", "vjps")

    def __init__(self, op, value, parents, vjps):
        self.op = op
        self.value = value
        self.parents = parents  # tuple of node indices
        self.vjps = vjps        # tuple of callables g -> parent cotangent


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.idx].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        return self.tape.grad_of(self)

    # arithmetic sugar; non-Var operands are treated as constants
    def __add__(self, other):
        return self.tape.apply("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.apply("sub", self, other)

    def __rsub__(self, other):
        return self.tape.apply("sub", other, self)

    def __mul__(self, other):
        return self.tape.apply("mul", self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.tape.apply("div", self, other)

    def __rtruediv__(self, other):
        return self.tape.apply("div", other, self)

    def __neg__(self):
        return self.tape.apply("neg", self)


def _value_of(x):
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, float)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tape:
    """Append-only op record; construction order is the topological order."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._grads: list | None = None
        self._root_idx: int | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def _record(self, op, value, parents=(), vjps=()) -> Var:
        value = np.asarray(value, float)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(
                f"node {len(self.nodes)} (op={op}) produced non-finite values"
            )
        self.nodes.append(_Node(op, value, tuple(parents), tuple(vjps)))
        self._grads = None
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value) -> Var:
        """Record an input node (a differentiable variable)."""
        return self._record("leaf", np.asarray(value, float))

    def apply(self, op: str, *args, **kwargs) -> Var:
        try:
            builder = _REGISTRY[op]
        except KeyError:
            raise UnknownPrimitiveError(
                f"primitive {op!r} is not registered"
            ) from None
        return builder(self, *args, **kwargs)

    def backward(self, root: Var) -> None:
        """Populate gradients of every node with respect to scalar `root`."""
        if root.tape is not self:
            raise ShapeError("root belongs to a different tape")
        if root.value.shape != ():
            raise ShapeError(
                f"backward root must be scalar, got shape {root.value.shape}"
            )
        grads: list = [None] * len(self.nodes)
        grads[root.idx] = np.asarray(1.0)
        for i in range(root.idx, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            for pidx, vjp in zip(node.parents, node.vjps):
                contrib = vjp(g)
                if grads[pidx] is None:
                    grads[pidx] = contrib
                else:
                    grads[pidx] = grads[pidx] + contrib
        self._grads = grads
        self._root_idx = root.idx

    def grad_of(self, v: Var) -> np.ndarray:
        if self._grads is None:
            raise ShapeError("backward() has not been run on this tape")
        g = self._grads[v.idx]
        if g is None:
            # node does not influence the root
            return np.zeros_like(self.nodes[v.idx].value)
        return np.asarray(g, float)


def grad(loss_fn, params: np.ndarray):
    """Evaluate loss_fn(tape, leaf(params)) and return (value, gradient).

    loss_fn must return a scalar Var built on the provided tape.
    """
    params = np.asarray(params, float)
    tape = Tape()
    p = tape.leaf(params)
    out = loss_fn(tape, p)
    tape.backward(out)
    return float(out.value), p.grad.copy()


# ---------------------------------------------------------------------------
# primitive registry
# ---------------------------------------------------------------------------

_REGISTRY: dict = {}


def _primitive(name):
    def deco(fn):
        _REGISTRY[name] = fn
        return fn
    return deco


def _binary_parents(tape, a, b):
    parents, vjp_slots = [], []
    for x in (a, b):
        if isinstance(x, Var):
            if x.tape is not tape:
                raise ShapeError("operands live on different tapes")
            parents.append(x.idx)
            vjp_slots.append(True)
        else:
            vjp_slots.append(False)
    return parents, vjp_slots


@_primitive("add")
def _add(tape, a, b):
    av, bv = _value_of(a), _value_of(b)
    v = av + bv
    parents, slots = _binary_parents(tape, a, b)
    vjps = []
    if slots[0]:
        vjps.append(lambda g, s=av.shape: _unbroadcast(g, s))
    if slots[1]:
        vjps.append(lambda g, s=bv.shape: _unbroadcast(g, s))
    return tape._record("add", v, parents, vjps)


@_primitive("sub")
def _sub(tape, a, b):
    av, bv = _value_of(a), _value_of(b)
    v = av - bv
    parents, slots = _binary_parents(tape, a, b)
    vjps = []
    if slots[0]:
        vjps.append(lambda g, s=av.shape: _unbroadcast(g, s))
    if slots[1]:
        vjps.append(lambda g, s=bv.shape: -_unbroadcast(g, s))
    return tape._record("sub", v, parents, vjps)


@_primitive("mul")
def _mul(tape, a, b):
    av, bv = _value_of(a), _value_of(b)
    v = av * bv
    parents, slots = _binary_parents(tape, a, b)
    vjps = []
    if slots[0]:
        vjps.append(lambda g, o=bv, s=av.shape: _unbroadcast(g * o, s))
    if slots[1]:
        vjps.append(lambda g, o=av, s=bv.shape: _unbroadcast(g * o, s))
    return tape._record("mul", v, parents, vjps)


@_primitive("div")
def _div(tape, a, b):
    av, bv = _value_of(a), _value_of(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = av / bv
    parents, slots = _binary_parents(tape, a, b)
    vjps = []
    if slots[0]:
        vjps.append(lambda g, o=bv, s=av.shape: _unbroadcast(g / o, s))
    if slots[1]:
        vjps.append(
            lambda g, n=av, d=bv, s=bv.shape: _unbroadcast(-g * n / (d * d), s)
        )
    return tape._record("div", v, parents, vjps)


@_primitive("neg")
def _neg(tape, a):
    return tape._record("neg", -a.value, (a.idx,), (lambda g: -g,))


@_primitive("square")
def _square(tape, a):
    av = a.value
    return tape._record(
        "square", av * av, (a.idx,), (lambda g, o=av: 2.0 * o * g,)
    )


@_primitive("matmul")
def _matmul(tape, a, b):
    av, bv = _value_of(a), _value_of(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul shapes {av.shape} @ {bv.shape} do not align")
    v = av @ bv
    parents, slots = _binary_parents(tape, a, b)
    vjps = []
    if slots[0]:
        vjps.append(lambda g, o=bv: g @ o.T)
    if slots[1]:
        vjps.append(lambda g, o=av: o.T @ g)
    return tape._record("matmul", v, parents, vjps)


@_primitive("linear")
def _linear(tape, x, w, b=None):
    """x @ w.T (+ b): the affine layer as a single node.

    Any of x, w, b may be a constant ndarray instead of a Var.
    """
    xv, wv = _value_of(x), _value_of(w)
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[1]:
        raise ShapeError(f"linear shapes {xv.shape} x {wv.shape} do not align")
    v = xv @ wv.T
    if b is not None:
        bv = _value_of(b)
        if bv.shape != (wv.shape[0],):
            raise ShapeError(f"bias shape {bv.shape} != ({wv.shape[0]},)")
        v = v + bv
    parents, vjps = [], []
    if isinstance(x, Var):
        parents.append(x.idx)
        vjps.append(lambda g, o=wv: g @ o)
    if isinstance(w, Var):
        parents.append(w.idx)
        vjps.append(lambda g, o=xv: g.T @ o)
    if b is not None and isinstance(b, Var):
        parents.append(b.idx)
        vjps.append(lambda g: g.sum(axis=0))
    return tape._record("linear", v, parents, vjps)


@_primitive("reshape")
def _reshape(tape, a, shape):
    orig = a.value.shape
    return tape._record(
        "reshape", a.value.reshape(shape), (a.idx,),
        (lambda g, s=orig: np.asarray(g).reshape(s),),
    )


@_primitive("slice1d")
def _slice1d(tape, a, start, stop):
    av = a.value
    if av.ndim != 1:
        raise ShapeError(f"slice1d expects a vector, got shape {av.shape}")
    if not (0 <= start <= stop <= av.shape[0]):
        raise ShapeError(f"slice [{start}:{stop}] out of range for {av.shape}")

    def vjp(g, n=av.shape[0], s=start, e=stop):
        out = np.zeros(n)
        out[s:e] = g
        return out

    return tape._record("slice1d", av[start:stop], (a.idx,), (vjp,))


@_primitive("sum")
def _vsum(tape, a):
    av = a.value
    return tape._record(
        "sum", av.sum(), (a.idx,),
        (lambda g, s=av.shape: np.full(s, float(g)),),
    )


@_primitive("mean")
def _vmean(tape, a):
    av = a.value
    n = av.size
    if n == 0:
        raise ShapeError("mean of an empty array")
    return tape._record(
        "mean", av.mean(), (a.idx,),
        (lambda g, s=av.shape, n=n: np.full(s, float(g) / n),),
    )


@_primitive("act")
def _act(tape, a, activation: Activation, order: int = 0):
    """Apply the order-th derivative of an activation elementwise.

    The local derivative of act^(k) is act^(k+1), so recording order k
    requires the activation to expose order k+1 (available through 3).
    """
    av = a.value
    v = activation.deriv(av, order)
    loc = activation.deriv(av, order + 1)
    return tape._record(
        f"act[{activation.name},{order}]", v, (a.idx,),
        (lambda g, d=loc: g * d,),
    )


def _simple_unary(name, fn, dfn):
    @_primitive(name)
    def _op(tape, a, _fn=fn, _dfn=dfn, _name=name):
        av = a.value
        v = _fn(av)
        return tape._record(_name, v, (a.idx,), (lambda g, d=_dfn(av, v): g * d,))
    return _op


_simple_unary("sin", np.sin, lambda x, v: np.cos(x))
_simple_unary("cos", np.cos, lambda x, v: -np.sin(x))
_simple_unary("exp", np.exp, lambda x, v: v)
_simple_unary("tanh", np.tanh, lambda x, v: 1.0 - v * v)


# module-level helpers mirroring the registry

def matmul(a, b) -> Var:
    tape = a.tape if isinstance(a, Var) else b.tape
    return tape.apply("matmul", a, b)


def linear(x, w, b=None) -> Var:
    for t in (x, w, b):
        if isinstance(t, Var):
            return t.tape.apply("linear", x, w, b)
    raise ShapeError("linear needs at least one Var operand")


def act(a: Var, activation: Activation, order: int = 0) -> Var:
    return a.tape.apply("act", a, activation, order)


def reshape(a: Var, shape) -> Var:
    return a.tape.apply("reshape", a, shape)


def slice1d(a: Var, start: int, stop: int) -> Var:
    return a.tape.apply("slice1d", a, start, stop)


def vsum(a: Var) -> Var:
    return a.tape.apply("sum", a)


def vmean(a: Var) -> Var:
    return a.tape.apply("mean", a)


def square(a: Var) -> Var:
    return a.tape.apply("square", a)


# ---------------------------------------------------------------------------
# second-order forward duals
# ---------------------------------------------------------------------------

class Dual2:
    """Forward dual triple (value, d/ds, d2/ds2) along one input direction.

    Components are Vars (or constant ndarrays at the input seed), so the
    reverse pass differentiates through the input derivatives. d2 is None
    when only first-order propagation was requested.
    """

    __slots__ = ("p", "d1", "d2")

    def __init__(self, p, d1, d2=None):
        self.p = p
        self.d1 = d1
        self.d2 = d2


def dual_input(x: np.ndarray, axis: int, order: int = 2) -> Dual2:
    """Seed a dual at constant input points x (B, d) along one coordinate."""
    x = np.asarray(x, float)
    if x.ndim != 2:
        raise ShapeError(f"input points must be (B, d), got {x.shape}")
    if not 0 <= axis < x.shape[1]:
        raise ShapeError(f"axis {axis} out of range for d={x.shape[1]}")
    tangent = np.zeros_like(x)
    tangent[:, axis] = 1.0
    return Dual2(x, tangent, np.zeros_like(x) if order >= 2 else None)


def dual_linear(x: Dual2, w, b=None) -> Dual2:
    """Affine layer pushed through a dual: the tangent parts skip the bias."""
    p = linear(x.p, w, b)
    d1 = linear(x.d1, w, None)
    d2 = linear(x.d2, w, None) if x.d2 is not None else None
    return Dual2(p, d1, d2)


def dual_act(x: Dual2, activation: Activation) -> Dual2:
    """Chain rule through an elementwise activation.

    out.d2 = act''(p) d1^2 + act'(p) d2 needs activation derivatives one
    order above what is propagated, hence the closed forms through order 3.
    """
    s0 = act(x.p, activation, 0)
    s1 = act(x.p, activation, 1)
    d1 = s1 * x.d1
    d2 = None
    if x.d2 is not None:
        s2 = act(x.p, activation, 2)
        d2 = s2 * square(x.d1) + s1 * x.d2
    return Dual2(s0, d1, d2)


# ---------------------------------------------------------------------------
# network evaluation on tape
# ---------------------------------------------------------------------------

def weight_vars_from_flat(tape: Tape, flat: Var, arch: Architecture):
    """View a flat parameter Var as per-layer (W, b) Vars via slice+reshape."""
    if flat.value.shape != (arch.n_params(),):
        raise ShapeError(
            f"flat weights have shape {flat.value.shape}, "
            f"expected ({arch.n_params()},)"
        )
    out, k = [], 0
    for fan_out, fan_in, has_bias in arch.layer_shapes():
        nw = fan_out * fan_in
        w = reshape(slice1d(flat, k, k + nw), (fan_out, fan_in))
        k += nw
        b = None
        if has_bias:
            b = slice1d(flat, k, k + fan_out)
            k += fan_out
        out.append((w, b))
    return out


def taped_forward(weight_vars, activation: Activation, x: np.ndarray) -> Var:
    """Plain forward pass with weights on tape; x is constant (B, in_dim)."""
    g = None
    for w, b in weight_vars[:-1]:
        z = linear(x if g is None else g, w, b)
        g = act(z, activation, 0)
    w_last, _ = weight_vars[-1]
    return linear(g, w_last, None)


def eval_with_input_derivs(weight_vars, activation: Activation,
                           x: np.ndarray, axis: int, order: int = 2):
    """Network value and input derivatives along one coordinate.

    Returns (u, du, d2u) as Vars of shape (B,) for a scalar-output net;
    d2u is None when order == 1. Gradients with respect to the weight Vars
    flow through all returned quantities.
    """
    # seed components are constant arrays; dual_linear handles the mix
    d = dual_input(x, axis, order)
    for w, b in weight_vars[:-1]:
        d = dual_act(dual_linear(d, w, b), activation)
    w_last, _ = weight_vars[-1]
    d = dual_linear(d, w_last, None)

    def _flat(v):
        if v is None:
            return None
        if v.value.ndim == 2 and v.value.shape[1] == 1:
            return reshape(v, (v.value.shape[0],))
        return v

    return _flat(d.p), _flat(d.d1), _flat(d.d2)
