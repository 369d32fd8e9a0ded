"""Reverse-mode automatic differentiation on numpy arrays.

Small tape-based engine sized for the five-network training loops in this
package.  Tensors wrap numpy arrays; each non-leaf tensor remembers the op
that produced it, and `backward` walks the recorded graph in reverse
topological order.  Only the op vocabulary used by the models lives here;
there is no general broadcasting, no views, no in-place graph surgery.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to the op's rule."""


class DomainError(ValueError):
    """Operand values outside the op's numeric domain (e.g. log of <= 0)."""


class GradientError(RuntimeError):
    """Backward/optimizer contract violation (non-scalar loss, missing grad)."""


class Tensor:
    """A numpy array plus gradient bookkeeping.

    `data` is the value, `grad` accumulates d(loss)/d(self) after a backward
    pass, `requires_grad` marks trainable leaves.  Non-leaf tensors keep a
    closure in `_backward` and their parents in `_inputs` until a backward
    pass consumes the tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_inputs", "_logits")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._inputs = ()
        self._logits = None  # set by softmax so losses can fuse with log-sum-exp

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = "param" if self.requires_grad else "const"
        return f"Tensor({tag}, shape={self.data.shape}, dtype={self.data.dtype})"


def tensor(data, requires_grad=False, dtype=None):
    if isinstance(data, Tensor):
        return data
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _result(data, inputs, backward):
    """Build a graph node; drops the tape when no input tracks gradients."""
    out = Tensor(data)
    if any(t.requires_grad or t._backward is not None for t in inputs):
        out._inputs = tuple(inputs)
        out._backward = backward
    return out


def _coerce_pair(a, b):
    """Wrap python scalars, enforce the dtype and shape rules for binary ops.

    Allowed: identical shapes, a scalar on either side, or a (1, k) row
    against (n, k) so layer biases can be added.  Anything else is a bug in
    the caller's wiring and raises ShapeError.
    """
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype if isinstance(b, Tensor) else None))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    if a.dtype != b.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or _is_scalar_shape(sa) or _is_scalar_shape(sb):
        return a, b
    if len(sa) == len(sb) == 2 and sa[1] == sb[1] and (sa[0] == 1 or sb[0] == 1):
        return a, b
    raise ShapeError(f"incompatible shapes for elementwise op: {sa} vs {sb}")


def _is_scalar_shape(shape):
    return shape == () or shape == (1,)


def _unbroadcast(grad, shape):
    """Sum `grad` back down to `shape` (inverse of the allowed broadcasts)."""
    if grad.shape == shape:
        return grad
    if _is_scalar_shape(shape):
        return np.sum(grad).reshape(shape).astype(grad.dtype)
    # (1, k) row case
    return np.sum(grad, axis=0, keepdims=True)


def add(a, b):
    a, b = _coerce_pair(a, b)
    data = a.data + b.data

    def backward(g, out):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _result(data, (a, b), backward)


def subtract(a, b):
    a, b = _coerce_pair(a, b)
    data = a.data - b.data

    def backward(g, out):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))

    return _result(data, (a, b), backward)


def multiply(a, b):
    a, b = _coerce_pair(a, b)
    data = a.data * b.data

    def backward(g, out):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _result(data, (a, b), backward)


def matmul(a, b):
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise ShapeError("matmul expects two tensors")
    if a.dtype != b.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes do not chain: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward(g, out):
        return (g @ b.data.T, a.data.T @ g)

    return _result(data, (a, b), backward)


def transpose(a):
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got {a.data.shape}")
    data = a.data.T

    def backward(g, out):
        return (g.T,)

    return _result(data, (a,), backward)


def concat_last(a, b):
    """Concatenate along the last axis; leading axes must match exactly."""
    if a.dtype != b.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    if a.data.ndim != b.data.ndim or a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeError(f"cannot concat {a.data.shape} with {b.data.shape}")
    data = np.concatenate([a.data, b.data], axis=-1)
    split = a.data.shape[-1]

    def backward(g, out):
        return (g[..., :split], g[..., split:])

    return _result(data, (a, b), backward)


def concat_rows(a, b):
    """Stack two 2-d tensors along axis 0 (e.g. source rows over target rows)."""
    if a.dtype != b.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise ShapeError(f"cannot stack {a.data.shape} over {b.data.shape}")
    data = np.concatenate([a.data, b.data], axis=0)
    split = a.data.shape[0]

    def backward(g, out):
        return (g[:split], g[split:])

    return _result(data, (a, b), backward)


def relu(a):
    data = np.maximum(a.data, 0)

    def backward(g, out):
        # subgradient at exactly 0 is 0
        return (g * (a.data > 0),)

    return _result(data, (a,), backward)


def sigmoid(a):
    # split on sign so neither tail overflows exp
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(g, out):
        return (g * out * (1.0 - out),)

    return _result(data, (a,), backward)


def softmax(a):
    """Softmax over the last axis, shifted by the row max for stability.

    The result keeps a reference to its logits so that cross-entropy losses
    can differentiate through log-sum-exp instead of log(softmax).
    """
    z = a.data - np.max(a.data, axis=-1, keepdims=True)
    ez = np.exp(z)
    data = ez / np.sum(ez, axis=-1, keepdims=True)

    def backward(g, out):
        dot = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - dot),)

    out = _result(data, (a,), backward)
    out._logits = a
    return out


def log_softmax(a):
    z = a.data - np.max(a.data, axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    data = z - lse

    def backward(g, out):
        p = np.exp(out)
        return (g - p * np.sum(g, axis=-1, keepdims=True),)

    return _result(data, (a,), backward)


def log(a):
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive input")
    data = np.log(a.data)

    def backward(g, out):
        return (g / a.data,)

    return _result(data, (a,), backward)


def exp(a):
    data = np.exp(a.data)

    def backward(g, out):
        return (g * out,)

    return _result(data, (a,), backward)


def batch_mean(a):
    """Mean over axis 0 (the batch axis)."""
    if a.data.ndim == 0:
        raise ShapeError("batch_mean needs at least one axis")
    n = a.data.shape[0]
    data = np.mean(a.data, axis=0)

    def backward(g, out):
        return (np.broadcast_to(g / n, a.data.shape).astype(a.dtype, copy=True),)

    return _result(data, (a,), backward)


def sum_all(a):
    data = np.sum(a.data)

    def backward(g, out):
        return (np.broadcast_to(g, a.data.shape).astype(a.dtype, copy=True),)

    return _result(data, (a,), backward)


def sum_of_squares(a):
    data = np.sum(a.data * a.data)

    def backward(g, out):
        return (2.0 * g * a.data,)

    return _result(data, (a,), backward)


def grad_reverse(a, scale=1.0):
    """Identity forward; multiplies the gradient by -scale on the way back."""
    data = a.data

    def backward(g, out):
        return (-scale * g,)

    return _result(data, (a,), backward)


_OPS = {
    "add": add,
    "subtract": subtract,
    "multiply": multiply,
    "matmul": matmul,
    "concat": concat_last,
    "relu": relu,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "log": log,
    "exp": exp,
    "batch_mean": batch_mean,
    "sum_of_squares": sum_of_squares,
}


def apply(kind, *operands):
    """Dispatch one of the public op kinds by name."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise KeyError(f"unknown op kind {kind!r}; have {sorted(_OPS)}")
    return fn(*operands)


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._inputs:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss, params=None, free=True):
    """Backpropagate from a scalar `loss` through the recorded tape.

    With `params=None` every requires_grad tensor reached from `loss` gets
    its gradient accumulated into `.grad`.  With an explicit sequence only
    those leaves are written, which lets several objectives share one
    forward graph (pass free=False until the last backward over the graph).
    """
    if loss.data.shape not in ((), (1,)):
        raise GradientError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._backward is None and not loss.requires_grad:
        raise GradientError("loss has no recorded computation")

    wanted = None
    if params is not None:
        wanted = {id(p) for p in params}

    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and (wanted is None or id(node) in wanted):
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g.reshape(node.data.shape)
        if node._backward is None:
            continue
        parent_grads = node._backward(g, node.data)
        for parent, pg in zip(node._inputs, parent_grads):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            if acc is None:
                grads[id(parent)] = pg.astype(parent.dtype, copy=False)
            else:
                grads[id(parent)] = acc + pg

    if free:
        for node in order:
            node._backward = None
            node._inputs = ()


class AdamState:
    """Per-parameter Adam accumulators with the usual defaults."""

    def __init__(self, shape, dtype, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.step = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_update(param, state, lr):
    """One bias-corrected Adam step; consumes and clears `param.grad`."""
    if param.grad is None:
        raise GradientError("adam_update called on a parameter with no gradient")
    g = param.grad
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    mhat = state.m / (1.0 - state.beta1 ** state.step)
    vhat = state.v / (1.0 - state.beta2 ** state.step)
    param.data -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(param.dtype, copy=False)
    param.grad = None


class Adam:
    """Adam over a fixed parameter list, one state per parameter."""

    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = lr
        self.states = [AdamState(p.data.shape, p.data.dtype) for p in self.params]

    def step(self):
        for p, s in zip(self.params, self.states):
            if p.grad is not None:
                adam_update(p, s, self.lr)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
