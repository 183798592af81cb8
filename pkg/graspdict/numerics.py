"""Reverse-mode differentiation over numpy arrays.

A ``Tensor`` wraps a float64 array. Every primitive below returns a new
Tensor that remembers its parents and how to push an output gradient back
to them. ``backward`` walks the graph in reverse topological order and
accumulates gradients into the ``ParamStore`` entries the leaves came from.

The primitive set is deliberately small: matrix multiply, elementwise
arithmetic with numpy broadcasting, ReLU, square root, reductions,
slicing/concatenation, softmax, batch normalization, the interval penalty
and the cylindrical map used by the object-oriented pose representation.
"""

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from graspdict import InputError, RuntimeFailure

logger = logging.getLogger(__name__)

CYLINDER_AXIS_EPS = 1e-9
BATCH_NORM_MOMENTUM = 0.9
BATCH_NORM_EPS = 1e-5


class NonScalarLoss(RuntimeFailure):
    pass


class ShapeMismatch(InputError):
    pass


class EmptyBatch(InputError):
    pass


def make_rng(seed, *tags):
    """Return a counter-based (Philox) generator for ``seed`` and a purpose.

    Each consumer passes its own tags so that e.g. the batch order of one
    training phase never shifts the initialization of another.
    """
    words = [int(seed) & 0xFFFFFFFF]
    words.extend(zlib.crc32(str(tag).encode("utf-8")) for tag in tags)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def minibatches(count, batch_size, rng=None):
    """Split ``range(count)`` into (shuffled) index batches.

    A trailing batch of a single sample is merged into the previous one
    since batch statistics of one sample are degenerate.
    """
    order = rng.permutation(count) if rng is not None else np.arange(count)
    batches = [order[start:start + batch_size]
               for start in range(0, count, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2:] = [np.concatenate(batches[-2:])]
    return batches


class Tensor:

    # numpy operands on the left defer to the reflected Tensor operators.
    __array_ufunc__ = None

    def __init__(self, data, parents=(), backward_fn=None,
                 requires_grad=False, param=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.param = param
        self._parents = parents
        self._backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def constant(value):
    return Tensor(value)


def detach(tensor):
    return Tensor(as_tensor(tensor).data.copy())


def _node(data, parents, backward_fn):
    """Build a result node; drop the graph when no parent needs gradients."""
    if not any(parent.requires_grad for parent in parents):
        return Tensor(data)
    return Tensor(data, parents=parents, backward_fn=backward_fn,
                  requires_grad=True)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return _node(a.data + b.data, (a, b), backward_fn)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)

    return _node(a.data - b.data, (a, b), backward_fn)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(grad):
        return (_unbroadcast(grad * b.data, a.shape),
                _unbroadcast(grad * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward_fn)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward_fn(grad):
        return (_unbroadcast(grad / b.data, a.shape),
                _unbroadcast(-grad * a.data / (b.data * b.data), b.shape))

    return _node(a.data / b.data, (a, b), backward_fn)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch("matmul needs operands with at least two axes")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(
            f"cannot multiply {a.shape} by {b.shape}")

    def backward_fn(grad):
        grad_a = grad @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ grad
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _node(a.data @ b.data, (a, b), backward_fn)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def backward_fn(grad):
        return (grad * mask,)

    return _node(np.where(mask, x.data, 0.0), (x,), backward_fn)


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def backward_fn(grad):
        return (grad * 0.5 / out,)

    return _node(out, (x,), backward_fn)


def square(x):
    x = as_tensor(x)

    def backward_fn(grad):
        return (grad * 2.0 * x.data,)

    return _node(x.data * x.data, (x,), backward_fn)


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def backward_fn(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, x.shape).copy(),)

    return _node(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward_fn)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[ax] for ax in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape):
    x = as_tensor(x)

    def backward_fn(grad):
        return (grad.reshape(x.shape),)

    return _node(x.data.reshape(shape), (x,), backward_fn)


def transpose(x, axes=None):
    x = as_tensor(x)
    inverse = None if axes is None else np.argsort(axes)

    def backward_fn(grad):
        return (np.transpose(grad, inverse),)

    return _node(np.transpose(x.data, axes), (x,), backward_fn)


def take(x, index):
    """Basic or fancy indexing; the gradient scatters back with add.at."""
    x = as_tensor(x)
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(part, (int, slice)) or part is Ellipsis
                for part in parts)

    def backward_fn(grad):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = grad
        else:
            np.add.at(full, index, grad)
        return (full,)

    return _node(x.data[index], (x,), backward_fn)


def concat(tensors, axis=0):
    tensors = [as_tensor(tensor) for tensor in tensors]
    sizes = [tensor.shape[axis] for tensor in tensors]
    boundaries = np.cumsum(sizes)[:-1]

    def backward_fn(grad):
        return tuple(np.split(grad, boundaries, axis=axis))

    return _node(np.concatenate([tensor.data for tensor in tensors],
                                axis=axis), tuple(tensors), backward_fn)


def stack(tensors, axis=0):
    expanded = []
    for tensor in tensors:
        tensor = as_tensor(tensor)
        shape = list(tensor.shape)
        position = axis if axis >= 0 else len(shape) + 1 + axis
        shape.insert(position, 1)
        expanded.append(reshape(tensor, tuple(shape)))
    return concat(expanded, axis=axis)


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    out = exps / exps.sum(axis=axis, keepdims=True)

    def backward_fn(grad):
        inner = (grad * out).sum(axis=axis, keepdims=True)
        return (out * (grad - inner),)

    return _node(out, (x,), backward_fn)


def batch_norm(x, gamma, beta, running_mean, running_var, mode="train",
               update_stats=True, momentum=BATCH_NORM_MOMENTUM,
               eps=BATCH_NORM_EPS):
    """Normalize every feature (last axis) over all leading axes.

    In ``train`` mode the mini-batch statistics are used and, when
    ``update_stats`` is set, folded into ``running_mean``/``running_var``
    in place. In ``infer`` mode the running statistics are used as
    constants.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = tuple(range(x.data.ndim - 1))
    if mode == "train":
        count = int(np.prod([x.shape[ax] for ax in axes]))
        batch_mean = x.data.mean(axis=axes)
        centered = x.data - batch_mean
        batch_var = (centered * centered).mean(axis=axes)
        inv_std = 1.0 / np.sqrt(batch_var + eps)
        xhat = centered * inv_std
        if update_stats:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * batch_mean
            running_var *= momentum
            running_var += (1.0 - momentum) * batch_var

        def backward_fn(grad):
            grad_xhat = grad * gamma.data
            grad_x = inv_std / count * (
                count * grad_xhat
                - grad_xhat.sum(axis=axes)
                - xhat * (grad_xhat * xhat).sum(axis=axes))
            return (grad_x, (grad * xhat).sum(axis=axes), grad.sum(axis=axes))
    elif mode == "infer":
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean) * inv_std

        def backward_fn(grad):
            return (grad * gamma.data * inv_std,
                    (grad * xhat).sum(axis=axes), grad.sum(axis=axes))
    else:
        raise ValueError(f"Unknown mode '{mode}'")
    out = xhat * gamma.data + beta.data
    return _node(out, (x, gamma, beta), backward_fn)


def interval(d, d_min, d_max):
    """Elementwise max(d_min - d, 0) + max(d - d_max, 0)."""
    d = as_tensor(d)
    below = d.data < d_min
    above = d.data > d_max
    out = np.where(below, d_min - d.data, 0.0) + np.where(
        above, d.data - d_max, 0.0)

    def backward_fn(grad):
        return (grad * (above.astype(np.float64) - below.astype(np.float64)),)

    return _node(out, (d,), backward_fn)


def mse(a, b):
    return mean(square(sub(a, b)))


def cylindrical(q):
    """Map (..., 3) object-frame points to (..., 4) = (rho, cos, sin, z).

    Points closer than ``CYLINDER_AXIS_EPS`` to the z' axis get
    (cos, sin) = (1, 0) and a zero gradient in the x'/y' directions.
    """
    q = as_tensor(q)
    x, y, z = q.data[..., 0], q.data[..., 1], q.data[..., 2]
    rho = np.hypot(x, y)
    on_axis = rho < CYLINDER_AXIS_EPS
    safe = np.where(on_axis, 1.0, rho)
    cos = np.where(on_axis, 1.0, x / safe)
    sin = np.where(on_axis, 0.0, y / safe)
    out = np.stack([rho, cos, sin, z], axis=-1)

    def backward_fn(grad):
        g_rho, g_cos, g_sin, g_z = (grad[..., i] for i in range(4))
        cube = safe ** 3
        grad_x = g_rho * x / safe + (g_cos * y * y - g_sin * x * y) / cube
        grad_y = g_rho * y / safe + (g_sin * x * x - g_cos * x * y) / cube
        grad_x = np.where(on_axis, 0.0, grad_x)
        grad_y = np.where(on_axis, 0.0, grad_y)
        return (np.stack([grad_x, grad_y, g_z], axis=-1),)

    return _node(out, (q,), backward_fn)


def _topological_order(root):
    order = []
    visited = set()
    pending = [(root, False)]
    while pending:
        node, expanded = pending.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        pending.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                pending.append((parent, False))
    return order


def backward(loss, store=None):
    """Populate gradients of every tensor reachable from the scalar ``loss``.

    When ``store`` is given its gradient slots are zeroed first, so that
    entries the loss does not reach end up with zero gradients.
    """
    loss = as_tensor(loss)
    if loss.data.size != 1:
        raise NonScalarLoss(
            f"backward needs a scalar loss, got shape {loss.shape}")
    if store is not None:
        store.zero_grad()
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node._backward_fn is None:
            node.grad = grad if node.grad is None else node.grad + grad
            if node.param is not None:
                node.param.grad += grad
            continue
        for parent, parent_grad in zip(node._parents,
                                       node._backward_fn(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = parent_grad if key not in grads else (
                grads[key] + parent_grad)


class GradProgram:
    """A scalar loss over the trainable entries of a ParamStore.

    ``forward`` is a callable taking the store and returning a scalar
    Tensor built from ``store.var(...)`` leaves and constant inputs.
    """

    def __init__(self, store, forward):
        self.store = store
        self._forward = forward

    def evaluate(self):
        return as_tensor(self._forward(self.store)).item()

    def run(self):
        loss = as_tensor(self._forward(self.store))
        backward(loss, self.store)
        return loss.item()


@dataclass
class GradCheckReport:
    max_relative_error: float
    tolerance: float
    per_parameter: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_relative_error <= self.tolerance

    def lines(self):
        yield (f"max relative error {self.max_relative_error:.3e} "
               f"(tolerance {self.tolerance:.1e}): "
               f"{'PASS' if self.passed else 'FAIL'}")
        for name, error in sorted(self.per_parameter.items()):
            yield f"  {name}\t{error:.3e}"


def _central_difference(program, snapshot, value, index, step):
    store = program.store
    original = value[index]
    value[index] = original + step
    loss_plus = program.evaluate()
    store.restore(snapshot)
    value[index] = original - step
    loss_minus = program.evaluate()
    store.restore(snapshot)
    return (loss_plus - loss_minus) / (2.0 * step)


def gradcheck(program, tolerance=1e-4, step=1e-5, max_entries=16, seed=0):
    """Compare analytic gradients against central finite differences.

    At most ``max_entries`` coordinates of each trainable entry are probed
    (picked with a seeded generator). The relative error of a coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, floor) where floor is
    1e-6 or 1e-3 of the largest analytic magnitude of that entry, whichever
    is larger, so that round-off on near-zero coordinates does not count.
    A coordinate above ``tolerance`` is probed once more with a step 100
    times smaller, since the two evaluations may straddle a ReLU kink.
    """
    store = program.store
    snapshot = store.snapshot()
    program.run()
    analytic = {name: store.entry(name).grad.copy()
                for name in store.trainable_names()}
    store.restore(snapshot)
    rng = make_rng(seed, "gradcheck")
    per_parameter = {}
    for name in store.trainable_names():
        value = store.entry(name).value
        flat_size = value.size
        if flat_size <= max_entries:
            positions = np.arange(flat_size)
        else:
            positions = np.sort(rng.choice(flat_size, size=max_entries,
                                           replace=False))
        floor = max(1e-6, 1e-3 * np.abs(analytic[name]).max())
        worst = 0.0
        for position in positions:
            index = np.unravel_index(position, value.shape)
            exact = analytic[name][index]
            error = 0.0
            for probe_step in (step, step / 100.0):
                numeric = _central_difference(program, snapshot, value, index,
                                              probe_step)
                scale = max(abs(exact), abs(numeric), floor)
                error = abs(exact - numeric) / scale
                if error <= tolerance:
                    break
            worst = max(worst, error)
        per_parameter[name] = worst
    max_error = max(per_parameter.values(), default=0.0)
    logger.debug("gradcheck max relative error %.3e", max_error)
    return GradCheckReport(max_relative_error=max_error, tolerance=tolerance,
                           per_parameter=per_parameter)
