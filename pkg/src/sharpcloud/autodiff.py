"""Minimal reverse-mode automatic differentiation on numpy arrays.

A Tape records tensors in creation order (already a topological order for a
dynamically built graph); backward walks it once in reverse.  The primitive
set is exactly what the consolidation network and its losses need -- there
is no broadcasting beyond bias addition, which keeps every shape explicit.

Group reductions take contiguous segments: x rows are grouped by a
`sizes` array (group g owns rows offsets[g] .. offsets[g+1]).
"""

from __future__ import annotations

import numpy as np


class AutodiffError(RuntimeError):
    pass


class ShapeError(AutodiffError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "tape", "_parents", "_rule", "visits")

    def __init__(self, data, requires_grad, tape, parents=(), rule=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.tape = tape
        self._parents = parents
        self._rule = rule
        self.visits = 0

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Owns one dynamically recorded computation graph.

    A tape can run backward exactly once; rebuild it (re-record the forward
    pass) for the next gradient.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False

    def _record(self, data, requires_grad, parents=(), rule=None) -> Tensor:
        t = Tensor(data, requires_grad, self, parents, rule)
        self.nodes.append(t)
        return t

    def tensor(self, data, requires_grad=False) -> Tensor:
        """A leaf tensor (input, parameter, or constant)."""
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise AutodiffError("non-finite values in leaf tensor")
        return self._record(arr, requires_grad)

    def constant(self, data) -> Tensor:
        return self.tensor(data, requires_grad=False)

    def backward(self, root: Tensor):
        """Reverse-mode sweep seeding d(root)/d(root) = 1.

        root must be a 1-element tensor recorded on this tape.
        """
        if self.consumed:
            raise AutodiffError("stale tape: backward was already run; re-record the forward pass")
        if root.tape is not self:
            raise AutodiffError("root tensor does not belong to this tape")
        if root.data.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {root.data.shape}")
        self.consumed = True
        root.grad = np.ones_like(root.data)
        for node in reversed(self.nodes):
            node.visits += 1
            if node.grad is None or node._rule is None:
                continue
            grads = node._rule(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    # adopt the rule's array when it owns fresh storage;
                    # copy pass-through / view gradients so later
                    # accumulation cannot corrupt upstream buffers
                    if g is node.grad or g.base is not None:
                        g = g.copy()
                    parent.grad = g
                else:
                    parent.grad += g


def _same_tape(*tensors) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise AutodiffError("tensors from different tapes in one op")
    if tape.consumed:
        raise AutodiffError("stale tape: re-record before adding ops")
    return tape


def _needs(*tensors):
    return any(t.requires_grad for t in tensors)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with x (n, fin), w (fin, fout), b (fout,)."""
    tape = _same_tape(x, w, b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"linear: x {x.data.shape} incompatible with w {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"linear: bias {b.data.shape} incompatible with w {w.data.shape}")
    out = x.data @ w.data + b.data

    def rule(g):
        return (g @ w.data.T if x.requires_grad else None,
                x.data.T @ g if w.requires_grad else None,
                g.sum(axis=0) if b.requires_grad else None)

    return tape._record(out, _needs(x, w, b), (x, w, b), rule)


def relu(x: Tensor) -> Tensor:
    tape = _same_tape(x)
    mask = x.data > 0.0          # gradient at exactly 0 is 0

    def rule(g):
        return (g * mask,)

    return tape._record(np.where(mask, x.data, 0.0), x.requires_grad, (x,), rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: {a.data.shape} vs {b.data.shape}")
    return tape._record(a.data + b.data, _needs(a, b), (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: {a.data.shape} vs {b.data.shape}")
    return tape._record(a.data - b.data, _needs(a, b), (a, b), lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; b may be a Python scalar (constant scale)."""
    if not isinstance(b, Tensor):
        tape = _same_tape(a)
        c = float(b)
        return tape._record(a.data * c, a.requires_grad, (a,), lambda g: (g * c,))
    tape = _same_tape(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: {a.data.shape} vs {b.data.shape}")

    def rule(g):
        return (g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None)

    return tape._record(a.data * b.data, _needs(a, b), (a, b), rule)


def square(x: Tensor) -> Tensor:
    tape = _same_tape(x)
    return tape._record(x.data ** 2, x.requires_grad, (x,), lambda g: (2.0 * x.data * g,))


def reduce_mean(x: Tensor) -> Tensor:
    tape = _same_tape(x)
    n = x.data.size

    def rule(g):
        return (np.full_like(x.data, float(g) / n),)

    return tape._record(np.asarray(x.data.mean()), x.requires_grad, (x,), rule)


def concat(xs, axis: int = 0) -> Tensor:
    tape = _same_tape(*xs)
    ndim = xs[0].data.ndim
    for t in xs[1:]:
        if t.data.ndim != ndim:
            raise ShapeError(f"concat: rank mismatch {xs[0].data.shape} vs {t.data.shape}")
    sizes = [t.data.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape._record(np.concatenate([t.data for t in xs], axis=axis),
                        _needs(*xs), tuple(xs), rule)


def gather(x: Tensor, indices) -> Tensor:
    """Select rows of x; duplicate indices accumulate in backward."""
    tape = _same_tape(x)
    idx = np.asarray(indices, dtype=np.int64)

    def rule(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return tape._record(x.data[idx], x.requires_grad, (x,), rule)


def replicate(x: Tensor, r: int) -> Tensor:
    """r stacked copies of x along axis 0: rows [0..n) repeat r times."""
    tape = _same_tape(x)
    n = x.data.shape[0]

    def rule(g):
        return (g.reshape(r, n, *x.data.shape[1:]).sum(axis=0),)

    return tape._record(np.tile(x.data, (r,) + (1,) * (x.data.ndim - 1)),
                        x.requires_grad, (x,), rule)


def _group_offsets(sizes):
    sizes = np.asarray(sizes, dtype=np.int64)
    offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    return sizes, offsets


def _dense_groups(x, sizes, offsets, fill):
    """(groups, max_size, channels) view of contiguous row segments."""
    g_count, width = len(sizes), int(sizes.max())
    pos = offsets[:-1, None] + np.arange(width)[None, :]
    if (sizes == width).all():
        return x[pos], pos, None
    valid = np.arange(width)[None, :] < sizes[:, None]
    dense = np.full((g_count, width, x.shape[1]), fill)
    dense[valid] = x[pos[valid]]
    return dense, pos, valid


def max_over_group(x: Tensor, sizes) -> Tensor:
    """Per-group, per-channel max over contiguous row segments of x (n, c).

    Backward credits only the argmax element; ties go to the earliest row
    in the segment.
    """
    tape = _same_tape(x)
    sizes, offsets = _group_offsets(sizes)
    if offsets[-1] != x.data.shape[0]:
        raise ShapeError(f"group sizes sum to {offsets[-1]}, x has {x.data.shape[0]} rows")
    if (sizes <= 0).any():
        raise ShapeError("empty group in max_over_group")
    dense, _, _ = _dense_groups(x.data, sizes, offsets, -np.inf)
    arg = dense.argmax(axis=1)                          # (g, c)
    out = np.take_along_axis(dense, arg[:, None, :], axis=1)[:, 0, :]
    rows = offsets[:-1, None] + arg                     # flat row index per (g, c)
    cols = np.broadcast_to(np.arange(x.data.shape[1]), rows.shape)

    def rule(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, cols), g)
        return (gx,)

    return tape._record(out, x.requires_grad, (x,), rule)


def mean_over_group(x: Tensor, sizes) -> Tensor:
    """Per-group mean over contiguous row segments of x (n, c)."""
    tape = _same_tape(x)
    sizes, offsets = _group_offsets(sizes)
    if offsets[-1] != x.data.shape[0]:
        raise ShapeError(f"group sizes sum to {offsets[-1]}, x has {x.data.shape[0]} rows")
    if (sizes <= 0).any():
        raise ShapeError("empty group in mean_over_group")
    gid = np.repeat(np.arange(len(sizes)), sizes)
    sums = np.zeros((len(sizes), x.data.shape[1]))
    np.add.at(sums, gid, x.data)
    out = sums / sizes[:, None]

    def rule(g):
        return ((g / sizes[:, None])[gid],)

    return tape._record(out, x.requires_grad, (x,), rule)


def gather_weighted_sum(x: Tensor, indices, weights) -> Tensor:
    """sum_k weights[:, k] * x[indices[:, k]] -- the 3-nn feature
    interpolation primitive.  indices (m, k) int, weights (m, k) constants."""
    tape = _same_tape(x)
    idx = np.asarray(indices, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    if idx.shape != w.shape:
        raise ShapeError(f"gather_weighted_sum: indices {idx.shape} vs weights {w.shape}")
    out = np.einsum("mk,mkc->mc", w, x.data[idx])

    def rule(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, w[:, :, None] * g[:, None, :])
        return (gx,)

    return tape._record(out, x.requires_grad, (x,), rule)


def custom(inputs, value, backward_fn) -> Tensor:
    """A node with an externally supplied forward value and backward rule.

    backward_fn(upstream_grad) must return one gradient (or None) per input,
    consistent with the forward map that produced `value`.  This is how the
    losses inject analytic distance-kernel gradients into the graph.
    """
    tape = _same_tape(*inputs)
    return tape._record(value, _needs(*inputs), tuple(inputs), backward_fn)
