"""Reverse-mode autodiff over float64 numpy arrays.

The engine is a tape of :class:`Tensor` nodes.  Forward calls build the
graph; ``loss.backward()`` walks it once in reverse topological order and
accumulates gradients into ``.grad`` on every node that requires them.
Design rules, enforced here and relied on by everything above:

* all values are float64; integer inputs (labels) stay plain numpy arrays
  and never enter the tape;
* no silent broadcasting: elementwise ops demand identical shapes, the
  only broadcast-shaped ops are the explicit bias adds;
* every operation checks its output for NaN/Inf and raises
  :class:`NumericError` naming the op; the same check runs on every
  gradient produced during backprop;
* ``relu`` has zero slope at 0, ``max_pool2d`` breaks ties by the first
  element of the window in row-major order, ``clamp_min`` passes no
  gradient at or below the floor;
* repeated ``backward()`` calls without clearing ``.grad`` accumulate, by
  design; callers that want fresh gradients set ``grad = None`` (see
  ``ParamSet.zero_grad``).

Graphs are ordinary object graphs: dropping the loss tensor frees the
tape.  Phase boundaries inside the trainer pass detached tensors and
frozen parameter views, so no gradient can leak across them.
"""

from __future__ import annotations

from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ParamSet",
    "ShapeError",
    "NumericError",
    "tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "add_bias",
    "add_channel_bias",
    "matmul",
    "dense",
    "bmm",
    "linear_tokens",
    "relu",
    "conv2d",
    "max_pool2d",
    "softmax",
    "log_softmax",
    "log",
    "clamp_min",
    "mean_all",
    "sum_all",
    "flatten",
    "reshape",
    "permute",
    "concat",
    "slice_rows",
    "gather_rows",
    "class_mean",
    "pairwise_sqdist",
    "pair_concat",
]


class ShapeError(ValueError):
    """Raised when an operation receives incompatibly shaped arguments."""


class NumericError(ArithmeticError):
    """Raised when an operation produces NaN or Inf; message names the op."""


def _as_f64(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """One node of the tape: a float64 array plus its backward closure."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        if not np.all(np.isfinite(self.data)):
            raise NumericError("tensor: non-finite values in input data")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"

    # introspection

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has {self.data.size} elements")
        return float(self.data.reshape(())[()])

    def detach(self) -> "Tensor":
        """A leaf view of the same data, cut off from the producing graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
        out._op = "leaf"
        return out

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # backward driver

    def backward(self) -> None:
        """Accumulate gradients of this scalar into the graph's ``.grad`` slots.

        Gradients add onto whatever ``.grad`` already holds, so calling
        ``backward()`` twice doubles leaf gradients unless they are
        cleared in between.
        """
        if self.data.shape != ():
            raise ShapeError(f"backward: loss must be a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ValueError("backward: tensor does not require gradients")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        pending: dict[int, np.ndarray] = {id(self): np.ones((), dtype=np.float64)}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(pg)):
                    raise NumericError(f"{node._op}: non-finite gradient during backward")
                held = pending.get(id(parent))
                pending[id(parent)] = pg if held is None else held + pg


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Build a leaf tensor from array-like data."""
    return Tensor(data, requires_grad=requires_grad)


def _make(
    data: np.ndarray,
    op: str,
    parents: tuple[Tensor, ...],
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op}: non-finite values in output")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _make(a.data * b.data, "mul", (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, "scale", (a,), lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[B, D] + b[D]; the dense-layer bias add."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"add_bias: got x{x.data.shape}, b{b.data.shape}")
    return _make(x.data + b.data[None, :], "add_bias", (x, b), lambda g: (g, g.sum(axis=0)))


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[B, C, H, W] + b[C]; the conv-layer bias add."""
    if x.data.ndim != 4 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"add_channel_bias: got x{x.data.shape}, b{b.data.shape}")
    return _make(
        x.data + b.data[None, :, None, None],
        "add_channel_bias",
        (x, b),
        lambda g: (g, g.sum(axis=(0, 2, 3))),
    )


# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: got {a.data.shape} @ {b.data.shape}")
    return _make(
        a.data @ b.data,
        "matmul",
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map x[B, D] @ w[D, M] + b[M]."""
    if (
        x.data.ndim != 2
        or w.data.ndim != 2
        or b.data.ndim != 1
        or x.data.shape[1] != w.data.shape[0]
        or w.data.shape[1] != b.data.shape[0]
    ):
        raise ShapeError(f"dense: got x{x.data.shape}, w{w.data.shape}, b{b.data.shape}")
    return _make(
        x.data @ w.data + b.data[None, :],
        "dense",
        (x, w, b),
        lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)),
    )


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul a[B, M, K] @ b[B, K, N]."""
    if (
        a.data.ndim != 3
        or b.data.ndim != 3
        or a.data.shape[0] != b.data.shape[0]
        or a.data.shape[2] != b.data.shape[1]
    ):
        raise ShapeError(f"bmm: got {a.data.shape} @ {b.data.shape}")
    return _make(
        np.matmul(a.data, b.data),
        "bmm",
        (a, b),
        lambda g: (
            np.matmul(g, b.data.transpose(0, 2, 1)),
            np.matmul(a.data.transpose(0, 2, 1), g),
        ),
    )


def linear_tokens(x: Tensor, w: Tensor) -> Tensor:
    """Per-token projection x[B, T, C] @ w[C, M]."""
    if x.data.ndim != 3 or w.data.ndim != 2 or x.data.shape[2] != w.data.shape[0]:
        raise ShapeError(f"linear_tokens: got x{x.data.shape}, w{w.data.shape}")
    return _make(
        np.matmul(x.data, w.data),
        "linear_tokens",
        (x, w),
        lambda g: (
            np.matmul(g, w.data.T),
            np.tensordot(x.data, g, axes=([0, 1], [0, 1])),
        ),
    )


# nonlinearities

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    return _make(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, "softmax", (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the last axis, numerically stable."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    ls = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(ls)

    def backward(g: np.ndarray):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(ls, "log_softmax", (x,), backward)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise NumericError("log: non-positive input")
    return _make(np.log(x.data), "log", (x,), lambda g: (g / x.data,))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient passes only where x > floor."""
    floor = float(floor)
    mask = x.data > floor
    return _make(np.maximum(x.data, floor), "clamp_min", (x,), lambda g: (g * mask,))


# convolution and pooling

def conv2d(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x[B, C, H, W] with k[F, C, kh, kw].

    Square odd kernels only; output is [B, F, H', W'] with
    H' = (H + 2 * padding - kh) // stride + 1.
    """
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError(f"conv2d: got x{x.data.shape}, k{k.data.shape}")
    B, C, H, W = x.data.shape
    F, Ck, kh, kw = k.data.shape
    if Ck != C:
        raise ShapeError(f"conv2d: kernel expects {Ck} channels, input has {C}")
    if kh != kw or kh % 2 == 0 or kh < 1:
        raise ShapeError(f"conv2d: kernel must be square with odd side, got {kh}x{kw}")
    stride = int(stride)
    padding = int(padding)
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: bad stride={stride} or padding={padding}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < kh or Wp < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [B, C, Ho, Wo, kh, kw]
    out = np.tensordot(win, k.data, axes=([1, 4, 5], [1, 2, 3]))  # [B, Ho, Wo, F]
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g: np.ndarray):
        gk = None
        if k.requires_grad:
            gk = np.tensordot(win, g, axes=([0, 2, 3], [0, 2, 3]))  # [C, kh, kw, F]
            gk = np.ascontiguousarray(gk.transpose(3, 0, 1, 2))
        gx = None
        if x.requires_grad:
            gxp = np.zeros((B, C, Hp, Wp), dtype=np.float64)
            for i in range(kh):
                for j in range(kw):
                    # [B, F, Ho, Wo] x [F, C] -> [B, Ho, Wo, C]
                    contrib = np.tensordot(g, k.data[:, :, i, j], axes=([1], [0]))
                    gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += (
                        contrib.transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, padding : padding + H, padding : padding + W]
        return (gx, gk)

    return _make(out, "conv2d", (x, k), backward)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties go to the first window element
    in row-major order.  H and W must be even."""
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool2d: got x{x.data.shape}")
    B, C, H, W = x.data.shape
    if H % 2 or W % 2:
        raise ShapeError(f"max_pool2d: H and W must be even, got {H}x{W}")
    Ho, Wo = H // 2, W // 2
    v = x.data.reshape(B, C, Ho, 2, Wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, 4)
    idx = v.argmax(axis=-1)
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray):
        dv = np.zeros_like(v)
        np.put_along_axis(dv, idx[..., None], g[..., None], axis=-1)
        gx = dv.reshape(B, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
        return (gx,)

    return _make(np.ascontiguousarray(out), "max_pool2d", (x,), backward)


# reductions and shape ops

def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    if n == 0:
        raise ShapeError("mean_all: empty tensor")
    return _make(
        np.asarray(x.data.mean()),
        "mean_all",
        (x,),
        lambda g: (np.full_like(x.data, g / n),),
    )


def sum_all(x: Tensor) -> Tensor:
    return _make(
        np.asarray(x.data.sum()),
        "sum_all",
        (x,),
        lambda g: (np.full_like(x.data, g),),
    )


def flatten(x: Tensor) -> Tensor:
    """Collapse all axes after the first: [B, ...] -> [B, prod(...)]."""
    if x.data.ndim < 2:
        raise ShapeError(f"flatten: need at least 2 axes, got {x.data.shape}")
    B = x.data.shape[0]
    shp = x.data.shape
    return _make(
        x.data.reshape(B, -1),
        "flatten",
        (x,),
        lambda g: (g.reshape(shp),),
    )


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.data.shape} as {shape}")
    old = x.data.shape
    return _make(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(old),))


def permute(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeError(f"permute: axes {axes} not a permutation of {x.data.ndim} dims")
    inv = np.argsort(axes)
    return _make(
        np.ascontiguousarray(x.data.transpose(axes)),
        "permute",
        (x,),
        lambda g: (g.transpose(inv),),
    )


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat: no tensors")
    nd = parts[0].data.ndim
    axis = int(axis)
    if axis < 0:
        axis += nd
    for p in parts:
        if p.data.ndim != nd:
            raise ShapeError("concat: rank mismatch")
        if p.data.shape[:axis] + p.data.shape[axis + 1 :] != parts[0].data.shape[:axis] + parts[0].data.shape[axis + 1 :]:
            raise ShapeError("concat: non-axis dims differ")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray):
        sl = [slice(None)] * nd
        grads = []
        for i in range(len(parts)):
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            grads.append(g[tuple(sl)])
        return grads

    return _make(np.concatenate([p.data for p in parts], axis=axis), "concat", parts, backward)


# indexed ops used by the heads and losses

def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous rows [start, stop) along the first axis."""
    start, stop = int(start), int(stop)
    if x.data.ndim < 1:
        raise ShapeError("slice_rows: tensor has no rows")
    n = x.data.shape[0]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice_rows: bad range [{start}, {stop}) for {n} rows")

    def backward(g: np.ndarray):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return _make(x.data[start:stop].copy(), "slice_rows", (x,), backward)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one column per row: out[i] = x[i, idx[i]]."""
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows: got x{x.data.shape}")
    idx = np.asarray(idx)
    if idx.ndim != 1 or idx.shape[0] != x.data.shape[0]:
        raise ShapeError(f"gather_rows: got idx{idx.shape} for x{x.data.shape}")
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("gather_rows: idx must be an integer array")
    if idx.min(initial=0) < 0 or idx.max(initial=-1) >= x.data.shape[1]:
        raise ShapeError("gather_rows: index out of range")
    rows = np.arange(x.data.shape[0])

    def backward(g: np.ndarray):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return _make(x.data[rows, idx], "gather_rows", (x,), backward)


def class_mean(emb: Tensor, labels: np.ndarray, n_classes: int) -> Tensor:
    """Mean embedding per label value: out[c] = mean of emb rows with label c.

    Every class in range(n_classes) must appear at least once.
    """
    if emb.data.ndim != 2:
        raise ShapeError(f"class_mean: got emb{emb.data.shape}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != emb.data.shape[0]:
        raise ShapeError(f"class_mean: got labels{labels.shape} for emb{emb.data.shape}")
    counts = np.bincount(labels, minlength=n_classes)
    if len(counts) != n_classes or counts.min() == 0:
        raise ShapeError("class_mean: every class must have at least one row")
    onehot = np.zeros((n_classes, labels.shape[0]), dtype=np.float64)
    onehot[labels, np.arange(labels.shape[0])] = 1.0
    inv = (1.0 / counts)[:, None]

    def backward(g: np.ndarray):
        return ((g * inv)[labels],)

    return _make(inv * (onehot @ emb.data), "class_mean", (emb,), backward)


def pairwise_sqdist(q: Tensor, p: Tensor) -> Tensor:
    """Squared euclidean distances out[i, j] = ||q[i] - p[j]||^2."""
    if q.data.ndim != 2 or p.data.ndim != 2 or q.data.shape[1] != p.data.shape[1]:
        raise ShapeError(f"pairwise_sqdist: got q{q.data.shape}, p{p.data.shape}")
    diff = q.data[:, None, :] - p.data[None, :, :]  # [Q, N, D]
    out = np.einsum("qnd,qnd->qn", diff, diff)

    def backward(g: np.ndarray):
        w = 2.0 * diff * g[:, :, None]
        return (w.sum(axis=1), -w.sum(axis=0))

    return _make(out, "pairwise_sqdist", (q, p), backward)


def pair_concat(q: Tensor, p: Tensor) -> Tensor:
    """All (query, prototype) row pairs: out[i * N + j] = concat(q[i], p[j])."""
    if q.data.ndim != 2 or p.data.ndim != 2 or q.data.shape[1] != p.data.shape[1]:
        raise ShapeError(f"pair_concat: got q{q.data.shape}, p{p.data.shape}")
    Q, D = q.data.shape
    N = p.data.shape[0]
    out = np.empty((Q * N, 2 * D), dtype=np.float64)
    out[:, :D] = np.repeat(q.data, N, axis=0)
    out[:, D:] = np.tile(p.data, (Q, 1))

    def backward(g: np.ndarray):
        gq = g[:, :D].reshape(Q, N, D).sum(axis=1)
        gp = g[:, D:].reshape(Q, N, D).sum(axis=0)
        return (gq, gp)

    return _make(out, "pair_concat", (q, p), backward)


class ParamSet:
    """Named, ordered collection of trainable tensors.

    All members require gradients; ``frozen()`` yields the detached
    mapping used inside phases that must not touch parameter gradients
    (the detached views share the same data arrays, so optimizer updates
    are visible through them).
    """

    def __init__(self, items: Mapping[str, Tensor] | None = None):
        self._items: dict[str, Tensor] = {}
        if items:
            for name, t in items.items():
                self.add(name, t)

    def add(self, name: str, t: Tensor) -> None:
        if name in self._items:
            raise ValueError(f"duplicate parameter name: {name}")
        if not isinstance(t, Tensor):
            raise TypeError(f"parameter {name} is not a Tensor")
        if not t.requires_grad:
            raise ValueError(f"parameter {name} must require gradients")
        self._items[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return list(self._items)

    def items(self):
        return self._items.items()

    def tensors(self) -> list[Tensor]:
        return list(self._items.values())

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.grad = None

    def frozen(self) -> dict[str, Tensor]:
        """Detached views sharing data with the live parameters."""
        return {name: t.detach() for name, t in self._items.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._items.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        if set(state) != set(self._items):
            missing = set(self._items) - set(state)
            extra = set(state) - set(self._items)
            raise ValueError(f"state mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        for name, arr in state.items():
            arr = _as_f64(arr)
            if arr.shape != self._items[name].data.shape:
                raise ValueError(
                    f"state mismatch for {name}: {arr.shape} vs {self._items[name].data.shape}"
                )
            self._items[name].data = arr.copy()

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, t in self._items.items():
            out.add(name, Tensor(t.data.copy(), requires_grad=True))
        return out
