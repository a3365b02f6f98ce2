"""Dense tensors with reverse-mode automatic differentiation.

Everything downstream (noise augmentation, the detector, training) is built
on this module. Design constraints, in order of priority:

* correctness first: every differentiable op is checked against central
  finite differences in the test suite;
* determinism: a fixed seed reproduces a forward+backward pass bit for bit
  on the same platform (see :class:`Rng`);
* no silent broadcasting: binary elementwise ops accept equal shapes or a
  scalar (0-d) operand, nothing in between. Broadcasts are spelled out with
  :func:`broadcast_to`.

Storage is a numpy array per tensor. float32 is the training default;
float64 exists for gradient checks. Convolution is direct (a loop over the
k*k kernel offsets, each a vectorized slice product) -- inputs are at most
256x256, so no im2col or fusion machinery is warranted.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

# Gradcheck negative-control hook: maps op name -> multiplicative corruption
# applied to that op's backward rule. Only ever set by the gradcheck harness.
_BACKWARD_CORRUPTION: dict[str, float] = {}


class TensorError(ValueError):
    """Structured error for contract violations (shape, dtype, graph misuse)."""


class Tensor:
    """A dense N-d array, optionally recorded in a differentiation graph.

    ``requires_grad`` marks trainable leaves. Non-leaf tensors produced by
    ops carry closures that implement their local backward rule; the graph
    is implicit in the ``_parents`` links and is traversed once, in reverse
    topological order, by :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype=None,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
        name: str | None = None,
    ):
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, (np.ndarray, np.generic)) and np.asarray(data).dtype in (np.float32, np.float64):
            arr = np.asarray(data)
        else:
            # Python lists/scalars land on the training default dtype.
            arr = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise TensorError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """A defensive copy of the stored values."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Same values, cut out of the graph. Shares storage."""
        return Tensor(self.data, requires_grad=False)

    def assert_finite(self, context: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise TensorError(f"non-finite values in {context} (shape {self.shape})")
        return self

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad}{tag})"

    # -- operator sugar (all defined in terms of the module-level ops) --

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def sum(self, axes=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axes, keepdims)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _requires(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._backward is not None for t in tensors)


def _binary_setup(a: Tensor, b, op: str) -> tuple[Tensor, Tensor, tuple[int, ...]]:
    """Validate a binary elementwise op: equal shapes, or one 0-d scalar."""
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b.dtype if isinstance(b, Tensor) else DEFAULT_DTYPE)
    b = _as_tensor(b, a.dtype)
    if a.dtype != b.dtype:
        raise TensorError(f"{op}: dtype mismatch {a.dtype.name} vs {b.dtype.name}")
    if a.shape == b.shape:
        return a, b, a.shape
    if a.ndim == 0:
        return a, b, b.shape
    if b.ndim == 0:
        return a, b, a.shape
    raise TensorError(f"{op}: shape mismatch {a.shape} vs {b.shape} (only scalar broadcast allowed)")


def _scalar_grad(g: np.ndarray, operand: Tensor) -> np.ndarray:
    """Reduce an output-shaped gradient back to a scalar operand's shape."""
    if operand.ndim == 0 and g.ndim != 0:
        return g.sum()
    return g


# -- elementwise ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b, _ = _binary_setup(a, b, "add")
    out = Tensor(a.data + b.data, _parents=(a, b))
    if _requires(a, b):
        def bwd(g):
            _accum(a, _scalar_grad(g, a))
            _accum(b, _scalar_grad(g, b))
        out._backward = bwd
    return out


def sub(a, b) -> Tensor:
    a, b, _ = _binary_setup(a, b, "sub")
    out = Tensor(a.data - b.data, _parents=(a, b))
    if _requires(a, b):
        def bwd(g):
            _accum(a, _scalar_grad(g, a))
            _accum(b, _scalar_grad(-g, b))
        out._backward = bwd
    return out


def mul(a, b) -> Tensor:
    a, b, _ = _binary_setup(a, b, "mul")
    out = Tensor(a.data * b.data, _parents=(a, b))
    if _requires(a, b):
        def bwd(g):
            _accum(a, _scalar_grad(g * b.data, a))
            _accum(b, _scalar_grad(g * a.data, b))
        out._backward = bwd
    return out


def div(a, b) -> Tensor:
    a, b, _ = _binary_setup(a, b, "div")
    out = Tensor(a.data / b.data, _parents=(a, b))
    if _requires(a, b):
        def bwd(g):
            _accum(a, _scalar_grad(g / b.data, a))
            _accum(b, _scalar_grad(-g * a.data / (b.data * b.data), b))
        out._backward = bwd
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, _parents=(a,))
    if _requires(a):
        out._backward = lambda g: _accum(a, -g)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0), _parents=(a,))
    if _requires(a):
        mask = (a.data > 0).astype(a.data.dtype)
        def bwd(g):
            _accum(a, g * mask * _BACKWARD_CORRUPTION.get("relu", 1.0))
        out._backward = bwd
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data), _parents=(a,))
    if _requires(a):
        out._backward = lambda g: _accum(a, g * out.data)
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), _parents=(a,))
    if _requires(a):
        out._backward = lambda g: _accum(a, g / a.data)
    return out


def sqrt(a: Tensor) -> Tensor:
    out = Tensor(np.sqrt(a.data), _parents=(a,))
    if _requires(a):
        def bwd(g):
            # subgradient 0 at the origin: sqrt has no finite derivative
            # there and 0/0 must not poison the rest of the graph
            denom = 2.0 * out.data
            safe = np.where(denom != 0, denom, 1.0)
            _accum(a, np.where(denom != 0, g / safe, 0.0))
        out._backward = bwd
    return out


def sigmoid(a: Tensor) -> Tensor:
    """Numerically stable logistic; never overflows in float32."""
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(out_data.astype(x.dtype), _parents=(a,))
    if _requires(a):
        out._backward = lambda g: _accum(a, g * out.data * (1.0 - out.data))
    return out


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor) with a constant floor; gradient passes where a > floor."""
    out = Tensor(np.maximum(a.data, floor), _parents=(a,))
    if _requires(a):
        mask = (a.data > floor).astype(a.data.dtype)
        out._backward = lambda g: _accum(a, g * mask)
    return out


# -- shape ------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in (shape if isinstance(shape, Iterable) else (shape,)))
    out = Tensor(a.data.reshape(shape), _parents=(a,))
    if _requires(a):
        out._backward = lambda g: _accum(a, g.reshape(a.shape))
    return out


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit broadcast. Backward sums over the expanded axes."""
    shape = tuple(int(s) for s in shape)
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError as e:
        raise TensorError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from e
    out = Tensor(np.ascontiguousarray(data), _parents=(a,))
    if _requires(a):
        in_shape = a.shape
        def bwd(g):
            grad = g
            extra = grad.ndim - len(in_shape)
            if extra:
                grad = grad.sum(axis=tuple(range(extra)))
            axes = tuple(i for i, s in enumerate(in_shape) if s == 1 and grad.shape[i] != 1)
            if axes:
                grad = grad.sum(axis=axes, keepdims=True)
            _accum(a, grad.reshape(in_shape))
        out._backward = bwd
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise TensorError("concat: empty input list")
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise TensorError(f"concat: mixed dtypes {sorted(d.name for d in dtypes)}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors))
    if _requires(*tensors):
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def bwd(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, g[tuple(sl)])
        out._backward = bwd
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise TensorError("stack: empty input list")
    out = Tensor(np.stack([t.data for t in tensors], axis=axis), _parents=tuple(tensors))
    if _requires(*tensors):
        def bwd(g):
            for i, t in enumerate(tensors):
                _accum(t, np.take(g, i, axis=axis))
        out._backward = bwd
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """A contiguous slice [start, start+length) along one axis."""
    ax = axis % a.ndim
    if start < 0 or start + length > a.shape[ax]:
        raise TensorError(f"narrow: [{start}, {start+length}) out of range for axis {ax} of {a.shape}")
    sl = [slice(None)] * a.ndim
    sl[ax] = slice(start, start + length)
    out = Tensor(a.data[tuple(sl)].copy(), _parents=(a,))
    if _requires(a):
        def bwd(g):
            grad = np.zeros_like(a.data)
            grad[tuple(sl)] = g
            _accum(a, grad)
        out._backward = bwd
    return out


def take(a: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gather rows along an axis by integer indices (constants)."""
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(np.take(a.data, idx, axis=axis), _parents=(a,))
    if _requires(a):
        ax = axis % a.ndim
        def bwd(g):
            grad = np.zeros_like(a.data)
            sl = [slice(None)] * a.ndim
            sl[ax] = idx
            np.add.at(grad, tuple(sl), g)
            _accum(a, grad)
        out._backward = bwd
    return out


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise TensorError(f"permute: {axes} is not a permutation of {a.ndim} axes")
    out = Tensor(np.ascontiguousarray(np.transpose(a.data, axes)), _parents=(a,))
    if _requires(a):
        inv = np.argsort(axes)
        out._backward = lambda g: _accum(a, np.transpose(g, inv))
    return out


def absolute(a: Tensor) -> Tensor:
    """|a| with subgradient 0 at the kink."""
    return add(relu(a), relu(neg(a)))


# -- reductions -------------------------------------------------------


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = tuple(a % ndim for a in axes)
    if len(set(out)) != len(out):
        raise TensorError(f"reduce: duplicate axes {axes}")
    return out


def reduce_sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes_t = _norm_axes(axes, a.ndim)
    if a.size == 0:
        raise TensorError("reduce: empty tensor")
    out = Tensor(a.data.sum(axis=axes_t, keepdims=keepdims), _parents=(a,))
    if _requires(a):
        def bwd(g):
            grad = g
            if not keepdims:
                for ax in sorted(axes_t):
                    grad = np.expand_dims(grad, ax)
            _accum(a, np.broadcast_to(grad, a.shape).copy())
        out._backward = bwd
    return out


def reduce_mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes_t = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes_t])) if a.ndim else 1
    if count == 0 or a.size == 0:
        raise TensorError("reduce: empty reduction")
    s = reduce_sum(a, axes, keepdims)
    return mul(s, Tensor(np.asarray(1.0 / count, dtype=a.dtype)))

def reduce_max(a: Tensor, axis: int | None = None) -> Tensor:
    """Max over the whole tensor (axis=None) or one axis.

    Backward routes the gradient to the first argmax only, which keeps the
    rule deterministic under ties.
    """
    if a.size == 0:
        raise TensorError("reduce: empty tensor")
    if axis is None:
        out = Tensor(a.data.max(), _parents=(a,))
        if _requires(a):
            idx = np.unravel_index(int(np.argmax(a.data)), a.shape)
            def bwd(g):
                grad = np.zeros_like(a.data)
                grad[idx] = g
                _accum(a, grad)
            out._backward = bwd
        return out
    ax = axis % a.ndim
    out = Tensor(a.data.max(axis=ax), _parents=(a,))
    if _requires(a):
        idx = np.argmax(a.data, axis=ax)
        def bwd(g):
            grad = np.zeros_like(a.data)
            np.put_along_axis(grad, np.expand_dims(idx, ax), np.expand_dims(g, ax), axis=ax)
            _accum(a, grad)
        out._backward = bwd
    return out


# -- linear algebra / conv --------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise TensorError(f"matmul: expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise TensorError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise TensorError(f"matmul: dtype mismatch {a.dtype.name} vs {b.dtype.name}")
    out = Tensor(a.data @ b.data, _parents=(a, b))
    if _requires(a, b):
        def bwd(g):
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        out._backward = bwd
    return out


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Direct 2-d convolution (cross-correlation) on a [C_in, H, W] input.

    Kernel is [C_out, C_in, k, k] with odd k. Output spatial extents are
    floor((H + 2*pad - k)/stride) + 1.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise TensorError(f"conv2d: input must be [C,H,W] and kernel [O,I,k,k], got {x.shape}, {w.shape}")
    cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if kh != kw or kh % 2 == 0:
        raise TensorError(f"conv2d: kernel must be square with odd size, got {kh}x{kw}")
    if cin != cin_w:
        raise TensorError(f"conv2d: channel mismatch, input {cin} vs kernel {cin_w}")
    if x.dtype != w.dtype:
        raise TensorError(f"conv2d: dtype mismatch {x.dtype.name} vs {w.dtype.name}")
    if h + 2 * pad < kh or wd + 2 * pad < kw:
        raise TensorError(f"conv2d: padded input {h+2*pad}x{wd+2*pad} smaller than kernel {kh}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise TensorError(f"conv2d: non-positive output extent {ho}x{wo}")

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    out_data = np.zeros((cout, ho, wo), dtype=x.dtype)
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[:, dy : dy + stride * ho : stride, dx : dx + stride * wo : stride]
            out_data += np.tensordot(w.data[:, :, dy, dx], patch, axes=(1, 0))
    if bias is not None:
        if bias.shape != (cout,):
            raise TensorError(f"conv2d: bias shape {bias.shape} != ({cout},)")
        out_data += bias.data[:, None, None]

    parents = (x, w) if bias is None else (x, w, bias)
    out = Tensor(out_data, _parents=parents)
    if _requires(*parents):
        def bwd(g):
            gx = np.zeros_like(xp)
            gw = np.zeros_like(w.data)
            for dy in range(kh):
                for dx in range(kw):
                    patch = xp[:, dy : dy + stride * ho : stride, dx : dx + stride * wo : stride]
                    gw[:, :, dy, dx] = np.tensordot(g, patch, axes=([1, 2], [1, 2]))
                    gx[:, dy : dy + stride * ho : stride, dx : dx + stride * wo : stride] += np.tensordot(
                        w.data[:, :, dy, dx], g, axes=(0, 0)
                    )
            _accum(w, gw)
            _accum(x, gx[:, pad : pad + h, pad : pad + wd] if pad else gx)
            if bias is not None:
                _accum(bias, g.sum(axis=(1, 2)))
        out._backward = bwd
    return out


def bilinear_sample(fmap: Tensor, ys: np.ndarray, xs: np.ndarray) -> Tensor:
    """Bilinear reads of a [C, H, W] map at fractional (y, x) points.

    Coordinates are constants (no gradient flows to them); gradient w.r.t.
    the map scatter-adds into the four corner cells of every sample.
    Out-of-range points are clamped to the border, matching the usual
    RoI-align edge handling.
    """
    if fmap.ndim != 3:
        raise TensorError(f"bilinear_sample: map must be [C,H,W], got {fmap.shape}")
    c, h, w = fmap.shape
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0, h - 1)
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(fmap.dtype)
    fx = (xs - x0).astype(fmap.dtype)

    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx

    d = fmap.data
    out_data = (
        d[:, y0, x0] * w00 + d[:, y0, x1] * w01 + d[:, y1, x0] * w10 + d[:, y1, x1] * w11
    )
    out = Tensor(out_data, _parents=(fmap,))
    if _requires(fmap):
        def bwd(g):
            gm = np.zeros_like(d)
            for yy, xx, ww in ((y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)):
                np.add.at(gm, (slice(None), yy, xx), g * ww)
            _accum(fmap, gm)
        out._backward = bwd
    return out


# -- backward pass ----------------------------------------------------

# One gradient table per thread: independent graphs may be traversed by
# independent threads, but a single graph is single-writer by contract.
_TLS = threading.local()


def _accum(t: Tensor, g: np.ndarray):
    grads: dict[int, np.ndarray] = _TLS.grads
    g = np.asarray(g, dtype=t.dtype)
    key = id(t)
    if key in grads:
        grads[key] = grads[key] + g
    else:
        grads[key] = g


def backward(loss: Tensor) -> dict[Tensor, Tensor]:
    """Reverse-mode gradients of a scalar loss for every trainable leaf.

    Returns a map {leaf tensor -> gradient tensor}; also mirrors each
    gradient onto ``leaf.grad`` as a numpy array. Raises if the loss is not
    scalar or is detached from any graph.
    """
    if loss.data.size != 1:
        raise TensorError(f"backward: loss must be scalar, got shape {loss.shape}")

    # Nodes without a backward closure are gradient sinks; their parents are
    # unreachable by definition, so traversal stops there.
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._backward is not None:
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    _TLS.grads = grads
    try:
        for node in reversed(topo):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            node._backward(g)

        result: dict[Tensor, Tensor] = {}
        for node in topo:
            if node.requires_grad and node._backward is None:
                g = grads.get(id(node))
                if g is None:
                    g = np.zeros_like(node.data)
                node.grad = g
                result[node] = Tensor(g)
    finally:
        _TLS.grads = None
    if not result:
        raise TensorError("backward: loss is not connected to any trainable leaf")
    return result


# -- random streams ---------------------------------------------------


class Rng:
    """A deterministic, seedable random stream (counter-based Philox core).

    Distinct seeds give statistically independent streams, so weight init,
    noise sampling, and episode sampling can each own one and be varied in
    isolation. Identical seed + identical call sequence reproduces the
    stream exactly.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def normal(self, shape=(), dtype=DEFAULT_DTYPE) -> np.ndarray:
        return self._gen.standard_normal(size=shape, dtype=np.float64).astype(dtype)

    def uniform(self, lo: float, hi: float, shape=()) -> np.ndarray:
        if not lo < hi:
            raise TensorError(f"uniform: requires lo < hi, got [{lo}, {hi})")
        return self._gen.uniform(lo, hi, size=shape)

    def integers(self, lo: int, hi: int, shape=None) -> np.ndarray | int:
        out = self._gen.integers(lo, hi, size=shape)
        return out if shape is not None else int(out)

    def choice(self, n: int, p: np.ndarray | None = None) -> int:
        return int(self._gen.choice(n, p=p))

    def shuffle(self, items: list) -> None:
        self._gen.shuffle(items)

    def spawn(self, stream: int) -> "Rng":
        """An independent child stream; deterministic in (seed, stream)."""
        return Rng((self.seed * 0x9E3779B97F4A7C15 + stream) % (1 << 63))

    def state(self):
        return self._gen.bit_generator.state

    def set_state(self, state) -> None:
        self._gen.bit_generator.state = state

    def clone(self) -> "Rng":
        c = Rng(self.seed)
        c.set_state(self.state())
        return c


def rng_normal(rng: Rng, shape, dtype=DEFAULT_DTYPE) -> Tensor:
    """I.i.d. standard normal samples as a constant tensor."""
    return Tensor(rng.normal(shape, dtype=dtype))


def rng_uniform(rng: Rng, lo: float, hi: float, shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape).astype(dtype))


# -- gradcheck hooks ---------------------------------------------------


class corrupt_backward:
    """Context manager that deliberately breaks one backward rule.

    Exists so the gradient-check harness can prove it detects a wrong
    gradient (negative control). Never active outside that harness.
    """

    def __init__(self, op: str, scale: float = 1.01):
        self.op = op
        self.scale = scale

    def __enter__(self):
        _BACKWARD_CORRUPTION[self.op] = self.scale
        return self

    def __exit__(self, *exc):
        _BACKWARD_CORRUPTION.pop(self.op, None)
        return False
