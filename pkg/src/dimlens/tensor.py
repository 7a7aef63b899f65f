"""Dense float64 tensors with a tape-based reverse-mode gradient engine.

The primitive set is closed and small: exactly the operations the stage-2
networks and losses need.  Ops record onto the innermost active GradTape
(per-thread); with no tape active they are plain numpy calls.  Tensors are
treated as immutable once created — ops always return new tensors — except
for trainable parameters, which the optimizer rebinds between tape lifetimes.

Broadcasting is deliberately not supported beyond scalar-tensor (`scale`,
`add_scalar`) and the explicit `bias_add`; mismatched shapes raise.
"""

import threading

import numpy as np

from .backend import kernels

_tapes = threading.local()


def _tape_stack():
    if not hasattr(_tapes, "stack"):
        _tapes.stack = []
    return _tapes.stack


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._grad_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class GradTape:
    """Records op order for one forward pass; single-threaded by contract."""

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self

    @staticmethod
    def current():
        stack = _tape_stack()
        return stack[-1] if stack else None

    def backward(self, loss: Tensor):
        """Accumulate chain-rule gradients into every reachable leaf."""
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        recorded = set(map(id, self._nodes))
        if id(loss) not in recorded:
            raise ValueError("loss is not recorded on this tape")
        for node in self._nodes:
            node.grad = None
            for p in node._parents:
                if id(p) not in recorded:
                    p.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            if node.grad is None or node._grad_fn is None:
                continue
            grads = node._grad_fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def backward(tape: GradTape, loss: Tensor):
    tape.backward(loss)


def _record(data, parents, grad_fn) -> Tensor:
    out = Tensor(data)
    tape = GradTape.current()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
        tape._nodes.append(out)
    return out


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    return _record(a.data * b.data, (a, b),
                   lambda g: (g * b.data, g * a.data))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("div", a, b)
    return _record(a.data / b.data, (a, b),
                   lambda g: (g / b.data, -g * a.data / (b.data * b.data)))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(x.data * c, (x,), lambda g: (g * c,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(x.data + c, (x,), lambda g: (g,))


def abs_(x: Tensor) -> Tensor:
    return _record(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def silu(x: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-x.data))
    return _record(x.data * sig, (x,),
                   lambda g: (g * sig * (1.0 + x.data * (1.0 - sig)),))


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Per-channel bias on an NCHW tensor."""
    if x.data.ndim != 4 or b.data.ndim != 1 or b.data.shape[0] != x.data.shape[1]:
        raise ValueError(
            f"bias_add: need NCHW x and bias of length C={x.data.shape[1] if x.data.ndim == 4 else '?'}, "
            f"got x {x.data.shape}, bias {b.data.shape}")
    return _record(x.data + b.data[None, :, None, None], (x, b),
                   lambda g: (g, g.sum(axis=(0, 2, 3))))


# ---------------------------------------------------------------------------
# linear algebra / reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    return _record(a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


def transpose2d(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ValueError(f"transpose2d: expected 2-d tensor, got shape {x.data.shape}")
    return _record(x.data.T.copy(), (x,), lambda g: (g.T,))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = x.data.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def sum_all(x: Tensor) -> Tensor:
    return _record(np.array(x.data.sum()), (x,),
                   lambda g: (np.full_like(x.data, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _record(np.array(x.data.mean()), (x,),
                   lambda g: (np.full_like(x.data, float(g) / n),))


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor; every output row sums to 1."""
    if x.data.ndim != 2:
        raise ValueError(f"softmax_rows: expected 2-d tensor, got shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return _record(s, (x,), grad_fn)


def concat_channels(tensors) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat_channels: empty input list")
    base = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != 4 or s[0] != base[0] or s[2:] != base[2:]:
            raise ValueError(f"concat_channels: incompatible shapes {base} vs {s}")
    sizes = [t.data.shape[1] for t in tensors]
    edges = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(sizes)))

    return _record(np.concatenate([t.data for t in tensors], axis=1), tensors, grad_fn)


# ---------------------------------------------------------------------------
# spatial


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError(f"upsample_nearest: expected NCHW, got shape {x.data.shape}")
    f = int(factor)
    out = x.data.repeat(f, axis=2).repeat(f, axis=3)

    def grad_fn(g):
        n, c, h, w = x.data.shape
        return (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)

    return _record(out, (x,), grad_fn)


def downsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError(f"downsample_nearest: expected NCHW, got shape {x.data.shape}")
    f = int(factor)
    out = x.data[:, :, ::f, ::f].copy()

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[:, :, ::f, ::f] = g
        return (gx,)

    return _record(out, (x,), grad_fn)


def conv2d(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with an FCkk kernel stack."""
    if x.data.ndim != 4:
        raise ValueError(f"conv2d: input must be NCHW, got shape {x.data.shape}")
    if k.data.ndim != 4:
        raise ValueError(f"conv2d: kernel must be [F,C,kh,kw], got shape {k.data.shape}")
    n, c, h, w = x.data.shape
    f, ck, kh, kw = k.data.shape
    if ck != c:
        raise ValueError(f"conv2d: kernel expects {ck} input channels, input has {c}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(
            f"conv2d: kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding}")
    stride, padding = int(stride), int(padding)
    out = kernels().conv2d_forward(x.data, k.data, stride, padding)

    def grad_fn(g):
        return kernels().conv2d_backward(x.data, k.data, stride, padding, g)

    return _record(out, (x, k), grad_fn)


def depthwise_conv2d(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel cross-correlation: kernel [C,kh,kw], one filter per channel."""
    if x.data.ndim != 4:
        raise ValueError(f"depthwise_conv2d: input must be NCHW, got shape {x.data.shape}")
    if k.data.ndim != 3:
        raise ValueError(f"depthwise_conv2d: kernel must be [C,kh,kw], got shape {k.data.shape}")
    n, c, h, w = x.data.shape
    ck, kh, kw = k.data.shape
    if ck != c:
        raise ValueError(f"depthwise_conv2d: kernel has {ck} channels, input has {c}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(
            f"depthwise_conv2d: kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding}")
    stride, padding = int(stride), int(padding)
    out = kernels().depthwise_forward(x.data, k.data, stride, padding)

    def grad_fn(g):
        return kernels().depthwise_backward(x.data, k.data, stride, padding, g)

    return _record(out, (x, k), grad_fn)


def cross_attention(query: Tensor, key: Tensor, value: Tensor) -> Tensor:
    """softmax(query @ key^T / sqrt(D)) @ value for 2-d [tokens, D] operands."""
    if query.data.ndim != 2 or key.data.ndim != 2 or value.data.ndim != 2:
        raise ValueError("cross_attention: query/key/value must be 2-d [tokens, dim]")
    d = query.data.shape[1]
    if key.data.shape[1] != d:
        raise ValueError(
            f"cross_attention: query dim {d} != key dim {key.data.shape[1]}")
    if value.data.shape[0] != key.data.shape[0]:
        raise ValueError(
            f"cross_attention: key has {key.data.shape[0]} tokens, "
            f"value has {value.data.shape[0]}")
    logits = scale(matmul(query, transpose2d(key)), 1.0 / np.sqrt(d))
    return matmul(softmax_rows(logits), value)


# ---------------------------------------------------------------------------
# numerical differentiation oracle


def finite_diff_grad(f, x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar-valued f at x, elementwise."""
    if h <= 0:
        raise ValueError("finite_diff_grad: step h must be positive")
    base = x.data
    grad = np.empty_like(base)
    flat = grad.ravel()
    for i in range(base.size):
        bumped = base.copy().ravel()
        bumped[i] += h
        hi = float(f(Tensor(bumped.reshape(base.shape))).data)
        bumped[i] -= 2 * h
        lo = float(f(Tensor(bumped.reshape(base.shape))).data)
        flat[i] = (hi - lo) / (2.0 * h)
    return grad
