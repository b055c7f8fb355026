"""Small reverse-mode autodiff engine over float64 numpy arrays.

Every op builds its output eagerly and, when any input tracks gradients,
records a closure that pushes the output gradient back into its parents.
``Tensor.backward`` replays those closures in reverse topological order.

Shapes are never broadcast implicitly (scalar multiplication aside); ops
that need a broadcast say so in their name (``repeat_rows``) and reject
anything else with :class:`DimensionError`.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "DimensionError", "NumericError", "no_grad", "is_grad_enabled",
    "tape", "add", "sub", "mul", "scale", "neg", "matmul", "transpose",
    "reshape", "permute", "concat", "stack", "take", "repeat_rows", "sum_all", "mean_all",
    "relu", "tanh", "sigmoid", "fully_connected", "conv2d", "channel_norm",
    "embedding", "gru_cell", "masked_blend", "additive_attention",
    "softmax", "softmax_cross_entropy", "bce_with_logits", "mse", "dropout",
    "grad_check",
]

SIGMOID_CLAMP = 40.0


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NumericError(FloatingPointError):
    """A NaN or infinity showed up where the math forbids it."""


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on this thread (inference)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "_pending")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable | None = None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self._pending: list | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def _accum_outer(self, a: np.ndarray, b: np.ndarray, cols: tuple[int, int] | None = None) -> None:
        """Add ``a.T @ b`` to the gradient (or to its column block ``cols``).

        Leaves defer the product: a weight used at every timestep of a
        recurrence collects its (input, delta) pairs and does one large
        matmul per column block when the backward pass finishes.
        """
        if self._parents:
            full = a.T @ b
            if cols is not None:
                block = np.zeros_like(self.data)
                block[:, cols[0]:cols[1]] = full
                full = block
            self._accum(full)
            return
        if self._pending is None:
            self._pending = {}
        self._pending.setdefault(cols, []).append((a, b))

    def _flush(self) -> None:
        if not self._pending:
            return
        pending, self._pending = self._pending, None
        total = np.zeros_like(self.data)
        for cols, pairs in pending.items():
            a = np.concatenate([p[0] for p in pairs], axis=0)
            b = np.concatenate([p[1] for p in pairs], axis=0)
            if cols is None:
                total += a.T @ b
            else:
                total[:, cols[0]:cols[1]] += a.T @ b
        self._accum(total)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every tracked leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = tape(self)
        self._accum(np.asarray(grad, dtype=np.float64).reshape(self.shape))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior grads are not needed once propagated
                if node._parents:
                    node.grad = None
        for node in order:
            if not node._parents:
                node._flush()

    # operator sugar; all of these go through the checked functional ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    @property
    def T(self):
        return transpose(self)


def tape(root: Tensor) -> list[Tensor]:
    """Recorded nodes reachable from ``root`` in topological order (parents first).

    Iterative DFS: decoder graphs are far deeper than Python's recursion limit.
    """
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, op=op)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(-g)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)

    return _make(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        a._accum(g * c)

    return _make(a.data * c, (a,), backward, "scale")


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def backward(g):
        x._accum(g * mask)

    return _make(out, (x,), backward, "relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        x._accum(g * (1.0 - out * out))

    return _make(out, (x,), backward, "tanh")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(v, -SIGMOID_CLAMP, SIGMOID_CLAMP)))


def sigmoid(x: Tensor) -> Tensor:
    clamped = np.abs(x.data) > SIGMOID_CLAMP
    out = _sigmoid(x.data)

    def backward(g):
        x._accum(np.where(clamped, 0.0, g * out * (1.0 - out)))

    return _make(out, (x,), backward, "sigmoid")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``p`` is 0."""
    if rng is None or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward(g):
        x._accum(g * keep)

    return _make(x.data * keep, (x,), backward, "dropout")


# ---------------------------------------------------------------- structural

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum_outer(a.data, g)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")

    def backward(g):
        a._accum(g.T)

    return _make(a.data.T.copy(), (a,), backward, "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as err:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from err

    def backward(g):
        a._accum(g.reshape(a.shape))

    return _make(out, (a,), backward, "reshape")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accum(g.transpose(inverse))

    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), backward, "permute")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as err:
        raise DimensionError(f"concat: incompatible shapes {[p.shape for p in parts]}") from err
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, sizes, axis=axis)):
            if p.requires_grad:
                p._accum(piece)

    return _make(out, parts, backward, "concat")


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([p.data for p in parts], axis=axis)

    def backward(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                p._accum(np.take(g, i, axis=axis))

    return _make(out, parts, backward, "stack")


def take(a: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing with a scatter-add backward."""
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        a._accum(full)

    return _make(np.array(out, copy=True), (a,), backward, "take")


def repeat_rows(a: Tensor, n: int) -> Tensor:
    """Tile a ``[..., d]`` tensor along a new second-to-last axis: ``[..., n, d]``."""
    out = np.repeat(a.data[..., None, :], n, axis=-2)

    def backward(g):
        a._accum(g.sum(axis=-2))

    return _make(out, (a,), backward, "repeat_rows")


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        a._accum(np.full(a.shape, float(g)))

    return _make(np.array(a.data.sum()), (a,), backward, "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        a._accum(np.full(a.shape, float(g) / n))

    return _make(np.array(a.data.mean()), (a,), backward, "mean")


# ---------------------------------------------------------------- layers

def fully_connected(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x[..., d_in] @ W[d_in, d_out] + b[d_out]``."""
    if W.ndim != 2 or x.shape[-1] != W.shape[0] or (b is not None and b.shape != (W.shape[1],)):
        raise DimensionError(
            f"fully_connected: x {x.shape}, W {W.shape}, b {None if b is None else b.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, W.shape[0])
    out = x2 @ W.data
    if b is not None:
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def backward(g):
        g2 = g.reshape(-1, W.shape[1])
        if x.requires_grad:
            x._accum((g2 @ W.data.T).reshape(x.shape))
        if W.requires_grad:
            W._accum_outer(x2, g2)
        if b is not None and b.requires_grad:
            b._accum(g2.sum(axis=0))

    return _make(out.reshape(lead + (W.shape[1],)), parents, backward, "fc")


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding: index outside vocabulary of {table.shape[0]}")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accum(full)

    return _make(table.data[idx], (table,), backward, "embedding")


def _conv_windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(-2, -1))
    return win[:, :, ::stride, ::stride]


def conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: int = 0, bias: Tensor | None = None) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is ``[Cin, H, W]`` or batched ``[N, Cin, H, W]``; ``k`` is
    ``[Cout, Cin, kh, kw]``.
    """
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or k.ndim != 4:
        raise DimensionError(f"conv2d: input {x.shape}, kernel {k.shape}")
    xd = x.data if batched else x.data[None]
    n, cin, h, w = xd.shape
    cout, kcin, kh, kw = k.shape
    if kcin != cin:
        raise DimensionError(f"conv2d: input has {cin} channels, kernel expects {kcin}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias {bias.shape} for {cout} output channels")
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    win = _conv_windows(xp, kh, kw, stride)  # n, cin, ho, wo, kh, kw
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    kmat = k.data.reshape(cout, cin * kh * kw)
    out = (cols @ kmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, k) if bias is None else (x, k, bias)

    def backward(g):
        g4 = g if batched else g[None]
        gmat = g4.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        if k.requires_grad:
            k._accum((gmat.T @ cols).reshape(k.shape))
        if bias is not None and bias.requires_grad:
            bias._accum(gmat.sum(axis=0))
        if x.requires_grad:
            dcols = (gmat @ kmat).reshape(n, ho, wo, cin, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
            x._accum(gx if batched else gx[0])

    return _make(out if batched else out[0], parents, backward, "conv2d")


def channel_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Parameter-free normalization across the channel axis (axis -3) at each position."""
    ax = x.ndim - 3
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=ax, keepdims=True) + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=ax, keepdims=True)
        gy = (g * y).mean(axis=ax, keepdims=True)
        x._accum(inv * (g - gm - y * gy))

    return _make(y, (x,), backward, "channel_norm")


# ---------------------------------------------------------------- recurrent

def gru_cell(x: Tensor, h: Tensor, W: Tensor, U: Tensor, b: Tensor, step: int | None = None) -> Tensor:
    """One GRU step, gates packed ``[update | reset | candidate]`` along the last axis.

    z = σ(xW_z + hU_z + b_z), r = σ(xW_r + hU_r + b_r),
    h~ = tanh(xW_h + (r⊙h)U_h + b_h), h' = (1 − z)⊙h + z⊙h~.
    ``x``/``h`` may be vectors or ``[batch, d]`` matrices.
    """
    d_h = h.shape[-1]
    if (W.shape != (x.shape[-1], 3 * d_h) or U.shape != (d_h, 3 * d_h) or b.shape != (3 * d_h,)
            or x.shape[:-1] != h.shape[:-1]):
        raise DimensionError(
            f"gru_cell: x {x.shape}, h {h.shape}, W {W.shape}, U {U.shape}, b {b.shape}")
    xd, hd = x.data, h.data
    xw = xd @ W.data + b.data
    hu = hd @ U.data[:, :2 * d_h]
    z = _sigmoid(xw[..., :d_h] + hu[..., :d_h])
    r = _sigmoid(xw[..., d_h:2 * d_h] + hu[..., d_h:])
    rh = r * hd
    cand = np.tanh(xw[..., 2 * d_h:] + rh @ U.data[:, 2 * d_h:])
    out = hd + z * (cand - hd)
    if not np.all(np.isfinite(out)):
        where = "" if step is None else f" at step {step}"
        raise NumericError(f"gru_cell: non-finite state{where}")

    def backward(g):
        dz = g * (cand - hd)
        da_h = g * z * (1.0 - cand * cand)
        d_rh = da_h @ U.data[:, 2 * d_h:].T
        dr = d_rh * hd
        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        da = np.concatenate([da_z, da_r, da_h], axis=-1)
        da_zr = da[..., :2 * d_h]
        x2 = xd.reshape(-1, xd.shape[-1])
        h2 = hd.reshape(-1, d_h)
        da2 = da.reshape(-1, 3 * d_h)
        if W.requires_grad:
            W._accum_outer(x2, da2)
        if b.requires_grad:
            b._accum(da2.sum(axis=0))
        if U.requires_grad:
            # gate columns multiply h, candidate columns multiply r*h
            U._accum_outer(h2, da2[:, :2 * d_h], cols=(0, 2 * d_h))
            U._accum_outer(rh.reshape(-1, d_h), da2[:, 2 * d_h:], cols=(2 * d_h, 3 * d_h))
        if x.requires_grad:
            x._accum(da @ W.data.T)
        if h.requires_grad:
            h._accum(g * (1.0 - z) + d_rh * r + da_zr @ U.data[:, :2 * d_h].T)

    return _make(out, (x, h, W, U, b), backward, "gru_cell")


def masked_blend(new: Tensor, old: Tensor, mask: np.ndarray) -> Tensor:
    """Per-row select: ``mask * new + (1 - mask) * old`` with a 0/1 row mask.

    Rows are copied, not blended arithmetically, so a masked row is exactly ``old``.
    """
    _same_shape(new, old, "masked_blend")
    keep = np.asarray(mask, dtype=bool).reshape(new.shape[:-1] + (1,))
    out = np.where(keep, new.data, old.data)

    def backward(g):
        if new.requires_grad:
            new._accum(np.where(keep, g, 0.0))
        if old.requires_grad:
            old._accum(np.where(keep, 0.0, g))

    return _make(out, (new, old), backward, "masked_blend")


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(v, axis=axis, keepdims=True)
    e = np.exp(v - m)
    return e / e.sum(axis=axis, keepdims=True)


def additive_attention(query: Tensor, keys: Tensor, v: Tensor, values: Tensor,
                       mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Content-based additive attention.

    score[b, l] = v · tanh(query[b] + keys[b, l]); weights = softmax over valid l;
    context[b] = Σ_l weights[b, l] values[b, l].  ``query`` is ``[B, A]``, ``keys``
    ``[B, L, A]``, ``values`` ``[B, L, D]``, ``mask`` a boolean ``[B, L]``.
    Returns the context tensor and the (non-differentiable) weight matrix.
    """
    B, L, A = keys.shape
    if query.shape != (B, A) or v.shape != (A,) or values.shape[:2] != (B, L):
        raise DimensionError(
            f"attention: query {query.shape}, keys {keys.shape}, v {v.shape}, values {values.shape}")
    e = np.tanh(query.data[:, None, :] + keys.data)
    score = e @ v.data
    if mask is not None:
        score = np.where(mask, score, -np.inf)
    w = softmax(score, axis=1)
    ctx = np.einsum("bl,bld->bd", w, values.data)

    def backward(g):
        dw = np.einsum("bd,bld->bl", g, values.data)
        if values.requires_grad:
            values._accum(w[:, :, None] * g[:, None, :])
        ds = w * (dw - (w * dw).sum(axis=1, keepdims=True))
        if v.requires_grad:
            v._accum(np.einsum("bla,bl->a", e, ds))
        da = ds[:, :, None] * v.data * (1.0 - e * e)
        if query.requires_grad:
            query._accum(da.sum(axis=1))
        if keys.requires_grad:
            keys._accum(da)

    return _make(ctx, (query, keys, v, values), backward, "attention"), w


# ---------------------------------------------------------------- losses

def _log_softmax(v: np.ndarray) -> np.ndarray:
    m = np.max(v, axis=-1, keepdims=True)
    s = v - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, label) -> Tensor:
    """Mean negative log-likelihood; ``logits`` ``[K]`` with an int label, or ``[B, K]`` with B labels."""
    k = logits.shape[-1]
    labels = np.atleast_1d(np.asarray(label))
    if labels.dtype.kind not in "iu" or np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"softmax_cross_entropy: label {label!r} outside [0, {k})")
    lg = logits.data.reshape(-1, k)
    if lg.shape[0] != labels.size:
        raise DimensionError(f"softmax_cross_entropy: {lg.shape[0]} rows for {labels.size} labels")
    logp = _log_softmax(lg)
    rows = np.arange(labels.size)
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        logits._accum((float(g) / labels.size * d).reshape(logits.shape))

    return _make(np.array(loss), (logits,), backward, "cross_entropy")


def bce_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy from logits, in the overflow-free form."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != logits.shape:
        raise DimensionError(f"bce_with_logits: logits {logits.shape}, target {t.shape}")
    z = logits.data
    loss = (np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))).mean()

    def backward(g):
        logits._accum(float(g) / z.size * (_sigmoid(z) - t))

    return _make(np.array(loss), (logits,), backward, "bce")


def mse(a: Tensor, b) -> Tensor:
    b = _as_tensor(b)
    _same_shape(a, b, "mse")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        d = (2.0 * float(g) / n) * diff
        if a.requires_grad:
            a._accum(d)
        if b.requires_grad:
            b._accum(-d)

    return _make(np.array((diff * diff).mean()), (a, b), backward, "mse")


# ---------------------------------------------------------------- checking

def grad_check(f: Callable[..., Tensor], x: Tensor | Iterable[Tensor], eps: float = 1e-5,
               n_coords: int | None = None, seed: int = 0) -> float:
    """Largest relative disagreement between tape and central-difference gradients.

    ``f`` is called with the tensor(s) in ``x`` and must return a scalar.
    Error per coordinate is |g_fd − g_ad| / max(1, |g_fd|, |g_ad|).  With
    ``n_coords`` only that many seeded coordinates per tensor are probed,
    which is what makes checking a whole model affordable.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.zero_grad()
    out = f(*xs)
    if out.data.size != 1:
        raise ValueError(f"grad_check: f must be scalar-valued, got shape {out.shape}")
    out.backward()
    worst = 0.0
    for t in xs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        an = analytic.reshape(-1)
        coords = range(flat.size)
        if n_coords is not None and n_coords < flat.size:
            coords = np.random.default_rng(seed).choice(flat.size, size=n_coords, replace=False)
        with no_grad():
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                up = f(*xs).item()
                flat[i] = orig - eps
                down = f(*xs).item()
                flat[i] = orig
                fd = (up - down) / (2.0 * eps)
                err = abs(fd - an[i]) / max(1.0, abs(fd), abs(an[i]))
                worst = max(worst, err)
    return worst
