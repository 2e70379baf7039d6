"""Reverse-mode automatic differentiation over dense float64 arrays.

Operations run eagerly on numpy arrays. While a :class:`Tape` is active,
every operation whose inputs require gradients appends a node to it; the
tape is therefore already in topological order and :func:`backward` walks
it once in reverse.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable
from contextvars import ContextVar, Token
from dataclasses import dataclass
from typing import TYPE_CHECKING, Union
from typing_extensions import Self

import numpy as np
import numpy.typing as npt

from prdepth._errors import InvalidArgumentError, NonFiniteError

if TYPE_CHECKING:
    from collections.abc import Sequence

Array = npt.NDArray[np.float64]
Padding = int | tuple[int, int]
TensorLike = Union["Tensor", npt.ArrayLike]
BackwardFn = Callable[[Array], tuple[Array | None, ...]]

_ACTIVE_TAPE: ContextVar[Tape | None] = ContextVar("prdepth_active_tape", default=None)
_TAPE_IDS = itertools.count(1)


@dataclass(slots=True)
class _Node:
    index: int
    tape_id: int
    op: str
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


class Tensor:
    __slots__ = ("_node", "data", "grad", "name", "requires_grad")

    def __init__(
        self, data: npt.ArrayLike, *, requires_grad: bool = False, name: str | None = None
    ) -> None:
        self.data: Array = np.array(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._node: _Node | None = None

    @classmethod
    def _wrap(cls, data: Array) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = False
        out.name = None
        out._node = None
        return out

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
    def tape_id(self) -> int | None:
        return None if self._node is None else self._node.tape_id

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        if self.data.size != 1:
            msg = f"item() needs a single-element tensor, got shape {self.shape}"
            raise InvalidArgumentError(msg)
        return float(self.data.reshape(()))

    def numpy(self) -> Array:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: TensorLike) -> Tensor:
        return add(self, other)

    def __radd__(self, other: TensorLike) -> Tensor:
        return add(other, self)

    def __sub__(self, other: TensorLike) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: TensorLike) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: TensorLike) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: TensorLike) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: TensorLike) -> Tensor:
        return div(self, other)

    def __neg__(self) -> Tensor:
        return mul(self, -1.0)


class Tape:
    """Single-owner record of differentiable operations.

    Use as a context manager; operations executed inside the ``with`` block
    are recorded. With ``check_finite=True`` every recorded operation is
    checked for NaN/inf and raises :class:`NonFiniteError` on the spot.
    """

    def __init__(self, *, check_finite: bool = False) -> None:
        self.id = next(_TAPE_IDS)
        self.check_finite = check_finite
        self._nodes: list[_Node] = []
        self._tokens: list[Token[Tape | None]] = []

    def __enter__(self) -> Self:
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *_: object) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def ops(self) -> tuple[str, ...]:
        return tuple(node.op for node in self._nodes)

    def _record(
        self, op: str, out: Tensor, inputs: tuple[Tensor, ...], fn: BackwardFn
    ) -> None:
        index = len(self._nodes)
        for tensor in inputs:
            node = tensor._node  # ruff:ignore[private-member-access]
            if node is None:
                continue
            if node.tape_id != self.id:
                msg = f"{op}: input was recorded on a different tape"
                raise InvalidArgumentError(msg)
            assert node.index < index, "tape must stay topologically ordered"
        out.requires_grad = True
        out._node = _Node(index, self.id, op, out, inputs, fn)  # ruff:ignore[private-member-access]
        self._nodes.append(out._node)  # ruff:ignore[private-member-access]


def as_tensor(value: TensorLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=np.float64))  # ruff:ignore[private-member-access]


def parameter(data: npt.ArrayLike, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _emit(op: str, data: Array, inputs: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    out = Tensor._wrap(data)  # ruff:ignore[private-member-access]
    tape = _ACTIVE_TAPE.get()
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    if tape.check_finite and not np.all(np.isfinite(data)):
        msg = f"{op} produced non-finite values"
        raise NonFiniteError(msg)
    tape._record(op, out, inputs, fn)  # ruff:ignore[private-member-access]
    return out


def backward(
    tape: Tape, loss: Tensor, wrt: Sequence[Tensor] | None = None
) -> list[Array]:
    """Accumulate d(loss)/d(leaf) into the ``grad`` of every reachable leaf.

    Returns the accumulated gradients of ``wrt`` (zeros where unreachable).
    """
    if loss.size != 1:
        msg = f"backward needs a scalar loss, got shape {loss.shape}"
        raise InvalidArgumentError(msg)

    root = loss._node  # ruff:ignore[private-member-access]
    if root is None:
        if loss.requires_grad:
            seed = np.ones_like(loss.data)
            loss.grad = seed if loss.grad is None else loss.grad + seed
    else:
        if root.tape_id != tape.id:
            msg = "loss was not recorded on this tape"
            raise InvalidArgumentError(msg)
        pending: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(tape._nodes[: root.index + 1]):  # ruff:ignore[private-member-access]
            grad = pending.pop(id(node.output), None)
            if grad is None:
                continue
            for tensor, input_grad in zip(
                node.inputs, node.backward(grad), strict=True
            ):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if tensor._node is None:  # ruff:ignore[private-member-access]
                    tensor.grad = (
                        input_grad.copy() if tensor.grad is None else tensor.grad + input_grad
                    )
                else:
                    key = id(tensor)
                    previous = pending.get(key)
                    pending[key] = input_grad if previous is None else previous + input_grad

    if wrt is None:
        return []
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in wrt]


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        msg = f"{op}: shapes {a.shape} and {b.shape} do not broadcast"
        raise InvalidArgumentError(msg) from None


def add(a: TensorLike, b: TensorLike) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    _check_broadcast("add", x, y)

    def fn(g: Array) -> tuple[Array | None, ...]:
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return _emit("add", x.data + y.data, (x, y), fn)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", x, y)

    def fn(g: Array) -> tuple[Array | None, ...]:
        return _unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)

    return _emit("sub", x.data - y.data, (x, y), fn)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", x, y)

    def fn(g: Array) -> tuple[Array | None, ...]:
        return _unbroadcast(g * y.data, x.shape), _unbroadcast(g * x.data, y.shape)

    return _emit("mul", x.data * y.data, (x, y), fn)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    x, y = as_tensor(a), as_tensor(b)
    _check_broadcast("div", x, y)
    out = x.data / y.data

    def fn(g: Array) -> tuple[Array | None, ...]:
        return (
            _unbroadcast(g / y.data, x.shape),
            _unbroadcast(-g * out / y.data, y.shape),
        )

    return _emit("div", out, (x, y), fn)


def relu(a: TensorLike) -> Tensor:
    x = as_tensor(a)
    active = x.data > 0

    def fn(g: Array) -> tuple[Array | None, ...]:
        return (np.where(active, g, 0.0),)

    return _emit("relu", np.where(active, x.data, 0.0), (x,), fn)


def absolute(a: TensorLike) -> Tensor:
    x = as_tensor(a)

    def fn(g: Array) -> tuple[Array | None, ...]:
        return (g * np.sign(x.data),)

    return _emit("abs", np.abs(x.data), (x,), fn)


def scaled_tanh(a: TensorLike) -> Tensor:
    """``0.5 * tanh(x)``, bounded to (-0.5, 0.5)."""
    x = as_tensor(a)
    t = np.tanh(x.data)

    def fn(g: Array) -> tuple[Array | None, ...]:
        return (g * 0.5 * (1.0 - t * t),)

    return _emit("scaled_tanh", 0.5 * t, (x,), fn)


def reshape(a: TensorLike, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(a)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        msg = f"reshape: cannot view {x.shape} as {shape}"
        raise InvalidArgumentError(msg) from None

    def fn(g: Array) -> tuple[Array | None, ...]:
        return (g.reshape(x.shape),)

    return _emit("reshape", out, (x,), fn)


def detach(a: TensorLike) -> Tensor:
    """Same values, cut from the tape."""
    return Tensor._wrap(as_tensor(a).data)  # ruff:ignore[private-member-access]


def concat_channels(tensors: Sequence[TensorLike]) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    if not parts:
        msg = "concat_channels needs at least one tensor"
        raise InvalidArgumentError(msg)
    spatial = parts[0].shape[1:]
    for part in parts:
        if part.ndim != 3 or part.shape[1:] != spatial:
            msg = f"concat_channels: expected C x {spatial}, got {part.shape}"
            raise InvalidArgumentError(msg)
    bounds = np.cumsum([0, *(p.shape[0] for p in parts)])

    def fn(g: Array) -> tuple[Array | None, ...]:
        return tuple(g[lo:hi] for lo, hi in itertools.pairwise(bounds))

    return _emit("concat_channels", np.concatenate([p.data for p in parts]), parts, fn)


def softmax_channels(a: TensorLike) -> Tensor:
    x = as_tensor(a)
    e = np.exp(x.data - x.data.max(axis=0, keepdims=True))
    s = e / e.sum(axis=0, keepdims=True)

    def fn(g: Array) -> tuple[Array | None, ...]:
        return (s * (g - (g * s).sum(axis=0, keepdims=True)),)

    return _emit("softmax_channels", s, (x,), fn)


def max_channels(a: TensorLike) -> Tensor:
    x = as_tensor(a)
    idx = x.data.argmax(axis=0)[None]

    def fn(g: Array) -> tuple[Array | None, ...]:
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, idx, g[None], axis=0)
        return (grad,)

    return _emit("max_channels", np.take_along_axis(x.data, idx, axis=0)[0], (x,), fn)


def channel_dot(a: TensorLike, weights: npt.ArrayLike) -> Tensor:
    """``sum_c weights[c] * x[c]`` for a C x H x W tensor."""
    x = as_tensor(a)
    w = np.asarray(weights, dtype=np.float64)
    if x.ndim != 3 or w.shape != (x.shape[0],):
        msg = f"channel_dot: weights {w.shape} do not match tensor {x.shape}"
        raise InvalidArgumentError(msg)

    def fn(g: Array) -> tuple[Array | None, ...]:
        return (w[:, None, None] * g[None],)

    return _emit("channel_dot", np.tensordot(w, x.data, axes=(0, 0)), (x,), fn)


def _window_sum(data: Array, radius: int) -> Array:
    # Zero-filled shifts: windows shrink at the borders instead of padding.
    out = data.copy()
    for axis in (-2, -1):
        acc = out.copy()
        n = out.shape[axis]
        for shift in range(1, min(radius, n - 1) + 1):
            lo = [slice(None)] * out.ndim
            hi = [slice(None)] * out.ndim
            lo[axis] = slice(0, n - shift)
            hi[axis] = slice(shift, n)
            acc[tuple(lo)] += out[tuple(hi)]
            acc[tuple(hi)] += out[tuple(lo)]
        out = acc
    return out


def window_counts(height: int, width: int, radius: int) -> Array:
    return _window_sum(np.ones((height, width)), radius)


def box_mean(a: TensorLike, radius: int) -> Tensor:
    """Spatial average over (2r+1)^2 windows clipped to the image."""
    x = as_tensor(a)
    if x.ndim not in {2, 3}:
        msg = f"box_mean expects H x W or C x H x W, got {x.shape}"
        raise InvalidArgumentError(msg)
    if radius < 0:
        msg = f"box_mean radius must be >= 0, got {radius}"
        raise InvalidArgumentError(msg)
    counts = window_counts(x.shape[-2], x.shape[-1], radius)

    def fn(g: Array) -> tuple[Array | None, ...]:
        return (_window_sum(g / counts, radius),)

    return _emit("box_mean", _window_sum(x.data, radius) / counts, (x,), fn)


def mean(a: TensorLike, mask: npt.ArrayLike | None = None) -> Tensor:
    """Mean of all entries, or of the entries selected by a boolean mask.

    Unselected entries never reach the sum, so their values (and any NaN
    they hold) cannot influence the result.
    """
    x = as_tensor(a)
    if mask is None:
        count = x.size
        selected = np.ones(x.shape, dtype=bool)
    else:
        selected = np.asarray(mask, dtype=bool)
        if selected.shape != x.shape:
            msg = f"mean: mask shape {selected.shape} != tensor shape {x.shape}"
            raise InvalidArgumentError(msg)
        count = int(selected.sum())
    if count == 0:
        msg = "mean over an empty selection"
        raise InvalidArgumentError(msg)

    def fn(g: Array) -> tuple[Array | None, ...]:
        return (np.where(selected, g / count, 0.0),)

    total = np.where(selected, x.data, 0.0).sum()
    return _emit("mean", np.asarray(total / count), (x,), fn)


def cross_entropy_channels(
    logits: TensorLike, labels: npt.ArrayLike, mask: npt.ArrayLike
) -> Tensor:
    """Mean of ``-log softmax(l)[label]`` over masked pixels; labels are 1-based."""
    x = as_tensor(logits)
    target = np.asarray(labels)
    selected = np.asarray(mask, dtype=bool)
    if x.ndim != 3 or target.shape != x.shape[1:] or selected.shape != x.shape[1:]:
        msg = (
            f"cross_entropy_channels: logits {x.shape}, labels {target.shape}, "
            f"mask {selected.shape} disagree"
        )
        raise InvalidArgumentError(msg)
    count = int(selected.sum())
    if count == 0:
        msg = "cross entropy over an empty mask"
        raise InvalidArgumentError(msg)
    num = x.shape[0]
    if np.any(selected & ((target < 1) | (target > num))):
        msg = f"plane labels must lie in [1, {num}] on valid pixels"
        raise InvalidArgumentError(msg)

    idx = np.where(selected, target - 1, 0).astype(np.intp)[None]
    shifted = x.data - x.data.max(axis=0, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    nll = -np.take_along_axis(log_probs, idx, axis=0)[0]

    def fn(g: Array) -> tuple[Array | None, ...]:
        grad = np.exp(log_probs)
        np.put_along_axis(grad, idx, np.take_along_axis(grad, idx, axis=0) - 1.0, axis=0)
        return (grad * np.where(selected, g / count, 0.0)[None],)

    total = np.where(selected, nll, 0.0).sum()
    return _emit("cross_entropy_channels", np.asarray(total / count), (x,), fn)


def _split_padding(padding: Padding) -> tuple[int, int]:
    before, after = (padding, padding) if isinstance(padding, int) else padding
    if before < 0 or after < 0:
        msg = f"padding must be non-negative, got {padding!r}"
        raise InvalidArgumentError(msg)
    return before, after


def conv2d(
    a: TensorLike,
    weight: TensorLike,
    bias: TensorLike | None = None,
    *,
    stride: int = 1,
    padding: Padding = 0,
) -> Tensor:
    """Cross-correlation of a C_in x H x W map with C_out x C_in x k x k weights.

    ``padding`` is zero fill applied to both spatial axes, either symmetric
    or as a ``(before, after)`` pair.
    """
    x, w = as_tensor(a), as_tensor(weight)
    b = None if bias is None else as_tensor(bias)
    if x.ndim != 3 or w.ndim != 4:
        msg = f"conv2d expects C x H x W input and 4-d weight, got {x.shape}, {w.shape}"
        raise InvalidArgumentError(msg)
    c_out, c_in, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        msg = f"conv2d kernel must be square with odd size, got {k}x{k2}"
        raise InvalidArgumentError(msg)
    if x.shape[0] != c_in:
        msg = f"conv2d: input has {x.shape[0]} channels, weight expects {c_in}"
        raise InvalidArgumentError(msg)
    if b is not None and b.shape != (c_out,):
        msg = f"conv2d: bias shape {b.shape} != ({c_out},)"
        raise InvalidArgumentError(msg)
    if stride < 1:
        msg = f"stride must be >= 1, got {stride}"
        raise InvalidArgumentError(msg)
    before, after = _split_padding(padding)
    _, h, wd = x.shape
    span_h, span_w = h + before + after - k, wd + before + after - k
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        msg = (
            f"conv2d output size is not integral for input {h}x{wd}, kernel {k}, "
            f"stride {stride}, padding {padding!r}"
        )
        raise InvalidArgumentError(msg)
    ho, wo = span_h // stride + 1, span_w // stride + 1

    xp = np.pad(x.data, ((0, 0), (before, after), (before, after)))
    windows = [
        (
            ky,
            kx,
            (
                slice(None),
                slice(ky, ky + stride * (ho - 1) + 1, stride),
                slice(kx, kx + stride * (wo - 1) + 1, stride),
            ),
        )
        for ky in range(k)
        for kx in range(k)
    ]
    out = np.zeros((c_out, ho, wo))
    for ky, kx, sl in windows:
        out += np.tensordot(w.data[:, :, ky, kx], xp[sl], axes=(1, 0))
    if b is not None:
        out += b.data[:, None, None]

    def fn(g: Array) -> tuple[Array | None, ...]:
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for ky, kx, sl in windows:
            gw[:, :, ky, kx] = np.tensordot(g, xp[sl], axes=((1, 2), (1, 2)))
            gxp[sl] += np.tensordot(w.data[:, :, ky, kx], g, axes=(0, 0))
        gx = gxp[:, before : before + h, before : before + wd]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    inputs = (x, w) if b is None else (x, w, b)
    return _emit("conv2d", out, inputs, fn)


def deconv2d(
    a: TensorLike,
    weight: TensorLike,
    bias: TensorLike | None = None,
    *,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Transposed convolution with C_in x C_out x k x k weights.

    Output size is ``(H - 1) * stride - 2 * padding + k``.
    """
    x, w = as_tensor(a), as_tensor(weight)
    b = None if bias is None else as_tensor(bias)
    if x.ndim != 3 or w.ndim != 4:
        msg = f"deconv2d expects C x H x W input and 4-d weight, got {x.shape}, {w.shape}"
        raise InvalidArgumentError(msg)
    c_in, c_out, k, k2 = w.shape
    if k != k2:
        msg = f"deconv2d kernel must be square, got {k}x{k2}"
        raise InvalidArgumentError(msg)
    if x.shape[0] != c_in:
        msg = f"deconv2d: input has {x.shape[0]} channels, weight expects {c_in}"
        raise InvalidArgumentError(msg)
    if b is not None and b.shape != (c_out,):
        msg = f"deconv2d: bias shape {b.shape} != ({c_out},)"
        raise InvalidArgumentError(msg)
    if stride < 1 or padding < 0:
        msg = f"invalid stride {stride} / padding {padding}"
        raise InvalidArgumentError(msg)
    _, h, wd = x.shape
    full_h, full_w = (h - 1) * stride + k, (wd - 1) * stride + k
    ho, wo = full_h - 2 * padding, full_w - 2 * padding
    if ho < 1 or wo < 1:
        msg = f"deconv2d output would be empty for input {h}x{wd}"
        raise InvalidArgumentError(msg)

    windows = [
        (
            ky,
            kx,
            (
                slice(None),
                slice(ky, ky + stride * (h - 1) + 1, stride),
                slice(kx, kx + stride * (wd - 1) + 1, stride),
            ),
        )
        for ky in range(k)
        for kx in range(k)
    ]
    full = np.zeros((c_out, full_h, full_w))
    for ky, kx, sl in windows:
        full[sl] += np.tensordot(w.data[:, :, ky, kx], x.data, axes=(0, 0))
    out = full[:, padding : padding + ho, padding : padding + wo].copy()
    if b is not None:
        out += b.data[:, None, None]

    def fn(g: Array) -> tuple[Array | None, ...]:
        gfull = np.zeros_like(full)
        gfull[:, padding : padding + ho, padding : padding + wo] = g
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        for ky, kx, sl in windows:
            gx += np.tensordot(w.data[:, :, ky, kx], gfull[sl], axes=(1, 0))
            gw[:, :, ky, kx] = np.tensordot(x.data, gfull[sl], axes=((1, 2), (1, 2)))
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    inputs = (x, w) if b is None else (x, w, b)
    return _emit("deconv2d", out, inputs, fn)


@dataclass(frozen=True, slots=True)
class GradientComparison:
    name: str
    indices: npt.NDArray[np.intp]
    analytic: Array
    numeric: Array


def gradient_check(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    *,
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> list[GradientComparison]:
    """Compare tape gradients of a scalar ``fn()`` with central differences.

    ``fn`` must rebuild its graph from the current ``data`` of ``tensors``
    on every call. With ``max_entries`` only a seeded random subset of each
    tensor's entries is perturbed.
    """
    for tensor in tensors:
        tensor.zero_grad()
    with Tape() as tape:
        loss = fn()
    analytic = backward(tape, loss, tensors)

    rng = np.random.default_rng(seed)
    results: list[GradientComparison] = []
    for position, (tensor, grad) in enumerate(zip(tensors, analytic, strict=True)):
        flat = tensor.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(indices.size)
        for slot, index in enumerate(indices):
            original = flat[index]
            flat[index] = original + h
            upper = fn().item()
            flat[index] = original - h
            lower = fn().item()
            flat[index] = original
            numeric[slot] = (upper - lower) / (2.0 * h)
        results.append(
            GradientComparison(
                name=tensor.name or f"input{position}",
                indices=indices,
                analytic=grad.reshape(-1)[indices],
                numeric=numeric,
            )
        )
    return results
