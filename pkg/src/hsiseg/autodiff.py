"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

The engine is deliberately small: it provides exactly the primitives the
3D convolutional autoencoder and its clustering head need, recorded on an
explicit :class:`Tape`.  Every op takes an optional ``tape`` argument; when
``tape`` is ``None`` the op runs forward-only, which is what inference uses.

Conventions for convolution shapes (all unit stride, no padding):

* input rank 3 ``(h, w, d)`` is a single-channel volume,
  rank 4 ``(C, h, w, d)`` is multi-channel,
  rank 5 ``(P, C, h, w, d)`` is a batch;
* kernels are rank 4 ``(K, kh, kw, kd)`` for single-channel input or
  rank 5 ``(K, C, kh, kw, kd)``;
* a transposed convolution consumes the K-channel output of the matching
  forward convolution and produces a C-channel volume, so the same kernel
  tensor shape serves both directions.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError, ShapeError

LOG_CLAMP = 1e-12  # lower clamp applied inside log() of the KL divergence


class Tensor:
    """A dense float64 array plus an adjoint slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed primitives, replayed in reverse for adjoints.

    Each record holds the op's output, its input tensors, and a closure
    mapping the output adjoint to per-input adjoints.  ``backward`` walks
    the records in exact reverse execution order and accumulates adjoints
    additively, so fan-out sums as it must.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._records.append((output, inputs, backward))

    def backward(self, output: Tensor) -> None:
        """Seed d(output)/d(output) = 1 and propagate to every leaf."""
        if output.data.ndim != 0:
            raise ParameterError("backward requires a scalar output")
        output.grad = np.asarray(1.0)
        for out, inputs, fn in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            for tensor, adj in zip(inputs, fn(g)):
                if adj is None:
                    continue
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
                tensor.grad += adj


def _emit(tape: Tape | None, out_data: np.ndarray, inputs: tuple[Tensor, ...],
          backward: Callable) -> Tensor:
    tracked = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=tracked)
    if tape is not None and tracked:
        tape.record(out, inputs, backward)
    return out


# ---------------------------------------------------------------------------
# convolution cores (pure numpy, shared by forward and adjoint passes)
# ---------------------------------------------------------------------------

def _spectral_windows(x5: np.ndarray, kd: int) -> np.ndarray:
    """Channels-last sliding windows along the spectral axis.

    Returns a zero-copy view of shape (P, h, w, d-kd+1, C, kd).  Looping over
    the (small) spatial kernel offsets and feeding slices of this view to one
    GEMM per offset keeps the working set tiny; materializing windows over
    all three kernel axes at once would blow memory up by the kernel volume.
    """
    xt = x5.transpose(0, 2, 3, 4, 1)  # (P,h,w,d,C) view
    return sliding_window_view(xt, kd, axis=3)


def _correlate(x5: np.ndarray, k5: np.ndarray) -> np.ndarray:
    """Valid cross-correlation: (P,C,h,w,d) x (K,C,kh,kw,kd) -> (P,K,h',w',d')."""
    P, C, h, w, d = x5.shape
    K, _, kh, kw, kd = k5.shape
    hp, wp, dp = h - kh + 1, w - kw + 1, d - kd + 1
    win = _spectral_windows(x5, kd)
    wt = np.ascontiguousarray(k5.transpose(2, 3, 1, 4, 0))  # (kh,kw,C,kd,K)
    m = P * hp * wp * dp
    acc = np.zeros((m, K))
    for i in range(kh):
        for j in range(kw):
            sub = win[:, i:i + hp, j:j + wp].reshape(m, C * kd)
            acc += sub @ wt[i, j].reshape(C * kd, K)
    out = acc.reshape(P, hp, wp, dp, K)
    return np.ascontiguousarray(np.moveaxis(out, -1, 1))


def _full_convolve(y5: np.ndarray, k5: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`_correlate`: (P,K,h',w',d') -> (P,C,h,w,d)."""
    P, K, hp, wp, dp = y5.shape
    _, C, kh, kw, kd = k5.shape
    h, w, d = hp + kh - 1, wp + kw - 1, dp + kd - 1
    yt = np.ascontiguousarray(y5.transpose(0, 2, 3, 4, 1)).reshape(P * hp * wp * dp, K)
    wt = np.ascontiguousarray(k5.transpose(2, 3, 0, 1, 4))  # (kh,kw,K,C,kd)
    out = np.zeros((P, h, w, d, C))
    for i in range(kh):
        for j in range(kw):
            blk = (yt @ wt[i, j].reshape(K, C * kd)).reshape(P, hp, wp, dp, C, kd)
            for l in range(kd):
                out[:, i:i + hp, j:j + wp, l:l + dp] += blk[..., l]
    return np.ascontiguousarray(np.moveaxis(out, -1, 1))


def _kernel_adjoint(x5: np.ndarray, g5: np.ndarray, kshape: tuple[int, ...]) -> np.ndarray:
    """d(loss)/d(kernels) for _correlate, reduced over batch and positions."""
    P, C, h, w, d = x5.shape
    K, _, kh, kw, kd = kshape
    hp, wp, dp = g5.shape[2:]
    win = _spectral_windows(x5, kd)
    gt = np.ascontiguousarray(g5.transpose(0, 2, 3, 4, 1)).reshape(P * hp * wp * dp, K)
    dk = np.empty((kh, kw, K, C * kd))
    m = P * hp * wp * dp
    for i in range(kh):
        for j in range(kw):
            sub = win[:, i:i + hp, j:j + wp].reshape(m, C * kd)
            dk[i, j] = gt.T @ sub
    return dk.reshape(kh, kw, K, C, kd).transpose(2, 3, 0, 1, 4)


def _to_batched_input(data: np.ndarray) -> tuple[np.ndarray, int]:
    if data.ndim == 3:
        return data[None, None], 3
    if data.ndim == 4:
        return data[None], 4
    if data.ndim == 5:
        return data, 5
    raise ShapeError(f"convolution input must have rank 3, 4, or 5, got {data.ndim}")


def _to_batched_kernels(data: np.ndarray) -> tuple[np.ndarray, int]:
    if data.ndim == 4:
        return data[:, None], 4
    if data.ndim == 5:
        return data, 5
    raise ShapeError(f"convolution kernels must have rank 4 or 5, got {data.ndim}")


# ---------------------------------------------------------------------------
# differentiable primitives
# ---------------------------------------------------------------------------

def conv3d(x, kernels, bias, tape: Tape | None = None) -> Tensor:
    """Valid 3D convolution with unit stride.

    Output spatial extents shrink by ``kernel extent - 1`` per axis; a
    multi-channel input is reduced over its channel axis.  The K output
    channels always form a leading axis (after the batch axis, if any).
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    x5, xrank = _to_batched_input(x.data)
    k5, krank = _to_batched_kernels(kernels.data)
    if k5.shape[1] != x5.shape[1]:
        raise ShapeError(
            f"kernel channels {k5.shape[1]} do not match input channels {x5.shape[1]}")
    if any(ke > xe for ke, xe in zip(k5.shape[2:], x5.shape[2:])):
        raise ShapeError(f"kernel extents {k5.shape[2:]} exceed input extents {x5.shape[2:]}")
    if bias.data.shape != (k5.shape[0],):
        raise ShapeError(f"bias must have shape ({k5.shape[0]},), got {bias.data.shape}")

    out5 = _correlate(x5, k5) + bias.data[None, :, None, None, None]
    out_data = out5[0] if xrank < 5 else out5

    def backward(g):
        g5 = g[None] if xrank < 5 else g
        dx = None
        if x.requires_grad:
            dx5 = _full_convolve(g5, k5)
            dx = dx5[0, 0] if xrank == 3 else (dx5[0] if xrank == 4 else dx5)
        dk = None
        if kernels.requires_grad:
            dk5 = _kernel_adjoint(x5, g5, k5.shape)
            dk = dk5[:, 0] if krank == 4 else dk5
        db = g5.sum(axis=(0, 2, 3, 4)) if bias.requires_grad else None
        return dx, dk, db

    return _emit(tape, out_data, (x, kernels, bias), backward)


def conv3d_transpose(y, kernels, bias, tape: Tape | None = None) -> Tensor:
    """Transposed 3D convolution: the linear adjoint of :func:`conv3d`.

    Consumes a K-channel volume and produces a C-channel volume whose
    extents grow by ``kernel extent - 1`` per axis.  When C == 1 the channel
    axis is squeezed away so decoder output matches the encoder input shape.
    """
    y, kernels, bias = as_tensor(y), as_tensor(kernels), as_tensor(bias)
    y5, yrank = _to_batched_input(y.data)
    k5, krank = _to_batched_kernels(kernels.data)
    n_out = k5.shape[1]
    if k5.shape[0] != y5.shape[1]:
        raise ShapeError(
            f"kernel count {k5.shape[0]} does not match input channels {y5.shape[1]}")
    if bias.data.shape != (n_out,):
        raise ShapeError(f"bias must have shape ({n_out},), got {bias.data.shape}")

    out5 = _full_convolve(y5, k5) + bias.data[None, :, None, None, None]

    def _restore(a5):
        a = a5[0] if yrank < 5 else a5
        if n_out == 1:
            a = a[0] if yrank < 5 else a[:, 0]
        return a

    def backward(g):
        g5 = g.reshape(out5.shape)
        dy = None
        if y.requires_grad:
            dy5 = _correlate(g5, k5)
            dy = dy5[0, 0] if yrank == 3 else (dy5[0] if yrank == 4 else dy5)
        dk = None
        if kernels.requires_grad:
            # same reduction as the forward-conv kernel adjoint with the
            # roles of activation and adjoint swapped
            dk5 = _kernel_adjoint(g5, y5, k5.shape)
            dk = dk5[:, 0] if krank == 4 else dk5
        db = g5.sum(axis=(0, 2, 3, 4)) if bias.requires_grad else None
        return dy, dk, db

    return _emit(tape, _restore(out5), (y, kernels, bias), backward)


def dense(x, weights, bias, tape: Tape | None = None) -> Tensor:
    """Affine map ``weights @ x + bias`` for a vector or a batch of vectors."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    w, b = weights.data, bias.data
    if w.ndim != 2 or b.shape != (w.shape[0],):
        raise ShapeError(f"weights {w.shape} and bias {b.shape} disagree")
    if x.data.ndim not in (1, 2) or x.data.shape[-1] != w.shape[1]:
        raise ShapeError(f"input {x.data.shape} does not match weights {w.shape}")

    out_data = x.data @ w.T + b

    def backward(g):
        dx = g @ w if x.requires_grad else None
        if weights.requires_grad:
            dw = np.outer(g, x.data) if x.data.ndim == 1 else g.T @ x.data
        else:
            dw = None
        db = (g if x.data.ndim == 1 else g.sum(axis=0)) if bias.requires_grad else None
        return dx, dw, db

    return _emit(tape, out_data, (x, weights, bias), backward)


def dropout(x, p: float, mode: str, rng: np.random.Generator | None = None,
            tape: Tape | None = None) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Inference mode is a pure identity.  Training mode draws one uniform
    variate per element from ``rng`` even when p == 0, so a fixed seed gives
    a bit-identical run regardless of the dropout setting.
    """
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if mode not in ("train", "infer"):
        raise ParameterError(f"dropout mode must be 'train' or 'infer', got {mode!r}")
    x = as_tensor(x)
    if mode == "infer":
        return x
    if rng is None:
        raise ParameterError("training-mode dropout needs a random generator")

    keep = rng.random(x.data.shape) >= p
    factor = keep / (1.0 - p)
    out_data = x.data * factor

    def backward(g):
        return (g * factor if x.requires_grad else None,)

    return _emit(tape, out_data, (x,), backward)


def reshape(x, shape: Sequence[int], tape: Tape | None = None) -> Tensor:
    x = as_tensor(x)
    old = x.data.shape
    out_data = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(old) if x.requires_grad else None,)

    return _emit(tape, out_data, (x,), backward)


def _elementwise(a, b, op_name: str):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op_name} requires equal shapes, got {a.data.shape} vs {b.data.shape}")
    return a, b


def add(a, b, tape: Tape | None = None) -> Tensor:
    a, b = _elementwise(a, b, "add")

    def backward(g):
        return (g if a.requires_grad else None, g if b.requires_grad else None)

    return _emit(tape, a.data + b.data, (a, b), backward)


def sub(a, b, tape: Tape | None = None) -> Tensor:
    a, b = _elementwise(a, b, "sub")

    def backward(g):
        return (g if a.requires_grad else None, -g if b.requires_grad else None)

    return _emit(tape, a.data - b.data, (a, b), backward)


def mul(a, b, tape: Tape | None = None) -> Tensor:
    a, b = _elementwise(a, b, "mul")

    def backward(g):
        da = g * b.data if a.requires_grad else None
        db = g * a.data if b.requires_grad else None
        return da, db

    return _emit(tape, a.data * b.data, (a, b), backward)


def scale(x, factor: float, tape: Tape | None = None) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)

    def backward(g):
        return (g * factor if x.requires_grad else None,)

    return _emit(tape, x.data * factor, (x,), backward)


def sum_all(x, tape: Tape | None = None) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (np.broadcast_to(g, x.data.shape).copy() if x.requires_grad else None,)

    return _emit(tape, x.data.sum(), (x,), backward)


def pairwise_sqdist(z, centers, tape: Tape | None = None) -> Tensor:
    """Squared Euclidean distances between rows of z (P,n) and centers (J,n)."""
    z, centers = as_tensor(z), as_tensor(centers)
    zd, cd = z.data, centers.data
    if zd.ndim != 2 or cd.ndim != 2 or zd.shape[1] != cd.shape[1]:
        raise ShapeError(f"incompatible shapes {zd.shape} and {cd.shape}")
    sq = (zd * zd).sum(axis=1)[:, None] + (cd * cd).sum(axis=1)[None, :] - 2.0 * zd @ cd.T
    np.maximum(sq, 0.0, out=sq)

    def backward(g):
        dz = 2.0 * (zd * g.sum(axis=1, keepdims=True) - g @ cd) if z.requires_grad else None
        dc = 2.0 * (cd * g.sum(axis=0)[:, None] - g.T @ zd) if centers.requires_grad else None
        return dz, dc

    return _emit(tape, sq, (z, centers), backward)


def student_t_rows(sqdist, tape: Tape | None = None) -> Tensor:
    """Row-normalized Student's-t kernel: (1+d)^-1 scaled so each row sums to 1."""
    sqdist = as_tensor(sqdist)
    u = 1.0 / (1.0 + sqdist.data)
    s = u.sum(axis=1, keepdims=True)
    q = u / s

    def backward(g):
        if not sqdist.requires_grad:
            return (None,)
        du = (g - (g * q).sum(axis=1, keepdims=True)) / s
        return (-(u * u) * du,)

    return _emit(tape, q, (sqdist,), backward)


def kl_divergence(target: np.ndarray, q, tape: Tape | None = None) -> Tensor:
    """KL(target || q) with the convention 0*log(0/q) = 0 and q clamped at 1e-12.

    The target is a constant: no adjoint flows into it, matching its role as
    a per-epoch snapshot rather than a trainable quantity.
    """
    q = as_tensor(q)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != q.data.shape:
        raise ShapeError(f"target {t.shape} and q {q.data.shape} disagree")
    qc = np.maximum(q.data, LOG_CLAMP)
    val = np.where(t > 0.0, t * (np.log(np.maximum(t, LOG_CLAMP)) - np.log(qc)), 0.0).sum()

    def backward(g):
        return ((-t / qc) * g if q.requires_grad else None,)

    return _emit(tape, val, (q,), backward)


# ---------------------------------------------------------------------------
# finite-difference gradient checker
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Tape | None], Tensor],
               params: Tensor | Iterable[Tensor],
               eps: float = 1e-3) -> float:
    """Compare analytic adjoints of ``f`` against central differences.

    ``f(tape)`` must rebuild a scalar from the current values of ``params``;
    it is invoked once with a fresh tape for the analytic pass and then
    twice per coordinate with ``tape=None`` for the numeric probes.
    Returns the max over coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    if eps <= 0:
        raise ParameterError(f"finite-difference step must be positive, got {eps}")
    param_list = [params] if isinstance(params, Tensor) else list(params)
    for p in param_list:
        p.zero_grad()

    tape = Tape()
    out = f(tape)
    if out.data.ndim != 0:
        raise ParameterError("grad_check requires a scalar-valued function")
    tape.backward(out)

    worst = 0.0
    for p in param_list:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        for idx in np.ndindex(p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + eps
            f_plus = float(f(None).data)
            p.data[idx] = orig - eps
            f_minus = float(f(None).data)
            p.data[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[idx])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
