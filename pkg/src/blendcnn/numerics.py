"""Dense numeric core: forward ops, hand-written gradients, losses, Adam.

Tensors are plain numpy float64 arrays. There is no autodiff tape: every
forward operation here has a matching ``*_backward`` that returns exact
analytic gradients, and ``grad_check`` validates any composition of them
against central finite differences.

All functions are pure (no hidden state); ``adam_step`` is the single
mutating entry point and touches only the Parameter it is given.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NonFiniteError",
    "Parameter",
    "AdamConfig",
    "GradCheckReport",
    "affine",
    "affine_backward",
    "conv1d",
    "conv1d_backward",
    "relu",
    "relu_backward",
    "global_max_pool",
    "masked_max_pool",
    "max_pool_backward",
    "softmax",
    "cross_entropy",
    "cross_entropy_backward",
    "mae_loss",
    "mae_loss_backward",
    "adam_step",
    "grad_check",
]

# Output widths below this take a fixed-order reduction instead of BLAS:
# OpenBLAS remainder kernels for narrow outputs may sum rows in different
# orders, which would break bitwise row-equality for identical batch rows.
_NARROW_OUT = 16


class NonFiniteError(ValueError):
    """A NaN or Inf appeared where finite values are required."""


def require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


@dataclass
class Parameter:
    """A trainable tensor: value plus gradient buffer and Adam moment state.

    ``value``, ``grad``, ``m`` and ``v`` always share one shape; ``step``
    counts optimizer updates applied to this parameter.
    """

    name: str
    value: np.ndarray
    grad: np.ndarray = None
    m: np.ndarray = None
    v: np.ndarray = None
    step: int = 0

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.m is None:
            self.m = np.zeros_like(self.value)
        if self.v is None:
            self.v = np.zeros_like(self.value)
        for buf, label in ((self.grad, "grad"), (self.m, "m"), (self.v, "v")):
            if buf.shape != self.value.shape:
                raise ValueError(
                    f"parameter '{self.name}': {label} shape {buf.shape} "
                    f"!= value shape {self.value.shape}"
                )

    @property
    def size(self) -> int:
        return self.value.size


@dataclass(frozen=True)
class AdamConfig:
    """Adam hyperparameters; the learning rate is constant (no schedule)."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError(f"betas must lie in (0,1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


# ---------------------------------------------------------------------------
# forward ops


def affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense layer: out[r, c] = sum_k x[r, k] * w[k, c] + b[c].

    x: [B, I], w: [I, O], b: [O] -> [B, O].
    """
    if x.ndim != 2 or w.ndim != 2:
        raise ValueError(f"affine expects 2-D operands, got x{x.shape} w{w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"affine: inner extents differ, x{x.shape} vs w{w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"affine: bias shape {b.shape} does not match w{w.shape}")
    if w.shape[1] < _NARROW_OUT:
        # per-row independent reduction, order fixed by the I axis
        return (x[:, :, None] * w[None, :, :]).sum(axis=1) + b
    return x @ w + b


def affine_backward(x, w, dout):
    """Gradients of affine: returns (dx, dw, db)."""
    dx = dout @ w.T
    dw = x.T @ dout
    db = dout.sum(axis=0)
    return dx, dw, db


def _conv_cols(x: np.ndarray, width: int) -> np.ndarray:
    """im2col for same-padded 1-D convolution.

    x: [B, L, Cin] -> [B, L, K, Cin] windows, zero padding outside [0, L).
    """
    pad = (width - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    # sliding_window_view puts the window axis last: [B, L, Cin, K]
    win = np.lib.stride_tricks.sliding_window_view(xp, width, axis=1)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2))


def conv1d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded 1-D cross-correlation over the length axis.

    x: [L, Cin] or [B, L, Cin]; kernels: [K, Cin, Cout] with K odd;
    bias: [Cout].  For every position t,

        out[t, o] = bias[o] + sum_{k, c} x[t + k - (K-1)/2, c] * kernels[k, c, o]

    with out-of-range positions of x treated as zero, so the output keeps
    length L.
    """
    if kernels.ndim != 3:
        raise ValueError(f"conv1d kernels must be [K, Cin, Cout], got {kernels.shape}")
    width, c_in, c_out = kernels.shape
    if width % 2 == 0:
        raise ValueError(f"conv1d kernel width must be odd, got {width}")
    single = x.ndim == 2
    xb = x[None] if single else x
    if xb.ndim != 3 or xb.shape[2] != c_in:
        raise ValueError(
            f"conv1d: input channels do not match kernels, x{x.shape} vs kernels{kernels.shape}"
        )
    if bias.shape != (c_out,):
        raise ValueError(f"conv1d: bias shape {bias.shape}, expected ({c_out},)")
    batch, length = xb.shape[0], xb.shape[1]
    cols = _conv_cols(xb, width).reshape(batch * length, width * c_in)
    out = cols @ kernels.reshape(width * c_in, c_out) + bias
    out = out.reshape(batch, length, c_out)
    return out[0] if single else out


def conv1d_backward(x, kernels, dout):
    """Gradients of conv1d: returns (dx, dkernels, dbias).

    Shapes mirror the forward call; ``x`` is the original input.
    """
    single = x.ndim == 2
    xb = x[None] if single else x
    db = dout[None] if single else dout
    width, c_in, c_out = kernels.shape
    batch, length = xb.shape[0], xb.shape[1]
    pad = (width - 1) // 2

    cols = _conv_cols(xb, width).reshape(batch * length, width * c_in)
    dflat = db.reshape(batch * length, c_out)
    dkernels = (cols.T @ dflat).reshape(width, c_in, c_out)
    dbias = dflat.sum(axis=0)

    dcols = (dflat @ kernels.reshape(width * c_in, c_out).T).reshape(
        batch, length, width, c_in
    )
    dxp = np.zeros((batch, length + 2 * pad, c_in))
    for k in range(width):
        dxp[:, k : k + length, :] += dcols[:, :, k, :]
    dx = dxp[:, pad : pad + length, :]
    return (dx[0] if single else dx), dkernels, dbias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x, dout):
    """dout masked to the positions where relu(x) passed its input through."""
    return dout * (x > 0.0)


def global_max_pool(x: np.ndarray, valid_len: int) -> np.ndarray:
    """Max over the first ``valid_len`` positions of x[L, C] -> [C]."""
    if x.ndim != 2:
        raise ValueError(f"global_max_pool expects [L, C], got {x.shape}")
    if not 1 <= valid_len <= x.shape[0]:
        raise ValueError(f"valid_len must be in [1, {x.shape[0]}], got {valid_len}")
    return x[:valid_len].max(axis=0)


def masked_max_pool(x: np.ndarray, valid_lens: np.ndarray):
    """Batched global max pool restricted to each row's valid prefix.

    x: [B, L, C], valid_lens: [B] -> (pooled [B, C], argmax [B, C]).
    Positions at or beyond the valid length never win; ties go to the
    earliest position (first occurrence).
    """
    batch, length, _ = x.shape
    valid_lens = np.asarray(valid_lens)
    if valid_lens.shape != (batch,):
        raise ValueError(f"valid_lens shape {valid_lens.shape}, expected ({batch},)")
    if np.any(valid_lens < 1) or np.any(valid_lens > length):
        raise ValueError(f"valid lengths must be in [1, {length}]")
    mask = np.arange(length)[None, :] < valid_lens[:, None]
    masked = np.where(mask[:, :, None], x, -np.inf)
    argmax = masked.argmax(axis=1)
    pooled = np.take_along_axis(masked, argmax[:, None, :], axis=1)[:, 0, :]
    return pooled, argmax


def max_pool_backward(argmax, length, dout):
    """Scatter dout[B, C] back to the argmax positions of an [B, L, C] input."""
    batch, channels = dout.shape
    dx = np.zeros((batch, length, channels))
    np.put_along_axis(dx, argmax[:, None, :], dout[:, None, :], axis=1)
    return dx


def softmax(z: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis (max-shifted before exponentiation)."""
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean over the batch of -log softmax(logits)[label].

    logits: [B, C], labels: integer [B] with entries in [0, C).
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(
            f"cross_entropy: label out of range [0, {n_classes}): "
            f"min={labels.min()}, max={labels.max()}"
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(logits.shape[0]), labels]
    return float((lse - picked).mean())


def cross_entropy_backward(logits, labels):
    """d(mean CE)/dlogits = (softmax - onehot) / B."""
    batch = logits.shape[0]
    d = softmax(logits)
    d[np.arange(batch), labels] -= 1.0
    return d / batch


def mae_loss(student: np.ndarray, teacher: np.ndarray) -> float:
    """Mean absolute error over all entries of two same-shape tensors."""
    if student.shape != teacher.shape:
        raise ValueError(f"mae_loss: shapes differ, {student.shape} vs {teacher.shape}")
    return float(np.abs(student - teacher).mean())


def mae_loss_backward(student, teacher):
    """Subgradient of mae_loss wrt student; defined as 0 where entries tie."""
    return np.sign(student - teacher) / student.size


def adam_step(p: Parameter, cfg: AdamConfig) -> Parameter:
    """One Adam update with bias correction; zeroes p.grad afterwards.

        m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
        value <- value - lr * m_hat / (sqrt(v_hat) + eps)

    Raises NonFiniteError (naming the parameter) on a NaN/Inf gradient.
    """
    if not np.all(np.isfinite(p.grad)):
        raise NonFiniteError(f"non-finite gradient for parameter '{p.name}'")
    p.step += 1
    p.m *= cfg.beta1
    p.m += (1.0 - cfg.beta1) * p.grad
    p.v *= cfg.beta2
    p.v += (1.0 - cfg.beta2) * np.square(p.grad)
    m_hat = p.m / (1.0 - cfg.beta1**p.step)
    v_hat = p.v / (1.0 - cfg.beta2**p.step)
    p.value -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    p.grad[...] = 0.0
    return p


@dataclass
class GradCheckReport:
    """Finite-difference comparison for a set of parameters."""

    max_rel_err: float
    worst_param: str
    per_param: dict = field(default_factory=dict)

    def passes(self, tolerance: float) -> bool:
        return self.max_rel_err < tolerance


def grad_check(loss_fn, params, h: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn()`` must return the scalar loss and write fresh analytic
    gradients into every Parameter in ``params`` as a side effect.  Every
    entry of every parameter is perturbed by +-h; the relative error is
    |a - n| / max(|a|, |n|, 1e-8).  Report-only: never raises on mismatch.
    """
    loss_fn()
    analytic = {p.name: p.grad.copy() for p in params}

    per_param = {}
    worst = ("", 0.0)
    for p in params:
        flat = p.value.reshape(-1)
        ana = analytic[p.name].reshape(-1)
        worst_here = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            rel = abs(ana[i] - numeric) / max(abs(ana[i]), abs(numeric), 1e-8)
            if rel > worst_here:
                worst_here = rel
        per_param[p.name] = worst_here
        if worst_here >= worst[1]:
            worst = (p.name, worst_here)
    # restore the analytic gradients the probe clobbered
    loss_fn()
    return GradCheckReport(max_rel_err=worst[1], worst_param=worst[0], per_param=per_param)
