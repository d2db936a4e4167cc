"""Minimal network kernel with explicit backpropagation.

1-D convolution over time (feature rows are input channels), ReLU, max
pooling, one fully connected head, softmax cross-entropy, and RMSProp.
No autograd: every layer caches what its hand-derived backward pass
needs. Training math is float32; gradient checks run the same code in
float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AffectlineError

N_CLASSES = 6


class ShapeError(AffectlineError):
    """Operand shapes incompatible with a layer contract."""


class NonFiniteError(AffectlineError):
    """NaN or Inf encountered with finite-checking enabled."""


def check_finite(arr: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {context}")


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d:
    """Cross-correlation with bias over the time axis.

    Input (B, C_in, T) -> output (B, C_out, T') with
    T' = (T + 2*pad - kernel)//stride + 1.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1,
                 pad: int = 0, *, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.pad = kernel, stride, pad
        rng = rng or np.random.default_rng(0)
        self.w = he_uniform(rng, (out_ch, in_ch, kernel), in_ch * kernel, dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self._cols = None
        self._in_shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3:
            raise ShapeError(f"conv expects (B, C, T) input, got shape {x.shape}")
        b, c, t = x.shape
        if c != self.in_ch:
            raise ShapeError(f"conv expects {self.in_ch} channels, got {c}")
        if t + 2 * self.pad < self.kernel:
            raise ShapeError(f"input length {t} too short for kernel {self.kernel}")
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad))) if self.pad else x
        t_out = (xp.shape[2] - self.kernel) // self.stride + 1
        windows = np.lib.stride_tricks.sliding_window_view(xp, self.kernel, axis=2)
        windows = windows[:, :, ::self.stride][:, :, :t_out]
        cols = windows.transpose(0, 2, 1, 3).reshape(b * t_out, self.in_ch * self.kernel)
        wm = self.w.reshape(self.out_ch, -1)
        y = cols @ wm.T + self.b
        self._cols = cols
        self._in_shape = (b, c, t)
        return y.reshape(b, t_out, self.out_ch).transpose(0, 2, 1)

    def backward(self, grad_out: np.ndarray):
        b, c, t = self._in_shape
        t_out = grad_out.shape[2]
        if grad_out.shape != (b, self.out_ch, t_out):
            raise ShapeError("grad_out shape does not match forward output")
        gm = grad_out.transpose(0, 2, 1).reshape(b * t_out, self.out_ch)
        self.gw = (gm.T @ self._cols).reshape(self.w.shape)
        self.gb = gm.sum(axis=0)
        dcols = gm @ self.w.reshape(self.out_ch, -1)
        dwin = dcols.reshape(b, t_out, self.in_ch, self.kernel).transpose(0, 2, 1, 3)
        dxp = np.zeros((b, c, t + 2 * self.pad), dtype=grad_out.dtype)
        for i in range(self.kernel):
            dxp[:, :, i:i + self.stride * t_out:self.stride] += dwin[:, :, :, i]
        return dxp[:, :, self.pad:self.pad + t] if self.pad else dxp

    def out_len(self, t: int) -> int:
        return (t + 2 * self.pad - self.kernel) // self.stride + 1


class ReLU:
    def forward(self, x: np.ndarray) -> np.ndarray:
        mask = x > 0  # local first: concurrent forwards stay correct
        self._mask = mask
        return x * mask

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out * self._mask


class MaxPool1d:
    """Max over fixed windows; gradient routes to the first argmax on ties."""

    def __init__(self, width: int, stride: int | None = None):
        self.width = width
        self.stride = stride if stride is not None else width

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, t = x.shape
        if t < self.width:
            raise ShapeError(f"input length {t} shorter than pool width {self.width}")
        t_out = (t - self.width) // self.stride + 1
        windows = np.lib.stride_tricks.sliding_window_view(x, self.width, axis=2)
        windows = windows[:, :, ::self.stride][:, :, :t_out]
        argmax = windows.argmax(axis=3)
        self._argmax = argmax
        self._in_shape = (b, c, t)
        return np.take_along_axis(windows, argmax[..., None], axis=3)[..., 0]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        b, c, t = self._in_shape
        dx = np.zeros((b, c, t), dtype=grad_out.dtype)
        t_out = grad_out.shape[2]
        pos = np.arange(t_out) * self.stride + self._argmax
        bi = np.arange(b)[:, None, None]
        ci = np.arange(c)[None, :, None]
        np.add.at(dx, (np.broadcast_to(bi, pos.shape),
                       np.broadcast_to(ci, pos.shape), pos), grad_out)
        return dx

    def out_len(self, t: int) -> int:
        return (t - self.width) // self.stride + 1


class Flatten:
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out.reshape(self._shape)


class FullyConnected:
    def __init__(self, in_features: int, out_features: int, *,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.in_features, self.out_features = in_features, out_features
        rng = rng or np.random.default_rng(0)
        self.w = he_uniform(rng, (out_features, in_features), in_features, dtype)
        self.b = np.zeros(out_features, dtype=dtype)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.in_features:
            raise ShapeError(f"fc expects {self.in_features} inputs, got {x.shape[1]}")
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        self.gw = grad_out.T @ self._x
        self.gb = grad_out.sum(axis=0)
        return grad_out @ self.w


def softmax_xent(logits: np.ndarray, targets) -> tuple:
    """Stable softmax cross-entropy.

    Accepts (B, K) logits with integer targets (B,), or a single (K,)
    vector with a scalar target. Returns per-sample losses and the
    gradient of the summed loss w.r.t. the logits (softmax - onehot).
    """
    single = np.ndim(logits) == 1
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    rows = np.arange(z.shape[0])
    loss = -log_p[rows, t]
    grad = np.exp(log_p)
    grad[rows, t] -= 1.0
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def rmsprop_step(param: np.ndarray, grad: np.ndarray, acc: np.ndarray,
                 lr: float = 1e-4, rho: float = 0.9, eps: float = 1e-8) -> None:
    """One in-place update: acc <- rho*acc + (1-rho)*g^2; p <- p - lr*g/(sqrt(acc)+eps)."""
    if param.shape != grad.shape or param.shape != acc.shape:
        raise ShapeError("param/grad/accumulator shapes differ")
    acc *= rho
    acc += (1.0 - rho) * grad * grad
    param -= lr * grad / (np.sqrt(acc) + eps)


class RmsProp:
    """RMSProp over a named parameter set, one accumulator per tensor."""

    def __init__(self, lr: float = 1e-4, rho: float = 0.9, eps: float = 1e-8):
        self.lr, self.rho, self.eps = lr, rho, eps
        self.acc: dict[str, np.ndarray] = {}

    def step(self, named_params, named_grads: dict) -> None:
        for name, param in named_params:
            if name not in self.acc:
                self.acc[name] = np.zeros_like(param)
            rmsprop_step(param, named_grads[name].astype(param.dtype, copy=False),
                         self.acc[name], self.lr, self.rho, self.eps)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: conv/ReLU pairs, one pool, one FC head.

    ``pool_width`` of 0 selects a global max pool over whatever time
    length remains after the conv stack.
    """

    in_channels: int = 41
    in_frames: int = 300
    conv_channels: tuple = (64, 64, 128, 128, 256, 256)
    kernel: int = 3
    stride: int = 1
    pad: int = 1
    pool_width: int = 0
    pool_stride: int = 0
    n_classes: int = N_CLASSES

    def __post_init__(self):
        if not self.conv_channels or any(c <= 0 for c in self.conv_channels):
            raise ShapeError("conv_channels must be positive")
        t = self.in_frames
        for _ in self.conv_channels:
            if t + 2 * self.pad < self.kernel:
                raise ShapeError("conv stack shrinks time axis below kernel size")
            t = (t + 2 * self.pad - self.kernel) // self.stride + 1
        width = self.pool_width or t
        if width > t:
            raise ShapeError(f"pool width {width} exceeds conv output length {t}")

    def conv_out_len(self) -> int:
        t = self.in_frames
        for _ in self.conv_channels:
            t = (t + 2 * self.pad - self.kernel) // self.stride + 1
        return t

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "in_frames": self.in_frames,
            "conv_channels": list(self.conv_channels),
            "kernel": self.kernel,
            "stride": self.stride,
            "pad": self.pad,
            "pool_width": self.pool_width,
            "pool_stride": self.pool_stride,
            "n_classes": self.n_classes,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        return ModelSpec(**d)


class Model:
    """Conv/ReLU stack, max pool, flatten, FC head.

    Forward on an unchanged parameter set is deterministic and each batch
    row depends only on its own input. Training steps mutate parameters
    and must not run concurrently.
    """

    def __init__(self, spec: ModelSpec, seed=0, check: bool = False,
                 dtype=np.float32):
        self.spec = spec
        self.check = check
        rng = np.random.default_rng(seed)
        self.convs = []
        in_ch = spec.in_channels
        for out_ch in spec.conv_channels:
            self.convs.append(Conv1d(in_ch, out_ch, spec.kernel, spec.stride,
                                     spec.pad, rng=rng, dtype=dtype))
            in_ch = out_ch
        self.relus = [ReLU() for _ in spec.conv_channels]
        t = spec.conv_out_len()
        width = spec.pool_width or t
        self.pool = MaxPool1d(width, spec.pool_stride or None)
        pool_out = self.pool.out_len(t)
        self.flatten = Flatten()
        self.fc = FullyConnected(in_ch * pool_out, spec.n_classes, rng=rng, dtype=dtype)

    def parameters(self):
        """(name, tensor) pairs in declaration order."""
        out = []
        for i, conv in enumerate(self.convs, start=1):
            out.append((f"conv{i}.w", conv.w))
            out.append((f"conv{i}.b", conv.b))
        out.append(("fc.w", self.fc.w))
        out.append(("fc.b", self.fc.b))
        return out

    def set_parameters(self, named: dict) -> None:
        for name, value in self.parameters():
            new = named[name]
            if new.shape != value.shape:
                raise ShapeError(f"parameter {name}: shape {new.shape} != {value.shape}")
            value[...] = new

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[1] != self.spec.in_channels \
                or x.shape[2] != self.spec.in_frames:
            raise ShapeError(
                f"model expects (B, {self.spec.in_channels}, {self.spec.in_frames}),"
                f" got {x.shape}"
            )
        h = x
        for conv, relu in zip(self.convs, self.relus):
            h = relu.forward(conv.forward(h))
        h = self.flatten.forward(self.pool.forward(h))
        logits = self.fc.forward(h)
        if self.check:
            check_finite(logits, "logits")
        return logits

    def backward(self, grad_logits: np.ndarray) -> dict:
        """Gradients for every parameter given d(loss)/d(logits)."""
        g = self.fc.backward(grad_logits)
        g = self.pool.backward(self.flatten.backward(g))
        for conv, relu in zip(reversed(self.convs), reversed(self.relus)):
            g = conv.backward(relu.backward(g))
        grads = {}
        for i, conv in enumerate(self.convs, start=1):
            grads[f"conv{i}.w"] = conv.gw
            grads[f"conv{i}.b"] = conv.gb
        grads["fc.w"] = self.fc.gw
        grads["fc.b"] = self.fc.gb
        return grads
