"""Central finite-difference verification of every analytic gradient.

All checks run in float64. Inputs are redrawn when a ReLU pre-activation
or a pooling-window margin sits closer to zero than the difference step
allows, since the true derivative has a kink there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Conv1d, FullyConnected, MaxPool1d, Model, ModelSpec, ReLU, softmax_xent

FD_STEP = 1e-5
TOLERANCE = 1e-4
_MARGIN = 20 * FD_STEP


@dataclass
class CheckRow:
    name: str
    max_rel_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def central_diff(loss_fn, tensor: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """d loss / d tensor by elementwise central differences; mutates and restores."""
    grad = np.zeros(tensor.size)
    flat = tensor.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = loss_fn()
        flat[i] = orig - h
        minus = loss_fn()
        flat[i] = orig
        grad[i] = (plus - minus) / (2.0 * h)
    return grad.reshape(tensor.shape)


def _projection_loss(layer, x: np.ndarray, u: np.ndarray):
    def loss():
        return float(np.sum(layer.forward(x) * u))
    return loss


def _check_layer(layer, x: np.ndarray, rng: np.random.Generator,
                 param_names=()) -> list:
    """Compare input/parameter gradients of sum(forward(x)*u) against FD."""
    y = layer.forward(x)
    u = rng.uniform(-1.0, 1.0, size=y.shape)
    grad_in = layer.backward(u)
    loss = _projection_loss(layer, x, u)
    rows = [("input", grad_in, x)]
    for pname in param_names:
        rows.append((pname, getattr(layer, "g" + pname), getattr(layer, pname)))
    out = []
    for label, analytic, tensor in rows:
        numeric = central_diff(loss, tensor)
        out.append(max_rel_error(analytic, numeric))
    return out


def check_conv(seed: int) -> float:
    rng = np.random.default_rng(seed)
    layer = Conv1d(3, 2, 3, stride=1, pad=1, rng=rng, dtype=np.float64)
    x = rng.uniform(-1.0, 1.0, size=(2, 3, 10))
    return max(_check_layer(layer, x, rng, param_names=("w", "b")))


def check_relu(seed: int) -> float:
    rng = np.random.default_rng(seed)
    layer = ReLU()
    x = rng.uniform(-1.0, 1.0, size=(2, 4, 9))
    x[np.abs(x) < _MARGIN] = _MARGIN  # keep FD away from the kink
    return max(_check_layer(layer, x, rng))


def check_maxpool(seed: int) -> float:
    rng = np.random.default_rng(seed)
    layer = MaxPool1d(3, 2)
    for _ in range(50):
        x = rng.uniform(-1.0, 1.0, size=(2, 3, 11))
        if _pool_margin(x, 3, 2) > _MARGIN:
            break
    return max(_check_layer(layer, x, rng))


def check_fc(seed: int) -> float:
    rng = np.random.default_rng(seed)
    layer = FullyConnected(3, 4, rng=rng, dtype=np.float64)
    x = rng.uniform(-1.0, 1.0, size=(5, 3))
    return max(_check_layer(layer, x, rng, param_names=("w", "b")))


def check_softmax(seed: int) -> float:
    rng = np.random.default_rng(seed)
    logits = rng.uniform(-2.0, 2.0, size=(3, 6))
    targets = rng.integers(0, 6, size=3)
    _, analytic = softmax_xent(logits, targets)

    def loss():
        losses, _ = softmax_xent(logits, targets)
        return float(losses.sum())

    numeric = central_diff(loss, logits)
    return max_rel_error(analytic, numeric)


def _pool_margin(x: np.ndarray, width: int, stride: int) -> float:
    windows = np.lib.stride_tricks.sliding_window_view(x, width, axis=2)[:, :, ::stride]
    ordered = np.sort(windows, axis=3)
    return float(np.min(ordered[..., -1] - ordered[..., -2]))


def _relu_margin(model: Model, x: np.ndarray) -> float:
    h = x
    margin = np.inf
    for conv, relu in zip(model.convs, model.relus):
        z = conv.forward(h)
        margin = min(margin, float(np.min(np.abs(z))))
        h = relu.forward(z)
    margin = min(margin, _pool_margin(h, model.pool.width, model.pool.stride))
    return margin


SMALL_SPEC = ModelSpec(in_channels=41, in_frames=20,
                       conv_channels=(6, 6, 8, 8, 10, 10))


def check_full_model(seed: int, spec: ModelSpec = SMALL_SPEC) -> float:
    """FD check of the softmax loss against every parameter of a small model."""
    rng = np.random.default_rng(seed)
    model = Model(spec, seed=seed, check=False, dtype=np.float64)
    targets = rng.integers(0, spec.n_classes, size=2)
    for _ in range(50):
        x = rng.uniform(-1.0, 1.0, size=(2, spec.in_channels, spec.in_frames))
        if _relu_margin(model, x) > _MARGIN:
            break

    def loss():
        losses, _ = softmax_xent(model.forward(x), targets)
        return float(losses.sum())

    logits = model.forward(x)
    _, grad_logits = softmax_xent(logits, targets)
    grads = model.backward(grad_logits)
    worst = 0.0
    for name, tensor in model.parameters():
        numeric = central_diff(loss, tensor)
        worst = max(worst, max_rel_error(grads[name], numeric))
    return worst


_CHECKS = (
    ("conv1d", check_conv),
    ("relu", check_relu),
    ("maxpool1d", check_maxpool),
    ("fully_connected", check_fc),
    ("softmax_xent", check_softmax),
    ("full_model", check_full_model),
)


def run_gradcheck(seed: int = 0, n_seeds: int = 10,
                  tolerance: float = TOLERANCE) -> list:
    """Worst relative error per check over ``n_seeds`` seeds."""
    rows = []
    for name, fn in _CHECKS:
        worst = max(fn(seed + i) for i in range(n_seeds))
        rows.append(CheckRow(name=name, max_rel_error=worst, tolerance=tolerance))
    return rows
