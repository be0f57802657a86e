"""Finite-difference verification of every analytic gradient in the engine.

The checks pair each backward kernel (and the composite pixel gradient) with
central finite differences of its forward computation through a scalar
functional.  The differencing here never touches the backward code paths, so
it stays an independent oracle.
"""

from __future__ import annotations

import numpy as np

from .gram import (
    Statistic,
    describe,
    gram_matrix,
    layer_loss,
    layer_loss_grad,
)
from .network import CONV, POOL, LayerSpec, NetworkSpec, random_init
from .synth import SynthesisConfig, loss_and_pixel_grad
from .tensor import (
    ConvWeights,
    conv3x3_backward_input,
    conv3x3_forward,
    pool2x2_backward,
    pool2x2_forward,
    relu_backward,
    relu_forward,
)


def tiny_spec() -> NetworkSpec:
    """Two conv layers (8 and 16 filters) and one pool; the test workhorse."""
    return NetworkSpec((
        LayerSpec("conv1", CONV, 3, 8),
        LayerSpec("conv2", CONV, 8, 16),
        LayerSpec("pool1", POOL, 16, 16),
    ))


def central_diff(f, x: np.ndarray, indices, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar f at the given flat indices of x."""
    base = x.ravel().copy()
    out = np.empty(len(indices))
    for row, idx in enumerate(indices):
        bumped = base.copy()
        bumped[idx] = base[idx] + eps
        f_plus = f(bumped.reshape(x.shape))
        bumped[idx] = base[idx] - eps
        f_minus = f(bumped.reshape(x.shape))
        out[row] = (f_plus - f_minus) / (2.0 * eps)
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    scale = np.maximum(scale, 1e-8)
    return float(np.max(np.abs(analytic - numeric) / scale))


def _sample_indices(rng, size: int, count: int) -> np.ndarray:
    return rng.choice(size, size=min(count, size), replace=False)


def _quadratic_probe(rng, shape) -> np.ndarray:
    # Fixed coefficients turn a tensor-valued kernel into a scalar functional
    # with a dense, well-conditioned gradient.
    return rng.normal(size=shape)


def check_conv_backward(seed: int, eps: float = 1e-6) -> float:
    """Max relative error of conv3x3_backward_input vs finite differences."""
    rng = np.random.Generator(np.random.PCG64(seed))
    w = ConvWeights(rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3))
    x = rng.normal(size=(2, 6, 5))
    probe = _quadratic_probe(rng, (3, 6, 5))

    def functional(inp):
        out = conv3x3_forward(inp, w)
        return 0.5 * float(np.sum(probe * out * out))

    out0 = conv3x3_forward(x, w)
    analytic = conv3x3_backward_input(probe * out0, w)
    idx = _sample_indices(rng, x.size, 40)
    numeric = central_diff(functional, x, idx, eps)
    return max_relative_error(analytic.ravel()[idx], numeric)


def check_relu_backward(seed: int, eps: float = 1e-6) -> float:
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.normal(size=(4, 5, 5))
    x = np.where(np.abs(x) < 5 * eps, 0.5, x)  # keep away from the kink
    probe = _quadratic_probe(rng, x.shape)

    def functional(inp):
        out = relu_forward(inp)
        return 0.5 * float(np.sum(probe * out * out))

    analytic = relu_backward(probe * relu_forward(x), x)
    idx = _sample_indices(rng, x.size, 40)
    numeric = central_diff(functional, x, idx, eps)
    return max_relative_error(analytic.ravel()[idx], numeric)


def check_pool_backward(seed: int, eps: float = 1e-6) -> float:
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.normal(size=(3, 6, 4))
    probe = _quadratic_probe(rng, (3, 3, 2))

    def functional(inp):
        out, _ = pool2x2_forward(inp, "avg")
        return 0.5 * float(np.sum(probe * out * out))

    out0, ctx = pool2x2_forward(x, "avg")
    analytic = pool2x2_backward(probe * out0, ctx, "avg")
    idx = _sample_indices(rng, x.size, 24)
    numeric = central_diff(functional, x, idx, eps)
    return max_relative_error(analytic.ravel()[idx], numeric)


def check_layer_gradient(seed: int, eps: float = 1e-5) -> float:
    """Statistic gradient vs finite differences of the layer loss, on
    activations bounded away from the rectifier gate.

    The default step balances truncation against round-off for this strongly
    normalized quartic loss; 1e-6 leaves the quotient round-off dominated.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    n, m = 6, 30
    f_hat = rng.uniform(0.1, 1.5, size=(n, m))
    target = gram_matrix(rng.uniform(0.1, 1.5, size=(n, m)))

    def functional(f):
        return layer_loss(target, gram_matrix(f), n, m)

    analytic = layer_loss_grad(f_hat, target, gram_matrix(f_hat), n, m)
    idx = _sample_indices(rng, f_hat.size, 60)
    numeric = central_diff(functional, f_hat, idx, eps)
    return max_relative_error(analytic.ravel()[idx], numeric)


def check_pixel_gradient(seed: int, coords: int = 50, eps: float = 1e-5) -> float:
    """Composite forward + statistic + backward gradient vs finite differences
    on the tiny network and an 8x8 image.

    The descriptor spans both conv layers and the pool layer, so the pullback
    exercises every kernel adjoint."""
    rng = np.random.Generator(np.random.PCG64(seed))
    network = random_init(tiny_spec(), seed=seed, scale=0.5)
    source = rng.uniform(-1.0, 1.0, size=(3, 8, 8))
    layers = ["conv1", "conv2", "pool1"]
    config = SynthesisConfig(layers=tuple(layers), statistic=Statistic("gram"))
    target = describe(network, source, layers, Statistic("gram"))
    x = rng.uniform(-1.0, 1.0, size=(3, 8, 8))

    def functional(img):
        loss, _ = loss_and_pixel_grad(network, img, target, config)
        return loss

    _, analytic = loss_and_pixel_grad(network, x, target, config)
    idx = _sample_indices(rng, x.size, coords)
    numeric = central_diff(functional, x, idx, eps)
    return max_relative_error(analytic.ravel()[idx], numeric)


CHECKS = [
    ("conv3x3_backward_input", check_conv_backward, 1e-6),
    ("relu_backward", check_relu_backward, 1e-6),
    ("pool2x2_backward_avg", check_pool_backward, 1e-6),
    ("statistic_gradient", check_layer_gradient, 1e-6),
    ("composite_pixel_gradient", check_pixel_gradient, 1e-4),
]


def run_gradcheck(seed: int, report=print) -> bool:
    """Run every finite-difference check; True iff all pass their tolerance."""
    all_ok = True
    for name, check, tol in CHECKS:
        err = check(seed)
        ok = err < tol
        all_ok &= ok
        report(f"{'PASS' if ok else 'FAIL'}  {name}: max rel err {err:.3e} (tol {tol:g})")
    return all_ok
