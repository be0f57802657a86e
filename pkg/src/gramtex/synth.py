"""End-to-end texture generation: noise init, composite loss, optimizer loop.

A run starts from seeded white noise in preprocessed space, repeatedly
evaluates the total statistic-matching loss and its pixel gradient (forward
pass, per-layer statistic gradients, one backward sweep with all layer terms
injected), and drives the pixels with L-BFGS.  Every iteration is logged to a
trace; given a seed the whole run is deterministic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, UsageError, ValidationError
from .gram import Statistic, TextureDescriptor, entry_loss_and_grad
from .network import Network, backward_to_pixels, forward
from .optim import LbfgsOptions, OptimizerAbort, lbfgs_minimize
from .tensor import as_feature_tensor


@dataclass(frozen=True)
class SynthesisConfig:
    layers: tuple[str, ...]
    statistic: Statistic = Statistic("gram")
    weights: dict[str, float] | None = None  # None: w = 1 for every layer
    pool_mode: str = "avg"
    dims: tuple[int, int] | None = None  # (H, W); None: inferred square
    seed: int = 0
    noise_amplitude: float = 0.1
    lbfgs: LbfgsOptions = field(default_factory=LbfgsOptions)
    allow_dim_mismatch: bool = False

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("synthesis config needs at least one layer")
        if self.noise_amplitude <= 0:
            raise ValidationError("noise amplitude must be > 0")
        if self.pool_mode not in ("avg", "max"):
            raise ValidationError(f"unknown pooling mode {self.pool_mode!r}")

    def layer_weights(self) -> dict[str, float]:
        if self.weights is None:
            return {name: 1.0 for name in self.layers}
        w = {name: self.weights.get(name, 0.0) for name in self.layers}
        if any(v < 0 for v in w.values()):
            raise ValidationError("layer weights must be >= 0")
        if not any(v > 0 for v in w.values()):
            raise ValidationError("at least one layer weight must be positive")
        return w


@dataclass
class TraceRow:
    iteration: int
    total_loss: float
    grad_supnorm: float
    layer_losses: dict[str, float]


@dataclass
class SynthesisTrace:
    rows: list[TraceRow]
    termination: str
    wall_clock: float


class SynthesisAbort(NumericError):
    """Optimizer abort during synthesis; carries the partial trace."""

    def __init__(self, message: str, trace: SynthesisTrace):
        super().__init__(message)
        self.trace = trace


def init_white_noise(dims: tuple[int, int], seed: int, amplitude: float = 0.1) -> np.ndarray:
    """I.i.d. uniform values in [-amplitude, amplitude], in preprocessed space."""
    if amplitude <= 0:
        raise ValidationError("noise amplitude must be > 0")
    h, w = dims
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-amplitude, amplitude, size=(3, h, w))


def _top_layer(network: Network, names) -> str:
    spec = network.spec
    return spec.layers[max(spec.index_of(n) for n in names)].name


def _evaluate(network, image, target: TextureDescriptor, config: SynthesisConfig):
    """(total loss, pixel gradient, per-layer losses) for one image."""
    weights = config.layer_weights()
    acts = forward(network, image, _top_layer(network, target.layer_names()),
                   config.pool_mode)
    injections: dict[str, np.ndarray] = {}
    layer_losses: dict[str, float] = {}
    total = 0.0
    for entry in target.entries:
        loss, grad = entry_loss_and_grad(entry, acts.outputs[entry.name],
                                         strict_m=not config.allow_dim_mismatch)
        layer_losses[entry.name] = loss
        w = weights.get(entry.name, 0.0)
        if w > 0.0:
            total += w * loss
            injections[entry.name] = w * grad
    pixel_grad = backward_to_pixels(network, acts, injections)
    return total, pixel_grad, layer_losses


def loss_and_pixel_grad(
    network: Network,
    image: np.ndarray,
    target: TextureDescriptor,
    config: SynthesisConfig,
) -> tuple[float, np.ndarray]:
    """Total loss of the image against the target, and its pixel gradient."""
    image = as_feature_tensor(image, channels=3)
    _check_dims(network, target, (image.shape[1], image.shape[2]), config)
    total, grad, _ = _evaluate(network, image, target, config)
    return total, grad


def _check_dims(network, target, dims, config):
    """The target's per-layer map sizes must match what these dims produce."""
    h, w = dims
    spec = network.spec
    top = _top_layer(network, target.layer_names())
    spec.validate_image_dims(h, w, top)
    if set(target.layer_names()) != set(config.layers):
        raise UsageError(
            "config layers do not match the target descriptor: "
            f"{sorted(config.layers)} vs {sorted(target.layer_names())}"
        )
    if config.allow_dim_mismatch:
        return
    for entry in target.entries:
        div = spec.required_divisor(entry.name)
        m = (h // div) * (w // div)
        if m != entry.m:
            raise ValidationError(
                f"output dims {h}x{w} give layer {entry.name} a map size of {m}, "
                f"but the target was described with {entry.m}; the statistics are "
                "not comparable (pass allow_dim_mismatch to override)"
            )


def _infer_dims(network, target) -> tuple[int, int]:
    entry = target.entries[0]
    div = network.spec.required_divisor(entry.name)
    pixels = entry.m * div * div
    side = int(round(pixels ** 0.5))
    if side * side != pixels:
        raise ValidationError(
            f"cannot infer output dims from a non-square map size ({pixels} pixels); "
            "set dims explicitly"
        )
    return side, side


def synthesize(
    network: Network,
    target: TextureDescriptor,
    config: SynthesisConfig,
    init: np.ndarray | None = None,
) -> tuple[np.ndarray, SynthesisTrace]:
    """Generate an image matching the target statistics.

    Starts from seeded white noise unless an explicit init image is given,
    and minimizes over flattened pixels.  Returns the final image (still in
    preprocessed space) and the per-iteration trace.  An optimizer abort is
    re-raised as SynthesisAbort with the partial trace attached.
    """
    dims = config.dims if config.dims is not None else (
        (init.shape[1], init.shape[2]) if init is not None else _infer_dims(network, target)
    )
    _check_dims(network, target, dims, config)
    if init is None:
        x0 = init_white_noise(dims, config.seed, config.noise_amplitude)
    else:
        x0 = as_feature_tensor(init, channels=3)
        if x0.shape[1:] != dims:
            raise DimensionError(
                f"init image is {x0.shape[1]}x{x0.shape[2]}, config wants {dims[0]}x{dims[1]}"
            )
    shape = x0.shape
    last_layer_losses: dict[str, float] = {}
    rows: list[TraceRow] = []

    def objective(flat: np.ndarray):
        total, grad, per_layer = _evaluate(
            network, flat.reshape(shape), target, config
        )
        last_layer_losses.clear()
        last_layer_losses.update(per_layer)
        return total, grad.ravel()

    def observer(iteration, x, loss, grad):
        # The optimizer's last callback evaluation is the accepted iterate, so
        # the cached per-layer breakdown belongs to exactly this row.
        rows.append(TraceRow(iteration, loss, float(np.max(np.abs(grad))),
                             dict(last_layer_losses)))

    start = time.perf_counter()
    try:
        result = lbfgs_minimize(objective, x0.ravel(), config.lbfgs, observer=observer)
    except OptimizerAbort as e:
        trace = SynthesisTrace(rows, "abort", time.perf_counter() - start)
        raise SynthesisAbort(str(e), trace) from e
    trace = SynthesisTrace(rows, result.termination, time.perf_counter() - start)
    return result.x.reshape(shape), trace


def write_trace_csv(trace: SynthesisTrace, path, layer_order: list[str]) -> None:
    """One row per iteration (the initial state included), 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,total_loss,grad_supnorm")
        for name in layer_order:
            fh.write(f",E_{name}")
        fh.write("\n")
        for row in trace.rows:
            fh.write(f"{row.iteration},{row.total_loss:.17g},{row.grad_supnorm:.17g}")
            for name in layer_order:
                fh.write(f",{row.layer_losses[name]:.17g}")
            fh.write("\n")
