"""Sequential layer graph: the VGG-19 convolutional trunk and smaller specs.

A network is an ordered list of layers of two kinds, ``conv_relu`` (3x3
convolution with stride/padding 1 followed by rectification) and ``pool``
(non-overlapping 2x2 pooling whose mode, avg or max, is chosen per run).
Weights are loaded from disk or drawn at random; they are never trained.

Weight files use the CNNW0001 format: magic ``CNNW0001``, then little-endian
u32 layer count and, per conv layer in spec order, u16 name length + UTF-8
name, u32 out_channels, u32 in_channels, out*in*3*3 f32 kernel values
(out-major, then in, then row, then col) and out f32 biases.  Values are
stored in single precision and promoted to double in memory.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParseError, UsageError, ValidationError, DeadFilterError
from .tensor import (
    ConvWeights,
    as_feature_tensor,
    conv3x3_forward,
    conv3x3_backward_input,
    ensure_finite,
    pool2x2_backward,
    pool2x2_forward,
    relu_backward,
    relu_forward,
    PoolContext,
)

WEIGHT_MAGIC = b"CNNW0001"

CONV = "conv_relu"
POOL = "pool"

# Channel widths of the VGG-19 trunk between pools; widths double after each
# of the first three pools.
_VGG19_BLOCKS = [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)]


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    in_channels: int
    out_channels: int

    def __post_init__(self):
        if self.kind not in (CONV, POOL):
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        if self.kind == POOL and self.in_channels != self.out_channels:
            raise ValidationError(f"pool layer {self.name} must preserve channels")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValidationError(f"layer {self.name} has non-positive channel count")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValidationError("network spec has no layers")
        names = [l.name for l in layers]
        if len(set(names)) != len(names):
            raise ValidationError("layer names must be unique")
        if layers[0].in_channels != 3:
            raise ValidationError("first layer must read 3 image channels")
        for prev, cur in zip(layers, layers[1:]):
            if cur.in_channels != prev.out_channels:
                raise ValidationError(
                    f"channel chain broken at {cur.name}: reads {cur.in_channels}, "
                    f"{prev.name} produces {prev.out_channels}"
                )
        object.__setattr__(self, "layers", layers)

    def index_of(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise ValidationError(f"unknown layer name {name!r}")

    def layer(self, name: str) -> LayerSpec:
        return self.layers[self.index_of(name)]

    def up_to(self, name: str) -> tuple[LayerSpec, ...]:
        """All layers at or below the named one, in order."""
        return self.layers[: self.index_of(name) + 1]

    def conv_layers(self) -> tuple[LayerSpec, ...]:
        return tuple(l for l in self.layers if l.kind == CONV)

    def pool_count_below(self, name: str) -> int:
        """Number of pool layers at or below the named layer."""
        return sum(1 for l in self.up_to(name) if l.kind == POOL)

    def required_divisor(self, name: str) -> int:
        """Spatial dims must be divisible by this for a forward pass to `name`."""
        return 2 ** self.pool_count_below(name)

    def validate_image_dims(self, height: int, width: int, up_to: str) -> None:
        div = self.required_divisor(up_to)
        if height % div != 0 or width % div != 0:
            raise ValidationError(
                f"image dims {height}x{width} do not survive pooling up to "
                f"{up_to!r}: both must be divisible by {div}"
            )


def build_vgg19_spec() -> NetworkSpec:
    """The fixed 16-conv / 5-pool VGG-19 trunk, conv1_1 .. conv5_4, pool1 .. pool5."""
    layers: list[LayerSpec] = []
    in_ch = 3
    for block, (n_convs, width) in enumerate(_VGG19_BLOCKS, start=1):
        for i in range(1, n_convs + 1):
            layers.append(LayerSpec(f"conv{block}_{i}", CONV, in_ch, width))
            in_ch = width
        layers.append(LayerSpec(f"pool{block}", POOL, width, width))
    return NetworkSpec(tuple(layers))


@dataclass(frozen=True)
class Network:
    spec: NetworkSpec
    weights: dict[str, ConvWeights]

    def __post_init__(self):
        for layer in self.spec.conv_layers():
            w = self.weights.get(layer.name)
            if w is None:
                raise ValidationError(f"missing weights for layer {layer.name}")
            if w.out_channels != layer.out_channels or w.in_channels != layer.in_channels:
                raise DimensionError(
                    f"weights for {layer.name} are {w.out_channels}x{w.in_channels}, "
                    f"spec says {layer.out_channels}x{layer.in_channels}"
                )
        extra = set(self.weights) - {l.name for l in self.spec.conv_layers()}
        if extra:
            raise ValidationError(f"weights supplied for unknown layers: {sorted(extra)}")


@dataclass
class ActivationSet:
    """Every activation a backward pass needs, for layers at or below `up_to`.

    outputs holds post-nonlinearity / post-pool tensors; preacts the conv
    outputs before rectification; pool_ctx the pooling bookkeeping.
    """

    up_to: str
    pool_mode: str
    image: np.ndarray
    outputs: dict[str, np.ndarray] = field(default_factory=dict)
    preacts: dict[str, np.ndarray] = field(default_factory=dict)
    pool_ctx: dict[str, PoolContext] = field(default_factory=dict)


def forward(
    network: Network, image: np.ndarray, up_to: str, pool_mode: str = "avg"
) -> ActivationSet:
    """Run the image through every layer at or below `up_to`, capturing all
    activations.  Dims are validated before any compute."""
    image = as_feature_tensor(image, channels=3)
    spec = network.spec
    spec.validate_image_dims(image.shape[1], image.shape[2], up_to)
    if pool_mode not in ("avg", "max"):
        raise ValidationError(f"unknown pooling mode {pool_mode!r}")
    acts = ActivationSet(up_to=up_to, pool_mode=pool_mode, image=image)
    current = image
    for layer in spec.up_to(up_to):
        if layer.kind == CONV:
            pre = conv3x3_forward(current, network.weights[layer.name])
            current = relu_forward(pre)
            acts.preacts[layer.name] = pre
        else:
            current, ctx = pool2x2_forward(current, pool_mode)
            acts.pool_ctx[layer.name] = ctx
        acts.outputs[layer.name] = current
    return acts


def backward_to_pixels(
    network: Network, acts: ActivationSet, injected: dict[str, np.ndarray]
) -> np.ndarray:
    """Pull injected per-layer activation gradients back to the pixels.

    The backward sweep walks the sequential graph top-down, adding each
    layer's injected term as it passes; the result is the sum over injected
    layers of the individual pulled-back gradients.
    """
    if not injected:
        raise UsageError("no gradients injected")
    layers = network.spec.up_to(acts.up_to)
    names = {l.name for l in layers}
    for name, g in injected.items():
        if name not in names or name not in acts.outputs:
            raise UsageError(f"injected layer {name!r} is not in the activation set")
        if g.shape != acts.outputs[name].shape:
            raise DimensionError(
                f"injected gradient for {name} has shape {g.shape}, "
                f"activations have {acts.outputs[name].shape}"
            )
    grad = np.zeros_like(acts.outputs[layers[-1].name])
    for layer in reversed(layers):
        if layer.name in injected:
            grad = grad + injected[layer.name]
        if layer.kind == CONV:
            grad = relu_backward(grad, acts.preacts[layer.name])
            grad = conv3x3_backward_input(grad, network.weights[layer.name])
        else:
            grad = pool2x2_backward(grad, acts.pool_ctx[layer.name], acts.pool_mode)
    return grad


def random_init(spec: NetworkSpec, seed: int, scale: float = 0.1) -> Network:
    """Weights i.i.d. Gaussian(0, scale^2) from a seeded generator; biases zero."""
    if scale <= 0:
        raise ValidationError("scale must be > 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = {}
    for layer in spec.conv_layers():
        kernel = rng.normal(0.0, scale, size=(layer.out_channels, layer.in_channels, 3, 3))
        weights[layer.name] = ConvWeights(kernel, np.zeros(layer.out_channels))
    return Network(spec, weights)


def save_weights(network: Network, path) -> None:
    conv_layers = network.spec.conv_layers()
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<I", len(conv_layers)))
        for layer in conv_layers:
            w = network.weights[layer.name]
            name_bytes = layer.name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<II", w.out_channels, w.in_channels))
            fh.write(w.kernel.astype("<f4").tobytes(order="C"))
            fh.write(w.bias.astype("<f4").tobytes(order="C"))


def load_weights(path, spec: NetworkSpec) -> Network:
    """Parse a CNNW0001 file against `spec`; errors name the offending layer."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(WEIGHT_MAGIC)] != WEIGHT_MAGIC:
        raise ParseError(f"{path}: bad magic, not a CNNW0001 weight file")
    offset = len(WEIGHT_MAGIC)

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise ParseError(f"{path}: truncated while reading {what} at byte {offset}")
        chunk = blob[offset:offset + n]
        offset += n
        return chunk

    (layer_count,) = struct.unpack("<I", take(4, "layer count"))
    conv_layers = spec.conv_layers()
    if layer_count != len(conv_layers):
        raise ParseError(
            f"{path}: file has {layer_count} conv layers, spec expects {len(conv_layers)}"
        )
    weights: dict[str, ConvWeights] = {}
    for layer in conv_layers:
        (name_len,) = struct.unpack("<H", take(2, f"name length of {layer.name}"))
        name = take(name_len, f"name of {layer.name}").decode("utf-8")
        if name != layer.name:
            raise ParseError(
                f"{path}: expected layer {layer.name!r} next, file has {name!r}"
            )
        out_ch, in_ch = struct.unpack("<II", take(8, f"dims of {name}"))
        if out_ch != layer.out_channels or in_ch != layer.in_channels:
            raise ParseError(
                f"{path}: layer {name} has dims {out_ch}x{in_ch}, "
                f"spec expects {layer.out_channels}x{layer.in_channels}"
            )
        kernel_bytes = take(out_ch * in_ch * 9 * 4, f"kernel of {name}")
        bias_bytes = take(out_ch * 4, f"bias of {name}")
        kernel = np.frombuffer(kernel_bytes, dtype="<f4").reshape(out_ch, in_ch, 3, 3)
        bias = np.frombuffer(bias_bytes, dtype="<f4")
        ensure_finite(kernel, f"{path}: kernel of {name}")
        ensure_finite(bias, f"{path}: bias of {name}")
        weights[name] = ConvWeights(kernel.astype(np.float64), bias.astype(np.float64))
    if offset != len(blob):
        raise ParseError(f"{path}: {len(blob) - offset} trailing bytes after last layer")
    return Network(spec, weights)


DEAD_FILTER_EPS = 1e-12


def _mean_activations(outputs: list[np.ndarray]) -> np.ndarray:
    """Per-filter mean over images and positions; images may differ in size."""
    total = np.zeros(outputs[0].shape[0])
    count = 0
    for out in outputs:
        total += out.reshape(out.shape[0], -1).sum(axis=1)
        count += out.shape[1] * out.shape[2]
    return total / count


def measure_mean_activations(
    network: Network, calibration_images: list[np.ndarray], pool_mode: str = "avg"
) -> dict[str, np.ndarray]:
    """Per-filter mean post-ReLU activation of every conv layer over the set."""
    if not calibration_images:
        raise ValidationError("calibration set is empty")
    top = network.spec.conv_layers()[-1].name
    sets = [forward(network, img, top, pool_mode) for img in calibration_images]
    return {
        layer.name: _mean_activations([a.outputs[layer.name] for a in sets])
        for layer in network.spec.conv_layers()
    }


def rescale_weights(
    network: Network, calibration_images: list[np.ndarray], pool_mode: str = "avg"
) -> Network:
    """Renormalize so every filter's mean activation over the set equals one.

    Processes conv layers bottom-up: each layer is measured with all earlier
    layers already rescaled, its kernels and bias are divided by the measured
    per-filter means, and the next conv layer's kernel slices reading those
    channels are multiplied by the same factors.  Compensation rides through
    pooling because both modes are positively homogeneous per channel, so
    everything above the rescaled layer is preserved exactly.

    Filters whose mean activation is <= 1e-12 cannot be rescaled; they are all
    collected and reported in a DeadFilterError rather than divided silently.
    """
    if not calibration_images:
        raise ValidationError("calibration set is empty")
    spec = network.spec
    images = [as_feature_tensor(img, channels=3) for img in calibration_images]
    conv_names = [l.name for l in spec.conv_layers()]
    top_conv = conv_names[-1]
    for img in images:
        spec.validate_image_dims(img.shape[1], img.shape[2], top_conv)

    new_weights = dict(network.weights)
    # One sweep: per image, carry the current activation through the already
    # rescaled prefix of the net.
    currents = list(images)
    next_conv = {a: b for a, b in zip(conv_names, conv_names[1:])}
    for layer in spec.up_to(top_conv):
        if layer.kind == POOL:
            currents = [pool2x2_forward(c, pool_mode)[0] for c in currents]
            continue
        w = new_weights[layer.name]
        outs = [relu_forward(conv3x3_forward(c, w)) for c in currents]
        a = _mean_activations(outs)
        dead = np.flatnonzero(a <= DEAD_FILTER_EPS)
        if dead.size:
            raise DeadFilterError([f"{layer.name}[{i}]" for i in dead])
        new_weights[layer.name] = ConvWeights(
            w.kernel / a[:, None, None, None], w.bias / a
        )
        follower = next_conv.get(layer.name)
        if follower is not None:
            fw = new_weights[follower]
            new_weights[follower] = ConvWeights(
                fw.kernel * a[None, :, None, None], fw.bias
            )
        currents = [out / a[:, None, None] for out in outs]
    return Network(spec, new_weights)
