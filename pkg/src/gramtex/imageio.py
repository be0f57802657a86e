"""8-bit image I/O and the bridge to preprocessed network tensors.

The wire format is binary PPM (P6, maxval 255) so test fixtures stay
bit-exact and dependency-free.  `preprocess` turns an 8-bit image into the
float tensor the network consumes (channel reorder, scale, per-channel mean
subtraction); `postprocess` is its exact inverse on in-range values, with
rounding half away from zero and clamping to [0, 255] for everything else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParseError, ValidationError


@dataclass(frozen=True)
class Image8:
    """Interleaved 8-bit RGB image; pixels has shape (height, width, 3)."""

    height: int
    width: int
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.uint8)
        if pixels.shape != (self.height, self.width, 3):
            raise DimensionError(
                f"pixels must be ({self.height}, {self.width}, 3), got {pixels.shape}"
            )
        object.__setattr__(self, "pixels", pixels)


@dataclass(frozen=True)
class PreprocessSpec:
    """Channel means are subtracted after reordering and scaling.

    channel_means[i] applies to tensor channel i (already reordered).
    """

    channel_means: tuple[float, float, float] = (0.0, 0.0, 0.0)
    channel_order: str = "rgb"
    scale: float = 1.0

    def __post_init__(self):
        if self.channel_order not in ("rgb", "bgr"):
            raise ValidationError(f"unknown channel order {self.channel_order!r}")
        if self.scale <= 0:
            raise ValidationError("scale must be > 0")


# Convention of the published VGG-19 training pipeline (recorded by the
# weight converter's sidecar metadata): BGR order, per-channel means on the
# 0..255 scale.
VGG19_PREPROCESS = PreprocessSpec(
    channel_means=(103.939, 116.779, 123.68), channel_order="bgr", scale=1.0
)


def load_ppm(path) -> Image8:
    """Parse a binary P6 PPM with maxval 255; parse errors carry byte offsets."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P6":
        raise ParseError(f"{path}: not a P6 PPM (magic at byte 0)")
    pos = 2

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(blob):
            c = blob[pos:pos + 1]
            if c == b"#":
                while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        if pos >= len(blob):
            raise ParseError(f"{path}: header truncated at byte {pos}")
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        return blob[start:pos]

    def parse_int(what: str) -> int:
        start = pos
        token = next_token()
        if not token.isdigit():
            raise ParseError(f"{path}: bad {what} {token!r} at byte {start}")
        return int(token)

    width = parse_int("width")
    height = parse_int("height")
    maxval = parse_int("maxval")
    if maxval != 255:
        raise ParseError(f"{path}: unsupported maxval {maxval}, only 255")
    if width < 1 or height < 1:
        raise ParseError(f"{path}: degenerate image size {width}x{height}")
    # Exactly one whitespace byte separates the header from the payload.
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise ParseError(f"{path}: missing whitespace before payload at byte {pos}")
    pos += 1
    expected = 3 * width * height
    payload = blob[pos:pos + expected]
    if len(payload) != expected:
        raise ParseError(
            f"{path}: payload truncated at byte {pos + len(payload)}, "
            f"need {expected} bytes"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Image8(height, width, pixels.copy())


def save_ppm(image: Image8, path) -> None:
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (image.width, image.height))
        fh.write(image.pixels.tobytes())


def _channel_permutation(order: str) -> list[int]:
    # Tensor channel c reads raw RGB sample _channel_permutation(order)[c].
    return [0, 1, 2] if order == "rgb" else [2, 1, 0]


def preprocess(image: Image8, spec: PreprocessSpec) -> np.ndarray:
    """Image8 -> float64 (3, H, W) tensor in the network's input space."""
    raw = image.pixels.astype(np.float64).transpose(2, 0, 1)
    perm = _channel_permutation(spec.channel_order)
    means = np.asarray(spec.channel_means, dtype=np.float64)
    return raw[perm] * spec.scale - means[:, None, None]


def postprocess(tensor: np.ndarray, spec: PreprocessSpec) -> Image8:
    """Inverse of preprocess: de-mean, unscale, reorder to RGB, round, clamp."""
    t = np.asarray(tensor, dtype=np.float64)
    if t.ndim != 3 or t.shape[0] != 3:
        raise DimensionError(f"expected a (3, H, W) tensor, got shape {t.shape}")
    means = np.asarray(spec.channel_means, dtype=np.float64)
    raw = (t + means[:, None, None]) / spec.scale
    perm = _channel_permutation(spec.channel_order)
    rgb = np.empty_like(raw)
    for c, p in enumerate(perm):
        rgb[p] = raw[c]
    rounded = np.copysign(np.floor(np.abs(rgb) + 0.5), rgb)
    clamped = np.clip(rounded, 0.0, 255.0).astype(np.uint8)
    return Image8(t.shape[1], t.shape[2], clamped.transpose(1, 2, 0))
