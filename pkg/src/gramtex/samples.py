"""Procedural sample textures and the bundled demo image.

The generators are seeded and fully deterministic; the bundled 64x64 PPM
under data/ was produced by `noise_texture(64, seed=7)` and is committed so
CLI examples and tests have a stable fixture to chew on.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .imageio import Image8


def sample_texture_path():
    """Filesystem path of the bundled 64x64 demo texture (PPM)."""
    return resources.files("gramtex").joinpath("data/texture64.ppm")


def tiled_texture(seed: int, tile: int = 16, reps: int = 4) -> Image8:
    """An exactly periodic texture: one random tile repeated reps x reps."""
    rng = np.random.Generator(np.random.PCG64(seed))
    patch = rng.integers(0, 256, size=(tile, tile, 3), dtype=np.uint8)
    pixels = np.tile(patch, (reps, reps, 1))
    side = tile * reps
    return Image8(side, side, pixels)


def noise_texture(size: int, seed: int, slope: float = 1.6) -> Image8:
    """Colored-noise texture with a natural-image-like power-law spectrum."""
    rng = np.random.Generator(np.random.PCG64(seed))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    radius = np.sqrt(fy * fy + fx * fx)
    shaping = 1.0 / (radius + 1.0 / size) ** slope
    base = _shaped_noise(rng, size, shaping)
    channels = []
    for _ in range(3):
        tint = _shaped_noise(rng, size, shaping)
        channels.append(0.75 * base + 0.25 * tint)
    stacked = np.stack(channels)
    lo, hi = stacked.min(), stacked.max()
    scaled = (stacked - lo) / (hi - lo) * 215.0 + 20.0
    return Image8(size, size, np.round(scaled).astype(np.uint8).transpose(1, 2, 0))


def _shaped_noise(rng, size, shaping):
    spectrum = np.fft.fft2(rng.standard_normal((size, size))) * shaping
    return np.real(np.fft.ifft2(spectrum))
