"""The texture model: feature-correlation statistics and their losses.

A texture is summarized per layer by one of three statistics computed on the
layer's feature maps F (channels x positions):

* ``gram`` -- the matrix of inner products between pairs of feature maps,
  G[i][j] = sum_pos F[i][pos] * F[j][pos].  Spatially stationary by
  construction: permuting positions leaves it unchanged.
* ``pca:K`` -- the same matrix computed on the top-K principal components of
  the features, compressing the description.
* ``mean`` -- the per-channel spatial mean.

The per-layer loss between a target statistic and the statistic of the image
being generated is a normalized squared distance,

    E = 1 / (4 n^2 m^2) * sum((G - G_hat)^2)        (gram / pca, n = matrix dim)
    E = 1 / (4 n)       * sum((mu - mu_hat)^2)      (mean)

and the total loss is the weighted sum over layers.  The analytic gradient of
E with respect to the layer activations is

    dE/dF_hat = 1 / (n^2 m^2) * (G_hat - G) @ F_hat

gated to zero where F_hat <= 0 (the rectifier's subgradient); its correctness
is pinned by finite differences, not transcription.

Descriptor files use the GRMD0001 format described at `save_descriptor`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParseError, UsageError, ValidationError
from .network import Network, NetworkSpec, forward

DESCRIPTOR_MAGIC = b"GRMD0001"

_KIND_CODES = {"gram": 0, "pca": 1, "mean": 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class Statistic:
    """Which per-layer statistic a configuration uses: gram, pca:K, or mean."""

    kind: str
    k: int | None = None

    def __post_init__(self):
        if self.kind not in ("gram", "pca", "mean"):
            raise ValidationError(f"unknown statistic kind {self.kind!r}")
        if self.kind == "pca":
            if self.k is None or self.k < 1:
                raise ValidationError("pca statistic needs k >= 1")
        elif self.k is not None:
            raise ValidationError(f"{self.kind} statistic takes no k")

    @classmethod
    def parse(cls, text: str) -> "Statistic":
        """Parse the CLI spelling: "gram", "mean", or "pca:K"."""
        if text in ("gram", "mean"):
            return cls(text)
        if text.startswith("pca:"):
            try:
                return cls("pca", int(text[4:]))
            except ValueError:
                raise ValidationError(f"bad pca statistic {text!r}, want pca:K")
        raise ValidationError(f"unknown statistic {text!r} (gram | pca:K | mean)")

    def __str__(self) -> str:
        return f"pca:{self.k}" if self.kind == "pca" else self.kind


@dataclass(frozen=True)
class PCABasis:
    """Top-k principal directions of one layer's feature vectors.

    mean centers the features; basis rows are orthonormal.
    """

    layer: str
    k: int
    mean: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        basis = np.asarray(self.basis, dtype=np.float64)
        if basis.ndim != 2 or basis.shape != (self.k, mean.shape[0]):
            raise DimensionError(
                f"basis must be (k, n_features) = ({self.k}, {mean.shape[0]}), got {basis.shape}"
            )
        if self.k > mean.shape[0]:
            raise ValidationError(f"k = {self.k} exceeds feature count {mean.shape[0]}")
        gram = basis @ basis.T
        if np.max(np.abs(gram - np.eye(self.k))) > 1e-8:
            raise ValidationError("basis rows are not orthonormal")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "basis", basis)

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class DescriptorEntry:
    """One layer's statistic plus the dimensions its loss normalization uses.

    n is the statistic dimension (the layer's channel count, or k under pca);
    m is the vectorized spatial size of the layer's feature maps.
    """

    name: str
    kind: str
    n: int
    m: int
    values: np.ndarray
    basis: PCABasis | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if self.kind in ("gram", "pca"):
            if values.shape != (self.n, self.n):
                raise DimensionError(
                    f"{self.name}: {self.kind} values must be {self.n}x{self.n}, got {values.shape}"
                )
        elif self.kind == "mean":
            if values.shape != (self.n,):
                raise DimensionError(
                    f"{self.name}: mean values must have length {self.n}, got {values.shape}"
                )
        else:
            raise ValidationError(f"unknown statistic kind {self.kind!r}")
        if self.kind == "pca" and (self.basis is None or self.basis.k != self.n):
            raise ValidationError(f"{self.name}: pca entry needs a matching basis")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class TextureDescriptor:
    entries: tuple[DescriptorEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ValidationError("descriptor has no entries")
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ValidationError("descriptor has duplicate layer entries")
        object.__setattr__(self, "entries", entries)

    def layer_names(self) -> list[str]:
        return [e.name for e in self.entries]

    def entry(self, name: str) -> DescriptorEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise UsageError(f"descriptor has no entry for layer {name!r}")


def _as_feature_matrix(features: np.ndarray) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 3:
        return f.reshape(f.shape[0], -1)
    if f.ndim != 2:
        raise DimensionError(f"features must be 2-d or 3-d, got shape {f.shape}")
    return f


def _canonical_position_order(f: np.ndarray) -> np.ndarray:
    # Columns sorted lexicographically by value.  Any spatial permutation of
    # the input maps to the same column sequence, which pins the floating
    # point reduction order and makes the statistics below *exactly*
    # permutation-invariant, not just up to rounding.  The contiguous copy
    # matters: summation blocking differs across memory layouts.
    return np.ascontiguousarray(f[:, np.lexsort(f[::-1])])


def gram_matrix(features: np.ndarray) -> np.ndarray:
    """G[i][j] = sum over positions of F[i] * F[j]; exactly symmetric.

    Accepts (channels, height, width) or an already vectorized
    (channels, positions) array.  Positions are reduced in a canonical order,
    so spatially permuting the input leaves the result bit-identical; the
    upper triangle is computed once and mirrored so G[i][j] == G[j][i] holds
    bit-exactly too.
    """
    f = _canonical_position_order(_as_feature_matrix(features))
    g = f @ f.T
    upper = np.triu(g)
    return upper + np.triu(g, 1).T


def layer_loss(g: np.ndarray, g_hat: np.ndarray, n: int, m: int) -> float:
    """Normalized squared Frobenius distance between two gram matrices."""
    g = np.asarray(g, dtype=np.float64)
    g_hat = np.asarray(g_hat, dtype=np.float64)
    if g.shape != (n, n) or g_hat.shape != (n, n):
        raise DimensionError(
            f"gram matrices must both be {n}x{n}, got {g.shape} and {g_hat.shape}"
        )
    diff = g - g_hat
    return float(np.sum(diff * diff) / (4.0 * n * n * m * m))


def layer_loss_grad(
    f_hat: np.ndarray, g: np.ndarray, g_hat: np.ndarray, n: int, m: int
) -> np.ndarray:
    """Gradient of layer_loss(g, gram(f_hat)) with respect to f_hat, gated.

    Returns (1 / (n^2 m^2)) * (g_hat - g) @ f_hat, zeroed where f_hat <= 0,
    in the same shape as f_hat.
    """
    f = np.asarray(f_hat, dtype=np.float64)
    flat = f.reshape(n, -1) if f.ndim == 3 else f
    if flat.ndim != 2 or flat.shape[0] != n or flat.shape[1] != m:
        raise DimensionError(f"activations must view as {n}x{m}, got shape {f.shape}")
    g = np.asarray(g, dtype=np.float64)
    g_hat = np.asarray(g_hat, dtype=np.float64)
    if g.shape != (n, n) or g_hat.shape != (n, n):
        raise DimensionError("gram matrices do not match the activation dims")
    grad = ((g_hat - g) @ flat) / (float(n) * n * m * m)
    grad = np.where(flat > 0.0, grad, 0.0)
    return grad.reshape(f.shape)


def mean_statistic(features: np.ndarray) -> np.ndarray:
    """Per-channel mean over spatial positions.

    Each channel is summed in sorted value order, so the result is exactly
    invariant under spatial permutation.
    """
    f = np.ascontiguousarray(_as_feature_matrix(features))
    return np.sort(f, axis=1).sum(axis=1) / f.shape[1]


def mean_loss(mu: np.ndarray, mu_hat: np.ndarray, n: int) -> float:
    """Quadratic distance between channel-mean vectors, 1/(4n) normalized."""
    mu = np.asarray(mu, dtype=np.float64)
    mu_hat = np.asarray(mu_hat, dtype=np.float64)
    if mu.shape != (n,) or mu_hat.shape != (n,):
        raise DimensionError(f"mean vectors must have length {n}")
    diff = mu - mu_hat
    return float(np.sum(diff * diff) / (4.0 * n))


def mean_loss_grad(
    f_hat: np.ndarray, mu: np.ndarray, mu_hat: np.ndarray, n: int, m: int
) -> np.ndarray:
    """Gradient of mean_loss(mu, mean(f_hat)) with respect to f_hat, gated."""
    f = np.asarray(f_hat, dtype=np.float64)
    flat = f.reshape(n, -1) if f.ndim == 3 else f
    if flat.shape != (n, m):
        raise DimensionError(f"activations must view as {n}x{m}, got shape {f.shape}")
    per_channel = (np.asarray(mu_hat) - np.asarray(mu)) / (2.0 * n * m)
    grad = np.broadcast_to(per_channel[:, None], (n, m)).copy()
    grad = np.where(flat > 0.0, grad, 0.0)
    return grad.reshape(f.shape)


def pca_fit(layer: str, feature_maps: list[np.ndarray], k: int) -> PCABasis:
    """Fit the top-k principal directions of a layer's feature vectors.

    feature_maps are that layer's activations from one or more images; every
    spatial position contributes one sample.  The basis rows are the leading
    eigenvectors of the feature covariance, orthonormal, each sign-fixed so
    its largest-magnitude component is positive.
    """
    if not feature_maps:
        raise ValidationError("pca_fit needs at least one feature map")
    flats = []
    n_features = np.asarray(feature_maps[0]).shape[0]
    for fm in feature_maps:
        f = np.asarray(fm, dtype=np.float64)
        if f.shape[0] != n_features:
            raise DimensionError("feature maps disagree on channel count")
        flats.append(f.reshape(n_features, -1))
    samples = np.concatenate(flats, axis=1)
    n_samples = samples.shape[1]
    if n_samples < n_features:
        raise ValidationError(
            f"need at least {n_features} sample positions, got {n_samples}"
        )
    if not 1 <= k <= n_features:
        raise ValidationError(f"k must be in 1..{n_features}, got {k}")
    mean = samples.mean(axis=1)
    centered = samples - mean[:, None]
    cov = (centered @ centered.T) / n_samples
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    rank = int(np.sum(eigvals > max(eigvals[0], 0.0) * 1e-10))
    if rank < k:
        raise ValidationError(
            f"{layer}: feature covariance has rank {rank}, cannot extract {k} components"
        )
    basis = eigvecs[:, :k].T.copy()
    for row in basis:
        peak = np.argmax(np.abs(row))
        if row[peak] < 0:
            row *= -1.0
    return PCABasis(layer, k, mean, basis)


def project_features(features: np.ndarray, basis: PCABasis) -> np.ndarray:
    """Project onto the basis after centering: rows = basis @ (F - mean)."""
    f = np.asarray(features, dtype=np.float64)
    flat = f.reshape(f.shape[0], -1)
    if flat.shape[0] != basis.n_features:
        raise DimensionError(
            f"features have {flat.shape[0]} channels, basis expects {basis.n_features}"
        )
    return basis.basis @ (flat - basis.mean[:, None])


def count_parameters(spec: NetworkSpec, layers: list[str], statistic: Statistic) -> int:
    """Number of scalar parameters the configured texture model matches."""
    total = 0
    for name in layers:
        n = spec.layer(name).out_channels
        if statistic.kind == "gram":
            total += n * (n + 1) // 2
        elif statistic.kind == "pca":
            if statistic.k > n:
                raise ValidationError(
                    f"pca k = {statistic.k} exceeds {name}'s {n} feature maps"
                )
            total += statistic.k * (statistic.k + 1) // 2
        else:
            total += n
    return total


def entry_from_activations(
    name: str,
    features: np.ndarray,
    statistic: Statistic,
    basis: PCABasis | None = None,
) -> DescriptorEntry:
    """Compute one layer's statistic from its feature maps."""
    f = np.asarray(features, dtype=np.float64)
    m = int(np.prod(f.shape[1:]))
    if statistic.kind == "gram":
        return DescriptorEntry(name, "gram", f.shape[0], m, gram_matrix(f))
    if statistic.kind == "mean":
        return DescriptorEntry(name, "mean", f.shape[0], m, mean_statistic(f))
    if basis is None:
        raise UsageError(f"{name}: pca statistic needs a fitted basis")
    projected = project_features(f, basis)
    return DescriptorEntry(name, "pca", basis.k, m, gram_matrix(projected), basis)


def entry_loss_and_grad(
    target: DescriptorEntry, features: np.ndarray, strict_m: bool = True
) -> tuple[float, np.ndarray]:
    """Per-layer loss against a target entry and its gradient in the layer.

    The gradient is with respect to the layer activations, rectifier-gated;
    for pca entries it is pulled back through the (linear) projection before
    gating, since the gate belongs to the underlying layer activations.

    With strict_m=False a map-size mismatch against the target is allowed
    (the caller acknowledged the statistic scales differ) and the loss is
    normalized by the current map size.
    """
    f = np.asarray(features, dtype=np.float64)
    flat = f.reshape(f.shape[0], -1)
    m = flat.shape[1]
    if strict_m and m != target.m:
        raise DimensionError(
            f"{target.name}: activations have {m} positions, target was built with {target.m}"
        )
    if target.kind == "gram":
        if flat.shape[0] != target.n:
            raise DimensionError(f"{target.name}: channel count mismatch")
        g_hat = gram_matrix(flat)
        loss = layer_loss(target.values, g_hat, target.n, m)
        grad = layer_loss_grad(flat, target.values, g_hat, target.n, m)
    elif target.kind == "mean":
        if flat.shape[0] != target.n:
            raise DimensionError(f"{target.name}: channel count mismatch")
        mu_hat = mean_statistic(flat)
        loss = mean_loss(target.values, mu_hat, target.n)
        grad = mean_loss_grad(flat, target.values, mu_hat, target.n, m)
    else:
        basis = target.basis
        projected = project_features(flat, basis)
        g_hat = gram_matrix(projected)
        loss = layer_loss(target.values, g_hat, target.n, m)
        n2, m2 = float(target.n) * target.n, float(m) * m
        grad_proj = ((g_hat - target.values) @ projected) / (n2 * m2)
        grad = basis.basis.T @ grad_proj
        grad = np.where(flat > 0.0, grad, 0.0)
    return loss, grad.reshape(f.shape)


def total_loss(
    target: TextureDescriptor,
    current: TextureDescriptor,
    weighting: dict[str, float],
) -> float:
    """Weighted sum of per-layer losses; descriptors must be comparable."""
    if target.layer_names() != current.layer_names():
        t, c = set(target.layer_names()), set(current.layer_names())
        odd = sorted(t.symmetric_difference(c)) or target.layer_names()
        raise UsageError(f"descriptors disagree on layer set, first mismatch: {odd[0]}")
    for w in weighting.values():
        if w < 0:
            raise ValidationError("layer weights must be >= 0")
    if not any(w > 0 for w in weighting.values()):
        raise ValidationError("at least one layer weight must be positive")
    total = 0.0
    for te, ce in zip(target.entries, current.entries):
        if te.kind != ce.kind or te.n != ce.n or te.m != ce.m:
            raise UsageError(
                f"descriptors disagree at layer {te.name}: "
                f"{te.kind}/{te.n}/{te.m} vs {ce.kind}/{ce.n}/{ce.m}"
            )
        w = weighting.get(te.name, 0.0)
        if w == 0.0:
            continue
        if te.kind == "mean":
            total += w * mean_loss(te.values, ce.values, te.n)
        else:
            total += w * layer_loss(te.values, ce.values, te.n, te.m)
    return total


def describe(
    network: Network,
    image: np.ndarray,
    layers: list[str],
    statistic: Statistic,
    pool_mode: str = "avg",
    bases: dict[str, PCABasis] | None = None,
) -> TextureDescriptor:
    """Compute the texture description of an image over the given layers.

    Under pca, bases fitted elsewhere may be supplied; by default each layer's
    basis is fitted on this image's own activations, and either way the basis
    rides along inside the descriptor so synthesis shares it exactly.
    """
    if not layers:
        raise ValidationError("no layers configured")
    spec = network.spec
    indices = [spec.index_of(name) for name in layers]
    top = spec.layers[max(indices)].name
    acts = forward(network, image, top, pool_mode)
    entries = []
    for name in layers:
        f = acts.outputs[name]
        basis = None
        if statistic.kind == "pca":
            if bases is not None:
                if name not in bases:
                    raise UsageError(f"no pca basis supplied for layer {name!r}")
                basis = bases[name]
            else:
                basis = pca_fit(name, [f], statistic.k)
        entries.append(entry_from_activations(name, f, statistic, basis))
    return TextureDescriptor(tuple(entries))


def export_descriptor_vector(descriptor: TextureDescriptor) -> np.ndarray:
    """Flatten a descriptor to one vector.

    Entries are concatenated in layer order; gram/pca entries contribute their
    upper triangle row-major ((0,0), (0,1), ..., (1,1), (1,2), ...), mean
    entries their vector.  Length equals count_parameters of the same config.
    """
    parts = []
    for e in descriptor.entries:
        if e.kind == "mean":
            parts.append(e.values)
        else:
            iu = np.triu_indices(e.n)
            parts.append(e.values[iu])
    return np.concatenate(parts)


def save_descriptor(descriptor: TextureDescriptor, path) -> None:
    """Write the GRMD0001 binary format.

    Little-endian: magic "GRMD0001"; u32 entry count; per entry u16 name
    length + UTF-8 name, u8 kind (0 gram, 1 pca, 2 mean), u32 n, u32 m, then
    the payload: gram/pca the n(n+1)/2 f64 upper triangle row-major, mean the
    n f64 values.  Pca entries append u32 k, u32 n_features, n_features f64
    centering mean and k*n_features f64 basis rows.
    """
    with open(path, "wb") as fh:
        fh.write(DESCRIPTOR_MAGIC)
        fh.write(struct.pack("<I", len(descriptor.entries)))
        for e in descriptor.entries:
            name_bytes = e.name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<BII", _KIND_CODES[e.kind], e.n, e.m))
            if e.kind == "mean":
                fh.write(e.values.astype("<f8").tobytes())
            else:
                iu = np.triu_indices(e.n)
                fh.write(e.values[iu].astype("<f8").tobytes())
            if e.kind == "pca":
                b = e.basis
                fh.write(struct.pack("<II", b.k, b.n_features))
                fh.write(b.mean.astype("<f8").tobytes())
                fh.write(b.basis.astype("<f8").tobytes(order="C"))


def load_descriptor(path) -> TextureDescriptor:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(DESCRIPTOR_MAGIC)] != DESCRIPTOR_MAGIC:
        raise ParseError(f"{path}: bad magic, not a GRMD0001 descriptor file")
    offset = len(DESCRIPTOR_MAGIC)

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise ParseError(f"{path}: truncated while reading {what} at byte {offset}")
        chunk = blob[offset:offset + n]
        offset += n
        return chunk

    (count,) = struct.unpack("<I", take(4, "entry count"))
    entries = []
    for i in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"entry {i} name length"))
        name = take(name_len, f"entry {i} name").decode("utf-8")
        kind_code, n, m = struct.unpack("<BII", take(9, f"{name} header"))
        if kind_code not in _KIND_NAMES:
            raise ParseError(f"{path}: entry {name} has unknown statistic kind {kind_code}")
        kind = _KIND_NAMES[kind_code]
        if kind == "mean":
            values = np.frombuffer(take(8 * n, f"{name} payload"), dtype="<f8").copy()
        else:
            tri = np.frombuffer(
                take(8 * (n * (n + 1) // 2), f"{name} payload"), dtype="<f8"
            )
            values = np.zeros((n, n))
            iu = np.triu_indices(n)
            values[iu] = tri
            values = values + np.triu(values, 1).T
        basis = None
        if kind == "pca":
            k, n_features = struct.unpack("<II", take(8, f"{name} basis header"))
            if k != n:
                raise ParseError(f"{path}: entry {name} has k = {k} but matrix dim {n}")
            mean = np.frombuffer(take(8 * n_features, f"{name} basis mean"), dtype="<f8")
            bas = np.frombuffer(
                take(8 * k * n_features, f"{name} basis rows"), dtype="<f8"
            ).reshape(k, n_features)
            basis = PCABasis(name, k, mean.copy(), bas.copy())
        entries.append(DescriptorEntry(name, kind, n, m, values, basis))
    if offset != len(blob):
        raise ParseError(f"{path}: {len(blob) - offset} trailing bytes after last entry")
    return TextureDescriptor(tuple(entries))
