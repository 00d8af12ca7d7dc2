"""Synthetic ground truth for testing the solvers at desk scale."""

from dataclasses import dataclass

import numpy as np

from .echogram import EchogramCube, unflatten
from .errors import ParameterError

FIELD_FREQS_KHZ = (38.0, 120.0, 200.0)
START_DAY = np.datetime64("2017-08-21")


@dataclass(frozen=True)
class SynthSpec:
    n_depth: int = 20
    n_ping: int = 24
    n_freq: int = 3
    n_day: int = 60
    rank: int = 3
    sparsity: float = 0.0
    noise_sigma: float = 0.0
    smoothness: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("n_depth", "n_ping", "n_freq", "n_day"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ParameterError(f"{name} must be a positive integer")
        if int(self.rank) != self.rank or self.rank < 0:
            raise ParameterError("rank must be a nonnegative integer")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ParameterError("sparsity must lie in [0, 1]")
        if not self.noise_sigma >= 0 or not self.smoothness >= 0:
            raise ParameterError("noise_sigma and smoothness must be >= 0")

    @property
    def n_features(self):
        return self.n_depth * self.n_ping * self.n_freq

    @property
    def layout(self):
        return (self.n_depth, self.n_ping, self.n_freq)


def gen_lowrank_sparse(spec):
    """Return ``(L0, S0, X)`` with L0 = A B^T (Gaussian factors) and S0
    supported on ``round(sparsity * D * T)`` random entries, uniform on
    [-5 max|L0|, 5 max|L0|] (scale 5 when L0 is zero)."""
    rng = np.random.default_rng(spec.seed)
    d, t, k = spec.n_features, spec.n_day, spec.rank
    a = rng.standard_normal((d, k))
    b = rng.standard_normal((t, k))
    low = a @ b.T if k else np.zeros((d, t))
    mag = 5.0 * np.abs(low).max() if np.any(low) else 5.0
    sparse = sparse_outliers((d, t), spec.sparsity, mag, rng)
    x = low + sparse
    if spec.noise_sigma > 0:
        x = x + rng.normal(0.0, spec.noise_sigma, size=x.shape)
    return low, sparse, x


def sparse_outliers(shape, fraction, magnitude, rng):
    """Matrix with ``round(fraction * size)`` random entries uniform on
    [-magnitude, magnitude] and zeros elsewhere."""
    out = np.zeros(shape)
    n_bad = int(round(fraction * out.size))
    support = rng.choice(out.size, size=n_bad, replace=False)
    out.flat[support] = rng.uniform(-magnitude, magnitude, size=n_bad)
    return out


def _gauss(u, center, width):
    return np.exp(-0.5 * ((u - center) / width) ** 2)


def _pattern_images(spec, rng):
    z = (np.arange(spec.n_depth) + 0.5) / spec.n_depth  # 0 shallow .. 1 deep
    u = (np.arange(spec.n_ping) + 0.5) / spec.n_ping  # fraction of the day
    zz, uu = np.meshgrid(z, u, indexing="ij")
    # migrating band: shallow at night, deep around midday
    band_depth = 0.15 + 0.65 * np.clip(1.6 - np.abs(4.0 * uu - 2.0), 0.0, 1.0)
    shapes = [
        _gauss(zz, band_depth, 0.07),
        _gauss(zz, 0.3, 0.05) * np.ones_like(uu),
        _gauss(zz, 0.6, 0.1) * _gauss(uu, 0.5, 0.12),
    ]
    responses = [np.array([1.0, 0.7, 0.45]), np.array([0.35, 0.75, 1.0]),
                 np.array([0.8, 1.0, 0.55])]
    images = []
    for k in range(spec.rank):
        if k < len(shapes):
            shape, resp = shapes[k], responses[k]
        else:
            cz, cu = rng.uniform(0.1, 0.9, size=2)
            shape = _gauss(zz, cz, 0.08) * _gauss(uu, cu, 0.1)
            resp = rng.uniform(0.3, 1.0, size=3)
        if spec.n_freq > resp.size:
            resp = np.concatenate([resp, rng.uniform(0.3, 1.0, size=spec.n_freq - resp.size)])
        images.append(shape[:, :, None] * resp[None, None, :spec.n_freq])
    return images


def _smooth_walks(spec, rng):
    k, t = spec.rank, spec.n_day
    level = rng.uniform(0.5, 1.5, size=(k, 1))
    steps = spec.smoothness * rng.standard_normal((k, t))
    steps[:, 0] = 0.0
    walk = level + np.cumsum(steps, axis=1)
    kernel = np.ones(5) / 5.0
    padded = np.pad(walk, ((0, 0), (2, 2)), mode="edge")
    smooth = np.stack([np.convolve(row, kernel, mode="valid") for row in padded])
    return np.maximum(smooth, 0.0)


def gen_patterned_echogram(spec, amplitude=10.0):
    """Return ``(W0, H0, cube)``.

    Patterns (columns of W0): a diel-migration band, a fixed-depth layer and
    a daytime midwater aggregation, each with its own frequency response;
    extra ranks get random blobs.  Rows of H0 are smoothed random walks
    clamped at zero.  The cube holds ``W0 @ H0`` plus Gaussian noise,
    clipped to stay nonnegative.
    """
    rng = np.random.default_rng(spec.seed)
    images = _pattern_images(spec, rng)
    d = spec.n_features
    if images:
        w0 = amplitude * np.stack([img.reshape(d, order="F") for img in images], axis=1)
    else:
        w0 = np.zeros((d, 0))
    h0 = _smooth_walks(spec, rng)
    x = w0 @ h0
    if spec.noise_sigma > 0:
        x = np.maximum(x + rng.normal(0.0, spec.noise_sigma, size=x.shape), 0.0)
    return w0, h0, cube_from_matrix(x, spec.layout)


def cube_from_matrix(x, layout, freq_axis=None, start_day=START_DAY, depth_bin_m=5.0):
    """Wrap a flattened D x T matrix as a cube with synthetic axes."""
    n_depth, n_ping, n_freq = layout
    n_day = x.shape[1]
    if freq_axis is None:
        freq_axis = list(FIELD_FREQS_KHZ[:n_freq])
        freq_axis += [FIELD_FREQS_KHZ[-1] + 100.0 * (i + 1) for i in range(n_freq - len(freq_axis))]
    return EchogramCube(
        values=unflatten(x, layout),
        depth_axis=(np.arange(n_depth) + 0.5) * depth_bin_m,
        time_axis=np.arange(n_ping) * (86400.0 / n_ping),
        freq_axis=np.asarray(freq_axis, dtype=np.float64),
        day_axis=np.datetime64(start_day, "D") + np.arange(n_day),
        depth_bin_m=depth_bin_m,
        time_bin_s=86400.0 / n_ping,
    )
