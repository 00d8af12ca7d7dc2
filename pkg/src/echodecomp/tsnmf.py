"""Temporally smooth NMF fitted by proximal alternating linearized minimization.

Cost::

    ||X - WH||_F^2 + eta ||H Delta||_F^2 + lam ||W||_1
        + beta_w ||W||_F^2 + beta_h ||H||_F^2,      W, H >= 0

with ``(H Delta)[:, j] = H[:, j] - H[:, j + 1]``.  Each PALM sweep takes a
projected (and, for W, soft-thresholded) gradient step on W and then on H
with step sizes set from the blockwise Lipschitz constants.
"""

import math
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .echogram import DataMatrix
from .errors import DomainError, NumericalError, ParameterError

CostParts = namedtuple("CostParts", "reconstruction smoothness l1_w frob_w frob_h")


@dataclass(frozen=True)
class TsnmfConfig:
    rank: int = 3
    eta: float = 500000.0
    lam: float = 0.0
    beta_w: float = 0.0
    beta_h: float = 0.0
    stop_ratio: float = 0.005
    stop_window: int = 5
    max_iter: int = 20000
    n_restarts: int = 320
    seed: int = 0
    init_scale: float = None
    safety: float = 1.01

    def __post_init__(self):
        if int(self.rank) != self.rank or self.rank < 1:
            raise ParameterError(f"rank must be a positive integer, got {self.rank!r}")
        for name in ("eta", "lam", "beta_w", "beta_h"):
            if not getattr(self, name) >= 0:
                raise ParameterError(f"{name} must be >= 0")
        if not 0 < self.stop_ratio < 1:
            raise ParameterError("stop_ratio must lie in (0, 1)")
        if int(self.stop_window) != self.stop_window or self.stop_window < 1:
            raise ParameterError("stop_window must be a positive integer")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ParameterError("max_iter must be a positive integer")
        if int(self.n_restarts) != self.n_restarts or self.n_restarts < 1:
            raise ParameterError("n_restarts must be a positive integer")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ParameterError("seed must be a nonnegative integer")
        if self.init_scale is not None and not self.init_scale > 0:
            raise ParameterError("init_scale must be positive")
        if not self.safety >= 1:
            raise ParameterError("safety factor must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class NmfModel:
    w: np.ndarray
    h: np.ndarray
    cost_trace: np.ndarray
    cost_parts: CostParts
    seed: int
    iterations: int
    converged: bool
    initial_cost: float = None

    @property
    def cost(self):
        if self.cost_trace.size == 0:
            return self.initial_cost
        return float(self.cost_trace[-1])

    @property
    def mse(self):
        d, t = self.w.shape[0], self.h.shape[1]
        return self.cost_parts.reconstruction / (d * t)

    def reconstruction(self):
        return self.w @ self.h


@dataclass(frozen=True, eq=False)
class NmfEnsemble:
    models: list
    best_index: int
    mse_per_run: np.ndarray

    @property
    def best(self):
        return self.models[self.best_index]

    @property
    def final_costs(self):
        return np.array([m.cost for m in self.models])


def difference_matrix(t):
    """T x (T-1) first-difference operator: +1 at (j, j), -1 at (j+1, j)."""
    if int(t) != t or t < 2:
        raise ParameterError(f"difference operator needs t >= 2, got {t!r}")
    t = int(t)
    delta = np.zeros((t, t - 1))
    j = np.arange(t - 1)
    delta[j, j] = 1.0
    delta[j + 1, j] = -1.0
    return delta


def difference_lipschitz(t):
    """Spectral norm of Delta Delta^T (largest path-Laplacian eigenvalue)."""
    if t < 2:
        return 0.0
    return 2.0 - 2.0 * math.cos(math.pi * (t - 1) / t)


def _check_shapes(x, w, h):
    if x.ndim != 2 or w.ndim != 2 or h.ndim != 2:
        raise ParameterError("x, w and h must be 2-D")
    if w.shape[0] != x.shape[0] or h.shape[1] != x.shape[1] or w.shape[1] != h.shape[0]:
        raise ParameterError(f"shapes do not conform: x{x.shape} w{w.shape} h{h.shape}")


def _as_matrix(x):
    if isinstance(x, DataMatrix):
        x = x.values
    return np.ascontiguousarray(x, dtype=np.float64)


def tsnmf_cost(x, w, h, cfg):
    """Return ``(total, CostParts)`` for the given factors."""
    x, w, h = _as_matrix(x), _as_matrix(w), _as_matrix(h)
    _check_shapes(x, w, h)
    parts = CostParts(*(float(v) for v in kernels.cost_parts(
        x, w, h, float(cfg.eta), float(cfg.lam), float(cfg.beta_w), float(cfg.beta_h))))
    return sum(parts), parts


def smooth_gradients(x, w, h, cfg):
    """Gradients of the differentiable part of the cost w.r.t. W and H."""
    x, w, h = _as_matrix(x), _as_matrix(w), _as_matrix(h)
    _check_shapes(x, w, h)
    return kernels.gradients(x, w, h, float(cfg.eta), float(cfg.beta_w), float(cfg.beta_h))


def stopping_rule(cost_trace, stop_ratio=0.005, stop_window=5):
    """True once the latest decrease is below ``stop_ratio`` times the mean
    decrease over the last ``stop_window`` iterations."""
    trace = np.ascontiguousarray(cost_trace, dtype=np.float64)
    return bool(kernels.stop_rule(trace, trace.shape[0], int(stop_window), float(stop_ratio)))


def init_factors(x, rank, seed, init_scale=None):
    """Uniform [0, scale) factors; the default scale 2 sqrt(mean(X) / K)
    makes E[WH] equal mean(X)."""
    d, t = x.shape
    scale = 2.0 * math.sqrt(float(x.mean()) / rank) if init_scale is None else float(init_scale)
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.0, scale, size=(d, rank))
    h = rng.uniform(0.0, scale, size=(rank, t))
    return w, h


def palm_fit(x, cfg, seed=None, init=None):
    """Fit one tsNMF model from a random (or given) initialization.

    ``x`` must already be nonnegative (see ``shift_nonnegative``).
    """
    x = _as_matrix(x)
    if x.ndim != 2 or x.size == 0:
        raise ParameterError("x must be a non-empty 2-D matrix")
    if not np.all(np.isfinite(x)):
        raise DomainError("x contains non-finite values")
    if np.any(x < 0):
        raise DomainError("x has negative entries; shift it to be nonnegative first")
    seed = cfg.seed if seed is None else int(seed)
    if init is None:
        w, h = init_factors(x, cfg.rank, seed, cfg.init_scale)
    else:
        w, h = (np.array(a, dtype=np.float64, order="C") for a in init)
        _check_shapes(x, w, h)
        if np.any(w < 0) or np.any(h < 0):
            raise DomainError("initial factors must be nonnegative")

    trace = np.empty(int(cfg.max_iter) + 1)
    w, h, n, status = kernels.palm_loop(
        x, w, h, float(cfg.eta), float(cfg.lam), float(cfg.beta_w), float(cfg.beta_h),
        difference_lipschitz(x.shape[1]), float(cfg.safety), float(cfg.stop_ratio),
        int(cfg.stop_window), int(cfg.max_iter), trace)
    if status == 2:
        raise NumericalError(f"non-finite cost in PALM iteration {n - 1} (seed {seed})", seed=seed)
    _, parts = tsnmf_cost(x, w, h, cfg)
    return NmfModel(w=w, h=h, cost_trace=trace[1:n].copy(), cost_parts=parts, seed=seed,
                    iterations=n - 1, converged=status == 0, initial_cost=float(trace[0]))


def run_seeds(seed, n):
    """Per-restart seeds from a counter-based split of ``seed``."""
    return [
        int(np.random.SeedSequence(int(seed), spawn_key=(i,)).generate_state(1, np.uint64)[0])
        for i in range(n)
    ]


def multistart_fit(x, cfg, threads=1):
    """Run ``cfg.n_restarts`` independent fits and keep the cheapest.

    Results do not depend on ``threads``: each restart owns its seed and the
    ensemble is assembled in restart order.
    """
    x = _as_matrix(x)
    seeds = run_seeds(cfg.seed, cfg.n_restarts)
    threads = max(1, int(threads or 1))
    if threads == 1:
        models = [palm_fit(x, cfg, s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(palm_fit, x, cfg, s) for s in seeds]
            models = [f.result() for f in futures]
    costs = np.array([m.cost for m in models])
    best = int(np.argmin(costs))  # first minimum on ties
    return NmfEnsemble(models=models, best_index=best,
                       mse_per_run=np.array([m.mse for m in models]))


def scale_normalize(w, h=None):
    """Move each pattern's norm into its activation row.

    Accepts an :class:`NmfModel` or the pair ``(w, h)``.  All-zero patterns
    are left untouched.
    """
    if h is None:
        w, h = w.w, w.h
    w = np.asarray(w, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    norms = np.linalg.norm(w, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return w / safe, h * safe[:, None]
