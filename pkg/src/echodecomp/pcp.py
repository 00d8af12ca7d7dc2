"""Principal Component Pursuit: split X into low-rank L plus sparse S.

Solved with the inexact augmented Lagrange multiplier method::

    minimize ||L||_* + gamma * ||S||_1   subject to   L + S = X

where ``||S||_1`` is the entrywise sum of absolute values.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .echogram import DataMatrix
from .errors import DataError, NumericalError, ParameterError


@dataclass(frozen=True)
class PcpConfig:
    gamma: object = "auto"
    tol: float = 1e-7
    max_iter: int = 1000
    mu: object = "auto"
    rho: float = 1.5
    mu_max_factor: float = 1e7

    def __post_init__(self):
        if self.gamma != "auto" and not (isinstance(self.gamma, (int, float)) and self.gamma > 0):
            raise ParameterError(f"gamma must be positive or 'auto', got {self.gamma!r}")
        if self.mu != "auto" and not (isinstance(self.mu, (int, float)) and self.mu > 0):
            raise ParameterError(f"mu must be positive or 'auto', got {self.mu!r}")
        if not self.tol > 0:
            raise ParameterError("tol must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ParameterError("max_iter must be a positive integer")
        if not self.rho >= 1:
            raise ParameterError("rho must be >= 1")


@dataclass(frozen=True, eq=False)
class PcpResult:
    low_rank: np.ndarray
    sparse: np.ndarray
    iterations: int
    final_residual: float
    rank_estimate: int
    sparsity: float
    converged: bool
    gamma: float
    mu0: float

    def objective(self):
        return nuclear_norm(self.low_rank) + self.gamma * float(np.abs(self.sparse).sum())


def default_gamma(d, t):
    """Weight 1/sqrt(max(d, t)) on the sparse term."""
    if d < 1 or t < 1:
        raise ParameterError(f"matrix dimensions must be >= 1, got ({d}, {t})")
    return 1.0 / math.sqrt(max(d, t))


def soft_threshold(x, tau):
    """sign(x) * max(|x| - tau, 0); works on scalars and arrays."""
    if tau < 0:
        raise ParameterError("threshold must be nonnegative")
    out = kernels.soft_threshold_array(np.asarray(x, dtype=np.float64), float(tau))
    return float(out) if np.ndim(x) == 0 else out


def _svd(m):
    try:
        return np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed: {exc}") from None


def svt(m, tau):
    """Singular value thresholding: shrink every singular value by ``tau``."""
    if tau < 0:
        raise ParameterError("threshold must be nonnegative")
    m = np.asarray(m, dtype=np.float64)
    u, s, vt = _svd(m)
    s = np.maximum(s - tau, 0.0)
    r = int(np.count_nonzero(s))
    return (u[:, :r] * s[:r]) @ vt[:r]


def nuclear_norm(m):
    return float(np.linalg.svd(np.asarray(m, dtype=np.float64), compute_uv=False).sum())


def numerical_rank(m, rel_tol=1e-9):
    s = np.linalg.svd(np.asarray(m, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def pcp_decompose(x, cfg=None):
    """Robust PCA of ``x`` (a :class:`DataMatrix` or 2-D array).

    Non-convergence within ``cfg.max_iter`` is reported through
    ``converged=False`` rather than raised.
    """
    cfg = cfg or PcpConfig()
    if isinstance(x, DataMatrix):
        x = x.values
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise DataError("PCP needs a non-empty 2-D matrix")
    if not np.all(np.isfinite(x)):
        raise DataError("PCP input contains non-finite values")
    d, t = x.shape
    gamma = default_gamma(d, t) if cfg.gamma == "auto" else float(cfg.gamma)

    norm_x = np.linalg.norm(x)
    if norm_x == 0.0:
        zeros = np.zeros_like(x)
        return PcpResult(zeros, zeros.copy(), 1, 0.0, 0, 0.0, True, gamma, 0.0)

    sigma1 = np.linalg.norm(x, 2)
    mu = 1.25 / sigma1 if cfg.mu == "auto" else float(cfg.mu)
    mu0 = mu
    mu_max = mu0 * cfg.mu_max_factor
    # dual initialisation scaled so that the dual norm is <= 1
    y = x / max(sigma1, np.abs(x).max() / gamma)
    s = np.zeros_like(x)
    low = np.zeros_like(x)
    residual = np.inf
    converged = False
    it = 0
    for it in range(1, int(cfg.max_iter) + 1):
        low = svt(x - s + y / mu, 1.0 / mu)
        s = kernels.soft_threshold_array(x - low + y / mu, gamma / mu)
        r = x - low - s
        y = y + mu * r
        mu = min(mu * cfg.rho, mu_max)
        residual = np.linalg.norm(r) / norm_x
        if not np.isfinite(residual):
            raise NumericalError(f"PCP diverged at iteration {it}")
        if residual <= cfg.tol:
            converged = True
            break

    return PcpResult(
        low_rank=low,
        sparse=s,
        iterations=it,
        final_residual=float(residual),
        rank_estimate=numerical_rank(low),
        sparsity=float(np.count_nonzero(s)) / s.size,
        converged=converged,
        gamma=gamma,
        mu0=mu0,
    )
