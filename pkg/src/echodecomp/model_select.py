"""Rank and smoothness selection for tsNMF.

* rank: reconstruction MSE versus rank on the data and on a copy whose rows
  are independently permuted over days, plus the cophenetic correlation of
  an MSE-weighted consensus matrix;
* smoothness: L-curve of reconstruction error against ||H Delta||_F^2 with
  the corner picked by maximum curvature on log-log axes.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateError, ParameterError
from .hierarchy import cophenetic_distances, linkage, pearson
from .tsnmf import multistart_fit


@dataclass(frozen=True, eq=False)
class RankScanReport:
    ranks: list
    mse_data: np.ndarray
    mse_perm: np.ndarray
    mse_data_raw: np.ndarray
    mse_perm_raw: np.ndarray
    iqr_data: np.ndarray
    iqr_perm: np.ndarray
    n_runs: int
    cophenetic: np.ndarray
    knee: int = None
    n_capped: int = 0  # fits that stopped at max_iter

    def rows(self):
        return [
            (int(k), float(a), float(b), float(c))
            for k, a, b, c in zip(self.ranks, self.mse_data, self.mse_perm, self.cophenetic)
        ]


@dataclass(frozen=True, eq=False)
class LCurveReport:
    etas: np.ndarray
    recon_cost: np.ndarray
    smooth_cost: np.ndarray
    curvature: np.ndarray
    selected_eta: float
    iqr_recon: np.ndarray = None
    iqr_smooth: np.ndarray = None
    n_capped: int = 0

    def rows(self):
        return [
            (float(e), float(r), float(s))
            for e, r, s in zip(self.etas, self.recon_cost, self.smooth_cost)
        ]


def permute_rows_independently(x, seed):
    """Shuffle every row over the columns with its own random permutation."""
    rng = np.random.default_rng(seed)
    return rng.permuted(np.asarray(x, dtype=np.float64), axis=1)


def connectivity_matrix(h):
    """1 where two columns share their argmax component (ties -> lowest k)."""
    labels = np.argmax(np.asarray(h), axis=0)
    return (labels[:, None] == labels[None, :]).astype(np.float64)


def consensus_matrix(connectivities, errors):
    """Weighted mean of connectivity matrices with weights
    (max(e) - e_n) / (max(e) - min(e)); uniform when all errors tie."""
    errors = np.asarray(errors, dtype=np.float64)
    if len(connectivities) == 0 or len(connectivities) != errors.size:
        raise ParameterError("need one error per connectivity matrix")
    spread = errors.max() - errors.min()
    if spread > 0:
        weights = (errors.max() - errors) / spread
    else:
        weights = np.ones_like(errors)
    num = np.zeros_like(connectivities[0], dtype=np.float64)
    den = 0.0
    # accumulate numerator and denominator in the same order so the
    # diagonal comes out exactly 1
    for c, wn in zip(connectivities, weights):
        num += c * wn
        den += wn
    return num / den


def weighted_consensus(ensemble):
    conns = [connectivity_matrix(m.h) for m in ensemble.models]
    return consensus_matrix(conns, ensemble.mse_per_run)


def cophenetic_coefficient(consensus, method="average"):
    """Pearson correlation between 1 - consensus and its cophenetic distances."""
    c = np.asarray(consensus, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ParameterError("consensus must be a square matrix")
    t = c.shape[0]
    if t < 3:
        raise DegenerateError(f"cophenetic coefficient undefined for {t} observations")
    dissim = 1.0 - c
    np.fill_diagonal(dissim, 0.0)
    iu = np.triu_indices(t, 1)
    d = dissim[iu]
    if np.all(d == d[0]):
        raise DegenerateError("all dissimilarities are equal; correlation undefined")
    merges = linkage(dissim, method)
    coph = cophenetic_distances(merges, t)[iu]
    r = pearson(d, coph)
    if np.isnan(r):
        raise DegenerateError("cophenetic distances are constant; correlation undefined")
    return r


def _iqr(values):
    q1, q3 = np.percentile(values, [25, 75])
    return q3 - q1


def _safe_cophenetic(ensemble):
    try:
        return cophenetic_coefficient(weighted_consensus(ensemble))
    except DegenerateError:
        return np.nan


def knee_advisory(ranks, mse_data, mse_perm):
    """First rank whose next-step MSE drop is smaller on the data than on
    the permuted data; None if there is no such rank."""
    for i in range(len(ranks) - 1):
        drop_data = mse_data[i] - mse_data[i + 1]
        drop_perm = mse_perm[i] - mse_perm[i + 1]
        if drop_data < drop_perm:
            return int(ranks[i])
    return None


def mse_rank_scan(x, ranks, cfg, perm_seed=None, threads=1):
    """Median reconstruction MSE per rank on the data and on its row-permuted copy.

    Both curves are normalized by subtracting their own median MSE at the
    smallest scanned rank (rank 1 in the usual ``1..K`` scan).
    """
    ranks = [int(k) for k in ranks]
    if not ranks or any(k < 1 for k in ranks) or ranks != sorted(set(ranks)):
        raise ParameterError("ranks must be non-empty, positive and strictly ascending")
    x = np.asarray(x, dtype=np.float64)
    xp = permute_rows_independently(x, cfg.seed if perm_seed is None else perm_seed)
    med_d, med_p, iqr_d, iqr_p, coph = [], [], [], [], []
    capped = 0
    for k in ranks:
        rcfg = replace(cfg, rank=k)
        ens = multistart_fit(x, rcfg, threads=threads)
        ens_p = multistart_fit(xp, rcfg, threads=threads)
        med_d.append(np.median(ens.mse_per_run))
        med_p.append(np.median(ens_p.mse_per_run))
        iqr_d.append(_iqr(ens.mse_per_run))
        iqr_p.append(_iqr(ens_p.mse_per_run))
        coph.append(_safe_cophenetic(ens))
        capped += sum(not m.converged for m in ens.models + ens_p.models)
    med_d, med_p = np.array(med_d), np.array(med_p)
    return RankScanReport(
        ranks=ranks,
        mse_data=med_d - med_d[0],
        mse_perm=med_p - med_p[0],
        mse_data_raw=med_d,
        mse_perm_raw=med_p,
        iqr_data=np.array(iqr_d),
        iqr_perm=np.array(iqr_p),
        n_runs=cfg.n_restarts,
        cophenetic=np.array(coph),
        knee=knee_advisory(ranks, med_d, med_p),
        n_capped=capped,
    )


def menger_curvature(xs, ys):
    """Signed curvature of the circle through consecutive point triples.

    Ends get NaN.  Positive values turn counter-clockwise, which is the
    corner orientation of an L-curve traversed with increasing eta.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n = xs.size
    kappa = np.full(n, np.nan)
    for i in range(1, n - 1):
        ax, ay = xs[i] - xs[i - 1], ys[i] - ys[i - 1]
        bx, by = xs[i + 1] - xs[i], ys[i + 1] - ys[i]
        cx, cy = xs[i + 1] - xs[i - 1], ys[i + 1] - ys[i - 1]
        denom = np.hypot(ax, ay) * np.hypot(bx, by) * np.hypot(cx, cy)
        kappa[i] = 2.0 * (ax * by - ay * bx) / denom if denom > 0 else 0.0
    return kappa


def lcurve_corner(etas, recon, smooth):
    """Eta at maximum log-log curvature (first eta when fewer than 3 points)."""
    etas = np.asarray(etas, dtype=np.float64)
    tiny = np.finfo(np.float64).tiny
    kappa = menger_curvature(np.log10(np.maximum(recon, tiny)),
                             np.log10(np.maximum(smooth, tiny)))
    if etas.size < 3:
        return float(etas[0]), kappa
    return float(etas[1 + int(np.argmax(kappa[1:-1]))]), kappa


def l_curve_scan(x, etas, cfg, threads=1):
    """Median reconstruction and smoothness costs per eta, with a corner pick."""
    etas = np.asarray([float(e) for e in etas])
    if etas.size == 0 or np.any(etas <= 0) or np.any(np.diff(etas) <= 0):
        raise ParameterError("etas must be non-empty, positive and strictly ascending")
    x = np.asarray(x, dtype=np.float64)
    recon, smooth, iqr_r, iqr_s = [], [], [], []
    capped = 0
    for eta in etas:
        ens = multistart_fit(x, replace(cfg, eta=float(eta)), threads=threads)
        r = np.array([m.cost_parts.reconstruction for m in ens.models])
        s = np.array([np.sum(np.diff(m.h, axis=1) ** 2) for m in ens.models])
        recon.append(np.median(r))
        smooth.append(np.median(s))
        iqr_r.append(_iqr(r))
        iqr_s.append(_iqr(s))
        capped += sum(not m.converged for m in ens.models)
    recon, smooth = np.array(recon), np.array(smooth)
    selected, kappa = lcurve_corner(etas, recon, smooth)
    return LCurveReport(etas=etas, recon_cost=recon, smooth_cost=smooth, curvature=kappa,
                        selected_eta=selected, iqr_recon=np.array(iqr_r),
                        iqr_smooth=np.array(iqr_s), n_capped=capped)
