"""Hot numerical kernels.

Each kernel has a loop-style source that numba compiles and, where a Python
loop would be too slow, a vectorized numpy twin used when JIT is disabled.
Kernels written purely with array expressions are shared by both paths.

The two backends agree to rounding, not bitwise: numba reduces sums
sequentially while numpy uses pairwise summation.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# Lipschitz constants below this are treated as zero curvature.
_LIP_FLOOR = 1e-300

AVERAGE = 0
WARD = 1


# ---------------------------------------------------------------------------
# proximal maps


def _soft_threshold(x, tau):
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def _shrink_nonnegative(x, tau):
    return np.maximum(x - tau, 0.0)


soft_threshold_array = njit(_soft_threshold)
shrink_nonnegative = njit(_shrink_nonnegative)


# ---------------------------------------------------------------------------
# tsNMF cost / PALM iteration


def _diff(h):
    # h @ Delta: consecutive differences h[:, j] - h[:, j + 1]
    return h[:, :-1] - h[:, 1:]


def _diff_gram(h):
    # h @ Delta @ Delta.T without forming Delta
    e = h[:, :-1] - h[:, 1:]
    out = np.zeros_like(h)
    out[:, :-1] += e
    out[:, 1:] -= e
    return out


def _cost_parts(x, w, h, eta, lam, beta_w, beta_h):
    r = x - w @ h
    recon = np.sum(r * r)
    if h.shape[1] > 1:
        e = h[:, :-1] - h[:, 1:]
        smooth = eta * np.sum(e * e)
    else:
        smooth = 0.0
    l1_w = lam * np.sum(np.abs(w))
    frob_w = beta_w * np.sum(w * w)
    frob_h = beta_h * np.sum(h * h)
    return recon, smooth, l1_w, frob_w, frob_h


def _total(parts):
    return parts[0] + parts[1] + parts[2] + parts[3] + parts[4]


def _gradients(x, w, h, eta, beta_w, beta_h):
    r = w @ h - x
    gw = 2.0 * (r @ h.T) + 2.0 * beta_w * w
    gh = 2.0 * (w.T @ r) + 2.0 * beta_h * h
    if h.shape[1] > 1:
        gh = gh + 2.0 * eta * _diff_gram(h)
    return gw, gh


def _stop_rule(trace, n, window, ratio):
    # trace[:n] are the recorded costs
    if n < window + 1:
        return False
    last = trace[n - 2] - trace[n - 1]
    acc = 0.0
    for i in range(n - window, n):
        acc += trace[i - 1] - trace[i]
    return last < ratio * (acc / window)


def _stalled(trace, n, window):
    if n < window + 1:
        return False
    for i in range(n - window, n):
        if trace[i - 1] - trace[i] != 0.0:
            return False
    return True


def _palm_loop(x, w, h, eta, lam, beta_w, beta_h, lip_delta, safety,
               stop_ratio, stop_window, max_iter, trace):
    """Run PALM sweeps; returns (w, h, n_costs, status).

    ``trace[0]`` receives the starting cost and ``trace[i]`` the cost after
    sweep i.  status: 0 stopped by rule, 1 max_iter reached, 2 non-finite.
    Gradients use the Gram form 2(W HH^T - XH^T) and 2(W^TW H - W^TX).
    """
    p = _cost_parts(x, w, h, eta, lam, beta_w, beta_h)
    trace[0] = _total(p)
    if not np.isfinite(trace[0]):
        return w, h, 1, 2
    n = 1
    for _ in range(max_iter):
        # W block
        hht = h @ h.T
        c_w = 2.0 * (np.linalg.eigvalsh(hht)[-1] + beta_w) * safety
        if c_w < _LIP_FLOOR:
            c_w = _LIP_FLOOR
        g = 2.0 * (w @ hht - x @ h.T) + 2.0 * beta_w * w
        w = np.maximum(w - g / c_w - lam / c_w, 0.0)
        # H block
        wtw = w.T @ w
        c_h = 2.0 * (np.linalg.eigvalsh(wtw)[-1] + eta * lip_delta + beta_h) * safety
        if c_h < _LIP_FLOOR:
            c_h = _LIP_FLOOR
        g = 2.0 * (wtw @ h - w.T @ x) + 2.0 * beta_h * h
        if h.shape[1] > 1:
            g = g + 2.0 * eta * _diff_gram(h)
        h = np.maximum(h - g / c_h, 0.0)

        p = _cost_parts(x, w, h, eta, lam, beta_w, beta_h)
        trace[n] = _total(p)
        n += 1
        if not np.isfinite(trace[n - 1]):
            return w, h, n, 2
        # the rule sees post-sweep costs only; the drop from the random
        # start would otherwise dominate the first window
        post = trace[1:n]
        if _stop_rule(post, n - 1, stop_window, stop_ratio) or _stalled(post, n - 1, stop_window):
            return w, h, n, 0
    return w, h, n, 1


def _gram_rows(a, out):
    # out = a @ a.T for a K x T matrix
    k, t = a.shape
    for i in range(k):
        for j in range(i, k):
            acc = 0.0
            for c in range(t):
                acc += a[i, c] * a[j, c]
            out[i, j] = acc
            out[j, i] = acc


def _gram_cols(a, out):
    # out = a.T @ a for a D x K matrix
    d, k = a.shape
    out[:, :] = 0.0
    for r in range(d):
        for i in range(k):
            ai = a[r, i]
            for j in range(i, k):
                out[i, j] += ai * a[r, j]
    for i in range(k):
        for j in range(i):
            out[i, j] = out[j, i]


def _recon_loop(x, w, h):
    d, t = x.shape
    k = w.shape[1]
    acc = 0.0
    for r in range(d):
        for c in range(t):
            v = x[r, c]
            for i in range(k):
                v -= w[r, i] * h[i, c]
            acc += v * v
    return acc


def _palm_loop_jit(x, w, h, eta, lam, beta_w, beta_h, lip_delta, safety,
                   stop_ratio, stop_window, max_iter, trace):
    # Same sweep as _palm_loop written as explicit loops, which numba turns
    # into allocation-free code; the matrix products are tiny in K.
    d, t = x.shape
    k = w.shape[1]
    w = w.copy()
    h = h.copy()
    hht = np.empty((k, k))
    wtw = np.empty((k, k))
    xht = np.empty((d, k))
    wtx = np.empty((k, t))
    hnew = np.empty((k, t))

    p = _cost_parts(x, w, h, eta, lam, beta_w, beta_h)
    trace[0] = _total(p)
    if not np.isfinite(trace[0]):
        return w, h, 1, 2
    n = 1
    for _ in range(max_iter):
        # W block
        _gram_rows(h, hht)
        c_w = 2.0 * (np.linalg.eigvalsh(hht)[-1] + beta_w) * safety
        if c_w < _LIP_FLOOR:
            c_w = _LIP_FLOOR
        for r in range(d):
            for i in range(k):
                acc = 0.0
                for c in range(t):
                    acc += x[r, c] * h[i, c]
                xht[r, i] = acc
        for r in range(d):
            for i in range(k):
                acc = 0.0
                for j in range(k):
                    acc += w[r, j] * hht[j, i]
                g = 2.0 * (acc - xht[r, i]) + 2.0 * beta_w * w[r, i]
                v = w[r, i] - g / c_w - lam / c_w
                xht[r, i] = v if v > 0.0 else 0.0
        for r in range(d):
            for i in range(k):
                w[r, i] = xht[r, i]
        # H block
        _gram_cols(w, wtw)
        c_h = 2.0 * (np.linalg.eigvalsh(wtw)[-1] + eta * lip_delta + beta_h) * safety
        if c_h < _LIP_FLOOR:
            c_h = _LIP_FLOOR
        wtx[:, :] = 0.0
        for r in range(d):
            for i in range(k):
                wi = w[r, i]
                if wi != 0.0:
                    for c in range(t):
                        wtx[i, c] += wi * x[r, c]
        for i in range(k):
            for c in range(t):
                acc = 0.0
                for j in range(k):
                    acc += wtw[i, j] * h[j, c]
                g = 2.0 * (acc - wtx[i, c]) + 2.0 * beta_h * h[i, c]
                if t > 1:
                    lap = 0.0
                    if c < t - 1:
                        lap += h[i, c] - h[i, c + 1]
                    if c > 0:
                        lap -= h[i, c - 1] - h[i, c]
                    g += 2.0 * eta * lap
                v = h[i, c] - g / c_h
                hnew[i, c] = v if v > 0.0 else 0.0
        for i in range(k):
            for c in range(t):
                h[i, c] = hnew[i, c]

        recon = _recon_loop(x, w, h)
        p = _cost_parts_given(recon, w, h, eta, lam, beta_w, beta_h)
        trace[n] = _total(p)
        n += 1
        if not np.isfinite(trace[n - 1]):
            return w, h, n, 2
        post = trace[1:n]
        if _stop_rule(post, n - 1, stop_window, stop_ratio) or _stalled(post, n - 1, stop_window):
            return w, h, n, 0
    return w, h, n, 1


def _cost_parts_given(recon, w, h, eta, lam, beta_w, beta_h):
    if h.shape[1] > 1:
        e = h[:, :-1] - h[:, 1:]
        smooth = eta * np.sum(e * e)
    else:
        smooth = 0.0
    l1_w = lam * np.sum(np.abs(w))
    frob_w = beta_w * np.sum(w * w)
    frob_h = beta_h * np.sum(h * h)
    return recon, smooth, l1_w, frob_w, frob_h


if USE_NUMBA:
    _diff = njit(_diff)
    _diff_gram = njit(_diff_gram)
    _cost_parts = njit(_cost_parts)
    _total = njit(_total)
    _stop_rule = njit(_stop_rule)
    _stalled = njit(_stalled)
    _gram_rows = njit(_gram_rows)
    _gram_cols = njit(_gram_cols)
    _recon_loop = njit(_recon_loop)
    _cost_parts_given = njit(_cost_parts_given)

cost_parts = _cost_parts
gradients = njit(_gradients)
stop_rule = _stop_rule
palm_loop = njit(_palm_loop_jit) if USE_NUMBA else _palm_loop


# ---------------------------------------------------------------------------
# agglomerative clustering (Lance-Williams)


def _agglomerate_loop(dist, method):
    n = dist.shape[0]
    d = dist.copy()
    size = np.ones(n)
    active = np.ones(n, dtype=np.bool_)
    ids = np.arange(n)
    merges = np.empty((n - 1, 4))
    for step in range(n - 1):
        best = np.inf
        bi = -1
        bj = -1
        for i in range(n):
            if not active[i]:
                continue
            for j in range(i + 1, n):
                if active[j] and d[i, j] < best:
                    best = d[i, j]
                    bi = i
                    bj = j
        a = ids[bi]
        b = ids[bj]
        merges[step, 0] = min(a, b)
        merges[step, 1] = max(a, b)
        merges[step, 2] = best
        merges[step, 3] = size[bi] + size[bj]
        si = size[bi]
        sj = size[bj]
        for k in range(n):
            if not active[k] or k == bi or k == bj:
                continue
            if method == AVERAGE:
                v = (si * d[bi, k] + sj * d[bj, k]) / (si + sj)
            else:
                sk = size[k]
                v = ((si + sk) * d[bi, k] + (sj + sk) * d[bj, k] - sk * best) / (si + sj + sk)
            d[bi, k] = v
            d[k, bi] = v
        size[bi] = si + sj
        active[bj] = False
        ids[bi] = n + step
    return merges


def _agglomerate_numpy(dist, method):
    n = dist.shape[0]
    d = dist.astype(np.float64, copy=True)
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    ids = np.arange(n)
    merges = np.empty((n - 1, 4))
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    for step in range(n - 1):
        mask = upper & active[:, None] & active[None, :]
        masked = np.where(mask, d, np.inf)
        flat = int(np.argmin(masked))  # first minimum in row-major order
        bi, bj = divmod(flat, n)
        best = d[bi, bj]
        a, b = ids[bi], ids[bj]
        si, sj = size[bi], size[bj]
        merges[step] = (min(a, b), max(a, b), best, si + sj)
        others = active.copy()
        others[[bi, bj]] = False
        if method == AVERAGE:
            v = (si * d[bi] + sj * d[bj]) / (si + sj)
        else:
            sk = size
            v = ((si + sk) * d[bi] + (sj + sk) * d[bj] - sk * best) / (si + sj + sk)
        d[bi, others] = v[others]
        d[others, bi] = v[others]
        size[bi] = si + sj
        active[bj] = False
        ids[bi] = n + step
    return merges


agglomerate = njit(_agglomerate_loop) if USE_NUMBA else _agglomerate_numpy


# ---------------------------------------------------------------------------
# pairwise distances between columns


def _pairwise_loop(h):
    k, t = h.shape
    out = np.zeros((t, t))
    for i in range(t):
        for j in range(i + 1, t):
            acc = 0.0
            for r in range(k):
                diff = h[r, i] - h[r, j]
                acc += diff * diff
            v = np.sqrt(acc)
            out[i, j] = v
            out[j, i] = v
    return out


def _pairwise_numpy(h):
    diff = h[:, :, None] - h[:, None, :]
    return np.sqrt(np.sum(diff * diff, axis=0))


column_distances = njit(_pairwise_loop) if USE_NUMBA else _pairwise_numpy


# ---------------------------------------------------------------------------
# MVBS accumulation


def _accumulate_loop(lin, row_bin, col_bin, col_day, n_row, n_col, n_day):
    sums = np.zeros((n_row, n_col, n_day))
    counts = np.zeros((n_row, n_col, n_day), dtype=np.int64)
    for p in range(lin.shape[1]):
        c = col_bin[p]
        dd = col_day[p]
        if c < 0:
            continue
        for r in range(lin.shape[0]):
            b = row_bin[r]
            v = lin[r, p]
            if b < 0 or np.isnan(v):
                continue
            sums[b, c, dd] += v
            counts[b, c, dd] += 1
    return sums, counts


def _accumulate_numpy(lin, row_bin, col_bin, col_day, n_row, n_col, n_day):
    sums = np.zeros((n_row, n_col, n_day))
    counts = np.zeros((n_row, n_col, n_day), dtype=np.int64)
    rr, pp = np.nonzero((row_bin[:, None] >= 0) & (col_bin[None, :] >= 0) & ~np.isnan(lin))
    # sequential per-sample order, same as the loop kernel
    order = np.lexsort((rr, pp))
    rr, pp = rr[order], pp[order]
    idx = (row_bin[rr], col_bin[pp], col_day[pp])
    np.add.at(sums, idx, lin[rr, pp])
    np.add.at(counts, idx, 1)
    return sums, counts


accumulate_bins = njit(_accumulate_loop) if USE_NUMBA else _accumulate_numpy
