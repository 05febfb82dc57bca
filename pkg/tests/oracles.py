"""Independent reference computations used as test oracles."""
import math

import numpy as np


def central_diff(f, x, h=1e-5):
    """Numerical gradient of scalar ``f`` at array ``x`` (x is restored afterwards)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    """Norm-wise relative error, guarded for all-zero gradients."""
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def brute_rates(bona, spoof, threshold):
    fa = sum(1 for s in spoof if s >= threshold) / len(spoof)
    miss = sum(1 for s in bona if s < threshold) / len(bona)
    return fa, miss


def brute_eer(bona, spoof):
    """Scan every distinct score (plus one point above all) by direct counting."""
    cands = sorted(set(list(bona) + list(spoof)))
    cands.append(math.nextafter(cands[-1], math.inf))
    pts = []
    for t in cands:
        fa = float(np.count_nonzero(spoof >= t)) / len(spoof)
        miss = float(np.count_nonzero(bona < t)) / len(bona)
        pts.append((t, fa, miss))
    pts[-1] = (pts[-1][0], 0.0, 1.0)
    prev = None
    for t, fa, miss in pts:
        if fa <= miss:
            if fa == miss or prev is None:
                return fa, t
            pt, pfa, pmiss = prev
            lam = (pfa - pmiss) / ((pfa - pmiss) - (fa - miss))
            return pfa + lam * (fa - pfa), pt + lam * (t - pt)
        prev = (t, fa, miss)
    raise AssertionError("no crossing")


def brute_min_tdcf(bona, spoof, c1, c2):
    """Minimum normalised t-DCF over every score, every midpoint and both infinities."""
    values = np.unique(np.concatenate([bona, spoof]))
    cands = [-math.inf, math.inf] + list(values) + list((values[1:] + values[:-1]) / 2)
    best = math.inf
    for t in cands:
        fa = float(np.count_nonzero(spoof >= t)) / len(spoof)
        miss = float(np.count_nonzero(bona < t)) / len(bona)
        best = min(best, (c1 * miss + c2 * fa) / min(c1, c2))
    return best


def triangle_weights(n_filters, n_fft, sample_rate):
    """Explicit loop construction of linearly spaced triangular filters."""
    n_bins = n_fft // 2 + 1
    nyq = sample_rate / 2
    step = nyq / (n_filters + 1)
    W = np.zeros((n_filters, n_bins))
    for k in range(n_filters):
        lo, mid, hi = k * step, (k + 1) * step, (k + 2) * step
        for b in range(n_bins):
            f = b * sample_rate / n_fft
            if lo <= f <= mid:
                W[k, b] = (f - lo) / (mid - lo)
            elif mid < f <= hi:
                W[k, b] = (hi - f) / (hi - mid)
    return W
