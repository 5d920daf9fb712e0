"""Hot numeric kernels, each with a numba path and a numpy path.

Per-user latency is parameterized by a 5-vector ``(snr, lhat_u, lhat_e,
bits_e, bits_l)`` where ``snr = p*h/N0`` in Hz, ``lhat_*`` are
compute delays in seconds and ``bits_*`` the upload volumes of the edge and
local pipelines. ``bw`` is the total uplink bandwidth in Hz.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import USE_NUMBA, njit

RATE_FLOOR_BPS = 1e-3
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_GOLDEN_ITERS = 90


# --- numba path -------------------------------------------------------------


@njit
def _rate_nb(y, bw, snr):
    share = y * bw
    r = share * math.log2(1.0 + snr / share)
    return r if r > RATE_FLOOR_BPS else RATE_FLOOR_BPS


@njit
def _latency_nb(y, bw, prm):
    r = _rate_nb(y, bw, prm[0])
    le = prm[3] / r + prm[2]
    lu = prm[1] + prm[4] / r
    return lu if lu > le else le


@njit
def _curve_nb(ys, bw, prm):
    out = np.empty(ys.shape[0])
    for g in range(ys.shape[0]):
        out[g] = _latency_nb(ys[g], bw, prm)
    return out


@njit
def _min_y_nb(target, bw, prm, lo, hi, tol):
    if _latency_nb(hi, bw, prm) > target:
        return hi
    if _latency_nb(lo, bw, prm) <= target:
        return lo
    a, b = lo, hi
    while b - a > tol:
        mid = 0.5 * (a + b)
        if _latency_nb(mid, bw, prm) <= target:
            b = mid
        else:
            a = mid
    return b


@njit
def _minplus_nb(curves):
    k, g = curves.shape
    total = g - 1
    acc = curves[0].copy()
    choice = np.zeros((k, g), dtype=np.int64)
    for u in range(1, k):
        nxt = np.full(g, np.inf)
        for s in range(g):
            best = np.inf
            arg = 0
            for a in range(s + 1):
                v = acc[s - a] + curves[u, a]
                if v < best:
                    best = v
                    arg = a
            nxt[s] = best
            choice[u, s] = arg
        acc = nxt
    idx = np.empty(k, dtype=np.int64)
    s = total
    for u in range(k - 1, 0, -1):
        idx[u] = choice[u, s]
        s -= idx[u]
    idx[0] = s
    return acc[total], idx


@njit
def _pair_refine_nb(ys, bw, prms, lo, hi, tol, max_sweeps):
    k = ys.shape[0]
    y = ys.copy()
    for _ in range(max_sweeps):
        gained = 0.0
        for a in range(k):
            for b in range(a + 1, k):
                tlo = max(lo - y[a], y[b] - hi)
                thi = min(hi - y[a], y[b] - lo)
                if thi - tlo <= 0.0:
                    continue
                f0 = _latency_nb(y[a], bw, prms[a]) + _latency_nb(y[b], bw, prms[b])
                x1 = thi - _INVPHI * (thi - tlo)
                x2 = tlo + _INVPHI * (thi - tlo)
                f1 = _latency_nb(y[a] + x1, bw, prms[a]) + _latency_nb(y[b] - x1, bw, prms[b])
                f2 = _latency_nb(y[a] + x2, bw, prms[a]) + _latency_nb(y[b] - x2, bw, prms[b])
                l, r = tlo, thi
                for _it in range(_GOLDEN_ITERS):
                    if f1 <= f2:
                        r = x2
                        x2 = x1
                        f2 = f1
                        x1 = r - _INVPHI * (r - l)
                        f1 = _latency_nb(y[a] + x1, bw, prms[a]) + _latency_nb(y[b] - x1, bw, prms[b])
                    else:
                        l = x1
                        x1 = x2
                        f1 = f2
                        x2 = l + _INVPHI * (r - l)
                        f2 = _latency_nb(y[a] + x2, bw, prms[a]) + _latency_nb(y[b] - x2, bw, prms[b])
                t = x1 if f1 <= f2 else x2
                ft = f1 if f1 <= f2 else f2
                if ft < f0:
                    y[a] += t
                    y[b] -= t
                    gained += f0 - ft
        if gained <= tol:
            break
    return y


@njit
def _intensity_nb(data):
    p, h, w = data.shape
    a = np.zeros((h, w))
    for c in range(p):
        for i in range(h):
            for j in range(w):
                a[i, j] += data[c, i, j] * data[c, i, j]
    peak = 0.0
    for i in range(h):
        for j in range(w):
            a[i, j] /= p
            if a[i, j] > peak:
                peak = a[i, j]
    if peak > 0.0:
        for i in range(h):
            for j in range(w):
                a[i, j] /= peak
    return a


@njit
def _effectiveness_nb(data, amap):
    p, h, w = data.shape
    total = 0.0
    for c in range(p):
        mean = 0.0
        for i in range(h):
            for j in range(w):
                mean += data[c, i, j]
        mean /= h * w
        acc = 0.0
        for i in range(h):
            for j in range(w):
                d = data[c, i, j] - mean
                acc += amap[i, j] * d * d
        total += acc
    return total / p


@njit
def _descriptor_nb(data, amap):
    p, h, w = data.shape
    v = np.zeros(p)
    for c in range(p):
        acc = 0.0
        for i in range(h):
            for j in range(w):
                acc += amap[i, j] * data[c, i, j]
        v[c] = acc
    return v


# --- numpy path -------------------------------------------------------------


def _rate_np(y, bw, snr):
    share = np.asarray(y, dtype=np.float64) * bw
    return np.maximum(share * np.log2(1.0 + snr / share), RATE_FLOOR_BPS)


def _latency_np(y, bw, prm):
    r = _rate_np(y, bw, prm[0])
    return np.maximum(prm[1] + prm[4] / r, prm[3] / r + prm[2])


def _curve_np(ys, bw, prm):
    return _latency_np(ys, bw, prm)


def _min_y_np(target, bw, prm, lo, hi, tol):
    if _latency_np(hi, bw, prm) > target:
        return hi
    if _latency_np(lo, bw, prm) <= target:
        return lo
    a, b = lo, hi
    while b - a > tol:
        mid = 0.5 * (a + b)
        if _latency_np(mid, bw, prm) <= target:
            b = mid
        else:
            a = mid
    return b


def _minplus_np(curves):
    k, g = curves.shape
    total = g - 1
    acc = curves[0].copy()
    choices = []
    # cand[s, a] = acc[s - a] + curve[a] for a <= s
    s_idx = np.arange(g)[:, None]
    a_idx = np.arange(g)[None, :]
    valid = a_idx <= s_idx
    for u in range(1, k):
        cand = np.where(valid, acc[np.clip(s_idx - a_idx, 0, None)] + curves[u][a_idx], np.inf)
        arg = np.argmin(cand, axis=1)
        acc = cand[np.arange(g), arg]
        choices.append(arg)
    idx = np.empty(k, dtype=np.int64)
    s = total
    for u in range(k - 1, 0, -1):
        idx[u] = choices[u - 1][s]
        s -= idx[u]
    idx[0] = s
    return float(acc[total]), idx


def _pair_refine_np(ys, bw, prms, lo, hi, tol, max_sweeps):
    y = np.array(ys, dtype=np.float64)
    k = len(y)

    def f(a, b, t):
        return float(_latency_np(y[a] + t, bw, prms[a]) + _latency_np(y[b] - t, bw, prms[b]))

    for _ in range(max_sweeps):
        gained = 0.0
        for a in range(k):
            for b in range(a + 1, k):
                tlo = max(lo - y[a], y[b] - hi)
                thi = min(hi - y[a], y[b] - lo)
                if thi - tlo <= 0.0:
                    continue
                f0 = f(a, b, 0.0)
                x1 = thi - _INVPHI * (thi - tlo)
                x2 = tlo + _INVPHI * (thi - tlo)
                f1, f2 = f(a, b, x1), f(a, b, x2)
                l, r = tlo, thi
                for _it in range(_GOLDEN_ITERS):
                    if f1 <= f2:
                        r, x2, f2 = x2, x1, f1
                        x1 = r - _INVPHI * (r - l)
                        f1 = f(a, b, x1)
                    else:
                        l, x1, f1 = x1, x2, f2
                        x2 = l + _INVPHI * (r - l)
                        f2 = f(a, b, x2)
                t, ft = (x1, f1) if f1 <= f2 else (x2, f2)
                if ft < f0:
                    y[a] += t
                    y[b] -= t
                    gained += f0 - ft
        if gained <= tol:
            break
    return y


def _intensity_np(data):
    a = np.mean(data * data, axis=0)
    peak = a.max()
    return a / peak if peak > 0 else a


def _effectiveness_np(data, amap):
    dev = data - data.mean(axis=(1, 2), keepdims=True)
    return float(np.sum(amap[None] * dev * dev) / data.shape[0])


def _descriptor_np(data, amap):
    return np.einsum("phw,hw->p", data, amap)


# --- dispatch ---------------------------------------------------------------

if USE_NUMBA:
    latency_at = _latency_nb
    latency_curve = _curve_nb
    min_share_for_target = _min_y_nb
    simplex_grid_min = _minplus_nb
    pair_refine = _pair_refine_nb
    intensity_kernel = _intensity_nb
    effectiveness_kernel = _effectiveness_nb
    descriptor_kernel = _descriptor_nb
else:
    latency_at = lambda y, bw, prm: float(_latency_np(y, bw, prm))  # noqa: E731
    latency_curve = _curve_np
    min_share_for_target = _min_y_np
    simplex_grid_min = _minplus_np
    pair_refine = _pair_refine_np
    intensity_kernel = _intensity_np
    effectiveness_kernel = _effectiveness_np
    descriptor_kernel = _descriptor_np

NUMPY_KERNELS = {
    "latency_curve": _curve_np,
    "min_share_for_target": _min_y_np,
    "simplex_grid_min": _minplus_np,
    "pair_refine": _pair_refine_np,
    "intensity": _intensity_np,
    "effectiveness": _effectiveness_np,
    "descriptor": _descriptor_np,
}
NUMBA_KERNELS = {
    "latency_curve": _curve_nb,
    "min_share_for_target": _min_y_nb,
    "simplex_grid_min": _minplus_nb,
    "pair_refine": _pair_refine_nb,
    "intensity": _intensity_nb,
    "effectiveness": _effectiveness_nb,
    "descriptor": _descriptor_nb,
}


def warmup() -> None:
    """Trigger JIT compilation so later timings exclude it."""
    prm = np.array([1e7, 0.1, 0.1, 1e6, 1e6])
    prms = np.stack([prm, prm])
    ys = np.linspace(0.1, 0.9, 5)
    latency_curve(ys, 1e6, prm)
    min_share_for_target(1.0, 1e6, prm, 1e-6, 1 - 1e-6, 1e-6)
    simplex_grid_min(np.stack([ys, ys]))
    pair_refine(np.array([0.5, 0.5]), 1e6, prms, 1e-6, 1 - 1e-6, 1e-15, 2)
    data = np.ones((2, 3, 3))
    amap = intensity_kernel(data)
    effectiveness_kernel(data, amap)
    descriptor_kernel(data, amap)
