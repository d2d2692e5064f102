"""Compiled inner loops for the decoders.

Signals are integrated as sample-and-hold: sample n occupies [n, n+1) in
sample units, so a chip spanning arbitrary real-valued times can be summed in
O(1) from a prefix sum.  This lets window positions move in sub-sample steps
without resampling.
"""
import numpy as np
from numba import njit

TRUNCATED = 1


@njit(cache=True)
def hold_integral(cs, x, c):
    """Integral of the sample-and-hold signal from 0 to sample coordinate c."""
    n = x.shape[0]
    if c <= 0.0:
        return 0.0
    if c >= n:
        return cs[n]
    i = int(np.floor(c))
    return cs[i] + (c - i) * x[i]


@njit(cache=True)
def _window_signs(prev_fixed, next_fixed, cand, signs):
    """Fill ``signs`` (n_cand x 6) and ``cand`` (n_cand x 3) for one window.

    A fixed neighbour is -1 for "free" or a two-chip context code: 2 = (1, 1)
    preamble tail, 3 = (0, 0) idle flush.
    """
    n = 0
    for p in range(2):
        if prev_fixed >= 0 and p == 1:
            continue
        for m in range(2):
            for q in range(2):
                if next_fixed >= 0 and q == 1:
                    continue
                chips = np.empty(6)
                if prev_fixed == 2:
                    chips[0] = 1.0
                    chips[1] = 1.0
                else:
                    chips[0] = 1.0 - p
                    chips[1] = p
                chips[2] = 1.0 - m
                chips[3] = m
                if next_fixed == 3:
                    chips[4] = 0.0
                    chips[5] = 0.0
                else:
                    chips[4] = 1.0 - q
                    chips[5] = q
                mean = 0.0
                for c in range(6):
                    chips[c] = 2.0 * chips[c] - 1.0
                    mean += chips[c]
                mean /= 6.0
                for c in range(6):
                    signs[n, c] = chips[c] - mean
                cand[n, 0] = p if prev_fixed < 0 else -1
                cand[n, 1] = m
                cand[n, 2] = q if next_fixed < 0 else -1
                n += 1
    return n


@njit(cache=True)
def swmsmf(x, fs_per_us, s0_us, chip_us, k_prior, n_bits, lag_step_us, max_lag_us,
           min_corr, k_lo, k_hi, least_squares):
    """Sliding-window multi-symbol match filter with two-point time recovery.

    Returns (status, bits, predicted_centre_us, measured_centre_us, corr, k_trace).
    Window j is centred on the mid-bit transition of bit j, which sits
    (4 + 2j) chips after the preamble start in tag time.
    """
    n = x.shape[0]
    cs = np.zeros(n + 1)
    qs = np.zeros(n + 1)
    for i in range(n):
        cs[i + 1] = cs[i] + x[i]
        qs[i + 1] = qs[i] + x[i] * x[i]
    x2 = x * x

    bits = np.zeros(n_bits, dtype=np.uint8)
    pred = np.zeros(n_bits)
    meas = np.zeros(n_bits)
    corr = np.zeros(n_bits)
    ktrace = np.zeros(n_bits)
    signs = np.zeros((8, 6))
    cand = np.zeros((8, 3), dtype=np.int64)

    n_lag = int(np.floor(max_lag_us / lag_step_us))
    n_lags = 2 * n_lag + 1
    rho = np.zeros((8, n_lags))
    sums = np.zeros(6)
    bnd = np.zeros(7)

    k = k_prior
    sum_tt = 0.0
    sum_tm = 0.0
    for j in range(n_bits):
        t_tag = (4.0 + 2.0 * j) * chip_us
        s = s0_us + k * t_tag
        pred[j] = s
        chip_r = k * chip_us
        if (s + 3.0 * chip_r + max_lag_us) * fs_per_us > n or (s - 3.0 * chip_r - max_lag_us) < 0:
            return TRUNCATED, bits, pred, meas, corr, ktrace
        prev_fixed = 2 if j == 0 else -1
        next_fixed = 3 if j == n_bits - 1 else -1
        n_cand = _window_signs(prev_fixed, next_fixed, cand, signs)

        chip_len = chip_r * fs_per_us
        for li in range(n_lags):
            lag = (li - n_lag) * lag_step_us
            start = (s - 3.0 * chip_r + lag) * fs_per_us
            for c in range(7):
                bnd[c] = hold_integral(cs, x, start + c * chip_len)
            for c in range(6):
                sums[c] = bnd[c + 1] - bnd[c]
            total = bnd[6] - bnd[0]
            q = hold_integral(qs, x2, start + 6 * chip_len) - hold_integral(qs, x2, start)
            var = q - total * total / (6.0 * chip_len)
            for ci in range(n_cand):
                num = 0.0
                wnorm = 0.0
                for c in range(6):
                    num += signs[ci, c] * sums[c]
                    wnorm += signs[ci, c] * signs[ci, c]
                den = np.sqrt(wnorm * chip_len * var) if var > 0 else 0.0
                rho[ci, li] = num / den if den > 0 else 0.0

        best_c = 0
        best_l = 0
        best = -np.inf
        for ci in range(n_cand):
            for li in range(n_lags):
                if rho[ci, li] > best:
                    best = rho[ci, li]
                    best_c = ci
                    best_l = li
        offset = 0.0
        if 0 < best_l < n_lags - 1:
            a = rho[best_c, best_l - 1]
            b = rho[best_c, best_l]
            cc = rho[best_c, best_l + 1]
            den = a - 2.0 * b + cc
            if den < 0:
                offset = 0.5 * (a - cc) / den
        m = s + (best_l - n_lag + offset) * lag_step_us
        bits[j] = cand[best_c, 1]
        meas[j] = m
        corr[j] = best

        if best >= min_corr:
            if least_squares:
                sum_tt += t_tag * t_tag
                sum_tm += t_tag * (m - s0_us)
                k = sum_tm / sum_tt
            else:
                k = (m - s0_us) / t_tag
            if k < k_lo:
                k = k_lo
            elif k > k_hi:
                k = k_hi
        ktrace[j] = k
    return 0, bits, pred, meas, corr, ktrace


@njit(cache=True)
def preamble_corr(x, lc, n_low, n_high):
    """Pearson correlation of an ``n_low``-chip low, ``n_high``-chip high template at each offset."""
    n = x.shape[0]
    cs = np.zeros(n + 1)
    qs = np.zeros(n + 1)
    for i in range(n):
        cs[i + 1] = cs[i] + x[i]
        qs[i + 1] = qs[i] + x[i] * x[i]
    x2 = x * x
    span = (n_low + n_high) * lc
    m = int(np.floor(n - span)) + 1
    if m <= 0:
        return np.zeros(0)
    # zero-mean weights of the +/-1 template
    mean = (n_high - n_low) / (n_high + n_low)
    wl = -1.0 - mean
    wh = 1.0 - mean
    wnorm = wl * wl * n_low * lc + wh * wh * n_high * lc
    out = np.zeros(m)
    for p in range(m):
        f0 = hold_integral(cs, x, p)
        f1 = hold_integral(cs, x, p + n_low * lc)
        f4 = hold_integral(cs, x, p + span)
        q = hold_integral(qs, x2, p + span) - hold_integral(qs, x2, p)
        total = f4 - f0
        var = q - total * total / span
        if var > 1e-12:
            out[p] = (wl * (f1 - f0) + wh * (f4 - f1)) / np.sqrt(wnorm * var)
    return out
