"""Compiled kernels.  Same signatures and results as ``_kernels_numpy``."""
import warnings

import numpy as np
from numba import njit, prange

# an outdated system TBB only disables that layer; numba falls back to omp/workqueue
warnings.filterwarnings("ignore", message="The TBB threading layer requires")

_opts = dict(cache=True, nogil=True)
_par = dict(cache=True, nogil=True, parallel=True)

EXPONENTIAL = 0
LOGISTIC = 1
EXP_CLAMP = 700.0
GOLDEN_ITERS = 64
BISECT_ITERS = 60
RUN_RTOL = 1e-12


# ---------------------------------------------------------------- model eval

@njit(**_par)
def stump_margins(X, coord, thr, wl, wr):
    n = X.shape[0]
    out = np.zeros(n)
    for i in prange(n):
        s = 0.0
        for t in range(coord.shape[0]):
            if X[i, coord[t]] >= thr[t]:
                s += wl[t] + wr[t]
            else:
                s += wl[t]
        out[i] = s
    return out


@njit(**_par)
def stump_certify(X, y, eps, coord, thr, wl, wr, ptr, t_sorted, wr_merged):
    """Alg. 1 per point; margins are evaluated at x + delta with the model itself."""
    n, d = X.shape
    margins = np.zeros(n)
    delta = np.zeros((n, d))
    for i in prange(n):
        z = np.empty(d)
        for k in range(d):
            x = X[i, k]
            z[k] = x
            start = ptr[k]
            end = ptr[k + 1]
            if start == end:
                continue
            lo = x - eps
            hi = x + eps
            p = start
            while p < end and t_sorted[p] <= lo:
                p += 1
            if p == end or t_sorted[p] > hi:
                continue
            # thresholds in (lo, hi] exist: left end is the initial minimiser
            v = 0.0
            best = 0.0
            best_p = -1
            while p < end and t_sorted[p] <= hi:
                v += y[i] * wr_merged[p]
                if v < best:
                    best = v
                    best_p = p
                p += 1
            if best_p < 0:
                delta[i, k] = -eps
                z[k] = x - eps
            else:
                tb = t_sorted[best_p]
                dk = tb - x
                while x + dk < tb:
                    dk = np.nextafter(dk, np.inf)
                delta[i, k] = dk
                z[k] = x + dk
        s = 0.0
        for t in range(coord.shape[0]):
            if z[coord[t]] >= thr[t]:
                s += wl[t] + wr[t]
            else:
                s += wl[t]
        margins[i] = y[i] * s
    return margins, delta


@njit(**_par)
def stump_coord_terms(X, y, eps, ptr, t_sorted, wr_merged, wl_sum):
    """Per point and coordinate: y * sum w_l + min over the ball of y * phi_k."""
    n, d = X.shape
    out = np.zeros((n, d))
    for i in prange(n):
        for k in range(d):
            start = ptr[k]
            end = ptr[k + 1]
            if start == end:
                continue
            x = X[i, k]
            lo = x - eps
            hi = x + eps
            v = 0.0
            p = start
            while p < end and t_sorted[p] <= lo:
                v += wr_merged[p]
                p += 1
            v *= y[i]
            best = v
            while p < end and t_sorted[p] <= hi:
                v += y[i] * wr_merged[p]
                if v < best:
                    best = v
                p += 1
            out[i, k] = y[i] * wl_sum[k] + best
    return out


@njit(**_par)
def tree_margins(X, feat, thr, wl, wr, left, right, roots):
    n = X.shape[0]
    out = np.zeros(n)
    for i in prange(n):
        s = 0.0
        for r in range(roots.shape[0]):
            node = roots[r]
            while True:
                if X[i, feat[node]] >= thr[node]:
                    if right[node] >= 0:
                        node = right[node]
                    else:
                        s += wl[node] + wr[node]
                        break
                else:
                    if left[node] >= 0:
                        node = left[node]
                    else:
                        s += wl[node]
                        break
        out[i] = s
    return out


@njit(**_par)
def tree_min_margins(X, y, eps, feat, thr, wl, wr, left, right, roots):
    n = X.shape[0]
    out = np.zeros(n)
    n_nodes = feat.shape[0]
    for i in prange(n):
        stack = np.empty(n_nodes + 1, dtype=np.int64)
        s = 0.0
        for r in range(roots.shape[0]):
            best = np.inf
            top = 0
            stack[0] = roots[r]
            top = 1
            while top > 0:
                top -= 1
                node = stack[top]
                x = X[i, feat[node]]
                b = thr[node]
                if x <= b + eps:
                    if left[node] >= 0:
                        stack[top] = left[node]
                        top += 1
                    else:
                        val = y[i] * wl[node]
                        if val < best:
                            best = val
                if x >= b - eps:
                    if right[node] >= 0:
                        stack[top] = right[node]
                        top += 1
                    else:
                        val = y[i] * (wl[node] + wr[node])
                        if val < best:
                            best = val
            s += best
        out[i] = s
    return out


# ------------------------------------------------------------------- solvers

@njit(**_opts)
def _clip(v, lo, hi):
    return min(hi, max(lo, v))


@njit(**_opts)
def _exp_shifted(v, shift):
    if v == np.inf:
        return 0.0
    return np.exp(-_clip(v - shift, -EXP_CLAMP, EXP_CLAMP))


@njit(**_opts)
def _softplus_neg(m):
    # log(1 + exp(-m)) without overflow
    if m < 0.0:
        return -m + np.log1p(np.exp(m))
    return np.log1p(np.exp(-m))


@njit(**_opts)
def _sigmoid_neg(m):
    # 1 / (1 + exp(m))
    if m >= 0.0:
        e = np.exp(-m)
        return e / (1.0 + e)
    return 1.0 / (1.0 + np.exp(m))


@njit(**_opts)
def _half_log_ratio(pos, neg, w_max):
    if pos <= 0.0 and neg <= 0.0:
        return np.nan
    if neg <= 0.0:
        return w_max
    if pos <= 0.0:
        return -w_max
    return _clip(0.5 * (np.log(pos) - np.log(neg)), -w_max, w_max)


@njit(**_opts)
def _leaf_pair(vl, vr, w_max):
    wl = vl
    wr = vr - vl
    while abs(wl + wr) > w_max:
        wr = np.nextafter(wr, 0.0)
    return wl, wr


@njit(**_opts)
def fixed_sides_exp(s01, s0m1, s11, s1m1, sign, w_max):
    """Exponential loss with frozen side indicators, solved in leaf values."""
    vl = _half_log_ratio(s01, s0m1, w_max)
    vr = _half_log_ratio(s11, s1m1, w_max)
    if np.isnan(vl) and np.isnan(vr):
        vl = 0.0
        vr = 0.0
    elif np.isnan(vl):
        vl = vr
    elif np.isnan(vr):
        vr = vl
    if (sign > 0 and vr < vl) or (sign < 0 and vr > vl):
        v = _half_log_ratio(s01 + s11, s0m1 + s1m1, w_max)
        if np.isnan(v):
            v = 0.0
        vl = v
        vr = v
    loss = s01 * np.exp(-vl) + s0m1 * np.exp(vl) + s11 * np.exp(-vr) + s1m1 * np.exp(vr)
    wl, wr = _leaf_pair(vl, vr, w_max)
    return wl, wr, loss


@njit(**_opts)
def _wl_bounds(wr, w_max):
    return max(-w_max, -w_max - wr), min(w_max, w_max - wr)


@njit(**_opts)
def _profile_exp(ea, eb, y, wr, w_max, bisect):
    pos = 0.0
    neg = 0.0
    em = np.exp(-wr)
    ep = np.exp(wr)
    for i in range(y.shape[0]):
        if y[i] > 0:
            pos += max(ea[i], eb[i] * em)
        else:
            neg += max(ea[i], eb[i] * ep)
    lo, hi = _wl_bounds(wr, w_max)
    if not bisect:
        if pos <= 0.0 and neg <= 0.0:
            wl = _clip(0.0, lo, hi)
        elif neg <= 0.0:
            wl = hi
        elif pos <= 0.0:
            wl = lo
        else:
            wl = _clip(0.5 * (np.log(pos) - np.log(neg)), lo, hi)
    else:
        if -pos * np.exp(-lo) + neg * np.exp(lo) >= 0.0:
            wl = lo
        elif -pos * np.exp(-hi) + neg * np.exp(hi) <= 0.0:
            wl = hi
        else:
            a = lo
            b = hi
            for _ in range(BISECT_ITERS):
                mid = 0.5 * (a + b)
                if -pos * np.exp(-mid) + neg * np.exp(mid) > 0.0:
                    b = mid
                else:
                    a = mid
            wl = 0.5 * (a + b)
    return wl, pos * np.exp(-wl) + neg * np.exp(wl)


@njit(**_opts)
def _logistic_value(a, b, y, wl, wr):
    s = 0.0
    for i in range(y.shape[0]):
        m = min(a[i] + y[i] * wl, b[i] + y[i] * (wl + wr))
        s += _softplus_neg(m)
    return s


@njit(**_opts)
def _logistic_slope(a, b, y, wl, wr):
    s = 0.0
    for i in range(y.shape[0]):
        m = min(a[i] + y[i] * wl, b[i] + y[i] * (wl + wr))
        s -= y[i] * _sigmoid_neg(m)
    return s


@njit(**_opts)
def _profile_logistic(a, b, y, wr, w_max):
    lo, hi = _wl_bounds(wr, w_max)
    if _logistic_slope(a, b, y, lo, wr) >= 0.0:
        wl = lo
    elif _logistic_slope(a, b, y, hi, wr) <= 0.0:
        wl = hi
    else:
        p = lo
        q = hi
        for _ in range(BISECT_ITERS):
            mid = 0.5 * (p + q)
            if _logistic_slope(a, b, y, mid, wr) > 0.0:
                q = mid
            else:
                p = mid
        wl = 0.5 * (p + q)
    return wl, _logistic_value(a, b, y, wl, wr)


@njit(**_opts)
def _profile(a, b, ea, eb, y, wr, w_max, loss_kind, bisect):
    if loss_kind == EXPONENTIAL:
        return _profile_exp(ea, eb, y, wr, w_max, bisect)
    return _profile_logistic(a, b, y, wr, w_max)


@njit(**_opts)
def solve_pair(a, b, y, loss_kind, sign, w_max, shift, bisect):
    """min over leaf values of sum L(min(a + y*wl, b + y*(wl + wr))).

    Golden-section search on the convex profile in wr; the inner problem in
    wl is solved exactly (closed form or bisection).  The exponential loss
    is returned in units of exp(-shift).
    """
    n = y.shape[0]
    ea = np.zeros(n)
    eb = np.zeros(n)
    if loss_kind == EXPONENTIAL:
        for i in range(n):
            ea[i] = _exp_shifted(a[i], shift)
            eb[i] = _exp_shifted(b[i], shift)
    lo = -2.0 * w_max
    hi = 2.0 * w_max
    if sign > 0:
        lo = 0.0
    elif sign < 0:
        hi = 0.0
    invphi = 0.5 * (np.sqrt(5.0) - 1.0)
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    w1, f1 = _profile(a, b, ea, eb, y, x1, w_max, loss_kind, bisect)
    w2, f2 = _profile(a, b, ea, eb, y, x2, w_max, loss_kind, bisect)
    for _ in range(GOLDEN_ITERS):
        if f1 <= f2:
            hi = x2
            x2 = x1
            w2 = w1
            f2 = f1
            x1 = hi - invphi * (hi - lo)
            w1, f1 = _profile(a, b, ea, eb, y, x1, w_max, loss_kind, bisect)
        else:
            lo = x1
            x1 = x2
            w1 = w2
            f1 = f2
            x2 = lo + invphi * (hi - lo)
            w2, f2 = _profile(a, b, ea, eb, y, x2, w_max, loss_kind, bisect)
    if f1 <= f2:
        best_r, best_l, best_f = x1, w1, f1
    else:
        best_r, best_l, best_f = x2, w2, f2
    # prefer wr = 0 when it is as good (flat profile)
    w0, f0 = _profile(a, b, ea, eb, y, 0.0, w_max, loss_kind, bisect)
    if f0 <= best_f + 1e-14 * abs(best_f):
        best_r, best_l, best_f = 0.0, w0, f0
    wl, wr = _leaf_pair(best_l, best_l + best_r, w_max)
    return wl, wr, best_f


# ----------------------------------------------------------- split searches

@njit(**_opts)
def _merge_candidates(xs, eps, nu, lo_b, hi_b):
    m = xs.shape[0]
    out = np.empty(2 * m)
    off = eps + nu
    i = 0
    j = 0
    k = 0
    last = -np.inf
    while i < m or j < m:
        if j >= m or (i < m and xs[i] - off <= xs[j] + off):
            v = xs[i] - off
            i += 1
        else:
            v = xs[j] + off
            j += 1
        if v > lo_b and v < hi_b and v != last:
            out[k] = v
            k += 1
            last = v
    return out[:k]


@njit(**_opts)
def _summarise(cand, losses, wls, wrs):
    """Best loss, first equal-loss run and its neighbours for one coordinate."""
    res = np.full(8, np.nan)
    k = cand.shape[0]
    best = np.inf
    for c in range(k):
        if losses[c] < best:
            best = losses[c]
    res[0] = best
    if best == np.inf:
        return res
    tol = best + RUN_RTOL * abs(best)
    r0 = 0
    while losses[r0] > tol:
        r0 += 1
    r1 = r0
    while r1 + 1 < k and losses[r1 + 1] <= tol:
        r1 += 1
    if r0 > 0:
        res[1] = cand[r0 - 1]
    res[2] = cand[r0]
    res[3] = cand[r1]
    if r1 + 1 < k:
        res[4] = cand[r1 + 1]
    mid = (r0 + r1) // 2
    res[5] = cand[mid]
    res[6] = wls[mid]
    res[7] = wrs[mid]
    return res


@njit(**_opts)
def _gather(j, XT, order, in_node, g, y):
    n = XT.shape[1]
    m = 0
    for t in range(n):
        if in_node[order[j, t]]:
            m += 1
    xs = np.empty(m)
    gs = np.empty(m)
    ys = np.empty(m)
    k = 0
    for t in range(n):
        i = order[j, t]
        if in_node[i]:
            xs[k] = XT[j, i]
            gs[k] = g[i]
            ys[k] = y[i]
            k += 1
    return xs, gs, ys


@njit(**_opts)
def _bound_eval(xs, gs, ys, pp, pn, b, eps, min_leaf, w_max, loss_kind, shift):
    m = xs.shape[0]
    i_lo = np.searchsorted(xs, b - eps, side="left")
    i_hi = np.searchsorted(xs, b + eps, side="right")
    if i_hi < min_leaf or m - i_lo < min_leaf:
        return np.inf, 0.0, 0.0
    if loss_kind == EXPONENTIAL:
        lp = pp[i_lo]
        ln = pn[i_lo]
        bp = pp[i_hi] - pp[i_lo]
        bn = pn[i_hi] - pn[i_lo]
        rp = pp[m] - pp[i_hi]
        rn = pn[m] - pn[i_hi]
        wl1, wr1, f1 = fixed_sides_exp(lp + bp, ln, rp, rn + bn, 1, w_max)
        wl2, wr2, f2 = fixed_sides_exp(lp, ln + bn, rp + bp, rn, -1, w_max)
    else:
        a = np.empty(m)
        bb = np.empty(m)
        for i in range(m):
            if i < i_lo:
                a[i] = gs[i]
                bb[i] = np.inf
            elif i >= i_hi:
                a[i] = np.inf
                bb[i] = gs[i]
            elif ys[i] < 0:
                a[i] = np.inf
                bb[i] = gs[i]
            else:
                a[i] = gs[i]
                bb[i] = np.inf
        wl1, wr1, f1 = solve_pair(a, bb, ys, loss_kind, 1, w_max, shift, False)
        for i in range(i_lo, i_hi):
            if ys[i] > 0:
                a[i] = np.inf
                bb[i] = gs[i]
            else:
                a[i] = gs[i]
                bb[i] = np.inf
        wl2, wr2, f2 = solve_pair(a, bb, ys, loss_kind, -1, w_max, shift, False)
    if f1 <= f2:
        return f1, wl1, wr1
    return f2, wl2, wr2


@njit(**_opts)
def _bound_prefix(gs, ys, shift, loss_kind):
    m = gs.shape[0]
    pp = np.zeros(m + 1)
    pn = np.zeros(m + 1)
    if loss_kind == EXPONENTIAL:
        for i in range(m):
            gam = _exp_shifted(gs[i], shift)
            pp[i + 1] = pp[i] + (gam if ys[i] > 0 else 0.0)
            pn[i + 1] = pn[i] + (gam if ys[i] < 0 else 0.0)
    return pp, pn


@njit(**_par)
def bound_split_search(XT, order, in_node, g, y, shift, eps, nu, region_lo,
                       region_hi, min_leaf, w_max, loss_kind):
    """Per-coordinate summary rows, see ``_summarise``."""
    d = XT.shape[0]
    out = np.full((d, 8), np.nan)
    for j in prange(d):
        xs, gs, ys = _gather(j, XT, order, in_node, g, y)
        pp, pn = _bound_prefix(gs, ys, shift, loss_kind)
        cand = _merge_candidates(xs, eps, nu, max(0.0, region_lo[j] - eps),
                                 min(1.0, region_hi[j] + eps))
        k = cand.shape[0]
        losses = np.empty(k)
        wls = np.empty(k)
        wrs = np.empty(k)
        for c in range(k):
            losses[c], wls[c], wrs[c] = _bound_eval(xs, gs, ys, pp, pn, cand[c], eps,
                                                    min_leaf, w_max, loss_kind, shift)
        out[j] = _summarise(cand, losses, wls, wrs)
    return out


@njit(**_opts)
def bound_threshold_losses(XT, order, in_node, g, y, shift, eps, min_leaf, w_max,
                           loss_kind, j, thresholds):
    xs, gs, ys = _gather(j, XT, order, in_node, g, y)
    pp, pn = _bound_prefix(gs, ys, shift, loss_kind)
    k = thresholds.shape[0]
    out = np.empty((k, 3))
    for c in range(k):
        out[c, 0], out[c, 1], out[c, 2] = _bound_eval(
            xs, gs, ys, pp, pn, thresholds[c], eps, min_leaf, w_max, loss_kind, shift)
    return out


@njit(**_opts)
def _sparse_tables(v):
    m = v.shape[0]
    levels = 1
    while (1 << levels) <= m:
        levels += 1
    tmin = np.empty((levels, m))
    tmax = np.empty((levels, m))
    tmin[0] = v
    tmax[0] = v
    for lev in range(1, levels):
        half = 1 << (lev - 1)
        for i in range(m - (1 << lev) + 1):
            tmin[lev, i] = min(tmin[lev - 1, i], tmin[lev - 1, i + half])
            tmax[lev, i] = max(tmax[lev - 1, i], tmax[lev - 1, i + half])
    return tmin, tmax


@njit(**_opts)
def _range_min_y(tmin, tmax, lo, hi, yv):
    """min over p in [lo, hi] of yv * prefix[p]."""
    length = hi - lo + 1
    lev = 0
    while (1 << (lev + 1)) <= length:
        lev += 1
    r = hi - (1 << lev) + 1
    if yv > 0:
        return min(tmin[lev, lo], tmin[lev, r])
    return -max(tmax[lev, lo], tmax[lev, r])


@njit(**_opts)
def _exact_gather(j, XT, order, y, c_base):
    n = XT.shape[1]
    xs = np.empty(n)
    ys = np.empty(n)
    cs = np.empty(n)
    for t in range(n):
        i = order[j, t]
        xs[t] = XT[j, i]
        ys[t] = y[i]
        cs[t] = c_base[i]
    return xs, ys, cs


@njit(**_opts)
def _exact_eval(xs, ys, cs, k_lo, k_end, t, tmin, tmax, b, eps, min_leaf, w_max,
                loss_kind, shift, a, bb):
    n = xs.shape[0]
    kb_lt = np.searchsorted(t, b, side="left")
    kb_le = np.searchsorted(t, b, side="right")
    n_left = 0
    n_right = 0
    for i in range(n):
        x = xs[i]
        if b > x - eps:
            n_left += 1
            a[i] = cs[i] + _range_min_y(tmin, tmax, k_lo[i], min(kb_lt, k_end[i]), ys[i])
        else:
            a[i] = np.inf
        if b <= x + eps:
            n_right += 1
            if b > x - eps:
                bb[i] = cs[i] + _range_min_y(tmin, tmax, kb_le, k_end[i], ys[i])
            else:
                bb[i] = cs[i] + _range_min_y(tmin, tmax, k_lo[i], k_end[i], ys[i])
        else:
            bb[i] = np.inf
    if n_left < min_leaf or n_right < min_leaf:
        return np.inf, 0.0, 0.0
    wl, wr, f = solve_pair(a, bb, ys, loss_kind, 0, w_max, shift, False)
    return f, wl, wr


@njit(**_opts)
def _exact_setup(j, XT, order, y, G, Gk, wl_sum, ptr, t_sorted, wr_merged, eps):
    n = XT.shape[1]
    c_base = np.empty(n)
    for i in range(n):
        c_base[i] = G[i] - Gk[i, j] + y[i] * wl_sum[j]
    xs, ys, cs = _exact_gather(j, XT, order, y, c_base)
    t = t_sorted[ptr[j]:ptr[j + 1]]
    prefix = np.zeros(t.shape[0] + 1)
    for p in range(t.shape[0]):
        prefix[p + 1] = prefix[p] + wr_merged[ptr[j] + p]
    tmin, tmax = _sparse_tables(prefix)
    k_lo = np.empty(n, dtype=np.int64)
    k_end = np.empty(n, dtype=np.int64)
    for i in range(n):
        k_lo[i] = np.searchsorted(t, xs[i] - eps, side="right")
        k_end[i] = np.searchsorted(t, xs[i] + eps, side="right")
    return xs, ys, cs, t, tmin, tmax, k_lo, k_end


@njit(**_par)
def exact_split_search(XT, order, y, G, Gk, wl_sum, ptr, t_sorted, wr_merged, eps,
                       nu, min_leaf, w_max, loss_kind, shift):
    d, n = XT.shape
    out = np.full((d, 8), np.nan)
    for j in prange(d):
        xs, ys, cs, t, tmin, tmax, k_lo, k_end = _exact_setup(
            j, XT, order, y, G, Gk, wl_sum, ptr, t_sorted, wr_merged, eps)
        cand = _merge_candidates(xs, eps, nu, 0.0, 1.0)
        k = cand.shape[0]
        losses = np.empty(k)
        wls = np.empty(k)
        wrs = np.empty(k)
        a = np.empty(n)
        bb = np.empty(n)
        for c in range(k):
            losses[c], wls[c], wrs[c] = _exact_eval(
                xs, ys, cs, k_lo, k_end, t, tmin, tmax, cand[c], eps, min_leaf,
                w_max, loss_kind, shift, a, bb)
        out[j] = _summarise(cand, losses, wls, wrs)
    return out


@njit(**_opts)
def exact_threshold_losses(XT, order, y, G, Gk, wl_sum, ptr, t_sorted, wr_merged, eps,
                           min_leaf, w_max, loss_kind, shift, j, thresholds):
    n = XT.shape[1]
    xs, ys, cs, t, tmin, tmax, k_lo, k_end = _exact_setup(
        j, XT, order, y, G, Gk, wl_sum, ptr, t_sorted, wr_merged, eps)
    k = thresholds.shape[0]
    out = np.empty((k, 3))
    a = np.empty(n)
    bb = np.empty(n)
    for c in range(k):
        f, wl, wr = _exact_eval(xs, ys, cs, k_lo, k_end, t, tmin, tmax, thresholds[c],
                                eps, min_leaf, w_max, loss_kind, shift, a, bb)
        out[c, 0] = f
        out[c, 1] = wl
        out[c, 2] = wr
    return out
