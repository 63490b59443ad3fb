"""Vectorised numpy kernels, the fallback for ``_kernels_numba``.

Accumulation order follows the compiled loops (sequential over stumps,
trees and sorted thresholds) so both paths agree to rounding.
"""
import numpy as np

EXPONENTIAL = 0
LOGISTIC = 1
EXP_CLAMP = 700.0
GOLDEN_ITERS = 64
BISECT_ITERS = 60
RUN_RTOL = 1e-12


# ---------------------------------------------------------------- model eval

def stump_margins(X, coord, thr, wl, wr):
    out = np.zeros(X.shape[0])
    for c, b, l, r in zip(coord, thr, wl, wr):
        out += np.where(X[:, c] >= b, l + r, l)
    return out


def _nudge_up(x, target):
    dk = target - x
    low = x + dk < target
    while low.any():
        dk = np.where(low, np.nextafter(dk, np.inf), dk)
        low = x + dk < target
    return dk


def stump_certify(X, y, eps, coord, thr, wl, wr, ptr, t_sorted, wr_merged):
    n, d = X.shape
    delta = np.zeros((n, d))
    Z = X.copy()
    for k in range(d):
        t = t_sorted[ptr[k]:ptr[k + 1]]
        w = wr_merged[ptr[k]:ptr[k + 1]]
        if t.size == 0:
            continue
        x = X[:, k]
        s = np.searchsorted(t, x - eps, side="right")
        e = np.searchsorted(t, x + eps, side="right")
        v = np.zeros(n)
        best = np.zeros(n)
        best_p = np.full(n, -1)
        for step in range(int((e - s).max(initial=0))):
            p = s + step
            act = p < e
            pc = np.minimum(p, t.size - 1)
            v = np.where(act, v + y * w[pc], v)
            better = act & (v < best)
            best = np.where(better, v, best)
            best_p = np.where(better, pc, best_p)
        left = (e > s) & (best_p < 0)
        delta[left, k] = -eps
        Z[left, k] = x[left] - eps
        right = best_p >= 0
        if right.any():
            dk = _nudge_up(x[right], t[best_p[right]])
            delta[right, k] = dk
            Z[right, k] = x[right] + dk
    return y * stump_margins(Z, coord, thr, wl, wr), delta


def stump_coord_terms(X, y, eps, ptr, t_sorted, wr_merged, wl_sum):
    n, d = X.shape
    out = np.zeros((n, d))
    for k in range(d):
        t = t_sorted[ptr[k]:ptr[k + 1]]
        w = wr_merged[ptr[k]:ptr[k + 1]]
        if t.size == 0:
            continue
        x = X[:, k]
        s = np.searchsorted(t, x - eps, side="right")
        e = np.searchsorted(t, x + eps, side="right")
        csum = np.concatenate(([0.0], np.cumsum(w)))
        v = y * csum[s]
        best = v.copy()
        for step in range(int((e - s).max(initial=0))):
            p = s + step
            act = p < e
            pc = np.minimum(p, t.size - 1)
            v = np.where(act, v + y * w[pc], v)
            best = np.where(act & (v < best), v, best)
        out[:, k] = y * wl_sum[k] + best
    return out


def tree_margins(X, feat, thr, wl, wr, left, right, roots):
    n = X.shape[0]
    out = np.zeros(n)
    rows = np.arange(n)
    for root in roots:
        cur = np.full(n, root)
        val = np.zeros(n)
        live = np.ones(n, dtype=bool)
        while live.any():
            r = rows[live]
            c = cur[live]
            go = X[r, feat[c]] >= thr[c]
            nxt = np.where(go, right[c], left[c])
            done = nxt < 0
            val[r[done]] = np.where(go[done], wl[c[done]] + wr[c[done]], wl[c[done]])
            cur[r] = nxt
            live[r[done]] = False
        out += val
    return out


def tree_min_margins(X, y, eps, feat, thr, wl, wr, left, right, roots):
    n = X.shape[0]
    out = np.zeros(n)

    def visit(node, mask, best):
        x = X[:, feat[node]]
        lm = mask & (x <= thr[node] + eps)
        rm = mask & (x >= thr[node] - eps)
        if left[node] >= 0:
            visit(left[node], lm, best)
        else:
            np.minimum(best, np.where(lm, y * wl[node], np.inf), out=best)
        if right[node] >= 0:
            visit(right[node], rm, best)
        else:
            np.minimum(best, np.where(rm, y * (wl[node] + wr[node]), np.inf), out=best)

    for root in roots:
        best = np.full(n, np.inf)
        visit(root, np.ones(n, dtype=bool), best)
        out += best
    return out


# ------------------------------------------------------------------- solvers

def _exp_shifted(v, shift):
    v = np.asarray(v, dtype=float)
    with np.errstate(invalid="ignore"):
        out = np.exp(-np.clip(v - shift, -EXP_CLAMP, EXP_CLAMP))
    return np.where(v == np.inf, 0.0, out)


def _softplus_neg(m):
    return np.where(m < 0.0, -m + np.log1p(np.exp(np.minimum(m, 0.0))),
                    np.log1p(np.exp(-np.maximum(m, 0.0))))


def _sigmoid_neg(m):
    e = np.exp(-np.abs(m))
    return np.where(m >= 0.0, e / (1.0 + e), 1.0 / (1.0 + e))


def _half_log_ratio(pos, neg, w_max):
    pos = np.asarray(pos, dtype=float)
    neg = np.asarray(neg, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.clip(0.5 * (np.log(pos) - np.log(neg)), -w_max, w_max)
    v = np.where(pos <= 0.0, -w_max, v)
    v = np.where(neg <= 0.0, w_max, v)
    return np.where((pos <= 0.0) & (neg <= 0.0), np.nan, v)


def _leaf_pair(vl, vr, w_max):
    wl = np.asarray(vl, dtype=float)
    wr = np.asarray(vr, dtype=float) - wl
    over = np.abs(wl + wr) > w_max
    while over.any():
        wr = np.where(over, np.nextafter(wr, 0.0), wr)
        over = np.abs(wl + wr) > w_max
    return wl, wr


def fixed_sides_exp(s01, s0m1, s11, s1m1, sign, w_max):
    s01, s0m1, s11, s1m1 = (np.asarray(v, dtype=float) for v in (s01, s0m1, s11, s1m1))
    vl = _half_log_ratio(s01, s0m1, w_max)
    vr = _half_log_ratio(s11, s1m1, w_max)
    both = np.isnan(vl) & np.isnan(vr)
    vl, vr = np.where(np.isnan(vl), vr, vl), np.where(np.isnan(vr), vl, vr)
    vl = np.where(both, 0.0, vl)
    vr = np.where(both, 0.0, vr)
    bad = (vr < vl) if sign > 0 else (vr > vl) if sign < 0 else np.zeros_like(vl, dtype=bool)
    v = _half_log_ratio(s01 + s11, s0m1 + s1m1, w_max)
    v = np.where(np.isnan(v), 0.0, v)
    vl = np.where(bad, v, vl)
    vr = np.where(bad, v, vr)
    loss = s01 * np.exp(-vl) + s0m1 * np.exp(vl) + s11 * np.exp(-vr) + s1m1 * np.exp(vr)
    wl, wr = _leaf_pair(vl, vr, w_max)
    if np.ndim(wl) == 0:
        return float(wl), float(wr), float(loss)
    return wl, wr, loss


def _wl_bounds(wr, w_max):
    return np.maximum(-w_max, -w_max - wr), np.minimum(w_max, w_max - wr)


def _profile_exp(EA, EB, ypos, wr, w_max, bisect):
    em = np.exp(-wr)[:, None]
    ep = np.exp(wr)[:, None]
    pos = np.where(ypos, np.maximum(EA, EB * em), 0.0).sum(axis=1)
    neg = np.where(ypos, 0.0, np.maximum(EA, EB * ep)).sum(axis=1)
    lo, hi = _wl_bounds(wr, w_max)
    if not bisect:
        with np.errstate(divide="ignore", invalid="ignore"):
            wl = np.clip(0.5 * (np.log(pos) - np.log(neg)), lo, hi)
        wl = np.where(pos <= 0.0, lo, wl)
        wl = np.where(neg <= 0.0, hi, wl)
        wl = np.where((pos <= 0.0) & (neg <= 0.0), np.clip(0.0, lo, hi), wl)
    else:
        def slope(w):
            return -pos * np.exp(-w) + neg * np.exp(w)

        a, b = lo.copy(), hi.copy()
        for _ in range(BISECT_ITERS):
            mid = 0.5 * (a + b)
            up = slope(mid) > 0.0
            b = np.where(up, mid, b)
            a = np.where(up, a, mid)
        wl = 0.5 * (a + b)
        wl = np.where(slope(hi) <= 0.0, hi, wl)
        wl = np.where(slope(lo) >= 0.0, lo, wl)
    return wl, pos * np.exp(-wl) + neg * np.exp(wl)


def _logistic_margins(A, B, y, wl, wr):
    return np.minimum(A + y * wl[:, None], B + y * (wl + wr)[:, None])


def _profile_logistic(A, B, y, wr, w_max):
    lo, hi = _wl_bounds(wr, w_max)

    def slope(w):
        return -(y * _sigmoid_neg(_logistic_margins(A, B, y, w, wr))).sum(axis=1)

    a, b = lo.copy(), hi.copy()
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (a + b)
        up = slope(mid) > 0.0
        b = np.where(up, mid, b)
        a = np.where(up, a, mid)
    wl = 0.5 * (a + b)
    wl = np.where(slope(hi) <= 0.0, hi, wl)
    wl = np.where(slope(lo) >= 0.0, lo, wl)
    return wl, _softplus_neg(_logistic_margins(A, B, y, wl, wr)).sum(axis=1)


def solve_pair_batch(A, B, y, loss_kind, sign, w_max, shift, bisect):
    """Row-wise version of the compiled ``solve_pair``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    y = np.asarray(y, dtype=float)
    K = A.shape[0]
    if loss_kind == EXPONENTIAL:
        EA, EB = _exp_shifted(A, shift), _exp_shifted(B, shift)
        ypos = y > 0

        def profile(wr):
            return _profile_exp(EA, EB, ypos, wr, w_max, bisect)
    else:
        def profile(wr):
            return _profile_logistic(A, B, y, wr, w_max)

    lo = np.full(K, 0.0 if sign > 0 else -2.0 * w_max)
    hi = np.full(K, 0.0 if sign < 0 else 2.0 * w_max)
    invphi = 0.5 * (np.sqrt(5.0) - 1.0)
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    w1, f1 = profile(x1)
    w2, f2 = profile(x2)
    for _ in range(GOLDEN_ITERS):
        left = f1 <= f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        nx1 = np.where(left, hi - invphi * (hi - lo), x2)
        nx2 = np.where(left, x1, lo + invphi * (hi - lo))
        probe = np.where(left, nx1, nx2)
        wp, fp = profile(probe)
        w1, f1, w2, f2 = (np.where(left, wp, w2), np.where(left, fp, f2),
                          np.where(left, w1, wp), np.where(left, f1, fp))
        x1, x2 = nx1, nx2
    first = f1 <= f2
    br = np.where(first, x1, x2)
    bl = np.where(first, w1, w2)
    bf = np.where(first, f1, f2)
    w0, f0 = profile(np.zeros(K))
    zero = f0 <= bf + 1e-14 * np.abs(bf)
    br = np.where(zero, 0.0, br)
    bl = np.where(zero, w0, bl)
    bf = np.where(zero, f0, bf)
    wl, wr = _leaf_pair(bl, bl + br, w_max)
    return wl, wr, bf


def solve_pair(a, b, y, loss_kind, sign, w_max, shift, bisect):
    wl, wr, f = solve_pair_batch(a[None, :], b[None, :], y, loss_kind, sign, w_max,
                                 shift, bisect)
    return float(wl[0]), float(wr[0]), float(f[0])


# ----------------------------------------------------------- split searches

def _candidates(xs, eps, nu, lo_b, hi_b):
    off = eps + nu
    c = np.unique(np.concatenate((xs - off, xs + off)))
    return c[(c > lo_b) & (c < hi_b)]


def _summarise(cand, losses, wls, wrs):
    res = np.full(8, np.nan)
    if cand.size == 0 or not np.isfinite(losses).any():
        res[0] = np.inf
        return res
    best = losses.min()
    res[0] = best
    tol = best + RUN_RTOL * abs(best)
    ok = losses <= tol
    r0 = int(np.argmax(ok))
    r1 = r0
    while r1 + 1 < cand.size and ok[r1 + 1]:
        r1 += 1
    if r0 > 0:
        res[1] = cand[r0 - 1]
    res[2] = cand[r0]
    res[3] = cand[r1]
    if r1 + 1 < cand.size:
        res[4] = cand[r1 + 1]
    mid = (r0 + r1) // 2
    res[5:8] = cand[mid], wls[mid], wrs[mid]
    return res


def _gather(j, XT, order, in_node, g, y):
    idx = order[j][in_node[order[j]]]
    return XT[j, idx], g[idx], y[idx]


def _bound_losses(xs, gs, ys, cand, shift, eps, min_leaf, w_max, loss_kind):
    m = xs.size
    K = cand.size
    i_lo = np.searchsorted(xs, cand - eps, side="left")
    i_hi = np.searchsorted(xs, cand + eps, side="right")
    valid = (i_hi >= min_leaf) & (m - i_lo >= min_leaf)
    if loss_kind == EXPONENTIAL:
        gam = _exp_shifted(gs, shift)
        pp = np.concatenate(([0.0], np.cumsum(np.where(ys > 0, gam, 0.0))))
        pn = np.concatenate(([0.0], np.cumsum(np.where(ys < 0, gam, 0.0))))
        lp, ln = pp[i_lo], pn[i_lo]
        bp, bn = pp[i_hi] - pp[i_lo], pn[i_hi] - pn[i_lo]
        rp, rn = pp[m] - pp[i_hi], pn[m] - pn[i_hi]
        wl1, wr1, f1 = fixed_sides_exp(lp + bp, ln, rp, rn + bn, 1, w_max)
        wl2, wr2, f2 = fixed_sides_exp(lp, ln + bn, rp + bp, rn, -1, w_max)
    else:
        pos_idx = np.arange(m)[None, :]
        left_only = pos_idx < i_lo[:, None]
        right_only = pos_idx >= i_hi[:, None]
        both = ~left_only & ~right_only
        G = np.broadcast_to(gs, (K, m))
        to_right1 = right_only | (both & (ys < 0))
        to_right2 = right_only | (both & (ys > 0))
        wl1, wr1, f1 = solve_pair_batch(np.where(to_right1, np.inf, G), np.where(to_right1, G, np.inf),
                                        ys, loss_kind, 1, w_max, shift, False)
        wl2, wr2, f2 = solve_pair_batch(np.where(to_right2, np.inf, G), np.where(to_right2, G, np.inf),
                                        ys, loss_kind, -1, w_max, shift, False)
    first = f1 <= f2
    f = np.where(valid, np.where(first, f1, f2), np.inf)
    wl = np.where(valid, np.where(first, wl1, wl2), 0.0)
    wr = np.where(valid, np.where(first, wr1, wr2), 0.0)
    return f, wl, wr


def bound_split_search(XT, order, in_node, g, y, shift, eps, nu, region_lo, region_hi,
                       min_leaf, w_max, loss_kind):
    d = XT.shape[0]
    out = np.full((d, 8), np.nan)
    for j in range(d):
        xs, gs, ys = _gather(j, XT, order, in_node, g, y)
        cand = _candidates(xs, eps, nu, max(0.0, region_lo[j] - eps),
                           min(1.0, region_hi[j] + eps))
        if cand.size == 0:
            out[j, 0] = np.inf
            continue
        f, wl, wr = _bound_losses(xs, gs, ys, cand, shift, eps, min_leaf, w_max, loss_kind)
        out[j] = _summarise(cand, f, wl, wr)
    return out


def bound_threshold_losses(XT, order, in_node, g, y, shift, eps, min_leaf, w_max,
                           loss_kind, j, thresholds):
    xs, gs, ys = _gather(j, XT, order, in_node, g, y)
    f, wl, wr = _bound_losses(xs, gs, ys, np.asarray(thresholds, dtype=float), shift, eps,
                              min_leaf, w_max, loss_kind)
    return np.column_stack((f, wl, wr))


def _exact_losses(j, XT, order, y, G, Gk, wl_sum, ptr, t_sorted, wr_merged, eps, cand,
                  min_leaf, w_max, loss_kind, shift):
    c_base = G - Gk[:, j] + y * wl_sum[j]
    o = order[j]
    xs, ys, cs = XT[j, o], y[o], c_base[o]
    t = t_sorted[ptr[j]:ptr[j + 1]]
    prefix = np.concatenate(([0.0], np.cumsum(wr_merged[ptr[j]:ptr[j + 1]])))
    k_lo = np.searchsorted(t, xs - eps, side="right")
    k_end = np.searchsorted(t, xs + eps, side="right")
    kb_lt = np.searchsorted(t, cand, side="left")[:, None]
    kb_le = np.searchsorted(t, cand, side="right")[:, None]
    b = cand[:, None]
    left_ok = b > xs - eps
    right_ok = b <= xs + eps
    hl_hi = np.minimum(kb_lt, k_end)
    hr_lo = np.where(left_ok, kb_le, k_lo)
    hl = np.full(left_ok.shape, np.inf)
    hr = np.full(left_ok.shape, np.inf)
    for p in range(prefix.size):
        val = ys * prefix[p]
        in_l = (p >= k_lo) & (p <= hl_hi)
        in_r = (p >= hr_lo) & (p <= k_end)
        hl = np.minimum(hl, np.where(in_l, val, np.inf))
        hr = np.minimum(hr, np.where(in_r, val, np.inf))
    A = np.where(left_ok, cs + hl, np.inf)
    B = np.where(right_ok, cs + hr, np.inf)
    valid = (left_ok.sum(axis=1) >= min_leaf) & (right_ok.sum(axis=1) >= min_leaf)
    wl, wr, f = solve_pair_batch(A, B, ys, loss_kind, 0, w_max, shift, False)
    return np.where(valid, f, np.inf), np.where(valid, wl, 0.0), np.where(valid, wr, 0.0)


def exact_split_search(XT, order, y, G, Gk, wl_sum, ptr, t_sorted, wr_merged, eps, nu,
                       min_leaf, w_max, loss_kind, shift):
    d = XT.shape[0]
    out = np.full((d, 8), np.nan)
    for j in range(d):
        cand = _candidates(XT[j, order[j]], eps, nu, 0.0, 1.0)
        if cand.size == 0:
            out[j, 0] = np.inf
            continue
        f, wl, wr = _exact_losses(j, XT, order, y, G, Gk, wl_sum, ptr, t_sorted, wr_merged,
                                  eps, cand, min_leaf, w_max, loss_kind, shift)
        out[j] = _summarise(cand, f, wl, wr)
    return out


def exact_threshold_losses(XT, order, y, G, Gk, wl_sum, ptr, t_sorted, wr_merged, eps,
                           min_leaf, w_max, loss_kind, shift, j, thresholds):
    f, wl, wr = _exact_losses(j, XT, order, y, G, Gk, wl_sum, ptr, t_sorted, wr_merged, eps,
                              np.asarray(thresholds, dtype=float), min_leaf, w_max,
                              loss_kind, shift)
    return np.column_stack((f, wl, wr))
