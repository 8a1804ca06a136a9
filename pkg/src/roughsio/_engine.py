"""Direct-summation convolution cores (numba).

No fast transform exists for group convolution at this generality, so every
operator below is a direct sum  out(x) = sum_s v_s * k(z(s, x)) * vol.  The
group product enters only through

    z_d = x_d + c_d(s) + sum_{t: coord(t)=d} fac_src[s, t] * fac_out[x, t],

where the per-source and per-output monomial factors are precomputed by the
wrappers in :mod:`roughsio.engine`.  Coordinates that receive no polynomial
correction stay on the output lattice, so kernel lookups interpolate only
over the "twisted" dimensions (none for abelian groups, one for Heisenberg).

Determinism: parallelism is over output points; each output accumulates over
sources in a fixed order, so results are bit-identical for any thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

MAXN = 4  # supported coordinate dimensions


@njit(inline="always")
def _hash_bins(seed, ib, n):
    h = np.uint64(seed) ^ np.uint64(0x9E3779B97F4A7C15)
    for d in range(n):
        h = h ^ (np.uint64(ib[d] + 1) * np.uint64(0xBF58476D1CE4E5B9))
        h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        h = h ^ (h >> np.uint64(31))
    # map to [-1, 1]
    return (np.float64(h >> np.uint64(11)) / 4503599627370496.0) - 1.0


@njit(inline="always")
def _omega_eval(theta, n, pcoef, ppow, sign_coef, rough_amp, rough_seed, rough_bins):
    val = 0.0
    for t in range(pcoef.shape[0]):
        term = pcoef[t]
        for d in range(n):
            p = ppow[t, d]
            for _ in range(p):
                term *= theta[d]
        val += term
    if sign_coef != 0.0:
        val += sign_coef if theta[0] >= 0.0 else -sign_coef
    if rough_amp != 0.0:
        ib = np.empty(MAXN, dtype=np.int64)
        for d in range(n):
            f = (theta[d] + 1.0) * 0.5 * rough_bins
            i = np.int64(f)
            if i < 0:
                i = 0
            if i > rough_bins - 1:
                i = rough_bins - 1
            ib[d] = i
        val += rough_amp * _hash_bins(rough_seed, ib, n)
    return val


@njit(cache=True)
def omega_eval_batch(
    thetas, pcoef, ppow, sign_coef, rough_amp, rough_seed, rough_bins
):
    m, n = thetas.shape
    out = np.empty(m)
    th = np.empty(MAXN)
    for i in range(m):
        for d in range(n):
            th[d] = thetas[i, d]
        out[i] = _omega_eval(
            th, n, pcoef, ppow, sign_coef, rough_amp, rough_seed, rough_bins
        )
    return out


@njit(inline="always")
def _rho_and_theta(z, n, a_exp, theta):
    """Quasi-norm and unit-sphere projection of z; returns rho."""
    rho = 0.0
    for d in range(n):
        az = abs(z[d])
        a = a_exp[d]
        if a == 1.0:
            comp = az
        elif a == 2.0:
            comp = np.sqrt(az)
        else:
            comp = az ** (1.0 / a)
        if comp > rho:
            rho = comp
    if rho > 0.0:
        for d in range(n):
            a = a_exp[d]
            if a == 1.0:
                theta[d] = z[d] / rho
            elif a == 2.0:
                theta[d] = z[d] / (rho * rho)
            else:
                theta[d] = z[d] / rho**a
    return rho


@njit(inline="always")
def _z_coords(z, n, x, const_s, fac_src, fac_out, tcoord, s, oi, T):
    for d in range(n):
        z[d] = x[d] + const_s[s, d]
    for t in range(T):
        z[tcoord[t]] += fac_src[s, t] * fac_out[oi, t]


@njit(parallel=True, fastmath=True, cache=True)
def conv_polar(
    out,            # (C, N) accumulator, preallocated zeros
    out_pts,        # (N, n)
    src_vals,       # (C, m)
    const_s,        # (m, n) translation constants per source
    fac_src,        # (m, T)
    fac_out,        # (N, T)
    tcoord,         # (T,)
    n,
    a_exp,          # (n,)
    r_lo, r_hi,     # annulus bounds on rho
    lo_pows, hi_pows,  # (n,) precomputed r_lo^{a_d}, r_hi^{a_d}
    power,          # radial power exponent (0.0 for none)
    use_power,
    rtab,           # radial table values (log-uniform) or dummy
    use_table,
    rt_logr0, rt_inv_dlog,
    pcoef, ppow, sign_coef, rough_amp, rough_seed, rough_bins,
    vol,
):
    N = out_pts.shape[0]
    m = const_s.shape[0]
    C = out.shape[0]
    T = tcoord.shape[0]
    mtab = rtab.shape[0]
    for oi in prange(N):
        z = np.empty(MAXN)
        th = np.empty(MAXN)
        x = np.empty(MAXN)
        for d in range(n):
            x[d] = out_pts[oi, d]
        for s in range(m):
            _z_coords(z, n, x, const_s, fac_src, fac_out, tcoord, s, oi, T)
            # cheap annulus rejection without fractional powers
            reject = False
            inside_lo = True
            for d in range(n):
                az = abs(z[d])
                if az > hi_pows[d]:
                    reject = True
                    break
                if az > lo_pows[d]:
                    inside_lo = False
            if reject or inside_lo:
                continue
            rho = _rho_and_theta(z, n, a_exp, th)
            if rho <= r_lo or rho > r_hi:
                continue
            kv = _omega_eval(
                th, n, pcoef, ppow, sign_coef, rough_amp, rough_seed, rough_bins
            )
            if use_power:
                kv *= rho**power
            if use_table:
                fi = (np.log(rho) - rt_logr0) * rt_inv_dlog
                j = np.int64(fi)
                if fi < 0.0 or j >= mtab - 1:
                    continue
                w = fi - j
                kv *= rtab[j] * (1.0 - w) + rtab[j + 1] * w
            for c in range(C):
                out[c, oi] += src_vals[c, s] * kv
    for oi in prange(N):
        for c in range(C):
            out[c, oi] *= vol


@njit(parallel=True, fastmath=True, cache=True)
def conv_polar_shells(
    out,            # (C, S, N) accumulator
    out_pts, src_vals, const_s, fac_src, fac_out, tcoord,
    n, a_exp,
    edge_log2_lo,   # log2 of innermost shell edge
    inv_dlog2,      # shells per log2 unit
    nshells,
    power,
    pcoef, ppow, sign_coef, rough_amp, rough_seed, rough_bins,
    vol,
):
    """Shell-bucketed rough-kernel sums: one pass yields every truncation.

    Shell s collects the kernel integral over {edge_s < rho <= edge_{s+1}}
    with edges log2-uniform; suffix sums over s then give T_eps for every
    eps on the shell grid exactly (same arithmetic, so the dyadic splitting
    identity holds pointwise to rounding).
    """
    N = out_pts.shape[0]
    m = const_s.shape[0]
    C = out.shape[0]
    T = tcoord.shape[0]
    log2e = 1.4426950408889634
    for oi in prange(N):
        z = np.empty(MAXN)
        th = np.empty(MAXN)
        x = np.empty(MAXN)
        for d in range(n):
            x[d] = out_pts[oi, d]
        for s in range(m):
            _z_coords(z, n, x, const_s, fac_src, fac_out, tcoord, s, oi, T)
            rho = _rho_and_theta(z, n, a_exp, th)
            if rho <= 0.0:
                continue
            l2 = np.log(rho) * log2e
            fi = (l2 - edge_log2_lo) * inv_dlog2
            if fi < 0.0:
                continue
            si = np.int64(fi)
            if si >= nshells:
                continue
            kv = _omega_eval(
                th, n, pcoef, ppow, sign_coef, rough_amp, rough_seed, rough_bins
            )
            kv *= rho**power
            for c in range(C):
                out[c, si, oi] += src_vals[c, s] * kv
    for oi in prange(N):
        for c in range(C):
            for si in range(nshells):
                out[c, si, oi] *= vol


@njit(parallel=True, fastmath=True, cache=True)
def conv_grid(
    out,            # (C, N)
    out_pts, src_vals, const_s, fac_src, fac_out, tcoord,
    n,
    kvals,          # kernel/field values, flat row-major
    k_lo, k_inv_sp, k_counts, k_strides,   # (n,) each
    interp_mask,    # (n,) uint8: 1 -> interpolate this dim, 0 -> round
    vol,
):
    N = out_pts.shape[0]
    m = const_s.shape[0]
    C = out.shape[0]
    T = tcoord.shape[0]
    # enumerate corners over interpolated dims once
    n_tw = 0
    tw_dims = np.empty(MAXN, dtype=np.int64)
    for d in range(n):
        if interp_mask[d]:
            tw_dims[n_tw] = d
            n_tw += 1
    ncorner = 1 << n_tw
    for oi in prange(N):
        z = np.empty(MAXN)
        x = np.empty(MAXN)
        jbase = np.empty(MAXN, dtype=np.int64)
        frac = np.empty(MAXN)
        for d in range(n):
            x[d] = out_pts[oi, d]
        for s in range(m):
            _z_coords(z, n, x, const_s, fac_src, fac_out, tcoord, s, oi, T)
            skip = False
            for d in range(n):
                f = (z[d] - k_lo[d]) * k_inv_sp[d]
                if interp_mask[d]:
                    j = np.int64(np.floor(f))
                    if j < 0 or j >= k_counts[d] - 1:
                        skip = True
                        break
                    jbase[d] = j
                    frac[d] = f - j
                else:
                    j = np.int64(f + 0.5)
                    if j < 0 or j >= k_counts[d] or abs(f - j) > 1e-6:
                        skip = True
                        break
                    jbase[d] = j
                    frac[d] = 0.0
            if skip:
                continue
            base = 0
            for d in range(n):
                base += jbase[d] * k_strides[d]
            kv = 0.0
            for corner in range(ncorner):
                w = 1.0
                off = 0
                for b in range(n_tw):
                    d = tw_dims[b]
                    if corner & (1 << b):
                        w *= frac[d]
                        off += k_strides[d]
                    else:
                        w *= 1.0 - frac[d]
                kv += w * kvals[base + off]
            for c in range(C):
                out[c, oi] += src_vals[c, s] * kv
    for oi in prange(N):
        for c in range(C):
            out[c, oi] *= vol


@njit(parallel=True, fastmath=True, cache=True)
def ball_scan(
    out_avg,        # (M, R, C) ball averages per center/radius/channel
    out_cnt,        # (M, R) in-grid cell counts
    centers,        # (M, n)
    const_s,        # (m, n) offsets sorted by rho, as translation constants
    fac_src, fac_cen, tcoord,
    n,
    boundaries,     # (R,) index after last offset of each radius bucket
    fvals,          # (C, N) field values, flat
    f_lo, f_inv_sp, f_counts, f_strides,
    interp_mask,
):
    """Running ball sums over rho-sorted offsets; snapshots at each radius.

    Balls are left translates x * B(0, r); field values off the output
    lattice (twisted dims) are linearly interpolated.
    """
    M = centers.shape[0]
    m = const_s.shape[0]
    C = fvals.shape[0]
    R = boundaries.shape[0]
    T = tcoord.shape[0]
    n_tw = 0
    tw_dims = np.empty(MAXN, dtype=np.int64)
    for d in range(n):
        if interp_mask[d]:
            tw_dims[n_tw] = d
            n_tw += 1
    ncorner = 1 << n_tw
    for ci in prange(M):
        y = np.empty(MAXN)
        x = np.empty(MAXN)
        jbase = np.empty(MAXN, dtype=np.int64)
        frac = np.empty(MAXN)
        acc = np.zeros(8)
        for d in range(n):
            x[d] = centers[ci, d]
        cnt = 0.0
        r_idx = 0
        for s in range(m):
            while r_idx < R and s == boundaries[r_idx]:
                for c in range(C):
                    out_avg[ci, r_idx, c] = acc[c] / cnt if cnt > 0 else 0.0
                out_cnt[ci, r_idx] = cnt
                r_idx += 1
            _z_coords(y, n, x, const_s, fac_src, fac_cen, tcoord, s, ci, T)
            skip = False
            for d in range(n):
                f = (y[d] - f_lo[d]) * f_inv_sp[d]
                if interp_mask[d]:
                    j = np.int64(np.floor(f))
                    if j < 0 or j >= f_counts[d] - 1:
                        skip = True
                        break
                    jbase[d] = j
                    frac[d] = f - j
                else:
                    j = np.int64(f + 0.5)
                    if j < 0 or j >= f_counts[d] or abs(f - j) > 1e-6:
                        skip = True
                        break
                    jbase[d] = j
                    frac[d] = 0.0
            if skip:
                continue
            base = 0
            for d in range(n):
                base += jbase[d] * f_strides[d]
            for c in range(C):
                kv = 0.0
                for corner in range(ncorner):
                    w = 1.0
                    off = 0
                    for b in range(n_tw):
                        d = tw_dims[b]
                        if corner & (1 << b):
                            w *= frac[d]
                            off += f_strides[d]
                        else:
                            w *= 1.0 - frac[d]
                    kv += w * fvals[c, base + off]
                acc[c] += kv
            cnt += 1.0
        while r_idx < R:
            for c in range(C):
                out_avg[ci, r_idx, c] = acc[c] / cnt if cnt > 0 else 0.0
            out_cnt[ci, r_idx] = cnt
            r_idx += 1
