"""Wrappers around the numba convolution cores.

Two complementary loop orders, both computing the same direct sum:

* ``scatter``: iterate the (sparse) sources of f, evaluating the kernel at
  z = y^{-1} x.  Used for f * kernel with an exactly evaluable kernel.
* ``gather``: iterate the rasterized cells of a kernel, sampling a grid
  field at x z^{-1}.  Used to compose kernels whose left factor is already
  a grid field.

Convolution order matters on non-abelian groups; the wrappers never swap
factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import _engine
from .fields import GridSpec, ScalarField
from .groups import GroupSpec, inverse, multiply, quasi_norm

__all__ = [
    "OmegaData",
    "PolarKernelData",
    "convolve_polar",
    "convolve_grid",
    "shell_convolve",
    "ball_averages",
    "interp_field",
    "reference_convolve",
    "boundary_clip_fraction",
]

_EMPTY_TAB = np.zeros(2)


@dataclass(frozen=True)
class OmegaData:
    """Numba-evaluable angular function: polynomial + sign + hashed bins."""

    n: int
    pcoef: np.ndarray
    ppow: np.ndarray
    sign_coef: float = 0.0
    rough_amp: float = 0.0
    rough_seed: int = 0
    rough_bins: int = 1

    @classmethod
    def zero(cls, n: int) -> "OmegaData":
        return cls(n, np.zeros(0), np.zeros((0, n), dtype=np.int64))

    @classmethod
    def from_poly_terms(cls, n: int, terms, **kw) -> "OmegaData":
        terms = list(terms)
        pcoef = np.array([c for _, c in terms], dtype=float)
        ppow = np.array(
            [list(beta) for beta, _ in terms], dtype=np.int64
        ).reshape(len(terms), n)
        return cls(n, pcoef, ppow, **kw)

    def values(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.ascontiguousarray(np.atleast_2d(thetas), dtype=float)
        return _engine.omega_eval_batch(
            thetas,
            self.pcoef,
            self.ppow,
            self.sign_coef,
            self.rough_amp,
            np.uint64(self.rough_seed),
            self.rough_bins,
        )

    def shifted(self, delta_terms) -> "OmegaData":
        """New OmegaData with polynomial terms added (projection corrections)."""
        terms = [(tuple(p), c) for p, c in zip(self.ppow.tolist(), self.pcoef.tolist())]
        terms.extend(delta_terms)
        return OmegaData.from_poly_terms(
            self.n,
            terms,
            sign_coef=self.sign_coef,
            rough_amp=self.rough_amp,
            rough_seed=self.rough_seed,
            rough_bins=self.rough_bins,
        )


@dataclass(frozen=True)
class PolarKernelData:
    """Radial-times-angular kernel k(x) = Omega(theta) * radial(rho).

    radial(rho) = rho^power (if use_power) times a log-uniform lookup table
    (if use_table), supported on the annulus (r_lo, r_hi].
    """

    omega: OmegaData
    r_lo: float
    r_hi: float
    power: float = 0.0
    use_power: bool = False
    rtab: np.ndarray = dataclass_field(default_factory=lambda: _EMPTY_TAB)
    use_table: bool = False
    rt_logr0: float = 0.0
    rt_inv_dlog: float = 1.0

    @classmethod
    def with_table(cls, omega, r_lo, r_hi, radial_fn, power=0.0, use_power=False,
                   table_size=2048):
        logs = np.linspace(np.log(r_lo), np.log(r_hi), table_size)
        rtab = np.asarray(radial_fn(np.exp(logs)), dtype=float)
        return cls(
            omega, float(r_lo), float(r_hi), power=power, use_power=use_power,
            rtab=rtab, use_table=True, rt_logr0=float(logs[0]),
            rt_inv_dlog=float((table_size - 1) / (logs[-1] - logs[0])),
        )

    def radial(self, rho: np.ndarray, raw: bool = False) -> np.ndarray:
        """Radial factor; ``raw`` skips the support cutoff (for quadrature)."""
        rho = np.asarray(rho, dtype=float)
        out = np.ones_like(rho)
        if self.use_power:
            out = out * np.maximum(rho, 1e-300) ** self.power
        if self.use_table:
            fi = (np.log(np.maximum(rho, 1e-300)) - self.rt_logr0) * self.rt_inv_dlog
            j = np.clip(np.floor(fi).astype(int), 0, len(self.rtab) - 2)
            w = np.clip(fi - j, 0.0, 1.0)
            out = out * ((1 - w) * self.rtab[j] + w * self.rtab[j + 1])
        if not raw:
            out = np.where((rho > self.r_lo) & (rho <= self.r_hi), out, 0.0)
        return out

    def __call__(self, g: GroupSpec, pts: np.ndarray) -> np.ndarray:
        """Exact evaluation at arbitrary points (vectorized)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        rho = quasi_norm(g, pts)
        safe = np.maximum(rho, 1e-300)
        theta = pts / safe[:, None] ** g.exponent_array
        vals = self.omega.values(theta) * self.radial(rho)
        return np.where(rho > 0, vals, 0.0)


# ---------------------------------------------------------------------------
# factor packing


def _group_tables(g: GroupSpec):
    T = len(g.terms)
    tcoord = np.array([t.coord for t in g.terms], dtype=np.int64)
    twisted = np.zeros(g.n, dtype=np.uint8)
    for t in g.terms:
        twisted[t.coord] = 1
    return T, tcoord, twisted


def _monomial_factors(pts: np.ndarray, pows) -> np.ndarray:
    out = np.ones(pts.shape[0])
    for d, p in enumerate(pows):
        if p:
            out = out * pts[:, d] ** p
    return out


def _pack_factors(g: GroupSpec, src_pts: np.ndarray, out_pts: np.ndarray, mode: str):
    """const_s, fac_src, fac_out for z = mult(a, b) with the source fixed.

    scatter: z = mult(src_inv, x)  (source is the first factor)
    gather:  z = mult(x, src_inv)  (source is the second factor)
    """
    src_inv = inverse(g, src_pts)
    m = src_pts.shape[0]
    N = out_pts.shape[0]
    T, tcoord, _ = _group_tables(g)
    fac_src = np.empty((m, T))
    fac_out = np.empty((N, T))
    for t_idx, t in enumerate(g.terms):
        if mode == "scatter":
            spow, opow = t.xpow, t.ypow
        elif mode == "gather":
            spow, opow = t.ypow, t.xpow
        else:
            raise ValueError(f"unknown mode {mode!r}")
        fac_src[:, t_idx] = t.coef * _monomial_factors(src_inv, spow)
        fac_out[:, t_idx] = _monomial_factors(out_pts, opow)
    return src_inv, fac_src, fac_out, tcoord


def _interp_mask(g: GroupSpec, out_grid: GridSpec, const_s, k_grid: GridSpec):
    """Dims needing interpolation: twisted ones plus lattice-misaligned ones."""
    _, _, twisted = _group_tables(g)
    mask = twisted.copy()
    sp_o = out_grid.spacing
    sp_k = k_grid.spacing
    for d in range(g.n):
        if mask[d]:
            continue
        if abs(sp_o[d] - sp_k[d]) > 1e-9 * sp_k[d]:
            mask[d] = 1
            continue
        f = (out_grid.lower[d] + const_s[:, d] - k_grid.lower[d]) / sp_k[d]
        frac = np.abs(f - np.round(f))
        if frac.size and np.max(frac) > 1e-6:
            mask[d] = 1
    return mask


def _grid_meta(grid: GridSpec):
    lo = np.asarray(grid.lower, dtype=float)
    inv_sp = 1.0 / grid.spacing
    counts = np.asarray(grid.counts, dtype=np.int64)
    strides = np.array(
        [int(np.prod(grid.counts[d + 1 :])) for d in range(grid.n)], dtype=np.int64
    )
    return lo, inv_sp, counts, strides


def _as_channels(vals: np.ndarray) -> np.ndarray:
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 1:
        vals = vals[None, :]
    return np.ascontiguousarray(vals)


def convolve_polar(
    g: GroupSpec,
    out_grid: GridSpec,
    src_pts: np.ndarray,
    src_vals: np.ndarray,
    kernel: PolarKernelData,
    vol: float,
    mode: str = "scatter",
) -> np.ndarray:
    """(C, N) direct sums  sum_s v_s k(z)  with exact polar kernel values."""
    out_pts = out_grid.points()
    src_vals = _as_channels(src_vals)
    out = np.zeros((src_vals.shape[0], out_pts.shape[0]))
    if src_pts.shape[0] == 0:
        return out
    src_inv, fac_src, fac_out, tcoord = _pack_factors(g, src_pts, out_pts, mode)
    a = g.exponent_array
    om = kernel.omega
    _engine.conv_polar(
        out, out_pts, src_vals, src_inv, fac_src, fac_out, tcoord,
        g.n, a, kernel.r_lo, kernel.r_hi,
        kernel.r_lo**a, kernel.r_hi**a,
        kernel.power, kernel.use_power,
        kernel.rtab, kernel.use_table, kernel.rt_logr0, kernel.rt_inv_dlog,
        om.pcoef, om.ppow, om.sign_coef, om.rough_amp,
        np.uint64(om.rough_seed), om.rough_bins,
        vol,
    )
    return out


def convolve_grid(
    g: GroupSpec,
    out_grid: GridSpec,
    src_pts: np.ndarray,
    src_vals: np.ndarray,
    kernel_field: ScalarField,
    vol: float,
    mode: str = "scatter",
) -> np.ndarray:
    """(C, N) direct sums with a grid-sampled kernel (interp on twisted dims)."""
    out_pts = out_grid.points()
    src_vals = _as_channels(src_vals)
    out = np.zeros((src_vals.shape[0], out_pts.shape[0]))
    if src_pts.shape[0] == 0:
        return out
    src_inv, fac_src, fac_out, tcoord = _pack_factors(g, src_pts, out_pts, mode)
    mask = _interp_mask(g, out_grid, src_inv, kernel_field.grid)
    lo, inv_sp, counts, strides = _grid_meta(kernel_field.grid)
    _engine.conv_grid(
        out, out_pts, src_vals, src_inv, fac_src, fac_out, tcoord,
        g.n, kernel_field.values, lo, inv_sp, counts, strides, mask, vol,
    )
    return out


def shell_convolve(
    g: GroupSpec,
    out_grid: GridSpec,
    src_pts: np.ndarray,
    src_vals: np.ndarray,
    omega: OmegaData,
    power: float,
    eps_min: float,
    eps_max: float,
    shells_per_octave: int,
    vol: float,
):
    """All dyadic-shell pieces of a rough kernel in one pass.

    Returns (stack, edges): stack[c, s, :] is the convolution against the
    kernel restricted to {edges[s] < rho <= edges[s+1]}.
    """
    nshells = int(np.ceil(np.log2(eps_max / eps_min) * shells_per_octave))
    edges = eps_min * 2.0 ** (np.arange(nshells + 1) / shells_per_octave)
    out_pts = out_grid.points()
    src_vals = _as_channels(src_vals)
    out = np.zeros((src_vals.shape[0], nshells, out_pts.shape[0]))
    if src_pts.shape[0] == 0:
        return out, edges
    src_inv, fac_src, fac_out, tcoord = _pack_factors(g, src_pts, out_pts, "scatter")
    _engine.conv_polar_shells(
        out, out_pts, src_vals, src_inv, fac_src, fac_out, tcoord,
        g.n, g.exponent_array,
        float(np.log2(eps_min)), float(shells_per_octave), nshells,
        power,
        omega.pcoef, omega.ppow, omega.sign_coef, omega.rough_amp,
        np.uint64(omega.rough_seed), omega.rough_bins,
        vol,
    )
    return out, edges


# ---------------------------------------------------------------------------
# ball scans


def ball_offsets(g: GroupSpec, spacing: np.ndarray, radii) -> tuple:
    """Lattice offsets u with rho(u) < max radius, sorted by rho.

    Returns (offsets, boundaries) where boundaries[r] is the count of
    offsets with rho < radii[r].
    """
    radii = np.asarray(sorted(radii), dtype=float)
    r_max = radii[-1]
    axes = []
    for d in range(g.n):
        bound = r_max ** g.exponents[d]
        k = int(np.floor(bound / spacing[d]))
        axes.append(np.arange(-k, k + 1) * spacing[d])
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    rho = quasi_norm(g, pts)
    keep = rho < r_max
    pts, rho = pts[keep], rho[keep]
    order = np.argsort(rho, kind="stable")
    pts, rho = pts[order], rho[order]
    boundaries = np.searchsorted(rho, radii, side="left").astype(np.int64)
    return pts, boundaries


def ball_averages(
    g: GroupSpec,
    fieldvals: np.ndarray,
    field_grid: GridSpec,
    centers: np.ndarray,
    radii,
):
    """Averages of one or more fields over the balls B(center, r).

    ``fieldvals`` has shape (C, N); returns (avg (M, R, C), counts (M, R)).
    Averages use the grid measure of the in-box part of each ball.
    """
    fieldvals = _as_channels(fieldvals)
    offsets, boundaries = ball_offsets(g, field_grid.spacing, radii)
    centers = np.atleast_2d(centers)
    M, R = centers.shape[0], len(boundaries)
    out_avg = np.zeros((M, R, fieldvals.shape[0]))
    out_cnt = np.zeros((M, R))
    if offsets.shape[0] == 0:
        return out_avg, out_cnt
    # sampled point is y = x * u with u the raw offset (no inversion)
    T, tcoord, _ = _group_tables(g)
    fac_src = np.empty((offsets.shape[0], T))
    fac_cen = np.empty((M, T))
    for t_idx, t in enumerate(g.terms):
        fac_src[:, t_idx] = t.coef * _monomial_factors(offsets, t.ypow)
        fac_cen[:, t_idx] = _monomial_factors(centers, t.xpow)
    src_inv = offsets
    mask = _interp_mask(g, field_grid, src_inv, field_grid)
    # centers may be off-lattice; force interpolation on clean dims unless
    # every center-offset combination is aligned
    sp = field_grid.spacing
    for d in range(g.n):
        if mask[d]:
            continue
        f = (centers[:, d, None] + offsets[None, :, d] - field_grid.lower[d]) / sp[d]
        if np.max(np.abs(f - np.round(f))) > 1e-6:
            mask[d] = 1
    lo, inv_sp, counts, strides = _grid_meta(field_grid)
    _engine.ball_scan(
        out_avg, out_cnt, centers, src_inv, fac_src, fac_cen, tcoord,
        g.n, boundaries, fieldvals, lo, inv_sp, counts, strides, mask,
    )
    return out_avg, out_cnt


# ---------------------------------------------------------------------------
# plain helpers


def interp_field(f: ScalarField, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a field at arbitrary points (0 outside)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    grid = f.grid
    n = grid.n
    fi = (pts - np.asarray(grid.lower)) / grid.spacing
    j0 = np.floor(fi).astype(int)
    frac = fi - j0
    valid = np.all((j0 >= 0) & (j0 <= np.asarray(grid.counts) - 2), axis=1)
    j0c = np.clip(j0, 0, np.asarray(grid.counts) - 2)
    vals = f.reshaped()
    out = np.zeros(pts.shape[0])
    for corner in range(1 << n):
        w = np.ones(pts.shape[0])
        idx = []
        for d in range(n):
            if corner & (1 << d):
                w = w * frac[:, d]
                idx.append(j0c[:, d] + 1)
            else:
                w = w * (1 - frac[:, d])
                idx.append(j0c[:, d])
        out += w * vals[tuple(idx)]
    return np.where(valid, out, 0.0)


def reference_convolve(g: GroupSpec, f: ScalarField, kernel, out_grid=None):
    """Slow exact direct summation used as the independent test oracle.

    ``kernel`` is any callable (g, pts) -> values.
    """
    out_grid = out_grid or f.grid
    src_pts, src_vals = f.nonzero_points()
    out_pts = out_grid.points()
    out = np.zeros(out_pts.shape[0])
    src_inv = inverse(g, src_pts)
    for s in range(src_pts.shape[0]):
        z = multiply(g, np.broadcast_to(src_inv[s], out_pts.shape), out_pts)
        out += src_vals[s] * kernel(g, z)
    return ScalarField(out_grid, out * f.grid.cellvol)


def boundary_clip_fraction(
    g: GroupSpec, f: ScalarField, r_hi: float, out_grid: GridSpec
) -> float:
    """Fraction of output points whose r_hi-reach exits the source box.

    A cheap conservative diagnostic for kernel mass falling outside the
    input grid; reported, never silently ignored.
    """
    out_pts = out_grid.points()
    rho_out = quasi_norm(g, out_pts)
    r_src = min(
        quasi_norm(g, np.abs(np.array(f.grid.lower))),
        quasi_norm(g, np.abs(np.array(f.grid.upper))),
    )
    reach = g.a0 * (rho_out + r_hi)
    return float(np.mean(reach > r_src))


# ---------------------------------------------------------------------------
# public convolution front end


def _sources_of(f: ScalarField, threshold: float = 0.0):
    pts, vals = f.nonzero_points(threshold)
    return pts, vals


def convolve(
    g: GroupSpec,
    f: ScalarField,
    kernel,
    out_grid: GridSpec | None = None,
    boundary_warn: float = 1e-12,
):
    """f * kernel by direct summation over the support of f.

    ``kernel`` may be a PolarKernelData / object with a ``.data`` polar
    attribute (evaluated exactly at y^{-1} x), a ScalarField (interpolated),
    or a callable (g, pts) -> values (reference path, slow).  When
    ``out_grid`` is omitted the input grid is reused; pass
    ``f.grid.dilated(g, r_hi)`` for the enlarged default of the kernels'
    reach.

    The returned field carries no boundary padding: callers should consult
    ``boundary_clip_fraction`` when the kernel reach exceeds the box.
    """
    data = getattr(kernel, "data", kernel)
    out_grid = out_grid or f.grid
    src_pts, src_vals = _sources_of(f)
    if f.boundary_mass_fraction() > max(boundary_warn, 1e-12):
        import warnings

        warnings.warn("input field is not compactly supported within its grid")
    if isinstance(data, PolarKernelData):
        out = convolve_polar(
            g, out_grid, src_pts, src_vals, data, vol=f.grid.cellvol
        )
        return ScalarField(out_grid, out[0])
    if isinstance(data, ScalarField):
        out = convolve_grid(
            g, out_grid, src_pts, src_vals, data, vol=f.grid.cellvol
        )
        return ScalarField(out_grid, out[0])
    if callable(data):
        return reference_convolve(g, f, data, out_grid)
    raise TypeError(f"cannot convolve with kernel of type {type(kernel)!r}")


def convolve_batch(
    g: GroupSpec,
    fs,
    kernel,
    out_grid: GridSpec | None = None,
) -> list[ScalarField]:
    """Convolve several fields on one grid with one kernel in a single pass.

    The per-pair group arithmetic is shared across channels (the sources are
    the union of the supports), which is the dominant cost.
    """
    fs = list(fs)
    if not fs:
        return []
    grid = fs[0].grid
    for f in fs:
        if f.grid != grid:
            raise ValueError("batched fields must share a grid")
    out_grid = out_grid or grid
    mask = np.zeros(grid.size, dtype=bool)
    for f in fs:
        mask |= f.values != 0.0
    src_pts = grid.points()[mask]
    src_vals = np.stack([f.values[mask] for f in fs], axis=0)
    data = getattr(kernel, "data", kernel)
    if isinstance(data, PolarKernelData):
        out = convolve_polar(g, out_grid, src_pts, src_vals, data, vol=grid.cellvol)
    elif isinstance(data, ScalarField):
        out = convolve_grid(g, out_grid, src_pts, src_vals, data, vol=grid.cellvol)
    else:
        raise TypeError(f"cannot batch-convolve kernel type {type(kernel)!r}")
    return [ScalarField(out_grid, row) for row in out]


def convolve_right_rasterized(
    g: GroupSpec,
    left: ScalarField,
    right: ScalarField,
    out_grid: GridSpec | None = None,
) -> ScalarField:
    """(left * right)(x) = sum_z right(z) left(x z^{-1}) vol_z.

    Gather form: iterates the (sparse) cells of the right factor and
    interpolates the left field, so a small right kernel against a dense
    left field stays cheap.
    """
    out_grid = out_grid or left.grid
    src_pts, src_vals = right.nonzero_points()
    out = convolve_grid(
        g, out_grid, src_pts, src_vals, left, vol=right.grid.cellvol, mode="gather"
    )
    return ScalarField(out_grid, out[0])
