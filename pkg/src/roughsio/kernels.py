"""Rough kernels and their dyadic anatomy.

Builds the homogeneous-degree-zero angular part Omega with enforced moment
cancellation, the rough kernel K_alpha(x) = Omega(theta) rho^{-Q-alpha},
its smooth and sharp dyadic truncations, thin surface shells, and the
transform-free Littlewood-Paley system built from a small radial bump.

Every kernel object is immutable and factors as Omega(theta) * radial(rho),
which is what the convolution cores consume.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .engine import OmegaData, PolarKernelData
from .fields import GridSpec, ScalarField
from .groups import (
    GroupSpec,
    HomogeneousPolynomial,
    dilate,
    inverse,
    monomials_up_to_degree,
    quasi_norm,
)
from .polar import SphereQuadrature, radial_integral
from .fields import smooth_bump

__all__ = [
    "SphereFunction",
    "make_sphere_function",
    "project_cancellation",
    "AnnulusKernel",
    "make_annulus_kernel",
    "TimeProfile",
    "default_time_profile",
    "LPCutoff",
    "make_lp_cutoff",
    "scale_map",
    "rasterize",
]

PHI_SUPPORT = (1.0 / 200.0, 1.0 / 100.0)  # quasi-norm support of the LP bump


# ---------------------------------------------------------------------------
# Omega


@dataclass(frozen=True)
class SphereFunction:
    """Angular function Omega with recorded cancellation order and norms.

    ``omega`` is evaluable anywhere via the 0-homogeneous extension; node
    values and norms are taken against the attached quadrature.
    """

    group: GroupSpec
    quad: SphereQuadrature
    omega: OmegaData
    cancellation_order: int  # -1 means none enforced
    name: str = "custom"

    def node_values(self) -> np.ndarray:
        return self.omega.values(self.quad.nodes)

    def values(self, pts: np.ndarray) -> np.ndarray:
        """Omega extended 0-homogeneously off the sphere (0 at the origin)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        rho = quasi_norm(self.group, pts)
        safe = np.maximum(rho, 1e-300)
        theta = pts / safe[:, None] ** self.group.exponent_array
        return np.where(rho > 0, self.omega.values(theta), 0.0)

    def lq_norm(self, q) -> float:
        vals = np.abs(self.node_values())
        w = self.quad.weights
        if q == "inf" or q == math.inf:
            return float(vals.max(initial=0.0))
        q = float(q)
        return float((np.dot(vals**q, w)) ** (1.0 / q))

    def moments(self, max_degree: float) -> np.ndarray:
        polys = monomials_up_to_degree(self.group, max_degree)
        vals = self.node_values()
        return np.array(
            [float(np.dot(vals * p(self.quad.nodes), self.quad.weights)) for p in polys]
        )

    def scaled(self, factor: float) -> "SphereFunction":
        om = self.omega
        return SphereFunction(
            group=self.group,
            quad=self.quad,
            omega=OmegaData(
                om.n, om.pcoef * factor, om.ppow, om.sign_coef * factor,
                om.rough_amp * factor, om.rough_seed, om.rough_bins,
            ),
            cancellation_order=self.cancellation_order,
            name=self.name,
        )


def project_cancellation(sf: SphereFunction, order: int) -> SphereFunction:
    """Remove the sigma-orthogonal projection onto low-degree monomials.

    After projection every moment against monomials of homogeneous degree
    <= order vanishes at quadrature level.  Raises if the monomial Gram
    matrix is numerically singular (degenerate quadrature), reporting its
    condition number.
    """
    if order < 0:
        return sf
    g = sf.group
    polys = monomials_up_to_degree(g, float(order))
    nodes, w = sf.quad.nodes, sf.quad.weights
    basis = np.stack([p(nodes) for p in polys], axis=0)  # (k, m)
    gram = (basis * w) @ basis.T
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise ValueError(
            f"cancellation projection Gram matrix is singular (cond={cond:.3e})"
        )
    rhs = (basis * w) @ sf.node_values()
    lam = np.linalg.solve(gram, rhs)
    delta_terms = []
    for coef, p in zip(lam, polys):
        for beta, c in p.terms:
            delta_terms.append((beta, -coef * c))
    return SphereFunction(
        group=g,
        quad=sf.quad,
        omega=sf.omega.shifted(delta_terms),
        cancellation_order=order,
        name=sf.name,
    )


_PRESET_RE = re.compile(r"^([a-z-]+)(?:\(([^)]*)\))?$")


def _preset_omega(g: GroupSpec, name: str) -> tuple[OmegaData, str]:
    m = _PRESET_RE.match(name.strip())
    if not m:
        raise ValueError(f"malformed Omega preset {name!r}")
    kind, args = m.group(1), m.group(2)
    argv = [a.strip() for a in args.split(",")] if args else []
    n = g.n
    if kind == "constant-balanced":
        return OmegaData(n, np.zeros(0), np.zeros((0, n), dtype=np.int64), sign_coef=1.0), kind
    if kind == "first-coordinate":
        beta = tuple(1 if d == 0 else 0 for d in range(n))
        return OmegaData.from_poly_terms(n, [(beta, 1.0)]), kind
    if kind == "zonal-harmonic":
        k = int(argv[0]) if argv else 2
        if n < 2:
            raise ValueError("zonal-harmonic needs at least two coordinates")
        terms = []
        for j in range(0, k + 1, 2):
            beta = [0] * n
            beta[0] = k - j
            beta[1] = j
            terms.append((tuple(beta), math.comb(k, j) * (-1.0) ** (j // 2)))
        return OmegaData.from_poly_terms(n, terms), f"zonal-harmonic({k})"
    if kind == "rough-random":
        seed = int(argv[0]) if argv else 0
        bins = int(argv[1]) if len(argv) > 1 else 8
        return (
            OmegaData(
                n, np.zeros(0), np.zeros((0, n), dtype=np.int64),
                rough_amp=1.0, rough_seed=seed, rough_bins=bins,
            ),
            f"rough-random({seed},{bins})",
        )
    raise ValueError(f"unknown Omega preset {name!r}")


def make_sphere_function(
    g: GroupSpec,
    quad: SphereQuadrature,
    preset: str,
    cancellation_order: int = 0,
    unit_l1: bool = True,
) -> SphereFunction:
    """Named Omega presets, cancellation-projected and optionally L1-normalized.

    Presets: "constant-balanced", "first-coordinate", "zonal-harmonic(k)",
    "rough-random(seed[, bins])".
    """
    omega, canonical = _preset_omega(g, preset)
    sf = SphereFunction(
        group=g, quad=quad, omega=omega, cancellation_order=-1, name=canonical
    )
    raw_norm = sf.lq_norm(1)
    sf = project_cancellation(sf, cancellation_order)
    norm = sf.lq_norm(1)
    if norm <= 1e-8 * max(raw_norm, 1e-300):
        raise ValueError(
            f"preset {preset!r} vanishes under order-{cancellation_order} projection"
        )
    if unit_l1:
        sf = sf.scaled(1.0 / norm)
    return sf


# ---------------------------------------------------------------------------
# the 1-d scale profile for the smooth truncation


class TimeProfile:
    """Smooth scale cutoff phi with  sum_j (2^-j t) phi(2^-j t) = 1/ln 2.

    Built from a fixed bump b on (1/2, 2) normalized through the
    log-periodic sum G(t) = sum_j (2^-j t) b(2^-j t):  phi = b / (ln2 * G),
    which satisfies the partition identity exactly wherever G is evaluated.
    """

    def __init__(self, table_size: int = 4096):
        self.support = (0.5, 2.0)
        ts = np.exp(np.linspace(np.log(0.5), np.log(2.0), table_size))
        self._ts = ts
        self._vals = self._phi_raw(ts)
        # CDF of phi on the support (for the smooth-truncation windows)
        mid = 0.5 * (self._vals[1:] + self._vals[:-1])
        dt = np.diff(ts)
        self._cdf = np.concatenate([[0.0], np.cumsum(mid * dt)])
        # running moment int_{1/2}^{u} t phi(t) dt; its endpoint is the
        # constant c relating the smooth and sharp tail operators, and the
        # smooth-tail window interpolates the same table so the plateau
        # identity is exact
        tm = 0.5 * (ts[1:] + ts[:-1])
        self._tm_cdf = np.concatenate([[0.0], np.cumsum(tm * mid * dt)])
        self.t_moment = float(self._tm_cdf[-1])

    def t_moment_cdf(self, u):
        """int_{1/2}^{min(u,2)} t phi(t) dt on the internal table."""
        u = np.asarray(u, dtype=float)
        return np.interp(u, self._ts, self._tm_cdf, left=0.0,
                         right=self._tm_cdf[-1])

    @staticmethod
    def _bump(t):
        return smooth_bump(np.log2(np.maximum(t, 1e-300)))

    def _phi_raw(self, t):
        t = np.asarray(t, dtype=float)
        total = np.zeros_like(t)
        for j in range(-2, 3):
            s = t * 2.0**-j
            total += s * self._bump(s)
        val = np.where(total > 0, self._bump(t) / (math.log(2.0) * np.maximum(total, 1e-300)), 0.0)
        return val

    def __call__(self, t):
        return self._phi_raw(t)

    def cdf(self, t):
        """int_0^t phi(s) ds, linear interpolation of the cached table."""
        t = np.asarray(t, dtype=float)
        return np.interp(t, self._ts, self._cdf, left=0.0, right=self._cdf[-1])

    def partition_residual(self, t_grid=None) -> float:
        """max |sum_j (2^-j t) phi(2^-j t) - 1/ln2| over a dense t-grid."""
        if t_grid is None:
            t_grid = np.exp(np.linspace(np.log(1.0), np.log(2.0), 257))
        total = np.zeros_like(t_grid)
        for j in range(-3, 4):
            s = t_grid * 2.0**-j
            total += s * self._phi_raw(s)
        return float(np.max(np.abs(total - 1.0 / math.log(2.0))))


@lru_cache(maxsize=1)
def default_time_profile() -> TimeProfile:
    return TimeProfile()


# ---------------------------------------------------------------------------
# annulus kernels


@dataclass(frozen=True)
class AnnulusKernel:
    """One dyadic piece of the rough kernel (or a thin surface shell)."""

    kind: str
    group: GroupSpec
    omega: SphereFunction
    alpha: float
    j: int
    t: float | None
    data: PolarKernelData
    total_variation: float

    @property
    def r_lo(self) -> float:
        return self.data.r_lo

    @property
    def r_hi(self) -> float:
        return self.data.r_hi

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return self.data(self.group, pts)

    def reflected_values(self, pts: np.ndarray) -> np.ndarray:
        return self.data(self.group, inverse(self.group, np.atleast_2d(pts)))

    def moment_against(self, poly: HomogeneousPolynomial, reflected=False) -> float:
        """int k(x) P(x) dx via the polar factorization (quadrature exact)."""
        g = self.group
        quad = self.omega.quad
        deg = poly.homogeneous_degree(g.exponents)
        nodes = quad.nodes if not reflected else inverse(g, quad.nodes)
        # reflected kernel moment: int k(x^-1) P(x) dx = int k(u) P(u^-1) du
        if reflected:
            ang = self.omega.node_values() * poly(inverse(g, quad.nodes))
        else:
            ang = self.omega.node_values() * poly(quad.nodes)
        ang_int = float(np.dot(ang, quad.weights))
        q1 = g.homogeneous_dimension - 1.0
        rad = radial_integral(
            lambda r: self.data.radial(r, raw=True) * r ** (q1 + deg),
            self.r_lo, self.r_hi, min_points=256,
        )
        return ang_int * rad


def make_annulus_kernel(
    g: GroupSpec,
    quad: SphereQuadrature,
    omega: SphereFunction,
    alpha: float,
    j: int,
    kind: str,
    t: float | None = None,
    time_profile: TimeProfile | None = None,
    shell_width_fraction: float = 1.0 / 64.0,
) -> AnnulusKernel:
    """Dyadic kernel pieces: smooth_Aj, sharp_Bj, parametrized_Bjt, surface_shell.

    All kinds factor as Omega(theta) times a nonnegative radial profile
    supported in [2^{j-1}, 2^{j+2}]; total variation is computed by polar
    quadrature at construction.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    needed = int(math.floor(alpha))
    if omega.cancellation_order < needed:
        raise ValueError(
            f"kernel needs cancellation order {needed}, Omega has "
            f"{omega.cancellation_order}"
        )
    q_hom = g.homogeneous_dimension
    power = -(q_hom + alpha)
    scale = 2.0**j
    om = omega.omega
    if kind == "sharp_Bj":
        data = PolarKernelData(
            om, r_lo=scale, r_hi=2 * scale, power=power, use_power=True
        )
    elif kind == "parametrized_Bjt":
        if t is None or not (1.0 <= t < 2.0):
            raise ValueError("parametrized kind needs t in [1, 2)")
        data = PolarKernelData(
            om, r_lo=t * scale, r_hi=2 * scale, power=power, use_power=True
        )
    elif kind == "smooth_Aj":
        prof = time_profile or default_time_profile()

        def window(r):
            return prof.cdf(r / scale) - prof.cdf(r / (2 * scale))

        data = PolarKernelData.with_table(
            om, r_lo=scale / 2, r_hi=4 * scale, radial_fn=window,
            power=power, use_power=True,
        )
    elif kind == "surface_shell":
        if t is None:
            t = 1.0
        if not (1.0 <= t < 2.0):
            raise ValueError("surface shell needs t in [1, 2)")
        r0 = t * scale
        r1 = r0 * (1.0 + shell_width_fraction)
        target_tv = 2.0 ** (-alpha * j) * t ** (-1.0 - alpha) * omega.lq_norm(1)
        shell_vol = radial_integral(lambda r: r ** (q_hom - 1.0), r0, r1)
        height = target_tv / (omega.lq_norm(1) * shell_vol)
        data = PolarKernelData.with_table(
            om, r_lo=r0, r_hi=r1, radial_fn=lambda r: np.full_like(r, height)
        )
    else:
        raise ValueError(f"unknown annulus kernel kind {kind!r}")
    q1 = q_hom - 1.0
    tv = omega.lq_norm(1) * radial_integral(
        lambda r: data.radial(r, raw=True) * r**q1, data.r_lo, data.r_hi,
        min_points=256,
    )
    return AnnulusKernel(
        kind=kind, group=g, omega=omega, alpha=float(alpha), j=int(j),
        t=t, data=data, total_variation=float(tv),
    )


def rough_kernel_data(g: GroupSpec, omega: SphereFunction, alpha: float,
                      r_lo: float, r_hi: float) -> PolarKernelData:
    """The untruncated rough kernel K_alpha restricted to rho in (r_lo, r_hi]."""
    power = -(g.homogeneous_dimension + alpha)
    return PolarKernelData(
        omega.omega, r_lo=float(r_lo), r_hi=float(r_hi), power=power, use_power=True
    )


# ---------------------------------------------------------------------------
# Littlewood-Paley cutoffs


@dataclass(frozen=True)
class LPCutoff:
    """Radial bump phi with supp phi in {1/200 <= rho <= 1/100}, unit mass.

    Derived objects: the mass-preserving rescalings Delta[t] phi, the
    band pieces Psi_j = Delta[2^{j-1}] phi - Delta[2^j] phi, and the partial
    sums S_j f = f * Delta[2^{j-1}] phi.
    """

    group: GroupSpec
    norm_const: float
    rho_symmetric: bool

    def profile(self, rho: np.ndarray) -> np.ndarray:
        a, b = PHI_SUPPORT
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        return self.norm_const * smooth_bump((np.asarray(rho) - mid) / half)

    def phi_data(self) -> PolarKernelData:
        n = self.group.n
        one = OmegaData.from_poly_terms(n, [((0,) * n, 1.0)])
        return PolarKernelData.with_table(
            one, r_lo=PHI_SUPPORT[0] * 0.98, r_hi=PHI_SUPPORT[1] * 1.02,
            radial_fn=self.profile,
        )

    def delta_phi_data(self, t: float) -> PolarKernelData:
        """Delta[t] phi as a polar kernel (mass-preserving rescaling)."""
        return scale_map(self.group, 0.0, t, self.phi_data())

    def phi_values(self, pts: np.ndarray, t: float = 1.0) -> np.ndarray:
        g = self.group
        pts = np.atleast_2d(pts)
        q_hom = g.homogeneous_dimension
        vals = self.profile(quasi_norm(g, pts) / t) * t**-q_hom
        if not self.rho_symmetric:
            refl = self.profile(quasi_norm(g, inverse(g, pts)) / t) * t**-q_hom
            vals = 0.5 * (vals + refl)
        return vals

    def psi_values(self, pts: np.ndarray, j: int) -> np.ndarray:
        return self.phi_values(pts, 2.0 ** (j - 1)) - self.phi_values(pts, 2.0**j)

    def psi_support_radius(self, j: int) -> float:
        return 2.0**j * PHI_SUPPORT[1]

    def rasterize_delta_phi(self, grid: GridSpec, t: float) -> ScalarField:
        """Delta[t] phi on a grid, discretely renormalized to unit mass.

        Thin shells rasterize poorly, so the discrete sum is forced to 1;
        differences of these fields then have exactly zero grid mean, which
        is what the decay mechanism needs at grid level.
        """
        vals = self.phi_values(grid.points(), t)
        total = vals.sum() * grid.cellvol
        if total <= 0:
            raise ValueError(f"Delta[{t}]phi is unresolved on this grid")
        return ScalarField(grid, vals / total)

    def rasterize_psi(self, grid: GridSpec, j: int) -> ScalarField:
        f1 = self.rasterize_delta_phi(grid, 2.0 ** (j - 1))
        f2 = self.rasterize_delta_phi(grid, 2.0**j)
        return ScalarField(grid, f1.values - f2.values)


def make_lp_cutoff(g: GroupSpec, quad: SphereQuadrature, rng=None) -> LPCutoff:
    """Normalize the radial bump to unit mass by polar quadrature.

    For groups where rho(x^-1) != rho(x) the cutoff is symmetrized by
    averaging with its reflection (mass is unchanged).
    """
    a, b = PHI_SUPPORT
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    raw = lambda rho: smooth_bump((rho - mid) / half)
    q1 = g.homogeneous_dimension - 1.0
    mass = quad.total_weight * radial_integral(
        lambda r: raw(r) * r**q1, a, b, min_points=4096
    )
    rng = np.random.default_rng(rng)
    pts = rng.uniform(-1.0, 1.0, size=(256, g.n))
    sym = bool(
        np.max(np.abs(quasi_norm(g, inverse(g, pts)) - quasi_norm(g, pts))) < 1e-10
    )
    return LPCutoff(group=g, norm_const=1.0 / mass, rho_symmetric=sym)


# ---------------------------------------------------------------------------
# scaling map and rasterization


def scale_map(g: GroupSpec, alpha: float, t: float, obj, out_grid=None):
    """Delta_alpha[t] f(x) = t^{-Q-alpha} f(t^{-1} o x).

    Accepts a PolarKernelData (returns the rescaled kernel), a ScalarField
    (resampled on ``out_grid``, default its own grid), or a callable on
    points.
    """
    if t <= 0:
        raise ValueError("scale parameter must be positive")
    q_hom = g.homogeneous_dimension
    factor = t ** -(q_hom + alpha)
    if isinstance(obj, PolarKernelData):
        if obj.use_table:
            old = obj
            return PolarKernelData.with_table(
                obj.omega, r_lo=obj.r_lo * t, r_hi=obj.r_hi * t,
                radial_fn=lambda r: factor * old.radial(r / t),
            )
        # rho^p rescales to t^{-Q-alpha-p} rho^p on the dilated annulus;
        # the amplitude folds into Omega
        amp = factor * (t**-obj.power if obj.use_power else 1.0)
        om = obj.omega
        scaled_om = OmegaData(
            om.n, om.pcoef * amp, om.ppow, om.sign_coef * amp,
            om.rough_amp * amp, om.rough_seed, om.rough_bins,
        )
        return PolarKernelData(
            scaled_om, r_lo=obj.r_lo * t, r_hi=obj.r_hi * t,
            power=obj.power, use_power=obj.use_power,
        )
    if isinstance(obj, ScalarField):
        from .engine import interp_field

        grid = out_grid or obj.grid
        pts = dilate(g, 1.0 / t, grid.points())
        return ScalarField(grid, factor * interp_field(obj, pts))
    if callable(obj):
        return lambda pts: factor * np.asarray(obj(dilate(g, 1.0 / t, np.atleast_2d(pts))))
    raise TypeError(f"cannot scale object of type {type(obj)!r}")


def rasterize(
    g: GroupSpec, kernel, grid: GridSpec, repair_order: int | None = None
) -> ScalarField:
    """Sample a kernel on a grid, optionally repairing discrete moments.

    ``repair_order`` subtracts the minimum-norm polynomial correction on the
    kernel's support cells so that the *discrete* moments up to that
    homogeneous degree vanish exactly; rasterization otherwise breaks the
    cancellation that the continuum kernel carries.
    """
    pts = grid.points()
    if isinstance(kernel, AnnulusKernel):
        vals = kernel(pts)
    elif isinstance(kernel, PolarKernelData):
        vals = kernel(g, pts)
    elif callable(kernel):
        vals = np.asarray(kernel(pts), dtype=float)
    else:
        raise TypeError(f"cannot rasterize {type(kernel)!r}")
    vals = vals.copy()
    if repair_order is not None and repair_order >= 0:
        support = np.abs(vals) > 0
        if support.sum() > 0:
            polys = monomials_up_to_degree(g, float(repair_order))
            basis = np.stack([p(pts[support]) for p in polys], axis=1)
            coef, *_ = np.linalg.lstsq(basis.T @ basis, basis.T @ vals[support],
                                       rcond=None)
            vals[support] -= basis @ coef
    return ScalarField(grid, vals)
