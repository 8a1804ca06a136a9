"""Grid realizations of the rough singular and maximal operators.

Everything is built from one primitive: dyadic shell sums of the rough
kernel, computed in a single pass.  Suffix sums of the shell stack give the
truncated integrals T_eps for every eps on the shell grid at once, and the
short-range / long-range split of the maximal operator is then an exact
pointwise identity of the same arithmetic.

The sup over eps > 0 is replaced by a sup over a dyadically refined eps
grid (``eps_per_octave``); refinement monotonicity quantifies the gap.

Scale pairing: the Littlewood-Paley bump lives on {1/200 <= rho <= 1/100},
so the band of Psi_k sits about eight octaves below 2^k.  Compositions that
pair Psi with scale-2^k annuli therefore shift the Psi index by
``lp_offset`` (default 8) to put zero detuning at the resonance; the
paper-literal indexing is lp_offset = 0, which no desk-scale grid can
resolve across a two-sided window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .engine import (
    convolve,
    convolve_batch,
    convolve_right_rasterized,
    interp_field,
    shell_convolve,
    ball_averages,
)
from .fields import GridSpec, ScalarField, lp_norm
from .groups import GroupSpec, inverse, multiply, quasi_norm
from .heat import SubLaplacianOp, riesz_kernel, stratum_fields
from .kernels import (
    AnnulusKernel,
    LPCutoff,
    SphereFunction,
    TimeProfile,
    default_time_profile,
    make_annulus_kernel,
    make_lp_cutoff,
    rough_kernel_data,
    rasterize,
)
from .polar import SphereQuadrature

__all__ = [
    "OperatorConfig",
    "truncated_sio",
    "maximal_sio",
    "fractional_max",
    "tail_operator",
    "smooth_tail_operator",
    "hl_maximal",
    "dyadic_piece",
    "regrouped_piece",
    "randomized_sum",
    "TruncationStack",
    "truncation_stack",
    "compose_lp_riesz_mu",
    "regrouped_kernel_field",
    "hormander_integral",
]

DEFAULT_LP_OFFSET = 8


@dataclass
class OperatorConfig:
    """Shared ingredients for the singular-integral operators."""

    group: GroupSpec
    quad: SphereQuadrature
    omega: SphereFunction
    alpha: float
    lp: LPCutoff = None
    eps_per_octave: int = 8
    lp_offset: int = DEFAULT_LP_OFFSET
    time_profile: TimeProfile = None
    _riesz_cache: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        if self.lp is None:
            self.lp = make_lp_cutoff(self.group, self.quad)
        if self.time_profile is None:
            self.time_profile = default_time_profile()
        needed = int(math.floor(self.alpha))
        if self.omega.cancellation_order < needed:
            raise ValueError(
                f"Omega needs cancellation order {needed} for alpha={self.alpha}"
            )

    def riesz_field(self, grid: GridSpec) -> ScalarField:
        """R^alpha on a grid (cached); stratum fields keep it homogeneous."""
        if self.alpha == 0.0:
            raise ValueError("alpha = 0 has no Riesz kernel (R^0 = delta)")
        key = (grid.lower, grid.upper, grid.counts)
        if key not in self._riesz_cache:
            op = SubLaplacianOp(
                self.group, grid, fields=stratum_fields(self.group)
            )
            self._riesz_cache[key] = riesz_kernel(op, self.alpha, grid)
        return self._riesz_cache[key]

    def annulus(self, j: int, kind: str, t=None) -> AnnulusKernel:
        return make_annulus_kernel(
            self.group, self.quad, self.omega, self.alpha, j, kind, t=t,
            time_profile=self.time_profile,
        )


def _diameter(g: GroupSpec, grid: GridSpec) -> float:
    corner = np.array([max(abs(l), abs(u)) for l, u in zip(grid.lower, grid.upper)])
    return 2.0 * g.a0 * float(quasi_norm(g, corner))


def truncated_sio(cfg: OperatorConfig, f: ScalarField, eps: float,
                  r_outer: float | None = None) -> ScalarField:
    """T_{Omega,alpha,eps} f: rough-kernel integral over rho > eps.

    The outer cutoff defaults to the grid diameter; for alpha > 0 the
    dropped tail has kernel mass |Omega|_1 r_outer^{-alpha}/alpha, which is
    the reported estimate.
    """
    h_max = float(np.max(f.grid.spacing))
    if eps <= h_max:
        raise ValueError(f"eps={eps} is below the grid spacing {h_max}")
    if r_outer is None:
        r_outer = _diameter(cfg.group, f.grid)
    if eps >= r_outer:
        return ScalarField.zeros(f.grid)
    data = rough_kernel_data(cfg.group, cfg.omega, cfg.alpha, eps, r_outer)
    return convolve(cfg.group, f, data)


@dataclass
class TruncationStack:
    """All dyadic-shell pieces of T_{Omega,alpha} f on a shared eps grid."""

    cfg: OperatorConfig
    grid: GridSpec
    edges: np.ndarray          # shell edges, eps values
    shells: np.ndarray         # (S, N) shell convolutions
    suffix: np.ndarray         # (S+1, N): suffix[s] = T_{edges[s]} f
    k0: int                    # edges[0] == 2^{k0}

    def truncation(self, s: int) -> np.ndarray:
        return self.suffix[s]

    def octave_start(self, k: int) -> int:
        return (k - self.k0) * self.cfg.eps_per_octave

    @property
    def k_range(self):
        per = self.cfg.eps_per_octave
        return range(self.k0, self.k0 + len(self.shells) // per)

    def maximal(self) -> np.ndarray:
        """T^# f: sup over the whole eps grid of |T_eps f|."""
        return np.max(np.abs(self.suffix), axis=0)

    def short_range_max(self) -> np.ndarray:
        """M_{Omega,alpha} f: sup_k sup_{eps in [2^k, 2^{k+1})} of the
        integral over eps < rho <= 2^{k+1} (exactly suffix differences)."""
        per = self.cfg.eps_per_octave
        out = np.zeros(self.suffix.shape[1])
        for k in self.k_range:
            s0 = self.octave_start(k)
            end = self.suffix[min(s0 + per, len(self.suffix) - 1)]
            for s in range(s0, s0 + per):
                np.maximum(out, np.abs(self.suffix[s] - end), out=out)
        return out

    def tail_sup(self) -> np.ndarray:
        """sup_k |T^k f| over the octave boundaries of the grid."""
        per = self.cfg.eps_per_octave
        idx = [self.octave_start(k) for k in self.k_range]
        idx.append(len(self.suffix) - 1)
        return np.max(np.abs(self.suffix[idx]), axis=0)

    def control_slack(self) -> float:
        """min over the grid of M + sup_k|T^k| - T^# (>= -1e-10 expected)."""
        lhs = self.maximal()
        rhs = self.short_range_max() + self.tail_sup()
        return float(np.min(rhs - lhs))


def truncation_stack(
    cfg: OperatorConfig, f: ScalarField, eps_min: float | None = None,
    r_outer: float | None = None,
) -> TruncationStack:
    """One shell-convolution pass powering T_eps, T^#, M and the tails."""
    h_max = float(np.max(f.grid.spacing))
    if eps_min is None:
        eps_min = 2.0 * h_max
    k0 = int(math.ceil(math.log2(eps_min)))
    eps_min = 2.0**k0
    if r_outer is None:
        r_outer = _diameter(cfg.group, f.grid)
    octaves = int(math.ceil(math.log2(r_outer / eps_min)))
    eps_max = eps_min * 2.0**octaves
    src_pts, src_vals = f.nonzero_points()
    power = -(cfg.group.homogeneous_dimension + cfg.alpha)
    stack, edges = shell_convolve(
        cfg.group, f.grid, src_pts, src_vals, cfg.omega.omega, power,
        eps_min, eps_max, cfg.eps_per_octave, f.grid.cellvol,
    )
    shells = stack[0]
    suffix = np.zeros((shells.shape[0] + 1, shells.shape[1]))
    suffix[:-1] = np.cumsum(shells[::-1], axis=0)[::-1]
    return TruncationStack(
        cfg=cfg, grid=f.grid, edges=edges, shells=shells, suffix=suffix, k0=k0
    )


def maximal_sio(cfg: OperatorConfig, f: ScalarField,
                eps_grid: np.ndarray | None = None) -> ScalarField:
    """T^#_{Omega,alpha} f over the dyadic eps grid.

    With at most two explicit eps values the truncations are computed
    directly (bitwise the single-eps operator); otherwise the shared shell
    stack is used.
    """
    if eps_grid is not None and len(eps_grid) <= 2:
        vals = np.zeros(f.grid.size)
        for eps in eps_grid:
            np.maximum(vals, np.abs(truncated_sio(cfg, f, eps).values), out=vals)
        return ScalarField(f.grid, vals)
    stack = truncation_stack(cfg, f)
    return ScalarField(f.grid, stack.maximal())


def fractional_max(cfg: OperatorConfig, f: ScalarField) -> ScalarField:
    """M_{Omega,alpha} f: the short-range maximal piece of the split."""
    stack = truncation_stack(cfg, f)
    return ScalarField(f.grid, stack.short_range_max())


def tail_operator(cfg: OperatorConfig, f: ScalarField, k: int) -> ScalarField:
    """T^k_{Omega,alpha} f = T_{Omega,alpha,2^{k+1}} f (same code path)."""
    return truncated_sio(cfg, f, 2.0 ** (k + 1))


def smooth_tail_kernel(cfg: OperatorConfig, k: int, r_outer: float):
    """Kernel of the smooth tail: K_alpha(x) int t phi(t) [rho >= 2^{k+1} t] dt.

    Below 2^k the window vanishes and above 2^{k+2} it equals
    c = int t phi(t) dt exactly (same internal table), so outside the
    transition ring the kernel is c K_alpha chi_{rho > 2^{k+1}}.
    """
    prof = cfg.time_profile
    scale = 2.0 ** (k + 1)
    q_hom = cfg.group.homogeneous_dimension
    from .engine import PolarKernelData

    return PolarKernelData.with_table(
        cfg.omega.omega, r_lo=2.0**k, r_hi=max(r_outer, 2.0 ** (k + 3)),
        radial_fn=lambda r: prof.t_moment_cdf(np.asarray(r) / scale),
        power=-(q_hom + cfg.alpha), use_power=True,
    )


def smooth_tail_operator(cfg: OperatorConfig, f: ScalarField, k: int) -> ScalarField:
    """Smooth-edge tail operator (see smooth_tail_kernel)."""
    r_outer = _diameter(cfg.group, f.grid)
    return convolve(cfg.group, f, smooth_tail_kernel(cfg, k, r_outer))


def smooth_tail_moment(cfg: OperatorConfig) -> float:
    """c = int t phi(t) dt relating the smooth and sharp tails."""
    return cfg.time_profile.t_moment


def hl_maximal(
    g: GroupSpec, f: ScalarField, radii=None, include_pointwise: bool = True
) -> ScalarField:
    """Hardy-Littlewood maximal function over left quasi-balls.

    Sup over a log-spaced radius family of ball averages of |f|; the
    small-radius limit |f| itself is included so Mf >= |f| pointwise.
    """
    grid = f.grid
    h_max = float(np.max(grid.spacing))
    if radii is None:
        r_lo = 2.0 * h_max
        r_hi = _diameter(g, grid) / 2.0
        radii = np.exp(np.linspace(math.log(r_lo), math.log(r_hi), 12))
    absf = np.abs(f.values)[None, :]
    avgs, counts = ball_averages(g, absf, grid, grid.points(), radii)
    out = np.max(avgs[:, :, 0], axis=1)
    if include_pointwise:
        np.maximum(out, np.abs(f.values), out=out)
    return ScalarField(grid, out)


def dyadic_piece(
    cfg: OperatorConfig, f: ScalarField, j: int, smooth: bool = False, t=None
) -> ScalarField:
    """T_j^alpha f (smooth) or V_j^alpha f (sharp): one annulus convolution."""
    kind = "smooth_Aj" if smooth else ("sharp_Bj" if t is None else "parametrized_Bjt")
    kern = cfg.annulus(j, kind, t=t)
    return convolve(cfg.group, f, kern)


def _psi_field(cfg: OperatorConfig, grid: GridSpec, j: int) -> ScalarField:
    return cfg.lp.rasterize_psi(grid, j)


def _chain_psi_riesz_mu(
    cfg: OperatorConfig, f: ScalarField, k_psi: int, mu: AnnulusKernel
) -> ScalarField:
    """f * Psi_{k_psi} * R^alpha * mu, evaluated left to right."""
    g1 = convolve(cfg.group, f, _psi_field(cfg, f.grid, k_psi))
    if cfg.alpha > 0:
        g2 = convolve(cfg.group, g1, cfg.riesz_field(f.grid))
    else:
        g2 = g1
    mu_f = rasterize(cfg.group, mu, f.grid,
                     repair_order=int(math.floor(cfg.alpha)))
    return convolve_right_rasterized(cfg.group, g2, mu_f)


def regrouped_piece(
    cfg: OperatorConfig,
    f: ScalarField,
    j: int,
    k_range,
    variant: str = "plain",
    smooth: bool = True,
) -> ScalarField:
    """T~_j^alpha f (plain) or T~_j^{alpha,N} f (N(j) = 2^j schedule).

    plain, j >= 1:  sum_k T_k (-L)^{-a/2} (S_{k-j} - S_{k-(j-1)});
    plain, j = 0:   sum_k T_k (-L)^{-a/2} S_k;
    N-schedule:     sum of plain pieces i in (N(j-1), N(j)], an exact
    summation identity.

    The S/Psi indices carry cfg.lp_offset (see module docstring).
    """
    if variant == "N_schedule":
        if j == 0:
            return regrouped_piece(cfg, f, 0, k_range, "plain", smooth)
        lo = 2 ** (j - 1) if j > 1 else 0
        hi = 2**j
        total = ScalarField.zeros(f.grid)
        for i in range(lo + 1, hi + 1):
            piece = regrouped_piece(cfg, f, i, k_range, "plain", smooth)
            total = ScalarField(f.grid, total.values + piece.values)
        return total
    if variant != "plain":
        raise ValueError(f"unknown variant {variant!r}")
    off = cfg.lp_offset
    total = np.zeros(f.grid.size)
    clipped = 0
    for k in k_range:
        kern = cfg.annulus(k, "smooth_Aj" if smooth else "sharp_Bj")
        if j == 0:
            sk = cfg.lp.rasterize_delta_phi(f.grid, 2.0 ** (k - 1 + off))
            g1 = convolve(cfg.group, f, sk)
        else:
            try:
                g1 = convolve(cfg.group, f, _psi_field(cfg, f.grid, k - j + off))
            except ValueError:
                clipped += 1
                continue
        if cfg.alpha > 0:
            g2 = convolve(cfg.group, g1, cfg.riesz_field(f.grid))
        else:
            g2 = g1
        mu_f = rasterize(cfg.group, kern, f.grid,
                         repair_order=int(math.floor(cfg.alpha)))
        g3 = convolve_right_rasterized(cfg.group, g2, mu_f)
        total += g3.values
    if clipped:
        import warnings

        warnings.warn(f"regrouped piece clipped {clipped} unresolved k terms")
    return ScalarField(f.grid, total)


def randomized_sum(
    cfg: OperatorConfig,
    f: ScalarField,
    j: int,
    signs: dict,
    mu_kind: str = "sharp_Bj",
    t=None,
) -> ScalarField:
    """G_j^alpha f = sum_k r_k f * Psi_{k-j+off} * R^alpha * mu_k."""
    total = np.zeros(f.grid.size)
    for k, sign in signs.items():
        if sign not in (-1, 1, -1.0, 1.0):
            raise ValueError("signs must be +-1")
        mu = cfg.annulus(k, mu_kind, t=t)
        piece = _chain_psi_riesz_mu(cfg, f, k - j + cfg.lp_offset, mu)
        total += sign * piece.values
    return ScalarField(f.grid, total)


# ---------------------------------------------------------------------------
# kernel-side compositions (shared across many test functions)


def compose_lp_riesz_mu(
    cfg: OperatorConfig,
    grid: GridSpec,
    k_psi: int,
    mu: AnnulusKernel,
    order: str = "psi_first",
) -> ScalarField:
    """The composed kernel Psi_k * R^a * mu  or  R^a * mu * Psi_k.

    Convolution order matters on non-abelian groups; both orders are
    measured separately in the decay experiments.
    """
    psi = _psi_field(cfg, grid, k_psi)
    mu_f = rasterize(cfg.group, mu, grid, repair_order=int(math.floor(cfg.alpha)))
    if cfg.alpha > 0:
        riesz = cfg.riesz_field(grid)
    if order == "psi_first":
        if cfg.alpha > 0:
            a = convolve(cfg.group, psi, riesz)
        else:
            a = psi
        return convolve_right_rasterized(cfg.group, a, mu_f)
    if order == "riesz_first":
        if cfg.alpha > 0:
            b = convolve_right_rasterized(cfg.group, riesz, mu_f)
        else:
            b = mu_f
        return convolve_right_rasterized(cfg.group, b, psi)
    raise ValueError(f"unknown order {order!r}")


def regrouped_kernel_field(
    cfg: OperatorConfig, grid: GridSpec, j: int, k_range, smooth: bool = True,
    t=None,
) -> ScalarField:
    """K_j^alpha = sum_k Delta[2^{k-j+off}] phi * R^alpha * mu_k on a grid."""
    total = np.zeros(grid.size)
    for k in k_range:
        kind = "smooth_Aj" if smooth else (
            "sharp_Bj" if t is None else "parametrized_Bjt"
        )
        mu = cfg.annulus(k, kind, t=t)
        phi = cfg.lp.rasterize_delta_phi(grid, 2.0 ** (k - j + cfg.lp_offset))
        if cfg.alpha > 0:
            a = convolve(cfg.group, phi, cfg.riesz_field(grid))
        else:
            a = phi
        mu_f = rasterize(cfg.group, mu, grid,
                         repair_order=int(math.floor(cfg.alpha)))
        total += convolve_right_rasterized(cfg.group, a, mu_f).values
    return ScalarField(grid, total)


def hormander_integral(
    g: GroupSpec, kernel_field: ScalarField, y: np.ndarray, a0: float | None = None
) -> float:
    """int_{rho(x) >= 2 A0 rho(y)} |K(y^{-1} x) - K(x)| dx by grid quadrature."""
    a0 = a0 if a0 is not None else g.a0
    grid = kernel_field.grid
    pts = grid.points()
    rho_x = quasi_norm(g, pts)
    mask = rho_x >= 2.0 * a0 * float(quasi_norm(g, np.asarray(y)))
    shifted_pts = multiply(g, inverse(g, np.asarray(y)), pts[mask])
    shifted = interp_field(kernel_field, shifted_pts)
    base = kernel_field.values[mask]
    return float(np.sum(np.abs(shifted - base)) * grid.cellvol)
