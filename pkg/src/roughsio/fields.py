"""Grid-sampled scalar fields.

A ``ScalarField`` is a dense real array over a uniform coordinate grid; it is
the universal carrier for test functions, rasterized kernels, weights and
heat states.  Values are stored flat in row-major coordinate order.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .groups import GroupSpec, quasi_norm

__all__ = [
    "GridSpec",
    "ScalarField",
    "group_box",
    "lp_norm",
    "save_field",
    "load_field",
    "smooth_bump",
    "random_bump_field",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid: per-coordinate bounds and point counts."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if not (len(self.lower) == len(self.upper) == len(self.counts)):
            raise ValueError("grid descriptor lengths differ")
        if any(c < 2 for c in self.counts):
            raise ValueError("need at least 2 points per coordinate")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise ValueError("upper bounds must exceed lower bounds")

    @property
    def n(self) -> int:
        return len(self.counts)

    @property
    def spacing(self) -> np.ndarray:
        lo = np.asarray(self.lower)
        up = np.asarray(self.upper)
        ct = np.asarray(self.counts)
        return (up - lo) / (ct - 1)

    @property
    def cellvol(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    def axis(self, d: int) -> np.ndarray:
        return self.lower[d] + self.spacing[d] * np.arange(self.counts[d])

    def meshgrid(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis(d) for d in range(self.n)], indexing="ij")

    def points(self) -> np.ndarray:
        """All grid points as an (size, n) array, row-major order."""
        mesh = self.meshgrid()
        return np.stack([m.ravel() for m in mesh], axis=1)

    def radius(self) -> float:
        """Half-extent per spec'd box convention: max over dims of bound."""
        return float(max(max(abs(l), abs(u)) for l, u in zip(self.lower, self.upper)))

    def dilated(self, g: GroupSpec, extra_radius: float) -> "GridSpec":
        """Enlarge the box so products with rho(z) <= extra_radius stay inside.

        Uses the quasi-triangle inequality with the stored A0: the output box
        is the quasi-ball of radius a0 * (r_in + extra_radius), keeping the
        grid spacing (counts grow accordingly).
        """
        r_in = max(
            quasi_norm(g, np.array(self.lower)), quasi_norm(g, np.array(self.upper))
        )
        r_out = g.a0 * (float(r_in) + float(extra_radius))
        sp = self.spacing
        lo, up, ct = [], [], []
        for d in range(self.n):
            bound = r_out ** g.exponents[d]
            m = int(np.ceil((bound - abs(self.lower[d])) / sp[d]))
            m = max(m, 0)
            lo.append(self.lower[d] - m * sp[d])
            up.append(self.upper[d] + m * sp[d])
            ct.append(self.counts[d] + 2 * m)
        return GridSpec(tuple(lo), tuple(up), tuple(ct))


def group_box(g: GroupSpec, radius: float, points_per_dim) -> GridSpec:
    """Grid over the quasi-ball box {|x_d| <= radius^{a_d}}.

    ``points_per_dim`` is an int (same count every dimension) or a sequence.
    """
    if isinstance(points_per_dim, int):
        counts = (points_per_dim,) * g.n
    else:
        counts = tuple(points_per_dim)
    lower = tuple(-(radius ** a) for a in g.exponents)
    upper = tuple(radius ** a for a in g.exponents)
    return GridSpec(lower, upper, counts)


@dataclass
class ScalarField:
    """Dense samples of a real function on a ``GridSpec``."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.size:
            raise ValueError(
                f"value count {self.values.size} != grid size {self.grid.size}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable) -> "ScalarField":
        return cls(grid, np.asarray(fn(grid.points()), dtype=float))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls(grid, np.zeros(grid.size))

    def reshaped(self) -> np.ndarray:
        return self.values.reshape(self.grid.counts)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def nonzero_points(self, threshold: float = 0.0):
        """(points, values) of cells with |value| > threshold."""
        mask = np.abs(self.values) > threshold
        return self.grid.points()[mask], self.values[mask]

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cellvol)

    def boundary_mass_fraction(self) -> float:
        """Fraction of the L1 mass sitting on the outermost grid layer."""
        arr = np.abs(self.reshaped())
        total = arr.sum()
        if total == 0:
            return 0.0
        core = arr[tuple(slice(1, -1) for _ in range(self.grid.n))].sum()
        return float((total - core) / total)


def lp_norm(f: ScalarField, p, weight: ScalarField | None = None) -> float:
    """Grid L^p norm, optionally weighted; ``p`` may be numeric or "inf"."""
    if weight is not None:
        if weight.grid != f.grid:
            raise ValueError("weight must live on the same grid")
        w = weight.values
        if np.any(w <= 0):
            raise ValueError("weight must be positive")
    else:
        w = None
    a = np.abs(f.values)
    if p == "inf" or p == math.inf:
        return float(a.max(initial=0.0))
    p = float(p)
    if p < 1:
        raise ValueError("p must be >= 1")
    core = a**p if w is None else a**p * w
    return float((core.sum() * f.grid.cellvol) ** (1.0 / p))


# ---------------------------------------------------------------------------
# text serialization (grid header + values), shared with the plotting side


def save_field(f: ScalarField, path_or_buf) -> None:
    buf = io.StringIO()
    buf.write("roughsio-field 1\n")
    buf.write(" ".join(repr(v) for v in f.grid.lower) + "\n")
    buf.write(" ".join(repr(v) for v in f.grid.upper) + "\n")
    buf.write(" ".join(str(c) for c in f.grid.counts) + "\n")
    for v in f.values:
        buf.write(repr(float(v)) + "\n")
    data = buf.getvalue()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(data)
    else:
        with open(path_or_buf, "w", encoding="utf-8") as fh:
            fh.write(data)


def load_field(path_or_buf) -> ScalarField:
    if hasattr(path_or_buf, "read"):
        lines = path_or_buf.read().splitlines()
    else:
        with open(path_or_buf, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("roughsio-field"):
        raise ValueError("not a field file")
    lower = tuple(float(v) for v in lines[1].split())
    upper = tuple(float(v) for v in lines[2].split())
    counts = tuple(int(v) for v in lines[3].split())
    values = np.array([float(v) for v in lines[4 : 4 + int(np.prod(counts))]])
    return ScalarField(GridSpec(lower, upper, counts), values)


# ---------------------------------------------------------------------------
# smooth compactly supported test functions


def smooth_quasi_norm(g: GroupSpec, pts: np.ndarray, order: int = 8) -> np.ndarray:
    """Smooth surrogate of rho: an l^{2m}-average of |x_d|^{1/a_d}.

    Comparable to rho within a factor n^{1/2m}; used for bump profiles so
    that test functions are C^infinity despite the max-norm's corners.
    """
    comps = np.abs(pts) ** (1.0 / np.asarray(g.exponents))
    return (np.sum(comps ** (2 * order), axis=-1)) ** (1.0 / (2 * order))


def smooth_bump(u: np.ndarray) -> np.ndarray:
    """C^infinity bump exp(1 - 1/(1-u^2)) on |u| < 1, zero outside."""
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ui * ui))
    return out


def random_bump_field(
    g: GroupSpec,
    grid: GridSpec,
    rng,
    n_bumps: tuple[int, int] = (3, 6),
    support_radius: float | None = None,
) -> ScalarField:
    """Sum of 3-6 dilated/translated smooth bumps with seeded parameters.

    All bumps stay inside the quasi-ball of ``support_radius`` (default 40%
    of the grid radius) so the field is compactly supported well inside the
    box.
    """
    rng = np.random.default_rng(rng)
    r_box = grid.radius() if support_radius is None else support_radius
    if support_radius is None:
        r_box = 0.4 * min(
            quasi_norm(g, np.abs(np.array(grid.lower))),
            quasi_norm(g, np.abs(np.array(grid.upper))),
        )
    pts = grid.points()
    total = np.zeros(grid.size)
    h_max = float(np.max(grid.spacing))
    k = int(rng.integers(n_bumps[0], n_bumps[1] + 1))
    from .groups import dilate, inverse, multiply

    for _ in range(k):
        center_rho = rng.uniform(0.0, 0.6) * r_box
        direction = rng.uniform(-1.0, 1.0, size=g.n)
        center = dilate(g, max(center_rho, 1e-9), direction)
        width = rng.uniform(0.35, 1.0) * max(0.4 * r_box, 6 * h_max)
        amp = rng.uniform(-1.0, 1.0)
        rel = multiply(g, inverse(g, center), pts)
        u = smooth_quasi_norm(g, rel) / width
        total += amp * smooth_bump(u)
    return ScalarField(grid, total)
