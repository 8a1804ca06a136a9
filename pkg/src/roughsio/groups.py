"""Homogeneous group arithmetic.

A homogeneous group here is R^n carrying a polynomial multiplication law

    (xy)_1 = x_1 + y_1,   (xy)_j = x_j + y_j + Q_j(x, y),

where each Q_j is a sum of mixed monomials in the coordinates x_1..x_{j-1},
y_1..y_{j-1}, homogeneous of weighted degree a_j under the anisotropic
dilations  lam o x = (lam^{a_1} x_1, ..., lam^{a_n} x_n).  The quasi-norm is
rho(x) = max_j |x_j|^{1/a_j}.

``GroupSpec`` objects are immutable and every function in this module is
pure, so they can be shared freely between workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "MonomialTerm",
    "GroupSpec",
    "HomogeneousPolynomial",
    "euclidean",
    "heisenberg",
    "multiply",
    "inverse",
    "dilate",
    "quasi_norm",
    "estimate_a0",
    "vector_field_coeffs",
    "eval_polynomial_pullback",
    "load_group_config",
    "parse_group_config",
]


@dataclass(frozen=True)
class MonomialTerm:
    """One monomial  coef * x^xpow * y^ypow  contributing to Q_{coord}."""

    coord: int
    coef: float
    xpow: tuple[int, ...]
    ypow: tuple[int, ...]

    def weighted_degree(self, exponents: Sequence[float]) -> float:
        return float(
            sum(a * (px + py) for a, px, py in zip(exponents, self.xpow, self.ypow))
        )


@dataclass(frozen=True)
class GroupSpec:
    """Immutable description of a homogeneous group.

    Attributes
    ----------
    n : Euclidean (topological) dimension.
    exponents : dilation weights a_1 <= ... <= a_n with a_1 = 1.
    terms : monomial table defining the Q_j polynomials.
    a0 : quasi-triangle constant; 1.0 until ``estimate_a0`` refines it.
    """

    name: str
    n: int
    exponents: tuple[float, ...]
    terms: tuple[MonomialTerm, ...] = ()
    a0: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("dimension must be positive")
        if len(self.exponents) != self.n:
            raise ValueError("exponents length must match dimension")
        if abs(self.exponents[0] - 1.0) > 1e-12:
            raise ValueError("first dilation exponent must be 1")
        if any(b < a - 1e-12 for a, b in zip(self.exponents, self.exponents[1:])):
            raise ValueError("dilation exponents must be nondecreasing")
        for t in self.terms:
            self._check_term(t)

    def _check_term(self, t: MonomialTerm) -> None:
        if not (1 <= t.coord < self.n):
            raise ValueError(f"term coordinate {t.coord} out of range")
        if len(t.xpow) != self.n or len(t.ypow) != self.n:
            raise ValueError("term multi-index length must match dimension")
        # structural constraint: Q_j may only involve coordinates < j
        for d in range(self.n):
            if (t.xpow[d] or t.ypow[d]) and d >= t.coord:
                raise ValueError(
                    f"Q_{t.coord} term uses coordinate {d} >= {t.coord}"
                )
        # each monomial must be homogeneous of weighted degree a_coord
        deg = t.weighted_degree(self.exponents)
        if abs(deg - self.exponents[t.coord]) > 1e-9:
            raise ValueError(
                f"term for coordinate {t.coord} has weighted degree {deg}, "
                f"expected {self.exponents[t.coord]}"
            )

    @property
    def homogeneous_dimension(self) -> float:
        """Q = sum of the dilation exponents."""
        return float(sum(self.exponents))

    @property
    def exponent_array(self) -> np.ndarray:
        return np.asarray(self.exponents, dtype=float)

    @property
    def is_abelian(self) -> bool:
        return not self.terms

    def with_a0(self, a0: float) -> "GroupSpec":
        return replace(self, a0=float(max(a0, 1.0)))

    def origin(self) -> np.ndarray:
        return np.zeros(self.n)

    def __repr__(self) -> str:  # keep reprs short in test output
        return f"GroupSpec({self.name!r}, n={self.n}, Q={self.homogeneous_dimension:g})"


def euclidean(n: int) -> GroupSpec:
    """Abelian R^n with isotropic dilations; the commutative baseline."""
    return GroupSpec(name=f"euclidean{n}", n=n, exponents=(1.0,) * n)


def heisenberg() -> GroupSpec:
    """First Heisenberg group in symmetric exponential coordinates.

    Convention fixed here: Q_3(x, y) = (x_1 y_2 - x_2 y_1) / 2, dilation
    weights (1, 1, 2).  Any other polynomial law with the same structural
    constraints can be supplied through ``load_group_config``.
    """
    terms = (
        MonomialTerm(2, 0.5, (1, 0, 0), (0, 1, 0)),
        MonomialTerm(2, -0.5, (0, 1, 0), (1, 0, 0)),
    )
    return GroupSpec(name="heisenberg1", n=3, exponents=(1.0, 1.0, 2.0), terms=terms)


def _as_points(g: GroupSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != g.n:
        raise ValueError(f"point has dimension {x.shape[-1]}, group needs {g.n}")
    return x


def _eval_monomial(pow_: Sequence[int], pts: np.ndarray) -> np.ndarray:
    out = np.ones(pts.shape[:-1])
    for d, p in enumerate(pow_):
        if p:
            out = out * pts[..., d] ** p
    return out


def multiply(g: GroupSpec, x, y) -> np.ndarray:
    """Group product x*y.  Broadcasts over leading axes."""
    x = _as_points(g, x)
    y = _as_points(g, y)
    out = x + y
    for t in g.terms:
        q = t.coef * _eval_monomial(t.xpow, x) * _eval_monomial(t.ypow, y)
        out[..., t.coord] = out[..., t.coord] + q
    return out


def inverse(g: GroupSpec, x) -> np.ndarray:
    """Group inverse, solved coordinate-by-coordinate.

    Solves x_j + z_j + Q_j(x, z) = 0 in increasing j; exact because Q_j only
    involves coordinates before j.
    """
    x = _as_points(g, x)
    z = -x.copy()
    terms_by_coord: dict[int, list[MonomialTerm]] = {}
    for t in g.terms:
        terms_by_coord.setdefault(t.coord, []).append(t)
    for j in sorted(terms_by_coord):
        q = np.zeros(x.shape[:-1])
        for t in terms_by_coord[j]:
            q = q + t.coef * _eval_monomial(t.xpow, x) * _eval_monomial(t.ypow, z)
        z[..., j] = -x[..., j] - q
    return z


def dilate(g: GroupSpec, lam, x) -> np.ndarray:
    """Anisotropic dilation lam o x; lam may broadcast over points."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("dilation parameter must be positive")
    x = _as_points(g, x)
    scale = lam[..., None] ** g.exponent_array if lam.ndim else lam ** g.exponent_array
    return x * scale


def quasi_norm(g: GroupSpec, x) -> np.ndarray:
    """rho(x) = max_j |x_j|^(1/a_j)."""
    x = _as_points(g, x)
    vals = np.abs(x) ** (1.0 / g.exponent_array)
    return np.max(vals, axis=-1)


def sample_box(g: GroupSpec, count: int, radius: float, rng) -> np.ndarray:
    """Uniform samples from the quasi-ball box {|x_j| <= radius^{a_j}}."""
    scale = radius ** g.exponent_array
    return rng.uniform(-1.0, 1.0, size=(count, g.n)) * scale


def estimate_a0(
    g: GroupSpec,
    samples: int = 100_000,
    box_radius: float = 1.0,
    rng=None,
    safety: float = 1.01,
) -> float:
    """Estimate the quasi-triangle constant by random sampling.

    The ratio rho(xy)/(rho(x)+rho(y)) is invariant under joint dilation, so
    one absolute scale suffices; relative scales between x and y are swept
    over three octaves each way.  The returned value is inflated by
    ``safety`` and floored at 1.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(rng)
    best = 0.0
    chunk = 200_000
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        x = sample_box(g, m, box_radius, rng)
        y = sample_box(g, m, box_radius, rng)
        lam = 2.0 ** rng.uniform(-3.0, 3.0, size=m)
        y = dilate(g, lam, y)
        num = quasi_norm(g, multiply(g, x, y))
        den = quasi_norm(g, x) + quasi_norm(g, y)
        ok = den > 0
        if np.any(ok):
            best = max(best, float(np.max(num[ok] / den[ok])))
        done += m
    return max(1.0, best * safety)


# ---------------------------------------------------------------------------
# polynomials


@dataclass(frozen=True)
class HomogeneousPolynomial:
    """Polynomial as a tuple of (multi-index, coefficient) monomials."""

    n: int
    terms: tuple[tuple[tuple[int, ...], float], ...]

    @classmethod
    def from_dict(cls, n: int, coeffs: dict) -> "HomogeneousPolynomial":
        terms = tuple(
            (tuple(beta), float(c)) for beta, c in sorted(coeffs.items()) if c != 0.0
        )
        return cls(n=n, terms=terms)

    @classmethod
    def monomial(cls, n: int, beta: Sequence[int], coef: float = 1.0):
        return cls.from_dict(n, {tuple(beta): coef})

    def homogeneous_degree(self, exponents: Sequence[float]) -> float:
        """Shared weighted degree; raises if the terms disagree."""
        degs = {
            round(sum(a * b for a, b in zip(exponents, beta)), 9)
            for beta, _ in self.terms
        }
        if len(degs) > 1:
            raise ValueError(f"polynomial is not homogeneous: degrees {sorted(degs)}")
        return float(degs.pop()) if degs else 0.0

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1])
        for beta, c in self.terms:
            out = out + c * _eval_monomial(beta, pts)
        return out

    def derivative(self, d: int) -> "HomogeneousPolynomial":
        coeffs: dict = {}
        for beta, c in self.terms:
            if beta[d] == 0:
                continue
            nb = list(beta)
            nb[d] -= 1
            key = tuple(nb)
            coeffs[key] = coeffs.get(key, 0.0) + c * beta[d]
        return HomogeneousPolynomial.from_dict(self.n, coeffs)

    def _combine(self, other, sign) -> "HomogeneousPolynomial":
        coeffs = {beta: c for beta, c in self.terms}
        for beta, c in other.terms:
            coeffs[beta] = coeffs.get(beta, 0.0) + sign * c
        return HomogeneousPolynomial.from_dict(self.n, coeffs)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return HomogeneousPolynomial.from_dict(
                self.n, {beta: c * other for beta, c in self.terms}
            )
        coeffs: dict = {}
        for b1, c1 in self.terms:
            for b2, c2 in other.terms:
                key = tuple(a + b for a, b in zip(b1, b2))
                coeffs[key] = coeffs.get(key, 0.0) + c1 * c2
        return HomogeneousPolynomial.from_dict(self.n, coeffs)

    __rmul__ = __mul__

    @property
    def is_zero(self) -> bool:
        return not self.terms


def monomials_up_to_degree(
    g: GroupSpec, max_degree: float
) -> list[HomogeneousPolynomial]:
    """All monomials of weighted homogeneous degree <= max_degree.

    Includes the constant.  Ordered by (degree, multi-index).
    """
    a = g.exponents
    found: list[tuple[float, tuple[int, ...]]] = []

    def rec(prefix: list[int], d: int, deg: float):
        if d == g.n:
            found.append((deg, tuple(prefix)))
            return
        p = 0
        while deg + p * a[d] <= max_degree + 1e-9:
            rec(prefix + [p], d + 1, deg + p * a[d])
            p += 1

    rec([], 0, 0.0)
    found.sort()
    return [HomogeneousPolynomial.monomial(g.n, beta) for _, beta in found]


def eval_polynomial_pullback(
    g: GroupSpec, p: HomogeneousPolynomial, mode: str, x, y=None
) -> np.ndarray:
    """Evaluate P(x^-1), P(yx) or P(xy).

    ``mode`` is one of ``inverse``, ``left_translate`` (P(y x)) or
    ``right_translate`` (P(x y)); translates need ``y``.
    """
    x = _as_points(g, x)
    if mode == "inverse":
        return p(inverse(g, x))
    if y is None:
        raise ValueError("translate modes need the translation point y")
    if mode == "left_translate":
        return p(multiply(g, y, x))
    if mode == "right_translate":
        return p(multiply(g, x, y))
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# invariant vector fields


def vector_field_coeffs(g: GroupSpec, side: str = "left"):
    """First-order coefficient tables of the invariant vector fields.

    Returns a list ``fields`` where ``fields[j]`` is a dict {i: polynomial}
    with X_j = d_j + sum_i poly_ij(x) d_i (coefficients of the left-invariant
    field are d/dy_j of Q_i at y = 0; right-invariant fields differentiate in
    x at x = 0).
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    fields: list[dict[int, HomogeneousPolynomial]] = [dict() for _ in range(g.n)]
    for t in g.terms:
        own, other = (t.ypow, t.xpow) if side == "left" else (t.xpow, t.ypow)
        if sum(own) != 1:
            continue
        j = own.index(1)
        poly = HomogeneousPolynomial.monomial(g.n, other, t.coef)
        cur = fields[j].get(t.coord)
        fields[j][t.coord] = poly if cur is None else cur + poly
    return fields


def apply_field_to_polynomial(
    g: GroupSpec,
    fields,
    j: int,
    p: HomogeneousPolynomial,
) -> HomogeneousPolynomial:
    """Apply the first-order operator X_j (given its coefficient table) to P."""
    out = p.derivative(j)
    for i, coeff in fields[j].items():
        out = out + coeff * p.derivative(i)
    return out


# ---------------------------------------------------------------------------
# config loading

_CONFIG_DOC = """\
Group config format (one directive per line, '#' comments):

    name <identifier>
    dim <n>
    exponents <a_1> ... <a_n>
    term <coord> x:<p_1,...,p_n> y:<p_1,...,p_n> c:<coefficient>

Coordinates are 1-based in the file; multi-indices list one integer power
per coordinate.
"""


def parse_group_config(text: str) -> GroupSpec:
    """Parse a group description in the documented line format."""
    name = "custom"
    n = None
    exponents: tuple[float, ...] | None = None
    terms: list[MonomialTerm] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0].lower()
        try:
            if key == "name":
                name = parts[1]
            elif key == "dim":
                n = int(parts[1])
            elif key == "exponents":
                exponents = tuple(float(v) for v in parts[1:])
            elif key == "term":
                coord = int(parts[1]) - 1
                xpow = ypow = None
                coef = None
                for p in parts[2:]:
                    tag, _, val = p.partition(":")
                    if tag == "x":
                        xpow = tuple(int(v) for v in val.split(","))
                    elif tag == "y":
                        ypow = tuple(int(v) for v in val.split(","))
                    elif tag == "c":
                        coef = float(val)
                if xpow is None or ypow is None or coef is None:
                    raise ValueError("term needs x:, y: and c: fields")
                terms.append(MonomialTerm(coord, coef, xpow, ypow))
            else:
                raise ValueError(f"unknown directive {key!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"group config line {lineno}: {exc}\n{_CONFIG_DOC}")
    if n is None or exponents is None:
        raise ValueError(f"group config must define dim and exponents\n{_CONFIG_DOC}")
    return GroupSpec(name=name, n=n, exponents=exponents, terms=tuple(terms))


def load_group_config(path) -> GroupSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_group_config(fh.read())


def check_group_axioms(
    g: GroupSpec, samples: int = 1000, radius: float = 1.5, rng=None
) -> dict:
    """Sampled group-axiom residuals (associativity, identity, inverses).

    Returns the max absolute violations; useful to sanity-check custom laws,
    which the structural validation alone cannot certify.
    """
    rng = np.random.default_rng(rng)
    x = sample_box(g, samples, radius, rng)
    y = sample_box(g, samples, radius, rng)
    z = sample_box(g, samples, radius, rng)
    assoc = np.max(
        np.abs(multiply(g, multiply(g, x, y), z) - multiply(g, x, multiply(g, y, z)))
    )
    e = g.origin()
    ident = max(
        np.max(np.abs(multiply(g, x, e) - x)), np.max(np.abs(multiply(g, e, x) - x))
    )
    xi = inverse(g, x)
    inv = max(
        np.max(np.abs(multiply(g, x, xi))), np.max(np.abs(multiply(g, xi, x)))
    )
    return {"associativity": float(assoc), "identity": float(ident), "inverse": float(inv)}
