"""Domain types, uniform grids, complex polynomial helpers and quadrature.

Every object here is immutable after construction; numpy arrays are stored
with the writeable flag cleared so they can be shared between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    CommonRoot,
    DegreeMismatch,
    GridMismatch,
    NonMonic,
    ValidationError,
)

DEFAULT_M = 2048
MONIC_TOL = 1e-12
GCD_TOL = 1e-8


def _frozen(a, dtype=complex):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [0, pi] with ``m`` intervals (``m + 1`` points)."""

    m: int = DEFAULT_M

    def __post_init__(self):
        if int(self.m) != self.m or self.m + 1 < 16:
            raise ValidationError(f"grid needs at least 16 points, got m={self.m}")
        object.__setattr__(self, "m", int(self.m))

    @property
    def point_count(self) -> int:
        return self.m + 1

    @property
    def h(self) -> float:
        return np.pi / self.m

    @property
    def points(self) -> np.ndarray:
        x = np.arange(self.m + 1) * self.h
        x[-1] = np.pi
        return x


@dataclass(frozen=True, eq=False)
class SampledFunction:
    """Complex values on the nodes of a :class:`Grid`."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != (self.grid.point_count,):
            raise GridMismatch(
                f"expected {self.grid.point_count} samples, got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValidationError("sampled function has non-finite entries")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, grid: Grid, func) -> "SampledFunction":
        return cls(grid, np.asarray(func(grid.points), dtype=complex) * np.ones(grid.point_count))

    @classmethod
    def zeros(cls, grid: Grid) -> "SampledFunction":
        return cls(grid, np.zeros(grid.point_count, dtype=complex))

    def l2_norm(self) -> float:
        return float(np.sqrt(trapezoid(np.abs(self.values) ** 2, self.grid.h)))

    def __sub__(self, other: "SampledFunction") -> "SampledFunction":
        _check_same_grid(self, other)
        return SampledFunction(self.grid, self.values - other.values)


def _check_same_grid(f: SampledFunction, g: SampledFunction):
    if f.grid != g.grid:
        raise GridMismatch(f"grids differ: m={f.grid.m} vs m={g.grid.m}")


def trapezoid(values: np.ndarray, h: float, axis: int = -1):
    """Composite trapezoid rule over the full grid."""
    v = np.moveaxis(np.asarray(values), axis, -1)
    return h * (v.sum(axis=-1) - 0.5 * (v[..., 0] + v[..., -1]))


def cumulative_trapezoid(values: np.ndarray, h: float, axis: int = -1) -> np.ndarray:
    """Running trapezoid integrals, zero at the first node."""
    v = np.moveaxis(np.asarray(values), axis, -1)
    out = np.zeros(v.shape, dtype=np.result_type(v, float))
    np.cumsum(0.5 * h * (v[..., 1:] + v[..., :-1]), axis=-1, out=out[..., 1:])
    return np.moveaxis(out, -1, axis)


def integrate_product(f: SampledFunction, g: SampledFunction, upper_index: int) -> complex:
    """Trapezoid value of the integral of ``f*g`` from 0 to ``x[upper_index]``."""
    _check_same_grid(f, g)
    if not 0 <= upper_index <= f.grid.m:
        raise GridMismatch(f"upper_index {upper_index} outside 0..{f.grid.m}")
    if upper_index == 0:
        return 0j
    prod = f.values[: upper_index + 1] * g.values[: upper_index + 1]
    return complex(trapezoid(prod, f.grid.h))


# -- polynomials (coefficients in ascending order: p[0] + p[1] lam + ...) ----


def poly_eval(p: Sequence[complex], lam):
    """Horner evaluation; ``lam`` may be a scalar or an array."""
    p = np.asarray(p, dtype=complex)
    lam = np.asarray(lam, dtype=complex)
    out = np.zeros_like(lam) + (p[-1] if p.size else 0)
    for c in p[-2::-1]:
        out = out * lam + c
    return out[()] if out.ndim == 0 else out


def poly_derivative(p: Sequence[complex]) -> np.ndarray:
    p = np.asarray(p, dtype=complex)
    if p.size <= 1:
        return np.zeros(1, dtype=complex)
    return p[1:] * np.arange(1, p.size)


def poly_roots(p: Sequence[complex]) -> np.ndarray:
    """Roots via companion-matrix eigenvalues; the zero polynomial has none.

    Leading coefficients below ``eps * max|p|`` are dropped: they only carry
    roots beyond ``1/eps``, and dividing by them overflows the companion matrix.
    """
    p = np.asarray(p, dtype=complex)
    scale = np.max(np.abs(p)) if p.size else 0.0
    if scale > 0:
        keep = np.flatnonzero(np.abs(p) > np.finfo(float).eps * scale)
        p = p[: keep[-1] + 1]
    else:
        p = p[:0]
    if p.size <= 1:
        return np.zeros(0, dtype=complex)
    return np.roots(p[::-1])


@dataclass(frozen=True, eq=False)
class PolynomialPair:
    """Boundary polynomials ``(r1, r2)`` of class R: r1 monic, same formal degree."""

    r1: np.ndarray
    r2: np.ndarray

    @property
    def degree(self) -> int:
        return len(self.r1) - 1

    def __eq__(self, other):
        return (
            isinstance(other, PolynomialPair)
            and self.degree == other.degree
            and np.array_equal(self.r1, other.r1)
            and np.array_equal(self.r2, other.r2)
        )

    def __hash__(self):
        return hash((self.r1.tobytes(), self.r2.tobytes()))

    def r1_at(self, lam):
        return poly_eval(self.r1, lam)

    def r2_at(self, lam):
        return poly_eval(self.r2, lam)

    def dr1_at(self, lam):
        return poly_eval(poly_derivative(self.r1), lam)

    def dr2_at(self, lam):
        return poly_eval(poly_derivative(self.r2), lam)


def make_polynomial_pair(
    r1_coeffs: Sequence[complex], r2_coeffs: Sequence[complex], gcd_tol: float = GCD_TOL
) -> PolynomialPair:
    """Validate and normalise a boundary polynomial pair.

    ``r2`` is zero-padded to the length of ``r1``.

    Raises:
        NonMonic: leading coefficient of ``r1`` differs from 1.
        DegreeMismatch: ``r2`` has a nonzero coefficient beyond ``deg r1``.
        CommonRoot: a root of ``r1`` lies within ``gcd_tol`` of a root of ``r2``.
    """
    r1 = np.asarray(r1_coeffs, dtype=complex).ravel()
    r2 = np.asarray(r2_coeffs, dtype=complex).ravel()
    if r1.size == 0 or r2.size == 0:
        raise ValidationError("coefficient lists must be nonempty")
    if not (np.all(np.isfinite(r1)) and np.all(np.isfinite(r2))):
        raise ValidationError("coefficients must be finite")
    if abs(r1[-1] - 1) > MONIC_TOL:
        raise NonMonic(f"leading coefficient of r1 is {r1[-1]}, expected 1")
    if r2.size > r1.size:
        if np.any(r2[r1.size:] != 0):
            raise DegreeMismatch(
                f"r2 has degree {r2.size - 1} > deg r1 = {r1.size - 1}"
            )
        r2 = r2[: r1.size]
    r2 = np.concatenate([r2, np.zeros(r1.size - r2.size, dtype=complex)])
    roots1 = poly_roots(r1)
    roots2 = poly_roots(r2)
    if roots1.size and roots2.size:
        gap = np.min(np.abs(roots1[:, None] - roots2[None, :]))
        if gap < gcd_tol:
            raise CommonRoot(f"r1 and r2 share a root (distance {gap:.2e})")
    r1 = r1.copy()
    r1[-1] = 1.0
    return PolynomialPair(_frozen(r1), _frozen(r2))


@dataclass(frozen=True, eq=False)
class BoundaryProblem:
    """The problem L(sigma, r1, r2)."""

    sigma: SampledFunction
    polys: PolynomialPair

    @property
    def grid(self) -> Grid:
        return self.sigma.grid

    @property
    def M1(self) -> int:
        return self.polys.degree

    @classmethod
    def build(cls, sigma, r1, r2, grid: Grid | None = None) -> "BoundaryProblem":
        """Convenience constructor; ``sigma`` may be a callable, array or scalar."""
        grid = grid or (sigma.grid if isinstance(sigma, SampledFunction) else Grid())
        if isinstance(sigma, SampledFunction):
            sig = sigma
        elif callable(sigma):
            sig = SampledFunction.from_callable(grid, sigma)
        else:
            vals = np.asarray(sigma, dtype=complex)
            if vals.ndim == 0:
                vals = np.full(grid.point_count, complex(vals))
            sig = SampledFunction(grid, vals)
        return cls(sig, make_polynomial_pair(r1, r2))


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Indexed spectral data ``(rho_n, lambda_n, alpha_n)``, ``n = 1..count``.

    ``unperturbed_prefix`` is the number N of leading entries that are held
    fixed in the multiple-eigenvalue mode; ``multiplicities[n-1]`` is the
    multiplicity of ``lambda_n`` (repeated for every entry of a cluster).
    For a multiple eigenvalue the alpha entries hold the principal-part
    coefficients of the Weyl function, lowest power first.
    """

    rho: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray | None = None
    M1: int = 0
    unperturbed_prefix: int = 0
    multiplicities: np.ndarray | None = None
    source: str = ""

    def __post_init__(self):
        rho = _frozen(self.rho)
        lam = _frozen(self.lam)
        if rho.shape != lam.shape or rho.ndim != 1:
            raise ValidationError("rho and lambda must be 1-D of equal length")
        if not np.allclose(rho**2, lam, rtol=1e-10, atol=1e-12):
            raise ValidationError("lambda_n must equal rho_n**2")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "lam", lam)
        if self.alpha is not None:
            alpha = _frozen(self.alpha)
            if alpha.shape != rho.shape:
                raise ValidationError("alpha length differs from rho length")
            object.__setattr__(self, "alpha", alpha)
        mult = self.multiplicities
        mult = np.ones(rho.size, dtype=int) if mult is None else np.asarray(mult, dtype=int)
        if mult.shape != rho.shape:
            raise ValidationError("multiplicities length differs from rho length")
        mult = mult.copy()
        mult.setflags(write=False)
        object.__setattr__(self, "multiplicities", mult)
        if not 0 <= self.unperturbed_prefix <= rho.size:
            raise ValidationError("unperturbed prefix longer than the data")

    @property
    def count(self) -> int:
        return self.rho.size

    @classmethod
    def from_rho(cls, rho, alpha=None, **kwargs) -> "SpectralData":
        rho = np.asarray(rho, dtype=complex)
        return cls(rho=rho, lam=rho**2, alpha=alpha, **kwargs)

    def with_alpha(self, alpha) -> "SpectralData":
        return SpectralData(
            self.rho, self.lam, alpha, self.M1, self.unperturbed_prefix,
            self.multiplicities, self.source,
        )

    def truncated(self, count: int) -> "SpectralData":
        return SpectralData(
            self.rho[:count], self.lam[:count],
            None if self.alpha is None else self.alpha[:count],
            self.M1, min(self.unperturbed_prefix, count),
            self.multiplicities[:count], self.source,
        )

    def kappa(self) -> np.ndarray:
        """Eigenvalue residuals ``rho_n - (n - M1 - 1)``."""
        n = np.arange(1, self.count + 1)
        return self.rho - (n - self.M1 - 1)

    def kappa0(self) -> np.ndarray:
        """Weight residuals ``alpha_n - 2/pi``."""
        if self.alpha is None:
            raise ValidationError("weight numbers not available")
        return self.alpha - 2 / np.pi

    def tail_partial_sums(self) -> np.ndarray:
        """Partial sums of ``|kappa_n|^2 + |kappa0_n|^2``; bounded for valid data."""
        k = np.abs(self.kappa()) ** 2
        if self.alpha is not None:
            k = k + np.abs(self.kappa0()) ** 2
        return np.cumsum(k)


def principal_sqrt(lam):
    """Square root with Re >= 0, and Im >= 0 on the imaginary axis."""
    rho = np.sqrt(np.asarray(lam, dtype=complex))
    flip = (rho.real < 0) | ((rho.real == 0) & (rho.imag < 0))
    rho = np.where(flip, -rho, rho)
    return rho[()] if rho.ndim == 0 else rho
