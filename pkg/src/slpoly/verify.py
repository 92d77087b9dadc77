"""Independent oracles and experiment harnesses.

The round trip perturbs the spectral data of a model problem, reconstructs a
problem from the perturbed data and solves the direct problem again.  Error
channels measure the distance of the reconstruction from the model, which is
what the local stability estimate bounds; closure measures how well the
reconstruction owns the prescribed data.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (
    BoundaryProblem,
    Grid,
    SampledFunction,
    SpectralData,
    make_polynomial_pair,
    poly_eval,
)
from .errors import (
    CommonRoot,
    DeltaTooLarge,
    ForwardError,
    NearbyEigenvalue,
    ValidationError,
)
from .forward import (
    characteristic,
    find_eigenvalues,
    principal_part,
    spectral_data,
    weyl_function,
)
from .inverse import DEFAULT_K, inverse_solve

log = logging.getLogger(__name__)

ORACLE_NODES = 64
ERROR_RADIUS = 20.0
CLOSURE_TOL = 1e-5
SLOPE_BOUNDS = (0.8, 1.2)
CORPUS_SEED = 20240611


def residue_alpha_oracle(problem: BoundaryProblem, lam_n, neighbours=None, nodes=ORACLE_NODES) -> complex:
    """Residue of the Weyl function at a simple eigenvalue by a circle integral.

    The radius is half the distance to the nearest other eigenvalue, capped
    at 1/2.  ``neighbours`` defaults to enough of the spectrum to cover
    ``lam_n``.

    Raises:
        NearbyEigenvalue: the radius would fall below 1e-6.
    """
    lam_n = complex(lam_n)
    if neighbours is None:
        n_max = int(np.sqrt(abs(lam_n))) + problem.M1 + 4
        neighbours = find_eigenvalues(problem, n_max).lam
    others = np.asarray(neighbours, dtype=complex)
    others = others[np.abs(others - lam_n) > 1e-9 * max(1.0, abs(lam_n))]
    gap = float(np.min(np.abs(others - lam_n))) if others.size else 1.0
    radius = min(gap, 1.0) / 2
    if radius < 1e-6:
        raise NearbyEigenvalue(f"contour radius {radius:.1e} too small at lambda={lam_n:.6g}")
    w = radius * np.exp(2j * np.pi * np.arange(nodes) / nodes)
    return complex(np.mean(weyl_function(problem, lam_n + w) * w))


# -- perturbations -------------------------------------------------------------


@dataclass(frozen=True)
class Perturbation:
    """Additive shifts of ``rho_n`` and ``alpha_n``, keyed by 1-based index."""

    rho: dict = field(default_factory=dict)
    alpha: dict = field(default_factory=dict)

    @property
    def is_zero(self) -> bool:
        return not any(self.rho.values()) and not any(self.alpha.values())

    def delta(self) -> float:
        """The l2 norm of ``|d rho_n| + |d alpha_n|``."""
        keys = set(self.rho) | set(self.alpha)
        return float(np.sqrt(sum((abs(self.rho.get(k, 0)) + abs(self.alpha.get(k, 0))) ** 2 for k in keys)))

    def scaled_to(self, delta: float) -> "Perturbation":
        """Same direction rescaled so that :meth:`delta` equals ``delta``."""
        d0 = self.delta()
        if d0 == 0:
            raise ValidationError("cannot rescale the zero perturbation")
        s = delta / d0
        return Perturbation({k: v * s for k, v in self.rho.items()}, {k: v * s for k, v in self.alpha.items()})

    def apply(self, data: SpectralData) -> SpectralData:
        rho = data.rho.copy()
        alpha = data.alpha.copy()
        for k, v in self.rho.items():
            rho[k - 1] += v
        for k, v in self.alpha.items():
            alpha[k - 1] += v
        low = min(list(self.rho) + list(self.alpha), default=data.count + 1)
        if low <= data.unperturbed_prefix:
            raise ValidationError(f"index {low} lies in the fixed prefix")
        return SpectralData(
            rho, rho**2, alpha, data.M1, data.unperturbed_prefix,
            data.multiplicities, "perturbed",
        )


# -- round trip ----------------------------------------------------------------


@dataclass
class RoundTripReport:
    delta_in: float
    sigma_error_L2: float
    r1_error_sup: float
    r2_error_sup: float
    spectral_closure_error: float
    condition_max: float
    K: int
    prefix_closure_error: float = 0.0
    r1_coefficients: list = field(default_factory=list)
    r2_coefficients: list = field(default_factory=list)
    extraction_residual: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _circle(radius=ERROR_RADIUS, nodes=128):
    return radius * np.exp(2j * np.pi * np.arange(nodes) / nodes)


def poly_sup_distance(p, q, radius=ERROR_RADIUS) -> float:
    """``max |p - q|`` over the disk ``|lam| <= radius`` (attained on the rim)."""
    z = _circle(radius)
    return float(np.max(np.abs(poly_eval(p, z) - poly_eval(q, z))))


def _clusters(data: SpectralData, upto: int):
    """``(start, size)`` of each eigenvalue group among the first ``upto`` entries."""
    out, n = [], 0
    while n < upto:
        k = int(data.multiplicities[n])
        out.append((n, k))
        n += k
    return out


def prefix_closure(problem: BoundaryProblem, data: SpectralData) -> float:
    """Largest mismatch of prefix invariants between ``problem`` and ``data``.

    A multiple eigenvalue generally splits under round-off, so each prefix
    group is compared through quantities continuous in the data: the power
    sums of the zeros of Delta inside a small disk and the principal-part
    coefficients of the Weyl function on that disk.
    """
    err = 0.0
    lam = data.lam
    for start, k in _clusters(data, data.unperturbed_prefix):
        centre = lam[start]
        others = np.delete(lam, np.arange(start, start + k))
        gap = float(np.min(np.abs(others - centre))) if others.size else 1.0
        radius = min(gap, 1.0) / 2
        s = _shifted_power_sums(problem, centre, radius, k)
        expected = np.array([k] + [0.0] * k)
        err = max(err, float(np.max(np.abs(s - expected))))
        coeffs = principal_part(problem, centre, k, radius=radius)
        err = max(err, float(np.max(np.abs(coeffs - data.alpha[start:start + k]))))
    return err


def _shifted_power_sums(problem, centre, radius, k, nodes=256):
    """``sum (lam_j - centre)**p`` over zeros in ``|lam - centre| < radius``."""
    w = radius * np.exp(2j * np.pi * np.arange(nodes) / nodes)
    d, dd = characteristic(problem, centre + w, with_derivative=True)
    f = dd / d * w / nodes
    return np.array([np.sum(f * w**p) for p in range(k + 1)])


def spectral_closure(problem: BoundaryProblem, data: SpectralData, K: int) -> tuple[float, float]:
    """``(tail, prefix)`` closure errors of ``problem`` against ``data[:K]``.

    Tail entries are compared index by index as ``|rho| + |alpha|``.
    """
    N = data.unperturbed_prefix
    rec = spectral_data(problem, K, allow_multiple=N > 0)
    idx = np.arange(N, K)
    if rec.count < K:
        raise ForwardError("reconstructed problem produced too few eigenvalues")
    tail = np.abs(rec.rho[idx] - data.rho[idx]) + np.abs(rec.alpha[idx] - data.alpha[idx])
    tail_err = float(np.max(tail)) if tail.size else 0.0
    return tail_err, prefix_closure(problem, data) if N else 0.0


def roundtrip(model: BoundaryProblem, perturbation: Perturbation, K: int = DEFAULT_K,
              model_data: SpectralData | None = None, skip_N: int = 0, workers: int = 1) -> RoundTripReport:
    """Perturb the model data, reconstruct and measure errors and closure."""
    if model_data is None or model_data.count < K:
        model_data = spectral_data(model, K, allow_multiple=skip_N > 0)
    base = model_data.truncated(K)
    if skip_N:
        base = SpectralData(base.rho, base.lam, base.alpha, base.M1, skip_N, base.multiplicities, base.source)
    target = perturbation.apply(base)
    res = inverse_solve(model, target, K=K, skip_N=skip_N, model_data=base, workers=workers)
    rec = res.problem
    tail_err, prefix_err = spectral_closure(rec, target, K)
    return RoundTripReport(
        delta_in=res.distances.delta,
        sigma_error_L2=(res.sigma - model.sigma).l2_norm(),
        r1_error_sup=poly_sup_distance(res.polys.r1, model.polys.r1),
        r2_error_sup=poly_sup_distance(res.polys.r2, model.polys.r2),
        spectral_closure_error=tail_err,
        condition_max=res.diagnostics["condition_max"],
        K=K,
        prefix_closure_error=prefix_err,
        r1_coefficients=[[float(c.real), float(c.imag)] for c in res.polys.r1],
        r2_coefficients=[[float(c.real), float(c.imag)] for c in res.polys.r2],
        extraction_residual=max(res.diagnostics["r1_residual"], res.diagnostics["r2_residual"]),
    )


# -- stability sweep -------------------------------------------------------------


CHANNELS = ("sigma_error_L2", "r1_error_sup", "r2_error_sup")


@dataclass
class SweepReport:
    deltas: list
    errors: dict
    slopes: dict
    intercepts: dict
    reports: list = field(default_factory=list)
    bounds: tuple = SLOPE_BOUNDS

    @property
    def constants(self) -> dict:
        """Fitted stability constants ``C`` with ``error ~ C * delta**slope``."""
        return {k: float(np.exp(v)) for k, v in self.intercepts.items()}

    def passed(self, channel: str) -> bool:
        lo, hi = self.bounds
        s = self.slopes[channel]
        return bool(np.isfinite(s) and lo <= s <= hi and np.isfinite(self.constants[channel]))

    def to_dict(self) -> dict:
        """JSON-ready form; undefined fits (an identically zero channel) become ``None``."""

        def clean(d):
            return {k: (v if np.isfinite(v) else None) for k, v in d.items()}

        return {
            "deltas": self.deltas,
            "errors": self.errors,
            "slopes": clean(self.slopes),
            "constants": clean(self.constants),
            "reports": [r.to_dict() for r in self.reports],
        }


def validate_deltas(deltas) -> list:
    d = [float(x) for x in deltas]
    if len(d) < 2:
        raise ValidationError("a sweep needs at least two deltas")
    if any(x <= 0 or not np.isfinite(x) for x in d):
        raise ValidationError("deltas must be positive and finite")
    if any(b >= a for a, b in zip(d, d[1:])):
        raise ValidationError("deltas must be strictly decreasing")
    return d


def stability_sweep(model: BoundaryProblem, direction: Perturbation, deltas, K: int = DEFAULT_K,
                    model_data: SpectralData | None = None, skip_N: int = 0,
                    channels=CHANNELS) -> SweepReport:
    """Round trips along one perturbation direction and log-log slope fits.

    Raises:
        ValidationError: deltas not positive and strictly decreasing.
        DeltaTooLarge: some delta leaves the solvability ball; the exception
            carries the offending value as ``delta``.
    """
    deltas = validate_deltas(deltas)
    if model_data is None or model_data.count < K:
        model_data = spectral_data(model, K, allow_multiple=skip_N > 0)
    reports = []
    for d in deltas:
        try:
            reports.append(roundtrip(model, direction.scaled_to(d), K, model_data, skip_N))
        except DeltaTooLarge as exc:
            exc.delta = d
            raise
    errors = {c: [getattr(r, c) for r in reports] for c in channels}
    slopes, intercepts = {}, {}
    x = np.log(deltas)
    for c in channels:
        e = np.asarray(errors[c])
        if np.any(e <= 0):
            slopes[c], intercepts[c] = float("nan"), float("nan")
            continue
        s, b = np.polyfit(x, np.log(e), 1)
        slopes[c], intercepts[c] = float(s), float(b)
    return SweepReport(deltas, errors, slopes, intercepts, reports)


# -- random corpus ---------------------------------------------------------------


def piecewise_linear_sigma(grid: Grid, knots) -> SampledFunction:
    """Linear interpolation of complex knot values at ``x = j pi / (len(knots) - 1)``."""
    knots = np.asarray(knots, dtype=complex)
    xk = np.linspace(0, np.pi, knots.size)
    x = grid.points
    return SampledFunction(grid, np.interp(x, xk, knots.real) + 1j * np.interp(x, xk, knots.imag))


def random_problem(rng: np.random.Generator, grid: Grid | None = None, max_degree: int = 2,
                   sigma_bound: float = 0.5) -> BoundaryProblem:
    """Random piecewise-linear complex sigma (breaks at multiples of pi/8) and polynomial pair."""
    grid = grid or Grid()
    knots = rng.normal(size=9) + 1j * rng.normal(size=9)
    knots *= sigma_bound * rng.uniform(0.2, 1.0) / np.max(np.abs(knots))
    sigma = piecewise_linear_sigma(grid, knots)
    M1 = int(rng.integers(0, max_degree + 1))
    while True:
        r1 = np.concatenate([rng.normal(size=M1) + 1j * rng.normal(size=M1) * 0.5, [1.0]])
        r2 = rng.normal(size=M1 + 1) + 1j * rng.normal(size=M1 + 1) * 0.5
        try:
            return BoundaryProblem(sigma, make_polynomial_pair(r1, r2))
        except CommonRoot:
            continue


def random_corpus(seed: int = CORPUS_SEED, count: int = 10, grid: Grid | None = None, n_check: int = 8) -> list:
    """Deterministic corpus of problems whose first ``n_check`` eigenvalues are simple."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        p = random_problem(rng, grid)
        try:
            find_eigenvalues(p, n_check)
        except ForwardError as exc:
            log.debug("corpus candidate rejected: %s", exc)
            continue
        out.append(p)
    return out


__all__ = [
    "residue_alpha_oracle", "Perturbation", "RoundTripReport", "SweepReport",
    "roundtrip", "stability_sweep", "spectral_closure", "prefix_closure",
    "poly_sup_distance", "random_problem", "random_corpus", "piecewise_linear_sigma",
    "validate_deltas", "CHANNELS",
]
