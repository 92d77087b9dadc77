"""Constructive inverse solver built on a nearby model problem.

Given a model problem and target spectral data, the truncated main equation
``psi_model(x) = (E + H(x)) psi(x)`` is solved at every grid point; the
recovered solutions ``phi_{ni}(x)`` then feed the reconstruction series for
sigma and the boundary polynomials.

Index convention: the unknowns are ordered ``(n, i)`` with ``n`` running over
the active indices ``N+1..K`` and ``i in {0, 1}``; ``i = 0`` refers to the
target data and ``i = 1`` to the model data.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .core import (
    BoundaryProblem,
    PolynomialPair,
    SampledFunction,
    SpectralData,
    make_polynomial_pair,
    poly_eval,
    principal_sqrt,
)
from .errors import (
    CountMismatch,
    DeltaTooLarge,
    ExtractionResidual,
    NearPole,
    PrefixMismatch,
    ValidationError,
)
from .forward import TAU_POLE, phi_tables, propagate, spectral_data

log = logging.getLogger(__name__)

DEFAULT_K = 40
TAU_POLY = 1e-6
COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class DistanceSequences:
    delta_n: np.ndarray
    chi_n: np.ndarray
    delta: float


def distances(target: SpectralData, model: SpectralData, prefix: int = 0) -> DistanceSequences:
    """``delta_n = |rho_n - rho~_n| + |alpha_n - alpha~_n|`` and ``chi_n = 1/delta_n``.

    With ``prefix = N > 0`` the first N entries must coincide exactly and are
    excluded from ``delta``.
    """
    if target.count != model.count:
        raise CountMismatch(f"target has {target.count} entries, model {model.count}")
    if target.alpha is None or model.alpha is None:
        raise ValidationError("weight numbers required on both sides")
    if prefix:
        same = np.array_equal(target.lam[:prefix], model.lam[:prefix]) and np.array_equal(
            target.alpha[:prefix], model.alpha[:prefix]
        )
        if not same:
            raise PrefixMismatch(f"the first {prefix} entries of target and model differ")
    d = np.abs(target.rho - model.rho) + np.abs(target.alpha - model.alpha)
    d[:prefix] = 0.0
    with np.errstate(divide="ignore"):
        chi = np.where(d != 0, 1.0 / np.where(d != 0, d, 1.0), 0.0)
    return DistanceSequences(d, chi, float(np.sqrt(np.sum(d**2))))


@dataclass(frozen=True, eq=False)
class ModelTables:
    """Model solutions at target and model eigenvalues for the active indices.

    Row ``2p + i`` of ``phi``/``phi_q`` holds ``phi~(x, lam_{n i})`` with
    ``n = indices[p]``.
    """

    model: BoundaryProblem
    indices: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    phi: np.ndarray
    phi_q: np.ndarray

    @property
    def size(self) -> int:
        return self.lam.size

    @property
    def grid(self):
        return self.model.grid

    @classmethod
    def build(cls, model: BoundaryProblem, target: SpectralData, model_data: SpectralData,
              K: int, prefix: int = 0) -> "ModelTables":
        idx = np.arange(prefix + 1, K + 1)
        lam = np.empty(2 * idx.size, dtype=complex)
        alpha = np.empty_like(lam)
        lam[0::2], lam[1::2] = target.lam[idx - 1], model_data.lam[idx - 1]
        alpha[0::2], alpha[1::2] = target.alpha[idx - 1], model_data.alpha[idx - 1]
        if lam.size:
            Y, Z = phi_tables(model, lam)
        else:
            Y = Z = np.zeros((0, model.grid.point_count), dtype=complex)
        for a in (lam, alpha, Y, Z):
            a.setflags(write=False)
        return cls(model, idx, lam, alpha, Y, Z)

    @cached_property
    def deriv(self) -> np.ndarray:
        """Ordinary x-derivatives ``phi' = phi^[1] + sigma~ phi``."""
        return self.phi_q + self.model.sigma.values[None, :] * self.phi


def _kernel_chunk(tables: ModelTables, start: int, stop: int, running: np.ndarray):
    """D~(x_j; a, b) for ``start <= j < stop`` with the end-corrected trapezoid.

    ``running`` holds sum_{i < start} phi_a(x_i) phi_b(x_i) and is updated in place.
    """
    h = tables.grid.h
    P = tables.phi[:, start:stop]
    dP = tables.deriv[:, start:stop]
    F = np.einsum("ai,bi->iab", P, P)
    C = running[None] + np.cumsum(F, axis=0)
    running += F.sum(axis=0)
    F0 = np.outer(tables.phi[:, 0], tables.phi[:, 0])
    G0 = np.outer(tables.deriv[:, 0], tables.phi[:, 0])
    G0 = G0 + G0.T
    G = np.einsum("ai,bi->iab", dP, P)
    G = G + np.swapaxes(G, 1, 2)
    return h * C - 0.5 * h * (F0[None] + F) - h * h / 12 * (G - G0[None])


def kernel_block(tables: ModelTables, x_index: int) -> np.ndarray:
    """Every ``D~(x, lam_a, lam_b)`` at one grid point via running sums."""
    n2 = tables.size
    return _kernel_chunk(tables, 0, x_index + 1, np.zeros((n2, n2), dtype=complex))[-1]


def kernel_D(tables: ModelTables, x_index: int, a: tuple, b: tuple) -> complex:
    """``D~(x, lam_a, lam_b) = int_0^x phi~(t, lam_a) phi~(t, lam_b) dt``.

    ``a`` and ``b`` are ``(n, i)`` pairs with ``n`` an active index.  The
    integral form is used everywhere, including the diagonal.
    """
    ia, ib = _position(tables, a), _position(tables, b)
    if x_index == 0:
        return 0j
    h = tables.grid.h
    pa, pb = tables.phi[ia, : x_index + 1], tables.phi[ib, : x_index + 1]
    deriv = tables.deriv
    f = pa * pb
    g = deriv[ia, : x_index + 1] * pb + pa * deriv[ib, : x_index + 1]
    trap = h * (f.sum() - 0.5 * (f[0] + f[-1]))
    return complex(trap - h * h / 12 * (g[-1] - g[0]))


def _position(tables, v):
    n, i = v
    p = np.flatnonzero(tables.indices == n)
    if p.size != 1 or i not in (0, 1):
        raise ValidationError(f"index {v} is not active")
    return 2 * int(p[0]) + i


@dataclass(frozen=True, eq=False)
class MainEquationSystem:
    """``(E + H(x)) psi = rhs`` at one grid point, in (n, i) block ordering."""

    x_index: int
    matrix: np.ndarray
    rhs: np.ndarray
    delta_n: np.ndarray


def _assemble(D, alpha, delta, chi, phi_x):
    """Vectorised assembly over a leading x-axis. Returns ``(A, rhs)``."""
    nx, n2, _ = D.shape
    Q = D * alpha[None, None, :]
    Q00, Q01 = Q[:, 0::2, 0::2], Q[:, 0::2, 1::2]
    Q10, Q11 = Q[:, 1::2, 0::2], Q[:, 1::2, 1::2]
    chi_n = chi[None, :, None]
    delta_k = delta[None, None, :]
    A = np.zeros((nx, n2, n2), dtype=complex)
    A[:, 0::2, 0::2] = chi_n * delta_k * (Q00 - Q10)
    A[:, 0::2, 1::2] = chi_n * ((Q00 - Q01) - (Q10 - Q11))
    A[:, 1::2, 0::2] = delta_k * Q10
    A[:, 1::2, 1::2] = Q10 - Q11
    diag = np.arange(n2)
    A[:, diag, diag] += 1.0
    # rows with delta_n = 0 pin psi_{n0} = 0
    dead = np.flatnonzero(delta == 0)
    A[:, 2 * dead, :] = 0.0
    A[:, 2 * dead, 2 * dead] = 1.0
    rhs = np.empty((nx, n2), dtype=complex)
    rhs[:, 0::2] = chi[None, :] * (phi_x[:, 0::2] - phi_x[:, 1::2])
    rhs[:, 1::2] = phi_x[:, 1::2]
    return A, rhs


def build_main_equation(tables: ModelTables, dist: DistanceSequences, x_index: int) -> MainEquationSystem:
    """Assemble ``E + H(x)`` and the right-hand side at grid index ``x_index``."""
    D = kernel_block(tables, x_index)[None]
    delta = dist.delta_n[tables.indices - 1]
    chi = dist.chi_n[tables.indices - 1]
    A, rhs = _assemble(D, tables.alpha, delta, chi, tables.phi[:, x_index][None, :])
    return MainEquationSystem(x_index, A[0], rhs[0], delta)


def kernel_matrix(tables: ModelTables, x_index: int) -> np.ndarray:
    """All ``D~(x, lam_a, lam_b)`` at one grid point from :func:`kernel_D`."""
    n2 = tables.size
    D = np.empty((n2, n2), dtype=complex)
    for a in range(n2):
        for b in range(n2):
            va = (int(tables.indices[a // 2]), a % 2)
            vb = (int(tables.indices[b // 2]), b % 2)
            D[a, b] = kernel_D(tables, x_index, va, vb)
    return D


def main_matrix_from_kernel(tables: ModelTables, dist: DistanceSequences, D: np.ndarray) -> np.ndarray:
    """``H(x)`` from given kernel values with the block formulas used by the solver."""
    delta = dist.delta_n[tables.indices - 1]
    chi = dist.chi_n[tables.indices - 1]
    phi0 = np.zeros((1, tables.size), dtype=complex)
    A, _ = _assemble(np.asarray(D)[None], tables.alpha, delta, chi, phi0)
    return A[0] - np.eye(tables.size)


def naive_main_matrix(tables: ModelTables, dist: DistanceSequences, x_index: int,
                      D: np.ndarray | None = None) -> np.ndarray:
    """``T Q(x) T^{-1}`` by explicit block products (an assembly oracle)."""
    n2 = tables.size
    if D is None:
        D = kernel_matrix(tables, x_index)
    Q = D * tables.alpha[None, :]
    Q[:, 1::2] *= -1
    T = np.zeros((n2, n2))
    Tinv = np.zeros((n2, n2))
    for p, n in enumerate(tables.indices):
        d, c = dist.delta_n[n - 1], dist.chi_n[n - 1]
        T[2 * p: 2 * p + 2, 2 * p: 2 * p + 2] = [[c, -c], [0, 1]]
        Tinv[2 * p: 2 * p + 2, 2 * p: 2 * p + 2] = [[d, 1], [0, 1]]
    return T @ Q @ Tinv


def solve_main_equation(system: MainEquationSystem, cond_limit=COND_LIMIT):
    """Dense LU solve; returns ``(psi, phi)`` where ``phi = T^{-1} psi``.

    Raises:
        DeltaTooLarge: infinity-norm condition number above ``cond_limit``.
    """
    psi, cond = _solve_batch(system.matrix[None], system.rhs[None])
    if cond[0] > cond_limit:
        raise DeltaTooLarge(
            f"condition number {cond[0]:.3g} at x index {system.x_index}",
            system.x_index, cond[0],
        )
    return psi[0], _recover_phi(psi, system.delta_n)[0]


def _solve_batch(A, rhs):
    n2 = A.shape[-1]
    if n2 == 0:
        return rhs.copy(), np.ones(A.shape[0])
    eye = np.broadcast_to(np.eye(n2, dtype=complex), A.shape)
    sol = np.linalg.solve(A, np.concatenate([rhs[..., None], eye], axis=-1))
    psi = sol[..., 0]
    inv = sol[..., 1:]
    cond = np.abs(A).sum(axis=-1).max(axis=-1) * np.abs(inv).sum(axis=-1).max(axis=-1)
    cond = np.where(np.all(np.isfinite(sol), axis=(-1, -2)), cond, np.inf)
    return psi, cond


def _recover_phi(psi, delta):
    phi = np.empty_like(psi)
    phi[..., 0::2] = delta * psi[..., 0::2] + psi[..., 1::2]
    phi[..., 1::2] = psi[..., 1::2]
    return phi


@dataclass
class MainEquationSolution:
    phi: np.ndarray          # (2K', m+1) recovered phi_{ni}(x)
    psi: np.ndarray
    condition: np.ndarray    # per grid point, infinity norm
    h_norm: np.ndarray       # per grid point, ||H(x)||_inf


def solve_all_points(tables: ModelTables, dist: DistanceSequences, chunk: int = 128,
                     workers: int = 1, cond_limit=COND_LIMIT) -> MainEquationSolution:
    """Solve the main equation at every grid point.

    Chunks of grid points are independent once their running kernel sums are
    known, so they may be dispatched to a thread pool.
    """
    m1 = tables.grid.point_count
    n2 = tables.size
    delta = dist.delta_n[tables.indices - 1]
    chi = dist.chi_n[tables.indices - 1]
    bounds = [(s, min(s + chunk, m1)) for s in range(0, m1, chunk)]
    # prefix sums of the outer products at each chunk start
    starts = []
    running = np.zeros((n2, n2), dtype=complex)
    for s, e in bounds:
        starts.append(running.copy())
        P = tables.phi[:, s:e]
        running += P @ P.T
    phi = np.empty((n2, m1), dtype=complex)
    psi = np.empty((n2, m1), dtype=complex)
    cond = np.empty(m1)
    hnorm = np.empty(m1)

    def work(b):
        (s, e), run = b
        D = _kernel_chunk(tables, s, e, run.copy())
        A, rhs = _assemble(D, tables.alpha, delta, chi, tables.phi[:, s:e].T)
        p, c = _solve_batch(A, rhs)
        H = A - np.eye(n2)[None]
        psi[:, s:e] = p.T
        phi[:, s:e] = _recover_phi(p, delta).T
        cond[s:e] = c
        hnorm[s:e] = np.abs(H).sum(axis=-1).max(axis=-1) if n2 else 0.0

    jobs = list(zip(bounds, starts))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, jobs))
    else:
        for j in jobs:
            work(j)
    worst = int(np.argmax(cond))
    if not np.isfinite(cond[worst]) or cond[worst] > cond_limit:
        raise DeltaTooLarge(
            f"main equation singular at x index {worst} (condition {cond[worst]:.3g})",
            worst, float(cond[worst]),
        )
    return MainEquationSolution(phi, psi, cond, hnorm)


# -- reconstruction ------------------------------------------------------------


def _signed_alpha(tables):
    s = tables.alpha.copy()
    s[1::2] *= -1
    return s


def reconstruct_sigma(tables: ModelTables, phi: np.ndarray) -> SampledFunction:
    """``sigma^K = sigma~ - 2 sum_k sum_j (-1)^j alpha_kj (phi~_kj phi_kj - 1/2)``."""
    sa = _signed_alpha(tables)
    terms = sa[:, None] * (tables.phi * phi - 0.5)
    return SampledFunction(tables.grid, tables.model.sigma.values - 2 * terms.sum(axis=0))


def product_Pi(target: SpectralData, model: SpectralData, K: int, lam, prefix: int = 0,
               tau_pole=TAU_POLE):
    """``Pi_K(lam) = prod_{k=N+1}^{K} (lam - lam_k) / (lam - lam~_k)``."""
    lam_arr = np.asarray(lam, dtype=complex)
    l0 = target.lam[prefix:K]
    l1 = model.lam[prefix:K]
    flat = np.atleast_1d(lam_arr).ravel()
    if l1.size and np.min(np.abs(flat[:, None] - l1[None, :])) < tau_pole:
        raise NearPole("lambda too close to a model eigenvalue")
    out = np.prod((flat[:, None] - l0[None, :]) / (flat[:, None] - l1[None, :]), axis=1)
    out = out.reshape(lam_arr.shape)
    return out[()] if out.ndim == 0 else out


def _pi_from_tables(tables, lam):
    l0, l1 = tables.lam[0::2], tables.lam[1::2]
    return np.prod((lam[:, None] - l0[None, :]) / (lam[:, None] - l1[None, :]), axis=1)


def sample_points(tables: ModelTables, M1: int, min_gap: float = 1.0) -> np.ndarray:
    """``lam_s = i (1 + s) xi`` for ``s = 0..M1+4``, ``xi >= 1`` keeping clear of poles."""
    s = np.arange(M1 + 5)
    xi = 1.0
    while True:
        pts = 1j * (1 + s) * xi
        if tables.lam.size == 0 or np.min(np.abs(pts[:, None] - tables.lam[None, :])) >= min_gap:
            return pts
        xi *= 1.5


def extract_polynomial(points, values, degree_cap: int, monic: bool = False, tau=TAU_POLY):
    """Least-squares polynomial (ascending coefficients) through the samples.

    Returns ``(coeffs, residual)`` where ``residual`` is the largest sample
    misfit.  With ``monic`` the coefficient of ``lam**degree_cap`` is fixed to 1.

    Raises:
        ExtractionResidual: misfit above ``tau * (1 + max|values|)``.
    """
    points = np.asarray(points, dtype=complex)
    values = np.asarray(values, dtype=complex)
    if points.size < degree_cap + 3:
        raise ValidationError(f"need at least {degree_cap + 3} samples, got {points.size}")
    if np.unique(points).size != points.size:
        raise ValidationError("sample points must be distinct")
    scale = np.max(np.abs(points))
    z = points / scale
    if monic:
        rhs = values - points**degree_cap
        deg = degree_cap - 1
    else:
        rhs = values
        deg = degree_cap
    if deg >= 0:
        V = np.vander(z, deg + 1, increasing=True)
        c, *_ = np.linalg.lstsq(V, rhs, rcond=None)
        c = c / scale ** np.arange(deg + 1)
    else:
        c = np.zeros(0, dtype=complex)
    coeffs = np.concatenate([c, [1.0]]) if monic else c
    coeffs = np.concatenate([coeffs, np.zeros(degree_cap + 1 - coeffs.size)])
    resid = float(np.max(np.abs(poly_eval(coeffs, points) - values)))
    if resid > tau * (1 + np.max(np.abs(values))):
        raise ExtractionResidual(
            f"samples are not a polynomial of degree <= {degree_cap} (residual {resid:.3g})",
            resid,
        )
    return coeffs, resid


def _boundary_factor(tables, lam):
    """``r~1(lam) phi~^[1]_kj(pi) + r~2(lam) phi~_kj(pi)``, shape (len(lam), 2K')."""
    p = tables.model.polys
    return p.r1_at(lam)[:, None] * tables.phi_q[None, :, -1] + p.r2_at(lam)[:, None] * tables.phi[None, :, -1]


def r1_samples(tables: ModelTables, phi_pi: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """``Pi_K(lam) (r~1(lam) - S_K(lam))`` at the given points."""
    sa = _signed_alpha(tables)
    S = np.sum(sa * phi_pi * _boundary_factor(tables, lam) / (lam[:, None] - tables.lam[None, :]), axis=1)
    return _pi_from_tables(tables, lam) * (tables.model.polys.r1_at(lam) - S)


def r2_samples(tables: ModelTables, phi_pi: np.ndarray, phiq_pi: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """``Pi_K(lam) (r~2(lam) + U_K(lam))`` at the given points."""
    sa = _signed_alpha(tables)
    p = tables.model.polys
    const = np.sum(sa * (tables.phi[:, -1] * phi_pi - 1))
    frac = np.sum(sa * phiq_pi * _boundary_factor(tables, lam) / (lam[:, None] - tables.lam[None, :]), axis=1)
    U = -p.r1_at(lam) * const + frac
    return _pi_from_tables(tables, lam) * (p.r2_at(lam) + U)


def reconstruct_r1(tables: ModelTables, phi_pi: np.ndarray, tau=TAU_POLY):
    M1 = tables.model.M1
    pts = sample_points(tables, M1)
    return extract_polynomial(pts, r1_samples(tables, phi_pi, pts), M1, monic=True, tau=tau)


def quasi_derivatives_at_pi(sigma: SampledFunction, lam: np.ndarray):
    """``phi(pi)`` and ``phi^[1](pi)`` of the equation with potential ``sigma``."""
    if lam.size == 0:
        return np.zeros(0, complex), np.zeros(0, complex)
    return propagate(sigma.values, sigma.grid.h, lam, 1.0, 0.0)


def reconstruct_r2(tables: ModelTables, sigma_K: SampledFunction, phi_pi: np.ndarray, tau=TAU_POLY):
    """Recover ``r2`` with quasi-derivatives from a re-solve on ``sigma_K``.

    Returns ``(coeffs, residual)``.
    """
    M1 = tables.model.M1
    _, phiq = quasi_derivatives_at_pi(sigma_K, tables.lam)
    pts = sample_points(tables, M1)
    return extract_polynomial(pts, r2_samples(tables, phi_pi, phiq, pts), M1, monic=False, tau=tau)


@dataclass
class ReconstructionResult:
    sigma: SampledFunction
    polys: PolynomialPair
    phi_recovered: np.ndarray
    tables: ModelTables
    distances: DistanceSequences
    model_data: SpectralData
    K: int
    prefix: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def problem(self) -> BoundaryProblem:
        return BoundaryProblem(self.sigma, self.polys)


def inverse_solve(model: BoundaryProblem, target: SpectralData, K: int = DEFAULT_K,
                  skip_N: int = 0, model_data: SpectralData | None = None,
                  workers: int = 1, tau_poly=TAU_POLY, cond_limit=COND_LIMIT) -> ReconstructionResult:
    """Recover ``(sigma, r1, r2)`` from the first ``K`` target entries.

    Indices beyond ``K`` are completed by model data and so drop out
    exactly.  With ``skip_N > 0`` the first N entries are required to match
    the model exactly and every sum and product starts at ``N + 1``.

    Raises:
        CountMismatch: fewer than ``K`` target entries.
        PrefixMismatch: prefix entries differ from the model.
        DeltaTooLarge: the main equation is singular at some grid point.
        ExtractionResidual: a boundary polynomial could not be extracted.
    """
    if target.count < K:
        raise CountMismatch(f"need {K} target entries, got {target.count}")
    if not 0 <= skip_N <= K:
        raise ValidationError("skip_N must lie in 0..K")
    if target.alpha is None:
        raise ValidationError("target data lack weight numbers")
    if model_data is None or model_data.count < K:
        model_data = spectral_data(model, K, allow_multiple=skip_N > 0)
    tgt = target.truncated(K)
    mdl = model_data.truncated(K)
    dist = distances(tgt, mdl, prefix=skip_N)
    tables = ModelTables.build(model, tgt, mdl, K, prefix=skip_N)
    sol = solve_all_points(tables, dist, workers=workers, cond_limit=cond_limit)
    sigma_K = reconstruct_sigma(tables, sol.phi)
    phi_pi = sol.phi[:, -1]
    r1, res1 = reconstruct_r1(tables, phi_pi, tau=tau_poly)
    r2, res2 = reconstruct_r2(tables, sigma_K, phi_pi, tau=tau_poly)
    polys = make_polynomial_pair(r1, r2)
    diag = {
        "K": K,
        "skip_N": skip_N,
        "delta": dist.delta,
        "condition_max": float(sol.condition.max()),
        "h_norm_max": float(sol.h_norm.max()),
        "r1_residual": res1,
        "r2_residual": res2,
    }
    log.debug("inverse_solve diagnostics: %s", diag)
    return ReconstructionResult(sigma_K, polys, sol.phi, tables, dist, model_data, K, skip_N, diag)


__all__ = [
    "DistanceSequences", "ModelTables", "MainEquationSystem", "ReconstructionResult",
    "distances", "kernel_D", "kernel_block", "kernel_matrix", "build_main_equation", "naive_main_matrix",
    "main_matrix_from_kernel",
    "solve_main_equation", "solve_all_points", "reconstruct_sigma", "product_Pi",
    "reconstruct_r1", "reconstruct_r2", "extract_polynomial", "inverse_solve",
    "principal_sqrt",
]
