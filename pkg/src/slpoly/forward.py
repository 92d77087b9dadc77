"""Direct problem: solution tables, characteristic function, spectral data.

The equation is integrated in quasi-derivative form

    y' = sigma*y + y1,      y1' = -sigma*y1 - (sigma**2 + lam)*y,

on the shared grid, sigma being linear between nodes.  The default stepper is
the fourth-order two-point Gauss Magnus method, whose error does not grow with
|lam| the way a polynomial Runge-Kutta error does; classical RK4 is kept as an
alternative.  All propagators are vectorised over an array of spectral
parameters and can also carry the lambda-derivative of the solution, which is
the exact derivative of the discrete scheme.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    BoundaryProblem,
    SampledFunction,
    SpectralData,
    principal_sqrt,
    trapezoid,
)
from .errors import (
    MissedRoot,
    MultipleEigenvalue,
    NearPole,
    Overflow,
    VanishingR1,
    ZeroAlphaDenominator,
)

OVERFLOW_LIMIT = 1e150
TAU_SIMPLE = 1e-8
TAU_POLE = 1e-6
NEWTON_MAXIT = 60


@dataclass(frozen=True, eq=False)
class SolutionTable:
    """A solution ``y`` and its quasi-derivative ``y' - sigma*y`` on the grid."""

    y: SampledFunction
    y_quasi: SampledFunction
    lam: complex


def propagate(sigma_vals, h, lam, y0, z0, anchor="left", store=False, deriv=False,
              scheme="magnus4"):
    """Integrate the quasi-derivative system for many spectral parameters.

    Args:
        sigma_vals: sigma on the grid nodes, shape ``(m+1,)``; linear in between.
        h: grid spacing.
        lam: spectral parameters, any shape (flattened internally).
        y0, z0: initial values of ``y`` and ``y^[1]`` at the anchor, broadcast
            against ``lam``.  Their lambda-derivatives are taken as zero unless
            ``deriv`` is a tuple ``(dy0, dz0)``.
        anchor: ``"left"`` starts at 0, ``"right"`` starts at pi and runs backward.
        store: keep the full tables (shape ``(n_lam, m+1)``) instead of only
            the values at the far end.
        deriv: also integrate the lambda-derivative of the solution.
        scheme: ``"magnus4"`` (default) or ``"rk4"``.

    Returns:
        ``(y, z)`` or ``(y, z, dy, dz)``; each either end values or tables.

    Raises:
        Overflow: a magnitude exceeded 1e150.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=complex)).ravel()
    n = lam.size
    s = np.asarray(sigma_vals, dtype=complex)
    m = s.size - 1
    if anchor == "left":
        order, step = s, h
    elif anchor == "right":
        order, step = s[::-1], -h
    else:
        raise ValueError(f"anchor must be 'left' or 'right', not {anchor!r}")
    y = np.broadcast_to(np.asarray(y0, dtype=complex), (n,)).copy()
    z = np.broadcast_to(np.asarray(z0, dtype=complex), (n,)).copy()
    with_d = deriv is not False and deriv is not None
    if with_d:
        if isinstance(deriv, tuple):
            u = np.broadcast_to(np.asarray(deriv[0], dtype=complex), (n,)).copy()
            v = np.broadcast_to(np.asarray(deriv[1], dtype=complex), (n,)).copy()
        else:
            u = np.zeros(n, dtype=complex)
            v = np.zeros(n, dtype=complex)
    else:
        u = v = None
    tables = None
    if store:
        tables = [np.empty((n, m + 1), dtype=complex) for _ in range(4 if with_d else 2)]
        for t, val in zip(tables, (y, z, u, v)):
            t[:, 0] = val
    if scheme == "magnus4":
        stepper = _magnus_steps(order, step, lam, with_d)
    elif scheme == "rk4":
        stepper = _rk4_steps(order, step, lam, with_d)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    for j in range(m):
        y, z, u, v = stepper(j, y, z, u, v)
        if store:
            for t, val in zip(tables, (y, z, u, v)):
                t[:, j + 1] = val
        if j % 256 == 255 and np.max(np.abs(y)) > OVERFLOW_LIMIT:
            raise Overflow("solution magnitude exceeded 1e150; lambda too large for the grid")
    if store:
        out = tuple(tables)
        if anchor == "right":
            out = tuple(a[:, ::-1] for a in out)
    else:
        out = (y, z, u, v) if with_d else (y, z)
    if not all(np.all(np.isfinite(a)) for a in out) or np.max(np.abs(out[0])) > OVERFLOW_LIMIT:
        raise Overflow("solution magnitude exceeded 1e150; lambda too large for the grid")
    return out


_G = np.sqrt(3) / 6


def _magnus_steps(order, k, lam, with_d):
    """Two-point Gauss Magnus step; exact when sigma is constant on a cell."""
    g1 = order[:-1] + (0.5 - _G) * (order[1:] - order[:-1])
    g2 = order[:-1] + (0.5 + _G) * (order[1:] - order[:-1])
    c = np.sqrt(3) * k * k / 12
    a = 0.5 * k * (g1 + g2) + c * (g2 * g2 - g1 * g1)
    b = k + 2 * c * (g2 - g1)
    cc0 = -0.5 * k * (g1 * g1 + g2 * g2) - 2 * c * (g2 - g1) * g1 * g2
    cc1 = -k + 2 * c * (g2 - g1)

    def step(j, y, z, u, v):
        aj, bj = a[j], b[j]
        ccj = cc0[j] + cc1[j] * lam
        w = aj * aj + bj * ccj
        r = np.sqrt(w)
        small = np.abs(w) < 1e-6
        C = np.cosh(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            S = np.where(small, 1 + w / 6 + w * w / 120, np.sinh(r) / np.where(small, 1, r))
        e11 = C + S * aj
        e22 = C - S * aj
        e12 = S * bj
        e21 = S * ccj
        yn = e11 * y + e12 * z
        zn = e21 * y + e22 * z
        if u is None:
            return yn, zn, None, None
        dw = bj * cc1[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            dS_dw = np.where(small, 1 / 6 + w / 60 + w * w / 2520, (C - S) / (2 * np.where(small, 1, w)))
        dC = 0.5 * S * dw
        dS = dS_dw * dw
        un = e11 * u + e12 * v + (dC + dS * aj) * y + dS * bj * z
        vn = e21 * u + e22 * v + (dS * ccj + S * cc1[j]) * y + (dC - dS * aj) * z
        return yn, zn, un, vn

    return step


def _rk4_steps(order, step, lam, with_d):
    """Classical RK4; sigma at half steps is the mean of the neighbouring nodes."""
    half = 0.5 * (order[1:] + order[:-1])
    hs = step / 2

    def rhs(sv, q, y, z):
        return sv * y + z, -sv * z - q * y

    def one(j, y, z, u, v):
        s0, s5, s1 = order[j], half[j], order[j + 1]
        q0, q5, q1 = s0 * s0 + lam, s5 * s5 + lam, s1 * s1 + lam
        k1 = rhs(s0, q0, y, z)
        ya, za = y + hs * k1[0], z + hs * k1[1]
        k2 = rhs(s5, q5, ya, za)
        yb, zb = y + hs * k2[0], z + hs * k2[1]
        k3 = rhs(s5, q5, yb, zb)
        yc, zc = y + step * k3[0], z + step * k3[1]
        k4 = rhs(s1, q1, yc, zc)
        yn = y + step / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        zn = z + step / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if u is None:
            return yn, zn, None, None
        l1 = rhs(s0, q0, u, v)
        l1 = (l1[0], l1[1] - y)
        ua, va = u + hs * l1[0], v + hs * l1[1]
        l2 = rhs(s5, q5, ua, va)
        l2 = (l2[0], l2[1] - ya)
        ub, vb = u + hs * l2[0], v + hs * l2[1]
        l3 = rhs(s5, q5, ub, vb)
        l3 = (l3[0], l3[1] - yb)
        uc, vc = u + step * l3[0], v + step * l3[1]
        l4 = rhs(s1, q1, uc, vc)
        l4 = (l4[0], l4[1] - yc)
        un = u + step / 6 * (l1[0] + 2 * l2[0] + 2 * l3[0] + l4[0])
        vn = v + step / 6 * (l1[1] + 2 * l2[1] + 2 * l3[1] + l4[1])
        return yn, zn, un, vn

    return one


def solve_ivp(sigma: SampledFunction, lam: complex, anchor: str, y0: complex, yq0: complex) -> SolutionTable:
    """Solve the equation with ``(y, y^[1]) = (y0, yq0)`` at the anchored endpoint."""
    Y, Z = propagate(sigma.values, sigma.grid.h, lam, y0, yq0, anchor=anchor, store=True)
    return SolutionTable(SampledFunction(sigma.grid, Y[0]), SampledFunction(sigma.grid, Z[0]), complex(lam))


def phi_table(problem: BoundaryProblem, lam: complex) -> SolutionTable:
    return solve_ivp(problem.sigma, lam, "left", 1.0, 0.0)


def psi_table(problem: BoundaryProblem, lam: complex) -> SolutionTable:
    p = problem.polys
    return solve_ivp(problem.sigma, lam, "right", p.r1_at(lam), -p.r2_at(lam))


def phi_tables(problem: BoundaryProblem, lam, deriv=False):
    """Vectorised ``phi`` tables, shape ``(len(lam), m+1)``."""
    return propagate(problem.sigma.values, problem.grid.h, lam, 1.0, 0.0, store=True, deriv=deriv)


def phi_at_pi(problem: BoundaryProblem, lam, deriv=False):
    """``phi(pi, lam)`` and ``phi^[1](pi, lam)`` (and lambda-derivatives)."""
    return propagate(problem.sigma.values, problem.grid.h, lam, 1.0, 0.0, deriv=deriv)


def characteristic(problem: BoundaryProblem, lam, with_derivative=False):
    """``Delta(lam) = r1(lam) phi^[1](pi, lam) + r2(lam) phi(pi, lam)``.

    Accepts scalars or arrays.  With ``with_derivative`` returns
    ``(Delta, dDelta/dlam)``.
    """
    lam_arr = np.asarray(lam, dtype=complex)
    flat = np.atleast_1d(lam_arr).ravel()
    p = problem.polys
    r1, r2 = p.r1_at(flat), p.r2_at(flat)
    if with_derivative:
        y, z, u, v = phi_at_pi(problem, flat, deriv=True)
        d = r1 * z + r2 * y
        dd = p.dr1_at(flat) * z + r1 * v + p.dr2_at(flat) * y + r2 * u
        return _shape_like(d, lam_arr), _shape_like(dd, lam_arr)
    y, z = phi_at_pi(problem, flat)
    return _shape_like(r1 * z + r2 * y, lam_arr)


def characteristic_backward(problem: BoundaryProblem, lam):
    """The alternative form ``-psi^[1](0, lam)``."""
    lam_arr = np.asarray(lam, dtype=complex)
    flat = np.atleast_1d(lam_arr).ravel()
    p = problem.polys
    _, z = propagate(problem.sigma.values, problem.grid.h, flat, p.r1_at(flat), -p.r2_at(flat), anchor="right")
    return _shape_like(-z, lam_arr)


def _shape_like(a, like):
    a = np.asarray(a).reshape(np.shape(like))
    return a[()] if a.ndim == 0 else a


def weyl_function(problem: BoundaryProblem, lam, eigenvalues=None, tau_pole=TAU_POLE):
    """``M(lam) = -psi(0, lam) / Delta(lam)``.

    Raises:
        NearPole: ``lam`` is within ``tau_pole`` of one of ``eigenvalues`` or
            the characteristic function vanishes numerically.
    """
    lam_arr = np.asarray(lam, dtype=complex)
    flat = np.atleast_1d(lam_arr).ravel()
    if eigenvalues is not None and len(eigenvalues):
        gap = np.min(np.abs(flat[:, None] - np.asarray(eigenvalues)[None, :]))
        if gap < tau_pole:
            raise NearPole(f"lambda within {gap:.1e} of an eigenvalue")
    p = problem.polys
    y, z = propagate(problem.sigma.values, problem.grid.h, flat, p.r1_at(flat), -p.r2_at(flat), anchor="right")
    delta = -z
    if np.any(np.abs(delta) <= 1e-14 * np.maximum(1.0, np.abs(y))):
        raise NearPole("characteristic function vanishes at lambda")
    return _shape_like(-y / delta, lam_arr)


# -- eigenvalues ---------------------------------------------------------------


def _gauss_rectangle(re_lo, re_hi, im_lo, im_hi, nodes):
    """Nodes and weights (dz) of a counter-clockwise rectangle, Gauss-Legendre per side."""
    t, w = np.polynomial.legendre.leggauss(nodes)
    t = 0.5 * (t + 1)
    w = 0.5 * w
    corners = [
        complex(re_lo, im_lo), complex(re_hi, im_lo),
        complex(re_hi, im_hi), complex(re_lo, im_hi),
    ]
    zs, dzs = [], []
    for a, b in zip(corners, corners[1:] + corners[:1]):
        zs.append(a + (b - a) * t)
        dzs.append((b - a) * w)
    return np.concatenate(zs), np.concatenate(dzs)


def _disk_moments(problem, radius, nodes, pmax):
    """Power sums ``sum_k (lam_k / radius)**p`` of the zeros inside ``|lam| = radius``."""
    theta = 2 * np.pi * np.arange(nodes) / nodes
    w = np.exp(1j * theta)
    d, dd = characteristic(problem, radius * w, with_derivative=True)
    f = dd / d * radius * w / nodes
    return np.array([np.sum(f * w**p) for p in range(pmax + 1)]), np.min(np.abs(d))


def _newton_lambda(problem, lam, maxit=NEWTON_MAXIT, mult=None):
    lam = np.array(lam, dtype=complex)
    mult = np.ones(lam.size) if mult is None else np.asarray(mult, dtype=float)
    active = np.ones(lam.size, dtype=bool)
    for _ in range(maxit):
        if not active.any():
            break
        d, dd = characteristic(problem, lam[active], with_derivative=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = mult[active] * d / dd
        step = np.where(np.isfinite(step), step, 0)
        lam[active] -= step
        done = np.abs(step) <= 1e-14 * np.maximum(1.0, np.abs(lam[active]))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return lam


def _newton_rho(problem, rho, maxit=NEWTON_MAXIT):
    rho = np.array(rho, dtype=complex)
    active = np.ones(rho.size, dtype=bool)
    for _ in range(maxit):
        if not active.any():
            break
        d, dd = characteristic(problem, rho[active] ** 2, with_derivative=True)
        step = d / (2 * rho[active] * dd)
        rho[active] -= step
        done = np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(rho[active]))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return rho


def _roots_from_power_sums(s):
    """Monic polynomial (descending coefficients) from power sums via Newton's identities."""
    n = len(s) - 1
    e = np.zeros(n + 1, dtype=complex)
    e[0] = 1
    for k in range(1, n + 1):
        acc = 0
        for i in range(1, k + 1):
            acc += (-1) ** (i - 1) * e[k - i] * s[i]
        e[k] = acc / k
    coeffs = np.array([(-1) ** k * e[k] for k in range(n + 1)])
    return np.roots(coeffs) if n else np.zeros(0, dtype=complex)


def _low_eigenvalues(problem, max_extra=12, nodes=512):
    """Zeros inside the smallest disk ``|rho| < j - M1 - 1/2`` holding exactly j zeros."""
    M1 = problem.M1
    for j in range(M1 + 2, M1 + 2 + max_extra):
        R = (j - M1 - 0.5) ** 2
        s, dmin = _disk_moments(problem, R, nodes, j)
        count = s[0].real
        if abs(count - round(count)) > 1e-3 or abs(s[0].imag) > 1e-3:
            s, dmin = _disk_moments(problem, R, 4 * nodes, j)
            count = s[0].real
        if round(count) == j:
            roots = _roots_from_power_sums(s[: j + 1]) * R
            return j, np.sort_complex(roots)
    raise MissedRoot("argument-principle count in the low disk never matched the asymptotic numbering")


def _cluster(lam, tol):
    """Group indices of numerically coincident roots."""
    order = np.argsort(lam.real)
    groups, used = [], np.zeros(lam.size, dtype=bool)
    for i in order:
        if used[i]:
            continue
        near = np.flatnonzero((np.abs(lam - lam[i]) <= tol * max(1.0, abs(lam[i]))) & ~used)
        used[near] = True
        groups.append(near)
    return groups


def _sort_key(rho, ndigits=9):
    return (round(rho.real, ndigits), round(rho.imag, ndigits))


def find_eigenvalues(problem: BoundaryProblem, n_max: int, allow_multiple=False,
                     verify=True, box_height=1.0, box_nodes=24) -> SpectralData:
    """First ``n_max`` eigenvalues numbered by ``rho_n ~ n - M1 - 1``.

    The low part of the spectrum is located with contour moments of
    ``Delta'/Delta`` on the smallest disk whose zero count matches the
    asymptotic numbering; each higher eigenvalue is isolated in its own
    rectangle ``n - M1 - 3/2 < Re rho < n - M1 - 1/2`` of the rho-plane.
    Every root is polished by Newton's method using the exact derivative of
    the discrete characteristic function.

    Raises:
        MultipleEigenvalue: a multiple root was found and ``allow_multiple``
            is false.
        MissedRoot: a verification contour count disagrees with the roots
            found.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    M1 = problem.M1
    j, seeds = _low_eigenvalues(problem)
    low = _newton_lambda(problem, seeds)
    groups = _cluster(low, 1e-5)
    mult = np.ones(low.size, dtype=int)
    for g in groups:
        if g.size > 1:
            if not allow_multiple:
                raise MultipleEigenvalue(
                    f"eigenvalue {low[g[0]]:.6g} has multiplicity {g.size}"
                )
            centre = _newton_lambda(problem, [np.mean(low[g])], mult=[g.size])[0]
            low[g] = centre
            mult[g] = g.size
    low_rho = principal_sqrt(low)
    order = sorted(range(low.size), key=lambda i: _sort_key(low_rho[i]))
    low, low_rho, mult = low[order], low_rho[order], mult[order]
    _, dd = characteristic(problem, low, with_derivative=True)
    if np.any(np.abs(dd[mult == 1]) <= TAU_SIMPLE):
        raise MultipleEigenvalue("derivative of Delta vanishes at a low eigenvalue")
    rhos = list(low_rho)
    mults = list(mult)
    if n_max > j:
        idx = np.arange(j + 1, n_max + 1)
        centres = idx - M1 - 1.0
        nodes_all, w_all = [], []
        for c in centres:
            z, dz = _gauss_rectangle(c - 0.5, c + 0.5, -box_height, box_height, box_nodes)
            nodes_all.append(z)
            w_all.append(dz)
        z = np.stack(nodes_all)
        dz = np.stack(w_all)
        d, dd = characteristic(problem, z**2, with_derivative=True)
        logder = 2 * z * dd / d
        s0 = np.sum(logder * dz, axis=1) / (2j * np.pi)
        s1 = np.sum(z * logder * dz, axis=1) / (2j * np.pi)
        counts = np.round(s0.real).astype(int)
        if verify and np.any((counts != 1) | (np.abs(s0 - 1) > 1e-2)):
            bad = idx[counts != 1]
            raise MissedRoot(f"expected exactly one eigenvalue per box, indices {bad.tolist()}")
        seeds_rho = np.where(counts == 1, s1 / np.where(s0 == 0, 1, s0), centres)
        tail = _newton_rho(problem, seeds_rho)
        tail = np.where(tail.real < 0, -tail, tail)
        if verify and np.any(np.abs(tail.real - centres) > 0.5 + 1e-9):
            raise MissedRoot("Newton left its isolation box")
        _, dd = characteristic(problem, tail**2, with_derivative=True)
        if np.any(np.abs(dd) <= TAU_SIMPLE):
            raise MultipleEigenvalue("derivative of Delta vanishes at a tail eigenvalue")
        rhos.extend(tail)
        mults.extend([1] * tail.size)
    rho = np.array(rhos[:n_max], dtype=complex)
    mult = np.array(mults[:n_max], dtype=int)
    return SpectralData(rho=rho, lam=rho**2, M1=M1, multiplicities=mult, source="forward")


# -- weight numbers ------------------------------------------------------------


def _corrected_square_integral(phi, phi_q, sigma, h):
    """Trapezoid of phi**2 with the Euler-Maclaurin end correction (4th order)."""
    dphi = phi_q + sigma * phi
    f1 = 2 * phi * dphi
    return trapezoid(phi**2, h) - h * h / 12 * (f1[..., -1] - f1[..., 0])


def weight_numbers(problem: BoundaryProblem, data: SpectralData, r1_tol=1e-10) -> SpectralData:
    """Fill ``alpha_n`` from

        1/alpha_n = int_0^pi phi^2 dx - (phi(pi)/r1)(r1' phi^[1](pi) + r2' phi(pi)),

    evaluated at each simple eigenvalue.  When ``r1(lambda_n)`` vanishes the
    eigenfunction ratio is taken as ``-r2 / phi^[1](pi)`` instead.  Entries of
    multiple eigenvalues receive the principal-part coefficients of the Weyl
    function computed by contour integration.

    Raises:
        VanishingR1: both ``r1(lambda_n)`` and ``phi^[1](pi, lambda_n)`` vanish.
        ZeroAlphaDenominator: ``1/alpha_n`` evaluates to zero.
    """
    lam = data.lam
    mult = data.multiplicities
    alpha = np.zeros(data.count, dtype=complex)
    simple = np.flatnonzero(mult == 1)
    if simple.size:
        ls = lam[simple]
        Y, Z = phi_tables(problem, ls)
        sig = problem.sigma.values
        integral = _corrected_square_integral(Y, Z, sig, problem.grid.h)
        p = problem.polys
        r1, r2 = p.r1_at(ls), p.r2_at(ls)
        phi_pi, phiq_pi = Y[:, -1], Z[:, -1]
        beta = np.empty(ls.size, dtype=complex)
        use_r1 = np.abs(r1) > r1_tol * np.maximum(1, np.abs(r2))
        with np.errstate(divide="ignore", invalid="ignore"):
            beta[use_r1] = r1[use_r1] / phi_pi[use_r1]
            alt = ~use_r1
            if np.any(alt & (np.abs(phiq_pi) <= r1_tol)):
                raise VanishingR1("r1(lambda_n) and phi^[1](pi, lambda_n) both vanish")
            beta[alt] = -r2[alt] / phiq_pi[alt]
        inv = integral - (p.dr1_at(ls) * phiq_pi + p.dr2_at(ls) * phi_pi) / beta
        if np.any(np.abs(inv) < 1e-300) or not np.all(np.isfinite(inv)):
            raise ZeroAlphaDenominator("1/alpha_n vanished")
        alpha[simple] = 1 / inv
    n = 0
    while n < data.count:
        k = int(mult[n])
        if k > 1:
            gap = _gap(lam, n, k)
            coeffs = principal_part(problem, lam[n], k, radius=min(gap, 1.0) / 2)
            top = min(n + k, data.count)
            alpha[n:top] = coeffs[: top - n]
        n += max(k, 1)
    return data.with_alpha(alpha)


def _gap(lam, n, k):
    others = np.delete(lam, np.arange(n, min(n + k, lam.size)))
    return float(np.min(np.abs(others - lam[n]))) if others.size else 1.0


def principal_part(problem: BoundaryProblem, centre, order, radius=0.25, nodes=128):
    """Coefficients ``a_j`` of ``(lam - centre)**-(j+1)`` in the Weyl function, ``j < order``."""
    theta = 2 * np.pi * np.arange(nodes) / nodes
    w = radius * np.exp(1j * theta)
    M = weyl_function(problem, centre + w)
    return np.array([np.mean(M * w ** (j + 1)) for j in range(order)])


def spectral_data(problem: BoundaryProblem, n_max: int, allow_multiple=False) -> SpectralData:
    """Eigenvalues and weight numbers of ``problem`` in one call."""
    data = find_eigenvalues(problem, n_max, allow_multiple=allow_multiple)
    return weight_numbers(problem, data)
