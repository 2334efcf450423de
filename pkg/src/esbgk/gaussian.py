"""Anisotropic Gaussian targets on the discrete velocity grid.

Two modes are provided.  ``analytic_params`` takes ``(rho, u, Tnu)`` straight
from the moments.  ``match_discrete_moments`` instead solves for the ten
Gaussian parameters whose *grid-quadrature* moments of order 0, 1 and 2
equal prescribed targets, which restores exact discrete conservation in the
relaxation step.

Matching works in per-cell scaled coordinates ``xi = (v - u0) / s`` with
``u0`` the target bulk velocity and ``s = sqrt(trace(Sigma) / 3)``, and in
natural parameters

    g = exp(a + b . xi - xi^T P xi / 2)

For this family the Jacobian of the moments is a matrix of fourth-order
grid moments of ``g`` and is assembled exactly from them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateStateError
from .grid import PhaseGrid, power_tables, velocity_moments
from .moments import MacroState

UNDERFLOW = 1e-300
# cells within tol but above this take one extra Newton step
POLISH = 1e-15
LOG_2PI = math.log(2.0 * math.pi)

# exponent triples of (1, xi_i, xi_i^2, xi_i xi_j)
_BASIS = (
    (0, 0, 0),
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (2, 0, 0), (0, 2, 0), (0, 0, 2),
    (1, 1, 0), (1, 0, 1), (0, 1, 1),
)
# derivative of the exponent with respect to each natural parameter
_DCOEF = np.array([1.0, 1.0, 1.0, 1.0, -0.5, -0.5, -0.5, -1.0, -1.0, -1.0])
_JAC_IDX = np.array([[tuple(np.add(p, q)) for q in _BASIS] for p in _BASIS])
_MOM_IDX = np.array(_BASIS)


@dataclass
class GaussianParams:
    rho_t: float
    u_t: np.ndarray
    Sigma_t: np.ndarray
    chol: np.ndarray = field(default=None)
    matched: bool = False
    residual: float = float("nan")
    iterations: int = 0
    flag: str = ""

    def __post_init__(self):
        self.u_t = np.asarray(self.u_t, dtype=float)
        self.Sigma_t = np.asarray(self.Sigma_t, dtype=float)
        if self.chol is None:
            self.chol = cholesky_or_raise(self.Sigma_t)


def cholesky_or_raise(S: np.ndarray, cell=None) -> np.ndarray:
    try:
        return np.linalg.cholesky(0.5 * (S + S.T))
    except np.linalg.LinAlgError:
        raise DegenerateStateError("temperature tensor is not positive definite", cell=cell) from None


def analytic_params(m: MacroState, cell=None) -> GaussianParams:
    """``(rho, u, Tnu)`` of a macroscopic state, unmatched."""
    Tnu = m.Tnu
    return GaussianParams(m.rho, m.u, Tnu, cholesky_or_raise(Tnu, cell), matched=False)


def eval_gaussian(p: GaussianParams, grid: PhaseGrid, return_underflow: bool = False):
    """Gaussian values at every velocity node.

    Uses the Cholesky factor: the quadratic form is ``|L^{-1}(v - u)|^2``, with
    ``L^{-1}`` applied per axis so the cost stays linear in the node count.
    Values below 1e-300 are flushed to zero.
    """
    L = p.chol
    Linv = solve_triangular(L, np.eye(3), lower=True)
    d = [grid.v - p.u_t[i] for i in range(3)]
    z1 = Linv[0, 0] * d[0]
    z2 = Linv[1, 0] * d[0][:, None] + Linv[1, 1] * d[1][None, :]
    z3 = (
        (Linv[2, 0] * d[0])[:, None, None]
        + (Linv[2, 1] * d[1])[None, :, None]
        + (Linv[2, 2] * d[2])[None, None, :]
    )
    q = (z1**2)[:, None, None] + (z2**2)[:, :, None] + z3**2
    values = p.rho_t * np.exp(-0.5 * q) / ((2.0 * np.pi) ** 1.5 * float(np.prod(np.diag(L))))
    small = values < UNDERFLOW
    n_small = int(small.sum())
    if n_small:
        values[small] = 0.0
    if return_underflow:
        return values, n_small
    return values


def raw_targets(mass, momentum, second) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (
        np.atleast_1d(np.asarray(mass, dtype=float)),
        np.atleast_2d(np.asarray(momentum, dtype=float)),
        np.asarray(second, dtype=float).reshape(-1, 3, 3),
    )


def esbgk_targets(rho, u, Tnu):
    """Raw moment targets ``(rho, rho u, rho (Tnu + u u^T))`` per cell."""
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float)
    second = rho[..., None, None] * (np.asarray(Tnu) + u[..., :, None] * u[..., None, :])
    return rho, rho[..., None] * u, second


@dataclass
class MatchResult:
    """Batched matching output; ``values`` are the matched Gaussians."""

    values: np.ndarray
    rho_t: np.ndarray
    u_t: np.ndarray
    Sigma_t: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    singular: np.ndarray
    underflow: int = 0


def _scaled_setup(mass, momentum, second):
    u0 = momentum / mass[:, None]
    sigma = second / mass[:, None, None] - u0[:, :, None] * u0[:, None, :]
    sigma = 0.5 * (sigma + np.swapaxes(sigma, -1, -2))
    s = np.sqrt(np.trace(sigma, axis1=-2, axis2=-1) / 3.0)
    return u0, sigma, s


def _natural_from_sigma(mass, sigma_xi, s):
    """Natural parameters of the continuum Gaussian with zero mean in xi."""
    L = np.linalg.cholesky(sigma_xi)
    eye = np.broadcast_to(np.eye(3), sigma_xi.shape)
    P = np.linalg.solve(sigma_xi, eye)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    a = np.log(mass) - 1.5 * LOG_2PI - 3.0 * np.log(s) - 0.5 * logdet
    eta = np.zeros((mass.size, 10))
    eta[:, 0] = a
    eta[:, 4], eta[:, 5], eta[:, 6] = P[:, 0, 0], P[:, 1, 1], P[:, 2, 2]
    eta[:, 7], eta[:, 8], eta[:, 9] = P[:, 0, 1], P[:, 0, 2], P[:, 1, 2]
    return eta


def _precision(eta):
    P = np.empty(eta.shape[:-1] + (3, 3))
    P[..., 0, 0], P[..., 1, 1], P[..., 2, 2] = eta[..., 4], eta[..., 5], eta[..., 6]
    P[..., 0, 1] = P[..., 1, 0] = eta[..., 7]
    P[..., 0, 2] = P[..., 2, 0] = eta[..., 8]
    P[..., 1, 2] = P[..., 2, 1] = eta[..., 9]
    return P


def _is_pd(P):
    m1 = P[..., 0, 0]
    m2 = P[..., 0, 0] * P[..., 1, 1] - P[..., 0, 1] ** 2
    m3 = np.linalg.det(P)
    return (m1 > 0) & (m2 > 0) & (m3 > 0)


def _eval_natural(eta, xi):
    """``exp(a + b.xi - xi^T P xi / 2)`` on the grid; ``xi`` is ``(n, 3, nv)``."""
    x1, x2, x3 = xi[:, 0], xi[:, 1], xi[:, 2]
    c = eta[:, :, None]
    A1 = c[:, 1] * x1 - 0.5 * c[:, 4] * x1**2
    A2 = c[:, 2] * x2 - 0.5 * c[:, 5] * x2**2
    A3 = c[:, 3] * x3 - 0.5 * c[:, 6] * x3**2
    T12 = A1[:, :, None] + A2[:, None, :] - c[:, 7, :, None] * x1[:, :, None] * x2[:, None, :]
    T23 = A3[:, None, :] - c[:, 9, :, None] * x2[:, :, None] * x3[:, None, :]
    T13 = -c[:, 8, :, None] * x1[:, :, None] * x3[:, None, :]
    e = T12[:, :, :, None] + T23[:, None, :, :] + T13[:, :, None, :] + eta[:, 0, None, None, None]
    return np.exp(e)


def _moment_system(g, grid, tables, need_jacobian):
    mom = velocity_moments(g, grid, 4 if need_jacobian else 2, tables)
    vec = mom[:, _MOM_IDX[:, 0], _MOM_IDX[:, 1], _MOM_IDX[:, 2]]
    if not need_jacobian:
        return vec, None
    jac = mom[:, _JAC_IDX[..., 0], _JAC_IDX[..., 1], _JAC_IDX[..., 2]] * _DCOEF
    return vec, jac


def _natural_to_params(eta, u0, s):
    P = _precision(eta)
    sig_xi = np.linalg.solve(P, np.broadcast_to(np.eye(3), P.shape))
    sig_xi = 0.5 * (sig_xi + np.swapaxes(sig_xi, -1, -2))
    mean_xi = np.einsum("nij,nj->ni", sig_xi, eta[:, 1:4])
    logK = eta[:, 0] + 0.5 * np.einsum("ni,ni->n", eta[:, 1:4], mean_xi)
    u_t = u0 + s[:, None] * mean_xi
    Sigma_t = s[:, None, None] ** 2 * sig_xi
    logdet = np.log(np.linalg.det(Sigma_t))
    rho_t = np.exp(logK + 1.5 * LOG_2PI + 0.5 * logdet)
    return rho_t, u_t, Sigma_t


def match_batch(mass, momentum, second, grid: PhaseGrid, tol=1e-12, max_iter=50) -> MatchResult:
    """Newton moment matching for a batch of cells.

    Targets must describe a positive mass and a positive definite
    covariance.  Cells that fail (singular Jacobian, no positive-definite step after
    halving, or no convergence in ``max_iter``) get the analytic Gaussian
    built from the targets, with ``converged`` false.
    """
    mass, momentum, second = raw_targets(mass, momentum, second)
    n = mass.size
    if not (mass > 0).all():
        raise DegenerateStateError("target mass must be positive", cell=int(np.flatnonzero(~(mass > 0))[0]))
    u0, sigma, s = _scaled_setup(mass, momentum, second)
    bad = ~_is_pd(sigma)
    if bad.any():
        raise DegenerateStateError("target covariance is not positive definite", cell=int(np.flatnonzero(bad)[0]))
    sigma_xi = sigma / (s**2)[:, None, None]
    target = np.zeros((n, 10))
    target[:, 0] = mass
    target[:, 4], target[:, 5], target[:, 6] = (mass * sigma_xi[:, i, i] for i in range(3))
    target[:, 7] = mass * sigma_xi[:, 0, 1]
    target[:, 8] = mass * sigma_xi[:, 0, 2]
    target[:, 9] = mass * sigma_xi[:, 1, 2]

    eta0 = _natural_from_sigma(mass, sigma_xi, s)
    tables = power_tables(grid, 4, center=u0, scale=s)
    xi = tables[:, :, 1, :]
    values = np.empty((n,) + grid.velocity_shape)
    residual = np.full(n, np.inf)
    iterations = np.zeros(n, dtype=np.int64)
    converged = np.zeros(n, dtype=bool)
    singular = np.zeros(n, dtype=bool)
    eta = eta0.copy()
    hit = np.zeros(n, dtype=bool)

    if not math.isfinite(tol):
        g = _eval_natural(eta, xi)
        vec, _ = _moment_system(g, grid, tables[:, :, :3], False)
        residual = np.max(np.abs(vec - target), axis=1) / mass
        rho_t, u_t, Sigma_t = _natural_to_params(eta, u0, s)
        return MatchResult(g, rho_t, u_t, Sigma_t, residual, iterations, np.ones(n, bool), singular)

    active = np.arange(n)
    for it in range(max_iter + 1):
        if active.size == 0:
            break
        g = _eval_natural(eta[active], xi[active])
        vec, jac = _moment_system(g, grid, tables[active], True)
        r = vec - target[active]
        res = np.max(np.abs(r), axis=1) / mass[active]
        values[active] = g
        residual[active] = res
        within = res <= tol
        done = within & ((res <= POLISH) | hit[active])
        hit[active] |= within
        converged[active[within]] = True
        if it == max_iter:
            break
        keep = ~done
        active, r, jac = active[keep], r[keep], jac[keep]
        if active.size == 0:
            break
        iterations[active] += 1
        step = np.zeros_like(r)
        ok = np.ones(active.size, dtype=bool)
        try:
            step = np.linalg.solve(jac, -r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            for k in range(active.size):
                try:
                    step[k] = np.linalg.solve(jac[k], -r[k])
                except np.linalg.LinAlgError:
                    ok[k] = False
        ok &= np.isfinite(step).all(axis=1)
        singular[active[~ok]] = True
        trial = eta[active] + step
        factor = np.ones(active.size)
        for _ in range(30):
            bad = ok & ~_is_pd(_precision(trial))
            if not bad.any():
                break
            factor[bad] *= 0.5
            trial[bad] = eta[active[bad]] + factor[bad, None] * step[bad]
        ok &= _is_pd(_precision(trial))
        eta[active[ok]] = trial[ok]
        active = active[ok]

    rho_t, u_t, Sigma_t = _natural_to_params(eta, u0, s)
    failed = ~converged
    underflow = 0
    if failed.any():
        rho_a, u_a, S_a = mass[failed], u0[failed], sigma[failed]
        for k, idx in enumerate(np.flatnonzero(failed)):
            p = GaussianParams(rho_a[k], u_a[k], S_a[k])
            values[idx], nu_ = eval_gaussian(p, grid, return_underflow=True)
            underflow += nu_
            rho_t[idx], u_t[idx], Sigma_t[idx] = rho_a[k], u_a[k], S_a[k]
    small = values < UNDERFLOW
    if small.any():
        underflow += int(small.sum())
        values[small] = 0.0
    return MatchResult(values, rho_t, u_t, Sigma_t, residual, iterations, converged, singular, underflow)


def match_discrete_moments(targets, grid: PhaseGrid, tol: float = 1e-12, max_iter: int = 50) -> GaussianParams:
    """Gaussian whose discrete moments equal ``targets``.

    ``targets`` is ``(mass, momentum, raw second moment matrix)`` for one cell.
    On failure the analytic parameters are returned with ``matched=False``.
    """
    mass, momentum, second = targets
    res = match_batch(mass, momentum, second, grid, tol=tol, max_iter=max_iter)
    flag = ""
    if res.singular[0]:
        flag = "singular-jacobian"
    elif not res.converged[0]:
        flag = "no-convergence"
    return GaussianParams(
        float(res.rho_t[0]),
        res.u_t[0],
        res.Sigma_t[0],
        matched=bool(res.converged[0]),
        residual=float(res.residual[0]),
        iterations=int(res.iterations[0]),
        flag=flag,
    )


def discrete_raw_moments(values: np.ndarray, grid: PhaseGrid):
    """``(mass, momentum, raw second moment matrix)`` of one velocity array."""
    m = velocity_moments(values.reshape((1,) + grid.velocity_shape), grid, 2)[0]
    mass = m[0, 0, 0]
    mom = np.array([m[1, 0, 0], m[0, 1, 0], m[0, 0, 1]])
    sec = np.array([
        [m[2, 0, 0], m[1, 1, 0], m[1, 0, 1]],
        [m[1, 1, 0], m[0, 2, 0], m[0, 1, 1]],
        [m[1, 0, 1], m[0, 1, 1], m[0, 0, 2]],
    ])
    return mass, mom, sec
