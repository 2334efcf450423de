"""Fluid moments of a discrete distribution and their algebraic bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateStateError, NumericalError, ParameterError
from .grid import PhaseGrid, power_tables, velocity_moments

RHO_FLOOR = 1e-12
T_FLOOR = 1e-12

# (i, j) index pairs of the six stored stress entries
SYM_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def check_nu(nu: float) -> float:
    nu = float(nu)
    if not (-0.5 < nu < 1.0):
        raise ParameterError(f"nu must lie in (-1/2, 1), got {nu}")
    return nu


def sandwich_constants(nu: float) -> tuple[float, float]:
    """``(min(1-nu, 1+2nu), max(1-nu, 1+2nu))``."""
    a, b = 1.0 - nu, 1.0 + 2.0 * nu
    return min(a, b), max(a, b)


def pack_sym(m: np.ndarray) -> np.ndarray:
    return np.stack([m[..., i, j] for i, j in SYM_PAIRS], axis=-1)


def unpack_sym(s: np.ndarray) -> np.ndarray:
    out = np.empty(s.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(SYM_PAIRS):
        out[..., i, j] = s[..., k]
        out[..., j, i] = s[..., k]
    return out


def temperature_tensor(T, Theta, nu: float) -> np.ndarray:
    """``(1 - nu) T Id + nu Theta`` for scalar or batched inputs."""
    T = np.asarray(T, dtype=float)
    return (1.0 - nu) * T[..., None, None] * np.eye(3) + nu * np.asarray(Theta)


@dataclass(frozen=True)
class MacroState:
    rho: float
    u: np.ndarray
    T: float
    Theta: np.ndarray
    nu: float

    @property
    def Tnu(self) -> np.ndarray:
        return temperature_tensor(self.T, self.Theta, self.nu)

    @property
    def Anu(self) -> float:
        return self.rho * self.T / (1.0 - self.nu)


@dataclass
class MomentField:
    """Per-cell moments; arrays are flat over cells in row-major order."""

    rho: np.ndarray
    u: np.ndarray
    T: np.ndarray
    theta6: np.ndarray
    nu: float
    mask: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.rho.size

    @property
    def Theta(self) -> np.ndarray:
        return unpack_sym(self.theta6)

    @property
    def Tnu(self) -> np.ndarray:
        return temperature_tensor(self.T, self.Theta, self.nu)

    @property
    def Anu(self) -> np.ndarray:
        return self.rho * self.T / (1.0 - self.nu)

    def cell(self, i: int) -> MacroState:
        return MacroState(
            float(self.rho[i]), self.u[i].copy(), float(self.T[i]), self.Theta[i], self.nu
        )


def moments_from_values(values: np.ndarray, grid: PhaseGrid, nu: float) -> MomentField:
    """Moments of ``values`` with shape ``(n_cells, nv, nv, nv)``.

    Density and velocity come from raw moments; the stress tensor is
    integrated about the local bulk velocity for accuracy.  Cells below the
    density or temperature floor are masked and carry placeholder values.
    """
    raw = velocity_moments(values, grid, 1)
    rho = raw[:, 0, 0, 0]
    mom = np.stack([raw[:, 1, 0, 0], raw[:, 0, 1, 0], raw[:, 0, 0, 1]], axis=-1)
    safe_rho = np.where(rho > RHO_FLOOR, rho, 1.0)
    u = np.where(rho[:, None] > RHO_FLOOR, mom / safe_rho[:, None], 0.0)
    central = velocity_moments(values, grid, 2, power_tables(grid, 2, center=u))
    second = np.empty((rho.size, 6))
    for k, (i, j) in enumerate(SYM_PAIRS):
        e = [0, 0, 0]
        e[i] += 1
        e[j] += 1
        second[:, k] = central[:, e[0], e[1], e[2]]
    theta6 = second / safe_rho[:, None]
    T = (theta6[:, 0] + theta6[:, 1] + theta6[:, 2]) / 3.0
    mask = (rho < RHO_FLOOR) | (T < T_FLOOR)
    return MomentField(rho, u, T, theta6, nu, mask)


def compute_moments(F, nu: float) -> MomentField:
    """Per-cell ``(rho, u, T, Theta)`` of a distribution field."""
    nu = check_nu(nu)
    grid = F.grid
    values = F.values.reshape((grid.n_cells,) + grid.velocity_shape)
    if not np.isfinite(values).all():
        idx = int(np.flatnonzero(~np.isfinite(values.ravel()))[0])
        raise NumericalError("non-finite distribution value", index=np.unravel_index(idx, grid.shape))
    m = moments_from_values(values, grid, nu)
    if m.mask.all():
        raise DegenerateStateError("every spatial cell is below the density/temperature floor")
    return m


def symmetric_eigvals3(A: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of symmetric 3x3 matrices.

    The trigonometric closed form gives the best separated eigenvalue to
    working precision; the remaining pair comes from the 2x2 block on the
    orthogonal complement of its eigenvector, which stays accurate when the
    two coincide (where the closed form alone loses half the digits).
    Works on a single matrix or a stack; the input is symmetrized first.
    """
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    eye = np.eye(3)
    q = np.trace(A, axis1=-2, axis2=-1) / 3.0
    p1 = A[..., 0, 1] ** 2 + A[..., 0, 2] ** 2 + A[..., 1, 2] ** 2
    d0, d1, d2 = A[..., 0, 0] - q, A[..., 1, 1] - q, A[..., 2, 2] - q
    p = np.sqrt((d0**2 + d1**2 + d2**2 + 2.0 * p1) / 6.0)
    flat = p == 0
    safe_p = np.where(flat, 1.0, p)
    B = (A - q[..., None, None] * eye) / safe_p[..., None, None]
    r = np.clip(np.linalg.det(B) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    hi = q + 2.0 * p * np.cos(phi)
    lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    top_simple = r >= 0
    lam = np.where(top_simple, hi, lo)

    # eigenvector of the simple eigenvalue: largest cross product of two rows
    M = A - lam[..., None, None] * eye
    crosses = np.stack([np.cross(M[..., 0, :], M[..., 1, :]),
                        np.cross(M[..., 0, :], M[..., 2, :]),
                        np.cross(M[..., 1, :], M[..., 2, :])], axis=-2)
    norms = np.linalg.norm(crosses, axis=-1)
    best = np.argmax(norms, axis=-1)
    v = np.take_along_axis(crosses, best[..., None, None], axis=-2)[..., 0, :]
    vn = np.take_along_axis(norms, best[..., None], axis=-1)[..., 0]
    # a matrix close to a multiple of the identity has no preferred direction
    v = np.where((vn > 0)[..., None], v / np.where(vn > 0, vn, 1.0)[..., None], eye[2])
    e = np.where((np.abs(v[..., 0]) < 0.9)[..., None], eye[0], eye[1])
    w1 = np.cross(v, e)
    w1 = w1 / np.linalg.norm(w1, axis=-1)[..., None]
    w2 = np.cross(v, w1)
    a = np.einsum("...i,...ij,...j->...", w1, A, w1)
    c = np.einsum("...i,...ij,...j->...", w2, A, w2)
    b = np.einsum("...i,...ij,...j->...", w1, A, w2)
    mean = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    out = np.stack([np.where(top_simple, mean - rad, lam),
                    np.where(top_simple, mean + rad, mean - rad),
                    np.where(top_simple, lam, mean + rad)], axis=-1)
    out = np.where(flat[..., None], q[..., None], out)
    return np.sort(out, axis=-1)


@dataclass(frozen=True)
class SandwichReport:
    lam_min: float
    lam_max: float
    det: float
    lower_ok: bool
    upper_ok: bool
    det_ok: bool

    @property
    def ok(self) -> bool:
        return self.lower_ok and self.upper_ok and self.det_ok


def sandwich_check(m: MacroState, nu: float | None = None, slack: float = 1e-10) -> SandwichReport:
    """Check the eigenvalue and determinant sandwich of ``Tnu`` against ``T``."""
    nu = m.nu if nu is None else check_nu(nu)
    T = m.T
    if not (m.rho > RHO_FLOOR and T > T_FLOOR):
        raise DegenerateStateError("sandwich check needs an unmasked state")
    Tnu = temperature_tensor(T, m.Theta, nu)
    lam = symmetric_eigvals3(Tnu)
    det = float(np.prod(lam))
    c1, c2 = sandwich_constants(nu)
    tol = slack * T
    return SandwichReport(
        float(lam[0]),
        float(lam[2]),
        det,
        bool(c1 * T <= lam[0] + tol),
        bool(lam[2] <= c2 * T + tol),
        bool(c1**3 * T**3 <= det + tol and det <= c2**3 * T**3 + tol),
    )


def sandwich_violations(mf: MomentField, slack: float = 1e-10) -> int:
    """Number of unmasked cells breaking any sandwich bound."""
    keep = ~mf.mask
    if not keep.any():
        return 0
    T = mf.T[keep]
    lam = symmetric_eigvals3(temperature_tensor(T, mf.Theta[keep], mf.nu))
    det = np.prod(lam, axis=-1)
    c1, c2 = sandwich_constants(mf.nu)
    tol = slack * T
    bad = (
        (c1 * T > lam[:, 0] + tol)
        | (lam[:, 2] > c2 * T + tol)
        | (c1**3 * T**3 > det + tol)
        | (det > c2**3 * T**3 + tol)
    )
    return int(bad.sum())


def weighted_sup_norm(F, q: float) -> float:
    """``max (1 + |v|)**q * F`` over every phase point."""
    grid = F.grid
    w = (1.0 + grid.speed()) ** q
    values = F.values.reshape((grid.n_cells,) + grid.velocity_shape)
    return float(np.max(values * w))


@dataclass(frozen=True)
class Lemma21Report:
    q: float
    lhs: tuple[float, float, float | None]
    norms: tuple[float, float]
    ratios: tuple[float, float, float | None]


def lemma21_check(m, F, q: float) -> Lemma21Report:
    """Left-hand sides of the weighted-norm lower bounds and their ratios.

    ``m`` is a :class:`MacroState` or a :class:`MomentField` (the worst cell is
    reported).  The third bound needs ``q > 1``; below that its entries are
    ``None``.
    """
    if 3.0 <= q <= 5.0:
        raise ParameterError(f"q={q} lies in the excluded band [3, 5]")
    if q < 0:
        raise ParameterError(f"q must be nonnegative, got {q}")
    if isinstance(m, MacroState):
        rho, T, u2 = np.array([m.rho]), np.array([m.T]), np.array([float(np.dot(m.u, m.u))])
    else:
        keep = ~m.mask
        rho, T = m.rho[keep], m.T[keep]
        u2 = np.sum(m.u[keep] ** 2, axis=-1)
    n0 = weighted_sup_norm(F, 0.0)
    nq = weighted_sup_norm(F, q)
    lhs1 = float(np.max(rho / T**1.5))
    lhs2 = float(np.max(rho * (T + u2) ** ((q - 3.0) / 2.0)))
    lhs3 = None
    if q > 1:
        lhs3 = float(np.max(rho * np.sqrt(u2) ** q / ((T + u2) * T) ** 1.5))
    ratios = (lhs1 / n0, lhs2 / nq, None if lhs3 is None else lhs3 / nq)
    for r in ratios:
        if r is not None and not math.isfinite(r):
            raise NumericalError("non-finite weighted-norm ratio")
    return Lemma21Report(q, (lhs1, lhs2, lhs3), (n0, nq), ratios)
