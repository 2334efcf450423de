"""Initial data: equilibrium, density-perturbed Maxwellians, homogeneous
anisotropic Gaussians and tabulated fields, plus the analytic free-streaming
oracle for the separable ``rho0(x) mu(v)`` family.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ConfigurationError, DataError, UnsupportedScenarioError
from .gaussian import GaussianParams, eval_gaussian, match_discrete_moments
from .grid import PhaseGrid, deterministic_sum
from .integrator import DistributionField

KINDS = ("equilibrium", "density_wave", "density_step", "anisotropic_homogeneous", "table")
SEPARABLE = ("equilibrium", "density_wave", "density_step")
# velocity cut-off for the 1-D streaming quadrature; the Gaussian tail beyond it is < 1e-30
_V_CUT = 12.0


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "equilibrium"
    amplitude: float = 0.5
    wavenumber: tuple[int, ...] = (1,)
    levels: tuple[float, float] = (0.5, 1.5)
    sigma0: tuple[float, ...] = (2.0, 0.5, 0.5)
    table: str | None = None
    normalize: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError("scenario.kind", f"must be one of {KINDS}, got {self.kind!r}")
        if not (0.0 <= self.amplitude < 1.0):
            raise ConfigurationError("scenario.amplitude", f"must lie in [0, 1), got {self.amplitude!r}")
        lo, hi = self.levels
        if not (lo > 0 and hi > 0):
            raise ConfigurationError("scenario.levels", f"step levels must be positive, got {self.levels!r}")
        if self.kind == "anisotropic_homogeneous":
            S = sigma_matrix(self.sigma0)
            if not np.allclose(S, S.T) or np.linalg.eigvalsh(S)[0] <= 0:
                raise ConfigurationError("scenario.sigma0", "anisotropy matrix must be symmetric positive definite")
        if self.kind == "table" and not self.table:
            raise ConfigurationError("scenario.table", "table kind needs a snapshot path")


def sigma_matrix(sigma0) -> np.ndarray:
    """3 entries give a diagonal matrix, 9 entries a full one (row major)."""
    s = np.asarray(sigma0, dtype=float).ravel()
    if s.size == 3:
        return np.diag(s)
    if s.size == 9:
        return s.reshape(3, 3)
    raise ConfigurationError("scenario.sigma0", f"expected 3 or 9 entries, got {s.size}")


def _wavevector(spec: ScenarioSpec, extent) -> np.ndarray:
    k = np.zeros(len(extent))
    ks = tuple(spec.wavenumber)
    if len(ks) not in (1, len(extent)):
        raise ConfigurationError("scenario.wavenumber", f"expected 1 or {len(extent)} entries, got {len(ks)}")
    if len(ks) == 1:
        k[0] = ks[0]
    else:
        k[:] = ks
    return 2.0 * np.pi * k / np.asarray(extent, dtype=float)


def density_profile(spec: ScenarioSpec, x, extent) -> np.ndarray:
    """``rho0`` at points ``x`` of shape ``(..., dims)`` for separable kinds."""
    x = np.asarray(x, dtype=float)
    if spec.kind == "equilibrium":
        return np.ones(x.shape[:-1])
    if spec.kind == "density_wave":
        phase = x @ _wavevector(spec, extent)
        return 1.0 + spec.amplitude * np.cos(phase)
    if spec.kind == "density_step":
        L = float(extent[0])
        lo, hi = spec.levels
        return np.where(np.mod(x[..., 0], L) < 0.5 * L, lo, hi)
    raise UnsupportedScenarioError(f"{spec.kind} is not of the form rho0(x) mu(v)")


def is_separable(spec: ScenarioSpec) -> bool:
    return spec.kind in SEPARABLE


def _cell_points(grid: PhaseGrid) -> np.ndarray:
    axes = [grid.x(a) for a in range(grid.spatial_dims)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def normalize_defects(F: DistributionField) -> DistributionField:
    """Remove the discrete defect mass, momentum and energy against ``mu``.

    Momentum goes by symmetrizing each velocity axis; mass and energy by the
    factor ``alpha + gamma |v|^2`` solving the 2x2 moment system.
    """
    grid = F.grid
    d = grid.spatial_dims
    vals = F.values
    for a in range(3):
        vals = 0.5 * (vals + np.flip(vals, axis=d + a))
    v2 = grid.speed_squared()
    mu = grid.maxwellian()
    n = grid.n_cells
    cells = vals.reshape((n,) + grid.velocity_shape)
    m0 = deterministic_sum(cells)
    m2 = deterministic_sum(cells * v2)
    m4 = deterministic_sum(cells * v2 * v2)
    t0 = n * deterministic_sum(mu)
    t2 = n * deterministic_sum(mu * v2)
    alpha, gamma = np.linalg.solve(np.array([[m0, m2], [m2, m4]]), np.array([t0, t2]))
    factor = alpha + gamma * v2
    if (factor < 0).any():
        raise DataError("defect normalization would make the distribution negative")
    return DistributionField(grid, vals * factor, F.t)


def _table_field(spec: ScenarioSpec, grid: PhaseGrid) -> DistributionField:
    from .app.snapshot import read_snapshot

    F = read_snapshot(spec.table)
    if F.values.shape != grid.shape:
        raise DataError(f"table shape {F.values.shape} does not match grid {grid.shape}")
    if (F.values < 0).any():
        raise DataError("table contains negative entries")
    return DistributionField(grid, F.values, 0.0)


def build_initial(spec: ScenarioSpec, grid: PhaseGrid) -> DistributionField:
    """Assemble ``F0`` on ``grid``; optionally remove its discrete defects."""
    if spec.kind == "table":
        F = _table_field(spec, grid)
    elif spec.kind == "anisotropic_homogeneous":
        S = sigma_matrix(spec.sigma0)
        p = match_discrete_moments((1.0, np.zeros(3), S), grid)
        if not p.matched:
            p = GaussianParams(1.0, np.zeros(3), S)
        g = eval_gaussian(p, grid)
        F = DistributionField(grid, np.broadcast_to(g, grid.shape))
    else:
        rho0 = density_profile(spec, _cell_points(grid), grid.spatial_extent)
        mu = grid.maxwellian()
        F = DistributionField(grid, rho0[..., None, None, None] * mu)
    if spec.normalize:
        F = normalize_defects(F)
    return F


def analytic_free_stream_density(spec: ScenarioSpec, t: float, x, extent) -> float:
    """``int rho0(x - v t) mu(v) dv`` by adaptive 1-D quadrature.

    For every separable kind ``rho0(x - v t)`` depends on ``v`` only through
    one linear combination, which under ``mu`` is a centred normal variable,
    so the 3-D integral reduces to one dimension.
    """
    if not is_separable(spec):
        raise UnsupportedScenarioError(f"{spec.kind} has no analytic free-streaming oracle")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if spec.kind == "equilibrium":
        return 1.0
    rho_x = float(density_profile(spec, x, extent))
    if t == 0:
        return rho_x
    gauss = lambda s: math.exp(-0.5 * s * s) / math.sqrt(2.0 * math.pi)
    if spec.kind == "density_wave":
        kv = _wavevector(spec, extent)
        knorm = float(np.linalg.norm(kv))
        phase = float(x @ kv)
        # s is the unit-normal variable k.v / |k|
        f = lambda s: (1.0 + spec.amplitude * math.cos(phase - knorm * t * s)) * gauss(s)
        val, _ = integrate.quad(f, -_V_CUT, _V_CUT, epsabs=1e-14, epsrel=1e-12, limit=400)
        return val
    L = float(extent[0])
    lo, hi = spec.levels
    x0 = float(x[0])
    # jumps of the step profile at x0 - s t = m L / 2
    m_lo = math.floor(2.0 * (x0 - _V_CUT * t) / L)
    m_hi = math.ceil(2.0 * (x0 + _V_CUT * t) / L)
    jumps = sorted({(x0 - m * 0.5 * L) / t for m in range(m_lo, m_hi + 1)} | {-_V_CUT, _V_CUT})
    jumps = [s for s in jumps if -_V_CUT <= s <= _V_CUT]
    total = 0.0
    for a, b in zip(jumps[:-1], jumps[1:]):
        level = float(density_profile(spec, np.array([x0 - 0.5 * (a + b) * t]), extent))
        val, _ = integrate.quad(gauss, a, b, epsabs=1e-15, epsrel=1e-13)
        total += level * val
    return total


def standard_suite() -> list[tuple[str, ScenarioSpec]]:
    """Named scenarios exercising doubling, decay and stress relaxation."""
    suite = [("equilibrium", ScenarioSpec("equilibrium", normalize=True))]
    for a in (0.125, 0.25, 0.5):
        suite.append((f"density_wave_{a:g}", ScenarioSpec("density_wave", amplitude=a, normalize=True)))
    suite.append(("density_step", ScenarioSpec("density_step", levels=(0.5, 1.5), normalize=True)))
    suite.append(("anisotropic_homogeneous",
                  ScenarioSpec("anisotropic_homogeneous", sigma0=(2.0, 0.5, 0.5), normalize=True)))
    return suite


def small_suite() -> list[tuple[str, ScenarioSpec]]:
    """The small-data members (wave amplitude at most 0.25)."""
    return [(n, s) for n, s in standard_suite() if s.kind == "density_wave" and s.amplitude <= 0.25]
