"""Phase-space discretization: periodic torus in x, truncated cube in v.

The velocity grid is always three dimensional and uniform with spacing
``dv = 2 * vmax / nv``.  Nodes sit at ``(i - (nv - 1) / 2) * dv`` so the set is
symmetric about the origin.  In cell-centred placement ``nv`` must be even
(no node at v = 0); node-centred placement requires an odd count so that the
origin is a node.

Field arrays are stored row-major with the spatial axes outermost, i.e. with
shape ``(*spatial_counts, nv, nv, nv)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericalError

REDUCTION_BLOCK = 1024
_MAX_POINTS = 2**62


@dataclass(frozen=True)
class PhaseGrid:
    spatial_dims: int
    spatial_extent: tuple[float, ...]
    spatial_counts: tuple[int, ...]
    velocity_halfwidth: float
    velocity_counts: int
    velocity_offset: str = "cell"
    v: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = (np.arange(self.velocity_counts) - (self.velocity_counts - 1) / 2) * self.dv
        nodes.setflags(write=False)
        object.__setattr__(self, "v", nodes)

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.spatial_extent, self.spatial_counts))

    @property
    def dv(self) -> float:
        return 2.0 * self.velocity_halfwidth / self.velocity_counts

    @property
    def velocity_weight(self) -> float:
        return self.dv**3

    @property
    def cell_volume(self) -> float:
        return math.prod(self.dx)

    @property
    def volume(self) -> float:
        return math.prod(self.spatial_extent)

    @property
    def n_cells(self) -> int:
        return math.prod(self.spatial_counts)

    @property
    def velocity_shape(self) -> tuple[int, int, int]:
        n = self.velocity_counts
        return (n, n, n)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.spatial_counts) + self.velocity_shape

    @property
    def total_points(self) -> int:
        return self.n_cells * self.velocity_counts**3

    def x(self, axis: int = 0) -> np.ndarray:
        """Cell coordinates ``j * dx`` along a spatial axis."""
        return np.arange(self.spatial_counts[axis]) * self.dx[axis]

    def speed(self) -> np.ndarray:
        """|v| at every velocity node, shape ``velocity_shape``."""
        v = self.v
        return np.sqrt(v[:, None, None] ** 2 + v[None, :, None] ** 2 + v[None, None, :] ** 2)

    def speed_squared(self) -> np.ndarray:
        v2 = self.v**2
        return v2[:, None, None] + v2[None, :, None] + v2[None, None, :]

    def maxwellian(self) -> np.ndarray:
        """The normalized global Maxwellian evaluated at the velocity nodes."""
        return np.exp(-0.5 * self.speed_squared()) / (2.0 * np.pi) ** 1.5

    def velocity_mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v = self.v
        return (
            np.broadcast_to(v[:, None, None], self.velocity_shape),
            np.broadcast_to(v[None, :, None], self.velocity_shape),
            np.broadcast_to(v[None, None, :], self.velocity_shape),
        )


def _per_axis(value, dims, name, cast):
    if np.ndim(value) == 0:
        return (cast(value),) * dims
    values = tuple(cast(x) for x in value)
    if len(values) != dims:
        raise ConfigurationError(name, f"expected {dims} entries, got {len(values)}")
    return values


def build_grid(
    spatial_dims: int = 1,
    spatial_extent: float | Sequence[float] = 2 * np.pi,
    spatial_counts: int | Sequence[int] = 64,
    velocity_halfwidth: float = 8.0,
    velocity_counts: int = 32,
    velocity_offset: str = "cell",
) -> PhaseGrid:
    """Validate parameters and construct a :class:`PhaseGrid`.

    Scalars given for the per-axis settings are broadcast to every spatial
    axis.  Any invalid value raises :class:`ConfigurationError` naming the
    field.
    """
    if spatial_dims not in (1, 2, 3):
        raise ConfigurationError("spatial_dims", f"must be 1, 2 or 3, got {spatial_dims!r}")
    extent = _per_axis(spatial_extent, spatial_dims, "spatial_extent", float)
    counts = _per_axis(spatial_counts, spatial_dims, "spatial_counts", int)
    for L in extent:
        if not (math.isfinite(L) and L > 0):
            raise ConfigurationError("spatial_extent", f"periods must be positive, got {L!r}")
    for n in counts:
        if n < 4:
            raise ConfigurationError("spatial_counts", f"need at least 4 cells per axis, got {n}")
    vmax = float(velocity_halfwidth)
    if not (math.isfinite(vmax) and vmax > 0):
        raise ConfigurationError("velocity_halfwidth", f"must be positive, got {velocity_halfwidth!r}")
    nv = int(velocity_counts)
    if velocity_offset not in ("cell", "node"):
        raise ConfigurationError("velocity_offset", f"must be 'cell' or 'node', got {velocity_offset!r}")
    if nv < 8:
        raise ConfigurationError("velocity_counts", f"need at least 8 nodes per axis, got {nv}")
    if velocity_offset == "cell" and nv % 2:
        raise ConfigurationError(
            "velocity_counts", f"cell-centred placement needs an even count, got {nv}"
        )
    if velocity_offset == "node" and nv % 2 == 0:
        raise ConfigurationError(
            "velocity_counts", f"node-centred placement needs an odd count, got {nv}"
        )
    if math.prod(counts) * nv**3 >= _MAX_POINTS:
        raise ConfigurationError("spatial_counts", "phase-point count overflows a 64-bit index")
    return PhaseGrid(spatial_dims, extent, counts, vmax, nv, velocity_offset)


@dataclass(frozen=True)
class ShiftStencil:
    """Periodic interpolation stencil for one velocity component.

    Applying it computes ``out[j] = sum_k weights[k] * G[j + offsets[k]]``.
    The first entry is the base point; weights always sum to one.
    """

    offsets: tuple[int, ...]
    weights: tuple[float, ...]
    positivity_preserving: bool = True

    @property
    def is_exact_shift(self) -> bool:
        return len(self.offsets) == 1


def _lagrange_cubic(alpha: float) -> tuple[float, ...]:
    # nodes at relative positions 0, -1, +1, -2 evaluated at -alpha
    x = -alpha
    nodes = (0.0, -1.0, 1.0, -2.0)
    out = []
    for i, xi in enumerate(nodes):
        w = 1.0
        for j, xj in enumerate(nodes):
            if j != i:
                w *= (x - xj) / (xi - xj)
        out.append(w)
    return tuple(out)


def shift_stencil(v: float, dt: float, grid: PhaseGrid, order: int = 1, axis: int = 0) -> ShiftStencil:
    """Stencil evaluating a periodic field at the foot point ``x - v * dt``."""
    if dt < 0:
        raise ConfigurationError("dt", f"must be nonnegative, got {dt!r}")
    if order not in (1, 3):
        raise ConfigurationError("order", f"interpolation order must be 1 or 3, got {order!r}")
    s = v * dt / grid.dx[axis]
    nearest = round(s)
    if abs(s - nearest) <= 1e-12 * max(1.0, abs(s)):
        return ShiftStencil((-int(nearest),), (1.0,))
    n = math.floor(s)
    alpha = s - n
    base = -int(n)
    if order == 1:
        return ShiftStencil((base, base - 1), (1.0 - alpha, alpha))
    w = _lagrange_cubic(alpha)
    return ShiftStencil((base, base - 1, base + 1, base - 2), w, positivity_preserving=False)


def apply_stencil(field: np.ndarray, stencil: ShiftStencil, axis: int = 0) -> np.ndarray:
    """Apply a stencil along one periodic axis.

    The result is assembled as ``G_base + sum_k w_k (G_k - G_base)`` so that a
    field constant along ``axis`` is reproduced bitwise.
    """
    base = np.roll(field, -stencil.offsets[0], axis=axis)
    if stencil.is_exact_shift:
        return base
    out = base.copy()
    for off, w in zip(stencil.offsets[1:], stencil.weights[1:]):
        out += w * (np.roll(field, -off, axis=axis) - base)
    return out


def deterministic_sum(values: np.ndarray, block: int = REDUCTION_BLOCK) -> float:
    """Fixed-order pairwise reduction: per-block sums, then a binary tree."""
    flat = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if flat.size == 0:
        return 0.0
    nb = -(-flat.size // block)
    padded = np.zeros(nb * block)
    padded[: flat.size] = flat
    partial = padded.reshape(nb, block).sum(axis=1)
    while partial.size > 1:
        if partial.size % 2:
            partial = np.append(partial, 0.0)
        partial = partial[0::2] + partial[1::2]
    return float(partial[0])


def velocity_quadrature(grid: PhaseGrid, integrand: np.ndarray) -> float:
    """Midpoint rule ``dv**3 * sum(integrand)`` with a deterministic reduction."""
    values = np.asarray(integrand, dtype=np.float64)
    if values.size != grid.velocity_counts**3:
        raise ConfigurationError("integrand", f"expected {grid.velocity_counts**3} values, got {values.size}")
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.unravel_index(int(np.flatnonzero(bad.ravel())[0]), grid.velocity_shape)
        raise NumericalError("non-finite integrand value", index=tuple(int(i) for i in idx))
    return grid.velocity_weight * deterministic_sum(values)


def power_tables(grid: PhaseGrid, degree: int, center=None, scale=None) -> np.ndarray:
    """Per-axis monomial tables ``((v - center) / scale) ** p``.

    Returns shape ``(..., 3, degree + 1, nv)`` where the leading dims follow
    ``center`` (one row per cell) or are absent.
    """
    v = grid.v
    if center is None:
        xi = np.broadcast_to(v, (3, v.size))
    else:
        center = np.asarray(center, dtype=float)
        xi = v - center[..., :, None]
    if scale is not None:
        xi = xi / np.asarray(scale, dtype=float)[..., None, None]
    p = np.arange(degree + 1)
    return xi[..., :, None, :] ** p[:, None]


def velocity_moments(values: np.ndarray, grid: PhaseGrid, degree: int, tables=None) -> np.ndarray:
    """Monomial moments ``dv**3 * sum g * x1**a * x2**b * x3**c``.

    ``values`` has shape ``(n, nv, nv, nv)``; the result has shape
    ``(n, degree+1, degree+1, degree+1)`` indexed by ``[a, b, c]``.  The
    contraction runs axis by axis (innermost velocity axis first) in a fixed
    order per cell.
    """
    if tables is None:
        tables = power_tables(grid, degree)
    if tables.ndim == 3:
        m = np.einsum("nijk,pk->nijp", values, tables[2])
        m = np.einsum("nijp,qj->niqp", m, tables[1])
        m = np.einsum("niqp,ri->nrqp", m, tables[0])
    else:
        m = np.einsum("nijk,npk->nijp", values, tables[:, 2])
        m = np.einsum("nijp,nqj->niqp", m, tables[:, 1])
        m = np.einsum("niqp,nri->nrqp", m, tables[:, 0])
    return m * grid.velocity_weight
