"""Property suite behind ``esbgk verify``.

Each check returns ``None`` when it holds or a short description of the
first violation.  Random states come from a seeded generator so that a
failure can be replayed.
"""
from __future__ import annotations

import numpy as np

from ..diagnostics import ck_check
from ..gaussian import GaussianParams, eval_gaussian, match_batch
from ..grid import apply_stencil, build_grid, deterministic_sum, shift_stencil, velocity_moments
from ..integrator import DistributionField, StepConfig, run
from ..moments import MacroState, lemma21_check, moments_from_values, sandwich_check, sandwich_violations
from ..scenarios import build_initial, standard_suite

NUS = (-0.4, 0.0, 0.5, 0.9)


def random_theta(rng, T: float) -> np.ndarray:
    """Random positive semidefinite matrix with trace ``3 T``."""
    A = rng.normal(size=(3, 3))
    S = A @ A.T
    return 3.0 * T * S / np.trace(S)


def check_sandwich(rng, samples):
    for nu in NUS:
        for i in range(samples):
            T = float(rng.uniform(0.1, 5.0))
            m = MacroState(1.0, np.zeros(3), T, random_theta(rng, T), nu)
            if not sandwich_check(m).ok:
                return f"sandwich bound fails for nu={nu}, sample {i}"
    return None


def _random_gaussian(rng, grid):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    S = q @ np.diag(rng.uniform(0.4, 2.0, size=3)) @ q.T
    return GaussianParams(rng.uniform(0.3, 2.0), rng.uniform(-1.0, 1.0, size=3), S)


def check_moments(rng, samples, grid):
    vals = np.stack([eval_gaussian(_random_gaussian(rng, grid), grid) for _ in range(samples)])
    mf = moments_from_values(vals, grid, 0.5)
    trace = mf.theta6[:, 0] + mf.theta6[:, 1] + mf.theta6[:, 2]
    bad = np.abs(trace - 3 * mf.T) > 1e-12 * np.maximum(mf.T, 1.0)
    if bad.any():
        return f"trace identity fails on sample {int(np.flatnonzero(bad)[0])}"
    if sandwich_violations(mf):
        return "sandwich bound fails on a Gaussian state"
    F = DistributionField(build_grid(1, 1.0, 4, grid.velocity_halfwidth, grid.velocity_counts),
                          np.broadcast_to(vals[0], (4,) + grid.velocity_shape))
    for q in (0.0, 2.0, 8.0):
        rep = lemma21_check(moments_from_values(F.cells(), F.grid, 0.5), F, q)
        if not all(r is None or np.isfinite(r) for r in rep.ratios):
            return f"non-finite weighted-norm ratio at q={q}"
    return None


def check_matching(rng, samples, grid):
    vals = np.stack([eval_gaussian(_random_gaussian(rng, grid), grid) for _ in range(samples)])
    m = velocity_moments(vals, grid, 2)
    mass = m[:, 0, 0, 0]
    mom = np.stack([m[:, 1, 0, 0], m[:, 0, 1, 0], m[:, 0, 0, 1]], axis=-1)
    idx = [[(2, 0, 0), (1, 1, 0), (1, 0, 1)], [(1, 1, 0), (0, 2, 0), (0, 1, 1)], [(1, 0, 1), (0, 1, 1), (0, 0, 2)]]
    second = np.stack([np.stack([m[:, a, b, c] for a, b, c in row], axis=-1) for row in idx], axis=-2)
    # perturb the targets so the analytic parameters are not already matched
    second = second * 1.01
    res = match_batch(mass, mom, second, grid)
    got = velocity_moments(res.values, grid, 2)
    err = np.nanmax(np.abs(got - _target_tensor(mass, mom, second)) / mass[:, None, None, None])
    if res.converged.all() and err > 1e-10:
        return f"matched moments miss their targets by {err:.3g}"
    return None


def _target_tensor(mass, mom, second):
    out = np.zeros((mass.size, 3, 3, 3))
    out[:, 0, 0, 0] = mass
    out[:, 1, 0, 0], out[:, 0, 1, 0], out[:, 0, 0, 1] = mom.T
    out[:, 2, 0, 0], out[:, 0, 2, 0], out[:, 0, 0, 2] = second[:, 0, 0], second[:, 1, 1], second[:, 2, 2]
    out[:, 1, 1, 0], out[:, 1, 0, 1], out[:, 0, 1, 1] = second[:, 0, 1], second[:, 0, 2], second[:, 1, 2]
    keep = np.zeros((3, 3, 3), dtype=bool)
    for e in [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0), (0, 2, 0), (0, 0, 2), (1, 1, 0), (1, 0, 1), (0, 1, 1)]:
        keep[e] = True
    return np.where(keep, out, np.nan)


def check_transport(rng, samples):
    grid = build_grid(1, 2 * np.pi, 16, 6.0, 8)
    for i in range(samples):
        G = rng.uniform(0.0, 1.0, size=16)
        st = shift_stencil(float(rng.choice(grid.v)), float(rng.uniform(0, 2)), grid, 1)
        out = apply_stencil(G, st)
        if (out < 0).any():
            return f"order-1 transport produced a negative value (sample {i})"
        if abs(deterministic_sum(out) - deterministic_sum(G)) > 1e-13 * deterministic_sum(G):
            return f"transport changed the total (sample {i})"
    return None


def check_runs(cfg, workers):
    grid = build_grid(1, 2 * np.pi, 16, 6.0, 16)
    for name, spec in standard_suite():
        F0 = build_initial(spec, grid)
        res = run(F0, StepConfig(0.05), cfg.nu, 20, beta=cfg.beta, workers=workers)
        E0 = res.records[0].E_func
        if E0 < -1e-12:
            return f"{name}: negative entropy functional {E0:.3g}"
        for r in res.records:
            if max(abs(r.dM), abs(r.dE), *map(abs, r.dJ)) > 1e-10:
                return f"{name}: conservation drift at t={r.t:.4g}"
            if r.prop24_lhs > E0 + 1e-9:
                return f"{name}: lower entropy bound exceeds the functional at t={r.t:.4g}"
            if r.entropy_up:
                return f"{name}: entropy increased at t={r.t:.4g}"
            if np.isfinite(r.ck_gap) and r.ck_gap < -1e-9:
                return f"{name}: L1/relative-entropy inequality fails at t={r.t:.4g}"
        if (res.final.values < 0).any():
            return f"{name}: negative distribution value"
        if sandwich_violations(moments_from_values(res.final.cells(), grid, cfg.nu)):
            return f"{name}: sandwich bound fails in the final state"
        if ck_check(res.final).gap < -1e-9:
            return f"{name}: L1/relative-entropy inequality fails in the final state"
    return None


def run_checks(cfg, seed: int, samples: int = 200, workers=None, echo=print):
    """Run every check; return the first failure message or ``None``."""
    rng = np.random.default_rng(seed)
    grid = build_grid(1, 1.0, 4, 8.0, 32)
    checks = [
        ("sandwich", lambda: check_sandwich(rng, samples)),
        ("moments", lambda: check_moments(rng, min(samples, 50), grid)),
        ("matching", lambda: check_matching(rng, min(samples, 50), grid)),
        ("transport", lambda: check_transport(rng, samples)),
        ("scenario-runs", lambda: check_runs(cfg, workers)),
    ]
    for name, fn in checks:
        msg = fn()
        if msg is not None:
            return f"{name}: {msg}"
        echo(f"ok {name}")
    return None
