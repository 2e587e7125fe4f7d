"""The implicit upwind finite-volume step and its Newton/homotopy solvers.

One backward-Euler step solves the nonlinear system H(rho) = rho_prev where

    H_i(rho) = rho_i + (dt/dx) (F_{i+1/2}(rho) - F_{i-1/2}(rho)),

with upwinded interface fluxes built from the monotone mobility factor pair:
the nondecreasing factor is evaluated upstream, the nonincreasing one
downstream.  That choice makes H monotone (nonpositive off-diagonal
Jacobian, unit column sums), which is what the solvers and every structural
property below rely on: mass conservation, bound preservation, free-energy
dissipation, L1 contraction, and the comparison principle.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .grid import DensityField, Grid1D, discrete_energy
from .model import ProblemSpec


class SchemeError(Exception):
    pass


class SingularEvaluation(SchemeError):
    """U'(rho_i) is infinite at some cell."""


class NewtonDiverged(SchemeError):
    """Damped Newton failed after homotopy fallback."""


class BoundViolation(SchemeError):
    """A converged iterate left [0, alpha] beyond the admissible slack."""


class StepFailed(SchemeError):
    """Time-step halving was exhausted."""


@dataclasses.dataclass(frozen=True)
class SchemeConfig:
    """Solver parameters for the implicit step.

    newton_tol is absolute on the unweighted residual sum and defaults to
    1e-12 * n_cells at solve time.  The tie rule at v == 0 picks the branch
    used for the (generalized) Jacobian only; the flux itself is continuous.
    """

    dt: float
    newton_tol: Optional[float] = None
    newton_max_iter: int = 50
    damping_min: float = 2.0 ** -20
    homotopy_stages: tuple = (0.25, 0.5, 0.75, 1.0)
    clamp_margin: float = 1e-14
    sign_at_zero: str = "plus"
    max_dt_halvings: int = 10

    def __post_init__(self):
        if self.dt <= 0.0:
            raise SchemeError("dt must be positive")
        stages = tuple(self.homotopy_stages)
        if any(b <= a for a, b in zip(stages, stages[1:])) or stages[-1] != 1.0:
            raise SchemeError("homotopy stages must be strictly increasing and end at 1")
        if self.sign_at_zero not in ("plus", "minus"):
            raise SchemeError("sign_at_zero must be 'plus' or 'minus'")

    def resolved_tol(self, n_cells: int) -> float:
        return self.newton_tol if self.newton_tol is not None else 1e-12 * n_cells


@dataclasses.dataclass
class StepReport:
    """Record of one solver step."""

    iterations: int
    residual: float
    fluxes: np.ndarray          # N + 1 interface fluxes, endpoints exactly 0
    velocities: np.ndarray      # N - 1 interior interface velocities
    energy_before: float
    energy_after: float
    dissipation: float          # dt * dx * sum Theta |v|^2  (>= 0)
    used_homotopy: bool
    dt: float
    halvings: int = 0


@dataclasses.dataclass
class Trajectory:
    grid: Grid1D
    times: list            # end time of each solver step
    reports: list          # StepReport per solver step
    final: DensityField
    stopped_early: bool
    states: Optional[list] = None   # per-step values, only when requested


def _potential_samples(grid: Grid1D, spec: ProblemSpec) -> np.ndarray:
    return np.asarray(spec.potential.v(grid.centers), dtype=float)


def _xi(vals, v_samples, spec):
    xi = spec.diffusion.du(vals) + v_samples
    if not np.all(np.isfinite(xi)):
        raise SingularEvaluation("U'(rho) is infinite at a cell")
    return xi


def velocity(rho: DensityField, spec: ProblemSpec) -> np.ndarray:
    """Interior interface velocities v_{i+1/2} = -(xi_{i+1} - xi_i)/dx."""
    v_samples = _potential_samples(rho.grid, spec)
    xi = _xi(rho.values, v_samples, spec)
    return -np.diff(xi) / rho.grid.dx


def _flux_arrays(vals, v, spec):
    """Full flux vector (N+1, no-flux endpoints) from values and velocities."""
    m1 = spec.mobility.m1(vals)
    m2 = spec.mobility.m2(vals)
    vp = np.maximum(v, 0.0)
    vm = np.minimum(v, 0.0)
    inner = m1[:-1] * m2[1:] * vp + m1[1:] * m2[:-1] * vm
    flux = np.zeros(len(vals) + 1)
    flux[1:-1] = inner
    return flux


def flux(rho: DensityField, spec: ProblemSpec) -> np.ndarray:
    """Upwind interface fluxes; F_{1/2} = F_{N+1/2} = 0 by construction."""
    return _flux_arrays(rho.values, velocity(rho, spec), spec)


def apply_H(rho: DensityField, rho_prev: DensityField, lam: float,
            config: SchemeConfig, spec: ProblemSpec) -> np.ndarray:
    """Residual G_i = rho_i + lam (dt/dx)(F_{i+1/2} - F_{i-1/2}) - rho_prev_i."""
    grid = rho.grid
    v_samples = _potential_samples(grid, spec)
    return _residual(rho.values, rho_prev.values, lam, config.dt, grid.dx,
                     v_samples, spec)


def _residual(vals, prev, lam, dt, dx, v_samples, spec):
    xi = _xi(vals, v_samples, spec)
    v = -np.diff(xi) / dx
    f = _flux_arrays(vals, v, spec)
    return vals + lam * (dt / dx) * np.diff(f) - prev


@dataclasses.dataclass
class Tridiagonal:
    lower: np.ndarray   # N - 1 entries, dG_i/drho_{i-1}
    diag: np.ndarray    # N entries
    upper: np.ndarray   # N - 1 entries, dG_i/drho_{i+1}

    def dense(self) -> np.ndarray:
        n = len(self.diag)
        out = np.zeros((n, n))
        out[np.arange(n), np.arange(n)] = self.diag
        out[np.arange(1, n), np.arange(n - 1)] = self.lower
        out[np.arange(n - 1), np.arange(1, n)] = self.upper
        return out

    def banded(self) -> np.ndarray:
        n = len(self.diag)
        ab = np.zeros((3, n))
        ab[0, 1:] = self.upper
        ab[1, :] = self.diag
        ab[2, :-1] = self.lower
        return ab


def jacobian(rho: DensityField, rho_prev: DensityField, lam: float,
             config: SchemeConfig, spec: ProblemSpec) -> Tridiagonal:
    """Analytic tridiagonal Jacobian of the residual.

    The flux is only piecewise differentiable in the velocity; at v == 0 the
    configured one-sided branch is used.  Off-diagonal entries are <= 0 and
    column sums equal 1, reflecting monotonicity and mass conservation.
    """
    grid = rho.grid
    v_samples = _potential_samples(grid, spec)
    vals = rho.values
    dx = grid.dx
    c = lam * config.dt / dx

    xi = _xi(vals, v_samples, spec)
    v = -np.diff(xi) / dx
    m1 = spec.mobility.m1(vals)
    m2 = spec.mobility.m2(vals)
    dm1 = spec.mobility.dm1(vals)
    dm2 = spec.mobility.dm2(vals)
    ddu = spec.diffusion.ddu(vals)

    vp = np.maximum(v, 0.0)
    vm = np.minimum(v, 0.0)
    if config.sign_at_zero == "plus":
        pos = v >= 0.0
        neg = v < 0.0
    else:
        pos = v > 0.0
        neg = v <= 0.0
    a = m1[:-1] * m2[1:]     # coefficient of v^+
    b = m1[1:] * m2[:-1]     # coefficient of v^-
    theta = np.where(pos, a, 0.0) + np.where(neg, b, 0.0)

    # interface k sits between cells k and k+1 (0-based)
    df_dleft = dm1[:-1] * m2[1:] * vp + m1[1:] * dm2[:-1] * vm + theta * ddu[:-1] / dx
    df_dright = m1[:-1] * dm2[1:] * vp + dm1[1:] * m2[:-1] * vm - theta * ddu[1:] / dx

    n = len(vals)
    diag = np.ones(n)
    diag[:-1] += c * df_dleft          # d(F_right)/d(rho_i) for cell i
    diag[1:] -= c * df_dright          # -d(F_left)/d(rho_i)
    upper = c * df_dright              # dG_i/drho_{i+1}
    lower = -c * df_dleft              # dG_i/drho_{i-1}
    return Tridiagonal(lower=lower, diag=diag, upper=upper)


def _clamp_bounds(spec: ProblemSpec, config: SchemeConfig):
    alpha = spec.alpha
    lo = 0.0
    hi = alpha
    if not math.isfinite(spec.diffusion.zeta_lo):
        lo = config.clamp_margin * alpha
    if not math.isfinite(spec.diffusion.zeta_hi):
        hi = alpha - config.clamp_margin * alpha
    return lo, hi


class _LineSearchFailed(Exception):
    pass


def _newton_solve(prev, start, lam, config, spec, grid, v_samples, tol):
    lo, hi = _clamp_bounds(spec, config)
    vals = np.clip(start, lo, hi)
    g = _residual(vals, prev, lam, config.dt, grid.dx, v_samples, spec)
    phi = float(np.sum(np.abs(g)))
    for it in range(config.newton_max_iter):
        if phi <= tol:
            return vals, it, phi
        jac = jacobian(DensityField(grid, vals), DensityField(grid, prev),
                       lam, config, spec)
        try:
            delta = solve_banded((1, 1), jac.banded(), -g)
        except Exception as exc:       # singular or ill-conditioned system
            raise _LineSearchFailed from exc
        tau = 1.0
        while True:
            cand = np.clip(vals + tau * delta, lo, hi)
            g_new = _residual(cand, prev, lam, config.dt, grid.dx, v_samples, spec)
            phi_new = float(np.sum(np.abs(g_new)))
            if phi_new <= (1.0 - 1e-4 * tau) * phi:
                break
            tau *= 0.5
            if tau < config.damping_min:
                raise _LineSearchFailed
        vals, g, phi = cand, g_new, phi_new
    if phi <= tol:
        return vals, config.newton_max_iter, phi
    raise _LineSearchFailed


def implicit_step(rho_prev: DensityField, config: SchemeConfig,
                  spec: ProblemSpec, start: Optional[np.ndarray] = None,
                  force_homotopy: bool = False):
    """One backward-Euler step; returns (new field, StepReport).

    Damped Newton (Armijo backtracking on the residual sum) is tried at
    lam = 1 first; on failure the lam-continuation stages of the config are
    solved in sequence, each warm-starting the next.  Every accepted state
    is verified a posteriori against the residual tolerance, so the solver
    path cannot silently corrupt results.
    """
    grid = rho_prev.grid
    v_samples = _potential_samples(grid, spec)
    tol = config.resolved_tol(grid.n_cells)
    prev = rho_prev.values
    start_vals = prev if start is None else np.asarray(start, dtype=float)

    used_homotopy = False
    iterations = 0
    if force_homotopy:
        direct = None
    else:
        try:
            direct = _newton_solve(prev, start_vals, 1.0, config, spec, grid,
                                   v_samples, tol)
        except (_LineSearchFailed, SingularEvaluation):
            direct = None
    if direct is not None:
        vals, iterations, residual = direct
    else:
        used_homotopy = True
        vals = start_vals
        try:
            for lam in config.homotopy_stages:
                vals, its, residual = _newton_solve(prev, vals, lam, config, spec,
                                                    grid, v_samples, tol)
                iterations += its
        except (_LineSearchFailed, SingularEvaluation) as exc:
            raise NewtonDiverged("Newton failed after homotopy fallback") from exc

    if np.any(vals < -1e-9) or np.any(vals > spec.alpha + 1e-9):
        raise BoundViolation("converged iterate left [0, alpha]")

    new = DensityField(grid, vals)
    xi = _xi(vals, v_samples, spec)
    v = -np.diff(xi) / grid.dx
    f = _flux_arrays(vals, v, spec)
    m1 = spec.mobility.m1(vals)
    m2 = spec.mobility.m2(vals)
    theta = np.where(v > 0.0, m1[:-1] * m2[1:], 0.0) + \
        np.where(v < 0.0, m1[1:] * m2[:-1], 0.0)
    dissipation = config.dt * grid.dx * float(np.sum(theta * v * v))
    report = StepReport(
        iterations=iterations, residual=residual, fluxes=f, velocities=v,
        energy_before=discrete_energy(rho_prev, spec),
        energy_after=discrete_energy(new, spec),
        dissipation=dissipation, used_homotopy=used_homotopy, dt=config.dt)
    return new, report


def evolve(rho0: DensityField, t_end: float, config: SchemeConfig,
           spec: ProblemSpec, observer: Optional[Callable] = None,
           keep_states: bool = False) -> Trajectory:
    """Run ceil(t_end/dt) implicit steps, with dt-halving on solver failure.

    The observer is called after every solver step as
    observer(t, report, prev_values, new_values) and may return True to stop
    the run early.  A nominal step that fails is retried with dt/2 (up to
    max_dt_halvings); the sub-steps compose to preserve the global clock and
    each appears in the trajectory with its own report.
    """
    if t_end < 0.0:
        raise SchemeError("t_end must be nonnegative")
    grid = rho0.grid
    n_nominal = int(math.ceil(t_end / config.dt - 1e-12))
    state = rho0
    times, reports = [], []
    states = [] if keep_states else None
    t = 0.0
    stopped = False

    for _ in range(n_nominal):
        remaining = config.dt
        halvings = 0
        sub_dt = config.dt
        while remaining > 1e-15 * config.dt and not stopped:
            sub_dt = min(sub_dt, remaining)
            sub_config = dataclasses.replace(config, dt=sub_dt)
            try:
                new_state, report = implicit_step(state, sub_config, spec)
            except NewtonDiverged:
                halvings += 1
                if halvings > config.max_dt_halvings:
                    raise StepFailed(f"dt halving exhausted at t = {t:g}")
                sub_dt *= 0.5
                continue
            report.halvings = halvings
            t += sub_dt
            remaining -= sub_dt
            times.append(t)
            reports.append(report)
            if keep_states:
                states.append(new_state.values.copy())
            if observer is not None:
                if observer(t, report, state.values, new_state.values):
                    stopped = True
            state = new_state
        if stopped:
            break

    return Trajectory(grid=grid, times=times, reports=reports, final=state,
                      stopped_early=stopped, states=states)


def constant_bracket(c: float, config: SchemeConfig, spec: ProblemSpec,
                     grid: Grid1D):
    """Constant sub/super solution levels for constant data c in (0, alpha).

    Returns (c_lo, c_hi) with H(c_lo * 1) <= c * 1 <= H(c_hi * 1)
    componentwise: the drift a constant state can experience in one step is
    bounded by 2 dt sup|V'| m(level) / dx, and m vanishes at 0 and alpha, so
    feasible levels exist on both sides.
    """
    alpha = spec.alpha
    if not (0.0 < c < alpha):
        raise SchemeError("constant level must be strictly inside (0, alpha)")
    drift = 2.0 * config.dt * spec.potential.grad_v_bound / grid.dx

    def down_ok(s):
        return s + drift * float(spec.mobility.m(np.asarray([s]))[0]) <= c

    def up_ok(s):
        return (alpha - s) + drift * float(spec.mobility.m(np.asarray([s]))[0]) <= alpha - c

    lo_feasible, hi_feasible = 0.0, alpha
    lo, hi = 0.0, c
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if down_ok(mid):
            lo_feasible, lo = mid, mid
        else:
            hi = mid
    lo, hi = c, alpha
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if up_ok(mid):
            hi_feasible, hi = mid, mid
        else:
            lo = mid
    return lo_feasible, hi_feasible
