"""Invariant audits, steady-state detection, and refinement study harnesses.

These are the verification instruments for the scheme's structural
guarantees: contraction and comparison audits over seeded random data,
per-step and telescoped energy/dissipation checks, self-convergence order
fits, and the epsilon -> 0 / dx -> 0 / t -> infinity studies.
"""

from __future__ import annotations

import dataclasses
import json
import math
from typing import Callable, Optional

import numpy as np

from .grid import DensityField, Grid1D, l1_norm
from .model import ProblemSpec
from .scheme import SchemeConfig, Trajectory, evolve, implicit_step
from .steady import SteadyProfile, check_euler_lagrange, verify_fixed_point


class DiagnosticsError(Exception):
    pass


class NoConvergence(DiagnosticsError):
    """run_to_steady hit max_steps before the detector fired."""


class RefinementMismatch(DiagnosticsError):
    """Coarse grid does not divide the reference grid, or errors degenerate."""


@dataclasses.dataclass
class SteadyDetector:
    """Fires after `patience` consecutive steps below the chosen criterion.

    step_change compares the L1 rate ||rho^{n+1} - rho^n||_{L1,dx}/dt against
    tol_rate; energy_plateau compares the per-step energy drop with tol_e.
    """

    criterion: str = "step_change"
    tol_rate: float = 1e-10
    tol_e: float = 1e-14
    patience: int = 5
    _hits: int = dataclasses.field(default=0, init=False)

    def __post_init__(self):
        if self.criterion not in ("step_change", "energy_plateau"):
            raise DiagnosticsError("criterion must be step_change or energy_plateau")
        if self.tol_rate <= 0.0 or self.tol_e <= 0.0:
            raise DiagnosticsError("detector tolerances must be positive")

    def reset(self):
        self._hits = 0

    def update(self, report, prev_values, new_values, dx) -> bool:
        if self.criterion == "step_change":
            rate = dx * float(np.sum(np.abs(new_values - prev_values))) / report.dt
            small = rate < self.tol_rate
        else:
            small = (report.energy_before - report.energy_after) < self.tol_e
        self._hits = self._hits + 1 if small else 0
        return self._hits >= self.patience


@dataclasses.dataclass
class RunToSteadyStats:
    steps: int
    t_final: float
    detector_fired: bool
    fixed_point_ok: bool
    fixed_point_residual: float
    energy_final: float


def run_to_steady(rho0: DensityField, config: SchemeConfig, spec: ProblemSpec,
                  detector: Optional[SteadyDetector] = None,
                  max_steps: int = 200000, observer: Optional[Callable] = None):
    """Evolve until the steady detector fires; cross-check the fixed point.

    Returns (SteadyProfile, RunToSteadyStats).  The profile records the state
    actually reached, its optimality verdict, and the constants implied by it.
    """
    detector = detector or SteadyDetector()
    detector.reset()
    grid = rho0.grid
    t_end = max_steps * config.dt

    def obs(t, report, prev_values, new_values):
        if observer is not None:
            observer(t, report, prev_values, new_values)
        return detector.update(report, prev_values, new_values, grid.dx)

    traj = evolve(rho0, t_end, config, spec, observer=obs)
    if not traj.stopped_early:
        raise NoConvergence(f"no steady state within {max_steps} steps")

    ok, residual = verify_fixed_point(traj.final, config, spec)
    verdict = check_euler_lagrange(traj.final, spec)
    kind = "regularized" if spec.is_regularized else (
        "composite" if verdict.kind == "multi-constant" else "truncated")
    profile = SteadyProfile(constants=verdict.constants, values=traj.final.values,
                            mass=traj.final.mass(), kind=kind, el_verdict=verdict)
    stats = RunToSteadyStats(
        steps=len(traj.reports), t_final=traj.times[-1] if traj.times else 0.0,
        detector_fired=True, fixed_point_ok=ok, fixed_point_residual=residual,
        energy_final=traj.reports[-1].energy_after if traj.reports else math.nan)
    return profile, stats


@dataclasses.dataclass
class OrderFit:
    resolutions: list
    errors: list
    fitted_order: float
    r_squared: float

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("resolution,error\n")
            for r, e in zip(self.resolutions, self.errors):
                fh.write(f"{r:.17g},{e:.17g}\n")


def fit_order(resolutions, errors) -> OrderFit:
    """Least-squares slope of log(error) against log(resolution)."""
    res = np.asarray(resolutions, dtype=float)
    err = np.asarray(errors, dtype=float)
    if len(res) < 3:
        raise RefinementMismatch("need at least 3 refinement levels")
    if np.any(np.diff(res) >= 0.0):
        raise RefinementMismatch("resolutions must be strictly decreasing")
    if np.any(err <= 0.0):
        raise RefinementMismatch("degenerate (zero) errors: nothing to fit")
    lx, ly = np.log(res), np.log(err)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - np.mean(ly)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return OrderFit(list(map(float, res)), list(map(float, err)),
                    float(slope), r2)


def restrict_to_coarse(fine_values: np.ndarray, n_coarse: int) -> np.ndarray:
    """Exact cell aggregation of a fine-grid field onto a coarser grid."""
    n_fine = len(fine_values)
    if n_fine % n_coarse != 0:
        raise RefinementMismatch(f"{n_coarse} does not divide {n_fine}")
    factor = n_fine // n_coarse
    return fine_values.reshape(n_coarse, factor).mean(axis=1)


def estimate_order(spec: ProblemSpec, rho0_fn: Callable, t_end: float,
                   axis: str, levels, dt_over_dx: float = 1.0,
                   n_fixed: Optional[int] = None, dt_fixed: Optional[float] = None,
                   ref_factor: int = 4, config_kwargs: Optional[dict] = None,
                   spec_for_epsilon: Optional[Callable] = None) -> OrderFit:
    """Self-convergence study along one refinement axis.

    dx_dt_joint: levels are cell counts, dt = dt_over_dx * dx, reference at
    ref_factor times the finest level (in both dx and dt).  dt_only / dx_only
    refine one knob with the other held fixed.  epsilon: levels are epsilon
    values, errors are L1 distances to the epsilon = 0 run at the same grid
    (spec_for_epsilon(eps) must build the regularised problem).
    Errors are measured at the final time in the dx-weighted L1 metric after
    exact cell aggregation onto the coarse grid.
    """
    from .grid import project_initial
    kw = dict(config_kwargs or {})

    def run(n_cells, dt, run_spec):
        grid = Grid1D(n_cells)
        f0 = project_initial(rho0_fn, grid, run_spec.alpha)
        config = SchemeConfig(dt=dt, **kw)
        traj = evolve(f0, t_end, config, run_spec)
        return traj.final.values

    if axis == "dx_dt_joint":
        levels = [int(n) for n in levels]
        n_ref = ref_factor * max(levels)
        ref = run(n_ref, dt_over_dx / n_ref, spec)
        errors, resolutions = [], []
        for n in sorted(levels):
            coarse = run(n, dt_over_dx / n, spec)
            err = l1_norm(coarse - restrict_to_coarse(ref, n), dx=1.0 / n)
            errors.append(err)
            resolutions.append(1.0 / n)
        return fit_order(resolutions, errors)
    if axis == "dx_only":
        if dt_fixed is None:
            raise RefinementMismatch("dx_only needs dt_fixed")
        levels = [int(n) for n in levels]
        n_ref = ref_factor * max(levels)
        ref = run(n_ref, dt_fixed, spec)
        errors, resolutions = [], []
        for n in sorted(levels):
            coarse = run(n, dt_fixed, spec)
            errors.append(l1_norm(coarse - restrict_to_coarse(ref, n), dx=1.0 / n))
            resolutions.append(1.0 / n)
        return fit_order(resolutions, errors)
    if axis == "dt_only":
        if n_fixed is None:
            raise RefinementMismatch("dt_only needs n_fixed")
        dts = sorted(float(d) for d in levels)
        ref = run(n_fixed, dts[0] / ref_factor, spec)
        errors, resolutions = [], []
        for dt in dts:
            vals = run(n_fixed, dt, spec)
            errors.append(l1_norm(vals - ref, dx=1.0 / n_fixed))
            resolutions.append(dt)
        return fit_order(resolutions[::-1], errors[::-1])
    if axis == "epsilon":
        if n_fixed is None or dt_fixed is None or spec_for_epsilon is None:
            raise RefinementMismatch("epsilon axis needs n_fixed, dt_fixed, spec_for_epsilon")
        base = run(n_fixed, dt_fixed, spec)
        errors, resolutions = [], []
        for eps in sorted(float(e) for e in levels):
            vals = run(n_fixed, dt_fixed, spec_for_epsilon(eps))
            errors.append(l1_norm(vals - base, dx=1.0 / n_fixed))
            resolutions.append(eps)
        return fit_order(resolutions[::-1], errors[::-1])
    raise DiagnosticsError(f"unknown refinement axis {axis!r}")


# ---------------------------------------------------------------------------
# audits


@dataclasses.dataclass
class AuditReport:
    name: str
    passed: bool
    entries: list          # per-case dicts with the measured slacks

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump({"name": self.name, "passed": bool(self.passed),
                       "entries": self.entries}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_text(self):
        lines = [f"audit: {self.name}   result: {'PASS' if self.passed else 'FAIL'}"]
        if self.entries:
            keys = sorted(self.entries[0])
            widths = {k: max(len(k), 12) for k in keys}
            lines.append("  ".join(k.ljust(widths[k]) for k in keys))
            for e in self.entries:
                lines.append("  ".join(
                    (f"{e[k]:.6g}" if isinstance(e[k], float) else str(e[k])).ljust(widths[k])
                    for k in keys))
        return "\n".join(lines) + "\n"


def random_interior_field(grid: Grid1D, alpha: float, rng) -> DensityField:
    """Seeded random datum in (0, alpha), one smoothing pass applied."""
    raw = rng.uniform(0.05 * alpha, 0.95 * alpha, grid.n_cells)
    padded = np.concatenate([[raw[0]], raw, [raw[-1]]])
    smooth = 0.25 * padded[:-2] + 0.5 * padded[1:-1] + 0.25 * padded[2:]
    return DensityField(grid, smooth)


def contraction_audit(pairs: int, steps: int, config: SchemeConfig,
                      spec: ProblemSpec, grid: Grid1D, seed: int = 0,
                      slack: float = 1e-8) -> AuditReport:
    """L1 and positive-part contraction over seeded random pairs, plus the
    comparison principle on ordered pairs.

    For each pair the maximum over steps of sum|rho - eta| minus its initial
    value must stay below the slack (and likewise for the positive part);
    ordered data must remain componentwise ordered up to the same slack.
    """
    rng = np.random.default_rng(seed)
    entries = []
    passed = True
    for k in range(pairs):
        rho = random_interior_field(grid, spec.alpha, rng)
        eta = random_interior_field(grid, spec.alpha, rng)
        d0 = float(np.sum(np.abs(rho.values - eta.values)))
        p0 = float(np.sum(np.maximum(rho.values - eta.values, 0.0)))
        worst_l1, worst_pos = -math.inf, -math.inf
        for _ in range(steps):
            rho, _ = implicit_step(rho, config, spec)
            eta, _ = implicit_step(eta, config, spec)
            d = float(np.sum(np.abs(rho.values - eta.values)))
            p = float(np.sum(np.maximum(rho.values - eta.values, 0.0)))
            worst_l1 = max(worst_l1, d - d0)
            worst_pos = max(worst_pos, p - p0)
        ok = worst_l1 <= slack and worst_pos <= slack
        passed &= ok
        entries.append({"pair": k, "l1_excess": worst_l1,
                        "pos_excess": worst_pos, "ok": ok})

    # ordered pair: lower datum must stay below the upper one
    lo = random_interior_field(grid, spec.alpha, rng)
    span = spec.alpha - np.max(lo.values)
    hi = DensityField(grid, lo.values + rng.uniform(0.0, 0.9) * span)
    worst_order = -math.inf
    for _ in range(steps):
        lo, _ = implicit_step(lo, config, spec)
        hi, _ = implicit_step(hi, config, spec)
        worst_order = max(worst_order, float(np.max(lo.values - hi.values)))
    ok = worst_order <= slack
    passed &= ok
    entries.append({"pair": -1, "l1_excess": 0.0, "pos_excess": worst_order, "ok": ok})
    return AuditReport("contraction", bool(passed), entries)


def energy_audit(trajectory: Trajectory, slack: float = 1e-8,
                 windows=(1, 10, None)) -> AuditReport:
    """Per-step energy decrease plus the telescoped dissipation inequality.

    Over every window of k solver steps the accumulated Theta|v|^2
    dissipation must not exceed the total energy drop (within the slack);
    k = None means the whole trajectory.
    """
    reports = trajectory.reports
    entries = []
    passed = True
    for i, rep in enumerate(reports):
        drop = rep.energy_before - rep.energy_after
        ok_step = (rep.energy_after <= rep.energy_before
                   + 1e-9 * (1.0 + abs(rep.energy_before)))
        ok_diss = drop >= rep.dissipation - slack
        if not (ok_step and ok_diss):
            passed = False
            entries.append({"step": i, "energy_drop": drop,
                            "dissipation": rep.dissipation, "ok": False})
    for k in windows:
        k_eff = len(reports) if k is None else k
        if k_eff <= 0 or k_eff > len(reports):
            continue
        for start in range(0, len(reports) - k_eff + 1, max(1, k_eff)):
            window = reports[start:start + k_eff]
            drop = window[0].energy_before - window[-1].energy_after
            diss = sum(r.dissipation for r in window)
            ok = 0.0 <= diss <= drop + slack
            if not ok:
                passed = False
                entries.append({"step": start, "energy_drop": drop,
                                "dissipation": diss, "ok": False,
                                "window": k_eff})
    if passed:
        entries.append({"step": -1, "energy_drop": 0.0, "dissipation": 0.0,
                        "ok": True})
    return AuditReport("energy", bool(passed), entries)
