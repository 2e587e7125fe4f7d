"""Steady states: mass-constrained constants, truncated profiles, diagnostics.

For an elliptic regularised problem the steady profile is (U_eps')^{-1}
applied to C - V; at epsilon = 0 the inverse is composed with the clamp to
[0, alpha], producing vacuum and saturation plateaus.  In both cases the
constant C is pinned by the discrete mass condition, a scalar monotone
root-finding problem solved by bracketed bisection.
"""

from __future__ import annotations

import dataclasses
import json
import math
from typing import Optional

import numpy as np

from .grid import DensityField, Grid1D
from .model import ProblemSpec
from .scheme import SchemeConfig, implicit_step


class SteadyError(Exception):
    pass


class MassOutOfRange(SteadyError):
    """Target mass must lie strictly between 0 and alpha."""


class BracketFailed(SteadyError):
    pass


class NonUniquePlateau(SteadyError):
    """The mass map is flat at the root; the constant is not determined."""


class SupportOverflow(SteadyError):
    """A Barenblatt support reaches the domain boundary."""


@dataclasses.dataclass
class ELVerdict:
    kind: str                  # minimiser-compatible | multi-constant | violated
    constants: list            # one value (single C) or one per support component
    violated_cells: list

    def to_dict(self):
        return {"kind": self.kind, "constants": list(map(float, self.constants)),
                "violated_cells": list(map(int, self.violated_cells))}


@dataclasses.dataclass
class SteadyProfile:
    constants: list
    values: np.ndarray
    mass: float
    kind: str                  # regularized | truncated | composite
    el_verdict: Optional[ELVerdict] = None

    def field(self, grid: Grid1D) -> DensityField:
        return DensityField(grid, self.values)

    def to_csv(self, path, grid: Grid1D) -> None:
        self.field(grid).to_csv(path)

    def sidecar(self) -> dict:
        return {"constants": list(map(float, self.constants)),
                "mass": float(self.mass), "kind": self.kind,
                "el_verdict": self.el_verdict.to_dict() if self.el_verdict else None}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def truncate(s, alpha: float):
    """Clamp to [0, alpha]; accepts +-inf."""
    return np.minimum(alpha, np.maximum(0.0, s))


def _du_inverse(spec: ProblemSpec, zeta):
    """Invert U' on (zeta_lo, zeta_hi); closed form when available."""
    d = spec.diffusion
    zeta = np.asarray(zeta, dtype=float)
    if d.inv_du is not None:
        return d.inv_du(zeta)
    # monotone bisection fallback on [tiny, alpha - tiny]
    alpha = spec.alpha
    lo = np.full(zeta.shape, 1e-14 * alpha)
    hi = np.full(zeta.shape, alpha * (1.0 - 1e-14))
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = d.du(mid) < zeta
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def truncated_inverse(spec: ProblemSpec, zeta):
    """Generalized composition T_{0,alpha} o (U')^{-1}.

    Returns alpha where zeta >= U'(alpha-), 0 where zeta <= U'(0+), and the
    plain inverse in between; works when either endpoint slope is infinite.
    """
    d = spec.diffusion
    alpha = spec.alpha
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    out = np.empty_like(zeta)
    hi_mask = zeta >= d.zeta_hi
    lo_mask = zeta <= d.zeta_lo
    mid_mask = ~(hi_mask | lo_mask)
    out[hi_mask] = alpha
    out[lo_mask] = 0.0
    if mid_mask.any():
        out[mid_mask] = truncate(_du_inverse(spec, zeta[mid_mask]), alpha)
    return out


def _profile_values(spec: ProblemSpec, grid: Grid1D, c: float) -> np.ndarray:
    zeta = c - spec.potential.v(grid.centers)
    if spec.is_regularized:
        return np.asarray(spec.diffusion.inv_du(zeta), dtype=float)
    return truncated_inverse(spec, zeta)


def solve_mass_constant(mass: float, spec: ProblemSpec, grid: Grid1D,
                        tol: float = 1e-12) -> SteadyProfile:
    """Find C with dx * sum of the steady profile equal to the target mass.

    The mass map P(C) is nondecreasing (strictly where some cell responds),
    so a doubling bracket expansion followed by bisection suffices.  A flat
    plateau of P at the root wider than 1e-6 is reported, not resolved.
    """
    alpha = spec.alpha
    if not (0.0 < mass < alpha):
        raise MassOutOfRange(f"mass must lie in (0, {alpha:g})")

    v_samples = spec.potential.v(grid.centers)

    def p_of(c):
        return grid.dx * float(np.sum(_profile_values(spec, grid, c)))

    du_mid = float(spec.diffusion.du(np.asarray([min(max(0.5 * mass, 1e-12 * alpha),
                                                     alpha * (1.0 - 1e-12))]))[0])
    if not math.isfinite(du_mid):
        du_mid = 0.0
    lo = float(np.min(v_samples)) + du_mid - 1.0
    hi = float(np.max(v_samples)) + du_mid + 1.0
    width = hi - lo
    for _ in range(200):
        if p_of(lo) <= mass:
            break
        lo -= width
        width *= 2.0
    else:
        raise BracketFailed("could not bracket the constant from below")
    width = hi - lo
    for _ in range(200):
        if p_of(hi) >= mass:
            break
        hi += width
        width *= 2.0
    else:
        raise BracketFailed("could not bracket the constant from above")

    c_lo, c_hi = lo, hi
    c = 0.5 * (c_lo + c_hi)
    for _ in range(400):
        c = 0.5 * (c_lo + c_hi)
        pm = p_of(c)
        if abs(pm - mass) <= tol:
            break
        if pm < mass:
            c_lo = c
        else:
            c_hi = c
        if c_hi - c_lo < 1e-16 * max(1.0, abs(c)):
            break
    if abs(p_of(c) - mass) > tol:
        raise BracketFailed("bisection did not reach the mass tolerance")

    probe = 1e-6
    if abs(p_of(c - probe) - mass) <= tol and abs(p_of(c + probe) - mass) <= tol:
        raise NonUniquePlateau("mass map is flat at the root; U' too degenerate")

    values = _profile_values(spec, grid, c)
    kind = "regularized" if spec.is_regularized else "truncated"
    profile = SteadyProfile(constants=[c], values=values,
                            mass=grid.dx * float(np.sum(values)), kind=kind)
    profile.el_verdict = check_euler_lagrange(profile.field(grid), spec)
    return profile


def barenblatt(mass: float, m_exponent: float, center: float, grid: Grid1D,
               alpha: float = 1.0, curvature: float = 1.0) -> SteadyProfile:
    """Discrete Barenblatt bump: porous-medium steady profile in its own well.

    B_i = ((m-1)/m (C - curvature |x_i - center|^2 / 2))_+^(1/(m-1)) with C
    fixed by the discrete mass condition.
    """
    if m_exponent <= 1.0:
        raise SteadyError("barenblatt requires exponent > 1")
    if not (0.0 < mass < alpha):
        raise MassOutOfRange(f"mass must lie in (0, {alpha:g})")
    mm = m_exponent
    x = grid.centers

    def values_of(c):
        arg = (mm - 1.0) / mm * (c - 0.5 * curvature * (x - center) ** 2)
        vals = np.power(np.maximum(arg, 0.0), 1.0 / (mm - 1.0))
        return np.minimum(vals, alpha)

    def p_of(c):
        return grid.dx * float(np.sum(values_of(c)))

    c_lo, c_hi = 0.0, 1.0
    for _ in range(200):
        if p_of(c_hi) >= mass:
            break
        c_hi *= 2.0
    else:
        raise BracketFailed("could not bracket the Barenblatt constant")
    for _ in range(400):
        c = 0.5 * (c_lo + c_hi)
        if abs(p_of(c) - mass) <= 1e-12:
            break
        if p_of(c) < mass:
            c_lo = c
        else:
            c_hi = c

    radius = math.sqrt(2.0 * c / curvature)
    if center - radius <= 0.0 or center + radius >= 1.0:
        raise SupportOverflow("Barenblatt support reaches the domain boundary")
    values = values_of(c)
    return SteadyProfile(constants=[c], values=values,
                         mass=grid.dx * float(np.sum(values)), kind="truncated")


def composite_profile(profiles: list, grid: Grid1D) -> SteadyProfile:
    """Sum of steady bumps with disjoint supports (multi-constant state)."""
    values = np.zeros(grid.n_cells)
    constants = []
    for p in profiles:
        overlap = (values > 0.0) & (p.values > 0.0)
        if np.any(overlap):
            raise SteadyError(f"supports overlap at cells {np.nonzero(overlap)[0][:4]}")
        values += p.values
        constants.extend(p.constants)
    return SteadyProfile(constants=constants, values=values,
                         mass=grid.dx * float(np.sum(values)), kind="composite")


def _component_runs(mask):
    """Maximal runs of consecutive True entries, as (start, stop) pairs."""
    runs = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(mask)))
    return runs


def check_euler_lagrange(rho: DensityField, spec: ProblemSpec,
                         tol: float = 1e-8) -> ELVerdict:
    """Test the discrete optimality conditions xi >= C where rho < alpha and
    xi <= C where rho > 0.

    Returns 'minimiser-compatible' when a single C works globally,
    'multi-constant' when the conditions hold with separate constants on the
    maximal runs of occupied cells (with distinct values), and 'violated'
    otherwise together with the offending cells.
    """
    alpha = spec.alpha
    vals = rho.values
    v_samples = spec.potential.v(rho.grid.centers)
    with np.errstate(divide="ignore", invalid="ignore"):
        du = np.asarray(spec.diffusion.du(vals), dtype=float)
    du = np.where(vals <= 0.0, spec.diffusion.zeta_lo,
                  np.where(vals >= alpha, spec.diffusion.zeta_hi, du))
    xi = du + v_samples

    occupied = vals > tol
    below_cap = vals < alpha - tol

    def c_interval(cells):
        lo, hi = -math.inf, math.inf
        for i in cells:
            if occupied[i]:
                lo = max(lo, xi[i] - tol)
            if below_cap[i]:
                hi = min(hi, xi[i] + tol)
        return lo, hi

    all_cells = range(rho.grid.n_cells)
    g_lo, g_hi = c_interval(all_cells)
    if g_lo <= g_hi:
        c = 0.5 * (g_lo + g_hi)
        if not math.isfinite(c):
            c = g_lo if math.isfinite(g_lo) else (g_hi if math.isfinite(g_hi) else 0.0)
        return ELVerdict("minimiser-compatible", [c], [])

    runs = _component_runs(occupied)
    constants = []
    ok = True
    for (a, b) in runs:
        cells = list(range(a, b))
        if a > 0:
            cells.append(a - 1)       # adjacent vacuum must not pull mass in
        if b < rho.grid.n_cells:
            cells.append(b)
        lo, hi = c_interval(cells)
        if lo > hi:
            ok = False
            break
        constants.append(0.5 * (lo + hi) if math.isfinite(lo + hi) else lo)
    if ok and len(runs) >= 2:
        return ELVerdict("multi-constant", constants, [])

    # no consistent constant exists: report the cells that clash with the
    # best compromise value (midpoint of the empty intersection gap)
    lo_f = g_lo if math.isfinite(g_lo) else 0.0
    hi_f = g_hi if math.isfinite(g_hi) else 0.0
    mid = 0.5 * (lo_f + hi_f)
    bad = []
    for i in all_cells:
        if occupied[i] and xi[i] - tol > mid:
            bad.append(i)
        if below_cap[i] and xi[i] + tol < mid:
            bad.append(i)
    if not bad:
        bad = [int(np.argmax(np.abs(xi - mid)))]
    return ELVerdict("violated", [float(mid)], sorted(set(bad)))


def verify_fixed_point(rho: DensityField, config: SchemeConfig,
                       spec: ProblemSpec):
    """Apply one implicit step; a fixed point moves by at most 10x the solver
    tolerance.  Returns (is_fixed, residual)."""
    new, _ = implicit_step(rho, config, spec)
    residual = float(np.sum(np.abs(new.values - rho.values)))
    tol = config.resolved_tol(rho.grid.n_cells)
    return residual <= 10.0 * tol, residual
