"""Potentials, mobilities, factor decompositions, and the elliptic regularisation.

Problem data enters every other module exclusively through this one: a
saturation mobility as a monotone factor pair, a convex diffusion potential
through (U, U', U''), and an external potential V.  Construction is eager
(tabulation caches are built up front) and all objects are immutable
afterwards, so they are safe to share across threads and parameter sweeps.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.special import xlogy

from ._piecewise import Branch, PiecewiseFunction, mollified_max


class ModelError(Exception):
    pass


class NonPositiveInterior(ModelError):
    """Mobility is <= 0 strictly inside (0, alpha)."""


class IntegralDiverged(ModelError):
    """A decomposition or regularisation quadrature left the representable range."""


class AnchorInvalid(ModelError):
    """U''(s0) <= 0 at the configured anchor point."""


class UnknownFamily(ModelError):
    pass


class BadParameter(ModelError):
    pass


def _vec(f):
    """Wrap a scalar function so it accepts and returns numpy arrays."""
    def g(s):
        return f(np.asarray(s, dtype=float))
    return g


# ---------------------------------------------------------------------------
# domain types


@dataclasses.dataclass(frozen=True)
class MobilityPair:
    """A saturation mobility m = m1 * m2 with m1 nondecreasing, m2 nonincreasing.

    Both factors are defined on [0, alpha]; the product vanishes at the two
    endpoints and is positive in between.
    """

    alpha: float
    m1: Callable[[np.ndarray], np.ndarray]
    m2: Callable[[np.ndarray], np.ndarray]
    dm1: Callable[[np.ndarray], np.ndarray]
    dm2: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    def m(self, s):
        s = np.asarray(s, dtype=float)
        return self.m1(s) * self.m2(s)

    def dm(self, s):
        s = np.asarray(s, dtype=float)
        return self.dm1(s) * self.m2(s) + self.m1(s) * self.dm2(s)

    def validate(self, n_samples: int = 1024, tol: float = 1e-12) -> None:
        a = self.alpha
        s = np.linspace(0.0, a, n_samples)
        v1, v2 = self.m1(s), self.m2(s)
        prod = v1 * v2
        scale = max(np.max(np.abs(prod)), 1e-300)
        if abs(prod[0]) > 1e-12 * scale or abs(prod[-1]) > 1e-12 * scale:
            raise NonPositiveInterior("mobility product must vanish at 0 and alpha")
        if np.any(prod[1:-1] <= 0.0):
            raise NonPositiveInterior("mobility product must be positive inside (0, alpha)")
        if np.any(np.diff(v1) < -tol * max(1.0, np.max(np.abs(v1)))):
            raise NonPositiveInterior("m1 must be nondecreasing")
        if np.any(np.diff(v2) > tol * max(1.0, np.max(np.abs(v2)))):
            raise NonPositiveInterior("m2 must be nonincreasing")


@dataclasses.dataclass(frozen=True)
class DiffusionPotential:
    """Convex diffusion potential accessed through U, U' and U''.

    `domain_kind` is "c1" when U' extends continuously to [0, alpha] and
    "singular" when U'(0+) = -inf and/or U'(alpha-) = +inf.  `zeta_lo` and
    `zeta_hi` are the one-sided limits of U' at the endpoints (possibly
    infinite).  `inv_du`, when present, inverts U' on (zeta_lo, zeta_hi).
    """

    u: Callable[[np.ndarray], np.ndarray]
    du: Callable[[np.ndarray], np.ndarray]
    ddu: Callable[[np.ndarray], np.ndarray]
    domain_kind: str
    zeta_lo: float
    zeta_hi: float
    inv_du: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = ""

    def __post_init__(self):
        if self.domain_kind not in ("c1", "singular"):
            raise BadParameter(f"domain_kind must be 'c1' or 'singular', got {self.domain_kind!r}")


@dataclasses.dataclass(frozen=True)
class ExternalPotential:
    """Confining potential V >= 0 on [0, 1] with a precomputed sup|V'|."""

    v: Callable[[np.ndarray], np.ndarray]
    grad_v_bound: float
    name: str = ""


@dataclasses.dataclass(frozen=True)
class RegularizationParams:
    """Parameters of the uniformly elliptic approximation.

    kappa is the cutoff in min(Phi', 1/kappa) + epsilon and also sets the
    extent of the linear endpoint ramps of the regularised mobility (both
    shrink as epsilon -> 0).  band_width is the half-width of the C1
    mollification bands; s0 the anchor where U''(s0) > 0 is required.
    """

    epsilon: float
    kappa: Optional[float] = None
    s0: Optional[float] = None
    band_width: Optional[float] = None
    quadrature_tol: float = 1e-10
    n_tabulation: int = 4096

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise BadParameter("epsilon must lie in (0, 1]")
        if self.kappa is not None and self.kappa <= 0.0:
            raise BadParameter("kappa must be positive")

    def resolved(self, alpha: float) -> "RegularizationParams":
        """Fill defaults that depend on the saturation level."""
        kappa = self.kappa if self.kappa is not None else self.epsilon
        s0 = self.s0 if self.s0 is not None else 0.5 * alpha
        band = self.band_width if self.band_width is not None else self.epsilon * alpha / 8.0
        return dataclasses.replace(self, kappa=kappa, s0=s0, band_width=band)


@dataclasses.dataclass(frozen=True)
class ProblemSpec:
    """A complete problem definition: mobility pair, U, V, saturation level."""

    mobility: MobilityPair
    diffusion: DiffusionPotential
    potential: ExternalPotential
    regularization: Optional[RegularizationParams] = None

    @property
    def alpha(self) -> float:
        return self.mobility.alpha

    @property
    def is_regularized(self) -> bool:
        return self.regularization is not None

    def phi_prime(self, s):
        """Phi'(s) = m(s) U''(s), the diffusivity of the problem."""
        s = np.asarray(s, dtype=float)
        return self.mobility.m(s) * self.diffusion.ddu(s)


# ---------------------------------------------------------------------------
# built-in families


def diffusion_family(name: str, alpha: float = 1.0, **params) -> DiffusionPotential:
    """Closed-form diffusion potentials with exact derivatives and inverses."""
    if name == "quadratic":
        return DiffusionPotential(
            u=_vec(lambda s: s * s),
            du=_vec(lambda s: 2.0 * s),
            ddu=_vec(lambda s: np.full_like(s, 2.0)),
            domain_kind="c1", zeta_lo=0.0, zeta_hi=2.0 * alpha,
            inv_du=_vec(lambda z: 0.5 * z), name="quadratic")
    if name == "porous_medium":
        m = float(params.get("m", 2.0))
        if m <= 0.0 or m == 1.0:
            raise BadParameter("porous_medium exponent must be positive and != 1")
        c = m / (m - 1.0)

        def u(s):
            return np.power(s, m) / (m - 1.0)

        def du(s):
            return c * np.power(s, m - 1.0)

        def ddu(s):
            return m * np.power(s, m - 2.0)

        def inv_du(z):
            return np.power(np.maximum(z / c, 0.0) if m > 1.0 else z / c, 1.0 / (m - 1.0))

        if m > 1.0:
            kind, zlo, zhi = "c1", 0.0, c * alpha ** (m - 1.0)
        else:
            kind, zlo, zhi = "singular", -math.inf, c * alpha ** (m - 1.0)
        return DiffusionPotential(_vec(u), _vec(du), _vec(ddu), kind, zlo, zhi,
                                  inv_du=_vec(inv_du), name=f"porous_medium({m:g})")
    if name == "boltzmann":
        return DiffusionPotential(
            u=_vec(lambda s: xlogy(s, s)),
            du=_vec(lambda s: np.log(s) + 1.0),
            ddu=_vec(lambda s: 1.0 / s),
            domain_kind="singular", zeta_lo=-math.inf, zeta_hi=math.log(alpha) + 1.0,
            inv_du=_vec(lambda z: np.exp(z - 1.0)), name="boltzmann")
    if name in ("custom", "custom_tabulated"):
        required = {"u", "du", "ddu", "domain_kind", "zeta_lo", "zeta_hi"}
        missing = required - set(params)
        if missing:
            raise BadParameter(f"custom diffusion needs {sorted(missing)}")
        return DiffusionPotential(
            _vec(params["u"]), _vec(params["du"]), _vec(params["ddu"]),
            params["domain_kind"], float(params["zeta_lo"]), float(params["zeta_hi"]),
            inv_du=_vec(params["inv_du"]) if "inv_du" in params else None, name="custom")
    raise UnknownFamily(f"unknown diffusion family {name!r}")


def _double_well_factors(alpha: float):
    """The saturation mobility with linear behaviour at both constraint levels.

    m1 rises like s up to alpha/4 and is flat at alpha beyond 3*alpha/4;
    m2 is 1 below alpha/4 and falls like 1 - s/alpha beyond 3*alpha/4; the
    middle sections are monotone cubic Hermite joins, so both factors are C1.
    """
    a = alpha
    lo_k, hi_k = 0.25 * a, 0.75 * a
    from ._piecewise import HermiteSegment, linear_branch, constant_branch

    m1 = PiecewiseFunction(
        [lo_k, hi_k],
        [linear_branch(1.0, 0.0),
         HermiteSegment(lo_k, hi_k, lo_k, a, 1.0, 0.0),
         constant_branch(a)],
        0.0, a)
    m2 = PiecewiseFunction(
        [lo_k, hi_k],
        [constant_branch(1.0),
         HermiteSegment(lo_k, hi_k, 1.0, 1.0 - hi_k / a, 0.0, -1.0 / a),
         linear_branch(-1.0 / a, 1.0)],
        0.0, a)
    return m1, m2


def mobility_family(name: str, alpha: float = 1.0, **params) -> MobilityPair:
    if alpha <= 0.0:
        raise BadParameter("alpha must be positive")
    if name in ("power_product", "logistic"):
        a = float(params.get("a", 1.0))
        b = float(params.get("b", 1.0))
        if name == "logistic":
            a = b = 1.0
        if a <= 0.0 or b <= 0.0:
            raise BadParameter("power_product exponents must be positive")

        def m1(s):
            return np.power(s, a)

        def dm1(s):
            return a * np.power(s, a - 1.0) if a != 1.0 else np.ones_like(s)

        def m2(s):
            return np.power(np.maximum(alpha - s, 0.0), b)

        def dm2(s):
            r = np.maximum(alpha - s, 0.0)
            return -b * np.power(r, b - 1.0) if b != 1.0 else -np.ones_like(s)

        pair = MobilityPair(alpha, _vec(m1), _vec(m2), _vec(dm1), _vec(dm2),
                            name=f"power_product({a:g},{b:g})")
        pair.validate()
        return pair
    if name == "double_well_mobility":
        f1, f2 = _double_well_factors(alpha)
        pair = MobilityPair(alpha, f1, f2, f1.deriv, f2.deriv, name="double_well_mobility")
        pair.validate()
        return pair
    raise UnknownFamily(f"unknown mobility family {name!r}")


def _smoothstep(t):
    """Quintic smoothstep: C2 ramp from 0 to 1 on [0, 1]."""
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)


def potential_family(name: str, **params) -> ExternalPotential:
    if name == "harmonic":
        k = float(params.get("k", 1.0))
        if k < 0.0:
            raise BadParameter("harmonic stiffness must be >= 0")
        return ExternalPotential(_vec(lambda x: k * x * x), 2.0 * k, name=f"harmonic({k:g})")
    if name == "double_well":
        x_l = float(params.get("x_l", 0.25))
        x_k = float(params.get("x_k", 0.75))
        r_hat = float(params.get("r_hat", 0.2))
        curv = float(params.get("curvature", 1.0))
        if not (0.0 < x_l < x_k < 1.0):
            raise BadParameter("wells must satisfy 0 < x_l < x_k < 1")
        if x_k - x_l < 2.0 * r_hat:
            raise BadParameter("wells closer than 2*r_hat")
        if curv <= 0.0:
            raise BadParameter("curvature must be positive")
        gap_lo, gap_hi = x_l + r_hat, x_k - r_hat

        def v(x):
            left = 0.5 * curv * (x - x_l) ** 2
            right = 0.5 * curv * (x - x_k) ** 2
            w = _smoothstep((x - gap_lo) / (gap_hi - gap_lo))
            return np.where(x <= gap_lo, left,
                            np.where(x >= gap_hi, right,
                                     (1.0 - w) * left + w * right))

        xs = np.linspace(0.0, 1.0, 20001)
        bound = float(np.max(np.abs(np.gradient(v(xs), xs))))
        return ExternalPotential(_vec(v), bound,
                                 name=f"double_well({x_l:g},{x_k:g},{r_hat:g})")
    if name == "custom_polynomial":
        coeffs = params.get("coeffs")
        if coeffs is None:
            raise BadParameter("custom_polynomial needs 'coeffs'")
        poly = np.polynomial.Polynomial(list(map(float, coeffs)))
        xs = np.linspace(0.0, 1.0, 20001)
        vals = poly(xs)
        if np.min(vals) < -1e-12:
            raise BadParameter("polynomial potential must be nonnegative on [0, 1]")
        dpoly = poly.deriv()
        bound = float(np.max(np.abs(dpoly(xs))))

        def v(x):
            return np.maximum(poly(x), 0.0)

        return ExternalPotential(_vec(v), bound, name="custom_polynomial")
    raise UnknownFamily(f"unknown potential family {name!r}")


def make_spec(mobility: str = "power_product", u: str = "quadratic", v: str = "harmonic",
              alpha: float = 1.0, mobility_params: Optional[dict] = None,
              u_params: Optional[dict] = None, v_params: Optional[dict] = None) -> ProblemSpec:
    """Convenience constructor from family names."""
    return ProblemSpec(
        mobility=mobility_family(mobility, alpha, **(mobility_params or {})),
        diffusion=diffusion_family(u, alpha, **(u_params or {})),
        potential=potential_family(v, **(v_params or {})))


# ---------------------------------------------------------------------------
# mobility decomposition


def _clustered_grid(alpha: float, n: int, s_min_frac: float = 1e-13) -> np.ndarray:
    """Grid on [s_min, alpha - s_min]: uniform bulk plus geometric endpoint
    clusters (their union, so the spacing never jumps at a junction)."""
    s_min = s_min_frac * alpha
    n_side = max(n // 8, 64)
    n_mid = n - 2 * n_side
    left = np.geomspace(s_min, 0.25 * alpha, n_side)
    mid = np.linspace(s_min, alpha - s_min, n_mid)
    right = alpha - np.geomspace(s_min, 0.25 * alpha, n_side)
    grid = np.unique(np.concatenate([left, mid, right, [0.5 * alpha]]))
    return grid


_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(10)


def _panel_integrals(f, nodes):
    """Gauss-Legendre integral of f over each consecutive panel of `nodes`."""
    a = nodes[:-1]
    h = np.diff(nodes)
    x = a[:, None] + 0.5 * h[:, None] * (_GAUSS_X[None, :] + 1.0)
    vals = f(x.ravel()).reshape(x.shape)
    return 0.5 * h * (vals @ _GAUSS_W)


def decompose_mobility(m: Callable, alpha: float, grid_resolution: int = 16384,
                       dm: Optional[Callable] = None) -> MobilityPair:
    """Split a mobility into a nondecreasing/nonincreasing factor pair.

    The increasing factor integrates the positive part of m'/m away from
    alpha/2; the decreasing factor takes the remaining (nonpositive) log
    variation, so the product reproduces m to roundoff at the tabulation
    nodes.  The factors are tabulated on a grid clustered at the endpoints
    and monotone-interpolated in between.

    If no derivative is supplied, m' falls back to central differences with
    h = 1e-6 * alpha (with the documented accuracy loss for rough m).
    """
    m = _vec(m)
    if dm is None:
        # central differences with h = 1e-6 * alpha, shrunk near the
        # endpoints so the stencil stays local (and inside the domain)
        def dm(s):
            h = np.maximum(np.minimum(1e-6 * alpha, 0.49 * np.minimum(s, alpha - s)),
                           1e-13 * alpha)
            return (m(s + h) - m(s - h)) / (2.0 * h)
        dm = _vec(dm)
    else:
        dm = _vec(dm)

    half = 0.5 * alpha
    if not np.isfinite(m(np.asarray([half]))[0]) or m(np.asarray([half]))[0] <= 0.0:
        raise IntegralDiverged("mobility must be positive at alpha/2")

    nodes = _clustered_grid(alpha, grid_resolution)
    mv = m(nodes)
    if np.any(mv <= 0.0):
        raise NonPositiveInterior("mobility must be positive strictly inside (0, alpha)")

    def pos_part_rate(s):
        return np.maximum(dm(s), 0.0) / m(s)

    panel = _panel_integrals(pos_part_rate, nodes)
    i_half = int(np.searchsorted(nodes, half))
    if abs(nodes[i_half] - half) > 1e-14 * alpha:
        raise IntegralDiverged("tabulation grid must contain alpha/2")
    cum = np.concatenate([[0.0], np.cumsum(panel)])
    i_plus = cum - cum[i_half]  # integral of (m')_+ / m from alpha/2

    log_m = np.log(mv)
    log_m1 = math.log(m(np.asarray([half]))[0]) + i_plus
    log_m2 = log_m - log_m1
    if np.max(np.abs(log_m1)) > 700.0 or np.max(np.abs(log_m2)) > 700.0:
        raise IntegralDiverged("log-splitting left the representable range")

    # quadrature noise can locally break monotonicity by ~1e-14; enforce it
    log_m1 = np.maximum.accumulate(log_m1)
    log_m2 = np.minimum.accumulate(log_m2)

    v1 = np.exp(log_m1)
    v2 = np.exp(log_m2)
    # endpoint values: the factor carrying the zero of m vanishes, the other
    # one continues monotonically
    s_tab = np.concatenate([[0.0], nodes, [alpha]])
    v1 = np.concatenate([[0.0], v1, [v1[-1]]])
    v2 = np.concatenate([[v2[0]], v2, [0.0]])

    f1 = PchipInterpolator(s_tab, v1, extrapolate=True)
    f2 = PchipInterpolator(s_tab, v2, extrapolate=True)
    d1 = f1.derivative()
    d2 = f2.derivative()
    pair = MobilityPair(alpha, _vec(f1), _vec(f2), _vec(d1), _vec(d2), name="decomposed")
    pair.validate()
    return pair


# ---------------------------------------------------------------------------
# regularisation


def _ramped_factor(base, dbase, value_at_far_end, alpha, epsilon, extent, band, at_zero):
    """Mollified max of a mobility factor with its linear endpoint ramp.

    The ramp has slope (1 + epsilon) (after multiplying by the opposite
    factor's endpoint value) and is capped at distance `extent` from the
    endpoint, so it disappears pointwise as epsilon -> 0.
    """
    slope = (1.0 + epsilon) / value_at_far_end
    if at_zero:
        def ramp(s):
            return slope * np.minimum(s, extent)

        def dramp(s):
            return np.where(s < extent, slope, 0.0)
        knots = [extent]
    else:
        def ramp(s):
            return slope * np.minimum(alpha - s, extent)

        def dramp(s):
            return np.where(alpha - s < extent, -slope, 0.0)
        knots = [alpha - extent]
    f = Branch(_vec(base), _vec(dbase))
    g = Branch(_vec(ramp), _vec(dramp))
    return mollified_max(f, g, 0.0, alpha, band, g_knots=knots)


def regularize(spec: ProblemSpec, params: RegularizationParams) -> ProblemSpec:
    """Build the uniformly elliptic approximation of a problem.

    The diffusivity is clipped and lifted, Phi_eps' = min(Phi', 1/kappa) + eps,
    the mobility factors gain linear ramps of slope (1 + eps) near 0 and
    alpha (C1-mollified, extent shrinking with kappa so the pair converges
    back to the base pair), and U_eps'' = Phi_eps' / m_eps is integrated twice
    from the anchor alpha/2 where U_eps' and U_eps match U' and U exactly.
    The result always has U_eps'(0+) = -inf and U_eps'(alpha-) = +inf.
    """
    p = params.resolved(spec.alpha)
    alpha = spec.alpha
    eps, kappa = p.epsilon, p.kappa

    if spec.diffusion.ddu(np.asarray([p.s0]))[0] <= 0.0:
        raise AnchorInvalid(f"U'' must be positive at the anchor s0 = {p.s0:g}")

    extent = min(kappa * alpha, 0.25 * alpha)
    band = min(p.band_width, 0.5 * extent)
    m2_at_zero = float(spec.mobility.m2(np.asarray([0.0]))[0])
    m1_at_alpha = float(spec.mobility.m1(np.asarray([alpha]))[0])

    f1 = _ramped_factor(spec.mobility.m1, spec.mobility.dm1, m2_at_zero,
                        alpha, eps, extent, band, at_zero=True)
    f2 = _ramped_factor(spec.mobility.m2, spec.mobility.dm2, m1_at_alpha,
                        alpha, eps, extent, band, at_zero=False)
    pair_eps = MobilityPair(alpha, f1, f2, f1.deriv, f2.deriv,
                            name=spec.mobility.name + f"+eps({eps:g})")

    base_phi_prime = _vec(lambda s: spec.mobility.m(s) * spec.diffusion.ddu(s))
    cutoff = 1.0 / kappa

    def phi_eps_prime(s):
        return np.minimum(base_phi_prime(s), cutoff) + eps

    def ddu_eps(s):
        s = np.asarray(s, dtype=float)
        return phi_eps_prime(s) / pair_eps.m(s)

    # tabulate U_eps' and U_eps on a grid refined at the endpoints; insert
    # the kink locations of the integrand so every panel is smooth
    nodes = _clustered_grid(alpha, p.n_tabulation, s_min_frac=1e-14)
    extra = [extent, alpha - extent]
    for kn in np.asarray(f1.knots).tolist() + np.asarray(f2.knots).tolist():
        extra.append(float(kn))
    # crossings of Phi' with the cutoff level
    probe = np.linspace(nodes[0], nodes[-1], 4096)
    dphi = base_phi_prime(probe) - cutoff
    for i in np.nonzero(np.sign(dphi[:-1]) * np.sign(dphi[1:]) < 0)[0]:
        extra.append(brentq(lambda s: float(base_phi_prime(np.asarray([s]))[0]) - cutoff,
                            probe[i], probe[i + 1]))
    extra = [e for e in extra if nodes[0] < e < nodes[-1]]
    nodes = np.unique(np.concatenate([nodes, extra]))

    half = 0.5 * alpha
    i_half = int(np.searchsorted(nodes, half))
    panel_ddu = _panel_integrals(ddu_eps, nodes)
    cum = np.concatenate([[0.0], np.cumsum(panel_ddu)])
    du_anchor = float(spec.diffusion.du(np.asarray([half]))[0])
    du_nodes = du_anchor + (cum - cum[i_half])
    if np.any(np.diff(du_nodes) <= 0.0):
        raise IntegralDiverged("tabulated U_eps' is not strictly increasing")

    du_interp = PchipInterpolator(nodes, du_nodes, extrapolate=True)

    def du_eps(s):
        return du_interp(np.asarray(s, dtype=float))

    # second anchored integration for U_eps itself (panelwise, nested Gauss)
    a = nodes[:-1]
    h = np.diff(nodes)
    x = a[:, None] + 0.5 * h[:, None] * (_GAUSS_X[None, :] + 1.0)
    du_at_gauss = du_interp(x.ravel()).reshape(x.shape)
    panel_du = 0.5 * h * (du_at_gauss @ _GAUSS_W)
    cum_u = np.concatenate([[0.0], np.cumsum(panel_du)])
    u_anchor = float(spec.diffusion.u(np.asarray([half]))[0])
    u_nodes = u_anchor + (cum_u - cum_u[i_half])
    u_interp = PchipInterpolator(nodes, u_nodes, extrapolate=True)

    def u_eps(s):
        return u_interp(np.asarray(s, dtype=float))

    s_lo, s_hi = nodes[0], nodes[-1]
    z_lo, z_hi = du_nodes[0], du_nodes[-1]

    def inv_du_eps(zeta):
        """Monotone bisection on the tabulated U_eps'; clamps outside range."""
        zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
        lo = np.full(zeta.shape, s_lo)
        hi = np.full(zeta.shape, s_hi)
        idx = np.clip(np.searchsorted(du_nodes, zeta), 1, len(nodes) - 1)
        lo = nodes[idx - 1]
        hi = nodes[idx]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = du_interp(mid) < zeta
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = 0.5 * (lo + hi)
        out = np.where(zeta <= z_lo, s_lo, out)
        out = np.where(zeta >= z_hi, s_hi, out)
        return out

    diffusion_eps = DiffusionPotential(
        u=u_eps, du=du_eps, ddu=_vec(ddu_eps), domain_kind="singular",
        zeta_lo=-math.inf, zeta_hi=math.inf, inv_du=inv_du_eps,
        name=spec.diffusion.name + f"+eps({eps:g})")

    return ProblemSpec(mobility=pair_eps, diffusion=diffusion_eps,
                       potential=spec.potential, regularization=p)


def barenblatt_function(mass: float, m_exponent: float, center: float,
                        curvature: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
    """Continuous compactly supported steady bump of the porous-medium problem.

    Returns x -> ((m-1)/m (C - curvature |x - center|^2 / 2))_+^(1/(m-1)) with
    C fixed so the integral over the line equals `mass`.
    """
    if m_exponent <= 1.0:
        raise BadParameter("barenblatt exponent must exceed 1")
    mm = m_exponent

    def total(c):
        r = math.sqrt(2.0 * c / curvature)
        y = np.linspace(-r, r, 20001)
        vals = np.power(np.maximum((mm - 1.0) / mm * (c - 0.5 * curvature * y * y), 0.0),
                        1.0 / (mm - 1.0))
        return float(np.trapezoid(vals, y))

    c_hi = 1.0
    while total(c_hi) < mass:
        c_hi *= 2.0
        if c_hi > 1e12:
            raise BadParameter("mass too large for a Barenblatt bump")
    c = brentq(lambda cc: total(cc) - mass, 1e-12, c_hi, xtol=1e-14)

    def bump(x):
        x = np.asarray(x, dtype=float)
        arg = (mm - 1.0) / mm * (c - 0.5 * curvature * (x - center) ** 2)
        return np.power(np.maximum(arg, 0.0), 1.0 / (mm - 1.0))

    bump.constant = c
    bump.radius = math.sqrt(2.0 * c / curvature)
    return bump
