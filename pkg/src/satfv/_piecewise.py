"""Internal piecewise scalar functions with analytic derivatives.

Used to assemble mollified mobilities: C1 joins between smooth branches are
cubic Hermite segments over small bands around branch crossings and kinks.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq


class Branch:
    """A scalar function together with its derivative, vectorised."""

    def __init__(self, f, df):
        self.f = f
        self.df = df

    def __call__(self, s):
        return self.f(np.asarray(s, dtype=float))

    def deriv(self, s):
        return self.df(np.asarray(s, dtype=float))


class HermiteSegment:
    """Cubic Hermite interpolant on [x0, x1] with prescribed end slopes."""

    def __init__(self, x0, x1, y0, y1, d0, d1):
        self.x0, self.x1 = float(x0), float(x1)
        self.h = self.x1 - self.x0
        self.y0, self.y1, self.d0, self.d1 = float(y0), float(y1), float(d0), float(d1)

    def __call__(self, s):
        t = (np.asarray(s, dtype=float) - self.x0) / self.h
        h00 = (1.0 + 2.0 * t) * (1.0 - t) ** 2
        h10 = t * (1.0 - t) ** 2
        h01 = t * t * (3.0 - 2.0 * t)
        h11 = t * t * (t - 1.0)
        return self.y0 * h00 + self.d0 * self.h * h10 + self.y1 * h01 + self.d1 * self.h * h11

    def deriv(self, s):
        t = (np.asarray(s, dtype=float) - self.x0) / self.h
        dh00 = 6.0 * t * (t - 1.0)
        dh10 = (1.0 - t) * (1.0 - 3.0 * t)
        dh01 = 6.0 * t * (1.0 - t)
        dh11 = t * (3.0 * t - 2.0)
        return (self.y0 * dh00 / self.h + self.d0 * dh10
                + self.y1 * dh01 / self.h + self.d1 * dh11)


class PiecewiseFunction:
    """Piecewise function over [lo, hi]: segments split at interior knots.

    Each segment carries a Branch or HermiteSegment; evaluation clamps are
    the caller's responsibility (segments extrapolate smoothly just outside
    their interval, which the Newton line search relies on).
    """

    def __init__(self, knots, segments, lo, hi):
        self.knots = np.asarray(knots, dtype=float)   # interior breakpoints, sorted
        self.segments = list(segments)                # len(knots) + 1 pieces
        self.lo, self.hi = float(lo), float(hi)
        if len(self.segments) != len(self.knots) + 1:
            raise ValueError("segment/knot count mismatch")

    def _index(self, s):
        return np.searchsorted(self.knots, s, side="right")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        scalar = s.ndim == 0
        s = np.atleast_1d(s)
        out = np.empty_like(s)
        idx = self._index(s)
        for k, seg in enumerate(self.segments):
            mask = idx == k
            if mask.any():
                out[mask] = seg(s[mask])
        return out[0] if scalar else out

    def deriv(self, s):
        s = np.asarray(s, dtype=float)
        scalar = s.ndim == 0
        s = np.atleast_1d(s)
        out = np.empty_like(s)
        idx = self._index(s)
        for k, seg in enumerate(self.segments):
            mask = idx == k
            if mask.any():
                out[mask] = seg.deriv(s[mask])
        return out[0] if scalar else out


def linear_branch(a, b):
    """Branch for s -> a*s + b."""
    return Branch(lambda s: a * s + b, lambda s: np.full_like(s, a, dtype=float))


def constant_branch(c):
    return Branch(lambda s: np.full_like(np.asarray(s, dtype=float), c),
                  lambda s: np.zeros_like(np.asarray(s, dtype=float)))


def _find_crossings(f, g, lo, hi, extra_knots, n_scan=8192):
    """Sign changes of f - g inside (lo, hi), refined with brentq."""
    pts = np.unique(np.concatenate([np.linspace(lo, hi, n_scan),
                                    np.asarray(extra_knots, dtype=float)]))
    pts = pts[(pts >= lo) & (pts <= hi)]
    d = f(pts) - g(pts)
    roots = []
    sgn = np.sign(d)
    for i in range(len(pts) - 1):
        if sgn[i] == 0.0:
            if lo < pts[i] < hi:
                roots.append(pts[i])
            continue
        if sgn[i] * sgn[i + 1] < 0.0:
            r = brentq(lambda s: float(f(np.asarray([s]))[0] - g(np.asarray([s]))[0]),
                       pts[i], pts[i + 1], xtol=1e-15 * max(1.0, hi))
            roots.append(r)
    return sorted(set(roots))


def mollified_max(f, g, lo, hi, band, f_knots=(), g_knots=()):
    """C1 mollification of max(f, g) on [lo, hi].

    Kinks (branch crossings and active knots of either branch) are replaced
    by cubic Hermite joins over bands of half-width `band`, merged when they
    overlap.  Outside the bands the active branch is used verbatim, so the
    endpoint values and slopes of max(f, g) are preserved exactly.
    """
    def vmax(s):
        return np.maximum(f(s), g(s))

    crossings = _find_crossings(f, g, lo, hi, list(f_knots) + list(g_knots))
    kinks = list(crossings)
    for k in list(f_knots) + list(g_knots):
        if lo < k < hi:
            kinks.append(float(k))
    kinks = sorted(set(kinks))

    # merge overlapping bands, clipped away from the domain endpoints
    margin = 1e-12 * (hi - lo)
    bands = []
    for c in kinks:
        a, b = max(lo + margin, c - band), min(hi - margin, c + band)
        if a >= b:
            continue
        if bands and a <= bands[-1][1]:
            bands[-1] = (bands[-1][0], max(bands[-1][1], b))
        else:
            bands.append((a, b))

    def branch_at(s):
        sv = np.asarray([s])
        return f if float(f(sv)[0]) >= float(g(sv)[0]) else g

    knots, segments = [], []
    cursor = lo
    for a, b in bands:
        left = branch_at(0.5 * (cursor + a))
        knots.append(a)
        segments.append(left)
        # edge data must come from the branches used on the adjacent
        # segments, otherwise the join is only C0
        ba = left
        bb = branch_at(min(hi - 0.5 * margin, b + margin))
        seg = HermiteSegment(a, b,
                             float(ba(np.asarray([a]))[0]), float(bb(np.asarray([b]))[0]),
                             float(ba.deriv(np.asarray([a]))[0]), float(bb.deriv(np.asarray([b]))[0]))
        knots.append(b)
        segments.append(seg)
        cursor = b
    segments.append(branch_at(0.5 * (cursor + hi)))

    pw = PiecewiseFunction(knots, segments, lo, hi)
    pw._envelope = vmax
    return pw
