"""Utility families with marginals, conjugates and concave-envelope data.

The conjugate function I(y) = argsup_x [U(x) - x y] drives every solver.
For concave families it is the closed-form inverse marginal.  For the
S-shaped family it needs a liquidation boundary L to be finite, and jumps
at the tangent slope kappa of the concave envelope.  For the four-branch
piecewise family the envelope is located numerically (dense concave hull)
and then refined against the exact branch marginals, so I stays accurate
to root-finder precision rather than grid resolution.

marginal_sup(w) = sup{y > 0 : I(y) >= w} is the exact inverse used by the
poor-performance correction: it equals U'(w) where w lies on the envelope
and the bridge slope where w falls inside an envelope gap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import AtKink, NoConvergence, NoFiniteEnvelope, OutOfDomain
from .numerics import Bracket, bracket_root, find_root

_INF = float("inf")


def _as_float_array(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    return arr, (arr.ndim == 0)


def _ret(arr: np.ndarray, scalar: bool):
    return float(arr) if scalar else arr


@dataclass(frozen=True)
class EnvelopeData:
    """Concave-envelope tangent at the liquidation boundary.

    kappa is the tangent slope, C_liq the tangency abscissa on the concave
    branch; finite is False when no liquidation boundary exists.
    """

    kappa: float
    C_liq: float
    finite: bool


def _check_increasing(u, lo: float, hi: float, n: int = 2000) -> None:
    xs = np.linspace(lo, hi, n)
    vals = u.value(xs)
    if np.any(np.diff(vals) < -1e-10 * np.maximum(1.0, np.abs(vals[:-1]))):
        raise ValueError(f"{type(u).__name__} is not increasing on its domain")


@dataclass(frozen=True)
class PowerUtility:
    """U(x) = x^p / p on x > 0, p < 1, p != 0 (CRRA)."""

    p: float

    def __post_init__(self) -> None:
        if not (self.p < 1.0 and self.p != 0.0):
            raise ValueError("power utility needs p < 1, p != 0")

    domain_lo = 0.0
    is_concave = True
    kink = None
    conjugate_jumps: tuple[float, ...] = ()

    def value(self, x):
        arr, scalar = _as_float_array(x)
        if np.any(arr <= 0.0):
            raise OutOfDomain("power utility defined for x > 0")
        return _ret(arr**self.p / self.p, scalar)

    def marginal(self, x):
        arr, scalar = _as_float_array(x)
        if np.any(arr <= 0.0):
            raise OutOfDomain("power utility defined for x > 0")
        return _ret(arr ** (self.p - 1.0), scalar)

    def conjugate(self, y):
        arr, scalar = _as_float_array(y)
        if np.any(arr <= 0.0):
            raise OutOfDomain("conjugate argument must be positive")
        return _ret(arr ** (1.0 / (self.p - 1.0)), scalar)

    def marginal_sup(self, w):
        arr, scalar = _as_float_array(w)
        out = np.where(arr > 0.0, np.abs(arr) ** (self.p - 1.0), _INF)
        return _ret(out, scalar)

    def descriptor(self) -> dict:
        return {"kind": "power", "p": self.p}


@dataclass(frozen=True)
class LogUtility:
    """U(x) = log(x) on x > 0."""

    domain_lo = 0.0
    is_concave = True
    kink = None
    conjugate_jumps: tuple[float, ...] = ()

    def value(self, x):
        arr, scalar = _as_float_array(x)
        if np.any(arr <= 0.0):
            raise OutOfDomain("log utility defined for x > 0")
        return _ret(np.log(arr), scalar)

    def marginal(self, x):
        arr, scalar = _as_float_array(x)
        if np.any(arr <= 0.0):
            raise OutOfDomain("log utility defined for x > 0")
        return _ret(1.0 / arr, scalar)

    def conjugate(self, y):
        arr, scalar = _as_float_array(y)
        if np.any(arr <= 0.0):
            raise OutOfDomain("conjugate argument must be positive")
        return _ret(1.0 / arr, scalar)

    def marginal_sup(self, w):
        arr, scalar = _as_float_array(w)
        out = np.where(arr > 0.0, 1.0 / np.where(arr > 0.0, arr, 1.0), _INF)
        return _ret(out, scalar)

    def descriptor(self) -> dict:
        return {"kind": "log"}


@dataclass(frozen=True)
class ExponentialUtility:
    """U(x) = -exp(-p x) / p on all of R (CARA).

    The natural domain is unbounded, so the conjugate -log(y)/p is used
    without clamping; the classical multiplier reported for the mixed
    experiment suite is only reproduced by the unclamped form.
    """

    p: float

    def __post_init__(self) -> None:
        if self.p <= 0.0:
            raise ValueError("exponential utility needs p > 0")

    domain_lo = -_INF
    is_concave = True
    kink = None
    conjugate_jumps: tuple[float, ...] = ()

    def value(self, x):
        arr, scalar = _as_float_array(x)
        return _ret(-np.exp(-self.p * arr) / self.p, scalar)

    def marginal(self, x):
        arr, scalar = _as_float_array(x)
        return _ret(np.exp(-self.p * arr), scalar)

    def conjugate(self, y):
        arr, scalar = _as_float_array(y)
        if np.any(arr <= 0.0):
            raise OutOfDomain("conjugate argument must be positive")
        return _ret(-np.log(arr) / self.p, scalar)

    def marginal_sup(self, w):
        arr, scalar = _as_float_array(w)
        return _ret(np.exp(-self.p * arr), scalar)

    def descriptor(self) -> dict:
        return {"kind": "exponential", "p": self.p}


def _solve_tangent(
    u1_value: Callable[[float], float],
    u1_marginal: Callable[[float], float],
    B: float,
    w: float,
    anchor_value: float,
) -> float:
    """Tangency abscissa C > B of the line from (w, anchor) touching U1.

    Solves (U1(C) - anchor) / (C - w) = U1'(C); the defect
    f(C) = U1'(C)(C - w) - U1(C) + anchor is strictly decreasing from
    +inf (infinite marginal at B) so the root is unique.
    """
    if not w < B:
        raise ValueError("tangent anchor must lie strictly below the kink")

    def f(c: float) -> float:
        return u1_marginal(c) * (c - w) - u1_value(c) + anchor_value

    scale = max(1.0, abs(w), abs(B))
    lo = B + 1e-13 * scale
    if f(lo) <= 0.0:
        # marginal too flat numerically right at the kink; nudge outward
        lo = B + 1e-9 * scale
    try:
        bracket = bracket_root(f, lo, max(B + scale, 2.0 * scale))
    except Exception as exc:  # no sign change found
        raise NoConvergence(f"tangent bracket failed for anchor {w}") from exc
    return find_root(f, bracket, tol=1e-13)


@dataclass(frozen=True)
class SShapedUtility:
    """U(x) = x^p / p for x >= 0 and -k (-x)^q for x < 0.

    Concave above the reference point B = 0, convex below, infinite
    marginal at B.  A liquidation boundary L < 0 (when supplied) makes the
    concave envelope finite: the conjugate equals the inverse marginal up
    to the tangent slope kappa and sits at L beyond it.
    """

    p: float
    q: float
    k: float
    liquidation: float | None = None

    kink = 0.0
    is_concave = False

    def __post_init__(self) -> None:
        if not (0.0 < self.p < 1.0 and 0.0 < self.q < 1.0 and self.k > 0.0):
            raise ValueError("need p, q in (0,1) and k > 0")
        if self.liquidation is not None and self.liquidation >= 0.0:
            raise ValueError("liquidation boundary must be negative")
        lo = self.liquidation if self.liquidation is not None else -10.0
        _check_increasing(self, lo, 10.0)
        # Inada: the concave-branch marginal must decay toward zero; a fixed
        # absolute cutoff at 1e8 would reject legitimate p close to 1
        if not self.u1_marginal(1e12) < 1e-3 * self.u1_marginal(1.0):
            raise ValueError("Inada condition violated: marginal does not vanish at infinity")
        if not self.u1_marginal(1e-300) > 1e3 * self.u1_marginal(1.0):
            raise ValueError("marginal must diverge at the reference point")
        object.__setattr__(self, "_env", self._build_envelope())

    @property
    def domain_lo(self) -> float:
        return self.liquidation if self.liquidation is not None else -_INF

    # concave branch pieces (used by the FSD tangent machinery)
    def u1_value(self, x):
        arr, scalar = _as_float_array(x)
        return _ret(arr**self.p / self.p, scalar)

    def u1_marginal(self, x):
        arr, scalar = _as_float_array(x)
        return _ret(arr ** (self.p - 1.0), scalar)

    def u1_inv_marginal(self, y):
        arr, scalar = _as_float_array(y)
        return _ret(arr ** (1.0 / (self.p - 1.0)), scalar)

    def u2_value(self, x):
        arr, scalar = _as_float_array(x)
        return _ret(-self.k * np.abs(arr) ** self.q, scalar)

    def value(self, x):
        arr, scalar = _as_float_array(x)
        if self.liquidation is not None and np.any(arr < self.liquidation - 1e-12):
            raise OutOfDomain("wealth below the liquidation boundary")
        with np.errstate(invalid="ignore"):
            out = np.where(arr >= 0.0, np.abs(arr) ** self.p / self.p, -self.k * np.abs(arr) ** self.q)
        return _ret(out, scalar)

    def marginal(self, x):
        arr, scalar = _as_float_array(x)
        if np.any(arr == 0.0):
            raise AtKink("marginal diverges at the reference point")
        if self.liquidation is not None and np.any(arr < self.liquidation - 1e-12):
            raise OutOfDomain("wealth below the liquidation boundary")
        out = np.where(
            arr > 0.0,
            np.abs(arr) ** (self.p - 1.0),
            self.k * self.q * np.abs(arr) ** (self.q - 1.0),
        )
        return _ret(out, scalar)

    def _build_envelope(self) -> EnvelopeData:
        if self.liquidation is None:
            return EnvelopeData(kappa=float("nan"), C_liq=float("nan"), finite=False)
        L = self.liquidation
        c_liq = _solve_tangent(
            lambda c: float(self.u1_value(c)),
            lambda c: float(self.u1_marginal(c)),
            0.0,
            L,
            float(self.u2_value(L)),
        )
        return EnvelopeData(kappa=float(self.u1_marginal(c_liq)), C_liq=c_liq, finite=True)

    @property
    def envelope(self) -> EnvelopeData:
        return self._env

    @property
    def conjugate_jumps(self) -> tuple[float, ...]:
        return (self._env.kappa,) if self._env.finite else ()

    def conjugate(self, y):
        if not self._env.finite:
            raise NoFiniteEnvelope("S-shaped utility without a liquidation boundary")
        arr, scalar = _as_float_array(y)
        if np.any(arr <= 0.0):
            raise OutOfDomain("conjugate argument must be positive")
        out = np.where(
            arr <= self._env.kappa,
            arr ** (1.0 / (self.p - 1.0)),
            self.liquidation,
        )
        return _ret(out, scalar)

    def marginal_sup(self, w):
        if not self._env.finite:
            raise NoFiniteEnvelope("S-shaped utility without a liquidation boundary")
        arr, scalar = _as_float_array(w)
        arr = np.atleast_1d(arr)
        out = np.empty_like(arr)
        hi = arr > self._env.C_liq
        mid = (arr > self.liquidation) & ~hi
        out[hi] = np.abs(arr[hi]) ** (self.p - 1.0)
        out[mid] = self._env.kappa
        out[~hi & ~mid] = _INF
        return _ret(out[0] if scalar else out, scalar)

    def descriptor(self) -> dict:
        d = {"kind": "s-shaped", "p": self.p, "q": self.q, "k": self.k}
        if self.liquidation is not None:
            d["liquidation"] = self.liquidation
        return d


def fsd_tangent(u: SShapedUtility, w: float) -> float:
    """State-dependent tangent point C in (B, inf) for a floor w below B."""
    if not isinstance(u, SShapedUtility):
        raise TypeError("tangent construction applies to S-shaped utilities")
    return _solve_tangent(
        lambda c: float(u.u1_value(c)),
        lambda c: float(u.u1_marginal(c)),
        u.kink,
        float(w),
        float(u.value(w)),
    )


def fsd_tangent_many(u: SShapedUtility, ws: np.ndarray) -> np.ndarray:
    """Vectorised tangent points for an array of floors below the kink.

    Bisects all states simultaneously on the tangency defect, which is
    strictly decreasing in C for every anchor.
    """
    ws = np.asarray(ws, dtype=float)
    if np.any(ws >= u.kink):
        raise ValueError("all anchors must lie below the kink")
    anchors = u.value(ws)

    def defect(c: np.ndarray) -> np.ndarray:
        return u.u1_marginal(c) * (c - ws) - u.u1_value(c) + anchors

    scale = np.maximum(1.0, np.abs(ws))
    lo = np.full_like(ws, u.kink) + 1e-13 * scale
    hi = np.maximum(u.kink + scale, 2.0 * scale)
    d_hi = defect(hi)
    for _ in range(200):
        grow = d_hi > 0.0
        if not grow.any():
            break
        hi[grow] *= 2.0
        d_hi = defect(hi)
    else:
        raise NoConvergence("tangent expansion failed")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        pos = defect(mid) > 0.0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class _Branch:
    """One closed-form branch of the piecewise utility."""

    lo: float
    hi: float
    value: Callable[[np.ndarray], np.ndarray]
    marginal: Callable[[np.ndarray], np.ndarray]
    inv_marginal: Callable[[np.ndarray], np.ndarray]
    concave: bool


@dataclass(frozen=True)
class Bridge:
    """Linear segment of the concave envelope spanning a non-concave gap."""

    slope: float
    x_lo: float
    x_hi: float


def _upper_concave_hull(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Indices of the upper concave hull of points sorted by x."""
    hull: list[int] = []
    for i in range(xs.size):
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            # drop k when it lies below the chord j -> i
            if (ys[k] - ys[j]) * (xs[i] - xs[j]) <= (ys[i] - ys[j]) * (xs[k] - xs[j]):
                hull.pop()
            else:
                break
        hull.append(i)
    return np.asarray(hull, dtype=int)


class Piecewise4Utility:
    """Four-branch double-S-shaped utility with reference kinks at 0 and 2.

    Each gain/loss pair is anchored at its kink, so the marginal diverges
    on both sides of 0 and of 2:

        (x - 2)^p1              x >= 2
        -lam1 * (2 - x)^q1      1 <= x < 2
        x^p2 + c                0 <= x < 1
        c - lam2 * (-x)^q2      L <= x < 0

    c defaults to -lam1 - 1, the unique value joining the branches
    continuously at x = 1 (the kink joins are continuous for any c);
    other values are accepted and the join gaps reported, not enforced.

    The concave envelope is located by a dense upper-hull sweep, then each
    bridge is refined by root-finding on the exact branch marginals; the
    conjugate and its inverse marginal_sup are evaluated from the refined
    structure.
    """

    kink = None
    is_concave = False

    def __init__(
        self,
        p1: float,
        q1: float,
        p2: float,
        q2: float,
        lam1: float,
        lam2: float,
        c: float | None = None,
        liquidation: float = -1.0,
    ) -> None:
        for name, v in (("p1", p1), ("q1", q1), ("p2", p2), ("q2", q2)):
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if lam1 <= 0.0 or lam2 <= 0.0:
            raise ValueError("lam1, lam2 must be positive")
        if not liquidation < 0.0:
            raise ValueError("liquidation boundary must be negative")
        self.p1, self.q1, self.p2, self.q2 = p1, q1, p2, q2
        self.lam1, self.lam2 = lam1, lam2
        self.c = float(c) if c is not None else -lam1 - 1.0
        self.liquidation = float(liquidation)
        self.domain_lo = self.liquidation
        self._branches = self._make_branches()
        _check_increasing(self, self.liquidation, 10.0)
        self.join_gaps = self._join_gaps()
        self._bridges = self._build_envelope()

    def _make_branches(self) -> list[_Branch]:
        p1, q1, p2, q2 = self.p1, self.q1, self.p2, self.q2
        lam1, lam2, c, L = self.lam1, self.lam2, self.c, self.liquidation
        return [
            _Branch(
                lo=L,
                hi=0.0,
                value=lambda x: c - lam2 * np.abs(x) ** q2,
                marginal=lambda x: lam2 * q2 * np.abs(x) ** (q2 - 1.0),
                inv_marginal=lambda y: -((np.asarray(y) / (lam2 * q2)) ** (1.0 / (q2 - 1.0))),
                concave=False,
            ),
            _Branch(
                lo=0.0,
                hi=1.0,
                value=lambda x: np.abs(x) ** p2 + c,
                marginal=lambda x: p2 * np.abs(x) ** (p2 - 1.0),
                inv_marginal=lambda y: (np.asarray(y) / p2) ** (1.0 / (p2 - 1.0)),
                concave=True,
            ),
            _Branch(
                lo=1.0,
                hi=2.0,
                value=lambda x: -lam1 * np.abs(2.0 - x) ** q1,
                marginal=lambda x: lam1 * q1 * np.abs(2.0 - x) ** (q1 - 1.0),
                inv_marginal=lambda y: 2.0 - (np.asarray(y) / (lam1 * q1)) ** (1.0 / (q1 - 1.0)),
                concave=False,
            ),
            _Branch(
                lo=2.0,
                hi=_INF,
                value=lambda x: np.abs(x - 2.0) ** p1,
                marginal=lambda x: p1 * np.abs(x - 2.0) ** (p1 - 1.0),
                inv_marginal=lambda y: 2.0 + (np.asarray(y) / p1) ** (1.0 / (p1 - 1.0)),
                concave=True,
            ),
        ]

    def _branch_index(self, x: np.ndarray) -> np.ndarray:
        edges = np.asarray([b.lo for b in self._branches][1:])
        return np.searchsorted(edges, x, side="right")

    def value(self, x):
        arr, scalar = _as_float_array(x)
        if np.any(arr < self.liquidation - 1e-12):
            raise OutOfDomain("wealth below the liquidation boundary")
        idx = self._branch_index(arr)
        out = np.empty_like(arr)
        for k, br in enumerate(self._branches):
            m = idx == k
            if m.any():
                out[m] = br.value(arr[m])
        return _ret(out, scalar)

    def marginal(self, x):
        arr, scalar = _as_float_array(x)
        if np.any(arr < self.liquidation - 1e-12):
            raise OutOfDomain("wealth below the liquidation boundary")
        if np.any((arr == 0.0) | (arr == 2.0)):
            raise AtKink("marginal diverges at a reference kink")
        idx = self._branch_index(arr)
        out = np.empty_like(arr)
        for k, br in enumerate(self._branches):
            m = idx == k
            if m.any():
                out[m] = br.marginal(arr[m])
        return _ret(out, scalar)

    def _join_gaps(self) -> list[float]:
        gaps = []
        for left, right in zip(self._branches[:-1], self._branches[1:]):
            gaps.append(float(right.value(np.asarray(right.lo)) - left.value(np.asarray(right.lo))))
        return gaps

    def _build_envelope(self) -> tuple[Bridge, ...]:
        L = self.liquidation
        x_max = 60.0
        pieces = []
        for br in self._branches:
            hi = min(br.hi, x_max)
            pieces.append(np.linspace(br.lo, hi, 50_000, endpoint=False))
        xs = np.unique(np.concatenate(pieces + [np.asarray([x_max])]))
        xs = xs[xs >= L]
        ys = self.value(xs)
        hull = _upper_concave_hull(xs, ys)
        # a genuine bridge skips a macroscopic run of sample points; smooth
        # concave arcs keep (almost) every sampled point on the hull
        skipped = np.diff(hull)
        bridges: list[Bridge] = []
        for i in np.flatnonzero(skipped > 50):
            bridges.append(self._refine_bridge(float(xs[hull[i]]), float(xs[hull[i + 1]])))
        if bridges and max(b.x_hi for b in bridges) > 0.75 * x_max:
            raise NoConvergence("envelope bridge escaped the search window")
        return tuple(sorted(bridges, key=lambda b: -b.slope))

    def _marginal_at(self, x: float) -> float:
        return float(self.marginal(np.asarray(x)))

    def _value_at(self, x: float) -> float:
        return float(self.value(np.asarray(x)))

    def _inv_right_of(self, s: float, x_from: float) -> float:
        """Largest x with envelope-arc slope s, searching branches right of x_from."""
        for br in self._branches:
            if br.hi <= x_from or not br.concave:
                continue
            lo = max(br.lo, x_from)
            m_lo = float(br.marginal(np.asarray(lo + 1e-14))) if lo > 0 else _INF
            m_hi = float(br.marginal(np.asarray(br.hi - 1e-14))) if np.isfinite(br.hi) else 0.0
            if m_hi <= s <= m_lo or np.isclose(s, m_hi) or (s >= m_hi and s <= m_lo):
                x = float(br.inv_marginal(np.asarray(s)))
                return float(np.clip(x, lo, br.hi))
            if s > m_lo:
                # slope too steep for this branch: tangency sits at its corner
                return lo
        raise NoConvergence(f"no inverse marginal right of {x_from} at slope {s}")

    def _refine_bridge(self, xa: float, xb: float) -> Bridge:
        L = self.liquidation
        if xa <= L + 1e-9 * max(1.0, abs(L)):
            # corner bridge anchored at the domain boundary
            vL = self._value_at(L)

            def g(x: float) -> float:
                return self._marginal_at(x) * (x - L) - self._value_at(x) + vL

            lo, hi = xb, xb
            w = max(1e-4, 1e-3 * abs(xb))
            for _ in range(60):
                lo, hi = max(lo - w, L + 1e-12), hi + w
                g_lo, g_hi = g(lo), g(hi)
                if g_lo == 0.0:
                    return Bridge(self._marginal_at(lo), L, lo)
                if g_lo * g_hi < 0.0:
                    root = find_root(g, Bracket(lo, hi, g_lo, g_hi), tol=1e-13)
                    return Bridge(self._marginal_at(root), L, root)
                w *= 2.0
            raise NoConvergence("corner bridge refinement failed")

        # two-sided tangency: slope s with U'(xa)=U'(xb)=s and matching chord
        left_branch = self._branches[int(self._branch_index(np.asarray(xa)))]

        def xa_of(s: float) -> float:
            x = float(left_branch.inv_marginal(np.asarray(s)))
            return float(np.clip(x, left_branch.lo + 1e-14, left_branch.hi - 1e-14))

        def G(s: float) -> float:
            a = xa_of(s)
            b = self._inv_right_of(s, left_branch.hi)
            return self._value_at(b) - self._value_at(a) - s * (b - a)

        s0 = (self._value_at(xb) - self._value_at(xa)) / (xb - xa)
        lo_s, hi_s = 0.5 * s0, 2.0 * s0
        g_lo, g_hi = G(lo_s), G(hi_s)
        for _ in range(80):
            if g_lo * g_hi <= 0.0:
                break
            lo_s *= 0.5
            hi_s *= 2.0
            g_lo, g_hi = G(lo_s), G(hi_s)
        else:
            raise NoConvergence("bridge slope bracket failed")
        # G is strictly decreasing in s; plain bisection
        for _ in range(200):
            mid = 0.5 * (lo_s + hi_s)
            gm = G(mid)
            if abs(hi_s - lo_s) <= 1e-14 * max(1.0, abs(mid)):
                break
            if gm > 0.0:
                lo_s = mid
            else:
                hi_s = mid
        s_star = 0.5 * (lo_s + hi_s)
        return Bridge(s_star, xa_of(s_star), self._inv_right_of(s_star, left_branch.hi))

    @property
    def bridges(self) -> tuple[Bridge, ...]:
        return self._bridges

    @property
    def envelope(self) -> EnvelopeData:
        """Tangent data of the liquidation-corner bridge."""
        first = self._bridges[0]
        return EnvelopeData(kappa=first.slope, C_liq=first.x_hi, finite=True)

    @property
    def conjugate_jumps(self) -> tuple[float, ...]:
        return tuple(b.slope for b in self._bridges)

    def conjugate(self, y):
        arr, scalar = _as_float_array(y)
        arr = np.atleast_1d(arr)
        if np.any(arr <= 0.0):
            raise OutOfDomain("conjugate argument must be positive")
        slopes_asc = np.asarray([b.slope for b in reversed(self._bridges)])
        m = len(self._bridges)
        arc = m - np.searchsorted(slopes_asc, arr, side="left")
        out = np.empty_like(arr)
        for a in np.unique(arc):
            mask = arc == a
            if a == 0:
                lo = self.liquidation
                hi = self._bridges[0].x_lo if m else _INF
            else:
                lo = self._bridges[a - 1].x_hi
                hi = self._bridges[a].x_lo if a < m else _INF
            if hi - lo <= 1e-12:
                out[mask] = lo
                continue
            out[mask] = self._invert_arc(arr[mask], lo, hi)
        return _ret(out[0] if scalar else out, scalar)

    def _invert_arc(self, ys: np.ndarray, lo: float, hi: float) -> np.ndarray:
        """Invert the envelope derivative on the arc [lo, hi] (slopes decrease)."""
        out = np.full_like(ys, np.nan)
        remaining = np.ones(ys.shape, dtype=bool)
        for br in self._branches:
            b_lo, b_hi = max(br.lo, lo), min(br.hi, hi)
            if b_hi <= b_lo or not br.concave:
                continue
            m_hi = float(br.marginal(np.asarray(b_hi - 1e-14))) if np.isfinite(b_hi) else 0.0
            take = remaining & (ys >= m_hi - 1e-13)
            if take.any():
                x = br.inv_marginal(ys[take])
                out[take] = np.clip(x, b_lo, b_hi)
                remaining &= ~take
        if remaining.any():
            # flatter than the final branch edge: tangency at the arc's right end
            out[remaining] = hi
        return out

    def marginal_sup(self, w):
        arr, scalar = _as_float_array(w)
        arr = np.atleast_1d(arr)
        out = np.full_like(arr, np.nan)
        done = np.zeros(arr.shape, dtype=bool)
        below = arr <= self.liquidation
        out[below] = _INF
        done |= below
        for b in self._bridges:
            inside = ~done & (arr > b.x_lo) & (arr <= b.x_hi)
            out[inside] = b.slope
            done |= inside
        if not done.all():
            rest = np.flatnonzero(~done)
            x = arr[rest]
            # left-closed branch lookup: at shared edges the left limit of the
            # slope is the exact sup{y : I(y) >= w}
            edges = np.asarray([b.lo for b in self._branches][1:])
            idx = np.searchsorted(edges, x, side="left")
            vals = np.empty_like(x)
            for k, br in enumerate(self._branches):
                m = idx == k
                if m.any():
                    with np.errstate(divide="ignore"):
                        vals[m] = br.marginal(x[m])
            out[rest] = vals
        return _ret(out[0] if scalar else out, scalar)

    def descriptor(self) -> dict:
        return {
            "kind": "piecewise4",
            "p1": self.p1,
            "q1": self.q1,
            "p2": self.p2,
            "q2": self.q2,
            "lam1": self.lam1,
            "lam2": self.lam2,
            "c": self.c,
            "liquidation": self.liquidation,
        }


def from_config(cfg: dict):
    """Build a utility from a {kind, parameters} config object."""
    spec = dict(cfg)
    kind = spec.pop("kind", None)
    if kind == "power":
        return PowerUtility(**spec)
    if kind == "log":
        return LogUtility(**spec)
    if kind == "exponential":
        return ExponentialUtility(**spec)
    if kind == "s-shaped":
        return SShapedUtility(**spec)
    if kind == "piecewise4":
        return Piecewise4Utility(**spec)
    raise ValueError(f"unknown utility kind {kind!r}")
