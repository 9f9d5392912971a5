"""Deterministic quadrature, root finding and sign-region detection on (0, 1).

Every solver in the package reduces to integrals of the form
``int_0^1 f(s) ds`` with integrands that may diverge at the endpoints
(quantiles of unbounded distributions) and may jump at a small number of
known interior ranks (conjugate functions of non-concave utilities).  The
standard grid clips an ``eps`` neighbourhood of each endpoint and the
split helpers cut the domain at known breakpoints so composite
Gauss-Legendre panels never straddle a discontinuity.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from scipy.special import ndtr, ndtri

from .errors import MaxIterations, NonFiniteIntegrand, NoSignChange

DEFAULT_CLIP = 1e-6
PRICING_CLIP = 1e-12
DEFAULT_PANELS = 64
DEFAULT_ORDER = 16

_Z_FLOOR = 1e-15  # rank clamp before mapping to the Gaussian variable


@lru_cache(maxsize=32)
def _gl_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [0, 1], cached per order."""
    x, w = np.polynomial.legendre.leggauss(order)
    return (x + 1.0) / 2.0, w / 2.0


def _panel_nodes(a: float, b: float, panels: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite GL nodes/weights for [a, b] split into equal panels."""
    base_x, base_w = _gl_rule(order)
    edges = np.linspace(a, b, panels + 1)
    widths = np.diff(edges)
    nodes = (edges[:-1, None] + widths[:, None] * base_x[None, :]).ravel()
    weights = (widths[:, None] * base_w[None, :]).ravel()
    return nodes, weights


def _gauss_graded_nodes(
    a: float, b: float, panels: int, order: int
) -> tuple[np.ndarray, np.ndarray]:
    """Composite GL rule on ranks [a, b], graded through z = Phi^{-1}(s).

    Every integrand in this package is driven by Phi^{-1}(s) (lognormal
    quantiles, normal benchmarks), whose derivative blows up at the
    endpoints; integrating in the Gaussian variable removes the
    singularity, so panels converge at analytic rates where uniform rank
    panels stall.
    """
    a = max(a, _Z_FLOOR)
    b = min(b, 1.0 - _Z_FLOOR)
    z_nodes, z_weights = _panel_nodes(float(ndtri(a)), float(ndtri(b)), panels, order)
    nodes = ndtr(z_nodes)
    weights = z_weights * np.exp(-0.5 * z_nodes * z_nodes) / np.sqrt(2.0 * np.pi)
    return nodes, weights


@dataclass(frozen=True)
class Grid:
    """Fixed quadrature rule on [clip, 1 - clip].

    nodes are strictly increasing, weights positive and sum to 1 - 2*clip.
    """

    nodes: np.ndarray
    weights: np.ndarray
    clip: float

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if not (0.0 < self.clip < 0.5):
            raise ValueError("clip must lie in (0, 0.5)")
        if nodes.ndim != 1 or nodes.size == 0 or nodes.shape != weights.shape:
            raise ValueError("nodes/weights must be matching 1-d arrays")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("nodes must be strictly increasing")
        if nodes[0] < self.clip - 1e-15 or nodes[-1] > 1.0 - self.clip + 1e-15:
            raise ValueError("nodes must lie inside [clip, 1 - clip]")
        if np.any(weights <= 0.0):
            raise ValueError("weights must be positive")
        if abs(weights.sum() - (1.0 - 2.0 * self.clip)) > 1e-12:
            raise ValueError("weights must sum to 1 - 2*clip")

    @classmethod
    def gauss_legendre(
        cls,
        panels: int = DEFAULT_PANELS,
        order: int = DEFAULT_ORDER,
        clip: float = DEFAULT_CLIP,
    ) -> "Grid":
        """Composite Gauss-Legendre rule on [clip, 1 - clip].

        Panels are graded through the Gaussian change of variable (see
        _gauss_graded_nodes); the weight sum still equals 1 - 2*clip to
        machine precision because the transformed weight integrates the
        normal density exactly.
        """
        nodes, weights = _gauss_graded_nodes(clip, 1.0 - clip, panels, order)
        return cls(nodes=nodes, weights=weights, clip=clip)


def default_grid() -> Grid:
    return Grid.gauss_legendre()


def pricing_grid(panels: int = 96, order: int = DEFAULT_ORDER, clip: float = PRICING_CLIP) -> Grid:
    """Wide-clip grid for budget integrals.

    Prices int Q(s) Q_rho(1-s) ds carry real mass far into the tails when
    the benchmark is heavy-tailed; this grid clips at 1e-12 instead of
    1e-6.  Utilities are never evaluated on it (their domain guards rely
    on the standard clip).
    """
    return Grid.gauss_legendre(panels=panels, order=order, clip=clip)


def _eval_integrand(f: Callable[[np.ndarray], np.ndarray], nodes: np.ndarray) -> np.ndarray:
    values = np.asarray(f(nodes), dtype=float)
    if values.shape != nodes.shape:
        values = np.broadcast_to(values, nodes.shape)
    if not np.all(np.isfinite(values)):
        bad = nodes[~np.isfinite(values)]
        raise NonFiniteIntegrand(f"integrand not finite at s={bad[:3]}")
    return values


def integrate(f: Callable[[np.ndarray], np.ndarray], grid: Grid) -> float:
    """Quadrature value of int f(s) ds over the grid's clipped domain."""
    return float(np.dot(grid.weights, _eval_integrand(f, grid.nodes)))


def integrate_between(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    panels: int = 8,
    order: int = DEFAULT_ORDER,
) -> float:
    """Gaussian-graded composite GL integral of f over ranks [a, b]."""
    if b <= a:
        return 0.0
    nodes, weights = _gauss_graded_nodes(a, b, panels, order)
    return float(np.dot(weights, _eval_integrand(f, nodes)))


def split_points(a: float, b: float, breakpoints: Iterable[float]) -> list[float]:
    """Sorted edges of [a, b] cut at the interior breakpoints."""
    pts = [a, b]
    for p in breakpoints:
        if a + 1e-14 < p < b - 1e-14:
            pts.append(float(p))
    return sorted(set(pts))


def integrate_split(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    breakpoints: Iterable[float] = (),
    panels: int = 8,
    order: int = DEFAULT_ORDER,
) -> float:
    """Integral of a piecewise-smooth f over [a, b], split at breakpoints."""
    edges = split_points(a, b, breakpoints)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += integrate_between(f, lo, hi, panels=panels, order=order)
    return total


def cumulative_integral(
    f: Callable[[np.ndarray], np.ndarray],
    ts: np.ndarray,
    breakpoints: Iterable[float] = (),
    order: int = 8,
) -> np.ndarray:
    """Running integral F(ts[j]) = int_{ts[0]}^{ts[j]} f, split at breakpoints.

    ts must be sorted ascending; each gap is integrated with a small GL rule
    cut at any breakpoint falling inside it.
    """
    ts = np.asarray(ts, dtype=float)
    if np.any(np.diff(ts) < 0.0):
        raise ValueError("ts must be sorted ascending")
    breaks = np.asarray(sorted(b for b in breakpoints if ts[0] < b < ts[-1]), dtype=float)
    base_x, base_w = _gl_rule(order)
    # refine the partition with the breakpoints, then subdivide each gap so
    # no panel exceeds ~0.35 in the Gaussian variable (gaps between ranks
    # near the endpoints map to huge z spans otherwise)
    edges = np.union1d(ts, breaks)
    z_edges = ndtri(np.clip(edges, _Z_FLOOR, 1.0 - _Z_FLOOR))
    gap_w = np.diff(z_edges)
    n_sub = np.maximum(1, np.ceil(gap_w / 0.35).astype(int))
    gap_index = np.repeat(np.arange(gap_w.size), n_sub)
    frac_hi = np.concatenate([np.arange(1, k + 1) / k for k in n_sub])
    frac_lo = np.concatenate([np.arange(0, k) / k for k in n_sub])
    z_lo = z_edges[gap_index] + gap_w[gap_index] * frac_lo
    z_hi = z_edges[gap_index] + gap_w[gap_index] * frac_hi
    z_widths = z_hi - z_lo
    z_nodes = z_lo[:, None] + z_widths[:, None] * base_x[None, :]
    nodes = ndtr(z_nodes)
    dens = np.exp(-0.5 * z_nodes * z_nodes) / np.sqrt(2.0 * np.pi)
    vals = _eval_integrand(f, nodes.ravel()).reshape(nodes.shape)
    sub_pieces = z_widths * ((vals * dens) @ base_w)
    pieces = np.zeros(gap_w.size)
    np.add.at(pieces, gap_index, sub_pieces)
    cum = np.concatenate([[0.0], np.cumsum(pieces)])
    idx = np.searchsorted(edges, ts)
    return cum[idx]


@dataclass(frozen=True)
class Bracket:
    """A sign-changing interval for a scalar root."""

    lo: float
    hi: float
    f_lo: float
    f_hi: float

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError("bracket requires lo < hi")
        if self.f_lo * self.f_hi > 0.0:
            raise NoSignChange(
                f"f({self.lo})={self.f_lo} and f({self.hi})={self.f_hi} have the same sign"
            )


def bracket_root(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    grow: float = 2.0,
    max_expand: int = 200,
) -> Bracket:
    """Expand [lo, hi] geometrically (upward) until f changes sign."""
    f_lo, f_hi = float(f(lo)), float(f(hi))
    for _ in range(max_expand):
        if f_lo == 0.0 or f_hi == 0.0 or f_lo * f_hi < 0.0:
            return Bracket(lo, hi, f_lo, f_hi)
        lo, f_lo = hi, f_hi
        hi = hi * grow
        f_hi = float(f(hi))
    raise NoSignChange(f"no sign change found up to hi={hi}")


def find_root(
    f: Callable[[float], float],
    bracket: Bracket,
    tol: float = 1e-10,
    max_iter: int = 200,
    f_tol: float | None = None,
) -> float:
    """Bisection with a secant-acceleration step on a valid bracket.

    Stops when the bracket width falls below tol (absolute for |x|<=1,
    relative otherwise) or, if f_tol is given, when |f| <= f_tol.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    lo, hi, f_lo, f_hi = bracket.lo, bracket.hi, bracket.f_lo, bracket.f_hi
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    for _ in range(max_iter):
        width_tol = tol * max(1.0, abs(lo), abs(hi))
        if hi - lo <= width_tol:
            return 0.5 * (lo + hi)
        mid = 0.5 * (lo + hi)
        # secant candidate from the bracket endpoints, used when it falls
        # safely inside; the interval still halves on the bad side
        if f_hi != f_lo:
            sec = hi - f_hi * (hi - lo) / (f_hi - f_lo)
            if lo + 0.1 * (hi - lo) < sec < hi - 0.1 * (hi - lo):
                mid = sec
        f_mid = float(f(mid))
        if f_tol is not None and abs(f_mid) <= f_tol:
            return mid
        if f_mid == 0.0:
            return mid
        if f_lo * f_mid < 0.0:
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
    raise MaxIterations(f"root not localized to {tol} in {max_iter} iterations")


def _refine_crossing(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    f_lo: float,
    f_hi: float,
    tol: float,
) -> float:
    """Bisect a sign change (works for discontinuous f) to width tol."""
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        f_mid = float(f(mid))
        if f_mid == 0.0:
            return mid
        if f_lo * f_mid < 0.0:
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


def find_sign_regions(
    f: Callable[[np.ndarray], np.ndarray],
    grid: Grid | None = None,
    refine_tol: float = 1e-8,
    scan_points: int = 10_000,
    min_width: float = 1e-6,
) -> list[tuple[float, float]]:
    """Maximal disjoint open intervals of (0, 1) on which f < 0.

    Scans a uniform grid on [clip, 1-clip], refines every sign change by
    bisection, and reports runs touching the scan boundary with the exact
    domain endpoints 0 / 1.  Intervals narrower than min_width are dropped
    as numerical noise.
    """
    clip = grid.clip if grid is not None else DEFAULT_CLIP
    xs = np.linspace(clip, 1.0 - clip, scan_points)
    vals = np.asarray(f(xs), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteIntegrand("sign scan hit a non-finite value")
    neg = vals < 0.0
    if not neg.any():
        return []
    # locate runs of consecutive negative nodes
    padded = np.concatenate([[False], neg, [False]])
    starts = np.flatnonzero(padded[1:] & ~padded[:-1])
    ends = np.flatnonzero(~padded[1:] & padded[:-1]) - 1
    regions: list[tuple[float, float]] = []
    for i0, i1 in zip(starts, ends):
        if i0 == 0:
            a = 0.0
        else:
            a = _refine_crossing(f, xs[i0 - 1], xs[i0], vals[i0 - 1], vals[i0], refine_tol)
        if i1 == scan_points - 1:
            b = 1.0
        else:
            b = _refine_crossing(f, xs[i1], xs[i1 + 1], vals[i1], vals[i1 + 1], refine_tol)
        if b - a >= min_width:
            regions.append((float(a), float(b)))
    return regions
