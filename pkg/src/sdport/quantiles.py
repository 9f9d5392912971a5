"""Quantile functions as first-class values.

Parametric families used as benchmarks, piecewise composites representing
solver output, and a tabulated form for externally supplied curves.  All
evaluation is vectorised over ranks in the open interval (0, 1) and every
constructor grid-checks monotonicity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri

from .errors import OutOfDomain
from .numerics import Grid, integrate

_MONO_CHECK_POINTS = 1000
_MONO_TOL = 1e-10


def norm_ppf(s):
    """Standard normal quantile Phi^{-1}, vectorised."""
    return ndtri(s)


def _as_ranks(s) -> np.ndarray:
    arr = np.asarray(s, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise OutOfDomain("rank must lie strictly inside (0, 1)")
    return arr


def _scalar_ok(x, s) -> np.ndarray | float:
    return float(x) if np.isscalar(s) or np.asarray(s).ndim == 0 else x


class Quantile:
    """Common evaluation/validation behaviour for quantile values."""

    def eval(self, s):
        arr = _as_ranks(s)
        return _scalar_ok(self._eval(arr), s)

    def __call__(self, s):
        return self.eval(s)

    def _eval(self, s: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def breakpoints(self) -> tuple[float, ...]:
        """Interior ranks where the function kinks or jumps (for quadrature)."""
        return ()

    def _check_monotone(self) -> None:
        eps = 1e-9
        ss = np.linspace(eps, 1.0 - eps, _MONO_CHECK_POINTS)
        vals = self._eval(ss)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"{type(self).__name__} not finite on (0, 1)")
        if np.any(np.diff(vals) < -_MONO_TOL * np.maximum(1.0, np.abs(vals[:-1]))):
            raise ValueError(f"{type(self).__name__} is not nondecreasing on (0, 1)")


@dataclass(frozen=True)
class LognormalQuantile(Quantile):
    """exp(sigma0 * Phi^{-1}(t) + mu0) + shift."""

    mu0: float
    sigma0: float
    shift: float = 0.0

    def __post_init__(self) -> None:
        if self.sigma0 <= 0.0:
            raise ValueError("sigma0 must be positive")
        self._check_monotone()

    def _eval(self, s: np.ndarray) -> np.ndarray:
        return np.exp(self.sigma0 * norm_ppf(s) + self.mu0) + self.shift

    def rank_of(self, v: float) -> float:
        """Inverse quantile, clipped to (0, 1)."""
        if v <= self.shift:
            return 0.0
        from scipy.special import ndtr

        return float(ndtr((np.log(v - self.shift) - self.mu0) / self.sigma0))

    def descriptor(self) -> dict:
        return {"family": "lognormal", "mu0": self.mu0, "sigma0": self.sigma0, "shift": self.shift}


@dataclass(frozen=True)
class NormalQuantile(Quantile):
    """sigma0 * Phi^{-1}(t) + mu0."""

    mu0: float
    sigma0: float

    def __post_init__(self) -> None:
        if self.sigma0 <= 0.0:
            raise ValueError("sigma0 must be positive")
        self._check_monotone()

    def _eval(self, s: np.ndarray) -> np.ndarray:
        return self.sigma0 * norm_ppf(s) + self.mu0

    def rank_of(self, v: float) -> float:
        from scipy.special import ndtr

        return float(ndtr((v - self.mu0) / self.sigma0))

    def descriptor(self) -> dict:
        return {"family": "normal", "mu0": self.mu0, "sigma0": self.sigma0}


@dataclass(frozen=True)
class ExponentialQuantile(Quantile):
    """-log(1 - t) / rate + shift."""

    rate: float
    shift: float = 0.0

    def __post_init__(self) -> None:
        if self.rate <= 0.0:
            raise ValueError("rate must be positive")
        self._check_monotone()

    def _eval(self, s: np.ndarray) -> np.ndarray:
        return -np.log1p(-s) / self.rate + self.shift

    def rank_of(self, v: float) -> float:
        if v <= self.shift:
            return 0.0
        return float(-np.expm1(-self.rate * (v - self.shift)))

    def descriptor(self) -> dict:
        return {"family": "exponential", "rate": self.rate, "shift": self.shift}


@dataclass(frozen=True)
class UniformAffineQuantile(Quantile):
    """slope * t + intercept (slope >= 0; slope 0 is a point mass)."""

    slope: float
    intercept: float = 0.0

    def __post_init__(self) -> None:
        if self.slope < 0.0:
            raise ValueError("slope must be nonnegative")
        self._check_monotone()

    def _eval(self, s: np.ndarray) -> np.ndarray:
        return self.slope * s + self.intercept

    def rank_of(self, v: float) -> float:
        if self.slope == 0.0:
            return 0.0 if v <= self.intercept else 1.0
        return float(np.clip((v - self.intercept) / self.slope, 0.0, 1.0))

    def descriptor(self) -> dict:
        return {"family": "uniform-affine", "slope": self.slope, "intercept": self.intercept}


@dataclass(frozen=True)
class PolynomialQuantile(Quantile):
    """sum_j coeffs[j] * t^j; accepted only if monotone on (0, 1)."""

    coeffs: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        self._check_monotone()

    def _eval(self, s: np.ndarray) -> np.ndarray:
        return np.polynomial.polynomial.polyval(s, np.asarray(self.coeffs))

    def rank_of(self, v: float) -> float:
        eps = 1e-12
        lo, hi = eps, 1.0 - eps
        if v <= float(self._eval(np.asarray(lo))):
            return 0.0
        if v >= float(self._eval(np.asarray(hi))):
            return 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if float(self._eval(np.asarray(mid))) < v:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def descriptor(self) -> dict:
        return {"family": "polynomial", "coeffs": list(self.coeffs)}


@dataclass(frozen=True)
class Segment:
    """One piece of a composite quantile.

    tag is one of 'classic-shifted' (conjugate form with a flat correction
    level), 'benchmark' (tracking the constraint quantile) or
    'explicit-curve'.
    """

    tag: str
    fn: Callable[[np.ndarray], np.ndarray]
    y_level: float | None = None


class PiecewiseQuantile(Quantile):
    """Composite quantile over breakpoints 0 = s_0 < ... < s_{K+1} = 1.

    Segment k covers the half-open interval (s_k, s_{k+1}]; the last one is
    open at 1.  Global monotonicity is verified on a grid (jumps upward are
    legitimate quantile behaviour, decreases are not); continuity is
    reported via join_gaps, not enforced.
    """

    def __init__(
        self,
        breakpoints: Sequence[float],
        segments: Sequence[Segment],
        extra_breakpoints: Sequence[float] = (),
    ) -> None:
        bp = np.asarray(breakpoints, dtype=float)
        if bp.ndim != 1 or bp.size < 2 or bp[0] != 0.0 or bp[-1] != 1.0:
            raise ValueError("breakpoints must run from 0.0 to 1.0")
        if np.any(np.diff(bp) <= 0.0):
            raise ValueError("breakpoints must be strictly increasing")
        if len(segments) != bp.size - 1:
            raise ValueError("need exactly one segment per breakpoint interval")
        self._bp = bp
        self._segments = list(segments)
        self._extra = tuple(float(b) for b in extra_breakpoints if 0.0 < b < 1.0)
        self.join_gaps = self._verify()

    @property
    def segment_breakpoints(self) -> np.ndarray:
        return self._bp.copy()

    @property
    def segments(self) -> list[Segment]:
        return list(self._segments)

    def breakpoints(self) -> tuple[float, ...]:
        inner = [float(b) for b in self._bp[1:-1]]
        return tuple(sorted(set(inner) | set(self._extra)))

    def _eval(self, s: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._bp[1:-1], s, side="left")
        out = np.empty_like(s)
        for k, seg in enumerate(self._segments):
            mask = idx == k
            if mask.any():
                out[mask] = seg.fn(s[mask])
        return out

    def _verify(self) -> list[float]:
        eps = 1e-9
        gaps = []
        prev_hi = None
        for k, seg in enumerate(self._segments):
            lo = max(self._bp[k], eps)
            hi = min(self._bp[k + 1], 1.0 - eps)
            ss = np.linspace(lo + eps, hi - eps if k == len(self._segments) - 1 else hi, 200)
            vals = np.asarray(seg.fn(ss), dtype=float)
            if not np.all(np.isfinite(vals)):
                raise ValueError("piecewise segment not finite")
            scale = np.maximum(1.0, np.abs(vals[:-1]))
            if np.any(np.diff(vals) < -1e-8 * scale):
                raise ValueError("piecewise segment is decreasing")
            if prev_hi is not None:
                gaps.append(float(vals[0] - prev_hi))
                if vals[0] - prev_hi < -1e-8 * max(1.0, abs(prev_hi)):
                    raise ValueError(
                        f"piecewise quantile decreases across breakpoint s={self._bp[k]:.6g}"
                    )
            prev_hi = float(vals[-1])
        return gaps

    def descriptor(self) -> dict:
        return {
            "family": "piecewise",
            "breakpoints": [float(b) for b in self._bp],
            "segments": [
                {"tag": seg.tag, **({"y_level": seg.y_level} if seg.y_level is not None else {})}
                for seg in self._segments
            ],
        }


class TabulatedQuantile(Quantile):
    """Linear interpolation through (rank, value) pairs, e.g. from a CSV."""

    def __init__(self, ranks: Sequence[float], values: Sequence[float]) -> None:
        r = np.asarray(ranks, dtype=float)
        v = np.asarray(values, dtype=float)
        if r.ndim != 1 or r.size < 2 or r.shape != v.shape:
            raise ValueError("need matching 1-d rank/value arrays with >= 2 rows")
        order = np.argsort(r)
        self._r, self._v = r[order], v[order]
        if np.any(self._r <= 0.0) or np.any(self._r >= 1.0):
            raise ValueError("ranks must lie inside (0, 1)")
        if np.any(np.diff(self._r) <= 0.0):
            raise ValueError("ranks must be distinct")
        if np.any(np.diff(self._v) < -1e-8 * np.maximum(1.0, np.abs(self._v[:-1]))):
            raise ValueError("tabulated quantile is not nondecreasing")

    def _eval(self, s: np.ndarray) -> np.ndarray:
        return np.interp(s, self._r, self._v)

    def descriptor(self) -> dict:
        return {"family": "tabulated", "points": int(self._r.size)}


def from_config(cfg: dict) -> Quantile:
    """Build a quantile from a {family, parameters} config object."""
    spec = dict(cfg)
    family = spec.pop("family", None)
    builders = {
        "lognormal": LognormalQuantile,
        "normal": NormalQuantile,
        "exponential": ExponentialQuantile,
        "uniform-affine": UniformAffineQuantile,
        "polynomial": PolynomialQuantile,
    }
    if family not in builders:
        raise ValueError(f"unknown quantile family {family!r}")
    if family == "polynomial":
        return PolynomialQuantile(coeffs=tuple(spec["coeffs"]))
    return builders[family](**spec)


def minimal_budget(q0: Quantile, kernel: Quantile, grid: Grid) -> float:
    """Price of the benchmark: int_0^1 Q0(s) Q_rho(1-s) ds."""
    return integrate(lambda s: q0.eval(s) * kernel.eval(1.0 - s), grid)
