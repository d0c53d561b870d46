"""Probability measures on a truncated uniform 1-D grid.

A :class:`GridDensity` is the discrete stand-in for a strictly positive
density with finite second moment.  All quadrature is trapezoidal, all
CDF/quantile machinery is the piecewise-linear generalized inverse, and
every operation here is a pure function of immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .errors import (
    DomainError,
    GridMismatch,
    NonMonotoneMap,
    NonPositiveError,
    TruncationError,
)

MASS_TOL = 1e-10          # normalized densities must integrate to 1 within this
TRUNCATION_TOL = 1e-8     # admissible mass outside the truncated domain


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.asarray(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``n`` nodes on ``[lower, upper]``."""

    lower: float
    upper: float
    n: int

    def __post_init__(self):
        if self.n < 16:
            raise DomainError(f"grid needs at least 16 nodes, got {self.n}")
        if not self.upper > self.lower:
            raise DomainError("grid upper bound must exceed lower bound")

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / (self.n - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        return _readonly(self.lower + self.spacing * np.arange(self.n))

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return _readonly(w)

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoid quadrature of node samples."""
        return float(np.trapezoid(values, dx=self.spacing))

    def interior_slice(self, fraction: float = 0.8) -> slice:
        """Index slice keeping the central ``fraction`` of nodes.

        Diagnostics exclude the truncation boundary layer; the default
        drops the outer 10% of nodes on each side.
        """
        skip = int(round(0.5 * (1.0 - fraction) * self.n))
        return slice(skip, self.n - skip)


def grad_central(values: np.ndarray, spacing: float) -> np.ndarray:
    """First derivative, O(h^2): central interior, one-sided 3-point ends."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * spacing)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * spacing)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * spacing)
    return out


def grad_central4(values: np.ndarray, spacing: float) -> np.ndarray:
    """First derivative, O(h^4) on the interior, degrading to O(h^2) at edges."""
    v = np.asarray(values, dtype=float)
    out = grad_central(v, spacing)
    out[2:-2] = (-v[4:] + 8.0 * v[3:-1] - 8.0 * v[1:-3] + v[:-4]) / (12.0 * spacing)
    return out


def second_central(values: np.ndarray, spacing: float) -> np.ndarray:
    """Second derivative, O(h^2): central interior, one-sided 4-point ends."""
    v = np.asarray(values, dtype=float)
    h2 = spacing * spacing
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h2
    return out


@dataclass(frozen=True)
class GridDensity:
    """Strictly positive probability density sampled at grid nodes.

    Invariants: every value > 0 and the trapezoid integral equals one
    within ``MASS_TOL``.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _readonly(self.values)
        object.__setattr__(self, "values", v)
        if v.shape != (self.grid.n,):
            raise DomainError(f"expected {self.grid.n} values, got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v <= 0.0):
            raise NonPositiveError("density values must be finite and strictly positive")
        mass = self.grid.integrate(v)
        if abs(mass - 1.0) > MASS_TOL:
            raise NonPositiveError(f"density mass {mass!r} deviates from 1 beyond {MASS_TOL}")

    @classmethod
    def from_unnormalized(cls, grid: Grid, values: np.ndarray) -> "GridDensity":
        v = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(v)) or np.any(v <= 0.0):
            raise NonPositiveError("density values must be finite and strictly positive")
        return cls(grid, v / grid.integrate(v))

    @property
    def log_values(self) -> np.ndarray:
        return np.log(self.values)

    def mean(self) -> float:
        return self.grid.integrate(self.grid.nodes * self.values)

    def variance(self) -> float:
        m = self.mean()
        return self.grid.integrate((self.grid.nodes - m) ** 2 * self.values)

    def to_csv(self, path) -> None:
        rows = ["x,density"]
        for x, d in zip(self.grid.nodes, self.values):
            rows.append(f"{x:.17g},{d:.17g}")
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        xs, vals = data[:, 0], data[:, 1]
        grid = Grid(float(xs[0]), float(xs[-1]), len(xs))
        return cls(grid, vals)


@dataclass(frozen=True)
class DensitySpec:
    """Functional form of a density proportional to exp(-f).

    ``log_norm`` is the log of the full-line integral of exp(-f); with the
    default 0 the spec is taken as already normalized on the line.  ``grad``
    and ``hess`` are f' and f'' and must stay finite (bounded f'' is the
    discrete stand-in for the bounded-derivative assumption the flow
    operators rely on).
    """

    log_density_neg: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    log_norm: float = 0.0

    def f(self, x) -> np.ndarray:
        return np.asarray(self.log_density_neg(np.asarray(x, dtype=float))) + self.log_norm

    @classmethod
    def gaussian(cls, mean: float, variance: float) -> "DensitySpec":
        if variance <= 0:
            raise DomainError("variance must be positive")
        c = 0.5 * math.log(2.0 * math.pi * variance)
        return cls(
            log_density_neg=lambda x: (x - mean) ** 2 / (2.0 * variance) + c,
            grad=lambda x: (x - mean) / variance,
            hess=lambda x: np.full_like(np.asarray(x, dtype=float), 1.0 / variance),
        )

    @classmethod
    def uniform(cls, lower: float, upper: float) -> "DensitySpec":
        if upper <= lower:
            raise DomainError("need upper > lower")
        c = math.log(upper - lower)
        return cls(
            log_density_neg=lambda x: np.full_like(np.asarray(x, dtype=float), c),
            grad=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            hess=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        )

    def validate_on(self, grid: Grid) -> None:
        for fn, name in ((self.f, "f"), (self.grad, "grad"), (self.hess, "hess")):
            vals = np.asarray(fn(grid.nodes))
            if not np.all(np.isfinite(vals)):
                raise DomainError(f"DensitySpec.{name} is not finite on the grid")


@dataclass(frozen=True)
class GaussianMeasure:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise DomainError("variance must be positive")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def discretize(spec: DensitySpec, grid: Grid) -> GridDensity:
    """Sample exp(-f)/Z on the grid and renormalize.

    Raises :class:`TruncationError` when the normalized density carries less
    than ``1 - TRUNCATION_TOL`` of its mass on the grid, so heavy tails are
    rejected instead of silently clipped.
    """
    spec.validate_on(grid)
    raw = np.exp(-spec.f(grid.nodes))
    if not np.all(np.isfinite(raw)) or np.any(raw <= 0.0):
        raise NonPositiveError("exp(-f) must be finite and positive on the grid")
    mass = grid.integrate(raw)
    if mass < 1.0 - TRUNCATION_TOL:
        raise TruncationError(
            f"density keeps only {mass!r} of its mass on [{grid.lower}, {grid.upper}]"
        )
    return GridDensity(grid, raw / mass)


def cdf_values(d: GridDensity) -> np.ndarray:
    """Piecewise-linear CDF at the nodes: starts at 0, clamped to end at 1."""
    v = d.values
    h = d.grid.spacing
    out = np.empty(d.grid.n)
    out[0] = 0.0
    np.cumsum(0.5 * h * (v[1:] + v[:-1]), out=out[1:])
    out /= out[-1]
    np.clip(out, 0.0, 1.0, out=out)
    out[-1] = 1.0
    return out


def quantile(d: GridDensity, p):
    """Generalized inverse of the piecewise-linear CDF.

    Accepts a scalar or an array of probabilities; strict positivity of the
    density makes the CDF strictly increasing, so the left-continuous
    inverse is plain linear interpolation.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr < 0.0) or np.any(p_arr > 1.0):
        raise DomainError("probabilities must lie in [0, 1]")
    out = np.interp(p_arr, cdf_values(d), d.grid.nodes)
    return float(out) if np.isscalar(p) or p_arr.ndim == 0 else out


def kl_divergence(p: GridDensity, q: GridDensity) -> float:
    """Trapezoid quadrature of p log(p/q); nonnegative up to quadrature error."""
    if p.grid != q.grid:
        raise GridMismatch("KL divergence needs both densities on one grid")
    return p.grid.integrate(p.values * (p.log_values - q.log_values))


def second_moment(d: GridDensity) -> float:
    return d.grid.integrate(d.grid.nodes**2 * d.values)


def sample(d: GridDensity, count: int, seed: int) -> np.ndarray:
    """Inverse-CDF sampling, deterministic for a fixed seed."""
    if count < 1:
        raise DomainError("count must be at least 1")
    rng = np.random.default_rng(seed)
    return np.interp(rng.random(count), cdf_values(d), d.grid.nodes)


def _check_map_values(grid: Grid, map_values) -> np.ndarray:
    t = np.asarray(map_values, dtype=float)
    if t.shape != (grid.n,):
        raise DomainError("map must be sampled at every grid node")
    if not np.all(np.isfinite(t)):
        raise NonMonotoneMap("map values must be finite")
    if np.any(np.diff(t) <= 0.0):
        raise NonMonotoneMap("map values must be strictly increasing")
    return t


def pushforward_monotone(
    d: GridDensity, map_values, target_grid: Grid | None = None
) -> GridDensity:
    """Pushforward of ``d`` by a strictly increasing map given at the nodes.

    The output density on ``target_grid`` (default: the source grid) is
    built from the change-of-variables identity: at y = T(x) the log of the
    new density is log d(x) - log T'(x).  Log-density and the inverse map
    are interpolated with cubic accuracy; nodes beyond the image of the map
    continue the boundary log-slope so positivity is preserved.

    Raises :class:`TruncationError` when more than ``TRUNCATION_TOL`` of the
    pushforward mass would land outside the declared target domain.
    """
    t = _check_map_values(d.grid, map_values)
    target = target_grid if target_grid is not None else d.grid
    xs = d.grid.nodes

    cdf = cdf_values(d)
    lost = 0.0
    if t[0] < target.lower:
        lost += np.interp(np.interp(target.lower, t, xs), xs, cdf)
    if t[-1] > target.upper:
        lost += 1.0 - np.interp(np.interp(target.upper, t, xs), xs, cdf)
    if lost > TRUNCATION_TOL:
        raise TruncationError(f"pushforward loses mass {lost!r} outside the target domain")

    # Quantile-composed maps flatten into plateaus once the CDF they were
    # built from saturates; the derivative underflows there and the change
    # of variables becomes 0/0.  Clip such degenerate wings (they may carry
    # at most the truncation tolerance in mass) and rebuild them below by
    # extending the boundary log-slope.
    slopes = np.diff(t) / d.grid.spacing
    mid = slice(len(slopes) // 4, len(slopes) - len(slopes) // 4)
    med = float(np.median(slopes[mid]))
    healthy = (slopes > 1e-3 * med) & (slopes < 50.0 * med)
    first = int(np.argmax(healthy))
    last = len(slopes) - int(np.argmax(healthy[::-1]))
    # keep the derivative stencil clear of the collapse knee
    if first > 0:
        first = min(first + 3, d.grid.n - 6)
    if last < len(slopes):
        last = max(last - 3, first + 5)
    core = np.zeros(d.grid.n, dtype=bool)
    core[first: last + 1] = True
    if np.count_nonzero(core) < 5:
        raise NonMonotoneMap("map support is too degenerate to push forward")
    clipped_mass = cdf[first] + 1.0 - cdf[last]
    if clipped_mass > TRUNCATION_TOL:
        raise NonMonotoneMap(
            f"map slopes collapse over {clipped_mass!r} of the source mass"
        )
    xs_c, t_c = xs[core], t[core]
    t_prime = grad_central4(t_c, d.grid.spacing)
    if np.any(t_prime <= 0.0):
        raise NonMonotoneMap("map derivative must stay positive")
    log_push = d.log_values[core] - np.log(t_prime)

    ys = target.nodes
    inv = PchipInterpolator(t_c, xs_c)
    log_spline = CubicSpline(xs_c, log_push)
    out = np.empty(target.n)
    inside = (ys >= t_c[0]) & (ys <= t_c[-1])
    out[inside] = log_spline(inv(ys[inside]))
    # continue the boundary log-slope beyond the core image (exponential tails)
    if not np.all(inside):
        lo_slope = max((log_push[1] - log_push[0]) / (t_c[1] - t_c[0]), 0.0)
        hi_slope = min((log_push[-1] - log_push[-2]) / (t_c[-1] - t_c[-2]), 0.0)
        below = ys < t_c[0]
        above = ys > t_c[-1]
        out[below] = log_push[0] + min(lo_slope, 1e6) * (ys[below] - t_c[0])
        out[above] = log_push[-1] + max(hi_slope, -1e6) * (ys[above] - t_c[-1])
    return GridDensity.from_unnormalized(target, np.exp(out))


def pushforward_values_linear(d: GridDensity, map_values, target_grid: Grid | None = None):
    """Cheap O(h^2) pushforward values used by per-step runtime monitors.

    Same change-of-variables construction as :func:`pushforward_monotone`
    but with linear interpolation and no normalization; returns raw node
    values on the target grid.
    """
    t = np.asarray(map_values, dtype=float)
    target = target_grid if target_grid is not None else d.grid
    xs = d.grid.nodes
    t_prime = grad_central(t, d.grid.spacing)
    log_push = d.log_values - np.log(np.maximum(t_prime, 1e-300))
    x_hat = np.interp(target.nodes, t, xs)
    return np.exp(np.interp(x_hat, xs, log_push))
