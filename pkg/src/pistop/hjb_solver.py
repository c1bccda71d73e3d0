"""Backward integration of the coupled value-function ODEs in log time.

``V_n(u)`` is the value of being at log time u with n observations, none of
them at u. In log time arrivals come at rate n, a new arrival is a record
with probability ``1/(n+1)``, and a record may be accepted for
``pi_{n+1}(u)``. Hence

    dV_n/du = -[ n (V_{n+1} - V_n) + n/(n+1) * S(pi_{n+1} - V_{n+1}) ]

with ``V_n(0) = 0``, where ``S(x) = max(x, 0)`` for the optimal problem and
``S(x) = x * [u > b]`` for the rule "take the first record after b".

The chain is cut at ``n_max`` by prescribing ``V_{n_max + 1}`` (the
closure). The sweep is a fixed-step classical Runge-Kutta scheme on a
uniform grid from 0 down to ``u_min``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.optimize import brentq

from .exact_values import pi_tilde_grid

Closure = Literal["classical_limit", "frozen"]

_CHUNK = 2000


class ConvergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    u_min: float = -4.0
    step: float = 1e-4
    n_max: int = 400
    closure: Closure = "classical_limit"
    save_stride: int = 1

    def __post_init__(self):
        if not self.u_min < 0:
            raise ValueError("u_min must be negative")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.n_max < 2:
            raise ValueError("n_max must be >= 2")
        if self.closure not in ("classical_limit", "frozen"):
            raise ValueError(f"unknown closure {self.closure!r}")
        if self.save_stride < 1 or self.steps % self.save_stride:
            raise ValueError("save_stride must divide the number of steps")

    @property
    def steps(self) -> int:
        return max(1, round(-self.u_min / self.step))

    @property
    def h(self) -> float:
        """Actual step: ``|u_min|`` split into a whole number of steps."""
        return -self.u_min / self.steps

    def halved(self) -> SolverConfig:
        return SolverConfig(self.u_min, self.step / 2, self.n_max, self.closure, self.save_stride * 2)


@dataclass(frozen=True)
class ResidualReport:
    """Finite-difference check of the ODE on the saved grid.

    ``max_residual`` is over interior points whose stencil does not straddle
    a kink of the stop term. ``threshold`` combines the truncation scale
    ``10 * h**4`` with the rounding floor of the difference quotient.
    """

    max_residual: float
    at_u: float
    at_n: int
    threshold: float
    checked_points: int

    @property
    def ok(self) -> bool:
        return self.max_residual <= self.threshold


@dataclass(frozen=True)
class ValueTable:
    """``values[n - 1, i]`` is ``V_n(grid[i])``; ``grid`` increases to 0."""

    grid: np.ndarray
    values: np.ndarray
    config: SolverConfig
    threshold_b: float | None = None
    residual: ResidualReport | None = field(default=None, compare=False)

    @property
    def n_max(self) -> int:
        return self.values.shape[0]

    def index_of(self, u: float) -> int:
        i = int(np.argmin(np.abs(self.grid - u)))
        if abs(self.grid[i] - u) > 1e-9 * max(1.0, abs(u)):
            raise KeyError(f"u={u} is not a grid point")
        return i

    def value(self, n: int, u: float) -> float:
        return float(self.values[n - 1, self.index_of(u)])

    def column(self, u: float) -> np.ndarray:
        return self.values[:, self.index_of(u)]


@dataclass(frozen=True)
class StoppingBoundary:
    """Per count n, the log time ``u*_n`` after which stopping on a record wins.

    ``thresholds[n]`` is None when ``pi_n - V_n`` does not change sign on
    ``[u_min, 0)``; ``extra_crossings`` lists counts whose difference changes
    sign more than once (the threshold then marks the final crossing).
    """

    thresholds: dict[int, float | None]
    resolution: float
    u_min: float
    extra_crossings: tuple[int, ...] = ()

    def threshold(self, n: int) -> float | None:
        return self.thresholds[min(n, max(self.thresholds))]

    def as_array(self, n_cap: int | None = None) -> np.ndarray:
        """Thresholds for n = 1..n_cap; missing crossings become ``u_min``."""
        n_cap = n_cap or max(self.thresholds)
        return np.array(
            [self.u_min if (v := self.threshold(n)) is None else v for n in range(1, n_cap + 1)]
        )


def classical_limit(u, threshold_b: float | None):
    """Value as ``n -> infinity``, where counts become deterministic.

    Taking the first record after clock time ``s`` then wins with probability
    ``-s log s``. The optimal large-population rule waits until ``1/e``.
    """
    u = np.asarray(u, dtype=float)
    from_now = -u * np.exp(u)
    if threshold_b is None:
        return np.where(u <= -1.0, math.exp(-1.0), from_now)
    return np.where(u > threshold_b, from_now, -threshold_b * math.exp(threshold_b))


def _rhs(u, v, pi_next, active, cfg: SolverConfig, threshold_b):
    n = np.arange(1.0, v.size + 1.0)
    if cfg.closure == "frozen":
        closure = v[-1]
    else:
        closure = float(classical_limit(u, threshold_b))
    v_next = np.empty_like(v)
    v_next[:-1] = v[1:]
    v_next[-1] = closure
    gain = pi_next - v_next
    if threshold_b is None:
        stop = np.maximum(gain, 0.0)
    else:
        stop = gain if active else np.zeros_like(gain)
    return -(n * (v_next - v) + n / (n + 1.0) * stop)



def _integrate(cfg: SolverConfig, threshold_b: float | None) -> ValueTable:
    n_max, steps, h = cfg.n_max, cfg.steps, cfg.h
    n_saved = steps // cfg.save_stride + 1
    values = np.empty((n_max, n_saved))
    v = np.zeros(n_max)
    values[:, -1] = v
    col = n_saved - 1
    for start in range(0, steps, _CHUNK):
        stop_i = min(start + _CHUNK, steps)
        # half-step nodes u = -(start + j/2) h, j = 0..2(stop_i - start)
        half = -(start + np.arange(2 * (stop_i - start) + 1) / 2.0) * h
        pis = pi_tilde_grid(half, n_max + 1)[1:]
        for i in range(start, stop_i):
            j = 2 * (i - start)
            u0 = -i * h
            active = threshold_b is not None and (u0 - 0.5 * h) > threshold_b
            k1 = _rhs(u0, v, pis[:, j], active, cfg, threshold_b)
            k2 = _rhs(u0 - 0.5 * h, v - 0.5 * h * k1, pis[:, j + 1], active, cfg, threshold_b)
            k3 = _rhs(u0 - 0.5 * h, v - 0.5 * h * k2, pis[:, j + 1], active, cfg, threshold_b)
            k4 = _rhs(u0 - h, v - h * k3, pis[:, j + 2], active, cfg, threshold_b)
            v = v - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if (i + 1) % cfg.save_stride == 0:
                col -= 1
                values[:, col] = v
        if not np.all(np.isfinite(v)):
            raise ConvergenceError(f"non-finite value function near u={-stop_i * h}")
    grid = -(np.arange(n_saved)[::-1] * cfg.save_stride) * h
    grid[-1] = 0.0
    table = ValueTable(grid, values, cfg, threshold_b)
    return ValueTable(grid, values, cfg, threshold_b, residual_report(table))


def solve_optimal(config: SolverConfig = SolverConfig(), *, check_residual: bool = True) -> ValueTable:
    """Optimal value functions ``V_n`` for n = 1..n_max on ``[u_min, 0]``."""
    table = _integrate(config, None)
    if check_residual and not table.residual.ok:
        raise ConvergenceError(f"ODE residual too large: {table.residual}")
    return table


def solve_policy(
    threshold_b: float, config: SolverConfig = SolverConfig(), *, check_residual: bool = True
) -> ValueTable:
    """Value functions of the rule that takes the first record after ``threshold_b``."""
    if threshold_b > 0:
        raise ValueError("threshold must be <= 0")
    table = _integrate(config, float(threshold_b))
    if check_residual and not table.residual.ok:
        raise ConvergenceError(f"ODE residual too large: {table.residual}")
    return table


def _derivatives(table: ValueTable, cols: np.ndarray, pis: np.ndarray) -> np.ndarray:
    """ODE right-hand side at saved columns ``cols``; ``pis`` holds pi_2..pi_{n_max+1}."""
    cfg = table.config
    out = np.empty((table.n_max, cols.size))
    for k, c in enumerate(cols):
        u = float(table.grid[c])
        active = table.threshold_b is not None and u > table.threshold_b
        out[:, k] = _rhs(u, table.values[:, c], pis[:, k], active, cfg, table.threshold_b)
    return out


def residual_report(table: ValueTable, n_check: int | None = None) -> ResidualReport:
    """Fourth-order central differences of ``V`` against the ODE right-hand side.

    Rows next to the closure carry derivatives of size ``n**k`` near u = 0, so
    by default only the lower half of the chain is checked.
    """
    cfg = table.config
    hs = cfg.h * cfg.save_stride
    m = table.grid.size
    n_check = min(n_check or max(table.n_max // 2, 1), table.n_max)
    if m < 5:
        return ResidualReport(0.0, 0.0, 1, math.inf, 0)
    worst, at_u, at_n, checked = 0.0, 0.0, 1, 0
    vals = table.values
    for lo in range(2, m - 2, _CHUNK):
        cols = np.arange(lo, min(lo + _CHUNK, m - 2))
        span = np.arange(cols[0] - 2, cols[-1] + 3)
        pis_span = pi_tilde_grid(table.grid[span], table.n_max + 1)[1:]
        pis = pis_span[:, 2:-2]
        fd = (
            -vals[:, cols + 2] + 8.0 * vals[:, cols + 1] - 8.0 * vals[:, cols - 1] + vals[:, cols - 2]
        ) / (12.0 * hs)
        res = np.abs(fd - _derivatives(table, cols, pis))[:n_check]
        smooth = _smooth_stencils(table, span, pis_span)[:n_check]
        res = np.where(smooth, res, 0.0)
        checked += int(smooth.sum())
        k = np.unravel_index(np.argmax(res), res.shape)
        if res[k] > worst:
            worst, at_n, at_u = float(res[k]), int(k[0]) + 1, float(table.grid[cols[k[1]]])
    scale = float(np.max(np.abs(vals[:n_check])))
    floor = 64.0 * np.finfo(float).eps * max(scale, 1e-300) / hs
    threshold = 10.0 * hs**4 * max(scale, 1.0) + floor
    return ResidualReport(worst, at_u, at_n, threshold, checked)


def _calm(flags: np.ndarray, margin: int) -> np.ndarray:
    """True where ``flags`` is constant within ``margin`` points, for columns 2..-3."""
    flags = np.atleast_2d(flags)
    width = flags.shape[1]
    flips = np.concatenate(
        [np.zeros((flags.shape[0], 1), dtype=np.int64), np.cumsum(flags[:, 1:] != flags[:, :-1], axis=1)], axis=1
    )
    centres = np.arange(2, width - 2)
    lo = np.maximum(centres - margin, 0)
    hi = np.minimum(centres + margin, width - 1)
    return flips[:, hi] == flips[:, lo]


def _smooth_stencils(table: ValueTable, span: np.ndarray, pis: np.ndarray, margin: int = 8) -> np.ndarray:
    """Which 5-point stencils centred in ``span[2:-2]`` stay clear of every kink.

    A sign change of ``pi_{m+1} - V_{m+1}`` makes ``V_m'`` kink, and the
    roughness climbs one derivative per row down the chain, so row n is
    trusted only where rows n..n+3 stay smooth. ``margin`` grid points on each
    side of a kink are dropped, which also covers the one-step defect the
    Runge-Kutta stages make when a kink falls inside a step.
    """
    vals = table.values[:, span]
    u = table.grid[span]
    closure_row = None
    if table.config.closure == "frozen":
        v_next = np.vstack([vals[1:], vals[-1:]])
    else:
        limit = classical_limit(u, table.threshold_b)
        v_next = np.vstack([vals[1:], limit[None, :]])
        closure_row = u > (-1.0 if table.threshold_b is None else table.threshold_b)
    signs = pis > v_next
    if closure_row is not None:
        signs = np.vstack([signs, closure_row[None, :]])
    ok = _calm(signs, margin)
    depth = 4
    padded = np.vstack([ok, np.ones((depth, ok.shape[1]), dtype=bool)])
    smooth = np.ones((table.n_max, ok.shape[1]), dtype=bool)
    for r in range(depth):
        smooth &= padded[r : r + table.n_max]
    if table.threshold_b is not None:
        smooth &= _calm(u > table.threshold_b, margin)
    return smooth


def _hermite(u, u0, u1, v0, v1, d0, d1):
    h = u1 - u0
    s = (u - u0) / h
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * v0 + h10 * h * d0 + h01 * v1 + h11 * h * d1


def extract_boundary(table: ValueTable, resolution: float = 1e-6) -> StoppingBoundary:
    """Locate, for every n, where ``pi_n(u) - V_n(u)`` turns positive for good.

    Sign changes are found on the saved grid and refined by bisection on a
    cubic Hermite interpolant of ``V_n`` built from the ODE slopes.
    """
    grid = table.grid
    pis_all = pi_tilde_grid(grid, table.n_max + 1)
    diff = pis_all[:-1] - table.values
    # V_n(0) = 0 < pi_n(0) = 1 exactly; keep the last column strictly positive
    positive = diff > 0
    thresholds: dict[int, float | None] = {}
    extra = []
    for n in range(1, table.n_max + 1):
        pos = positive[n - 1]
        nonpos = np.flatnonzero(~pos)
        if nonpos.size == 0:
            thresholds[n] = None
            continue
        i = int(nonpos[-1])
        if np.count_nonzero(np.diff(pos.astype(np.int8))) > 1:
            extra.append(n)
        if i == grid.size - 1:
            thresholds[n] = None
            continue
        cols = np.array([i, i + 1])
        d = _derivatives(table, cols, pis_all[1:, cols])[n - 1]
        v0, v1 = table.values[n - 1, i], table.values[n - 1, i + 1]
        u0, u1 = float(grid[i]), float(grid[i + 1])

        def g(u):
            return pi_tilde_grid([u], n)[n - 1, 0] - _hermite(u, u0, u1, v0, v1, d[0], d[1])

        if g(u0) > 0:
            thresholds[n] = u0
        elif g(u1) <= 0:
            thresholds[n] = u1
        else:
            thresholds[n] = float(brentq(g, u0, u1, xtol=resolution * 1e-3))
    return StoppingBoundary(thresholds, resolution, float(grid[0]), tuple(extra))


def non_optimality_witness(table: ValueTable, u_below: float = -1.0):
    """Smallest n with a grid point ``u < u_below`` where stopping beats continuing.

    Returns ``(n, u, pi_n(u), V_n(u))`` at the point of largest advantage, or
    None.
    """
    mask = table.grid < u_below
    if not mask.any():
        return None
    us = table.grid[mask]
    pis = pi_tilde_grid(us, table.n_max)
    diff = pis - table.values[:, mask]
    for n in range(1, table.n_max + 1):
        row = diff[n - 1]
        if np.any(row > 0):
            k = int(np.argmax(row))
            return n, float(us[k]), float(pis[n - 1, k]), float(table.values[n - 1, mask][k])
    return None
