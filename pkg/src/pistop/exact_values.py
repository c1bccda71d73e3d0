"""Exact win probabilities for record-stopping on p.i. processes.

Quantities, all conditional on a state (u, n) with clock time t = exp(u):

* ``pi_record_is_best``: a record that is the n-th observation at u is the
  overall best, ``E[n / N_1 | N_t = n]``.
* ``threshold_rule_value``: win probability of "take the first record
  strictly after u", given n observations at u (none of them eligible).
  With u = -1 this is the 1/e rule.

Every infinite series is cut by an explicit tail envelope, never by a fixed
term count. The record-is-best probability is evaluated twice, by series
and by quadrature, and the two must agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .pi_process import NegBinomialLaw, ProcessState, further_arrivals_logpmf, nb_tail_bound

CROSS_CHECK_TOL = 1e-10


class NumericalConsistencyError(ArithmeticError):
    """Two independent evaluations of the same quantity disagree."""


class TruncationError(ArithmeticError):
    """A series did not reach its tolerance within ``max_terms`` terms."""


@dataclass(frozen=True)
class Tolerance:
    abs_tol: float = 1e-12
    max_terms: int = 10**7

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if self.max_terms < 1:
            raise ValueError("max_terms must be >= 1")


DEFAULT_TOL = Tolerance()


@dataclass(frozen=True)
class SeriesValue:
    """A truncated series: ``value`` plus a rigorous bound on the dropped tail."""

    value: float
    tail_bound: float
    terms: int


def f_j(j: int, t: float, tol: Tolerance = DEFAULT_TOL) -> float:
    """``sum_{k >= j} t**k / k`` for ``0 < t < 1``.

    The tail after term K is below ``t**(K+1) / ((K+1) (1 - t))``.
    """
    if j < 1:
        raise ValueError("j must be >= 1")
    if t >= 1.0:
        raise ValueError("f_j diverges for t >= 1")
    if t <= 0.0:
        raise ValueError("t must be positive")
    total = 0.0
    comp = 0.0
    k = j
    term_pow = t**j
    while True:
        # Kahan summation keeps long slowly converging sums accurate
        y = term_pow / k - comp
        s = total + y
        comp = (s - total) - y
        total = s
        k += 1
        term_pow *= t
        if term_pow / (k * (1.0 - t)) < tol.abs_tol * 1e-3:
            return total
        if k - j > tol.max_terms:
            raise TruncationError(
                f"f_{j}({t}) tail bound {term_pow / (k * (1 - t)):.3e} after {tol.max_terms} terms"
            )


def _blocks(law: NegBinomialLaw, start: int, tol: Tolerance):
    """Yield consecutive integer blocks of ``y`` covering the bulk first."""
    sd = math.sqrt(law.n * law.q) / law.p
    first = max(4096, int(law.mean() + 40.0 * sd) + 1)
    lo = start
    size = first
    while True:
        hi = lo + size
        if hi - start > tol.max_terms:
            hi = start + tol.max_terms
        yield np.arange(lo, hi)
        if hi - start >= tol.max_terms:
            return
        lo = hi
        size *= 2


def pi_series(state: ProcessState, tol: Tolerance = DEFAULT_TOL) -> SeriesValue:
    """``sum_y n / (n + y) P[Y = y]`` over the negative binomial law of Y."""
    law = NegBinomialLaw.after(state)
    n = law.n
    if law.p == 1.0:
        return SeriesValue(1.0, 0.0, 1)
    total = 0.0
    bound = math.inf
    y_last = -1
    for ys in _blocks(law, 0, tol):
        terms = np.exp(further_arrivals_logpmf(law, ys)) * (n / (n + ys))
        total += math.fsum(terms)
        y_last = int(ys[-1])
        bound = n / (n + y_last + 1) * nb_tail_bound(law, y_last)
        if bound < tol.abs_tol:
            return SeriesValue(total, bound, y_last + 1)
    raise TruncationError(f"record-is-best series at {state}: tail bound {bound:.3e} after {y_last + 1} terms")


def pi_quadrature(state: ProcessState) -> float:
    """Adaptive quadrature of ``n int_0^1 (1/z) {z t / (1 - z q)}^n dz``.

    With ``z = w**(1/n)`` the measure ``n dz / z`` becomes ``dw / w`` and the
    integrand turns into ``{t / (1 - q w**(1/n))}^n``, which is bounded on
    [0, 1] and no longer piles its mass up against ``z = 1`` for large n.
    """
    n = state.n
    t = state.t
    q = -math.expm1(state.u)
    log_t = state.u

    def integrand(w):
        if w <= 0.0:
            return t**n
        zq = q * math.exp(math.log(w) / n)
        return math.exp(n * (log_t - math.log1p(-zq)))

    val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=400)
    return val


def pi_record_is_best(state: ProcessState, tol: Tolerance = DEFAULT_TOL) -> float:
    """Probability that a record arriving as the n-th observation at u is best."""
    if state.u == 0.0:
        return 1.0
    series = pi_series(state, tol).value
    quad = pi_quadrature(state)
    if abs(series - quad) > CROSS_CHECK_TOL:
        raise NumericalConsistencyError(
            f"record-is-best at {state}: series {series!r} vs quadrature {quad!r}"
        )
    return series


def pi_closed_n1(u: float) -> float:
    """Closed form for n = 1: ``-(p/q) log(1 - q)`` with ``p = exp(u)``."""
    if u == 0.0:
        return 1.0
    p = math.exp(u)
    q = -math.expm1(u)
    return -(p / q) * u


def threshold_rule_series(state_at_threshold: ProcessState, tol: Tolerance = DEFAULT_TOL) -> SeriesValue:
    """Win probability of taking the first record after the threshold.

    Given ``Y = y`` further arrivals the win probability is
    ``n / (n + y) * sum_{j=1}^y 1 / (n + j - 1)``, which never exceeds 1, so
    the dropped tail is bounded by the negative binomial tail mass.
    """
    law = NegBinomialLaw.after(state_at_threshold)
    n = law.n
    if law.p == 1.0:
        return SeriesValue(0.0, 0.0, 0)
    total = 0.0
    harmonic = 0.0  # sum_{j=1}^{y} 1 / (n + j - 1) carried across blocks
    bound = math.inf
    y_last = 0
    for ys in _blocks(law, 1, tol):
        h = harmonic + np.cumsum(1.0 / (n + ys - 1.0))
        harmonic = float(h[-1])
        terms = np.exp(further_arrivals_logpmf(law, ys)) * (n / (n + ys)) * h
        total += math.fsum(terms)
        y_last = int(ys[-1])
        bound = nb_tail_bound(law, y_last)
        if bound < tol.abs_tol:
            return SeriesValue(total, bound, y_last)
    raise TruncationError(
        f"threshold-rule series at {state_at_threshold}: tail bound {bound:.3e} after {y_last} terms"
    )


def threshold_rule_value(state_at_threshold: ProcessState, tol: Tolerance = DEFAULT_TOL) -> float:
    return threshold_rule_series(state_at_threshold, tol).value


def threshold_closed_n1(b: float) -> float:
    """Closed form for n = 1: ``(1/2)(p/q)(log(1 - q))**2`` with ``p = exp(b)``."""
    if b == 0.0:
        return 0.0
    p = math.exp(b)
    q = -math.expm1(b)
    return 0.5 * (p / q) * b * b


def gap_n1(u: float) -> float:
    """Record-is-best minus threshold-rule value at n = 1, in closed form."""
    if not u < 0.0:
        raise ValueError("gap_n1 needs u < 0")
    p = math.exp(u)
    q = -math.expm1(u)
    log1mq = u
    return p / (2.0 * q) * (-2.0 * log1mq - log1mq * log1mq)


def pi_tilde_grid(u, n_max: int) -> np.ndarray:
    """Record-is-best probabilities for n = 1..n_max on an array of log times.

    Returns shape ``(n_max, len(u))``. This is the fast path used by the ODE
    solver; it relies on two exact identities of the integral,

    * ``pi_{n+1} = ((n+1)/n) (t/q) (1 - pi_n)``, run upwards from the n = 1
      closed form where ``t < 1/2`` (errors shrink by ``t/q`` per step), and
    * ``pi_n = t sum_k k! / ((n+1)(n+2)...(n+k)) q**k`` where ``t >= 1/2``
      (terms shrink faster than ``q**k <= 2**-k``).
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(u > 0.0):
        raise ValueError("log times must be <= 0")
    out = np.empty((n_max, u.size))
    t = np.exp(u)
    q = -np.expm1(u)

    low = t < 0.5
    if low.any():
        tl, ql, ul = t[low], q[low], u[low]
        ratio = tl / ql
        p = -ratio * ul
        out[0, low] = p
        for n in range(1, n_max):
            p = (n + 1) / n * ratio * (1.0 - p)
            out[n, low] = p

    high = ~low
    if high.any():
        th, qh = t[high], q[high]
        ns = np.arange(1, n_max + 1, dtype=float)[:, None]
        term = np.ones((n_max, th.size))
        acc = np.ones((n_max, th.size))
        k = 0
        while True:
            term = term * ((k + 1) / (ns + 1 + k)) * qh
            acc += term
            k += 1
            if term.max() < 1e-18:
                break
        out[:, high] = th * acc
    return out
