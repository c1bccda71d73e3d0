"""Proportional-increment counting processes on (0, 1].

After its first arrival a p.i. process has compensator N_t / t. In log time
u = log t it is a pure birth process where every individual present gives
birth at unit rate, so all conditional laws depend only on the state
(u, n): the log time of the latest observation and the count so far.
Nothing here models the law of the first arrival time; every simulation is
launched from an explicit :class:`ProcessState`.

Arrivals carry relative ranks drawn sequentially: the k-th arrival has rank
uniform on {1, ..., k}, independent of everything else (Renyi), and it is a
record iff that rank is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln

DEFAULT_MAX_ARRIVALS = 10**7


class RunawayPathError(RuntimeError):
    """A simulated path exceeded the configured arrival cap."""


@dataclass(frozen=True)
class ProcessState:
    """Log time ``u <= 0`` of the latest observation and count ``n >= 1``."""

    u: float
    n: int

    def __post_init__(self):
        if not self.u <= 0.0:
            raise ValueError(f"log time must be <= 0, got u={self.u!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(
                f"count must be an integer >= 1, got n={self.n!r}; "
                "the law before the first arrival is not prescribed"
            )
        object.__setattr__(self, "n", int(self.n))

    @property
    def t(self) -> float:
        return math.exp(self.u)

    @classmethod
    def from_clock(cls, t: float, n: int) -> ProcessState:
        if not 0.0 < t <= 1.0:
            raise ValueError(f"clock time must lie in (0, 1], got t={t!r}")
        return cls(math.log(t), n)


@dataclass(frozen=True)
class NegBinomialLaw:
    """Law of the number of further arrivals after a state with count ``n``.

    ``p`` is the clock time of the state, ``p = exp(u)``.
    """

    n: int
    p: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be an integer >= 1, got {self.n!r}")
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"p must lie in (0, 1], got {self.p!r}")

    @property
    def q(self) -> float:
        return 1.0 - self.p

    @property
    def log_q(self) -> float:
        return math.log1p(-self.p) if self.p < 1.0 else -math.inf

    @classmethod
    def after(cls, state: ProcessState) -> NegBinomialLaw:
        return cls(state.n, math.exp(state.u))

    def mean(self) -> float:
        return self.n * self.q / self.p


@dataclass(frozen=True)
class Arrival:
    time: float
    index: int
    relative_rank: int
    is_record: bool


@dataclass(frozen=True)
class SimulatedPath:
    """Arrivals after ``origin``, in time order.

    ``arrivals`` excludes the ``origin.n`` observations made up to the launch
    time; their indices continue from ``origin.n + 1``.
    """

    origin: ProcessState
    arrivals: tuple[Arrival, ...] = field(default_factory=tuple)

    @property
    def further_count(self) -> int:
        return len(self.arrivals)

    @property
    def total_count(self) -> int:
        return self.origin.n + len(self.arrivals)

    def last_record_index(self) -> int | None:
        """Overall index of the best arrival if it came after the origin."""
        for a in reversed(self.arrivals):
            if a.is_record:
                return a.index
        return None

    def times(self) -> np.ndarray:
        return np.array([a.time for a in self.arrivals], dtype=float)


def next_arrival_time(state: ProcessState, uniform_draw: float) -> float:
    """Inverse-transform sample of the next arrival time after ``state``.

    Given ``n`` arrivals by time ``t`` the survival function of the next
    arrival is ``(t / s)**n`` for ``s >= t``. A return value above 1 means
    no further arrival before the horizon.
    """
    if state.n < 1:
        raise ValueError("next arrival law is undefined before the first arrival")
    if not 0.0 < uniform_draw < 1.0:
        raise ValueError(f"uniform draw must lie in (0, 1), got {uniform_draw!r}")
    return state.t * uniform_draw ** (-1.0 / state.n)


def path_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent generator for stream ``index`` under master ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def open_uniform(rng: np.random.Generator, size=None):
    """Uniform draws on the open interval (0, 1)."""
    # 53-bit grid shifted by half a unit never hits 0 or 1
    bits = rng.integers(0, 1 << 53, size=size, dtype=np.int64)
    return (bits + 0.5) * (1.0 / (1 << 53))


def simulate_path(
    state: ProcessState,
    rng_seed: int,
    *,
    stream: int = 0,
    max_arrivals: int = DEFAULT_MAX_ARRIVALS,
) -> SimulatedPath:
    """Simulate all arrivals after ``state`` up to clock time 1."""
    rng = path_rng(rng_seed, stream)
    t, k = state.t, state.n
    arrivals = []
    while True:
        t_next = next_arrival_time(ProcessState(math.log(t), k), float(open_uniform(rng)))
        if t_next > 1.0:
            break
        k += 1
        if k - state.n > max_arrivals:
            raise RunawayPathError(
                f"path from {state} exceeded {max_arrivals} arrivals"
            )
        rank = int(rng.integers(1, k, endpoint=True))
        arrivals.append(Arrival(t_next, k, rank, rank == 1))
        t = t_next
    return SimulatedPath(state, tuple(arrivals))


def simulate_further_counts(
    state: ProcessState,
    size: int,
    rng: np.random.Generator,
    *,
    max_arrivals: int = DEFAULT_MAX_ARRIVALS,
    checkpoints=(1.0,),
) -> np.ndarray:
    """Vectorised clock-time simulation of further-arrival counts.

    Applies the :func:`next_arrival_time` rule to ``size`` independent paths at
    once and returns an array of shape ``(len(checkpoints), size)`` holding
    ``N_c - n`` for each checkpoint clock time ``c``.
    """
    cps = np.asarray(checkpoints, dtype=float)
    if np.any(cps < state.t) or np.any(cps > 1.0):
        raise ValueError("checkpoints must lie in [exp(u), 1]")
    counts = np.zeros((cps.size, size), dtype=np.int64)
    t = np.full(size, state.t)
    k = np.full(size, state.n, dtype=np.int64)
    live = np.arange(size)
    while live.size:
        t_next = t * open_uniform(rng, live.size) ** (-1.0 / k)
        for i, c in enumerate(cps):
            counts[i, live] += t_next <= c
        keep = t_next <= 1.0
        live, t, k = live[keep], t_next[keep], k[keep] + 1
        if live.size and k.max() - state.n > max_arrivals:
            raise RunawayPathError(f"path from {state} exceeded {max_arrivals} arrivals")
    return counts


def simulate_log_time_counts(
    state: ProcessState,
    size: int,
    rng: np.random.Generator,
    *,
    checkpoints=(1.0,),
    max_arrivals: int = DEFAULT_MAX_ARRIVALS,
) -> np.ndarray:
    """Same counts as :func:`simulate_further_counts`, built in log time.

    Each of the ``k`` individuals gives birth at unit rate, so holding times
    are exponential with rate ``k``; birth epochs are mapped back to clock
    time by ``exp``.
    """
    cps = np.log(np.asarray(checkpoints, dtype=float))
    if np.any(cps < state.u) or np.any(cps > 0.0):
        raise ValueError("checkpoints must lie in [exp(u), 1]")
    counts = np.zeros((cps.size, size), dtype=np.int64)
    u = np.full(size, state.u)
    k = np.full(size, state.n, dtype=np.int64)
    live = np.arange(size)
    while live.size:
        u_next = u + rng.standard_exponential(live.size) / k
        for i, c in enumerate(cps):
            counts[i, live] += u_next <= c
        keep = u_next <= 0.0
        live, u, k = live[keep], u_next[keep], k[keep] + 1
        if live.size and k.max() - state.n > max_arrivals:
            raise RunawayPathError(f"path from {state} exceeded {max_arrivals} arrivals")
    return counts


def total_count_pgf(state: ProcessState, z: float) -> float:
    """PGF of the count at the horizon given ``state``."""
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"z must lie in [0, 1], got {z!r}")
    t = state.t
    # 1 - z (1 - t) written without cancellation near z = 1
    return (z * t / ((1.0 - z) + z * t)) ** state.n


def further_arrivals_logpmf(law: NegBinomialLaw, y):
    """Log-probability of ``y`` further arrivals, vectorised over ``y``."""
    y = np.asarray(y)
    if np.any(y < 0):
        raise ValueError("y must be >= 0")
    n = law.n
    yf = y.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        # log C(n+y-1, y) = -log(y) - log B(y, n) for y >= 1
        log_binom = np.where(yf > 0, -np.log(np.maximum(yf, 1.0)) - betaln(np.maximum(yf, 1.0), n), 0.0)
        if law.p == 1.0:
            out = np.where(yf == 0, 0.0, -np.inf)
        else:
            out = n * math.log(law.p) + yf * law.log_q + log_binom
    return out if out.ndim else float(out)


def further_arrivals_pmf(law: NegBinomialLaw, y):
    """Negative binomial probability of ``y`` further arrivals."""
    return np.exp(further_arrivals_logpmf(law, y))


def nb_tail_bound(law: NegBinomialLaw, y_max: int) -> float:
    """Upper bound on ``P[Y > y_max]``.

    Successive pmf ratios ``q (n + y) / (y + 1)`` decrease towards ``q``, so
    once the ratio at ``y_max + 1`` is below one the remaining mass is
    dominated by a geometric series. Returns ``inf`` before that point.
    """
    if law.p == 1.0:
        return 0.0
    y = y_max + 1
    ratio = law.q * (law.n + y) / (y + 1)
    if ratio >= 1.0:
        return math.inf
    return float(further_arrivals_pmf(law, y)) / (1.0 - ratio)
