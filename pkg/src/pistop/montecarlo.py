"""Monte Carlo win probabilities of record-stopping strategies.

A trial starts from a :class:`~pistop.pi_process.ProcessState` ``(u, n)``:
the n-th observation has just arrived at log time u and is a record (the
first arrival always is). Further arrivals follow the p.i. law and every
arrival's relative rank is uniform, so a record is the overall best iff no
later arrival is a record. A strategy sees ``(log time, count, is_record)``
at each arrival, the launch arrival included, and stops at the first record
it accepts. A trial without a stop is a loss.

Trials are grouped in fixed blocks; block ``i`` draws from the stream
``(seed, i)``, so results do not depend on how blocks are spread over
workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .hjb_solver import StoppingBoundary
from .pi_process import DEFAULT_MAX_ARRIVALS, ProcessState, RunawayPathError, open_uniform, path_rng

BLOCK = 1 << 16
DEFAULT_TRIALS = 10**6

Kind = Literal["fixed_threshold", "boundary", "stop_never", "stop_first_record"]


@dataclass(frozen=True)
class Strategy:
    kind: Kind
    b: float | None = None
    thresholds: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind == "fixed_threshold" and (self.b is None or self.b > 0):
            raise ValueError("fixed_threshold needs a threshold b <= 0")
        if self.kind == "boundary" and not self.thresholds:
            raise ValueError("boundary strategy needs thresholds")
        if self.kind not in ("fixed_threshold", "boundary", "stop_never", "stop_first_record"):
            raise ValueError(f"unknown strategy kind {self.kind!r}")

    @classmethod
    def fixed_threshold(cls, b: float) -> Strategy:
        return cls("fixed_threshold", b=float(b))

    @classmethod
    def one_over_e(cls) -> Strategy:
        return cls.fixed_threshold(-1.0)

    @classmethod
    def from_boundary(cls, boundary: StoppingBoundary) -> Strategy:
        return cls("boundary", thresholds=tuple(float(x) for x in boundary.as_array()))

    @classmethod
    def stop_never(cls) -> Strategy:
        return cls("stop_never")

    @classmethod
    def stop_first_record(cls) -> Strategy:
        return cls("stop_first_record")

    @property
    def label(self) -> str:
        if self.kind == "fixed_threshold":
            return f"fixed_threshold({self.b:g})"
        return self.kind

    def accepts(self, u, k) -> np.ndarray:
        """Whether a record at log time ``u`` as the ``k``-th arrival is taken."""
        u = np.asarray(u, dtype=float)
        if self.kind == "fixed_threshold":
            return u > self.b
        if self.kind == "stop_first_record":
            return np.ones(u.shape, dtype=bool)
        if self.kind == "stop_never":
            return np.zeros(u.shape, dtype=bool)
        cut = np.asarray(self.thresholds)
        idx = np.minimum(np.asarray(k), cut.size) - 1
        return u > cut[idx]


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    stderr: float
    trials: int
    seed: int

    def z_score(self, exact: float) -> float:
        if self.stderr == 0.0:
            return 0.0 if self.mean == exact else math.copysign(math.inf, self.mean - exact)
        return (self.mean - exact) / self.stderr

    def within(self, exact: float, k: float = 3.0) -> bool:
        return abs(self.mean - exact) <= k * self.stderr


@dataclass(frozen=True)
class _Tally:
    trials: int
    wins: int
    ratio_sum: float = 0.0
    ratio_sq_sum: float = 0.0

    def __add__(self, other: _Tally) -> _Tally:
        return _Tally(
            self.trials + other.trials,
            self.wins + other.wins,
            self.ratio_sum + other.ratio_sum,
            self.ratio_sq_sum + other.ratio_sq_sum,
        )


def _bernoulli(tally: _Tally, seed: int) -> MonteCarloEstimate:
    mean = tally.wins / tally.trials
    return MonteCarloEstimate(mean, math.sqrt(mean * (1.0 - mean) / tally.trials), tally.trials, seed)


def _win_block(strategy: Strategy, state: ProcessState, size: int, seed: int, block: int, max_arrivals: int) -> _Tally:
    if strategy.kind == "stop_never":
        return _Tally(size, 0)
    rng = path_rng(seed, block)
    stopped_at_launch = bool(strategy.accepts(state.u, state.n))
    t = np.full(size, state.t)
    k = np.full(size, state.n, dtype=np.int64)
    stopped = np.full(size, stopped_at_launch)
    wins = 0
    while t.size:
        t_next = t * open_uniform(rng, t.size) ** (-1.0 / k)
        over = t_next > 1.0
        wins += int(np.count_nonzero(stopped & over))
        keep = ~over
        t, k, stopped = t_next[keep], k[keep] + 1, stopped[keep]
        if not t.size:
            break
        if k.max() - state.n > max_arrivals:
            raise RunawayPathError(f"path from {state} exceeded {max_arrivals} arrivals")
        record = rng.integers(1, k, endpoint=True) == 1
        # a later record dethrones the stopped arrival
        alive = ~(stopped & record)
        take = ~stopped & record
        if take.any():
            take[take] = strategy.accepts(np.log(t[take]), k[take])
        stopped = stopped | take
        t, k, stopped = t[alive], k[alive], stopped[alive]
    return _Tally(size, wins)


def _pi_block(state: ProcessState, size: int, seed: int, block: int, max_arrivals: int) -> _Tally:
    rng = path_rng(seed, block)
    n = state.n
    t = np.full(size, state.t)
    k = np.full(size, n, dtype=np.int64)
    beaten = np.zeros(size, dtype=bool)
    live = np.arange(size)
    final = np.full(size, n, dtype=np.int64)
    while live.size:
        t_next = t * open_uniform(rng, live.size) ** (-1.0 / k)
        keep = t_next <= 1.0
        final[live[~keep]] = k[~keep]
        live, t, k = live[keep], t_next[keep], k[keep] + 1
        if not live.size:
            break
        if k.max() - n > max_arrivals:
            raise RunawayPathError(f"path from {state} exceeded {max_arrivals} arrivals")
        beaten[live] |= rng.integers(1, k, endpoint=True) == 1
    ratio = n / final
    return _Tally(size, int(np.count_nonzero(~beaten)), math.fsum(ratio), math.fsum(ratio * ratio))


def _blocks(trials: int):
    full, rest = divmod(trials, BLOCK)
    sizes = [BLOCK] * full + ([rest] if rest else [])
    return list(enumerate(sizes))


def _run(fn, args_for, trials: int, workers: int) -> _Tally:
    jobs = [args_for(i, size) for i, size in _blocks(trials)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            tallies = list(pool.map(fn, *zip(*jobs)))
    else:
        tallies = [fn(*job) for job in jobs]
    total = _Tally(0, 0)
    for tally in tallies:  # block order keeps float sums reproducible
        total = total + tally
    return total


def _check_trials(trials: int):
    if trials < 1:
        raise ValueError("trials must be >= 1")


def estimate_win(
    strategy: Strategy,
    state: ProcessState,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    *,
    workers: int = 1,
    max_arrivals: int = DEFAULT_MAX_ARRIVALS,
) -> MonteCarloEstimate:
    """Estimated probability that ``strategy`` stops on the overall best."""
    _check_trials(trials)
    tally = _run(
        _win_block,
        lambda i, size: (strategy, state, size, seed, i, max_arrivals),
        trials,
        workers,
    )
    return _bernoulli(tally, seed)


@dataclass(frozen=True)
class PiEstimates:
    """Two estimators of the record-is-best probability from the same paths.

    ``indicator`` scores "no later record"; ``direct`` averages ``n / N_1``,
    its conditional expectation given the final count.
    """

    indicator: MonteCarloEstimate
    direct: MonteCarloEstimate

    @property
    def combined_stderr(self) -> float:
        return math.hypot(self.indicator.stderr, self.direct.stderr)

    def consistent(self, k: float = 3.0) -> bool:
        return abs(self.indicator.mean - self.direct.mean) <= k * self.combined_stderr


def estimate_pi_both(
    state: ProcessState,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    *,
    workers: int = 1,
    max_arrivals: int = DEFAULT_MAX_ARRIVALS,
) -> PiEstimates:
    _check_trials(trials)
    tally = _run(_pi_block, lambda i, size: (state, size, seed, i, max_arrivals), trials, workers)
    mean = tally.ratio_sum / tally.trials
    var = max(tally.ratio_sq_sum / tally.trials - mean * mean, 0.0)
    direct = MonteCarloEstimate(mean, math.sqrt(var / tally.trials), tally.trials, seed)
    return PiEstimates(_bernoulli(tally, seed), direct)


def estimate_pi(
    state: ProcessState,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    *,
    workers: int = 1,
    max_arrivals: int = DEFAULT_MAX_ARRIVALS,
) -> MonteCarloEstimate:
    """Indicator estimate of the probability that the record at ``state`` is best.

    Raises if the indicator and ``n / N_1`` estimators drift apart by more
    than three combined standard errors.
    """
    both = estimate_pi_both(state, trials, seed, workers=workers, max_arrivals=max_arrivals)
    if not both.consistent():
        raise ArithmeticError(
            f"indicator {both.indicator.mean} and n/N_1 {both.direct.mean} estimates disagree at {state}"
        )
    return both.indicator
