"""End-to-end acceptance criteria.

Each test appends one PASS/FAIL line to the session log, which is printed in
the terminal summary, then asserts.
"""

import math
import time

import numpy as np
import pytest

from pistop import exact_values as ev
from pistop.checks import chi_square_vs_nb
from pistop.cli import figure1_rows
from pistop.hjb_solver import non_optimality_witness, solve_optimal
from pistop.montecarlo import Strategy, estimate_pi, estimate_win
from pistop.pi_process import NegBinomialLaw, ProcessState, path_rng, simulate_further_counts

from .conftest import SEED

E1 = math.exp(-1.0)
TRIALS = 10**6


def report(log, number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}"
    log.append(line)
    print(line)
    return passed


def test_1_gap_identity(acceptance_log):
    s = ProcessState(-1.0, 1)
    pi = ev.pi_record_is_best(s)
    vs = ev.threshold_rule_value(s)
    target = E1 / (2 * (1 - E1))
    gap_err = abs((pi - vs) - target)
    twice_err = abs(pi - 2 * vs)
    ok = gap_err <= 1e-12 and twice_err <= 1e-12
    assert report(
        acceptance_log, 1, "gap identity at n=1, u=-1", ok,
        f"gap={pi - vs:.15f} |err|={gap_err:.1e}, |pi-2V|={twice_err:.1e} (tol 1e-12)",
    )


def test_2_gap_positive_and_narrowing(acceptance_log):
    start = time.perf_counter()
    rows = figure1_rows(100, ev.DEFAULT_TOL)
    elapsed = time.perf_counter() - start
    gaps = np.array([r[3] for r in rows])
    positive = bool(np.all(gaps > 0))
    decreasing = bool(np.all(np.diff(gaps) < 0))
    ok = positive and decreasing and elapsed < 10.0
    assert report(
        acceptance_log, 2, "gap > 0 and strictly decreasing, n=1..100", ok,
        f"gap(1)={gaps[0]:.6f} gap(100)={gaps[-1]:.6f} positive={positive} "
        f"decreasing={decreasing} in {elapsed:.2f}s (limit 10s)",
    )


def test_3_closed_forms(acceptance_log):
    worst = 0.0
    for u in (-2.0, -1.0, -0.5, -0.1):
        p = math.exp(u)
        q = 1 - p
        pi_closed = -(p / q) * u
        v_closed = 0.5 * (p / q) * u * u
        s = ProcessState(u, 1)
        worst = max(
            worst,
            abs(ev.pi_series(s).value - pi_closed),
            abs(ev.pi_quadrature(s) - pi_closed),
            abs(ev.threshold_rule_value(s) - v_closed),
        )
    assert report(
        acceptance_log, 3, "single-arrival closed forms on u in {-2,-1,-0.5,-0.1}", worst <= 1e-10,
        f"max |err|={worst:.1e} (tol 1e-10)",
    )


def test_4_one_plus_geometric(acceptance_log):
    s = ProcessState(-1.0, 1)
    further = simulate_further_counts(s, 10**5, path_rng(SEED, 4))[0]
    # N_1 = 1 + Y with Y geometric on {0, 1, ...} of success probability e^-1
    stat, pval, dof = chi_square_vs_nb(further, NegBinomialLaw(1, E1))
    total = further + 1
    assert total.min() >= 1
    assert report(
        acceptance_log, 4, "N_1 | (u=-1, n=1) is 1+Geometric(e^-1), 1e5 paths", pval > 1e-3,
        f"chi2={stat:.2f} dof={dof} p={pval:.3f} (need > 0.001)",
    )


def test_5_exact_vs_monte_carlo(acceptance_log):
    worst = 0.0
    where = None
    for n in range(1, 11):
        s = ProcessState(-1.0, n)
        pairs = (
            ("pi", estimate_pi(s, TRIALS, SEED + n), ev.pi_record_is_best(s)),
            ("V*", estimate_win(Strategy.one_over_e(), s, TRIALS, SEED + 100 + n), ev.threshold_rule_value(s)),
        )
        for name, est, exact in pairs:
            z = abs(est.z_score(exact))
            if z > worst:
                worst, where = z, (name, n)
    assert report(
        acceptance_log, 5, "1e6-trial Monte Carlo vs exact, u=-1, n=1..10", worst <= 3.0,
        f"max |z|={worst:.2f} at {where[0]} n={where[1]} (limit 3)",
    )


@pytest.mark.slow
def test_6_hjb_consistency(acceptance_log, optimal_table, policy_tables):
    pol = policy_tables(-1.0)
    col = pol.column(-1.0)
    policy_err = max(abs(col[n - 1] - ev.threshold_rule_value(ProcessState(-1.0, n))) for n in range(1, 51))

    dominance = min(
        float(np.min(optimal_table.values - policy_tables(b).values)) for b in (-2.0, -1.5, -1.0, -0.5)
    )

    fine = solve_optimal(optimal_table.config.halved(), check_residual=False)
    halving = float(np.max(np.abs(fine.column(-1.0)[:10] - optimal_table.column(-1.0)[:10])))

    ok = policy_err <= 1e-6 and dominance >= -1e-6 and halving < 1e-8
    assert report(
        acceptance_log, 6, "HJB consistency", ok,
        f"policy(-1) vs series n<=50 {policy_err:.1e} (tol 1e-6); "
        f"min(optimal - policy) over b in {{-2,-1.5,-1,-0.5}} {dominance:.1e} (tol -1e-6); "
        f"step halving V_n(-1), n<=10 {halving:.1e} (tol 1e-8)",
    )


@pytest.mark.slow
def test_7_non_optimality_witness(acceptance_log, optimal_table, boundary):
    witness = non_optimality_witness(optimal_table)
    s = ProcessState(-1.05, 1)
    bnd = estimate_win(Strategy.from_boundary(boundary), s, TRIALS, SEED)
    one = estimate_win(Strategy.one_over_e(), s, TRIALS, SEED + 1)
    margin = bnd.mean - one.mean
    combined = math.hypot(bnd.stderr, one.stderr)
    ok = witness is not None and witness[1] < -1.0 and witness[2] > witness[3] and margin > 3 * combined
    n, u, pi, v = witness if witness else (None, math.nan, math.nan, math.nan)
    assert report(
        acceptance_log, 7, "stopping before 1/e is sometimes optimal", ok,
        f"witness n={n} u={u:.4f} pi={pi:.4f} > V={v:.4f}; at (u=-1.05, n=1) boundary {bnd.mean:.4f} "
        f"vs 1/e {one.mean:.4f}, margin {margin / combined:.1f} combined SE (need > 3)",
    )


def test_8_monotonicity(acceptance_log):
    ts = [k / 10 for k in range(1, 10)]
    table = np.array([[ev.pi_record_is_best(ProcessState(math.log(t), n)) for t in ts] for n in range(1, 201)])
    in_t = float(np.min(np.diff(table, axis=1)))
    in_n = float(np.max(np.diff(table, axis=0)))
    ok = in_t > 0 and in_n <= 0
    assert report(
        acceptance_log, 8, "pi_n(t) increasing in t, nonincreasing in n (n<=200, t=0.1..0.9)", ok,
        f"min step in t {in_t:.2e} (> 0), max step in n {in_n:.2e} (<= 0)",
    )
