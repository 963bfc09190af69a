"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line that the terminal summary prints at the
end of the run (see conftest.py).  Thresholds are the stated ones; nothing
here is tuned to the outcome.
"""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

import conftest
from badgepp import evaluation as ev
from badgepp.data_io import split_train_test
from badgepp.index import EventIndex
from badgepp.inference import EStepState, bound_terms, e_step, fit, m_step, solve_eta
from badgepp.model import KINDS, compensator
from badgepp.simulate import SyntheticConfig, simulate_synthetic

from oracles import (
    enumerated_log_marginal,
    golden_argmax,
    quad_compensator,
    random_instance,
    simplex_grid_argmax,
)

pytestmark = pytest.mark.slow


def record(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number} {title}: {detail}"
    conftest.ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


# -- shared desk-scale runs (criteria 1, 2, 4, 7) ----------------------------

N_DESK_SEEDS = 20


@pytest.fixture(scope="module")
def desk_runs():
    runs = []
    start = time.perf_counter()
    for seed in range(N_DESK_SEEDS):
        ds, _, mc = simulate_synthetic(SyntheticConfig.desk(seed=seed))
        full = fit(ds, mc, seed=seed)
        train = split_train_test(ds, 0.8).train
        held = fit(train, mc, seed=seed)
        methods = ("model", "poisson", "hawkes", "popular", "recent")
        reports = ev.evaluate(train, held.params, mc, methods=methods, ks=(1,), predict_times=False, seed=seed)
        runs.append({"full": full, "reports": reports})
    return runs, time.perf_counter() - start


def test_criterion_1_em_monotonicity(desk_runs):
    runs, elapsed = desk_runs
    steps = [np.diff(r["full"].lower_bound_trace) for r in runs]
    ok = [bool(np.all(s >= -1e-8)) for s in steps]
    worst = min(float(s.min()) for s in steps if s.size)
    passed = all(ok) and len(ok) == 20
    record(1, "EM monotonicity", passed,
           f"{sum(ok)}/{len(ok)} traces nondecreasing within 1e-8 (smallest step {worst:.3g}); "
           f"20 full fits plus 20 held-out fits took {elapsed:.0f}s")
    assert passed


def test_criterion_2_convergence_speed(desk_runs):
    runs, _ = desk_runs
    its = [r["full"].iterations for r in runs]
    conv = [r["full"].converged for r in runs]
    passed = all(conv) and max(its) <= 25
    record(2, "convergence speed", passed,
           f"{sum(conv)}/{len(conv)} converged at tol 1e-4; iterations max {max(its)}, mean {np.mean(its):.1f}")
    assert passed


def test_criterion_4_held_out_dominance(desk_runs):
    runs, _ = desk_runs
    wins = []
    for r in runs:
        rep = r["reports"]
        m = rep["model"].per_event_loglik
        wins.append(m > rep["poisson"].per_event_loglik and m > rep["hawkes"].per_event_loglik)
    rate = np.mean(wins)
    margins = [r["reports"]["model"].per_event_loglik
               - max(r["reports"]["poisson"].per_event_loglik, r["reports"]["hawkes"].per_event_loglik) for r in runs]
    passed = rate >= 0.9
    record(4, "held-out dominance", passed,
           f"model beats Poisson and Hawkes in {sum(wins)}/{len(wins)} seeds "
           f"(smallest per-event margin {min(margins):.3f})")
    assert passed


def test_criterion_7_parent_ranking(desk_runs):
    runs, _ = desk_runs
    p1 = {m: np.mean([r["reports"][m].precision_at_k["parents"][1] for r in runs[:10]])
          for m in ("model", "popular", "recent")}
    passed = p1["model"] > p1["popular"] and p1["model"] > p1["recent"]
    record(7, "parent ranking", passed,
           f"mean precision@1 over 10 seeds: model {p1['model']:.3f}, most-recent {p1['recent']:.3f}, "
           f"most-popular {p1['popular']:.3f}")
    assert passed


# -- criterion 3 ---------------------------------------------------------------

def first_events(ds, n):
    """Observation windows covering each user's first ``n`` events."""
    W = np.full((ds.num_users, 2), ds.horizon)
    for u in range(ds.num_users):
        idx = np.flatnonzero(ds.users == u)
        if idx.size > n:
            W[u, :] = ds.times[idx[n - 1]]
    return ds.with_windows(W)


def test_criterion_3_recovery_trend():
    sizes = (100, 300, 1000)
    seeds = range(5)
    rows = {n: [] for n in sizes}
    for seed in seeds:
        ds, truth, mc = simulate_synthetic(SyntheticConfig.desk(events_per_user=max(sizes), seed=seed))
        for n in sizes:
            rep = ev.recovery_report(truth, fit(first_events(ds, n), mc, seed=seed).params)
            rows[n].append((rep.temporal.mre, rep.temporal.tau, rep.content.tau))
    mean = {n: np.mean(rows[n], axis=0) for n in sizes}
    mre = [mean[n][0] for n in sizes]
    tau_t = [mean[n][1] for n in sizes]
    tau_c = [mean[n][2] for n in sizes]
    decreasing = all(a > b for a, b in zip(mre, mre[1:]))
    increasing = all(a < b for a, b in zip(tau_t, tau_t[1:])) and all(a < b for a, b in zip(tau_c, tau_c[1:]))
    at_top = tau_t[-1] >= 0.6 and tau_c[-1] >= 0.6
    passed = decreasing and increasing and at_top
    fmt = lambda xs: " > ".join(f"{x:.3g}" for x in xs)
    record(3, "recovery trend", passed,
           f"temporal MRE {fmt(mre)}; temporal tau {' < '.join(f'{x:.3f}' for x in tau_t)}; "
           f"content tau {' < '.join(f'{x:.3f}' for x in tau_c)} (5 seeds, sizes 100/300/1000)")
    assert passed


# -- criterion 5 ---------------------------------------------------------------

def test_criterion_5_time_change_residuals():
    n_runs = 100
    true_pass = halved_fail = 0
    sizes = []
    for seed in range(n_runs):
        ds, P, mc = simulate_synthetic(SyntheticConfig.desk(U=1, K=5, events_per_user=200, seed=seed))
        good, bad = [], []
        for kind in KINDS:
            times = ds.times[ds.user_event_indices(0, kind)]
            if times.size < 2:
                continue
            proc = ev.UserProcess(ds, P, mc, 0, kind)
            good.append(ev.rescaled_residuals(times, proc.compensator).residuals)
            # every intensity halved halves every compensator increment
            bad.append(ev.rescaled_residuals(times, lambda a, b, p=proc: 0.5 * p.compensator(a, b)).residuals)
        g = ev.ks_residuals(np.concatenate(good))
        b = ev.ks_residuals(np.concatenate(bad))
        true_pass += g.passes(0.01)
        halved_fail += not b.passes(0.01)
        sizes.append(g.residuals.size)
    passed = true_pass >= 95 and halved_fail >= 95
    record(5, "time-change residuals", passed,
           f"KS at alpha 0.01 passes {true_pass}/{n_runs} under generating parameters, "
           f"fails {halved_fail}/{n_runs} with intensities halved (>= {min(sizes)} residuals per run)")
    assert passed


# -- criterion 6 ---------------------------------------------------------------

def _compensator_check(n_instances=100):
    worst = 0.0
    rng = np.random.default_rng(100)
    for _ in range(n_instances):
        ds, P, cfg = random_instance(rng, U=2, n=12)
        for u in range(ds.num_users):
            for kind in KINDS:
                t0, t1 = np.sort(rng.uniform(0, ds.horizon, 2))
                for a, b in ((0.0, ds.horizon), (t0, t1)):
                    ours = compensator(kind, u, ds, P[u], cfg, a, b)
                    ref = quad_compensator(kind, u, ds, P[u], cfg, a, b)
                    worst = max(worst, abs(ours - ref) / max(abs(ref), 1e-300))
    return worst


def _m_step_check(n_instances=10):
    worst = 0.0
    rng = np.random.default_rng(101)
    for _ in range(n_instances):
        ds, P, cfg = random_instance(rng, U=2, K=2, n=30)
        ix = EventIndex(ds, cfg)
        es = e_step(ix, P)
        new = m_step(ix, es, P)

        def bound_with(name, u, value):
            Q = P.copy()
            getattr(Q, name)[u] = value
            return sum(bound_terms(ix, Q, es).values())

        for u in range(ds.num_users):
            for name in ("mu_q", "rho_q", "mu_a", "rho_a"):
                if not (ix.n_q if name.endswith("q") else ix.n_a)[u]:
                    continue
                target = getattr(new, name)[u]
                best = golden_argmax(lambda v: bound_with(name, u, v), 1e-12, max(10 * target, 1e-3))
                worst = max(worst, abs(best - target) / max(target, 1e-6))
            for name in ("alpha", "eta"):
                if not (ix.n_q if name == "alpha" else ix.n_a)[u]:
                    continue
                best = golden_argmax(lambda v: bound_with(name, u, [v, 1 - v]), 1e-12, 1 - 1e-12)
                worst = max(worst, abs(best - getattr(new, name)[u, 0]))
    return worst


def _eta_check(n_cases=30):
    worst = 0.0
    rng = np.random.default_rng(102)
    for i in range(n_cases):
        K = 1 + i % 3
        F = rng.uniform(0, 5, K) * (rng.uniform(size=K) < 0.85)
        if not F.any():
            F[0] = 1.0
        H = rng.uniform(0, 5, K)

        def obj(x):
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(F > 0, F * np.log(x), 0.0)
            return terms.sum(axis=1) - (x * H).sum(axis=1)

        ref = np.ones(1) if K == 1 else simplex_grid_argmax(obj, K)
        worst = max(worst, float(np.max(np.abs(solve_eta(F, H) - ref))))
    return worst


def _bound_check(n_instances=20, n_states=5):
    worst = -math.inf
    rng = np.random.default_rng(103)
    done = 0
    while done < n_instances:
        ds, P, cfg = random_instance(rng, U=2, K=2, n=3, horizon=3.0, decay_w=1.0)
        if ds.answer_indices.size == 0:
            continue
        ix = EventIndex(ds, cfg)
        exact = enumerated_log_marginal(ds, P, cfg)
        states = [e_step(ix, P)] + [_random_state(ix, P, rng) for _ in range(n_states)]
        for st in states:
            worst = max(worst, sum(bound_terms(ix, P, st).values()) - exact)
        done += 1
    return worst


def _random_state(ix, P, rng):
    exo, bad = ix.question_parts(P)
    q = rng.uniform(0.1, 1, (ix.n_questions, 2)) * np.stack([exo > 0, bad > 0], axis=1)
    q /= q.sum(axis=1, keepdims=True)
    mu, bad_a, pair_w, _ = ix.answer_parts(P)
    a_exo = rng.uniform(0.1, 1, ix.n_answers) * (mu > 0)
    a_bad = rng.uniform(0.1, 1, ix.n_answers) * (bad_a > 0)
    pairs = rng.uniform(0.1, 1, ix.pair_ans.size) * (pair_w > 0)
    tot = a_exo + a_bad + np.bincount(ix.pair_ans, weights=pairs, minlength=ix.n_answers)
    return EStepState(ix, q, a_exo / tot, a_bad / tot, pairs / tot[ix.pair_ans], rng.uniform(0.1, 5, ix.n_answers))


def test_criterion_6_oracle_equivalences():
    comp = _compensator_check()
    mstep = _m_step_check()
    eta = _eta_check()
    gap = _bound_check()
    checks = [comp <= 1e-6, mstep <= 1e-3, eta <= 1e-3, gap <= 1e-9]
    passed = all(checks)
    record(6, "oracle equivalences", passed,
           f"compensator vs quadrature worst rel {comp:.2g} (100 instances); M-step vs 1-D argmax worst {mstep:.2g}; "
           f"solve_eta vs simplex grid worst {eta:.2g}; bound minus enumerated marginal max {gap:.2g}")
    assert passed


# -- criterion 8 ---------------------------------------------------------------

# gaussian uses (tau - x) / (2 omega) and exponential omega (tau - x); these
# two values give both kernels the same length scale of 40 counts
KERNEL_OMEGA = {"gaussian": 20.0, "exponential": 1 / 40}


def with_kernel(cfg, kernel):
    swap = lambda badges: tuple(replace(b, kernel=kernel, bandwidth=KERNEL_OMEGA[kernel]) for b in badges)
    return replace(cfg, badges_q=swap(cfg.badges_q), badges_a=swap(cfg.badges_a))


def test_criterion_8_kernel_comparison():
    wins = {k: 0 for k in KERNEL_OMEGA}
    n_seeds = 10
    for seed in range(n_seeds):
        for gen in KERNEL_OMEGA:
            ds, _, mc = simulate_synthetic(SyntheticConfig.desk(seed=seed, kernel=gen, omega=KERNEL_OMEGA[gen]))
            train = split_train_test(ds, 0.8).train
            ll = {}
            for k in KERNEL_OMEGA:
                cfg = with_kernel(mc, k)
                ll[k] = ev.model_test_loglik(train, fit(train, cfg, seed=seed).params, cfg)[0]
            wins[gen] += ll[gen] > max(v for k, v in ll.items() if k != gen)
    passed = all(w >= 0.8 * n_seeds for w in wins.values())
    record(8, "kernel comparison", passed,
           f"matching kernel wins on gaussian data {wins['gaussian']}/{n_seeds}, "
           f"on exponential data {wins['exponential']}/{n_seeds}")
    assert passed
