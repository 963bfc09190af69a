import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from badgepp import evaluation as ev
from badgepp.baselines import HawkesParams
from badgepp.data_io import split_train_test
from badgepp.errors import InsufficientDataError, InvalidArgumentError, NoEventExpectedError
from badgepp.model import KINDS, compensator, dataset_log_likelihood, intensity
from badgepp.simulate import SyntheticConfig, simulate_synthetic

from oracles import random_instance


def constant(rate):
    return lambda t: np.full(np.shape(t), float(rate))


# -- next-event sampling -----------------------------------------------------

def test_constant_intensity_mean_wait():
    rng = np.random.default_rng(0)
    draws = ev.sample_next_times(constant(2.0), 3.0, 100_000, rng) - 3.0
    assert draws.mean() == pytest.approx(0.5, abs=0.005)
    est = ev.predict_next_time(constant(0.5), 0.0, 4000, np.random.default_rng(1))
    assert abs(est - 2.0) < 3 * 2.0 / math.sqrt(4000)


def test_doubling_the_rate_halves_the_wait():
    a = ev.predict_next_time(constant(1.0), 0.0, 50_000, np.random.default_rng(2))
    b = ev.predict_next_time(constant(2.0), 0.0, 50_000, np.random.default_rng(3))
    assert a / b == pytest.approx(2.0, rel=0.03)


def test_sampling_error_shrinks_like_root_n():
    def spread(n):
        means = [ev.sample_next_times(constant(1.0), 0.0, n, np.random.default_rng(s)).mean() for s in range(200)]
        return np.std(means)

    assert spread(400) / spread(100) == pytest.approx(0.5, rel=0.25)


def test_decaying_intensity_matches_inverse_transform():
    # level + drive e^{-(t - t0)}: survival exp(-(level s + drive (1 - e^{-s})))
    f = ev.DecayingIntensity(0.3, 2.0, 1.0, 0.0)
    draws = ev.sample_next_times(f, 0.0, 20_000, np.random.default_rng(4))
    s = 1.0
    expected = math.exp(-(0.3 * s + 2.0 * (1 - math.exp(-s))))
    assert np.mean(draws > s) == pytest.approx(expected, abs=0.015)


def test_zero_intensity_and_never_firing():
    with pytest.raises(NoEventExpectedError):
        ev.sample_next_times(constant(0.0), 0.0, 10)
    # a pure decay with total mass 1e-3 almost never fires
    f = ev.DecayingIntensity(0.0, 1e-3, 1.0, 0.0)
    draws = ev.sample_next_times(f, 0.0, 200, np.random.default_rng(5), max_wait=100)
    assert np.isinf(draws).mean() > 0.9
    with pytest.raises(InvalidArgumentError):
        ev.sample_next_times(lambda t: np.asarray(t) + 1.0, 0.0, 10, np.random.default_rng(0))


# -- metrics -----------------------------------------------------------------

def test_time_errors_example():
    mae, mre = ev.time_errors([3.0, 5.0], [2.0, 6.0], [1.0, 2.0])
    assert mae == 1.0
    assert mre == pytest.approx((1 / 1 + 1 / 4) / 2)
    with pytest.raises(InvalidArgumentError):
        ev.time_errors([1.0], [1.0], [1.0])


def test_rank_metrics_examples():
    out = ev.rank_metrics([[3, 1, 2], [1, 2, 3]], [1, 5], ks=(1, 2))
    assert out[1] == (0.0, 0.0)
    assert out[2][0] == 0.5
    assert out[2][1] == pytest.approx(0.6309297535714575 / 2)
    assert ev.rank_metrics([[7]], [7], ks=(1,))[1] == (1.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        ev.rank_metrics([[1]], [1], ks=(0,))


@settings(max_examples=50, deadline=None)
@given(perm=st.permutations(list(range(8))), truth=st.integers(0, 9))
def test_rank_metrics_monotone_in_k(perm, truth):
    out = ev.rank_metrics([perm], [truth], ks=range(1, 10))
    prec = [out[k][0] for k in range(1, 10)]
    ndcg = [out[k][1] for k in range(1, 10)]
    assert prec == sorted(prec) and ndcg == sorted(ndcg)
    assert all(0 <= v <= 1 for v in prec + ndcg)
    assert all(n <= p for p, n in zip(prec, ndcg))


def test_kendall_tau_examples():
    assert ev.kendall_tau([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3)
    assert ev.kendall_tau([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    with pytest.raises(InvalidArgumentError):
        ev.kendall_tau([1], [1])


# -- parameter recovery ------------------------------------------------------

def sample_params(seed=0, U=6, K=4):
    _, P, _ = random_instance(np.random.default_rng(seed), U=U, K=K, n=10)
    return P


def test_recovery_of_identical_parameters():
    P = sample_params()
    rep = ev.recovery_report(P, P.copy())
    assert rep.temporal.mre == 0.0 and rep.content.mre == 0.0
    assert rep.temporal.tau == pytest.approx(1.0) and rep.content.tau == pytest.approx(1.0)


def test_recovery_of_scaled_parameters():
    P = sample_params(1)
    Q = P.copy()
    for name in ev.TEMPORAL_FIELDS:
        getattr(Q, name)[:] *= 2
    rep = ev.recovery_report(P, Q)
    assert rep.temporal.mre == pytest.approx(1.0)
    assert rep.temporal.tau == pytest.approx(1.0)
    assert rep.content.mre == 0.0


def test_recovery_mre_single_entry_and_skips():
    P = sample_params(2, U=1, K=2)
    Q = P.copy()
    Q.mu_q[0] *= 1.5
    assert ev.recovery_report(P, Q).temporal.per_type["mu_q"]["mre"] == pytest.approx(0.5)
    P.rho_q[0] = 0.0
    assert ev.recovery_report(P, Q).temporal.skipped == 1


def test_recovery_is_invariant_to_user_relabeling():
    P = sample_params(3)
    Q = sample_params(4)
    perm = np.random.default_rng(0).permutation(P.num_users)
    a = ev.recovery_report(P, Q).to_dict()
    b = ev.recovery_report(P.permuted(perm), Q.permuted(perm)).to_dict()
    assert a["temporal"]["mre"] == pytest.approx(b["temporal"]["mre"])
    assert a["content"]["tau"] == pytest.approx(b["content"]["tau"])


# -- residuals ---------------------------------------------------------------

def test_poisson_residuals_are_scaled_gaps():
    times = np.array([0.5, 1.0, 2.5])
    rep = ev.rescaled_residuals(times, ev.PoissonProcess(2.0).compensator)
    assert rep.residuals == pytest.approx([1.0, 3.0])
    with pytest.raises(InsufficientDataError):
        ev.rescaled_residuals(times[:1], ev.PoissonProcess(2.0).compensator)


def test_residuals_detect_a_halved_rate():
    rng = np.random.default_rng(6)
    times = np.cumsum(rng.exponential(1.0, 2000))
    good = ev.rescaled_residuals(times, ev.PoissonProcess(1.0).compensator)
    half = ev.rescaled_residuals(times, ev.PoissonProcess(0.5).compensator)
    assert good.passes() and not half.passes()
    assert half.residuals.mean() == pytest.approx(0.5, abs=0.05)
    assert not good.low_power
    assert ev.ks_residuals(np.ones(10)).low_power


def test_qq_points_shape():
    q = ev.qq_points(np.array([0.3, 0.1, 2.0]))
    assert q.shape == (3, 2)
    assert np.all(np.diff(q[:, 0]) > 0) and np.all(np.diff(q[:, 1]) >= 0)


# -- vectorized processes ----------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_user_process_matches_scalar_path(seed):
    rng = np.random.default_rng(seed)
    ds, P, cfg = random_instance(rng, U=2, n=15)
    grid = np.sort(rng.uniform(0, ds.horizon, 7))
    for u in range(ds.num_users):
        for kind in KINDS:
            proc = ev.UserProcess(ds, P, cfg, u, kind)
            ref = [intensity(kind, u, t, ds, P[u], cfg) for t in grid]
            assert proc.intensity(grid) == pytest.approx(ref, rel=1e-10, abs=1e-12)
            assert proc.compensator(0.0, grid) == pytest.approx(
                [compensator(kind, u, ds, P[u], cfg, 0.0, t) for t in grid], rel=1e-9, abs=1e-12)


def test_frozen_intensity_is_the_intensity_after_the_last_event():
    rng = np.random.default_rng(7)
    ds, P, cfg = random_instance(rng, U=1, n=12)
    t_now = float(ds.times[-1])
    for kind in KINDS:
        proc = ev.UserProcess(ds, P, cfg, 0, kind)
        f = proc.frozen_after(t_now)
        t = t_now + np.array([1e-9, 0.5, 2.0])
        assert f(t) == pytest.approx(proc.intensity(t), rel=1e-6)


def test_hawkes_process_interface():
    proc = ev.HawkesProcess(np.array([1.0, 2.0]), HawkesParams(0.5, 0.5))
    assert proc.intensity(np.array([3.0]))[0] == pytest.approx(0.5 + 0.5 * (math.exp(-2) + math.exp(-1)))
    f = proc.frozen_after(2.0)
    assert f(np.array([2.0]))[0] == pytest.approx(0.5 + 0.5 * (1 + math.exp(-1)))


# -- held-out evaluation -----------------------------------------------------

@pytest.fixture(scope="module")
def small_run():
    cfg = SyntheticConfig.desk(U=4, K=4, events_per_user=80, seed=5)
    ds, P, mc = simulate_synthetic(cfg)
    return split_train_test(ds, 0.8).train, P, mc


def test_held_out_loglik_is_difference_of_windows(small_run):
    train, P, mc = small_run
    temporal, marks, n = ev.model_test_loglik(train, P, mc)
    assert n == int(ev.test_mask(train).sum()) > 0
    assert math.isfinite(temporal)
    total = dataset_log_likelihood(train.full_window(), P, mc) - dataset_log_likelihood(train, P, mc)
    assert temporal + marks == pytest.approx(total, rel=1e-10)


def test_evaluate_smoke(small_run):
    train, P, mc = small_run
    reps = ev.evaluate(train, P, mc, n_samples=50, seed=1, ks=(1, 5))
    assert set(reps) == {"model", "poisson", "hawkes", "popular", "recent"}
    for name in ("model", "poisson", "hawkes"):
        assert math.isfinite(reps[name].per_event_loglik)
        assert reps[name].time_mae >= 0
    for name in ("model", "popular", "recent"):
        for space in ("tags", "parents"):
            p1, p5 = reps[name].precision_at_k[space][1], reps[name].precision_at_k[space][5]
            assert 0 <= p1 <= p5 <= 1
    again = ev.evaluate(train, P, mc, n_samples=50, seed=1, ks=(1, 5))
    assert again["model"].to_dict() == reps["model"].to_dict()


def test_evaluate_requires_held_out_events(small_run):
    train, P, mc = small_run
    with pytest.raises(InsufficientDataError):
        ev.evaluate(train.full_window(), P, mc)
