"""Held-out metrics, next-event sampling, residual diagnostics and recovery scores.

Test events are the events of a dataset that fall outside their user/kind
observation window (see :class:`badgepp.model.Dataset`).  All test-time
quantities condition on the full history, including events of other users
that happen during the test period.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import baselines
from .errors import (
    InsufficientDataError,
    InvalidArgumentError,
    NoCandidateError,
    NoEventExpectedError,
    ZeroLikelihoodError,
)
from .index import EventIndex
from .model import (
    ANSWER,
    KINDS,
    QUESTION,
    Dataset,
    ModelConfig,
    answer_parent_pmf,
    as_model_params,
    badge_kernel,
    progress_steps,
)

log = logging.getLogger(__name__)

DEFAULT_KS = tuple(range(1, 21))
LOW_POWER_N = 50
MRE_SKIP_BELOW = 1e-12
TEMPORAL_FIELDS = ("mu_q", "mu_a", "rho_q", "rho_a")
CONTENT_FIELDS = ("alpha", "eta")
TIME_MRE_NOTE = "time MRE is relative to the true waiting time since the previous event of the same user and kind"
LOGLIK_NOTE = "per-event log-likelihood counts temporal terms only unless stated otherwise"


# ---------------------------------------------------------------------------
# Basic metrics
# ---------------------------------------------------------------------------

def time_errors(predicted, actual, reference):
    """``(MAE, MRE)`` of predicted event times; MRE divides by the true wait."""
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    r = np.asarray(reference, dtype=float)
    if not p.shape == a.shape == r.shape:
        raise InvalidArgumentError("predicted, actual and reference must have equal lengths")
    if p.size == 0:
        raise InvalidArgumentError("no predictions to score")
    if np.any(a <= r):
        raise InvalidArgumentError("actual times must exceed their reference times")
    err = np.abs(p - a)
    return float(err.mean()), float((err / (a - r)).mean())


def rank_metrics(rankings, truths, ks=DEFAULT_KS) -> dict:
    """``{k: (precision@k, NDCG@k)}`` for single-relevant-item rankings.

    A truth missing from its ranking counts as a miss at every ``k``.
    """
    ks = list(ks)
    if any(int(k) != k or k < 1 for k in ks):
        raise InvalidArgumentError("k must be a positive integer")
    if len(rankings) != len(truths):
        raise InvalidArgumentError("rankings and truths must have equal lengths")
    if not rankings:
        raise InvalidArgumentError("no rankings to score")
    ranks = np.array([_rank_of(r, t) for r, t in zip(rankings, truths)], dtype=float)
    out = {}
    for k in ks:
        hit = ranks <= k
        gain = np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)
        out[int(k)] = (float(hit.mean()), float(gain.mean()))
    return out


def _rank_of(ranking, truth):
    for i, c in enumerate(ranking):
        if c == truth:
            return i + 1
    return math.inf


def kendall_tau(a, b) -> float:
    """Tie-corrected Kendall rank correlation (tau-b)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise InvalidArgumentError("kendall_tau inputs must have equal lengths")
    if a.size < 2:
        raise InvalidArgumentError("kendall_tau needs at least two entries")
    return float(stats.kendalltau(a, b, variant="b").statistic)


# ---------------------------------------------------------------------------
# Parameter recovery
# ---------------------------------------------------------------------------

@dataclass
class RecoveryGroup:
    mre: float
    tau: float
    skipped: int
    per_type: dict = field(default_factory=dict)


@dataclass
class RecoveryReport:
    temporal: RecoveryGroup
    content: RecoveryGroup

    def to_dict(self) -> dict:
        return asdict(self)


def _mre(true, est):
    keep = true >= MRE_SKIP_BELOW
    if not np.any(keep):
        return math.nan, int(true.size)
    return float(np.mean(np.abs(true[keep] - est[keep]) / true[keep])), int(np.count_nonzero(~keep))


def recovery_report(true_params, fitted_params) -> RecoveryReport:
    """Mean relative error and Kendall tau of fitted against true parameters.

    MRE averages over all entries of a group whose true value is at least
    ``1e-12`` (the rest are counted in ``skipped``).  Tau is computed per
    parameter type across users (over all user-tag entries for ``alpha``
    and ``eta``) and averaged within the group.
    """
    T = as_model_params(true_params)
    F = as_model_params(fitted_params)
    if T.num_users != F.num_users or T.num_tags != F.num_tags:
        raise InvalidArgumentError("true and fitted parameters have different dimensions")

    def group(names):
        trues = [np.ravel(getattr(T, n)) for n in names]
        ests = [np.ravel(getattr(F, n)) for n in names]
        mre, skipped = _mre(np.concatenate(trues), np.concatenate(ests))
        per_type = {}
        taus = []
        for n, t, e in zip(names, trues, ests):
            tau = kendall_tau(t, e) if t.size >= 2 else math.nan
            m, _ = _mre(t, e)
            per_type[n] = {"mre": m, "tau": tau}
            taus.append(tau)
        taus = [x for x in taus if not math.isnan(x)]
        return RecoveryGroup(mre, float(np.mean(taus)) if taus else math.nan, skipped, per_type)

    return RecoveryReport(group(TEMPORAL_FIELDS), group(CONTENT_FIELDS))


# ---------------------------------------------------------------------------
# Next-event times
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayingIntensity:
    """``level + drive * exp(-w (t - t0))`` for ``t >= t0``; nonincreasing."""

    level: float
    drive: float
    w: float
    t0: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.level + self.drive * np.exp(-self.w * (t - self.t0))


def sample_next_times(intensity, t_now, n_samples=1000, rng=None, max_wait=1e7):
    """Draw next-event times after ``t_now`` by thinning with the history frozen.

    ``intensity`` maps an array of times to rates and must be nonincreasing
    on ``[t_now, inf)``, so its value at the current point bounds it from
    there on.  Samples that do not fire within ``max_wait`` come back as
    ``inf``.
    """
    if n_samples < 1:
        raise InvalidArgumentError("n_samples must be at least 1")
    rng = np.random.default_rng(rng)
    start = float(np.asarray(intensity(np.array([t_now])), dtype=float)[0])
    if not start > 0:
        raise NoEventExpectedError(f"zero intensity at t={t_now}")
    t = np.full(n_samples, float(t_now))
    bound = np.full(n_samples, start)
    out = np.full(n_samples, np.inf)
    live = np.arange(n_samples)
    while live.size:
        cand = t[live] + rng.exponential(1.0 / bound[live])
        lam = np.asarray(intensity(cand), dtype=float)
        if np.any(lam > bound[live] * (1 + 1e-9)):
            raise InvalidArgumentError("intensity increased after t_now; thinning bound violated")
        accept = rng.uniform(size=live.size) * bound[live] <= lam
        out[live[accept]] = cand[accept]
        t[live] = cand
        bound[live] = lam
        gone = ~accept & ((cand - t_now > max_wait) | ~(lam > 0))
        live = live[~accept & ~gone]
    return out


def predict_next_time(intensity, t_now, n_samples=1000, rng=None, max_wait=1e7) -> float:
    """Monte-Carlo mean of the next event time after ``t_now``.

    When some samples never fire (the intensity decays to zero) the mean is
    taken over the ones that do; if none fire the error is raised.
    """
    draws = sample_next_times(intensity, t_now, n_samples, rng, max_wait)
    fired = np.isfinite(draws)
    if not np.any(fired):
        raise NoEventExpectedError(f"no event expected within {max_wait} of t={t_now}")
    if not np.all(fired):
        log.debug("%d of %d samples did not fire", int((~fired).sum()), draws.size)
    return float(draws[fired].mean())


# ---------------------------------------------------------------------------
# Time-rescaling residuals
# ---------------------------------------------------------------------------

@dataclass
class ResidualReport:
    residuals: np.ndarray
    ks_statistic: float
    p_value: float
    qq_points: np.ndarray
    low_power: bool

    def passes(self, alpha=0.01) -> bool:
        return self.p_value > alpha


def qq_points(residuals) -> np.ndarray:
    """Pairs (Exp(1) quantile, empirical quantile) at plotting positions (i - 0.5)/n."""
    r = np.sort(np.asarray(residuals, dtype=float))
    probs = (np.arange(1, r.size + 1) - 0.5) / r.size
    return np.column_stack([-np.log1p(-probs), r])


def ks_residuals(residuals) -> ResidualReport:
    r = np.asarray(residuals, dtype=float)
    if r.size < 1:
        raise InsufficientDataError("no residuals to test")
    res = stats.kstest(r, "expon")
    return ResidualReport(r, float(res.statistic), float(res.pvalue), qq_points(r), r.size < LOW_POWER_N)


def rescaled_residuals(times, compensator) -> ResidualReport:
    """Compensator increments between consecutive events, tested against Exp(1).

    ``compensator(t0, t1)`` must accept arrays of interval ends.
    """
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise InsufficientDataError("need at least two events for residuals")
    r = np.asarray(compensator(times[:-1], times[1:]), dtype=float)
    return ks_residuals(r)


# ---------------------------------------------------------------------------
# Vectorized per-user model quantities
# ---------------------------------------------------------------------------

class DecayedSum:
    """Exponentially decayed sum of weighted source events, queryable at any time.

    ``at(t)`` is ``sum_{s < t} weight_s * exp(-w (t - s))`` and ``mass(t)`` its
    integral over ``[0, t]``.  The running totals are built once.
    """

    def __init__(self, src_times, src_weights, w):
        self.times = np.asarray(src_times, dtype=float)
        weights = np.asarray(src_weights, dtype=float)
        self.w = float(w)
        self.after = np.empty(self.times.size)  # decayed total just after each source event
        acc = 0.0
        prev = self.times[0] if self.times.size else 0.0
        for i, (s, wt) in enumerate(zip(self.times.tolist(), weights.tolist())):
            acc = acc * math.exp(-self.w * (s - prev)) + wt
            prev = s
            self.after[i] = acc
        self.csum = np.concatenate([[0.0], np.cumsum(weights)])

    def at(self, t, inclusive=False):
        t = np.asarray(t, dtype=float)
        if self.times.size == 0:
            return np.zeros_like(t)
        k = np.searchsorted(self.times, t, side="right" if inclusive else "left") - 1
        safe = np.maximum(k, 0)
        out = self.after[safe] * np.exp(-self.w * (t - self.times[safe]))
        return np.where(k >= 0, out, 0.0)

    def mass(self, t):
        t = np.asarray(t, dtype=float)
        if self.times.size == 0:
            return np.zeros_like(t)
        before = self.csum[np.searchsorted(self.times, t, side="left")]
        return (before - self.at(t)) / self.w


def decayed_sum(src_times, src_weights, t, w, inclusive=False):
    """``sum_{s < t} weight_s * exp(-w (t - s))`` for every entry of ``t``."""
    return DecayedSum(src_times, src_weights, w).at(t, inclusive)


def decayed_mass(src_times, src_weights, t, w):
    """``sum_{s < t} weight_s * (1 - exp(-w (t - s))) / w`` for every entry of ``t``."""
    return DecayedSum(src_times, src_weights, w).mass(t)


class UserProcess:
    """Intensity and compensator of one user's question or answer process
    under the full model, vectorized over query times."""

    def __init__(self, dataset: Dataset, params, cfg: ModelConfig, user: int, kind: str):
        P = as_model_params(params)
        self.kind = kind
        self.w = cfg.decay_w
        if kind == QUESTION:
            self.mu, self.rho = float(P.mu_q[user]), float(P.rho_q[user])
        else:
            self.mu, self.rho = float(P.mu_a[user]), float(P.rho_a[user])
        counting = dataset.user_event_indices(user, kind, counting_only=True)
        self._steps = []
        for b in cfg.badges(kind):
            breaks, values = progress_steps(dataset.times[counting], b)
            heights = np.atleast_1d(badge_kernel(b.kernel, values, b.threshold, b.bandwidth))
            self._steps.append((breaks, values, heights))
        if kind == ANSWER:
            q = dataset.question_indices
            self.drive = DecayedSum(dataset.times[q], P.eta[user][dataset.marks[q]], self.w)
        else:
            self.drive = None

    def _badge(self, t, strict=True):
        t = np.asarray(t, dtype=float)
        total = np.zeros_like(t)
        for breaks, values, heights in self._steps:
            idx = np.searchsorted(breaks, t, side="left" if strict else "right")
            total = total + heights[idx]
        return total

    def _badge_cumulative(self, t):
        t = np.asarray(t, dtype=float)
        total = np.zeros_like(t)
        for breaks, _, heights in self._steps:
            lefts = np.concatenate([[0.0], breaks])
            seg = np.diff(lefts) * heights[:-1]
            cum = np.concatenate([[0.0], np.cumsum(seg)])
            idx = np.searchsorted(breaks, t, side="left")
            total = total + cum[idx] + heights[idx] * (t - lefts[idx])
        return total

    def intensity(self, t):
        lam = self.mu + self.rho * self._badge(t)
        if self.kind == ANSWER:
            lam = lam + self.drive.at(t)
        return lam

    def cumulative(self, t):
        """Integral of the intensity over ``[0, t]``."""
        t = np.asarray(t, dtype=float)
        out = self.mu * t + self.rho * self._badge_cumulative(t)
        if self.kind == ANSWER:
            out = out + self.drive.mass(t)
        return out

    def compensator(self, t0, t1):
        return self.cumulative(t1) - self.cumulative(t0)

    def frozen_after(self, t_now) -> DecayingIntensity:
        """Intensity after ``t_now`` with no further events of anyone."""
        level = self.mu + self.rho * float(self._badge(np.array([t_now]), strict=False)[0])
        drive = 0.0
        if self.kind == ANSWER:
            drive = float(self.drive.at(np.array([t_now]), inclusive=True)[0])
        return DecayingIntensity(level, drive, self.w, float(t_now))


class HawkesProcess:
    """Per-user unit-decay Hawkes baseline with the same vectorized interface."""

    def __init__(self, own_times, params: baselines.HawkesParams):
        self.p = params
        self.drive = DecayedSum(own_times, np.ones(np.size(own_times)), 1.0)

    def intensity(self, t):
        return self.p.mu + self.p.beta * self.drive.at(t)

    def cumulative(self, t):
        t = np.asarray(t, dtype=float)
        return self.p.mu * t + self.p.beta * self.drive.mass(t)

    def compensator(self, t0, t1):
        return self.cumulative(t1) - self.cumulative(t0)

    def frozen_after(self, t_now) -> DecayingIntensity:
        drive = float(self.drive.at(np.array([t_now]), inclusive=True)[0])
        return DecayingIntensity(self.p.mu, self.p.beta * drive, 1.0, float(t_now))


class PoissonProcess:
    def __init__(self, rate):
        self.rate = float(rate)

    def intensity(self, t):
        return np.full(np.shape(t), self.rate)

    def cumulative(self, t):
        return self.rate * np.asarray(t, dtype=float)

    def compensator(self, t0, t1):
        return self.rate * (np.asarray(t1, dtype=float) - np.asarray(t0, dtype=float))

    def frozen_after(self, t_now) -> DecayingIntensity:
        return DecayingIntensity(self.rate, 0.0, 1.0, float(t_now))


# ---------------------------------------------------------------------------
# Held-out evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    """Held-out scores of one method; fields a method cannot produce are None.

    ``precision_at_k`` and ``ndcg_at_k`` map a candidate space (``tags`` for
    question tags, ``parents`` for answered questions) to ``{k: value}``.
    """

    method: str
    n_test_events: int
    per_event_loglik: float | None = None
    per_event_loglik_with_marks: float | None = None
    time_mae: float | None = None
    time_mre: float | None = None
    ks_statistic: float | None = None
    ks_pvalue: float | None = None
    ks_low_power: bool | None = None
    precision_at_k: dict = field(default_factory=dict)
    ndcg_at_k: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("precision_at_k", "ndcg_at_k"):
            d[key] = {space: {str(k): v for k, v in m.items()} for space, m in d[key].items()}
        return d

    def rows(self):
        """Flat ``(metric, k, value)`` rows for CSV export."""
        out = []
        for name in ("n_test_events", "per_event_loglik", "per_event_loglik_with_marks", "time_mae",
                     "time_mre", "ks_statistic", "ks_pvalue"):
            v = getattr(self, name)
            if v is not None:
                out.append((name, "", v))
        for name in ("precision_at_k", "ndcg_at_k"):
            for space, m in getattr(self, name).items():
                for k, v in m.items():
                    out.append((f"{name}:{space}", k, v))
        return out


def test_mask(train: Dataset) -> np.ndarray:
    """Events of ``train``'s log that lie outside their observation window."""
    return ~train.in_window()


def _user_kind_times(dataset, user, kind):
    return dataset.times[dataset.user_event_indices(user, kind)]


def _test_groups(train: Dataset):
    """Yield ``(user, kind, all_times, window, n_test)`` for every user/kind with test events."""
    for u in range(train.num_users):
        for kind in KINDS:
            times = _user_kind_times(train, u, kind)
            W = train.window(u, kind)
            n_test = int(np.count_nonzero(times > W))
            if n_test:
                yield u, kind, times, W, n_test


def model_test_loglik(train: Dataset, params, cfg: ModelConfig):
    """Held-out log-likelihood of the full model.

    Returns ``(temporal, marks, n_test)`` where the first two are totals over
    the test events (the difference of the full-window and train-window
    likelihoods, which conditions on the whole history).  ``marks`` is
    ``-inf`` when a test mark has zero probability, e.g. a tag the user
    never used during training.
    """
    P = as_model_params(params)
    full_ix = EventIndex(train.full_window(), cfg)
    train_ix = EventIndex(train, cfg)
    temporal = float(full_ix.per_user_temporal(P)[0].sum() - train_ix.per_user_temporal(P)[0].sum())
    try:
        a = full_ix.log_likelihood_terms(P)
        b = train_ix.log_likelihood_terms(P)
        marks = (a["q_mark"] + a["a_mark"]) - (b["q_mark"] + b["a_mark"])
    except ZeroLikelihoodError as exc:
        log.info("held-out mark likelihood is zero: %s", exc)
        marks = -math.inf
    return temporal, marks, int(np.count_nonzero(test_mask(train)))


def fit_baselines(train: Dataset):
    """Fit Poisson and Hawkes baselines to every user/kind train window.

    Returns two dicts keyed by ``(user, kind)``.
    """
    poisson, hawkes = {}, {}
    for u in range(train.num_users):
        for kind in KINDS:
            times = _user_kind_times(train, u, kind)
            W = train.window(u, kind)
            tr = times[times <= W]
            if W > 0:
                poisson[u, kind] = baselines.fit_poisson(tr, W)
                hawkes[u, kind] = baselines.fit_hawkes(tr, W)
            else:
                poisson[u, kind] = baselines.PoissonParams(0.0, True)
                hawkes[u, kind] = baselines.HawkesParams(0.0, 0.0, True)
    return poisson, hawkes


def baseline_test_loglik(train: Dataset, poisson=None, hawkes=None):
    """Held-out temporal log-likelihood totals ``(poisson, hawkes, n_test)``."""
    if poisson is None or hawkes is None:
        poisson, hawkes = fit_baselines(train)
    lp = lh = 0.0
    n = 0
    for u, kind, times, W, n_test in _test_groups(train):
        H = train.horizon
        lp += baselines.poisson_loglik(times, poisson[u, kind].rate, W, H)
        lh += baselines.hawkes_loglik(times, H, hawkes[u, kind], t0=W)
        n += n_test
    return lp, lh, n


def _processes(method, train, params, cfg, fitted):
    full = train.full_window()
    for u, kind, times, W, n_test in _test_groups(train):
        if method == "model":
            proc = UserProcess(full, params, cfg, u, kind)
        elif method == "poisson":
            proc = PoissonProcess(fitted[u, kind].rate)
        else:
            proc = HawkesProcess(times, fitted[u, kind])
        yield u, kind, times, W, proc


def _temporal_scores(method, train, params, cfg, fitted, n_samples, rng):
    """Time-prediction errors and pooled test residuals for one method."""
    pred, actual, ref, resid = [], [], [], []
    for u, kind, times, W, proc in _processes(method, train, params, cfg, fitted):
        k0 = int(np.searchsorted(times, W, side="right"))
        prev = times[k0 - 1:-1] if k0 > 0 else np.concatenate([[0.0], times[:-1]])
        cur = times[k0:]
        resid.append(proc.compensator(prev, cur))
        for t_prev, t_next in zip(prev, cur):
            if not t_next > t_prev:
                continue
            try:
                guess = predict_next_time(proc.frozen_after(t_prev), t_prev, n_samples, rng)
            except NoEventExpectedError:
                guess = math.inf
            pred.append(guess)
            actual.append(t_next)
            ref.append(t_prev)
    mae = mre = None
    if pred:
        mae, mre = time_errors(pred, actual, ref)
    ks = ks_residuals(np.concatenate(resid)) if resid else None
    return mae, mre, ks


def _mark_scores(method, train, params, cfg, ks, parent_window):
    """Rankings of test-question tags and test-answer parents."""
    full = train.full_window()
    P = as_model_params(params) if params is not None else None
    mask = test_mask(train)
    tag_r, tag_t, par_r, par_t = [], [], [], []
    for i in np.flatnonzero(mask):
        e = full.events[i]
        if e.is_question:
            if method == "model":
                alpha = P.alpha[e.user]
                ranking = np.lexsort((np.arange(alpha.size), -alpha)).tolist()
            elif method == "popular":
                ranking = baselines.popularity_rank(full, e.time, baselines.TAGS)
            else:
                ranking = baselines.recency_rank(full, e.time, baselines.TAGS)
            tag_r.append(ranking)
            tag_t.append(e.mark)
        else:
            if method == "model":
                try:
                    cand, probs = answer_parent_pmf(e.user, e.time, full, P[e.user], cfg)
                    if parent_window is not None:
                        keep = full.times[cand] >= e.time - parent_window
                        cand, probs = cand[keep], probs[keep]
                    ranking = cand[np.lexsort((cand, -probs))].tolist()
                except NoCandidateError:
                    ranking = []
            elif method == "popular":
                ranking = baselines.popularity_rank(full, e.time, baselines.PARENTS, window=parent_window)
            else:
                ranking = baselines.recency_rank(full, e.time, baselines.PARENTS, window=parent_window)
            par_r.append(ranking)
            par_t.append(e.mark)
    prec, ndcg = {}, {}
    for space, r, t in ((baselines.TAGS, tag_r, tag_t), (baselines.PARENTS, par_r, par_t)):
        if r:
            m = rank_metrics(r, t, ks)
            prec[space] = {k: v[0] for k, v in m.items()}
            ndcg[space] = {k: v[1] for k, v in m.items()}
    return prec, ndcg


def evaluate(train: Dataset, params, cfg: ModelConfig, methods=("model", "poisson", "hawkes", "popular", "recent"),
             n_samples=1000, seed=0, ks=DEFAULT_KS, parent_window=None, predict_times=True) -> dict:
    """Score the fitted model and the baselines on the held-out events of ``train``.

    ``parent_window`` bounds the parent candidates of every method to the
    questions asked within that lag; it defaults to the model's decay
    cutoff lag so that all methods rank the same candidate set.
    Returns ``{method: EvalReport}``.
    """
    if parent_window is None:
        parent_window = cfg.max_lag
    n_test = int(np.count_nonzero(test_mask(train)))
    if n_test == 0:
        raise InsufficientDataError("no held-out events to evaluate")
    root = np.random.SeedSequence(seed)
    streams = dict(zip(methods, root.spawn(len(methods))))
    poisson = hawkes = None
    if "poisson" in methods or "hawkes" in methods:
        poisson, hawkes = fit_baselines(train)
        lp, lh, _ = baseline_test_loglik(train, poisson, hawkes)
    reports = {}
    for method in methods:
        rep = EvalReport(method, n_test, notes=[LOGLIK_NOTE, TIME_MRE_NOTE])
        rng = np.random.default_rng(streams[method])
        if method in ("model", "poisson", "hawkes"):
            if method == "model":
                temporal, marks, _ = model_test_loglik(train, params, cfg)
                rep.per_event_loglik = temporal / n_test
                rep.per_event_loglik_with_marks = (temporal + marks) / n_test
                fitted = None
            else:
                rep.per_event_loglik = (lp if method == "poisson" else lh) / n_test
                fitted = poisson if method == "poisson" else hawkes
            if predict_times:
                mae, mre, ksr = _temporal_scores(method, train, params, cfg, fitted, n_samples, rng)
                rep.time_mae, rep.time_mre = mae, mre
                if ksr is not None:
                    rep.ks_statistic, rep.ks_pvalue, rep.ks_low_power = ksr.ks_statistic, ksr.p_value, ksr.low_power
        if method in ("model", "popular", "recent"):
            rep.precision_at_k, rep.ndcg_at_k = _mark_scores(method, train, params, cfg, ks, parent_window)
        elif method not in ("poisson", "hawkes"):
            raise InvalidArgumentError(f"unknown method {method!r}")
        reports[method] = rep
    return reports


def user_residuals(dataset: Dataset, params, cfg: ModelConfig, user: int, kind: str) -> ResidualReport:
    """Residuals of one user's process over the whole dataset under the full model."""
    proc = UserProcess(dataset, params, cfg, user, kind)
    return rescaled_residuals(_user_kind_times(dataset, user, kind), proc.compensator)
