"""Reference models: homogeneous Poisson, per-user Hawkes, and mark rankers."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .model import QUESTION, Dataset

log = logging.getLogger(__name__)

TAGS = "tags"
PARENTS = "parents"


# ---------------------------------------------------------------------------
# Temporal baselines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoissonParams:
    rate: float
    zero_rate: bool = False


@dataclass(frozen=True)
class HawkesParams:
    """Unit-decay exponential Hawkes: ``mu + beta * sum_i exp(-(t - t_i))``."""

    mu: float
    beta: float
    no_events: bool = False

    def __post_init__(self):
        if self.mu < 0 or self.beta < 0:
            raise InvalidArgumentError("Hawkes parameters must be nonnegative")

    @property
    def nonstationary(self) -> bool:
        return self.beta >= 1.0


def _check_times(times, T):
    times = np.asarray(times, dtype=float)
    if not T > 0:
        raise InvalidArgumentError("T must be positive")
    if times.size and (times.min() < 0 or times.max() > T or np.any(np.diff(times) < 0)):
        raise InvalidArgumentError("times must be sorted and lie in [0, T]")
    return times


def fit_poisson(times, T) -> PoissonParams:
    times = _check_times(times, T)
    n = times.size
    return PoissonParams(n / T, zero_rate=n == 0)


def poisson_loglik(times, rate, t0, t1) -> float:
    """Log-likelihood of the events in ``(t0, t1]`` under a constant rate."""
    times = np.asarray(times, dtype=float)
    n = int(np.count_nonzero((times > t0) & (times <= t1)))
    if n == 0:
        return -rate * (t1 - t0)
    if rate <= 0:
        return -np.inf
    return n * np.log(rate) - rate * (t1 - t0)


def _excitation(times):
    """``R_i = sum_{j < i} exp(-(t_i - t_j))`` by the usual recursion."""
    R = np.zeros(times.size)
    for i in range(1, times.size):
        R[i] = np.exp(-(times[i] - times[i - 1])) * (1.0 + R[i - 1])
    return R


def hawkes_intensity(history, t, params: HawkesParams) -> float:
    history = np.asarray(history, dtype=float)
    past = history[history < t]
    return params.mu + params.beta * float(np.exp(-(t - past)).sum())


def hawkes_compensator(times, t0, t1, params: HawkesParams) -> float:
    """Integral of the intensity over ``[t0, t1]`` given the events ``times``."""
    times = np.asarray(times, dtype=float)
    past = times[times < t1]
    start = np.maximum(past, t0)
    return params.mu * (t1 - t0) + params.beta * float((np.exp(-(start - past)) - np.exp(-(t1 - past))).sum())


def hawkes_loglik(times, T, params: HawkesParams, t0=0.0) -> float:
    """Log-likelihood of the events in ``(t0, T]``, conditioning on all earlier ones."""
    times = np.asarray(times, dtype=float)
    R = _excitation(times)
    lam = params.mu + params.beta * R
    sel = (times > t0) & (times <= T) if t0 > 0 else times <= T
    lam = lam[sel]
    if np.any(lam <= 0):
        return -np.inf
    return float(np.log(lam).sum()) - hawkes_compensator(times, t0, T, params)


def fit_hawkes(times, T, tol=1e-6, max_iter=500) -> HawkesParams:
    """Maximum-likelihood ``(mu, beta)`` by branching-structure EM.

    The log-likelihood is concave in ``(mu, beta)``; EM is followed by a few
    projected Newton steps so that the returned pair is a stationary point
    (or the optimum on the ``beta = 0`` boundary).
    """
    times = _check_times(times, T)
    n = times.size
    if n == 0:
        return HawkesParams(0.0, 0.0, no_events=True)
    R = _excitation(times)
    mass = float((-np.expm1(-(T - times))).sum())
    mu, beta = 0.5 * n / T, 0.5
    for _ in range(max_iter):
        lam = mu + beta * R
        new_mu = float((mu / lam).sum()) / T
        new_beta = float((beta * R / lam).sum()) / mass
        done = abs(new_mu - mu) <= tol * max(mu, 1e-300) and abs(new_beta - beta) <= tol * max(beta, 1e-12)
        mu, beta = new_mu, new_beta
        if done:
            break
    mu, beta = _newton_polish(R, T, mass, mu, beta)

    def ll(m, b):
        lam = m + b * R
        return -np.inf if np.any(lam <= 0) else float(np.log(lam).sum()) - m * T - b * mass

    # the Poisson fit is the beta = 0 member of the family
    if ll(n / T, 0.0) > ll(mu, beta):
        mu, beta = n / T, 0.0
    params = HawkesParams(mu, beta)
    if params.nonstationary:
        log.warning("fitted Hawkes branching ratio %.3g >= 1", beta)
    return params


def _newton_polish(R, T, mass, mu, beta, steps=50):
    x = np.array([mu, beta])
    for _ in range(steps):
        lam = x[0] + x[1] * R
        g = np.array([(1 / lam).sum() - T, (R / lam).sum() - mass])
        w = 1 / lam ** 2
        Hs = -np.array([[w.sum(), (R * w).sum()], [(R * w).sum(), (R * R * w).sum()]])
        try:
            step = np.linalg.solve(Hs, -g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while np.any(x + t * step < 0) and t > 1e-12:
            t *= 0.5
        new = np.maximum(x + t * step, 0.0)
        if new[0] <= 0:
            break
        if np.all(np.abs(new - x) <= 1e-14 * np.maximum(np.abs(x), 1e-300)):
            x = new
            break
        x = new
    return float(x[0]), float(x[1])


# ---------------------------------------------------------------------------
# Mark rankers
# ---------------------------------------------------------------------------

def _past(dataset: Dataset, t):
    return int(np.searchsorted(dataset.times, t, side="left"))


def popularity_rank(dataset: Dataset, t, space=TAGS, window=None) -> list:
    """Candidates ordered by how often they were used before ``t``.

    ``tags``: all tags ranked by the number of earlier questions carrying
    them.  ``parents``: earlier questions ranked by their number of earlier
    answers (optionally only questions asked within ``window`` of ``t``).
    Ties go to the smaller id.
    """
    n = _past(dataset, t)
    if n == 0:
        return []
    isq = dataset.is_question[:n]
    marks = dataset.marks[:n]
    if space == TAGS:
        counts = np.bincount(marks[isq], minlength=dataset.num_tags)
        return np.lexsort((np.arange(counts.size), -counts)).tolist()
    if space == PARENTS:
        cand = _parent_candidates(dataset, n, t, window)
        if cand.size == 0:
            return []
        answered = np.bincount(marks[~isq], minlength=n)[cand]
        return cand[np.lexsort((cand, -answered))].tolist()
    raise InvalidArgumentError(f"unknown candidate space {space!r}")


def recency_rank(dataset: Dataset, t, space=TAGS, window=None) -> list:
    """Candidates ordered by their most recent use before ``t``, newest first.

    For ``tags`` the last question carrying the tag counts; tags never used
    go last by id.  For ``parents`` a question's own time counts as a use,
    as do later answers to it.  Ties go to the smaller id.
    """
    n = _past(dataset, t)
    if n == 0:
        return []
    isq = dataset.is_question[:n]
    marks = dataset.marks[:n]
    times = dataset.times[:n]
    if space == TAGS:
        last = np.full(dataset.num_tags, -np.inf)
        np.maximum.at(last, marks[isq], times[isq])
        return np.lexsort((np.arange(last.size), -last)).tolist()
    if space == PARENTS:
        cand = _parent_candidates(dataset, n, t, window)
        if cand.size == 0:
            return []
        last = times.copy()
        np.maximum.at(last, marks[~isq], times[~isq])
        return cand[np.lexsort((cand, -last[cand]))].tolist()
    raise InvalidArgumentError(f"unknown candidate space {space!r}")


def _parent_candidates(dataset, n, t, window):
    q = dataset.question_indices
    q = q[q < n]
    if window is not None:
        q = q[dataset.times[q] >= t - window]
    return q
