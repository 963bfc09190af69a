"""Synthetic parameter generation and Ogata-thinning simulation."""
from __future__ import annotations

import bisect
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import InvalidArgumentError, InvariantError
from .model import (
    ACTIVE_DAYS,
    ANSWER,
    EVENT_COUNT,
    GAUSSIAN,
    KERNELS,
    QUESTION,
    BadgeSpec,
    Dataset,
    Event,
    ModelConfig,
    ModelParams,
    as_model_params,
    badge_kernel,
)

log = logging.getLogger(__name__)

TIME_CAP = 1e7
_ACCEPT_SLACK = 1e-9
_JITTER = 1e-12


class SimulationCapWarning(UserWarning):
    """The events-per-user target was not reached before the time cap."""


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings.  Defaults reproduce the published synthetic setup;
    ``omega`` and ``decay_w`` are not published and are our choices."""

    U: int = 100
    K: int = 50
    n_badges_q: int = 5
    n_badges_a: int = 5
    tau_range: tuple = (0.0, 500.0)
    dirichlet_concentration: float = 0.1
    mu_q_range: tuple = (0.0, 0.01)
    mu_a_range: tuple = (0.0, 0.05)
    rho_range: tuple = (0.0, 1.0)
    kernel: str = GAUSSIAN
    omega: float = 5.0
    decay_w: float = 1.0
    feature: str = EVENT_COUNT
    seed: int = 0
    horizon: float | None = None
    events_per_user: int | None = 1400

    def __post_init__(self):
        for name in ("tau_range", "mu_q_range", "mu_a_range", "rho_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise InvalidArgumentError(f"{name}: lower bound exceeds upper bound")
            if lo < 0:
                raise InvalidArgumentError(f"{name}: values must be nonnegative")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.U < 1 or self.K < 1 or self.n_badges_q < 0 or self.n_badges_a < 0:
            raise InvalidArgumentError("U, K must be positive and badge counts nonnegative")
        if self.kernel not in KERNELS:
            raise InvalidArgumentError(f"unknown kernel {self.kernel!r}")
        if self.feature not in (EVENT_COUNT, ACTIVE_DAYS):
            raise InvalidArgumentError(f"unknown feature {self.feature!r}")
        if not (self.omega > 0 and self.decay_w > 0 and self.dirichlet_concentration > 0):
            raise InvalidArgumentError("omega, decay_w and dirichlet_concentration must be positive")
        if (self.horizon is None) == (self.events_per_user is None):
            raise InvalidArgumentError("exactly one of horizon and events_per_user must be set")
        if self.horizon is not None and not self.horizon > 0:
            raise InvalidArgumentError("horizon must be positive")
        if self.events_per_user is not None and not self.events_per_user > 0:
            raise InvalidArgumentError("events_per_user must be positive")

    @classmethod
    def desk(cls, **overrides) -> "SyntheticConfig":
        """Laptop-sized preset used by the test-suite and the examples."""
        base = dict(U=20, K=10, n_badges_q=3, n_badges_a=3, tau_range=(0.0, 100.0),
                    mu_q_range=(0.05, 0.5), mu_a_range=(0.05, 0.5), rho_range=(0.2, 2.0),
                    omega=20.0, decay_w=1.0, events_per_user=500)
        base.update(overrides)
        if "horizon" in overrides and "events_per_user" not in overrides:
            base["events_per_user"] = None
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown synthetic config keys: {sorted(unknown)}")
        d = dict(d)
        for name in ("tau_range", "mu_q_range", "mu_a_range", "rho_range"):
            if name in d:
                d[name] = tuple(d[name])
        return cls(**d)


def sample_synthetic_params(cfg: SyntheticConfig, rng=None):
    """Draw per-user parameters and the badge configuration.

    Badge thresholds are shared by all users; ``alpha`` and ``eta`` rows are
    symmetric Dirichlet draws.  Returns ``(ModelParams, ModelConfig)``.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    U, K = cfg.U, cfg.K

    def badges(action, n):
        taus = rng.uniform(*cfg.tau_range, size=n)
        # a zero threshold is not a valid badge
        taus = np.maximum(taus, 1e-9)
        return tuple(BadgeSpec(action, float(t), cfg.feature, cfg.kernel, cfg.omega,
                               name=f"{action[0]}{i}") for i, t in enumerate(taus))

    model_cfg = ModelConfig(badges("question", cfg.n_badges_q), badges("answer", cfg.n_badges_a),
                            decay_w=cfg.decay_w)
    conc = np.full(K, cfg.dirichlet_concentration)
    alpha = _dirichlet(rng, conc, U)
    eta = _dirichlet(rng, conc, U)
    params = ModelParams(
        mu_q=rng.uniform(*cfg.mu_q_range, size=U),
        mu_a=rng.uniform(*cfg.mu_a_range, size=U),
        rho_q=rng.uniform(*cfg.rho_range, size=U),
        rho_a=rng.uniform(*cfg.rho_range, size=U),
        alpha=alpha,
        eta=eta,
    )
    return params, model_cfg


def _dirichlet(rng, conc, n):
    out = rng.dirichlet(conc, size=n)
    # small concentrations can underflow every coordinate of a row
    bad = ~(out.sum(axis=1) > 0)
    out[bad] = np.eye(conc.size)[rng.integers(conc.size, size=bad.sum())]
    return out / out.sum(axis=1, keepdims=True)


class _BadgeTracker:
    """Running badge-kernel sum for one user and one action kind."""

    def __init__(self, badges):
        self.badges = badges
        self.count = 0
        self.days = [set() for _ in badges]

    def add(self, t):
        self.count += 1
        for b, days in zip(self.badges, self.days):
            if b.feature == ACTIVE_DAYS:
                days.add(math.floor(t / b.day_length))

    def value(self):
        total = 0.0
        for b, days in zip(self.badges, self.days):
            x = self.count if b.feature == EVENT_COUNT else len(days)
            total += badge_kernel(b.kernel, x, b.threshold, b.bandwidth)
        return total


def simulate(params, cfg: ModelConfig, rng, num_tags=None, horizon=None, events_per_user=None,
             time_cap=TIME_CAP) -> Dataset:
    """Sample a dataset from the model by thinning.

    Stop either at ``horizon`` or once every user has ``events_per_user``
    events (questions plus answers); in the latter case the returned
    horizon is the time of the event that met the target, or ``time_cap``
    if it was not met (a :class:`SimulationCapWarning` is issued).

    The dominating rate is the exact current total intensity.  Badge terms
    only change at a user's own events and the question-driven answer term
    only decays between events, so the intensity at the last accepted or
    rejected proposal bounds it until the next event.  Answers need a
    question to point at, so answer rates are held at zero until the first
    question appears.
    """
    P = as_model_params(params)
    U = P.num_users
    K = P.num_tags if num_tags is None else num_tags
    if (horizon is None) == (events_per_user is None):
        raise InvalidArgumentError("pass exactly one of horizon and events_per_user")
    w = cfg.decay_w
    stop_time = float(horizon) if horizon is not None else float(time_cap)

    trackers_q = [_BadgeTracker(cfg.badges_q) for _ in range(U)]
    trackers_a = [_BadgeTracker(cfg.badges_a) for _ in range(U)]
    base_q = P.mu_q + P.rho_q * np.array([tr.value() for tr in trackers_q])
    base_a = P.mu_a + P.rho_a * np.array([tr.value() for tr in trackers_a])
    eta_col = P.eta.sum(axis=0)
    alpha_cum = np.cumsum(P.alpha / P.alpha.sum(axis=1, keepdims=True), axis=1)
    exposure = np.zeros(K)                     # sum over tag-k questions of exp(-w (t - t_i))
    questions = _QuestionLog(K)
    per_user = np.zeros(U, dtype=np.int64)
    events = []
    t = 0.0
    last_time = -np.inf
    answers_on = False
    const_total = base_q.sum()
    drive_total = 0.0
    bound = const_total
    reached = events_per_user is None

    while True:
        if bound <= 0:
            break
        t_new = t + rng.exponential(1.0 / bound)
        if t_new > stop_time:
            break
        decay = math.exp(-w * (t_new - t))
        exposure *= decay
        drive_total *= decay
        t = t_new
        lam = const_total + drive_total
        if lam > bound * (1.0 + _ACCEPT_SLACK):
            raise InvariantError(f"thinning bound violated at t={t}: {lam} > {bound}")
        if rng.random() * bound >= lam:
            bound = lam
            continue

        if answers_on:
            comps = np.concatenate([base_q, base_a + P.eta @ exposure])
        else:
            comps = base_q
        cum = np.cumsum(comps)
        c = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), comps.size - 1)
        if t <= last_time:
            t = last_time + _JITTER
        last_time = t
        idx = len(events)
        if c < U:
            u = c
            tag = min(int(np.searchsorted(alpha_cum[u], rng.random() * alpha_cum[u, -1], side="right")), K - 1)
            events.append(Event(t, u, QUESTION, tag))
            questions.add(t, tag, idx)
            exposure[tag] += 1.0
            drive_total += eta_col[tag]
            trackers_q[u].add(t)
            old = base_q[u]
            base_q[u] = P.mu_q[u] + P.rho_q[u] * trackers_q[u].value()
            const_total += base_q[u] - old
            if not answers_on:
                answers_on = True
                const_total += base_a.sum()
        else:
            u = c - U
            parent = questions.sample_parent(rng, P.eta[u], exposure, t, w, cfg.max_lag)
            events.append(Event(t, u, ANSWER, parent))
            trackers_a[u].add(t)
            old = base_a[u]
            base_a[u] = P.mu_a[u] + P.rho_a[u] * trackers_a[u].value()
            const_total += base_a[u] - old
        per_user[u] += 1
        bound = const_total + drive_total
        if events_per_user is not None and per_user.min() >= events_per_user:
            reached = True
            stop_time = t
            break

    if not reached:
        msg = (f"events-per-user target {events_per_user} not reached by t={stop_time:g}; "
               f"smallest user count {int(per_user.min())}")
        log.warning(msg)
        warnings.warn(msg, SimulationCapWarning, stacklevel=2)
    T = stop_time if stop_time > 0 else time_cap
    return Dataset(events, T, U, K)


class _QuestionLog:
    """Question times and log indices, grouped by tag and in total."""

    def __init__(self, K):
        self.by_tag_times = [[] for _ in range(K)]
        self.by_tag_index = [[] for _ in range(K)]
        self.times = []
        self.tags = []
        self.index = []

    def add(self, t, tag, idx):
        self.by_tag_times[tag].append(t)
        self.by_tag_index[tag].append(idx)
        self.times.append(t)
        self.tags.append(tag)
        self.index.append(idx)

    def sample_parent(self, rng, eta_u, exposure, t, w, max_lag):
        weights = eta_u * exposure
        total = weights.sum()
        if not total > 0:
            return self._sample_log_space(rng, eta_u, t, w)
        cum = np.cumsum(weights)
        k = min(int(np.searchsorted(cum, rng.random() * total, side="right")), cum.size - 1)
        times = self.by_tag_times[k]
        start = bisect.bisect_left(times, t - max_lag)
        if start == len(times):
            start = 0
        cw = np.cumsum(np.exp(-w * (t - np.asarray(times[start:]))))
        j = min(int(np.searchsorted(cw, rng.random() * cw[-1], side="right")), cw.size - 1)
        return self.by_tag_index[k][start + j]

    def _sample_log_space(self, rng, eta_u, t, w):
        # every decay factor underflowed: renormalise relative to the newest question
        times = np.asarray(self.times)
        logw = np.log(np.maximum(eta_u[np.asarray(self.tags)], 1e-300)) - w * (t - times)
        p = np.exp(logw - logw.max())
        cw = np.cumsum(p)
        j = min(int(np.searchsorted(cw, rng.random() * cw[-1], side="right")), cw.size - 1)
        return self.index[j]


def simulate_synthetic(cfg: SyntheticConfig):
    """Sample parameters and a dataset from one seeded config.

    Returns ``(dataset, params, model_cfg)``.
    """
    rng = np.random.default_rng(cfg.seed)
    params, model_cfg = sample_synthetic_params(cfg, rng)
    ds = simulate(params, model_cfg, rng, num_tags=cfg.K, horizon=cfg.horizon,
                  events_per_user=cfg.events_per_user)
    return ds, params, model_cfg
