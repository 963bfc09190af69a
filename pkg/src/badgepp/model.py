"""Badge-aware intertwined point processes for asking and answering.

Each user ``u`` carries two temporal processes.  Questions arrive with
intensity::

    lambda_q(t) = mu_q + rho_q * sum_b g(h_b(history_q(t)), tau_b)

and answers with::

    lambda_a(t) = mu_a + rho_a * sum_b g(h_b(history_a(t)), tau_b)
                + sum_{questions i before t} eta[z_i] * exp(-w (t - t_i))

where ``g`` is a bounded badge kernel of the user's progress ``h_b``
toward the badge threshold ``tau_b``.  Question tags are drawn from
``alpha`` and answer parents from the decayed, expertise-weighted
distribution over earlier questions.

The functions in this module are the scalar, readable reference path.
Whole-dataset evaluation goes through :class:`badgepp.index.EventIndex`,
which computes the same quantities in vectorized form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateParameterError,
    InvalidArgumentError,
    NoCandidateError,
)

QUESTION = "q"
ANSWER = "a"
KINDS = (QUESTION, ANSWER)
_ACTION_KIND = {"question": QUESTION, "answer": ANSWER}

GAUSSIAN = "gaussian"
EXPONENTIAL = "exponential"
KERNELS = (GAUSSIAN, EXPONENTIAL)

EVENT_COUNT = "event_count"
ACTIVE_DAYS = "active_days"
FEATURES = (EVENT_COUNT, ACTIVE_DAYS)

SIMPLEX_TOL = 1e-9


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Event:
    """One timestamped action.

    ``mark`` is the tag id for a question and the global log index of the
    answered question for an answer.
    """

    time: float
    user: int
    kind: str
    mark: int
    counts_toward_badge: bool = True

    @classmethod
    def question(cls, time, user, tag, counts_toward_badge=True):
        return cls(float(time), int(user), QUESTION, int(tag), counts_toward_badge)

    @classmethod
    def answer(cls, time, user, parent, counts_toward_badge=True):
        return cls(float(time), int(user), ANSWER, int(parent), counts_toward_badge)

    @property
    def is_question(self) -> bool:
        return self.kind == QUESTION

    @property
    def tag(self) -> int:
        if self.kind != QUESTION:
            raise AttributeError("answers carry a parent, not a tag")
        return self.mark

    @property
    def parent(self) -> int:
        if self.kind != ANSWER:
            raise AttributeError("questions carry a tag, not a parent")
        return self.mark


@dataclass(frozen=True, eq=False)
class Dataset:
    """Time-ordered global event log on ``[0, horizon]``.

    ``windows[u, 0]`` and ``windows[u, 1]`` are the ends of the observation
    windows of user ``u``'s question and answer processes.  They default to
    the horizon; a train split shortens them so that the events after a
    window are held out while still conditioning every intensity on them.
    """

    events: tuple
    horizon: float
    num_users: int
    num_tags: int
    windows: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "horizon", float(self.horizon))
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise InvalidArgumentError(f"horizon must be positive, got {self.horizon}")
        if self.num_users < 1 or self.num_tags < 1:
            raise InvalidArgumentError("num_users and num_tags must be positive")
        if self.windows is None:
            w = np.full((self.num_users, 2), self.horizon)
        else:
            w = np.array(self.windows, dtype=float)
            if w.shape != (self.num_users, 2):
                raise InvalidArgumentError(f"windows must have shape ({self.num_users}, 2)")
            if np.any(w < 0) or np.any(w > self.horizon) or not np.all(np.isfinite(w)):
                raise InvalidArgumentError("windows must lie in [0, horizon]")
        w.setflags(write=False)
        object.__setattr__(self, "windows", w)
        self._validate()

    def _validate(self):
        prev = 0.0
        for i, e in enumerate(self.events):
            if e.kind not in KINDS:
                raise InvalidArgumentError(f"event {i}: unknown kind {e.kind!r}")
            if not (math.isfinite(e.time) and e.time >= 0):
                raise InvalidArgumentError(f"event {i}: time must be finite and >= 0")
            if e.time < prev:
                raise InvalidArgumentError(f"event {i}: events are not sorted by time")
            if e.time > self.horizon:
                raise InvalidArgumentError(f"event {i}: time {e.time} exceeds horizon {self.horizon}")
            if not 0 <= e.user < self.num_users:
                raise InvalidArgumentError(f"event {i}: user {e.user} out of range")
            if e.kind == QUESTION:
                if not 0 <= e.mark < self.num_tags:
                    raise InvalidArgumentError(f"event {i}: tag {e.mark} out of range")
            else:
                p = e.mark
                if not 0 <= p < i or self.events[p].kind != QUESTION:
                    raise InvalidArgumentError(f"event {i}: parent {p} is not an earlier question")
                if not self.events[p].time < e.time:
                    raise InvalidArgumentError(f"event {i}: parent {p} is not strictly earlier")
            prev = e.time

    def __len__(self):
        return len(self.events)

    # Column views -----------------------------------------------------------

    @cached_property
    def times(self) -> np.ndarray:
        return _frozen(np.array([e.time for e in self.events], dtype=float))

    @cached_property
    def users(self) -> np.ndarray:
        return _frozen(np.array([e.user for e in self.events], dtype=np.int64))

    @cached_property
    def is_question(self) -> np.ndarray:
        return _frozen(np.array([e.kind == QUESTION for e in self.events], dtype=bool))

    @cached_property
    def marks(self) -> np.ndarray:
        return _frozen(np.array([e.mark for e in self.events], dtype=np.int64))

    @cached_property
    def counts_toward_badge(self) -> np.ndarray:
        return _frozen(np.array([e.counts_toward_badge for e in self.events], dtype=bool))

    @cached_property
    def question_indices(self) -> np.ndarray:
        return _frozen(np.flatnonzero(self.is_question))

    @cached_property
    def answer_indices(self) -> np.ndarray:
        return _frozen(np.flatnonzero(~self.is_question))

    # Derived views ---------------------------------------------------------

    def kind_mask(self, kind: str) -> np.ndarray:
        return self.is_question if kind == QUESTION else ~self.is_question

    def user_event_indices(self, user: int, kind: str, before: float | None = None,
                           counting_only: bool = False) -> np.ndarray:
        """Indices of ``user``'s events of ``kind``, optionally strictly before a time."""
        mask = (self.users == user) & self.kind_mask(kind)
        if counting_only:
            mask &= self.counts_toward_badge
        if before is not None:
            mask &= self.times < before
        return np.flatnonzero(mask)

    def questions_before(self, t: float) -> np.ndarray:
        """Global indices of all users' questions strictly before ``t``."""
        q = self.question_indices
        return q[: np.searchsorted(self.times[q], t, side="left")]

    def window(self, user: int, kind: str) -> float:
        return float(self.windows[user, 0 if kind == QUESTION else 1])

    def in_window(self) -> np.ndarray:
        """Mask of events inside their own user/kind observation window."""
        col = np.where(self.is_question, 0, 1)
        return self.times <= self.windows[self.users, col]

    def with_windows(self, windows) -> "Dataset":
        return Dataset(self.events, self.horizon, self.num_users, self.num_tags, windows)

    def full_window(self) -> "Dataset":
        return Dataset(self.events, self.horizon, self.num_users, self.num_tags)


def _frozen(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BadgeSpec:
    """One threshold badge and the kernel describing its pull on a user."""

    action: str
    threshold: float
    feature: str = EVENT_COUNT
    kernel: str = GAUSSIAN
    bandwidth: float = 1.0
    day_length: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.action not in _ACTION_KIND:
            raise InvalidArgumentError(f"badge action must be 'question' or 'answer', got {self.action!r}")
        if self.feature not in FEATURES:
            raise InvalidArgumentError(f"unknown badge feature {self.feature!r}")
        if self.kernel not in KERNELS:
            raise InvalidArgumentError(f"unknown badge kernel {self.kernel!r}")
        for name in ("threshold", "bandwidth", "day_length"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidArgumentError(f"badge {name} must be positive, got {v}")

    @property
    def kind(self) -> str:
        return _ACTION_KIND[self.action]


@dataclass(frozen=True)
class ModelConfig:
    badges_q: tuple = ()
    badges_a: tuple = ()
    decay_w: float = 1.0
    cross_cutoff: float = 1e-12
    time_unit: str = "days"

    def __post_init__(self):
        object.__setattr__(self, "badges_q", tuple(self.badges_q))
        object.__setattr__(self, "badges_a", tuple(self.badges_a))
        if not (math.isfinite(self.decay_w) and self.decay_w > 0):
            raise InvalidArgumentError(f"decay_w must be positive, got {self.decay_w}")
        if not 0 < self.cross_cutoff < 1:
            raise InvalidArgumentError("cross_cutoff must lie in (0, 1)")
        for b in self.badges_q:
            if b.kind != QUESTION:
                raise InvalidArgumentError("badges_q may only hold question badges")
        for b in self.badges_a:
            if b.kind != ANSWER:
                raise InvalidArgumentError("badges_a may only hold answer badges")

    def badges(self, kind: str) -> tuple:
        return self.badges_q if kind == QUESTION else self.badges_a

    @property
    def max_lag(self) -> float:
        """Largest lag whose decay factor stays at or above ``cross_cutoff``."""
        return -math.log(self.cross_cutoff) / self.decay_w


@dataclass(frozen=True, eq=False)
class UserParams:
    mu_q: float
    mu_a: float
    rho_q: float
    rho_a: float
    alpha: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        for name in ("mu_q", "mu_a", "rho_q", "rho_a"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v >= 0):
                raise InvalidArgumentError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)
        for name in ("alpha", "eta"):
            v = _frozen(np.array(getattr(self, name), dtype=float))
            if v.ndim != 1 or np.any(v < 0) or not np.all(np.isfinite(v)):
                raise InvalidArgumentError(f"{name} must be a nonnegative vector")
            if abs(v.sum() - 1.0) > SIMPLEX_TOL:
                raise InvalidArgumentError(f"{name} must sum to 1 (got {v.sum()!r})")
            object.__setattr__(self, name, v)
        if self.alpha.shape != self.eta.shape:
            raise InvalidArgumentError("alpha and eta must have the same length")

    def __eq__(self, other):
        if not isinstance(other, UserParams):
            return NotImplemented
        return (self.mu_q, self.mu_a, self.rho_q, self.rho_a) == (other.mu_q, other.mu_a, other.rho_q, other.rho_a) \
            and np.array_equal(self.alpha, other.alpha) and np.array_equal(self.eta, other.eta)


@dataclass(eq=False)
class ModelParams:
    """Parameters of all users, stored column-wise for vectorized code."""

    mu_q: np.ndarray
    mu_a: np.ndarray
    rho_q: np.ndarray
    rho_a: np.ndarray
    alpha: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        for name in ("mu_q", "mu_a", "rho_q", "rho_a", "alpha", "eta"):
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        if self.alpha.ndim != 2 or self.alpha.shape != self.eta.shape:
            raise InvalidArgumentError("alpha and eta must be (U, K) arrays of equal shape")
        U = self.alpha.shape[0]
        for name in ("mu_q", "mu_a", "rho_q", "rho_a"):
            if getattr(self, name).shape != (U,):
                raise InvalidArgumentError(f"{name} must have shape ({U},)")

    @property
    def num_users(self) -> int:
        return self.alpha.shape[0]

    @property
    def num_tags(self) -> int:
        return self.alpha.shape[1]

    def __len__(self):
        return self.num_users

    def __getitem__(self, u) -> UserParams:
        return UserParams(self.mu_q[u], self.mu_a[u], self.rho_q[u], self.rho_a[u],
                          self.alpha[u], self.eta[u])

    def __iter__(self):
        return (self[u] for u in range(self.num_users))

    @classmethod
    def from_users(cls, users: Sequence[UserParams]) -> "ModelParams":
        return cls(
            [p.mu_q for p in users], [p.mu_a for p in users],
            [p.rho_q for p in users], [p.rho_a for p in users],
            np.stack([p.alpha for p in users]), np.stack([p.eta for p in users]),
        )

    def copy(self) -> "ModelParams":
        return ModelParams(self.mu_q.copy(), self.mu_a.copy(), self.rho_q.copy(),
                           self.rho_a.copy(), self.alpha.copy(), self.eta.copy())

    def permuted(self, perm) -> "ModelParams":
        perm = np.asarray(perm)
        return ModelParams(self.mu_q[perm], self.mu_a[perm], self.rho_q[perm],
                           self.rho_a[perm], self.alpha[perm], self.eta[perm])

    def validate(self):
        for u in range(self.num_users):
            self[u]


def as_model_params(params) -> ModelParams:
    if isinstance(params, ModelParams):
        return params
    return ModelParams.from_users(list(params))


# ---------------------------------------------------------------------------
# Kernels and history features
# ---------------------------------------------------------------------------

def badge_kernel(kind, x, tau, omega):
    """Pull of a badge with threshold ``tau`` on a user whose progress is ``x``.

    ``gaussian`` is ``exp(-((tau - x) / (2 omega))**2)``; ``exponential`` is
    ``exp(-omega (tau - x))`` below the threshold and zero once it is passed.
    Works elementwise on arrays.
    """
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(tau)) and np.all(np.isfinite(omega))):
        raise InvalidArgumentError("badge_kernel inputs must be finite")
    if np.any(omega <= 0):
        raise InvalidArgumentError("badge_kernel bandwidth must be positive")
    gap = tau - x
    if kind == GAUSSIAN:
        out = np.exp(-np.square(gap / (2.0 * omega)))
    elif kind == EXPONENTIAL:
        out = np.where(gap >= 0, np.exp(-omega * np.maximum(gap, 0.0)), 0.0)
    else:
        raise InvalidArgumentError(f"unknown kernel kind {kind!r}")
    return float(out) if out.ndim == 0 else out


def progress_steps(times, badge: BadgeSpec):
    """Progress toward ``badge`` as a right-continuous step function.

    ``times`` are the sorted times of the user's badge-counting events of the
    badge's action.  Returns ``(breaks, values)`` where ``values[k]`` is the
    progress once ``k`` of the events lie strictly in the past, i.e. on
    ``(breaks[k-1], breaks[k]]``.
    """
    times = np.asarray(times, dtype=float)
    n = times.size
    if badge.feature == EVENT_COUNT:
        values = np.arange(n + 1, dtype=float)
    else:
        buckets = np.floor(times / badge.day_length)
        new_day = np.ones(n, dtype=bool)
        new_day[1:] = buckets[1:] != buckets[:-1]
        values = np.concatenate([[0.0], np.cumsum(new_day, dtype=float)])
    return times, values


def progress_at(breaks, values, t):
    """Evaluate a :func:`progress_steps` function at ``t`` (strict past)."""
    return values[np.searchsorted(breaks, t, side="left")]


def step_integral(breaks, heights, t0, t1):
    """Integral over ``[t0, t1]`` of the step function with the given heights."""
    lefts = np.concatenate([[-np.inf], breaks])
    rights = np.concatenate([breaks, [np.inf]])
    overlap = np.clip(np.minimum(rights, t1) - np.maximum(lefts, t0), 0.0, None)
    return float(np.dot(heights, overlap))


def _badge_times(dataset: Dataset, user: int, badge: BadgeSpec):
    idx = dataset.user_event_indices(user, badge.kind, counting_only=True)
    return dataset.times[idx]


def history_feature(badge: BadgeSpec, dataset: Dataset, user: int, t: float) -> float:
    """Progress of ``user`` toward ``badge`` from events strictly before ``t``."""
    if t > dataset.horizon:
        raise InvalidArgumentError(f"t={t} beyond horizon {dataset.horizon}")
    breaks, values = progress_steps(_badge_times(dataset, user, badge), badge)
    return float(progress_at(breaks, values, t))


def badge_sum(badges, dataset: Dataset, user: int, t: float) -> float:
    total = 0.0
    for b in badges:
        total += badge_kernel(b.kernel, history_feature(b, dataset, user, t), b.threshold, b.bandwidth)
    return total


def time_decay(t_i, t_j, w):
    """``exp(-w (t_j - t_i))``; requires ``t_j >= t_i``."""
    t_i = np.asarray(t_i, dtype=float)
    t_j = np.asarray(t_j, dtype=float)
    if np.any(t_j < t_i):
        raise InvalidArgumentError("time_decay requires t_j >= t_i")
    if not w > 0:
        raise InvalidArgumentError("decay rate must be positive")
    out = np.exp(-w * (t_j - t_i))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Intensities and mark distributions
# ---------------------------------------------------------------------------

def _check_t(t, dataset):
    if not 0 <= t <= dataset.horizon:
        raise InvalidArgumentError(f"t={t} outside [0, {dataset.horizon}]")


def question_intensity(user: int, t: float, dataset: Dataset, params: UserParams, cfg: ModelConfig) -> float:
    _check_t(t, dataset)
    return params.mu_q + params.rho_q * badge_sum(cfg.badges_q, dataset, user, t)


def _question_terms(user, t, dataset, params, cfg):
    """Global indices and weights ``eta[z_i] * decay`` of questions feeding the answer rate."""
    q = dataset.questions_before(t)
    decay = np.exp(-cfg.decay_w * (t - dataset.times[q]))
    keep = decay >= cfg.cross_cutoff
    q, decay = q[keep], decay[keep]
    return q, params.eta[dataset.marks[q]] * decay


def answer_intensity(user: int, t: float, dataset: Dataset, params: UserParams, cfg: ModelConfig) -> float:
    _check_t(t, dataset)
    _, weights = _question_terms(user, t, dataset, params, cfg)
    return params.mu_a + params.rho_a * badge_sum(cfg.badges_a, dataset, user, t) + float(weights.sum())


def question_mark_pmf(params) -> np.ndarray:
    """Tag distribution of a user's questions; ``params`` is UserParams or raw ``alpha``."""
    alpha = np.asarray(params.alpha if isinstance(params, UserParams) else params, dtype=float)
    s = alpha.sum()
    if not s > 0:
        raise DegenerateParameterError("alpha has no positive mass")
    return alpha / s


def answer_parent_pmf(user: int, t: float, dataset: Dataset, params: UserParams, cfg: ModelConfig):
    """Distribution over earlier questions of the one ``user`` answers at ``t``.

    Returns ``(candidates, probs)``: global question indices (questions whose
    decay fell below ``cfg.cross_cutoff`` are excluded) and their probabilities.
    """
    q, weights = _question_terms(user, t, dataset, params, cfg)
    if q.size == 0:
        raise NoCandidateError(f"no questions before t={t}")
    s = weights.sum()
    if not s > 0:
        raise DegenerateParameterError("all candidate questions have zero weight")
    return q, weights / s


# ---------------------------------------------------------------------------
# Compensators
# ---------------------------------------------------------------------------

def _check_interval(t0, t1, dataset):
    if t1 < t0:
        raise InvalidArgumentError(f"interval end {t1} precedes start {t0}")
    if t0 < 0 or t1 > dataset.horizon:
        raise InvalidArgumentError(f"[{t0}, {t1}] not inside [0, {dataset.horizon}]")


def badge_integral(badges, dataset: Dataset, user: int, t0: float, t1: float) -> float:
    """``sum_b int_{t0}^{t1} g(h_b(s), tau_b) ds`` in closed form."""
    total = 0.0
    for b in badges:
        breaks, values = progress_steps(_badge_times(dataset, user, b), b)
        heights = badge_kernel(b.kernel, values, b.threshold, b.bandwidth)
        total += step_integral(breaks, np.atleast_1d(heights), t0, t1)
    return total


def question_compensator(user, dataset, params, cfg, t0, t1) -> float:
    _check_interval(t0, t1, dataset)
    return params.mu_q * (t1 - t0) + params.rho_q * badge_integral(cfg.badges_q, dataset, user, t0, t1)


def question_drive_integral(dataset: Dataset, eta, w: float, t0: float, t1: float) -> float:
    """``int_{t0}^{t1} sum_i eta[z_i] exp(-w (s - t_i)) ds`` over questions ``t_i < t1``."""
    q = dataset.questions_before(t1)
    ti = dataset.times[q]
    start = np.maximum(t0, ti)
    mass = (np.exp(-w * (start - ti)) - np.exp(-w * (t1 - ti))) / w
    return float(np.dot(np.asarray(eta)[dataset.marks[q]], mass))


def answer_compensator(user, dataset, params, cfg, t0, t1) -> float:
    _check_interval(t0, t1, dataset)
    return (params.mu_a * (t1 - t0)
            + params.rho_a * badge_integral(cfg.badges_a, dataset, user, t0, t1)
            + question_drive_integral(dataset, params.eta, cfg.decay_w, t0, t1))


def intensity(kind, user, t, dataset, params, cfg):
    fn = question_intensity if kind == QUESTION else answer_intensity
    return fn(user, t, dataset, params, cfg)


def compensator(kind, user, dataset, params, cfg, t0, t1):
    fn = question_compensator if kind == QUESTION else answer_compensator
    return fn(user, dataset, params, cfg, t0, t1)


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------

def dataset_log_likelihood(dataset: Dataset, params, cfg: ModelConfig) -> float:
    """Observed-data log-likelihood of all events inside their windows.

    Raises :class:`~badgepp.errors.ZeroLikelihoodError` naming the first
    event whose intensity or mark probability is zero.
    """
    from .index import EventIndex

    return EventIndex(dataset, cfg).log_likelihood(as_model_params(params))


def iter_user_kinds(num_users: int) -> Iterable[tuple[int, str]]:
    for u in range(num_users):
        for kind in KINDS:
            yield u, kind
