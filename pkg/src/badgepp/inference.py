"""Variational EM for the badge model.

Every event gets a latent trigger: a question is either exogenous or
badge-driven; an answer is exogenous, badge-driven, or triggered by one
of the earlier questions.  The E-step sets each event's responsibility
vector to the intensity shares of its triggers and tightens the
linearisation of the log-normaliser of the answer-parent pmf::

    log x <= zeta * x - 1 - log(zeta),   tight at zeta = 1 / x.

The M-step then has closed forms for ``mu``, ``rho`` and ``alpha`` and a
one-dimensional root-finding problem for each ``eta`` row.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .errors import (
    BadgeppError,
    DegenerateParameterError,
    InvalidArgumentError,
    ZeroLikelihoodError,
)
from .index import EventIndex
from .model import (
    QUESTION,
    Dataset,
    ModelConfig,
    ModelParams,
    UserParams,
    as_model_params,
)

log = logging.getLogger(__name__)

ETA_FLOOR = 1e-12
BOUND_SLACK = 1e-8


class DegenerateEtaWarning(UserWarning):
    """solve_eta received an all-zero F and returned the uniform vector."""


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class EStepState:
    """Responsibilities and variational scalars for the observed events.

    Arrays follow the ordering of ``index``: ``phi_q[i] = (exogenous, badge)``
    for the i-th observed question; for the j-th observed answer
    ``phi_a_exo[j]``, ``phi_a_badge[j]`` and the entries of ``phi_pairs``
    with ``index.pair_ans == j`` (one per candidate question) sum to one.
    """

    index: EventIndex
    phi_q: np.ndarray
    phi_a_exo: np.ndarray
    phi_a_badge: np.ndarray
    phi_pairs: np.ndarray
    zeta: np.ndarray

    def phi_answer(self, j):
        """Full responsibility vector of answer ``j`` and its candidate question indices.

        The vector is ordered ``(exogenous, badge, candidate_1, ...)`` with
        candidates in time order; candidates are global event indices.
        """
        ix = self.index
        sel = np.flatnonzero(ix.pair_ans == j)
        order = np.argsort(ix.pair_q[sel], kind="stable")
        sel = sel[order]
        vec = np.concatenate([[self.phi_a_exo[j], self.phi_a_badge[j]], self.phi_pairs[sel]])
        return vec, ix.q_global[ix.pair_q[sel]]

    def soft_counts(self):
        """Per-user expected trigger counts.

        Returns a dict with ``q_exo``, ``q_badge``, ``a_exo``, ``a_badge``
        (shape ``(U,)``) and ``a_tag`` (shape ``(U, K)``, answers attributed
        to questions of each tag).
        """
        ix = self.index
        U, K = ix.U, ix.K
        return {
            "q_exo": np.bincount(ix.oq_user, weights=self.phi_q[:, 0], minlength=U),
            "q_badge": np.bincount(ix.oq_user, weights=self.phi_q[:, 1], minlength=U),
            "a_exo": np.bincount(ix.oa_user, weights=self.phi_a_exo, minlength=U),
            "a_badge": np.bincount(ix.oa_user, weights=self.phi_a_badge, minlength=U),
            "a_tag": np.bincount(ix.pair_flat, weights=self.phi_pairs, minlength=U * K).reshape(U, K),
        }


def e_step(index: EventIndex, params) -> EStepState:
    P = as_model_params(params)
    exo, bad = index.question_parts(P)
    lam_q = exo + bad
    index._check_positive(lam_q, index.oq_global, "question intensity")
    phi_q = np.stack([exo / lam_q, bad / lam_q], axis=1)

    mu, bad_a, pair_w, drive = index.answer_parts(P)
    lam_a = mu + bad_a + drive
    index._check_positive(lam_a, index.oa_global, "answer intensity")
    index._check_positive(drive, index.oa_global, "answer candidate weight")
    return EStepState(
        index=index,
        phi_q=phi_q,
        phi_a_exo=mu / lam_a,
        phi_a_badge=bad_a / lam_a,
        phi_pairs=pair_w / lam_a[index.pair_ans],
        zeta=1.0 / drive,
    )


def _index_for(dataset, cfg, estep=None):
    if estep is not None and estep.index.dataset is dataset and estep.index.cfg is cfg:
        return estep.index
    return EventIndex(dataset, cfg)


def _question_position(index, event_index):
    pos = np.flatnonzero(index.oq_global == event_index)
    if pos.size == 0:
        raise InvalidArgumentError(f"event {event_index} is not an observed question")
    return int(pos[0])


def _answer_position(index, event_index):
    pos = np.flatnonzero(index.oa_global == event_index)
    if pos.size == 0:
        raise InvalidArgumentError(f"event {event_index} is not an observed answer")
    return int(pos[0])


def e_step_question(event_index, dataset, params, cfg) -> np.ndarray:
    """Responsibility ``(exogenous, badge)`` of one question event."""
    ix = EventIndex(dataset, cfg)
    st = e_step_partial(ix, params)
    return st.phi_q[_question_position(ix, event_index)]


def e_step_answer(event_index, dataset, params, cfg):
    """Responsibility vector ``(exogenous, badge, candidates...)`` of one answer
    and the global indices of the candidate questions."""
    ix = EventIndex(dataset, cfg)
    st = e_step_partial(ix, params)
    return st.phi_answer(_answer_position(ix, event_index))


def update_zeta(event_index, dataset, params, cfg) -> float:
    ix = EventIndex(dataset, cfg)
    P = as_model_params(params)
    j = _answer_position(ix, event_index)
    drive = ix.answer_parts(P)[3][j]
    if not drive > 0:
        raise DegenerateParameterError(f"answer {event_index} has no candidate weight")
    return float(1.0 / drive)


def e_step_partial(index, params) -> EStepState:
    """Like :func:`e_step` but tolerant of answers with zero candidate weight
    (their zeta is set to ``inf``); used by the per-event accessors."""
    P = as_model_params(params)
    exo, bad = index.question_parts(P)
    lam_q = exo + bad
    index._check_positive(lam_q, index.oq_global, "question intensity")
    mu, bad_a, pair_w, drive = index.answer_parts(P)
    lam_a = mu + bad_a + drive
    index._check_positive(lam_a, index.oa_global, "answer intensity")
    with np.errstate(divide="ignore"):
        zeta = 1.0 / drive
    return EStepState(index, np.stack([exo / lam_q, bad / lam_q], axis=1), mu / lam_a,
                      bad_a / lam_a, pair_w / lam_a[index.pair_ans], zeta)


# ---------------------------------------------------------------------------
# Lower bound
# ---------------------------------------------------------------------------

def _entropy_term(p):
    return -xlogy(p, p)


def bound_terms(index: EventIndex, params, estep: EStepState) -> dict:
    """Lower bound split by parameter block (``q_time``, ``q_mark``, ``a_time``, ``a_mark``)."""
    P = as_model_params(params)
    eta_log = np.log(np.maximum(P.eta, ETA_FLOOR))
    cq, ca = index.compensators(P)

    exo, bad = index.question_parts(P)
    phi_q = estep.phi_q
    q_time = (xlogy(phi_q[:, 0], exo) + xlogy(phi_q[:, 1], bad)
              + _entropy_term(phi_q[:, 0]) + _entropy_term(phi_q[:, 1])).sum() - cq.sum()
    alpha_sum = P.alpha.sum(axis=1)
    q_mark = np.log(P.alpha[index.oq_user, index.oq_tag] / alpha_sum[index.oq_user]).sum()

    mu, bad_a = P.mu_a[index.oa_user], P.rho_a[index.oa_user] * index.oa_badge
    log_pair = eta_log.ravel()[index.pair_flat] + index.pair_logdecay
    pair_terms = estep.phi_pairs * log_pair + _entropy_term(estep.phi_pairs)
    a_time = (xlogy(estep.phi_a_exo, mu) + xlogy(estep.phi_a_badge, bad_a)
              + _entropy_term(estep.phi_a_exo) + _entropy_term(estep.phi_a_badge)).sum() \
        + pair_terms.sum() - ca.sum()

    pair_w = P.eta.ravel()[index.pair_flat] * index.pair_decay
    drive = np.bincount(index.pair_ans, weights=pair_w, minlength=index.n_answers)
    zeta = estep.zeta
    a_mark = (eta_log[index.oa_user, index.oa_parent_tag] + index.oa_parent_logdecay
              - (zeta * drive - 1.0 - np.log(zeta))).sum()
    return {"q_time": float(q_time), "q_mark": float(q_mark),
            "a_time": float(a_time), "a_mark": float(a_mark)}


def lower_bound(dataset: Dataset, params, estep: EStepState, cfg: ModelConfig) -> float:
    """Evidence lower bound at ``params`` under the variational state ``estep``."""
    index = _index_for(dataset, cfg, estep)
    value = sum(bound_terms(index, params, estep).values())
    if not np.isfinite(value):
        raise ZeroLikelihoodError("lower bound is not finite: a responsibility sits on a zero-rate component")
    return float(value)


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------

def solve_eta(F, H) -> np.ndarray:
    """Maximise ``sum_k F_k log eta_k - sum_k H_k eta_k`` over the simplex.

    At the optimum ``eta_k = F_k / (H_k + lam)`` for ``F_k > 0``.  A tag with
    ``F_k = 0`` only costs ``H_k eta_k``, so the multiplier must satisfy
    ``lam >= -H_k`` there.  Usually ``lam`` is the root of
    ``sum_k F_k / (H_k + lam) = 1`` (bisection) and zero-``F`` tags get
    nothing; when that root would fall below ``-h0``, with ``h0`` the
    smallest ``H`` among zero-``F`` tags, ``lam = -h0`` and the leftover
    mass goes to the zero-``F`` tags attaining ``h0``.
    """
    F = np.asarray(F, dtype=float)
    H = np.asarray(H, dtype=float)
    if F.ndim != 1 or F.shape != H.shape:
        raise InvalidArgumentError("F and H must be vectors of equal length")
    return solve_eta_batch(F[None, :], H[None, :])[0]


def solve_eta_batch(F, H, tol=1e-10, max_iter=400) -> np.ndarray:
    """Row-wise :func:`solve_eta` for ``(n, K)`` arrays."""
    F = np.asarray(F, dtype=float)
    H = np.asarray(H, dtype=float)
    if np.any(F < 0) or np.any(H < 0) or not (np.all(np.isfinite(F)) and np.all(np.isfinite(H))):
        raise InvalidArgumentError("F and H must be finite and nonnegative")
    n, K = F.shape
    out = np.empty_like(F)
    active = F > 0
    dead = ~active.any(axis=1)
    if dead.any():
        warnings.warn("solve_eta: all-zero F, returning the uniform vector", DegenerateEtaWarning, stacklevel=2)
        out[dead] = 1.0 / K
    rows = np.flatnonzero(~dead)
    if rows.size == 0:
        return out
    F, H, active = F[rows], H[rows], active[rows]
    eta = np.zeros_like(F)

    # rows whose leftover mass spills onto the cheapest zero-F tag
    h0 = np.where(active, np.inf, H).min(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.where(active, H - h0[:, None], np.inf)
        s0 = np.where(active, F / gap, 0.0).sum(axis=1)
    spill = np.isfinite(h0) & np.all(gap > 0, axis=1) & (s0 < 1.0)
    if spill.any():
        fs, gs, hs = F[spill], gap[spill], H[spill]
        part = np.where(active[spill], fs / np.where(active[spill], gs, 1.0), 0.0)
        cheap = ~active[spill] & (hs == h0[spill, None])
        part += cheap * ((1.0 - s0[spill]) / cheap.sum(axis=1))[:, None]
        eta[spill] = part

    solve = ~spill
    out_rows = rows
    rows, F, H, active = rows[solve], F[solve], H[solve], active[solve]
    if rows.size == 0:
        out[out_rows] = eta
        return out
    lo = -np.where(active, H, np.inf).min(axis=1)
    hi = F.sum(axis=1)

    def total(lam):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(active, F / (H + lam[:, None]), 0.0)
        return r.sum(axis=1)

    lam = hi.copy()
    for _ in range(max_iter):
        g = total(lam)
        if np.all(np.abs(g - 1.0) <= tol):
            break
        mid = 0.5 * (lo + hi)
        stuck = (mid <= lo) | (mid >= hi)
        gm = total(mid)
        lo = np.where(gm > 1.0, mid, lo)
        hi = np.where(gm > 1.0, hi, mid)
        lam = np.where(np.abs(gm - 1.0) < np.abs(g - 1.0), mid, lam)
        if np.all(stuck):
            break
    with np.errstate(divide="ignore", invalid="ignore"):
        root = np.where(active, F / (H + lam[:, None]), 0.0)
    eta[solve] = root / root.sum(axis=1, keepdims=True)
    out[out_rows] = eta
    return out


def eta_objective(eta, F, H):
    eta = np.asarray(eta, dtype=float)
    return float(np.sum(xlogy(F, np.maximum(eta, 0.0))) - np.dot(H, eta))


def eta_statistics(index: EventIndex, estep: EStepState):
    """The ``(F, H)`` arrays of the eta subproblem, shape ``(U, K)`` each."""
    U, K = index.U, index.K
    F = index.parent_counts + np.bincount(index.pair_flat, weights=estep.phi_pairs, minlength=U * K).reshape(U, K)
    H = index.Hc + np.bincount(index.pair_flat, weights=estep.zeta[index.pair_ans] * index.pair_decay,
                               minlength=U * K).reshape(U, K)
    return F, H


def m_step(index: EventIndex, estep: EStepState, params) -> ModelParams:
    """Closed-form parameter updates given the responsibilities.

    Users with no observed events of a kind keep that kind's current
    parameters (``alpha``/``eta`` included), since the bound carries no
    information about them.
    """
    P = as_model_params(params).copy()
    c = estep.soft_counts()
    has_q = index.n_q > 0
    has_a = index.n_a > 0

    P.mu_q[has_q] = c["q_exo"][has_q] / index.Wq[has_q]
    ok = has_q & (index.Gq > 0)
    P.rho_q[ok] = c["q_badge"][ok] / index.Gq[ok]
    P.alpha[has_q] = index.tag_counts[has_q] / index.n_q[has_q, None]

    P.mu_a[has_a] = c["a_exo"][has_a] / index.Wa[has_a]
    ok = has_a & (index.Ga > 0)
    P.rho_a[ok] = c["a_badge"][ok] / index.Ga[ok]
    if has_a.any():
        F, H = eta_statistics(index, estep)
        P.eta[has_a] = solve_eta_batch(F[has_a], H[has_a])
    return P


def m_step_user(user, dataset, estep: EStepState, cfg, params) -> UserParams:
    """M-step updates for a single user."""
    index = _index_for(dataset, cfg, estep)
    return m_step(index, estep, params)[user]


# ---------------------------------------------------------------------------
# Fit loop
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class FitReport:
    params: ModelParams
    lower_bound_trace: list
    iterations: int
    converged: bool
    users_without_questions: list = field(default_factory=list)
    users_without_answers: list = field(default_factory=list)


def initial_params(index: EventIndex, rng) -> ModelParams:
    """Random positive starting point scaled to each user's empirical rates."""
    U, K = index.U, index.K
    rate_q = np.maximum(index.n_q, 1) / np.maximum(index.Wq, 1e-12)
    rate_a = np.maximum(index.n_a, 1) / np.maximum(index.Wa, 1e-12)
    per_q = np.maximum(index.n_q, 1) / np.maximum(index.Gq, 1e-12)
    per_a = np.maximum(index.n_a, 1) / np.maximum(index.Ga, 1e-12)
    return ModelParams(
        mu_q=rng.uniform(0.1, 1.0, U) * rate_q,
        mu_a=rng.uniform(0.1, 1.0, U) * rate_a,
        rho_q=np.where(index.Gq > 0, rng.uniform(0.1, 1.0, U) * per_q, rng.uniform(0.1, 1.0, U)),
        rho_a=np.where(index.Ga > 0, rng.uniform(0.1, 1.0, U) * per_a, rng.uniform(0.1, 1.0, U)),
        alpha=rng.dirichlet(np.ones(K), size=U),
        eta=rng.dirichlet(np.ones(K), size=U),
    )


def fit(dataset: Dataset, cfg: ModelConfig, max_iters=100, tol=1e-4, seed=0, init=None,
        index: EventIndex | None = None, callback=None) -> FitReport:
    """Run variational EM until the relative change of the bound drops below ``tol``.

    The trace records the bound right after each E-step, where it equals
    the observed-data log-likelihood of the current parameters.
    """
    if len(dataset) == 0:
        raise InvalidArgumentError("cannot fit an empty dataset")
    ix = EventIndex(dataset, cfg) if index is None else index
    if ix.n_questions + ix.n_answers == 0:
        raise InvalidArgumentError("no events inside the observation windows")
    rng = np.random.default_rng(seed)
    P = initial_params(ix, rng) if init is None else as_model_params(init).copy()
    trace = []
    converged = False
    for it in range(max_iters):
        try:
            es = e_step(ix, P)
            value = sum(bound_terms(ix, P, es).values())
        except ZeroLikelihoodError as exc:
            raise ZeroLikelihoodError(f"iteration {it}: {exc}", exc.event_index) from exc
        if not np.isfinite(value):
            raise BadgeppError(f"iteration {it}: lower bound is not finite")
        trace.append(float(value))
        if callback is not None:
            callback(it, P, value)
        if len(trace) > 1:
            if trace[-1] < trace[-2] - BOUND_SLACK:
                log.warning("bound decreased at iteration %d: %r -> %r", it, trace[-2], trace[-1])
            if abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
                converged = True
                break
        P = m_step(ix, es, P)
    return FitReport(
        params=P,
        lower_bound_trace=trace,
        iterations=len(trace),
        converged=converged,
        users_without_questions=np.flatnonzero(ix.n_q == 0).tolist(),
        users_without_answers=np.flatnonzero(ix.n_a == 0).tolist(),
    )
