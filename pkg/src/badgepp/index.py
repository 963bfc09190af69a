"""Vectorized evaluation of the model over a whole dataset.

:class:`EventIndex` precomputes everything that depends only on the data
and the model configuration (badge kernel values at each event, badge
integrals, the answer/candidate-question pairs and their decay factors),
so that likelihoods and EM steps reduce to gathers and bincounts over
parameter arrays.
"""
from __future__ import annotations

import numpy as np

from .errors import ZeroLikelihoodError
from .model import (
    ANSWER,
    QUESTION,
    Dataset,
    ModelConfig,
    ModelParams,
    badge_kernel,
    progress_at,
    progress_steps,
    step_integral,
)


class EventIndex:
    """Data-dependent constants for ``dataset`` under ``cfg``.

    Only events inside their user/kind window are *observed* (contribute
    event terms); every question, observed or not, drives answer
    intensities.
    """

    def __init__(self, dataset: Dataset, cfg: ModelConfig):
        self.dataset = dataset
        self.cfg = cfg
        U, K = dataset.num_users, dataset.num_tags
        self.U, self.K = U, K
        w = cfg.decay_w
        times, users, marks = dataset.times, dataset.users, dataset.marks
        self.Wq = dataset.windows[:, 0].copy()
        self.Wa = dataset.windows[:, 1].copy()
        observed = dataset.in_window()

        # all questions, in time order
        qi = dataset.question_indices
        self.q_global = qi
        self.q_time = times[qi]
        self.q_user = users[qi]
        self.q_tag = marks[qi]
        pos_of = np.full(len(dataset), -1, dtype=np.int64)
        pos_of[qi] = np.arange(qi.size)

        # observed questions
        oq = qi[observed[qi]]
        self.oq_global = oq
        self.oq_user = users[oq]
        self.oq_tag = marks[oq]
        self.oq_badge = self._event_badge_sums(cfg.badges_q, QUESTION, oq)
        self.n_q = np.bincount(self.oq_user, minlength=U)
        self.tag_counts = np.zeros((U, K))
        np.add.at(self.tag_counts, (self.oq_user, self.oq_tag), 1.0)

        # observed answers
        ai = dataset.answer_indices
        oa = ai[observed[ai]]
        self.oa_global = oa
        self.oa_time = times[oa]
        self.oa_user = users[oa]
        self.oa_badge = self._event_badge_sums(cfg.badges_a, ANSWER, oa)
        self.n_a = np.bincount(self.oa_user, minlength=U)
        parent_pos = pos_of[marks[oa]]
        self.oa_parent_tag = self.q_tag[parent_pos]
        self.oa_parent_logdecay = -w * (self.oa_time - self.q_time[parent_pos])
        self.oa_parent_decay = np.exp(self.oa_parent_logdecay)
        self.parent_counts = np.zeros((U, K))
        np.add.at(self.parent_counts, (self.oa_user, self.oa_parent_tag), 1.0)

        self._build_pairs(parent_pos)

        # badge integrals over each user's window
        self.Gq = self._badge_integrals(cfg.badges_q, QUESTION, self.Wq)
        self.Ga = self._badge_integrals(cfg.badges_a, ANSWER, self.Wa)

        # Hc[u, k]: total mass of the question-driven kernel of tag-k questions
        # inside user u's answer window
        self.Hc = np.zeros((U, K))
        for u in range(U):
            n = np.searchsorted(self.q_time, self.Wa[u], side="left")
            mass = -np.expm1(-w * (self.Wa[u] - self.q_time[:n])) / w
            self.Hc[u] = np.bincount(self.q_tag[:n], weights=mass, minlength=K)

    # -- construction helpers ------------------------------------------------

    def _event_badge_sums(self, badges, kind, idx):
        ds = self.dataset
        out = np.zeros(idx.size)
        if not badges or idx.size == 0:
            return out
        ev_user = ds.users[idx]
        ev_time = ds.times[idx]
        for u in np.unique(ev_user):
            sel = ev_user == u
            counting = ds.user_event_indices(int(u), kind, counting_only=True)
            for b in badges:
                breaks, values = progress_steps(ds.times[counting], b)
                x = progress_at(breaks, values, ev_time[sel])
                out[sel] += badge_kernel(b.kernel, x, b.threshold, b.bandwidth)
        return out

    def _badge_integrals(self, badges, kind, windows):
        ds = self.dataset
        out = np.zeros(self.U)
        for u in range(self.U):
            counting = ds.user_event_indices(u, kind, counting_only=True)
            for b in badges:
                breaks, values = progress_steps(ds.times[counting], b)
                heights = np.atleast_1d(badge_kernel(b.kernel, values, b.threshold, b.bandwidth))
                out[u] += step_integral(breaks, heights, 0.0, windows[u])
        return out

    def _build_pairs(self, parent_pos):
        """Candidate (answer, question) pairs: questions strictly earlier and
        within ``cfg.max_lag``, plus the actual parent if it is older."""
        qt, at = self.q_time, self.oa_time
        lo = np.searchsorted(qt, at - self.cfg.max_lag, side="left")
        hi = np.searchsorted(qt, at, side="left")
        counts = hi - lo
        total = int(counts.sum())
        ans = np.repeat(np.arange(at.size), counts)
        starts = np.repeat(np.cumsum(counts) - counts, counts)
        q = np.repeat(lo, counts) + (np.arange(total) - starts)
        old = parent_pos < lo
        if np.any(old):
            ans = np.concatenate([ans, np.flatnonzero(old)])
            q = np.concatenate([q, parent_pos[old]])
        self.pair_ans = ans
        self.pair_q = q
        self.pair_tag = self.q_tag[q]
        self.pair_logdecay = -self.cfg.decay_w * (at[ans] - qt[q])
        self.pair_decay = np.exp(self.pair_logdecay)
        self.pair_flat = self.oa_user[ans] * self.K + self.pair_tag
        self.n_candidates = np.bincount(ans, minlength=at.size)

    # -- intensity components ---------------------------------------------

    @property
    def n_questions(self):
        return self.oq_global.size

    @property
    def n_answers(self):
        return self.oa_global.size

    def question_parts(self, P: ModelParams):
        """Exogenous and badge parts of the question intensity at each observed question."""
        return P.mu_q[self.oq_user], P.rho_q[self.oq_user] * self.oq_badge

    def pair_weights(self, P: ModelParams):
        return P.eta.ravel()[self.pair_flat] * self.pair_decay

    def answer_parts(self, P: ModelParams, pair_w=None):
        """Exogenous, badge and per-pair question parts at each observed answer,
        plus the per-answer sum of the question parts."""
        if pair_w is None:
            pair_w = self.pair_weights(P)
        drive = np.bincount(self.pair_ans, weights=pair_w, minlength=self.n_answers)
        return P.mu_a[self.oa_user], P.rho_a[self.oa_user] * self.oa_badge, pair_w, drive

    def compensators(self, P: ModelParams):
        """Per-user integrals of the question and answer intensities over the windows."""
        cq = P.mu_q * self.Wq + P.rho_q * self.Gq
        ca = P.mu_a * self.Wa + P.rho_a * self.Ga + np.einsum("uk,uk->u", P.eta, self.Hc)
        return cq, ca

    # -- likelihood -----------------------------------------------------------

    def log_likelihood_terms(self, P: ModelParams) -> dict:
        """Components of the observed-data log-likelihood.

        Keys: ``q_time``/``a_time`` (sum of log intensities minus compensators),
        ``q_mark``/``a_mark`` (sum of log mark probabilities).
        """
        exo, bad = self.question_parts(P)
        lam_q = exo + bad
        alpha_sum = P.alpha.sum(axis=1)
        mark_q = P.alpha[self.oq_user, self.oq_tag] / alpha_sum[self.oq_user] if self.n_questions else np.zeros(0)
        self._check_positive(lam_q, self.oq_global, "question intensity")
        self._check_positive(mark_q, self.oq_global, "question tag probability")

        mu, bad_a, pair_w, drive = self.answer_parts(P)
        lam_a = mu + bad_a + drive
        parent_w = P.eta[self.oa_user, self.oa_parent_tag] * self.oa_parent_decay
        self._check_positive(lam_a, self.oa_global, "answer intensity")
        self._check_positive(parent_w, self.oa_global, "answer parent probability")

        cq, ca = self.compensators(P)
        return {
            "q_time": float(np.sum(np.log(lam_q)) - cq.sum()),
            "q_mark": float(np.sum(np.log(mark_q))),
            "a_time": float(np.sum(np.log(lam_a)) - ca.sum()),
            "a_mark": float(np.sum(np.log(P.eta[self.oa_user, self.oa_parent_tag]) + self.oa_parent_logdecay
                                   - np.log(drive))),
        }

    def log_likelihood(self, P: ModelParams) -> float:
        return float(sum(self.log_likelihood_terms(P).values()))

    def per_user_temporal(self, P: ModelParams):
        """Per-user temporal log-likelihood and event counts, shape (U, 2) each."""
        exo, bad = self.question_parts(P)
        lam_q = exo + bad
        self._check_positive(lam_q, self.oq_global, "question intensity")
        mu, bad_a, _, drive = self.answer_parts(P)
        lam_a = mu + bad_a + drive
        self._check_positive(lam_a, self.oa_global, "answer intensity")
        cq, ca = self.compensators(P)
        ll = np.zeros((self.U, 2))
        ll[:, 0] = np.bincount(self.oq_user, weights=np.log(lam_q), minlength=self.U) - cq
        ll[:, 1] = np.bincount(self.oa_user, weights=np.log(lam_a), minlength=self.U) - ca
        return ll, np.stack([self.n_q, self.n_a], axis=1)

    @staticmethod
    def _check_positive(values, global_idx, what):
        bad = np.flatnonzero(~(values > 0))
        if bad.size:
            i = int(global_idx[bad[0]])
            raise ZeroLikelihoodError(f"zero {what} at event {i}", event_index=i)
