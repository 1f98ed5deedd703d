"""Latent-class naive Bayes over the union of two overlapping tables.

``p(x) = sum_k pi_k prod_i p_i(x_i | k)``, fit by EM on both tables at once.
Each table contributes its own responsibilities; attributes seen by one table
are updated from that table's responsibilities alone, while attributes shared
by both (the overlap) and the mixing weights pool the two.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .estimation import JointModel
from .schema import DataTable
from .tables import cumulative, draw, draw_rows

logger = logging.getLogger(__name__)


@dataclass
class EMState:
    """Progress of one EM run: iteration count, log-likelihood trace and
    the final responsibilities of each table's rows (N1 x K, N2 x K)."""

    n_iter: int = 0
    trace: list[float] = field(default_factory=list)
    converged: bool = False
    seed: int | None = None
    q1: np.ndarray | None = None
    q2: np.ndarray | None = None

    @property
    def log_likelihood(self) -> float:
        return self.trace[-1] if self.trace else float("-inf")


class _Side:
    """One dataset compressed to unique rows with multiplicities."""

    def __init__(self, table: DataTable, attrs: tuple[str, ...], cards):
        uniq, inverse, counts = np.unique(table.codes, axis=0, return_inverse=True,
                                          return_counts=True)
        self.codes = uniq
        self.inverse = inverse.ravel()
        self.weights = counts.astype(np.float64)
        self.n = float(table.n_rows)
        self.cols = {a: table.attrs.index(a) for a in attrs if a in table.attrs}
        # one-hot (categories x unique rows); multiplicities enter via the
        # weighted responsibilities in the M-step
        self.onehot = {}
        ones = np.ones(len(uniq))
        for a, j in self.cols.items():
            m = cards[a]
            self.onehot[a] = sparse.csr_matrix(
                (ones, (uniq[:, j], np.arange(len(uniq)))), shape=(m, len(uniq)))

    def log_joint(self, log_weights, log_conds) -> np.ndarray:
        out = np.broadcast_to(log_weights, (len(self.codes), len(log_weights))).copy()
        for a, j in self.cols.items():
            out += log_conds[a][:, self.codes[:, j]].T
        return out


def _e_step(side: _Side, log_weights, log_conds):
    lj = side.log_joint(log_weights, log_conds)
    row_ll = logsumexp(lj, axis=1)
    q = np.exp(lj - row_ll[:, None])
    return q, float(np.sum(side.weights * row_ll))


def _em_run(sides, attrs, cards, k, tol, max_iter, rng, seed) -> tuple[dict, EMState]:
    weights = np.full(k, 1.0 / k)
    conds = {a: rng.dirichlet(np.ones(cards[a]), size=k) for a in attrs}
    state = EMState(seed=seed)
    n_total = sum(s.n for s in sides)

    def expectation():
        with np.errstate(divide="ignore"):
            lw = np.log(weights)
            lc = {a: np.log(c) for a, c in conds.items()}
        qs, ll = [], 0.0
        for s in sides:
            q, l = _e_step(s, lw, lc)
            qs.append(q)
            ll += l
        if not np.isfinite(ll):
            raise FloatingPointError(
                f"EM log-likelihood became non-finite ({ll}) at iteration {state.n_iter} "
                f"(seed {seed}, K={k})")
        return qs, ll

    qs, ll = expectation()
    state.trace.append(ll)
    for _ in range(max_iter):
        # M-step
        resp = [s.weights[:, None] * q for s, q in zip(sides, qs)]
        mass = sum(r.sum(axis=0) for r in resp)
        weights = mass / n_total
        for a in attrs:
            acc = np.zeros((cards[a], k))
            for s, r in zip(sides, resp):
                if a in s.onehot:
                    acc += s.onehot[a] @ r
            tot = acc.sum(axis=0)
            live = tot > 0
            # components with no responsibility keep their previous conditionals
            conds[a] = conds[a].copy()
            conds[a][live] = (acc[:, live] / tot[live]).T
        qs, new_ll = expectation()
        state.trace.append(new_ll)
        state.n_iter += 1
        gain = new_ll - ll
        ll = new_ll
        if gain <= tol * max(abs(ll), np.finfo(float).tiny):
            state.converged = True
            break
    # responsibilities per original row
    state.q1, state.q2 = (q[s.inverse] for s, q in zip(sides, qs))
    return {"weights": weights, "conds": conds}, state


class LatentNaiveBayes(JointModel):
    """Mixture of ``n_components`` product distributions, fit by EM.

    Parameters
    ----------
    n_components : int
        Number of latent classes ``K``.
    tol : float
        Stop when the relative log-likelihood gain of an iteration falls
        below ``tol``.
    max_iter : int
        Iteration cap per restart.
    n_restarts : int
        Independent initialisations; the best final likelihood wins.
    random_state : int
        Master seed; restart ``r`` uses the ``r``-th child of
        ``numpy.random.SeedSequence(random_state)``.

    Attributes
    ----------
    weights_ : ndarray of shape (K,)
    conditionals_ : dict mapping attribute -> ndarray (K, n_categories)
    trace_ : list of float
        Log-likelihood per iteration of the selected restart.
    traces_ : list of list of float
        Traces of every restart.
    """

    variant = "latent_nb"

    def __init__(self, n_components: int = 20, tol: float = 1e-6, max_iter: int = 500,
                 n_restarts: int = 5, random_state: int = 0):
        self.n_components = n_components
        self.tol = tol
        self.max_iter = max_iter
        self.n_restarts = n_restarts
        self.random_state = random_state

    def fit(self, internal: DataTable, external: DataTable, overlap=None):
        k = int(self.n_components)
        if k < 1:
            raise ValueError("n_components must be at least 1")
        self._setup(internal, external, overlap)
        if k > internal.n_rows + external.n_rows:
            warnings.warn(f"K={k} exceeds the {internal.n_rows + external.n_rows} training rows",
                          RuntimeWarning, stacklevel=2)
        cards = dict(zip(self.attrs_, self.cards_))
        sides = [_Side(internal, self.attrs_, cards), _Side(external, self.attrs_, cards)]
        children = np.random.SeedSequence(self.random_state).spawn(max(1, int(self.n_restarts)))
        best, best_state, states = None, None, []
        for r, child in enumerate(children):
            params, state = _em_run(sides, self.attrs_, cards, k, self.tol, self.max_iter,
                                    np.random.default_rng(child), r)
            logger.info("EM restart %d: %d iterations, log-likelihood %.6f%s", r, state.n_iter,
                        state.log_likelihood, "" if state.converged else " (not converged)")
            states.append(state)
            if best_state is None or state.log_likelihood > best_state.log_likelihood:
                best, best_state = params, state
        self.weights_ = best["weights"]
        self.conditionals_ = best["conds"]
        self.state_ = best_state
        self.trace_ = list(best_state.trace)
        self.traces_ = [list(s.trace) for s in states]
        self.n_iter_ = best_state.n_iter
        self.converged_ = best_state.converged
        return self

    @classmethod
    def from_params(cls, schema, attrs, weights, conditionals, overlap=()):
        """A model with fixed parameters (no fitting)."""
        model = cls(n_components=len(weights))
        model.schema_ = schema
        model.attrs_ = schema.ordered(attrs)
        model.overlap_ = tuple(overlap)
        model.internal_attrs_ = model.attrs_
        model.external_attrs_ = model.attrs_
        model.cards_ = schema.cardinalities(model.attrs_)
        model.weights_ = np.asarray(weights, dtype=np.float64)
        model.conditionals_ = {a: np.asarray(conditionals[a], dtype=np.float64)
                               for a in model.attrs_}
        model.trace_, model.traces_ = [], []
        return model

    def _prob(self, codes, attrs):
        with np.errstate(divide="ignore"):
            lj = np.broadcast_to(np.log(self.weights_), (codes.shape[0], len(self.weights_))).copy()
            for j, a in enumerate(attrs):
                lj += np.log(self.conditionals_[a][:, codes[:, j]]).T
        return np.exp(logsumexp(lj, axis=1))

    def _sample_codes(self, n, rng):
        z = draw(cumulative(self.weights_), rng.random(n))
        out = np.empty((n, len(self.attrs_)), dtype=np.int64)
        for j, a in enumerate(self.attrs_):
            cum = cumulative(self.conditionals_[a])
            out[:, j] = draw_rows(cum[z], rng.random(n))
        return out

    def to_dict(self):
        d = self._base_dict()
        d["weights"] = self.weights_.tolist()
        d["conditionals"] = {a: c.ravel().tolist() for a, c in self.conditionals_.items()}
        d["trace"] = list(self.trace_)
        d["traces"] = [list(t) for t in self.traces_]
        return d

    @classmethod
    def from_dict(cls, d):
        model = cls(**d["params"])
        model._restore_base(d)
        model.weights_ = np.asarray(d["weights"], dtype=np.float64)
        k = len(model.weights_)
        model.conditionals_ = {
            a: np.asarray(c, dtype=np.float64).reshape(k, -1)
            for a, c in d["conditionals"].items()}
        model.trace_ = list(d.get("trace", []))
        model.traces_ = [list(t) for t in d.get("traces", [])]
        return model


def fit_latent_nb(d_internal, d_external, overlap=None, k=20, tol=1e-6, max_iter=500,
                  n_restarts=5, random_state=0):
    """Fit the latent model; returns ``(model, EMState of the selected restart)``."""
    model = LatentNaiveBayes(n_components=k, tol=tol, max_iter=max_iter, n_restarts=n_restarts,
                             random_state=random_state).fit(d_internal, d_external, overlap)
    return model, model.state_
