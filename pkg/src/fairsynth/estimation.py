"""Joint distributions over a schema, estimated from two overlapping tables.

Each estimator is fit on an *internal* table and an *external* table that
share the overlap attributes, and afterwards reports exact cell
probabilities (marginalising over any attributes a query leaves out) and
draws synthetic rows.

* :class:`IndependenceGivenOverlap` -- both sides are conditionally
  independent given the overlap; the overlap marginal is the average of the
  two empirical overlap marginals.
* :class:`MarginalPreservation` -- one side's empirical joint is kept
  verbatim and the other side is attached through its conditional on the
  overlap.
* :class:`~fairsynth.latent.LatentNaiveBayes` -- a latent-class mixture fit
  by EM (see :mod:`fairsynth.latent`).
* :class:`IndependentModel` -- every attribute independent (baseline).
"""

from __future__ import annotations

import logging
import warnings
from functools import cached_property
from math import prod
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .schema import DataTable, Schema, SchemaError
from .tables import (
    ConditionalTable,
    FrequencyTable,
    cumulative,
    decode,
    draw,
    empirical_table,
    encode,
)

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


class JointModel(BaseEstimator):
    """Base class: bookkeeping shared by every joint estimator.

    After :meth:`fit` the model covers ``attrs_``, the union of both tables'
    attributes in schema order.
    """

    variant = ""

    def _setup(self, internal: DataTable, external: DataTable, overlap=None):
        if internal.schema != external.schema:
            raise SchemaError("internal and external tables must share a schema")
        if internal.n_rows == 0 or external.n_rows == 0:
            raise ValueError("cannot fit on an empty table")
        schema = internal.schema
        shared = set(internal.attrs) & set(external.attrs)
        overlap = schema.ordered(shared if overlap is None else overlap)
        missing = [o for o in overlap if o not in shared]
        if missing:
            raise SchemaError(f"overlap attributes {missing} are not present in both tables")
        self.schema_ = schema
        self.attrs_ = schema.ordered(set(internal.attrs) | set(external.attrs))
        self.overlap_ = overlap
        self.internal_attrs_ = schema.ordered(internal.attrs)
        self.external_attrs_ = schema.ordered(external.attrs)
        self.cards_ = schema.cardinalities(self.attrs_)

    # -- probabilities -----------------------------------------------------

    def _prob(self, codes: np.ndarray, attrs: tuple[str, ...]) -> np.ndarray:
        raise NotImplementedError

    def proba(self, codes, attrs: Sequence[str] | None = None) -> np.ndarray:
        """Model probability of each row of ``codes`` over ``attrs``.

        Attributes of the model missing from ``attrs`` are summed out.
        """
        check_is_fitted(self, "attrs_")
        attrs = self.attrs_ if attrs is None else tuple(attrs)
        unknown = [a for a in attrs if a not in self.attrs_]
        if unknown:
            raise SchemaError(f"model does not cover {unknown}")
        codes = np.asarray(codes, dtype=np.int64).reshape(-1, len(attrs))
        cards = np.array(self.schema_.cardinalities(attrs), dtype=np.int64)
        if codes.size and ((codes < 0).any() or (codes >= cards).any()):
            raise IndexError("category index out of range")
        return self._prob(codes, attrs)

    def cell_probability(self, assignment) -> float:
        """Exact probability of one full assignment over ``attrs_``."""
        assignment = np.asarray(assignment, dtype=np.int64).reshape(1, -1)
        if assignment.shape[1] != len(self.attrs_):
            raise ValueError(f"assignment must cover all {len(self.attrs_)} attributes")
        return float(self.proba(assignment)[0])

    def dense_joint(self) -> np.ndarray:
        """Full joint array (only for small schemas); axes follow ``attrs_``."""
        check_is_fitted(self, "attrs_")
        size = prod(self.cards_)
        if size > 5_000_000:
            raise MemoryError(f"joint has {size} cells; too large to enumerate")
        cells = decode(np.arange(size), self.cards_)
        return self.proba(cells).reshape(self.cards_)

    def score_samples(self, table: DataTable) -> np.ndarray:
        """Per-row log probability (``-inf`` for impossible rows)."""
        with np.errstate(divide="ignore"):
            return np.log(self.proba(table.codes, table.attrs))

    def log_likelihood(self, table: DataTable, floor: float = LOG_FLOOR) -> float:
        """Sum of row log probabilities; zero-probability rows count as ``log(floor)``."""
        scores = self.score_samples(table)
        bad = ~np.isfinite(scores)
        if bad.any():
            warnings.warn(f"{int(bad.sum())} rows have zero model probability; "
                          f"floored at log({floor:g})", RuntimeWarning, stacklevel=2)
            scores = np.where(bad, np.log(floor), scores)
        return float(np.sum(scores))

    # -- sampling ----------------------------------------------------------

    def _sample_codes(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample(self, n: int, seed: int = 0) -> DataTable:
        """Draw ``n`` i.i.d. rows over ``attrs_``; deterministic for a given seed."""
        check_is_fitted(self, "attrs_")
        if int(n) < 1:
            raise ValueError("n must be at least 1")
        rng = np.random.default_rng(seed)
        return DataTable(self.schema_, self.attrs_, self._sample_codes(int(n), rng))

    # -- serialisation -----------------------------------------------------

    def _base_dict(self) -> dict:
        return {
            "variant": self.variant,
            "params": self.get_params(),
            "schema": self.schema_.to_dict(),
            "attrs": list(self.attrs_),
            "overlap": list(self.overlap_),
            "internal_attrs": list(self.internal_attrs_),
            "external_attrs": list(self.external_attrs_),
        }

    def _restore_base(self, d: dict) -> None:
        self.schema_ = Schema.from_dict(d["schema"])
        self.attrs_ = tuple(d["attrs"])
        self.overlap_ = tuple(d["overlap"])
        self.internal_attrs_ = tuple(d["internal_attrs"])
        self.external_attrs_ = tuple(d["external_attrs"])
        self.cards_ = self.schema_.cardinalities(self.attrs_)

    def to_dict(self) -> dict:
        raise NotImplementedError


class _OverlapModel(JointModel):
    """Shared machinery for models that route everything through the overlap."""

    def _split_sides(self):
        o = set(self.overlap_)
        self.left_attrs_ = tuple(a for a in self.internal_attrs_ if a not in o)
        self.right_attrs_ = tuple(a for a in self.external_attrs_ if a not in o)
        self.overlap_cards_ = self.schema_.cardinalities(self.overlap_)

    def _alpha(self):
        return self.alpha if self.smoothing else None

    def _terms(self, g: np.ndarray, codes: np.ndarray, attrs: tuple[str, ...]) -> np.ndarray:
        raise NotImplementedError

    def _prob(self, codes, attrs):
        present = [attrs.index(o) for o in self.overlap_ if o in attrs]
        if len(present) == len(self.overlap_):
            g = encode(codes[:, present], self.overlap_cards_)
            return self._terms(g, codes, attrs)
        out = np.zeros(codes.shape[0])
        present_names = [o for o in self.overlap_ if o in attrs]
        for g in range(prod(self.overlap_cards_)):
            cell = decode(np.array([g]), self.overlap_cards_)[0]
            mask = np.ones(codes.shape[0], dtype=bool)
            for name, j in zip(present_names, present):
                mask &= codes[:, j] == cell[self.overlap_.index(name)]
            if mask.any():
                out[mask] += self._terms(np.full(int(mask.sum()), g), codes[mask], attrs)
        return out

    @staticmethod
    def _side(codes, attrs, side_attrs):
        names = tuple(a for a in side_attrs if a in attrs)
        return names, codes[:, [attrs.index(a) for a in names]]

    def _assemble(self, parts: dict[str, np.ndarray], n: int) -> np.ndarray:
        out = np.empty((n, len(self.attrs_)), dtype=np.int64)
        for j, a in enumerate(self.attrs_):
            out[:, j] = parts[a]
        return out


class IndependenceGivenOverlap(_OverlapModel):
    """``p(O) * p̂(internal-only | O) * p̂(external-only | O)``.

    ``p(O)`` is the average of the two empirical overlap marginals, the
    KL-optimal choice; it equals either marginal when they agree.

    Parameters
    ----------
    smoothing : bool
        Give overlap cells that one side never observed a uniform
        (Laplace) conditional instead of failing.
    alpha : float
        Laplace pseudo-count; recorded for provenance.
    """

    variant = "indep_overlap"

    def __init__(self, smoothing: bool = True, alpha: float = 0.5):
        self.smoothing = smoothing
        self.alpha = alpha

    def fit(self, internal: DataTable, external: DataTable, overlap=None):
        self._setup(internal, external, overlap)
        self._split_sides()
        left = empirical_table(internal, self.overlap_ + self.left_attrs_)
        right = empirical_table(external, self.overlap_ + self.right_attrs_)
        self._build(left, right)
        return self

    def _build(self, left: FrequencyTable, right: FrequencyTable):
        p1 = left.marginal(self.overlap_).dense().reshape(-1)
        p2 = right.marginal(self.overlap_).dense().reshape(-1)
        self.overlap_marginal_internal_ = p1
        self.overlap_marginal_external_ = p2
        self.overlap_marginal_ = (p1 + p2) / 2.0
        self.cond_left_ = ConditionalTable(left, self.overlap_, self.left_attrs_, self._alpha())
        self.cond_right_ = ConditionalTable(right, self.overlap_, self.right_attrs_, self._alpha())
        self.cond_left_.check_defined(self.overlap_marginal_)
        self.cond_right_.check_defined(self.overlap_marginal_)

    def _terms(self, g, codes, attrs):
        ln, lc = self._side(codes, attrs, self.left_attrs_)
        rn, rc = self._side(codes, attrs, self.right_attrs_)
        return (self.overlap_marginal_[g]
                * self.cond_left_.prob(g, lc, ln)
                * self.cond_right_.prob(g, rc, rn))

    def _sample_codes(self, n, rng):
        g = draw(cumulative(self.overlap_marginal_), rng.random(n))
        left = self.cond_left_.sample(g, rng)
        right = self.cond_right_.sample(g, rng)
        parts = dict(zip(self.overlap_, decode(g, self.overlap_cards_).T))
        parts.update(zip(self.left_attrs_, left.T))
        parts.update(zip(self.right_attrs_, right.T))
        return self._assemble(parts, n)

    def to_dict(self):
        d = self._base_dict()
        d["left"] = self.cond_left_.joint.to_dict()
        d["right"] = self.cond_right_.joint.to_dict()
        d["overlap_marginal"] = self.overlap_marginal_.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        model = cls(**d["params"])
        model._restore_base(d)
        model._split_sides()
        model._build(FrequencyTable.from_dict(d["left"]), FrequencyTable.from_dict(d["right"]))
        return model


class MarginalPreservation(_OverlapModel):
    """Keep one side's empirical joint; attach the other through ``p̂(other | O)``.

    ``preserve="internal"`` gives ``p̂(internal) * p̂(external-only | O)``,
    ``preserve="external"`` gives ``p̂(internal-only | O) * p̂(external)``.
    """

    variant = "marginal"

    def __init__(self, preserve: str = "internal", smoothing: bool = True, alpha: float = 0.5):
        self.preserve = preserve
        self.smoothing = smoothing
        self.alpha = alpha

    def fit(self, internal: DataTable, external: DataTable, overlap=None):
        if self.preserve not in ("internal", "external"):
            raise ValueError("preserve must be 'internal' or 'external'")
        self._setup(internal, external, overlap)
        self._split_sides()
        if self.preserve == "internal":
            kept = empirical_table(internal, self.internal_attrs_)
            other = empirical_table(external, self.overlap_ + self.right_attrs_)
        else:
            kept = empirical_table(external, self.external_attrs_)
            other = empirical_table(internal, self.overlap_ + self.left_attrs_)
        self._build(kept, other)
        return self

    @property
    def _kept_only(self):
        return self.left_attrs_ if self.preserve == "internal" else self.right_attrs_

    @property
    def _other_only(self):
        return self.right_attrs_ if self.preserve == "internal" else self.left_attrs_

    def _build(self, kept: FrequencyTable, other: FrequencyTable):
        self.preserved_ = kept
        self.cond_other_ = ConditionalTable(other, self.overlap_, self._other_only, self._alpha())
        mass = kept.marginal(self.overlap_).dense().reshape(-1)
        self.cond_other_.check_defined(mass)
        self._kept_marginals = {}

    def _terms(self, g, codes, attrs):
        kn, kc = self._side(codes, attrs, self._kept_only)
        on, oc = self._side(codes, attrs, self._other_only)
        key = self.overlap_ + kn
        if key not in self._kept_marginals:
            self._kept_marginals[key] = self.preserved_.marginal(key)
        cells = np.hstack([decode(g, self.overlap_cards_), kc])
        return self._kept_marginals[key].prob(cells) * self.cond_other_.prob(g, oc, on)

    @cached_property
    def _kept_cum(self):
        return cumulative(self.preserved_.probs)

    def _sample_codes(self, n, rng):
        kept = self.preserved_.cells[draw(self._kept_cum, rng.random(n))]
        kattrs = self.preserved_.attrs
        g = encode(kept[:, [kattrs.index(o) for o in self.overlap_]], self.overlap_cards_)
        other = self.cond_other_.sample(g, rng)
        parts = dict(zip(kattrs, kept.T))
        parts.update(zip(self._other_only, other.T))
        return self._assemble(parts, n)

    def to_dict(self):
        d = self._base_dict()
        d["preserved"] = self.preserved_.to_dict()
        d["other"] = self.cond_other_.joint.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        model = cls(**d["params"])
        model._restore_base(d)
        model._split_sides()
        model._build(FrequencyTable.from_dict(d["preserved"]), FrequencyTable.from_dict(d["other"]))
        return model


class IndependentModel(JointModel):
    """Product of singleton marginals (the independence baseline).

    An overlap attribute's marginal is the average of its two empirical
    marginals.
    """

    variant = "independent"

    def fit(self, internal: DataTable, external: DataTable, overlap=None):
        self._setup(internal, external, overlap)
        marginals = []
        for a in self.attrs_:
            tabs = [t for t in (internal, external) if a in t.attrs]
            ps = [empirical_table(t, (a,)).dense() for t in tabs]
            marginals.append(sum(ps) / len(ps))
        self.marginals_ = marginals
        return self

    def _prob(self, codes, attrs):
        out = np.ones(codes.shape[0])
        for j, a in enumerate(attrs):
            out = out * self.marginals_[self.attrs_.index(a)][codes[:, j]]
        return out

    def _sample_codes(self, n, rng):
        out = np.empty((n, len(self.attrs_)), dtype=np.int64)
        for j, p in enumerate(self.marginals_):
            out[:, j] = draw(cumulative(p), rng.random(n))
        return out

    def to_dict(self):
        d = self._base_dict()
        d["marginals"] = [m.tolist() for m in self.marginals_]
        return d

    @classmethod
    def from_dict(cls, d):
        model = cls()
        model._restore_base(d)
        model.marginals_ = [np.asarray(m, dtype=np.float64) for m in d["marginals"]]
        return model


# -- functional entry points ----------------------------------------------

def fit_independence_given_overlap(d_internal, d_external, overlap=None, smoothing=True):
    return IndependenceGivenOverlap(smoothing=smoothing).fit(d_internal, d_external, overlap)


def fit_marginal_preservation(d_internal, d_external, overlap=None, preserve="internal",
                              smoothing=True):
    return MarginalPreservation(preserve=preserve, smoothing=smoothing).fit(
        d_internal, d_external, overlap)


def fit_independent(d_internal, d_external):
    return IndependentModel().fit(d_internal, d_external)


def joint_cell_probability(model: JointModel, full_assignment) -> float:
    return model.cell_probability(full_assignment)


def log_likelihood(model: JointModel, table: DataTable, floor: float = LOG_FLOOR) -> float:
    return model.log_likelihood(table, floor)
