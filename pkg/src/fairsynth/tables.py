"""Empirical frequency tables and conditional tables over categorical cells.

Tables are stored over their support: sorted unique cells plus a probability
per cell.  Joint spaces of real datasets are far too large to hold densely
(German Credit's 18 internal attributes span ~10^10 cells), but the support of
an empirical table never exceeds its row count.  ``FrequencyTable.dense``
materialises the full array when the space is small.
"""

from __future__ import annotations

from functools import cached_property
from math import prod
from typing import Sequence

import numpy as np

from .schema import DataTable, SchemaError

_MAX_KEY = 2**62


def encode(codes: np.ndarray, cards: Sequence[int]) -> np.ndarray:
    """Mixed-radix (row-major) integer key of each row of ``codes``."""
    codes = np.asarray(codes, dtype=np.int64)
    if prod(int(c) for c in cards) >= _MAX_KEY:
        raise OverflowError("cell space too large for int64 keys")
    keys = np.zeros(codes.shape[0], dtype=np.int64)
    for j, c in enumerate(cards):
        keys = keys * int(c) + codes[:, j]
    return keys


def decode(keys: np.ndarray, cards: Sequence[int]) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64).copy()
    out = np.empty((keys.shape[0], len(cards)), dtype=np.int64)
    for j in range(len(cards) - 1, -1, -1):
        out[:, j] = keys % cards[j]
        keys //= cards[j]
    return out


class FrequencyTable:
    """A normalised table over the cells of ``attrs``.

    ``cells`` holds the support (one row of category indices per cell, sorted
    by key) and ``probs`` the mass of each cell.  ``counts``/``n`` are kept
    when the table is empirical so that it can be serialised exactly.
    """

    def __init__(self, attrs, cards, cells, probs, counts=None, n=None):
        self.attrs = tuple(attrs)
        self.cards = tuple(int(c) for c in cards)
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, len(self.attrs))
        probs = np.asarray(probs, dtype=np.float64)
        keys = encode(cells, self.cards)
        order = np.argsort(keys, kind="stable")
        if np.any(np.diff(keys[order]) == 0):
            raise ValueError("duplicate cells in frequency table")
        self.cells = cells[order]
        self.probs = probs[order]
        self.keys = keys[order]
        self.counts = None if counts is None else np.asarray(counts, dtype=np.int64)[order]
        self.n = n
        if (self.probs < 0).any():
            raise ValueError("negative probability")
        for a in (self.cells, self.probs, self.keys):
            a.setflags(write=False)

    @classmethod
    def from_counts(cls, attrs, cards, cells, counts) -> "FrequencyTable":
        counts = np.asarray(counts, dtype=np.int64)
        n = int(counts.sum())
        if n == 0:
            raise ValueError("empty table")
        return cls(attrs, cards, cells, counts / n, counts=counts, n=n)

    @property
    def size(self) -> int:
        return prod(self.cards)

    def dense(self) -> np.ndarray:
        out = np.zeros(self.size, dtype=np.float64)
        out[self.keys] = self.probs
        return out.reshape(self.cards)

    def prob(self, cells) -> np.ndarray:
        """Mass of each full cell (rows of indices over ``attrs``); 0 off-support."""
        keys = encode(np.asarray(cells).reshape(-1, len(self.attrs)), self.cards)
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, len(self.keys) - 1)
        hit = self.keys[pos] == keys
        return np.where(hit, self.probs[pos], 0.0)

    def marginal(self, attrs: Sequence[str]) -> "FrequencyTable":
        """Sum out every attribute not in ``attrs`` (result ordered as given)."""
        attrs = tuple(attrs)
        if attrs == self.attrs:
            return self
        idx = [self._index(a) for a in attrs]
        cards = [self.cards[i] for i in idx]
        if not attrs:
            return FrequencyTable((), (), np.zeros((1, 0), dtype=np.int64), [self.probs.sum()])
        keys = encode(self.cells[:, idx], cards)
        uniq, inv = np.unique(keys, return_inverse=True)
        probs = np.bincount(inv, weights=self.probs, minlength=len(uniq))
        counts = None
        if self.counts is not None:
            counts = np.bincount(inv, weights=self.counts, minlength=len(uniq)).astype(np.int64)
        return FrequencyTable(attrs, cards, decode(uniq, cards), probs, counts=counts, n=self.n)

    def _index(self, attr: str) -> int:
        try:
            return self.attrs.index(attr)
        except ValueError:
            raise SchemaError(f"frequency table has no attribute {attr!r}") from None

    def total(self) -> float:
        return float(self.probs.sum())

    def to_dict(self) -> dict:
        d = {"attrs": list(self.attrs), "cards": list(self.cards),
             "cells": self.cells.tolist()}
        if self.counts is not None:
            d["counts"] = self.counts.tolist()
        else:
            d["probs"] = self.probs.tolist()
        return d

    @classmethod
    def from_dict(cls, d) -> "FrequencyTable":
        cells = np.asarray(d["cells"], dtype=np.int64).reshape(-1, len(d["attrs"]))
        if "counts" in d:
            return cls.from_counts(d["attrs"], d["cards"], cells, d["counts"])
        return cls(d["attrs"], d["cards"], cells, d["probs"])

    def __repr__(self):
        return f"FrequencyTable(attrs={list(self.attrs)}, support={len(self.probs)})"


def empirical_table(table: DataTable, attrs: Sequence[str]) -> FrequencyTable:
    """Unsmoothed relative frequencies of the cells of ``attrs`` in ``table``."""
    if table.n_rows == 0:
        raise ValueError("cannot tabulate an empty table")
    attrs = tuple(attrs)
    codes = table.columns(attrs)
    cards = table.schema.cardinalities(attrs)
    if not attrs:
        return FrequencyTable.from_counts((), (), np.zeros((1, 0), dtype=np.int64), [table.n_rows])
    keys, counts = np.unique(encode(codes, cards), return_counts=True)
    return FrequencyTable.from_counts(attrs, cards, decode(keys, cards), counts)


def cumulative(probs: np.ndarray) -> np.ndarray:
    """Cumulative sums for inverse-CDF draws, pinned to exactly 1.

    Entries from the last positive cell on are set to 1.0, so trailing zero
    cells can never be drawn.
    """
    probs = np.asarray(probs, dtype=np.float64)
    cum = np.cumsum(probs, axis=-1)
    total = cum[..., -1:]
    cum = np.divide(cum, total, out=np.zeros_like(cum), where=total > 0)
    positive = probs > 0
    last = probs.shape[-1] - 1 - np.argmax(positive[..., ::-1], axis=-1)
    cols = np.arange(probs.shape[-1])
    cum[cols >= last[..., None]] = 1.0
    return cum


def draw(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw from one cumulative vector for each uniform in ``u``."""
    return np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)


def draw_rows(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse-CDF: ``cum`` is (n, m), one uniform per row."""
    return np.minimum((cum <= u[:, None]).sum(axis=1), cum.shape[1] - 1)


class ConditionalTable:
    """Empirical ``p(target | given)`` from one dataset.

    Built from the dataset's joint table over ``given + target``.  A slice
    whose ``given`` cell was never observed is undefined; with smoothing it
    becomes the Laplace-smoothed slice of zero counts, i.e. uniform over the
    target space.
    """

    def __init__(self, joint: FrequencyTable, given: Sequence[str], target: Sequence[str],
                 alpha: float | None = 0.5):
        self.given = tuple(given)
        self.target = tuple(target)
        if joint.attrs != self.given + self.target:
            joint = joint.marginal(self.given + self.target)
        self.joint = joint
        self.alpha = alpha
        self.given_cards = joint.cards[: len(self.given)]
        self.target_cards = joint.cards[len(self.given):]
        self.given_marginal = joint.marginal(self.given).dense().reshape(-1)
        self.empty = self.given_marginal <= 0
        self._marginals: dict[tuple[str, ...], FrequencyTable] = {}

    @property
    def smoothing(self) -> bool:
        return self.alpha is not None and self.alpha > 0

    def check_defined(self, given_mass: np.ndarray) -> None:
        """Raise if any given-cell with positive mass has an undefined slice."""
        bad = self.empty & (np.asarray(given_mass) > 0)
        if bad.any() and not self.smoothing:
            cells = decode(np.flatnonzero(bad), self.given_cards)
            raise ValueError(
                f"p({', '.join(self.target)} | {', '.join(self.given)}) is undefined for "
                f"unobserved overlap cells {cells.tolist()}; enable smoothing"
            )

    def prob(self, given_keys: np.ndarray, target_codes: np.ndarray,
             attrs: Sequence[str] | None = None) -> np.ndarray:
        """``p(target[attrs] = target_codes | given = given_keys)``, row-wise.

        ``attrs`` selects a subset of the target attributes (others summed out).
        """
        attrs = self.target if attrs is None else tuple(attrs)
        given_keys = np.asarray(given_keys, dtype=np.int64)
        n = given_keys.shape[0]
        target_codes = np.asarray(target_codes, dtype=np.int64).reshape(n, len(attrs))
        if attrs not in self._marginals:
            self._marginals[attrs] = self.joint.marginal(self.given + attrs)
        marg = self._marginals[attrs]
        cells = np.hstack([decode(given_keys, self.given_cards), target_codes])
        num = marg.prob(cells)
        den = self.given_marginal[given_keys]
        out = np.divide(num, den, out=np.zeros(n), where=den > 0)
        empty = self.empty[given_keys]
        if empty.any():
            if self.smoothing:
                cards = [self.target_cards[self.target.index(a)] for a in attrs]
                out[empty] = 1.0 / prod(cards)
            else:
                # only reachable for given-cells with zero mass (see check_defined)
                out[empty] = 0.0
        return out

    @cached_property
    def _sampler(self):
        keys = encode(self.joint.cells[:, : len(self.given)], self.given_cards)
        probs = self.joint.probs / self.given_marginal[keys]
        # support is sorted by key, so rows are grouped by given-cell; within a
        # group accumulate p(t|g) and offset by the group's key
        within = np.empty_like(probs)
        starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
        ends = np.r_[starts[1:], len(keys)]
        for s, e in zip(starts, ends):
            within[s:e] = cumulative(probs[s:e])
        return keys.astype(np.float64) + within

    def sample(self, given_keys: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw target cells for each given-cell key (inverse CDF)."""
        given_keys = np.asarray(given_keys, dtype=np.int64)
        n = given_keys.shape[0]
        u = rng.random(n)
        out = np.empty((n, len(self.target)), dtype=np.int64)
        empty = self.empty[given_keys]
        full = ~empty
        if full.any():
            grid = self._sampler
            pos = np.searchsorted(grid, given_keys[full] + u[full], side="right")
            pos = np.minimum(pos, len(grid) - 1)
            out[full] = self.joint.cells[pos, len(self.given):]
        if empty.any():
            if not self.smoothing:
                raise ValueError("sampling from an undefined conditional slice")
            m = int(empty.sum())
            for j, c in enumerate(self.target_cards):
                out[empty, j] = rng.integers(0, c, size=m)
        return out
