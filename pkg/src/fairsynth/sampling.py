"""Synthetic table generation from fitted joint models.

Draw order follows each model's factorisation: the overlap cell first, then
each side given the overlap (independence given overlap); the preserved
block, then the other side given its overlap (marginal preservation); the
latent class, then every attribute given it (latent naive Bayes); or every
attribute on its own (independent).  All draws are inverse-CDF lookups on
precomputed cumulative arrays, so a ``(model, n, seed)`` triple always yields
the same table.
"""

from __future__ import annotations

from .estimation import JointModel
from .schema import DataTable, write_csv


def sample(model: JointModel, n: int, seed: int = 0) -> DataTable:
    return model.sample(n, seed)


def sample_to_csv(model: JointModel, n: int, seed: int, path) -> DataTable:
    table = model.sample(n, seed)
    write_csv(table, path)
    return table
