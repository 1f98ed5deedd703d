from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from fairsynth.schema import Attribute, DataTable, Schema
from fairsynth.tables import decode

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"


def make_schema(cards, names=None, label=None, protected=()):
    names = names or [f"x{i + 1}" for i in range(len(cards))]
    attrs = [Attribute(n, tuple(f"v{j}" for j in range(c)), n in protected)
             for n, c in zip(names, cards)]
    return Schema(tuple(attrs), label)


def random_table(schema, attrs, n, rng, concentration=1.0):
    """Rows drawn from a random joint over ``attrs`` (so attributes correlate)."""
    cards = schema.cardinalities(attrs)
    size = int(np.prod(cards))
    p = rng.dirichlet(np.full(size, concentration))
    keys = rng.choice(size, size=n, p=p)
    return DataTable(schema, attrs, decode(keys, cards))


def counts(table, attrs):
    """Counter of value tuples, computed row by row (oracle helper)."""
    idx = [table.attrs.index(a) for a in attrs]
    return Counter(tuple(int(row[i]) for i in idx) for row in table.codes)


def needs_data(*names):
    missing = [n for n in names if not (DATA / n).exists()]
    return pytest.mark.skipif(bool(missing), reason=f"prepared data missing: {missing}")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
