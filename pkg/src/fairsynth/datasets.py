"""Raw benchmark files to headered CSV, and lookup of packaged configs.

The UCI Adult and German Credit files ship without headers (Adult is
``", "``-separated, German is space-separated attribute codes), so they are
converted once into plain comma-separated CSVs that :func:`load_csv` accepts.
COMPAS is already a headered CSV and is copied verbatim.
"""

from __future__ import annotations

import csv
import shutil
from pathlib import Path

from .schema import DiscretizationConfig, SeparationSpec

CONFIG_DIR = Path(__file__).parent / "configs"

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
]

GERMAN_COLUMNS = [
    "checking-account", "duration", "credit-history", "purpose", "credit-amount",
    "savings-account", "employment-since", "installment-rate", "personal-status",
    "other-debtors", "residence-since", "property", "age", "other-installment-plans",
    "housing", "existing-credits", "job", "people-liable", "telephone",
    "foreign-worker", "class-label",
]


def convert_adult(raw_dir, out_path) -> int:
    """Concatenate ``adult.data`` and ``adult.test`` into one CSV."""
    raw_dir = Path(raw_dir)
    rows = []
    for fname in ("adult.data", "adult.test"):
        with open(raw_dir / fname, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("|"):
                    continue
                cells = [c.strip() for c in line.split(",")]
                if len(cells) != len(ADULT_COLUMNS):
                    continue
                cells[-1] = cells[-1].rstrip(".")
                rows.append(cells)
    _write(out_path, ADULT_COLUMNS, rows)
    return len(rows)


def convert_german(raw_dir, out_path) -> int:
    rows = []
    with open(Path(raw_dir) / "german.data", encoding="utf-8") as fh:
        for line in fh:
            cells = line.split()
            if len(cells) == len(GERMAN_COLUMNS):
                rows.append(cells)
    _write(out_path, GERMAN_COLUMNS, rows)
    return len(rows)


def convert_compas(raw_dir, out_path) -> int:
    src = Path(raw_dir) / "compas-scores-two-years.csv"
    shutil.copyfile(src, out_path)
    with open(out_path, encoding="utf-8") as fh:
        return sum(1 for _ in fh) - 1


CONVERTERS = {"adult": convert_adult, "compas": convert_compas, "german": convert_german}


def prepare(dataset: str, raw_dir, out_path) -> int:
    """Convert one raw benchmark dataset; returns the number of data rows written."""
    try:
        converter = CONVERTERS[dataset]
    except KeyError:
        raise ValueError(f"unknown dataset {dataset!r}; choose from {sorted(CONVERTERS)}") from None
    return converter(raw_dir, out_path)


def _write(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _resolve(kind: str, name_or_path) -> Path:
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return p
    packaged = CONFIG_DIR / kind / f"{name_or_path}.json"
    if packaged.exists():
        return packaged
    raise FileNotFoundError(f"no {kind} config named {name_or_path!r}")


def discretization_config(name_or_path) -> DiscretizationConfig:
    """Load a packaged (``adult``/``compas``/``german``) or user discretization config."""
    return DiscretizationConfig.from_json(_resolve("datasets", name_or_path))


def separation_spec(name_or_path) -> SeparationSpec:
    """Load a packaged (e.g. ``adult_relationship``) or user separation spec."""
    return SeparationSpec.from_json(_resolve("separations", name_or_path))


def experiment_config_path(name_or_path) -> Path:
    return _resolve("experiments", name_or_path)


def packaged(kind: str) -> list[str]:
    return sorted(p.stem for p in (CONFIG_DIR / kind).glob("*.json"))
