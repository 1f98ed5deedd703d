"""Categorical schemas, integer-coded tables, CSV ingestion and splitting.

Every table in the package is a :class:`DataTable`: an ``(n_rows, n_attrs)``
array of category indices plus the :class:`Schema` that gives those indices
meaning.  Raw CSV files become tables through a :class:`DiscretizationConfig`.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


class SchemaError(ValueError):
    """Raised when data, configs and schemas disagree."""


@dataclass(frozen=True)
class Attribute:
    name: str
    categories: tuple[str, ...]
    protected: bool = False

    @property
    def cardinality(self) -> int:
        return len(self.categories)

    def index(self, label: str) -> int:
        try:
            return self.categories.index(label)
        except ValueError:
            raise SchemaError(f"{label!r} is not a category of {self.name!r}") from None


@dataclass(frozen=True)
class Schema:
    """Ordered categorical attributes, protected flags and an optional label."""

    attributes: tuple[Attribute, ...]
    label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate attribute names in {names}")
        for a in self.attributes:
            if not a.categories:
                raise SchemaError(f"attribute {a.name!r} has no categories")
            if len(set(a.categories)) != len(a.categories):
                raise SchemaError(f"attribute {a.name!r} repeats a category label")
        if self.label is not None:
            if self.label not in names:
                raise SchemaError(f"label {self.label!r} is not an attribute")
            if self[self.label].cardinality != 2:
                raise SchemaError(f"label {self.label!r} must have exactly 2 categories")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    @property
    def protected(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes if a.protected)

    def __getitem__(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise SchemaError(f"unknown attribute {name!r}")

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def position(self, name: str) -> int:
        if name not in self.names:
            raise SchemaError(f"unknown attribute {name!r}")
        return self.names.index(name)

    def cardinalities(self, attrs: Sequence[str] | None = None) -> tuple[int, ...]:
        attrs = self.names if attrs is None else attrs
        return tuple(self[a].cardinality for a in attrs)

    def ordered(self, attrs: Iterable[str]) -> tuple[str, ...]:
        """Return ``attrs`` sorted into schema order (unknown names raise)."""
        wanted = set(attrs)
        unknown = wanted - set(self.names)
        if unknown:
            raise SchemaError(f"unknown attributes {sorted(unknown)}")
        return tuple(n for n in self.names if n in wanted)

    def to_dict(self) -> dict[str, Any]:
        return {
            "attributes": [
                {"name": a.name, "categories": list(a.categories), "protected": a.protected}
                for a in self.attributes
            ],
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Schema":
        attrs = tuple(
            Attribute(a["name"], tuple(a["categories"]), bool(a.get("protected", False)))
            for a in d["attributes"]
        )
        return cls(attrs, d.get("label"))


class DataTable:
    """Rows of category indices over a subset of a schema's attributes.

    The codes array is read-only; operations return new tables.
    """

    def __init__(self, schema: Schema, attrs: Sequence[str], codes):
        attrs = tuple(attrs)
        for a in attrs:
            if a not in schema:
                raise SchemaError(f"unknown attribute {a!r}")
        if len(set(attrs)) != len(attrs):
            raise SchemaError(f"duplicate attributes in {attrs}")
        codes = np.array(codes, dtype=np.int64, copy=True)
        if codes.ndim == 1 and codes.size == 0:
            codes = codes.reshape(0, len(attrs))
        if codes.ndim != 2 or codes.shape[1] != len(attrs):
            raise SchemaError(
                f"codes of shape {codes.shape} do not match {len(attrs)} attributes"
            )
        cards = np.array(schema.cardinalities(attrs), dtype=np.int64)
        if codes.size and ((codes < 0).any() or (codes >= cards).any()):
            raise SchemaError("category index out of range")
        codes.setflags(write=False)
        self.schema = schema
        self.attrs = attrs
        self.codes = codes

    def __len__(self) -> int:
        return self.codes.shape[0]

    @property
    def n_rows(self) -> int:
        return self.codes.shape[0]

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return self.schema.cardinalities(self.attrs)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.codes[:, self.attrs.index(name)]
        except ValueError:
            raise SchemaError(f"table has no attribute {name!r}") from None

    def columns(self, names: Sequence[str]) -> np.ndarray:
        missing = [n for n in names if n not in self.attrs]
        if missing:
            raise SchemaError(f"table has no attributes {missing}")
        return self.codes[:, [self.attrs.index(n) for n in names]]

    def select(self, names: Sequence[str]) -> "DataTable":
        return DataTable(self.schema, names, self.columns(names))

    def take(self, indices) -> "DataTable":
        return DataTable(self.schema, self.attrs, self.codes[np.asarray(indices, dtype=np.int64)])

    def equals(self, other: "DataTable") -> bool:
        return (
            self.schema == other.schema
            and self.attrs == other.attrs
            and np.array_equal(self.codes, other.codes)
        )

    def to_frame(self) -> pd.DataFrame:
        """Labels (not indices), one column per attribute."""
        data = {}
        for j, name in enumerate(self.attrs):
            cats = np.array(self.schema[name].categories, dtype=object)
            data[name] = cats[self.codes[:, j]]
        return pd.DataFrame(data, columns=list(self.attrs))

    @classmethod
    def from_frame(cls, schema: Schema, frame: pd.DataFrame) -> "DataTable":
        attrs = tuple(frame.columns)
        codes = np.empty((len(frame), len(attrs)), dtype=np.int64)
        for j, name in enumerate(attrs):
            cats = schema[name].categories
            lookup = {c: i for i, c in enumerate(cats)}
            col = frame[name].astype(str).to_numpy()
            try:
                codes[:, j] = [lookup[v] for v in col]
            except KeyError as exc:
                raise SchemaError(f"{exc.args[0]!r} is not a category of {name!r}") from None
        return cls(schema, attrs, codes)

    def __repr__(self):
        return f"DataTable(n_rows={self.n_rows}, attrs={list(self.attrs)})"


# --------------------------------------------------------------------------
# Discretization configs
# --------------------------------------------------------------------------

CATCH_ALL = "*"


@dataclass(frozen=True)
class ColumnRule:
    """How one retained source column becomes a categorical attribute.

    ``kind`` is one of ``"categorical"`` (pass-through), ``"bins"`` or
    ``"merge"``.  Bins are right-closed by default: with thresholds
    ``(25, 60)`` a value ``v`` lands in bin ``sum(v > t for t in thresholds)``.
    Rules are idempotent: a value that is already one of the rule's output
    labels passes through, so a canonical dump reloads with the same config.
    """

    kind: str = "categorical"
    thresholds: tuple[float, ...] = ()
    labels: tuple[str, ...] = ()
    closed: str = "right"
    mapping: Mapping[str, str] = field(default_factory=dict)
    categories: tuple[str, ...] | None = None
    source: str | None = None

    def __post_init__(self):
        if self.kind not in ("categorical", "bins", "merge"):
            raise SchemaError(f"unknown column rule kind {self.kind!r}")
        if self.kind == "bins":
            t = self.thresholds
            if any(b <= a for a, b in zip(t, t[1:])):
                raise SchemaError(f"bin thresholds must be strictly increasing: {t}")
            if len(self.labels) != len(t) + 1:
                raise SchemaError("bin label count must equal threshold count + 1")
            if self.closed not in ("right", "left"):
                raise SchemaError("closed must be 'right' or 'left'")
        if self.kind == "merge" and not self.mapping:
            raise SchemaError("merge rule needs a non-empty mapping")

    def declared_categories(self) -> tuple[str, ...] | None:
        if self.categories is not None:
            return tuple(self.categories)
        if self.kind == "bins":
            return tuple(self.labels)
        if self.kind == "merge" and CATCH_ALL in self.mapping:
            return tuple(sorted(set(self.mapping.values())))
        return None

    def apply(self, values: pd.Series, column: str) -> pd.Series:
        values = values.astype(str)
        if self.kind == "categorical":
            return values
        if self.kind == "merge":
            targets = set(self.mapping.values())
            default = self.mapping.get(CATCH_ALL)
            out = []
            for v in values:
                if v in self.mapping and v != CATCH_ALL:
                    out.append(self.mapping[v])
                elif v in targets:
                    out.append(v)
                elif default is not None:
                    out.append(default)
                else:
                    raise SchemaError(
                        f"value {v!r} in column {column!r} has no merge target and no catch-all"
                    )
            return pd.Series(out, index=values.index, dtype=object)
        labels = np.array(self.labels, dtype=object)
        is_label = values.isin(set(self.labels)).to_numpy()
        numeric = pd.to_numeric(values.where(~is_label), errors="coerce").to_numpy(dtype=float)
        bad = ~is_label & np.isnan(numeric)
        if bad.any():
            raise SchemaError(
                f"non-numeric value {values[bad].iloc[0]!r} in binned column {column!r}"
            )
        side = "left" if self.closed == "right" else "right"
        idx = np.searchsorted(np.asarray(self.thresholds, dtype=float), numeric, side=side)
        out = labels[np.clip(idx, 0, len(labels) - 1)]
        out[is_label] = values.to_numpy()[is_label]
        return pd.Series(out, index=values.index, dtype=object)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ColumnRule":
        d = dict(d or {})
        source = d.pop("source", None)
        categories = d.pop("categories", None)
        categories = tuple(categories) if categories is not None else None
        if "bins" in d:
            b = d["bins"]
            return cls(
                "bins",
                thresholds=tuple(float(x) for x in b["thresholds"]),
                labels=tuple(b["labels"]),
                closed=b.get("closed", "right"),
                categories=categories,
                source=source,
            )
        if "merge" in d:
            return cls("merge", mapping=dict(d["merge"]), categories=categories, source=source)
        return cls("categorical", categories=categories, source=source)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {}
        if self.kind == "bins":
            d["bins"] = {
                "thresholds": list(self.thresholds),
                "labels": list(self.labels),
                "closed": self.closed,
            }
        elif self.kind == "merge":
            d["merge"] = dict(self.mapping)
        if self.categories is not None:
            d["categories"] = list(self.categories)
        if self.source is not None:
            d["source"] = self.source
        return d


def _apply_pre_transform(frame: pd.DataFrame, step: Mapping[str, Any]) -> pd.DataFrame:
    op = step.get("op")
    if op == "filter":
        col = step["column"]
        if col not in frame.columns:
            raise SchemaError(f"pre_transform filter: column {col!r} absent")
        values = frame[col]
        keep = np.ones(len(frame), dtype=bool)
        if "keep" in step:
            keep &= values.isin([str(v) for v in step["keep"]]).to_numpy()
        if "exclude" in step:
            keep &= ~values.isin([str(v) for v in step["exclude"]]).to_numpy()
        if "min" in step or "max" in step:
            num = pd.to_numeric(values, errors="coerce").to_numpy(dtype=float)
            with np.errstate(invalid="ignore"):
                if "min" in step:
                    keep &= num >= float(step["min"])
                if "max" in step:
                    keep &= num <= float(step["max"])
        return frame.loc[keep]
    if op == "sum":
        cols = list(step["columns"])
        missing = [c for c in cols if c not in frame.columns]
        if missing:
            raise SchemaError(f"pre_transform sum: columns {missing} absent")
        nums = frame[cols].apply(pd.to_numeric, errors="coerce")
        total = nums.sum(axis=1, min_count=len(cols))
        out = frame.copy()
        out[step["into"]] = [
            "" if math.isnan(v) else (str(int(v)) if float(v).is_integer() else str(v))
            for v in total
        ]
        return out
    if op == "derive":
        col = step["column"]
        if col not in frame.columns:
            raise SchemaError(f"pre_transform derive: column {col!r} absent")
        mapping = dict(step["map"])
        default = mapping.get(CATCH_ALL)
        values = frame[col]
        unknown = ~values.isin(list(mapping)) & (values != "")
        if default is None and unknown.any():
            raise SchemaError(
                f"pre_transform derive: value {values[unknown].iloc[0]!r} of {col!r} unmapped"
            )
        out = frame.copy()
        out[step["into"]] = [
            "" if v == "" else mapping.get(v, default) for v in values
        ]
        return out
    raise SchemaError(f"unknown pre_transform op {op!r}")


@dataclass(frozen=True)
class DiscretizationConfig:
    """Per-column rules mapping a raw CSV to a categorical table.

    JSON keys: ``columns`` (ordered mapping of attribute name to rule),
    ``drop``, ``pre_transform`` (list of ``filter``/``sum``/``derive`` steps),
    ``null_values``, plus fairness metadata ``label``, ``positive_label`` and
    ``protected`` (attribute -> privileged category).
    """

    columns: Mapping[str, ColumnRule]
    drop: tuple[str, ...] = ()
    pre_transform: tuple[Mapping[str, Any], ...] = ()
    null_values: tuple[str, ...] = ("",)
    label: str | None = None
    positive_label: str | None = None
    protected: Mapping[str, str] = field(default_factory=dict)
    name: str = ""

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DiscretizationConfig":
        return cls(
            columns={k: ColumnRule.from_dict(v) for k, v in d["columns"].items()},
            drop=tuple(d.get("drop", ())),
            pre_transform=tuple(d.get("pre_transform", ())),
            null_values=tuple(d.get("null_values", ("",))),
            label=d.get("label"),
            positive_label=d.get("positive_label"),
            protected=dict(d.get("protected", {})),
            name=d.get("name", ""),
        )

    @classmethod
    def from_json(cls, path) -> "DiscretizationConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "pre_transform": [dict(s) for s in self.pre_transform],
            "drop": list(self.drop),
            "null_values": list(self.null_values),
            "columns": {k: r.to_dict() for k, r in self.columns.items()},
            "label": self.label,
            "positive_label": self.positive_label,
            "protected": dict(self.protected),
        }

    @classmethod
    def passthrough(cls, schema: Schema) -> "DiscretizationConfig":
        """A config that reloads a canonical dump of ``schema`` verbatim."""
        return cls(
            columns={a.name: ColumnRule(categories=a.categories) for a in schema.attributes},
            label=schema.label,
            protected={a.name: a.categories[0] for a in schema.attributes if a.protected},
        )


def load_csv(path, config: DiscretizationConfig) -> tuple[Schema, DataTable]:
    """Read a headered UTF-8 CSV and discretize it into a categorical table.

    Rows with a null cell in any retained column are dropped.  Categories not
    declared by the config are the sorted set of observed labels.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    frame = frame.apply(lambda s: s.str.strip())
    n_raw = len(frame)
    for step in config.pre_transform:
        frame = _apply_pre_transform(frame, step)

    sources = {name: rule.source or name for name, rule in config.columns.items()}
    missing = [s for s in sources.values() if s not in frame.columns]
    if missing:
        raise SchemaError(f"columns {missing} named in config are absent from {path}")

    raw = frame[list(sources.values())]
    null = raw.isin(set(config.null_values)) | (raw == "")
    keep = ~null.any(axis=1).to_numpy()
    raw = raw.loc[keep]
    logger.info("%s: %d rows read, %d kept after pre-transforms and null drop",
                path.name, n_raw, len(raw))

    attributes = []
    labelled = {}
    for name, rule in config.columns.items():
        values = rule.apply(raw[sources[name]], name)
        declared = rule.declared_categories()
        observed = set(values)
        if declared is not None:
            extra = observed - set(declared)
            if extra:
                raise SchemaError(f"column {name!r} has undeclared categories {sorted(extra)}")
            cats = tuple(sorted(declared))
        else:
            cats = tuple(sorted(observed))
        attributes.append(Attribute(name, cats, name in config.protected))
        labelled[name] = values.to_numpy()

    label = config.label if config.label in config.columns else None
    schema = Schema(tuple(attributes), label)
    frame_out = pd.DataFrame(labelled, columns=list(config.columns))
    return schema, DataTable.from_frame(schema, frame_out)


def write_csv(table: DataTable, path) -> None:
    """Write the canonical dump: header of attribute names, cells of labels."""
    table.to_frame().to_csv(path, index=False, lineterminator="\n")


def read_table(path, schema: Schema) -> DataTable:
    """Read a canonical dump produced by :func:`write_csv` back against ``schema``."""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    unknown = [c for c in frame.columns if c not in schema]
    if unknown:
        raise SchemaError(f"{path}: columns {unknown} are not in the schema")
    return DataTable.from_frame(schema, frame)


def holdout_split(table: DataTable, test_fraction: float, seed: int):
    """Seeded uniform shuffle, then cut off ``round(test_fraction * N)`` test rows."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    n = table.n_rows
    if n == 0:
        raise ValueError("cannot split an empty table")
    n_test = int(math.floor(test_fraction * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    train, test = table.take(perm[: n - n_test]), table.take(perm[n - n_test:])
    logger.info("holdout split: %d train rows, %d test rows", train.n_rows, test.n_rows)
    return train, test


@dataclass(frozen=True)
class SeparationSpec:
    """Column split into an internal and an external dataset sharing ``overlap``."""

    internal: tuple[str, ...]
    external: tuple[str, ...]
    overlap: tuple[str, ...]
    name: str = ""

    def __post_init__(self):
        for f in ("internal", "external", "overlap"):
            object.__setattr__(self, f, tuple(getattr(self, f)))

    def validate(self, schema: Schema) -> None:
        internal, external, overlap = set(self.internal), set(self.external), set(self.overlap)
        if not overlap:
            raise SchemaError("overlap must be non-empty")
        if internal | external != set(schema.names):
            missing = set(schema.names) - (internal | external)
            extra = (internal | external) - set(schema.names)
            raise SchemaError(f"separation does not cover the schema (missing {sorted(missing)}, "
                              f"unknown {sorted(extra)})")
        if internal & external != overlap:
            raise SchemaError("internal and external must intersect exactly in the overlap")
        if schema.label is not None and schema.label not in internal:
            raise SchemaError(f"label {schema.label!r} must be internal")
        leaked = [p for p in schema.protected if p not in external - internal]
        if leaked:
            raise SchemaError(f"protected attributes {leaked} must be external-only")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SeparationSpec":
        return cls(tuple(d["internal"]), tuple(d["external"]), tuple(d["overlap"]),
                   d.get("name", ""))

    @classmethod
    def from_json(cls, path) -> "SeparationSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "internal": list(self.internal),
                "external": list(self.external), "overlap": list(self.overlap)}


def separate_columns(table: DataTable, spec: SeparationSpec) -> tuple[DataTable, DataTable]:
    """Split ``table`` by column; both outputs keep every row in order."""
    spec.validate(table.schema)
    if set(table.attrs) != set(table.schema.names):
        raise SchemaError("separate_columns needs a table over the full schema")
    schema = table.schema
    return table.select(schema.ordered(spec.internal)), table.select(schema.ordered(spec.external))
