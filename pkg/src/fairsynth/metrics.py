"""Fidelity of synthetic tables and group fairness of a classifier.

Fidelity compares a synthetic table with the real one it imitates: per
attribute 1-TVD, pairwise contingency similarity (CS), Cramér's V
differences (DCC), a real-vs-synthetic discriminator (DM) and the KL
divergence of each protected attribute jointly with the label.

Fairness metrics take label indices, a group vector and the privileged
group's value.  Rates with an empty denominator raise
:class:`UndefinedMetricError`; the bootstrap skips and counts such replicates.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .classifiers import CategoricalRandomForest
from .schema import DataTable, SchemaError
from .tables import encode

KL_ALPHA = 0.5
PERCENTILES = (2.5, 25.0, 50.0, 75.0, 97.5)
FAIRNESS_METRICS = ("EOD", "DI", "AOD")


class UndefinedMetricError(ValueError):
    """A rate in a fairness metric has a zero denominator."""


# -- fidelity -----------------------------------------------------------------

def _check_attrs(real: DataTable, synth: DataTable, attrs):
    for a in attrs:
        if a not in real.attrs or a not in synth.attrs:
            raise SchemaError(f"attribute {a!r} missing from one of the tables")
        if real.schema[a].categories != synth.schema[a].categories:
            raise SchemaError(f"attribute {a!r} has different categories in the two tables")


def _counts(table: DataTable, attrs) -> np.ndarray:
    cards = table.schema.cardinalities(attrs)
    keys = encode(table.columns(attrs), cards)
    return np.bincount(keys, minlength=int(np.prod(cards))).reshape(cards)


def _freq(table: DataTable, attrs) -> np.ndarray:
    c = _counts(table, attrs)
    return c / c.sum()


def tvd_complement(real: DataTable, synth: DataTable, attr: str) -> float:
    """``1 - TVD`` between the two empirical marginals of ``attr``."""
    _check_attrs(real, synth, [attr])
    return 1.0 - 0.5 * float(np.abs(_freq(real, [attr]) - _freq(synth, [attr])).sum())


def contingency_similarity(real: DataTable, synth: DataTable, attr_a: str, attr_b: str) -> float:
    """``1 - TVD`` between the normalised contingency tables of two attributes."""
    attrs = [attr_a, attr_b]
    _check_attrs(real, synth, attrs)
    return 1.0 - 0.5 * float(np.abs(_freq(real, attrs) - _freq(synth, attrs)).sum())


def cramers_v(table: DataTable, attr_a: str, attr_b: str) -> float:
    """Cramér's V of the raw-count contingency table.

    Categories that never occur are dropped first; V is 0 when either
    attribute then has a single category.
    """
    obs = _counts(table, [attr_a, attr_b]).astype(np.float64)
    obs = obs[obs.sum(axis=1) > 0][:, obs.sum(axis=0) > 0]
    r, c = obs.shape
    if r < 2 or c < 2:
        return 0.0
    n = obs.sum()
    expected = np.outer(obs.sum(axis=1), obs.sum(axis=0)) / n
    chi2 = float(((obs - expected) ** 2 / expected).sum())
    return float(np.sqrt(chi2 / n / min(r - 1, c - 1)))


def cramers_v_matrix(table: DataTable, attrs=None) -> np.ndarray:
    attrs = table.attrs if attrs is None else tuple(attrs)
    m = np.zeros((len(attrs), len(attrs)))
    for i, j in itertools.combinations(range(len(attrs)), 2):
        m[i, j] = m[j, i] = cramers_v(table, attrs[i], attrs[j])
    return m


def dcc_matrix(real: DataTable, synth: DataTable, attrs=None) -> np.ndarray:
    """``V_synth - V_real`` for every attribute pair (zero diagonal)."""
    attrs = real.attrs if attrs is None else tuple(attrs)
    _check_attrs(real, synth, attrs)
    return cramers_v_matrix(synth, attrs) - cramers_v_matrix(real, attrs)


def discriminator_measure(real: DataTable, synth: DataTable, n_seeds: int = 5,
                          test_fraction: float = 0.3, seed: int = 0, attrs=None,
                          **forest_config) -> tuple[float, float, list[float]]:
    """Holdout accuracy of a forest telling synthetic (1) from real (0) rows.

    Per seed: the larger table is downsampled to the size of the smaller,
    ``test_fraction`` of each class is held out, and a
    :class:`CategoricalRandomForest` is trained on the rest.  Returns
    ``(mean, std, per-seed accuracies)``.
    """
    attrs = real.attrs if attrs is None else tuple(attrs)
    _check_attrs(real, synth, attrs)
    xr, xs = real.columns(attrs), synth.columns(attrs)
    m = min(len(xr), len(xs))
    n_test = int(np.floor(test_fraction * m + 0.5))
    if m < 2 or n_test < 1 or n_test >= m:
        raise ValueError("tables too small for a discriminator holdout")
    cards = real.schema.cardinalities(attrs)
    scores = []
    for child in np.random.SeedSequence(seed).spawn(n_seeds):
        rng = np.random.default_rng(child)
        parts = []
        for x in (xr, xs):
            rows = rng.choice(len(x), size=m, replace=False)
            parts.append(x[rows])
        x_train = np.vstack([parts[0][n_test:], parts[1][n_test:]])
        y_train = np.r_[np.zeros(m - n_test, int), np.ones(m - n_test, int)]
        x_test = np.vstack([parts[0][:n_test], parts[1][:n_test]])
        y_test = np.r_[np.zeros(n_test, int), np.ones(n_test, int)]
        forest = CategoricalRandomForest(random_state=int(rng.integers(2**32)), **forest_config)
        forest.fit(x_train, y_train, n_categories=cards)
        scores.append(float(np.mean(forest.predict(x_test) == y_test)))
    return float(np.mean(scores)), float(np.std(scores)), scores


def kl_protected_outcome(real: DataTable, synth: DataTable, protected: str, label: str,
                         alpha: float = KL_ALPHA) -> float:
    """``KL(p_synth(A, Y) || p_real(A, Y))`` with add-``alpha`` smoothing on both."""
    attrs = [protected, label]
    _check_attrs(real, synth, attrs)
    cr, cs = _counts(real, attrs) + alpha, _counts(synth, attrs) + alpha
    pr, ps = cr / cr.sum(), cs / cs.sum()
    return float(np.sum(ps * np.log(ps / pr)))


@dataclass
class FidelityReport:
    attrs: list[str]
    tvd: dict[str, float]
    cs: dict[str, float]
    dcc: list[list[float]]
    kl: dict[str, float]
    dm_mean: float | None = None
    dm_std: float | None = None
    dm_scores: list[float] = field(default_factory=list)

    @property
    def tvd_mean(self) -> float:
        # fsum is exactly rounded, so the mean survives key reordering in JSON
        return math.fsum(self.tvd.values()) / len(self.tvd)

    @property
    def cs_mean(self) -> float:
        return math.fsum(self.cs.values()) / len(self.cs) if self.cs else 1.0

    def to_dict(self) -> dict:
        return {
            "attrs": list(self.attrs), "tvd": dict(self.tvd), "tvd_mean": self.tvd_mean,
            "cs": dict(self.cs), "cs_mean": self.cs_mean, "dcc": [list(r) for r in self.dcc],
            "kl": dict(self.kl), "dm_mean": self.dm_mean, "dm_std": self.dm_std,
            "dm_scores": list(self.dm_scores),
        }

    @classmethod
    def from_dict(cls, d) -> "FidelityReport":
        return cls(attrs=list(d["attrs"]), tvd=dict(d["tvd"]), cs=dict(d["cs"]),
                   dcc=[list(r) for r in d["dcc"]], kl=dict(d["kl"]), dm_mean=d.get("dm_mean"),
                   dm_std=d.get("dm_std"), dm_scores=list(d.get("dm_scores", [])))

    def rows(self):
        """Flat ``(section, key, value)`` rows."""
        for a, v in self.tvd.items():
            yield "tvd_complement", a, v
        yield "tvd_complement", "mean", self.tvd_mean
        for k, v in self.cs.items():
            yield "contingency_similarity", k, v
        yield "contingency_similarity", "mean", self.cs_mean
        for i, j in itertools.combinations(range(len(self.attrs)), 2):
            yield "dcc", f"{self.attrs[i]}|{self.attrs[j]}", self.dcc[i][j]
        for a, v in self.kl.items():
            yield "kl", a, v
        if self.dm_mean is not None:
            yield "discriminator", "mean", self.dm_mean
            yield "discriminator", "std", self.dm_std


def fidelity_report(real: DataTable, synth: DataTable, protected=(), label=None,
                    discriminator: dict | None = None, seed: int = 0) -> FidelityReport:
    """All fidelity metrics of ``synth`` against ``real``.

    ``discriminator`` holds :func:`discriminator_measure` keyword arguments;
    ``None`` skips DM.
    """
    attrs = [a for a in real.attrs if a in synth.attrs]
    _check_attrs(real, synth, attrs)
    tvd = {a: tvd_complement(real, synth, a) for a in attrs}
    cs = {f"{a}|{b}": contingency_similarity(real, synth, a, b)
          for a, b in itertools.combinations(attrs, 2)}
    dcc = dcc_matrix(real, synth, attrs).tolist()
    kl = {}
    if label is not None:
        kl = {a: kl_protected_outcome(real, synth, a, label) for a in protected}
    report = FidelityReport(list(attrs), tvd, cs, dcc, kl)
    if discriminator is not None:
        report.dm_mean, report.dm_std, report.dm_scores = discriminator_measure(
            real, synth, seed=seed, attrs=attrs, **discriminator)
    return report


# -- fairness -----------------------------------------------------------------

def _confusion(y_true, y_pred, group, privileged, positive) -> np.ndarray:
    """Counts indexed ``[privileged?, truly positive?, predicted positive?]``."""
    y_true, y_pred, group = (np.asarray(v).ravel() for v in (y_true, y_pred, group))
    if not (len(y_true) == len(y_pred) == len(group)):
        raise ValueError("y_true, y_pred and group must have equal length")
    code = (group == privileged) * 4 + (y_true == positive) * 2 + (y_pred == positive)
    return np.bincount(code.astype(np.int64), minlength=8).reshape(2, 2, 2)


def _ratio(num, den, what):
    num, den = np.asarray(num, dtype=np.float64), np.asarray(den, dtype=np.float64)
    if np.any(den == 0):
        raise UndefinedMetricError(f"{what} is undefined (empty denominator)")
    return num / den


def _tpr(c):
    return _ratio(c[..., 1, 1], c[..., 1, :].sum(axis=-1), "true positive rate")


def _fpr(c):
    return _ratio(c[..., 0, 1], c[..., 0, :].sum(axis=-1), "false positive rate")


def _ppr(c):
    return _ratio(c[..., :, 1].sum(axis=-1), c.sum(axis=(-1, -2)), "positive prediction rate")


def _eod(c):
    t = _tpr(c)
    return t[..., 0] - t[..., 1]


def _aod(c):
    t, f = _tpr(c), _fpr(c)
    return 0.5 * ((f[..., 0] - f[..., 1]) + (t[..., 0] - t[..., 1]))


def _di(c):
    p = _ppr(c)
    return _ratio(p[..., 0], p[..., 1], "disparate impact")


_FROM_COUNTS = {"EOD": _eod, "DI": _di, "AOD": _aod}


def equal_opportunity_difference(y_true, y_pred, group, privileged=1, positive=1) -> float:
    """``TPR_unprivileged - TPR_privileged``."""
    return float(_eod(_confusion(y_true, y_pred, group, privileged, positive)))


def disparate_impact(y_pred, group, privileged=1, positive=1) -> float:
    """``P(pred = positive | unprivileged) / P(pred = positive | privileged)``."""
    y_pred = np.asarray(y_pred)
    return float(_di(_confusion(y_pred, y_pred, group, privileged, positive)))


def average_odds_difference(y_true, y_pred, group, privileged=1, positive=1) -> float:
    """``((FPR_u - FPR_p) + (TPR_u - TPR_p)) / 2``."""
    return float(_aod(_confusion(y_true, y_pred, group, privileged, positive)))


def fairness_metric(metric: str, y_true, y_pred, group, privileged=1, positive=1) -> float:
    try:
        fn = _FROM_COUNTS[metric]
    except KeyError:
        raise ValueError(f"unknown fairness metric {metric!r}") from None
    return float(fn(_confusion(y_true, y_pred, group, privileged, positive)))


@dataclass
class MetricSummary:
    point: float | None
    mean: float | None
    std: float | None
    percentiles: dict[str, float | None]
    n_valid: int
    n_skipped: int

    def to_dict(self) -> dict:
        return {"point": self.point, "mean": self.mean, "std": self.std,
                "percentiles": dict(self.percentiles), "n_valid": self.n_valid,
                "n_skipped": self.n_skipped}

    @classmethod
    def from_dict(cls, d) -> "MetricSummary":
        return cls(d["point"], d["mean"], d["std"], dict(d["percentiles"]), d["n_valid"],
                   d["n_skipped"])


def _pct_key(q: float) -> str:
    return f"p{q:g}"


@dataclass
class FairnessReport:
    """``metrics[attribute][metric]`` summaries of one bootstrap run."""

    n_boot: int
    n_rows: int
    metrics: dict[str, dict[str, MetricSummary]]

    def to_dict(self) -> dict:
        return {"n_boot": self.n_boot, "n_rows": self.n_rows,
                "metrics": {a: {m: s.to_dict() for m, s in ms.items()}
                            for a, ms in self.metrics.items()}}

    @classmethod
    def from_dict(cls, d) -> "FairnessReport":
        return cls(d["n_boot"], d["n_rows"],
                   {a: {m: MetricSummary.from_dict(s) for m, s in ms.items()}
                    for a, ms in d["metrics"].items()})

    def rows(self):
        for a, ms in self.metrics.items():
            for m, s in ms.items():
                yield a, m, s


def _summary(point, values, n_boot) -> MetricSummary:
    if values.size == 0:
        pct = {_pct_key(q): None for q in PERCENTILES}
        return MetricSummary(point, None, None, pct, 0, n_boot)
    pct = {_pct_key(q): float(v) for q, v in zip(PERCENTILES, np.percentile(values, PERCENTILES))}
    return MetricSummary(point, float(values.mean()), float(values.std()), pct, int(values.size),
                         n_boot - int(values.size))


def bootstrap_fairness(y_true, y_pred, groups: dict, privileged: dict, positive=1,
                       n_boot: int = 1000, seed: int = 0,
                       metrics=FAIRNESS_METRICS) -> FairnessReport:
    """Bootstrap distributions of fairness metrics.

    Each replicate resamples the ``N`` rows with replacement.  Only the cell
    of each row in the joint ``(groups..., y_true, y_pred)`` table matters,
    so a replicate is drawn directly as multinomial cell counts, which has
    the same distribution as resampling rows.  Replicates where a metric is
    undefined are skipped for that metric and counted.

    ``groups`` maps attribute name -> group vector, ``privileged`` maps it
    to the privileged value.
    """
    names = list(groups)
    y_true, y_pred = np.asarray(y_true).ravel(), np.asarray(y_pred).ravel()
    n = len(y_true)
    if n == 0:
        raise ValueError("cannot bootstrap an empty table")
    bits = [np.asarray(groups[a]).ravel() == privileged[a] for a in names]
    bits += [y_true == positive, y_pred == positive]
    code = np.zeros(n, dtype=np.int64)
    for b in bits:
        code = code * 2 + b
    shape = (2,) * len(bits)
    freq = np.bincount(code, minlength=2 ** len(bits)) / n
    draws = np.random.default_rng(seed).multinomial(n, freq, size=n_boot)
    draws = draws.reshape((n_boot,) + shape)
    observed = (freq * n).round().astype(np.int64).reshape(shape)

    out = {}
    for i, a in enumerate(names):
        other = tuple(j for j in range(len(names)) if j != i)
        point_c = observed.sum(axis=other) if other else observed
        boot_c = draws.sum(axis=tuple(j + 1 for j in other)) if other else draws
        out[a] = {}
        for m in metrics:
            try:
                point = float(_FROM_COUNTS[m](point_c))
            except UndefinedMetricError:
                point = None
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = _vectorised(m, boot_c)
            vals = vals[np.isfinite(vals)]
            out[a][m] = _summary(point, vals, n_boot)
    return FairnessReport(n_boot, n, out)


def _vectorised(metric, c):
    """Per-replicate metric over ``c[b, group, true, pred]``; NaN where undefined."""
    c = c.astype(np.float64)
    pos = c[:, :, 1, :].sum(axis=-1)
    neg = c[:, :, 0, :].sum(axis=-1)
    tpr = np.where(pos > 0, c[:, :, 1, 1] / pos, np.nan)
    fpr = np.where(neg > 0, c[:, :, 0, 1] / neg, np.nan)
    size = c.sum(axis=(-1, -2))
    ppr = np.where(size > 0, c[:, :, :, 1].sum(axis=-1) / size, np.nan)
    if metric == "EOD":
        return tpr[:, 0] - tpr[:, 1]
    if metric == "AOD":
        return 0.5 * ((fpr[:, 0] - fpr[:, 1]) + (tpr[:, 0] - tpr[:, 1]))
    if metric == "DI":
        return np.where(ppr[:, 1] > 0, ppr[:, 0] / ppr[:, 1], np.nan)
    raise ValueError(f"unknown fairness metric {metric!r}")


def table_fairness(table: DataTable, predictions, label: str, protected: dict, positive: str,
                   n_boot: int = 1000, seed: int = 0) -> FairnessReport:
    """Bootstrap fairness of ``predictions`` (label indices) against ``table``.

    ``protected`` maps attribute -> privileged category label and
    ``positive`` is the favourable label.
    """
    schema = table.schema
    groups = {a: table.column(a) for a in protected}
    priv = {a: schema[a].index(v) for a, v in protected.items()}
    return bootstrap_fairness(table.column(label), predictions, groups, priv,
                              positive=schema[label].index(positive), n_boot=n_boot, seed=seed)


# -- rendering ----------------------------------------------------------------

def _fmt(v, digits=3):
    return "-" if v is None else f"{v:.{digits}f}"


def render_table(header, rows) -> str:
    """Aligned plain-text table."""
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def fidelity_text(reports: dict[str, FidelityReport]) -> str:
    """One row per method: mean 1-TVD, mean CS, DM and KL per protected attribute."""
    kl_attrs = sorted({a for r in reports.values() for a in r.kl})
    header = ["method", "1-TVD", "CS", "DM"] + [f"KL({a})" for a in kl_attrs]
    rows = [[name, _fmt(r.tvd_mean), _fmt(r.cs_mean), _fmt(r.dm_mean)]
            + [_fmt(r.kl.get(a)) for a in kl_attrs] for name, r in reports.items()]
    return render_table(header, rows)


def fairness_text(reports: dict[str, FairnessReport]) -> str:
    rows = []
    for name, rep in reports.items():
        for a, m, s in rep.rows():
            rows.append([name, a, m, _fmt(s.point), _fmt(s.mean), _fmt(s.std),
                         _fmt(s.percentiles.get("p2.5")), _fmt(s.percentiles.get("p97.5")),
                         s.n_skipped])
    return render_table(["data", "attribute", "metric", "point", "mean", "std", "p2.5", "p97.5",
                         "skipped"], rows)


def to_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False)


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    return buf.getvalue()
