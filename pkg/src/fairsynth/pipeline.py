"""End-to-end audit: holdout, column separation, joint estimation, synthetic
test data, and fidelity/fairness of a classifier on real vs synthetic data.

Every random stage draws its seed from the master seed and a stage name::

    stage_seed(master, name) = SeedSequence([master, crc32(name)]).generate_state(1)[0]

so stages are independent of each other and of execution order.
"""

from __future__ import annotations

import json
import logging
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datasets
from .classifiers import predict, train_tree
from .estimation import IndependenceGivenOverlap, IndependentModel, MarginalPreservation
from .latent import LatentNaiveBayes
from .metrics import (
    FAIRNESS_METRICS,
    FairnessReport,
    FidelityReport,
    fairness_text,
    fidelity_report,
    fidelity_text,
    render_table,
    rows_to_csv,
    table_fairness,
    to_json,
)
from .schema import SchemaError, holdout_split, load_csv, separate_columns, write_csv
from .serialization import save_model

logger = logging.getLogger(__name__)

METHODS = ("indep_overlap", "marginal_internal", "marginal_external", "latent_nb", "independent")
BASELINE = "independent"

_LATENT_DEFAULTS = {"k": 20, "tol": 1e-6, "max_iters": 500, "restarts": 5}
_CLASSIFIER_DEFAULTS = {"max_depth": 12, "min_samples_leaf": 5}
_DISCRIMINATOR_DEFAULTS = {"n_trees": 100, "n_seeds": 5, "test_fraction": 0.3}


def stage_seed(master: int, stage: str) -> int:
    """Seed of one pipeline stage, derived from the master seed."""
    seq = np.random.SeedSequence([int(master), zlib.crc32(stage.encode("utf-8"))])
    return int(seq.generate_state(1)[0])


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get("FAIRSYNTH_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class ExperimentConfig:
    """One audit: a dataset, a separation and the methods to compare.

    ``data`` is resolved against the working directory, then against the
    directory of the config file.  ``discretization`` and ``separation``
    name packaged configs or point to JSON files.
    """

    dataset: str
    data: str
    discretization: str
    separation: str
    methods: tuple[str, ...] = METHODS
    test_fraction: float = 0.3
    seed: int = 0
    smoothing: bool = True
    latent: dict = field(default_factory=dict)
    classifier: dict = field(default_factory=dict)
    discriminator: dict | None = field(default_factory=dict)
    n_boot: int = 1000
    n_synth: int | None = None
    output_dir: str = "out"
    base_dir: str | None = None

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.latent = {**_LATENT_DEFAULTS, **(self.latent or {})}
        self.classifier = {**_CLASSIFIER_DEFAULTS, **(self.classifier or {})}
        if self.discriminator is not None:
            self.discriminator = {**_DISCRIMINATOR_DEFAULTS, **self.discriminator}

    _FIELDS = ("dataset", "data", "discretization", "separation", "methods", "test_fraction",
               "seed", "smoothing", "latent", "classifier", "discriminator", "n_boot", "n_synth",
               "output_dir")

    @classmethod
    def from_dict(cls, d, base_dir=None) -> "ExperimentConfig":
        unknown = set(d) - set(cls._FIELDS)
        if unknown:
            raise ValueError(f"unknown experiment config keys {sorted(unknown)}")
        return cls(**d, base_dir=None if base_dir is None else str(base_dir))

    @classmethod
    def from_json(cls, name_or_path) -> "ExperimentConfig":
        path = datasets.experiment_config_path(name_or_path)
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self._FIELDS}
        d["methods"] = list(self.methods)
        return d

    def data_path(self) -> Path:
        p = Path(self.data)
        if p.is_absolute() or p.exists() or self.base_dir is None:
            return p
        alt = Path(self.base_dir) / p
        return alt if alt.exists() else p

    def validate(self):
        """Check the config before any work; returns (discretization, separation)."""
        if not self.methods:
            raise ValueError("at least one method is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must not repeat")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie strictly between 0 and 1")
        if self.n_boot < 1:
            raise ValueError("n_boot must be at least 1")
        if not self.data_path().exists():
            raise FileNotFoundError(f"data file {self.data_path()} does not exist")
        disc = datasets.discretization_config(self.discretization)
        spec = datasets.separation_spec(self.separation)
        if disc.label is None or disc.positive_label is None or not disc.protected:
            raise ValueError("the discretization config must name label, positive_label and "
                             "protected attributes")
        features = [a for a in spec.internal if a != disc.label]
        leaked = sorted(set(features) & set(disc.protected))
        if leaked:
            raise SchemaError(f"classifier features include protected attributes {leaked}")
        if disc.label not in spec.internal:
            raise SchemaError(f"label {disc.label!r} is not in the internal dataset")
        return disc, spec


def make_model(method: str, config: ExperimentConfig, seed: int):
    if method == "indep_overlap":
        return IndependenceGivenOverlap(smoothing=config.smoothing)
    if method in ("marginal_internal", "marginal_external"):
        return MarginalPreservation(preserve=method.split("_")[1], smoothing=config.smoothing)
    if method == "latent_nb":
        lat = config.latent
        return LatentNaiveBayes(n_components=lat["k"], tol=lat["tol"], max_iter=lat["max_iters"],
                                n_restarts=lat["restarts"], random_state=seed)
    if method == "independent":
        return IndependentModel()
    raise ValueError(f"unknown method {method!r}")


@dataclass
class MethodResult:
    fidelity: FidelityReport | None = None
    fairness: FairnessReport | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {"fidelity": None if self.fidelity is None else self.fidelity.to_dict(),
                "fairness": None if self.fairness is None else self.fairness.to_dict(),
                "error": self.error}

    @classmethod
    def from_dict(cls, d) -> "MethodResult":
        return cls(None if d["fidelity"] is None else FidelityReport.from_dict(d["fidelity"]),
                   None if d["fairness"] is None else FairnessReport.from_dict(d["fairness"]),
                   d.get("error"))


@dataclass
class AuditReport:
    config: dict
    real_fairness: FairnessReport
    methods: dict[str, MethodResult]
    n_train: int = 0
    n_test: int = 0

    def differences(self) -> dict[str, dict[str, dict[str, float | None]]]:
        """``|bootstrap mean on synthetic - bootstrap mean on real|`` per method,
        attribute and metric."""
        out = {}
        for name, res in self.methods.items():
            if res.fairness is None:
                continue
            out[name] = {}
            for a, ms in self.real_fairness.metrics.items():
                out[name][a] = {}
                for m, real in ms.items():
                    synth = res.fairness.metrics[a][m]
                    ok = real.mean is not None and synth.mean is not None
                    out[name][a][m] = abs(synth.mean - real.mean) if ok else None
        return out

    def to_dict(self) -> dict:
        return {"config": self.config, "n_train": self.n_train, "n_test": self.n_test,
                "real_fairness": self.real_fairness.to_dict(),
                "methods": {k: v.to_dict() for k, v in self.methods.items()},
                "differences": self.differences()}

    @classmethod
    def from_dict(cls, d) -> "AuditReport":
        return cls(d["config"], FairnessReport.from_dict(d["real_fairness"]),
                   {k: MethodResult.from_dict(v) for k, v in d["methods"].items()},
                   d.get("n_train", 0), d.get("n_test", 0))

    def csv_rows(self):
        for name, res in self.methods.items():
            if res.error is not None:
                yield name, "error", "", "", "", res.error
                continue
            for section, key, value in res.fidelity.rows():
                yield name, "fidelity", key, section, "value", value
            for a, m, s in res.fairness.rows():
                yield name, "fairness", a, m, "mean", s.mean
                yield name, "fairness", a, m, "std", s.std
        for a, m, s in self.real_fairness.rows():
            yield "real", "fairness", a, m, "mean", s.mean
            yield "real", "fairness", a, m, "std", s.std
        for name, attrs in self.differences().items():
            for a, ms in attrs.items():
                for m, v in ms.items():
                    yield name, "abs_difference", a, m, "mean", v

    def to_csv(self) -> str:
        return rows_to_csv(["method", "kind", "attribute", "metric", "statistic", "value"],
                           self.csv_rows())

    def to_text(self) -> str:
        fid = {k: r.fidelity for k, r in self.methods.items() if r.fidelity is not None}
        parts = ["Fidelity", fidelity_text(fid), ""]
        diffs = self.differences()
        attrs = list(self.real_fairness.metrics)
        header = ["method"] + [f"{m}({a})" for a in attrs for m in FAIRNESS_METRICS]
        rows = [[name] + ["-" if d[a][m] is None else f"{d[a][m]:.3f}"
                          for a in attrs for m in FAIRNESS_METRICS]
                for name, d in diffs.items()]
        parts += ["|bootstrap mean (synthetic) - bootstrap mean (real)|",
                  render_table(header, rows), ""]
        fair = {"real": self.real_fairness}
        fair.update({k: r.fairness for k, r in self.methods.items() if r.fairness is not None})
        parts += ["Fairness", fairness_text(fair)]
        failed = {k: r.error for k, r in self.methods.items() if r.error is not None}
        if failed:
            parts += ["", "Failed methods"] + [f"  {k}: {e}" for k, e in failed.items()]
        return "\n".join(parts) + "\n"


def output_dir(config: ExperimentConfig) -> Path:
    spec = datasets.separation_spec(config.separation)
    return Path(config.output_dir) / config.dataset / (spec.name or Path(config.separation).stem)


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def run_experiment(config: ExperimentConfig, write: bool = True) -> AuditReport:
    """Run the audit; with ``write`` also emit every artefact under
    ``output_dir/<dataset>/<separation>/``."""
    disc, spec = config.validate()
    schema, table = load_csv(config.data_path(), disc)
    train, test = holdout_split(table, config.test_fraction, stage_seed(config.seed, "holdout"))
    internal, external = separate_columns(train, spec)
    label = schema.label
    features = [a for a in internal.attrs if a != label]
    clf = train_tree(internal, features, label, **config.classifier)
    real_fair = table_fairness(test, predict(clf, test), label, disc.protected,
                               disc.positive_label, n_boot=config.n_boot,
                               seed=stage_seed(config.seed, "bootstrap/real"))
    root = output_dir(config)
    n_synth = config.n_synth or test.n_rows

    def run_method(method: str) -> MethodResult:
        try:
            model = make_model(method, config, stage_seed(config.seed, f"fit/{method}"))
            model.fit(internal, external, spec.overlap)
            synth = model.sample(n_synth, stage_seed(config.seed, f"sample/{method}"))
            synth = synth.select(test.attrs)
            fid = fidelity_report(test, synth, tuple(disc.protected), label,
                                  discriminator=config.discriminator,
                                  seed=stage_seed(config.seed, f"discriminator/{method}"))
            fair = table_fairness(synth, predict(clf, synth), label, disc.protected,
                                  disc.positive_label, n_boot=config.n_boot,
                                  seed=stage_seed(config.seed, f"bootstrap/{method}"))
        except (ValueError, ArithmeticError, SchemaError) as exc:
            logger.error("method %s failed: %s", method, exc)
            return MethodResult(error=f"{type(exc).__name__}: {exc}")
        if write:
            d = root / method
            d.mkdir(parents=True, exist_ok=True)
            save_model(model, d / "model.json")
            write_csv(synth, d / "synthetic.csv")
            _write(d / "fidelity.json", to_json(fid.to_dict()) + "\n")
            _write(d / "fairness.json", to_json(fair.to_dict()) + "\n")
        return MethodResult(fid, fair)

    workers = min(n_threads(), len(config.methods))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_method, config.methods))
    else:
        results = [run_method(m) for m in config.methods]

    report = AuditReport(config.to_dict(), real_fair, dict(zip(config.methods, results)),
                         train.n_rows, test.n_rows)
    if write:
        root.mkdir(parents=True, exist_ok=True)
        _write(root / "real_fairness.json", to_json(real_fair.to_dict()) + "\n")
        _write(root / "report.json", to_json(report.to_dict()) + "\n")
        _write(root / "report.csv", report.to_csv())
        _write(root / "report.txt", report.to_text())
    return report


def load_report(path) -> AuditReport:
    with open(path, encoding="utf-8") as fh:
        return AuditReport.from_dict(json.load(fh))
