"""Command line interface.

Tables move between subcommands as canonical CSVs (category labels) with a
sidecar ``<stem>.schema.json`` holding the schema and fairness metadata
(label, favourable label, privileged groups).

Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import datasets
from .classifiers import predict, train_tree
from .latent import LatentNaiveBayes
from .metrics import (
    UndefinedMetricError,
    fairness_text,
    fidelity_report,
    fidelity_text,
    rows_to_csv,
    table_fairness,
    to_json,
)
from .pipeline import ExperimentConfig, load_report, make_model, output_dir, run_experiment
from .schema import Schema, SchemaError, holdout_split, load_csv, read_table, separate_columns, write_csv
from .serialization import load_classifier, model_from_dict, read, save_classifier, save_model

EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- sidecar schema documents ---------------------------------------------------

def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".schema.json")


def write_table(table, meta: dict, path) -> None:
    write_csv(table, path)
    doc = {"schema": table.schema.to_dict(), **meta}
    Path(sidecar(path)).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n",
                                   encoding="utf-8")


def read_table_doc(path, schema_path=None):
    """Return ``(table, meta)`` for a canonical CSV and its schema document."""
    schema_path = Path(schema_path) if schema_path else sidecar(path)
    if not schema_path.exists():
        raise FileNotFoundError(f"schema document {schema_path} not found (use --schema)")
    doc = json.loads(schema_path.read_text(encoding="utf-8"))
    schema = Schema.from_dict(doc["schema"])
    meta = {k: v for k, v in doc.items() if k != "schema"}
    return read_table(path, schema), meta


def _meta(disc) -> dict:
    return {"label": disc.label, "positive_label": disc.positive_label,
            "privileged": dict(disc.protected)}


def _print(text: str, out=None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- subcommands ----------------------------------------------------------------

def cmd_prepare(args):
    n = datasets.prepare(args.dataset, args.raw_dir, args.out)
    print(f"wrote {n} rows to {args.out}")


def cmd_ingest(args):
    disc = datasets.discretization_config(args.config)
    schema, table = load_csv(args.csv, disc)
    write_table(table, _meta(disc), args.out)
    print(f"{table.n_rows} rows x {len(schema.names)} attributes -> {args.out}")


def cmd_split(args):
    table, meta = read_table_doc(args.table, args.schema)
    train, test = holdout_split(table, args.test_fraction, args.seed)
    write_table(train, meta, args.train)
    write_table(test, meta, args.test)
    print(f"train {train.n_rows} rows -> {args.train}; test {test.n_rows} rows -> {args.test}")


def cmd_fit(args):
    table, meta = read_table_doc(args.train, args.schema)
    spec = datasets.separation_spec(args.separation)
    internal, external = separate_columns(table, spec)
    cfg = ExperimentConfig(dataset="", data="", discretization="", separation="",
                           smoothing=not args.no_smoothing,
                           latent={"k": args.k, "tol": args.tol, "max_iters": args.max_iter,
                                   "restarts": args.restarts})
    model = make_model(args.method, cfg, args.seed)
    model.fit(internal, external, spec.overlap)
    if isinstance(model, LatentNaiveBayes):
        if not model.converged_:
            logging.warning("EM did not converge within %d iterations", args.max_iter)
        print(f"K={args.k}: held-in log-likelihood {model.trace_[-1]:.6f} "
              f"after {model.n_iter_} iterations")
    save_model(model, args.out, meta={**meta, "separation": spec.to_dict()})
    print(f"{args.method} model -> {args.out}")


def cmd_sample(args):
    doc = read(args.model)
    model = model_from_dict(doc)
    meta = {k: v for k, v in doc.get("meta", {}).items() if k != "separation"}
    synth = model.sample(args.n, args.seed)
    write_table(synth, meta, args.out)
    print(f"{synth.n_rows} rows -> {args.out}")


def _align(real, synth):
    common = [a for a in real.attrs if a in synth.attrs]
    if not common:
        raise SchemaError("the two tables share no attributes")
    return real.select(common), synth.select(common)


def cmd_fidelity(args):
    real, meta = read_table_doc(args.real, args.schema)
    synth, _ = read_table_doc(args.synth, args.synth_schema)
    real, synth = _align(real, synth)
    disc = None
    if args.discriminator:
        disc = {"n_trees": args.n_trees, "n_seeds": args.n_seeds, "test_fraction": 0.3}
    label = meta.get("label") if meta.get("label") in real.attrs else None
    protected = [a for a in meta.get("privileged", {}) if a in real.attrs]
    rep = fidelity_report(real, synth, protected, label, discriminator=disc, seed=args.seed)
    if args.table:
        _print(fidelity_text({Path(args.synth).stem: rep}) + "\n", args.out)
    elif args.csv:
        _print(rows_to_csv(["metric", "key", "value"], rep.rows()), args.out)
    else:
        _print(to_json(rep.to_dict()) + "\n", args.out)


def cmd_fairness(args):
    table, meta = read_table_doc(args.table_csv, args.schema)
    if args.classifier:
        clf = load_classifier(args.classifier)
    elif args.train:
        train, _ = read_table_doc(args.train, args.train_schema)
        spec = datasets.separation_spec(args.separation)
        label = meta["label"]
        features = [a for a in train.schema.ordered(spec.internal) if a != label]
        clf = train_tree(train, features, label, max_depth=args.max_depth,
                         min_samples_leaf=args.min_samples_leaf)
        if args.save_classifier:
            save_classifier(clf, args.save_classifier)
    else:
        raise UsageError("give --classifier or --train with --separation")
    rep = table_fairness(table, predict(clf, table), meta["label"], meta["privileged"],
                         meta["positive_label"], n_boot=args.n_boot, seed=args.seed)
    if args.table:
        _print(fairness_text({Path(args.table_csv).stem: rep}) + "\n", args.out)
    else:
        _print(to_json(rep.to_dict()) + "\n", args.out)


def cmd_audit(args):
    config = ExperimentConfig.from_json(args.config)
    if args.output_dir:
        config.output_dir = args.output_dir
    if args.methods:
        config.methods = tuple(args.methods)
    if args.seed is not None:
        config.seed = args.seed
    if args.n_boot is not None:
        config.n_boot = args.n_boot
    if args.no_discriminator:
        config.discriminator = None
    report = run_experiment(config)
    print(report.to_text() if args.table else f"report -> {output_dir(config) / 'report.json'}")
    if any(r.error for r in report.methods.values()):
        return EXIT_NUMERIC
    return 0


def cmd_report(args):
    report = load_report(args.report)
    if args.csv:
        _print(report.to_csv(), args.out)
    else:
        _print(report.to_text(), args.out)


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fairsynth", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare", help="convert a raw benchmark dataset to a headered CSV")
    s.add_argument("dataset", choices=sorted(datasets.CONVERTERS))
    s.add_argument("--raw-dir", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("ingest", help="discretize a raw CSV into a canonical table")
    s.add_argument("csv")
    s.add_argument("--config", required=True, help="packaged dataset name or JSON path")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("split", help="seeded train/test holdout")
    s.add_argument("table")
    s.add_argument("--schema")
    s.add_argument("--test-fraction", type=float, default=0.3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("fit", help="separate a table by column and fit a joint model")
    s.add_argument("train")
    s.add_argument("--schema")
    s.add_argument("--separation", required=True)
    s.add_argument("--method", required=True,
                   choices=["indep_overlap", "marginal_internal", "marginal_external",
                            "latent_nb", "independent"])
    s.add_argument("--k", type=int, default=20)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=500)
    s.add_argument("--restarts", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-smoothing", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("sample", help="draw a synthetic table from a fitted model")
    s.add_argument("model")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("fidelity", help="fidelity of a synthetic table against a real one")
    s.add_argument("real")
    s.add_argument("synth")
    s.add_argument("--schema")
    s.add_argument("--synth-schema")
    s.add_argument("--discriminator", action="store_true", help="also compute DM")
    s.add_argument("--n-trees", type=int, default=100)
    s.add_argument("--n-seeds", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--table", action="store_true", help="aligned text table")
    s.add_argument("--csv", action="store_true", help="flat CSV")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fidelity)

    s = sub.add_parser("fairness", help="bootstrap fairness of a classifier on a table")
    s.add_argument("table_csv", metavar="table")
    s.add_argument("--schema")
    s.add_argument("--classifier", help="saved classifier JSON")
    s.add_argument("--train", help="train a tree on this table's internal attributes")
    s.add_argument("--train-schema")
    s.add_argument("--separation")
    s.add_argument("--max-depth", type=int, default=12)
    s.add_argument("--min-samples-leaf", type=int, default=5)
    s.add_argument("--save-classifier")
    s.add_argument("--n-boot", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--table", action="store_true", help="aligned text table")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fairness)

    s = sub.add_parser("audit", help="run a full experiment from a config")
    s.add_argument("--config", required=True, help="packaged experiment name or JSON path")
    s.add_argument("--output-dir")
    s.add_argument("--methods", nargs="+")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-boot", type=int)
    s.add_argument("--no-discriminator", action="store_true")
    s.add_argument("--table", action="store_true", help="print the report tables")
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("report", help="render a saved audit report")
    s.add_argument("report")
    s.add_argument("--table", action="store_true", help="aligned text tables (default)")
    s.add_argument("--csv", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (UndefinedMetricError, ArithmeticError) as exc:
        print(f"fairsynth: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"fairsynth: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, SchemaError, ValueError, KeyError) as exc:
        print(f"fairsynth: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
