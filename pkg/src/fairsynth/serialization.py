"""JSON envelopes for fitted joint models and classifiers.

Floats are written with Python's shortest round-trip repr and empirical
tables as integer counts, so a save/load cycle reproduces every probability
bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

from .classifiers import CategoricalDecisionTree, CategoricalRandomForest
from .estimation import IndependenceGivenOverlap, IndependentModel, JointModel, MarginalPreservation
from .latent import LatentNaiveBayes

FORMAT = "fairsynth"
VERSION = 1

MODEL_TYPES = {
    cls.variant: cls
    for cls in (IndependenceGivenOverlap, MarginalPreservation, LatentNaiveBayes, IndependentModel)
}


CLASSIFIER_TYPES = {"tree": CategoricalDecisionTree, "forest": CategoricalRandomForest}


def envelope(kind: str, payload: dict, meta: dict | None = None) -> dict:
    doc = {"format": FORMAT, "version": VERSION, "kind": kind, "payload": payload}
    if meta:
        doc["meta"] = meta
    return doc


def open_envelope(doc: dict, kind: str | None = None) -> dict:
    if doc.get("format") != FORMAT:
        raise ValueError("not a fairsynth document")
    if kind is not None and doc.get("kind") != kind:
        raise ValueError(f"expected a {kind!r} document, got {doc.get('kind')!r}")
    return doc["payload"]


def model_to_dict(model: JointModel, meta: dict | None = None) -> dict:
    return envelope("joint_model", model.to_dict(), meta)


def model_from_dict(doc: dict) -> JointModel:
    payload = open_envelope(doc, "joint_model")
    try:
        cls = MODEL_TYPES[payload["variant"]]
    except KeyError:
        raise ValueError(f"unknown model variant {payload.get('variant')!r}") from None
    return cls.from_dict(payload)


def dump(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def save_model(model: JointModel, path, meta: dict | None = None) -> None:
    dump(model_to_dict(model, meta), path)


def load_model(path) -> JointModel:
    return model_from_dict(read(path))


def classifier_to_dict(clf) -> dict:
    kind = "forest" if isinstance(clf, CategoricalRandomForest) else "tree"
    return envelope("classifier", {"type": kind, **clf.to_dict()})


def classifier_from_dict(doc: dict):
    payload = open_envelope(doc, "classifier")
    return CLASSIFIER_TYPES[payload["type"]].from_dict(payload)


def save_classifier(clf, path) -> None:
    dump(classifier_to_dict(clf), path)


def load_classifier(path):
    return classifier_from_dict(read(path))
