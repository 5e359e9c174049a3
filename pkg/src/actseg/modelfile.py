"""JSON model files for the three model families.

Floats are written with Python's shortest round-trip representation, so
loading a saved model reproduces every weight bit for bit.
"""

from __future__ import annotations

import json

import numpy as np

from . import crf, memm, phmm
from .features import FeatureConfig, FeatureIndex
from .seqdata import LabelAlphabet

FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


def model_to_dict(model) -> dict:
    doc = {"family": model.family, "version": FORMAT_VERSION,
           "alphabet": list(model.alphabet.names)}
    if isinstance(model, (crf.CrfModel, memm.MemmModel)):
        doc.update(features=model.features.to_dict(), index=model.index.to_dict(),
                   sigma=float(model.sigma), weights=[float(v) for v in model.weights])
    elif isinstance(model, phmm.PhmmModel):
        p = model.params
        doc.update(discretizer=model.discretizer.to_dict(), pi=p.pi.tolist(),
                   A=p.A.tolist(), B=p.B.tolist())
    else:
        raise TypeError(f"not a model: {type(model).__name__}")
    return doc


def model_from_dict(doc: dict):
    try:
        family = doc["family"]
        alphabet = LabelAlphabet(doc["alphabet"])
        if family in ("CRF", "MEMM"):
            features = FeatureConfig.from_dict(doc["features"])
            index = FeatureIndex.from_dict(doc["index"])
            cls = crf.CrfModel if family == "CRF" else memm.MemmModel
            return cls(np.array(doc["weights"], dtype=float), features, index, alphabet,
                       float(doc["sigma"]))
        if family == "PHMM":
            params = phmm.PhmmParams(np.array(doc["pi"]), np.array(doc["A"]), np.array(doc["B"]))
            params.check(atol=1e-9)
            return phmm.PhmmModel(params, phmm.DiscretizerConfig.from_dict(doc["discretizer"]),
                                  alphabet)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed model file: {exc}") from None
    raise ModelFileError(f"unknown model family {family!r}")


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFileError(f"{path}: {exc}") from None
    return model_from_dict(doc)


def segment(model, x, constraint=None) -> list:
    """Dispatch to the family's segmentation."""
    mod = {"CRF": crf, "MEMM": memm, "PHMM": phmm}[model.family]
    return mod.segment(model, x, constraint)
