"""JSON container for Gaussian and generalized PSD models.

Floats are written with their shortest round-trip repr, so loading a saved
model gives back bit-identical arrays.
"""
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from lib.errors import InvalidModelError
from lib.generalized_psd import GeneralizedPsdModel
from lib.psd_core import GaussianPsdModel

FORMAT = "psd-model/1"

Model = Union[GaussianPsdModel, GeneralizedPsdModel]


def model_to_dict(model: Model) -> Dict[str, Any]:
    if isinstance(model, GaussianPsdModel):
        return {
            "format": FORMAT,
            "kind": "gaussian",
            "order": model.order,
            "dim": model.dim,
            "groups": [list(g) for g in model.groups],
            "precision": model.precision.tolist(),
            "anchors": model.anchors.reshape(-1).tolist(),
            "weights": model.weights.reshape(-1).tolist(),
            "log_scale": model.log_scale,
        }
    if isinstance(model, GeneralizedPsdModel):
        entries = [
            {
                "i": i,
                "j": j,
                "C": float(model.log_scales[i, j]),
                "P": model.precisions[i, j].reshape(-1).tolist(),
                "center": model.centers[i, j].tolist(),
            }
            for i in range(model.order)
            for j in range(model.order)
        ]
        return {
            "format": FORMAT,
            "kind": "generalized",
            "order": model.order,
            "dim": model.dim,
            "groups": [list(g) for g in model.groups],
            "weights": model.weights.reshape(-1).tolist(),
            "jittered": model.jittered,
            "entries": entries,
        }
    raise InvalidModelError(f"Cannot serialize {type(model).__name__}")


def model_from_dict(doc: Dict[str, Any]) -> Model:
    if doc.get("format") != FORMAT:
        raise InvalidModelError(f"Unsupported model format {doc.get('format')!r}")
    M, d = int(doc["order"]), int(doc["dim"])
    groups = tuple((name, int(size)) for name, size in doc["groups"])
    weights = np.array(doc["weights"], dtype=float).reshape(M, M)
    if doc["kind"] == "gaussian":
        return GaussianPsdModel(
            anchors=np.array(doc["anchors"], dtype=float).reshape(M, d),
            precision=np.array(doc["precision"], dtype=float),
            weights=weights,
            groups=groups,
            log_scale=float(doc["log_scale"]),
        )
    if doc["kind"] == "generalized":
        log_scales = np.empty((M, M))
        precisions = np.empty((M, M, d, d))
        centers = np.empty((M, M, d))
        for entry in doc["entries"]:
            i, j = int(entry["i"]), int(entry["j"])
            log_scales[i, j] = float(entry["C"])
            precisions[i, j] = np.array(entry["P"], dtype=float).reshape(d, d)
            centers[i, j] = np.array(entry["center"], dtype=float)
        return GeneralizedPsdModel(
            weights=weights,
            log_scales=log_scales,
            precisions=precisions,
            centers=centers,
            groups=groups,
            jittered=bool(doc.get("jittered", False)),
        )
    raise InvalidModelError(f"Unknown model kind {doc['kind']!r}")


def dumps(model: Model) -> str:
    return json.dumps(model_to_dict(model), indent=1)


def loads(text: str) -> Model:
    try:
        return model_from_dict(json.loads(text))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, InvalidModelError):
            raise
        raise InvalidModelError(f"Malformed model document: {e}")


def atomic_write_text(path: Union[str, Path], text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: Model, path: Union[str, Path]) -> None:
    atomic_write_text(path, dumps(model))


def load_model(path: Union[str, Path]) -> Model:
    return loads(Path(path).read_text())
