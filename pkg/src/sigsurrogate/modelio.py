"""Saving and loading trained surrogates as JSON documents."""

import json
from pathlib import Path

from .gbt import GbtModel
from .nn import NnModel

_KINDS = {"nn": NnModel, "gbt": GbtModel}


def model_to_json(model) -> str:
    # repr-precision floats, sorted keys: identical models give identical bytes
    return json.dumps(model.to_dict(), sort_keys=True) + "\n"


def save_model(model, path) -> None:
    Path(path).write_text(model_to_json(model))


def load_model(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not a JSON model document ({exc})") from None
    kind = doc.get("kind")
    if kind not in _KINDS:
        raise ValueError(f"{path}: unknown model kind {kind!r}")
    return _KINDS[kind].from_dict(doc)
