"""JSON checkpoints: vocabulary, encoder settings, architecture and a base64 float64 parameter blob."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from cdkit.textmodel.neural import TinyNeuralLM
from cdkit.textmodel.tabular import TabularSoftmaxModel
from cdkit.textmodel.vocab import ContextEncoder, Encoded, Vocab

FORMAT = "cdkit-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack(params: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(params, dtype="<f8").tobytes()).decode("ascii")


def _unpack(blob: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(blob), dtype="<f8").astype(np.float64)


def checkpoint_dict(model, encoder: ContextEncoder, meta: dict | None = None) -> dict:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "vocab": encoder.vocab.itos,
        "max_len": encoder.max_len,
        "hyper": model.hyperparameters(),
        "n_params": model.n_params,
        "params": _pack(model.params),
        "meta": meta or {},
    }
    if model.kind == "tabular":
        doc["contexts"] = model.contexts
        doc["responses"] = [{"key": r.key, "ids": list(r.ids)} for r in model.responses]
    return doc


def save_checkpoint(path, model, encoder: ContextEncoder, meta: dict | None = None) -> None:
    text = json.dumps(checkpoint_dict(model, encoder, meta), ensure_ascii=False, sort_keys=True, indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_checkpoint(path, with_meta: bool = False):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT or "version" not in doc:
        raise CheckpointError(f"{path}: not a cdkit checkpoint")
    if doc["version"] != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc['version']}")
    encoder = ContextEncoder(Vocab(doc["vocab"]), max_len=doc["max_len"])
    params = _unpack(doc["params"])
    if doc["kind"] == "tabular":
        responses = [Encoded(r["key"], tuple(r["ids"])) for r in doc["responses"]]
        model = TabularSoftmaxModel(doc["contexts"], responses, params, **doc["hyper"])
    elif doc["kind"] == "neural":
        model = TinyNeuralLM(params=params, **doc["hyper"])
    else:
        raise CheckpointError(f"{path}: unknown model kind {doc['kind']!r}")
    if with_meta:
        return model, encoder, doc.get("meta", {})
    return model, encoder
