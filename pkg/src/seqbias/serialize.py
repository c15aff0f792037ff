"""Versioned JSON checkpoints for sequence models.

JSON floats carry full double precision (repr round-trip), so a model
survives save/load bit-for-bit. The envelope is
``{format_version, model_kind, vocab, max_len, payload}``.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .dist import Vocab
from .errors import SerializationError
from .models import PositionalUnigramModel, RecurrentLM, SequenceModel, TabularMarkovModel

FORMAT_VERSION = 1


def model_to_dict(model: SequenceModel) -> dict:
    if isinstance(model, TabularMarkovModel):
        kind = "tabular"
        payload = {
            "order": model.order,
            "tables": [t.tolist() for t in model.tables],
        }
    elif isinstance(model, PositionalUnigramModel):
        kind = "unigram"
        payload = {"rows": model.rows.tolist()}
    elif isinstance(model, RecurrentLM):
        kind = "recurrent"
        payload = {
            "cell": model.cell,
            "hidden_dim": model.hidden_dim,
            "emb_dim": model.emb_dim,
            "params": {
                name: {"shape": list(t.shape), "data": t.ravel().tolist()}
                for name, t in sorted(model.params.items())
            },
        }
    else:
        raise SerializationError(f"cannot serialize model type {type(model).__name__}")
    return {
        "format_version": FORMAT_VERSION,
        "model_kind": kind,
        "vocab": list(model.vocab.tokens),
        "max_len": model.max_len,
        "payload": payload,
    }


def model_from_dict(doc: dict) -> SequenceModel:
    if not isinstance(doc, dict):
        raise SerializationError("checkpoint root must be a JSON object")
    try:
        version = doc["format_version"]
        kind = doc["model_kind"]
        vocab = Vocab(tuple(doc["vocab"]))
        max_len = int(doc["max_len"])
        payload = doc["payload"]
    except (KeyError, TypeError, ValueError) as e:
        raise SerializationError(f"malformed checkpoint envelope: {e}") from e
    if version != FORMAT_VERSION:
        raise SerializationError(
            f"unsupported checkpoint format_version {version!r} (this build reads {FORMAT_VERSION})"
        )
    try:
        if kind == "tabular":
            order = payload["order"]
            tables = [np.asarray(t, dtype=np.float64) for t in payload["tables"]]
            return TabularMarkovModel(vocab, max_len, tables, order)
        if kind == "unigram":
            return PositionalUnigramModel(vocab, max_len, np.asarray(payload["rows"], dtype=np.float64))
        if kind == "recurrent":
            params = {}
            for name, entry in payload["params"].items():
                t = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
                params[name] = t
            return RecurrentLM(
                vocab, max_len, payload["cell"], payload["hidden_dim"], payload["emb_dim"], params
            )
    except SerializationError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise SerializationError(f"malformed {kind} payload: {e}") from e
    raise SerializationError(f"unknown model_kind {kind!r}")


def save_model(model: SequenceModel, path: str | os.PathLike) -> None:
    doc = model_to_dict(model)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")
    os.replace(tmp, path)


def load_model(path: str | os.PathLike) -> SequenceModel:
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise SerializationError(f"cannot read checkpoint {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SerializationError(f"checkpoint {path} is not valid JSON (truncated?): {e}") from e
    return model_from_dict(doc)
