"""Versioned binary checkpoint container.

Layout: 8-byte magic, uint32 format version, uint64 header length, JSON
header (vocabulary, per-model hyperparameters, stage tag, config snapshot,
tensor directory), raw little-endian float64 tensor payloads in directory
order, then a sha256 hex digest of everything before it.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .autodiff import Tensor
from .data import SPECIAL_TOKENS, Vocab

MAGIC = b"RSTYCKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path: str, vocab: Vocab, tensors: dict[str, Tensor],
                    hyperparams: dict, stage: str,
                    config: dict | None = None) -> None:
    names = list(tensors.keys())
    header = {
        "vocab": vocab.id_to_token[len(SPECIAL_TOKENS):],
        "hyperparams": hyperparams,
        "stage": stage,
        "config": config,
        "tensors": [{"name": n, "shape": list(tensors[n].values.shape)}
                    for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    digest = hashlib.sha256()
    with open(path, "wb") as fh:
        for chunk in (MAGIC, struct.pack("<I", VERSION),
                      struct.pack("<Q", len(blob)), blob):
            fh.write(chunk)
            digest.update(chunk)
        for n in names:
            raw = np.ascontiguousarray(tensors[n].values,
                                       dtype="<f8").tobytes()
            fh.write(raw)
            digest.update(raw)
        fh.write(digest.hexdigest().encode("ascii"))


def load_checkpoint(path: str) -> dict:
    """Returns {vocab, hyperparams, stage, config, tensors: dict[str, array]}.

    Raises CheckpointError on a bad magic, unsupported version, or checksum
    mismatch (corruption).
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 84 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    (version,) = struct.unpack("<I", data[8:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    body, stored = data[:-64], data[-64:]
    if hashlib.sha256(body).hexdigest().encode("ascii") != stored:
        raise CheckpointError(f"{path}: integrity check failed (corrupt container)")
    (hlen,) = struct.unpack("<Q", data[12:20])
    header = json.loads(data[20:20 + hlen].decode("utf-8"))
    offset = 20 + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        raw = data[offset:offset + 8 * count]
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        offset += 8 * count
    vocab = Vocab(header["vocab"], {})
    return {"vocab": vocab, "hyperparams": header["hyperparams"],
            "stage": header["stage"], "config": header["config"],
            "tensors": tensors}


def _load_into(params: dict[str, Tensor], tensors: dict[str, np.ndarray],
               path: str) -> None:
    for name, tensor in params.items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name}")
        if tensors[name].shape != tensor.values.shape:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {tensors[name].shape}, "
                f"expected {tensor.values.shape}")
        tensor.values[...] = tensors[name]


def save_models(path: str, models: dict, stage: str,
                config: dict | None = None) -> None:
    """Persist several named models sharing one vocabulary."""
    vocab = next(iter(models.values())).vocab
    tensors: dict[str, Tensor] = {}
    hyperparams = {}
    for key, model in models.items():
        hyperparams[key] = model.hyperparams()
        tensors.update(model.params())
    save_checkpoint(path, vocab, tensors, hyperparams, stage, config)


def load_models(path: str) -> dict:
    """Rebuild the models stored by save_models.

    Returns {vocab, stage, config, models: {key: model}}.
    """
    from .models import (GeneratorModel, NaturalnessDiscriminator, NeuralLM,
                         StyleClassifier)

    payload = load_checkpoint(path)
    vocab = payload["vocab"]
    builders = {
        "generator": lambda hp: GeneratorModel(
            vocab, embed_dim=hp["embed_dim"], hidden_dim=hp["hidden_dim"],
            max_len_slack=hp["max_len_slack"]),
        "classifier": lambda hp: StyleClassifier(
            vocab, embed_dim=hp["embed_dim"], filters=hp["filters"],
            widths=tuple(hp["widths"]),
            inter_dim=hp["inter_dim"]),
        "discriminator": lambda hp: NaturalnessDiscriminator(
            vocab, embed_dim=hp["embed_dim"], hidden_dim=hp["hidden_dim"]),
        "lm": lambda hp: NeuralLM(
            vocab, embed_dim=hp["embed_dim"], hidden_dim=hp["hidden_dim"]),
    }
    models = {}
    for key, hp in payload["hyperparams"].items():
        if key not in builders:
            raise CheckpointError(f"{path}: unknown model kind {key}")
        model = builders[key](hp)
        if key == "lm":
            model.fingerprint = hp.get("fingerprint", "")
        _load_into(model.params(), payload["tensors"], path)
        models[key] = model
    return {"vocab": vocab, "stage": payload["stage"],
            "config": payload["config"], "models": models}
