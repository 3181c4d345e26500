"""Run-directory persistence: checkpoint + vocab + catalog + config
snapshot, and reloading either model kind from a run directory."""

from __future__ import annotations

import dataclasses
import json
import os

from .data import StyleCatalog, Vocabulary
from .features import FeatureStore
from .generative import GenConfig, GenerativeModel
from .retrieval import RetrievalConfig, RetrievalModel

CHECKPOINT = "checkpoint.ckpt"
VOCAB = "vocab.json"
CATALOG = "catalog.tsv"
CONFIG = "config.json"


def _config_dict(cfg):
    d = dataclasses.asdict(cfg)
    d["modality_mask"] = sorted(d["modality_mask"])
    return d


def save_run(run_dir, model, kind, extra=None):
    """Write checkpoint, vocab, catalog, and a config snapshot."""
    os.makedirs(run_dir, exist_ok=True)
    cfg = _config_dict(model.cfg)
    snapshot = {"kind": kind, "model": cfg, **(extra or {})}
    snapshot["config_hash"] = model.store.config_hash(cfg)
    model.store.save(os.path.join(run_dir, CHECKPOINT), config=snapshot)
    model.vocab.save(os.path.join(run_dir, VOCAB))
    model.catalog.save(os.path.join(run_dir, CATALOG))
    with open(os.path.join(run_dir, CONFIG), "w") as f:
        json.dump(snapshot, f, indent=2, sort_keys=True)


def load_run(run_dir, features: FeatureStore):
    """Rebuild the model recorded in a run directory."""
    with open(os.path.join(run_dir, CONFIG)) as f:
        snapshot = json.load(f)
    vocab = Vocabulary.load_file(os.path.join(run_dir, VOCAB))
    catalog = StyleCatalog.load(os.path.join(run_dir, CATALOG))
    cfg_dict = dict(snapshot["model"])
    cfg_dict["modality_mask"] = frozenset(cfg_dict["modality_mask"])
    if snapshot["kind"] == "retrieval":
        model = RetrievalModel(RetrievalConfig(**cfg_dict), vocab, catalog,
                               features)
    elif snapshot["kind"] == "generative":
        model = GenerativeModel(GenConfig(**cfg_dict), vocab, catalog,
                                features)
    else:
        raise ValueError(f"unknown run kind {snapshot['kind']!r}")
    model.store.load(os.path.join(run_dir, CHECKPOINT))
    return model, snapshot


def init_from_pretrained(model: RetrievalModel, pretrain_dir):
    """Copy the pretrained candidate-encoder weights into both text
    encoders of a fresh retrieval model (shape-matching params only)."""
    import numpy as np
    from .params import ParameterStore
    src = ParameterStore(seed=0)
    manifest = ParameterStore.read_manifest(
        os.path.join(pretrain_dir, CHECKPOINT))
    # register matching shapes so the payloads can be read
    for name in manifest["names"]:
        src.add(name, manifest["shapes"][name], init="zeros")
    src.load(os.path.join(pretrain_dir, CHECKPOINT))
    copied = 0
    for name, tensor in src.items():
        if not name.startswith("response_encoder."):
            continue
        suffix = name[len("response_encoder."):]
        for prefix in ("dialogue_encoder.", "response_encoder."):
            target = prefix + suffix
            if target in model.store and \
                    model.store[target].shape == tensor.shape:
                model.store[target].data = np.array(tensor.data,
                                                    dtype=model.store.dtype)
                copied += 1
    model.store.bump_version()
    return copied
