"""Emotional voice conversion toward unseen speaker-emotion pairs, on a synthetic corpus."""

import json

import torch  # noqa: F401  (loads libtorch before the extension)

from ._core import (
    Catalog,
    Corpus,
    EvcError,
    GateError,
    anneal_weight,
    build_catalog,
    fpm_mask,
    generate_corpus,
    load_corpus,
    sample_vdp_targets,
)
from . import _core

__all__ = [
    "Catalog",
    "Corpus",
    "EvcError",
    "GateError",
    "anneal_weight",
    "build_catalog",
    "convert",
    "default_config",
    "evaluate",
    "fpm_mask",
    "generate_corpus",
    "load_corpus",
    "sample_vdp_targets",
    "train",
]


def default_config():
    """Flat dotted-key configuration with every default filled in."""
    return json.loads(_core.default_config_json())


def resolve_config(overrides=None, ablation="full"):
    config = default_config()
    for key, value in (overrides or {}).items():
        if key not in config:
            raise EvcError(f"unknown config key '{key}'")
        config[key] = value
    return json.loads(_core.resolve_config_json(json.dumps(config), ablation))


def train(corpus, overrides=None, ablation="full", run_dir="", stop_after=-1, resume=False):
    """Train on `corpus`; returns step, per-step metric history and checkpoint path."""
    config = resolve_config(overrides, ablation)
    return _core.train(corpus, json.dumps(config), run_dir, stop_after, resume)


def convert(checkpoint, features, speaker, emotion, seed=0):
    """Convert one [bins, frames] feature array to (speaker, emotion) with mapped styles."""
    return _core.convert(str(checkpoint), features, speaker, emotion, seed)


def evaluate(corpus, checkpoint, sources_per_cell=12, seed=31):
    return _core.evaluate(corpus, str(checkpoint), sources_per_cell, seed)
