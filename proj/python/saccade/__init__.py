"""Python access to the saccade core.

Configs and reports travel as plain dicts; arrays are numpy.
"""

import json
from pathlib import Path

from . import _core
from ._core import (
    attention_comparisons,
    gen_shapes,
    load_checkpoint as _load_checkpoint,
    read_saccade_file,
    rollout,
    rollout_heat,
    topk_indices,
    write_saccade_file,
)

__all__ = [
    "attention_comparisons",
    "compare",
    "config_cost",
    "gen_shapes",
    "load_checkpoint",
    "load_config",
    "read_saccade_file",
    "rollout",
    "rollout_heat",
    "run_experiment",
    "topk_indices",
    "write_saccade_file",
]


def load_config(path):
    """Reads a run config and returns it with every default filled in."""
    return json.loads(_core.normalize_config(Path(path).read_text()))


def config_cost(config):
    return json.loads(_core.config_cost(json.dumps(config)))


def load_checkpoint(path):
    """Returns (tensors by name, config dict) of a checkpoint file."""
    tensors, config = _load_checkpoint(str(path))
    return tensors, json.loads(config)


def run_experiment(config, out_dir, data_dir=""):
    """Trains and tests one config; returns the test metrics."""
    return json.loads(_core.run_experiment(json.dumps(config), str(out_dir), str(data_dir)))


def compare(configs, out_dir, data_dir=""):
    return json.loads(_core.compare([json.dumps(c) for c in configs], str(out_dir), str(data_dir)))
