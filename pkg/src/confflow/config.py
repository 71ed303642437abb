"""Run configuration files.

Top-level keys are the training hyperparameter table rows in snake_case; the
``runtime`` object holds the desk-scale knobs that table does not fix (step
count, seed, widths, split fractions, ODE steps).
"""

import json
from dataclasses import dataclass
from importlib import resources

from .equinet import ModelConfig
from .flowrt import TrainConfig

PRESETS = ("single_conformation", "multi_conformation", "toy")

_TABLE_KEYS = {
    "number_of_transformer_blocks": int,
    "maximum_degree": None,
    "sigma_of_cfm": float,
    "remove_hydrogen": bool,
    "optimizer": str,
    "flow_matcher": str,
    "train_batch_size": int,
    "eval_batch_size": int,
    "learning_rate": float,
    "weight_decay": float,
    "sample_coefficient": int,
    "maximum_number_of_conformations": int,
    "rmsd_threshold_for_coverage": float,
}
_DEFAULTS = {
    "sample_coefficient": 2,
    "maximum_number_of_conformations": 20,
    "rmsd_threshold_for_coverage": 0.5,
}
_RUNTIME_DEFAULTS = {
    "steps": 500,
    "seed": 0,
    "channels": 8,
    "hidden": 32,
    "eval_every": 50,
    "ode_steps": 50,
    "split": [0.8, 0.1, 0.1],
}


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    model: ModelConfig
    train: TrainConfig
    remove_hydrogen: bool
    sample_coefficient: int
    delta: float
    ode_steps: int
    split: tuple

    def to_dict(self):
        return json.loads(json.dumps(self.raw))


def _max_degree(value):
    if isinstance(value, list):
        if len(value) != 1:
            raise ValueError("maximum_degree must hold a single degree")
        value = value[0]
    if not isinstance(value, int):
        raise ValueError("maximum_degree must be an integer")
    return value


def parse_config(raw):
    if not isinstance(raw, dict):
        raise ValueError("config must be a JSON object")
    unknown = set(raw) - set(_TABLE_KEYS) - {"runtime"}
    if unknown:
        raise ValueError(f"unknown config key(s): {sorted(unknown)}")
    cfg = dict(_DEFAULTS)
    cfg.update(raw)
    missing = [k for k in _TABLE_KEYS if k not in cfg]
    if missing:
        raise ValueError(f"missing config key(s): {missing}")
    if cfg["optimizer"] != "AdamW":
        raise ValueError(f"only the AdamW optimizer is implemented, got {cfg['optimizer']!r}")
    rt = dict(_RUNTIME_DEFAULTS)
    extra = set(raw.get("runtime", {})) - set(_RUNTIME_DEFAULTS)
    if extra:
        raise ValueError(f"unknown runtime key(s): {sorted(extra)}")
    rt.update(raw.get("runtime", {}))
    model = ModelConfig(
        l_max=_max_degree(cfg["maximum_degree"]),
        channels=int(rt["channels"]),
        num_blocks=int(cfg["number_of_transformer_blocks"]),
        hidden=int(rt["hidden"]),
    )
    train = TrainConfig(
        learning_rate=float(cfg["learning_rate"]),
        weight_decay=float(cfg["weight_decay"]),
        train_batch_size=int(cfg["train_batch_size"]),
        eval_batch_size=int(cfg["eval_batch_size"]),
        max_conformers=int(cfg["maximum_number_of_conformations"]),
        sigma=float(cfg["sigma_of_cfm"]),
        steps=int(rt["steps"]),
        seed=int(rt["seed"]),
        flow_matcher=cfg["flow_matcher"],
        eval_every=int(rt["eval_every"]),
    )
    split = None if rt["split"] is None else tuple(float(f) for f in rt["split"])
    full = dict(cfg)
    full["runtime"] = rt
    return RunConfig(
        full, model, train, bool(cfg["remove_hydrogen"]), int(cfg["sample_coefficient"]),
        float(cfg["rmsd_threshold_for_coverage"]), int(rt["ode_steps"]), split,
    )


def load_config(path):
    with open(path) as fh:
        return parse_config(json.load(fh))


def preset(name):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("confflow").joinpath("configs", f"{name}.json").read_text()
    return parse_config(json.loads(text))
