"""Experiment configuration: TOML files -> fully resolved run settings.

Parsing is strict: unknown sections or keys are rejected by name, every
accepted config yields a complete :class:`ExperimentConfig`, and the
defaults that were filled in are reported so runs are auditable.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .augment import AugmentConfig
from .data import Dataset, gen_glyphs, load_idx
from .errors import FormatError
from .model import tiny_cnn, tiny_mlp
from .trainer import TrainConfig

_SCHEMA = {
    "data": {"source": "glyphs", "num_classes": 10, "train_size": 10000,
             "test_size": 2000, "image_size": 16, "noise": 0.2, "seed": 7,
             "train_images": "", "train_labels": "",
             "test_images": "", "test_labels": ""},
    "model": {"spec": "tinycnn", "split_index": 1, "widths": [16, 32, 64],
              "hidden": 32},
    "train": {"method": "ours", "single_da": "randaugment",
              "da_set": ["randaugment", "mixup", "cutmix"],
              "epochs": 10, "batch_size": 128, "base_lr": 0.05,
              "weight_decay": 5e-4, "momentum": 0.9,
              "beta_mode": "adaptive", "beta_fixed": 0.0,
              "beta_momentum": 0.9, "fair_budget": True,
              "drop_direct": False, "drop_kd": False, "drop_mutual": False,
              "eval_every": 1, "seed_init": 1, "seed_augment": 2,
              "seed_shuffle": 3},
    "augment": {"ra_num_ops": 1, "ra_magnitude": 6, "mixup_alpha": 1.0,
                "cutmix_alpha": 1.0, "base_preprocess": False},
    "protocol": {"runs": 3, "split_fraction": 0.8},
    "output": {"dir": "runs/default"},
}


@dataclass
class ExperimentConfig:
    train_cfg: TrainConfig
    data: dict
    protocol: dict
    output_dir: str
    defaults_applied: dict = field(default_factory=dict)


def _merged(raw: dict, path: str) -> tuple[dict, dict]:
    for section in raw:
        if section not in _SCHEMA:
            raise FormatError(f"{path}: unknown config section [{section}]")
        for key in raw[section]:
            if key not in _SCHEMA[section]:
                raise FormatError(f"{path}: unknown key '{section}.{key}'")
    resolved, defaults = {}, {}
    for section, keys in _SCHEMA.items():
        resolved[section] = {}
        for key, default in keys.items():
            if section in raw and key in raw[section]:
                resolved[section][key] = raw[section][key]
            else:
                resolved[section][key] = default
                defaults[f"{section}.{key}"] = default
    return resolved, defaults


def load_experiment(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        raise FormatError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise FormatError(f"{path}: invalid TOML: {e}")
    cfg, defaults = _merged(raw, str(path))

    d = cfg["data"]
    if d["source"] == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not d[key]:
                raise FormatError(f"{path}: data.{key} required for source 'idx'")
            if not os.path.exists(d[key]):
                raise FormatError(f"{path}: data.{key} path does not exist: {d[key]}")
    elif d["source"] != "glyphs":
        raise FormatError(f"{path}: data.source must be 'glyphs' or 'idx'")

    m = cfg["model"]
    if m["spec"] == "tinycnn":
        widths = tuple(int(w) for w in m["widths"])
        spec = tiny_cnn(in_ch=1, num_classes=int(d["num_classes"]),
                        image_size=int(d["image_size"]), widths=widths)
    elif m["spec"] == "tinymlp":
        in_dim = int(d["image_size"]) ** 2
        spec = tiny_mlp(in_dim, int(d["num_classes"]), hidden=int(m["hidden"]))
    else:
        raise FormatError(f"{path}: model.spec must be 'tinycnn' or 'tinymlp'")

    t = cfg["train"]
    a = cfg["augment"]
    aug = AugmentConfig(da_set=tuple(t["da_set"]),
                        ra_num_ops=int(a["ra_num_ops"]),
                        ra_magnitude=int(a["ra_magnitude"]),
                        mixup_alpha=float(a["mixup_alpha"]),
                        cutmix_alpha=float(a["cutmix_alpha"]),
                        base_preprocess=bool(a["base_preprocess"]))
    train_cfg = TrainConfig(
        model_spec=spec,
        method=t["method"],
        single_da=t["single_da"],
        da_set=tuple(t["da_set"]),
        split_index=int(m["split_index"]),
        epochs=int(t["epochs"]),
        batch_size=int(t["batch_size"]),
        base_lr=float(t["base_lr"]),
        weight_decay=float(t["weight_decay"]),
        momentum=float(t["momentum"]),
        beta_mode=t["beta_mode"],
        beta_fixed=float(t["beta_fixed"]),
        beta_momentum=float(t["beta_momentum"]),
        fair_budget=bool(t["fair_budget"]),
        augment=aug,
        drop_direct=bool(t["drop_direct"]),
        drop_kd=bool(t["drop_kd"]),
        drop_mutual=bool(t["drop_mutual"]),
        eval_every=int(t["eval_every"]),
        seed_init=int(t["seed_init"]),
        seed_augment=int(t["seed_augment"]),
        seed_shuffle=int(t["seed_shuffle"]),
    )
    return ExperimentConfig(train_cfg=train_cfg, data=d,
                            protocol=cfg["protocol"],
                            output_dir=cfg["output"]["dir"],
                            defaults_applied=defaults)


def load_datasets(ec: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = ec.data
    if d["source"] == "idx":
        return (load_idx(d["train_images"], d["train_labels"]),
                load_idx(d["test_images"], d["test_labels"]))
    train = gen_glyphs(int(d["num_classes"]), int(d["train_size"]),
                       int(d["image_size"]), float(d["noise"]),
                       int(d["seed"]))
    test = gen_glyphs(int(d["num_classes"]), int(d["test_size"]),
                      int(d["image_size"]), float(d["noise"]),
                      int(d["seed"]) + 1)
    return train, test
