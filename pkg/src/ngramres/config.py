"""Experiment configuration: flat ``key = value`` text with dotted sections.

Resolution order is defaults, then the config file, then command-line flags.
Every key has exactly one flag, ``--<key>``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import fields
from pathlib import Path

from .fusion import FusionConfig
from .neural_lm import NeuralLMConfig
from .trainer import TrainConfig

REPORT_DIR_ENV = "NGRAMRES_REPORT_DIR"


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


def _section(prefix: str, cls, skip=()) -> dict:
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        out[f"{prefix}.{f.name}"] = f.default if not callable(f.default_factory) else f.default_factory()
    return out


DEFAULTS: dict[str, object] = {
    "mode": "ngram_res",
    "seed": 0,
    "paths.train": "",
    "paths.valid": "",
    "paths.test": "",
    "paths.vocab": "",
    "paths.ngram": "",
    "paths.arpa": "",
    "paths.checkpoint": "",
    "paths.report_dir": "reports",
    "vocab.min_freq": 1,
    "ngram.order": 5,
    **_section("neural", NeuralLMConfig, skip=("seed",)),
    **_section("train", TrainConfig, skip=("seed", "mode", "fusion")),
    **_section("fusion", FusionConfig),
    "synth.vocab_size": 200,
    "synth.order": 2,
    "synth.num_sentences": 6000,
    "synth.sentence_len": 20,
    "synth.sharpness": 3.0,
    "synth.rank": 16,
    "domain.divergence": 1.0,
    "domain.num_sentences": 2500,
    "domain.ngram_order": 3,
    "eval.bins": 5,
    "eval.batch_size": 64,
    "sweep.epochs": 10,
    "sweep.grid": "0.05,0.1,0.2,0.3,0.5,1.0",
    "gradcheck.tolerance": 1e-4,
}

# keys that only locate outputs; they are excluded from the provenance hash
OUTPUT_ONLY = ("paths.report_dir",)


def _coerce(key: str, raw, default):
    if isinstance(raw, str) and not isinstance(default, str):
        text = raw.strip()
        try:
            if isinstance(default, bool):
                if text.lower() in ("true", "1", "yes"):
                    return True
                if text.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(text)
            if isinstance(default, int):
                return int(text)
            if isinstance(default, float):
                return float(text)
        except ValueError:
            raise ConfigError(key, f"cannot parse {raw!r} as {type(default).__name__}") from None
    if isinstance(default, float) and isinstance(raw, int) and not isinstance(raw, bool):
        return float(raw)
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines; ``[section]`` headers prefix following keys; ``#`` comments."""
    out: dict[str, object] = {}
    section = ""
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}", f"expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if section:
            key = f"{section}.{key}"
        if key not in DEFAULTS:
            raise ConfigError(key, f"unknown config key ({source}:{no})")
        out[key] = _coerce(key, value, DEFAULTS[key])
    return out


def resolve(file_path: str | None = None, overrides: dict | None = None) -> dict:
    cfg = dict(DEFAULTS)
    if file_path:
        p = Path(file_path)
        if not p.is_file():
            raise ConfigError("config", f"file not found: {file_path}")
        cfg.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    env_dir = os.environ.get(REPORT_DIR_ENV)
    if env_dir:
        cfg["paths.report_dir"] = env_dir
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(key, "unknown config key")
        cfg[key] = _coerce(key, value, DEFAULTS[key])
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    if cfg["mode"] not in ("vanilla", "ngram_res", "prob_inter"):
        raise ConfigError("mode", f"unknown mode {cfg['mode']!r}")
    for key in ("ngram.order", "synth.vocab_size", "synth.num_sentences", "synth.sentence_len", "eval.bins"):
        if cfg[key] < 1:
            raise ConfigError(key, f"must be >= 1, got {cfg[key]}")
    if not 0.0 <= cfg["domain.divergence"] <= 1.0:
        raise ConfigError("domain.divergence", "must lie in [0, 1]")
    sweep_grid(cfg)
    for name, build in (("neural", neural_config), ("train", train_config)):
        try:
            build(cfg).validate()
        except ValueError as e:
            raise ConfigError(name, str(e)) from None


def sweep_grid(cfg: dict) -> tuple[float, ...]:
    try:
        grid = tuple(float(x) for x in str(cfg["sweep.grid"]).split(",") if x.strip())
    except ValueError:
        raise ConfigError("sweep.grid", f"not a comma-separated list of numbers: {cfg['sweep.grid']!r}") from None
    if not grid or min(grid) < 0:
        raise ConfigError("sweep.grid", "needs at least one non-negative alpha")
    return grid


def _pick(cfg: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in cfg.items() if k.startswith(prefix + ".")}


def neural_config(cfg: dict) -> NeuralLMConfig:
    return NeuralLMConfig(seed=cfg["seed"], **_pick(cfg, "neural"))


def fusion_config(cfg: dict) -> FusionConfig:
    return FusionConfig(**_pick(cfg, "fusion"))


def train_config(cfg: dict, **changes) -> TrainConfig:
    base = dict(_pick(cfg, "train"), seed=cfg["seed"], mode=cfg["mode"], fusion=fusion_config(cfg))
    base.update(changes)
    return TrainConfig(**base)


def canonical(cfg: dict) -> str:
    return json.dumps({k: v for k, v in sorted(cfg.items()) if k not in OUTPUT_ONLY}, sort_keys=True)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()[:16]


def to_text(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        lines.append(f"{key} = {cfg[key]}")
    return "\n".join(lines) + "\n"
