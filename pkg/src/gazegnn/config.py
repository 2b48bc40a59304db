"""Run configuration: flat ``key=value`` files with dotted namespaces plus flag overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthConfig
from .model import PRESETS, ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    n: int = 300
    size: int = 64
    test_frac: float = 0.2
    val_frac: float = 0.1


@dataclass
class BenchConfig:
    image_size: int = 3000
    n_fixations: int = 1000
    sigma: float = 150.0
    reps: int = 10
    warmups: int = 3
    model_size: int = 224
    patch_size: int = 16
    embed_dim: int = 64


# training defaults for the desk-scale synthetic experiments (TrainConfig keeps lr 1e-4)
DESK_TRAIN = TrainConfig(lr=3e-3, epochs=40)

# short names accepted in config files, mapped to (section, field)
ALIASES = {
    "gaze.enabled": ("model", "gaze_enabled"),
    "gaze.raw_durations": ("model", "raw_durations"),
    "knn.k": ("model", "k"),
    "knn.lambda": ("model", "pos_weight"),
    "knn.block_lambda": ("model", "block_pos_weight"),
    "knn.dynamic": ("model", "dynamic_knn"),
    "model.L": ("model", "n_blocks"),
    "model.D": ("model", "embed_dim"),
    "model.S": ("model", "patch_size"),
}


@dataclass
class RunConfig:
    seed: int = 0
    preset: str = "desk"
    model: ModelConfig = field(default_factory=lambda: PRESETS["desk"])
    train: TrainConfig = field(default_factory=lambda: dataclasses.replace(DESK_TRAIN))
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"]["seed"] = self.seed
        return d

    def flat(self) -> dict[str, object]:
        out: dict[str, object] = {"seed": self.seed, "model.preset": self.preset}
        for section in ("model", "train", "data", "synth", "bench"):
            for k, v in dataclasses.asdict(getattr(self, section)).items():
                if section == "train" and k == "seed":
                    continue
                out[f"{section}.{k}"] = list(v) if isinstance(v, tuple) else v
        return out

    def hash(self) -> str:
        blob = json.dumps(self.flat(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def provenance(self) -> dict:
        return {"config_hash": self.hash(), "seed": self.seed, "config": self.flat()}

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)

    def synth_config(self) -> SynthConfig:
        return dataclasses.replace(self.synth, size=self.data.size)


def _coerce(raw: str, current):
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        parts = [p for p in raw.replace("(", "").replace(")", "").replace("[", "").replace("]", "").split(",") if p.strip()]
        if len(parts) != len(current):
            raise ConfigError(f"expected {len(current)} comma-separated values, got {raw!r}")
        return tuple(_coerce(p, c) for p, c in zip(parts, current))
    return raw.strip()


def apply_override(cfg: RunConfig, key: str, raw: str) -> RunConfig:
    key = key.strip()
    if key == "seed":
        return dataclasses.replace(cfg, seed=int(raw))
    if key == "model.preset":
        name = raw.strip()
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return dataclasses.replace(cfg, preset=name, model=PRESETS[name])
    section, _, name = key.partition(".")
    if key in ALIASES:
        section, name = ALIASES[key]
    if section not in ("model", "train", "data", "synth", "bench") or not name:
        raise ConfigError(f"unknown config key {key!r}")
    obj = getattr(cfg, section)
    names = {f.name for f in dataclasses.fields(obj)}
    if name not in names or (section == "train" and name == "seed"):
        raise ConfigError(f"unknown config key {key!r}")
    try:
        value = _coerce(raw, getattr(obj, name))
        new = dataclasses.replace(obj, **{name: value})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None
    return dataclasses.replace(cfg, **{section: new})


def parse_pairs(text: str, source: str = "<config>") -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def load_config(path=None, overrides: list[tuple[str, str]] | None = None) -> RunConfig:
    """Defaults, then the file, then overrides. ``model.preset`` is applied first so field keys refine it."""
    pairs: list[tuple[str, str]] = []
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        pairs += parse_pairs(p.read_text(), str(p))
    pairs += overrides or []
    cfg = RunConfig()
    presets = [kv for kv in pairs if kv[0] == "model.preset"]
    if presets:
        cfg = apply_override(cfg, *presets[-1])
    for k, v in pairs:
        if k != "model.preset":
            cfg = apply_override(cfg, k, v)
    return cfg


def config_from_provenance(prov: dict) -> RunConfig:
    flat = prov["config"]
    pairs = [(k, json.dumps(v) if isinstance(v, list) else str(v)) for k, v in flat.items()]
    return load_config(overrides=pairs)
