"""Experiment configuration files (JSON, versioned)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .model import ModelConfig, ModelWeights, init_random, load_weights, parse_token_ids, tokens_from_bytes
from .transition import TransitionParams

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class PromptSource:
    """Exactly one of ``ids``, ``text`` or ``random`` (``{"length", "seed"}``)."""

    ids: Optional[list[int]] = None
    text: Optional[str] = None
    id_text: Optional[str] = None
    random: Optional[dict[str, int]] = None

    def __post_init__(self):
        given = [k for k in ("ids", "text", "id_text", "random") if getattr(self, k) is not None]
        if len(given) != 1:
            raise ConfigError(f"prompt needs exactly one of ids/text/id_text/random, got {given or 'none'}")
        if self.random is not None and set(self.random) != {"length", "seed"}:
            raise ConfigError("random prompt needs exactly 'length' and 'seed'")

    def tokens(self, vocab_size: int) -> list[int]:
        if self.ids is not None:
            return list(self.ids)
        if self.text is not None:
            return tokens_from_bytes(self.text)
        if self.id_text is not None:
            return parse_token_ids(self.id_text)
        rng = np.random.default_rng(self.random["seed"])
        return rng.integers(0, vocab_size, self.random["length"]).tolist()

    def to_dict(self) -> dict[str, Any]:
        return {k: v for k, v in vars(self).items() if v is not None}


@dataclass
class ExperimentConfig:
    """Everything one subcommand needs.

    ``model`` is either ``{"config": {...ModelConfig...}}`` or
    ``{"path": "weights.atnt"}`` (relative paths resolve against the config
    file's directory).
    """

    model: dict[str, Any]
    prompt: Optional[PromptSource] = None
    transition: Optional[TransitionParams] = None
    start_interval: int = 3
    n_new: int = 16
    grid: Optional[dict[str, list]] = None
    max_cells: int = 512
    levels: Optional[list[float]] = None
    mass_levels: Optional[list[float]] = None
    rescale: list[bool] = field(default_factory=lambda: [True])
    skip_first_layer: bool = True
    k: int = 5
    decay: Optional[dict[str, Any]] = None
    version: int = CONFIG_VERSION
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        if not isinstance(self.model, dict) or len(self.model) != 1 or not ({"config", "path"} & set(self.model)):
            raise ConfigError("model must have exactly one of 'config' or 'path'")
        if self.levels is not None and self.mass_levels is not None:
            raise ConfigError("give at most one of 'levels' and 'mass_levels'")
        if self.grid is not None:
            unknown = set(self.grid) - {"alpha", "beta", "lay"}
            if unknown:
                raise ConfigError(f"grid keys must be alpha/beta/lay, got {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: Path = Path(".")) -> "ExperimentConfig":
        d = dict(d)
        if "version" not in d:
            raise ConfigError("config is missing the required 'version' field")
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if d.get("prompt") is not None:
                d["prompt"] = PromptSource(**d["prompt"])
            if d.get("transition") is not None:
                d["transition"] = TransitionParams.from_dict(d["transition"])
            if isinstance(d.get("rescale"), bool):
                d["rescale"] = [d["rescale"]]
            return cls(base_dir=base_dir, **d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for name in self.__dataclass_fields__:
            if name == "base_dir":
                continue
            v = getattr(self, name)
            if isinstance(v, (PromptSource, TransitionParams)):
                v = v.to_dict()
            out[name] = v
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def model_config(self, seed: Optional[int] = None) -> ModelConfig:
        if "config" not in self.model:
            raise ConfigError("this command needs an inline model config, not a weight file")
        try:
            cfg = dict(self.model["config"])
            if seed is not None:
                cfg["rng_seed"] = seed
            return ModelConfig.from_dict(cfg)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad model config: {exc}") from None

    def load_model(self, seed: Optional[int] = None) -> ModelWeights:
        if "path" in self.model:
            if seed is not None:
                raise ConfigError("--seed cannot override a model loaded from a weight file")
            path = self.base_dir / self.model["path"]
            if not path.exists():
                raise ConfigError(f"weight file {path} does not exist")
            return load_weights(path)
        return init_random(self.model_config(seed))

    def prompt_tokens(self, vocab_size: int) -> list[int]:
        if self.prompt is None:
            raise ConfigError("this command needs a 'prompt'")
        return self.prompt.tokens(vocab_size)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return ExperimentConfig.from_dict(raw, base_dir=path.parent)
