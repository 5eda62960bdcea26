"""JSON configuration file handling for the CLI.

The file holds up to four sections, "gen", "train", "integrator", and
"model", each mirroring the corresponding config dataclass. Every key is
optional; missing keys take the dataclass defaults. Unknown sections or keys
are rejected so typos cannot silently fall back to defaults.
"""

import dataclasses
import json

from .errors import BadConfigError
from .inference import IntegratorConfig
from .nn import ModelConfig
from .synthdata import GenConfig
from .training import TrainConfig

SECTIONS = ("gen", "train", "integrator", "model")

_TUPLE_FIELDS = {
    "gen": ("categories",),
    "train": ("loss_weights",),
    "integrator": (),
    "model": (),
}

_CLASSES = {
    "gen": GenConfig,
    "train": TrainConfig,
    "integrator": IntegratorConfig,
    "model": ModelConfig,
}


def load_config_file(path):
    """Parse and structurally check a config file; returns the raw dict."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise BadConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise BadConfigError("config file must hold a JSON object")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise BadConfigError(f"unknown config sections: {sorted(unknown)}")
    for name in raw:
        if not isinstance(raw[name], dict):
            raise BadConfigError(f"config section {name!r} must be an object")
    return raw


def build_section(raw, name, seed=None, extra_defaults=None):
    """Instantiate one config dataclass from the raw dict.

    seed, when given, overrides the section's own seed key; extra_defaults
    fill fields the file leaves unset (used for derived defaults such as the
    category count).
    """
    cls = _CLASSES[name]
    data = dict(raw.get(name, {}))
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - valid
    if unknown:
        raise BadConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    for key in _TUPLE_FIELDS[name]:
        if key in data:
            if not isinstance(data[key], (list, tuple)):
                raise BadConfigError(f"{name}.{key} must be a list")
            data[key] = tuple(data[key])
    for key, value in (extra_defaults or {}).items():
        if key in valid:
            data.setdefault(key, value)
    if seed is not None and "seed" in valid:
        data["seed"] = seed
    try:
        cfg = cls(**data)
        cfg.validate()
    except BadConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise BadConfigError(f"bad config in section {name!r}: {e}") from e
    return cfg
