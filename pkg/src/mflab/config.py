"""Flat ``key = value`` experiment configs.

Values are Python literals (numbers, booleans, strings, lists); anything
that is not a literal is kept as a bare string, so ``U = quadratic(1.0)``
works without quotes.  ``#`` starts a comment.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

# knobs that must be strictly positive whenever present
POSITIVE_KEYS = ("h", "t_end", "N", "M", "M_ref", "replicas", "dim", "record_every")
_BOOL = {"true": True, "false": False, "yes": True, "no": False}


def parse_value(text):
    text = text.strip()
    if text.lower() in _BOOL:
        return _BOOL[text.lower()]
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text, source="<string>"):
    """Parse config text into an ordered dict of typed values."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key.isidentifier():
            raise ConfigError(f"{source}:{lineno}: invalid key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 2024
    out: str = "results"
    plots: bool = True
    params: dict = field(default_factory=dict)
    source: str = "<string>"

    def get(self, key, default=None):
        return self.params.get(key, default)

    def __getitem__(self, key):
        if key not in self.params:
            raise ConfigError(f"{self.source}: missing key {key!r} for experiment {self.experiment!r}")
        return self.params[key]

    def __contains__(self, key):
        return key in self.params

    def echo(self):
        """Every setting as a flat dict, in a stable order."""
        head = {"experiment": self.experiment, "seed": self.seed, "plots": self.plots}
        return {**head, **{k: self.params[k] for k in sorted(self.params)}}


def _check_positive(key, value, source):
    vals = value if isinstance(value, (list, tuple)) else [value]
    for v in vals:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError(f"{source}: {key} must be positive, got {value!r}")


def make_config(values: dict, source="<string>", registry=None):
    values = dict(values)
    name = values.pop("experiment", None)
    if name is None:
        raise ConfigError(f"{source}: missing 'experiment'")
    if registry is not None and name not in registry:
        raise ConfigError(f"{source}: unknown experiment {name!r}")
    seed = values.pop("seed", 2024)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"{source}: seed must be a 64-bit unsigned integer")
    plots = values.pop("plots", True)
    out = values.pop("out", "results")
    for key in POSITIVE_KEYS:
        if key in values:
            _check_positive(key, values[key], source)
    return ExperimentConfig(str(name), seed, str(out), bool(plots), values, source)


def load_config(path, registry=None):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return make_config(parse_config_text(text, str(path)), str(path), registry)
