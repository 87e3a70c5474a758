"""Run configuration: defaults, file parsing, validation, and hashing.

Config files are flat ``key = value`` (or ``key: value``) lines with
JSON-syntax values.  Unknown keys are rejected rather than ignored, so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math

from .errors import ValidationError

# short names accepted in config files alongside the field names
_ALIASES = {"r": "mask_ratio", "G": "group_size", "p": "patch_size"}


@dataclasses.dataclass
class RunConfig:
    # model and objective
    K: int = 4
    C: int = 256
    patch_size: int = 8
    input_size: tuple = (64, 64)
    mask_ratio: float = 0.9
    group_size: int = 8
    lambda_p: float = 1.0
    lambda_s: float = 0.25
    lambda_d: float = 0.5
    s: float = 20.0
    m: float = 0.5
    learning_rate: float = 5e-3
    batch_size: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    seed: int = 0
    presence_threshold: float = 0.001
    # training-loop knobs
    steps: int = 1000
    ckpt_every: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # behavior switches
    fixed_masks: bool = False
    detach_p_in_fill: bool = False
    decoder_pos_enc: bool = True
    loss_on_masked_only: bool = False
    entropy_per_pixel: bool = False
    # ablation switches: drop one constraint from the objective
    without_foreground: bool = False
    without_background: bool = False
    without_semantic: bool = False
    without_tv: bool = False
    without_entropy: bool = False

    @property
    def grid_size(self):
        """Feature-grid dims (H_F, W_F); equals the patch grid by construction."""
        return (self.input_size[0] // self.patch_size, self.input_size[1] // self.patch_size)

    @property
    def patch_dim(self):
        return 3 * self.patch_size * self.patch_size

    def validate(self):
        if self.K < 1:
            raise ValidationError(f"K must be >= 1, got {self.K}")
        if self.C < 1:
            raise ValidationError(f"C must be >= 1, got {self.C}")
        if self.C % 4:
            raise ValidationError(f"C must be divisible by 4 (position encodings), got {self.C}")
        if self.patch_size < 1:
            raise ValidationError(f"patch_size must be >= 1, got {self.patch_size}")
        if (len(self.input_size) != 2
                or any(not isinstance(v, int) or v < 1 for v in self.input_size)):
            raise ValidationError(f"input_size must be two positive integers, got {self.input_size!r}")
        for name, v in (("input_size height", self.input_size[0]), ("input_size width", self.input_size[1])):
            if v % self.patch_size:
                raise ValidationError(f"{name} ({v}) must be divisible by patch_size ({self.patch_size})")
        if min(self.grid_size) < 2:
            raise ValidationError(
                f"feature grid {self.grid_size} needs both dims >= 2; shrink patch_size or grow input_size")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValidationError(f"r must be in [0, 1], got {self.mask_ratio}")
        if self.group_size < 1:
            raise ValidationError(f"G must be >= 1, got {self.group_size}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.batch_size % self.group_size:
            raise ValidationError(
                f"batch_size ({self.batch_size}) must be divisible by G ({self.group_size})")
        for name in ("lambda_p", "lambda_s", "lambda_d"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.s <= 0:
            raise ValidationError(f"s must be > 0, got {self.s}")
        if not 0.0 <= self.m < math.pi / 2:
            raise ValidationError(f"m must be in [0, pi/2), got {self.m}")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ValidationError("encoder_layers and decoder_layers must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError(f"seed must be in [0, 2**64), got {self.seed}")
        if self.presence_threshold < 0:
            raise ValidationError(f"presence_threshold must be >= 0, got {self.presence_threshold}")
        if self.steps < 1:
            raise ValidationError(f"steps must be >= 1, got {self.steps}")
        if self.ckpt_every < 1:
            raise ValidationError(f"ckpt_every must be >= 1, got {self.ckpt_every}")
        if not 0.0 <= self.adam_beta1 < 1.0 or not 0.0 <= self.adam_beta2 < 1.0:
            raise ValidationError("adam_beta1 and adam_beta2 must be in [0, 1)")
        if self.adam_eps <= 0:
            raise ValidationError(f"adam_eps must be > 0, got {self.adam_eps}")
        return self

    def as_dict(self):
        out = dataclasses.asdict(self)
        out["input_size"] = list(self.input_size)
        return out

    def replace(self, **updates):
        return dataclasses.replace(self, **updates).validate()


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_INT_FIELDS = {name for name, f in _FIELDS.items() if f.type in ("int", int)}
_FLOAT_FIELDS = {name for name, f in _FIELDS.items() if f.type in ("float", float)}
_BOOL_FIELDS = {name for name, f in _FIELDS.items() if f.type in ("bool", bool)}


def _coerce(key, value):
    if key in _BOOL_FIELDS:
        if not isinstance(value, bool):
            raise ValidationError(f"{key} must be true or false, got {value!r}")
        return value
    if key in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{key} must be an integer, got {value!r}")
        return value
    if key in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{key} must be a number, got {value!r}")
        return float(value)
    if key == "input_size":
        if (not isinstance(value, list) or len(value) != 2
                or any(isinstance(v, bool) or not isinstance(v, int) for v in value)):
            raise ValidationError(f"input_size must be a two-integer list, got {value!r}")
        return tuple(value)
    raise ValidationError(f"unhandled config key {key!r}")


def config_from_dict(values):
    """Build a validated RunConfig from a plain mapping; unknown keys rejected."""
    kwargs = {}
    for key, value in values.items():
        key = _ALIASES.get(key, key)
        if key not in _FIELDS:
            raise ValidationError(f"unknown config key {key!r}")
        if key in kwargs:
            raise ValidationError(f"config key {key!r} given twice (alias collision)")
        kwargs[key] = _coerce(key, value)
    return RunConfig(**kwargs).validate()


def parse_config_text(text):
    """Parse flat key/value lines into a raw dict (values in JSON syntax)."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        for sep in ("=", ":"):
            if sep in line:
                key, _, raw = line.partition(sep)
                break
        else:
            raise ValidationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        raw = raw.strip()
        if not key or not raw:
            raise ValidationError(f"line {lineno}: expected 'key = value', got {line!r}")
        if key in values:
            raise ValidationError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {lineno}: value for {key!r} is not valid JSON: {raw!r}") from exc
    return values


def load_config(path):
    """Read and validate a config file; missing keys take defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return config_from_dict(parse_config_text(text))


def config_hash(config):
    """Stable hex digest of the full configuration."""
    canonical = json.dumps(config.as_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("ascii")).hexdigest()
