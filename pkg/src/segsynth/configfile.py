"""Plain-text key=value configuration documents.

One key per model/training field, ``#`` comments, blank lines ignored::

    # model
    resolution = 64x64
    latent_dim = 64
    variant = full
    order = torso,head,left_limb,right_limb,garment,accessory
    # training
    learning_rate = 5e-5
    batch_size = 24

Integer-tuple fields (channel widths, strides) are comma-separated. The
generation order is given as comma-separated class names. Unknown keys are
rejected by name.
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .core import ClassCatalog, GenerationOrder
from .networks import ModelConfig
from .training import TrainConfig

_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"catalog"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


class ConfigFileError(ValueError):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def read_config_file(path: str | Path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def apply_overrides(values: dict[str, str], overrides: list[str]) -> dict[str, str]:
    out = dict(values)
    for item in overrides:
        if "=" not in item:
            raise ConfigFileError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_bool(v: str) -> bool:
    if v.lower() in ("true", "1", "yes", "on"):
        return True
    if v.lower() in ("false", "0", "no", "off"):
        return False
    raise ConfigFileError(f"expected a boolean, got {v!r}")


def _parse_int_tuple(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(","))


def _parse_resolution(v: str) -> tuple[int, int]:
    h, _, w = v.partition("x")
    if not w:
        raise ConfigFileError(f"resolution must look like 64x64, got {v!r}")
    return int(h), int(w)


def build_model_config(
    values: dict[str, str], catalog: ClassCatalog, **extra
) -> ModelConfig:
    kwargs: dict = dict(extra)
    for key, raw in values.items():
        if key not in _MODEL_KEYS:
            continue
        if key == "resolution":
            kwargs[key] = _parse_resolution(raw)
        elif key in ("latent_dim", "embed_dim", "hidden_dim", "z_project_channels"):
            kwargs[key] = int(raw)
        elif key in (
            "context_channels",
            "context_strides",
            "mask_channels",
            "mask_strides",
            "decoder_channels",
            "decoder_strides",
        ):
            kwargs[key] = _parse_int_tuple(raw)
        elif key in ("use_spectral_norm", "use_instance_norm"):
            kwargs[key] = _parse_bool(raw)
        elif key == "order":
            kwargs[key] = GenerationOrder.from_names(
                [n.strip() for n in raw.split(",")], catalog
            ).sequence
        else:
            kwargs[key] = raw
    return ModelConfig(catalog=catalog, **kwargs)


def build_train_config(values: dict[str, str], **extra) -> TrainConfig:
    kwargs: dict = dict(extra)
    for key, raw in values.items():
        if key not in _TRAIN_KEYS:
            continue
        if key in ("batch_size", "max_steps", "seed", "eval_every"):
            kwargs[key] = int(raw)
        elif key == "order_mode":
            kwargs[key] = raw
        else:
            kwargs[key] = float(raw)
    return TrainConfig(**kwargs)


def check_known_keys(values: dict[str, str]) -> None:
    unknown = set(values) - _MODEL_KEYS - _TRAIN_KEYS
    if unknown:
        raise ConfigFileError(f"unknown config keys: {sorted(unknown)}")
