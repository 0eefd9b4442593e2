"""
Strict conversion between configuration dataclasses and JSON files.

Unknown keys are rejected at every nesting level, tuple fields are restored
from JSON lists, and command-line overrides are applied by dotted path.
"""

import dataclasses
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Type, TypeVar, Union, get_args, get_origin

from ..errors import ConfigError
from .sections import RunConfig

T = TypeVar("T")

CHECKPOINT_ROOT_ENV = "STEMDIFF_CHECKPOINT_ROOT"


def config_to_dict(config: Any) -> Dict[str, Any]:
    """Convert a config dataclass tree to JSON-compatible dictionaries."""
    def convert(value):
        if dataclasses.is_dataclass(value):
            return {f.name: convert(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, (list, tuple)):
            return [convert(v) for v in value]
        return value
    return convert(config)


def _coerce(value: Any, annotation: Any, path: str) -> Any:
    if dataclasses.is_dataclass(annotation):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
        return config_from_dict(annotation, value, path)

    origin = get_origin(annotation)
    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        args = get_args(annotation)
        item_type = args[0] if args else Any
        return tuple(_coerce(v, item_type, f"{path}[{i}]") for i, v in enumerate(value))

    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def config_from_dict(cls: Type[T], data: Dict[str, Any], path: str = "") -> T:
    """Build `cls` from a dictionary, rejecting keys the dataclass does not declare."""
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key(s): {', '.join(where + k for k in unknown)}")

    kwargs = {}
    for name, value in data.items():
        field_path = f"{path}.{name}" if path else name
        kwargs[name] = _coerce(value, known[name].type, field_path)
    return cls(**kwargs)


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """
    Apply `section.key=value` overrides to a config dictionary in place.

    Values are parsed as JSON literals, falling back to plain strings, so
    `ldm.lr=1e-4`, `dataset.tags=["a","b"]` and `sampler.method=ddpm` all work.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = data
        for i, key in enumerate(keys[:-1]):
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"unknown config key: {'.'.join(keys[:i + 1])}")
            node = node[key]
        if not isinstance(node, dict) or keys[-1] not in node:
            raise ConfigError(f"unknown config key: {dotted}")
        node[keys[-1]] = _parse_override_value(raw)
    return data


def load_run_config(path: Optional[Union[str, Path]] = None,
                    overrides: Iterable[str] = (),
                    base: Optional[RunConfig] = None) -> RunConfig:
    """
    Load a RunConfig from a JSON file (or start from `base`/defaults), apply the
    checkpoint-root environment variable and then the overrides, and validate.
    """
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must contain a JSON object")
        # fill in omitted keys from the defaults, then check the merged tree strictly
        merged = config_to_dict(base or RunConfig())
        _merge(merged, data, "")
        data = merged
    else:
        data = config_to_dict(base or RunConfig())

    # file < environment < --set flags
    env_root = os.environ.get(CHECKPOINT_ROOT_ENV)
    if env_root:
        data["checkpoint_root"] = env_root

    apply_overrides(data, overrides)

    config = config_from_dict(RunConfig, data)
    config.validate()
    return config


def _merge(target: Dict[str, Any], update: Dict[str, Any], path: str) -> None:
    for key, value in update.items():
        key_path = f"{path}.{key}" if path else key
        if key not in target:
            raise ConfigError(f"unknown config key(s): {key_path}")
        if isinstance(target[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{key_path}: expected an object")
            _merge(target[key], value, key_path)
        else:
            target[key] = value


def save_run_config(config: RunConfig, path: Union[str, Path]) -> None:
    """Write the config as indented JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config_to_dict(config), indent=2) + "\n", encoding="utf-8")
