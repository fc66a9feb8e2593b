"""Plain-text ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Keys use the long CLI flag name
with dashes or underscores (``batch-size`` and ``batch_size`` are the same).
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def normalize_key(key: str) -> str:
    return key.strip().replace("-", "_")


def parse_config(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        key = normalize_key(key)
        if key in out:
            raise ConfigError(f"line {n}: {key!r} set twice")
        out[key] = value.strip()
    return out


def read_config(path) -> dict:
    try:
        return parse_config(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def merge(defaults: dict, file_values: dict, cli_values: dict) -> dict:
    """Defaults, overridden by the file, overridden by explicit CLI flags.

    File values are strings and are converted with the type of the default
    (a ``None`` default keeps the string).
    """
    unknown = sorted(set(file_values) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    out = dict(defaults)
    for k, v in file_values.items():
        out[k] = _convert(k, v, defaults[k])
    for k, v in cli_values.items():
        if v is not None:
            out[k] = v
    return out


def _convert(key: str, value: str, default):
    if default is None:
        return value or None
    if isinstance(default, str):
        return value
    try:
        if isinstance(default, bool):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        return type(default)(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {type(default).__name__}") from None


def format_config(values: dict) -> str:
    return "".join(f"{k} = {'' if v is None else v}\n" for k, v in sorted(values.items()))


def write_config(path, values: dict) -> None:
    Path(path).write_text(format_config(values))
