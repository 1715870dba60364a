"""Flat ``key = value`` experiment config files.

Keys are ExperimentConfig field names; synthetic dataset keys carry a
``synthetic.`` prefix (``synthetic.num_identities = 32``). Lists are comma
separated, booleans accept on/off, true/false, yes/no, 1/0. ``#`` starts a
comment. Unknown keys and malformed values are errors.
"""

import dataclasses
from importlib import resources

from .data import SyntheticDatasetSpec
from .errors import ConfigError
from .train import ExperimentConfig

PRESETS = ("reference", "desk")
_TRUE = {"on", "true", "yes", "1"}
_FALSE = {"off", "false", "no", "0"}


def _convert(key, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"expected on/off, got {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple) or default is None:
            if raw.lower() in ("", "none"):
                return None if default is None else ()
            items = [x.strip() for x in raw.split(",") if x.strip()]
            kind = float if any(isinstance(x, float) for x in (default or ())) else None
            if kind is None:
                kind = int if all(_is_int(x) for x in items) else float
            return tuple(kind(x) for x in items)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _is_int(text):
    try:
        int(text)
    except ValueError:
        return False
    return True


def parse_config_text(text, base=None):
    """Parse config text on top of ``base`` (default: reference defaults)."""
    base = base or ExperimentConfig()
    top_defaults = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
    syn_defaults = {f.name: getattr(base.synthetic, f.name)
                    for f in dataclasses.fields(SyntheticDatasetSpec)}
    top, syn = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("synthetic."):
            name = key[len("synthetic."):]
            if name not in syn_defaults:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            syn[name] = _convert(key, value, syn_defaults[name])
        elif key in top_defaults and key != "synthetic":
            top[key] = _convert(key, value, top_defaults[key])
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if syn:
        top["synthetic"] = dataclasses.replace(base.synthetic, **syn)
    try:
        return dataclasses.replace(base, **top)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(source=None):
    """Load a config file, or a bundled preset by name (``reference``, ``desk``)."""
    if source is None or source == "reference":
        return ExperimentConfig()
    if source in PRESETS:
        text = resources.files("spherereid.presets").joinpath(f"{source}.conf").read_text()
        return parse_config_text(text)
    try:
        with open(source) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {source}: {exc}") from exc
    return parse_config_text(text)


def format_config(config):
    """Render every field as ``key = value`` lines; parses back to ``config``."""
    def fmt(value):
        if isinstance(value, bool):
            return "on" if value else "off"
        if isinstance(value, tuple):
            return ", ".join(repr(v) for v in value)
        if value is None:
            return "none"
        return repr(value) if isinstance(value, float) else str(value)

    lines = []
    for f in dataclasses.fields(config):
        if f.name != "synthetic":
            lines.append(f"{f.name} = {fmt(getattr(config, f.name))}")
    for f in dataclasses.fields(config.synthetic):
        lines.append(f"synthetic.{f.name} = {fmt(getattr(config.synthetic, f.name))}")
    return "\n".join(lines) + "\n"
