"""Plain-text key-value configuration and run manifests.

Syntax: one `key = value` per line, `#` starts a comment, blank lines are
ignored, lists are comma-separated. Values are coerced to the type of the
default they override.
"""

import hashlib
from enum import Enum
from pathlib import Path

from .exceptions import ConfigError, FormatError

TRUE_WORDS = {"true", "yes", "on", "1"}
FALSE_WORDS = {"false", "no", "off", "0"}
NONE_WORD = "none"
# Keys a manifest carries besides the subcommand parameters
RESERVED_KEYS = ("command", "version")


def parse_key_values(text: str, source: str = "<string>") -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(source, line_no, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise FormatError(source, line_no, "empty key")
        if key in values:
            raise FormatError(source, line_no, f"duplicate key {key!r}")
        values[key] = value
    return values


def load_config_file(path: Path | str) -> dict[str, str]:
    """Read a key-value config file into raw strings."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    return parse_key_values(text, str(path))


def _coerce_scalar(key: str, raw: str, default):
    if isinstance(default, bool):
        word = raw.lower()
        if word in TRUE_WORDS:
            return True
        if word in FALSE_WORDS:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, Enum):
            return type(default)(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {raw!r}: {e}") from e
    if default is None:
        if raw.lower() == NONE_WORD:
            return None
        for parse in (int, float):
            try:
                return parse(raw)
            except ValueError:
                pass
    return raw


def coerce(key: str, raw: str, default):
    """Convert a raw string to the type of `default`."""
    if isinstance(default, (list, tuple)):
        items = [item.strip() for item in raw.split(",") if item.strip()]
        element = default[0] if default else None
        return type(default)(_coerce_scalar(key, item, element) for item in items)
    return _coerce_scalar(key, raw, default)


def resolve(defaults: dict, file_values: dict[str, str] | None = None, flags: dict | None = None):
    """Merge with precedence flags > file > defaults.

    Flags whose value is None count as "not given".

    Raises:
        ConfigError: If the file names a key the defaults do not know.
    """
    resolved = dict(defaults)
    for key, raw in (file_values or {}).items():
        if key in RESERVED_KEYS:
            continue
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r}")
        resolved[key] = coerce(key, raw, defaults[key])
    for key, value in (flags or {}).items():
        if value is None:
            continue
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r}")
        resolved[key] = value
    return resolved


def format_value(value) -> str:
    if value is None:
        return NONE_WORD
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def render_manifest(values: dict) -> str:
    """Key-value text that load_config_file reads back to the same values."""
    lines = [f"{key} = {format_value(value)}" for key, value in values.items()]
    return "\n".join(lines) + "\n"


def manifest_digest(text: str, length: int = 12) -> str:
    """SHA-256 prefix used to stamp output files with the manifest that produced them."""
    return hashlib.sha256(text.encode()).hexdigest()[:length]
