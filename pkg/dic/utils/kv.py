from enum import Enum
from typing import Any, Iterable

from pydantic import BaseModel

from dic.errors import ConfigError


def parse_lines(text: str, source: str = "<text>") -> list[tuple[str, str]]:
    """Split key=value text into ordered pairs. `#` starts a comment."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value at {source}:{lineno}", code="syntax", line=lineno)
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def flatten(model: BaseModel, prefix: str = "") -> list[tuple[str, str]]:
    """Dotted key=value pairs for a (nested) pydantic model, in field order."""
    pairs = []
    for name in type(model).model_fields:
        value = getattr(model, name)
        key = f"{prefix}{name}"
        if isinstance(value, BaseModel):
            pairs.extend(flatten(value, prefix=f"{key}."))
        else:
            pairs.append((key, format_value(value)))
    return pairs


def render(pairs: Iterable[tuple[str, str]]) -> str:
    return "".join(f"{key}={value}\n" for key, value in pairs)


def nest(pairs: Iterable[tuple[str, str]]) -> dict[str, Any]:
    """Turn dotted pairs into a nested dict; later keys override earlier ones."""
    tree: dict[str, Any] = {}
    for key, value in pairs:
        node = tree
        *parents, leaf = key.split(".")
        for part in parents:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"key {key} conflicts with scalar {part}", field=key, code="unknown_key")
            node = child
        node[leaf] = value
    return tree
