"""Flat key-value config files with dotted namespaces, and config fingerprints.

Format: one `key = value` per line, `#` starts a comment, blank lines ignored.
Fingerprints hash the canonical (sorted, whitespace-stripped) rendering, so
formatting and key order never change a fingerprint but any semantic field
does.
"""

from __future__ import annotations

import dataclasses
import hashlib

from .core import ConfigError
from .losses import LossConfig
from .synthdata import DatasetConfig


def parse_flat_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_flat(d: dict[str, str]) -> str:
    return "".join(f"{k} = {d[k]}\n" for k in sorted(d))


def canonical_text(d: dict[str, str]) -> str:
    return "".join(f"{k}={str(d[k]).strip()}\n" for k in sorted(d))


def fingerprint(d: dict[str, str]) -> str:
    return hashlib.sha256(canonical_text(d).encode("utf-8")).hexdigest()


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(raw: str, typ):
    if typ is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"expected {typ.__name__}, got {raw!r}") from None


def flatten_dataclass(obj, prefix: str = "") -> dict[str, str]:
    """Dataclass -> flat dict; nested dataclasses get dotted sub-namespaces."""
    out: dict[str, str] = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(flatten_dataclass(value, prefix=f"{key}."))
        else:
            out[key] = _render(value)
    return out


def build_dataclass(cls, flat: dict[str, str], prefix: str = ""):
    """Instantiate `cls` from a flat dict, using dataclass defaults for
    missing keys and rejecting unknown keys under the prefix."""
    kwargs = {}
    known: set[str] = set()
    for f in dataclasses.fields(cls):
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(f.type) or dataclasses.is_dataclass(f.default):
            sub_cls = type(f.default) if dataclasses.is_dataclass(f.default) else f.type
            sub_prefix = f"{key}."
            known.update(k for k in flat if k.startswith(sub_prefix))
            kwargs[f.name] = build_dataclass(sub_cls, flat, prefix=sub_prefix)
            continue
        known.add(key)
        if key in flat:
            typ = {"int": int, "float": float, "bool": bool, "str": str}.get(
                f.type if isinstance(f.type, str) else f.type.__name__, str
            )
            kwargs[f.name] = _coerce(flat[key], typ)
    unknown = [k for k in flat if k.startswith(prefix) and k not in known]
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cls(**kwargs)


def dataset_config_from_flat(flat: dict[str, str], prefix: str = "data.") -> DatasetConfig:
    scoped = {k: v for k, v in flat.items() if k.startswith(prefix)}
    return build_dataclass(DatasetConfig, scoped, prefix=prefix)


def loss_config_from_flat(flat: dict[str, str], prefix: str = "loss.") -> LossConfig:
    scoped = {k: v for k, v in flat.items() if k.startswith(prefix)}
    return build_dataclass(LossConfig, scoped, prefix=prefix)
