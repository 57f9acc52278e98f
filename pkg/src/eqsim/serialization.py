"""Strict dataclass <-> dict conversion and canonical config hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing

from .errors import ValidationError


def dataclass_to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {
            f.name: dataclass_to_dict(getattr(obj, f.name))
            for f in dataclasses.fields(obj)
        }
    if isinstance(obj, (list, tuple)):
        return [dataclass_to_dict(v) for v in obj]
    if isinstance(obj, dict):
        return {k: dataclass_to_dict(v) for k, v in obj.items()}
    return obj


def dataclass_from_dict(cls, data: dict, path: str = ""):
    """Build ``cls`` from ``data``, rejecting unknown keys by full path."""
    if not isinstance(data, dict):
        raise ValidationError(f"config section {path or cls.__name__} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        key = sorted(unknown)[0]
        full = f"{path}.{key}" if path else key
        raise ValidationError(f"unknown config key: {full}")
    kwargs = {}
    hints = typing.get_type_hints(cls)
    for name, value in data.items():
        ftype = hints.get(name, fields[name].type)
        sub_path = f"{path}.{name}" if path else name
        kwargs[name] = _convert(ftype, value, sub_path, fields[name])
    return cls(**kwargs)


def _convert(ftype, value, path, field):
    if dataclasses.is_dataclass(ftype):
        return dataclass_from_dict(ftype, value, path)
    # tuple-typed fields accept JSON lists
    default = field.default if field.default is not dataclasses.MISSING else None
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(value)
    if default is None and field.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
        proto = field.default_factory()  # type: ignore[misc]
        if dataclasses.is_dataclass(proto) and isinstance(value, dict):
            return dataclass_from_dict(type(proto), value, path)
    return value


def canonical_json(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(data) -> str:
    """sha256 hex digest of the canonical JSON form."""
    if dataclasses.is_dataclass(data):
        data = dataclass_to_dict(data)
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()
