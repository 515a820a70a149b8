"""Flat `key = value` config files; one assignment per line, # comments."""

from __future__ import annotations


def parse_config(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"config line {ln}: empty key")
        out[key] = value.strip()
    return out


def read_config_file(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def write_config(values: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())
