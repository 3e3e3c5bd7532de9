"""Flat ``key = value`` run configuration files.

Keys are :class:`~tasksph.physics.RunConfig` fields plus the run keys below.
Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import dataclasses
import os

from ..physics import RunConfig

#: non-physics keys understood by the ``run`` command
RUN_KEYS = {"ic": str, "out_dir": str, "snap_every": int, "timeline": str, "case": str,
            "max_steps": int}


class ConfigError(ValueError):
    pass


def _convert(raw: str, typ, key, lineno):
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc


def parse_config(text: str, base_dir: str = ".") -> tuple[RunConfig, dict]:
    """Parse config text into ``(RunConfig, run options)``."""
    types = RunConfig.field_types()
    cfg_kw, run_kw = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in types:
            cfg_kw[key] = _convert(raw, types[key], key, lineno)
        elif key in RUN_KEYS:
            run_kw[key] = _convert(raw, RUN_KEYS[key], key, lineno)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    for k in ("ic", "out_dir", "timeline"):
        if k in run_kw and not os.path.isabs(run_kw[k]):
            run_kw[k] = os.path.normpath(os.path.join(base_dir, run_kw[k]))
    try:
        cfg = RunConfig(**cfg_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, run_kw


def load_config(path) -> tuple[RunConfig, dict]:
    with open(path) as fh:
        return parse_config(fh.read(), os.path.dirname(os.path.abspath(path)))


def dump_config(cfg: RunConfig, run_kw: dict | None = None) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(cfg)]
    for k, v in (run_kw or {}).items():
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
