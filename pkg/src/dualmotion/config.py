"""Plain-text configuration (``key = value`` lines grouped under ``[section]`` headers)."""

from __future__ import annotations

import configparser
import io
from dataclasses import fields

from .training import Phase, TrainConfig


class ConfigError(ValueError):
    pass


def format_phases(phases) -> str:
    return ", ".join(f"{'+'.join(p.datasets)}:{p.steps}" for p in phases)


def parse_phases(text: str) -> list[Phase]:
    """``"B+C:10000, A+B+C+D+E:10000"`` -> list of Phase."""
    out = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            names, steps = chunk.split(":")
            out.append(Phase(tuple(n.strip() for n in names.split("+") if n.strip()), int(steps)))
        except ValueError as exc:
            raise ConfigError(f"bad phase spec {chunk!r}; expected NAMES:STEPS") from exc
    if not out:
        raise ConfigError("no training phases given")
    return out


def _coerce(name: str, raw: str, default):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def train_config_from_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from exc
    cfg = base or TrainConfig()
    if not cp.has_section("train"):
        return cfg
    known = {f.name for f in fields(TrainConfig)}
    values = cfg.to_dict()
    for key, raw in cp.items("train"):
        if key not in known:
            raise ConfigError(f"unknown train option {key!r}")
        if key == "phases":
            values["phases"] = [{"datasets": list(p.datasets), "steps": p.steps} for p in parse_phases(raw)]
        else:
            try:
                values[key] = _coerce(key, raw, values[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return TrainConfig.from_dict(values)


def load_train_config(path) -> TrainConfig:
    try:
        with open(path) as f:
            return train_config_from_text(f.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc


def dump_train_config(cfg: TrainConfig | None = None) -> str:
    cfg = cfg or TrainConfig()
    cp = configparser.ConfigParser()
    d = cfg.to_dict()
    d["phases"] = format_phases(cfg.phases)
    cp["train"] = {k: str(v) for k, v in d.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
