"""Flat ``key = value`` configuration covering stream, controller and run settings.

Every key is a field name of ``StreamConfig``, ``ControllerConfig`` or
``RunConfig``, or one of ``policy`` / ``seed``. Field names are unique across
the three classes, so no prefixes are needed. Lines starting with ``#`` are
comments. Missing keys take the desk-scale defaults from ``defaults()``.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, replace

from .controller import ControllerConfig
from .harness import Policy, RunConfig, desk_controller, desk_stream
from .simenv import StreamConfig

SEED_ENV = "DRIFTGATE_SEED"
_SECTION = "driftgate"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Settings:
    stream: StreamConfig
    controller: ControllerConfig
    run: RunConfig
    policy: Policy = Policy.CERTIFIED
    seed: int = 0


def defaults() -> Settings:
    return Settings(desk_stream(), desk_controller(), RunConfig())


def _fields(obj):
    return {f.name: f for f in dataclasses.fields(obj)}


def _convert(name, text, current):
    try:
        if isinstance(current, bool):
            low = text.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(text)
            return low in ("1", "true", "yes")
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            return tuple(_convert(name, t, current[0]) for t in text.split(","))
        return text.strip()
    except ValueError as e:
        raise ConfigError(f"bad value for {name!r}: {text!r}") from e


def apply(settings: Settings, values: dict) -> Settings:
    """Override fields of ``settings`` from a flat mapping of strings."""
    parts = {"stream": {}, "controller": {}, "run": {}}
    owners = {}
    for part in parts:
        for name in _fields(getattr(settings, part)):
            owners[name] = part
    policy, seed = settings.policy, settings.seed
    for key, text in values.items():
        if key == "policy":
            try:
                policy = Policy(text.strip())
            except ValueError as e:
                raise ConfigError(f"unknown policy {text!r}") from e
        elif key == "seed":
            seed = _convert(key, text, 0)
        elif key in owners:
            part = owners[key]
            parts[part][key] = _convert(key, text, getattr(getattr(settings, part), key))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        stream = replace(settings.stream, **parts["stream"])
        ctrl = replace(settings.controller, **parts["controller"])
        run = replace(settings.run, **parts["run"])
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return Settings(replace(stream, seed=seed), ctrl, run, policy, seed)


def parse(text: str, base: Settings | None = None) -> Settings:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), delimiters=("=", ":"))
    cp.optionxform = str
    try:
        cp.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e
    return apply(base or defaults(), dict(cp[_SECTION]))


def load(path, base: Settings | None = None) -> Settings:
    with open(path, encoding="utf-8") as f:
        return parse(f.read(), base)


def resolve_seed(cli_seed: int | None, settings: Settings) -> int:
    """Command line wins, then the environment variable, then the config file."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from e
    return settings.seed


def dumps(settings: Settings) -> str:
    """Render every field as a flat config file (the documented defaults when given ``defaults()``)."""
    lines = [f"policy = {settings.policy.value}", f"seed = {settings.seed}"]
    for part in ("stream", "controller", "run"):
        obj = getattr(settings, part)
        lines.append(f"# {part}")
        for name in _fields(obj):
            if part == "stream" and name == "seed":
                continue
            v = getattr(obj, name)
            if isinstance(v, tuple):
                v = ",".join(str(x).lower() if isinstance(x, bool) else str(x) for x in v)
            lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"
