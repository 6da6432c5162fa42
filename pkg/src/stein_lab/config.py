"""Flat ``key = value`` sweep configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

__all__ = ["ConfigError", "SweepConfig", "parse_config", "load_config", "parse_grid"]

SECTIONS = ("uni", "multi", "pp")

_COMMON = {"section", "lambda_grid", "seed", "workers", "out", "identity_samples"}
_KEYS = {
    "uni": _COMMON | {"n_max"},
    "multi": _COMMON | {"d", "mu", "n_max"},
    "pp": _COMMON | {"s_size", "n_ab_max", "n_total_max", "d2_exact"},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    section: str
    lambda_grid: tuple
    seed: int = 0
    workers: int | None = None
    out: str = "."
    identity_samples: int = 50
    # uni / multi truncation (one value per coordinate for multi)
    n_max: tuple | None = None
    mu: tuple | None = None
    s_size: int = 1
    n_ab_max: int = 6
    n_total_max: int | None = None
    d2_exact: bool = True

    @property
    def d(self) -> int | None:
        return None if self.mu is None else len(self.mu)


def parse_grid(text: str) -> tuple:
    try:
        grid = tuple(float(x) for x in text.replace(" ", "").split(",") if x)
    except ValueError as exc:
        raise ConfigError(f"lambda_grid: {exc}") from None
    if not grid:
        raise ConfigError("lambda_grid is empty")
    if any(not (math.isfinite(x) and x > 0) for x in grid):
        raise ConfigError("lambda_grid values must be positive and finite")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("lambda_grid must be strictly increasing")
    return grid


def _int(key, text, minimum=None):
    try:
        v = int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
    if minimum is not None and v < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}")
    return v


def _bool(key, text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def parse_config(text: str, section: str, overrides: dict | None = None) -> SweepConfig:
    """Parse config text for ``section``; ``overrides`` (raw strings) win over the file."""
    if section not in SECTIONS:
        raise ConfigError(f"unknown section {section!r}")
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = str(value)
    unknown = set(raw) - _KEYS[section]
    if unknown:
        raise ConfigError(f"unknown keys for {section}: {', '.join(sorted(unknown))}")
    if raw.get("section", section) != section:
        raise ConfigError(f"config is for section {raw['section']!r}, not {section!r}")
    if "lambda_grid" not in raw:
        raise ConfigError("lambda_grid is required")

    kw: dict = {"section": section, "lambda_grid": parse_grid(raw["lambda_grid"])}
    if "seed" in raw:
        kw["seed"] = _int("seed", raw["seed"], 0)
    if "workers" in raw:
        kw["workers"] = _int("workers", raw["workers"], 1)
    if "out" in raw:
        kw["out"] = raw["out"]
    if "identity_samples" in raw:
        kw["identity_samples"] = _int("identity_samples", raw["identity_samples"], 1)

    if section == "uni" and "n_max" in raw:
        kw["n_max"] = (_int("n_max", raw["n_max"], 2),)
    if section == "multi":
        d = _int("d", raw["d"], 2) if "d" in raw else None
        if "mu" in raw:
            try:
                mu = tuple(float(x) for x in raw["mu"].split(","))
            except ValueError:
                raise ConfigError(f"mu: cannot parse {raw['mu']!r}") from None
            if d is not None and d != len(mu):
                raise ConfigError(f"mu has {len(mu)} entries but d = {d}")
            if len(mu) < 2 or min(mu) <= 0 or abs(sum(mu) - 1.0) > 1e-9:
                raise ConfigError("mu must list d >= 2 positive weights summing to 1")
        elif d is not None:
            mu = (1.0 / d,) * d
        else:
            raise ConfigError("multi needs d or mu")
        kw["mu"] = mu
        if "n_max" in raw:
            n_max = tuple(_int("n_max", x, 2) for x in raw["n_max"].split(","))
            if len(n_max) == 1:
                n_max = n_max * len(mu)
            if len(n_max) != len(mu):
                raise ConfigError("n_max needs one value or one per coordinate")
            kw["n_max"] = n_max
    if section == "pp":
        if "s_size" in raw:
            kw["s_size"] = _int("s_size", raw["s_size"], 1)
        if "n_ab_max" in raw:
            kw["n_ab_max"] = _int("n_ab_max", raw["n_ab_max"], 1)
        if "n_total_max" in raw:
            kw["n_total_max"] = _int("n_total_max", raw["n_total_max"], 2)
        if "d2_exact" in raw:
            kw["d2_exact"] = _bool("d2_exact", raw["d2_exact"])
    return SweepConfig(**kw)


def load_config(path, section: str, overrides: dict | None = None) -> SweepConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, section, overrides)

