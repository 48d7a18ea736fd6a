"""Sectioned ``key = value`` configuration files with dotted-path overrides.

Sections: ``[run]`` (seed, sample_index), ``[ensemble]``, ``[grid]``,
``[solver]``, ``[study]``, ``[green]``, ``[sgcheck]``.  Lists are comma
separated; ensemble tensor lists are JSON.
"""

from __future__ import annotations

import configparser
import io
import json
from pathlib import Path
from typing import Iterable

from .ensemble import EnsembleSpec
from .study import StudyPlan

SECTIONS = ("run", "ensemble", "grid", "solver", "study", "green", "sgcheck")

_ENSEMBLE_KEYS = ("kind", "dimension", "contrast", "inclusion_radius", "intensity", "cell_values",
                  "probabilities", "band_width")
_STUDY_FLOATS = ("T_over_L", "probe_radius", "ball_radius")
_STUDY_INTS = ("n_samples", "first_sample", "chunk_size")
_STUDY_LISTS = ("L_values", "T_values", "q_list", "distances")
_STUDY_BOOLS = ("with_zero_order", "include_psi")


class ConfigError(ValueError):
    """Missing or malformed configuration entry (exit code 2)."""


def new_config() -> configparser.ConfigParser:
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.optionxform = str  # keys are case sensitive (T, L_values)
    return cfg


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> configparser.ConfigParser:
    cfg = new_config()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} not found")
        try:
            cfg.read_string(p.read_text())
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
    apply_overrides(cfg, overrides)
    return cfg


def apply_overrides(cfg: configparser.ConfigParser, overrides: Iterable[str]) -> None:
    """Apply ``section.key=value`` strings."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        path, value = item.split("=", 1)
        if "." not in path:
            raise ConfigError(f"override key {path!r} must be a dotted path section.key")
        section, key = path.strip().split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section, key.strip(), value.strip())


def dumps(cfg: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    cfg.write(buf)
    return buf.getvalue()


def as_dict(cfg: configparser.ConfigParser) -> dict:
    return {s: dict(cfg.items(s)) for s in cfg.sections()}


def require(cfg: configparser.ConfigParser, section: str, key: str) -> str:
    if not cfg.has_option(section, key):
        raise ConfigError(f"missing required key {section}.{key}")
    return cfg.get(section, key)


def get(cfg, section: str, key: str, conv=str, default=None):
    if not cfg.has_option(section, key):
        return default
    raw = cfg.get(section, key)
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {section}.{key}: {raw!r}") from exc


def floats(text: str) -> tuple:
    text = text.strip()
    return tuple(float(v) for v in text.split(",") if v.strip()) if text else ()


def boolean(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def seed_value(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


def ensemble_from_config(cfg) -> EnsembleSpec:
    require(cfg, "ensemble", "kind")
    data = {k: cfg.get("ensemble", k) for k in _ENSEMBLE_KEYS if cfg.has_option("ensemble", k)}
    unknown = set(cfg.options("ensemble")) - set(_ENSEMBLE_KEYS) - {"master_seed"}
    if unknown:
        raise ConfigError(f"unknown ensemble keys: {sorted(unknown)}")
    data["master_seed"] = get(cfg, "run", "seed", seed_value, 0)
    try:
        return EnsembleSpec.from_dict(data)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"invalid [ensemble] section: {exc}") from exc


def ensemble_to_config(cfg, spec: EnsembleSpec) -> None:
    if not cfg.has_section("ensemble"):
        cfg.add_section("ensemble")
    for k, v in spec.to_dict().items():
        if k != "master_seed":
            cfg.set("ensemble", k, str(v))


def plan_from_config(cfg, kind: str | None = None) -> StudyPlan:
    """Build a :class:`StudyPlan` from ``[run]``, ``[ensemble]``, ``[grid]``, ``[solver]`` and ``[study]``."""
    kw: dict = {"ensemble": ensemble_from_config(cfg)}
    kw["kind"] = kind or require(cfg, "study", "kind")
    kw["seed"] = get(cfg, "run", "seed", seed_value, 0)
    kw["h"] = float(require(cfg, "grid", "h"))
    for key, conv in (("kappa", float),):
        v = get(cfg, "grid", key, conv)
        if v is not None:
            kw[key] = v
    for key, conv in (("tol", float), ("method", str)):
        v = get(cfg, "solver", key, conv)
        if v is not None:
            kw[key] = v
    for key in ("xi", "xi_prime"):
        v = get(cfg, "solver", key, floats)
        if v is not None:
            kw[key] = v
    for key in _STUDY_LISTS:
        v = get(cfg, "study", key, floats)
        if v is not None:
            kw[key] = v
    for key in _STUDY_FLOATS:
        v = get(cfg, "study", key, float)
        if v is not None:
            kw[key] = v
    for key in _STUDY_INTS:
        v = get(cfg, "study", key, int)
        if v is not None:
            kw[key] = v
    for key in _STUDY_BOOLS:
        v = get(cfg, "study", key, boolean)
        if v is not None:
            kw[key] = v
    d = kw["ensemble"].dimension
    kw.setdefault("xi", tuple(1.0 if i == 0 else 0.0 for i in range(d)))
    kw.setdefault("xi_prime", kw["xi"])
    try:
        return StudyPlan(**kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid study plan: {exc}") from exc


def _fmt(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def plan_to_config(plan: StudyPlan) -> configparser.ConfigParser:
    cfg = new_config()
    for s in ("run", "grid", "solver", "study"):
        cfg.add_section(s)
    cfg.set("run", "seed", str(plan.seed))
    ensemble_to_config(cfg, plan.ensemble)
    cfg.set("grid", "h", repr(plan.h))
    cfg.set("grid", "kappa", repr(plan.kappa))
    cfg.set("solver", "tol", repr(plan.tol))
    cfg.set("solver", "method", plan.method)
    cfg.set("solver", "xi", _fmt(plan.xi))
    cfg.set("solver", "xi_prime", _fmt(plan.xi_prime))
    cfg.set("study", "kind", plan.kind)
    for key in _STUDY_LISTS:
        cfg.set("study", key, _fmt(getattr(plan, key)))
    for key in _STUDY_FLOATS:
        cfg.set("study", key, repr(getattr(plan, key)))
    for key in _STUDY_INTS:
        cfg.set("study", key, str(getattr(plan, key)))
    for key in _STUDY_BOOLS:
        cfg.set("study", key, str(getattr(plan, key)).lower())
    return cfg
