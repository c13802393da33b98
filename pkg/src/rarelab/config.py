"""Experiment configuration: parsing, validation and canonical TOML output.

A configuration is a TOML document with the tables ``[experiment]``,
``[map]``, ``[target]``, ``[schedule]``, ``[estimators]``, ``[oracle]``,
``[checks]`` and ``[output]``. Measures and endpoints are exact fraction
strings such as ``"1/3"``. Unknown keys and wrongly typed values are errors
that name the offending ``[table].key``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

ALL_CHECKS = ("period_criterion", "equivalence", "t1", "limit", "evl", "beta",
              "extremal_ratio", "cb_bound", "phi_mixing")


class ConfigError(ValueError):
    """Invalid configuration; the message names the table and key."""


@dataclass(frozen=True)
class MapConfig:
    branches: str = "1/2,1/2"


@dataclass(frozen=True)
class TargetConfig:
    kind: str = "points"
    points: tuple = ("0",)
    period: int = 0
    level: int = 0


@dataclass(frozen=True)
class ScheduleConfig:
    tau: str = "1"
    w0: int = 256
    growth: int = 2
    scales: int = 4
    r_exponent: int = 2


@dataclass(frozen=True)
class EstimatorsConfig:
    samples: int = 200_000
    seed: int = 1
    K: int = 20
    K_grid: tuple = (5, 10, 20, 40, 80)
    ell_max: int = 8
    lambda_samples: int = 0
    hitting_samples: int = 0
    equivalence_samples: int = 0
    beta_s: Union[str, tuple] = "scale"


@dataclass(frozen=True)
class OracleConfig:
    K: int = 60
    depth: int = 0
    ell_max: int = 48


@dataclass(frozen=True)
class ChecksConfig:
    run: tuple = ALL_CHECKS
    tv_threshold: float = 0.03
    evl_allowance: float = 0.01
    sum_tol: float = 0.02
    ratio_tol: float = 0.02
    equivalence_scale: int = -1
    equivalence_w_factor: int = 1
    cb_word: str = "011010"
    cb_K: int = 3
    cb_Delta: int = 12
    cb_tau: str = "2"
    phi_n_max: int = 6
    phi_gap_max: int = 12


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/experiment"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    map: MapConfig = field(default_factory=MapConfig)
    target: TargetConfig = field(default_factory=TargetConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    estimators: EstimatorsConfig = field(default_factory=EstimatorsConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    checks: ChecksConfig = field(default_factory=ChecksConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(
            self, estimators=dataclasses.replace(self.estimators, seed=int(seed)))

    def to_dict(self) -> dict:
        out = {"experiment": {"name": self.name}}
        for f in fields(self):
            if f.name == "name":
                continue
            out[f.name] = {k: _to_plain(v) for k, v in
                           dataclasses.asdict(getattr(self, f.name)).items()}
        return out

    def to_toml(self) -> str:
        return dumps_toml(self.to_dict())


_SECTIONS = {"map": MapConfig, "target": TargetConfig, "schedule": ScheduleConfig,
             "estimators": EstimatorsConfig, "oracle": OracleConfig,
             "checks": ChecksConfig, "output": OutputConfig}


def _to_plain(v):
    return list(v) if isinstance(v, tuple) else v


def _coerce(section: str, key: str, value, default):
    where = f"[{section}].{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple) and not (section == "estimators" and key == "beta_s"):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        kind = type(default[0]) if default else str
        for item in value:
            if not isinstance(item, kind) or isinstance(item, bool):
                raise ConfigError(f"{where}: list items must be {kind.__name__}, got {item!r}")
        return tuple(value)
    if key == "beta_s":
        if isinstance(value, str):
            if value != "scale":
                raise ConfigError(f"{where}: expected 'scale' or a list of integers")
            return value
        if isinstance(value, list) and all(isinstance(v, int) for v in value):
            return tuple(value)
        raise ConfigError(f"{where}: expected 'scale' or a list of integers, got {value!r}")
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported value {value!r}")  # pragma: no cover


def from_dict(data: dict) -> ExperimentConfig:
    """Validate a parsed document and build the configuration."""
    unknown = set(data) - set(_SECTIONS) - {"experiment"}
    if unknown:
        raise ConfigError(f"unknown table(s): {', '.join(sorted(unknown))}")
    exp = data.get("experiment", {})
    extra = set(exp) - {"name"}
    if extra:
        raise ConfigError(f"[experiment]: unknown key(s) {', '.join(sorted(extra))}")
    name = exp.get("name", "experiment")
    if not isinstance(name, str):
        raise ConfigError("[experiment].name: expected a string")
    parts = {}
    for section, cls in _SECTIONS.items():
        raw = data.get(section, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"[{section}]: expected a table")
        defaults = cls()
        known = {f.name for f in fields(cls)}
        bad = set(raw) - known
        if bad:
            raise ConfigError(f"[{section}]: unknown key(s) {', '.join(sorted(bad))}")
        kwargs = {k: _coerce(section, k, v, getattr(defaults, k)) for k, v in raw.items()}
        parts[section] = cls(**kwargs)
    cfg = ExperimentConfig(name=name, **parts)
    validate(cfg)
    return cfg


def _fraction(where: str, text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{where}: not an exact fraction: {text!r}") from exc


def validate(cfg: ExperimentConfig) -> None:
    """Semantic checks beyond types."""
    parts = [p.strip() for p in cfg.map.branches.split(",") if p.strip()]
    lengths = [_fraction("[map].branches", p) for p in parts]
    if len(lengths) < 2 or sum(lengths) != 1 or any(not 0 < v < 1 for v in lengths):
        raise ConfigError("[map].branches: need at least two lengths in (0, 1) summing to 1")
    t = cfg.target
    if t.kind not in ("points", "periodic", "cantor"):
        raise ConfigError(f"[target].kind: expected points, periodic or cantor, got {t.kind!r}")
    if t.kind != "cantor":
        if not t.points:
            raise ConfigError("[target].points: at least one point required")
        for p in t.points:
            v = _fraction("[target].points", p)
            if not 0 <= v < 1:
                raise ConfigError(f"[target].points: {p} not in [0, 1)")
    if t.kind == "periodic" and (t.period < 1 or len(t.points) != 1):
        raise ConfigError("[target]: periodic targets need one point and period >= 1")
    if t.kind == "cantor" and t.level < 0:
        raise ConfigError("[target].level: must be nonnegative")
    s = cfg.schedule
    if _fraction("[schedule].tau", s.tau) <= 0:
        raise ConfigError("[schedule].tau: must be positive")
    for key in ("w0", "scales"):
        if getattr(s, key) < 1:
            raise ConfigError(f"[schedule].{key}: must be at least 1")
    if s.growth < 2:
        raise ConfigError("[schedule].growth: must be at least 2")
    e = cfg.estimators
    if e.samples < 1 or e.K < 1 or e.ell_max < 2:
        raise ConfigError("[estimators]: need samples >= 1, K >= 1, ell_max >= 2")
    if not 0 <= e.seed < 2 ** 64:
        raise ConfigError("[estimators].seed: must fit in 64 bits")
    if not e.K_grid or any(k < 1 for k in e.K_grid):
        raise ConfigError("[estimators].K_grid: positive integers required")
    if isinstance(e.beta_s, tuple) and len(e.beta_s) != s.scales:
        raise ConfigError("[estimators].beta_s: one value per scale required")
    bad = set(cfg.checks.run) - set(ALL_CHECKS)
    if bad:
        raise ConfigError(f"[checks].run: unknown check(s) {', '.join(sorted(bad))}")
    word = cfg.checks.cb_word
    if not word or any(not c.isdigit() or int(c) >= len(lengths) for c in word):
        raise ConfigError("[checks].cb_word: symbols must be branch indices")
    _fraction("[checks].cb_tau", cfg.checks.cb_tau)


def loads(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from exc
    return from_dict(data)


def load(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return loads(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


PRESETS = ("polya-aeppli-fixed-point", "poisson-irrational", "broken")


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("rarelab").joinpath("presets", f"{name}.toml").read_text()


def load_preset(name: str) -> ExperimentConfig:
    return loads(preset_text(name))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {v!r} as TOML")


def dumps_toml(data: dict) -> str:
    """Write a two-level table document of scalars and flat lists."""
    lines = []
    for table, body in data.items():
        if lines:
            lines.append("")
        lines.append(f"[{table}]")
        for key, value in body.items():
            lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"
