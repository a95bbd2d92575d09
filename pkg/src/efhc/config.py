"""Flat key=value experiment configuration.

One key per line, ``#`` starts a comment, unknown and duplicate keys are
errors.  The same registry drives parsing, validation, the generated
reference template, and the resolved per-run snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Any

DATASET_ENV = "EFHC_DATA_DIR"


class ConfigError(ValueError):
    """Configuration file could not be parsed or validated."""


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_int_list(raw: str) -> list[int]:
    return [int(p) for p in raw.split(",") if p.strip()]


def _parse_str_list(raw: str) -> list[str]:
    return [p.strip() for p in raw.split(",") if p.strip()]


@dataclass
class ExperimentConfig:
    """Everything a suite run needs; field names double as config keys."""

    task: str = "quadratic"
    m: int = 10
    n: int = 10
    heterogeneity: float = 1.0
    samples_per_device: int = 0
    dataset_dir: str = ""
    labels_per_device: int = 1
    topology: str = "static"
    connectivity: float = 0.4
    connectivity_as_density: bool = False
    b1: int = 1
    subset_prob: float = 0.5
    policies: list[str] = field(default_factory=lambda: ["efhc"])
    r: float = 50.0
    rg_prob: float = 0.0
    step: str = "diminishing"
    alpha: float = 0.01
    alpha0: float = 0.1
    step_gamma: float = 1.0
    theta: float = 0.5
    gamma_mode: str = "step"
    gamma_value: float = 1.0
    K: int = 1000
    seeds: list[int] = field(default_factory=lambda: [1])
    batch_size: int = 0
    b_M: float = 5000.0
    sigma_N: float = 0.9
    inclusive_trigger: bool = True
    enforce_B2: bool = False
    B2: int = 50
    count_connection_exchanges: bool = True
    per_device_init: bool = False
    init_scale: float = 1.0
    eval_every: int = 100


_HELP = {
    "task": "objective family: quadratic | fmnist",
    "m": "number of devices",
    "n": "model dimension (quadratic task)",
    "heterogeneity": "device disagreement level for the quadratic task",
    "samples_per_device": "local sample count for the quadratic task, 0 means n",
    "dataset_dir": f"directory with IDX files (fmnist task); falls back to ${DATASET_ENV}",
    "labels_per_device": "distinct labels per device in the fmnist partition",
    "topology": "schedule mode: static | cyclic | random-subset",
    "connectivity": "geometric-graph radius, or edge density with connectivity_as_density",
    "connectivity_as_density": "read connectivity as target edge density instead of radius",
    "b1": "window length with a guaranteed connected snapshot union",
    "subset_prob": "edge keep probability for the random-subset schedule",
    "policies": "comma list of broadcast policies: efhc | gt | zt | rg",
    "r": "trigger threshold scale for efhc and gt",
    "rg_prob": "broadcast probability for rg, 0 means 1/m",
    "step": "step-size schedule: diminishing | constant",
    "alpha": "constant step size",
    "alpha0": "diminishing schedule numerator",
    "step_gamma": "diminishing schedule time scale",
    "theta": "diminishing schedule exponent, in [0.5, 1]",
    "gamma_mode": "trigger decay: step (follow the step size) | constant",
    "gamma_value": "trigger decay value when gamma_mode = constant",
    "K": "iterations per run",
    "seeds": "comma list of run seeds",
    "batch_size": "minibatch size per device, 0 means exact gradients",
    "b_M": "nominal bandwidth",
    "sigma_N": "relative bandwidth spread, in [0, 1)",
    "inclusive_trigger": "broadcast when drift equals the threshold exactly",
    "enforce_B2": "force a broadcast from any device silent for B2 iterations",
    "B2": "maximum allowed silence when enforce_B2 is on",
    "count_connection_exchanges": "charge connection exchanges in the transmission score",
    "per_device_init": "draw a separate starting point per device",
    "init_scale": "scale of the starting-point draw",
    "eval_every": "iterations between accuracy evaluations (classification tasks)",
}

_PARSERS = {
    str: lambda raw: raw.strip(),
    int: int,
    float: float,
    bool: _parse_bool,
    list[str]: _parse_str_list,
    list[int]: _parse_int_list,
}

_FIELD_TYPES = {
    "policies": list[str],
    "seeds": list[int],
}


def _field_type(f) -> Any:
    return _FIELD_TYPES.get(f.name, f.type if not isinstance(f.type, str) else {
        "str": str, "int": int, "float": float, "bool": bool,
        "list[str]": list[str], "list[int]": list[int],
    }[f.type])


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    known = {f.name: f for f in fields(ExperimentConfig)}
    seen: dict[str, int] = {}
    values: dict[str, Any] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw_line!r}")
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(
                f"{source}:{lineno}: duplicate key {key!r}, first set on line {seen[key]}"
            )
        seen[key] = lineno
        parser = _PARSERS[_field_type(known[key])]
        try:
            values[key] = parser(raw_value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    cfg = ExperimentConfig(**values)
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def validate_config(cfg: ExperimentConfig) -> None:
    def fail(msg: str) -> None:
        raise ConfigError(msg)

    if cfg.task not in ("quadratic", "fmnist"):
        fail(f"task must be quadratic or fmnist, got {cfg.task!r}")
    if cfg.m < 2:
        fail(f"m must be at least 2, got {cfg.m}")
    if cfg.n < 1:
        fail(f"n must be at least 1, got {cfg.n}")
    if cfg.heterogeneity < 0:
        fail(f"heterogeneity must be non-negative, got {cfg.heterogeneity}")
    if cfg.samples_per_device < 0:
        fail(f"samples_per_device must be non-negative, got {cfg.samples_per_device}")
    if cfg.labels_per_device < 1:
        fail(f"labels_per_device must be at least 1, got {cfg.labels_per_device}")
    if cfg.topology not in ("static", "cyclic", "random-subset"):
        fail(f"topology must be static, cyclic or random-subset, got {cfg.topology!r}")
    if cfg.connectivity <= 0:
        fail(f"connectivity must be positive, got {cfg.connectivity}")
    if cfg.b1 < 1:
        fail(f"b1 must be at least 1, got {cfg.b1}")
    if not (0 < cfg.subset_prob <= 1):
        fail(f"subset_prob must be in (0, 1], got {cfg.subset_prob}")
    if not cfg.policies:
        fail("policies must name at least one policy")
    for p in cfg.policies:
        if p not in ("efhc", "gt", "zt", "rg"):
            fail(f"unknown policy {p!r}, expected efhc, gt, zt or rg")
    if len(set(cfg.policies)) != len(cfg.policies):
        fail("policies must not repeat")
    if any(p in ("efhc", "gt") for p in cfg.policies) and cfg.r <= 0:
        fail(f"r must be positive, got {cfg.r}")
    if cfg.rg_prob < 0 or cfg.rg_prob > 1:
        fail(f"rg_prob must be in [0, 1], got {cfg.rg_prob}")
    if cfg.step not in ("diminishing", "constant"):
        fail(f"step must be diminishing or constant, got {cfg.step!r}")
    if cfg.step == "constant" and cfg.alpha <= 0:
        fail(f"alpha must be positive, got {cfg.alpha}")
    if cfg.step == "diminishing":
        if cfg.alpha0 <= 0:
            fail(f"alpha0 must be positive, got {cfg.alpha0}")
        if cfg.step_gamma <= 0:
            fail(f"step_gamma must be positive, got {cfg.step_gamma}")
        if not (0.5 <= cfg.theta <= 1.0):
            fail(f"theta must be in [0.5, 1], got {cfg.theta}")
    if cfg.gamma_mode not in ("step", "constant"):
        fail(f"gamma_mode must be step or constant, got {cfg.gamma_mode!r}")
    if cfg.gamma_mode == "constant" and cfg.gamma_value <= 0:
        fail(f"gamma_value must be positive, got {cfg.gamma_value}")
    if cfg.K < 0:
        fail(f"K must be non-negative, got {cfg.K}")
    if not cfg.seeds:
        fail("seeds must name at least one seed")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        fail("seeds must not repeat")
    if cfg.batch_size < 0:
        fail(f"batch_size must be non-negative, got {cfg.batch_size}")
    if cfg.b_M <= 0:
        fail(f"b_M must be positive, got {cfg.b_M}")
    if not (0 <= cfg.sigma_N < 1):
        fail(f"sigma_N must be in [0, 1), got {cfg.sigma_N}")
    if cfg.enforce_B2 and cfg.B2 < 1:
        fail(f"B2 must be at least 1, got {cfg.B2}")
    if cfg.per_device_init and cfg.init_scale <= 0:
        fail(f"init_scale must be positive, got {cfg.init_scale}")
    if cfg.eval_every < 0:
        fail(f"eval_every must be non-negative, got {cfg.eval_every}")
    if cfg.connectivity_as_density and cfg.connectivity > 1:
        fail(f"edge density must be in (0, 1], got {cfg.connectivity}")


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)


def config_text(cfg: ExperimentConfig, *, comments: bool = False) -> str:
    """Render a config back to the flat file format, one key per line."""
    lines = []
    for f in fields(ExperimentConfig):
        if comments:
            lines.append(f"# {_HELP[f.name]}")
        lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
        if comments:
            lines.append("")
    return "\n".join(lines).rstrip() + "\n"
