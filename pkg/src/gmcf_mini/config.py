"""Run configuration: INI-style sections, ``key = value`` pairs, ``#`` comments.

Sections: [runtime] (mode, models, step counts, seed, output), [les] (domain
and physics), [sor] (scheme, omega, iterations, workers), [driver] (profile
parameters), [audit] (padding factors).  Unknown sections or keys are
rejected with the offending line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError

MODES = ("coupled", "les-standalone", "sor-bench", "boundary-audit")

_SCHEMA: dict[str, dict[str, type]] = {
    "runtime": {
        "mode": str,
        "models": str,
        "n_coupled_intervals": int,
        "n_steps": int,
        "seed": int,
        "worker_mode": str,
        "out_dir": str,
    },
    "les": {"im": int, "jm": int, "km": int, "h": float, "vn": float, "cs": float},
    "sor": {"scheme": str, "omega": float, "n_iter": int, "workers": int},
    "driver": {
        "u_star": float,
        "z0": float,
        "level_spacing": float,
        "gust_amplitude": float,
        "gust_period": float,
    },
    "audit": {"nthreads": int, "nunits": int},
}


@dataclass
class RunConfig:
    mode: str | None = None
    models: list[tuple[str, float]] = field(default_factory=list)
    n_coupled_intervals: int = 5
    n_steps: int = 100
    seed: int = 42
    worker_mode: str = "threads"
    out_dir: str = "out"
    im: int = 16
    jm: int = 16
    km: int = 8
    h: float = 2.0
    vn: float = 0.8
    cs: float = 0.14
    sor_scheme: str = "redblack"
    sor_omega: float | None = None
    sor_n_iter: int = 50
    sor_workers: int = 1
    u_star: float = 0.05
    z0: float = 0.1
    level_spacing: float = 2.0
    gust_amplitude: float = 0.2
    gust_period: float = 600.0
    nthreads: int = 32
    nunits: int = 15


_FIELD_BY_KEY = {
    ("runtime", "mode"): "mode",
    ("runtime", "models"): "models",
    ("runtime", "n_coupled_intervals"): "n_coupled_intervals",
    ("runtime", "n_steps"): "n_steps",
    ("runtime", "seed"): "seed",
    ("runtime", "worker_mode"): "worker_mode",
    ("runtime", "out_dir"): "out_dir",
    ("les", "im"): "im",
    ("les", "jm"): "jm",
    ("les", "km"): "km",
    ("les", "h"): "h",
    ("les", "vn"): "vn",
    ("les", "cs"): "cs",
    ("sor", "scheme"): "sor_scheme",
    ("sor", "omega"): "sor_omega",
    ("sor", "n_iter"): "sor_n_iter",
    ("sor", "workers"): "sor_workers",
    ("driver", "u_star"): "u_star",
    ("driver", "z0"): "z0",
    ("driver", "level_spacing"): "level_spacing",
    ("driver", "gust_amplitude"): "gust_amplitude",
    ("driver", "gust_period"): "gust_period",
    ("audit", "nthreads"): "nthreads",
    ("audit", "nunits"): "nunits",
}


def _parse_models(raw: str, lineno: int) -> list[tuple[str, float]]:
    out = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigError(f"line {lineno}: model entry {part!r} must be name:dt_seconds")
        name, _, dt = part.partition(":")
        try:
            out.append((name.strip(), float(dt)))
        except ValueError:
            raise ConfigError(f"line {lineno}: bad dt in model entry {part!r}") from None
    if not out:
        raise ConfigError(f"line {lineno}: empty model list")
    return out


def parse_config(text: str) -> RunConfig:
    """Parse and validate configuration text; diagnostics name key and line."""
    cfg = RunConfig()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in section [{section}]")
        if key == "models":
            cfg.models = _parse_models(value, lineno)
            continue
        want = _SCHEMA[section][key]
        try:
            converted = want(value)
        except ValueError:
            raise ConfigError(
                f"line {lineno}: key {key!r} expects {want.__name__}, got {value!r}"
            ) from None
        setattr(cfg, _FIELD_BY_KEY[(section, key)], converted)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.mode is not None and cfg.mode not in MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}; expected one of {MODES}")
    if cfg.sor_scheme not in ("redblack", "twinned"):
        raise ConfigError(f"unknown sor scheme {cfg.sor_scheme!r}")
    if cfg.sor_scheme == "redblack" and cfg.sor_workers > 1:
        raise ConfigError("unsupported combination: scheme=redblack with workers > 1")
    if cfg.sor_workers < 1 or cfg.sor_n_iter < 1:
        raise ConfigError("sor workers and n_iter must be >= 1")
    if min(cfg.im, cfg.jm, cfg.km) < 1:
        raise ConfigError("domain dimensions must be >= 1")
    if cfg.worker_mode not in ("threads", "sequential"):
        raise ConfigError(f"unknown worker_mode {cfg.worker_mode!r}")
    if cfg.mode is not None:
        validate_for_mode(cfg)


def validate_for_mode(cfg: RunConfig) -> None:
    """Mode-specific consistency (also applied after CLI overrides)."""
    if cfg.mode == "coupled":
        if len(cfg.models) < 2:
            raise ConfigError("coupled mode requires at least 2 models")
        names = sorted(name for name, _ in cfg.models)
        if names != ["driver", "les"]:
            raise ConfigError(f"coupled mode expects models driver and les, got {names}")
        if cfg.n_coupled_intervals < 1:
            raise ConfigError("n_coupled_intervals must be >= 1")
    elif cfg.mode == "les-standalone":
        if cfg.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        if [name for name, _ in cfg.models] != ["les"]:
            raise ConfigError("les-standalone mode expects exactly one model named les")
