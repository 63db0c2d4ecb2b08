"""Experiment configuration: INI files with ``[model]``, ``[sim]``, ``[experiment]``, ``[output]``.

Every key is optional; unknown sections or keys are rejected. ``[run]`` and
``[result]`` sections, written into run-metadata files, are ignored on load
so a metadata file can be fed back as a config.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from typing import Optional

from .catalog import BUILTINS
from .particle import InitialLaw, SimConfig
from .switching import SwitchMode

KINDS = ("moment-decay", "contraction", "contraction-switching", "picard", "invariant", "verify")
IGNORED_SECTIONS = ("run", "result")


class ConfigError(ValueError):
    pass


def _float(s):
    return float(s)


def _opt_float(s):
    s = s.strip()
    return None if s.lower() in ("", "none") else float(s)


def _int(s):
    return int(s)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "yes", "true", "on"):
        return True
    if v in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    s = s.strip()
    return None if s.lower() in ("", "none") else tuple(float(v) for v in s.split(","))


def _str(s):
    return s.strip()


def _opt_str(s):
    s = s.strip()
    return None if s.lower() in ("", "none") else s


# section -> key -> (attribute, parser)
SCHEMA = {
    "model": {
        "name": ("model", _str),
        "beta": ("beta", _float),
        "rates": ("rates", _opt_str),
    },
    "sim": {
        "dt": ("dt", _float),
        "T": ("T", _opt_float),
        "particles": ("N", _int),
        "seed": ("seed", _int),
        "switch_mode": ("mode", _str),
        "trunc": ("trunc", _opt_float),
        "record_every": ("record_every", _float),
        "record_times": ("record_times", _floats),
        "threads": ("workers", _int),
    },
    "experiment": {
        "kind": ("kind", _str),
        "init": ("init", _opt_str),
        "init_regime": ("init_regime", _opt_str),
        "init2": ("init2", _opt_str),
        "init2_regime": ("init2_regime", _opt_str),
        "rounds": ("rounds", _int),
        "fit_start": ("fit_start", _opt_float),
        "fit_end": ("fit_end", _opt_float),
        "slope_tolerance": ("slope_tolerance", _opt_float),
        "assert_slope_max": ("assert_slope_max", _opt_float),
        "assert_bound_delta": ("assert_bound_delta", _opt_float),
        "assert_agreement": ("assert_agreement", _opt_float),
        "assert_ci_negative": ("assert_ci_negative", _bool),
        "assert_decreasing": ("assert_decreasing", _bool),
        "theta_c": ("theta_c", _opt_float),
        "probes": ("probes", _int),
    },
    "output": {
        "dir": ("out", _str),
        "prefix": ("prefix", _opt_str),
        "snapshot": ("snapshot", _bool),
    },
}

# per-kind defaults: horizon, rates, initial laws
KIND_DEFAULTS = {
    "moment-decay": dict(T=4.0, rates="default", init="uniform(-1, 1)", init_regime="uniform"),
    "contraction": dict(T=3.0, rates="none", init="point(2)", init_regime="1", init2="point(-2)", init2_regime="1"),
    "contraction-switching": dict(
        T=3.0, rates="symmetric", init="point(1)", init_regime="1", init2="point(-1)", init2_regime="2"
    ),
    "invariant": dict(
        T=3.0, rates="default", init="gaussian(1, 0.5)", init_regime="1", init2="gaussian(-1, 0.5)", init2_regime="2"
    ),
    "picard": dict(T=0.5, rates="default", init="uniform(-1, 1)", init_regime="uniform"),
    "verify": dict(T=0.0, rates="default"),
}


@dataclass
class ExperimentConfig:
    """Validated experiment settings; ``None`` fields take per-kind defaults."""

    kind: str = "moment-decay"
    model: str = "example1"
    beta: float = 0.5
    rates: Optional[str] = None
    dt: float = 1e-3
    T: Optional[float] = None
    N: int = 5000
    seed: int = 0
    mode: str = "thinning"
    trunc: Optional[float] = None
    record_every: float = 0.05
    record_times: Optional[tuple] = None
    workers: int = 1
    init: Optional[str] = None
    init_regime: Optional[str] = None
    init2: Optional[str] = None
    init2_regime: Optional[str] = None
    rounds: int = 4
    fit_start: Optional[float] = None
    fit_end: Optional[float] = None
    slope_tolerance: Optional[float] = None
    assert_slope_max: Optional[float] = None
    assert_bound_delta: Optional[float] = 0.15
    assert_agreement: Optional[float] = 0.99
    assert_ci_negative: bool = True
    assert_decreasing: bool = True
    theta_c: Optional[float] = None
    probes: int = 1000
    out: str = "mvx-out"
    prefix: Optional[str] = None
    snapshot: bool = False

    def resolved(self) -> "ExperimentConfig":
        """Copy with kind defaults filled in and all constraints checked."""
        cfg = replace(self)
        if cfg.kind not in KINDS:
            raise ConfigError(f"kind: unknown experiment {cfg.kind!r}; choose from {', '.join(KINDS)}")
        for key, value in KIND_DEFAULTS[cfg.kind].items():
            if getattr(cfg, key) is None:
                setattr(cfg, key, value)
        if cfg.model not in BUILTINS:
            raise ConfigError(f"name: unknown model {cfg.model!r}; builtins are {', '.join(sorted(BUILTINS))}")
        if cfg.rates not in ("default", "symmetric", "none"):
            raise ConfigError(f"rates: expected default, symmetric or none, got {cfg.rates!r}")
        if cfg.model == "example1" and cfg.kind in ("contraction", "contraction-switching", "invariant"):
            if not -1.0 < cfg.beta < 1.0:
                raise ConfigError(f"beta: contraction experiments need beta in (-1, 1), got {cfg.beta}")
        if cfg.rounds < 1:
            raise ConfigError("rounds: must be at least 1")
        if cfg.probes < 2:
            raise ConfigError("probes: need at least 2")
        try:
            SwitchMode.parse(cfg.mode)
        except ValueError as exc:
            raise ConfigError(f"switch_mode: {exc}") from None
        for key in ("init", "init2"):
            text = getattr(cfg, key)
            if text is not None:
                try:
                    InitialLaw.parse(text, getattr(cfg, key + "_regime") or "1")
                except ValueError as exc:
                    raise ConfigError(f"{key}: {exc}") from None
        try:
            cfg.sim_config()
        except ValueError as exc:
            raise ConfigError(f"sim: {exc}") from None
        return cfg

    def model_params(self) -> dict:
        params = {"rates": self.rates}
        if self.model == "example1":
            params["beta"] = self.beta
        return params

    def sim_config(self, snapshots: bool = False) -> SimConfig:
        return SimConfig(
            dt=self.dt, T=self.T, N=self.N, seed=self.seed, mode=self.mode, trunc=self.trunc,
            record_times=self.record_times, record_every=self.record_every,
            snapshots=snapshots, workers=self.workers,
        )

    def initial_laws(self):
        first = InitialLaw.parse(self.init, self.init_regime or "1")
        second = None if self.init2 is None else InitialLaw.parse(self.init2, self.init2_regime or "1")
        return first, second

    def to_ini(self) -> str:
        """Echo as INI text that ``load_config`` reads back to an equal config."""
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key, (attr, _) in keys.items():
                lines.append(f"{key} = {_render(getattr(self, attr))}")
            lines.append("")
        return "\n".join(lines)


def _render(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        where = f"{source}, line {line}" if line is not None else source
        raise ConfigError(f"{where}: cannot parse: {exc.message if hasattr(exc, 'message') else exc}") from None
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section in IGNORED_SECTIONS:
            continue
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key '{key}' in [{section}]")
            attr, conv = SCHEMA[section][key]
            try:
                setattr(cfg, attr, conv(raw))
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for '{key}' in [{section}]: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate an INI experiment file, filling defaults."""
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, str(path)).resolved()
