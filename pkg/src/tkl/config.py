"""Experiment configuration: a sectioned ``key = value`` document.

Example::

    [potential]
    name = quadratic
    c = 1.0
    dim = 1

    [scheme]
    name = obabo
    lambda = 1e-3
    gamma = auto

    [run]
    seed = 42

``gamma = auto`` resolves to the smallest friction of the scheme's
contraction regime. Regime inequalities are checked at load time.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

from .potential import PotentialSpec, builtin_potential
from .schemes import SCHEMES, SchemeParams, auto_gamma, check_regime, scheme_params
from .taming import TamedDrift

#: allowed keys per section; a value of None marks a required key
SCHEMA = {
    "potential": {"name": None, "c": "1.0", "dim": "1"},
    "scheme": {"name": None, "lambda": None, "gamma": "auto", "m_override": ""},
    "run": {
        "seed": None,
        "n_steps": "10000",
        "n_chains": "10000",
        "n_pairs": "100",
        "n_points": "1000",
        "n_taming": "100000",
        "stride": "100",
        "eps": "0.05",
        "init": "target",
        "out": ".",
    },
}


class ConfigError(ValueError):
    """Malformed, incomplete or inconsistent configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    potential_name: str
    c: float
    dim: int
    scheme: str
    lam: float
    gamma: float
    gamma_auto: bool
    m_override: Optional[float]
    seed: int
    n_steps: int
    n_chains: int
    n_pairs: int
    n_points: int
    n_taming: int
    stride: int
    eps: float
    init: str
    out: str
    regimes_checked: tuple = field(default=())

    @cached_property
    def potential(self) -> PotentialSpec:
        return builtin_potential(self.potential_name, self.dim, self.c)

    @cached_property
    def tamed(self) -> TamedDrift:
        return TamedDrift.build(self.potential, self.lam, self.m_override)

    @cached_property
    def params(self) -> SchemeParams:
        return scheme_params(self.tamed, self.gamma)

    def header(self) -> dict:
        """Derived constants echoed at the top of every artifact."""
        td = self.tamed
        return {
            "potential": self.potential_name,
            "c": self.c,
            "dim": self.dim,
            "scheme": self.scheme,
            "seed": self.seed,
            "r_lambda": td.r_lambda,
            "R_lambda": td.R_lambda,
            "m_overridden": td.m_overridden,
            **self.params.header(),
            "gamma_auto": self.gamma_auto,
            "regimes_checked": "; ".join(self.regimes_checked),
        }


def _get(raw: dict, section: str, key: str) -> str:
    value = raw[section].get(key, SCHEMA[section][key])
    if value is None or value == "" and SCHEMA[section][key] is None:
        raise ConfigError(f"missing required field [{section}] {key}")
    return value


def _num(text: str, kind, where: str):
    try:
        value = kind(text)
    except ValueError:
        raise ConfigError(f"{where}: expected {kind.__name__}, got {text!r}") from None
    if kind is float and not math.isfinite(value):
        raise ConfigError(f"{where}: value must be finite, got {text!r}")
    return value


def _positive(value, where: str):
    if not value > 0:
        raise ConfigError(f"{where}: must be positive, got {value}")
    return value


def parse_config(text: str, seed_override: Optional[int] = None) -> ExperimentConfig:
    """Parse and validate a configuration document.

    Raises :class:`ConfigError` for unknown sections or keys, duplicates
    (with the line number), missing required fields and malformed values,
    and :class:`~tkl.taming.RegimeError` naming the violated regime condition.
    """
    parser = configparser.ConfigParser(strict=True, interpolation=None, empty_lines_in_values=False)
    try:
        parser.read_string(text, source="<config>")
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(f"duplicate entry at line {exc.lineno}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    raw: dict = {s: {} for s in SCHEMA}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]; expected one of {sorted(SCHEMA)}")
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]; allowed: {sorted(SCHEMA[section])}")
            raw[section][key] = value.strip()

    name = _get(raw, "potential", "name")
    c = _positive(_num(_get(raw, "potential", "c"), float, "[potential] c"), "[potential] c")
    dim = _positive(_num(_get(raw, "potential", "dim"), int, "[potential] dim"), "[potential] dim")
    scheme = _get(raw, "scheme", "name")
    if scheme not in SCHEMES:
        raise ConfigError(f"[scheme] name: unknown scheme {scheme!r}; expected one of {SCHEMES}")
    lam = _positive(_num(_get(raw, "scheme", "lambda"), float, "[scheme] lambda"), "[scheme] lambda")
    m_text = _get(raw, "scheme", "m_override")
    m_override = None
    if m_text:
        m_override = _positive(_num(m_text, float, "[scheme] m_override"), "[scheme] m_override")

    run = {}
    for key in ("n_steps", "n_chains", "n_pairs", "n_points", "n_taming", "stride"):
        run[key] = _positive(_num(_get(raw, "run", key), int, f"[run] {key}"), f"[run] {key}")
    seed = _num(_get(raw, "run", "seed"), int, "[run] seed") if seed_override is None else int(seed_override)
    if seed < 0:
        raise ConfigError(f"[run] seed: must be nonnegative, got {seed}")
    eps = _positive(_num(_get(raw, "run", "eps"), float, "[run] eps"), "[run] eps")
    init = _get(raw, "run", "init")
    if init not in ("target", "gaussian"):
        raise ConfigError(f"[run] init: expected 'target' or 'gaussian', got {init!r}")

    try:
        potential = builtin_potential(name, dim, c)
    except ValueError as exc:
        raise ConfigError(f"[potential] {exc}") from None
    td = TamedDrift.build(potential, lam, m_override)

    g_text = _get(raw, "scheme", "gamma")
    gamma_auto = g_text == "auto"
    gamma = auto_gamma(scheme, td.M_lambda) if gamma_auto else _num(g_text, float, "[scheme] gamma")
    _positive(gamma, "[scheme] gamma")
    checked = check_regime(scheme, scheme_params(td, gamma), "w2")

    return ExperimentConfig(
        potential_name=name, c=c, dim=dim, scheme=scheme, lam=lam, gamma=gamma, gamma_auto=gamma_auto,
        m_override=m_override, seed=seed, eps=eps, init=init, out=_get(raw, "run", "out"),
        regimes_checked=tuple(checked), **run,
    )


def load_config(path: str, seed_override: Optional[int] = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), seed_override)
