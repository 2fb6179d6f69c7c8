"""Scenario configuration: flat ``key = value`` files with dotted keys.

Example::

    # Fig. 7 style ROC run
    scenario = roc-snr-5
    trials = 2000
    network.n_sus = 20
    channel.snr_db = -5
    detectors = ED, WSED, IED, msED, EM-mWSED
    sweep.L = 8, 12

Lists are comma separated.  ``#`` and ``;`` start comment lines.
"""

from __future__ import annotations

import configparser
import itertools
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..channel import ChannelConfig
from ..consensus import edge_count
from ..detectors import DETECTORS, DetectorConfig, WeightScheme
from ..hmm import EM_MAX_ITER, EM_TOL


class ConfigError(ValueError):
    pass


def default_pf_grid() -> tuple[float, ...]:
    """Log-spaced near zero (where near-perfect detectors separate), linear elsewhere."""
    grid = np.concatenate([np.logspace(-4, -1, 16)[:-1], np.linspace(0.1, 0.99, 90)])
    return tuple(float(v) for v in np.round(grid, 10))


@dataclass(frozen=True)
class SweepPoint:
    """One combination of swept values; ``index`` keys its random streams."""

    index: int
    n_sus: int
    connectivity: float
    channel: ChannelConfig


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "default"
    seed: int = 0
    trials: int = 2000
    calibration_trials: int | None = None
    chunk_size: int = 100
    workers: int = 1
    window_length: int = 150
    detectors: tuple[str, ...] = ("ED", "WSED", "mWSED")
    pf_grid: tuple[float, ...] = field(default_factory=default_pf_grid)
    pf_target: float | None = None
    n_sus: int = 10
    connectivity: float = 0.2
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    wsed_past_samples: int = 3
    msed_slots: int = 2
    mwsed_scheme: WeightScheme = WeightScheme.UNIFORM
    em_mwsed_scheme: WeightScheme = WeightScheme.EXPONENTIAL
    consensus_tol: float = 0.01
    consensus_max_iter: int = 1000
    em_tol: float = EM_TOL
    em_max_iter: int = EM_MAX_ITER
    sweep_snr_db: tuple[float, ...] = ()
    sweep_L: tuple[int, ...] = ()
    sweep_n_sus: tuple[int, ...] = ()
    sweep_connectivity: tuple[float, ...] = ()
    sweep_alpha_beta: tuple[float, ...] = ()
    dist_C: tuple[int, ...] = (5, 10, 20, 40)
    dist_bins: int = 60

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.calibration_trials is not None and self.calibration_trials < 1:
            raise ConfigError("calibration_trials must be >= 1")
        if self.chunk_size < 1 or self.workers < 1:
            raise ConfigError("chunk_size and workers must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.window_length < 1:
            raise ConfigError("window_length must be >= 1")
        if not self.pf_grid or any(not 0 < p < 1 for p in self.pf_grid):
            raise ConfigError("pf_grid must be a nonempty list of values in (0, 1)")
        if self.pf_target is not None and not 0 < self.pf_target < 1:
            raise ConfigError("pf_target must lie in (0, 1)")
        if not self.consensus_tol > 0 or self.consensus_max_iter < 0:
            raise ConfigError("consensus.tol must be positive and consensus.max_iter >= 0")
        if not self.em_tol > 0 or self.em_max_iter < 0:
            raise ConfigError("em.tol must be positive and em.max_iter >= 0")
        if any(c < 1 for c in self.dist_C) or self.dist_bins < 1:
            raise ConfigError("dist.C entries and dist.bins must be >= 1")
        try:
            for name in self.detectors:
                self.detector(name)
            for p in self.points():
                if p.n_sus < 1:
                    raise ConfigError("n_sus must be >= 1")
                if p.n_sus > 1 and edge_count(p.n_sus, p.connectivity) < p.n_sus - 1:
                    raise ConfigError(f"connectivity {p.connectivity} cannot connect {p.n_sus} SUs")
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def n_calibration(self) -> int:
        return self.trials if self.calibration_trials is None else self.calibration_trials

    def detector(self, name: str) -> DetectorConfig:
        scheme = {"mWSED": self.mwsed_scheme, "EM-mWSED": self.em_mwsed_scheme}.get(name)
        return DetectorConfig(name, window_length=self.window_length,
                              wsed_past_samples=self.wsed_past_samples,
                              msed_slots=self.msed_slots, weight_scheme=scheme)

    def points(self) -> list[SweepPoint]:
        """Cartesian product of the sweep lists; unset lists use the base value."""
        axes = (self.sweep_n_sus or (self.n_sus,),
                self.sweep_connectivity or (self.connectivity,),
                self.sweep_alpha_beta or (None,),
                self.sweep_L or (self.channel.L,),
                self.sweep_snr_db or (self.channel.snr_db,))
        out = []
        for i, (n, c, ab, L, snr) in enumerate(itertools.product(*axes)):
            ch = replace(self.channel, L=int(L), snr_db=float(snr))
            if ab is not None:
                ch = replace(ch, alpha=float(ab), beta=float(ab))
            out.append(SweepPoint(i, int(n), float(c), ch))
        return out


# config key -> (ScenarioConfig field, parser)
def _int(v):
    f = float(v)
    if not f.is_integer():
        raise ValueError(f"expected an integer, got {v!r}")
    return int(f)


def _float(v):
    return float(v)


def _list(conv):
    def parse(v):
        return tuple(conv(p.strip()) for p in v.split(",") if p.strip())
    return parse


def _pf_grid(v):
    return default_pf_grid() if v.strip() == "default" else _list(_float)(v)


def _optional_float(v):
    return None if v.strip().lower() in ("", "none") else float(v)


KEYS = {
    "scenario": ("scenario", str),
    "seed": ("seed", _int),
    "trials": ("trials", _int),
    "calibration_trials": ("calibration_trials", _int),
    "chunk_size": ("chunk_size", _int),
    "workers": ("workers", _int),
    "window_length": ("window_length", _int),
    "detectors": ("detectors", _list(str)),
    "pf_grid": ("pf_grid", _pf_grid),
    "pf_target": ("pf_target", _optional_float),
    "network.n_sus": ("n_sus", _int),
    "network.connectivity": ("connectivity", _float),
    "detector.wsed_past_samples": ("wsed_past_samples", _int),
    "detector.msed_slots": ("msed_slots", _int),
    "detector.mwsed_scheme": ("mwsed_scheme", WeightScheme),
    "detector.em_mwsed_scheme": ("em_mwsed_scheme", WeightScheme),
    "consensus.tol": ("consensus_tol", _float),
    "consensus.max_iter": ("consensus_max_iter", _int),
    "em.tol": ("em_tol", _float),
    "em.max_iter": ("em_max_iter", _int),
    "sweep.snr_db": ("sweep_snr_db", _list(_float)),
    "sweep.L": ("sweep_L", _list(_int)),
    "sweep.n_sus": ("sweep_n_sus", _list(_int)),
    "sweep.connectivity": ("sweep_connectivity", _list(_float)),
    "sweep.alpha_beta": ("sweep_alpha_beta", _list(_float)),
    "dist.C": ("dist_C", _list(_int)),
    "dist.bins": ("dist_bins", _int),
}
CHANNEL_KEYS = {"channel.L": _int, "channel.snr_db": _float, "channel.noise_power": _float,
                "channel.alpha": _float, "channel.beta": _float}


def parse_config_text(text: str) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), delimiters=("=",))
    parser.optionxform = str  # keys are case sensitive (channel.L)
    try:
        parser.read_string("[scenario]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if len(parser.sections()) != 1:
        raise ConfigError("sections are not supported; use dotted keys such as channel.L")
    return dict(parser["scenario"])


def build_config(values: dict[str, str], base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Apply string-valued settings on top of ``base`` (defaults if omitted)."""
    base = base or ScenarioConfig()
    kwargs = {}
    channel = {}
    for key, raw in values.items():
        try:
            if key in KEYS:
                name, conv = KEYS[key]
                kwargs[name] = conv(raw)
            elif key in CHANNEL_KEYS:
                channel[key.split(".", 1)[1]] = CHANNEL_KEYS[key](raw)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    try:
        if channel:
            kwargs["channel"] = replace(base.channel, **channel)
        return replace(base, **kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return build_config(parse_config_text(text), base)


def config_to_text(cfg: ScenarioConfig) -> str:
    """Serialize back to the key = value format (round-trips through load_config)."""
    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(fmt(x) for x in v)
        if isinstance(v, WeightScheme):
            return v.value
        if isinstance(v, float):
            return repr(v) if math.isfinite(v) else str(v)
        return "none" if v is None else str(v)

    by_field = {name: key for key, (name, _) in KEYS.items()}
    lines = []
    for f in fields(cfg):
        if f.name == "channel":
            for key in CHANNEL_KEYS:
                lines.append(f"{key} = {fmt(getattr(cfg.channel, key.split('.', 1)[1]))}")
        elif f.name in by_field and not (f.name == "calibration_trials" and cfg.calibration_trials is None):
            lines.append(f"{by_field[f.name]} = {fmt(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


__all__ = ["ConfigError", "ScenarioConfig", "SweepPoint", "build_config", "config_to_text",
           "default_pf_grid", "load_config", "parse_config_text", "DETECTORS"]
