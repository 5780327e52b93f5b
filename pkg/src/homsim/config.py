"""JSON run configuration with strict validation.

Example (``simulate hom-scan``)::

    {
      "seed": 42,
      "emitters": [{"tau_r": 74, "brightness": 0.1}, {"tau_r": 74, "brightness": 0.1}],
      "experiment": {"pulse_period": 13000},
      "tune": {"indist": 0.65, "g_back": 0.51, "side_counts": 400},
      "scan": [-200, -100, 0, 100, 200],
      "correlator": {"window": 1000, "max_order": 10}
    }

Unknown keys are rejected. Errors name the offending field as a path such as
``emitters[0].tau_r``. Detunings are given in GHz and converted to rad/ps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from .emitter import EmitterParams
from .stream import (
    ConfigurationError,
    ExperimentConfig,
    pulses_for_side_counts,
    residual_for_g2,
    tune_hom_config,
)

GHZ_TO_RAD_PER_PS = 2.0 * math.pi * 1e-3

_EMITTER_KEYS = {"tau_r", "gamma_d", "detuning_ghz", "jitter_sigma", "brightness"}
_EXPERIMENT_KEYS = {
    "n_pulses",
    "pulse_period",
    "interferometer_delay",
    "background_rate",
    "two_photon_residual",
    "detector_resolution",
    "mode_match",
    "stray_pair_rate",
}
_TUNE_KEYS = {"g2", "indist", "g_back", "side_counts"}
_CORRELATOR_KEYS = {"window", "max_order", "pairing"}
_TOP_KEYS = {"seed", "emitters", "experiment", "tune", "scan", "correlator", "outputs"}
_OUTPUT_KEYS = {"tags", "peaks", "dip_scan", "summary", "wavepacket_scan"}


class ConfigError(ValueError):
    """Invalid run configuration; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class CorrelatorSettings:
    window: float = 1000.0
    max_order: int = 10
    pairing: str = "all"


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig
    seed: int = 0
    scan: tuple[float, ...] = ()
    correlator: CorrelatorSettings = CorrelatorSettings()
    outputs: tuple[tuple[str, str], ...] = ()

    @property
    def emitters(self) -> tuple[EmitterParams, ...]:
        return self.experiment.emitters

    def output(self, key: str, default: str) -> str:
        return dict(self.outputs).get(key, default)


def _check_keys(obj: Any, allowed: set[str], path: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(path, f"expected an object, got {type(obj).__name__}")
    for k in obj:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}" if path else k, "unknown key")
    return obj


def _number(obj: dict, key: str, path: str, default=None, integer: bool = False):
    if key not in obj:
        return default
    v = obj[key]
    where = f"{path}.{key}" if path else key
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(where, f"expected a number, got {json.dumps(v)}")
    if not math.isfinite(v):
        raise ConfigError(where, "must be finite")
    if integer:
        if int(v) != v:
            raise ConfigError(where, f"expected an integer, got {v}")
        return int(v)
    return float(v)


def _field_error(exc: ValueError, path: str, keys: set[str], rename: dict | None = None) -> ConfigError:
    """Map a dataclass validation message ('tau_r must be > 0 ...') to a field path."""
    msg = str(exc)
    head = msg.split()[0] if msg else ""
    head = (rename or {}).get(head, head)
    if head in keys:
        return ConfigError(f"{path}.{head}", msg)
    return ConfigError(path, msg)


def _emitter(obj: Any, path: str) -> EmitterParams:
    _check_keys(obj, _EMITTER_KEYS, path)
    if "tau_r" not in obj:
        raise ConfigError(f"{path}.tau_r", "missing required field")
    kw = {k: _number(obj, k, path) for k in ("tau_r", "gamma_d", "jitter_sigma", "brightness") if k in obj}
    if "detuning_ghz" in obj:
        kw["detuning"] = _number(obj, "detuning_ghz", path) * GHZ_TO_RAD_PER_PS
    try:
        return EmitterParams(**kw)
    except ValueError as exc:
        raise _field_error(exc, path, _EMITTER_KEYS, {"detuning": "detuning_ghz"}) from None


def parse_config(doc: Any) -> RunConfig:
    """Validate a decoded JSON document into a RunConfig."""
    _check_keys(doc, _TOP_KEYS, "")
    if "emitters" not in doc:
        raise ConfigError("emitters", "missing required field")
    if not isinstance(doc["emitters"], list) or not doc["emitters"]:
        raise ConfigError("emitters", "expected a non-empty list")
    emitters = tuple(_emitter(e, f"emitters[{i}]") for i, e in enumerate(doc["emitters"]))

    seed = _number(doc, "seed", "", default=0, integer=True)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", f"must be a 64-bit non-negative integer, got {seed}")

    exp = _check_keys(doc.get("experiment", {}), _EXPERIMENT_KEYS, "experiment")
    kw: dict[str, Any] = {}
    for k in _EXPERIMENT_KEYS - {"two_photon_residual", "n_pulses"}:
        v = _number(exp, k, "experiment")
        if v is not None:
            kw[k] = v
    if "n_pulses" in exp:
        kw["n_pulses"] = _number(exp, "n_pulses", "experiment", integer=True)
    if "two_photon_residual" in exp:
        r = exp["two_photon_residual"]
        if isinstance(r, list):
            kw["two_photon_residual"] = tuple(
                _number({"v": x}, "v", f"experiment.two_photon_residual[{i}]") for i, x in enumerate(r)
            )
        else:
            kw["two_photon_residual"] = _number(exp, "two_photon_residual", "experiment")

    tune = _check_keys(doc.get("tune", {}), _TUNE_KEYS, "tune")
    experiment = _build_experiment(emitters, kw, tune)

    scan = doc.get("scan", [])
    if not isinstance(scan, list):
        raise ConfigError("scan", "expected a list of delays in ps")
    scan = tuple(_number({"v": d}, "v", f"scan[{i}]") for i, d in enumerate(scan))

    corr = _check_keys(doc.get("correlator", {}), _CORRELATOR_KEYS, "correlator")
    settings = CorrelatorSettings(
        window=_number(corr, "window", "correlator", 1000.0),
        max_order=_number(corr, "max_order", "correlator", 10, integer=True),
        pairing=corr.get("pairing", "all"),
    )
    if settings.pairing not in ("all", "start-stop"):
        raise ConfigError("correlator.pairing", f"expected 'all' or 'start-stop', got {settings.pairing!r}")
    if not 0 < settings.window < experiment.pulse_period / 2:
        raise ConfigError("correlator.window", "must lie in (0, pulse_period / 2)")
    if settings.max_order < 2:
        raise ConfigError("correlator.max_order", "must be >= 2")

    outs = _check_keys(doc.get("outputs", {}), _OUTPUT_KEYS, "outputs")
    for k, v in outs.items():
        if not isinstance(v, str) or not v:
            raise ConfigError(f"outputs.{k}", "expected a file name")
    return RunConfig(experiment, seed, scan, settings, tuple(sorted(outs.items())))


def _build_experiment(emitters, kw: dict, tune: dict) -> ExperimentConfig:
    side = _number(tune, "side_counts", "tune")
    if side is not None and side <= 0:
        raise ConfigError("tune.side_counts", "must be > 0")
    if "g2" in tune:
        if len(emitters) != 1:
            raise ConfigError("tune.g2", "g2 tuning needs exactly one emitter")
        if "two_photon_residual" in kw:
            raise ConfigError("tune.g2", "conflicts with experiment.two_photon_residual")
        target = _number(tune, "g2", "tune")
        try:
            kw["two_photon_residual"] = residual_for_g2(target, emitters[0].brightness, kw.get("background_rate", 0.0))
        except ValueError as exc:
            raise ConfigError("tune.g2", str(exc)) from None
    if "indist" in tune or "g_back" in tune:
        if len(emitters) != 2 or emitters[0] != emitters[1]:
            raise ConfigError("tune.indist", "dip tuning needs two identical emitters")
        for k in ("stray_pair_rate", "mode_match"):
            if k in kw:
                raise ConfigError(f"experiment.{k}", "conflicts with tune.indist / tune.g_back")
        indist = _number(tune, "indist", "tune", 1.0)
        g_back = _number(tune, "g_back", "tune", 0.0)
        try:
            tuned = tune_hom_config(indist, g_back, emitters[0], 1)
        except ValueError as exc:
            raise ConfigError("tune", str(exc)) from None
        kw["stray_pair_rate"] = tuned.stray_pair_rate
        kw["mode_match"] = tuned.mode_match
    if side is not None and "n_pulses" in kw:
        raise ConfigError("tune.side_counts", "conflicts with experiment.n_pulses")
    if side is None and "n_pulses" not in kw:
        raise ConfigError("experiment.n_pulses", "missing (or give tune.side_counts)")
    try:
        cfg = ExperimentConfig(emitters=emitters, n_pulses=kw.pop("n_pulses", 1), **kw)
    except ConfigurationError as exc:
        raise _field_error(exc, "experiment", _EXPERIMENT_KEYS) from None
    if side is not None:
        cfg = replace(cfg, n_pulses=pulses_for_side_counts(cfg, side))
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return parse_config(doc)
