"""Experiment configuration: key = value files, environment and CLI overrides.

Files are flat ``key = value`` lines with dotted section prefixes and ``#``
comments, read with python-dotenv's statement parser so every binding keeps
its line number. Precedence, lowest first: built-in defaults, environment
(ERRFILT_WORKERS), the file, command-line flags. Every problem found is
reported in a single ConfigError.
"""

import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

from dotenv.parser import parse_stream

from errfilt.errors import ConfigError
from errfilt.sim.apparatus import ApparatusConfig, Port
from errfilt.sim.detection import DetectorConfig
from errfilt.sim.noise import NoiseModel
from errfilt.sim.protocol import EveModel
from errfilt.utils.rng import MAX_SEED
from errfilt.utils.utils import Utils

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    VISIBILITY_SWEEP = "visibility_sweep"
    QKD_SESSION = "qkd_session"
    EVE_ANALYSIS = "eve_analysis"

    @property
    def command(self) -> str:
        return _COMMANDS[self]

    @classmethod
    def parse(cls, value: Union[str, "Mode"]) -> "Mode":
        if isinstance(value, Mode):
            return value
        text = str(value).strip().lower()
        for mode, command in _COMMANDS.items():
            if text in (mode.value, command):
                return mode
        raise ValueError(f"unknown mode {value!r}; expected one of sweep, qkd, eve")


_COMMANDS = {
    Mode.VISIBILITY_SWEEP: "sweep",
    Mode.QKD_SESSION: "qkd",
    Mode.EVE_ANALYSIS: "eve",
}

DEFAULT_SIGMA2_GRID = tuple(round(0.1 * k, 12) for k in range(16))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one CLI run needs"""

    mode: Mode = Mode.VISIBILITY_SWEEP
    sigma2_grid: Tuple[float, ...] = DEFAULT_SIGMA2_GRID
    n_list: Tuple[int, ...] = ()
    trials: int = 100_000
    rounds: int = 200_000
    seed: int = 0
    paired: bool = True
    output_path: Optional[Path] = None
    workers: int = 1
    target_raw_error: Optional[float] = None
    apparatus: ApparatusConfig = field(default_factory=ApparatusConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    eve: EveModel = field(default_factory=EveModel)

    def __post_init__(self):
        object.__setattr__(self, "sigma2_grid", tuple(float(s) for s in self.sigma2_grid))
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        if self.output_path is None:
            object.__setattr__(self, "output_path", Path("results") / f"{self.mode.command}.csv")
        else:
            object.__setattr__(self, "output_path", Path(self.output_path))
        problems = self.validate()
        if problems:
            raise ConfigError(problems)

    def validate(self) -> List[str]:
        problems = []
        if not self.sigma2_grid:
            problems.append("sigma2_grid must not be empty")
        for s in self.sigma2_grid:
            if not (s >= 0 and math.isfinite(s)):
                problems.append(f"sigma2_grid values must be finite and >= 0, got {s}")
        for n in self.n_list:
            if n < 1 or n & (n - 1):
                problems.append(f"n_list values must be powers of two, got {n}")
        if self.trials < 1:
            problems.append(f"trials must be >= 1, got {self.trials}")
        if self.rounds < 1:
            problems.append(f"rounds must be >= 1, got {self.rounds}")
        if not 0 <= self.seed <= MAX_SEED:
            problems.append(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.workers < 1:
            problems.append(f"workers must be >= 1, got {self.workers}")
        if self.target_raw_error is not None:
            if not 0.0 <= self.target_raw_error <= 0.5:
                problems.append(f"detector.target_raw_error must lie in [0, 0.5], got {self.target_raw_error}")
            if self.detector.dark_prob != 0:
                problems.append("set either detector.dark_prob or detector.target_raw_error, not both")
        return problems

    def noise_models(self) -> List[NoiseModel]:
        return [NoiseModel(s) for s in self.sigma2_grid]

    def with_changes(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def as_items(self) -> List[Tuple[str, str]]:
        """Resolved settings as (key, text) pairs in file syntax"""
        fmt = Utils.format_number
        items = [
            ("mode", self.mode.value),
            ("sigma2_grid", ", ".join(fmt(s) for s in self.sigma2_grid)),
            ("n_list", ", ".join(str(n) for n in self.n_list)),
            ("trials", str(self.trials)),
            ("rounds", str(self.rounds)),
            ("seed", str(self.seed)),
            ("paired", fmt(self.paired)),
            ("output_path", self.output_path.as_posix()),
            ("workers", str(self.workers)),
        ]
        for section, obj in (("apparatus", self.apparatus), ("detector", self.detector), ("eve", self.eve)):
            for f in fields(obj):
                value = getattr(obj, f.name)
                if value is None:
                    continue
                text = value.value if isinstance(value, Enum) else fmt(value)
                items.append((f"{section}.{f.name}", text))
        if self.target_raw_error is not None:
            items.append(("detector.target_raw_error", fmt(self.target_raw_error)))
        return items

    def to_text(self) -> str:
        return "".join(f"{key} = {value}\n" for key, value in self.as_items())


# Value converters accept either text (file, flags) or already typed values

def _to_int(value: Any) -> int:
    if isinstance(value, bool):
        raise ValueError(f"expected an integer, got {value!r}")
    if isinstance(value, int):
        return value
    text = str(value).strip()
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"expected an integer, got {text!r}") from None


def _to_float(value: Any) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValueError(f"expected a number, got {value!r}") from None


def _to_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    parsed = Utils.parse_bool(value)
    if parsed is None:
        raise ValueError(f"expected true or false, got {value!r}")
    return parsed


def _to_float_list(value: Any) -> Tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),)
    if isinstance(value, str):
        try:
            return tuple(Utils.parse_float_list(value))
        except ValueError as e:
            raise ValueError(f"expected a list of numbers or start:stop:step, got {value!r} ({e})") from None
    return tuple(_to_float(v) for v in value)


def _to_int_list(value: Any) -> Tuple[int, ...]:
    if isinstance(value, int):
        return (value,)
    if isinstance(value, str):
        try:
            return tuple(Utils.parse_int_list(value))
        except ValueError:
            raise ValueError(f"expected a list of integers, got {value!r}") from None
    return tuple(_to_int(v) for v in value)


def _to_port(value: Any) -> Port:
    text = str(value.value if isinstance(value, Port) else value).strip().upper()
    if text not in (p.value for p in Port):
        raise ValueError(f"expected P1 or P2, got {value!r}")
    return Port(text)


def _to_text(value: Any) -> str:
    text = str(value).strip()
    if not text:
        raise ValueError("must not be empty")
    return text


KEYS: Dict[str, Callable[[Any], Any]] = {
    "mode": Mode.parse,
    "sigma2_grid": _to_float_list,
    "n_list": _to_int_list,
    "trials": _to_int,
    "rounds": _to_int,
    "seed": _to_int,
    "paired": _to_bool,
    "output_path": _to_text,
    "workers": _to_int,
    "apparatus.filtration": _to_bool,
    "apparatus.n_pairs": _to_int,
    "apparatus.bin_spacing_ns": _to_float,
    "apparatus.mz_delay_bins": _to_int,
    "apparatus.source_mu": _to_float,
    "apparatus.single_photon": _to_bool,
    "apparatus.fringe_factor": _to_float,
    "apparatus.modulator_phase_error": _to_float,
    "apparatus.channel_transmittance": _to_float,
    "detector.efficiency": _to_float,
    "detector.dark_prob": _to_float,
    "detector.gate_bin": _to_int,
    "detector.port": _to_port,
    "detector.target_raw_error": _to_float,
    "noise.sigma2": _to_float,
    "eve.p_replace": _to_float,
}

# Command-line flag that sets each key, for error messages
FLAGS = {
    "mode": "subcommand",
    "seed": "--seed",
    "sigma2_grid": "--sigma2",
    "trials": "--trials",
    "rounds": "--rounds",
    "apparatus.filtration": "--filtration",
    "apparatus.n_pairs": "--n-pairs",
    "output_path": "--out",
    "workers": "--workers",
}


def read_config_file(path: Union[str, Path]) -> List[Tuple[str, str, int]]:
    """(key, raw value, line number) for every binding in a config file"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")

    entries, problems = [], []
    with path.open(encoding="utf-8") as stream:
        for binding in parse_stream(stream):
            original = binding.original
            # the parser's mark sits before any blank lines preceding the key
            stripped = original.string.lstrip()
            line = original.line + original.string[: len(original.string) - len(stripped)].count("\n")
            if binding.error:
                problems.append(f"{path}:{line}: cannot parse {stripped.rstrip()!r}")
            elif binding.key is None:
                continue
            elif binding.value is None:
                problems.append(f"{path}:{line}: {binding.key}: missing '= value'")
            else:
                entries.append((binding.key, binding.value, line))
    if problems:
        raise ConfigError(problems)
    return entries


def _environment_settings() -> Dict[str, str]:
    settings = {}
    workers = os.getenv("ERRFILT_WORKERS")
    if workers:
        settings["workers"] = workers
    return settings


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """Merge defaults, environment, file and flag overrides into a validated config"""
    problems: List[str] = []
    values: Dict[str, Any] = {}

    def take(key: str, raw: Any, where: str):
        converter = KEYS.get(key)
        if converter is None:
            problems.append(f"{where}: unknown key {key!r}")
            return
        try:
            values[key] = converter(raw)
        except ValueError as e:
            problems.append(f"{where}: {key}: {e}")

    for key, raw in _environment_settings().items():
        take(key, raw, "ERRFILT_WORKERS")

    if path is not None:
        try:
            entries = read_config_file(path)
        except ConfigError as e:
            problems.extend(e.problems)
            entries = []
        seen: Dict[str, int] = {}
        for key, raw, line in entries:
            if key in seen:
                problems.append(f"{path}:{line}: {key} is already set on line {seen[key]}")
                continue
            seen[key] = line
            take(key, raw, f"{path}:{line}")
        if "noise.sigma2" in seen and "sigma2_grid" in seen:
            problems.append(f"{path}: set either noise.sigma2 or sigma2_grid, not both")

    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        take(key, raw, FLAGS.get(key, key))

    if problems:
        raise ConfigError(problems)

    if "noise.sigma2" in values and (overrides or {}).get("sigma2_grid") is None:
        values["sigma2_grid"] = (values["noise.sigma2"],)
    values.pop("noise.sigma2", None)

    sections: Dict[str, Dict[str, Any]] = {"apparatus": {}, "detector": {}, "eve": {}}
    top: Dict[str, Any] = {}
    for key, value in values.items():
        section, _, name = key.partition(".")
        if name:
            sections[section][name] = value
        else:
            top[key] = value
    if "target_raw_error" in sections["detector"]:
        top["target_raw_error"] = sections["detector"].pop("target_raw_error")

    built = {}
    for section, cls in (("apparatus", ApparatusConfig), ("detector", DetectorConfig), ("eve", EveModel)):
        try:
            built[section] = cls(**sections[section])
        except ConfigError as e:
            problems.extend(e.problems)
            # keep going with defaults so the top-level checks still report
            built[section] = cls()
    if "output_path" in top:
        top["output_path"] = Path(top["output_path"])
    try:
        config = ExperimentConfig(**top, **built)
    except ConfigError as e:
        problems.extend(e.problems)
    if problems:
        raise ConfigError(problems)

    logger.debug(f"Loaded {config.mode.value} configuration from {path or 'defaults'}")
    return config
