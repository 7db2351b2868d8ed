#!/usr/bin/env python3

"""Run configuration: config files, environment defaults and flag overrides.

Config files hold ``key = value`` lines with ``#`` comments. Keys are the long
flag names without dashes. The sweep keys (``lambda``, ``zeta``, ``p``,
``dim``) accept comma-separated lists.
"""

import io
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv.parser import parse_stream

from analysis import TABLE_PRESETS
from compound import DEFAULT_SEED
from errors import ConfigurationError, DomainError
from model import GraphKind, ScheduleForm

COMMANDS = ("evolve", "sample", "oracle-check", "period", "fit", "sweep", "verify", "certify")

# default horizon per command; period drops to 2000 under decoherence
DEFAULT_HORIZON = {
    "evolve": 5000,
    "sample": 50,
    "oracle-check": 6,
    "period": 50000,
    "fit": 2000,
    "certify": 2000,
    "verify": 6,
}
DECOHERENT_PERIOD_HORIZON = 2000
OUTPUT_FORMATS = ("csv",)


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


# config key -> (RunConfig field, converter)
CONFIG_KEYS = {
    "lambda": ("lambda_values", _floats),
    "zeta": ("zeta_values", _floats),
    "p": ("p_values", _floats),
    "dim": ("dims", _ints),
    "t": ("t", int),
    "start": ("start", int),
    "samples": ("samples", int),
    "seed": ("seed", int),
    "graph": ("graph", GraphKind),
    "schedule": ("schedule", ScheduleForm),
    "out": ("out", str),
    "workers": ("workers", int),
    "table": ("table", int),
    "switchover": ("switchover", float),
    "format": ("format", str),
}


def default_workers() -> int:
    raw = os.getenv("QMC_WORKERS", "1")
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"QMC_WORKERS must be an integer, got {raw!r}", key="workers") from None


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI invocation needs."""

    command: str = "evolve"
    lambda_values: Tuple[float, ...] = (1.0,)
    zeta_values: Tuple[float, ...] = (1.0,)
    p_values: Tuple[float, ...] = (0.0,)
    dims: Tuple[int, ...] = (2,)
    t: Optional[int] = None
    start: int = 1
    samples: int = 100000
    seed: int = DEFAULT_SEED
    graph: GraphKind = GraphKind.FULLY_CONNECTED
    schedule: ScheduleForm = ScheduleForm.EXPONENTIAL
    out: Optional[str] = None
    workers: int = field(default_factory=default_workers)
    table: Optional[int] = None
    switchover: float = 0.5
    verbose: int = 0
    config_path: Optional[str] = None
    format: str = "csv"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigurationError(f"unknown command {self.command!r}", key="command")
        for name in ("lambda_values", "zeta_values", "p_values", "dims"):
            values = getattr(self, name)
            if not isinstance(values, tuple):
                values = tuple(values) if isinstance(values, (list, tuple)) else (values,)
                object.__setattr__(self, name, values)
            if not values:
                raise ConfigurationError(f"{name} needs at least one value", key=name)
        object.__setattr__(self, "graph", GraphKind(self.graph))
        object.__setattr__(self, "schedule", ScheduleForm(self.schedule))
        self._check_domains()

    def _check_domains(self):
        for p in self.p_values:
            if not 0.0 <= p <= 1.0:
                raise DomainError(f"p must lie in [0, 1], got {p}", key="p")
        for z in self.zeta_values:
            if not z >= 0.0:
                raise DomainError(f"zeta must be >= 0, got {z}", key="zeta")
        for lam in self.lambda_values:
            if not lam > 0.0:
                raise DomainError(f"lambda must be positive, got {lam}", key="lambda")
        for m in self.dims:
            if m < 2:
                raise DomainError(f"dim must be >= 2, got {m}", key="dim")
            if not 1 <= self.start <= m:
                raise DomainError(f"start must be in 1..{m}, got {self.start}", key="start")
        if self.t is not None and self.t < 0:
            raise DomainError(f"t must be >= 0, got {self.t}", key="t")
        if self.samples < 1:
            raise DomainError(f"samples must be >= 1, got {self.samples}", key="samples")
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}", key="seed")
        if self.workers < 1:
            raise DomainError(f"workers must be >= 1, got {self.workers}", key="workers")
        if self.table is not None and self.table not in TABLE_PRESETS:
            raise DomainError(f"table must be in 1..{len(TABLE_PRESETS)}, got {self.table}", key="table")
        if not 0.0 <= self.switchover <= 1.0:
            raise DomainError(f"switchover must lie in [0, 1], got {self.switchover}", key="switchover")
        if self.format not in OUTPUT_FORMATS:
            raise DomainError(f"format must be one of {', '.join(OUTPUT_FORMATS)}, got {self.format!r}", key="format")

    def _single(self, name: str, key: str):
        values = getattr(self, name)
        if len(values) != 1:
            raise ConfigurationError(f"{self.command} takes a single {key}, got {len(values)} values", key=key)
        return values[0]

    @property
    def coupling(self) -> float:
        return self._single("lambda_values", "lambda")

    @property
    def zeta(self) -> float:
        return self._single("zeta_values", "zeta")

    @property
    def p(self) -> float:
        return self._single("p_values", "p")

    @property
    def dim(self) -> int:
        return self._single("dims", "dim")

    @property
    def horizon(self) -> int:
        if self.t is not None:
            return self.t
        if self.command == "period" and self.p_values[0] > 0:
            return DECOHERENT_PERIOD_HORIZON
        return DEFAULT_HORIZON.get(self.command, 2000)


def _binding_line(binding) -> int:
    # leading blank lines are folded into the binding that follows them
    text = binding.original.string
    lead = text[:len(text) - len(text.lstrip())]
    return binding.original.line + lead.count("\n")


def read_config_file(path) -> Dict[str, Tuple[str, int]]:
    """Raw ``key -> (value, line)`` pairs from a config file.

    Raises:
        ConfigurationError: unreadable file, malformed line or unknown key
    """
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e
    values = {}
    for binding in parse_stream(io.StringIO(text)):
        line = _binding_line(binding)
        if binding.error or (binding.key is not None and binding.value is None):
            raise ConfigurationError(f"{path}:{line}: malformed line {binding.original.string.strip()!r}",
                                     line=line)
        if binding.key is None:
            continue
        key = binding.key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"{path}:{line}: unknown key {key!r}", key=key, line=line)
        values[key] = (binding.value.strip(), line)
    return values


def convert_values(raw: Mapping[str, Tuple[str, Optional[int]]]) -> Dict[str, Any]:
    """Map config keys to typed RunConfig fields."""
    out = {}
    for key, (text, line) in raw.items():
        name, convert = CONFIG_KEYS[key]
        try:
            out[name] = convert(text)
        except ValueError as e:
            where = f" (line {line})" if line else ""
            raise ConfigurationError(f"invalid value {text!r} for {key}{where}", key=key, line=line) from e
    return out


def parse_config(path, command: str = "evolve", overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Build a RunConfig from a config file, with ``overrides`` (typed fields) taking precedence.

    Args:
        path: config file, or None for overrides only
        command: subcommand the config is for
        overrides: RunConfig field values set on the command line

    Returns:
        RunConfig

    Raises:
        ConfigurationError: malformed line (with its line number) or unknown key
        DomainError: value outside its domain, naming the key
    """
    settings: Dict[str, Any] = {}
    if path is not None:
        settings.update(convert_values(read_config_file(path)))
        settings["config_path"] = str(path)
    for name, value in (overrides or {}).items():
        if value is not None:
            settings[name] = value
    known = {f.name for f in fields(RunConfig)}
    unknown = set(settings) - known
    if unknown:
        raise ConfigurationError(f"unknown settings {sorted(unknown)}", key=sorted(unknown)[0])
    return RunConfig(command=command, **settings)
