"""Experiment configuration: flat ``key = value`` files with typed keys.

Example::

    # full-rank synthetic run
    name = fullrank
    filter = tnsrkf
    dataset = gp
    D = 3
    I = 4
    rank_w = 64
    rank_l = 64

Lines starting with ``#`` are comments.  Values are parsed according to the
field type of :class:`ExperimentConfig`; rank fields accept either one
integer or a comma-separated vector of ``D + 1`` ranks.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

from ..errors import ConfigError, DataIOError

FILTERS = ("tnsrkf", "tnkf", "dense_kf", "dense_srkf")
DATASETS = ("gp", "volterra", "tanks", "csv")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    filter: str = "tnsrkf"
    dataset: str = "gp"
    data_path: str = ""
    features: str = "auto"
    # problem size
    D: int = 3
    I: int = 4
    N: int = 100
    N_test: int = 100
    # data generation and features
    input_box: float = 1.0
    domain: float = 2.0
    lengthscale: float = 0.5
    signal_var: float = 1.0
    noise_var: float = 0.01
    snr_db: float = 60.0
    true_rank: int = 2
    reg: float = 1.0
    input_lags: int = 7
    output_lags: int = 7
    # filter
    rank_w: str = "4"
    rank_l: str = "4"
    rank_p: str = "4"
    p: int = 0
    aug_site: int = -1
    max_sweeps: int = 1
    residual_tol: float = 1e-8
    sweep_order: str = "lr"
    tnkf_rel_tol: float = 0.0
    # run
    eval_every: int = 10
    max_steps: int = 0
    seed: int = 0
    data_seed: int = 0
    track_min_eig: bool = False
    predictive_noise: bool = False
    timing: bool = True
    plot: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.filter not in FILTERS:
            raise ConfigError(f"filter must be one of {FILTERS}, got {self.filter!r}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.dataset == "csv" and not self.data_path:
            raise ConfigError("dataset = csv needs data_path")
        for key in ("D", "I", "N", "eval_every", "max_sweeps", "true_rank"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        for key in ("N_test", "p", "max_steps", "input_lags", "output_lags"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0")
        for key in ("domain", "lengthscale", "noise_var", "reg", "input_box"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        if self.input_box > self.domain:
            raise ConfigError("input_box must not exceed the feature domain")
        if self.features not in ("auto", "hilbert_se", "volterra", "lagged_io_se"):
            raise ConfigError(f"unknown feature kind {self.features!r}")
        if self.sweep_order not in ("lr", "rl"):
            raise ConfigError("sweep_order must be lr or rl")
        for key in ("rank_w", "rank_l", "rank_p"):
            parse_ranks(getattr(self, key), key)

    def ranks(self, key: str):
        return parse_ranks(getattr(self, key), key)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def parse_ranks(value, key: str = "rank"):
    """An int, or a list of ints for a comma-separated vector."""
    if isinstance(value, int):
        return value
    parts = [p.strip() for p in str(value).split(",") if p.strip()]
    try:
        ranks = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{key}: cannot parse rank specification {value!r}") from None
    if not ranks or any(r < 1 for r in ranks):
        raise ConfigError(f"{key}: ranks must be positive integers")
    return ranks[0] if len(ranks) == 1 else ranks


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _convert(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_assignments(lines: Iterable[str], source: str = "<config>") -> dict:
    values = {}
    for n, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {line.strip()!r}")
        key, raw = (s.strip() for s in text.split("=", 1))
        try:
            values[key] = _convert(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{n}: {exc}") from None
    return values


def load_config(path, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Read a config file and apply ``key=value`` overrides."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    values = parse_assignments(text.splitlines(), str(path))
    values.update(parse_assignments(overrides, "--set"))
    values.setdefault("name", path.stem)
    return ExperimentConfig(**values)


def config_from_overrides(overrides: Iterable[str] = ()) -> ExperimentConfig:
    return ExperimentConfig(**parse_assignments(overrides, "--set"))
