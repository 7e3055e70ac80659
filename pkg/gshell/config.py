"""Fit configuration (TOML) and pipeline specs (YAML).

Defaults live in Configs/fit_default.toml; a user file is overlaid on top.
"""
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import toml
import yaml

from .errors import FormatError, InvalidArgumentError
from .optim import WeightSchedule
from .utils import CONFIG_DIR

logger = logging.getLogger(__name__)

DEFAULT_FIT_CONFIG = CONFIG_DIR / "fit_default.toml"
FIT_MODES = ("gshell", "watertight")
SCHEDULE_FIELDS = ("weight_chamfer", "weight_msdf_open", "weight_msdf_close", "weight_sdf_reg", "weight_eikonal")


# -------------------------
# FIT CONFIG
# -------------------------
@dataclass
class FitConfig:
    iterations: int = 1000
    mode: str = "gshell"
    lr_sdf: float = 0.005
    lr_msdf: float = 0.05
    lr_offsets: float = 0.05
    betas: tuple = (0.9, 0.99)
    lr_decay: float = 0.0002
    weight_chamfer: WeightSchedule = field(default_factory=lambda: WeightSchedule.parse(1.0))
    weight_msdf_open: WeightSchedule = field(default_factory=lambda: WeightSchedule.parse([[0, 2e-5], [1500, 2e-6]]))
    weight_msdf_close: WeightSchedule = field(default_factory=lambda: WeightSchedule.parse(1e-6))
    weight_sdf_reg: WeightSchedule = field(default_factory=lambda: WeightSchedule.parse([[0, 1e-5], [500, 1e-6]]))
    weight_eikonal: WeightSchedule = field(default_factory=lambda: WeightSchedule.parse([[0, 0.3], [500, 0.1], [2000, 0.01]]))
    rho_scaling: bool = True
    epsilon: float = 1e-3
    huber_delta: float = 1.0
    samples_per_iter: int = 5000
    eval_samples: int = 100000
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in SCHEDULE_FIELDS:
            setattr(self, name, WeightSchedule.parse(getattr(self, name)))
        self.betas = tuple(float(b) for b in self.betas)
        self.validate()

    def validate(self) -> None:
        if self.mode not in FIT_MODES:
            raise InvalidArgumentError(f"mode must be one of {FIT_MODES}, got {self.mode!r}")
        for name in ("iterations", "samples_per_iter", "eval_samples", "log_every"):
            if int(getattr(self, name)) <= 0:
                raise InvalidArgumentError(f"{name} must be a positive integer")
        for name in ("lr_sdf", "lr_msdf", "lr_offsets", "lr_decay"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be >= 0")
        if self.epsilon <= 0:
            raise InvalidArgumentError("epsilon must be positive")
        if self.huber_delta <= 0:
            raise InvalidArgumentError("huber_delta must be positive")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise InvalidArgumentError(f"betas must be two values in [0, 1), got {self.betas}")

    def rho(self, resolution: int) -> float:
        """mSDF-weight divisor (R / 64)^3, or 1 without rho scaling."""
        return (resolution / 64.0) ** 3 if self.rho_scaling else 1.0

    def tau(self, iteration: int = 0) -> float | None:
        """Close/open weight ratio, for reporting."""
        open_weight = self.weight_msdf_open(iteration)
        return None if open_weight == 0 else self.weight_msdf_close(iteration) / open_weight

    def to_dict(self) -> dict:
        data = asdict(self)
        for name in SCHEDULE_FIELDS:
            data[name] = getattr(self, name).to_list()
        data["betas"] = list(self.betas)
        return data


def _read_toml(path: Path) -> dict:
    try:
        return toml.load(path)
    except toml.TomlDecodeError as exc:
        raise FormatError(str(exc), path=path, line=getattr(exc, "lineno", None)) from exc


def fit_config_from_dict(data: dict) -> FitConfig:
    known = {f.name for f in fields(FitConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InvalidArgumentError(f"unknown fit config key(s): {unknown}")
    return FitConfig(**data)


def load_fit_config(path=None, overrides: dict | None = None) -> FitConfig:
    """Defaults from Configs/fit_default.toml, then `path`, then `overrides`."""
    data = _read_toml(DEFAULT_FIT_CONFIG) if DEFAULT_FIT_CONFIG.exists() else {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise InvalidArgumentError(f"fit config not found: {path}")
        data.update(_read_toml(path))
    data.update(overrides or {})
    return fit_config_from_dict(data)


# -------------------------
# PIPELINE SPEC
# -------------------------
@dataclass
class StageSpec:
    kind: str
    config: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if not self.name:
            self.name = self.kind


@dataclass
class PipelineSpec:
    stages: list
    output_dir: Path
    seed: int = 0
    threads: int = 1


def pipeline_spec_from_dict(data: dict, base_dir: Path | None = None) -> PipelineSpec:
    if not isinstance(data, dict):
        raise FormatError("pipeline spec must be a mapping")
    stages = []
    for i, item in enumerate(data.get("stages") or []):
        if not isinstance(item, dict) or "kind" not in item:
            raise FormatError(f"stage {i} must be a mapping with a 'kind'")
        stages.append(StageSpec(kind=item["kind"], config=dict(item.get("config") or {}), name=item.get("name", "")))
    names = [s.name for s in stages]
    if len(set(names)) != len(names):
        raise InvalidArgumentError(f"stage names must be unique: {names}")
    output_dir = Path(data.get("output_dir", "out"))
    if base_dir is not None and not output_dir.is_absolute():
        output_dir = base_dir / output_dir
    return PipelineSpec(stages=stages, output_dir=output_dir, seed=int(data.get("seed", 0)), threads=int(data.get("threads", 1)))


def load_pipeline_spec(path) -> PipelineSpec:
    """Read a YAML pipeline spec; relative output_dir resolves against the spec's directory."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise FormatError(str(exc), path=path, line=None if mark is None else mark.line + 1) from exc
    return pipeline_spec_from_dict(data or {}, base_dir=path.parent)
