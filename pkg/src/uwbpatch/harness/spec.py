"""Experiment specifications: which grid to run, with which seeds and settings."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from ..dataset import DatasetConfig
from ..signal import FRAME_LENGTH
from ..validation import check_epsilon_grid, check_size_grid


class ConfigError(ValueError):
    """Bad experiment configuration (CLI exit status 2)."""


class InvariantViolation(RuntimeError):
    """A produced result breaks a contract of the pipeline (CLI exit status 1)."""


class MissingArtifactError(ConfigError):
    """A prerequisite file for a stage does not exist."""


EXPERIMENTS = (
    "train_baseline",
    "baseline_sync_desync",
    "uap_eval",
    "srp_eval",
    "filter_impact",
    "sfr_eval",
    "size_sweep",
    "magnitude_table",
    "random_baseline",
    "at_eval",
)

BASELINE_EPSILONS = (0.001, 0.002, 0.005, 0.007, 0.01)
UNIVERSAL_EPSILONS = (0.01, 0.02, 0.03, 0.04, 0.05)
SWEEP_EPSILONS = (0.01, 0.03, 0.05)
SWEEP_SIZES = (30, 50, 100, 200, 300, 400, 500, 600)

DEFAULT_EPSILONS = {
    "train_baseline": (),
    "baseline_sync_desync": BASELINE_EPSILONS,
    "uap_eval": UNIVERSAL_EPSILONS,
    "srp_eval": UNIVERSAL_EPSILONS,
    "filter_impact": UNIVERSAL_EPSILONS,
    "sfr_eval": UNIVERSAL_EPSILONS,
    "size_sweep": SWEEP_EPSILONS,
    "magnitude_table": (0.03,),
    "random_baseline": UNIVERSAL_EPSILONS,
    "at_eval": SWEEP_EPSILONS,
}
SIZED = ("size_sweep", "magnitude_table")


@dataclass
class Seeds:
    data: int = 0
    split: int = 0
    train: int = 0
    attack: int = 0
    eval: int = 1


@dataclass
class PatchSettings:
    """Universal-patch generator settings.

    The inner step is ``epsilon / step_divisor`` so the inner attack reaches
    ``inner_iterations / step_divisor`` of the budget per sample.
    """

    step_divisor: float = 400.0
    inner_iterations: int = 20
    outer_iterations: int = 40
    n_train: int = 200


@dataclass
class ExperimentSpec:
    name: str
    epsilons: tuple | None = None
    sizes: tuple | None = None
    n_shifts: int = 50
    n_eval: int | None = None  # test samples used for evaluation; None means all
    train_size: int = 800
    epochs: int = 100
    # input-specific baseline attacks
    pgd_step_divisor: float = 10.0
    pgd_iterations: int = 20
    patch: PatchSettings = field(default_factory=PatchSettings)
    at_epsilon: float = 0.002
    at_step_size: float = 0.0005
    at_iterations: int = 20
    at_epochs: int = 100
    power_fraction: float = 0.95
    seeds: Seeds = field(default_factory=Seeds)
    dataset: dict = field(default_factory=dict)  # DatasetConfig overrides

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.name!r}; choose from {', '.join(EXPERIMENTS)}")
        if isinstance(self.patch, dict):
            self.patch = PatchSettings(**self.patch)
        if isinstance(self.seeds, dict):
            self.seeds = Seeds(**self.seeds)
        if self.epsilons is None:
            self.epsilons = DEFAULT_EPSILONS[self.name]
        if self.sizes is None:
            self.sizes = SWEEP_SIZES if self.name in SIZED else ()
        try:
            if self.name != "train_baseline":
                self.epsilons = tuple(check_epsilon_grid(self.epsilons))
            if self.name in SIZED:
                self.sizes = tuple(check_size_grid(self.sizes, self.frame_length))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.n_shifts < 1 or self.train_size < 1 or self.epochs < 0 or self.at_epochs < 0:
            raise ConfigError("n_shifts and train_size must be positive, epochs non-negative")
        if self.n_eval is not None and self.n_eval < 1:
            raise ConfigError("n_eval must be positive")
        p = self.patch
        if p.step_divisor <= 0 or p.inner_iterations < 1 or p.outer_iterations < 0 or p.n_train < 1:
            raise ConfigError(f"invalid patch settings {asdict(p)}")
        if not 0.0 < self.power_fraction < 1.0:
            raise ConfigError("power_fraction must be in (0, 1)")
        try:
            self.dataset_config().validate()
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"invalid dataset overrides: {exc}") from exc

    @property
    def frame_length(self) -> int:
        return int(self.dataset.get("length", FRAME_LENGTH))

    def dataset_config(self) -> DatasetConfig:
        base = DatasetConfig().to_dict()
        base.update(self.dataset)
        base["seed"] = self.seeds.data
        return DatasetConfig.from_dict(base)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["epsilons"] = list(self.epsilons)
        out["sizes"] = list(self.sizes)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown spec keys: {sorted(unknown)}")
        if "name" not in data:
            raise ConfigError("spec needs a 'name'")
        data = dict(data)
        for key in ("epsilons", "sizes"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def with_name(self, name: str) -> "ExperimentSpec":
        """Same settings for another experiment, with that experiment's default grids."""
        return replace(self, name=name, epsilons=None, sizes=None)


def load_spec(path) -> ExperimentSpec:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise MissingArtifactError(f"spec file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("spec file must hold a JSON object")
    return ExperimentSpec.from_dict(data)
