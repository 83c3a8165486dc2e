"""TOML configuration for simulations and Monte Carlo studies.

Recognized sections: ``[noise]``, ``[input]``, ``[study]``, ``[estimate]``,
``[params.true]`` and ``[params.nominal]``. Every key is optional; parameter
tables override the built-in presets entry by entry.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .estim import EstimateOptions, PredictorKind
from .sim import InputDesign, NoiseConfig
from .vessel import PARAM_NAMES, ShipParams

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib


@dataclass(frozen=True)
class StudyConfig:
    """Monte Carlo study setup.

    ``grid`` holds total sample counts ``N = n_experiments * N_D`` (the split is
    even; a remainder is dropped).
    """

    grid: tuple = (1000, 2000, 3000, 4000, 5000)
    reps: int = 100
    winds: tuple = (1.0, 10.0)
    estimators: tuple = ("iv1", "iv2", "iv3", "ls")
    seed: int = 0
    n_experiments: int = 4
    out: str = "study_out"
    jobs: int = 1
    validation_length: int = 3000
    dt: float = 1.0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    design: InputDesign = field(default_factory=InputDesign)
    true_params: ShipParams = field(default_factory=lambda: ShipParams.preset("true"))
    nominal: ShipParams = field(default_factory=lambda: ShipParams.preset("nominal"))
    options: EstimateOptions = field(default_factory=EstimateOptions)

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(n) for n in self.grid))
        object.__setattr__(self, "winds", tuple(float(w) for w in self.winds))
        kinds = tuple(PredictorKind.parse(k).value for k in self.estimators)
        object.__setattr__(self, "estimators", kinds)
        if not self.grid:
            raise ConfigError("study grid is empty")
        if int(self.n_experiments) < 1:
            raise ConfigError("n_experiments must be at least 1")
        for n in self.grid:
            if n < 2:
                raise ConfigError(f"grid value {n} is below the minimum of 2 samples")
            if n // int(self.n_experiments) < 4:
                raise ConfigError(f"grid value {n} leaves fewer than 4 samples per experiment")
        if int(self.reps) < 1:
            raise ConfigError("reps must be at least 1")
        if not self.winds:
            raise ConfigError("at least one wind case is required")
        if not kinds:
            raise ConfigError("at least one estimator is required")
        if int(self.jobs) < 1:
            raise ConfigError("jobs must be at least 1")
        if int(self.validation_length) < 4:
            raise ConfigError("validation_length must be at least 4")

    @property
    def max_samples_per_experiment(self):
        return max(self.grid) // self.n_experiments

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


_STUDY_KEYS = {f.name for f in fields(StudyConfig)} - {"noise", "design", "true_params",
                                                       "nominal", "options"}


def _params(table, preset):
    base = ShipParams.preset(preset)
    if not table:
        return base
    return ShipParams.from_mapping(table, base=base)


def config_from_mapping(doc):
    unknown = set(doc) - {"noise", "input", "study", "params", "estimate"}
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
    study = dict(doc.get("study", {}))
    bad = set(study) - _STUDY_KEYS
    if bad:
        raise ConfigError(f"unknown [study] keys: {', '.join(sorted(bad))}")
    params = doc.get("params", {})
    bad = set(params) - {"true", "nominal"}
    if bad:
        raise ConfigError(f"unknown [params.*] tables: {', '.join(sorted(bad))}")
    est = dict(doc.get("estimate", {}))
    bad = set(est) - {f.name for f in fields(EstimateOptions)}
    if bad:
        raise ConfigError(f"unknown [estimate] keys: {', '.join(sorted(bad))}")
    try:
        inp = dict(doc.get("input", {}))
        for key in ("tau_bar", "pulse_amp", "width_range"):
            if key in inp and inp[key] is not None:
                inp[key] = tuple(inp[key])
        return StudyConfig(
            noise=NoiseConfig.from_mapping(doc.get("noise", {})),
            design=InputDesign.from_mapping(inp),
            true_params=_params(params.get("true"), "true"),
            nominal=_params(params.get("nominal"), "nominal"),
            options=EstimateOptions(**est),
            **study,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None):
    """Read a study configuration; ``None`` gives the defaults."""
    if path is None:
        return StudyConfig()
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(doc)


def write_params(path, theta17, header=None):
    """Write a ``[params]`` table readable by :func:`read_params`."""
    params = theta17 if isinstance(theta17, ShipParams) else ShipParams.from_array(theta17)
    lines = [f"# {header}"] if header else []
    lines.append("[params]")
    for name, value in params.as_dict().items():
        lines.append(f'"{name}" = {float(value)!r}')
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_params(source):
    """Parameters from a preset name (``true``/``nominal``) or a TOML file."""
    if source in ("true", "nominal"):
        return ShipParams.preset(source)
    if not os.path.isfile(source):
        raise ConfigError(f"parameter file not found: {source}")
    with open(source, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{source}: {exc}") from None
    table = doc.get("params", doc)
    missing = [n for n in PARAM_NAMES if n not in {k for k in table}]
    if missing and len(missing) == len(PARAM_NAMES):
        raise ConfigError(f"{source}: no ship parameters found")
    return ShipParams.from_mapping(table)
