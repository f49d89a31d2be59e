"""Experiment manifests: one flat YAML mapping per run."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import yaml

from .cost import ConfigError, SystemConfig
from .dsvrg import LearnerConfig
from .sweep import SENSITIVITY_AXES

PROFILES = ("paper", "desk")


class ManifestError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass
class ExperimentManifest:
    profile: str = "custom"
    # cost model
    m0: int = 400
    n0: float = 112
    d: int = 54
    omega: int = 54
    kappa: float = 518.0
    epsilon: list[float] = field(default_factory=lambda: [1e-5])
    theta: float = 1.0
    mu: float = 1e-4
    alpha: float = 1.0
    tau: float = 54.0
    # learner
    lam: float = 1e-4
    eta: float = 0.5
    max_rounds: int = 500
    bias: bool = False
    # sweep
    seed: int = 0
    replications: int = 10
    gamma_grid: str | list[float] = "all"
    workers: int = 1
    # data
    dataset: str = "covtype.data.gz"
    classes: tuple[int, int] = (3, 7)
    train_fraction: float = 0.8
    standardize: bool = True
    # sensitivity
    sensitivity_axis: str | None = None
    sensitivity_values: list[float] = field(default_factory=list)
    alphas: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])
    out: str | None = None

    source_text: str = field(default="", repr=False, compare=False)

    def system_config(self, epsilon: float | None = None) -> SystemConfig:
        eps = self.epsilon[0] if epsilon is None else epsilon
        return SystemConfig(
            m0=self.m0, n0=self.n0, d=self.d, omega=self.omega, kappa=self.kappa,
            epsilon=eps, theta=self.theta, mu=self.mu, alpha=self.alpha, tau=self.tau,
        )

    def learner_config(self, epsilon: float | None = None) -> LearnerConfig:
        eps = self.epsilon[0] if epsilon is None else epsilon
        return LearnerConfig(
            lam=self.lam, eta=self.eta, epsilon=eps, max_rounds=self.max_rounds,
            omega=self.omega, tau=self.tau, bias=self.bias,
        )

    def gammas(self) -> list[float] | None:
        if self.gamma_grid == "all":
            return None
        return list(self.gamma_grid)

    def comparable(self) -> dict:
        """Fields that must agree between artifact sets built from one experiment."""
        skip = {"out", "source_text", "workers"}
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in skip}


# manifest key -> dataclass field
ALIASES = {"lambda": "lam"}
_INT = {"m0", "d", "omega", "max_rounds", "seed", "replications", "workers"}
_FLOAT = {"n0", "kappa", "theta", "mu", "alpha", "tau", "lam", "eta", "train_fraction"}
_BOOL = {"bias", "standardize"}


def _as_float_list(key, value) -> list[float]:
    items = value if isinstance(value, list) else [value]
    try:
        return [float(v) for v in items]
    except (TypeError, ValueError):
        raise ManifestError(key, f"expected a number or list of numbers, got {value!r}") from None


def from_mapping(raw: dict, source_text: str = "") -> ExperimentManifest:
    if not isinstance(raw, dict):
        raise ManifestError("<root>", "manifest must be a flat key-value mapping")
    known = {f.name for f in fields(ExperimentManifest)} - {"source_text"}
    kwargs = {}
    for key, value in raw.items():
        name = ALIASES.get(key, key)
        if name not in known:
            raise ManifestError(key, "unknown key")
        try:
            if name in _INT:
                if isinstance(value, bool) or float(value) != int(value):
                    raise ValueError
                value = int(value)
            elif name in _FLOAT:
                if isinstance(value, bool):
                    raise ValueError
                value = float(value)
            elif name in _BOOL:
                if not isinstance(value, bool):
                    raise ValueError
        except (TypeError, ValueError):
            raise ManifestError(key, f"invalid value {value!r}") from None
        if name in ("epsilon", "sensitivity_values", "alphas"):
            value = _as_float_list(key, value)
        elif name == "classes":
            if not (isinstance(value, list) and len(value) == 2):
                raise ManifestError(key, "expected a pair of class ids")
            value = (int(value[0]), int(value[1]))
        elif name == "gamma_grid" and value != "all":
            value = _as_float_list(key, value)
        kwargs[name] = value
    m = ExperimentManifest(**kwargs, source_text=source_text)
    validate(m)
    return m


def validate(m: ExperimentManifest):
    if not m.epsilon:
        raise ManifestError("epsilon", "at least one target accuracy required")
    for eps in m.epsilon:
        try:
            m.system_config(eps)
        except ConfigError as exc:
            raise ManifestError(str(exc).split()[0], str(exc)) from None
        try:
            m.learner_config(eps)
        except ValueError as exc:
            raise ManifestError(str(exc).split()[0], str(exc)) from None
    if m.replications < 1:
        raise ManifestError("replications", "must be >= 1")
    if m.workers < 1:
        raise ManifestError("workers", "must be >= 1")
    if not 0 < m.train_fraction < 1:
        raise ManifestError("train_fraction", "must lie in (0, 1)")
    if m.classes[0] == m.classes[1]:
        raise ManifestError("classes", "the two classes must differ")
    if m.bias and m.omega != m.d + 1:
        raise ManifestError("omega", "with bias enabled omega must equal d + 1")
    if not m.bias and m.omega != m.d:
        raise ManifestError("omega", "without bias omega must equal d")
    if m.sensitivity_axis is not None:
        if m.sensitivity_axis not in SENSITIVITY_AXES:
            raise ManifestError("sensitivity_axis", f"must be one of {SENSITIVITY_AXES}")
        if not m.sensitivity_values:
            raise ManifestError("sensitivity_values", "required with sensitivity_axis")
    if m.gamma_grid != "all":
        for g in m.gamma_grid:
            m1 = round(m.m0 / g) if g > 0 else 0
            if not (1 <= g <= m.m0 and m1 >= 1 and math.isclose(m.m0 / m1, g, rel_tol=1e-9)):
                raise ManifestError("gamma_grid", f"{g} is not a feasible level m0/m1")


def profile_text(name: str) -> str:
    if name not in PROFILES:
        raise ManifestError("profile", f"unknown built-in profile {name!r}")
    return resources.files("fogcost.profiles").joinpath(f"{name}.yaml").read_text()


def load_manifest(path_or_profile: str) -> ExperimentManifest:
    """Load a manifest file, or a built-in profile by bare name."""
    path = Path(path_or_profile)
    if path.exists():
        text = path.read_text()
    elif path_or_profile in PROFILES:
        text = profile_text(path_or_profile)
    else:
        raise FileNotFoundError(f"manifest not found: {path_or_profile}")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ManifestError("<yaml>", str(exc)) from None
    return from_mapping(raw or {}, source_text=text)
