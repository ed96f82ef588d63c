"""
Settings - Environment defaults and the JSON experiment configuration
Environment variables come from backend/.env via python-dotenv; everything else lives in the
config file, with every default spelled out by ExperimentConfig.to_dict().
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, TypeVar, Union

from dotenv import load_dotenv

from errors import ConfigError, DomainError
from limited_policy import PolicyGrid
from model import ChangeModel, EnergyModel, GeometricPrior, make_gaussian_pair
from quadrature import QuadratureConfig

load_dotenv(Path(__file__).with_name(".env"))

_log = logging.getLogger(__name__)

POLICIES = ("shiryaev", "uniform", "limited", "greedy", "optimal")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from exc


@dataclass(frozen=True)
class EnvDefaults:
    log_level: str
    threads: int
    step_cap: int
    default_trials: int


def env_defaults() -> EnvDefaults:
    """Read at call time so tests and wrappers can change the environment"""
    level = os.getenv("QCD_LOG_LEVEL", "INFO").upper()
    if level not in LOG_LEVELS:
        raise ConfigError(f"QCD_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    defaults = EnvDefaults(
        log_level=level,
        threads=_env_int("QCD_THREADS", 1),
        step_cap=_env_int("QCD_STEP_CAP", 10_000_000),
        default_trials=_env_int("QCD_DEFAULT_TRIALS", 200_000),
    )
    if defaults.threads < 1 or defaults.step_cap < 1 or defaults.default_trials < 1:
        raise ConfigError("QCD_THREADS, QCD_STEP_CAP and QCD_DEFAULT_TRIALS must be positive")
    return defaults


Block = TypeVar("Block")


def _block_from_dict(cls: Type[Block], data: Any, where: str) -> Block:
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        block = cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    block.validate(where)
    return block


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    return float(value)


def _integer(value: Any, where: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{where} must be an integer >= {minimum}, got {value!r}")
    return value


@dataclass
class ModelBlock:
    pi0: float = 0.0
    rho: float = 0.1
    sigma2: float = 1.0
    snr_db: float = 0.0

    def validate(self, where: str = "model"):
        if not 0.0 <= _number(self.pi0, f"{where}.pi0") < 1.0:
            raise ConfigError(f"{where}.pi0 must lie in [0, 1)")
        if not 0.0 < _number(self.rho, f"{where}.rho") < 1.0:
            raise ConfigError(f"{where}.rho must lie in (0, 1)")
        if not _number(self.sigma2, f"{where}.sigma2") > 0.0:
            raise ConfigError(f"{where}.sigma2 must be positive")
        _number(self.snr_db, f"{where}.snr_db")

    def change_model(self) -> ChangeModel:
        try:
            return ChangeModel(GeometricPrior(self.pi0, self.rho), make_gaussian_pair(self.sigma2, self.snr_db))
        except DomainError as exc:
            raise ConfigError(f"model: {exc}") from exc


@dataclass
class EnergyBlock:
    capacity: int = 0
    pmf: List[float] = field(default_factory=lambda: [1.0])
    initial: int = 0

    def validate(self, where: str = "energy"):
        _integer(self.capacity, f"{where}.capacity")
        _integer(self.initial, f"{where}.initial")
        if not isinstance(self.pmf, list) or not self.pmf:
            raise ConfigError(f"{where}.pmf must be a non-empty list")
        for i, p in enumerate(self.pmf):
            _number(p, f"{where}.pmf[{i}]")
        self.energy_model()

    def energy_model(self) -> EnergyModel:
        try:
            return EnergyModel(self.capacity, tuple(self.pmf), self.initial)
        except DomainError as exc:
            raise ConfigError(f"energy: {exc}") from exc


@dataclass
class SolverBlock:
    grid_size: int = 2001
    rights: int = 8
    cost: Optional[float] = None
    horizon: Optional[int] = None
    quad_order: int = 16
    quad_initial_panels: int = 8
    quad_max_panels: int = 512
    quad_tol: float = 1e-8
    width_sigmas: float = 10.0
    vi_tol: float = 1e-9
    max_iters: int = 10_000

    def validate(self, where: str = "solver"):
        _integer(self.grid_size, f"{where}.grid_size", 3)
        _integer(self.rights, f"{where}.rights")
        _integer(self.max_iters, f"{where}.max_iters", 1)
        if self.cost is not None and not _number(self.cost, f"{where}.cost") > 0.0:
            raise ConfigError(f"{where}.cost must be positive")
        if self.horizon is not None:
            _integer(self.horizon, f"{where}.horizon", 1)
        if not _number(self.vi_tol, f"{where}.vi_tol") > 0.0:
            raise ConfigError(f"{where}.vi_tol must be positive")
        _number(self.width_sigmas, f"{where}.width_sigmas")
        _number(self.quad_tol, f"{where}.quad_tol")
        try:
            self.quadrature()
        except DomainError as exc:
            raise ConfigError(f"{where}: {exc}") from exc

    def grid(self) -> PolicyGrid:
        return PolicyGrid(self.grid_size)

    def quadrature(self) -> QuadratureConfig:
        return QuadratureConfig(order=self.quad_order, initial_panels=self.quad_initial_panels,
                                max_panels=self.quad_max_panels, tol=self.quad_tol,
                                width_sigmas=self.width_sigmas)


@dataclass
class CurveSpec:
    """One simulated curve: which policy, and its rights, interval or solved table"""
    policy: str = "shiryaev"
    rights: Optional[int] = None
    interval: Optional[int] = None
    table: Optional[str] = None

    def validate(self, where: str = "curve"):
        if self.policy not in POLICIES:
            raise ConfigError(f"{where}.policy must be one of {', '.join(POLICIES)}, got {self.policy!r}")
        if self.rights is not None:
            _integer(self.rights, f"{where}.rights")
        if self.interval is not None:
            _integer(self.interval, f"{where}.interval", 1)
        if self.policy == "uniform" and self.interval is None:
            raise ConfigError(f"{where}: uniform sampling needs an interval")


@dataclass
class RunBlock:
    curves: List[CurveSpec] = field(default_factory=lambda: [CurveSpec()])
    alphas: List[float] = field(default_factory=lambda: [0.1, 0.01, 0.001])
    costs: List[float] = field(default_factory=list)
    interval: int = 1
    trials: int = field(default_factory=lambda: env_defaults().default_trials)
    master_seed: int = 0
    bound_reference: bool = False
    out: Optional[str] = None

    def validate(self, where: str = "run"):
        for i, a in enumerate(self.alphas):
            if not 0.0 < _number(a, f"{where}.alphas[{i}]") < 1.0:
                raise ConfigError(f"{where}.alphas[{i}] must lie in (0, 1)")
        if any(b >= a for a, b in zip(self.alphas, self.alphas[1:])):
            raise ConfigError(f"{where}.alphas must be strictly decreasing")
        for i, c in enumerate(self.costs):
            if not _number(c, f"{where}.costs[{i}]") > 0.0:
                raise ConfigError(f"{where}.costs[{i}] must be positive")
        _integer(self.interval, f"{where}.interval", 1)
        _integer(self.trials, f"{where}.trials", 100)
        if not 0 <= _integer(self.master_seed, f"{where}.master_seed") < 2 ** 64:
            raise ConfigError(f"{where}.master_seed must fit in 64 bits")
        if not isinstance(self.bound_reference, bool):
            raise ConfigError(f"{where}.bound_reference must be true or false")


@dataclass
class ExperimentConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    energy: EnergyBlock = field(default_factory=EnergyBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    run: RunBlock = field(default_factory=RunBlock)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = sorted(set(data) - {"model", "energy", "solver", "run"})
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
        run_data = data.get("run")
        if isinstance(run_data, dict) and "curves" in run_data:
            curves = run_data["curves"]
            if not isinstance(curves, list) or not curves:
                raise ConfigError("run.curves must be a non-empty list")
            run_data = dict(run_data)
            run_data["curves"] = [_block_from_dict(CurveSpec, c, f"run.curves[{i}]") for i, c in enumerate(curves)]
        return cls(
            model=_block_from_dict(ModelBlock, data.get("model"), "model"),
            energy=_block_from_dict(EnergyBlock, data.get("energy"), "energy"),
            solver=_block_from_dict(SolverBlock, data.get("solver"), "solver"),
            run=_block_from_dict(RunBlock, run_data, "run"),
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def load_config(path: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """Experiment config from a JSON file; all defaults when path is None"""
    if path is None:
        return ExperimentConfig.from_dict({})
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    _log.debug("loaded config %s", path)
    return ExperimentConfig.from_dict(data)
