"""Reproducible scenario sets drawn from a normal calibration, plus RES sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from oligopoly_futures.constants import (
    CAPACITY_FLOOR,
    DEFAULT_RISK_NEUTRAL_SCENARIOS,
    MAX_TRUNCATION_RETRIES,
    SCENARIO_FLOOR,
    ConductPreset,
    MarketModel,
)
from oligopoly_futures.errors import DimensionError, ScenarioError
from oligopoly_futures.market import (
    ConductParams,
    ConventionalGenerator,
    DemandCurves,
    MarketInstance,
    ResGenerator,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParameterFamily:
    """Normal marginal for one parameter family.

    ``std`` overrides ``mean * cv`` wherever it is given. A single entry broadcasts
    over every generator of the family.
    """

    mean: tuple[float, ...]
    cv: float = 0.0
    std: Optional[tuple[float, ...]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", tuple(float(value) for value in self.mean))
        if self.std is not None:
            object.__setattr__(self, "std", tuple(float(value) for value in self.std))
        if not self.mean:
            raise ScenarioError("A parameter family needs at least one mean value.")
        if self.cv < 0.0:
            raise ScenarioError(f"Coefficient of variation {self.cv} is negative.")
        if self.std is not None and any(value < 0.0 for value in self.std):
            raise ScenarioError(f"Standard deviations {self.std} contain a negative value.")

    def means(self, size: int) -> np.ndarray:
        return _broadcast(self.mean, size, "mean")

    def sigmas(self, size: int) -> np.ndarray:
        if self.std is not None:
            return _broadcast(self.std, size, "std")
        return np.abs(self.means(size)) * self.cv


def _broadcast(values: tuple[float, ...], size: int, label: str) -> np.ndarray:
    if len(values) == 1:
        return np.full(size, values[0])
    if len(values) != size:
        raise DimensionError(f"Family {label} has {len(values)} entries, expected {size}.")
    return np.asarray(values, dtype=float)


@dataclass(frozen=True)
class CalibrationConfig:
    cost_b: ParameterFamily
    cost_c: ParameterFamily
    gamma: ParameterFamily
    beta: ParameterFamily
    res_capacity: ParameterFamily
    cost_a: ParameterFamily = field(default_factory=lambda: ParameterFamily(mean=(0.0,)))
    scenario_count: int = DEFAULT_RISK_NEUTRAL_SCENARIOS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.scenario_count < 1:
            raise ScenarioError(f"scenario_count must be >= 1, got {self.scenario_count}.")
        for label in ("cost_b", "cost_c", "gamma", "beta"):
            family: ParameterFamily = getattr(self, label)
            if any(value <= 0.0 for value in family.mean):
                raise ScenarioError(f"{label} means must be > 0, got {family.mean}.")
        if any(value < 0.0 for value in self.res_capacity.mean):
            raise ScenarioError(f"res_capacity means must be >= 0, got {self.res_capacity.mean}.")

    @classmethod
    def baseline(
        cls,
        *,
        scenario_count: int = DEFAULT_RISK_NEUTRAL_SCENARIOS,
        seed: int = 0,
        res_mean: float = 5000.0,
    ) -> CalibrationConfig:
        """Three conventional generators and one RES generator, calibrated on Spanish market data."""
        return cls(
            cost_b=ParameterFamily(mean=(37.0, 40.0, 43.0), cv=0.09),
            cost_c=ParameterFamily(
                mean=(0.013, 0.003, 0.019), cv=0.05, std=(0.000125, 0.0002, 0.000195)
            ),
            gamma=ParameterFamily(mean=(180.0,), cv=0.10, std=(18.0,)),
            beta=ParameterFamily(mean=(0.005,), cv=0.10, std=(0.0005,)),
            res_capacity=ParameterFamily(mean=(res_mean,), cv=0.20, std=(1000.0,)),
            scenario_count=scenario_count,
            seed=seed,
        )

    @property
    def gamma_futures(self) -> float:
        return self.gamma.mean[0]

    @property
    def beta_futures(self) -> float:
        return self.beta.mean[0]


@dataclass(frozen=True)
class ScenarioSet:
    cost_a: np.ndarray
    cost_b: np.ndarray
    cost_c: np.ndarray
    gamma_spot: np.ndarray
    beta_spot: np.ndarray
    capacity: np.ndarray
    sigma: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        for name in ("cost_a", "cost_b", "cost_c", "gamma_spot", "beta_spot", "capacity", "sigma"):
            array = np.array(getattr(self, name), dtype=float)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        n_scenarios = self.gamma_spot.shape[0]
        for name in ("cost_a", "cost_b", "cost_c", "capacity", "sigma"):
            if getattr(self, name).shape[-1] != n_scenarios:
                raise DimensionError(f"{name} does not cover {n_scenarios} scenarios.")
        if not np.allclose(self.sigma.sum(axis=1), 1.0, rtol=0.0, atol=1e-12):
            raise ScenarioError("Scenario probabilities must sum to 1 for every generator.")

    @property
    def n_scenarios(self) -> int:
        return int(self.gamma_spot.shape[0])

    @property
    def n_conventional(self) -> int:
        return int(self.cost_b.shape[0])

    @property
    def n_res(self) -> int:
        return int(self.capacity.shape[0])


def _draw_family(
    rng: np.random.Generator,
    means: np.ndarray,
    sigmas: np.ndarray,
    n_scenarios: int,
    floor: Optional[float],
    label: str,
) -> np.ndarray:
    """Generator-major, scenario-minor draws; entries below ``floor`` are redrawn in place."""
    shape = (means.shape[0], n_scenarios)
    values = means[:, None] + sigmas[:, None] * rng.standard_normal(shape)
    if floor is None:
        return values
    for _ in range(MAX_TRUNCATION_RETRIES):
        invalid = values < floor
        if not np.any(invalid):
            return values
        rows, _cols = np.nonzero(invalid)
        values[invalid] = means[rows] + sigmas[rows] * rng.standard_normal(rows.shape[0])
    if np.any(values < floor):
        raise ScenarioError(
            f"{label}: draws stayed below the floor {floor} after {MAX_TRUNCATION_RETRIES} retries."
        )
    return values


def generate(config: CalibrationConfig, n_conventional: int, n_res: int) -> ScenarioSet:
    """Draw one scenario set; families are drawn in the order b, c, gamma, beta, a, Q."""
    if n_conventional < 1:
        raise DimensionError("At least one conventional generator is required.")
    if n_res < 0:
        raise DimensionError(f"n_res must be >= 0, got {n_res}.")
    n_scenarios = config.scenario_count
    rng = np.random.default_rng(config.seed)

    def family(params: ParameterFamily, size: int, floor: Optional[float], label: str) -> np.ndarray:
        means, sigmas = params.means(size), params.sigmas(size)
        if floor is not None and np.any(means < floor):
            raise ScenarioError(f"{label}: mean {means} lies below the floor {floor}.")
        return _draw_family(rng, means, sigmas, n_scenarios, floor, label)

    cost_b = family(config.cost_b, n_conventional, 0.0, "cost_b")
    cost_c = family(config.cost_c, n_conventional, SCENARIO_FLOOR, "cost_c")
    gamma_spot = family(config.gamma, 1, SCENARIO_FLOOR, "gamma")[0]
    beta_spot = family(config.beta, 1, SCENARIO_FLOOR, "beta")[0]
    # cost_a sits before Q so that RES sweeps leave every other draw untouched.
    if np.any(config.cost_a.sigmas(n_conventional) > 0.0):
        cost_a = family(config.cost_a, n_conventional, None, "cost_a")
    else:
        cost_a = np.repeat(config.cost_a.means(n_conventional)[:, None], n_scenarios, axis=1)
    if n_res:
        capacity = family(config.res_capacity, n_res, CAPACITY_FLOOR, "res_capacity")
    else:
        capacity = np.zeros((0, n_scenarios))

    sigma = np.full((n_conventional + n_res, n_scenarios), 1.0 / n_scenarios)
    logger.debug(
        "Generated %d scenarios for %d conventional and %d RES generators (seed=%d)",
        n_scenarios,
        n_conventional,
        n_res,
        config.seed,
    )
    return ScenarioSet(
        cost_a=cost_a,
        cost_b=cost_b,
        cost_c=cost_c,
        gamma_spot=gamma_spot,
        beta_spot=beta_spot,
        capacity=capacity,
        sigma=sigma,
        seed=config.seed,
    )


def sweep_capacity(config: CalibrationConfig, levels: Sequence[float]) -> list[CalibrationConfig]:
    """One config per RES level; seed and every other family stay fixed."""
    levels = [float(level) for level in levels]
    if not levels:
        raise ScenarioError("RES sweep needs at least one level.")
    for level in levels:
        if level < 0.0:
            raise ScenarioError(f"RES level {level} is negative.")
    if any(later < earlier for earlier, later in zip(levels, levels[1:])):
        raise ScenarioError(f"RES levels must be nondecreasing, got {levels}.")
    return [
        replace(
            config,
            res_capacity=replace(config.res_capacity, mean=(level,) * len(config.res_capacity.mean)),
        )
        for level in levels
    ]


def build_instance(
    config: CalibrationConfig,
    scenarios: ScenarioSet,
    *,
    model: MarketModel | str,
    conduct: ConductParams | ConductPreset | str,
    conventional_bounds: Sequence[tuple[float, float]],
    res_bounds: Optional[Sequence[tuple[float, Optional[float]]]] = None,
    names: Optional[Sequence[str]] = None,
) -> MarketInstance:
    """Combine a calibration, its scenario draws and the run's bounds into a game.

    A RES upper bound of ``None`` defaults to that generator's capacity mean.
    """
    n_conv, n_res = scenarios.n_conventional, scenarios.n_res
    if len(conventional_bounds) != n_conv:
        raise DimensionError(
            f"{len(conventional_bounds)} conventional bounds for {n_conv} generators."
        )
    res_bounds = list(res_bounds) if res_bounds is not None else [(0.0, None)] * n_res
    if len(res_bounds) != n_res:
        raise DimensionError(f"{len(res_bounds)} RES bounds for {n_res} generators.")
    names = list(names) if names is not None else [""] * (n_conv + n_res)

    res_means = config.res_capacity.means(n_res) if n_res else np.zeros(0)
    conventional = tuple(
        ConventionalGenerator(
            cost_a=scenarios.cost_a[i],
            cost_b=scenarios.cost_b[i],
            cost_c=scenarios.cost_c[i],
            q_futures_min=float(conventional_bounds[i][0]),
            q_futures_max=float(conventional_bounds[i][1]),
            name=names[i],
        )
        for i in range(n_conv)
    )
    res = tuple(
        ResGenerator(
            capacity=scenarios.capacity[j],
            q_futures_min=float(res_bounds[j][0]),
            q_futures_max=float(res_means[j] if res_bounds[j][1] is None else res_bounds[j][1]),
            name=names[n_conv + j],
        )
        for j in range(n_res)
    )
    if not isinstance(conduct, ConductParams):
        conduct = ConductParams.from_preset(conduct, n_conv, n_res)
    demand = DemandCurves(
        gamma_futures=config.gamma_futures,
        beta_futures=config.beta_futures,
        gamma_spot=scenarios.gamma_spot,
        beta_spot=scenarios.beta_spot,
    )
    return MarketInstance(
        conventional=conventional,
        res=res,
        demand=demand,
        conduct=conduct,
        model=MarketModel(model),
        sigma=scenarios.sigma,
    )
