"""Domain types, demand curves and per-scenario profits for every market model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from oligopoly_futures.constants import ConductPreset, MarketModel
from oligopoly_futures.errors import DimensionError

logger = logging.getLogger(__name__)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


def _frozen(values: object, *, ndim: int, name: str) -> np.ndarray:
    array = np.array(values, dtype=float)
    if array.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {array.shape}.")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite values.")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ConductParams:
    """Spot conjectures delta (conventional only) and futures conjectures psi (all generators)."""

    delta: tuple[float, ...]
    psi: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "delta", tuple(float(value) for value in self.delta))
        object.__setattr__(self, "psi", tuple(float(value) for value in self.psi))

    @classmethod
    def cournot(cls, n_conventional: int, n_res: int) -> ConductParams:
        return cls(delta=(0.0,) * n_conventional, psi=(0.0,) * (n_conventional + n_res))

    @classmethod
    def perfect_competition(cls, n_conventional: int, n_res: int) -> ConductParams:
        n_generators = n_conventional + n_res
        psi = -1.0 / (n_generators - 1) if n_generators > 1 else 0.0
        return cls(delta=(-1.0,) * n_conventional, psi=(psi,) * n_generators)

    @classmethod
    def from_preset(cls, preset: ConductPreset | str, n_conventional: int, n_res: int) -> ConductParams:
        preset = ConductPreset(preset)
        if preset is ConductPreset.COURNOT:
            return cls.cournot(n_conventional, n_res)
        return cls.perfect_competition(n_conventional, n_res)

    def validate(self, n_conventional: int, n_res: int) -> None:
        n_generators = n_conventional + n_res
        if len(self.delta) != n_conventional:
            raise DimensionError(
                f"delta has {len(self.delta)} entries for {n_conventional} conventional generators."
            )
        if len(self.psi) != n_generators:
            raise DimensionError(f"psi has {len(self.psi)} entries for {n_generators} generators.")
        for index, value in enumerate(self.delta):
            _require(value >= -1.0, f"delta[{index}]={value} is below -1.")
        if n_generators > 1:
            psi_floor = -1.0 / (n_generators - 1)
            for index, value in enumerate(self.psi):
                _require(
                    value >= psi_floor - 1e-15,
                    f"psi[{index}]={value} is below -1/(I+J-1)={psi_floor}.",
                )


@dataclass(frozen=True)
class ConventionalGenerator:
    cost_a: np.ndarray
    cost_b: np.ndarray
    cost_c: np.ndarray
    q_futures_min: float
    q_futures_max: float
    name: str = ""

    def __post_init__(self) -> None:
        for attr in ("cost_a", "cost_b", "cost_c"):
            object.__setattr__(self, attr, _frozen(getattr(self, attr), ndim=1, name=attr))
        _require(
            self.cost_a.shape == self.cost_b.shape == self.cost_c.shape,
            f"Generator {self.name!r}: cost triples must share one scenario count.",
        )
        _require(bool(np.all(self.cost_b >= 0.0)), f"Generator {self.name!r}: cost_b must be >= 0.")
        _require(bool(np.all(self.cost_c >= 0.0)), f"Generator {self.name!r}: cost_c must be >= 0.")
        _check_bounds(self.name, self.q_futures_min, self.q_futures_max)


@dataclass(frozen=True)
class ResGenerator:
    capacity: np.ndarray
    q_futures_min: float
    q_futures_max: float
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "capacity", _frozen(self.capacity, ndim=1, name="capacity"))
        _require(bool(np.all(self.capacity >= 0.0)), f"RES {self.name!r}: capacity must be >= 0.")
        _check_bounds(self.name, self.q_futures_min, self.q_futures_max)


def _check_bounds(name: str, lower: float, upper: float) -> None:
    _require(lower >= 0.0, f"Generator {name!r}: q_futures_min={lower} must be >= 0.")
    _require(
        lower <= upper,
        f"Generator {name!r}: q_futures_min={lower} exceeds q_futures_max={upper}.",
    )


@dataclass(frozen=True)
class DemandCurves:
    gamma_futures: float
    beta_futures: float
    gamma_spot: np.ndarray
    beta_spot: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "gamma_spot", _frozen(self.gamma_spot, ndim=1, name="gamma_spot"))
        object.__setattr__(self, "beta_spot", _frozen(self.beta_spot, ndim=1, name="beta_spot"))
        _require(self.gamma_futures > 0.0, f"gamma_futures={self.gamma_futures} must be > 0.")
        _require(self.beta_futures > 0.0, f"beta_futures={self.beta_futures} must be > 0.")
        _require(self.gamma_spot.shape == self.beta_spot.shape, "Spot demand arrays differ in length.")
        _require(bool(np.all(self.gamma_spot > 0.0)), "gamma_spot must be > 0 in every scenario.")
        _require(bool(np.all(self.beta_spot > 0.0)), "beta_spot must be > 0 in every scenario.")


@dataclass(frozen=True)
class MarketInstance:
    """The full game: generators, demand, conduct, contract design and scenario weights.

    Generator ids run over the conventional generators first, then the RES generators.
    ``sigma`` holds per-generator scenario probabilities; ``None`` means equiprobable.
    """

    conventional: tuple[ConventionalGenerator, ...]
    res: tuple[ResGenerator, ...]
    demand: DemandCurves
    conduct: ConductParams
    model: MarketModel
    sigma: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        object.__setattr__(self, "conventional", tuple(self.conventional))
        object.__setattr__(self, "res", tuple(self.res))
        object.__setattr__(self, "model", MarketModel(self.model))
        if not self.conventional:
            raise DimensionError("A market needs at least one conventional generator.")

        n_scenarios = self.demand.gamma_spot.shape[0]
        _require(n_scenarios >= 1, "At least one scenario is required.")
        for generator in self.conventional:
            if generator.cost_b.shape[0] != n_scenarios:
                raise DimensionError(
                    f"Generator {generator.name!r} has {generator.cost_b.shape[0]} scenarios, "
                    f"demand has {n_scenarios}."
                )
        for generator in self.res:
            if generator.capacity.shape[0] != n_scenarios:
                raise DimensionError(
                    f"RES {generator.name!r} has {generator.capacity.shape[0]} scenarios, "
                    f"demand has {n_scenarios}."
                )
        self.conduct.validate(len(self.conventional), len(self.res))

        n_generators = len(self.conventional) + len(self.res)
        if self.sigma is None:
            sigma = np.full((n_generators, n_scenarios), 1.0 / n_scenarios)
        else:
            sigma = np.array(self.sigma, dtype=float)
        if sigma.shape != (n_generators, n_scenarios):
            raise DimensionError(
                f"sigma has shape {sigma.shape}, expected {(n_generators, n_scenarios)}."
            )
        _require(bool(np.all(sigma >= 0.0)), "Scenario probabilities must be >= 0.")
        _require(
            bool(np.all(np.abs(sigma.sum(axis=1) - 1.0) <= 1e-12)),
            "Scenario probabilities must sum to 1 for every generator.",
        )
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_conventional(self) -> int:
        return len(self.conventional)

    @property
    def n_res(self) -> int:
        return len(self.res)

    @property
    def n_generators(self) -> int:
        return len(self.conventional) + len(self.res)

    @property
    def n_scenarios(self) -> int:
        return int(self.demand.gamma_spot.shape[0])

    @cached_property
    def cost_a(self) -> np.ndarray:
        return np.stack([generator.cost_a for generator in self.conventional])

    @cached_property
    def cost_b(self) -> np.ndarray:
        return np.stack([generator.cost_b for generator in self.conventional])

    @cached_property
    def cost_c(self) -> np.ndarray:
        return np.stack([generator.cost_c for generator in self.conventional])

    @cached_property
    def capacity(self) -> np.ndarray:
        if not self.res:
            return np.zeros((0, self.n_scenarios))
        return np.stack([generator.capacity for generator in self.res])

    @cached_property
    def gamma_hat(self) -> np.ndarray:
        """Spot intercept net of RES output, per scenario."""
        return self.demand.gamma_spot - self.demand.beta_spot * self.capacity.sum(axis=0)

    @cached_property
    def delta(self) -> np.ndarray:
        return np.asarray(self.conduct.delta, dtype=float)

    @cached_property
    def psi(self) -> np.ndarray:
        return np.asarray(self.conduct.psi, dtype=float)

    @cached_property
    def q_futures_min(self) -> np.ndarray:
        bounds = [g.q_futures_min for g in self.conventional] + [g.q_futures_min for g in self.res]
        return np.asarray(bounds, dtype=float)

    @cached_property
    def q_futures_max(self) -> np.ndarray:
        bounds = [g.q_futures_max for g in self.conventional] + [g.q_futures_max for g in self.res]
        return np.asarray(bounds, dtype=float)

    @property
    def generator_names(self) -> tuple[str, ...]:
        names = [g.name or f"conv{i + 1}" for i, g in enumerate(self.conventional)]
        names += [g.name or f"res{j + 1}" for j, g in enumerate(self.res)]
        return tuple(names)

    def is_conventional(self, generator_id: int) -> bool:
        self.check_generator(generator_id)
        return generator_id < self.n_conventional

    def check_generator(self, generator_id: int) -> None:
        if not 0 <= generator_id < self.n_generators:
            raise DimensionError(
                f"Unknown generator id {generator_id}; instance has {self.n_generators} generators."
            )

    def check_scenario(self, scenario_index: int) -> None:
        if not 0 <= scenario_index < self.n_scenarios:
            raise DimensionError(
                f"Scenario index {scenario_index} out of range for {self.n_scenarios} scenarios."
            )

    def check_futures(self, q_futures: Sequence[float] | np.ndarray) -> np.ndarray:
        q = np.asarray(q_futures, dtype=float)
        if q.shape != (self.n_generators,):
            raise DimensionError(
                f"q_futures has shape {q.shape}, expected ({self.n_generators},)."
            )
        return q


@dataclass(frozen=True)
class FuturesDecision:
    q_futures: np.ndarray
    price_futures: float

    @classmethod
    def from_quantities(
        cls, instance: MarketInstance, q_futures: Sequence[float] | np.ndarray
    ) -> FuturesDecision:
        q = instance.check_futures(q_futures).copy()
        slack = 1e-9 * (1.0 + np.abs(instance.q_futures_max))
        outside = (q < instance.q_futures_min - slack) | (q > instance.q_futures_max + slack)
        if np.any(outside):
            index = int(np.flatnonzero(outside)[0])
            raise ValueError(
                f"q_futures[{index}]={q[index]} lies outside "
                f"[{instance.q_futures_min[index]}, {instance.q_futures_max[index]}]."
            )
        q = np.clip(q, instance.q_futures_min, instance.q_futures_max)
        q.setflags(write=False)
        return cls(q_futures=q, price_futures=futures_price(instance, q))


@dataclass(frozen=True)
class SpotOutcome:
    """Stage-two equilibrium; ``q_spot`` rows are conventional generators then RES."""

    price_spot: np.ndarray
    q_spot: np.ndarray
    tau: np.ndarray
    phi_aux: np.ndarray

    @property
    def conventional_q_spot(self) -> np.ndarray:
        return self.q_spot[: self.tau.shape[0]]


def futures_price(instance: MarketInstance, q_futures: Sequence[float] | np.ndarray) -> float:
    q = instance.check_futures(q_futures)
    return float(instance.demand.gamma_futures - instance.demand.beta_futures * q.sum())


def spot_demand_prices(
    instance: MarketInstance, q_spot_conventional: np.ndarray, q_futures: np.ndarray
) -> np.ndarray:
    """Raw inverse demand for every scenario at the given conventional spot quantities."""
    beta = instance.demand.beta_spot
    supplied = np.asarray(q_spot_conventional, dtype=float).sum(axis=0)
    if instance.model is MarketModel.GM:
        supplied = supplied + np.asarray(q_futures[: instance.n_conventional], dtype=float).sum()
    return instance.gamma_hat - beta * supplied


def spot_demand_price(
    instance: MarketInstance,
    scenario_index: int,
    q_spot: Sequence[float] | np.ndarray,
    q_futures: Sequence[float] | np.ndarray,
) -> float:
    instance.check_scenario(scenario_index)
    q_s = np.asarray(q_spot, dtype=float)
    if q_s.shape != (instance.n_conventional,):
        raise DimensionError(
            f"q_spot has shape {q_s.shape}, expected ({instance.n_conventional},)."
        )
    q_f = instance.check_futures(q_futures)
    gamma_hat = instance.gamma_hat[scenario_index]
    beta = instance.demand.beta_spot[scenario_index]
    supplied = q_s.sum()
    if instance.model is MarketModel.GM:
        supplied += q_f[: instance.n_conventional].sum()
    return float(gamma_hat - beta * supplied)


def profit_matrix(
    instance: MarketInstance,
    price_futures: float,
    q_futures: np.ndarray,
    spot: SpotOutcome,
) -> np.ndarray:
    """Profits of every generator in every scenario, shape (I+J, |Omega|).

    A CFD RES generator settles (P^F - P^S) q^F and sells all of Q at P^S, so its
    profit equals the GM one and its q^F gradient is P^F' q^F + P^F - P^S.
    """
    n_conv = instance.n_conventional
    q = np.asarray(q_futures, dtype=float)
    q_conv = q[:n_conv, None]
    q_res = q[n_conv:, None]
    price = spot.price_spot[None, :]
    s = spot.q_spot[:n_conv]
    a, b, c = instance.cost_a, instance.cost_b, instance.cost_c

    if instance.model is MarketModel.GM:
        output = q_conv + s
        conventional = price_futures * q_conv + price * s - (a + b * output + 0.5 * c * output**2)
    elif instance.model is MarketModel.CFD:
        conventional = (price_futures - price) * q_conv + price * s - a - b * s - 0.5 * c * s**2
    else:
        conventional = price * s - a - b * s - 0.5 * c * s**2

    if instance.model is MarketModel.SPOT_ONLY:
        renewable = price * instance.capacity
    else:
        renewable = (price_futures - price) * q_res + price * instance.capacity
    return np.vstack([conventional, renewable])


def profit(
    instance: MarketInstance,
    scenario_index: int,
    decision: FuturesDecision,
    spot: SpotOutcome,
    generator_id: int,
) -> float:
    instance.check_generator(generator_id)
    instance.check_scenario(scenario_index)
    profits = profit_matrix(instance, decision.price_futures, decision.q_futures, spot)
    return float(profits[generator_id, scenario_index])


def expected_profits(instance: MarketInstance, profits: np.ndarray) -> np.ndarray:
    return np.sum(instance.sigma * profits, axis=1)


def warn_if_negative(instance: MarketInstance, spot: SpotOutcome, label: str = "") -> None:
    """Negative spot prices and quantities are kept; this only reports them."""
    negative_quantities = int(np.count_nonzero(spot.q_spot < 0.0))
    negative_prices = int(np.count_nonzero(spot.price_spot < 0.0))
    if negative_quantities or negative_prices:
        logger.warning(
            "%s%s spot outcome has %d negative quantities and %d negative prices",
            f"{label}: " if label else "",
            instance.model.value,
            negative_quantities,
            negative_prices,
        )
