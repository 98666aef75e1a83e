"""Independent oracles for the closed forms, the gradients and solved equilibria."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from oligopoly_futures.constants import ConductPreset, MarketModel
from oligopoly_futures.equilibrium import EquilibriumSolution
from oligopoly_futures.gradients import (
    FuturesPartials,
    futures_partials,
    profit_gradients,
    response_vectors,
)
from oligopoly_futures.market import (
    ConductParams,
    ConventionalGenerator,
    DemandCurves,
    MarketInstance,
    ResGenerator,
    SpotOutcome,
    futures_price,
    profit_matrix,
)
from oligopoly_futures.risk import RiskConfig, optimal_objective
from oligopoly_futures.spot import (
    best_response_outcome,
    demand_mismatch,
    spot_foc_residuals,
    spot_outcome,
)

logger = logging.getLogger(__name__)

SPOT_TOLERANCE = 1e-8
FOC_TOLERANCE = 1e-9
GRADIENT_TOLERANCE = 1e-5
BRIDGE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    cases: int

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    scale = max(1.0, float(np.max(np.abs(expected))) if expected.size else 1.0)
    return float(np.max(np.abs(actual - expected))) / scale if expected.size else 0.0


def random_guarded_instance(
    rng: np.random.Generator,
    *,
    model: MarketModel | str = MarketModel.GM,
    conduct: Optional[ConductPreset | str] = None,
    max_conventional: int = 4,
    max_res: int = 2,
    max_scenarios: int = 5,
) -> MarketInstance:
    """Random market with parameters in the calibrated ranges.

    ``conduct=None`` draws independent conjectures per generator.
    """
    n_conv = int(rng.integers(1, max_conventional + 1))
    n_res = int(rng.integers(0, max_res + 1))
    n_scenarios = int(rng.integers(1, max_scenarios + 1))

    conventional = tuple(
        ConventionalGenerator(
            cost_a=rng.uniform(0.0, 100.0, n_scenarios),
            cost_b=rng.uniform(30.0, 50.0, n_scenarios),
            cost_c=rng.uniform(0.002, 0.02, n_scenarios),
            q_futures_min=0.0,
            q_futures_max=float(rng.uniform(3000.0, 8000.0)),
        )
        for _ in range(n_conv)
    )
    res = tuple(
        ResGenerator(
            capacity=rng.uniform(0.0, 10_000.0, n_scenarios),
            q_futures_min=0.0,
            q_futures_max=float(rng.uniform(1000.0, 10_000.0)),
        )
        for _ in range(n_res)
    )
    demand = DemandCurves(
        gamma_futures=float(rng.uniform(150.0, 210.0)),
        beta_futures=float(rng.uniform(0.004, 0.006)),
        gamma_spot=rng.uniform(150.0, 210.0, n_scenarios),
        beta_spot=rng.uniform(0.004, 0.006, n_scenarios),
    )
    if conduct is None:
        n_gen = n_conv + n_res
        psi_floor = -1.0 / (n_gen - 1) if n_gen > 1 else 0.0
        params = ConductParams(
            delta=tuple(rng.uniform(-1.0, 0.5, n_conv)),
            psi=tuple(rng.uniform(psi_floor, 0.5, n_gen)),
        )
    else:
        params = ConductParams.from_preset(conduct, n_conv, n_res)
    return MarketInstance(
        conventional=conventional, res=res, demand=demand, conduct=params, model=MarketModel(model)
    )


def random_positions(rng: np.random.Generator, instance: MarketInstance) -> np.ndarray:
    return rng.uniform(instance.q_futures_min, instance.q_futures_max)


def _step(q_futures: np.ndarray, step_scale: float) -> float:
    return step_scale * max(1.0, float(np.max(np.abs(q_futures))) if q_futures.size else 1.0)


def finite_difference_partials(
    instance: MarketInstance, q_futures: np.ndarray, *, step_scale: float = 1e-4
) -> FuturesPartials:
    """Central differences of the closed-form maps along each mover's conjectured response."""
    q = instance.check_futures(q_futures)
    h = _step(q, step_scale)
    futures_response, spot_response = response_vectors(instance)
    n_gen, n_scenarios = instance.n_generators, instance.n_scenarios
    d_price_futures = np.empty(n_gen)
    d_price_spot = np.empty((n_gen, n_scenarios))
    d_q_spot = np.empty((n_gen, n_scenarios))
    for k in range(n_gen):
        up = futures_price(instance, q + h * futures_response[k])
        down = futures_price(instance, q - h * futures_response[k])
        d_price_futures[k] = (up - down) / (2.0 * h)
        spot_up = spot_outcome(instance, q + h * spot_response[k])
        spot_down = spot_outcome(instance, q - h * spot_response[k])
        d_price_spot[k] = (spot_up.price_spot - spot_down.price_spot) / (2.0 * h)
        d_q_spot[k] = (spot_up.q_spot[k] - spot_down.q_spot[k]) / (2.0 * h)
    return FuturesPartials(d_price_futures, d_price_spot, d_q_spot)


def finite_difference_gradients(
    instance: MarketInstance, q_futures: np.ndarray, *, step_scale: float = 1e-4
) -> np.ndarray:
    """Central differences of each profit composed with the closed-form spot map."""
    q = instance.check_futures(q_futures)
    h = _step(q, step_scale)
    futures_response, spot_response = response_vectors(instance)
    gradients = np.empty((instance.n_generators, instance.n_scenarios))
    for k in range(instance.n_generators):
        values = []
        for sign in (1.0, -1.0):
            price_futures = futures_price(instance, q + sign * h * futures_response[k])
            shifted = q + sign * h * spot_response[k]
            spot = spot_outcome(instance, shifted)
            values.append(profit_matrix(instance, price_futures, shifted, spot)[k])
        gradients[k] = (values[0] - values[1]) / (2.0 * h)
    return gradients


def spot_profit_slope(
    instance: MarketInstance,
    q_futures: np.ndarray,
    outcome: SpotOutcome,
    generator_id: int,
    *,
    step: float,
) -> np.ndarray:
    """Central difference of a conventional generator's profit in its own spot output.

    Rivals respond per the spot conjecture, so the price moves by -beta*(1+delta)
    per MWh of own output.
    """
    q = instance.check_futures(q_futures)
    if not instance.is_conventional(generator_id):
        raise ValueError("Spot conjectures apply to conventional generators only.")
    if instance.model is MarketModel.SPOT_ONLY:
        q = np.zeros_like(q)
    price_futures = futures_price(instance, q)
    slope = instance.demand.beta_spot * (1.0 + instance.delta[generator_id])
    values = []
    for sign in (1.0, -1.0):
        q_spot = np.array(outcome.q_spot)
        q_spot[generator_id] += sign * step
        shifted = replace(outcome, price_spot=outcome.price_spot - sign * step * slope, q_spot=q_spot)
        values.append(profit_matrix(instance, price_futures, q, shifted)[generator_id])
    return (values[0] - values[1]) / (2.0 * step)


def unilateral_deviation_gap(
    instance: MarketInstance,
    risk: RiskConfig,
    solution: EquilibriumSolution,
    generator_id: int,
    *,
    points: int = 2001,
) -> float:
    """Largest relative gain from moving one generator's q^F with rivals fixed.

    Only meaningful under zero futures conjectures, where the conjectured
    gradient is the true partial derivative.
    """
    instance.check_generator(generator_id)
    q = np.array(solution.decision.q_futures, dtype=float)
    sigma = instance.sigma[generator_id]

    def objective(position: float) -> float:
        trial = q.copy()
        trial[generator_id] = position
        price_futures = futures_price(instance, trial)
        spot = spot_outcome(instance, trial)
        profits = profit_matrix(instance, price_futures, trial, spot)[generator_id]
        return optimal_objective(profits, sigma, risk)

    reference = objective(q[generator_id])
    grid = np.linspace(
        instance.q_futures_min[generator_id], instance.q_futures_max[generator_id], points
    )
    best = max(objective(float(position)) for position in grid)
    return max(0.0, best - reference) / max(1.0, abs(reference))


def model_bridge_gap(instance: MarketInstance) -> float:
    """Profit spread across contract designs when nobody trades futures."""
    zeros = np.zeros(instance.n_generators)
    profits = []
    for model in MarketModel:
        variant = replace(instance, model=model)
        spot = spot_outcome(variant, zeros)
        profits.append(profit_matrix(variant, futures_price(variant, zeros), zeros, spot))
    return max(relative_error(other, profits[0]) for other in profits[1:])


def check_instance(instance: MarketInstance, positions: Iterable[np.ndarray]) -> dict[str, float]:
    """Worst errors of every oracle on one instance over several futures positions."""
    errors = {"spot_oracle": 0.0, "spot_foc": 0.0, "demand": 0.0, "partials": 0.0, "gradients": 0.0}
    for q in positions:
        q = instance.check_futures(q)
        closed = spot_outcome(instance, q)
        oracle = best_response_outcome(instance, q)
        errors["spot_oracle"] = max(
            errors["spot_oracle"],
            relative_error(oracle.price_spot, closed.price_spot),
            relative_error(oracle.q_spot, closed.q_spot),
        )
        scale = 1.0 + float(np.max(np.abs(instance.gamma_hat)))
        errors["spot_foc"] = max(
            errors["spot_foc"],
            float(np.max(np.abs(spot_foc_residuals(instance, q, closed)))) / scale,
        )
        errors["demand"] = max(errors["demand"], demand_mismatch(instance, q, closed))
        if instance.model is MarketModel.SPOT_ONLY:
            continue
        analytic = futures_partials(instance, q)
        numeric = finite_difference_partials(instance, q)
        errors["partials"] = max(
            errors["partials"],
            relative_error(analytic.d_price_futures, numeric.d_price_futures),
            relative_error(analytic.d_price_spot, numeric.d_price_spot),
            relative_error(analytic.d_q_spot, numeric.d_q_spot),
        )
        errors["gradients"] = max(
            errors["gradients"],
            relative_error(profit_gradients(instance, q), finite_difference_gradients(instance, q)),
        )
    return errors


_TOLERANCES = {
    "spot_oracle": SPOT_TOLERANCE,
    "spot_foc": FOC_TOLERANCE,
    "demand": FOC_TOLERANCE,
    "partials": GRADIENT_TOLERANCE,
    "gradients": GRADIENT_TOLERANCE,
    "model_bridge": BRIDGE_TOLERANCE,
}


def run_checks(
    instance: MarketInstance, *, random_instances: int = 200, seed: int = 0
) -> list[CheckResult]:
    """The config's own market at three positions, then a batch of random markets."""
    lower, upper = instance.q_futures_min, instance.q_futures_max
    own = check_instance(instance, (lower, 0.5 * (lower + upper), upper))
    own["model_bridge"] = model_bridge_gap(instance)
    results = [
        CheckResult(f"config/{name}", error, _TOLERANCES[name], 1) for name, error in own.items()
    ]

    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(_TOLERANCES, 0.0)
    for index in range(random_instances):
        model = (MarketModel.GM, MarketModel.CFD, MarketModel.SPOT_ONLY)[index % 3]
        conduct = (ConductPreset.COURNOT, ConductPreset.PERFECT, None)[(index // 3) % 3]
        candidate = random_guarded_instance(rng, model=model, conduct=conduct)
        found = check_instance(candidate, (random_positions(rng, candidate),))
        found["model_bridge"] = model_bridge_gap(candidate)
        for name, error in found.items():
            worst[name] = max(worst[name], error)
    results += [
        CheckResult(f"random/{name}", error, _TOLERANCES[name], random_instances)
        for name, error in worst.items()
    ]
    for result in results:
        level = logging.INFO if result.passed else logging.WARNING
        logger.log(level, "%s: max error %.3e (tolerance %.0e)", result.name, result.max_error, result.tolerance)
    return results
