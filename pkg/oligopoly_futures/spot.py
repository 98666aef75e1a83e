"""Closed-form stage-two equilibria and a best-response oracle that checks them."""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Sequence

import numpy as np

from oligopoly_futures.constants import (
    ORACLE_MAX_ITERATIONS,
    ORACLE_TOLERANCE,
    TAU_DENOMINATOR_FLOOR,
    MarketModel,
)
from oligopoly_futures.errors import ConvergenceError, DegenerateConductError
from oligopoly_futures.market import MarketInstance, SpotOutcome, spot_demand_prices

logger = logging.getLogger(__name__)


def check_singularity(instance: MarketInstance) -> np.ndarray:
    """Return beta*(1+delta)+c per generator and scenario, raising below the floor."""
    denominator = (
        instance.demand.beta_spot[None, :] * (1.0 + instance.delta[:, None]) + instance.cost_c
    )
    if np.any(denominator < TAU_DENOMINATOR_FLOOR):
        i, w = np.unravel_index(int(np.argmin(denominator)), denominator.shape)
        raise DegenerateConductError(
            f"degenerate conduct/cost: beta*(1+delta)+c = {denominator[i, w]:.3e} "
            f"for generator {i} in scenario {w} (floor {TAU_DENOMINATOR_FLOOR:g})."
        )
    return denominator


def tau_phi(instance: MarketInstance) -> tuple[np.ndarray, np.ndarray]:
    tau = 1.0 / check_singularity(instance)
    phi = 1.0 / (1.0 + instance.demand.beta_spot * tau.sum(axis=0))
    return tau, phi


def _require_model(instance: MarketInstance, model: MarketModel) -> None:
    if instance.model is not model:
        raise ValueError(f"Expected a {model.value} instance, got {instance.model.value}.")


def _assemble(
    instance: MarketInstance,
    price: np.ndarray,
    q_conventional: np.ndarray,
    q_res_futures: np.ndarray,
    tau: np.ndarray,
    phi: np.ndarray,
) -> SpotOutcome:
    q_res = instance.capacity - np.asarray(q_res_futures, dtype=float)[:, None]
    q_spot = np.vstack([q_conventional, q_res])
    for array in (price, q_spot, tau, phi):
        array.setflags(write=False)
    return SpotOutcome(price_spot=price, q_spot=q_spot, tau=tau, phi_aux=phi)


def gm_spot(instance: MarketInstance, q_futures: Sequence[float] | np.ndarray) -> SpotOutcome:
    _require_model(instance, MarketModel.GM)
    q = instance.check_futures(q_futures)
    q_conv = q[: instance.n_conventional, None]
    tau, phi = tau_phi(instance)
    beta = instance.demand.beta_spot
    b, c = instance.cost_b, instance.cost_c

    price = phi * (
        instance.gamma_hat - beta * q_conv.sum() + beta * np.sum(tau * (b + c * q_conv), axis=0)
    )
    q_conventional = tau * (price[None, :] - b - c * q_conv)
    return _assemble(instance, price, q_conventional, q[instance.n_conventional :], tau, phi)


def cfd_spot(instance: MarketInstance, q_futures: Sequence[float] | np.ndarray) -> SpotOutcome:
    _require_model(instance, MarketModel.CFD)
    q = instance.check_futures(q_futures)
    q_conv = q[: instance.n_conventional, None]
    tau, phi = tau_phi(instance)
    beta = instance.demand.beta_spot
    b = instance.cost_b
    # beta*(1+delta) is the conjectured price drop per MWh of own spot output.
    slope = beta[None, :] * (1.0 + instance.delta[:, None])

    price = phi * (
        instance.gamma_hat
        + beta * np.sum(tau * b, axis=0)
        - beta * np.sum(q_conv * slope * tau, axis=0)
    )
    q_conventional = tau * (price[None, :] - b + q_conv * slope)
    return _assemble(instance, price, q_conventional, q[instance.n_conventional :], tau, phi)


def spot_only(instance: MarketInstance) -> SpotOutcome:
    _require_model(instance, MarketModel.SPOT_ONLY)
    tau, phi = tau_phi(instance)
    beta = instance.demand.beta_spot
    b = instance.cost_b

    price = phi * (instance.gamma_hat + beta * np.sum(tau * b, axis=0))
    q_conventional = tau * (price[None, :] - b)
    return _assemble(instance, price, q_conventional, np.zeros(instance.n_res), tau, phi)


def spot_outcome(instance: MarketInstance, q_futures: Sequence[float] | np.ndarray) -> SpotOutcome:
    """Closed-form spot equilibrium for whichever contract design the instance uses."""
    if instance.model is MarketModel.GM:
        return gm_spot(instance, q_futures)
    if instance.model is MarketModel.CFD:
        return cfd_spot(instance, q_futures)
    instance.check_futures(q_futures)
    return spot_only(instance)


def spot_only_counterpart(instance: MarketInstance) -> SpotOutcome:
    """The same market with the futures stage removed."""
    return spot_only(replace(instance, model=MarketModel.SPOT_ONLY))


def spot_foc_residuals(
    instance: MarketInstance, q_futures: Sequence[float] | np.ndarray, outcome: SpotOutcome
) -> np.ndarray:
    """Conjectured first derivative of each conventional generator's spot profit."""
    q = instance.check_futures(q_futures)
    q_conv = q[: instance.n_conventional, None]
    s = outcome.conventional_q_spot
    price = outcome.price_spot[None, :]
    b, c = instance.cost_b, instance.cost_c
    slope = instance.demand.beta_spot[None, :] * (1.0 + instance.delta[:, None])

    if instance.model is MarketModel.GM:
        return price - b - c * (q_conv + s) - slope * s
    if instance.model is MarketModel.CFD:
        return slope * (q_conv - s) + price - b - c * s
    return price - b - c * s - slope * s


def demand_mismatch(
    instance: MarketInstance, q_futures: Sequence[float] | np.ndarray, outcome: SpotOutcome
) -> float:
    """Largest relative gap between the returned price and raw inverse demand."""
    q = instance.check_futures(q_futures)
    rederived = spot_demand_prices(instance, outcome.conventional_q_spot, q)
    scale = np.maximum(1.0, np.abs(outcome.price_spot))
    return float(np.max(np.abs(rederived - outcome.price_spot) / scale))


def best_response_iterate(
    instance: MarketInstance,
    q_futures: Sequence[float] | np.ndarray,
    *,
    tol: float = ORACLE_TOLERANCE,
    max_iterations: int = ORACLE_MAX_ITERATIONS,
) -> tuple[np.ndarray, int]:
    """Gauss-Seidel sweeps over the conventional generators, all scenarios at once.

    Each generator solves its own first-order condition with the price taken from
    raw demand given the rivals' current quantities. Returns the conventional spot
    quantities and the number of sweeps used.
    """
    q = instance.check_futures(q_futures)
    check_singularity(instance)
    n_conv = instance.n_conventional
    q_conv = q[:n_conv]
    beta = instance.demand.beta_spot
    b, c = instance.cost_b, instance.cost_c
    slope = beta[None, :] * (1.0 + instance.delta[:, None])
    denominator = beta[None, :] + slope + c

    intercept = instance.gamma_hat.copy()
    if instance.model is MarketModel.GM:
        intercept = intercept - beta * q_conv.sum()
        own_term = -b - c * q_conv[:, None]
    elif instance.model is MarketModel.CFD:
        own_term = -b + slope * q_conv[:, None]
    else:
        own_term = -b

    s = np.zeros((n_conv, instance.n_scenarios))
    total = s.sum(axis=0)
    for sweep in range(1, max_iterations + 1):
        largest_change = 0.0
        for i in range(n_conv):
            rivals = total - s[i]
            updated = (intercept - beta * rivals + own_term[i]) / denominator[i]
            change = float(np.max(np.abs(updated - s[i])))
            largest_change = max(largest_change, change)
            total = rivals + updated
            s[i] = updated
        if largest_change < tol:
            return s, sweep
    raise ConvergenceError(
        f"Best-response iteration did not converge in {max_iterations} sweeps "
        f"(last change {largest_change:.3e}).",
        last_iterate=s,
    )


def best_response_outcome(
    instance: MarketInstance,
    q_futures: Sequence[float] | np.ndarray,
    *,
    tol: float = ORACLE_TOLERANCE,
    max_iterations: int = ORACLE_MAX_ITERATIONS,
) -> SpotOutcome:
    q = instance.check_futures(q_futures)
    q_conventional, sweeps = best_response_iterate(
        instance, q, tol=tol, max_iterations=max_iterations
    )
    logger.debug("Best-response oracle converged after %d sweeps", sweeps)
    tau, phi = tau_phi(instance)
    price = spot_demand_prices(instance, q_conventional, q)
    q_res_futures = q[instance.n_conventional :]
    if instance.model is MarketModel.SPOT_ONLY:
        q_res_futures = np.zeros(instance.n_res)
    return _assemble(instance, price, q_conventional, q_res_futures, tau, phi)


def best_response_oracle(
    instance: MarketInstance,
    scenario_index: int,
    q_futures: Sequence[float] | np.ndarray,
    *,
    tol: float = ORACLE_TOLERANCE,
    max_iterations: int = ORACLE_MAX_ITERATIONS,
) -> SpotOutcome:
    """Iterated best responses in a single scenario."""
    instance.check_scenario(scenario_index)
    full = best_response_outcome(instance, q_futures, tol=tol, max_iterations=max_iterations)
    pick = slice(scenario_index, scenario_index + 1)
    return SpotOutcome(
        price_spot=full.price_spot[pick],
        q_spot=full.q_spot[:, pick],
        tau=full.tau[:, pick],
        phi_aux=full.phi_aux[pick],
    )
