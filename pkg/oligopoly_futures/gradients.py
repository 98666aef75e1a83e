"""First-stage derivatives of scenario profits with respect to futures positions.

A mover's conjecture enters through two response vectors. In the futures market
every rival shifts its position by the mover's psi. In the spot chain a
conventional mover's conventional rivals shift by the same psi, while a RES mover
moves alone, so the spot price does not react to RES futures.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from oligopoly_futures.constants import MarketModel
from oligopoly_futures.market import MarketInstance, SpotOutcome, futures_price
from oligopoly_futures.spot import spot_outcome, tau_phi

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FuturesPartials:
    """Conjectured partials of P^F, P^S and the mover's own q^S, per generator."""

    d_price_futures: np.ndarray
    d_price_spot: np.ndarray
    d_q_spot: np.ndarray


@dataclass(frozen=True)
class ProfitSensitivities:
    """Partials of each scenario profit w.r.t. (P^F, P^S, own q^F, own q^S)."""

    price_futures: np.ndarray
    price_spot: np.ndarray
    own_futures: np.ndarray
    own_spot: np.ndarray


def _require_futures_model(instance: MarketInstance) -> None:
    if instance.model not in (MarketModel.GM, MarketModel.CFD):
        raise ValueError("The spot-only model has no futures stage to differentiate.")


def response_vectors(instance: MarketInstance) -> tuple[np.ndarray, np.ndarray]:
    """Rows are movers: (futures-market response, spot-chain response)."""
    n_conv, n_gen = instance.n_conventional, instance.n_generators
    psi = instance.psi
    futures_response = np.tile(psi[:, None], (1, n_gen))
    np.fill_diagonal(futures_response, 1.0)

    spot_response = np.zeros((n_gen, n_gen))
    spot_response[:n_conv, :n_conv] = psi[:n_conv, None]
    np.fill_diagonal(spot_response, 1.0)
    return futures_response, spot_response


def _futures_price_partials(instance: MarketInstance) -> np.ndarray:
    return -instance.demand.beta_futures * (1.0 + (instance.n_generators - 1) * instance.psi)


def gm_partials(instance: MarketInstance, q_futures: Sequence[float] | np.ndarray) -> FuturesPartials:
    if instance.model is not MarketModel.GM:
        raise ValueError(f"gm_partials needs a gm instance, got {instance.model.value}.")
    instance.check_futures(q_futures)
    n_conv = instance.n_conventional
    tau, phi = tau_phi(instance)
    beta = instance.demand.beta_spot[None, :]
    c = instance.cost_c
    psi_conv = instance.psi[:n_conv, None]

    c_tau = c * tau
    rivals_c_tau = c_tau.sum(axis=0)[None, :] - c_tau
    d_price_spot = phi[None, :] * (
        -beta * (1.0 + (n_conv - 1) * psi_conv) + beta * c_tau + beta * psi_conv * rivals_c_tau
    )
    d_q_spot = tau * (d_price_spot - c)
    return _with_res_block(instance, d_price_spot, d_q_spot)


def cfd_partials(instance: MarketInstance, q_futures: Sequence[float] | np.ndarray) -> FuturesPartials:
    if instance.model is not MarketModel.CFD:
        raise ValueError(f"cfd_partials needs a cfd instance, got {instance.model.value}.")
    instance.check_futures(q_futures)
    n_conv = instance.n_conventional
    tau, phi = tau_phi(instance)
    beta = instance.demand.beta_spot[None, :]
    psi_conv = instance.psi[:n_conv, None]
    one_plus_delta = 1.0 + instance.delta[:, None]

    weighted = one_plus_delta * tau
    rivals_weighted = weighted.sum(axis=0)[None, :] - weighted
    d_price_spot = -phi[None, :] * beta**2 * (weighted + psi_conv * rivals_weighted)
    d_q_spot = tau * d_price_spot + tau * beta * one_plus_delta
    return _with_res_block(instance, d_price_spot, d_q_spot)


def _with_res_block(
    instance: MarketInstance, d_price_spot: np.ndarray, d_q_spot: np.ndarray
) -> FuturesPartials:
    n_res, n_scenarios = instance.n_res, instance.n_scenarios
    return FuturesPartials(
        d_price_futures=_futures_price_partials(instance),
        d_price_spot=np.vstack([d_price_spot, np.zeros((n_res, n_scenarios))]),
        d_q_spot=np.vstack([d_q_spot, -np.ones((n_res, n_scenarios))]),
    )


def futures_partials(
    instance: MarketInstance, q_futures: Sequence[float] | np.ndarray
) -> FuturesPartials:
    _require_futures_model(instance)
    if instance.model is MarketModel.GM:
        return gm_partials(instance, q_futures)
    return cfd_partials(instance, q_futures)


def profit_sensitivities(
    instance: MarketInstance,
    q_futures: np.ndarray,
    spot: SpotOutcome,
    price_futures: float,
) -> ProfitSensitivities:
    _require_futures_model(instance)
    n_conv = instance.n_conventional
    q = np.asarray(q_futures, dtype=float)
    q_conv = np.broadcast_to(q[:n_conv, None], (n_conv, instance.n_scenarios))
    q_res = np.broadcast_to(q[n_conv:, None], (instance.n_res, instance.n_scenarios))
    price = np.broadcast_to(spot.price_spot[None, :], q_conv.shape)
    s = spot.q_spot[:n_conv]
    b, c = instance.cost_b, instance.cost_c

    if instance.model is MarketModel.GM:
        marginal_cost = b + c * (q_conv + s)
        conv = (q_conv, s, price_futures - marginal_cost, price - marginal_cost)
    else:
        conv = (q_conv, s - q_conv, price_futures - price, price - b - c * s)

    res_price = np.broadcast_to(spot.price_spot[None, :], q_res.shape)
    res = (q_res, instance.capacity - q_res, price_futures - res_price, np.zeros_like(q_res))
    return ProfitSensitivities(*(np.vstack([left, right]) for left, right in zip(conv, res)))


def profit_gradients(
    instance: MarketInstance,
    q_futures: Sequence[float] | np.ndarray,
    *,
    spot: Optional[SpotOutcome] = None,
    partials: Optional[FuturesPartials] = None,
) -> np.ndarray:
    """Conjectured own-position derivative of every profit, shape (I+J, |Omega|)."""
    _require_futures_model(instance)
    q = instance.check_futures(q_futures)
    spot = spot if spot is not None else spot_outcome(instance, q)
    partials = partials if partials is not None else futures_partials(instance, q)
    f = profit_sensitivities(instance, q, spot, futures_price(instance, q))
    return (
        f.price_futures * partials.d_price_futures[:, None]
        + f.price_spot * partials.d_price_spot
        + f.own_futures
        + f.own_spot * partials.d_q_spot
    )


def profit_gradient(
    instance: MarketInstance, q_futures: Sequence[float] | np.ndarray, generator_id: int
) -> np.ndarray:
    instance.check_generator(generator_id)
    return profit_gradients(instance, q_futures)[generator_id]


@dataclass(frozen=True)
class SpotJacobian:
    """Plain (no-conjecture) derivatives of the spot map w.r.t. each futures position.

    ``price`` has shape (|Omega|, I+J); ``quantity[k, w, l]`` is dq_k^S/dq_l^F.
    """

    price: np.ndarray
    quantity: np.ndarray


def spot_jacobian(instance: MarketInstance) -> SpotJacobian:
    _require_futures_model(instance)
    n_conv, n_gen, n_scenarios = instance.n_conventional, instance.n_generators, instance.n_scenarios
    tau, phi = tau_phi(instance)
    beta = instance.demand.beta_spot
    c = instance.cost_c

    price = np.zeros((n_scenarios, n_gen))
    quantity = np.zeros((n_gen, n_scenarios, n_gen))
    if instance.model is MarketModel.GM:
        price[:, :n_conv] = (phi[None, :] * (-beta[None, :] + beta[None, :] * tau * c)).T
        quantity[:n_conv] = tau[:, :, None] * price[None, :, :]
        for i in range(n_conv):
            quantity[i, :, i] -= tau[i] * c[i]
    else:
        one_plus_delta = 1.0 + instance.delta[:, None]
        price[:, :n_conv] = (-phi[None, :] * beta[None, :] ** 2 * one_plus_delta * tau).T
        quantity[:n_conv] = tau[:, :, None] * price[None, :, :]
        for i in range(n_conv):
            quantity[i, :, i] += tau[i] * beta * one_plus_delta[i]
    for j in range(instance.n_res):
        quantity[n_conv + j, :, n_conv + j] = -1.0
    return SpotJacobian(price=price, quantity=quantity)


def profit_jacobian(
    instance: MarketInstance,
    sensitivities: ProfitSensitivities,
    jacobian: SpotJacobian,
) -> np.ndarray:
    """dPi_kw/dq_l^F with rivals held fixed, shape (I+J, |Omega|, I+J)."""
    f = sensitivities
    own = np.eye(instance.n_generators)[:, None, :]
    return (
        -instance.demand.beta_futures * f.price_futures[:, :, None]
        + f.price_spot[:, :, None] * jacobian.price[None, :, :]
        + f.own_futures[:, :, None] * own
        + f.own_spot[:, :, None] * jacobian.quantity
    )


def gradient_jacobian(
    instance: MarketInstance, partials: FuturesPartials, jacobian: SpotJacobian
) -> np.ndarray:
    """d g_kw / dq_l^F of the conjectured gradients, constant in q^F.

    Scenario profits are quadratic in q^F, so this fully describes the gradients:
    g(q) = g(0) + gradient_jacobian @ q.
    """
    n_conv, n_gen = instance.n_conventional, instance.n_generators
    own = np.broadcast_to(np.eye(n_gen)[:, None, :], jacobian.quantity.shape)
    d_pf = -instance.demand.beta_futures
    d_ps = np.broadcast_to(jacobian.price[None, :, :], jacobian.quantity.shape)
    d_qs = jacobian.quantity

    j_price_futures = own
    j_own_spot = np.zeros_like(d_qs)
    if instance.model is MarketModel.GM:
        j_price_spot = d_qs.copy()
        c = instance.cost_c[:, :, None]
        j_own_futures = np.empty_like(d_qs)
        j_own_futures[:n_conv] = d_pf - c * (own[:n_conv] + d_qs[:n_conv])
        j_own_spot[:n_conv] = d_ps[:n_conv] - c * (own[:n_conv] + d_qs[:n_conv])
    else:
        j_price_spot = d_qs - own
        j_own_futures = np.empty_like(d_qs)
        j_own_futures[:n_conv] = d_pf - d_ps[:n_conv]
        j_own_spot[:n_conv] = d_ps[:n_conv] - instance.cost_c[:, :, None] * d_qs[:n_conv]
    j_price_spot[n_conv:] = -own[n_conv:]
    j_own_futures[n_conv:] = d_pf - d_ps[n_conv:]

    return (
        j_price_futures * partials.d_price_futures[:, None, None]
        + j_price_spot * partials.d_price_spot[:, :, None]
        + j_own_futures
        + j_own_spot * partials.d_q_spot[:, :, None]
    )
