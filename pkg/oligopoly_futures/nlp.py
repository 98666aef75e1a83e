"""Complementarity-minimization program over every generator's KKT system.

Variables are stored scaled: quantities in units of ``quantity_scale`` MWh and
profit-like values (profits, xi, eta) in units of ``profit_scale`` currency.
mu and theta are probability weights and stay unscaled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from oligopoly_futures.constants import DEFAULT_PROFIT_SCALE, DEFAULT_QUANTITY_SCALE, MarketModel
from oligopoly_futures.gradients import (
    FuturesPartials,
    ProfitSensitivities,
    futures_partials,
    gradient_jacobian,
    profit_gradients,
    profit_jacobian,
    profit_sensitivities,
    spot_jacobian,
)
from oligopoly_futures.market import MarketInstance, SpotOutcome, futures_price, profit_matrix
from oligopoly_futures.risk import RiskConfig
from oligopoly_futures.spot import spot_outcome

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StageEvaluation:
    q_futures: np.ndarray
    price_futures: float
    spot: SpotOutcome
    profits: np.ndarray
    gradients: np.ndarray
    sensitivities: ProfitSensitivities


class FuturesStage:
    """Spot maps, profits and conjectured gradients of one instance as functions of q^F."""

    def __init__(self, instance: MarketInstance) -> None:
        if instance.model is MarketModel.SPOT_ONLY:
            raise ValueError("The spot-only model has no futures stage.")
        self.instance = instance
        zeros = np.zeros(instance.n_generators)
        self.partials: FuturesPartials = futures_partials(instance, zeros)
        self.jacobian = spot_jacobian(instance)
        self.gradient_jacobian = gradient_jacobian(instance, self.partials, self.jacobian)
        self.gradient_intercept = profit_gradients(instance, zeros, partials=self.partials)

    def evaluate(self, q_futures: np.ndarray) -> StageEvaluation:
        q = self.instance.check_futures(q_futures)
        price_futures = futures_price(self.instance, q)
        spot = spot_outcome(self.instance, q)
        return StageEvaluation(
            q_futures=q,
            price_futures=price_futures,
            spot=spot,
            profits=profit_matrix(self.instance, price_futures, q, spot),
            gradients=self.gradient_intercept + self.gradient_jacobian @ q,
            sensitivities=profit_sensitivities(self.instance, q, spot, price_futures),
        )

    def profit_jacobian(self, evaluation: StageEvaluation) -> np.ndarray:
        return profit_jacobian(self.instance, evaluation.sensitivities, self.jacobian)

    def weighted_system(self, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Affine map q -> sum_w W_kw g_kw(q), returned as (intercept, matrix)."""
        intercept = np.sum(weights * self.gradient_intercept, axis=1)
        matrix = np.einsum("kw,kwl->kl", weights, self.gradient_jacobian)
        return intercept, matrix


@dataclass(frozen=True)
class Variables:
    q: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    nu_min: np.ndarray
    nu_max: np.ndarray


@dataclass(frozen=True)
class NLPPoint:
    variables: Variables
    evaluation: StageEvaluation
    profits: np.ndarray
    gradients: np.ndarray
    profit_jacobian: np.ndarray
    objective: float
    equality: np.ndarray
    inequality: np.ndarray

    @property
    def equality_residual(self) -> float:
        return float(np.max(np.abs(self.equality))) if self.equality.size else 0.0

    @property
    def inequality_violation(self) -> float:
        return float(max(0.0, -np.min(self.inequality))) if self.inequality.size else 0.0


class ComplementarityNLP:
    """Sum of complementarity products subject to the stationarity equations.

    Equalities: own-position stationarity, eta stationarity and xi stationarity
    for every generator. Inequalities: eta + Pi - xi >= 0. Bounds carry the
    remaining sign and capacity conditions.
    """

    def __init__(
        self,
        stage: FuturesStage,
        risk: RiskConfig,
        *,
        profit_scale: float = DEFAULT_PROFIT_SCALE,
        quantity_scale: float = DEFAULT_QUANTITY_SCALE,
    ) -> None:
        if profit_scale <= 0.0 or quantity_scale <= 0.0:
            raise ValueError("Scaling factors must be positive.")
        self.stage = stage
        self.instance = stage.instance
        self.risk = risk
        self.profit_scale = profit_scale
        self.quantity_scale = quantity_scale

        k, w = self.instance.n_generators, self.instance.n_scenarios
        self.n_generators, self.n_scenarios = k, w
        sizes = {"q": k, "xi": k, "eta": k * w, "mu": k * w, "theta": k * w, "nu_min": k, "nu_max": k}
        self.slices: dict[str, slice] = {}
        offset = 0
        for name, size in sizes.items():
            self.slices[name] = slice(offset, offset + size)
            offset += size
        self.n_variables = offset
        self.n_equalities = 2 * k + k * w
        self.n_inequalities = k * w

        self.q_lower = self.instance.q_futures_min / quantity_scale
        self.q_upper = self.instance.q_futures_max / quantity_scale
        self.sigma = self.instance.sigma
        self.tail_cap = risk.phi * self.sigma / risk.tail_mass
        self._gradient_factor = quantity_scale / profit_scale

    def bounds(self) -> list[tuple[float | None, float | None]]:
        k, w = self.n_generators, self.n_scenarios
        bounds: list[tuple[float | None, float | None]] = []
        bounds += list(zip(self.q_lower.tolist(), self.q_upper.tolist()))
        bounds += [(None, None)] * k
        bounds += [(0.0, None)] * (3 * k * w + 2 * k)
        return bounds

    def clip(self, x: np.ndarray) -> np.ndarray:
        x = np.array(x, dtype=float)
        x[self.slices["q"]] = np.clip(x[self.slices["q"]], self.q_lower, self.q_upper)
        for name in ("eta", "mu", "theta", "nu_min", "nu_max"):
            x[self.slices[name]] = np.maximum(0.0, x[self.slices[name]])
        return x

    def split(self, x: np.ndarray) -> Variables:
        k, w = self.n_generators, self.n_scenarios
        s = self.slices
        return Variables(
            q=x[s["q"]],
            xi=x[s["xi"]],
            eta=x[s["eta"]].reshape(k, w),
            mu=x[s["mu"]].reshape(k, w),
            theta=x[s["theta"]].reshape(k, w),
            nu_min=x[s["nu_min"]],
            nu_max=x[s["nu_max"]],
        )

    def pack(self, variables: Variables) -> np.ndarray:
        return np.concatenate(
            [
                np.ravel(variables.q),
                np.ravel(variables.xi),
                np.ravel(variables.eta),
                np.ravel(variables.mu),
                np.ravel(variables.theta),
                np.ravel(variables.nu_min),
                np.ravel(variables.nu_max),
            ]
        )

    def point(self, x: np.ndarray) -> NLPPoint:
        v = self.split(np.asarray(x, dtype=float))
        q_raw = np.clip(v.q * self.quantity_scale, self.instance.q_futures_min, self.instance.q_futures_max)
        evaluation = self.stage.evaluate(q_raw)
        profits = evaluation.profits / self.profit_scale
        gradients = evaluation.gradients * self._gradient_factor
        jacobian = self.stage.profit_jacobian(evaluation) * self._gradient_factor

        gap = v.eta + profits - v.xi[:, None]
        objective = float(
            np.sum(v.mu * gap)
            + np.sum(v.eta * v.theta)
            + np.sum((v.q - self.q_lower) * v.nu_min)
            + np.sum((self.q_upper - v.q) * v.nu_max)
        )
        weights = (1.0 - self.risk.phi) * self.sigma + v.mu
        stationarity_q = -np.sum(weights * gradients, axis=1) - v.nu_min + v.nu_max
        stationarity_eta = self.tail_cap - v.mu - v.theta
        stationarity_xi = v.mu.sum(axis=1) - self.risk.phi
        equality = np.concatenate([stationarity_q, stationarity_eta.ravel(), stationarity_xi])
        return NLPPoint(
            variables=v,
            evaluation=evaluation,
            profits=profits,
            gradients=gradients,
            profit_jacobian=jacobian,
            objective=objective,
            equality=equality,
            inequality=gap.ravel(),
        )

    def objective_gradient(self, point: NLPPoint) -> np.ndarray:
        v = point.variables
        grad = np.zeros(self.n_variables)
        s = self.slices
        grad[s["q"]] = np.einsum("kw,kwl->l", v.mu, point.profit_jacobian) + v.nu_min - v.nu_max
        grad[s["xi"]] = -v.mu.sum(axis=1)
        grad[s["eta"]] = (v.mu + v.theta).ravel()
        grad[s["mu"]] = point.inequality
        grad[s["theta"]] = v.eta.ravel()
        grad[s["nu_min"]] = v.q - self.q_lower
        grad[s["nu_max"]] = self.q_upper - v.q
        return grad

    def equality_transpose(self, point: NLPPoint, multipliers: np.ndarray) -> np.ndarray:
        k, w = self.n_generators, self.n_scenarios
        v = point.variables
        m_q = multipliers[:k]
        m_eta = multipliers[k : k + k * w].reshape(k, w)
        m_xi = multipliers[k + k * w :]
        weights = (1.0 - self.risk.phi) * self.sigma + v.mu
        d_gradients = self.stage.gradient_jacobian * (self.quantity_scale * self._gradient_factor)

        grad = np.zeros(self.n_variables)
        s = self.slices
        grad[s["q"]] = -np.einsum("k,kw,kwl->l", m_q, weights, d_gradients)
        grad[s["mu"]] = (-m_q[:, None] * point.gradients - m_eta + m_xi[:, None]).ravel()
        grad[s["theta"]] = -m_eta.ravel()
        grad[s["nu_min"]] = -m_q
        grad[s["nu_max"]] = m_q
        return grad

    def inequality_transpose(self, point: NLPPoint, multipliers: np.ndarray) -> np.ndarray:
        k, w = self.n_generators, self.n_scenarios
        u = multipliers.reshape(k, w)
        grad = np.zeros(self.n_variables)
        s = self.slices
        grad[s["q"]] = np.einsum("kw,kwl->l", u, point.profit_jacobian)
        grad[s["eta"]] = u.ravel()
        grad[s["xi"]] = -u.sum(axis=1)
        return grad

    def augmented_lagrangian(
        self,
        x: np.ndarray,
        equality_multipliers: np.ndarray,
        inequality_multipliers: np.ndarray,
        penalty: float,
    ) -> tuple[float, np.ndarray]:
        point = self.point(x)
        h = point.equality
        shifted = np.maximum(0.0, inequality_multipliers - penalty * point.inequality)
        value = (
            point.objective
            + float(equality_multipliers @ h)
            + 0.5 * penalty * float(h @ h)
            + float(shifted @ shifted - inequality_multipliers @ inequality_multipliers) / (2.0 * penalty)
        )
        grad = (
            self.objective_gradient(point)
            + self.equality_transpose(point, equality_multipliers + penalty * h)
            - self.inequality_transpose(point, shifted)
        )
        return value, grad


def assemble_nlp(
    instance: MarketInstance,
    risk: RiskConfig,
    *,
    profit_scale: float = DEFAULT_PROFIT_SCALE,
    quantity_scale: float = DEFAULT_QUANTITY_SCALE,
) -> ComplementarityNLP:
    if instance.model is MarketModel.SPOT_ONLY:
        raise ValueError("The spot-only model has no futures stage; nothing to assemble.")
    return ComplementarityNLP(
        FuturesStage(instance), risk, profit_scale=profit_scale, quantity_scale=quantity_scale
    )
