"""Equilibrium solutions and their KKT residual reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from oligopoly_futures.constants import DEFAULT_PROFIT_SCALE, DEFAULT_QUANTITY_SCALE, DEFAULT_TOLERANCE
from oligopoly_futures.market import FuturesDecision, MarketInstance
from oligopoly_futures.nlp import ComplementarityNLP, FuturesStage, Variables, assemble_nlp
from oligopoly_futures.risk import RiskConfig, optimal_cvar_auxiliaries, tail_weights


@dataclass(frozen=True)
class StartDiagnostics:
    label: str
    objective: float
    equality_residual: float
    inequality_violation: float
    outer_iterations: int
    inner_iterations: int
    accepted: bool
    q_futures: tuple[float, ...]
    message: str = ""


@dataclass(frozen=True)
class SolveReport:
    starts_attempted: int
    starts_accepted: int
    outer_iterations: int
    inner_iterations: int
    wall_time_seconds: float
    starts: tuple[StartDiagnostics, ...] = ()
    selected_start: str = ""


@dataclass(frozen=True)
class KKTReport:
    """Per-generator residuals of the KKT system, in scaled units."""

    stationarity_q: np.ndarray
    stationarity_eta: np.ndarray
    stationarity_xi: np.ndarray
    complementarity_tail: np.ndarray
    complementarity_shortfall: np.ndarray
    complementarity_lower: np.ndarray
    complementarity_upper: np.ndarray
    sign_violation: np.ndarray

    @property
    def max_equality_residual(self) -> float:
        return float(
            max(
                np.max(np.abs(self.stationarity_q)),
                np.max(np.abs(self.stationarity_eta)),
                np.max(np.abs(self.stationarity_xi)),
            )
        )

    @property
    def complementarity_objective(self) -> float:
        return float(
            np.sum(self.complementarity_tail)
            + np.sum(self.complementarity_shortfall)
            + np.sum(self.complementarity_lower)
            + np.sum(self.complementarity_upper)
        )

    @property
    def max_sign_violation(self) -> float:
        return float(np.max(self.sign_violation))

    def accepted(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return (
            self.complementarity_objective <= tolerance
            and self.max_equality_residual <= tolerance
            and self.max_sign_violation <= tolerance
        )


@dataclass(frozen=True)
class EquilibriumSolution:
    """Futures positions, CVaR auxiliaries and duals in model units.

    xi and eta are currency; mu and theta are probability weights; nu_min and
    nu_max are currency per MWh. ``objective_residual`` is the scaled value of
    the complementarity objective.
    """

    decision: FuturesDecision
    xi: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    nu_min: np.ndarray
    nu_max: np.ndarray
    profits: np.ndarray
    objective_residual: float
    solve_report: Optional[SolveReport] = None
    residuals: Optional[KKTReport] = field(default=None)


def scaled_variables(nlp: ComplementarityNLP, solution: EquilibriumSolution) -> Variables:
    gradient_factor = nlp.quantity_scale / nlp.profit_scale
    return Variables(
        q=np.asarray(solution.decision.q_futures) / nlp.quantity_scale,
        xi=np.asarray(solution.xi) / nlp.profit_scale,
        eta=np.asarray(solution.eta) / nlp.profit_scale,
        mu=np.asarray(solution.mu, dtype=float),
        theta=np.asarray(solution.theta, dtype=float),
        nu_min=np.asarray(solution.nu_min) * gradient_factor,
        nu_max=np.asarray(solution.nu_max) * gradient_factor,
    )


def solution_from_vector(
    nlp: ComplementarityNLP, x: np.ndarray, report: Optional[SolveReport] = None
) -> EquilibriumSolution:
    point = nlp.point(x)
    v = point.variables
    gradient_factor = nlp.quantity_scale / nlp.profit_scale
    decision = FuturesDecision.from_quantities(nlp.instance, point.evaluation.q_futures)
    return EquilibriumSolution(
        decision=decision,
        xi=v.xi * nlp.profit_scale,
        eta=v.eta * nlp.profit_scale,
        mu=v.mu.copy(),
        theta=v.theta.copy(),
        nu_min=v.nu_min / gradient_factor,
        nu_max=v.nu_max / gradient_factor,
        profits=point.evaluation.profits,
        objective_residual=point.objective,
        solve_report=report,
    )


def equilibrium_point(
    stage: FuturesStage,
    risk: RiskConfig,
    q_futures: np.ndarray,
    *,
    mu: Optional[np.ndarray] = None,
) -> EquilibriumSolution:
    """Closed-form auxiliaries and duals around a given futures position.

    xi and eta are the optimal CVaR auxiliaries of the resulting profits, mu
    defaults to the ranking-consistent tail weights, theta closes the eta
    stationarity and nu closes the own-position stationarity.
    """
    instance = stage.instance
    sigma = instance.sigma
    evaluation = stage.evaluate(np.asarray(q_futures, dtype=float))
    profits = evaluation.profits
    xi = np.empty(instance.n_generators)
    eta = np.empty_like(profits)
    for k in range(instance.n_generators):
        xi[k], eta[k] = optimal_cvar_auxiliaries(profits[k], sigma[k], risk.alpha)
    if mu is None:
        mu = np.stack([tail_weights(profits[k], sigma[k], risk) for k in range(instance.n_generators)])
    mu = np.asarray(mu, dtype=float)
    theta = np.maximum(0.0, risk.phi * sigma / risk.tail_mass - mu)
    weighted = np.sum(((1.0 - risk.phi) * sigma + mu) * evaluation.gradients, axis=1)
    return EquilibriumSolution(
        decision=FuturesDecision.from_quantities(instance, evaluation.q_futures),
        xi=xi,
        eta=eta,
        mu=mu,
        theta=theta,
        nu_min=np.maximum(0.0, -weighted),
        nu_max=np.maximum(0.0, weighted),
        profits=profits,
        objective_residual=float("nan"),
    )


def kkt_residuals(
    instance: MarketInstance,
    risk: RiskConfig,
    candidate: EquilibriumSolution,
    *,
    profit_scale: float = DEFAULT_PROFIT_SCALE,
    quantity_scale: float = DEFAULT_QUANTITY_SCALE,
    nlp: Optional[ComplementarityNLP] = None,
) -> KKTReport:
    """Residuals recomputed from the candidate's own positions and multipliers."""
    if nlp is None:
        nlp = assemble_nlp(instance, risk, profit_scale=profit_scale, quantity_scale=quantity_scale)
    v = scaled_variables(nlp, candidate)
    point = nlp.point(nlp.pack(v))
    k, w = nlp.n_generators, nlp.n_scenarios
    gap = point.inequality.reshape(k, w)
    lower_slack = v.q - nlp.q_lower
    upper_slack = nlp.q_upper - v.q

    negative_parts = np.stack(
        [
            np.max(np.maximum(0.0, -v.eta), axis=1),
            np.max(np.maximum(0.0, -v.mu), axis=1),
            np.max(np.maximum(0.0, -v.theta), axis=1),
            np.max(np.maximum(0.0, -gap), axis=1),
            np.maximum(0.0, -v.nu_min),
            np.maximum(0.0, -v.nu_max),
            np.maximum(0.0, -lower_slack),
            np.maximum(0.0, -upper_slack),
        ]
    )
    return KKTReport(
        stationarity_q=point.equality[:k],
        stationarity_eta=point.equality[k : k + k * w].reshape(k, w),
        stationarity_xi=point.equality[k + k * w :],
        complementarity_tail=np.sum(v.mu * gap, axis=1),
        complementarity_shortfall=np.sum(v.eta * v.theta, axis=1),
        complementarity_lower=lower_slack * v.nu_min,
        complementarity_upper=upper_slack * v.nu_max,
        sign_violation=np.max(negative_parts, axis=0),
    )
