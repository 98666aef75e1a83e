"""Multi-start augmented-Lagrangian solve of the complementarity program."""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from oligopoly_futures.constants import (
    DEFAULT_INNER_ITERATIONS,
    DEFAULT_MAX_OUTER_ITERATIONS,
    DEFAULT_PROFIT_SCALE,
    DEFAULT_QUANTITY_SCALE,
    DEFAULT_STARTS,
    DEFAULT_TOLERANCE,
    DEFAULT_WEIGHT_ITERATIONS,
)
from oligopoly_futures.equilibrium import (
    EquilibriumSolution,
    SolveReport,
    StartDiagnostics,
    equilibrium_point,
    kkt_residuals,
    scaled_variables,
    solution_from_vector,
)
from oligopoly_futures.errors import ConvergenceError
from oligopoly_futures.market import MarketInstance
from oligopoly_futures.nlp import ComplementarityNLP, FuturesStage, NLPPoint, assemble_nlp
from oligopoly_futures.risk import RiskConfig, tail_weights

logger = logging.getLogger(__name__)

MAX_ENUMERATED_POSITIONS = 10
INITIAL_PENALTY = 10.0
MAX_PENALTY = 1e8
OBJECTIVE_TIE = 1e-12


@dataclass(frozen=True)
class SolverOptions:
    max_outer_iterations: int = DEFAULT_MAX_OUTER_ITERATIONS
    inner_iterations: int = DEFAULT_INNER_ITERATIONS
    tolerance: float = DEFAULT_TOLERANCE
    starts: int = DEFAULT_STARTS
    seed: int = 0
    profit_scale: float = DEFAULT_PROFIT_SCALE
    quantity_scale: float = DEFAULT_QUANTITY_SCALE
    weight_iterations: int = DEFAULT_WEIGHT_ITERATIONS

    def __post_init__(self) -> None:
        if self.starts < 1:
            raise ValueError(f"starts must be >= 1, got {self.starts}.")
        if self.max_outer_iterations < 1 or self.inner_iterations < 1:
            raise ValueError("Iteration limits must be >= 1.")
        if self.tolerance <= 0.0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}.")
        if self.profit_scale <= 0.0 or self.quantity_scale <= 0.0:
            raise ValueError("Scaling factors must be > 0.")


def solve_box_affine_vi(
    intercept: np.ndarray,
    matrix: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
) -> np.ndarray:
    """Find q in [lower, upper] with F = intercept + matrix @ q pointing outward at bounds.

    F_k <= 0 where q_k sits at its lower bound, F_k >= 0 at its upper bound and
    F_k = 0 in between. Active sets are enumerated; among valid solutions the
    one with the smallest norm wins.
    """
    n = intercept.shape[0]
    fixed = upper - lower <= 0.0
    movable = np.flatnonzero(~fixed)
    if movable.size > MAX_ENUMERATED_POSITIONS:
        logger.warning("%d free positions; falling back to projected iteration", movable.size)
        return _projected_iteration(intercept, matrix, lower, upper)

    span = float(np.max(np.abs(upper))) if n else 0.0
    f_tol = 1e-9 * (1.0 + float(np.max(np.abs(intercept))) + float(np.max(np.abs(matrix))) * span)
    q_tol = 1e-9 * (1.0 + span)
    best: Optional[np.ndarray] = None
    best_violation, fallback = np.inf, None

    for pattern in itertools.product((-1, 0, 1), repeat=movable.size):
        q = lower.copy()
        free = []
        for index, state in zip(movable, pattern):
            if state == 1:
                q[index] = upper[index]
            elif state == 0:
                free.append(index)
        free = np.asarray(free, dtype=int)
        if free.size:
            rest = np.setdiff1d(np.arange(n), free)
            rhs = -(intercept[free] + matrix[np.ix_(free, rest)] @ q[rest])
            solution, *_ = np.linalg.lstsq(matrix[np.ix_(free, free)], rhs, rcond=None)
            q[free] = solution
        residual = intercept + matrix @ q
        violation = _vi_violation(q, residual, lower, upper, movable, pattern, q_tol)
        if violation < best_violation:
            best_violation, fallback = violation, q.copy()
        if violation <= f_tol:
            q = np.clip(q, lower, upper)
            if best is None or np.linalg.norm(q) < np.linalg.norm(best) - 1e-12:
                best = q
    if best is None:
        logger.warning("No exact active set found (violation %.3e); using the closest", best_violation)
        assert fallback is not None
        best = np.clip(fallback, lower, upper)
    return best


def _vi_violation(
    q: np.ndarray,
    residual: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    movable: np.ndarray,
    pattern: tuple[int, ...],
    q_tol: float,
) -> float:
    violation = 0.0
    for index, state in zip(movable, pattern):
        if state == -1:
            violation = max(violation, residual[index])
        elif state == 1:
            violation = max(violation, -residual[index])
        else:
            violation = max(violation, abs(residual[index]))
            if q[index] < lower[index] - q_tol or q[index] > upper[index] + q_tol:
                return np.inf
    return violation


def _projected_iteration(
    intercept: np.ndarray, matrix: np.ndarray, lower: np.ndarray, upper: np.ndarray
) -> np.ndarray:
    step = 1.0 / max(float(np.linalg.norm(matrix, 2)), 1e-12)
    q = 0.5 * (lower + upper)
    for _ in range(100_000):
        updated = np.clip(q + step * (intercept + matrix @ q), lower, upper)
        if np.max(np.abs(updated - q)) < 1e-10 * (1.0 + float(np.max(np.abs(upper)))):
            return updated
        q = updated
    return q


def warm_start(stage: FuturesStage, risk: RiskConfig, options: SolverOptions) -> EquilibriumSolution:
    """Risk-neutral equilibrium, then averaged best responses over CVaR tail sets."""
    instance = stage.instance
    sigma = instance.sigma
    lower, upper = instance.q_futures_min, instance.q_futures_max

    def positions(weights: np.ndarray) -> np.ndarray:
        intercept, matrix = stage.weighted_system(weights)
        return solve_box_affine_vi(intercept, matrix, lower, upper)

    def ranking_weights(q: np.ndarray) -> np.ndarray:
        profits = stage.evaluate(q).profits
        return np.stack([tail_weights(profits[k], sigma[k], risk) for k in range(instance.n_generators)])

    q = positions(sigma)
    if risk.phi == 0.0:
        return equilibrium_point(stage, risk, q, mu=np.zeros_like(sigma))

    mu = ranking_weights(q)
    for iteration in range(1, options.weight_iterations + 1):
        q = positions((1.0 - risk.phi) * sigma + mu)
        target = ranking_weights(q)
        if np.allclose(target, mu, rtol=0.0, atol=1e-12):
            logger.debug("Tail sets settled after %d iterations", iteration)
            break
        mu = mu + (target - mu) / (iteration + 1)
    q = positions((1.0 - risk.phi) * sigma + mu)
    return equilibrium_point(stage, risk, q, mu=mu)


def random_start(
    stage: FuturesStage, risk: RiskConfig, rng: np.random.Generator
) -> EquilibriumSolution:
    """Uniform positions with the uniform feasible dual point mu = phi*sigma."""
    instance = stage.instance
    q = rng.uniform(instance.q_futures_min, instance.q_futures_max)
    return equilibrium_point(stage, risk, q, mu=risk.phi * instance.sigma)


def _augmented_lagrangian(
    nlp: ComplementarityNLP, x0: np.ndarray, options: SolverOptions
) -> tuple[np.ndarray, int, int]:
    x = nlp.clip(x0)
    bounds = nlp.bounds()
    equality_multipliers = np.zeros(nlp.n_equalities)
    inequality_multipliers = np.zeros(nlp.n_inequalities)
    penalty = INITIAL_PENALTY
    previous_violation = np.inf
    inner_total = 0

    for outer in range(1, options.max_outer_iterations + 1):
        result = minimize(
            nlp.augmented_lagrangian,
            x,
            args=(equality_multipliers, inequality_multipliers, penalty),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": options.inner_iterations, "ftol": 1e-15, "gtol": 1e-12},
        )
        x = result.x
        inner_total += int(result.nit)
        point = nlp.point(x)
        violation = max(point.equality_residual, point.inequality_violation)
        if point.objective <= options.tolerance and violation <= options.tolerance:
            return x, outer, inner_total
        equality_multipliers = equality_multipliers + penalty * point.equality
        inequality_multipliers = np.maximum(0.0, inequality_multipliers - penalty * point.inequality)
        if violation > 0.25 * previous_violation:
            penalty = min(penalty * 10.0, MAX_PENALTY)
        previous_violation = violation
    return x, options.max_outer_iterations, inner_total


def solve(
    instance: MarketInstance,
    risk: RiskConfig,
    options: Optional[SolverOptions] = None,
) -> EquilibriumSolution:
    options = options or SolverOptions()
    started = time.perf_counter()
    nlp = assemble_nlp(
        instance, risk, profit_scale=options.profit_scale, quantity_scale=options.quantity_scale
    )
    stage = nlp.stage
    rng = np.random.default_rng(options.seed)

    diagnostics: list[StartDiagnostics] = []
    accepted: list[tuple[float, float, str, np.ndarray]] = []
    outer_total = inner_total = 0

    for index in range(options.starts):
        if index == 0:
            label, start = "warm", warm_start(stage, risk, options)
        else:
            label, start = f"random-{index}", random_start(stage, risk, rng)
        x0 = nlp.pack(scaled_variables(nlp, start))
        point = nlp.point(x0)
        if _acceptable(point, options.tolerance):
            x, outer, inner = x0, 0, 0
        else:
            x, outer, inner = _augmented_lagrangian(nlp, x0, options)
            point = nlp.point(x)
        outer_total += outer
        inner_total += inner

        is_accepted = _acceptable(point, options.tolerance)
        q_raw = point.evaluation.q_futures
        diagnostics.append(
            StartDiagnostics(
                label=label,
                objective=point.objective,
                equality_residual=point.equality_residual,
                inequality_violation=point.inequality_violation,
                outer_iterations=outer,
                inner_iterations=inner,
                accepted=is_accepted,
                q_futures=tuple(float(value) for value in q_raw),
                message="accepted" if is_accepted else "tolerance not reached",
            )
        )
        if is_accepted:
            norm = float(np.linalg.norm(q_raw))
            logger.info(
                "Start %s converged: objective=%.3e |q_F|=%.3f", label, point.objective, norm
            )
            accepted.append((point.objective, norm, label, x))
        else:
            logger.warning(
                "Start %s rejected: objective=%.3e equality residual=%.3e",
                label,
                point.objective,
                point.equality_residual,
            )

    wall_time = time.perf_counter() - started
    if not accepted:
        raise ConvergenceError(
            f"No start out of {options.starts} reached tolerance {options.tolerance:g}.",
            diagnostics=diagnostics,
        )

    best_objective = min(item[0] for item in accepted)
    ties = [item for item in accepted if item[0] <= best_objective + OBJECTIVE_TIE]
    _objective, _norm, selected, x = min(ties, key=lambda item: item[1])
    report = SolveReport(
        starts_attempted=options.starts,
        starts_accepted=len(accepted),
        outer_iterations=outer_total,
        inner_iterations=inner_total,
        wall_time_seconds=wall_time,
        starts=tuple(diagnostics),
        selected_start=selected,
    )
    solution = solution_from_vector(nlp, x, report)
    residuals = kkt_residuals(instance, risk, solution, nlp=nlp)
    logger.info(
        "Accepted start %s: P_F=%.4f objective=%.3e (%d/%d starts accepted, %.2fs)",
        selected,
        solution.decision.price_futures,
        solution.objective_residual,
        len(accepted),
        options.starts,
        wall_time,
    )
    return replace(solution, residuals=residuals)


def _acceptable(point: NLPPoint, tolerance: float) -> bool:
    return (
        point.objective <= tolerance
        and point.equality_residual <= tolerance
        and point.inequality_violation <= tolerance
    )
