from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import brentq

import oligopoly_futures.solver as solver_module
from oligopoly_futures.constants import ConductPreset, MarketModel
from oligopoly_futures.equilibrium import equilibrium_point, kkt_residuals
from oligopoly_futures.errors import ConvergenceError
from oligopoly_futures.gradients import profit_gradients
from oligopoly_futures.market import FuturesDecision, futures_price, profit_matrix
from oligopoly_futures.nlp import FuturesStage, Variables, assemble_nlp
from oligopoly_futures.risk import RiskConfig
from oligopoly_futures.scenarios import CalibrationConfig, build_instance, generate
from oligopoly_futures.solver import SolverOptions, solve, solve_box_affine_vi
from oligopoly_futures.spot import spot_outcome
from oligopoly_futures.verification import random_guarded_instance, unilateral_deviation_gap

SMALL = SolverOptions(starts=3, seed=11, profit_scale=1e3, quantity_scale=10.0)
BASELINE_BOUNDS = ((0.0, 6000.0), (0.0, 7000.0), (0.0, 5000.0))


def _duopoly(market_factory, model: MarketModel = MarketModel.GM, scale: float = 1.0):
    return market_factory(
        model,
        gamma=(100.0 * scale, 120.0 * scale),
        beta=(1.0 * scale, 1.2 * scale),
        costs=((10.0 * scale, 0.5 * scale), (15.0 * scale, 0.8 * scale)),
        gamma_futures=110.0 * scale,
        beta_futures=1.1 * scale,
    )


def _baseline(model: MarketModel, conduct: ConductPreset, scenarios: int):
    config = CalibrationConfig.baseline(scenario_count=scenarios, seed=20240601)
    return build_instance(
        config,
        generate(config, 3, 1),
        model=model,
        conduct=conduct,
        conventional_bounds=BASELINE_BOUNDS,
    )


def _damped_best_responses(market) -> np.ndarray:
    """Jacobi best responses on the expected own-position derivative, averaged with the old point."""

    def best_response(q: np.ndarray, i: int) -> float:
        def slope(position: float) -> float:
            trial = q.copy()
            trial[i] = position
            return float(market.sigma[i] @ profit_gradients(market, trial)[i])

        lower, upper = market.q_futures_min[i], market.q_futures_max[i]
        if slope(lower) <= 0.0:
            return float(lower)
        if slope(upper) >= 0.0:
            return float(upper)
        return brentq(slope, lower, upper, xtol=1e-12)

    q = np.zeros(market.n_generators)
    for _ in range(10_000):
        updated = np.array([0.5 * q[i] + 0.5 * best_response(q, i) for i in range(q.shape[0])])
        if np.max(np.abs(updated - q)) < 1e-10:
            return updated
        q = updated
    raise AssertionError("damped best responses did not settle")


def test_monopoly_matches_grid_search(market_factory) -> None:
    market = market_factory(MarketModel.GM)
    solution = solve(market, RiskConfig(phi=0.0), SMALL)

    grid = np.linspace(0.0, 100.0, 10_001)
    values = []
    for position in grid:
        q = np.array([position])
        values.append(float(profit_matrix(market, futures_price(market, q), q, spot_outcome(market, q))[0, 0]))
    best = grid[int(np.argmax(values))]

    assert solution.decision.q_futures[0] == pytest.approx(best, abs=0.01)
    assert solution.decision.q_futures[0] == pytest.approx(100.0 / 3.0, abs=1e-6)
    assert solution.residuals is not None and solution.residuals.accepted()


@pytest.mark.parametrize("model", [MarketModel.GM, MarketModel.CFD])
def test_duopoly_matches_damped_best_responses(market_factory, model: MarketModel) -> None:
    market = _duopoly(market_factory, model)
    solution = solve(market, RiskConfig(phi=0.0), SMALL)
    assert np.allclose(solution.decision.q_futures, _damped_best_responses(market), atol=1e-4)


def test_analytic_monopoly_point_has_zero_residuals(market_factory) -> None:
    market = market_factory(MarketModel.GM)
    risk = RiskConfig(phi=0.0)
    candidate = equilibrium_point(FuturesStage(market), risk, np.array([100.0 / 3.0]))
    report = kkt_residuals(market, risk, candidate, profit_scale=1e3, quantity_scale=10.0)
    assert report.max_equality_residual < 1e-8
    assert report.complementarity_objective < 1e-8
    assert report.max_sign_violation <= 1e-12


def test_perturbed_solution_loses_stationarity(market_factory) -> None:
    market = _duopoly(market_factory)
    risk = RiskConfig(phi=0.0)
    solution = solve(market, risk, SMALL)
    baseline = kkt_residuals(market, risk, solution, profit_scale=1e3, quantity_scale=10.0)

    moved = replace(
        solution,
        decision=FuturesDecision.from_quantities(market, solution.decision.q_futures * 1.01),
    )
    perturbed = kkt_residuals(market, risk, moved, profit_scale=1e3, quantity_scale=10.0)
    assert np.max(np.abs(perturbed.stationarity_q)) > np.max(np.abs(baseline.stationarity_q))


def test_tail_multipliers_sit_on_the_worst_scenarios(market_factory) -> None:
    market = market_factory(MarketModel.GM, gamma=(60.0, 100.0, 140.0))
    risk = RiskConfig(phi=0.6, alpha=0.5)
    solution = solve(market, risk, SMALL)
    assert solution.mu[0] == pytest.approx([2.0 * risk.phi / 3.0, risk.phi / 3.0, 0.0], abs=1e-4)
    assert solution.mu.sum() == pytest.approx(risk.phi, abs=1e-6)
    assert solution.eta[0, 2] == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("phi", [0.0, 0.5])
def test_unilateral_deviations_do_not_pay(market_factory, phi: float) -> None:
    market = _duopoly(market_factory)
    risk = RiskConfig(phi=phi, alpha=0.5)
    solution = solve(market, risk, SMALL)
    for generator_id in range(market.n_generators):
        assert unilateral_deviation_gap(market, risk, solution, generator_id) <= 1e-6


def test_complementarity_objective_is_nonnegative_on_feasible_points() -> None:
    rng = np.random.default_rng(3)
    for _ in range(20):
        market = random_guarded_instance(rng, model=MarketModel.CFD)
        nlp = assemble_nlp(market, RiskConfig(phi=0.4))
        k, w = market.n_generators, market.n_scenarios
        q = rng.uniform(nlp.q_lower, nlp.q_upper)
        profits = nlp.stage.evaluate(q * nlp.quantity_scale).profits / nlp.profit_scale
        xi = rng.normal(0.0, 1.0, k)
        variables = Variables(
            q=q,
            xi=xi,
            eta=np.maximum(0.0, xi[:, None] - profits) + rng.uniform(0.0, 0.1, (k, w)),
            mu=rng.uniform(0.0, 1.0, (k, w)),
            theta=rng.uniform(0.0, 1.0, (k, w)),
            nu_min=rng.uniform(0.0, 1.0, k),
            nu_max=rng.uniform(0.0, 1.0, k),
        )
        point = nlp.point(nlp.pack(variables))
        assert point.inequality_violation == 0.0
        assert point.objective >= 0.0


def test_baseline_program_size() -> None:
    market = _baseline(MarketModel.GM, ConductPreset.COURNOT, 200)
    nlp = assemble_nlp(market, RiskConfig(phi=0.5))
    assert nlp.n_variables == 4 + 4 + 800 + 800 + 800 + 8 == 2416
    assert nlp.n_equalities == 808
    assert nlp.n_inequalities == 800


@pytest.mark.parametrize("phi", [0.0, 0.5])
def test_price_rescaling_leaves_positions_unchanged(market_factory, phi: float) -> None:
    risk = RiskConfig(phi=phi, alpha=0.5)
    original = solve(_duopoly(market_factory), risk, SMALL)
    scaled = solve(_duopoly(market_factory, scale=10.0), risk, SMALL)
    assert np.allclose(scaled.decision.q_futures, original.decision.q_futures, rtol=1e-4, atol=1e-4)
    assert scaled.decision.price_futures == pytest.approx(10.0 * original.decision.price_futures, rel=1e-5)


def test_repeated_solves_are_identical(market_factory) -> None:
    market = _duopoly(market_factory, MarketModel.CFD)
    risk = RiskConfig(phi=0.5, alpha=0.5)
    first = solve(market, risk, SMALL)
    second = solve(market, risk, SMALL)
    assert np.array_equal(first.decision.q_futures, second.decision.q_futures)
    assert np.array_equal(first.mu, second.mu)


def test_perfect_competition_gm_prices_futures_at_expected_spot() -> None:
    market = _baseline(MarketModel.GM, ConductPreset.PERFECT, 20)
    solution = solve(market, RiskConfig(phi=0.0), SolverOptions(starts=1))
    spot = spot_outcome(market, solution.decision.q_futures)
    expected_spot = float(np.mean(spot.price_spot))
    assert solution.decision.price_futures == pytest.approx(expected_spot, rel=1e-6)


def test_all_starts_failing_raises_with_diagnostics(market_factory, monkeypatch) -> None:
    monkeypatch.setattr(solver_module, "_acceptable", lambda point, tolerance: False)
    options = replace(SMALL, max_outer_iterations=1, inner_iterations=5)
    with pytest.raises(ConvergenceError, match="No start out of 3") as excinfo:
        solve(market_factory(MarketModel.GM), RiskConfig(), options)
    labels = [item.label for item in excinfo.value.diagnostics]
    assert labels == ["warm", "random-1", "random-2"]
    assert not any(item.accepted for item in excinfo.value.diagnostics)


def test_spot_only_has_nothing_to_solve(market_factory) -> None:
    with pytest.raises(ValueError, match="no futures stage"):
        solve(market_factory(MarketModel.SPOT_ONLY), RiskConfig())


@pytest.mark.parametrize(
    "kwargs",
    [{"starts": 0}, {"max_outer_iterations": 0}, {"tolerance": 0.0}, {"profit_scale": -1.0}],
)
def test_solver_options_validation(kwargs: dict) -> None:
    with pytest.raises(ValueError):
        SolverOptions(**kwargs)


def test_box_affine_vi_respects_bounds() -> None:
    q = solve_box_affine_vi(
        np.array([1.0, -1.0, 5.0]),
        -np.eye(3),
        np.zeros(3),
        np.full(3, 2.0),
    )
    assert q == pytest.approx([1.0, 0.0, 2.0])
