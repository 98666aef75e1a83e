from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

import oligopoly_futures.experiments as experiments
from oligopoly_futures.config import ConfigOverrides, RunConfig, load_config
from oligopoly_futures.constants import MarketModel, MarketRegime
from oligopoly_futures.errors import ConvergenceError
from oligopoly_futures.experiments import (
    HEADLINE_FIELDS,
    OUTCOME_FIELDS,
    SweepTask,
    build_run_instance,
    classify_regime,
    evaluate_outcomes,
    long_format,
    phi_sweep_tasks,
    res_sweep_tasks,
    run_phi_sweep,
    run_res_sweep,
    run_single,
    run_tasks,
)
from oligopoly_futures.risk import RiskConfig
from oligopoly_futures.solver import SolverOptions


def _small_run(model: str = "gm", **overrides) -> RunConfig:
    run = load_config(
        overrides=ConfigOverrides(model=model, scenarios=12, seed=5, **overrides), environ={}
    )
    return replace(run, solver=SolverOptions(starts=1, seed=run.solver.seed))


@pytest.mark.parametrize(
    "price_futures,price_spot,regime",
    [(100.0, 90.0, MarketRegime.CONTANGO), (80.0, 90.0, MarketRegime.BACKWARDATION), (90.0, 90.0, MarketRegime.PARITY)],
)
def test_classify_regime(price_futures: float, price_spot: float, regime: MarketRegime) -> None:
    assert classify_regime(price_futures, price_spot) is regime


def test_spot_only_outcomes_have_no_futures_stage(market_factory) -> None:
    market = market_factory(MarketModel.SPOT_ONLY, capacities=(20.0,))
    outcomes, regime, generators = evaluate_outcomes(market, RiskConfig())
    assert math.isnan(outcomes["price_futures"])
    assert math.isnan(outcomes["futures_premium"])
    assert regime == ""
    assert outcomes["price_spot_expected"] == pytest.approx(40.0)
    assert outcomes["q_futures_conventional"] == 0.0
    assert outcomes["total_trading"] == pytest.approx(60.0)
    assert outcomes["total_trading"] == pytest.approx(outcomes["total_trading_spot_only"])
    assert outcomes["profit_res_expected"] == pytest.approx(40.0 * 20.0)
    assert [item.kind for item in generators] == ["conventional", "res"]
    assert generators[0].xi is None


def test_run_single_reports_headline_outcomes() -> None:
    result = run_single(_small_run())
    assert result.ok
    assert result.model is MarketModel.GM
    assert result.conduct == "cournot"
    for name in OUTCOME_FIELDS:
        assert math.isfinite(result.outcomes[name])
    assert result.outcomes["futures_premium"] == pytest.approx(
        result.outcomes["price_futures"] - result.outcomes["price_spot_expected"]
    )
    assert result.regime in {regime.value for regime in MarketRegime}
    assert result.solution is not None and result.solution.residuals is not None
    assert len(result.generators) == 4

    row = result.row()
    assert set(HEADLINE_FIELDS) <= set(row)
    assert row["regime"] == result.regime


def test_cournot_futures_raise_trading_over_spot_only() -> None:
    result = run_single(_small_run())
    assert result.outcomes["q_futures_conventional"] > 0.0
    assert result.outcomes["total_trading"] > result.outcomes["total_trading_spot_only"]


def test_res_sweep_on_spot_only_market() -> None:
    outcome = run_res_sweep(_small_run("spot-only"), workers=1)
    assert len(outcome.rows) == 11
    assert outcome.failed == 0
    assert outcome.rows["res_level"].tolist() == [float(level) for level in range(0, 10_001, 1000)]
    assert len(outcome.long) == 11 * len(OUTCOME_FIELDS)

    summary = outcome.summary.set_index("outcome")
    assert summary.loc["price_spot_expected", "slope"] < 0.0
    assert summary.loc["profit_res_expected", "slope"] > 0.0
    assert summary.loc["price_spot_expected", "points"] == 11
    assert math.isnan(summary.loc["price_futures", "slope"])


def test_phi_sweep_starts_from_the_single_run() -> None:
    run = _small_run()
    run = replace(run, sweep=replace(run.sweep, phi_values=(0.0, 0.5, 1.0)))
    outcome = run_phi_sweep(run, workers=1)
    assert outcome.rows["phi"].tolist() == [0.0, 0.5, 1.0]
    assert outcome.results[0].ok
    single = run_single(run)
    assert outcome.results[0].outcomes["price_futures"] == pytest.approx(
        single.outcomes["price_futures"], rel=1e-9
    )
    assert set(outcome.summary.columns) >= {"model", "conduct", "res_level", "outcome", "slope"}


def test_all_combination_tasks_cover_every_cell() -> None:
    run = _small_run()
    tasks = res_sweep_tasks(run, all_combinations=True)
    assert len(tasks) == 3 * 2 * 2 * 11
    cells = {(task.model, task.conduct, task.risk.phi) for task in tasks}
    assert len(cells) == 12
    assert all(task.calibration.scenario_count == 12 for task in tasks)
    first_cell = tasks[:11]
    assert [task.res_level for task in first_cell] == list(run.sweep.res_levels)
    assert [task.calibration.res_capacity.mean[0] for task in first_cell] == list(run.sweep.res_levels)


def test_phi_tasks_hold_the_res_mean() -> None:
    tasks = phi_sweep_tasks(_small_run())
    assert len(tasks) == 11
    assert {task.calibration.res_capacity.mean[0] for task in tasks} == {5000.0}
    assert [task.risk.phi for task in tasks] == [round(0.1 * step, 1) for step in range(11)]


def test_failed_rows_are_kept_and_excluded_from_trends(monkeypatch) -> None:
    run = _small_run()
    run = replace(run, sweep=replace(run.sweep, res_levels=(0.0, 5000.0, 10_000.0)))
    calls = {"count": 0}
    original = experiments.solve

    def flaky(instance, risk, options):
        calls["count"] += 1
        if calls["count"] == 2:
            raise ConvergenceError("no start converged", diagnostics=("warm",))
        return original(instance, risk, options)

    monkeypatch.setattr(experiments, "solve", flaky)
    outcome = run_res_sweep(run, workers=1)
    assert outcome.failed == 1
    failed = outcome.results[1]
    assert failed.status == "failed"
    assert failed.message == "no start converged"
    assert failed.diagnostics == ("warm",)
    assert math.isnan(outcome.rows.loc[1, "price_futures"])
    summary = outcome.summary.set_index("outcome")
    assert summary.loc["price_futures", "points"] == 2


def test_process_pool_keeps_task_order() -> None:
    run = _small_run("spot-only")
    tasks = res_sweep_tasks(replace(run, sweep=replace(run.sweep, res_levels=(0.0, 2000.0, 4000.0))))
    inline = run_tasks(tasks, workers=1)
    pooled = run_tasks(tasks, workers=2)
    assert [result.res_level for result in pooled] == [0.0, 2000.0, 4000.0]
    for left, right in zip(inline, pooled):
        assert left.outcomes["price_spot_expected"] == right.outcomes["price_spot_expected"]


def test_long_format_keys_by_labels() -> None:
    rows = pd.DataFrame(
        [
            {"model": "gm", "conduct": "cournot", "phi": 0.0, "alpha": 0.9, "res_level": 0.0, "status": "ok",
             **{name: float(index) for index, name in enumerate(OUTCOME_FIELDS)}},
        ]
    )
    long = long_format(rows)
    assert len(long) == len(OUTCOME_FIELDS)
    assert long.loc[long["outcome"] == "price_futures", "value"].item() == 0.0


def test_task_instances_share_scenario_draws() -> None:
    run = _small_run()
    tasks: list[SweepTask] = res_sweep_tasks(run)
    low = build_run_instance(run, tasks[0].calibration)
    high = build_run_instance(run, tasks[-1].calibration)
    assert np.array_equal(low.demand.gamma_spot, high.demand.gamma_spot)
    assert np.array_equal(low.cost_b, high.cost_b)
    assert high.q_futures_max[-1] == 10_000.0
