"""Full-size calibrated runs. Deselected by default; run with ``pytest -m slow``."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from oligopoly_futures.config import ConfigOverrides, load_config
from oligopoly_futures.constants import DEFAULT_RISK_AVERSE_SCENARIOS
from oligopoly_futures.experiments import run_phi_sweep, run_res_sweep, run_single

pytestmark = pytest.mark.slow


def _run(model: str, conduct: str, phi: float = 0.0, scenarios: int = 150):
    return load_config(
        overrides=ConfigOverrides(model=model, conduct=conduct, phi=phi, scenarios=scenarios), environ={}
    )


def test_gm_cournot_risk_neutral_prices() -> None:
    result = run_single(_run("gm", "cournot"))
    assert result.outcomes["price_futures"] == pytest.approx(108.28, rel=0.10)
    assert result.outcomes["price_spot_expected"] == pytest.approx(90.64, rel=0.10)


def test_gm_perfect_competition_has_no_futures_premium() -> None:
    result = run_single(_run("gm", "perfect"))
    assert result.outcomes["price_futures"] == pytest.approx(result.outcomes["price_spot_expected"], rel=1e-6)
    assert result.outcomes["price_futures"] == pytest.approx(74.05, rel=0.02)


def test_cfd_cournot_res_futures_volume() -> None:
    result = run_single(_run("cfd", "cournot"))
    assert result.outcomes["q_futures_res"] == pytest.approx(3527.72, rel=0.15)


def test_gm_cournot_risk_averse_futures_price() -> None:
    result = run_single(_run("gm", "cournot", phi=1.0, scenarios=DEFAULT_RISK_AVERSE_SCENARIOS))
    assert result.outcomes["price_futures"] == pytest.approx(107.68, rel=0.10)


def test_gm_cournot_risk_averse_sweep_endpoints() -> None:
    run = _run("gm", "cournot", phi=1.0, scenarios=DEFAULT_RISK_AVERSE_SCENARIOS)
    outcome = run_res_sweep(run)
    prices = outcome.rows["price_futures"].to_numpy()
    assert prices[0] == pytest.approx(116.0, rel=0.10)
    assert prices[-1] == pytest.approx(101.0, rel=0.10)
    spot_only = outcome.rows["price_spot_only_expected"].to_numpy()
    assert spot_only[0] == pytest.approx(111.0, rel=0.10)
    assert spot_only[-1] == pytest.approx(84.0, rel=0.10)


def test_every_combination_trends_with_res_penetration() -> None:
    outcome = run_res_sweep(_run("gm", "cournot"), all_combinations=True)
    assert outcome.failed == 0
    summary = outcome.summary
    assert len(summary.groupby(["model", "conduct", "phi"])) == 12
    prices = summary[summary["outcome"] == "price_spot_expected"]
    assert (prices["slope"] < 0.0).all()
    res_profit = summary[summary["outcome"] == "profit_res_expected"]
    assert (res_profit["slope"] > 0.0).all()


def test_perfect_competition_gm_futures_price_rises_with_risk_aversion() -> None:
    run = _run("gm", "perfect", scenarios=DEFAULT_RISK_AVERSE_SCENARIOS)
    outcome = run_phi_sweep(replace(run, sweep=replace(run.sweep, phi_values=(0.0, 0.25, 0.5, 0.75, 1.0))))
    prices = outcome.rows["price_futures"].to_numpy()
    assert np.all(np.diff(prices) >= -1e-6 * np.abs(prices[1:]))
    summary = outcome.summary.set_index("outcome")
    assert summary.loc["price_futures", "slope"] >= 0.0
