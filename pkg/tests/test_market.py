from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from oligopoly_futures.constants import ConductPreset, MarketModel
from oligopoly_futures.errors import DimensionError
from oligopoly_futures.market import (
    ConductParams,
    FuturesDecision,
    SpotOutcome,
    futures_price,
    profit,
    profit_matrix,
    spot_demand_price,
    warn_if_negative,
)
from oligopoly_futures.spot import spot_outcome
from oligopoly_futures.verification import model_bridge_gap, random_guarded_instance, random_positions


def _spot(price: float, quantities: list[float]) -> SpotOutcome:
    return SpotOutcome(
        price_spot=np.array([price]),
        q_spot=np.array([[q] for q in quantities]),
        tau=np.ones((1, 1)),
        phi_aux=np.array([0.5]),
    )


@pytest.mark.parametrize("total,expected", [(0.0, 180.0), (18_000.0, 90.0)])
def test_futures_price_is_linear_in_total_position(market_factory, total: float, expected: float) -> None:
    market = market_factory(costs=((0.0, 0.0), (0.0, 0.0)), gamma_futures=180.0, beta_futures=0.005)
    assert futures_price(market, [0.5 * total, 0.5 * total]) == pytest.approx(expected)


def test_futures_price_rejects_wrong_length(market_factory) -> None:
    market = market_factory()
    with pytest.raises(DimensionError, match="shape"):
        futures_price(market, [1.0, 2.0])


def test_spot_demand_price_gm_counts_physical_futures(market_factory) -> None:
    market = market_factory(MarketModel.GM)
    assert spot_demand_price(market, 0, [50.0], [0.0]) == pytest.approx(50.0)

    with_res = market_factory(MarketModel.GM, capacities=(20.0,))
    assert with_res.gamma_hat[0] == pytest.approx(80.0)
    assert spot_demand_price(with_res, 0, [30.0], [10.0, 0.0]) == pytest.approx(40.0)


@pytest.mark.parametrize("q_futures", [0.0, 10.0, 75.0])
def test_spot_demand_price_cfd_ignores_futures(market_factory, q_futures: float) -> None:
    market = market_factory(MarketModel.CFD)
    assert spot_demand_price(market, 0, [55.0], [q_futures]) == pytest.approx(45.0)


def test_spot_demand_price_rejects_bad_scenario(market_factory) -> None:
    market = market_factory()
    with pytest.raises(DimensionError, match="Scenario index"):
        spot_demand_price(market, 3, [1.0], [0.0])


def test_profit_gm_conventional_example(market_factory) -> None:
    market = market_factory(MarketModel.GM)
    decision = FuturesDecision(q_futures=np.array([10.0]), price_futures=90.0)
    assert profit(market, 0, decision, _spot(45.0, [45.0]), 0) == pytest.approx(2925.0)


def test_profit_gm_res_example(market_factory) -> None:
    market = market_factory(MarketModel.GM, capacities=(30.0,))
    decision = FuturesDecision(q_futures=np.array([0.0, 10.0]), price_futures=90.0)
    assert profit(market, 0, decision, _spot(45.0, [45.0, 20.0]), 1) == pytest.approx(1800.0)


def test_profit_cfd_conventional_example(market_factory) -> None:
    market = market_factory(MarketModel.CFD)
    decision = FuturesDecision(q_futures=np.array([10.0]), price_futures=90.0)
    assert profit(market, 0, decision, _spot(45.0, [55.0]), 0) == pytest.approx(2925.0)


def test_profit_cfd_res_settles_difference_and_sells_capacity(market_factory) -> None:
    market = market_factory(MarketModel.CFD, capacities=(30.0,))
    decision = FuturesDecision(q_futures=np.array([0.0, 10.0]), price_futures=90.0)
    # (90 - 45) * 10 + 45 * 30
    assert profit(market, 0, decision, _spot(45.0, [45.0, 20.0]), 1) == pytest.approx(1800.0)

    gm = market_factory(MarketModel.GM, capacities=(30.0,))
    assert profit(gm, 0, decision, _spot(45.0, [45.0, 20.0]), 1) == pytest.approx(1800.0)


def test_profit_rejects_unknown_generator(market_factory) -> None:
    market = market_factory()
    decision = FuturesDecision(q_futures=np.array([0.0]), price_futures=100.0)
    with pytest.raises(DimensionError, match="Unknown generator id"):
        profit(market, 0, decision, _spot(50.0, [50.0]), 1)


def test_zero_futures_bridge_across_models() -> None:
    rng = np.random.default_rng(11)
    for _ in range(200):
        market = random_guarded_instance(rng, conduct=None)
        assert model_bridge_gap(market) <= 1e-9


def test_gm_res_raw_form_matches_simplified() -> None:
    rng = np.random.default_rng(12)
    for _ in range(100):
        market = random_guarded_instance(rng, model=MarketModel.GM, max_res=2)
        if market.n_res == 0:
            continue
        q = random_positions(rng, market)
        price_futures = futures_price(market, q)
        spot = spot_outcome(market, q)
        simplified = profit_matrix(market, price_futures, q, spot)[market.n_conventional :]
        q_res = q[market.n_conventional :, None]
        raw = price_futures * q_res + spot.price_spot[None, :] * (market.capacity - q_res)
        scale = max(1.0, float(np.max(np.abs(raw))))
        assert float(np.max(np.abs(raw - simplified))) / scale <= 1e-12


@pytest.mark.parametrize("model", [MarketModel.GM, MarketModel.CFD, MarketModel.SPOT_ONLY])
def test_profit_is_permutation_equivariant(model: MarketModel) -> None:
    rng = np.random.default_rng(13)
    market = random_guarded_instance(rng, model=model, conduct=None, max_conventional=4)
    while market.n_conventional < 2:
        market = random_guarded_instance(rng, model=model, conduct=None, max_conventional=4)
    n_conv = market.n_conventional
    order = np.arange(market.n_generators)
    order[:n_conv] = order[:n_conv][::-1]
    permuted = replace(
        market,
        conventional=market.conventional[::-1],
        conduct=ConductParams(
            delta=tuple(market.delta[::-1]),
            psi=tuple(market.psi[order]),
        ),
    )
    q = random_positions(rng, market)
    original = profit_matrix(market, futures_price(market, q), q, spot_outcome(market, q))
    moved = profit_matrix(permuted, futures_price(permuted, q[order]), q[order], spot_outcome(permuted, q[order]))
    assert np.allclose(moved, original[order], rtol=1e-12, atol=1e-9)


def test_conduct_presets() -> None:
    cournot = ConductParams.from_preset(ConductPreset.COURNOT, 3, 1)
    assert cournot.delta == (0.0, 0.0, 0.0)
    assert cournot.psi == (0.0, 0.0, 0.0, 0.0)

    perfect = ConductParams.from_preset("perfect", 3, 1)
    assert perfect.delta == (-1.0, -1.0, -1.0)
    assert perfect.psi == pytest.approx((-1.0 / 3.0,) * 4)

    assert ConductParams.perfect_competition(1, 0).psi == (0.0,)


def test_conduct_validation(market_factory) -> None:
    with pytest.raises(ValueError, match="below -1"):
        market_factory(conduct=ConductParams(delta=(-1.5,), psi=(0.0,)))
    with pytest.raises(ValueError, match="below -1/\\(I\\+J-1\\)"):
        market_factory(
            costs=((0.0, 0.0), (0.0, 0.0)),
            conduct=ConductParams(delta=(0.0, 0.0), psi=(-1.5, 0.0)),
        )
    with pytest.raises(DimensionError, match="delta has"):
        market_factory(conduct=ConductParams(delta=(0.0, 0.0), psi=(0.0,)))


def test_futures_decision_checks_bounds(market_factory) -> None:
    market = market_factory(q_max=50.0)
    decision = FuturesDecision.from_quantities(market, [20.0])
    assert decision.price_futures == pytest.approx(80.0)
    with pytest.raises(ValueError, match="outside"):
        FuturesDecision.from_quantities(market, [60.0])


def test_instance_rejects_inconsistent_scenarios(market_factory) -> None:
    market = market_factory(gamma=(100.0, 120.0))
    with pytest.raises(DimensionError, match="scenarios"):
        replace(market, conventional=market_factory().conventional)
    with pytest.raises(ValueError, match="sum to 1"):
        replace(market, sigma=np.array([[0.7, 0.7]]))


def test_instance_requires_a_conventional_generator(market_factory) -> None:
    market = market_factory(capacities=(10.0,))
    with pytest.raises(DimensionError, match="conventional"):
        replace(market, conventional=(), conduct=ConductParams(delta=(), psi=(0.0,)))


def test_negative_quantities_are_kept_and_logged(market_factory, caplog) -> None:
    market = market_factory(MarketModel.CFD, costs=((150.0, 0.0),))
    spot = spot_outcome(market, [0.0])
    assert spot.q_spot[0, 0] < 0.0
    with caplog.at_level("WARNING"):
        warn_if_negative(market, spot, "high-cost")
    assert "negative quantities" in caplog.text
