from __future__ import annotations

import numpy as np
import pytest

from oligopoly_futures.constants import ConductPreset, MarketModel
from oligopoly_futures.gradients import (
    cfd_partials,
    futures_partials,
    gm_partials,
    gradient_jacobian,
    profit_gradient,
    profit_gradients,
    profit_jacobian,
    profit_sensitivities,
    response_vectors,
    spot_jacobian,
)
from oligopoly_futures.market import ConductParams, futures_price, profit_matrix
from oligopoly_futures.spot import spot_outcome
from oligopoly_futures.verification import (
    finite_difference_gradients,
    finite_difference_partials,
    random_guarded_instance,
    random_positions,
    relative_error,
)


def test_cournot_futures_price_partial(market_factory) -> None:
    market = market_factory(beta_futures=0.005)
    partials = futures_partials(market, [0.0])
    assert partials.d_price_futures[0] == pytest.approx(-0.005)


@pytest.mark.parametrize("model", [MarketModel.GM, MarketModel.CFD])
def test_perfect_competition_futures_price_does_not_move(model: MarketModel) -> None:
    rng = np.random.default_rng(5)
    market = random_guarded_instance(rng, model=model, conduct=ConductPreset.PERFECT, max_conventional=4)
    while market.n_generators < 2:
        market = random_guarded_instance(rng, model=model, conduct=ConductPreset.PERFECT)
    partials = futures_partials(market, random_positions(rng, market))
    assert np.allclose(partials.d_price_futures, 0.0, atol=1e-15)


def test_gm_monopoly_partials_and_gradient(market_factory) -> None:
    market = market_factory(MarketModel.GM)
    partials = gm_partials(market, [0.0])
    assert partials.d_price_spot[0, 0] == pytest.approx(-0.5)
    assert partials.d_q_spot[0, 0] == pytest.approx(-0.5)
    assert profit_gradient(market, [0.0], 0)[0] == pytest.approx(50.0)


def test_cfd_monopoly_partials(market_factory) -> None:
    market = market_factory(MarketModel.CFD)
    partials = cfd_partials(market, [0.0])
    assert partials.d_price_spot[0, 0] == pytest.approx(-0.5)
    assert partials.d_q_spot[0, 0] == pytest.approx(0.5)


def test_competitive_cfd_spot_ignores_futures(market_factory) -> None:
    market = market_factory(
        MarketModel.CFD,
        costs=((0.0, 1.0), (5.0, 2.0)),
        conduct=ConductParams(delta=(-1.0, -1.0), psi=(0.0, 0.0)),
    )
    partials = cfd_partials(market, [10.0, 20.0])
    assert np.allclose(partials.d_price_spot, 0.0)
    assert np.allclose(partials.d_q_spot, 0.0)


@pytest.mark.parametrize("model", [MarketModel.GM, MarketModel.CFD])
def test_res_first_contract_is_worth_the_price_gap(market_factory, model: MarketModel) -> None:
    market = market_factory(
        model,
        gamma=(100.0, 140.0),
        costs=((10.0, 0.5),),
        capacities=(30.0,),
        gamma_futures=180.0,
        beta_futures=0.005,
    )
    q = np.array([12.0, 0.0])
    partials = futures_partials(market, q)
    assert np.allclose(partials.d_price_spot[1], 0.0)
    assert np.allclose(partials.d_q_spot[1], -1.0)
    spot = spot_outcome(market, q)
    expected = futures_price(market, q) - spot.price_spot
    assert np.allclose(profit_gradient(market, q, 1), expected)


def test_response_vectors_keep_res_movers_alone_in_spot() -> None:
    market = random_guarded_instance(np.random.default_rng(0), max_conventional=3, max_res=2)
    futures_response, spot_response = response_vectors(market)
    n_conv = market.n_conventional
    assert np.allclose(np.diag(futures_response), 1.0)
    assert np.allclose(np.diag(spot_response), 1.0)
    for j in range(n_conv, market.n_generators):
        row = spot_response[j].copy()
        row[j] = 0.0
        assert np.allclose(row, 0.0)
    assert np.allclose(spot_response[:n_conv, n_conv:], 0.0)


def test_spot_only_has_no_gradients(market_factory) -> None:
    market = market_factory(MarketModel.SPOT_ONLY)
    with pytest.raises(ValueError, match="no futures stage"):
        futures_partials(market, [0.0])
    with pytest.raises(ValueError, match="no futures stage"):
        profit_gradients(market, [0.0])


GUARDED_INSTANCES = 1000


@pytest.mark.parametrize("conduct", [ConductPreset.COURNOT, ConductPreset.PERFECT, None])
@pytest.mark.parametrize("model", [MarketModel.GM, MarketModel.CFD])
def test_analytic_partials_match_finite_differences(model: MarketModel, conduct) -> None:
    conduct_seed = {ConductPreset.COURNOT: 0, ConductPreset.PERFECT: 1, None: 2}[conduct]
    rng = np.random.default_rng(99 + 10 * conduct_seed + (0 if model is MarketModel.GM else 1))
    for _ in range(GUARDED_INSTANCES):
        market = random_guarded_instance(rng, model=model, conduct=conduct)
        q = random_positions(rng, market)
        analytic = futures_partials(market, q)
        numeric = finite_difference_partials(market, q)
        assert relative_error(analytic.d_price_futures, numeric.d_price_futures) <= 1e-5
        assert relative_error(analytic.d_price_spot, numeric.d_price_spot) <= 1e-5
        assert relative_error(analytic.d_q_spot, numeric.d_q_spot) <= 1e-5
        assert relative_error(profit_gradients(market, q), finite_difference_gradients(market, q)) <= 1e-5


@pytest.mark.parametrize("model", [MarketModel.GM, MarketModel.CFD])
def test_gradients_are_affine_in_positions(model: MarketModel) -> None:
    rng = np.random.default_rng(17)
    for _ in range(20):
        market = random_guarded_instance(rng, model=model)
        partials = futures_partials(market, np.zeros(market.n_generators))
        slope = gradient_jacobian(market, partials, spot_jacobian(market))
        intercept = profit_gradients(market, np.zeros(market.n_generators))
        q = random_positions(rng, market)
        assert relative_error(intercept + slope @ q, profit_gradients(market, q)) <= 1e-9


@pytest.mark.parametrize("model", [MarketModel.GM, MarketModel.CFD])
def test_profit_jacobian_matches_plain_differences(model: MarketModel) -> None:
    rng = np.random.default_rng(23)
    for _ in range(20):
        market = random_guarded_instance(rng, model=model)
        q = random_positions(rng, market)
        spot = spot_outcome(market, q)
        sensitivities = profit_sensitivities(market, q, spot, futures_price(market, q))
        analytic = profit_jacobian(market, sensitivities, spot_jacobian(market))

        h = 1e-3 * max(1.0, float(np.max(q)))
        numeric = np.empty_like(analytic)
        for col in range(market.n_generators):
            step = np.zeros_like(q)
            step[col] = h
            values = []
            for shifted in (q + step, q - step):
                values.append(
                    profit_matrix(market, futures_price(market, shifted), shifted, spot_outcome(market, shifted))
                )
            numeric[:, :, col] = (values[0] - values[1]) / (2.0 * h)
        assert relative_error(analytic, numeric) <= 1e-6
