from __future__ import annotations

import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from oligopoly_futures.constants import MarketModel
from oligopoly_futures.market import (
    ConductParams,
    ConventionalGenerator,
    DemandCurves,
    MarketInstance,
    ResGenerator,
)


def make_market(
    model: MarketModel | str = MarketModel.GM,
    *,
    gamma: Sequence[float] | float = 100.0,
    beta: Sequence[float] | float = 1.0,
    costs: Sequence[tuple[float, float]] = ((0.0, 0.0),),
    capacities: Sequence[Sequence[float] | float] = (),
    gamma_futures: float = 100.0,
    beta_futures: float = 1.0,
    conduct: Optional[ConductParams] = None,
    q_max: float = 100.0,
    res_q_max: float = 100.0,
) -> MarketInstance:
    """Small hand-checkable market; costs are (b, c) pairs held fixed across scenarios."""
    gamma_spot = np.atleast_1d(np.asarray(gamma, dtype=float))
    n = gamma_spot.shape[0]
    beta_spot = np.broadcast_to(np.atleast_1d(np.asarray(beta, dtype=float)), (n,)).copy()
    conventional = tuple(
        ConventionalGenerator(
            cost_a=np.zeros(n),
            cost_b=np.full(n, b),
            cost_c=np.full(n, c),
            q_futures_min=0.0,
            q_futures_max=q_max,
        )
        for b, c in costs
    )
    res = tuple(
        ResGenerator(
            capacity=np.broadcast_to(np.atleast_1d(np.asarray(capacity, dtype=float)), (n,)).copy(),
            q_futures_min=0.0,
            q_futures_max=res_q_max,
        )
        for capacity in capacities
    )
    return MarketInstance(
        conventional=conventional,
        res=res,
        demand=DemandCurves(gamma_futures, beta_futures, gamma_spot, beta_spot),
        conduct=conduct or ConductParams.cournot(len(conventional), len(res)),
        model=MarketModel(model),
    )


@pytest.fixture
def market_factory() -> Callable[..., MarketInstance]:
    return make_market
