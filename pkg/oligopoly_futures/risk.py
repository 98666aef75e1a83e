"""CVaR helpers for the risk-weighted generator objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from oligopoly_futures.constants import DEFAULT_ALPHA

PROBABILITY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class RiskConfig:
    """phi blends expected profit (phi=0) with CVaR at level alpha (phi=1)."""

    phi: float = 0.0
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self) -> None:
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError(f"phi={self.phi} must lie in [0, 1].")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha={self.alpha} must lie in (0, 1).")

    @property
    def tail_mass(self) -> float:
        return 1.0 - self.alpha


def _check_probabilities(sigma: np.ndarray, size: int) -> None:
    if sigma.shape != (size,):
        raise ValueError(f"sigma has shape {sigma.shape}, expected ({size},).")
    if np.any(sigma < 0.0) or abs(float(sigma.sum()) - 1.0) > PROBABILITY_TOLERANCE:
        raise ValueError(f"Scenario probabilities must be >= 0 and sum to 1, got sum {sigma.sum()!r}.")


def _tail_order(profits: np.ndarray, sigma: np.ndarray, tail_mass: float) -> tuple[np.ndarray, int]:
    order = np.argsort(profits, kind="stable")
    cumulative = np.cumsum(sigma[order])
    cut = int(np.searchsorted(cumulative, tail_mass - PROBABILITY_TOLERANCE, side="left"))
    return order, min(cut, order.shape[0] - 1)


def optimal_cvar_auxiliaries(
    profits: Sequence[float] | np.ndarray,
    sigma: Sequence[float] | np.ndarray,
    alpha: float,
) -> tuple[float, np.ndarray]:
    """xi is the lower (1-alpha)-quantile of the profits, eta its shortfall."""
    profits = np.asarray(profits, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if profits.ndim != 1 or profits.shape[0] == 0:
        raise ValueError("profits must be a nonempty 1-D array.")
    _check_probabilities(sigma, profits.shape[0])
    order, cut = _tail_order(profits, sigma, 1.0 - alpha)
    xi = float(profits[order[cut]])
    return xi, np.maximum(0.0, xi - profits)


def cvar_objective(
    profits: Sequence[float] | np.ndarray,
    sigma: Sequence[float] | np.ndarray,
    risk: RiskConfig,
    xi: float,
    eta: Sequence[float] | np.ndarray,
) -> float:
    profits = np.asarray(profits, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    eta = np.asarray(eta, dtype=float)
    _check_probabilities(sigma, profits.shape[0])
    if eta.shape != profits.shape:
        raise ValueError(f"eta has shape {eta.shape}, expected {profits.shape}.")
    expected = float(sigma @ profits)
    cvar = float(xi - (sigma @ eta) / risk.tail_mass)
    return (1.0 - risk.phi) * expected + risk.phi * cvar


def cvar_value(
    profits: Sequence[float] | np.ndarray, sigma: Sequence[float] | np.ndarray, alpha: float
) -> float:
    xi, eta = optimal_cvar_auxiliaries(profits, sigma, alpha)
    return float(xi - np.asarray(sigma, dtype=float) @ eta / (1.0 - alpha))


def optimal_objective(
    profits: Sequence[float] | np.ndarray, sigma: Sequence[float] | np.ndarray, risk: RiskConfig
) -> float:
    """Objective with (xi, eta) re-optimized for the given profits."""
    xi, eta = optimal_cvar_auxiliaries(profits, sigma, risk.alpha)
    return cvar_objective(profits, sigma, risk, xi, eta)


def tail_weights(
    profits: Sequence[float] | np.ndarray, sigma: Sequence[float] | np.ndarray, risk: RiskConfig
) -> np.ndarray:
    """CVaR multipliers mu consistent with the profit ranking.

    The worst scenarios get phi*sigma/(1-alpha) each until phi is spent; the
    scenario that crosses the quantile takes the remainder.
    """
    profits = np.asarray(profits, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    mu = np.zeros_like(profits)
    if risk.phi == 0.0:
        return mu
    order, cut = _tail_order(profits, sigma, risk.tail_mass)
    cap = risk.phi * sigma / risk.tail_mass
    full = order[:cut]
    mu[full] = cap[full]
    mu[order[cut]] = max(0.0, risk.phi - float(mu[full].sum()))
    return mu
