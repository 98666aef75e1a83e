"""Two-stage futures/spot equilibria of oligopolistic electricity markets."""

from oligopoly_futures.constants import ConductPreset, MarketModel, MarketRegime
from oligopoly_futures.equilibrium import EquilibriumSolution, KKTReport, kkt_residuals
from oligopoly_futures.market import (
    ConductParams,
    ConventionalGenerator,
    DemandCurves,
    FuturesDecision,
    MarketInstance,
    ResGenerator,
    SpotOutcome,
    futures_price,
    profit,
    spot_demand_price,
)
from oligopoly_futures.risk import RiskConfig
from oligopoly_futures.scenarios import CalibrationConfig, ScenarioSet, generate, sweep_capacity
from oligopoly_futures.solver import SolverOptions, solve

__all__ = [
    "CalibrationConfig",
    "ConductParams",
    "ConductPreset",
    "ConventionalGenerator",
    "DemandCurves",
    "EquilibriumSolution",
    "FuturesDecision",
    "KKTReport",
    "MarketInstance",
    "MarketModel",
    "MarketRegime",
    "ResGenerator",
    "RiskConfig",
    "ScenarioSet",
    "SolverOptions",
    "SpotOutcome",
    "futures_price",
    "generate",
    "kkt_residuals",
    "profit",
    "solve",
    "spot_demand_price",
    "sweep_capacity",
]
