"""Shared enums and numeric defaults for the futures/spot equilibrium models."""

from enum import Enum
from typing import Final


class MarketModel(str, Enum):
    """Contract design of the futures stage."""

    GM = "gm"
    CFD = "cfd"
    SPOT_ONLY = "spot-only"


class ConductPreset(str, Enum):
    COURNOT = "cournot"
    PERFECT = "perfect"


class MarketRegime(str, Enum):
    CONTANGO = "contango"
    BACKWARDATION = "backwardation"
    PARITY = "parity"


FUTURES_MODELS: Final[tuple[MarketModel, ...]] = (MarketModel.GM, MarketModel.CFD)

# Singularity guard on beta_spot * (1 + delta) + cost_c.
TAU_DENOMINATOR_FLOOR: Final[float] = 1e-9

SCENARIO_FLOOR: Final[float] = 1e-6
CAPACITY_FLOOR: Final[float] = 0.0
MAX_TRUNCATION_RETRIES: Final[int] = 100

DEFAULT_ALPHA: Final[float] = 0.90
DEFAULT_RISK_NEUTRAL_SCENARIOS: Final[int] = 150
DEFAULT_RISK_AVERSE_SCENARIOS: Final[int] = 200

DEFAULT_PROFIT_SCALE: Final[float] = 1e5
DEFAULT_QUANTITY_SCALE: Final[float] = 1e3
DEFAULT_TOLERANCE: Final[float] = 1e-6
DEFAULT_STARTS: Final[int] = 10
DEFAULT_MAX_OUTER_ITERATIONS: Final[int] = 30
DEFAULT_INNER_ITERATIONS: Final[int] = 500
DEFAULT_WEIGHT_ITERATIONS: Final[int] = 200

ORACLE_TOLERANCE: Final[float] = 1e-10
ORACLE_MAX_ITERATIONS: Final[int] = 100_000

DEFAULT_RES_LEVELS: Final[tuple[float, ...]] = tuple(float(level) for level in range(0, 10_001, 1000))
DEFAULT_PHI_VALUES: Final[tuple[float, ...]] = tuple(round(0.1 * step, 1) for step in range(11))
PHI_SWEEP_RES_MEAN: Final[float] = 5000.0

OUTPUT_DIR_ENV: Final[str] = "OLIGOPOLY_FUTURES_OUT"
CSV_FLOAT_FORMAT: Final[str] = "%.6g"

EXIT_OK: Final[int] = 0
EXIT_PARTIAL_FAILURE: Final[int] = 1
EXIT_INVALID_INPUT: Final[int] = 2
EXIT_NON_CONVERGENCE: Final[int] = 3
