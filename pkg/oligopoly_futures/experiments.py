"""Single runs and parameter sweeps over RES penetration and the risk weight."""

from __future__ import annotations

import concurrent.futures
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import linregress

from oligopoly_futures.config import RunConfig
from oligopoly_futures.constants import ConductPreset, MarketModel, MarketRegime
from oligopoly_futures.equilibrium import EquilibriumSolution
from oligopoly_futures.errors import ConvergenceError, ModelError
from oligopoly_futures.market import (
    ConductParams,
    MarketInstance,
    expected_profits,
    futures_price,
    profit_matrix,
    warn_if_negative,
)
from oligopoly_futures.risk import RiskConfig, cvar_value
from oligopoly_futures.scenarios import CalibrationConfig, build_instance, generate, sweep_capacity
from oligopoly_futures.solver import SolverOptions, solve
from oligopoly_futures.spot import spot_only_counterpart, spot_outcome

logger = logging.getLogger(__name__)

HEADLINE_FIELDS = (
    "price_futures",
    "price_spot_expected",
    "q_futures_conventional",
    "q_spot_conventional_expected",
    "q_futures_res",
    "q_spot_res_expected",
    "profit_conventional_expected",
    "profit_res_expected",
)
RISK_FIELDS = ("cvar_conventional", "cvar_res")
COMPARISON_FIELDS = (
    "price_spot_only_expected",
    "q_spot_only_conventional_expected",
    "profit_conventional_spot_only",
    "profit_res_spot_only",
    "total_trading",
    "total_trading_spot_only",
    "futures_premium",
)
OUTCOME_FIELDS = HEADLINE_FIELDS + RISK_FIELDS + COMPARISON_FIELDS
LABEL_FIELDS = ("model", "conduct", "phi", "alpha", "res_level", "status")

ALL_COMBINATION_MODELS = (MarketModel.GM, MarketModel.CFD, MarketModel.SPOT_ONLY)
ALL_COMBINATION_CONDUCTS = (ConductPreset.COURNOT, ConductPreset.PERFECT)
ALL_COMBINATION_PHIS = (0.0, 1.0)
PARITY_TOLERANCE = 1e-6


@dataclass(frozen=True)
class GeneratorBreakdown:
    name: str
    kind: str
    q_futures: float
    q_spot_expected: float
    profit_expected: float
    cvar: float
    profit_spot_only: float
    xi: Optional[float] = None
    nu_min: Optional[float] = None
    nu_max: Optional[float] = None


@dataclass(frozen=True)
class RunResult:
    model: MarketModel
    conduct: str
    phi: float
    alpha: float
    res_level: Optional[float]
    status: str
    outcomes: Mapping[str, float] = field(default_factory=dict)
    regime: str = ""
    generators: tuple[GeneratorBreakdown, ...] = ()
    solution: Optional[EquilibriumSolution] = None
    message: str = ""
    diagnostics: tuple[Any, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def row(self) -> dict[str, Any]:
        row: dict[str, Any] = {
            "model": self.model.value,
            "conduct": self.conduct,
            "phi": self.phi,
            "alpha": self.alpha,
            "res_level": math.nan if self.res_level is None else self.res_level,
            "status": self.status,
        }
        for name in OUTCOME_FIELDS:
            row[name] = self.outcomes.get(name, math.nan)
        row["regime"] = self.regime
        row["objective_residual"] = (
            self.solution.objective_residual if self.solution is not None else math.nan
        )
        return row


@dataclass(frozen=True)
class SweepTask:
    run: RunConfig
    calibration: CalibrationConfig
    model: MarketModel
    conduct: ConductParams | ConductPreset
    risk: RiskConfig
    res_level: Optional[float]


@dataclass(frozen=True)
class SweepOutcome:
    axis: str
    results: tuple[RunResult, ...]
    rows: pd.DataFrame
    long: pd.DataFrame
    summary: pd.DataFrame

    @property
    def failed(self) -> int:
        return sum(1 for result in self.results if not result.ok)


def conduct_label(conduct: ConductParams | ConductPreset | str) -> str:
    if isinstance(conduct, ConductParams):
        return "custom"
    return ConductPreset(conduct).value


def build_run_instance(
    run: RunConfig,
    calibration: Optional[CalibrationConfig] = None,
    *,
    model: Optional[MarketModel] = None,
    conduct: Optional[ConductParams | ConductPreset] = None,
) -> MarketInstance:
    calibration = calibration or run.calibration
    scenarios = generate(calibration, run.n_conventional, run.n_res)
    return build_instance(
        calibration,
        scenarios,
        model=model or run.model,
        conduct=conduct if conduct is not None else run.conduct,
        conventional_bounds=run.conventional_bounds,
        res_bounds=run.res_bounds,
        names=run.names,
    )


def market_probabilities(instance: MarketInstance) -> np.ndarray:
    """Scenario weights for market-level expectations."""
    return instance.sigma.mean(axis=0)


def classify_regime(price_futures: float, price_spot_expected: float) -> MarketRegime:
    premium = price_futures - price_spot_expected
    if abs(premium) <= PARITY_TOLERANCE * (1.0 + abs(price_futures)):
        return MarketRegime.PARITY
    return MarketRegime.CONTANGO if premium > 0.0 else MarketRegime.BACKWARDATION


def evaluate_outcomes(
    instance: MarketInstance,
    risk: RiskConfig,
    solution: Optional[EquilibriumSolution] = None,
) -> tuple[dict[str, float], str, tuple[GeneratorBreakdown, ...]]:
    """Headline outcomes, regime and per-generator breakdown at a solved position.

    Without a solution the futures stage is empty (all positions zero).
    """
    n_conv = instance.n_conventional
    weights = market_probabilities(instance)
    if solution is not None:
        q = np.asarray(solution.decision.q_futures, dtype=float)
    else:
        q = np.zeros(instance.n_generators)
    has_futures = instance.model is not MarketModel.SPOT_ONLY
    price_futures = futures_price(instance, q) if has_futures else math.nan
    spot = spot_outcome(instance, q)
    warn_if_negative(instance, spot, instance.model.value)
    profits = profit_matrix(instance, 0.0 if not has_futures else price_futures, q, spot)
    expected = expected_profits(instance, profits)
    cvars = np.array(
        [cvar_value(profits[k], instance.sigma[k], risk.alpha) for k in range(instance.n_generators)]
    )
    q_spot_expected = spot.q_spot @ weights

    baseline_instance = replace(instance, model=MarketModel.SPOT_ONLY)
    baseline = spot_only_counterpart(instance)
    zeros = np.zeros(instance.n_generators)
    baseline_profits = expected_profits(
        baseline_instance, profit_matrix(baseline_instance, 0.0, zeros, baseline)
    )

    price_spot_expected = float(spot.price_spot @ weights)
    outcomes = {
        "price_futures": price_futures,
        "price_spot_expected": price_spot_expected,
        "q_futures_conventional": float(q[:n_conv].sum()),
        "q_spot_conventional_expected": float(q_spot_expected[:n_conv].sum()),
        "q_futures_res": float(q[n_conv:].sum()),
        "q_spot_res_expected": float(q_spot_expected[n_conv:].sum()),
        "profit_conventional_expected": float(expected[:n_conv].sum()),
        "profit_res_expected": float(expected[n_conv:].sum()),
        "cvar_conventional": float(cvars[:n_conv].sum()),
        "cvar_res": float(cvars[n_conv:].sum()),
        "price_spot_only_expected": float(baseline.price_spot @ weights),
        "q_spot_only_conventional_expected": float((baseline.q_spot[:n_conv] @ weights).sum()),
        "profit_conventional_spot_only": float(baseline_profits[:n_conv].sum()),
        "profit_res_spot_only": float(baseline_profits[n_conv:].sum()),
        "total_trading": float(q.sum() + q_spot_expected.sum()),
        "total_trading_spot_only": float((baseline.q_spot @ weights).sum()),
        "futures_premium": price_futures - price_spot_expected,
    }
    regime = classify_regime(price_futures, price_spot_expected).value if has_futures else ""

    names = instance.generator_names
    generators = tuple(
        GeneratorBreakdown(
            name=names[k],
            kind="conventional" if k < n_conv else "res",
            q_futures=float(q[k]),
            q_spot_expected=float(q_spot_expected[k]),
            profit_expected=float(expected[k]),
            cvar=float(cvars[k]),
            profit_spot_only=float(baseline_profits[k]),
            xi=None if solution is None else float(solution.xi[k]),
            nu_min=None if solution is None else float(solution.nu_min[k]),
            nu_max=None if solution is None else float(solution.nu_max[k]),
        )
        for k in range(instance.n_generators)
    )
    return outcomes, regime, generators


def solve_instance(
    instance: MarketInstance,
    risk: RiskConfig,
    options: SolverOptions,
    *,
    conduct: str,
    res_level: Optional[float] = None,
) -> RunResult:
    """Equilibrium plus evaluation; the spot-only market needs no solve."""
    solution = None
    if instance.model is not MarketModel.SPOT_ONLY:
        solution = solve(instance, risk, options)
    outcomes, regime, generators = evaluate_outcomes(instance, risk, solution)
    return RunResult(
        model=instance.model,
        conduct=conduct,
        phi=risk.phi,
        alpha=risk.alpha,
        res_level=res_level,
        status="ok",
        outcomes=outcomes,
        regime=regime,
        generators=generators,
        solution=solution,
    )


def run_single(run: RunConfig) -> RunResult:
    """Solve the configured market once. Raises ConvergenceError on failure."""
    instance = build_run_instance(run)
    logger.info(
        "Solving %s/%s phi=%.2f with %d scenarios (seed=%d)",
        run.model.value,
        conduct_label(run.conduct),
        run.risk.phi,
        instance.n_scenarios,
        run.seed,
    )
    return solve_instance(instance, run.risk, run.solver, conduct=conduct_label(run.conduct))


def _run_task(task: SweepTask) -> RunResult:
    label = conduct_label(task.conduct)
    try:
        instance = build_run_instance(task.run, task.calibration, model=task.model, conduct=task.conduct)
        return solve_instance(instance, task.risk, task.run.solver, conduct=label, res_level=task.res_level)
    except (ModelError, ValueError) as exc:
        logger.warning(
            "Row %s/%s phi=%.2f level=%s failed: %s", task.model.value, label, task.risk.phi, task.res_level, exc
        )
        diagnostics = exc.diagnostics if isinstance(exc, ConvergenceError) else ()
        return RunResult(
            model=task.model,
            conduct=label,
            phi=task.risk.phi,
            alpha=task.risk.alpha,
            res_level=task.res_level,
            status="failed",
            message=str(exc),
            diagnostics=diagnostics,
        )


def run_tasks(tasks: Sequence[SweepTask], workers: int) -> list[RunResult]:
    """Results in task order, whatever order the pool finishes them in."""
    if workers <= 1 or len(tasks) <= 1:
        return [_run_task(task) for task in tasks]
    results: dict[int, RunResult] = {}
    with concurrent.futures.ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as executor:
        futures = {executor.submit(_run_task, task): index for index, task in enumerate(tasks)}
        for future in concurrent.futures.as_completed(futures):
            results[futures[future]] = future.result()
    return [results[index] for index in sorted(results)]


def res_sweep_tasks(run: RunConfig, *, all_combinations: bool = False) -> list[SweepTask]:
    calibrations = sweep_capacity(run.calibration, run.sweep.res_levels)
    if all_combinations:
        cells = [
            (model, conduct, replace(run.risk, phi=phi))
            for model in ALL_COMBINATION_MODELS
            for conduct in ALL_COMBINATION_CONDUCTS
            for phi in ALL_COMBINATION_PHIS
        ]
    else:
        cells = [(run.model, run.conduct, run.risk)]
    return [
        SweepTask(run, calibration, model, conduct, risk, level)
        for model, conduct, risk in cells
        for level, calibration in zip(run.sweep.res_levels, calibrations)
    ]


def phi_sweep_tasks(run: RunConfig) -> list[SweepTask]:
    calibration = sweep_capacity(run.calibration, [run.sweep.phi_res_mean])[0]
    return [
        SweepTask(run, calibration, run.model, run.conduct, replace(run.risk, phi=phi), run.sweep.phi_res_mean)
        for phi in run.sweep.phi_values
    ]


def long_format(rows: pd.DataFrame) -> pd.DataFrame:
    """One line per (row, outcome) pair, keyed by the label columns."""
    return rows.melt(
        id_vars=list(LABEL_FIELDS),
        value_vars=list(OUTCOME_FIELDS),
        var_name="outcome",
        value_name="value",
    )


def trend_summary(rows: pd.DataFrame, axis: str) -> pd.DataFrame:
    """Least-squares slope of every outcome against the swept axis, per combination."""
    group_keys = [key for key in ("model", "conduct", "phi", "res_level") if key != axis]
    records = []
    ok = rows[rows["status"] == "ok"]
    for keys, group in ok.groupby(group_keys, sort=False, dropna=False):
        labels = dict(zip(group_keys, keys if isinstance(keys, tuple) else (keys,)))
        for outcome in OUTCOME_FIELDS:
            finite = group[np.isfinite(group[outcome]) & np.isfinite(group[axis])]
            record = {**labels, "outcome": outcome, "points": len(finite)}
            if len(finite) >= 2 and finite[axis].nunique() >= 2:
                fit = linregress(finite[axis].to_numpy(), finite[outcome].to_numpy())
                record.update(slope=fit.slope, intercept=fit.intercept, r_value=fit.rvalue)
            else:
                record.update(slope=math.nan, intercept=math.nan, r_value=math.nan)
            records.append(record)
    columns = group_keys + ["outcome", "points", "slope", "intercept", "r_value"]
    return pd.DataFrame.from_records(records, columns=columns)


def _sweep(tasks: Sequence[SweepTask], axis: str, workers: int) -> SweepOutcome:
    results = run_tasks(tasks, workers)
    rows = pd.DataFrame.from_records([result.row() for result in results])
    failed = sum(1 for result in results if not result.ok)
    if failed:
        logger.warning("%d of %d sweep rows failed", failed, len(results))
    return SweepOutcome(
        axis=axis,
        results=tuple(results),
        rows=rows,
        long=long_format(rows),
        summary=trend_summary(rows, axis),
    )


def run_res_sweep(
    run: RunConfig, *, all_combinations: bool = False, workers: Optional[int] = None
) -> SweepOutcome:
    """One solve per RES level on common random numbers."""
    tasks = res_sweep_tasks(run, all_combinations=all_combinations)
    return _sweep(tasks, "res_level", workers if workers is not None else run.sweep.worker_count)


def run_phi_sweep(run: RunConfig, *, workers: Optional[int] = None) -> SweepOutcome:
    """One solve per risk weight with the RES mean held fixed."""
    tasks = phi_sweep_tasks(run)
    return _sweep(tasks, "phi", workers if workers is not None else run.sweep.worker_count)
