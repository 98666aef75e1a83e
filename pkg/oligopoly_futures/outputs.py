"""CSV and JSON writers. Every file carries the config hash and the scenario seed."""

from __future__ import annotations

import dataclasses
import json
import math
import platform
from importlib import metadata
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd

from oligopoly_futures.config import RunConfig
from oligopoly_futures.constants import CSV_FLOAT_FORMAT
from oligopoly_futures.equilibrium import EquilibriumSolution, KKTReport
from oligopoly_futures.errors import ConvergenceError
from oligopoly_futures.experiments import RunResult, SweepOutcome
from oligopoly_futures.verification import CheckResult


def _jsonable(value: Any) -> Any:
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: _jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def _dump(path: Path, payload: dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


def _write_csv(path: Path, frame: pd.DataFrame, run: RunConfig) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = frame.copy()
    frame["config_hash"] = run.config_hash
    frame["seed"] = run.seed
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def _name(run: RunConfig, stem: str, suffix: str) -> str:
    return f"{run.tag}_{stem}{suffix}" if run.tag else f"{stem}{suffix}"


def _stamp(run: RunConfig) -> dict[str, Any]:
    return {"config_hash": run.config_hash, "seed": run.seed, "solver_seed": run.solver.seed}


def residual_payload(report: KKTReport) -> dict[str, Any]:
    return {
        "max_equality_residual": report.max_equality_residual,
        "complementarity_objective": report.complementarity_objective,
        "max_sign_violation": report.max_sign_violation,
        "per_generator": {
            f.name: getattr(report, f.name) for f in dataclasses.fields(report)
        },
    }


def solution_payload(solution: EquilibriumSolution) -> dict[str, Any]:
    payload: dict[str, Any] = {
        "q_futures": solution.decision.q_futures,
        "price_futures": solution.decision.price_futures,
        "xi": solution.xi,
        "eta": solution.eta,
        "mu": solution.mu,
        "theta": solution.theta,
        "nu_min": solution.nu_min,
        "nu_max": solution.nu_max,
        "profits": solution.profits,
        "objective_residual": solution.objective_residual,
        "solve_report": solution.solve_report,
    }
    if solution.residuals is not None:
        payload["residuals"] = residual_payload(solution.residuals)
    return payload


def result_payload(run: RunConfig, result: RunResult) -> dict[str, Any]:
    payload: dict[str, Any] = {
        **_stamp(run),
        "model": result.model,
        "conduct": result.conduct,
        "phi": result.phi,
        "alpha": result.alpha,
        "res_level": result.res_level,
        "status": result.status,
        "outcomes": dict(result.outcomes),
        "regime": result.regime,
        "generators": result.generators,
        "config": run.effective,
    }
    if result.solution is not None:
        payload["solution"] = solution_payload(result.solution)
    if result.message:
        payload["message"] = result.message
    return payload


def write_single(run: RunConfig, result: RunResult, out_dir: Path) -> list[Path]:
    csv_path = _write_csv(out_dir / _name(run, "solve", ".csv"), pd.DataFrame([result.row()]), run)
    json_path = _dump(out_dir / _name(run, "solve", ".json"), result_payload(run, result))
    return [csv_path, json_path]


def write_sweep(run: RunConfig, outcome: SweepOutcome, out_dir: Path, stem: str) -> list[Path]:
    paths = [
        _write_csv(out_dir / _name(run, stem, ".csv"), outcome.rows, run),
        _write_csv(out_dir / _name(run, f"{stem}_long", ".csv"), outcome.long, run),
        _write_csv(out_dir / _name(run, f"{stem}_summary", ".csv"), outcome.summary, run),
    ]
    payload = {
        **_stamp(run),
        "axis": outcome.axis,
        "rows": len(outcome.results),
        "failed": outcome.failed,
        "results": [result_payload(run, result) for result in outcome.results],
    }
    paths.append(_dump(out_dir / _name(run, stem, ".json"), payload))
    return paths


def write_diagnostics(run: RunConfig, error: ConvergenceError, out_dir: Path) -> Path:
    payload = {
        **_stamp(run),
        "message": str(error),
        "starts": error.diagnostics,
        "last_iterate": error.last_iterate,
        "config": run.effective,
    }
    return _dump(out_dir / _name(run, "diagnostics", ".json"), payload)


def write_verify(run: RunConfig, checks: Sequence[CheckResult], out_dir: Path) -> Path:
    payload = {
        **_stamp(run),
        "passed": all(check.passed for check in checks),
        "checks": [{**_jsonable(check), "passed": check.passed} for check in checks],
    }
    return _dump(out_dir / _name(run, "verify", ".json"), payload)


def _versions(packages: Iterable[str]) -> dict[str, str]:
    found = {}
    for package in packages:
        try:
            found[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            found[package] = "unknown"
    return found


def write_manifest(run: RunConfig, command: str, files: Sequence[Path], out_dir: Path) -> Path:
    payload = {
        **_stamp(run),
        "command": command,
        "config_source": run.source,
        "files": [path.name for path in files],
        "python": platform.python_version(),
        "packages": _versions(("numpy", "scipy", "pandas", "jsonschema")),
    }
    return _dump(out_dir / _name(run, f"{command}_manifest", ".json"), payload)
