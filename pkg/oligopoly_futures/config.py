"""Load, validate and override run configs.

Validation runs in two passes: the JSON Schema under ``contracts/schema`` and a
semantic pass for rules the schema cannot express. Every failure is anchored
to the line of the offending key.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from jsonschema import Draft202012Validator

from oligopoly_futures.constants import (
    DEFAULT_ALPHA,
    DEFAULT_PHI_VALUES,
    DEFAULT_RES_LEVELS,
    OUTPUT_DIR_ENV,
    PHI_SWEEP_RES_MEAN,
    ConductPreset,
    MarketModel,
)
from oligopoly_futures.errors import ConfigError
from oligopoly_futures.market import ConductParams
from oligopoly_futures.risk import RiskConfig
from oligopoly_futures.scenarios import CalibrationConfig, ParameterFamily
from oligopoly_futures.solver import SolverOptions

REPO_ROOT = Path(__file__).resolve().parents[1]
DEFAULT_SCHEMA_PATH = REPO_ROOT / "contracts" / "schema" / "run_config.schema.json"
DEFAULT_CONFIG_PATH = REPO_ROOT / "contracts" / "baseline.v1.json"


@dataclass(frozen=True)
class ConfigOverrides:
    """Command-line values that take precedence over the file."""

    model: Optional[str] = None
    conduct: Optional[str] = None
    phi: Optional[float] = None
    alpha: Optional[float] = None
    scenarios: Optional[int] = None
    seed: Optional[int] = None
    out: Optional[Path] = None


@dataclass(frozen=True)
class SweepConfig:
    res_levels: tuple[float, ...] = DEFAULT_RES_LEVELS
    phi_values: tuple[float, ...] = DEFAULT_PHI_VALUES
    phi_res_mean: float = PHI_SWEEP_RES_MEAN
    workers: Optional[int] = None

    @property
    def worker_count(self) -> int:
        return self.workers if self.workers is not None else (os.cpu_count() or 1)


@dataclass(frozen=True)
class RunConfig:
    model: MarketModel
    conduct: ConductParams | ConductPreset
    calibration: CalibrationConfig
    conventional_bounds: tuple[tuple[float, float], ...]
    res_bounds: tuple[tuple[float, Optional[float]], ...]
    names: tuple[str, ...]
    risk: RiskConfig
    solver: SolverOptions
    sweep: SweepConfig
    output_dir: Path
    tag: str
    effective: Mapping[str, Any]
    config_hash: str
    source: Optional[Path] = None

    @property
    def n_conventional(self) -> int:
        return len(self.conventional_bounds)

    @property
    def n_res(self) -> int:
        return len(self.res_bounds)

    @property
    def seed(self) -> int:
        return self.calibration.seed


class _Anchors:
    """Maps a JSON path to the line of its key in the source text."""

    def __init__(self, label: str, text: str) -> None:
        self.label = label
        self.text = text

    def line(self, path: Sequence[str | int]) -> int:
        position = 0
        skip = 0
        for part in path:
            if isinstance(part, int):
                skip = part
                continue
            needle = f'"{part}"'
            found = position
            for _ in range(skip + 1):
                index = self.text.find(needle, found)
                if index < 0:
                    break
                found = index + len(needle)
            else:
                position = found - len(needle)
            skip = 0
        return self.text.count("\n", 0, position) + 1

    def render(self, path: Sequence[str | int], message: str) -> str:
        location = ".".join(str(part) for part in path) or "<root>"
        return f"{self.label}:{self.line(path)}: {location}: {message}"

    def fail(self, path: Sequence[str | int], message: str) -> ConfigError:
        return ConfigError(self.render(path, message))


def _load_json(path: Path) -> dict[str, Any]:
    with path.open("r", encoding="utf-8") as f:
        return json.load(f)


def _read_config(path: Path) -> tuple[dict[str, Any], _Anchors]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}:0: <root>: cannot read config: {exc.strerror}") from exc
    anchors = _Anchors(str(path), text)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: <root>: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise anchors.fail((), "config must be a JSON object")
    return data, anchors


def _validate_schema(config: dict[str, Any], schema: dict[str, Any], anchors: _Anchors) -> None:
    validator = Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(config), key=lambda error: [str(p) for p in error.path])
    if not errors:
        return
    rendered = [f"- {anchors.render(list(error.path), error.message)}" for error in errors]
    raise ConfigError("Config schema validation failed:\n" + "\n".join(rendered))


def _require(condition: bool, anchors: _Anchors, path: Sequence[str | int], message: str) -> None:
    if not condition:
        raise anchors.fail(path, message)


def _validate_semantics(config: dict[str, Any], anchors: _Anchors) -> None:
    conventional = config["generators"]["conventional"]
    res = config["generators"].get("res", [])
    n_conv, n_res = len(conventional), len(res)

    names = [item["name"] for item in conventional + res]
    for index, name in enumerate(names):
        _require(names.index(name) == index, anchors, ("generators",), f"duplicate generator name {name!r}")

    for index, item in enumerate(conventional):
        path = ("generators", "conventional", index)
        for family in ("cost_b", "cost_c"):
            _require(
                item[family]["mean"] > 0.0,
                anchors,
                (*path, family, "mean"),
                f"{family} mean must be > 0, got {item[family]['mean']}",
            )
        lower = item.get("q_futures_min", 0.0)
        _require(
            lower <= item["q_futures_max"],
            anchors,
            (*path, "q_futures_max"),
            f"q_futures_min={lower} exceeds q_futures_max={item['q_futures_max']}",
        )

    for index, item in enumerate(res):
        path = ("generators", "res", index)
        _require(
            item["capacity"]["mean"] >= 0.0,
            anchors,
            (*path, "capacity", "mean"),
            f"capacity mean must be >= 0, got {item['capacity']['mean']}",
        )
        upper = item.get("q_futures_max")
        lower = item.get("q_futures_min", 0.0)
        if upper is not None:
            _require(
                lower <= upper,
                anchors,
                (*path, "q_futures_max"),
                f"q_futures_min={lower} exceeds q_futures_max={upper}",
            )

    for family in ("gamma", "beta"):
        _require(
            config["demand"][family]["mean"] > 0.0,
            anchors,
            ("demand", family, "mean"),
            f"{family} mean must be > 0, got {config['demand'][family]['mean']}",
        )

    conduct = config["conduct"]
    if "preset" not in conduct:
        _require(
            len(conduct["delta"]) == n_conv,
            anchors,
            ("conduct", "delta"),
            f"delta has {len(conduct['delta'])} entries for {n_conv} conventional generators",
        )
        _require(
            len(conduct["psi"]) == n_conv + n_res,
            anchors,
            ("conduct", "psi"),
            f"psi has {len(conduct['psi'])} entries for {n_conv + n_res} generators",
        )
        if n_conv + n_res > 1:
            floor = -1.0 / (n_conv + n_res - 1)
            for index, value in enumerate(conduct["psi"]):
                _require(
                    value >= floor - 1e-15,
                    anchors,
                    ("conduct", "psi", index),
                    f"psi[{index}]={value} is below -1/(I+J-1)={floor:.6g}",
                )

    levels = config.get("sweep", {}).get("res_levels")
    if levels is not None:
        _require(
            all(later >= earlier for earlier, later in zip(levels, levels[1:])),
            anchors,
            ("sweep", "res_levels"),
            f"res_levels must be nondecreasing, got {levels}",
        )


def apply_overrides(config: Mapping[str, Any], overrides: ConfigOverrides) -> dict[str, Any]:
    """Copy of ``config`` with command-line values written into their sections."""
    effective = copy.deepcopy(dict(config))
    if overrides.model is not None:
        effective["model"] = MarketModel(overrides.model).value
    if overrides.conduct is not None:
        effective["conduct"] = {"preset": ConductPreset(overrides.conduct).value}
    if overrides.phi is not None:
        effective.setdefault("risk", {})["phi"] = float(overrides.phi)
    if overrides.alpha is not None:
        effective.setdefault("risk", {})["alpha"] = float(overrides.alpha)
    if overrides.scenarios is not None:
        effective.setdefault("scenarios", {})["count"] = int(overrides.scenarios)
    if overrides.seed is not None:
        effective.setdefault("scenarios", {})["seed"] = int(overrides.seed)
    return effective


def config_hash(config: Mapping[str, Any]) -> str:
    """sha256 of the canonical JSON; the output directory does not change the hash."""
    hashed = copy.deepcopy(dict(config))
    if isinstance(hashed.get("output"), dict):
        hashed["output"].pop("directory", None)
    canonical = json.dumps(hashed, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def resolve_output_dir(
    config: Mapping[str, Any],
    override: Optional[Path],
    environ: Optional[Mapping[str, str]] = None,
) -> Path:
    """``--out`` wins over the environment, which wins over the file."""
    environ = os.environ if environ is None else environ
    if override is not None:
        return Path(override)
    if environ.get(OUTPUT_DIR_ENV):
        return Path(environ[OUTPUT_DIR_ENV])
    return Path(config.get("output", {}).get("directory", "results"))


def _family(items: Sequence[Mapping[str, Any]], key: str) -> ParameterFamily:
    means = tuple(float(item[key]["mean"]) for item in items)
    stds = tuple(
        float(item[key]["std"]) if "std" in item[key] else abs(float(item[key]["mean"])) * float(item[key].get("cv", 0.0))
        for item in items
    )
    return ParameterFamily(mean=means, std=stds)


def _scalar_family(entry: Mapping[str, Any]) -> ParameterFamily:
    mean = float(entry["mean"])
    std = float(entry["std"]) if "std" in entry else abs(mean) * float(entry.get("cv", 0.0))
    return ParameterFamily(mean=(mean,), std=(std,))


def parse_config(
    config: Mapping[str, Any],
    *,
    output_dir: Path,
    source: Optional[Path] = None,
) -> RunConfig:
    """Typed view of an already validated config."""
    conventional = config["generators"]["conventional"]
    res = config["generators"].get("res", [])
    zero = {"mean": 0.0}
    cost_a_items = [{"cost_a": item.get("cost_a", zero)} for item in conventional]

    calibration = CalibrationConfig(
        cost_a=_family(cost_a_items, "cost_a"),
        cost_b=_family(conventional, "cost_b"),
        cost_c=_family(conventional, "cost_c"),
        gamma=_scalar_family(config["demand"]["gamma"]),
        beta=_scalar_family(config["demand"]["beta"]),
        res_capacity=_family(res, "capacity") if res else ParameterFamily(mean=(0.0,)),
        scenario_count=int(config["scenarios"]["count"]),
        seed=int(config["scenarios"]["seed"]),
    )

    conduct_section = config["conduct"]
    if "preset" in conduct_section:
        conduct: ConductParams | ConductPreset = ConductPreset(conduct_section["preset"])
    else:
        conduct = ConductParams(delta=tuple(conduct_section["delta"]), psi=tuple(conduct_section["psi"]))

    risk_section = config["risk"]
    sweep_section = config.get("sweep", {})
    output_section = config.get("output", {})
    return RunConfig(
        model=MarketModel(config["model"]),
        conduct=conduct,
        calibration=calibration,
        conventional_bounds=tuple(
            (float(item.get("q_futures_min", 0.0)), float(item["q_futures_max"])) for item in conventional
        ),
        res_bounds=tuple(
            (
                float(item.get("q_futures_min", 0.0)),
                None if item.get("q_futures_max") is None else float(item["q_futures_max"]),
            )
            for item in res
        ),
        names=tuple(item["name"] for item in conventional + res),
        risk=RiskConfig(phi=float(risk_section["phi"]), alpha=float(risk_section.get("alpha", DEFAULT_ALPHA))),
        solver=SolverOptions(
            **{key: value for key, value in config.get("solver", {}).items() if key != "description"}
        ),
        sweep=SweepConfig(
            res_levels=tuple(float(v) for v in sweep_section.get("res_levels", DEFAULT_RES_LEVELS)),
            phi_values=tuple(float(v) for v in sweep_section.get("phi_values", DEFAULT_PHI_VALUES)),
            phi_res_mean=float(sweep_section.get("phi_res_mean", PHI_SWEEP_RES_MEAN)),
            workers=sweep_section.get("workers"),
        ),
        output_dir=output_dir,
        tag=str(output_section.get("tag", "")),
        effective=copy.deepcopy(dict(config)),
        config_hash=config_hash(config),
        source=source,
    )


def load_config(
    path: Path = DEFAULT_CONFIG_PATH,
    overrides: Optional[ConfigOverrides] = None,
    *,
    schema_path: Path = DEFAULT_SCHEMA_PATH,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    overrides = overrides or ConfigOverrides()
    raw, anchors = _read_config(Path(path))
    effective = apply_overrides(raw, overrides)
    _validate_schema(effective, _load_json(schema_path), anchors)
    _validate_semantics(effective, anchors)
    try:
        return parse_config(
            effective,
            output_dir=resolve_output_dir(effective, overrides.out, environ),
            source=Path(path),
        )
    except ValueError as exc:
        raise anchors.fail((), str(exc)) from exc
