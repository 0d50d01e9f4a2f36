"""Scenario files: validation, model construction, pipeline orchestration.

A scenario is a versioned JSON document holding every knob of an end-to-end
run: signal configuration, array geometry and coupling, the DPD basis, the
post-weighting layouts, the beam direction, the sweep grid, and named seeds.
All randomness flows from the named seeds; the same scenario always produces
the same artifacts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .arraysim import (
    ArrayGeometry,
    ArrayModel,
    BeamWeights,
    build_crosstalk,
)
from .dpdtrain import (
    LambdaEstimate,
    TrainOptions,
    TrainingResult,
    estimate_lambda,
    train_bo_dpd,
)
from .polymodel import (
    BasisSpec,
    default_dpd_spec,
    load_pa_model,
    synthesize_pa_bank,
)
from .postweight import (
    FF,
    LC,
    PwLayout,
    assemble_radiation_operator,
    build_layout,
    simulate_dpd_chain,
)
from .pwopt import OptResult, QuadraticProblem, assemble_problem, solve_kkt
from .signalgen import ComplexBlock, SignalConfig, generate_multicarrier

SCENARIO_VERSION = 1

#: Stride between per-subarray signal seeds derived from the base seed.
_SIGNAL_SEED_STRIDE = 7919


class ScenarioError(ValueError):
    """Scenario validation failure; the message names the offending field."""

    def __init__(self, path: str, problem: str):
        super().__init__(f"scenario field '{path}': {problem}")
        self.field = path


def _require(doc: dict, path: str, key: str, types, default=_sentinel_missing := object()):
    if key not in doc:
        if default is not _sentinel_missing:
            return default
        raise ScenarioError(f"{path}.{key}" if path else key, "missing required field")
    value = doc[key]
    if types is not None and not isinstance(value, types):
        raise ScenarioError(
            f"{path}.{key}" if path else key,
            f"expected {getattr(types, '__name__', types)}, got {type(value).__name__}",
        )
    return value


def _reject_unknown(doc: dict, path: str, known) -> None:
    for key in doc:
        if key not in known:
            raise ScenarioError(f"{path}.{key}" if path else key, "unknown field")


@dataclass(frozen=True)
class LayoutConfig:
    scheme: str
    r: Fraction = None
    nu: int = None


@dataclass(frozen=True)
class Scenario:
    """Validated scenario; see ``load_scenario`` for the file format."""

    signal: SignalConfig
    drive_backoff_db: float
    geometry: ArrayGeometry
    adjacent_db: float
    phase_rule: str
    pa_files: tuple
    dpd_spec: BasisSpec
    phi0: float
    sweep_range: tuple
    sweep_points: int
    layouts: tuple
    train: TrainOptions
    acpr_guard: float
    seeds: dict

    @property
    def drive_amplitude(self) -> float:
        return 10.0 ** (-self.drive_backoff_db / 20.0)

    def layout_config(self, scheme: str) -> LayoutConfig:
        for cfg in self.layouts:
            if cfg.scheme == scheme:
                return cfg
        raise ScenarioError("layouts", f"scenario defines no {scheme!r} layout")

    def build_layout(self, scheme: str) -> PwLayout:
        cfg = self.layout_config(scheme)
        S, Q = self.geometry.S, self.dpd_spec.n_nonlinear
        if cfg.scheme == FF:
            return build_layout(FF, S, Q)
        return build_layout(LC, S, Q, cfg.r, cfg.nu)

    def sweep_angles(self) -> np.ndarray:
        return np.linspace(self.sweep_range[0], self.sweep_range[1], self.sweep_points)


def _parse_signal(doc, path="signal") -> SignalConfig:
    _reject_unknown(doc, path, {"n_subcarriers", "oversampling", "n_symbols",
                                "constellation", "active_mask", "normalize"})
    try:
        return SignalConfig(
            n_subcarriers=_require(doc, path, "n_subcarriers", int),
            oversampling=_require(doc, path, "oversampling", int, 4),
            n_symbols=_require(doc, path, "n_symbols", int, 16),
            constellation=_require(doc, path, "constellation", str, "qpsk"),
            active_mask=tuple(doc["active_mask"]) if doc.get("active_mask") is not None else None,
            seed=0,
            normalize=_require(doc, path, "normalize", bool, True),
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(path, str(exc)) from exc


def _parse_layouts(items, path="layouts"):
    if not isinstance(items, list) or not items:
        raise ScenarioError(path, "must be a non-empty list")
    out = []
    for i, doc in enumerate(items):
        sub = f"{path}[{i}]"
        if not isinstance(doc, dict):
            raise ScenarioError(sub, "must be an object")
        _reject_unknown(doc, sub, {"scheme", "r", "nu"})
        scheme = _require(doc, sub, "scheme", str).lower()
        if scheme == FF:
            out.append(LayoutConfig(scheme=FF))
        elif scheme == LC:
            try:
                r = Fraction(_require(doc, sub, "r", str))
            except (ValueError, ZeroDivisionError) as exc:
                raise ScenarioError(f"{sub}.r", f"not a fraction: {exc}") from exc
            nu = _require(doc, sub, "nu", int)
            if not (0 < r <= 1) or nu < 0:
                raise ScenarioError(sub, "need 0 < r <= 1 and nu >= 0")
            out.append(LayoutConfig(scheme=LC, r=r, nu=nu))
        else:
            raise ScenarioError(f"{sub}.scheme", f"unknown scheme {scheme!r}")
    return tuple(out)


def parse_scenario(doc: dict, base_dir: Path = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("", "scenario must be a JSON object")
    _reject_unknown(doc, "", {"version", "signal", "drive_backoff_db", "array",
                              "dpd_spec", "phi0", "sweep", "layouts", "train",
                              "acpr", "seeds"})
    version = _require(doc, "", "version", int)
    if version != SCENARIO_VERSION:
        raise ScenarioError("version", f"unsupported major version {version}")

    signal = _parse_signal(_require(doc, "", "signal", dict))

    arr = _require(doc, "", "array", dict)
    _reject_unknown(arr, "array", {"K", "S", "spacing", "adjacent_db", "phase_rule", "pa_files"})
    try:
        geometry = ArrayGeometry(
            K=_require(arr, "array", "K", int),
            S=_require(arr, "array", "S", int),
            spacing=float(_require(arr, "array", "spacing", (int, float), 0.5)),
        )
    except ValueError as exc:
        raise ScenarioError("array", str(exc)) from exc
    adjacent_db = _require(arr, "array", "adjacent_db", (int, float, type(None)))
    if adjacent_db is not None and not adjacent_db < 0:
        raise ScenarioError("array.adjacent_db", "must be negative (or null to disable)")
    phase_rule = _require(arr, "array", "phase_rule", str, "alternating")
    pa_files = arr.get("pa_files")
    if pa_files is not None:
        if not isinstance(pa_files, list) or len(pa_files) != geometry.n_pas:
            raise ScenarioError("array.pa_files", f"need {geometry.n_pas} model files")
        base = base_dir or Path.cwd()
        pa_files = tuple(str((base / p)) for p in pa_files)
        for p in pa_files:
            if not Path(p).exists():
                raise ScenarioError("array.pa_files", f"missing file {p}")

    spec_doc = doc.get("dpd_spec", "default")
    if spec_doc == "default":
        dpd_spec = default_dpd_spec()
    elif isinstance(spec_doc, dict):
        _reject_unknown(spec_doc, "dpd_spec", {"order_P", "terms"})
        try:
            dpd_spec = BasisSpec(
                tuple((int(p), int(v)) for p, v in _require(spec_doc, "dpd_spec", "terms", list)),
                order_p=_require(spec_doc, "dpd_spec", "order_P", int),
            )
        except ValueError as exc:
            raise ScenarioError("dpd_spec", str(exc)) from exc
    else:
        raise ScenarioError("dpd_spec", "must be 'default' or an object")

    phi0 = float(_require(doc, "", "phi0", (int, float), 0.0))
    if abs(phi0) > math.pi / 2:
        raise ScenarioError("phi0", "must lie in [-pi/2, pi/2]")

    sweep = _require(doc, "", "sweep", dict)
    _reject_unknown(sweep, "sweep", {"range", "points"})
    rng = _require(sweep, "sweep", "range", list)
    if len(rng) != 2 or not all(isinstance(v, (int, float)) for v in rng) or rng[0] >= rng[1]:
        raise ScenarioError("sweep.range", "must be [lo, hi] with lo < hi")
    points = _require(sweep, "sweep", "points", int)
    if points < 2:
        raise ScenarioError("sweep.points", "must be >= 2")

    train_doc = doc.get("train", {})
    _reject_unknown(train_doc, "train", {"tol", "max_iter"})
    tol = float(_require(train_doc, "train", "tol", (int, float), 1e-6))
    max_iter = _require(train_doc, "train", "max_iter", int, 50)
    if tol <= 0 or max_iter < 0:
        raise ScenarioError("train", "tol must be positive and max_iter >= 0")

    acpr_doc = doc.get("acpr", {})
    _reject_unknown(acpr_doc, "acpr", {"guard"})
    guard = float(_require(acpr_doc, "acpr", "guard", (int, float), 0.0))
    if guard < 0:
        raise ScenarioError("acpr.guard", "must be nonnegative")

    seeds = _require(doc, "", "seeds", dict)
    _reject_unknown(seeds, "seeds", {"signal", "pa_bank", "xtalk"})
    for name in ("signal", "pa_bank"):
        _require(seeds, "seeds", name, int)

    backoff = float(_require(doc, "", "drive_backoff_db", (int, float), 0.0))
    if backoff < 0:
        raise ScenarioError("drive_backoff_db", "must be nonnegative")

    return Scenario(
        signal=signal,
        drive_backoff_db=backoff,
        geometry=geometry,
        adjacent_db=None if adjacent_db is None else float(adjacent_db),
        phase_rule=phase_rule,
        pa_files=pa_files,
        dpd_spec=dpd_spec,
        phi0=phi0,
        sweep_range=(float(rng[0]), float(rng[1])),
        sweep_points=points,
        layouts=_parse_layouts(doc["layouts"]) if "layouts" in doc else tuple(),
        train=TrainOptions(tol=tol, max_iter=max_iter),
        acpr_guard=guard,
        seeds=dict(seeds),
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioError("", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"{path} is not valid JSON: {exc}") from exc
    return parse_scenario(doc, base_dir=path.parent)


def build_messages(sc: Scenario) -> list:
    """Per-subarray message blocks, scaled by the drive back-off."""
    drive = sc.drive_amplitude
    out = []
    for k in range(sc.geometry.K):
        cfg = SignalConfig(
            n_subcarriers=sc.signal.n_subcarriers,
            oversampling=sc.signal.oversampling,
            n_symbols=sc.signal.n_symbols,
            constellation=sc.signal.constellation,
            active_mask=sc.signal.active_mask,
            seed=sc.seeds["signal"] + _SIGNAL_SEED_STRIDE * k,
            normalize=sc.signal.normalize,
        )
        block = generate_multicarrier(cfg)
        out.append(drive * block.samples)
    return out


def build_model(sc: Scenario) -> ArrayModel:
    if sc.pa_files is not None:
        pas = [load_pa_model(p) for p in sc.pa_files]
    else:
        pas = synthesize_pa_bank(sc.geometry.n_pas, seed=sc.seeds["pa_bank"])
    xtalk = build_crosstalk(
        sc.geometry,
        sc.adjacent_db,
        phase_rule=sc.phase_rule,
        seed=sc.seeds.get("xtalk"),
    )
    weights = BeamWeights.steered(sc.geometry, sc.phi0)
    return ArrayModel(geometry=sc.geometry, weights=weights, pas=tuple(pas), xtalk=xtalk)


def train_all(sc: Scenario, model: ArrayModel, s_all) -> list:
    """Estimate lambda and train the DPD for every subarray."""
    results = []
    for k in range(sc.geometry.K):
        lam = estimate_lambda(model, k, sc.phi0, s_all)
        results.append(
            train_bo_dpd(model, k, sc.phi0, s_all, sc.dpd_spec, lam, sc.train)
        )
    return results


def assemble_problems(
    sc: Scenario,
    model: ArrayModel,
    s_all,
    dpds,
    layout: PwLayout,
    stacked: bool = False,
):
    """Per-subarray quadratic problems over the scenario's sweep grid."""
    y_dpd = simulate_dpd_chain(model, dpds, s_all)
    problems = []
    for k in range(sc.geometry.K):
        ops = [
            assemble_radiation_operator(model, k, layout, dpds, s_all, ang, y_dpd=y_dpd)
            for ang in sc.sweep_angles()
        ]
        op0 = assemble_radiation_operator(
            model, k, layout, dpds, s_all, sc.phi0, y_dpd=y_dpd
        )
        problems.append(assemble_problem(ops, op0, stacked=stacked))
    return problems


def optimize_all(problems, ridge: float = 0.0) -> list:
    return [solve_kkt(p, ridge) for p in problems]
