"""Metrics, the friction-work baseline, energy heat maps and the experiment protocols."""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Any, TypeVar

import dask
import numpy as np
from dask.diagnostics import ProgressBar  # type: ignore[attr-defined]
from scipy.integrate import trapezoid
from scipy.spatial.transform import Rotation
from scipy.stats import pearsonr

from tactile.config_schema import ExperimentConfig, HeatmapConfig, Pattern, PatternShapeConfig, TankMode
from tactile.dataset import NormStats, transform_power
from tactile.exceptions import ContractViolation, DomainError, SurfaceDomainError
from tactile.power import PowerTrace, integrate_energy
from tactile.seeding import derive_seed, rng_for
from tactile.simulation import SimulationTrace, gains_for, run_skill
from tactile.skills import SkillProfile, generate_pattern, sample_skill
from tactile.surface import SurfaceModel
from tactile.tcn import MAPE_FLOOR, TcnModel
from tactile.training import predict_power

T = TypeVar("T")


def compute_parallel(tasks: Sequence[Callable[[], T]], scheduler: str = "threads") -> list[T]:
    """Evaluates independent zero-argument tasks with dask, showing a progress bar."""
    if not tasks:
        return []
    delayed = [dask.delayed(task)() for task in tasks]
    with ProgressBar():  # type: ignore[no-untyped-call]
        results = dask.compute(*delayed, scheduler=scheduler)
    return list(results)


def _json_number(value: float) -> float | None:
    return float(value) if math.isfinite(value) else None


@dataclass(frozen=True)
class TraceMetrics:
    name: str
    mse: float
    mape: float
    mape_sum: float
    pearson_r: float
    predicted_energy: float
    true_energy: float


@dataclass(frozen=True)
class MetricsReport:
    """Per-trajectory metrics with mean and population std across trajectories."""

    per_trajectory: tuple[TraceMetrics, ...] = field(default_factory=tuple)

    def _values(self, metric: str) -> np.ndarray:
        return np.array([getattr(m, metric) for m in self.per_trajectory], dtype=float)

    def mean(self, metric: str) -> float:
        values = self._values(metric)
        values = values[np.isfinite(values)]
        return float(values.mean()) if values.size else float("nan")

    def std(self, metric: str) -> float:
        values = self._values(metric)
        values = values[np.isfinite(values)]
        return float(values.std()) if values.size else float("nan")

    @property
    def mse(self) -> float:
        return self.mean("mse")

    @property
    def mape(self) -> float:
        return self.mean("mape")

    @property
    def mape_sum(self) -> float:
        return self.mean("mape_sum")

    @classmethod
    def combine(cls, reports: Sequence["MetricsReport"]) -> "MetricsReport":
        return cls(tuple(m for report in reports for m in report.per_trajectory))

    def to_dict(self) -> dict[str, Any]:
        metrics = ("mse", "mape", "mape_sum", "pearson_r")
        return {
            "summary": {
                metric: {"mean": _json_number(self.mean(metric)), "std": _json_number(self.std(metric))}
                for metric in metrics
            },
            "trajectories": [
                {k: (_json_number(v) if isinstance(v, float) else v) for k, v in asdict(m).items()}
                for m in self.per_trajectory
            ],
        }


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape[0] < 2 or np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        return float("nan")
    return float(pearsonr(a, b)[0])


def percentage_error(estimate: float, truth: float) -> float:
    if truth == 0.0:
        return 0.0 if estimate == 0.0 else float("inf")
    return 100.0 * abs(estimate - truth) / abs(truth)


def metrics(
    pred: PowerTrace, truth: PowerTrace, name: str = "trajectory", norm_stats: NormStats | None = None
) -> MetricsReport:
    """MSE and MAPE over per-step power and the percentage error of the integrated energy.

    With `norm_stats`, MSE and MAPE compare the normalized log labels the estimator is trained on,
    so rest phases with near-zero power do not dominate. MAPE_sum always uses the raw energy in J.
    """
    if len(pred) != len(truth):
        raise ContractViolation(f"prediction has {len(pred)} steps, ground truth {len(truth)}")
    if len(truth) and not np.allclose(pred.t, truth.t, rtol=0.0, atol=1e-9):
        raise ContractViolation("prediction and ground truth timestamps are not aligned")
    if len(truth) == 0:
        return MetricsReport((TraceMetrics(name, 0.0, 0.0, 0.0, float("nan"), 0.0, 0.0),))
    if norm_stats is None:
        pred_values, truth_values = pred.power, truth.power
    else:
        pred_values = norm_stats.normalize_label(transform_power(pred.power)[0])
        truth_values = norm_stats.normalize_label(transform_power(truth.power)[0])
    error = pred_values - truth_values
    predicted_energy, true_energy = pred.total_energy(), truth.total_energy()
    entry = TraceMetrics(
        name=name,
        mse=float(np.mean(error**2)),
        mape=100.0 * float(np.mean(np.abs(error) / np.maximum(np.abs(truth_values), MAPE_FLOOR))),
        mape_sum=percentage_error(predicted_energy, true_energy),
        pearson_r=_pearson(pred.power, truth.power),
        predicted_energy=predicted_energy,
        true_energy=true_energy,
    )
    return MetricsReport((entry,))


def expert_baseline(skill: SkillProfile, mu: float) -> float:
    """Friction work of the planned motion: integral of mu |f_n| |v_t| with f_n the normal part of f_d."""
    if len(skill) < 2:
        return 0.0
    rotations = Rotation.from_rotvec(skill.x_d[:, 3:6])
    normals = rotations.apply(np.array([0.0, 0.0, 1.0]))
    force = rotations.apply(skill.f_d[:3])
    normal_force = np.abs(np.einsum("ij,ij->i", force, normals))
    velocity = skill.x_dot_d[:, :3]
    tangential = velocity - np.einsum("ij,ij->i", velocity, normals)[:, None] * normals
    integrand = mu * normal_force * np.linalg.norm(tangential, axis=1)
    return float(trapezoid(integrand, skill.t))


@dataclass(frozen=True)
class HeatMapGrid:
    """Estimated task energy per skill start node; NaN marks nodes whose path left the workspace."""

    u: np.ndarray
    v: np.ndarray
    energy: np.ndarray

    def __post_init__(self) -> None:
        if self.energy.shape != (self.u.shape[0], self.v.shape[0]):
            raise ContractViolation(f"energy grid {self.energy.shape} does not match {self.u.shape} x {self.v.shape}")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.energy)

    @staticmethod
    def _locate(nodes: np.ndarray, value: float) -> tuple[int, float]:
        if not nodes[0] <= value <= nodes[-1]:
            raise DomainError(f"{value} lies outside the heat map [{nodes[0]}, {nodes[-1]}]")
        i = int(np.searchsorted(nodes, value, side="right")) - 1
        if i >= nodes.shape[0] - 1:
            return nodes.shape[0] - 1, 0.0
        return i, float((value - nodes[i]) / (nodes[i + 1] - nodes[i]))

    def query(self, u: float, v: float) -> float:
        """Bilinear estimate; exact at nodes, NaN when a contributing node is invalid."""
        i, fu = self._locate(self.u, u)
        j, fv = self._locate(self.v, v)
        total = 0.0
        for di, wu in ((0, 1.0 - fu), (1, fu)):
            for dj, wv in ((0, 1.0 - fv), (1, fv)):
                weight = wu * wv
                if weight == 0.0:
                    continue
                value = self.energy[i + di, j + dj]
                if not math.isfinite(value):
                    return float("nan")
                total += weight * value
        return total

    def to_rows(self) -> list[tuple[float, float, float]]:
        return [
            (float(self.u[i]), float(self.v[j]), float(self.energy[i, j]))
            for i in range(self.u.shape[0])
            for j in range(self.v.shape[0])
        ]


def _node_energy(
    model: TcnModel,
    norm_stats: NormStats,
    surface: SurfaceModel,
    config: HeatmapConfig,
    start: tuple[float, float],
    f_d: np.ndarray,
    epsilon: float,
    shape: PatternShapeConfig,
    dt: float,
    seed: int,
) -> float:
    try:
        skill = generate_pattern(
            surface,
            config.pattern,
            start,
            config.speed,
            config.length,
            f_d,
            seed,
            heading=config.heading,
            dt=dt,
            shape=shape,
        )
    except SurfaceDomainError:
        return float("nan")
    if skill.truncated or len(skill) == 0:
        return float("nan")
    return float(integrate_energy(predict_power(model, skill, norm_stats), epsilon)[-1])


def build_heatmap(
    model: TcnModel,
    norm_stats: NormStats,
    surface: SurfaceModel,
    config: HeatmapConfig,
    f_d: np.ndarray,
    epsilon: float,
    *,
    shape: PatternShapeConfig | None = None,
    dt: float = 1e-3,
    seed: int = 0,
    scheduler: str = "threads",
) -> HeatMapGrid:
    """Predicts and integrates the template skill from every grid node."""
    u_min, u_max, v_min, v_max = config.region
    u = np.linspace(u_min, u_max, config.nodes_u)
    v = np.linspace(v_min, v_max, config.nodes_v)
    shape = shape or PatternShapeConfig()
    tasks = [
        partial(_node_energy, model, norm_stats, surface, config, (float(uu), float(vv)), f_d, epsilon, shape, dt, seed)
        for uu in u
        for vv in v
    ]
    energy = np.array(compute_parallel(tasks, scheduler), dtype=float).reshape(u.shape[0], v.shape[0])
    invalid = int(np.count_nonzero(~np.isfinite(energy)))
    if invalid:
        logging.warning(f"{invalid} heat map nodes have paths leaving the workspace and are excluded")
    return HeatMapGrid(u, v, energy)


@dataclass(frozen=True)
class SafetyReport:
    mode: str
    lost_contact: bool
    falling_distance: float
    peak_contact_force: float
    hit_floor: bool
    loss_time: float | None
    stop_time: float | None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def contact_loss_report(trace: SimulationTrace, surface: SurfaceModel, mode: TankMode) -> SafetyReport:
    """Fall (cm, along the normal) from the first unsupported step until valve closure or floor strike."""
    lost = np.flatnonzero(trace.over_gap & ~trace.in_contact)
    if lost.size == 0:
        return SafetyReport(mode.value, False, 0.0, 0.0, False, None, None)
    start = int(lost[0])
    ends = np.flatnonzero((trace.sigma[start:] == 0) | trace.on_floor[start:])
    end = start + int(ends[0]) if ends.size else len(trace) - 1
    normal = surface.normal_at(float(trace.x[start, 0]), float(trace.x[start, 1]))
    fall = float((trace.x[start, :3] - trace.x[end, :3]) @ normal)
    forces = np.linalg.norm(trace.f_ext[start:, :3], axis=1)
    return SafetyReport(
        mode=mode.value,
        lost_contact=True,
        falling_distance=100.0 * max(fall, 0.0),
        peak_contact_force=float(forces.max()),
        hit_floor=bool(np.any(trace.on_floor[start:])),
        loss_time=float(trace.t[start]),
        stop_time=float(trace.t[end]) if ends.size else None,
    )


def safety_skill(config: ExperimentConfig, surface: SurfaceModel) -> SkillProfile:
    """Straight line from the configured start across the gap edge."""
    safety = config.safety
    return generate_pattern(
        surface,
        Pattern.LINE,
        (safety.start_uv[0], safety.start_uv[1]),
        safety.speed,
        safety.length,
        np.array(config.skills.desired_force),
        heading=safety.heading,
        dt=config.dynamics.dt,
    )


def _safety_run(
    config: ExperimentConfig,
    surface: SurfaceModel,
    skill: SkillProfile,
    planned: PowerTrace | None,
    seed: int,
    mode: TankMode,
) -> SafetyReport:
    gains = gains_for(config.controller, config.safety.normal_stiffness, config.safety.normal_damping)
    trace = run_skill(
        config, surface, skill, mode, planned=planned, seed=seed, settle_time=config.safety.settle_time, gains=gains
    )
    report = contact_loss_report(trace, surface, mode)
    logging.info(
        f"Safety {mode.value}: fall {report.falling_distance:.2f} cm, "
        f"peak force {report.peak_contact_force:.2f} N, floor strike {report.hit_floor}"
    )
    return report


def run_safety_experiment(
    config: ExperimentConfig,
    surface: SurfaceModel,
    skill: SkillProfile,
    planned: PowerTrace | None,
    modes: Sequence[TankMode] | None = None,
    seed: int = 0,
) -> list[SafetyReport]:
    """Runs the contact-loss skill once per tank mode with the same sensor-noise seed."""
    if not any(surface.in_gap(float(u), float(v)) for u, v in skill.x_d[:, :2]):
        raise ContractViolation("the safety skill never crosses the gap region")
    modes = list(modes or config.safety.modes)
    if TankMode.SCHEDULED in modes and planned is None:
        raise ContractViolation("scheduled mode needs a planned power trace")
    tasks = [partial(_safety_run, config, surface, skill, planned, seed, mode) for mode in modes]
    return compute_parallel(tasks, config.scheduler)


def _transfer_run(
    model: TcnModel,
    norm_stats: NormStats,
    config: ExperimentConfig,
    surface: SurfaceModel,
    seed: int,
    index: int,
) -> MetricsReport:
    stage = f"transfer/{surface.name}"
    skill = sample_skill(surface, config.skills, rng_for(seed, stage, index), config.dynamics.dt)
    truth = run_skill(config, surface, skill, TankMode.SCALAR_HIGH, seed=derive_seed(seed, f"{stage}/noise", index))
    predicted = predict_power(model, skill, norm_stats)
    return metrics(predicted, truth.power_trace(), f"{surface.name}/{index:03d}", norm_stats)


def run_transfer_experiment(
    model: TcnModel,
    norm_stats: NormStats,
    config: ExperimentConfig,
    surfaces: Sequence[SurfaceModel],
    seed: int = 0,
) -> dict[str, MetricsReport]:
    """Zero-shot evaluation on fresh skills per target surface, with ground truth from the simulator."""
    count = config.transfer.skills_per_surface
    tasks = [
        partial(_transfer_run, model, norm_stats, config, surface, seed, index)
        for surface in surfaces
        for index in range(count)
    ]
    results = compute_parallel(tasks, config.scheduler)
    reports = {}
    for k, surface in enumerate(surfaces):
        report = MetricsReport.combine(results[k * count : (k + 1) * count])
        reports[surface.name] = report
        logging.info(f"Transfer to {surface.name}: MAPE {report.mape:.2f}%, MAPE_sum {report.mape_sum:.2f}%")
    return reports


@dataclass(frozen=True)
class ComparisonReport:
    mode: str
    force_rms_error: float
    valve_open_fraction: float
    path_fraction_before_close: float
    consumed_energy: float

    def to_dict(self) -> dict[str, Any]:
        return {k: (_json_number(v) if isinstance(v, float) else v) for k, v in asdict(self).items()}


def tank_comparison_report(
    trace: SimulationTrace, skill: SkillProfile, mode: TankMode, transient: float
) -> ComparisonReport:
    n = trace.skill_steps
    steady = np.flatnonzero(trace.t[:n] - trace.t[0] >= transient)
    error = trace.normal_force[steady] - abs(float(skill.f_d[2]))
    closed = np.flatnonzero(trace.sigma[:n] == 0)
    return ComparisonReport(
        mode=mode.value,
        force_rms_error=float(np.sqrt(np.mean(error**2))) if steady.size else float("nan"),
        valve_open_fraction=float(np.mean(trace.sigma[:n] == 1)),
        path_fraction_before_close=float(closed[0]) / n if closed.size else 1.0,
        consumed_energy=float(np.sum(trace.consumed[:n])) * trace.dt,
    )


def _comparison_run(
    config: ExperimentConfig,
    surface: SurfaceModel,
    skill: SkillProfile,
    planned: PowerTrace | None,
    seed: int,
    mode: TankMode,
) -> ComparisonReport:
    trace = run_skill(config, surface, skill, mode, planned=planned, seed=seed)
    return tank_comparison_report(trace, skill, mode, config.compare.transient)


def run_tank_comparison(
    config: ExperimentConfig,
    surface: SurfaceModel,
    skill: SkillProfile,
    planned: PowerTrace | None,
    seed: int = 0,
) -> list[ComparisonReport]:
    """Same skill with a low, a high and a scheduled tank: force tracking and how far the skill gets."""
    modes = [TankMode.SCALAR_LOW, TankMode.SCALAR_HIGH]
    if planned is not None:
        modes.append(TankMode.SCHEDULED)
    tasks = [partial(_comparison_run, config, surface, skill, planned, seed, mode) for mode in modes]
    return compute_parallel(tasks, config.scheduler)
