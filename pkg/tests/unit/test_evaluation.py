import math

import numpy as np
import pytest

from tactile.config_schema import (
    ExperimentConfig,
    HeatmapConfig,
    ModelConfig,
    Pattern,
    SkillGenConfig,
    TankMode,
    TransferConfig,
)
from tactile.dataset import NormStats
from tactile.exceptions import ContractViolation, DomainError
from tactile.evaluation import (
    HeatMapGrid,
    MetricsReport,
    build_heatmap,
    compute_parallel,
    expert_baseline,
    metrics,
    percentage_error,
    run_safety_experiment,
    run_tank_comparison,
    run_transfer_experiment,
    safety_skill,
)
from tactile.power import PowerTrace
from tactile.simulation import run_skill
from tactile.skills import SkillProfile, generate_pattern
from tactile.surface import SurfaceModel
from tactile.tcn import TcnModel

F_D = np.array([0.0, 0.0, -5.0, 0.0, 0.0, 0.0])
CONFIG = ExperimentConfig(scheduler="synchronous")
PLANAR = SurfaceModel(CONFIG.surface("planar"), name="planar")
PLANAR_GAP = SurfaceModel(CONFIG.surface("planar_gap"), name="planar_gap")


def test_metrics_on_two_steps() -> None:
    t = np.array([0.0, 0.001])
    report = metrics(PowerTrace(t, np.array([1.1, 1.8])), PowerTrace(t, np.array([1.0, 2.0])))
    assert report.mape == pytest.approx(10.0)
    assert report.mse == pytest.approx(0.025)
    assert report.mape_sum == pytest.approx(100.0 * 0.05 / 1.5)


def test_perfect_prediction() -> None:
    truth = PowerTrace(np.arange(50) * 1e-3, np.linspace(0.5, 2.0, 50))
    report = metrics(truth, truth)
    assert report.mse == 0.0
    assert report.mape == 0.0
    assert report.mean("pearson_r") == pytest.approx(1.0)


def test_rest_phases_do_not_dominate_normalized_mape() -> None:
    rng = np.random.default_rng(0)
    power = np.concatenate([rng.uniform(0.5, 3.0, 900), np.zeros(60), rng.uniform(-0.02, 0.0, 40)])
    t = np.arange(power.shape[0]) * 1e-3
    truth = PowerTrace(t, power)
    pred = PowerTrace(t, 1.05 * np.maximum(power, 0.0) + 0.01)
    stats = NormStats(np.zeros(12), np.ones(12), np.zeros(6), np.ones(6), float(np.log(power.clip(0) + 3).mean()))
    raw = metrics(pred, truth)
    normalized = metrics(pred, truth, norm_stats=stats)
    assert raw.mape > 20.0
    assert normalized.mape < 2.0
    assert normalized.mape_sum == raw.mape_sum
    assert metrics(truth, truth, norm_stats=stats).mse == 0.0


def test_metrics_need_aligned_traces() -> None:
    truth = PowerTrace(np.arange(5) * 1e-3, np.ones(5))
    with pytest.raises(ContractViolation):
        metrics(PowerTrace(truth.t[:4], truth.power[:4]), truth)
    with pytest.raises(ContractViolation):
        metrics(PowerTrace(truth.t + 1.0, truth.power), truth)


def test_report_summary_drops_non_finite_values() -> None:
    t = np.arange(3) * 1e-3
    constant = metrics(PowerTrace(t, np.ones(3)), PowerTrace(t, np.full(3, 2.0)), "constant")
    varying = metrics(PowerTrace(t, np.array([1.0, 2.0, 3.0])), PowerTrace(t, np.array([1.0, 2.0, 4.0])), "varying")
    combined = MetricsReport.combine([constant, varying])
    assert len(combined.per_trajectory) == 2
    assert math.isnan(constant.mean("pearson_r"))
    summary = combined.to_dict()
    assert summary["trajectories"][0]["pearson_r"] is None
    assert summary["summary"]["pearson_r"]["mean"] == pytest.approx(varying.mean("pearson_r"))
    assert summary["summary"]["mape"]["mean"] == pytest.approx((constant.mape + varying.mape) / 2)


def test_percentage_error_of_zero_truth() -> None:
    assert percentage_error(0.0, 0.0) == 0.0
    assert percentage_error(1.0, 0.0) == math.inf
    assert percentage_error(1.1, 1.0) == pytest.approx(10.0)


def test_expert_baseline_on_planar_line() -> None:
    skill = generate_pattern(PLANAR, Pattern.LINE, (-0.25, 0.0), 0.05, 0.5, F_D)
    assert expert_baseline(skill, 0.4) == pytest.approx(1.0, rel=1e-6)
    assert expert_baseline(skill, 0.8) == pytest.approx(2.0 * expert_baseline(skill, 0.4))


def test_expert_baseline_without_force() -> None:
    skill = generate_pattern(PLANAR, Pattern.LINE, (-0.25, 0.0), 0.05, 0.1, np.zeros(6))
    assert expert_baseline(skill, 0.4) == 0.0
    assert expert_baseline(SkillProfile.hold(np.zeros(6), F_D, 1.0), 0.4) == 0.0


def test_heat_map_interpolation() -> None:
    grid = HeatMapGrid(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert grid.query(1.0, 1.0) == 4.0
    assert grid.query(0.0, 1.0) == 2.0
    assert grid.query(0.5, 0.5) == pytest.approx(2.5)
    assert grid.query(0.5, 0.0) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        grid.query(1.5, 0.0)
    assert grid.to_rows()[1] == (0.0, 1.0, 2.0)


def test_heat_map_invalid_nodes() -> None:
    grid = HeatMapGrid(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([[1.0, np.nan], [3.0, 4.0]]))
    assert grid.query(1.0, 0.0) == 3.0
    assert math.isnan(grid.query(0.5, 0.5))
    assert grid.valid.sum() == 3
    with pytest.raises(ContractViolation):
        HeatMapGrid(np.array([0.0, 1.0]), np.array([0.0]), np.zeros((2, 2)))


def test_build_heatmap_marks_paths_leaving_workspace() -> None:
    model = TcnModel.initialize(ModelConfig(window=8, kernel_size=2, filters=2, dilations=[1, 2]), 0)
    stats = NormStats(np.zeros(12), np.full(12, 0.01), F_D.copy(), np.ones(6), 1.0)
    config = HeatmapConfig(surface="planar", length=0.1, region=[0.4, 0.7, 0.0, 0.1], nodes_u=2, nodes_v=2)
    grid = build_heatmap(model, stats, PLANAR, config, F_D, 0.1, scheduler="synchronous")
    assert grid.energy.shape == (2, 2)
    assert np.all(np.isfinite(grid.energy[0]))
    assert np.all(np.isnan(grid.energy[1]))
    assert np.all(grid.energy[0] >= 0.1)


def test_heatmap_on_planar_surface_is_uniform() -> None:
    model = TcnModel.initialize(ModelConfig(window=8, kernel_size=2, filters=2, dilations=[1, 2]), 0)
    stats = NormStats(np.zeros(12), np.full(12, 0.01), F_D.copy(), np.ones(6), 1.0)
    config = HeatmapConfig(surface="planar", length=0.05, region=[-0.2, 0.2, -0.2, 0.2], nodes_u=3, nodes_v=3)
    grid = build_heatmap(model, stats, PLANAR, config, F_D, 0.1, scheduler="synchronous")
    assert np.all(grid.valid)
    assert np.ptp(grid.energy) < 1e-4


def test_compute_parallel_keeps_order() -> None:
    tasks = [lambda i=i: i * i for i in range(5)]
    assert compute_parallel(tasks, "synchronous") == [0, 1, 4, 9, 16]
    assert compute_parallel([], "synchronous") == []


def test_scheduled_tank_limits_fall_through_gap() -> None:
    skill = safety_skill(CONFIG, PLANAR_GAP)
    # Plan from the same skill over an intact board, so the fall is not budgeted
    plan = run_skill(CONFIG, PLANAR, skill, seed=1).power_trace()
    reports = run_safety_experiment(
        CONFIG, PLANAR_GAP, skill, plan, modes=[TankMode.SCALAR_HIGH, TankMode.SCHEDULED], seed=1
    )
    high, scheduled = reports
    assert high.mode == "scalar_high"
    assert high.lost_contact
    assert scheduled.lost_contact
    assert scheduled.stop_time is not None
    assert scheduled.falling_distance < high.falling_distance
    assert high.hit_floor
    assert not scheduled.hit_floor
    assert high.peak_contact_force > scheduled.peak_contact_force


def test_safety_experiment_preconditions() -> None:
    skill = safety_skill(CONFIG, PLANAR_GAP)
    with pytest.raises(ContractViolation):
        run_safety_experiment(CONFIG, PLANAR_GAP, skill, None, modes=[TankMode.SCHEDULED])
    flat = generate_pattern(PLANAR, Pattern.LINE, (-0.2, 0.0), 0.05, 0.1, F_D)
    with pytest.raises(ContractViolation):
        run_safety_experiment(CONFIG, PLANAR_GAP, flat, None, modes=[TankMode.SCALAR_HIGH])


def test_tank_comparison_without_plan() -> None:
    skill = generate_pattern(PLANAR, Pattern.LINE, (-0.2, 0.0), 0.05, 0.1, F_D)
    low, high = run_tank_comparison(CONFIG, PLANAR, skill, None, seed=2)
    assert (low.mode, high.mode) == ("scalar_low", "scalar_high")
    assert low.valve_open_fraction == 0.0
    assert low.path_fraction_before_close == 0.0
    assert high.valve_open_fraction == 1.0
    assert high.path_fraction_before_close == 1.0
    assert high.force_rms_error < low.force_rms_error
    assert high.consumed_energy > 0.0


def test_transfer_reports_every_surface() -> None:
    config = ExperimentConfig(
        scheduler="synchronous",
        skills=SkillGenConfig(duration_range=[0.2, 0.3]),
        transfer=TransferConfig(skills_per_surface=2),
    )
    model = TcnModel.initialize(ModelConfig(window=8, kernel_size=2, filters=2, dilations=[1, 2]), 0)
    stats = NormStats(np.zeros(12), np.ones(12), F_D.copy(), np.ones(6), 1.0)
    inclined = SurfaceModel(config.surface("inclined"), name="inclined")
    reports = run_transfer_experiment(model, stats, config, [PLANAR, inclined], seed=3)
    assert sorted(reports) == ["inclined", "planar"]
    assert [m.name for m in reports["planar"].per_trajectory] == ["planar/000", "planar/001"]
    assert reports["inclined"].mape >= 0.0
    again = run_transfer_experiment(model, stats, config, [PLANAR, inclined], seed=3)
    assert again["inclined"].to_dict() == reports["inclined"].to_dict()
