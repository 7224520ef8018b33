import json
from typing import Any

import numpy as np
import pandas as pd
import pytest

from tactile.config_schema import ModelConfig, Pattern, SurfaceConfig, TrainConfig
from tactile.dataset import NormStats, WindowedDataset, build_dataset
from tactile.exceptions import CheckpointVersionError, ContractViolation, DivergenceError
from tactile.power import PowerTrace
from tactile.skills import SkillProfile, generate_pattern
from tactile.surface import SurfaceModel
from tactile.tcn import TcnModel
from tactile.training import (
    HISTORY_COLUMNS,
    Adam,
    evaluate_mape,
    load_checkpoint,
    predict_power,
    save_checkpoint,
    train,
)

SMALL = ModelConfig(window=8, kernel_size=2, filters=4, dilations=[1, 2], dropout=0.05, decoder_hidden=8)


def _constant_dataset(n_trajectories: int = 3, steps: int = 60) -> WindowedDataset:
    pairs = []
    for seed in range(n_trajectories):
        rng = np.random.default_rng(seed)
        t = np.arange(steps) * 1e-3
        skill = SkillProfile(
            t=t,
            x_d=np.cumsum(rng.normal(0.0, 1e-3, (steps, 6)), axis=0),
            x_dot_d=rng.normal(0.0, 0.05, (steps, 6)),
            f_d=np.array([0.0, 0.0, -5.0, 0.0, 0.0, 0.0]),
        )
        pairs.append((skill, PowerTrace(t.copy(), np.full(steps, 2.0))))
    return build_dataset(pairs, window=SMALL.window, fractions=(1.0, 0.0, 0.0))


def _offset_model(bias: float) -> TcnModel:
    model = TcnModel.initialize(SMALL, 0)
    model.params["fc2.b"][0] = bias
    return model


def test_adam_first_step_moves_by_learning_rate() -> None:
    params = {"w": np.array([1.0, -1.0, 0.5])}
    optimizer = Adam(lr=0.1)
    optimizer.step(params, {"w": np.array([2.0, -3.0, 0.0])})
    np.testing.assert_allclose(params["w"], [0.9, -0.9, 0.5], atol=1e-6)
    assert optimizer.step_count == 1


def test_adam_from_config() -> None:
    optimizer = Adam.from_config(TrainConfig(learning_rate=0.01, beta1=0.8))
    assert optimizer.lr == 0.01
    assert optimizer.beta1 == 0.8


def test_constant_labels_are_learned() -> None:
    dataset = _constant_dataset()
    config = TrainConfig(learning_rate=1e-2, epochs=20, batch_size=16, windows_per_epoch=None, eval_stride=1)
    model, history = train(dataset, SMALL, config, model=_offset_model(0.5))
    assert list(history.columns) == HISTORY_COLUMNS
    assert len(history) == 21
    initial, final = history["val_mape"].iloc[0], history["val_mape"].iloc[-1]
    assert initial == pytest.approx(50.0, rel=0.2)
    assert final < 5.0
    assert final < initial / 5
    assert evaluate_mape(model, dataset, dataset.windows("train")) == pytest.approx(final)


def test_seeded_training_is_reproducible() -> None:
    dataset = _constant_dataset()
    config = TrainConfig(learning_rate=1e-3, epochs=2, batch_size=16, windows_per_epoch=64)
    first_model, first = train(dataset, SMALL, config)
    second_model, second = train(dataset, SMALL, config)
    columns = ["epoch", "train_mape", "val_mape"]
    pd.testing.assert_frame_equal(first[columns], second[columns])
    for name, value in first_model.params.items():
        np.testing.assert_array_equal(value, second_model.params[name])


def test_training_leaves_the_starting_model_untouched() -> None:
    dataset = _constant_dataset()
    start = _offset_model(0.5)
    train(dataset, SMALL, TrainConfig(epochs=1, batch_size=16, windows_per_epoch=32), model=start)
    assert start.params["fc2.b"][0] == 0.5


def test_decoder_fine_tuning_freezes_encoder() -> None:
    dataset = _constant_dataset()
    start = _offset_model(0.5)
    config = TrainConfig(learning_rate=1e-2, epochs=2, batch_size=16, windows_per_epoch=None, trainable="decoder")
    model, _ = train(dataset, SMALL, config, model=start)
    np.testing.assert_array_equal(model.params["block0.conv1.v"], start.params["block0.conv1.v"])
    assert model.params["fc2.b"][0] != 0.5


def test_divergence_keeps_history() -> None:
    dataset = _constant_dataset()
    config = TrainConfig(learning_rate=10.0, epochs=3, batch_size=16, windows_per_epoch=None, divergence_factor=2.0)
    with pytest.raises(DivergenceError) as excinfo:
        train(dataset, SMALL, config)
    history = excinfo.value.history
    assert isinstance(history, pd.DataFrame)
    assert list(history.columns) == HISTORY_COLUMNS
    assert len(history) >= 2


def test_empty_training_split() -> None:
    dataset = _constant_dataset()
    empty = WindowedDataset(dataset.skills, dataset.labels, dataset.norm_stats, dataset.window, {"train": []})
    with pytest.raises(ContractViolation):
        train(empty, SMALL, TrainConfig(epochs=1))
    assert np.isnan(evaluate_mape(_offset_model(1.0), dataset, np.zeros((0, 2), dtype=int)))


def test_checkpoint_round_trip(tmp_path: Any) -> None:
    dataset = _constant_dataset()
    model = _offset_model(0.7)
    path = tmp_path / "model" / "checkpoint.npz"
    save_checkpoint(model, dataset.norm_stats, path, {"config_hash": "abc"})
    loaded, stats, metadata = load_checkpoint(path)
    assert metadata["format_version"] == 1
    assert metadata["config_hash"] == "abc"
    assert loaded.config == model.config
    for name, value in model.params.items():
        np.testing.assert_array_equal(loaded.params[name], value)
    assert stats.label_scale == dataset.norm_stats.label_scale
    x, f, _ = dataset.batch(dataset.windows()[:5])
    np.testing.assert_array_equal(loaded.forward(x, f), model.forward(x, f))


def test_checkpoint_version_mismatch(tmp_path: Any) -> None:
    path = tmp_path / "old.npz"
    with path.open("wb") as f:
        np.savez(f, metadata=np.array(json.dumps({"format_version": 99})))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_predict_power_of_empty_skill() -> None:
    stats = NormStats(np.zeros(12), np.ones(12), np.zeros(6), np.ones(6), 1.0)
    empty = SkillProfile(np.zeros(0), np.zeros((0, 6)), np.zeros((0, 6)), np.zeros(6))
    assert len(predict_power(_offset_model(1.0), empty, stats)) == 0


def test_predictions_are_translation_invariant_on_a_plane() -> None:
    planar = SurfaceModel(SurfaceConfig(), name="planar")
    f_d = np.array([0.0, 0.0, -5.0, 0.0, 0.0, 0.0])
    first = generate_pattern(planar, Pattern.ZIGZAG, (0.0, 0.0), 0.05, 0.03, f_d)
    second = generate_pattern(planar, Pattern.ZIGZAG, (0.1, -0.05), 0.05, 0.03, f_d)
    stats = NormStats(np.zeros(12), np.full(12, 0.01), f_d.copy(), np.ones(6), 1.0)
    model = TcnModel.initialize(ModelConfig(), 3)
    a = predict_power(model, first, stats)
    b = predict_power(model, second, stats)
    assert len(a) == len(first)
    assert np.all(a.power >= 0.0)
    np.testing.assert_allclose(a.power, b.power, atol=1e-6)
