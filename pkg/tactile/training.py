"""Adam training of the power estimator, checkpoints, and per-step power prediction."""

import json
import logging
import time
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from tqdm import tqdm

from tactile.config_schema import ModelConfig, TrainConfig
from tactile.dataset import NormStats, WindowedDataset, inverse_transform_power, window_batch
from tactile.exceptions import CheckpointVersionError, ContractViolation, DivergenceError
from tactile.power import PowerTrace
from tactile.skills import SkillProfile
from tactile.tcn import DECODER_PARAMS, TcnModel, mape_loss

CHECKPOINT_FORMAT_VERSION = 1
HISTORY_COLUMNS = ["epoch", "train_mape", "val_mape", "wall_s"]
_EVAL_BATCH = 1024


class Adam:
    """Adam with bias correction over a dict of named parameters."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    @classmethod
    def from_config(cls, config: TrainConfig) -> "Adam":
        return cls(config.learning_rate, config.beta1, config.beta2, config.adam_eps)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        for name, grad in grads.items():
            m = self.m.setdefault(name, np.zeros_like(grad))
            v = self.v.setdefault(name, np.zeros_like(grad))
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            params[name] -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def evaluate_mape(model: TcnModel, dataset: WindowedDataset, pairs: np.ndarray) -> float:
    """Mean MAPE in percent over the given windows, in inference mode."""
    if pairs.shape[0] == 0:
        return float("nan")
    total = 0.0
    for start in range(0, pairs.shape[0], _EVAL_BATCH):
        x, f, y = dataset.batch(pairs[start : start + _EVAL_BATCH], model.receptive_field)
        total += float(mape_loss(model.forward(x, f), y).sum())
    return 100.0 * total / pairs.shape[0]


def train(
    dataset: WindowedDataset,
    model_config: ModelConfig,
    config: TrainConfig,
    model: TcnModel | None = None,
) -> tuple[TcnModel, pd.DataFrame]:
    """Trains with Adam on mini-batches of training windows and records per-epoch train/val MAPE.

    Windows are cropped to the receptive field, which leaves the last-step output unchanged.
    Raises DivergenceError (carrying the history) when validation MAPE exceeds the
    configured factor of its initial value.
    """
    train_pairs = dataset.windows("train")
    if train_pairs.shape[0] == 0:
        raise ContractViolation("training split is empty")
    val_pairs = dataset.windows("val", stride=config.eval_stride)
    train_eval_pairs = dataset.windows("train", stride=config.eval_stride)

    model = model.copy() if model is not None else TcnModel.initialize(model_config, config.seed)
    decoder_only = config.trainable == "decoder"
    optimizer = Adam.from_config(config)
    rng = np.random.default_rng(config.seed)
    length = model.receptive_field

    def record(epoch: int, started: float) -> dict[str, float]:
        train_mape = evaluate_mape(model, dataset, train_eval_pairs)
        val_mape = evaluate_mape(model, dataset, val_pairs) if val_pairs.shape[0] else train_mape
        return {"epoch": epoch, "train_mape": train_mape, "val_mape": val_mape, "wall_s": time.time() - started}

    started = time.time()
    rows = [record(0, started)]
    reference = max(rows[0]["val_mape"], config.divergence_floor)
    logging.info(f"Initial MAPE: train {rows[0]['train_mape']:.3f}%, val {rows[0]['val_mape']:.3f}%")

    per_epoch = train_pairs.shape[0] if config.windows_per_epoch is None else config.windows_per_epoch
    for epoch in range(1, config.epochs + 1):
        if per_epoch >= train_pairs.shape[0]:
            order = rng.permutation(train_pairs.shape[0])
        else:
            order = rng.choice(train_pairs.shape[0], size=per_epoch, replace=False)
        for start in tqdm(range(0, order.shape[0], config.batch_size), desc=f"Epoch {epoch}", leave=False):
            x, f, y = dataset.batch(train_pairs[order[start : start + config.batch_size]], length)
            _, grads = model.loss_and_gradients(x, f, y, rng=rng, train=True, decoder_only=decoder_only)
            if decoder_only:
                grads = {name: grads[name] for name in DECODER_PARAMS}
            optimizer.step(model.params, grads)

        rows.append(record(epoch, started))
        logging.info(f"Epoch {epoch}: train {rows[-1]['train_mape']:.3f}%, val {rows[-1]['val_mape']:.3f}%")
        if not np.isfinite(rows[-1]["val_mape"]) or rows[-1]["val_mape"] > config.divergence_factor * reference:
            history = pd.DataFrame(rows, columns=HISTORY_COLUMNS)
            raise DivergenceError(
                f"validation MAPE {rows[-1]['val_mape']:.3f}% exceeds {config.divergence_factor}x "
                f"the initial {reference:.3f}% at epoch {epoch}",
                history=history,
            )

    return model, pd.DataFrame(rows, columns=HISTORY_COLUMNS)


def predict_power(
    model: TcnModel, skill: SkillProfile, norm_stats: NormStats, batch_size: int = _EVAL_BATCH
) -> PowerTrace:
    """Per-step power from stride-1 causal windows, inverse-transformed and floored at zero."""
    if len(skill) == 0:
        return PowerTrace.empty()
    window = model.config.window
    predictions = np.empty(len(skill))
    for start in range(0, len(skill), batch_size):
        ends = np.arange(start, min(start + batch_size, len(skill)))
        x, f = window_batch(skill, ends, norm_stats, window, model.receptive_field)
        predictions[ends] = model.forward(x, f)
    power = np.maximum(inverse_transform_power(norm_stats.denormalize_label(predictions)), 0.0)
    return PowerTrace(skill.t.copy(), power)


def save_checkpoint(
    model: TcnModel, norm_stats: NormStats, path: Path, provenance: dict[str, Any] | None = None
) -> None:
    """Writes one float64 array per named parameter plus a JSON metadata entry into an .npz container."""
    metadata = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "architecture": model.architecture(),
        "norm_stats": norm_stats.to_dict(),
        "parameters": {name: list(value.shape) for name, value in sorted(model.params.items())},
        **(provenance or {}),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{name}": np.ascontiguousarray(value, dtype=np.float64) for name, value in model.params.items()}
    with path.open("wb") as f:
        np.savez(f, metadata=np.array(json.dumps(metadata, sort_keys=True)), **arrays)
    logging.info(f"Saved checkpoint with {model.n_parameters()} parameters to {path}")


def load_checkpoint(path: Path) -> tuple[TcnModel, NormStats, dict[str, Any]]:
    """Reads a checkpoint written by save_checkpoint, refusing other format versions."""
    with np.load(path, allow_pickle=False) as archive:
        metadata = json.loads(str(archive["metadata"]))
        version = metadata.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointVersionError(
                f"{path} has checkpoint format {version}, expected {CHECKPOINT_FORMAT_VERSION}"
            )
        params = {key.removeprefix("param/"): archive[key].copy() for key in archive.files if key.startswith("param/")}

    architecture = dict(metadata["architecture"])
    in_channels = architecture.pop("in_channels")
    invariant_size = architecture.pop("invariant_size")
    expected = {name: tuple(shape) for name, shape in metadata["parameters"].items()}
    actual = {name: value.shape for name, value in params.items()}
    if expected != actual:
        raise CheckpointVersionError(f"{path} parameters do not match its recorded layout")
    model = TcnModel(ModelConfig(**architecture), params, in_channels, invariant_size)
    return model, NormStats.from_dict(metadata["norm_stats"]), metadata
