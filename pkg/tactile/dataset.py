"""Causal sliding windows over skills, with normalization fitted on the training trajectories."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from tactile.exceptions import AlignmentError, ContractViolation
from tactile.power import PowerTrace
from tactile.skills import SkillProfile

N_CHANNELS = 12
N_INVARIANT = 6
LABEL_OFFSET = 3.0
_STD_FLOOR = 1e-12

SPLITS = ("train", "val", "test")


def transform_power(power: np.ndarray) -> tuple[np.ndarray, int]:
    """log(max(p, 0) + 3); also returns how many samples were clamped at zero."""
    power = np.asarray(power, dtype=float)
    negative = int(np.count_nonzero(power < 0))
    return np.log(np.maximum(power, 0.0) + LABEL_OFFSET), negative


def inverse_transform_power(label: np.ndarray) -> np.ndarray:
    return np.exp(label) - LABEL_OFFSET


def _safe_std(values: np.ndarray) -> np.ndarray:
    std = np.asarray(values, dtype=float).copy()
    std[std < _STD_FLOOR] = 1.0
    return std


@dataclass(frozen=True)
class NormStats:
    """Per-channel z-score statistics and the label scale, all fitted on the training split."""

    channel_mean: np.ndarray
    channel_std: np.ndarray
    force_mean: np.ndarray
    force_std: np.ndarray
    label_scale: float

    def normalize_channels(self, values: np.ndarray) -> np.ndarray:
        return (values - self.channel_mean) / self.channel_std

    def normalize_force(self, f_d: np.ndarray) -> np.ndarray:
        return (f_d - self.force_mean) / self.force_std

    def normalize_label(self, label: np.ndarray) -> np.ndarray:
        return label / self.label_scale

    def denormalize_label(self, value: np.ndarray) -> np.ndarray:
        return value * self.label_scale

    def to_dict(self) -> dict[str, Any]:
        return {
            "channel_mean": self.channel_mean.tolist(),
            "channel_std": self.channel_std.tolist(),
            "force_mean": self.force_mean.tolist(),
            "force_std": self.force_std.tolist(),
            "label_scale": self.label_scale,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "NormStats":
        try:
            stats = cls(
                np.asarray(raw["channel_mean"], dtype=float),
                np.asarray(raw["channel_std"], dtype=float),
                np.asarray(raw["force_mean"], dtype=float),
                np.asarray(raw["force_std"], dtype=float),
                float(raw["label_scale"]),
            )
        except KeyError as e:
            raise ContractViolation(f"normalization statistics lack {e}") from e
        if stats.channel_mean.shape != (N_CHANNELS,) or stats.force_mean.shape != (N_INVARIANT,):
            raise ContractViolation("normalization statistics have the wrong number of channels")
        return stats


def _window_rows(skill: SkillProfile, ends: np.ndarray, window: int, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Raw (B, length, 12) channels of the last `length` rows of each causal window plus a validity mask.

    Pose channels are taken relative to the first real sample of the full window.
    """
    offsets = np.arange(-length + 1, 1)
    index = ends[:, None] + offsets[None, :]
    valid = index >= 0
    safe = np.where(valid, index, 0)
    reference = skill.x_d[np.maximum(ends - window + 1, 0)]
    rows = np.concatenate([skill.x_d[safe] - reference[:, None, :], skill.x_dot_d[safe]], axis=2)
    return rows, valid


def window_batch(
    skill: SkillProfile, ends: np.ndarray, stats: NormStats, window: int, length: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Normalized inputs (B, 12, length) and invariants (B, 6) for windows ending at `ends`.

    Steps before the trajectory start are zero in normalized space.
    """
    length = window if length is None else min(length, window)
    ends = np.asarray(ends, dtype=int)
    rows, valid = _window_rows(skill, ends, window, length)
    normalized = np.where(valid[:, :, None], stats.normalize_channels(rows), 0.0)
    invariant = np.tile(stats.normalize_force(skill.f_d), (ends.shape[0], 1))
    return np.ascontiguousarray(normalized.transpose(0, 2, 1)), invariant


def fit_norm_stats(
    skills: Sequence[SkillProfile], labels: Sequence[np.ndarray], window: int, stride: int = 10
) -> NormStats:
    """Fits channel statistics on strided full windows and the label scale on every label."""
    samples = []
    for skill in skills:
        ends = np.arange(0, len(skill), stride)
        rows, valid = _window_rows(skill, ends, window, window)
        samples.append(rows[valid])
    pooled = np.concatenate(samples) if samples else np.zeros((0, N_CHANNELS))
    forces = np.array([skill.f_d for skill in skills]) if skills else np.zeros((0, N_INVARIANT))
    if pooled.shape[0] == 0:
        raise ContractViolation("cannot fit normalization statistics without training samples")
    all_labels = np.concatenate(labels)
    return NormStats(
        channel_mean=pooled.mean(axis=0),
        channel_std=_safe_std(pooled.std(axis=0)),
        force_mean=forces.mean(axis=0),
        force_std=_safe_std(forces.std(axis=0)),
        label_scale=float(all_labels.mean()),
    )


def split_trajectories(n: int, fractions: Sequence[float], seed: int) -> dict[str, list[int]]:
    """Assigns whole trajectories to train/val/test with a seeded permutation."""
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if n > 0 and n_train == 0:
        n_train = 1
    n_val = min(n_val, n - n_train)
    return {
        "train": sorted(int(i) for i in order[:n_train]),
        "val": sorted(int(i) for i in order[n_train : n_train + n_val]),
        "test": sorted(int(i) for i in order[n_train + n_val :]),
    }


@dataclass(frozen=True)
class WindowedDataset:
    """Trajectories with per-step normalized labels; windows are assembled lazily from (trajectory, step) pairs."""

    skills: tuple[SkillProfile, ...]
    labels: tuple[np.ndarray, ...]
    norm_stats: NormStats
    window: int
    splits: dict[str, list[int]] = field(default_factory=dict)
    names: tuple[str, ...] = ()

    def __len__(self) -> int:
        return sum(len(skill) for skill in self.skills)

    def windows(self, split: str | None = None, stride: int = 1) -> np.ndarray:
        """(trajectory, end step) pairs of every window in a split."""
        trajectories = range(len(self.skills)) if split is None else self.splits.get(split, [])
        pairs = []
        for i in trajectories:
            ends = np.arange(0, len(self.skills[i]), stride)
            pairs.append(np.column_stack([np.full(ends.shape[0], i), ends]))
        return np.concatenate(pairs).astype(int) if pairs else np.zeros((0, 2), dtype=int)

    def batch(self, pairs: np.ndarray, length: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Inputs (B, 12, L), invariants (B, 6) and normalized labels (B,) in the order of `pairs`."""
        length = self.window if length is None else min(length, self.window)
        inputs = np.zeros((pairs.shape[0], N_CHANNELS, length))
        invariants = np.zeros((pairs.shape[0], N_INVARIANT))
        labels = np.zeros(pairs.shape[0])
        for trajectory in np.unique(pairs[:, 0]):
            rows = np.flatnonzero(pairs[:, 0] == trajectory)
            ends = pairs[rows, 1]
            x, f = window_batch(self.skills[trajectory], ends, self.norm_stats, self.window, length)
            inputs[rows], invariants[rows] = x, f
            labels[rows] = self.labels[trajectory][ends]
        return inputs, invariants, labels

    def trajectory_names(self, split: str) -> list[str]:
        return [self.names[i] if self.names else str(i) for i in self.splits.get(split, [])]


def build_dataset(
    traces: Sequence[tuple[SkillProfile, PowerTrace]],
    window: int = 100,
    fractions: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    stats_stride: int = 10,
    names: Sequence[str] | None = None,
    norm_stats: NormStats | None = None,
) -> WindowedDataset:
    """Builds stride-1 causal windows with labels aligned to each window's last step.

    Trajectories are split whole; normalization is fitted on the training split unless
    `norm_stats` is given (fine-tuning keeps the statistics of the original model).
    """
    for i, (skill, trace) in enumerate(traces):
        if len(skill) != len(trace):
            raise AlignmentError(f"trajectory {i}: skill has {len(skill)} samples, power trace {len(trace)}")
        if len(skill) and not np.allclose(skill.t, trace.t, rtol=0.0, atol=1e-9):
            raise AlignmentError(f"trajectory {i}: power trace timestamps do not match the skill")

    transformed = []
    clamped = 0
    for _, trace in traces:
        label, negative = transform_power(trace.power)
        transformed.append(label)
        clamped += negative
    if clamped:
        logging.info(f"Clamped {clamped} negative power samples to zero before the label transform")

    splits = split_trajectories(len(traces), fractions, seed)
    skills = tuple(skill for skill, _ in traces)
    if norm_stats is None:
        train = splits["train"]
        norm_stats = fit_norm_stats([skills[i] for i in train], [transformed[i] for i in train], window, stats_stride)

    labels = tuple(norm_stats.normalize_label(label) for label in transformed)
    logging.info(
        f"Dataset: {len(traces)} trajectories, "
        + ", ".join(f"{name} {len(splits[name])}" for name in SPLITS)
    )
    return WindowedDataset(skills, labels, norm_stats, window, splits, tuple(names) if names else ())
