"""Temporal convolutional network with a power decoder, written against numpy with hand-derived gradients.

Activations are laid out (batch, channels, time). Every residual block is
conv -> ReLU -> dropout -> conv -> ReLU -> dropout plus a residual route, and
each convolution is causal, dilated and weight-normalized per output channel.
"""

from dataclasses import dataclass
from typing import Any

import numpy as np

from tactile.config_schema import ModelConfig
from tactile.dataset import N_CHANNELS, N_INVARIANT
from tactile.exceptions import ContractViolation, TrainingFault

MAPE_FLOOR = 1e-3
_NORM_FLOOR = 1e-300

DECODER_PARAMS = ("fc1.w", "fc1.b", "fc2.w", "fc2.b")


def mape_loss(prediction: np.ndarray, label: np.ndarray) -> np.ndarray:
    """Per-sample absolute percentage error as a fraction, denominators floored at MAPE_FLOOR."""
    return np.abs(label - prediction) / np.maximum(np.abs(label), MAPE_FLOOR)


def _tap(weight: np.ndarray, x: np.ndarray) -> np.ndarray:
    # (O, I) x (B, I, T) -> (B, O, T) as one matrix product
    return np.tensordot(weight, x, axes=([1], [1])).transpose(1, 0, 2)


def _weight_norm(v: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norm = np.maximum(np.sqrt(np.sum(v * v, axis=(1, 2))), _NORM_FLOOR)
    return g[:, None, None] * v / norm[:, None, None], norm


def _weight_norm_backward(
    grad_w: np.ndarray, v: np.ndarray, g: np.ndarray, norm: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    direction = v / norm[:, None, None]
    grad_g = np.sum(grad_w * direction, axis=(1, 2))
    grad_v = (g / norm)[:, None, None] * (grad_w - grad_g[:, None, None] * direction)
    return grad_v, grad_g


def causal_conv(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, dilation: int) -> tuple[np.ndarray, np.ndarray]:
    """y[t] = b + sum_k W[:, :, k] x[t - (K-1-k) d], zero before the first step. Returns y and the padded input."""
    kernel = weight.shape[2]
    pad = (kernel - 1) * dilation
    steps = x.shape[2]
    padded = np.pad(x, ((0, 0), (0, 0), (pad, 0)))
    out = np.broadcast_to(bias[None, :, None], (x.shape[0], weight.shape[0], steps)).copy()
    for k in range(kernel):
        out += _tap(weight[:, :, k], padded[:, :, k * dilation : k * dilation + steps])
    return out, padded


def causal_conv_backward(
    grad_out: np.ndarray, padded: np.ndarray, weight: np.ndarray, dilation: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    kernel = weight.shape[2]
    pad = (kernel - 1) * dilation
    steps = grad_out.shape[2]
    grad_w = np.zeros_like(weight)
    grad_padded = np.zeros_like(padded)
    for k in range(kernel):
        window = padded[:, :, k * dilation : k * dilation + steps]
        grad_w[:, :, k] = np.tensordot(grad_out, window, axes=([0, 2], [0, 2]))
        grad_padded[:, :, k * dilation : k * dilation + steps] += np.tensordot(
            weight[:, :, k], grad_out, axes=([0], [1])
        ).transpose(1, 0, 2)
    return grad_w, grad_out.sum(axis=(0, 2)), grad_padded[:, :, pad:]


@dataclass
class _BlockCache:
    x: np.ndarray
    padded1: np.ndarray
    weight1: np.ndarray
    norm1: np.ndarray
    pre1: np.ndarray
    mask1: np.ndarray
    padded2: np.ndarray
    weight2: np.ndarray
    norm2: np.ndarray
    pre2: np.ndarray
    mask2: np.ndarray
    total: np.ndarray


class TcnModel:
    """Residual TCN encoder and two-layer power decoder over named float64 parameters."""

    def __init__(
        self,
        config: ModelConfig,
        params: dict[str, np.ndarray],
        in_channels: int = N_CHANNELS,
        invariant_size: int = N_INVARIANT,
    ):
        self.config = config
        self.params = params
        self.in_channels = in_channels
        self.invariant_size = invariant_size

    @classmethod
    def initialize(
        cls, config: ModelConfig, seed: int, in_channels: int = N_CHANNELS, invariant_size: int = N_INVARIANT
    ) -> "TcnModel":
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        channels = in_channels
        filters, kernel = config.filters, config.kernel_size
        for b in range(len(config.dilations)):
            for j, fan_in in ((1, channels), (2, filters)):
                v = rng.normal(0.0, 0.01, (filters, fan_in, kernel))
                params[f"block{b}.conv{j}.v"] = v
                params[f"block{b}.conv{j}.g"] = np.sqrt(np.sum(v * v, axis=(1, 2)))
                bound = 1.0 / np.sqrt(fan_in * kernel)
                params[f"block{b}.conv{j}.b"] = rng.uniform(-bound, bound, filters)
            if channels != filters:
                params[f"block{b}.down.w"] = rng.normal(0.0, 0.01, (filters, channels))
                params[f"block{b}.down.b"] = np.zeros(filters)
            channels = filters
        fan_in = filters + invariant_size
        bound = 1.0 / np.sqrt(fan_in)
        params["fc1.w"] = rng.uniform(-bound, bound, (config.decoder_hidden, fan_in))
        params["fc1.b"] = rng.uniform(-bound, bound, config.decoder_hidden)
        params["fc2.w"] = rng.normal(0.0, 0.01, (1, config.decoder_hidden))
        # Normalized labels have unit mean
        params["fc2.b"] = np.ones(1)
        return cls(config, params, in_channels, invariant_size)

    @property
    def receptive_field(self) -> int:
        return self.config.receptive_field

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "TcnModel":
        params = {name: value.copy() for name, value in self.params.items()}
        return TcnModel(self.config, params, self.in_channels, self.invariant_size)

    def _check(self, x: np.ndarray, invariant: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if x.ndim == 2:
            x = x.T[None, :, :]
        if invariant.ndim == 1:
            invariant = invariant[None, :]
        if x.ndim != 3 or x.shape[1] != self.in_channels or x.shape[2] < 1:
            raise ContractViolation(f"expected inputs (batch, {self.in_channels}, time), got {x.shape}")
        if invariant.shape != (x.shape[0], self.invariant_size):
            raise ContractViolation(f"expected invariants ({x.shape[0]}, {self.invariant_size}), got {invariant.shape}")
        return x, invariant

    def _dropout_mask(self, shape: tuple[int, ...], train: bool, rng: np.random.Generator | None) -> np.ndarray:
        rate = self.config.dropout
        if not train or rate == 0.0:
            return np.ones(shape)
        if rng is None:
            raise ContractViolation("training mode needs a seeded generator for dropout masks")
        return (rng.random(shape) >= rate) / (1.0 - rate)

    def encode(
        self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None
    ) -> tuple[np.ndarray, list[_BlockCache]]:
        p = self.params
        caches = []
        for b, dilation in enumerate(self.config.dilations):
            w1, n1 = _weight_norm(p[f"block{b}.conv1.v"], p[f"block{b}.conv1.g"])
            pre1, padded1 = causal_conv(x, w1, p[f"block{b}.conv1.b"], dilation)
            mask1 = self._dropout_mask(pre1.shape, train, rng)
            hidden = np.maximum(pre1, 0.0) * mask1
            w2, n2 = _weight_norm(p[f"block{b}.conv2.v"], p[f"block{b}.conv2.g"])
            pre2, padded2 = causal_conv(hidden, w2, p[f"block{b}.conv2.b"], dilation)
            mask2 = self._dropout_mask(pre2.shape, train, rng)
            residual = x
            if f"block{b}.down.w" in p:
                residual = _tap(p[f"block{b}.down.w"], x) + p[f"block{b}.down.b"][None, :, None]
            total = np.maximum(pre2, 0.0) * mask2 + residual
            caches.append(_BlockCache(x, padded1, w1, n1, pre1, mask1, padded2, w2, n2, pre2, mask2, total))
            x = np.maximum(total, 0.0)
        return x, caches

    def _decode(self, features: np.ndarray, invariant: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """features (B, F) -> output (B,), with the decoder input and hidden pre-activation."""
        p = self.params
        joined = np.concatenate([features, invariant], axis=1)
        pre = joined @ p["fc1.w"].T + p["fc1.b"]
        out = np.maximum(pre, 0.0) @ p["fc2.w"][0] + p["fc2.b"][0]
        return out, joined, pre

    def forward(
        self, x: np.ndarray, invariant: np.ndarray, train: bool = False, rng: np.random.Generator | None = None
    ) -> np.ndarray:
        """Predicted normalized power at the last step of each window."""
        x, invariant = self._check(np.asarray(x, dtype=float), np.asarray(invariant, dtype=float))
        features, _ = self.encode(x, train, rng)
        out, _, _ = self._decode(features[:, :, -1], invariant)
        return out

    def loss_and_gradients(
        self,
        x: np.ndarray,
        invariant: np.ndarray,
        label: np.ndarray,
        rng: np.random.Generator | None = None,
        train: bool = True,
        decoder_only: bool = False,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean MAPE over the batch and its exact gradient with respect to every parameter."""
        x, invariant = self._check(np.asarray(x, dtype=float), np.asarray(invariant, dtype=float))
        label = np.asarray(label, dtype=float)
        if label.shape != (x.shape[0],) or x.shape[0] == 0:
            raise ContractViolation(f"expected {x.shape[0]} labels for a nonempty batch, got {label.shape}")
        p = self.params
        features, caches = self.encode(x, train, rng)
        out, joined, pre = self._decode(features[:, :, -1], invariant)
        losses = mape_loss(out, label)
        bad = np.flatnonzero(~np.isfinite(losses))
        if bad.size:
            raise TrainingFault(f"non-finite loss for sample {int(bad[0])}", sample_index=int(bad[0]))
        batch = x.shape[0]

        grads: dict[str, np.ndarray] = {}
        grad_out = -np.sign(label - out) / np.maximum(np.abs(label), MAPE_FLOOR) / batch
        hidden = np.maximum(pre, 0.0)
        grads["fc2.w"] = (grad_out @ hidden)[None, :]
        grads["fc2.b"] = np.array([grad_out.sum()])
        grad_pre = np.outer(grad_out, p["fc2.w"][0]) * (pre > 0)
        grads["fc1.w"] = grad_pre.T @ joined
        grads["fc1.b"] = grad_pre.sum(axis=0)
        if decoder_only:
            return float(losses.mean()), grads

        grad_x = np.zeros_like(features)
        grad_x[:, :, -1] = (grad_pre @ p["fc1.w"])[:, : features.shape[1]]
        for b in reversed(range(len(self.config.dilations))):
            cache = caches[b]
            dilation = self.config.dilations[b]
            grad_total = grad_x * (cache.total > 0)
            grad_pre2 = grad_total * cache.mask2 * (cache.pre2 > 0)
            grad_w2, grads[f"block{b}.conv2.b"], grad_hidden = causal_conv_backward(
                grad_pre2, cache.padded2, cache.weight2, dilation
            )
            grads[f"block{b}.conv2.v"], grads[f"block{b}.conv2.g"] = _weight_norm_backward(
                grad_w2, p[f"block{b}.conv2.v"], p[f"block{b}.conv2.g"], cache.norm2
            )
            grad_pre1 = grad_hidden * cache.mask1 * (cache.pre1 > 0)
            grad_w1, grads[f"block{b}.conv1.b"], grad_in = causal_conv_backward(
                grad_pre1, cache.padded1, cache.weight1, dilation
            )
            grads[f"block{b}.conv1.v"], grads[f"block{b}.conv1.g"] = _weight_norm_backward(
                grad_w1, p[f"block{b}.conv1.v"], p[f"block{b}.conv1.g"], cache.norm1
            )
            if f"block{b}.down.w" in p:
                grads[f"block{b}.down.w"] = np.tensordot(grad_total, cache.x, axes=([0, 2], [0, 2]))
                grads[f"block{b}.down.b"] = grad_total.sum(axis=(0, 2))
                grad_in = grad_in + _tap(p[f"block{b}.down.w"].T, grad_total)
            else:
                grad_in = grad_in + grad_total
            grad_x = grad_in
        return float(losses.mean()), grads

    def architecture(self) -> dict[str, Any]:
        return {
            **self.config.model_dump(mode="json"),
            "in_channels": self.in_channels,
            "invariant_size": self.invariant_size,
        }


def gradients(
    model: TcnModel,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    rng: np.random.Generator | None = None,
    train: bool = True,
) -> dict[str, np.ndarray]:
    """Gradients of the mean MAPE of (inputs, invariants, labels) for every model parameter."""
    x, invariant, label = batch
    _, grads = model.loss_and_gradients(x, invariant, label, rng=rng, train=train)
    return grads
