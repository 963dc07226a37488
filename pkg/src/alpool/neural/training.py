"""Mini-batch trainer: seeded shuffling, Adam-style adaptive updates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import seeding
from ..corpus import OOD_LABEL, PAD_ID, Utterance, Vocabulary
from .model import ModelConfig, ModelParams, backward_batch, forward_batch, init_params

_BETA1 = 0.9
_BETA2 = 0.999
_EPS = 1e-8


@dataclass
class TrainResult:
    params: ModelParams
    loss_history: list[float]  # mean cross-entropy per epoch


def pad_batch(encoded: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Left-aligned id matrix padded with PAD_ID, plus the true lengths."""
    lengths = np.array([len(e) for e in encoded], dtype=np.int64)
    width = int(lengths.max())
    ids = np.full((len(encoded), width), PAD_ID, dtype=np.int64)
    for row, enc in enumerate(encoded):
        ids[row, : len(enc)] = enc
    return ids, lengths


def train_member(config: ModelConfig, vocabulary: Vocabulary,
                 train_data: Sequence[Utterance], n_labels: int) -> TrainResult:
    """Train one classifier; bit-reproducible for a fixed config.seed.

    The shuffle order, parameter init, and (when enabled) dropout masks all
    derive from config.seed, so identical inputs give identical parameters.
    """
    config.validate()
    if not train_data:
        raise ValueError("train_data is empty")
    if any(u.gold == OOD_LABEL for u in train_data):
        raise ValueError("train_data must contain in-domain labels only")
    if any(not 0 <= u.gold < n_labels for u in train_data):
        raise ValueError("train_data label out of range")

    encoded = [vocabulary.encode(u) for u in train_data]
    gold = np.array([u.gold for u in train_data], dtype=np.int64)
    n = len(encoded)

    params = init_params(config, len(vocabulary), n_labels)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(w) for k, w in params.items()}
    shuffle_rng = seeding.rng(config.seed, "shuffle")
    step = 0
    lr = config.learning_rate

    history: list[float] = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch_idx = order[start: start + config.batch_size]
            ids, lengths = pad_batch([encoded[i] for i in batch_idx])
            dropout_rng = None
            if config.dropout > 0.0:
                dropout_rng = seeding.rng(config.seed, "dropout", epoch, start)
            cache = forward_batch(config, params, ids, lengths,
                                  train=True, dropout_rng=dropout_rng)
            loss, grads = backward_batch(config, params, cache, gold[batch_idx])
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} batch {start // config.batch_size}")
            epoch_loss += loss * len(batch_idx)
            step += 1
            bc1 = 1.0 - _BETA1 ** step
            bc2 = 1.0 - _BETA2 ** step
            for key, grad in grads.items():
                m[key] = _BETA1 * m[key] + (1.0 - _BETA1) * grad
                v[key] = _BETA2 * v[key] + (1.0 - _BETA2) * grad * grad
                params[key] -= lr * (m[key] / bc1) / (np.sqrt(v[key] / bc2) + _EPS)
        history.append(epoch_loss / n)
    return TrainResult(params=params, loss_history=history)
