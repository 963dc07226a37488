"""Geometric-mean ensembles of independently trained members.

Member training is embarrassingly parallel: each job is a pure function of
(config, vocabulary, data), so a process pool produces bit-identical
results to sequential training regardless of scheduling.
"""

from __future__ import annotations

import base64
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..corpus import OOD_LABEL, Utterance, Vocabulary
from .model import EmbeddingTriple, ModelConfig, ModelParams, forward_batch
from .training import pad_batch, train_member

_PROB_FLOOR = 1e-12
_HIDDEN_CYCLE = (32, 48, 64)
_FORWARD_CHUNK = 256


@dataclass
class Member:
    model_id: int
    config: ModelConfig
    params: ModelParams


@dataclass
class Ensemble:
    members: tuple[Member, ...]
    vocabulary: Vocabulary
    label_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        ids = [m.model_id for m in self.members]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate member model_id")

    @property
    def n_labels(self) -> int:
        return len(self.label_names)

    def member(self, model_id: int) -> Member:
        for m in self.members:
            if m.model_id == model_id:
                return m
        raise KeyError(f"no member with model_id {model_id}")


def default_member_configs(n_members: int = 7, base_seed: int = 0,
                           **overrides) -> list[ModelConfig]:
    """Member diversity: distinct seeds, hidden widths cycling through
    {32, 48, 64}, and one mean-pool member (the last, when n >= 2)."""
    if n_members < 1:
        raise ValueError("n_members must be positive")
    configs = []
    for i in range(n_members):
        mode = "attention_pool"
        if n_members >= 2 and i == n_members - 1:
            mode = "mean_pool"
        fields = dict(hidden_dim=_HIDDEN_CYCLE[i % len(_HIDDEN_CYCLE)],
                      summarization_mode=mode,
                      seed=base_seed * 7919 + i)
        fields.update(overrides)
        configs.append(ModelConfig(**fields))
    return configs


def _train_job(args) -> tuple[int, ModelParams, list[float]]:
    model_id, config, vocabulary, train_data, n_labels = args
    result = train_member(config, vocabulary, train_data, n_labels)
    return model_id, result.params, result.loss_history


def train_ensemble(configs: Sequence[ModelConfig], vocabulary: Vocabulary,
                   train_data: Sequence[Utterance], label_names: Sequence[str],
                   n_jobs: int = 1) -> Ensemble:
    """Train every member; results are identical for any n_jobs >= 1."""
    jobs = [(i, cfg, vocabulary, tuple(train_data), len(label_names))
            for i, cfg in enumerate(configs)]
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(_train_job, jobs))
    else:
        outcomes = [_train_job(job) for job in jobs]
    outcomes.sort(key=lambda item: item[0])
    members = tuple(Member(model_id=i, config=configs[i], params=params)
                    for i, params, _ in outcomes)
    return Ensemble(members=members, vocabulary=vocabulary,
                    label_names=tuple(label_names))


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def member_forward(member: Member, vocabulary: Vocabulary,
                   utterance: Utterance) -> tuple[np.ndarray, EmbeddingTriple]:
    """(label distribution, embedding taps) for one utterance."""
    ids = vocabulary.encode(utterance)
    cache = forward_batch(member.config, member.params, ids[None, :],
                          np.array([ids.size], dtype=np.int64))
    triple = EmbeddingTriple(model_id=member.model_id, su=cache.su[0],
                             ff=cache.summary[0], sm=cache.sm[0])
    return cache.probs[0], triple


def member_forward_batch(member: Member, vocabulary: Vocabulary,
                         utterances: Sequence[Utterance]
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized member pass: (probs, su, ff, sm) stacked over utterances."""
    if not utterances:
        raise ValueError("no utterances to process")
    probs, su, ff, sm = [], [], [], []
    for start in range(0, len(utterances), _FORWARD_CHUNK):
        chunk = utterances[start: start + _FORWARD_CHUNK]
        ids, lengths = pad_batch([vocabulary.encode(u) for u in chunk])
        cache = forward_batch(member.config, member.params, ids, lengths)
        probs.append(cache.probs)
        su.append(cache.su)
        ff.append(cache.summary)
        sm.append(cache.sm)
    return (np.concatenate(probs), np.concatenate(su),
            np.concatenate(ff), np.concatenate(sm))


def geometric_mean_probs(prob_rows: np.ndarray) -> np.ndarray:
    """Per-label geometric mean of member distributions, renormalized.

    Computed in log space with each member probability floored at 1e-12 so
    a single zero-probability member cannot annihilate a label.  Rows must
    already be in canonical (sorted model_id) order.
    """
    rows = np.asarray(prob_rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("prob_rows must be (n_members, n_labels)")
    logs = np.log(np.maximum(rows, _PROB_FLOOR))
    avg = logs.mean(axis=0)
    avg -= avg.max()
    w = np.exp(avg)
    return w / w.sum()


def _sorted_members(ensemble: Ensemble) -> list[Member]:
    return sorted(ensemble.members, key=lambda m: m.model_id)


def ensemble_predict(ensemble: Ensemble, utterance: Utterance) -> np.ndarray:
    """Geometric-mean label distribution; member-order invariant."""
    rows = np.stack([member_forward(m, ensemble.vocabulary, utterance)[0]
                     for m in _sorted_members(ensemble)])
    return geometric_mean_probs(rows)


def ensemble_predict_batch(ensemble: Ensemble,
                           utterances: Sequence[Utterance]) -> np.ndarray:
    """(n_utterances, n_labels) geometric-mean distributions."""
    stacked = np.stack([member_forward_batch(m, ensemble.vocabulary, utterances)[0]
                        for m in _sorted_members(ensemble)])
    logs = np.log(np.maximum(stacked, _PROB_FLOOR))
    avg = logs.mean(axis=0)
    avg -= avg.max(axis=1, keepdims=True)
    w = np.exp(avg)
    return w / w.sum(axis=1, keepdims=True)


@dataclass
class EvalResult:
    error_rate: float
    member_error_ids: dict[int, frozenset[int]]
    predictions: dict[int, int]  # utterance id -> ensemble argmax label


def evaluate(ensemble: Ensemble, dataset: Sequence[Utterance]) -> EvalResult:
    """Ensemble error rate plus each member's misclassified utterance ids.

    Argmax ties break toward the lowest label id.  The dataset must be
    in-domain only.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if any(u.gold == OOD_LABEL for u in dataset):
        raise ValueError("dataset must be in-domain only")
    gold = np.array([u.gold for u in dataset], dtype=np.int64)
    ids = [u.id for u in dataset]

    member_rows = []
    member_errors: dict[int, frozenset[int]] = {}
    for m in _sorted_members(ensemble):
        probs = member_forward_batch(m, ensemble.vocabulary, dataset)[0]
        member_rows.append(probs)
        wrong = np.argmax(probs, axis=1) != gold
        member_errors[m.model_id] = frozenset(ids[i] for i in np.flatnonzero(wrong))
    stacked = np.stack(member_rows)
    logs = np.log(np.maximum(stacked, _PROB_FLOOR))
    ens_pred = np.argmax(logs.mean(axis=0), axis=1)
    error_rate = float(np.mean(ens_pred != gold))
    predictions = {uid: int(lbl) for uid, lbl in zip(ids, ens_pred)}
    return EvalResult(error_rate=error_rate, member_error_ids=member_errors,
                      predictions=predictions)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CHECKPOINT_FORMAT = "alpool-ensemble"
_CHECKPOINT_VERSION = 1


def _encode_tensor(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "dtype": "<f8",
            "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode_tensor(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    arr = np.frombuffer(raw, dtype=obj["dtype"]).astype(np.float64)
    return arr.reshape(obj["shape"])


def save_ensemble(ensemble: Ensemble, path) -> None:
    doc = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "vocab_hash": ensemble.vocabulary.content_hash(),
        "labels": list(ensemble.label_names),
        "members": [
            {
                "model_id": m.model_id,
                "config": asdict(m.config),
                "tensors": {k: _encode_tensor(v) for k, v in sorted(m.params.items())},
            }
            for m in ensemble.members
        ],
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle)
        handle.write("\n")


def load_ensemble(path, vocabulary: Vocabulary) -> Ensemble:
    """Load a checkpoint, rejecting one whose vocabulary hash mismatches."""
    with open(path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    if doc.get("format") != _CHECKPOINT_FORMAT:
        raise ValueError("not an ensemble checkpoint")
    if doc.get("vocab_hash") != vocabulary.content_hash():
        raise ValueError("checkpoint vocabulary hash mismatch")
    from .model import init_params

    members = []
    n_labels = len(doc["labels"])
    for entry in doc["members"]:
        cfg_fields = dict(entry["config"])
        cfg_fields["ff_dims"] = tuple(cfg_fields["ff_dims"])
        config = ModelConfig(**cfg_fields)
        params = {k: _decode_tensor(v) for k, v in entry["tensors"].items()}
        expected = {k: v.shape
                    for k, v in init_params(config, len(vocabulary),
                                            n_labels).items()}
        got = {k: v.shape for k, v in params.items()}
        if got != expected:
            raise ValueError("checkpoint tensor shapes are inconsistent with "
                             "the config and vocabulary")
        if any(not np.all(np.isfinite(v)) for v in params.values()):
            raise ValueError("checkpoint contains non-finite parameters")
        members.append(Member(model_id=entry["model_id"], config=config,
                              params=params))
    return Ensemble(members=tuple(members), vocabulary=vocabulary,
                    label_names=tuple(doc["labels"]))
