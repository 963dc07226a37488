"""Training-data selection: expand classifier errors into the unlabeled pool.

An utterance enters the candidate set when it is a top-k Euclidean
neighbor of a confirmed prediction error under *any* of the three
embedding taps (su/ff/sm) of *any* erring ensemble member.  Entropy and
random samplers provide the baselines, and a labeling oracle simulates
human annotation with out-of-domain discard accounting.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import seeding
from .corpus import Corpus, OOD_LABEL, OOD_MARKER, Utterance
from .neural import (
    Ensemble,
    TAPS,
    ensemble_predict_batch,
    evaluate,
    member_forward,
    member_forward_batch,
)


@dataclass(frozen=True)
class PredictionError:
    """A dev-set utterance misclassified by at least one ensemble member."""

    utterance_id: int
    gold_label: int
    ensemble_predicted_label: int
    erring_member_ids: frozenset[int]

    def __post_init__(self) -> None:
        if not self.erring_member_ids:
            raise ValueError("a prediction error needs at least one erring member")


@dataclass
class EmbeddingStore:
    """Dense pool embeddings per (member_id, tap layer), rows = pool order."""

    matrices: dict[tuple[int, str], np.ndarray]
    utterance_ids: np.ndarray

    def matrix(self, member_id: int, layer: str) -> np.ndarray:
        key = (member_id, layer)
        if key not in self.matrices:
            raise KeyError(f"no embeddings for member {member_id} layer {layer!r}")
        return self.matrices[key]


@dataclass(frozen=True)
class SelectionBudget:
    k: int
    total_budget: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.total_budget < 1:
            raise ValueError("total_budget must be >= 1")

    def per_error_cap(self, n_erring_members: int) -> int:
        """Max candidates one error can contribute: |erring| x 3 taps x k."""
        return n_erring_members * 3 * self.k


@dataclass(frozen=True)
class Provenance:
    source_error_id: int
    member_id: int
    layer: str
    rank: int
    distance: float


@dataclass
class Candidate:
    utterance_id: int
    provenance: tuple[Provenance, ...] = ()
    score: float | None = None  # entropy score for the entropy strategy


@dataclass
class CandidateSet:
    strategy: str
    candidates: list[Candidate]

    def utterance_ids(self) -> list[int]:
        return [c.utterance_id for c in self.candidates]

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass
class AnnotationResult:
    graded_count: int
    labeled: list[tuple[int, int]]  # (utterance_id, gold label id)
    ood_discarded_count: int

    def __post_init__(self) -> None:
        if self.graded_count != len(self.labeled) + self.ood_discarded_count:
            raise ValueError("annotation accounting identity violated")

    @property
    def ood_rate(self) -> float:
        return self.ood_discarded_count / self.graded_count if self.graded_count else 0.0


# ---------------------------------------------------------------------------
# Error discovery and pool embedding
# ---------------------------------------------------------------------------

def discover_errors(ensemble: Ensemble,
                    dev_set: Sequence[Utterance]) -> list[PredictionError]:
    """One PredictionError per dev utterance misclassified by >= 1 member."""
    if not dev_set:
        raise ValueError("dev set is empty")
    result = evaluate(ensemble, dev_set)
    erring: dict[int, set[int]] = {}
    for model_id, wrong_ids in result.member_error_ids.items():
        for uid in wrong_ids:
            erring.setdefault(uid, set()).add(model_id)
    by_id = {u.id: u for u in dev_set}
    errors = []
    for uid in sorted(erring):
        errors.append(PredictionError(
            utterance_id=uid,
            gold_label=by_id[uid].gold,
            ensemble_predicted_label=result.predictions[uid],
            erring_member_ids=frozenset(erring[uid]),
        ))
    return errors


def embed_pool(ensemble: Ensemble, pool: Sequence[Utterance]) -> EmbeddingStore:
    """EmbeddingTriple matrices for every pool utterance and member."""
    if not pool:
        raise ValueError("pool is empty")
    matrices: dict[tuple[int, str], np.ndarray] = {}
    for member in ensemble.members:
        _, su, ff, sm = member_forward_batch(member, ensemble.vocabulary, pool)
        matrices[(member.model_id, "su")] = su
        matrices[(member.model_id, "ff")] = ff
        matrices[(member.model_id, "sm")] = sm
    ids = np.array([u.id for u in pool], dtype=np.int64)
    return EmbeddingStore(matrices=matrices, utterance_ids=ids)


def knn_query(store: EmbeddingStore, query: np.ndarray, member_id: int,
              layer: str, k: int) -> list[tuple[int, float]]:
    """Exact top-k by Euclidean distance; ties break toward lower ids."""
    if k < 1:
        raise ValueError("k must be >= 1")
    mat = store.matrix(member_id, layer)
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (mat.shape[1],):
        raise ValueError(
            f"query dimension {query.shape} does not match store dimension "
            f"({mat.shape[1]},)")
    diff = mat - query
    d2 = np.einsum("nd,nd->n", diff, diff)
    order = np.lexsort((store.utterance_ids, d2))
    top = order[: min(k, order.size)]
    return [(int(store.utterance_ids[i]), float(np.sqrt(d2[i]))) for i in top]


# ---------------------------------------------------------------------------
# Similarity selection
# ---------------------------------------------------------------------------

def _error_query_triples(errors: Sequence[PredictionError], ensemble: Ensemble,
                         corpus: Corpus) -> dict[tuple[int, int], dict[str, np.ndarray]]:
    """Embedding taps of each error utterance under each erring member."""
    queries: dict[tuple[int, int], dict[str, np.ndarray]] = {}
    for error in errors:
        utterance = corpus.by_id(error.utterance_id)
        for model_id in sorted(error.erring_member_ids):
            member = ensemble.member(model_id)
            _, triple = member_forward(member, ensemble.vocabulary, utterance)
            queries[(error.utterance_id, model_id)] = {
                layer: triple.tap(layer) for layer in TAPS}
    return queries


def _assemble_candidates(errors: Sequence[PredictionError],
                         queries: Mapping[tuple[int, int], Mapping[str, np.ndarray]],
                         store: EmbeddingStore, budget: SelectionBudget,
                         excluded: frozenset[int]) -> CandidateSet:
    """Union-over-any-tap kNN per error, global dedup, round-robin budget.

    Each error claims its candidates in ascending best-distance order; a
    candidate found by several errors is claimed once (by the round-robin
    winner) but keeps the concatenated provenance of every query that
    reached it.
    """
    ordered_errors = sorted(errors, key=lambda e: e.utterance_id)
    per_error: dict[int, dict[int, list[Provenance]]] = {}
    provenance_all: dict[int, list[Provenance]] = {}
    for error in ordered_errors:
        found: dict[int, list[Provenance]] = {}
        for model_id in sorted(error.erring_member_ids):
            taps = queries[(error.utterance_id, model_id)]
            for layer in TAPS:
                hits = knn_query(store, taps[layer], model_id, layer, budget.k)
                for rank, (uid, dist) in enumerate(hits, start=1):
                    if uid in excluded:
                        continue
                    record = Provenance(source_error_id=error.utterance_id,
                                        member_id=model_id, layer=layer,
                                        rank=rank, distance=dist)
                    found.setdefault(uid, []).append(record)
                    provenance_all.setdefault(uid, []).append(record)
        per_error[error.utterance_id] = found

    # Per-error claim queues in ascending best-distance order (ties: id).
    queues: dict[int, list[int]] = {}
    for error in ordered_errors:
        found = per_error[error.utterance_id]
        queues[error.utterance_id] = sorted(
            found, key=lambda uid: (min(p.distance for p in found[uid]), uid))

    claimed: dict[int, list[int]] = {e.utterance_id: [] for e in ordered_errors}
    taken: set[int] = set()
    cursors = {eid: 0 for eid in queues}
    remaining = budget.total_budget
    progress = True
    while remaining > 0 and progress:
        progress = False
        for error in ordered_errors:
            eid = error.utterance_id
            queue = queues[eid]
            while cursors[eid] < len(queue) and queue[cursors[eid]] in taken:
                cursors[eid] += 1
            if cursors[eid] >= len(queue):
                continue
            uid = queue[cursors[eid]]
            cursors[eid] += 1
            taken.add(uid)
            claimed[eid].append(uid)
            remaining -= 1
            progress = True
            if remaining == 0:
                break

    candidates = []
    for error in ordered_errors:
        for uid in claimed[error.utterance_id]:
            candidates.append(Candidate(utterance_id=uid,
                                        provenance=tuple(provenance_all[uid])))
    return CandidateSet(strategy="similarity", candidates=candidates)


def select_similarity(errors: Sequence[PredictionError], ensemble: Ensemble,
                      corpus: Corpus, store: EmbeddingStore,
                      budget: SelectionBudget,
                      exclude_ids: Iterable[int] = ()) -> CandidateSet:
    """kNN expansion of prediction errors under every erring member's taps.

    Utterances already labeled (baseline_train) or listed in exclude_ids
    never enter the candidate set.
    """
    excluded = frozenset(u.id for u in corpus.split("baseline_train"))
    excluded |= frozenset(exclude_ids)
    queries = _error_query_triples(errors, ensemble, corpus)
    return _assemble_candidates(errors, queries, store, budget, excluded)


# ---------------------------------------------------------------------------
# Baseline samplers
# ---------------------------------------------------------------------------

def entropy_score(distribution: np.ndarray) -> float:
    """Shannon entropy in nats with the 0 * ln 0 := 0 convention."""
    p = np.asarray(distribution, dtype=np.float64)
    nonzero = p > 0.0
    return float(-(p[nonzero] * np.log(p[nonzero])).sum())


def select_entropy(ensemble: Ensemble, pool: Sequence[Utterance],
                   n: int) -> CandidateSet:
    """Top-n pool utterances by ensemble softmax entropy (ties: lower id)."""
    if n > len(pool):
        raise ValueError(f"n={n} exceeds pool size {len(pool)}")
    probs = ensemble_predict_batch(ensemble, pool)
    safe = np.where(probs > 0.0, probs, 1.0)
    entropies = -(probs * np.log(safe)).sum(axis=1)
    ids = np.array([u.id for u in pool], dtype=np.int64)
    order = np.lexsort((ids, -entropies))[:n]
    candidates = [Candidate(utterance_id=int(ids[i]), score=float(entropies[i]))
                  for i in order]
    return CandidateSet(strategy="entropy", candidates=candidates)


def select_random(pool: Sequence[Utterance], n: int, seed: int) -> CandidateSet:
    """Uniform sample without replacement, deterministic per seed."""
    if n > len(pool):
        raise ValueError(f"n={n} exceeds pool size {len(pool)}")
    rng = seeding.rng(seed, "random-selection")
    order = rng.permutation(len(pool))[:n]
    candidates = [Candidate(utterance_id=pool[int(i)].id) for i in order]
    return CandidateSet(strategy="random", candidates=candidates)


# ---------------------------------------------------------------------------
# Oracle annotation
# ---------------------------------------------------------------------------

def annotate_with_oracle(candidate_set: CandidateSet, corpus: Corpus,
                         grading_cap: int | None = None,
                         stop_after_labeled: int | None = None) -> AnnotationResult:
    """Reveal gold labels in candidate order until the grading budget runs out.

    Every grading costs one unit; out-of-domain reveals are discarded.
    stop_after_labeled ends grading early once that many usable labels
    exist (the "grade until enough" experiment mode).
    """
    graded = 0
    labeled: list[tuple[int, int]] = []
    ood = 0
    for candidate in candidate_set.candidates:
        if grading_cap is not None and graded >= grading_cap:
            break
        if stop_after_labeled is not None and len(labeled) >= stop_after_labeled:
            break
        utterance = corpus.by_id(candidate.utterance_id)
        if utterance.split != "pool":
            raise ValueError(
                f"candidate {candidate.utterance_id} is not in the pool split")
        graded += 1
        if utterance.gold == OOD_LABEL:
            ood += 1
        else:
            labeled.append((utterance.id, utterance.gold))
    return AnnotationResult(graded_count=graded, labeled=labeled,
                            ood_discarded_count=ood)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def neighbor_report(candidate_set: CandidateSet,
                    errors: Sequence[PredictionError], corpus: Corpus) -> str:
    """Human-readable listing of each error and its harvested neighbors."""

    def label_name(gold: int) -> str:
        return OOD_MARKER if gold == OOD_LABEL else corpus.label_names[gold]

    by_error: dict[int, list[Candidate]] = {e.utterance_id: [] for e in errors}
    for candidate in candidate_set.candidates:
        seen_here = set()
        for record in candidate.provenance:
            if record.source_error_id in by_error and record.source_error_id not in seen_here:
                by_error[record.source_error_id].append(candidate)
                seen_here.add(record.source_error_id)

    lines = []
    for error in sorted(errors, key=lambda e: e.utterance_id):
        utterance = corpus.by_id(error.utterance_id)
        lines.append(f"error {error.utterance_id}: \"{' '.join(utterance.tokens)}\"")
        lines.append(
            f"  gold={label_name(error.gold_label)} "
            f"predicted={label_name(error.ensemble_predicted_label)} "
            f"erring_members={sorted(error.erring_member_ids)}")
        neighbors = by_error[error.utterance_id]
        if not neighbors:
            lines.append("  neighbors: none")
            lines.append("  distinct_labels=0")
            continue
        labels = set()
        for candidate in neighbors:
            n_utt = corpus.by_id(candidate.utterance_id)
            dist = min(r.distance for r in candidate.provenance
                       if r.source_error_id == error.utterance_id)
            labels.add(label_name(n_utt.gold))
            lines.append(
                f"  neighbor {candidate.utterance_id} d={dist:.4f} "
                f"label={label_name(n_utt.gold)}: \"{' '.join(n_utt.tokens)}\"")
        lines.append(f"  distinct_labels={len(labels)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_STORE_MAGIC = b"EMB1"


def save_embedding_matrix(store: EmbeddingStore, member_id: int, layer: str,
                          path) -> None:
    """Binary layout: magic, member_id, layer tag, rows, dim (int64 LE),
    row-major float64 LE data, then the position -> utterance id map."""
    mat = store.matrix(member_id, layer)
    rows, dim = mat.shape
    with open(path, "wb") as handle:
        handle.write(_STORE_MAGIC)
        handle.write(struct.pack("<q", member_id))
        handle.write(layer.encode("ascii").ljust(4, b"\0"))
        handle.write(struct.pack("<qq", rows, dim))
        handle.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())
        handle.write(np.ascontiguousarray(store.utterance_ids, dtype="<i8").tobytes())


def load_embedding_matrix(path) -> tuple[int, str, np.ndarray, np.ndarray]:
    """Inverse of save_embedding_matrix: (member_id, layer, matrix, ids)."""
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != _STORE_MAGIC:
            raise ValueError("not an embedding matrix file")
        (member_id,) = struct.unpack("<q", handle.read(8))
        layer = handle.read(4).rstrip(b"\0").decode("ascii")
        rows, dim = struct.unpack("<qq", handle.read(16))
        mat = np.frombuffer(handle.read(rows * dim * 8), dtype="<f8")
        mat = mat.reshape(rows, dim).astype(np.float64)
        ids = np.frombuffer(handle.read(rows * 8), dtype="<i8").astype(np.int64)
    return member_id, layer, mat, ids


def save_candidates(candidate_set: CandidateSet, path) -> None:
    """JSONL with full provenance for audit."""
    with open(path, "w", encoding="utf-8") as handle:
        header = {"strategy": candidate_set.strategy,
                  "count": len(candidate_set.candidates)}
        handle.write(json.dumps(header, separators=(",", ":")) + "\n")
        for candidate in candidate_set.candidates:
            obj: dict = {"utterance_id": candidate.utterance_id}
            if candidate.score is not None:
                obj["score"] = candidate.score
            if candidate.provenance:
                obj["provenance"] = [
                    {"error": r.source_error_id, "member": r.member_id,
                     "layer": r.layer, "rank": r.rank, "distance": r.distance}
                    for r in candidate.provenance]
            handle.write(json.dumps(obj, separators=(",", ":")) + "\n")


def load_candidates(path) -> CandidateSet:
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise ValueError("empty candidate file")
    header = json.loads(lines[0])
    candidates = []
    for line in lines[1:]:
        obj = json.loads(line)
        provenance = tuple(
            Provenance(source_error_id=r["error"], member_id=r["member"],
                       layer=r["layer"], rank=r["rank"], distance=r["distance"])
            for r in obj.get("provenance", []))
        candidates.append(Candidate(utterance_id=obj["utterance_id"],
                                    provenance=provenance,
                                    score=obj.get("score")))
    return CandidateSet(strategy=header["strategy"], candidates=candidates)


def save_annotation(result: AnnotationResult, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        doc = {"graded_count": result.graded_count,
               "ood_discarded_count": result.ood_discarded_count,
               "labeled": [[uid, gold] for uid, gold in result.labeled]}
        json.dump(doc, handle)
        handle.write("\n")


def load_annotation(path) -> AnnotationResult:
    with open(path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    return AnnotationResult(graded_count=doc["graded_count"],
                            labeled=[(uid, gold) for uid, gold in doc["labeled"]],
                            ood_discarded_count=doc["ood_discarded_count"])
