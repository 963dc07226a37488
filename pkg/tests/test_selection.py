import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alpool.corpus import OOD_MARKER, build_vocabulary, make_corpus
from alpool.neural import Ensemble, member_forward
from alpool.selection import (
    AnnotationResult,
    Candidate,
    CandidateSet,
    EmbeddingStore,
    PredictionError,
    SelectionBudget,
    annotate_with_oracle,
    discover_errors,
    embed_pool,
    entropy_score,
    knn_query,
    load_candidates,
    load_embedding_matrix,
    neighbor_report,
    save_candidates,
    save_embedding_matrix,
    select_entropy,
    select_random,
    select_similarity,
)
from testutil import fixed_prediction_member


# ---------------------------------------------------------------------------
# discover_errors
# ---------------------------------------------------------------------------

def _fixed_ensemble(labels_by_member, corpus):
    vocab = build_vocabulary(corpus)
    members = tuple(fixed_prediction_member(i, lab, len(vocab), corpus.n_labels)
                    for i, lab in enumerate(labels_by_member))
    return Ensemble(members=members, vocabulary=vocab,
                    label_names=corpus.label_names)


def test_discover_errors_none_when_all_correct():
    corpus = make_corpus([(0, ["t"], "a", "baseline_train")]
                         + [(i, ["t"], "a", "dev") for i in range(1, 6)])
    ens = _fixed_ensemble([0, 0], corpus)
    assert discover_errors(ens, corpus.split("dev")) == []


def test_discover_errors_single_member():
    corpus = make_corpus([(0, ["t"], "a", "baseline_train"),
                          (1, ["t"], "b", "baseline_train"),
                          (9, ["t"], "a", "dev")])
    # members 0..2 predict label a; member 3 predicts b and errs on utt 9
    ens = _fixed_ensemble([0, 0, 0, 1], corpus)
    errors = discover_errors(ens, corpus.split("dev"))
    assert len(errors) == 1
    assert errors[0].utterance_id == 9
    assert errors[0].erring_member_ids == frozenset({3})
    assert errors[0].gold_label == 0


def test_discover_errors_all_members():
    corpus = make_corpus([(0, ["t"], "a", "baseline_train"),
                          (1, ["t"], "b", "baseline_train"),
                          (4, ["t"], "a", "dev")])
    ens = _fixed_ensemble([1] * 7, corpus)
    errors = discover_errors(ens, corpus.split("dev"))
    assert len(errors) == 1
    assert errors[0].erring_member_ids == frozenset(range(7))
    assert errors[0].ensemble_predicted_label == 1


def test_discover_errors_sorted_and_rejects_empty():
    corpus = make_corpus([(0, ["t"], "a", "baseline_train"),
                          (1, ["t"], "b", "baseline_train"),
                          (7, ["t"], "a", "dev"), (3, ["t"], "a", "dev")])
    ens = _fixed_ensemble([1], corpus)
    errors = discover_errors(ens, corpus.split("dev"))
    assert [e.utterance_id for e in errors] == [3, 7]
    with pytest.raises(ValueError, match="empty"):
        discover_errors(ens, [])


# ---------------------------------------------------------------------------
# embed_pool
# ---------------------------------------------------------------------------

def test_embed_pool_shapes_and_determinism(tiny_ensemble, tiny_corpus):
    pool = tiny_corpus.split("pool")[:40]
    store = embed_pool(tiny_ensemble, pool)
    assert len(store.matrices) == 3 * len(tiny_ensemble.members)
    for member in tiny_ensemble.members:
        h = member.config.hidden_dim
        assert store.matrix(member.model_id, "su").shape == (40, 2 * h)
        assert store.matrix(member.model_id, "ff").shape == (40, 2 * h)
        assert store.matrix(member.model_id, "sm").shape == (40, member.config.ff_dims[-1])
    again = embed_pool(tiny_ensemble, pool)
    for key, mat in store.matrices.items():
        assert np.array_equal(mat, again.matrices[key])


def test_embed_pool_single_utterance_matches_tap(tiny_ensemble, tiny_corpus):
    utt = tiny_corpus.split("pool")[3]
    store = embed_pool(tiny_ensemble, [utt])
    member = tiny_ensemble.members[0]
    _, triple = member_forward(member, tiny_ensemble.vocabulary, utt)
    assert np.allclose(store.matrix(member.model_id, "su")[0], triple.su, atol=1e-12)
    assert np.allclose(store.matrix(member.model_id, "sm")[0], triple.sm, atol=1e-12)


# ---------------------------------------------------------------------------
# knn_query
# ---------------------------------------------------------------------------

def _store_from_matrix(mat, ids, member_id=0, layer="su"):
    return EmbeddingStore(matrices={(member_id, layer): np.asarray(mat, float)},
                          utterance_ids=np.asarray(ids, dtype=np.int64))


def test_knn_nearest_two():
    store = _store_from_matrix([[1.0], [2.0], [3.0]], [10, 11, 12])
    hits = knn_query(store, np.array([0.0]), 0, "su", 2)
    assert hits == [(10, 1.0), (11, 2.0)]


def test_knn_tie_breaks_to_lower_id():
    store = _store_from_matrix([[5.0], [5.0], [1.0]], [42, 7, 99])
    hits = knn_query(store, np.array([5.0]), 0, "su", 2)
    assert [h[0] for h in hits] == [7, 42]
    assert hits[0][1] == hits[1][1] == 0.0


def test_knn_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for trial in range(50):
        n, d = int(rng.integers(5, 60)), int(rng.integers(1, 8))
        mat = rng.normal(size=(n, d))
        if trial % 5 == 0:
            mat[n // 2] = mat[0]  # plant an exact tie
        ids = rng.permutation(1000)[:n].astype(np.int64)
        store = _store_from_matrix(mat, ids)
        q = rng.normal(size=d)
        k = int(rng.integers(1, 6))
        hits = knn_query(store, q, 0, "su", k)
        dists = np.linalg.norm(mat - q, axis=1)
        oracle = sorted(range(n), key=lambda i: (dists[i], ids[i]))[:k]
        assert [h[0] for h in hits] == [int(ids[i]) for i in oracle]
        for h, i in zip(hits, oracle):
            assert h[1] == pytest.approx(dists[i], abs=1e-12)


def test_knn_small_pool_returns_fewer():
    store = _store_from_matrix([[0.0], [1.0]], [1, 2])
    assert len(knn_query(store, np.array([0.0]), 0, "su", 5)) == 2


def test_knn_dimension_mismatch():
    store = _store_from_matrix([[0.0, 1.0]], [1])
    with pytest.raises(ValueError, match="dimension"):
        knn_query(store, np.array([0.0]), 0, "su", 1)


# ---------------------------------------------------------------------------
# select_similarity with planted stores
# ---------------------------------------------------------------------------

def _planted_setup(n_members, n_pool=120):
    """Corpus + fixed ensemble + one dev error claimed erring on all members."""
    rows = [(0, ["t", "q"], "a", "baseline_train"), (1, ["t", "r"], "b", "baseline_train"),
            (2, ["t", "q"], "a", "dev")]
    rows += [(10 + i, ["p", f"w{i}"], "a", "pool") for i in range(n_pool)]
    corpus = make_corpus(rows)
    ens = _fixed_ensemble([1] * n_members, corpus)
    error = PredictionError(utterance_id=2, gold_label=0,
                            ensemble_predicted_label=1,
                            erring_member_ids=frozenset(range(n_members)))
    return corpus, ens, error


def _plant_store(corpus, ens, error, k, positions_for):
    """Store where positions_for[(member, layer)] lists pool rows planted
    near the error's tap for that member/layer; all other rows are far."""
    pool = corpus.split("pool")
    ids = np.array([u.id for u in pool], dtype=np.int64)
    matrices = {}
    utt = corpus.by_id(error.utterance_id)
    for member in ens.members:
        _, triple = member_forward(member, ens.vocabulary, utt)
        for layer in ("su", "ff", "sm"):
            vec = triple.tap(layer)
            mat = np.tile(vec, (len(pool), 1)) + 1000.0
            for rank, pos in enumerate(positions_for[(member.model_id, layer)]):
                mat[pos] = vec + 1e-6 * (rank + 1)
            matrices[(member.model_id, layer)] = mat
    return EmbeddingStore(matrices=matrices, utterance_ids=ids)


def test_similarity_disjoint_layers_yield_3k():
    corpus, ens, error = _planted_setup(1)
    k = 5
    positions = {(0, "su"): range(0, 5), (0, "ff"): range(5, 10),
                 (0, "sm"): range(10, 15)}
    store = _plant_store(corpus, ens, error, k, positions)
    result = select_similarity([error], ens, corpus, store,
                               SelectionBudget(k=k, total_budget=1000))
    assert len(result) == 3 * k


def test_similarity_identical_layers_dedup_to_k():
    corpus, ens, error = _planted_setup(1)
    k = 5
    positions = {(0, "su"): range(0, 5), (0, "ff"): range(0, 5),
                 (0, "sm"): range(0, 5)}
    store = _plant_store(corpus, ens, error, k, positions)
    result = select_similarity([error], ens, corpus, store,
                               SelectionBudget(k=k, total_budget=1000))
    assert len(result) == k
    for cand in result.candidates:
        layers = {p.layer for p in cand.provenance}
        assert layers == {"su", "ff", "sm"}


def test_similarity_five_members_yield_5x3k():
    corpus, ens, error = _planted_setup(5)
    k = 5
    positions = {}
    pos = 0
    for m in range(5):
        for layer in ("su", "ff", "sm"):
            positions[(m, layer)] = range(pos, pos + k)
            pos += k
    store = _plant_store(corpus, ens, error, k, positions)
    result = select_similarity([error], ens, corpus, store,
                               SelectionBudget(k=k, total_budget=1000))
    assert len(result) == 5 * 3 * k


def test_similarity_union_rule_single_layer_member():
    # a pool item in the top-k of exactly one layer still becomes a candidate
    corpus, ens, error = _planted_setup(1)
    positions = {(0, "su"): [33], (0, "ff"): [70], (0, "sm"): [71]}
    store = _plant_store(corpus, ens, error, 1, positions)
    result = select_similarity([error], ens, corpus, store,
                               SelectionBudget(k=1, total_budget=1000))
    picked = set(result.utterance_ids())
    assert corpus.split("pool")[33].id in picked


def test_similarity_excludes_baseline_and_explicit_ids():
    corpus, ens, error = _planted_setup(1)
    positions = {(0, "su"): range(0, 5), (0, "ff"): range(5, 10),
                 (0, "sm"): range(10, 15)}
    store = _plant_store(corpus, ens, error, 5, positions)
    excluded_id = corpus.split("pool")[0].id
    result = select_similarity([error], ens, corpus, store,
                               SelectionBudget(k=5, total_budget=1000),
                               exclude_ids={excluded_id})
    assert excluded_id not in set(result.utterance_ids())
    baseline_ids = {u.id for u in corpus.split("baseline_train")}
    assert not baseline_ids & set(result.utterance_ids())


def test_similarity_budget_round_robin_over_errors():
    rows = [(0, ["t"], "a", "baseline_train"), (1, ["t"], "b", "baseline_train"),
            (2, ["t"], "a", "dev"), (3, ["t"], "b", "dev")]
    rows += [(10 + i, ["p"], "a", "pool") for i in range(40)]
    corpus = make_corpus(rows)
    ens = _fixed_ensemble([1], corpus)
    e1 = PredictionError(2, 0, 1, frozenset({0}))
    e2 = PredictionError(3, 1, 0, frozenset({0}))
    pool_ids = [u.id for u in corpus.split("pool")]
    # distinct neighborhoods per error
    utt1 = corpus.by_id(2)
    _, triple = member_forward(ens.members[0], ens.vocabulary, utt1)
    mats = {}
    for layer in ("su", "ff", "sm"):
        vec = triple.tap(layer)
        mat = np.tile(vec, (40, 1)) + 1000.0
        offsets = {"su": 0, "ff": 10, "sm": 20}[layer]
        for r in range(5):
            mat[offsets + r] = vec + 1e-6 * (r + 1)
        # error 2's utterance has identical tokens, so both errors share taps;
        # plant a second band slightly farther for round-robin ordering
        for r in range(5):
            mat[offsets + 5 + r] = vec + 1e-5 * (r + 1)
        mats[(0, layer)] = mat
    store = EmbeddingStore(matrices=mats,
                           utterance_ids=np.asarray(pool_ids, dtype=np.int64))
    budget = SelectionBudget(k=5, total_budget=4)
    result = select_similarity([e1, e2], ens, corpus, store, budget)
    assert len(result) == 4
    owners = []
    for cand in result.candidates:
        owners.append({p.source_error_id for p in cand.provenance})
    # both errors contributed provenance (they share the same taps here)
    assert all({2, 3} == o for o in owners)


def test_similarity_provenance_ranks_and_distances():
    corpus, ens, error = _planted_setup(1)
    positions = {(0, "su"): range(0, 5), (0, "ff"): range(5, 10),
                 (0, "sm"): range(10, 15)}
    store = _plant_store(corpus, ens, error, 5, positions)
    result = select_similarity([error], ens, corpus, store,
                               SelectionBudget(k=5, total_budget=1000))
    by_query = {}
    for cand in result.candidates:
        for p in cand.provenance:
            by_query.setdefault((p.source_error_id, p.member_id, p.layer),
                                []).append(p)
    for records in by_query.values():
        assert len(records) <= 5
        records.sort(key=lambda p: p.rank)
        assert [p.rank for p in records] == list(range(1, len(records) + 1))
        dists = [p.distance for p in records]
        assert all(a <= b for a, b in zip(dists, dists[1:]))
        assert all(d >= 0 for d in dists)


def test_similarity_deterministic(tiny_ensemble, tiny_corpus):
    errors = discover_errors(tiny_ensemble, tiny_corpus.split("dev"))[:5]
    pool = tiny_corpus.split("pool")[:100]
    store = embed_pool(tiny_ensemble, pool)
    budget = SelectionBudget(k=3, total_budget=30)
    a = select_similarity(errors, tiny_ensemble, tiny_corpus, store, budget)
    b = select_similarity(errors, tiny_ensemble, tiny_corpus, store, budget)
    assert a.utterance_ids() == b.utterance_ids()
    assert a.candidates == b.candidates


# ---------------------------------------------------------------------------
# entropy and random baselines
# ---------------------------------------------------------------------------

def test_entropy_score_values():
    assert entropy_score(np.full(4, 0.25)) == pytest.approx(math.log(4), abs=1e-12)
    assert entropy_score(np.array([1.0, 0.0, 0.0])) == 0.0
    assert entropy_score(np.array([0.5, 0.25, 0.25])) == pytest.approx(1.039721,
                                                                       abs=1e-6)


def test_select_entropy_picks_uncertain(tiny_corpus):
    corpus = make_corpus([(0, ["t"], "a", "baseline_train"),
                          (1, ["t"], "b", "baseline_train"),
                          (10, ["t", "t"], "a", "pool"),
                          (11, ["t", "t", "t"], "a", "pool")])
    vocab = build_vocabulary(corpus)
    confident = fixed_prediction_member(0, 0, len(vocab), 2)
    uniform = fixed_prediction_member(1, 0, len(vocab), 2)
    uniform.params["out_b"][:] = 0.0  # uniform output
    ens = Ensemble(members=(confident, uniform), vocabulary=vocab,
                   label_names=corpus.label_names)
    # both pool items identical -> tie broken by lower id
    picked = select_entropy(ens, corpus.split("pool"), 1)
    assert picked.utterance_ids() == [10]
    assert picked.candidates[0].score is not None


def test_select_entropy_full_pool_and_error(tiny_ensemble, tiny_corpus):
    pool = tiny_corpus.split("pool")[:30]
    full = select_entropy(tiny_ensemble, pool, 30)
    assert sorted(full.utterance_ids()) == sorted(u.id for u in pool)
    with pytest.raises(ValueError, match="exceeds pool size"):
        select_entropy(tiny_ensemble, pool, 31)


def test_select_entropy_matches_sort_oracle(tiny_ensemble, tiny_corpus):
    from alpool.neural import ensemble_predict
    pool = tiny_corpus.split("pool")[:100]
    result = select_entropy(tiny_ensemble, pool, 10)
    scored = []
    for u in pool:
        scored.append((entropy_score(ensemble_predict(tiny_ensemble, u)), u.id))
    oracle = sorted(scored, key=lambda t: (-t[0], t[1]))[:10]
    assert result.utterance_ids() == [uid for _, uid in oracle]


def test_select_random_deterministic_and_complete(tiny_corpus):
    pool = tiny_corpus.split("pool")[:25]
    a = select_random(pool, 25, seed=5)
    b = select_random(pool, 25, seed=5)
    assert a.utterance_ids() == b.utterance_ids()
    assert sorted(a.utterance_ids()) == sorted(u.id for u in pool)
    c = select_random(pool, 10, seed=6)
    assert c.utterance_ids() != a.utterance_ids()[:10]
    with pytest.raises(ValueError, match="exceeds pool size"):
        select_random(pool, 26, seed=0)


def test_select_random_is_roughly_uniform():
    pool_rows = [(i, ["w"], "a", "pool") for i in range(10)]
    pool_rows.append((99, ["w"], "a", "baseline_train"))
    corpus = make_corpus(pool_rows)
    pool = corpus.split("pool")
    counts = {u.id: 0 for u in pool}
    for rep in range(10_000):
        picked = select_random(pool, 1, seed=rep)
        counts[picked.utterance_ids()[0]] += 1
    for uid, count in counts.items():
        assert 850 <= count <= 1150, (uid, count)


# ---------------------------------------------------------------------------
# oracle annotation
# ---------------------------------------------------------------------------

def _candidate_corpus(n_pool, ood_every=None):
    rows = [(0, ["t"], "a", "baseline_train"), (1, ["t"], "b", "baseline_train")]
    for i in range(n_pool):
        ood = ood_every is not None and i % ood_every == 0
        rows.append((10 + i, ["w"], OOD_MARKER if ood else ("a" if i % 2 else "b"),
                     "pool"))
    return make_corpus(rows)


def test_annotate_counts():
    corpus = _candidate_corpus(10, ood_every=4)  # positions 0,4,8 are OOD
    cands = CandidateSet("random", [Candidate(10 + i) for i in range(10)])
    res = annotate_with_oracle(cands, corpus)
    assert res.graded_count == 10
    assert len(res.labeled) == 7
    assert res.ood_discarded_count == 3


def test_annotate_cap():
    corpus = _candidate_corpus(10)
    cands = CandidateSet("random", [Candidate(10 + i) for i in range(10)])
    res = annotate_with_oracle(cands, corpus, grading_cap=4)
    assert res.graded_count == 4


def test_annotate_stop_after_labeled():
    corpus = _candidate_corpus(10, ood_every=2)
    cands = CandidateSet("random", [Candidate(10 + i) for i in range(10)])
    res = annotate_with_oracle(cands, corpus, stop_after_labeled=3)
    assert len(res.labeled) == 3
    assert res.graded_count == 6


def test_annotate_large_scale_ood_arithmetic():
    # 18,700 graded at a 44% out-of-domain rate leaves 10,472 usable labels
    n = 18_700
    n_ood = int(round(0.44 * n))
    rows = [(0, ["t"], "a", "baseline_train")]
    for i in range(n):
        rows.append((10 + i, ["w"], OOD_MARKER if i < n_ood else "a", "pool"))
    corpus = make_corpus(rows)
    cands = CandidateSet("entropy", [Candidate(10 + i) for i in range(n)])
    res = annotate_with_oracle(cands, corpus)
    assert res.graded_count == n
    assert res.ood_discarded_count == n_ood
    assert len(res.labeled) == 10_472


def test_annotate_rejects_non_pool():
    corpus = _candidate_corpus(3)
    cands = CandidateSet("random", [Candidate(0)])
    with pytest.raises(ValueError, match="pool"):
        annotate_with_oracle(cands, corpus)


def test_annotation_identity_enforced():
    with pytest.raises(ValueError, match="accounting"):
        AnnotationResult(graded_count=3, labeled=[(1, 0)], ood_discarded_count=1)


def test_budget_per_error_cap():
    budget = SelectionBudget(k=5, total_budget=100)
    assert budget.per_error_cap(1) == 15
    assert budget.per_error_cap(5) == 75
    with pytest.raises(ValueError, match="k must"):
        SelectionBudget(k=0, total_budget=10)


def test_prediction_error_needs_erring_members():
    with pytest.raises(ValueError, match="erring member"):
        PredictionError(1, 0, 1, frozenset())


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=30), st.integers(min_value=2, max_value=7),
       st.integers(min_value=0, max_value=40) | st.none())
def test_annotate_accounting_identity_property(n_pool, ood_every, cap):
    corpus = _candidate_corpus(n_pool, ood_every=ood_every)
    cands = CandidateSet("random", [Candidate(10 + i) for i in range(n_pool)])
    res = annotate_with_oracle(cands, corpus, grading_cap=cap)
    assert res.graded_count == len(res.labeled) + res.ood_discarded_count
    if cap is not None:
        assert res.graded_count <= cap


# ---------------------------------------------------------------------------
# neighbor report
# ---------------------------------------------------------------------------

def test_neighbor_report_contents():
    corpus = make_corpus([
        (0, ["t"], "a", "baseline_train"), (1, ["t"], "b", "baseline_train"),
        (2, ["spell", "volume"], "a", "dev"),
        (10, ["spell", "squawk"], "b", "pool"),
        (11, ["increase", "volume"], "a", "pool"),
        (12, ["weird", "thing"], OOD_MARKER, "pool"),
    ])
    error = PredictionError(2, 0, 1, frozenset({0}))
    from alpool.selection import Provenance
    cands = CandidateSet("similarity", [
        Candidate(10, provenance=(Provenance(2, 0, "su", 1, 0.5),)),
        Candidate(11, provenance=(Provenance(2, 0, "ff", 1, 0.7),)),
        Candidate(12, provenance=(Provenance(2, 0, "sm", 1, 0.9),)),
    ])
    text = neighbor_report(cands, [error], corpus)
    assert "spell volume" in text
    assert "distinct_labels=3" in text
    assert OOD_MARKER in text


def test_neighbor_report_empty_block():
    corpus = make_corpus([(0, ["t"], "a", "baseline_train"),
                          (1, ["t"], "b", "baseline_train"),
                          (2, ["x"], "a", "dev")])
    error = PredictionError(2, 0, 1, frozenset({0}))
    text = neighbor_report(CandidateSet("similarity", []), [error], corpus)
    assert "neighbors: none" in text
    assert "distinct_labels=0" in text


def test_neighbor_labels_span_multiple_domains(tiny_ensemble, tiny_corpus):
    errors = discover_errors(tiny_ensemble, tiny_corpus.split("dev"))
    assert errors, "tiny ensemble should make some dev errors"
    pool = tiny_corpus.split("pool")
    store = embed_pool(tiny_ensemble, pool)
    cands = select_similarity(errors, tiny_ensemble, tiny_corpus, store,
                              SelectionBudget(k=5, total_budget=200))
    labels_by_error = {}
    for cand in cands.candidates:
        gold = tiny_corpus.by_id(cand.utterance_id).gold
        for p in cand.provenance:
            labels_by_error.setdefault(p.source_error_id, set()).add(gold)
    assert any(len(labels) >= 2 for labels in labels_by_error.values())


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_embedding_matrix_round_trip(tmp_path, tiny_ensemble, tiny_corpus):
    pool = tiny_corpus.split("pool")[:20]
    store = embed_pool(tiny_ensemble, pool)
    member_id = tiny_ensemble.members[0].model_id
    path = tmp_path / "emb.bin"
    save_embedding_matrix(store, member_id, "ff", path)
    got_member, got_layer, mat, ids = load_embedding_matrix(path)
    assert (got_member, got_layer) == (member_id, "ff")
    assert np.array_equal(mat, store.matrix(member_id, "ff"))
    assert np.array_equal(ids, store.utterance_ids)


def test_candidate_set_round_trip(tmp_path):
    from alpool.selection import Provenance
    cands = CandidateSet("similarity", [
        Candidate(5, provenance=(Provenance(2, 0, "su", 1, 0.25),
                                 Provenance(3, 1, "sm", 4, 1.5))),
        Candidate(9, score=0.77),
    ])
    path = tmp_path / "c.jsonl"
    save_candidates(cands, path)
    loaded = load_candidates(path)
    assert loaded.strategy == "similarity"
    assert loaded.candidates == cands.candidates


def test_annotation_round_trip(tmp_path):
    from alpool.selection import save_annotation, load_annotation
    res = AnnotationResult(graded_count=5, labeled=[(1, 0), (2, 1), (3, 0)],
                           ood_discarded_count=2)
    path = tmp_path / "ann.json"
    save_annotation(res, path)
    assert load_annotation(path) == res
