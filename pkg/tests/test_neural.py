import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alpool.corpus import build_vocabulary, make_corpus
from alpool.neural import (
    Ensemble,
    Member,
    ModelConfig,
    default_member_configs,
    ensemble_predict,
    evaluate,
    forward,
    forward_batch,
    geometric_mean_probs,
    gradient_check,
    init_params,
    load_ensemble,
    loss_and_grads,
    member_forward,
    save_ensemble,
    train_ensemble,
)
from alpool.neural.training import train_member
from testutil import fixed_prediction_member


def small_config(seed=0, **kw):
    fields = dict(embedding_dim=6, hidden_dim=5, ff_dims=(8,), seed=seed)
    fields.update(kw)
    return ModelConfig(**fields)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def test_distribution_sums_to_one():
    cfg = small_config()
    params = init_params(cfg, 20, 7)
    probs, _ = forward(cfg, params, [3, 5, 1, 19])
    assert abs(probs.sum() - 1.0) < 1e-9
    assert np.all(probs >= 0) and np.all(probs <= 1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=19), min_size=1, max_size=9),
       st.sampled_from(["attention_pool", "mean_pool"]),
       st.sampled_from(["mean", "final_concat"]))
def test_distribution_valid_property(ids, pool_mode, su_mode):
    cfg = small_config(summarization_mode=pool_mode, su_mode=su_mode)
    params = init_params(cfg, 20, 5)
    probs, triple = forward(cfg, params, ids)
    assert abs(probs.sum() - 1.0) < 1e-9
    assert np.all(np.isfinite(triple.su))
    assert _triple_dims_ok(cfg, triple)


def _triple_dims_ok(cfg, triple):
    return (triple.su.shape == (2 * cfg.hidden_dim,)
            and triple.ff.shape == (2 * cfg.hidden_dim,)
            and triple.sm.shape == (cfg.ff_dims[-1],))


def test_single_token_su_is_state():
    cfg = small_config()
    params = init_params(cfg, 15, 4)
    ids = np.array([[7]], dtype=np.int64)
    cache = forward_batch(cfg, params, ids, np.array([1]))
    assert np.array_equal(cache.su[0], cache.states[0, 0])


def test_all_zero_params_uniform():
    cfg = small_config()
    params = init_params(cfg, 12, 6)
    zero = {k: np.zeros_like(v) for k, v in params.items()}
    probs, _ = forward(cfg, zero, [1, 2, 3])
    assert np.allclose(probs, 1.0 / 6.0, atol=1e-12)


def test_out_of_range_token_id_rejected():
    cfg = small_config()
    params = init_params(cfg, 10, 3)
    with pytest.raises(ValueError, match="vocabulary range"):
        forward(cfg, params, [4, 12])


def test_tap_plumbing_identity():
    cfg = small_config(ff_dims=(8, 6))
    params = init_params(cfg, 18, 4)
    ids = np.array([[2, 9, 4], [1, 1, 0]], dtype=np.int64)
    cache = forward_batch(cfg, params, ids, np.array([3, 2]))
    # sm tap is the very object consumed by the softmax layer
    assert cache.sm is cache.ff_acts[-1]
    # ff tap is exactly the summarization output fed to the first ff layer
    first = np.tanh(cache.summary @ params["ff0_w"] + params["ff0_b"])
    assert np.array_equal(first, cache.ff_pre_drop[0])


def test_forward_batch_matches_single():
    cfg = small_config()
    params = init_params(cfg, 25, 5)
    seqs = [[3, 1, 4], [20, 2], [5, 5, 5, 5, 5]]
    from alpool.neural.training import pad_batch
    ids, lengths = pad_batch([np.array(s) for s in seqs])
    batch = forward_batch(cfg, params, ids, lengths)
    for row, seq in enumerate(seqs):
        probs, triple = forward(cfg, params, seq)
        assert np.allclose(probs, batch.probs[row], atol=1e-12)
        assert np.allclose(triple.su, batch.su[row], atol=1e-12)
        assert np.allclose(triple.ff, batch.summary[row], atol=1e-12)
        assert np.allclose(triple.sm, batch.sm[row], atol=1e-12)


def test_final_concat_su_mode():
    cfg = small_config(su_mode="final_concat")
    params = init_params(cfg, 15, 3)
    ids = np.array([[3, 7, 2]], dtype=np.int64)
    cache = forward_batch(cfg, params, ids, np.array([3]))
    H = cfg.hidden_dim
    assert np.array_equal(cache.su[0, :H], cache.fwd.h[0, 2])
    assert np.array_equal(cache.su[0, H:], cache.bwd.h[0, 2])


def test_dropout_training_is_seeded_and_inference_clean():
    cfg = small_config(dropout=0.4)
    params = init_params(cfg, 15, 3)
    ids = np.array([[3, 7, 2]], dtype=np.int64)
    from alpool import seeding
    c1 = forward_batch(cfg, params, ids, np.array([3]), train=True,
                       dropout_rng=seeding.rng(1, "d"))
    c2 = forward_batch(cfg, params, ids, np.array([3]), train=True,
                       dropout_rng=seeding.rng(1, "d"))
    assert np.array_equal(c1.probs, c2.probs)
    clean = forward_batch(cfg, params, ids, np.array([3]))
    assert clean.drop_masks is None


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_check_small(seed):
    cfg = small_config(seed=seed,
                       summarization_mode="attention_pool" if seed % 2 else "mean_pool")
    params = init_params(cfg, 14, 4)
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, 14, size=5)
    dev = gradient_check(cfg, params, ids, int(rng.integers(4)), seed=seed)
    assert dev < 1e-4


def test_gradient_check_with_dropout_grads():
    # dropout masks must be replayed exactly in the backward pass
    cfg = small_config(dropout=0.3)
    params = init_params(cfg, 14, 4)
    from alpool import seeding
    ids = np.array([[2, 5, 9, 1]], dtype=np.int64)
    lengths = np.array([4])
    gold = np.array([2])
    rng = seeding.rng(3, "drop")
    cache = forward_batch(cfg, params, ids, lengths, train=True, dropout_rng=rng)
    from alpool.neural.model import backward_batch
    loss, grads = backward_batch(cfg, params, cache, gold)
    assert np.isfinite(loss)
    assert set(grads) == set(params)


def test_gradient_check_detects_sign_flip():
    cfg = small_config(seed=9)
    params = init_params(cfg, 11, 3)
    ids = np.array([1, 4, 7, 2])
    _, grads = loss_and_grads(cfg, params, ids[None, :], np.array([4]), np.array([1]))
    dev = gradient_check(cfg, params, ids, 1,
                         grad_override={"fwd_wx": -grads["fwd_wx"]})
    assert dev > 0.1


def test_gradient_check_rejects_bad_h():
    cfg = small_config()
    params = init_params(cfg, 11, 3)
    with pytest.raises(ValueError, match="h must"):
        gradient_check(cfg, params, [1, 2], 0, h=1e-2)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _toy_training_corpus():
    rows = []
    for i in range(25):
        rows.append((i, ["alpha", "beta", f"w{i % 5}"], "first", "baseline_train"))
    for i in range(25, 50):
        rows.append((i, ["gamma", "delta", f"w{i % 5}"], "second", "baseline_train"))
    return make_corpus(rows)


def test_training_reduces_loss():
    corpus = _toy_training_corpus()
    vocab = build_vocabulary(corpus)
    cfg = small_config(epochs=4, batch_size=10, learning_rate=0.02)
    result = train_member(cfg, vocab, corpus.utterances, corpus.n_labels)
    assert result.loss_history[-1] < result.loss_history[0]


def test_zero_learning_rate_keeps_init():
    corpus = _toy_training_corpus()
    vocab = build_vocabulary(corpus)
    cfg = small_config(epochs=2, batch_size=10, learning_rate=0.0)
    result = train_member(cfg, vocab, corpus.utterances, corpus.n_labels)
    init = init_params(cfg, len(vocab), corpus.n_labels)
    for key in init:
        assert np.array_equal(result.params[key], init[key])


def test_training_bitwise_deterministic():
    corpus = _toy_training_corpus()
    vocab = build_vocabulary(corpus)
    cfg = small_config(epochs=2, batch_size=8)
    r1 = train_member(cfg, vocab, corpus.utterances, corpus.n_labels)
    r2 = train_member(cfg, vocab, corpus.utterances, corpus.n_labels)
    for key in r1.params:
        assert np.array_equal(r1.params[key], r2.params[key])
    assert r1.loss_history == r2.loss_history


def test_training_aborts_on_non_finite_loss():
    corpus = _toy_training_corpus()
    vocab = build_vocabulary(corpus)
    cfg = small_config(epochs=3, batch_size=10, learning_rate=1e12)
    with pytest.raises(RuntimeError, match="non-finite loss at epoch"):
        train_member(cfg, vocab, corpus.utterances, corpus.n_labels)


def test_training_rejects_empty_and_ood():
    corpus = _toy_training_corpus()
    vocab = build_vocabulary(corpus)
    cfg = small_config()
    with pytest.raises(ValueError, match="empty"):
        train_member(cfg, vocab, [], corpus.n_labels)
    ood = make_corpus([(0, ["a"], "x", "baseline_train"),
                       (1, ["b"], "__OOD__", "pool")])
    with pytest.raises(ValueError, match="in-domain"):
        train_member(cfg, vocab, ood.utterances, 1)


# ---------------------------------------------------------------------------
# ensemble algebra
# ---------------------------------------------------------------------------

def test_geometric_mean_hand_case():
    probs = geometric_mean_probs(np.array([[0.9, 0.1], [0.5, 0.5]]))
    assert abs(probs[0] - 0.75) < 1e-12
    assert abs(probs[1] - 0.25) < 1e-12


def test_geometric_mean_single_member_identity():
    row = np.array([[0.2, 0.5, 0.3]])
    assert np.allclose(geometric_mean_probs(row), row[0], atol=1e-15)


def test_geometric_mean_uniform_members():
    rows = np.full((4, 5), 0.2)
    assert np.allclose(geometric_mean_probs(rows), 0.2, atol=1e-15)


def test_geometric_mean_zero_probability_floor():
    rows = np.array([[1.0, 0.0], [0.5, 0.5]])
    probs = geometric_mean_probs(rows)
    assert probs[1] > 0.0


def test_ensemble_member_order_invariance(tiny_corpus, tiny_ensemble):
    utt = tiny_corpus.split("dev")[0]
    base = ensemble_predict(tiny_ensemble, utt)
    shuffled = Ensemble(members=tuple(reversed(tiny_ensemble.members)),
                        vocabulary=tiny_ensemble.vocabulary,
                        label_names=tiny_ensemble.label_names)
    assert np.array_equal(base, ensemble_predict(shuffled, utt))


def test_ensemble_replication_idempotent(tiny_corpus, tiny_ensemble):
    utt = tiny_corpus.split("dev")[1]
    base = ensemble_predict(tiny_ensemble, utt)
    doubled_members = []
    next_id = max(m.model_id for m in tiny_ensemble.members) + 1
    for m in tiny_ensemble.members:
        doubled_members.append(m)
        doubled_members.append(Member(model_id=next_id, config=m.config,
                                      params=m.params))
        next_id += 1
    doubled = Ensemble(members=tuple(doubled_members),
                       vocabulary=tiny_ensemble.vocabulary,
                       label_names=tiny_ensemble.label_names)
    assert np.allclose(base, ensemble_predict(doubled, utt), atol=1e-12)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _fixed_ensemble(labels_by_member, corpus, vocab):
    members = tuple(fixed_prediction_member(i, lab, len(vocab), corpus.n_labels)
                    for i, lab in enumerate(labels_by_member))
    return Ensemble(members=members, vocabulary=vocab,
                    label_names=corpus.label_names)


def test_evaluate_all_correct():
    corpus = make_corpus([(i, ["tok"], "only", "blind_test") for i in range(5)]
                         + [(99, ["tok"], "only", "baseline_train")])
    vocab = build_vocabulary(corpus)
    ens = _fixed_ensemble([0, 0], corpus, vocab)
    result = evaluate(ens, corpus.split("blind_test"))
    assert result.error_rate == 0.0
    assert all(not s for s in result.member_error_ids.values())


def test_evaluate_counting():
    rows = [(i, ["tok"], "a", "blind_test") for i in range(9)]
    rows.append((9, ["tok"], "b", "blind_test"))
    rows.append((99, ["x"], "a", "baseline_train"))
    rows.append((98, ["y"], "b", "baseline_train"))
    corpus = make_corpus(rows)
    vocab = build_vocabulary(corpus)
    ens = _fixed_ensemble([0], corpus, vocab)  # always predicts label a
    result = evaluate(ens, corpus.split("blind_test"))
    assert result.error_rate == pytest.approx(0.10)


def test_evaluate_member_error_sets():
    # members 0 and 2 predict label 1; member 1 predicts label 0.
    # utterance 5 (gold 0) is misclassified by exactly members {0, 2}.
    rows = [(5, ["tok"], "zero", "blind_test"), (6, ["tok"], "one", "blind_test"),
            (99, ["x"], "zero", "baseline_train"), (98, ["y"], "one", "baseline_train")]
    corpus = make_corpus(rows)
    vocab = build_vocabulary(corpus)
    ens = _fixed_ensemble([1, 0, 1], corpus, vocab)
    result = evaluate(ens, corpus.split("blind_test"))
    assert result.member_error_ids[0] == frozenset({5})
    assert result.member_error_ids[2] == frozenset({5})
    assert result.member_error_ids[1] == frozenset({6})


def test_evaluate_rejects_empty_and_ood(tiny_ensemble, tiny_corpus):
    with pytest.raises(ValueError, match="empty"):
        evaluate(tiny_ensemble, [])
    with pytest.raises(ValueError, match="in-domain"):
        evaluate(tiny_ensemble, tiny_corpus.split("pool"))


# ---------------------------------------------------------------------------
# determinism, parallel training, checkpoints
# ---------------------------------------------------------------------------

def test_parallel_training_matches_sequential(tiny_corpus, tiny_vocab):
    configs = default_member_configs(2, embedding_dim=8, hidden_dim=6,
                                     ff_dims=(8,), epochs=1, batch_size=32)
    train = tiny_corpus.split("baseline_train")
    seq = train_ensemble(configs, tiny_vocab, train, tiny_corpus.label_names,
                         n_jobs=1)
    par = train_ensemble(configs, tiny_vocab, train, tiny_corpus.label_names,
                         n_jobs=2)
    for a, b in zip(seq.members, par.members):
        assert a.model_id == b.model_id
        for key in a.params:
            assert np.array_equal(a.params[key], b.params[key])


def test_default_member_configs_diversity():
    configs = default_member_configs(7)
    assert len({c.seed for c in configs}) == 7
    assert {c.hidden_dim for c in configs} == {32, 48, 64}
    assert configs[-1].summarization_mode == "mean_pool"
    assert all(c.summarization_mode == "attention_pool" for c in configs[:-1])


def test_checkpoint_round_trip(tmp_path, tiny_ensemble, tiny_vocab, tiny_corpus):
    path = tmp_path / "ens.ckpt"
    save_ensemble(tiny_ensemble, path)
    loaded = load_ensemble(path, tiny_vocab)
    assert loaded.label_names == tiny_ensemble.label_names
    for a, b in zip(tiny_ensemble.members, loaded.members):
        assert a.config == b.config
        for key in a.params:
            assert np.array_equal(a.params[key], b.params[key])
    utt = tiny_corpus.split("dev")[0]
    assert np.array_equal(ensemble_predict(tiny_ensemble, utt),
                          ensemble_predict(loaded, utt))


def test_checkpoint_vocab_hash_mismatch_rejected(tmp_path, tiny_ensemble):
    path = tmp_path / "ens.ckpt"
    save_ensemble(tiny_ensemble, path)
    other = build_vocabulary(make_corpus([(0, ["zzz"], "x", "baseline_train")]))
    with pytest.raises(ValueError, match="hash mismatch"):
        load_ensemble(path, other)


def test_member_forward_uses_unk_for_unseen(tiny_ensemble, tiny_corpus):
    utt = tiny_corpus.split("dev")[0]
    weird = type(utt)(id=utt.id, tokens=("never-in-vocab-token",), gold=utt.gold,
                      split=utt.split)
    probs, _ = member_forward(tiny_ensemble.members[0],
                              tiny_ensemble.vocabulary, weird)
    assert abs(probs.sum() - 1.0) < 1e-9
