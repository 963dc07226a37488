import pytest

from alpool.corpus import GeneratorSpec, build_vocabulary, generate_synthetic_corpus
from alpool.neural import default_member_configs, train_ensemble

TINY_SPEC = GeneratorSpec(
    n_domains=4,
    templates_per_domain=6,
    slot_fillers_per_slot=6,
    confusion_pairs=((0, 1), (2, 3)),
    ood_fraction_of_pool=0.25,
    split_sizes={"baseline_train": 240, "dev": 120, "pool": 400, "blind_test": 120},
    seed=13,
)


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_synthetic_corpus(TINY_SPEC)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_corpus):
    return build_vocabulary(tiny_corpus)


@pytest.fixture(scope="session")
def tiny_ensemble(tiny_corpus, tiny_vocab):
    configs = default_member_configs(2, embedding_dim=12, hidden_dim=10,
                                     ff_dims=(16,), epochs=2, batch_size=64)
    return train_ensemble(configs, tiny_vocab, tiny_corpus.split("baseline_train"),
                          tiny_corpus.label_names)
