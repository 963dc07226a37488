#!/usr/bin/env python3
"""Print each discovered prediction error with its harvested pool neighbors.

A quick qualitative check that the expansion finds genuinely related
utterances and that their gold labels straddle domain boundaries.
"""

import argparse
import os

from alpool.corpus import GeneratorSpec, build_vocabulary, generate_synthetic_corpus
from alpool.neural import default_member_configs, train_ensemble
from alpool.selection import (
    SelectionBudget,
    discover_errors,
    embed_pool,
    neighbor_report,
    select_similarity,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--errors", type=int, default=8,
                        help="number of errors to display")
    parser.add_argument("--k", type=int, default=5)
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    args = parser.parse_args()

    spec = GeneratorSpec(seed=args.seed)
    corpus = generate_synthetic_corpus(spec)
    vocabulary = build_vocabulary(corpus)
    configs = default_member_configs(3, epochs=3, batch_size=128)
    ensemble = train_ensemble(configs, vocabulary, corpus.split("baseline_train"),
                              corpus.label_names, n_jobs=args.jobs)

    errors = discover_errors(ensemble, corpus.split("dev"))[: args.errors]
    store = embed_pool(ensemble, corpus.split("pool"))
    candidates = select_similarity(errors, ensemble, corpus, store,
                                   SelectionBudget(k=args.k, total_budget=500))
    print(neighbor_report(candidates, errors, corpus))


if __name__ == "__main__":
    main()
