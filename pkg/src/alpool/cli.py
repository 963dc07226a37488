"""Command-line entry point: gen-corpus, train, select, simulate, analyze, report.

Exit status 0 on success, 1 on domain errors (message on stderr), 2 on
usage errors.  Every verb accepts --config FILE plus per-key overrides
spelled as flags (e.g. --exp.n_runs 3); command line wins over the file.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import configfile, harness, selection
from .configfile import ConfigError
from .corpus import CorpusError, build_vocabulary, generate_synthetic_corpus, \
    load_corpus, save_corpus
from .harness import (
    CorrectionRow,
    aggregate_correction_rows,
    correction_to_dict,
    emit_report,
    report_from_dict,
    run_experiment_add,
    run_experiment_swap,
)
from .neural import load_ensemble, save_ensemble, train_ensemble
from .selection import (
    SelectionBudget,
    discover_errors,
    embed_pool,
    neighbor_report,
    save_candidates,
    select_entropy,
    select_random,
    select_similarity,
)

VERBS = ("gen-corpus", "train", "select", "simulate", "analyze", "report")


class _UsageError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alpool", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="primary seed for this verb")
        p.add_argument("--print-effective-config", action="store_true",
                       help="print the merged flat config before running")

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out", help="output corpus JSONL path")

    p = sub.add_parser("train", help="train an ensemble on baseline_train")
    common(p)
    p.add_argument("--corpus", required=True, help="corpus JSONL path")
    p.add_argument("--out", help="output checkpoint path")
    p.add_argument("--members", type=int, help="ensemble size")

    p = sub.add_parser("select", help="propose pool candidates for annotation")
    common(p)
    p.add_argument("--corpus", required=True, help="corpus JSONL path")
    p.add_argument("--model", required=True, help="ensemble checkpoint path")
    p.add_argument("--strategy", required=True,
                   choices=("similarity", "entropy", "random"))
    p.add_argument("--out", help="output candidates JSONL path")
    p.add_argument("--k", type=int, help="neighbors per embedding function")
    p.add_argument("--count", type=int, help="max candidates to propose")
    p.add_argument("--neighbors", help="also write a neighbor report here")

    p = sub.add_parser("simulate", help="run the swap or add experiment")
    common(p)
    p.add_argument("--out", help="output report path")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--artifacts", help="directory for audit artifacts")

    p = sub.add_parser("analyze", help="recompute correction analysis from artifacts")
    common(p)
    p.add_argument("--artifacts", required=True, help="artifacts directory")
    p.add_argument("--out", help="output analysis JSON path")

    p = sub.add_parser("report", help="re-emit a report in another format")
    common(p)
    p.add_argument("--in", dest="in_path", required=True, help="report JSON path")
    p.add_argument("--out", help="output path")
    p.add_argument("--format", choices=("json", "csv"))

    return parser


def _collect_overrides(extras: list[str]) -> dict[str, str]:
    """Turn leftover --key value / --key=value args into config overrides."""
    overrides: dict[str, str] = {}
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--"):
            raise _UsageError(f"unexpected argument {token!r}")
        body = token[2:]
        if "=" in body:
            key, _, value = body.partition("=")
            i += 1
        else:
            key = body
            if i + 1 >= len(extras):
                raise _UsageError(f"option --{key} expects a value")
            value = extras[i + 1]
            i += 2
        if not configfile.is_known_key(key):
            raise _UsageError(f"unknown option --{key}")
        overrides[key] = value
    return overrides


_SEED_KEY_BY_VERB = {
    "gen-corpus": "corpus.seed",
    "train": "ensemble.default.seed",
    "select": "select.seed",
    "simulate": "exp.base_seed",
    "analyze": "exp.base_seed",
    "report": "exp.base_seed",
}


def _merged_flat(args: argparse.Namespace,
                 extras: list[str]) -> tuple[dict[str, str], set[str]]:
    """Merge config file, --seed, and dotted overrides (later wins).

    Returns the merged map plus the keys set on the command line, so verb
    handlers can let convenience flags override file values without
    trampling explicit dotted overrides.
    """
    flat: dict[str, str] = {}
    if args.config:
        flat.update(configfile.parse_config_file(args.config))
    cli_keys: set[str] = set()
    if args.seed is not None:
        key = _SEED_KEY_BY_VERB[args.verb]
        flat[key] = str(args.seed)
        cli_keys.add(key)
    overrides = _collect_overrides(extras)
    flat.update(overrides)
    cli_keys.update(overrides)
    return flat, cli_keys


def _apply_flag(flat: dict[str, str], cli_keys: set[str], key: str,
                value) -> None:
    """A convenience flag beats the config file but not a dotted override."""
    if value is not None and key not in cli_keys:
        flat[key] = str(value)


def _maybe_print_config(args: argparse.Namespace, flat: dict[str, str]) -> None:
    if args.print_effective_config:
        sys.stdout.write(f"# verb: {args.verb}\n")
        sys.stdout.write(configfile.render_config(flat))


def _resolve_out(args: argparse.Namespace, flat: dict[str, str]) -> str:
    """Output path: the command-line flag wins over a config-file `out`."""
    out = args.out if args.out is not None else flat.get("out")
    if not out:
        raise _UsageError("option --out is required")
    return out


# ---------------------------------------------------------------------------
# Verb implementations
# ---------------------------------------------------------------------------

def _cmd_gen_corpus(args, flat: dict[str, str], cli_keys: set[str]) -> int:
    spec = configfile.generator_spec_from_flat(flat)
    effective = configfile.flatten_generator_spec(spec)
    effective["out"] = _resolve_out(args, flat)
    _maybe_print_config(args, effective)
    corpus = generate_synthetic_corpus(spec)
    save_corpus(corpus, effective["out"])
    return 0


def _cmd_train(args, flat: dict[str, str], cli_keys: set[str]) -> int:
    _apply_flag(flat, cli_keys, "ensemble.M", args.members)
    _apply_flag(flat, cli_keys, "corpus.path", args.corpus)
    configs = configfile.member_configs_from_flat(flat)
    min_count = int(flat.get("exp.min_count", "1"))
    n_jobs = int(flat.get("exp.n_jobs", "1"))
    effective = {"corpus.path": flat["corpus.path"],
                 "ensemble.M": str(len(configs)),
                 "exp.min_count": str(min_count), "exp.n_jobs": str(n_jobs),
                 "out": _resolve_out(args, flat)}
    for i, cfg in enumerate(configs):
        effective.update(configfile.flatten_member_config(i, cfg))
    _maybe_print_config(args, effective)

    corpus = load_corpus(effective["corpus.path"])
    vocabulary = build_vocabulary(corpus, min_count=min_count)
    train_split = corpus.split("baseline_train")
    ensemble = train_ensemble(configs, vocabulary, train_split,
                              corpus.label_names, n_jobs=n_jobs)
    save_ensemble(ensemble, effective["out"])
    return 0


def _cmd_select(args, flat: dict[str, str], cli_keys: set[str]) -> int:
    _apply_flag(flat, cli_keys, "corpus.path", args.corpus)
    _apply_flag(flat, cli_keys, "model.path", args.model)
    _apply_flag(flat, cli_keys, "select.strategy", args.strategy)
    _apply_flag(flat, cli_keys, "budget.k", args.k)
    _apply_flag(flat, cli_keys, "select.count", args.count)
    strategy = flat["select.strategy"]
    if strategy not in ("similarity", "entropy", "random"):
        raise ValueError(f"unknown strategy {strategy!r}")
    k = int(flat.get("budget.k", "5"))
    count = int(flat.get("select.count", "100"))
    seed = int(flat.get("select.seed", "0"))
    effective = {"corpus.path": flat["corpus.path"],
                 "model.path": flat["model.path"],
                 "select.strategy": strategy, "budget.k": str(k),
                 "select.count": str(count), "select.seed": str(seed),
                 "out": _resolve_out(args, flat)}
    _maybe_print_config(args, effective)

    corpus = load_corpus(effective["corpus.path"])
    vocabulary = build_vocabulary(corpus)
    ensemble = load_ensemble(effective["model.path"], vocabulary)
    pool = corpus.split("pool")
    if strategy == "similarity":
        errors = discover_errors(ensemble, corpus.split("dev"))
        store = embed_pool(ensemble, pool)
        budget = SelectionBudget(k=k, total_budget=count)
        candidate_set = select_similarity(errors, ensemble, corpus, store, budget)
        if args.neighbors:
            with open(args.neighbors, "w", encoding="utf-8") as handle:
                handle.write(neighbor_report(candidate_set, errors, corpus))
    elif strategy == "entropy":
        candidate_set = select_entropy(ensemble, pool, min(count, len(pool)))
    else:
        candidate_set = select_random(pool, min(count, len(pool)), seed)
    save_candidates(candidate_set, effective["out"])
    return 0


def _write_artifacts(directory: str, result: harness.ExperimentResult) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    save_corpus(result.corpus, root / "corpus.jsonl")
    with open(root / "errors.jsonl", "w", encoding="utf-8") as handle:
        for e in result.errors:
            handle.write(json.dumps({
                "utterance_id": e.utterance_id,
                "gold_label": e.gold_label,
                "ensemble_predicted_label": e.ensemble_predicted_label,
                "erring_member_ids": sorted(e.erring_member_ids),
            }, separators=(",", ":")) + "\n")
    for strategy, candidate_set in result.candidate_sets.items():
        save_candidates(candidate_set, root / f"candidates_{strategy}.jsonl")
        selection.save_annotation(result.annotations[strategy],
                                  root / f"annotation_{strategy}.json")
        with open(root / f"added_{strategy}.json", "w", encoding="utf-8") as handle:
            json.dump(result.added_ids[strategy], handle)
            handle.write("\n")
    if result.correction_analysis is not None:
        with open(root / "correction_analysis.json", "w", encoding="utf-8") as handle:
            json.dump(correction_to_dict(result.correction_analysis), handle,
                      indent=2, sort_keys=True)
            handle.write("\n")
        if "similarity" in result.candidate_sets:
            with open(root / "neighbor_report.txt", "w", encoding="utf-8") as handle:
                handle.write(neighbor_report(result.candidate_sets["similarity"],
                                             result.errors, result.corpus))


def _cmd_simulate(args, flat: dict[str, str], cli_keys: set[str]) -> int:
    config = configfile.experiment_config_from_flat(flat)
    # The report echoes the experiment keys only, so the emitted bytes are
    # independent of where the report is written.
    exp_flat = configfile.flatten_experiment_config(config)
    config = replace(config, effective_config=exp_flat)
    printed = dict(exp_flat)
    printed["out"] = _resolve_out(args, flat)
    printed["format"] = args.format if args.format else flat.get("format", "json")
    _maybe_print_config(args, printed)
    if config.swap_count is not None:
        result = run_experiment_swap(config)
    else:
        result = run_experiment_add(config)
    emit_report(result.report, printed["out"], fmt=printed["format"])
    if args.artifacts:
        _write_artifacts(args.artifacts, result)
    return 0


def _cmd_analyze(args, flat: dict[str, str], cli_keys: set[str]) -> int:
    root = Path(args.artifacts)
    analysis_path = root / "correction_analysis.json"
    if not analysis_path.exists():
        raise FileNotFoundError(f"no correction_analysis.json under {root}")
    with open(analysis_path, "r", encoding="utf-8") as handle:
        stored = json.load(handle)
    rows = [CorrectionRow(**row) for row in stored["rows"]]
    count_buckets, agreement_buckets = aggregate_correction_rows(rows)

    # Recompute agreement fractions from primary artifacts when available.
    verified_agreement = False
    corpus_path = root / "corpus.jsonl"
    cand_path = root / "candidates_similarity.jsonl"
    added_path = root / "added_similarity.json"
    if corpus_path.exists() and cand_path.exists() and added_path.exists():
        corpus = load_corpus(corpus_path)
        candidate_set = selection.load_candidates(cand_path)
        with open(added_path, "r", encoding="utf-8") as handle:
            added = set(json.load(handle))
        attributed: dict[int, set[int]] = {row.error_id: set() for row in rows}
        for candidate in candidate_set.candidates:
            if candidate.utterance_id not in added:
                continue
            for record in candidate.provenance:
                if record.source_error_id in attributed:
                    attributed[record.source_error_id].add(candidate.utterance_id)
        for row in rows:
            neighbors = attributed[row.error_id]
            if len(neighbors) != row.candidate_count:
                raise ValueError(
                    f"error {row.error_id}: candidate_count mismatch "
                    f"({len(neighbors)} recomputed vs {row.candidate_count} stored)")
            if neighbors:
                same = sum(1 for uid in neighbors
                           if corpus.by_id(uid).gold == row.gold_label)
                if same / len(neighbors) != row.agreement:
                    raise ValueError(f"error {row.error_id}: agreement mismatch")
        verified_agreement = True

    stored_counts = {name: stat["n_corrected"]
                     for name, stat in stored["count_buckets"].items()}
    recomputed_counts = {name: stat.n_corrected
                         for name, stat in count_buckets.items()}
    if stored_counts != recomputed_counts:
        raise ValueError("stored count buckets disagree with the per-error rows")

    out_doc = {
        "rows": stored["rows"],
        "count_buckets": {k: vars(v) for k, v in count_buckets.items()},
        "agreement_buckets": {k: vars(v) for k, v in agreement_buckets.items()},
        "verified_agreement": verified_agreement,
    }
    with open(_resolve_out(args, flat), "w", encoding="utf-8") as handle:
        json.dump(out_doc, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return 0


def _cmd_report(args, flat: dict[str, str], cli_keys: set[str]) -> int:
    with open(args.in_path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    report = report_from_dict(doc)
    fmt = args.format if args.format else flat.get("format", "csv")
    emit_report(report, _resolve_out(args, flat), fmt=fmt)
    return 0


_HANDLERS = {
    "gen-corpus": _cmd_gen_corpus,
    "train": _cmd_train,
    "select": _cmd_select,
    "simulate": _cmd_simulate,
    "analyze": _cmd_analyze,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        flat, cli_keys = _merged_flat(args, extras)
        return _HANDLERS[args.verb](args, flat, cli_keys)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, CorpusError, ValueError, KeyError, OSError,
            RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
