"""Swap/add experiment protocols, repeated-run statistics, and reports.

Selection runs once per strategy on the run-0 baseline ensemble; the
selected data is then reused across runs so that run-to-run variation
comes from training randomness alone.  Within one run every condition
shares the corpus, the baseline-removal sample (swap protocol), and the
member training seeds; only the added or swapped data differs.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import seeding, selection, stats
from .corpus import (
    Corpus,
    GeneratorSpec,
    Utterance,
    build_vocabulary,
    generate_synthetic_corpus,
    load_corpus,
    with_split,
)
from .neural import (
    Ensemble,
    ModelConfig,
    default_member_configs,
    evaluate,
    train_ensemble,
)
from .selection import (
    AnnotationResult,
    CandidateSet,
    PredictionError,
    SelectionBudget,
    annotate_with_oracle,
    discover_errors,
    embed_pool,
    select_entropy,
    select_random,
    select_similarity,
)

STRATEGIES = ("similarity", "entropy", "random")
BASELINE_CONDITION = "baseline"

_COUNT_BUCKETS = (("1-20", 1, 20), ("21-40", 21, 40), ("41-60", 41, 60),
                  ("61-80", 61, 80), ("81+", 81, None))
_AGREEMENT_BUCKETS = (("0.00-0.25", 0.0, 0.25), ("0.25-0.50", 0.25, 0.5),
                      ("0.50-0.75", 0.5, 0.75), ("0.75-1.00", 0.75, 1.0 + 1e-12))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a swap or add experiment depends on.

    Exactly one of generator_spec / corpus_path supplies the corpus, and
    exactly one of swap_count / add_count picks the protocol.
    """

    member_configs: tuple[ModelConfig, ...]
    budget: SelectionBudget
    generator_spec: GeneratorSpec | None = None
    corpus_path: str | None = None
    strategies: tuple[str, ...] = ("similarity", "entropy", "random")
    n_runs: int = 11
    base_seed: int = 0
    swap_count: int | None = None
    add_count: int | None = None
    grading_cap: int | None = None
    min_count: int = 1
    n_jobs: int = 1
    effective_config: Mapping[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if (self.generator_spec is None) == (self.corpus_path is None):
            raise ValueError("exactly one of generator_spec/corpus_path is required")
        if not self.member_configs:
            raise ValueError("at least one member config is required")
        if self.n_runs < 2:
            raise ValueError("n_runs must be >= 2 for significance tests")
        if (self.swap_count is None) == (self.add_count is None):
            raise ValueError("exactly one of swap_count/add_count is required")
        for count in (self.swap_count, self.add_count):
            if count is not None and count < 0:
                raise ValueError("swap/add counts must be non-negative")
        unknown = set(self.strategies) - set(STRATEGIES)
        if unknown:
            raise ValueError(f"unknown strategies {sorted(unknown)}")
        if not self.strategies:
            raise ValueError("at least one strategy is required")
        if len(set(self.strategies)) != len(self.strategies):
            raise ValueError("duplicate strategy")
        if self.grading_cap is not None and self.grading_cap < 0:
            raise ValueError("grading_cap must be non-negative")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be >= 1")


@dataclass
class RunMetrics:
    run_index: int
    condition: str
    error_rate: float
    member_error_rates: tuple[float, ...]


@dataclass
class ConditionSummary:
    mean_error_rate: float
    std_error_rate: float
    error_rates: tuple[float, ...]


@dataclass
class PairComparison:
    """RER and significance of `treatment` relative to `reference`."""

    reference: str
    treatment: str
    relative_error_reduction: float
    p_value: float
    p_value_permutation: float
    t_statistic: float
    degrees_of_freedom: float
    permutation_exact: bool


@dataclass
class StrategyAccounting:
    strategy: str
    requested_candidates: int
    graded_count: int
    labeled_count: int
    ood_discarded_count: int
    ood_rate: float
    added_count: int
    shortfall: bool


@dataclass
class ComparisonReport:
    protocol: str
    n_runs: int
    conditions: dict[str, ConditionSummary]
    runs: list[RunMetrics]
    comparisons: list[PairComparison]
    accounting: dict[str, StrategyAccounting]
    effective_config: dict[str, str]


@dataclass
class CorrectionRow:
    error_id: int
    gold_label: int
    corrected: bool
    candidate_count: int
    agreement: float | None


@dataclass
class BucketStat:
    n_errors: int
    n_corrected: int
    correction_rate: float | None


@dataclass
class CorrectionAnalysis:
    rows: list[CorrectionRow]
    count_buckets: dict[str, BucketStat]
    agreement_buckets: dict[str, BucketStat]


@dataclass
class ExperimentResult:
    report: ComparisonReport
    corpus: Corpus
    errors: list[PredictionError]
    candidate_sets: dict[str, CandidateSet]
    annotations: dict[str, AnnotationResult]
    added_ids: dict[str, list[int]]
    correction_analysis: CorrectionAnalysis | None


# ---------------------------------------------------------------------------
# Internals
# ---------------------------------------------------------------------------

def _member_configs_for_run(config: ExperimentConfig, run: int) -> list[ModelConfig]:
    """Per-run reseeded member configs, identical across conditions."""
    return [
        replace(cfg, seed=seeding.derive_seed(config.base_seed, "train", run, i))
        for i, cfg in enumerate(config.member_configs)
    ]


def _condition_job(args):
    (run, condition, member_configs, train_data, blind, label_names,
     min_count, keep_ensemble) = args
    vocabulary = build_vocabulary(train_data, min_count=min_count)
    ensemble = train_ensemble(member_configs, vocabulary, train_data,
                              label_names, n_jobs=1)
    result = evaluate(ensemble, blind)
    n_blind = len(blind)
    member_rates = tuple(
        len(result.member_error_ids[m.model_id]) / n_blind
        for m in sorted(ensemble.members, key=lambda m: m.model_id))
    return (run, condition, result.error_rate, member_rates,
            ensemble if keep_ensemble else None)


def _load_experiment_corpus(config: ExperimentConfig) -> Corpus:
    if config.generator_spec is not None:
        return generate_synthetic_corpus(config.generator_spec)
    return load_corpus(config.corpus_path)


def _select_for_strategy(strategy: str, config: ExperimentConfig,
                         ensemble: Ensemble, corpus: Corpus,
                         errors: Sequence[PredictionError],
                         store: selection.EmbeddingStore,
                         pool: Sequence[Utterance]) -> CandidateSet:
    n_request = min(len(pool), config.budget.total_budget)
    if strategy == "similarity":
        return select_similarity(errors, ensemble, corpus, store, config.budget)
    if strategy == "entropy":
        return select_entropy(ensemble, pool, n_request)
    if strategy == "random":
        return select_random(pool, n_request,
                             seeding.derive_seed(config.base_seed, "select-random"))
    raise ValueError(f"unknown strategy {strategy!r}")


def _run_protocol(config: ExperimentConfig, protocol: str) -> ExperimentResult:
    config.validate()
    if protocol == "swap" and config.swap_count is None:
        raise ValueError("swap protocol requires swap_count")
    if protocol == "add" and config.add_count is None:
        raise ValueError("add protocol requires add_count")
    target = config.swap_count if protocol == "swap" else config.add_count

    corpus = _load_experiment_corpus(config)
    base_train = corpus.split("baseline_train")
    dev = corpus.split("dev")
    pool = corpus.split("pool")
    blind = corpus.split("blind_test")
    if protocol == "swap" and target >= len(base_train):
        raise ValueError("swap_count must be smaller than the baseline train split")
    label_names = corpus.label_names

    vocab0 = build_vocabulary(corpus, min_count=config.min_count)
    run0_configs = _member_configs_for_run(config, 0)
    baseline_ensemble = train_ensemble(run0_configs, vocab0, base_train,
                                       label_names, n_jobs=config.n_jobs)
    errors = discover_errors(baseline_ensemble, dev)
    store = embed_pool(baseline_ensemble, pool)

    candidate_sets: dict[str, CandidateSet] = {}
    annotations: dict[str, AnnotationResult] = {}
    added_utts: dict[str, list[Utterance]] = {}
    accounting: dict[str, StrategyAccounting] = {}
    for strategy in config.strategies:
        cand = _select_for_strategy(strategy, config, baseline_ensemble, corpus,
                                    errors, store, pool)
        ann = annotate_with_oracle(cand, corpus, grading_cap=config.grading_cap,
                                   stop_after_labeled=target)
        added = [with_split(corpus.by_id(uid), "baseline_train")
                 for uid, _ in ann.labeled[:target]]
        candidate_sets[strategy] = cand
        annotations[strategy] = ann
        added_utts[strategy] = added
        accounting[strategy] = StrategyAccounting(
            strategy=strategy,
            requested_candidates=len(cand),
            graded_count=ann.graded_count,
            labeled_count=len(ann.labeled),
            ood_discarded_count=ann.ood_discarded_count,
            ood_rate=ann.ood_rate,
            added_count=len(added),
            shortfall=len(added) < target,
        )

    # Per-run training sets.  The removal sample is drawn per run and
    # shared by every strategy within that run.
    conditions = [BASELINE_CONDITION] + list(config.strategies)
    jobs = []
    for run in range(config.n_runs):
        run_configs = _member_configs_for_run(config, run)
        if protocol == "swap":
            removal_rng = seeding.rng(config.base_seed, "removal", run)
            removed = set(
                int(i) for i in
                removal_rng.choice(len(base_train), size=target, replace=False))
            kept = [u for pos, u in enumerate(base_train) if pos not in removed]
        else:
            kept = list(base_train)
        for condition in conditions:
            if run == 0 and condition == BASELINE_CONDITION:
                continue  # run-0 baseline ensemble already trained above
            if condition == BASELINE_CONDITION:
                train_data = tuple(base_train)
            elif protocol == "swap":
                train_data = tuple(kept + added_utts[condition])
            else:
                train_data = tuple(list(base_train) + added_utts[condition])
            keep_ensemble = run == 0 and condition == "similarity"
            jobs.append((run, condition, run_configs, train_data, blind,
                         label_names, config.min_count, keep_ensemble))

    if config.n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool_exec:
            outcomes = list(pool_exec.map(_condition_job, jobs))
    else:
        outcomes = [_condition_job(job) for job in jobs]

    baseline_eval = evaluate(baseline_ensemble, blind)
    n_blind = len(blind)
    run0_baseline = (0, BASELINE_CONDITION, baseline_eval.error_rate,
                     tuple(len(baseline_eval.member_error_ids[m.model_id]) / n_blind
                           for m in sorted(baseline_ensemble.members,
                                           key=lambda m: m.model_id)),
                     None)
    similarity_run0: Ensemble | None = None
    metrics: list[RunMetrics] = []
    for run, condition, error_rate, member_rates, kept_ens in (
            [run0_baseline] + outcomes):
        if kept_ens is not None:
            similarity_run0 = kept_ens
        metrics.append(RunMetrics(run_index=run, condition=condition,
                                  error_rate=error_rate,
                                  member_error_rates=member_rates))
    metrics.sort(key=lambda m: (m.run_index, conditions.index(m.condition)))

    by_condition: dict[str, list[float]] = {c: [] for c in conditions}
    for m in metrics:
        by_condition[m.condition].append(m.error_rate)
    summaries = {
        c: ConditionSummary(
            mean_error_rate=float(np.mean(rates)),
            std_error_rate=float(np.std(rates, ddof=1)),
            error_rates=tuple(rates))
        for c, rates in by_condition.items()
    }

    comparisons = []
    for reference in conditions:
        for treatment in conditions:
            if reference == treatment:
                continue
            s = stats.compare_runs(by_condition[reference], by_condition[treatment],
                                   seed=config.base_seed)
            comparisons.append(PairComparison(
                reference=reference, treatment=treatment,
                relative_error_reduction=s.relative_error_reduction,
                p_value=s.p_value,
                p_value_permutation=s.p_value_permutation,
                t_statistic=s.t_statistic,
                degrees_of_freedom=s.degrees_of_freedom,
                permutation_exact=s.permutation_exact))

    report = ComparisonReport(
        protocol=protocol,
        n_runs=config.n_runs,
        conditions=summaries,
        runs=metrics,
        comparisons=comparisons,
        accounting=accounting,
        effective_config=dict(config.effective_config),
    )

    correction = None
    if "similarity" in config.strategies and similarity_run0 is not None:
        correction = analyze_corrections(
            baseline_ensemble, similarity_run0, errors,
            candidate_sets["similarity"], annotations["similarity"], corpus,
            added_ids=[u.id for u in added_utts["similarity"]])

    return ExperimentResult(
        report=report,
        corpus=corpus,
        errors=errors,
        candidate_sets=candidate_sets,
        annotations=annotations,
        added_ids={s: [u.id for u in added] for s, added in added_utts.items()},
        correction_analysis=correction,
    )


def run_experiment_swap(config: ExperimentConfig) -> ExperimentResult:
    """Experiment I: constant-size training set with swapped-in selections."""
    return _run_protocol(config, "swap")


def run_experiment_add(config: ExperimentConfig) -> ExperimentResult:
    """Experiment II: grow the training set and account for annotation cost."""
    return _run_protocol(config, "add")


# ---------------------------------------------------------------------------
# Correction analysis
# ---------------------------------------------------------------------------

def bucket_for_count(count: int) -> str | None:
    for name, lo, hi in _COUNT_BUCKETS:
        if count >= lo and (hi is None or count <= hi):
            return name
    return None


def bucket_for_agreement(agreement: float) -> str:
    for name, lo, hi in _AGREEMENT_BUCKETS:
        if lo <= agreement < hi:
            return name
    raise ValueError(f"agreement {agreement} outside [0, 1]")


def aggregate_correction_rows(rows: Sequence[CorrectionRow]) -> tuple[
        dict[str, BucketStat], dict[str, BucketStat]]:
    """Bucket correction rates by candidate count and agreement quartile.

    Buckets partition the errors that received at least one usable
    candidate; zero-candidate errors appear only in the row listing.
    """
    count_stats = {name: [0, 0] for name, _, _ in _COUNT_BUCKETS}
    agree_stats = {name: [0, 0] for name, _, _ in _AGREEMENT_BUCKETS}
    for row in rows:
        if row.candidate_count < 1:
            continue
        cname = bucket_for_count(row.candidate_count)
        count_stats[cname][0] += 1
        count_stats[cname][1] += int(row.corrected)
        aname = bucket_for_agreement(row.agreement)
        agree_stats[aname][0] += 1
        agree_stats[aname][1] += int(row.corrected)

    def finish(raw: dict[str, list[int]]) -> dict[str, BucketStat]:
        return {name: BucketStat(
            n_errors=n, n_corrected=c,
            correction_rate=(c / n) if n else None)
            for name, (n, c) in raw.items()}

    return finish(count_stats), finish(agree_stats)


def analyze_corrections(before_ensemble: Ensemble, after_ensemble: Ensemble,
                        errors: Sequence[PredictionError],
                        candidate_set: CandidateSet,
                        annotation: AnnotationResult, corpus: Corpus,
                        added_ids: Sequence[int] | None = None
                        ) -> CorrectionAnalysis:
    """Per-error correction outcomes after retraining on selected data.

    A candidate counts toward an error when its provenance references the
    error and it was actually labeled in-domain and added to training.
    """
    if added_ids is None:
        added_ids = [uid for uid, _ in annotation.labeled]
    added = set(added_ids)

    attributed: dict[int, set[int]] = {e.utterance_id: set() for e in errors}
    for candidate in candidate_set.candidates:
        if candidate.utterance_id not in added:
            continue
        for record in candidate.provenance:
            if record.source_error_id in attributed:
                attributed[record.source_error_id].add(candidate.utterance_id)

    error_utts = [corpus.by_id(e.utterance_id) for e in errors]
    rows: list[CorrectionRow] = []
    if error_utts:
        after_eval = evaluate(after_ensemble, error_utts)
        for error in errors:
            neighbors = attributed[error.utterance_id]
            count = len(neighbors)
            agreement = None
            if count:
                same = sum(1 for uid in neighbors
                           if corpus.by_id(uid).gold == error.gold_label)
                agreement = same / count
            corrected = after_eval.predictions[error.utterance_id] == error.gold_label
            rows.append(CorrectionRow(error_id=error.utterance_id,
                                      gold_label=error.gold_label,
                                      corrected=corrected,
                                      candidate_count=count,
                                      agreement=agreement))
    count_buckets, agreement_buckets = aggregate_correction_rows(rows)
    return CorrectionAnalysis(rows=rows, count_buckets=count_buckets,
                              agreement_buckets=agreement_buckets)


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def report_to_dict(report: ComparisonReport) -> dict:
    return asdict(report)


def report_from_dict(doc: dict) -> ComparisonReport:
    conditions = {
        name: ConditionSummary(
            mean_error_rate=c["mean_error_rate"],
            std_error_rate=c["std_error_rate"],
            error_rates=tuple(c["error_rates"]))
        for name, c in doc["conditions"].items()}
    runs = [RunMetrics(run_index=r["run_index"], condition=r["condition"],
                       error_rate=r["error_rate"],
                       member_error_rates=tuple(r["member_error_rates"]))
            for r in doc["runs"]]
    comparisons = [PairComparison(**c) for c in doc["comparisons"]]
    accounting = {name: StrategyAccounting(**a)
                  for name, a in doc["accounting"].items()}
    return ComparisonReport(protocol=doc["protocol"], n_runs=doc["n_runs"],
                            conditions=conditions, runs=runs,
                            comparisons=comparisons, accounting=accounting,
                            effective_config=dict(doc["effective_config"]))


def _report_csv(report: ComparisonReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["section", "run_index", "condition", "error_rate",
                     "member_error_rates"])
    for m in report.runs:
        writer.writerow(["run", m.run_index, m.condition, repr(m.error_rate),
                         "|".join(repr(r) for r in m.member_error_rates)])
    writer.writerow(["section", "condition", "mean_error_rate",
                     "std_error_rate", "n_runs"])
    for name in report.conditions:
        c = report.conditions[name]
        writer.writerow(["summary", name, repr(c.mean_error_rate),
                         repr(c.std_error_rate), report.n_runs])
    writer.writerow(["section", "reference", "treatment",
                     "relative_error_reduction", "p_value",
                     "p_value_permutation"])
    for comp in report.comparisons:
        writer.writerow(["comparison", comp.reference, comp.treatment,
                         repr(comp.relative_error_reduction),
                         repr(comp.p_value), repr(comp.p_value_permutation)])
    writer.writerow(["section", "strategy", "requested", "graded", "labeled",
                     "ood_discarded", "ood_rate", "added", "shortfall"])
    for name in report.accounting:
        a = report.accounting[name]
        writer.writerow(["accounting", name, a.requested_candidates,
                         a.graded_count, a.labeled_count,
                         a.ood_discarded_count, repr(a.ood_rate),
                         a.added_count, a.shortfall])
    return buf.getvalue()


def emit_report(report: ComparisonReport, path, fmt: str = "json") -> None:
    """Deterministic serialization; JSON mirrors the dataclasses exactly."""
    if fmt == "json":
        payload = json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"
    elif fmt == "csv":
        payload = _report_csv(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(payload)


def correction_to_dict(analysis: CorrectionAnalysis) -> dict:
    return asdict(analysis)


def default_experiment_config(**overrides) -> ExperimentConfig:
    """Desk-scale defaults: generated corpus, 3-member ensemble, swap 200."""
    fields = dict(
        member_configs=tuple(default_member_configs(3, epochs=3, batch_size=128)),
        budget=SelectionBudget(k=5, total_budget=800),
        generator_spec=GeneratorSpec(),
        strategies=("similarity", "random"),
        n_runs=11,
        base_seed=0,
        swap_count=200,
    )
    fields.update(overrides)
    return ExperimentConfig(**fields)
