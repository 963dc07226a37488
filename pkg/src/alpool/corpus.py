"""Data model, tokenizer, vocabulary, synthetic corpus generator, and JSONL I/O.

The synthetic generator is a desk-scale stand-in for a production usage-log
corpus.  It plants "boundary" utterances between designated domain pairs by
letting those pairs share templates whose only reliable signal is a
discriminative slot filler, and it under-samples those templates in the
training split so that the trained classifier has a genuine coverage gap to
recover from.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import seeding

SPLITS = ("baseline_train", "dev", "pool", "blind_test")

OOD_LABEL = -1
OOD_MARKER = "__OOD__"

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
_N_SPECIALS = 2

# Namespace prefix for context features interned into the vocabulary.  '='
# cannot appear in a tokenized word, so collisions with real tokens are
# impossible.
CONTEXT_PREFIX = "ctx="

_PUNCT = set("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~")


class CorpusError(ValueError):
    """Malformed corpus data or an infeasible generator spec."""


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip punctuation from token edges.

    Intra-word apostrophes and digits survive; tokens that are pure
    punctuation are dropped.  Total function: empty input gives [].
    """
    out = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and raw[start] in _PUNCT:
            start += 1
        while end > start and raw[end - 1] in _PUNCT:
            end -= 1
        if end > start:
            out.append(raw[start:end])
    return out


@dataclass(frozen=True)
class Utterance:
    """One corpus item: tokens, optional context features, label, split."""

    id: int
    tokens: tuple[str, ...]
    gold: int
    split: str
    context: tuple[str, ...] = ()

    def is_ood(self) -> bool:
        return self.gold == OOD_LABEL


@dataclass
class Corpus:
    """An ordered utterance sequence plus the interned label table.

    Immutable by convention after construction; safe for concurrent reads.
    Label ids are contiguous ints in first-appearance order; OOD items
    carry the sentinel ``OOD_LABEL`` and are legal only in the pool split.
    """

    utterances: tuple[Utterance, ...]
    label_names: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    def __getitem__(self, idx: int) -> Utterance:
        return self.utterances[idx]

    @cached_property
    def _by_id(self) -> dict[int, Utterance]:
        return {u.id: u for u in self.utterances}

    @cached_property
    def _by_split(self) -> dict[str, tuple[Utterance, ...]]:
        groups: dict[str, list[Utterance]] = {name: [] for name in SPLITS}
        for u in self.utterances:
            groups[u.split].append(u)
        return {name: tuple(us) for name, us in groups.items()}

    def by_id(self, utterance_id: int) -> Utterance:
        return self._by_id[utterance_id]

    def split(self, name: str) -> tuple[Utterance, ...]:
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        return self._by_split[name]

    @property
    def n_labels(self) -> int:
        return len(self.label_names)

    def validate(self) -> None:
        """Enforce the data-model invariants; raise CorpusError on violation."""
        seen: set[int] = set()
        for u in self.utterances:
            if u.id < 0:
                raise CorpusError(f"utterance id {u.id} is negative")
            if u.id in seen:
                raise CorpusError(f"duplicate utterance id {u.id}")
            seen.add(u.id)
            if not u.tokens:
                raise CorpusError(f"utterance {u.id} has no tokens")
            if u.split not in SPLITS:
                raise CorpusError(f"utterance {u.id} has unknown split {u.split!r}")
            if u.gold == OOD_LABEL:
                if u.split != "pool":
                    raise CorpusError(
                        f"utterance {u.id} is out-of-domain but in split {u.split!r}"
                    )
            elif not 0 <= u.gold < len(self.label_names):
                raise CorpusError(f"utterance {u.id} has out-of-range label {u.gold}")


def make_corpus(items: Iterable[tuple[int, Sequence[str], str, str]] | None = None,
                *,
                utterances: Iterable[tuple] | None = None) -> Corpus:
    """Build a Corpus from (id, tokens, label_name, split[, context]) rows.

    Label names are interned to ids in first-appearance order; the literal
    ``__OOD__`` marks out-of-domain rows.
    """
    rows = list(items if items is not None else utterances or [])
    names: list[str] = []
    index: dict[str, int] = {}
    built = []
    for row in rows:
        uid, tokens, label, split = row[:4]
        context = tuple(row[4]) if len(row) > 4 else ()
        if label == OOD_MARKER:
            gold = OOD_LABEL
        else:
            if label not in index:
                index[label] = len(names)
                names.append(label)
            gold = index[label]
        built.append(Utterance(id=uid, tokens=tuple(tokens), gold=gold,
                               split=split, context=context))
    corpus = Corpus(utterances=tuple(built), label_names=tuple(names))
    corpus.validate()
    return corpus


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

@dataclass
class Vocabulary:
    """Token-to-id map with fixed pad/unk specials at ids 0 and 1.

    Context feature strings are interned under the ``ctx=`` namespace and
    encoded as extra positions appended after the token sequence.
    """

    token_to_id: dict[str, int]

    def __len__(self) -> int:
        return len(self.token_to_id)

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, utterance: Utterance) -> np.ndarray:
        ids = [self.id_for(tok) for tok in utterance.tokens]
        ids.extend(self.id_for(CONTEXT_PREFIX + feat) for feat in utterance.context)
        return np.asarray(ids, dtype=np.int64)

    def content_hash(self) -> str:
        import hashlib

        payload = json.dumps(sorted(self.token_to_id.items())).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def build_vocabulary(corpus: Iterable[Utterance], min_count: int = 1) -> Vocabulary:
    """Vocabulary from the baseline_train split only (no leakage from
    pool/dev/test); tokens below min_count fall back to the unknown id."""
    counts: Counter[str] = Counter()
    saw_train = False
    for u in corpus:
        if u.split != "baseline_train":
            continue
        saw_train = True
        counts.update(u.tokens)
        counts.update(CONTEXT_PREFIX + feat for feat in u.context)
    if not saw_train:
        raise CorpusError("no training data")
    token_to_id = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
    for token in sorted(t for t, c in counts.items() if c >= min_count):
        token_to_id[token] = len(token_to_id)
    return Vocabulary(token_to_id=token_to_id)


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------

_FUNCTION_WORDS = ("the", "a", "my", "to", "for", "me", "please", "on", "in",
                   "what", "is", "can", "you", "now", "this")

_DEFAULT_SPLIT_SIZES: dict[str, int] = {
    "baseline_train": 8_700,
    "dev": 1_000,
    "pool": 20_000,
    "blind_test": 2_000,
}

_DEFAULT_PAIRS = ((0, 1), (2, 3), (4, 5), (6, 7), (8, 9), (10, 11), (12, 13), (14, 15))


@dataclass(frozen=True)
class GeneratorSpec:
    """Knobs for the synthetic corpus.

    ``confusion_pairs`` designates domain pairs that share templates; the
    shared templates carry a discriminative slot whose fillers identify the
    domain, except for a small ambiguous subset.  A ``novel`` fraction of
    each discriminative filler set never appears in baseline_train, which
    plants the coverage gap the selection method is meant to close.
    """

    n_domains: int = 20
    templates_per_domain: int = 12
    slot_fillers_per_slot: int = 12
    confusion_pairs: tuple[tuple[int, int], ...] = _DEFAULT_PAIRS
    ood_fraction_of_pool: float = 0.25
    split_sizes: Mapping[str, int] = field(
        default_factory=lambda: dict(_DEFAULT_SPLIT_SIZES))
    seed: int = 0
    shared_template_fraction: float = 0.3
    ambiguous_filler_fraction: float = 0.15
    novel_filler_fraction: float = 0.5
    boundary_train_weight: float = 0.25

    def n_shared_templates(self) -> int:
        if not self.confusion_pairs:
            return 0
        return int(round(self.shared_template_fraction * self.templates_per_domain))

    def validate(self) -> None:
        if self.n_domains < 2:
            raise CorpusError("need at least 2 domains")
        if self.templates_per_domain < 1 or self.slot_fillers_per_slot < 1:
            raise CorpusError("templates_per_domain and slot_fillers_per_slot must be positive")
        if not 0.0 <= self.ood_fraction_of_pool < 1.0:
            raise CorpusError("ood_fraction_of_pool must lie in [0, 1)")
        if set(self.split_sizes) != set(SPLITS):
            raise CorpusError(f"split_sizes must define exactly {SPLITS}")
        for name, size in self.split_sizes.items():
            if size < 1:
                raise CorpusError(f"split size for {name!r} must be positive")
        seen_pairs = set()
        membership: Counter[int] = Counter()
        for a, b in self.confusion_pairs:
            if not (0 <= a < self.n_domains and 0 <= b < self.n_domains):
                raise CorpusError(f"confusion pair ({a}, {b}) references an unknown domain")
            if a == b:
                raise CorpusError(f"confusion pair ({a}, {b}) pairs a domain with itself")
            key = (min(a, b), max(a, b))
            if key in seen_pairs:
                raise CorpusError(f"duplicate confusion pair ({a}, {b})")
            seen_pairs.add(key)
            membership[a] += 1
            membership[b] += 1
        n_shared = self.n_shared_templates()
        if self.confusion_pairs and n_shared < 1:
            raise CorpusError(
                "shared_template_fraction too small: confusion pairs would share no templates")
        for domain, pair_count in membership.items():
            if pair_count * n_shared > self.templates_per_domain:
                raise CorpusError(
                    f"domain {domain} sits in {pair_count} confusion pairs needing "
                    f"{pair_count * n_shared} shared templates but only has "
                    f"{self.templates_per_domain}")
        if not 0.0 <= self.ambiguous_filler_fraction < 1.0:
            raise CorpusError("ambiguous_filler_fraction must lie in [0, 1)")
        if not 0.0 <= self.novel_filler_fraction < 1.0:
            raise CorpusError("novel_filler_fraction must lie in [0, 1)")
        if not 0.0 < self.boundary_train_weight <= 1.0:
            raise CorpusError("boundary_train_weight must lie in (0, 1]")


_CONSONANTS = "bdfglmnprstvz"
_VOWELS = "aeiou"


class _Words:
    """Pronounceable unique pseudo-word factory, deterministic per rng."""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._used = set(_FUNCTION_WORDS) | {PAD_TOKEN, UNK_TOKEN, OOD_MARKER}

    def new(self) -> str:
        while True:
            n_syll = int(self._rng.integers(2, 4))
            parts = []
            for _ in range(n_syll):
                parts.append(_CONSONANTS[int(self._rng.integers(len(_CONSONANTS)))])
                parts.append(_VOWELS[int(self._rng.integers(len(_VOWELS)))])
            if self._rng.random() < 0.35:
                parts.append(_CONSONANTS[int(self._rng.integers(len(_CONSONANTS)))])
            word = "".join(parts)
            if word not in self._used:
                self._used.add(word)
                return word

    def batch(self, n: int) -> list[str]:
        return [self.new() for _ in range(n)]


@dataclass
class _PlainSlot:
    fillers: list[str]


@dataclass
class _PairSlot:
    # domain id -> (established fillers, novel fillers); novel ones never
    # appear in baseline_train.
    by_domain: dict[int, tuple[list[str], list[str]]]
    ambiguous: list[str]


@dataclass
class _Template:
    parts: list[str | int]          # literal token or index into slots
    slots: list[_PlainSlot | _PairSlot]
    shared: bool


@dataclass
class _Domain:
    name: str
    templates: list[_Template]


def _make_own_template(rng, words, verbs, keywords, slots) -> _Template:
    parts: list[str | int] = [verbs[int(rng.integers(len(verbs)))]]
    if rng.random() < 0.5:
        parts.append(_FUNCTION_WORDS[int(rng.integers(len(_FUNCTION_WORDS)))])
    parts.append(keywords[int(rng.integers(len(keywords)))])
    slot = slots[int(rng.integers(len(slots)))]
    parts.append(0)
    template_slots: list[_PlainSlot | _PairSlot] = [slot]
    if rng.random() < 0.4:
        parts.append(_FUNCTION_WORDS[int(rng.integers(len(_FUNCTION_WORDS)))])
        parts.append(keywords[int(rng.integers(len(keywords)))])
    return _Template(parts=parts, slots=template_slots, shared=False)


def _make_shared_template(rng, connector_verbs, connector_words,
                          pair_slot) -> _Template:
    """Boundary template: corpus-global connector literals plus the pair slot.

    The connectors carry no domain signal, so the instance's label is
    recoverable only from the discriminative filler.
    """
    parts: list[str | int] = [connector_verbs[int(rng.integers(len(connector_verbs)))]]
    if rng.random() < 0.5:
        parts.append(_FUNCTION_WORDS[int(rng.integers(len(_FUNCTION_WORDS)))])
    parts.append(connector_words[int(rng.integers(len(connector_words)))])
    parts.append(0)
    if rng.random() < 0.4:
        parts.append(_FUNCTION_WORDS[int(rng.integers(len(_FUNCTION_WORDS)))])
        parts.append(connector_words[int(rng.integers(len(connector_words)))])
    return _Template(parts=parts, slots=[pair_slot], shared=True)


def _build_domains(spec: GeneratorSpec,
                   rng: np.random.Generator) -> tuple[list[_Domain], _Words]:
    words = _Words(rng)
    n_shared = spec.n_shared_templates()

    domains = []
    for _ in range(spec.n_domains):
        name = words.new()
        keywords = words.batch(6)
        verbs = words.batch(2)
        slots = [_PlainSlot(words.batch(spec.slot_fillers_per_slot)) for _ in range(2)]
        templates = [
            _make_own_template(rng, words, verbs, keywords, slots)
            for _ in range(spec.templates_per_domain)
        ]
        domains.append(_Domain(name=name, templates=templates))

    # Replace tail templates of each paired domain with templates the pair
    # shares.  The shared templates' only domain signal is the pair slot;
    # their literals and the ambiguous fillers come from corpus-wide pools,
    # so boundary text looks alike across pairs and the same ambiguous word
    # legitimately occurs under many gold labels.
    ambiguous_fillers = words.batch(max(2, spec.slot_fillers_per_slot // 2))
    connector_verbs = words.batch(3)
    connector_words = words.batch(6)
    replace_cursor = {d: spec.templates_per_domain for d in range(spec.n_domains)}
    for a, b in spec.confusion_pairs:
        n_dis = spec.slot_fillers_per_slot
        n_novel = int(round(spec.novel_filler_fraction * n_dis))
        by_domain = {}
        for d in (a, b):
            fillers = words.batch(n_dis)
            by_domain[d] = (fillers[: n_dis - n_novel], fillers[n_dis - n_novel:])
        pair_slot = _PairSlot(by_domain=by_domain, ambiguous=ambiguous_fillers)
        shared = [
            _make_shared_template(rng, connector_verbs, connector_words, pair_slot)
            for _ in range(n_shared)
        ]
        for d in (a, b):
            hi = replace_cursor[d]
            domains[d].templates[hi - n_shared: hi] = shared
            replace_cursor[d] = hi - n_shared
    return domains, words


def _instantiate(template: _Template, domain_id: int, split: str,
                 spec: GeneratorSpec, rng: np.random.Generator) -> list[str]:
    tokens = []
    for part in template.parts:
        if isinstance(part, str):
            tokens.append(part)
            continue
        slot = template.slots[part]
        if isinstance(slot, _PlainSlot):
            tokens.append(slot.fillers[int(rng.integers(len(slot.fillers)))])
        else:
            if slot.ambiguous and rng.random() < spec.ambiguous_filler_fraction:
                tokens.append(slot.ambiguous[int(rng.integers(len(slot.ambiguous)))])
            else:
                established, novel = slot.by_domain[domain_id]
                pool = established if split == "baseline_train" else established + novel
                tokens.append(pool[int(rng.integers(len(pool)))])
    return tokens


def _ood_tokens(domains: list[_Domain], spec: GeneratorSpec,
                rng: np.random.Generator, words: _Words) -> list[str]:
    a, b = rng.choice(spec.n_domains, size=2, replace=False)
    a, b = int(a), int(b)
    ta = domains[a].templates[int(rng.integers(len(domains[a].templates)))]
    tb = domains[b].templates[int(rng.integers(len(domains[b].templates)))]
    toks_a = _instantiate(ta, a if not ta.shared else _shared_side(ta, a), "pool", spec, rng)
    toks_b = _instantiate(tb, b if not tb.shared else _shared_side(tb, b), "pool", spec, rng)
    # Asymmetric cut points: splices range from near-pure one-domain text
    # (confidently misrouted) to balanced mixtures (maximally confusing).
    cut_a = int(rng.integers(1, len(toks_a) + 1))
    cut_b = int(rng.integers(0, len(toks_b)))
    tokens = toks_a[:cut_a] + toks_b[cut_b:]
    if rng.random() < 0.3:
        tokens[int(rng.integers(len(tokens)))] = words.new()
    return tokens


def _shared_side(template: _Template, preferred: int) -> int:
    (pair_slot,) = [s for s in template.slots if isinstance(s, _PairSlot)]
    if preferred in pair_slot.by_domain:
        return preferred
    return sorted(pair_slot.by_domain)[0]


def generate_synthetic_corpus(spec: GeneratorSpec) -> Corpus:
    """Deterministic synthetic corpus per the spec'd sizes and seed.

    The pool split contains exactly round(ood_fraction_of_pool * pool_size)
    out-of-domain utterances made by splicing templates of two domains and
    occasionally substituting a never-seen token.
    """
    spec.validate()
    rng = seeding.rng(spec.seed, "corpus")
    domains, words = _build_domains(spec, rng)

    rows: list[tuple[int, list[str], str, str]] = []
    next_id = 0

    def add(tokens: list[str], label: str, split: str) -> None:
        nonlocal next_id
        rows.append((next_id, tokens, label, split))
        next_id += 1

    def sample_in_domain(split: str) -> tuple[list[str], str]:
        d = int(rng.integers(spec.n_domains))
        dom = domains[d]
        if split == "baseline_train":
            weights = np.array(
                [spec.boundary_train_weight if t.shared else 1.0 for t in dom.templates])
            weights = weights / weights.sum()
            t_idx = int(rng.choice(len(dom.templates), p=weights))
        else:
            t_idx = int(rng.integers(len(dom.templates)))
        tokens = _instantiate(dom.templates[t_idx], d, split, spec, rng)
        return tokens, dom.name

    for split in SPLITS:
        size = spec.split_sizes[split]
        if split == "pool":
            n_ood = int(round(spec.ood_fraction_of_pool * size))
            ood_positions = set(
                int(i) for i in rng.choice(size, size=n_ood, replace=False))
            for pos in range(size):
                if pos in ood_positions:
                    add(_ood_tokens(domains, spec, rng, words), OOD_MARKER, split)
                else:
                    tokens, name = sample_in_domain(split)
                    add(tokens, name, split)
        else:
            for _ in range(size):
                tokens, name = sample_in_domain(split)
                add(tokens, name, split)

    return make_corpus(rows)


# ---------------------------------------------------------------------------
# JSONL persistence
# ---------------------------------------------------------------------------

_ALLOWED_KEYS = {"id", "text", "tokens", "context", "label", "split"}


def save_corpus(corpus: Corpus, path) -> None:
    """One JSON object per line; label ids are written as label names."""
    with open(path, "w", encoding="utf-8") as handle:
        for u in corpus:
            obj: dict = {"id": u.id, "tokens": list(u.tokens)}
            if u.context:
                obj["context"] = list(u.context)
            obj["label"] = OOD_MARKER if u.is_ood() else corpus.label_names[u.gold]
            obj["split"] = u.split
            handle.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
            handle.write("\n")


def load_corpus(path) -> Corpus:
    """Parse a JSONL corpus file, rejecting unknown fields and duplicate ids.

    Errors carry the 1-based line number.  Label names are interned in
    first-appearance order, so save_corpus followed by load_corpus is the
    identity on corpora produced by this package.
    """
    rows: list[tuple[int, list[str], str, str, list[str]]] = []
    seen_ids: set[int] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                raise CorpusError(f"line {lineno}: empty line")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"line {lineno}: expected a JSON object")
            unknown = set(obj) - _ALLOWED_KEYS
            if unknown:
                raise CorpusError(
                    f"line {lineno}: unknown field {sorted(unknown)[0]!r}")
            for key in ("id", "label", "split"):
                if key not in obj:
                    raise CorpusError(f"line {lineno}: missing field {key!r}")
            if ("text" in obj) == ("tokens" in obj):
                raise CorpusError(
                    f"line {lineno}: exactly one of 'text' or 'tokens' is required")
            uid = obj["id"]
            if not isinstance(uid, int) or isinstance(uid, bool) or uid < 0:
                raise CorpusError(f"line {lineno}: id must be a non-negative integer")
            if uid in seen_ids:
                raise CorpusError(f"line {lineno}: duplicate id {uid}")
            seen_ids.add(uid)
            if "tokens" in obj:
                tokens = obj["tokens"]
                if (not isinstance(tokens, list)
                        or not all(isinstance(t, str) and t for t in tokens)):
                    raise CorpusError(
                        f"line {lineno}: tokens must be a list of non-empty strings")
            else:
                if not isinstance(obj["text"], str):
                    raise CorpusError(f"line {lineno}: text must be a string")
                tokens = tokenize(obj["text"])
            if not tokens:
                raise CorpusError(f"line {lineno}: utterance has no tokens")
            context = obj.get("context", [])
            if (not isinstance(context, list)
                    or not all(isinstance(c, str) and c for c in context)):
                raise CorpusError(
                    f"line {lineno}: context must be a list of non-empty strings")
            label = obj["label"]
            if not isinstance(label, str) or not label:
                raise CorpusError(f"line {lineno}: label must be a non-empty string")
            split = obj["split"]
            if split not in SPLITS:
                raise CorpusError(f"line {lineno}: unknown split {split!r}")
            if label == OOD_MARKER and split != "pool":
                raise CorpusError(
                    f"line {lineno}: out-of-domain utterances are only legal in the pool split")
            rows.append((uid, tokens, label, split, context))
    return make_corpus(rows)


def with_split(utterance: Utterance, split: str) -> Utterance:
    """Copy of the utterance reassigned to another split (id and label kept)."""
    return replace(utterance, split=split)
