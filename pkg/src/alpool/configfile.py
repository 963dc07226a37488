"""Flat key=value experiment configuration files.

One `key = value` pair per line; blank lines and `#` comments are
ignored.  Command-line overrides use the same keys as flags
(`--exp.n_runs 3`) and win over file values.  Unknown keys are rejected,
never ignored.
"""

from __future__ import annotations

import re
from dataclasses import replace
from typing import Callable, Mapping

from .corpus import GeneratorSpec, SPLITS
from .harness import ExperimentConfig
from .neural import ModelConfig, default_member_configs
from .selection import SelectionBudget

DEFAULT_EXPERIMENT_MEMBERS = 3


class ConfigError(ValueError):
    """Bad config file contents or values."""


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_int(raw: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {raw!r}") from exc


def _parse_float(raw: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {raw!r}") from exc


def _parse_optional_int(raw: str) -> int | None:
    if raw.strip().lower() == "none":
        return None
    return _parse_int(raw)


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    items = [part.strip() for part in raw.split(",") if part.strip()]
    if not items:
        raise ConfigError("expected a comma-separated list of integers")
    return tuple(_parse_int(item) for item in items)


def _parse_pairs(raw: str) -> tuple[tuple[int, int], ...]:
    raw = raw.strip()
    if not raw or raw.lower() == "none":
        return ()
    pairs = []
    for part in raw.split(","):
        part = part.strip()
        m = re.fullmatch(r"(\d+)-(\d+)", part)
        if not m:
            raise ConfigError(f"expected pairs like 0-1,2-3, got {part!r}")
        pairs.append((int(m.group(1)), int(m.group(2))))
    return tuple(pairs)


def _parse_str_tuple(raw: str) -> tuple[str, ...]:
    items = tuple(part.strip() for part in raw.split(",") if part.strip())
    if not items:
        raise ConfigError("expected a comma-separated list")
    return items


_IDENT = lambda raw: raw.strip()

# key (or regex for member keys) -> value parser
_MEMBER_FIELDS: dict[str, Callable[[str], object]] = {
    "embedding_dim": _parse_int,
    "hidden_dim": _parse_int,
    "ff_dims": _parse_int_tuple,
    "dropout": _parse_float,
    "seed": _parse_int,
    "summarization_mode": _IDENT,
    "su_mode": _IDENT,
    "learning_rate": _parse_float,
    "epochs": _parse_int,
    "batch_size": _parse_int,
}

_PLAIN_KEYS: dict[str, Callable[[str], object]] = {
    "corpus.path": _IDENT,
    "corpus.n_domains": _parse_int,
    "corpus.templates_per_domain": _parse_int,
    "corpus.slot_fillers_per_slot": _parse_int,
    "corpus.confusion_pairs": _parse_pairs,
    "corpus.ood_fraction_of_pool": _parse_float,
    "corpus.seed": _parse_int,
    "corpus.shared_template_fraction": _parse_float,
    "corpus.ambiguous_filler_fraction": _parse_float,
    "corpus.novel_filler_fraction": _parse_float,
    "corpus.boundary_train_weight": _parse_float,
    "ensemble.M": _parse_int,
    "budget.k": _parse_int,
    "budget.total": _parse_int,
    "exp.n_runs": _parse_int,
    "exp.swap_count": _parse_optional_int,
    "exp.add_count": _parse_optional_int,
    "exp.grading_cap": _parse_optional_int,
    "exp.base_seed": _parse_int,
    "exp.strategies": _parse_str_tuple,
    "exp.n_jobs": _parse_int,
    "exp.min_count": _parse_int,
    "select.strategy": _IDENT,
    "select.count": _parse_int,
    "select.seed": _parse_int,
    "model.path": _IDENT,
    "report.in": _IDENT,
    "artifacts.path": _IDENT,
    "format": _IDENT,
    "out": _IDENT,
}

for _split in SPLITS:
    _PLAIN_KEYS[f"corpus.split.{_split}"] = _parse_int

_MEMBER_KEY = re.compile(r"ensemble\.member\.(\d+)\.([a-z_]+)")
_DEFAULT_KEY = re.compile(r"ensemble\.default\.([a-z_]+)")


def parser_for(key: str) -> Callable[[str], object] | None:
    if key in _PLAIN_KEYS:
        return _PLAIN_KEYS[key]
    m = _MEMBER_KEY.fullmatch(key) or _DEFAULT_KEY.fullmatch(key)
    if m:
        field = m.group(m.lastindex)
        return _MEMBER_FIELDS.get(field)
    return None


def is_known_key(key: str) -> bool:
    return parser_for(key) is not None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw key -> string-value map; key syntax and knownness are checked."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if not is_known_key(key):
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = raw
    return values


def parse_config_file(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config_text(handle.read(), source=str(path))


def typed_value(key: str, raw: str):
    parser = parser_for(key)
    if parser is None:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return parser(raw)
    except ConfigError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


# ---------------------------------------------------------------------------
# Flat config -> domain objects
# ---------------------------------------------------------------------------

def generator_spec_from_flat(flat: Mapping[str, str]) -> GeneratorSpec:
    spec = GeneratorSpec()
    fields = {}
    mapping = {
        "corpus.n_domains": "n_domains",
        "corpus.templates_per_domain": "templates_per_domain",
        "corpus.slot_fillers_per_slot": "slot_fillers_per_slot",
        "corpus.confusion_pairs": "confusion_pairs",
        "corpus.ood_fraction_of_pool": "ood_fraction_of_pool",
        "corpus.seed": "seed",
        "corpus.shared_template_fraction": "shared_template_fraction",
        "corpus.ambiguous_filler_fraction": "ambiguous_filler_fraction",
        "corpus.novel_filler_fraction": "novel_filler_fraction",
        "corpus.boundary_train_weight": "boundary_train_weight",
    }
    for key, attr in mapping.items():
        if key in flat:
            fields[attr] = typed_value(key, flat[key])
    split_sizes = dict(spec.split_sizes)
    for split in SPLITS:
        key = f"corpus.split.{split}"
        if key in flat:
            split_sizes[split] = typed_value(key, flat[key])
    fields["split_sizes"] = split_sizes
    return replace(spec, **fields)


def member_configs_from_flat(flat: Mapping[str, str]) -> tuple[ModelConfig, ...]:
    explicit_members: dict[int, dict[str, object]] = {}
    defaults: dict[str, object] = {}
    for key, raw in flat.items():
        m = _MEMBER_KEY.fullmatch(key)
        if m:
            idx, field = int(m.group(1)), m.group(2)
            if field not in _MEMBER_FIELDS:
                raise ConfigError(f"unknown member field {field!r}")
            explicit_members.setdefault(idx, {})[field] = typed_value(key, raw)
            continue
        d = _DEFAULT_KEY.fullmatch(key)
        if d:
            field = d.group(1)
            if field not in _MEMBER_FIELDS:
                raise ConfigError(f"unknown member field {field!r}")
            defaults[field] = typed_value(key, raw)

    n_members = typed_value("ensemble.M", flat["ensemble.M"]) \
        if "ensemble.M" in flat else None
    if n_members is None:
        n_members = (max(explicit_members) + 1 if explicit_members
                     else DEFAULT_EXPERIMENT_MEMBERS)
    if explicit_members and max(explicit_members) >= n_members:
        raise ConfigError("ensemble.member index exceeds ensemble.M")

    base_seed = defaults.get("seed", 0)
    base = default_member_configs(n_members, base_seed=int(base_seed))
    configs = []
    for i, cfg in enumerate(base):
        fields = {k: v for k, v in defaults.items() if k != "seed"}
        fields.update(explicit_members.get(i, {}))
        configs.append(replace(cfg, **fields))
    return tuple(configs)


def experiment_config_from_flat(flat: Mapping[str, str]) -> ExperimentConfig:
    for key in flat:
        if not is_known_key(key):
            raise ConfigError(f"unknown config key {key!r}")
    if "corpus.path" in flat:
        generator_spec = None
        corpus_path = flat["corpus.path"]
    else:
        generator_spec = generator_spec_from_flat(flat)
        corpus_path = None
    budget = SelectionBudget(
        k=typed_value("budget.k", flat["budget.k"]) if "budget.k" in flat else 5,
        total_budget=(typed_value("budget.total", flat["budget.total"])
                      if "budget.total" in flat else 800),
    )
    config = ExperimentConfig(
        member_configs=member_configs_from_flat(flat),
        budget=budget,
        generator_spec=generator_spec,
        corpus_path=corpus_path,
        strategies=(typed_value("exp.strategies", flat["exp.strategies"])
                    if "exp.strategies" in flat else ("similarity", "random")),
        n_runs=(typed_value("exp.n_runs", flat["exp.n_runs"])
                if "exp.n_runs" in flat else 11),
        base_seed=(typed_value("exp.base_seed", flat["exp.base_seed"])
                   if "exp.base_seed" in flat else 0),
        swap_count=(typed_value("exp.swap_count", flat["exp.swap_count"])
                    if "exp.swap_count" in flat else None),
        add_count=(typed_value("exp.add_count", flat["exp.add_count"])
                   if "exp.add_count" in flat else None),
        grading_cap=(typed_value("exp.grading_cap", flat["exp.grading_cap"])
                     if "exp.grading_cap" in flat else None),
        min_count=(typed_value("exp.min_count", flat["exp.min_count"])
                   if "exp.min_count" in flat else 1),
        n_jobs=(typed_value("exp.n_jobs", flat["exp.n_jobs"])
                if "exp.n_jobs" in flat else 1),
        effective_config=dict(flat),
    )
    return config


# ---------------------------------------------------------------------------
# Domain objects -> flat config (for --print-effective-config and reports)
# ---------------------------------------------------------------------------

def flatten_generator_spec(spec: GeneratorSpec) -> dict[str, str]:
    flat = {
        "corpus.n_domains": str(spec.n_domains),
        "corpus.templates_per_domain": str(spec.templates_per_domain),
        "corpus.slot_fillers_per_slot": str(spec.slot_fillers_per_slot),
        "corpus.confusion_pairs": ",".join(f"{a}-{b}" for a, b in spec.confusion_pairs)
                                  or "none",
        "corpus.ood_fraction_of_pool": repr(spec.ood_fraction_of_pool),
        "corpus.seed": str(spec.seed),
        "corpus.shared_template_fraction": repr(spec.shared_template_fraction),
        "corpus.ambiguous_filler_fraction": repr(spec.ambiguous_filler_fraction),
        "corpus.novel_filler_fraction": repr(spec.novel_filler_fraction),
        "corpus.boundary_train_weight": repr(spec.boundary_train_weight),
    }
    for split in SPLITS:
        flat[f"corpus.split.{split}"] = str(spec.split_sizes[split])
    return flat


def flatten_member_config(index: int, cfg: ModelConfig) -> dict[str, str]:
    prefix = f"ensemble.member.{index}."
    return {
        prefix + "embedding_dim": str(cfg.embedding_dim),
        prefix + "hidden_dim": str(cfg.hidden_dim),
        prefix + "ff_dims": ",".join(str(d) for d in cfg.ff_dims),
        prefix + "dropout": repr(cfg.dropout),
        prefix + "seed": str(cfg.seed),
        prefix + "summarization_mode": cfg.summarization_mode,
        prefix + "su_mode": cfg.su_mode,
        prefix + "learning_rate": repr(cfg.learning_rate),
        prefix + "epochs": str(cfg.epochs),
        prefix + "batch_size": str(cfg.batch_size),
    }


def flatten_experiment_config(config: ExperimentConfig) -> dict[str, str]:
    flat: dict[str, str] = {}
    if config.corpus_path is not None:
        flat["corpus.path"] = config.corpus_path
    else:
        flat.update(flatten_generator_spec(config.generator_spec))
    flat["ensemble.M"] = str(len(config.member_configs))
    for i, cfg in enumerate(config.member_configs):
        flat.update(flatten_member_config(i, cfg))
    flat["budget.k"] = str(config.budget.k)
    flat["budget.total"] = str(config.budget.total_budget)
    flat["exp.n_runs"] = str(config.n_runs)
    flat["exp.base_seed"] = str(config.base_seed)
    flat["exp.strategies"] = ",".join(config.strategies)
    flat["exp.swap_count"] = ("none" if config.swap_count is None
                              else str(config.swap_count))
    flat["exp.add_count"] = ("none" if config.add_count is None
                             else str(config.add_count))
    flat["exp.grading_cap"] = ("none" if config.grading_cap is None
                               else str(config.grading_cap))
    flat["exp.min_count"] = str(config.min_count)
    flat["exp.n_jobs"] = str(config.n_jobs)
    return flat


def render_config(flat: Mapping[str, str]) -> str:
    lines = [f"{key} = {flat[key]}" for key in sorted(flat)]
    return "\n".join(lines) + "\n"
