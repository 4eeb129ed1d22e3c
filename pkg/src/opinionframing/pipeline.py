"""End-to-end pipeline: configuration, versioned artifacts, and steps.

A run is a directory of plain-file artifacts produced by subcommand steps
that each read the artifacts of earlier steps.  Reproducibility rules:

* The effective configuration (file plus flag overrides) is hashed; every
  artifact's first line records the toolkit version and that hash, and a
  step refuses to consume an artifact produced under a different
  configuration unless forced.
* All randomness derives from one root seed, split deterministically per
  purpose, so two runs with the same configuration and inputs produce
  byte-identical artifacts.
* Timestamps appear only in the ``run.log`` sidecar, never in artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .annotation import (
    AggregationConfig,
    HumanPerfConfig,
    OrdinalConfig,
    estimate_human_performance,
    fit_aggregation,
    fit_ordinal,
    read_annotations,
    read_profiles,
)
from .corpus import (
    Leaning,
    OutletTable,
    dedup_by_title,
    dedup_by_url,
    filter_by_url,
    read_articles,
    write_articles,
)
from .extraction import FilterLexicons, TupleRecord, extract_document
from .faithfulness import (
    EntityRoster,
    MatchConfig,
    faithfulness_report,
    hypocrisy_predicates,
    write_attribution_records,
    write_review_queue,
)
from .framing import (
    FramingLexicons,
    coverage_breakdown,
    device_stats,
    write_framing_stats,
)
from .parses import read_parses
from .stance import (
    LABELS,
    EvalReport,
    LabeledInstance,
    LinearModel,
    StanceConfig,
    classify,
    cross_validate,
    evaluate,
    evaluate_predictions,
    expand_weighted,
    ingest_external_labels,
    majority_baseline,
    read_instances,
    read_stance_labels,
    stratified_split,
    train_linear,
    write_instances,
    write_stance_labels,
)


class PipelineError(Exception):
    """A user-correctable problem: bad config, missing input, stale artifact."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

#: Allowed TOML keys per section; catches typos at load time.
_SCHEMA: Mapping[str, tuple[str, ...]] = {
    "paths": (
        "articles",
        "parses",
        "annotations",
        "profiles",
        "external_labels",
        "outlets",
        "roster",
        "filter_lexicons",
        "framing_lexicons",
    ),
    "filters": ("exclude_wire", "exclude_top_outlets"),
    "seeds": ("root",),
    "stance": (
        "ngram_order",
        "remove_stopwords",
        "convert_digits",
        "reg_type",
        "reg_strength",
        "max_iter",
        "grad_tol",
        "test_size",
        "cv_folds",
    ),
    "aggregation": (
        "sigma_q",
        "sigma_w",
        "sigma_scale_q",
        "sigma_scale_w",
        "fix_vigilance",
        "max_iter",
        "max_outer",
        "grad_tol",
        "outer_tol",
    ),
    "ordinal": (
        "covariates",
        "coef_scale",
        "sigma_q",
        "sigma_w",
        "sigma_scale_q",
        "sigma_scale_w",
        "include_intercept",
        "max_iter",
        "max_outer",
        "grad_tol",
        "outer_tol",
    ),
    "human": ("repeats", "holdout_fraction"),
    "framing": ("min_freq", "fdr", "yates"),
    "faithfulness": ("threshold", "review_floor"),
}

_PATHS_REQUIRED_BY = {
    "articles": "corpus",
    "parses": "extract",
    "annotations": "aggregate",
    "profiles": "demographics",
    "external_labels": "ingest-labels",
}


@dataclass(frozen=True)
class PipelineConfig:
    """Validated, effective configuration for one run."""

    paths: Mapping[str, str]
    exclude_wire: bool
    exclude_top_outlets: int
    seed: int
    stance: StanceConfig
    stance_test_size: int
    stance_cv_folds: int
    aggregation: AggregationConfig
    ordinal: OrdinalConfig
    ordinal_covariates: tuple
    human_repeats: int
    human_holdout_fraction: float
    framing_min_freq: int
    framing_fdr: float
    framing_yates: bool
    match: MatchConfig

    def require_path(self, key: str) -> Path:
        value = self.paths.get(key, "")
        if not value:
            raise PipelineError(
                f"config paths.{key} is required by "
                f"`{_PATHS_REQUIRED_BY.get(key, key)}` but is not set"
            )
        return Path(value)


def _check_unknown_keys(raw: Mapping[str, Any], source: str) -> None:
    for section, table in raw.items():
        if section not in _SCHEMA:
            raise PipelineError(
                f"{source}: unknown config section [{section}]; expected one "
                f"of {sorted(_SCHEMA)}"
            )
        if not isinstance(table, Mapping):
            raise PipelineError(f"{source}: [{section}] must be a table")
        unknown = set(table) - set(_SCHEMA[section])
        if unknown:
            raise PipelineError(
                f"{source}: unknown keys in [{section}]: {sorted(unknown)}"
            )


def load_config(path: str | Path, seed_override: int | None = None) -> tuple:
    """Load and validate a pipeline TOML config.

    Returns ``(config, effective_dict, config_hash)``.  The effective dict
    spells out every setting (defaults filled in, the seed override
    applied) and is what gets hashed, so flag overrides change the hash.
    """
    path = Path(path)
    if not path.exists():
        raise PipelineError(f"config file not found: {path}")
    try:
        with open(path, "rb") as handle:
            raw = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise PipelineError(f"{path}: invalid TOML: {exc}") from exc
    _check_unknown_keys(raw, str(path))

    paths = {key: str(raw.get("paths", {}).get(key, "")) for key in _SCHEMA["paths"]}
    for key, value in paths.items():
        if value and not Path(value).exists():
            raise PipelineError(f"{path}: paths.{key} does not exist: {value}")

    filters = raw.get("filters", {})
    seeds = raw.get("seeds", {})
    stance_raw = dict(raw.get("stance", {}))
    stance_test_size = int(stance_raw.pop("test_size", 200))
    stance_cv_folds = int(stance_raw.pop("cv_folds", 5))
    agg_raw = raw.get("aggregation", {})
    ord_raw = dict(raw.get("ordinal", {}))
    covariates = tuple(ord_raw.pop("covariates", ()))
    human = raw.get("human", {})
    framing = raw.get("framing", {})
    faith = raw.get("faithfulness", {})

    seed = int(seed_override if seed_override is not None else seeds.get("root", 0))
    try:
        config = PipelineConfig(
            paths=paths,
            exclude_wire=bool(filters.get("exclude_wire", False)),
            exclude_top_outlets=int(filters.get("exclude_top_outlets", 0)),
            seed=seed,
            stance=StanceConfig(**stance_raw),
            stance_test_size=stance_test_size,
            stance_cv_folds=stance_cv_folds,
            aggregation=AggregationConfig(**agg_raw),
            ordinal=OrdinalConfig(**ord_raw),
            ordinal_covariates=covariates,
            human_repeats=int(human.get("repeats", 10)),
            human_holdout_fraction=float(human.get("holdout_fraction", 0.1)),
            framing_min_freq=int(framing.get("min_freq", 20)),
            framing_fdr=float(framing.get("fdr", 0.1)),
            framing_yates=bool(framing.get("yates", False)),
            match=MatchConfig(
                threshold=float(faith.get("threshold", 90.0)),
                review_floor=float(faith.get("review_floor", 70.0)),
            ),
        )
    except (TypeError, ValueError) as exc:
        raise PipelineError(f"{path}: {exc}") from exc
    if config.exclude_top_outlets < 0:
        raise PipelineError(f"{path}: filters.exclude_top_outlets must be >= 0")

    effective = _effective_dict(config)
    digest = hashlib.sha256(
        json.dumps(effective, sort_keys=True).encode("utf-8")
    ).hexdigest()[:16]
    return config, effective, digest


def _effective_dict(config: PipelineConfig) -> dict:
    """Every setting spelled out, for hashing and the config echo."""
    return {
        "paths": dict(config.paths),
        "filters": {
            "exclude_wire": config.exclude_wire,
            "exclude_top_outlets": config.exclude_top_outlets,
        },
        "seeds": {"root": config.seed},
        "stance": {
            **config.stance.to_dict(),
            "test_size": config.stance_test_size,
            "cv_folds": config.stance_cv_folds,
        },
        "aggregation": _dataclass_dict(config.aggregation),
        "ordinal": {
            **_dataclass_dict(config.ordinal),
            "covariates": list(config.ordinal_covariates),
        },
        "human": {
            "repeats": config.human_repeats,
            "holdout_fraction": config.human_holdout_fraction,
        },
        "framing": {
            "min_freq": config.framing_min_freq,
            "fdr": config.framing_fdr,
            "yates": config.framing_yates,
        },
        "faithfulness": {
            "threshold": config.match.threshold,
            "review_floor": config.match.review_floor,
        },
    }


def _dataclass_dict(value: Any) -> dict:
    return {k: v for k, v in dataclasses.asdict(value).items()}


def derive_seed(root: int, purpose: str) -> int:
    """Deterministic per-purpose seed derived from the root seed."""
    digest = hashlib.sha256(f"{root}:{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


# ---------------------------------------------------------------------------
# Run context and artifact plumbing
# ---------------------------------------------------------------------------

ARTIFACTS = {
    "corpus.jsonl": "corpus",
    "corpus_summary.json": "corpus",
    "tuples.jsonl": "extract",
    "extract_summary.json": "extract",
    "aggregation.json": "aggregate",
    "aggregate_summary.json": "aggregate",
    "instances.csv": "aggregate",
    "demographics.json": "demographics",
    "human_perf.json": "human-perf",
    "stance_model.json": "train-stance",
    "stance_eval.json": "train-stance",
    "split.json": "train-stance",
    "labels.csv": "classify` or `opinionframing ingest-labels",
    "eval.json": "eval",
    "framing_stats.csv": "framing",
    "coverage.json": "framing",
    "attribution.csv": "faithfulness",
    "review_queue.csv": "faithfulness",
    "faithfulness.json": "faithfulness",
    "summary.json": "report",
    "summary.md": "report",
}

_LOG_NAME = "run.log"
_ECHO_NAME = "config_echo.json"


@dataclass
class RunContext:
    """One run directory plus the effective configuration driving it."""

    config: PipelineConfig
    effective: Mapping[str, Any]
    config_hash: str
    out_dir: Path
    force: bool = False
    _lexicons: FilterLexicons | None = field(default=None, repr=False)

    @classmethod
    def create(
        cls,
        config_path: str | Path,
        out_dir: str | Path,
        seed_override: int | None = None,
        force: bool = False,
    ) -> "RunContext":
        config, effective, digest = load_config(config_path, seed_override)
        ctx = cls(
            config=config,
            effective=effective,
            config_hash=digest,
            out_dir=Path(out_dir),
            force=force,
        )
        ctx.out_dir.mkdir(parents=True, exist_ok=True)
        ctx._write_echo()
        return ctx

    # -- sidecar log (the only place timestamps live) -----------------------

    def log(self, message: str) -> None:
        stamp = datetime.now().isoformat(timespec="seconds")
        with open(self.out_dir / _LOG_NAME, "a", encoding="utf-8") as handle:
            handle.write(f"{stamp} {message}\n")

    # -- artifact envelope ---------------------------------------------------

    @property
    def header(self) -> str:
        return f"# opinionframing {__version__} config {self.config_hash}"

    def _write_echo(self) -> None:
        echo_path = self.out_dir / _ECHO_NAME
        if echo_path.exists():
            recorded = json.loads(
                "\n".join(
                    line
                    for line in echo_path.read_text(encoding="utf-8").splitlines()
                    if not line.startswith("#")
                )
            )
            if recorded.get("config_hash") != self.config_hash and not self.force:
                raise PipelineError(
                    f"{echo_path} records config hash "
                    f"{recorded.get('config_hash')}, but the current "
                    f"configuration hashes to {self.config_hash}; use a fresh "
                    f"--out-dir or pass --force to mix configurations"
                )
        payload = {
            "config_hash": self.config_hash,
            "version": __version__,
            "config": self.effective,
        }
        self.write_json(_ECHO_NAME, payload)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def write_text(self, name: str, body: str) -> Path:
        path = self.path(name)
        if not body.endswith("\n"):
            body += "\n"
        path.write_text(f"{self.header}\n{body}", encoding="utf-8")
        return path

    def write_json(self, name: str, payload: Any) -> Path:
        return self.write_text(
            name, json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False)
        )

    def stamp(self, name: str) -> Path:
        """Prepend the artifact header to a file a module writer produced."""
        path = self.path(name)
        body = path.read_text(encoding="utf-8")
        path.write_text(f"{self.header}\n{body}", encoding="utf-8")
        return path

    def artifact_path(self, name: str) -> Path:
        """Verified path of an existing artifact (for module file readers)."""
        path = self.path(name)
        producer = ARTIFACTS.get(name, name)
        if not path.exists():
            raise PipelineError(
                f"missing artifact {name} in {self.out_dir}; run "
                f"`opinionframing {producer}` first"
            )
        with open(path, encoding="utf-8") as handle:
            first = handle.readline().rstrip("\n")
        parts = first.split()
        if len(parts) != 5 or parts[:2] != ["#", "opinionframing"] or parts[3] != "config":
            raise PipelineError(
                f"{path} is not a pipeline artifact (missing header line)"
            )
        recorded = parts[4]
        if recorded != self.config_hash and not self.force:
            raise PipelineError(
                f"{path} was produced under config hash {recorded}, but the "
                f"current configuration hashes to {self.config_hash}; re-run "
                f"`opinionframing {producer}` or pass --force"
            )
        return path

    def read_body(self, name: str) -> str:
        """Artifact content with the header line removed."""
        path = self.artifact_path(name)
        text = path.read_text(encoding="utf-8")
        return text.split("\n", 1)[1]

    def read_json(self, name: str) -> Any:
        return json.loads(self.read_body(name))

    def has_artifact(self, name: str) -> bool:
        return self.path(name).exists()

    # -- shared resources ----------------------------------------------------

    def outlet_table(self) -> OutletTable:
        custom = self.config.paths.get("outlets", "")
        if custom:
            return OutletTable.from_toml(custom)
        return OutletTable.from_toml(str(_shipped_data("outlets.toml")))

    def filter_lexicons(self) -> FilterLexicons:
        if self._lexicons is None:
            directory = self.config.paths.get("filter_lexicons", "") or None
            self._lexicons = FilterLexicons.load(directory)
        return self._lexicons

    def framing_lexicons(self) -> FramingLexicons:
        custom = self.config.paths.get("framing_lexicons", "") or None
        return FramingLexicons.load(custom)

    def roster(self) -> EntityRoster:
        custom = self.config.paths.get("roster", "") or None
        return EntityRoster.load(custom)


def _shipped_data(name: str) -> Path:
    from importlib import resources

    return Path(str(resources.files("opinionframing").joinpath("data"))) / name


def _read_tag_file(path: Path) -> list:
    tags = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            tags.append(line.lower())
    return tags


# ---------------------------------------------------------------------------
# Tuple artifact I/O (JSONL with the envelope header)
# ---------------------------------------------------------------------------


def _write_tuples(ctx: RunContext, records: Sequence[TupleRecord]) -> Path:
    lines = [
        json.dumps(record.to_json(), ensure_ascii=False) for record in records
    ]
    return ctx.write_text("tuples.jsonl", "\n".join(lines) if lines else "")


def _read_tuples(ctx: RunContext) -> list:
    body = ctx.read_body("tuples.jsonl")
    records = []
    for lineno, line in enumerate(body.splitlines(), start=2):
        line = line.strip()
        if not line:
            continue
        try:
            records.append(TupleRecord.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError) as exc:
            raise PipelineError(
                f"{ctx.path('tuples.jsonl')} line {lineno}: bad tuple record: {exc}"
            ) from exc
    return records


def _filter_tuples(
    records: Sequence[TupleRecord],
    table: OutletTable,
    exclude_wire: bool,
    exclude_top_outlets: int,
) -> tuple:
    """Apply the robustness filter toggles; top outlets are ranked after
    wire exclusion so the two compose the way the flags read."""
    kept = list(records)
    dropped_outlets: list = []
    if exclude_wire:
        kept = [record for record in kept if not table.is_wire(record.outlet)]
    if exclude_top_outlets > 0:
        counts = Counter(record.outlet for record in kept)
        ranked = sorted(counts, key=lambda outlet: (-counts[outlet], outlet))
        dropped_outlets = ranked[:exclude_top_outlets]
        dropped = set(dropped_outlets)
        kept = [record for record in kept if record.outlet not in dropped]
    return kept, dropped_outlets


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------


def step_corpus(ctx: RunContext) -> dict:
    """Ingest articles: leaning annotation, URL filter, two dedup passes."""
    path = ctx.config.require_path("articles")
    with open(path, encoding="utf-8") as handle:
        articles = read_articles(handle)
    table = ctx.outlet_table()
    annotated = table.annotate(articles)

    lexicon_dir = ctx.config.paths.get("filter_lexicons", "")
    tag_path = Path(lexicon_dir) / "url_tags.txt" if lexicon_dir else None
    if tag_path is None or not tag_path.exists():
        tag_path = _shipped_data("url_tags.txt")
    tags = _read_tag_file(tag_path)

    filtered = filter_by_url(annotated, tags)
    after_url_dedup = dedup_by_url(filtered)
    final = dedup_by_title(after_url_dedup)

    buffer = io.StringIO()
    write_articles(buffer, final)
    ctx.write_text("corpus.jsonl", buffer.getvalue())

    leaning_counts = Counter(article.leaning.value for article in final)
    summary = {
        "loaded": len(articles),
        "after_url_filter": len(filtered),
        "after_url_dedup": len(after_url_dedup),
        "after_title_dedup": len(final),
        "by_leaning": {
            leaning.value: leaning_counts.get(leaning.value, 0) for leaning in Leaning
        },
        "wire_articles": sum(article.is_wire for article in final),
    }
    ctx.write_json("corpus_summary.json", summary)
    ctx.log(f"corpus: {summary}")
    return summary


def step_extract(ctx: RunContext) -> dict:
    """Extract attribution tuples from dependency parses."""
    path = ctx.config.require_path("parses")
    with open(path, encoding="utf-8") as handle:
        documents = read_parses(handle)
    lexicons = ctx.filter_lexicons()

    outlet_of: dict = {}
    outlet_source = "none (outlets left empty; run `corpus` first to attach them)"
    if ctx.has_artifact("corpus.jsonl"):
        body = ctx.read_body("corpus.jsonl")
        articles = read_articles(io.StringIO(body))
        outlet_of = {article.article_id: article.outlet for article in articles}
        outlet_source = "corpus.jsonl"

    all_records: list = []
    stage_counts: Counter = Counter()
    for document in documents:
        records, counts = extract_document(
            document, lexicons, outlet=outlet_of.get(document.article_id, "")
        )
        stage_counts.update(counts)
        all_records.extend(records)

    _write_tuples(ctx, all_records)
    summary = {
        "documents": len(documents),
        "sentences": sum(len(doc.sentences) for doc in documents),
        "stage_counts": dict(stage_counts),
        "tuples": len(all_records),
        "annotation_candidates": sum(r.annotation_candidate for r in all_records),
        "outlet_source": outlet_source,
    }
    ctx.write_json("extract_summary.json", summary)
    ctx.log(f"extract: {summary}")
    return summary


_RESPONSE_TO_LABEL = {1: "disagree", 2: "neutral", 3: "agree"}


def step_aggregate(ctx: RunContext) -> dict:
    """Fit the annotation aggregation model; emit classifier instances."""
    path = ctx.config.require_path("annotations")
    records = read_annotations(path)
    config = dataclasses.replace(
        ctx.config.aggregation, seed=derive_seed(ctx.config.seed, "aggregate")
    )
    fit = fit_aggregation(records, config)
    ctx.write_text("aggregation.json", fit.to_json())

    label_counts = Counter(
        _RESPONSE_TO_LABEL[fit.argmax_response(item_id)] for item_id in fit.item_ids
    )

    instances_written = 0
    items_without_tuple = 0
    if ctx.has_artifact("tuples.jsonl"):
        tuples = {record.tuple_id: record for record in _read_tuples(ctx)}
        table = ctx.outlet_table()
        instances = []
        for item_id in fit.item_ids:
            record = tuples.get(item_id)
            if record is None:
                items_without_tuple += 1
                continue
            dist = fit.item_distribution(item_id)
            instances.append(
                LabeledInstance(
                    item_id=item_id,
                    text=record.annotation_text,
                    # aggregation orders probabilities by response code
                    # (disagree, neutral, agree); instances use LABELS order.
                    label_distribution=(
                        float(dist[2]),
                        float(dist[1]),
                        float(dist[0]),
                    ),
                    outlet_leaning=table.leaning_of(record.outlet).value,
                )
            )
        write_instances(ctx.path("instances.csv"), instances)
        ctx.stamp("instances.csv")
        instances_written = len(instances)

    summary = {
        "annotations": len(records),
        "items": len(fit.item_ids),
        "workers": len(fit.worker_ids),
        "converged": fit.converged,
        "sigma_q": fit.sigma_q,
        "sigma_w": fit.sigma_w,
        "label_counts": {label: label_counts.get(label, 0) for label in LABELS},
        "instances_written": instances_written,
        "items_without_tuple": items_without_tuple,
    }
    ctx.write_json("aggregate_summary.json", summary)
    ctx.log(f"aggregate: {summary}")
    return summary


def step_demographics(ctx: RunContext) -> dict:
    """Fit the ordinal model with worker covariates."""
    ann_path = ctx.config.require_path("annotations")
    prof_path = ctx.config.require_path("profiles")
    records = read_annotations(ann_path)
    profiles = read_profiles(prof_path)
    config = dataclasses.replace(
        ctx.config.ordinal, seed=derive_seed(ctx.config.seed, "demographics")
    )
    fit = fit_ordinal(
        records,
        profiles,
        covariates=list(ctx.config.ordinal_covariates) or None,
        config=config,
    )
    ctx.write_text("demographics.json", fit.to_json())
    summary = {
        "annotations": len(records),
        "workers": len(profiles),
        "converged": fit.converged,
        "odds_ratios": {k: v for k, v in sorted(fit.odds_ratios().items())},
    }
    ctx.log(f"demographics: {summary}")
    return summary


def step_human_perf(ctx: RunContext) -> dict:
    """Estimate annotator accuracy against leave-worker-out consensus."""
    path = ctx.config.require_path("annotations")
    records = read_annotations(path)
    agg_config = dataclasses.replace(
        ctx.config.aggregation, seed=derive_seed(ctx.config.seed, "human-perf-agg")
    )
    config = HumanPerfConfig(
        repeats=ctx.config.human_repeats,
        holdout_fraction=ctx.config.human_holdout_fraction,
        seed=derive_seed(ctx.config.seed, "human-perf"),
        aggregation=agg_config,
    )
    result = estimate_human_performance(records, config)
    ctx.write_text("human_perf.json", result.to_json())
    summary = {
        "workers_scored": len(result.accuracies),
        "mean_accuracy": result.mean_accuracy,
        "attentive_mean": result.attentive_mean,
        "components": [
            {"mean": c.mean, "sd": c.sd, "weight": c.weight}
            for c in result.components
        ],
    }
    ctx.log(f"human-perf: {summary}")
    return summary


def _report_dict(report: EvalReport) -> dict:
    return {
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "n": report.n,
        "per_class": {
            label: {
                "precision": scores.precision,
                "recall": scores.recall,
                "f1": scores.f1,
                "support": scores.support,
            }
            for label, scores in report.per_class.items()
        },
        "confusion": [list(row) for row in report.confusion],
    }


def step_train_stance(ctx: RunContext) -> dict:
    """Train the linear stance classifier with a held-out evaluation."""
    instances = read_instances(ctx.artifact_path("instances.csv"))
    split_seed = derive_seed(ctx.config.seed, "stance-split")
    train, test = stratified_split(
        instances, test_size=ctx.config.stance_test_size, seed=split_seed
    )
    model = train_linear(expand_weighted(train), ctx.config.stance)
    ctx.write_text("stance_model.json", model.to_json())
    ctx.write_json(
        "split.json",
        {
            "seed": split_seed,
            "test_size": ctx.config.stance_test_size,
            "train": [instance.item_id for instance in train],
            "test": [instance.item_id for instance in test],
        },
    )

    test_report = evaluate(model, test)
    majority_report = majority_baseline(train, test)
    cv = cross_validate(
        train,
        ctx.config.stance,
        n_folds=ctx.config.stance_cv_folds,
        seed=derive_seed(ctx.config.seed, "stance-cv"),
    )
    payload = {
        "train_size": len(train),
        "test_size": len(test),
        "test": _report_dict(test_report),
        "majority": _report_dict(majority_report),
        "cv": {
            "fold_accuracies": list(cv.fold_accuracies),
            "mean_accuracy": cv.mean_accuracy,
            "n_folds": cv.n_folds,
        },
    }
    ctx.write_json("stance_eval.json", payload)
    summary = {
        "train_size": len(train),
        "test_size": len(test),
        "test_accuracy": test_report.accuracy,
        "test_macro_f1": test_report.macro_f1,
        "majority_accuracy": majority_report.accuracy,
        "cv_mean_accuracy": cv.mean_accuracy,
        "vocabulary": len(model.vocabulary),
    }
    ctx.log(f"train-stance: {summary}")
    return summary


def step_classify(ctx: RunContext) -> dict:
    """Label every extracted tuple with the trained classifier."""
    model = LinearModel.from_json(ctx.read_body("stance_model.json"))
    tuples = _read_tuples(ctx)
    labels = classify(
        model, [(record.tuple_id, record.annotation_text) for record in tuples]
    )
    write_stance_labels(ctx.path("labels.csv"), labels)
    ctx.stamp("labels.csv")
    counts = Counter(label.label for label in labels)
    summary = {
        "labeled": len(labels),
        "label_counts": {label: counts.get(label, 0) for label in LABELS},
        "origin": "in-core-linear",
    }
    ctx.log(f"classify: {summary}")
    return summary


def step_ingest_labels(ctx: RunContext) -> dict:
    """Validate and adopt externally produced stance labels."""
    path = ctx.config.require_path("external_labels")
    known_refs = None
    if ctx.has_artifact("tuples.jsonl"):
        known_refs = [record.tuple_id for record in _read_tuples(ctx)]
    labels, diagnostics = ingest_external_labels(path, known_refs)
    write_stance_labels(ctx.path("labels.csv"), labels)
    ctx.stamp("labels.csv")
    counts = Counter(label.label for label in labels)
    summary = {
        "accepted": len(labels),
        "rejected_or_replaced": len(diagnostics),
        "diagnostics": diagnostics,
        "label_counts": {label: counts.get(label, 0) for label in LABELS},
        "origin": "external",
    }
    ctx.log(f"ingest-labels: accepted={len(labels)} diagnostics={len(diagnostics)}")
    return summary


def step_eval(ctx: RunContext) -> dict:
    """Score the label artifact against aggregated gold labels."""
    labels = read_stance_labels(ctx.artifact_path("labels.csv"))
    predicted = {label.ref: label.label for label in labels}
    instances = read_instances(ctx.artifact_path("instances.csv"))

    subset = "all-instances"
    if ctx.has_artifact("split.json"):
        test_ids = set(ctx.read_json("split.json")["test"])
        instances = [
            instance for instance in instances if instance.item_id in test_ids
        ]
        subset = "test-split"

    pairs = [
        (instance.hard_label, predicted[instance.item_id])
        for instance in instances
        if instance.item_id in predicted
    ]
    missing = len(instances) - len(pairs)
    if not pairs:
        raise PipelineError(
            "no overlap between labels.csv and instances.csv; classify the "
            "extracted tuples that were annotated"
        )
    report = evaluate_predictions([t for t, _ in pairs], [p for _, p in pairs])
    payload = {
        "subset": subset,
        "evaluated": len(pairs),
        "missing_predictions": missing,
        **_report_dict(report),
    }
    ctx.write_json("eval.json", payload)
    summary = {
        "subset": subset,
        "evaluated": len(pairs),
        "missing_predictions": missing,
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
    }
    ctx.log(f"eval: {summary}")
    return summary


def step_framing(
    ctx: RunContext,
    min_freq: int | None = None,
    fdr: float | None = None,
    exclude_wire: bool | None = None,
    exclude_top_outlets: int | None = None,
) -> dict:
    """Compute device coverage and per-device framing statistics."""
    tuples = _read_tuples(ctx)
    labels = read_stance_labels(ctx.artifact_path("labels.csv"))
    table = ctx.outlet_table()
    lexicons = ctx.framing_lexicons()

    use_wire = ctx.config.exclude_wire if exclude_wire is None else exclude_wire
    use_top = (
        ctx.config.exclude_top_outlets
        if exclude_top_outlets is None
        else exclude_top_outlets
    )
    use_min_freq = ctx.config.framing_min_freq if min_freq is None else min_freq
    use_fdr = ctx.config.framing_fdr if fdr is None else fdr

    kept, dropped_outlets = _filter_tuples(tuples, table, use_wire, use_top)
    stats = device_stats(
        kept,
        labels,
        table,
        lexicons=lexicons,
        min_freq=use_min_freq,
        fdr=use_fdr,
        yates=ctx.config.framing_yates,
    )
    write_framing_stats(ctx.path("framing_stats.csv"), stats)
    ctx.stamp("framing_stats.csv")

    coverage = coverage_breakdown(kept, labels, table, lexicons=lexicons)
    coverage_payload = {
        leaning: {
            "counts": {
                "self_affirming": counts.self_affirming,
                "opponent_doubting": counts.opponent_doubting,
                "other_device": counts.other_device,
                "no_device": counts.no_device,
                "total": counts.total,
            },
            "proportions": counts.proportions(),
        }
        for leaning, counts in coverage.items()
    }
    ctx.write_json(
        "coverage.json",
        {
            "coverage": coverage_payload,
            "filters": {
                "exclude_wire": use_wire,
                "exclude_top_outlets": use_top,
                "dropped_outlets": dropped_outlets,
            },
            "min_freq": use_min_freq,
            "fdr": use_fdr,
        },
    )
    summary = {
        "tuples_used": len(kept),
        "tuples_dropped": len(tuples) - len(kept),
        "devices_tested": len(stats),
        "significant": sum(stat.significant for stat in stats),
        "dropped_outlets": dropped_outlets,
    }
    ctx.log(f"framing: {summary}")
    return summary


def step_faithfulness(ctx: RunContext, threshold: float | None = None) -> dict:
    """Attribution-faithfulness rates plus hypocritical-predicate lists."""
    tuples = _read_tuples(ctx)
    labels = read_stance_labels(ctx.artifact_path("labels.csv"))
    table = ctx.outlet_table()
    roster = ctx.roster()
    match = ctx.config.match
    if threshold is not None:
        match = MatchConfig(threshold=threshold, review_floor=match.review_floor)

    kept, dropped_outlets = _filter_tuples(
        tuples, table, ctx.config.exclude_wire, ctx.config.exclude_top_outlets
    )
    report, review = faithfulness_report(kept, labels, roster, table, match)
    write_attribution_records(ctx.path("attribution.csv"), report.records)
    ctx.stamp("attribution.csv")
    write_review_queue(ctx.path("review_queue.csv"), review)
    ctx.stamp("review_queue.csv")

    hypocrisy = hypocrisy_predicates(
        kept,
        labels,
        roster,
        table,
        config=match,
        min_freq=ctx.config.framing_min_freq,
        fdr=ctx.config.framing_fdr,
    )
    payload = {
        "threshold": match.threshold,
        "review_floor": match.review_floor,
        "matched": report.matched,
        "pooled_unfaithful_rate": report.pooled_unfaithful_rate,
        "per_leaning": {
            leaning: {
                "matched": rates.matched,
                "unfaithful": rates.unfaithful,
                "unfaithful_rate": rates.unfaithful_rate,
            }
            for leaning, rates in sorted(report.per_leaning.items())
        },
        "review_queue_size": len(review),
        "dropped_outlets": dropped_outlets,
        "hypocrisy_predicates": {
            leaning: [
                {
                    "predicate": stat.predicate,
                    "activist_count": stat.activist_count,
                    "activist_total": stat.activist_total,
                    "skeptic_count": stat.skeptic_count,
                    "skeptic_total": stat.skeptic_total,
                    "log_odds": stat.log_odds,
                    "smoothed": stat.smoothed,
                    "p_value": stat.p_value,
                    "significant": stat.significant,
                }
                for stat in stats
            ]
            for leaning, stats in sorted(hypocrisy.items())
        },
    }
    ctx.write_json("faithfulness.json", payload)
    summary = {
        "matched": report.matched,
        "pooled_unfaithful_rate": report.pooled_unfaithful_rate,
        "review_queue_size": len(review),
        "hypocrisy_predicates": {
            leaning: len(stats) for leaning, stats in sorted(hypocrisy.items())
        },
    }
    ctx.log(f"faithfulness: {summary}")
    return summary


def step_report(ctx: RunContext) -> dict:
    """Assemble the run's findings into one JSON + Markdown summary."""
    labels = read_stance_labels(ctx.artifact_path("labels.csv"))
    stance_eval = ctx.read_json("stance_eval.json")
    stats = _read_framing_stats(ctx)
    coverage = ctx.read_json("coverage.json")
    faithfulness = ctx.read_json("faithfulness.json")

    label_counts = Counter(label.label for label in labels)
    summary: dict = {
        "config_hash": ctx.config_hash,
        "version": __version__,
        "label_counts": {label: label_counts.get(label, 0) for label in LABELS},
        "classifier": stance_eval,
        "coverage": coverage["coverage"],
        "significant_devices": _device_tables(stats),
        "faithfulness": {
            "matched": faithfulness["matched"],
            "pooled_unfaithful_rate": faithfulness["pooled_unfaithful_rate"],
            "per_leaning": faithfulness["per_leaning"],
            "hypocrisy_predicates": faithfulness["hypocrisy_predicates"],
        },
    }
    for optional, key in (
        ("corpus_summary.json", "corpus"),
        ("extract_summary.json", "extraction"),
        ("aggregate_summary.json", "annotation"),
        ("eval.json", "external_eval"),
    ):
        if ctx.has_artifact(optional):
            summary[key] = ctx.read_json(optional)

    ctx.write_json("summary.json", summary)
    ctx.write_text("summary.md", _markdown_summary(summary))
    result = {
        "sections": sorted(summary),
        "artifacts": ["summary.json", "summary.md"],
    }
    ctx.log(f"report: {result}")
    return result


def _read_framing_stats(ctx: RunContext) -> list:
    from .framing import read_framing_stats

    return read_framing_stats(ctx.artifact_path("framing_stats.csv"))


def _device_tables(stats: Sequence) -> dict:
    """Significant devices grouped by (leaning, slot), strongest first."""
    tables: dict = {}
    for stat in stats:
        if not stat.significant:
            continue
        tables.setdefault(stat.leaning, {}).setdefault(stat.slot, []).append(
            {
                "device": stat.device,
                "category": stat.category,
                "log_odds": stat.log_odds,
                "frequency": stat.frequency,
                "p_value": stat.p_value,
            }
        )
    for slots in tables.values():
        for rows in slots.values():
            rows.sort(key=lambda row: (-abs(row["log_odds"]), row["device"]))
    return tables


def _markdown_summary(summary: Mapping[str, Any]) -> str:
    lines = ["", "## Opinion-framing run summary", ""]
    lines.append(f"Config hash: `{summary['config_hash']}`  ")
    lines.append(f"Toolkit version: {summary['version']}")
    lines.append("")

    if "corpus" in summary:
        corpus = summary["corpus"]
        lines.append("### Corpus")
        lines.append("")
        lines.append(
            f"- articles kept: {corpus['after_title_dedup']} "
            f"(loaded {corpus['loaded']}, after URL filter "
            f"{corpus['after_url_filter']}, after URL dedup "
            f"{corpus['after_url_dedup']})"
        )
        by_leaning = ", ".join(
            f"{leaning}: {count}" for leaning, count in sorted(corpus["by_leaning"].items())
        )
        lines.append(f"- by leaning: {by_leaning}")
        lines.append("")

    if "extraction" in summary:
        extraction = summary["extraction"]
        lines.append("### Extraction")
        lines.append("")
        lines.append(
            f"- tuples: {extraction['tuples']} from "
            f"{extraction['sentences']} sentences in "
            f"{extraction['documents']} documents"
        )
        lines.append(
            f"- annotation candidates: {extraction['annotation_candidates']}"
        )
        lines.append("")

    if "annotation" in summary:
        annotation = summary["annotation"]
        counts = ", ".join(
            f"{label}: {annotation['label_counts'][label]}" for label in LABELS
        )
        lines.append("### Aggregated annotations")
        lines.append("")
        lines.append(f"- items: {annotation['items']} ({counts})")
        lines.append(f"- converged: {annotation['converged']}")
        lines.append("")

    lines.append("### Stance labels")
    lines.append("")
    counts = ", ".join(
        f"{label}: {summary['label_counts'][label]}" for label in LABELS
    )
    lines.append(f"- labeled tuples: {counts}")
    lines.append("")

    classifier = summary["classifier"]
    lines.append("### Classifier")
    lines.append("")
    lines.append(
        f"- test accuracy {classifier['test']['accuracy']:.3f}, "
        f"macro-F1 {classifier['test']['macro_f1']:.3f} "
        f"(n={classifier['test']['n']})"
    )
    lines.append(
        f"- majority baseline accuracy {classifier['majority']['accuracy']:.3f}"
    )
    lines.append(
        f"- cross-validation mean accuracy "
        f"{classifier['cv']['mean_accuracy']:.3f} "
        f"over {classifier['cv']['n_folds']} folds"
    )
    lines.append("")

    lines.append("### Device coverage")
    lines.append("")
    lines.append(
        "| Leaning | Self-affirming | Opponent-doubting | Other device | No device |"
    )
    lines.append("|---|---|---|---|---|")
    for leaning, block in sorted(summary["coverage"].items()):
        proportions = block["proportions"]
        lines.append(
            f"| {leaning} "
            f"| {proportions['self_affirming']:.3f} "
            f"| {proportions['opponent_doubting']:.3f} "
            f"| {proportions['other_device']:.3f} "
            f"| {proportions['no_device']:.3f} |"
        )
    lines.append("")

    lines.append("### Significant framing devices")
    lines.append("")
    devices = summary["significant_devices"]
    if not devices:
        lines.append("(none at the configured FDR)")
        lines.append("")
    for leaning in sorted(devices):
        for slot in sorted(devices[leaning]):
            lines.append(f"**{leaning} / {slot}**")
            lines.append("")
            lines.append("| Device | Category | Log-odds | Frequency |")
            lines.append("|---|---|---|---|")
            for row in devices[leaning][slot][:15]:
                lines.append(
                    f"| {row['device']} | {row['category']} "
                    f"| {row['log_odds']:+.3f} | {row['frequency']} |"
                )
            lines.append("")

    faithfulness = summary["faithfulness"]
    lines.append("### Attribution faithfulness")
    lines.append("")
    lines.append(f"- matched opinions: {faithfulness['matched']}")
    lines.append(
        f"- pooled unfaithful rate: "
        f"{faithfulness['pooled_unfaithful_rate']:.3f}"
    )
    for leaning, rates in sorted(faithfulness["per_leaning"].items()):
        lines.append(
            f"- {leaning}: {rates['unfaithful']}/{rates['matched']} unfaithful "
            f"({rates['unfaithful_rate']:.3f})"
        )
    lines.append("")
    for leaning, rows in sorted(faithfulness["hypocrisy_predicates"].items()):
        if not rows:
            continue
        lines.append(f"**Predicates ascribing {leaning}-stance opinions to "
                     f"opposite-stance sources**")
        lines.append("")
        for row in rows[:10]:
            lines.append(
                f"- {row['predicate']} (log-odds {row['log_odds']:+.3f}, "
                f"activist {row['activist_count']}/{row['activist_total']}, "
                f"skeptic {row['skeptic_count']}/{row['skeptic_total']})"
            )
        lines.append("")

    return "\n".join(lines)
