"""Faithfulness of opinion attribution to named sources.

An attributed opinion is *faithful* when its stance matches the public
stance of the entity it is ascribed to: activist entities agree that
global warming is a serious concern, skeptic entities disagree.  This
module canonicalizes extracted source strings against an entity roster by
fuzzy token-set matching, reports per-leaning unfaithful-attribution
rates, and measures which predicates are biased toward hypocritical
attribution (own-stance opinions ascribed to opposite-stance sources),
reusing the framing module's log-odds machinery.

Matching normalizes case and punctuation and drops articles and corporate
suffixes, then scores string pairs with a token-set ratio in [0, 100]:
the maximum, over the shared-token string and the two full token strings,
of ``200 * LCS / (len1 + len2)`` where LCS is the longest common character
subsequence.  Scores at or above the threshold (default 90) are accepted;
near misses go to a review queue for manual inspection rather than being
silently dropped or auto-accepted.
"""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .corpus import OutletTable
from .extraction import TupleRecord
from .framing import (
    OWN_STANCE,
    _label_map,
    benjamini_hochberg,
    chi_squared_2x2,
    log_odds,
)

ACTIVIST = "activist"
SKEPTIC = "skeptic"

#: The stance an entity of each kind takes toward the target proposition.
ENTITY_OPINION: Mapping[str, str] = {ACTIVIST: "agree", SKEPTIC: "disagree"}

_DROPPED_TOKENS = frozenset(
    {
        # articles and connective noise
        "the",
        "a",
        "an",
        "of",
        # corporate suffixes
        "co",
        "corp",
        "corporation",
        "inc",
        "incorporated",
        "llc",
        "ltd",
        "limited",
        "plc",
    }
)


# ---------------------------------------------------------------------------
# Name normalization and token-set similarity
# ---------------------------------------------------------------------------


def normalize_name(name: str) -> str:
    """Lowercase, strip punctuation, drop articles and corporate suffixes."""
    tokens = []
    for raw in name.lower().split():
        token = "".join(ch for ch in raw if ch.isalnum())
        if token and token not in _DROPPED_TOKENS:
            tokens.append(token)
    return " ".join(tokens)


def _lcs_length(first: str, second: str) -> int:
    """Longest common subsequence length by dynamic programming."""
    if not first or not second:
        return 0
    previous = [0] * (len(second) + 1)
    for ch in first:
        current = [0]
        for j, other in enumerate(second, start=1):
            if ch == other:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def _similarity(first: str, second: str) -> float:
    """Character-level similarity 200*LCS/(len1+len2) in [0, 100]."""
    if not first and not second:
        return 0.0
    return 200.0 * _lcs_length(first, second) / (len(first) + len(second))


def token_set_ratio(first: str, second: str) -> float:
    """Token-set similarity in [0, 100], invariant to case and token order.

    Both names are normalized, split into token sets, and compared as three
    strings: the sorted shared tokens alone, and each side's shared plus
    distinctive tokens.  The score is the best pairwise similarity, so
    reordered tokens ("Mobil Exxon") or decoration on one side ("Exxon
    Mobil Corp.") cannot drag an otherwise exact match down.
    """
    tokens_first = set(normalize_name(first).split())
    tokens_second = set(normalize_name(second).split())
    shared = " ".join(sorted(tokens_first & tokens_second))
    only_first = " ".join(sorted(tokens_first - tokens_second))
    only_second = " ".join(sorted(tokens_second - tokens_first))
    full_first = f"{shared} {only_first}".strip()
    full_second = f"{shared} {only_second}".strip()
    return max(
        _similarity(shared, full_first),
        _similarity(shared, full_second),
        _similarity(full_first, full_second),
    )


# ---------------------------------------------------------------------------
# Entity roster
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RosterEntry:
    """One entity with a documented stance and its surface aliases."""

    canonical: str
    stance: str
    aliases: tuple

    def __post_init__(self) -> None:
        if self.stance not in (ACTIVIST, SKEPTIC):
            raise ValueError(
                f"entity {self.canonical!r}: stance must be {ACTIVIST!r} or "
                f"{SKEPTIC!r}, got {self.stance!r}"
            )
        if not normalize_name(self.canonical):
            raise ValueError(
                f"entity name {self.canonical!r} is empty after normalization"
            )
        object.__setattr__(self, "aliases", tuple(self.aliases))


class EntityRoster:
    """Canonical entities plus a normalized-name index for matching."""

    def __init__(self, entries: Sequence[RosterEntry]):
        self.entries = tuple(entries)
        self._names: dict = {}
        for entry in self.entries:
            for name in (entry.canonical, *entry.aliases):
                key = normalize_name(name)
                if not key:
                    raise ValueError(
                        f"alias {name!r} of {entry.canonical!r} is empty "
                        f"after normalization"
                    )
                existing = self._names.get(key)
                if existing is not None and existing is not entry:
                    if existing.stance != entry.stance:
                        raise ValueError(
                            f"name {name!r} maps to both stances: "
                            f"{existing.canonical!r} ({existing.stance}) and "
                            f"{entry.canonical!r} ({entry.stance})"
                        )
                    raise ValueError(
                        f"name {name!r} is ambiguous between "
                        f"{existing.canonical!r} and {entry.canonical!r}"
                    )
                self._names[key] = entry

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "EntityRoster":
        """Load a roster from TOML; defaults to the shipped starter roster."""
        if path is None:
            source = resources.files("opinionframing").joinpath("data/roster.toml")
            raw = tomllib.loads(source.read_text(encoding="utf-8"))
        else:
            with open(path, "rb") as handle:
                raw = tomllib.load(handle)
        entries = []
        for table in raw.get("entity", []):
            entries.append(
                RosterEntry(
                    canonical=table.get("canonical", ""),
                    stance=table.get("stance", ""),
                    aliases=tuple(table.get("aliases", ())),
                )
            )
        return cls(entries)

    def names(self) -> list:
        """All (surface name, entry) pairs, canonical names first."""
        pairs = []
        for entry in self.entries:
            pairs.append((entry.canonical, entry))
            pairs.extend((alias, entry) for alias in entry.aliases)
        return pairs


# ---------------------------------------------------------------------------
# Canonicalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatchConfig:
    """Thresholds for fuzzy source matching.

    Scores >= ``threshold`` are accepted; scores in [``review_floor``,
    ``threshold``) are routed to the review queue.
    """

    threshold: float = 90.0
    review_floor: float = 70.0

    def __post_init__(self) -> None:
        if not 0 < self.threshold <= 100:
            raise ValueError(f"threshold must lie in (0, 100], got {self.threshold!r}")
        if not 0 <= self.review_floor <= self.threshold:
            raise ValueError(
                f"review_floor must lie in [0, threshold], got {self.review_floor!r}"
            )


@dataclass(frozen=True)
class CanonicalMatch:
    """An accepted entity match for one source string."""

    canonical: str
    stance: str
    score: float


@dataclass(frozen=True)
class ReviewCandidate:
    """A near-miss match routed to manual review."""

    source: str
    candidate: str
    stance: str
    score: float


def canonicalize(
    source: str, roster: EntityRoster, config: MatchConfig | None = None
) -> CanonicalMatch | None:
    """Best roster match for a source string, or None below the threshold.

    Every canonical name and alias is scored with :func:`token_set_ratio`;
    the best-scoring entry wins, with exact-equal scores broken toward the
    alphabetically earlier canonical name for determinism.
    """
    config = config or MatchConfig()
    best = _best_match(source, roster)
    if best is not None and best.score >= config.threshold:
        return best
    return None


def _best_match(source: str, roster: EntityRoster) -> CanonicalMatch | None:
    best: CanonicalMatch | None = None
    for name, entry in roster.names():
        score = token_set_ratio(source, name)
        if (
            best is None
            or score > best.score
            or (score == best.score and entry.canonical < best.canonical)
        ):
            best = CanonicalMatch(
                canonical=entry.canonical, stance=entry.stance, score=score
            )
    return best


def match_sources(
    sources: Iterable[str], roster: EntityRoster, config: MatchConfig | None = None
) -> tuple:
    """Canonicalize many source strings at once.

    Returns ``(matches, review)``: accepted matches as {source string:
    CanonicalMatch} and the sub-threshold near misses as ReviewCandidates
    (best candidate per source, score in [review_floor, threshold)).
    """
    config = config or MatchConfig()
    matches: dict = {}
    review: list = []
    if len(roster) == 0:
        return matches, review
    for source in dict.fromkeys(sources):
        best = _best_match(source, roster)
        if best is None:
            continue
        if best.score >= config.threshold:
            matches[source] = best
        elif best.score >= config.review_floor:
            review.append(
                ReviewCandidate(
                    source=source,
                    candidate=best.canonical,
                    stance=best.stance,
                    score=best.score,
                )
            )
    review.sort(key=lambda item: (-item.score, item.source))
    return matches, review


def write_review_queue(path: str | Path, review: Iterable[ReviewCandidate]) -> None:
    """Write near-miss candidates as CSV for manual inspection."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["source", "candidate", "stance", "score"])
        for item in review:
            writer.writerow(
                [item.source, item.candidate, item.stance, repr(item.score)]
            )


# ---------------------------------------------------------------------------
# Faithfulness report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttributionRecord:
    """One matched, non-neutral attributed opinion."""

    tuple_ref: str
    canonical: str
    entity_stance: str
    opinion_stance: str
    faithful: bool
    score: float
    leaning: str

    def __post_init__(self) -> None:
        expected = ENTITY_OPINION[self.entity_stance] == self.opinion_stance
        if self.faithful != expected:
            raise ValueError(
                f"tuple {self.tuple_ref!r}: faithful={self.faithful} "
                f"contradicts {self.entity_stance} entity with "
                f"{self.opinion_stance} opinion"
            )


@dataclass(frozen=True)
class LeaningRates:
    """Matched/unfaithful counts for one leaning."""

    matched: int
    unfaithful: int

    @property
    def unfaithful_rate(self) -> float:
        return self.unfaithful / self.matched if self.matched else 0.0


@dataclass(frozen=True)
class FaithfulnessReport:
    """Attribution records plus per-leaning and pooled unfaithful rates."""

    records: tuple
    per_leaning: Mapping[str, LeaningRates]

    @property
    def matched(self) -> int:
        return sum(rates.matched for rates in self.per_leaning.values())

    @property
    def pooled_unfaithful_rate(self) -> float:
        matched = self.matched
        if not matched:
            return 0.0
        unfaithful = sum(rates.unfaithful for rates in self.per_leaning.values())
        return unfaithful / matched


def faithfulness_report(
    tuples: Iterable[TupleRecord],
    labels,
    roster: EntityRoster,
    outlet_table: OutletTable,
    config: MatchConfig | None = None,
) -> tuple:
    """Attribution faithfulness over matched, non-neutral opinions.

    Neutral and unlabeled tuples and outlets of unknown leaning are
    excluded; sources are canonicalized against the roster.  Returns
    ``(report, review)`` where the report's records sort by descending
    entity frequency (then canonical name, then tuple reference) and the
    review queue lists sub-threshold near misses.  An empty roster yields
    an empty report.
    """
    config = config or MatchConfig()
    label_of = _label_map(labels)

    eligible = []
    for record in tuples:
        label = label_of.get(record.tuple_id)
        if label is None or label == "neutral":
            continue
        leaning = outlet_table.leaning_of(record.outlet).value
        if leaning not in OWN_STANCE:
            continue
        eligible.append((record, label, leaning))

    matches, review = match_sources(
        (record.source_canonical for record, _, _ in eligible), roster, config
    )

    records = []
    counts = {leaning: {"matched": 0, "unfaithful": 0} for leaning in OWN_STANCE}
    for record, label, leaning in eligible:
        match = matches.get(record.source_canonical)
        if match is None:
            continue
        faithful = ENTITY_OPINION[match.stance] == label
        records.append(
            AttributionRecord(
                tuple_ref=record.tuple_id,
                canonical=match.canonical,
                entity_stance=match.stance,
                opinion_stance=label,
                faithful=faithful,
                score=match.score,
                leaning=leaning,
            )
        )
        counts[leaning]["matched"] += 1
        if not faithful:
            counts[leaning]["unfaithful"] += 1

    frequency = Counter(record.canonical for record in records)
    records.sort(key=lambda r: (-frequency[r.canonical], r.canonical, r.tuple_ref))

    report = FaithfulnessReport(
        records=tuple(records),
        per_leaning={
            leaning: LeaningRates(
                matched=values["matched"], unfaithful=values["unfaithful"]
            )
            for leaning, values in counts.items()
        },
    )
    return report, review


def write_attribution_records(
    path: str | Path, records: Iterable[AttributionRecord]
) -> None:
    """Write attribution records as CSV."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "tuple_ref",
                "canonical",
                "entity_stance",
                "opinion_stance",
                "faithful",
                "score",
                "leaning",
            ]
        )
        for record in records:
            writer.writerow(
                [
                    record.tuple_ref,
                    record.canonical,
                    record.entity_stance,
                    record.opinion_stance,
                    record.faithful,
                    repr(record.score),
                    record.leaning,
                ]
            )


# ---------------------------------------------------------------------------
# Hypocritical attribution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HypocrisyStat:
    """Bias of one predicate toward ascribing own-stance opinions to
    activist (positive) versus skeptic (negative) sources."""

    predicate: str
    leaning: str
    activist_count: int
    activist_total: int
    skeptic_count: int
    skeptic_total: int
    log_odds: float
    smoothed: bool
    chi_sq: float
    p_value: float
    significant: bool = False


def hypocrisy_predicates(
    tuples: Iterable[TupleRecord],
    labels,
    roster: EntityRoster,
    outlet_table: OutletTable,
    config: MatchConfig | None = None,
    min_freq: int = 20,
    fdr: float = 0.1,
) -> dict:
    """Predicates biased toward hypocritical attribution, per leaning.

    Within each leaning, own-stance opinions (Left: agree, Right: disagree)
    whose sources matched the roster are contrasted by entity stance: a
    predicate's log-odds compares its rate among activist-sourced versus
    skeptic-sourced opinions, exactly the framing log-odds with that
    contrast.  Returned lists keep only predicates biased toward
    opposite-stance sources (Left: toward skeptics, negative log-odds;
    Right: toward activists, positive), most biased first.
    """
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    config = config or MatchConfig()
    label_of = _label_map(labels)

    eligible = []
    for record in tuples:
        label = label_of.get(record.tuple_id)
        if label is None or label == "neutral":
            continue
        leaning = outlet_table.leaning_of(record.outlet).value
        if leaning not in OWN_STANCE or label != OWN_STANCE[leaning]:
            continue
        eligible.append((record, leaning))

    matches, _ = match_sources(
        (record.source_canonical for record, _ in eligible), roster, config
    )

    totals = {leaning: {ACTIVIST: 0, SKEPTIC: 0} for leaning in OWN_STANCE}
    counts: dict = defaultdict(lambda: {ACTIVIST: 0, SKEPTIC: 0})
    for record, leaning in eligible:
        match = matches.get(record.source_canonical)
        if match is None:
            continue
        totals[leaning][match.stance] += 1
        counts[(leaning, record.predicate_key().lower())][match.stance] += 1

    by_leaning: dict = {leaning: [] for leaning in OWN_STANCE}
    for (leaning, predicate), by_stance in counts.items():
        activist_count = by_stance[ACTIVIST]
        skeptic_count = by_stance[SKEPTIC]
        if activist_count + skeptic_count < min_freq:
            continue
        activist_total = totals[leaning][ACTIVIST]
        skeptic_total = totals[leaning][SKEPTIC]
        odds = log_odds(activist_count, activist_total, skeptic_count, skeptic_total)
        statistic, p_value = chi_squared_2x2(
            activist_count,
            activist_total - activist_count,
            skeptic_count,
            skeptic_total - skeptic_count,
        )
        by_leaning[leaning].append(
            HypocrisyStat(
                predicate=predicate,
                leaning=leaning,
                activist_count=activist_count,
                activist_total=activist_total,
                skeptic_count=skeptic_count,
                skeptic_total=skeptic_total,
                log_odds=odds.value,
                smoothed=odds.smoothed,
                chi_sq=statistic,
                p_value=p_value,
            )
        )

    results: dict = {}
    for leaning, stats in by_leaning.items():
        flagged = _flag_significance(stats, fdr)
        # Hypocritical direction: own-stance opinions ascribed to the
        # opposite side's entities.
        if OWN_STANCE[leaning] == "agree":
            biased = [stat for stat in flagged if stat.log_odds < 0]
            biased.sort(key=lambda s: (s.log_odds, s.predicate))
        else:
            biased = [stat for stat in flagged if stat.log_odds > 0]
            biased.sort(key=lambda s: (-s.log_odds, s.predicate))
        results[leaning] = biased
    return results


def _flag_significance(stats: Sequence[HypocrisyStat], fdr: float) -> list:
    rejected = benjamini_hochberg([stat.p_value for stat in stats], fdr)
    return [replace(stat, significant=flag) for stat, flag in zip(stats, rejected)]
