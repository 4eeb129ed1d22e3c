"""Stance annotation records and plain report statistics.

Responses are ordinal: 1 = Disagree, 2 = Neutral, 3 = Agree.
"""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

RESPONSE_LABELS: Mapping[int, str] = {1: "disagree", 2: "neutral", 3: "agree"}


@dataclass(frozen=True)
class AnnotationRecord:
    """One worker's stance judgment for one item."""

    item_id: str
    worker_id: str
    response: int
    round: int = 0

    def __post_init__(self) -> None:
        if self.response not in RESPONSE_LABELS:
            raise ValueError(
                f"response must be 1 (disagree), 2 (neutral), or 3 (agree), "
                f"got {self.response!r}"
            )


@dataclass(frozen=True)
class AnnotatorProfile:
    """Binary covariates describing one worker, keyed by covariate name."""

    worker_id: str
    covariates: Mapping[str, int]

    def __post_init__(self) -> None:
        for name, value in self.covariates.items():
            if value not in (0, 1):
                raise ValueError(
                    f"covariate {name!r} for worker {self.worker_id!r} must be "
                    f"0 or 1, got {value!r}"
                )


def validate_records(records: Iterable[AnnotationRecord]) -> None:
    """Reject duplicate (item, worker) judgments within the same round."""
    seen = set()
    for rec in records:
        key = (rec.item_id, rec.worker_id, rec.round)
        if key in seen:
            raise ValueError(
                f"duplicate annotation of item {rec.item_id!r} by worker "
                f"{rec.worker_id!r} in round {rec.round}"
            )
        seen.add(key)


def read_annotations(path: str | Path) -> list[AnnotationRecord]:
    """Read annotation records from a CSV with columns
    item_id, worker_id, response and optionally round."""
    records = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(row for row in handle if not row.startswith("#"))
        required = {"item_id", "worker_id", "response"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                response = int(row["response"])
                round_ = int(row.get("round") or 0)
            except ValueError as exc:
                raise ValueError(f"{path} line {lineno}: {exc}") from None
            try:
                records.append(
                    AnnotationRecord(row["item_id"], row["worker_id"], response, round_)
                )
            except ValueError as exc:
                raise ValueError(f"{path} line {lineno}: {exc}") from None
    return records


def write_annotations(records: Iterable[AnnotationRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["item_id", "worker_id", "response", "round"])
        for rec in records:
            writer.writerow([rec.item_id, rec.worker_id, rec.response, rec.round])


def read_profiles(path: str | Path) -> list[AnnotatorProfile]:
    """Read worker profiles from a CSV whose first column is worker_id and
    whose remaining columns are named binary covariates."""
    profiles = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(row for row in handle if not row.startswith("#"))
        fields = reader.fieldnames or []
        if "worker_id" not in fields:
            raise ValueError(f"{path}: missing worker_id column")
        covariate_names = [name for name in fields if name != "worker_id"]
        for lineno, row in enumerate(reader, start=2):
            try:
                covariates = {name: int(row[name]) for name in covariate_names}
                profiles.append(AnnotatorProfile(row["worker_id"], covariates))
            except ValueError as exc:
                raise ValueError(f"{path} line {lineno}: {exc}") from None
    return profiles


def write_profiles(profiles: Sequence[AnnotatorProfile], path: str | Path) -> None:
    names = sorted({name for p in profiles for name in p.covariates})
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["worker_id"] + names)
        for profile in profiles:
            writer.writerow(
                [profile.worker_id] + [profile.covariates.get(n, 0) for n in names]
            )


def response_counts(
    records: Iterable[AnnotationRecord],
) -> dict[str, Counter[int]]:
    """Per-item counters of responses."""
    counts: dict[str, Counter[int]] = defaultdict(Counter)
    for rec in records:
        counts[rec.item_id][rec.response] += 1
    return dict(counts)


def majority_vote(records: Iterable[AnnotationRecord]) -> dict[str, int]:
    """Per-item majority response; ties are broken toward Neutral (2), and a
    tie between Disagree and Agree only also resolves to Neutral."""
    result = {}
    for item_id, counter in response_counts(records).items():
        top = max(counter.values())
        winners = {r for r, c in counter.items() if c == top}
        if len(winners) > 1:
            result[item_id] = 2
        else:
            result[item_id] = winners.pop()
    return result


def _entropy(counter: Counter[int]) -> float:
    total = sum(counter.values())
    entropy = 0.0
    for count in counter.values():
        if count:
            p = count / total
            entropy -= p * math.log(p)
    return entropy


def hardest_items(
    records: Iterable[AnnotationRecord], n: int | None = None
) -> list[tuple[str, float]]:
    """Items ranked by entropy of their empirical response proportions,
    most contested first; ties are ordered by item_id."""
    ranked = sorted(
        ((item_id, _entropy(counter)) for item_id, counter in response_counts(records).items()),
        key=lambda pair: (-pair[1], pair[0]),
    )
    return ranked if n is None else ranked[:n]


def krippendorff_alpha(records: Sequence[AnnotationRecord]) -> float:
    """Krippendorff's alpha with the ordinal metric over responses 1..3.

    Items with fewer than two annotations carry no agreement information and
    are ignored. Returns NaN when no item has two or more annotations.
    """
    values = (1, 2, 3)
    coincidence = {(c, k): 0.0 for c in values for k in values}
    for counter in response_counts(records).values():
        m_u = sum(counter.values())
        if m_u < 2:
            continue
        for c in values:
            for k in values:
                if c == k:
                    pairs = counter[c] * (counter[c] - 1)
                else:
                    pairs = counter[c] * counter[k]
                coincidence[(c, k)] += pairs / (m_u - 1)
    marginals = {c: sum(coincidence[(c, k)] for k in values) for c in values}
    n_total = sum(marginals.values())
    if n_total <= 1:
        return float("nan")

    def ordinal_delta(c: int, k: int) -> float:
        if c == k:
            return 0.0
        lo, hi = min(c, k), max(c, k)
        span = sum(marginals[g] for g in values if lo <= g <= hi)
        return (span - (marginals[c] + marginals[k]) / 2.0) ** 2

    observed = sum(
        coincidence[(c, k)] * ordinal_delta(c, k) for c in values for k in values
    )
    expected = sum(
        marginals[c] * marginals[k] * ordinal_delta(c, k)
        for c in values
        for k in values
    ) / (n_total - 1)
    if expected == 0.0:
        return 1.0
    return 1.0 - observed / expected
