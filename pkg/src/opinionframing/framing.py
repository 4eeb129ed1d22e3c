"""Lexicon-based framing statistics over attributed opinions.

News writers frame an attributed opinion through the predicate that embeds
it ("researchers *showed* that ..." vs "activists *claim* that ...") and
through modifiers on the source ("*peer-reviewed* study" vs "*debunked*
study").  This module tags those framing devices against shipped lexicons
(each category is either *affirming* or *doubting* and applies to either
the predicate or the source-modifier slot) and computes the study
statistics:

* coverage: how much of each leaning's non-neutral coverage self-affirms
  its own side versus doubts the opponent;
* per-device log-odds of framing an agree- versus disagree-stance opinion,
  with chi-squared significance under Benjamini-Hochberg control;
* robustness correlations between device statistics computed on the full
  corpus and on a subset (e.g. excluding newswire).

"Own side" is fixed by the outlet-leaning proxy: left-leaning outlets side
with *agree*, right-leaning with *disagree*.  Tuples from outlets of
unknown leaning and tuples labeled *neutral* are excluded from all
statistics.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as scipy_stats

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .corpus import Leaning, OutletTable
from .extraction import TupleRecord
from .stance import LABELS, StanceLabel

logger = logging.getLogger(__name__)

AFFIRMING = "affirming"
DOUBTING = "doubting"
PREDICATE_SLOT = "predicate"
MODIFIER_SLOT = "source_modifier"

#: The stance each leaning's own side takes toward the target proposition.
OWN_STANCE: Mapping[str, str] = {
    Leaning.LEFT.value: "agree",
    Leaning.RIGHT.value: "disagree",
}


# ---------------------------------------------------------------------------
# Lexicons
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FramingLexicon:
    """One device category: its polarity, the tuple slot it applies to, and
    the lemma/phrase entries matched against that slot."""

    category: str
    polarity: str
    slot: str
    entries: tuple

    def __post_init__(self) -> None:
        if self.polarity not in (AFFIRMING, DOUBTING):
            raise ValueError(
                f"category {self.category!r}: polarity must be "
                f"{AFFIRMING!r} or {DOUBTING!r}, got {self.polarity!r}"
            )
        if self.slot not in (PREDICATE_SLOT, MODIFIER_SLOT):
            raise ValueError(
                f"category {self.category!r}: slot must be "
                f"{PREDICATE_SLOT!r} or {MODIFIER_SLOT!r}, got {self.slot!r}"
            )
        entries = tuple(dict.fromkeys(entry.lower() for entry in self.entries))
        if not entries:
            raise ValueError(f"category {self.category!r} has no entries")
        if any(not entry.strip() for entry in entries):
            raise ValueError(f"category {self.category!r} contains a blank entry")
        object.__setattr__(self, "entries", entries)


@dataclass(frozen=True)
class DeviceTag:
    """One framing device found on a tuple."""

    device: str
    slot: str
    polarity: str
    category: str


class FramingLexicons:
    """The full device inventory with fast per-slot lookup."""

    def __init__(self, lexicons: Sequence[FramingLexicon]):
        self.lexicons = tuple(lexicons)
        self._by_slot_entry: dict = {}
        for lexicon in self.lexicons:
            for entry in lexicon.entries:
                key = (lexicon.slot, entry)
                other = self._by_slot_entry.get(key)
                if other is not None:
                    raise ValueError(
                        f"entry {entry!r} appears in both {other.category!r} "
                        f"and {lexicon.category!r} for slot {lexicon.slot}"
                    )
                self._by_slot_entry[key] = lexicon
        # Source-modifier entries may span several lemmas ("nobel laureate");
        # record the phrase lengths so tagging can scan contiguous windows.
        self._modifier_lengths = sorted(
            {
                len(entry.split())
                for lexicon in self.lexicons
                if lexicon.slot == MODIFIER_SLOT
                for entry in lexicon.entries
            },
            reverse=True,
        )

    def __iter__(self):
        return iter(self.lexicons)

    def categories(self) -> list:
        return [lexicon.category for lexicon in self.lexicons]

    @classmethod
    def load(cls, path: str | Path | None = None) -> "FramingLexicons":
        """Load lexicons from TOML; defaults to the shipped data file."""
        if path is None:
            source = resources.files("opinionframing").joinpath(
                "data/framing_lexicons.toml"
            )
            raw = tomllib.loads(source.read_text(encoding="utf-8"))
        else:
            with open(path, "rb") as handle:
                raw = tomllib.load(handle)
        categories = raw.get("category")
        if not categories:
            raise ValueError(f"no [category.*] tables in {path or 'shipped lexicons'}")
        lexicons = []
        for name, table in categories.items():
            lexicons.append(
                FramingLexicon(
                    category=name,
                    polarity=table.get("polarity", ""),
                    slot=table.get("slot", ""),
                    entries=tuple(table.get("entries", ())),
                )
            )
        return cls(lexicons)

    def lookup(self, slot: str, phrase: str) -> FramingLexicon | None:
        return self._by_slot_entry.get((slot, phrase))

    @property
    def modifier_lengths(self) -> list:
        return self._modifier_lengths


def tag_devices(record: TupleRecord, lexicons: FramingLexicons) -> frozenset:
    """Framing devices on one tuple, as a set of :class:`DeviceTag`.

    The predicate is matched by its full lemma key (particle verbs such as
    "point out" included); source modifiers are matched by lemma, with
    multi-word entries matched as contiguous lemma sequences.
    """
    tags = set()
    predicate = record.predicate_key().lower()
    lexicon = lexicons.lookup(PREDICATE_SLOT, predicate)
    if lexicon is not None:
        tags.add(
            DeviceTag(
                device=predicate,
                slot=PREDICATE_SLOT,
                polarity=lexicon.polarity,
                category=lexicon.category,
            )
        )
    lemmas = [lemma.lower() for lemma in record.source_modifier_lemmas]
    for length in lexicons.modifier_lengths:
        for start in range(len(lemmas) - length + 1):
            phrase = " ".join(lemmas[start : start + length])
            lexicon = lexicons.lookup(MODIFIER_SLOT, phrase)
            if lexicon is not None:
                tags.add(
                    DeviceTag(
                        device=phrase,
                        slot=MODIFIER_SLOT,
                        polarity=lexicon.polarity,
                        category=lexicon.category,
                    )
                )
    return frozenset(tags)


# ---------------------------------------------------------------------------
# Coverage breakdown
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageCounts:
    """Discourse-type counts over one leaning's non-neutral tuples.

    ``self_affirming``: own-stance opinion carrying an affirming device.
    ``opponent_doubting``: opposite-stance opinion carrying a doubting
    device.  ``other_device``: a device is present but does not form either
    pattern (e.g. a doubting device on an own-stance opinion).
    ``no_device``: no lexicon device at all.  The four counts partition the
    non-neutral tuples, so the proportions sum to 1.
    """

    self_affirming: int
    opponent_doubting: int
    other_device: int
    no_device: int

    @property
    def total(self) -> int:
        return (
            self.self_affirming
            + self.opponent_doubting
            + self.other_device
            + self.no_device
        )

    def proportions(self) -> dict:
        total = self.total
        if total == 0:
            return {
                "self_affirming": 0.0,
                "opponent_doubting": 0.0,
                "other_device": 0.0,
                "no_device": 0.0,
            }
        return {
            "self_affirming": self.self_affirming / total,
            "opponent_doubting": self.opponent_doubting / total,
            "other_device": self.other_device / total,
            "no_device": self.no_device / total,
        }


def _label_map(labels) -> dict:
    """Normalize labels to {tuple reference: stance string}."""
    if isinstance(labels, Mapping):
        mapping = dict(labels)
    else:
        mapping = {label.ref: label.label for label in labels}
    for ref, label in mapping.items():
        if label not in LABELS:
            raise ValueError(
                f"tuple {ref!r} carries unknown stance label {label!r}; "
                f"expected one of {LABELS}"
            )
    return mapping


def coverage_breakdown(
    tuples: Iterable[TupleRecord],
    labels,
    outlet_table: OutletTable,
    lexicons: FramingLexicons | None = None,
) -> dict:
    """Per-leaning discourse-type counts over non-neutral labeled tuples.

    ``labels`` may be StanceLabel objects or a {ref: stance} mapping.
    Unlabeled tuples, neutral tuples, and tuples from outlets of unknown
    leaning are excluded.  Returns {leaning value: CoverageCounts} for the
    Left and Right leanings.
    """
    lexicons = lexicons or FramingLexicons.load()
    label_of = _label_map(labels)
    buckets = {
        leaning: {"self_affirming": 0, "opponent_doubting": 0, "other_device": 0, "no_device": 0}
        for leaning in OWN_STANCE
    }
    for record in tuples:
        label = label_of.get(record.tuple_id)
        if label is None or label == "neutral":
            continue
        leaning = outlet_table.leaning_of(record.outlet).value
        if leaning not in OWN_STANCE:
            continue
        tags = tag_devices(record, lexicons)
        own_stance = label == OWN_STANCE[leaning]
        affirming = any(tag.polarity == AFFIRMING for tag in tags)
        doubting = any(tag.polarity == DOUBTING for tag in tags)
        if own_stance and affirming:
            bucket = "self_affirming"
        elif not own_stance and doubting:
            bucket = "opponent_doubting"
        elif tags:
            bucket = "other_device"
        else:
            bucket = "no_device"
        buckets[leaning][bucket] += 1
    return {
        leaning: CoverageCounts(**counts) for leaning, counts in buckets.items()
    }


# ---------------------------------------------------------------------------
# Log-odds, chi-squared, multiple-testing control
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogOdds:
    """A log-odds value plus whether zero-cell smoothing was applied."""

    value: float
    smoothed: bool


def log_odds(
    device_agree: int, total_agree: int, device_disagree: int, total_disagree: int
) -> LogOdds:
    """Bias of a device toward agree-stance opinions.

    ``log(a/(A-a)) - log(d/(D-d))`` where ``a``/``d`` count opinions with
    the device among the ``A`` agree-stance / ``D`` disagree-stance
    opinions.  When any of the four terms ``a``, ``A-a``, ``d``, ``D-d`` is
    zero, 0.5 is added to all four and the result is flagged as smoothed.
    """
    a, A = device_agree, total_agree
    d, D = device_disagree, total_disagree
    if not 0 <= a <= A:
        raise ValueError(f"device count {a} outside [0, {A}] agree opinions")
    if not 0 <= d <= D:
        raise ValueError(f"device count {d} outside [0, {D}] disagree opinions")
    terms = (a, A - a, d, D - d)
    if any(term == 0 for term in terms):
        smoothed = tuple(term + 0.5 for term in terms)
        value = math.log(smoothed[0] / smoothed[1]) - math.log(
            smoothed[2] / smoothed[3]
        )
        return LogOdds(value=value, smoothed=True)
    value = math.log(a / (A - a)) - math.log(d / (D - d))
    return LogOdds(value=value, smoothed=False)


def chi_squared_2x2(
    a: int, b: int, c: int, d: int, yates: bool = False
) -> tuple:
    """Pearson chi-squared test for the 2x2 table [[a, b], [c, d]].

    Returns (statistic, p_value) with one degree of freedom.  Degenerate
    tables (any zero margin) carry no evidence: (0.0, 1.0).  The Yates
    continuity correction is off by default.
    """
    for name, value in (("a", a), ("b", b), ("c", c), ("d", d)):
        if value < 0:
            raise ValueError(f"cell {name} is negative: {value}")
    row1, row2 = a + b, c + d
    col1, col2 = a + c, b + d
    n = row1 + row2
    if 0 in (row1, row2, col1, col2):
        return 0.0, 1.0
    delta = abs(a * d - b * c)
    if yates:
        delta = max(delta - n / 2, 0.0)
    statistic = n * delta * delta / (row1 * row2 * col1 * col2)
    p_value = float(scipy_stats.chi2.sf(statistic, df=1))
    return float(statistic), p_value


def benjamini_hochberg(p_values: Sequence[float], fdr: float = 0.1) -> list:
    """Step-up multiple-testing control; True marks rejected hypotheses.

    Rejects the hypotheses with the k smallest p-values, where k is the
    largest rank with ``p_(k) <= k * fdr / m``.
    """
    if not 0 < fdr < 1:
        raise ValueError(f"fdr must lie in (0, 1), got {fdr!r}")
    p_values = list(p_values)
    for p in p_values:
        if not 0 <= p <= 1:
            raise ValueError(f"p-value {p!r} outside [0, 1]")
    m = len(p_values)
    if m == 0:
        return []
    order = sorted(range(m), key=lambda i: p_values[i])
    cutoff_rank = 0
    for rank, index in enumerate(order, start=1):
        if p_values[index] <= rank * fdr / m:
            cutoff_rank = rank
    rejected = [False] * m
    for index in order[:cutoff_rank]:
        rejected[index] = True
    return rejected


# ---------------------------------------------------------------------------
# Device statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FramingStat:
    """Log-odds and significance of one device within one leaning."""

    device: str
    leaning: str
    slot: str
    category: str
    device_agree: int
    agree_total: int
    device_disagree: int
    disagree_total: int
    log_odds: float
    smoothed: bool
    chi_sq: float
    p_value: float
    significant: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.device_agree <= self.agree_total:
            raise ValueError(
                f"device {self.device!r}: agree count {self.device_agree} "
                f"outside [0, {self.agree_total}]"
            )
        if not 0 <= self.device_disagree <= self.disagree_total:
            raise ValueError(
                f"device {self.device!r}: disagree count {self.device_disagree} "
                f"outside [0, {self.disagree_total}]"
            )

    @property
    def frequency(self) -> int:
        """Occurrences of the device across both stances in this leaning."""
        return self.device_agree + self.device_disagree


def significance(stats: Sequence[FramingStat], fdr: float = 0.1) -> list:
    """Flag significant stats treating the given list as one BH family."""
    stats = list(stats)
    rejected = benjamini_hochberg([stat.p_value for stat in stats], fdr)
    return [
        replace(stat, significant=flag) for stat, flag in zip(stats, rejected)
    ]


def device_stats(
    tuples: Iterable[TupleRecord],
    labels,
    outlet_table: OutletTable,
    lexicons: FramingLexicons | None = None,
    min_freq: int = 20,
    fdr: float = 0.1,
    yates: bool = False,
) -> list:
    """Per-(device, leaning) log-odds with chi-squared/BH significance.

    For each leaning, ``A``/``D`` count the agree-/disagree-labeled tuples
    and a device's ``a``/``d`` count the tuples carrying it (each tuple at
    most once per device).  Devices occurring fewer than ``min_freq`` times
    within the leaning are dropped; Benjamini-Hochberg control runs within
    each (leaning, slot) family.  Results sort by leaning, slot, then
    descending log-odds.
    """
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    lexicons = lexicons or FramingLexicons.load()
    label_of = _label_map(labels)

    totals = {leaning: {"agree": 0, "disagree": 0} for leaning in OWN_STANCE}
    counts: dict = defaultdict(lambda: {"agree": 0, "disagree": 0})
    for record in tuples:
        label = label_of.get(record.tuple_id)
        if label is None or label == "neutral":
            continue
        leaning = outlet_table.leaning_of(record.outlet).value
        if leaning not in OWN_STANCE:
            continue
        totals[leaning][label] += 1
        for tag in tag_devices(record, lexicons):
            counts[(leaning, tag.slot, tag.category, tag.device)][label] += 1

    stats = []
    for (leaning, slot, category, device), by_label in counts.items():
        device_agree, device_disagree = by_label["agree"], by_label["disagree"]
        if device_agree + device_disagree < min_freq:
            continue
        agree_total = totals[leaning]["agree"]
        disagree_total = totals[leaning]["disagree"]
        odds = log_odds(device_agree, agree_total, device_disagree, disagree_total)
        statistic, p_value = chi_squared_2x2(
            device_agree,
            agree_total - device_agree,
            device_disagree,
            disagree_total - device_disagree,
            yates=yates,
        )
        stats.append(
            FramingStat(
                device=device,
                leaning=leaning,
                slot=slot,
                category=category,
                device_agree=device_agree,
                agree_total=agree_total,
                device_disagree=device_disagree,
                disagree_total=disagree_total,
                log_odds=odds.value,
                smoothed=odds.smoothed,
                chi_sq=statistic,
                p_value=p_value,
            )
        )

    flagged = []
    families: dict = defaultdict(list)
    for stat in stats:
        families[(stat.leaning, stat.slot)].append(stat)
    for family in families.values():
        flagged.extend(significance(family, fdr))
    flagged.sort(key=lambda s: (s.leaning, s.slot, -s.log_odds, s.device))
    return flagged


# ---------------------------------------------------------------------------
# Robustness correlation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorrelationResult:
    """Pearson correlation between two device-statistic sets."""

    r: float
    p_value: float
    n_shared: int
    diagnostic: str | None = None


def robustness_correlation(
    stats_full: Sequence[FramingStat], stats_subset: Sequence[FramingStat]
) -> CorrelationResult:
    """Pearson r between log-odds of devices present in both stat sets.

    The p-value comes from the t transform ``t = r sqrt((n-2)/(1-r^2))``
    with ``n-2`` degrees of freedom.  Degenerate inputs (fewer than three
    shared devices, or a constant log-odds vector) return NaN with a
    diagnostic instead of a correlation.
    """
    full = {(s.leaning, s.slot, s.device): s.log_odds for s in stats_full}
    subset = {(s.leaning, s.slot, s.device): s.log_odds for s in stats_subset}
    shared = sorted(full.keys() & subset.keys())
    n = len(shared)
    if n < 3:
        return CorrelationResult(
            r=float("nan"),
            p_value=float("nan"),
            n_shared=n,
            diagnostic=f"only {n} shared devices; need at least 3",
        )
    x = np.array([full[key] for key in shared])
    y = np.array([subset[key] for key in shared])
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return CorrelationResult(
            r=float("nan"),
            p_value=float("nan"),
            n_shared=n,
            diagnostic="constant log-odds vector; correlation undefined",
        )
    x_centered = x - x.mean()
    y_centered = y - y.mean()
    r = float(
        (x_centered * y_centered).sum()
        / math.sqrt((x_centered**2).sum() * (y_centered**2).sum())
    )
    r = max(-1.0, min(1.0, r))
    if 1 - r * r <= 0:
        p_value = 0.0
    else:
        t = abs(r) * math.sqrt((n - 2) / (1 - r * r))
        p_value = float(2 * scipy_stats.t.sf(t, df=n - 2))
    return CorrelationResult(r=r, p_value=p_value, n_shared=n)


# ---------------------------------------------------------------------------
# Artifact files
# ---------------------------------------------------------------------------

_STAT_COLUMNS = [
    "device",
    "leaning",
    "slot",
    "category",
    "device_agree",
    "agree_total",
    "device_disagree",
    "disagree_total",
    "log_odds",
    "smoothed",
    "chi_sq",
    "p_value",
    "significant",
]


def write_framing_stats(path: str | Path, stats: Iterable[FramingStat]) -> None:
    """Write device statistics as CSV."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(_STAT_COLUMNS)
        for stat in stats:
            writer.writerow(
                [
                    stat.device,
                    stat.leaning,
                    stat.slot,
                    stat.category,
                    stat.device_agree,
                    stat.agree_total,
                    stat.device_disagree,
                    stat.disagree_total,
                    repr(stat.log_odds),
                    stat.smoothed,
                    repr(stat.chi_sq),
                    repr(stat.p_value),
                    stat.significant,
                ]
            )


def read_framing_stats(path: str | Path) -> list:
    """Read device statistics written by :func:`write_framing_stats`."""
    stats = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(line for line in handle if not line.startswith("#"))
        missing = set(_STAT_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                stats.append(
                    FramingStat(
                        device=row["device"],
                        leaning=row["leaning"],
                        slot=row["slot"],
                        category=row["category"],
                        device_agree=int(row["device_agree"]),
                        agree_total=int(row["agree_total"]),
                        device_disagree=int(row["device_disagree"]),
                        disagree_total=int(row["disagree_total"]),
                        log_odds=float(row["log_odds"]),
                        smoothed=row["smoothed"] == "True",
                        chi_sq=float(row["chi_sq"]),
                        p_value=float(row["p_value"]),
                        significant=row["significant"] == "True",
                    )
                )
            except ValueError as exc:
                raise ValueError(f"{path} line {lineno}: {exc}") from None
    return stats
