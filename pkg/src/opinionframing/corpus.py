"""Article corpus handling: ingestion, URL filtering, and deduplication.

Articles arrive as JSON lines with stable identifiers.  Cleanup happens in
three passes: drop articles whose URL path marks a non-news section, collapse
exact URL duplicates, then collapse near-duplicate titles per outlet with a
length-scaled Damerau-Levenshtein criterion.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from datetime import date
from enum import Enum
from typing import IO, Iterable, Sequence
from urllib.parse import urlsplit

try:
    import tomllib
except ImportError:
    import tomli as tomllib

__all__ = [
    "Leaning",
    "ArticleRecord",
    "OutletTable",
    "read_articles",
    "write_articles",
    "filter_by_url",
    "normalize_url",
    "dedup_by_url",
    "damerau_levenshtein",
    "normalize_title",
    "titles_duplicate",
    "dedup_by_title",
]

log = logging.getLogger(__name__)


class Leaning(str, Enum):
    LEFT = "Left"
    RIGHT = "Right"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class ArticleRecord:
    """A single news article plus outlet metadata."""

    article_id: str
    url: str
    title: str
    outlet: str
    publish_date: date
    body: str = ""
    leaning: Leaning = Leaning.UNKNOWN
    is_wire: bool = False


class OutletTable:
    """Maps outlet names to a political leaning and a wire-service flag.

    Leanings are never inferred from article content; they come only from
    this table so that every downstream grouping is auditable.
    """

    def __init__(self, entries: dict[str, tuple[Leaning, bool]]):
        self.entries = dict(entries)

    @classmethod
    def from_toml(cls, path: str) -> "OutletTable":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        entries: dict[str, tuple[Leaning, bool]] = {}
        for name, info in raw.get("outlet", {}).items():
            leaning = Leaning(info.get("leaning", "Unknown"))
            entries[name] = (leaning, bool(info.get("wire", False)))
        if not entries:
            raise ValueError(f"no [outlet.*] entries in {path}")
        return cls(entries)

    def leaning_of(self, outlet: str) -> Leaning:
        return self.entries.get(outlet, (Leaning.UNKNOWN, False))[0]

    def is_wire(self, outlet: str) -> bool:
        return self.entries.get(outlet, (Leaning.UNKNOWN, False))[1]

    def annotate(self, articles: Iterable[ArticleRecord]) -> list[ArticleRecord]:
        """Return copies of the articles with leaning and wire flag filled in."""
        out = []
        for art in articles:
            if art.outlet not in self.entries:
                log.warning("outlet %r not in outlet table; leaning Unknown", art.outlet)
            out.append(
                replace(
                    art,
                    leaning=self.leaning_of(art.outlet),
                    is_wire=self.is_wire(art.outlet),
                )
            )
        return out


def read_articles(stream: IO[str]) -> list[ArticleRecord]:
    """Parse article records from a JSON-lines stream."""
    articles = []
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {lineno}: invalid JSON: {exc}") from exc
        try:
            articles.append(
                ArticleRecord(
                    article_id=str(row["article_id"]),
                    url=row["url"],
                    title=row["title"],
                    outlet=row["outlet"],
                    publish_date=date.fromisoformat(row["publish_date"]),
                    body=row.get("body", ""),
                    leaning=Leaning(row.get("leaning", "Unknown")),
                    is_wire=bool(row.get("is_wire", False)),
                )
            )
        except KeyError as exc:
            raise ValueError(f"line {lineno}: missing field {exc}") from exc
    seen: set[str] = set()
    for art in articles:
        if art.article_id in seen:
            raise ValueError(f"duplicate article_id {art.article_id!r}")
        seen.add(art.article_id)
    return articles


def write_articles(stream: IO[str], articles: Iterable[ArticleRecord]) -> None:
    """Write article records as JSON lines (inverse of read_articles)."""
    for art in articles:
        row = {
            "article_id": art.article_id,
            "url": art.url,
            "title": art.title,
            "outlet": art.outlet,
            "publish_date": art.publish_date.isoformat(),
            "body": art.body,
            "leaning": art.leaning.value,
            "is_wire": art.is_wire,
        }
        stream.write(json.dumps(row, ensure_ascii=False) + "\n")


def filter_by_url(
    articles: Sequence[ArticleRecord], tags: Sequence[str]
) -> list[ArticleRecord]:
    """Drop articles whose URL path contains a blacklisted section tag.

    Tags are substrings like "/sports/" matched against the URL path with a
    trailing slash appended, so a tag also hits paths that end at the section
    name.  Articles with unparseable URLs are kept and logged.
    """
    if not tags:
        raise ValueError("empty URL tag list")
    kept = []
    for art in articles:
        try:
            path = urlsplit(art.url).path
        except ValueError:
            log.warning("article %s: malformed URL %r kept", art.article_id, art.url)
            kept.append(art)
            continue
        probe = path if path.endswith("/") else path + "/"
        if not any(tag in probe for tag in tags):
            kept.append(art)
    return kept


def normalize_url(url: str) -> str:
    """Canonical form of a URL: lowercased host, no scheme/query/fragment,
    no trailing slash."""
    parts = urlsplit(url.strip())
    host = parts.netloc
    path = parts.path
    if not host and path:
        # Schemeless input like "a.com/x": the first path segment is the host.
        head, _, rest = path.lstrip("/").partition("/")
        host = head
        path = "/" + rest if rest else ""
    return host.lower() + path.rstrip("/")


def dedup_by_url(articles: Sequence[ArticleRecord]) -> list[ArticleRecord]:
    """Keep the first article for each normalized URL."""
    seen: set[str] = set()
    kept = []
    for art in articles:
        key = normalize_url(art.url)
        if key in seen:
            continue
        seen.add(key)
        kept.append(art)
    return kept


def damerau_levenshtein(a: str, b: str) -> int:
    """Edit distance counting insertions, deletions, substitutions, and
    transpositions of adjacent characters (restricted variant: no substring
    is edited twice)."""
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    prev2: list[int] = []
    prev = list(range(lb + 1))
    for i in range(1, la + 1):
        cur = [i] + [0] * lb
        for j in range(1, lb + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            best = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
            if i > 1 and j > 1 and a[i - 1] == b[j - 2] and a[i - 2] == b[j - 1]:
                best = min(best, prev2[j - 2] + cost)
            cur[j] = best
        prev2, prev = prev, cur
    return prev[lb]


def normalize_title(title: str) -> str:
    """Case-fold a title and collapse runs of whitespace."""
    return " ".join(title.split()).casefold()


def titles_duplicate(title_a: str, title_b: str, threshold: float = 0.2) -> bool:
    """Two titles are near-duplicates when their edit distance is at most
    `threshold` times the length of the shorter normalized title."""
    na, nb = normalize_title(title_a), normalize_title(title_b)
    if not na or not nb:
        return False
    return damerau_levenshtein(na, nb) <= threshold * min(len(na), len(nb))


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def dedup_by_title(
    articles: Sequence[ArticleRecord], threshold: float = 0.2
) -> list[ArticleRecord]:
    """Collapse groups of near-duplicate titles within each outlet.

    Pairwise duplicates are merged transitively; the survivor of each group
    is the earliest-published article (ties broken by article_id).  Articles
    with an empty normalized title are always kept.
    """
    by_outlet: dict[str, list[int]] = {}
    for idx, art in enumerate(articles):
        by_outlet.setdefault(art.outlet, []).append(idx)

    drop: set[int] = set()
    for indices in by_outlet.values():
        live = []
        for i in indices:
            if normalize_title(articles[i].title):
                live.append(i)
            else:
                log.warning(
                    "article %s has an empty title; kept unconditionally",
                    articles[i].article_id,
                )
        uf = _UnionFind(len(live))
        for p in range(len(live)):
            for r in range(p + 1, len(live)):
                if titles_duplicate(
                    articles[live[p]].title, articles[live[r]].title, threshold
                ):
                    uf.union(p, r)
        groups: dict[int, list[int]] = {}
        for p, idx in enumerate(live):
            groups.setdefault(uf.find(p), []).append(idx)
        for members in groups.values():
            if len(members) < 2:
                continue
            survivor = min(
                members,
                key=lambda i: (articles[i].publish_date, articles[i].article_id),
            )
            drop.update(i for i in members if i != survivor)

    return [art for idx, art in enumerate(articles) if idx not in drop]
