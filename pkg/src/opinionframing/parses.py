"""Dependency-parse data model and CoNLL-U serialization.

Documents are stored as blocks of sentences in the 10-column CoNLL-U format.
A `# newdoc id = <article_id>` comment opens each document and a
`# sent_id = <n>` comment opens each sentence.  Coreference output may be
carried per token in the MISC column as `Coref=<canonical mention>`.

Multiword-token ranges ("1-2") and empty nodes ("1.1") are skipped on read;
the syntactic word lines they summarize are kept.  Sentences that do not
form a single rooted tree are rejected individually with a diagnostic while
the rest of the document is preserved.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

__all__ = [
    "ConlluError",
    "Token",
    "ParsedSentence",
    "ParsedDocument",
    "read_parses",
    "to_conllu",
]

log = logging.getLogger(__name__)

_NUM_COLUMNS = 10


class ConlluError(ValueError):
    """Malformed CoNLL-U input that cannot be skipped."""


@dataclass(frozen=True)
class Token:
    """One syntactic word; `head` is a 1-based token index, 0 for the root."""

    index: int
    surface: str
    lemma: str
    upos: str
    head: int
    deprel: str
    coref_canonical: str | None = None


@dataclass
class ParsedSentence:
    article_id: str
    sentence_index: int
    tokens: tuple[Token, ...]
    _children: dict[int, list[int]] = field(
        default_factory=dict, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        if not self._children:
            for tok in self.tokens:
                self._children.setdefault(tok.head, []).append(tok.index)

    def token(self, index: int) -> Token:
        return self.tokens[index - 1]

    def children(self, index: int) -> list[Token]:
        return [self.tokens[i - 1] for i in self._children.get(index, [])]

    def root(self) -> Token:
        return self.tokens[self._children[0][0] - 1]

    def subtree(self, index: int) -> list[Token]:
        """All tokens dominated by `index` (inclusive), in surface order."""
        seen: list[int] = []
        stack = [index]
        while stack:
            i = stack.pop()
            seen.append(i)
            stack.extend(self._children.get(i, []))
        return [self.tokens[i - 1] for i in sorted(seen)]

    def text(self) -> str:
        return " ".join(tok.surface for tok in self.tokens)


@dataclass
class ParsedDocument:
    article_id: str
    sentences: list[ParsedSentence]


def _validate_tree(tokens: Sequence[Token]) -> str | None:
    """Return a reason string if the tokens do not form one rooted tree."""
    n = len(tokens)
    if n == 0:
        return "no tokens"
    for pos, tok in enumerate(tokens, start=1):
        if tok.index != pos:
            return f"token ids not contiguous at position {pos} (got {tok.index})"
        if not 0 <= tok.head <= n:
            return f"token {tok.index}: head {tok.head} out of range"
        if tok.head == tok.index:
            return f"token {tok.index}: self-headed"
    roots = [tok.index for tok in tokens if tok.head == 0]
    if len(roots) != 1:
        return f"expected one root, found {len(roots)}"
    for tok in tokens:
        hops = 0
        node = tok.index
        while node != 0:
            node = tokens[node - 1].head
            hops += 1
            if hops > n:
                return f"cycle involving token {tok.index}"
    return None


def _parse_misc(misc: str) -> str | None:
    if misc in ("", "_"):
        return None
    for part in misc.split("|"):
        key, sep, value = part.partition("=")
        if sep and key == "Coref":
            return value
    return None


def _is_plain_word_id(token_id: str) -> bool:
    return token_id.isdigit()


def read_parses(stream: IO[str]) -> list[ParsedDocument]:
    """Read CoNLL-U documents from a stream."""
    documents: list[ParsedDocument] = []
    doc: ParsedDocument | None = None
    sent_id: int | None = None
    pending: list[Token] = []
    pending_line: int = 0

    def flush() -> None:
        nonlocal pending, sent_id
        if not pending:
            sent_id = None
            return
        if doc is None:
            raise ConlluError(
                f"line {pending_line}: token lines before any '# newdoc id' comment"
            )
        index = sent_id if sent_id is not None else len(doc.sentences)
        problem = _validate_tree(pending)
        if problem is None:
            doc.sentences.append(
                ParsedSentence(doc.article_id, index, tuple(pending))
            )
        else:
            log.warning(
                "skipping sentence %s/%s near line %d: %s",
                doc.article_id,
                index,
                pending_line,
                problem,
            )
        pending = []
        sent_id = None

    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            key, sep, value = body.partition("=")
            if sep and key.strip() == "newdoc id":
                flush()
                doc = ParsedDocument(value.strip(), [])
                documents.append(doc)
            elif sep and key.strip() == "sent_id":
                try:
                    sent_id = int(value.strip())
                except ValueError as exc:
                    raise ConlluError(
                        f"line {lineno}: non-integer sent_id {value.strip()!r}"
                    ) from exc
            continue
        columns = line.split("\t")
        if len(columns) != _NUM_COLUMNS:
            raise ConlluError(
                f"line {lineno}: expected {_NUM_COLUMNS} tab-separated columns, "
                f"got {len(columns)}"
            )
        if not _is_plain_word_id(columns[0]):
            # Multiword-token range or empty node.
            continue
        try:
            head = int(columns[6])
        except ValueError as exc:
            raise ConlluError(
                f"line {lineno}: non-integer head {columns[6]!r}"
            ) from exc
        if not pending:
            pending_line = lineno
        pending.append(
            Token(
                index=int(columns[0]),
                surface=columns[1],
                lemma=columns[2],
                upos=columns[3],
                head=head,
                deprel=columns[7],
                coref_canonical=_parse_misc(columns[9]),
            )
        )
    flush()
    return documents


def _token_line(tok: Token) -> str:
    misc = f"Coref={tok.coref_canonical}" if tok.coref_canonical else "_"
    return "\t".join(
        [
            str(tok.index),
            tok.surface,
            tok.lemma,
            tok.upos,
            "_",
            "_",
            str(tok.head),
            tok.deprel,
            "_",
            misc,
        ]
    )


def to_conllu(documents: Iterable[ParsedDocument]) -> str:
    """Serialize documents in the canonical form read_parses accepts."""
    chunks = []
    for doc in documents:
        chunks.append(f"# newdoc id = {doc.article_id}\n")
        for sent in doc.sentences:
            chunks.append(f"# sent_id = {sent.sentence_index}\n")
            for tok in sent.tokens:
                chunks.append(_token_line(tok) + "\n")
            chunks.append("\n")
    return "".join(chunks)
