"""Rule-based extraction of (source, predicate, opinion) tuples.

An opinion is a clausal complement: the subtree under a token whose
dependency label is "ccomp".  The predicate is the head of that subtree and
the source is the predicate's subject (with participial and relative-clause
attachments resolved to the governing noun).  Extracted tuples then pass
through lexical filters that keep only affirmed, indicative, on-topic
statements.

Each filter is a pure predicate on a tuple, so filters commute; the default
pipeline order only affects per-stage drop counts.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .parses import ParsedDocument, ParsedSentence, Token

__all__ = [
    "ExtractionConfig",
    "FilterLexicons",
    "OpinionTuple",
    "TupleRecord",
    "extract_tuples",
    "filter_asserted",
    "filter_indicative",
    "filter_implicative_scope",
    "filter_indirect_questions",
    "filter_topic",
    "select_annotation_candidates",
    "render_clause",
    "annotation_text",
    "to_record",
    "extract_document",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtractionConfig:
    """Dependency-label conventions; defaults follow the ClearNLP label set
    with UD variants accepted where they differ."""

    ccomp_label: str = "ccomp"
    particle_label: str = "prt"
    subject_prefix: str = "nsubj"
    relcl_labels: tuple[str, ...] = ("relcl", "acl:relcl")
    participle_labels: tuple[str, ...] = ("acl", "amod", "partmod")
    mark_label: str = "mark"
    neg_label: str = "neg"
    negating_adverbs: tuple[str, ...] = ("not", "n't", "never")
    negating_determiners: tuple[str, ...] = ("no", "neither", "none")
    aux_prefix: str = "aux"
    relative_pronouns: tuple[str, ...] = ("who", "whom", "which", "that", "whose")
    name_part_labels: tuple[str, ...] = ("compound", "flat", "flat:name")
    modal_lemmas: tuple[str, ...] = (
        "may", "might", "could", "would", "should", "must", "can", "shall", "ought",
    )


_DEFAULT_CONFIG = ExtractionConfig()

_LEXICON_FILES = {
    "indicative_verbs": "indicative_verbs.txt",
    "implicatives": "implicatives.txt",
    "question_words": "question_words.txt",
    "topic_stems": "topic_stems.txt",
    "precision_keywords": "precision_keywords.txt",
    "modal_lemmas": "modal_verbs.txt",
}


def _read_entries(path: Path) -> list[str]:
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            entries.append(line.lower())
    return entries


@dataclass(frozen=True)
class FilterLexicons:
    """Lexical resources backing the tuple filters.  All entries lowercase."""

    indicative_verbs: frozenset[str]
    implicatives: tuple[tuple[str, ...], ...]
    question_words: frozenset[str]
    topic_stems: tuple[str, ...]
    precision_keywords: tuple[str, ...]
    modal_lemmas: frozenset[str]

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "FilterLexicons":
        """Load lexicons from a directory, falling back to the shipped files."""
        if directory is None:
            directory = Path(str(resources.files("opinionframing").joinpath("data")))
        directory = Path(directory)
        raw = {}
        for name, filename in _LEXICON_FILES.items():
            path = directory / filename
            if not path.exists():
                raise FileNotFoundError(f"lexicon file missing: {path}")
            raw[name] = _read_entries(path)
        implicatives = []
        for entry in raw["implicatives"]:
            words = tuple(entry.split())
            if len(words) > 2 or (len(words) == 2 and words[1] != "to"):
                raise ValueError(
                    f"unsupported implicative construction {entry!r}: "
                    "expected a single lemma or '<lemma> to'"
                )
            implicatives.append(words)
        seen: dict[str, None] = {}
        for stem in raw["topic_stems"]:
            seen.setdefault(stem)
        return cls(
            indicative_verbs=frozenset(raw["indicative_verbs"]),
            implicatives=tuple(implicatives),
            question_words=frozenset(raw["question_words"]),
            topic_stems=tuple(seen),
            precision_keywords=tuple(raw["precision_keywords"]),
            modal_lemmas=frozenset(raw["modal_lemmas"]),
        )


@dataclass(frozen=True)
class OpinionTuple:
    """One attributed opinion: who (source) said (predicate) what (opinion).

    Token fields hold 1-based indices into the originating sentence; the
    surface/lemma tuples are detached copies so the lexical filters do not
    need the sentence at hand.
    """

    article_id: str
    sentence_index: int
    source_tokens: tuple[int, ...]
    source_head: int | None
    source_canonical: str
    source_modifiers: tuple[int, ...]
    predicate_index: int
    predicate_lemma: str
    predicate_particle: str | None
    predicate_modifiers: tuple[int, ...]
    opinion_root: int
    opinion_tokens: tuple[int, ...]
    negated: bool
    modal: bool
    complementizer: str | None
    opinion_surfaces: tuple[str, ...] = field(default=(), compare=False)
    opinion_lemmas: tuple[str, ...] = field(default=(), compare=False)

    def predicate_key(self) -> str:
        """Lemma plus particle, e.g. "point out"."""
        if self.predicate_particle:
            return f"{self.predicate_lemma} {self.predicate_particle}"
        return self.predicate_lemma


def _subtree_indices(sentence: ParsedSentence, index: int) -> set[int]:
    return {tok.index for tok in sentence.subtree(index)}


def _has_negation(sentence: ParsedSentence, index: int, cfg: ExtractionConfig) -> bool:
    for child in sentence.children(index):
        if child.deprel == cfg.neg_label:
            return True
        if child.deprel == "advmod" and child.lemma.lower() in cfg.negating_adverbs:
            return True
    return False


def _source_negated(sentence: ParsedSentence, index: int, cfg: ExtractionConfig) -> bool:
    for child in sentence.children(index):
        if child.deprel in ("det", cfg.neg_label):
            if child.lemma.lower() in cfg.negating_determiners:
                return True
    return False


def _resolve_source(
    sentence: ParsedSentence, predicate: Token, cfg: ExtractionConfig
) -> Token | None:
    subject = None
    for child in sentence.children(predicate.index):
        if child.deprel.startswith(cfg.subject_prefix):
            subject = child
            break
    if subject is None:
        # Participial predicate ("a researcher, warning that ..."): the
        # source is the noun the participle attaches to.
        if predicate.deprel in cfg.participle_labels and predicate.head != 0:
            return sentence.token(predicate.head)
        return None
    if subject.surface.lower() in cfg.relative_pronouns:
        # Relative pronoun: the true source is the antecedent, reached via
        # the head of the relative-clause verb.
        node = subject
        while node.head != 0:
            if node.deprel in cfg.relcl_labels:
                return sentence.token(node.head)
            node = sentence.token(node.head)
    return subject


def _canonical_source(
    sentence: ParsedSentence, head: Token, cfg: ExtractionConfig
) -> str:
    if head.coref_canonical:
        return head.coref_canonical
    parts = [head]
    for child in sentence.children(head.index):
        if child.deprel in cfg.name_part_labels:
            parts.append(child)
    parts.sort(key=lambda tok: tok.index)
    return " ".join(tok.surface for tok in parts)


def extract_tuples(
    sentence: ParsedSentence, config: ExtractionConfig | None = None
) -> list[OpinionTuple]:
    """Extract one tuple per ccomp-rooted subtree of the sentence."""
    cfg = config or _DEFAULT_CONFIG
    tuples = []
    for tok in sentence.tokens:
        if tok.deprel != cfg.ccomp_label:
            continue
        if tok.head == 0:
            log.warning(
                "%s/%s: ccomp token %d at sentence root has no predicate; skipped",
                sentence.article_id,
                sentence.sentence_index,
                tok.index,
            )
            continue
        predicate = sentence.token(tok.head)
        opinion_indices = sorted(_subtree_indices(sentence, tok.index))
        opinion_tokens = [sentence.token(i) for i in opinion_indices]

        particle = None
        for child in sentence.children(predicate.index):
            if child.deprel == cfg.particle_label:
                particle = child.lemma.lower()
                break

        source = _resolve_source(sentence, predicate, cfg)
        source_tokens: tuple[int, ...] = ()
        source_modifiers: tuple[int, ...] = ()
        source_canonical = ""
        source_neg = False
        if source is not None:
            core = [source.index] + [
                c.index
                for c in sentence.children(source.index)
                if c.deprel in cfg.name_part_labels
            ]
            source_tokens = tuple(sorted(core))
            modifier_indices: set[int] = set()
            for child in sentence.children(source.index):
                if child.deprel == "punct":
                    continue
                child_subtree = _subtree_indices(sentence, child.index)
                if predicate.index in child_subtree:
                    continue  # the clause we came from is not a modifier
                modifier_indices.update(child_subtree)
            source_modifiers = tuple(sorted(modifier_indices))
            source_canonical = _canonical_source(sentence, source, cfg)
            source_neg = _source_negated(sentence, source.index, cfg)

        opinion_set = set(opinion_indices)
        source_set = (
            _subtree_indices(sentence, source.index) if source is not None else set()
        )
        predicate_modifiers = []
        for child in sentence.children(predicate.index):
            if child.index in opinion_set or child.index in source_set:
                continue
            if child.deprel.startswith(cfg.aux_prefix):
                continue
            if child.deprel in (cfg.particle_label, "punct"):
                continue
            predicate_modifiers.extend(_subtree_indices(sentence, child.index))

        complementizer = None
        for child in sentence.children(tok.index):
            if child.deprel == cfg.mark_label:
                complementizer = child.surface.lower()
                break

        negated = (
            _has_negation(sentence, predicate.index, cfg)
            or _has_negation(sentence, tok.index, cfg)
            or source_neg
        )
        modal = any(
            child.deprel.startswith(cfg.aux_prefix)
            and child.lemma.lower() in cfg.modal_lemmas
            for child in sentence.children(predicate.index)
        )

        tuples.append(
            OpinionTuple(
                article_id=sentence.article_id,
                sentence_index=sentence.sentence_index,
                source_tokens=source_tokens,
                source_head=source.index if source is not None else None,
                source_canonical=source_canonical,
                source_modifiers=source_modifiers,
                predicate_index=predicate.index,
                predicate_lemma=predicate.lemma.lower(),
                predicate_particle=particle,
                predicate_modifiers=tuple(sorted(predicate_modifiers)),
                opinion_root=tok.index,
                opinion_tokens=tuple(opinion_indices),
                negated=negated,
                modal=modal,
                complementizer=complementizer,
                opinion_surfaces=tuple(t.surface for t in opinion_tokens),
                opinion_lemmas=tuple(t.lemma.lower() for t in opinion_tokens),
            )
        )
    return tuples


def filter_asserted(tuples: Iterable[OpinionTuple]) -> list[OpinionTuple]:
    """Drop tuples under negation or a modal (hedged attribution)."""
    return [t for t in tuples if not t.negated and not t.modal]


def filter_indicative(
    tuples: Iterable[OpinionTuple], lexicons: FilterLexicons
) -> list[OpinionTuple]:
    """Keep tuples whose predicate embeds an indicative complement."""
    if not lexicons.indicative_verbs:
        raise ValueError("indicative verb lexicon is empty; filter would drop all tuples")
    verbs = lexicons.indicative_verbs
    return [
        t
        for t in tuples
        if t.predicate_key() in verbs or t.predicate_lemma in verbs
    ]


def _in_implicative_scope(
    sentence: ParsedSentence, predicate_index: int, lexicons: FilterLexicons
) -> bool:
    node = sentence.token(predicate_index)
    while node.head != 0:
        parent = sentence.token(node.head)
        for construction in lexicons.implicatives:
            if parent.lemma.lower() != construction[0]:
                continue
            if len(construction) == 1:
                return True
            if any(
                child.lemma.lower() == "to" and child.deprel in ("aux", "mark")
                for child in sentence.children(node.index)
            ):
                return True
        node = parent
    return False


def filter_implicative_scope(
    tuples: Iterable[OpinionTuple],
    sentence: ParsedSentence,
    lexicons: FilterLexicons,
) -> list[OpinionTuple]:
    """Drop tuples whose predicate is governed by an implicitly negating
    construction such as "fail to"."""
    return [
        t
        for t in tuples
        if not _in_implicative_scope(sentence, t.predicate_index, lexicons)
    ]


def filter_indirect_questions(
    tuples: Iterable[OpinionTuple],
    lexicons: FilterLexicons | None = None,
    question_words: frozenset[str] | None = None,
) -> list[OpinionTuple]:
    """Drop tuples that report a question rather than a statement."""
    if question_words is None:
        question_words = (
            lexicons.question_words if lexicons is not None else _QUESTION_FALLBACK
        )
    kept = []
    for t in tuples:
        if t.complementizer and t.complementizer in question_words:
            continue
        if t.opinion_surfaces and t.opinion_surfaces[0].lower() in question_words:
            continue
        kept.append(t)
    return kept


_QUESTION_FALLBACK = frozenset(["who", "what", "when", "where", "how", "whether", "which"])


def filter_topic(
    tuples: Iterable[OpinionTuple], lexicons: FilterLexicons
) -> list[OpinionTuple]:
    """Keep tuples whose opinion span mentions the topic by keyword stem."""
    stems = lexicons.topic_stems
    kept = []
    for t in tuples:
        words = [w.lower() for w in t.opinion_surfaces] + list(t.opinion_lemmas)
        if any(word.startswith(stem) for word in words for stem in stems):
            kept.append(t)
    return kept


def _phrase_pattern(phrase: str) -> re.Pattern[str]:
    return re.compile(r"(?<!\w)" + re.escape(phrase) + r"(?!\w)")


def select_annotation_candidates(
    tuples: Iterable[OpinionTuple], lexicons: FilterLexicons
) -> list[OpinionTuple]:
    """Keep tuples whose opinion text contains a high-precision keyword."""
    patterns = [_phrase_pattern(p) for p in lexicons.precision_keywords]
    kept = []
    for t in tuples:
        text = _clause_text(t).lower()
        if any(p.search(text) for p in patterns):
            kept.append(t)
    return kept


def _cleanup_spacing(text: str) -> str:
    text = re.sub(r"\s+", " ", text).strip()
    text = re.sub(r"\s+([,.;:!?%')\]])", r"\1", text)
    text = re.sub(r"([(\[$])\s+", r"\1", text)
    return text


def _clause_text(t: OpinionTuple) -> str:
    """Opinion span text with the complementizer stripped."""
    surfaces = list(t.opinion_surfaces)
    if t.complementizer and surfaces and surfaces[0].lower() == t.complementizer:
        surfaces = surfaces[1:]
    return _cleanup_spacing(" ".join(surfaces))


def render_clause(t: OpinionTuple) -> str:
    return _clause_text(t)


def annotation_text(t: OpinionTuple) -> str:
    """Annotation-ready form: cleaned spacing, leading capital, final stop."""
    text = _clause_text(t)
    if not text:
        return text
    text = text[0].upper() + text[1:]
    if text[-1] not in ".!?":
        text += "."
    return text


@dataclass(frozen=True)
class TupleRecord:
    """Detached, artifact-ready view of a surviving tuple."""

    tuple_id: str
    article_id: str
    sentence_index: int
    outlet: str
    source_head: int | None
    source_tokens: tuple[int, ...]
    source_canonical: str
    source_text: str
    source_modifiers: tuple[int, ...]
    source_modifier_lemmas: tuple[str, ...]
    predicate_index: int
    predicate_lemma: str
    predicate_particle: str | None
    predicate_modifiers: tuple[int, ...]
    opinion_root: int
    opinion_tokens: tuple[int, ...]
    opinion_text: str
    negated: bool
    modal: bool
    complementizer: str | None
    sentence_text: str
    annotation_candidate: bool
    annotation_text: str

    def predicate_key(self) -> str:
        if self.predicate_particle:
            return f"{self.predicate_lemma} {self.predicate_particle}"
        return self.predicate_lemma

    def to_json(self) -> dict:
        return {
            "tuple_id": self.tuple_id,
            "article_id": self.article_id,
            "sentence_index": self.sentence_index,
            "outlet": self.outlet,
            "source_head": self.source_head,
            "source_tokens": list(self.source_tokens),
            "source_canonical": self.source_canonical,
            "source_text": self.source_text,
            "source_modifiers": list(self.source_modifiers),
            "source_modifier_lemmas": list(self.source_modifier_lemmas),
            "predicate_index": self.predicate_index,
            "predicate_lemma": self.predicate_lemma,
            "predicate_particle": self.predicate_particle,
            "predicate_modifiers": list(self.predicate_modifiers),
            "opinion_root": self.opinion_root,
            "opinion_tokens": list(self.opinion_tokens),
            "opinion_text": self.opinion_text,
            "negated": self.negated,
            "modal": self.modal,
            "complementizer": self.complementizer,
            "sentence_text": self.sentence_text,
            "annotation_candidate": self.annotation_candidate,
            "annotation_text": self.annotation_text,
        }

    @classmethod
    def from_json(cls, row: dict) -> "TupleRecord":
        return cls(
            tuple_id=row["tuple_id"],
            article_id=row["article_id"],
            sentence_index=row["sentence_index"],
            outlet=row["outlet"],
            source_head=row["source_head"],
            source_tokens=tuple(row["source_tokens"]),
            source_canonical=row["source_canonical"],
            source_text=row["source_text"],
            source_modifiers=tuple(row["source_modifiers"]),
            source_modifier_lemmas=tuple(row["source_modifier_lemmas"]),
            predicate_index=row["predicate_index"],
            predicate_lemma=row["predicate_lemma"],
            predicate_particle=row["predicate_particle"],
            predicate_modifiers=tuple(row["predicate_modifiers"]),
            opinion_root=row["opinion_root"],
            opinion_tokens=tuple(row["opinion_tokens"]),
            opinion_text=row["opinion_text"],
            negated=row["negated"],
            modal=row["modal"],
            complementizer=row["complementizer"],
            sentence_text=row["sentence_text"],
            annotation_candidate=row["annotation_candidate"],
            annotation_text=row["annotation_text"],
        )


def to_record(
    t: OpinionTuple,
    sentence: ParsedSentence,
    outlet: str,
    lexicons: FilterLexicons,
) -> TupleRecord:
    """Attach text renderings and the annotation-candidate flag."""
    candidate = bool(select_annotation_candidates([t], lexicons))
    source_text = _cleanup_spacing(
        " ".join(sentence.token(i).surface for i in t.source_tokens)
    )
    modifier_lemmas = tuple(
        sentence.token(i).lemma.lower() for i in t.source_modifiers
    )
    return TupleRecord(
        tuple_id=f"{t.article_id}-s{t.sentence_index}-t{t.opinion_root}",
        article_id=t.article_id,
        sentence_index=t.sentence_index,
        outlet=outlet,
        source_head=t.source_head,
        source_tokens=t.source_tokens,
        source_canonical=t.source_canonical,
        source_text=source_text,
        source_modifiers=t.source_modifiers,
        source_modifier_lemmas=modifier_lemmas,
        predicate_index=t.predicate_index,
        predicate_lemma=t.predicate_lemma,
        predicate_particle=t.predicate_particle,
        predicate_modifiers=t.predicate_modifiers,
        opinion_root=t.opinion_root,
        opinion_tokens=t.opinion_tokens,
        opinion_text=render_clause(t),
        negated=t.negated,
        modal=t.modal,
        complementizer=t.complementizer,
        sentence_text=sentence.text(),
        annotation_candidate=candidate,
        annotation_text=annotation_text(t),
    )


_STAGES = (
    "extracted",
    "asserted",
    "indicative",
    "implicative_scope",
    "indirect_questions",
    "topic",
)


def extract_document(
    document: ParsedDocument,
    lexicons: FilterLexicons,
    outlet: str = "",
    config: ExtractionConfig | None = None,
) -> tuple[list[TupleRecord], dict[str, int]]:
    """Run extraction plus the default filter pipeline over one document.

    Returns surviving tuples as records along with per-stage survivor counts.
    """
    if config is None:
        config = ExtractionConfig(modal_lemmas=tuple(sorted(lexicons.modal_lemmas)))
    counts = {stage: 0 for stage in _STAGES}
    records = []
    for sentence in document.sentences:
        tuples = extract_tuples(sentence, config)
        counts["extracted"] += len(tuples)
        tuples = filter_asserted(tuples)
        counts["asserted"] += len(tuples)
        tuples = filter_indicative(tuples, lexicons)
        counts["indicative"] += len(tuples)
        tuples = filter_implicative_scope(tuples, sentence, lexicons)
        counts["implicative_scope"] += len(tuples)
        tuples = filter_indirect_questions(tuples, lexicons)
        counts["indirect_questions"] += len(tuples)
        tuples = filter_topic(tuples, lexicons)
        counts["topic"] += len(tuples)
        records.extend(to_record(t, sentence, outlet, lexicons) for t in tuples)
    return records, counts
