"""Three-way stance assignment for opinion texts.

Assigns each opinion one of three stances toward the target proposition
("climate change / global warming is a serious concern"): ``agree``,
``neutral``, or ``disagree``.  Two routes produce labels:

* an in-core linear classifier -- a multinomial logistic regression over
  lowercased unigram/bigram counts, trained on probability-weighted labels
  (every instance contributes one weighted row per stance with positive
  probability) with an L2 penalty on the feature weights; and
* ingestion of externally produced labels from CSV, so downstream analyses
  can consume labels from any classifier of the corpus owner's choosing.

Training is deterministic: features are sorted, the optimizer starts from
zeros, and no randomness is involved.  Feature extraction and scoring are
vectorized over instances; training runs single-threaded.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

#: Stance labels in canonical order; ties in predicted probability are broken
#: toward the earlier label.
LABELS: tuple[str, str, str] = ("agree", "neutral", "disagree")
_LABEL_INDEX: Mapping[str, int] = {label: k for k, label in enumerate(LABELS)}

ORIGIN_LINEAR = "in-core-linear"
ORIGIN_EXTERNAL = "external"

# Word characters minus underscore; \w is Unicode-aware in Python 3.
_TOKEN_RE = re.compile(r"[^\W_]+")
_DIGIT_RE = re.compile(r"\d")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledInstance:
    """One opinion text with a probability distribution over stances.

    ``label_distribution`` is ordered like :data:`LABELS`:
    (P(agree), P(neutral), P(disagree)).
    """

    item_id: str
    text: str
    label_distribution: tuple[float, float, float]
    outlet_leaning: str = "Unknown"

    def __post_init__(self) -> None:
        dist = tuple(float(p) for p in self.label_distribution)
        object.__setattr__(self, "label_distribution", dist)
        if len(dist) != len(LABELS):
            raise ValueError(
                f"item {self.item_id!r}: label distribution must have "
                f"{len(LABELS)} entries, got {len(dist)}"
            )
        if any(p < 0 for p in dist):
            raise ValueError(
                f"item {self.item_id!r}: label probabilities must be >= 0, "
                f"got {dist}"
            )
        total = sum(dist)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(
                f"item {self.item_id!r}: label distribution sums to {total!r}, "
                f"expected 1"
            )

    @property
    def hard_label(self) -> str:
        """Most probable stance; ties resolve toward the earlier label."""
        return LABELS[int(np.argmax(self.label_distribution))]


@dataclass(frozen=True)
class TrainingRow:
    """One weighted training example produced by :func:`expand_weighted`."""

    item_id: str
    text: str
    label: str
    weight: float

    def __post_init__(self) -> None:
        if self.label not in _LABEL_INDEX:
            raise ValueError(
                f"unknown stance label {self.label!r}; expected one of {LABELS}"
            )
        if not (self.weight >= 0 and math.isfinite(self.weight)):
            raise ValueError(
                f"row for item {self.item_id!r}: weight must be a finite "
                f"non-negative number, got {self.weight!r}"
            )


@dataclass(frozen=True)
class StanceLabel:
    """A stance assigned to one tuple, with its provenance."""

    ref: str
    label: str
    confidence: float
    origin: str = ORIGIN_LINEAR

    def __post_init__(self) -> None:
        if self.label not in _LABEL_INDEX:
            raise ValueError(
                f"unknown stance label {self.label!r}; expected one of {LABELS}"
            )
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(
                f"label for {self.ref!r}: confidence must lie in [0, 1], "
                f"got {self.confidence!r}"
            )
        if self.origin not in (ORIGIN_LINEAR, ORIGIN_EXTERNAL):
            raise ValueError(
                f"label for {self.ref!r}: origin must be "
                f"{ORIGIN_LINEAR!r} or {ORIGIN_EXTERNAL!r}, got {self.origin!r}"
            )


@dataclass(frozen=True)
class StanceConfig:
    """Feature-extraction and training settings for the linear classifier."""

    ngram_order: int = 2
    remove_stopwords: bool = False
    convert_digits: bool = False
    reg_type: str = "l2"
    reg_strength: float = 1.0
    max_iter: int = 2000
    grad_tol: float = 1e-8

    def __post_init__(self) -> None:
        if self.ngram_order not in (1, 2):
            raise ValueError(f"ngram_order must be 1 or 2, got {self.ngram_order!r}")
        if self.reg_type not in ("l1", "l2"):
            raise ValueError(f"reg_type must be 'l1' or 'l2', got {self.reg_type!r}")
        if not (self.reg_strength >= 0 and math.isfinite(self.reg_strength)):
            raise ValueError(
                f"reg_strength must be a finite non-negative number, "
                f"got {self.reg_strength!r}"
            )
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter!r}")
        if self.grad_tol <= 0:
            raise ValueError(f"grad_tol must be > 0, got {self.grad_tol!r}")

    def to_dict(self) -> dict:
        return {
            "ngram_order": self.ngram_order,
            "remove_stopwords": self.remove_stopwords,
            "convert_digits": self.convert_digits,
            "reg_type": self.reg_type,
            "reg_strength": self.reg_strength,
            "max_iter": self.max_iter,
            "grad_tol": self.grad_tol,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "StanceConfig":
        return cls(**{key: payload[key] for key in cls.__dataclass_fields__ if key in payload})


# ---------------------------------------------------------------------------
# Tokenization and features
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1)
def _stopwords() -> frozenset:
    text = (
        resources.files("opinionframing")
        .joinpath("data/stopwords_en.txt")
        .read_text(encoding="utf-8")
    )
    words = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.append(line)
    return frozenset(words)


def tokenize(
    text: str, *, convert_digits: bool = False, remove_stopwords: bool = False
) -> list[str]:
    """Lowercase and split on non-alphanumeric characters.

    With ``convert_digits`` every digit becomes ``#`` (so "CO2" -> "co#");
    with ``remove_stopwords`` common English function words are dropped.
    """
    tokens = _TOKEN_RE.findall(text.lower())
    if convert_digits:
        tokens = [_DIGIT_RE.sub("#", token) for token in tokens]
    if remove_stopwords:
        stop = _stopwords()
        tokens = [token for token in tokens if token not in stop]
    return tokens


def _ngrams(text: str, config: StanceConfig) -> list[str]:
    tokens = tokenize(
        text,
        convert_digits=config.convert_digits,
        remove_stopwords=config.remove_stopwords,
    )
    grams = list(tokens)
    if config.ngram_order >= 2:
        grams.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    return grams


def _build_vocabulary(texts: Iterable[str], config: StanceConfig) -> dict:
    seen = set()
    for text in texts:
        seen.update(_ngrams(text, config))
    return {gram: index for index, gram in enumerate(sorted(seen))}


def _feature_matrix(
    texts: Sequence[str], vocabulary: Mapping[str, int], config: StanceConfig
) -> sp.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for text in texts:
        counts = Counter(
            vocabulary[gram] for gram in _ngrams(text, config) if gram in vocabulary
        )
        for column, count in sorted(counts.items()):
            indices.append(column)
            data.append(float(count))
        indptr.append(len(indices))
    return sp.csr_matrix(
        (data, indices, indptr), shape=(len(texts), len(vocabulary)), dtype=float
    )


# ---------------------------------------------------------------------------
# Weighted training rows
# ---------------------------------------------------------------------------


def expand_weighted(instances: Iterable[LabeledInstance]) -> list[TrainingRow]:
    """Expand each instance into one row per stance, weighted by probability.

    Zero-probability rows are dropped, so a one-hot instance yields a single
    row of weight 1 and the total output weight equals the number of input
    instances.
    """
    rows = []
    for instance in instances:
        for k, probability in enumerate(instance.label_distribution):
            if probability > 0:
                rows.append(
                    TrainingRow(
                        item_id=instance.item_id,
                        text=instance.text,
                        label=LABELS[k],
                        weight=probability,
                    )
                )
    return rows


# ---------------------------------------------------------------------------
# Linear model
# ---------------------------------------------------------------------------


@dataclass
class LinearModel:
    """Multinomial logistic regression over unigram/bigram counts.

    ``weights`` has shape (3, |V|) with rows ordered like :data:`LABELS`;
    ``bias`` has shape (3,) and is centered to sum to zero (the softmax is
    invariant to a shared offset, so centering fixes the representation).
    """

    vocabulary: dict
    weights: np.ndarray
    bias: np.ndarray
    config: StanceConfig = field(default_factory=StanceConfig)

    def predict_proba(self, texts: Sequence[str]) -> np.ndarray:
        """Per-text stance probabilities, shape (n, 3), rows sum to 1."""
        features = _feature_matrix(list(texts), self.vocabulary, self.config)
        logits = features @ self.weights.T + self.bias
        logits -= logits.max(axis=1, keepdims=True)
        probabilities = np.exp(logits)
        probabilities /= probabilities.sum(axis=1, keepdims=True)
        return probabilities

    def predict(self, texts: Sequence[str]) -> list[str]:
        """Most probable stance per text; ties resolve toward ``agree``."""
        probabilities = self.predict_proba(texts)
        return [LABELS[k] for k in np.argmax(probabilities, axis=1)]

    def to_json(self) -> str:
        tokens = [None] * len(self.vocabulary)
        for gram, index in self.vocabulary.items():
            tokens[index] = gram
        payload = {
            "labels": list(LABELS),
            "vocabulary": tokens,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "config": self.config.to_dict(),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LinearModel":
        payload = json.loads(text)
        if tuple(payload.get("labels", ())) != LABELS:
            raise ValueError(
                f"model file lists labels {payload.get('labels')!r}; "
                f"expected {list(LABELS)}"
            )
        vocabulary = {gram: index for index, gram in enumerate(payload["vocabulary"])}
        weights = np.asarray(payload["weights"], dtype=float)
        bias = np.asarray(payload["bias"], dtype=float)
        if weights.shape != (len(LABELS), len(vocabulary)):
            raise ValueError(
                f"weight matrix has shape {weights.shape}; expected "
                f"{(len(LABELS), len(vocabulary))}"
            )
        if bias.shape != (len(LABELS),):
            raise ValueError(f"bias has shape {bias.shape}; expected ({len(LABELS)},)")
        return cls(
            vocabulary=vocabulary,
            weights=weights,
            bias=bias,
            config=StanceConfig.from_dict(payload.get("config", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LinearModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _loss_and_gradients(
    weights: np.ndarray,
    bias: np.ndarray,
    features: sp.csr_matrix,
    label_indices: np.ndarray,
    row_weights: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted multinomial cross-entropy and its gradients."""
    logits = features @ weights.T + bias
    log_norm = logsumexp(logits, axis=1)
    log_probabilities = logits - log_norm[:, None]
    picked = log_probabilities[np.arange(len(label_indices)), label_indices]
    loss = -float(np.dot(row_weights, picked))
    residual = np.exp(log_probabilities)
    residual[np.arange(len(label_indices)), label_indices] -= 1.0
    residual *= row_weights[:, None]
    grad_weights = (features.T @ residual).T
    grad_bias = residual.sum(axis=0)
    return loss, np.asarray(grad_weights), grad_bias


def train_linear(
    rows: Iterable[TrainingRow], config: StanceConfig | None = None
) -> LinearModel:
    """Fit the linear stance classifier on weighted rows.

    Minimizes the weighted multinomial cross-entropy plus a penalty on the
    feature weights (``reg_strength/2 * ||W||^2`` for L2, ``reg_strength *
    ||W||_1`` for L1; the bias is never penalized).  Requires at least two
    distinct labels with positive weight.  Deterministic: starts from zeros
    and uses no randomness.
    """
    rows = list(rows)
    config = config or StanceConfig()
    if not rows:
        raise ValueError("no training rows")
    present = {row.label for row in rows if row.weight > 0}
    if len(present) < 2:
        raise ValueError(
            f"training data carries a single stance label {present or '{}'}; "
            f"at least two distinct labels are required"
        )

    vocabulary = _build_vocabulary((row.text for row in rows), config)
    features = _feature_matrix([row.text for row in rows], vocabulary, config)
    label_indices = np.array([_LABEL_INDEX[row.label] for row in rows], dtype=int)
    row_weights = np.array([row.weight for row in rows], dtype=float)

    n_labels = len(LABELS)
    n_features = len(vocabulary)
    n_coef = n_labels * n_features

    if config.reg_type == "l2":

        def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
            weights = theta[:n_coef].reshape(n_labels, n_features)
            bias = theta[n_coef:]
            loss, grad_weights, grad_bias = _loss_and_gradients(
                weights, bias, features, label_indices, row_weights
            )
            loss += 0.5 * config.reg_strength * float((weights * weights).sum())
            grad_weights = grad_weights + config.reg_strength * weights
            return loss, np.concatenate([grad_weights.ravel(), grad_bias])

        theta0 = np.zeros(n_coef + n_labels)
        bounds = None
    else:
        # L1 via the exact positive/negative split: W = W+ - W-, both >= 0,
        # penalty reg_strength * sum(W+ + W-); smooth, so L-BFGS-B applies.
        def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
            positive = theta[:n_coef]
            negative = theta[n_coef : 2 * n_coef]
            weights = (positive - negative).reshape(n_labels, n_features)
            bias = theta[2 * n_coef :]
            loss, grad_weights, grad_bias = _loss_and_gradients(
                weights, bias, features, label_indices, row_weights
            )
            loss += config.reg_strength * float(positive.sum() + negative.sum())
            flat = grad_weights.ravel()
            return loss, np.concatenate(
                [flat + config.reg_strength, -flat + config.reg_strength, grad_bias]
            )

        theta0 = np.zeros(2 * n_coef + n_labels)
        bounds = [(0.0, None)] * (2 * n_coef) + [(None, None)] * n_labels

    result = minimize(
        objective,
        theta0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={
            "maxiter": config.max_iter,
            "maxfun": 10 * config.max_iter,
            "ftol": 1e-14,
            "gtol": config.grad_tol,
        },
    )
    if not result.success:
        logger.warning("stance training stopped early: %s", result.message)

    if config.reg_type == "l2":
        weights = result.x[:n_coef].reshape(n_labels, n_features)
        bias = result.x[n_coef:]
    else:
        weights = (result.x[:n_coef] - result.x[n_coef : 2 * n_coef]).reshape(
            n_labels, n_features
        )
        bias = result.x[2 * n_coef :]
    bias = bias - bias.mean()

    return LinearModel(
        vocabulary=vocabulary,
        weights=np.asarray(weights, dtype=float),
        bias=np.asarray(bias, dtype=float),
        config=config,
    )


def classify(
    model: LinearModel, items: Iterable[tuple[str, str]]
) -> list[StanceLabel]:
    """Label (ref, text) pairs with the model's most probable stance.

    The reported confidence is that stance's probability; exact ties resolve
    toward the earlier label in :data:`LABELS`.
    """
    items = list(items)
    if not items:
        return []
    probabilities = model.predict_proba([text for _, text in items])
    labels = []
    for (ref, _), row in zip(items, probabilities):
        k = int(np.argmax(row))
        labels.append(
            StanceLabel(
                ref=ref,
                label=LABELS[k],
                confidence=float(row[k]),
                origin=ORIGIN_LINEAR,
            )
        )
    return labels


# ---------------------------------------------------------------------------
# Splits, cross-validation, evaluation
# ---------------------------------------------------------------------------


def stratified_split(
    instances: Sequence[LabeledInstance], test_size: int = 200, seed: int = 0
) -> tuple[list[LabeledInstance], list[LabeledInstance]]:
    """Split into (train, test), stratified by (hard label, outlet leaning).

    Each stratum contributes proportionally to the test set (floor of its
    share); the remainder goes to the strata with the largest fractional
    parts.  Selection within a stratum is seeded and deterministic.
    """
    instances = list(instances)
    n = len(instances)
    if not 0 < test_size < n:
        raise ValueError(
            f"test_size must be strictly between 0 and the number of "
            f"instances ({n}), got {test_size}"
        )

    strata: dict[tuple[str, str], list[int]] = {}
    for index, instance in enumerate(instances):
        key = (instance.hard_label, str(instance.outlet_leaning))
        strata.setdefault(key, []).append(index)

    shares = {key: len(members) * test_size / n for key, members in strata.items()}
    quotas = {key: math.floor(share) for key, share in shares.items()}
    remainder = test_size - sum(quotas.values())
    by_fraction = sorted(
        strata, key=lambda key: (-(shares[key] - quotas[key]), key)
    )
    for key in by_fraction[:remainder]:
        quotas[key] += 1

    rng = np.random.default_rng(seed)
    test_indices: set[int] = set()
    for key in sorted(strata):
        members = strata[key]
        quota = min(quotas[key], len(members))
        if quota:
            chosen = rng.choice(len(members), size=quota, replace=False)
            test_indices.update(members[position] for position in chosen)

    train = [inst for i, inst in enumerate(instances) if i not in test_indices]
    test = [inst for i, inst in enumerate(instances) if i in test_indices]
    return train, test


@dataclass(frozen=True)
class ClassScores:
    """Precision/recall/F1 and support for one stance."""

    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvalReport:
    """Accuracy plus per-class and macro F1 over a labeled set."""

    accuracy: float
    per_class: Mapping[str, ClassScores]
    macro_f1: float
    n: int
    confusion: tuple  # rows = true label, columns = predicted, LABELS order

    def summary(self) -> str:
        parts = [f"accuracy {self.accuracy:.3f}"]
        parts.extend(
            f"F1[{label}] {self.per_class[label].f1:.3f}" for label in LABELS
        )
        parts.append(f"macro-F1 {self.macro_f1:.3f}")
        parts.append(f"n={self.n}")
        return "  ".join(parts)


def evaluate_predictions(
    true_labels: Sequence[str], predicted_labels: Sequence[str]
) -> EvalReport:
    """Score predictions against gold labels.

    Per-class precision/recall default to 0 when undefined (no predicted or
    no true examples); macro-F1 averages over all three stances regardless
    of support, matching the convention where an absent class scores 0.
    """
    if len(true_labels) != len(predicted_labels):
        raise ValueError(
            f"{len(true_labels)} gold labels but {len(predicted_labels)} predictions"
        )
    if not true_labels:
        raise ValueError("cannot evaluate an empty label set")
    for label in list(true_labels) + list(predicted_labels):
        if label not in _LABEL_INDEX:
            raise ValueError(
                f"unknown stance label {label!r}; expected one of {LABELS}"
            )

    confusion = np.zeros((len(LABELS), len(LABELS)), dtype=int)
    for true, predicted in zip(true_labels, predicted_labels):
        confusion[_LABEL_INDEX[true], _LABEL_INDEX[predicted]] += 1

    per_class = {}
    f1_values = []
    for k, label in enumerate(LABELS):
        true_positive = int(confusion[k, k])
        predicted_count = int(confusion[:, k].sum())
        true_count = int(confusion[k, :].sum())
        precision = true_positive / predicted_count if predicted_count else 0.0
        recall = true_positive / true_count if true_count else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall > 0
            else 0.0
        )
        per_class[label] = ClassScores(
            precision=precision, recall=recall, f1=f1, support=true_count
        )
        f1_values.append(f1)

    accuracy = float(np.trace(confusion)) / len(true_labels)
    return EvalReport(
        accuracy=accuracy,
        per_class=per_class,
        macro_f1=float(np.mean(f1_values)),
        n=len(true_labels),
        confusion=tuple(tuple(int(v) for v in row) for row in confusion),
    )


def evaluate(model: LinearModel, instances: Sequence[LabeledInstance]) -> EvalReport:
    """Score a model against instances' most probable labels."""
    instances = list(instances)
    predictions = model.predict([instance.text for instance in instances])
    return evaluate_predictions([i.hard_label for i in instances], predictions)


def majority_label(labels: Iterable[str]) -> str:
    """Most frequent stance; ties resolve toward the earlier label."""
    counts = Counter(labels)
    if not counts:
        raise ValueError("cannot take the majority of an empty label set")
    for label in counts:
        if label not in _LABEL_INDEX:
            raise ValueError(
                f"unknown stance label {label!r}; expected one of {LABELS}"
            )
    return max(LABELS, key=lambda label: (counts.get(label, 0), -_LABEL_INDEX[label]))


def majority_baseline(
    train_instances: Sequence[LabeledInstance],
    test_instances: Sequence[LabeledInstance],
) -> EvalReport:
    """Score the constant classifier that predicts the training majority."""
    constant = majority_label(i.hard_label for i in train_instances)
    true_labels = [i.hard_label for i in test_instances]
    return evaluate_predictions(true_labels, [constant] * len(true_labels))


@dataclass(frozen=True)
class CVResult:
    """Per-fold validation accuracies from k-fold cross-validation."""

    fold_accuracies: tuple
    n_folds: int

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))


def cross_validate(
    instances: Sequence[LabeledInstance],
    config: StanceConfig | None = None,
    n_folds: int = 5,
    seed: int = 0,
) -> CVResult:
    """K-fold cross-validation of the linear classifier.

    Folds are stratified by (hard label, outlet leaning): each stratum is
    shuffled with the seed and dealt round-robin across folds, continuing
    the rotation between strata so fold sizes stay balanced.  Each fold is
    scored by accuracy against the held-out instances' most probable labels.
    """
    instances = list(instances)
    if n_folds < 2:
        raise ValueError(f"n_folds must be >= 2, got {n_folds}")
    if len(instances) < n_folds:
        raise ValueError(
            f"{len(instances)} instances cannot fill {n_folds} folds"
        )

    strata: dict[tuple[str, str], list[int]] = {}
    for index, instance in enumerate(instances):
        key = (instance.hard_label, str(instance.outlet_leaning))
        strata.setdefault(key, []).append(index)

    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(instances), dtype=int)
    next_fold = 0
    for key in sorted(strata):
        members = list(strata[key])
        rng.shuffle(members)
        for index in members:
            fold_of[index] = next_fold
            next_fold = (next_fold + 1) % n_folds

    accuracies = []
    for fold in range(n_folds):
        train = [inst for i, inst in enumerate(instances) if fold_of[i] != fold]
        held_out = [inst for i, inst in enumerate(instances) if fold_of[i] == fold]
        model = train_linear(expand_weighted(train), config)
        accuracies.append(evaluate(model, held_out).accuracy)
    return CVResult(fold_accuracies=tuple(accuracies), n_folds=n_folds)


# ---------------------------------------------------------------------------
# Label files
# ---------------------------------------------------------------------------


def ingest_external_labels(
    source: str | Path | Iterable[str],
    known_refs: Iterable[str] | None = None,
) -> tuple[list[StanceLabel], list[str]]:
    """Read externally produced labels from CSV.

    The file needs columns ``ref``, ``label`` and ``confidence``; ``#``
    comment lines are skipped.  An unknown label string is a hard error.
    When ``known_refs`` is given, rows referencing unknown tuples are
    rejected and reported in the returned diagnostics; duplicate references
    are resolved last-writer-wins with a diagnostic.  All accepted labels
    carry ``origin="external"``.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as handle:
            return _ingest_lines(handle, known_refs, where=str(source))
    return _ingest_lines(iter(source), known_refs, where="<stream>")


def _ingest_lines(
    lines: Iterator[str], known_refs: Iterable[str] | None, where: str
) -> tuple[list[StanceLabel], list[str]]:
    known = None if known_refs is None else set(known_refs)
    reader = csv.DictReader(line for line in lines if not line.startswith("#"))
    required = {"ref", "label", "confidence"}
    missing = required - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"{where}: missing columns {sorted(missing)}")

    accepted: dict[str, StanceLabel] = {}
    diagnostics: list[str] = []
    for lineno, row in enumerate(reader, start=2):
        ref = (row["ref"] or "").strip()
        label = (row["label"] or "").strip()
        if label not in _LABEL_INDEX:
            raise ValueError(
                f"{where} line {lineno}: unknown stance label {label!r}; "
                f"expected one of {LABELS}"
            )
        try:
            confidence = float(row["confidence"])
        except (TypeError, ValueError):
            raise ValueError(
                f"{where} line {lineno}: confidence {row['confidence']!r} "
                f"is not a number"
            ) from None
        if not ref:
            raise ValueError(f"{where} line {lineno}: empty tuple reference")
        if known is not None and ref not in known:
            message = f"line {lineno}: unknown tuple reference {ref!r}; row rejected"
            diagnostics.append(message)
            logger.warning("%s: %s", where, message)
            continue
        if ref in accepted:
            message = f"line {lineno}: duplicate reference {ref!r}; keeping the later row"
            diagnostics.append(message)
            logger.warning("%s: %s", where, message)
        accepted[ref] = StanceLabel(
            ref=ref, label=label, confidence=confidence, origin=ORIGIN_EXTERNAL
        )
    return list(accepted.values()), diagnostics


def write_stance_labels(path: str | Path, labels: Iterable[StanceLabel]) -> None:
    """Write labels as CSV with columns ref, label, confidence, origin."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["ref", "label", "confidence", "origin"])
        for label in labels:
            writer.writerow(
                [label.ref, label.label, repr(label.confidence), label.origin]
            )


def read_stance_labels(path: str | Path) -> list[StanceLabel]:
    """Read labels written by :func:`write_stance_labels`."""
    labels = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(line for line in handle if not line.startswith("#"))
        required = {"ref", "label", "confidence", "origin"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                labels.append(
                    StanceLabel(
                        ref=row["ref"],
                        label=row["label"],
                        confidence=float(row["confidence"]),
                        origin=row["origin"],
                    )
                )
            except ValueError as exc:
                raise ValueError(f"{path} line {lineno}: {exc}") from None
    return labels


def write_instances(path: str | Path, instances: Iterable[LabeledInstance]) -> None:
    """Write labeled instances as CSV (item_id, text, three probabilities,
    outlet_leaning)."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["item_id", "text", "p_agree", "p_neutral", "p_disagree", "outlet_leaning"]
        )
        for instance in instances:
            writer.writerow(
                [
                    instance.item_id,
                    instance.text,
                    *[repr(p) for p in instance.label_distribution],
                    str(instance.outlet_leaning),
                ]
            )


def read_instances(path: str | Path) -> list[LabeledInstance]:
    """Read labeled instances written by :func:`write_instances`."""
    instances = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(line for line in handle if not line.startswith("#"))
        required = {"item_id", "text", "p_agree", "p_neutral", "p_disagree"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                instances.append(
                    LabeledInstance(
                        item_id=row["item_id"],
                        text=row["text"],
                        label_distribution=(
                            float(row["p_agree"]),
                            float(row["p_neutral"]),
                            float(row["p_disagree"]),
                        ),
                        outlet_leaning=row.get("outlet_leaning") or "Unknown",
                    )
                )
            except ValueError as exc:
                raise ValueError(f"{path} line {lineno}: {exc}") from None
    return instances
