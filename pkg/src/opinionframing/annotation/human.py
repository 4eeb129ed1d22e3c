"""Human annotation accuracy against model consensus.

Workers are repeatedly held out, the aggregation model is refit on the
remaining annotations, and each held-out worker is scored against the
refit consensus on the items both sides share. Accuracies are then
summarized by a two-component normal mixture: one component tracks
attentive workers, the other inattentive ones, and the attentive mean is
the headline number.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .aggregation import AggregationConfig, fit_aggregation
from .records import AnnotationRecord

log = logging.getLogger(__name__)

_VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class HumanPerfConfig:
    repeats: int = 10
    holdout_fraction: float = 0.1
    seed: int = 0
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)

    def __post_init__(self) -> None:
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in (0, 1)")
        if self.repeats < 1:
            raise ValueError("repeats must be positive")


@dataclass(frozen=True)
class MixtureComponent:
    mean: float
    sd: float
    weight: float


@dataclass(frozen=True)
class WorkerAccuracy:
    worker_id: str
    repeat: int
    n_items: int
    accuracy: float


@dataclass(frozen=True)
class HumanPerfResult:
    accuracies: tuple[WorkerAccuracy, ...]
    components: tuple[MixtureComponent, MixtureComponent]
    config: HumanPerfConfig = field(default_factory=HumanPerfConfig)

    @property
    def attentive_mean(self) -> float:
        """Mean accuracy of the higher-mean mixture component."""
        return self.components[-1].mean

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([acc.accuracy for acc in self.accuracies]))

    def to_json(self) -> str:
        payload = {
            "accuracies": [asdict(acc) for acc in self.accuracies],
            "components": [asdict(c) for c in self.components],
            "attentive_mean": self.attentive_mean,
            "mean_accuracy": self.mean_accuracy,
            "config": asdict(self.config),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "HumanPerfResult":
        payload = json.loads(text)
        config_dict = dict(payload["config"])
        config_dict["aggregation"] = AggregationConfig(**config_dict["aggregation"])
        return cls(
            accuracies=tuple(
                WorkerAccuracy(**entry) for entry in payload["accuracies"]
            ),
            components=tuple(
                MixtureComponent(**entry) for entry in payload["components"]
            ),
            config=HumanPerfConfig(**config_dict),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "HumanPerfResult":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def fit_two_normal_mixture(
    values: Sequence[float], max_iter: int = 500, tol: float = 1e-10
) -> tuple[MixtureComponent, MixtureComponent]:
    """EM fit of a two-component 1-D normal mixture, components returned in
    ascending order of mean. Initialization is deterministic (means at the
    quartiles), and an all-identical sample collapses to two copies of the
    point mass."""
    data = np.asarray(values, dtype=float)
    if data.size < 2:
        raise ValueError("need at least two values to fit a mixture")
    if float(np.std(data)) < 1e-12:
        point = MixtureComponent(float(data[0]), 0.0, 0.5)
        return point, point

    means = np.percentile(data, [25.0, 75.0])
    if means[0] == means[1]:
        means = np.array([data.min(), data.max()])
    variances = np.full(2, max(float(np.var(data)), _VARIANCE_FLOOR))
    weights = np.full(2, 0.5)

    previous = -np.inf
    for _ in range(max_iter):
        log_dens = (
            -0.5 * np.log(2.0 * np.pi * variances)[None, :]
            - 0.5 * (data[:, None] - means[None, :]) ** 2 / variances[None, :]
            + np.log(weights)[None, :]
        )
        log_total = logsumexp(log_dens, axis=1)
        loglik = float(log_total.sum())
        resp = np.exp(log_dens - log_total[:, None])

        mass = resp.sum(axis=0)
        mass = np.maximum(mass, 1e-12)
        weights = mass / data.size
        means = (resp * data[:, None]).sum(axis=0) / mass
        variances = (resp * (data[:, None] - means[None, :]) ** 2).sum(axis=0) / mass
        variances = np.maximum(variances, _VARIANCE_FLOOR)

        if abs(loglik - previous) < tol:
            break
        previous = loglik

    components = sorted(
        (
            MixtureComponent(float(m), float(np.sqrt(v)), float(p))
            for m, v, p in zip(means, variances, weights)
        ),
        key=lambda c: c.mean,
    )
    return components[0], components[1]


def estimate_human_performance(
    records: Sequence[AnnotationRecord], config: HumanPerfConfig | None = None
) -> HumanPerfResult:
    """Score workers against a consensus refit without them.

    Each repeat holds out ceil(holdout_fraction * J) workers chosen by a
    seeded generator, refits the aggregation model on the rest, and scores
    every held-out worker on the items present in the refit. Requires at
    least 10 distinct annotators.
    """
    config = config or HumanPerfConfig()
    workers = sorted({rec.worker_id for rec in records})
    if len(workers) < 10:
        raise ValueError(
            f"human performance needs at least 10 annotators, got {len(workers)}"
        )
    rng = np.random.default_rng(config.seed)
    n_hold = max(1, int(np.ceil(config.holdout_fraction * len(workers))))

    accuracies: list[WorkerAccuracy] = []
    for repeat in range(config.repeats):
        held = set(rng.choice(workers, size=n_hold, replace=False).tolist())
        train = [rec for rec in records if rec.worker_id not in held]
        if not train:
            raise ValueError("holdout removed every annotation; lower the fraction")
        fit = fit_aggregation(train, config.aggregation)
        known_items = set(fit.item_ids)
        for worker in sorted(held):
            scored = [
                rec
                for rec in records
                if rec.worker_id == worker and rec.item_id in known_items
            ]
            if not scored:
                log.warning(
                    "worker %s shares no items with repeat %d consensus; skipped",
                    worker,
                    repeat,
                )
                continue
            hits = sum(
                rec.response == fit.argmax_response(rec.item_id) for rec in scored
            )
            accuracies.append(
                WorkerAccuracy(worker, repeat, len(scored), hits / len(scored))
            )

    if len(accuracies) < 2:
        raise ValueError("too few scored holdouts to summarize")
    components = fit_two_normal_mixture([acc.accuracy for acc in accuracies])
    return HumanPerfResult(tuple(accuracies), components, config)
