"""Aggregation of crowd stance judgments with per-worker vigilance.

Each annotation of item i by worker j is modeled as a draw from
Softmax_k(eta_ijk) with eta_ijk = v_j * q_ik + (1 - v_j) * w_jk: a vigilant
worker (v_j near 1) answers from the item's latent response profile q_i,
an inattentive one (v_j near 0) from a personal default profile w_j.
Priors: q_ik ~ Normal(mu_k, sigma_q^2) with mu_k the log of the pooled
response proportions, w_jk ~ Normal(0, sigma_w^2), and v_j ~ Uniform(0, 1).

Fitting maximizes the log-posterior over (q, w, v) with L-BFGS-B and
analytic gradients. Vigilance is optimized through its logit, and the
posterior density is taken in that unconstrained parameterization (the
uniform prior contributes the log-Jacobian log v(1-v)); this keeps every
vigilance estimate strictly inside (0, 1) so workers remain ordered
instead of piling up on a bound.

The scales sigma_q and sigma_w can be fixed in the config or estimated.
Joint quasi-Newton steps on scales are unusable here: the log-posterior
grows without bound along (q -> mu, sigma_q -> 0), a standard degeneracy
of hierarchical MAP. Estimation therefore alternates the (q, w, v) solve
with a closed-form scale update under the half-normal hyperprior, using
sum of squares augmented by Laplace posterior variances (trace of the
inverse per-item/per-worker Hessian blocks); the augmentation removes the
shrinkage bias that otherwise spirals the scales to zero.

The softmax leaves eta_i* + c indistinguishable from eta_i*, and the prior
resolves the ambiguity: at an exact optimum sum_k q_ik = sum_k mu_k and
sum_k w_jk = 0. Fits are projected onto that gauge after optimization,
which changes no derived distribution.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit, logsumexp, softmax

from .records import AnnotationRecord, majority_vote, validate_records

log = logging.getLogger(__name__)

_N_LABELS = 3
_LOGIT_BOUND = 12.0
_SCALE_FLOOR = 1e-3


@dataclass(frozen=True)
class AggregationConfig:
    """Settings for :func:`fit_aggregation`.

    sigma_q / sigma_w fix the prior scales when given; None estimates them
    under half-normal(sigma_scale_*) hyperpriors. fix_vigilance pins every
    v_j instead of estimating it.
    """

    sigma_q: float | None = None
    sigma_w: float | None = None
    sigma_scale_q: float = 1.0
    sigma_scale_w: float = 1.0
    fix_vigilance: float | None = None
    max_iter: int = 5000
    max_outer: int = 100
    grad_tol: float = 1e-6
    outer_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.fix_vigilance is not None and not 0.0 <= self.fix_vigilance <= 1.0:
            raise ValueError("fix_vigilance must lie in [0, 1]")
        for name in ("sigma_q", "sigma_w"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive when fixed")
        if self.sigma_scale_q <= 0 or self.sigma_scale_w <= 0:
            raise ValueError("hyperprior scales must be positive")


@dataclass(frozen=True)
class _Design:
    """Indexed view of the annotation records."""

    item_ids: tuple[str, ...]
    worker_ids: tuple[str, ...]
    item_index: np.ndarray
    worker_index: np.ndarray
    labels: np.ndarray
    mu: np.ndarray


def _build_design(
    records: Sequence[AnnotationRecord],
    item_ids: Sequence[str] | None,
    worker_ids: Sequence[str] | None,
) -> _Design:
    if not records:
        raise ValueError("no annotation records given")
    validate_records(records)
    seen_items = {rec.item_id for rec in records}
    seen_workers = {rec.worker_id for rec in records}
    if item_ids is None:
        items = tuple(sorted(seen_items))
    else:
        items = tuple(item_ids)
        missing = sorted(set(items) - seen_items)
        if missing:
            raise ValueError(f"items with no annotations: {missing}")
        unknown = sorted(seen_items - set(items))
        if unknown:
            raise ValueError(f"annotations for unlisted items: {unknown}")
    if worker_ids is None:
        workers = tuple(sorted(seen_workers))
    else:
        workers = tuple(worker_ids)
        missing = sorted(set(workers) - seen_workers)
        if missing:
            raise ValueError(f"workers with no annotations: {missing}")
        unknown = sorted(seen_workers - set(workers))
        if unknown:
            raise ValueError(f"annotations from unlisted workers: {unknown}")

    item_pos = {item: n for n, item in enumerate(items)}
    worker_pos = {worker: n for n, worker in enumerate(workers)}
    item_index = np.array([item_pos[rec.item_id] for rec in records], dtype=np.intp)
    worker_index = np.array(
        [worker_pos[rec.worker_id] for rec in records], dtype=np.intp
    )
    labels = np.array([rec.response - 1 for rec in records], dtype=np.intp)

    counts = np.bincount(labels, minlength=_N_LABELS).astype(float)
    mu = np.log((counts + 0.5) / (counts.sum() + 0.5 * _N_LABELS))
    return _Design(items, workers, item_index, worker_index, labels, mu)


def build_objective(
    records: Sequence[AnnotationRecord],
    config: AggregationConfig | None = None,
    sigma_q: float = 1.0,
    sigma_w: float = 1.0,
    item_ids: Sequence[str] | None = None,
    worker_ids: Sequence[str] | None = None,
) -> tuple[Callable[[np.ndarray], tuple[float, np.ndarray]], np.ndarray, list, _Design]:
    """Return (fun, theta0, bounds, design) for the negative log-posterior
    at the given prior scales.

    fun(theta) yields the value and its analytic gradient. theta packs
    q (I*3), w (J*3), and logit-vigilances (J, absent when fixed by the
    config), in that order.
    """
    config = config or AggregationConfig()
    design = _build_design(records, item_ids, worker_ids)
    fun, theta0, bounds = _make_objective(design, config, sigma_q, sigma_w)
    return fun, theta0, bounds, design


def _make_objective(
    design: _Design,
    config: AggregationConfig,
    sigma_q: float,
    sigma_w: float,
) -> tuple[Callable[[np.ndarray], tuple[float, np.ndarray]], np.ndarray, list]:
    n_items = len(design.item_ids)
    n_workers = len(design.worker_ids)
    n_q = n_items * _N_LABELS
    n_w = n_workers * _N_LABELS
    estimate_v = config.fix_vigilance is None
    rows = np.arange(len(design.labels))

    def fun(theta: np.ndarray) -> tuple[float, np.ndarray]:
        q = theta[:n_q].reshape(n_items, _N_LABELS)
        w = theta[n_q : n_q + n_w].reshape(n_workers, _N_LABELS)
        if estimate_v:
            u = theta[n_q + n_w :]
            v = expit(u)
        else:
            v = np.full(n_workers, float(config.fix_vigilance))

        v_n = v[design.worker_index]
        eta = (
            v_n[:, None] * q[design.item_index]
            + (1.0 - v_n)[:, None] * w[design.worker_index]
        )
        log_norm = logsumexp(eta, axis=1)
        loglik = float(eta[rows, design.labels].sum() - log_norm.sum())
        resid = -np.exp(eta - log_norm[:, None])
        resid[rows, design.labels] += 1.0

        dq = q - design.mu[None, :]
        logprior = (
            -0.5 * float((dq**2).sum()) / sigma_q**2
            - 0.5 * float((w**2).sum()) / sigma_w**2
        )

        grad_q = np.zeros_like(q)
        np.add.at(grad_q, design.item_index, v_n[:, None] * resid)
        grad_q -= dq / sigma_q**2
        grad_w = np.zeros_like(w)
        np.add.at(grad_w, design.worker_index, (1.0 - v_n)[:, None] * resid)
        grad_w -= w / sigma_w**2

        pieces = [grad_q.ravel(), grad_w.ravel()]
        if estimate_v:
            logprior += float((log_expit(u) + log_expit(-u)).sum())
            gap = (resid * (q[design.item_index] - w[design.worker_index])).sum(axis=1)
            grad_v = np.zeros(n_workers)
            np.add.at(grad_v, design.worker_index, gap)
            pieces.append(grad_v * v * (1.0 - v) + 1.0 - 2.0 * v)
        grad = np.concatenate(pieces)
        return -(loglik + logprior), -grad

    # Start at smoothed per-item / per-worker response profiles so descent
    # lands in the consensus basin rather than a degenerate one.
    item_counts = np.zeros((n_items, _N_LABELS))
    worker_counts = np.zeros((n_workers, _N_LABELS))
    np.add.at(item_counts, (design.item_index, design.labels), 1.0)
    np.add.at(worker_counts, (design.worker_index, design.labels), 1.0)
    q0 = np.log(
        (item_counts + 0.5) / (item_counts.sum(axis=1, keepdims=True) + 1.5)
    )
    w0 = np.log(
        (worker_counts + 0.5) / (worker_counts.sum(axis=1, keepdims=True) + 1.5)
    )
    w0 -= w0.mean(axis=1, keepdims=True)
    pieces = [q0.ravel(), w0.ravel()]
    if estimate_v:
        pieces.append(np.full(n_workers, 1.5))
    theta0 = np.concatenate(pieces)
    bounds: list[tuple[float | None, float | None]] = [(None, None)] * (n_q + n_w)
    if estimate_v:
        bounds += [(-_LOGIT_BOUND, _LOGIT_BOUND)] * n_workers
    return fun, theta0, bounds


def _posterior_trace_sums(
    theta: np.ndarray,
    design: _Design,
    config: AggregationConfig,
    sigma_q: float,
    sigma_w: float,
) -> tuple[float, float]:
    """Laplace posterior variances: sums over items and workers of
    tr(H^-1) for the 3x3 per-unit Hessian blocks of the log-posterior."""
    n_items = len(design.item_ids)
    n_workers = len(design.worker_ids)
    n_q = n_items * _N_LABELS
    n_w = n_workers * _N_LABELS
    q = theta[:n_q].reshape(n_items, _N_LABELS)
    w = theta[n_q : n_q + n_w].reshape(n_workers, _N_LABELS)
    if config.fix_vigilance is None:
        v = expit(theta[n_q + n_w :])
    else:
        v = np.full(n_workers, float(config.fix_vigilance))
    v_n = v[design.worker_index]
    eta = (
        v_n[:, None] * q[design.item_index]
        + (1.0 - v_n)[:, None] * w[design.worker_index]
    )
    probs = np.exp(eta - logsumexp(eta, axis=1)[:, None])
    fisher = probs[:, :, None] * np.eye(_N_LABELS)[None] - (
        probs[:, :, None] * probs[:, None, :]
    )
    h_items = np.tile(np.eye(_N_LABELS) / sigma_q**2, (n_items, 1, 1))
    h_workers = np.tile(np.eye(_N_LABELS) / sigma_w**2, (n_workers, 1, 1))
    np.add.at(h_items, design.item_index, v_n[:, None, None] ** 2 * fisher)
    np.add.at(h_workers, design.worker_index, (1.0 - v_n)[:, None, None] ** 2 * fisher)
    trace_q = float(np.trace(np.linalg.inv(h_items), axis1=1, axis2=2).sum())
    trace_w = float(np.trace(np.linalg.inv(h_workers), axis1=1, axis2=2).sum())
    return trace_q, trace_w


def _scale_update(ss: float, n_terms: int, scale: float) -> float:
    """Conditional maximizer of the scale given a sum of squares, under a
    half-normal(scale) hyperprior: the positive root of
    x^2 + n*scale^2*x - ss*scale^2 = 0 with x = sigma^2."""
    variance = (
        -n_terms * scale**2 + np.sqrt(n_terms**2 * scale**4 + 4.0 * ss * scale**2)
    ) / 2.0
    return max(float(np.sqrt(variance)), _SCALE_FLOOR)


@dataclass(frozen=True)
class AggregationFit:
    """MAP estimate of the vigilance aggregation model."""

    item_ids: tuple[str, ...]
    worker_ids: tuple[str, ...]
    mu: np.ndarray
    q: np.ndarray
    w: np.ndarray
    vigilance: np.ndarray
    sigma_q: float
    sigma_w: float
    converged: bool
    n_iter: int
    n_outer: int
    grad_norm: float
    objective: float
    config: AggregationConfig = field(default_factory=AggregationConfig)

    def _item_row(self, item_id: str) -> int:
        try:
            return self.item_ids.index(item_id)
        except ValueError:
            raise KeyError(f"unknown item {item_id!r}") from None

    @property
    def distributions(self) -> np.ndarray:
        """Per-item response distributions (softmax of q), shape (I, 3)."""
        return softmax(self.q, axis=1)

    def item_distribution(self, item_id: str) -> np.ndarray:
        return softmax(self.q[self._item_row(item_id)])

    def argmax_response(self, item_id: str) -> int:
        """Most probable response for an item, as 1..3."""
        return int(np.argmax(self.q[self._item_row(item_id)])) + 1

    def worker_distribution(self, worker_id: str) -> np.ndarray:
        """A worker's default response profile (softmax of w)."""
        try:
            row = self.worker_ids.index(worker_id)
        except ValueError:
            raise KeyError(f"unknown worker {worker_id!r}") from None
        return softmax(self.w[row])

    def worker_vigilance(self, worker_id: str) -> float:
        try:
            row = self.worker_ids.index(worker_id)
        except ValueError:
            raise KeyError(f"unknown worker {worker_id!r}") from None
        return float(self.vigilance[row])

    def to_json(self) -> str:
        payload = {
            "item_ids": list(self.item_ids),
            "worker_ids": list(self.worker_ids),
            "mu": self.mu.tolist(),
            "q": self.q.tolist(),
            "w": self.w.tolist(),
            "vigilance": self.vigilance.tolist(),
            "sigma_q": self.sigma_q,
            "sigma_w": self.sigma_w,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "n_outer": self.n_outer,
            "grad_norm": self.grad_norm,
            "objective": self.objective,
            "config": asdict(self.config),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AggregationFit":
        payload = json.loads(text)
        return cls(
            item_ids=tuple(payload["item_ids"]),
            worker_ids=tuple(payload["worker_ids"]),
            mu=np.asarray(payload["mu"], dtype=float),
            q=np.asarray(payload["q"], dtype=float),
            w=np.asarray(payload["w"], dtype=float),
            vigilance=np.asarray(payload["vigilance"], dtype=float),
            sigma_q=float(payload["sigma_q"]),
            sigma_w=float(payload["sigma_w"]),
            converged=bool(payload["converged"]),
            n_iter=int(payload["n_iter"]),
            n_outer=int(payload["n_outer"]),
            grad_norm=float(payload["grad_norm"]),
            objective=float(payload["objective"]),
            config=AggregationConfig(**payload["config"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AggregationFit":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def fit_aggregation(
    records: Sequence[AnnotationRecord],
    config: AggregationConfig | None = None,
    item_ids: Sequence[str] | None = None,
    worker_ids: Sequence[str] | None = None,
) -> AggregationFit:
    """MAP-fit the vigilance model to annotation records.

    item_ids / worker_ids optionally fix the universe and ordering; an item
    or worker listed there without any annotation is rejected, as are
    annotations for ids outside the lists. Non-convergence yields a warning
    and converged=False, never an exception.
    """
    config = config or AggregationConfig()
    sigma_q = config.sigma_q if config.sigma_q is not None else 1.0
    sigma_w = config.sigma_w if config.sigma_w is not None else 1.0
    estimate_scales = config.sigma_q is None or config.sigma_w is None

    design = _build_design(records, item_ids, worker_ids)
    _, theta, _ = _make_objective(design, config, sigma_q, sigma_w)
    n_items = len(design.item_ids)
    n_workers = len(design.worker_ids)
    n_q = n_items * _N_LABELS
    n_w = n_workers * _N_LABELS

    total_iter = 0
    scales_done = not estimate_scales
    inner_ok = False
    n_outer = 0
    result = None
    for outer in range(config.max_outer if estimate_scales else 1):
        n_outer = outer + 1
        fun, _, bounds = _make_objective(design, config, sigma_q, sigma_w)
        result = minimize(
            fun,
            theta,
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
        theta = result.x
        total_iter += int(result.nit)
        inner_ok = bool(result.success)
        if not estimate_scales:
            break
        trace_q, trace_w = _posterior_trace_sums(theta, design, config, sigma_q, sigma_w)
        q = theta[:n_q].reshape(n_items, _N_LABELS)
        w = theta[n_q : n_q + n_w].reshape(n_workers, _N_LABELS)
        ss_q = float(((q - design.mu[None, :]) ** 2).sum()) + trace_q
        ss_w = float((w**2).sum()) + trace_w
        new_q = (
            _scale_update(ss_q, n_q, config.sigma_scale_q)
            if config.sigma_q is None
            else sigma_q
        )
        new_w = (
            _scale_update(ss_w, n_w, config.sigma_scale_w)
            if config.sigma_w is None
            else sigma_w
        )
        scales_done = bool(
            abs(np.log(new_q / sigma_q)) < config.outer_tol
            and abs(np.log(new_w / sigma_w)) < config.outer_tol
        )
        sigma_q, sigma_w = new_q, new_w
        if scales_done:
            break

    converged = bool(inner_ok and scales_done)
    if not converged:
        log.warning(
            "aggregation fit did not converge (inner ok: %s, scales settled: %s)",
            inner_ok,
            scales_done,
        )

    q = theta[:n_q].reshape(n_items, _N_LABELS).copy()
    w = theta[n_q : n_q + n_w].reshape(n_workers, _N_LABELS).copy()
    if config.fix_vigilance is None:
        vigilance = expit(theta[n_q + n_w :])
    else:
        vigilance = np.full(n_workers, float(config.fix_vigilance))

    # Project onto the prior-selected gauge; softmax-invariant by construction.
    q += (design.mu.sum() - q.sum(axis=1))[:, None] / _N_LABELS
    w -= w.mean(axis=1, keepdims=True)

    return AggregationFit(
        item_ids=design.item_ids,
        worker_ids=design.worker_ids,
        mu=design.mu.copy(),
        q=q,
        w=w,
        vigilance=vigilance,
        sigma_q=float(sigma_q),
        sigma_w=float(sigma_w),
        converged=converged,
        n_iter=total_iter,
        n_outer=n_outer,
        grad_norm=float(np.max(np.abs(result.jac))),
        objective=float(result.fun),
        config=config,
    )


def compare_to_majority(
    fit: AggregationFit, records: Iterable[AnnotationRecord]
) -> np.ndarray:
    """3x3 contingency of model argmax (rows) against per-item majority vote
    (columns), both indexed Disagree, Neutral, Agree. Majority ties resolve
    to Neutral. Empty record sets give an all-zero matrix."""
    matrix = np.zeros((_N_LABELS, _N_LABELS), dtype=int)
    for item_id, majority in majority_vote(records).items():
        model = fit.argmax_response(item_id)
        matrix[model - 1, majority - 1] += 1
    return matrix
