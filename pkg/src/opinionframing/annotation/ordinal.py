"""Ordinal model linking stance judgments to annotator covariates.

Responses are ordered (1 Disagree < 2 Neutral < 3 Agree) and modeled with
a two-cutpoint logistic link on a latent score eta_ij = q_i + w_j:

    p(Y = 1) = 1 - g(eta - c1)
    p(Y = 2) = g(eta - c1) - g(eta - c2)
    p(Y = 3) = g(eta - c2)

with q_i ~ Normal(0, sigma_q^2) and w_j ~ Normal(beta.X_j, sigma_w^2), so
worker covariates shift the whole latent scale. Under this link the
cumulative odds of answering above either cutpoint multiply by exp(beta_p)
per unit of covariate p, uniformly over items; exp(beta) is therefore the
natural odds-ratio summary and an agree-vs-neutral variant is derived at
the median item for reporting.

MAP fitting mirrors the aggregation model: L-BFGS-B over (q, w, beta, c1,
log(c2 - c1)) with analytic gradients at fixed prior scales, alternated
with closed-form scale updates whose sums of squares carry Laplace
posterior-variance corrections (see the aggregation module for why joint
optimization over scales collapses). Scales are floored at 0.05: on a
logistic latent scale a spread that small shifts response probabilities by
about a percent, indistinguishable in practice, and the floor keeps the
inner problem well conditioned when a random effect is truly absent.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import qr
from scipy.optimize import minimize
from scipy.special import expit, log_expit
from scipy.stats import logistic

from .records import AnnotationRecord, AnnotatorProfile, validate_records

log = logging.getLogger(__name__)

_INTERCEPT = "(intercept)"
_LOG_GAP_BOUNDS = (np.log(1e-8), np.log(50.0))
_SCALE_FLOOR = 0.05


@dataclass(frozen=True)
class OrdinalConfig:
    """Settings for :func:`fit_ordinal`.

    Coefficients and cutpoints get Normal(0, coef_scale^2) priors.
    sigma_q / sigma_w fix the random-effect scales when given; None
    estimates them under half-normal(sigma_scale_*) hyperpriors.
    """

    coef_scale: float = 2.0
    sigma_q: float | None = None
    sigma_w: float | None = None
    sigma_scale_q: float = 1.0
    sigma_scale_w: float = 1.0
    include_intercept: bool = True
    max_iter: int = 5000
    max_outer: int = 100
    grad_tol: float = 1e-6
    outer_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.coef_scale <= 0 or self.sigma_scale_q <= 0 or self.sigma_scale_w <= 0:
            raise ValueError("prior scales must be positive")
        for name in ("sigma_q", "sigma_w"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive when fixed")


def response_probabilities(eta: float, c1: float, c2: float) -> np.ndarray:
    """Probabilities of (Disagree, Neutral, Agree) at latent score eta."""
    if not c2 > c1:
        raise ValueError("cutpoints must satisfy c1 < c2")
    g1 = expit(eta - c1)
    g2 = expit(eta - c2)
    return np.array([1.0 - g1, g1 - g2, g2])


def _design_matrix(
    worker_ids: Sequence[str],
    profiles: Sequence[AnnotatorProfile],
    covariates: Sequence[str] | None,
    include_intercept: bool,
) -> tuple[np.ndarray, tuple[str, ...]]:
    by_worker: dict[str, Mapping[str, int]] = {}
    for profile in profiles:
        if profile.worker_id in by_worker:
            raise ValueError(f"duplicate profile for worker {profile.worker_id!r}")
        by_worker[profile.worker_id] = profile.covariates
    missing = [w for w in worker_ids if w not in by_worker]
    if missing:
        raise ValueError(f"workers without profiles: {missing}")
    if covariates is None:
        names = sorted({name for w in worker_ids for name in by_worker[w]})
    else:
        names = list(covariates)
    columns = [_INTERCEPT] + names if include_intercept else list(names)
    rows = []
    for worker in worker_ids:
        cov = by_worker[worker]
        values = [1.0] if include_intercept else []
        for name in names:
            if name not in cov:
                raise ValueError(f"worker {worker!r} lacks covariate {name!r}")
            values.append(float(cov[name]))
        rows.append(values)
    matrix = np.asarray(rows, dtype=float)

    if matrix.size:
        _, r_factor, pivots = qr(matrix, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r_factor))
        tol = max(matrix.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
        rank = int((diag > tol).sum())
        if rank < matrix.shape[1]:
            collinear = sorted(columns[j] for j in pivots[rank:])
            raise ValueError(f"collinear covariate columns: {collinear}")
    return matrix, tuple(columns)


@dataclass(frozen=True)
class _OrdinalDesign:
    item_ids: tuple[str, ...]
    worker_ids: tuple[str, ...]
    columns: tuple[str, ...]
    matrix: np.ndarray
    item_index: np.ndarray
    worker_index: np.ndarray
    labels: np.ndarray


def _build_ordinal_design(
    records: Sequence[AnnotationRecord],
    profiles: Sequence[AnnotatorProfile],
    covariates: Sequence[str] | None,
    config: OrdinalConfig,
) -> _OrdinalDesign:
    if not records:
        raise ValueError("no annotation records given")
    validate_records(records)
    item_ids = tuple(sorted({rec.item_id for rec in records}))
    worker_ids = tuple(sorted({rec.worker_id for rec in records}))
    matrix, columns = _design_matrix(
        worker_ids, profiles, covariates, config.include_intercept
    )
    item_pos = {item: n for n, item in enumerate(item_ids)}
    worker_pos = {worker: n for n, worker in enumerate(worker_ids)}
    item_index = np.array([item_pos[rec.item_id] for rec in records], dtype=np.intp)
    worker_index = np.array(
        [worker_pos[rec.worker_id] for rec in records], dtype=np.intp
    )
    labels = np.array([rec.response for rec in records], dtype=np.intp)
    return _OrdinalDesign(
        item_ids, worker_ids, columns, matrix, item_index, worker_index, labels
    )


def build_ordinal_objective(
    records: Sequence[AnnotationRecord],
    profiles: Sequence[AnnotatorProfile],
    covariates: Sequence[str] | None = None,
    config: OrdinalConfig | None = None,
    sigma_q: float = 1.0,
    sigma_w: float = 1.0,
) -> tuple[Callable[[np.ndarray], tuple[float, np.ndarray]], np.ndarray, list, dict]:
    """Return (fun, theta0, bounds, meta) for the negative log-posterior at
    the given random-effect scales.

    theta packs q (I), w (J), coefficients (including any intercept), c1,
    and log(c2 - c1).
    """
    config = config or OrdinalConfig()
    design = _build_ordinal_design(records, profiles, covariates, config)
    fun, theta0, bounds = _make_ordinal_objective(design, config, sigma_q, sigma_w)
    meta = {
        "item_ids": design.item_ids,
        "worker_ids": design.worker_ids,
        "columns": design.columns,
        "matrix": design.matrix,
    }
    return fun, theta0, bounds, meta


def _make_ordinal_objective(
    design: _OrdinalDesign,
    config: OrdinalConfig,
    sigma_q: float,
    sigma_w: float,
) -> tuple[Callable[[np.ndarray], tuple[float, np.ndarray]], np.ndarray, list]:
    matrix = design.matrix
    low = design.labels == 1
    mid = design.labels == 2
    high = design.labels == 3
    n_items = len(design.item_ids)
    n_workers = len(design.worker_ids)
    n_coef = matrix.shape[1]
    n_mid = int(mid.sum())
    coef_var = config.coef_scale**2
    item_index = design.item_index
    worker_index = design.worker_index

    def fun(theta: np.ndarray) -> tuple[float, np.ndarray]:
        q = theta[:n_items]
        w = theta[n_items : n_items + n_workers]
        beta = theta[n_items + n_workers : n_items + n_workers + n_coef]
        cursor = n_items + n_workers + n_coef
        c1 = theta[cursor]
        gap = np.exp(theta[cursor + 1])
        c2 = c1 + gap

        eta = q[item_index] + w[worker_index]
        a = eta - c1
        b = eta - c2
        inv_gap = 1.0 / np.expm1(gap)
        log_span = np.log1p(-np.exp(-gap))

        loglik = (
            log_expit(-a[low]).sum()
            + (log_expit(a[mid]) + log_expit(-b[mid])).sum()
            + n_mid * log_span
            + log_expit(b[high]).sum()
        )
        d_a = np.zeros(len(design.labels))
        d_b = np.zeros(len(design.labels))
        d_a[low] = -expit(a[low])
        d_a[mid] = expit(-a[mid]) + inv_gap
        d_b[mid] = -expit(b[mid]) - inv_gap
        d_b[high] = expit(-b[high])

        w_resid = w - matrix @ beta
        logprior = (
            -0.5 * float(q @ q) / sigma_q**2
            - 0.5 * float(w_resid @ w_resid) / sigma_w**2
            - 0.5 * float(beta @ beta) / coef_var
            - 0.5 * (c1**2 + c2**2) / coef_var
        )

        d_eta = d_a + d_b
        grad_q = np.zeros(n_items)
        np.add.at(grad_q, item_index, d_eta)
        grad_q -= q / sigma_q**2
        grad_w = np.zeros(n_workers)
        np.add.at(grad_w, worker_index, d_eta)
        grad_w -= w_resid / sigma_w**2
        grad_beta = matrix.T @ (w_resid / sigma_w**2) - beta / coef_var

        dobj_c1 = -float(d_a.sum()) - c1 / coef_var
        dobj_c2 = -float(d_b.sum()) - c2 / coef_var
        grad_c1 = dobj_c1 + dobj_c2
        grad_gap = dobj_c2 * gap

        grad = np.concatenate([grad_q, grad_w, grad_beta, [grad_c1, grad_gap]])
        return -(float(loglik) + float(logprior)), -grad

    total = len(design.labels)
    p_low = (float(low.sum()) + 0.5) / (total + 1.5)
    p_high = (float(high.sum()) + 0.5) / (total + 1.5)
    c1_init = float(logistic.ppf(p_low))
    c2_init = float(-logistic.ppf(p_high))
    if not c2_init - c1_init > 1e-3:
        c1_init, c2_init = -1.0, 1.0
    theta0 = np.concatenate(
        [
            np.zeros(n_items + n_workers + n_coef),
            [c1_init, np.log(c2_init - c1_init)],
        ]
    )
    bounds: list[tuple[float | None, float | None]] = [(None, None)] * (
        n_items + n_workers + n_coef + 1
    )
    bounds.append(_LOG_GAP_BOUNDS)
    return fun, theta0, bounds


def _ordinal_trace_sums(
    theta: np.ndarray,
    design: _OrdinalDesign,
    config: OrdinalConfig,
    sigma_q: float,
    sigma_w: float,
) -> tuple[float, float]:
    """Laplace posterior variance sums for the scale updates.

    Uses the joint Gaussian approximation over (q, w, beta) at the current
    optimum (cutpoints held fixed — they pool information from every record
    and carry negligible uncertainty). Per response the negative
    log-likelihood curvature in eta is g'(a) for a low answer, g'(b) for a
    high one, and g'(a) + g'(b) for the middle category; the curvature ties
    the item and worker of that response together, and the w ~ N(X beta)
    prior ties workers to the coefficients. The full joint covariance
    matters: per-block conditional variances understate the posterior
    spread and bias the scales downward on weakly identified data.

    Returns (sum_i Var(q_i), sum_j E[(w_j - x_j beta)^2] - resid_j^2).
    """
    n_items = len(design.item_ids)
    n_workers = len(design.worker_ids)
    matrix = design.matrix
    n_coef = matrix.shape[1]
    q = theta[:n_items]
    w = theta[n_items : n_items + n_workers]
    cursor = n_items + n_workers + n_coef
    c1 = float(theta[cursor])
    c2 = c1 + float(np.exp(theta[cursor + 1]))

    eta = q[design.item_index] + w[design.worker_index]
    ga = expit(eta - c1) * expit(-(eta - c1))
    gb = expit(eta - c2) * expit(-(eta - c2))
    kappa = np.where(
        design.labels == 1, ga, np.where(design.labels == 3, gb, ga + gb)
    )

    dim = n_items + n_workers + n_coef
    hessian = np.zeros((dim, dim))
    diag_q = np.full(n_items, 1.0 / sigma_q**2)
    diag_w = np.full(n_workers, 1.0 / sigma_w**2)
    np.add.at(diag_q, design.item_index, kappa)
    np.add.at(diag_w, design.worker_index, kappa)
    hessian[:n_items, :n_items] = np.diag(diag_q)
    sl_w = slice(n_items, n_items + n_workers)
    sl_b = slice(n_items + n_workers, dim)
    hessian[sl_w, sl_w] = np.diag(diag_w)
    cross = np.zeros((n_items, n_workers))
    np.add.at(cross, (design.item_index, design.worker_index), kappa)
    hessian[:n_items, sl_w] = cross
    hessian[sl_w, :n_items] = cross.T
    hessian[sl_w, sl_b] = -matrix / sigma_w**2
    hessian[sl_b, sl_w] = -matrix.T / sigma_w**2
    hessian[sl_b, sl_b] = (
        matrix.T @ matrix / sigma_w**2 + np.eye(n_coef) / config.coef_scale**2
    )

    cov = np.linalg.inv(hessian)
    trace_q = float(np.trace(cov[:n_items, :n_items]))
    cov_ww = np.diag(cov[sl_w, sl_w])
    cov_wb = cov[sl_w, sl_b]
    cov_bb = cov[sl_b, sl_b]
    trace_w = float(
        (
            cov_ww
            + np.einsum("jp,pr,jr->j", matrix, cov_bb, matrix)
            - 2.0 * np.einsum("jp,jp->j", cov_wb, matrix)
        ).sum()
    )
    return trace_q, trace_w


def _scale_update(ss: float, n_terms: int, scale: float) -> float:
    """Conditional maximizer of the scale given a sum of squares, under a
    half-normal(scale) hyperprior (positive root of
    x^2 + n*scale^2*x - ss*scale^2 = 0 with x = sigma^2)."""
    variance = (
        -n_terms * scale**2 + np.sqrt(n_terms**2 * scale**4 + 4.0 * ss * scale**2)
    ) / 2.0
    return max(float(np.sqrt(variance)), _SCALE_FLOOR)


@dataclass(frozen=True)
class OrdinalFit:
    """MAP estimate of the ordinal covariate model."""

    item_ids: tuple[str, ...]
    worker_ids: tuple[str, ...]
    covariate_names: tuple[str, ...]
    q: np.ndarray
    w: np.ndarray
    beta: np.ndarray
    c1: float
    c2: float
    sigma_q: float
    sigma_w: float
    converged: bool
    n_iter: int
    n_outer: int
    grad_norm: float
    objective: float
    config: OrdinalConfig = field(default_factory=OrdinalConfig)

    def _named_coefficients(self) -> dict[str, float]:
        return {
            name: float(value)
            for name, value in zip(self.covariate_names, self.beta)
            if name != _INTERCEPT
        }

    @property
    def intercept(self) -> float:
        for name, value in zip(self.covariate_names, self.beta):
            if name == _INTERCEPT:
                return float(value)
        return 0.0

    def odds_ratios(self) -> dict[str, float]:
        """Cumulative odds ratios exp(beta): the factor by which the odds of
        answering above either cutpoint multiply when the covariate flips
        from 0 to 1, identical for both cutpoints under this model."""
        return {name: float(np.exp(b)) for name, b in self._named_coefficients().items()}

    def odds_ratios_agree_vs_neutral(self) -> dict[str, float]:
        """Agree-vs-neutral odds ratios per covariate, evaluated for a
        baseline worker (all covariates 0) judging the median item."""
        base = float(np.median(self.q)) + self.intercept

        def agree_over_neutral(eta: float) -> float:
            p = response_probabilities(eta, self.c1, self.c2)
            return p[2] / p[1]

        return {
            name: agree_over_neutral(base + b) / agree_over_neutral(base)
            for name, b in self._named_coefficients().items()
        }

    def item_probabilities(self, item_id: str) -> np.ndarray:
        """Response distribution for an item as seen by a baseline worker."""
        try:
            row = self.item_ids.index(item_id)
        except ValueError:
            raise KeyError(f"unknown item {item_id!r}") from None
        return response_probabilities(
            float(self.q[row]) + self.intercept, self.c1, self.c2
        )

    def to_json(self) -> str:
        payload = {
            "item_ids": list(self.item_ids),
            "worker_ids": list(self.worker_ids),
            "covariate_names": list(self.covariate_names),
            "q": self.q.tolist(),
            "w": self.w.tolist(),
            "beta": self.beta.tolist(),
            "c1": self.c1,
            "c2": self.c2,
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
    def from_json(cls, text: str) -> "OrdinalFit":
        payload = json.loads(text)
        return cls(
            item_ids=tuple(payload["item_ids"]),
            worker_ids=tuple(payload["worker_ids"]),
            covariate_names=tuple(payload["covariate_names"]),
            q=np.asarray(payload["q"], dtype=float),
            w=np.asarray(payload["w"], dtype=float),
            beta=np.asarray(payload["beta"], dtype=float),
            c1=float(payload["c1"]),
            c2=float(payload["c2"]),
            sigma_q=float(payload["sigma_q"]),
            sigma_w=float(payload["sigma_w"]),
            converged=bool(payload["converged"]),
            n_iter=int(payload["n_iter"]),
            n_outer=int(payload["n_outer"]),
            grad_norm=float(payload["grad_norm"]),
            objective=float(payload["objective"]),
            config=OrdinalConfig(**payload["config"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "OrdinalFit":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def summary(self) -> str:
        lines = [
            f"items={len(self.item_ids)} workers={len(self.worker_ids)}",
            f"cutpoints: c1={self.c1:.4f} c2={self.c2:.4f}",
            f"scales: sigma_q={self.sigma_q:.4f} sigma_w={self.sigma_w:.4f}",
        ]
        cumulative = self.odds_ratios()
        margin = self.odds_ratios_agree_vs_neutral()
        for name in cumulative:
            lines.append(
                f"{name}: OR={cumulative[name]:.4f} "
                f"agree-vs-neutral={margin[name]:.4f}"
            )
        return "\n".join(lines)


def fit_ordinal(
    records: Sequence[AnnotationRecord],
    profiles: Sequence[AnnotatorProfile],
    covariates: Sequence[str] | None = None,
    config: OrdinalConfig | None = None,
) -> OrdinalFit:
    """MAP-fit the ordinal covariate model.

    Every worker appearing in the records needs a profile; profiles for
    absent workers are ignored. Collinear covariate columns (including the
    intercept) are rejected with their names. Non-convergence warns and
    sets converged=False.
    """
    config = config or OrdinalConfig()
    design = _build_ordinal_design(records, profiles, covariates, config)
    sigma_q = config.sigma_q if config.sigma_q is not None else 1.0
    sigma_w = config.sigma_w if config.sigma_w is not None else 1.0
    estimate_scales = config.sigma_q is None or config.sigma_w is None

    _, theta, _ = _make_ordinal_objective(design, config, sigma_q, sigma_w)
    n_items = len(design.item_ids)
    n_workers = len(design.worker_ids)
    n_coef = design.matrix.shape[1]

    total_iter = 0
    scales_done = not estimate_scales
    inner_ok = False
    n_outer = 0
    result = None
    for outer in range(config.max_outer if estimate_scales else 1):
        n_outer = outer + 1
        fun, _, bounds = _make_ordinal_objective(design, config, sigma_q, sigma_w)
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
        trace_q, trace_w = _ordinal_trace_sums(theta, design, config, sigma_q, sigma_w)
        q = theta[:n_items]
        w_resid = (
            theta[n_items : n_items + n_workers]
            - design.matrix @ theta[n_items + n_workers : n_items + n_workers + n_coef]
        )
        ss_q = float(q @ q) + trace_q
        ss_w = float(w_resid @ w_resid) + trace_w
        new_q = (
            _scale_update(ss_q, n_items, config.sigma_scale_q)
            if config.sigma_q is None
            else sigma_q
        )
        new_w = (
            _scale_update(ss_w, n_workers, config.sigma_scale_w)
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
            "ordinal fit did not converge (inner ok: %s, scales settled: %s)",
            inner_ok,
            scales_done,
        )

    cursor = n_items + n_workers + n_coef
    c1 = float(theta[cursor])
    c2 = c1 + float(np.exp(theta[cursor + 1]))
    return OrdinalFit(
        item_ids=design.item_ids,
        worker_ids=design.worker_ids,
        covariate_names=design.columns,
        q=theta[:n_items].copy(),
        w=theta[n_items : n_items + n_workers].copy(),
        beta=theta[n_items + n_workers : cursor].copy(),
        c1=c1,
        c2=c2,
        sigma_q=float(sigma_q),
        sigma_w=float(sigma_w),
        converged=converged,
        n_iter=total_iter,
        n_outer=n_outer,
        grad_norm=float(np.max(np.abs(result.jac))),
        objective=float(result.fun),
        config=config,
    )
