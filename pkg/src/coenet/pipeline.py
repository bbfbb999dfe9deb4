"""End-to-end fitting: CV of the global lambda, EB multipliers, selection."""

from __future__ import annotations

import dataclasses
import logging

import numpy as np
from scipy.special import expit

from .eb import FitResult, run_em
from .enet import (
    EnetProblem,
    cv_global_lambda,
    fit_path,
    fit_weighted_enet,
    select_k_features,
)
from .metrics import auc, brier_skill, cohens_kappa, mse_coefficients
from .model import Dataset, PartitionSet, PenaltyConfig

logger = logging.getLogger(__name__)


def fit_grouped(
    dataset: Dataset,
    partitions: PartitionSet,
    alpha: float = 0.5,
    *,
    folds: int = 10,
    lambda_global: float | None = None,
    lambda_grid=None,
    n_lambda: int = 100,
    seed=0,
    select: int | None = None,
    cv_loss: str = "deviance",
    n_jobs: int = 1,
    em_kw: dict | None = None,
) -> FitResult:
    """Cross-validate lambda with unit multipliers, estimate the multipliers
    by empirical Bayes, then refit the weighted elastic net.

    ``result.coefficients`` is the weighted fit at the cross-validated
    lambda; ``result.selected`` is ``(lambda_k, coefficients, info)`` when
    ``select`` is given.
    """
    plain = EnetProblem.plain(dataset, alpha)
    cv = None
    if lambda_global is None:
        grid = plain.lambda_grid(n_lambda) if lambda_grid is None else lambda_grid
        cv = cv_global_lambda(plain, folds, grid, seed, loss=cv_loss, n_jobs=n_jobs)
        lambda_global = cv.best_lambda
    em = run_em(dataset, partitions, PenaltyConfig(alpha, lambda_global), **(em_kw or {}))
    problem = EnetProblem.from_config(dataset, partitions, em.config)
    coef = fit_weighted_enet(problem, lambda_global)
    selected = select_k_features(problem, select) if select is not None else None
    return dataclasses.replace(
        em,
        coefficients=coef,
        selected=selected,
        diagnostics={"cv": cv, "lambda_global": float(lambda_global), "alpha": alpha},
    )


def loess_smooth(x, y, span: float = 0.75) -> np.ndarray:
    """Tricube-weighted local linear smoother evaluated at ``x``."""
    from statsmodels.nonparametric.smoothers_lowess import lowess

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y)
    out = np.full_like(y, np.nan)
    if ok.sum() < 3:
        out[ok] = y[ok]
        return out
    out[ok] = lowess(y[ok], x[ok], frac=span, it=0, return_sorted=False)
    return out


def _fit_metrics(coef, data) -> dict:
    test = data.test
    prob = expit(coef.linear_predictor(test.features, standardized=True))
    return {
        "model_size": coef.n_active,
        "kappa": float(cohens_kappa(coef.active, data.beta != 0)),
        "mse": mse_coefficients(coef.raw_penalized(), data.beta),
        "auc": auc(prob, test.responses),
        "bss": brier_skill(prob, test.responses),
    }


def metric_by_size(sizes, values, grid) -> np.ndarray:
    """A path metric as a function of model size, linearly interpolated along
    a path ordered by decreasing lambda.  Sizes are made non-decreasing first;
    for repeated sizes the fit with the larger lambda is kept."""
    sizes = np.maximum.accumulate(np.asarray(sizes, dtype=float))
    values = np.asarray(values, dtype=float)
    keep = np.r_[True, np.diff(sizes) > 0]
    return np.interp(grid, sizes[keep], values[keep])


def evaluate_methods(
    data,
    alpha: float = 0.5,
    *,
    folds: int = 10,
    seed=0,
    n_lambda: int = 40,
    ratio: float = 1e-2,
    max_size: int | None = None,
    em_kw: dict | None = None,
    partitions: PartitionSet | None = None,
):
    """Plain versus group-regularized elastic net on one simulated replicate.

    Both methods share the lambda cross-validated with unit multipliers.
    Returns ``(rows, summary)``: per-path-point metric rows and, per method,
    the metrics at the cross-validated lambda and size-matched summaries over
    model sizes ``1..K``, where ``K`` is the largest size both paths reach
    (capped by ``max_size``): ``mean_auc``, ``best_kappa`` (maximum) and
    ``mean_kappa``.  ``path_best_kappa`` is the unrestricted path maximum.
    """
    train = data.train
    partitions = data.partitions if partitions is None else partitions
    plain = EnetProblem.plain(train, alpha)
    cv = cv_global_lambda(plain, folds, plain.lambda_grid(n_lambda, ratio), seed)
    em = run_em(train, partitions, PenaltyConfig(alpha, cv.best_lambda), **(em_kw or {}))
    grouped = EnetProblem.from_config(train, partitions, em.config)

    rows, summary, curves = [], {}, {}
    for name, problem in (("enet", plain), ("grouped", grouped)):
        path = fit_path(problem, problem.lambda_grid(n_lambda, ratio), max_active=max_size)
        metrics = []
        for lam, coef in zip(path.lambdas, path.coefficients):
            m = _fit_metrics(coef, data)
            metrics.append(m)
            rows.append({"method": name, "alpha": alpha, "lambda": float(lam), **m})
        curves[name] = {k: [m[k] for m in metrics] for k in ("model_size", "auc", "kappa")}
        at_cv = _fit_metrics(fit_weighted_enet(problem, cv.best_lambda), data)
        summary[name] = {"at_cv": at_cv, "path_best_kappa": float(max(curves[name]["kappa"]))}
    top = min(max(c["model_size"]) for c in curves.values())
    if max_size is not None:
        top = min(top, max_size)
    grid = np.arange(1, max(top, 1) + 1)
    for name, c in curves.items():
        summary[name]["mean_auc"] = float(np.mean(metric_by_size(c["model_size"], c["auc"], grid)))
        summary[name]["best_kappa"] = float(np.max(metric_by_size(c["model_size"], c["kappa"], grid)))
        summary[name]["mean_kappa"] = float(np.mean(metric_by_size(c["model_size"], c["kappa"], grid)))
    summary["size_range"] = (1, int(grid[-1]))
    summary["grouped"]["multipliers"] = [m.tolist() for m in em.multipliers]
    summary["grouped"]["em_converged"] = bool(em.converged)
    summary["lambda_cv"] = cv.best_lambda
    return rows, summary
