"""Selection, estimation and prediction quality measures."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .model import ValidationError


class KappaResult(float):
    """Cohen's kappa as a float, with a ``degenerate`` flag for ``f_e == 1``."""

    degenerate: bool

    def __new__(cls, value, degenerate=False):
        obj = super().__new__(cls, value)
        obj.degenerate = degenerate
        return obj


def _binary(v, name):
    v = np.asarray(v)
    if v.dtype == bool:
        return v.astype(int)
    if not np.all((v == 0) | (v == 1)):
        raise ValidationError(f"{name} must be binary")
    return v.astype(int)


def cohens_kappa(s, t) -> KappaResult:
    """Chance-corrected agreement between selection ``s`` and truth ``t``."""
    s, t = _binary(s, "s"), _binary(t, "t")
    if s.shape != t.shape or s.ndim != 1 or s.size < 1:
        raise ValidationError("s and t must be equal-length non-empty vectors")
    p = s.size
    f_o = np.count_nonzero(s == t) / p
    f_e = (s.sum() * t.sum() + (p - s.sum()) * (p - t.sum())) / p**2
    if f_e == 1.0:
        return KappaResult(1.0 if f_o == 1.0 else 0.0, degenerate=True)
    return KappaResult((f_o - f_e) / (1.0 - f_e))


def mse_coefficients(beta_hat, beta_true) -> float:
    beta_hat = np.asarray(beta_hat, dtype=float)
    beta_true = np.asarray(beta_true, dtype=float)
    if beta_hat.shape != beta_true.shape:
        raise ValidationError(f"length mismatch: {beta_hat.shape} vs {beta_true.shape}")
    return float(np.mean((beta_true - beta_hat) ** 2))


def auc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score of a case > score of a non-case),
    ties counted one half."""
    scores = np.asarray(scores, dtype=float)
    labels = _binary(labels, "labels")
    if scores.shape != labels.shape:
        raise ValidationError("scores and labels differ in length")
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise ValidationError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def brier_skill(predictions, outcomes) -> float:
    """``1 - sum (y - yhat)^2 / sum (y - ybar)^2``."""
    yhat = np.asarray(predictions, dtype=float)
    y = _binary(outcomes, "outcomes").astype(float)
    if yhat.shape != y.shape:
        raise ValidationError("predictions and outcomes differ in length")
    ref = np.sum((y - y.mean()) ** 2)
    if ref == 0:
        raise ValidationError("Brier skill score undefined for constant outcomes")
    return float(1.0 - np.sum((y - yhat) ** 2) / ref)
