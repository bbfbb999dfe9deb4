"""Variational posterior of the Polya-Gamma augmented logistic elastic net.

The approximating family is ``q(beta) q(omega) q(psi)`` with a Gaussian
``N(mu, Sigma)`` for the coefficients, ``PG(m_i, c_i)`` for the augmentation
variables and ``GIG(1/2, lambda1**2 / (4 lambda2), chi_j)`` for the mixing
variables.  The four moment updates are cycled to a fixed point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit, log_expit

from .model import (
    Coefficients,
    Dataset,
    NumericalError,
    PartitionSet,
    PenaltyConfig,
    ValidationError,
    expand_multipliers,
)

logger = logging.getLogger(__name__)


def pg_mean(m, c):
    """Mean of a Polya-Gamma ``PG(m, c)`` variable, ``m / (2c) * tanh(c / 2)``."""
    m = np.asarray(m, dtype=float)
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-4
    safe = np.where(small, 1.0, c)
    out = m / (2.0 * safe) * np.tanh(safe / 2.0)
    # series m/4 (1 - c^2/12) avoids 0/0 at the origin
    out = np.where(small, m / 4.0 * (1.0 - c**2 / 12.0), out)
    return out if out.ndim else float(out)


def prior_precision(weights, lambda1, lambda2, chi):
    """Expected prior precision of the penalized coefficients,
    ``w (lambda2 + lambda1 sqrt(lambda2) / (2 sqrt(chi)))``."""
    weights = np.asarray(weights, dtype=float)
    return weights * (lambda2 + 0.5 * lambda1 * np.sqrt(lambda2) / np.sqrt(chi))


class Covariance:
    """Posterior covariance ``(X' Omega X + D)^{-1}`` held in block form.

    ``D`` is zero on the unpenalized block and ``diag(prec)`` on the
    penalized one.  The penalized block ``C = X_r' Omega X_r + diag(prec)`` is
    inverted either densely (``method="dense"``) or through the Woodbury
    identity with an ``n x n`` Cholesky factor (``method="woodbury"``); the
    unpenalized block enters through its ``u x u`` Schur complement.
    Nothing of size ``p x p`` is formed on the Woodbury path.
    """

    def __init__(self, xu, xr, omega, prec, method="woodbury"):
        xu = np.asarray(xu, dtype=float)
        xr = np.asarray(xr, dtype=float)
        omega = np.asarray(omega, dtype=float)
        prec = np.asarray(prec, dtype=float)
        n, p = xr.shape
        u = xu.shape[1]
        self.method = method
        self.u, self.p = u, p
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(prec))):
            raise NumericalError("non-finite Polya-Gamma weights or prior precision")

        if method == "woodbury":
            if np.any(prec <= 0):
                raise NumericalError("penalized block: non-positive prior precision")
            dinv = 1.0 / prec
            w = np.sqrt(omega)
            a = xr * dinv
            k = a @ xr.T
            mw = np.eye(n) + w[:, None] * k * w[None, :]
            try:
                chol = linalg.cholesky(mw, lower=True)
            except (linalg.LinAlgError, ValueError) as exc:
                raise NumericalError(f"penalized block: Woodbury system not positive definite ({exc})")
            g = linalg.solve_triangular(chol, w[:, None] * a, lower=True)
            t = linalg.solve_triangular(chol, w[:, None] * k, lower=True)
            self._dinv, self._g = dinv, g
            self._cinv_diag = dinv - np.einsum("ij,ij->j", g, g)
            hr = np.diag(k) - np.einsum("ij,ij->j", t, t)
        elif method == "dense":
            cmat = xr.T @ (omega[:, None] * xr)
            cmat[np.diag_indices(p)] += prec
            try:
                cho = linalg.cho_factor(cmat, lower=True)
            except (linalg.LinAlgError, ValueError) as exc:
                raise NumericalError(f"penalized block: singular precision matrix ({exc})")
            cinv = linalg.cho_solve(cho, np.eye(p))
            cinv = 0.5 * (cinv + cinv.T)
            self._cinv = cinv
            self._cinv_diag = np.diag(cinv).copy()
            hr = np.einsum("ij,jk,ik->i", xr, cinv, xr)
        else:
            raise ValidationError(f"unknown covariance method {method!r}")

        self._diag_r = self._cinv_diag
        self._h = hr
        if u:
            bt = xr.T @ (omega[:, None] * xu)
            f = self._cinv_apply(bt)
            s = xu.T @ (omega[:, None] * xu) - bt.T @ f
            s = 0.5 * (s + s.T)
            try:
                chos = linalg.cho_factor(s, lower=True)
            except (linalg.LinAlgError, ValueError) as exc:
                raise NumericalError(f"unpenalized block: Schur complement singular, covariates collinear? ({exc})")
            sinv = linalg.cho_solve(chos, np.eye(u))
            sinv = 0.5 * (sinv + sinv.T)
            e = xu - xr @ f
            self._f, self._sinv = f, sinv
            self._diag_r = self._cinv_diag + np.einsum("ij,jk,ik->i", f, sinv, f)
            self._h = hr + np.einsum("ij,jk,ik->i", e, sinv, e)

    def _cinv_apply(self, v):
        if self.method == "woodbury":
            dinv = self._dinv if v.ndim == 1 else self._dinv[:, None]
            return dinv * v - self._g.T @ (self._g @ v)
        return self._cinv @ v

    def diag_penalized(self) -> np.ndarray:
        return self._diag_r

    def diag_unpenalized(self) -> np.ndarray:
        return np.diag(self._sinv).copy() if self.u else np.zeros(0)

    def diag(self) -> np.ndarray:
        return np.concatenate([self.diag_unpenalized(), self.diag_penalized()])

    def design_quadratic(self) -> np.ndarray:
        """``x_i' Sigma x_i`` for every row of the design it was built from."""
        return self._h

    def solve(self, b) -> np.ndarray:
        """``Sigma @ b`` for a full-length vector ``b`` (unpenalized first)."""
        b = np.asarray(b, dtype=float)
        bu, br = b[: self.u], b[self.u :]
        cb = self._cinv_apply(br)
        if not self.u:
            return cb
        mu_u = self._sinv @ (bu - self._f.T @ br)
        return np.concatenate([mu_u, cb - self._f @ mu_u])

    def to_dense(self) -> np.ndarray:
        cinv = self._cinv_apply(np.eye(self.p))
        if not self.u:
            return cinv
        fs = self._f @ self._sinv
        top = np.hstack([self._sinv, -fs.T])
        bottom = np.hstack([-fs, cinv + fs @ self._f.T])
        return np.vstack([top, bottom])


def direct_covariance(design, omega, prec_full) -> np.ndarray:
    """Dense reference inverse of ``X' Omega X + diag(prec_full)``."""
    design = np.asarray(design, dtype=float)
    prec = design.T @ (np.asarray(omega)[:, None] * design) + np.diag(prec_full)
    return np.linalg.inv(prec)


def choose_method(n: int, u: int, p: int) -> str:
    return "woodbury" if u + p > n else "dense"


def update_covariance_mean(dataset: Dataset, weights, lambda1, lambda2, c, chi, method="auto"):
    """Covariance and mean update given the current ``c`` and ``chi``.

    Returns
    -------
    sigma : Covariance
    mu : ndarray, shape (u + p,)
    """
    if method == "auto":
        method = choose_method(dataset.n, dataset.u, dataset.p)
    omega = pg_mean(dataset.trials, c)
    prec = prior_precision(weights, lambda1, lambda2, chi)
    sigma = Covariance(dataset.unpenalized, dataset.features, omega, prec, method=method)
    kappa = dataset.responses - dataset.trials / 2.0
    b = np.concatenate([dataset.unpenalized.T @ kappa, dataset.features.T @ kappa])
    return sigma, sigma.solve(b)


def update_c(dataset: Dataset, sigma, mu) -> np.ndarray:
    """``c_i = sqrt(x_i' Sigma x_i + (x_i' mu)^2)``.

    ``sigma`` is either a :class:`Covariance` built on ``dataset`` or a dense
    matrix over the full design.
    """
    design = dataset.design
    eta = design @ mu
    if isinstance(sigma, Covariance):
        quad = sigma.design_quadratic()
    else:
        quad = np.einsum("ij,jk,ik->i", design, np.asarray(sigma), design)
    return np.sqrt(np.maximum(quad, 0.0) + eta**2)


def update_chi(weights, lambda2, sigma_diag, mu_penalized) -> np.ndarray:
    """``chi_j = w_j lambda2 (Sigma_jj + mu_j^2)`` over the penalized features."""
    return np.asarray(weights) * lambda2 * (np.asarray(sigma_diag) + np.asarray(mu_penalized) ** 2)


@dataclass(frozen=True)
class VariationalState:
    """Variational parameters at the end of a cycle of updates.

    ``c`` and ``chi`` are recomputed from ``mu`` and ``sigma`` at the end of
    every cycle, so they are always consistent with them; ``sigma`` and
    ``mu`` are consistent with the previous ``c`` and ``chi`` up to the
    convergence tolerance.
    """

    mu: np.ndarray
    sigma: Covariance
    c: np.ndarray
    chi: np.ndarray
    u: int
    iteration_count: int
    converged: bool
    second_moment: np.ndarray
    trace: tuple = field(default=(), repr=False)

    @property
    def mu_penalized(self) -> np.ndarray:
        return self.mu[self.u :]

    @property
    def mu_unpenalized(self) -> np.ndarray:
        return self.mu[: self.u]

    @property
    def sigma_diag(self) -> np.ndarray:
        return self.sigma.diag_penalized()


def _surrogate_loglik(dataset, mu, weights, lambda1, lambda2):
    eta = dataset.design @ mu
    y, m = dataset.responses, dataset.trials
    ll = float(np.sum(y * log_expit(eta) + (m - y) * log_expit(-eta)))
    b = mu[dataset.u :]
    pen = 0.5 * np.sum(lambda1 * np.sqrt(weights) * np.abs(b) + lambda2 * weights * b**2)
    return ll - pen


def run_vb(
    dataset: Dataset,
    partitions: PartitionSet,
    config: PenaltyConfig,
    init: VariationalState | None = None,
    tol: float = 1e-6,
    max_iter: int = 500,
    method: str = "auto",
) -> VariationalState:
    """Iterate the variational updates to a fixed point.

    Convergence is declared when ``max |d mu_j| / (1 + |mu_j|)`` and the same
    quantity for the second moments ``Sigma_jj + mu_j^2`` both fall below
    ``tol``.  Hitting ``max_iter`` returns a state with ``converged=False``.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    weights = expand_multipliers(partitions, config)
    if weights.shape[0] != dataset.p:
        raise ValidationError("partition does not cover the dataset's features")
    lambda1, lambda2 = config.lambda1, config.lambda2
    if init is None:
        c = np.zeros(dataset.n)
        chi = weights * lambda2
        mu_prev = np.zeros(dataset.u + dataset.p)
        e_prev = np.ones(dataset.p)
    else:
        c, chi, mu_prev, e_prev = init.c, init.chi, init.mu, init.second_moment

    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            sigma, mu = update_covariance_mean(dataset, weights, lambda1, lambda2, c, chi, method)
        except NumericalError as exc:
            raise NumericalError(f"iteration {it}: {exc}") from exc
        mu_r = mu[dataset.u :]
        e = sigma.diag_penalized() + mu_r**2
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(e))):
            raise NumericalError(f"non-finite variational parameters at iteration {it}")
        c = update_c(dataset, sigma, mu)
        chi = update_chi(weights, lambda2, sigma.diag_penalized(), mu_r)
        delta = max(
            float(np.max(np.abs(mu - mu_prev) / (1.0 + np.abs(mu)), initial=0.0)),
            float(np.max(np.abs(e - e_prev) / (1.0 + np.abs(e)))),
        )
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(
                "vb iter %d: delta=%.3e surrogate=%.6f",
                it, delta, _surrogate_loglik(dataset, mu, weights, lambda1, lambda2),
            )
        trace.append(delta)
        mu_prev, e_prev = mu, e
        if delta < tol:
            converged = True
            break

    if not converged:
        logger.warning("variational updates did not converge in %d iterations (delta=%.2e)", max_iter, delta)
    return VariationalState(
        mu=mu,
        sigma=sigma,
        c=c,
        chi=chi,
        u=dataset.u,
        iteration_count=it,
        converged=converged,
        second_moment=e,
        trace=tuple(trace),
    )


def fixed_point_residual(dataset, partitions, config, state, method="auto") -> dict:
    """Relative change of every variational parameter under one more cycle."""
    weights = expand_multipliers(partitions, config)
    sigma, mu = update_covariance_mean(
        dataset, weights, config.lambda1, config.lambda2, state.c, state.chi, method
    )
    c = update_c(dataset, sigma, mu)
    chi = update_chi(weights, config.lambda2, sigma.diag_penalized(), mu[dataset.u :])

    def rel(new, old):
        return float(np.max(np.abs(new - old) / np.maximum(np.abs(old), 1e-300), initial=0.0))

    return {
        "mu": float(np.max(np.abs(mu - state.mu) / (1.0 + np.abs(state.mu)), initial=0.0)),
        "sigma_diag": rel(sigma.diag(), state.sigma.diag()),
        "c": rel(c, state.c),
        "chi": rel(chi, state.chi),
    }


def state_coefficients(state: VariationalState, dataset: Dataset) -> Coefficients:
    """Posterior mean packaged as coefficients for prediction."""
    return Coefficients(
        unpenalized_part=state.mu_unpenalized,
        penalized_part=state.mu_penalized,
        scale_info=dataset.scale_info,
        unpenalized_scale=dataset.unpenalized_scale,
        intercept=dataset.intercept,
    )


def predict_probability(coefficients, new_features, covariates=None, *, standardized=False):
    """``expit(x' beta)`` per row.

    ``coefficients`` is a :class:`Coefficients`, or a raw coefficient vector
    over the full design in which case ``new_features`` must already be the
    full standardized design ``[X_u, X_r]``.
    """
    if isinstance(coefficients, Coefficients):
        eta = coefficients.linear_predictor(new_features, covariates, standardized=standardized)
    else:
        beta = np.asarray(coefficients, dtype=float)
        x = np.asarray(new_features, dtype=float)
        if x.ndim != 2 or x.shape[1] != beta.shape[0]:
            raise ValidationError(
                f"design has shape {x.shape}, coefficient vector has length {beta.shape[0]}"
            )
        eta = x @ beta
    return expit(eta)
