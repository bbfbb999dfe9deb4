"""Empirical-Bayes estimation of group penalty multipliers.

An EM-type loop: the variational posterior supplies per-group expected
penalty terms ``d_g``; the multipliers then maximize

    1/2 sum_g |G_g| log m_g - (1 - alpha) lambda / 4 sum_g m_g d_g

under the calibration ``prod_g m_g^{|G_g|} = 1``.  With several partitions
the multipliers combine multiplicatively per feature and each partition is
calibrated separately.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import isotonic_regression
from scipy.special import logsumexp, softmax

from .model import (
    Dataset,
    NumericalError,
    PartitionSet,
    PenaltyConfig,
    ValidationError,
    calibrate,
)
from .vb import VariationalState, run_vb

logger = logging.getLogger(__name__)

CLAMP = (1e-4, 1e4)


class ClampWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class MStepInput:
    """Sufficient statistics for one M-step.

    ``cells`` lists each occupied combination of group indices (one column
    per partition); ``cell_d`` and ``cell_sizes`` hold the summed penalty
    terms and feature counts of those cells.
    """

    cells: np.ndarray
    cell_d: np.ndarray
    cell_sizes: np.ndarray
    group_sizes: tuple[np.ndarray, ...]
    alpha: float
    lambda_global: float

    @classmethod
    def single(cls, d, sizes, alpha=0.5, lambda_global=1.0) -> "MStepInput":
        d = np.asarray(d, dtype=float)
        sizes = np.asarray(sizes, dtype=float)
        G = d.shape[0]
        return cls(np.arange(G)[:, None], d, sizes, (sizes,), alpha, lambda_global)

    @classmethod
    def from_table(cls, table, sizes_table, alpha=0.5, lambda_global=1.0) -> "MStepInput":
        """Two partitions given as ``G1 x G2`` tables of d values and cell counts."""
        table = np.asarray(table, dtype=float)
        counts = np.asarray(sizes_table, dtype=float)
        occupied = np.argwhere(counts > 0)
        return cls(
            occupied,
            table[counts > 0],
            counts[counts > 0],
            (counts.sum(axis=1), counts.sum(axis=0)),
            alpha,
            lambda_global,
        )

    @property
    def n_partitions(self) -> int:
        return len(self.group_sizes)

    @property
    def d(self) -> np.ndarray:
        """Per-group totals for the first partition."""
        return np.bincount(
            self.cells[:, 0], weights=self.cell_d, minlength=len(self.group_sizes[0])
        )

    def d_table(self) -> np.ndarray:
        """Dense table over all group combinations, zero for empty cells."""
        shape = tuple(len(s) for s in self.group_sizes)
        out = np.zeros(shape)
        out[tuple(self.cells.T)] = self.cell_d
        return out


def feature_penalty_terms(second_moment, chi, alpha, lambda_global) -> np.ndarray:
    """Per-feature contribution to ``d_g``:
    ``(Sigma_jj + mu_j^2) (1 + alpha lambda^1.5 sqrt((1 - alpha) / (8 chi_j)))``.
    """
    chi = np.asarray(chi, dtype=float)
    if not np.all(np.isfinite(chi)) or np.any(chi <= 0):
        raise NumericalError("chi must be finite and positive")
    factor = 1.0 + alpha * lambda_global**1.5 * np.sqrt((1.0 - alpha) / (8.0 * chi))
    return np.asarray(second_moment, dtype=float) * factor


def compute_group_weights(state: VariationalState, partitions: PartitionSet, config: PenaltyConfig) -> MStepInput:
    terms = feature_penalty_terms(state.second_moment, state.chi, config.alpha, config.lambda_global)
    labels = np.column_stack([part.assignment for part in partitions])
    cells, inverse = np.unique(labels, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    cell_d = np.bincount(inverse, weights=terms, minlength=len(cells))
    cell_sizes = np.bincount(inverse, minlength=len(cells)).astype(float)
    if not np.all(np.isfinite(cell_d)):
        raise NumericalError("non-finite group weights")
    return MStepInput(
        cells=cells,
        cell_d=cell_d,
        cell_sizes=cell_sizes,
        group_sizes=tuple(part.sizes.astype(float) for part in partitions),
        alpha=config.alpha,
        lambda_global=config.lambda_global,
    )


def mstep_objective(multipliers, inp: MStepInput) -> float:
    """Expected complete-data log-likelihood in the multipliers, up to a constant."""
    total = 0.0
    prod = np.ones(len(inp.cells))
    for k, (m, sizes) in enumerate(zip(multipliers, inp.group_sizes)):
        m = np.asarray(m, dtype=float)
        total += 0.5 * float(np.dot(sizes, np.log(m)))
        prod = prod * m[inp.cells[:, k]]
    kappa = (1.0 - inp.alpha) * inp.lambda_global / 4.0
    return total - kappa * float(np.dot(prod, inp.cell_d))


def closed_form_single(inp: MStepInput) -> np.ndarray:
    """Stationary point ``m_g = t |G_g| / d_g`` with ``t`` fixed by calibration."""
    d = inp.d
    sizes = inp.group_sizes[0]
    if np.any(d <= 0):
        raise ValidationError("all d_g must be positive")
    return calibrate(sizes / d, sizes)


def _null_basis(sizes: np.ndarray) -> np.ndarray:
    if sizes.shape[0] == 1:
        return np.zeros((1, 0))
    return linalg.null_space(sizes[None, :])


def solve_numeric(inp: MStepInput, tol: float = 1e-12, max_iter: int = 200):
    """Newton's method on the log scale with the calibration eliminated.

    Under the calibration the log term is constant, so the M-step reduces to
    minimizing ``log sum_c d_c exp(theta_c)`` (convex, scale-free) over the
    null space of the size constraints.

    Returns
    -------
    multipliers : tuple of ndarray
    info : dict
        ``residual`` (max abs projected gradient), ``iterations`` and
        ``objective`` (values of :func:`mstep_objective` per step).
    """
    if np.any(inp.cell_d < 0):
        raise ValidationError("d must be non-negative")
    keep = inp.cell_d > 0
    cells, logd = inp.cells[keep], np.log(inp.cell_d[keep])
    offsets = np.cumsum([0] + [len(s) for s in inp.group_sizes])
    incidence = np.zeros((len(cells), offsets[-1]))
    rows = np.arange(len(cells))
    for k in range(inp.n_partitions):
        incidence[rows, offsets[k] + cells[:, k]] = 1.0
        if not np.all(incidence[:, offsets[k] : offsets[k + 1]].any(axis=0)):
            raise ValidationError("every group needs at least one cell with positive d")
    basis = linalg.block_diag(*[_null_basis(np.asarray(s)) for s in inp.group_sizes])
    an = incidence @ basis

    def split(theta):
        return tuple(np.exp(theta[offsets[k] : offsets[k + 1]]) for k in range(inp.n_partitions))

    z = np.zeros(basis.shape[1])
    f = logsumexp(an @ z + logd)
    objective = [mstep_objective(split(basis @ z), inp)]
    residual = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        pi = softmax(an @ z + logd)
        grad = an.T @ pi
        residual = float(np.max(np.abs(grad), initial=0.0))
        if residual < tol:
            break
        weighted = an * pi[:, None]
        hess = an.T @ weighted - np.outer(grad, grad)
        hess[np.diag_indices_from(hess)] += 1e-12
        step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        slope = float(grad @ step)
        if slope >= 0:
            step, slope = -grad, -float(grad @ grad)
        t = 1.0
        while True:
            f_new = logsumexp(an @ (z + t * step) + logd)
            if f_new <= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if f_new > f:
            break
        z = z + t * step
        f = f_new
        objective.append(mstep_objective(split(basis @ z), inp))
    else:
        pi = softmax(an @ z + logd)
        residual = float(np.max(np.abs(an.T @ pi), initial=0.0))
    if residual > 1e-6:
        raise NumericalError(f"M-step solver did not converge: KKT residual {residual:.3e} after {it} iterations")
    theta = basis @ z
    # re-centre each partition so the calibration holds to round-off
    out = tuple(calibrate(m, s) for m, s in zip(split(theta), inp.group_sizes))
    return out, {"residual": residual, "iterations": it, "objective": objective}


def solve_single_partition(inp: MStepInput, method: str = "closed") -> np.ndarray:
    """M-step for one partition; ``method`` is ``"closed"`` or ``"numeric"``."""
    if np.any(inp.d <= 0):
        raise ValidationError("all d_g must be positive")
    if method == "closed":
        return closed_form_single(inp)
    return solve_numeric(inp)[0][0]


def solve_multi_partition(inp: MStepInput, partitions: PartitionSet | None = None) -> tuple[np.ndarray, ...]:
    if partitions is not None and len(partitions) != inp.n_partitions:
        raise ValidationError("partition count mismatch")
    return solve_numeric(inp)[0]


def isotonic_adjust(multipliers, group_sizes, ordering) -> np.ndarray:
    """Project log-multipliers onto non-decreasing sequences along ``ordering``
    (size-weighted), then re-calibrate."""
    m = np.asarray(multipliers, dtype=float)
    sizes = np.asarray(group_sizes, dtype=float)
    order = np.asarray(ordering, dtype=np.intp)
    if np.all(np.diff(m[order]) >= 0):
        return m.copy()
    fitted = isotonic_regression(np.log(m[order]), weights=sizes[order], increasing=True).x
    logm = np.empty_like(m)
    logm[order] = fitted
    return calibrate(np.exp(logm), sizes)


def clamp_multipliers(m, sizes, bounds=CLAMP) -> tuple[np.ndarray, bool]:
    lo, hi = bounds
    clipped = np.clip(m, lo, hi)
    hit = bool(np.any(clipped != m))
    if hit:
        clipped = calibrate(clipped, sizes)
    return clipped, hit


@dataclass
class EMTrace:
    multipliers: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    change: list = field(default_factory=list)

    def append(self, multipliers, objective, inner, change):
        self.multipliers.append(tuple(np.array(m) for m in multipliers))
        self.objective.append(float(objective))
        self.inner_iterations.append(int(inner))
        self.change.append(float(change))

    def __len__(self):
        return len(self.objective)


@dataclass(frozen=True)
class FitResult:
    config: PenaltyConfig
    state: VariationalState
    trace: EMTrace
    converged: bool
    outer_iterations: int
    vb_converged: bool
    coefficients: object = None
    selected: object = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def multipliers(self) -> tuple[np.ndarray, ...]:
        return self.config.multipliers


def mstep(inp: MStepInput, partitions: PartitionSet, solver: str = "auto") -> tuple[np.ndarray, ...]:
    """M-step plus the optional per-partition isotonic projection and clamp."""
    if solver == "auto":
        solver = "closed" if inp.n_partitions == 1 else "numeric"
    if solver == "closed" and inp.n_partitions == 1:
        new = (closed_form_single(inp),)
    else:
        new = solve_numeric(inp)[0]
    out = []
    for m, part in zip(new, partitions):
        sizes = part.sizes.astype(float)
        if part.monotone:
            m = isotonic_adjust(m, sizes, part.ordering)
        m, hit = clamp_multipliers(m, sizes)
        if hit:
            warnings.warn(
                f"partition {part.name!r}: multipliers clamped to {CLAMP}", ClampWarning, stacklevel=3
            )
        out.append(m)
    return tuple(out)


def run_em(
    dataset: Dataset,
    partitions: PartitionSet,
    config: PenaltyConfig,
    *,
    tol_outer: float = 1e-4,
    max_outer: int = 100,
    vb_tol: float = 1e-6,
    vb_max_iter: int = 500,
    init_multipliers=None,
    solver: str = "auto",
    method: str = "auto",
) -> FitResult:
    """Alternate variational fits and M-steps until the multipliers settle.

    ``config.lambda_global`` and ``config.alpha`` stay fixed; only the
    multipliers are estimated.  The variational fit is warm-started from the
    previous outer iteration.
    """
    if init_multipliers is None:
        current = partitions.ones()
    else:
        current = tuple(
            calibrate(np.asarray(m, dtype=float), part.sizes) for m, part in zip(init_multipliers, partitions)
        )
    cfg = config.with_multipliers(current).resolved(partitions)
    trace = EMTrace()
    state = None
    vb_ok = True
    converged = False
    k = 0
    def _vb(cfg, init, k):
        try:
            st = run_vb(dataset, partitions, cfg, init=init, tol=vb_tol, max_iter=vb_max_iter, method=method)
        except NumericalError as exc:
            raise NumericalError(f"outer iteration {k}: {exc}") from exc
        if not st.converged:
            logger.warning("outer iteration %d: variational fit not converged", k)
        return st

    for k in range(1, max_outer + 1):
        state = _vb(cfg, state, k)
        vb_ok = vb_ok and state.converged
        inp = compute_group_weights(state, partitions, cfg)
        new = mstep(inp, partitions, solver)
        change = max(float(np.max(np.abs(n - o) / o)) for n, o in zip(new, cfg.multipliers))
        trace.append(new, mstep_objective(new, inp), state.iteration_count, change)
        logger.info("outer iteration %d: change %.3e", k, change)
        cfg = cfg.with_multipliers(new)
        if change < tol_outer:
            converged = True
            break
    # final variational fit at the final multipliers
    state = _vb(cfg, state, k)
    vb_ok = vb_ok and state.converged
    return FitResult(
        config=cfg,
        state=state,
        trace=trace,
        converged=converged,
        outer_iterations=k,
        vb_converged=vb_ok,
    )
