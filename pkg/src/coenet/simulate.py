"""Synthetic data: block-correlated features, elastic-net-prior coefficients."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, gammaincc, gammainccinv

from .model import (
    Dataset,
    NumericalError,
    Partition,
    PartitionSet,
    PenaltyConfig,
    ValidationError,
    reparametrize,
)

logger = logging.getLogger(__name__)

_STREAMS = {
    "features": 0,
    "betas": 1,
    "outcomes": 2,
    "test_features": 3,
    "test_outcomes": 4,
    "assignment": 5,
}


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named purpose under one seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(*extra, _STREAMS[name])))


def sample_truncated_gamma(scale: float, size=None, rng=None, shape: float = 0.5):
    """Draws from ``Gamma(shape, scale)`` restricted to ``(1, inf)``.

    Inverse-CDF on the upper tail: ``x = scale * Q^{-1}(shape, v)`` with ``v``
    uniform on ``(0, Q(shape, 1 / scale)]``, which stays accurate when the
    truncation point is far in the tail.
    """
    if not scale > 0:
        raise ValidationError("scale must be positive")
    rng = np.random.default_rng(rng)
    tail = gammaincc(shape, 1.0 / scale)
    if tail <= 0:
        raise NumericalError(f"truncated gamma tail underflows at scale={scale}")
    v = tail * (1.0 - rng.random(size))
    x = scale * gammainccinv(shape, v)
    return np.maximum(x, np.nextafter(1.0, 2.0))


def sample_en_prior_betas(count: int, alpha: float, lambda_global: float, multiplier: float = 1.0, rng=None):
    """Elastic-net prior draws via the truncated-gamma scale mixture.

    ``tau ~ TG(1/2, 8 lambda2 / lambda1^2, (1, inf))`` and
    ``beta | tau ~ N(0, (tau - 1) / (tau multiplier lambda2))``.
    """
    if count < 1:
        raise ValidationError("count must be positive")
    if not multiplier > 0:
        raise ValidationError("multiplier must be positive")
    rng = np.random.default_rng(rng)
    lambda1, lambda2 = reparametrize(alpha, lambda_global)
    tau = sample_truncated_gamma(8.0 * lambda2 / lambda1**2, count, rng)
    var = (tau - 1.0) / (tau * multiplier * lambda2)
    return rng.normal(size=count) * np.sqrt(var)


def block_covariance(block_size: int, rho: float, sigma2: float = 1.0) -> np.ndarray:
    cov = np.full((block_size, block_size), rho)
    np.fill_diagonal(cov, sigma2)
    if np.linalg.eigvalsh(cov)[0] <= 0:
        raise ValidationError(f"block covariance not positive definite (rho={rho}, sigma2={sigma2})")
    return cov


@dataclass(frozen=True)
class SimScenario:
    """A synthetic design.  Defaults reproduce the four-group benchmark."""

    n: int = 100
    n_test: int = 1000
    p: int = 1000
    block_size: int = 25
    rho: float = 0.7
    sigma2: float = 1.0
    group_sizes: tuple[int, ...] = (250, 250, 250, 250)
    true_multipliers: tuple[float, ...] = (0.14, 0.51, 1.95, 7.39)
    zero_fraction: tuple[float, ...] = (0.5, 0.5, 0.5, 0.5)
    alpha: float = 0.5
    lambda_global: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.n_test < 2 or self.p < 1:
            raise ValidationError("need n >= 2, n_test >= 2, p >= 1")
        if self.block_size < 1 or self.p % self.block_size:
            raise ValidationError(f"p={self.p} is not divisible by block_size={self.block_size}")
        if not 0 <= self.rho < 1:
            raise ValidationError("rho must lie in [0, 1)")
        if not self.sigma2 > 0:
            raise ValidationError("sigma2 must be positive")
        sizes = tuple(int(s) for s in self.group_sizes)
        if sum(sizes) != self.p or min(sizes) < 1:
            raise ValidationError(f"group sizes {sizes} must be positive and sum to p={self.p}")
        if len(self.true_multipliers) != len(sizes) or len(self.zero_fraction) != len(sizes):
            raise ValidationError("one multiplier and one zero fraction per group")
        if any(not 0 <= z <= 1 for z in self.zero_fraction):
            raise ValidationError("zero fractions must lie in [0, 1]")
        object.__setattr__(self, "group_sizes", sizes)
        object.__setattr__(self, "true_multipliers", tuple(float(m) for m in self.true_multipliers))
        object.__setattr__(self, "zero_fraction", tuple(float(z) for z in self.zero_fraction))
        block_covariance(self.block_size, self.rho, self.sigma2)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def four_group_default(cls, **kw) -> "SimScenario":
        return cls(**kw)

    @classmethod
    def random_groups_default(cls, **kw) -> "SimScenario":
        """Dimensions of the 88-sample, 2114-feature robustness check with a
        single signal group (no informative structure)."""
        base = dict(
            n=88,
            n_test=100,
            p=2114,
            block_size=14,
            rho=0.5,
            group_sizes=(2114,),
            true_multipliers=(1.0,),
            zero_fraction=(0.5,),
        )
        base.update(kw)
        if "group_sizes" not in kw:
            base["group_sizes"] = (base["p"],)
        return cls(**base)


@dataclass(frozen=True)
class SimulatedData:
    train: Dataset
    test: Dataset
    beta: np.ndarray
    groups: np.ndarray
    scenario: SimScenario
    raw_train: np.ndarray = field(repr=False)
    raw_test: np.ndarray = field(repr=False)

    @property
    def partitions(self) -> PartitionSet:
        """The informative partition, groups labelled by true multiplier."""
        labels = [f"m={m:g}" for m in self.scenario.true_multipliers]
        return PartitionSet((Partition("truth", self.groups, tuple(labels)),))


def _features(rng, n, scenario):
    chol = np.linalg.cholesky(block_covariance(scenario.block_size, scenario.rho, scenario.sigma2))
    z = rng.standard_normal((n, scenario.p // scenario.block_size, scenario.block_size))
    return (z @ chol.T).reshape(n, scenario.p)


def true_coefficients(scenario: SimScenario, rng) -> tuple[np.ndarray, np.ndarray]:
    """Per-group prior draws with the smallest ``ceil(zero_fraction * size)``
    magnitudes zeroed (ties broken by index)."""
    beta = np.empty(scenario.p)
    groups = np.empty(scenario.p, dtype=np.intp)
    start = 0
    for g, (size, mult, zf) in enumerate(
        zip(scenario.group_sizes, scenario.true_multipliers, scenario.zero_fraction)
    ):
        b = sample_en_prior_betas(size, scenario.alpha, scenario.lambda_global, mult, rng)
        n_zero = math.ceil(zf * size - 1e-12)
        order = np.argsort(np.abs(b), kind="stable")
        b[order[:n_zero]] = 0.0
        beta[start : start + size] = b
        groups[start : start + size] = g
        start += size
    return beta, groups


def simulate_scenario(scenario: SimScenario, repeat: int = 0) -> SimulatedData:
    """Draw train and test sets sharing one coefficient vector.

    Each source of randomness (features, coefficients, outcomes) has its own
    substream keyed by ``(repeat, purpose)`` under ``scenario.seed``.
    """
    seed = scenario.seed
    beta, groups = true_coefficients(scenario, substream(seed, "betas", repeat))
    x_train = _features(substream(seed, "features", repeat), scenario.n, scenario)
    x_test = _features(substream(seed, "test_features", repeat), scenario.n_test, scenario)
    y_train = (substream(seed, "outcomes", repeat).random(scenario.n) < expit(x_train @ beta)).astype(float)
    y_test = (substream(seed, "test_outcomes", repeat).random(scenario.n_test) < expit(x_test @ beta)).astype(float)
    names = [f"x{j + 1}" for j in range(scenario.p)]
    train = Dataset.from_raw(x_train, y_train, feature_names=names)
    test = Dataset(
        features=train.scale_info.transform(x_test),
        responses=y_test,
        trials=np.ones(scenario.n_test),
        unpenalized=np.ones((scenario.n_test, 1)),
        feature_names=tuple(names),
        unpenalized_names=train.unpenalized_names,
        scale_info=train.scale_info,
        intercept=True,
    )
    return SimulatedData(train, test, beta, groups, scenario, x_train, x_test)


def random_partition(p: int, group_sizes, rng) -> Partition:
    sizes = [int(s) for s in group_sizes]
    if sum(sizes) != p:
        raise ValidationError(f"group sizes {sizes} do not sum to p={p}")
    perm = rng.permutation(p)
    assignment = np.empty(p, dtype=np.intp)
    start = 0
    for g, s in enumerate(sizes):
        assignment[perm[start : start + s]] = g
        start += s
    return Partition("random", assignment, tuple(f"g{g + 1}" for g in range(len(sizes))))


@dataclass(frozen=True)
class RandomGroupResult:
    estimates: np.ndarray
    lambda_global: float
    errors: tuple[str, ...]

    @property
    def medians(self) -> np.ndarray:
        return np.nanmedian(self.estimates, axis=0)


def random_group_experiment(
    dataset: Dataset,
    group_sizes,
    repeats: int,
    seed: int = 0,
    *,
    alpha: float = 0.5,
    lambda_global: float | None = None,
    folds: int = 10,
    em_kw: dict | None = None,
) -> RandomGroupResult:
    """Multiplier estimates under uninformative random partitions.

    The global lambda is cross-validated once with unit multipliers (it does
    not depend on the partition) unless given.  A failed repeat leaves a row
    of NaN and its message in ``errors``.
    """
    from .eb import run_em
    from .enet import EnetProblem, cv_global_lambda

    if repeats < 1:
        raise ValidationError("repeats must be positive")
    if lambda_global is None:
        cv = cv_global_lambda(EnetProblem.plain(dataset, alpha), folds=folds, seed=seed)
        lambda_global = cv.best_lambda
    G = len(group_sizes)
    estimates = np.full((repeats, G), np.nan)
    errors = []
    for r in range(repeats):
        part = random_partition(dataset.p, group_sizes, substream(seed, "assignment", r))
        parts = PartitionSet((part,))
        try:
            fit = run_em(dataset, parts, PenaltyConfig(alpha, lambda_global), **(em_kw or {}))
        except (NumericalError, ValidationError) as exc:
            logger.warning("random-group repeat %d failed: %s", r, exc)
            errors.append(f"repeat {r}: {exc}")
            continue
        estimates[r] = fit.multipliers[0]
    return RandomGroupResult(estimates, float(lambda_global), tuple(errors))
