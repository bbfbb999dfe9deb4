"""Data model shared by the estimators: datasets, partitions, penalties."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class ValidationError(ValueError):
    """Input does not satisfy a documented precondition."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (singular system, divergence, non-finite values)."""


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ScaleInfo:
    """Column centring and scaling applied at standardization.

    ``standardized = (raw - mean) / scale``.
    """

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(self.mean))
        object.__setattr__(self, "scale", _frozen(self.scale))

    @classmethod
    def identity(cls, p: int) -> "ScaleInfo":
        return cls(np.zeros(p), np.ones(p))

    def transform(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        if raw.ndim != 2 or raw.shape[1] != self.mean.shape[0]:
            raise ValidationError(
                f"expected {self.mean.shape[0]} columns, got array of shape {raw.shape}"
            )
        return (raw - self.mean) / self.scale


def standardize(raw_features, names: Sequence[str] | None = None):
    """Centre each column and scale it to unit mean square.

    Uses the divisor ``n`` so that ``mean(x) == 0`` and ``mean(x**2) == 1``.

    Parameters
    ----------
    raw_features : array_like, shape (n, p)
    names : sequence of str, optional
        Column names, used only in error messages.

    Returns
    -------
    features : ndarray, shape (n, p)
    scale_info : ScaleInfo
    """
    x = np.asarray(raw_features, dtype=float)
    if x.ndim != 2:
        raise ValidationError("features must be a 2-d array")
    mean = x.mean(axis=0)
    centred = x - mean
    rms = np.sqrt(np.mean(centred**2, axis=0))
    # relative threshold: treat round-off variation around a constant as constant
    tiny = rms <= 1e-12 * np.maximum(1.0, np.abs(mean))
    if np.any(tiny):
        j = int(np.flatnonzero(tiny)[0])
        label = names[j] if names is not None else f"column {j}"
        raise ValidationError(f"constant column: {label}")
    return centred / rms, ScaleInfo(mean, rms)


def reparametrize(alpha: float, lambda_global: float) -> tuple[float, float]:
    """Map ``(alpha, lambda)`` to the ``(lambda1, lambda2)`` penalty pair."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    if not lambda_global > 0.0:
        raise ValidationError(f"lambda must be positive, got {lambda_global}")
    return alpha * lambda_global, (1.0 - alpha) * lambda_global / 2.0


def unreparametrize(lambda1: float, lambda2: float) -> tuple[float, float]:
    """Inverse of :func:`reparametrize`."""
    if lambda1 <= 0 or lambda2 <= 0:
        raise ValidationError("lambda1 and lambda2 must be positive")
    total = 2.0 * lambda2 + lambda1
    return lambda1 / total, total


@dataclass(frozen=True)
class Dataset:
    """Standardized penalized features, binomial responses, unpenalized block.

    Use :meth:`from_raw` to build one from untransformed inputs.
    """

    features: np.ndarray
    responses: np.ndarray
    trials: np.ndarray
    unpenalized: np.ndarray
    feature_names: tuple[str, ...]
    unpenalized_names: tuple[str, ...] = ()
    scale_info: ScaleInfo | None = None
    unpenalized_scale: ScaleInfo | None = None
    intercept: bool = False

    def __post_init__(self):
        x = _frozen(self.features)
        if x.ndim != 2:
            raise ValidationError("features must be a 2-d array")
        n, p = x.shape
        if n < 2 or p < 1:
            raise ValidationError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        y = _frozen(self.responses)
        m = _frozen(self.trials)
        if y.shape != (n,) or m.shape != (n,):
            raise ValidationError("responses and trials must have length n")
        if np.any(m < 1) or np.any(m != np.round(m)):
            raise ValidationError("trials must be positive integers")
        if np.any(y < 0) or np.any(y > m) or np.any(y != np.round(y)):
            raise ValidationError("responses must be integers in [0, trials]")
        u = np.asarray(self.unpenalized, dtype=float)
        if u.size == 0:
            u = np.zeros((n, 0))
        if u.ndim != 2 or u.shape[0] != n:
            raise ValidationError("unpenalized block must have n rows")
        names = tuple(str(s) for s in self.feature_names)
        if len(names) != p:
            raise ValidationError(f"expected {p} feature names, got {len(names)}")
        if len(set(names)) != p:
            raise ValidationError("feature names must be unique")
        unames = tuple(str(s) for s in self.unpenalized_names)
        if not unames:
            unames = tuple(f"u{k}" for k in range(u.shape[1]))
        if len(unames) != u.shape[1]:
            raise ValidationError("unpenalized_names length mismatch")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "trials", m)
        object.__setattr__(self, "unpenalized", _frozen(u))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "unpenalized_names", unames)
        if self.scale_info is None:
            object.__setattr__(self, "scale_info", ScaleInfo.identity(p))

    @classmethod
    def from_raw(
        cls,
        features,
        responses,
        trials=None,
        covariates=None,
        *,
        intercept: bool = True,
        feature_names: Sequence[str] | None = None,
        covariate_names: Sequence[str] | None = None,
        standardize_covariates: bool = False,
    ) -> "Dataset":
        """Standardize ``features`` and assemble the unpenalized block.

        The intercept column (exactly ones) is placed first when requested,
        followed by ``covariates``, which are left untouched unless
        ``standardize_covariates`` is set.
        """
        x = np.asarray(features, dtype=float)
        n = x.shape[0]
        if feature_names is None:
            feature_names = [f"x{j}" for j in range(x.shape[1])]
        xs, info = standardize(x, feature_names)
        y = np.asarray(responses, dtype=float)
        m = np.ones(n) if trials is None else np.asarray(trials, dtype=float)

        blocks, unames = [], []
        if intercept:
            blocks.append(np.ones((n, 1)))
            unames.append("(intercept)")
        cov_scale = None
        if covariates is not None:
            c = np.asarray(covariates, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            if covariate_names is None:
                covariate_names = [f"z{k}" for k in range(c.shape[1])]
            if c.shape[1] and standardize_covariates:
                c, cov_scale = standardize(c, covariate_names)
            elif c.shape[1]:
                cov_scale = ScaleInfo.identity(c.shape[1])
            blocks.append(c)
            unames.extend(covariate_names)
        unpen = np.hstack(blocks) if blocks else np.zeros((n, 0))
        return cls(
            features=xs,
            responses=y,
            trials=m,
            unpenalized=unpen,
            feature_names=tuple(feature_names),
            unpenalized_names=tuple(unames),
            scale_info=info,
            unpenalized_scale=cov_scale,
            intercept=intercept,
        )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def u(self) -> int:
        return self.unpenalized.shape[1]

    @property
    def design(self) -> np.ndarray:
        """Full design ``[X_u, X_r]``, unpenalized block first."""
        return np.hstack([self.unpenalized, self.features])

    def subset(self, rows) -> "Dataset":
        """Row subset; keeps the current (already standardized) columns."""
        rows = np.asarray(rows)
        return Dataset(
            features=self.features[rows],
            responses=self.responses[rows],
            trials=self.trials[rows],
            unpenalized=self.unpenalized[rows],
            feature_names=self.feature_names,
            unpenalized_names=self.unpenalized_names,
            scale_info=self.scale_info,
            unpenalized_scale=self.unpenalized_scale,
            intercept=self.intercept,
        )

    def restandardized(self) -> tuple["Dataset", ScaleInfo]:
        """Re-standardize the penalized columns of this (sub)sample.

        Returns the new dataset and the affine map taking this dataset's
        columns to the new ones, for transforming held-out rows.
        """
        xs, info = standardize(self.features, self.feature_names)
        ds = Dataset(
            features=xs,
            responses=self.responses,
            trials=self.trials,
            unpenalized=self.unpenalized,
            feature_names=self.feature_names,
            unpenalized_names=self.unpenalized_names,
            scale_info=ScaleInfo(
                self.scale_info.mean + self.scale_info.scale * info.mean,
                self.scale_info.scale * info.scale,
            ),
            unpenalized_scale=self.unpenalized_scale,
            intercept=self.intercept,
        )
        return ds, info


@dataclass(frozen=True)
class Partition:
    """One disjoint, exhaustive grouping of the penalized features.

    ``assignment[j]`` is the 0-based group index of feature ``j``.  When
    ``monotone`` is true, multipliers must be non-decreasing along
    ``ordering`` (a permutation of group indices).
    """

    name: str
    assignment: np.ndarray
    group_labels: tuple[str, ...]
    monotone: bool = False
    ordering: tuple[int, ...] | None = None

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1 or not np.issubdtype(a.dtype, np.integer):
            raise ValidationError(f"partition {self.name!r}: assignment must be integer indices")
        labels = tuple(str(s) for s in self.group_labels)
        G = len(labels)
        if G < 1:
            raise ValidationError(f"partition {self.name!r}: no groups")
        if a.min() < 0 or a.max() >= G:
            raise ValidationError(f"partition {self.name!r}: group index out of range")
        counts = np.bincount(a, minlength=G)
        if np.any(counts == 0):
            g = int(np.flatnonzero(counts == 0)[0])
            raise ValidationError(f"partition {self.name!r}: group {labels[g]!r} is empty")
        ordering = self.ordering
        if self.monotone:
            if ordering is None:
                ordering = tuple(range(G))
            ordering = tuple(int(g) for g in ordering)
            if sorted(ordering) != list(range(G)):
                raise ValidationError(f"partition {self.name!r}: ordering is not a permutation")
        object.__setattr__(self, "assignment", _frozen(a, dtype=np.intp))
        object.__setattr__(self, "group_labels", labels)
        object.__setattr__(self, "ordering", ordering)

    @classmethod
    def from_labels(
        cls,
        name: str,
        labels: Sequence,
        *,
        monotone_order: Sequence | None = None,
    ) -> "Partition":
        """Build from one label per feature; group order is first appearance
        unless ``monotone_order`` lists every label."""
        labels = [str(s) for s in labels]
        if monotone_order is not None:
            uniq = [str(s) for s in monotone_order]
            if set(uniq) != set(labels):
                raise ValidationError(
                    f"partition {name!r}: monotone order must list every group label exactly"
                )
        else:
            uniq = list(dict.fromkeys(labels))
        index = {g: k for k, g in enumerate(uniq)}
        return cls(
            name=name,
            assignment=np.array([index[s] for s in labels], dtype=np.intp),
            group_labels=tuple(uniq),
            monotone=monotone_order is not None,
            ordering=tuple(range(len(uniq))) if monotone_order is not None else None,
        )

    @property
    def n_groups(self) -> int:
        return len(self.group_labels)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_groups)


@dataclass(frozen=True)
class PartitionSet:
    partitions: tuple[Partition, ...]

    def __post_init__(self):
        parts = tuple(self.partitions)
        if not parts:
            raise ValidationError("at least one partition is required")
        p = parts[0].assignment.shape[0]
        for part in parts:
            if part.assignment.shape[0] != p:
                raise ValidationError(
                    f"partition {part.name!r} covers {part.assignment.shape[0]} features, expected {p}"
                )
        object.__setattr__(self, "partitions", parts)

    @classmethod
    def single(cls, p: int) -> "PartitionSet":
        """One partition with a single group (no differential penalization)."""
        return cls((Partition("all", np.zeros(p, dtype=np.intp), ("all",)),))

    def __len__(self):
        return len(self.partitions)

    def __iter__(self):
        return iter(self.partitions)

    def __getitem__(self, k):
        return self.partitions[k]

    @property
    def p(self) -> int:
        return self.partitions[0].assignment.shape[0]

    def group_counts(self) -> tuple[int, ...]:
        return tuple(part.n_groups for part in self.partitions)

    def ones(self) -> tuple[np.ndarray, ...]:
        return tuple(np.ones(G) for G in self.group_counts())


@dataclass(frozen=True)
class PenaltyConfig:
    """Global ``(alpha, lambda)`` penalty plus per-partition group multipliers."""

    alpha: float
    lambda_global: float
    multipliers: tuple[np.ndarray, ...] = field(default_factory=tuple)

    def __post_init__(self):
        reparametrize(self.alpha, self.lambda_global)
        mults = tuple(_frozen(m) for m in self.multipliers)
        for m in mults:
            if m.ndim != 1 or np.any(~np.isfinite(m)) or np.any(m <= 0):
                raise ValidationError("multipliers must be finite and positive")
        object.__setattr__(self, "multipliers", mults)

    @property
    def lambda1(self) -> float:
        return reparametrize(self.alpha, self.lambda_global)[0]

    @property
    def lambda2(self) -> float:
        return reparametrize(self.alpha, self.lambda_global)[1]

    def with_multipliers(self, multipliers) -> "PenaltyConfig":
        return PenaltyConfig(self.alpha, self.lambda_global, tuple(multipliers))

    def with_lambda(self, lambda_global: float) -> "PenaltyConfig":
        return PenaltyConfig(self.alpha, lambda_global, self.multipliers)

    def resolved(self, partitions: PartitionSet) -> "PenaltyConfig":
        """Fill in unit multipliers if none were given and check shapes."""
        if not self.multipliers:
            return self.with_multipliers(partitions.ones())
        if len(self.multipliers) != len(partitions):
            raise ValidationError(
                f"{len(self.multipliers)} multiplier vectors for {len(partitions)} partitions"
            )
        for m, part in zip(self.multipliers, partitions):
            if m.shape[0] != part.n_groups:
                raise ValidationError(
                    f"partition {part.name!r}: {m.shape[0]} multipliers for {part.n_groups} groups"
                )
        return self


def expand_multipliers(partitions: PartitionSet, config: PenaltyConfig) -> np.ndarray:
    """Per-feature penalty multiplier: product over partitions of the
    multiplier of the group containing each feature."""
    config = config.resolved(partitions)
    out = np.ones(partitions.p)
    for m, part in zip(config.multipliers, partitions):
        out = out * m[part.assignment]
    return out


def log_constraint(multipliers: np.ndarray, sizes: np.ndarray) -> float:
    """Size-weighted sum of log multipliers; zero when calibrated."""
    return float(np.dot(sizes, np.log(multipliers)))


def calibrate(multipliers, sizes) -> np.ndarray:
    """Rescale so the size-weighted geometric mean is one."""
    logm = np.log(np.asarray(multipliers, dtype=float))
    sizes = np.asarray(sizes, dtype=float)
    return np.exp(logm - np.dot(sizes, logm) / sizes.sum())


@dataclass(frozen=True)
class Coefficients:
    """Fitted coefficients on the standardized scale, with the transforms
    needed to predict from raw inputs."""

    unpenalized_part: np.ndarray
    penalized_part: np.ndarray
    scale_info: ScaleInfo
    unpenalized_scale: ScaleInfo | None = None
    intercept: bool = False
    diagnostics: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "unpenalized_part", _frozen(self.unpenalized_part))
        object.__setattr__(self, "penalized_part", _frozen(self.penalized_part))
        if self.scale_info.mean.shape[0] != self.penalized_part.shape[0]:
            raise ValidationError("scale_info does not match the penalized coefficients")

    @property
    def p(self) -> int:
        return self.penalized_part.shape[0]

    @property
    def active(self) -> np.ndarray:
        return self.penalized_part != 0

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.penalized_part))

    def raw_penalized(self) -> np.ndarray:
        """Penalized coefficients on the raw feature scale."""
        return self.penalized_part / self.scale_info.scale

    def unpenalized_design(self, n: int, covariates=None) -> np.ndarray:
        blocks = []
        if self.intercept:
            blocks.append(np.ones((n, 1)))
        k = self.unpenalized_part.shape[0] - int(self.intercept)
        if k:
            if covariates is None:
                raise ValidationError(f"model needs {k} unpenalized covariate columns")
            c = np.asarray(covariates, dtype=float).reshape(n, -1)
            if c.shape[1] != k:
                raise ValidationError(f"expected {k} covariate columns, got {c.shape[1]}")
            if self.unpenalized_scale is not None:
                c = self.unpenalized_scale.transform(c)
            blocks.append(c)
        return np.hstack(blocks) if blocks else np.zeros((n, 0))

    def linear_predictor(self, features, covariates=None, *, standardized: bool = False):
        x = np.asarray(features, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.p:
            raise ValidationError(f"expected {self.p} feature columns, got shape {x.shape}")
        if not standardized:
            x = self.scale_info.transform(x)
        xu = self.unpenalized_design(x.shape[0], covariates)
        return xu @ self.unpenalized_part + x @ self.penalized_part
