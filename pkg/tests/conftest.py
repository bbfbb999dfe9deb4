import numpy as np
import pytest
from scipy.special import expit

from coenet import Dataset, Partition, PartitionSet


def make_dataset(n=40, p=6, seed=0, *, covariates=0, scale=1.0, intercept=True, trials=None):
    """Logistic data with Gaussian features and a fixed sparse truth."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[: min(3, p)] = scale * np.array([1.5, -1.0, 0.5])[: min(3, p)]
    z = rng.standard_normal((n, covariates)) if covariates else None
    eta = x @ beta + (z @ np.full(covariates, 0.3) if covariates else 0.0)
    m = np.ones(n) if trials is None else np.full(n, trials)
    y = rng.binomial(m.astype(int), expit(eta)).astype(float)
    return Dataset.from_raw(x, y, m, z, intercept=intercept)


def groups_partition(p, G, name="groups", monotone=False):
    labels = [f"g{j % G}" for j in range(p)]
    order = [f"g{g}" for g in range(G)] if monotone else None
    return PartitionSet((Partition.from_labels(name, labels, monotone_order=order),))


@pytest.fixture
def small_dataset():
    return make_dataset()


KKT_LIMIT = 1e-6
KKT_RECORD = []


@pytest.fixture(autouse=True)
def _certify_every_enet_fit(monkeypatch):
    """Every elastic-net fit made anywhere in the suite must certify its KKT
    conditions; the largest residual seen is kept for reporting."""
    import coenet.enet as enet
    import coenet.pipeline as pipeline

    original = enet.fit_weighted_enet

    def certified(*args, **kwargs):
        coef = original(*args, **kwargs)
        kkt = float(coef.diagnostics["kkt"])
        KKT_RECORD.append(kkt)
        assert kkt < KKT_LIMIT, f"KKT residual {kkt:.3e} at lambda={coef.diagnostics['lambda']:.4g}"
        return coef

    monkeypatch.setattr(enet, "fit_weighted_enet", certified)
    monkeypatch.setattr(pipeline, "fit_weighted_enet", certified)
    yield


# criterion number -> (passed, one-line detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    if 7 in ACCEPTANCE and KKT_RECORD:
        ok, detail = ACCEPTANCE[7]
        worst = max(KKT_RECORD)
        ACCEPTANCE[7] = (
            ok and worst < KKT_LIMIT,
            f"{detail}; suite-wide max KKT residual {worst:.2e} over {len(KKT_RECORD)} fits",
        )
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
