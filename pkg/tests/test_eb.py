import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coenet import NumericalError, Partition, PartitionSet, PenaltyConfig, ValidationError
from coenet.eb import (
    ClampWarning,
    MStepInput,
    clamp_multipliers,
    closed_form_single,
    compute_group_weights,
    feature_penalty_terms,
    isotonic_adjust,
    mstep,
    mstep_objective,
    run_em,
    solve_multi_partition,
    solve_numeric,
    solve_single_partition,
)
from coenet.model import log_constraint
from coenet.vb import run_vb

from conftest import groups_partition, make_dataset


def random_single(seed, G=None):
    rng = np.random.default_rng(seed)
    G = G or int(rng.integers(2, 7))
    sizes = rng.integers(1, 60, G).astype(float)
    d = sizes * np.exp(rng.normal(0, 1.5, G))
    return MStepInput.single(d, sizes, 0.5, float(rng.uniform(0.1, 50)))


class TestGroupWeights:
    def test_scalar_formula(self):
        term = feature_penalty_terms(np.array([0.75]), np.array([2.0]), 0.5, 1.0)[0]
        assert term == pytest.approx(0.816291, abs=5e-7)
        assert term == pytest.approx(0.75 * (1 + 0.5 * np.sqrt(0.5 / 16)), rel=1e-15)

    def test_alpha_zero_collapse(self):
        e = np.array([0.3, 1.2])
        np.testing.assert_allclose(feature_penalty_terms(e, np.array([1.0, 5.0]), 1e-12, 3.0), e, rtol=1e-10)

    def test_non_finite_chi(self):
        with pytest.raises(NumericalError):
            feature_penalty_terms(np.ones(2), np.array([1.0, np.inf]), 0.5, 1.0)

    def test_sums_per_group_and_empty_cell(self):
        ds = make_dataset(n=30, p=6)
        parts = PartitionSet(
            (
                Partition.from_labels("a", ["x", "x", "x", "y", "y", "y"]),
                Partition.from_labels("b", ["s", "s", "s", "t", "t", "t"]),
            )
        )
        cfg = PenaltyConfig(0.5, 2.0).resolved(parts)
        state = run_vb(ds, parts, cfg)
        inp = compute_group_weights(state, parts, cfg)
        terms = feature_penalty_terms(state.second_moment, state.chi, 0.5, 2.0)
        table = inp.d_table()
        np.testing.assert_allclose(table, [[terms[:3].sum(), 0.0], [0.0, terms[3:].sum()]], rtol=1e-14)
        assert table[0, 1] == 0.0 and table[1, 0] == 0.0
        np.testing.assert_allclose(inp.cell_sizes, [3, 3])


class TestSinglePartition:
    def test_symmetry(self):
        np.testing.assert_allclose(solve_single_partition(MStepInput.single([2, 2, 2], [5, 5, 5])), 1.0)

    @pytest.mark.parametrize("method", ["closed", "numeric"])
    def test_examples(self, method):
        np.testing.assert_allclose(
            solve_single_partition(MStepInput.single([1, 4], [10, 10]), method), [2.0, 0.5], rtol=1e-9
        )
        np.testing.assert_allclose(
            solve_single_partition(MStepInput.single([3, 1], [30, 10]), method), [1.0, 1.0], rtol=1e-9
        )

    def test_nonpositive_d(self):
        with pytest.raises(ValidationError):
            solve_single_partition(MStepInput.single([1.0, 0.0], [3, 3]))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 100_000))
    def test_numeric_matches_closed_form(self, seed):
        inp = random_single(seed)
        closed = closed_form_single(inp)
        numeric = solve_single_partition(inp, "numeric")
        np.testing.assert_allclose(numeric, closed, rtol=1e-6)
        assert abs(log_constraint(numeric, inp.group_sizes[0])) < 1e-8
        assert abs(log_constraint(closed, inp.group_sizes[0])) < 1e-8

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 100_000), st.floats(1e-6, 1e6))
    def test_scale_equivariance(self, seed, factor):
        inp = random_single(seed)
        scaled = MStepInput.single(inp.d * factor, inp.group_sizes[0], inp.alpha, inp.lambda_global)
        for method in ("closed", "numeric"):
            np.testing.assert_allclose(
                solve_single_partition(scaled, method), solve_single_partition(inp, method), rtol=1e-8
            )

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 100_000))
    def test_objective_ascent(self, seed):
        inp = random_single(seed)
        rng = np.random.default_rng(seed + 1)
        old = np.exp(rng.normal(size=len(inp.d)))
        old = old / np.exp(np.dot(inp.group_sizes[0], np.log(old)) / inp.group_sizes[0].sum())
        new, info = solve_numeric(inp)
        assert mstep_objective(new, inp) >= mstep_objective((old,), inp) - 1e-12
        obj = np.array(info["objective"])
        assert np.all(np.diff(obj) >= -1e-9 * np.maximum(1.0, np.abs(obj[:-1])))
        assert info["residual"] < 1e-6

    def test_solver_failure_reports_residual(self):
        inp = MStepInput.single([1.0, 1e6, 3.0], [1, 50, 7])
        with pytest.raises(NumericalError, match="residual"):
            solve_numeric(inp, max_iter=1)


class TestMultiPartition:
    def sizes(self, n1, n2, counts):
        return np.asarray(counts, dtype=float).reshape(n1, n2)

    def test_degenerate_second_partition(self):
        d = np.array([[1.0], [4.0], [2.0]])
        counts = np.array([[10.0], [10.0], [5.0]])
        m1, m2 = solve_multi_partition(MStepInput.from_table(d, counts))
        np.testing.assert_allclose(m2, [1.0], atol=1e-12)
        single = closed_form_single(MStepInput.single(d[:, 0], counts[:, 0]))
        np.testing.assert_allclose(m1, single, rtol=1e-8)

    def test_symmetric(self):
        m1, m2 = solve_multi_partition(MStepInput.from_table(np.full((2, 3), 2.0), np.full((2, 3), 4.0)))
        np.testing.assert_allclose(m1, 1.0, atol=1e-9)
        np.testing.assert_allclose(m2, 1.0, atol=1e-9)

    def test_separable_example(self):
        m1, m2 = solve_multi_partition(MStepInput.from_table([[1, 1], [4, 4]], np.full((2, 2), 5.0)))
        np.testing.assert_allclose(m1, [2.0, 0.5], rtol=1e-8)
        np.testing.assert_allclose(m2, [1.0, 1.0], rtol=1e-8)

    def test_grid_search_oracle(self):
        # brute force over the constraint manifold of a 2 x 2 problem with uneven cells
        d = np.array([[1.0, 3.0], [2.0, 0.5]])
        counts = np.array([[4.0, 6.0], [3.0, 7.0]])
        inp = MStepInput.from_table(d, counts)
        m1, m2 = solve_multi_partition(inp)
        s1, s2 = counts.sum(1), counts.sum(0)
        grid = np.linspace(-3, 3, 1201)
        a, b = np.meshgrid(grid, grid, indexing="ij")
        # per-partition calibration fixes the second log-multiplier of each pair
        a2, b2 = -s1[0] * a / s1[1], -s2[0] * b / s2[1]
        prod = np.stack([[np.exp(a + b), np.exp(a + b2)], [np.exp(a2 + b), np.exp(a2 + b2)]])
        obj = -np.einsum("ij,ijkl->kl", d, prod)
        k, l = np.unravel_index(np.argmax(obj), obj.shape)
        assert abs(np.log(m1[0]) - grid[k]) < 0.02 and abs(np.log(m2[0]) - grid[l]) < 0.02

    def test_constraints(self):
        rng = np.random.default_rng(4)
        counts = rng.integers(1, 20, (3, 4)).astype(float)
        inp = MStepInput.from_table(rng.uniform(0.1, 5, (3, 4)) * counts, counts)
        m1, m2 = solve_multi_partition(inp)
        assert abs(log_constraint(m1, counts.sum(1))) < 1e-8
        assert abs(log_constraint(m2, counts.sum(0))) < 1e-8

    def test_partition_count_mismatch(self):
        inp = MStepInput.from_table(np.ones((2, 2)), np.ones((2, 2)))
        with pytest.raises(ValidationError):
            solve_multi_partition(inp, PartitionSet.single(4))


class TestIsotonic:
    def test_examples(self):
        sizes = np.ones(3)
        m = np.array([0.5, 1.0, 2.0])
        out = isotonic_adjust(m, sizes, [0, 1, 2])
        np.testing.assert_array_equal(out, m)
        np.testing.assert_allclose(isotonic_adjust([0.5, 2.0, 1.0], sizes, [0, 1, 2]), [0.5, np.sqrt(2), np.sqrt(2)])
        np.testing.assert_array_equal(isotonic_adjust(np.ones(3), sizes, [0, 1, 2]), 1.0)

    def test_respects_ordering_permutation(self):
        out = isotonic_adjust([2.0, 0.5, 1.0], np.ones(3), [1, 0, 2])
        assert out[1] <= out[0] <= out[2] or np.isclose(out[0], out[2])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 100_000))
    def test_monotone_and_calibrated(self, seed):
        rng = np.random.default_rng(seed)
        G = int(rng.integers(2, 8))
        sizes = rng.integers(1, 40, G).astype(float)
        m = np.exp(rng.normal(size=G))
        m = m / np.exp(np.dot(sizes, np.log(m)) / sizes.sum())
        order = rng.permutation(G)
        out = isotonic_adjust(m, sizes, order)
        assert np.all(np.diff(np.log(out[order])) >= -1e-12)
        assert abs(log_constraint(out, sizes)) < 1e-8


class TestClamp:
    def test_clamp_and_warning(self):
        sizes = np.array([1.0, 1.0])
        out, hit = clamp_multipliers(np.array([1e-6, 1e6]), sizes)
        assert hit and np.all(out >= 1e-4 * (1 - 1e-12)) and np.all(out <= 1e4 * (1 + 1e-12))
        inp = MStepInput.single([1e-9, 1e9], sizes)
        with pytest.warns(ClampWarning):
            out = mstep(inp, groups_partition(2, 2))[0]
        assert abs(log_constraint(out, sizes)) < 1e-8


class TestRunEM:
    def test_single_group_reduces_to_vb(self, small_dataset):
        parts = PartitionSet.single(small_dataset.p)
        cfg = PenaltyConfig(0.5, 2.0)
        fit = run_em(small_dataset, parts, cfg)
        assert fit.converged
        assert all(np.array_equal(m, [1.0]) for trace in fit.trace.multipliers for m in trace)
        plain = run_vb(small_dataset, parts, cfg.resolved(parts))
        np.testing.assert_allclose(fit.state.mu, plain.mu, rtol=1e-6, atol=1e-8)

    def test_trace_and_constraint(self):
        ds = make_dataset(n=50, p=12, seed=3, scale=2.0)
        parts = groups_partition(12, 3)
        fit = run_em(ds, parts, PenaltyConfig(0.5, 1.0), max_outer=50)
        assert len(fit.trace) == fit.outer_iterations
        assert len(fit.trace.inner_iterations) == len(fit.trace.objective)
        for ms in fit.trace.multipliers:
            assert abs(log_constraint(ms[0], parts[0].sizes)) < 1e-8
        assert fit.state.converged

    def test_monotone_partition(self):
        ds = make_dataset(n=50, p=12, seed=5, scale=2.0)
        parts = groups_partition(12, 3, monotone=True)
        fit = run_em(ds, parts, PenaltyConfig(0.5, 1.0), max_outer=30)
        for ms in fit.trace.multipliers:
            assert np.all(np.diff(ms[0]) >= -1e-12)
            assert abs(log_constraint(ms[0], parts[0].sizes)) < 1e-8

    def test_two_partitions(self):
        ds = make_dataset(n=50, p=12, seed=6, scale=2.0)
        labels_a = [f"a{j % 2}" for j in range(12)]
        labels_b = [f"b{j // 4}" for j in range(12)]
        parts = PartitionSet((Partition.from_labels("A", labels_a), Partition.from_labels("B", labels_b)))
        fit = run_em(ds, parts, PenaltyConfig(0.5, 1.0), max_outer=30)
        for m, part in zip(fit.multipliers, parts):
            assert abs(log_constraint(m, part.sizes)) < 1e-8

    def test_init_multipliers_are_calibrated(self, small_dataset):
        parts = groups_partition(small_dataset.p, 2)
        fit = run_em(small_dataset, parts, PenaltyConfig(0.5, 1.0), init_multipliers=[[4.0, 1.0]], max_outer=2)
        assert fit.outer_iterations <= 2

    def test_vb_failure_carries_outer_iteration(self, small_dataset):
        parts = groups_partition(small_dataset.p, 2)

        class Boom(Exception):
            pass

        import coenet.eb as eb

        original = eb.run_vb
        calls = {"n": 0}

        def flaky(*a, **k):
            calls["n"] += 1
            if calls["n"] == 2:
                raise NumericalError("synthetic failure")
            return original(*a, **k)

        eb.run_vb = flaky
        try:
            with pytest.raises(NumericalError, match="outer iteration 2"):
                run_em(small_dataset, parts, PenaltyConfig(0.5, 1.0))
        finally:
            eb.run_vb = original
