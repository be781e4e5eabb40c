import csv
import math

import numpy as np
import pytest
from scipy import linalg

from consmooth.bayes import (
    NodePosterior,
    draw_attempts,
    log_posterior_batch,
    log_posterior_unnorm,
    map_equals_qp,
    node_posterior,
    rejection_sample,
)
from consmooth.constraints import ConstraintSet, LinearInequalities, LowerBound, UpperBound, is_feasible
from consmooth.errors import LowAcceptanceError
from consmooth.kernel import Kernel
from consmooth.mesh import Mesh
from consmooth.solver import (
    DataSet,
    build_problem,
    objective_jn,
    solve_closed_form,
    solve_constrained,
    solve_unconstrained,
)

from instances import hand_problem, random_qp


def orthant_fixture():
    """Zero data, so the node posterior has mean 0; one row c_0 >= 0."""
    k = Kernel("matern32", 0.3)
    mesh = Mesh.from_sites([0.5], 1)
    data = DataSet([0.5], [0.0], 0.1)
    li = LinearInequalities(np.eye(mesh.n + 1)[:1], np.zeros(1))
    return node_posterior(k, mesh, data), li


def active_fixture():
    """A lower bound of 0 against data pulling below it at two sites."""
    k = Kernel("matern32", 0.3)
    data = DataSet([0.25, 0.75], [-0.4, 0.6], 0.05)
    mesh = Mesh.from_sites(data.xs, 0)
    return build_problem(k, mesh, data, ConstraintSet((LowerBound(0.0),)))


class TestNodePosterior:
    def test_hand_mean(self):
        post = node_posterior(Kernel("brownian_plus_one"), Mesh.from_sites([1.0]), DataSet([1.0], [-1.0], 1.0))
        np.testing.assert_allclose(post.mean, [-1 / 3, -2 / 3], rtol=1e-14)

    def test_uninformative(self):
        k = Kernel("matern52", 0.3)
        m = Mesh.from_sites([0.4], 2)
        post = node_posterior(k, m, DataSet([0.4], [3.0], 1e12))
        assert np.max(np.abs(post.mean)) <= 1e-10
        np.testing.assert_allclose(post.cov, k.matrix(m.nodes), atol=1e-10)

    def test_formulas(self):
        rng = np.random.default_rng(41)
        for fam in ("matern32", "brownian_plus_one", "squared_exponential"):
            k = Kernel(fam, 0.3)
            data = DataSet([0.1, 0.4, 0.4, 0.8], rng.normal(size=4), 0.2)
            m = Mesh.from_sites(data.xs, 1)
            post = node_posterior(k, m, data)
            np.testing.assert_allclose(post.mean, solve_closed_form(k, data, m.nodes), rtol=1e-10, atol=1e-10)
            gam = k.matrix(m.nodes)
            gs = k.matrix(m.nodes, data.xs)
            A = k.matrix(data.xs) + data.noise_var * np.eye(4)
            cov = gam - gs @ np.linalg.solve(A, gs.T)
            np.testing.assert_allclose(post.cov, cov, atol=1e-10)
            np.testing.assert_array_equal(post.cov, post.cov.T)
            assert np.all(np.diag(post.cov) >= -1e-10)
            linalg.cholesky(post.cov + 1e-10 * np.eye(m.n + 1), lower=True)

    def test_mean_matches_unconstrained(self):
        rng = np.random.default_rng(42)
        for trial in range(10):
            p = random_qp(rng, trial)
            post = node_posterior(p.gram.kernel, p.mesh, p.data)
            np.testing.assert_allclose(post.mean, solve_unconstrained(p).coeffs, atol=1e-9)

    def test_sampling_factor(self):
        post, _ = orthant_fixture()
        F = post.sampling_factor()
        np.testing.assert_allclose(F @ F.T, post.cov, atol=1e-12)
        with pytest.raises(ValueError):
            NodePosterior(np.zeros(2), np.diag([1.0, -1e-3])).sampling_factor()


class TestLogPosterior:
    def test_definitional(self):
        p = hand_problem()
        c = np.array([0.5, 0.2])
        assert log_posterior_unnorm(p, c) == -0.5 * objective_jn(p, c)

    def test_infeasible(self):
        assert log_posterior_unnorm(hand_problem(), [-0.1, 0.3]) == -math.inf

    def test_differences(self):
        p = hand_problem()
        c1, c2 = np.array([0.1, 0.4]), np.array([0.7, 0.0])
        diff = log_posterior_unnorm(p, c1) - log_posterior_unnorm(p, c2)
        assert diff == pytest.approx((objective_jn(p, c2) - objective_jn(p, c1)) / 2, rel=1e-14)

    def test_minus_two_log_identity(self):
        rng = np.random.default_rng(43)
        p = active_fixture()
        for _ in range(50):
            c = np.abs(rng.normal(size=p.size))
            assert -2 * log_posterior_unnorm(p, c) - objective_jn(p, c) == 0.0

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(44)
        p = active_fixture()
        C = rng.normal(0.2, 0.5, size=(200, p.size))
        batch = log_posterior_batch(p, C)
        single = np.array([log_posterior_unnorm(p, c) for c in C])
        assert np.array_equal(np.isinf(batch), np.isinf(single))
        fin = np.isfinite(single)
        np.testing.assert_allclose(batch[fin], single[fin], rtol=1e-12)


class TestMapEqualsQp:
    def test_zero_trials(self):
        rep = map_equals_qp(hand_problem(), 0, 0.1, seed=1)
        assert rep.passed and rep.trials == 0

    def test_unconstrained(self):
        p = hand_problem(False)
        rep = map_equals_qp(p, 2000, 0.5, seed=2)
        assert rep.passed and rep.moved == 0

    def test_hand_corner(self):
        for radius in (0.01, 0.1, 1.0):
            rep = map_equals_qp(hand_problem(), 5000, radius, seed=3)
            assert rep.passed
            assert rep.moved > 0

    def test_detects_wrong_point(self):
        # Handing it a feasible non-optimal point must produce violations.
        p = active_fixture()
        s = solve_constrained(p)
        fake = type(s)(s.u_hat.__class__(p.mesh, s.coeffs + 0.3), s.objective, s.multipliers,
                       (), s.kkt_residuals, s.iterations)
        rep = map_equals_qp(p, 2000, 0.1, seed=4, solution=fake)
        assert not rep.passed


class TestRejectionSampler:
    def test_no_rows_accepts_everything(self):
        post, _ = orthant_fixture()
        b = rejection_sample(post, LinearInequalities.empty(post.mean.size), 10, 10, seed=5)
        assert b.acceptance_rate == 1.0 and b.attempted == 10

    def test_symmetric_orthant(self):
        post, li = orthant_fixture()
        np.testing.assert_allclose(post.mean, 0.0, atol=1e-15)
        b = draw_attempts(post, li, 10_000, seed=6)
        assert b.attempted == 10_000
        assert abs(b.acceptance_rate - 0.5) <= 0.02

    def test_draws_feasible_and_above_minimum(self):
        p = active_fixture()
        s = solve_constrained(p)
        post = NodePosterior(p.moments.mean, p.moments.cov)
        b = rejection_sample(post, p.ineq, 500, 10**6, seed=7)
        assert 0.0 < b.acceptance_rate <= 1.0
        for d in b.draws:
            assert is_feasible(p.ineq, d, tol=0.0)
            assert objective_jn(p, d) >= s.objective - 1e-9

    def test_reproducible(self):
        post, li = orthant_fixture()
        a = rejection_sample(post, li, 100, 10**4, seed=8)
        b = rejection_sample(post, li, 100, 10**4, seed=8)
        assert np.array_equal(a.draws, b.draws) and a.attempted == b.attempted
        c = rejection_sample(post, li, 100, 10**4, seed=9)
        assert not np.array_equal(a.draws, c.draws)

    def test_threads_deterministic(self):
        post, li = orthant_fixture()
        a = rejection_sample(post, li, 301, 10**5, seed=10, threads=3)
        b = rejection_sample(post, li, 301, 10**5, seed=10, threads=3)
        assert a.accepted == 301
        assert np.array_equal(a.draws, b.draws)
        assert np.all(a.draws[:, 0] >= 0.0)

    def test_low_acceptance(self):
        post, _ = orthant_fixture()
        n = post.mean.size
        # c_0 >= 50 lies many posterior standard deviations out
        li = LinearInequalities(np.eye(n)[:1], np.array([50.0]))
        with pytest.raises(LowAcceptanceError) as info:
            rejection_sample(post, li, 5, 5000, seed=11)
        assert info.value.rate == 0.0
        assert "acceptance rate" in str(info.value)
        assert info.value.batch.attempted == 5000

    def test_count_validation(self):
        post, li = orthant_fixture()
        with pytest.raises(ValueError):
            rejection_sample(post, li, 0, 10, seed=0)

    def test_csv(self, tmp_path):
        post, li = orthant_fixture()
        b = rejection_sample(post, li, 4, 1000, seed=12)
        path = tmp_path / "s.csv"
        b.write_csv(path, nodes=np.linspace(0, 1, post.mean.size))
        rows = list(csv.reader(path.read_text().splitlines()))
        assert rows[0][0] == "row" and rows[1][0] == "nodes"
        np.testing.assert_array_equal(np.array(rows[2:6], dtype=float)[:, 1:], b.draws)
        assert rows[6][0] == "mean"
        np.testing.assert_allclose(np.array(rows[6][1:], dtype=float), b.mean(), rtol=1e-15)
        assert rows[7][0] == "acceptance_rate" and float(rows[7][1]) == b.acceptance_rate


def test_constrained_mean_differs_from_map():
    p = active_fixture()
    s = solve_constrained(p)
    assert s.active_set, "fixture must have an active constraint"
    post = NodePosterior(p.moments.mean, p.moments.cov)
    b = rejection_sample(post, p.ineq, 2000, 10**6, seed=13)
    z = np.abs(b.mean() - s.coeffs) / b.standard_error()
    assert np.max(z) > 3.0


def test_bounds_fixture_upper_side():
    # MAP sits on the upper bound, the truncated mean strictly below it.
    k = Kernel("brownian_plus_one")
    data = DataSet([1.0], [2.0], 0.5)
    p = build_problem(k, Mesh.from_sites([1.0]), data, ConstraintSet((UpperBound(0.5),)))
    s = solve_constrained(p)
    assert s.coeffs[1] == pytest.approx(0.5)
    post = NodePosterior(p.moments.mean, p.moments.cov)
    b = rejection_sample(post, p.ineq, 2000, 10**6, seed=14)
    assert b.mean()[1] < 0.5 - 3 * b.standard_error()[1]
