import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from consmooth.errors import DomainError, MeshMismatchError
from consmooth.kernel import Kernel, KernelSpan, build_gram
from consmooth.mesh import (
    HnMetric,
    Mesh,
    PiecewiseLinearFn,
    basis_matrix,
    eval_fn,
    h_norm_sq_of_lift,
    hat_eval,
    hn_inner,
    interpolate,
    kn_eval,
    rho_coeffs,
    rho_eval,
)

from instances import FAMILIES, random_span

M3 = Mesh.uniform(2)


class TestMesh:
    def test_from_sites_contains_sites_and_endpoints(self):
        m = Mesh.from_sites([0.3, 0.7, 0.3], level=2)
        assert m.nodes[0] == 0.0 and m.nodes[-1] == 1.0
        np.testing.assert_array_equal(m.data_sites, [0.3, 0.7])
        assert set([0.3, 0.7]) <= set(m.nodes)
        assert m.level == 2 and m.n == 12

    def test_refine_is_nested_and_halves_width(self):
        m = Mesh.from_sites([0.2])
        r = m.refine()
        assert set(m.nodes) <= set(r.nodes)
        assert r.width == pytest.approx(m.width / 2)

    @pytest.mark.parametrize("nodes", [[0.1, 1.0], [0.0, 0.9], [0.0, 0.6, 0.4, 1.0], [0.0]])
    def test_invalid_nodes(self, nodes):
        with pytest.raises(ValueError):
            Mesh(np.array(nodes), [])

    def test_site_must_be_node(self):
        with pytest.raises(ValueError):
            Mesh(np.array([0.0, 0.5, 1.0]), [0.3])

    def test_sites_outside_unit_interval(self):
        with pytest.raises(DomainError):
            Mesh.from_sites([1.5])

    def test_locate_ties_go_left(self):
        idx, w = M3.locate(np.array([0.5, 0.0, 1.0]))
        np.testing.assert_array_equal(idx, [0, 0, 1])
        np.testing.assert_array_equal(w, [1.0, 0.0, 1.0])


class TestHats:
    def test_lagrange_property(self):
        m = Mesh.from_sites([0.37], level=2)
        for j in range(m.n + 1):
            vals = hat_eval(m, j, m.nodes)
            np.testing.assert_array_equal(vals, np.eye(m.n + 1)[j])

    def test_midpoint_of_ramp(self):
        assert hat_eval(M3, 1, 0.25) == 0.5

    def test_support(self):
        m = Mesh.uniform(4)
        x = np.linspace(0, 1, 101)
        v = hat_eval(m, 2, x)
        assert np.all(v[(x <= 0.25) | (x >= 0.75)] == 0.0)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            hat_eval(M3, 3, 0.5)

    def test_partition_of_unity(self):
        rng = np.random.default_rng(0)
        m = Mesh.from_sites(rng.uniform(size=5), level=2)
        x = rng.uniform(size=1000)
        assert np.max(np.abs(basis_matrix(m, x).sum(axis=1) - 1.0)) <= 1e-14


class TestInterpolation:
    def test_affine_exact(self):
        m = Mesh.from_sites([0.21, 0.64], level=1)
        u = interpolate(m, lambda x: x)
        x = np.linspace(0, 1, 257)
        np.testing.assert_allclose(u(x), x, atol=1e-15)

    def test_parabola_chord(self):
        u = interpolate(M3, lambda x: x**2)
        np.testing.assert_array_equal(u.coeffs, [0.0, 0.25, 1.0])
        assert u(0.75) == pytest.approx(0.625, abs=1e-15)

    def test_idempotent(self):
        u = PiecewiseLinearFn(M3, [1.0, -2.0, 3.0])
        np.testing.assert_array_equal(interpolate(M3, u).coeffs, u.coeffs)
        m = Mesh.uniform(4)
        v = PiecewiseLinearFn(m, [0.0, 1.0, -1.0, 2.0, 0.5])
        np.testing.assert_array_equal(interpolate(m, lambda x: v(x)).coeffs, v.coeffs)

    def test_scalar_only_callable(self):
        u = interpolate(M3, lambda x: float(np.cos(x)))
        np.testing.assert_allclose(u.coeffs, np.cos(M3.nodes))


class TestEvalFn:
    def test_zero(self):
        u = PiecewiseLinearFn(M3, np.zeros(3))
        assert np.all(u(np.linspace(0, 1, 11)) == 0.0)

    def test_hat_ramp(self):
        assert eval_fn(PiecewiseLinearFn(M3, [0, 1, 0]), 0.25) == 0.5

    def test_affine_arithmetic(self):
        assert eval_fn(PiecewiseLinearFn(M3, [1, 2, 4]), 0.75) == 3.0

    def test_exact_at_nodes(self):
        rng = np.random.default_rng(4)
        m = Mesh.from_sites(rng.uniform(size=3), level=3)
        c = rng.normal(size=m.n + 1)
        np.testing.assert_array_equal(PiecewiseLinearFn(m, c)(m.nodes), c)

    def test_domain(self):
        with pytest.raises(DomainError):
            eval_fn(PiecewiseLinearFn(M3, [0, 1, 0]), 1.01)


class TestDiscreteKernel:
    def test_nodes_give_gram_entries(self):
        k = Kernel("matern32", 0.3)
        m = Mesh.uniform(4)
        g = build_gram(k, m.nodes)
        for i in range(5):
            for j in range(5):
                assert kn_eval(m, g, m.nodes[i], m.nodes[j]) == pytest.approx(g.values[i, j], rel=1e-15)

    def test_se_quarter_point(self):
        # phi(0.25) = (1/2, 1/2, 0): (1 + 1 + 2 e^{-1/2}) / 4
        g = build_gram(Kernel("squared_exponential", 0.5), M3.nodes)
        assert kn_eval(M3, g, 0.25, 0.25) == pytest.approx(0.8032653298563167, rel=1e-14)

    def test_bounded_by_max_entry(self):
        k = Kernel("brownian_plus_one")
        m = Mesh.from_sites([0.3], level=2)
        g = build_gram(k, m.nodes)
        bound = np.max(np.abs(g.values))
        for x in np.linspace(0, 1, 41):
            assert kn_eval(m, g, x, x) <= bound + 1e-14

    def test_mesh_mismatch(self):
        g = build_gram(Kernel("matern32"), [0.0, 1.0])
        with pytest.raises(MeshMismatchError):
            kn_eval(M3, g, 0.1, 0.2)


def _metric(family="brownian_plus_one", mesh=None, ell=0.3):
    mesh = mesh if mesh is not None else Mesh.uniform(1)
    return HnMetric.build(Kernel(family, ell), mesh)


class TestHnInner:
    def test_zero(self):
        met = _metric(mesh=Mesh.uniform(3))
        assert hn_inner(met, np.zeros(4), [1.0, 2.0, 3.0, 4.0]) == 0.0

    def test_hand_value(self):
        assert hn_inner(_metric(), [1.0, 1.0], [1.0, 1.0]) == pytest.approx(1.0, rel=1e-14)

    def test_reproducing(self):
        rng = np.random.default_rng(8)
        met = _metric("matern52", Mesh.uniform(6))
        c = rng.normal(size=7)
        for j in range(7):
            assert hn_inner(met, c, met.gram.values[:, j]) == pytest.approx(c[j], rel=1e-10, abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(9)
        met = _metric("matern32", Mesh.from_sites([0.4], 2))
        for _ in range(50):
            u, v = rng.normal(size=(2, met.mesh.n + 1))
            a, b = hn_inner(met, u, v), hn_inner(met, v, u)
            assert abs(a - b) <= 1e-12 * max(abs(a), 1.0)

    def test_mesh_mismatch(self):
        met = _metric()
        with pytest.raises(MeshMismatchError):
            hn_inner(met, PiecewiseLinearFn(M3, [0, 0, 0]), [1.0, 1.0])
        with pytest.raises(MeshMismatchError):
            hn_inner(met, np.ones(3), np.ones(3))


class TestLift:
    def test_zero(self):
        met = _metric(mesh=M3)
        np.testing.assert_array_equal(rho_coeffs(met, np.zeros(3)), 0.0)
        assert np.all(rho_eval(met, Kernel("brownian_plus_one"), np.zeros(3), np.linspace(0, 1, 5)) == 0.0)
        assert h_norm_sq_of_lift(met, np.zeros(3)) == 0.0

    def test_hand_values(self):
        met = _metric()
        np.testing.assert_allclose(rho_coeffs(met, [1.0, 1.0]), [1.0, 0.0], atol=1e-15)
        assert rho_eval(met, Kernel("brownian_plus_one"), [1.0, 1.0], 0.5) == pytest.approx(1.0, abs=1e-15)

    def test_columns_lift_to_kernel_sections(self):
        met = _metric("matern32", Mesh.uniform(5))
        for j in range(6):
            col = met.gram.values[:, j]
            np.testing.assert_allclose(rho_coeffs(met, col), np.eye(6)[j], atol=1e-10)
            assert h_norm_sq_of_lift(met, col) == pytest.approx(met.gram.values[j, j], rel=1e-10)

    def test_lift_interpolates(self):
        rng = np.random.default_rng(10)
        k = Kernel("matern52", 0.3)
        met = HnMetric.build(k, Mesh.from_sites(rng.uniform(size=2), 2))
        c = rng.normal(size=met.mesh.n + 1)
        np.testing.assert_allclose(rho_eval(met, k, c, met.mesh.nodes), c, rtol=1e-9, atol=1e-9)

    @pytest.mark.parametrize("family", ["matern32", "brownian_plus_one", "matern52"])
    def test_isometry(self, family):
        rng = np.random.default_rng(12)
        met = HnMetric.build(Kernel(family, 0.3), Mesh.from_sites(rng.uniform(size=3), 1))
        for _ in range(30):
            v = rng.normal(size=met.mesh.n + 1)
            a, b = h_norm_sq_of_lift(met, v), hn_inner(met, v, v)
            assert abs(a - b) <= 1e-10 * b


class TestNormGrowth:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_stable_and_monotone(self, family):
        rng = np.random.default_rng(13)
        k = Kernel(family, 0.3)
        for _ in range(4):
            h = random_span(rng, k)
            mesh = Mesh.from_sites([], 0)
            prev = -np.inf
            for _level in range(6):
                val = HnMetric.build(k, mesh).norm_sq(interpolate(mesh, h).coeffs)
                assert val <= h.norm_sq + 1e-9
                assert val >= prev - 1e-9 * h.norm_sq
                prev = val
                mesh = mesh.refine()

    def test_consistency_identity(self):
        # ||rho pi h - h||^2 = ||h||^2 - ||pi h||^2 for h in the kernel span
        rng = np.random.default_rng(14)
        k = Kernel("matern32", 0.3)
        h = KernelSpan(k, np.array([0.23, 0.71]), np.array([1.0, -0.6]))
        mesh = Mesh.from_sites([], 1)
        prev = np.inf
        for _ in range(5):
            met = HnMetric.build(k, mesh)
            c = interpolate(mesh, h).coeffs
            lam = rho_coeffs(met, c)
            # rho pi h - h = sum lam_i K(., t_i) - sum alpha_k K(., s_k)
            pts = np.concatenate([mesh.nodes, h.sites])
            w = np.concatenate([lam, -h.alpha])
            dist = float(w @ k.matrix(pts) @ w)
            deficit = h.norm_sq - met.norm_sq(c)
            assert dist == pytest.approx(deficit, abs=1e-9)
            assert deficit <= prev + 1e-12
            prev = deficit
            mesh = mesh.refine()

    def test_sup_norm_bound(self):
        rng = np.random.default_rng(15)
        k = Kernel("matern32", 0.3)
        bound_const = np.sqrt(k.variance)  # max Gram entry of a stationary kernel
        mesh = Mesh.from_sites([0.5], 1)
        grid = np.linspace(0, 1, 2001)
        for _ in range(6):
            met = HnMetric.build(k, mesh)
            for _ in range(5):
                c = rng.normal(size=mesh.n + 1)
                sup = np.max(np.abs(PiecewiseLinearFn(mesh, c)(grid)))
                assert sup <= bound_const * np.sqrt(met.norm_sq(c)) * (1 + 1e-9)
            mesh = mesh.refine()


@settings(max_examples=40, deadline=None)
@given(
    c=st.lists(st.floats(-5, 5, allow_nan=False), min_size=5, max_size=5),
    x=st.floats(0.0, 1.0),
)
def test_value_between_neighbouring_nodes(c, x):
    u = PiecewiseLinearFn(Mesh.uniform(4), c)
    j = min(int(x * 4), 3)
    lo, hi = sorted((c[j], c[j + 1]))
    assert lo - 1e-12 <= u(x) <= hi + 1e-12
