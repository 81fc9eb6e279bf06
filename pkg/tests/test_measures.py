"""Tests for discrete measures, the bump family, metrics, and products.

The product and pairing checks use small atomic measures where every
expected value has a closed form, plus grid fields where the chained
product must match the matrix product exactly.
"""

import numpy as np
import pytest

from shflab.measures import (
    DiscreteMeasure4,
    GridDeltaLink,
    MetricResult,
    MollifierBump,
    ProductSizeError,
    TestFamily,
    bspline,
    chain_pairing,
    chain_product,
    ck_residual,
    marginalize_atoms,
    metric_report_json,
    mollified_product,
    process_metric,
    read_measure_csv,
    vague_metric,
    write_measure_csv,
)


def random_measure(rng, m, spread=0.7):
    return DiscreteMeasure4(rng.normal(size=(m, 4)) * spread,
                            rng.random(m) * 0.5)


def grid_measures(h=0.125, n=16):
    """Two smooth grid fields and their exact h^2-matrix chain."""
    xs = np.array([(i * h, j * h) for i in range(n) for j in range(n)])
    def density(shift):
        d2 = ((xs[:, None, 0] - xs[None, :, 0] - shift) ** 2
              + (xs[:, None, 1] - xs[None, :, 1]) ** 2)
        return np.exp(-d2 / 0.9)
    A, B = density(0.2), density(-0.1)
    sup = np.concatenate([np.repeat(xs, n * n, axis=0),
                          np.tile(xs, (n * n, 1))], axis=1)
    mu_a = DiscreteMeasure4(sup, (h ** 4 * A).ravel())
    mu_b = DiscreteMeasure4(sup, (h ** 4 * B).ravel())
    mu_ab = DiscreteMeasure4(sup, (h ** 4 * (h ** 2 * A @ B)).ravel())
    return mu_a, mu_b, mu_ab, h


def g_probe(x):
    return np.exp(-((x[..., 0] - 0.9) ** 2 + (x[..., 1] - 1.1) ** 2))


def gp_probe(x):
    return 1.0 + 0.3 * np.sin(2.0 * x[..., 0])


class TestDiscreteMeasure:
    def test_validation(self):
        with pytest.raises(ValueError):
            DiscreteMeasure4([[0, 0, 0, 0]], [-1.0])
        with pytest.raises(ValueError):
            DiscreteMeasure4([[0, 0, 0]], [1.0])
        with pytest.raises(ValueError):
            DiscreteMeasure4([[0, 0, 0, 0]], [1.0, 2.0])

    def test_pairing_single_atom(self):
        mu = DiscreteMeasure4([[0.1, 0.2, 0.3, 0.4]], [2.0])
        got = mu.pair_tensor(lambda x: x[..., 0] + x[..., 1],
                             lambda x: x[..., 0] * x[..., 1])
        assert got == pytest.approx(2.0 * 0.3 * 0.12, rel=1e-15)
        assert mu.total_mass == 2.0
        assert mu.n_atoms == 1

    def test_scaled(self):
        mu = DiscreteMeasure4([[0, 0, 1, 1]], [3.0])
        assert mu.scaled(0.5).total_mass == 1.5
        with pytest.raises(ValueError):
            mu.scaled(-1.0)


class TestBumpFamily:
    def test_bspline_partition_of_unity(self):
        x = np.linspace(-0.5, 0.5, 23)
        total = sum(bspline(x - k) for k in range(-3, 4))
        assert np.max(np.abs(total - 1.0)) < 1e-14

    def test_bspline_support_and_smoothness(self):
        assert bspline(2.0) == 0.0
        assert bspline(-2.5) == 0.0
        assert bspline(0.0) == pytest.approx(2.0 / 3.0, rel=1e-15)
        # C^2: second difference quotient is continuous across the knots
        h = 1e-5
        for knot in (-2.0, -1.0, 1.0, 2.0):
            def d2(x):
                return (bspline(x + h) - 2 * bspline(x) + bspline(x - h)) / h ** 2
            assert abs(d2(knot + 10 * h) - d2(knot - 10 * h)) < 1e-2

    def test_enumeration_deterministic_and_total(self):
        fam = TestFamily()
        first = [(g.level, g.center) for g in fam.members(40)]
        again = [(g.level, g.center) for g in TestFamily().members(40)]
        assert first == again
        assert first[0] == (0, (0.0, 0.0))
        # shells: indices 1..26 sit at sup-norm 1 in (m, a, b)
        for i in range(1, 27):
            g = fam.member(i)
            a = g.center[0] / g.scale
            b = g.center[1] / g.scale
            assert max(abs(g.level), abs(a), abs(b)) == 1
        assert len(set(first)) == 40

    def test_members_positive_inside_support(self):
        g = TestFamily().member(0)
        pts = np.array([[0.0, 0.0], [1.9, 0.0], [0.0, -1.9], [2.1, 0.0]])
        vals = g(pts)
        assert vals[0] > vals[1] > 0
        assert vals[2] > 0
        assert vals[3] == 0.0

    def test_ball_positivity(self):
        fam = TestFamily()
        for radius in (1, 2, 4, 8):
            idx, g, inf = fam.positive_member_for_ball(radius)
            assert inf > 0
            # spot check the reported infimum on the ball boundary
            theta = np.linspace(0, 2 * np.pi, 64)
            ring = radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
            assert np.min(g(ring)) >= inf - 1e-12

    def test_quasi_interpolant_decay(self):
        # reproducing a C^2 function from samples on the scale-s lattice
        # should improve like s^2: an eighth of the scale buys roughly
        # a factor 64
        def f(x, y):
            return np.sin(1.3 * x) * np.cos(0.7 * y) + 0.3 * x * y
        pts = np.stack(np.meshgrid(np.linspace(-0.8, 0.8, 9),
                                   np.linspace(-0.8, 0.8, 9)), -1).reshape(-1, 2)
        errs = []
        for s in (0.5, 0.0625):
            ks = np.arange(-int(3 / s) - 4, int(3 / s) + 5)
            cx, cy = np.meshgrid(ks * s, ks * s, indexing="ij")
            w1 = bspline((pts[:, 0][:, None] - cx.ravel()[None, :]) / s)
            w2 = bspline((pts[:, 1][:, None] - cy.ravel()[None, :]) / s)
            q = (w1 * w2) @ f(cx, cy).ravel()
            errs.append(np.max(np.abs(q - f(pts[:, 0], pts[:, 1]))))
        assert errs[1] < 0.025 * errs[0]


class TestVagueMetric:
    def test_axioms_on_random_triples(self):
        rng = np.random.default_rng(41)
        worst = 0.0
        for _ in range(100):
            a = random_measure(rng, 6)
            b = random_measure(rng, 5)
            c = random_measure(rng, 7)
            dab = vague_metric(a, b).value
            dba = vague_metric(b, a).value
            dbc = vague_metric(b, c).value
            dac = vague_metric(a, c).value
            assert dab == pytest.approx(dba, abs=1e-14)
            assert vague_metric(a, a).value == 0.0
            worst = max(worst, dac - (dab + dbc))
        assert worst <= 1e-12

    def test_distinguishes_perturbation(self):
        rng = np.random.default_rng(5)
        mu = random_measure(rng, 6)
        nudged = DiscreteMeasure4(mu.support, mu.weights * (1 + 1e-9))
        assert vague_metric(mu, nudged).value > 0

    def test_truncation_bound_exact_and_binding(self):
        mu = DiscreteMeasure4([[0, 0, 0, 0]], [100.0])
        nu = DiscreteMeasure4([[0, 0, 0, 0]], [0.0])
        for k in (3, 12):
            res = vague_metric(mu, nu, k_terms=k)
            assert res.truncation_bound == pytest.approx(
                1.0 - (1.0 - 2.0 ** -k) ** 2, rel=1e-15)
            # wildly different measures saturate every cap
            assert res.value == pytest.approx((1.0 - 2.0 ** -k) ** 2,
                                              rel=1e-12)
            assert res.value + res.truncation_bound == pytest.approx(1.0)

    def test_k_terms_validation(self):
        mu = DiscreteMeasure4([[0, 0, 0, 0]], [1.0])
        with pytest.raises(ValueError):
            vague_metric(mu, mu, k_terms=0)


class TestProcessMetric:
    def test_identical_processes(self):
        rng = np.random.default_rng(9)
        proc = {(0.0, 0.5): random_measure(rng, 4),
                (0.5, 1.0): random_measure(rng, 4)}
        res = process_metric(proc, dict(proc))
        assert res.value == 0.0
        assert res.grid == ((0.0, 0.5), (0.5, 1.0))

    def test_mismatched_grids(self):
        mu = DiscreteMeasure4([[0, 0, 0, 0]], [1.0])
        with pytest.raises(ValueError):
            process_metric({(0.0, 1.0): mu}, {(0.0, 2.0): mu})

    def test_far_difference_is_capped(self):
        near = DiscreteMeasure4([[0, 0, 0, 0]], [1.0])
        late_a = DiscreteMeasure4([[0, 0, 0, 0]], [1.0])
        late_b = DiscreteMeasure4([[0, 0, 0, 0]], [50.0])
        proc_a = {(0.0, 0.5): near, (5.0, 5.0): late_a}
        proc_b = {(0.0, 0.5): near, (5.0, 5.0): late_b}
        res = process_metric(proc_a, proc_b, ell_max=6)
        # the disagreement sits at time 5, so levels 1..4 see nothing
        assert res.per_ell[:4] == (0.0, 0.0, 0.0, 0.0)
        assert res.per_ell[4] == pytest.approx(2.0 ** -5)
        assert res.value <= sum(2.0 ** -m for m in range(1, 7))


class TestMollifiedProduct:
    def test_single_atom_formula(self):
        mu = DiscreteMeasure4([[0.1, 0.2, 0.3, 0.4]], [2.0])
        nu = DiscreteMeasure4([[0.35, 0.38, 1.0, -1.0]], [3.0])
        u = MollifierBump(rate=1.0)
        prod = mollified_product(mu, u, nu)
        assert prod.n_atoms == 1
        np.testing.assert_allclose(prod.support,
                                   [[0.1, 0.2, 1.0, -1.0]])
        expected = 6.0 * float(u(np.array([-0.05, 0.02])))
        assert prod.weights[0] == pytest.approx(expected, rel=1e-14)

    def test_bilinear_in_weights(self):
        rng = np.random.default_rng(3)
        mu = random_measure(rng, 8)
        nu = random_measure(rng, 9)
        u = MollifierBump(rate=0.9)
        base = mollified_product(mu, u, nu)
        scaled = mollified_product(mu.scaled(2.5), u, nu.scaled(2.0))
        np.testing.assert_allclose(scaled.weights, 5.0 * base.weights,
                                   rtol=1e-13)

    def test_disjoint_supports_empty(self):
        mu = DiscreteMeasure4([[0, 0, 0, 0]], [1.0])
        nu = DiscreteMeasure4([[9, 9, 1, 1]], [1.0])
        prod = mollified_product(mu, MollifierBump(rate=1.0), nu)
        assert prod.n_atoms == 0

    def test_duplicate_targets_coalesce(self):
        mu = DiscreteMeasure4([[0, 0, 0.1, 0.0], [0, 0, -0.1, 0.0]],
                              [1.0, 1.0])
        nu = DiscreteMeasure4([[0, 0, 2, 2]], [1.0])
        u = MollifierBump(rate=1.0)
        prod = mollified_product(mu, u, nu)
        assert prod.n_atoms == 1
        assert prod.weights[0] == pytest.approx(
            2.0 * float(u(np.array([0.1, 0.0]))), rel=1e-14)

    def test_size_guard_raises_before_allocating(self):
        big = DiscreteMeasure4(np.zeros((800, 4)), np.ones(800))
        with pytest.raises(ProductSizeError):
            mollified_product(big, MollifierBump(rate=0.5), big,
                              max_atoms=10_000)

    def test_mollifier_validation(self):
        with pytest.raises(ValueError):
            MollifierBump(rate=0.0)
        with pytest.raises(ValueError):
            GridDeltaLink(h=-1.0)

    def test_mollifier_mass_one(self):
        for rate in (0.5, 1.0, 4.0):
            u = MollifierBump(rate=rate)
            n = 400
            span = u.support_radius
            ax = (np.arange(n) + 0.5) / n * 2 * span - span
            gx, gy = np.meshgrid(ax, ax, indexing="ij")
            cell = (2 * span / n) ** 2
            mass = float(np.sum(u(np.stack([gx, gy], axis=-1)))) * cell
            assert mass == pytest.approx(1.0, abs=1e-4)


class TestChainOperations:
    def test_grid_chain_matches_matrix_product(self):
        mu_a, mu_b, mu_ab, h = grid_measures()
        chained = chain_pairing([mu_a, mu_b], [GridDeltaLink(h)],
                                [g_probe, None, gp_probe])
        direct = mu_ab.pair_tensor(g_probe, gp_probe)
        assert chained == pytest.approx(direct, rel=1e-12)

    def test_pairing_matches_materialized_product(self):
        rng = np.random.default_rng(11)
        m1, m2 = random_measure(rng, 20), random_measure(rng, 15)
        u = MollifierBump(rate=0.8)
        prod = mollified_product(m1, u, m2)
        lhs = prod.pair_tensor(g_probe, gp_probe)
        rhs = chain_pairing([m1, m2], [u], [g_probe, None, gp_probe])
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_marginal_consistency(self):
        rng = np.random.default_rng(12)
        ms = [random_measure(rng, 18), random_measure(rng, 14),
              random_measure(rng, 12)]
        u = MollifierBump(rate=0.8)
        rows_full, w_full, kept_full = chain_product(ms, [u, u])
        rows_marg, w_marg, kept_marg = chain_product(ms, [u, u],
                                                     marginalize={1})
        assert kept_full == (0, 1, 2, 3)
        assert kept_marg == (0, 2, 3)
        rows_proj, w_proj = marginalize_atoms(rows_full, w_full,
                                              [0, 1, 4, 5, 6, 7])
        def as_map(rows, w):
            return {tuple(np.round(r, 10)): v for r, v in zip(rows, w)}
        left, right = as_map(rows_marg, w_marg), as_map(rows_proj, w_proj)
        assert set(left) == set(right)
        for key, val in left.items():
            assert val == pytest.approx(right[key], rel=1e-12)

    def test_associativity_through_pairing(self):
        rng = np.random.default_rng(13)
        ms = [random_measure(rng, 16), random_measure(rng, 12),
              random_measure(rng, 10)]
        u = MollifierBump(rate=0.8)
        left_first = mollified_product(mollified_product(ms[0], u, ms[1]),
                                       u, ms[2])
        lhs = left_first.pair_tensor(g_probe, gp_probe)
        rhs = chain_pairing(ms, [u, u], [g_probe, None, None, gp_probe])
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_argument_validation(self):
        mu = DiscreteMeasure4([[0, 0, 0, 0]], [1.0])
        u = MollifierBump(rate=1.0)
        with pytest.raises(ValueError):
            chain_pairing([mu, mu], [], [None, None, None])
        with pytest.raises(ValueError):
            chain_pairing([mu], [], [None])
        with pytest.raises(ValueError):
            chain_product([mu], [])
        with pytest.raises(ValueError):
            chain_product([mu, mu], [u], marginalize={2})


class TestCkResidual:
    def test_exact_grid_link_vanishes(self):
        mu_a, mu_b, mu_ab, h = grid_measures()
        res = ck_residual(mu_a, mu_b, mu_ab, [GridDeltaLink(h)],
                          g_probe, gp_probe)
        assert res.shape == (1,)
        assert res[0] <= 1e-10

    def test_negative_control(self):
        mu_a, mu_b, mu_ab, h = grid_measures()
        wrong = mu_ab.scaled(1.5)
        res = ck_residual(mu_a, mu_b, wrong, [GridDeltaLink(h)],
                          g_probe, gp_probe)
        assert res[0] > 1.0

    def test_residual_decreases_over_scales(self):
        mu_a, mu_b, mu_ab, h = grid_measures()
        mols = [MollifierBump(rate=r) for r in (1.0, 2.0, 4.0, 8.0)]
        mols.append(GridDeltaLink(h))
        res = ck_residual(mu_a, mu_b, mu_ab, mols, g_probe, gp_probe)
        assert all(res[i + 1] < res[i] for i in range(len(res) - 1))
        assert res[-1] <= 1e-10

    def test_incompatible_grids_rejected(self):
        sup = [[0, 0, 0, 0]]
        a = DiscreteMeasure4(sup, [1.0], meta={"grid_N": 16, "grid_L": 2.0})
        b = DiscreteMeasure4(sup, [1.0], meta={"grid_N": 32, "grid_L": 2.0})
        with pytest.raises(ValueError):
            ck_residual(a, a, b, [GridDeltaLink(0.125)], g_probe, gp_probe)


class TestSerialization:
    def test_measure_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(17)
        mu = random_measure(rng, 9)
        path = tmp_path / "measure.csv"
        write_measure_csv(path, mu)
        back = read_measure_csv(path)
        np.testing.assert_array_equal(back.support, mu.support)
        np.testing.assert_array_equal(back.weights, mu.weights)

    def test_metric_report_json(self):
        mu = DiscreteMeasure4([[0, 0, 0, 0]], [1.0])
        nu = DiscreteMeasure4([[0, 0, 0, 0]], [2.0])
        report = metric_report_json(vague_metric(mu, nu))
        assert '"kind": "vague"' in report
        assert '"truncation_bound"' in report
        proc = process_metric({(0.0, 1.0): mu}, {(0.0, 1.0): nu})
        report2 = metric_report_json(proc)
        assert '"kind": "process"' in report2
        assert float(proc) == proc.value
