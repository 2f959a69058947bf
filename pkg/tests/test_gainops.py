import itertools
import math

import numpy as np
import pytest

import isscert.compfun as cf
import isscert.gainops as go
from isscert.errors import (
    ClassError,
    ConfigError,
    DivergenceError,
    DomainError,
    ShapeError,
    SizeError,
    UnsupportedFormError,
)


def two_node(g12, g21, form="max"):
    gm = go.gain_matrix(2, {(0, 1): g12, (1, 0): g21})
    return go.max_operator(gm) if form == "max" else go.sum_operator(gm)


def random_linear_operator(n, rng, form="max", density=0.5, hi=1.6):
    gains = {}
    for i in range(n):
        for j in range(n):
            if i != j and rng.uniform() < density:
                gains[(i, j)] = cf.linear(float(rng.uniform(0.05, hi)))
    return (go.max_operator if form == "max" else go.sum_operator)(
        go.gain_matrix(n, gains)
    )


# --- oracles -----------------------------------------------------------

def brute_force_power(op, k, s):
    """Path-supremum formula for the max form, by explicit enumeration."""
    entries = op.matrix.entries
    n = op.n

    def paths(i, depth):
        if depth == 0:
            yield (i,)
            return
        for j in range(n):
            if entries[i][j] is not None:
                for rest in paths(j, depth - 1):
                    yield (i,) + rest

    out = np.zeros(n)
    for i in range(n):
        best = 0.0
        for p in paths(i, k):
            val = float(s[p[-1]])
            for a, b in zip(reversed(p[:-1]), reversed(p[1:])):
                val = entries[a][b](val)
            best = max(best, val)
        out[i] = best
    return out


def max_cycle_geomean(a: np.ndarray) -> float:
    """Exact maximum cycle geometric mean by exhaustive simple cycles."""
    n = a.shape[0]
    best = 0.0
    for length in range(2, n + 1):
        for nodes in itertools.permutations(range(n), length):
            if nodes[0] != min(nodes):
                continue
            cyc = nodes + (nodes[0],)
            prod = 1.0
            ok = True
            for x, y in zip(cyc, cyc[1:]):
                if a[x, y] == 0.0:
                    ok = False
                    break
                prod *= a[x, y]
            if ok:
                best = max(best, prod ** (1.0 / length))
    return best


class TestApply:
    def test_max_form(self):
        op = two_node(cf.linear(0.5), cf.linear(0.5))
        assert np.array_equal(go.apply(op, [1.0, 1.0]), [0.5, 0.5])

    def test_sum_form(self):
        op = two_node(cf.linear(0.3), cf.linear(0.4), form="sum")
        assert np.allclose(go.apply(op, [1.0, 2.0]), [0.6, 0.4])

    def test_zero_fixed(self):
        op = two_node(cf.saturation(2.0), cf.log1p_fun(1.0))
        assert np.array_equal(go.apply(op, [0.0, 0.0]), [0.0, 0.0])

    def test_domain_and_shape_errors(self):
        op = two_node(cf.linear(0.5), cf.linear(0.5))
        with pytest.raises(DomainError):
            go.apply(op, [-1.0, 0.0])
        with pytest.raises(ShapeError):
            go.apply(op, [1.0, 1.0, 1.0])

    def test_diagonal_rejected(self):
        with pytest.raises(ClassError):
            go.gain_matrix(2, {(0, 0): cf.linear(0.5)})

    def test_custom_maf(self):
        def quad_mean(v):
            return float(np.sqrt(np.sum(v ** 2)))

        gm = go.gain_matrix(2, {(0, 1): cf.linear(1.0), (1, 0): cf.linear(1.0)})
        op = go.maf_operator(gm, [quad_mean, "max"])
        assert np.allclose(go.apply(op, [3.0, 4.0]), [4.0, 3.0])

    def test_bad_maf_rejected(self):
        gm = go.gain_matrix(2, {(0, 1): cf.linear(1.0), (1, 0): cf.linear(1.0)})
        with pytest.raises(ClassError):
            go.maf_operator(gm, [lambda v: float(np.min(v)), "max"])  # not strict


class TestPowerApply:
    def test_reduces_to_apply(self):
        op = two_node(cf.linear(0.5), cf.linear(0.5))
        assert np.array_equal(go.power_apply(op, 1, [1, 1]),
                              go.apply(op, [1, 1]))

    def test_two_node_square(self):
        op = two_node(cf.linear(0.5), cf.linear(0.5))
        assert np.array_equal(go.power_apply(op, 2, [1, 1]), [0.25, 0.25])

    def test_three_node_cycle(self):
        gm = go.gain_matrix(3, {(0, 1): cf.linear(0.2), (1, 2): cf.linear(0.3),
                                (2, 0): cf.linear(0.4)})
        op = go.max_operator(gm)
        expected = brute_force_power(op, 3, np.ones(3))
        got = go.power_apply(op, 3, np.ones(3))
        assert np.array_equal(got, expected)
        assert np.allclose(got, 0.024)

    def test_path_formula_exact_all_small_instances(self):
        rng = np.random.default_rng(99)
        for n in range(2, 6):
            for _ in range(3):
                gains = {}
                for i in range(n):
                    for j in range(n):
                        if i != j and rng.uniform() < 0.6:
                            choice = rng.integers(3)
                            if choice == 0:
                                gains[(i, j)] = cf.linear(float(rng.uniform(0.1, 1.4)))
                            elif choice == 1:
                                gains[(i, j)] = cf.saturation(float(rng.uniform(0.5, 2.0)))
                            else:
                                gains[(i, j)] = cf.compose(
                                    cf.linear(float(rng.uniform(0.5, 1.2))),
                                    cf.power(1.0, float(rng.uniform(0.8, 1.5))),
                                )
                op = go.max_operator(go.gain_matrix(n, gains))
                s = rng.uniform(0.1, 3.0, n)
                for k in range(1, 7):
                    assert np.array_equal(go.power_apply(op, k, s),
                                          brute_force_power(op, k, s))


class TestCycleReport:
    def test_two_node_linear(self):
        recs = go.cycle_report(go.gain_matrix(
            2, {(0, 1): cf.linear(0.5), (1, 0): cf.linear(0.5)}))
        assert len(recs) == 1
        rec = recs[0]
        assert rec.contraction and rec.worst_ratio == pytest.approx(0.25)
        assert rec.composed(1.0) == 0.25

    def test_saturation_cycle_contracts(self):
        recs = go.cycle_report(go.gain_matrix(
            2, {(0, 1): cf.saturation(1.0), (1, 0): cf.identity()}))
        assert recs[0].contraction  # r/(1+r) < r for r > 0

    def test_supercritical_cycle_flagged(self):
        gm = go.gain_matrix(3, {(0, 1): cf.linear(2.0), (1, 2): cf.linear(1.0),
                                (2, 0): cf.linear(0.6)})
        recs = go.cycle_report(gm)
        bad = [r for r in recs if not r.contraction]
        assert len(bad) == 1
        assert bad[0].worst_ratio == pytest.approx(1.2)
        assert bad[0].witness is not None

    def test_size_cap(self):
        gm = go.gain_matrix(13, {(0, 1): cf.linear(0.5), (1, 0): cf.linear(0.5)})
        with pytest.raises(SizeError):
            go.cycle_report(gm)


class TestSpectralRadius:
    def test_two_node_max(self):
        op = two_node(cf.linear(0.5), cf.linear(0.5))
        assert go.spectral_radius(op) == pytest.approx(0.5, abs=1e-9)

    def test_two_node_sum_matches_eigenvalue(self):
        op = two_node(cf.linear(0.3), cf.linear(0.4), form="sum")
        assert go.spectral_radius(op) == pytest.approx(math.sqrt(0.12), abs=1e-9)

    def test_all_zero(self):
        op = go.max_operator(go.gain_matrix(2, {}))
        assert go.spectral_radius(op) == 0.0

    def test_dag_has_zero_radius(self):
        gm = go.gain_matrix(3, {(0, 1): cf.linear(5.0), (1, 2): cf.linear(7.0)})
        assert go.spectral_radius(go.max_operator(gm)) == 0.0

    def test_nonlinear_rejected(self):
        op = two_node(cf.saturation(1.0), cf.identity())
        with pytest.raises(UnsupportedFormError):
            go.spectral_radius(op)

    @pytest.mark.parametrize("form", ["max", "sum"])
    def test_random_networks_match_oracles(self, form):
        rng = np.random.default_rng(31 if form == "max" else 32)
        for _ in range(40):
            n = int(rng.integers(2, 9))
            op = random_linear_operator(n, rng, form=form,
                                        hi=1.6 if form == "max" else 0.9)
            r = go.spectral_radius(op)
            a = go.linear_gain_matrix(op)
            if form == "max":
                oracle = max_cycle_geomean(a)
            else:
                oracle = float(np.max(np.abs(np.linalg.eigvals(a))))
            assert r == pytest.approx(oracle, abs=1e-9)


class TestKleeneStar:
    def test_zero(self):
        op = two_node(cf.linear(0.5), cf.linear(0.5))
        assert np.array_equal(go.kleene_star(op, np.zeros(2)), np.zeros(2))

    def test_contractive_fixes_seed(self):
        op = two_node(cf.linear(0.5), cf.linear(0.5))
        assert np.array_equal(go.kleene_star(op, np.ones(2)), np.ones(2))

    def test_divergence_on_supercritical_cycle(self):
        op = two_node(cf.linear(2.0), cf.linear(1.0))
        with pytest.raises(DivergenceError):
            go.kleene_star(op, np.ones(2))

    def test_exact_inequalities_on_random_instances(self):
        rng = np.random.default_rng(77)
        convergent = 0
        for _ in range(60):
            n = int(rng.integers(2, 7))
            op = random_linear_operator(n, rng, hi=1.5)
            s = rng.uniform(0.0, 3.0, n)
            a = go.linear_gain_matrix(op)
            divergent_cycle = max_cycle_geomean(a) >= 1.0
            try:
                q = go.kleene_star(op, s)
            except DivergenceError:
                assert divergent_cycle
                continue
            convergent += 1
            assert not divergent_cycle or np.max(s) == 0.0
            assert np.all(s <= q)
            assert np.all(go.apply(op, q) <= q)
            assert np.max(s) <= np.max(q)  # sandwich, lower half
        assert convergent > 10

    def test_sum_form_rejected(self):
        op = two_node(cf.linear(0.4), cf.linear(0.4), form="sum")
        with pytest.raises(UnsupportedFormError):
            go.kleene_star(op, np.ones(2))


class TestSmallGain:
    def test_linear_max_exact_pass(self):
        op = two_node(cf.linear(0.5), cf.linear(0.5))
        v = go.check_small_gain(op)
        assert v.verdict == "pass-exact"
        assert v.radius == pytest.approx(0.5)

    def test_nonlinear_sampled_pass(self):
        op = two_node(cf.saturation(1.0), cf.identity())
        v = go.check_small_gain(op)
        assert v.verdict == "pass-sampled"
        assert v.caveats

    def test_boundary_strong_mode_fails(self):
        # gamma12 o gamma21 = id: (id + rho) o Gamma admits a witness ray
        op = two_node(cf.linear(2.0), cf.linear(0.5))
        v = go.check_small_gain(op, mode="strong", rho=cf.identity())
        assert v.verdict == "fail"
        s = v.witness
        wrapped = go.apply(op, s) + cf.identity()(go.apply(op, s))
        assert np.all(wrapped >= s)

    def test_strong_mode_passes_with_margin(self):
        op = two_node(cf.linear(0.4), cf.linear(0.4))
        v = go.check_small_gain(op, mode="strong", rho=cf.linear(0.2))
        assert v.passed
        assert v.verdict == "pass-exact"  # linear rho keeps the check exact

    def test_exact_fail_with_witness(self):
        op = two_node(cf.linear(2.0), cf.linear(0.6))
        v = go.check_small_gain(op)
        assert v.verdict == "fail"
        w = np.asarray(v.witness)
        assert np.all(go.apply(op, w) >= w) and np.max(w) > 0

    def test_sum_form_perron_witness(self):
        op = two_node(cf.linear(1.2), cf.linear(1.2), form="sum")
        v = go.check_small_gain(op)
        assert v.verdict == "fail"
        assert v.radius == pytest.approx(1.2)

    def test_uniform_mode(self):
        op = two_node(cf.linear(0.5), cf.linear(0.5))
        ok = go.check_small_gain(op, mode="uniform", eta=cf.linear(0.1))
        assert ok.passed
        bad = go.check_small_gain(op, mode="uniform", eta=cf.linear(0.9))
        assert bad.verdict == "fail"

    def test_robust_mode(self):
        op = two_node(cf.linear(0.4), cf.linear(0.4))
        ok = go.check_small_gain(op, mode="robust", omega=cf.linear(0.3))
        assert ok.passed
        tight = two_node(cf.linear(0.9), cf.linear(0.9))
        bad = go.check_small_gain(tight, mode="robust", omega=cf.linear(0.5))
        assert bad.verdict == "fail"

    def test_mode_parameter_validation(self):
        op = two_node(cf.linear(0.5), cf.linear(0.5))
        with pytest.raises(ConfigError):
            go.check_small_gain(op, mode="strong")
        with pytest.raises(ConfigError):
            go.check_small_gain(op, mode="robust", omega=cf.linear(2.0))
        with pytest.raises(ConfigError):
            go.check_small_gain(op, mode="nope")


class TestOperatorInvariants:
    def test_monotone_on_random_ordered_pairs(self):
        rng = np.random.default_rng(3)
        gm = go.gain_matrix(3, {(0, 1): cf.saturation(2.0),
                                (1, 2): cf.log1p_fun(1.3),
                                (2, 0): cf.linear(0.7),
                                (0, 2): cf.power(1.0, 1.5)})
        for op in (go.max_operator(gm), go.sum_operator(gm)):
            for _ in range(256):
                lo = rng.uniform(0.0, 5.0, 3)
                hi = lo + rng.uniform(0.0, 2.0, 3)
                assert np.all(go.apply(op, lo) <= go.apply(op, hi) + 1e-12)

    def test_homogeneity_linear_gains(self):
        rng = np.random.default_rng(4)
        for form in ("max", "sum"):
            op = random_linear_operator(4, rng, form=form)
            for _ in range(50):
                s = rng.uniform(0.0, 3.0, 4)
                a = float(rng.uniform(0.0, 10.0))
                assert np.allclose(go.apply(op, a * s), a * go.apply(op, s),
                                   atol=1e-12, rtol=1e-12)

    def test_subadditivity_linear_gains(self):
        rng = np.random.default_rng(6)
        for form in ("max", "sum"):
            op = random_linear_operator(4, rng, form=form)
            for _ in range(50):
                s1 = rng.uniform(0.0, 3.0, 4)
                s2 = rng.uniform(0.0, 3.0, 4)
                lhs = go.apply(op, s1 + s2)
                rhs = go.apply(op, s1) + go.apply(op, s2)
                assert np.all(lhs <= rhs + 1e-12)
