import math

import numpy as np
import pytest

import isscert.compfun as cf
from isscert.errors import (
    ClassError,
    DomainError,
    InfeasibleError,
    ModelError,
    RangeError,
    UnsupportedFormError,
)

PROBE = np.geomspace(1e-9, 1e9, 128)


def random_k_tree(rng, depth=3, kinf_only=False):
    """Random class-K expression tree for property probes."""
    prim = [
        lambda: cf.linear(float(rng.uniform(0.1, 5.0))),
        lambda: cf.power(float(rng.uniform(0.2, 3.0)), float(rng.uniform(0.3, 2.5))),
        lambda: cf.log1p_fun(float(rng.uniform(0.2, 4.0))),
        lambda: cf.identity(),
    ]
    if not kinf_only:
        prim.append(lambda: cf.saturation(float(rng.uniform(0.5, 4.0))))
    if depth == 0:
        return prim[int(rng.integers(len(prim)))]()
    child = lambda: random_k_tree(rng, depth - 1, kinf_only)  # noqa: E731
    ops = [
        lambda: cf.compose(child(), child()),
        lambda: cf.fmax(child(), child()),
        lambda: cf.fmin(child(), child()),
        lambda: cf.fadd(child(), child()),
        lambda: cf.fmul(child(), child()),
    ]
    return ops[int(rng.integers(len(ops)))]()


class TestEval:
    def test_linear(self):
        assert cf.linear(2.0)(3.0) == 6.0

    def test_log1p_at_zero(self):
        assert cf.log1p_fun(1.0)(0.0) == 0.0

    def test_saturating_rate_approaches_limit(self):
        # 2*c*(pi/L)^2 * s^2/(1+s^2) with c = L = 1 tends to 2*pi^2
        alpha = cf.compose(cf.saturation(2.0 * math.pi ** 2), cf.power(1.0, 2.0))
        limit = 2.0 * math.pi ** 2
        assert alpha(1e6) == pytest.approx(limit, rel=1e-4)

    def test_negative_argument_rejected(self):
        with pytest.raises(DomainError):
            cf.linear(1.0)(-0.5)
        with pytest.raises(DomainError):
            cf.linear(1.0)(float("nan"))

    def test_affine_cap(self):
        f = cf.affine_cap(2.0, 3.0)
        assert f(1.0) == 2.0
        assert f(10.0) == 3.0
        assert f.cls == "PD"


class TestCompose:
    def test_linear_after_square(self):
        f = cf.compose(cf.linear(2.0), cf.power(1.0, 2.0))
        assert f(3.0) == 18.0

    def test_identity_is_neutral(self):
        g = cf.compose(cf.saturation(2.0), cf.identity())
        base = cf.saturation(2.0)
        grid = np.geomspace(1e-6, 1e6, 64)
        assert np.array_equal(g(grid), base(grid))

    def test_two_gain_cycle_contracts_iff_product_exceeds_one(self):
        # chi12 = r/a, chi21 = r/b with a*b = 2 composes to r/2
        a, b = 1.6, 1.25
        comp = cf.compose(cf.linear(1.0 / a), cf.linear(1.0 / b))
        vals = comp(PROBE)
        assert np.allclose(vals, PROBE / 2.0, rtol=1e-15)
        assert np.all(vals < PROBE)

    def test_class_propagation(self):
        assert cf.compose(cf.linear(1.0), cf.linear(2.0)).cls == "Kinf"
        assert cf.compose(cf.saturation(1.0), cf.linear(2.0)).cls == "K"
        with pytest.raises(ClassError):
            cf.compose(cf.affine_cap(1.0, 1.0), cf.linear(1.0))


class TestInverse:
    def test_sqrt(self):
        inv = cf.inverse(cf.power(1.0, 2.0))
        assert inv(4.0) == pytest.approx(2.0, abs=1e-12)

    def test_linear(self):
        inv = cf.inverse(cf.linear(4.0))
        for r in (0.3, 1.0, 77.0):
            assert inv(r) == pytest.approx(r / 4.0, abs=1e-12)

    def test_sum_with_log_term(self):
        # root of x + ln(1+x) = 1, frozen from a 1e-14 bisection oracle
        f = cf.fadd(cf.identity(), cf.log1p_fun(1.0))
        lo, hi = 0.0, 1.0
        while hi - lo > 1e-14:
            mid = 0.5 * (lo + hi)
            if mid + math.log1p(mid) < 1.0:
                lo = mid
            else:
                hi = mid
        oracle = 0.5 * (lo + hi)
        assert oracle == pytest.approx(0.557145598997977, abs=1e-12)
        assert cf.inverse(f)(1.0) == pytest.approx(oracle, abs=1e-11)

    def test_bounded_function_rejected_at_construction(self):
        with pytest.raises(ClassError):
            cf.inverse(cf.saturation(1.0))

    def test_range_error_above_growth_capacity(self):
        # log1p is K-infinity but reaches 1e3 only past the bracket cap
        with pytest.raises(RangeError):
            cf.inverse(cf.log1p_fun(1.0))(1e3)

    def test_roundtrip_identity(self):
        rng = np.random.default_rng(5)
        grid = np.geomspace(1e-6, 1e6, 25)
        for _ in range(10):
            f = random_k_tree(rng, depth=2, kinf_only=True)
            inv = cf.inverse(f)
            for r in grid:
                assert inv(f(float(r))) == pytest.approx(r, rel=1e-9, abs=1e-10)


class TestClassProbes:
    def test_random_trees_are_strictly_increasing_and_zero_at_zero(self):
        rng = np.random.default_rng(17)
        for _ in range(40):
            f = random_k_tree(rng)
            assert f.cls in ("K", "Kinf")
            cf.validate_kfun(f)

    def test_weak_triangle_inequality(self):
        rng = np.random.default_rng(23)
        grid = np.geomspace(1e-6, 1e3, 32)
        aa, bb = np.meshgrid(grid, grid)
        for _ in range(20):
            g = random_k_tree(rng, depth=2)
            lhs = g(aa + bb)
            rhs = np.maximum(g(2 * aa), g(2 * bb))
            assert np.all(lhs <= rhs * (1 + 1e-12) + 1e-300)

    def test_validate_rejects_mistagged_tree(self):
        bad = cf.KFun("affine_cap", (1.0, 1.0), (), "K")  # forged tag
        with pytest.raises(ClassError):
            cf.validate_kfun(bad)


class TestSerialization:
    def test_roundtrip(self):
        rng = np.random.default_rng(40)
        grid = np.geomspace(1e-6, 1e6, 33)
        for _ in range(25):
            f = random_k_tree(rng)
            g = cf.kfun_from_dict(cf.kfun_to_dict(f))
            assert np.array_equal(f(grid), g(grid))
            assert g.cls == f.cls

    def test_compose_shape(self):
        d = cf.kfun_to_dict(cf.compose(cf.linear(2.0), cf.saturation(1.0)))
        assert d == {
            "kind": "compose",
            "outer": {"kind": "linear", "slope": 2.0},
            "inner": {"kind": "saturation", "scale": 1.0},
        }

    def test_unknown_kind_rejected(self):
        from isscert.errors import ConfigError

        with pytest.raises(ConfigError):
            cf.kfun_from_dict({"kind": "cosh"})


class TestKlEnvelope:
    R_GRID = np.array([0.1, 0.5, 1.0, 2.0, 5.0])
    T_GRID = np.linspace(0.0, 5.0, 26)

    def test_linear_rate_gives_exponential(self):
        env = cf.kl_envelope(cf.linear(1.0), self.R_GRID, self.T_GRID)
        for r in self.R_GRID:
            for t in self.T_GRID:
                exact = r * math.exp(-t)
                assert env(float(r), float(t)) == pytest.approx(exact, rel=1e-8)

    def test_quadratic_rate_gives_hyperbolic(self):
        env = cf.kl_envelope(cf.power(1.0, 2.0), self.R_GRID, self.T_GRID)
        for r in self.R_GRID:
            for t in self.T_GRID:
                exact = r / (1.0 + r * t)
                assert env(float(r), float(t)) == pytest.approx(exact, rel=1e-8)

    def test_initial_value_exact_and_decreasing(self):
        alpha = cf.compose(cf.saturation(2.0 * math.pi ** 2), cf.power(1.0, 2.0))
        env = cf.kl_envelope(alpha, np.array([1.0]), self.T_GRID)
        vals = [env(1.0, float(t)) for t in self.T_GRID]
        assert vals[0] == 1.0
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_monotone_in_r(self):
        env = cf.kl_envelope(cf.linear(0.7), self.R_GRID, self.T_GRID)
        for t in self.T_GRID:
            col = [env(float(r), float(t)) for r in self.R_GRID]
            assert all(b > a for a, b in zip(col, col[1:]))

    def test_rejects_non_pd_rate(self):
        with pytest.raises((ModelError, ClassError, DomainError)):
            cf.kl_envelope(cf.KFun("linear", (-1.0,), (), "PD"),
                           self.R_GRID, self.T_GRID)


class TestComparisonWithInputs:
    def test_zero_input_reduces_to_envelope(self):
        aud = cf.comparison_with_inputs(cf.power(1.0, 2.0), 2.0,
                                        np.zeros(401), 4.0)
        assert aud.passed
        assert np.all(aud.margins >= -1e-10)
        # with v = 0 the bound IS the flow, so margins collapse to zero
        assert np.max(np.abs(aud.margins)) < 1e-7

    def test_constant_input_linear_rate(self):
        # alpha = id, v = 1, y0 = 1: y stays at 1 while the bound is
        # e^{-t} + 2t
        aud = cf.comparison_with_inputs(cf.linear(1.0), 1.0, np.ones(501), 5.0)
        assert aud.passed
        assert np.allclose(aud.values, 1.0, atol=1e-8)
        mid = 250
        t = aud.times[mid]
        assert aud.bounds[mid] == pytest.approx(math.exp(-t) + 2 * t, rel=1e-7)

    def test_quadratic_rate_half_input(self):
        aud = cf.comparison_with_inputs(cf.power(1.0, 2.0), 2.0,
                                        np.full(500, 0.5), 5.0)
        assert aud.passed

    def test_negative_sample_rejected(self):
        with pytest.raises(DomainError):
            cf.comparison_with_inputs(cf.linear(1.0), 1.0,
                                      np.array([0.1, -0.1, 0.2]), 1.0)

    def test_oracle_refinement_agrees(self):
        # the audited solution must match a 10x finer RK4 run
        alpha = cf.compose(cf.saturation(3.0), cf.power(1.0, 2.0))
        v = 0.3 + 0.2 * np.sin(np.linspace(0, 6 * math.pi, 301)) ** 2
        coarse = cf.comparison_with_inputs(alpha, 2.0, v, 3.0)
        fine_t = np.linspace(0.0, 3.0, 3001)
        fine_v = np.interp(fine_t, coarse.times, v)
        y = 2.0
        for k in range(fine_t.size - 1):
            h = fine_t[k + 1] - fine_t[k]

            def rhs(tt, yy):
                return -alpha(max(yy, 0.0)) + np.interp(tt, fine_t, fine_v)

            t0 = fine_t[k]
            k1 = rhs(t0, y)
            k2 = rhs(t0 + h / 2, y + h / 2 * k1)
            k3 = rhs(t0 + h / 2, y + h / 2 * k2)
            k4 = rhs(t0 + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        assert coarse.values[-1] == pytest.approx(y, rel=1e-6)
        assert coarse.passed


class TestSontagFactor:
    def test_identity_envelope(self):
        beta = cf.exp_klfun(cf.identity(), 1.0)
        a1, a2 = cf.sontag_factor(beta, 1.0)
        assert a1.kind == "identity" and a2.kind == "identity"

    def test_square_amplitude(self):
        beta = cf.exp_klfun(cf.power(1.0, 2.0), 2.0)
        a1, a2 = cf.sontag_factor(beta, 1.0)
        rs = np.geomspace(1e-3, 1e3, 16)
        for r in rs:
            for t in np.linspace(0.0, 10.0, 11):
                assert a1(beta(float(r), float(t))) <= a2(float(r)) * math.exp(-t) * (
                    1 + 1e-12
                )

    def test_rate_above_decay_is_infeasible(self):
        beta = cf.exp_klfun(cf.power(1.0, 2.0), 2.0)
        with pytest.raises(InfeasibleError):
            cf.sontag_factor(beta, 3.0)

    def test_tabulated_rejected(self):
        env = cf.kl_envelope(cf.linear(1.0), np.array([1.0, 2.0]),
                             np.array([0.0, 1.0]))
        with pytest.raises(UnsupportedFormError):
            cf.sontag_factor(env, 0.5)
