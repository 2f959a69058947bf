import math

import numpy as np
import pytest

import isscert.compfun as cf
import isscert.gainops as go
import isscert.monotone_dt as mdt
from isscert.errors import DomainError, InfeasibleError


def scalar_half():
    return np.array([[0.5]])


class TestSimulate:
    def test_geometric_decay(self):
        traj = mdt.simulate(scalar_half(), [1.0], None, 12)
        assert np.allclose(traj.states[:, 0], 0.5 ** np.arange(13))

    def test_forced_geometric_series(self):
        # x(k+1) = 0.5 x(k) + 1 from zero: x(k) = 2 (1 - 0.5^k)
        traj = mdt.simulate(scalar_half(), [0.0], 1.0, 12)
        ks = np.arange(13)
        assert np.allclose(traj.states[:, 0], 2.0 * (1.0 - 0.5 ** ks))

    def test_two_node_max_matches_power_apply(self):
        gm = go.gain_matrix(2, {(0, 1): cf.linear(0.5), (1, 0): cf.linear(0.5)})
        op = go.max_operator(gm)
        traj = mdt.simulate(op, [1.0, 1.0], None, 6)
        for k in range(1, 7):
            assert np.array_equal(traj.states[k], go.power_apply(op, k, [1.0, 1.0]))

    def test_negative_input_rejected(self):
        with pytest.raises(DomainError):
            mdt.simulate(scalar_half(), [1.0], -0.1, 3)

    def test_csv_roundtrip(self, tmp_path):
        traj = mdt.simulate(scalar_half(), [1.0], 0.25, 4)
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "k,x_1,u_1"
        assert len(rows) == 6
        assert float(rows[1].split(",")[1]) == 1.0


class TestEissFit:
    def test_exact_geometric(self):
        traj = mdt.simulate(scalar_half(), [1.0], None, 12)
        fit = mdt.eiss_fit(traj, 1.0, 0.5, None)
        assert fit.ok and fit.worst_margin == pytest.approx(0.0, abs=1e-15)

    def test_constant_input_linear_gain(self):
        # x(k) <= 0.5^k x0 + 2 w for u = w
        w = 0.7
        traj = mdt.simulate(scalar_half(), [1.0], w, 20)
        fit = mdt.eiss_fit(traj, 1.0, 0.5, cf.linear(2.0))
        assert fit.ok

    def test_too_fast_rate_fails_at_one(self):
        traj = mdt.simulate(scalar_half(), [1.0], None, 12)
        fit = mdt.eiss_fit(traj, 1.0, 0.4, None)
        assert not fit.ok and fit.worst_k == 1


class TestMbiProbe:
    def test_contractive_matrix_passes(self):
        a = np.array([[0.0, 0.5], [0.5, 0.0]])
        # exact bound: ||(I - A)^{-1}||_inf = 2 for this matrix
        assert float(np.max(np.abs(np.linalg.inv(np.eye(2) - a)).sum(axis=1))) \
            == pytest.approx(2.0)
        v = mdt.mbi_probe(a, 300, cf.linear(2.0), seed=1)
        assert v.verdict == "pass-sampled"

    def test_identity_fails(self):
        v = mdt.mbi_probe(np.eye(2), 300, cf.linear(1e6), seed=1)
        assert v.verdict == "fail"
        vv, ww = v.witness
        assert np.max(vv) > 1e6 * np.max(ww)

    def test_zero_operator_identity_gain(self):
        v = mdt.mbi_probe(np.zeros((2, 2)), 100, cf.identity(), seed=1)
        assert v.verdict == "pass-sampled"

    def test_note_mentions_falsification(self):
        v = mdt.mbi_probe(np.zeros((2, 2)), 10, cf.identity())
        assert "falsification" in v.note


class TestBuildLyapunov:
    def test_scalar_is_plain_norm(self):
        lf = mdt.build_lyapunov(scalar_half(), 1.5)
        assert lf.depth == 1 and lf.psi == 1.0
        assert lf.value([2.0]) == 2.0
        assert lf.value([0.0]) == 0.0

    def test_infeasible_rate(self):
        with pytest.raises(InfeasibleError):
            mdt.build_lyapunov(scalar_half(), 2.5)

    def test_two_node_sum_dissipation(self):
        a = np.array([[0.0, 0.3], [0.4, 0.0]])
        eta = 2.0
        lf = mdt.build_lyapunov(a, eta)
        rng = np.random.default_rng(12)
        for _ in range(1000):
            x = rng.uniform(0.0, 5.0, 2)
            u = rng.uniform(0.0, 2.0, 2)
            lhs = lf.value(a @ x + u)
            rhs = lf.value(x) / eta + lf.psi * float(np.max(u))
            assert lhs <= rhs * (1 + 1e-12) + 1e-12

    def test_sandwich_on_random_states(self):
        gm = go.gain_matrix(3, {(0, 1): cf.linear(0.5), (1, 2): cf.linear(0.8),
                                (2, 0): cf.linear(0.4)})
        op = go.max_operator(gm)
        lf = mdt.build_lyapunov(op, 1.4)
        rng = np.random.default_rng(8)
        for _ in range(1000):
            x = rng.uniform(0.0, 10.0, 3)
            v = lf.value(x)
            assert np.max(x) - 1e-12 <= v <= lf.psi * np.max(x) + 1e-12

    def test_transient_growth_needs_depth(self):
        # chain with a large one-step gain: psi must exceed 1
        gm = go.gain_matrix(3, {(0, 1): cf.linear(3.0), (1, 2): cf.linear(0.01),
                                (2, 0): cf.linear(0.01)})
        op = go.max_operator(gm)
        lf = mdt.build_lyapunov(op, 1.5)
        assert lf.depth > 1 and lf.psi > 1.0
        assert lf.value([0.0, 1.0, 0.0]) == pytest.approx(4.5)  # eta * 3

    def test_simulated_trajectories_meet_derived_eiss_bound(self):
        # with eta r < 1: M = psi, a = 1/eta, gamma(r) = psi eta/(eta-1) r
        a = np.array([[0.0, 0.3], [0.4, 0.0]])
        eta = 2.0
        lf = mdt.build_lyapunov(a, eta)
        rng = np.random.default_rng(21)
        gamma = lf.psi * eta / (eta - 1.0)
        for _ in range(20):
            x0 = rng.uniform(0.0, 4.0, 2)
            u = rng.uniform(0.0, 1.5, (15, 2))
            traj = mdt.simulate(a, x0, u, 15)
            fit = mdt.eiss_fit(traj, max(lf.psi, 1.0), 1.0 / eta,
                               cf.linear(gamma))
            assert fit.ok

    def test_inequality_solutions_dominate_equality(self):
        # an over-solution of the inequality stays above the equality run
        a = np.array([[0.0, 0.3], [0.4, 0.0]])
        rng = np.random.default_rng(2)
        x0 = np.array([1.0, 2.0])
        u = rng.uniform(0.0, 1.0, (10, 2))
        eq = mdt.simulate(a, x0, u, 10)
        over = [x0]
        for k in range(10):
            slack = rng.uniform(0.0, 0.5, 2)
            over.append(a @ over[-1] + u[k] + slack)
        for k in range(11):
            assert np.all(np.asarray(over[k]) >= eq.states[k] - 1e-12)
