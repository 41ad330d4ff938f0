import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noir.conservation import (DynamicsError, Gating, assemble_P, average_dynamics, average_p,
                               brute_force_average, check_step_size, conservation_matrices,
                               default_tendency, hurwitz_certificate, outflow_rates, phase_p,
                               step, validate_tendency)
from noir.network import random_network
from noir.phases import PhaseTable, admissible_actions, apply_action


@pytest.fixture
def t1_half(t1):
    tend = default_tendency(t1).with_p({2: 0.5})
    return t1, tend


class TestAssembly:
    def test_t1_matrices(self, t1_half):
        net, tend = t1_half
        P, Q = assemble_P(net, tend, PhaseTable(()), ())
        # reduced order: inlet (0), interior (2)
        Pr = P[np.ix_([0, 2], [0, 2])]
        assert np.array_equal(Pr, [[0, 0], [1, 0.5]])
        assert np.array_equal(Q, [[-1, 0], [1, -0.5]])

    def test_t2_gated_column(self, t2):
        net, tbl = t2
        tend = default_tendency(net, tbl)
        P, _ = assemble_P(net, tend, tbl, (0,))
        b = net.tail(2)
        assert P[b, b] == 1.0
        assert P[:, b].sum() == 1.0

    def test_columns_conserve_mass(self, three_lights):
        net, tbl = three_lights
        tend = default_tendency(net, tbl)
        for lam in [(0, 0, 0), (1, 1, 0), (2, 0, 1)]:
            P, _ = assemble_P(net, tend, tbl, lam)
            sums = P.sum(axis=0)
            assert np.allclose(sums[list(net.outlets)], 0.0)   # outlets pass everything on
            assert np.allclose(sums[net.state_elements], 1.0, atol=1e-12)

    def test_phase_p(self, t2):
        net, tbl = t2
        tend = default_tendency(net, tbl, p_release=0.6)
        p = phase_p(net, tend, tbl, (1,))
        assert p[net.tail(1)] == 0 and p[net.tail(2)] == 0.6


class TestTendency:
    def test_defaults_valid(self, three_lights):
        net, tbl = three_lights
        validate_tendency(net, default_tendency(net, tbl))

    def test_boundary_p(self, t1):
        tend = default_tendency(t1).with_p({0: 0.5})
        with pytest.raises(DynamicsError, match="boundary"):
            validate_tendency(t1, tend)

    def test_turn_sum(self, three_lights):
        net, tbl = three_lights
        tend = default_tendency(net, tbl)
        tail = net.tail(5)    # junction 3 has two exits
        head = net.out_neighbors[tail][0]
        bad = tend.with_q({(tail, head): 0.9})
        with pytest.raises(DynamicsError, match="sum"):
            validate_tendency(net, bad)

    def test_non_edge(self, t1):
        bad = default_tendency(t1).with_q({(0, 1): 0.5})
        with pytest.raises(DynamicsError, match="non-edge"):
            validate_tendency(t1, bad)


class TestAverage:
    def test_local_average(self, t2):
        net, tbl = t2
        tend = default_tendency(net, tbl, p_release=1.0)
        pbar = average_p(net, tend, tbl)
        assert pbar[net.tail(1)] == 0.5 == pbar[net.tail(2)]

    def test_brute_force_t2(self, t2):
        net, tbl = t2
        tend = default_tendency(net, tbl)
        Qbar, _ = average_dynamics(net, tend, tbl)
        assert np.array_equal(brute_force_average(net, tend, tbl), Qbar)

    def test_brute_force_three_lights(self, three_lights):
        net, tbl = three_lights
        tend = default_tendency(net, tbl, p_release=0.7)
        Qbar, D = average_dynamics(net, tend, tbl)
        assert np.allclose(brute_force_average(net, tend, tbl), Qbar, atol=1e-14)
        assert np.all(np.diag(D) > 0)

    def test_never_green(self, t2):
        net, tbl = t2
        tend = default_tendency(net, tbl).with_p({net.tail(1): 0.0})
        with pytest.raises(DynamicsError, match="never discharge"):
            average_p(net, tend, tbl)


class TestStep:
    def test_t1_step(self, t1_half):
        net, tend = t1_half
        _, Q = assemble_P(net, tend, PhaseTable(()), ())
        assert np.array_equal(step([3, 4], [2], Q, 1.0), [2, 5])

    def test_nonpositive_inflow(self, t1_half):
        net, tend = t1_half
        _, Q = assemble_P(net, tend, PhaseTable(()), ())
        with pytest.raises(DynamicsError, match="positive"):
            step([1, 1], [0.0], Q)

    def test_step_size(self, t1):
        tend = default_tendency(t1)
        with pytest.raises(DynamicsError):
            check_step_size(tend, 1.5)
        with pytest.raises(DynamicsError):
            check_step_size(tend, 0.0)
        check_step_size(tend, 0.25)

    def test_outflow_rates(self):
        assert np.array_equal(outflow_rates(np.array([2.0, 4.0]), np.diag([1, 0.5])), [2, 2])

    def test_mass_balance(self, three_lights):
        net, tbl = three_lights
        tend = default_tendency(net, tbl)
        lam = (1, 0, 1)
        P, Q = assemble_P(net, tend, tbl, lam)
        X = np.linspace(1, 3, net.n_state)
        u = np.full(net.n_inlets, 0.5)
        Xn = step(X, u, Q)
        out = P[list(net.outlets)][:, net.state_elements] @ X
        assert np.isclose(Xn.sum(), X.sum() + u.sum() - out.sum(), atol=1e-12)


class TestHurwitz:
    def test_t1(self, t1_half):
        net, tend = t1_half
        _, Q = assemble_P(net, tend, PhaseTable(()), ())
        assert sorted(np.linalg.eigvals(Q).real) == pytest.approx([-1, -0.5])
        cert = hurwitz_certificate(Q, net, tend.p, tend)
        assert cert.hypothesis and cert.abscissa == pytest.approx(-0.5)

    def test_t2_permanent_green_is_flagged(self, t2):
        net, tbl = t2
        tend = default_tendency(net, tbl)
        p = phase_p(net, tend, tbl, (0,))
        _, Q = assemble_P(net, tend, tbl, (0,))
        cert = hurwitz_certificate(Q, net, p, tend)
        assert not cert.drains
        assert cert.abscissa == pytest.approx(0.0, abs=1e-12)

    def test_average_is_hurwitz(self, three_lights):
        net, tbl = three_lights
        cm = conservation_matrices(net, default_tendency(net, tbl), tbl)
        assert np.linalg.eigvals(cm.Qbar).real.max() < 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_admissible_walks_stay_nonnegative(seed):
    rng = np.random.default_rng(seed)
    net, tbl = random_network(rng)
    tend = default_tendency(net, tbl, p_free=float(rng.uniform(0.05, 1.0)),
                            p_release=float(rng.uniform(0.05, 1.0)))
    gating = Gating.build(net, tbl)
    X = rng.uniform(0, 5, net.n_state)
    st_ = tbl.initial_state()
    for _ in range(50):
        acts = admissible_actions(tbl, st_)
        st_ = apply_action(tbl, st_, acts[rng.integers(len(acts))])
        _, Q = assemble_P(net, tend, tbl, st_.phase, gating)
        X = step(X, rng.uniform(1e-6, 3, net.n_inlets), Q, float(rng.uniform(0.1, 1.0)))
        assert X.min() >= -1e-12
