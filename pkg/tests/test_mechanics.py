import math

import numpy as np
import pytest

from nonholo.expr import ONE, ZERO, parse_expression as P
from nonholo.geometry import RankDropError
from nonholo.mechanics import (
    A_field,
    ModelError,
    b_field,
    build_system,
    energy,
    fhat_star_matrix,
    kernel_annihilator_generators,
    rhs_nh,
    rhs_rcv,
    rhs_reg,
    rhs_sing,
)

Q0 = [0.0, 0.0, 0.0, 0.0]


def random_states(sys, n, seed=11):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        q = [rng.uniform(*sys.box[c]) for c in sys.coords]
        v = rng.uniform(-2, 2, sys.k)
        p = rng.uniform(-2, 2, sys.r)
        yield np.array(q), v, p


def test_constrained_connection_vanishes(disc):
    C = disc.connection
    assert all(C[c][a][b] == ZERO for c in range(2) for a in range(4) for b in range(2))


def test_holonomic_frobenius_zero(flat):
    for q, v, _ in random_states(flat, 20):
        assert np.all(fhat_star_matrix(flat, q, v) == 0)


def test_dependent_distribution_rejected():
    metric = [[ONE, ZERO], [ZERO, ONE]]
    with pytest.raises(RankDropError):
        build_system(("x", "y"), {}, metric, ZERO, [(ONE, ZERO), (P("2"), ZERO)], {"x": (-1, 1), "y": (-1, 1)})


class TestB:
    def test_golden_value(self, disc):
        assert b_field(disc, Q0, [1, 2]) == pytest.approx([-2.8284271, -3.4648232], abs=1e-7)

    def test_rest_and_flat_potential(self, flat):
        assert np.all(b_field(flat, [0.3, 0.1, 2.0], [0, 0]) == 0)

    def test_level_disc_spin_free(self, level_disc):
        for q, v, _ in random_states(level_disc, 20):
            assert np.allclose(b_field(level_disc, q, [0.0, v[1]]), 0, atol=1e-14)

    def test_general_weight_halves_the_quadratic_part(self):
        from nonholo.models import rolling_disc

        half = rolling_disc(tau=0.0, geodesic_weight=0.5)
        assert b_field(half, Q0, [1, 1]) == pytest.approx([-1 / math.sqrt(2), 0], abs=1e-12)


class TestA:
    def test_disc_zero(self, disc):
        for q, v, _ in random_states(disc, 50):
            assert np.all(A_field(disc, q, v) == 0)

    def test_linear_in_v(self, disc):
        assert np.all(A_field(disc, Q0, [0, 0]) == 0)


class TestFhat:
    def test_golden_value(self, disc):
        assert fhat_star_matrix(disc, Q0, [2, 3]) == pytest.approx(
            np.array([[-2.1213203, 0], [1.4142136, 0]]), abs=1e-7)

    def test_zero_velocity(self, disc):
        assert np.all(fhat_star_matrix(disc, [0.4, 0, 1, 1], [0, 0]) == 0)

    def test_kernel_is_second_direction(self, disc):
        for q, v, _ in random_states(disc, 30):
            M = fhat_star_matrix(disc, q, v)
            assert np.linalg.matrix_rank(M, tol=1e-10) == 1
            assert np.allclose(M @ [0, 1], 0, atol=1e-14)

    def test_generators_are_rows(self, disc, kappa):
        gens = kernel_annihilator_generators(disc)
        assert len(gens) == 2 and all(g.c == ZERO for g in gens)
        env = {"theta": 0.1, "phi": 0, "x": 0, "y": 0, "v_s": 2.0, "v_r": 3.0}
        from nonholo.expr import evaluate

        assert evaluate(gens[0].mu[0], env) == pytest.approx(-kappa * 3)
        assert evaluate(gens[1].mu[0], env) == pytest.approx(kappa * 2)
        assert gens[0].mu[1] == ZERO

    def test_flat_generators_zero(self, flat):
        assert all(all(m == ZERO for m in g.mu) for g in kernel_annihilator_generators(flat))


class TestRightHandSides:
    def test_nh_golden(self, disc):
        qd, vd = rhs_nh(disc, Q0, [0, 0])
        assert vd == pytest.approx([0, 3.4648232], abs=1e-7)
        assert np.all(qd == 0)

    def test_nh_spin_constant(self, disc):
        for q, v, _ in random_states(disc, 50):
            assert rhs_nh(disc, q, v)[1][0] == 0

    def test_flat_rest(self, flat):
        qd, vd = rhs_nh(flat, [1, 2, 3], [0, 0])
        assert np.all(qd == 0) and np.all(vd == 0)

    def test_reg_golden(self, disc):
        assert rhs_reg(disc, Q0, [1, 1], [0, 0])[2] == pytest.approx([-1.4142136, -3.4648232], abs=1e-7)

    def test_reg_first_adjoint_closed_form(self, disc):
        k, k2 = 1 / math.sqrt(2), 1 / math.sqrt(2)
        for q, v, p in random_states(disc, 50):
            want = k2 * v[0] * p[1] - 2 * k * v[0] * v[1] - 9.8 * 0.5 * math.sin(q[0])
            assert rhs_reg(disc, q, v, p)[2][0] == pytest.approx(want, abs=1e-12)

    def test_reg_rest(self, flat):
        assert np.all(rhs_reg(flat, [0, 0, 0], [0, 0], [0.0])[2] == 0)

    def test_sing_closed_form(self, disc):
        k2 = 1 / math.sqrt(2)
        for q, v, p in random_states(disc, 50):
            pd = rhs_sing(disc, q, v, p)[2]
            assert pd == pytest.approx([k2 * v[0] * p[1], -k2 * v[0] * p[0]], abs=1e-12)
            assert abs(p @ pd) < 1e-12
            assert np.all(rhs_sing(disc, q, v, [0, 0])[2] == 0)

    def test_rcv_forcing(self, disc, kappa):
        for q, v, p in random_states(disc, 50):
            _, vd_nh = rhs_nh(disc, q, v)
            _, vd, _ = rhs_rcv(disc, q, v, p)
            assert vd - vd_nh == pytest.approx([-kappa * v[1] * p[0], kappa * v[0] * p[0]], abs=1e-12)

    def test_rcv_without_adjoint_is_nh(self, disc):
        for q, v, _ in random_states(disc, 20):
            assert np.array_equal(rhs_rcv(disc, q, v, [0, 0])[1], rhs_nh(disc, q, v)[1])
            assert np.array_equal(rhs_reg(disc, q, v, [0, 0])[1], rhs_nh(disc, q, v)[1])

    def test_rcv_on_kernel_is_nh(self, disc):
        for q, v, p in random_states(disc, 20):
            assert np.allclose(rhs_rcv(disc, q, v, [0.0, p[1]])[1], rhs_nh(disc, q, v)[1], atol=1e-14)


def test_energy_rate_vanishes(disc):
    """dE/dt along NH by the chain rule, with dE/dq from central differences."""
    h = 1e-6
    for q, v, _ in random_states(disc.with_params(m=1.4, R=0.8, Js=0.7, Jr=1.9), 100):
        sys = disc.with_params(m=1.4, R=0.8, Js=0.7, Jr=1.9)
        qd, vd = rhs_nh(sys, q, v)
        dEdq = np.array([(energy(sys, q + h * e, v) - energy(sys, q - h * e, v)) / (2 * h) for e in np.eye(4)])
        assert abs(dEdq @ qd + v @ vd) <= 1e-6


def test_params_are_overridable(disc):
    heavy = disc.with_params(m=3.0)
    assert heavy.params["m"] == 3.0 and disc.params["m"] == 1.0
    with pytest.raises(ModelError):
        disc.with_params(mass=2.0)
