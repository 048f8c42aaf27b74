import math

import numpy as np
import pytest
from sklearn.base import clone

from nonholo.expr import ExpressionSizeError, ZERO, compile_function, parse_expression as P
from nonholo.invariance import (
    AffineFiberFunction,
    InvariantVarietySearch,
    admissibility_check,
    c_direct,
    fiber_affine_solve,
    invariant_variety_search,
    iterated_lie,
    lie_step,
    numeric_lie_derivatives,
    recursion_identity_check,
    sample_states,
    spencer_condition_i,
    spencer_condition_ii,
)
from nonholo.mechanics import kernel_annihilator_generators
from nonholo.models import disc_quadratic_generator
from nonholo.odesim import integrate


def values(sys, f, states):
    fn = compile_function([f.as_expr(sys.p_names)], list(sys.state_names), backend="numpy")
    return np.broadcast_to(np.asarray(fn(*states.T)[0], float), (len(states),))


def random_full_states(sys, n, seed=3):
    rng = np.random.default_rng(seed)
    box = sys.state_box
    return np.column_stack([rng.uniform(*box[k], size=n) for k in sys.state_names])


@pytest.fixture(scope="module")
def lam(disc):
    return disc_quadratic_generator(disc)


class TestFiberSolve:
    def test_no_rows(self):
        s = fiber_affine_solve(np.zeros((0, 3)), r=2)
        assert not s.empty and s.dim == 2

    def test_single_row(self):
        s = fiber_affine_solve([[1, 0, 0]])
        assert s.dim == 1 and np.allclose(s.p_star, 0)
        assert np.allclose(abs(s.basis[:, 0]), [0, 1])

    def test_inconsistent(self):
        assert fiber_affine_solve([[1, 0, 1], [1, 0, -1]]).empty

    def test_point(self):
        s = fiber_affine_solve([[2, 0, -4], [0, 1, 3]])
        assert s.dim == 0 and s.p_star == pytest.approx([2, -3])

    def test_scaled_duplicates_are_consistent(self):
        s = fiber_affine_solve([[1, 1, -1], [1e6, 1e6, -1e6]])
        assert s.dim == 1 and s.p_star == pytest.approx([0.5, 0.5])

    def test_tiny_rows_dropped(self):
        assert fiber_affine_solve([[1e-12, 0, 1e-12], [0, 1, 0]]).dim == 1

    def test_conditions_hold_on_solution(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            M = rng.normal(size=(2, 4))
            p = rng.normal(size=4)
            rows = np.c_[M, -M @ p]
            s = fiber_affine_solve(rows)
            assert s.dim == 2
            for x in [s.p_star, *(s.p_star + s.basis.T)]:
                assert np.max(np.abs(M @ x - M @ p)) <= 1e-8


class TestLieStep:
    def test_golden(self, disc, lam):
        f1 = lie_step(disc, lam, "reg")
        state = np.array([[0, 0, 0, 0, 1, 1, 1, 0]], float)
        assert values(disc, f1, state)[0] == pytest.approx(4.1012193, abs=1e-7)

    def test_zero(self, disc):
        z = AffineFiberFunction((ZERO, ZERO), ZERO)
        for which in ("reg", "sing"):
            assert lie_step(disc, z, which).is_zero()

    def test_sing_constant_data(self, flat):
        f = AffineFiberFunction((P("1"),), ZERO)
        assert lie_step(flat, f, "sing").is_zero()

    def test_k_zero_is_identity(self, disc, lam):
        assert iterated_lie(disc, lam, 0) == lam
        with pytest.raises(ValueError):
            iterated_lie(disc, lam, -1)

    @pytest.mark.parametrize("which", ["reg", "sing"])
    def test_iterated_is_composition(self, disc, lam, which):
        states = random_full_states(disc, 50)
        f = lam
        for k in range(1, 5):
            f = lie_step(disc, f, which)
            want = values(disc, f, states)
            got = values(disc, iterated_lie(disc, lam, k, which), states)
            assert np.max(np.abs(got - want)) <= 1e-10 * (1 + np.max(np.abs(want)))

    def test_rest_stratum_values(self, disc, lam):
        th = np.linspace(-3, 3, 25)
        states = np.column_stack([th, np.zeros(25), np.ones(25), -np.ones(25),
                                  np.zeros(25), np.zeros(25), np.zeros(25), np.linspace(-2, 2, 25)])
        s = math.sin(math.pi / 6)
        assert np.allclose(values(disc, iterated_lie(disc, lam, 2), states), 0, atol=1e-10)
        want = -6 * 9.8 ** 3 * s ** 3 * np.cos(th) ** 2 * np.sin(th) / 2
        assert values(disc, iterated_lie(disc, lam, 3), states) == pytest.approx(want, abs=1e-8)

    def test_size_guard(self, disc, lam):
        fresh = disc.with_params(m=1.0)
        with pytest.raises(ExpressionSizeError, match="numeric"):
            iterated_lie(fresh, lam, 4, max_nodes=10)

    def test_jets_match_symbolic(self, disc, lam):
        X = random_full_states(disc, 5)[:, :6]
        for x in X:
            rows = numeric_lie_derivatives(disc, lam, x, 5)
            for k in range(6):
                f = iterated_lie(disc, lam, k)
                env = np.r_[x, 0, 0]
                c = values(disc, f, env[None])[0]
                assert rows[k, 2] == pytest.approx(c, rel=1e-9, abs=1e-9)

    def test_flow_derivative(self, disc):
        rng = np.random.default_rng(8)
        h = 1e-4
        for _ in range(10):
            f = AffineFiberFunction((P(f"{rng.normal():.6f}*v_s*cos(theta)"), P(f"{rng.normal():.6f}*v_r")),
                                    P(f"{rng.normal():.6f}*sin(theta)*v_r"))
            s0 = random_full_states(disc, 1, seed=int(rng.integers(1e6)))[0]
            traj = integrate(disc, "reg", s0, t_end=2 * h, dt=h)
            fv = values(disc, f, traj.states)
            fd = (-3 * fv[0] + 4 * fv[1] - fv[2]) / (2 * h)
            exact = values(disc, lie_step(disc, f, "reg"), s0[None])[0]
            assert abs(fd - exact) <= 1e-5 * max(1.0, abs(exact))


class TestOffsets:
    def test_order_one_is_pairing(self, disc, lam):
        got = c_direct(disc, lam, 1)
        X = random_full_states(disc, 20)
        want = values(disc, lie_step(disc, lam), np.c_[X[:, :6], np.zeros((20, 2))])
        fn = compile_function([got], list(disc.qv_names), backend="numpy")
        assert fn(*X[:, :6].T)[0] == pytest.approx(want, abs=1e-10)

    def test_sing_has_no_offsets(self, disc, lam):
        assert all(c_direct(disc, lam, k, "sing") == ZERO for k in range(1, 4))
        with pytest.raises(ValueError):
            c_direct(disc, lam, 0)

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_recursion_matches_sum(self, disc, lam, k):
        rec = iterated_lie(disc, lam, k).c
        X = random_full_states(disc, 50)[:, :6]
        fn = compile_function([rec, c_direct(disc, lam, k)], list(disc.qv_names), backend="numpy")
        a, b = (np.broadcast_to(np.asarray(v, float), (50,)) for v in fn(*X.T))
        assert np.max(np.abs(a - b)) <= 1e-8 * (1 + np.max(np.abs(a)))

    @pytest.mark.parametrize("k,l", [(0, 0), (1, 1), (2, 1), (1, 2), (3, 1), (2, 2), (1, 3)])
    def test_recursion_identity(self, disc, lam, k, l):
        res = recursion_identity_check(disc, lam, k, l, samples=50)
        assert res <= 1e-8
        if k == l == 0:
            assert res == 0.0


class TestSearch:
    def test_sampling_respects_predicates(self, disc):
        X = sample_states(disc, 10, ["v_s = 0", "sin(theta)"], seed=1)
        assert np.all(np.abs(X[:, 4]) <= 1e-12) and np.all(np.abs(np.sin(X[:, 0])) <= 1e-12)
        with pytest.raises(ValueError):
            sample_states(disc, 2, ["p_1 = 0"])

    def test_level_spin_free(self, level_disc):
        X = sample_states(level_disc, 4, ["v_s"], seed=2)
        var = invariant_variety_search(level_disc, kernel_annihilator_generators(level_disc), "reg", samples=X)
        for s in var.samples:
            assert s.label == "verified" and s.solution.dim == 1
            assert abs(s.solution.basis[0, 0]) <= 1e-8 and abs(s.solution.p_star[0]) <= 1e-8

    def test_inclined_generic_empty(self, disc):
        var = invariant_variety_search(disc, kernel_annihilator_generators(disc), "reg", samples=8, seed=4)
        assert all(s.solution.empty and s.order <= 3 for s in var.samples)

    def test_holonomic_full(self, flat):
        var = invariant_variety_search(flat, kernel_annihilator_generators(flat), "reg", samples=5)
        assert all(s.solution.dim == flat.r for s in var.samples)
        assert all(r["passed"] for r in admissibility_check(flat, var, kernel_annihilator_generators(flat)))

    def test_monotone_in_order(self, disc):
        X = np.vstack([sample_states(disc, 4, ["v_s", "sin(theta)"], seed=5), sample_states(disc, 4, seed=6)])
        var = invariant_variety_search(disc, kernel_annihilator_generators(disc), "reg", samples=X, certify=False)
        for s in var.samples:
            dims = [d if d >= 0 else -1 for d in s.history]
            assert all(b <= a for a, b in zip(dims, dims[1:]))

    def test_generators_agree(self, disc):
        X = np.vstack([sample_states(disc, 3, pr, seed=7) for pr in
                       ([], ["v_s"], ["v_s", "v_r", "cos(theta)"], ["v_s", "sin(theta)"])])
        a = invariant_variety_search(disc, kernel_annihilator_generators(disc), "reg", samples=X, certify=False)
        b = invariant_variety_search(disc, [disc_quadratic_generator(disc)], "reg", samples=X, certify=False)
        assert [s.solution.dim for s in a.samples] == [s.solution.dim for s in b.samples]

    def test_admissible_on_rest_stratum(self, disc):
        gens = kernel_annihilator_generators(disc)
        X = sample_states(disc, 3, ["v_s", "sin(theta)"], seed=9)
        var = invariant_variety_search(disc, gens, "reg", samples=X, certify=False)
        rep = admissibility_check(disc, var, gens)
        assert rep and all(r["a_residual"] == 0 and r["passed"] for r in rep)

    def test_bad_arguments(self, disc):
        gens = kernel_annihilator_generators(disc)
        with pytest.raises(ValueError):
            invariant_variety_search(disc, [], "reg")
        with pytest.raises(ValueError):
            invariant_variety_search(disc, gens, "reg", n_max=0)
        with pytest.raises(ValueError):
            invariant_variety_search(disc, gens, "neither")


class TestEstimator:
    def test_params_and_clone(self, disc):
        est = InvariantVarietySearch(disc, n_max=5)
        assert est.get_params()["n_max"] == 5
        twin = clone(est).set_params(which="sing")
        assert twin.which == "sing" and est.which == "reg"

    def test_fit_transform_predict(self, level_disc):
        X = sample_states(level_disc, 3, ["v_s"], seed=1)
        est = InvariantVarietySearch(level_disc, certify=False).fit(X)
        assert est.n_features_in_ == 6
        assert list(est.transform(X)) == [1, 1, 1]
        assert est.predict(X).all()

    def test_validation(self, disc):
        with pytest.raises(ValueError):
            InvariantVarietySearch().fit(np.zeros((1, 6)))
        with pytest.raises(ValueError):
            InvariantVarietySearch(disc).fit(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            InvariantVarietySearch(disc).fit([[np.nan] * 6])
        with pytest.raises(ValueError):
            InvariantVarietySearch(disc, generators="nope").fit(np.zeros((1, 6)))


class TestIntegrabilityChecks:
    def test_constant_field(self):
        rep = spencer_condition_i([P("1"), P("0")], ["x", "y"], {"x": (-1, 1), "y": (-1, 1)})
        assert rep.passed

    def test_zero_field(self):
        assert not spencer_condition_i([P("0")], ["x"], {"x": (-1, 1)}).passed

    def test_disc_vanishing_locus(self, disc):
        box = dict(disc.state_box)
        rep = spencer_condition_i(disc.rhs_exprs("nh"), disc.qv_names, {k: box[k] for k in disc.qv_names})
        assert not rep.passed
        assert abs(math.cos(rep.argmin["theta"])) <= 1e-6
        box["theta"] = (-1.0, 1.0)
        assert spencer_condition_i(disc.rhs_exprs("nh"), disc.qv_names, {k: box[k] for k in disc.qv_names}).passed

    def test_flat_constant_section(self):
        zero = [[P("0")] * 2] * 2
        res = spencer_condition_ii([zero, zero], [[P("0"), P("0")], [P("0"), P("1")]], [P("1"), P("0")],
                                   [P("1"), P("0")], ["x", "y"], {"x": 0.2, "y": -0.4})
        assert res <= 1e-10

    def test_precondition(self):
        zero = [[P("0")] * 2] * 2
        with pytest.raises(ValueError, match="first-order"):
            spencer_condition_ii([zero, zero], [[P("1"), P("0")], [P("0"), P("1")]], [P("1"), P("0")],
                                 [P("x"), P("0")], ["x", "y"], {"x": 0.2, "y": -0.4})

    def test_disc_candidate_reported(self, disc):
        from nonholo.models import disc_integrability_residual

        assert math.isfinite(disc_integrability_residual(disc, {"theta": 0.3, "phi": 0, "x": 0, "y": 0}))
