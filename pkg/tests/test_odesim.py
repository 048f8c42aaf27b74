import csv
import math

import numpy as np
import pytest

from nonholo.expr import compile_function
from nonholo.invariance import AffineFiberFunction, iterated_lie
from nonholo.mechanics import kernel_annihilator_generators
from nonholo.models import flat_holonomic, print_model, system_from_text
from nonholo.odesim import (
    compare_nh_rcv,
    energies,
    integrate,
    residual_constraint,
    residual_kernel,
    residual_variety,
    write_csv,
)


def test_level_spin_angle_is_linear(level_disc):
    for sigma in (-0.7, 0.3, 1.0):
        traj = integrate(level_disc, "nh", [0.2, 0, 0, 0, sigma, 0.4], t_end=1.0)
        assert traj.column("theta")[-1] == pytest.approx(0.2 + sigma, abs=1e-10)
        assert np.all(np.diff(traj.t) > 0)


def test_rest_start_accelerates_uniformly(disc):
    traj = integrate(disc, "nh", [0] * 6, t_end=1.0)
    assert traj.column("v_r") == pytest.approx(3.4648232 * traj.t, abs=1e-6)
    assert np.all(traj.column("theta") == 0)


def test_stationary_without_forces(flat):
    traj = integrate(flat, "nh", [1, 2, 3, 0, 0], t_end=1.0, dt=0.1)
    assert np.all(traj.states == traj.states[0])


def test_rk4_order(disc):
    s0 = [0.3, 0.1, 0.0, 0.0, 0.8, -0.5]
    ref = integrate(disc, "nh", s0, 1.0, method="adaptive", tol=1e-13).states[-1]
    errs = [np.linalg.norm(integrate(disc, "nh", s0, 1.0, dt).states[-1] - ref) for dt in (0.04, 0.02)]
    assert 8 <= errs[0] / errs[1] <= 32


def test_adaptive_matches_fixed(disc):
    s0 = [0.3, 0.1, 0.0, 0.0, 0.8, -0.5, 0.2, 0.1]
    a = integrate(disc, "reg", s0, 2.0, method="adaptive")
    b = integrate(disc, "reg", s0, 2.0)
    assert a.t[-1] == pytest.approx(2.0) and np.all(np.diff(a.t) > 0)
    assert a.states[-1] == pytest.approx(b.states[-1], abs=1e-7)


@pytest.mark.parametrize("kwargs", [dict(t_end=0), dict(dt=0), dict(method="euler"), dict(method="adaptive", tol=0)])
def test_bad_arguments(disc, kwargs):
    with pytest.raises(ValueError):
        integrate(disc, "nh", [0] * 6, **{"t_end": 1.0, **kwargs})


def test_wrong_state_length(disc):
    with pytest.raises(ValueError, match="theta"):
        integrate(disc, "reg", [0] * 6)


def test_blowup_truncates():
    text = print_model(flat_holonomic()).replace("V = 0", "V = -x^4")
    sys = system_from_text(text)
    traj = integrate(sys, "nh", [2, 0, 0, 0, 0], t_end=5.0)
    assert traj.blowup and traj.t[-1] < 1.0
    assert np.all(np.isfinite(traj.states))


class TestConservation:
    @pytest.mark.parametrize("tau", [0.0, math.pi / 6, 1.2])
    def test_energy(self, disc, tau):
        sys = disc.with_params(tau=tau)
        traj = integrate(sys, "nh", [0.4, 0, 1, -1, 0.9, -0.3])
        E = energies(sys, traj)
        assert np.max(np.abs(E - E[0])) <= 1e-8

    @pytest.mark.parametrize("which", ["nh", "reg", "sing"])
    def test_spin_speed(self, disc, which):
        s0 = [0.4, 0, 1, -1, 0.9, -0.3]
        if which != "nh":
            s0 += [0.6, 0.5]
        v_s = integrate(disc, which, s0).column("v_s")
        assert np.max(np.abs(v_s - 0.9)) <= 1e-10

    def test_singular_adjoint_norm(self, disc):
        traj = integrate(disc, "sing", [0.4, 0, 1, -1, 0.9, -0.3, 0.6, 0.5])
        n2 = np.sum(traj.block(disc.p_names) ** 2, axis=1)
        assert np.max(np.abs(n2 - n2[0])) <= 1e-8


class TestResiduals:
    def test_constraint_by_construction(self, disc, flat):
        assert residual_constraint(disc, integrate(disc, "nh", [0.4, 0, 1, -1, 0.9, -0.3])) <= 1e-12
        assert residual_constraint(flat, integrate(flat, "nh", [0, 0, 0, 1, 1])) <= 1e-12

    def test_chart_replay_noise_detected(self, disc):
        traj = integrate(disc, "nh", [0.4, 0, 1, -1, 0.9, -0.3], t_end=1.0)
        F = disc.bound_fields
        qdot = np.array([np.broadcast_to(v, traj.t.shape) for v in
                         compile_function(list(F.qdot), list(disc.qv_names), backend="numpy")(*traj.states.T)]).T
        X3 = [disc._bind(c) for c in disc.dp_frame[0]]
        kick = np.array([np.broadcast_to(v, traj.t.shape) for v in
                         compile_function(X3, list(disc.coords), backend="numpy")(*traj.states[:, :4].T)]).T
        assert residual_constraint(disc, traj, qdot + 1e-3 * kick) == pytest.approx(1e-3, rel=1e-9)

    def test_kernel_singular_stratum(self, disc):
        traj = integrate(disc, "sing", [0.4, 0, 1, -1, 0.0, -0.3, 0.0, 0.7])
        assert residual_kernel(disc, traj) <= 1e-8

    def test_kernel_zero_adjoint(self, disc):
        assert residual_kernel(disc, integrate(disc, "sing", [0.4, 0, 1, -1, 0.9, 0.2, 0.0, 0.0])) == 0.0

    def test_kernel_grows_off_variety(self, disc):
        traj = integrate(disc, "reg", [0.4, 0, 1, -1, 0.9, 0.2, 1.0, 0.0])
        assert residual_kernel(disc, traj) > 1e-2

    def test_kernel_needs_adjoints(self, disc):
        with pytest.raises(ValueError):
            residual_kernel(disc, integrate(disc, "nh", [0] * 6, t_end=0.1))

    def test_variety(self, level_disc):
        gens = kernel_annihilator_generators(level_disc)
        conds = [iterated_lie(level_disc, g, k) for g in gens for k in range(3)]
        inside = integrate(level_disc, "reg", [0.4, 0, 1, -1, 0.0, 0.6, 0.0, 0.9], t_end=2.0)
        assert residual_variety(level_disc, inside, conds) <= 1e-6
        off = integrate(level_disc, "reg", [0.4, 0, 1, -1, 0.8, 0.6, 0.5, 0.9], t_end=2.0)
        assert residual_variety(level_disc, off, conds) > 1e-3
        assert residual_variety(level_disc, off, []) == 0.0


class TestCompare:
    def test_invariant_stratum(self, level_disc):
        gap, nh, rcv = compare_nh_rcv(level_disc, [0.3, 0, 0, 0, 0, 0.5], [0, 1])
        assert gap <= 1e-8 and len(nh.t) == len(rcv.t) == 5001

    def test_counterexample(self, disc):
        gap, _, _ = compare_nh_rcv(disc, [0, 0, 0, 0, 1, 0], [1, 0])
        assert gap > 1e-2

    def test_zero_adjoint_on_stratum(self, level_disc):
        gap, _, _ = compare_nh_rcv(level_disc, [0.2, 0, 0, 0, 0, 0.1], [0, 0])
        assert gap <= 1e-8

    def test_zero_adjoint_does_not_stay_zero(self, disc):
        # the regular forcing b pushes p_1 off zero, so the flows separate
        gap, _, _ = compare_nh_rcv(disc, [0.2, 0, 0, 0, 0.7, 0.1], [0, 0])
        assert gap > 1e-2


def test_csv_layout(disc, tmp_path):
    traj = integrate(disc, "reg", [0.4, 0, 1, -1, 0.9, -0.3, 0.1, 0.2], t_end=0.01)
    path = write_csv(disc, traj, tmp_path / "reg.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "theta", "phi", "x", "y", "v_s", "v_r", "p_1", "p_2",
                       "res_constraint", "res_kernel", "res_variety", "energy"]
    assert len(rows) == len(traj.t) + 1
    nh = integrate(disc, "nh", [0.4, 0, 1, -1, 0.9, -0.3], t_end=0.01)
    header = next(csv.reader(write_csv(disc, nh, tmp_path / "nh.csv").open()))
    assert "p_1" not in header and header[-1] == "energy"
