import math

import numpy as np
import pytest

from nonholo.expr import evaluate
from nonholo.mechanics import ModelError
from nonholo.models import (
    ModelFileError,
    disc_model_path,
    load_model,
    print_model,
    resolve_model,
    rolling_disc,
    system_from_text,
)


def sample_envs(sys, n, seed=5):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        env = {c: rng.uniform(*sys.box[c]) for c in sys.coords}
        env.update({v: rng.uniform(-1, 1) for v in sys.v_names})
        env.update(sys.params)
        yield env


def same_system(a, b, n=50, tol=1e-12):
    assert a.coords == b.coords and a.v_names == b.v_names and a.p_names == b.p_names
    fa, fb = a.bound_fields, b.bound_fields
    pairs = list(zip(a.rhs_exprs("rcv"), b.rhs_exprs("rcv")))
    pairs += list(zip(a.bound_frames[0] + a.bound_frames[-1], b.bound_frames[0] + b.bound_frames[-1]))
    pairs.append((fa.energy, fb.energy))
    for env in sample_envs(a, n):
        env.update({p: 0.3 for p in a.p_names})
        for x, y in pairs:
            assert evaluate(x, env) == pytest.approx(evaluate(y, env), abs=tol)


class TestDisc:
    def test_orthonormal(self, disc):
        X = disc.full_frame
        for env in sample_envs(disc, 50):
            assert evaluate(disc.metric.pair(X[1], X[1]), env) == pytest.approx(1, abs=1e-12)
            assert abs(evaluate(disc.metric.pair(X[1], X[2]), env)) <= 1e-12

    def test_frobenius_coefficient(self, disc):
        from nonholo.geometry import frobenius_curvature

        D = disc.d_frame
        F = frobenius_curvature(disc.metric, disc.christoffel, D, D[0], D[1])
        env = next(sample_envs(disc, 1))
        assert evaluate(disc.metric.pair(F, disc.dp_frame[0]), env) == pytest.approx(-1 / math.sqrt(2))

    def test_level_plane_has_no_potential_forcing(self):
        from nonholo.mechanics import b_field

        sys = rolling_disc(tau=0.0)
        assert np.all(b_field(sys, [0.3, 0, 1, 1], [0, 0]) == 0)

    @pytest.mark.parametrize("bad", [dict(m=0), dict(R=-1), dict(Js=0), dict(tau=math.pi / 2), dict(tau=-0.1)])
    def test_rejects_bad_parameters(self, bad):
        with pytest.raises(ModelError):
            rolling_disc(**bad)


class TestFiles:
    def test_shipped_file_matches_builtin(self, disc):
        same_system(load_model(disc_model_path()), disc)

    def test_print_round_trip(self, disc):
        same_system(system_from_text(print_model(disc)), disc)

    def test_round_trip_with_parameters(self, disc):
        sys = disc.with_params(m=2.0, tau=0.3)
        same_system(system_from_text(print_model(sys)), sys)

    def test_flat_round_trip(self, flat):
        back = system_from_text(print_model(flat))
        assert back.coords == flat.coords and back.r == 1

    def test_typo_names_line(self):
        text = disc_model_path().read_text().replace("V = m*g*(R - x*sin(tau))", "V = m*g*(R - x*sine(tau))")
        line = next(i for i, s in enumerate(text.splitlines(), 1) if "sine(" in s)
        with pytest.raises(ModelFileError) as info:
            system_from_text(text)
        assert info.value.line == line
        assert f"line {line}" in str(info.value)

    def test_missing_box(self):
        text = disc_model_path().read_text().replace("y in [-10, 10]\n", "")
        with pytest.raises(ModelFileError, match="box"):
            system_from_text(text)

    def test_undeclared_identifier(self):
        text = disc_model_path().read_text().replace("g[3][3] = m", "g[3][3] = mass")
        with pytest.raises(ModelFileError, match="mass"):
            system_from_text(text)

    def test_unknown_section(self):
        with pytest.raises(ModelFileError):
            system_from_text("[chart]\nx\n[colors]\nred\n")

    def test_unknown_key(self):
        text = disc_model_path().read_text().replace("[potential]\n", "[potential]\nW = 1\n")
        with pytest.raises(ModelFileError):
            system_from_text(text)

    def test_empty_interval(self):
        text = disc_model_path().read_text().replace("x in [-10, 10]", "x in [3, 3]")
        with pytest.raises(ModelFileError):
            system_from_text(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelFileError):
            load_model(tmp_path / "nope.mdl")

    def test_resolve(self):
        assert resolve_model("flat_holonomic").n == 3
        assert resolve_model(str(disc_model_path())).name == "disc"

    def test_user_model_gets_orthonormal_frames(self, tmp_path):
        text = """
# a knife edge in the plane
[chart]
x
y
th
[params]
J = 2
[metric]
g[0][0] = 1
g[1][1] = 1
g[2][2] = J
[potential]
V = 0
[distribution]
X[0][0] = cos(th)
X[0][1] = sin(th)
X[1][2] = 1
[box]
x in [-1, 1]
y in [-1, 1]
th in [-3, 3]
"""
        path = tmp_path / "knife.mdl"
        path.write_text(text)
        sys = load_model(path)
        assert (sys.n, sys.k, sys.r) == (3, 2, 1)
        for env in sample_envs(sys, 10):
            for a, X in enumerate(sys.full_frame):
                for b, Y in enumerate(sys.full_frame):
                    assert evaluate(sys.metric.pair(X, Y), env) == pytest.approx(float(a == b), abs=1e-10)
