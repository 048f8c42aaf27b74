"""Closed-form reference values for the inclined rolling disc.

Each golden compares a computed quantity against an independent numpy
transcription of the known closed form, at random states and at two
parameter sets.  ``run_goldens`` is what ``nonholo check`` executes.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .expr import ONE, ZERO, compile_function, normalize, parse_expression, partial_derivative, substitute
from .geometry import (
    covariant_derivative,
    frobenius_curvature,
    geodesic_curvature,
    gradient_field,
    gram_schmidt_frame,
    orthogonal_complement_frame,
)
from .mechanics import MechanicalSystem, fhat_star_matrix, kernel_annihilator_generators
from .models import disc_quadratic_generator, rolling_disc

# second parameter set exercises every parameter away from 1
PARAM_SETS = (
    {},
    {"m": 2.0, "R": 0.7, "Js": 1.3, "Jr": 0.6, "g": 9.8, "tau": 0.4},
)
N_POINTS = 100
N_STATES = 200
TOL = 1e-9


@dataclass
class GoldenResult:
    name: str
    passed: bool
    max_error: float
    tol: float
    seconds: float = 0.0
    note: str = ""


# ---------------------------------------------------------------------------
# independent closed forms
# ---------------------------------------------------------------------------

class DiscReference:
    """The disc's frames, connection and dynamics written out by hand."""

    def __init__(self, params):
        self.m, self.R, self.Js, self.Jr = params["m"], params["R"], params["Js"], params["Jr"]
        self.g, self.tau = params["g"], params["tau"]
        self.S = self.Jr + self.m * self.R ** 2
        self.kappa = math.sqrt(self.m) * self.R / (math.sqrt(self.Js) * math.sqrt(self.S))
        self.kappa2 = math.sqrt(self.Jr) / (math.sqrt(self.Js) * math.sqrt(self.S))

    def frames(self, th):
        m, R, Jr, S = self.m, self.R, self.Jr, self.S
        z, one = np.zeros_like(th), np.ones_like(th)
        c, s = np.cos(th), np.sin(th)
        X1 = np.array([one / math.sqrt(self.Js), z, z, z])
        X2 = np.array([z, one / math.sqrt(S), R * c / math.sqrt(S), R * s / math.sqrt(S)])
        X3 = np.array([z, z, s / math.sqrt(m), -c / math.sqrt(m)])
        X4 = np.array([z, -one * math.sqrt(m) * R / (math.sqrt(Jr) * math.sqrt(S)),
                       math.sqrt(Jr) * c / (math.sqrt(m) * math.sqrt(S)),
                       math.sqrt(Jr) * s / (math.sqrt(m) * math.sqrt(S))])
        return [X1, X2, X3, X4]

    def nabla(self, a, b, th):
        """``nabla_{X_a} X_b`` (0-based) as chart components."""
        X = self.frames(th)
        k, k2 = self.kappa, self.kappa2
        table = {(0, 1): -k * X[2], (0, 2): k * X[1] + k2 * X[3], (0, 3): -k2 * X[2]}
        return table.get((a, b), np.zeros_like(X[0]))

    def nh(self, th, vs, vr):
        S, R = self.S, self.R
        return np.array([
            vs / math.sqrt(self.Js),
            vr / math.sqrt(S),
            R * np.cos(th) * vr / math.sqrt(S),
            R * np.sin(th) * vr / math.sqrt(S),
            np.zeros_like(th),
            self.m * self.g * R * math.sin(self.tau) * np.cos(th) / math.sqrt(S),
        ])

    def pdot_sing(self, vs, p1, p2):
        return np.array([self.kappa2 * vs * p2, -self.kappa2 * vs * p1])

    def pdot_reg(self, th, vs, vr, p1, p2):
        sm, st = math.sqrt(self.m), math.sin(self.tau)
        lin = self.pdot_sing(vs, p1, p2)
        return lin + np.array([
            -2 * self.kappa * vs * vr - sm * self.g * st * np.sin(th),
            -sm * math.sqrt(self.Jr) * self.g * st * np.cos(th) / math.sqrt(self.S),
        ])

    def rcv_forcing(self, vs, vr, p1):
        return np.array([-self.kappa * vr * p1, self.kappa * vs * p1])

    def fhat(self, vs, vr):
        z = np.zeros_like(vs)
        return np.array([[-self.kappa * vr, z], [self.kappa * vs, z]])

    def first_lie(self, th, vs, vr, p1, p2):
        S, st = self.S, math.sin(self.tau)
        zeta = self.pdot_reg(th, vs, vr, p1, p2)[0]
        return 2 * self.m * self.g * self.R * st * np.cos(th) / math.sqrt(S) * vr * p1 + (vs ** 2 + vr ** 2) * zeta

    def third_lie_at_rest(self, th):
        st = math.sin(self.tau)
        return (-6 * self.m ** 2.5 * self.g ** 3 * self.R ** 2 * st ** 3 / self.S
                * np.cos(th) ** 2 * np.sin(th))


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------

def _systems(base: MechanicalSystem):
    for ov in PARAM_SETS:
        sys = base.with_params(**ov) if ov else base
        yield sys, DiscReference(sys.params)


def _points(sys, n, rng, extra=()):
    cols = {}
    for c in sys.coords:
        lo, hi = sys.box[c]
        cols[c] = rng.uniform(lo, hi, n)
    for name in (*sys.v_names, *extra):
        cols[name] = rng.uniform(-2.0, 2.0, n)
    return cols


def _values(sys, exprs, pts):
    names = list(pts)
    bound = [normalize(substitute(e, sys.params)) for e in exprs]
    f = compile_function(bound, names, backend="numpy")
    n = len(next(iter(pts.values())))
    return np.array([np.broadcast_to(np.asarray(v, float), (n,)) for v in f(*pts.values())])


def _err(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)), initial=0.0))


# ---------------------------------------------------------------------------
# the goldens
# ---------------------------------------------------------------------------

def potential_slope(base, rng):
    worst = 0.0
    for sys, ref in _systems(base):
        d = partial_derivative(sys.V, "x")
        pts = _points(sys, N_POINTS, rng)
        worst = max(worst, _err(_values(sys, [d], pts)[0], -ref.m * ref.g * math.sin(ref.tau)))
    return worst


def chart_christoffels_vanish(base, rng):
    G = base.christoffel
    return 0.0 if all(x == ZERO for a in G for b in a for x in b) else math.inf


def potential_gradient(base, rng):
    # the printed closed form carries a stray 1/m; it agrees at unit mass only
    sys = base
    ref = DiscReference(sys.params)
    pts = _points(sys, N_POINTS, rng)
    grad = _values(sys, gradient_field(sys.metric, sys.V), pts)
    want = np.zeros_like(grad)
    want[2] = -ref.g * math.sin(ref.tau) / ref.m
    return _err(grad, want)


def distribution_frame(base, rng):
    worst = 0.0
    spanning = [(ONE, ZERO, ZERO, ZERO),
                (ZERO, ONE, parse_expression("R*cos(theta)"), parse_expression("R*sin(theta)"))]
    for sys, ref in _systems(base):
        frame = gram_schmidt_frame(sys.metric, spanning, sys.domain)
        pts = _points(sys, N_POINTS, rng)
        X = ref.frames(pts["theta"])
        for a in range(2):
            worst = max(worst, _err(_values(sys, frame[a], pts), X[a]))
    return worst


def complement_frame_span(base, rng):
    """Mutual projection of the computed complement and the reference pair."""
    worst = 0.0
    for sys, ref in _systems(base):
        comp = orthogonal_complement_frame(sys.metric, sys.d_frame, sys.domain)
        pts = _points(sys, N_POINTS, rng)
        X = ref.frames(pts["theta"])
        G = np.diag([ref.Js, ref.Jr, ref.m, ref.m])
        Y = [_values(sys, f, pts) for f in comp]
        for Z in Y:
            proj = sum(np.einsum("in,ij,jn->n", Z, G, X[c]) * X[c] for c in (2, 3))
            worst = max(worst, _err(proj, Z))
        for c in (2, 3):
            proj = sum(np.einsum("in,ij,jn->n", X[c], G, Z) * Z for Z in Y)
            worst = max(worst, _err(proj, X[c]))
    return worst


def levi_civita_frame_derivatives(base, rng):
    worst = 0.0
    for sys, ref in _systems(base):
        frames = sys.full_frame
        pts = _points(sys, N_POINTS, rng)
        for a in range(4):
            for b in range(4):
                nab = covariant_derivative(sys.christoffel, frames[a], frames[b], sys.coords)
                worst = max(worst, _err(_values(sys, nab, pts), ref.nabla(a, b, pts["theta"])))
    return worst


def _frame_coefficients(sys, pts, rows, cols, over=range(4)):
    C = sys.connection
    exprs = [C[c][a][b] for c in rows for a in over for b in cols]
    return _values(sys, exprs, pts).reshape(len(rows), len(over), len(cols), -1)


def constrained_connection_vanishes(base, rng):
    worst = 0.0
    for sys, _ in _systems(base):
        pts = _points(sys, N_POINTS, rng)
        worst = max(worst, float(np.max(np.abs(_frame_coefficients(sys, pts, (0, 1), (0, 1))))))
    return worst


def complement_connection(base, rng):
    worst = 0.0
    for sys, ref in _systems(base):
        pts = _points(sys, N_POINTS, rng)
        got = _frame_coefficients(sys, pts, (2, 3), (2, 3))  # [c][a][b]
        want = np.zeros_like(got)
        want[1, 0, 0] = ref.kappa2  # nabla_{X1} X3 has X4 component kappa2
        want[0, 0, 1] = -ref.kappa2  # nabla_{X1} X4 has X3 component -kappa2
        worst = max(worst, _err(got, want))
    return worst


def _curvature_check(base, rng, curv, sign):
    worst = 0.0
    for sys, ref in _systems(base):
        pts = _points(sys, N_POINTS, rng)
        X = ref.frames(pts["theta"])
        D = sys.d_frame
        for a in range(2):
            for b in range(2):
                got = _values(sys, curv(sys.metric, sys.christoffel, D, D[a], D[b]), pts)
                if (a, b) == (0, 1):
                    want = -ref.kappa * X[2]
                elif (a, b) == (1, 0):
                    want = sign * -ref.kappa * X[2]
                else:
                    want = np.zeros_like(got)
                worst = max(worst, _err(got, want))
    return worst


def frobenius_curvature_golden(base, rng):
    return _curvature_check(base, rng, frobenius_curvature, -1)


def geodesic_curvature_golden(base, rng):
    return _curvature_check(base, rng, geodesic_curvature, +1)


def complement_curvatures_vanish(base, rng):
    worst = 0.0
    for sys, _ in _systems(base):
        pts = _points(sys, N_POINTS, rng)
        P = sys.dp_frame
        for curv in (frobenius_curvature, geodesic_curvature):
            for a in range(2):
                for b in range(2):
                    worst = max(worst, float(np.max(np.abs(
                        _values(sys, curv(sys.metric, sys.christoffel, P, P[a], P[b]), pts)))))
    return worst


def adjoint_coupling_vanishes(base, rng):
    worst = 0.0
    for sys, _ in _systems(base):
        pts = _points(sys, N_STATES, rng)
        A = [x for row in sys.fields.A for x in row]
        worst = max(worst, float(np.max(np.abs(_values(sys, A, pts)))))
    return worst


def fhat_star_golden(base, rng):
    worst = 0.0
    for sys, ref in _systems(base):
        pts = _points(sys, N_STATES, rng)
        got = _values(sys, [x for row in sys.fields.fhat for x in row], pts).reshape(2, 2, -1)
        worst = max(worst, _err(got, ref.fhat(pts["v_s"], pts["v_r"])))
        # kernel: span X4 off the zero section, everything on it
        for i in range(5):
            q = [pts[c][i] for c in sys.coords]
            v = [pts["v_s"][i], pts["v_r"][i]]
            M = fhat_star_matrix(sys, q, v)
            s = np.linalg.svd(M, compute_uv=False)
            if not (s[0] > 1e-6 and s[1] < 1e-12 and np.linalg.norm(M @ [0.0, 1.0]) < 1e-12):
                return math.inf
            if np.max(np.abs(fhat_star_matrix(sys, q, [0.0, 0.0]))) > 0:
                return math.inf
    return worst


def _rhs_values(sys, which, pts):
    names = sys.qv_names if which == "nh" else sys.state_names
    return _values(sys, sys.rhs_exprs(which), {k: pts[k] for k in names})


def nonholonomic_equations(base, rng):
    worst = 0.0
    for sys, ref in _systems(base):
        pts = _points(sys, N_STATES, rng)
        got = _rhs_values(sys, "nh", pts)
        worst = max(worst, _err(got, ref.nh(pts["theta"], pts["v_s"], pts["v_r"])))
    return worst


def _adjoint_check(base, rng, which):
    worst = 0.0
    for sys, ref in _systems(base):
        pts = _points(sys, N_STATES, rng, extra=sys.p_names)
        th, vs, vr, p1, p2 = (pts[k] for k in ("theta", "v_s", "v_r", "p_1", "p_2"))
        got = _rhs_values(sys, which, pts)
        nh = ref.nh(th, vs, vr)
        if which == "rcv":
            nh[4:6] += ref.rcv_forcing(vs, vr, p1)
        pdot = ref.pdot_sing(vs, p1, p2) if which == "sing" else ref.pdot_reg(th, vs, vr, p1, p2)
        worst = max(worst, _err(got, np.vstack([nh, pdot])))
    return worst


def regular_adjoint_equations(base, rng):
    return _adjoint_check(base, rng, "reg")


def singular_adjoint_equations(base, rng):
    return _adjoint_check(base, rng, "sing")


def regular_variational_equations(base, rng):
    return _adjoint_check(base, rng, "rcv")


def first_lie_derivative(base, rng):
    from .invariance import iterated_lie

    worst = 0.0
    for sys, ref in _systems(base):
        f = iterated_lie(sys, disc_quadratic_generator(sys), 1, "reg")
        pts = _points(sys, N_STATES, rng, extra=sys.p_names)
        got = _values(sys, [f.as_expr(sys.p_names)], pts)[0]
        want = ref.first_lie(*(pts[k] for k in ("theta", "v_s", "v_r", "p_1", "p_2")))
        worst = max(worst, _err(got, want))
    return worst


def lie_derivatives_on_rest_stratum(base, rng):
    """Orders 2 and 3 restricted to ``p_1 = v_s = v_r = 0``."""
    from .invariance import iterated_lie

    worst = 0.0
    for sys, ref in _systems(base):
        pts = _points(sys, N_STATES, rng, extra=sys.p_names)
        for k in ("v_s", "v_r", "p_1"):
            pts[k] = np.zeros_like(pts[k])
        gen = disc_quadratic_generator(sys)
        second = _values(sys, [iterated_lie(sys, gen, 2, "reg").as_expr(sys.p_names)], pts)[0]
        third = _values(sys, [iterated_lie(sys, gen, 3, "reg").as_expr(sys.p_names)], pts)[0]
        worst = max(worst, _err(second, 0.0), _err(third, ref.third_lie_at_rest(pts["theta"])))
    return worst


def _search(sys, which, stratum, n, seed):
    from .invariance import invariant_variety_search, sample_states

    X = sample_states(sys, n, stratum, seed=seed)
    return invariant_variety_search(sys, kernel_annihilator_generators(sys), which, samples=X, seed=seed)


def level_spin_free_fiber(base, rng):
    """Level plane, ``v_s = 0``: fiber ``{p_1 = 0}``, one-dimensional, verified."""
    sys = base.with_params(tau=0.0)
    var = _search(sys, "reg", ["v_s=0"], 4, int(rng.integers(2 ** 31)))
    worst = 0.0
    for s in var.samples:
        if s.label != "verified" or s.solution.dim != 1:
            return math.inf
        worst = max(worst, abs(s.solution.p_star[0]), abs(s.solution.basis[0, 0]))
    return worst


def inclined_generic_fibers_empty(base, rng):
    """Inclined plane, generic samples (``v_s != 0``): empty by order 3."""
    sys = base.with_params(tau=math.pi / 6)
    var = _search(sys, "reg", [], 8, int(rng.integers(2 ** 31)))
    ok = all(s.solution.empty and s.order <= 3 for s in var.samples)
    return 0.0 if ok else math.inf


def singular_spin_free_fiber(base, rng):
    sys = base.with_params(tau=0.5236)
    var = _search(sys, "sing", ["v_s=0"], 4, int(rng.integers(2 ** 31)))
    return 0.0 if all(s.label == "verified" for s in var.samples) else math.inf


def admissibility_direction_condition(base, rng):
    from .invariance import admissibility_check

    sys = base.with_params(tau=0.0)
    var = _search(sys, "reg", ["v_s=0"], 3, int(rng.integers(2 ** 31)))
    rep = admissibility_check(sys, var, kernel_annihilator_generators(sys))
    return max((r["a_residual"] for r in rep), default=math.inf)


GOLDENS: dict[str, tuple[Callable, float]] = {
    "potential_slope": (potential_slope, TOL),
    "chart_christoffels_vanish": (chart_christoffels_vanish, TOL),
    "potential_gradient": (potential_gradient, TOL),
    "distribution_frame": (distribution_frame, TOL),
    "complement_frame_span": (complement_frame_span, TOL),
    "levi_civita_frame_derivatives": (levi_civita_frame_derivatives, TOL),
    "constrained_connection_vanishes": (constrained_connection_vanishes, TOL),
    "complement_connection": (complement_connection, TOL),
    "frobenius_curvature": (frobenius_curvature_golden, TOL),
    "geodesic_curvature": (geodesic_curvature_golden, TOL),
    "complement_curvatures_vanish": (complement_curvatures_vanish, TOL),
    "adjoint_coupling_vanishes": (adjoint_coupling_vanishes, TOL),
    "fhat_star_matrix": (fhat_star_golden, TOL),
    "nonholonomic_equations": (nonholonomic_equations, TOL),
    "regular_adjoint_equations": (regular_adjoint_equations, TOL),
    "singular_adjoint_equations": (singular_adjoint_equations, TOL),
    "regular_variational_equations": (regular_variational_equations, TOL),
    "first_lie_derivative": (first_lie_derivative, 1e-8),
    "lie_derivatives_on_rest_stratum": (lie_derivatives_on_rest_stratum, 1e-8),
    "level_spin_free_fiber": (level_spin_free_fiber, 1e-8),
    "inclined_generic_fibers_empty": (inclined_generic_fibers_empty, 0.5),
    "singular_spin_free_fiber": (singular_spin_free_fiber, 0.5),
    "admissibility_direction_condition": (admissibility_direction_condition, 1e-8),
}


def run_goldens(seed: int = 0, system: MechanicalSystem | None = None, names=None) -> list[GoldenResult]:
    """Run the named goldens (all by default) against ``system`` (the default disc)."""
    base = system if system is not None else rolling_disc()
    out = []
    for name in names or GOLDENS:
        fn, tol = GOLDENS[name]
        rng = np.random.default_rng([seed, len(out)])
        t0 = time.perf_counter()
        try:
            err = float(fn(base, rng))
            note = ""
        except Exception as exc:  # a crash is a failure, reported by name
            err, note = math.inf, f"{type(exc).__name__}: {exc}"
        out.append(GoldenResult(name, err <= tol, err, tol, time.perf_counter() - t0, note))
    return out
