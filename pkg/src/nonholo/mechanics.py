"""Constrained simple mechanical systems in frame (Poincare) coordinates.

A system carries a metric, a potential, an orthonormal frame ``X_1..X_k`` of
the constraint distribution D and an orthonormal frame ``X_{k+1}..X_n`` of its
complement.  Everything downstream is expressed through the frame connection
coefficients ``C[c][a][b] = G(nabla_{X_a} X_b, X_c)``.

State layout: chart coordinates ``q`` (n), frame velocities ``v`` (k) and
adjoint components ``p`` (n - k).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .expr import (
    ZERO,
    Const,
    Expr,
    Var,
    as_expr,
    compile_function,
    normalize,
    substitute,
)
from .geometry import (
    Domain,
    Frame,
    GeometryError,
    Metric,
    apply_field,
    christoffel_symbols,
    frame_connection_coefficients,
    gram_schmidt_frame,
    orthogonal_complement_frame,
)

DYNAMICS = ("nh", "reg", "sing", "rcv")


class ModelError(GeometryError):
    pass


@dataclass(frozen=True)
class Fields:
    """Symbolic coefficient fields over the state variables."""

    qdot: tuple
    vdot_nh: tuple
    fhat: tuple  # k x (n-k)
    A: tuple  # (n-k) x (n-k)
    b: tuple  # n-k
    T: tuple  # (n-k) x (n-k): pdot = T p (+ b)
    energy: Expr


@dataclass(frozen=True)
class MechanicalSystem:
    name: str
    coords: tuple
    params: Mapping[str, float]
    metric: Metric
    V: Expr
    d_frame: Frame
    dp_frame: Frame
    box: Mapping[str, tuple]
    v_names: tuple
    p_names: tuple
    velocity_box: tuple = (-1.0, 1.0)
    adjoint_box: tuple = (-1.0, 1.0)
    geodesic_weight: float = 1.0
    mutations: frozenset = frozenset()

    # -- sizes and names ---------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def k(self) -> int:
        return len(self.d_frame)

    @property
    def r(self) -> int:
        return len(self.dp_frame)

    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        # frozen apart from memo caches, so sharing is safe
        return self

    @property
    def state_names(self) -> tuple:
        return tuple(self.coords) + tuple(self.v_names) + tuple(self.p_names)

    @property
    def qv_names(self) -> tuple:
        return tuple(self.coords) + tuple(self.v_names)

    @property
    def full_frame(self) -> tuple:
        return tuple(self.d_frame) + tuple(self.dp_frame)

    @property
    def domain(self) -> Domain:
        """Chart box with parameters held at their values."""
        return Domain(dict(self.box), dict(self.params))

    @property
    def state_box(self) -> dict:
        out = dict(self.box)
        out.update({v: tuple(self.velocity_box) for v in self.v_names})
        out.update({p: tuple(self.adjoint_box) for p in self.p_names})
        return out

    def with_params(self, **overrides) -> "MechanicalSystem":
        unknown = set(overrides) - set(self.params)
        if unknown:
            raise ModelError(f"unknown parameters {sorted(unknown)}")
        params = dict(self.params)
        params.update({k: float(v) for k, v in overrides.items()})
        return _copy(self, params=params)

    def with_mutation(self, name: str) -> "MechanicalSystem":
        return _copy(self, mutations=self.mutations | {name})

    # -- geometry ----------------------------------------------------------
    @cached_property
    def christoffel(self):
        return christoffel_symbols(self.metric)

    @cached_property
    def connection(self):
        """``C[c][a][b]`` over the full frame (D first), symbolic in parameters."""
        return frame_connection_coefficients(self.metric, self.christoffel, self.full_frame)

    @cached_property
    def frame_potential(self) -> tuple:
        """``X_A(V)`` for every frame member."""
        return tuple(normalize(apply_field(X, self.V, self.coords)) for X in self.full_frame)

    def _bind(self, e: Expr) -> Expr:
        return normalize(substitute(e, self.params))

    @cached_property
    def bound_connection(self):
        C = self.connection
        return tuple(tuple(tuple(self._bind(x) for x in row) for row in mat) for mat in C)

    @cached_property
    def bound_frames(self) -> tuple:
        return tuple(tuple(self._bind(x) for x in X) for X in self.full_frame)

    @cached_property
    def bound_potential(self) -> Expr:
        return self._bind(self.V)

    # -- coefficient fields ------------------------------------------------
    def _fields(self, bound: bool) -> Fields:
        n, k = self.n, self.k
        C = self.bound_connection if bound else self.connection
        frames = self.bound_frames if bound else self.full_frame
        XV = tuple(self._bind(x) for x in self.frame_potential) if bound else self.frame_potential
        Vexpr = self.bound_potential if bound else self.V
        v = [Var(s) for s in self.v_names]
        D = range(k)
        P = range(k, n)
        w = Const(self.geodesic_weight)

        qdot = tuple(normalize(sum((v[a] * frames[a][i] for a in D), ZERO)) for i in range(n))
        vdot = tuple(
            normalize(-sum((C[c][a][b] * v[a] * v[b] for a in D for b in D), ZERO) - XV[c]) for c in D)
        fhat = tuple(
            tuple(normalize(sum((v[b] * (C[i][c][b] - C[i][b][c]) for b in D), ZERO)) for i in P) for c in D)
        A = tuple(tuple(normalize(sum((v[a] * C[a][i][j] for a in D), ZERO)) for j in P) for i in P)
        b = tuple(
            normalize(w * sum((v[a] * v[bb] * (C[i][a][bb] + C[i][bb][a]) for a in D for bb in D), ZERO) + XV[i])
            for i in P)
        T = tuple(
            tuple(normalize(sum((v[a] * C[j][a][i] for a in D), ZERO) + A[i - k][j - k]) for j in P) for i in P)
        energy = normalize(Const(0.5) * sum((x * x for x in v), ZERO) + Vexpr)
        return Fields(qdot, vdot, fhat, A, b, T, energy)

    @cached_property
    def fields(self) -> Fields:
        """Coefficient fields with parameters left symbolic."""
        return self._fields(bound=False)

    @cached_property
    def bound_fields(self) -> Fields:
        """Coefficient fields with parameter values substituted."""
        return self._fields(bound=True)

    # -- right-hand sides as expressions -----------------------------------
    def rhs_exprs(self, which: str) -> tuple:
        """Time derivatives of the state (bound parameters), as expressions."""
        if which not in DYNAMICS:
            raise ValueError(f"unknown dynamics {which!r}")
        F = self.bound_fields
        if which == "nh":
            return F.qdot + F.vdot_nh
        p = [Var(s) for s in self.p_names]
        r = self.r
        lin = [sum((F.T[i][j] * p[j] for j in range(r)), ZERO) for i in range(r)]
        if which == "sing":
            pdot = [normalize(x) for x in lin]
        else:
            pdot = [normalize(lin[i] + F.b[i]) for i in range(r)]
        if "flip_pdot1" in self.mutations and pdot:
            pdot[0] = normalize(-pdot[0])
        vdot = list(F.vdot_nh)
        if which == "rcv":
            vdot = [normalize(vdot[c] + sum((F.fhat[c][i] * p[i] for i in range(r)), ZERO)) for c in range(self.k)]
        return F.qdot + tuple(vdot) + tuple(pdot)

    def rhs_function(self, which: str, backend: str = "math"):
        """Compiled ``f(*state) -> tuple`` for the chosen dynamics."""
        key = (which, backend)
        cache = self.__dict__.setdefault("_rhs_cache", {})
        if key not in cache:
            names = self.qv_names if which == "nh" else self.state_names
            cache[key] = compile_function(self.rhs_exprs(which), names, backend=backend)
        return cache[key]

    def compiled(self, key: str, exprs, args, backend="math"):
        cache = self.__dict__.setdefault("_fn_cache", {})
        ck = (key, backend, tuple(args))
        if ck not in cache:
            cache[ck] = compile_function(list(exprs), list(args), backend=backend)
        return cache[ck]


def _copy(sys: MechanicalSystem, **changes) -> MechanicalSystem:
    new = replace(sys, **changes)
    keep = ("christoffel", "connection", "frame_potential", "fields")
    if "mutations" in changes:
        keep = keep + ("bound_connection", "bound_frames", "bound_potential", "bound_fields")
    for k in keep:
        if k in sys.__dict__:
            new.__dict__[k] = sys.__dict__[k]
    return new


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def build_system(
    coords: Sequence[str],
    params: Mapping[str, float],
    metric: Sequence[Sequence],
    V,
    distribution: Sequence[Sequence],
    box: Mapping[str, tuple],
    complement: Sequence[Sequence] | None = None,
    v_names: Sequence[str] | None = None,
    p_names: Sequence[str] | None = None,
    velocity_box=(-1.0, 1.0),
    adjoint_box=(-1.0, 1.0),
    geodesic_weight: float = 1.0,
    name: str = "model",
) -> MechanicalSystem:
    """Assemble a system; frames are orthonormalized in input order.

    ``complement`` optionally fixes the spanning fields for the orthogonal
    complement; otherwise it is completed from coordinate fields.
    """
    coords = tuple(coords)
    missing = [c for c in coords if c not in box]
    if missing:
        raise ModelError(f"no box for chart variables {missing}")
    for name_, (lo, hi) in box.items():
        if not lo < hi:
            raise ModelError(f"empty box for {name_}")
    g = Metric(coords, tuple(tuple(as_expr(x) for x in row) for row in metric))
    domain = Domain(dict(box), dict(params))
    g.check_positive_definite(domain)
    V = as_expr(V)
    d_frame = gram_schmidt_frame(g, distribution, domain, role="D")
    if complement is not None:
        dp_frame = gram_schmidt_frame(g, complement, domain, role="Dp", against=list(d_frame))
        if len(d_frame) + len(dp_frame) != len(coords):
            raise ModelError("distribution and complement ranks do not add up to the chart dimension")
    else:
        dp_frame = orthogonal_complement_frame(g, d_frame, domain)
    k, r = len(d_frame), len(dp_frame)
    v_names = tuple(v_names) if v_names else tuple(f"v_{a + 1}" for a in range(k))
    p_names = tuple(p_names) if p_names else tuple(f"p_{i + 1}" for i in range(r))
    if len(v_names) != k or len(p_names) != r:
        raise ModelError("velocity/adjoint name counts do not match frame ranks")
    clash = set(coords) & (set(v_names) | set(p_names) | set(params))
    if clash:
        raise ModelError(f"names used twice: {sorted(clash)}")
    return MechanicalSystem(
        name=name, coords=coords, params=dict(params), metric=g, V=V, d_frame=d_frame,
        dp_frame=dp_frame, box=dict(box), v_names=v_names, p_names=p_names,
        velocity_box=tuple(velocity_box), adjoint_box=tuple(adjoint_box),
        geodesic_weight=float(geodesic_weight))


# ---------------------------------------------------------------------------
# numeric evaluation
# ---------------------------------------------------------------------------

def _qv(sys, q, v):
    return [*np.asarray(q, float), *np.asarray(v, float)]


def b_field(sys: MechanicalSystem, q, v) -> np.ndarray:
    f = sys.compiled("b", sys.bound_fields.b, sys.qv_names)
    return np.array(f(*_qv(sys, q, v)), dtype=float)


def A_field(sys: MechanicalSystem, q, v) -> np.ndarray:
    r = sys.r
    f = sys.compiled("A", [x for row in sys.bound_fields.A for x in row], sys.qv_names)
    return np.array(f(*_qv(sys, q, v)), dtype=float).reshape(r, r)


def fhat_star_matrix(sys: MechanicalSystem, q, v) -> np.ndarray:
    k, r = sys.k, sys.r
    f = sys.compiled("fhat", [x for row in sys.bound_fields.fhat for x in row], sys.qv_names)
    return np.array(f(*_qv(sys, q, v)), dtype=float).reshape(k, r)


def kernel_annihilator_generators(sys: MechanicalSystem) -> list:
    """Rows of the F-hat-star matrix as affine fiber functions with zero offset."""
    from .invariance import AffineFiberFunction

    return [AffineFiberFunction(tuple(row), ZERO) for row in sys.bound_fields.fhat]


def _split(sys, out, with_p):
    out = np.asarray(out, dtype=float)
    n, k = sys.n, sys.k
    parts = (out[:n], out[n:n + k])
    return parts + (out[n + k:],) if with_p else parts


def rhs_nh(sys: MechanicalSystem, q, v):
    """``(qdot, vdot)`` of the nonholonomic dynamics."""
    return _split(sys, sys.rhs_function("nh")(*_qv(sys, q, v)), False)


def _rhs(which):
    def fn(sys: MechanicalSystem, q, v, p):
        state = [*_qv(sys, q, v), *np.asarray(p, float)]
        return _split(sys, sys.rhs_function(which)(*state), True)

    fn.__name__ = f"rhs_{which}"
    return fn


rhs_reg = _rhs("reg")
rhs_reg.__doc__ = "``(qdot, vdot, pdot)`` of the regular adjoint system."
rhs_sing = _rhs("sing")
rhs_sing.__doc__ = "Regular system without the inhomogeneous term in ``pdot``."
rhs_rcv = _rhs("rcv")
rhs_rcv.__doc__ = "Regular system with the adjoint forcing added to ``vdot``."


def energy(sys: MechanicalSystem, q, v) -> float:
    f = sys.compiled("energy", [sys.bound_fields.energy], sys.qv_names)
    return float(f(*_qv(sys, q, v))[0])
