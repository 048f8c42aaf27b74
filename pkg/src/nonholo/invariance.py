"""Invariant affine subbundle varieties inside the kernel of F-hat-star.

An affine fiber function ``f = mu . p + c`` (coefficients over the state
``(q, v)``) is pushed through the Lie derivative along the regular or
singular adjoint dynamics.  Stacking the values of ``f_j, L f_j, L^2 f_j, ...``
at a sample state gives an affine system in ``p`` whose solution set is the
fiber of the candidate invariant variety over that state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator

from .expr import (
    DEFAULT_SEED,
    ZERO,
    Expr,
    ExpressionSizeError,
    Var,
    as_expr,
    compile_function,
    directional_derivative,
    free_symbols,
    normalize,
    parse_expression,
    poly_size,
)
from .jets import Jet, flow_series
from .mechanics import MechanicalSystem

SIZE_GUARD = 200_000
WHICH = ("reg", "sing")


# ---------------------------------------------------------------------------
# affine fiber functions and the Lie step
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineFiberFunction:
    """``sum_i mu[i] p_i + c`` with ``mu`` and ``c`` over ``(q, v)``."""

    mu: tuple
    c: Expr = ZERO

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(as_expr(m) for m in self.mu))
        object.__setattr__(self, "c", as_expr(self.c))

    def as_expr(self, p_names: Sequence[str]) -> Expr:
        acc = self.c
        for m, p in zip(self.mu, p_names):
            if m != ZERO:
                acc = acc + m * Var(p)
        return acc

    def size(self) -> int:
        return sum(poly_size(m) for m in self.mu) + poly_size(self.c)

    def is_zero(self) -> bool:
        return self.c == ZERO and all(m == ZERO for m in self.mu)


def _check_which(which):
    if which not in WHICH:
        raise ValueError(f"which must be one of {WHICH}, got {which!r}")


def _x0_field(sys: MechanicalSystem) -> dict:
    F = sys.bound_fields
    field_ = dict(zip(sys.coords, F.qdot))
    field_.update(zip(sys.v_names, F.vdot_nh))
    return field_


def lie_step(sys: MechanicalSystem, f: AffineFiberFunction, which: str = "reg") -> AffineFiberFunction:
    """One Lie derivative along the adjoint dynamics.

    ``mu'_j = X0(mu_j) + sum_i mu_i T_ij`` and ``c' = X0(c) + <mu, b>`` (the
    ``b`` term only for ``reg``), where ``pdot = T p + b``.
    """
    _check_which(which)
    F = sys.bound_fields
    X0 = _x0_field(sys)
    r = sys.r
    mu = []
    for j in range(r):
        acc = directional_derivative(f.mu[j], X0)
        for i in range(r):
            if f.mu[i] != ZERO and F.T[i][j] != ZERO:
                acc = acc + f.mu[i] * F.T[i][j]
        mu.append(normalize(acc))
    c = directional_derivative(f.c, X0)
    if which == "reg":
        for i in range(r):
            if f.mu[i] != ZERO and F.b[i] != ZERO:
                c = c + f.mu[i] * F.b[i]
    return AffineFiberFunction(tuple(mu), normalize(c))


def _tower(sys, f, which):
    cache = sys.__dict__.setdefault("_lie_towers", {})
    key = (f, which)
    if key not in cache:
        cache[key] = [f]
    return cache[key]


def iterated_lie(sys: MechanicalSystem, f: AffineFiberFunction, k: int, which: str = "reg",
                 max_nodes: int = SIZE_GUARD) -> AffineFiberFunction:
    """``(L_k f, c_k f)`` as a single affine fiber function; cached per system."""
    if k < 0:
        raise ValueError("order must be nonnegative")
    _check_which(which)
    tower = _tower(sys, f, which)
    while len(tower) <= k:
        nxt = lie_step(sys, tower[-1], which)
        size = nxt.size()
        if size > max_nodes:
            raise ExpressionSizeError(
                f"order-{len(tower)} Lie derivative has ~{size} nodes (cap {max_nodes}); "
                "use the numeric jet engine instead")
        tower.append(nxt)
    return tower[k]


def c_direct(sys: MechanicalSystem, f: AffineFiberFunction, k: int, which: str = "reg",
             max_nodes: int = SIZE_GUARD) -> Expr:
    """Offset of ``L^k f`` (for ``f`` with zero offset) from the direct sum formula.

    ``c_k = sum_{j=1..k} X0^(j-1) <L_{k-j} mu, b>``.
    """
    if k < 1:
        raise ValueError("order must be at least 1")
    _check_which(which)
    if which == "sing":
        return ZERO
    F = sys.bound_fields
    X0 = _x0_field(sys)
    total = ZERO
    for j in range(1, k + 1):
        L = iterated_lie(sys, AffineFiberFunction(f.mu, ZERO), k - j, which, max_nodes)
        h = normalize(sum((m * b for m, b in zip(L.mu, F.b) if m != ZERO), ZERO))
        for _ in range(j - 1):
            h = directional_derivative(h, X0)
            if poly_size(h) > max_nodes:
                raise ExpressionSizeError("direct-sum term exceeds the node cap")
        total = total + h
    return normalize(total)


def _qv_samples(sys, n, seed):
    rng = np.random.default_rng(seed)
    box = sys.state_box
    return np.column_stack([rng.uniform(*box[name], size=n) for name in sys.qv_names])


def _eval_many(exprs, names, X):
    f = compile_function(list(exprs), list(names), backend="numpy")
    cols = [X[:, i] for i in range(X.shape[1])]
    out = f(*cols)
    return np.array([np.broadcast_to(np.asarray(o, float), (X.shape[0],)) for o in out])


def recursion_identity_check(sys: MechanicalSystem, f: AffineFiberFunction, k: int, l: int,
                             which: str = "reg", samples: int = 50, seed: int = DEFAULT_SEED) -> float:
    """Max over sampled states of ``|c_{k+l} - c_l(L_k f) - X0^l c_k|``."""
    base = AffineFiberFunction(f.mu, ZERO)
    ck_l = iterated_lie(sys, base, k + l, which).c
    Lk = iterated_lie(sys, base, k, which)
    cl_of_Lk = iterated_lie(sys, AffineFiberFunction(Lk.mu, ZERO), l, which).c
    h = Lk.c
    X0 = _x0_field(sys)
    for _ in range(l):
        h = directional_derivative(h, X0)
    X = _qv_samples(sys, samples, seed)
    vals = _eval_many([ck_l, cl_of_Lk, h], sys.qv_names, X)
    return float(np.max(np.abs(vals[0] - vals[1] - vals[2])))


def numeric_lie_derivatives(sys: MechanicalSystem, f: AffineFiberFunction, qv, order: int,
                            which: str = "reg") -> np.ndarray:
    """Rows ``(mu_k, c_k)`` of ``L^k f`` at one state for ``k = 0..order``.

    Computed from Taylor jets of the adjoint flow (no symbolic towers); the
    flow is affine in ``p``, so runs at ``p = 0`` and ``p = e_i`` suffice.
    Returns an array of shape ``(order + 1, r + 1)``.
    """
    _check_which(which)
    r = sys.r
    rhs = sys.rhs_function(which, backend="jet")
    fexpr = f.as_expr(sys.p_names)
    fj = sys.compiled(("jetf", f), [fexpr], sys.state_names, backend="jet")
    fact = np.array([math.factorial(j) for j in range(order + 1)], dtype=float)
    qv = list(np.asarray(qv, float))

    def run(p):
        series = flow_series(rhs, qv + list(p), order)
        val = fj(*[Jet(s) for s in series])[0]
        c = val.c if isinstance(val, Jet) else np.r_[float(val), np.zeros(order)]
        return c * fact

    base = run(np.zeros(r))
    out = np.zeros((order + 1, r + 1))
    out[:, r] = base
    for i in range(r):
        e = np.zeros(r)
        e[i] = 1.0
        out[:, i] = run(e) - base
    return out


# ---------------------------------------------------------------------------
# per-fiber affine solve
# ---------------------------------------------------------------------------

@dataclass
class AffineSolutionSet:
    status: str  # "empty" | "nonempty"
    p_star: np.ndarray
    basis: np.ndarray  # (r, d) orthonormal columns
    residual: float

    @property
    def empty(self) -> bool:
        return self.status == "empty"

    @property
    def dim(self) -> int:
        return -1 if self.empty else self.basis.shape[1]

    def same_as(self, other: "AffineSolutionSet", tol: float = 1e-8) -> bool:
        if self.empty or other.empty:
            return self.empty and other.empty
        if self.dim != other.dim:
            return False
        Pa = self.basis @ self.basis.T
        Pb = other.basis @ other.basis.T
        if np.max(np.abs(Pa - Pb), initial=0.0) > tol:
            return False
        scale = 1.0 + max(np.linalg.norm(self.p_star), np.linalg.norm(other.p_star))
        return np.linalg.norm(self.p_star - other.p_star) <= tol * scale


def fiber_affine_solve(rows, r: int | None = None, rank_tol: float = 1e-8) -> AffineSolutionSet:
    """Solve the stacked conditions ``mu . p + c = 0``.

    ``rows`` is an array of shape ``(m, r + 1)`` (last column the offsets).
    Rows below ``rank_tol`` times the largest row norm (floored at 1) are
    dropped, the rest normalized.  Empty iff the least-squares residual
    exceeds ``rank_tol * (1 + sqrt(m))``.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.size == 0:
        if r is None:
            raise ValueError("need r for an empty row set")
        return AffineSolutionSet("nonempty", np.zeros(r), np.eye(r), 0.0)
    rows = rows.reshape(-1, rows.shape[-1])
    r = rows.shape[1] - 1
    norms = np.linalg.norm(rows, axis=1)
    keep = norms > rank_tol * max(1.0, float(norms.max(initial=0.0)))
    rows = rows[keep] / norms[keep, None]
    if rows.shape[0] == 0:
        return AffineSolutionSet("nonempty", np.zeros(r), np.eye(r), 0.0)
    M, c = rows[:, :r], rows[:, r]
    U, s, Vt = np.linalg.svd(M, full_matrices=True)
    rank = int(np.sum(s > rank_tol * max(1.0, s[0] if s.size else 0.0))) if s.size else 0
    if rank:
        p_star = -Vt[:rank].T @ ((U[:, :rank].T @ c) / s[:rank])
    else:
        p_star = np.zeros(r)
    residual = float(np.linalg.norm(M @ p_star + c))
    if residual > rank_tol * (1.0 + math.sqrt(rows.shape[0])):
        return AffineSolutionSet("empty", p_star, np.zeros((r, 0)), residual)
    return AffineSolutionSet("nonempty", p_star, Vt[rank:].T.copy(), residual)


# ---------------------------------------------------------------------------
# stratum sampling
# ---------------------------------------------------------------------------

def parse_predicate(text) -> Expr:
    """``"lhs = rhs"`` or a bare expression, meaning ``expr = 0``."""
    if isinstance(text, Expr):
        return text
    if "=" in text:
        lhs, rhs = text.split("=", 1)
        return parse_expression(lhs) - parse_expression(rhs)
    return parse_expression(text)


def sample_states(sys: MechanicalSystem, n: int, predicates: Sequence = (), seed: int = DEFAULT_SEED,
                  box: Mapping[str, tuple] | None = None, max_tries: int = 50) -> np.ndarray:
    """``n`` states ``(q, v)`` uniform in the box, projected onto ``predicates = 0``.

    Projection is a bounded nonlinear least-squares solve from each random
    start; starts that do not reach a residual of 1e-12 are redrawn.
    Components within 1e-12 of zero are set to exactly zero when that does
    not increase the residual.
    """
    names = sys.qv_names
    bx = dict(sys.state_box)
    bx.update(box or {})
    lo = np.array([bx[k][0] for k in names])
    hi = np.array([bx[k][1] for k in names])
    rng = np.random.default_rng(seed)
    preds = [normalize(parse_predicate(p)) for p in predicates]
    for e in preds:
        extra = free_symbols(e) - set(names)
        if extra:
            raise ValueError(f"predicate uses unknown names {sorted(extra)}")
    if not preds:
        return lo + (hi - lo) * rng.random((n, len(names)))
    f = compile_function(preds, names)
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries * n:
            raise RuntimeError("could not project samples onto the stratum")
        x0 = lo + (hi - lo) * rng.random(len(names))
        res = least_squares(lambda x: np.asarray(f(*x), float), x0, bounds=(lo, hi),
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, method="trf")
        if np.max(np.abs(res.fun)) <= 1e-12:
            # land exactly on coordinate planes: the stratum is invariant only in
            # exact arithmetic and rounding-level offsets can grow along the flow
            x = np.where(np.abs(res.x) <= 1e-12, 0.0, res.x)
            if np.max(np.abs(np.asarray(f(*x), float))) > np.max(np.abs(res.fun)):
                x = res.x
            out.append(x)
    return np.array(out)


# ---------------------------------------------------------------------------
# the stabilizing search
# ---------------------------------------------------------------------------

@dataclass
class SampleResult:
    state: np.ndarray
    solution: AffineSolutionSet
    order: int  # first order at which the final set was reached
    stabilized: bool
    label: str  # empty | candidate | verified | unverified | unstabilized
    certificate: float = float("nan")
    history: list = field(default_factory=list)  # fiber dim per order (-1 empty)

    @property
    def nonempty(self) -> bool:
        return not self.solution.empty


@dataclass
class StratifiedVariety:
    which: str
    names: tuple
    samples: list
    n_max: int
    engine: str
    conditions: list = field(default_factory=list)  # AffineFiberFunctions per order, if symbolic

    def strata(self) -> list:
        """Summary grouped by (status, fiber dimension)."""
        groups: dict = {}
        for s in self.samples:
            key = ("empty" if s.solution.empty else "nonempty", s.solution.dim)
            g = groups.setdefault(key, {"status": key[0], "dim": key[1], "count": 0, "labels": {},
                                        "max_order": 0, "max_certificate": 0.0})
            g["count"] += 1
            g["labels"][s.label] = g["labels"].get(s.label, 0) + 1
            g["max_order"] = max(g["max_order"], s.order)
            if not math.isnan(s.certificate):
                g["max_certificate"] = max(g["max_certificate"], s.certificate)
        return [groups[k] for k in sorted(groups, key=lambda k: (k[0], k[1]))]

    @property
    def all_stabilized(self) -> bool:
        return all(s.stabilized for s in self.samples)


def _nontrivial(sol: AffineSolutionSet, which: str, tol: float) -> AffineSolutionSet:
    """For the linear (singular) system the zero section always solves; only
    fibers with a direction or a nonzero point count."""
    if which == "sing" and not sol.empty and sol.dim == 0 and np.linalg.norm(sol.p_star) <= tol:
        return AffineSolutionSet("empty", sol.p_star, sol.basis, sol.residual)
    return sol


class _RowSource:
    """Rows of ``L^k g_j`` at the sample states, symbolic when it fits."""

    def __init__(self, sys, generators, which, X, engine, max_nodes):
        self.sys, self.gens, self.which, self.X = sys, list(generators), which, X
        self.engine = engine
        self.max_nodes = max_nodes
        self.cache: dict = {}
        self.jet_rows: dict = {}
        self.jet_order = -1

    def _symbolic(self, k):
        fs = [iterated_lie(self.sys, g, k, self.which, self.max_nodes) for g in self.gens]
        exprs = [e for f in fs for e in (*f.mu, f.c)]
        vals = _eval_many(exprs, self.sys.qv_names, self.X)  # (gens*(r+1), m)
        r = self.sys.r
        return vals.reshape(len(self.gens), r + 1, -1).transpose(2, 0, 1)  # (m, gens, r+1)

    def _jets(self, k, n_max):
        if k > self.jet_order:
            order = n_max
            for i, x in enumerate(self.X):
                for j, g in enumerate(self.gens):
                    self.jet_rows[(i, j)] = numeric_lie_derivatives(self.sys, g, x, order, self.which)
            self.jet_order = order
        m, r = len(self.X), self.sys.r
        out = np.empty((m, len(self.gens), r + 1))
        for i in range(m):
            for j in range(len(self.gens)):
                out[i, j] = self.jet_rows[(i, j)][k]
        return out

    def rows(self, k, n_max):
        if k not in self.cache:
            if self.engine in ("symbolic", "auto"):
                try:
                    self.cache[k] = self._symbolic(k)
                except ExpressionSizeError:
                    if self.engine == "symbolic":
                        raise
                    self.engine = "jet"
            if k not in self.cache:
                self.cache[k] = self._jets(k, n_max)
        return self.cache[k]


def invariant_variety_search(sys: MechanicalSystem, generators: Sequence[AffineFiberFunction], which: str = "reg",
                             n_max: int = 8, samples=None, rank_tol: float = 1e-8, patience: int = 2,
                             engine: str = "auto", certify: bool = True, t_cert: float = 2.0,
                             cert_dt: float = 1e-3, cert_tol: float = 1e-6, seed: int = DEFAULT_SEED,
                             max_nodes: int = SIZE_GUARD) -> StratifiedVariety:
    """Largest affine fiber cut out by ``L^k g_j = 0`` for ``k <= K`` at each sample.

    ``samples`` is an array of ``(q, v)`` states or a count (uniform in the
    box).  ``K`` grows until the solution set is unchanged for ``patience``
    consecutive orders or becomes empty; samples still changing at ``n_max``
    are flagged ``unstabilized``.  Nonempty fibers are ``candidate``s; with
    ``certify`` the dynamics is integrated from each fiber point (and the
    point shifted along each fiber direction) over ``[0, t_cert]`` and the
    sample becomes ``verified`` if every stacked condition stays below
    ``cert_tol``.
    """
    _check_which(which)
    if not generators:
        raise ValueError("need at least one generator")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if engine not in ("auto", "symbolic", "jet"):
        raise ValueError("engine must be auto, symbolic or jet")
    if samples is None:
        samples = 32
    X = _qv_samples(sys, samples, seed) if np.isscalar(samples) else np.atleast_2d(np.asarray(samples, float))
    if X.shape[1] != len(sys.qv_names):
        raise ValueError(f"samples need {len(sys.qv_names)} columns ({', '.join(sys.qv_names)})")
    src = _RowSource(sys, generators, which, X, engine, max_nodes)
    m, r = len(X), sys.r
    stacked = [np.zeros((0, r + 1)) for _ in range(m)]
    prev = [None] * m
    streak = [0] * m
    first_equal = [0] * m
    done = [False] * m
    results: list = [None] * m
    hist = [[] for _ in range(m)]
    for K in range(n_max + 1):
        active = [i for i in range(m) if not done[i]]
        if not active:
            break
        rows = src.rows(K, n_max)
        for i in active:
            stacked[i] = np.vstack([stacked[i], rows[i]])
            sol = _nontrivial(fiber_affine_solve(stacked[i], r, rank_tol), which, 1e-8)
            hist[i].append(sol.dim)
            if prev[i] is not None and sol.same_as(prev[i]):
                streak[i] += 1
            else:
                streak[i] = 0
                first_equal[i] = K
            prev[i] = sol
            if sol.empty or streak[i] >= patience:
                done[i] = True
                results[i] = SampleResult(X[i], sol, first_equal[i], True,
                                          "empty" if sol.empty else "candidate", history=hist[i])
    for i in range(m):
        if results[i] is None:
            results[i] = SampleResult(X[i], prev[i], first_equal[i], False, "unstabilized", history=hist[i])
    conditions = []
    if src.engine != "jet":
        top = max(s.order + patience for s in results)
        top = min(top, n_max)
        conditions = [iterated_lie(sys, g, k, which, max_nodes) for k in range(top + 1) for g in generators]
    variety = StratifiedVariety(which, sys.qv_names, results, n_max, src.engine, conditions)
    if certify:
        for s in results:
            if s.label == "candidate":
                s.certificate = invariance_certificate(sys, variety, s, t_cert, cert_dt, generators)
                s.label = "verified" if s.certificate <= cert_tol else "unverified"
    return variety


def invariance_certificate(sys, variety: StratifiedVariety, sample: SampleResult, t_end: float = 2.0,
                           dt: float = 1e-3, generators=()) -> float:
    """Max stacked-condition value along the flow from the fiber point(s)."""
    from .odesim import integrate

    sol = sample.solution
    starts = [sol.p_star] + [sol.p_star + sol.basis[:, j] for j in range(sol.basis.shape[1])]
    K = min(sample.order + 2, variety.n_max)
    worst = 0.0
    for p0 in starts:
        traj = integrate(sys, variety.which, np.r_[sample.state, p0], t_end, dt)
        if traj.blowup:
            return float("inf")
        if variety.conditions:
            conds = [f for f in variety.conditions]
            exprs = [f.as_expr(sys.p_names) for f in conds]
            vals = sys.compiled(("cert", tuple(conds)), exprs, sys.state_names, backend="numpy")(
                *[traj.states[:, j] for j in range(traj.states.shape[1])])
            vals = np.array([np.broadcast_to(np.asarray(v, float), traj.t.shape) for v in vals])
            worst = max(worst, float(np.max(np.abs(vals))))
        else:
            idx = np.linspace(0, len(traj.t) - 1, 41).astype(int)
            for t_i in idx:
                st = traj.states[t_i]
                for g in generators:
                    rows = numeric_lie_derivatives(sys, g, st[:len(sys.qv_names)], K, variety.which)
                    vals = rows[:, :-1] @ st[len(sys.qv_names):] + rows[:, -1]
                    worst = max(worst, float(np.max(np.abs(vals))))
    return worst


# ---------------------------------------------------------------------------
# estimator facade
# ---------------------------------------------------------------------------

class InvariantVarietySearch(BaseEstimator):
    """Estimator-style wrapper around :func:`invariant_variety_search`.

    ``fit(X)`` runs the search at the rows of ``X`` (states ``(q, v)``) and
    stores ``variety_``.  Nothing is learned that generalizes across states,
    so ``transform`` and ``predict`` rerun the per-sample search on new input
    unless it is the fitted array.
    """

    def __init__(self, system=None, generators="rows", which="reg", n_max=8, rank_tol=1e-8,
                 patience=2, engine="auto", certify=True, seed=DEFAULT_SEED):
        self.system = system
        self.generators = generators
        self.which = which
        self.n_max = n_max
        self.rank_tol = rank_tol
        self.patience = patience
        self.engine = engine
        self.certify = certify
        self.seed = seed

    def _generators(self):
        from .mechanics import kernel_annihilator_generators

        if self.generators == "rows":
            return kernel_annihilator_generators(self.system)
        if isinstance(self.generators, str):
            raise ValueError(f"unknown generator choice {self.generators!r}")
        return list(self.generators)

    def _validate(self, X):
        if self.system is None:
            raise ValueError("system is required")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.ndim != 2 or X.shape[1] != len(self.system.qv_names):
            raise ValueError(f"X must have shape (n_samples, {len(self.system.qv_names)})")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        return X

    def _run(self, X):
        return invariant_variety_search(self.system, self._generators(), self.which, self.n_max, X,
                                        self.rank_tol, self.patience, self.engine, self.certify,
                                        seed=self.seed)

    def fit(self, X, y=None):
        X = self._validate(X)
        self.variety_ = self._run(X)
        self.X_fit_ = X
        self.n_features_in_ = X.shape[1]
        return self

    def _variety_for(self, X):
        X = self._validate(X)
        if hasattr(self, "X_fit_") and X.shape == self.X_fit_.shape and np.array_equal(X, self.X_fit_):
            return self.variety_
        return self._run(X)

    def transform(self, X):
        """Fiber dimension per sample (``-1`` for an empty fiber)."""
        return np.array([s.solution.dim for s in self._variety_for(X).samples])

    def predict(self, X):
        """True where the fiber is nonempty."""
        return np.array([s.nonempty for s in self._variety_for(X).samples])


# ---------------------------------------------------------------------------
# admissibility and the formal-integrability hypotheses
# ---------------------------------------------------------------------------

def admissibility_check(sys: MechanicalSystem, variety: StratifiedVariety, generators, tol: float = 1e-8) -> list:
    """Per nonempty sample: (a) ``fhat . A . B`` vanishes for the fiber
    directions ``B``; (b) the transported generator coefficients lie in the
    span of the order-0 and order-1 rows."""
    from .mechanics import A_field, fhat_star_matrix

    F = sys.bound_fields
    X0 = _x0_field(sys)
    transported = []
    for g in generators:
        mu = []
        for j in range(sys.r):
            acc = directional_derivative(g.mu[j], X0)
            for i in range(sys.r):
                t_ij = normalize(F.T[i][j] - F.A[i][j])
                if g.mu[i] != ZERO and t_ij != ZERO:
                    acc = acc + g.mu[i] * t_ij
            mu.append(normalize(acc))
        transported.append(mu)
    flat = [e for mu in transported for e in mu]
    order1 = [iterated_lie(sys, g, 1, variety.which) for g in generators]
    delta1 = [e for g, h in zip(generators, order1) for e in (*g.mu, *h.mu)]
    report = []
    for s in variety.samples:
        if s.solution.empty:
            continue
        q, v = s.state[:sys.n], s.state[sys.n:]
        B = s.solution.basis
        a_res = float(np.max(np.abs(fhat_star_matrix(sys, q, v) @ A_field(sys, q, v) @ B), initial=0.0))
        env = dict(zip(sys.qv_names, s.state))
        vals = np.array(compile_function(flat, sys.qv_names)(*s.state), float).reshape(len(generators), sys.r)
        rows = np.array(compile_function(delta1, sys.qv_names)(*s.state), float).reshape(-1, sys.r)
        b_res = 0.0
        for w in vals:
            if np.linalg.norm(w) <= tol:
                continue
            if not np.any(np.linalg.norm(rows, axis=1) > tol):
                b_res = max(b_res, float(np.linalg.norm(w)))
                continue
            coef, *_ = np.linalg.lstsq(rows.T, w, rcond=None)
            b_res = max(b_res, float(np.linalg.norm(rows.T @ coef - w) / np.linalg.norm(w)))
        del env
        report.append({"state": s.state.tolist(), "a_residual": a_res, "b_residual": b_res,
                       "passed": bool(a_res <= tol and b_res <= tol)})
    return report


@dataclass
class NonvanishingReport:
    passed: bool
    min_norm: float
    argmin: dict


def spencer_condition_i(field_exprs: Sequence, names: Sequence[str], box: Mapping[str, tuple],
                        samples: int = 256, tol: float = 1e-8, seed: int = DEFAULT_SEED,
                        starts: int = 8) -> NonvanishingReport:
    """Whether the vector field is nowhere vanishing on the box.

    The minimum of ``|X0|`` is located by sampling followed by bounded
    least-squares polishing of the components from the best samples.
    """
    names = list(names)
    f = compile_function(list(field_exprs), names, backend="numpy")
    lo = np.array([box[k][0] for k in names], float)
    hi = np.array([box[k][1] for k in names], float)
    rng = np.random.default_rng(seed)
    P = lo + (hi - lo) * rng.random((samples, len(names)))
    vals = np.array([np.broadcast_to(np.asarray(v, float), (samples,)) for v in f(*P.T)])
    norms = np.linalg.norm(vals, axis=0)
    best_x, best = P[int(np.argmin(norms))], float(norms.min())
    g = compile_function(list(field_exprs), names)
    for idx in np.argsort(norms)[:starts]:
        res = least_squares(lambda x: np.asarray(g(*x), float), P[idx], bounds=(lo, hi),
                            xtol=1e-15, ftol=1e-15, gtol=1e-15)
        val = float(np.linalg.norm(res.fun))
        if val < best:
            best, best_x = val, res.x
    return NonvanishingReport(best > tol, best, dict(zip(names, map(float, best_x))))


def spencer_condition_ii(omegas: Sequence, perp_projector, X0: Sequence, xi: Sequence, coords: Sequence[str],
                         point: Mapping[str, float], tol: float = 1e-8) -> float:
    """Antisymmetric part of ``P_perp nabla_i P_perp nabla_j xi`` at a point.

    The bundle is trivial of rank ``r`` with connection ``nabla_i s =
    d_i s + omegas[i] s`` (one ``r x r`` matrix of expressions per chart
    coordinate).  Raises ``ValueError`` if ``xi`` does not satisfy
    ``P_perp nabla_{X0} xi = 0`` at the point to ``tol``.
    """
    from .expr import partial_derivative

    coords = list(coords)
    r = len(xi)
    xi = [as_expr(x) for x in xi]
    P = [[as_expr(x) for x in row] for row in perp_projector]
    om = [[[as_expr(x) for x in row] for row in mat] for mat in omegas]

    def nabla(i, s):
        return [normalize(partial_derivative(s[a], coords[i]) + sum((om[i][a][b] * s[b] for b in range(r)), ZERO))
                for a in range(r)]

    def proj(s):
        return [normalize(sum((P[a][b] * s[b] for b in range(r)), ZERO)) for a in range(r)]

    first = [proj(nabla(j, xi)) for j in range(len(coords))]
    args = sorted(point)
    env = [point[k] for k in args]

    def at(exprs):
        return np.array(compile_function(list(exprs), args)(*env), float)

    along = [normalize(sum((as_expr(X0[j]) * first[j][a] for j in range(len(coords))), ZERO)) for a in range(r)]
    pre = float(np.max(np.abs(at(along)), initial=0.0))
    if pre > tol:
        raise ValueError(f"section is not a first-order solution at the point (residual {pre:.3g})")
    worst = 0.0
    for i in range(len(coords)):
        for j in range(i + 1, len(coords)):
            tij = at(proj(nabla(i, first[j])))
            tji = at(proj(nabla(j, first[i])))
            worst = max(worst, float(np.max(np.abs(tij - tji), initial=0.0)))
    return worst
