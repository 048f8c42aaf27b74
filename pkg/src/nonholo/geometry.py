"""Riemannian geometry in a single chart.

Vector fields are tuples of expressions (chart components), covectors are
tuples of expressions (chart coefficients), and matrices are nested tuples.
Numeric identity claims ("vanishes", "orthonormal") are certified by sampling
through :func:`nonholo.expr.probably_zero` over a :class:`Domain`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .expr import (
    DEFAULT_SEED,
    ONE,
    ZERO,
    Const,
    Expr,
    ExprError,
    as_expr,
    compile_function,
    free_symbols,
    normalize,
    partial_derivative,
    probably_zero,
    sample_box,
    simplify,
)

VectorField = tuple  # tuple[Expr, ...]

CERTIFY_TRIALS = 256
CERTIFY_TOL = 1e-9


class GeometryError(ExprError):
    pass


class SingularMetricError(GeometryError):
    pass


class RankDropError(GeometryError):
    pass


class PreconditionError(GeometryError):
    pass


@dataclass(frozen=True)
class Domain:
    """Sampling box for free variables plus values held fixed (parameters)."""

    box: Mapping[str, tuple]
    fixed: Mapping[str, float] = field(default_factory=dict)

    def sample(self, n: int, seed: int = DEFAULT_SEED) -> dict:
        return sample_box(self.box, n, seed, self.fixed)

    def is_zero(self, e: Expr, trials: int = CERTIFY_TRIALS, tol: float = CERTIFY_TOL,
                seed: int = DEFAULT_SEED) -> bool:
        return probably_zero(e, self.box, trials=trials, tol=tol, seed=seed, fixed=self.fixed)

    def generic(self) -> "Domain":
        """Same box with each fixed value widened to a same-sign interval.

        Identities certified here hold for nearby parameter values too, so
        expressions kept symbolic in the parameters stay valid after the
        values change.
        """
        box = dict(self.box)
        for k, v in self.fixed.items():
            v = float(v)
            box[k] = (0.5 * v, 2.0 * v) if v > 0 else (2.0 * v, 0.5 * v) if v < 0 else (0.0, 0.5)
        return Domain(box)


@dataclass(frozen=True)
class Metric:
    coords: tuple
    g: tuple  # n x n tuple of Expr, symmetric

    def __post_init__(self):
        n = len(self.coords)
        g = tuple(tuple(as_expr(x) for x in row) for row in self.g)
        if len(g) != n or any(len(r) != n for r in g):
            raise GeometryError("metric must be n x n in the chart dimension")
        for i in range(n):
            for j in range(i + 1, n):
                if g[i][j] != g[j][i]:
                    raise GeometryError(f"metric not symmetric at ({i},{j})")
        object.__setattr__(self, "g", g)

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def inverse(self) -> tuple:
        try:
            return self._inv
        except AttributeError:
            inv = _symbolic_inverse(self.g)
            object.__setattr__(self, "_inv", inv)
            return inv

    def pair(self, X: Sequence[Expr], Y: Sequence[Expr]) -> Expr:
        acc = ZERO
        for i in range(self.dim):
            if X[i] == ZERO:
                continue
            for j in range(self.dim):
                if Y[j] == ZERO or self.g[i][j] == ZERO:
                    continue
                acc = acc + X[i] * self.g[i][j] * Y[j]
        return acc

    def numeric(self, env: Mapping[str, float]) -> np.ndarray:
        n = self.dim
        f = compile_function([self.g[i][j] for i in range(n) for j in range(n)],
                             sorted(env), backend="math")
        return np.array(f(*(env[k] for k in sorted(env)))).reshape(n, n)

    def check_positive_definite(self, domain: Domain, trials: int = 32, seed: int = DEFAULT_SEED):
        pts = domain.sample(trials, seed)
        names = sorted(pts)
        n = self.dim
        f = compile_function([self.g[i][j] for i in range(n) for j in range(n)], names)
        for t in range(trials):
            G = np.array(f(*(pts[k][t] for k in names))).reshape(n, n)
            try:
                np.linalg.cholesky(G)
            except np.linalg.LinAlgError:
                raise SingularMetricError("metric is not positive definite at a sample") from None


def _is_diagonal(g) -> bool:
    return all(g[i][j] == ZERO for i in range(len(g)) for j in range(len(g)) if i != j)


def _det(m) -> Expr:
    n = len(m)
    if n == 1:
        return m[0][0]
    acc = ZERO
    for j in range(n):
        if m[0][j] == ZERO:
            continue
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        term = m[0][j] * _det(minor)
        acc = acc + term if j % 2 == 0 else acc - term
    return acc


def _symbolic_inverse(g) -> tuple:
    n = len(g)
    if _is_diagonal(g):
        for i in range(n):
            if g[i][i] == ZERO:
                raise SingularMetricError("zero diagonal metric entry")
        return tuple(tuple(simplify(1 / g[i][i]) if i == j else ZERO for j in range(n)) for i in range(n))
    det = normalize(_det(g))
    if det == ZERO:
        raise SingularMetricError("metric determinant vanishes identically")
    inv_det = 1 / det
    out = []
    for i in range(n):
        row = []
        for j in range(n):
            minor = [r[:i] + r[i + 1:] for k, r in enumerate(g) if k != j]
            cof = _det(minor) if n > 1 else ONE
            sign = 1 if (i + j) % 2 == 0 else -1
            row.append(normalize(sign * cof * inv_det))
        out.append(tuple(row))
    return tuple(out)


def christoffel_symbols(g: Metric) -> tuple:
    """``Gamma[k][i][j]`` of the Levi-Civita connection."""
    n = g.dim
    c = g.coords
    dg = [[[partial_derivative(g.g[i][j], c[l]) for l in range(n)] for j in range(n)] for i in range(n)]
    gi = g.inverse
    out = []
    for k in range(n):
        mat = []
        for i in range(n):
            row = []
            for j in range(n):
                if j < i:
                    row.append(mat[j][i])
                    continue
                acc = ZERO
                for l in range(n):
                    if gi[k][l] == ZERO:
                        continue
                    s = dg[j][l][i] + dg[i][l][j] - dg[i][j][l]
                    if s == ZERO:
                        continue
                    acc = acc + gi[k][l] * s
                row.append(normalize(Const(0.5) * acc))
            mat.append(row)
        out.append(tuple(tuple(r) for r in mat))
    return tuple(out)


def musical(g: Metric, obj: Sequence[Expr], kind: str = "flat") -> tuple:
    """``flat`` lowers vector components; ``sharp`` raises covector coefficients."""
    m = g.g if kind == "flat" else g.inverse if kind == "sharp" else None
    if m is None:
        raise ValueError("kind must be 'flat' or 'sharp'")
    n = g.dim
    return tuple(normalize(sum((m[i][j] * as_expr(obj[j]) for j in range(n) if m[i][j] != ZERO), ZERO))
                 for i in range(n))


def gradient_field(g: Metric, V: Expr) -> VectorField:
    dV = [partial_derivative(V, c) for c in g.coords]
    return musical(g, dV, "sharp")


def apply_field(X: Sequence[Expr], f: Expr, coords: Sequence[str]) -> Expr:
    """Directional derivative ``X(f)``."""
    acc = ZERO
    fs = free_symbols(f)
    for Xi, c in zip(X, coords):
        if Xi == ZERO or c not in fs:
            continue
        acc = acc + Xi * partial_derivative(f, c)
    return acc


def lie_bracket(X, Y, coords) -> VectorField:
    return tuple(normalize(apply_field(X, Y[k], coords) - apply_field(Y, X[k], coords))
                 for k in range(len(coords)))


def covariant_derivative(Gamma, X, Y, coords) -> VectorField:
    n = len(coords)
    out = []
    for k in range(n):
        acc = apply_field(X, Y[k], coords)
        for i in range(n):
            if X[i] == ZERO:
                continue
            for j in range(n):
                if Y[j] == ZERO or Gamma[k][i][j] == ZERO:
                    continue
                acc = acc + Gamma[k][i][j] * X[i] * Y[j]
        out.append(normalize(acc))
    return tuple(out)


@dataclass(frozen=True)
class Frame:
    """Ordered, pointwise orthonormal vector fields with a role tag."""

    fields: tuple
    role: str = "D"

    def __len__(self):
        return len(self.fields)

    def __getitem__(self, a):
        return self.fields[a]

    def __iter__(self):
        return iter(self.fields)


def _scale(c: Expr, X) -> VectorField:
    return tuple(c * x for x in X)


def _sub(X, Y) -> VectorField:
    return tuple(x - y for x, y in zip(X, Y))


def _sum_fields(terms, n) -> VectorField:
    out = [ZERO] * n
    for X in terms:
        out = [a + b for a, b in zip(out, X)]
    return tuple(normalize(x) for x in out)


def _min_norm_sq(g: Metric, Y, domain: Domain, trials: int, seed: int) -> float:
    e = g.pair(Y, Y)
    pts = domain.sample(trials, seed)
    names = sorted(free_symbols(e))
    if not names:
        return float(compile_function(e, [])())
    f = compile_function(e, names, backend="numpy")
    vals = np.broadcast_to(f(*(pts[k] for k in names)), (trials,))
    return float(np.min(vals))


def gram_schmidt_frame(g: Metric, spanning: Sequence[Sequence], domain: Domain, role: str = "D",
                       against: Sequence[Sequence] = (), trials: int = 64,
                       seed: int = DEFAULT_SEED) -> Frame:
    """Orthonormalize ``spanning`` in input order (classical GS, two passes).

    Inputs that are already orthonormal against the previous outputs (and
    ``against``) for all parameter values near the given ones are returned
    unchanged.  Raises ``RankDropError`` when a
    pivot norm falls below 1e-8 at a sample.
    """
    n = g.dim
    cert = domain.generic()
    prior = [tuple(as_expr(x) for x in X) for X in against]
    out = []
    for Y in spanning:
        Y = tuple(as_expr(x) for x in Y)
        basis = prior + out
        if all(cert.is_zero(g.pair(Y, B)) for B in basis) and cert.is_zero(g.pair(Y, Y) - 1):
            out.append(tuple(normalize(x) for x in Y))
            continue
        W = Y
        for _ in range(2):
            coeffs = [normalize(g.pair(W, B)) for B in basis]
            # exact arithmetic: the second pass is zero unless sampling says otherwise
            terms = [_scale(-c, B) for c, B in zip(coeffs, basis) if not cert.is_zero(c, trials=32)]
            if terms:
                W = _sum_fields([W] + terms, n)
        nsq = normalize(g.pair(W, W))
        if _min_norm_sq(g, W, domain, trials, seed) < 1e-16:
            raise RankDropError("spanning fields are dependent at a sample point")
        inv = simplify(nsq ** -0.5) if not isinstance(nsq, Const) else Const(nsq.value ** -0.5)
        out.append(tuple(normalize(inv * w) for w in W))
    return Frame(tuple(out), role)


def orthogonal_complement_frame(g: Metric, d_frame: Frame, domain: Domain,
                                seed: int = DEFAULT_SEED) -> Frame:
    """Orthonormal frame of the metric complement of ``d_frame``.

    Candidates are the coordinate fields in chart order; those that become
    dependent are skipped.
    """
    n = g.dim
    k = len(d_frame)
    out: list = []
    for i in range(n):
        if len(out) == n - k:
            break
        e = tuple(ONE if j == i else ZERO for j in range(n))
        try:
            fr = gram_schmidt_frame(g, [e], domain, role="Dp", against=list(d_frame) + out, seed=seed)
        except RankDropError:
            continue
        out.append(fr[0])
    if len(out) != n - k:
        raise RankDropError("could not complete the complement frame")
    return Frame(tuple(out), "Dp")


def projector(g: Metric, frame: Frame) -> tuple:
    """Matrix ``P[i][j]`` with ``(P X)^i = sum_j P[i][j] X^j``."""
    n = g.dim
    flats = [musical(g, X, "flat") for X in frame]
    return tuple(
        tuple(normalize(sum((X[i] * F[j] for X, F in zip(frame, flats)), ZERO)) for j in range(n))
        for i in range(n))


def apply_matrix(P, X) -> VectorField:
    n = len(X)
    return tuple(normalize(sum((P[i][j] * X[j] for j in range(n) if P[i][j] != ZERO), ZERO)) for i in range(n))


def frame_components(g: Metric, frame: Frame, X) -> tuple:
    """Coefficients of ``X`` along an orthonormal frame."""
    return tuple(normalize(g.pair(X, F)) for F in frame)


def constrained_derivative(g, Gamma, frame, X, Y) -> VectorField:
    """``P(nabla_X Y)`` for the projector onto ``frame``."""
    return apply_matrix(projector(g, frame), covariant_derivative(Gamma, X, Y, g.coords))


def _require_in(g, frame_D, Y, domain):
    if domain is None:
        return
    P = projector(g, frame_D)
    resid = _sub(Y, apply_matrix(P, Y))
    for r in resid:
        if not domain.is_zero(r, tol=1e-9):
            raise PreconditionError("field does not lie in the distribution")


def _complement_projector(g, frame_D):
    n = g.dim
    P = projector(g, frame_D)
    return tuple(tuple(normalize((ONE if i == j else ZERO) - P[i][j]) for j in range(n)) for i in range(n))


def second_fundamental_form(g, Gamma, frame_D, X, Y, domain: Domain | None = None) -> VectorField:
    """``P_perp(nabla_X Y)`` for ``Y`` tangent to the distribution."""
    _require_in(g, frame_D, Y, domain)
    return apply_matrix(_complement_projector(g, frame_D), covariant_derivative(Gamma, X, Y, g.coords))


def frobenius_curvature(g, Gamma, frame_D, X, Y, domain=None) -> VectorField:
    a = second_fundamental_form(g, Gamma, frame_D, X, Y, domain)
    b = second_fundamental_form(g, Gamma, frame_D, Y, X, domain)
    return tuple(normalize(x - y) for x, y in zip(a, b))


def geodesic_curvature(g, Gamma, frame_D, X, Y, domain=None) -> VectorField:
    a = second_fundamental_form(g, Gamma, frame_D, X, Y, domain)
    b = second_fundamental_form(g, Gamma, frame_D, Y, X, domain)
    return tuple(normalize(x + y) for x, y in zip(a, b))


def curvature_transpose(g, Gamma, which: str, frame_in: Frame, frame_out: Frame,
                        mode: str = "star") -> Callable:
    """Transpose of F or G for the distribution spanned by ``frame_in``.

    ``frame_out`` is the complementary frame.  With ``mode="star"`` the
    result is ``(beta, Y) -> F_star(beta)(Y)``, a field along ``frame_in``
    defined by ``G(X, F_star(beta)(Y)) = G(beta, F(X, Y))``;
    ``mode="asterisk"`` swaps the argument order: ``(Y, beta) -> F*(Y)(beta)``.
    """
    curv = {"F": frobenius_curvature, "G": geodesic_curvature}[which]
    n = g.dim

    def star(beta, Y):
        terms = []
        for Xa in frame_in:
            val = normalize(g.pair(beta, curv(g, Gamma, frame_in, Xa, Y)))
            terms.append(_scale(val, Xa))
        return _sum_fields(terms, n)

    if mode == "star":
        return star
    if mode == "asterisk":
        return lambda Y, beta: star(beta, Y)
    raise ValueError("mode must be 'star' or 'asterisk'")


def frame_connection_coefficients(g: Metric, Gamma, frame: Sequence) -> tuple:
    """``C[c][a][b] = G(nabla_{X_a} X_b, X_c)`` for an orthonormal list of fields."""
    fields = list(frame)
    m = len(fields)
    nab = [[covariant_derivative(Gamma, fields[a], fields[b], g.coords) for b in range(m)] for a in range(m)]
    return tuple(
        tuple(tuple(normalize(g.pair(nab[a][b], fields[c])) for b in range(m)) for a in range(m))
        for c in range(m))
