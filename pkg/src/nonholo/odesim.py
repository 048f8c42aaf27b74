"""Integration of the frame-coordinate dynamics with residual monitors."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .expr import ZERO, normalize
from .mechanics import DYNAMICS, MechanicalSystem, fhat_star_matrix


@dataclass
class Trajectory:
    which: str
    names: tuple
    t: np.ndarray
    states: np.ndarray  # (steps, dim)
    blowup: bool = False
    residuals: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.names.index(name)]

    def block(self, names: Sequence[str]) -> np.ndarray:
        return self.states[:, [self.names.index(n) for n in names]]


def _vector_rhs(sys, which):
    f = sys.rhs_function(which)

    def rhs(y):
        return np.array(f(*y), dtype=float)

    return rhs


def integrate(sys: MechanicalSystem, which: str, state0, t_end: float = 5.0, dt: float = 1e-3,
              method: str = "rk4", tol: float = 1e-9) -> Trajectory:
    """Integrate one of ``nh``, ``reg``, ``sing``, ``rcv`` from ``state0``.

    ``rk4`` is the classical fixed-step scheme; ``adaptive`` uses an
    embedded Runge-Kutta 4(5) pair with ``rtol = atol = tol`` and records the
    accepted steps.  A non-finite state truncates the trajectory and sets
    ``blowup``.
    """
    if which not in DYNAMICS:
        raise ValueError(f"unknown dynamics {which!r}")
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    names = sys.qv_names if which == "nh" else sys.state_names
    y0 = np.asarray(state0, dtype=float)
    if y0.shape != (len(names),):
        raise ValueError(f"state0 must have {len(names)} entries ({', '.join(names)})")
    rhs = _vector_rhs(sys, which)
    if method == "adaptive":
        if tol <= 0:
            raise ValueError("tol must be positive")
        sol = solve_ivp(lambda t, y: rhs(y), (0.0, t_end), y0, method="RK45", rtol=tol, atol=tol)
        states = sol.y.T
        ok = np.all(np.isfinite(states), axis=1)
        cut = len(ok) if ok.all() else int(np.argmin(ok))
        return Trajectory(which, names, sol.t[:cut], states[:cut], blowup=not ok.all() or sol.status < 0)
    if method != "rk4":
        raise ValueError("method must be 'rk4' or 'adaptive'")
    if dt <= 0:
        raise ValueError("dt must be positive")
    steps = int(round(t_end / dt))
    h = t_end / steps
    out = np.empty((steps + 1, len(y0)))
    out[0] = y0
    y = y0
    blowup = False
    with np.errstate(all="ignore"):
        for s in range(steps):
            try:
                k1 = rhs(y)
                k2 = rhs(y + 0.5 * h * k1)
                k3 = rhs(y + 0.5 * h * k2)
                k4 = rhs(y + h * k3)
            except (ArithmeticError, ValueError):
                blowup = True
            else:
                y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                blowup = not np.all(np.isfinite(y))
            if blowup:
                out = out[:s + 1]
                break
            out[s + 1] = y
    t = np.linspace(0.0, h * (len(out) - 1), len(out))
    return Trajectory(which, names, t, out, blowup=blowup)


# ---------------------------------------------------------------------------
# residual channels
# ---------------------------------------------------------------------------

def _columns(traj, names):
    return [traj.column(n) for n in names]


def _eval(sys, key, exprs, traj, names):
    f = sys.compiled(key, exprs, names, backend="numpy")
    vals = f(*_columns(traj, names))
    return np.array([np.broadcast_to(np.asarray(v, float), traj.t.shape) for v in vals])


def constraint_residuals(sys: MechanicalSystem, traj: Trajectory, qdot: np.ndarray | None = None) -> np.ndarray:
    """Per-step norm of the complement components ``G(qdot, X_perp_i)``.

    Without ``qdot`` the chart velocity is rebuilt from the frame components
    (zero up to rounding by construction).  A chart-coordinate replay passes
    its own ``qdot`` array of shape ``(steps, n)``.
    """
    if qdot is None:
        qdot = _eval(sys, "qdot", sys.bound_fields.qdot, traj, sys.qv_names).T
    g = sys.metric
    n = sys.n
    G = [[sys._bind(g.g[i][j]) for j in range(n)] for i in range(n)]
    perp = [tuple(sys._bind(x) for x in X) for X in sys.dp_frame]
    # flat of each complement field, evaluated along the trajectory
    flats = []
    for X in perp:
        flats.extend(normalize(sum((G[i][j] * X[j] for j in range(n)), ZERO)) for i in range(n))
    vals = _eval(sys, "perp_flats", flats, traj, sys.coords).reshape(len(perp), n, -1)
    comps = np.einsum("pit,ti->tp", vals, np.asarray(qdot))
    return np.linalg.norm(comps, axis=1)


def residual_constraint(sys: MechanicalSystem, traj: Trajectory, qdot=None) -> float:
    return float(np.max(constraint_residuals(sys, traj, qdot), initial=0.0))


def kernel_residuals(sys: MechanicalSystem, traj: Trajectory) -> np.ndarray:
    if not sys.p_names or sys.p_names[0] not in traj.names:
        raise ValueError("trajectory carries no adjoint components")
    fh = _eval(sys, "fhat_flat", [x for row in sys.bound_fields.fhat for x in row], traj, sys.qv_names)
    fh = fh.reshape(sys.k, sys.r, -1)
    p = traj.block(sys.p_names)
    return np.linalg.norm(np.einsum("krt,tr->tk", fh, p), axis=1)


def residual_kernel(sys: MechanicalSystem, traj: Trajectory) -> float:
    """Max over steps of ``|F_hat_star(v) p|``."""
    return float(np.max(kernel_residuals(sys, traj), initial=0.0))


def variety_residuals(sys: MechanicalSystem, traj: Trajectory, conditions: Sequence) -> np.ndarray:
    """Per-step max of ``|f(q, v, p)|`` over affine conditions ``f``."""
    if not conditions:
        return np.zeros(len(traj.t))
    exprs = [f.as_expr(sys.p_names) for f in conditions]
    vals = _eval(sys, ("variety", tuple(conditions)), exprs, traj, sys.state_names)
    return np.max(np.abs(vals), axis=0)


def residual_variety(sys: MechanicalSystem, traj: Trajectory, conditions: Sequence) -> float:
    return float(np.max(variety_residuals(sys, traj, conditions), initial=0.0))


def energies(sys: MechanicalSystem, traj: Trajectory) -> np.ndarray:
    return _eval(sys, "energy", [sys.bound_fields.energy], traj, sys.qv_names)[0]


def attach_residuals(sys: MechanicalSystem, traj: Trajectory, conditions: Sequence = ()) -> Trajectory:
    traj.residuals["res_constraint"] = constraint_residuals(sys, traj)
    has_p = bool(sys.p_names) and sys.p_names[0] in traj.names
    traj.residuals["res_kernel"] = kernel_residuals(sys, traj) if has_p else np.zeros(len(traj.t))
    traj.residuals["res_variety"] = variety_residuals(sys, traj, conditions) if has_p else np.zeros(len(traj.t))
    traj.residuals["energy"] = energies(sys, traj)
    return traj


def compare_nh_rcv(sys: MechanicalSystem, qv0, p0, t_end: float = 5.0, dt: float = 1e-3):
    """Sup over the grid of the Euclidean gap between NH and RCV ``(q, v)``."""
    qv0 = np.asarray(qv0, float)
    nh = integrate(sys, "nh", qv0, t_end, dt)
    rcv = integrate(sys, "rcv", np.r_[qv0, np.asarray(p0, float)], t_end, dt)
    m = min(len(nh.t), len(rcv.t))
    gap = np.linalg.norm(nh.states[:m] - rcv.states[:m, :len(qv0)], axis=1)
    return float(np.max(gap)), nh, rcv


def write_csv(sys: MechanicalSystem, traj: Trajectory, path, conditions: Sequence = ()) -> Path:
    """One row per step: ``t``, state, then the four residual channels."""
    if not traj.residuals:
        attach_residuals(sys, traj, conditions)
    path = Path(path)
    p_cols = [p for p in sys.p_names if p in traj.names]
    header = ["t", *sys.coords, *sys.v_names, *p_cols, "res_constraint", "res_kernel", "res_variety", "energy"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        chans = [traj.residuals[k] for k in ("res_constraint", "res_kernel", "res_variety", "energy")]
        for s in range(len(traj.t)):
            row = [traj.t[s], *traj.states[s, :sys.n + sys.k], *traj.states[s, sys.n + sys.k:]]
            row += [c[s] for c in chans]
            w.writerow([f"{x:.9g}" for x in row])
    return path
