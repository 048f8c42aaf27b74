"""Built-in fixtures and the line-oriented model file format.

File layout (``#`` starts a comment)::

    [chart]           one name per line
    [params]          name = <number or constant expression, may use pi>
    [metric]          g[i][j] = <expr>     (0-based; give i <= j or j <= i once)
    [potential]       V = <expr>
    [distribution]    X[a][i] = <expr>     (component i of spanning field a)
    [box]             name in [lo, hi]     (every chart variable)

Optional sections ``[complement]`` (``Y[a][i] = <expr>``, spanning fields of
the complement), ``[velocities]`` and ``[adjoints]`` (``name in [lo, hi]``,
one per frame member) pin the frame and state names.
"""
from __future__ import annotations

import math
import re
from importlib import resources
from pathlib import Path

from .expr import (
    ONE,
    ZERO,
    ExprError,
    evaluate,
    free_symbols,
    normalize,
    parse_expression,
    substitute,
    to_text,
)
from .mechanics import MechanicalSystem, ModelError, build_system

DISC_DEFAULTS = {"m": 1.0, "R": 1.0, "Js": 1.0, "Jr": 1.0, "g": 9.8, "tau": math.pi / 6}
_CONSTANTS = {"pi": math.pi}


class ModelFileError(ModelError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def _p(text):
    return parse_expression(text)


def rolling_disc(m=1.0, R=1.0, Js=1.0, Jr=1.0, g=9.8, tau=math.pi / 6,
                 geodesic_weight: float = 1.0) -> MechanicalSystem:
    """Disc rolling without slipping on a plane inclined by ``tau``.

    Chart ``(theta, phi, x, y)``: spin angle, rolling angle, contact point.
    The frames are given explicitly and are already orthonormal, so they pass
    through Gram-Schmidt unchanged.
    """
    params = dict(m=m, R=R, Js=Js, Jr=Jr, g=g, tau=tau)
    for k in ("m", "R", "Js", "Jr", "g"):
        if not params[k] > 0:
            raise ModelError(f"parameter {k} must be positive")
    if not 0.0 <= tau < math.pi / 2:
        raise ModelError("tau must lie in [0, pi/2)")
    S = "(Jr + m*R^2)"
    metric = [[_p("Js"), ZERO, ZERO, ZERO],
              [ZERO, _p("Jr"), ZERO, ZERO],
              [ZERO, ZERO, _p("m"), ZERO],
              [ZERO, ZERO, ZERO, _p("m")]]
    X1 = (_p("1/sqrt(Js)"), ZERO, ZERO, ZERO)
    X2 = (ZERO, _p(f"1/sqrt{S}"), _p(f"R*cos(theta)/sqrt{S}"), _p(f"R*sin(theta)/sqrt{S}"))
    X3 = (ZERO, ZERO, _p("sin(theta)/sqrt(m)"), _p("-cos(theta)/sqrt(m)"))
    X4 = (ZERO, _p(f"-sqrt(m)*R/(sqrt(Jr)*sqrt{S})"),
          _p(f"sqrt(Jr)*cos(theta)/(sqrt(m)*sqrt{S})"),
          _p(f"sqrt(Jr)*sin(theta)/(sqrt(m)*sqrt{S})"))
    box = {"theta": (-math.pi, math.pi), "phi": (-math.pi, math.pi), "x": (-10.0, 10.0), "y": (-10.0, 10.0)}
    return build_system(
        ("theta", "phi", "x", "y"), params, metric, _p("m*g*(R - x*sin(tau))"), [X1, X2], box,
        complement=[X3, X4], v_names=("v_s", "v_r"), p_names=("p_1", "p_2"),
        geodesic_weight=geodesic_weight, name="disc")


def flat_holonomic() -> MechanicalSystem:
    """Euclidean R^3 with D spanned by the first two coordinate fields; V = 0."""
    coords = ("x", "y", "z")
    metric = [[ONE if i == j else ZERO for j in range(3)] for i in range(3)]
    D = [(ONE, ZERO, ZERO), (ZERO, ONE, ZERO)]
    box = {c: (-10.0, 10.0) for c in coords}
    return build_system(coords, {}, metric, ZERO, D, box, name="flat_holonomic")


BUILTINS = {"disc": rolling_disc, "flat_holonomic": flat_holonomic}


def disc_model_path() -> Path:
    return Path(str(resources.files("nonholo") / "data" / "disc.mdl"))


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

_SECTIONS = ("chart", "params", "metric", "potential", "distribution", "box",
             "complement", "velocities", "adjoints")
_INDEXED = re.compile(r"^([A-Za-z])\[(\d+)\]\[(\d+)\]\s*=\s*(.+)$")
_ASSIGN = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.+)$")
_RANGE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s+in\s+\[\s*([^,\]]+)\s*,\s*([^\]]+)\]\s*$")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _const(text: str, line: int) -> float:
    try:
        return evaluate(parse_expression(text.strip()), _CONSTANTS)
    except ExprError as exc:
        raise ModelFileError(f"bad number {text.strip()!r}: {exc}", line) from None


def _expr(text: str, line: int):
    try:
        return parse_expression(text.strip())
    except ExprError as exc:
        raise ModelFileError(str(exc), line) from None


def parse_model_text(text: str) -> dict:
    """Parse model text into a dict of plain data (no geometry yet)."""
    data = {s: [] for s in _SECTIONS}
    seen = set()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ModelFileError(f"malformed section header {line!r}", lineno)
            name = line[1:-1].strip()
            if name not in _SECTIONS:
                raise ModelFileError(f"unknown section [{name}]", lineno)
            if name in seen:
                raise ModelFileError(f"duplicate section [{name}]", lineno)
            seen.add(name)
            section = name
            continue
        if section is None:
            raise ModelFileError("content before the first section", lineno)
        data[section].append((lineno, line))
    for req in ("chart", "metric", "potential", "distribution"):
        if req not in seen:
            raise ModelFileError(f"missing section [{req}]")
    if "box" not in seen:
        raise ModelFileError("missing section [box]")
    return data


def _indexed(entries, letter, section):
    out = {}
    for lineno, line in entries:
        m = _INDEXED.match(line)
        if not m or m.group(1) != letter:
            raise ModelFileError(f"expected {letter}[i][j] = <expr> in [{section}]", lineno)
        key = (int(m.group(2)), int(m.group(3)))
        if key in out:
            raise ModelFileError(f"duplicate entry {letter}[{key[0]}][{key[1]}]", lineno)
        out[key] = (lineno, _expr(m.group(4), lineno))
    return out


def _ranges(entries, section):
    out = {}
    for lineno, line in entries:
        m = _RANGE.match(line)
        if not m:
            raise ModelFileError(f"expected 'name in [lo, hi]' in [{section}]", lineno)
        lo, hi = _const(m.group(2), lineno), _const(m.group(3), lineno)
        if not lo < hi:
            raise ModelFileError(f"empty interval for {m.group(1)}", lineno)
        out[m.group(1)] = (lo, hi)
    return out


def _fields(entries, n, letter, section):
    if not entries:
        return None
    idx = _indexed(entries, letter, section)
    rows = max(a for a, _ in idx) + 1
    fields = [[ZERO] * n for _ in range(rows)]
    for (a, i), (lineno, e) in idx.items():
        if i >= n:
            raise ModelFileError(f"component index {i} out of range", lineno)
        fields[a][i] = e
    return [tuple(f) for f in fields]


def system_from_text(text: str, name: str = "model", geodesic_weight: float = 1.0) -> MechanicalSystem:
    data = parse_model_text(text)
    coords = []
    for lineno, line in data["chart"]:
        for tok in line.replace(",", " ").split():
            if not _NAME.match(tok):
                raise ModelFileError(f"bad chart name {tok!r}", lineno)
            coords.append(tok)
    n = len(coords)
    params = {}
    for lineno, line in data["params"]:
        m = _ASSIGN.match(line)
        if not m:
            raise ModelFileError("expected 'name = value' in [params]", lineno)
        params[m.group(1)] = _const(m.group(2), lineno)
    declared = set(coords) | set(params)

    def check(e, lineno):
        bad = free_symbols(e) - declared
        if bad:
            raise ModelFileError(f"undeclared identifier(s) {sorted(bad)}", lineno)
        return e

    g = [[ZERO] * n for _ in range(n)]
    for (i, j), (lineno, e) in _indexed(data["metric"], "g", "metric").items():
        if i >= n or j >= n:
            raise ModelFileError(f"metric index ({i},{j}) out of range", lineno)
        if i != j and g[i][j] is not ZERO and g[i][j] != ZERO:
            raise ModelFileError(f"metric entry ({i},{j}) given twice", lineno)
        g[i][j] = g[j][i] = check(e, lineno)
    if len(data["potential"]) != 1:
        raise ModelFileError("[potential] needs exactly one 'V = <expr>' line")
    lineno, line = data["potential"][0]
    m = _ASSIGN.match(line)
    if not m or m.group(1) != "V":
        raise ModelFileError("expected 'V = <expr>'", lineno)
    V = check(_expr(m.group(2), lineno), lineno)
    dist = _fields(data["distribution"], n, "X", "distribution")
    comp = _fields(data["complement"], n, "Y", "complement")
    for fs, sec in ((dist, "distribution"), (comp, "complement")):
        for f in fs or []:
            for e in f:
                check(e, data[sec][0][0])
    box = _ranges(data["box"], "box")
    unknown = set(box) - set(coords)
    if unknown:
        raise ModelFileError(f"box given for non-chart names {sorted(unknown)}")
    missing = [c for c in coords if c not in box]
    if missing:
        raise ModelFileError(f"box missing for chart variable(s) {missing}")
    vel = _ranges(data["velocities"], "velocities")
    adj = _ranges(data["adjoints"], "adjoints")
    vbox = next(iter(vel.values())) if vel else (-1.0, 1.0)
    pbox = next(iter(adj.values())) if adj else (-1.0, 1.0)
    return build_system(coords, params, g, V, dist, box, complement=comp,
                        v_names=tuple(vel) or None, p_names=tuple(adj) or None,
                        velocity_box=vbox, adjoint_box=pbox, geodesic_weight=geodesic_weight, name=name)


def load_model(path, geodesic_weight: float = 1.0) -> MechanicalSystem:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFileError(f"cannot read {path}: {exc.strerror}") from None
    return system_from_text(text, name=path.stem, geodesic_weight=geodesic_weight)


def resolve_model(spec: str, geodesic_weight: float = 1.0) -> MechanicalSystem:
    """Builtin name or path to a model file."""
    if spec in BUILTINS:
        if spec == "disc":
            return rolling_disc(geodesic_weight=geodesic_weight)
        return BUILTINS[spec]()
    return load_model(spec, geodesic_weight=geodesic_weight)


def _num(x: float) -> str:
    return repr(float(x))


def print_model(sys: MechanicalSystem) -> str:
    """Render a system in the model file format (frames written explicitly)."""
    n = sys.n
    out = ["[chart]", *sys.coords, "", "[params]"]
    out += [f"{k} = {_num(v)}" for k, v in sys.params.items()]
    out += ["", "[metric]"]
    for i in range(n):
        for j in range(i, n):
            if sys.metric.g[i][j] != ZERO:
                out.append(f"g[{i}][{j}] = {to_text(sys.metric.g[i][j])}")
    out += ["", "[potential]", f"V = {to_text(sys.V)}", "", "[distribution]"]
    for a, X in enumerate(sys.d_frame):
        out += [f"X[{a}][{i}] = {to_text(e)}" for i, e in enumerate(X) if e != ZERO]
    out += ["", "[complement]"]
    for a, X in enumerate(sys.dp_frame):
        out += [f"Y[{a}][{i}] = {to_text(e)}" for i, e in enumerate(X) if e != ZERO]
    out += ["", "[box]"]
    out += [f"{c} in [{_num(sys.box[c][0])}, {_num(sys.box[c][1])}]" for c in sys.coords]
    out += ["", "[velocities]"]
    out += [f"{v} in [{_num(sys.velocity_box[0])}, {_num(sys.velocity_box[1])}]" for v in sys.v_names]
    out += ["", "[adjoints]"]
    out += [f"{p} in [{_num(sys.adjoint_box[0])}, {_num(sys.adjoint_box[1])}]" for p in sys.p_names]
    return "\n".join(out) + "\n"


def disc_quadratic_generator(sys: MechanicalSystem):
    """The single generator ``(v_s^2 + v_r^2) X_3^*`` of the kernel annihilator."""
    from .invariance import AffineFiberFunction

    return AffineFiberFunction((parse_expression("v_s^2 + v_r^2"), ZERO), ZERO)


def disc_integrability_residual(sys: MechanicalSystem, point) -> float:
    """Second-order antisymmetry residual for the disc adjoint bundle at ``point``.

    The subbundle kept is spanned by the second complement direction; the
    candidate section rotates the first direction in with the spin angle so
    that it solves the first-order condition along the nonholonomic field
    exactly at ``point``.  Only reported: no pass/fail is claimed.
    """
    from .geometry import musical
    from .invariance import spencer_condition_ii

    k, r = sys.k, sys.r
    names = list(sys.qv_names)
    C = sys.bound_connection
    frames = sys.bound_frames
    flats = [musical(sys.metric, X, "flat") for X in frames]
    flats = [[normalize(substitute(c, sys.params)) for c in f] for f in flats]
    omegas = []
    for l in range(len(names)):
        if l >= sys.n:
            omegas.append([[ZERO] * r for _ in range(r)])
            continue
        omegas.append([[normalize(sum((flats[A][l] * C[k + i][A][k + j] for A in range(sys.n)), ZERO))
                        for j in range(r)] for i in range(r)])
    proj = [[ONE if i == j == 0 else ZERO for j in range(r)] for i in range(r)]
    p = sys.params
    slope = math.sqrt(p["Jr"]) / math.sqrt(p["Jr"] + p["m"] * p["R"] ** 2)
    theta0 = float(point["theta"])
    xi = [parse_expression(f"{slope!r} * (theta - {theta0!r})"), ONE]
    return spencer_condition_ii(omegas, proj, sys.rhs_exprs("nh"), xi, names, point)
