"""Vector fields on R^d: the built-in exemplars and config-defined systems."""

import ast
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import yaml

from .errors import ParseError

LORENZ = 0
HOPF = 1


@dataclass(frozen=True)
class FlowSystem:
    """A vector field X on R^d with its Jacobian and closed-form zeros.

    ``kernel`` is ``(code, params)`` for fields the compiled integrator knows;
    ``None`` sends every integration through the Python path.
    """

    name: str
    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    singularities: np.ndarray
    params: dict = field(default_factory=dict)
    eval_many: Optional[Callable[[np.ndarray], np.ndarray]] = None
    kernel: Optional[tuple] = None
    default_stride: float = 0.01
    default_box: Optional[tuple] = None

    def __post_init__(self):
        if self.dim < 3:
            raise ValueError("dim must be at least 3")

    def field_many(self, states):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if self.eval_many is not None:
            return self.eval_many(states)
        return np.array([self.eval(x) for x in states])

    def speeds(self, states):
        F = self.field_many(states)
        return np.sqrt(np.sum(F * F, axis=1))

    def speed(self, x):
        return float(self.speeds(np.asarray(x, dtype=float)[None, :])[0])

    def singularity_distance(self, states):
        """Distance to the closed-form singularity list (inf when the list is empty)."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if len(self.singularities) == 0:
            return np.full(len(states), np.inf)
        diff = states[:, None, :] - self.singularities[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=2)).min(axis=1)


def lorenz(sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    p = np.array([sigma, rho, beta], dtype=float)

    def ev(x):
        return np.array([sigma * (x[1] - x[0]),
                         x[0] * (rho - x[2]) - x[1],
                         x[0] * x[1] - beta * x[2]])

    def ev_many(X):
        x, y, z = X[:, 0], X[:, 1], X[:, 2]
        return np.stack([sigma * (y - x), x * (rho - z) - y, x * y - beta * z], axis=1)

    def jac(x):
        return np.array([[-sigma, sigma, 0.0],
                         [rho - x[2], -1.0, -x[0]],
                         [x[1], x[0], -beta]])

    sing = [[0.0, 0.0, 0.0]]
    if beta * (rho - 1.0) > 0:
        c = math.sqrt(beta * (rho - 1.0))
        sing += [[c, c, rho - 1.0], [-c, -c, rho - 1.0]]
    return FlowSystem(
        name="lorenz", dim=3, eval=ev, jac=jac, singularities=np.array(sing),
        params={"sigma": sigma, "rho": rho, "beta": beta}, eval_many=ev_many,
        kernel=(LORENZ, p), default_stride=0.01,
        default_box=((-25.0, 25.0), (-30.0, 30.0), (-5.0, 55.0)),
    )


def hopf():
    """Planar Hopf normal form with a contracting vertical axis; the unit circle is a 2*pi cycle."""

    def ev(x):
        r2 = x[0] * x[0] + x[1] * x[1]
        return np.array([x[0] * (1.0 - r2) - x[1], x[1] * (1.0 - r2) + x[0], -x[2]])

    def ev_many(X):
        x, y, z = X[:, 0], X[:, 1], X[:, 2]
        r2 = x * x + y * y
        return np.stack([x * (1.0 - r2) - y, y * (1.0 - r2) + x, -z], axis=1)

    def jac(x):
        return np.array([[1.0 - 3.0 * x[0] ** 2 - x[1] ** 2, -2.0 * x[0] * x[1] - 1.0, 0.0],
                         [-2.0 * x[0] * x[1] + 1.0, 1.0 - x[0] ** 2 - 3.0 * x[1] ** 2, 0.0],
                         [0.0, 0.0, -1.0]])

    return FlowSystem(
        name="hopf", dim=3, eval=ev, jac=jac, singularities=np.zeros((1, 3)),
        eval_many=ev_many, kernel=(HOPF, np.zeros(1)), default_stride=0.01 * 2 * math.pi,
        default_box=((-2.0, 2.0), (-2.0, 2.0), (-2.0, 2.0)),
    )


def fd_jacobian(f):
    """Central-difference Jacobian with step max(1e-6, 1e-6*|x|)."""

    def jac(x):
        x = np.asarray(x, dtype=float)
        h = max(1e-6, 1e-6 * float(np.linalg.norm(x)))
        d = x.size
        J = np.empty((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            J[:, j] = (f(x + e) - f(x - e)) / (2 * h)
        return J

    return jac


_FUNCS = {
    "sin": math.sin, "cos": math.cos, "tan": math.tan, "exp": math.exp, "log": math.log,
    "sqrt": math.sqrt, "tanh": math.tanh, "sinh": math.sinh, "cosh": math.cosh,
    "atan": math.atan, "abs": abs,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load,
            ast.Call, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def _compile_expr(src, names):
    try:
        tree = ast.parse(str(src), mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"cannot parse equation {src!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ParseError(f"disallowed syntax {type(node).__name__} in {src!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ParseError(f"non-numeric constant in {src!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise ParseError(f"unknown function call in {src!r}")
        if isinstance(node, ast.Name) and node.id not in names and node.id not in _FUNCS:
            raise ParseError(f"unknown name {node.id!r} in {src!r}")
    return compile(tree, "<equation>", "eval")


def system_from_mapping(cfg, source="<config>"):
    """Build a FlowSystem from a parsed config mapping.

    Keys: ``dim``, ``equations`` (strings over x1..xd and parameter names),
    ``parameters`` (optional mapping), ``singularities`` (optional list of
    points), ``name`` (optional).
    """
    if not isinstance(cfg, dict):
        raise ParseError(f"{source}: expected a mapping")
    try:
        dim = int(cfg["dim"])
        eqs = list(cfg["equations"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{source}: missing or malformed dim/equations ({exc})") from None
    if dim < 3:
        raise ParseError(f"{source}: dim must be >= 3")
    if len(eqs) != dim:
        raise ParseError(f"{source}: {len(eqs)} equations for dim {dim}")
    params = cfg.get("parameters") or {}
    if not isinstance(params, dict):
        raise ParseError(f"{source}: parameters must be a mapping")
    try:
        params = {str(k): float(v) for k, v in params.items()}
    except (TypeError, ValueError):
        raise ParseError(f"{source}: parameters must be numeric") from None
    coords = [f"x{i + 1}" for i in range(dim)]
    clash = set(coords) & set(params)
    if clash:
        raise ParseError(f"{source}: parameter names shadow coordinates: {sorted(clash)}")
    names = set(coords) | set(params) | set(_CONSTS)
    codes = [_compile_expr(e, names) for e in eqs]
    base_ns = {"__builtins__": {}}
    base_ns.update(_FUNCS)
    base_ns.update(_CONSTS)
    base_ns.update(params)

    def ev(x):
        ns = dict(base_ns)
        ns.update(zip(coords, (float(v) for v in x)))
        return np.array([float(eval(c, ns)) for c in codes])  # noqa: S307 - whitelisted AST

    sing = cfg.get("singularities") or []
    try:
        sing = np.array(sing, dtype=float).reshape(-1, dim)
    except (TypeError, ValueError):
        raise ParseError(f"{source}: singularities must be a list of {dim}-vectors") from None
    try:
        ev(np.zeros(dim) + 0.1)
    except (ArithmeticError, ValueError) as exc:
        raise ParseError(f"{source}: equations fail to evaluate ({exc})") from None
    box = cfg.get("box")
    if box is not None:
        box = tuple((float(lo), float(hi)) for lo, hi in box)
    return FlowSystem(
        name=str(cfg.get("name", "user")), dim=dim, eval=ev, jac=fd_jacobian(ev),
        singularities=sing, params=params, default_stride=float(cfg.get("stride", 0.01)),
        default_box=box,
    )


def load_system(path):
    path = Path(path)
    try:
        cfg = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return system_from_mapping(cfg, source=str(path))


def built_in_systems(user_config=None):
    """Lorenz and Hopf, plus a user-defined system when a config path is given."""
    out = [lorenz(), hopf()]
    if user_config is not None:
        out.append(load_system(user_config))
    return out


def get_system(name, **params):
    if name == "lorenz":
        return lorenz(**params)
    if name == "hopf":
        return hopf()
    return load_system(name)
