"""Scenario files: topology, game, action sets, initial conditions and defaults.

Scenarios are YAML documents.  Player and component indices in files are
1-based.  A game is either a built-in id or a list of cost expressions (one
per player) plus constraint expressions (``q`` per player)::

    name: duopoly
    players: 2
    action_dim: 1
    constraint_dim: 0
    topology:
      edges: [[1, 2]]           # optional third entry: weight
    boxes:
      - {lower: [-10], upper: [10]}   # one entry for all players, or one per player
    costs:
      - "(x1_1 - 1)^2 + x1_1*x2_1"
      - "(x2_1 - 2)^2 + x1_1*x2_1"
    initial:
      x: {uniform: {lower: [-1], upper: [1]}}   # or {values: [[...], ...]}
      upsilon: center                           # or explicit (N, N, d) nested list
    solver: {dt: 0.001, horizon: 1.0, k_mu: 10}
    trigger: {beta0: 300, gamma0: 300}
"""

from __future__ import annotations

import hashlib
import importlib.resources
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import expressions as ex
from . import five_player
from .dynamics import SolverConfig, SwarmState
from .game import BoxSet, GameSpec
from .graph import Topology, ring
from .trigger import TriggerConfig

__all__ = [
    "ScenarioError",
    "Scenario",
    "load_scenario",
    "parse_scenario",
    "serialize",
    "game_from_expressions",
    "BUILTINS",
]

BUILTINS = ("paper5",)


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


# --- YAML loading with source positions ----------------------------------------


class _Located(str):
    """A string scalar that remembers where it started in the file."""

    line: int
    column: int


class _Loader(yaml.SafeLoader):
    pass


def _construct_str(loader, node):
    value = _Located(loader.construct_scalar(node))
    value.line = node.start_mark.line + 1
    # skip the opening quote for quoted scalars
    value.column = node.start_mark.column + (1 if node.style in ("'", '"') else 0)
    return value


_Loader.add_constructor("tag:yaml.org,2002:str", _construct_str)


def _locate(obj) -> tuple[int | None, int]:
    if isinstance(obj, _Located):
        return obj.line, obj.column
    return None, 0


# --- game from expressions ---------------------------------------------------


def _parse_located(src, what: str):
    line, col = _locate(src)
    try:
        return ex.parse(str(src))
    except ex.ExpressionSyntaxError as err:
        if line is None:
            raise ScenarioError(f"{what}: {err}") from None
        raise ScenarioError(f"{what}: {err.message}", line, col + err.column) from None


def _check_vars(tree, src, what: str, n: int, d: int, only_player: int | None = None):
    line, col = _locate(src)
    for v in ex.variables(tree):
        if v.player is None:
            continue
        if v.player >= n:
            raise ScenarioError(
                f"{what} references player {v.player + 1} but the scenario has {n} players",
                line,
            )
        if v.comp >= d:
            raise ScenarioError(
                f"{what} references component {v.comp + 1} but action_dim is {d}", line
            )
        if only_player is not None and v.player != only_player:
            raise ScenarioError(
                f"{what} may only depend on player {only_player + 1}'s action, found {v.name}",
                line,
            )


def _to_own_block(tree):
    """Rewrite every action variable onto player slot 0 (for ``g_i(t, x_i)``)."""
    if isinstance(tree, ex.Var):
        return tree if tree.player is None else ex.Var(tree.name, 0, tree.comp)
    if isinstance(tree, ex.Num):
        return tree
    if isinstance(tree, ex.Neg):
        return ex.Neg(_to_own_block(tree.arg))
    if isinstance(tree, ex.Call):
        return ex.Call(tree.func, _to_own_block(tree.arg))
    if isinstance(tree, ex.Pow):
        return ex.Pow(_to_own_block(tree.base), tree.exponent)
    if isinstance(tree, ex.Add):
        return ex.Add(_to_own_block(tree.left), _to_own_block(tree.right), tree.minus)
    return ex.Mul(_to_own_block(tree.left), _to_own_block(tree.right))


def game_from_expressions(
    costs: list[str],
    constraints: list[list[str]] | None,
    boxes: list[BoxSet],
    action_dim: int,
    constraint_dim: int = 0,
    name: str = "expression-game",
) -> GameSpec:
    """Compile cost/constraint expressions and their symbolic derivatives into a game."""
    n = len(costs)
    d = action_dim
    q = constraint_dim
    constraints = constraints or [[] for _ in range(n)]
    if len(constraints) != n:
        raise ScenarioError(f"expected constraints for {n} players, got {len(constraints)}")

    cost_fns, grad_fns, g_fns, jac_fns = [], [], [], []
    for i, src in enumerate(costs):
        tree = _parse_located(src, f"cost of player {i + 1}")
        _check_vars(tree, src, f"cost of player {i + 1}", n, d)
        cost_fns.append(ex.compile_expr(tree))
        grad_fns.append([ex.compile_expr(ex.diff(tree, i, k)) for k in range(d)])
    for i, rows in enumerate(constraints):
        if len(rows) != q:
            line, _ = _locate(rows[0]) if rows else (None, 0)
            raise ScenarioError(
                f"player {i + 1} has {len(rows)} constraint expressions, constraint_dim is {q}",
                line,
            )
        g_row, j_row = [], []
        for j, src in enumerate(rows):
            what = f"constraint {j + 1} of player {i + 1}"
            tree = _parse_located(src, what)
            _check_vars(tree, src, what, n, d, only_player=i)
            own = _to_own_block(tree)
            g_row.append(ex.compile_expr(own))
            j_row.append([ex.compile_expr(ex.diff(own, 0, k)) for k in range(d)])
        g_fns.append(g_row)
        jac_fns.append(j_row)

    def cost_value(i, t, x):
        return cost_fns[i](t, x)

    def cost_gradient(i, t, u):
        return np.stack([f(t, u) for f in grad_fns[i]], axis=-1)

    def constraint_value(i, t, xi):
        xi = np.asarray(xi, dtype=float)[..., None, :]
        if q == 0:
            return np.zeros(np.broadcast_shapes(np.shape(t), xi.shape[:-2]) + (0,))
        return np.stack([f(t, xi) for f in g_fns[i]], axis=-1)

    def constraint_jacobian(i, t, xi):
        xi = np.asarray(xi, dtype=float)[..., None, :]
        if q == 0:
            return np.zeros(np.broadcast_shapes(np.shape(t), xi.shape[:-2]) + (0, d))
        rows = [np.stack([f(t, xi) for f in row], axis=-1) for row in jac_fns[i]]
        return np.stack(rows, axis=-2)

    return GameSpec(
        n_players=n,
        action_dim=d,
        constraint_dim=q,
        cost_gradient=cost_gradient,
        cost_value=cost_value,
        constraint_value=constraint_value,
        constraint_jacobian=constraint_jacobian,
        boxes=boxes,
        name=name,
    )


# --- scenario ------------------------------------------------------------------


@dataclass
class Scenario:
    name: str
    n_players: int
    action_dim: int
    constraint_dim: int
    edges: list[tuple[int, int, float]]  # 0-based
    boxes: list[BoxSet]
    builtin: str | None = None
    costs: list[str] | None = None
    constraints: list[list[str]] | None = None
    # initial x: ("uniform", lower, upper) intersected with each box, or ("values", array)
    initial_x: tuple = ("uniform", None, None)
    initial_upsilon: np.ndarray | None = None  # None = box centers
    initial_mu: np.ndarray | None = None  # None = zeros
    solver: dict = field(default_factory=dict)
    trigger: dict = field(default_factory=dict)
    _game: GameSpec | None = field(default=None, repr=False, compare=False)

    def game(self) -> GameSpec:
        if self._game is None:
            if self.builtin == "paper5":
                self._game = five_player.make_game()
            elif self.builtin is not None:
                raise ScenarioError(f"unknown builtin game {self.builtin!r}")
            else:
                self._game = game_from_expressions(
                    self.costs,
                    self.constraints,
                    self.boxes,
                    self.action_dim,
                    self.constraint_dim,
                    name=self.name,
                )
        return self._game

    def topology(self) -> Topology:
        return Topology.from_edges(self.n_players, self.edges)

    def initial_state(self, seed: int) -> SwarmState:
        """Initial state; uniform draws use ``numpy.random.default_rng(seed)``."""
        game = self.game()
        kind = self.initial_x[0]
        if kind == "values":
            x0 = np.asarray(self.initial_x[1], dtype=float).reshape(self.n_players, self.action_dim)
        else:
            rng = np.random.default_rng(seed)
            rows = []
            for b in game.boxes:
                lo = b.lower if self.initial_x[1] is None else np.maximum(b.lower, self.initial_x[1])
                hi = b.upper if self.initial_x[2] is None else np.minimum(b.upper, self.initial_x[2])
                if np.any(lo >= hi):
                    raise ScenarioError("initial range does not intersect an action set")
                rows.append(rng.uniform(lo, hi))
            x0 = np.stack(rows)
        return SwarmState.initial(game, x0, self.initial_upsilon, self.initial_mu)

    def solver_config(self, **overrides) -> SolverConfig:
        params = dict(self.solver)
        params.update({k: v for k, v in overrides.items() if v is not None})
        return SolverConfig(**params)

    def trigger_config(self, **overrides) -> TriggerConfig:
        params = dict(self.trigger)
        params.update({k: v for k, v in overrides.items() if v is not None})
        return TriggerConfig(**params)

    def to_dict(self) -> dict:
        d: dict = {
            "name": self.name,
            "players": self.n_players,
            "action_dim": self.action_dim,
            "constraint_dim": self.constraint_dim,
            "topology": {
                "edges": [
                    [i + 1, j + 1] if w == 1.0 else [i + 1, j + 1, w] for i, j, w in self.edges
                ]
            },
            "boxes": [{"lower": _floats(b.lower), "upper": _floats(b.upper)} for b in self.boxes],
        }
        if self.builtin is not None:
            d["game"] = {"builtin": self.builtin}
        else:
            d["costs"] = [str(c) for c in self.costs]
            if self.constraint_dim:
                d["constraints"] = [[str(g) for g in row] for row in self.constraints]
        init: dict = {}
        if self.initial_x[0] == "values":
            init["x"] = {"values": np.asarray(self.initial_x[1], float).tolist()}
        else:
            uni = {}
            if self.initial_x[1] is not None:
                uni["lower"] = _floats(self.initial_x[1])
            if self.initial_x[2] is not None:
                uni["upper"] = _floats(self.initial_x[2])
            init["x"] = {"uniform": uni}
        init["upsilon"] = (
            "center" if self.initial_upsilon is None else np.asarray(self.initial_upsilon, float).tolist()
        )
        init["mu"] = "zero" if self.initial_mu is None else np.asarray(self.initial_mu, float).tolist()
        d["initial"] = init
        d["solver"] = {k: _plain(v) for k, v in self.solver.items()}
        d["trigger"] = {k: _plain(v) for k, v in self.trigger.items()}
        return d

    @property
    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()


def _floats(a) -> list[float]:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _plain(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, str):
        return str(v)
    return v


def serialize(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.to_dict(), sort_keys=False, default_flow_style=None, width=100)


# --- parsing -------------------------------------------------------------------

_SOLVER_KEYS = {"dt", "horizon", "k_mu", "gain_cap", "mode", "seed", "sample_stride"}
_TRIGGER_KEYS = {"beta0", "gamma0"}


def _require(doc: dict, key: str):
    if key not in doc:
        raise ScenarioError(f"missing required key {key!r}")
    return doc[key]


def _int(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        line, _ = _locate(value)
        raise ScenarioError(f"{what} must be a nonnegative integer, got {value!r}", line)
    return value


def _solver_params(raw: dict) -> dict:
    unknown = set(raw) - _SOLVER_KEYS
    if unknown:
        raise ScenarioError(f"unknown solver keys: {sorted(unknown)}")
    out = {}
    for k, v in raw.items():
        k = str(k)
        if k == "mode":
            out[k] = str(v)
        elif k in ("seed", "sample_stride"):
            out[k] = int(v)
        else:
            out[k] = float(v)
    return out


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse YAML scenario text into a validated :class:`Scenario`."""
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as err:
        mark = err.problem_mark
        raise ScenarioError(
            f"{source}: {err.problem}",
            mark.line + 1 if mark else None,
            mark.column + 1 if mark else None,
        ) from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{source}: top level must be a mapping")

    game_decl = doc.get("game") or {}
    builtin = game_decl.get("builtin")
    if builtin is not None:
        builtin = str(builtin)
        if builtin not in BUILTINS:
            raise ScenarioError(f"unknown builtin game {builtin!r}")
        base = builtin_scenario(builtin)
        n, d, q = base.n_players, base.action_dim, base.constraint_dim
        for key, val in (("players", n), ("action_dim", d), ("constraint_dim", q)):
            if key in doc and doc[key] != val:
                raise ScenarioError(f"{key}={doc[key]} disagrees with builtin {builtin!r} ({val})")
    else:
        n = _int(_require(doc, "players"), "players")
        d = _int(_require(doc, "action_dim"), "action_dim")
        q = _int(doc.get("constraint_dim", 0), "constraint_dim")
        if n < 1 or d < 1:
            raise ScenarioError("players and action_dim must be positive")

    # topology
    topo = doc.get("topology")
    if topo is None:
        edges = [(i, j, 1.0) for i, j, _ in _ring_edges(n)]
    else:
        edges = []
        for e in topo.get("edges", []):
            if not isinstance(e, (list, tuple)) or len(e) not in (2, 3):
                raise ScenarioError(f"edge must be [i, j] or [i, j, weight], got {e!r}")
            i, j = int(e[0]) - 1, int(e[1]) - 1
            if not (0 <= i < n and 0 <= j < n):
                raise ScenarioError(f"edge {list(e)} references a player outside 1..{n}")
            edges.append((i, j, float(e[2]) if len(e) == 3 else 1.0))

    # boxes
    raw_boxes = doc.get("boxes")
    if raw_boxes is None:
        if builtin is None:
            raise ScenarioError("missing required key 'boxes'")
        boxes = builtin_scenario(builtin).boxes
    else:
        if isinstance(raw_boxes, dict):
            raw_boxes = [raw_boxes]
        if len(raw_boxes) not in (1, n):
            raise ScenarioError(f"boxes must have 1 or {n} entries, got {len(raw_boxes)}")
        boxes = []
        for b in raw_boxes:
            lo, hi = np.asarray(b["lower"], float), np.asarray(b["upper"], float)
            if lo.shape != (d,) or hi.shape != (d,):
                raise ScenarioError(f"box bounds must have length action_dim={d}")
            boxes.append(BoxSet(lo, hi))
        if len(boxes) == 1:
            boxes = boxes * n

    costs = constraints = None
    if builtin is None:
        costs = list(_require(doc, "costs"))
        if len(costs) != n:
            raise ScenarioError(f"expected {n} cost expressions, got {len(costs)}")
        raw_g = doc.get("constraints")
        if q and raw_g is None:
            raise ScenarioError("constraint_dim > 0 but no constraints given")
        constraints = [list(row) for row in raw_g] if raw_g is not None else [[] for _ in range(n)]
        if len(constraints) != n:
            raise ScenarioError(f"expected constraint rows for {n} players, got {len(constraints)}")

    # initial conditions
    init = doc.get("initial") or {}
    initial_x: tuple = ("uniform", None, None)
    xdecl = init.get("x")
    if xdecl is not None:
        if "values" in xdecl:
            vals = np.asarray(xdecl["values"], dtype=float)
            if vals.size != n * d:
                raise ScenarioError(f"initial x needs {n}x{d} values")
            initial_x = ("values", vals.reshape(n, d))
        else:
            uni = xdecl.get("uniform") or {}
            lo = np.asarray(uni["lower"], float) if "lower" in uni else None
            hi = np.asarray(uni["upper"], float) if "upper" in uni else None
            initial_x = ("uniform", lo, hi)
    elif builtin is not None:
        initial_x = builtin_scenario(builtin).initial_x
    ups = init.get("upsilon", "center")
    initial_upsilon = None
    if not (isinstance(ups, str) and ups == "center"):
        initial_upsilon = np.asarray(ups, dtype=float)
        if initial_upsilon.size != n * n * d:
            raise ScenarioError(f"initial upsilon needs {n}x{n}x{d} values")
        initial_upsilon = initial_upsilon.reshape(n, n, d)
    mu = init.get("mu", "zero")
    initial_mu = None
    if not (isinstance(mu, str) and mu == "zero"):
        initial_mu = np.asarray(mu, dtype=float)
        if initial_mu.size != n * q:
            raise ScenarioError(f"initial mu needs {n}x{q} values")
        initial_mu = initial_mu.reshape(n, q)

    solver = dict(builtin_scenario(builtin).solver) if builtin else {}
    solver.update(_solver_params(doc.get("solver") or {}))
    trigger = dict(builtin_scenario(builtin).trigger) if builtin else {}
    raw_t = doc.get("trigger") or {}
    if set(raw_t) - _TRIGGER_KEYS:
        raise ScenarioError(f"unknown trigger keys: {sorted(set(raw_t) - _TRIGGER_KEYS)}")
    trigger.update({str(k): float(v) for k, v in raw_t.items()})

    scen = Scenario(
        name=str(doc.get("name", builtin or "scenario")),
        n_players=n,
        action_dim=d,
        constraint_dim=q,
        edges=edges,
        boxes=list(boxes),
        builtin=builtin,
        costs=[c if isinstance(c, str) else str(c) for c in costs] if costs else None,
        constraints=constraints,
        initial_x=initial_x,
        initial_upsilon=initial_upsilon,
        initial_mu=initial_mu,
        solver=solver,
        trigger=trigger,
    )
    # fail early: compile the game and validate the solver defaults
    scen.game()
    scen.solver_config()
    scen.trigger_config()
    return scen


def _ring_edges(n: int):
    if n < 2:
        return []
    return ring(n).edges()


def builtin_scenario(name: str) -> Scenario:
    """The built-in scenario ``name`` (currently only ``paper5``).

    The five-player benchmark communicates over a 5-ring, draws ``x(0)``
    uniformly from ``[-5, 0]^2`` intersected with the action set
    ``[-1, 6]^2`` and uses ``K_mu = 10``, ``dt = 1e-3``, ``T = 1`` and
    ``beta_i(0) = gamma_i(0) = 300``.
    """
    if name != "paper5":
        raise ScenarioError(f"unknown builtin scenario {name!r}")
    lo, hi = five_player.INIT_RANGE
    box = BoxSet(np.full(2, five_player.BOX_LOWER), np.full(2, five_player.BOX_UPPER))
    return Scenario(
        name="paper5",
        n_players=five_player.N_PLAYERS,
        action_dim=five_player.ACTION_DIM,
        constraint_dim=five_player.CONSTRAINT_DIM,
        edges=ring(five_player.N_PLAYERS).edges(),
        boxes=[box] * five_player.N_PLAYERS,
        builtin="paper5",
        initial_x=("uniform", np.full(2, lo), np.full(2, hi)),
        solver={"dt": 1e-3, "horizon": 1.0, "k_mu": five_player.K_MU, "seed": 7},
        trigger={"beta0": 300.0, "gamma0": 300.0},
    )


def load_scenario(path_or_id: str | Path) -> Scenario:
    """Load a built-in scenario by id, a packaged scenario by file name, or a YAML file."""
    key = str(path_or_id)
    if key in BUILTINS:
        return builtin_scenario(key)
    p = Path(key)
    if p.exists():
        return parse_scenario(p.read_text(), source=str(p))
    packaged = importlib.resources.files("online_gne") / "scenarios" / key
    if packaged.is_file():
        return parse_scenario(packaged.read_text(), source=key)
    raise ScenarioError(f"no builtin or file named {key!r}")


def with_solver(scenario: Scenario, **params) -> Scenario:
    solver = dict(scenario.solver)
    solver.update(params)
    return replace(scenario, solver=solver, _game=scenario._game)
