"""Min-max games with dependent strategy sets.

The outer player picks ``x`` in ``X`` to minimize, the inner player picks
``y`` in ``Y`` subject to ``g(x, y) >= 0`` to maximize ``f(x, y)``.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, DomainError, InfeasibleProfileError
from .projections import Box, FullSpace, Halfspace, Intersection, NonnegativeOrthant, ProjectionSpec

FEAS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class GameDefinition:
    """A min-max game with a coupling constraint ``g(x, y) >= 0``.

    Evaluators take 1-D float arrays. Constraint gradients are ``d x n`` and
    ``d x m`` matrices.

    ``inner_slice`` optionally maps ``x`` to a :class:`ProjectionSpec` for
    ``{y in Y : g(x, y) >= 0}``. When omitted, ``g`` is taken to be affine in
    ``y`` and the slice is assembled from halfspaces.
    """

    outer_dim: int
    inner_dim: int
    num_constraints: int
    objective: Callable
    grad_x_objective: Callable
    grad_y_objective: Callable
    constraints: Callable
    grad_x_constraints: Callable
    grad_y_constraints: Callable
    outer_set: ProjectionSpec
    inner_base_set: ProjectionSpec
    inner_slice: Optional[Callable] = None
    name: str = "game"

    def __post_init__(self):
        if self.outer_dim < 1 or self.inner_dim < 1 or self.num_constraints < 0:
            raise ValueError("outer_dim, inner_dim must be >= 1 and num_constraints >= 0")


@dataclass(frozen=True)
class StrategyProfile:
    """A point ``(x, y)`` with optional multipliers."""

    x: np.ndarray
    y: np.ndarray
    lam: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(self.y, dtype=float)))
        if self.lam is not None:
            object.__setattr__(self, "lam", np.atleast_1d(np.asarray(self.lam, dtype=float)))

    def validate(self, game):
        _vec("x", self.x, game.outer_dim)
        _vec("y", self.y, game.inner_dim)
        if self.lam is not None:
            _vec("lambda", self.lam, game.num_constraints)
        return self


@dataclass(frozen=True)
class StackelbergGap:
    """Outer suboptimality ``epsilon`` and inner suboptimality ``delta``."""

    epsilon: float
    delta: float


def _vec(name, v, n):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.ndim != 1 or v.shape[0] != n:
        raise DimensionError(name, n, v.size)
    return v


def _args(game, x, y, lam=None):
    x = _vec("x", x, game.outer_dim)
    y = _vec("y", y, game.inner_dim)
    if lam is None:
        return x, y, None
    lam = _vec("lambda", lam, game.num_constraints)
    if np.any(lam < 0):
        raise DomainError("lambda must be componentwise nonnegative")
    return x, y, lam


def eval_lagrangian(game, x, y, lam):
    """``f(x, y) + lam . g(x, y)``."""
    x, y, lam = _args(game, x, y, lam)
    val = float(game.objective(x, y))
    if game.num_constraints:
        val += float(lam @ np.asarray(game.constraints(x, y), dtype=float))
    return val


def lagrangian_gradients(game, x, y, lam):
    """Gradients of the Lagrangian in ``x``, ``y`` and ``lam``.

    Returns
    -------
    gx, gy, glam : ndarray
        ``grad_x f + lam^T grad_x g``, ``grad_y f + lam^T grad_y g`` and ``g``.
    """
    x, y, lam = _args(game, x, y, lam)
    gx = np.array(game.grad_x_objective(x, y), dtype=float).reshape(game.outer_dim)
    gy = np.array(game.grad_y_objective(x, y), dtype=float).reshape(game.inner_dim)
    d = game.num_constraints
    if d == 0:
        return gx, gy, np.zeros(0)
    g = np.asarray(game.constraints(x, y), dtype=float).reshape(d)
    gx = gx + lam @ np.asarray(game.grad_x_constraints(x, y), dtype=float).reshape(d, game.outer_dim)
    gy = gy + lam @ np.asarray(game.grad_y_constraints(x, y), dtype=float).reshape(d, game.inner_dim)
    return gx, gy, g


def inner_slice_spec(game, x):
    """ProjectionSpec for ``{y in Y : g(x, y) >= 0}`` at the given ``x``."""
    x = _vec("x", x, game.outer_dim)
    if game.inner_slice is not None:
        return game.inner_slice(x)
    if game.num_constraints == 0:
        return game.inner_base_set
    m = game.inner_dim
    g0 = np.asarray(game.constraints(x, np.zeros(m)), dtype=float).reshape(-1)
    jac = np.asarray(game.grad_y_constraints(x, np.zeros(m)), dtype=float).reshape(-1, m)
    # affine g: g_k(x, 0) + jac_k . y >= 0  <=>  -jac_k . y <= g_k(x, 0)
    members = [] if isinstance(game.inner_base_set, FullSpace) else [game.inner_base_set]
    for k in range(jac.shape[0]):
        if np.any(jac[k] != 0):
            members.append(Halfspace(-jac[k], g0[k]))
        elif g0[k] < -FEAS_TOL:
            raise DomainError(f"constraint {k} is violated for every y at this x")
    if not members:
        return FullSpace(m)
    if len(members) == 1:
        return members[0]
    return Intersection(tuple(members))


def profile_violations(game, x, y, tol=FEAS_TOL):
    """List of ``(name, amount)`` for every violated constraint or set membership."""
    x, y, _ = _args(game, x, y)
    out = []
    vx = game.outer_set.violation(x)
    if vx > tol:
        out.append(("x_set", vx))
    vy = game.inner_base_set.violation(y)
    if vy > tol:
        out.append(("y_set", vy))
    if game.num_constraints:
        g = np.asarray(game.constraints(x, y), dtype=float).reshape(-1)
        for k, gk in enumerate(g):
            if gk < -tol:
                out.append((f"g[{k}]", float(gk)))
    return out


def stackelberg_gap(game, profile, inner_best_response_oracle, outer_value_minimizer_oracle, tol=FEAS_TOL):
    """Measure how far ``profile`` is from a Stackelberg equilibrium.

    Parameters
    ----------
    game : GameDefinition
    profile : StrategyProfile
    inner_best_response_oracle : callable
        ``x -> y`` maximizing ``f(x, .)`` over the constrained slice.
    outer_value_minimizer_oracle : callable
        ``() -> float``, the min-max value.

    Returns
    -------
    StackelbergGap
        ``epsilon = max_y' f(x, y') - value`` and ``delta = max_y' f(x, y') - f(x, y)``,
        each floored at ``-tol``.
    """
    x, y, _ = _args(game, profile.x, profile.y)
    bad = profile_violations(game, x, y, tol)
    if bad:
        raise InfeasibleProfileError(bad)
    y_best = _vec("y", inner_best_response_oracle(x), game.inner_dim)
    best = float(game.objective(x, y_best))
    eps = best - float(outer_value_minimizer_oracle())
    dlt = best - float(game.objective(x, y))
    return StackelbergGap(max(eps, -tol), max(dlt, -tol))


def sample_point(spec, rng, dim=None, margin=0.05):
    """Draw a point strictly inside ``spec`` (or near it for unbounded sets)."""
    if isinstance(spec, Box):
        w = spec.hi - spec.lo
        return spec.lo + w * rng.uniform(margin, 1.0 - margin, size=w.shape[0])
    n = spec.dim if spec.dim is not None else dim
    if n is None:
        raise ValueError("cannot infer dimension to sample")
    if isinstance(spec, NonnegativeOrthant):
        return rng.uniform(0.5, 2.0, size=n)
    if isinstance(spec, FullSpace):
        return rng.normal(size=n)
    if isinstance(spec, Halfspace):
        v = rng.normal(size=n)
        return spec.project(v) - margin * spec.a / np.linalg.norm(spec.a)
    if isinstance(spec, Intersection):
        v = sample_point(spec.members[0], rng, n, margin)
        return spec.project(v)
    raise TypeError(f"cannot sample from {type(spec).__name__}")


def is_bounded(spec):
    if isinstance(spec, Box):
        return True
    if isinstance(spec, Intersection):
        return any(isinstance(s, Box) for s in spec.members)
    return False


@dataclass
class GradientReport:
    """Max relative error of each gradient evaluator against central differences."""

    errors: dict = field(default_factory=dict)

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    def flagged(self, threshold=1e-5):
        return {k: v for k, v in self.errors.items() if v > threshold}


def _central_diff(fn, z, step):
    z = np.asarray(z, dtype=float)
    cols = []
    for j in range(z.shape[0]):
        e = np.zeros_like(z)
        e[j] = step
        cols.append((np.asarray(fn(z + e), dtype=float) - np.asarray(fn(z - e), dtype=float)) / (2 * step))
    return np.stack(cols, axis=-1)


def _rel_err(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1.0))


def check_gradients(game, num_samples=10, step=1e-6, seed=0):
    """Compare the four gradient evaluators to central differences.

    Points are drawn inside ``X`` and ``Y``. The relative error is
    ``|analytic - fd| / max(|fd|, 1)``.

    Returns
    -------
    GradientReport
    """
    if not step > 0:
        raise ValueError("step must be positive")
    rng = np.random.default_rng(seed)
    errs = {"grad_x_objective": 0.0, "grad_y_objective": 0.0}
    if game.num_constraints:
        errs.update(grad_x_constraints=0.0, grad_y_constraints=0.0)
    d = game.num_constraints
    for _ in range(num_samples):
        x = sample_point(game.outer_set, rng, game.outer_dim)
        y = sample_point(game.inner_base_set, rng, game.inner_dim)
        fx = _central_diff(lambda z: game.objective(z, y), x, step)
        fy = _central_diff(lambda z: game.objective(x, z), y, step)
        errs["grad_x_objective"] = max(errs["grad_x_objective"], _rel_err(game.grad_x_objective(x, y), fx))
        errs["grad_y_objective"] = max(errs["grad_y_objective"], _rel_err(game.grad_y_objective(x, y), fy))
        if d:
            gx = _central_diff(lambda z: np.asarray(game.constraints(z, y)).reshape(d), x, step)
            gy = _central_diff(lambda z: np.asarray(game.constraints(x, z)).reshape(d), y, step)
            errs["grad_x_constraints"] = max(errs["grad_x_constraints"], _rel_err(game.grad_x_constraints(x, y), gx))
            errs["grad_y_constraints"] = max(errs["grad_y_constraints"], _rel_err(game.grad_y_constraints(x, y), gy))
    return GradientReport(errs)


@dataclass(frozen=True, eq=False)
class CatalogGame:
    """A closed-form game with its known equilibrium and exact oracles."""

    game: GameDefinition
    x_star: np.ndarray
    y_star: np.ndarray
    lambda_star: np.ndarray
    best_response: Callable
    min_max_value: float
    description: str = ""

    @property
    def equilibrium(self):
        return StrategyProfile(self.x_star, self.y_star, self.lambda_star)

    def value_oracle(self):
        return self.min_max_value


def _unit_box():
    return Box([-1.0], [1.0])


def _coupled_game(name, f, fx, fy):
    # shared by the catalog: x, y in [-1, 1], coupling 1 - x - y >= 0
    return GameDefinition(
        outer_dim=1, inner_dim=1, num_constraints=1,
        objective=f, grad_x_objective=fx, grad_y_objective=fy,
        constraints=lambda x, y: np.array([1.0 - x[0] - y[0]]),
        grad_x_constraints=lambda x, y: np.array([[-1.0]]),
        grad_y_constraints=lambda x, y: np.array([[-1.0]]),
        outer_set=_unit_box(), inner_base_set=_unit_box(),
        inner_slice=lambda x: Box([-1.0], [min(1.0, 1.0 - x[0])]),
        name=name,
    )


def _example_1_1(name):
    game = _coupled_game(
        name,
        lambda x, y: x[0] ** 2 + y[0] + 1.0,
        lambda x, y: np.array([2.0 * x[0]]),
        lambda x, y: np.array([1.0]),
    )
    # f increases in y, so the inner player pushes y up to the slice edge
    return CatalogGame(
        game=game, x_star=np.array([0.5]), y_star=np.array([0.5]), lambda_star=np.array([1.0]),
        best_response=lambda x: np.array([min(1.0, 1.0 - float(np.asarray(x).ravel()[0]))]),
        min_max_value=1.75,
    )


def builtin_games():
    """The three closed-form catalog games keyed by name.

    ``example_1_1``: ``x^2 + y + 1``; ``example_lgda_cycle``: ``x^2 - y^2 + 1``;
    ``example_degenerate``: same definition as ``example_1_1``. All use
    ``x, y in [-1, 1]`` and ``1 - x - y >= 0``.
    """
    e11 = _example_1_1("example_1_1")
    e11 = CatalogGame(**{**e11.__dict__, "description": "x^2 + y + 1, unstable under plain GDA"})
    cyc_game = _coupled_game(
        "example_lgda_cycle",
        lambda x, y: x[0] ** 2 - y[0] ** 2 + 1.0,
        lambda x, y: np.array([2.0 * x[0]]),
        lambda x, y: np.array([-2.0 * y[0]]),
    )
    cyc = CatalogGame(
        game=cyc_game, x_star=np.array([0.0]), y_star=np.array([0.0]), lambda_star=np.array([0.0]),
        # -y^2 peaks at 0, which is always inside the slice since x <= 1
        best_response=lambda x: np.array([0.0]),
        min_max_value=1.0,
        description="x^2 - y^2 + 1, Lagrangian GDA cycles at unit step",
    )
    deg = _example_1_1("example_degenerate")
    deg = CatalogGame(**{**deg.__dict__, "description": "x^2 + y + 1 with multiplier 1, y-gradient vanishes"})
    return {"example_1_1": e11, "example_lgda_cycle": cyc, "example_degenerate": deg}


GAME_IDS = {
    "example-1-1": "example_1_1",
    "lgda-cycle": "example_lgda_cycle",
    "degenerate": "example_degenerate",
}


def get_game(game_id):
    """Look up a catalog game by CLI id or catalog key."""
    key = GAME_IDS.get(game_id, game_id)
    games = builtin_games()
    if key not in games:
        raise KeyError(f"unknown game {game_id!r}; choose from {sorted(GAME_IDS)}")
    return games[key]
