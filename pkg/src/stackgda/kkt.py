"""Closed-form optimal KKT multipliers for block-separable log games.

The game class: outer ``x`` in ``X``, inner blocks ``y_1..y_n`` in the
nonnegative orthant, objective::

    f1(x) + sum_i a_i log f2(x, y_i) + sum_i b_i log f3(y_i)

and per-block constraints ``g_i(y_i, x) <= c_i``. When ``f2``, ``f3`` and
``g_i`` are concave and degree-1 homogeneous in ``y_i``, multiplying the
first-order conditions by ``y_i`` and applying Euler's identity collapses
them to ``a_i + b_i = lambda_i c_i``.

Constraints here are kept in ``g <= c`` form. :func:`to_game` hands them to
:mod:`stackgda.game` as ``c - g >= 0``.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError
from .game import GameDefinition
from .projections import NonnegativeOrthant


@dataclass(frozen=True)
class StructuredGameSpec:
    """Weights ``a``, ``b`` and right-hand sides ``c`` of the block game."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if not a.shape == b.shape == c.shape:
            raise ValueError(f"a, b, c must share a length, got {a.shape}, {b.shape}, {c.shape}")
        if np.any(c <= 0):
            raise DomainError("constraint right-hand sides c must be strictly positive")
        if np.any(a < 0) or np.any(b < 0):
            raise DomainError("log weights a, b must be nonnegative")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)


def closed_form_multipliers(spec):
    """``lambda_i = (a_i + b_i) / c_i``."""
    return (spec.a + spec.b) / spec.c


def fisher_spec(budgets):
    """Block weights of the market program: ``a = c = budgets``, ``b = 0``."""
    budgets = np.asarray(budgets, dtype=float)
    return StructuredGameSpec(budgets, np.zeros_like(budgets), budgets)


@dataclass
class HomogeneityReport:
    """Worst relative violations of ``f(k y) = k f(y)`` and ``grad f(y) . y = f(y)``."""

    scaling: float
    euler: float

    @property
    def max_violation(self):
        return max(self.scaling, self.euler)

    def ok(self, tol=1e-6):
        return self.max_violation <= tol


def _fd_grad(fn, y, step):
    g = np.empty_like(y)
    for j in range(y.shape[0]):
        e = np.zeros_like(y)
        h = step * max(1.0, abs(y[j]))
        e[j] = h
        g[j] = (fn(y + e) - fn(y - e)) / (2 * h)
    return g


def verify_homogeneity(fn, points, scales, step=1e-6, degree=1):
    """Check degree-1 homogeneity of ``fn`` at sample points.

    Parameters
    ----------
    fn : callable
        ``y -> float``.
    points : iterable of array_like
    scales : iterable of float
        Positive factors ``k`` for the scaling identity.
    step : float
        Relative finite-difference step for the Euler identity.

    Returns
    -------
    HomogeneityReport
        Violations are ``|lhs - rhs| / max(|rhs|, 1)``.
    """
    if degree != 1:
        raise ValueError("only degree-1 homogeneity is supported")
    worst_scale = worst_euler = 0.0
    for y in points:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        fy = float(fn(y))
        for k in scales:
            rhs = k * fy
            worst_scale = max(worst_scale, abs(float(fn(k * y)) - rhs) / max(abs(rhs), 1.0))
        lhs = float(_fd_grad(fn, y, step) @ y)
        worst_euler = max(worst_euler, abs(lhs - fy) / max(abs(fy), 1.0))
    return HomogeneityReport(worst_scale, worst_euler)


@dataclass(frozen=True, eq=False)
class StructuredGame:
    """A concrete game of the block log form.

    Block functions receive the block index ``i`` and the block ``y_i``.
    ``grad_*`` entries are gradients in ``y_i`` unless suffixed ``_x``.
    Gradients in ``x`` are needed only by :func:`to_game`.
    """

    spec: StructuredGameSpec
    block_dim: int
    f2: Callable
    grad_f2: Callable
    f3: Callable
    grad_f3: Callable
    g: Callable
    grad_g: Callable
    outer_dim: int = 0
    outer_set: object = None
    f1: Optional[Callable] = None
    grad_f1: Optional[Callable] = None
    grad_f2_x: Optional[Callable] = None
    grad_g_x: Optional[Callable] = None

    @property
    def num_blocks(self):
        return self.spec.a.shape[0]


@dataclass
class StationarityReport:
    """Worst KKT residuals over the sampled outer points."""

    complementarity: float
    stationarity: float

    @property
    def max_residual(self):
        return max(self.complementarity, self.stationarity)

    def ok(self, tol=1e-5):
        return self.max_residual <= tol


def block_lagrangian_gradient(game, x, i, yi, lam_i):
    """``d/dy_i`` of ``a_i log f2 + b_i log f3 + lam_i (c_i - g_i)``."""
    a, b = game.spec.a[i], game.spec.b[i]
    grad = -lam_i * np.asarray(game.grad_g(x, i, yi), dtype=float)
    # zero-weight terms are skipped so a vanishing f2 or f3 is harmless
    if a > 0:
        grad = grad + a * np.asarray(game.grad_f2(x, i, yi), dtype=float) / game.f2(x, i, yi)
    if b > 0:
        grad = grad + b * np.asarray(game.grad_f3(i, yi), dtype=float) / game.f3(i, yi)
    return grad


def verify_kkt_stationarity(game, lambda_star, inner_argmax_oracle, xs, zero_tol=1e-12):
    """Check the KKT conditions of the inner problem at the oracle's argmax.

    The inner set is the nonnegative orthant, so at a coordinate with
    ``y_ij = 0`` stationarity only requires ``dL/dy_ij <= 0``.

    Parameters
    ----------
    game : StructuredGame
    lambda_star : array_like
        Candidate multipliers, one per block.
    inner_argmax_oracle : callable
        ``x -> Y`` with ``Y`` of shape ``(n, block_dim)``.
    xs : iterable of array_like
        Outer points to test.

    Returns
    -------
    StationarityReport
    """
    lam = np.asarray(lambda_star, dtype=float)
    comp = stat = 0.0
    for x in xs:
        x = np.asarray(x, dtype=float)
        Y = np.asarray(inner_argmax_oracle(x), dtype=float).reshape(game.num_blocks, game.block_dim)
        for i in range(game.num_blocks):
            yi = Y[i]
            comp = max(comp, abs(lam[i] * (game.spec.c[i] - float(game.g(x, i, yi)))))
            grad = block_lagrangian_gradient(game, x, i, yi, lam[i])
            inside = yi > zero_tol
            if np.any(inside):
                stat = max(stat, float(np.max(np.abs(grad[inside]))))
            if np.any(~inside):
                stat = max(stat, float(np.max(np.maximum(grad[~inside], 0.0))))
    return StationarityReport(comp, stat)


def to_game(game, name="structured"):
    """Express a :class:`StructuredGame` as a :class:`GameDefinition`.

    ``y`` is the row-major flattening of the ``n x block_dim`` blocks and the
    constraints are emitted as ``c_i - g_i(y_i, x) >= 0``.
    """
    if game.outer_set is None or game.f1 is None or game.grad_f1 is None or game.grad_g_x is None:
        raise ValueError("to_game needs outer_set, f1, grad_f1 and grad_g_x")
    n, m, k = game.num_blocks, game.block_dim, game.outer_dim
    a, b, c = game.spec.a, game.spec.b, game.spec.c

    def blocks(y):
        return np.asarray(y, dtype=float).reshape(n, m)

    def objective(x, y):
        Y = blocks(y)
        val = float(game.f1(x))
        for i in range(n):
            if a[i] > 0:
                val += a[i] * np.log(game.f2(x, i, Y[i]))
            if b[i] > 0:
                val += b[i] * np.log(game.f3(i, Y[i]))
        return val

    def grad_x(x, y):
        Y = blocks(y)
        g = np.array(game.grad_f1(x), dtype=float)
        if game.grad_f2_x is not None:
            for i in range(n):
                if a[i] > 0:
                    g = g + a[i] * np.asarray(game.grad_f2_x(x, i, Y[i])) / game.f2(x, i, Y[i])
        return g

    def grad_y(x, y):
        Y = blocks(y)
        return np.concatenate([block_lagrangian_gradient(game, x, i, Y[i], 0.0) for i in range(n)])

    def constraints(x, y):
        Y = blocks(y)
        return np.array([c[i] - game.g(x, i, Y[i]) for i in range(n)])

    def grad_x_constraints(x, y):
        Y = blocks(y)
        return -np.array([np.asarray(game.grad_g_x(x, i, Y[i]), dtype=float) for i in range(n)]).reshape(n, k)

    def grad_y_constraints(x, y):
        Y = blocks(y)
        J = np.zeros((n, n * m))
        for i in range(n):
            J[i, i * m:(i + 1) * m] = -np.asarray(game.grad_g(x, i, Y[i]), dtype=float)
        return J

    return GameDefinition(
        outer_dim=k, inner_dim=n * m, num_constraints=n,
        objective=objective, grad_x_objective=grad_x, grad_y_objective=grad_y,
        constraints=constraints, grad_x_constraints=grad_x_constraints,
        grad_y_constraints=grad_y_constraints,
        outer_set=game.outer_set, inner_base_set=NonnegativeOrthant(n * m), name=name,
    )


def cobb_douglas_block_game(spec, alphas, betas, outer_set=None):
    """Toy game with Cobb-Douglas ``f2``, ``f3`` and priced budgets ``x . y_i <= c_i``.

    ``alphas``, ``betas`` are ``n x m`` rows of exponents summing to 1. The
    inner argmax has a closed form, see :func:`cobb_douglas_block_argmax`.
    """
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    n, m = alphas.shape

    def cd(w, y):
        return float(np.prod(np.power(y, w)))

    def cd_grad(w, y):
        # zero-exponent coordinates contribute nothing, even at y_j = 0
        out = np.zeros_like(y)
        on = w > 0
        out[on] = cd(w, y) * w[on] / y[on]
        return out

    return StructuredGame(
        spec=spec, block_dim=m,
        f2=lambda x, i, y: cd(alphas[i], y), grad_f2=lambda x, i, y: cd_grad(alphas[i], y),
        f3=lambda i, y: cd(betas[i], y), grad_f3=lambda i, y: cd_grad(betas[i], y),
        g=lambda x, i, y: float(x @ y), grad_g=lambda x, i, y: np.asarray(x, dtype=float),
        outer_dim=m, outer_set=outer_set if outer_set is not None else NonnegativeOrthant(m),
        f1=lambda x: float(np.sum(x)), grad_f1=lambda x: np.ones(m),
        grad_g_x=lambda x, i, y: np.asarray(y, dtype=float),
    )


def cobb_douglas_block_argmax(spec, alphas, betas, x):
    """Inner argmax of :func:`cobb_douglas_block_game` at prices ``x > 0``.

    The block objective is ``sum_j (a alpha_j + b beta_j) log y_j`` plus a
    constant, so the budget ``c_i`` splits in proportion to those weights.
    """
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    x = np.asarray(x, dtype=float)
    Y = np.zeros_like(alphas)
    for i in range(alphas.shape[0]):
        w = spec.a[i] * alphas[i] + spec.b[i] * betas[i]
        tot = w.sum()
        if tot > 0:
            Y[i] = spec.c[i] * w / (tot * x)
    return Y
