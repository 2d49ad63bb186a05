"""First-order solvers for min-max games with dependent strategy sets.

Four update rules share one driver loop:

* ``run_vanilla_gda``: projected GDA on ``f``, the inner step projected onto
  the constrained slice at the current ``x``.
* ``run_g2da``: descent in ``lambda`` and ``x``, ascent in ``y`` on the
  Lagrangian, all gradients read at the pre-update triple.
* ``run_lgda``: GDA on the Lagrangian with multipliers fixed, ``y`` projected
  onto its base set.
* ``run_gdalo``: descent on the Lagrangian in ``x``, ascent on ``f`` over the
  constrained slice in ``y``, output drawn uniformly from the iterates.
"""
import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError
from .game import StrategyProfile, _vec, eval_lagrangian, inner_slice_spec, lagrangian_gradients
from .projections import Box, Intersection, project


# -- step schedules ---------------------------------------------------------

class StepSchedule:
    """Per-step learning rates; ``rates(T)`` returns a length-``T`` array."""

    def rates(self, horizon):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(StepSchedule):
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError(f"step size must be positive, got {self.eta}")

    def rates(self, horizon):
        return np.full(horizon, float(self.eta))

    def to_dict(self):
        return {"kind": "constant", "eta": self.eta}


@dataclass(frozen=True)
class InverseSqrtHorizon(StepSchedule):
    """Constant ``scale / sqrt(T)``; ``T`` defaults to the run horizon."""

    horizon: Optional[int] = None
    scale: float = 1.0

    def __post_init__(self):
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not self.scale > 0:
            raise ConfigError("scale must be positive")

    def rates(self, horizon):
        T = self.horizon if self.horizon is not None else horizon
        return np.full(horizon, self.scale / math.sqrt(T))

    def to_dict(self):
        return {"kind": "inverse-sqrt-horizon", "horizon": self.horizon, "scale": self.scale}


@dataclass(frozen=True)
class InverseSqrtTime(StepSchedule):
    """Decaying ``eta0 / sqrt(t)`` for steps ``t = 1, 2, ...``."""

    eta0: float

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ConfigError(f"step size must be positive, got {self.eta0}")

    def rates(self, horizon):
        return self.eta0 / np.sqrt(np.arange(1, horizon + 1, dtype=float))

    def to_dict(self):
        return {"kind": "inverse-sqrt-time", "eta0": self.eta0}


def as_schedule(obj):
    """Coerce a float, dict or schedule into a :class:`StepSchedule`."""
    if isinstance(obj, StepSchedule):
        return obj
    if isinstance(obj, (int, float)):
        return Constant(float(obj))
    if isinstance(obj, dict):
        kind = obj.get("kind", "constant")
        if kind == "constant":
            return Constant(float(obj["eta"]))
        if kind == "inverse-sqrt-horizon":
            return InverseSqrtHorizon(obj.get("horizon"), float(obj.get("scale", 1.0)))
        if kind == "inverse-sqrt-time":
            return InverseSqrtTime(float(obj["eta0"]))
        raise ConfigError(f"unknown schedule kind {kind!r}")
    raise ConfigError(f"cannot build a step schedule from {obj!r}")


# -- run configuration and trajectories ------------------------------------

@dataclass
class RunConfig:
    """Settings for one solver run.

    ``eta`` is the shared default; ``eta_x``, ``eta_y`` and ``eta_lambda``
    override it per block. ``seed`` drives the output draw of
    :func:`run_gdalo`. ``record_every`` thins the stored iterates, the
    averages and the objective series still use every iterate.
    """

    horizon: int
    x0: np.ndarray
    y0: np.ndarray
    lam0: Optional[np.ndarray] = None
    eta: object = 1.0
    eta_x: object = None
    eta_y: object = None
    eta_lambda: object = None
    seed: int = 0
    record_every: int = 1
    lagged_constraint: bool = False
    tol: float = 1e-10
    max_iter: int = 10_000

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ConfigError("horizon must be >= 1")
        if int(self.record_every) < 1:
            raise ConfigError("record_every must be >= 1")
        self.horizon = int(self.horizon)
        self.record_every = int(self.record_every)

    def schedule(self, block):
        own = {"x": self.eta_x, "y": self.eta_y, "lambda": self.eta_lambda}[block]
        return as_schedule(self.eta if own is None else own)

    def rates(self, block):
        r = self.schedule(block).rates(self.horizon)
        if not np.all(r > 0):
            raise ConfigError(f"nonpositive step in the {block} schedule")
        return r


@dataclass
class Trajectory:
    """Recorded iterates of one run.

    Attributes
    ----------
    t : ndarray of int
        Iteration index of each stored row; 0 is the initial point.
    x, y : ndarray
        Stored iterates, one row per entry of ``t``.
    lam : ndarray or None
        Stored multipliers for G2DA, the fixed ones for LGDA and GDALO.
    x_avg, y_avg : ndarray
        Mean of iterates ``1..t`` at each stored ``t`` (row for ``t = 0``
        holds the initial point).
    objective : ndarray
        ``f(x^t, y^t)`` for every ``t = 0..T``.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    lam: Optional[np.ndarray]
    x_avg: np.ndarray
    y_avg: np.ndarray
    objective: np.ndarray
    horizon: int
    algorithm: str = ""
    extra: dict = field(default_factory=dict)
    selected_t: Optional[int] = None

    @property
    def final(self):
        lam = None if self.lam is None else self.lam[-1]
        return StrategyProfile(self.x[-1], self.y[-1], lam)

    def profile(self, k):
        lam = None if self.lam is None else self.lam[k]
        return StrategyProfile(self.x[k], self.y[k], lam)

    def rows(self):
        """Header and rows of the CSV export."""
        n, m = self.x.shape[1], self.y.shape[1]
        header = ["t"] + [f"x_{j}" for j in range(n)] + [f"y_{j}" for j in range(m)]
        if self.lam is not None:
            header += [f"lambda_{j}" for j in range(self.lam.shape[1])]
        header += ["f"] + [f"xbar_{j}" for j in range(n)] + [f"ybar_{j}" for j in range(m)]
        extra_cols = sorted(self.extra)
        header += extra_cols
        out = []
        for k, t in enumerate(self.t):
            row = [int(t)] + list(self.x[k]) + list(self.y[k])
            if self.lam is not None:
                row += list(self.lam[k])
            row += [self.objective[t]] + list(self.x_avg[k]) + list(self.y_avg[k])
            row += [self.extra[c][k] for c in extra_cols]
            out.append(row)
        return header, out

    def to_csv(self, path=None):
        """Write the CSV export; returns the text when ``path`` is None."""
        header, rows = self.rows()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, int) else format(float(v), ".17g") for v in row])
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", newline="") as fh:
            fh.write(text)
        return text


class _Recorder:
    def __init__(self, game, x0, y0, lam0, horizon, every):
        self.game = game
        self.every = every
        self.horizon = horizon
        self.ts, self.xs, self.ys, self.lams, self.xa, self.ya = [], [], [], [], [], []
        self.obj = np.empty(horizon + 1)
        self.sx = np.zeros_like(x0)
        self.sy = np.zeros_like(y0)
        self.store(0, x0, y0, lam0)

    def store(self, t, x, y, lam):
        self.obj[t] = float(self.game.objective(x, y))
        if t > 0:
            self.sx = self.sx + x
            self.sy = self.sy + y
        if t % self.every == 0 or t == self.horizon:
            self.ts.append(t)
            self.xs.append(x.copy())
            self.ys.append(y.copy())
            self.lams.append(None if lam is None else lam.copy())
            self.xa.append(x.copy() if t == 0 else self.sx / t)
            self.ya.append(y.copy() if t == 0 else self.sy / t)

    def finish(self, algorithm, keep_lam):
        lam = np.array(self.lams) if keep_lam else None
        return Trajectory(
            t=np.array(self.ts), x=np.array(self.xs), y=np.array(self.ys), lam=lam,
            x_avg=np.array(self.xa), y_avg=np.array(self.ya), objective=self.obj,
            horizon=self.horizon, algorithm=algorithm,
        )


def _start(game, config, lam=None):
    x = _vec("x0", config.x0, game.outer_dim).copy()
    y = _vec("y0", config.y0, game.inner_dim).copy()
    if lam is not None:
        lam = _vec("lambda", lam, game.num_constraints).copy()
        if np.any(lam < 0):
            raise DomainError("multipliers must be nonnegative")
    return x, y, lam


def _proj(spec, v, config):
    return project(spec, v, config.tol, config.max_iter)


def _zero_lam(game):
    return np.zeros(game.num_constraints)


def run_vanilla_gda(game, config):
    """Projected GDA on ``f``, inner step onto ``{y in Y : g(x^t, y) >= 0}``.

    No convergence is promised; on coupled games this can cycle or drift.
    """
    x, y, _ = _start(game, config)
    ex, ey = config.rates("x"), config.rates("y")
    rec = _Recorder(game, x, y, None, config.horizon, config.record_every)
    x_prev = x
    for t in range(config.horizon):
        gx = np.asarray(game.grad_x_objective(x, y), dtype=float).reshape(-1)
        gy = np.asarray(game.grad_y_objective(x, y), dtype=float).reshape(-1)
        x_new = _proj(game.outer_set, x - ex[t] * gx, config)
        slice_at = x_prev if config.lagged_constraint else x
        y_new = _proj(inner_slice_spec(game, slice_at), y + ey[t] * gy, config)
        x_prev, x, y = x, x_new, y_new
        rec.store(t + 1, x, y, None)
    return rec.finish("gda", keep_lam=False)


def run_g2da(game, config):
    """Simultaneous descent on ``(lambda, x)`` and ascent on ``y`` of the Lagrangian.

    ``lambda`` is projected onto the nonnegative orthant, ``x`` onto ``X`` and
    ``y`` onto the base set ``Y``. Multipliers are recorded.
    """
    lam0 = config.lam0 if config.lam0 is not None else _zero_lam(game)
    x, y, lam = _start(game, config, lam0)
    ex, ey, el = config.rates("x"), config.rates("y"), config.rates("lambda")
    rec = _Recorder(game, x, y, lam, config.horizon, config.record_every)
    for t in range(config.horizon):
        gx, gy, gl = lagrangian_gradients(game, x, y, lam)
        lam = np.maximum(lam - el[t] * gl, 0.0)
        x = _proj(game.outer_set, x - ex[t] * gx, config)
        y = _proj(game.inner_base_set, y + ey[t] * gy, config)
        rec.store(t + 1, x, y, lam)
    return rec.finish("g2da", keep_lam=True)


def run_lgda(game, lambda_star, config):
    """GDA on the Lagrangian with multipliers fixed at ``lambda_star``.

    ``x`` is projected onto ``X`` and ``y`` onto ``Y``. The whole iterate
    sequence is the output; its averages are in ``x_avg``/``y_avg``.
    """
    x, y, lam = _start(game, config, lambda_star)
    ex, ey = config.rates("x"), config.rates("y")
    rec = _Recorder(game, x, y, lam, config.horizon, config.record_every)
    for t in range(config.horizon):
        gx, gy, _ = lagrangian_gradients(game, x, y, lam)
        x, y = _proj(game.outer_set, x - ex[t] * gx, config), _proj(game.inner_base_set, y + ey[t] * gy, config)
        rec.store(t + 1, x, y, lam)
    return rec.finish("lgda", keep_lam=True)


def draw_index(seed, horizon):
    """Uniform draw from ``1..horizon`` with a seeded generator."""
    return int(np.random.default_rng(seed).integers(1, horizon + 1))


def run_gdalo(game, lambda_star, config):
    """Lagrangian descent in ``x``, constrained ascent on ``f`` in ``y``.

    Per step ``x <- Pi_X(x - eta grad_x L(x, y, lambda_star))`` and
    ``y <- Pi_S(y + eta grad_y f(x, y))`` with ``S = {y in Y : g(x, y) >= 0}``
    at the current ``x`` (or the previous one when ``lagged_constraint``).

    Returns
    -------
    selected : StrategyProfile
        Iterate ``t`` drawn uniformly from ``1..T`` using ``config.seed``.
    trajectory : Trajectory
        Full record; the drawn index is ``trajectory.selected_t``.
    """
    x, y, lam = _start(game, config, lambda_star)
    ex, ey = config.rates("x"), config.rates("y")
    pick = draw_index(config.seed, config.horizon)
    rec = _Recorder(game, x, y, lam, config.horizon, config.record_every)
    selected = None
    x_prev = x
    for t in range(config.horizon):
        gx, _, _ = lagrangian_gradients(game, x, y, lam)
        gy = np.asarray(game.grad_y_objective(x, y), dtype=float).reshape(-1)
        x_new = _proj(game.outer_set, x - ex[t] * gx, config)
        slice_at = x_prev if config.lagged_constraint else x
        y_new = _proj(inner_slice_spec(game, slice_at), y + ey[t] * gy, config)
        x_prev, x, y = x, x_new, y_new
        rec.store(t + 1, x, y, lam)
        if t + 1 == pick:
            selected = StrategyProfile(x.copy(), y.copy(), lam.copy())
    traj = rec.finish("gdalo", keep_lam=True)
    traj.selected_t = pick
    return selected, traj


def expected_selected_objective(traj):
    """Mean of ``f`` over iterates ``1..T``: the exact expectation of the uniform draw."""
    return float(np.mean(traj.objective[1:]))


# -- bounds ------------------------------------------------------------------

def lgda_average_bound(dist_y0_ystar, dist_x0_xbar, dist_x0_xstar, dist_y0_ybar, lipschitz_lagrangian, horizon):
    """Two-sided band on ``f`` at the LGDA averages minus the equilibrium value.

    All distances are squared norms.

    Returns
    -------
    lower, upper : float
        ``-(|y0-y*|^2 + |x0-xbar|^2 + 2 L^2) / (2 sqrt T)`` and
        ``(|y0-ybar|^2 + |x0-x*|^2 + 2 L^2) / (2 sqrt T)``.
    """
    if horizon < 1 or lipschitz_lagrangian < 0:
        raise ValueError("need horizon >= 1 and a nonnegative constant")
    ll2 = 2.0 * lipschitz_lagrangian ** 2
    den = 2.0 * math.sqrt(horizon)
    return -(dist_y0_ystar + dist_x0_xbar + ll2) / den, (dist_y0_ybar + dist_x0_xstar + ll2) / den


def gdalo_expected_bound(dist_y0_ystar, dist_x0_xstar, lipschitz_objective, lipschitz_lagrangian, horizon):
    """Band on ``E[f(selected)] - f(x*, y*)`` for GDALO at step ``1/sqrt(T)``.

    Returns
    -------
    lower, upper : float
        ``-(|y0-y*|^2 + L_f^2) / (2 sqrt T)`` and ``(|x0-x*|^2 + L_L^2) / (2 sqrt T)``.
    """
    if horizon < 1 or lipschitz_objective < 0 or lipschitz_lagrangian < 0:
        raise ValueError("need horizon >= 1 and nonnegative constants")
    den = 2.0 * math.sqrt(horizon)
    return (-(dist_y0_ystar + lipschitz_objective ** 2) / den,
            (dist_x0_xstar + lipschitz_lagrangian ** 2) / den)


def _sample_bounded(spec, rng):
    if isinstance(spec, Box):
        return rng.uniform(spec.lo, spec.hi)
    if isinstance(spec, Intersection):
        boxes = [s for s in spec.members if isinstance(s, Box)]
        if boxes:
            return project(spec, rng.uniform(boxes[0].lo, boxes[0].hi))
    raise DomainError(f"cannot sample from unbounded set {type(spec).__name__}")


def estimate_lipschitz(game, lambda_star, num_samples=1000, seed=0):
    """Sampled sup-norms of the full gradients of ``f`` and of the Lagrangian.

    Points are drawn uniformly from ``X x Y``. The result is a lower bound on
    the true constants; it is a running max, so for a fixed seed it never
    decreases as ``num_samples`` grows.

    Returns
    -------
    lipschitz_objective, lipschitz_lagrangian : float
    """
    rng = np.random.default_rng(seed)
    lam = _vec("lambda", lambda_star, game.num_constraints)
    lf = ll = 0.0
    zeros = np.zeros(game.num_constraints)
    for _ in range(num_samples):
        x = _sample_bounded(game.outer_set, rng)
        y = _sample_bounded(game.inner_base_set, rng)
        fx, fy, _ = lagrangian_gradients(game, x, y, zeros)
        lx, ly, _ = lagrangian_gradients(game, x, y, lam)
        lf = max(lf, math.sqrt(float(fx @ fx + fy @ fy)))
        ll = max(ll, math.sqrt(float(lx @ lx + ly @ ly)))
    return lf, ll


# -- per-iterate and averaged inequality slacks ------------------------------

def _full(traj):
    if not np.array_equal(traj.t, np.arange(traj.horizon + 1)):
        raise ValueError("slack checks need a trajectory recorded at every step")


def iterate_lemma_slacks(game, lambda_star, traj, etas, x_refs, y_refs, lipschitz_lagrangian, lipschitz_objective):
    """Slack of the one-step distance inequalities along a GDALO trajectory.

    For each step ``t`` and reference point::

        x-side: |x^t-x|^2 - 2 eta (L(x^t,y^t) - L(x,y^t)) + eta^2 L_L^2 - |x^{t+1}-x|^2
        y-side: |y^t-y|^2 + 2 eta (f(x^t,y^t) - f(x^t,y)) + eta^2 L_f^2 - |y^{t+1}-y|^2

    ``y_refs`` must lie in the constrained slice at every ``x^t``.

    Returns
    -------
    slack_x : ndarray, shape (T, len(x_refs))
    slack_y : ndarray, shape (T, len(y_refs))
    """
    _full(traj)
    lam = _vec("lambda", lambda_star, game.num_constraints)
    etas = np.broadcast_to(np.asarray(etas, dtype=float), (traj.horizon,))
    T = traj.horizon
    sx = np.empty((T, len(x_refs)))
    sy = np.empty((T, len(y_refs)))
    for t in range(T):
        xt, yt, x1, y1, eta = traj.x[t], traj.y[t], traj.x[t + 1], traj.y[t + 1], etas[t]
        lt = eval_lagrangian(game, xt, yt, lam)
        ft = float(game.objective(xt, yt))
        for k, xr in enumerate(x_refs):
            rhs = np.sum((xt - xr) ** 2) - 2 * eta * (lt - eval_lagrangian(game, xr, yt, lam)) + eta ** 2 * lipschitz_lagrangian ** 2
            sx[t, k] = rhs - np.sum((x1 - xr) ** 2)
        for k, yr in enumerate(y_refs):
            rhs = np.sum((yt - yr) ** 2) + 2 * eta * (ft - float(game.objective(xt, yr))) + eta ** 2 * lipschitz_objective ** 2
            sy[t, k] = rhs - np.sum((y1 - yr) ** 2)
    return sx, sy


def averaged_lemma_slacks(game, lambda_star, traj, eta, x_refs, y_refs, lipschitz_lagrangian, lipschitz_objective,
                          horizon=None):
    """Slack of the averaged inequalities for a constant-step GDALO run.

    Sums run over the gradient-evaluated iterates ``t = 0..T-1`` and the
    averages ``xbar``, ``ybar`` are taken over the same iterates. ``horizon``
    evaluates the prefix of length ``T = horizon`` instead of the full run::

        x-side: |x0-x|^2/(2 eta T) + eta L_L^2/2 - [(1/T) sum L(x^t,y^t) - L(x, ybar)]
        y-side: [(1/T) sum f(x^t,y^t) - f(xbar, y)] + |y0-y|^2/(2 eta T) + eta L_f^2/2

    Returns
    -------
    slack_x, slack_y : ndarray
    """
    _full(traj)
    lam = _vec("lambda", lambda_star, game.num_constraints)
    T = traj.horizon if horizon is None else int(horizon)
    if not 1 <= T <= traj.horizon:
        raise ValueError(f"horizon must lie in 1..{traj.horizon}")
    xs, ys = traj.x[:T], traj.y[:T]
    xbar, ybar = xs.mean(axis=0), ys.mean(axis=0)
    mean_l = float(np.mean([eval_lagrangian(game, xs[t], ys[t], lam) for t in range(T)]))
    mean_f = float(np.mean(traj.objective[:T]))
    x0, y0 = traj.x[0], traj.y[0]
    sx = np.array([
        np.sum((x0 - xr) ** 2) / (2 * eta * T) + eta * lipschitz_lagrangian ** 2 / 2
        - (mean_l - eval_lagrangian(game, xr, ybar, lam))
        for xr in x_refs
    ])
    sy = np.array([
        (mean_f - float(game.objective(xbar, yr))) + np.sum((y0 - yr) ** 2) / (2 * eta * T)
        + eta * lipschitz_objective ** 2 / 2
        for yr in y_refs
    ])
    return sx, sy


ALGORITHMS = {"gda": run_vanilla_gda, "g2da": run_g2da, "lgda": run_lgda, "gdalo": run_gdalo}
