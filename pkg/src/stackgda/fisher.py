"""Fisher markets: utilities, demands, the market min-max program and MBRD.

Buyers ``i`` hold budgets ``b_i`` and one of three utility classes over ``m``
unit-supply goods:

* linear ``v . x``
* Cobb-Douglas ``prod x_j^alpha_j`` with ``alpha = v / sum(v)``
* Leontief ``min_j x_j / v_j`` over goods with ``v_j > 0``

The outer player sets prices ``p >= 0`` to minimize
``sum(p) + sum_i b_i log u_i(x_i)``, the inner player picks allocations with
``x_i . p <= b_i``.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize

from . import kernels
from .algorithms import Trajectory, as_schedule, draw_index
from .errors import ConfigError, DimensionError, DivergenceError, DomainError, ProjectionError, UnboundedDemandError
from .game import GameDefinition
from .kkt import StructuredGame, fisher_spec
from .projections import NonnegativeOrthant

UTILITY_KINDS = {"linear": kernels.LINEAR, "cobb-douglas": kernels.COBB_DOUGLAS, "leontief": kernels.LEONTIEF}
UTILITY_NAMES = {v: k for k, v in UTILITY_KINDS.items()}

# subgradient step constants of the reference descent, tuned per class
DESCENT_STEP = {"linear": 0.1, "cobb-douglas": 3.0, "leontief": 30.0}
DEFAULT_DESCENT_ITERS = 200_000


def _kind(name):
    if name not in UTILITY_KINDS:
        raise ConfigError(f"unknown utility class {name!r}; choose from {sorted(UTILITY_KINDS)}")
    return UTILITY_KINDS[name]


@dataclass(frozen=True, eq=False)
class UtilitySpec:
    """One buyer's utility class and valuation vector."""

    kind: str
    valuations: np.ndarray

    def __post_init__(self):
        _kind(self.kind)
        v = np.atleast_1d(np.asarray(self.valuations, dtype=float))
        if np.any(v < 0) or not np.any(v > 0):
            raise DomainError("valuations must be nonnegative with at least one positive entry")
        object.__setattr__(self, "valuations", v)

    @property
    def code(self):
        return UTILITY_KINDS[self.kind]

    @property
    def params(self):
        """Kernel parameters: normalized exponents for Cobb-Douglas, raw valuations otherwise."""
        if self.kind == "cobb-douglas":
            return self.valuations / self.valuations.sum()
        return self.valuations


def utility(spec, x):
    """Utility of bundle ``x``."""
    x = np.asarray(x, dtype=float)
    w = spec.params
    if spec.kind == "linear":
        return float(w @ x)
    if spec.kind == "cobb-douglas":
        on = w > 0
        if np.any(x[on] <= 0):
            return 0.0
        return float(math.exp(np.sum(w[on] * np.log(x[on]))))
    on = w > 0
    return float(np.min(x[on] / w[on]))


def utility_gradient(spec, x):
    """Gradient of the utility (a subgradient for Leontief).

    Cobb-Douglas coordinates below ``1e-9`` are evaluated at ``1e-9``. The
    Leontief subgradient puts ``1 / v_k`` on the lowest-index minimizer ``k``.
    """
    x = np.asarray(x, dtype=float)
    w = spec.params
    if spec.kind == "linear":
        return w.copy()
    if spec.kind == "cobb-douglas":
        xc = np.maximum(x, kernels.CD_FLOOR)
        on = w > 0
        u = math.exp(float(np.sum(w[on] * np.log(xc[on]))))
        return w * u / xc
    on = np.flatnonzero(w > 0)
    k = on[int(np.argmin(x[on] / w[on]))]
    g = np.zeros_like(x)
    g[k] = 1.0 / w[k]
    return g


def demand(spec, budget, p):
    """Utility-maximizing bundle at prices ``p`` with the given budget.

    Raises
    ------
    UnboundedDemandError
        When a good the buyer wants is free (the maximum is not attained).
    """
    p = np.asarray(p, dtype=float)
    if p.shape != spec.valuations.shape:
        raise DimensionError("p", spec.valuations.shape[0], p.shape[0])
    x = kernels.buyer_demand(spec.code, spec.params, float(budget), p)
    if x is None:
        raise UnboundedDemandError(f"{spec.kind} demand is unbounded at prices {p}")
    return x


@dataclass(frozen=True, eq=False)
class FisherMarket:
    """Budgets, a shared utility class and an ``n x m`` valuation matrix."""

    budgets: np.ndarray
    valuations: np.ndarray
    utility: str
    seed: object = None

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.budgets, dtype=float))
        V = np.atleast_2d(np.asarray(self.valuations, dtype=float))
        _kind(self.utility)
        if V.shape[0] != b.shape[0]:
            raise DimensionError("valuations", b.shape[0], V.shape[0])
        if np.any(b <= 0):
            raise DomainError("budgets must be strictly positive")
        if np.any(V < 0) or np.any(~np.any(V > 0, axis=1)):
            raise DomainError("every buyer needs nonnegative valuations with a positive entry")
        object.__setattr__(self, "budgets", b)
        object.__setattr__(self, "valuations", V)

    @property
    def n(self):
        return self.valuations.shape[0]

    @property
    def m(self):
        return self.valuations.shape[1]

    @property
    def code(self):
        return UTILITY_KINDS[self.utility]

    @property
    def params(self):
        if self.utility == "cobb-douglas":
            return self.valuations / self.valuations.sum(axis=1, keepdims=True)
        return self.valuations

    def spec(self, i):
        return UtilitySpec(self.utility, self.valuations[i])

    def with_utility(self, utility):
        return FisherMarket(self.budgets, self.valuations, utility, self.seed)

    def permuted(self, perm):
        """Same market with goods relabeled by ``perm``."""
        return FisherMarket(self.budgets, self.valuations[:, perm], self.utility, self.seed)

    def to_dict(self):
        return {
            "n": self.n, "m": self.m,
            "budgets": [float(v) for v in self.budgets],
            "utility": self.utility,
            "valuations": [[float(v) for v in row] for row in self.valuations],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        mk = cls(d["budgets"], d["valuations"], d["utility"], d.get("seed"))
        if mk.n != d.get("n", mk.n) or mk.m != d.get("m", mk.m):
            raise DimensionError("market", (d.get("n"), d.get("m")), (mk.n, mk.m))
        return mk


def save_market(market, path):
    with open(path, "w") as fh:
        json.dump(market.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_market(path):
    with open(path) as fh:
        return FisherMarket.from_dict(json.load(fh))


def generate_market(seed, n=5, m=8, budget_range=(10.0, 20.0), valuation_range=(5.0, 15.0),
                    utility_class="linear"):
    """Draw a market from ``seed``.

    Budgets and valuations are uniform on their ranges. The draws do not
    depend on ``utility_class``, so one seed gives the same numbers for every
    class.
    """
    if not (0 < budget_range[0] <= budget_range[1] and 0 < valuation_range[0] <= valuation_range[1]):
        raise ConfigError("ranges must be positive and ordered")
    _kind(utility_class)
    rng = np.random.default_rng(seed)
    budgets = rng.uniform(budget_range[0], budget_range[1], size=n)
    vals = rng.uniform(valuation_range[0], valuation_range[1], size=(n, m))
    return FisherMarket(budgets, vals, utility_class, seed if isinstance(seed, int) else None)


# -- the market min-max program ---------------------------------------------

def _buyer_utilities(market, X):
    return np.array([utility(market.spec(i), X[i]) for i in range(market.n)])


def eg_objective(market, p, X, delta=0.0):
    """``sum(p) + sum_i b_i log(u_i(x_i) + delta)``.

    Raises
    ------
    DomainError
        If some ``u_i(x_i) + delta <= 0``; the message names the buyer.
    """
    p = np.asarray(p, dtype=float)
    X = np.asarray(X, dtype=float).reshape(market.n, market.m)
    u = _buyer_utilities(market, X) + delta
    bad = np.flatnonzero(u <= 0)
    if bad.size:
        raise DomainError(f"log of nonpositive utility for buyer {int(bad[0])}")
    return float(np.sum(p) + np.sum(market.budgets * np.log(u)))


def eg_game(market, delta=0.0):
    """The market program as a :class:`GameDefinition`.

    Outer variable: prices (length ``m``). Inner variable: the allocation
    flattened row-major (length ``n*m``). Constraints ``b_i - x_i . p >= 0``.
    """
    n, m = market.n, market.m
    specs = [market.spec(i) for i in range(n)]
    b = market.budgets

    def rows(y):
        return np.asarray(y, dtype=float).reshape(n, m)

    def grad_y(p, y):
        X = rows(y)
        out = np.empty((n, m))
        for i in range(n):
            out[i] = b[i] / (utility(specs[i], X[i]) + delta) * utility_gradient(specs[i], X[i])
        return out.ravel()

    def grad_y_constraints(p, y):
        J = np.zeros((n, n * m))
        for i in range(n):
            J[i, i * m:(i + 1) * m] = -p
        return J

    return GameDefinition(
        outer_dim=m, inner_dim=n * m, num_constraints=n,
        objective=lambda p, y: eg_objective(market, p, rows(y), delta),
        grad_x_objective=lambda p, y: np.ones(m),
        grad_y_objective=grad_y,
        constraints=lambda p, y: b - rows(y) @ p,
        grad_x_constraints=lambda p, y: -rows(y),
        grad_y_constraints=grad_y_constraints,
        outer_set=NonnegativeOrthant(m), inner_base_set=NonnegativeOrthant(n * m),
        name=f"fisher-{market.utility}",
    )


def structured_game(market):
    """The market program in block-log form (``a = c = budgets``, ``b = 0``)."""
    specs = [market.spec(i) for i in range(market.n)]
    m = market.m
    return StructuredGame(
        spec=fisher_spec(market.budgets), block_dim=m,
        f2=lambda p, i, y: utility(specs[i], y), grad_f2=lambda p, i, y: utility_gradient(specs[i], y),
        f3=lambda i, y: 1.0, grad_f3=lambda i, y: np.zeros(m),
        g=lambda p, i, y: float(np.asarray(p) @ y), grad_g=lambda p, i, y: np.asarray(p, dtype=float),
        outer_dim=m, outer_set=NonnegativeOrthant(m),
        f1=lambda p: float(np.sum(p)), grad_f1=lambda p: np.ones(m),
        grad_g_x=lambda p, i, y: np.asarray(y, dtype=float),
    )


def market_value(market, p, delta=0.0):
    """Outer value ``max_X`` of the program at prices ``p`` via closed-form demands.

    Returns ``inf`` when some demand is unbounded.
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (market.m,):
        raise DimensionError("p", market.m, p.size)
    return kernels.market_value(market.code, market.params, market.budgets, p, float(delta))


def all_demands(market, p):
    return np.array([demand(market.spec(i), market.budgets[i], p) for i in range(market.n)])


# -- equilibrium oracles ----------------------------------------------------

@dataclass
class EquilibriumCertificate:
    """Equilibrium prices and allocation with their residuals.

    ``clearing_residual`` is the worst of ``|sum_i x_ij - 1|`` over priced
    goods and ``sum_i x_ij - 1`` over free goods; ``budget_residual`` the worst
    ``|x_i . p - b_i|``.
    """

    p_star: np.ndarray
    X_star: np.ndarray
    f_star: float
    clearing_residual: float
    budget_residual: float
    certified: bool
    method: str
    tol: float

    def to_dict(self):
        return {
            "p_star": [float(v) for v in self.p_star],
            "f_star": float(self.f_star),
            "clearing_residual": float(self.clearing_residual),
            "budget_residual": float(self.budget_residual),
            "certified": bool(self.certified),
            "method": self.method,
            "tol": self.tol,
        }


def clearing_residual(p, X, price_tol=1e-9):
    sold = np.asarray(X).sum(axis=0) - 1.0
    priced = np.asarray(p) > price_tol
    r = np.where(priced, np.abs(sold), np.maximum(sold, 0.0))
    return float(np.max(r, initial=0.0))


def budget_residual(market, p, X):
    return float(np.max(np.abs(np.asarray(X) @ p - market.budgets)))


def _linear_allocation(market, p, rel_tol=1e-3):
    # split each budget over its (near) bang-per-buck-maximal goods to best clear supply
    n, m = market.n, market.m
    V = market.valuations
    edges = []
    for i in range(n):
        bpb = np.where(p > 0, V[i] / np.where(p > 0, p, 1.0), 0.0)
        top = bpb.max()
        edges += [(i, j) for j in range(m) if p[j] > 0 and bpb[j] >= (1 - rel_tol) * top]
    k = len(edges)
    # variables: one per edge, then one slack per good
    c = np.concatenate([np.zeros(k), np.ones(m)])
    A_eq = np.zeros((n, k + m))
    for e, (i, j) in enumerate(edges):
        A_eq[i, e] = p[j]
    A_ub = np.zeros((2 * m, k + m))
    b_ub = np.zeros(2 * m)
    for e, (i, j) in enumerate(edges):
        A_ub[j, e] = 1.0
        A_ub[m + j, e] = -1.0
    for j in range(m):
        A_ub[j, k + j] = -1.0
        b_ub[j] = 1.0
        A_ub[m + j, k + j] = -1.0
        b_ub[m + j] = -1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=market.budgets, bounds=(0, None), method="highs")
    if res.status != 0:
        return all_demands(market, p)
    X = np.zeros((n, m))
    for e, (i, j) in enumerate(edges):
        X[i, j] = res.x[e]
    return X


def _polish(market, p):
    # bound-constrained quasi-Newton on the outer value; used where it is differentiable
    m = market.m

    def fg(q):
        v = market_value(market, q)
        if not np.isfinite(v):
            return 1e300, np.zeros(m)
        return v, 1.0 - all_demands(market, q).sum(axis=0)

    res = minimize(fg, p, jac=True, method="L-BFGS-B", bounds=[(0.0, None)] * m,
                   options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000})
    return np.asarray(res.x), float(res.fun)


def equilibrium_oracle(market, method="reference_descent", tol=None, iters=DEFAULT_DESCENT_ITERS,
                       step=None, seed=0):
    """Equilibrium prices of ``market`` with a residual certificate.

    Parameters
    ----------
    method : {"analytic_cd", "reference_descent"}
        ``analytic_cd`` uses ``p_j = sum_i b_i alpha_ij`` (Cobb-Douglas only).
        ``reference_descent`` runs projected subgradient descent on the outer
        value with steps ``step / sqrt(t)``. Linear markets restart from the
        best point twice more with the step constant divided by 10 each time.
        For Cobb-Douglas and Leontief, where the value is differentiable, the
        best point is refined by L-BFGS-B and the lower value kept.
    tol : float, optional
        Clearing tolerance for ``certified``. Defaults to 1e-9 for
        ``analytic_cd``, 1e-6 for smooth classes and 1e-2 for linear.
    iters : int
        Descent iterations per stage.
    step : float, optional
        Step constant; defaults to the per-class value in ``DESCENT_STEP``.
    seed : int
        Start of the descent, drawn uniformly from ``[5, 15]^m``.

    Returns
    -------
    EquilibriumCertificate
        Returned even when not certified.
    """
    b = market.budgets
    if method == "analytic_cd":
        if market.utility != "cobb-douglas":
            raise ConfigError("analytic_cd needs a Cobb-Douglas market")
        tol = 1e-9 if tol is None else tol
        p = (b[:, None] * market.params).sum(axis=0)
        f = market_value(market, p)
    elif method == "reference_descent":
        if tol is None:
            tol = 1e-2 if market.utility == "linear" else 1e-6
        c = DESCENT_STEP[market.utility] if step is None else step
        p = np.random.default_rng(seed).uniform(5.0, 15.0, size=market.m)
        f = math.inf
        for stage in range(3 if market.utility == "linear" else 1):
            best_p, best_v, avg_p, avg_v = kernels.reference_descent(
                market.code, market.params, b, p, int(iters), float(c) / 10 ** stage, 0.0)
            q, fq = (best_p, best_v) if best_v <= avg_v else (avg_p, avg_v)
            if fq < f:
                p, f = np.asarray(q, dtype=float), fq
        if market.utility != "linear":
            q, fq = _polish(market, p)
            if fq < f:
                p, f = q, fq
    else:
        raise ConfigError(f"unknown oracle method {method!r}")
    p = np.asarray(p, dtype=float)
    try:
        X = _linear_allocation(market, p) if market.utility == "linear" else all_demands(market, p)
    except UnboundedDemandError:
        X = np.full((market.n, market.m), np.nan)
    cr = clearing_residual(p, X)
    br = budget_residual(market, p, X)
    ok = bool(np.isfinite(f) and cr <= tol and br <= max(tol, 1e-9) * max(1.0, float(b.max())))
    return EquilibriumCertificate(p, X, float(f), cr, br, ok, method, float(tol))


def exploitability(market, p, f_star, delta=0.0, tol=1e-9):
    """``V(p) - f_star`` with closed-form demands.

    Returns
    -------
    value, raw : float
        ``raw`` unclipped; ``value`` floored at ``-tol``.
    """
    raw = market_value(market, p, delta) - float(f_star)
    return max(raw, -tol), raw


# -- myopic best-response dynamics -------------------------------------------

@dataclass
class MBRDConfig:
    """Settings for :func:`run_mbrd`.

    ``eta_p`` and ``eta_x`` accept anything :func:`as_schedule` does.
    ``projection`` is ``"dykstra"`` or ``"pocs"``; ``lagged_constraint``
    projects allocations against the previous prices.
    """

    horizon: int
    eta_p: object = 1.0
    eta_x: object = 1.0
    delta: float = 0.0
    projection: str = "dykstra"
    lagged_constraint: bool = False
    seed: int = 0
    tol: float = 1e-10
    max_iter: int = 10_000

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ConfigError("horizon must be >= 1")
        if self.delta < 0:
            raise ConfigError("delta must be nonnegative")
        if self.projection not in ("dykstra", "pocs"):
            raise ConfigError(f"unknown projection mode {self.projection!r}")
        self.horizon = int(self.horizon)


@dataclass(frozen=True)
class MarketState:
    prices: np.ndarray
    allocation: np.ndarray


@dataclass
class MBRDResult:
    """Price and allocation paths of one MBRD run.

    ``constraint_prices[t]`` is the price vector row ``t+1`` was projected
    against. ``avg_prices[t]`` is the mean of ``prices[1..t]`` (row 0 holds
    the initial prices).
    """

    market: FisherMarket
    config: MBRDConfig
    prices: np.ndarray
    allocations: np.ndarray
    constraint_prices: np.ndarray
    selected_t: int
    extra: dict = field(default_factory=dict)

    @property
    def avg_prices(self):
        T = self.prices.shape[0] - 1
        out = np.empty_like(self.prices)
        out[0] = self.prices[0]
        out[1:] = np.cumsum(self.prices[1:], axis=0) / np.arange(1, T + 1)[:, None]
        return out

    @property
    def selected(self):
        return MarketState(self.prices[self.selected_t].copy(), self.allocations[self.selected_t].copy())

    def exploitability_series(self, f_star, averaged=True):
        """Raw exploitability of the (averaged) prices at ``t = 1..T``."""
        P = self.avg_prices[1:] if averaged else self.prices[1:]
        mk = self.market
        return kernels.market_values(mk.code, mk.params, mk.budgets, P, 0.0) - float(f_star)

    def to_trajectory(self, f_star=None):
        """Export in the solver trajectory layout with market columns appended."""
        mk = self.market
        T = self.prices.shape[0] - 1
        n, m = mk.n, mk.m
        Y = self.allocations.reshape(T + 1, n * m)
        # boundary allocations can have zero utility; the export records -inf there
        with np.errstate(divide="ignore"):
            obj = np.array([
                float(np.sum(self.prices[t]) + np.sum(mk.budgets * np.log(np.maximum(
                    _buyer_utilities(mk, self.allocations[t]) + self.config.delta, 0.0))))
                for t in range(T + 1)
            ])
        y_avg = np.empty_like(Y)
        y_avg[0] = Y[0]
        y_avg[1:] = np.cumsum(Y[1:], axis=0) / np.arange(1, T + 1)[:, None]
        extra = {"excess_demand_norm": np.linalg.norm(self.allocations.sum(axis=1) - 1.0, axis=1)}
        if f_star is not None:
            ex = np.empty(T + 1)
            ex[0] = market_value(mk, self.prices[0]) - f_star
            ex[1:] = self.exploitability_series(f_star)
            extra["exploitability"] = ex
        return Trajectory(
            t=np.arange(T + 1), x=self.prices, y=Y, lam=None, x_avg=self.avg_prices, y_avg=y_avg,
            objective=obj, horizon=T, algorithm="mbrd", extra=extra, selected_t=self.selected_t,
        )


def initial_prices(m, seed, low=5.0, high=15.0):
    return np.random.default_rng(seed).uniform(low, high, size=m)


def even_split_allocation(market, p):
    """Each buyer spends ``b_i / m`` on every good; free goods get ``1/n``."""
    p = np.asarray(p, dtype=float)
    X = np.empty((market.n, market.m))
    for j in range(market.m):
        X[:, j] = market.budgets / (market.m * p[j]) if p[j] > 0 else 1.0 / market.n
    return X


def run_mbrd(market, config, p0=None, X0=None):
    """Myopic best-response dynamics.

    Each step moves prices along excess demand,
    ``p <- max(p + eta_p (sum_i x_i - 1), 0)``, and every buyer takes a
    projected ascent step on ``b_i log(u_i + delta)`` onto
    ``{x >= 0, x . p <= b_i}`` with the current prices (previous prices when
    ``config.lagged_constraint``).

    Parameters
    ----------
    p0 : array_like, optional
        Defaults to ``U[5, 15]^m`` drawn from ``config.seed``.
    X0 : array_like, optional
        Defaults to :func:`even_split_allocation` at ``p0``.

    Returns
    -------
    selected : MarketState
        State at ``t`` drawn uniformly from ``1..T`` with ``config.seed``.
    result : MBRDResult

    Raises
    ------
    DomainError
        A buyer's utility left the log domain (``u + delta <= 0``).
    ProjectionError
        An allocation projection did not converge.
    DivergenceError
        The allocation step produced non-finite values.
    """
    T = config.horizon
    p0 = initial_prices(market.m, config.seed) if p0 is None else np.asarray(p0, dtype=float)
    if p0.shape != (market.m,):
        raise DimensionError("p0", market.m, p0.size)
    X0 = even_split_allocation(market, p0) if X0 is None else np.asarray(X0, dtype=float)
    if X0.shape != (market.n, market.m):
        raise DimensionError("X0", market.n * market.m, X0.size)
    ep = as_schedule(config.eta_p).rates(T)
    ex = as_schedule(config.eta_x).rates(T)
    mode = 0 if config.projection == "dykstra" else 1
    prices, allocs, used, status, at = kernels.mbrd(
        market.code, market.params, market.budgets, p0, X0, ep, ex, float(config.delta),
        mode, bool(config.lagged_constraint), float(config.tol), int(config.max_iter))
    if status == kernels.STATUS_DOMAIN:
        raise DomainError(f"utility left the log domain at step {at}; try delta > 0")
    if status == kernels.STATUS_DIVERGED:
        raise DivergenceError(f"allocation step became non-finite at step {at}; "
                              "smaller or decaying rates keep the dynamics stable")
    if status == kernels.STATUS_PROJECTION:
        raise ProjectionError(f"allocation projection failed at step {at} within {config.max_iter} cycles",
                              last_iterate=allocs[-1])
    pick = draw_index(config.seed, T)
    result = MBRDResult(market, config, prices, allocs, used, pick)
    return result.selected, result
