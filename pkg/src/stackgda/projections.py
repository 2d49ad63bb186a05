"""Euclidean projections onto the convex sets used by the solvers.

Closed forms for boxes, the nonnegative orthant and halfspaces; Dykstra's
algorithm for intersections. Budget sets ``{x >= 0, p.x <= b}`` have a
dedicated compiled path in :func:`project_budget_row`.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, ProjectionError

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000


class ProjectionSpec:
    """Base class for convex set descriptors."""

    dim = None

    def project(self, v, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
        return project(self, v, tol, max_iter)

    def violation(self, v):
        """Largest constraint violation of ``v`` (0 when inside)."""
        raise NotImplementedError

    def contains(self, v, tol=1e-9):
        return self.violation(np.asarray(v, dtype=float)) <= tol


@dataclass(frozen=True, eq=False)
class Box(ProjectionSpec):
    """Coordinate box ``lo <= x <= hi``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape:
            raise DimensionError("hi", lo.shape[0], hi.shape[0])
        if np.any(lo > hi):
            raise ValueError("Box requires lo <= hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.shape[0]

    def violation(self, v):
        return float(max(np.max(self.lo - v, initial=0.0), np.max(v - self.hi, initial=0.0)))


@dataclass(frozen=True, eq=False)
class NonnegativeOrthant(ProjectionSpec):
    """``x >= 0``. ``dim`` may be left as None to accept any length."""

    dim: int = None

    def violation(self, v):
        return float(max(-np.min(v, initial=0.0), 0.0))


@dataclass(frozen=True, eq=False)
class Halfspace(ProjectionSpec):
    """``a.x <= b``."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if not np.linalg.norm(a) > 0:
            raise ValueError("Halfspace normal must be nonzero")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self):
        return self.a.shape[0]

    def violation(self, v):
        return max(float(self.a @ v) - self.b, 0.0)


@dataclass(frozen=True, eq=False)
class Intersection(ProjectionSpec):
    """Intersection of member sets, projected onto with Dykstra's algorithm."""

    members: tuple

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("Intersection needs at least one member")
        dims = {s.dim for s in self.members if s.dim is not None}
        if len(dims) > 1:
            raise ValueError(f"Intersection members disagree on dimension: {sorted(dims)}")

    @property
    def dim(self):
        for s in self.members:
            if s.dim is not None:
                return s.dim
        return None

    def violation(self, v):
        return max(s.violation(v) for s in self.members)


@dataclass(frozen=True, eq=False)
class FullSpace(ProjectionSpec):
    """All of R^dim; projection is the identity."""

    dim: int = None

    def violation(self, v):
        return 0.0


def _check_dim(spec, v):
    if spec.dim is not None and v.shape[0] != spec.dim:
        raise DimensionError("v", spec.dim, v.shape[0])


def _project_simple(spec, v):
    if isinstance(spec, Box):
        return np.clip(v, spec.lo, spec.hi)
    if isinstance(spec, NonnegativeOrthant):
        return np.maximum(v, 0.0)
    if isinstance(spec, Halfspace):
        s = float(spec.a @ v)
        if s <= spec.b:
            return v.copy()
        return v - ((s - spec.b) / float(spec.a @ spec.a)) * spec.a
    if isinstance(spec, FullSpace):
        return v.copy()
    raise TypeError(f"unsupported projection spec {type(spec).__name__}")


def _dykstra(members, v, tol, max_iter):
    k = len(members)
    x = v.copy()
    incs = [np.zeros_like(v) for _ in range(k)]
    residual = np.inf
    for _ in range(max_iter):
        x_old = x
        for i, s in enumerate(members):
            z = x + incs[i]
            x = project(s, z, tol, max_iter)
            incs[i] = z - x
        change = float(np.max(np.abs(x - x_old)))
        viol = max(s.violation(x) for s in members)
        residual = max(change, viol)
        if change < tol and viol <= tol:
            return x
    raise ProjectionError("Dykstra did not converge", last_iterate=x, residual=residual)


def project(spec, v, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Euclidean projection of ``v`` onto ``spec``.

    Parameters
    ----------
    spec : ProjectionSpec
    v : array_like
    tol : float
        Intersection stopping threshold on the per-cycle move and on the
        member constraint violation.
    max_iter : int
        Dykstra cycle budget.

    Returns
    -------
    ndarray

    Raises
    ------
    ProjectionError
        If Dykstra runs out of cycles; carries the last iterate.
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    _check_dim(spec, v)
    if not isinstance(spec, Intersection):
        return _project_simple(spec, v)
    members = spec.members
    if len(members) == 1:
        return project(members[0], v, tol, max_iter)
    # points inside to within tol are returned as is; keeps idempotency exact
    if spec.violation(v) <= tol:
        return v.copy()
    orth = [s for s in members if isinstance(s, NonnegativeOrthant)]
    half = [s for s in members if isinstance(s, Halfspace)]
    if len(members) == 2 and len(orth) == 1 and len(half) == 1 and np.all(half[0].a >= 0):
        x, ok, _, res = kernels.budget_dykstra(v, half[0].a, half[0].b, tol, max_iter)
        if not ok:
            raise ProjectionError("Dykstra did not converge", last_iterate=x, residual=res)
        return x
    return _dykstra(members, v, tol, max_iter)


def budget_set(p, budget):
    """The set ``{x >= 0, p.x <= budget}`` as an :class:`Intersection`."""
    return Intersection((NonnegativeOrthant(len(p)), Halfspace(p, budget)))


def project_budget_row(x, p, budget, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, mode="dykstra"):
    """Project one buyer's bundle onto ``{x >= 0, x.p <= budget}``.

    Parameters
    ----------
    x, p : array_like
        Bundle and prices; ``p >= 0``. Zero prices leave their coordinate
        unconstrained from above.
    budget : float
        Positive budget.
    mode : {"dykstra", "pocs"}
        ``"dykstra"`` returns the Euclidean projection. ``"pocs"`` runs plain
        alternating projections, which land on a feasible point that is not
        the projection in general.

    Returns
    -------
    ndarray
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.shape != x.shape:
        raise DimensionError("p", x.shape[0], p.shape[0])
    if np.any(p < 0):
        raise ValueError("prices must be nonnegative")
    if not budget > 0:
        raise ValueError("budget must be positive")
    if mode == "dykstra":
        fn = kernels.budget_dykstra
    elif mode == "pocs":
        fn = kernels.budget_pocs
    else:
        raise ValueError(f"unknown projection mode {mode!r}")
    out, ok, _, res = fn(x, p, float(budget), tol, max_iter)
    if not ok:
        raise ProjectionError(f"{mode} budget projection did not converge", last_iterate=out, residual=res)
    return out
