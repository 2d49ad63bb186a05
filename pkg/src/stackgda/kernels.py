"""Kernel backend selection.

Uses the compiled ``_ckernels`` extension when it imports, otherwise the
pure-Python ``_pykernels``. Set ``STACKGDA_PURE_PYTHON=1`` to force the
fallback.
"""
import os

from . import _pykernels

if os.environ.get("STACKGDA_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = _impl.BACKEND

LINEAR = _pykernels.LINEAR
COBB_DOUGLAS = _pykernels.COBB_DOUGLAS
LEONTIEF = _pykernels.LEONTIEF
CD_FLOOR = _pykernels.CD_FLOOR
STATUS_OK = _pykernels.STATUS_OK
STATUS_PROJECTION = _pykernels.STATUS_PROJECTION
STATUS_DOMAIN = _pykernels.STATUS_DOMAIN
STATUS_DIVERGED = _pykernels.STATUS_DIVERGED

budget_exact = _impl.budget_exact
budget_dykstra = _impl.budget_dykstra
budget_pocs = _impl.budget_pocs
alloc_gradient = _impl.alloc_gradient
mbrd = _impl.mbrd
buyer_log_utility = _impl.buyer_log_utility
buyer_demand = _impl.buyer_demand
market_value = _impl.market_value
market_values = _impl.market_values
reference_descent = _impl.reference_descent


def backends():
    """Return ``{name: module}`` for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
