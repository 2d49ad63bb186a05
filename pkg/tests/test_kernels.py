import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import budget_projection_bisection
from stackgda import _pykernels, kernels
from stackgda.fisher import generate_market

BACKENDS = kernels.backends()
needs_c = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")
PY = _pykernels
seeds = st.integers(0, 2**32 - 1)


def test_fallback_is_always_available():
    assert "python" in BACKENDS and PY.BACKEND == "python"
    assert kernels.BACKEND in BACKENDS


def test_env_var_forces_fallback():
    code = "from stackgda import kernels; print(kernels.BACKEND)"
    env = {**os.environ, "STACKGDA_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_c
def test_compiled_backend_preferred():
    assert kernels.BACKEND == "cython"


def _budget_case(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 9))
    v = rng.normal(0, 5, m)
    p = np.where(rng.random(m) < 0.15, 0.0, rng.uniform(0.01, 5, m))
    return v, p, float(rng.uniform(0.1, 10))


@pytest.mark.parametrize("name", sorted(BACKENDS))
@given(seed=seeds)
def test_budget_exact_matches_bisection(name, seed):
    v, p, b = _budget_case(seed)
    x = BACKENDS[name].budget_exact(v, p, b)
    ref = budget_projection_bisection(v, p, b)
    assert np.max(np.abs(x - ref)) <= 1e-9 * max(1.0, np.max(np.abs(v)))
    assert x @ p <= b + 1e-12 and np.all(x >= 0)


@needs_c
@given(seeds)
def test_budget_projections_agree_across_backends(seed):
    v, p, b = _budget_case(seed)
    C = BACKENDS["cython"]
    for fn in ("budget_dykstra", "budget_pocs"):
        xp, okp, kp, _ = getattr(PY, fn)(v, p, b, 1e-12, 10_000)
        xc, okc, kc, _ = getattr(C, fn)(v, p, b, 1e-12, 10_000)
        assert okp == okc and kp == kc
        assert np.allclose(xp, xc, rtol=0, atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_dykstra_falls_back_when_cycles_run_out(name):
    # budget face nearly parallel to an orthant face: Dykstra crawls
    v, p, b = np.array([0.0, 1.0]), np.array([3.0, 0.125]), 0.109375
    x, ok, cycles, _ = BACKENDS[name].budget_dykstra(v, p, b, 1e-14, 50)
    assert ok and cycles == 50
    assert np.allclose(x, budget_projection_bisection(v, p, b), atol=1e-12)


@needs_c
@pytest.mark.parametrize("kind", ["linear", "cobb-douglas", "leontief"])
def test_market_functions_agree_across_backends(kind):
    C = BACKENDS["cython"]
    mk = generate_market(6, utility_class=kind)
    rng = np.random.default_rng(0)
    P = rng.uniform(1, 20, (20, mk.m))
    for i in range(mk.n):
        w, b = mk.params[i], mk.budgets[i]
        assert np.allclose(PY.buyer_demand(mk.code, w, b, P[0]), C.buyer_demand(mk.code, w, b, P[0]), rtol=1e-15)
        assert PY.buyer_log_utility(mk.code, w, b, P[0]) == pytest.approx(
            C.buyer_log_utility(mk.code, w, b, P[0]), rel=1e-15)
        x = rng.uniform(0.1, 2, mk.m)
        assert np.allclose(PY.alloc_gradient(mk.code, w, b, x, 1e-3), C.alloc_gradient(mk.code, w, b, x, 1e-3),
                           rtol=1e-13)
    for delta in (0.0, 1e-3):
        assert np.allclose(PY.market_values(mk.code, mk.params, mk.budgets, P, delta),
                           C.market_values(mk.code, mk.params, mk.budgets, P, delta), rtol=1e-14)


@needs_c
def test_unbounded_cases_agree():
    C = BACKENDS["cython"]
    w, p = np.array([1.0, 2.0]), np.array([0.0, 1.0])
    for kind in (PY.LINEAR, PY.COBB_DOUGLAS):
        assert PY.buyer_demand(kind, w, 1.0, p) is None and C.buyer_demand(kind, w, 1.0, p) is None
    assert C.market_value(PY.LINEAR, w[None], np.ones(1), p, 0.0) == np.inf


@needs_c
@pytest.mark.parametrize("kind,eta_x,T", [("linear", 0.1, 300), ("cobb-douglas", 1.0, 60), ("leontief", 1.0, 300)])
@pytest.mark.parametrize("mode", [0, 1])
def test_mbrd_agrees_across_backends(kind, eta_x, T, mode):
    C = BACKENDS["cython"]
    mk = generate_market(2, utility_class=kind)
    p0 = np.random.default_rng(2).uniform(5, 15, mk.m)
    X0 = np.outer(mk.budgets, 1.0 / (mk.m * p0))
    args = (mk.code, mk.params, mk.budgets, p0, X0, np.full(T, 3.0) / np.sqrt(np.arange(1, T + 1)),
            np.full(T, eta_x) / np.sqrt(np.arange(1, T + 1)), 1e-3, mode, False, 1e-10, 10_000)
    pp, xp, up, sp, tp = PY.mbrd(*args)
    pc, xc, uc, sc, tc = C.mbrd(*args)
    assert (sp, tp) == (sc, tc) == (PY.STATUS_OK, T)
    assert np.allclose(pp, pc, rtol=1e-9, atol=1e-9) and np.allclose(xp, xc, rtol=1e-9, atol=1e-9)
    assert np.allclose(up, uc, rtol=1e-9, atol=1e-9)


@needs_c
def test_mbrd_statuses_agree():
    C = BACKENDS["cython"]
    w = np.array([[1.0, 1.0]])
    base = (PY.LINEAR, w, np.ones(1), np.ones(2))
    rates = (np.full(3, 0.1), np.full(3, 0.1))
    # zero utility without a shift leaves the log domain
    assert PY.mbrd(*base, np.zeros((1, 2)), *rates, 0.0, 0, False, 1e-10, 100)[3] == PY.STATUS_DOMAIN
    assert C.mbrd(*base, np.zeros((1, 2)), *rates, 0.0, 0, False, 1e-10, 100)[3] == PY.STATUS_DOMAIN
    huge = (np.full(3, 0.1), np.full(3, 1e308))
    assert PY.mbrd(*base, np.full((1, 2), 1e-300), *huge, 1e-3, 0, False, 1e-10, 100)[3] == PY.STATUS_DIVERGED
    assert C.mbrd(*base, np.full((1, 2), 1e-300), *huge, 1e-3, 0, False, 1e-10, 100)[3] == PY.STATUS_DIVERGED


@needs_c
@pytest.mark.parametrize("kind", ["linear", "leontief"])
def test_reference_descent_agrees_across_backends(kind):
    C = BACKENDS["cython"]
    mk = generate_market(1, n=3, m=4, utility_class=kind)
    p0 = np.full(mk.m, 10.0)
    a = PY.reference_descent(mk.code, mk.params, mk.budgets, p0, 2000, 0.5, 0.0)
    b = C.reference_descent(mk.code, mk.params, mk.budgets, p0, 2000, 0.5, 0.0)
    assert np.allclose(a[0], b[0], rtol=1e-9) and a[1] == pytest.approx(b[1], rel=1e-12)
    assert np.allclose(a[2], b[2], rtol=1e-9)


@needs_c
@settings(max_examples=20)
@given(seeds)
def test_alloc_gradient_domain_agrees(seed):
    C = BACKENDS["cython"]
    rng = np.random.default_rng(seed)
    w = rng.uniform(0, 2, 3)
    w[0] = 1.0
    x = np.where(rng.random(3) < 0.3, 0.0, rng.uniform(0, 2, 3))
    for kind in (PY.LINEAR, PY.COBB_DOUGLAS, PY.LEONTIEF):
        gp = PY.alloc_gradient(kind, w / w.sum() if kind == PY.COBB_DOUGLAS else w, 2.0, x, 0.0)
        gc = C.alloc_gradient(kind, w / w.sum() if kind == PY.COBB_DOUGLAS else w, 2.0, x, 0.0)
        assert (gp is None) == (gc is None)
        if gp is not None:
            assert np.allclose(gp, gc, rtol=1e-13)
