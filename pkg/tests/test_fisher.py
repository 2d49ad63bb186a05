import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import batch_utility, grid_best_utility
from stackgda.errors import (
    ConfigError, DimensionError, DivergenceError, DomainError, UnboundedDemandError,
)
from stackgda.fisher import (
    FisherMarket, MBRDConfig, UtilitySpec, all_demands, clearing_residual, demand, eg_game, eg_objective,
    equilibrium_oracle, exploitability, generate_market, load_market, market_value, run_mbrd, save_market,
    utility, utility_gradient,
)
from stackgda.game import lagrangian_gradients

KINDS = ["linear", "cobb-douglas", "leontief"]
seeds = st.integers(0, 2**32 - 1)


# -- utilities and demands ---------------------------------------------------

def test_utility_examples():
    lin = UtilitySpec("linear", [2.0, 1.0])
    assert utility(lin, [1.0, 1.0]) == 3.0
    assert np.array_equal(utility_gradient(lin, [1.0, 1.0]), [2.0, 1.0])
    assert utility(UtilitySpec("leontief", [1.0, 2.0]), [2.0, 2.0]) == 1.0
    assert utility(UtilitySpec("cobb-douglas", [1.0, 1.0]), [4.0, 1.0]) == pytest.approx(2.0, rel=1e-15)


def test_cobb_douglas_boundary_and_capped_gradient():
    cd = UtilitySpec("cobb-douglas", [1.0, 1.0])
    assert utility(cd, [0.0, 3.0]) == 0.0
    g = utility_gradient(cd, [0.0, 1.0])
    assert np.all(np.isfinite(g)) and g[0] > 0


def test_leontief_subgradient_lowest_index_tie():
    g = utility_gradient(UtilitySpec("leontief", [1.0, 2.0]), [1.0, 2.0])
    assert np.array_equal(g, [1.0, 0.0])


def test_demand_examples():
    assert np.allclose(demand(UtilitySpec("linear", [2.0, 1.0]), 10.0, [1.0, 1.0]), [10.0, 0.0])
    assert np.allclose(demand(UtilitySpec("leontief", [1.0, 2.0]), 10.0, [2.0, 1.0]), [2.5, 5.0])
    assert np.allclose(demand(UtilitySpec("cobb-douglas", [1.0, 1.0]), 10.0, [1.0, 1.0]), [5.0, 5.0])


def test_leontief_demand_against_grid():
    p = np.array([2.0, 1.0])
    best = grid_best_utility(lambda X: batch_utility("leontief", [1.0, 2.0], X), 10.0, p, points=401)
    got = utility(UtilitySpec("leontief", [1.0, 2.0]), demand(UtilitySpec("leontief", [1.0, 2.0]), 10.0, p))
    assert got >= best and got - best < 0.05


def test_linear_bang_per_buck_tie_goes_to_lowest_index():
    assert np.allclose(demand(UtilitySpec("linear", [2.0, 1.0]), 3.0, [2.0, 1.0]), [1.5, 0.0])


def test_unbounded_demand():
    with pytest.raises(UnboundedDemandError):
        demand(UtilitySpec("linear", [1.0, 1.0]), 1.0, [0.0, 1.0])
    with pytest.raises(UnboundedDemandError):
        demand(UtilitySpec("cobb-douglas", [1.0, 1.0]), 1.0, [0.0, 1.0])
    assert market_value(generate_market(0, n=2, m=3), np.zeros(3)) == math.inf


def test_demand_dimension_error():
    with pytest.raises(DimensionError, match="p"):
        demand(UtilitySpec("linear", [1.0, 1.0]), 1.0, [1.0])


@st.composite
def buyers(draw, max_goods=3):
    kind = draw(st.sampled_from(KINDS))
    m = draw(st.integers(1, max_goods))
    rng = np.random.default_rng(draw(seeds))
    return kind, rng.uniform(0.5, 5, m), float(rng.uniform(1, 10)), rng.uniform(0.2, 5, m)


@given(buyers())
@settings(max_examples=25)
def test_demand_dominates_budget_grid(case):
    kind, v, b, p = case
    x = demand(UtilitySpec(kind, v), b, p)
    points = 200 if p.shape[0] < 3 else 60
    best = grid_best_utility(lambda X: batch_utility(kind, v, X), b, p, points=points)
    assert utility(UtilitySpec(kind, v), x) >= best * (1 - 1e-12)


@given(buyers(max_goods=8))
def test_demand_exhausts_budget(case):
    kind, v, b, p = case
    x = demand(UtilitySpec(kind, v), b, p)
    assert np.all(x >= 0)
    assert abs(x @ p - b) <= 1e-9 * max(1.0, b)


# -- the market program -------------------------------------------------------

def test_eg_objective_examples():
    mk = FisherMarket([1.0], [[1.0]], "linear")
    assert eg_objective(mk, [1.0], [[1.0]]) == 1.0
    mk = generate_market(2, n=3, m=4)
    X = np.full((3, 4), 0.3)
    u = X @ mk.valuations.T
    u = np.diag(u)
    shift = eg_objective(mk, np.ones(4), X, delta=0.5) - eg_objective(mk, np.ones(4), X)
    assert shift == pytest.approx(np.sum(mk.budgets * (np.log(u + 0.5) - np.log(u))), rel=1e-12)


def test_eg_objective_names_buyer():
    mk = FisherMarket([1.0, 2.0], [[1.0, 1.0], [1.0, 0.0]], "linear")
    with pytest.raises(DomainError, match="buyer 1"):
        eg_objective(mk, [1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]])


@pytest.mark.parametrize("kind", KINDS)
def test_price_gradient_identity(kind):
    mk = generate_market(9, n=4, m=3, utility_class=kind)
    X = np.random.default_rng(0).uniform(0.1, 1, (4, 3))
    gx, _, _ = lagrangian_gradients(eg_game(mk, delta=1e-3), np.ones(3), X.ravel(), np.ones(4))
    assert np.allclose(gx, 1.0 - X.sum(axis=0), rtol=0, atol=1e-14)


def test_invalid_markets():
    with pytest.raises(DomainError):
        FisherMarket([0.0], [[1.0]], "linear")
    with pytest.raises(DomainError):
        FisherMarket([1.0], [[0.0, 0.0]], "linear")
    with pytest.raises(ConfigError):
        FisherMarket([1.0], [[1.0]], "ces")
    with pytest.raises(DimensionError):
        FisherMarket([1.0, 1.0], [[1.0]], "linear")


def test_market_json_round_trip(tmp_path):
    mk = generate_market(3, utility_class="leontief")
    save_market(mk, tmp_path / "m.json")
    back = load_market(tmp_path / "m.json")
    assert np.array_equal(back.valuations, mk.valuations) and back.utility == "leontief"


def test_generate_market_ranges_and_shared_draws():
    a = generate_market(17)
    assert np.array_equal(a.valuations, generate_market(17).valuations)
    assert a.n == 5 and a.m == 8
    assert np.all((a.budgets >= 10) & (a.budgets <= 20))
    assert np.all((a.valuations >= 5) & (a.valuations <= 15))
    c = generate_market(17, utility_class="cobb-douglas")
    assert np.array_equal(a.valuations, c.valuations) and np.array_equal(a.budgets, c.budgets)
    assert c.utility == "cobb-douglas"
    with pytest.raises(ConfigError):
        generate_market(0, budget_range=(0.0, 1.0))


# -- equilibria and exploitability ---------------------------------------------

def decoupled_cd():
    return FisherMarket([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]], "cobb-douglas")


def test_decoupled_cd_equilibrium():
    cert = equilibrium_oracle(decoupled_cd(), "analytic_cd")
    assert np.allclose(cert.p_star, [1.0, 1.0]) and np.allclose(cert.X_star, np.eye(2))
    assert cert.certified and cert.f_star == pytest.approx(2.0, abs=1e-15)


def test_decoupled_cd_exploitability_example():
    value, raw = exploitability(decoupled_cd(), [2.0, 1.0], 2.0)
    assert value == pytest.approx(1.0 - math.log(2.0), abs=1e-12)
    assert raw == value


def test_exploitability_clipped_and_raw():
    mk = decoupled_cd()
    value, raw = exploitability(mk, [1.0, 1.0], 2.0 + 1e-6)
    assert raw == pytest.approx(-1e-6) and value == -1e-9


@given(seeds)
@settings(max_examples=30)
def test_analytic_cd_certificate(seed):
    mk = generate_market(seed, utility_class="cobb-douglas")
    cert = equilibrium_oracle(mk, "analytic_cd")
    assert cert.certified and cert.clearing_residual < 1e-9
    assert abs(exploitability(mk, cert.p_star, cert.f_star)[1]) < 1e-8
    # p_j = sum_i b_i alpha_ij, written out directly
    alpha = mk.valuations / mk.valuations.sum(axis=1, keepdims=True)
    assert np.allclose(cert.p_star, mk.budgets @ alpha, rtol=1e-14)


def test_analytic_cd_rejects_other_classes():
    with pytest.raises(ConfigError):
        equilibrium_oracle(generate_market(0), "analytic_cd")
    with pytest.raises(ConfigError):
        equilibrium_oracle(generate_market(0), "bisection")


def test_linear_one_buyer_two_goods():
    mk = FisherMarket([3.0], [[2.0, 1.0]], "linear")
    cert = equilibrium_oracle(mk, iters=50_000)
    assert np.allclose(cert.p_star, [2.0, 1.0], atol=1e-3)
    assert cert.certified and np.allclose(cert.X_star, [[1.0, 1.0]], atol=1e-2)
    assert cert.f_star == pytest.approx(3.0 + 3.0 * math.log(3.0), abs=1e-6)
    assert abs(exploitability(mk, cert.p_star, cert.f_star)[1]) <= 1e-9


@pytest.mark.parametrize("kind", ["linear", "leontief"])
def test_reference_descent_certifies_default_markets(kind):
    mk = generate_market(1, utility_class=kind)
    cert = equilibrium_oracle(mk)
    assert cert.certified
    assert clearing_residual(cert.p_star, cert.X_star) == cert.clearing_residual


def test_reference_descent_matches_analytic_cd():
    mk = generate_market(5, utility_class="cobb-douglas")
    a = equilibrium_oracle(mk, "analytic_cd")
    r = equilibrium_oracle(mk, "reference_descent")
    assert np.allclose(a.p_star, r.p_star, rtol=1e-6) and r.f_star == pytest.approx(a.f_star, abs=1e-10)


@pytest.mark.parametrize("kind", KINDS)
def test_exploitability_permutation_invariant(kind):
    mk = generate_market(8, n=3, m=4, utility_class=kind)
    p = np.array([3.0, 7.0, 5.0, 11.0])
    perm = np.array([2, 0, 3, 1])
    a = exploitability(mk, p, 1.0)[1]
    b = exploitability(mk.permuted(perm), p[perm], 1.0)[1]
    assert b == pytest.approx(a, rel=1e-13)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_linear_value_matches_convex_program(seed):
    cp = pytest.importorskip("cvxpy")
    mk = generate_market(seed, n=3, m=4)
    X = cp.Variable((3, 4), nonneg=True)
    supply = cp.sum(X, axis=0) <= 1
    utils = cp.sum(cp.multiply(mk.valuations, X), axis=1)
    cp.Problem(cp.Maximize(mk.budgets @ cp.log(utils)), [supply]).solve()
    p_dual = np.asarray(supply.dual_value)
    cert = equilibrium_oracle(mk)
    assert cert.f_star == pytest.approx(market_value(mk, p_dual), abs=1e-4)
    assert np.allclose(cert.p_star, p_dual, atol=5e-2)


# -- MBRD -----------------------------------------------------------------------

def test_mbrd_stationary_at_equilibrium():
    mk = FisherMarket([1.0, 1.0], [[1.0, 1.0], [1.0, 1.0]], "cobb-douglas")
    _, res = run_mbrd(mk, MBRDConfig(50, eta_p=0.5, eta_x=0.5), p0=[1.0, 1.0], X0=np.full((2, 2), 0.5))
    assert np.allclose(res.prices, 1.0, atol=1e-12)
    assert np.allclose(res.allocations, 0.5, atol=1e-9)


def test_mbrd_single_linear_buyer_finds_unit_price():
    mk = FisherMarket([1.0], [[1.0]], "linear")
    T = 2000
    rate = {"kind": "inverse-sqrt-horizon"}
    _, res = run_mbrd(mk, MBRDConfig(T, eta_p=rate, eta_x=rate, delta=1e-3, seed=4))
    assert abs(res.prices[-1, 0] - 1.0) < 0.05


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("mode", ["dykstra", "pocs"])
def test_mbrd_allocations_budget_feasible(kind, mode):
    mk = generate_market(3, n=3, m=4, utility_class=kind)
    cfg = MBRDConfig(100, eta_p={"kind": "inverse-sqrt-time", "eta0": 3.0},
                     eta_x={"kind": "inverse-sqrt-time", "eta0": 0.5}, delta=1e-3, projection=mode)
    _, res = run_mbrd(mk, cfg)
    spend = np.einsum("tij,tj->ti", res.allocations[1:], res.constraint_prices)
    assert np.all(res.allocations >= 0)
    assert np.all(spend <= mk.budgets + 1e-9)
    assert np.all(res.prices >= 0)


def test_mbrd_lagged_constraint_uses_previous_prices():
    mk = generate_market(3, n=2, m=3, utility_class="linear")
    cfg = MBRDConfig(30, eta_p=0.5, eta_x=0.1, delta=1e-3, lagged_constraint=True)
    _, res = run_mbrd(mk, cfg)
    assert np.array_equal(res.constraint_prices[0], res.prices[0])
    assert np.array_equal(res.constraint_prices[1:], res.prices[:-2])


def test_mbrd_deterministic_and_selected_in_range():
    mk = generate_market(4, utility_class="leontief")
    cfg = MBRDConfig(200, eta_p=3.0, eta_x=1.0, delta=1e-3, seed=12)
    sel, a = run_mbrd(mk, cfg)
    _, b = run_mbrd(mk, cfg)
    assert np.array_equal(a.prices, b.prices) and np.array_equal(a.allocations, b.allocations)
    assert 1 <= a.selected_t <= 200 and np.array_equal(sel.prices, a.prices[a.selected_t])


def test_mbrd_averaged_prices():
    mk = generate_market(4, n=2, m=2)
    _, res = run_mbrd(mk, MBRDConfig(40, eta_p=0.3, eta_x=0.1, delta=1e-3))
    avg = res.avg_prices
    assert np.array_equal(avg[0], res.prices[0])
    for t in (1, 7, 40):
        assert np.allclose(avg[t], res.prices[1:t + 1].mean(axis=0), rtol=1e-14)


def test_mbrd_trajectory_export_columns():
    mk = generate_market(4, n=2, m=2, utility_class="cobb-douglas")
    _, res = run_mbrd(mk, MBRDConfig(5, eta_p=0.3, eta_x=0.1))
    cert = equilibrium_oracle(mk, "analytic_cd")
    header = res.to_trajectory(cert.f_star).to_csv().splitlines()[0].split(",")
    assert header[-2:] == ["excess_demand_norm", "exploitability"]


def test_mbrd_domain_error_without_delta():
    mk = FisherMarket([1.0], [[1.0, 1.0]], "linear")
    with pytest.raises(DomainError):
        run_mbrd(mk, MBRDConfig(3, eta_p=0.1, eta_x=0.1), p0=[1.0, 1.0], X0=np.zeros((1, 2)))


def test_mbrd_reports_divergence():
    mk = generate_market(0, n=2, m=2, utility_class="linear")
    with pytest.raises(DivergenceError):
        run_mbrd(mk, MBRDConfig(3, eta_p=0.1, eta_x=1e308, delta=1e-3))


def test_mbrd_config_validation():
    for bad in ({"horizon": 0}, {"horizon": 5, "delta": -1.0}, {"horizon": 5, "projection": "admm"}):
        with pytest.raises(ConfigError):
            MBRDConfig(**bad)
    mk = generate_market(0, n=2, m=2)
    with pytest.raises(DimensionError):
        run_mbrd(mk, MBRDConfig(3), p0=[1.0])


def test_trajectory_export_survives_boundary_allocations():
    # allocation steps push Cobb-Douglas bundles onto the boundary, where utility is 0
    mk = generate_market(0, n=2, m=3, utility_class="cobb-douglas")
    cfg = MBRDConfig(50, {"kind": "inverse-sqrt-time", "eta0": 3.0}, {"kind": "inverse-sqrt-time", "eta0": 1.0})
    _, res = run_mbrd(mk, cfg)
    assert np.any(res.allocations == 0.0)
    tr = res.to_trajectory(equilibrium_oracle(mk, "analytic_cd").f_star)
    assert np.all(np.isneginf(tr.objective[1:]) | np.isfinite(tr.objective[1:]))
    assert "-inf" in tr.to_csv()
