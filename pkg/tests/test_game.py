import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gamegen import quadratic_box_game
from stackgda.errors import DimensionError, DomainError, InfeasibleProfileError
from stackgda.fisher import eg_game, generate_market
from stackgda.game import (
    GameDefinition, StrategyProfile, builtin_games, check_gradients, eval_lagrangian, get_game,
    inner_slice_spec, lagrangian_gradients, stackelberg_gap,
)

GAMES = builtin_games()
E11 = GAMES["example_1_1"]
seeds = st.integers(0, 2**32 - 1)


def test_lagrangian_examples():
    g = E11.game
    assert eval_lagrangian(g, [0.0], [0.0], [1.0]) == 2.0
    assert eval_lagrangian(g, [0.5], [0.5], [1.0]) == 1.75
    assert g.constraints(np.array([0.5]), np.array([0.5]))[0] == 0.0


def test_lagrangian_gradient_examples():
    gx, gy, gl = lagrangian_gradients(E11.game, [0.0], [0.0], [0.0])
    assert (gx[0], gy[0], gl[0]) == (0.0, 1.0, 1.0)
    deg = GAMES["example_degenerate"].game
    for x, y in [(-1.0, -1.0), (0.3, 0.2), (1.0, -0.5)]:
        gx, gy, _ = lagrangian_gradients(deg, [x], [y], [1.0])
        assert gx[0] == pytest.approx(2 * x - 1) and gy[0] == 0.0


def test_dimension_errors_name_the_field():
    with pytest.raises(DimensionError, match="lambda"):
        eval_lagrangian(E11.game, [0.0], [0.0], [1.0, 2.0])
    with pytest.raises(DimensionError, match="y"):
        lagrangian_gradients(E11.game, [0.0], [0.0, 1.0], [1.0])


def test_negative_multiplier_rejected():
    with pytest.raises(DomainError):
        eval_lagrangian(E11.game, [0.0], [0.0], [-1.0])


def test_catalog_tags():
    assert np.allclose([E11.x_star[0], E11.y_star[0], E11.lambda_star[0]], [0.5, 0.5, 1.0])
    cyc = GAMES["example_lgda_cycle"]
    assert np.allclose([cyc.x_star[0], cyc.y_star[0], cyc.lambda_star[0]], [0.0, 0.0, 0.0])
    assert get_game("degenerate").game.name == "example_degenerate"
    with pytest.raises(KeyError):
        get_game("nope")


def test_degenerate_shares_example_definition():
    deg = GAMES["example_degenerate"]
    for x, y in [(0.1, -0.4), (-0.9, 0.9)]:
        args = (np.array([x]), np.array([y]))
        assert deg.game.objective(*args) == E11.game.objective(*args)
        assert np.array_equal(deg.game.constraints(*args), E11.game.constraints(*args))


def test_stackelberg_gap_examples():
    gap = stackelberg_gap(E11.game, E11.equilibrium, E11.best_response, E11.value_oracle)
    assert abs(gap.epsilon) <= 1e-9 and abs(gap.delta) <= 1e-9
    gap = stackelberg_gap(E11.game, StrategyProfile([0.0], [1.0]), E11.best_response, E11.value_oracle)
    assert gap.epsilon == pytest.approx(0.25, abs=1e-12) and gap.delta == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("key", sorted(GAMES))
def test_gap_zero_at_tagged_equilibria(key):
    cg = GAMES[key]
    gap = stackelberg_gap(cg.game, cg.equilibrium, cg.best_response, cg.value_oracle)
    assert abs(gap.epsilon) <= 1e-9 and abs(gap.delta) <= 1e-9


@given(st.floats(-1, 1))
def test_gap_zero_for_oracle_profile(x):
    # the best response itself is inner-optimal, so delta vanishes
    y = E11.best_response(np.array([x]))
    gap = stackelberg_gap(E11.game, StrategyProfile([x], y), E11.best_response, E11.value_oracle)
    assert abs(gap.delta) <= 1e-12 and gap.epsilon >= -1e-9


def test_infeasible_profile_lists_violations():
    with pytest.raises(InfeasibleProfileError) as info:
        stackelberg_gap(E11.game, StrategyProfile([1.0], [1.0]), E11.best_response, E11.value_oracle)
    assert [name for name, _ in info.value.violations] == ["g[0]"]


def test_gradient_check_examples():
    assert check_gradients(E11.game).max_error < 1e-6
    market = generate_market(3, n=3, m=4, utility_class="cobb-douglas")
    assert check_gradients(eg_game(market, delta=1e-3), num_samples=5).max_error < 1e-4
    market = generate_market(3, n=3, m=4, utility_class="linear")
    assert check_gradients(eg_game(market, delta=1e-3), num_samples=5).max_error < 1e-4


def test_corrupted_gradient_flagged():
    g = E11.game
    bad = GameDefinition(**{**g.__dict__, "grad_x_objective": lambda x, y: np.array([2.0 * x[0] + 1.0])})
    report = check_gradients(bad)
    assert report.errors["grad_x_objective"] > 0.1
    assert "grad_x_objective" in report.flagged()


@given(seeds)
def test_zero_multiplier_lagrangian_is_objective(seed):
    rng = np.random.default_rng(seed)
    game = quadratic_box_game(rng)
    x, y = rng.uniform(-1, 1, game.outer_dim), rng.uniform(-1, 1, game.inner_dim)
    lam = np.zeros(game.num_constraints)
    assert eval_lagrangian(game, x, y, lam) == game.objective(x, y)
    gx, gy, _ = lagrangian_gradients(game, x, y, lam)
    assert np.array_equal(gx, game.grad_x_objective(x, y))
    assert np.array_equal(gy, game.grad_y_objective(x, y))


def _fd(fn, z, h=1e-6):
    out = np.empty_like(z)
    for j in range(z.shape[0]):
        e = np.zeros_like(z)
        e[j] = h
        out[j] = (fn(z + e) - fn(z - e)) / (2 * h)
    return out


@given(seeds)
def test_lagrangian_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    game = quadratic_box_game(rng)
    x, y = rng.uniform(-0.9, 0.9, game.outer_dim), rng.uniform(-0.9, 0.9, game.inner_dim)
    lam = rng.uniform(0, 3, game.num_constraints)
    gx, gy, gl = lagrangian_gradients(game, x, y, lam)
    fx = _fd(lambda z: eval_lagrangian(game, z, y, lam), x)
    fy = _fd(lambda z: eval_lagrangian(game, x, z, lam), y)
    fl = _fd(lambda z: eval_lagrangian(game, x, y, z), lam)
    for a, b in ((gx, fx), (gy, fy), (gl, fl)):
        assert np.linalg.norm(a - b) / max(np.linalg.norm(b), 1.0) <= 1e-5


@pytest.mark.parametrize("key", sorted(GAMES))
def test_max_min_below_min_max_on_grid(key):
    cg = GAMES[key]
    grid = np.linspace(-1, 1, 401)
    L = np.array([[eval_lagrangian(cg.game, [x], [y], cg.lambda_star) for y in grid] for x in grid])
    max_min = L.min(axis=0).max()
    min_max = L.max(axis=1).min()
    assert max_min <= min_max + 1e-12


def test_affine_slice_fallback_matches_explicit_slice():
    g = E11.game
    plain = GameDefinition(**{**g.__dict__, "inner_slice": None})
    for x in (-1.0, 0.25, 0.9):
        v = np.array([0.95])
        a = inner_slice_spec(g, np.array([x])).project(v)
        b = inner_slice_spec(plain, np.array([x])).project(v)
        assert np.allclose(a, b, atol=1e-9)
