"""Command-line entry point: ``stackgda <subcommand>``."""
import argparse
import json
import os
import sys

import numpy as np

from . import kernels
from .algorithms import ALGORITHMS, InverseSqrtHorizon, RunConfig, expected_selected_objective
from .errors import StackGDAError
from .fisher import MBRDConfig, equilibrium_oracle, generate_market, load_market, run_mbrd, save_market
from .game import GAME_IDS, get_game
from .harness import DEFAULT_ETA_ALLOC, DEFAULT_ETA_PRICE, DEFAULT_HORIZON, ExperimentConfig, format_replays, run_experiment, verify_examples
from .kkt import StructuredGameSpec, closed_form_multipliers


def _floats(text):
    return [float(v) for v in text.split(",")] if isinstance(text, str) else text


def _schedule(kind, eta):
    if kind == "constant":
        return eta
    if kind == "inverse-sqrt-time":
        return {"kind": "inverse-sqrt-time", "eta0": eta}
    return InverseSqrtHorizon(scale=eta)


def cmd_verify(args):
    results = verify_examples(step_scale=args.step_scale)
    print(format_replays(results))
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"first divergence in {r.name} at t={r.first_divergence}", file=sys.stderr)
    return 1 if failed else 0


def cmd_solve(args):
    entry = get_game(args.game)
    x0 = np.array(_floats(args.x0)) if args.x0 is not None else np.zeros(entry.game.outer_dim)
    y0 = np.array(_floats(args.y0)) if args.y0 is not None else np.zeros(entry.game.inner_dim)
    lam = np.array(_floats(args.lam)) if args.lam is not None else entry.lambda_star
    cfg = RunConfig(args.iters, x0, y0, lam0=lam if args.alg == "g2da" else None,
                    eta=_schedule(args.schedule, args.eta), seed=args.seed,
                    record_every=args.record_every, lagged_constraint=args.lagged_constraint)
    fn = ALGORITHMS[args.alg]
    selected = None
    if args.alg in ("gda", "g2da"):
        traj = fn(entry.game, cfg)
    elif args.alg == "lgda":
        traj = fn(entry.game, lam, cfg)
    else:
        selected, traj = fn(entry.game, lam, cfg)
    fin = traj.final
    print(f"game={args.game} alg={args.alg} T={args.iters}")
    print(f"final x={fin.x.tolist()} y={fin.y.tolist()} f={traj.objective[-1]:.12g}")
    print(f"average x={traj.x_avg[-1].tolist()} y={traj.y_avg[-1].tolist()}")
    if selected is not None:
        print(f"selected t={traj.selected_t} x={selected.x.tolist()} y={selected.y.tolist()}")
        print(f"mean f over iterates 1..T={expected_selected_objective(traj):.12g}")
    if args.out:
        traj.to_csv(args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_kkt(args):
    spec = StructuredGameSpec(args.a, args.b, args.c)
    lam = closed_form_multipliers(spec)
    print(" ".join(format(float(v), ".17g") for v in lam))
    return 0


def cmd_fisher_run(args):
    if args.market:
        market = load_market(args.market)
    else:
        market = generate_market(args.seed, args.buyers, args.goods, utility_class=args.utility)
    delta = args.delta if args.delta is not None else (0.0 if market.utility == "cobb-douglas" else 1e-3)
    T = args.iters if args.iters is not None else DEFAULT_HORIZON[market.utility]
    eta_p = args.eta_price if args.eta_price is not None else DEFAULT_ETA_PRICE[market.utility]
    eta_x = args.eta_alloc if args.eta_alloc is not None else DEFAULT_ETA_ALLOC[market.utility]
    cfg = MBRDConfig(T, _schedule(args.schedule, eta_p), _schedule(args.schedule, eta_x),
                     delta, args.projection, args.lagged_constraint, args.seed)
    selected, res = run_mbrd(market, cfg)
    method = "analytic_cd" if market.utility == "cobb-douglas" else "reference_descent"
    cert = equilibrium_oracle(market, method)
    ex = res.exploitability_series(cert.f_star)
    print(f"utility={market.utility} n={market.n} m={market.m} T={T} backend={kernels.BACKEND}")
    print(f"equilibrium value={cert.f_star:.12g} certified={cert.certified}")
    print(f"exploitability of averaged prices: t=1 {ex[0]:.6g}  t=T {ex[-1]:.6g}  normalized {ex[-1] * np.sqrt(T):.6g}")
    print(f"selected t={res.selected_t} prices={np.round(selected.prices, 6).tolist()}")
    if args.save_market:
        save_market(market, args.save_market)
    if args.out:
        res.to_trajectory(cert.f_star).to_csv(args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_experiment(args):
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = ExperimentConfig()
    if args.full_scale:
        cfg.num_markets = 500
    if args.markets is not None:
        cfg.num_markets = args.markets
    if args.jobs is not None:
        cfg.parallelism = args.jobs
    if args.schedule is not None:
        cfg.schedule = args.schedule
    env_seed = os.environ.get("STACKGDA_SEED")
    if env_seed is not None:
        cfg.master_seed = int(env_seed)
    cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "parallelism": cfg.parallelism})
    report = run_experiment(cfg, out_dir=args.out)
    print(json.dumps(report.summary(), indent=1, sort_keys=True))
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {args.out} in {report.wall_clock:.1f}s")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="stackgda", description="Min-max Stackelberg solvers and Fisher market dynamics.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-examples", help="replay the counterexample trajectories")
    p.add_argument("--step-scale", type=float, default=1.0, help="multiply every step size (sensitivity check)")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("solve", help="run a solver on a catalog game")
    p.add_argument("--game", required=True, choices=sorted(GAME_IDS))
    p.add_argument("--alg", required=True, choices=sorted(ALGORITHMS))
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--schedule", choices=["constant", "inverse-sqrt-horizon", "inverse-sqrt-time"], default="constant",
                   help="inverse-sqrt-horizon uses eta/sqrt(T) at every step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", help="comma-separated start for x")
    p.add_argument("--y0", help="comma-separated start for y")
    p.add_argument("--lambda", dest="lam", help="comma-separated multipliers (default: catalog tag)")
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--lagged-constraint", action="store_true")
    p.add_argument("--out", help="trajectory CSV path")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("kkt", help="closed-form multipliers (a_i + b_i) / c_i")
    p.add_argument("--a", type=float, nargs="+", required=True)
    p.add_argument("--b", type=float, nargs="+", required=True)
    p.add_argument("--c", type=float, nargs="+", required=True)
    p.set_defaults(fn=cmd_kkt)

    p = sub.add_parser("fisher", help="Fisher market tools")
    fsub = p.add_subparsers(dest="fisher_command", required=True)
    r = fsub.add_parser("run", help="run MBRD on one market")
    r.add_argument("--utility", choices=["linear", "cobb-douglas", "leontief"], default="linear")
    r.add_argument("--buyers", type=int, default=5)
    r.add_argument("--goods", type=int, default=8)
    r.add_argument("--iters", type=int)
    r.add_argument("--eta-price", type=float, help="base price rate (default: per-class experiment value)")
    r.add_argument("--eta-alloc", type=float, help="base allocation rate (default: per-class experiment value)")
    r.add_argument("--schedule", choices=["constant", "inverse-sqrt-time", "inverse-sqrt-horizon"],
                   default="constant")
    r.add_argument("--delta", type=float)
    r.add_argument("--projection", choices=["dykstra", "pocs"], default="dykstra")
    r.add_argument("--lagged-constraint", action="store_true")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--market", help="market JSON to load instead of generating one")
    r.add_argument("--save-market", help="write the market JSON here")
    r.add_argument("--out", help="trajectory CSV path")
    r.set_defaults(fn=cmd_fisher_run)

    p = sub.add_parser("experiment", help="batch MBRD experiment")
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--full-scale", action="store_true", help="500 markets per class")
    p.add_argument("--markets", type=int, help="override num_markets")
    p.add_argument("--jobs", type=int)
    p.add_argument("--schedule", choices=["constant", "inverse-sqrt-time"])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_experiment)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except StackGDAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
