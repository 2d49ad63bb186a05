"""Batch MBRD experiments, result persistence, example replays and plotting."""
import csv
import hashlib
import io
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .algorithms import RunConfig, run_g2da, run_lgda, run_vanilla_gda
from .errors import ConfigError, StackGDAError
from .fisher import (
    UTILITY_KINDS, MBRDConfig, equilibrium_oracle, even_split_allocation, generate_market, run_mbrd,
)
from .game import builtin_games

CLASSES = ("linear", "cobb-douglas", "leontief")
DEFAULT_HORIZON = {"linear": 1000, "cobb-douglas": 500, "leontief": 500}
DEFAULT_ETA_PRICE = {"linear": 3.0, "cobb-douglas": 3.0, "leontief": 3.0}
DEFAULT_ETA_ALLOC = {"linear": 0.1, "cobb-douglas": 1.0, "leontief": 1.0}
DEFAULT_DELTA = {"linear": 1e-3, "cobb-douglas": 0.0, "leontief": 1e-3}
SCHEDULES = ("constant", "inverse-sqrt-time")
EXPLOIT_TOL = 1e-9


@dataclass
class ExperimentConfig:
    """Parameters of a batch MBRD experiment.

    Per-class settings are dicts keyed by utility class. ``schedule`` turns
    the base rates into per-step rates: ``"inverse-sqrt-time"`` uses
    ``eta / sqrt(t)``, ``"constant"`` uses ``eta`` at every step.
    ``exploitability_stride`` of None means 1 up to ``T = 5000`` and
    ``ceil(T / 500)`` beyond.
    """

    utility_classes: tuple = CLASSES
    num_markets: int = 50
    n: int = 5
    m: int = 8
    horizon: dict = field(default_factory=lambda: dict(DEFAULT_HORIZON))
    eta_p: dict = field(default_factory=lambda: dict(DEFAULT_ETA_PRICE))
    eta_x: dict = field(default_factory=lambda: dict(DEFAULT_ETA_ALLOC))
    delta: dict = field(default_factory=lambda: dict(DEFAULT_DELTA))
    schedule: str = "constant"
    budget_range: tuple = (10.0, 20.0)
    valuation_range: tuple = (5.0, 15.0)
    price_init_range: tuple = (5.0, 15.0)
    projection: str = "dykstra"
    lagged_constraint: bool = False
    master_seed: int = 0
    parallelism: int = 1
    output_dir: str = None
    exploitability_stride: int = None
    oracle_iters: int = 200_000

    def __post_init__(self):
        if isinstance(self.utility_classes, str):
            self.utility_classes = (self.utility_classes,)
        self.utility_classes = tuple(self.utility_classes)
        for c in self.utility_classes:
            if c not in UTILITY_KINDS:
                raise ConfigError(f"unknown utility class {c!r}")
        for name in ("horizon", "eta_p", "eta_x", "delta"):
            table = getattr(self, name)
            if not isinstance(table, dict):
                table = {c: table for c in CLASSES}
            defaults = {"horizon": DEFAULT_HORIZON, "eta_p": DEFAULT_ETA_PRICE,
                        "eta_x": DEFAULT_ETA_ALLOC, "delta": DEFAULT_DELTA}[name]
            setattr(self, name, {**defaults, **table})
        if int(self.num_markets) < 1:
            raise ConfigError("num_markets must be >= 1")
        if self.n < 1 or self.m < 1:
            raise ConfigError("n and m must be >= 1")
        for c in self.utility_classes:
            if int(self.horizon[c]) < 1:
                raise ConfigError(f"horizon for {c} must be >= 1")
            if not (self.eta_p[c] > 0 and self.eta_x[c] > 0):
                raise ConfigError(f"rates for {c} must be positive")
            if self.delta[c] < 0:
                raise ConfigError(f"delta for {c} must be nonnegative")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}")
        if self.projection not in ("dykstra", "pocs"):
            raise ConfigError("projection must be 'dykstra' or 'pocs'")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.exploitability_stride is not None and self.exploitability_stride < 1:
            raise ConfigError("exploitability_stride must be >= 1")
        lo, hi = self.price_init_range
        if not 0 <= lo <= hi:
            raise ConfigError("price_init_range must be ordered and nonnegative")
        self.num_markets = int(self.num_markets)
        self.budget_range = tuple(self.budget_range)
        self.valuation_range = tuple(self.valuation_range)
        self.price_init_range = tuple(self.price_init_range)

    def stride(self, utility_class):
        if self.exploitability_stride is not None:
            return int(self.exploitability_stride)
        T = int(self.horizon[utility_class])
        return 1 if T <= 5000 else math.ceil(T / 500)

    def to_dict(self):
        d = asdict(self)
        d["utility_classes"] = list(self.utility_classes)
        d.pop("output_dir")
        d.pop("parallelism")
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "utility_class" in d:
            d["utility_classes"] = d.pop("utility_class")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def market_seeds(master_seed, index):
    """Seeds for market ``index``: ``(market draw, initial prices, output draw)``.

    Derived from ``SeedSequence(master_seed, spawn_key=(index, k))`` so each
    market's stream is independent of worker count and order.
    """
    out = []
    for k in range(3):
        ss = np.random.SeedSequence(master_seed, spawn_key=(index, k))
        out.append(int(ss.generate_state(1, np.uint32)[0]))
    return tuple(out)


def _sample_times(T, stride):
    t = list(range(stride, T + 1, stride))
    if not t or t[-1] != T:
        t.append(T)
    return np.array(t)


def run_market(config, utility_class, index):
    """Generate one market, run MBRD, and score the averaged prices.

    Returns a plain dict (picklable, JSON-ready apart from numpy arrays).
    """
    s_market, s_price, s_draw = market_seeds(config.master_seed, index)
    mk = generate_market(s_market, config.n, config.m, config.budget_range, config.valuation_range, utility_class)
    lo, hi = config.price_init_range
    p0 = np.random.default_rng(s_price).uniform(lo, hi, size=config.m)
    T = int(config.horizon[utility_class])
    if config.schedule == "constant":
        ep, ex = config.eta_p[utility_class], config.eta_x[utility_class]
    else:
        ep = {"kind": "inverse-sqrt-time", "eta0": config.eta_p[utility_class]}
        ex = {"kind": "inverse-sqrt-time", "eta0": config.eta_x[utility_class]}
    mc = MBRDConfig(T, ep, ex, config.delta[utility_class], config.projection,
                    config.lagged_constraint, s_draw)
    times = _sample_times(T, config.stride(utility_class))
    try:
        _, res = run_mbrd(mk, mc, p0, even_split_allocation(mk, p0))
    except StackGDAError as err:
        # diverged dynamics are reported per market instead of aborting the batch
        return {
            "index": index, "utility_class": utility_class, "market": mk.to_dict(), "p0": p0,
            "certificate": None, "times": times, "exploitability": np.full(times.shape[0], np.nan),
            "final_avg_prices": np.full(config.m, np.nan), "selected_t": None, "failure": str(err),
        }
    method = "analytic_cd" if utility_class == "cobb-douglas" else "reference_descent"
    cert = equilibrium_oracle(mk, method, iters=config.oracle_iters, seed=s_price)
    P = res.avg_prices[times]
    raw = kernels.market_values(mk.code, mk.params, mk.budgets, P, 0.0) - cert.f_star
    return {
        "index": index,
        "utility_class": utility_class,
        "market": mk.to_dict(),
        "p0": p0,
        "certificate": cert.to_dict(),
        "times": times,
        "exploitability": raw,
        "final_avg_prices": res.avg_prices[-1],
        "selected_t": res.selected_t,
        "failure": None,
    }


def _task(args):
    return run_market(*args)


@dataclass
class ClassSeries:
    """Mean exploitability series of one utility class."""

    utility_class: str
    t: np.ndarray
    mean_exploitability: np.ndarray
    per_market: np.ndarray
    included: list
    excluded: list
    stride: int

    @property
    def normalized(self):
        return self.mean_exploitability * np.sqrt(self.t)


@dataclass
class RunReport:
    """Everything an experiment produced except timing-dependent metadata."""

    config: ExperimentConfig
    series: dict
    markets: dict
    input_hash: str
    wall_clock: float = 0.0
    warnings: list = field(default_factory=list)

    def summary(self):
        out = {}
        for c, s in self.series.items():
            row = {
                "num_markets": len(s.included) + len(s.excluded),
                "num_certified": len(s.included),
                "num_failed": sum(r.get("failure") is not None for r in self.markets[c]),
                "excluded": s.excluded,
                "stride": s.stride,
                "horizon": int(s.t[-1]),
                "final_mean_exploitability": float(s.mean_exploitability[-1]),
                "final_normalized_exploitability": float(s.normalized[-1]),
            }
            hit = np.flatnonzero(s.t == 10)
            if hit.size:
                e10 = float(s.mean_exploitability[hit[0]])
                row["mean_exploitability_t10"] = e10
                row["final_over_t10"] = float(s.mean_exploitability[-1] / e10) if e10 != 0 else None
            out[c] = row
        return out

    def series_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["utility_class", "t", "mean_exploitability", "normalized_exploitability"])
        for c, s in self.series.items():
            norm = s.normalized
            for k, t in enumerate(s.t):
                w.writerow([c, int(t), _fmt(s.mean_exploitability[k]), _fmt(norm[k])])
        return buf.getvalue()

    def per_market_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["utility_class", "market", "t", "exploitability", "included"])
        for c, s in self.series.items():
            for r in self.markets[c]:
                ok = int(_usable(r))
                for k, t in enumerate(r["times"]):
                    w.writerow([c, r["index"], int(t), _fmt(r["exploitability"][k]), ok])
        return buf.getvalue()

    def report_dict(self):
        return {
            "config": self.config.to_dict(),
            "input_hash": self.input_hash,
            "summary": self.summary(),
            "warnings": self.warnings,
            "certificates": {
                c: [{"market": r["index"], **(r["certificate"] or {"failure": r["failure"]})} for r in rs]
                for c, rs in self.markets.items()
            },
        }

    def write(self, out_dir):
        """Write the artifact layout under ``out_dir``; timing goes to ``metadata.json``."""
        os.makedirs(os.path.join(out_dir, "markets"), exist_ok=True)
        _write_json(os.path.join(out_dir, "config.json"), self.config.to_dict())
        for c, rs in self.markets.items():
            for r in rs:
                payload = {**r["market"], "p0": [float(v) for v in r["p0"]], "certificate": r["certificate"],
                           "failure": r.get("failure")}
                _write_json(os.path.join(out_dir, "markets", f"{c}_{r['index']:04d}.json"), payload)
        _write_text(os.path.join(out_dir, "series.csv"), self.series_csv())
        _write_text(os.path.join(out_dir, "per_market.csv"), self.per_market_csv())
        _write_json(os.path.join(out_dir, "report.json"), self.report_dict())
        emit_plot(self, os.path.join(out_dir, "plot.svg"))
        _write_json(os.path.join(out_dir, "metadata.json"), {
            "wall_clock_seconds": self.wall_clock,
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "kernel_backend": kernels.BACKEND,
            "python": platform.python_version(),
            "numpy": np.__version__,
        })


def _fmt(v):
    return format(float(v), ".17g")


def _write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write_text(path, json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_hash(config):
    text = json.dumps(_jsonable(config.to_dict()), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def _usable(result):
    return result.get("failure") is None and result["certificate"]["certified"]


def reduce_markets(utility_class, results, stride):
    """Mean over completed, certified markets, summed in market-index order."""
    results = sorted(results, key=lambda r: r["index"])
    t = results[0]["times"]
    inc = [r for r in results if _usable(r)]
    exc = [r["index"] for r in results if not _usable(r)]
    per = np.array([r["exploitability"] for r in results])
    total = np.zeros(t.shape[0])
    for r in inc:
        total = total + r["exploitability"]
    mean = total / len(inc) if inc else np.full(t.shape[0], np.nan)
    return ClassSeries(utility_class, t, mean, per, [r["index"] for r in inc], exc, stride)


def run_experiment(config, out_dir=None):
    """Generate markets, run MBRD on each, and reduce to mean exploitability series.

    Exploitability is measured at the running average of prices against each
    market's equilibrium oracle (closed form for Cobb-Douglas, reference
    descent otherwise). Markets whose dynamics fail or whose oracle is not certified are excluded
    from the mean and listed in ``warnings``.

    Parameters
    ----------
    config : ExperimentConfig
    out_dir : str, optional
        Overrides ``config.output_dir``; artifacts are written when either is set.

    Returns
    -------
    RunReport
    """
    start = time.perf_counter()
    tasks = [(config, c, i) for c in config.utility_classes for i in range(config.num_markets)]
    if config.parallelism > 1:
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * config.parallelism))))
    else:
        results = [_task(t) for t in tasks]
    series, markets, warnings = {}, {}, []
    for c in config.utility_classes:
        rs = [r for r in results if r["utility_class"] == c]
        markets[c] = sorted(rs, key=lambda r: r["index"])
        s = reduce_markets(c, rs, config.stride(c))
        series[c] = s
        for r in markets[c]:
            if r.get("failure") is not None:
                warnings.append(f"{c} market {r['index']}: MBRD failed ({r['failure']}), excluded from the mean")
            elif not r["certificate"]["certified"]:
                warnings.append(f"{c} market {r['index']}: equilibrium oracle not certified, excluded from the mean")
        low = [r["index"] for r in rs if _usable(r)
               and np.min(r["exploitability"]) < -EXPLOIT_TOL * max(1.0, abs(r["certificate"]["f_star"]))]
        for i in low:
            warnings.append(f"{c} market {i}: exploitability below -tol, oracle value is not minimal")
    report = RunReport(config, series, markets, config_hash(config), time.perf_counter() - start, warnings)
    target = out_dir or config.output_dir
    if target:
        report.write(target)
    return report


def load_series(path):
    """Read ``series.csv`` back as ``{class: (t, mean, normalized)}``."""
    out = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            c = row["utility_class"]
            out.setdefault(c, ([], [], []))
            out[c][0].append(int(row["t"]))
            out[c][1].append(float(row["mean_exploitability"]))
            out[c][2].append(float(row["normalized_exploitability"]))
    return {c: tuple(np.array(v) for v in vals) for c, vals in out.items()}


def mean_from_per_market(path):
    """Recompute the mean series from ``per_market.csv`` (included markets only)."""
    acc = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            if row["included"] != "1":
                continue
            key = (row["utility_class"], int(row["t"]))
            acc.setdefault(key, []).append((int(row["market"]), float(row["exploitability"])))
    out = {}
    for (c, t), vals in sorted(acc.items()):
        total = 0.0
        for _, v in sorted(vals):
            total += v
        out.setdefault(c, ([], []))
        out[c][0].append(t)
        out[c][1].append(total / len(vals))
    return {c: (np.array(t), np.array(m)) for c, (t, m) in out.items()}


# -- plotting ------------------------------------------------------------------

def emit_plot(report, path):
    """Write an SVG of ``mean exploitability * sqrt(t)`` against ``t``, one curve per class.

    ``report`` is a :class:`RunReport` or a dict ``{class: (t, normalized)}``.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if isinstance(report, RunReport):
        curves = {c: (s.t, s.normalized) for c, s in report.series.items()}
    else:
        curves = dict(report)
    if not curves or any(len(t) == 0 for t, _ in curves.values()):
        raise ValueError("nothing to plot")
    with matplotlib.rc_context({"svg.hashsalt": "stackgda", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for c, (t, y) in curves.items():
            ax.plot(t, y, label=c)
        ax.set_xlabel("t")
        ax.set_ylabel("normalized_exploitability")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


# -- example replays -------------------------------------------------------------

@dataclass
class ReplayResult:
    name: str
    passed: bool
    first_divergence: int = None
    detail: str = ""


def _compare(name, got, want, tol=1e-12):
    # got/want: lists of tuples per iterate starting at t=1
    for t, (g, w) in enumerate(zip(got, want), start=1):
        if not np.allclose(g, w, rtol=0.0, atol=tol):
            shown = tuple(float(v) for v in np.asarray(g).ravel())
            return ReplayResult(name, False, t, f"t={t}: got {shown}, expected {tuple(w)}")
    return ReplayResult(name, True)


def verify_examples(step_scale=1.0, horizon=10):
    """Replay the four counterexample trajectories against their known iterates.

    ``step_scale`` multiplies every unit step size, for sensitivity checks.

    Returns
    -------
    list of ReplayResult
    """
    games = builtin_games()
    eta = 1.0 * step_scale
    out = []

    g = games["example_1_1"].game
    tr_eq = run_vanilla_gda(g, RunConfig(horizon, [0.5], [0.5], eta=eta))
    tr_0 = run_vanilla_gda(g, RunConfig(horizon, [0.0], [0.0], eta=eta))
    res = _compare("gda example_1_1", [tr_eq.x[1]], [(-0.5,)])
    if res.passed:
        got = [np.concatenate([tr_0.x[t], tr_0.y[t]]) for t in range(1, horizon + 1)]
        res = _compare("gda example_1_1", got, [(0.0, 1.0)] * horizon)
    out.append(res)

    tr = run_g2da(g, RunConfig(horizon, [0.0], [0.0], lam0=[0.0], eta=eta))
    got = [np.concatenate([tr.lam[t], tr.x[t], tr.y[t]]) for t in range(1, horizon + 1)]
    out.append(_compare("g2da example_1_1", got, [(0.0, 0.0, 1.0)] * horizon))

    cyc = games["example_lgda_cycle"]
    tr = run_lgda(cyc.game, cyc.lambda_star, RunConfig(horizon, [1.0], [1.0], eta=eta))
    got = [np.concatenate([tr.x[t], tr.y[t]]) for t in range(1, horizon + 1)]
    want = [(-1.0, -1.0) if t % 2 else (1.0, 1.0) for t in range(1, horizon + 1)]
    res = _compare("lgda cycle", got, want)
    if res.passed:
        even = [k for k in range(1, horizon + 1) if k % 2 == 0]
        res = _compare("lgda cycle average", [np.concatenate([tr.x_avg[k], tr.y_avg[k]]) for k in even],
                       [(0.0, 0.0)] * len(even))
        res.name = "lgda cycle"
    out.append(res)

    deg = games["example_degenerate"]
    y0 = 0.3
    tr = run_lgda(deg.game, deg.lambda_star, RunConfig(horizon, [-0.7], [y0], eta=0.1 * eta))
    out.append(_compare("lgda degenerate", [tr.y[t] for t in range(1, horizon + 1)], [(y0,)] * horizon))
    return out


def format_replays(results):
    lines = [f"{'replay':<20} {'status':<6} detail"]
    for r in results:
        lines.append(f"{r.name:<20} {'PASS' if r.passed else 'FAIL':<6} {r.detail}")
    return "\n".join(lines)
