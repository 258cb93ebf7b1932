"""Experiment drivers: theory curves, prior study, gradient benchmark and optimisation."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import allocators as al
from . import estimator as es
from . import qaoa
from ._rng import make_rng
from .priors import PriorModel, qaoa_cost_prior_barren, qaoa_mixer_prior_barren
from .trigcore import FrequencySpectrum

log = logging.getLogger(__name__)


# --- metrics and initialisation ------------------------------------------------


def annealing_init(n_layers: int) -> qaoa.CircuitParams:
    """Linear ramp: mixer angles fall from pi/5, cost angles rise."""
    L = int(n_layers)
    if L < 2:
        raise ValueError("annealing ramp needs L >= 2")
    i = np.arange(2 * L)
    even = (i % 2 == 0).astype(float)
    return qaoa.CircuitParams(np.pi / 20 * ((4 - 5 * even) / (L - 1) * i + 4))


def relative_slope(est, exact) -> float:
    est = np.asarray(est, dtype=float)
    exact = np.asarray(exact, dtype=float)
    ne = np.linalg.norm(exact)
    if ne == 0:
        raise ValueError("relative slope undefined at critical point")
    nh = np.linalg.norm(est)
    if nh == 0:
        return 0.0
    return float(np.clip(est @ exact / (nh * ne), -1.0, 1.0))


def approximation_ratio(graph: qaoa.Graph, params: qaoa.CircuitParams) -> float:
    return -qaoa.expectation(qaoa.prepare_state(graph, params), graph) / qaoa.maxcut_value(graph)


def _pmap(fn, items, threads):
    items = list(items)
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return float(v.mean()), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v)))


# --- theory curves -------------------------------------------------------------


FIVE_FREQ_PRIOR = PriorModel(FrequencySpectrum.full(5), 0.1 * 10.0 ** -np.arange(1.0, 6.0), 1.0)


def theory_plan(method: str, prior: PriorModel, m: float) -> al.MeasurementPlan:
    """Continuous-weight plan used for analytic curves (no integer rounding)."""
    if method == "BLGE":
        sol = al.blge_solve(prior, m)
        x, w = sol["positions"], sol["weights"]
    elif method == "ULGE":
        x, w = al.ulge_positions_weights(prior.spectrum.nu)
    elif method == "SLGE":
        x0, w0, _ = al.slge_solve(prior, m)
        x, w = np.array([x0]), np.array([w0])
    else:
        raise ValueError(f"no analytic curve for method {method!r}")
    return al.MeasurementPlan(x, w, np.zeros(len(x), dtype=np.int64), method)


def theory_rows(prior: PriorModel, m_grid, methods=("BLGE", "ULGE", "SLGE")) -> list[dict]:
    rows = []
    for method in methods:
        for m in m_grid:
            plan = theory_plan(method, prior, float(m))
            eb = al.error_budget(plan, prior, float(m))
            rows.append(
                {
                    "method": method,
                    "m": float(m),
                    "eps_total": eb.total,
                    "eps_stat": eb.stat,
                    "stat_fraction": eb.stat / eb.total if eb.total > 0 else 0.0,
                    "sys": eb.sys_per_frequency,
                    "omega": eb.omega,
                    "n_positions": plan.n_x,
                    "positions": plan.positions,
                    "weights": plan.weights,
                }
            )
    return rows


def run_theory_curves(prior: PriorModel, m_grid, methods=("BLGE", "ULGE", "SLGE")) -> str:
    """CSV of the analytic error decomposition per (method, m)."""
    header = ["method", "m", "eps_total", "eps_stat"]
    header += [f"eps_sys_k{k}" for k in prior.spectrum.mu]
    header += ["omega", "stat_fraction", "n_positions", "positions", "weights"]
    out = []
    for r in theory_rows(prior, m_grid, methods):
        out.append(
            [r["method"], r["m"], r["eps_total"], r["eps_stat"], *[float(v) for v in r["sys"]], r["omega"],
             r["stat_fraction"], r["n_positions"],
             ";".join(repr(float(v)) for v in r["positions"]), ";".join(repr(float(v)) for v in r["weights"])]
        )
    return _csv(header, out)


# --- prior study -----------------------------------------------------------------


PRIOR_STUDY_DEFAULTS = {
    "n_vertices": 8,
    "depths": [1, 2, 4, 8],
    "graphs": 4,
    "theta_draws": 50,
    "seed": 0,
    "mc_samples": 200_000,
}


def prior_study(config: dict, threads: int = 1) -> dict:
    """Empirical second moments at the middle layer for each depth.

    Returns ``{(kind, L): dict(k, a2, a2_se, b2, b2_se, rms, rms_se)}``.
    """
    cfg = {**PRIOR_STUDY_DEFAULTS, **config}
    N = int(cfg["n_vertices"])
    seed = cfg["seed"]
    graphs = [qaoa.random_graph(N, make_rng(seed, "prior-graph", g)) for g in range(int(cfg["graphs"]))]
    out = {}
    for L in cfg["depths"]:
        L = int(L)
        mid = math.ceil(L / 2) - 1
        for kind, layer in (("mixer", 2 * mid), ("cost", 2 * mid + 1)):
            nu = max(qaoa.layer_nu(g, layer) for g in graphs)

            def one(cell):
                gi, t = cell
                g = graphs[gi]
                rng = make_rng(seed, "prior-theta", L, gi, t)
                p = qaoa.CircuitParams(rng.uniform(0, 2 * np.pi, 2 * L))
                model = qaoa.exact_fourier_scan(g, p, layer)
                a = np.zeros(nu)
                b = np.zeros(nu)
                a[: len(model.a)] = model.a
                b[: len(model.b)] = model.b
                return a, b, float(np.arange(1, len(model.a) + 1) @ model.a)

            cells = [(gi, t) for gi in range(len(graphs)) for t in range(int(cfg["theta_draws"]))]
            res = _pmap(one, cells, threads)
            A = np.array([r[0] for r in res]) ** 2
            B = np.array([r[1] for r in res]) ** 2
            D = np.array([r[2] for r in res]) ** 2
            n = len(res)
            out[(kind, L)] = {
                "k": np.arange(1, nu + 1),
                "a2": A.mean(0),
                "a2_se": A.std(0, ddof=1) / np.sqrt(n),
                "b2": B.mean(0),
                "b2_se": B.std(0, ddof=1) / np.sqrt(n),
                "rms": float(np.sqrt(D.mean())),
                "rms_se": float(D.std(ddof=1) / np.sqrt(n) / (2 * np.sqrt(D.mean()))) if D.mean() > 0 else 0.0,
            }
    return out


def run_prior_study(config: dict, threads: int = 1) -> tuple[str, str]:
    """CSV of per-frequency moments with the ergodic overlay, plus a CSV of RMS derivatives."""
    cfg = {**PRIOR_STUDY_DEFAULTS, **config}
    N = int(cfg["n_vertices"])
    M = 2 * N
    res = prior_study(cfg, threads)
    barren = {
        "mixer": qaoa_mixer_prior_barren(N, M),
        "cost": qaoa_cost_prior_barren(N, M, int(cfg["mc_samples"]), cfg["seed"]),
    }
    table = {kind: dict(zip(p.spectrum.mu, p.second_moments)) for kind, p in barren.items()}
    rows, rms_rows = [], []
    for (kind, L), r in sorted(res.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        for i, k in enumerate(r["k"]):
            rows.append([kind, L, int(k), r["a2"][i], r["a2_se"][i], r["b2"][i], r["b2_se"][i],
                         float(table[kind].get(int(k), 0.0))])
        bp = barren[kind]
        rms_rows.append([kind, L, r["rms"], r["rms_se"], float(np.sqrt(bp.expected_derivative_sq()))])
    return (
        _csv(["kind", "L", "k", "a2_mean", "a2_se", "b2_mean", "b2_se", "barren_a2"], rows),
        _csv(["kind", "L", "rms_derivative", "rms_se", "barren_rms"], rms_rows),
    )


# --- gradient benchmark -----------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkRecord:
    instance: int
    draw: int
    method: str
    m_g: int
    l2_error: float
    relative_slope: float
    meta: dict = field(default_factory=dict, compare=False)


GRAD_BENCH_DEFAULTS = {
    "n_vertices": 10,
    "n_layers": 6,
    "instances": 5,
    "theta_draws": 4,
    "methods": ["BLGE", "ULGE", "PSR"],
    "budgets": None,  # None -> the minimal PSR budget
    "budget_multiples": [1],
    "priors": "exp-fit",
    "postprocess": False,
    "seed": 0,
    "mc_samples": 200_000,
}


def _instance_graph(N, seed, i):
    return qaoa.random_graph(N, make_rng(seed, "instance", i))


def run_grad_bench(config: dict, threads: int = 1) -> list[BenchmarkRecord]:
    cfg = {**GRAD_BENCH_DEFAULTS, **config}
    N, L = int(cfg["n_vertices"]), int(cfg["n_layers"])
    seed = cfg["seed"]
    n_par = 2 * L
    unknown = set(cfg["methods"]) - set(al.METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")

    def cell(job):
        i, t = job
        g = _instance_graph(N, seed, i)
        budgets = cfg["budgets"]
        if budgets is None:
            base = es.minimum_budget("PSR", g, n_par)
            budgets = [int(base * k) for k in cfg["budget_multiples"]]
        priors = es.layer_priors(g, n_par, cfg["priors"], int(cfg["mc_samples"]), seed)
        rng = make_rng(seed, "theta", i, t)
        params = qaoa.CircuitParams(rng.uniform(0, 2 * np.pi, n_par))
        exact = qaoa.exact_gradient(g, params)
        ev = qaoa.CircuitEvaluator(g, params)
        cache = es.PlanCache()
        out = []
        for method in cfg["methods"]:
            for m_g in budgets:
                est, _ = es.estimate_gradient(
                    g, params, int(m_g), method, priors, bool(cfg["postprocess"]),
                    make_rng(seed, "estimate", i, t, method, int(m_g)), plan_cache=cache, evaluator=ev,
                )
                out.append(BenchmarkRecord(i, t, method, int(m_g), float(np.linalg.norm(est - exact)),
                                           relative_slope(est, exact), {"exact_norm": float(np.linalg.norm(exact))}))
        return out

    jobs = [(i, t) for i in range(int(cfg["instances"])) for t in range(int(cfg["theta_draws"]))]
    return [r for rs in _pmap(cell, jobs, threads) for r in rs]


def bench_csv(records: list[BenchmarkRecord]) -> str:
    rows = [[r.instance, r.draw, r.method, r.m_g, r.l2_error, r.relative_slope] for r in records]
    return _csv(["instance", "draw", "method", "m_g", "l2_error", "relative_slope"], rows)


def bench_summary(records: list[BenchmarkRecord]) -> list[dict]:
    keys = sorted({(r.method, r.m_g) for r in records})
    out = []
    for method, m_g in keys:
        sel = [r for r in records if r.method == method and r.m_g == m_g]
        l2, l2_se = mean_se([r.l2_error for r in sel])
        R, R_se = mean_se([r.relative_slope for r in sel])
        out.append({"method": method, "m_g": m_g, "n": len(sel), "l2_error": l2, "l2_se": l2_se, "R": R, "R_se": R_se})
    return out


def summary_csv(summary: list[dict]) -> str:
    cols = ["method", "m_g", "n", "l2_error", "l2_se", "R", "R_se"]
    return _csv(cols, [[s[c] for c in cols] for s in summary])


# --- optimisation ---------------------------------------------------------------


@dataclass
class OptimizationTrace:
    iterations: list[int] = field(default_factory=list)
    thetas: list[np.ndarray] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    step_sizes: list[float] = field(default_factory=list)
    rounds: list[int] = field(default_factory=list)

    def append(self, it, theta, r, eta, rounds):
        self.iterations.append(it)
        self.thetas.append(np.array(theta))
        self.ratios.append(float(r))
        self.step_sizes.append(float(eta))
        self.rounds.append(int(rounds))

    def to_csv(self) -> str:
        rows = [[i, r, e, n, ";".join(repr(float(v)) for v in t)]
                for i, t, r, e, n in zip(self.iterations, self.thetas, self.ratios, self.step_sizes, self.rounds)]
        return _csv(["iteration", "ratio", "step_size", "rounds", "theta"], rows)


MAX_HALVINGS = 20


def optimize(
    graph: qaoa.Graph,
    n_layers: int,
    method: str,
    m_g: int,
    iterations: int,
    eta0: float = 1.0,
    seed=0,
    *,
    priors: str | list = "exp-fit",
    postprocess: bool = False,
    exact: bool = False,
    init: qaoa.CircuitParams | None = None,
    mc_samples: int = 200_000,
) -> OptimizationTrace:
    """Gradient descent with a measured backtracking line search.

    Each iteration estimates the gradient with ``m_g`` rounds, measures the cost
    at the current point with ``m_g`` shots, then tries ``eta0, eta0/2, ...``
    (each proposal measured afresh with ``m_g`` shots) until the measured cost
    drops.  After ``MAX_HALVINGS`` failures the step is zero.  With ``exact``
    every measurement is replaced by its expectation value.  ``method="exact"``
    uses the exact gradient.
    """
    params = init if init is not None else annealing_init(n_layers)
    n_par = len(params)
    mc = qaoa.maxcut_value(graph)
    if isinstance(priors, str):
        priors = es.layer_priors(graph, n_par, priors, mc_samples, seed)
    if method != "exact":
        need = es.minimum_budget(method, graph, n_par)
        if m_g < need:
            raise al.InfeasibleBudget(f"{method} needs m_g >= {need}, got {m_g}")
    cache = es.PlanCache()
    trace = OptimizationTrace()
    used = 0
    ev = qaoa.CircuitEvaluator(graph, params)
    trace.append(0, params.theta, -ev.expectation() / mc, 0.0, used)

    def measure(e: qaoa.CircuitEvaluator, rng):
        if exact:
            return e.expectation()
        return e.sample(None, int(m_g), rng)[0]

    for it in range(1, int(iterations) + 1):
        rng = make_rng(seed, "opt", it)
        if method == "exact":
            grad = qaoa.exact_gradient(graph, params)
        else:
            grad, _ = es.estimate_gradient(graph, params, m_g, method, priors, postprocess, rng,
                                           exact=exact, plan_cache=cache, evaluator=ev)
            used += int(m_g)
        f_now = measure(ev, rng)
        used += int(m_g)
        eta = float(eta0)
        accepted = 0.0
        new_ev = ev
        for _ in range(MAX_HALVINGS + 1):
            if not np.any(grad):
                break
            cand = qaoa.CircuitParams(params.theta - eta * grad)
            cand_ev = qaoa.CircuitEvaluator(graph, cand)
            f_new = measure(cand_ev, rng)
            used += int(m_g)
            if f_new < f_now:
                params, new_ev, accepted = cand, cand_ev, eta
                break
            eta /= 2
        ev = new_ev
        trace.append(it, params.theta, -ev.expectation() / mc, accepted, used)
    return trace


def iterations_to_reach(curve, target) -> int | None:
    """First index where ``curve`` reaches ``target``."""
    idx = np.flatnonzero(np.asarray(curve) >= target)
    return int(idx[0]) if len(idx) else None
