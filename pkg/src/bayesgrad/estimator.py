"""Run measurement plans against the simulator and assemble gradient estimates."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import allocators as al
from ._rng import make_rng
from .priors import PriorModel, exponential_fit_prior, qaoa_cost_prior_barren, qaoa_mixer_prior_barren
from .qaoa import (
    GENERATOR_INSERT,
    LAYER_SHIFT,
    CircuitEvaluator,
    CircuitParams,
    EvalRequest,
    Graph,
    generator_decomposition,
    layer_kind,
    layer_spectrum,
)
from .trigcore import FrequencySpectrum


@dataclass(frozen=True)
class EstimateReport:
    delta_hat: float
    per_position: list  # (x_i, y_i, sigma2_i, m_i)
    weights_used: np.ndarray
    rounds_spent: int
    method: str
    postprocessed: bool = False
    variance_substituted: bool = False
    plan_weights: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "delta_hat": self.delta_hat,
            "per_position": [[float(x), float(y), float(s), int(m)] for x, y, s, m in self.per_position],
            "weights_used": [float(v) for v in self.weights_used],
            "rounds_spent": self.rounds_spent,
            "method": self.method,
            "postprocessed": self.postprocessed,
            "variance_substituted": self.variance_substituted,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def restrict_prior(prior: PriorModel, spectrum: FrequencySpectrum) -> PriorModel:
    """Prior on ``spectrum``; frequencies the prior does not know get zero weight."""
    table = dict(zip(prior.spectrum.mu, prior.second_moments))
    a2 = np.array([table.get(k, 0.0) for k in spectrum.mu])
    return PriorModel(spectrum, a2, prior.shot_variance)


def layer_priors(graph: Graph, n_params: int, kind: str = "exp-fit", mc_samples: int = 200_000, seed=0) -> list[PriorModel]:
    """One prior per parameter, on that layer's frequency spectrum.

    ``exp-fit`` uses the empirical exponential decay; ``barren`` uses the
    ergodic-limit formulas.  The shot variance is ``M/4`` throughout.
    """
    N, M = graph.n_vertices, graph.n_edges
    s2 = M / 4.0
    spectra = {k: layer_spectrum(graph, l) for l, k in ((0, "mixer"), (1, "cost"))}
    if kind == "exp-fit":
        per_kind = {k: exponential_fit_prior(spectra[k], k, s2) for k in spectra}
    elif kind == "barren":
        per_kind = {
            "mixer": restrict_prior(qaoa_mixer_prior_barren(N, M), spectra["mixer"]),
            "cost": restrict_prior(qaoa_cost_prior_barren(N, M, mc_samples, seed), spectra["cost"]),
        }
    else:
        raise ValueError(f"unknown prior kind {kind!r}")
    return [per_kind[layer_kind(l)] for l in range(n_params)]


def _evaluate(ev: CircuitEvaluator, req: EvalRequest, shots: int, rng, exact: bool):
    if exact:
        return ev.expectation(req), 0.0
    return ev.sample(req, shots, rng)


def estimate_partial(
    graph: Graph,
    params: CircuitParams,
    layer: int,
    plan: al.MeasurementPlan,
    postprocess: bool = False,
    rng=None,
    *,
    prior: PriorModel | None = None,
    budget: int | None = None,
    exact: bool = False,
    evaluator: CircuitEvaluator | None = None,
) -> EstimateReport:
    """``delta_hat = sum_i w_i (y_+ - y_-) / 2`` from ``m_i`` rounds at each sign.

    Single-round positions have no sample variance; the prior shot variance is
    used there and ``variance_substituted`` is set.  ``postprocess`` re-solves the
    weights at the measured positions with each position's statistical term set
    to the empirical variance of ``y_i``.  ``exact`` replaces sampling by exact
    expectations.
    """
    if np.any(plan.rounds < 1):
        raise ValueError("plan has positions with zero rounds")
    if postprocess and prior is None:
        raise ValueError("postprocessing needs the prior")
    ev = evaluator if evaluator is not None else CircuitEvaluator(graph, params)
    rng = make_rng(0 if rng is None else rng)
    psr = plan.method == "PSR"
    rows = []
    substituted = False
    for i, (x, mi) in enumerate(zip(plan.positions, plan.rounds)):
        if psr:
            g = int(plan.generator_indices[i])
            rp, rm = EvalRequest(GENERATOR_INSERT, layer, x, g), EvalRequest(GENERATOR_INSERT, layer, -x, g)
        else:
            rp, rm = EvalRequest(LAYER_SHIFT, layer, x), EvalRequest(LAYER_SHIFT, layer, -x)
        yp, vp = _evaluate(ev, rp, int(mi), rng, exact)
        ym, vm = _evaluate(ev, rm, int(mi), rng, exact)
        s2 = 0.5 * (vp + vm)
        if mi == 1 and not exact:
            s2 = prior.shot_variance if prior is not None else float("nan")
            substituted = True
        rows.append((float(x), 0.5 * (yp - ym), float(s2), int(mi)))

    w = plan.weights.copy()
    done_post = False
    if postprocess and not psr and not exact and plan.n_x > 0:
        m = budget if budget is not None else plan.total_rounds
        var_y = np.array([r[2] / (2.0 * r[3]) for r in rows])
        if np.all(np.isfinite(var_y)):
            w = al.solve_weights(prior, m, plan.positions, stat_diag=var_y)
            done_post = True
    y = np.array([r[1] for r in rows])
    delta = float(w @ y) if len(y) else 0.0
    return EstimateReport(
        delta, rows, w, plan.total_rounds, plan.method, done_post, substituted, plan.weights.copy()
    )


def split_budget(m_g: int, n_params: int) -> np.ndarray:
    """Per-component budgets with cost layers getting twice the mixer share.

    Shares are floored and the remainder goes to cost components one round at
    a time in index order.
    """
    L = n_params // 2
    unit = m_g / (3 * L)
    out = np.array([int(np.floor(unit)) if l % 2 == 0 else int(np.floor(2 * unit)) for l in range(n_params)])
    rest = int(m_g - out.sum())
    cost = [l for l in range(n_params) if l % 2]
    k = 0
    while rest > 0:
        out[cost[k % len(cost)]] += 1
        rest -= 1
        k += 1
    return out


def component_minimum(method: str, graph: Graph, layer: int) -> int:
    if method == "PSR":
        return 2 * generator_decomposition(graph, layer).n_zeta
    if method == "ULGE":
        return 2 * layer_spectrum(graph, layer).nu
    return 2


def minimum_budget(method: str, graph: Graph, n_params: int) -> int:
    """Smallest ``m_g`` whose 2:1 split funds every component."""
    need = np.array([component_minimum(method, graph, l) for l in range(n_params)])
    L = n_params // 2
    m = int(max(3 * L * need[0::2].max(), np.ceil(1.5 * L * need[1::2].max())))
    while np.any(split_budget(m, n_params) < need):
        m += 1
    return m


class PlanCache:
    """Memoises allocations by ``(method, prior, budget)``."""

    def __init__(self):
        self._plans = {}

    def get(self, method, prior: PriorModel, m: int, decomp=None):
        key = (method, prior.spectrum.mu, prior.second_moments.tobytes(), prior.shot_variance, int(m),
               None if decomp is None else decomp.coefficients.tobytes())
        plan = self._plans.get(key)
        if plan is None:
            plan = al.allocate(method, prior, int(m), decomp)
            self._plans[key] = plan
        return plan


def estimate_gradient(
    graph: Graph,
    params: CircuitParams,
    m_g: int,
    method: str,
    priors: list[PriorModel],
    postprocess: bool = False,
    rng=None,
    *,
    exact: bool = False,
    plan_cache: PlanCache | None = None,
    evaluator: CircuitEvaluator | None = None,
) -> tuple[np.ndarray, list[EstimateReport]]:
    """Full gradient estimate with the 2:1 cost/mixer budget split."""
    n = len(params)
    if len(priors) != n:
        raise ValueError("one prior per parameter required")
    need = minimum_budget(method, graph, n)
    if m_g < need:
        raise al.InfeasibleBudget(f"{method} needs m_g >= {need}, got {m_g}")
    budgets = split_budget(m_g, n)
    cache = plan_cache if plan_cache is not None else PlanCache()
    ev = evaluator if evaluator is not None else CircuitEvaluator(graph, params)
    seed = make_rng(0 if rng is None else rng).integers(2**63)
    grad = np.zeros(n)
    reports = []
    for l in range(n):
        decomp = generator_decomposition(graph, l) if method == "PSR" else None
        plan = cache.get(method, priors[l], budgets[l], decomp)
        rep = estimate_partial(
            graph, params, l, plan, postprocess, make_rng(int(seed), "component", l),
            prior=priors[l], budget=int(budgets[l]), exact=exact, evaluator=ev,
        )
        grad[l] = rep.delta_hat
        reports.append(rep)
    return grad, reports
