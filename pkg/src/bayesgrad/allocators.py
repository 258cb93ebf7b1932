"""Measurement allocation strategies for a single partial derivative.

Given a prior and a total number of measurement rounds ``m``, each allocator
returns a :class:`MeasurementPlan`: positive shift positions ``x_i``, linear
weights ``w_i`` and round counts ``m_i``.  The estimator is
``delta_hat = sum_i w_i (F(x_i) - F(-x_i)) / 2`` with ``m_i`` rounds spent at each
of ``+x_i`` and ``-x_i``.

* BLGE: Bayesian optimum of systematic plus statistical error, found through the
  sup-norm dual.
* ULGE: the unbiased closed form on ``nu`` equidistant positions.
* SLGE: the best single position.
* PSR: two-term shift rules for sums of commuting two-level generators.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from . import trigcore
from .priors import PriorModel
from .trigcore import FrequencySpectrum, SineSeries

log = logging.getLogger(__name__)

METHODS = ("BLGE", "ULGE", "SLGE", "PSR")


class AllocationError(RuntimeError):
    pass


class InfeasibleBudget(ValueError):
    """The budget cannot fund one round at every required setting."""


class ConvergenceError(AllocationError):
    def __init__(self, msg, gap):
        super().__init__(f"{msg} (last relative gap {gap:.3e})")
        self.gap = gap


@dataclass(frozen=True)
class MeasurementPlan:
    positions: np.ndarray
    weights: np.ndarray
    rounds: np.ndarray
    method: str
    generator_indices: np.ndarray | None = None
    info: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        r = np.asarray(self.rounds, dtype=np.int64).reshape(-1)
        if not (len(x) == len(w) == len(r)):
            raise ValueError("positions, weights and rounds must have equal length")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if np.any(r < 0):
            raise ValueError("rounds must be nonnegative")
        if self.generator_indices is None:
            if np.any((x <= 0) | (x >= np.pi)):
                raise ValueError("positions must lie in (0, pi)")
            if np.any(np.diff(x) <= 0):
                raise ValueError("positions must be strictly increasing")
        else:
            g = np.asarray(self.generator_indices, dtype=np.int64).reshape(-1)
            if len(g) != len(x):
                raise ValueError("one generator index per position")
            object.__setattr__(self, "generator_indices", g)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "rounds", r)

    @property
    def n_x(self) -> int:
        return len(self.positions)

    @property
    def total_rounds(self) -> int:
        """Rounds over both signs."""
        return int(2 * self.rounds.sum())

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "positions": [float(v) for v in self.positions],
            "weights": [float(v) for v in self.weights],
            "rounds": [int(v) for v in self.rounds],
        }
        if self.generator_indices is not None:
            d["generator_indices"] = [int(v) for v in self.generator_indices]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementPlan":
        g = d.get("generator_indices")
        return cls(
            np.asarray(d["positions"], dtype=float),
            np.asarray(d["weights"], dtype=float),
            np.asarray(d["rounds"], dtype=np.int64),
            d["method"],
            None if g is None else np.asarray(g, dtype=np.int64),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class ErrorBudget:
    sys_per_frequency: np.ndarray
    stat: float
    total: float
    omega: float

    @property
    def sys(self) -> float:
        return float(self.sys_per_frequency.sum())


@dataclass(frozen=True)
class GeneratorDecomposition:
    """Coefficients ``zeta_i`` of ``H = sum_i zeta_i H_i`` with two-level ``H_i``."""

    coefficients: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.coefficients, dtype=float).reshape(-1)
        if len(z) == 0 or np.any(z == 0):
            raise ValueError("generator coefficients must be nonzero")
        object.__setattr__(self, "coefficients", z)

    @property
    def n_zeta(self) -> int:
        return len(self.coefficients)


# --- rounding -----------------------------------------------------------------


def round_allocation(weights, m: int, min_rounds: int = 0) -> np.ndarray:
    """Integer rounds per position, ``m_i ~ m |w_i| / (2 ||w||_1)``.

    Rounding may under- or overshoot the budget; the result is repaired greedily
    so that ``2 sum m_i`` uses as much of ``m`` as possible without exceeding it.
    Extra rounds go where they reduce ``sum w_i^2 / m_i`` most and surplus rounds
    are removed where that sum grows least.  Positions left with zero rounds must
    be dropped by the caller.
    """
    w = np.abs(np.asarray(weights, dtype=float))
    m = int(m)
    budget = m // 2
    if budget < min_rounds * len(w):
        raise InfeasibleBudget(
            f"budget {m} below {min_rounds} round(s) at each of {2 * len(w)} settings"
        )
    l1 = w.sum()
    if l1 == 0:
        r = np.zeros(len(w), dtype=np.int64)
        r[:] = min_rounds
        return r
    r = np.rint(m * w / (2.0 * l1)).astype(np.int64)
    r = np.maximum(r, min_rounds)
    w2 = w**2

    def cost_of(ri, wi2):
        return np.inf if ri == 0 and wi2 > 0 else (0.0 if ri == 0 else wi2 / ri)

    while r.sum() > budget:
        # remove the round that hurts least
        best, best_inc = None, np.inf
        for i in range(len(w)):
            if r[i] <= min_rounds:
                continue
            inc = cost_of(r[i] - 1, w2[i]) - cost_of(r[i], w2[i])
            if r[i] - 1 == 0:
                # dropping the position entirely: the statistical cost vanishes but
                # its contribution to the estimate is lost; prefer it only last
                inc = np.inf if min_rounds > 0 else 1e300 + w2[i]
            if inc < best_inc:
                best, best_inc = i, inc
        if best is None:
            raise InfeasibleBudget("cannot meet the budget")
        r[best] -= 1
    while r.sum() < budget:
        gain = np.where(r > 0, w2 / np.maximum(r, 1) - w2 / (r + 1), 0.0)
        gain[(r == 0) & (w2 > 0)] = 0.0
        i = int(np.argmax(gain))
        if gain[i] <= 0:
            break
        r[i] += 1
    return r


def _finalize(method, x, w, m, min_rounds, info=None, generator_indices=None):
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    r = round_allocation(w, m, min_rounds)
    keep = r > 0
    if generator_indices is not None:
        generator_indices = np.asarray(generator_indices)[keep]
    return MeasurementPlan(x[keep], w[keep], r[keep], method, generator_indices, info or {})


# --- error model ----------------------------------------------------------------


def sine_matrix(mu, x) -> np.ndarray:
    """``S_ki = sin(mu_k x_i)``."""
    return np.sin(np.multiply.outer(np.asarray(mu, dtype=float), np.asarray(x, dtype=float)))


def primal_objective(prior: PriorModel, m: float, x, w) -> float:
    """Expected total squared error with ideal proportional rounds."""
    mu, A = prior.mu, prior.second_moments
    resid = sine_matrix(mu, x) @ np.asarray(w, dtype=float) - mu
    return float(A @ resid**2 + prior.shot_variance / m * np.abs(w).sum() ** 2)


def dual_objective(prior: PriorModel, m: float, kappa) -> float:
    """``g(kappa) = sum(2 kappa mu - kappa^2 / A) - m / sigma^2 ||sum kappa sin||_inf^2``.

    Frequencies with ``A_k = 0`` must carry ``kappa_k = 0``.
    """
    kappa = np.asarray(kappa, dtype=float)
    mu, A = prior.mu, prior.second_moments
    act = A > 0
    val = float(np.sum(2 * kappa[act] * mu[act] - kappa[act] ** 2 / A[act]))
    if np.any(kappa):
        _, sup = trigcore.global_abs_maxima(SineSeries(prior.spectrum, kappa))
    else:
        sup = 0.0
    return val - m / prior.shot_variance * sup**2


def solve_weights(prior: PriorModel, m: float, x, stat_diag=None) -> np.ndarray:
    """Optimal weights at fixed positions.

    With ``stat_diag`` unset the statistical term is ``sigma^2/m ||w||_1^2``; the
    split ``w = w+ - w-`` turns the problem into a nonnegative least-squares fit
    that is solved exactly by an active-set method.  With ``stat_diag`` given, the statistical term is
    ``sum_i stat_diag_i w_i^2`` and the problem is a plain ridge solve.
    """
    x = np.asarray(x, dtype=float)
    mu, A = prior.mu, prior.second_moments
    S = sine_matrix(mu, x)
    sa = np.sqrt(A)[:, None]
    if stat_diag is not None:
        lhs = np.vstack([sa * S, np.diag(np.sqrt(np.asarray(stat_diag, dtype=float)))])
        rhs = np.concatenate([np.sqrt(A) * mu, np.zeros(len(x))])
        return np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    n = len(x)
    lhs = np.vstack([sa * np.hstack([S, -S]), np.full((1, 2 * n), np.sqrt(prior.shot_variance / m))])
    rhs = np.concatenate([np.sqrt(A) * mu, [0.0]])
    # bounded-variable least squares; scipy's nnls can stall on this split form
    v = lsq_linear(lhs, rhs, bounds=(0.0, np.inf), method="bvls", tol=1e-15).x
    return v[:n] - v[n:]


def error_budget(plan: MeasurementPlan, prior: PriorModel, m: float, use_rounds: bool = False) -> ErrorBudget:
    """Systematic, statistical and total error of a plan, plus the relative correlation.

    With ``use_rounds`` the statistical error is ``sum_i w_i^2 sigma^2 / (2 m_i)``
    over the plan's integer rounds; otherwise ideal proportional rounds
    (``sigma^2/m ||w||_1^2``) are assumed.
    """
    mu, A, s2 = prior.mu, prior.second_moments, prior.shot_variance
    w = plan.weights
    if use_rounds:
        if np.any((plan.rounds == 0) & (w != 0)):
            raise ValueError("position with nonzero weight has zero rounds")
        nz = plan.rounds > 0
        stat = float(np.sum(w[nz] ** 2 * s2 / (2.0 * plan.rounds[nz])))
    else:
        stat = s2 / m * float(np.abs(w).sum()) ** 2
    d2 = float(A @ mu**2)
    if plan.method == "PSR":
        # unbiased by construction
        sys_k = np.zeros(len(mu))
        cov = d2
        est2 = d2 + stat
    else:
        Sw = sine_matrix(mu, plan.positions) @ w
        sys_k = A * (Sw - mu) ** 2
        cov = float(A @ (mu * Sw))
        est2 = float(A @ Sw**2) + stat
    total = float(sys_k.sum()) + stat
    omega = 0.0 if est2 <= 0 or d2 <= 0 else min(1.0, abs(cov) / np.sqrt(d2 * est2))
    return ErrorBudget(sys_k, stat, total, omega)


def effective_spectral_width(prior: PriorModel) -> float:
    """``sqrt(E[Delta^2] / E[delta^2]) = sqrt(<mu^4> / <mu^2>)``."""
    mu, A = prior.mu, prior.second_moments
    d2 = float(A @ mu**2)
    if d2 <= 0:
        raise ValueError("prior has no weight")
    return float(np.sqrt(A @ mu**4 / d2))


# --- BLGE ---------------------------------------------------------------------


def _merge_close(x, w, tol=1e-7):
    order = np.argsort(x)
    x, w = x[order], w[order]
    xs, ws = [x[0]], [w[0]]
    for xi, wi in zip(x[1:], w[1:]):
        if xi - xs[-1] <= tol:
            tot = ws[-1] + wi
            if tot != 0:
                xs[-1] = (xs[-1] * abs(ws[-1]) + xi * abs(wi)) / (abs(ws[-1]) + abs(wi))
            ws[-1] = tot
        else:
            xs.append(xi)
            ws.append(wi)
    return np.asarray(xs), np.asarray(ws)


def _prune(prior, m, xs, ws, rtol=1e-9):
    """Drop positions the optimum does not need, largest first (ties between equal maxima)."""
    pv = primal_objective(prior, m, xs, ws)
    changed = True
    while changed and len(xs) > 1:
        changed = False
        for i in sorted(range(len(xs)), key=lambda i: -xs[i]):
            xt = np.delete(xs, i)
            wt = solve_weights(prior, m, xt)
            pt = primal_objective(prior, m, xt, wt)
            if pt <= pv * (1 + rtol):
                keep = np.abs(wt) > 0
                xs, ws, pv = xt[keep], wt[keep], primal_objective(prior, m, xt[keep], wt[keep])
                changed = True
                break
    return xs, ws, pv


def _sparse_support(prior, m, kappa, X, w, dual, accept=1e-5):
    """Sparsest position set whose exact weights keep the gap below ``accept``.

    Candidates are the global maxima of ``|sum kappa_k sin(mu_k x)|`` at growing
    tolerances (where complementary slackness puts the optimal weights), then
    the clustered column-generation support.
    """
    cands = []
    if np.any(kappa):
        for rtol in (1e-8, 1e-6, 1e-4, 1e-3):
            xs, _ = trigcore.global_abs_maxima(SineSeries(prior.spectrum, kappa), rtol)
            cands.append(xs)
    nz = np.abs(w) > 0
    for tol in (1e-3, 1e-7):
        cands.append(_merge_close(X[nz], w[nz], tol)[0])
    best = None
    for xs in sorted(cands, key=len):
        ws = solve_weights(prior, m, xs)
        keep = np.abs(ws) > 0
        xs, ws = xs[keep], ws[keep]
        if len(xs) == 0:
            continue
        xs, ws, pv = _prune(prior, m, xs, ws)
        if (pv - dual) / pv < accept:
            return xs, ws, pv
        if best is None or pv < best[2]:
            best = (xs, ws, pv)
    xs, ws = X[nz], w[nz]
    pv = primal_objective(prior, m, xs, ws)
    if best is None or pv < best[2]:
        best = (xs, ws, pv)
    return best


def blge_solve(prior: PriorModel, m: float, gap_tol: float = 1e-6, max_iter: int = 200) -> dict:
    """Continuous BLGE solution (positions, weights, dual certificate).

    The sup-norm dual is attacked by column generation: the primal is solved
    exactly on a finite set of positions, its multipliers
    ``kappa = A (mu - S w)`` give a dual point whose exact value needs the
    global maxima of ``|sum kappa_k sin(mu_k x)|``, and those maxima join the
    position set.  Stops when the relative primal-dual gap drops below ``gap_tol``.
    """
    mu, A = prior.mu, prior.second_moments
    if not np.all(np.isfinite(A)):
        raise ValueError("non-finite prior entries")
    if m <= 0:
        raise ValueError("budget must be positive")

    kappa = mu * A
    X, _ = trigcore.global_abs_maxima(SineSeries(prior.spectrum, kappa))
    X = np.concatenate([X, np.pi * (np.arange(prior.spectrum.nu) + 0.5) / prior.spectrum.nu])
    gap = np.inf
    for it in range(max_iter):
        w = solve_weights(prior, m, X)
        primal = primal_objective(prior, m, X, w)
        kappa = A * (mu - sine_matrix(mu, X) @ w)
        if np.any(kappa):
            new_x, sup = trigcore.global_abs_maxima(SineSeries(prior.spectrum, kappa))
        else:
            new_x, sup = np.empty(0), 0.0
        dual = float(np.sum(2 * kappa * mu - np.divide(kappa**2, A, out=np.zeros_like(A), where=A > 0)))
        dual -= m / prior.shot_variance * sup**2
        gap = (primal - dual) / primal
        if gap < gap_tol:
            break
        support = np.abs(w) > 0
        X = np.unique(np.concatenate([X[support], new_x]))
    else:
        raise ConvergenceError("BLGE dual did not converge", gap)

    x_opt, w_opt, primal = _sparse_support(prior, m, kappa, X, w, dual)
    gap = (primal - dual) / primal
    return {
        "positions": x_opt,
        "weights": w_opt,
        "kappa": kappa,
        "primal": primal,
        "dual": dual,
        "gap": gap,
        "iterations": it + 1,
    }


def blge_allocate(prior: PriorModel, m: int, gap_tol: float = 1e-4) -> MeasurementPlan:
    """Bayesian linear gradient estimator allocation."""
    if m < 2:
        raise InfeasibleBudget("BLGE needs m >= 2")
    sol = blge_solve(prior, m, gap_tol=min(gap_tol, 1e-6))
    if sol["gap"] >= gap_tol:
        raise ConvergenceError("BLGE primal-dual gap above tolerance", sol["gap"])
    info = {k: sol[k] for k in ("primal", "dual", "gap", "kappa", "iterations")}
    return _finalize("BLGE", sol["positions"], sol["weights"], m, 0, info)


# --- ULGE ---------------------------------------------------------------------


def ulge_positions_weights(nu: int) -> tuple[np.ndarray, np.ndarray]:
    i = np.arange(nu)
    x = np.pi / nu * (i + 0.5)
    w = (-1.0) ** i / (2 * nu * np.sin(np.pi / (2 * nu) * (i + 0.5)) ** 2)
    return x, w


def ulge_allocate(spectrum: FrequencySpectrum, m: int) -> MeasurementPlan:
    """Unbiased estimator on ``nu`` equidistant positions (DST-II inversion)."""
    nu = spectrum.nu
    if m < 2 * nu:
        raise InfeasibleBudget("budget below one round per setting")
    x, w = ulge_positions_weights(nu)
    return _finalize("ULGE", x, w, m, 1)


# --- SLGE ---------------------------------------------------------------------


def _bracket(A, mu, f, nu_max):
    """Laurent coefficients of ``sum_k A_k g(mu_k) * basis`` built by ``f``."""
    return sum(A[k] * f(mu[k], nu_max) for k in range(len(mu)) if A[k] != 0)


def _lc(cos=None, sin=None, deg=0):
    c = np.zeros(deg + 1)
    s = np.zeros(deg + 1)
    for j, v in (cos or {}).items():
        c[j] += v
    for j, v in (sin or {}).items():
        s[j] += v
    return trigcore.to_laurent(c, s)


def slge_objective(prior: PriorModel, m: float, x):
    """Expected total error at position(s) ``x`` with the optimal single weight."""
    mu, A = prior.mu, prior.second_moments
    x = np.asarray(x, dtype=float)
    s = prior.shot_variance / m
    sin_ = np.sin(np.multiply.outer(x, mu))
    num = (sin_ * mu) @ A
    den = sin_**2 @ A + s
    return A @ mu**2 - num**2 / den


def slge_weight(prior: PriorModel, m: float, x: float) -> float:
    mu, A = prior.mu, prior.second_moments
    sx = np.sin(mu * x)
    return float(A @ (mu * sx) / (A @ sx**2 + prior.shot_variance / m))


def slge_h_coefficients(prior: PriorModel, m: float) -> tuple[np.ndarray, np.ndarray]:
    """Cos/sin coefficients of the stationarity polynomial ``h`` (degree ``3 nu``).

    ``h = <mu^2 cos(mu x)> (<sin^2(mu x)> + s) - 1/2 <mu sin(mu x)> <mu sin(2 mu x)>``
    with ``<g(mu)> = sum_k A_k g(mu_k)`` and ``s = sigma^2 / m``.
    """
    mu = np.asarray(prior.spectrum.mu)
    A = prior.second_moments
    nu = int(mu[-1])
    D2 = 2 * nu
    s = prior.shot_variance / m
    # <mu^2 cos mu x>, degree nu
    c1 = np.zeros(nu + 1)
    c1[mu] = A * mu**2
    t1 = trigcore.to_laurent(c1, np.zeros(nu + 1))
    # <sin^2 mu x> + s = sum A/2 - sum A/2 cos(2 mu x) + s, degree 2 nu
    c2 = np.zeros(D2 + 1)
    c2[0] = A.sum() / 2 + s
    c2[2 * mu] -= A / 2
    t2 = trigcore.to_laurent(c2, np.zeros(D2 + 1))
    # <mu sin mu x>, degree nu
    s3 = np.zeros(nu + 1)
    s3[mu] = A * mu
    t3 = trigcore.to_laurent(np.zeros(nu + 1), s3)
    # <mu sin 2 mu x>, degree 2 nu
    s4 = np.zeros(D2 + 1)
    s4[2 * mu] = A * mu
    t4 = trigcore.to_laurent(np.zeros(D2 + 1), s4)
    h = trigcore.laurent_mul(t1, t2) - 0.5 * trigcore.laurent_mul(t3, t4)
    return trigcore.from_laurent(h)


def slge_candidates(prior: PriorModel, m: float) -> np.ndarray:
    cos_c, sin_c = slge_h_coefficients(prior, m)
    try:
        roots = trigcore.real_roots_on_period(cos_c, sin_c)
    except ValueError:
        roots = np.empty(0)
    roots = np.where(roots > np.pi, 2 * np.pi - roots, roots)
    return roots[(roots > 0) & (roots < np.pi)]


def slge_solve(prior: PriorModel, m: float) -> tuple[float, float, float]:
    """Best single position ``x``, its weight and its expected total error."""
    cand = slge_candidates(prior, m)
    if len(cand) == 0:
        nu = prior.spectrum.nu
        cand = np.array([np.pi / (2 * nu)])
    vals = slge_objective(prior, m, cand)
    i = int(np.argmin(vals))
    x = float(cand[i])
    return x, slge_weight(prior, m, x), float(vals[i])


def slge_allocate(prior: PriorModel, m: int) -> MeasurementPlan:
    """Single-position (central-difference-like) Bayesian estimator."""
    if m < 2:
        raise InfeasibleBudget("SLGE needs m >= 2")
    x, w, err = slge_solve(prior, m)
    return MeasurementPlan(
        np.array([x]), np.array([w]), np.array([m // 2]), "SLGE", info={"objective": err}
    )


# --- PSR ----------------------------------------------------------------------


def psr_allocate(decomp: GeneratorDecomposition, m: int) -> MeasurementPlan:
    """Two-term shift rule on every commuting two-level generator.

    Generator ``i`` is evaluated with an extra rotation by ``+-pi / (2 |zeta_i|)``;
    its weight in ``delta_hat = sum_i w_i (F_{i|+} - F_{i|-}) / 2`` is ``|zeta_i|``.
    """
    z = decomp.coefficients
    if m < 2 * decomp.n_zeta:
        raise InfeasibleBudget("budget below one round per setting")
    x = np.pi / (2 * np.abs(z))
    w = np.abs(z)
    return _finalize("PSR", x, w, m, 1, generator_indices=np.arange(decomp.n_zeta))


def psr_error(decomp: GeneratorDecomposition, sigma2: float, m: float) -> float:
    return sigma2 * float(np.abs(decomp.coefficients).sum()) ** 2 / m


def allocate(method: str, prior: PriorModel, m: int, decomp: GeneratorDecomposition | None = None) -> MeasurementPlan:
    if method == "BLGE":
        return blge_allocate(prior, m)
    if method == "ULGE":
        return ulge_allocate(prior.spectrum, m)
    if method == "SLGE":
        return slge_allocate(prior, m)
    if method == "PSR":
        if decomp is None:
            raise ValueError("PSR needs a generator decomposition")
        return psr_allocate(decomp, m)
    raise ValueError(f"unknown method {method!r}")
