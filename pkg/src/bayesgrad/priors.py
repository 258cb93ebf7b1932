"""Prior second moments of the Fourier sine coefficients and the shot variance.

A :class:`PriorModel` carries the diagonal of ``C_a = E[a a^T]`` on a frequency
spectrum together with the single-shot variance ``sigma^2``.  The builders here
cover the unitary 2-design (barren plateau) limit, the QAOA closed forms, the
exponential fit used for shallow QAOA circuits and plain empirical averages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.special import gammaln, logsumexp

from .trigcore import FourierModel, FrequencySpectrum


@dataclass(frozen=True)
class PriorModel:
    spectrum: FrequencySpectrum
    second_moments: np.ndarray
    shot_variance: float
    stderr: np.ndarray | None = None

    def __post_init__(self):
        a2 = np.asarray(self.second_moments, dtype=float).reshape(-1)
        if len(a2) != self.spectrum.n_mu:
            raise ValueError("second moments must match the spectrum length")
        if not np.all(np.isfinite(a2)) or np.any(a2 < 0):
            raise ValueError("second moments must be finite and nonnegative")
        if not np.any(a2 > 0):
            raise ValueError("at least one second moment must be positive")
        if not (np.isfinite(self.shot_variance) and self.shot_variance > 0):
            raise ValueError("shot variance must be positive")
        object.__setattr__(self, "second_moments", a2)
        object.__setattr__(self, "shot_variance", float(self.shot_variance))
        if self.stderr is not None:
            se = np.asarray(self.stderr, dtype=float).reshape(-1)
            if len(se) != len(a2):
                raise ValueError("stderr must match the spectrum length")
            object.__setattr__(self, "stderr", se)

    @property
    def mu(self) -> np.ndarray:
        return self.spectrum.as_array()

    def expected_derivative_sq(self) -> float:
        """``E[delta^2] = sum_k mu_k^2 E[a_k^2]``."""
        return float(self.mu**2 @ self.second_moments)

    def with_shot_variance(self, sigma2: float) -> "PriorModel":
        return PriorModel(self.spectrum, self.second_moments, sigma2, self.stderr)

    def to_dict(self) -> dict:
        d = {
            "mu": list(self.spectrum.mu),
            "a2": [float(v) for v in self.second_moments],
            "sigma2": self.shot_variance,
        }
        if self.stderr is not None:
            d["stderr"] = [float(v) for v in self.stderr]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PriorModel":
        return cls(
            FrequencySpectrum(tuple(d["mu"])),
            np.asarray(d["a2"], dtype=float),
            float(d["sigma2"]),
            None if d.get("stderr") is None else np.asarray(d["stderr"], dtype=float),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "PriorModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SpectrumWithMultiplicities:
    """Generator eigenvalues with their relative multiplicities ``Tr[P_i] / d``."""

    eigenvalues: tuple[int, ...]
    relative_multiplicities: tuple[float, ...]
    hilbert_dim: int

    def __post_init__(self):
        lam = tuple(int(v) for v in self.eigenvalues)
        p = tuple(float(v) for v in self.relative_multiplicities)
        if len(lam) != len(p):
            raise ValueError("one multiplicity per eigenvalue")
        if any(b <= a for a, b in zip(lam, lam[1:])):
            raise ValueError("eigenvalues must be strictly increasing integers")
        if any(v < 0 for v in p) or abs(sum(p) - 1.0) > 1e-12:
            raise ValueError("relative multiplicities must be a probability vector")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "relative_multiplicities", p)


def xi(d: int) -> float:
    """``d^3 / ((d+1)(d^2-1))``, the finite-dimension correction of Haar second moments."""
    d = float(d)
    return d**3 / ((d + 1.0) * (d * d - 1.0))


def two_design_prior(spec: SpectrumWithMultiplicities, sigma_O_sq: float) -> PriorModel:
    """Second moments under the ergodic (unitary 2-design) assumption.

    ``E[a_k^2] = 2 xi_d sigma_O^2 / d * sum_{lambda_i - lambda_j = mu_k} p_i p_j``.
    The factor 2 converts ``E|c_k|^2`` into ``E[a_k^2]`` (``a_k = 2 Im c_k`` with a
    uniformly distributed phase).  The shot variance is ``sigma_O^2``.
    """
    d = spec.hilbert_dim
    if d < 2:
        raise ValueError("Hilbert space dimension must be at least 2")
    if sigma_O_sq < 0:
        raise ValueError("sigma_O_sq must be nonnegative")
    lam = np.asarray(spec.eigenvalues)
    p = np.asarray(spec.relative_multiplicities)
    acc: dict[int, float] = {}
    for i, j in combinations(range(len(lam)), 2):
        k = int(lam[j] - lam[i])
        acc[k] = acc.get(k, 0.0) + p[i] * p[j]
    if not acc:
        raise ValueError("generator has a single eigenvalue, so there are no frequencies")
    mu = sorted(acc)
    pref = 2.0 * xi(d) * sigma_O_sq / d
    a2 = np.array([pref * acc[k] for k in mu])
    return PriorModel(FrequencySpectrum(tuple(mu)), a2, sigma_O_sq)


def _log_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def mixer_multiplicities(n_vertices: int) -> SpectrumWithMultiplicities:
    """Spectrum of ``1/2 sum_j X_j`` restricted to the even X-parity sector."""
    N = int(n_vertices)
    i = np.arange(0, N + 1, 2)
    logp = _log_binom(N, i) - (N - 1) * np.log(2.0)
    return SpectrumWithMultiplicities(tuple(int(v) for v in i), tuple(np.exp(logp)), 2 ** (N - 1))


def qaoa_mixer_prior_barren(n_vertices: int, n_edges: int) -> PriorModel:
    """Barren-plateau prior of a QAOA mixer layer on ``N`` qubits and ``M`` edges.

    Frequencies are the even integers ``2..N``.  The value is the 2-design formula
    evaluated on the even-parity sector (``d = 2^(N-1)``, ``sigma_O^2 = M/4``) in
    log space.  :func:`mixer_prior_closed_form` gives the Vandermonde-summed
    approximation without ``xi_d``.
    """
    N, M = int(n_vertices), int(n_edges)
    if N < 2 or M < 1:
        raise ValueError("need N >= 2 and M >= 1")
    d_log = (N - 1) * np.log(2.0)
    sigma2 = M / 4.0
    ks = np.arange(2, N + 1, 2)
    a2 = []
    for k in ks:
        j = np.arange(0, N - k + 1, 2)
        log_terms = _log_binom(N, j) + _log_binom(N, j + k) - 2 * d_log
        a2.append(np.exp(logsumexp(log_terms) - d_log) * 2.0 * xi(2 ** (N - 1)) * sigma2)
    return PriorModel(FrequencySpectrum(tuple(int(k) for k in ks)), np.array(a2), sigma2)


def mixer_prior_closed_form(n_vertices: int, n_edges: int) -> PriorModel:
    """``M / (4 * 8^(N-1)) * (2N)! / ((N-k)! (N+k)!)`` for even ``k``."""
    N, M = int(n_vertices), int(n_edges)
    if N < 2 or M < 1:
        raise ValueError("need N >= 2 and M >= 1")
    ks = np.arange(2, N + 1, 2)
    log_a2 = (
        np.log(M / 4.0)
        - (N - 1) * np.log(8.0)
        + gammaln(2 * N + 1)
        - gammaln(N - ks + 1)
        - gammaln(N + ks + 1)
    )
    return PriorModel(FrequencySpectrum(tuple(int(k) for k in ks)), np.exp(log_a2), M / 4.0)


@dataclass(frozen=True)
class ZetaEstimate:
    """Distribution of the signed cut difference of two random bipartitions."""

    k: np.ndarray
    zeta: np.ndarray
    stderr: np.ndarray
    samples: int


def sample_cut_difference(n_vertices: int, n_edges: int, mc_samples: int, rng) -> np.ndarray:
    """Draw ``cut_2 - cut_1`` for two uniform bipartitions of a uniform random graph."""
    N, M = int(n_vertices), int(n_edges)
    n_pairs = N * (N - 1) // 2
    s = rng.multinomial(N, [0.25] * 4, size=mc_samples)
    s00, s01, s10, s11 = s.T
    e1 = s00 * s10 + s01 * s11  # cut by the first partition only
    e2 = s00 * s01 + s10 * s11  # cut by the second partition only
    only1 = rng.hypergeometric(e1, n_pairs - e1, M) if M > 0 else np.zeros(mc_samples, int)
    rest = M - only1
    only2 = np.zeros(mc_samples, dtype=int)
    ok = rest > 0
    only2[ok] = rng.hypergeometric(e2[ok], (n_pairs - e1 - e2)[ok], rest[ok])
    return only2 - only1


def estimate_zeta(n_vertices: int, n_edges: int, mc_samples: int, seed=0) -> ZetaEstimate:
    """Monte-Carlo histogram of the signed cut difference over ``k = -M..M``."""
    from ._rng import make_rng

    N, M = int(n_vertices), int(n_edges)
    if mc_samples < 1:
        raise ValueError("mc_samples must be at least 1")
    if N < 2 or not 1 <= M <= N * (N - 1) // 2:
        raise ValueError("need N >= 2 and 1 <= M <= C(N, 2)")
    rng = make_rng(seed, "zeta")
    diff = sample_cut_difference(N, M, mc_samples, rng)
    k = np.arange(-M, M + 1)
    counts = np.bincount(diff + M, minlength=2 * M + 1)
    zeta = counts / mc_samples
    stderr = np.sqrt(zeta * (1.0 - zeta) / mc_samples)
    return ZetaEstimate(k, zeta, stderr, mc_samples)


def qaoa_cost_prior_barren(n_vertices: int, n_edges: int, mc_samples: int, seed=0) -> PriorModel:
    """Barren-plateau prior of a QAOA cost layer averaged over random graphs.

    ``E[a_k^2] = 2 xi_d (M/4) / d * zeta_k`` with ``d = 2^(N-1)`` and ``zeta_k`` the
    probability that two random bipartitions differ by exactly ``k`` cut edges.
    Frequencies are ``1..M``; standard errors come from the Monte-Carlo histogram.
    """
    N, M = int(n_vertices), int(n_edges)
    est = estimate_zeta(N, M, mc_samples, seed)
    d = 2 ** (N - 1)
    pref = 2.0 * xi(d) * (M / 4.0) / d
    pos = est.k > 0
    return PriorModel(
        FrequencySpectrum(tuple(int(v) for v in est.k[pos])),
        pref * est.zeta[pos],
        M / 4.0,
        pref * est.stderr[pos],
    )


EXP_FIT = {
    "mixer": {"intercept": -1.1, "slope": -0.3, "even_only": True},
    "cost": {"intercept": -1.6, "slope": -0.3, "even_only": False},
}


def exponential_fit_prior(
    spectrum: FrequencySpectrum,
    kind: str,
    shot_variance: float,
    intercept: float | None = None,
    slope: float | None = None,
) -> PriorModel:
    """``E[a_k^2] = 10^(slope k + intercept)``; mixer layers keep only even ``k``."""
    if kind not in EXP_FIT:
        raise ValueError(f"kind must be one of {sorted(EXP_FIT)}")
    par = EXP_FIT[kind]
    c0 = par["intercept"] if intercept is None else intercept
    c1 = par["slope"] if slope is None else slope
    k = spectrum.as_array()
    a2 = 10.0 ** (c1 * k + c0)
    if par["even_only"]:
        a2 = np.where(np.mod(k, 2) == 0, a2, 0.0)
    return PriorModel(spectrum, a2, shot_variance)


@dataclass(frozen=True)
class EmpiricalPrior:
    prior: PriorModel
    b2: np.ndarray
    b2_stderr: np.ndarray = field(repr=False)


def empirical_prior(models: list[FourierModel], shot_variance: float) -> EmpiricalPrior:
    """Sample means of ``a_k^2`` (and ``b_k^2``) over a set of Fourier models."""
    if len(models) < 2:
        raise ValueError("need at least two models")
    spectrum = models[0].spectrum
    if any(m.spectrum != spectrum for m in models):
        raise ValueError("all models must share one spectrum")
    a2 = np.array([m.a**2 for m in models])
    b2 = np.array([m.b**2 for m in models])
    n = len(models)

    def se(v):
        return v.std(axis=0, ddof=1) / np.sqrt(n)

    prior = PriorModel(spectrum, a2.mean(axis=0), shot_variance, se(a2))
    return EmpiricalPrior(prior, b2.mean(axis=0), se(b2))
