"""Trigonometric polynomials on integer frequency spectra.

Every cost function restricted to one circuit parameter is a real
trigonometric polynomial ``F(x) = b0 + sum_k a_k sin(mu_k x) + b_k cos(mu_k x)``
with positive integer frequencies ``mu``.  This module holds the containers for
such functions and the root/extremum finders the allocators rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

TWO_PI = 2.0 * np.pi

UNIT_CIRCLE_TOL = 1e-7
NEWTON_STEPS = 20
MAXIMA_RTOL = 1e-8


@dataclass(frozen=True)
class FrequencySpectrum:
    """Ascending, distinct, positive integer frequencies."""

    mu: tuple[int, ...]

    def __post_init__(self):
        mu = tuple(int(v) for v in self.mu)
        if len(mu) == 0:
            raise ValueError("spectrum needs at least one frequency")
        if mu[0] < 1 or any(b <= a for a, b in zip(mu, mu[1:])):
            raise ValueError(f"frequencies must be strictly increasing positive integers, got {mu}")
        object.__setattr__(self, "mu", mu)

    @classmethod
    def full(cls, nu: int) -> "FrequencySpectrum":
        return cls(tuple(range(1, int(nu) + 1)))

    @property
    def nu(self) -> int:
        return self.mu[-1]

    @property
    def n_mu(self) -> int:
        return len(self.mu)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.mu, dtype=float)

    def __len__(self):
        return len(self.mu)


@dataclass(frozen=True)
class FourierModel:
    """Exact Fourier representation of a single-parameter restriction ``F(x)``.

    ``a`` are the sine coefficients, ``b`` the cosine coefficients and ``b0``
    the constant offset.
    """

    spectrum: FrequencySpectrum
    a: np.ndarray
    b: np.ndarray
    b0: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if len(a) != self.spectrum.n_mu or len(b) != self.spectrum.n_mu:
            raise ValueError("coefficient vectors must match the spectrum length")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "b0", float(self.b0))

    def __call__(self, x):
        return eval_model(self, x)


@dataclass(frozen=True)
class SineSeries:
    """``f(x) = sum_k coeffs_k sin(mu_k x)``."""

    spectrum: FrequencySpectrum
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if len(c) != self.spectrum.n_mu:
            raise ValueError("coefficient vector must match the spectrum length")
        object.__setattr__(self, "coeffs", c)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        mu = self.spectrum.as_array()
        return np.sin(np.multiply.outer(x, mu)) @ self.coeffs


def eval_model(model: FourierModel, x):
    """Evaluate ``F(x)``; ``x`` may be a scalar or an array."""
    x = np.asarray(x, dtype=float)
    arg = np.multiply.outer(x, model.spectrum.as_array())
    return model.b0 + np.sin(arg) @ model.a + np.cos(arg) @ model.b


def derivative_at_zero(model: FourierModel) -> float:
    """``F'(0) = sum_k mu_k a_k``."""
    return float(model.spectrum.as_array() @ model.a)


def antisymmetric_projection(model: FourierModel) -> SineSeries:
    """The odd part ``(F(x) - F(-x)) / 2`` as a sine series."""
    return SineSeries(model.spectrum, model.a.copy())


def exact_fourier_coeffs(samples, nu: int) -> FourierModel:
    """Interpolate ``2 nu + 1`` equispaced samples by a degree-``nu`` trig polynomial.

    The samples must be taken at ``x_j = 2 pi j / (2 nu + 1)``.  The returned
    model lives on the full spectrum ``1..nu``.
    """
    samples = np.asarray(samples, dtype=float).reshape(-1)
    nu = int(nu)
    n = 2 * nu + 1
    if nu < 1:
        raise ValueError("nu must be at least 1")
    if len(samples) != n:
        raise ValueError(f"expected {n} samples for nu={nu}, got {len(samples)}")
    X = np.fft.rfft(samples) / n
    return FourierModel(
        FrequencySpectrum.full(nu),
        a=-2.0 * X[1:].imag,
        b=2.0 * X[1:].real,
        b0=X[0].real,
    )


def fourier_grid(nu: int) -> np.ndarray:
    n = 2 * int(nu) + 1
    return TWO_PI * np.arange(n) / n


# --- generic trig polynomials -------------------------------------------------
#
# A trig polynomial of degree D is stored as two length-(D+1) arrays:
# p(x) = sum_j cos_c[j] cos(j x) + sin_c[j] sin(j x); sin_c[0] is ignored.


def trig_eval(cos_c, sin_c, x):
    cos_c = np.asarray(cos_c, dtype=float)
    sin_c = np.asarray(sin_c, dtype=float)
    j = np.arange(len(cos_c))
    arg = np.multiply.outer(np.asarray(x, dtype=float), j)
    return np.cos(arg) @ cos_c + np.sin(arg) @ sin_c


def trig_derivative(cos_c, sin_c):
    """Coefficients of ``p'(x)``."""
    j = np.arange(len(cos_c))
    return j * np.asarray(sin_c, dtype=float), -j * np.asarray(cos_c, dtype=float)


def to_laurent(cos_c, sin_c) -> np.ndarray:
    """Complex coefficients ``e_{-D..D}`` with ``p(x) = sum_j e_j exp(i j x)``."""
    cos_c = np.asarray(cos_c, dtype=float)
    sin_c = np.asarray(sin_c, dtype=float).copy()
    sin_c[0] = 0.0
    D = len(cos_c) - 1
    e = np.zeros(2 * D + 1, dtype=complex)
    e[D] = cos_c[0]
    e[D + 1:] = (cos_c[1:] - 1j * sin_c[1:]) / 2
    e[:D] = ((cos_c[1:] + 1j * sin_c[1:]) / 2)[::-1]
    return e


def from_laurent(e) -> tuple[np.ndarray, np.ndarray]:
    e = np.asarray(e, dtype=complex)
    D = (len(e) - 1) // 2
    pos = e[D + 1:]
    neg = e[:D][::-1]
    cos_c = np.concatenate([[e[D].real], (pos + neg).real])
    sin_c = np.concatenate([[0.0], (1j * (pos - neg)).real])
    return cos_c, sin_c


def laurent_mul(e1, e2) -> np.ndarray:
    return np.convolve(e1, e2)


def _trim(cos_c, sin_c, atol):
    scale = max(np.max(np.abs(cos_c)), np.max(np.abs(sin_c[1:])) if len(sin_c) > 1 else 0.0)
    D = len(cos_c) - 1
    while D > 0 and abs(cos_c[D]) <= atol * scale and abs(sin_c[D]) <= atol * scale:
        D -= 1
    return cos_c[: D + 1], sin_c[: D + 1]


def real_roots_on_period(cos_c, sin_c, unit_tol: float = UNIT_CIRCLE_TOL) -> np.ndarray:
    """All real roots in ``[0, 2 pi)`` of a trig polynomial.

    Substitutes ``z = exp(i x)``, takes the eigenvalues of the companion matrix
    of ``z^D p``, keeps those within ``unit_tol`` of the unit circle and polishes
    each by Newton iterations on ``p`` itself.
    """
    cos_c = np.asarray(cos_c, dtype=float).reshape(-1)
    sin_c = np.asarray(sin_c, dtype=float).reshape(-1)
    if len(sin_c) < len(cos_c):
        sin_c = np.pad(sin_c, (0, len(cos_c) - len(sin_c)))
    elif len(cos_c) < len(sin_c):
        cos_c = np.pad(cos_c, (0, len(sin_c) - len(cos_c)))
    if not np.any(cos_c) and not np.any(sin_c[1:]):
        raise ValueError("degenerate polynomial")
    cos_c, sin_c = _trim(cos_c, sin_c, 1e-14)
    D = len(cos_c) - 1
    if D == 0:
        # nonzero constant
        return np.empty(0)

    z = P.polyroots(to_laurent(cos_c, sin_c))
    z = z[np.abs(np.abs(z) - 1.0) < unit_tol]
    x = np.mod(np.angle(z), TWO_PI)

    dcos, dsin = trig_derivative(cos_c, sin_c)
    roots = []
    for x0 in x:
        xr = x0
        for _ in range(NEWTON_STEPS):
            f = trig_eval(cos_c, sin_c, xr)
            df = trig_eval(dcos, dsin, xr)
            if df == 0.0:
                break
            step = f / df
            if abs(step) > 1e-3:
                # Newton is leaving the basin; keep the eigenvalue estimate
                break
            xr -= step
            if abs(step) < 1e-15:
                break
        if abs(trig_eval(cos_c, sin_c, xr)) <= abs(trig_eval(cos_c, sin_c, x0)):
            x0 = xr
        roots.append(np.mod(x0, TWO_PI))
    if not roots:
        return np.empty(0)
    roots = np.sort(np.asarray(roots))
    # merge duplicates, including the wrap-around at 2 pi
    merged = [roots[0]]
    for r in roots[1:]:
        if r - merged[-1] > 1e-9:
            merged.append(r)
    if len(merged) > 1 and merged[0] + TWO_PI - merged[-1] <= 1e-9:
        merged.pop()
    out = np.asarray(merged)
    out[out >= TWO_PI] -= TWO_PI
    return out


def global_abs_maxima(series: SineSeries, rtol: float = MAXIMA_RTOL) -> tuple[np.ndarray, float]:
    """Positions in ``[0, pi)`` where ``|f|`` reaches its global maximum, and that maximum.

    All positions whose value lies within ``rtol`` (relative) of the maximum are
    returned, sorted ascending.
    """
    kappa = series.coeffs
    if not np.any(kappa):
        raise ValueError("degenerate series")
    mu = np.asarray(series.spectrum.mu)
    nu = int(mu[-1])
    dcos = np.zeros(nu + 1)
    dcos[mu] = kappa * mu
    dsin = np.zeros(nu + 1)
    crit = real_roots_on_period(dcos, dsin)
    # |f(x)| = |f(2 pi - x)|, so fold into [0, pi]
    crit = np.where(crit > np.pi, TWO_PI - crit, crit)
    crit = crit[(crit > 0.0) & (crit < np.pi)]
    if len(crit) == 0:
        raise RuntimeError("no interior critical point found")
    vals = np.abs(series(crit))
    vmax = float(vals.max())
    keep = np.sort(crit[vals >= vmax * (1.0 - rtol)])
    pos = [keep[0]]
    for x in keep[1:]:
        if x - pos[-1] > 1e-9:
            pos.append(x)
    return np.asarray(pos), vmax
