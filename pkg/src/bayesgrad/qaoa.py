"""Statevector simulation of the QAOA MaxCut ansatz.

Conventions
-----------
``theta`` has length ``2L``.  Even indices are mixer angles ``beta``, odd
indices cost angles ``gamma``; layer ``alpha`` owns ``(theta[2a], theta[2a+1])``.
Within a layer the cost unitary acts first::

    |theta> = ... U_b(theta[2]) U_c(theta[3]) U_b(theta[0]) U_c(theta[1]) |+>^N

with ``U_c(g) = exp(-i g H_c)``, ``H_c = -cut`` (diagonal) and
``U_b(b) = exp(-i b H_b)``, ``H_b = -1/2 sum_j X_j``.  The cost function is
``F = <theta| H_c |theta>``, so minimising ``F`` maximises the expected cut.

Bit ``j`` of the basis index ``z`` is the side of vertex ``j``.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import trigcore
from ._rng import make_rng
from .allocators import GeneratorDecomposition
from .trigcore import FourierModel, FrequencySpectrum

MAX_QUBITS = 24

LAYER_SHIFT = "layer_shift"
GENERATOR_INSERT = "generator_insert"


@dataclass(frozen=True)
class Graph:
    n_vertices: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        n = int(self.n_vertices)
        if n < 1:
            raise ValueError("graph needs at least one vertex")
        edges = []
        for e in self.edges:
            i, j = sorted(int(v) for v in e)
            if not 0 <= i < j < n:
                raise ValueError(f"bad edge {tuple(e)} for {n} vertices")
            edges.append((i, j))
        edges = tuple(sorted(edges))
        if len(set(edges)) != len(edges):
            raise ValueError("duplicate edges")
        object.__setattr__(self, "n_vertices", n)
        object.__setattr__(self, "edges", edges)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def to_dict(self) -> dict:
        return {"n": self.n_vertices, "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, d: dict) -> "Graph":
        return cls(int(d["n"]), tuple(tuple(e) for e in d["edges"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "Graph":
        return cls.from_dict(json.loads(s))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Graph":
        with open(path) as fh:
            return cls.from_json(fh.read())


def random_graph(n_vertices: int, seed=0) -> Graph:
    """``2N`` distinct edges drawn uniformly without replacement."""
    n = int(n_vertices)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if len(pairs) < 2 * n:
        raise ValueError(f"N={n} has only {len(pairs)} vertex pairs, need {2 * n}")
    rng = make_rng(seed, "graph", n)
    idx = rng.choice(len(pairs), size=2 * n, replace=False)
    return Graph(n, tuple(pairs[k] for k in idx))


@functools.lru_cache(maxsize=64)
def _cut_table(graph: Graph) -> np.ndarray:
    n = graph.n_vertices
    z = np.arange(1 << n, dtype=np.int64)
    cut = np.zeros(1 << n, dtype=np.int64)
    for i, j in graph.edges:
        cut += ((z >> i) ^ (z >> j)) & 1
    cut.setflags(write=False)
    return cut


def cut_values(graph: Graph) -> np.ndarray:
    """Number of cut edges for every basis labelling ``z``."""
    if graph.n_vertices > MAX_QUBITS:
        raise ValueError(f"N={graph.n_vertices} exceeds the {MAX_QUBITS}-qubit limit")
    return _cut_table(graph)


def maxcut_value(graph: Graph) -> int:
    return int(cut_values(graph).max())


@functools.lru_cache(maxsize=64)
def _edge_cut(graph: Graph, e: int) -> np.ndarray:
    i, j = graph.edges[e]
    z = np.arange(1 << graph.n_vertices, dtype=np.int64)
    return (((z >> i) ^ (z >> j)) & 1).astype(float)


# --- parameters and requests ----------------------------------------------------


@dataclass(frozen=True)
class CircuitParams:
    theta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=float).reshape(-1)
        if len(t) == 0 or len(t) % 2:
            raise ValueError("theta needs even length 2L with L >= 1")
        if not np.all(np.isfinite(t)):
            raise ValueError("theta must be finite")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)

    @property
    def n_layers(self) -> int:
        return len(self.theta) // 2

    def __len__(self):
        return len(self.theta)

    def __hash__(self):
        return hash(self.theta.tobytes())

    def __eq__(self, other):
        return isinstance(other, CircuitParams) and np.array_equal(self.theta, other.theta)


def layer_kind(layer: int) -> str:
    return "mixer" if layer % 2 == 0 else "cost"


def time_order(n_params: int) -> list[int]:
    """Parameter indices in the order their unitaries act."""
    order = []
    for a in range(n_params // 2):
        order += [2 * a + 1, 2 * a]
    return order


@dataclass(frozen=True)
class EvalRequest:
    kind: str
    layer: int
    shift: float
    generator: int | None = None

    def __post_init__(self):
        if self.kind not in (LAYER_SHIFT, GENERATOR_INSERT):
            raise ValueError(f"unknown request kind {self.kind!r}")
        if self.layer < 0:
            raise ValueError("layer index must be nonnegative")
        if self.kind == GENERATOR_INSERT and self.generator is None:
            raise ValueError("generator insertion needs a generator index")
        if self.kind == LAYER_SHIFT and self.generator is not None:
            raise ValueError("layer shifts take no generator index")


def _check_request(req: EvalRequest | None, graph: Graph, n_params: int):
    if req is None:
        return
    if req.layer >= n_params:
        raise ValueError(f"layer {req.layer} out of range for {n_params} parameters")
    if req.kind == GENERATOR_INSERT:
        n_gen = graph.n_vertices if layer_kind(req.layer) == "mixer" else graph.n_edges
        if not 0 <= req.generator < n_gen:
            raise ValueError(f"generator {req.generator} out of range ({n_gen})")


# --- gates ---------------------------------------------------------------------


@dataclass
class StateVector:
    amplitudes: np.ndarray

    @property
    def n_qubits(self) -> int:
        return int(np.log2(len(self.amplitudes)))

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def plus_state(n: int) -> np.ndarray:
    return np.full(1 << n, 1.0 / np.sqrt(1 << n), dtype=complex)


def _rx_all(psi: np.ndarray, n: int, beta: float) -> np.ndarray:
    """``exp(i beta/2 sum_j X_j)`` applied qubit by qubit."""
    c, s = np.cos(beta / 2), 1j * np.sin(beta / 2)
    for q in range(n):
        _rx_one(psi, n, q, c, s)
    return psi


def _rx_one(psi, n, q, c, s):
    v = psi.reshape(1 << (n - q - 1), 2, 1 << q)
    a = v[:, 0, :].copy()
    b = v[:, 1, :]
    v[:, 0, :] = c * a + s * b
    v[:, 1, :] = s * a + c * b


def _sum_x(psi: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros_like(psi)
    for q in range(n):
        out += psi.reshape(1 << (n - q - 1), 2, 1 << q)[:, ::-1, :].reshape(-1)
    return out


def _apply_layer(psi, graph, cut, layer, angle):
    if layer % 2:
        psi *= np.exp(1j * angle * cut)
    else:
        _rx_all(psi, graph.n_vertices, angle)
    return psi


def _apply_insert(psi, graph, req: EvalRequest):
    # exp(-i x zeta_i H_i): mixer zeta=+1, H=(1-X_j)/2; cost zeta=-1, H=cut_e
    if layer_kind(req.layer) == "mixer":
        _rx_one(psi, graph.n_vertices, req.generator, np.cos(req.shift / 2), 1j * np.sin(req.shift / 2))
    else:
        psi *= np.exp(1j * req.shift * _edge_cut(graph, req.generator))
    return psi


def generator_decomposition(graph: Graph, layer: int) -> GeneratorDecomposition:
    """Two-level generators of a layer: ``zeta = +1`` per qubit or ``-1`` per edge."""
    if layer_kind(layer) == "mixer":
        return GeneratorDecomposition(np.ones(graph.n_vertices))
    return GeneratorDecomposition(-np.ones(graph.n_edges))


def _run(psi, graph, theta, steps, req):
    cut = cut_values(graph).astype(float)
    for l in steps:
        angle = theta[l]
        if req is not None and req.kind == LAYER_SHIFT and req.layer == l:
            angle = angle + req.shift
        _apply_layer(psi, graph, cut, l, angle)
        if req is not None and req.kind == GENERATOR_INSERT and req.layer == l:
            _apply_insert(psi, graph, req)
    return psi


def prepare_state(graph: Graph, params: CircuitParams, request: EvalRequest | None = None) -> StateVector:
    _check_request(request, graph, len(params))
    psi = plus_state(graph.n_vertices)
    return StateVector(_run(psi, graph, params.theta, time_order(len(params)), request))


def expectation(state: StateVector, graph: Graph) -> float:
    return float(-(state.probabilities() @ cut_values(graph)))


def _moments_from_counts(values, counts, shots):
    mean = float(values @ counts) / shots
    if shots == 1:
        return mean, 0.0
    var = float(((values - mean) ** 2) @ counts) / (shots - 1)
    return mean, var


def cut_distribution(state: StateVector, graph: Graph) -> np.ndarray:
    """Probability of each cut value ``0..MaxCut``."""
    cut = cut_values(graph)
    return np.bincount(cut, weights=state.probabilities(), minlength=int(cut.max()) + 1)


def sample_from_distribution(dist: np.ndarray, shots: int, rng) -> tuple[float, float]:
    """Mean and unbiased variance of ``-cut`` over ``shots`` draws."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = np.clip(dist, 0.0, None)
    p = p / p.sum()
    counts = rng.multinomial(shots, p)
    return _moments_from_counts(-np.arange(len(p), dtype=float), counts, shots)


def sample_measurement(state: StateVector, graph: Graph, shots: int, rng) -> tuple[float, float]:
    return sample_from_distribution(cut_distribution(state, graph), shots, make_rng(rng))


# --- exact oracles -------------------------------------------------------------


def exact_gradient(graph: Graph, params: CircuitParams) -> np.ndarray:
    """All ``dF/dtheta_l`` by one forward and one backward sweep."""
    n = graph.n_vertices
    cut = cut_values(graph).astype(float)
    theta = params.theta
    steps = time_order(len(theta))
    phi = _run(plus_state(n), graph, theta, steps, None)
    lam = -cut * phi
    grad = np.zeros(len(theta))
    for l in reversed(steps):
        # dF/dtheta = 2 Im <lam| G |phi> with G = -cut or -1/2 sum X
        if l % 2:
            g_phi = -cut * phi
        else:
            g_phi = -0.5 * _sum_x(phi, n)
        grad[l] = 2.0 * np.vdot(lam, g_phi).imag
        _apply_layer(phi, graph, cut, l, -theta[l])
        _apply_layer(lam, graph, cut, l, -theta[l])
    return grad


def layer_nu(graph: Graph, layer: int) -> int:
    return graph.n_vertices if layer_kind(layer) == "mixer" else maxcut_value(graph)


@functools.lru_cache(maxsize=64)
def _cost_frequencies(graph: Graph) -> tuple[int, ...]:
    present = np.flatnonzero(np.bincount(cut_values(graph)))
    diffs = np.unique(np.abs(np.subtract.outer(present, present)))
    return tuple(int(d) for d in diffs if d > 0)


def layer_spectrum(graph: Graph, layer: int) -> FrequencySpectrum:
    """Frequencies that can appear in ``F`` as a function of ``theta[layer]``.

    Mixer: even ``2..N`` (the circuit stays in the even-parity sector).
    Cost: achievable positive differences of cut values.
    """
    if layer_kind(layer) == "mixer":
        if graph.n_vertices < 2:
            raise ValueError("mixer layer of a one-vertex graph has no frequencies")
        return FrequencySpectrum(tuple(range(2, graph.n_vertices + 1, 2)))
    freqs = _cost_frequencies(graph)
    if not freqs:
        raise ValueError("cost layer of an edgeless graph has no frequencies")
    return FrequencySpectrum(freqs)


def exact_fourier_scan(graph: Graph, params: CircuitParams, layer: int) -> FourierModel:
    """Exact Fourier model of ``x -> F(theta + x e_layer)`` on frequencies ``1..nu``."""
    nu = layer_nu(graph, layer)
    ev = CircuitEvaluator(graph, params)
    vals = [ev.expectation(EvalRequest(LAYER_SHIFT, layer, float(x))) for x in trigcore.fourier_grid(nu)]
    return trigcore.exact_fourier_coeffs(vals, nu)


def restrict_model(model: FourierModel, spectrum: FrequencySpectrum) -> FourierModel:
    """Keep only the coefficients on ``spectrum`` (a subset of ``1..nu``)."""
    idx = np.asarray(spectrum.mu) - 1
    return FourierModel(spectrum, model.a[idx], model.b[idx], model.b0)


# --- cached evaluation -----------------------------------------------------------


class CircuitEvaluator:
    """Evaluations of one ``(graph, theta)`` with cached prefix states.

    Shifted or inserted evaluations restart from the state just before the
    targeted layer, and the resulting cut-value distributions are memoised.
    """

    def __init__(self, graph: Graph, params: CircuitParams, cache_size: int = 4096):
        self.graph = graph
        self.params = params
        self._steps = time_order(len(params))
        self._pos = {l: t for t, l in enumerate(self._steps)}
        self._prefix = None
        self._dists: dict = {}
        self._cache_size = cache_size

    def _prefixes(self):
        if self._prefix is None:
            psi = plus_state(self.graph.n_vertices)
            cut = cut_values(self.graph).astype(float)
            pre = [psi.copy()]
            for l in self._steps:
                _apply_layer(psi, self.graph, cut, l, self.params.theta[l])
                pre.append(psi.copy())
            self._prefix = pre
        return self._prefix

    def state(self, request: EvalRequest | None = None) -> StateVector:
        _check_request(request, self.graph, len(self.params))
        pre = self._prefixes()
        if request is None:
            return StateVector(pre[-1].copy())
        t = self._pos[request.layer]
        psi = pre[t].copy()
        return StateVector(_run(psi, self.graph, self.params.theta, self._steps[t:], request))

    def distribution(self, request: EvalRequest | None = None) -> np.ndarray:
        key = None if request is None else (request.kind, request.layer, float(request.shift), request.generator)
        d = self._dists.get(key)
        if d is None:
            d = cut_distribution(self.state(request), self.graph)
            if len(self._dists) < self._cache_size:
                self._dists[key] = d
        return d

    def expectation(self, request: EvalRequest | None = None) -> float:
        d = self.distribution(request)
        return float(-(np.arange(len(d)) @ d))

    def sample(self, request: EvalRequest | None, shots: int, rng) -> tuple[float, float]:
        return sample_from_distribution(self.distribution(request), shots, rng)
