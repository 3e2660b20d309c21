"""Conformal metrics ``exp(2 f) |dq|^2`` on the torus ``T^2 = R^2 / Z^2`` and their geodesic flows.

The geodesic flow is the Hamiltonian flow of ``H(q, p) = exp(-2 f(q)) |p|^2 / 2``
on the unit level ``H = 1/2``.  Conformal factors are finite cosine series
``sum c cos(2 pi k . q + phase)``, truncated Weierstrass sums (continuous data
only), or mollifications of either.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels as K
from .entropy import EntropyEstimate, ensemble, finalize
from .errors import InvalidSpecError, PreconditionError, ResolutionError, UnsupportedOperationError
from .integrate import FlowConfig, run_system

# --------------------------------------------------------------------------
# conformal factors
# --------------------------------------------------------------------------


class Factor:
    differentiable = True
    kind_name = ""

    def modes(self):
        """``(coefficients, frequencies (n, 2), phases)`` of the cosine expansion."""
        raise NotImplementedError

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        tc, tk, tp = self.modes()
        return np.cos(2 * np.pi * (q @ tk.T) + tp) @ tc

    def shifted(self, c: float) -> "Factor":
        raise NotImplementedError


def _norm_terms(terms):
    out = []
    for t in terms:
        coef, freq = t[0], t[1]
        phase = t[2] if len(t) > 2 else 0.0
        freq = tuple(int(k) for k in freq)
        if len(freq) != 2:
            raise InvalidSpecError("torus frequencies are pairs of integers")
        if not (math.isfinite(coef) and math.isfinite(phase)):
            raise InvalidSpecError("Fourier coefficients must be finite")
        out.append((float(coef), freq, float(phase)))
    return tuple(out)


@dataclass(frozen=True)
class FourierFactor(Factor):
    terms: tuple = ()
    kind_name = "fourier"

    def __post_init__(self):
        object.__setattr__(self, "terms", _norm_terms(self.terms))

    @classmethod
    def constant(cls, c: float) -> "FourierFactor":
        return cls(((c, (0, 0), 0.0),))

    @cached_property
    def _modes(self):
        if not self.terms:
            return np.zeros(0), np.zeros((0, 2)), np.zeros(0)
        return (
            np.array([t[0] for t in self.terms]),
            np.array([t[1] for t in self.terms], dtype=float),
            np.array([t[2] for t in self.terms]),
        )

    def modes(self):
        return self._modes

    def shifted(self, c):
        return FourierFactor(self.terms + ((c, (0, 0), 0.0),))


@dataclass(frozen=True)
class WeierstrassFactor(Factor):
    """``offset + amplitude * sum_{n<K} a^n (cos(2 pi b^n q1) + cos(2 pi b^n q2))``.

    With ``a b > 1`` the K -> infinity limit is nowhere differentiable; the
    truncation is treated as C^0 data and exposes no derivatives.
    """

    a: float
    b: int
    K: int
    amplitude: float = 1.0
    offset: float = 0.0
    kind_name = "weierstrass"
    differentiable = False

    def __post_init__(self):
        if not 0 < self.a < 1:
            raise InvalidSpecError("Weierstrass parameter a must lie in (0, 1)")
        if int(self.b) != self.b or self.b < 2:
            raise InvalidSpecError("Weierstrass parameter b must be an integer >= 2")
        if self.a * self.b <= 1:
            raise InvalidSpecError("Weierstrass parameters need a*b > 1")
        if int(self.K) != self.K or self.K < 1:
            raise InvalidSpecError("term count K must be a positive integer")
        object.__setattr__(self, "b", int(self.b))
        object.__setattr__(self, "K", int(self.K))

    def modes(self):
        n = np.arange(self.K)
        coef = self.amplitude * self.a**n
        freq = (self.b**n).astype(float)
        tc = np.concatenate([coef, coef, [self.offset]])
        tk = np.zeros((2 * self.K + 1, 2))
        tk[: self.K, 0] = freq
        tk[self.K : 2 * self.K, 1] = freq
        return tc, tk, np.zeros(2 * self.K + 1)

    def sup_bound(self) -> float:
        return abs(self.offset) + 2 * abs(self.amplitude) * (1 - self.a**self.K) / (1 - self.a)

    def shifted(self, c):
        return WeierstrassFactor(self.a, self.b, self.K, self.amplitude, self.offset + c)


def bump_multiplier(k, sigma: float, nodes: int) -> np.ndarray:
    """Fourier multiplier ``int psi_sigma(s) cos(2 pi k s) ds`` of the normalized bump.

    ``psi(s) ~ exp(-1 / (1 - (s/sigma)^2))`` on ``(-sigma, sigma)``; Gauss-Legendre
    quadrature with ``nodes`` points.
    """
    x, w = np.polynomial.legendre.leggauss(nodes)
    bump = np.exp(-1.0 / (1.0 - x * x))
    bump /= np.sum(w * bump)
    k = np.atleast_1d(np.asarray(k, dtype=float))
    return np.cos(2 * np.pi * np.outer(k, sigma * x)) @ (w * bump)


@dataclass(frozen=True)
class MollifiedFactor(Factor):
    """Periodic convolution of ``base`` with the tensor bump ``psi_sigma(s1) psi_sigma(s2)``.

    The convolution acts on each cosine mode by the product of the 1-D bump
    multipliers at its two frequencies, evaluated by quadrature with
    ``resolution`` nodes; a half-resolution rerun certifies the quadrature.
    """

    base: Factor
    sigma: float
    resolution: int = 256
    kind_name = "mollified"

    def __post_init__(self):
        if not 0 < self.sigma < 0.5:
            raise InvalidSpecError("mollification scale must lie in (0, 1/2)")
        if self.resolution < 8:
            raise InvalidSpecError("quadrature resolution must be at least 8")

    @cached_property
    def _modes(self):
        tc, tk, tp = self.base.modes()
        m = bump_multiplier(tk[:, 0], self.sigma, self.resolution) * bump_multiplier(
            tk[:, 1], self.sigma, self.resolution
        )
        half = self.resolution // 2
        m_half = bump_multiplier(tk[:, 0], self.sigma, half) * bump_multiplier(tk[:, 1], self.sigma, half)
        if np.max(np.abs(m - m_half) * np.abs(tc), initial=0.0) > 1e-10:
            raise ResolutionError(
                f"quadrature with {self.resolution} nodes does not resolve the bump at sigma={self.sigma}"
            )
        return tc * m, tk, tp

    def modes(self):
        return self._modes

    def shifted(self, c):
        return MollifiedFactor(self.base.shifted(c), self.sigma, self.resolution)


@dataclass(frozen=True)
class ConformalMetric:
    factor: Factor
    name: str = ""

    @property
    def differentiable(self) -> bool:
        return self.factor.differentiable

    @cached_property
    def packed(self):
        """Kernel argument tuple; frequencies padded to four columns."""
        tc, tk, tp = self.factor.modes()
        tk4 = np.zeros((len(tc), 4))
        tk4[:, :2] = tk
        return (0, -1, np.zeros(3), np.zeros((1, 4)), np.ascontiguousarray(tc, dtype=float), tk4,
                np.ascontiguousarray(tp, dtype=float))

    def factor_derivatives(self, q):
        """``(f, grad f, Hess f)`` at point(s) ``q``."""
        self._require_smooth()
        q = np.asarray(q, dtype=float)
        _, _, _, _, tc, tk, tp = self.packed
        vals, grads, hess = K.factor_eval_many(tc, tk, tp, np.ascontiguousarray(np.atleast_2d(q)))
        if q.ndim == 1:
            return float(vals[0]), grads[0], hess[0]
        return vals, grads, hess

    def _require_smooth(self):
        if not self.differentiable:
            raise UnsupportedOperationError(f"{self.factor.kind_name} factor has no derivatives")


def flat_metric() -> ConformalMetric:
    return ConformalMetric(FourierFactor(()), "flat")


# --------------------------------------------------------------------------
# dynamics
# --------------------------------------------------------------------------


def hamiltonian(metric: ConformalMetric, state):
    state = np.asarray(state, dtype=float)
    f = metric.factor(state[..., :2])
    return 0.5 * np.exp(-2.0 * f) * np.sum(state[..., 2:4] ** 2, axis=-1)


def geodesic_field(metric: ConformalMetric, state):
    """``(q', p') = (exp(-2f) p, |p|^2 exp(-2f) grad f)`` at state(s) ``(q1, q2, p1, p2)``."""
    state = np.asarray(state, dtype=float)
    s = np.atleast_2d(state)
    f, g, _ = metric.factor_derivatives(s[:, :2])
    e = np.exp(-2.0 * f)[:, None]
    p = s[:, 2:4]
    pp = np.sum(p * p, axis=1, keepdims=True)
    out = np.hstack([e * p, pp * e * g])
    return out[0] if state.ndim == 1 else out


def unit_state(metric: ConformalMetric, q, angle) -> np.ndarray:
    """State on ``H = 1/2`` at position ``q`` with momentum direction ``angle``."""
    q = np.asarray(q, dtype=float)
    r = math.exp(float(metric.factor(q)))
    return np.array([q[0], q[1], r * math.cos(angle), r * math.sin(angle)])


def _level_differential(metric, state):
    f, g, _ = metric.factor_derivatives(state[:2])
    e = math.exp(-2.0 * f)
    pp = float(state[2] ** 2 + state[3] ** 2)
    return np.concatenate([-e * pp * g, e * state[2:4]])


def integrate_geodesic(metric: ConformalMetric, state0, config: FlowConfig = FlowConfig(), v0=None, t_out=None):
    """Integrate the geodesic flow (and optionally its tangent flow) from ``state0``.

    Returns the raw kernel output ``(rows, log increments, final state, counters, stats)``.
    """
    metric._require_smooth()
    y0 = np.asarray(state0, dtype=float)
    if v0 is not None:
        y0 = np.concatenate([y0, v0])
    rec, out, logs, y_last, counters, stats = run_system(
        K.SYS_GEODESIC, metric.packed, y0, config.T, config, 0.5, 0.0, t_out, t_out is None
    )
    return (rec if t_out is None else out), logs, y_last, counters, stats


# --------------------------------------------------------------------------
# area, sandwich, mollification
# --------------------------------------------------------------------------


def torus_grid(n: int) -> np.ndarray:
    s = np.arange(n) / n
    q1, q2 = np.meshgrid(s, s, indexing="ij")
    return np.column_stack([q1.ravel(), q2.ravel()])


@dataclass(frozen=True)
class AreaReport:
    value: float
    resolution: int
    refinement: dict = field(default_factory=dict)


def metric_area(metric: ConformalMetric, resolution: int = 1024) -> AreaReport:
    """``int exp(2 f) dq`` by the periodic trapezoid rule, also at half resolution."""
    vals = {}
    for n in (max(2, resolution // 2), resolution):
        vals[n] = float(np.mean(np.exp(2.0 * metric.factor(torus_grid(n)))))
    return AreaReport(vals[resolution], resolution, vals)


def normalize_area(metric: ConformalMetric, resolution: int = 1024) -> ConformalMetric:
    """Shift the factor by ``-log(area)/2`` so the metric has unit area."""
    area = metric_area(metric, resolution).value
    return ConformalMetric(metric.factor.shifted(-0.5 * math.log(area)), metric.name)


def sup_distance(a: ConformalMetric, b: ConformalMetric, resolution: int = 512) -> float:
    q = torus_grid(resolution)
    return float(np.max(np.abs(a.factor(q) - b.factor(q))))


@dataclass(frozen=True)
class SandwichResult:
    passed: bool
    margin: float

    def __bool__(self):
        return self.passed


def sandwich_check(g: ConformalMetric, g_prime: ConformalMetric, delta: float, resolution: int = 512) -> SandwichResult:
    """Grid test of ``exp(-2 delta) g < g' < exp(2 delta) g``, i.e. ``|f' - f| < delta``."""
    if not delta > 0:
        raise PreconditionError("delta must be positive")
    margin = delta - sup_distance(g, g_prime, resolution)
    return SandwichResult(margin > 0, margin)


def mollify_sequence(
    base: ConformalMetric, scales: Sequence[float], grid: int = 512, quad_resolution: int = 256
) -> list[ConformalMetric]:
    """Mollifications of ``base`` at strictly decreasing scales.

    The grid sup-distance to the base factor must strictly decrease along
    the list; otherwise the grid cannot certify the sequence.
    """
    scales = list(scales)
    if not scales or any(s <= 0 for s in scales):
        raise PreconditionError("scales must be positive")
    if any(b >= a for a, b in zip(scales, scales[1:])):
        raise PreconditionError("scales must be strictly decreasing")
    out = [ConformalMetric(MollifiedFactor(base.factor, s, quad_resolution), f"{base.name}*psi_{s:g}") for s in scales]
    dists = [sup_distance(m, base, grid) for m in out]
    # a decrease at round-off level certifies nothing
    floor = 64 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(base.factor(torus_grid(grid))))))
    for j in range(1, len(dists)):
        if not dists[j] < dists[j - 1] - floor:
            raise ResolutionError(
                f"grid {grid} does not certify decreasing sup-distance at scale index {j}: "
                f"{dists[j]} >= {dists[j - 1]}"
            )
    return out


def sigma_star(base: ConformalMetric, delta: float, grid: int = 512, lo: float = 1e-6, hi: float = 0.1,
               iterations: int = 30, quad_resolution: int = 256) -> float:
    """Largest scale (to bisection accuracy) whose mollification stays ``delta``-sandwiched."""

    def ok(s):
        moll = ConformalMetric(MollifiedFactor(base.factor, s, quad_resolution))
        return sandwich_check(base, moll, delta, grid).passed

    if not ok(lo):
        raise ResolutionError(f"even sigma={lo} fails the delta={delta} sandwich")
    if ok(hi):
        return hi
    for _ in range(iterations):
        mid = math.sqrt(lo * hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


# --------------------------------------------------------------------------
# entropy
# --------------------------------------------------------------------------


def geodesic_entropy(
    metric: ConformalMetric,
    config: FlowConfig = FlowConfig(T=1000.0),
    N: int = 10,
    seed: int = 0,
    workers: int = 1,
) -> EntropyEstimate:
    """Lyapunov ensemble on the unit level, starts uniform in position and momentum angle."""
    metric._require_smooth()
    if N < 2:
        raise PreconditionError("ensemble size must be at least 2")

    def task(i, rng):
        q = rng.uniform(0.0, 1.0, size=2)
        state = unit_state(metric, q, rng.uniform(0.0, 2 * np.pi))
        d = _level_differential(metric, state)
        v = rng.normal(size=4)
        v -= (v @ d) / (d @ d) * d
        v /= np.linalg.norm(v)
        _, logs, _, _, _ = integrate_geodesic(metric, state, config, v0=v)
        return float(math.fsum(logs)) / config.T

    results = ensemble(task, N, seed, workers)
    cfg = {"T": config.T, "tau": config.tau, "rtol": config.rtol, "atol": config.atol, "N": N}
    return finalize("lyapunov", results, cfg, seed, {"sampling": "uniform in (q, momentum angle)", "field": "geodesic"})
