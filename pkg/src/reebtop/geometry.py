"""Starshaped bodies in R^4, their radial functions and distances between them.

Coordinates are ordered ``(x1, y1, x2, y2)`` throughout.  Every smooth body
is described by a defining function ``G`` whose level set ``{G = 1}`` is the
hypersurface; the compiled kernels in :mod:`reebtop._kernels` evaluate ``G``
together with its exact gradient and Hessian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Sequence

import numpy as np

from . import _kernels as K
from .errors import (
    ConstructionError,
    DomainError,
    InvalidSpecError,
    PreconditionError,
    StarshapedError,
)

RADIAL_BRACKET = (1e-6, 1e6)
RADIAL_RTOL = 1e-12

_EMPTY_TRIG = (np.zeros(0), np.zeros((0, 4)), np.zeros(0))


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Halfspace:
    """Facet constraint ``normal . x <= offset`` with the origin strictly inside."""

    normal: tuple[float, float, float, float]
    offset: float

    def __post_init__(self):
        n = tuple(float(v) for v in self.normal)
        if len(n) != 4 or not all(math.isfinite(v) for v in n):
            raise InvalidSpecError(f"halfspace normal must have 4 finite entries, got {self.normal!r}")
        if abs(math.sqrt(sum(v * v for v in n)) - 1.0) > 1e-12:
            raise InvalidSpecError("halfspace normal must be a unit vector")
        if not (math.isfinite(self.offset) and self.offset > 0):
            raise InvalidSpecError(f"halfspace offset must be positive, got {self.offset!r}")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_vector(cls, a: Sequence[float], b: float) -> "Halfspace":
        """Build from an unnormalized constraint ``a . x <= b``."""
        a = np.asarray(a, dtype=float)
        na = float(np.linalg.norm(a))
        if na == 0.0:
            raise InvalidSpecError("halfspace normal must be nonzero")
        return cls(tuple(a / na), b / na)


def cube_facets() -> tuple[Halfspace, ...]:
    """The eight facets of ``[-1, 1]^4``."""
    out = []
    for i in range(4):
        for sign in (1.0, -1.0):
            n = [0.0] * 4
            n[i] = sign
            out.append(Halfspace(tuple(n), 1.0))
    return tuple(out)


@dataclass(frozen=True)
class TrigPolynomial:
    """Finite sum ``sum_j c_j cos(k_j . u + phase_j)`` of the direction ``u = x/|x|``.

    ``terms`` holds ``(coefficient, frequency, phase)`` with integer
    frequencies in Z^4.
    """

    terms: tuple = ()

    def __post_init__(self):
        norm = []
        for term in self.terms:
            if len(term) == 2:
                coef, freq = term
                phase = 0.0
            else:
                coef, freq, phase = term
            freq = tuple(int(k) for k in freq)
            if len(freq) != 4:
                raise InvalidSpecError("trig frequencies are multi-indices in Z^4")
            if not (math.isfinite(coef) and math.isfinite(phase)):
                raise InvalidSpecError("trig coefficients must be finite")
            norm.append((float(coef), freq, float(phase)))
        object.__setattr__(self, "terms", tuple(norm))

    @classmethod
    def constant(cls, c: float) -> "TrigPolynomial":
        return cls(((c, (0, 0, 0, 0), 0.0),))

    @cached_property
    def arrays(self):
        if not self.terms:
            return _EMPTY_TRIG
        tc = np.array([t[0] for t in self.terms], dtype=float)
        tk = np.array([t[1] for t in self.terms], dtype=float)
        tp = np.array([t[2] for t in self.terms], dtype=float)
        return tc, tk, tp

    def __call__(self, x):
        """Evaluate at ``x`` (any nonzero point; only its direction matters)."""
        x = np.asarray(x, dtype=float)
        u = x / np.linalg.norm(x, axis=-1, keepdims=True)
        tc, tk, tp = self.arrays
        return np.cos(u @ tk.T + tp) @ tc

    def gradient(self, x):
        """Gradient in R^4 of ``x -> f(x/|x|)`` (tangent to the sphere)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=1, keepdims=True)
        u = x / r
        tc, tk, tp = self.arrays
        gu = -(np.sin(u @ tk.T + tp) * tc) @ tk
        g = (gu - np.sum(gu * u, axis=1, keepdims=True) * u) / r
        return g

    def sup_bound(self) -> float:
        return float(sum(abs(t[0]) for t in self.terms))


# --------------------------------------------------------------------------
# bodies
# --------------------------------------------------------------------------


class Body:
    """Common interface; subclasses are frozen dataclasses."""

    kind_name = ""
    degree = 0.0
    smooth = True

    @cached_property
    def packed(self):
        raise NotImplementedError

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != 4:
            raise DomainError(f"points must live in R^4, got shape {x.shape}")
        return x

    def evaluate(self, x):
        """Return ``(G, grad G, Hess G)`` for one point or an ``(n, 4)`` array."""
        x = self._check(x)
        pts = np.ascontiguousarray(np.atleast_2d(x))
        vals, grads, hess = K.body_eval_many(*self.packed, pts)
        if x.ndim == 1:
            return float(vals[0]), grads[0], hess[0]
        return vals, grads, hess


def _pack(kind, base_kind=-1, scal=(0.0, 0.0, 0.0), mat=None, trig=_EMPTY_TRIG):
    mat = np.zeros((1, 4)) if mat is None else np.ascontiguousarray(mat, dtype=float)
    return (kind, base_kind, np.asarray(scal, dtype=float), mat, *trig)


@dataclass(frozen=True)
class PNormCube(Body):
    """``H_p(x) = |x1|^p + |y1|^p + |x2|^p + |y2|^p`` for even ``p``."""

    p: int
    kind_name = "pnorm_cube"

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 2 or self.p % 2:
            raise InvalidSpecError(f"p must be an even integer >= 2, got {self.p!r}")
        object.__setattr__(self, "p", int(self.p))

    @property
    def degree(self):
        return float(self.p)

    @cached_property
    def packed(self):
        return _pack(K.KIND_PNORM_CUBE, scal=(self.p, self.p, 0.0))


@dataclass(frozen=True)
class Quadric(Body):
    """``G(x) = x^T A x`` with ``A`` symmetric positive definite."""

    matrix: tuple
    kind_name = "quadric"
    degree = 2.0

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=float)
        if a.shape != (4, 4) or not np.all(np.isfinite(a)):
            raise InvalidSpecError("quadric needs a finite 4x4 matrix")
        if not np.allclose(a, a.T, rtol=0, atol=1e-14 * max(1.0, np.abs(a).max())):
            raise InvalidSpecError("quadric matrix must be symmetric")
        if np.linalg.eigvalsh(a).min() <= 0:
            raise InvalidSpecError("quadric matrix must be positive definite")
        object.__setattr__(self, "matrix", tuple(tuple(float(v) for v in row) for row in a))

    @classmethod
    def diagonal(cls, *d):
        return cls(tuple(tuple(np.diag(d).tolist())))

    @cached_property
    def packed(self):
        return _pack(K.KIND_QUADRIC, scal=(0.0, 2.0, 0.0), mat=np.array(self.matrix))


def _is_symmetric(halfspaces) -> bool:
    keys = {(tuple(np.round(h.normal, 12)), round(h.offset, 12)) for h in halfspaces}
    for h in halfspaces:
        neg = tuple(np.round(-np.array(h.normal), 12) + 0.0)
        if (neg, round(h.offset, 12)) not in keys:
            return False
    return True


def _facet_matrix(halfspaces) -> np.ndarray:
    return np.array([np.array(h.normal) / h.offset for h in halfspaces])


@dataclass(frozen=True)
class SmoothedPolytope(Body):
    """Smooth approximation of ``max_i (a_i . x) / b_i`` over the facets.

    ``scheme="pnorm"``: ``(sum_i ((a_i.x)/b_i)_+^q)^(1/q)``, 1-homogeneous.
    ``scheme="log-sum-exp"``: ``beta^-1 log sum_i exp(beta (a_i.x)/b_i) - beta^-1 log m``,
    which lies within ``log(m)/beta`` below the max.
    """

    halfspaces: tuple
    sharpness: float
    scheme: str = "pnorm"
    kind_name = "smoothed_polytope"

    def __post_init__(self):
        hs = tuple(self.halfspaces)
        if len(hs) < 5:
            raise InvalidSpecError("a bounded polytope in R^4 needs at least 5 facets")
        if not all(isinstance(h, Halfspace) for h in hs):
            raise InvalidSpecError("halfspaces must be Halfspace instances")
        object.__setattr__(self, "halfspaces", hs)
        if self.scheme == "pnorm":
            q = self.sharpness
            if int(q) != q or q % 2:
                raise InvalidSpecError(f"p-norm sharpness must be an even integer, got {q!r}")
            # (t_+)^2 is only C^1 unless facets come in opposite pairs
            if q < 4 and not (q == 2 and _is_symmetric(hs)):
                raise InvalidSpecError(
                    "p-norm sharpness must be >= 4 (2 is allowed for centrally symmetric polytopes)"
                )
            object.__setattr__(self, "sharpness", int(q))
        elif self.scheme == "log-sum-exp":
            if not (math.isfinite(self.sharpness) and self.sharpness > 0):
                raise InvalidSpecError("log-sum-exp sharpness must be positive")
            object.__setattr__(self, "sharpness", float(self.sharpness))
        else:
            raise InvalidSpecError(f"unknown smoothing scheme {self.scheme!r}")
        if np.linalg.matrix_rank(_facet_matrix(hs)) < 4:
            raise InvalidSpecError("facet normals must span R^4")

    @property
    def degree(self):
        return 1.0 if self.scheme == "pnorm" else 0.0

    @cached_property
    def packed(self):
        mat = _facet_matrix(self.halfspaces)
        if self.scheme == "pnorm":
            return _pack(K.KIND_POLY_PNORM, scal=(self.sharpness, 1.0, 0.0), mat=mat)
        return _pack(
            K.KIND_POLY_LSE, scal=(self.sharpness, 0.0, math.log(len(self.halfspaces))), mat=mat
        )

    def evaluate(self, x):
        out = super().evaluate(x)
        if self.scheme == "pnorm" and np.any(np.asarray(out[0]) <= 0.0):
            raise DomainError("p-norm smoothing is not differentiable at the origin")
        return out


@dataclass(frozen=True)
class RadialGraph(Body):
    """The image of ``{G_base = 1}`` under ``m -> exp(f(m)/2) m``.

    Defined by ``G(x) = G_base(x) exp(-k f(x/|x|)/2)`` for a ``k``-homogeneous
    base, so ``G`` is again ``k``-homogeneous.
    """

    base: Body
    perturbation: TrigPolynomial
    kind_name = "radial_graph"

    def __post_init__(self):
        if not isinstance(self.base, (PNormCube, Quadric, SmoothedPolytope)) or self.base.degree <= 0:
            raise InvalidSpecError("radial graph base must be a homogeneous smooth body")
        if not isinstance(self.perturbation, TrigPolynomial):
            raise InvalidSpecError("perturbation must be a TrigPolynomial")

    @property
    def degree(self):
        return self.base.degree

    @cached_property
    def packed(self):
        kind, _, scal, mat, *_ = self.base.packed
        return (K.KIND_RADIAL_GRAPH, kind, scal, mat, *self.perturbation.arrays)

    def evaluate(self, x):
        x = self._check(x)
        if np.any(np.linalg.norm(np.atleast_2d(x), axis=1) == 0.0):
            raise DomainError("radial graph defining function is undefined at the origin")
        return super().evaluate(x)


@dataclass(frozen=True)
class Polytope(Body):
    """Non-smooth limit body ``max_i (a_i . x) / b_i``; values and radii only."""

    halfspaces: tuple
    kind_name = "polytope"
    degree = 1.0
    smooth = False

    def __post_init__(self):
        hs = tuple(self.halfspaces)
        if len(hs) < 5 or not all(isinstance(h, Halfspace) for h in hs):
            raise InvalidSpecError("polytope needs at least 5 Halfspace facets")
        object.__setattr__(self, "halfspaces", hs)

    @cached_property
    def facet_matrix(self):
        return _facet_matrix(self.halfspaces)

    def evaluate(self, x):
        raise DomainError("the polytope boundary has no derivatives")

    def value(self, x):
        x = self._check(x)
        return np.max(x @ self.facet_matrix.T, axis=-1)


def cube_limit() -> Polytope:
    return Polytope(cube_facets())


# --------------------------------------------------------------------------
# pointwise operations
# --------------------------------------------------------------------------


def defining_value(body: Body, x):
    if isinstance(body, Polytope):
        v = body.value(x)
        return float(v) if np.ndim(v) == 0 else v
    return body.evaluate(x)[0]


def defining_gradient(body: Body, x):
    return body.evaluate(x)[1]


def defining_hessian(body: Body, x):
    return body.evaluate(x)[2]


def radial_function(body: Body, u):
    """Radius ``rho(u) > 0`` with ``G(rho u) = 1`` for unit direction(s) ``u``."""
    u = np.asarray(u, dtype=float)
    dirs = np.ascontiguousarray(np.atleast_2d(u))
    if dirs.shape[1] != 4:
        raise DomainError("directions must live in R^4")
    if not np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-10):
        raise DomainError("directions must be unit vectors")
    if isinstance(body, Polytope):
        s = dirs @ body.facet_matrix.T
        smax = s.max(axis=1)
        if np.any(smax <= 0):
            raise StarshapedError("polytope is unbounded in some direction")
        rho = 1.0 / smax
    else:
        rho, status = K.radial_many(*body.packed, dirs, *RADIAL_BRACKET, RADIAL_RTOL)
        if np.any(status):
            bad = dirs[np.argmax(status)]
            raise StarshapedError(f"no radial root in {RADIAL_BRACKET} along direction {bad.tolist()}")
    return float(rho[0]) if u.ndim == 1 else rho


def boundary_points(body: Body, dirs) -> np.ndarray:
    return radial_function(body, dirs)[:, None] * dirs


# --------------------------------------------------------------------------
# sphere grids and distances
# --------------------------------------------------------------------------


def _symmetric_directions() -> np.ndarray:
    """Directions with all nonzero entries of equal size (axes, edges, diagonals)."""
    dirs = []
    for support in range(1, 5):
        for signs in product((-1.0, 0.0, 1.0), repeat=4):
            if sum(s != 0 for s in signs) == support:
                dirs.append(np.array(signs) / math.sqrt(support))
    return np.array(dirs)


def sphere_grid(n: int) -> np.ndarray:
    """Deterministic quasi-uniform points on S^3.

    A Kronecker spiral in Hopf coordinates (equal-volume in the polar angle)
    followed by the 80 directions of the hypercube's symmetry orbits, which
    carry the extremes of most distances computed here.
    """
    if n < 1:
        raise ValueError("grid size must be positive")
    # plastic number: g^3 = g + 1
    g = 1.324717957244746
    i = np.arange(n, dtype=float)
    w = (i + 0.5) / n
    eta = np.arcsin(np.sqrt(w))
    xi1 = 2 * np.pi * np.mod(0.5 + i / g, 1.0)
    xi2 = 2 * np.pi * np.mod(0.5 + i / (g * g), 1.0)
    pts = np.column_stack(
        [np.sin(eta) * np.cos(xi1), np.sin(eta) * np.sin(xi1), np.cos(eta) * np.cos(xi2), np.cos(eta) * np.sin(xi2)]
    )
    return np.vstack([pts, _symmetric_directions()])


@dataclass(frozen=True)
class DistanceReport:
    value: float
    resolution: int
    refinement: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __float__(self):
        return self.value

    def as_dict(self):
        return {
            "value": self.value,
            "resolution": self.resolution,
            "refinement": {str(k): v for k, v in sorted(self.refinement.items())},
            **self.details,
        }


def _radial_gap(a: Body, b: Body, n: int) -> float:
    dirs = sphere_grid(n)
    return float(np.max(np.abs(radial_function(a, dirs) - radial_function(b, dirs))))


def c0_distance(a: Body, b: Body, resolution: int = 20000) -> DistanceReport:
    """Sup over a sphere grid of ``|rho_a(u) - rho_b(u)|``, with a coarser companion value."""
    coarse = max(1, resolution // 8)
    values = {coarse: _radial_gap(a, b, coarse), resolution: _radial_gap(a, b, resolution)}
    return DistanceReport(values[resolution], resolution, values)


def check_convex(body: Body, samples: int = 2000, tol: float = 1e-9) -> int:
    """Sampled convexity test of ``{G <= 1}``; returns the number of samples checked.

    The Hessian of ``G`` restricted to the tangent space of the level set must
    be positive semidefinite at every sample.
    """
    if not body.smooth:
        raise PreconditionError("convexity check needs a smooth body")
    dirs = sphere_grid(samples)
    pts = boundary_points(body, dirs)
    _, grads, hess = body.evaluate(pts)
    for x, g, h in zip(pts, grads, hess):
        # orthonormal basis of the tangent space: complement of grad G
        q, _ = np.linalg.qr(np.column_stack([g, np.eye(4)]))
        t = q[:, 1:4]
        restricted = t.T @ h @ t
        scale = max(1.0, float(np.abs(h).max()))
        if np.linalg.eigvalsh(restricted).min() < -tol * scale:
            raise PreconditionError(f"body {body.kind_name} is not convex near {x.tolist()}")
    return len(dirs)


def _normal_gap(a: Body, b: Body, n: int) -> tuple[float, float]:
    dirs = sphere_grid(n)
    pa = boundary_points(a, dirs)
    pb = boundary_points(b, dirs)
    na = a.evaluate(pa)[1]
    nb = b.evaluate(pb)[1]
    na /= np.linalg.norm(na, axis=1, keepdims=True)
    nb /= np.linalg.norm(nb, axis=1, keepdims=True)
    angle = 2.0 * np.arctan2(np.linalg.norm(na - nb, axis=1), np.linalg.norm(na + nb, axis=1))
    radial = np.abs(np.linalg.norm(pa, axis=1) - np.linalg.norm(pb, axis=1))
    return float(radial.max()), float(angle.max())


def c1_distance_convex(a: Body, b: Body, resolution: int = 20000, convexity_samples: int = 2000) -> DistanceReport:
    """C^0 radial gap plus the largest angle (radians) between unit normals."""
    checked = {
        "convexity_samples_a": check_convex(a, convexity_samples),
        "convexity_samples_b": check_convex(b, convexity_samples),
    }
    coarse = max(1, resolution // 8)
    values = {}
    parts = {}
    for n in (coarse, resolution):
        radial, angle = _normal_gap(a, b, n)
        values[n] = radial + angle
        parts[n] = (radial, angle)
    details = {"c0_part": parts[resolution][0], "angle_part": parts[resolution][1], **checked}
    return DistanceReport(values[resolution], resolution, values, details)


# --------------------------------------------------------------------------
# smoothing families
# --------------------------------------------------------------------------


def transversality_margin(body: Body, samples: int = 2000) -> float:
    """Minimum of ``<grad G(x), x>`` over sampled points of ``{G = 1}``."""
    pts = boundary_points(body, sphere_grid(samples))
    grads = body.evaluate(pts)[1]
    return float(np.min(np.sum(grads * pts, axis=1)))


def smoothing_family(
    polytope: Sequence[Halfspace],
    scheme: str,
    schedule: Sequence[float],
    resolution: int = 4000,
) -> list[SmoothedPolytope]:
    """Smoothed bodies along an increasing sharpness schedule.

    The radial C^0 distance to the polytope must strictly decrease along the
    schedule; this is verified on a sphere grid of the given resolution.
    """
    polytope = tuple(polytope)
    schedule = list(schedule)
    if not schedule:
        raise PreconditionError("schedule must not be empty")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise PreconditionError("schedule must be strictly increasing")
    if any(h.offset <= 0 for h in polytope):
        raise PreconditionError("origin must lie in the interior of the polytope")
    limit = Polytope(polytope)
    bodies = []
    distances = []
    for j, sharp in enumerate(schedule):
        body = SmoothedPolytope(polytope, sharp, scheme)
        try:
            dist = c0_distance(body, limit, resolution).value
            if scheme == "log-sum-exp" and transversality_margin(body, min(resolution, 2000)) <= 0:
                raise StarshapedError("transversality fails")
        except StarshapedError as exc:
            raise ConstructionError(f"smoothing {j} (sharpness {sharp}) is not starshaped: {exc}") from exc
        bodies.append(body)
        distances.append(dist)
    for j in range(1, len(distances)):
        if not distances[j] < distances[j - 1]:
            raise ConstructionError(
                f"C0 distance does not decrease at index {j} (sharpness {schedule[j]}): "
                f"{distances[j]} >= {distances[j - 1]}"
            )
    return bodies
