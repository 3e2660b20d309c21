"""Reference bodies and metrics used by the checks, the demos and the tests.

The chaotic demo, the bumpy torus amplitude and the mollification threshold
were found by scanning and are frozen here.
"""

from __future__ import annotations

from .geodesic import (
    ConformalMetric,
    FourierFactor,
    WeierstrassFactor,
    flat_metric,
    mollify_sequence,
    normalize_area,
)
from .geometry import (
    Body,
    Halfspace,
    PNormCube,
    Quadric,
    RadialGraph,
    SmoothedPolytope,
    TrigPolynomial,
    cube_facets,
)

CUBE_PS = (2, 4, 8, 16)

# two cross-plane modes of amplitude 0.15; chaotic sea with small regular islands
DEMO_PERTURBATION = TrigPolynomial(((0.15, (3, 0, 0, 3), 0.0), (0.15, (0, 3, 3, 0), 0.3)))
DEMO_SEEDS = (1, 2, 7)

# lacunary sphere series added to the demo along its smoothing schedule
LACUNARY_AMPLITUDE = 0.005
LACUNARY_A = 0.5
LACUNARY_B = 3
DEMO_SCHEDULE = (1, 2, 3, 4)
DEMO_LIMIT_TERMS = 12

BUMPY_AMPLITUDE = 0.2

WEIERSTRASS = dict(a=0.5, b=3, K=6, amplitude=0.1)
SANDWICH_DELTA = 0.1
SIGMA_STAR = 0.0702
MOLLIFY_SCALES = (SIGMA_STAR, SIGMA_STAR / 2, SIGMA_STAR / 4, SIGMA_STAR / 8)


def ellipsoid() -> Quadric:
    return Quadric.diagonal(1.0, 1.0, 2.0, 2.0)


def simplex_facets() -> tuple[Halfspace, ...]:
    """``x_i <= 1`` for each coordinate and ``-sum x_i <= 1``."""
    out = []
    for i in range(4):
        a = [0.0] * 4
        a[i] = 1.0
        out.append(Halfspace.from_vector(a, 1.0))
    out.append(Halfspace.from_vector([-1.0] * 4, 1.0))
    return tuple(out)


def chaotic_demo() -> RadialGraph:
    """Starshaped (not convex) graph over the ellipsoid with positive Lyapunov estimates."""
    return RadialGraph(ellipsoid(), DEMO_PERTURBATION)


def lacunary_terms(K: int) -> tuple:
    return tuple(
        (LACUNARY_AMPLITUDE * LACUNARY_A**n, (LACUNARY_B**n, 0, LACUNARY_B**n, 0), 0.0) for n in range(K)
    )


def demo_member(K: int) -> RadialGraph:
    """Demo body plus the first ``K`` terms of the lacunary series."""
    return RadialGraph(ellipsoid(), TrigPolynomial(DEMO_PERTURBATION.terms + lacunary_terms(int(K))))


def demo_limit() -> RadialGraph:
    return demo_member(DEMO_LIMIT_TERMS)


def small_graph() -> RadialGraph:
    return RadialGraph(Quadric.diagonal(1.0, 1.0, 1.0, 1.0), TrigPolynomial(((0.1, (1, 0, 0, 1), 0.0),)))


def shipped_bodies() -> dict[str, Body]:
    bodies: dict[str, Body] = {f"cube_p{p}": PNormCube(p) for p in CUBE_PS}
    bodies.update(
        round_sphere=Quadric.diagonal(1.0, 1.0, 1.0, 1.0),
        ellipsoid=ellipsoid(),
        smoothed_cube=SmoothedPolytope(cube_facets(), 8),
        smoothed_simplex=SmoothedPolytope(simplex_facets(), 8),
        lse_cube=SmoothedPolytope(cube_facets(), 20.0, "log-sum-exp"),
        small_graph=small_graph(),
        chaotic_demo=chaotic_demo(),
    )
    return bodies


def bumpy_metric(amplitude: float = BUMPY_AMPLITUDE) -> ConformalMetric:
    """``f = A (cos 2 pi q1 cos 2 pi q2 + 0.7 cos 4 pi q2)``."""
    A = amplitude
    return ConformalMetric(
        FourierFactor(((A / 2, (1, 1), 0.0), (A / 2, (1, -1), 0.0), (0.7 * A, (0, 2), 0.0))), "bumpy"
    )


def constant_metric(c: float = 0.3) -> ConformalMetric:
    return ConformalMetric(FourierFactor.constant(c), "constant")


def weierstrass_metric() -> ConformalMetric:
    """Unit-area truncated Weierstrass metric (continuous data only)."""
    return normalize_area(ConformalMetric(WeierstrassFactor(**WEIERSTRASS), "weierstrass"))


def mollified_metrics() -> list[ConformalMetric]:
    return mollify_sequence(weierstrass_metric(), MOLLIFY_SCALES)


def shipped_metrics() -> dict[str, ConformalMetric]:
    return {"flat": flat_metric(), "constant": constant_metric(), "bumpy": bumpy_metric()}
