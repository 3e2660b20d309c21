"""Numerical proxies for topological entropy and the liminf over smoothing sequences.

Two estimators are offered.  The largest Lyapunov exponent (Benettin-style
renormalized tangent flow) is the primary one; by Ruelle's inequality it is a
heuristic indicator only.  The Bowen separated-set count is secondary and is
reported as a growth rate relative to the count at time zero.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .contact import random_tangent_vectors
from .errors import DegeneratePointError, IntegrationError, PreconditionError
from .geometry import Body, Halfspace, Polytope, c0_distance, radial_function, smoothing_family
from .integrate import FIELDS, FlowConfig, integrate_signed, integrate_tangent_flow

SAMPLING_NOTE = (
    "uniform in direction (radial pushforward of the sphere measure); Liouville weights recorded, not applied"
)
UNRELIABLE_FRACTION = 0.10


@dataclass
class EntropyEstimate:
    method: str
    value: float
    stderr: float | None
    n_samples: int
    per_sample: list
    config: dict
    seed: int
    excluded: list = field(default_factory=list)
    unreliable: bool = False
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "value": self.value,
            "stderr": self.stderr,
            "n_samples": self.n_samples,
            "per_sample": list(self.per_sample),
            "excluded": list(self.excluded),
            "unreliable": self.unreliable,
            "seed": self.seed,
            "config": self.config,
            **self.extra,
        }


def aggregate(values: Sequence[float]) -> tuple[float, float | None]:
    """Mean and standard error, computed with exactly rounded sums (order independent)."""
    vals = [float(v) for v in values]
    n = len(vals)
    if n == 0:
        return math.nan, None
    mean = math.fsum(vals) / n
    if n < 2:
        return mean, None
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    return mean, math.sqrt(var) / math.sqrt(n)


def sample_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def sample_direction(rng: np.random.Generator) -> np.ndarray:
    """Uniform direction on S^3 by rejection from the box [-1, 1]^4."""
    while True:
        x = rng.uniform(-1.0, 1.0, size=4)
        r = float(np.linalg.norm(x))
        if 0.05 <= r <= 1.0:
            return x / r


def ensemble(
    task: Callable[[int, np.random.Generator], float],
    n: int,
    seed: int,
    workers: int = 1,
):
    """Evaluate ``task(i, rng_i)`` for independent per-sample generators.

    Returns per-sample values (``None`` where the sample failed) in index order.
    """
    seqs = sample_seeds(seed, n)

    def one(i):
        try:
            return task(i, np.random.default_rng(seqs[i]))
        except (IntegrationError, DegeneratePointError):
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(n)))
    return [one(i) for i in range(n)]


def finalize(method, results, config, seed, extra=None) -> EntropyEstimate:
    good = [v for v in results if v is not None]
    excluded = [i for i, v in enumerate(results) if v is None]
    value, stderr = aggregate(good)
    return EntropyEstimate(
        method=method,
        value=value,
        stderr=stderr,
        n_samples=len(results),
        per_sample=good,
        config=config,
        seed=seed,
        excluded=excluded,
        unreliable=len(excluded) > UNRELIABLE_FRACTION * len(results),
        extra=extra or {},
    )


def lyapunov_estimate(
    body: Body,
    field: str = "reeb",
    config: FlowConfig = FlowConfig(T=1000.0),
    N: int = 10,
    seed: int = 0,
    workers: int = 1,
) -> EntropyEstimate:
    """Ensemble of largest-Lyapunov-exponent estimates on ``{G = 1}``."""
    if N < 2:
        raise PreconditionError("ensemble size must be at least 2")
    if field not in FIELDS:
        raise PreconditionError(f"unknown field {field!r}")
    if not config.T > 0:
        raise PreconditionError("horizon must be positive")
    weights = [0.0] * N

    def task(i, rng):
        u = sample_direction(rng)
        rho = radial_function(body, u)
        x0 = rho * u
        weights[i] = rho**4
        v0 = random_tangent_vectors(body, x0[None, :], rng)[0]
        run = integrate_tangent_flow(body, field, x0, v0, config, record=False)
        return run.total_log_stretch / config.T

    results = ensemble(task, N, seed, workers)
    mean_w = math.fsum(weights) / N
    extra = {
        "sampling": SAMPLING_NOTE,
        "liouville_weights": [w / mean_w for w in weights],
        "field": field,
    }
    cfg = {"T": config.T, "tau": config.tau, "rtol": config.rtol, "atol": config.atol, "N": N}
    return finalize("lyapunov", results, cfg, seed, extra)


def greedy_separated(traj: np.ndarray, eps: float) -> int:
    """Size of a greedy maximal subset pairwise ``eps``-separated in the Bowen metric.

    ``traj`` has shape ``(N, snapshots, dim)``; the Bowen distance of two
    samples is the max over snapshots of their Euclidean distance.
    """
    chosen: list[int] = []
    for i in range(traj.shape[0]):
        if chosen:
            d = np.linalg.norm(traj[chosen] - traj[i], axis=2).max(axis=1)
            if np.any(d <= eps):
                continue
        chosen.append(i)
    return len(chosen)


def patch_centres(body: Body, patches: int, seed: int) -> list:
    """Centre points on the level set, in directions uniform on the sphere."""
    centre_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    centres = []
    for _ in range(patches):
        u = sample_direction(centre_rng)
        centres.append(radial_function(body, u) * u)
    return centres


def separated_set_estimate(
    body: Body,
    field: str = "reeb",
    T: float = 50.0,
    n: int = 50,
    eps: float = 0.1,
    N: int = 200,
    seed: int = 0,
    config: FlowConfig = FlowConfig(),
    workers: int = 1,
    patches: int | None = None,
    patch_radius: float | None = None,
) -> EntropyEstimate:
    """Growth rate ``(log count_T - log count_0) / T`` of greedy (n, eps)-separated sets.

    ``count_T`` uses the Bowen metric over the ``n + 1`` snapshots ``k T / n``;
    ``count_0`` uses the time-zero snapshot only.  Starts are drawn in
    ``patches`` balls of radius ``patch_radius`` (default ``eps / 4``) so that
    ``count_0`` is small and growth is not masked by saturation; pass
    ``patch_radius=0`` for starts uniform in direction.  The rate bounds
    growth from below only in the limit of many samples and long horizons.
    """
    if not eps > 0:
        raise PreconditionError("separation radius must be positive")
    if n < 2:
        raise PreconditionError("need at least 2 segments")
    if N < 1:
        raise PreconditionError("need at least one sample")
    if T / n < 1e-12:
        raise PreconditionError("segment length below the minimum step")
    patches = max(1, N // 50) if patches is None else int(patches)
    radius = 0.25 * eps if patch_radius is None else float(patch_radius)
    if patches < 1 or radius < 0:
        raise PreconditionError("patch count must be positive and radius non-negative")
    times = np.linspace(0.0, T, n + 1)
    cfg = config.replace(T=T)
    centres = patch_centres(body, patches, seed) if radius > 0 else None

    def task(i, rng):
        if centres is None:
            u = sample_direction(rng)
        else:
            c = centres[i % patches]
            u = c + radius * sample_direction(rng) * rng.uniform() ** 0.25
            u /= np.linalg.norm(u)
        x0 = radial_function(body, u) * u
        return integrate_signed(body, field, x0, T, cfg, t_out=times).states

    results = ensemble(task, N, seed, workers)
    good = [r for r in results if r is not None]
    excluded = [i for i, r in enumerate(results) if r is None]
    traj = np.array(good) if good else np.zeros((0, n + 1, 4))
    count = greedy_separated(traj, eps)
    count0 = greedy_separated(traj[:, :1], eps)
    value = (math.log(count) - math.log(count0)) / T if count else 0.0
    return EntropyEstimate(
        method="separated-set",
        value=value,
        stderr=None,
        n_samples=N,
        per_sample=[value],
        config={"T": T, "n": n, "eps": eps, "N": N, "rtol": cfg.rtol, "atol": cfg.atol,
                "patches": patches, "patch_radius": radius},
        seed=seed,
        excluded=excluded,
        unreliable=len(excluded) > UNRELIABLE_FRACTION * N,
        extra={
            "count": count,
            "count_initial": count0,
            "raw_log_count_rate": math.log(count) / T if count else 0.0,
            "sampling": "patches of radius patch_radius around directions uniform on the sphere"
            if radius > 0 else SAMPLING_NOTE,
            "field": field,
        },
    )


# --------------------------------------------------------------------------
# smoothing sequences
# --------------------------------------------------------------------------


@dataclass
class EstimatorConfig:
    method: str = "lyapunov"
    field: str = "reeb"
    T: float = 1000.0
    N: int = 10
    tau: float = 1.0
    rtol: float = 1e-10
    atol: float = 1e-12
    eps: float = 0.05
    segments: int = 100
    seed: int = 0
    workers: int = 1
    max_steps: int = 50_000_000

    def flow_config(self) -> FlowConfig:
        return FlowConfig(T=self.T, rtol=self.rtol, atol=self.atol, tau=self.tau, seed=self.seed,
                          max_steps=self.max_steps)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("workers")
        return d


def estimate(body: Body, cfg: EstimatorConfig, seed: int | None = None) -> EntropyEstimate:
    seed = cfg.seed if seed is None else seed
    if cfg.method == "lyapunov":
        return lyapunov_estimate(body, cfg.field, cfg.flow_config(), cfg.N, seed, cfg.workers)
    if cfg.method == "separated-set":
        return separated_set_estimate(
            body, cfg.field, cfg.T, cfg.segments, cfg.eps, cfg.N, seed, cfg.flow_config(), cfg.workers
        )
    raise PreconditionError(f"unknown estimator {cfg.method!r}")


@dataclass
class SequenceReport:
    schedule: list
    estimates: list
    c0_distances: list
    tail_minimum: float
    limit: str
    estimator: dict
    members: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "schedule": list(self.schedule),
            "members": list(self.members),
            "estimates": [e.as_dict() for e in self.estimates],
            "c0_distances": list(self.c0_distances),
            "tail_minimum": self.tail_minimum,
            "tail_length": tail_length(len(self.schedule)),
            "limit": self.limit,
            "estimator": self.estimator,
            "unreliable": any(e.unreliable for e in self.estimates),
        }

    def plot_rows(self) -> list[tuple]:
        return [
            (s, d, e.value, e.stderr if e.stderr is not None else math.nan)
            for s, d, e in zip(self.schedule, self.c0_distances, self.estimates)
        ]


def tail_length(n: int) -> int:
    return math.ceil(n / 2)


def tail_minimum(values: Sequence[float]) -> float:
    """Finite stand-in for the liminf: minimum over the last ceil(n/2) members."""
    if not values:
        raise PreconditionError("empty schedule")
    return float(min(values[-tail_length(len(values)) :]))


def member_seed(seed: int, j: int) -> int:
    return int(np.random.SeedSequence([seed, j]).generate_state(1)[0])


def sequence_entropy(
    family,
    schedule: Sequence[float],
    estimator: EstimatorConfig = EstimatorConfig(),
    scheme: str = "pnorm",
    limit: Body | None = None,
    resolution: int = 4000,
) -> SequenceReport:
    """Estimate entropy along a smoothing sequence and take the tail minimum.

    ``family`` is either a polytope (sequence of :class:`Halfspace`), smoothed
    with ``scheme`` along ``schedule``, or a callable mapping one schedule
    value to a body, in which case ``limit`` names the limit body for the
    C^0 distances.
    """
    schedule = list(schedule)
    if callable(family):
        if limit is None:
            raise PreconditionError("a family generator needs its limit body")
        bodies = []
        for j, s in enumerate(schedule):
            try:
                bodies.append(family(s))
            except Exception as exc:
                raise type(exc)(f"family member {j} (schedule value {s}): {exc}") from exc
        limit_body = limit
        limit_name = getattr(limit, "kind_name", "limit")
    else:
        halfspaces = tuple(family)
        if not all(isinstance(h, Halfspace) for h in halfspaces):
            raise PreconditionError("family must be a list of Halfspace or a callable")
        bodies = smoothing_family(halfspaces, scheme, schedule, resolution)
        limit_body = Polytope(halfspaces)
        limit_name = "polytope"
    distances = [c0_distance(b, limit_body, resolution).value for b in bodies]
    estimates = [estimate(b, estimator, member_seed(estimator.seed, j)) for j, b in enumerate(bodies)]
    return SequenceReport(
        schedule=schedule,
        estimates=estimates,
        c0_distances=distances,
        tail_minimum=tail_minimum([e.value for e in estimates]),
        limit=limit_name,
        estimator=estimator.as_dict(),
        members=[b.kind_name for b in bodies],
    )
