"""Adaptive integration of Hamiltonian, Reeb and geodesic flows and their tangent flows."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import _kernels as K
from .errors import DegeneratePointError, IntegrationError, PreconditionError
from .geometry import Body, PNormCube

FIELDS = {"hamiltonian": K.SYS_HAMILTONIAN, "reeb": K.SYS_REEB}

_STATUS_TEXT = {
    K.STATUS_STEP_UNDERFLOW: "step size underflow",
    K.STATUS_DEGENERATE: "degenerate point (transversality lost)",
    K.STATUS_MAX_STEPS: "step budget exhausted",
    K.STATUS_NONFINITE: "non-finite state",
}


@dataclass(frozen=True)
class FlowConfig:
    T: float = 100.0
    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: float = 0.5
    tau: float = 1.0
    projection_threshold: float = 1e-9
    seed: int = 0
    max_steps: int = 50_000_000
    record_every: int = 1

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise PreconditionError("tolerances must be positive")
        if not self.tau > 0:
            raise PreconditionError("renormalization interval must be positive")
        if not (math.isfinite(self.T) and self.T >= 0):
            raise PreconditionError("horizon T must be finite and non-negative")
        if not self.max_step > 0:
            raise PreconditionError("max_step must be positive")

    def replace(self, **kw) -> "FlowConfig":
        return FlowConfig(**{**asdict(self), **kw})


Integrals = Mapping[str, Callable[[np.ndarray], np.ndarray]]


def cube_integrals(p: int) -> dict:
    """``H_p`` and the two plane integrals ``F1 = x1^p + y1^p``, ``F2 = x2^p + y2^p``."""

    def f1(x):
        x = np.atleast_2d(x)
        return x[:, 0] ** p + x[:, 1] ** p

    def f2(x):
        x = np.atleast_2d(x)
        return x[:, 2] ** p + x[:, 3] ** p

    def h(x):
        return f1(x) + f2(x)

    return {"H": h, "F1": f1, "F2": f2}


@dataclass
class FlowRun:
    field: str
    times: np.ndarray
    states: np.ndarray
    pre_states: np.ndarray
    level_drift: np.ndarray
    clock: np.ndarray
    log_stretch: np.ndarray
    increments: np.ndarray
    accepted: int
    rejected: int
    projections: int
    max_level_drift: float
    tangent: np.ndarray | None = None
    max_tangency_defect: float = 0.0
    degenerate: bool = False
    monitor_drifts: dict = field(default_factory=dict)
    monitor_series: dict = field(default_factory=dict)
    final_state: np.ndarray | None = None
    config: dict = field(default_factory=dict)

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    @property
    def total_log_stretch(self) -> float:
        return float(np.sum(self.increments))

    def summary(self) -> dict:
        return {
            "field": self.field,
            "t_final": float(self.times[-1]),
            "rows": int(len(self.times)),
            "accepted_steps": self.accepted,
            "rejected_steps": self.rejected,
            "projections": self.projections,
            "max_level_drift": self.max_level_drift,
            "max_tangency_defect": self.max_tangency_defect,
            "monitor_drifts": dict(self.monitor_drifts),
            "total_log_stretch": self.total_log_stretch,
            "degenerate": self.degenerate,
            "config": self.config,
        }

    def to_csv(self, path) -> None:
        names = list(self.monitor_series)
        header = ["t", "x1", "y1", "x2", "y2", "G_drift", *[f"{n}_drift" for n in names], "log_stretch"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self.times)):
                row = [self.times[i], *self.states[i], self.level_drift[i]]
                row += [self.monitor_series[n][i] for n in names]
                row.append(self.log_stretch[i])
                w.writerow([f"{v:.17g}" for v in row])


def run_system(
    system: int,
    packed: tuple,
    y0: np.ndarray,
    T: float,
    config: FlowConfig,
    level_target: float,
    homog_deg: float,
    t_out=None,
    record: bool = True,
):
    """Thin wrapper over the compiled integrator that raises on failure."""
    t_out = np.zeros(0) if t_out is None else np.ascontiguousarray(t_out, dtype=float)
    rec, out, logs, y_last, counters, stats = K.integrate(
        system,
        *packed,
        np.ascontiguousarray(y0, dtype=float),
        float(T),
        config.rtol,
        config.atol,
        config.max_step,
        config.tau,
        level_target,
        config.projection_threshold,
        homog_deg,
        t_out,
        config.record_every if record else 0,
        config.max_steps,
    )
    status = int(counters[3])
    if status != K.STATUS_OK:
        msg = f"integration failed at t={stats[2]:.6g}: {_STATUS_TEXT.get(status, status)}"
        if status == K.STATUS_DEGENERATE:
            raise DegeneratePointError(msg)
        raise IntegrationError(msg, last_time=float(stats[2]), last_state=y_last.copy())
    return rec, out, logs, y_last, counters, stats


def _build_run(field_name, rows, dim, logs, y_last, counters, stats, config, monitors, level_target):
    states = rows[:, 1:5]
    pre = rows[:, 4 + dim : 8 + dim]
    run = FlowRun(
        field=field_name,
        times=rows[:, 0].copy(),
        states=states.copy(),
        pre_states=pre.copy(),
        level_drift=rows[:, 1 + dim] - level_target,
        clock=rows[:, 2 + dim].copy(),
        log_stretch=rows[:, 3 + dim].copy(),
        increments=logs,
        accepted=int(counters[0]),
        rejected=int(counters[1]),
        projections=int(counters[2]),
        max_level_drift=float(stats[0]),
        tangent=rows[:, 5 : 1 + dim].copy() if dim == 8 else None,
        max_tangency_defect=float(stats[1]),
        degenerate=bool(counters[4]),
        final_state=y_last.copy(),
        config=asdict(config),
    )
    for name, fn in (monitors or {}).items():
        ref = float(np.atleast_1d(fn(pre[:1]))[0])
        series = np.atleast_1d(fn(pre)) - ref
        run.monitor_series[name] = series
        run.monitor_drifts[name] = float(np.max(np.abs(series)))
    return run


def _check_start(body: Body, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (4,):
        raise PreconditionError("initial point must be a vector in R^4")
    if abs(body.evaluate(x0)[0] - 1.0) > 1e-8:
        raise PreconditionError("initial point is not on the level set G = 1")
    return x0


def integrate_flow(
    body: Body,
    field: str,
    x0,
    config: FlowConfig = FlowConfig(),
    monitors: Integrals | None = None,
    t_out=None,
) -> FlowRun:
    """Integrate the Hamiltonian or Reeb field of ``body`` from ``x0`` for time ``config.T``.

    A negative ``T`` passed through ``t_out``-free calls via :func:`integrate_signed`
    runs the flow backwards.
    """
    return integrate_signed(body, field, x0, config.T, config, monitors, t_out)


def integrate_signed(body, field, x0, T, config=FlowConfig(), monitors=None, t_out=None) -> FlowRun:
    if field not in FIELDS:
        raise PreconditionError(f"unknown field {field!r}; expected one of {sorted(FIELDS)}")
    x0 = _check_start(body, x0)
    record = t_out is None
    rec, out, logs, y_last, counters, stats = run_system(
        FIELDS[field], body.packed, x0, T, config, 1.0, body.degree, t_out, record
    )
    rows = rec if record else out
    return _build_run(field, rows, 4, logs, y_last, counters, stats, config, monitors, 1.0)


def reparametrize(run: FlowRun, body: Body) -> FlowRun:
    """Express a Hamiltonian run in Reeb time ``tau`` with ``d tau/dt = <grad G, x>/2``.

    The clock column already carries that integral, accumulated with the same
    Runge-Kutta quadrature weights as the trajectory itself.
    """
    if run.field != "hamiltonian":
        raise PreconditionError("reparametrize expects a Hamiltonian run")
    out = FlowRun(
        field="reeb",
        times=run.clock.copy(),
        states=run.states.copy(),
        pre_states=run.pre_states.copy(),
        level_drift=run.level_drift.copy(),
        clock=run.times.copy(),
        log_stretch=run.log_stretch.copy(),
        increments=run.increments.copy(),
        accepted=run.accepted,
        rejected=run.rejected,
        projections=run.projections,
        max_level_drift=run.max_level_drift,
        monitor_drifts=dict(run.monitor_drifts),
        monitor_series=dict(run.monitor_series),
        final_state=run.final_state,
        config=dict(run.config, reparametrized_from="hamiltonian"),
    )
    return out


def reparametrization_gap(body: Body, x0, T_reeb: float, config: FlowConfig = FlowConfig(), n_compare: int = 400):
    """Max distance between a reparametrized Hamiltonian run and a direct Reeb run.

    Returns ``(gap, reparametrized_run)``; points are compared at matched Reeb times.
    """
    x0 = _check_start(body, x0)
    _, g, _ = body.evaluate(x0)
    rate = 0.5 * float(g @ x0)
    T_ham = 1.1 * T_reeb / rate
    while True:
        ham = integrate_signed(body, "hamiltonian", x0, T_ham, config)
        if ham.clock[-1] >= T_reeb:
            break
        T_ham *= 1.5
    reeb_run = reparametrize(ham, body)
    keep = reeb_run.times <= T_reeb
    idx = np.flatnonzero(keep)
    pick = idx[np.linspace(0, len(idx) - 1, min(n_compare, len(idx))).astype(int)]
    times = reeb_run.times[pick]
    direct = integrate_signed(body, "reeb", x0, times[-1], config, t_out=times)
    gap = float(np.max(np.linalg.norm(direct.states - reeb_run.states[pick], axis=1)))
    return gap, reeb_run


def integrate_tangent_flow(
    body: Body,
    field: str,
    x0,
    v0,
    config: FlowConfig = FlowConfig(),
    record: bool = True,
    t_out=None,
) -> FlowRun:
    """Integrate ``(x, v)' = (F(x), DF(x) v)``, renormalizing ``v`` every ``config.tau``."""
    if field not in FIELDS:
        raise PreconditionError(f"unknown field {field!r}")
    x0 = _check_start(body, x0)
    v0 = np.asarray(v0, dtype=float)
    g = body.evaluate(x0)[1]
    nv = float(np.linalg.norm(v0))
    if nv > 0 and abs(g @ v0) > 1e-10 * float(np.linalg.norm(g)) * nv:
        raise PreconditionError("v0 is not tangent to the level set")
    y0 = np.concatenate([x0, v0])
    use_out = t_out is not None
    rec, out, logs, y_last, counters, stats = run_system(
        FIELDS[field], body.packed, y0, config.T, config, 1.0, body.degree, t_out, record and not use_out
    )
    rows = out if use_out else rec
    if len(rows) == 0:
        rows = np.concatenate([[config.T], y_last, [1.0, stats[3], stats[4]], y_last[:4]])[None, :]
    run = _build_run(field, rows, 8, logs, y_last, counters, stats, config, None, 1.0)
    run.degenerate = run.degenerate or nv == 0.0
    return run


def integrate_reference(body: Body, x0, p: int | None = None, T: float = 1000.0, field: str = "hamiltonian",
                        config: FlowConfig | None = None) -> FlowRun:
    """Run with the plane-integral monitors of a p-norm cube attached."""
    if p is None:
        if not isinstance(body, PNormCube):
            raise PreconditionError("plane integrals are defined for p-norm cubes")
        p = body.p
    cfg = (config or FlowConfig()).replace(T=T)
    return integrate_flow(body, field, x0, cfg, monitors=cube_integrals(p))
