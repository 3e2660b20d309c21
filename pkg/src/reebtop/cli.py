"""Command-line front end: ``reebtop {body,flow,entropy} <subcommand> ...``.

Exit codes: 0 ok, 2 configuration error, 3 geometry error, 4 integration failure.
Options may also come from ``--config run.json`` (validated against
``run_config.schema.json``); explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .contact import contract_residuals, random_boundary_points
from .entropy import EstimatorConfig, estimate, sample_direction, sequence_entropy
from .errors import (
    DegeneratePointError,
    GeometryError,
    IntegrationError,
    InvalidSpecError,
    PreconditionError,
    ReebtopError,
    UnsupportedOperationError,
)
from .geometry import (
    Body,
    PNormCube,
    Polytope,
    Quadric,
    SmoothedPolytope,
    c0_distance,
    c1_distance_convex,
    radial_function,
    sphere_grid,
    transversality_margin,
)
from .integrate import FlowConfig, cube_integrals, integrate_flow, integrate_tangent_flow, reparametrize
from .serialize import (
    body_to_dict,
    load_body,
    load_metric,
    metric_from_dict,
    polytope_from_json,
    read_json,
    write_csv,
    write_json,
)

OUTPUT_ENV = "REEBTOP_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_GEOMETRY, EXIT_INTEGRATION = 0, 2, 3, 4

DEFAULTS = {
    "body": {"scheme": "pnorm", "resolution": 20000, "c1": False, "samples": 2000},
    "flow": {"field": "reeb", "T": 100.0, "rtol": 1e-10, "atol": 1e-12, "max_step": 0.5, "tau": 1.0,
             "record_every": 1, "max_steps": 50_000_000},
    "entropy": {"method": "lyapunov", "field": "reeb", "scheme": "pnorm", "N": 10, "T": 1000.0, "tau": 1.0,
                "rtol": 1e-10, "atol": 1e-12, "eps": 0.05, "segments": 100, "resolution": 4000, "workers": 1,
                "max_steps": 50_000_000},
}


def schema(name: str) -> dict:
    return json.loads(resources.files("reebtop").joinpath("schemas", f"{name}.schema.json").read_text())


def validate(obj, name: str, what: str):
    try:
        jsonschema.validate(obj, schema(name))
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InvalidSpecError(f"{what}: {exc.message} (at {loc})") from None


# --------------------------------------------------------------------------
# argument handling
# --------------------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


class Options:
    """Flag values layered over config-file values over built-in defaults."""

    def __init__(self, args, config: dict, group: str):
        self._args = vars(args)
        self._cfg = config.get(group, {})
        self._defaults = DEFAULTS.get(group, {})
        self.echo = {}

    def __getattr__(self, name):
        v = self._args.get(name)
        if v is None:
            v = self._cfg.get(name)
        if v is None:
            v = self._defaults.get(name)
        self.echo[name] = v
        return v


def output_dir(args, config) -> Path:
    d = args.output_dir or config.get("output_dir") or os.environ.get(OUTPUT_ENV) or "."
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def seed_of(args, config) -> int:
    if args.seed is not None:
        return args.seed
    return int(config.get("seed", 0))


def artifact(kind: str, echo: dict, payload: dict) -> dict:
    return {"reebtop_version": __version__, "artifact": kind, "config": echo, **payload}


def csv_comment(echo: dict) -> str:
    return f"reebtop {__version__} config={json.dumps(echo, sort_keys=True, default=str)}"


def body_ref(ref, what="body") -> Body:
    if not ref:
        raise InvalidSpecError(f"a {what} is required")
    if os.path.exists(ref):
        d = read_json(ref)
        if isinstance(d, dict) and "kind" in d:
            validate(d, "body", ref)
    return load_body(ref)


def metric_ref(ref):
    if not ref:
        raise InvalidSpecError("a metric is required")
    if os.path.exists(ref):
        d = read_json(ref)
        validate(d, "metric", ref)
        return metric_from_dict(d)
    return load_metric(ref)


# --------------------------------------------------------------------------
# body
# --------------------------------------------------------------------------


def cmd_body_build(args, config, out: Path):
    o = Options(args, config, "body")
    if o.cube_p is not None:
        body = PNormCube(o.cube_p)
    elif o.quadric_diag is not None:
        body = Quadric.diagonal(*o.quadric_diag)
    elif o.polytope is not None:
        hs = polytope_from_json(read_json(o.polytope))
        body = SmoothedPolytope(hs, o.sharpness, o.scheme) if o.sharpness is not None else Polytope(hs)
    elif o.fixture is not None:
        body = load_body(o.fixture)
    else:
        raise InvalidSpecError("choose one of --cube-p, --quadric-diag, --polytope, --fixture")
    spec = body_to_dict(body)
    spec["provenance"] = {"reebtop_version": __version__, "config": o.echo}
    path = Path(o.out) if o.out else out / "body.json"
    write_json(path, spec)
    return {"outputs": [str(path)]}


def cmd_body_distance(args, config, out: Path):
    o = Options(args, config, "body")
    a, b = body_ref(o.a, "body --a"), body_ref(o.b, "body --b")
    report = {"c0": c0_distance(a, b, o.resolution).as_dict()}
    if o.c1:
        report["c1"] = c1_distance_convex(a, b, o.resolution, o.samples).as_dict()
    report["value"] = report["c0"]["value"]
    path = write_json(out / "distance.json", artifact("distance", o.echo, report))
    return {"outputs": [str(path)], "value": report["value"]}


def _derivative_check(body: Body, samples: int) -> float:
    rng = np.random.default_rng(0)
    pts = random_boundary_points(body, min(samples, 200), rng)
    worst = 0.0
    for x in pts:
        _, g, h = body.evaluate(x)
        for i in range(4):
            e = np.zeros(4)
            e[i] = 1e-6
            gp, gm = body.evaluate(x + e)[0], body.evaluate(x - e)[0]
            worst = max(worst, abs((gp - gm) / 2e-6 - g[i]) / (1.0 + abs(g[i])))
            hp, hm = body.evaluate(x + e)[1], body.evaluate(x - e)[1]
            worst = max(worst, float(np.max(np.abs((hp - hm) / 2e-6 - h[:, i]))) / (1.0 + np.abs(h).max()))
    return worst


def cmd_body_check(args, config, out: Path):
    o = Options(args, config, "body")
    ref = o.body
    if ref and os.path.exists(ref):
        d = read_json(ref)
        if isinstance(d, list) or (isinstance(d, dict) and "kind" not in d):
            body = Polytope(polytope_from_json(d))
        else:
            body = body_ref(ref)
    else:
        body = body_ref(ref)
    checks = []

    def record(name, passed, value, detail=""):
        checks.append({"check": name, "passed": bool(passed), "value": value, "detail": detail})

    try:
        rho = radial_function(body, sphere_grid(o.samples))
        record("starshaped", True, float(np.min(rho)), "minimum radius over the sphere grid")
    except GeometryError as exc:
        record("starshaped", False, None, str(exc))
    if getattr(body, "smooth", True):
        margin = transversality_margin(body, o.samples)
        record("transversality", margin > 0, margin, "min <grad G, x> over the sphere grid")
        fd = _derivative_check(body, o.samples)
        record("derivatives", fd < 1e-5, fd, "finite-difference gradient and Hessian mismatch")
        res = contract_residuals(body, o.samples)
        record("contact_contract", max(res["alpha_of_R"], res["dG_of_R"]) <= 1e-10, res, "alpha(R) - 1 and dG(R)")
    passed = all(c["passed"] for c in checks)
    path = write_json(out / "check.json", artifact("check", o.echo, {"passed": passed, "checks": checks,
                                                                      "kind": body.kind_name}))
    return {"outputs": [str(path)], "exit": EXIT_OK if passed else EXIT_GEOMETRY}


# --------------------------------------------------------------------------
# flow
# --------------------------------------------------------------------------


def _flow_setup(args, config):
    o = Options(args, config, "flow")
    body = body_ref(o.body)
    if o.T is None or not math.isfinite(o.T):
        raise InvalidSpecError("T must be finite")
    cfg = FlowConfig(T=abs(o.T), rtol=o.rtol, atol=o.atol, max_step=o.max_step, tau=o.tau,
                     seed=seed_of(args, config), record_every=o.record_every, max_steps=o.max_steps)
    if o.x0 is not None:
        u = np.asarray(o.x0, dtype=float)
        if u.shape != (4,) or not np.linalg.norm(u) > 0:
            raise InvalidSpecError("x0 must be a nonzero 4-vector")
        u = u / np.linalg.norm(u)
    else:
        u = sample_direction(np.random.default_rng(cfg.seed))
    x0 = radial_function(body, u) * u
    o.echo["seed"] = cfg.seed
    return o, body, cfg, x0


def _monitors(body):
    return cube_integrals(body.p) if isinstance(body, PNormCube) else None


def _write_run(out: Path, stem: str, run, echo: dict, extra: dict):
    names = list(run.monitor_series)
    header = ["t", "x1", "y1", "x2", "y2", "G_drift", *[f"{n}_drift" for n in names], "log_stretch"]
    rows = (
        [run.times[i], *run.states[i], run.level_drift[i], *[run.monitor_series[n][i] for n in names],
         run.log_stretch[i]]
        for i in range(len(run.times))
    )
    csv_path = write_csv(out / f"{stem}.csv", header, rows, csv_comment(echo))
    payload = {**run.summary(), **extra}
    payload["flow_config"] = payload.pop("config")
    json_path = write_json(out / f"{stem}_summary.json", artifact(stem, echo, payload))
    from .figures import flow_figure

    png = flow_figure(out / f"{stem}.png", run.times, run.states, run.level_drift, csv_comment(echo))
    return [str(csv_path), str(json_path), str(png)]


def cmd_flow_integrate(args, config, out: Path):
    o, body, cfg, x0 = _flow_setup(args, config)
    from .integrate import integrate_signed

    run = integrate_signed(body, o.field, x0, o.T, cfg, _monitors(body))
    extra = {"x0": x0, "endpoint": run.endpoint, "return_distance": float(np.linalg.norm(run.endpoint - x0))}
    return {"outputs": _write_run(out, "flow", run, o.echo, extra)}


def cmd_flow_reparametrize(args, config, out: Path):
    o, body, cfg, x0 = _flow_setup(args, config)
    o.echo["field"] = "hamiltonian"
    ham = integrate_flow(body, "hamiltonian", x0, cfg, _monitors(body))
    run = reparametrize(ham, body)
    ratio = float(run.times[-1] / ham.times[-1]) if ham.times[-1] > 0 else None
    extra = {"x0": x0, "hamiltonian_T": float(ham.times[-1]), "reeb_T": float(run.times[-1]), "time_ratio": ratio}
    return {"outputs": _write_run(out, "reparametrized", run, o.echo, extra)}


def cmd_flow_tangent(args, config, out: Path):
    o, body, cfg, x0 = _flow_setup(args, config)
    if o.v0 is not None:
        g = body.evaluate(x0)[1]
        v0 = np.asarray(o.v0, dtype=float)
        v0 = v0 - (v0 @ g) / (g @ g) * g
    else:
        from .contact import random_tangent_vectors

        v0 = random_tangent_vectors(body, x0[None, :], np.random.default_rng([cfg.seed, 1]))[0]
    if not np.linalg.norm(v0) > 0:
        raise InvalidSpecError("v0 has no component tangent to the level set")
    v0 = v0 / np.linalg.norm(v0)
    run = integrate_tangent_flow(body, o.field, x0, v0, cfg)
    header = ["t", "x1", "y1", "x2", "y2", "v1", "v2", "v3", "v4", "G_drift", "log_stretch"]
    rows = ([run.times[i], *run.states[i], *run.tangent[i], run.level_drift[i], run.log_stretch[i]]
            for i in range(len(run.times)))
    csv_path = write_csv(out / "tangent.csv", header, rows, csv_comment(o.echo))
    lyap = run.total_log_stretch / cfg.T if cfg.T > 0 else 0.0
    payload = {**run.summary(), "x0": x0, "v0": v0, "lyapunov": lyap, "increments": run.increments}
    payload["flow_config"] = payload.pop("config")
    json_path = write_json(out / "tangent_summary.json", artifact("tangent", o.echo, payload))
    from .figures import flow_figure

    png = flow_figure(out / "tangent.png", run.times, run.states, run.level_drift, csv_comment(o.echo))
    return {"outputs": [str(csv_path), str(json_path), str(png)]}


# --------------------------------------------------------------------------
# entropy
# --------------------------------------------------------------------------


def _estimator(o, seed) -> EstimatorConfig:
    return EstimatorConfig(method=o.method, field=o.field, T=o.T, N=o.N, tau=o.tau, rtol=o.rtol, atol=o.atol,
                           eps=o.eps, segments=o.segments, seed=seed, workers=o.workers,
                           max_steps=o.max_steps)


def _write_estimate(out: Path, stem: str, est, echo: dict):
    from .figures import samples_figure

    payload = est.as_dict()
    payload["estimator_config"] = payload.pop("config")
    json_path = write_json(out / f"{stem}.json", artifact(stem, echo, payload))
    weights = est.extra.get("liouville_weights")
    header = ["sample", "value"]
    kept = [i for i in range(est.n_samples) if i not in est.excluded]
    rows = [[i, v] for i, v in zip(kept, est.per_sample)]
    if weights is not None:
        header.append("liouville_weight")
        rows = [r + [weights[r[0]]] for r in rows]
    csv_path = write_csv(out / f"{stem}_samples.csv", header, rows, csv_comment(echo))
    png = samples_figure(out / f"{stem}.png", est.per_sample, est.value, est.stderr, csv_comment(echo))
    return [str(json_path), str(csv_path), str(png)]


def cmd_entropy_estimate(args, config, out: Path):
    o = Options(args, config, "entropy")
    body = body_ref(o.body)
    seed = seed_of(args, config)
    o.echo["seed"] = seed
    if o.method == "separated-set":
        from .entropy import separated_set_estimate

        est = separated_set_estimate(body, o.field, o.T, o.segments, o.eps, o.N, seed,
                                     FlowConfig(T=o.T, rtol=o.rtol, atol=o.atol, max_steps=o.max_steps),
                                     o.workers,
                                     o.patches, o.patch_radius)
    else:
        est = estimate(body, _estimator(o, seed), seed)
    return {"outputs": _write_estimate(out, "entropy", est, o.echo), "value": est.value}


def cmd_entropy_sequence(args, config, out: Path):
    o = Options(args, config, "entropy")
    seed = seed_of(args, config)
    o.echo["seed"] = seed
    if not o.schedule:
        raise InvalidSpecError("a schedule is required")
    est_cfg = _estimator(o, seed)
    if o.family == "chaotic-demo":
        from .fixtures import demo_limit, demo_member

        report = sequence_entropy(demo_member, o.schedule, est_cfg, limit=demo_limit(), resolution=o.resolution)
    elif o.polytope:
        hs = polytope_from_json(read_json(o.polytope))
        report = sequence_entropy(hs, o.schedule, est_cfg, o.scheme, resolution=o.resolution)
    else:
        raise InvalidSpecError("choose --polytope FILE or --family chaotic-demo")
    payload = report.as_dict()
    for e in payload["estimates"]:
        e["estimator_config"] = e.pop("config")
    json_path = write_json(out / "sequence.json", artifact("sequence", o.echo, payload))
    csv_path = write_csv(out / "sequence.csv", ["sharpness", "c0_distance", "entropy_value", "stderr"],
                         report.plot_rows(), csv_comment(o.echo))
    from .figures import sequence_figure

    rows = report.plot_rows()
    png = sequence_figure(out / "sequence.png", [r[0] for r in rows], [r[1] for r in rows],
                          [r[2] for r in rows], [r[3] for r in rows], csv_comment(o.echo))
    return {"outputs": [str(json_path), str(csv_path), str(png)], "value": report.tail_minimum}


def cmd_entropy_geodesic(args, config, out: Path):
    from .geodesic import geodesic_entropy

    o = Options(args, config, "entropy")
    metric = metric_ref(o.metric)
    seed = seed_of(args, config)
    o.echo["seed"] = seed
    cfg = FlowConfig(T=o.T, rtol=o.rtol, atol=o.atol, tau=o.tau, max_steps=o.max_steps)
    est = geodesic_entropy(metric, cfg, o.N, seed, o.workers)
    return {"outputs": _write_estimate(out, "geodesic_entropy", est, o.echo), "value": est.value}


# --------------------------------------------------------------------------
# parser and entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--output-dir", help=f"output directory (default ${OUTPUT_ENV} or .)")
    common.add_argument("--seed", type=int)

    parser = argparse.ArgumentParser(prog="reebtop", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"reebtop {__version__}")
    groups = parser.add_subparsers(dest="group", required=True)

    body = groups.add_parser("body", help="build, compare and check bodies").add_subparsers(dest="sub", required=True)
    p = body.add_parser("build", parents=[common], help="write a body spec")
    p.add_argument("--cube-p", type=int)
    p.add_argument("--quadric-diag", type=_floats)
    p.add_argument("--polytope", help="halfspace list JSON")
    p.add_argument("--sharpness", type=float)
    p.add_argument("--scheme", choices=["pnorm", "log-sum-exp"])
    p.add_argument("--fixture", help="name of a shipped body")
    p.add_argument("--out", help="output path (default <output-dir>/body.json)")
    p.set_defaults(func=cmd_body_build)
    p = body.add_parser("distance", parents=[common], help="C0 (and optionally C1) distance")
    p.add_argument("--a")
    p.add_argument("--b", help="body file, fixture name or cube_limit")
    p.add_argument("--resolution", type=int)
    p.add_argument("--c1", action="store_true", default=None)
    p.add_argument("--samples", type=int)
    p.set_defaults(func=cmd_body_distance)
    p = body.add_parser("check", parents=[common], help="starshapedness, transversality and derivative checks")
    p.add_argument("--body")
    p.add_argument("--samples", type=int)
    p.set_defaults(func=cmd_body_check)

    flow = groups.add_parser("flow", help="integrate flows").add_subparsers(dest="sub", required=True)
    for name, func in (("integrate", cmd_flow_integrate), ("reparametrize", cmd_flow_reparametrize),
                       ("tangent", cmd_flow_tangent)):
        p = flow.add_parser(name, parents=[common])
        p.add_argument("--body")
        if name != "reparametrize":
            p.add_argument("--field", choices=["hamiltonian", "reeb"])
        p.add_argument("--T", type=float, help="horizon; negative integrates backwards" if name == "integrate"
                       else "horizon")
        p.add_argument("--x0", type=_floats, help="start direction, projected radially onto the level set")
        if name == "tangent":
            p.add_argument("--v0", type=_floats)
        p.add_argument("--rtol", type=float)
        p.add_argument("--atol", type=float)
        p.add_argument("--max-step", type=float)
        p.add_argument("--tau", type=float)
        p.add_argument("--record-every", type=int)
        p.add_argument("--max-steps", type=int, help="step budget per trajectory")
        p.set_defaults(func=func)

    ent = groups.add_parser("entropy", help="entropy estimates").add_subparsers(dest="sub", required=True)
    for name, func in (("estimate", cmd_entropy_estimate), ("sequence", cmd_entropy_sequence),
                       ("geodesic", cmd_entropy_geodesic)):
        p = ent.add_parser(name, parents=[common])
        if name == "estimate":
            p.add_argument("--body")
            p.add_argument("--method", choices=["lyapunov", "separated-set"])
            p.add_argument("--eps", type=float)
            p.add_argument("--segments", type=int)
            p.add_argument("--patches", type=int)
            p.add_argument("--patch-radius", type=float)
        if name == "sequence":
            p.add_argument("--polytope", help="halfspace list JSON")
            p.add_argument("--family", choices=["chaotic-demo"])
            p.add_argument("--scheme", choices=["pnorm", "log-sum-exp"])
            p.add_argument("--schedule", type=_floats)
            p.add_argument("--method", choices=["lyapunov", "separated-set"])
            p.add_argument("--resolution", type=int)
        if name == "geodesic":
            p.add_argument("--metric", help="metric file or shipped name")
        if name != "geodesic":
            p.add_argument("--field", choices=["hamiltonian", "reeb"])
        p.add_argument("--N", type=int)
        p.add_argument("--T", type=float)
        p.add_argument("--tau", type=float)
        p.add_argument("--rtol", type=float)
        p.add_argument("--atol", type=float)
        p.add_argument("--workers", type=int)
        p.add_argument("--max-steps", type=int, help="step budget per trajectory")
        p.set_defaults(func=func)
    return parser


def load_config(path) -> dict:
    if not path:
        return {}
    if not os.path.exists(path):
        raise InvalidSpecError(f"config file {path} not found")
    config = read_json(path)
    validate(config, "run_config", path)
    return config


def _error_exit(exc: Exception) -> int:
    if isinstance(exc, (IntegrationError, DegeneratePointError)):
        return EXIT_INTEGRATION
    if isinstance(exc, (InvalidSpecError, PreconditionError, UnsupportedOperationError)):
        return EXIT_CONFIG
    return EXIT_GEOMETRY


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    started = time.time()
    out = None
    try:
        config = load_config(args.config)
        out = output_dir(args, config)
        result = args.func(args, config, out)
        code = result.get("exit", EXIT_OK)
    except ReebtopError as exc:
        code = _error_exit(exc)
        print(f"reebtop: error: {exc}", file=sys.stderr)
        if isinstance(exc, IntegrationError) and out is not None:
            dump = {"reebtop_version": __version__, "error": str(exc), "last_time": exc.last_time,
                    "last_state": exc.last_state}
            path = write_json(out / "failure.json", dump)
            print(f"reebtop: last state written to {path}", file=sys.stderr)
        return code
    meta = {"argv": argv, "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
            "elapsed_seconds": time.time() - started, "python": sys.version.split()[0],
            "reebtop_version": __version__, "outputs": result.get("outputs", [])}
    write_json(out / "run_metadata.json", meta)
    for path in result.get("outputs", []):
        print(path)
    return code


if __name__ == "__main__":
    sys.exit(main())
