"""Command-line front end.

``chadapt run <config>`` executes an adaptive simulation described by a
flat key-value config file and writes history.csv plus periodic VTK
snapshots.  ``chadapt verify <suite>`` runs one of the self-check
batteries (oracles, invariants, convergence, dominance) and prints one
pass/fail line per item.

Config keys (all optional except ``problem`` or ``expr``):
    problem = example1 | example2 | example1_desk | example2_desk |
              constant_one
    expr = <initial datum as an expression of x, y, eps>
    eps = <float>                 domain = x0 x1 y0 y1
    mesh.nx = <int>               mesh.ny = <int>
    adapt.<field> = <value>       any AdaptConfig field, e.g. adapt.tol_t
    estimator = recovery | residual
    indicator_mode = full | dominant
    out = <directory>             snapshot_every = <int>
    seed = <int>                  fixed_mesh = true|false
    fixed_tau = <float>
"""

import argparse
import dataclasses
import os
import sys

from . import adapt, io, problems, verification
from .adapt import AdaptConfig
from .errors import AdaptationError, ChadaptError, ConfigError

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def parse_config_file(path):
    """Flat ``key = value`` file; '#' starts a comment."""
    options = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(
                        f"{path}:{lineno}: expected 'key = value'")
                key, value = line.split("=", 1)
                options[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    return options


def _parse_bool(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def build_run(options, overrides=None):
    """Resolve a config dict into (Problem, AdaptConfig, output options)."""
    overrides = overrides or {}
    eps = float(options["eps"]) if "eps" in options else None

    if "problem" in options:
        problem = problems.get_problem(options["problem"], eps=eps)
    elif "expr" in options:
        if eps is None:
            raise ConfigError("custom datum requires an explicit eps")
        domain = (-1.0, 1.0, -1.0, 1.0)
        if "domain" in options:
            parts = options["domain"].split()
            if len(parts) != 4:
                raise ConfigError("domain must be 'x0 x1 y0 y1'")
            domain = tuple(float(p) for p in parts)
        nx = int(options.get("mesh.nx", 32))
        ny = int(options.get("mesh.ny", nx))
        problem = problems.custom_problem(options["expr"], eps,
                                          domain=domain, resolution=(nx, ny))
    else:
        raise ConfigError("config must set either 'problem' or 'expr'")

    if "mesh.nx" in options and "problem" in options:
        nx = int(options["mesh.nx"])
        ny = int(options.get("mesh.ny", nx))
        problem = dataclasses.replace(problem, resolution=(nx, ny))

    config = AdaptConfig()
    field_types = {f.name: f.type for f in dataclasses.fields(AdaptConfig)}
    merged = dict(problem.adapt_overrides)
    for key, value in options.items():
        if key.startswith("adapt."):
            merged[key[len("adapt."):]] = value
    for name, value in merged.items():
        if name not in field_types:
            raise ConfigError(f"unknown adapt option {name!r}")
        current = getattr(config, name)
        caster = bool if isinstance(current, bool) else type(current)
        if caster is bool and isinstance(value, str):
            value = _parse_bool(value)
        setattr(config, name, caster(value))

    if "estimator" in options:
        config.estimator = options["estimator"]
    if "indicator_mode" in options:
        config.indicator_mode = options["indicator_mode"]
    if overrides.get("estimator"):
        config.estimator = overrides["estimator"]
    if overrides.get("indicator_mode"):
        config.indicator_mode = overrides["indicator_mode"]
    if overrides.get("fixed_mesh") or _parse_bool(options.get("fixed_mesh", "no")):
        config.space_adapt = False
    fixed_tau = overrides.get("fixed_tau")
    if fixed_tau is None and "fixed_tau" in options:
        fixed_tau = float(options["fixed_tau"])
    if fixed_tau is not None:
        config.time_adapt = False
        config.tau0 = float(fixed_tau)
    config.validate()

    out = {
        "out": overrides.get("out") or options.get("out", "."),
        "snapshot_every": int(options.get("snapshot_every", 10)),
        "seed": int(options.get("seed", 0)),
    }
    if out["snapshot_every"] < 1:
        raise ConfigError("snapshot_every must be >= 1")
    return problem, config, out


def cmd_run(args):
    options = parse_config_file(args.config)
    overrides = {"estimator": args.estimator,
                 "indicator_mode": args.indicator_mode,
                 "fixed_mesh": args.fixed_mesh,
                 "fixed_tau": args.fixed_tau,
                 "out": args.out}
    problem, config, out = build_run(options, overrides)
    os.makedirs(out["out"], exist_ok=True)

    result = adapt.run_adaptive(problem, config,
                                snapshot_every=out["snapshot_every"])
    io.write_history(os.path.join(out["out"], "history.csv"), result.logs)
    for step, state, eta_k in result.snapshots:
        path = os.path.join(out["out"], f"mesh_{step:04d}.vtk")
        io.write_snapshot(path, state, eta_k,
                          boundary_rule=config.boundary_rule)
    final_energy = result.logs[-1].energy if result.logs else float("nan")
    print(f"accepted steps: {len(result.logs)}")
    print(f"final time: {result.state.t:.6e}")
    print(f"final energy: {final_energy:.6e}")
    print(f"stop reason: {result.stop_reason}")
    print(f"wall time: {result.wall_time:.2f} s")
    return 0


def cmd_verify(args):
    suites = {
        "oracles": verification.suite_oracles,
        "invariants": verification.suite_invariants,
        "convergence": verification.suite_convergence,
        "dominance": verification.suite_dominance,
    }
    if args.suite not in suites:
        print(f"unknown suite {args.suite!r}; choose from "
              f"{sorted(suites)}", file=sys.stderr)
        return EXIT_CONFIG
    results = suites[args.suite]()
    failed = 0
    for item in results:
        status = "PASS" if item.passed else "FAIL"
        print(f"[{status}] {item.name}: {item.detail}")
        failed += not item.passed
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="chadapt",
        description="Adaptive finite element solver for the "
                    "Cahn-Hilliard equation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a simulation from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--estimator", choices=("recovery", "residual"))
    p_run.add_argument("--indicator-mode", dest="indicator_mode",
                       choices=("full", "dominant"))
    p_run.add_argument("--fixed-mesh", action="store_true")
    p_run.add_argument("--fixed-tau", type=float, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(fn=cmd_run)

    p_verify = sub.add_parser("verify", help="run a self-check suite")
    p_verify.add_argument("suite")
    p_verify.set_defaults(fn=cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AdaptationError, ChadaptError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
