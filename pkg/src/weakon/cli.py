"""Command-line front end.

Exit codes: 0 when the property holds or the run completed, 2 when a checked
property fails, 1 on any operational error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .certify import (certify_transverse, certify_weak_contraction, default_sampler,
                      dimension_bound, epsilon_search)
from .combine import CompositeSystem, check_feedback_condition
from .config import RunConfig, load_config
from .errors import WeakonError
from .flow import equilibrium_census, integrate, lyapunov_spectrum, variational_flow, write_csv
from .metrics import augment_storage
from .sampling import Sampler

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _emit(args, cfg: RunConfig, command: str, body: dict, csvs: dict | None = None) -> None:
    report = {"command": command, "version": __version__, "config_hash": cfg.hash, **body}
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True, allow_nan=False)
    out = args.out or cfg.out
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.json").write_text(text + "\n")
        for name, (header, rows) in (csvs or {}).items():
            write_csv(d / name, header, rows)
    print(text)


def _sampler(args, cfg: RunConfig, system) -> Sampler:
    s = cfg.sampler(args.sampler, system)
    if s is None:
        s = Sampler("grid", system.box, args.points) if args.points else default_sampler(system)
    if args.time_window is not None and s.time_window is None:
        s = Sampler(s.kind, s.box, s.points, s.count, s.seed, tuple(args.time_window),
                    args.time_samples)
    return s


def _metric_for(cfg: RunConfig, system, ref):
    if ref is None and isinstance(system, CompositeSystem) and system.recommended_metric is not None:
        return system.recommended_metric, None
    if ref is None and system.metric is not None:
        return system.metric, None
    return cfg.metric_and_storage(ref, system.n)


def _x0(args, system):
    if args.x0 is None:
        raise WeakonError("--x0 is required")
    x0 = np.array(args.x0, dtype=float)
    if x0.shape != (system.n,):
        raise WeakonError(f"--x0 needs {system.n} values, got {len(x0)}")
    return x0


# --------------------------------------------------------------------------
# commands


def cmd_certify(args, cfg: RunConfig) -> int:
    system = cfg.system(args.system)
    metric, storage = _metric_for(cfg, system, args.metric)
    if args.storage is not None:
        if storage is not None:
            raise WeakonError("metric already carries a storage function")
        storage = cfg.storage(args.storage, system.n)
    sampler = _sampler(args, cfg, system)
    if args.transverse:
        cert = certify_transverse(system, metric, sampler, storage)
    else:
        cert = certify_weak_contraction(system, metric, args.k, sampler, storage)
    _emit(args, cfg, "certify", cert.as_dict())
    return EXIT_OK if cert.holds else EXIT_FAIL


def cmd_simulate(args, cfg: RunConfig) -> int:
    system = cfg.system(args.system)
    solver = cfg.solver(args.solver, horizon=args.T, step=args.step, method=args.method)
    if args.census is not None:
        sampler = Sampler("random", system.box, count=args.census,
                          seed=cfg.seed if args.seed is None else args.seed)
        census = equilibrium_census(system, sampler, solver)
        _emit(args, cfg, "simulate", {"system": system.name, "census": census.summary()},
              {"census.csv": (["id"] + [f"x{i}_0" for i in range(system.n)]
                              + [f"x{i}_T" for i in range(system.n)] + ["converged"],
                              [[j, *census.initial[j], *census.terminal[j],
                                float(c == "converged-to-equilibrium")]
                               for j, c in enumerate(census.classes)])})
        return EXIT_OK
    traj = integrate(system, _x0(args, system), 0.0, solver)
    _emit(args, cfg, "simulate", {"system": system.name, "trajectory": traj.summary()},
          {"trajectory.csv": (["t"] + [f"x{i}" for i in range(system.n)],
                              np.column_stack([traj.times, traj.states]))})
    return EXIT_OK


def cmd_volumes(args, cfg: RunConfig) -> int:
    system = cfg.system(args.system)
    metric, storage = _metric_for(cfg, system, args.metric)
    order = args.order or system.n
    cert = certify_weak_contraction(system, metric, order, _sampler(args, cfg, system), storage)
    flow_metric = metric if storage is None else augment_storage(metric, storage)
    solver = cfg.solver(args.solver, horizon=args.T, step=args.step, method=args.method)
    rec = variational_flow(system, flow_metric, _x0(args, system), cfg=solver, order=order,
                           bound=cert.worst_value, seed=cfg.seed or 0)
    _emit(args, cfg, "volumes", {"system": system.name, "volumes": rec.summary(),
                                 "certificate": cert.as_dict()},
          {f"volume_{order}.csv": (["t", f"log_vol_{order}"],
                                   np.column_stack([rec.times, rec.log_volume]))})
    return EXIT_OK if rec.bound_satisfied else EXIT_FAIL


def cmd_lyapunov(args, cfg: RunConfig) -> int:
    system = cfg.system(args.system)
    solver = cfg.solver(args.solver, horizon=args.T, step=args.step, method=args.method)
    spec = lyapunov_spectrum(system, _x0(args, system), args.order, solver,
                             transient=args.transient, seed=cfg.seed)
    _emit(args, cfg, "lyapunov", {"system": system.name, "lyapunov": spec.summary()},
          {"lyapunov.csv": (["j", "exponent", "partial_sum"],
                            [[j + 1, e, s] for j, (e, s) in
                             enumerate(zip(spec.exponents, spec.partial_sums))])})
    return EXIT_OK


def cmd_combine(args, cfg: RunConfig) -> int:
    comp = cfg.composite(args.combine)
    body = {"composite": comp.describe()}
    if not args.certify:
        _emit(args, cfg, "combine", body)
        return EXIT_OK
    sampler = _sampler(args, cfg, comp)
    fa, fb = comp.subsystems
    if comp.kind == "hierarchical":
        res = epsilon_search(comp, args.k, sampler)
        body["epsilon_search"] = res.as_dict()
        holds = res.found
    else:
        metric = comp.recommended_metric if comp.kind == "feedback" else comp.metric
        cert = certify_weak_contraction(comp, metric, args.k, sampler)
        body["certificate"] = cert.as_dict()
        if comp.kind == "feedback":
            body["hypothesis"] = check_feedback_condition(
                fa, fb, sampler, fa.metric, fb.metric).as_dict()
        holds = cert.holds
    _emit(args, cfg, "combine", body)
    return EXIT_OK if holds else EXIT_FAIL


def cmd_report(args, cfg: RunConfig) -> int:
    system = cfg.system(args.system)
    metric, storage = _metric_for(cfg, system, args.metric)
    rep = dimension_bound(system, metric, _sampler(args, cfg, system), storage)
    _emit(args, cfg, "report", {"system": system.describe(), "dimension_bound": rep.as_dict(),
                                "certificates": [c.as_dict() for c in rep.certificates]})
    return EXIT_OK if rep.k_star is not None else EXIT_FAIL


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="weakon", description="Eigenvalue-sum contraction certificates for ODEs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="directory for report.json and CSV files")

    def sampling(sp):
        sp.add_argument("--sampler", help="sampler name from the config")
        sp.add_argument("--points", type=int, help="grid points per axis (default: about 20000 total)")
        sp.add_argument("--time-window", type=float, nargs=2, metavar=("T0", "T1"))
        sp.add_argument("--time-samples", type=int, default=11)

    def solving(sp, T):
        sp.add_argument("--solver", help="solver name from the config")
        sp.add_argument("--T", type=float, default=T, help="horizon")
        sp.add_argument("--step", type=float)
        sp.add_argument("--method", choices=("rk4", "rkf45"))
        sp.add_argument("--x0", type=float, nargs="+")

    sp = sub.add_parser("certify", help="certify S_k < 0 over a sampled domain")
    sp.add_argument("system")
    sp.add_argument("metric", nargs="?")
    sp.add_argument("--k", type=int, default=2)
    sp.add_argument("--storage", help="storage metric name from the config")
    sp.add_argument("--transverse", action="store_true", help="check lambda_2 < 0 instead")
    common(sp), sampling(sp)
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("simulate", help="integrate a trajectory or a seeded census")
    sp.add_argument("system")
    sp.add_argument("--census", type=int, metavar="N", help="N seeded random starts")
    sp.add_argument("--seed", type=int)
    common(sp), solving(sp, 100.0)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("volumes", help="volume decay rate against its certified bound")
    sp.add_argument("system")
    sp.add_argument("metric", nargs="?")
    sp.add_argument("--order", type=int)
    common(sp), sampling(sp), solving(sp, 100.0)
    sp.set_defaults(func=cmd_volumes)

    sp = sub.add_parser("lyapunov", help="Lyapunov exponents by QR reorthonormalization")
    sp.add_argument("system")
    sp.add_argument("--order", type=int)
    sp.add_argument("--transient", type=float, default=0.0)
    common(sp), solving(sp, 500.0)
    sp.set_defaults(func=cmd_lyapunov)

    sp = sub.add_parser("combine", help="build (and optionally certify) an interconnection")
    sp.add_argument("combine")
    sp.add_argument("--certify", action="store_true")
    sp.add_argument("--k", type=int, default=2)
    common(sp), sampling(sp)
    sp.set_defaults(func=cmd_combine)

    sp = sub.add_parser("report", help="smallest certified order k and its dimension bound")
    sp.add_argument("system")
    sp.add_argument("metric", nargs="?")
    common(sp), sampling(sp)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (WeakonError, ValueError, KeyError, np.linalg.LinAlgError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"weakon: error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
