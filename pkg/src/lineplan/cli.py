"""Command line front end: ``lineplan paths|solve|evaluate|benchmark|sweep``.

Exit codes: 0 optimal or feasible, 2 infeasible, 3 time or iteration limit,
4 unreadable or invalid input, 5 too many candidate paths.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .cgn import build_cgn
from .dfra import DfraOptions, run as run_dfra, write_iteration_log
from .evaluate import (
    DEFAULT_THETA,
    Assignment,
    LineConcept,
    assign_logit,
    assign_shortest,
    metrics,
    model_assignment,
    rigid_benchmark,
)
from .fileio import InstanceFileError, load_instance, read_concept, write_solution
from .instance import Instance, InstanceError
from .milp import FEASIBLE, INFEASIBLE, LIMIT, OPTIMAL, ModelOptions, build_model, solve, true_representation
from .paths import RIGID, SERVICE, PathExplosionError, generate_paths, parse_signature, read_pathset, write_pathset

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_LIMIT = 3
EXIT_INPUT = 4
EXIT_PATHS = 5

log = logging.getLogger("lineplan")


@dataclass(frozen=True)
class RunConfig:
    instance: str
    out: str
    method: str = "dfra"
    path_mode: str = SERVICE
    lam: Optional[float] = None
    valid_inequality_headway: Optional[float] = None
    kappa: int = 0
    time_limit: Optional[float] = None
    iteration_limit: Optional[int] = None
    integer_vehicles: bool = True
    paths_file: Optional[str] = None
    solver: str = "highs"
    seed: int = 0
    write_lp: bool = False

    def validate(self) -> None:
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        for name in ("time_limit", "iteration_limit"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if self.method not in ("dfra", "direct"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.path_mode not in (SERVICE, RIGID):
            raise ValueError(f"unknown path mode {self.path_mode!r}")
        if self.solver != "highs":
            raise ValueError(f"unknown solver {self.solver!r}; only 'highs' is bundled")


def _versions() -> dict[str, str]:
    import networkx
    import scipy

    return {
        "lineplan": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "networkx": networkx.__version__,
    }


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_manifest(out: Path, command: str, config: dict, started: float, extra: Optional[dict] = None) -> None:
    data = {
        "command": command,
        "config": config,
        "versions": _versions(),
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_time_s": time.time() - started,
    }
    if extra:
        data.update(extra)
    _write_json(out / "manifest.json", data)


def _load(path: str) -> Instance:
    return load_instance(path)


# --------------------------------------------------------------------------
# commands


def cmd_paths(args) -> int:
    started = time.time()
    inst = _load(args.instance)
    modes = [SERVICE, RIGID] if args.mode == "both" else [args.mode]
    cgn = build_cgn(inst)
    sets = {m: generate_paths(inst, cgn, mode=m, max_paths_per_od=args.max_paths) for m in modes}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = {}
    for m, ps in sets.items():
        write_pathset(ps, out / f"paths_{m}.csv")
        stats[m] = ps.stats()
    _write_json(out / "path_stats.json", stats)
    _write_manifest(out, "paths", vars_clean(args), started)
    for m, s in stats.items():
        print(f"{m}: {s['ods']} ODs, {s['signatures']} signatures, {s['paths']} paths (+{s['ods']} alternative)")
    return EXIT_OK


def vars_clean(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig(
        instance=args.instance,
        out=args.out,
        method=args.method,
        path_mode=args.path_mode,
        lam=args.lam,
        valid_inequality_headway=args.ht,
        kappa=args.kappa,
        time_limit=args.time_limit,
        iteration_limit=args.iteration_limit,
        integer_vehicles=not args.continuous_vehicles,
        paths_file=args.paths,
        solver=args.solver,
        seed=args.seed,
        write_lp=args.write_lp,
    )
    cfg.validate()
    return cfg


def run_solve(cfg: RunConfig, inst: Optional[Instance] = None) -> tuple[int, dict]:
    """Solve one configuration and write its artifacts; returns (exit code, summary)."""
    started = time.time()
    if inst is None:
        inst = _load(cfg.instance)
    if cfg.lam is not None:
        inst = inst.with_costs(lam=cfg.lam)
    cgn = build_cgn(inst)
    if cfg.paths_file:
        ps = read_pathset(cfg.paths_file, inst, cgn, mode=cfg.path_mode)
    else:
        ps = generate_paths(inst, cgn, mode=cfg.path_mode)
    model_opts = ModelOptions(integer_vehicles=cfg.integer_vehicles, time_limit=cfg.time_limit)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    extra: dict = {}
    if cfg.method == "direct":
        model = build_model(inst, true_representation(inst), ps, model_opts)
        if cfg.write_lp:
            model.write_lp(out / "model.lp")
        sol = solve(model)
        status = sol.status
        extra["solve_wall_time_s"] = sol.wall_time
    else:
        opts = DfraOptions(
            kappa=cfg.kappa,
            valid_inequality_headway=cfg.valid_inequality_headway,
            iteration_limit=cfg.iteration_limit,
            time_limit=cfg.time_limit,
            model=model_opts,
            path_mode=cfg.path_mode,
        )
        result = run_dfra(inst, ps, opts)
        write_iteration_log(result, out / "iterations.csv")
        sol = result.solution
        status = {"optimal": OPTIMAL, "infeasible": INFEASIBLE}.get(result.termination, LIMIT)
        extra.update(
            iterations=result.iterations,
            termination=result.termination,
            lower_bound=result.lower_bound,
            upper_bound=result.upper_bound,
            iteration_wall_times_s=[r.wall_time for r in result.log],
        )

    summary = {"status": status, "objective": None}
    if sol is not None and sol.breakdown is not None:
        write_solution(sol, inst, out / "solution.json")
        concept = LineConcept.from_solution(sol)
        metrics(concept, model_assignment(sol), inst).write(out)
        summary.update(objective=sol.objective, opened=sol.opened, vehicles=sol.vehicles)
    else:
        _write_json(out / "solution.json", {"status": status, "objective": None, "opened": [], "flows": []})
    _write_manifest(out, "solve", asdict(cfg), started, extra)
    code = {OPTIMAL: EXIT_OK, FEASIBLE: EXIT_OK, INFEASIBLE: EXIT_INFEASIBLE}.get(status, EXIT_LIMIT)
    return code, summary


def cmd_solve(args) -> int:
    cfg = _config_from_args(args)
    inst = _load(cfg.instance)
    code, summary = run_solve(cfg, inst)
    if summary.get("objective") is not None:
        lines = ", ".join(f"{l}@{h:g} z={summary['vehicles'].get(l, 0):g}" for l, h in sorted(summary["opened"].items()))
        print(f"{summary['status']}: objective {summary['objective']:.6f}; {lines or 'no lines opened'}")
    else:
        print(summary["status"])
    return code


def _model_flows_from_file(path: Path, ps) -> Optional[np.ndarray]:
    data = json.loads(path.read_text(encoding="utf-8"))
    rows = data.get("flows")
    if not rows:
        return None
    flows = np.zeros(len(ps.paths))
    for r in rows:
        sig = parse_signature(r["signature"])
        if not sig:
            flows[ps.alternative[r["od"]]] += float(r["share"])
            continue
        key = (r["od"], sig, tuple((seg[0], float(h)) for seg, h in zip(sig, r["headways"])))
        i = ps.index_of.get(key)
        if i is None:
            return None
        flows[i] += float(r["share"])
    return flows


def cmd_evaluate(args) -> int:
    started = time.time()
    inst = _load(args.instance)
    concept = read_concept(args.solution, inst)
    ps = generate_paths(inst, mode=args.path_mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    flows = _model_flows_from_file(Path(args.solution), ps)
    if flows is not None:
        reports["model"] = metrics(concept, Assignment("model", ps, flows), inst)
    reports["logit"] = metrics(concept, assign_logit(concept, ps, args.theta), inst)
    reports["shortest"] = metrics(concept, assign_shortest(concept, ps), inst)
    for name, rep in reports.items():
        rep.write(out, prefix=f"{name}_")
        print(f"{name}: demand captured {rep.demand_captured_pct:.2f}%, passenger cost {rep.passenger_cost:.2f}")
    if args.benchmark:
        rigid_benchmark(inst).write(out / "benchmark")
    _write_manifest(out, "evaluate", vars_clean(args), started)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    started = time.time()
    inst = _load(args.instance)
    if args.lam is not None:
        inst = inst.with_costs(lam=args.lam)
    result = rigid_benchmark(inst)
    out = Path(args.out)
    result.write(out)
    _write_manifest(out, "benchmark", vars_clean(args), started, {"budget": result.budget})
    print(f"budget from the fixed-demand plan: {result.budget:g}")
    for row in result.table():
        print(
            f"{row['variant']:>4}: objective {row['objective']:.2f}, captured {row['demand_captured_pct']:.1f}%, "
            f"operating {row['operating_cost']:.2f}"
        )
    return EXIT_OK


def _sweep_worker(cfg: RunConfig) -> tuple[RunConfig, int, dict]:
    code, summary = run_solve(cfg)
    return cfg, code, summary


def cmd_sweep(args) -> int:
    started = time.time()
    _load(args.instance)  # fail fast before creating anything
    base = _config_from_args(args)
    lams = args.lams or [base.lam]
    hts = args.hts or [base.valid_inequality_headway]
    kappas = args.kappas or [base.kappa]
    out = Path(args.out)
    configs = []
    for lam, ht, k in itertools.product(lams, hts, kappas):
        name = f"lambda={lam}_ht={ht}_kappa={k}"
        configs.append(replace(base, lam=lam, valid_inequality_headway=ht, kappa=k, out=str(out / name)))
    for c in configs:
        c.validate()
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_worker, configs))
    else:
        results = [_sweep_worker(c) for c in configs]
    worst = EXIT_OK
    for cfg, code, summary in results:
        rows.append(
            {
                "lambda": cfg.lam,
                "ht": cfg.valid_inequality_headway,
                "kappa": cfg.kappa,
                "status": summary["status"],
                "objective": summary.get("objective"),
                "dir": Path(cfg.out).name,
            }
        )
        worst = max(worst, code)
    _write_json(out / "sweep.json", rows)
    _write_manifest(out, "sweep", vars_clean(args), started)
    for r in rows:
        print(f"{r['dir']}: {r['status']} {r['objective']}")
    return worst


# --------------------------------------------------------------------------
# argument parsing


def _opt_float(text: str) -> Optional[float]:
    return None if text.lower() in ("none", "default") else float(text)


def _add_solve_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=["dfra", "direct"], default="dfra", help="refinement loop or the full model")
    p.add_argument("--path-mode", choices=[SERVICE, RIGID], default=SERVICE)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="weight of the passenger term")
    p.add_argument("--ht", type=_opt_float, default=None, help="valid inequality headway threshold (0 disables)")
    p.add_argument("--kappa", type=int, default=0, help="similar lines tightened per refinement")
    p.add_argument("--time-limit", type=float, default=None, help="seconds")
    p.add_argument("--iteration-limit", type=int, default=None)
    p.add_argument("--continuous-vehicles", action="store_true")
    p.add_argument("--paths", default=None, help="path set file written by 'paths'")
    p.add_argument("--solver", default="highs")
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest; the pipeline is deterministic")
    p.add_argument("--write-lp", action="store_true", help="also export the full model in LP format (direct only)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lineplan", description="Line planning with service-dependent demand")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("paths", help="generate candidate path sets")
    p.add_argument("instance")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=[SERVICE, RIGID, "both"], default="both")
    p.add_argument("--max-paths", type=int, default=50_000, help="per-OD cap")
    p.set_defaults(func=cmd_paths)

    p = sub.add_parser("solve", help="solve the line planning model")
    p.add_argument("instance")
    p.add_argument("--out", required=True)
    _add_solve_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="metrics of a line concept under several assignments")
    p.add_argument("instance")
    p.add_argument("solution", help="solution.json or a hand-written concept")
    p.add_argument("--out", required=True)
    p.add_argument("--theta", type=float, default=DEFAULT_THETA, help="logit scale")
    p.add_argument("--path-mode", choices=[SERVICE, RIGID], default=SERVICE)
    p.add_argument("--benchmark", action="store_true", help="also run the fixed-demand benchmark")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="fixed-demand plan versus service-dependent plans")
    p.add_argument("instance")
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("sweep", help="solve over a grid of lambda, ht and kappa")
    p.add_argument("instance")
    p.add_argument("--out", required=True)
    _add_solve_flags(p)
    p.add_argument("--lambdas", dest="lams", type=float, nargs="+")
    p.add_argument("--hts", type=_opt_float, nargs="+")
    p.add_argument("--kappas", type=int, nargs="+")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # usage errors would otherwise exit 2, which is reserved for infeasible models
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InstanceFileError, InstanceError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PathExplosionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PATHS


if __name__ == "__main__":
    sys.exit(main())
