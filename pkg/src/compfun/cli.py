"""Command-line entry point ``compfun``.

Exit codes: 0 success, 1 failed assertion or invalid input, 2 budget exceeded.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .algebra import merge_linear_nodes
from .dag import validate
from .errors import BudgetExceededError, CompFunError
from .experiments import ApproxConfig, AuditConfig, FlowConfig, OptctlConfig, load_config, run_experiment
from .features import FeatureConfig, SobolevConfig, extract_features, propagate_errors
from .fileio import load_dag, save_dag, save_shallow_net
from .nn import FitConfig, assemble_deep, fit_nodes
from .sampling import box_points


def _norm(p: str):
    return np.inf if p in ("inf", "Inf", "infinity") else float(p)


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_validate(args) -> int:
    f = load_dag(args.dag, check=False)
    rep = validate(f, samples_per_edge=args.samples)
    for item in rep.items:
        print(f"{'ok  ' if item.passed else 'FAIL'} {item.check}: {item.message}")
    print("valid" if rep.passed else "invalid")
    return 0 if rep.passed else 1


def cmd_features(args) -> int:
    f = load_dag(args.dag)
    cfg = FeatureConfig(sobolev=SobolevConfig(convention=args.sobolev))
    feats = extract_features(f, _norm(args.p), cfg)
    out = _out(args)
    stem = Path(args.dag).stem
    (out / f"{stem}_features.json").write_text(feats.to_json() + "\n")
    (out / f"{stem}_features.csv").write_text(feats.to_csv())
    if feats.empty:
        print("no general nodes: features are empty")
    else:
        r, lam, L, n = feats.quadruple()
        print(f"r_max={r:g} Lambda={lam:g} L_max={L:g} |V_G|={n}")
    return 0


def cmd_fit(args) -> int:
    f = load_dag(args.dag)
    ids = args.node or None
    nets, errs = fit_nodes(f, args.width, FitConfig(seed=args.seed, activation=args.activation), threads=args.threads, node_ids=ids)
    out = _out(args)
    for nid, net in nets.items():
        path = save_shallow_net(net, out / f"{_safe(nid)}_n{args.width}.json")
        print(f"{nid}: sup error {errs[nid]:.3e} -> {path}")
    return 0


def cmd_assemble(args) -> int:
    f = load_dag(args.dag)
    nets, errs = fit_nodes(f, args.width, FitConfig(seed=args.seed, activation=args.activation), threads=args.threads)
    fNN = assemble_deep(f, nets)
    if args.merge:
        fNN = merge_linear_nodes(fNN)
    X = box_points(f.input_radii, args.points, seed=args.seed + 1)
    measured = float(np.max(np.abs(fNN(X) - f(X))))
    bound = propagate_errors(f, errs)
    path = save_dag(fNN, _out(args) / f"{Path(args.dag).stem}_nn{args.width}.json")
    print(f"neurons={fNN.neuron_count} measured={measured:.3e} bound={bound:.3e} -> {path}")
    return 0 if measured <= bound + 1e-9 else 1


def _config(args, cls, **overrides):
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        if not isinstance(cfg, cls):
            raise CompFunError(f"config {args.config} is not a {cls.__name__}")
    else:
        cfg = cls()
    values = {k: v for k, v in overrides.items() if v is not None}
    if args.seed_given or not getattr(args, "config", None):
        values["seed"] = args.seed
    return dataclasses.replace(cfg, **values)


def _report(rep, args) -> int:
    csv_path, json_path = rep.write(_out(args))
    for a in rep.assertions:
        print(f"{'PASS' if a.passed else 'FAIL'} {a.name}: measured={a.measured:.4g} bound={a.bound:.4g}")
    if rep.budget_exceeded:
        print(f"budget exceeded: {rep.extra.get('budget')}")
    print(f"wrote {csv_path} and {json_path}")
    return rep.exit_code


def cmd_flow(args) -> int:
    widths = tuple(args.widths) if args.widths else None
    system = "file" if args.dag else None
    cfg = _config(args, FlowConfig, T=args.T, K=args.K, widths=widths, x_radius=args.x_radius, d=args.d, system=system, dag_path=args.dag)
    return _report(run_experiment(cfg, threads=args.threads), args)


def cmd_approx(args) -> int:
    widths = tuple(args.widths) if args.widths else None
    system = "file" if args.dag else None
    cfg = _config(args, ApproxConfig, widths=widths, d=args.d, system=system, dag_path=args.dag)
    return _report(run_experiment(cfg, threads=args.threads), args)


def cmd_optctl(args) -> int:
    eps = tuple(args.eps) if args.eps else None
    widths = tuple(args.widths) if args.widths else None
    cfg = _config(args, OptctlConfig, problem=args.problem, eps=eps, widths=widths, N_t=args.N_t)
    return _report(run_experiment(cfg), args)


def cmd_audit(args) -> int:
    cfg = _config(args, AuditConfig, n_dags=args.n_dags)
    return _report(run_experiment(cfg), args)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    cfg = dataclasses.replace(cfg, seed=args.seed) if args.seed_given else cfg
    return _report(run_experiment(cfg, threads=args.threads), args)


def _safe(nid: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in nid)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compfun", description="Compositional functions, their network surrogates and the associated bounds.")
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for node fits")
    p.add_argument("--out-dir", default="reports", help="directory for report files")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check structure and sampled range/domain compatibility of a DAG file")
    s.add_argument("dag")
    s.add_argument("--samples", type=int, default=4096)
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("features", help="extract (r_max, Lambda, L_max, |V_G|) and per-node features")
    s.add_argument("dag")
    s.add_argument("--p", default="inf", help="norm index for Lipschitz constants")
    s.add_argument("--sobolev", choices=("graded", "full"), default="graded")
    s.set_defaults(fn=cmd_features)

    s = sub.add_parser("fit", help="fit shallow networks to the general nodes")
    s.add_argument("dag")
    s.add_argument("--width", type=int, required=True)
    s.add_argument("--node", action="append", help="restrict to this node id (repeatable)")
    s.add_argument("--activation", default="tanh")
    s.set_defaults(fn=cmd_fit)

    s = sub.add_parser("assemble", help="fit every general node and write the assembled deep network")
    s.add_argument("dag")
    s.add_argument("--width", type=int, required=True)
    s.add_argument("--merge", action="store_true", help="fold hidden linear nodes into neurons")
    s.add_argument("--activation", default="tanh")
    s.add_argument("--points", type=int, default=10_000)
    s.set_defaults(fn=cmd_assemble)

    s = sub.add_parser("approx", help="width sweep of the assembled network against the error bounds")
    s.add_argument("--config")
    s.add_argument("--dag", help="DAG file instead of the built-in Lorenz-96 system")
    s.add_argument("--d", type=int)
    s.add_argument("--widths", type=int, nargs="+")
    s.set_defaults(fn=cmd_approx)

    s = sub.add_parser("flow", help="flow-surrogate sweep against the exact flow")
    s.add_argument("--config")
    s.add_argument("--dag", help="right-hand side DAG file instead of Lorenz-96")
    s.add_argument("--d", type=int)
    s.add_argument("--T", type=float)
    s.add_argument("--K", type=int)
    s.add_argument("--x-radius", type=float)
    s.add_argument("--widths", type=int, nargs="+")
    s.set_defaults(fn=cmd_flow)

    s = sub.add_parser("optctl", help="contraction solver on a quadratic cost or the network control pipeline")
    s.add_argument("--config")
    s.add_argument("--problem", choices=("lq", "quadratic"))
    s.add_argument("--eps", type=float, nargs="+")
    s.add_argument("--widths", type=int, nargs="+")
    s.add_argument("--N-t", dest="N_t", type=int)
    s.set_defaults(fn=cmd_optctl)

    s = sub.add_parser("audit", help="randomized audit of the graph algebra and error propagation")
    s.add_argument("--config")
    s.add_argument("--n-dags", type=int)
    s.set_defaults(fn=cmd_audit)

    s = sub.add_parser("run", help="run an experiment from a JSON config")
    s.add_argument("config")
    s.set_defaults(fn=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    try:
        return int(args.fn(args))
    except BudgetExceededError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return 2
    except (CompFunError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
