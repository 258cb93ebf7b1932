"""Command line entry point.

Subcommands: ``theory``, ``priors``, ``alloc``, ``grad-bench``, ``optimize``.
Each reads an optional JSON config; ``--seed`` overrides the config seed.
Exit codes: 0 success, 2 configuration error, 3 infeasible budget.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import allocators as al
from . import experiments as ex
from . import qaoa
from .priors import PriorModel

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET = 0, 2, 3

log = logging.getLogger("bayesgrad")


class ConfigError(ValueError):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _prior_from(cfg) -> PriorModel:
    spec = cfg.get("prior", "five-freq")
    if spec == "five-freq":
        return ex.FIVE_FREQ_PRIOR
    if isinstance(spec, str):
        return PriorModel.load(spec)
    if isinstance(spec, dict):
        return PriorModel.from_dict(spec)
    raise ConfigError("prior must be 'five-freq', a file path or an object")


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _sibling(out, suffix):
    if out is None:
        return None
    p = Path(out)
    return p.with_name(p.stem + suffix + p.suffix)


def cmd_theory(cfg, args):
    prior = _prior_from(cfg)
    grid = cfg.get("m_grid", [10.0**e for e in range(1, 8)])
    methods = cfg.get("methods", ["BLGE", "ULGE", "SLGE"])
    _emit(ex.run_theory_curves(prior, grid, methods), args.out)


def cmd_priors(cfg, args):
    data, rms = ex.run_prior_study(cfg, args.threads)
    _emit(data, args.out)
    if args.out is not None:
        _emit(rms, _sibling(args.out, "_rms"))
    else:
        sys.stdout.write("\n" + rms)


def cmd_alloc(cfg, args):
    method = cfg.get("method", "BLGE")
    m = int(cfg.get("m", 100))
    if method == "PSR":
        if "zeta" not in cfg:
            raise ConfigError("PSR allocation needs 'zeta'")
        plan = al.psr_allocate(al.GeneratorDecomposition(np.asarray(cfg["zeta"], dtype=float)), m)
        doc = plan.to_dict()
        doc["predicted_error"] = al.psr_error(al.GeneratorDecomposition(cfg["zeta"]), cfg.get("sigma2", 1.0), m)
    else:
        prior = _prior_from(cfg)
        plan = al.allocate(method, prior, m)
        eb = al.error_budget(plan, prior, m, use_rounds=True)
        doc = plan.to_dict()
        doc["error"] = {"total": eb.total, "stat": eb.stat, "sys_per_frequency": list(map(float, eb.sys_per_frequency)),
                        "omega": eb.omega}
    _emit(json.dumps(doc, indent=2) + "\n", args.out)


def cmd_grad_bench(cfg, args):
    recs = ex.run_grad_bench(cfg, args.threads)
    _emit(ex.bench_csv(recs), args.out)
    summ = ex.summary_csv(ex.bench_summary(recs))
    if args.out is not None:
        _emit(summ, _sibling(args.out, "_summary"))
    else:
        sys.stdout.write("\n" + summ)


def cmd_optimize(cfg, args):
    if "graph" in cfg:
        g = qaoa.Graph.load(cfg["graph"]) if isinstance(cfg["graph"], str) else qaoa.Graph.from_dict(cfg["graph"])
    else:
        g = qaoa.random_graph(int(cfg.get("n_vertices", 8)), cfg.get("instance_seed", cfg["seed"]))
    L = int(cfg.get("n_layers", 4))
    method = cfg.get("method", "BLGE")
    m_g = cfg.get("m_g")
    if m_g is None:
        from .estimator import minimum_budget

        m_g = 3 * minimum_budget("PSR", g, 2 * L)
    trace = ex.optimize(g, L, method, int(m_g), int(cfg.get("iterations", 20)), float(cfg.get("eta0", 1.0)),
                        cfg["seed"], priors=cfg.get("priors", "exp-fit"), postprocess=bool(cfg.get("postprocess", False)))
    _emit(trace.to_csv(), args.out)


COMMANDS = {
    "theory": cmd_theory,
    "priors": cmd_priors,
    "alloc": cmd_alloc,
    "grad-bench": cmd_grad_bench,
    "optimize": cmd_optimize,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bayesgrad", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", help="output path (stdout if omitted)")
        sp.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = _load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        cfg.setdefault("seed", 0)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        COMMANDS[args.command](cfg, args)
    except al.InfeasibleBudget as exc:
        print(f"infeasible budget: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
