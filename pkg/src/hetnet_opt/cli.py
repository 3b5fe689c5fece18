"""Command line entry point: ``hetnet-opt {generate,solve,run}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

from .association import re_association, solve_fixed_association, solve_single_bs
from .corrective import solve_relaxed_fc
from .fw_solver import SolverOptions, solve_relaxed_fw
from .harness import (DISPLAY_NAMES, StrategySpec, metrics, parse_strategies, run_comparison,
                      write_report)
from .patterns import PatternSet, Topology, build_strategy_patterns
from .rates import FadingOptions, cached_rate_matrix
from .scenario import Scenario, ScenarioConfig, generate_scenario

log = logging.getLogger("hetnet_opt")

_PATTERN_FLAGS = {"all": "all", "reuse1": "reuse1", "od1": "od1", "od3": "od3",
                  "abs": "abs", "feature": "feature"}


def load_config(path) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    with open(path) as f:
        return ScenarioConfig.from_dict(json.load(f))


def load_scenario(args) -> Scenario:
    if args.scenario:
        with open(args.scenario) as f:
            return Scenario.from_dict(json.load(f))
    cfg = load_config(args.config)
    if args.users is not None:
        cfg.num_users = args.users
    return generate_scenario(cfg, args.seed)


def load_patterns(flag: str, scenario: Scenario) -> PatternSet:
    if flag.startswith("file:"):
        with open(flag[5:]) as f:
            ps = PatternSet.from_bitstrings(json.load(f))
        if ps.num_cells != scenario.num_cells:
            raise SystemExit("pattern file does not match the number of cells")
        return ps
    if flag not in _PATTERN_FLAGS:
        raise SystemExit(f"unknown pattern set {flag!r}")
    return build_strategy_patterns(_PATTERN_FLAGS[flag], Topology.from_scenario(scenario))


def solver_options(args) -> SolverOptions:
    return SolverOptions(epsilon=args.epsilon, gamma0=args.gamma0, beta=args.beta,
                         kappa=args.kappa, max_iters=args.max_iters,
                         inner_epsilon=args.inner_epsilon)


def write_trace(path, result) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(result.trace_columns())
        wr.writerows(result.trace)


def _add_solver_flags(p):
    p.add_argument("--epsilon", type=float, default=1.0, help="optimality tolerance (utility units)")
    p.add_argument("--gamma0", type=float, default=1e-4, help="initial Armijo step")
    p.add_argument("--beta", type=float, default=0.8, help="Armijo backtracking factor")
    p.add_argument("--kappa", type=float, default=0.1, help="Armijo sufficient-increase constant")
    p.add_argument("--max-iters", type=int, default=200_000)
    p.add_argument("--inner-epsilon", type=float, default=None,
                   help="restricted-solve tolerance for --alg fc (default epsilon/10)")
    p.add_argument("--alg", choices=("fw", "fc"), default="fc",
                   help="relaxed solver: Frank-Wolfe (fw) or fully corrective (fc)")


def _add_scenario_flags(p):
    p.add_argument("--config", help="ScenarioConfig JSON file")
    p.add_argument("--scenario", help="frozen Scenario JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=None, help="override the number of users")


def cmd_generate(args) -> int:
    sc = load_scenario(args)
    with open(args.out, "w") as f:
        json.dump(sc.to_dict(), f, indent=1)
    return 0


def cmd_solve(args) -> int:
    sc = load_scenario(args)
    pats = load_patterns(args.patterns, sc)
    fading = FadingOptions(args.fading, args.mc_samples, args.seed)
    rm = cached_rate_matrix(sc, pats, fading, args.rates_cache)
    opts = solver_options(args)
    w = sc.weights
    out = {"num_patterns": len(pats), "mode": args.mode, "alg": args.alg}

    if args.mode == "relaxed":
        res = (solve_relaxed_fw if args.alg == "fw" else solve_relaxed_fc)(rm, w, opts)
        alloc, certified = res.allocation, res.certified
        out.update(utility=res.utility, gap=res.gap, iterations=res.iterations,
                   active_patterns=res.active_patterns.tolist(),
                   allocation=alloc.to_dict())
        trace_src = res
    elif args.mode == "single":
        jr = solve_single_bs(rm, w, opts, args.alg)
        alloc, certified = jr.allocation, jr.certified
        out.update(jr.to_dict())
        trace_src = jr.relaxed_result
    else:
        runs = []
        certified = True
        for bias in args.re_bias:
            sr = solve_fixed_association(rm, re_association(sc, bias), w, opts, args.alg)
            m = metrics(sr.allocation.user_rates(rm), w)
            runs.append({"bias_db": bias, "utility": sr.utility, "gap": sr.gap,
                         "certified": sr.certified, **m.summary()})
            certified = certified and sr.certified
        out["re_bias"] = runs
        alloc, trace_src = None, None

    if alloc is not None:
        out["metrics"] = metrics(alloc.user_rates(rm), w).summary()
    out["certified"] = certified
    if args.trace and trace_src is not None:
        write_trace(args.trace, trace_src)
    text = json.dumps(out, indent=1)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        print(text)
    return 0 if certified else 1


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.users is not None:
        cfg.num_users = args.users
    specs = parse_strategies(args.strategies)
    if args.re_bias:
        for pats in args.re_patterns.split(","):
            specs += [StrategySpec.re_bias(b, pats) for b in args.re_bias]
    report = run_comparison(cfg, specs, args.drops, args.seed, solver_options(args), args.alg,
                            cache_dir=args.rates_cache, workers=args.workers)
    write_report(report, args.out, svg=args.svg)
    for name, agg in report.aggregate().items():
        if agg.get("drops_ok"):
            print(f"{name:28s} geo-mean {agg['geometric_mean'] / 1e6:8.3f} Mbit/s   "
                  f"sum {agg['sum_rate'] / 1e6:8.2f} Mbit/s")
        else:
            print(f"{name:28s} failed")
    return 0 if report.all_certified else 1


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hetnet-opt", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate and freeze a scenario")
    _add_scenario_flags(g)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="solve a single instance")
    _add_scenario_flags(s)
    _add_solver_flags(s)
    s.add_argument("--patterns", default="all",
                   help="all|reuse1|od1|od3|abs|feature|file:<path>")
    s.add_argument("--mode", choices=("relaxed", "single", "re"), default="single")
    s.add_argument("--re-bias", type=_floats, default=[0.0],
                   help="comma separated pico biases in dB (mode re)")
    s.add_argument("--fading", choices=("deterministic", "rayleigh_mc"), default="deterministic")
    s.add_argument("--mc-samples", type=int, default=1000)
    s.add_argument("--rates-cache", default=None, help="directory for cached rate tensors")
    s.add_argument("--trace", default=None, help="write the per-iteration trace CSV")
    s.add_argument("--out", default=None, help="result JSON (stdout if omitted)")
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("run", help="compare strategies over several drops")
    r.add_argument("--config", help="ScenarioConfig JSON file")
    r.add_argument("--users", type=int, default=None)
    r.add_argument("--strategies", default="all,feature,abs,od1,od3,reuse1",
                   help=f"comma list of {','.join(DISPLAY_NAMES)} or re:<bias>[:<patterns>]")
    r.add_argument("--re-bias", type=_floats, default=None,
                   help="add range-expansion strategies for these pico biases (dB)")
    r.add_argument("--re-patterns", default="feature,reuse1",
                   help="pattern sets paired with --re-bias")
    r.add_argument("--drops", type=int, default=5)
    r.add_argument("--seed", type=int, default=42)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--rates-cache", default=None)
    r.add_argument("--svg", action="store_true", help="also write SVG plots")
    r.add_argument("--out", required=True)
    _add_solver_flags(r)
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
