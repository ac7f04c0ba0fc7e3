"""Command-line front end.

Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .defender import (
    BlockingPlan,
    EdoConfig,
    PlanFitness,
    edo_run,
    exhaustive_defender,
    greedy_defender,
    parse_fitness_mode,
    value_ec_defender,
)
from .dp import DEFAULT_MAX_STATES, DPSolver, dp_solver
from .experiment import ExperimentSpec, run_experiment
from .graph import load_graph, prune_irrelevant, serialize_graph
from .kernel import CondensedGraph, build_condensed
from .mdp import AttackerState, attacker_mdp, describe
from .montecarlo import make_policy, simulate
from .synth import Distribution, GenConfig, generate_graph

log = logging.getLogger("adharden")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _condensed(path) -> CondensedGraph:
    pruned, _ = prune_irrelevant(load_graph(path))
    return build_condensed(pruned)


def read_plan(cg: CondensedGraph, spec: str) -> BlockingPlan:
    """``"empty"`` or a file with one blocked edge per line as ``src dst``."""
    n = len(cg.bw_set)
    if spec == "empty":
        return BlockingPlan((0,) * n)
    g = cg.base
    blocked = []
    for lineno, raw in enumerate(Path(spec).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 2:
            raise ValueError(f"{spec}:{lineno}: expected 'src dst'")
        try:
            eid = g.edge_id(g.index(tok[0]), g.index(tok[1]))
        except (KeyError, ValueError):
            raise ValueError(f"{spec}:{lineno}: edge {tok[0]} -> {tok[1]} not in pruned graph") from None
        if eid not in cg.bw_set:
            raise ValueError(f"{spec}:{lineno}: edge {tok[0]} -> {tok[1]} is not block-worthy")
        blocked.append(eid)
    return BlockingPlan.from_edges(cg, blocked)


def _emit(obj, out=None) -> None:
    line = json.dumps(obj, sort_keys=True)
    if out is None:
        print(line)
    else:
        out.write(line + "\n")


# -- subcommands ------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = GenConfig(
        n_computers=args.computers,
        seed=args.seed,
        distribution=args.distribution,
        n_entry_candidates=args.candidates,
        n_entries=args.entries,
        n_nodes=args.nodes,
        core_fraction=args.core_fraction,
        edge_ratio=args.edge_ratio,
    )
    text = f"# generated {json.dumps(cfg.to_dict(), sort_keys=True)}\n" + serialize_graph(generate_graph(cfg))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_kernelize(args) -> int:
    sys.stdout.write(_condensed(args.graph).summary())
    return EXIT_OK


def cmd_attack(args) -> int:
    cg = _condensed(args.graph)
    plan = read_plan(cg, args.plan)
    mdp = attacker_mdp(cg)
    solver = DPSolver(mdp, args.max_states)
    v = solver.value(mdp.initial_state(plan.blocked_edges(cg)))
    print(f"value {v!r}")
    print(f"states_expanded {solver.table.states_expanded}")
    print(f"memo {solver.table.peak_memo}")
    if args.dump_policy:
        Path(args.dump_policy).write_text(solver.table.dump(mdp.n))
    return EXIT_OK


def cmd_defend(args) -> int:
    parse_fitness_mode(args.fitness)
    cg = _condensed(args.graph)
    fitness = PlanFitness(cg, args.fitness, args.seed, args.max_states)
    history = []
    if args.policy in ("edo", "vec"):
        cfg = EdoConfig(pop_size=args.pop, iterations=args.iters, k=args.budget,
                        window=args.window, seed=args.seed, fitness=args.fitness,
                        max_states=args.max_states)
        run = edo_run if args.policy == "edo" else value_ec_defender
        res = run(cg, cfg, fitness)
        plan, history = res.best_plan, res.history
    elif args.policy == "greedy":
        plan = greedy_defender(cg, args.budget, fitness)
    else:
        plan, _ = exhaustive_defender(cg, args.budget, fitness)
    mdp = attacker_mdp(cg)
    value = dp_solver(cg, args.max_states).value(mdp.initial_state(plan.blocked_edges(cg)))
    out = open(args.out, "w") if args.out else None
    try:
        for rec in history:
            _emit({"type": "iteration", **rec}, out)
        _emit({
            "type": "result",
            "policy": args.policy,
            "k": args.budget,
            "seed": args.seed,
            "fitness_mode": args.fitness,
            "best_plan": plan.edge_labels(cg),
            "bits": str(plan),
            "dp_value": value,
            "evaluations": len(fitness.cache),
            "fallbacks": fitness.fallbacks,
        }, out)
    finally:
        if out is not None:
            out.close()
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cg = _condensed(args.graph)
    plan = read_plan(cg, args.plan)
    policy = make_policy(args.policy, cg, args.max_states)
    report = simulate(cg, plan, policy, args.episodes, args.seed)
    _emit({"type": "simulation", "policy": args.policy, **report.to_dict()})
    return EXIT_OK


def cmd_experiment(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    records = run_experiment(spec, output=args.out)
    agg = records[-1]
    print(f"wrote {args.out or spec.output}: {agg['succeeded']}/{agg['seeds']} seeds ok")
    return EXIT_OK


def cmd_transition(args) -> int:
    cg = _condensed(args.graph)
    mdp = attacker_mdp(cg)
    body = args.state.strip().lstrip("<").rstrip(">").replace(",", "").replace(" ", "")
    if len(body) != mdp.n:
        raise UsageError(f"state must have {mdp.n} entries, got {len(body)}")
    try:
        s = AttackerState.parse(body)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    dist = mdp.transition(s, args.action, closure=not args.raw)
    sys.stdout.write(describe(mdp, dist))
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adharden", description="Attack-graph hardening toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic attack graph")
    g.add_argument("--computers", type=int, default=500)
    g.add_argument("--nodes", type=int, default=None, help="node count (default 3 per computer)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--distribution", type=Distribution.parse, default=Distribution.INDEPENDENT,
                   help="independent | positive | negative")
    g.add_argument("--entries", type=int, default=20)
    g.add_argument("--candidates", type=int, default=40)
    g.add_argument("--core-fraction", type=float, default=GenConfig.core_fraction)
    g.add_argument("--edge-ratio", type=float, default=GenConfig.edge_ratio)
    g.add_argument("--out", help="output path (default stdout)")
    g.set_defaults(func=cmd_generate)

    k = sub.add_parser("kernelize", help="print the condensed-graph summary")
    k.add_argument("--graph", required=True)
    k.set_defaults(func=cmd_kernelize)

    a = sub.add_parser("attack", help="exact attacker value for a plan")
    a.add_argument("--graph", required=True)
    a.add_argument("--plan", default="empty", help="'empty' or a file of 'src dst' lines")
    a.add_argument("--dump-policy", metavar="PATH", help="write 'code state action value' lines")
    a.add_argument("--max-states", type=int, default=DEFAULT_MAX_STATES)
    a.set_defaults(func=cmd_attack)

    d = sub.add_parser("defend", help="search for a blocking plan")
    d.add_argument("--graph", required=True)
    d.add_argument("--policy", choices=["edo", "vec", "greedy", "exhaustive"], default="edo")
    d.add_argument("--budget", type=int, default=5)
    d.add_argument("--pop", type=int, default=100)
    d.add_argument("--iters", type=int, default=10_000)
    d.add_argument("--window", type=float, default=0.1)
    d.add_argument("--fitness", default="dp", help="dp | mc:<episodes>")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--max-states", type=int, default=DEFAULT_MAX_STATES)
    d.add_argument("--out", help="write JSON lines here instead of stdout")
    d.set_defaults(func=cmd_defend)

    e = sub.add_parser("evaluate", help="Monte Carlo success rate of an attacker policy")
    e.add_argument("--graph", required=True)
    e.add_argument("--plan", default="empty")
    e.add_argument("--policy", choices=["dp", "random", "greedy"], default="dp")
    e.add_argument("--episodes", type=int, default=100_000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--max-states", type=int, default=DEFAULT_MAX_STATES)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="run a seed sweep from a JSON spec")
    x.add_argument("--spec", required=True)
    x.add_argument("--out", help="override the spec's output path")
    x.set_defaults(func=cmd_experiment)

    t = sub.add_parser("transition", help="print one transition distribution")
    t.add_argument("--graph", required=True)
    t.add_argument("--state", required=True, help="e.g. '<?,S,F>'")
    t.add_argument("--action", type=int, required=True, help="NSP id")
    t.add_argument("--raw", action="store_true", help="skip status propagation")
    t.set_defaults(func=cmd_transition)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"adharden {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"adharden {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
