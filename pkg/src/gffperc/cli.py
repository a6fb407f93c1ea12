"""Command-line entry point: ``gffperc <command> [options]``.

Errors are reported as a JSON object on stderr with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from gffperc import tree_process as tp
from gffperc.exploration import (ExplorationParams, LazyGraphState, explore_component)
from gffperc.gff import Field, GaussianReservoir, sample_exact, sample_exact_sparse, sample_sequential
from gffperc.green import green_zero_average
from gffperc.harness import derive_seed, load_config, run_experiment, sweep
from gffperc.levelset import (ball_census, components, core_of, diameter, kernel,
                              sample_typical_distances)
from gffperc.multigraph import (generate_configuration_model, generate_simple, induced_subgraph,
                                read_graph, write_graph)


class _Parser(argparse.ArgumentParser):
    """Usage errors also come out as JSON on stderr."""

    def error(self, message):
        json.dump({"error": "UsageError", "message": message, "command": self.prog}, sys.stderr)
        sys.stderr.write("\n")
        sys.exit(2)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None)


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _load_graph(args):
    if args.graph:
        with open(args.graph) as fh:
            return read_graph(fh)
    if args.n is None:
        raise ValueError("give --graph or --n")
    rng = np.random.default_rng(derive_seed(_seed(args), ["graph"]))
    return generate_configuration_model(args.n, args.d, rng)


def _load_field(path: str, n: int) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    vals = np.zeros(n)
    vals[data[:, 0].astype(int)] = data[:, 1]
    return vals


# -- commands ----------------------------------------------------------------------


def cmd_generate(args) -> None:
    rng = np.random.default_rng(derive_seed(_seed(args), ["graph"]))
    gen = generate_simple if args.simple else generate_configuration_model
    g = gen(args.n, args.d, rng)
    out = _out_dir(args)
    if out is None:
        write_graph(g, sys.stdout)
    else:
        with open(out / "graph.txt", "w") as fh:
            write_graph(g, fh)


def cmd_sample(args) -> None:
    g = _load_graph(args)
    seed = derive_seed(_seed(args), ["field"])
    rng = np.random.default_rng(seed)
    green = None
    if args.method == "exact":
        green = green_zero_average(g)
        f = sample_exact(g, green, rng)
    elif args.method == "sparse":
        f = sample_exact_sparse(g, rng)
    else:
        green = green_zero_average(g)
        order = rng.permutation(g.n)
        f = sample_sequential(g, green, order, GaussianReservoir(seed=seed))
    out = _out_dir(args)
    if out is None:
        f.to_csv(sys.stdout)
    else:
        with open(out / "field.csv", "w") as fh:
            f.to_csv(fh)
        (out / "field_meta.json").write_text(json.dumps(
            {"seed": _seed(args), "reservoir_seed": seed, "method": args.method, "n": g.n, "d": g.d},
            sort_keys=True) + "\n")
    if args.green_out:
        green = green or green_zero_average(g)
        vals = np.ascontiguousarray(green.values, dtype="<f8")
        if args.green_format == "bin":
            vals.tofile(args.green_out)
        else:
            np.savetxt(args.green_out, vals, delimiter=",", fmt="%.17g")


def cmd_analyze(args) -> None:
    with open(args.graph) as fh:
        g = read_graph(fh)
    psi = Field(_load_field(args.field, g.n))
    comps = components(g, psi.level_set(args.h), args.h)
    c1 = comps.largest(0)
    core = core_of(induced_subgraph(g, c1))
    ker = kernel(core)
    summary = {"level": args.h, "sizes": comps.sizes[:10], "core_size": core.num_vertices,
               "kernel_size": ker.num_vertices, "diameter": diameter(g, c1) if len(c1) else 0}
    out = _out_dir(args)
    text = json.dumps(summary, sort_keys=True)
    if out is None:
        print(text)
        return
    (out / "components.json").write_text(text + "\n")
    census = ball_census(g, c1, args.k) if len(c1) else {}
    with open(out / "census.csv", "w") as fh:
        fh.write("code,count\n")
        for code, c in sorted(census.items()):
            fh.write(f"{code},{c}\n")
    if args.pairs and len(c1):
        rng = np.random.default_rng(derive_seed(_seed(args), ["distances"]))
        dist = sample_typical_distances(g, c1, args.pairs, rng)
        (out / "distances.csv").write_text("".join(f"{int(x)}\n" for x in dist))


def cmd_tree(args) -> None:
    seed = _seed(args)
    d, h = args.d, args.h
    out = _out_dir(args)
    if args.quantity == "eta":
        rec = tp.estimate_eta(d, h, args.K, args.replicas, seed).as_record()
    elif args.quantity == "lambda":
        est = tp.estimate_lambda(d, h, args.K, args.replicas, seed)
        rec = {"d": d, "h": h, "K": args.K, "replicas": args.replicas, "estimate": est.estimate,
               "std_error": est.std_error, "seed": seed}
    elif args.quantity == "hstar":
        iv = tp.estimate_h_star(d, K=args.K, replicas=args.replicas, seed=seed)
        rec = {"d": d, "K": args.K, "replicas": args.replicas, "lower": iv.lower, "upper": iv.upper,
               "seed": seed}
    elif args.quantity == "core-kernel":
        ck = tp.estimate_core_kernel_probs(d, h, args.K, args.replicas, seed)
        rec = {"d": d, "h": h, "K": args.K, "replicas": args.replicas, "k1": ck.k1,
               "k1_std_error": ck.k1_se, "k2": ck.k2, "k2_std_error": ck.k2_se, "seed": seed}
    elif args.quantity == "tail":
        tc = tp.finite_cluster_tail(d, h, range(1, args.max_size + 1), args.replicas, seed)
        slope, intercept, r2 = tc.log_tail_fit()
        rec = {"d": d, "h": h, "replicas": args.replicas, "slope": slope, "intercept": intercept,
               "r2": r2, "seed": seed}
        if out is not None:
            lines = ["size,tail"] + [f"{s},{t!r}" for s, t in zip(tc.sizes.tolist(), tc.tail.tolist())]
            (out / "tail.csv").write_text("\n".join(lines) + "\n")
    else:
        bd = tp.conditioned_ball_distribution(d, h, args.k, args.K, args.replicas, seed)
        rec = {"d": d, "h": h, "K": args.K, "k": args.k, "replicas": args.replicas,
               "surviving": bd.surviving, "seed": seed}
        if out is not None:
            lines = ["code,count"] + [f"{c},{v}" for c, v in sorted(bd.counts.items())]
            (out / "balls.csv").write_text("\n".join(lines) + "\n")
    text = json.dumps(rec, sort_keys=True)
    if out is None:
        print(text)
    else:
        (out / f"tree_{args.quantity}.json").write_text(text + "\n")


def cmd_explore(args) -> None:
    seed = _seed(args)
    lam = args.lambda_hat
    if lam is None:
        lam = tp.estimate_lambda(args.d, args.h, seed=seed).estimate
    params = ExplorationParams(args.kappa, args.log_power, lam, args.target)
    lines = []
    for i in range(args.replicas):
        ss = np.random.SeedSequence(seed, spawn_key=(i,))
        graph_ss, field_ss = ss.spawn(2)
        rng = np.random.default_rng(graph_ss)
        state = LazyGraphState(args.n, args.d, rng)
        res_seed = int(field_ss.generate_state(1, dtype=np.uint64)[0])
        o = explore_component(state, int(rng.integers(args.n)), args.h, params, args.mode,
                              GaussianReservoir(seed=res_seed))
        lines.append(json.dumps(o.as_record(seed=[seed, i]), sort_keys=True))
    out = _out_dir(args)
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        (out / "explore.jsonl").write_text(text)


def _experiment_overrides(args) -> dict:
    return {"kind": args.kind, "d": args.d, "h": args.h,
            "n_grid": tuple(args.n) if args.n else None, "replicas": args.replicas,
            "seed": args.seed, "method": args.method, "kappa": args.kappa,
            "log_power": args.log_power, "K": args.K, "tree_replicas": args.tree_replicas,
            "pairs": args.pairs, "out_dir": args.out, "threads": args.threads}


def cmd_experiment(args) -> None:
    cfg = load_config(args.config, **_experiment_overrides(args))
    res = run_experiment(cfg)
    if cfg.out_dir is None:
        print(json.dumps(res.summary_document(), sort_keys=True))


def _parse_value(s: str):
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def cmd_sweep(args) -> None:
    cfg = load_config(args.config, **_experiment_overrides(args))
    values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
    results = sweep(cfg, args.param, values)
    if cfg.out_dir is None:
        for v, r in zip(values, results):
            print(json.dumps({args.param: v, "summary": r.summary, "comparison": r.comparison},
                             sort_keys=True))


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kind", default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--n", type=int, nargs="+", default=None, help="n grid")
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--method", choices=["exact", "exploration"], default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--log-power", type=float, default=None)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--tree-replicas", type=int, default=None)
    p.add_argument("--pairs", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gffperc")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="configuration-model multigraph")
    _common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--simple", action="store_true", help="condition on simplicity")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sample", help="zero-average GFF on a graph")
    _common(p)
    p.add_argument("--graph", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--method", choices=["exact", "sparse", "sequential"], default="sparse")
    p.add_argument("--green-out", default=None, help="also dump the Green matrix here")
    p.add_argument("--green-format", choices=["csv", "bin"], default="csv")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("analyze", help="level-set components of a field")
    _common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--k", type=int, default=2, help="census radius")
    p.add_argument("--pairs", type=int, default=0, help="typical-distance samples")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("tree", help="tree-side estimates")
    _common(p)
    p.add_argument("quantity", choices=["eta", "lambda", "hstar", "core-kernel", "tail", "balls"])
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--K", type=int, default=tp.DEFAULT_K)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--replicas", type=int, default=10_000)
    p.add_argument("--max-size", type=int, default=200)
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("explore", help="lazy annealed explorations")
    _common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--replicas", type=int, default=100)
    p.add_argument("--mode", choices=["upper", "lower"], default="upper")
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--log-power", type=float, default=1.5)
    p.add_argument("--lambda-hat", type=float, default=None)
    p.add_argument("--target", type=float, default=None, help="boundary target override")
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("experiment", help="run one configured experiment")
    _common(p)
    _experiment_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", help="run an experiment over values of one parameter")
    _common(p)
    _experiment_flags(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # reported as JSON for scripted callers
        json.dump({"error": type(exc).__name__, "message": str(exc), "command": args.command},
                  sys.stderr)
        sys.stderr.write("\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
