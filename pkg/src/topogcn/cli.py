"""Command-line entry point: ``topogcn <subcommand> ...``.

Exit codes: 0 success, 1 configuration or input error, 2 numerical abort.
Per-group values (``--pstar``, ``--phat``) are indexed by the group label in
the groups CSV; ``gen-graph`` labels its first block 0 and its second 1.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import complexity
from .experiments import ConfigError, load_config, run_sweep
from .graph import (
    build_normalized_adjacency,
    generate_two_group_graph,
    group_by_degree,
    grouping_from_labels,
    read_edge_list,
    read_grouping_csv,
    values_by_label,
    write_edge_list,
    write_grouping_csv,
)
from .model import save_params
from .plot import emit_svg, read_series
from .sampling import (
    SamplingPlan,
    check_pstar_bound,
    check_sample_budget,
    draw,
    estimate_sampling_deviation,
    minimal_budget,
    plan_effective_adjacency,
    psi,
)
from .synth import SyntheticDataset, TargetSpec, gen_ahat, gen_features, gen_labels, read_dataset, split, write_dataset
from .train import NumericalAbort, TrainConfig, train_three_layer, train_two_layer

log = logging.getLogger("topogcn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

PLOT_DEFAULTS = {
    "n_train": ("n_train", "mean_test_loss", "config"),
    "m": ("m", "mean_test_loss", "config"),
    "sampler": ("phat", "mean_test_loss", "sampler"),
    "plan": ("plan", "ratio", "config"),
}


def _load_graph(args):
    g = read_edge_list(args.graph)
    if getattr(args, "groups", None):
        labels = read_grouping_csv(args.groups)
        if labels.size != g.n_nodes:
            raise ValueError("groups CSV does not match graph size")
    else:
        labels = group_by_degree(g, args.L).membership
    return g, labels, grouping_from_labels(g, labels)


def _write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def cmd_gen_graph(args) -> int:
    g = generate_two_group_graph(args.N1, args.N2, args.d1, args.d2, args.seed)
    write_edge_list(g, args.out)
    groups = args.groups or str(Path(args.out).with_suffix(".groups.csv"))
    write_grouping_csv(g.planted, g.degrees(), groups)
    A = build_normalized_adjacency(g)
    print(f"nodes={g.n_nodes} edges={g.n_edges} A_inf={A.inf_norm!r} -> {args.out}, {groups}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    g, labels, grouping = _load_graph(args)
    A = build_normalized_adjacency(g)
    phat = values_by_label(grouping, labels, args.phat)
    X = gen_features(g.n_nodes, args.d, args.seed, normalize=args.normalize)
    spec = TargetSpec.random(args.d, args.p, args.K, seed=args.seed + 1, form=args.form)
    Y = gen_labels(gen_ahat(A, grouping, phat), X, spec)
    omega, test = split(g.n_nodes, args.n_train, args.n_test, seed=args.seed + 2)
    write_dataset(SyntheticDataset(X, Y, omega, test, phat), args.out)
    print(f"X {X.shape}, Y {Y.shape}, train={omega.size}, test={test.size} -> {args.out}")
    return EXIT_OK


def _plan_from_args(args, grouping, labels, n):
    if args.plan == "fastgcn":
        return SamplingPlan.fastgcn(int(round(args.fraction * n)))
    pstar = values_by_label(grouping, labels, args.pstar)
    return SamplingPlan.fractional(grouping, pstar, args.fraction, symmetric=args.plan == "symmetric")


def cmd_train(args) -> int:
    g, labels, grouping = _load_graph(args)
    A = build_normalized_adjacency(g)
    ds = read_dataset(args.data)
    if ds.X.shape[0] != g.n_nodes:
        raise ValueError("dataset and graph disagree on node count")
    plan = _plan_from_args(args, grouping, labels, g.n_nodes)
    common = dict(eta=args.eta, T=args.T, T_w=args.Tw, batch=args.batch, m1=args.m, m2=args.m, seed=args.seed)
    if args.preset == "theory":
        cfg = TrainConfig.theory(args.m, args.m, eps0=args.eps0, C0=args.C0, **common)
    elif args.preset == "unit_l2":
        cfg = TrainConfig.unit_l2(**common)
    else:
        cfg = TrainConfig.practical(**common)
    log.info("preset=%s lambda_w=%g lambda_v=%g sigma_w=%g sigma_v=%g", cfg.preset, cfg.lambda_w, cfg.lambda_v,
             cfg.sigma_w, cfg.sigma_v)
    if args.arch == "3layer":
        params, report = train_three_layer(A, grouping, plan, ds.X, ds.Y, ds.omega, cfg, test=ds.test,
                                           log=log.info)
    else:
        astar = plan_effective_adjacency(A, grouping, plan)
        params, report = train_two_layer(lambda rng, step: draw(A, grouping, plan, rng, step), ds.X, ds.Y,
                                         ds.omega, cfg, test=ds.test, A_eval=astar, m=args.m)
    _write_table(args.out, ["t", "lambda_t", "train_loss", "test_loss"], report.rows())
    if args.checkpoint:
        save_params(params, args.checkpoint)
    print(f"final test loss {report.final_test_loss!r} ({report.wall_time:.1f}s) -> {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output.get("dir")
    if not out:
        raise ConfigError("no output directory: pass --out or set output.dir")
    raw, summary = run_sweep(cfg, out, jobs=args.jobs)
    print(f"{raw}\n{summary}")
    return EXIT_OK


def cmd_verify_sampling(args) -> int:
    if args.graph:
        g, labels, grouping = _load_graph(args)
    else:
        g = generate_two_group_graph(args.N1, args.N2, args.d1, args.d2, args.seed)
        labels = g.planted
        grouping = grouping_from_labels(g)
    A = build_normalized_adjacency(g)
    pstar = values_by_label(grouping, labels, args.pstar)
    ps = psi(grouping)
    sym = args.plan == "symmetric"
    strategy = "symmetric" if sym else "asymmetric"
    bound_ok = check_pstar_bound(pstar, ps, grouping.L, args.c1, sym)
    budgets = [("minimal", minimal_budget(grouping, pstar, args.c1, args.eps_poly, sym)),
               ("half", np.maximum(1, grouping.sizes // 2))]
    if args.budget:
        budgets.append(("given", values_by_label(grouping, labels, args.budget).astype(np.int64)))
    rows, trials = [], []
    for name, budget in budgets:
        plan = SamplingPlan(strategy, pstar, budget)
        plan.validate(grouping)
        ok = check_sample_budget(budget, grouping.sizes, pstar, ps, grouping.L, args.c1, args.eps_poly, sym)
        st = estimate_sampling_deviation(A, grouping, plan, args.trials, np.random.default_rng(args.seed))
        rows.append([name, "/".join(str(int(b)) for b in budget), bool(bound_ok.all()), bool(ok.all()),
                     st["astar_inf"], st["mean"], st["max"], st["mean"] / st["astar_inf"]])
        trials.extend([name, k, float(v)] for k, v in enumerate(st["trials"]))
    header = ["plan", "budget", "pstar_ok", "budget_ok", "astar_inf", "mean_dev", "max_dev", "ratio"]
    print(",".join(header))
    for r in rows:
        print(",".join(repr(v) if isinstance(v, float) else str(v) for v in r))
    if args.out:
        _write_table(args.out, header, rows)
    if args.trials_out:
        _write_table(args.trials_out, ["plan", "trial", "dev_inf"], trials)
    return EXIT_OK


def cmd_complexity(args) -> int:
    series = complexity.builtin_series(args.series, coeffs=args.coeffs)
    print(f"c_eps({args.series}, R={args.R!r}, eps={args.eps!r}) = {complexity.c_eps(series, args.R, args.eps, args.Cstar)!r}")
    print(f"c_s({args.series}, R={args.R!r}) = {complexity.c_s(series, args.R, args.Cstar)!r}")
    if args.A_inf is not None:
        Phi = complexity.builtin_series(args.Phi)
        k = complexity.derive_constants(series, Phi, args.A_inf, args.p1, args.p2, args.K, args.eps, args.Cstar)
        print(f"C={k.C!r} C'={k.C_prime!r} C''={k.C_dprime!r} C0={k.C0!r}")
    return EXIT_OK


def cmd_plot(args) -> int:
    with open(args.csv, newline="") as fh:
        header = next(csv.reader(fh), [])
    x, y, series = args.x, args.y, args.series
    if x is None:
        for key, (dx, dy, ds) in PLOT_DEFAULTS.items():
            if key in header:
                x, y, series = dx, y or dy, series or ds
                break
        else:
            raise ValueError("cannot infer plot columns; pass --x and --y")
    data = read_series(args.csv, x, y, series)
    emit_svg(data, args.out, x_label=x, y_label=y, title=args.title or "")
    print(f"-> {args.out}")
    return EXIT_OK


def _add_graph_args(p, required=True):
    p.add_argument("--graph", required=required, help="edge list with 'N M' header")
    p.add_argument("--groups", help="node,group CSV (default: k-means on degrees)")
    p.add_argument("--L", type=int, default=2, help="number of degree groups when clustering")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="topogcn", description="GCN training with graph topology sampling")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-graph", help="generate a two-group random graph")
    p.add_argument("--N1", type=int, default=100)
    p.add_argument("--N2", type=int, default=1900)
    p.add_argument("--d1", type=float, default=10)
    p.add_argument("--d2", type=float, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--groups", help="groups CSV path (default: <out>.groups.csv)")
    p.set_defaults(func=cmd_gen_graph)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset with its split")
    _add_graph_args(p)
    p.add_argument("--phat", type=float, nargs="+", required=True)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--form", choices=["sin_tanh", "sin"], default="sin_tanh")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--n-train", type=int, required=True)
    p.add_argument("--n-test", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model and write its report")
    _add_graph_args(p)
    p.add_argument("--data", required=True, help="directory with X.csv, Y.csv, split.csv")
    p.add_argument("--arch", choices=["2layer", "3layer"], default="3layer")
    p.add_argument("--plan", choices=["asymmetric", "symmetric", "fastgcn"], default="asymmetric")
    p.add_argument("--pstar", type=float, nargs="+", default=[0.7, 0.3])
    p.add_argument("--fraction", type=float, default=0.9)
    p.add_argument("--preset", choices=["theory", "practical", "unit_l2"], default="practical")
    p.add_argument("--eps0", type=float, default=0.1)
    p.add_argument("--C0", type=float, default=1.0)
    p.add_argument("--eta", type=float, default=1e-3)
    p.add_argument("--T", type=int, default=4)
    p.add_argument("--Tw", type=int, default=100)
    p.add_argument("--batch", type=int, default=5)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run or resume a sweep described by a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-sampling", help="Monte-Carlo check of sampling deviation and admissibility")
    _add_graph_args(p, required=False)
    p.add_argument("--N1", type=int, default=100)
    p.add_argument("--N2", type=int, default=1900)
    p.add_argument("--d1", type=float, default=10)
    p.add_argument("--d2", type=float, default=1)
    p.add_argument("--pstar", type=float, nargs="+", required=True)
    p.add_argument("--budget", type=int, nargs="+", help="extra plan with these per-group sample counts")
    p.add_argument("--plan", choices=["asymmetric", "symmetric"], default="asymmetric")
    p.add_argument("--c1", type=float, default=1.0)
    p.add_argument("--eps-poly", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="summary CSV, one row per plan")
    p.add_argument("--trials-out", help="per-trial CSV: plan,trial,dev_inf")
    p.set_defaults(func=cmd_verify_sampling)

    p = sub.add_parser("complexity", help="evaluate approximation and sample complexity sums")
    p.add_argument("--series", default="sin")
    p.add_argument("--coeffs", type=float, nargs="+", help="coefficients for --series poly")
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--Cstar", type=float, default=1.0)
    p.add_argument("--A-inf", dest="A_inf", type=float, help="also derive width/step constants")
    p.add_argument("--Phi", default="sin")
    p.add_argument("--p1", type=int, default=1)
    p.add_argument("--p2", type=int, default=1)
    p.add_argument("--K", type=int, default=1)
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("plot", help="render a summary CSV as an SVG line chart")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--x")
    p.add_argument("--y")
    p.add_argument("--series")
    p.add_argument("--title")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except complexity.SeriesNotConverged as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
