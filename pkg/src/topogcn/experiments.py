"""Sweep runner for the figure experiments.

A sweep is fully described by a YAML document (see README). It expands into
cells, one per (graph config, sweep value, sampler, dataset, seed); each cell
is a pure function of its own description, identified by a hash of that
description plus the seed. Raw results are kept one row per cell so reruns
only compute missing cells, and summaries average over seeds.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .graph import build_normalized_adjacency, generate_two_group_graph, grouping_from_labels, values_by_label
from .sampling import SamplingPlan, estimate_sampling_deviation, minimal_budget, plan_effective_adjacency
from .synth import TargetSpec, gen_ahat, gen_features, gen_labels, split
from .train import NumericalAbort, TrainConfig, train_three_layer, with_schedule

log = logging.getLogger(__name__)

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "expand_cells",
    "run_cell",
    "run_sweep",
    "summarize",
    "RAW_COLUMNS",
]

EXPERIMENTS = ("sample_complexity", "width_sweep", "astar_match", "sampling_deviation")

RAW_COLUMNS = ["cell", "seed", "config", "a_inf", "n_train", "m", "sampler", "phat", "status",
               "train_loss", "test_loss"]
DEV_COLUMNS = ["cell", "seed", "config", "plan", "budget", "a_inf", "mean_dev", "max_dev", "ratio"]

SUMMARY_COLUMNS = {
    "sample_complexity": ["config", "a_inf", "n_train", "mean_test_loss", "std_test_loss", "n_ok"],
    "width_sweep": ["config", "a_inf", "m", "mean_test_loss", "std_test_loss", "n_ok"],
    "astar_match": ["config", "phat", "sampler", "mean_test_loss", "std_test_loss", "n_ok"],
    "sampling_deviation": ["config", "plan", "budget", "a_inf", "mean_dev", "max_dev", "ratio"],
}

DEFAULTS = {
    "graph": {"N1": 100, "N2": 1900, "d1": 10, "d2": 1, "seed": 7},
    "data": {"d": 10, "p": 10, "K": 2, "form": "sin_tanh", "normalize": False},
    "plan": {"strategy": "asymmetric", "pstar": [0.7, 0.3], "fraction": 0.9},
    "train": {"preset": "practical", "eta": 1e-3, "batch": 5, "m": 500, "T": 4, "dropout": 0.4,
              "lambda_w": 1e-4, "lambda_v": 1e-4},
    "sweep": {},
    "trials": 1000,
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Parsed sweep document with defaults filled in.

    Per-group values (``pstar``, ``phat``) are listed in generator order:
    first the ``N1`` block, then the ``N2`` block.
    """

    experiment: str
    seeds: list
    graph: dict
    data: dict
    plan: dict
    train: dict
    sweep: dict
    output: dict = field(default_factory=dict)
    trials: int = 1000

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        for key, vals in self.sweep.items():
            if isinstance(vals, list) and not vals:
                raise ConfigError(f"sweep value list {key!r} is empty")
        need = {"sample_complexity": "n_train", "width_sweep": "m", "astar_match": "phat",
                "sampling_deviation": "plans"}[self.experiment]
        if need not in self.sweep:
            raise ConfigError(f"{self.experiment} requires sweep.{need}")


def _merge(base: dict, over: dict | None) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(doc) - {"experiment", "seeds", "graph", "data", "plan", "train", "sweep", "output", "trials"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "experiment" not in doc:
        raise ConfigError("missing 'experiment'")
    merged = _merge(DEFAULTS, {k: v for k, v in doc.items() if k in DEFAULTS})
    cfg = ExperimentConfig(
        experiment=doc["experiment"],
        seeds=[int(s) for s in doc.get("seeds", [0])],
        graph=merged["graph"], data=merged["data"], plan=merged["plan"], train=merged["train"],
        sweep=merged["sweep"], output=doc.get("output", {}) or {}, trials=int(merged["trials"]),
    )
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(str(exc)) from exc
    return config_from_dict(doc)


def _graph_configs(cfg: ExperimentConfig) -> list[dict]:
    """The ``graph.configs`` list (each overriding the base graph), or the base graph."""
    base = {k: v for k, v in cfg.graph.items() if k != "configs"}
    configs = cfg.graph.get("configs") or [{}]
    return [_merge(base, c) for c in configs]


def _label(g: dict) -> str:
    return g.get("label") or f"N{g['N1']}-{g['N2']}_d{g['d1']}-{g['d2']}"


def raw_n(g: dict) -> int:
    return int(g["N1"]) + int(g["N2"])


def _cell_hash(cell: dict) -> str:
    body = {k: v for k, v in cell.items() if k != "seed"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def expand_cells(cfg: ExperimentConfig) -> list[dict]:
    """Every cell of the sweep in canonical order (config, sweep value, sampler, seed)."""
    cells = []
    for g in _graph_configs(cfg):
        gsp = {k: v for k, v in g.items() if k != "label"}
        base = {"experiment": cfg.experiment, "graph": gsp, "config": _label(g), "data": cfg.data,
                "plan": cfg.plan, "train": cfg.train}
        if cfg.experiment == "sample_complexity":
            # shared test set: the nodes outside the largest training set
            n_test = raw_n(g) - max(int(n) for n in cfg.sweep["n_train"])
            variants = [{"n_train": int(n), "n_test": n_test} for n in cfg.sweep["n_train"]]
        elif cfg.experiment == "width_sweep":
            n = int(cfg.sweep.get("n_train", [1500])[0] if isinstance(cfg.sweep.get("n_train"), list)
                    else cfg.sweep.get("n_train", 1500))
            variants = [{"n_train": n, "m": int(m)} for m in cfg.sweep["m"]]
        elif cfg.experiment == "astar_match":
            n = int(cfg.sweep.get("n_train", 500))
            samplers = cfg.sweep.get("samplers", ["ours", "fastgcn"])
            variants = [{"n_train": n, "phat": [float(x) for x in ph], "sampler": s}
                        for s in samplers for ph in cfg.sweep["phat"]]
        else:
            variants = [{"dev_plan": p, "trials": cfg.trials} for p in cfg.sweep["plans"]]
        for v in variants:
            for seed in cfg.seeds:
                cell = _merge(base, v)
                cell["seed"] = int(seed)
                cell["cell"] = _cell_hash(cell)
                cells.append(cell)
    return cells


def _seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _build(cell: dict):
    g = cell["graph"]
    raw = generate_two_group_graph(g["N1"], g["N2"], g["d1"], g["d2"], seed=g["seed"])
    A = build_normalized_adjacency(raw)
    grouping = grouping_from_labels(raw)
    return raw, A, grouping


def _plan(cell: dict, grouping, raw, N: int) -> SamplingPlan:
    p = cell["plan"]
    strategy = cell.get("sampler", "ours")
    if strategy == "fastgcn" or p.get("strategy") == "fastgcn":
        return SamplingPlan.fastgcn(int(round(p.get("fraction", 0.9) * N)))
    pstar = values_by_label(grouping, raw.planted, p["pstar"])
    return SamplingPlan.fractional(grouping, pstar, p.get("fraction", 0.9), symmetric=p.get("strategy") == "symmetric")


def _train_config(cell: dict, seed: int) -> TrainConfig:
    t = cell["train"]
    m = int(cell.get("m", t.get("m", 500)))
    common = dict(eta=float(t["eta"]), batch=int(t["batch"]), m1=m, m2=m, seed=seed)
    preset = t.get("preset", "practical")
    if preset == "theory":
        cfg = TrainConfig.theory(m, m, eps0=float(t.get("eps0", 0.1)), C0=float(t.get("C0", 1.0)), **common)
    elif preset == "unit_l2":
        cfg = TrainConfig.unit_l2(dropout_rate=float(t["dropout"]), **common)
    elif preset == "practical":
        cfg = TrainConfig.practical(lambda_w=float(t["lambda_w"]), lambda_v=float(t["lambda_v"]),
                                    dropout_rate=float(t["dropout"]), dropout_on=float(t["dropout"]) > 0, **common)
    else:
        raise ConfigError(f"unknown preset {preset!r}")
    return with_schedule(cfg, int(cell["n_train"]), int(t.get("T", 4)))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return "/".join(_fmt(float(x)) for x in v)
    return str(v)


def run_cell(cell: dict) -> dict:
    """Compute one cell; training aborts become ``status=abort`` rows with NaN losses."""
    raw, A, grouping = _build(cell)
    N = raw.n_nodes
    s_x, s_w, s_split, s_train = _seeds(cell["seed"], 4)
    if cell["experiment"] == "sampling_deviation":
        return _deviation_cell(cell, raw, A, grouping, s_train)
    plan = _plan(cell, grouping, raw, N)
    astar = plan_effective_adjacency(A, grouping, plan)
    d = cell["data"]
    phat = cell.get("phat", d.get("phat", cell["plan"]["pstar"]))
    ahat = gen_ahat(A, grouping, values_by_label(grouping, raw.planted, phat))
    X = gen_features(N, int(d["d"]), s_x, normalize=bool(d.get("normalize", False)))
    spec = TargetSpec.random(int(d["d"]), int(d["p"]), int(d["K"]), seed=s_w, form=d.get("form", "sin_tanh"))
    Y = gen_labels(ahat, X, spec)
    n_test = cell.get("n_test")
    omega, test = split(N, int(cell["n_train"]), n_test, seed=s_split, nested=n_test is not None)
    cfg = _train_config(cell, s_train)
    row = {"cell": cell["cell"], "seed": cell["seed"], "config": cell["config"], "a_inf": astar.inf_norm,
           "n_train": int(cell["n_train"]), "m": cfg.m1, "sampler": cell.get("sampler", "ours"),
           "phat": _fmt([float(x) for x in phat])}
    try:
        _, report = train_three_layer(A, grouping, plan, X, Y, omega, cfg, test=test)
        row.update(status="ok", train_loss=report.train_loss[-1], test_loss=report.final_test_loss)
    except NumericalAbort as exc:
        log.warning("cell %s seed %s aborted: %s", cell["cell"], cell["seed"], exc)
        row.update(status="abort", train_loss=float("nan"), test_loss=float("nan"))
    return row


def _deviation_cell(cell, raw, A, grouping, seed):
    spec = cell["dev_plan"]
    pstar = values_by_label(grouping, raw.planted, spec["pstar"])
    symmetric = spec.get("strategy", "asymmetric") == "symmetric"
    if spec.get("budget", "minimal") == "minimal":
        budget = minimal_budget(grouping, pstar, float(spec.get("c1", 1.0)), float(spec.get("eps_poly", 0.1)),
                                symmetric)
        plan = SamplingPlan("symmetric" if symmetric else "asymmetric", pstar, budget)
    else:
        plan = SamplingPlan.fractional(grouping, pstar, float(spec["budget"]), symmetric)
    stats = estimate_sampling_deviation(A, grouping, plan, int(cell["trials"]), np.random.default_rng(seed))
    return {"cell": cell["cell"], "seed": cell["seed"], "config": cell["config"],
            "plan": spec.get("label", _fmt(spec["pstar"])), "budget": _fmt(plan.budget.astype(float)),
            "a_inf": stats["astar_inf"], "mean_dev": stats["mean"], "max_dev": stats["max"],
            "ratio": stats["mean"] / stats["astar_inf"]}


def _read_rows(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_rows(path: Path, columns, rows) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    os.replace(tmp, path)


def run_sweep(cfg: ExperimentConfig, outdir, jobs: int = 1) -> tuple[Path, Path]:
    """Run missing cells, then write ``raw.csv`` and ``summary.csv`` under ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    raw_path, summary_path = out / "raw.csv", out / "summary.csv"
    columns = DEV_COLUMNS if cfg.experiment == "sampling_deviation" else RAW_COLUMNS
    cells = expand_cells(cfg)
    done = {(r["cell"], r["seed"]): r for r in _read_rows(raw_path)}
    todo = [c for c in cells if (c["cell"], str(c["seed"])) not in done]
    log.info("%d cells, %d cached, %d to run", len(cells), len(cells) - len(todo), len(todo))

    def record(row):
        done[(row["cell"], str(row["seed"]))] = {k: _fmt(v) for k, v in row.items()}
        ordered = [done[k] for k in ((c["cell"], str(c["seed"])) for c in cells) if k in done]
        _write_rows(raw_path, columns, ordered)

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for row in pool.map(run_cell, todo):
                record(row)
    else:
        for cell in todo:
            record(run_cell(cell))
    if not todo:
        _write_rows(raw_path, columns, [done[(c["cell"], str(c["seed"]))] for c in cells])
    rows = [done[(c["cell"], str(c["seed"]))] for c in cells]
    _write_rows(summary_path, SUMMARY_COLUMNS[cfg.experiment], summarize(cfg.experiment, rows))
    return raw_path, summary_path


def summarize(experiment: str, rows: list[dict]) -> list[dict]:
    """Seed-averaged rows in first-seen order of their keys."""
    if experiment == "sampling_deviation":
        return [{k: r[k] for k in SUMMARY_COLUMNS[experiment]} for r in rows]
    key_cols = {"sample_complexity": ("config", "n_train"), "width_sweep": ("config", "m"),
                "astar_match": ("config", "phat", "sampler")}[experiment]
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in key_cols), []).append(r)
    out = []
    for key, members in groups.items():
        vals = np.array([float(r["test_loss"]) for r in members if r["status"] == "ok"])
        rec = dict(zip(key_cols, key))
        rec["a_inf"] = float(members[0]["a_inf"])
        rec["mean_test_loss"] = float(vals.mean()) if vals.size else float("nan")
        rec["std_test_loss"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        rec["n_ok"] = int(vals.size)
        out.append(rec)
    return out
