"""Command-line entry point: ``desgrada <command> ...``.

Exit codes: 0 success, 2 usage/config/data error, 3 numeric divergence.
Results go to standard output as one JSON object; tables optionally to CSV.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .graph import GraphFormatError, partition_by_density
from .metrics import EnergyModel, divergence_report, energy_estimate, write_csv
from .parallel import parallel_map, worker_count
from .spiking import GraphTrace, prop1_config, prop1_powerlaw
from .trainer import (
    EVAL_SEED,
    ConfigError,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    pseudo_label_round,
    predict,
    train,
)
from .tu import (
    TULoadError,
    directory_fingerprint,
    load_tudataset,
    read_tu_raw,
    write_partition_manifest,
    write_tu_subsets,
    write_tudataset,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")


def _atomic_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# datasets

def resolve_tu(directory) -> tuple[Path, str]:
    """Locate a TU dataset in ``directory``; its name is the ``*_A.txt`` prefix."""
    directory = Path(directory)
    if not directory.is_dir():
        raise UsageError(f"dataset directory {directory} does not exist")
    if (directory / f"{directory.name}_A.txt").exists():
        return directory, directory.name
    found = sorted(p.name[:-len("_A.txt")] for p in directory.glob("*_A.txt"))
    if len(found) != 1:
        raise UsageError(f"expected exactly one *_A.txt in {directory}, found {len(found)}")
    return directory, found[0]


def _load(directory, data_opts: dict, class_values=None, domain_tag="source"):
    root, name = resolve_tu(directory)
    return load_tudataset(root, name, max_degree=data_opts["max_degree"], class_values=class_values,
                          domain_tag=domain_tag, normalize=not data_opts["raw_attributes"])


def _class_union(*dirs) -> list[int]:
    values = set()
    for d in dirs:
        root, name = resolve_tu(d)
        values.update(np.unique(read_tu_raw(root, name).graph_labels).tolist())
    return sorted(int(v) for v in values)


def _add_data_flags(p):
    p.add_argument("--max-degree", type=int, default=50,
                   help="cap for one-hot degree features when a dataset has no node attributes (default 50)")
    p.add_argument("--raw-attributes", action="store_true",
                   help="use node attributes as stored (must lie in [0, 1]) instead of min-max scaling them")


# ---------------------------------------------------------------------------
# config

def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


_CONFIG_DEFAULTS = TrainConfig().to_flat()
_METAVARS = {_parse_bool: "BOOL", int: "INT", float: "FLOAT", str: "TEXT"}


def _add_config_flags(p):
    group = p.add_argument_group("config overrides (each replaces the config-file value)")
    for key, default in _CONFIG_DEFAULTS.items():
        if key == "seed":
            continue
        kind = _parse_bool if isinstance(default, bool) else type(default)
        group.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", type=kind, default=None,
                           metavar=_METAVARS.get(kind, "VALUE"),
                           help=f"default {default!r}")


def read_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            values = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: config must be flat key/value pairs, found tables {nested}")
    for key, value in values.items():
        default = _CONFIG_DEFAULTS.get(key)
        if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            values[key] = float(value)
        elif default is not None and type(value) is not type(default):
            raise ConfigError(f"{path}: {key} must be {type(default).__name__}, got {type(value).__name__}")
    return values


def resolve_config(args) -> TrainConfig:
    values = read_config_file(args.config) if args.config else {}
    for key in _CONFIG_DEFAULTS:
        override = getattr(args, f"cfg_{key}", None)
        if override is not None:
            values[key] = override
    if args.seed is not None:
        values["seed"] = args.seed
    cfg = TrainConfig.from_flat(values)
    return cfg.source_only() if args.source_only else cfg


# ---------------------------------------------------------------------------
# commands

def cmd_partition(args) -> int:
    if args.k < 2:
        raise UsageError("--k must be at least 2")
    ds = _load(args.data, {"max_degree": args.max_degree, "raw_attributes": args.raw_attributes})
    if args.name and args.name != ds.name:
        raise UsageError(f"--name {args.name!r} does not match dataset {ds.name!r} in {args.data}")
    parts = partition_by_density(ds, args.metric, args.k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = [p.name for p in parts]
    root, name = resolve_tu(args.data)
    write_tu_subsets(root, name, [[g.index for g in p.graphs] for p in parts], out, names)
    manifest = write_partition_manifest(out, ds.name, args.metric, args.k, parts)
    _emit({"dataset": ds.name, "metric": args.metric, "k": args.k, "manifest": str(manifest),
           "parts": {p.name: len(p) for p in parts}})
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import domain_shift_benchmark

    src, tgt = domain_shift_benchmark(
        args.seed, n_graphs=args.graphs, source_degree=args.source_degree, target_degree=args.target_degree,
        nodes=(args.nodes_min, args.nodes_max), ratio=args.ratio, feature_noise=args.feature_noise,
        degree_features=args.degree_features, degree_scale=args.degree_scale)
    out = Path(args.out)
    paths = {}
    for ds in (src, tgt):
        paths[ds.name] = str(write_tudataset(ds, out / ds.name, ds.name))
    _emit({"seed": args.seed, "graphs": args.graphs, "paths": paths})
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    data_opts = {"max_degree": args.max_degree, "raw_attributes": args.raw_attributes}
    dirs = [args.source] + ([args.target] if args.target else [])
    classes = _class_union(*dirs)
    source = _load(args.source, data_opts, classes, "source")
    target = _load(args.target, data_opts, classes, "target") if args.target else None
    if target is None and not args.source_only:
        raise UsageError("--target is required unless --source-only is given")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"checkpoint": str(out / "model.ckpt"), "history": str(out / "history.csv"),
             "steps": str(out / "steps.csv"), "manifest": str(out / "manifest.json")}
    manifest = {
        "config": cfg.to_flat(),
        "seed": cfg.seed,
        "source_only": bool(args.source_only),
        "data": {**data_opts, "class_values": classes},
        "datasets": {tag: {"path": str(resolve_tu(d)[0]), "name": resolve_tu(d)[1],
                           "sha256": directory_fingerprint(*resolve_tu(d))}
                     for tag, d in zip(("source", "target"), dirs)},
        "version": __version__,
        "started": _now(),
        "finished": None,
        "status": "running",
        "outputs": paths,
    }
    _atomic_json(out / "manifest.json", manifest)
    extra = {"config": cfg.to_flat(), "data": manifest["data"]}
    status, code = "completed", EXIT_OK
    try:
        model, history = train(cfg, source, target)
    except TrainingDiverged as err:
        model, history = err.model, err.history
        status, code = f"diverged: {err}", EXIT_NUMERIC
        print(f"error: training diverged ({err}); last finite checkpoint kept", file=sys.stderr)
    save_checkpoint(model, out / "model.ckpt", extra)
    history.to_csv(out / "history.csv")
    step_cols = ("epoch", "batch", "l_s", "l_t", "l_ad", "lambda_coeff", "total")
    write_csv(out / "steps.csv", step_cols, ([repr(r[c]) if isinstance(r[c], float) else r[c] for c in step_cols]
                                             for r in history.steps))
    manifest.update(finished=_now(), status=status)
    _atomic_json(out / "manifest.json", manifest)
    last = history.epochs[-1] if history.epochs else {}
    _emit({"status": status, "epochs": len(history.epochs), "outputs": paths,
           "final": {k: last.get(k) for k in ("l_s", "l_t", "l_ad", "src_acc", "tgt_acc")}})
    return code


def _model_and_data(args, domain_tag="target"):
    model, extra = load_checkpoint(args.model)
    data = extra.get("data", {"max_degree": 50, "raw_attributes": False, "class_values": None})
    if getattr(args, "max_degree", None) is not None:
        data = {**data, "max_degree": args.max_degree}
    if getattr(args, "raw_attributes", False):
        data = {**data, "raw_attributes": True}
    ds = _load(args.data, data, data.get("class_values"), domain_tag)
    if ds.feature_dim != model.feature_dim:
        raise ConfigError(f"dataset feature_dim {ds.feature_dim} does not match model ({model.feature_dim})")
    return model, ds


def cmd_eval(args) -> int:
    model, ds = _model_and_data(args)
    res = evaluate(model, ds, args.seed, args.samples)
    if args.csv:
        probs = np.exp(res.logits)
        write_csv(args.csv, ["graph", "label", "prediction"] + [f"p{c}" for c in range(model.num_classes)],
                  ([g.index, g.label, int(p)] + [repr(float(x)) for x in pr]
                   for g, p, pr in zip(ds.graphs, res.predictions, probs)))
    _emit({"dataset": ds.name, "graphs": len(ds), "accuracy": res.accuracy,
           "per_class": {str(c): {"correct": k, "total": n} for c, (k, n) in res.per_class.items()}})
    return EXIT_OK


def _prop1_job(job):
    seed, nodes, exponent, trials, lif = job
    r = prop1_powerlaw(seed, nodes, exponent, trials, prop1_config(**lif))
    return seed, r


def _analyze_correlation(args) -> dict:
    lif = {"aggregation": args.aggregation, "ema_alpha": args.alpha, "v_th_init": args.threshold, "T": args.T}
    jobs = [(args.seed + i, args.nodes, args.exponent, args.trials, lif) for i in range(args.seeds)]
    results = parallel_map(_prop1_job, jobs)
    per_seed = [{"seed": s, "fixed_corr": r.fixed_corr, "adaptive_corr": r.adaptive_corr} for s, r in results]
    if args.csv:
        write_csv(args.csv, ["seed", "aggregated_weight", "fixed_frequency", "adaptive_frequency", "degree"],
                  ([s, repr(w), repr(ff), repr(fa), d] for s, r in results for w, ff, fa, d in r.records))
    return {
        "fixed_corr": float(np.mean([p["fixed_corr"] for p in per_seed])),
        "adaptive_corr": float(np.mean([p["adaptive_corr"] for p in per_seed])),
        "adaptive_lower": int(sum(abs(p["adaptive_corr"]) < abs(p["fixed_corr"]) for p in per_seed)),
        "seeds": per_seed,
    }


def _analyze_energy(args) -> dict:
    model, ds = _model_and_data(args)
    _, _, outputs = predict(model, ds, args.seed)
    traces = []
    for out in outputs:
        for i in range(len(out.spike_counts)):
            traces.append(GraphTrace(out.s_G.value[i], out.U.value[i], out.shallow[i],
                                     int(out.spike_counts[i]), int(out.sop_counts[i])))
    report = energy_estimate(traces, EnergyModel(args.energy_per_sop, args.count_mode))
    if args.csv:
        write_csv(args.csv, ["graph", "spikes", "sops", "joules"],
                  ([g.index, t.spike_count, t.sop_count, repr(e)] for g, t, e in zip(ds.graphs, traces, report.per_graph)))
    return {"dataset": ds.name, "graphs": len(ds), "total_joules": report.total,
            "mean_joules_per_graph": report.total / len(ds),
            "spikes": int(sum(t.spike_count for t in traces)), "sops": int(sum(t.sop_count for t in traces)),
            "count_mode": args.count_mode, "energy_per_sop": args.energy_per_sop}


def _analyze_divergence(args) -> dict:
    data_opts = {"max_degree": args.max_degree, "raw_attributes": args.raw_attributes}
    if args.parts:
        parts = [_load(d, data_opts) for d in args.parts]
    elif args.data:
        if args.k is None or args.k < 2:
            raise UsageError("--k (>= 2) is required with --data")
        parts = partition_by_density(_load(args.data, data_opts), args.metric, args.k)
    else:
        raise UsageError("give --parts DIR... or --data DIR --k K")
    matrix = divergence_report(parts, args.metric)
    names = [p.name for p in parts]
    if args.csv:
        write_csv(args.csv, [""] + names, ([n] + [repr(float(x)) for x in row] for n, row in zip(names, matrix)))
    return {"metric": args.metric, "parts": names, "matrix": matrix.tolist()}


def _analyze_pseudolabels(args) -> dict:
    model, ds = _model_and_data(args)
    pls = pseudo_label_round(model, ds, args.seed)
    out = {"labels": {str(k): int(v) for k, v in pls.as_dict().items()}}
    if ds.has_labels and len(pls):
        labels = ds.labels
        out["accuracy_vs_truth"] = float(np.mean(pls.labels == labels[pls.indices]))
    if args.csv:
        write_csv(args.csv, ["graph", "pseudo_label", "cluster"],
                  ([ds.graphs[i].index, int(lab), int(pls.assignments[i])] for i, lab in pls.entries))
    return out


def cmd_analyze(args) -> int:
    need_model = args.mode in ("energy", "pseudolabels")
    if need_model and not (args.model and args.data):
        raise UsageError(f"--mode {args.mode} needs --model and --data")
    handler = {"correlation": _analyze_correlation, "energy": _analyze_energy,
               "divergence": _analyze_divergence, "pseudolabels": _analyze_pseudolabels}[args.mode]
    result = handler(args)
    result["mode"] = args.mode
    _emit(result)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="desgrada", description="Degree-conscious spiking graph domain adaptation.")
    parser.add_argument("--version", action="version", version=f"desgrada {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("partition", help="split a TU dataset into k density-ordered parts",
                       description="Sort graphs by density and write k equal-count TU sub-datasets plus manifest.json.")
    p.add_argument("--data", required=True, help="TU dataset directory")
    p.add_argument("--name", help="dataset name (checked against the *_A.txt prefix)")
    p.add_argument("--metric", choices=("node", "edge"), required=True,
                   help="node: node count; edge: average degree 2|E|/|V|")
    p.add_argument("--k", type=int, required=True, help="number of parts (>= 2)")
    p.add_argument("--out", required=True, help="output directory for NAME_P0..NAME_P{k-1} and manifest.json")
    _add_data_flags(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("synth", help="write the synthetic two-domain SBM benchmark in TU format",
                       description="Generate source/target SBM datasets that differ in mean degree.")
    p.add_argument("--out", required=True, help="output root; writes sbm_source/ and sbm_target/")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    p.add_argument("--graphs", type=int, default=200, help="graphs per domain (default 200)")
    p.add_argument("--source-degree", type=float, default=4.0, help="source mean degree (default 4)")
    p.add_argument("--target-degree", type=float, default=10.0, help="target mean degree (default 10)")
    p.add_argument("--nodes-min", type=int, default=18, help="smallest graph size (default 18)")
    p.add_argument("--nodes-max", type=int, default=22, help="largest graph size (default 22)")
    p.add_argument("--ratio", type=float, default=8.0, help="within/across block edge odds of class 0 (default 8)")
    p.add_argument("--feature-noise", type=float, default=0.15, help="block-indicator feature noise (default 0.15)")
    p.add_argument("--degree-scale", type=float, default=24.0,
                   help="append min(degree/scale, 1) as a feature column, 0 to disable (default 24)")
    p.add_argument("--degree-features", type=int, default=0,
                   help="width of an appended one-hot degree block, 0 to disable (default 0)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on labelled source and unlabelled target graphs",
                       description="Train DeSGraDA (or the source-only baseline); writes model.ckpt, history.csv, "
                                   "steps.csv and manifest.json into --out.")
    p.add_argument("--source", required=True, help="labelled source TU directory")
    p.add_argument("--target", help="unlabelled target TU directory (labels, if present, are only reported)")
    p.add_argument("--config", help="flat TOML file of TrainConfig keys")
    p.add_argument("--seed", type=int, help="seed, overriding the config file")
    p.add_argument("--source-only", action="store_true", help="disable alignment and pseudo-labels")
    p.add_argument("--out", default="run", help="output directory (default ./run)")
    _add_data_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a labelled dataset",
                       description="Evaluate a checkpoint; prints accuracy and per-class counts as JSON.")
    p.add_argument("--model", required=True, help="checkpoint written by train")
    p.add_argument("--data", required=True, help="labelled TU directory")
    p.add_argument("--seed", type=int, default=EVAL_SEED, help=f"input-encoding seed (default {EVAL_SEED})")
    p.add_argument("--samples", type=int, default=1, help="average class probabilities over this many encodings")
    p.add_argument("--csv", help="write per-graph predictions here")
    p.add_argument("--max-degree", type=int, default=None, help="override the degree cap stored in the checkpoint")
    p.add_argument("--raw-attributes", action="store_true", help="use node attributes as stored")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="correlation, energy, divergence or pseudo-label diagnostics",
                       description="Diagnostics printed as JSON; --csv writes the underlying table.")
    p.add_argument("--mode", choices=("correlation", "energy", "divergence", "pseudolabels"), required=True,
                   help="which diagnostic to run")
    p.add_argument("--model", help="checkpoint (energy, pseudolabels)")
    p.add_argument("--data", help="TU directory (energy, pseudolabels; divergence with --k)")
    p.add_argument("--parts", nargs="+", help="divergence: already partitioned TU directories")
    p.add_argument("--metric", choices=("node", "edge"), default="node", help="divergence density metric")
    p.add_argument("--k", type=int, help="divergence: partition --data into k parts first")
    p.add_argument("--seed", type=int, default=0, help="seed (correlation: first seed; others: encoding seed)")
    p.add_argument("--seeds", type=int, default=10, help="correlation: number of consecutive seeds (default 10)")
    p.add_argument("--nodes", type=int, default=200, help="correlation: graph size (default 200)")
    p.add_argument("--exponent", type=float, default=2.5, help="correlation: power-law exponent (default 2.5)")
    p.add_argument("--trials", type=int, default=1, help="correlation: graphs per seed (default 1)")
    p.add_argument("--aggregation", choices=("sum", "sym"), default="sum", help="correlation: aggregation")
    p.add_argument("--alpha", type=float, default=0.1, help="correlation: threshold EMA rate (default 0.1)")
    p.add_argument("--threshold", type=float, default=0.2, help="correlation: initial threshold (default 0.2)")
    p.add_argument("--T", type=int, default=9, help="correlation: latency steps (default 9)")
    p.add_argument("--count-mode", choices=("sop", "spikes"), default="sop", help="energy: event counting")
    p.add_argument("--energy-per-sop", type=float, default=EnergyModel().energy_per_sop,
                   help="energy: joules per event (default 77e-15)")
    p.add_argument("--csv", help="write the underlying table here")
    p.add_argument("--max-degree", type=int, default=50, help="degree-feature cap for datasets without attributes")
    p.add_argument("--raw-attributes", action="store_true", help="use node attributes as stored")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        worker_count()  # validate DESGRADA_THREADS early
        return args.func(args)
    except (UsageError, ConfigError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (TULoadError, GraphFormatError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ArithmeticError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
