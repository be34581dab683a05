"""Command-line entry point.

Subcommands: graph, simulate, train, eval, bench.  Exit codes: 0 success,
1 missing input, 2 invalid parameters, 3 integrity failure, 4 shape or
grid mismatch, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from multiprocessing import Pool

import numpy as np

from . import fileio
from .data import sample_snapshots
from .dynamics import FreeEnergyParams, evolve_density
from .errors import (BoundaryError, GenerationError, IntegrityError,
                     NumericalError, ParameterError, ShapeMismatchError)
from .evaluate import (ExperimentConfig, Report, RunResult, _summarize,
                       learned_free_energy, single_run, time_avg_hellinger)
from .graphs import GRAPH_CLASSES, generate_graph, to_markov_chain, validate_chain
from .learning import TrainConfig, train
from .plots import plot_hellinger_curve, plot_loss_trace, render_report_figures

EXIT_OK = 0
EXIT_MISSING_INPUT = 1
EXIT_BAD_PARAMS = 2
EXIT_INTEGRITY = 3
EXIT_SHAPE = 4
EXIT_NUMERICAL = 5

_TRAIN_CONFIG_KEYS = set(TrainConfig().to_dict())


class _Logger:
    def __init__(self, path):
        self.path = path

    def event(self, **kv):
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(kv, sort_keys=True) + "\n")


def _load_json_config(path):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as f:
        return json.load(f)


def _parse_vector(text, n, name):
    vals = np.asarray([float(v) for v in text.split(",")], dtype=float)
    if len(vals) != n:
        raise ShapeMismatchError(f"{name} needs {n} entries, got {len(vals)}")
    return vals


def cmd_graph(args) -> int:
    g = generate_graph(args.graph_class, args.n, seed=args.seed)
    chain = to_markov_chain(g)
    report = validate_chain(chain)
    if not report.all_ok():
        raise NumericalError(f"generated chain failed validation: {report}")
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    fileio.save_graph(args.out, g, chain)
    manifest = fileio.RunManifest(
        command="graph", seed=args.seed,
        outputs={args.out: fileio.hash_file(args.out)})
    fileio.write_manifest(os.path.dirname(os.path.abspath(args.out)), manifest)
    print(f"graph {args.graph_class} n={args.n} seed={args.seed} -> {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    _, chain = fileio.load_graph(args.chain)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(10,)))
    if args.v is not None:
        V = _parse_vector(args.v, chain.n, "--v")
    else:
        V = rng.uniform(args.v_min, args.v_max, chain.n)
    if args.p0 is not None:
        p0 = _parse_vector(args.p0, chain.n, "--p0")
    else:
        p0 = rng.dirichlet(np.ones(chain.n))
    if args.beta <= 0:
        raise ParameterError("--beta must be positive")
    grid = np.linspace(0.0, args.t_max, args.grid_points)
    params = FreeEnergyParams(V=V, beta=args.beta)
    traj = evolve_density(chain, p0, params, grid, substeps=args.substeps)
    ds = sample_snapshots(traj, chain, args.samples, seed=args.seed)
    ds.chain_ref = fileio.hash_file(args.chain)

    os.makedirs(args.out_dir, exist_ok=True)
    traj_path = os.path.join(args.out_dir, "trajectory.json")
    ds_path = os.path.join(args.out_dir, "dataset.json")
    truth_path = os.path.join(args.out_dir, "truth_params.json")
    fileio.save_trajectory(traj_path, traj, chain_hash=ds.chain_ref)
    fileio.save_dataset(ds_path, ds)
    with open(truth_path, "w") as f:
        json.dump({"V": V.tolist(), "beta": args.beta, "p0": p0.tolist()},
                  f, sort_keys=True, indent=1)
        f.write("\n")
    manifest = fileio.RunManifest(
        command="simulate", seed=args.seed,
        inputs={args.chain: fileio.hash_file(args.chain)},
        outputs={p: fileio.hash_file(p)
                 for p in (traj_path, ds_path, truth_path)})
    fileio.write_manifest(args.out_dir, manifest)
    print(f"simulate n={chain.n} beta={args.beta} M={args.samples} -> {args.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = fileio.load_dataset(args.dataset)
    _, chain = fileio.load_graph(args.chain)
    if ds.chain_ref and ds.chain_ref != fileio.hash_file(args.chain):
        raise IntegrityError("dataset was generated from a different chain file")
    overrides = {k: v for k, v in _load_json_config(args.config).items()
                 if k in _TRAIN_CONFIG_KEYS}
    cfg = TrainConfig(**overrides)
    for name in ("epochs", "batch_size", "learning_rate", "epsilon",
                 "variant", "seed", "steps"):
        val = getattr(args, name)
        if val is not None:
            setattr(cfg, name, val)
    params, log = train(ds, chain, cfg)

    os.makedirs(args.out_dir, exist_ok=True)
    ckpt_path = os.path.join(args.out_dir, "checkpoint.json")
    log_path = os.path.join(args.out_dir, "training_log.csv")
    fig_path = os.path.join(args.out_dir, "training_log.png")
    fileio.save_checkpoint(ckpt_path, params, cfg,
                           dataset_hash_value=fileio.dataset_hash(ds))
    fileio.save_training_log_csv(log_path, log)
    plot_loss_trace(log, fig_path)
    manifest = fileio.RunManifest(
        command="train", seed=cfg.seed, config_path=args.config or "",
        inputs={args.dataset: fileio.hash_file(args.dataset),
                args.chain: fileio.hash_file(args.chain)},
        outputs={p: fileio.hash_file(p)
                 for p in (ckpt_path, log_path, fig_path)})
    fileio.write_manifest(args.out_dir, manifest)
    fe = learned_free_energy(params, chain.n)
    print(f"train variant={cfg.variant} steps={len(log.steps)} "
          f"final_loss={log.losses[-1]:.3e} beta_hat={fe.beta:.4f} -> {args.out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _, chain = fileio.load_graph(args.chain)
    truth = fileio.load_trajectory(args.truth, chain.pi)
    if args.pred is not None:
        pred = fileio.load_trajectory(args.pred, chain.pi)
    else:
        if args.checkpoint is None:
            raise ParameterError("need --checkpoint or --pred")
        params, _, _ = fileio.load_checkpoint(args.checkpoint)
        fe = learned_free_energy(params, chain.n)
        p0 = truth.probabilities(chain.pi)[0]
        pred = evolve_density(chain, p0, fe, truth.grid, substeps=args.substeps)
    score = time_avg_hellinger(pred, truth, chain)

    os.makedirs(args.out_dir, exist_ok=True)
    out_json = os.path.join(args.out_dir, "eval.json")
    out_csv = os.path.join(args.out_dir, "hellinger_per_step.csv")
    out_fig = os.path.join(args.out_dir, "hellinger_per_step.png")
    from .evaluate import hellinger as _h
    pp = pred.probabilities(chain.pi)
    tp = truth.probabilities(chain.pi)
    per_step = [_h(a, b) for a, b in zip(pp, tp)]
    with open(out_csv, "w") as f:
        f.write("t,hellinger\n")
        for t, v in zip(truth.grid, per_step):
            f.write(f"{t},{v}\n")
    plot_hellinger_curve(pred, truth, chain, out_fig)
    with open(out_json, "w") as f:
        json.dump({"time_avg_hellinger": score,
                   "steps": len(per_step)}, f, sort_keys=True, indent=1)
        f.write("\n")
    inputs = {args.chain: fileio.hash_file(args.chain),
              args.truth: fileio.hash_file(args.truth)}
    for p in (args.pred, args.checkpoint):
        if p:
            inputs[p] = fileio.hash_file(p)
    manifest = fileio.RunManifest(
        command="eval", seed=0, inputs=inputs,
        outputs={p: fileio.hash_file(p) for p in (out_json, out_csv, out_fig)})
    fileio.write_manifest(args.out_dir, manifest)
    print(f"eval time_avg_hellinger={score:.6f} -> {args.out_dir}")
    return EXIT_OK


def _experiment_config(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    tdoc = doc.pop("train", {})
    tcfg = TrainConfig(**{k: v for k, v in tdoc.items()
                          if k in _TRAIN_CONFIG_KEYS})
    known = set(ExperimentConfig.__dataclass_fields__) - {"train"}
    kwargs = {k: v for k, v in doc.items() if k in known}
    for key in ("classes", "sizes", "betas", "v_range"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return ExperimentConfig(train=tcfg, **kwargs)


def _bench_cell(task):
    class_tag, beta, seed, config = task
    return single_run(class_tag, beta, seed, config)


def cmd_bench(args) -> int:
    doc = _load_json_config(args.config)
    config = _experiment_config(doc)
    jobs = [(c, float(b), s)
            for c in config.classes
            for b in config.betas
            for s in range(config.seeds_per_cell)]
    if args.dry_run:
        print(f"bench plan: {len(jobs)} runs over "
              f"{len(config.classes)} classes x {len(config.betas)} betas "
              f"x {config.seeds_per_cell} seeds")
        for c, b, s in jobs:
            print(f"  {c} beta={b:g} seed={s}")
        return EXIT_OK

    os.makedirs(args.out_dir, exist_ok=True)
    cell_dir = os.path.join(args.out_dir, "cells")
    os.makedirs(cell_dir, exist_ok=True)
    log = _Logger(args.log)

    def marker(c, b, s):
        return os.path.join(cell_dir, f"{c}_beta{b:g}_seed{s}.json")

    pending = [(c, b, s) for c, b, s in jobs
               if not os.path.exists(marker(c, b, s))]
    if args.jobs > 1 and pending:
        with Pool(args.jobs) as pool:
            fresh = pool.map(_bench_cell,
                             [(c, b, s, config) for c, b, s in pending])
    else:
        fresh = [_bench_cell((c, b, s, config)) for c, b, s in pending]
    for (c, b, s), res in zip(pending, fresh):
        with open(marker(c, b, s), "w") as f:
            json.dump(res.to_dict(), f, sort_keys=True, indent=1)
            f.write("\n")
        log.event(event="run_done", class_tag=c, beta=b, seed=s,
                  hellinger=res.hellinger, collapsed=res.collapsed,
                  failed=res.failed)

    results = []
    for c, b, s in jobs:
        with open(marker(c, b, s)) as f:
            results.append(RunResult(**json.load(f)))
    cells = {}
    for c in config.classes:
        for b in config.betas:
            rows = [r for r in results
                    if r.class_tag == c and r.beta == float(b)]
            cells[(c, float(b))] = _summarize(rows)
    per_beta = {float(b): _summarize([r for r in results
                                      if r.beta == float(b)])
                for b in config.betas}
    report = Report(config=config.to_dict(), runs=results, cells=cells,
                    per_beta=per_beta, wall_clock=0.0)

    report_path = os.path.join(args.out_dir, "report.json")
    csv_path = os.path.join(args.out_dir, "report.csv")
    fileio.save_report(report_path, report)
    fileio.save_report_csv(csv_path, report)
    figs = render_report_figures(report, args.out_dir)
    manifest = fileio.RunManifest(
        command="bench", seed=0, config_path=args.config or "",
        outputs={p: fileio.hash_file(p)
                 for p in [report_path, csv_path] + figs})
    fileio.write_manifest(args.out_dir, manifest)
    for b in sorted(per_beta):
        s = per_beta[b]
        print(f"bench beta={b:g}: mean={s['mean']:.4f} sd={s['sd']:.4f} "
              f"stable={s['stable_runs']} collapsed={s['collapsed']} "
              f"failed={s['failed']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dgflow")
    sub = p.add_subparsers(dest="command", required=True)

    pg = sub.add_parser("graph", help="sample a weighted graph and its chain")
    pg.add_argument("--class", dest="graph_class", required=True,
                    choices=GRAPH_CLASSES)
    pg.add_argument("--n", type=int, required=True)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--out", required=True)
    pg.set_defaults(fn=cmd_graph)

    ps = sub.add_parser("simulate",
                        help="simulate a trajectory and sample snapshots")
    ps.add_argument("--chain", required=True)
    ps.add_argument("--v", default=None,
                    help="comma-separated potential; random if omitted")
    ps.add_argument("--v-min", type=float, default=-1.0)
    ps.add_argument("--v-max", type=float, default=1.0)
    ps.add_argument("--beta", type=float, required=True)
    ps.add_argument("--p0", default=None,
                    help="comma-separated start probabilities; random if omitted")
    ps.add_argument("--t-max", type=float, default=1.0)
    ps.add_argument("--grid-points", type=int, default=101)
    ps.add_argument("--substeps", type=int, default=5)
    ps.add_argument("--samples", type=int, default=10_000)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out-dir", required=True)
    ps.set_defaults(fn=cmd_simulate)

    pt = sub.add_parser("train", help="fit model parameters on a dataset")
    pt.add_argument("--dataset", required=True)
    pt.add_argument("--chain", required=True)
    pt.add_argument("--config", default=None)
    pt.add_argument("--variant", choices=("tabular", "mlp"), default=None)
    pt.add_argument("--epochs", type=int, default=None)
    pt.add_argument("--batch-size", type=int, default=None)
    pt.add_argument("--learning-rate", type=float, default=None)
    pt.add_argument("--epsilon", type=float, default=None)
    pt.add_argument("--steps", type=int, default=None)
    pt.add_argument("--seed", type=int, default=None)
    pt.add_argument("--out-dir", required=True)
    pt.set_defaults(fn=cmd_train)

    pe = sub.add_parser("eval", help="score a checkpoint against ground truth")
    pe.add_argument("--chain", required=True)
    pe.add_argument("--truth", required=True)
    pe.add_argument("--checkpoint", default=None)
    pe.add_argument("--pred", default=None,
                    help="trajectory file to score instead of a checkpoint")
    pe.add_argument("--substeps", type=int, default=5)
    pe.add_argument("--out-dir", required=True)
    pe.set_defaults(fn=cmd_eval)

    pb = sub.add_parser("bench", help="run a benchmark sweep")
    pb.add_argument("--config", default=None)
    pb.add_argument("--out-dir", default="bench_out")
    pb.add_argument("--jobs", type=int, default=1)
    pb.add_argument("--dry-run", action="store_true")
    pb.add_argument("--log", default=None,
                    help="append line-delimited JSON events here")
    pb.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_BAD_PARAMS if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (ParameterError, GenerationError, ValueError) as exc:
        print(f"error: invalid parameters: {exc}", file=sys.stderr)
        return EXIT_BAD_PARAMS
    except IntegrityError as exc:
        print(f"error: integrity failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except ShapeMismatchError as exc:
        print(f"error: shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (NumericalError, BoundaryError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
