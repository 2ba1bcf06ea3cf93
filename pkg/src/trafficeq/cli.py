"""Command-line entry point: generate, train, predict, evaluate, export-plot."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from .model.training import PIPELINES, TrainConfig, TrainedModel, mae, train
from .network import aggregate_residual, load_instance, write_flow_csv
from .scenarios import LAYOUTS, ScenarioSpec, build_dataset, load_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4
METRICS_SCHEMA = 1
PLOT_KINDS = ("flow-map", "scatter", "time-matrix")

log = logging.getLogger("trafficeq")


class DataError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return v


def _layout(text):
    try:
        from .scenarios import normalize_layout
        return normalize_layout(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _oracle(text):
    try:
        from .scenarios import normalize_oracle
        return normalize_oracle(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trafficeq",
                                description="Learn to predict traffic equilibria on road networks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with option values; flags take precedence")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=_positive_int, default=1)

    g = sub.add_parser("generate", help="build a synthetic dataset")
    common(g)
    g.add_argument("--layout", type=_layout, default="LE", help="/".join(LAYOUTS))
    g.add_argument("--oracle", type=_oracle, default="EasyWE")
    g.add_argument("--time-steps", type=_positive_int, default=1)
    g.add_argument("--agents", type=_positive_int, default=30)
    g.add_argument("--size", type=_positive_int, default=6)
    g.add_argument("--n-train", type=_positive_int, default=9)
    g.add_argument("--n-val", type=_nonneg_int, default=5)
    g.add_argument("--n-test", type=_nonneg_int, default=6)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model on a dataset")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--pipeline", choices=PIPELINES, default="cl")
    t.add_argument("--samples", type=_nonneg_int, default=8)
    t.add_argument("--inference-samples", type=_nonneg_int, default=32)
    t.add_argument("--epsilon", type=_positive_float, default=1.0)
    t.add_argument("--copies", type=_positive_int, default=1)
    t.add_argument("--lr", type=_nonneg_float, default=1e-3)
    t.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    t.add_argument("--batch-size", type=_positive_int, default=1)
    t.add_argument("--max-epochs", type=_positive_int, default=20)
    t.add_argument("--max-seconds", type=_positive_float, default=None)
    t.add_argument("--patience", type=_positive_int, default=None)
    t.add_argument("--standardize", choices=("mean", "zscore"), default="mean")
    t.add_argument("--noise", choices=("fresh", "common"), default="fresh")
    t.add_argument("--baseline-loss", choices=("mae", "mse"), default="mae")
    t.add_argument("--out", help="checkpoint path (default: <data>/model_<pipeline>.npz)")
    t.add_argument("--log", help="training log CSV (default: next to the checkpoint)")

    pr = sub.add_parser("predict", help="predict the flow of one instance")
    common(pr)
    pr.add_argument("--model", required=True)
    pr.add_argument("--instance", required=True)
    pr.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="MAE of a model on a dataset split")
    common(e)
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--out", help="metrics JSON (default: print only)")

    x = sub.add_parser("export-plot", help="CSV files for external plotting")
    common(x)
    x.add_argument("--model", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--kind", choices=PLOT_KINDS, required=True)
    x.add_argument("--split", choices=("train", "val", "test"), default="test")
    x.add_argument("--out", required=True)
    return p


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config) as f:
                cfg = json.load(f)
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(cfg, dict):
            parser.error("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        # re-parse with the config as defaults so explicit flags still win
        parser = build_parser()
        subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        sp = subs.choices[args.command]
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        for a in sp._actions:
            if a.dest in cfg and a.type is not None and cfg[a.dest] is not None:
                try:
                    cfg[a.dest] = a.type(str(cfg[a.dest]))
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    parser.error(f"config value for {a.dest}: {exc}")
        sp.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _load_data(path):
    try:
        return load_dataset(path)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load dataset {path}: {exc}") from exc


def _load_model(path) -> TrainedModel:
    try:
        return TrainedModel.load(path)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load model {path}: {exc}") from exc


def cmd_generate(args) -> int:
    spec = ScenarioSpec(layout=args.layout, oracle=args.oracle, agents=args.agents, size=args.size,
                        time_steps=args.time_steps, seed=args.seed, n_train=args.n_train,
                        n_val=args.n_val, n_test=args.n_test)
    path = build_dataset(spec, args.out)
    print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    ds = _load_data(args.data)
    cfg = TrainConfig(pipeline=args.pipeline, optimizer=args.optimizer, lr=args.lr,
                      batch_size=args.batch_size, max_epochs=args.max_epochs,
                      max_seconds=args.max_seconds, patience=args.patience, samples=args.samples,
                      inference_samples=args.inference_samples, epsilon=args.epsilon,
                      copies=args.copies, noise=args.noise, standardize=args.standardize,
                      baseline_loss=args.baseline_loss, seed=args.seed, threads=args.threads)
    out = args.out or os.path.join(ds.root, f"model_{args.pipeline}.npz")
    log_path = args.log or os.path.splitext(out)[0] + "_log.csv"
    try:
        res = train(ds.subset("train"), ds.subset("val"), cfg, log_path)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    res.trained.save(out)
    print(out)
    print(f"best validation MAE {res.best_val_mae:.6g} at epoch {res.best_epoch}")
    return EXIT_OK


def cmd_predict(args) -> int:
    trained = _load_model(args.model)
    try:
        inst = load_instance(args.instance)
        flow = trained.predict(inst, seed=None)
    except (OSError, KeyError) as exc:
        raise DataError(str(exc)) from exc
    write_flow_csv(args.out, flow)
    print(args.out)
    return EXIT_OK


def _split(ds, name):
    insts = ds.subset(name)
    if not insts:
        raise DataError(f"split {name!r} is empty")
    return insts, ds.split[name]


def evaluate(trained: TrainedModel, ds, split: str) -> dict:
    insts, idx = _split(ds, split)
    start = time.perf_counter()
    rows = []
    for i, inst in zip(idx, insts):
        t0 = time.perf_counter()
        ws, flow = trained.predict_on_graph(inst)
        pred = ws.collapse(flow)
        row = {"index": i, "mae": mae(pred, inst.target), "seconds": time.perf_counter() - t0}
        if trained.cfg.pipeline != "fnn-baseline":
            row["conservation_residual"] = aggregate_residual(ws.graph, flow, ws.commodities)
            row["capacity_violation"] = float(np.maximum(flow - ws.capacities, 0.0).max())
        rows.append(row)
    maes = [r["mae"] for r in rows]
    return {"schema_version": METRICS_SCHEMA, "pipeline": trained.cfg.pipeline, "split": split,
            "mean_mae": float(np.mean(maes)), "median_mae": float(np.median(maes)),
            "instances": rows, "wall_clock_s": time.perf_counter() - start}


def cmd_evaluate(args) -> int:
    trained = _load_model(args.model)
    ds = _load_data(args.data)
    try:
        metrics = evaluate(trained, ds, args.split)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    text = json.dumps(metrics, indent=1, sort_keys=True)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
        print(args.out)
    print(f"mean MAE {metrics['mean_mae']:.6g} over {len(metrics['instances'])} instances")
    return EXIT_OK


def export_plot(trained: TrainedModel, ds, kind: str, split: str, out_dir) -> list[str]:
    insts, idx = _split(ds, split)
    if kind == "time-matrix" and not insts[0].time_variant:
        raise DataError("time-matrix export needs a time-variant dataset")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, inst in zip(idx, insts):
        pred = trained.predict(inst)
        tgt = inst.target
        net = inst.net
        path = os.path.join(out_dir, f"{kind}_{i:03d}.csv")
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            if kind == "flow-map":
                p = pred.sum(axis=1) if pred.ndim == 2 else pred
                t = tgt.sum(axis=1) if tgt.ndim == 2 else tgt
                w.writerow(["arc_id", "tail", "head", "tail_x", "tail_y", "head_x", "head_y",
                            "predicted", "target"])
                for a in range(net.n_arcs):
                    u, v = net.tail[a], net.head[a]
                    w.writerow([a, u, v, repr(float(net.xy[u, 0])), repr(float(net.xy[u, 1])),
                                repr(float(net.xy[v, 0])), repr(float(net.xy[v, 1])),
                                repr(float(p[a])), repr(float(t[a]))])
            elif kind == "scatter":
                if pred.ndim == 2:
                    w.writerow(["arc_id", "epoch", "target", "predicted"])
                    for a in range(pred.shape[0]):
                        for e in range(pred.shape[1]):
                            w.writerow([a, e, repr(float(tgt[a, e])), repr(float(pred[a, e]))])
                else:
                    w.writerow(["arc_id", "target", "predicted"])
                    for a in range(len(pred)):
                        w.writerow([a, repr(float(tgt[a])), repr(float(pred[a]))])
            else:
                w.writerow(["arc_id", "epoch", "predicted", "target"])
                for a in range(pred.shape[0]):
                    for e in range(pred.shape[1]):
                        w.writerow([a, e, repr(float(pred[a, e])), repr(float(tgt[a, e]))])
        paths.append(path)
    return paths


def cmd_export_plot(args) -> int:
    trained = _load_model(args.model)
    ds = _load_data(args.data)
    for p in export_plot(trained, ds, args.kind, args.split, args.out):
        print(p)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "export-plot": cmd_export_plot}


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
