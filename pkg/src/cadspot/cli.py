"""``cadspot`` command-line interface.

Exit codes: 0 success, 2 configuration error, 3 input/output error,
4 failed check (gradcheck).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .classes import ClassTable
from .config import RunConfig, load_config
from .data import (
    generate_synthetic,
    load_manifest,
    load_prediction,
    load_record,
    render_svg,
    save_prediction,
)
from .data.records import BLOCK_SIZE, DatasetManifest, DrawingRecord, tile_record
from .errors import (
    CadSpotError,
    ConfigError,
    ConfigMismatch,
    EmptyDrawing,
    ParseError,
    TooManyVertices,
    VersionMismatch,
)
from .extract import ground_truth
from .graph import DrawingGraph, build_graph, degree_histogram
from .model import Ablation, load_checkpoint
from .training import evaluate, evaluate_predictions, load_train_state, predict, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_CHECK = 4

log = logging.getLogger("cadspot")

ABLATIONS = {
    "baseline": lambda s: Ablation(rse=False, cee="off"),
    "+rse": lambda s: Ablation(rse=True, cee="off"),
    "+cee": lambda s: Ablation(rse=False, cee="sum"),
    "single-stage": lambda s: Ablation(rse=True, cee=f"stage:{s}"),
    "full": lambda s: Ablation(rse=True, cee="sum"),
}


# ---------------------------------------------------------------- helpers

def _pool_map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _load_dataset(path, cfg: RunConfig) -> tuple[DatasetManifest, list[DrawingRecord], list[DrawingGraph]]:
    man = load_manifest(path)
    records = _pool_map(lambda p: load_record(p, man.classes), man.record_paths(), cfg.run.workers)
    graphs = _pool_map(lambda r: build_graph(r.primitives, cfg.graph), records, cfg.run.workers)
    return man, records, graphs


def _fit_classes(cfg: RunConfig, classes: ClassTable) -> RunConfig:
    if cfg.model.num_classes != len(classes):
        log.info("model.num_classes set to %d from the dataset class table", len(classes))
        cfg = replace(cfg, model=replace(cfg.model, num_classes=len(classes)))
    return cfg


def _out_dir(path, cfg: RunConfig) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    return out


def _stem(path: Path) -> str:
    name = path.name
    return name[:-5] if name.endswith(".json") else path.stem


def _write_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _model_from_checkpoint(path, cfg: RunConfig):
    mcfg, params, extra = load_checkpoint(path)
    ablation = Ablation(**extra["ablation"]) if "ablation" in extra else cfg.ablation
    return mcfg, params, ablation


# ---------------------------------------------------------------- commands

def cmd_gen_synth(args, cfg: RunConfig) -> int:
    seed = cfg.run.seed if args.seed is None else args.seed
    out = _out_dir(args.out, cfg)
    man = generate_synthetic(seed, args.n, cfg.synth, out, split=args.split)
    print(f"wrote {len(man.records)} drawings and {out / 'manifest.json'}")
    return EXIT_OK


def cmd_build_graph(args, cfg: RunConfig) -> int:
    if args.record:
        recs = [load_record(p) for p in args.record]
    else:
        man = load_manifest(args.manifest)
        recs = _pool_map(lambda p: load_record(p, man.classes), man.record_paths(), cfg.run.workers)
    if args.tile:
        recs = [sub for r in recs for sub, _ in tile_record(r, args.tile)]
    lines = []
    for r in recs:
        g = build_graph(r.primitives, cfg.graph)
        lines.append({"id": r.id, "N": g.num_vertices, "E": g.num_edges,
                      "max_degree": int(g.degrees.max()) if g.num_vertices else 0,
                      "degree_histogram": {str(k): v for k, v in degree_histogram(g).items()}})
    text = "".join(json.dumps(x, sort_keys=True) + "\n" for x in lines)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    man, _, graphs = _load_dataset(args.manifest, cfg)
    cfg = _fit_classes(cfg, man.classes)
    val = _load_dataset(args.val, cfg)[2] if args.val else None
    out = _out_dir(args.out, cfg)
    state = None
    if args.resume:
        state = load_train_state(out / "last.ckpt", cfg.model)[1]
    state, history = train(graphs, cfg.model, man.classes, cfg.train, val, cfg.ablation, out,
                           state, args.epochs, cfg.run.eval_every)
    last = history[-1] if history else {}
    print(f"trained to epoch {state.epoch}; best val PQ {state.best_pq:.4f} at epoch "
          f"{state.best_epoch}; last record {json.dumps(last, sort_keys=True)}")
    return EXIT_OK


def cmd_infer(args, cfg: RunConfig) -> int:
    man, records, graphs = _load_dataset(args.manifest, cfg)
    mcfg, params, ablation = _model_from_checkpoint(args.checkpoint, cfg)
    preds = _pool_map(lambda g: predict(g, params, mcfg, man.classes, ablation,
                                        cfg.train.prune_threshold), graphs, cfg.run.workers)
    out = _out_dir(args.out, cfg)
    for path, rec, pred in zip(man.record_paths(), records, preds):
        save_prediction(pred, out / f"{_stem(path)}.pred.json", rec.id)
    print(f"wrote {len(preds)} predictions to {out}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    man, _, graphs = _load_dataset(args.manifest, cfg)
    if args.gt_as_prediction:
        preds = [ground_truth(g, man.classes) for g in graphs]
    elif args.predictions:
        pdir = Path(args.predictions)
        preds = [load_prediction(pdir / f"{_stem(p)}.pred.json") for p in man.record_paths()]
        for p, g in zip(preds, graphs):
            if len(p.vertex_classes) != g.num_vertices:
                raise ParseError(f"prediction has {len(p.vertex_classes)} vertices, "
                                 f"drawing has {g.num_vertices}", str(pdir))
    else:
        mcfg, params, ablation = _model_from_checkpoint(args.checkpoint, cfg)
        preds = _pool_map(lambda g: predict(g, params, mcfg, man.classes, ablation,
                                            cfg.train.prune_threshold), graphs, cfg.run.workers)
    report = evaluate_predictions(graphs, preds, man.classes)
    if args.out:
        out = _out_dir(args.out, cfg)
        _write_json(out / "metrics.json", report)
    print(" ".join(f"{k}={report[k]:.4f}" for k in
                   ("PQ", "SQ", "RQ", "F1", "length_weighted_F1", "AP50", "AP75", "mAP",
                    "semantic_accuracy")))
    return EXIT_OK


def cmd_render(args, cfg: RunConfig) -> int:
    if args.record:
        classes = load_manifest(args.manifest).classes if args.manifest else cfg.synth.class_table()
        paths = [Path(p) for p in args.record]
    else:
        man = load_manifest(args.manifest)
        classes, paths = man.classes, man.record_paths()
    out = _out_dir(args.out, cfg)
    for p in paths:
        rec = load_record(p, classes)
        pred = None
        if args.predictions:
            pred = load_prediction(Path(args.predictions) / f"{_stem(p)}.pred.json")
        (out / f"{_stem(p)}.svg").write_text(render_svg(rec, classes, pred))
    print(f"wrote {len(paths)} SVG files to {out}")
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .gradcheck import GRADCHECK_MODEL, gradcheck, gradcheck_fixture_graph

    if args.record:
        classes = load_manifest(args.manifest).classes if args.manifest else cfg.synth.class_table()
        graph = build_graph(load_record(args.record, classes).primitives, cfg.graph)
    else:
        graph, classes = gradcheck_fixture_graph(cfg.run.seed, cfg.graph)
    mcfg = replace(GRADCHECK_MODEL, num_classes=len(classes))
    report = gradcheck(graph, classes, mcfg, train_cfg=cfg.train, ablation=cfg.ablation,
                       rel_tol=args.tol)
    print(report.line())
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_ablate(args, cfg: RunConfig) -> int:
    man, _, graphs = _load_dataset(args.manifest, cfg)
    cfg = _fit_classes(cfg, man.classes)
    val = _load_dataset(args.val, cfg)[2] if args.val else graphs
    stage_counts = [int(s) for s in args.stages.split(",")] if args.stages else [cfg.model.stages]
    default_configs = "full" if args.stages else ",".join(ABLATIONS)
    names = [c.strip().lower() for c in (args.configs or default_configs).split(",")]
    for n in names:
        if n not in ABLATIONS:
            raise ConfigError(f"unknown ablation config {n!r}; choose from {sorted(ABLATIONS)}")
    out = _out_dir(args.out, cfg)
    rows = []
    for stages in stage_counts:
        mcfg = replace(cfg.model, stages=stages)
        for name in names:
            ablation = ABLATIONS[name](stages)
            state, _ = train(graphs, mcfg, man.classes, cfg.train, val, ablation, None,
                             epochs=args.epochs, eval_every=cfg.run.eval_every)
            params = state.best_params if state.best_params is not None else state.params
            rep = evaluate(val, params, mcfg, man.classes, ablation, cfg.train.prune_threshold,
                           cfg.run.workers)
            row = {"config": name, "stages": stages, "rse": ablation.rse, "cee": ablation.cee,
                   "best_epoch": state.best_epoch}
            row.update({k: rep[k] for k in ("PQ", "SQ", "RQ", "F1", "AP50", "semantic_accuracy")})
            rows.append(row)
            log.info("ablate %s", json.dumps(row, sort_keys=True))
    _write_json(out / "ablation.json", rows)
    header = "| config | stages | RSE | CEE | RQ | SQ | PQ | F1 | AP50 |"
    lines = [header, "|" + "---|" * 9]
    for r in rows:
        lines.append(f"| {r['config']} | {r['stages']} | {'yes' if r['rse'] else 'no'} | {r['cee']} "
                     f"| {r['RQ']:.3f} | {r['SQ']:.3f} | {r['PQ']:.3f} | {r['F1']:.3f} "
                     f"| {r['AP50']:.3f} |")
    table = "\n".join(lines) + "\n"
    (out / "ablation.md").write_text(table)
    sys.stdout.write(table)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. model.stages=4 (repeatable)")
    common.add_argument("--workers", type=int, help="worker threads for loading, eval and infer")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cadspot", description="Panoptic symbol spotting on vector CAD drawings.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-synth", parents=[common], help="generate a synthetic labelled dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--seed", type=int)
    s.add_argument("--split", default="train")
    s.set_defaults(fn=cmd_gen_synth)

    s = sub.add_parser("build-graph", parents=[common], help="print graph statistics")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--manifest")
    g.add_argument("--record", nargs="+")
    s.add_argument("--out", help="also write the statistics (JSON lines) here")
    s.add_argument("--tile", type=float, nargs="?", const=BLOCK_SIZE, metavar="MM",
                   help="split drawings into square blocks first (default block 10000 mm)")
    s.set_defaults(fn=cmd_build_graph)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--manifest", required=True)
    s.add_argument("--val", help="validation manifest (default: the training set)")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, help="final epoch (default train.epochs)")
    s.add_argument("--resume", action="store_true", help="continue from OUT/last.ckpt")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="compute the metrics report")
    s.add_argument("--manifest", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--predictions", help="directory of NAME.pred.json files")
    g.add_argument("--gt-as-prediction", action="store_true")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("infer", parents=[common], help="write panoptic predictions")
    s.add_argument("--manifest", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("render", parents=[common], help="render drawings (and predictions) to SVG")
    s.add_argument("--manifest")
    s.add_argument("--record", nargs="+")
    s.add_argument("--predictions")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_render)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    s.add_argument("--record", help="drawing to check (default: built-in 12-primitive fixture)")
    s.add_argument("--manifest", help="class table for --record")
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("ablate", parents=[common], help="train and compare network configurations")
    s.add_argument("--manifest", required=True)
    s.add_argument("--val")
    s.add_argument("--out", required=True)
    s.add_argument("--configs", help=f"comma list of {','.join(ABLATIONS)}")
    s.add_argument("--stages", help="comma list of stage counts to sweep, e.g. 2,4,8,16")
    s.add_argument("--epochs", type=int)
    s.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            cfg = replace(cfg, run=replace(cfg.run, workers=args.workers))
        if args.command == "render" and not (args.manifest or args.record):
            raise ConfigError("render needs --manifest or --record")
        return args.fn(args, cfg)
    except (ConfigError, ConfigMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ParseError, VersionMismatch, EmptyDrawing, TooManyVertices) as exc:
        print(f"input/output error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CadSpotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
