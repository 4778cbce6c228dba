"""Command-line interface.

Subcommands: gen-synthetic, train, refine, eval, dump-graph. Report paths
write delimited text plus rendered figures side by side. Exit codes:
0 success, 1 input error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_configs
from .dataio import load_dataset, write_dataset
from .errors import InputError, InternalError
from .graph import format_graph_dump
from .metrics import EvalReport
from .pipeline import (
    check_dataset_compatible,
    detect_scene,
    evaluate,
    load_model,
    save_model,
    train,
)
from .synthetic import generate_dataset


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="detrefine",
                     description="Uncertainty-guided graph refinement for "
                                 "rotated-box detections")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", parents=[], help="generate a synthetic dataset")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--out", required=True,
                   help="dataset path (.json for the text form)")

    p = sub.add_parser("train", help="train heads and refiner on a dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--metrics-out", default=None,
                   help="TSV of per-epoch losses (a PNG is written next to it)")

    p = sub.add_parser("refine", help="write refined detections for a dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="detections TSV path")

    p = sub.add_parser("eval", help="evaluate refined vs initial detections")
    p.add_argument("--config", default=None)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--report-out", required=True,
                   help="report prefix; writes <prefix>.txt, <prefix>.tsv and figures")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("dump-graph", help="dump one scene's object graph")
    p.add_argument("--config", default=None)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", default="0", help="scene id or zero-based index")
    p.add_argument("--out", required=True,
                   help="output prefix; writes <prefix>.edges.txt and <prefix>.png")
    return parser


def _cmd_gen_synthetic(args) -> int:
    _, synth = load_configs(args.config)
    scenes = generate_dataset(synth, seed=args.seed, n_scenes=args.scenes)
    header = write_dataset(args.out, scenes, num_classes=synth.num_classes,
                           feature_shape=synth.feature_shape)
    print(f"wrote {header.num_scenes} scenes "
          f"({sum(len(s.proposals) for s in scenes)} proposals) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    overrides = {} if args.seed is None else {"seed": args.seed}
    cfg, _ = load_configs(args.config, overrides)
    header, scenes = load_dataset(args.dataset)
    check_dataset_compatible(header, cfg)
    model, history = train(scenes, cfg)
    save_model(args.checkpoint_out, model, cfg)
    print(f"trained {cfg.epochs} epochs on {len(scenes)} scenes; "
          f"checkpoint at {args.checkpoint_out}")
    if args.metrics_out:
        out = Path(args.metrics_out)
        lines = ["epoch\tdetection_loss\trefinement_loss\tcombined_loss"]
        for i, e in enumerate(history.epochs):
            lines.append(f"{e}\t{history.detection_loss[i]!r}"
                         f"\t{history.refinement_loss[i]!r}"
                         f"\t{history.combined_loss[i]!r}")
        out.write_text("\n".join(lines) + "\n")
        from .plots import save_loss_curves

        save_loss_curves(history, out.with_suffix(".png"))
        print(f"metrics at {out}, curves at {out.with_suffix('.png')}")
    return 0


def _cmd_refine(args) -> int:
    cfg, _ = load_configs(args.config)
    header, scenes = load_dataset(args.dataset)
    check_dataset_compatible(header, cfg)
    model = load_model(args.checkpoint, cfg)
    lines = ["scene_id\tproposal_id\tclass_id\tclass_name\tscore"
             "\tcx\tcy\tw\th\ttheta\tuncertainty\trefined"]
    n = 0
    for scene in scenes:
        res = detect_scene(scene, model, cfg)
        for d in res.final:
            b = d.box
            lines.append(
                f"{d.scene_id}\t{d.proposal_id}\t{d.class_id}"
                f"\t{header.class_names[d.class_id]}\t{d.score!r}"
                f"\t{b.cx!r}\t{b.cy!r}\t{b.w!r}\t{b.h!r}\t{b.theta!r}"
                f"\t{d.uncertainty!r}\t{int(d.refined)}"
            )
            n += 1
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {n} detections for {len(scenes)} scenes to {args.out}")
    return 0


def _format_report(report: EvalReport, class_names) -> tuple[str, str]:
    txt = [
        "detection refinement evaluation",
        f"scenes\t{report.n_scenes}",
        f"ground_truths\t{report.n_ground_truths}",
        f"map\t{report.map_score!r}",
        f"baseline_map\t{report.baseline_map!r}",
        f"map_gain\t{report.map_score - report.baseline_map!r}",
        f"refined_targets\t{report.refined_target_count}",
        f"flipped\t{report.flipped_count}",
        f"flip_fraction\t{report.flip_fraction!r}",
        "",
        "class\tname\tap\tbaseline_ap",
    ]
    tsv = ["class\tname\tap\tbaseline_ap"]
    for c in sorted(report.per_class_ap):
        name = class_names[c] if c < len(class_names) else str(c)
        row = (f"{c}\t{name}\t{report.per_class_ap[c]!r}"
               f"\t{report.baseline_per_class_ap.get(c, 0.0)!r}")
        txt.append(row)
        tsv.append(row)
    tsv.append(f"mean\t-\t{report.map_score!r}\t{report.baseline_map!r}")
    return "\n".join(txt) + "\n", "\n".join(tsv) + "\n"


def _cmd_eval(args) -> int:
    cfg, _ = load_configs(args.config)
    header, scenes = load_dataset(args.dataset)
    check_dataset_compatible(header, cfg)
    model = load_model(args.checkpoint, cfg)
    report, results = evaluate(scenes, model, cfg, workers=args.workers,
                               keep_scene_results=True)
    prefix = Path(args.report_out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    txt, tsv = _format_report(report, header.class_names)
    txt_path = prefix.with_suffix(".txt")
    tsv_path = prefix.with_suffix(".tsv")
    txt_path.write_text(txt)
    tsv_path.write_text(tsv)

    from .plots import save_pr_curves, save_uncertainty_histogram

    gts = {s.scene_id: list(s.gt_objects) for s in scenes}
    final_dets = [d for r in results for d in r.final]
    base_dets = [d for r in results for d in r.baseline_final]
    pr_path = prefix.parent / (prefix.name + "_pr_curves.png")
    hist_path = prefix.parent / (prefix.name + "_uncertainty.png")
    save_pr_curves(final_dets, base_dets, gts, header.class_names,
                   cfg.eval_iou, pr_path)
    save_uncertainty_histogram(results, hist_path)
    print(txt, end="")
    print(f"report at {txt_path} and {tsv_path}; figures at {pr_path}, {hist_path}")
    return 0


def _cmd_dump_graph(args) -> int:
    cfg, _ = load_configs(args.config)
    header, scenes = load_dataset(args.dataset)
    check_dataset_compatible(header, cfg)
    model = load_model(args.checkpoint, cfg)
    by_id = {s.scene_id: s for s in scenes}
    if args.scene in by_id:
        scene = by_id[args.scene]
    else:
        try:
            scene = scenes[int(args.scene)]
        except (ValueError, IndexError) as exc:
            raise InputError(f"no scene {args.scene!r} in the dataset") from exc
    res = detect_scene(scene, model, cfg)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    edges_path = prefix.parent / (prefix.name + ".edges.txt")
    edges_path.write_text(format_graph_dump(res.graph))
    from .plots import save_graph_figure

    fig_path = prefix.parent / (prefix.name + ".png")
    save_graph_figure(scene, res, fig_path)
    print(f"scene {scene.scene_id}: {len(res.graph.edges)} edges "
          f"({len(res.source_ids)} sources, {len(res.target_ids)} targets)")
    print(f"edge list at {edges_path}, figure at {fig_path}")
    return 0


_COMMANDS = {
    "gen-synthetic": _cmd_gen_synthetic,
    "train": _cmd_train,
    "refine": _cmd_refine,
    "eval": _cmd_eval,
    "dump-graph": _cmd_dump_graph,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InternalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
