"""Figure rendering for the reporting CLI paths.

Every report-producing subcommand writes its delimited output next to one
or more PNG figures rendered here. All rendering uses the Agg backend so it
works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import match_class_detections
from .records import Detection, GroundTruth


def save_loss_curves(history, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(history.epochs, history.detection_loss, marker="o", label="detection loss")
    ax.plot(history.epochs, history.refinement_loss, marker="s", label="refinement loss")
    ax.plot(history.epochs, history.combined_loss, marker="^", label="combined loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss per scene")
    ax.set_title("Training losses")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _pr_points(detections: list[Detection], gts_by_scene: dict[str, list[GroundTruth]],
               class_id: int, iou_thr: float):
    gts_c = {sid: [g for g in gts if g.class_id == class_id]
             for sid, gts in gts_by_scene.items()}
    n_gt = sum(len(v) for v in gts_c.values())
    dets = sorted((d for d in detections if d.class_id == class_id),
                  key=lambda d: (-d.score, d.scene_id, d.proposal_id))
    if not dets or n_gt == 0:
        return np.array([0.0]), np.array([0.0])
    tp = match_class_detections(dets, gts_c, iou_thr)
    tp_cum = np.cumsum(tp)
    recall = tp_cum / n_gt
    precision = tp_cum / np.arange(1, len(dets) + 1)
    return recall, precision


def save_pr_curves(final_dets, baseline_dets, gts_by_scene, class_names,
                   iou_thr, path) -> None:
    n = len(class_names)
    cols = min(4, max(1, n))
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.8 * rows),
                             squeeze=False)
    for c, name in enumerate(class_names):
        ax = axes[c // cols][c % cols]
        r, p = _pr_points(final_dets, gts_by_scene, c, iou_thr)
        rb, pb = _pr_points(baseline_dets, gts_by_scene, c, iou_thr)
        ax.plot(rb, pb, color="gray", lw=1.2, label="initial")
        ax.plot(r, p, color="tab:red", lw=1.5, label="refined")
        ax.set_title(name, fontsize=9)
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.05)
        ax.grid(alpha=0.3)
        if c == 0:
            ax.legend(fontsize=8)
    for k in range(n, rows * cols):
        axes[k // cols][k % cols].axis("off")
    fig.suptitle(f"Precision-recall at rotated IoU {iou_thr}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_uncertainty_histogram(scene_results, path) -> None:
    """Histogram of survivor uncertainties, split by source/target role."""
    src, dst = [], []
    for res in scene_results:
        by_id = {p.id: p.uncertainty for p in res.survivors}
        src.extend(by_id[i] for i in res.source_ids)
        dst.extend(by_id[i] for i in res.target_ids)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    bins = np.histogram_bin_edges(np.array(src + dst) if src + dst else [0.0], bins=40)
    ax.hist(src, bins=bins, alpha=0.65, label=f"sources (n={len(src)})")
    ax.hist(dst, bins=bins, alpha=0.65, label=f"targets (n={len(dst)})")
    ax.set_xlabel("uncertainty")
    ax.set_ylabel("objects")
    ax.set_title("Survivor uncertainty by graph role")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_graph_figure(scene, result, path) -> None:
    """Object graph over the scene layout: certain sources feed uncertain targets."""
    by_id = {p.id: p for p in result.survivors}
    fig, ax = plt.subplots(figsize=(7, 7))
    for e in result.graph.edges:
        a, b = by_id[e.src].box, by_id[e.dst].box
        ax.annotate(
            "", xy=(b.cx, b.cy), xytext=(a.cx, a.cy),
            arrowprops=dict(arrowstyle="->", color="tab:green", alpha=0.45, lw=0.8),
        )
    for ids, color, label in ((result.source_ids, "tab:blue", "source"),
                              (result.target_ids, "tab:red", "target")):
        xs = [by_id[i].box.cx for i in ids]
        ys = [by_id[i].box.cy for i in ids]
        ax.scatter(xs, ys, s=28, c=color, label=f"{label} (n={len(ids)})", zorder=3)
    ax.set_xlim(0, scene.image_w)
    ax.set_ylim(scene.image_h, 0)  # image-style axis, origin top-left
    ax.set_aspect("equal")
    ax.set_title(f"Object graph, scene {scene.scene_id} "
                 f"({len(result.graph.edges)} edges)")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
