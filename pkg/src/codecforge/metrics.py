"""Segmentation metrics and static model analysis.

The confusion matrix is the single source for OA / per-class IoU / mIoU.
Classes absent from both predictions and ground truth are flagged
undefined and excluded from the mean rather than counted as zero.

``analyze`` walks a graph spec and reports exact parameter counts plus a
multiply-accumulate estimate (linear layers only; BN and activations are
excluded by convention) at a given input size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import blocks as B
from .errors import IndexRangeError, MetricError
from .graph import GraphSpec, NodeId, ensure_valid


@dataclass
class ConfusionMatrix:
    """C x C counts; counts[g][p] = points of true class g predicted as p."""

    classes: int
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.classes, self.classes), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (self.classes, self.classes):
                raise IndexRangeError(
                    f"counts shape {self.counts.shape} != ({self.classes}, {self.classes})"
                )

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, predictions, labels) -> "ConfusionMatrix":
        predictions = np.asarray(predictions, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        if predictions.shape != labels.shape:
            raise IndexRangeError(
                f"{predictions.shape} predictions vs {labels.shape} labels"
            )
        if predictions.size == 0:
            return self
        for arr, what in ((predictions, "prediction"), (labels, "label")):
            bad = (arr < 0) | (arr >= self.classes)
            if bad.any():
                raise IndexRangeError(
                    f"{what} {int(arr[bad][0])} out of range [0, {self.classes})"
                )
        np.add.at(self.counts, (labels, predictions), 1)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Fold in another shard (for per-worker accumulation)."""
        if other.classes != self.classes:
            raise IndexRangeError(f"cannot merge {other.classes} into {self.classes} classes")
        self.counts += other.counts
        return self


def oa(cm: ConfusionMatrix) -> float:
    """Overall accuracy: correctly labeled points over all points."""
    if cm.total == 0:
        raise MetricError("overall accuracy is undefined on an empty matrix")
    return float(np.trace(cm.counts)) / cm.total


def iou_per_class(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray]:
    """(iou, defined) vectors; undefined classes are absent everywhere."""
    if cm.total == 0:
        raise MetricError("IoU is undefined on an empty matrix")
    tp = np.diag(cm.counts).astype(np.int64)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp
    union = tp + fp + fn
    defined = union > 0
    iou = np.zeros(cm.classes, dtype=np.float64)
    iou[defined] = tp[defined] / union[defined]
    return iou, defined


def miou(cm: ConfusionMatrix) -> float:
    """Mean IoU over the defined classes.

    Summed sequentially in ascending class order so the result is a
    reproducible function of the per-class values.
    """
    iou, defined = iou_per_class(cm)
    vals = [float(iou[c]) for c in range(cm.classes) if defined[c]]
    if not vals:
        raise MetricError("mIoU is undefined: no class is present")
    return sum(vals) / len(vals)


def macc(cm: ConfusionMatrix) -> float:
    """Mean per-class accuracy over classes present in the ground truth."""
    if cm.total == 0:
        raise MetricError("mAcc is undefined on an empty matrix")
    support = cm.counts.sum(axis=1)
    tp = np.diag(cm.counts)
    vals = [float(tp[c]) / int(support[c]) for c in range(cm.classes) if support[c] > 0]
    if not vals:
        raise MetricError("mAcc is undefined: no class is present")
    return sum(vals) / len(vals)


def metrics_csv(cm: ConfusionMatrix) -> str:
    """Per-class rows (class_id, iou, defined) plus summary rows."""
    iou, defined = iou_per_class(cm)
    lines = ["class_id,iou,defined"]
    for c in range(cm.classes):
        lines.append(f"{c},{iou[c]:.6f},{str(bool(defined[c])).lower()}")
    lines.append(f"oa,{oa(cm):.6f},")
    lines.append(f"miou,{miou(cm):.6f},")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# static analysis


@dataclass
class NodeAnalysis:
    node: NodeId
    params: int
    macs: int


@dataclass
class AnalysisReport:
    nodes: list[NodeAnalysis]
    embedding_params: int
    embedding_macs: int
    ds_head_params: int
    ds_head_macs: int
    final_head_params: int
    final_head_macs: int
    total_params: int
    total_macs: int
    row_params: dict[int, int]  # grid blocks + supervised heads, by row
    row_fractions: dict[int, float]
    backbone_share: float  # embedded plain-U-Net nodes / grid params
    deepest_codec_share: float  # deepest L1 codec nodes / grid params

    def csv(self) -> str:
        lines = ["node_i,node_j,params,macs"]
        for item in self.nodes:
            lines.append(f"{item.node.i},{item.node.j},{item.params},{item.macs}")
        lines.append(f"embedding,,{self.embedding_params},{self.embedding_macs}")
        lines.append(f"ds_heads,,{self.ds_head_params},{self.ds_head_macs}")
        lines.append(f"final_head,,{self.final_head_params},{self.final_head_macs}")
        lines.append(f"total,,{self.total_params},{self.total_macs}")
        return "\n".join(lines) + "\n"


def row_point_counts(input_points: int, ratios, levels: int) -> list[int]:
    sizes = []
    n = input_points
    for r in list(ratios)[: levels + 1]:
        n = -(-n // r)
        sizes.append(n)
    return sizes


def analyze(
    g: GraphSpec,
    input_points: int,
    d_in: int = 6,
    classes: int = 6,
    ratios=(4, 4, 4, 4, 2),
) -> AnalysisReport:
    """Exact parameter totals and MAC estimates for one topology."""
    ensure_valid(g)
    dims = g.dim_schedule
    sizes = row_point_counts(input_points, ratios, g.levels)
    if len(sizes) < g.levels + 1:
        raise MetricError(
            f"{len(ratios)} ratios cannot produce {g.levels + 1} resolution rows"
        )

    nodes = []
    row_params: dict[int, int] = {i: 0 for i in range(g.levels + 1)}
    for nid in sorted(g.nodes):
        spec = g.nodes[nid].block
        p = B.count_block_params(spec)
        m = B.block_macs(spec, sizes[nid.i])
        nodes.append(NodeAnalysis(node=nid, params=p, macs=m))
        row_params[nid.i] += p

    emb_p = B.count_embedding_params(d_in)
    emb_m = input_points * d_in * B.EMBED_DIM

    ds_p = ds_m = 0
    for nid in sorted(g.supervised):
        w = dims.width(nid.i)
        ds_p += B.count_decoder_head_params(w, classes)
        ds_m += sizes[nid.i] * w * classes
        row_params[nid.i] += B.count_decoder_head_params(w, classes)

    w0, wm = dims.width(0), dims.width_mult
    fh_p = B.count_final_head_params(w0, classes, wm)
    fh_m = input_points * (w0 * 64 * wm + 64 * wm * 32 * wm + 32 * wm * classes)

    grid_total = sum(row_params.values())
    total_params = grid_total + emb_p + fh_p
    total_macs = sum(n.macs for n in nodes) + emb_m + ds_m + fh_m

    fractions = {i: row_params[i] / grid_total for i in row_params}

    backbone = {NodeId(i, 0) for i in range(g.levels + 1)} | {
        NodeId(i, g.levels - i) for i in range(g.levels)
    }
    backbone_params = sum(n.params for n in nodes if n.node in backbone & set(g.nodes))
    deepest = {
        NodeId(g.levels, 0),
        NodeId(g.levels - 1, 0),
        NodeId(g.levels - 1, 1),
    }
    deepest_params = sum(n.params for n in nodes if n.node in deepest & set(g.nodes))

    return AnalysisReport(
        nodes=nodes,
        embedding_params=emb_p,
        embedding_macs=emb_m,
        ds_head_params=ds_p,
        ds_head_macs=ds_m,
        final_head_params=fh_p,
        final_head_macs=fh_m,
        total_params=total_params,
        total_macs=total_macs,
        row_params=row_params,
        row_fractions=fractions,
        backbone_share=backbone_params / grid_total,
        deepest_codec_share=deepest_params / grid_total,
    )
