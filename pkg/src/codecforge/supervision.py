"""Deep-supervision node selection and the hybrid training loss.

Each supervised decoder node gets its own plain linear head; its loss is
the cross-entropy of those logits against the labels traced through the
exact sampling indices of the node's row (no label interpolation). The
deep-supervision term is the arithmetic mean over supervised nodes, and
the hybrid loss is that mean plus the final-output loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import tensor as T
from .blocks import HeadParams, decoder_head
from .errors import NumericError, ShapeError
from .graph import GraphSpec, NodeId
from .pointops import SamplingHierarchy, propagate_labels
from .tensor import Tensor


class SupervisionMode(Enum):
    NO_DS = "no_ds"
    FULL_RESOLUTION = "full_resolution"
    LATERAL = "lateral"
    MULTI_LEVEL = "multi_level"


def select_supervised_nodes(g: GraphSpec, mode: SupervisionMode) -> set[NodeId]:
    """Decoder nodes receiving an auxiliary loss under the given mode."""
    decoders = [nid for nid in g.nodes if nid.j >= 1]
    if mode is SupervisionMode.NO_DS:
        return set()
    if mode is SupervisionMode.MULTI_LEVEL:
        return set(decoders)
    if mode is SupervisionMode.FULL_RESOLUTION:
        return {nid for nid in decoders if nid.i == 0}
    if mode is SupervisionMode.LATERAL:
        last: dict[int, NodeId] = {}
        for nid in decoders:
            if nid.i not in last or nid.j > last[nid.i].j:
                last[nid.i] = nid
        return set(last.values())
    raise ValueError(f"unknown supervision mode {mode}")


def node_loss(
    features: Tensor,
    labels: np.ndarray,
    hier: SamplingHierarchy,
    row: int,
    head: HeadParams,
) -> Tensor:
    """Cross-entropy of a node's head against the row's traced labels."""
    row_labels = propagate_labels(labels, hier, row)
    if features.shape[0] != len(row_labels):
        raise ShapeError(
            f"node features have {features.shape[0]} rows, row {row} has "
            f"{len(row_labels)} labels"
        )
    return T.softmax_cross_entropy(decoder_head(features, head), row_labels)


def loss_ds(per_node: dict[NodeId, Tensor]) -> Tensor:
    """Mean of the supervised per-node losses; 0 when nothing is supervised."""
    if not per_node:
        return Tensor(0.0)
    total = None
    for nid in sorted(per_node):
        total = per_node[nid] if total is None else T.add(total, per_node[nid])
    return T.mul(total, 1.0 / len(per_node))


@dataclass
class LossReport:
    per_node: dict[NodeId, float]
    l_ds: float
    l_oa: float
    l_h: float
    n_supervised: int
    classes: int
    levels: int
    loss: Tensor | None = field(default=None, repr=False)  # tape-connected l_h

    def to_json(self) -> str:
        return json.dumps(
            {
                "per_node": {f"{n.i},{n.j}": v for n, v in sorted(self.per_node.items())},
                "l_ds": self.l_ds,
                "l_oa": self.l_oa,
                "l_h": self.l_h,
                "n_supervised": self.n_supervised,
                "classes": self.classes,
                "levels": self.levels,
            }
        )


def loss_hybrid(
    per_node: dict[NodeId, Tensor],
    l_oa: Tensor,
    classes: int,
    levels: int,
) -> LossReport:
    """Combine the deep-supervision mean with the final-output loss."""
    l_ds = loss_ds(per_node)
    for nid, t in per_node.items():
        if not np.isfinite(t.data):
            raise NumericError(f"node ({nid.i}, {nid.j}) loss is not finite")
    if not np.isfinite(l_oa.data):
        raise NumericError("final-output loss is not finite")
    l_h = T.add(l_ds, l_oa) if per_node else l_oa
    return LossReport(
        per_node={nid: float(t.data) for nid, t in per_node.items()},
        l_ds=float(l_ds.data),
        l_oa=float(l_oa.data),
        l_h=float(l_h.data),
        n_supervised=len(per_node),
        classes=classes,
        levels=levels,
        loss=l_h,
    )


def supervised_losses(
    model,
    result,
    labels: np.ndarray,
    hier: SamplingHierarchy,
) -> dict[NodeId, Tensor]:
    """Per-node losses for every supervised node of a forward result."""
    out: dict[NodeId, Tensor] = {}
    for nid in sorted(model.graph.supervised):
        out[nid] = node_loss(
            result.node_outputs[nid], labels, hier, nid.i, model.ds_heads[nid]
        )
    return out


def hybrid_from_forward(model, result, labels: np.ndarray, hier: SamplingHierarchy) -> LossReport:
    """LossReport for one forward pass: per-node CEs, final CE, hybrid sum."""
    per_node = supervised_losses(model, result, labels, hier)
    l_oa = T.softmax_cross_entropy(result.logits, labels)
    return loss_hybrid(per_node, l_oa, model.classes, model.graph.levels)
