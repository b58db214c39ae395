"""Executable model: a codec graph plus its parameters.

Execution follows the resolution schedule: node (i, j) runs at row-i
resolution, encoder transitions gather-downsample before coding, decoder
nodes concatenate their typed inputs in spec order (upsampling/downsampling
per transform) and code, and the final row-0 node is upsampled to full
resolution and classified by the FC head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import blocks as B
from . import tensor as T
from .errors import ConfigError, ShapeError
from .graph import EdgeTransform, GraphSpec, NodeId, ensure_valid
from .pointops import PointCloud, SamplingHierarchy, downsample_gather, upsample_nearest
from .tensor import Tensor


def _component_seed(master: int, tag: tuple[int, ...]) -> int:
    # stable per-component stream, independent of how many components exist
    return int(np.random.SeedSequence((master,) + tag).generate_state(1, np.uint64)[0])


@dataclass
class ForwardResult:
    node_outputs: dict[NodeId, Tensor]
    logits: Tensor  # full resolution, n x classes


class Model:
    """Parameters for one graph: embedding, per-node blocks, heads."""

    def __init__(
        self,
        graph: GraphSpec,
        classes: int,
        in_dim: int = 6,
        seed: int = 0,
    ):
        ensure_valid(graph)
        if classes < 2:
            raise ConfigError(f"need at least 2 classes, got {classes}")
        self.graph = graph
        self.classes = classes
        self.in_dim = in_dim
        self.seed = seed
        dims = graph.dim_schedule
        self.embedding = B.init_embedding(in_dim, _component_seed(seed, (0,)))
        self.blocks = {
            nid: B.init_params(node.block, _component_seed(seed, (1, nid.i, nid.j)))
            for nid, node in graph.nodes.items()
        }
        self.ds_heads = {
            nid: B.init_decoder_head(
                dims.width(nid.i), classes, _component_seed(seed, (2, nid.i, nid.j))
            )
            for nid in sorted(graph.supervised)
        }
        self.final_head = B.init_final_head(
            dims.width(0), classes, dims.width_mult, _component_seed(seed, (3,))
        )

    # -- parameter traversal ------------------------------------------------

    def named_parameters(self):
        yield from B.named_parameters(self.embedding, "embedding")
        for nid in sorted(self.blocks):
            yield from B.named_parameters(self.blocks[nid], f"node.{nid.i}.{nid.j}")
        for nid in sorted(self.ds_heads):
            yield from B.named_parameters(self.ds_heads[nid], f"ds_head.{nid.i}.{nid.j}")
        yield from B.named_parameters(self.final_head, "final_head")

    def named_buffers(self):
        yield from B.named_buffers(self.embedding, "embedding")
        for nid in sorted(self.blocks):
            yield from B.named_buffers(self.blocks[nid], f"node.{nid.i}.{nid.j}")
        yield from B.named_buffers(self.final_head, "final_head")

    def num_params(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def zero_grad(self) -> None:
        for _, t in self.named_parameters():
            t.zero_grad()

    # -- execution ------------------------------------------------------------

    def forward(
        self,
        cloud: PointCloud | np.ndarray,
        hier: SamplingHierarchy,
        mode: B.RunMode = B.EVAL,
        dropout_seed: int = 0,
    ) -> ForwardResult:
        """Run the grid; returns per-node features and full-resolution logits."""
        g = self.graph
        if hier.num_rows < g.levels + 1:
            raise ShapeError(
                f"hierarchy has {hier.num_rows} rows, graph needs {g.levels + 1}"
            )
        feats = cloud.features(self.in_dim == 6) if isinstance(cloud, PointCloud) else cloud
        if feats.shape[1] != self.in_dim:
            raise ShapeError(
                f"model expects {self.in_dim} input features, got {feats.shape[1]}"
            )
        x_in = Tensor(np.asarray(feats, dtype=T.get_default_dtype()))
        embed = B.initial_embedding(x_in, self.embedding, mode)

        outputs: dict[NodeId, Tensor] = {}
        for node in g.execution_order():
            nid = node.id
            try:
                if nid.j == 0:
                    src = embed if nid.i == 0 else outputs[NodeId(nid.i - 1, 0)]
                    x = downsample_gather(src, hier, to_row=nid.i)
                else:
                    parts = []
                    for src_id, tf in node.inputs:
                        src = outputs[src_id]
                        if tf is EdgeTransform.UP:
                            src = upsample_nearest(src, hier, from_row=src_id.i)
                        elif tf is EdgeTransform.DOWN:
                            src = downsample_gather(src, hier, to_row=nid.i)
                        parts.append(src)
                    x = T.concat(parts, axis=1)
                row = hier.rows[nid.i]
                if node.block.kind is B.BlockKind.LOCAL_AGG and row.knn.k != node.block.k:
                    raise ShapeError(
                        f"hierarchy knn k={row.knn.k} != block k={node.block.k}"
                    )
                outputs[nid] = B.apply_block(
                    x, self.blocks[nid], mode, coords=row.coords, knn=row.knn
                )
            except ShapeError as e:
                raise ShapeError(f"node ({nid.i}, {nid.j}): {e}") from e

        top = outputs[g.final_node]
        full = upsample_nearest(top, hier, from_row=0)
        logits = B.final_head(full, self.final_head, mode, seed=dropout_seed)
        return ForwardResult(node_outputs=outputs, logits=logits)
