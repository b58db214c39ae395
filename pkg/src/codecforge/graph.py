"""Codec grid construction, validation, and export.

Every topology in the evolution ladder is expressed as a grid of nodes
X(i, j): row i is the resolution level (0 = finest coded level), column j
the sub-network index (0 = encoder). Node inputs are typed edges, ordered
[Horizontal..., Up, Down, LongSkip...]; that order fixes the concatenation
layout and therefore the weights.

``enumerate_connectivity`` is a deliberately literal transcription of the
column-major connectivity loop and serves as the test oracle for the
nested-codec builder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

from .blocks import EMBED_DIM, BlockKind, CodingBlockSpec, DimSchedule
from .errors import ConfigError


class NodeId(NamedTuple):
    i: int  # resolution row
    j: int  # sub-network column


class EdgeTransform(Enum):
    HORIZONTAL = "horizontal"
    UP = "up"
    DOWN = "down"
    LONG_SKIP = "long_skip"


# rank used by the input-order convention [H..., Up, Down, LS...]
_ORDER = {
    EdgeTransform.HORIZONTAL: 0,
    EdgeTransform.UP: 1,
    EdgeTransform.DOWN: 2,
    EdgeTransform.LONG_SKIP: 3,
}


class TopologyKind(Enum):
    UNET = "unet"
    UNET_PLUS = "unet_plus"
    UNET_PLUS_PLUS = "unet_plus_plus"
    UNET_PLUS_D = "unet_plus_d"
    UNEXT = "unext"
    UNEXT_DENSE = "unext_dense"


@dataclass
class NodeSpec:
    id: NodeId
    inputs: list[tuple[NodeId, EdgeTransform]]
    block: CodingBlockSpec


@dataclass
class GraphSpec:
    kind: TopologyKind
    levels: int
    nodes: dict[NodeId, NodeSpec]
    dim_schedule: DimSchedule
    supervised: set[NodeId] = field(default_factory=set)

    @property
    def final_node(self) -> NodeId:
        return NodeId(0, max(n.j for n in self.nodes if n.i == 0))

    def decoder_nodes(self) -> list[NodeId]:
        return sorted(n for n in self.nodes if n.j >= 1)

    def edges(self) -> set[tuple[NodeId, NodeId, EdgeTransform]]:
        return {
            (src, node.id, tf) for node in self.nodes.values() for src, tf in node.inputs
        }

    def execution_order(self) -> list[NodeSpec]:
        # column-major, fine-to-coarse inside a column: sources always precede
        return [self.nodes[nid] for nid in sorted(self.nodes, key=lambda n: (n.j, n.i))]


def _decoder_inputs(kind: TopologyKind, levels: int, i: int, j: int):
    """Typed input list of decoder node (i, j) for the given topology."""
    inputs: list[tuple[NodeId, EdgeTransform]] = []
    if kind is TopologyKind.UNET_PLUS_PLUS:
        for col in range(j):
            inputs.append((NodeId(i, col), EdgeTransform.HORIZONTAL))
    else:
        inputs.append((NodeId(i, j - 1), EdgeTransform.HORIZONTAL))
    inputs.append((NodeId(i + 1, j - 1), EdgeTransform.UP))
    if kind in (TopologyKind.UNET_PLUS_D, TopologyKind.UNEXT, TopologyKind.UNEXT_DENSE):
        if i > 0:
            inputs.append((NodeId(i - 1, j), EdgeTransform.DOWN))
    if kind is TopologyKind.UNEXT and j > 0 and i + j == levels:
        # long skip feeds the last node of each row from the row's encoder node
        inputs.append((NodeId(i, 0), EdgeTransform.LONG_SKIP))
    if kind is TopologyKind.UNEXT_DENSE and j > 1:
        for col in range(j - 1):
            inputs.append((NodeId(i, col), EdgeTransform.LONG_SKIP))
    return inputs


def build_topology(
    kind: TopologyKind,
    levels: int,
    dims: DimSchedule | None = None,
    block_kind: BlockKind = BlockKind.SHARED_MLP,
    k: int = 16,
    mlp_layers: int = 2,
) -> GraphSpec:
    """Construct the node grid of one evolution-ladder topology."""
    dims = dims or DimSchedule()
    if not 1 <= levels <= dims.max_levels:
        raise ConfigError(
            f"levels must be in [1, {dims.max_levels}] for {len(dims.row_dims)} row dims, "
            f"got {levels}"
        )

    def block_for(i: int, in_dim: int) -> CodingBlockSpec:
        return CodingBlockSpec(
            kind=block_kind, in_dim=in_dim, out_dim=dims.width(i), k=k, layers=mlp_layers
        )

    nodes: dict[NodeId, NodeSpec] = {}

    # encoder column, shared by every topology; node (i, 0) codes at row i
    # after downsampling its source (the embedding for i = 0)
    for i in range(levels + 1):
        nid = NodeId(i, 0)
        inputs = [] if i == 0 else [(NodeId(i - 1, 0), EdgeTransform.DOWN)]
        in_dim = EMBED_DIM if i == 0 else dims.width(i - 1)
        nodes[nid] = NodeSpec(id=nid, inputs=inputs, block=block_for(i, in_dim))

    if kind is TopologyKind.UNET:
        decoder = [(i, levels - i) for i in range(levels - 1, -1, -1)]
        for i, j in decoder:
            nid = NodeId(i, j)
            inputs = [
                (NodeId(i, 0), EdgeTransform.HORIZONTAL),
                (NodeId(i + 1, j - 1), EdgeTransform.UP),
            ]
            in_dim = dims.width(i) + dims.width(i + 1)
            nodes[nid] = NodeSpec(id=nid, inputs=inputs, block=block_for(i, in_dim))
    else:
        for j in range(1, levels + 1):
            for i in range(levels + 1 - j):
                nid = NodeId(i, j)
                inputs = _decoder_inputs(kind, levels, i, j)
                in_dim = sum(dims.width(src.i) for src, _ in inputs)
                nodes[nid] = NodeSpec(id=nid, inputs=inputs, block=block_for(i, in_dim))

    return GraphSpec(kind=kind, levels=levels, nodes=nodes, dim_schedule=dims)


def enumerate_connectivity(levels: int) -> set[tuple[NodeId, NodeId, EdgeTransform]]:
    """Literal transcription of the column-major node connectivity loop.

    Independent of build_topology on purpose: this is the oracle the
    nested-codec builder is checked against. Stored node (i, 0) sits at
    row-i resolution, so the encoder edge is the down-then-code step.
    """
    if levels < 1:
        raise ConfigError(f"levels must be >= 1, got {levels}")
    n = levels + 1
    edges: set[tuple[NodeId, NodeId, EdgeTransform]] = set()
    for j in range(n):
        if j == 0:
            for i in range(n - j):
                if i > 0:  # x = DownSampling(x) between encoder codes
                    edges.add((NodeId(i - 1, 0), NodeId(i, 0), EdgeTransform.DOWN))
        else:
            for i in range(n - j):
                target = NodeId(i, j)
                # x0: previous column, same row
                edges.add((NodeId(i, j - 1), target, EdgeTransform.HORIZONTAL))
                # x1: previous column, one row deeper, upsampled
                edges.add((NodeId(i + 1, j - 1), target, EdgeTransform.UP))
                if i > 0:
                    # x2: the node just computed in this column, downsampled
                    edges.add((NodeId(i - 1, j), target, EdgeTransform.DOWN))
                if i + j == n - 1:
                    # x3: the last node of each row takes the row's encoder output
                    edges.add((NodeId(i, 0), target, EdgeTransform.LONG_SKIP))
    return edges


def validate_graph(g: GraphSpec) -> str | None:
    """Return the first violated structural check, or None if the graph is sound."""
    if not g.nodes:
        return "graph has no nodes"
    if NodeId(0, 0) not in g.nodes:
        return "graph has no root encoder node (0, 0)"
    for nid, node in g.nodes.items():
        if nid != node.id:
            return f"node {tuple(nid)} stored under mismatched key"
        if not (0 <= nid.i <= g.levels and 0 <= nid.j <= g.levels):
            return f"node {tuple(nid)} outside the level range [0, {g.levels}]"
        for src, tf in node.inputs:
            if src not in g.nodes:
                return f"node {tuple(nid)} references missing source {tuple(src)}"
            if tf is EdgeTransform.UP and src.i != nid.i + 1:
                return (
                    f"up edge into {tuple(nid)} must source row {nid.i + 1}, "
                    f"got {tuple(src)}"
                )
            if tf is EdgeTransform.DOWN and src.i != nid.i - 1:
                return (
                    f"down edge into {tuple(nid)} must source row {nid.i - 1}, "
                    f"got {tuple(src)}"
                )
            if tf in (EdgeTransform.HORIZONTAL, EdgeTransform.LONG_SKIP) and src.i != nid.i:
                return (
                    f"{tf.value} edge into {tuple(nid)} must stay in row {nid.i}, "
                    f"got {tuple(src)}"
                )
        ranks = [_ORDER[tf] for _, tf in node.inputs]
        if ranks != sorted(ranks):
            return f"node {tuple(nid)} inputs violate the [H, Up, Down, LongSkip] order"
        if sum(1 for _, tf in node.inputs if tf is EdgeTransform.UP) > 1:
            return f"node {tuple(nid)} has more than one up edge"
        if sum(1 for _, tf in node.inputs if tf is EdgeTransform.DOWN) > 1:
            return f"node {tuple(nid)} has more than one down edge"

    # acyclicity via iterative DFS over input edges
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {nid: WHITE for nid in g.nodes}
    for start in g.nodes:
        if color[start] != WHITE:
            continue
        stack = [(start, iter(g.nodes[start].inputs))]
        color[start] = GRAY
        while stack:
            nid, it = stack[-1]
            advanced = False
            for src, _ in it:
                if color[src] == GRAY:
                    return f"cycle detected through {tuple(src)}"
                if color[src] == WHITE:
                    color[src] = GRAY
                    stack.append((src, iter(g.nodes[src].inputs)))
                    advanced = True
                    break
            if not advanced:
                color[nid] = BLACK
                stack.pop()

    # the executor runs nodes in sorted (j, i) order; sources must come first
    seen: set[NodeId] = set()
    for node in g.execution_order():
        for src, _ in node.inputs:
            if src not in seen:
                return (
                    f"node {tuple(node.id)} consumes {tuple(src)} before it is computed"
                )
        seen.add(node.id)

    dims = g.dim_schedule
    for nid, node in g.nodes.items():
        if node.block.out_dim != dims.width(nid.i):
            return (
                f"node {tuple(nid)} out width {node.block.out_dim} != "
                f"schedule width {dims.width(nid.i)}"
            )
        expected_in = (
            EMBED_DIM if nid == (0, 0) else sum(dims.width(s.i) for s, _ in node.inputs)
        )
        if node.block.in_dim != expected_in:
            return (
                f"node {tuple(nid)} in width {node.block.in_dim} != "
                f"sum of source widths {expected_in}"
            )
    for nid in g.supervised:
        if nid not in g.nodes:
            return f"supervised node {tuple(nid)} is not in the graph"
    return None


def ensure_valid(g: GraphSpec) -> GraphSpec:
    problem = validate_graph(g)
    if problem is not None:
        raise ConfigError(f"invalid graph: {problem}")
    return g


# ---------------------------------------------------------------------------
# export

_DOT_STYLE = {
    EdgeTransform.HORIZONTAL: "solid",
    EdgeTransform.UP: "dashed",
    EdgeTransform.DOWN: "dotted",
    EdgeTransform.LONG_SKIP: "bold",
}


def to_dot(g: GraphSpec) -> str:
    """Deterministic Graphviz digraph of the node grid."""
    lines = [f"digraph {g.kind.value} {{", "  rankdir=LR;"]
    for nid in sorted(g.nodes):
        lines.append(f'  n_{nid.i}_{nid.j} [label="X_{{{nid.i},{nid.j}}}"];')
    for src, dst, tf in sorted(g.edges(), key=lambda e: (e[1], e[0], e[2].value)):
        lines.append(
            f"  n_{src.i}_{src.j} -> n_{dst.i}_{dst.j} [style={_DOT_STYLE[tf]}];"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_json(g: GraphSpec) -> str:
    """Stable JSON description: sorted node list, sorted edge list, transforms."""
    dims = g.dim_schedule
    doc = {
        "kind": g.kind.value,
        "levels": g.levels,
        "dim_schedule": {
            "row_dims": list(dims.row_dims),
            "width_mult": dims.width_mult,
            "extra": list(dims.extra) if dims.extra is not None else None,
        },
        "nodes": [
            {
                "i": nid.i,
                "j": nid.j,
                "block_kind": g.nodes[nid].block.kind.value,
                "in_dim": g.nodes[nid].block.in_dim,
                "out_dim": g.nodes[nid].block.out_dim,
            }
            for nid in sorted(g.nodes)
        ],
        "edges": [
            {"src": [src.i, src.j], "dst": [dst.i, dst.j], "transform": tf.value}
            for src, dst, tf in sorted(
                g.edges(), key=lambda e: (e[1], e[0], e[2].value)
            )
        ],
        "supervised": [[nid.i, nid.j] for nid in sorted(g.supervised)],
    }
    return json.dumps(doc, indent=2) + "\n"
