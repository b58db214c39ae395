import json

import numpy as np
import pytest

from codecforge import blocks as B
from codecforge import tensor as T
from codecforge.errors import ConfigError, ShapeError
from codecforge.graph import (
    EdgeTransform,
    NodeId,
    TopologyKind,
    build_topology,
    enumerate_connectivity,
    ensure_valid,
    to_dot,
    to_json,
    validate_graph,
)
from helpers import collapse_long_skips, small_setup

WIDE_DIMS = B.DimSchedule(row_dims=(8, 16, 32, 64, 128, 256, 512))  # allows L up to 6


@pytest.fixture(autouse=True)
def high_precision():
    with T.use_dtype(np.float64):
        yield


# --- construction -------------------------------------------------------------


def test_unext_l4_cardinalities():
    g = build_topology(TopologyKind.UNEXT, 4)
    assert len(g.nodes) == 15
    assert len(g.decoder_nodes()) == 10
    skips = [e for e in g.edges() if e[2] is EdgeTransform.LONG_SKIP]
    assert len(skips) == 4
    assert {tuple(e[1]) for e in skips} == {(0, 4), (1, 3), (2, 2), (3, 1)}
    assert all(e[0] == NodeId(e[1][0], 0) for e in skips)


def test_unet_node_counts():
    for levels in (1, 2, 3, 4):
        g = build_topology(TopologyKind.UNET, levels)
        assert len(g.nodes) == 2 * levels + 1
    assert len(build_topology(TopologyKind.UNET, 4).nodes) == 9


def test_full_grid_node_counts():
    for kind in (
        TopologyKind.UNET_PLUS,
        TopologyKind.UNET_PLUS_PLUS,
        TopologyKind.UNET_PLUS_D,
        TopologyKind.UNEXT,
        TopologyKind.UNEXT_DENSE,
    ):
        for levels in (1, 2, 3, 4):
            g = build_topology(kind, levels)
            assert len(g.nodes) == (levels + 1) * (levels + 2) // 2


def test_levels_out_of_range():
    with pytest.raises(ConfigError):
        build_topology(TopologyKind.UNEXT, 0)
    with pytest.raises(ConfigError):
        build_topology(TopologyKind.UNEXT, 5)  # default schedule has 5 rows


# --- connectivity oracle ---------------------------------------------------------


def test_connectivity_hand_trace_l1():
    edges = enumerate_connectivity(1)
    assert ((0, 0), (1, 0), EdgeTransform.DOWN) in edges
    assert ((1, 0), (0, 1), EdgeTransform.UP) in edges
    assert ((0, 0), (0, 1), EdgeTransform.HORIZONTAL) in edges
    # the decoder node is the last node of row 0, so the literal loop also
    # attaches the row's long skip (source coincides with the horizontal edge)
    assert ((0, 0), (0, 1), EdgeTransform.LONG_SKIP) in edges
    assert len(edges) == 4


def test_connectivity_hand_trace_l2_node_1_1():
    edges = enumerate_connectivity(2)
    incoming = {(src, tf) for src, dst, tf in edges if dst == (1, 1)}
    assert (NodeId(1, 0), EdgeTransform.HORIZONTAL) in incoming
    assert (NodeId(2, 0), EdgeTransform.UP) in incoming
    assert (NodeId(0, 1), EdgeTransform.DOWN) in incoming
    # (1, 1) is the last node of row 1 at L=2: the long skip fires here too
    assert (NodeId(1, 0), EdgeTransform.LONG_SKIP) in incoming
    assert len(incoming) == 4


@pytest.mark.parametrize("levels", range(1, 7))
def test_builder_matches_connectivity_oracle(levels):
    g = build_topology(TopologyKind.UNEXT, levels, dims=WIDE_DIMS)
    assert g.edges() == enumerate_connectivity(levels)


def test_unext_l1_is_unet_l1_plus_redundant_skip():
    unext = build_topology(TopologyKind.UNEXT, 1)
    unet = build_topology(TopologyKind.UNET, 1)
    plus_d = build_topology(TopologyKind.UNET_PLUS_D, 1)
    # the L1 codec: UNet and UNet+d coincide exactly; UNext adds one long
    # skip whose source duplicates the horizontal input of (0, 1)
    assert unet.edges() == plus_d.edges()
    extra = unext.edges() - unet.edges()
    assert extra == {(NodeId(0, 0), NodeId(0, 1), EdgeTransform.LONG_SKIP)}


def test_edge_count_orderings():
    for levels in (3, 4):
        counts = {
            kind: len(build_topology(kind, levels).edges())
            for kind in TopologyKind
        }
        assert counts[TopologyKind.UNET] < counts[TopologyKind.UNET_PLUS]
        assert counts[TopologyKind.UNET_PLUS] < counts[TopologyKind.UNET_PLUS_PLUS]
        assert counts[TopologyKind.UNET_PLUS_D] < counts[TopologyKind.UNEXT]
        assert counts[TopologyKind.UNEXT] < counts[TopologyKind.UNEXT_DENSE]


def test_input_order_convention():
    g = build_topology(TopologyKind.UNEXT, 3)
    node = g.nodes[NodeId(1, 2)]  # last node of row 1: all four input kinds
    kinds = [tf for _, tf in node.inputs]
    assert kinds == [
        EdgeTransform.HORIZONTAL,
        EdgeTransform.UP,
        EdgeTransform.DOWN,
        EdgeTransform.LONG_SKIP,
    ]


# --- validation --------------------------------------------------------------


@pytest.mark.parametrize("kind", list(TopologyKind))
@pytest.mark.parametrize("levels", range(1, 6))
def test_all_builtin_topologies_validate(kind, levels):
    g = build_topology(kind, levels, dims=WIDE_DIMS)
    assert validate_graph(g) is None


def test_validate_rejects_bad_up_edge():
    g = build_topology(TopologyKind.UNET, 2)
    node = g.nodes[NodeId(1, 1)]
    # fabricate an Up edge that sources the row above instead of below
    node.inputs = [(NodeId(0, 0), EdgeTransform.UP)] + node.inputs[1:]
    problem = validate_graph(g)
    assert problem is not None and "up edge" in problem


def test_validate_rejects_cycle():
    g = build_topology(TopologyKind.UNET_PLUS, 2)
    g.nodes[NodeId(0, 0)].inputs.append((NodeId(0, 2), EdgeTransform.HORIZONTAL))
    problem = validate_graph(g)
    assert problem is not None and ("cycle" in problem or "order" in problem)


def test_validate_rejects_width_mismatch():
    g = build_topology(TopologyKind.UNET, 1)
    g.nodes[NodeId(0, 1)].block = B.CodingBlockSpec(
        B.BlockKind.SHARED_MLP, in_dim=80, out_dim=999
    )
    problem = validate_graph(g)
    assert problem is not None and "width" in problem
    with pytest.raises(ConfigError):
        ensure_valid(g)


def test_validate_rejects_missing_source():
    g = build_topology(TopologyKind.UNET, 1)
    g.nodes[NodeId(0, 1)].inputs.append((NodeId(0, 9), EdgeTransform.HORIZONTAL))
    assert "missing source" in validate_graph(g)


# --- export ----------------------------------------------------------------------


def test_dot_unet_l2_node_declarations():
    dot = to_dot(build_topology(TopologyKind.UNET, 2))
    assert dot.count("[label=") == 5
    assert "digraph unet" in dot


def test_dot_deterministic_and_edges_roundtrip():
    g = build_topology(TopologyKind.UNEXT, 3)
    dot = to_dot(g)
    assert dot == to_dot(build_topology(TopologyKind.UNEXT, 3))
    arrows = [ln for ln in dot.splitlines() if "->" in ln]
    assert len(arrows) == len(g.edges())
    style_of = {"solid": "horizontal", "dashed": "up", "dotted": "down", "bold": "long_skip"}
    parsed = set()
    for ln in arrows:
        left, right = ln.strip().split(" -> ")
        dst, style = right.split(" [style=")
        si, sj = map(int, left.split("_")[1:])
        di, dj = map(int, dst.split("_")[1:])
        parsed.add((NodeId(si, sj), NodeId(di, dj), style_of[style.rstrip("];")]))
    assert parsed == {(s, d, tf.value) for s, d, tf in g.edges()}


def test_json_export_schema_and_stability():
    g = build_topology(TopologyKind.UNEXT, 2)
    g.supervised = {NodeId(0, 1), NodeId(0, 2), NodeId(1, 1)}
    text = to_json(g)
    assert text == to_json(g)
    doc = json.loads(text)
    assert doc["kind"] == "unext"
    assert doc["levels"] == 2
    assert len(doc["nodes"]) == 6
    assert {tuple(e["dst"]) + (e["transform"],) for e in doc["edges"]} == {
        (d.i, d.j, tf.value) for _, d, tf in g.edges()
    }
    assert doc["supervised"] == [[0, 1], [0, 2], [1, 1]]
    assert doc["dim_schedule"]["row_dims"] == [16, 64, 128, 256, 512]


# --- forward execution ------------------------------------------------------------


def test_forward_node_shapes_follow_schedule():
    cloud, hier, graph, model = small_setup(TopologyKind.UNEXT, levels=2, n=128)
    res = model.forward(cloud, hier, B.EVAL)
    for nid, out in res.node_outputs.items():
        assert out.shape == (len(hier.rows[nid.i].coords), graph.dim_schedule.width(nid.i))
    assert res.logits.shape == (128, 6)


def test_forward_all_topologies_run():
    for kind in TopologyKind:
        cloud, hier, graph, model = small_setup(kind, levels=2, n=128)
        res = model.forward(cloud, hier, B.EVAL)
        assert np.isfinite(res.logits.data).all()


def test_forward_local_agg_runs():
    cloud, hier, graph, model = small_setup(
        TopologyKind.UNEXT, levels=2, n=128, block_kind=B.BlockKind.LOCAL_AGG
    )
    res = model.forward(cloud, hier, B.GRAD_CHECK)
    assert np.isfinite(res.logits.data).all()


def test_forward_rejects_short_hierarchy():
    cloud, hier, graph, model = small_setup(TopologyKind.UNEXT, levels=2, n=128)
    import codecforge.pointops as P

    shallow = P.build_hierarchy(cloud, [4], k=4, seed=1)
    with pytest.raises(ShapeError):
        model.forward(cloud, shallow, B.EVAL)


def test_unext_collapses_to_unet_plus_d_when_skip_weights_zeroed():
    cloud, hier, _, unext = small_setup(TopologyKind.UNEXT, levels=2, n=128, seed=3)
    _, _, _, plain = small_setup(TopologyKind.UNET_PLUS_D, levels=2, n=128, seed=3)
    collapse_long_skips(unext, plain)
    a = unext.forward(cloud, hier, B.EVAL).logits.data
    b = plain.forward(cloud, hier, B.EVAL).logits.data
    np.testing.assert_array_equal(a, b)


def test_forward_deterministic():
    cloud, hier, graph, model = small_setup(TopologyKind.UNEXT, levels=2, n=128)
    a = model.forward(cloud, hier, B.EVAL).logits.data
    b = model.forward(cloud, hier, B.EVAL).logits.data
    np.testing.assert_array_equal(a, b)
