"""Shared fixtures-by-function for graph/model tests."""

import numpy as np

from codecforge import blocks as B
from codecforge import pointops as P
from codecforge.graph import EdgeTransform, TopologyKind, build_topology
from codecforge.model import Model


def small_cloud(n=128, seed=0, classes=6):
    rng = np.random.default_rng(seed)
    return P.PointCloud(
        coords=rng.uniform(0, 4, (n, 3)),
        colors=rng.uniform(0, 1, (n, 3)),
        labels=rng.integers(0, classes, n),
    )


def small_setup(
    kind=TopologyKind.UNEXT,
    levels=2,
    n=128,
    k=4,
    block_kind=B.BlockKind.SHARED_MLP,
    seed=0,
    classes=6,
):
    cloud = small_cloud(n=n, seed=seed, classes=classes)
    ratios = [4] * (levels + 1)
    hier = P.build_hierarchy(cloud, ratios, k=k, seed=seed + 1)
    graph = build_topology(kind, levels, block_kind=block_kind, k=k)
    model = Model(graph, classes=classes, in_dim=6, seed=seed + 2)
    return cloud, hier, graph, model


def copy_params_into(src: Model, dst: Model) -> None:
    """Copy parameters/buffers by name wherever shapes match."""
    src_params = dict(src.named_parameters())
    for name, t in dst.named_parameters():
        if name in src_params and src_params[name].shape == t.shape:
            t.data = src_params[name].data.copy()
    src_bufs = dict(src.named_buffers())
    for name, b in dst.named_buffers():
        if name in src_bufs and src_bufs[name].shape == b.shape:
            b[:] = src_bufs[name]


def collapse_long_skips(unext: Model, plain: Model) -> None:
    """Make a long-skip model agree with its skip-free twin.

    Zeroes the long-skip slice of every first-layer weight in the richer
    model and copies the shared leading slice (plus all other parameters)
    into the plain model. Both models then compute identical functions of
    the shared parameters.
    """
    plain_nodes = plain.graph.nodes
    for nid, node in unext.graph.nodes.items():
        widths = [
            unext.graph.dim_schedule.width(src.i) for src, _ in node.inputs
        ]
        ls_width = sum(
            w
            for w, (_, tf) in zip(widths, node.inputs)
            if tf is EdgeTransform.LONG_SKIP
        )
        if ls_width == 0:
            continue
        params = unext.blocks[nid]
        first = params.layers[0] if isinstance(params, B.SharedMLPParams) else params.mix
        keep = first.linear.weight.shape[0] - ls_width
        first.linear.weight.data[keep:, :] = 0.0
        if nid in plain_nodes:
            plain_first = (
                plain.blocks[nid].layers[0]
                if isinstance(plain.blocks[nid], B.SharedMLPParams)
                else plain.blocks[nid].mix
            )
            plain_first.linear.weight.data = first.linear.weight.data[:keep, :].copy()
    copy_params_into(unext, plain)
