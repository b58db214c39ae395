from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codecforge import metrics as M
from codecforge.blocks import BlockKind, DimSchedule
from codecforge.errors import IndexRangeError, MetricError
from codecforge.graph import NodeId, TopologyKind, build_topology
from codecforge.model import Model
from codecforge.supervision import SupervisionMode, select_supervised_nodes


def brute_force_metrics(preds, labels, classes):
    """Independent per-point recount of OA / IoU / mIoU."""
    pairs = Counter(zip(labels, preds))
    tp = {c: pairs.get((c, c), 0) for c in range(classes)}
    fp = {c: sum(v for (g, p), v in pairs.items() if p == c and g != c) for c in range(classes)}
    fn = {c: sum(v for (g, p), v in pairs.items() if g == c and p != c) for c in range(classes)}
    total = len(preds)
    oa = sum(tp.values()) / total
    iou, defined = {}, {}
    for c in range(classes):
        union = tp[c] + fp[c] + fn[c]
        defined[c] = union > 0
        iou[c] = tp[c] / union if union > 0 else 0.0
    present = [c for c in range(classes) if defined[c]]
    miou = sum(iou[c] for c in present) / len(present)
    return oa, iou, defined, miou


# --- confusion matrix -------------------------------------------------------


def test_accumulate_empty_batch_unchanged():
    cm = M.ConfusionMatrix(3)
    before = cm.counts.copy()
    cm.accumulate([], [])
    np.testing.assert_array_equal(cm.counts, before)


def test_accumulate_perfect_batch_grows_diagonal():
    cm = M.ConfusionMatrix(3)
    cm.accumulate([0, 1, 2, 2], [0, 1, 2, 2])
    assert np.trace(cm.counts) == 4
    assert cm.counts.sum() - np.trace(cm.counts) == 0


def test_accumulate_two_batches_equals_concatenation():
    rng = np.random.default_rng(0)
    p1, l1 = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
    p2, l2 = rng.integers(0, 4, 70), rng.integers(0, 4, 70)
    a = M.ConfusionMatrix(4).accumulate(p1, l1).accumulate(p2, l2)
    b = M.ConfusionMatrix(4).accumulate(
        np.concatenate([p1, p2]), np.concatenate([l1, l2])
    )
    np.testing.assert_array_equal(a.counts, b.counts)


def test_accumulate_range_checks():
    cm = M.ConfusionMatrix(3)
    with pytest.raises(IndexRangeError):
        cm.accumulate([3], [0])
    with pytest.raises(IndexRangeError):
        cm.accumulate([0], [-1])


def test_merge_shards():
    rng = np.random.default_rng(1)
    p, l = rng.integers(0, 3, 90), rng.integers(0, 3, 90)
    whole = M.ConfusionMatrix(3).accumulate(p, l)
    shards = [M.ConfusionMatrix(3).accumulate(p[i::3], l[i::3]) for i in range(3)]
    merged = shards[0].merge(shards[1]).merge(shards[2])
    np.testing.assert_array_equal(merged.counts, whole.counts)


# --- OA / IoU / mIoU -----------------------------------------------------------


def test_oa_perfect_and_hand_case():
    cm = M.ConfusionMatrix(2, counts=[[2, 1], [1, 2]])
    assert M.oa(cm) == pytest.approx(4 / 6)
    perfect = M.ConfusionMatrix(2, counts=[[5, 0], [0, 7]])
    assert M.oa(perfect) == 1.0


def test_oa_uniform_random_near_chance():
    rng = np.random.default_rng(2)
    n, classes = 200_000, 5
    cm = M.ConfusionMatrix(classes).accumulate(
        rng.integers(0, classes, n), rng.integers(0, classes, n)
    )
    assert abs(M.oa(cm) - 1 / classes) < 0.02


def test_oa_empty_matrix_error():
    with pytest.raises(MetricError):
        M.oa(M.ConfusionMatrix(3))


def test_iou_hand_case_and_undefined_flag():
    cm = M.ConfusionMatrix(2, counts=[[2, 1], [1, 2]])
    iou, defined = M.iou_per_class(cm)
    np.testing.assert_allclose(iou, [0.5, 0.5])
    assert defined.all()

    cm3 = M.ConfusionMatrix(3, counts=[[4, 0, 0], [0, 3, 0], [0, 0, 0]])
    iou, defined = M.iou_per_class(cm3)
    assert list(defined) == [True, True, False]
    assert M.miou(cm3) == 1.0  # undefined class excluded, not zeroed


def test_miou_in_iou_bounds():
    rng = np.random.default_rng(3)
    cm = M.ConfusionMatrix(4).accumulate(
        rng.integers(0, 4, 500), rng.integers(0, 4, 500)
    )
    iou, defined = M.iou_per_class(cm)
    m = M.miou(cm)
    assert iou[defined].min() <= m <= iou[defined].max()


def test_miou_all_undefined_error():
    with pytest.raises(MetricError):
        M.miou(M.ConfusionMatrix(3))


def test_macc_present_classes_only():
    cm = M.ConfusionMatrix(3, counts=[[3, 1, 0], [0, 4, 0], [0, 0, 0]])
    assert M.macc(cm) == pytest.approx((3 / 4 + 1.0) / 2)


@given(st.integers(0, 10**6), st.integers(2, 8), st.integers(1, 400))
@settings(max_examples=60, deadline=None)
def test_metric_trio_matches_brute_force_recount(seed, classes, n):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, n)
    preds = rng.integers(0, classes, n)
    cm = M.ConfusionMatrix(classes).accumulate(preds, labels)
    ref_oa, ref_iou, ref_defined, ref_miou = brute_force_metrics(preds, labels, classes)
    assert M.oa(cm) == ref_oa
    iou, defined = M.iou_per_class(cm)
    for c in range(classes):
        assert defined[c] == ref_defined[c]
        assert iou[c] == ref_iou[c]
    assert M.miou(cm) == ref_miou


def test_metrics_csv_columns():
    cm = M.ConfusionMatrix(2, counts=[[2, 1], [1, 2]])
    text = M.metrics_csv(cm)
    lines = text.strip().splitlines()
    assert lines[0] == "class_id,iou,defined"
    assert lines[1].startswith("0,0.5")
    assert any(ln.startswith("oa,") for ln in lines)
    assert any(ln.startswith("miou,") for ln in lines)


# --- analyze -----------------------------------------------------------------


def supervised_graph(kind, levels=4, block=BlockKind.SHARED_MLP):
    g = build_topology(kind, levels, block_kind=block, k=16)
    g.supervised = select_supervised_nodes(g, SupervisionMode.MULTI_LEVEL)
    return g


def test_analyze_totals_match_registered_trainables():
    for block in BlockKind:
        for kind in (TopologyKind.UNET, TopologyKind.UNEXT):
            g = supervised_graph(kind, levels=2, block=block)
            rep = M.analyze(g, 512, d_in=6, classes=6)
            model = Model(g, classes=6, in_dim=6, seed=0)
            assert rep.total_params == model.num_params()


def test_analyze_table5_ordering_both_blocks():
    ladder = [
        TopologyKind.UNET,
        TopologyKind.UNET_PLUS,
        TopologyKind.UNET_PLUS_PLUS,
        TopologyKind.UNET_PLUS_D,
        TopologyKind.UNEXT,
    ]
    for block in BlockKind:
        totals = [
            M.analyze(supervised_graph(kind, 4, block), 40960).total_params
            for kind in ladder
        ]
        assert all(a < b for a, b in zip(totals, totals[1:])), (block, totals)


def test_analyze_level_scaling_ratio_at_least_3():
    totals = [
        M.analyze(supervised_graph(TopologyKind.UNEXT, L), 40960).total_params
        for L in (1, 2, 3, 4)
    ]
    assert all(b / a >= 3.0 for a, b in zip(totals, totals[1:]))
    assert all(a < b for a, b in zip(totals, totals[1:]))


def test_analyze_deepest_codec_dominates():
    for block in BlockKind:
        rep = M.analyze(supervised_graph(TopologyKind.UNEXT, 4, block), 40960)
        assert rep.deepest_codec_share > 0.5
        assert rep.deepest_codec_share > max(rep.row_fractions.values())
        assert rep.backbone_share > max(rep.row_fractions.values())


def test_analyze_fractions_sum_to_one():
    rep = M.analyze(supervised_graph(TopologyKind.UNEXT, 3), 4096)
    assert abs(sum(rep.row_fractions.values()) - 1.0) < 1e-9


def test_analyze_row_sizes_follow_ratios():
    assert M.row_point_counts(512, (4, 4, 4, 4, 2), 4) == [128, 32, 8, 2, 1]
    assert M.row_point_counts(40960, (4, 4, 4, 4, 2), 4) == [10240, 2560, 640, 160, 80]


def test_analyze_csv_shape():
    g = supervised_graph(TopologyKind.UNEXT, 2)
    rep = M.analyze(g, 512)
    lines = rep.csv().strip().splitlines()
    assert lines[0] == "node_i,node_j,params,macs"
    assert len([ln for ln in lines if ln[0].isdigit()]) == len(g.nodes)
    assert lines[-1].startswith("total,")


def test_analyze_macs_scale_with_points():
    g = supervised_graph(TopologyKind.UNEXT, 2)
    small = M.analyze(g, 512).total_macs
    large = M.analyze(g, 5120).total_macs
    assert 8 <= large / small <= 12  # linear in point count, ceil effects aside
