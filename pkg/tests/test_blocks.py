import numpy as np
import pytest

from codecforge import blocks as B
from codecforge import pointops as P
from codecforge import tensor as T
from codecforge.errors import ConfigError, ShapeError


@pytest.fixture(autouse=True)
def high_precision():
    with T.use_dtype(np.float64):
        yield


def rand(shape, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, size=shape)


# --- dim schedule ------------------------------------------------------------


def test_dim_schedule_defaults_and_wide():
    dims = B.DimSchedule()
    assert [dims.width(i) for i in range(5)] == [16, 64, 128, 256, 512]
    wide = B.DimSchedule(extra=(2, 4, 8, 16, 32))
    assert [wide.width(i) for i in range(5)] == [18, 68, 136, 272, 544]
    double = B.DimSchedule(width_mult=2)
    assert double.width(0) == 32


def test_dim_schedule_validation():
    with pytest.raises(ConfigError):
        B.DimSchedule(extra=(1, 2))
    with pytest.raises(ConfigError):
        B.DimSchedule(width_mult=0)


# --- initial embedding --------------------------------------------------------


def test_embedding_output_width_is_8():
    for d_in, n in ((3, 5), (6, 17)):
        params = B.init_embedding(d_in, seed=0)
        out = B.initial_embedding(T.Tensor(rand((n, d_in))), params, B.GRAD_CHECK)
        assert out.shape == (n, 8)


def test_embedding_rejects_other_widths():
    with pytest.raises(ConfigError):
        B.init_embedding(4, seed=0)


def test_embedding_zero_params_zero_output():
    params = B.init_embedding(3, seed=0)
    params.layer.linear.weight.data[:] = 0.0
    params.layer.bn.beta.data[:] = 0.0
    out = B.initial_embedding(T.Tensor(rand((6, 3))), params, B.GRAD_CHECK)
    np.testing.assert_array_equal(out.data, np.zeros((6, 8)))


def test_embedding_permutation_equivariance():
    params = B.init_embedding(6, seed=1)
    x = rand((12, 6), seed=2)
    perm = np.random.default_rng(3).permutation(12)
    a = B.initial_embedding(T.Tensor(x), params, B.GRAD_CHECK).data
    b = B.initial_embedding(T.Tensor(x[perm]), params, B.GRAD_CHECK).data
    np.testing.assert_allclose(b, a[perm], rtol=1e-12)


# --- shared mlp ----------------------------------------------------------------


def test_shared_mlp_single_point():
    spec = B.CodingBlockSpec(B.BlockKind.SHARED_MLP, in_dim=4, out_dim=6)
    params = B.init_params(spec, seed=0)
    # BN needs n >= 2 in training; single point works in eval
    out = B.shared_mlp_block(T.Tensor(rand((1, 4))), params, B.EVAL)
    assert out.shape == (1, 6)


def test_shared_mlp_permutation_equivariance_exact():
    spec = B.CodingBlockSpec(B.BlockKind.SHARED_MLP, in_dim=5, out_dim=8)
    params = B.init_params(spec, seed=1)
    x = rand((10, 5), seed=4)
    perm = np.random.default_rng(5).permutation(10)
    a = B.shared_mlp_block(T.Tensor(x), params, B.EVAL).data
    b = B.shared_mlp_block(T.Tensor(x[perm]), params, B.EVAL).data
    np.testing.assert_array_equal(b, a[perm])


def test_shared_mlp_grad_check():
    spec = B.CodingBlockSpec(B.BlockKind.SHARED_MLP, in_dim=3, out_dim=4)
    params = B.init_params(spec, seed=2)
    x = T.parameter(rand((6, 3), seed=6))
    w = T.Tensor(rand((6, 4), seed=7))

    def f(v):
        return T.reduce(T.mul(B.shared_mlp_block(v, params, B.GRAD_CHECK), w), "sum")

    assert T.grad_check(f, x) < 1e-4
    # linear biases feeding BN have identically-zero true gradients, which
    # the atol guard classifies instead of reporting noise-over-noise
    for name, p in B.named_parameters(params, "blk"):
        assert T.grad_check(lambda v, f=f: f(x), p, atol=1e-8) < 1e-4, name


def test_bias_before_bn_gradient_is_exactly_dead():
    spec = B.CodingBlockSpec(B.BlockKind.SHARED_MLP, in_dim=3, out_dim=4)
    params = B.init_params(spec, seed=2)
    x = T.Tensor(rand((6, 3), seed=6))
    bias = params.layers[0].linear.bias
    with T.Tape():
        out = B.shared_mlp_block(x, params, B.GRAD_CHECK)
        T.backward(T.reduce(out, "sum"))
    assert np.abs(bias.grad).max() < 1e-12


def test_shared_mlp_width_mismatch():
    spec = B.CodingBlockSpec(B.BlockKind.SHARED_MLP, in_dim=3, out_dim=4)
    params = B.init_params(spec, seed=0)
    with pytest.raises(ShapeError):
        B.shared_mlp_block(T.Tensor(rand((5, 7))), params, B.EVAL)


# --- local aggregation ------------------------------------------------------------


def make_local_setup(n=8, k=3, in_dim=5, out_dim=6, seed=0):
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0, 2, (n, 3))
    knn = P.knn(coords, coords, k)
    spec = B.CodingBlockSpec(B.BlockKind.LOCAL_AGG, in_dim=in_dim, out_dim=out_dim, k=k)
    params = B.init_params(spec, seed=seed)
    feats = rng.uniform(-1, 1, (n, in_dim))
    return coords, knn, params, feats


def test_local_agg_output_shape():
    coords, knn, params, feats = make_local_setup()
    out = B.local_agg_block(T.Tensor(feats), coords, knn, params, B.GRAD_CHECK)
    assert out.shape == (8, 6)


def test_local_agg_k1_self_encoding():
    # K=1 with self-neighborhood: encoding reduces to [p, p, 0, 0]
    coords = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    knn = P.KnnTable(1, np.array([[0], [1]]))
    enc = B.neighborhood_encoding(coords, knn)
    np.testing.assert_array_equal(
        enc, np.concatenate([coords, coords, np.zeros((2, 4))], axis=1)
    )


def test_local_agg_translation_invariance_of_relative_channels():
    coords, knn, _, _ = make_local_setup(seed=8)
    enc = B.neighborhood_encoding(coords, knn)
    shifted = B.neighborhood_encoding(coords + np.array([5.0, -3.0, 2.0]), knn)
    # relative channels (p - q and the norm) are unchanged
    np.testing.assert_allclose(shifted[:, 6:], enc[:, 6:], atol=1e-12)
    # absolute channels shift by the translation
    np.testing.assert_allclose(shifted[:, :3] - enc[:, :3], np.tile([5.0, -3.0, 2.0], (len(enc), 1)), atol=1e-12)


def test_local_agg_grad_check_8_points_k3():
    coords, knn, params, feats = make_local_setup(n=8, k=3, seed=9)
    x = T.parameter(feats)
    w = T.Tensor(rand((8, 6), seed=10))

    def f(v):
        return T.reduce(
            T.mul(B.local_agg_block(v, coords, knn, params, B.GRAD_CHECK), w), "sum"
        )

    assert T.grad_check(f, x) < 1e-4
    for name, p in B.named_parameters(params, "blk"):
        assert T.grad_check(lambda v: f(x), p, sample=20, atol=1e-8) < 1e-4, name


def test_local_agg_knn_size_mismatch():
    coords, knn, params, feats = make_local_setup()
    with pytest.raises(ShapeError):
        B.local_agg_block(T.Tensor(feats[:4]), coords, knn, params, B.EVAL)


# --- heads ---------------------------------------------------------------------


def test_decoder_head_zero_weights_and_shape():
    params = B.init_decoder_head(12, classes=6, seed=0)
    x = T.Tensor(rand((9, 12)))
    assert B.decoder_head(x, params).shape == (9, 6)
    params.linear.weight.data[:] = 0.0
    np.testing.assert_array_equal(B.decoder_head(x, params).data, np.zeros((9, 6)))


def test_decoder_head_grad_check():
    params = B.init_decoder_head(5, classes=3, seed=1)
    x = T.parameter(rand((7, 5), seed=11))
    labels = np.array([0, 1, 2, 0, 1, 2, 0])

    def f(v):
        return T.softmax_cross_entropy(B.decoder_head(v, params), labels)

    assert T.grad_check(f, x) < 1e-4
    for _, p in B.named_parameters(params, "head"):
        assert T.grad_check(lambda v: f(x), p) < 1e-4


def test_final_head_eval_deterministic():
    params = B.init_final_head(16, classes=6, width_mult=1, seed=2)
    x = T.Tensor(rand((10, 16), seed=12))
    a = B.final_head(x, params, B.EVAL, seed=1).data
    b = B.final_head(x, params, B.EVAL, seed=2).data
    np.testing.assert_array_equal(a, b)


def test_final_head_dropout_rate_is_half_in_training():
    params = B.init_final_head(16, 6, 1, seed=0)
    assert params.dropout_rate == 0.5
    # the training path drops ~half of a strictly positive activation map
    h = T.Tensor(np.ones((400, 32)))
    dropped = T.dropout(h, params.dropout_rate, training=True, seed=9)
    frac = np.count_nonzero(dropped.data == 0) / dropped.size
    assert 0.47 < frac < 0.53
    # and the eval path drops nothing
    assert T.dropout(h, params.dropout_rate, training=False, seed=9) is h


def test_final_head_widths_scale_with_width_mult():
    params = B.init_final_head(32, classes=6, width_mult=2, seed=4)
    assert params.fc1.linear.weight.shape == (32, 128)
    assert params.fc2.linear.weight.shape == (128, 64)
    assert params.out.weight.shape == (64, 6)


def test_final_head_grad_check_eval_mode():
    params = B.init_final_head(8, classes=4, width_mult=1, seed=5)
    x = T.parameter(rand((6, 8), seed=14))
    labels = np.array([0, 1, 2, 3, 0, 1])

    def f(v):
        return T.softmax_cross_entropy(B.final_head(v, params, B.GRAD_CHECK, seed=0), labels)

    assert T.grad_check(f, x) < 1e-4


# --- init ------------------------------------------------------------------------


def test_init_deterministic_per_seed():
    spec = B.CodingBlockSpec(B.BlockKind.LOCAL_AGG, in_dim=4, out_dim=6, k=3)
    a = B.init_params(spec, seed=42)
    b = B.init_params(spec, seed=42)
    for (na, ta), (nb, tb) in zip(
        B.named_parameters(a, "a"), B.named_parameters(b, "b")
    ):
        np.testing.assert_array_equal(ta.data, tb.data)


def test_init_glorot_statistics_and_zero_bias():
    rng = np.random.default_rng(0)
    w = B.glorot_uniform(rng, 100, 100)
    limit = np.sqrt(6.0 / 200)
    # mean of 10^4 uniform draws within 3 sigma of 0
    sigma = (2 * limit) / np.sqrt(12.0) / np.sqrt(w.size)
    assert abs(w.mean()) < 3 * sigma
    assert np.all((w >= -limit) & (w <= limit))

    lin = B.init_linear(np.random.default_rng(1), 7, 5)
    np.testing.assert_array_equal(lin.bias.data, np.zeros(5))


# --- counting --------------------------------------------------------------------


def test_count_shared_mlp_hand_case():
    spec = B.CodingBlockSpec(B.BlockKind.SHARED_MLP, in_dim=8, out_dim=16)
    # (8*16+16) + 2*16 + (16*16+16) + 2*16
    assert B.count_block_params(spec) == 480


def test_count_zero_layer_degenerate():
    spec = B.CodingBlockSpec(B.BlockKind.SHARED_MLP, in_dim=8, out_dim=8, layers=0)
    assert B.count_block_params(spec) == 0
    assert B.init_params(spec, 0).layers == []


def test_count_additive_over_layers():
    c1 = B.count_block_params(B.CodingBlockSpec(B.BlockKind.SHARED_MLP, 8, 16, layers=1))
    c2 = B.count_block_params(B.CodingBlockSpec(B.BlockKind.SHARED_MLP, 8, 16, layers=2))
    c3 = B.count_block_params(B.CodingBlockSpec(B.BlockKind.SHARED_MLP, 8, 16, layers=3))
    assert c2 - c1 == c3 - c2  # every extra layer is out_dim -> out_dim


def test_count_matches_registered_params():
    for spec in (
        B.CodingBlockSpec(B.BlockKind.SHARED_MLP, in_dim=11, out_dim=9),
        B.CodingBlockSpec(B.BlockKind.LOCAL_AGG, in_dim=11, out_dim=9, k=4),
    ):
        params = B.init_params(spec, seed=0)
        assert B.count_params(params) == B.count_block_params(spec)
    emb = B.init_embedding(6, 0)
    assert B.count_params(emb) == B.count_embedding_params(6)
    head = B.init_decoder_head(10, 6, 0)
    assert B.count_params(head) == B.count_decoder_head_params(10, 6)
    fh = B.init_final_head(16, 6, 2, 0)
    assert B.count_params(fh) == B.count_final_head_params(16, 6, 2)


def test_block_output_width_equals_schedule_width():
    dims = B.DimSchedule()
    for row in range(3):
        spec = B.CodingBlockSpec(B.BlockKind.SHARED_MLP, in_dim=8, out_dim=dims.width(row))
        params = B.init_params(spec, seed=row)
        out = B.shared_mlp_block(T.Tensor(rand((4, 8), seed=row)), params, B.EVAL)
        assert out.shape[1] == dims.width(row)
