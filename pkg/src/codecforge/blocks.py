"""Coding blocks, the initial embedding, and the classification heads.

A coding block maps a node's concatenated input features to the node's
row width. Two block kinds are provided: a pointwise shared MLP and a
single-round local aggregation block (relative-position encoding of each
KNN neighborhood, neighbor-feature mixing, max-pool over neighbors).
Blocks are stateless functions over (params, inputs) apart from the
batch-norm running statistics owned by the parameter structs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .pointops import KnnTable
from .tensor import BatchNormState, Tensor


class BlockKind(Enum):
    SHARED_MLP = "shared_mlp"
    LOCAL_AGG = "local_agg"


EMBED_DIM = 8  # width of the initial pointwise embedding


@dataclass(frozen=True)
class RunMode:
    """How stateful layers behave during a forward pass."""

    batch_stats: bool  # batch norm from batch statistics vs running ones
    update_running: bool
    dropout_on: bool


TRAIN = RunMode(batch_stats=True, update_running=True, dropout_on=True)
EVAL = RunMode(batch_stats=False, update_running=False, dropout_on=False)
# pure function of the inputs: what finite-difference checks need
GRAD_CHECK = RunMode(batch_stats=True, update_running=False, dropout_on=False)


@dataclass
class DimSchedule:
    """Feature width per resolution row, with the wide-variant knobs."""

    row_dims: tuple[int, ...] = (16, 64, 128, 256, 512)
    width_mult: int = 1
    extra: tuple[int, ...] | None = None  # e.g. (2, 4, 8, 16, 32) for "wide"

    def __post_init__(self):
        self.row_dims = tuple(int(d) for d in self.row_dims)
        if self.extra is not None:
            self.extra = tuple(int(e) for e in self.extra)
            if len(self.extra) != len(self.row_dims):
                raise ConfigError(
                    f"extra widths {self.extra} must match row dims {self.row_dims}"
                )
        if self.width_mult < 1:
            raise ConfigError(f"width_mult must be >= 1, got {self.width_mult}")

    @property
    def max_levels(self) -> int:
        return len(self.row_dims) - 1

    def width(self, row: int) -> int:
        base = self.row_dims[row] * self.width_mult
        return base + (self.extra[row] if self.extra is not None else 0)


@dataclass(frozen=True)
class CodingBlockSpec:
    kind: BlockKind
    in_dim: int
    out_dim: int
    k: int = 0  # neighbor count, LocalAgg only
    layers: int = 2  # SharedMLP depth


# ---------------------------------------------------------------------------
# parameter containers and traversal


@dataclass
class LinearParams:
    weight: Tensor  # (in, out)
    bias: Tensor  # (out,)


@dataclass
class LayerParams:
    linear: LinearParams
    bn: BatchNormState


@dataclass
class SharedMLPParams:
    layers: list[LayerParams]


@dataclass
class LocalAggParams:
    pos_enc: LayerParams  # 10 -> out
    mix: LayerParams  # out + in -> out
    out: LayerParams  # out -> out


@dataclass
class HeadParams:
    linear: LinearParams


@dataclass
class FinalHeadParams:
    fc1: LayerParams
    fc2: LayerParams
    out: LinearParams
    dropout_rate: float = 0.5


@dataclass
class EmbeddingParams:
    layer: LayerParams


def named_parameters(obj, prefix: str = ""):
    """Yield (name, Tensor) for every trainable tensor, in a stable order."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif isinstance(obj, LinearParams):
        yield f"{prefix}.weight", obj.weight
        yield f"{prefix}.bias", obj.bias
    elif isinstance(obj, BatchNormState):
        yield f"{prefix}.gamma", obj.gamma
        yield f"{prefix}.beta", obj.beta
    elif isinstance(obj, LayerParams):
        yield from named_parameters(obj.linear, f"{prefix}.linear")
        yield from named_parameters(obj.bn, f"{prefix}.bn")
    elif isinstance(obj, SharedMLPParams):
        for i, layer in enumerate(obj.layers):
            yield from named_parameters(layer, f"{prefix}.layer{i}")
    elif isinstance(obj, LocalAggParams):
        yield from named_parameters(obj.pos_enc, f"{prefix}.pos_enc")
        yield from named_parameters(obj.mix, f"{prefix}.mix")
        yield from named_parameters(obj.out, f"{prefix}.out")
    elif isinstance(obj, HeadParams):
        yield from named_parameters(obj.linear, f"{prefix}.linear")
    elif isinstance(obj, FinalHeadParams):
        yield from named_parameters(obj.fc1, f"{prefix}.fc1")
        yield from named_parameters(obj.fc2, f"{prefix}.fc2")
        yield from named_parameters(obj.out, f"{prefix}.out")
    elif isinstance(obj, EmbeddingParams):
        yield from named_parameters(obj.layer, f"{prefix}.layer")
    elif obj is None:
        return
    else:
        raise TypeError(f"cannot traverse parameters of {type(obj).__name__}")


def named_buffers(obj, prefix: str = ""):
    """Yield (name, ndarray) for non-trainable state (BN running stats)."""
    if isinstance(obj, BatchNormState):
        yield f"{prefix}.running_mean", obj.running_mean
        yield f"{prefix}.running_var", obj.running_var
    elif isinstance(obj, LayerParams):
        yield from named_buffers(obj.bn, f"{prefix}.bn")
    elif isinstance(obj, SharedMLPParams):
        for i, layer in enumerate(obj.layers):
            yield from named_buffers(layer, f"{prefix}.layer{i}")
    elif isinstance(obj, LocalAggParams):
        yield from named_buffers(obj.pos_enc, f"{prefix}.pos_enc")
        yield from named_buffers(obj.mix, f"{prefix}.mix")
        yield from named_buffers(obj.out, f"{prefix}.out")
    elif isinstance(obj, FinalHeadParams):
        yield from named_buffers(obj.fc1, f"{prefix}.fc1")
        yield from named_buffers(obj.fc2, f"{prefix}.fc2")
    elif isinstance(obj, EmbeddingParams):
        yield from named_buffers(obj.layer, f"{prefix}.layer")
    elif isinstance(obj, (LinearParams, HeadParams, Tensor)) or obj is None:
        return
    else:
        raise TypeError(f"cannot traverse buffers of {type(obj).__name__}")


def count_params(obj) -> int:
    return sum(t.size for _, t in named_parameters(obj, "p"))


# ---------------------------------------------------------------------------
# initialization


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_linear(rng: np.random.Generator, in_dim: int, out_dim: int) -> LinearParams:
    return LinearParams(
        weight=T.parameter(glorot_uniform(rng, in_dim, out_dim)),
        bias=T.parameter(np.zeros(out_dim)),
    )


def init_layer(rng: np.random.Generator, in_dim: int, out_dim: int) -> LayerParams:
    return LayerParams(linear=init_linear(rng, in_dim, out_dim), bn=BatchNormState.create(out_dim))


def init_params(spec: CodingBlockSpec, seed: int):
    """Glorot weights, zero biases, unit BN scale; deterministic per seed."""
    rng = np.random.default_rng(seed)
    if spec.kind is BlockKind.SHARED_MLP:
        layers = []
        for i in range(spec.layers):
            d_in = spec.in_dim if i == 0 else spec.out_dim
            layers.append(init_layer(rng, d_in, spec.out_dim))
        return SharedMLPParams(layers=layers)
    if spec.kind is BlockKind.LOCAL_AGG:
        return LocalAggParams(
            pos_enc=init_layer(rng, 10, spec.out_dim),
            mix=init_layer(rng, spec.out_dim + spec.in_dim, spec.out_dim),
            out=init_layer(rng, spec.out_dim, spec.out_dim),
        )
    raise ConfigError(f"unknown block kind {spec.kind}")


def init_embedding(d_in: int, seed: int) -> EmbeddingParams:
    if d_in not in (3, 6):
        raise ConfigError(f"initial embedding expects 3 (xyz) or 6 (xyz+rgb) inputs, got {d_in}")
    return EmbeddingParams(layer=init_layer(np.random.default_rng(seed), d_in, EMBED_DIM))


def init_decoder_head(d: int, classes: int, seed: int) -> HeadParams:
    return HeadParams(linear=init_linear(np.random.default_rng(seed), d, classes))


def init_final_head(d: int, classes: int, width_mult: int, seed: int) -> FinalHeadParams:
    rng = np.random.default_rng(seed)
    w1, w2 = 64 * width_mult, 32 * width_mult
    return FinalHeadParams(
        fc1=init_layer(rng, d, w1),
        fc2=init_layer(rng, w1, w2),
        out=init_linear(rng, w2, classes),
    )


# ---------------------------------------------------------------------------
# forward functions


def apply_layer(x: Tensor, layer: LayerParams, mode: RunMode) -> Tensor:
    """Pointwise linear -> batch norm -> ReLU."""
    if x.shape[1] != layer.linear.weight.shape[0]:
        raise ShapeError(
            f"layer expects {layer.linear.weight.shape[0]} input features, got {x.shape[1]}"
        )
    h = T.add_rowvec(T.matmul(x, layer.linear.weight), layer.linear.bias)
    h = T.batch_norm(h, layer.bn, training=mode.batch_stats, update_running=mode.update_running)
    return T.relu(h)


def initial_embedding(x: Tensor, params: EmbeddingParams, mode: RunMode) -> Tensor:
    """Single pointwise layer lifting raw point features to width 8."""
    return apply_layer(x, params.layer, mode)


def shared_mlp_block(x: Tensor, params: SharedMLPParams, mode: RunMode) -> Tensor:
    h = x
    for layer in params.layers:
        h = apply_layer(h, layer, mode)
    return h


def neighborhood_encoding(coords: np.ndarray, knn: KnnTable) -> np.ndarray:
    """Per (point, neighbor) geometric encoding: [p, q, p - q, |p - q|]."""
    n, k = knn.indices.shape
    center = np.repeat(coords, k, axis=0)
    neigh = coords[knn.indices.reshape(-1)]
    rel = center - neigh
    dist = np.sqrt((rel**2).sum(axis=1, keepdims=True))
    return np.concatenate([center, neigh, rel, dist], axis=1)


def local_agg_block(
    x: Tensor,
    coords: np.ndarray,
    knn: KnnTable,
    params: LocalAggParams,
    mode: RunMode,
) -> Tensor:
    """Relative-position encoding + neighbor mixing + max-pool over K."""
    n, k = knn.indices.shape
    if x.shape[0] != n:
        raise ShapeError(f"knn table covers {n} points but features have {x.shape[0]} rows")
    if len(coords) != n:
        raise ShapeError(f"knn table covers {n} points but coords have {len(coords)} rows")
    enc = Tensor(neighborhood_encoding(coords, knn).astype(x.data.dtype))
    pos = apply_layer(enc, params.pos_enc, mode)
    neigh_feats = T.gather_rows(x, knn.indices.reshape(-1))
    h = T.concat([pos, neigh_feats], axis=1)
    h = apply_layer(h, params.mix, mode)
    h = T.reshape(h, (n, k, h.shape[1]))
    pooled = T.reduce(h, "max", axis=1)
    return apply_layer(pooled, params.out, mode)


def decoder_head(x: Tensor, params: HeadParams) -> Tensor:
    """Plain pointwise linear layer to class logits, no activation."""
    return T.add_rowvec(T.matmul(x, params.linear.weight), params.linear.bias)


def final_head(x: Tensor, params: FinalHeadParams, mode: RunMode, seed: int) -> Tensor:
    """FC -> FC -> dropout -> FC classification stack at full resolution."""
    h = apply_layer(x, params.fc1, mode)
    h = apply_layer(h, params.fc2, mode)
    h = T.dropout(h, params.dropout_rate, training=mode.dropout_on, seed=seed)
    return T.add_rowvec(T.matmul(h, params.out.weight), params.out.bias)


def apply_block(
    x: Tensor,
    block_params,
    mode: RunMode,
    coords: np.ndarray | None = None,
    knn: KnnTable | None = None,
) -> Tensor:
    if isinstance(block_params, SharedMLPParams):
        return shared_mlp_block(x, block_params, mode)
    if isinstance(block_params, LocalAggParams):
        if coords is None or knn is None:
            raise ShapeError("local aggregation block needs coords and a knn table")
        return local_agg_block(x, coords, knn, block_params, mode)
    raise ConfigError(f"unknown block params {type(block_params).__name__}")


# ---------------------------------------------------------------------------
# static parameter counting


def _layer_count(d_in: int, d_out: int) -> int:
    # linear weight + bias + BN scale/shift
    return d_in * d_out + d_out + 2 * d_out


def count_block_params(spec: CodingBlockSpec) -> int:
    """Exact trainable scalar count of a block, BN scale/shift included."""
    if spec.kind is BlockKind.SHARED_MLP:
        total = 0
        for i in range(spec.layers):
            d_in = spec.in_dim if i == 0 else spec.out_dim
            total += _layer_count(d_in, spec.out_dim)
        return total
    if spec.kind is BlockKind.LOCAL_AGG:
        return (
            _layer_count(10, spec.out_dim)
            + _layer_count(spec.out_dim + spec.in_dim, spec.out_dim)
            + _layer_count(spec.out_dim, spec.out_dim)
        )
    raise ConfigError(f"unknown block kind {spec.kind}")


def count_embedding_params(d_in: int) -> int:
    return _layer_count(d_in, EMBED_DIM)


def count_decoder_head_params(d: int, classes: int) -> int:
    return d * classes + classes


def count_final_head_params(d: int, classes: int, width_mult: int) -> int:
    w1, w2 = 64 * width_mult, 32 * width_mult
    return _layer_count(d, w1) + _layer_count(w1, w2) + w2 * classes + classes


def block_macs(spec: CodingBlockSpec, points: int) -> int:
    """Multiply-accumulate estimate: linear layers only, BN/ReLU excluded."""
    if spec.kind is BlockKind.SHARED_MLP:
        total = 0
        for i in range(spec.layers):
            d_in = spec.in_dim if i == 0 else spec.out_dim
            total += points * d_in * spec.out_dim
        return total
    if spec.kind is BlockKind.LOCAL_AGG:
        k = max(spec.k, 1)
        return points * k * (10 * spec.out_dim) + points * k * (
            (spec.out_dim + spec.in_dim) * spec.out_dim
        ) + points * spec.out_dim * spec.out_dim
    raise ConfigError(f"unknown block kind {spec.kind}")
