"""Learned blocks: linear layers, 3-layer MLPs and multi-head cross-attention

Parameters live in small dataclasses so that a block's weights can be listed
by name (``named_parameters``) for the optimizer and the checkpoint archive.
"""

from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from src.app.nn.autodiff import (
    Parameter,
    Tensor,
    TensorLike,
    as_tensor,
    layer_norm,
    matmul,
    relu,
    softmax,
)
from src.core.errors import ConfigError, ShapeError


# ============================================================================
# Linear
# ============================================================================

@dataclass
class LinearParams:
    weight: Parameter  # (in_dim, out_dim)
    bias: Parameter  # (out_dim,)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Parameter]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


def init_linear(rng: np.random.Generator, in_dim: int, out_dim: int, name: str = "linear") -> LinearParams:
    """Kaiming-uniform weights (bound sqrt(6 / fan_in)) and zero bias"""
    bound = np.sqrt(6.0 / max(in_dim, 1))
    weight = rng.uniform(-bound, bound, size=(in_dim, out_dim))
    return LinearParams(
        weight=Parameter(weight, name=f"{name}.weight"),
        bias=Parameter(np.zeros(out_dim), name=f"{name}.bias"),
    )


def linear(params: LinearParams, x: TensorLike) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != params.in_dim:
        raise ShapeError(f"linear expects last dim {params.in_dim}, got {x.shape}")
    if x.ndim == 1:
        return (x.reshape(1, -1) @ params.weight).reshape(params.out_dim) + params.bias
    return matmul(x, params.weight) + params.bias


# ============================================================================
# 3-layer MLP
# ============================================================================

@dataclass
class Mlp3Params:
    """linear -> relu -> linear -> relu -> linear"""

    layers: Tuple[LinearParams, LinearParams, LinearParams]

    def __post_init__(self):
        for first, second in zip(self.layers, self.layers[1:]):
            if first.out_dim != second.in_dim:
                raise ShapeError(
                    f"MLP layers do not chain: {first.out_dim} -> {second.in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Parameter]]:
        for index, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}.{index}")


def init_mlp3(
    rng: np.random.Generator,
    in_dim: int,
    hidden_dim: int,
    out_dim: int,
    name: str = "mlp",
) -> Mlp3Params:
    return Mlp3Params(
        layers=(
            init_linear(rng, in_dim, hidden_dim, f"{name}.0"),
            init_linear(rng, hidden_dim, hidden_dim, f"{name}.1"),
            init_linear(rng, hidden_dim, out_dim, f"{name}.2"),
        )
    )


def mlp3(params: Mlp3Params, x: TensorLike) -> Tensor:
    first, second, third = params.layers
    hidden = relu(linear(first, x))
    hidden = relu(linear(second, hidden))
    return linear(third, hidden)


# ============================================================================
# Multi-head cross-attention
# ============================================================================

@dataclass
class MhcaParams:
    """Query/key/value/output projections plus the post-residual layer norm"""

    heads: int
    query: LinearParams
    key: LinearParams
    value: LinearParams
    output: LinearParams
    norm_gain: Parameter
    norm_bias: Parameter
    residual_norm: bool = True

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ConfigError(f"embedding dim {self.dim} is not divisible by {self.heads} heads")

    @property
    def dim(self) -> int:
        return self.query.in_dim

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Parameter]]:
        yield from self.query.named_parameters(f"{prefix}.query")
        yield from self.key.named_parameters(f"{prefix}.key")
        yield from self.value.named_parameters(f"{prefix}.value")
        yield from self.output.named_parameters(f"{prefix}.output")
        yield f"{prefix}.norm.gain", self.norm_gain
        yield f"{prefix}.norm.bias", self.norm_bias


def init_mhca(
    rng: np.random.Generator,
    dim: int,
    heads: int,
    name: str = "mhca",
    residual_norm: bool = True,
) -> MhcaParams:
    if heads < 1 or dim % heads != 0:
        raise ConfigError(f"embedding dim {dim} is not divisible by {heads} heads")
    return MhcaParams(
        heads=heads,
        query=init_linear(rng, dim, dim, f"{name}.query"),
        key=init_linear(rng, dim, dim, f"{name}.key"),
        value=init_linear(rng, dim, dim, f"{name}.value"),
        output=init_linear(rng, dim, dim, f"{name}.output"),
        norm_gain=Parameter(np.ones(dim), name=f"{name}.norm.gain"),
        norm_bias=Parameter(np.zeros(dim), name=f"{name}.norm.bias"),
        residual_norm=residual_norm,
    )


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., n, D) -> (..., H, n, D/H)"""
    lead = x.shape[:-2]
    n, dim = x.shape[-2:]
    split = x.reshape(lead + (n, heads, dim // heads))
    depth = len(lead)
    axes = tuple(range(depth)) + (depth + 1, depth, depth + 2)
    return split.transpose(axes)


def _prepare(
    params: MhcaParams,
    query: TensorLike,
    keys: TensorLike,
    mask: Optional[np.ndarray],
) -> Tuple[Tensor, Tensor, Tensor, np.ndarray]:
    query, keys = as_tensor(query), as_tensor(keys)
    dim = params.dim
    if query.shape[-1] != dim or keys.shape[-1] != dim:
        raise ShapeError(f"attention expects width {dim}, got query {query.shape} and keys {keys.shape}")
    if keys.shape[:-2] != query.shape[:-1]:
        raise ShapeError(f"keys {keys.shape} do not match query {query.shape}")
    n = keys.shape[-2]
    if mask is None:
        mask = np.ones(keys.shape[:-1], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != keys.shape[:-1]:
        raise ShapeError(f"mask {mask.shape} does not match keys {keys.shape}")
    lead = query.shape[:-1]
    q = _split_heads(
        (matmul(query.reshape(lead + (1, dim)), params.query.weight) + params.query.bias), params.heads
    )
    k = _split_heads(matmul(keys, params.key.weight) + params.key.bias, params.heads) if n else None
    return q, k, keys, mask


def attention_weights(
    params: MhcaParams,
    query: TensorLike,
    keys: TensorLike,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Per-head attention weights, shape (..., H, 1, n)"""
    q, k, keys, mask = _prepare(params, query, keys, mask)
    n = keys.shape[-2]
    if n == 0:
        return Tensor(np.zeros(q.shape[:-1] + (0,)))
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(params.head_dim))
    return softmax(scores, axis=-1, mask=mask[..., None, None, :])


def mhca(
    params: MhcaParams,
    query: TensorLike,
    keys: TensorLike,
    values: TensorLike,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Cross-attention of one query row over n key/value rows

    Args:
        query: (..., D)
        keys, values: (..., n, D)
        mask: (..., n) booleans; False rows are excluded from the softmax

    Returns:
        (..., D). A query with no valid key gets a zero attention term, so the
        result is the residual path alone.
    """
    query = as_tensor(query)
    values = as_tensor(values)
    if values.shape != as_tensor(keys).shape:
        raise ShapeError(f"values {values.shape} do not match keys {as_tensor(keys).shape}")
    weights = attention_weights(params, query, keys, mask)
    lead = query.shape[:-1]
    n = values.shape[-2]
    if n == 0:
        attended = Tensor(np.zeros(query.shape))
    else:
        v = _split_heads(matmul(values, params.value.weight) + params.value.bias, params.heads)
        context = matmul(weights, v).reshape(lead + (params.dim,))
        has_key = np.ones(lead, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).any(axis=-1)
        attended = (matmul(context, params.output.weight) + params.output.bias) * has_key[..., None].astype(np.float64)
    if not params.residual_norm:
        return attended
    return layer_norm(query + attended, params.norm_gain, params.norm_bias)


def named_parameters(**blocks) -> Dict[str, Parameter]:
    """Flatten blocks given as keyword arguments into one name -> Parameter map"""
    flat: Dict[str, Parameter] = {}
    for prefix, block in blocks.items():
        for name, param in block.named_parameters(prefix):
            param.name = name
            flat[name] = param
    return flat
