"""Parameter containers and differentiable graph layers."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass
from typing import Iterator

import numpy as np

from . import tape as T
from .errors import ShapeError
from .graph import RadiusGraph, ScaleHierarchy
from .tape import Tape, Var

BUFFER_FIELDS = ("running_mean", "running_var")


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, width: int) -> "BatchNorm":
        return cls(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width))

    def apply(self, x, train: bool, tape: Tape) -> Var:
        return T.batch_norm(tape, x, tape.param(self.gamma), tape.param(self.beta),
                            self.running_mean, self.running_var, train, self.momentum, self.eps)


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    norms: list[BatchNorm] | None = None

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]


@dataclass
class SageParams:
    w_self: np.ndarray
    w_neigh: np.ndarray
    bias: np.ndarray


@dataclass
class KernelConvParams:
    """Edge-conditioned convolution: a kernel MLP producing width x width matrices."""

    kernel: MlpParams
    width: int = 8


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_mlp(dims, rng, batch_norm: bool = False, activation: str = "relu") -> MlpParams:
    dims = list(dims)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(uniform_init(rng, fan_in, (fan_in, fan_out)))
        biases.append(uniform_init(rng, fan_in, (fan_out,)))
    norms = [BatchNorm.create(d) for d in dims[1:-1]] if batch_norm else None
    return MlpParams(weights, biases, activation, norms)


def init_sage(d_in: int, d_out: int, rng) -> SageParams:
    return SageParams(
        uniform_init(rng, d_in, (d_in, d_out)),
        uniform_init(rng, d_in, (d_in, d_out)),
        uniform_init(rng, d_in, (d_out,)),
    )


def iter_arrays(obj, prefix: str = "", buffers: bool = False) -> Iterator[tuple[str, np.ndarray]]:
    """Walk nested dataclasses/lists/dicts yielding ``(dotted name, array)``.

    Trainable arrays by default; running statistics with ``buffers=True``.
    """
    if isinstance(obj, np.ndarray):
        leaf = prefix.rsplit(".", 1)[-1]
        if (leaf in BUFFER_FIELDS) == buffers:
            yield prefix, obj
    elif is_dataclass(obj):
        for f in fields(obj):
            yield from iter_arrays(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name, buffers)
    elif isinstance(obj, (list, tuple)):
        for k, item in enumerate(obj):
            yield from iter_arrays(item, f"{prefix}.{k}" if prefix else str(k), buffers)
    elif isinstance(obj, dict):
        for key, item in obj.items():
            yield from iter_arrays(item, f"{prefix}.{key}" if prefix else str(key), buffers)


def _act(tape, x, activation):
    if activation == "relu":
        return T.relu(tape, x)
    if activation == "identity":
        return x
    raise ValueError(f"unknown activation {activation!r}")


def mlp_apply(params: MlpParams, x, mode: str, tape: Tape) -> Var:
    """affine -> [batch norm] -> activation per hidden layer; last layer affine only."""
    x = T._v(tape, x)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise ShapeError(f"MLP expects width {params.weights[0].shape[0]}, got {x.shape[-1]}")
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = T.linear(tape, x, tape.param(w), tape.param(b))
        if k < last:
            if params.norms is not None:
                x = params.norms[k].apply(x, mode == "train", tape)
            x = _act(tape, x, params.activation)
    return x


def mean_aggregate(h, graph: RadiusGraph, tape: Tape) -> Var:
    """Mean of in-neighbor features per node; isolated nodes get zeros."""
    h = T._v(tape, h)
    if h.shape[0] != graph.n_nodes:
        raise ShapeError(f"features have {h.shape[0]} rows, graph has {graph.n_nodes} nodes")
    msgs = T.take_rows(tape, h, graph.src)
    return T.segment_mean(tape, msgs, graph.dst, graph.n_nodes)


def sage_layer(params: SageParams, h, graph: RadiusGraph, tape: Tape) -> Var:
    """``W_self h_i + W_neigh mean_j h_j + b``."""
    h = T._v(tape, h)
    if h.shape[-1] != params.w_self.shape[0]:
        raise ShapeError(f"SAGE layer expects width {params.w_self.shape[0]}, got {h.shape[-1]}")
    own = T.linear(tape, h, tape.param(params.w_self), tape.param(params.bias))
    agg = mean_aggregate(h, graph, tape)
    return T.add(tape, own, T.linear(tape, agg, tape.param(params.w_neigh)))


def edge_kernel_conv(h, graph: RadiusGraph, edge_attrs, kernel: MlpParams, tape: Tape,
                     residual: bool = True) -> Var:
    """``h_i + mean_j kappa(e_ij) h_j`` with kappa reshaped to a square matrix per edge."""
    h = T._v(tape, h)
    width = h.shape[-1]
    if kernel.dims[-1] != width * width:
        raise ShapeError(f"kernel outputs {kernel.dims[-1]} values, need {width * width}")
    if h.shape[0] != graph.n_nodes:
        raise ShapeError(f"features have {h.shape[0]} rows, graph has {graph.n_nodes} nodes")
    edge_attrs = T._v(tape, edge_attrs)
    if edge_attrs.shape[0] != len(graph.edges):
        raise ShapeError(f"{edge_attrs.shape[0]} edge attributes for {len(graph.edges)} edges")
    if len(graph.edges) == 0:
        agg = tape.constant(np.zeros_like(h.value))
    else:
        mats = mlp_apply(kernel, edge_attrs, "train", tape)
        msgs = T.batched_matvec(tape, mats, T.take_rows(tape, h, graph.src), width)
        agg = T.segment_mean(tape, msgs, graph.dst, graph.n_nodes)
    return T.add(tape, h, agg) if residual else agg


def _check_level(hierarchy: ScaleHierarchy, level: int):
    if not 0 <= level < hierarchy.n_scales - 1:
        raise ShapeError(f"pooling level {level} outside [0, {hierarchy.n_scales - 2}]")


def pool_mean(h, hierarchy: ScaleHierarchy, level: int, tape: Tape) -> Var:
    """Coarse node p gets the mean of the fine nodes whose parent is p."""
    _check_level(hierarchy, level)
    h = T._v(tape, h)
    parent = hierarchy.parents[level]
    if h.shape[0] != len(parent):
        raise ShapeError(f"{h.shape[0]} rows at level {level}, expected {len(parent)}")
    return T.segment_mean(tape, h, parent, len(hierarchy.scales[level + 1]))


def pool_select(h, hierarchy: ScaleHierarchy, level: int, tape: Tape) -> Var:
    """Plain random downsampling: keep the rows of retained nodes."""
    _check_level(hierarchy, level)
    h = T._v(tape, h)
    if h.shape[0] != len(hierarchy.scales[level]):
        raise ShapeError(f"{h.shape[0]} rows at level {level}, expected {len(hierarchy.scales[level])}")
    return T.take_rows(tape, h, hierarchy.retained[level])


def unpool_nearest(h_coarse, hierarchy: ScaleHierarchy, level: int, tape: Tape) -> Var:
    """Fine node i copies the features of its parent at scale ``level + 1``."""
    _check_level(hierarchy, level)
    h_coarse = T._v(tape, h_coarse)
    if h_coarse.shape[0] != len(hierarchy.scales[level + 1]):
        raise ShapeError(f"{h_coarse.shape[0]} coarse rows, expected {len(hierarchy.scales[level + 1])}")
    return T.take_rows(tape, h_coarse, hierarchy.parents[level])
