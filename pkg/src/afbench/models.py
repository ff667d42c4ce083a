"""Encoder/decoder wrapped around GraphSAGE, Graph-Unet, GNO and MGNO trunks.

Every model maps normalized inputs ``(x, y, inlet_speed, sdf)`` to
normalized targets ``(u_x, u_y, p, nu_t)`` through an 8-wide latent.

Edge attributes for the kernel models are built per edge j -> i as
``(pos_j - pos_i, u_j - u_i, p_j - p_i, sdf_i, sdf_j, inlet_i)``, where the
velocity and pressure differences come from decoding the current hidden
state, and positions, sdf and inlet speed are the normalized inputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tape as T
from .errors import ConfigError, FormatError, IoError, ShapeError
from .graph import RadiusGraph, ScaleHierarchy, build_radius_graph, pooling_hierarchy
from .nn import (
    BatchNorm,
    MlpParams,
    edge_kernel_conv,
    init_mlp,
    init_sage,
    iter_arrays,
    mlp_apply,
    pool_mean,
    pool_select,
    sage_layer,
    unpool_nearest,
)
from .optim import load_arrays, save_arrays
from .tape import Tape, Var

KINDS = ("graphsage", "graph_unet", "gno", "mgno")
UNIMPLEMENTED_BASELINES = ("gat", "pointnet", "pointnet++")


@dataclass
class ModelConfig:
    kind: str
    encoder_dims: tuple = (4, 64, 64, 8)
    decoder_dims: tuple = (8, 64, 64, 4)
    sage_dims: tuple = (8, 64, 64, 64, 8)
    unet_channels: tuple = (8, 16, 32, 64, 128)
    unet_ratios: tuple = (0.75, 0.75, 2 / 3, 2 / 3)
    unet_radii: tuple = (0.1, 0.2, 0.5, 1.0, 10.0)
    kernel_dims: tuple = (8, 64, 64, 64, 64)
    iterations: int = 3
    mgno_ratios: tuple = (0.75, 2 / 3)
    mgno_radii: tuple = (0.1, 0.2, 0.5)
    radius: float = 0.1

    def __post_init__(self):
        for name in ("encoder_dims", "decoder_dims", "sage_dims", "unet_channels", "unet_ratios",
                     "unet_radii", "kernel_dims", "mgno_ratios", "mgno_radii"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    @property
    def width(self) -> int:
        return self.encoder_dims[-1]

    def validate(self) -> None:
        if self.kind not in KINDS:
            hint = " (declared but not implemented)" if self.kind in UNIMPLEMENTED_BASELINES else ""
            raise ConfigError(f"unknown model kind {self.kind!r}{hint}; expected one of {KINDS}")
        w = self.width
        if self.encoder_dims[0] != 4 or self.decoder_dims[-1] != 4:
            raise ConfigError("encoder must take 4 inputs and decoder must emit 4 outputs")
        if self.decoder_dims[0] != w:
            raise ConfigError(f"decoder input {self.decoder_dims[0]} != encoder output {w}")
        if self.kind == "graphsage" and (self.sage_dims[0] != w or self.sage_dims[-1] != w):
            raise ConfigError(f"GraphSAGE trunk must start and end at width {w}")
        if self.kind == "graph_unet":
            if self.unet_channels[0] != w:
                raise ConfigError(f"Graph-Unet must start at width {w}")
            if len(self.unet_radii) != len(self.unet_channels) or len(self.unet_ratios) != len(self.unet_channels) - 1:
                raise ConfigError("Graph-Unet needs one radius per scale and one ratio per pooling")
        if self.kind in ("gno", "mgno"):
            if self.kernel_dims[0] != 8 or self.kernel_dims[-1] != w * w:
                raise ConfigError(f"kernel MLP must map 8 edge attributes to {w * w} values")
            if self.iterations < 1:
                raise ConfigError("iterations must be >= 1")
        if self.kind == "mgno" and len(self.mgno_radii) != len(self.mgno_ratios) + 1:
            raise ConfigError("MGNO needs one radius per scale")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class ModelParams:
    config: ModelConfig
    encoder: MlpParams
    decoder: MlpParams
    trunk: dict = field(default_factory=dict)

    def named_arrays(self) -> dict[str, np.ndarray]:
        return dict(iter_arrays({"encoder": self.encoder, "trunk": self.trunk, "decoder": self.decoder}))

    def named_buffers(self) -> dict[str, np.ndarray]:
        return dict(iter_arrays({"encoder": self.encoder, "trunk": self.trunk, "decoder": self.decoder},
                                buffers=True))

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {**self.named_arrays(), **self.named_buffers()}


def build_model(config: ModelConfig, seed: int) -> ModelParams:
    config.validate()
    rng = np.random.default_rng(seed)
    encoder = init_mlp(config.encoder_dims, rng)
    trunk: dict = {}
    if config.kind == "graphsage":
        dims = config.sage_dims
        trunk["layers"] = [init_sage(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        trunk["norms"] = [BatchNorm.create(b) for b in dims[1:]]
    elif config.kind == "graph_unet":
        c = config.unet_channels
        depth = len(c) - 1
        shapes = [(c[s], c[s + 1]) for s in range(depth)]       # down, one per pooling
        shapes.append((c[depth], c[depth - 1]))                  # bottom
        out = c[depth - 1]
        for s in range(depth - 1, -1, -1):                       # up, coarse to fine
            width = c[s - 1] if s > 0 else c[0]
            shapes.append((out + c[s + 1], width))
            out = width
        trunk["layers"] = [init_sage(a, b, rng) for a, b in shapes]
        trunk["norms"] = [BatchNorm.create(b) for _, b in shapes]
    elif config.kind == "gno":
        trunk["kernel"] = init_mlp(config.kernel_dims, rng)
        trunk["norms"] = [BatchNorm.create(config.width) for _ in range(config.iterations)]
    else:
        trunk["kernels"] = [init_mlp(config.kernel_dims, rng) for _ in config.mgno_radii]
        trunk["norms"] = [BatchNorm.create(config.width) for _ in range(config.iterations)]
    decoder = init_mlp(config.decoder_dims, rng)
    return ModelParams(config, encoder, decoder, trunk)


def param_count(params) -> int:
    """Trainable scalars, batch-norm scale/shift included, running stats excluded."""
    if isinstance(params, ModelParams):
        arrays = params.named_arrays().values()
    else:
        arrays = (a for _, a in iter_arrays(params))
    return int(sum(a.size for a in arrays))


# ---------------------------------------------------------------------------
# graph inputs


def graph_input(config: ModelConfig, points, max_neighbors: int, seed: int):
    """The graph structure a model kind consumes: a RadiusGraph or a ScaleHierarchy."""
    if config.kind in ("graphsage", "gno"):
        return build_radius_graph(points, config.radius, max_neighbors, seed)
    if config.kind == "graph_unet":
        return pooling_hierarchy(points, config.unet_ratios, config.unet_radii, max_neighbors, seed,
                                 connect_last=True)
    return pooling_hierarchy(points, config.mgno_ratios, config.mgno_radii, max_neighbors, seed)


# ---------------------------------------------------------------------------
# forward


def _edge_attrs(tape: Tape, x: np.ndarray, decoded: Var, graph: RadiusGraph) -> Var:
    src, dst = graph.src, graph.dst
    static_pos = x[src, 0:2] - x[dst, 0:2]
    d_u = T.sub(tape, T.take_rows(tape, T.columns(tape, decoded, 0, 2), src),
                T.take_rows(tape, T.columns(tape, decoded, 0, 2), dst))
    d_p = T.sub(tape, T.take_rows(tape, T.columns(tape, decoded, 2, 3), src),
                T.take_rows(tape, T.columns(tape, decoded, 2, 3), dst))
    tail = np.column_stack([x[dst, 3], x[src, 3], x[dst, 2]])
    return T.concat(tape, [static_pos, d_u, d_p, tail], axis=1)


def _kernel_message(params: ModelParams, kernel: MlpParams, h: Var, x: np.ndarray,
                    graph: RadiusGraph, mode: str, tape: Tape, residual: bool) -> Var:
    if len(graph.edges) == 0:
        attrs = tape.constant(np.zeros((0, 8)))
    else:
        decoded = mlp_apply(params.decoder, h, mode, tape)
        attrs = _edge_attrs(tape, x, decoded, graph)
    return edge_kernel_conv(h, graph, attrs, kernel, tape, residual=residual)


def _sage_block(layer, norm, h, graph, mode, tape):
    h = sage_layer(layer, h, graph, tape)
    return T.relu(tape, norm.apply(h, mode == "train", tape))


def _check_nodes(graph, n: int):
    size = graph.n_nodes if isinstance(graph, RadiusGraph) else len(graph.scales[0])
    if size != n:
        raise ShapeError(f"graph has {size} nodes but the input has {n} rows")


def model_forward(params: ModelParams, x, graph, mode: str, tape: Tape) -> Var:
    """Per-node 4-vector predictions for normalized inputs ``x`` (N, 4)."""
    cfg = params.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 4:
        raise ShapeError(f"inputs must be (N, 4), got {x.shape}")
    _check_nodes(graph, len(x))
    train = mode == "train"
    h = mlp_apply(params.encoder, x, mode, tape)

    if cfg.kind == "graphsage":
        for layer, norm in zip(params.trunk["layers"], params.trunk["norms"]):
            h = _sage_block(layer, norm, h, graph, mode, tape)

    elif cfg.kind == "graph_unet":
        layers, norms = params.trunk["layers"], params.trunk["norms"]
        depth = graph.n_scales - 1
        skips = []
        for s in range(depth):
            h = _sage_block(layers[s], norms[s], h, graph.graphs[s], mode, tape)
            skips.append(h)
            h = pool_select(h, graph, s, tape)
        h = _sage_block(layers[depth], norms[depth], h, graph.graphs[depth], mode, tape)
        for k, s in enumerate(range(depth - 1, -1, -1)):
            h = unpool_nearest(h, graph, s, tape)
            h = T.concat(tape, [h, skips[s]], axis=1)
            h = _sage_block(layers[depth + 1 + k], norms[depth + 1 + k], h, graph.graphs[s], mode, tape)

    elif cfg.kind == "gno":
        for norm in params.trunk["norms"]:
            h = _kernel_message(params, params.trunk["kernel"], h, x, graph, mode, tape, residual=True)
            h = norm.apply(h, train, tape)

    else:
        kernels = params.trunk["kernels"]
        xs = [x[idx] for idx in graph.scales]
        for norm in params.trunk["norms"]:
            levels = [h]
            for k in range(graph.n_scales - 1):
                levels.append(pool_mean(levels[-1], graph, k, tape))
            msgs = [
                _kernel_message(params, kernels[k], levels[k], xs[k], graph.graphs[k], mode, tape,
                                residual=False)
                for k in range(graph.n_scales)
            ]
            acc = msgs[-1]
            for k in range(graph.n_scales - 2, -1, -1):
                acc = T.add(tape, msgs[k], unpool_nearest(acc, graph, k, tape))
            h = norm.apply(T.add(tape, h, acc), train, tape)

    return mlp_apply(params.decoder, h, mode, tape)


def predict(params: ModelParams, x, graph) -> np.ndarray:
    return model_forward(params, x, graph, "eval", Tape(record=False)).value


# ---------------------------------------------------------------------------
# checkpoints


def config_path(ckpt) -> Path:
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.name + ".config.json")


def save_checkpoint(params: ModelParams, path) -> None:
    save_arrays(path, params.state_arrays())
    try:
        config_path(path).write_text(json.dumps(params.config.to_json(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {config_path(path)}: {exc}") from exc


def load_checkpoint(path, config: ModelConfig | None = None) -> ModelParams:
    if config is None:
        try:
            config = ModelConfig.from_json(json.loads(config_path(path).read_text()))
        except OSError as exc:
            raise IoError(f"cannot read model config for {path}: {exc}") from exc
    params = build_model(config, seed=0)
    stored = load_arrays(path)
    target = params.state_arrays()
    if list(stored) != list(target):
        raise FormatError(f"checkpoint {path} does not match a {config.kind} model")
    for name, arr in target.items():
        if stored[name].shape != arr.shape:
            raise FormatError(f"{name}: stored shape {stored[name].shape} != {arr.shape}")
        arr[...] = stored[name]
    return params
