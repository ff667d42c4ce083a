"""Training loop, evaluation protocol and report files.

The loss is the sum of a volume term and a weighted surface term, each the
mean over its nodes of the squared error of the normalized 4-vector
``(u_x, u_y, p, nu_t)``. Volume nodes are the nodes that are not on the
surface.

Report schema (CSV header, in this order)::

    model,runs,params,L_V_mean,L_V_std,L_S_mean,L_S_std,wss_x_mean,wss_x_std,
    wss_y_mean,wss_y_std,wp_x_mean,wp_x_std,wp_y_mean,wp_y_std,
    train_time_mean,train_time_std,inference_time_mean,inference_time_std

Loss columns are in normalized units, the four force columns are mean
squared errors of surface-integrated forces in physical units, and times
are seconds (training per run, inference per sample). Standard deviations
are sample standard deviations over repeated trainings and are 0 for a
single run.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tape as T
from .errors import ArgumentError, ConfigError, DivergenceError, IoError, ShapeError, ValidationError
from .forces import drag_lift
from .graph import disjoint_union, subsample
from .mesh import MeshSample, PhysicsConfig
from .models import ModelConfig, ModelParams, build_model, graph_input, model_forward, param_count, predict
from .optim import OptimState, adam_step, one_cycle_lr
from .preprocess import NormStats, denormalize_targets, normalize_inputs, normalize_targets
from .tape import Tape

METRICS = ("L_V", "L_S", "wss_x", "wss_y", "wp_x", "wp_y", "train_time", "inference_time")
REPORT_COLUMNS = ("model", "runs", "params") + tuple(
    f"{m}_{stat}" for m in METRICS for stat in ("mean", "std")
)
REPORT_SCHEMA = ",".join(REPORT_COLUMNS)
FORCE_COMPONENTS = ("wss_x", "wss_y", "wp_x", "wp_y")
PER_SAMPLE_COLUMNS = ("model", "run", "sample", "quantity", "true", "pred", "rel_error")


@dataclass
class TrainConfig:
    epochs: int = 400
    batch_size: int = 1
    subsample_n: int = 1600
    radius: float = 0.1
    train_max_neighbors: int = 64
    eval_max_neighbors: int = 512
    max_lr: float = 3e-3
    lambda_surface: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("batch_size", "subsample_n", "train_max_neighbors", "eval_max_neighbors"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.epochs, (int, np.integer)) or self.epochs < 0:
            raise ConfigError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ConfigError(f"radius must be > 0, got {self.radius!r}")
        if not (self.max_lr > 0 and math.isfinite(self.max_lr)):
            raise ConfigError(f"max_lr must be > 0, got {self.max_lr!r}")
        if not (self.lambda_surface >= 0 and math.isfinite(self.lambda_surface)):
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_surface!r}")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    loss_volume: float
    loss_surface: float
    lr: float


@dataclass
class EvalResult:
    """Metrics of one trained model on a test set, with per-sample detail."""

    loss_volume: float
    loss_surface: float
    force_mse: dict[str, float]
    inference_time: float
    per_sample_loss: list[tuple[float, float]]
    true_forces: np.ndarray
    pred_forces: np.ndarray
    per_sample_time: list[float] = field(default_factory=list)


@dataclass
class ScoreReport:
    model: str
    runs: int
    params: int
    mean: dict[str, float | None]
    std: dict[str, float | None]

    def row(self) -> dict:
        out = {"model": self.model, "runs": self.runs, "params": self.params}
        for m in METRICS:
            out[f"{m}_mean"] = self.mean.get(m)
            out[f"{m}_std"] = self.std.get(m)
        return out


# ---------------------------------------------------------------------------
# loss


def _split_rows(surface_mask, n: int):
    mask = np.asarray(surface_mask, dtype=bool)
    if mask.shape != (n,):
        raise ShapeError(f"surface mask has shape {mask.shape}, expected ({n},)")
    volume = np.flatnonzero(~mask)
    if volume.size == 0:
        raise ValidationError("the loss needs at least one volume node")
    return volume, np.flatnonzero(mask)


def compute_loss(pred, target, surface_mask, lam: float) -> tuple[float, float, float]:
    """``(L, L_V, L_S)`` with ``L = L_V + lam * L_S``; ``L_S`` is 0 without surface nodes."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} must be equal (N, C) arrays")
    if not lam >= 0:
        raise ArgumentError(f"lambda must be >= 0, got {lam!r}")
    volume, surface = _split_rows(surface_mask, len(pred))
    sq = ((pred - target) ** 2).sum(axis=1)
    l_v = float(sq[volume].mean())
    l_s = float(sq[surface].mean()) if surface.size else 0.0
    return l_v + lam * l_s, l_v, l_s


def _tape_loss(tape: Tape, out, target, surface_mask, lam: float):
    volume, surface = _split_rows(surface_mask, len(target))
    l_v = T.masked_sq_mean(tape, out, target, volume)
    l_s = T.masked_sq_mean(tape, out, target, surface)
    return T.add(tape, l_v, T.scale(tape, l_s, lam)), l_v, l_s


def constant_mean_loss(samples: Sequence[MeshSample], stats: NormStats, lam: float = 1.0):
    """Mean ``(L, L_V, L_S)`` of the predictor that always outputs the training mean.

    In normalized units that predictor is identically zero.
    """
    rows = []
    for s in samples:
        y = normalize_targets(s.targets, s.surface_mask, stats)
        rows.append(compute_loss(np.zeros_like(y), y, s.surface_mask, lam))
    return tuple(float(v) for v in np.mean(rows, axis=0))


# ---------------------------------------------------------------------------
# training


def _step_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _batch_loss(tape: Tape, out, target, masks, lam: float):
    """Mean over the samples of a stacked batch of their ``(L, L_V, L_S)``."""
    parts = []
    offset = 0
    for mask in masks:
        volume, surface = _split_rows(mask, len(mask))
        l_v = T.masked_sq_mean(tape, out, target, volume + offset)
        l_s = T.masked_sq_mean(tape, out, target, surface + offset)
        parts.append((l_v, l_s))
        offset += len(mask)
    inv = 1.0 / len(parts)
    l_v, l_s = parts[0]
    for v, s in parts[1:]:
        l_v, l_s = T.add(tape, l_v, v), T.add(tape, l_s, s)
    l_v, l_s = T.scale(tape, l_v, inv), T.scale(tape, l_s, inv)
    return T.add(tape, l_v, T.scale(tape, l_s, lam)), l_v, l_s


def train(dataset: Sequence[MeshSample], model_config: ModelConfig, train_config: TrainConfig,
          stats: NormStats, params: ModelParams | None = None):
    """Fit a model; returns ``(params, history)`` with one :class:`EpochRecord` per epoch.

    Every visit of a sample draws a fresh node subsample and builds its graph
    on physical positions with the training neighbor cap. Samples are visited
    in a seeded shuffled order. A batch of several samples is one forward
    pass over the disjoint union of their graphs, so batch-norm statistics
    span the whole batch, while the loss is the mean of the per-sample
    losses.
    """
    if not dataset:
        raise ValidationError("training set is empty")
    if stats is None:
        raise ValidationError("fitted normalization statistics are required")
    cfg = train_config
    cfg.validate()
    if params is None:
        params = build_model(model_config, cfg.seed)
    x_all = [normalize_inputs(s.inputs(), stats) for s in dataset]
    y_all = [normalize_targets(s.targets, s.surface_mask, stats) for s in dataset]
    arrays = params.named_arrays()
    state = OptimState()
    batches_per_epoch = math.ceil(len(dataset) / cfg.batch_size)
    total_steps = cfg.epochs * batches_per_epoch
    history: list[EpochRecord] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(_step_seed(cfg.seed, epoch)).permutation(len(dataset))
        sums = np.zeros(3)
        lr = cfg.max_lr
        for b in range(batches_per_epoch):
            batch = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            xs, ys, masks, graphs = [], [], [], []
            for k in batch:
                sample = dataset[k]
                seed = _step_seed(cfg.seed, epoch, int(k))
                idx = subsample(sample, min(cfg.subsample_n, sample.n_nodes), seed)
                graphs.append(graph_input(params.config, sample.node_pos[idx], cfg.train_max_neighbors, seed))
                xs.append(x_all[k][idx])
                ys.append(y_all[k][idx])
                masks.append(sample.surface_mask[idx])
            tape = Tape()
            out = model_forward(params, np.concatenate(xs), disjoint_union(graphs), "train", tape)
            loss, l_v, l_s = _batch_loss(tape, out, np.concatenate(ys), masks, cfg.lambda_surface)
            values = (float(loss.value), float(l_v.value), float(l_s.value))
            if not all(math.isfinite(v) for v in values):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            tape.backward(loss)
            lr = one_cycle_lr(step, total_steps, cfg.max_lr)
            adam_step(arrays, {name: tape.grad(a) for name, a in arrays.items()}, state, lr)
            step += 1
            sums += np.asarray(values) * len(batch)
        mean = sums / len(dataset)
        history.append(EpochRecord(epoch, float(mean[0]), float(mean[1]), float(mean[2]), float(lr)))
    return params, history


def write_history(history: Sequence[EpochRecord], path) -> None:
    try:
        with Path(path).open("w") as fh:
            for rec in history:
                fh.write(json.dumps(asdict(rec)) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# evaluation


def sample_forces(sample: MeshSample, targets, physics: PhysicsConfig | None = None) -> np.ndarray:
    """Surface-integrated ``(wss_x, wss_y, wp_x, wp_y)`` for a physical-unit field."""
    f = drag_lift(sample, targets, physics)
    return np.concatenate([f.integral_tau, f.integral_wp])


def integral_force_errors(samples: Sequence[MeshSample], pred_fields, true_fields,
                          physics: PhysicsConfig | None = None) -> dict[str, float]:
    """MSE across samples of each integrated force component."""
    if len(samples) != len(pred_fields) or len(samples) != len(true_fields):
        raise ShapeError("samples, predictions and truths must have equal lengths")
    if not samples:
        return {c: 0.0 for c in FORCE_COMPONENTS}
    pred = np.array([sample_forces(s, f, physics) for s, f in zip(samples, pred_fields)])
    true = np.array([sample_forces(s, f, physics) for s, f in zip(samples, true_fields)])
    mse = ((pred - true) ** 2).mean(axis=0)
    return dict(zip(FORCE_COMPONENTS, map(float, mse)))


def _eval_one(params, sample, stats, cfg, physics, seed):
    x = normalize_inputs(sample.inputs(), stats)
    y = normalize_targets(sample.targets, sample.surface_mask, stats)
    graph = graph_input(params.config, sample.node_pos, cfg.eval_max_neighbors, seed)
    start = time.perf_counter()
    out = predict(params, x, graph)
    elapsed = time.perf_counter() - start
    _, l_v, l_s = compute_loss(out, y, sample.surface_mask, cfg.lambda_surface)
    pred_phys = denormalize_targets(out, sample.surface_mask, stats)
    return (l_v, l_s, sample_forces(sample, pred_phys, physics),
            sample_forces(sample, sample.targets, physics), elapsed)


def evaluate_model(params: ModelParams, test_set: Sequence[MeshSample], stats: NormStats,
                   config: TrainConfig | None = None, physics: PhysicsConfig | None = None,
                   workers: int = 1) -> EvalResult:
    """Full-mesh evaluation: normalized losses and integrated force errors.

    Samples are independent and may run on ``workers`` threads; results are
    reduced in test-set order, so the outcome does not depend on ``workers``.
    """
    if not test_set:
        raise ValidationError("test set is empty")
    cfg = config or TrainConfig()
    seeds = [_step_seed(cfg.seed, 1_000_003, k) for k in range(len(test_set))]
    jobs = [(params, s, stats, cfg, physics, seed) for s, seed in zip(test_set, seeds)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: _eval_one(*job), jobs))
    else:
        results = [_eval_one(*job) for job in jobs]
    losses = [(r[0], r[1]) for r in results]
    pred = np.array([r[2] for r in results])
    true = np.array([r[3] for r in results])
    times = [r[4] for r in results]
    mse = ((pred - true) ** 2).mean(axis=0)
    return EvalResult(
        loss_volume=float(np.mean([l for l, _ in losses])),
        loss_surface=float(np.mean([l for _, l in losses])),
        force_mse=dict(zip(FORCE_COMPONENTS, map(float, mse))),
        inference_time=float(np.mean(times)),
        per_sample_loss=losses,
        true_forces=true,
        pred_forces=pred,
        per_sample_time=times,
    )


# ---------------------------------------------------------------------------
# reports


def _mean_std(values):
    values = [v for v in values if v is not None]
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), std


def score_report(model: str, params: int, results: Sequence[EvalResult],
                 train_times: Sequence[float | None] | None = None,
                 timings: bool = True) -> ScoreReport:
    """Aggregate repeated trainings of one model into a report row.

    With ``timings=False`` the time columns are left empty so reports of
    deterministic runs are reproducible byte for byte.
    """
    if not results:
        raise ValidationError("no evaluation results to aggregate")
    per_metric = {
        "L_V": [r.loss_volume for r in results],
        "L_S": [r.loss_surface for r in results],
        **{c: [r.force_mse[c] for r in results] for c in FORCE_COMPONENTS},
        "train_time": list(train_times) if (timings and train_times) else [],
        "inference_time": [r.inference_time for r in results] if timings else [],
    }
    mean, std = {}, {}
    for m in METRICS:
        mean[m], std[m] = _mean_std(per_metric[m])
    return ScoreReport(model, len(results), int(params), mean, std)


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(rows: Sequence[ScoreReport], path) -> None:
    """CSV at ``path`` plus a full-precision JSON twin next to it (``.json`` suffix)."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for r in rows:
                row = r.row()
                writer.writerow([_csv_cell(row[c]) for c in REPORT_COLUMNS])
        path.with_suffix(".json").write_text(
            json.dumps({"schema": REPORT_SCHEMA, "rows": [r.row() for r in rows]}, indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write report {path}: {exc}") from exc


def read_report_json(path) -> list[ScoreReport]:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    out = []
    for row in data["rows"]:
        out.append(ScoreReport(
            row["model"], row["runs"], row["params"],
            {m: row[f"{m}_mean"] for m in METRICS}, {m: row[f"{m}_std"] for m in METRICS},
        ))
    return out


def write_per_sample_errors(entries: Sequence[tuple[str, int, EvalResult]], path) -> None:
    """Long-format per-sample force errors for order plots.

    The relative error of a component is ``|pred - true|`` divided by the
    magnitude of that component's mean true value over the test set.
    """
    try:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(PER_SAMPLE_COLUMNS)
            for model, run, res in entries:
                ref = np.abs(res.true_forces.mean(axis=0))
                for k in range(len(res.true_forces)):
                    for c, name in enumerate(FORCE_COMPONENTS):
                        t, p = float(res.true_forces[k, c]), float(res.pred_forces[k, c])
                        rel = abs(p - t) / ref[c] if ref[c] > 0 else (0.0 if p == t else math.inf)
                        writer.writerow([model, run, k, name, repr(t), repr(p), repr(float(rel))])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def run_protocol(model_config: ModelConfig, train_set, test_set, stats: NormStats,
                 train_config: TrainConfig, seeds: Sequence[int], physics=None):
    """Train once per seed and evaluate each run; returns ``(report, results, params)``."""
    if not seeds:
        raise ArgumentError("at least one training seed is required")
    results, times, last = [], [], None
    for seed in seeds:
        cfg = TrainConfig(**{**train_config.to_json(), "seed": int(seed)})
        start = time.perf_counter()
        last, _ = train(train_set, model_config, cfg, stats)
        times.append(time.perf_counter() - start)
        results.append(evaluate_model(last, test_set, stats, cfg, physics))
    return score_report(model_config.kind, param_count(last), results, times), results, last


def model_gradient_errors(kind: str, seed: int = 0, n_nodes: int = 30, max_entries: int | None = 6,
                          lam: float = 1.0) -> dict[str, float]:
    """Finite-difference check of a whole model on a small random point cloud.

    Inputs, targets and a surface subset are drawn from ``seed``; the loss
    is the training loss in training mode.
    """
    from .optim import finite_diff_errors

    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 0.6, (n_nodes, 2))
    x = rng.normal(size=(n_nodes, 4))
    x[:, :2] = 3.0 * pts
    y = rng.normal(size=(n_nodes, 4))
    mask = np.zeros(n_nodes, bool)
    mask[rng.choice(n_nodes, size=max(1, n_nodes // 5), replace=False)] = True
    config = ModelConfig(kind)
    params = build_model(config, seed)
    graph = graph_input(config, pts, 64, seed)
    arrays = params.named_arrays()

    def loss_fn(_):
        tape = Tape()
        out = model_forward(params, x, graph, "train", tape)
        loss, _, _ = _tape_loss(tape, out, y, mask, lam)
        tape.backward(loss)
        return loss.value, {name: tape.grad(a) for name, a in arrays.items()}

    return finite_diff_errors(loss_fn, arrays, max_entries=max_entries, seed=seed)
