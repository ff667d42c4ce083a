"""Adam, the one-cycle schedule, finite-difference checks and AFP1 checkpoints."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .errors import ArgumentError, FormatError, IoError, ShapeError

CKPT_MAGIC = b"AFP1"


@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: OptimState, lr: float) -> tuple[Mapping[str, np.ndarray], OptimState]:
    """Bias-corrected Adam update, applied in place to ``params``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def _cos_interp(start: float, end: float, frac: float) -> float:
    return end + (start - end) * 0.5 * (1.0 + math.cos(math.pi * frac))


def one_cycle_lr(step: int, total_steps: int, max_lr: float, pct_start: float = 0.3,
                 div_factor: float = 25.0, final_div_factor: float = 1e4) -> float:
    """Cosine warm-up from ``max_lr / div_factor`` to ``max_lr`` over the first
    ``pct_start`` of the steps, then cosine decay to ``max_lr / final_div_factor``."""
    if total_steps < 0 or not 0 <= step <= total_steps:
        raise ArgumentError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return max_lr
    start, end = max_lr / div_factor, max_lr / final_div_factor
    peak = pct_start * total_steps
    if step <= peak:
        return _cos_interp(start, max_lr, step / peak if peak > 0 else 1.0)
    return _cos_interp(max_lr, end, (step - peak) / (total_steps - peak))


def _probe(loss_fn, params, flat, i, step):
    """Loss at ``+step`` and ``-step`` along one entry, restoring it afterwards."""
    saved = flat[i]
    flat[i] = saved + step
    f_plus = float(loss_fn(params)[0])
    flat[i] = saved - step
    f_minus = float(loss_fn(params)[0])
    flat[i] = saved
    return f_plus, f_minus


def finite_diff_errors(loss_fn: Callable, params: Mapping[str, np.ndarray], step: float = 1e-5,
                       max_entries: int | None = None, seed: int = 0) -> dict[str, float]:
    """Per-array relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` returns ``(value, grads)``. Arrays are perturbed in
    place and restored. With ``max_entries`` only a seeded random subset of
    each array's entries is probed. The error of an array is
    ``|a - fd| / (|a| + floor)`` in the Euclidean norm over the probed
    entries; ``floor`` is 1e-12 plus 1e-5 of the largest probed gradient
    norm, below which central differences cannot resolve anything.

    Kinks: when the central quotient of an entry disagrees with the
    analytic value beyond round-off and the forward and backward one-sided
    quotients also disagree with each other, the perturbation straddled a
    ReLU kink, so the analytic value is a one-sided derivative. The entry is
    probed again at ``step / 10`` and the central or one-sided quotient (at
    either step) closest to the analytic value is kept. A wrong gradient
    disagrees with all of them.
    """
    f0, grads = loss_fn(params)
    f0 = float(f0)
    grads = {k: np.array(v, copy=True) for k, v in grads.items()}
    # round-off level of a central difference quotient at a given step
    def noise(h):
        return 8.0 * np.finfo(float).eps * (abs(f0) + 1.0) / h

    rng = np.random.default_rng(seed)
    probes = {}
    for name, p in params.items():
        flat = p.reshape(-1)
        analytic_all = grads[name].reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            f_plus, f_minus = _probe(loss_fn, params, flat, i, step)
            fd = (f_plus - f_minus) / (2.0 * step)
            a = analytic_all[i]
            if abs(fd - a) > 1e-6 * abs(a) + noise(step):
                fwd = (f_plus - f0) / step
                bwd = (f0 - f_minus) / step
                if abs(fwd - bwd) > 1e-5 * max(abs(fwd), abs(bwd)) + 2.0 * noise(step):
                    h = step / 10.0
                    g_plus, g_minus = _probe(loss_fn, params, flat, i, h)
                    candidates = (fd, fwd, bwd, (g_plus - g_minus) / (2.0 * h),
                                  (g_plus - f0) / h, (f0 - g_minus) / h)
                    fd = min(candidates, key=lambda c: abs(c - a))
            numeric[k] = fd
        probes[name] = (analytic_all[idx], numeric)
    biggest = max((np.linalg.norm(a) for a, _ in probes.values()), default=0.0)
    floor = 1e-12 + 1e-5 * biggest
    return {
        name: float(np.linalg.norm(a - fd) / (np.linalg.norm(a) + floor))
        for name, (a, fd) in probes.items()
    }


def finite_diff_check(loss_fn: Callable, params: Mapping[str, np.ndarray], step: float = 1e-5,
                      max_entries: int | None = None, seed: int = 0) -> float:
    errors = finite_diff_errors(loss_fn, params, step, max_entries, seed)
    return max(errors.values(), default=0.0)


# ---------------------------------------------------------------------------
# AFP1: ordered named float64 arrays


def save_arrays(path, arrays: Mapping[str, np.ndarray]) -> None:
    parts = [CKPT_MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_arrays(path) -> dict[str, np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if raw[:4] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {raw[:4]!r}")
    off = 4

    def unpack(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise FormatError("truncated checkpoint")
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals

    (count,) = unpack("<I")
    out = {}
    for _ in range(count):
        (nlen,) = unpack("<I")
        if off + nlen > len(raw):
            raise FormatError("truncated checkpoint")
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = unpack("<I")
        shape = unpack(f"<{ndim}I")
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(raw):
            raise FormatError(f"truncated data for {name}")
        out[name] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=off).reshape(shape).astype(np.float64)
        off += nbytes
    if off != len(raw):
        raise FormatError("trailing bytes in checkpoint")
    return out
