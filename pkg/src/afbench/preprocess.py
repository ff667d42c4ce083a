"""Training-set normalization and Reynolds-number utility.

Targets are z-scored per channel with statistics pooled over every node of
every training sample. Channel 3 (turbulent viscosity) on surface nodes is
z-scored with its own statistics, pooled over surface nodes only, because
the wall values sit orders of magnitude below the volume ones.
"""

from __future__ import annotations

import json
from fractions import Fraction
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, IoError, StatsError
from .mesh import MeshSample

EPS = 1e-8
NUT = 3


@dataclass
class NormStats:
    mu_in: np.ndarray
    sigma_in: np.ndarray
    mu_out: np.ndarray
    sigma_out: np.ndarray
    mu_nut_surf: float
    sigma_nut_surf: float
    eps: float = EPS

    def __post_init__(self):
        for name in ("mu_in", "sigma_in", "mu_out", "sigma_out"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(4))
        self.mu_nut_surf = float(self.mu_nut_surf)
        self.sigma_nut_surf = float(self.sigma_nut_surf)

    def to_json(self) -> dict:
        def hexed(v):
            return [float(x).hex() for x in np.atleast_1d(v)]

        return {
            "format": "afbench-normstats-1",
            "eps": float(self.eps).hex(),
            "mu_in": hexed(self.mu_in),
            "sigma_in": hexed(self.sigma_in),
            "mu_out": hexed(self.mu_out),
            "sigma_out": hexed(self.sigma_out),
            "mu_nut_surf": float(self.mu_nut_surf).hex(),
            "sigma_nut_surf": float(self.sigma_nut_surf).hex(),
            # decimal copies are informational only
            "decimal": {
                "mu_in": self.mu_in.tolist(), "sigma_in": self.sigma_in.tolist(),
                "mu_out": self.mu_out.tolist(), "sigma_out": self.sigma_out.tolist(),
                "mu_nut_surf": self.mu_nut_surf, "sigma_nut_surf": self.sigma_nut_surf,
            },
        }

    @classmethod
    def from_json(cls, data: dict) -> "NormStats":
        def unhex(v):
            return np.array([float.fromhex(x) for x in v])

        return cls(
            unhex(data["mu_in"]), unhex(data["sigma_in"]),
            unhex(data["mu_out"]), unhex(data["sigma_out"]),
            float.fromhex(data["mu_nut_surf"]), float.fromhex(data["sigma_nut_surf"]),
            float.fromhex(data["eps"]),
        )

    def save(self, path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "NormStats":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc


def fit_norm_stats(train_samples: list[MeshSample]) -> NormStats:
    """Population mean/std pooled over all nodes of all training samples."""
    if not train_samples:
        raise StatsError("empty training set")
    x = np.concatenate([s.inputs() for s in train_samples])
    y = np.concatenate([s.targets for s in train_samples])
    mask = np.concatenate([s.surface_mask for s in train_samples])
    if not mask.any():
        raise StatsError("no surface nodes in the training set")
    nut_s = y[mask, NUT]
    return NormStats(
        x.mean(axis=0), x.std(axis=0), y.mean(axis=0), y.std(axis=0),
        nut_s.mean(), nut_s.std(),
    )


def normalize_inputs(x, stats: NormStats) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - stats.mu_in) / (stats.sigma_in + stats.eps)


def denormalize_inputs(x_norm, stats: NormStats) -> np.ndarray:
    return np.asarray(x_norm) * (stats.sigma_in + stats.eps) + stats.mu_in


def _target_affine(on_surface, stats: NormStats, shape):
    """Per-entry (mu, scale) arrays broadcast to ``shape``."""
    on_surface = np.asarray(on_surface, dtype=bool)
    mu = np.broadcast_to(stats.mu_out, shape).copy()
    scale = np.broadcast_to(stats.sigma_out + stats.eps, shape).copy()
    surf = np.broadcast_to(on_surface, shape[:-1])
    mu[..., NUT] = np.where(surf, stats.mu_nut_surf, stats.mu_out[NUT])
    scale[..., NUT] = np.where(surf, stats.sigma_nut_surf + stats.eps, stats.sigma_out[NUT] + stats.eps)
    return mu, scale


def normalize_targets(y, on_surface, stats: NormStats) -> np.ndarray:
    """z-score a target vector (or ``(N, 4)`` array with per-row ``on_surface``)."""
    y = np.asarray(y, dtype=np.float64)
    mu, scale = _target_affine(on_surface, stats, y.shape)
    return (y - mu) / scale


def denormalize_targets(y_norm, on_surface, stats: NormStats) -> np.ndarray:
    y_norm = np.asarray(y_norm, dtype=np.float64)
    mu, scale = _target_affine(on_surface, stats, y_norm.shape)
    return y_norm * scale + mu


def reynolds_number(speed: float, length: float, nu: float) -> float:
    """``speed * length / nu``, rounded once from the exact quotient of the decimal inputs.

    Plain float arithmetic gives 10 / 1e-5 = 999999.9999999999 because 1e-5
    has no exact binary form; working on the shortest decimal representations
    returns 1e6 as written.
    """
    if not nu > 0:
        raise ArgumentError(f"viscosity must be > 0, got {nu!r}")
    exact = Fraction(repr(float(speed))) * Fraction(repr(float(length))) / Fraction(repr(float(nu)))
    return float(exact)
