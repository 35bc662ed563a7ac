"""Neighboring information embedding.

Each cell is described by how its neighborhood is populated, type by type,
in concentric radius shells. Two normalizations of the same shell counts
are stacked: a local one (shells divided by the cell's own outermost count,
so each type block sums to 1) and a global one (shells divided by the
largest outermost count of that type anywhere in the cloud). The one-hot
type tag is appended, giving dimension 2*n_d*T + T (21 with defaults).

Radii grow linearly to r_max = lambda_r * d_mean, where d_mean is the
cloud's mean nearest-neighbor distance, so the embedding adapts to the
cloud's own density scale and is invariant to rigid motion by construction
(only distances enter).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import CellCloud, N_TYPES, TooFewCells
from .spatial import NeighborCounts, build_index, count_in_radii, mean_nn_distance

__all__ = [
    "NieParams",
    "RadiiSchedule",
    "radii_schedule",
    "local_density",
    "global_density",
    "embed",
    "embed_dim",
]


@dataclass(frozen=True)
class NieParams:
    """Radius schedule knobs: r_max = lambda_r * d_mean over n_d shells."""

    lambda_r: float = 4.0
    n_d: int = 3

    def __post_init__(self) -> None:
        if not (self.lambda_r > 0 and np.isfinite(self.lambda_r)):
            raise ValueError("lambda_r must be positive and finite")
        if self.n_d < 1:
            raise ValueError("n_d must be at least 1")


@dataclass(frozen=True)
class RadiiSchedule:
    r: np.ndarray

    def __post_init__(self) -> None:
        r = np.ascontiguousarray(self.r, dtype=np.float64)
        if r.ndim != 1 or r.size == 0 or r[0] <= 0 or np.any(np.diff(r) <= 0):
            raise ValueError("radii must be ascending and positive")
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @property
    def r_max(self) -> float:
        return float(self.r[-1])


def radii_schedule(d_mean: float, params: NieParams = NieParams()) -> RadiiSchedule:
    """Uniform schedule [r_max/n_d, 2*r_max/n_d, ..., r_max]."""
    if not (d_mean > 0 and np.isfinite(d_mean)):
        raise ValueError("d_mean must be positive and finite")
    r_max = params.lambda_r * d_mean
    j = np.arange(1, params.n_d + 1, dtype=np.float64)
    return RadiiSchedule(r=j * r_max / params.n_d)


def _shell_counts(nc: NeighborCounts) -> np.ndarray:
    """Per-shell (annulus) counts from cumulative counts, float64 (n, n_d, T)."""
    c = nc.counts.astype(np.float64)
    shells = np.empty_like(c)
    shells[:, 0, :] = c[:, 0, :]
    shells[:, 1:, :] = c[:, 1:, :] - c[:, :-1, :]
    return shells


def _flatten_t_major(x: np.ndarray) -> np.ndarray:
    """(n, n_d, T) -> (n, T*n_d) with each type's shell profile contiguous."""
    return np.swapaxes(x, 1, 2).reshape(x.shape[0], -1)


def local_density(nc: NeighborCounts) -> np.ndarray:
    """Shell counts normalized by the cell's own outermost count per type.

    Zero outermost count (no neighbors of that type in range) produces an
    all-zero block rather than NaN.
    """
    shells = _shell_counts(nc)
    denom = nc.counts[:, -1, :].astype(np.float64)[:, None, :]
    out = np.divide(shells, denom, out=np.zeros_like(shells), where=denom > 0)
    return _flatten_t_major(out).astype(np.float32)


def global_density(nc: NeighborCounts) -> np.ndarray:
    """Shell counts normalized by the cloud-wide maximum outermost count per type."""
    shells = _shell_counts(nc)
    if nc.n_cells:
        denom = nc.counts[:, -1, :].max(axis=0).astype(np.float64)
    else:
        denom = np.zeros(N_TYPES)
    denom = denom[None, None, :]
    out = np.divide(shells, denom, out=np.zeros_like(shells), where=denom > 0)
    return _flatten_t_major(out).astype(np.float32)


def embed_dim(params: NieParams = NieParams()) -> int:
    return 2 * params.n_d * N_TYPES + N_TYPES


def embed(
    cloud: CellCloud,
    params: NieParams = NieParams(),
    d_mean: Optional[float] = None,
    threads: int = 1,
) -> np.ndarray:
    """Per-cell embedding [local shells || global shells || onehot], f32.

    ``d_mean`` defaults to the cloud's own mean nearest-neighbor distance;
    pass a value to pin the radius schedule externally (e.g. a dataset-wide
    scale shared across slides).
    """
    if cloud.n_total < 2:
        raise TooFewCells("embedding needs at least 2 cells")
    if d_mean is None:
        d_mean = mean_nn_distance(cloud)
    sched = radii_schedule(d_mean, params)
    index = build_index(cloud, bin_size=sched.r_max)
    nc = count_in_radii(index, sched.r, threads=threads)
    onehot = np.eye(N_TYPES, dtype=np.float32)[cloud.types]
    return np.hstack([local_density(nc), global_density(nc), onehot])
