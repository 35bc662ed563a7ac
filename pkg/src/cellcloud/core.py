"""Core domain types for typed 2-D cell point clouds.

A slide is represented as a flat collection of cell centroids in pixel
coordinates (40x magnification) where every cell carries one of three type
tags: neoplastic, inflammatory, or other. Clouds are stored as parallel
numpy arrays so the geometric and statistical stages can stay vectorised.

Two canonical on-disk forms are defined here:

* a UTF-8 CSV with header ``x,y,type`` (type as lowercase token), and
* a little-endian binary cache, magic ``CC5B``, holding packed
  ``(float64 x, float64 y, uint8 type)`` records.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence, Union

import numpy as np

__all__ = [
    "N_TYPES",
    "CellType",
    "Cell",
    "CellCloud",
    "CellCloudError",
    "EmptyCloud",
    "TooFewCells",
    "TooFewPoints",
    "DimMismatch",
    "EmptyGroup",
    "validate_cloud",
    "read_cloud",
    "write_cloud",
    "write_cells_csv",
    "read_features",
    "write_features",
]

#: Number of distinct cell type tags. Fixed for the whole pipeline.
N_TYPES = 3

_CC5B_MAGIC = b"CC5B"
_CC5B_VERSION = 1
_CC5B_RECORD = np.dtype([("x", "<f8"), ("y", "<f8"), ("t", "u1")])

_CCEM_MAGIC = b"CCEM"
_CCEM_VERSION = 1


class CellCloudError(Exception):
    """Base class for all pipeline errors.

    ``error_code`` is a stable machine-readable token; the command line
    front end prints it as ``error_code=<token>`` on stderr.
    """

    error_code = "error"


class EmptyCloud(CellCloudError):
    error_code = "empty_cloud"


class TooFewCells(CellCloudError):
    error_code = "too_few_cells"


class TooFewPoints(CellCloudError):
    error_code = "too_few_points"


class DimMismatch(CellCloudError):
    error_code = "dim_mismatch"


class EmptyGroup(CellCloudError):
    error_code = "empty_group"


class CellType(IntEnum):
    """Cell type tag. Integer values are the on-disk encoding."""

    NEOPLASTIC = 0
    INFLAMMATORY = 1
    OTHER = 2

    @property
    def token(self) -> str:
        return self.name.lower()

    @classmethod
    def from_token(cls, token: str) -> "CellType":
        try:
            return cls[token.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown cell type token: {token!r}") from None


class Cell(NamedTuple):
    x: float
    y: float
    kind: CellType


def _as_xy(xy: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(xy, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"coordinates must have shape (n, 2), got {arr.shape}")
    return arr


def _as_types(types: np.ndarray, n: int) -> np.ndarray:
    arr = np.ascontiguousarray(types, dtype=np.uint8)
    if arr.shape != (n,):
        raise ValueError(f"types must have shape ({n},), got {arr.shape}")
    if arr.size and arr.max(initial=0) >= N_TYPES:
        raise ValueError("type tags must be in 0..2")
    return arr


@dataclass(frozen=True)
class CellCloud:
    """Immutable typed point set in slide pixel coordinates.

    ``xy`` is ``(n, 2)`` float64, ``types`` is ``(n,)`` uint8. Both arrays
    are made read-only on construction so views handed out by queries
    cannot mutate the cloud. ``counts_by_type`` tallies cells per tag.
    """

    xy: np.ndarray
    types: np.ndarray
    slide_id: str = ""
    counts_by_type: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        xy = _as_xy(self.xy)
        types = _as_types(self.types, xy.shape[0])
        xy.setflags(write=False)
        types.setflags(write=False)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "types", types)
        counts = np.bincount(types, minlength=N_TYPES).astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts_by_type", counts)

    @property
    def n_total(self) -> int:
        return self.xy.shape[0]

    def __len__(self) -> int:
        return self.xy.shape[0]

    @classmethod
    def from_cells(cls, cells: Iterable[Cell], slide_id: str = "") -> "CellCloud":
        rows = list(cells)
        xy = np.array([(c.x, c.y) for c in rows], dtype=np.float64).reshape(-1, 2)
        types = np.array([int(c.kind) for c in rows], dtype=np.uint8)
        return cls(xy=xy, types=types, slide_id=slide_id)

    def cells(self) -> Iterator[Cell]:
        for (x, y), t in zip(self.xy, self.types):
            yield Cell(float(x), float(y), CellType(int(t)))

    def bounding_box(self) -> tuple[float, float, float, float]:
        """Inclusive (xmin, ymin, xmax, ymax) of the cloud."""
        if self.n_total == 0:
            raise EmptyCloud("bounding box of an empty cloud is undefined")
        mn = self.xy.min(axis=0)
        mx = self.xy.max(axis=0)
        return float(mn[0]), float(mn[1]), float(mx[0]), float(mx[1])

    def subset(self, mask_or_idx: np.ndarray) -> "CellCloud":
        return CellCloud(
            xy=self.xy[mask_or_idx],
            types=self.types[mask_or_idx],
            slide_id=self.slide_id,
        )


def validate_cloud(cloud: CellCloud) -> list[str]:
    """Return human-readable invariant violations, one string each.

    Checks, reported grouped in this order: every coordinate finite, every
    coordinate non-negative, and no two cells sharing an exact (x, y, type)
    triple. For duplicates every occurrence after the first is reported.
    An empty list means the cloud is well formed.
    """
    problems: list[str] = []
    finite = np.isfinite(cloud.xy).all(axis=1)
    for i in np.flatnonzero(~finite):
        problems.append(f"non-finite coordinate at index {int(i)}")
    negative = finite & (cloud.xy < 0).any(axis=1)
    for i in np.flatnonzero(negative):
        problems.append(f"negative coordinate at index {int(i)}")
    # Duplicate scan over the finite rows only; NaN never compares equal
    # so non-finite rows cannot form duplicates anyway.
    idx = np.flatnonzero(finite)
    if idx.size > 1:
        x, y = cloud.xy[idx, 0], cloud.xy[idx, 1]
        t = cloud.types[idx]
        order = np.lexsort((idx, t, y, x))
        sx, sy, st, si = x[order], y[order], t[order], idx[order]
        same = (sx[1:] == sx[:-1]) & (sy[1:] == sy[:-1]) & (st[1:] == st[:-1])
        dup = np.sort(si[1:][same])
        for i in dup:
            problems.append(f"duplicate cell at index {int(i)}")
    return problems


# ---------------------------------------------------------------------------
# canonical cell file formats
# ---------------------------------------------------------------------------


def write_cells_csv(path: Union[str, Path], cloud: CellCloud) -> None:
    """Write the canonical ``x,y,type`` CSV (floats via repr round-trip)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "type"])
        for (x, y), t in zip(cloud.xy, cloud.types):
            w.writerow([repr(float(x)), repr(float(y)), CellType(int(t)).token])


def write_cloud(path: Union[str, Path], cloud: CellCloud) -> None:
    """Write the binary ``CC5B`` cache for ``cloud``."""
    rec = np.empty(cloud.n_total, dtype=_CC5B_RECORD)
    rec["x"] = cloud.xy[:, 0]
    rec["y"] = cloud.xy[:, 1]
    rec["t"] = cloud.types
    with open(path, "wb") as fh:
        fh.write(_CC5B_MAGIC)
        fh.write(struct.pack("<I", _CC5B_VERSION))
        fh.write(struct.pack("<Q", cloud.n_total))
        fh.write(rec.tobytes())


def read_cloud(path: Union[str, Path], slide_id: str = "") -> CellCloud:
    """Read a ``CC5B`` cache back into a :class:`CellCloud`."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != _CC5B_MAGIC:
        raise ValueError(f"{path}: not a CC5B cell cache")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != _CC5B_VERSION:
        raise ValueError(f"{path}: unsupported CC5B version {version}")
    (count,) = struct.unpack_from("<Q", raw, 8)
    body = raw[16:]
    if len(body) != count * _CC5B_RECORD.itemsize:
        raise ValueError(f"{path}: truncated CC5B payload")
    rec = np.frombuffer(body, dtype=_CC5B_RECORD, count=count)
    xy = np.empty((count, 2), dtype=np.float64)
    xy[:, 0] = rec["x"]
    xy[:, 1] = rec["y"]
    return CellCloud(xy=xy, types=rec["t"].copy(), slide_id=slide_id)


# ---------------------------------------------------------------------------
# feature matrix cache (shared by embeddings and slide descriptors)
# ---------------------------------------------------------------------------


def write_features(path: Union[str, Path], features: np.ndarray) -> None:
    """Write a row-major float32 feature matrix, magic ``CCEM``."""
    arr = np.ascontiguousarray(features, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_CCEM_MAGIC)
        fh.write(struct.pack("<I", _CCEM_VERSION))
        fh.write(struct.pack("<Q", arr.shape[0]))
        fh.write(struct.pack("<I", arr.shape[1]))
        fh.write(arr.tobytes())


def read_features(path: Union[str, Path]) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != _CCEM_MAGIC:
        raise ValueError(f"{path}: not a CCEM feature cache")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != _CCEM_VERSION:
        raise ValueError(f"{path}: unsupported CCEM version {version}")
    (rows,) = struct.unpack_from("<Q", raw, 8)
    (dim,) = struct.unpack_from("<I", raw, 16)
    body = raw[20:]
    if len(body) != rows * dim * 4:
        raise ValueError(f"{path}: truncated CCEM payload")
    return np.frombuffer(body, dtype="<f4", count=rows * dim).reshape(rows, dim).copy()
