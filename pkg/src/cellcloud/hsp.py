"""Hierarchical spatial perception forward pass.

A cell cloud is reduced to one fixed-size descriptor by L rounds of
group-attend-aggregate:

1. pick group anchors by farthest point sampling (level 1 augments the
   coordinates with scaled type one-hots so anchors cover both space and
   composition),
2. group the 2*N/N_k nearest points around each anchor,
3. score members against the group mean feature and anchor position, and
   mask out low-scoring ones (a semantic-spatial filter),
4. update member features with a few rounds of per-channel vector
   attention over the retained members,
5. project each member to twice the width and average the retained ones
   into the group feature.

Anchors become the next level's points. After the last level the features
are max-pooled element-wise into the cloud descriptor (512-dim with the
default config). Weights are inference artifacts: either loaded from a
``CCWT`` file or drawn from a seeded counter-based generator, so a
(config, seed) pair pins the descriptor bit-for-bit across platforms.

All internal arithmetic runs in float64; weights are stored float32 and
the final descriptor is returned as float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .core import DimMismatch, EmptyGroup, TooFewPoints
from .spatial import fps, knn_group, _nn_mean_xy

__all__ = [
    "HspConfig",
    "BlockWeights",
    "LevelWeights",
    "HspWeights",
    "GroupView",
    "LevelTrace",
    "init_weights",
    "similarity_scores",
    "filter_mask",
    "vector_attention",
    "hsp_forward",
    "combine_appearance",
    "save_weights",
    "load_weights",
]

_CCWT_MAGIC = b"CCWT"
_CCWT_VERSION = 1

# Group batches are sized so one (batch, k, k, D) scratch tensor stays near
# this many float64 elements; attention allocates a handful of them.
_ATT_BUDGET = 4_000_000


@dataclass(frozen=True)
class HspConfig:
    levels: int = 3
    initial_anchors: int = 2048
    n_basic: int = 16
    lambda_sim: float = 0.5
    updates_per_level: int = 2
    encode_dim: int = 64
    dim_multiplier: int = 2

    def __post_init__(self) -> None:
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.initial_anchors < 1 or self.n_basic < 1:
            raise ValueError("initial_anchors and n_basic must be >= 1")
        if self.initial_anchors % (self.n_basic ** (self.levels - 1)) != 0:
            raise ValueError(
                "initial_anchors must be divisible by n_basic**(levels-1)"
            )
        if self.updates_per_level < 1:
            raise ValueError("updates_per_level must be >= 1")
        if self.encode_dim < 1 or self.dim_multiplier < 1:
            raise ValueError("encode_dim and dim_multiplier must be >= 1")
        if not np.isfinite(self.lambda_sim):
            raise ValueError("lambda_sim must be finite")

    @property
    def output_dim(self) -> int:
        return self.encode_dim * self.dim_multiplier**self.levels

    def level_dim(self, level: int) -> int:
        """Feature width entering level ``level`` (0-based)."""
        return self.encode_dim * self.dim_multiplier**level


@dataclass(frozen=True)
class BlockWeights:
    """One vector-attention block: Q/K/V affines, the 2->D position lift,
    and the two-layer ReLU perceptron producing per-channel logits."""

    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_pos: np.ndarray
    b_pos: np.ndarray
    w_att1: np.ndarray
    b_att1: np.ndarray
    w_att2: np.ndarray
    b_att2: np.ndarray

    def tensors(self) -> Iterator[np.ndarray]:
        yield from (
            self.w_q, self.b_q, self.w_k, self.b_k, self.w_v, self.b_v,
            self.w_pos, self.b_pos, self.w_att1, self.b_att1,
            self.w_att2, self.b_att2,
        )

    def astype(self, dtype) -> "BlockWeights":
        return BlockWeights(*(t.astype(dtype) for t in self.tensors()))


@dataclass(frozen=True)
class LevelWeights:
    blocks: tuple[BlockWeights, ...]
    w_agg: np.ndarray
    b_agg: np.ndarray

    def tensors(self) -> Iterator[np.ndarray]:
        for blk in self.blocks:
            yield from blk.tensors()
        yield self.w_agg
        yield self.b_agg

    def astype(self, dtype) -> "LevelWeights":
        return LevelWeights(
            blocks=tuple(b.astype(dtype) for b in self.blocks),
            w_agg=self.w_agg.astype(dtype),
            b_agg=self.b_agg.astype(dtype),
        )


@dataclass(frozen=True)
class HspWeights:
    config: HspConfig
    input_dim: int
    encoder_w: np.ndarray
    encoder_b: np.ndarray
    levels: tuple[LevelWeights, ...]

    def tensors(self) -> Iterator[np.ndarray]:
        """All tensors in the canonical (file) order."""
        yield self.encoder_w
        yield self.encoder_b
        for lw in self.levels:
            yield from lw.tensors()

    def astype(self, dtype) -> "HspWeights":
        return HspWeights(
            config=self.config,
            input_dim=self.input_dim,
            encoder_w=self.encoder_w.astype(dtype),
            encoder_b=self.encoder_b.astype(dtype),
            levels=tuple(lw.astype(dtype) for lw in self.levels),
        )


def _tensor_shapes(config: HspConfig, input_dim: int) -> list[tuple[int, ...]]:
    """Shapes in canonical order; fan_in of each tensor is its last axis
    (biases inherit their matrix's fan_in, encoded by pairing below)."""
    shapes: list[tuple[int, ...]] = [(config.encode_dim, input_dim), (config.encode_dim,)]
    for lvl in range(config.levels):
        d = config.level_dim(lvl)
        for _ in range(config.updates_per_level):
            for _ in ("q", "k", "v"):
                shapes += [(d, d), (d,)]
            shapes += [(d, 2), (d,)]          # position lift
            shapes += [(d, d), (d,), (d, d), (d,)]  # two-layer perceptron
        shapes += [(d * config.dim_multiplier, d), (d * config.dim_multiplier,)]
    return shapes


def init_weights(config: HspConfig, input_dim: int, seed: int) -> HspWeights:
    """Draw every tensor from U[-1/sqrt(fan_in), +1/sqrt(fan_in)].

    A single counter-based (Philox) stream walks the canonical tensor
    order, so the same (config, input_dim, seed) reproduces identical bytes
    on any platform. Biases use their matrix's fan_in bound.
    """
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    shapes = _tensor_shapes(config, input_dim)
    flat: list[np.ndarray] = []
    fan_in = input_dim
    for shape in shapes:
        if len(shape) == 2:
            fan_in = shape[1]
        bound = 1.0 / np.sqrt(fan_in)
        flat.append(rng.uniform(-bound, bound, size=shape).astype(np.float32))
    return _assemble(config, input_dim, flat)


def _assemble(config: HspConfig, input_dim: int, flat: Sequence[np.ndarray]) -> HspWeights:
    it = iter(flat)
    enc_w, enc_b = next(it), next(it)
    levels = []
    for _ in range(config.levels):
        blocks = []
        for _ in range(config.updates_per_level):
            blocks.append(BlockWeights(*(next(it) for _ in range(12))))
        w_agg, b_agg = next(it), next(it)
        levels.append(LevelWeights(blocks=tuple(blocks), w_agg=w_agg, b_agg=b_agg))
    leftover = list(it)
    if leftover:
        raise ValueError("too many tensors for config")
    return HspWeights(
        config=config,
        input_dim=input_dim,
        encoder_w=enc_w,
        encoder_b=enc_b,
        levels=tuple(levels),
    )


# ---------------------------------------------------------------------------
# groups, similarity filter, attention
# ---------------------------------------------------------------------------


@dataclass
class GroupView:
    """One anchor and its k member points at some level.

    ``f_ref`` is always the mean of the member features before any
    filtering. ``mask`` is None until the filter runs; afterwards it has at
    least one True entry (rescue rule).
    """

    anchor_coord: np.ndarray
    member_indices: np.ndarray
    member_coords: np.ndarray
    member_features: np.ndarray
    f_ref: np.ndarray = field(init=False)
    mask: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.anchor_coord = np.ascontiguousarray(self.anchor_coord, dtype=np.float64)
        self.member_coords = np.ascontiguousarray(self.member_coords, dtype=np.float64)
        self.member_features = np.ascontiguousarray(self.member_features, dtype=np.float64)
        if self.member_features.shape[0] != self.member_coords.shape[0]:
            raise ValueError("member feature and coordinate counts differ")
        if self.member_features.shape[0] == 0:
            raise EmptyGroup("group has no members")
        self.f_ref = self.member_features.mean(axis=0)

    def anchor_distances(self) -> np.ndarray:
        dx = self.member_coords[:, 0] - self.anchor_coord[0]
        dy = self.member_coords[:, 1] - self.anchor_coord[1]
        return np.sqrt(dx * dx + dy * dy)


def similarity_scores(group: GroupView) -> np.ndarray:
    """Semantic-spatial score exp(-d_norm) * <f, f_ref>/D per member.

    The member-to-anchor distance is normalized by the group's mean
    member-to-anchor distance before the exponential, which keeps the
    spatial term scale-free (and makes the score translation invariant).
    A group collapsed onto its anchor uses d_norm = 0.
    """
    d = group.anchor_distances()
    scale = float(d.mean())
    d_norm = d / scale if scale > 0 else np.zeros_like(d)
    dim = group.member_features.shape[1]
    dots = group.member_features @ group.f_ref
    return np.exp(-d_norm) * dots / dim


def filter_mask(
    scores: np.ndarray,
    lambda_sim: float,
    anchor_distances: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Boolean retention mask ``scores > lambda_sim`` with a rescue rule.

    If nothing clears the threshold, the member nearest the anchor is
    force-retained (falling back to the highest score when distances are
    not supplied).
    """
    scores = np.asarray(scores, dtype=np.float64)
    mask = scores > lambda_sim
    if not mask.any() and scores.size:
        if anchor_distances is not None:
            mask[int(np.argmin(anchor_distances))] = True
        else:
            mask[int(np.argmax(scores))] = True
    return mask


def _attend(
    feats: np.ndarray,
    coords: np.ndarray,
    mask: np.ndarray,
    blk: BlockWeights,
) -> tuple[np.ndarray, float]:
    """One vector-attention update over a batch of groups.

    ``feats`` is (b, k, D), ``coords`` (b, k, 2), ``mask`` (b, k). Masked
    members are excluded from every softmax support and value sum and pass
    through unchanged. Returns the updated features and the largest
    per-channel deviation of the attention-weight sums from 1 (over
    retained members), which the structural checks consume.
    """
    if not mask.any():
        raise EmptyGroup("attention over a fully masked group")
    q = feats @ blk.w_q.T + blk.b_q
    kk = feats @ blk.w_k.T + blk.b_k
    v = feats @ blk.w_v.T + blk.b_v
    rel = coords[:, :, None, :] - coords[:, None, :, :]
    pos = rel @ blk.w_pos.T + blk.b_pos
    del rel
    x = q[:, :, None, :] - kk[:, None, :, :] + pos
    del q, kk
    x = np.maximum(x @ blk.w_att1.T + blk.b_att1, 0.0)
    logits = x @ blk.w_att2.T + blk.b_att2
    del x
    logits = np.where(mask[:, None, :, None], logits, -np.inf)
    logits -= logits.max(axis=2, keepdims=True)
    np.exp(logits, out=logits)
    delta = logits / logits.sum(axis=2, keepdims=True)
    del logits
    out = (delta * (v[:, None, :, :] + pos)).sum(axis=2)
    sums = delta.sum(axis=2)[mask]
    err = float(np.abs(sums - 1.0).max()) if sums.size else 0.0
    return np.where(mask[:, :, None], out, feats), err


def vector_attention(group: GroupView, blk: BlockWeights) -> np.ndarray:
    """Single-group vector attention (see :func:`_attend` for semantics)."""
    if group.mask is None or not group.mask.any():
        raise EmptyGroup("vector attention requires at least one retained member")
    blk64 = blk.astype(np.float64)
    out, _ = _attend(
        group.member_features[None],
        group.member_coords[None],
        np.asarray(group.mask, dtype=bool)[None],
        blk64,
    )
    return out[0]


@dataclass
class LevelTrace:
    level: int
    n_points: int
    n_anchors: int
    group_size: int
    delta_sum_err: float


def hsp_forward(
    coords: np.ndarray,
    features: np.ndarray,
    types: Optional[np.ndarray],
    config: HspConfig,
    weights: HspWeights,
    trace: Optional[list] = None,
) -> np.ndarray:
    """Run the full multi-level forward pass, returning the cloud descriptor.

    ``types`` feeds the level-1 semantic FPS augmentation (gamma = mean
    nearest-neighbor distance of the input points); pass None to sample
    anchors on coordinates alone. ``trace``, if given, collects a
    :class:`LevelTrace` per level for structural inspection.
    """
    xy = np.ascontiguousarray(coords, dtype=np.float64).reshape(-1, 2)
    n = xy.shape[0]
    if n < 2:
        raise TooFewPoints("forward pass needs at least 2 points")
    feats_in = np.ascontiguousarray(features, dtype=np.float64)
    if feats_in.ndim != 2 or feats_in.shape[0] != n:
        raise DimMismatch("features must be (n_points, input_dim)")
    if feats_in.shape[1] != weights.input_dim:
        raise DimMismatch(
            f"features have dim {feats_in.shape[1]}, weights expect {weights.input_dim}"
        )
    w64 = weights.astype(np.float64)
    feats = feats_in @ w64.encoder_w.T + w64.encoder_b
    labels = None if types is None else np.ascontiguousarray(types)
    n_k = config.initial_anchors
    for lvl, lw in enumerate(w64.levels):
        pts = xy.shape[0]
        nk_eff = min(n_k, pts)
        k = min(max(1, (2 * pts) // nk_eff), pts)
        if lvl == 0 and labels is not None:
            gamma = _nn_mean_xy(xy)
            anchors = fps(xy, labels, nk_eff, gamma)
        else:
            anchors = fps(xy, None, nk_eff, 0.0)
        anchor_xy = xy[anchors]
        groups = knn_group(anchor_xy, xy, k)
        d = feats.shape[1]
        new_feats = np.empty((nk_eff, d * config.dim_multiplier), dtype=np.float64)
        err = 0.0
        chunk = max(1, _ATT_BUDGET // (k * k * d))
        for s in range(0, nk_eff, chunk):
            e = min(s + chunk, nk_eff)
            g = groups[s:e]
            mf = feats[g]
            mc = xy[g]
            f_ref = mf.mean(axis=1)
            dx = mc[:, :, 0] - anchor_xy[s:e, 0][:, None]
            dy = mc[:, :, 1] - anchor_xy[s:e, 1][:, None]
            dist = np.sqrt(dx * dx + dy * dy)
            scale = dist.mean(axis=1)
            d_norm = np.divide(
                dist, scale[:, None], out=np.zeros_like(dist), where=scale[:, None] > 0
            )
            dots = (mf * f_ref[:, None, :]).sum(axis=2)
            s_sim = np.exp(-d_norm) * dots / d
            mask = s_sim > config.lambda_sim
            rescued = np.flatnonzero(~mask.any(axis=1))
            if rescued.size:
                mask[rescued, np.argmin(dist[rescued], axis=1)] = True
            cur = mf
            for blk in lw.blocks:
                cur, blk_err = _attend(cur, mc, mask, blk)
                err = max(err, blk_err)
            proj = cur @ lw.w_agg.T + lw.b_agg
            wgt = mask[:, :, None].astype(np.float64)
            new_feats[s:e] = (proj * wgt).sum(axis=1) / mask.sum(axis=1)[:, None]
        if trace is not None:
            trace.append(
                LevelTrace(
                    level=lvl + 1,
                    n_points=pts,
                    n_anchors=nk_eff,
                    group_size=k,
                    delta_sum_err=err,
                )
            )
        xy = anchor_xy
        feats = new_feats
        labels = None
        n_k = max(1, n_k // config.n_basic)
    return feats.max(axis=0).astype(np.float32)


def combine_appearance(
    f_cell_wsi: np.ndarray, f_app: np.ndarray, beta: float
) -> np.ndarray:
    """Blend the cloud descriptor with an external appearance vector."""
    a = np.asarray(f_cell_wsi, dtype=np.float64).ravel()
    b = np.asarray(f_app, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimMismatch(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return (a + beta * b).astype(np.float32)


# ---------------------------------------------------------------------------
# weight file io
# ---------------------------------------------------------------------------


def save_weights(path: Union[str, Path], weights: HspWeights) -> None:
    """Write a ``CCWT`` weight file (config header + canonical tensor list)."""
    cfg = weights.config
    tensors = list(weights.tensors())
    with open(path, "wb") as fh:
        fh.write(_CCWT_MAGIC)
        fh.write(struct.pack("<I", _CCWT_VERSION))
        fh.write(
            struct.pack(
                "<IIIIII",
                cfg.levels,
                cfg.initial_anchors,
                cfg.n_basic,
                cfg.updates_per_level,
                cfg.encode_dim,
                cfg.dim_multiplier,
            )
        )
        fh.write(struct.pack("<d", cfg.lambda_sim))
        fh.write(struct.pack("<I", weights.input_dim))
        fh.write(struct.pack("<I", len(tensors)))
        for t in tensors:
            arr = np.ascontiguousarray(t, dtype="<f4")
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_weights(path: Union[str, Path]) -> HspWeights:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != _CCWT_MAGIC:
        raise ValueError(f"{path}: not a CCWT weight file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != _CCWT_VERSION:
        raise ValueError(f"{path}: unsupported CCWT version {version}")
    levels, anchors, n_basic, updates, enc_dim, mult = struct.unpack_from("<IIIIII", raw, 8)
    (lambda_sim,) = struct.unpack_from("<d", raw, 32)
    input_dim, n_tensors = struct.unpack_from("<II", raw, 40)
    cfg = HspConfig(
        levels=levels,
        initial_anchors=anchors,
        n_basic=n_basic,
        lambda_sim=lambda_sim,
        updates_per_level=updates,
        encode_dim=enc_dim,
        dim_multiplier=mult,
    )
    expect = _tensor_shapes(cfg, input_dim)
    if n_tensors != len(expect):
        raise ValueError(f"{path}: expected {len(expect)} tensors, file has {n_tensors}")
    off = 48
    flat: list[np.ndarray] = []
    for shape in expect:
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        if tuple(dims) != shape:
            raise ValueError(f"{path}: tensor shape {dims} does not match {shape}")
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(dims).copy()
        off += 4 * size
        flat.append(arr)
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes in weight file")
    return _assemble(cfg, input_dim, flat)
