"""Three-level spatial pyramid over the patch grid: max-pooling of codes,
block saliency and saliency-weighted pooling."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

LEVELS = 3
N_BLOCKS = sum(4 ** lvl for lvl in range(LEVELS))   # 21
NU = 2


@dataclass(frozen=True)
class PyramidLayout:
    """``blocks[j, l]`` is the global block index of patch j at level l.

    Blocks are numbered level by level (root first), row-major inside a
    level, so level l starts at offset (4**l - 1) / 3.
    """

    blocks: np.ndarray
    levels: int = LEVELS

    @property
    def n_blocks(self):
        return sum(4 ** lvl for lvl in range(self.levels))

    @property
    def n_patches(self):
        return self.blocks.shape[0]

    def members(self, k):
        return np.flatnonzero((self.blocks == k).any(axis=1))


def _level_offset(lvl):
    return (4 ** lvl - 1) // 3


def assign_blocks(grid, width=None, height=None, levels=LEVELS):
    """Assign each patch, by its centre pixel, to one block per level.

    A level-l block column covers x in (b*W/n, (b+1)*W/n] with n = 2**l,
    so centres on a boundary go to the lower-index block.
    """
    width = grid.width if width is None else width
    height = grid.height if height is None else height
    if grid.count < 1:
        raise DimensionError("empty patch grid")
    c2 = grid.centers2()        # doubled centres keep odd sizes integral
    cy2, cx2 = c2[:, 0], c2[:, 1]
    out = np.empty((grid.count, levels), dtype=np.int64)
    for lvl in range(levels):
        n = 2 ** lvl
        bx = np.clip((cx2 * n + 2 * width - 1) // (2 * width) - 1, 0, n - 1)
        by = np.clip((cy2 * n + 2 * height - 1) // (2 * height) - 1, 0, n - 1)
        out[:, lvl] = _level_offset(lvl) + by * n + bx
    return PyramidLayout(out, levels)


def max_pool(codes, layout):
    """(n_blocks, r_D) per-block maxima of |coefficient|; empty blocks are 0."""
    Z = np.abs(np.asarray(codes, dtype=np.float64))
    if Z.ndim != 2 or Z.shape[0] != layout.n_patches:
        raise DimensionError(f"codes {Z.shape} for {layout.n_patches} patches")
    pooled = np.zeros((layout.n_blocks, Z.shape[1]))
    for lvl in range(layout.levels):
        np.maximum.at(pooled, layout.blocks[:, lvl], Z)
    return pooled


def concat_normalize(pooled):
    x = np.asarray(pooled, dtype=np.float64).reshape(-1)
    n = np.linalg.norm(x)
    return x / n if n > 0 else np.zeros_like(x)


def top_mean(values, nu=NU):
    """Mean of the top min(nu, len) values; 0 for an empty set."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return 0.0
    m = min(nu, values.size)
    return float(np.partition(values, values.size - m)[values.size - m:].mean())


def block_saliency(maps, layout, nu=NU):
    """s_k = sum over categories of the top-nu mean saliency in block k."""
    maps = [np.asarray(getattr(m, "values", m), dtype=np.float64) for m in maps]
    s = np.zeros(layout.n_blocks)
    for k in range(layout.n_blocks):
        idx = layout.members(k)
        for m in maps:
            if m.shape != (layout.n_patches,):
                raise DimensionError("saliency map does not match the layout")
            s[k] += top_mean(m[idx], nu)
    return s


def saliency_weighted_pool(pooled, bs):
    pooled = np.asarray(pooled, dtype=np.float64)
    bs = np.asarray(bs, dtype=np.float64)
    if bs.shape != (pooled.shape[0],):
        raise DimensionError("one saliency weight per block required")
    return bs[:, None] * pooled


def image_vector(codes, layout, maps=None, nu=NU):
    """Classifier input: pooled codes, optionally saliency-weighted, then
    one global L2 normalisation."""
    pooled = max_pool(codes, layout)
    if maps is not None:
        pooled = saliency_weighted_pool(pooled, block_saliency(maps, layout, nu))
    return concat_normalize(pooled)
