"""Image ingestion, dense patch grids, patch descriptors and patch labels.

Descriptors are a simplified dense SIFT: finite-difference gradients
computed inside each patch, 4x4 spatial cells, 8 orientation bins with
hard assignment, L2 normalisation, clipping at 0.2 and renormalisation.
Everything is computed from the patch pixels alone, so two patches with
the same content always get the same descriptor.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .pnm import read_pgm

N_CELLS = 4
N_BINS = 8
DESCRIPTOR_SIZE = N_CELLS * N_CELLS * N_BINS
CLIP = 0.2


@dataclass(frozen=True)
class PatchGrid:
    """Regular lattice of square patches fully inside an image.

    Patch ``j`` sits at grid position ``(j // cols, j % cols)`` and its
    top-left pixel is ``(row * stride, col * stride)``.
    """

    patch_size: int
    stride: int
    rows: int
    cols: int
    height: int
    width: int

    @property
    def count(self):
        return self.rows * self.cols

    def origins(self):
        """(t, 2) array of (y, x) top-left offsets in patch order."""
        r, c = np.divmod(np.arange(self.count), self.cols)
        return np.stack([r * self.stride, c * self.stride], axis=1)

    def centers2(self):
        """Doubled patch-center coordinates (y, x); integers even for odd sizes."""
        return 2 * self.origins() + self.patch_size


def build_patch_grid(width, height, patch_size=64, stride=16):
    if patch_size < 1 or stride < 1:
        raise ValueError("patch_size and stride must be >= 1")
    if stride > patch_size:
        raise ValueError("stride must not exceed patch_size")
    if width < patch_size or height < patch_size:
        raise DimensionError(
            f"image {width}x{height} is smaller than the {patch_size}px patch")
    rows = (height - patch_size) // stride + 1
    cols = (width - patch_size) // stride + 1
    return PatchGrid(patch_size, stride, rows, cols, height, width)


def to_gray(pixels):
    """Convert an 8-bit array to grayscale with integer BT.601 luma."""
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        return pixels.astype(np.uint8)
    if pixels.ndim == 3 and pixels.shape[2] in (3, 4):
        rgb = pixels[..., :3].astype(np.int64)
        y = (299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000
        return np.clip(y, 0, 255).astype(np.uint8)
    raise DimensionError(f"unsupported image shape {pixels.shape}")


def load_image(path):
    """Read an 8-bit PGM (P5) or PNG file as a grayscale uint8 array."""
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".pnm"):
        pixels = read_pgm(path)
        if pixels.dtype != np.uint8:
            raise DimensionError(f"{path}: expected an 8-bit PGM")
        return pixels
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("I;16", "I", "F"):
            raise DimensionError(f"{path}: expected an 8-bit image")
        if im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGB")
        return to_gray(np.asarray(im))


def load_mask(path):
    """Read a mask image; nonzero pixels are object."""
    return load_image(path) != 0


def extract_patches(image, grid):
    """(t, P, P) float64 stack of the grid's patches."""
    image = np.asarray(image)
    if image.shape != (grid.height, grid.width):
        raise DimensionError(
            f"image shape {image.shape} does not match grid "
            f"{(grid.height, grid.width)}")
    P, s = grid.patch_size, grid.stride
    windows = np.lib.stride_tricks.sliding_window_view(image, (P, P))
    windows = windows[::s, ::s][: grid.rows, : grid.cols]
    return windows.reshape(-1, P, P).astype(np.float64)


def _descriptors_from_patches(patches):
    t, P, _ = patches.shape
    gy, gx = np.gradient(patches, axis=(1, 2))
    mag = np.hypot(gx, gy)
    # bins centred on multiples of 45 degrees; bin 0 is +x, bin 4 is -x
    ori = np.rint(np.arctan2(gy, gx) * (N_BINS / (2 * np.pi))).astype(np.int64) % N_BINS
    cell = np.arange(P) * N_CELLS // P
    cell_idx = cell[:, None] * N_CELLS + cell[None, :]
    flat = (np.arange(t)[:, None, None] * DESCRIPTOR_SIZE
            + cell_idx[None] * N_BINS + ori)
    hist = np.bincount(flat.ravel(), weights=mag.ravel(),
                       minlength=t * DESCRIPTOR_SIZE).reshape(t, DESCRIPTOR_SIZE)
    return _normalize_clip(hist)


def _normalize_clip(hist):
    norms = np.linalg.norm(hist, axis=1, keepdims=True)
    out = np.zeros_like(hist)
    nz = norms[:, 0] > 0
    out[nz] = np.minimum(hist[nz] / norms[nz], CLIP)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    out[nz] /= norms[nz]
    return out


def dense_descriptor(image, y, x, patch_size=64):
    """128-d descriptor of the patch whose top-left pixel is (y, x)."""
    image = np.asarray(image)
    h, w = image.shape
    if y < 0 or x < 0 or y + patch_size > h or x + patch_size > w:
        raise DimensionError(f"patch at ({y}, {x}) of size {patch_size} "
                             f"leaves the {w}x{h} image")
    patch = image[y:y + patch_size, x:x + patch_size].astype(np.float64)
    return _descriptors_from_patches(patch[None])[0]


def extract_descriptors(image, grid):
    """(t, 128) descriptors for every patch of ``grid`` in patch order."""
    return _descriptors_from_patches(extract_patches(image, grid))


def label_patches(grid, mask, frac=0.25):
    """+1 where at least ``frac`` of a patch's pixels are object, else -1."""
    mask = np.asarray(mask)
    if mask.shape != (grid.height, grid.width):
        raise DimensionError(
            f"mask shape {mask.shape} does not match image "
            f"{(grid.height, grid.width)}")
    integral = np.zeros((grid.height + 1, grid.width + 1), dtype=np.int64)
    integral[1:, 1:] = np.cumsum(np.cumsum(mask != 0, axis=0), axis=1)
    o = grid.origins()
    y0, x0 = o[:, 0], o[:, 1]
    y1, x1 = y0 + grid.patch_size, x0 + grid.patch_size
    count = integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]
    area = grid.patch_size * grid.patch_size
    return np.where(count >= frac * area, 1, -1).astype(np.int8)
