"""Image-to-feature packing and outlier-based searches on cell grids.

An image is cut into square cells; the pixel values of each cell, flattened
row-major, form one observation. Color images are first mapped pixelwise to
(saturation, intensity); a color cell stores all saturation values followed
by all intensity values.
"""
from dataclasses import dataclass
import warnings

import numpy as np

from .core import KTauConfig, ktau_fit
from .robust_covariance import OutlierPolicy, mahalanobis_sq, robust_flags
from .scales import default_rho


@dataclass
class CellGrid:
    rows: int
    cols: int
    cell_size: int
    channels: int
    features: np.ndarray
    geo: np.ndarray

    def coord(self, index):
        return int(self.geo[index, 0]), int(self.geo[index, 1])

    def linear_index(self, row, col):
        return int(row) * self.cols + int(col)


def si_transform(r, g, b):
    """Saturation and intensity of RGB values in [0, 1].

    ``I = (R + G + B) / 3`` and ``S = 1 - min(R, G, B) / I``, with
    ``S = 0`` where ``I = 0``. Works elementwise on arrays.
    """
    r, g, b = (np.asarray(v, dtype=float) for v in (r, g, b))
    for v in (r, g, b):
        if np.any(~np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
            raise ValueError("channel values must lie in [0, 1]")
    i = (r + g + b) / 3.0
    m = np.minimum(np.minimum(r, g), b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(i > 0, 1.0 - m / np.where(i > 0, i, 1.0), 0.0)
    s = np.clip(s, 0.0, 1.0)
    if s.ndim == 0:
        return float(s), float(i)
    return s, i


def _crop(shape, cell_size):
    if cell_size < 1:
        raise ValueError("cell_size must be positive")
    h, w = shape[:2]
    if h == 0 or w == 0:
        raise ValueError("empty image")
    rows, cols = h // cell_size, w // cell_size
    if rows == 0 or cols == 0:
        raise ValueError("image smaller than one cell")
    if rows * cell_size != h or cols * cell_size != w:
        warnings.warn("dropping partial trailing cells", RuntimeWarning)
    return rows, cols


def _pack_planes(planes, cell_size):
    # planes: (c, h, w) -> (rows*cols, c*cell_size**2)
    c, h, w = planes.shape
    rows, cols = _crop((h, w), cell_size)
    kept = planes[:, :rows * cell_size, :cols * cell_size]
    blocks = kept.reshape(c, rows, cell_size, cols, cell_size).transpose(1, 3, 0, 2, 4)
    feats = blocks.reshape(rows * cols, c * cell_size * cell_size)
    rr, cc = np.divmod(np.arange(rows * cols), cols)
    return CellGrid(rows, cols, cell_size, c, np.ascontiguousarray(feats), np.column_stack([rr, cc]))


def pack_gray_cells(image, cell_size):
    """Pack a 2-D gray raster into ``cell_size x cell_size`` cells."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("gray image must be two-dimensional")
    if img.size == 0:
        raise ValueError("empty image")
    return _pack_planes(img[None], cell_size)


def pack_rgb_cells(image, cell_size):
    """Pack an ``(h, w, 3)`` RGB raster as per-cell saturation and intensity."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("RGB image must have shape (h, w, 3)")
    if img.size == 0:
        raise ValueError("empty image")
    s, i = si_transform(img[..., 0], img[..., 1], img[..., 2])
    return _pack_planes(np.stack([s, i]), cell_size)


def unpack_cells(grid):
    """Rebuild the kept image region (one plane per channel) from cell features."""
    k = grid.cell_size
    blocks = grid.features.reshape(grid.rows, grid.cols, grid.channels, k, k)
    planes = blocks.transpose(2, 0, 3, 1, 4).reshape(grid.channels, grid.rows * k, grid.cols * k)
    return planes[0] if grid.channels == 1 else planes


def extreme_outlier(result, grid):
    """Cell farthest from its assigned center; ties go to the smallest index."""
    return grid.coord(int(np.argmax(result.distances)))


def geographic_search(result, grid, target_cluster, rho=None, policy=None, seed=0):
    """Isolated cells among the members of one cluster, by grid position.

    The (row, col) positions of the cells assigned to ``target_cluster``
    are fitted with a one-cluster K-Tau and a robust ellipsoid; cells
    outside the ellipsoid are returned as ``(row, col, d2)`` sorted by
    decreasing squared Mahalanobis distance.
    """
    policy = policy or OutlierPolicy()
    members = np.flatnonzero(np.asarray(result.assignment) == target_cluster)
    if members.size < 3:
        raise ValueError(f"cluster {target_cluster} has {members.size} cells; need at least 3")
    coords = grid.geo[members].astype(float)
    rho = rho if rho is not None else default_rho(2)
    fit = ktau_fit(coords, KTauConfig(K=1, rho=rho, n_starts=1, seed=seed))
    _, (ell,) = robust_flags(coords, fit, rho, policy)
    d2 = mahalanobis_sq(coords, ell)
    out = [(int(grid.geo[m, 0]), int(grid.geo[m, 1]), float(v))
           for m, v in zip(members, d2) if v > ell.cutoff]
    out.sort(key=lambda c: (-c[2], c[0], c[1]))
    return out
