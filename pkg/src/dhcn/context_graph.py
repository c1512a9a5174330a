"""Neighborhood systems: directional cell adjacencies and image-level links.

Cells are indexed row-major on a ``grid_rows x grid_cols`` lattice and
distances are measured between cell centers in cell units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

DIRECTIONS = ("top", "bottom", "left", "right")


@dataclass(frozen=True)
class GridSpec:
    grid_rows: int
    grid_cols: int

    def __post_init__(self):
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValidationError(f"grid must be at least 1x1, got {self.grid_rows}x{self.grid_cols}")

    @property
    def n_cells(self):
        return self.grid_rows * self.grid_cols

    def coords(self):
        """Return ``(rows, cols)`` integer arrays of length ``n_cells``."""
        idx = np.arange(self.n_cells)
        return idx // self.grid_cols, idx % self.grid_cols


def _sector(drow, dcol):
    horizontal = (np.abs(dcol) >= np.abs(drow)) & (dcol != 0)
    vertical = ~horizontal & (drow != 0)
    return {
        "right": horizontal & (dcol > 0),
        "left": horizontal & (dcol < 0),
        "bottom": vertical & (drow > 0),
        "top": vertical & (drow < 0),
    }


def build_geometric_adjacency(grid, radius, direction):
    """0/1 support of the ``direction`` neighbors within ``radius`` of each cell.

    Entry ``(i, j)`` is 1 when cell ``j`` lies within the disk of ``radius``
    around cell ``i`` (excluding ``i`` itself) and falls in the requested
    sector. With ``drow = row_j - row_i`` and ``dcol = col_j - col_i`` a
    neighbor is horizontal (left/right) when ``|dcol| >= |drow|``, vertical
    (top/bottom) otherwise, so diagonal ties go to the horizontal sectors.
    """
    if direction not in DIRECTIONS:
        raise ValidationError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}")
    if not radius >= 1:
        raise ValidationError(f"radius must be >= 1, got {radius}")
    rows, cols = grid.coords()
    drow = rows[None, :] - rows[:, None]
    dcol = cols[None, :] - cols[:, None]
    inside = drow * drow + dcol * dcol <= radius * radius
    return (inside & _sector(drow, dcol)[direction]).astype(np.float64)


def row_normalize(a):
    """Scale every nonzero row of a nonnegative matrix to sum to one."""
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0):
        raise ValidationError("row_normalize needs nonnegative entries")
    sums = a.sum(axis=1, keepdims=True)
    return np.where(sums > 0, a / np.where(sums > 0, sums, 1.0), a)


@dataclass
class GeometricContext:
    """Row-stochastic directional adjacencies with their fixed supports."""

    directions: tuple
    matrices: np.ndarray  # (C, n, n)
    masks: np.ndarray  # (C, n, n) bool
    radius: float

    @classmethod
    def build(cls, grid, radius, directions=DIRECTIONS):
        supports = np.stack([build_geometric_adjacency(grid, radius, d) for d in directions])
        return cls(tuple(directions), np.stack([row_normalize(s) for s in supports]), supports > 0, float(radius))


def _similarity(pooled, kind):
    if kind not in ("cosine", "dot"):
        raise ValidationError(f"unknown similarity {kind!r}")
    dots = pooled @ pooled.T
    if kind == "dot":
        return dots
    norms = np.sqrt(np.einsum("ij,ij->i", pooled, pooled))
    ok = norms > 0
    # zero-norm rows keep plain dot similarity
    scale = np.where(ok, norms, 1.0)
    cos = dots / scale[:, None] / scale[None, :]
    return np.where(ok[:, None], cos, dots)


def knn_support(similarity, k, exclude_self=True):
    """Boolean mask keeping the ``k`` most similar columns of each row.

    Ties are broken toward the lower column index.
    """
    sim = np.asarray(similarity, dtype=np.float64)
    n_rows, n_cols = sim.shape
    mask = np.zeros(sim.shape, dtype=bool)
    for i in range(n_rows):
        cand = np.arange(n_cols)
        if exclude_self:
            cand = cand[cand != i]
        # lexsort: last key is primary
        order = np.lexsort((cand, -sim[i, cand]))
        mask[i, cand[order[:k]]] = True
    return mask


def build_semantic_adjacency(pooled, k, similarity="cosine"):
    """kNN image graph over pooled image maps.

    Returns
    -------
    adjacency : ndarray, shape (P, P)
        Uniform ``1/k`` weights on each row's support.
    mask : ndarray of bool, shape (P, P)
    """
    pooled = np.asarray(pooled, dtype=np.float64)
    n_images = pooled.shape[0]
    if k < 1:
        raise ValidationError(f"semantic k must be >= 1, got {k}")
    if k >= n_images:
        raise ValidationError(f"semantic k={k} must be smaller than the number of images ({n_images})")
    mask = knn_support(_similarity(pooled, similarity), k)
    return row_normalize(mask.astype(np.float64)), mask


def load_semantic_links(link_pairs, image_ids):
    """Directed image links given as ``(source_id, target_id)`` pairs."""
    index = {img: i for i, img in enumerate(image_ids)}
    n_images = len(index)
    mask = np.zeros((n_images, n_images), dtype=bool)
    for src, dst in link_pairs:
        for img in (src, dst):
            if img not in index:
                raise ValidationError(f"semantic link references unknown image id {img!r}")
        if src != dst:
            mask[index[src], index[dst]] = True
    return row_normalize(mask.astype(np.float64)), mask
