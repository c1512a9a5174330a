"""Initial explicit cell maps: identity for the linear kernel, landmark KPCA
for the histogram intersection kernel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ShapeError, ValidationError
from .linalg import check_finite, sym_eig

DEFAULT_EIGENVALUE_FLOOR = 1e-10
DEFAULT_LANDMARKS = 256


def hi_kernel(x, y):
    """Histogram intersection ``sum_i min(x_i, y_i)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"hi_kernel needs equal lengths, got {x.shape} and {y.shape}")
    if np.any(x < 0) or np.any(y < 0):
        raise ValidationError("hi_kernel needs nonnegative entries")
    return float(np.minimum(x, y).sum())


def hi_gram(a, b):
    """Matrix of histogram intersections between rows of ``a`` and rows of ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"feature width {a.shape[1]} does not match landmark width {b.shape[1]}")
    if np.any(a < 0) or np.any(b < 0):
        raise ValidationError("histogram intersection needs nonnegative entries")
    out = np.empty((a.shape[0], b.shape[0]))
    # chunk over rows of ``a`` to bound the (rows, m, d) temporary
    step = max(1, 2_000_000 // max(1, b.size))
    for s in range(0, a.shape[0], step):
        out[s:s + step] = np.minimum(a[s:s + step, None, :], b[None, :, :]).sum(axis=2)
    return out


def l1_normalize(features):
    """Scale each nonzero row to unit L1 norm."""
    f = np.asarray(features, dtype=np.float64)
    s = np.abs(f).sum(axis=-1, keepdims=True)
    return np.where(s > 0, f / np.where(s > 0, s, 1.0), f)


@dataclass
class InitialMapSpec:
    kind: str  # "linear" or "hi_kpca"
    l1_normalize: bool = False
    landmarks: np.ndarray | None = None
    projection: np.ndarray | None = None
    eigenvalue_floor: float = DEFAULT_EIGENVALUE_FLOOR

    @property
    def kpca_dim(self):
        return None if self.projection is None else self.projection.shape[1]

    def output_dim(self, d0):
        return d0 if self.kind == "linear" else self.kpca_dim

    def apply(self, features):
        """Map cell features of shape ``(..., d0)`` to initial cell maps."""
        if self.kind == "linear":
            return initial_map_linear(features)
        return apply_kpca(self, features)


def initial_map_linear(features):
    return np.array(features, dtype=np.float64)


def fit_kpca(landmarks, dim, eigenvalue_floor=DEFAULT_EIGENVALUE_FLOOR, l1=False):
    """Fit a KPCA map of the HI kernel on a set of landmark cells.

    The top ``dim`` eigenpairs ``(lam_i, v_i)`` of the landmark Gram matrix
    are kept (fewer if some fall below ``eigenvalue_floor``) and the map of a
    cell ``x`` is ``sum_j k(x, l_j) v_ij / sqrt(lam_i)``.
    """
    landmarks = np.asarray(landmarks, dtype=np.float64)
    if landmarks.ndim != 2 or landmarks.shape[0] == 0:
        raise ShapeError("landmarks must be a non-empty 2-d array")
    m = landmarks.shape[0]
    if not 1 <= dim <= m:
        raise ValidationError(f"kpca dim must be in [1, {m}], got {dim}")
    if l1:
        landmarks = l1_normalize(landmarks)
    vals, vecs = sym_eig(hi_gram(landmarks, landmarks))
    keep = np.flatnonzero(vals[:dim] >= eigenvalue_floor)
    if keep.size == 0:
        raise NumericalError("degenerate kernel: no landmark eigenvalue above the floor")
    projection = np.ascontiguousarray(vecs[:, keep] / np.sqrt(vals[keep]))
    return InitialMapSpec("hi_kpca", l1, landmarks, check_finite(projection), eigenvalue_floor)


def apply_kpca(imap, features):
    if imap.kind != "hi_kpca":
        raise ValidationError(f"apply_kpca needs a hi_kpca initial map, got {imap.kind!r}")
    f = np.asarray(features, dtype=np.float64)
    lead = f.shape[:-1]
    flat = f.reshape(-1, f.shape[-1])
    if imap.l1_normalize:
        flat = l1_normalize(flat)
    out = hi_gram(flat, imap.landmarks) @ imap.projection
    return check_finite(out.reshape(*lead, out.shape[1]))


def sample_landmarks(cells, m, rng):
    """Uniformly sample ``min(m, len(cells))`` distinct rows of ``cells``."""
    cells = np.asarray(cells, dtype=np.float64).reshape(-1, np.shape(cells)[-1])
    m = min(m, cells.shape[0])
    idx = np.sort(rng.choice(cells.shape[0], size=m, replace=False))
    return cells[idx]
