"""Unfolded context network: geometric layers followed by pooling and semantic layers.

A geometric layer maps the cell maps of one image, ``Phi_t`` of shape
``(n, d_t)``, to::

    Phi_{t+1} = [Phi_0 | g1 P_1 Phi_t | ... | g1 P_C Phi_t]     (g1 = sqrt(gamma1))

so that ``Phi_{t+1} Phi_{t+1}' = S + gamma1 sum_c P_c K_t P_c'`` with
``S = Phi_0 Phi_0'``. Images are pooled by summing their cell rows and the
semantic layers apply the same construction to the ``(P, d)`` matrix of
pooled image maps with a single image-level adjacency per layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .linalg import check_finite


@dataclass(frozen=True)
class DepthConfig:
    geo_layers: int = 2
    sem_layers: int = 2
    gamma1: float = 1.0
    gamma2: float = 1.0

    def __post_init__(self):
        if self.geo_layers < 0 or self.sem_layers < 0:
            raise ValidationError("layer counts must be nonnegative")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValidationError("gamma1 and gamma2 must be nonnegative")


@dataclass
class PerLayerContexts:
    """Untied per-layer context matrices and their fixed supports.

    ``geometric`` has shape ``(T1, C, n, n)`` and is shared by all images;
    ``semantic`` has shape ``(T2, P, P)`` over the training images.
    """

    geometric: np.ndarray
    geo_mask: np.ndarray
    semantic: np.ndarray
    sem_mask: np.ndarray

    @classmethod
    def tile(cls, geo_init, geo_mask, sem_init, sem_mask, depth):
        geo_init = np.asarray(geo_init, dtype=np.float64)
        sem_init = np.asarray(sem_init, dtype=np.float64)
        return cls(
            np.repeat(geo_init[None], depth.geo_layers, axis=0),
            np.asarray(geo_mask, dtype=bool),
            np.repeat(sem_init[None], depth.sem_layers, axis=0),
            np.asarray(sem_mask, dtype=bool),
        )

    def copy(self):
        return PerLayerContexts(self.geometric.copy(), self.geo_mask.copy(),
                                self.semantic.copy(), self.sem_mask.copy())


@dataclass
class LayerStack:
    geometric: list = field(default_factory=list)  # (P, n, d_t) per layer
    pooled: np.ndarray | None = None  # (P, d_T1)
    semantic: list = field(default_factory=list)  # (P, d_t^sem) per layer

    @property
    def final(self):
        return self.semantic[-1]


def geometric_widths(d0, n_directions, layers):
    widths = [d0]
    for _ in range(layers):
        widths.append(d0 + n_directions * widths[-1])
    return widths


def semantic_widths(d_pool, layers):
    return [d_pool * (t + 1) for t in range(layers + 1)]


def _geo_layer(phi0, phi_t, mats, scale):
    # phi: (P, n, d); mats: (C, n, n) -> (P, n, d0 + C d)
    n_img, n, d = phi_t.shape
    msg = np.einsum("cij,pjd->picd", mats, phi_t).reshape(n_img, n, mats.shape[0] * d)
    return np.concatenate([phi0, scale * msg], axis=2)


def forward_geometric(phi0, geometric, depth):
    """Run the geometric context layers.

    Parameters
    ----------
    phi0 : ndarray, shape (n, d0) or (P, n, d0)
        Initial cell maps of one image or of a batch of images.
    geometric : ndarray, shape (T1, C, n, n)
        Per-layer directional context matrices.

    Returns
    -------
    list of ndarray
        ``[Phi_0, ..., Phi_T1]`` with the same leading shape as ``phi0``.
    """
    phi0 = np.asarray(phi0, dtype=np.float64)
    single = phi0.ndim == 2
    batch = phi0[None] if single else phi0
    geometric = np.asarray(geometric, dtype=np.float64)
    n = batch.shape[1]
    if len(geometric) < depth.geo_layers:
        raise ShapeError(f"need {depth.geo_layers} geometric layers, got {len(geometric)}")
    scale = np.sqrt(depth.gamma1)
    acts = [batch]
    for t in range(depth.geo_layers):
        mats = geometric[t]
        if mats.shape[1:] != (n, n):
            raise ShapeError(f"geometric layer {t}: context matrices are {mats.shape[1:]}, cells need {(n, n)}")
        acts.append(_geo_layer(batch, acts[-1], mats, scale))
    check_finite(acts[-1], "geometric forward")
    return [a[0] for a in acts] if single else acts


def pool(activations):
    """Sum the cell rows of an image (or of each image in a batch)."""
    return np.asarray(activations, dtype=np.float64).sum(axis=-2)


def forward_semantic(pooled, semantic, depth):
    """Run the semantic context layers over pooled image maps ``(P, d)``."""
    pooled = np.asarray(pooled, dtype=np.float64)
    semantic = np.asarray(semantic, dtype=np.float64)
    n_img = pooled.shape[0]
    if len(semantic) < depth.sem_layers:
        raise ShapeError(f"need {depth.sem_layers} semantic layers, got {len(semantic)}")
    scale = np.sqrt(depth.gamma2)
    acts = [pooled]
    for t in range(depth.sem_layers):
        mat = semantic[t]
        if mat.shape != (n_img, n_img):
            raise ShapeError(f"semantic layer {t}: adjacency is {mat.shape}, images need {(n_img, n_img)}")
        acts.append(np.concatenate([pooled, scale * (mat @ acts[-1])], axis=1))
    check_finite(acts[-1], "semantic forward")
    return acts


def forward(phi0, contexts, depth):
    """Full forward pass over a batch ``(P, n, d0)`` of initial cell maps."""
    stack = LayerStack()
    stack.geometric = forward_geometric(np.asarray(phi0, dtype=np.float64), contexts.geometric, depth)
    if stack.geometric[0].ndim != 3:
        raise ShapeError("forward expects a batch of images of shape (P, n, d0)")
    stack.pooled = pool(stack.geometric[-1])
    stack.semantic = forward_semantic(stack.pooled, contexts.semantic, depth)
    return stack


def _check_symmetric(s, name):
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"{name} must be square, got {s.shape}")
    scale = max(1.0, float(np.max(np.abs(s)))) if s.size else 1.0
    if s.size and np.max(np.abs(s - s.T)) > 1e-9 * scale:
        raise ShapeError(f"{name} must be symmetric")
    return s


def fixed_point_kernel_geo(s, geometric, depth, all_layers=False):
    """Unrolled kernel recursion ``K <- S + gamma1 sum_c P_c K P_c'`` (T1 steps)."""
    s = _check_symmetric(s, "S")
    ks = [s]
    for t in range(depth.geo_layers):
        mats = np.asarray(geometric[t], dtype=np.float64)
        ks.append(s + depth.gamma1 * sum(p @ ks[-1] @ p.T for p in mats))
    return ks if all_layers else ks[-1]


def fixed_point_kernel_sem(s_tilde, semantic, depth, all_layers=False):
    """Unrolled kernel recursion ``K <- S~ + gamma2 P K P'`` (T2 steps)."""
    s = _check_symmetric(s_tilde, "S~")
    ks = [s]
    for t in range(depth.sem_layers):
        p = np.asarray(semantic[t], dtype=np.float64)
        ks.append(s + depth.gamma2 * (p @ ks[-1] @ p.T))
    return ks if all_layers else ks[-1]


def _objective(k, s, mats, alpha, beta):
    k = np.asarray(k, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if k.shape != s.shape or k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ShapeError(f"K {k.shape} and S {s.shape} must be equal square shapes")
    for p in mats:
        if p.shape != k.shape:
            raise ShapeError(f"context matrix {p.shape} does not match K {k.shape}")
    context = sum(np.trace(k @ p @ k.T @ p.T) for p in mats)
    return float(-np.trace(k @ s.T) - alpha * context + 0.5 * beta * np.sum(k * k))


def objective_geo(k, s, contexts, alpha1, beta1):
    """Geometric kernel objective
    ``tr(-K S') - alpha1 sum_c tr(K P_c K' P_c') + beta1/2 ||K||^2``.

    ``contexts`` is the ``(C, n, n)`` stack of adjacencies. Diagnostic only.
    """
    return _objective(k, s, np.asarray(contexts, dtype=np.float64), alpha1, beta1)


def objective_sem(k, s_tilde, p_i, alpha2, beta2):
    """Semantic counterpart of :func:`objective_geo` with a single adjacency."""
    return _objective(k, s_tilde, [np.asarray(p_i, dtype=np.float64)], alpha2, beta2)
