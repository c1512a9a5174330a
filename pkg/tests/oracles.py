"""Independent reference computations shared by the test modules."""

import itertools

import numpy as np

from dhcn.context_graph import GeometricContext, load_semantic_links
from dhcn.network import DepthConfig, PerLayerContexts
from dhcn.synthetic import random_dataset


def reference_instance(seed=0, depth=DepthConfig(2, 2, 1.0, 1.0), perturb=0.3):
    """The 6-image, 3x4-grid, d0=5 instance with randomly perturbed contexts.

    Geometric supports come from radius 1; the semantic support links each
    image to the next two (cyclically). Weights are positive random values
    on the supports, different in each layer.
    """
    data = random_dataset(n_images=6, grid=(3, 4), feature_dim=5, n_concepts=3, seed=seed)
    rng = np.random.default_rng(seed + 1)
    geo = GeometricContext.build(data.grid, 1.0)
    links = [(data.ids[p], data.ids[(p + s) % 6]) for p in range(6) for s in (1, 2)]
    sem, sem_mask = load_semantic_links(links, data.ids)
    ctx = PerLayerContexts.tile(geo.matrices, geo.masks, sem, sem_mask, depth)
    ctx.geometric = (ctx.geometric + perturb * rng.random(ctx.geometric.shape)) * ctx.geo_mask
    ctx.semantic = (ctx.semantic + perturb * rng.random(ctx.semantic.shape)) * ctx.sem_mask
    return data, data.features.copy(), ctx, depth


def block_diag_geometric(geometric, n_images):
    """Context matrices acting on all cells of all images at once."""
    eye = np.eye(n_images)
    return np.array([[np.kron(eye, p) for p in layer] for layer in geometric])


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def brute_force_ap(scores, truth):
    """AP from the definition, finding the ranking by exhaustive search."""
    n = len(scores)
    for perm in itertools.permutations(range(n)):
        ok = all((scores[a] > scores[b]) or (scores[a] == scores[b] and a < b) for a, b in zip(perm, perm[1:]))
        if ok:
            break
    hits = 0
    precisions = []
    for r, p in enumerate(perm, start=1):
        if truth[p]:
            hits += 1
            precisions.append(hits / r)
    return sum(precisions) / len(precisions)


def naive_objective(k, s, mats, alpha, beta):
    """Kernel objective from scalar sums, no matrix products."""
    n = k.shape[0]
    val = -sum(k[i, j] * s[i, j] for i in range(n) for j in range(n))
    for p in mats:
        # tr(K P K' P') = sum_{ijab} K_ij P_ja K_ba P_ib
        val -= alpha * sum(k[i, j] * p[j, a] * k[b, a] * p[i, b]
                           for i in range(n) for j in range(n) for a in range(n) for b in range(n))
    val += 0.5 * beta * sum(k[i, j] ** 2 for i in range(n) for j in range(n))
    return val
