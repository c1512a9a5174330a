"""Seeded synthetic datasets used by the tests and the ablation check."""

from __future__ import annotations

import numpy as np

from .context_graph import GridSpec
from .data import Dataset

REGIONS = ("top", "bottom", "left", "right")


def random_dataset(n_images=6, grid=(3, 4), feature_dim=5, n_concepts=3, seed=0, histograms=True):
    """Uniform random cell features and random multi-label ground truth."""
    rng = np.random.default_rng(seed)
    g = GridSpec(*grid)
    feats = rng.random((n_images, g.n_cells, feature_dim))
    labels = np.where(rng.random((n_images, n_concepts)) < 0.5, 1.0, -1.0)
    return Dataset(g, feats, labels, [f"img{p:03d}" for p in range(n_images)],
                   [f"c{k}" for k in range(n_concepts)], histograms)


def _in_region(region, row, col, grid):
    if region == "top":
        return row < grid.grid_rows // 2
    if region == "bottom":
        return row >= grid.grid_rows - grid.grid_rows // 2
    if region == "left":
        return col < grid.grid_cols // 2
    return col >= grid.grid_cols - grid.grid_cols // 2


def planted_context_dataset(n_train=60, n_test=60, grid=(4, 4), n_background=1, n_groups=12,
                            swap_prob=0.5, noise=0.15, n_links=5, link_purity=0.8, seed=0):
    """Images whose labels depend on where objects sit, not on what they contain.

    Every image holds the same multiset of visual words: one cell per object
    word ``o_k`` and background words elsewhere, so context-free sums of cell
    histograms carry no label information beyond noise. Images come in
    groups; each group has a layout prototype and concept ``k`` is present
    for the whole group when the prototype puts ``o_k`` in region
    ``REGIONS[k]`` (top half, bottom half, left half, right half). Each
    member image re-draws every object's cell with probability
    ``swap_prob``, so a single image is only noisy evidence of its group's
    labels. Cell histograms are one-hot words plus uniform noise,
    L1-normalized.

    Every image also carries ``n_links`` semantic links to distinct training
    images (never itself); each link targets a member of the same group with
    probability ``link_purity`` and a uniformly drawn training image
    otherwise.

    Returns
    -------
    (train, test) : tuple of Dataset
        Both splits draw from the same groups.
    """
    rng = np.random.default_rng(seed)
    g = GridSpec(*grid)
    n_obj = len(REGIONS)
    vocab = n_obj + n_background
    rows, cols = g.coords()
    protos = [rng.choice(g.n_cells, size=n_obj, replace=False) for _ in range(n_groups)]
    proto_labels = np.array([[1.0 if _in_region(REGIONS[k], rows[c[k]], cols[c[k]], g) else -1.0
                              for k in range(n_obj)] for c in protos])

    def make(n, offset):
        feats = np.zeros((n, g.n_cells, vocab))
        labels = np.zeros((n, n_obj))
        groups = rng.integers(n_groups, size=n)
        for p in range(n):
            cells = protos[groups[p]].copy()
            for k in range(n_obj):
                if rng.random() < swap_prob:
                    free = np.setdiff1d(np.arange(g.n_cells), np.delete(cells, k))
                    cells[k] = rng.choice(free)
            words = n_obj + rng.integers(n_background, size=g.n_cells)
            words[cells] = np.arange(n_obj)
            feats[p, np.arange(g.n_cells), words] = 1.0
            labels[p] = proto_labels[groups[p]]
        feats += noise * rng.random(feats.shape)
        feats /= feats.sum(axis=2, keepdims=True)
        ids = [f"img{offset + p:04d}" for p in range(n)]
        return Dataset(g, feats, labels, ids, [f"obj{k}_{REGIONS[k]}" for k in range(n_obj)], True), groups

    train, train_groups = make(n_train, 0)
    test, test_groups = make(n_test, n_train)
    for split, groups in ((train, train_groups), (test, test_groups)):
        for p, img in enumerate(split.ids):
            chosen = set()
            while len(chosen) < min(n_links, n_train - 1):
                pool = np.flatnonzero(train_groups == groups[p]) if rng.random() < link_purity else np.arange(n_train)
                pool = [t for t in pool if train.ids[t] != img and t not in chosen]
                if pool:
                    chosen.add(int(rng.choice(pool)))
            split.links.extend((img, train.ids[t]) for t in sorted(chosen))
    return train, test
