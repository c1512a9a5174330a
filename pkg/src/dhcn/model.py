"""Trained model: inference over new images and JSON persistence.

Arrays are embedded as base64 of their raw little-endian bytes so that a
save/load round trip is bit-exact.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .context_graph import GeometricContext, GridSpec, _similarity, knn_support
from .errors import ValidationError
from .feature_maps import InitialMapSpec
from .network import DepthConfig, PerLayerContexts, forward_geometric, forward_semantic, pool
from .svm import SvmModel, score

FORMAT_VERSION = 1


@dataclass
class DhcnModel:
    mode: str
    concepts: list
    grid: GridSpec
    radius: float
    directions: tuple
    depth: DepthConfig
    init_map: InitialMapSpec
    contexts: PerLayerContexts
    svm: SvmModel
    train_ids: list = field(default_factory=list)
    # pooled geometric maps of the training images under the learned contexts
    train_pooled: np.ndarray | None = None
    # pooled maps under the initial contexts; used to find neighbors of new images
    train_init_pooled: np.ndarray | None = None
    semantic_source: str = "knn"
    semantic_k: int = 0
    similarity: str = "cosine"
    provenance: dict = field(default_factory=dict)

    def initial_geometric(self):
        geo = GeometricContext.build(self.grid, self.radius, self.directions)
        return np.repeat(geo.matrices[None], self.depth.geo_layers, axis=0)

    def initial_maps(self, features):
        return self.init_map.apply(features)

    def _semantic_rows(self, new_init_pooled, new_ids, links):
        """Adjacency rows attaching unseen images to the training images."""
        n_train = len(self.train_ids)
        if self.semantic_source == "links":
            index = {img: i for i, img in enumerate(self.train_ids)}
            mask = np.zeros((len(new_ids), n_train), dtype=bool)
            pos = {img: q for q, img in enumerate(new_ids)}
            for src, dst in links:
                if src in pos and dst in index:
                    mask[pos[src], index[dst]] = True
        else:
            k = min(self.semantic_k, n_train)
            both = np.vstack([new_init_pooled, self.train_init_pooled])
            sim = _similarity(both, self.similarity)[: len(new_ids), len(new_ids):]
            mask = knn_support(sim, k, exclude_self=False)
        sums = mask.sum(axis=1, keepdims=True)
        return np.where(sums > 0, mask / np.maximum(sums, 1), 0.0)

    def final_maps(self, features, ids=None, links=()):
        """Final image maps of shape ``(Q, d_final)``.

        Images whose id matches a training image reuse that image's learned
        semantic row. Other images point to training images only: their
        k nearest neighbors under the similarity used at training time (or
        their declared links), with uniform weights rescaled to the mean
        row sum of each learned semantic layer.
        """
        features = np.asarray(features, dtype=np.float64)
        n_new = features.shape[0]
        ids = [f"_new{q}" for q in range(n_new)] if ids is None else list(ids)
        if n_new == 0:
            width = self.svm.width
            return np.zeros((0, width))
        phi0 = self.initial_maps(features)
        pooled = pool(forward_geometric(phi0, self.contexts.geometric, self.depth)[-1])
        if self.depth.sem_layers == 0:
            return pooled
        train_pos = {img: i for i, img in enumerate(self.train_ids)}
        seen = [q for q, img in enumerate(ids) if img in train_pos]
        unseen = [q for q, img in enumerate(ids) if img not in train_pos]
        n_train = len(self.train_ids)
        out = np.zeros((n_new, self.svm.width))
        train_acts = forward_semantic(self.train_pooled, self.contexts.semantic, self.depth)
        for q in seen:
            out[q] = train_acts[-1][train_pos[ids[q]]]
        if unseen:
            init_pooled = None
            if self.semantic_source != "links":
                init_pooled = pool(forward_geometric(phi0[unseen], self.initial_geometric(), self.depth)[-1])
            rows = self._semantic_rows(init_pooled, [ids[q] for q in unseen], links)
            m = len(unseen)
            all_pooled = np.vstack([self.train_pooled, pooled[unseen]])
            ext = np.zeros((self.depth.sem_layers, n_train + m, n_train + m))
            for t in range(self.depth.sem_layers):
                learned = self.contexts.semantic[t]
                ext[t, :n_train, :n_train] = learned
                ext[t, n_train:, :n_train] = rows * (learned.sum() / max(n_train, 1))
            acts = forward_semantic(all_pooled, ext, self.depth)
            out[unseen] = acts[-1][n_train:]
        return out

    def predict_scores(self, features, ids=None, links=()):
        return score(self.svm, self.final_maps(features, ids, links))


def _enc(a):
    a = np.asarray(a)
    if a.dtype == bool:
        a = a.astype(np.uint8)
        tag = "bool"
    else:
        a = a.astype("<f8")
        tag = "<f8"
    return {"dtype": tag, "shape": list(a.shape), "data": base64.b64encode(np.ascontiguousarray(a).tobytes()).decode("ascii")}


def _dec(doc):
    if doc is None:
        return None
    raw = base64.b64decode(doc["data"], validate=True)
    if doc["dtype"] == "bool":
        arr = np.frombuffer(raw, dtype=np.uint8).astype(bool)
    elif doc["dtype"] == "<f8":
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    else:
        raise ValidationError(f"unsupported array dtype {doc['dtype']!r}")
    shape = tuple(doc["shape"])
    if arr.size != int(np.prod(shape)):
        raise ValidationError(f"array payload has {arr.size} values, shape {shape} needs {int(np.prod(shape))}")
    return arr.reshape(shape)


def model_to_dict(model):
    im = model.init_map
    return {
        "format_version": FORMAT_VERSION,
        "mode": model.mode,
        "concepts": list(model.concepts),
        "grid": [model.grid.grid_rows, model.grid.grid_cols],
        "radius": model.radius,
        "directions": list(model.directions),
        "depth": {
            "geo_layers": model.depth.geo_layers,
            "sem_layers": model.depth.sem_layers,
            "gamma1": model.depth.gamma1,
            "gamma2": model.depth.gamma2,
        },
        "init_map": {
            "kind": im.kind,
            "l1_normalize": im.l1_normalize,
            "eigenvalue_floor": im.eigenvalue_floor,
            "landmarks": None if im.landmarks is None else _enc(im.landmarks),
            "projection": None if im.projection is None else _enc(im.projection),
        },
        "contexts": {
            "geometric": _enc(model.contexts.geometric),
            "geo_mask": _enc(model.contexts.geo_mask),
            "semantic": _enc(model.contexts.semantic),
            "sem_mask": _enc(model.contexts.sem_mask),
        },
        "semantic": {
            "source": model.semantic_source,
            "k": model.semantic_k,
            "similarity": model.similarity,
            "train_ids": list(model.train_ids),
            "train_pooled": None if model.train_pooled is None else _enc(model.train_pooled),
            "train_init_pooled": None if model.train_init_pooled is None else _enc(model.train_init_pooled),
        },
        "svm": {
            "weights": _enc(model.svm.weights),
            "c_k": _enc(model.svm.c_k),
            "c_pos": _enc(model.svm.c_pos),
        },
        "provenance": model.provenance,
    }


def model_from_dict(doc):
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError(f"model format version {version!r} is not supported (expected {FORMAT_VERSION})")
    try:
        im = doc["init_map"]
        ctx = doc["contexts"]
        sem = doc["semantic"]
        d = doc["depth"]
        return DhcnModel(
            mode=doc["mode"],
            concepts=list(doc["concepts"]),
            grid=GridSpec(*doc["grid"]),
            radius=doc["radius"],
            directions=tuple(doc["directions"]),
            depth=DepthConfig(d["geo_layers"], d["sem_layers"], d["gamma1"], d["gamma2"]),
            init_map=InitialMapSpec(im["kind"], im["l1_normalize"], _dec(im["landmarks"]),
                                    _dec(im["projection"]), im["eigenvalue_floor"]),
            contexts=PerLayerContexts(_dec(ctx["geometric"]), _dec(ctx["geo_mask"]),
                                      _dec(ctx["semantic"]), _dec(ctx["sem_mask"])),
            svm=SvmModel(_dec(doc["svm"]["weights"]), _dec(doc["svm"]["c_k"]), _dec(doc["svm"]["c_pos"])),
            train_ids=list(sem["train_ids"]),
            train_pooled=_dec(sem["train_pooled"]),
            train_init_pooled=_dec(sem["train_init_pooled"]),
            semantic_source=sem["source"],
            semantic_k=sem["k"],
            similarity=sem["similarity"],
            provenance=doc.get("provenance", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed model document: {exc!r}") from exc


def save_model(model, path):
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n")


def load_model(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read model ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: truncated or corrupt model file ({exc.msg})") from exc
    return model_from_dict(doc)
