"""Dataset manifests and feature files.

A manifest is a JSON document::

    {
      "grid_rows": 4, "grid_cols": 4, "feature_dim": 8,
      "features_are_histograms": true,
      "concepts": ["sky", "sea"],
      "images": [
        {"id": "img0", "feature_file": "feat/img0.txt",
         "labels": ["sky"], "semantic_links": ["img3"]}
      ]
    }

Feature files hold one grid cell per line (row-major cell order) with
``feature_dim`` numbers separated by whitespace or commas. Relative paths
are resolved against the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .context_graph import GridSpec
from .errors import ValidationError


@dataclass
class Dataset:
    grid: GridSpec
    features: np.ndarray  # (P, n, d0)
    labels: np.ndarray  # (P, K) in {-1, +1}
    ids: list
    concepts: list
    histograms: bool = False
    links: list = field(default_factory=list)  # (source_id, target_id) pairs

    @property
    def n_images(self):
        return len(self.ids)

    @property
    def feature_dim(self):
        return self.features.shape[2]

    def subset(self, index):
        index = list(index)
        keep = {self.ids[i] for i in index}
        return Dataset(
            self.grid,
            self.features[index],
            self.labels[index],
            [self.ids[i] for i in index],
            list(self.concepts),
            self.histograms,
            [(a, b) for a, b in self.links if a in keep],
        )


def read_feature_file(path, n_rows, width):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read feature file ({exc.strerror})") from exc
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values = [float(v) for v in line.replace(",", " ").split()]
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from exc
        if len(values) != width:
            raise ValidationError(f"{path}:{lineno}: expected {width} values, got {len(values)}")
        rows.append(values)
    if len(rows) != n_rows:
        raise ValidationError(f"{path}: expected {n_rows} rows, got {len(rows)}")
    out = np.array(rows, dtype=np.float64).reshape(n_rows, width)
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{path}: non-finite feature values")
    return out


def _require(doc, key, where):
    if key not in doc:
        raise ValidationError(f"{where}: missing field {key!r}")
    return doc[key]


def load_dataset(manifest_path):
    """Parse a manifest and all of its feature files."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise ValidationError(f"{manifest_path}: cannot read manifest ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{manifest_path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    where = str(manifest_path)
    grid = GridSpec(int(_require(doc, "grid_rows", where)), int(_require(doc, "grid_cols", where)))
    width = int(_require(doc, "feature_dim", where))
    concepts = list(_require(doc, "concepts", where))
    if len(set(concepts)) != len(concepts):
        raise ValidationError(f"{where}: duplicate concept names")
    col = {c: k for k, c in enumerate(concepts)}
    images = _require(doc, "images", where)
    ids, feats, labels, links = [], [], [], []
    for pos, entry in enumerate(images):
        img_where = f"{where}: images[{pos}]"
        img_id = str(_require(entry, "id", img_where))
        if img_id in ids:
            raise ValidationError(f"{img_where}: duplicate image id {img_id!r}")
        ids.append(img_id)
        feature_file = manifest_path.parent / _require(entry, "feature_file", img_where)
        feats.append(read_feature_file(feature_file, grid.n_cells, width))
        row = -np.ones(len(concepts))
        for name in entry.get("labels", []):
            if name not in col:
                raise ValidationError(f"{img_where}: label {name!r} is not a declared concept")
            row[col[name]] = 1.0
        labels.append(row)
        links.extend((img_id, str(dst)) for dst in entry.get("semantic_links", []))
    histograms = bool(doc.get("features_are_histograms", False))
    features = np.stack(feats) if feats else np.zeros((0, grid.n_cells, width))
    if histograms and np.any(features < 0):
        raise ValidationError(f"{where}: histogram features must be nonnegative")
    return Dataset(grid, features, np.array(labels).reshape(len(ids), len(concepts)), ids, concepts, histograms, links)


def write_dataset(dataset, directory, name="manifest.json"):
    """Write ``dataset`` as a manifest plus one feature file per image."""
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    out_links = {}
    for src, dst in dataset.links:
        out_links.setdefault(src, []).append(dst)
    images = []
    for p, img_id in enumerate(dataset.ids):
        rel = f"features/{img_id}.txt"
        np.savetxt(directory / rel, dataset.features[p], fmt="%.17g")
        entry = {
            "id": img_id,
            "feature_file": rel,
            "labels": [c for k, c in enumerate(dataset.concepts) if dataset.labels[p, k] > 0],
        }
        if img_id in out_links:
            entry["semantic_links"] = out_links[img_id]
        images.append(entry)
    doc = {
        "grid_rows": dataset.grid.grid_rows,
        "grid_cols": dataset.grid.grid_cols,
        "feature_dim": int(dataset.features.shape[2]),
        "features_are_histograms": bool(dataset.histograms),
        "concepts": list(dataset.concepts),
        "images": images,
    }
    path = directory / name
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path
