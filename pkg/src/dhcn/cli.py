"""Command-line interface: ``dhcn {train,predict,evaluate,gradcheck,inspect,make-synthetic}``.

Exit codes: 0 success, 1 usage, 2 validation, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import load_dataset, write_dataset
from .errors import DhcnError, NumericalError, ValidationError
from .metrics import evaluate as evaluate_metrics
from .model import load_model, save_model
from .network import DepthConfig, geometric_widths, semantic_widths
from .svm import decide
from .training import TrainConfig, gradcheck_dataset, train

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump(doc, out):
    text = json.dumps(doc, indent=2) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def build_parser():
    parser = _Parser(prog="dhcn", description="Deep hierarchical context networks for multi-label image annotation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--mode", choices=["cf", "dfcn", "dlcn", "dhcn"], default="dhcn")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--semantic-k", type=int, default=10)
    p.add_argument("--semantic-links", action="store_true",
                   help="use the manifest's semantic_links instead of kNN neighbors")
    p.add_argument("--similarity", choices=["cosine", "dot"], default="cosine")
    p.add_argument("--geo-layers", type=int, default=2)
    p.add_argument("--sem-layers", type=int, default=2)
    p.add_argument("--gamma1", type=float, default=1.0)
    p.add_argument("--gamma2", type=float, default=1.0)
    p.add_argument("--init-map", choices=["linear", "hi-kpca"], default="linear")
    p.add_argument("--kpca-dim", type=int, default=64)
    p.add_argument("--landmarks", type=int, default=256)
    p.add_argument("--svm-c", type=float, default=1.0)
    p.add_argument("--balance-classes", action="store_true")
    p.add_argument("--epochs", type=int, default=500, help="max SVM passes")
    p.add_argument("--tol", type=float, default=1e-10, help="SVM dual-change tolerance")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--context-steps", type=int, default=1)
    p.add_argument("--outer-iters", type=int, default=100)
    p.add_argument("--renormalize-rows", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="write line-delimited JSON training records here (default: stderr)")

    p = sub.add_parser("predict", help="score the images of a manifest")
    p.add_argument("model")
    p.add_argument("manifest")
    p.add_argument("--out", help="output file (default: stdout)")

    p = sub.add_parser("evaluate", help="compare predictions against a manifest's labels")
    p.add_argument("predictions")
    p.add_argument("manifest")
    p.add_argument("--out", help="output file (default: stdout)")

    p = sub.add_parser("gradcheck", help="finite-difference check of the context gradients")
    p.add_argument("manifest")
    p.add_argument("--geo-layers", type=int, default=2)
    p.add_argument("--sem-layers", type=int, default=2)
    p.add_argument("--semantic-k", type=int, default=3)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--loss", choices=["hinge", "smooth"], default="hinge")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("inspect", help="summarize a model and its strongest context links")
    p.add_argument("model")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out")

    p = sub.add_parser("make-synthetic", help="write the planted-context train/test manifests")
    p.add_argument("directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=60)
    p.add_argument("--n-test", type=int, default=60)
    return parser


def _train(args):
    dataset = load_dataset(args.manifest)
    cfg = TrainConfig(
        mode=args.mode, outer_iters=args.outer_iters, context_lr=args.lr,
        context_steps_per_outer=args.context_steps, grad_clip=args.grad_clip, seed=args.seed,
        renormalize_rows=args.renormalize_rows, radius=args.radius, semantic_k=args.semantic_k,
        semantic_source="links" if args.semantic_links else "knn", similarity=args.similarity,
        init_map=args.init_map.replace("-", "_"), kpca_dim=args.kpca_dim, landmarks=args.landmarks,
        svm_c=args.svm_c, balance_classes=args.balance_classes, svm_epochs=args.epochs, svm_tol=args.tol,
    )
    depth = DepthConfig(args.geo_layers, args.sem_layers, args.gamma1, args.gamma2)
    sink = open(args.log, "w") if args.log else sys.stderr
    try:
        result = train(dataset, cfg, depth, on_record=lambda r: sink.write(json.dumps(r) + "\n"))
    finally:
        if args.log:
            sink.close()
    save_model(result.model, args.out)
    return EXIT_OK


def _predict(args):
    model = load_model(args.model)
    dataset = load_dataset(args.manifest)
    if dataset.n_images and dataset.feature_dim != _model_input_dim(model):
        raise ValidationError(f"{args.manifest}: feature_dim {dataset.feature_dim} does not match the model "
                              f"({_model_input_dim(model)})")
    if dataset.n_images and dataset.grid != model.grid:
        raise ValidationError(f"{args.manifest}: grid {dataset.grid} does not match the model grid {model.grid}")
    scores = model.predict_scores(dataset.features, dataset.ids, dataset.links)
    keep = decide(scores)
    doc = {
        "concepts": list(model.concepts),
        "predictions": [
            {"id": img, "keywords": [c for k, c in enumerate(model.concepts) if keep[p, k]],
             "scores": [float(v) for v in scores[p]]}
            for p, img in enumerate(dataset.ids)
        ],
    }
    _dump(doc, args.out)
    return EXIT_OK


def _model_input_dim(model):
    if model.init_map.kind == "linear":
        return model.provenance["feature_dim"]
    return model.init_map.landmarks.shape[1]


def _evaluate(args):
    try:
        preds = json.loads(Path(args.predictions).read_text())
    except OSError as exc:
        raise ValidationError(f"{args.predictions}: cannot read predictions ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{args.predictions}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    dataset = load_dataset(args.manifest)
    if list(preds.get("concepts", [])) != list(dataset.concepts):
        raise ValidationError(f"concept lists differ: predictions have {preds.get('concepts')}, "
                              f"manifest has {dataset.concepts}")
    by_id = {p["id"]: p for p in preds.get("predictions", [])}
    missing = [img for img in dataset.ids if img not in by_id]
    if missing:
        raise ValidationError(f"{args.predictions}: no prediction for image {missing[0]!r}")
    concepts = dataset.concepts
    scores = np.array([by_id[img]["scores"] for img in dataset.ids], dtype=np.float64).reshape(-1, len(concepts))
    pred = np.array([[c in set(by_id[img]["keywords"]) for c in concepts] for img in dataset.ids],
                    dtype=bool).reshape(-1, len(concepts))
    report = evaluate_metrics(scores, dataset.labels > 0, pred)
    _dump(report.as_dict(concepts), args.out)
    return EXIT_OK


def _gradcheck(args):
    dataset = load_dataset(args.manifest)
    depth = DepthConfig(args.geo_layers, args.sem_layers)
    cfg = TrainConfig(seed=args.seed, radius=args.radius, semantic_k=min(args.semantic_k, dataset.n_images - 1))
    report = gradcheck_dataset(dataset, depth, seed=args.seed, loss=args.loss, cfg=cfg)
    _dump(report.as_dict(), args.out)
    return EXIT_OK if report.passed else EXIT_NUMERIC


def _inspect(args):
    model = load_model(args.model)
    ctx = model.contexts
    d0 = model.init_map.output_dim(_model_input_dim(model))
    geo_w = geometric_widths(d0, len(model.directions), model.depth.geo_layers)
    doc = {
        "mode": model.mode,
        "concepts": list(model.concepts),
        "grid": [model.grid.grid_rows, model.grid.grid_cols],
        "radius": model.radius,
        "depth": vars(model.depth),
        "init_map": {"kind": model.init_map.kind, "kpca_dim": model.init_map.kpca_dim},
        "geometric_widths": geo_w,
        "semantic_widths": semantic_widths(geo_w[-1], model.depth.sem_layers),
        "final_E": model.provenance.get("final_E"),
        "geometric_links": [],
        "semantic_links": [],
    }
    cols = model.grid.grid_cols
    for t in range(ctx.geometric.shape[0]):
        for c, name in enumerate(model.directions):
            mat = ctx.geometric[t, c]
            for i, j in _top_entries(mat, ctx.geo_mask[c], args.top):
                doc["geometric_links"].append({"layer": t, "direction": name, "from": [i // cols, i % cols],
                                               "to": [j // cols, j % cols], "weight": float(mat[i, j])})
    for t in range(ctx.semantic.shape[0]):
        mat = ctx.semantic[t]
        for i, j in _top_entries(mat, ctx.sem_mask, args.top):
            doc["semantic_links"].append({"layer": t, "from": model.train_ids[i], "to": model.train_ids[j],
                                          "weight": float(mat[i, j])})
    _dump(doc, args.out)
    return EXIT_OK


def _top_entries(mat, mask, top):
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    vals = mat.ravel()[idx]
    order = np.lexsort((idx, -vals))[:top]
    return [divmod(int(f), mat.shape[1]) for f in idx[order]]


def _make_synthetic(args):
    from .synthetic import planted_context_dataset

    train_set, test_set = planted_context_dataset(n_train=args.n_train, n_test=args.n_test, seed=args.seed)
    out = Path(args.directory)
    write_dataset(train_set, out, "train.json")
    write_dataset(test_set, out, "test.json")
    return EXIT_OK


COMMANDS = {
    "train": _train,
    "predict": _predict,
    "evaluate": _evaluate,
    "gradcheck": _gradcheck,
    "inspect": _inspect,
    "make-synthetic": _make_synthetic,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"dhcn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DhcnError as exc:
        print(f"dhcn: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
