"""End-to-end training of the context matrices and the SVM head.

Training alternates two steps: with the contexts fixed the per-class SVMs
are refit; with the SVMs fixed the hinge loss ``E`` is backpropagated
through the semantic layers, the pooling and the geometric layers and the
context matrices take plain gradient steps on their fixed supports.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .context_graph import GeometricContext, build_semantic_adjacency, load_semantic_links
from .errors import NumericalError, ShapeError, ValidationError
from .feature_maps import DEFAULT_LANDMARKS, InitialMapSpec, fit_kpca, sample_landmarks
from .model import DhcnModel
from .network import DepthConfig, PerLayerContexts, forward, forward_geometric, pool
from .svm import SvmModel, balanced_c_pos, example_weights, hinge_objective, train_svms

log = logging.getLogger(__name__)

MODES = ("cf", "dfcn", "dlcn", "dhcn")


@dataclass
class TrainConfig:
    mode: str = "dhcn"
    outer_iters: int = 100
    context_lr: float = 1e-3
    context_steps_per_outer: int = 1
    grad_clip: float | None = None
    seed: int = 0
    renormalize_rows: bool = False
    radius: float = 1.0
    semantic_k: int = 10
    semantic_source: str = "knn"  # or "links"
    similarity: str = "cosine"
    init_map: str = "linear"  # or "hi_kpca"
    kpca_dim: int = 64
    landmarks: int = DEFAULT_LANDMARKS
    svm_c: float = 1.0
    balance_classes: bool = False
    svm_epochs: int = 500
    svm_tol: float = 1e-10

    def __post_init__(self):
        self.mode = self.mode.lower()
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.outer_iters < 1:
            raise ValidationError("outer_iters must be >= 1")
        if not self.context_lr > 0:
            raise ValidationError("context_lr must be > 0")
        if self.semantic_source not in ("knn", "links"):
            raise ValidationError(f"unknown semantic source {self.semantic_source!r}")
        if self.init_map not in ("linear", "hi_kpca"):
            raise ValidationError(f"unknown initial map {self.init_map!r}")


@dataclass
class GradientBundle:
    geometric: np.ndarray  # same shape as contexts.geometric
    semantic: np.ndarray  # same shape as contexts.semantic
    loss: float = float("nan")
    pooled: np.ndarray | None = None  # dE/d pooled maps, before the geometric layers

    def global_norm(self, geometric=True, semantic=True):
        total = 0.0
        if geometric:
            total += float(np.sum(self.geometric ** 2))
        if semantic:
            total += float(np.sum(self.semantic ** 2))
        return float(np.sqrt(total))


def grad_wrt_final_map(model, maps, labels):
    """Subgradient of the hinge objective with respect to each image's final map.

    Row ``p`` is ``-sum_k C_k s_pk Y_pk w_k`` over the classes whose hinge is
    active (``1 - Y_pk f_k(phi_p) > 0``); the bias coordinate is dropped.
    """
    maps = np.asarray(maps, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if maps.ndim != 2 or maps.shape[1] != model.width or y.shape != (maps.shape[0], model.n_classes):
        raise ShapeError(f"maps {maps.shape} / labels {y.shape} do not match an SVM head of "
                         f"{model.n_classes} classes over width {model.width}")
    scores = maps @ model.weights[:, :-1].T + model.weights[:, -1]
    active = (1.0 - y * scores) > 0
    coef = -example_weights(y, model.c_k, model.c_pos) * y * active
    return coef @ model.weights[:, :-1]


def backprop_contexts(stack, contexts, grad_final, depth):
    """Chain rule from ``dE/d Phi_final`` down to every context matrix.

    Returns a :class:`GradientBundle` whose gradients vanish outside the
    support masks.
    """
    grad = np.asarray(grad_final, dtype=np.float64)
    if len(stack.semantic) != depth.sem_layers + 1 or len(stack.geometric) != depth.geo_layers + 1:
        raise ShapeError("layer cache does not match the depth configuration")
    if grad.shape != stack.semantic[-1].shape:
        raise ShapeError(f"final gradient {grad.shape} does not match final maps {stack.semantic[-1].shape}")

    g2 = np.sqrt(depth.gamma2)
    sem_grads = np.zeros_like(contexts.semantic)
    d_pool = stack.pooled.shape[1]
    grad_pooled = np.zeros_like(stack.pooled)
    for t in range(depth.sem_layers - 1, -1, -1):
        block = grad[:, d_pool:]
        grad_pooled += grad[:, :d_pool]
        sem_grads[t] = g2 * (block @ stack.semantic[t].T)
        grad = g2 * (contexts.semantic[t].T @ block)
    grad_pooled += grad
    sem_grads *= contexts.sem_mask

    # pooling copies each image's gradient to all of its cells
    n = stack.geometric[0].shape[1]
    grad = np.repeat(grad_pooled[:, None, :], n, axis=1)
    g1 = np.sqrt(depth.gamma1)
    geo_grads = np.zeros_like(contexts.geometric)
    d0 = stack.geometric[0].shape[2]
    n_dir = contexts.geometric.shape[1] if contexts.geometric.ndim == 4 else 0
    for t in range(depth.geo_layers - 1, -1, -1):
        phi_t = stack.geometric[t]
        blocks = grad[:, :, d0:].reshape(grad.shape[0], n, n_dir, phi_t.shape[2])
        geo_grads[t] = g1 * np.einsum("picd,pjd->cij", blocks, phi_t)
        grad = g1 * np.einsum("cji,pjcd->pid", contexts.geometric[t], blocks)
    geo_grads *= contexts.geo_mask
    return GradientBundle(geo_grads, sem_grads, pooled=grad_pooled)


def _learnable(mode):
    return {"cf": (False, False), "dfcn": (False, False), "dlcn": (True, False), "dhcn": (True, True)}[mode]


def effective_depth(mode, depth):
    if mode == "cf":
        return DepthConfig(0, 0, depth.gamma1, depth.gamma2)
    if mode in ("dfcn", "dlcn"):
        return DepthConfig(depth.geo_layers, 0, depth.gamma1, depth.gamma2)
    return depth


def build_initial_map(dataset, cfg):
    if cfg.init_map == "linear":
        return InitialMapSpec("linear")
    rng = np.random.default_rng(cfg.seed)
    cells = dataset.features.reshape(-1, dataset.features.shape[2])
    landmarks = sample_landmarks(cells, cfg.landmarks, rng)
    dim = min(cfg.kpca_dim, landmarks.shape[0])
    return fit_kpca(landmarks, dim, l1=dataset.histograms)


def initial_contexts(dataset, phi0, cfg, depth):
    """Row-stochastic contexts tiled over layers, plus the initial pooled maps."""
    geo = GeometricContext.build(dataset.grid, cfg.radius)
    geometric = np.repeat(geo.matrices[None], depth.geo_layers, axis=0)
    init_pooled = pool(forward_geometric(phi0, geometric, depth)[-1])
    n_img = dataset.n_images
    if depth.sem_layers == 0:
        sem, mask = np.zeros((n_img, n_img)), np.zeros((n_img, n_img), dtype=bool)
    elif cfg.semantic_source == "links":
        sem, mask = load_semantic_links(dataset.links, dataset.ids)
    else:
        sem, mask = build_semantic_adjacency(init_pooled, cfg.semantic_k, cfg.similarity)
    ctx = PerLayerContexts.tile(geo.matrices, geo.masks, sem, mask, depth)
    return ctx, geo, init_pooled


def _renormalize(mats, masks):
    out = np.maximum(mats, 0.0) * masks
    sums = out.sum(axis=-1, keepdims=True)
    return np.where(sums > 0, out / np.where(sums > 0, sums, 1.0), 0.0)


@dataclass
class TrainResult:
    model: DhcnModel
    history: list = field(default_factory=list)
    best_loss: float = float("nan")


def train(dataset, cfg, depth=DepthConfig(), on_record=None):
    """Alternating optimization of SVMs and context matrices.

    Parameters
    ----------
    dataset : Dataset
    cfg : TrainConfig
    depth : DepthConfig
        Requested depth; ``cf`` drops all context layers and ``dfcn``/``dlcn``
        drop the semantic level.
    on_record : callable, optional
        Called with each training-log record (a dict) as it is produced.

    Returns
    -------
    TrainResult
        The model with the lowest recorded loss and the full log.
    """
    if dataset.n_images < 2:
        raise ValidationError("training needs at least 2 images")
    depth = effective_depth(cfg.mode, depth)
    learn_geo, learn_sem = _learnable(cfg.mode)
    learn_geo = learn_geo and depth.geo_layers > 0
    learn_sem = learn_sem and depth.sem_layers > 0
    labels = dataset.labels

    init_map = build_initial_map(dataset, cfg)
    phi0 = init_map.apply(dataset.features)
    ctx, geo, init_pooled = initial_contexts(dataset, phi0, cfg, depth)
    c_pos = balanced_c_pos(labels) if cfg.balance_classes else np.ones(labels.shape[1])

    history = []

    def record(entry):
        history.append(entry)
        log.debug("%s", entry)
        if on_record is not None:
            on_record(entry)

    best = None
    alphas = None
    step_id = 0
    for it in range(cfg.outer_iters):
        stack = forward(phi0, ctx, depth)
        try:
            svm, info = train_svms(stack.final, labels, cfg.svm_c, cfg.svm_epochs, cfg.svm_tol, c_pos, alphas)
        except NumericalError as exc:
            raise NumericalError(f"SVM step of iteration {it} failed: {exc}") from exc
        alphas = info.alphas
        loss = hinge_objective(svm, stack.final, labels)
        if not np.isfinite(loss):
            raise NumericalError(f"loss became non-finite after the SVM step of iteration {it}")
        record({"iter": it, "step": "svm", "E": loss, "hinge": loss - 0.5 * float(np.sum(svm.weights[:, :-1] ** 2))})
        if best is None or loss < best[0]:
            best = (loss, ctx.copy(), svm, stack.pooled.copy())
        if not (learn_geo or learn_sem):
            break
        for _ in range(cfg.context_steps_per_outer):
            grad_final = grad_wrt_final_map(svm, stack.final, labels)
            bundle = backprop_contexts(stack, ctx, grad_final, depth)
            norm = bundle.global_norm(learn_geo, learn_sem)
            scale = 1.0
            if cfg.grad_clip is not None and norm > cfg.grad_clip:
                scale = cfg.grad_clip / norm
            if learn_geo:
                ctx.geometric = ctx.geometric - cfg.context_lr * scale * bundle.geometric
                if cfg.renormalize_rows:
                    ctx.geometric = _renormalize(ctx.geometric, ctx.geo_mask)
            if learn_sem:
                ctx.semantic = ctx.semantic - cfg.context_lr * scale * bundle.semantic
                if cfg.renormalize_rows:
                    ctx.semantic = _renormalize(ctx.semantic, ctx.sem_mask)
            step_id += 1
            try:
                stack = forward(phi0, ctx, depth)
            except NumericalError as exc:
                raise NumericalError(f"context step {step_id} (iteration {it}) diverged: {exc}") from exc
            loss = hinge_objective(svm, stack.final, labels)
            if not np.isfinite(loss):
                raise NumericalError(f"loss became non-finite after context step {step_id} (iteration {it})")
            record({"iter": it, "step": "context", "E": loss,
                    "hinge": loss - 0.5 * float(np.sum(svm.weights[:, :-1] ** 2)),
                    "grad_norm_geo": bundle.global_norm(True, False),
                    "grad_norm_sem": bundle.global_norm(False, True)})
            if loss < best[0]:
                best = (loss, ctx.copy(), svm, stack.pooled.copy())

    loss, best_ctx, best_svm, best_pooled = best
    model = DhcnModel(
        mode=cfg.mode,
        concepts=list(dataset.concepts),
        grid=dataset.grid,
        radius=float(cfg.radius),
        directions=geo.directions,
        depth=depth,
        init_map=init_map,
        contexts=best_ctx,
        svm=best_svm,
        train_ids=list(dataset.ids),
        train_pooled=best_pooled if depth.sem_layers else None,
        train_init_pooled=init_pooled if depth.sem_layers else None,
        semantic_source=cfg.semantic_source,
        semantic_k=int(cfg.semantic_k),
        similarity=cfg.similarity,
        provenance={"seed": cfg.seed, "config": _config_dict(cfg), "final_E": loss,
                    "feature_dim": dataset.feature_dim},
    )
    return TrainResult(model, history, loss)


def _config_dict(cfg):
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


# -- gradient checking -------------------------------------------------------


@dataclass
class GradcheckReport:
    max_rel_error: float
    n_checked: int
    n_excluded: int
    passed: bool
    threshold: float
    worst: tuple = ()

    def as_dict(self):
        return {"max_rel_error": self.max_rel_error, "n_checked": self.n_checked,
                "n_excluded": self.n_excluded, "passed": self.passed, "threshold": self.threshold,
                "worst": list(self.worst)}


def _rel_error(analytic, numeric, floor):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def smooth_loss(maps):
    return 0.5 * float(np.sum(maps * maps))


def loss_and_grad(phi0, ctx, depth, svm, labels, loss="hinge"):
    """Loss value, context gradients and ``dE/d Phi_final`` for the current state."""
    stack = forward(phi0, ctx, depth)
    if loss == "smooth":
        value, g_final = smooth_loss(stack.final), stack.final.copy()
    else:
        value = hinge_objective(svm, stack.final, labels)
        g_final = grad_wrt_final_map(svm, stack.final, labels)
    bundle = backprop_contexts(stack, ctx, g_final, depth)
    bundle.loss = value
    return bundle, stack, g_final


def gradcheck(phi0, ctx, depth, svm, labels, loss="hinge", step=1e-5, threshold=None,
              weight_fraction=0.1, seed=0):
    """Compare analytic gradients against central finite differences.

    Every supported entry of every context matrix is perturbed, plus a random
    ``weight_fraction`` of the SVM weight coordinates when ``loss`` is the
    hinge. Hinge entries whose active set changes between the two perturbed
    evaluations sit on a margin tie and are excluded.
    """
    if threshold is None:
        threshold = 1e-7 if loss == "smooth" else 1e-4
    labels = np.asarray(labels, dtype=np.float64)
    bundle, stack, _ = loss_and_grad(phi0, ctx, depth, svm, labels, loss)
    scale = max(np.max(np.abs(bundle.geometric), initial=0.0), np.max(np.abs(bundle.semantic), initial=0.0))
    floor = max(1e-12, 1e-8 * scale)

    def evaluate(c, model):
        s = forward(phi0, c, depth)
        if loss == "smooth":
            return smooth_loss(s.final), None
        return hinge_objective(model, s.final, labels), (1.0 - labels * (s.final @ model.weights[:, :-1].T + model.weights[:, -1])) > 0

    worst = (0.0, None)
    n_checked = n_excluded = 0
    for name, mask in (("geometric", ctx.geo_mask), ("semantic", ctx.sem_mask)):
        params = getattr(ctx, name)
        analytic = getattr(bundle, name)
        layer_mask = np.broadcast_to(mask, params.shape)
        for idx in zip(*np.nonzero(layer_mask)):
            plus, minus = ctx.copy(), ctx.copy()
            getattr(plus, name)[idx] += step
            getattr(minus, name)[idx] -= step
            fp, ap = evaluate(plus, svm)
            fm, am = evaluate(minus, svm)
            if ap is not None and not np.array_equal(ap, am):
                n_excluded += 1
                continue
            numeric = (fp - fm) / (2 * step)
            err = _rel_error(analytic[idx], numeric, floor)
            n_checked += 1
            if err > worst[0] or worst[1] is None:
                worst = (err, (name,) + tuple(int(i) for i in idx))

    if loss != "smooth" and weight_fraction > 0:
        rng = np.random.default_rng(seed)
        final = stack.final
        y = labels
        active = (1.0 - y * (final @ svm.weights[:, :-1].T + svm.weights[:, -1])) > 0
        coef = -example_weights(y, svm.c_k, svm.c_pos) * y * active
        aug = np.hstack([final, np.ones((final.shape[0], 1))])
        w_grad = coef.T @ aug
        w_grad[:, :-1] += svm.weights[:, :-1]
        n_w = svm.weights.size
        chosen = rng.choice(n_w, size=max(1, int(round(weight_fraction * n_w))), replace=False)
        w_floor = max(1e-12, 1e-8 * np.max(np.abs(w_grad)))
        for flat in np.sort(chosen):
            idx = np.unravel_index(flat, svm.weights.shape)
            wp, wm = svm.weights.copy(), svm.weights.copy()
            wp[idx] += step
            wm[idx] -= step
            fp, ap = evaluate(ctx, SvmModel(wp, svm.c_k, svm.c_pos))
            fm, am = evaluate(ctx, SvmModel(wm, svm.c_k, svm.c_pos))
            if not np.array_equal(ap, am):
                n_excluded += 1
                continue
            err = _rel_error(w_grad[idx], (fp - fm) / (2 * step), w_floor)
            n_checked += 1
            if err > worst[0]:
                worst = (err, ("svm",) + tuple(int(i) for i in idx))

    return GradcheckReport(float(worst[0]), n_checked, n_excluded, bool(worst[0] <= threshold), threshold,
                           worst[1] or ())


def random_svm(n_classes, width, rng, scale=None, c_k=1.0):
    """SVM head with Gaussian weights, used to probe gradients away from margin ties."""
    scale = 1.0 / np.sqrt(max(width, 1)) if scale is None else scale
    weights = rng.normal(scale=scale, size=(n_classes, width + 1))
    return SvmModel(weights, np.full(n_classes, float(c_k)), np.ones(n_classes))


def gradcheck_dataset(dataset, depth=DepthConfig(), seed=0, loss="hinge", cfg=None):
    """Gradient check on a dataset with randomly perturbed contexts and a random SVM head."""
    cfg = cfg or TrainConfig(seed=seed, semantic_k=min(3, dataset.n_images - 1))
    rng = np.random.default_rng(seed)
    init_map = build_initial_map(dataset, cfg)
    phi0 = init_map.apply(dataset.features)
    ctx, _, _ = initial_contexts(dataset, phi0, cfg, depth)
    # move away from the uniform initialization so layers differ
    ctx.geometric = (ctx.geometric + 0.1 * rng.random(ctx.geometric.shape)) * ctx.geo_mask
    ctx.semantic = (ctx.semantic + 0.1 * rng.random(ctx.semantic.shape)) * ctx.sem_mask
    width = forward(phi0, ctx, depth).final.shape[1]
    # weights scaled so that typical scores are O(1), keeping hinges mixed
    final = forward(phi0, ctx, depth).final
    svm = random_svm(dataset.labels.shape[1], width, rng, scale=1.0 / max(np.linalg.norm(final, axis=1).mean(), 1e-12))
    return gradcheck(phi0, ctx, depth, svm, dataset.labels, loss=loss, seed=seed)
