"""End-to-end wiring: dataset preparation, Siamese pretraining and scale
calibration, model training, and oracle comparisons, all driven by a
:class:`~mvspectral.config.RunConfig`.
"""

import numpy as np

from . import data as mvdata
from . import metrics, model, oracle
from .affinity import AffinityConfig, SiameseContext, batch_affinity, calibrate_scale, train_siamese
from .net import LrPolicy


def build_dataset(cfg):
    """Generate or load the configured dataset, with contamination applied."""
    if cfg.data_source == "blobs":
        ds = mvdata.make_blobs_two_view(
            cfg.n_samples, cfg.num_clusters, cfg.blob_dim, cfg.cluster_std,
            cfg.seed,
        )
    else:
        ds = mvdata.load_views_csv(
            cfg.view_csvs,
            cfg.labels_csv or None,
            skip_header=cfg.csv_header,
        )
    if cfg.contamination_kind != "none" and cfg.contamination_ratio > 0:
        spec = mvdata.ContaminationSpec(
            kind=cfg.contamination_kind,
            ratio=cfg.contamination_ratio,
            target_views=tuple(cfg.contamination_views),
            noise_sigma=cfg.noise_sigma,
            seed=cfg.seed + 1,
        )
        ds = mvdata.inject(ds, spec)
    return ds


def split_dataset(ds, cfg):
    spec = mvdata.SplitSpec(
        test_fraction=cfg.test_fraction,
        val_fraction_of_train=cfg.val_fraction_of_train,
        seed=cfg.seed + 2,
    )
    return mvdata.split(ds, spec)


def affinity_config(cfg):
    return AffinityConfig(
        n_neighbors=cfg.n_neighbors, kernel_sigma=cfg.kernel_sigma
    )


def prepare_contexts(train_ds, cfg):
    """Pretrain one Siamese embedder per view (or identity pass-throughs) and
    calibrate the global kernel scales on the training split."""
    aff = affinity_config(cfg)
    contexts = []
    for v, view in enumerate(train_ds.views):
        if cfg.use_siamese:
            ctx = SiameseContext.create(
                view.shape[1],
                cfg.siamese_hidden_dims,
                cfg.siamese_embed_dim,
                seed=cfg.seed * 100 + v,
                activation=cfg.activation,
            )
            train_siamese(
                ctx, view, aff, cfg.siamese_epochs, cfg.seed * 100 + v,
                lr=cfg.siamese_lr,
            )
        else:
            ctx = SiameseContext.identity()
        calibrate_scale(ctx, view, cfg.n_neighbors)
        contexts.append(ctx)
    return contexts


def train_config(cfg):
    return model.TrainConfig(
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        lr_policy=LrPolicy(
            initial_lr=cfg.initial_lr,
            decay_factor=cfg.lr_decay_factor,
            patience_epochs=cfg.lr_patience_epochs,
            floor_lr=cfg.lr_floor,
        ),
        affinity=affinity_config(cfg),
        seed=cfg.seed,
        fusion_mode=cfg.fusion_mode,
        weight_decay=cfg.weight_decay,
    )


def fit(train_ds, val_ds, cfg, epoch_hook_builder=None):
    """Train the full system on prepared splits.

    Runs ``cfg.train_restarts`` independently seeded trainings and keeps the
    model with the best validation loss (the mini-batch scheme finds basins
    of very different quality; the validation loss ranks them reliably).

    Returns ``(model, contexts, history)``. ``epoch_hook_builder`` may turn
    the trained contexts into a per-epoch diagnostic callable.
    """
    contexts = prepare_contexts(train_ds, cfg)
    hook = None
    if epoch_hook_builder is not None:
        hook = epoch_hook_builder(contexts)

    best = None
    for restart in range(max(1, cfg.train_restarts)):
        seed = cfg.seed + 7919 * restart
        mdl = model.create_model(
            view_dims=train_ds.dims,
            embed_dim=cfg.embed_dim,
            hidden_dims=cfg.view_dims_for(),
            fusion_hidden_dims=cfg.fusion_dims(),
            temperature=cfg.temperature,
            fusion_mode=cfg.fusion_mode,
            seed=seed,
            activation=cfg.activation,
        )
        tc = train_config(cfg)
        tc.seed = seed
        history = model.train(
            mdl, train_ds.views, val_ds.views, tc, contexts, epoch_hook=hook,
        )
        history["restart"] = restart
        score = history.get("best_val_loss", np.inf)
        if best is None or score < best[0]:
            best = (score, mdl, history)
    _, mdl, history = best
    return mdl, contexts, history


def oracle_subspace(ds, contexts, cfg):
    """Exact eigenvectors of the averaged Laplacian on one split, built from
    the same embeddings and kernel scales the model trains with."""
    aff = affinity_config(cfg)
    laps = [
        oracle.laplacian(batch_affinity(ctx, view, aff))
        for ctx, view in zip(contexts, ds.views)
    ]
    lbar = oracle.avg_laplacian(laps)
    vecs, vals = oracle.smallest_eigvecs(lbar, cfg.embed_dim)
    return vecs, vals, laps


def oracle_distance(mdl, ds, contexts, cfg):
    """Squared Grassmann distance between the model's output subspace on a
    split and the oracle eigenvectors, plus per-view diagonalization ratios."""
    vecs, _, laps = oracle_subspace(ds, contexts, cfg)
    outputs = model.embed(mdl, ds.views)
    dist = oracle.grassmann_distance_sq(outputs, vecs)
    basis = oracle._orthonormalize(outputs)
    ratios = [oracle.offdiag_ratio(basis, lap) for lap in laps]
    return dist, ratios


def grassmann_hook(val_ds, cfg):
    """Per-epoch oracle-distance callback for :func:`fit` (validation split).

    The model is mid-training (not frozen), so the forward pass is run
    directly with the current orthogonalization weights.
    """
    def build(contexts):
        def hook(mdl):
            vecs, _, _ = oracle_subspace(val_ds, contexts, cfg)
            fwd = model._forward_full(mdl, val_ds.views)
            outputs = fwd.fused @ mdl.ortho_weights
            return oracle.grassmann_distance_sq(outputs, vecs)
        return hook
    return build


def evaluate_embeddings(outputs, labels, cfg):
    """k-means on the embeddings, matched against the true labels."""
    num_clusters = len(np.unique(labels))
    pred, _ = metrics.kmeans(
        outputs, num_clusters, seed=cfg.seed, restarts=cfg.kmeans_restarts
    )
    return metrics.EvalReport(
        acc=metrics.clustering_accuracy(pred, labels),
        nmi=metrics.nmi(pred, labels),
        ari=metrics.ari(pred, labels),
        seed=cfg.seed,
    )
