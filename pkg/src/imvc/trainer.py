"""Training orchestration: pretrain, score, initialize the mixture, fit.

The pipeline is: (1) pretrain encoders/decoders as plain per-view
autoencoders on observed rows; (2) score every missing position once from
the pretrained latents and freeze the selection; (3) seed the mixture
prior with k-means++ on the fused latents; (4) run the epoch loop -- each
epoch re-encodes, refreshes the selected imputations from the current
posteriors (constants for the epoch), and takes Adam steps on the total
loss. Unobserved feature cells are never read anywhere in this pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as M
from . import scoring
from .metrics import accuracy, ari, nmi
from .nn import Adam, sigmoid


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, term):
        super().__init__(
            f"training diverged at epoch {epoch} (non-finite {term}) "
            "after exhausting learning-rate reductions"
        )
        self.epoch = epoch


@dataclass
class TrainConfig:
    pretrain_epochs: int = 200
    train_epochs: int = 300
    batch_size: int = 0  # 0 = full batch
    pretrain_lr: float = 1e-3
    train_lr: float = 1e-3
    alpha: float = 5.0
    selection_ratio: float = 0.5
    n_neighbors: int = 10
    d_z: int = 10
    hidden: tuple = (256, 64)
    likelihoods: list | None = None
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 0  # 0 = no periodic checkpoints

    def __post_init__(self):
        if self.train_epochs <= 0 or self.pretrain_epochs < 0:
            raise ValueError("epoch counts must be positive")
        if not 0.0 <= self.selection_ratio <= 1.0:
            raise ValueError("selection ratio must lie in [0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.n_neighbors < 1:
            raise ValueError("need at least one neighbor")


@dataclass
class FitResult:
    model: M.DmgmmModel
    table: scoring.InfoTable | None
    corr: np.ndarray | None
    assignments: np.ndarray
    gamma: np.ndarray
    history: list = field(default_factory=list)
    pretrain_losses: list = field(default_factory=list)


def pretrain(model, dataset, config):
    """Reconstruction-only warm-up; returns per-view latent mean matrices.

    Trains sum_v mean_i ||x_i^v - g^v(mu_i^v)||^2 over observed rows with
    Adam; the latent is the deterministic encoder mean (no sampling, no
    variance head involvement). H[v] rows are valid only where view v is
    observed.
    """
    params = []
    for net in model.encoders + model.decoders:
        params.extend(net.parameters())
    opt = Adam(params, lr=config.pretrain_lr)
    d = model.d_z
    losses = []
    obs_rows = [dataset.observed(v) for v in range(model.n_views)]
    for _ in range(config.pretrain_epochs):
        total = 0.0
        enc_grads, dec_grads = [], []
        for v in range(model.n_views):
            rows = obs_rows[v]
            X = dataset.views[v][rows]
            out_e, cache_e = model.encoders[v].forward(X)
            mu = out_e[:, :d]
            out_d, cache_d = model.decoders[v].forward(mu)
            if model.likelihoods[v] == "gaussian":
                recon = out_d[:, : X.shape[1]]
            else:
                recon = sigmoid(out_d)
            err = recon - X
            total += float((err * err).sum(axis=1).mean())
            d_recon = 2.0 * err / X.shape[0]
            if model.likelihoods[v] == "gaussian":
                d_out_d = np.zeros_like(out_d)
                d_out_d[:, : X.shape[1]] = d_recon
            else:
                d_out_d = d_recon * recon * (1.0 - recon)
            gd, d_mu = model.decoders[v].backward(cache_d, d_out_d)
            d_out_e = np.zeros_like(out_e)
            d_out_e[:, :d] = d_mu
            ge, _ = model.encoders[v].backward(cache_e, d_out_e)
            enc_grads.append(ge)
            dec_grads.append(gd)
        if not np.isfinite(total):
            raise M.NonFiniteLossError("pretrain_reconstruction", total)
        grads = []
        for g in enc_grads + dec_grads:
            grads.extend(g)
        opt.step(params, grads)
        losses.append(total)

    latents = []
    for v in range(model.n_views):
        H = np.zeros((dataset.n_samples, d))
        rows = obs_rows[v]
        if rows.size:
            H[rows] = M.encode_view(model, v, dataset.views[v][rows]).mu
        latents.append(H)
    return latents, losses


def _inv_softplus(y):
    y = np.maximum(y, 1e-6)
    return y + np.log(-np.expm1(-y))


def calibrate_heads(model, dataset, latents, enc_sigma_frac=0.5):
    """Standardize the latent spaces and rescale the untrained scale heads
    after pretraining.

    Pretraining only shapes the mean paths: the softplus heads still sit at
    softplus(0) ~ 0.69 whatever the data looks like, and each view's latent
    cloud has an arbitrary offset and scale. Training straight from that
    state collapses the mixture (posterior noise wider than the latent
    spread) and makes the exp(-distance) neighbor weights degenerate
    (distances far from O(1) turn the softmax uniform or one-hot). The
    calibration therefore:

      * reparameterizes each encoder mean head so the view's latents have
        zero mean and unit per-dimension variance, with the inverse affine
        map absorbed exactly into the decoder's first layer (the composed
        function is unchanged);
      * sets the encoder scale head to enc_sigma_frac (per-dimension std
        is now 1);
      * sets the decoder scale head to the per-dimension reconstruction
        residual std.

    Mutates the model and the latents in place.
    """
    d = model.d_z
    for v in range(model.n_views):
        rows = dataset.observed(v)
        if rows.size == 0:
            continue
        X = dataset.views[v][rows]
        H = latents[v][rows]

        center = H.mean(axis=0)
        scale = np.maximum(H.std(axis=0), 1e-3)
        enc = model.encoders[v]
        enc.weights[-1][:, :d] /= scale[None, :]
        enc.biases[-1][:d] = (enc.biases[-1][:d] - center) / scale
        dec = model.decoders[v]
        # first decoder layer absorbs the inverse map: g'(h) = g(h*s + c)
        dec.biases[0] += center @ dec.weights[0]
        dec.weights[0] *= scale[:, None]
        latents[v][rows] = (H - center) / scale

        if model.likelihoods[v] == "gaussian":
            out, _ = dec.forward(latents[v][rows])
            resid = X - out[:, : X.shape[1]]
            res_scale = np.maximum(resid.std(axis=0), 1e-3)
            dec.biases[-1][X.shape[1]:] = _inv_softplus(res_scale)
        enc.biases[-1][d:] = _inv_softplus(np.full(d, enc_sigma_frac))


def _kmeans_once(X, K, rng, n_iter=100):
    n = X.shape[0]
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for kk in range(1, K):
        total = d2.sum()
        if total > 0:
            centers[kk] = X[rng.choice(n, p=d2 / total)]
        else:
            centers[kk] = X[rng.integers(n)]
        d2 = np.minimum(d2, ((X - centers[kk]) ** 2).sum(axis=1))

    assign = None
    for _ in range(n_iter):
        dist = ((X[:, None, :] - centers[None]) ** 2).sum(axis=-1)
        new_assign = dist.argmin(axis=1)
        # repair empty clusters by stealing the farthest point
        stolen = set()
        for kk in range(K):
            if (new_assign == kk).any():
                continue
            resid = dist[np.arange(n), new_assign].copy()
            if stolen:
                resid[list(stolen)] = -1.0
            far = int(resid.argmax())
            new_assign[far] = kk
            stolen.add(far)
        if assign is not None and (new_assign == assign).all():
            break
        assign = new_assign
        for kk in range(K):
            centers[kk] = X[assign == kk].mean(axis=0)
    dist = ((X - centers[assign]) ** 2).sum(axis=1)
    return centers, assign, float(dist.sum())


def kmeans_pp(X, K, seed, restarts=10):
    """k-means++ with Lloyd refinement; best of several restarts."""
    if K > X.shape[0]:
        raise ValueError(f"cannot place {K} clusters on {X.shape[0]} points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centers, assign, inertia = _kmeans_once(X, K, rng)
        if best is None or inertia < best[2]:
            best = (centers, assign, inertia)
    return best[0], best[1]


def init_prior(latent_mu, K, seed, var_boost=None, fit_rows=None):
    """Mixture prior seeded by k-means++ on the fused latent means.

    fit_rows, when given, restricts the k-means itself to those rows
    (e.g. the fully observed samples, whose fused latents all live in one
    consistent frame); every sample is then assigned to its nearest
    centroid for the variance and weight estimates. Component variances
    are within-cluster per-dimension variances (floored); var_boost, when
    given, is added on top so the components cover the sampling spread of
    the posterior, not just the spread of its means. Weights are cluster
    fractions floored at 1/(10K) and renormalized.
    """
    basis = latent_mu if fit_rows is None else latent_mu[fit_rows]
    centers, _ = kmeans_pp(basis, K, seed)
    d2 = ((latent_mu[:, None, :] - centers[None]) ** 2).sum(axis=-1)
    assign = d2.argmin(axis=1)
    n, d = latent_mu.shape
    var = np.empty((K, d))
    pi = np.empty(K)
    for kk in range(K):
        rows = latent_mu[assign == kk]
        if rows.shape[0] == 0:
            var[kk] = M.VAR_MIN
            pi[kk] = 0.0
            continue
        var[kk] = np.maximum(rows.var(axis=0), M.VAR_MIN)
        pi[kk] = rows.shape[0] / n
    if var_boost is not None:
        var += np.asarray(var_boost)[None, :]
    pi = np.maximum(pi, 1.0 / (10 * K))
    pi /= pi.sum()
    return M.MixturePrior(pi=pi, mu=centers, var=var)


def _deterministic_assignments(model, dataset, table, k):
    """Cluster assignments from the noise-free fused posterior mean."""
    posts = M.encode_all(model, dataset)
    if table is not None and table.n_selected:
        imput = M.impute_all(dataset, table, posts, k=k)
        agg = M.aggregate_with_imputations(posts, dataset.mask, imput)
    else:
        agg = M.aggregate_observed(posts, dataset.mask)
    gamma = M.responsibilities(model.prior, agg.mu)
    return gamma.argmax(axis=1), gamma


def fit(dataset, config, selective_imputation=True, checkpoint_dir=None):
    """Full pipeline; returns a FitResult with final hard assignments.

    With selective_imputation=False (or a selection ratio of 0, or
    complete data) the epoch loop reduces to plain observed-view fusion;
    the code path is otherwise identical, so gate-closed runs reproduce
    the imputation-free variant bit for bit. When checkpoint_dir is given
    and config.checkpoint_every > 0, the model is snapshotted there every
    that many epochs.
    """
    K = dataset.K
    if K is None:
        raise ValueError("dataset has no cluster count; set K")
    likelihoods = config.likelihoods or ["gaussian"] * dataset.n_views
    for v, lk in enumerate(likelihoods):
        if lk == "bernoulli":
            obs = dataset.observed(v)
            X = dataset.views[v][obs]
            if X.min() < 0 or X.max() > 1:
                raise ValueError(f"view {v} is not in [0,1]; Bernoulli likelihood needs that")

    model = M.DmgmmModel.build(
        dataset.dims, K, d_z=config.d_z, hidden=tuple(config.hidden),
        likelihoods=likelihoods, seed=config.seed,
    )
    latents, pre_losses = pretrain(model, dataset, config)
    calibrate_heads(model, dataset, latents)

    posts = M.encode_all(model, dataset)
    agg0 = M.aggregate_observed(posts, dataset.mask)
    # Seed the k-means on fully observed samples when there are enough of
    # them: their fused latents share one frame, so the centroids are not
    # smeared by missing-pattern offsets.
    complete = np.where(dataset.mask.sum(axis=1) == dataset.n_views)[0]
    fit_rows = complete if complete.size >= max(4 * K, 20) else None
    model.set_prior(
        init_prior(agg0.mu, K, seed=config.seed + 1_000_003,
                   var_boost=agg0.var.mean(axis=0), fit_rows=fit_rows)
    )

    table = None
    corr = None
    if selective_imputation:
        corr = scoring.view_correlation(latents, dataset)
        table = scoring.info_scores(dataset, corr=corr)
        table = scoring.select_positions(table, config.selection_ratio)

    params = model.parameters()
    opt = Adam(params, lr=config.train_lr)
    rng_noise = np.random.default_rng(config.seed + 2_000_003)
    rng_shuffle = np.random.default_rng(config.seed + 3_000_003)
    n = dataset.n_samples
    batch = config.batch_size if 0 < config.batch_size < n else n

    history = []
    snapshot = (model.copy_params(), opt.state_dict())
    retries = 0
    epoch = 0
    while epoch < config.train_epochs:
        try:
            posts = M.encode_all(model, dataset)
            imput = {}
            if table is not None and table.n_selected:
                imput = M.impute_all(dataset, table, posts, k=config.n_neighbors)
            if batch == n:
                batches = [np.arange(n)]
            else:
                order = rng_shuffle.permutation(n)
                batches = [order[s : s + batch] for s in range(0, n, batch)]
            terms = None
            for idx in batches:
                eps = rng_noise.standard_normal((idx.size, config.d_z))
                terms, grads = M.loss_and_grads(
                    model, dataset, idx, eps, alpha=config.alpha, imputations=imput
                )
                opt.step(params, grads)
        except M.NonFiniteLossError as err:
            if retries >= 3:
                raise TrainingDiverged(epoch, err.term) from err
            retries += 1
            model.load_params(snapshot[0])
            opt.load_state_dict(snapshot[1])
            opt.lr *= 0.5
            continue

        snapshot = (model.copy_params(), opt.state_dict())
        if (
            checkpoint_dir is not None
            and config.checkpoint_every > 0
            and (epoch + 1) % config.checkpoint_every == 0
        ):
            import os

            os.makedirs(checkpoint_dir, exist_ok=True)
            M.save_model(
                model, os.path.join(checkpoint_dir, f"checkpoint_{epoch + 1}.json")
            )
        entry = {"epoch": epoch, **terms.as_dict()}
        if dataset.labels is not None and (
            epoch % config.log_every == 0 or epoch == config.train_epochs - 1
        ):
            assign, _ = _deterministic_assignments(model, dataset, table, config.n_neighbors)
            entry["acc"] = accuracy(assign, dataset.labels)
            entry["nmi"] = nmi(assign, dataset.labels)
            entry["ari"] = ari(assign, dataset.labels)
        history.append(entry)
        epoch += 1

    assignments, gamma = _deterministic_assignments(model, dataset, table, config.n_neighbors)
    return FitResult(
        model=model,
        table=table,
        corr=corr,
        assignments=assignments,
        gamma=gamma,
        history=history,
        pretrain_losses=pre_losses,
    )
