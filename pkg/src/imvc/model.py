"""Deep multi-view Gaussian mixture model.

Generative story: a cluster c ~ Categorical(pi) picks a component of a
diagonal-Gaussian mixture over the latent z; each view is then decoded
from z independently (Gaussian or Bernoulli likelihood per view).
Inference runs the other way: per-view encoders produce diagonal Gaussian
posteriors q(z | x^v), which are fused across observed views by a
product of experts (precision-weighted mean, summed precisions). Missing
views that were selected for imputation get their posterior parameters
estimated from latent-space neighbors, with the dispersion of neighbor
means added to the imputed variance as an epistemic term; the fused
posterior is then rebuilt including those imputed experts.

The training loss is the negative ELBO (reconstruction over observed
views, mixture KL, categorical KL) plus ``alpha`` times a coherence
penalty KL(fused || per-view). ``loss_and_grads`` evaluates it together
with hand-derived analytic gradients for every parameter, including the
mixture parameters; imputed expert parameters are treated as constants
(they are refreshed once per epoch, not differentiated through).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .nn import SIGMA_MIN, Adam, Mlp, sigmoid, softplus

VAR_MIN = SIGMA_MIN**2

LIKELIHOODS = ("gaussian", "bernoulli")

LOG_2PI = float(np.log(2.0 * np.pi))


class NonFiniteLossError(RuntimeError):
    """A loss term stopped being finite; carries the offending term."""

    def __init__(self, term, value):
        super().__init__(f"non-finite loss term {term!r}: {value}")
        self.term = term
        self.value = value


@dataclass
class GaussianPosterior:
    """Diagonal Gaussian q(z) = N(mu, diag(var)).

    mu/var may be 1-D (one sample) or 2-D (a batch, one row per sample).
    """

    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.mu.shape != self.var.shape:
            raise ValueError("mu and var shapes differ")
        if not (self.var > 0).all():
            raise ValueError("variances must be positive")

    @property
    def sd(self):
        return np.sqrt(self.var)

    def row(self, i):
        return GaussianPosterior(self.mu[i], self.var[i])


@dataclass
class MixturePrior:
    """Categorical-Gaussian prior: weights pi, component means/variances."""

    pi: np.ndarray
    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        K = self.pi.shape[0]
        if self.mu.shape[0] != K or self.var.shape != self.mu.shape:
            raise ValueError("component shapes disagree")
        if (self.pi <= 0).any() or abs(self.pi.sum() - 1.0) > 1e-9:
            raise ValueError("pi must be a positive probability vector")
        if (self.var < VAR_MIN * (1 - 1e-12)).any():
            raise ValueError(f"component variances must be >= {VAR_MIN}")

    @property
    def K(self):
        return self.pi.shape[0]


def _inv_softplus(y):
    # solve softplus(x) = y for y > 0
    y = np.maximum(y, 1e-12)
    return y + np.log(-np.expm1(-y))


class DmgmmModel:
    """Per-view encoder/decoder pairs plus free mixture parameters.

    Encoders emit [mu | sigma] (sigma through a softplus head, so the
    per-view posterior variance is sigma^2 >= SIGMA_MIN^2). Gaussian
    decoders emit [mean | sigma]; Bernoulli decoders emit logits. The
    mixture is parameterized unconstrained: pi = softmax(pi_logits),
    var_k = softplus(var_rho) + VAR_MIN.
    """

    def __init__(self, encoders, decoders, likelihoods, d_z, K, seed=0):
        self.encoders = list(encoders)
        self.decoders = list(decoders)
        self.likelihoods = list(likelihoods)
        for lk in self.likelihoods:
            if lk not in LIKELIHOODS:
                raise ValueError(f"unknown likelihood {lk!r}")
        self.d_z = int(d_z)
        self.K = int(K)
        rng = np.random.default_rng(seed)
        self.pi_logits = np.zeros(K)
        self.prior_mu = rng.normal(scale=0.1, size=(K, d_z))
        self.prior_rho = np.full((K, d_z), _inv_softplus(np.array(1.0 - VAR_MIN)))

    @classmethod
    def build(cls, view_dims, K, d_z=10, hidden=(256, 64), likelihoods=None, seed=0):
        """Symmetric architecture: d_v -> hidden -> 2*d_z and mirrored back."""
        if likelihoods is None:
            likelihoods = ["gaussian"] * len(view_dims)
        encoders, decoders = [], []
        for v, d_v in enumerate(view_dims):
            enc = Mlp(
                [d_v, *hidden, 2 * d_z],
                heads=(("identity", d_z), ("softplus", d_z)),
                seed=seed * 1000 + 2 * v,
            )
            if likelihoods[v] == "gaussian":
                dec = Mlp(
                    [d_z, *reversed(hidden), 2 * d_v],
                    heads=(("identity", d_v), ("softplus", d_v)),
                    seed=seed * 1000 + 2 * v + 1,
                )
            else:
                dec = Mlp(
                    [d_z, *reversed(hidden), d_v],
                    heads=(("identity", d_v),),
                    seed=seed * 1000 + 2 * v + 1,
                )
            encoders.append(enc)
            decoders.append(dec)
        return cls(encoders, decoders, likelihoods, d_z=d_z, K=K, seed=seed)

    @property
    def n_views(self):
        return len(self.encoders)

    def parameters(self):
        """Flat list of live arrays: all nets, then mixture parameters."""
        params = []
        for net in self.encoders + self.decoders:
            params.extend(net.parameters())
        params.extend([self.pi_logits, self.prior_mu, self.prior_rho])
        return params

    def copy_params(self):
        return [p.copy() for p in self.parameters()]

    def load_params(self, saved):
        for p, s in zip(self.parameters(), saved):
            p[...] = s

    @property
    def prior(self):
        logits = self.pi_logits - self.pi_logits.max()
        e = np.exp(logits)
        return MixturePrior(
            pi=e / e.sum(),
            mu=self.prior_mu.copy(),
            var=softplus(self.prior_rho) + VAR_MIN,
        )

    def set_prior(self, prior):
        self.pi_logits[...] = np.log(prior.pi)
        self.prior_mu[...] = prior.mu
        self.prior_rho[...] = _inv_softplus(np.maximum(prior.var - VAR_MIN, 1e-12))


def encode_view(model, v, X):
    """Posterior parameters for rows observed in view v."""
    out, _ = model.encoders[v].forward(X)
    d = model.d_z
    return GaussianPosterior(mu=out[:, :d], var=out[:, d:] ** 2)


def encode_all(model, dataset):
    """Per-view posteriors over all samples.

    Unobserved rows hold neutral placeholders (mu 0, var 1) and must be
    guarded by the mask; only observed rows are ever passed through the
    encoders, so poisoned masked cells cannot leak.
    """
    n, d = dataset.n_samples, model.d_z
    posts = []
    for v in range(model.n_views):
        rows = dataset.observed(v)
        mu = np.zeros((n, d))
        var = np.ones((n, d))
        if rows.size:
            p = encode_view(model, v, dataset.views[v][rows])
            mu[rows] = p.mu
            var[rows] = p.var
        posts.append(GaussianPosterior(mu=mu, var=var))
    return posts


def poe_aggregate(posteriors):
    """Product of Gaussian experts: summed precisions, precision-weighted mean."""
    if not posteriors:
        raise ValueError("need at least one expert")
    prec = np.stack([1.0 / p.var for p in posteriors])
    mu_num = np.stack([p.mu / p.var for p in posteriors])
    total = prec.sum(axis=0)
    var = 1.0 / total
    mu = mu_num.sum(axis=0) * var
    return GaussianPosterior(mu=mu, var=var)


def aggregate_observed(view_posteriors, mask):
    """PoE over observed views only, batched over all samples."""
    maskb = np.asarray(mask).astype(bool)
    prec = np.zeros_like(view_posteriors[0].var)
    num = np.zeros_like(view_posteriors[0].mu)
    for v, p in enumerate(view_posteriors):
        m = maskb[:, v][:, None]
        prec += np.where(m, 1.0 / p.var, 0.0)
        num += np.where(m, p.mu / p.var, 0.0)
    var = 1.0 / prec
    return GaussianPosterior(mu=num * var, var=var)


def aggregate_with_imputations(view_posteriors, mask, imputations):
    """PoE over observed experts plus constant imputed experts."""
    maskb = np.asarray(mask).astype(bool)
    prec = np.zeros_like(view_posteriors[0].var)
    num = np.zeros_like(view_posteriors[0].mu)
    for v, p in enumerate(view_posteriors):
        m = maskb[:, v][:, None]
        prec += np.where(m, 1.0 / p.var, 0.0)
        num += np.where(m, p.mu / p.var, 0.0)
    for (i, v), post in imputations.items():
        if maskb[i, v]:
            raise ValueError(f"position ({i}, {v}) is observed; cannot stack an imputed expert")
        prec[i] += 1.0 / post.var
        num[i] += post.mu / post.var
    var = 1.0 / prec
    return GaussianPosterior(mu=num * var, var=var)


def w2_distance(a, b):
    """2-Wasserstein distance between diagonal Gaussians.

    Broadcasts over leading axes: a single posterior against a batch gives
    a vector of distances.
    """
    dmu = a.mu - b.mu
    dsd = a.sd - b.sd
    return np.sqrt((dmu * dmu).sum(axis=-1) + (dsd * dsd).sum(axis=-1))


def impute_distribution(dataset, table, aggregated, view_posteriors, i, v, k=10):
    """Posterior parameters for missing view v of sample i from latent
    neighbors.

    Neighbors are the k samples observing view v whose fused posteriors
    are closest to sample i's (2-Wasserstein on the pre-imputation
    aggregates); softmax(-distance) weights average their view-v means and
    variances, and the weighted dispersion of their means is added to the
    variance (imputation uncertainty).
    """
    if table is not None:
        sel = dict(zip(map(tuple, table.positions.tolist()), table.selected))
        if not sel.get((int(i), int(v)), False):
            raise ValueError(f"position ({i}, {v}) was not selected for imputation")
    donors = np.where(dataset.mask[:, v] == 1)[0]
    if donors.size == 0:
        raise ValueError(f"no sample observes view {v}; cannot impute")
    dist = w2_distance(aggregated.row(i), aggregated.row(donors))
    k = min(int(k), donors.size)
    order = np.argsort(dist, kind="stable")[:k]
    nearest = donors[order]
    dn = dist[order]
    # softmax over negated distances
    e = np.exp(-(dn - dn.min()))
    w = e / e.sum()
    mu_nb = view_posteriors[v].mu[nearest]
    var_nb = view_posteriors[v].var[nearest]
    mu_hat = w @ mu_nb
    var_hat = w @ var_nb + w @ (mu_nb - mu_hat) ** 2
    return GaussianPosterior(mu=mu_hat, var=var_hat)


def fuse_with_imputation(model, dataset, table, i, view_posteriors, k=10):
    """Fused posterior for sample i including selected imputed views."""
    agg_all = aggregate_observed(view_posteriors, dataset.mask)
    experts = [view_posteriors[v].row(i) for v in dataset.observed_views(i)]
    if table is not None:
        for v in table.selected_by_sample().get(int(i), []):
            experts.append(
                impute_distribution(dataset, table, agg_all, view_posteriors, i, v, k=k)
            )
    return poe_aggregate(experts)


def impute_all(dataset, table, view_posteriors, k=10):
    """Imputed posteriors for every selected missing position.

    Neighbor search runs on the pre-imputation fused posteriors, so the
    result is a pure function of the current encoder state. Equivalent to
    calling impute_distribution per position, but batched per view: one
    distance matrix from the querying samples to all donors, a top-k
    selection per row, and softmax-weighted neighbor statistics. Returns a
    dict (sample, view) -> GaussianPosterior.
    """
    out = {}
    by_sample = table.selected_by_sample()
    if not by_sample:
        return out
    agg = aggregate_observed(view_posteriors, dataset.mask)
    sd = agg.sd

    by_view = {}
    for i, views in by_sample.items():
        for v in views:
            by_view.setdefault(v, []).append(i)

    for v, queries in by_view.items():
        donors = np.where(dataset.mask[:, v] == 1)[0]
        if donors.size == 0:
            raise ValueError(f"no sample observes view {v}; cannot impute")
        q = np.asarray(sorted(queries))
        dmu = agg.mu[q][:, None, :] - agg.mu[donors][None, :, :]
        dsd = sd[q][:, None, :] - sd[donors][None, :, :]
        dist = np.sqrt((dmu * dmu).sum(-1) + (dsd * dsd).sum(-1))  # (nq, nd)
        kk = min(int(k), donors.size)
        # stable top-k per row (full argsort keeps ties deterministic)
        order = np.argsort(dist, axis=1, kind="stable")[:, :kk]
        rows = np.arange(q.size)[:, None]
        dn = dist[rows, order]
        e = np.exp(-(dn - dn.min(axis=1, keepdims=True)))
        w = e / e.sum(axis=1, keepdims=True)
        nb = donors[order]
        mu_nb = view_posteriors[v].mu[nb]  # (nq, kk, d)
        var_nb = view_posteriors[v].var[nb]
        mu_hat = np.einsum("qk,qkd->qd", w, mu_nb)
        var_hat = np.einsum("qk,qkd->qd", w, var_nb)
        var_hat += np.einsum("qk,qkd->qd", w, (mu_nb - mu_hat[:, None, :]) ** 2)
        for r, i in enumerate(q.tolist()):
            out[(int(i), int(v))] = GaussianPosterior(mu_hat[r], var_hat[r])
    return out


def responsibilities(prior, z):
    """Posterior cluster probabilities of latent point(s) z under the prior.

    Log-space with max subtraction; rows sum to one. Accepts (d,) or
    (n, d).
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zz = z[None, :] if single else z
    diff = zz[:, None, :] - prior.mu[None]
    ll = -0.5 * (
        (LOG_2PI + np.log(prior.var)).sum(axis=-1)[None, :]
        + (diff**2 / prior.var[None]).sum(axis=-1)
    )
    logits = np.log(prior.pi)[None, :] + ll
    logits = logits - logits.max(axis=1, keepdims=True)
    g = np.exp(logits)
    g /= g.sum(axis=1, keepdims=True)
    return g[0] if single else g


def kl_diag_gaussian(a, b):
    """KL(N(mu_a, var_a) || N(mu_b, var_b)), summed over dimensions."""
    return 0.5 * (
        np.log(b.var / a.var) + (a.var + (a.mu - b.mu) ** 2) / b.var - 1.0
    ).sum(axis=-1)


def coherence_loss(aggregated, view_posteriors):
    """Mean KL from the fused posterior to each contributing view posterior.

    Zero when every view already agrees with the fusion; always
    non-negative.
    """
    if not view_posteriors:
        raise ValueError("need at least one view posterior")
    total = sum(kl_diag_gaussian(aggregated, p) for p in view_posteriors)
    return float(total) / len(view_posteriors)


@dataclass
class LossTerms:
    recon: float
    kl_gauss: float
    kl_cat: float
    coherence: float
    alpha: float

    @property
    def elbo(self):
        """Negative ELBO (the quantity being minimized, before coherence)."""
        return self.recon + self.kl_gauss + self.kl_cat

    @property
    def total(self):
        return self.elbo + self.alpha * self.coherence

    def as_dict(self):
        return {
            "recon": self.recon,
            "kl_gauss": self.kl_gauss,
            "kl_cat": self.kl_cat,
            "coherence": self.coherence,
            "total": self.total,
        }


def _check_finite(name, value):
    if not np.all(np.isfinite(value)):
        raise NonFiniteLossError(name, float(np.asarray(value).ravel()[0]))


def loss_and_grads(model, dataset, batch_idx, eps, alpha=0.0, imputations=None):
    """Training objective and analytic gradients on one batch.

    eps is the frozen reparameterization noise, shape (len(batch), d_z).
    imputations maps (sample, view) -> GaussianPosterior and is treated as
    constant (no gradients flow into imputed experts). Returns
    (LossTerms, grads) with grads aligned to ``model.parameters()``.
    Raises NonFiniteLossError naming the first non-finite term.
    """
    batch_idx = np.asarray(batch_idx, dtype=np.int64)
    B = batch_idx.size
    d = model.d_z
    V = model.n_views
    K = model.K
    obs = dataset.mask[batch_idx].astype(bool)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != (B, d):
        raise ValueError("noise shape must be (batch, d_z)")
    c = 1.0 / B

    # ---- encode observed views ----
    enc = []
    for v in range(V):
        rows = np.where(obs[:, v])[0]
        mu_v = np.zeros((B, d))
        sd_v = np.ones((B, d))
        cache = None
        if rows.size:
            X = dataset.views[v][batch_idx[rows]]
            out, cache = model.encoders[v].forward(X)
            mu_v[rows] = out[:, :d]
            sd_v[rows] = out[:, d:]
        var_v = sd_v**2
        prec_v = np.where(obs[:, v][:, None], 1.0 / var_v, 0.0)
        enc.append(
            {"rows": rows, "cache": cache, "mu": mu_v, "sd": sd_v,
             "var": var_v, "prec": prec_v}
        )

    # ---- constant imputed experts ----
    pos_of = {int(g): b for b, g in enumerate(batch_idx)}
    iprec = np.zeros((B, d))
    inum = np.zeros((B, d))
    if imputations:
        for (i, v), post in imputations.items():
            b = pos_of.get(int(i))
            if b is None:
                continue
            if obs[b, v]:
                raise ValueError(f"position ({i}, {v}) is observed; cannot stack an imputed expert")
            iprec[b] += 1.0 / post.var
            inum[b] += post.mu / post.var

    # ---- product of experts ----
    P = iprec.copy()
    num = inum.copy()
    for e in enc:
        P += e["prec"]
        num += e["prec"] * e["mu"]
    var_agg = 1.0 / P
    mu_agg = num * var_agg
    sd_agg = np.sqrt(var_agg)
    z = mu_agg + sd_agg * eps

    # ---- mixture prior ----
    prior = model.prior
    pi = prior.pi
    log_pi = np.log(pi)
    mu_k = prior.mu
    var_k = prior.var
    diff = z[:, None, :] - mu_k[None]
    ll = -0.5 * (
        (LOG_2PI + np.log(var_k)).sum(axis=-1)[None, :]
        + (diff**2 / var_k[None]).sum(axis=-1)
    )
    logits = log_pi[None, :] + ll
    log_gamma = logits - logits.max(axis=1, keepdims=True)
    log_gamma = log_gamma - np.log(np.exp(log_gamma).sum(axis=1, keepdims=True))
    gamma = np.exp(log_gamma)

    kl_k = 0.5 * (
        np.log(var_k).sum(axis=-1)[None, :]
        - np.log(var_agg).sum(axis=-1)[:, None]
        + ((var_agg[:, None, :] + (mu_agg[:, None, :] - mu_k[None]) ** 2) / var_k[None]).sum(axis=-1)
        - d
    )
    t2 = (gamma * kl_k).sum(axis=1)
    t3 = (gamma * (log_gamma - log_pi[None, :])).sum(axis=1)

    # ---- reconstruction over observed views ----
    recon = np.zeros(B)
    dec_cache = []
    for v in range(V):
        rows = enc[v]["rows"]
        if rows.size == 0:
            dec_cache.append(None)
            continue
        out, cache = model.decoders[v].forward(z[rows])
        X = dataset.views[v][batch_idx[rows]]
        if model.likelihoods[v] == "gaussian":
            d_v = X.shape[1]
            m_x, s_x = out[:, :d_v], out[:, d_v:]
            nll = 0.5 * (LOG_2PI + 2.0 * np.log(s_x) + ((X - m_x) / s_x) ** 2).sum(axis=1)
        else:
            t = out  # identity head: logits
            nll = (softplus(t) - X * t).sum(axis=1)
        recon[rows] += nll
        dec_cache.append((cache, X, out))

    # ---- coherence ----
    nobs = obs.sum(axis=1)
    ch = np.zeros(B)
    for v in range(V):
        m = obs[:, v]
        if not m.any():
            continue
        term = 0.5 * (
            np.log(enc[v]["var"]) - np.log(var_agg)
            + (var_agg + (mu_agg - enc[v]["mu"]) ** 2) / enc[v]["var"]
            - 1.0
        ).sum(axis=1)
        ch += np.where(m, term, 0.0)
    ch /= nobs

    terms = LossTerms(
        recon=float(recon.mean()),
        kl_gauss=float(t2.mean()),
        kl_cat=float(t3.mean()),
        coherence=float(ch.mean()),
        alpha=float(alpha),
    )
    _check_finite("reconstruction", terms.recon)
    _check_finite("gaussian_kl", terms.kl_gauss)
    _check_finite("categorical_kl", terms.kl_cat)
    _check_finite("coherence", terms.coherence)

    # ================= backward =================
    g_z = np.zeros((B, d))
    dec_grads = []
    for v in range(V):
        if dec_cache[v] is None:
            dec_grads.append([np.zeros_like(p) for p in model.decoders[v].parameters()])
            continue
        cache, X, out = dec_cache[v]
        rows = enc[v]["rows"]
        if model.likelihoods[v] == "gaussian":
            d_v = X.shape[1]
            m_x, s_x = out[:, :d_v], out[:, d_v:]
            d_m = c * (m_x - X) / s_x**2
            d_s = c * (1.0 / s_x - (X - m_x) ** 2 / s_x**3)
            d_out = np.concatenate([d_m, d_s], axis=1)
        else:
            d_out = c * (sigmoid(out) - X)
        gv, dz_rows = model.decoders[v].backward(cache, d_out)
        g_z[rows] += dz_rows
        dec_grads.append(gv)

    # gamma-dependent paths
    d_gamma = c * (kl_k + log_gamma - log_pi[None, :] + 1.0)
    d_logits = gamma * (d_gamma - (gamma * d_gamma).sum(axis=1, keepdims=True))
    inv_vk = 1.0 / var_k
    g_z += -np.einsum("bk,bkd->bd", d_logits, diff * inv_vk[None])

    d_log_pi = d_logits.sum(axis=0) - c * gamma.sum(axis=0)
    d_pi_logits = d_log_pi - pi * d_log_pi.sum()

    d_mu_k = np.einsum("bk,bkd->kd", d_logits, diff * inv_vk[None])
    d_var_k = np.einsum(
        "bk,bkd->kd", d_logits, -0.5 * (inv_vk[None] - diff**2 * inv_vk[None] ** 2)
    )

    w_bk = c * gamma
    mu_diff = (mu_agg[:, None, :] - mu_k[None]) * inv_vk[None]
    d_mu_agg = np.einsum("bk,bkd->bd", w_bk, mu_diff)
    d_var_agg = 0.5 * (
        np.einsum("bk,kd->bd", w_bk, inv_vk) - w_bk.sum(axis=1)[:, None] / var_agg
    )
    d_mu_k += np.einsum("bk,bkd->kd", w_bk, -mu_diff)
    d_var_k += np.einsum(
        "bk,bkd->kd",
        w_bk,
        0.5 * (inv_vk[None]
               - (var_agg[:, None, :] + (mu_agg[:, None, :] - mu_k[None]) ** 2)
               * inv_vk[None] ** 2),
    )

    # reparameterized sample
    d_mu_agg += g_z
    d_var_agg += g_z * eps / (2.0 * sd_agg)

    # coherence contributions
    ch_direct = [None] * V
    if alpha != 0.0:
        coef = (c * alpha / nobs)[:, None]
        for v in range(V):
            m = obs[:, v][:, None]
            mu_v, var_v = enc[v]["mu"], enc[v]["var"]
            d_mu_agg += np.where(m, coef * (mu_agg - mu_v) / var_v, 0.0)
            d_var_agg += np.where(m, coef * 0.5 * (1.0 / var_v - 1.0 / var_agg), 0.0)
            dm_dir = np.where(m, coef * (mu_v - mu_agg) / var_v, 0.0)
            dv_dir = np.where(
                m,
                coef * 0.5 * (1.0 / var_v - var_agg / var_v**2
                              - (mu_agg - mu_v) ** 2 / var_v**2),
                0.0,
            )
            ch_direct[v] = (dm_dir, dv_dir)

    # product-of-experts backward into each observed expert
    enc_grads = []
    for v in range(V):
        rows = enc[v]["rows"]
        if rows.size == 0:
            enc_grads.append([np.zeros_like(p) for p in model.encoders[v].parameters()])
            continue
        m = obs[:, v][:, None]
        p_v = enc[v]["prec"]
        mu_v, sd_v, var_v = enc[v]["mu"], enc[v]["sd"], enc[v]["var"]
        d_m_v = d_mu_agg * p_v * var_agg
        d_p = np.where(
            m, d_mu_agg * (mu_v - mu_agg) * var_agg - d_var_agg * var_agg**2, 0.0
        )
        d_var_v = -d_p * p_v**2
        if ch_direct[v] is not None:
            d_m_v = d_m_v + ch_direct[v][0]
            d_var_v = d_var_v + ch_direct[v][1]
        d_sd_v = d_var_v * 2.0 * sd_v
        d_out = np.concatenate([d_m_v[rows], d_sd_v[rows]], axis=1)
        gv, _ = model.encoders[v].backward(enc[v]["cache"], d_out)
        enc_grads.append(gv)

    grads = []
    for gv in enc_grads:
        grads.extend(gv)
    for gv in dec_grads:
        grads.extend(gv)
    grads.extend([d_pi_logits, d_mu_k, d_var_k * sigmoid(model.prior_rho)])
    return terms, grads


def elbo_loss(model, dataset, batch_idx, eps, imputations=None):
    """Negative ELBO and its gradients (no coherence term)."""
    return loss_and_grads(model, dataset, batch_idx, eps, alpha=0.0,
                          imputations=imputations)


MODEL_MAGIC = "imvc-model-v1"


def save_model(model, path):
    """Versioned JSON checkpoint: networks, likelihoods, mixture parameters."""
    payload = {
        "magic": MODEL_MAGIC,
        "d_z": model.d_z,
        "K": model.K,
        "likelihoods": model.likelihoods,
        "encoders": [net.to_dict() for net in model.encoders],
        "decoders": [net.to_dict() for net in model.decoders],
        "pi_logits": model.pi_logits.tolist(),
        "prior_mu": model.prior_mu.tolist(),
        "prior_rho": model.prior_rho.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_model(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("magic") != MODEL_MAGIC:
        raise ValueError(f"not a {MODEL_MAGIC} checkpoint: {path}")
    model = DmgmmModel(
        encoders=[Mlp.from_dict(d) for d in payload["encoders"]],
        decoders=[Mlp.from_dict(d) for d in payload["decoders"]],
        likelihoods=payload["likelihoods"],
        d_z=payload["d_z"],
        K=payload["K"],
    )
    model.pi_logits = np.asarray(payload["pi_logits"], dtype=np.float64)
    model.prior_mu = np.asarray(payload["prior_mu"], dtype=np.float64)
    model.prior_rho = np.asarray(payload["prior_rho"], dtype=np.float64)
    return model
