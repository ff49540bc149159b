"""Bias-guided generative network over binary attribute vectors.

A VAE with a Gaussian encoder ``q(z|a)`` and a factorised Bernoulli decoder
``p(a|z)`` is first fitted to the observed groups by maximising the ELBO.
Fine-tuning then alternates two updates on prior samples ``z ~ N(0, I)``:

* encoder: ascend ``log q(z|a)`` for ``a ~ p(a|z)``;
* decoder: REINFORCE on the reward ``r = log q(z|a) + predicted_bias(a)``
  with a baseline subtracted, plus a pathwise gradient of the decoder's
  Bernoulli entropy weighted by ``eta``.

Sign convention: ``r`` is maximised, so every optimizer here receives the
gradient of the *negated* objective.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from unfairgen import nncore
from unfairgen.attrspace import GroupBiasTable, as_bit_matrix
from unfairgen.kernels import pack_bits, unpack_codes

BASELINE_MODES = ("independent_copy", "batch_mean", "none")


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


@dataclass
class ModelConfig:
    latent_dim: int = 16
    hidden: int = 64
    activation: str = "tanh"
    seed: int = 0


class GenerativeModel:
    """Encoder trunk with parallel mean / log-variance heads, and an MLP decoder."""

    def __init__(self, encoder, enc_mean, enc_logvar, decoder, lineage=()):
        if encoder.sizes[-1] != enc_mean.sizes[0] or encoder.sizes[-1] != enc_logvar.sizes[0]:
            raise ValueError("encoder heads do not match the trunk width")
        if enc_mean.sizes[-1] != enc_logvar.sizes[-1] or decoder.sizes[0] != enc_mean.sizes[-1]:
            raise ValueError("latent sizes of encoder heads and decoder differ")
        if decoder.sizes[-1] != encoder.sizes[0] or decoder.activations[-1] != "sigmoid":
            raise ValueError("decoder must map the latent back to d sigmoid outputs")
        self.encoder = encoder
        self.enc_mean = enc_mean
        self.enc_logvar = enc_logvar
        self.decoder = decoder
        self.lineage = list(lineage)

    @classmethod
    def create(cls, dimension: int, config: ModelConfig | None = None) -> "GenerativeModel":
        cfg = config or ModelConfig()
        rng = np.random.default_rng(cfg.seed)
        h, k, act = cfg.hidden, cfg.latent_dim, cfg.activation
        encoder = nncore.Mlp.init((dimension, h, h), (act, act), rng)
        enc_mean = nncore.Mlp.init((h, k), ("identity",), rng)
        enc_logvar = nncore.Mlp.init((h, k), ("identity",), rng)
        decoder = nncore.Mlp.init((k, h, h, dimension), (act, act, "sigmoid"), rng)
        return cls(encoder, enc_mean, enc_logvar, decoder, lineage=[f"init:{cfg.seed}"])

    @property
    def dimension(self) -> int:
        return self.encoder.sizes[0]

    @property
    def latent_dim(self) -> int:
        return self.enc_mean.sizes[-1]

    def encoder_modules(self) -> list:
        return [self.encoder, self.enc_mean, self.enc_logvar]

    def encoder_params(self) -> list:
        return [p for m in self.encoder_modules() for p in m.params()]

    def decoder_params(self) -> list:
        return self.decoder.params()

    def touch_encoder(self) -> None:
        for m in self.encoder_modules():
            m.touch()

    def encode(self, bits):
        x = np.asarray(bits, dtype=np.float64)
        hid, c_trunk = nncore.forward(self.encoder, x)
        mean, c_mean = nncore.forward(self.enc_mean, hid)
        logvar, c_lv = nncore.forward(self.enc_logvar, hid)
        return mean, logvar, (c_trunk, c_mean, c_lv)

    def encoder_backward(self, caches, g_mean, g_logvar) -> list:
        c_trunk, c_mean, c_lv = caches
        gm, gh1 = nncore.backward(self.enc_mean, c_mean, g_mean)
        gl, gh2 = nncore.backward(self.enc_logvar, c_lv, g_logvar)
        gt, _ = nncore.backward(self.encoder, c_trunk, gh1 + gh2)
        return gt + gm + gl

    def decode(self, z):
        """Unclamped Bernoulli probabilities for each latent row, plus the cache."""
        return nncore.forward(self.decoder, np.asarray(z, dtype=np.float64))

    def sample(self, z, rng) -> np.ndarray:
        probs, _ = self.decode(z)
        return nncore.bernoulli_sample(probs, rng)

    def copy(self) -> "GenerativeModel":
        return GenerativeModel(*(m.copy() for m in (self.encoder, self.enc_mean, self.enc_logvar, self.decoder)),
                               lineage=self.lineage)

    def digest(self) -> str:
        h = hashlib.sha256()
        for p in self.encoder_params() + self.decoder_params():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()[:16]

    def save(self, path) -> None:
        nncore.save_checkpoint(
            path,
            {"encoder": self.encoder, "enc_mean": self.enc_mean, "enc_logvar": self.enc_logvar,
             "decoder": self.decoder},
            self.lineage,
            extra={"latent_dim": self.latent_dim, "dimension": self.dimension},
        )

    @classmethod
    def load(cls, path) -> "GenerativeModel":
        mods, doc = nncore.load_checkpoint(path)
        return cls(mods["encoder"], mods["enc_mean"], mods["enc_logvar"], mods["decoder"], doc.get("lineage", ()))


# -- ELBO --------------------------------------------------------------------

@dataclass
class ElboResult:
    value: float
    encoder_grads: list
    decoder_grads: list
    reconstruction: np.ndarray
    kl: np.ndarray


def elbo(model: GenerativeModel, batch, rng=None, weights=None, noise=None) -> ElboResult:
    """Weighted mean ELBO of a batch and its exact gradients (ascent direction).

    One reparameterised latent draw per row; pass ``noise`` to fix it.
    """
    a = as_bit_matrix(batch, model.dimension).astype(np.float64)
    n = a.shape[0]
    if n == 0:
        raise ValueError("ELBO of an empty batch")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    mean, logvar, enc_caches = model.encode(a)
    eps = _rng(rng).standard_normal(mean.shape) if noise is None else np.asarray(noise, dtype=np.float64)
    z = nncore.gaussian_reparam(mean, logvar, eps)
    probs, dec_cache = model.decode(z)
    rec = nncore.bernoulli_logpmf(a, probs)
    kl = nncore.kl_to_standard_normal(mean, logvar)
    value = float(w @ (rec - kl))
    if not math.isfinite(value):
        raise FloatingPointError("non-finite ELBO")

    g_logits = (a - probs) * w[:, None]
    dec_grads, g_z = nncore.backward(model.decoder, dec_cache, g_logits, wrt_preactivation=True)
    g_mean, g_logvar = nncore.gaussian_reparam_backward(logvar, eps, g_z)
    kl_m, kl_lv = nncore.kl_to_standard_normal_grad(mean, logvar)
    g_mean = g_mean - kl_m * w[:, None]
    g_logvar = g_logvar - kl_lv * w[:, None]
    enc_grads = model.encoder_backward(enc_caches, g_mean, g_logvar)
    return ElboResult(value, enc_grads, dec_grads, rec, kl)


def _elbo_step(model, batch, weights, rng, enc_opt, dec_opt) -> float:
    res = elbo(model, batch, rng, weights)
    enc_opt.step(model.encoder_params(), [-g for g in res.encoder_grads])
    dec_opt.step(model.decoder_params(), [-g for g in res.decoder_grads])
    model.touch_encoder()
    model.decoder.touch()
    return res.value


def pretrain(model: GenerativeModel, observation: GroupBiasTable, epochs: int = 30, seed: int = 0,
             lr: float = 1e-3, batch_size: int = 64, min_steps: int = 500) -> GenerativeModel:
    """Fit the VAE to the observed groups, each weighted by its support count.

    Updates ``model`` in place and records ``model.history['pretrain']``:
    entry 0 is the evaluation ELBO before training, entry ``e`` after epoch
    ``e`` (fixed evaluation noise so entries are comparable).
    """
    if len(observation) == 0:
        raise ValueError("empty observation table")
    if observation.dimension != model.dimension:
        raise ValueError("observation dimension does not match the model")
    rng = np.random.default_rng(seed)
    eval_noise = np.random.default_rng([seed, 1]).standard_normal((len(observation), model.latent_dim))
    bits = observation.bits
    weights = observation.count.astype(np.float64)

    def evaluate(step):
        try:
            return elbo(model, bits, weights=weights, noise=eval_noise).value
        except FloatingPointError as exc:
            raise FloatingPointError(f"pretraining diverged at iteration {step}: {exc}") from exc

    history = [evaluate(0)]
    enc_opt, dec_opt = nncore.Adam(lr=lr), nncore.Adam(lr=lr)
    n = len(observation)
    batches = -(-n // batch_size)
    epochs = max(epochs, -(-min_steps // batches))
    step = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            try:
                _elbo_step(model, bits[idx], weights[idx], rng, enc_opt, dec_opt)
            except FloatingPointError as exc:
                raise FloatingPointError(f"pretraining diverged at iteration {step}: {exc}") from exc
            step += 1
        history.append(evaluate(step))
    model.lineage.append(f"pretrain:{seed}:{epochs}")
    model.history = getattr(model, "history", {})
    model.history["pretrain"] = history
    return model


# -- rewards and gradient estimators -----------------------------------------

def _predict(predictor, bits) -> np.ndarray:
    if predictor is None:
        return np.zeros(len(bits))
    return np.asarray(predictor.predict_bits(bits), dtype=np.float64)


def log_q(model: GenerativeModel, z, a) -> np.ndarray:
    mean, logvar, _ = model.encode(as_bit_matrix(a, model.dimension))
    return nncore.gaussian_logpdf(np.atleast_2d(z), mean, logvar)


def reward(model: GenerativeModel, z, a, predictor) -> np.ndarray:
    """``log q(z|a) + predicted_bias(a)`` per row."""
    a = as_bit_matrix(a, model.dimension)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape != (a.shape[0], model.latent_dim):
        raise ValueError(f"latent batch {z.shape} does not match {a.shape[0]} attribute rows")
    return log_q(model, z, a) + _predict(predictor, a)


def log_q_grad(model: GenerativeModel, z, a):
    """Mean ``log q(z|a)`` over rows and its gradient w.r.t. the encoder parameters."""
    a = as_bit_matrix(a, model.dimension).astype(np.float64)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    mean, logvar, caches = model.encode(a)
    lq = nncore.gaussian_logpdf(z, mean, logvar)
    _, d_mean, d_lv = nncore.gaussian_logpdf_grad(z, mean, logvar)
    n = a.shape[0]
    return float(lq.mean()), model.encoder_backward(caches, d_mean / n, d_lv / n)


def inference_step(model: GenerativeModel, z, rng, optimizer: nncore.Adam) -> float:
    """Sample ``a ~ p(a|z)`` and ascend ``log q(z|a)`` w.r.t. the encoder only.

    Returns the mean ``log q`` before the update.
    """
    rng = _rng(rng)
    a = model.sample(z, rng)
    value, grads = log_q_grad(model, z, a)
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite inference gradient")
    optimizer.step(model.encoder_params(), [-g for g in grads])
    model.touch_encoder()
    return value


def reinforce_grad(model: GenerativeModel, z, a, reward_value, baseline, eta: float = 0.0) -> list:
    """Decoder gradient of the loss ``-mean[(r - C) log p(a|z)] - eta * mean[Ent(p(.|z))]``.

    The first term is the score-function estimator (``r`` and ``C`` are
    treated as constants); the entropy term is differentiated pathwise.
    """
    a = as_bit_matrix(a, model.dimension).astype(np.float64)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[0] != a.shape[0]:
        raise ValueError("one latent row per attribute row required")
    coef = np.broadcast_to(np.asarray(reward_value, dtype=np.float64) - baseline, (a.shape[0],))
    probs, cache = model.decode(z)
    logits = cache.final_preact
    n = a.shape[0]
    g = -coef[:, None] * (a - probs)
    if eta:
        g = g + eta * logits * probs * (1.0 - probs)
    grads, _ = nncore.backward(model.decoder, cache, g / n, wrt_preactivation=True)
    return grads


def estimate_baseline(model: GenerativeModel, z_prime, predictor, mode: str = "independent_copy",
                      rng=None, batch_rewards=None):
    """Control variate for the decoder update.

    ``independent_copy``: mean reward of fresh ``a' ~ p(a|z')`` on latents
    ``z'`` drawn independently of the update batch (a float).
    ``batch_mean``: for each sample, mean reward of the *other* samples in
    the batch (an array; 0 for a batch of one).
    """
    if mode == "independent_copy":
        z_prime = np.atleast_2d(np.asarray(z_prime, dtype=np.float64))
        a_prime = model.sample(z_prime, _rng(rng))
        return float(reward(model, z_prime, a_prime, predictor).mean())
    if mode == "batch_mean":
        r = np.asarray(batch_rewards, dtype=np.float64)
        if r.size < 2:
            return np.zeros_like(r)
        return (r.sum() - r) / (r.size - 1)
    if mode == "none":
        return 0.0
    raise ValueError(f"unknown baseline mode {mode!r}")


def decoder_logit_jacobian(model: GenerativeModel, z_row) -> tuple[np.ndarray, np.ndarray]:
    """``(probs, G)`` for one latent: column ``i`` of ``G`` is d logit_i / d theta (flattened).

    ``grad_theta log p(a|z) = G @ (a - probs)`` for every outcome ``a``.
    """
    z = np.asarray(z_row, dtype=np.float64).reshape(1, -1)
    probs, cache = model.decode(z)
    d = model.dimension
    cols = []
    for i in range(d):
        e = np.zeros((1, d))
        e[0, i] = 1.0
        grads, _ = nncore.backward(model.decoder, cache, e, wrt_preactivation=True)
        cols.append(np.concatenate([g.ravel() for g in grads]))
    return probs[0], np.stack(cols, axis=1)


def outcome_probabilities(probs, outcomes) -> np.ndarray:
    """Exact ``p(a|z)`` for each outcome row under unclamped factorised Bernoulli probs."""
    a = np.asarray(outcomes, dtype=np.float64)
    return np.prod(np.where(a > 0, probs, 1.0 - probs), axis=1)


def optimal_baseline_oracle(model: GenerativeModel, z, predictor, cap: int = 10) -> float:
    """Variance-minimising constant ``C* = E[r |g|^2] / E[|g|^2]`` by full enumeration.

    ``g = grad_theta log p(a|z)``; the expectation runs over the given latent
    rows (uniformly) and all ``2^d`` outcomes. Test oracle only.
    """
    d = model.dimension
    if d > cap:
        raise ValueError(f"outcome space 2^{d} exceeds the enumeration cap 2^{cap}")
    outcomes = unpack_codes(np.arange(1 << d, dtype=np.int64), d)
    num = den = 0.0
    for z_row in np.atleast_2d(np.asarray(z, dtype=np.float64)):
        probs, G = decoder_logit_jacobian(model, z_row)
        pa = outcome_probabilities(probs, outcomes)
        sq = np.sum((G @ (outcomes - probs).T) ** 2, axis=0)
        r = reward(model, np.repeat(z_row[None, :], len(outcomes), axis=0), outcomes, predictor)
        num += float(np.sum(pa * r * sq))
        den += float(np.sum(pa * sq))
    return num / den


# -- fine-tuning -------------------------------------------------------------

@dataclass
class FineTuneConfig:
    iterations: int = 500
    batch_size: int = 64
    lr_encoder: float = 1e-3
    lr_decoder: float = 5e-4
    eta: float = 0.01
    resample_number: int = 5
    filter_proportion: float = 0.2
    replay_interval: int = 10
    replay_fraction: float = 0.2
    baseline: str = "independent_copy"
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")
        if self.lr_encoder <= 0 or self.lr_decoder <= 0:
            raise ValueError("learning rates must be > 0")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.resample_number < 1 or not 0.0 < self.filter_proportion <= 1.0:
            raise ValueError("need resample_number >= 1 and filter_proportion in (0, 1]")
        if not 0.0 <= self.replay_fraction <= 1.0 or self.replay_interval < 0:
            raise ValueError("replay_fraction must lie in [0, 1] and replay_interval >= 0")
        if self.baseline not in BASELINE_MODES:
            raise ValueError(f"baseline must be one of {BASELINE_MODES}")


def n_kept(resample_number: int, filter_proportion: float) -> int:
    return max(1, math.ceil(filter_proportion * resample_number - 1e-9))


def resample_and_filter(model: GenerativeModel, z, predictor, resample_number: int,
                        filter_proportion: float, rng):
    """Draw ``R`` candidates per latent and keep the top ``ceil(rho R)`` by predicted bias.

    Returns ``(z_kept, a_kept)`` with kept rows grouped per latent.
    """
    z = np.atleast_2d(z)
    b, d, R = z.shape[0], model.dimension, resample_number
    probs, _ = model.decode(z)
    cand = (rng.random((b, R, d)) < probs[:, None, :]).astype(np.uint8)
    keep = n_kept(R, filter_proportion)
    if keep == R:
        return np.repeat(z, R, axis=0), cand.reshape(b * R, d)
    scores = _predict(predictor, cand.reshape(b * R, d)).reshape(b, R)
    top = np.argsort(-scores, axis=1, kind="stable")[:, :keep]
    kept = np.take_along_axis(cand, top[:, :, None], axis=1)
    return np.repeat(z, keep, axis=0), kept.reshape(b * keep, d)


def _replay_pool(observation: GroupBiasTable, fraction: float) -> np.ndarray:
    n_top = max(1, int(math.ceil(fraction * len(observation))))
    order = np.lexsort((observation.codes, -observation.bias))
    return order[:n_top]


def finetune(model: GenerativeModel, predictor, observation: GroupBiasTable,
             config: FineTuneConfig | None = None, log: list | None = None) -> GenerativeModel:
    """Bias-guided fine-tuning; updates ``model`` in place.

    Each iteration: encoder step on prior latents; resample-and-filter
    candidates; reward and baseline; decoder REINFORCE step; and every
    ``replay_interval`` iterations an ELBO step on observed high-bias groups.
    Per-iteration statistics are appended to ``log`` when given.
    """
    cfg = config or FineTuneConfig()
    if predictor is not None and getattr(predictor, "dimension", model.dimension) != model.dimension:
        raise ValueError("predictor dimension does not match the model")
    rng = np.random.default_rng(cfg.seed)
    k = model.latent_dim
    enc_opt = nncore.Adam(lr=cfg.lr_encoder)
    dec_opt = nncore.Adam(lr=cfg.lr_decoder)
    pool = _replay_pool(observation, cfg.replay_fraction) if cfg.replay_fraction > 0 else None

    for it in range(cfg.iterations):
        try:
            z = rng.standard_normal((cfg.batch_size, k))
            lq = inference_step(model, z, rng, enc_opt)

            z_sel, a_sel = resample_and_filter(model, z, predictor, cfg.resample_number,
                                               cfg.filter_proportion, rng)
            r = reward(model, z_sel, a_sel, predictor)
            if cfg.baseline == "independent_copy":
                z_prime = rng.standard_normal((cfg.batch_size, k))
                c = estimate_baseline(model, z_prime, predictor, "independent_copy", rng)
            else:
                c = estimate_baseline(model, None, predictor, cfg.baseline, rng, batch_rewards=r)
            grads = reinforce_grad(model, z_sel, a_sel, r, c, cfg.eta)
            dec_opt.step(model.decoder_params(), grads)
            model.decoder.touch()
            if not math.isfinite(float(r.mean())):
                raise FloatingPointError("non-finite reward")

            replay = None
            if pool is not None and cfg.replay_interval and (it + 1) % cfg.replay_interval == 0:
                rows = rng.choice(pool, size=min(cfg.batch_size, pool.size), replace=pool.size < cfg.batch_size)
                replay = _elbo_step(model, observation.bits[rows], observation.count[rows].astype(np.float64),
                                    rng, enc_opt, dec_opt)
        except FloatingPointError as exc:
            raise FloatingPointError(f"fine-tuning diverged at iteration {it}: {exc}") from exc
        if log is not None:
            probs, _ = model.decode(z)
            log.append({
                "iteration": it,
                "mean_reward": float(r.mean()),
                "baseline": float(np.mean(c)),
                "entropy": float(nncore.bernoulli_entropy(probs).mean()),
                "log_q": lq,
                "replay_elbo": replay,
            })
    model.lineage.append(f"finetune:{cfg.seed}:{cfg.iterations}")
    return model


# -- generation --------------------------------------------------------------

@dataclass
class GeneratedSet:
    bits: np.ndarray
    predicted: np.ndarray
    truth: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bits = as_bit_matrix(self.bits)
        self.predicted = np.asarray(self.predicted, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=np.float64)
        if not (len(self.bits) == len(self.predicted) == len(self.truth)):
            raise ValueError("bits, predicted and truth must align")
        if np.any(self.predicted < 0):
            raise ValueError("predicted bias must be non-negative")

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def codes(self) -> np.ndarray:
        return pack_bits(self.bits)

    @property
    def dimension(self) -> int:
        return self.bits.shape[1]

    def to_csv(self, path) -> None:
        d = self.dimension
        lines = [",".join([f"a{i}" for i in range(d)] + ["predicted_bias", "true_bias"])]
        for row, p, t in zip(self.bits, self.predicted, self.truth):
            lines.append(",".join([str(int(v)) for v in row] + [repr(float(p)), "" if np.isnan(t) else repr(float(t))]))
        Path(path).write_text("\n".join(lines) + "\n")
        Path(path).with_suffix(".meta.json").write_text(json.dumps(self.metadata, sort_keys=True, indent=2) + "\n")

    @classmethod
    def from_csv(cls, path) -> "GeneratedSet":
        rows = Path(path).read_text().strip().splitlines()
        d = len(rows[0].split(",")) - 2
        bits, pred, truth = [], [], []
        for line in rows[1:]:
            parts = line.split(",")
            bits.append([int(v) for v in parts[:d]])
            pred.append(float(parts[d]))
            truth.append(float(parts[d + 1]) if parts[d + 1] else np.nan)
        meta_path = Path(path).with_suffix(".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        bits_arr = np.array(bits, dtype=np.uint8).reshape(-1, d)
        return cls(bits_arr, pred, truth, meta)


def annotate(bits, predictor, reference: GroupBiasTable | None = None, metadata=None) -> GeneratedSet:
    bits = as_bit_matrix(bits)
    pred = _predict(predictor, bits) if len(bits) else np.zeros(0)
    if reference is not None and len(bits):
        _, truth = reference.lookup_bits(bits)
    else:
        truth = np.full(len(bits), np.nan)
    return GeneratedSet(bits, pred, truth, dict(metadata or {}))


def generate(model: GenerativeModel, n: int, predictor, tau: float | None = None,
             reference: GroupBiasTable | None = None, seed=0) -> GeneratedSet:
    """Sample ``n`` attribute vectors from the prior-decoder chain.

    With ``tau`` set, only samples whose predicted bias is at least ``tau``
    are kept (conditional generation by filtering).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _rng(seed)
    z = rng.standard_normal((n, model.latent_dim))
    bits = model.sample(z, rng)
    gen = annotate(bits, predictor, reference,
                   {"model": model.digest(), "seed": seed if isinstance(seed, int) else None, "count": n})
    if tau is not None:
        keep = gen.predicted >= tau
        gen = GeneratedSet(gen.bits[keep], gen.predicted[keep], gen.truth[keep],
                           {**gen.metadata, "tau": tau, "retained": int(keep.sum())})
    return gen


def model_marginal_oracle(model: GenerativeModel, a, n_z: int = 10000, seed=0) -> np.ndarray:
    """Monte Carlo ``p(a) ~ mean_j p(a|z_j)`` with ``z_j`` from the prior.

    All rows of ``a`` share the same latent draws, so over the full space the
    estimates sum to one.
    """
    bits = as_bit_matrix(a, model.dimension).astype(np.float64)
    z = _rng(seed).standard_normal((n_z, model.latent_dim))
    probs, _ = model.decode(z)
    p = nncore.clamp_probs(probs)
    logp = bits @ np.log(p).T + (1.0 - bits) @ np.log1p(-p).T
    return np.exp(logp).mean(axis=1)


def config_doc(cfg) -> dict:
    return asdict(cfg)
