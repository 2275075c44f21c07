"""Learned feedback reliability layer and its training loops.

The encoder is applied once per round to the secured block (bipolar) plus
zero-padded histories of its own outputs and both receivers' feedback;
the decoder maps Bob's n observations to logits over the 2^q block
values.  Training backpropagates through the whole unrolled
encode/channel/decode pipeline with the additive noise realizations held
as constants.  A second training mode adds a leakage penalty with a dual
ascent on the multiplier.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelConfig, substream
from .mi import DIME_VARIANTS, MiSampleSet, train_score_net, default_mi_train_config
from .nn_core import (
    AdamState,
    DenseNet,
    LossStats,
    TrainConfig,
    backward,
    cce_loss,
    forward,
    init_dense,
    load_net,
    optimizer_step,
    save_net,
    softmax,
)
from .security import Seed, decoding_table

LN2 = float(np.log(2.0))
_NORM_EPS = 1e-12


class CodeError(ValueError):
    pass


@dataclass(frozen=True)
class CodeArchitecture:
    """Geometry of the learned code networks."""

    q: int
    n: int
    d_h: int = 32

    @property
    def d_in_encoder(self) -> int:
        # secured block plus three history streams (own x, Bob fb, Eve fb)
        return self.q + 3 * (self.n - 1)

    @property
    def d_in_decoder(self) -> int:
        return self.n

    @property
    def num_classes(self) -> int:
        return 1 << self.q


@dataclass
class CodeNet:
    """Feature extractor (two dense layers + additive skip projection to
    width d_h) followed by a two-hidden-layer MLP head."""

    feat: DenseNet
    skip: DenseNet
    head: DenseNet

    def params(self):
        return self.feat.params() + self.skip.params() + self.head.params()

    def set_params(self, flat):
        nf = len(self.feat.params())
        ns = len(self.skip.params())
        self.feat.set_params(flat[:nf])
        self.skip.set_params(flat[nf:nf + ns])
        self.head.set_params(flat[nf + ns:])


def init_code_net(d_in: int, d_h: int, d_out: int, rng: np.random.Generator) -> CodeNet:
    return CodeNet(
        feat=init_dense([d_in, d_h, d_h], ["gelu", "gelu"], rng),
        skip=init_dense([d_in, d_h], ["linear"], rng),
        head=init_dense([d_h, d_h, d_h, d_out], ["gelu", "gelu", "linear"], rng),
    )


def code_net_forward(net: CodeNet, u: np.ndarray):
    f, cache_f = forward(net.feat, u)
    s, cache_s = forward(net.skip, u)
    out, cache_h = forward(net.head, f + s)
    return out, (cache_f, cache_s, cache_h)


def code_net_backward(net: CodeNet, dout: np.ndarray, cache):
    cache_f, cache_s, cache_h = cache
    g_h, dfs = backward(net.head, dout, cache_h)
    g_f, du1 = backward(net.feat, dfs, cache_f)
    g_s, du2 = backward(net.skip, dfs, cache_s)
    return g_f + g_s + g_h, du1 + du2


@dataclass
class PowerNormalizer:
    """Per-round output statistics enforcing the average power constraint.

    Batch mode recomputes (mu, sigma) from each training batch; frozen
    mode replays statistics captured from training and is required for
    evaluation.
    """

    mu: np.ndarray
    sigma: np.ndarray
    mode: str = "batch"  # "batch" | "frozen"

    @classmethod
    def fresh(cls, n: int) -> "PowerNormalizer":
        return cls(mu=np.zeros(n), sigma=np.ones(n), mode="batch")

    def frozen_copy(self) -> "PowerNormalizer":
        return PowerNormalizer(mu=self.mu.copy(), sigma=self.sigma.copy(), mode="frozen")


@dataclass
class TrainedCode:
    """A trained (encoder, decoder) pair plus everything needed to rerun it."""

    arch: CodeArchitecture
    channel: ChannelConfig
    encoder: CodeNet
    decoder: CodeNet
    normalizer: PowerNormalizer
    seed: int
    telemetry: dict = field(default_factory=dict)


def _slices(arch: CodeArchitecture):
    q, n = arch.q, arch.n
    return (slice(q, q + n - 1),
            slice(q + n - 1, q + 2 * (n - 1)),
            slice(q + 2 * (n - 1), q + 3 * (n - 1)))


def bipolar_bits(v_ints: np.ndarray, q: int) -> np.ndarray:
    """(B, q) array of +-1 values, MSB first."""
    shifts = np.arange(q - 1, -1, -1)
    bits = (v_ints[:, None] >> shifts[None, :]) & 1
    return 2.0 * bits - 1.0


@dataclass
class _UnrollCache:
    u: list
    enc_caches: list
    raw: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    xhat: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    y_fb: np.ndarray
    z_fb: np.ndarray
    dec_cache: object
    logits: np.ndarray


def encode_round(encoder: CodeNet, i: int, u: np.ndarray,
                 normalizer: PowerNormalizer, P: float):
    """Round-i symbol: sqrt(P) * (raw - mu_i) / sigma_i.

    In batch mode the statistics come from this batch and are written back
    into the normalizer; frozen mode replays stored statistics.
    """
    raw, cache = code_net_forward(encoder, u)
    raw = raw[:, 0]
    if normalizer.mode == "batch":
        mu = float(raw.mean())
        sigma = float(np.sqrt(np.mean((raw - mu) ** 2) + _NORM_EPS))
        normalizer.mu[i] = mu
        normalizer.sigma[i] = sigma
    elif normalizer.mode == "frozen":
        mu, sigma = float(normalizer.mu[i]), float(normalizer.sigma[i])
    else:
        raise CodeError(f"unknown normalizer mode {normalizer.mode!r}")
    xhat = (raw - mu) / sigma
    x = np.sqrt(P) * xhat
    return x, (raw, mu, sigma, xhat, cache)


def _draw_noises(cfg: ChannelConfig, B: int, rng: np.random.Generator):
    def noise(s2):
        if s2 == 0.0:
            return np.zeros((B, cfg.n))
        return rng.normal(0.0, np.sqrt(s2), size=(B, cfg.n))

    return noise(cfg.sigma2_yf), noise(cfg.sigma2_zf), noise(cfg.sigma2_yfb), noise(cfg.sigma2_zfb)


def unroll_forward(code: TrainedCode, v_ints: np.ndarray, noises,
                   normalizer: PowerNormalizer,
                   history_fill: float = 0.0) -> _UnrollCache:
    """Run the full encode/channel/decode pipeline on one batch.

    noises is the (n_y, n_z, n_yfb, n_zfb) tuple of (B, n) constants.
    history_fill seeds the not-yet-written history entries; outputs must
    not depend on it (padded encoder-input positions stay zero).
    """
    arch, cfg = code.arch, code.channel
    n_y, n_z, n_yfb, n_zfb = noises
    B = v_ints.shape[0]
    n = arch.n
    sx, sy, sz = _slices(arch)
    v_bip = bipolar_bits(v_ints, arch.q)

    us, enc_caches = [], []
    raw = np.empty((B, n))
    mu = np.empty(n)
    sigma = np.empty(n)
    xhat = np.empty((B, n))
    x = np.full((B, n), history_fill)
    y = np.full((B, n), history_fill)
    z = np.full((B, n), history_fill)
    y_fb = np.full((B, n), history_fill)
    z_fb = np.full((B, n), history_fill)
    for i in range(n):
        u = np.zeros((B, arch.d_in_encoder))
        u[:, :arch.q] = v_bip
        if i > 0:
            u[:, sx][:, :i] = x[:, :i]
            u[:, sy][:, :i] = y_fb[:, :i]
            u[:, sz][:, :i] = z_fb[:, :i]
        x_i, (raw_i, mu_i, sigma_i, xhat_i, cache_i) = encode_round(
            code.encoder, i, u, normalizer, cfg.P)
        raw[:, i], mu[i], sigma[i], xhat[:, i], x[:, i] = raw_i, mu_i, sigma_i, xhat_i, x_i
        y[:, i] = x[:, i] + n_y[:, i]
        z[:, i] = x[:, i] + n_z[:, i]
        y_fb[:, i] = y[:, i] + n_yfb[:, i]
        z_fb[:, i] = z[:, i] + n_zfb[:, i]
        us.append(u)
        enc_caches.append(cache_i)

    logits, dec_cache = code_net_forward(code.decoder, y)
    return _UnrollCache(u=us, enc_caches=enc_caches, raw=raw, mu=mu, sigma=sigma,
                        xhat=xhat, x=x, y=y, z=z, y_fb=y_fb, z_fb=z_fb,
                        dec_cache=dec_cache, logits=logits)


def unroll_backward(code: TrainedCode, cache: _UnrollCache, dlogits: np.ndarray,
                    batch_stats: bool, dz_extra: np.ndarray | None = None):
    """Exact gradients of the unrolled pipeline.

    dlogits is dL/d(decoder logits); dz_extra, if given, is dL/dz from a
    leakage penalty evaluated on Eve's observations.  Returns
    (encoder grads, decoder grads).
    """
    arch, cfg = code.arch, code.channel
    n = arch.n
    sx, sy, sz = _slices(arch)
    dec_grads, dy = code_net_backward(code.decoder, dlogits, cache.dec_cache)

    # dL/dx_i accumulates: direct channel paths now, later-round encoder
    # input paths as we sweep backwards.
    dx = dy.copy()
    if dz_extra is not None:
        dx += dz_extra
    enc_grads = None
    sqrt_p = np.sqrt(cfg.P)
    B = dy.shape[0]
    for i in range(n - 1, -1, -1):
        dxi = dx[:, i]
        if batch_stats:
            dxh = sqrt_p * dxi
            xh = cache.xhat[:, i]
            draw = (dxh - dxh.mean() - xh * np.mean(dxh * xh)) / cache.sigma[i]
        else:
            draw = sqrt_p * dxi / cache.sigma[i]
        g, du = code_net_backward(code.encoder, draw[:, None], cache.enc_caches[i])
        enc_grads = g if enc_grads is None else [a + b for a, b in zip(enc_grads, g)]
        if i > 0:
            # x_j, y_fb_j = x_j + const, z_fb_j = x_j + const all feed round i
            dx[:, :i] += du[:, sx][:, :i] + du[:, sy][:, :i] + du[:, sz][:, :i]
    return enc_grads, dec_grads


def init_trained_code(arch: CodeArchitecture, cfg: ChannelConfig,
                      seed: int) -> TrainedCode:
    if cfg.q != arch.q or cfg.n != arch.n:
        raise CodeError("architecture and channel config disagree on (q, n)")
    rng = substream(seed, "init")
    return TrainedCode(
        arch=arch,
        channel=cfg,
        encoder=init_code_net(arch.d_in_encoder, arch.d_h, 1, rng),
        decoder=init_code_net(arch.d_in_decoder, arch.d_h, arch.num_classes, rng),
        normalizer=PowerNormalizer.fresh(arch.n),
        seed=seed,
    )


def train_cce(arch: CodeArchitecture, cfg: ChannelConfig, tr: TrainConfig,
              ema_decay: float = 0.995) -> TrainedCode:
    """Joint CCE training of encoder and decoder through the unroll.

    Per-round normalizer statistics are tracked as an exponential moving
    average and frozen into the returned code for evaluation.
    """
    code = init_trained_code(arch, cfg, tr.seed)
    rng = substream(tr.seed, "train")
    params = code.encoder.params() + code.decoder.params()
    state = AdamState()
    stats = LossStats()
    ema_mu = None
    ema_sigma = None
    losses = []
    lr_cfg = tr
    for step in range(tr.steps):
        if step == (3 * tr.steps) // 4:
            lr_cfg = replace(tr, learning_rate=tr.learning_rate / 10.0)
        v = rng.integers(0, arch.num_classes, size=tr.batch_size)
        noises = _draw_noises(cfg, tr.batch_size, rng)
        cache = unroll_forward(code, v, noises, code.normalizer)
        loss, dlogits = cce_loss(softmax(cache.logits), v, stats)
        if not np.isfinite(loss):
            raise CodeError(f"training diverged at step {step} (loss={loss})")
        losses.append(loss)
        enc_g, dec_g = unroll_backward(code, cache, dlogits, batch_stats=True)
        optimizer_step(params, enc_g + dec_g, state, lr_cfg)
        if ema_mu is None:
            ema_mu = code.normalizer.mu.copy()
            ema_sigma = code.normalizer.sigma.copy()
        else:
            ema_mu = ema_decay * ema_mu + (1 - ema_decay) * code.normalizer.mu
            ema_sigma = ema_decay * ema_sigma + (1 - ema_decay) * code.normalizer.sigma
    code.normalizer = PowerNormalizer(mu=ema_mu, sigma=ema_sigma, mode="frozen")
    code.telemetry = {"loss": losses, "clamped": stats.clamped,
                      "skipped_steps": state.skipped}
    return code


def run_code(code: TrainedCode, v_ints: np.ndarray, rng: np.random.Generator,
             cfg: ChannelConfig | None = None):
    """Evaluation-mode transmission of a batch; returns (v_hat, cache).

    cfg overrides the channel (e.g. a different Eve SNR) without
    retraining; the frozen normalizer is required.
    """
    if code.normalizer.mode != "frozen":
        raise CodeError("evaluation requires a frozen normalizer")
    eval_code = code if cfg is None else replace(code, channel=cfg)
    noises = _draw_noises(eval_code.channel, v_ints.shape[0], rng)
    cache = unroll_forward(eval_code, v_ints, noises, code.normalizer)
    v_hat = np.argmax(cache.logits, axis=1).astype(np.int64)
    return v_hat, cache


def evaluate_bler(code: TrainedCode, trials: int, seed: int,
                  chunk: int = 65536, cfg: ChannelConfig | None = None) -> float:
    rng = substream(seed, "eval")
    errors = 0
    done = 0
    while done < trials:
        B = min(chunk, trials - done)
        v = rng.integers(0, code.arch.num_classes, size=B)
        v_hat, _ = run_code(code, v, rng, cfg=cfg)
        errors += int(np.sum(v_hat != v))
        done += B
    return errors / trials


def collect_code_samples(code: TrainedCode, count: int, seed: int,
                         seed_bits=None, observer: str = "eve",
                         label: str = "message",
                         cfg: ChannelConfig | None = None,
                         chunk: int = 65536) -> MiSampleSet:
    """(label, observation) samples from the trained code for MI estimation."""
    if observer not in ("bob", "eve"):
        raise CodeError("observer must be 'bob' or 'eve'")
    ch = cfg or code.channel
    if label == "message" and ch.q > ch.k:
        if seed_bits is None:
            raise CodeError("message labels with q > k require seed_bits")
        dec_table = decoding_table(Seed.from_bits(seed_bits), ch.k)
        n_classes = 1 << ch.k
    elif label == "message":
        dec_table = np.arange(1 << ch.q)
        n_classes = 1 << ch.k
    elif label == "block":
        dec_table = np.arange(1 << ch.q)
        n_classes = 1 << ch.q
    else:
        raise CodeError("label must be 'message' or 'block'")
    rng = substream(seed, "mi", observer)
    labels = np.empty(count, dtype=np.int64)
    obs = np.empty((count, code.arch.n))
    done = 0
    while done < count:
        B = min(chunk, count - done)
        v = rng.integers(0, code.arch.num_classes, size=B)
        _, cache = run_code(code, v, rng, cfg=cfg)
        labels[done:done + B] = dec_table[v]
        obs[done:done + B] = cache.z if observer == "eve" else cache.y
        done += B
    return MiSampleSet(labels=labels, observations=obs, num_classes=n_classes)


@dataclass
class TradeoffResult:
    code: TrainedCode
    beta_trace: list
    leakage_trace: list
    tau: float


def train_tradeoff(pretrained: TrainedCode, tau: float, tr: TrainConfig,
                   dime_cfg: TrainConfig | None = None,
                   refresh_every: int = 50,
                   refresh_samples: int = 10_000,
                   dual_rate: float = 0.01,
                   seed_bits=None) -> TradeoffResult:
    """Leakage-constrained training: J = J_CCE + beta * (L_eve - tau).

    Alternates Phase 1 (retrain the DIME score networks on fresh
    transcripts from the current code and update beta by dual ascent with
    the stated hinge rule) and Phase 2 (refresh_every batches of J_beta
    updates on the encoder/decoder, with the leakage term differentiated
    through Eve's observations using the frozen winning score network).
    """
    if tau < 0:
        raise CodeError("target leakage tau must be >= 0")
    if pretrained.normalizer.mode != "frozen":
        raise CodeError("tradeoff training starts from a CCE-pretrained code")
    arch, cfg = pretrained.arch, pretrained.channel
    code = replace(pretrained)
    code.encoder = _copy_net(pretrained.encoder)
    code.decoder = _copy_net(pretrained.decoder)
    frozen_stats = pretrained.normalizer
    code.normalizer = PowerNormalizer(mu=frozen_stats.mu.copy(),
                                      sigma=frozen_stats.sigma.copy(), mode="batch")
    dime_cfg = dime_cfg or replace(default_mi_train_config(tr.seed), steps=600)
    rng = substream(tr.seed, "tradeoff")
    if cfg.q > cfg.k and seed_bits is None:
        raise CodeError("q > k requires seed_bits for message labels")
    dec_table = (decoding_table(Seed.from_bits(seed_bits), cfg.k)
                 if cfg.q > cfg.k else np.arange(arch.num_classes))
    n_classes = 1 << cfg.k

    params = code.encoder.params() + code.decoder.params()
    state = AdamState()
    beta = 0.0
    beta_trace, leakage_trace = [], []
    score_net = None
    score_scale = 1.0
    steps_done = 0
    # Faster EMA than train_cce: the encoder drifts as beta ramps up, so the
    # frozen stats must track it over roughly the last ten batches.
    ema_decay = 0.9
    ema_mu = frozen_stats.mu.copy()
    ema_sigma = frozen_stats.sigma.copy()
    while steps_done < tr.steps:
        # Phase 1: refresh the leakage estimate from fresh transcripts.
        snapshot = replace(code, normalizer=PowerNormalizer(
            mu=ema_mu.copy(), sigma=ema_sigma.copy(), mode="frozen"))
        samples = collect_code_samples(snapshot, refresh_samples,
                                       seed=tr.seed + steps_done,
                                       seed_bits=seed_bits, observer="eve",
                                       label="message")
        feats, obs = samples.features(), samples.observations
        best = None
        for variant in DIME_VARIANTS:
            net = train_score_net(feats, obs, variant, dime_cfg, rng)
            t = _score(net, feats, obs)
            scale = 2.0 if variant == "DIME-HD" else 1.0
            value = float(np.clip(scale * t.mean() / LN2, 0.0, cfg.k))
            if best is None or value > best[0]:
                best = (value, net, scale)
        leakage, score_net, score_scale = best
        leakage_trace.append(leakage)
        beta = max(beta + dual_rate * (leakage - tau), 0.0)
        beta_trace.append(beta)

        # Phase 2: refresh_every batches on the trade-off loss.
        for _ in range(min(refresh_every, tr.steps - steps_done)):
            v = rng.integers(0, arch.num_classes, size=tr.batch_size)
            noises = _draw_noises(cfg, tr.batch_size, rng)
            cache = unroll_forward(code, v, noises, code.normalizer)
            loss, dlogits = cce_loss(softmax(cache.logits), v)
            if not np.isfinite(loss):
                raise CodeError("trade-off training diverged")
            dz = None
            if beta > 0.0:
                m = dec_table[v]
                onehot = np.zeros((tr.batch_size, n_classes))
                onehot[np.arange(tr.batch_size), m] = 1.0
                sc_in = np.concatenate([onehot, cache.z], axis=1)
                _, sc_cache = forward(score_net, sc_in)
                up = np.full((tr.batch_size, 1),
                             beta * score_scale / (LN2 * tr.batch_size))
                _, d_in = backward(score_net, up, sc_cache)
                dz = d_in[:, n_classes:]
            enc_g, dec_g = unroll_backward(code, cache, dlogits,
                                           batch_stats=True, dz_extra=dz)
            optimizer_step(params, enc_g + dec_g, state, tr)
            ema_mu = ema_decay * ema_mu + (1 - ema_decay) * code.normalizer.mu
            ema_sigma = (ema_decay * ema_sigma
                         + (1 - ema_decay) * code.normalizer.sigma)
            steps_done += 1
    code.normalizer = PowerNormalizer(mu=ema_mu, sigma=ema_sigma, mode="frozen")
    return TradeoffResult(code=code, beta_trace=beta_trace,
                          leakage_trace=leakage_trace, tau=tau)


def _score(net, feats, obs):
    return forward(net, np.concatenate([feats, obs], axis=1))[0][:, 0]


def _copy_net(net: CodeNet) -> CodeNet:
    def cp(dn: DenseNet) -> DenseNet:
        return DenseNet([(W.copy(), b.copy(), a) for W, b, a in dn.layers])

    return CodeNet(feat=cp(net.feat), skip=cp(net.skip), head=cp(net.head))


# --- checkpointing ---------------------------------------------------------

def save_code(path_prefix: str, code: TrainedCode):
    """Checkpoint the three sub-nets per role plus a JSON manifest, enough
    to re-run any result from the manifest alone."""
    manifest = {
        "arch": {"q": code.arch.q, "n": code.arch.n, "d_h": code.arch.d_h},
        "channel": code.channel.__dict__,
        "seed": code.seed,
        "normalizer": {"mu": code.normalizer.mu.tolist(),
                       "sigma": code.normalizer.sigma.tolist(),
                       "mode": code.normalizer.mode},
    }
    with open(f"{path_prefix}.manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    for role, net in (("enc", code.encoder), ("dec", code.decoder)):
        for part in ("feat", "skip", "head"):
            save_net(f"{path_prefix}.{role}.{part}.npz", getattr(net, part))


def load_code(path_prefix: str) -> TrainedCode:
    with open(f"{path_prefix}.manifest.json") as fh:
        manifest = json.load(fh)
    arch = CodeArchitecture(**manifest["arch"])
    cfg = ChannelConfig(**manifest["channel"])
    nets = {}
    for role in ("enc", "dec"):
        parts = {part: load_net(f"{path_prefix}.{role}.{part}.npz")
                 for part in ("feat", "skip", "head")}
        nets[role] = CodeNet(**parts)
    norm = PowerNormalizer(mu=np.array(manifest["normalizer"]["mu"]),
                           sigma=np.array(manifest["normalizer"]["sigma"]),
                           mode=manifest["normalizer"]["mode"])
    return TrainedCode(arch=arch, channel=cfg, encoder=nets["enc"],
                       decoder=nets["dec"], normalizer=norm,
                       seed=manifest["seed"])
