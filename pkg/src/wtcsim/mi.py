"""Mutual-information estimation.

Neural lower-bound estimators (MINE, NWJ, SMILE) and discriminative
f-divergence estimators (DIME with KL, squared-Hellinger, and GAN
divergences) over (label, observation) sample sets, plus an exact
Gaussian-mixture leakage oracle for the SK scheme with noiseless
feedback, where the eavesdropper's observation is conditionally Gaussian
with a computable mean and covariance.

All reported values are in bits.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp

from .channel import ChannelConfig
from .linear_schemes import d_sequence, pam_points
from .nn_core import AdamState, TrainConfig, backward, forward, init_dense, optimizer_step
from .security import Seed, encoding_table

LN2 = float(np.log(2.0))
NEURAL_VARIANTS = ("MINE", "NWJ", "SMILE", "DIME-KL", "DIME-HD", "DIME-GAN")
DIME_VARIANTS = ("DIME-KL", "DIME-HD", "DIME-GAN")
SMILE_CLIP = 5.0
_SCORE_CLIP = 25.0  # keeps exp() finite in the training losses


class MiError(ValueError):
    pass


@dataclass
class MiSampleSet:
    """Class-labeled observation samples for I(label; observation)."""

    labels: np.ndarray        # (N,) integer class indices
    observations: np.ndarray  # (N, n)
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=np.float64))
        if self.labels.shape[0] != self.observations.shape[0]:
            raise MiError("labels and observations must have equal length")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.num_classes:
            raise MiError("labels out of range for num_classes")

    @property
    def entropy_bits(self) -> float:
        return float(np.log2(self.num_classes))

    def features(self) -> np.ndarray:
        onehot = np.zeros((self.labels.shape[0], self.num_classes))
        onehot[np.arange(self.labels.shape[0]), self.labels] = 1.0
        return onehot


@dataclass(frozen=True)
class MiEstimate:
    value_bits: float
    variant: str
    stderr_bits: float
    raw_bits: float = None  # pre-clamp value
    clamped: bool = False


def default_mi_train_config(seed: int = 0) -> TrainConfig:
    return TrainConfig(batch_size=512, learning_rate=1e-3, steps=2000,
                       clip_norm=1.0, seed=seed)


def derange(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Fixed-point-free permutation: cyclic shift by a uniform offset."""
    batch = np.asarray(batch)
    B = batch.shape[0]
    if B < 2:
        raise MiError("derangement needs a batch of at least 2")
    offset = int(rng.integers(1, B))
    return np.roll(batch, offset, axis=0)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _clipped_exp(t):
    """exp with a hard score clip; returns (value, gradient mask)."""
    inside = np.abs(t) < _SCORE_CLIP
    return np.exp(np.clip(t, -_SCORE_CLIP, _SCORE_CLIP)), inside


def _loss_grads(variant: str, t_joint: np.ndarray, t_marg: np.ndarray):
    """Per-sample gradients of the minimized loss w.r.t. the two score
    batches.  Scores feeding an exponential are hard-clipped."""
    B = t_joint.shape[0]
    if variant == "MINE":
        em, mask = _clipped_exp(t_marg)
        dj = -np.ones_like(t_joint) / B
        dm = mask * em / em.sum()
    elif variant == "NWJ":
        em, mask = _clipped_exp(t_marg - 1.0)
        dj = -np.ones_like(t_joint) / B
        dm = mask * em / B
    elif variant == "SMILE":
        # trained with the MINE objective; the tau-clip applies only to the
        # evaluated bound
        em, mask = _clipped_exp(t_marg)
        dj = -np.ones_like(t_joint) / B
        dm = mask * em / em.sum()
    elif variant == "DIME-KL":
        em, mask = _clipped_exp(t_marg)
        dj = -np.ones_like(t_joint) / B
        dm = mask * em / B
    elif variant == "DIME-HD":
        ej, mask_j = _clipped_exp(-t_joint)
        em, mask_m = _clipped_exp(t_marg)
        dj = -(mask_j * ej) / B
        dm = mask_m * em / B
    elif variant == "DIME-GAN":
        dj = -(1.0 - _sigmoid(t_joint)) / B
        dm = _sigmoid(t_marg) / B
    else:
        raise MiError(f"unknown estimator variant {variant!r}")
    return dj, dm


def _evaluate_bits(variant: str, t_joint: np.ndarray, t_marg: np.ndarray):
    """Held-out bound value in bits plus a per-sample standard error."""
    N = t_joint.shape[0]
    if variant in DIME_VARIANTS:
        scale = 2.0 if variant == "DIME-HD" else 1.0
        per = scale * t_joint / LN2
        return float(per.mean()), float(per.std() / np.sqrt(N))
    if variant == "MINE":
        log_term = logsumexp(t_marg) - np.log(t_marg.shape[0])
        per = t_joint / LN2
        return float(per.mean() - log_term / LN2), float(per.std() / np.sqrt(N))
    if variant == "NWJ":
        per = (t_joint - np.exp(t_marg - 1.0)) / LN2
        return float(per.mean()), float(per.std() / np.sqrt(N))
    if variant == "SMILE":
        clipped = np.clip(np.exp(t_marg), np.exp(-SMILE_CLIP), np.exp(SMILE_CLIP))
        per = t_joint / LN2
        return float(per.mean() - np.log(clipped.mean()) / LN2), float(per.std() / np.sqrt(N))
    raise MiError(f"unknown estimator variant {variant!r}")


def train_score_net(feats: np.ndarray, obs: np.ndarray, variant: str,
                    cfg: TrainConfig, rng: np.random.Generator,
                    hidden: int = 64):
    """Train the score network T on (feature, observation) pairs.

    Marginal pairs come from in-batch label shuffling for the KL
    lower-bound estimators and from derangement of the observations for
    the DIME variants.  Raises on persistent divergence.
    """
    d_in = feats.shape[1] + obs.shape[1]
    net = init_dense([d_in, hidden, hidden, 1], ["gelu", "gelu", "linear"], rng)
    # zero output layer: score starts at 0, which tames early exp() terms
    W_out, _, act_out = net.layers[-1]
    net.layers[-1] = (np.zeros_like(W_out), np.zeros(1), act_out)
    state = AdamState()
    N = feats.shape[0]
    B = min(cfg.batch_size, N)
    avg_params = None  # Polyak average over the decayed final third
    avg_count = 0
    for step in range(cfg.steps):
        if step == (2 * cfg.steps) // 3:
            cfg = replace(cfg, learning_rate=cfg.learning_rate / 5.0)
        idx = rng.integers(0, N, size=B)
        f_b, o_b = feats[idx], obs[idx]
        if variant in DIME_VARIANTS:
            o_m = derange(o_b, rng)
            f_m = f_b
        else:
            f_m = f_b[rng.permutation(B)]
            o_m = o_b
        both = np.concatenate(
            [np.concatenate([f_b, o_b], axis=1), np.concatenate([f_m, o_m], axis=1)]
        )
        t, cache = forward(net, both)
        dj, dm = _loss_grads(variant, t[:B, 0], t[B:, 0])
        grads, _ = backward(net, np.concatenate([dj, dm])[:, None], cache)
        optimizer_step(net.params(), grads, state, cfg)
        if step >= (2 * cfg.steps) // 3:
            if avg_params is None:
                avg_params = [p.copy() for p in net.params()]
            else:
                for ap, p in zip(avg_params, net.params()):
                    ap += p
            avg_count += 1
    if state.skipped > cfg.steps // 2:
        raise MiError(f"score-network training diverged ({state.skipped} skipped steps)")
    if avg_params is not None:
        net.set_params([p / avg_count for p in avg_params])
    return net


def estimate_mi(feats: np.ndarray, obs: np.ndarray, variant: str,
                cfg: TrainConfig | None = None,
                rng: np.random.Generator | None = None,
                ceiling_bits: float | None = None,
                hidden: int = 64) -> MiEstimate:
    """Train on one half of the samples, evaluate the bound on the other."""
    if variant not in NEURAL_VARIANTS:
        raise MiError(f"unknown estimator variant {variant!r}")
    cfg = cfg or default_mi_train_config()
    rng = rng or np.random.default_rng(cfg.seed)
    feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    N = feats.shape[0]
    perm = rng.permutation(N)
    half = N // 2
    tr, ev = perm[:half], perm[half:]
    net = train_score_net(feats[tr], obs[tr], variant, cfg, rng, hidden=hidden)

    t_joint = forward(net, np.concatenate([feats[ev], obs[ev]], axis=1))[0][:, 0]
    if variant in DIME_VARIANTS:
        t_marg = t_joint  # DIME evaluation uses the joint term only
    else:
        f_m = feats[ev][rng.permutation(ev.shape[0])]
        t_marg = forward(net, np.concatenate([f_m, obs[ev]], axis=1))[0][:, 0]
    raw, stderr = _evaluate_bits(variant, t_joint, t_marg)

    lo, hi = 0.0, np.inf if ceiling_bits is None else ceiling_bits
    value = float(np.clip(raw, lo, hi))
    return MiEstimate(value_bits=value, variant=variant, stderr_bits=stderr,
                      raw_bits=raw, clamped=value != raw)


def mine_estimate(samples: MiSampleSet, cfg: TrainConfig | None = None,
                  rng: np.random.Generator | None = None) -> MiEstimate:
    if samples.labels.shape[0] < 10_000:
        raise MiError("MINE needs at least 10^4 samples")
    return estimate_mi(samples.features(), samples.observations, "MINE",
                       cfg, rng, ceiling_bits=samples.entropy_bits)


def dime_estimate(samples: MiSampleSet, f_variant: str,
                  cfg: TrainConfig | None = None,
                  rng: np.random.Generator | None = None) -> MiEstimate:
    variant = f_variant if f_variant.startswith("DIME") else f"DIME-{f_variant.upper()}"
    if variant not in DIME_VARIANTS:
        raise MiError(f"unknown DIME variant {f_variant!r}")
    return estimate_mi(samples.features(), samples.observations, variant,
                       cfg, rng, ceiling_bits=samples.entropy_bits)


def leakage_max_over_variants(samples: MiSampleSet,
                              cfg: TrainConfig | None = None,
                              rng: np.random.Generator | None = None) -> MiEstimate:
    """Elementwise max of the three DIME variants, tagged with the winner."""
    rng = rng or np.random.default_rng((cfg or default_mi_train_config()).seed)
    best = None
    for variant in DIME_VARIANTS:
        est = dime_estimate(samples, variant, cfg, rng)
        if best is None or est.value_bits > best.value_bits:
            best = est
    return best


# ---------------------------------------------------------------------------
# Exact Gaussian-mixture oracle for the SK scheme with noiseless feedback.
# ---------------------------------------------------------------------------

def sk_linear_model(cfg: ChannelConfig):
    """Coefficients of X^n = a * Theta + B @ N_Y for noiseless-feedback SK.

    Valid because every SK round is linear in the PAM symbol and in Bob's
    forward noises.  Returns (a, B) with a shape (n,) and B shape (n, n)
    strictly lower triangular.
    """
    P, s2, n = cfg.P, cfg.sigma2_yf, cfg.n
    if s2 <= 0:
        raise MiError("SK linear model requires sigma2_yf > 0")
    a = np.zeros(n)
    B = np.zeros((n, n))
    a[0] = np.sqrt(P)
    if n == 1:
        return a, B
    d = d_sequence(P, s2, n)
    c = s2 / (P + s2)
    g = np.sqrt(P) / (P + s2)
    # eps after round 1 = a_eps * Theta + b_eps @ N_Y
    a_eps = -c
    b_eps = np.zeros(n)
    b_eps[0] = g
    for i in range(1, n):
        scale = np.sqrt(P / d[i - 1])
        a[i] = scale * a_eps
        B[i] = scale * b_eps
        # eps_{i+1} = c * eps_i - sqrt(P * D_i) / (P + s2) * N_{i+1}
        a_eps *= c
        b_eps = c * b_eps
        b_eps[i] -= np.sqrt(P * d[i - 1]) / (P + s2)
    return a, B


def exact_mixture_leakage(cfg: ChannelConfig, which: str = "eve",
                          mc_samples: int = 100_000,
                          seed_bits=None,
                          rng: np.random.Generator | None = None,
                          of: str = "message") -> MiEstimate:
    """Ground-truth I(M; obs^n) for SK with noiseless feedback.

    Monte Carlo over transcripts using the exact conditional Gaussian
    densities; with a security layer (q > k, seed_bits given) the
    per-message density averages over the 2^{q-k} randomizer values.
    of="block" computes I(V; obs^n) instead.
    """
    if which not in ("bob", "eve"):
        raise MiError("which must be 'bob' or 'eve'")
    if cfg.sigma2_yfb != 0.0 or cfg.sigma2_zfb != 0.0:
        raise MiError("oracle supports noiseless feedback only")
    if cfg.n > 12:
        raise MiError("oracle limited to n <= 12")
    rng = rng or np.random.default_rng(0)

    a, B = sk_linear_model(cfg)
    n = cfg.n
    if which == "eve":
        cov = cfg.sigma2_yf * (B @ B.T) + cfg.sigma2_zf * np.eye(n)
    else:
        C = B + np.eye(n)
        cov = cfg.sigma2_yf * (C @ C.T)

    points = pam_points(cfg.q)
    if cfg.q == cfg.k:
        v_of = np.arange(1 << cfg.q).reshape(-1, 1)  # v_of[m, b] with one b
    else:
        if seed_bits is None:
            raise MiError("q > k requires seed_bits for the security layer")
        table = encoding_table(Seed.from_bits(seed_bits), cfg.k)
        v_of = table.reshape(1 << cfg.k, 1 << (cfg.q - cfg.k))
    if of == "block":
        v_of = np.arange(1 << cfg.q).reshape(-1, 1)
    elif of != "message":
        raise MiError("of must be 'message' or 'block'")
    n_classes, n_rand = v_of.shape

    # Sample transcripts: class uniform, randomizer uniform within class.
    cls = rng.integers(0, n_classes, size=mc_samples)
    rnd = rng.integers(0, n_rand, size=mc_samples)
    theta = points[v_of[cls, rnd]]
    n_y = rng.normal(0.0, np.sqrt(cfg.sigma2_yf), size=(mc_samples, n))
    if which == "eve":
        noise = n_y @ B.T + rng.normal(0.0, np.sqrt(cfg.sigma2_zf), size=(mc_samples, n))
    else:
        noise = n_y @ (B + np.eye(n)).T
    z = theta[:, None] * a[None, :] + noise

    # log N(z; a * theta_v, cov) for every candidate block value v
    chol = cholesky(cov, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    log_norm = 0.5 * logdet + 0.5 * n * np.log(2.0 * np.pi)
    logpdf = np.empty((mc_samples, 1 << cfg.q))
    for v in range(1 << cfg.q):
        diff = z - points[v] * a[None, :]
        w = solve_triangular(chol, diff.T, lower=True)
        logpdf[:, v] = -0.5 * np.sum(w * w, axis=0) - log_norm

    # log p(z | class) averages the density over the randomizer values.
    log_cond = logsumexp(logpdf[:, v_of], axis=2) - np.log(n_rand)
    log_mix = logsumexp(log_cond, axis=1) - np.log(n_classes)
    per = (log_cond[np.arange(mc_samples), cls] - log_mix) / LN2
    value = float(per.mean())
    stderr = float(per.std() / np.sqrt(mc_samples))
    return MiEstimate(value_bits=max(value, 0.0), variant="ORACLE",
                      stderr_bits=stderr, raw_bits=value, clamped=value < 0.0)
