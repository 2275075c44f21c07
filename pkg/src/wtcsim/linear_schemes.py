"""PAM mapping and the analytical SK / PB feedback reliability layers.

The SK scheme sends a PAM symbol once and then iteratively the scaled
receiver estimation error, using feedback from Bob only; its estimation
variance shrinks geometrically each round.  The PB variant replaces the
final round with a discrete index-error transmission decoded by a MAP
rule.  All trial loops are vectorized over a batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .channel import ChannelConfig, NoiseStreams, Transcript, feedback_step, forward_step


class SchemeError(ValueError):
    pass


def pam_eta(k: int) -> float:
    """Half-spacing making the uniform 2^k-point constellation unit power."""
    return np.sqrt(3.0 / (4.0 ** k - 1.0))


def pam_points(k: int) -> np.ndarray:
    """Strictly increasing constellation {±eta, ±3 eta, ..., ±(2^k - 1) eta}."""
    u = np.arange(1 << k)
    return (2 * u + 1 - (1 << k)) * pam_eta(k)


def pam_map(bits, k: int) -> float:
    """Bits (MSB-first) -> PAM amplitude."""
    bits = list(bits)
    if len(bits) != k:
        raise SchemeError(f"expected {k} bits, got {len(bits)}")
    u = 0
    for b in bits:
        u = (u << 1) | int(b)
    return float((2 * u + 1 - (1 << k)) * pam_eta(k))


def pam_index(theta, k: int) -> np.ndarray:
    """Nearest-point constellation index in [0, 2^k), ties toward smaller."""
    t = (np.asarray(theta, dtype=np.float64) / pam_eta(k) + (1 << k) - 1) / 2.0
    tie = np.floor(t) + 0.5 == t
    u = np.where(tie, np.floor(t), np.floor(t + 0.5))
    return np.clip(u, 0, (1 << k) - 1).astype(np.int64)


def pam_demap(theta_hat: float, k: int) -> list[int]:
    """Nearest constellation point's bit label (MSB-first)."""
    u = int(pam_index(theta_hat, k))
    return [(u >> (k - 1 - i)) & 1 for i in range(k)]


def d_sequence(P: float, sigma2: float, n: int) -> np.ndarray:
    """SK estimation-error variances D_1..D_n: geometric with ratio
    sigma^2 / (P + sigma^2)."""
    if sigma2 <= 0:
        raise SchemeError("d_sequence requires sigma2 > 0")
    r = sigma2 / (P + sigma2)
    return r ** np.arange(1, n + 1, dtype=np.float64)


@dataclass
class SkTrace:
    """Per-round receiver state: estimates and nominal error variances."""

    theta_hat: np.ndarray  # (trials, n)
    d: np.ndarray          # (n,)


def _sk_rounds(theta: np.ndarray, cfg: ChannelConfig, streams: NoiseStreams,
               n_rounds: int):
    """Run n_rounds of the SK recursion for a batch of true symbols.

    Returns receiver estimates, the encoder's feedback-side replica (equal
    to the receiver's bitwise when feedback is noiseless), and the raw
    sequences.  The encoder forms its error from the feedback stream, so
    noisy feedback degrades it exactly as the model prescribes.
    """
    P, s2 = cfg.P, cfg.sigma2_yf
    if s2 <= 0:
        raise SchemeError("SK requires sigma2_yf > 0 (D_i undefined otherwise)")
    trials = theta.shape[0]
    d = d_sequence(P, s2, n_rounds)
    xs = np.empty((trials, n_rounds))
    ys = np.empty_like(xs)
    zs = np.empty_like(xs)
    yfbs = np.empty_like(xs)
    zfbs = np.empty_like(xs)
    theta_hat = np.empty_like(xs)

    x = np.sqrt(P) * theta
    for i in range(n_rounds):
        y, z = forward_step(x, cfg, streams)
        y_fb, z_fb = feedback_step(y, z, cfg, streams)
        xs[:, i], ys[:, i], zs[:, i] = x, y, z
        yfbs[:, i], zfbs[:, i] = y_fb, z_fb
        if i == 0:
            est = np.sqrt(P) / (P + s2) * y
            est_enc = np.sqrt(P) / (P + s2) * y_fb
        else:
            est = est - np.sqrt(P * d[i - 1]) / (P + s2) * y
            est_enc = est_enc - np.sqrt(P * d[i - 1]) / (P + s2) * y_fb
        theta_hat[:, i] = est
        if i + 1 < n_rounds:
            x = np.sqrt(P / d[i]) * (est_enc - theta)

    transcript = Transcript(x=xs, y=ys, z=zs, y_fb=yfbs, z_fb=zfbs)
    return theta_hat, est_enc, transcript, d


def sk_transmit(v_ints: np.ndarray, cfg: ChannelConfig, streams: NoiseStreams):
    """SK transport of a batch of q-bit blocks (as integers).

    Returns (decoded integers, Transcript, SkTrace).
    """
    if cfg.n < 2:
        raise SchemeError("SK needs n >= 2")
    v_ints = np.asarray(v_ints, dtype=np.int64)
    theta = pam_points(cfg.q)[v_ints]
    theta_hat, _, transcript, d = _sk_rounds(theta, cfg, streams, cfg.n)
    v_hat = pam_index(theta_hat[:, -1], cfg.q)
    return v_hat, transcript, SkTrace(theta_hat=theta_hat, d=d)


def estimate_DI(cfg: ChannelConfig, trials: int, streams: NoiseStreams,
                floor: float = 1e-12) -> float:
    """Mean squared PAM index error after n-1 SK rounds, from pilot runs."""
    rng = streams.bob_forward  # pilot symbol draws share Bob's stream seed
    v = rng.integers(0, 1 << cfg.q, size=trials)
    theta = pam_points(cfg.q)[v]
    theta_hat, _, _, _ = _sk_rounds(theta, cfg, streams, cfg.n - 1)
    idx_err = pam_index(theta_hat[:, -1], cfg.q) - v
    return max(float(np.mean(idx_err.astype(np.float64) ** 2)), floor)


def pb_transmit(v_ints: np.ndarray, cfg: ChannelConfig, d_I: float,
                streams: NoiseStreams):
    """PB transport: SK for n-1 rounds, then a discrete index-error round.

    The final round transmits sqrt(P / D_I) (I(theta_hat_{n-1}) - I(theta))
    and the receiver applies a MAP rule over the constellation combining
    its running estimate (modeled N(theta_j, D_{n-1})) with the final
    observation.  The receiver's own estimate stands in for the encoder's
    index estimate; the two coincide under noiseless feedback.
    """
    if cfg.n < 2:
        raise SchemeError("PB needs n >= 2")
    if d_I <= 0:
        raise SchemeError("d_I must be positive (see estimate_DI)")
    v_ints = np.asarray(v_ints, dtype=np.int64)
    points = pam_points(cfg.q)
    theta = points[v_ints]
    theta_hat, est_enc, tr, d = _sk_rounds(theta, cfg, streams, cfg.n - 1)

    scale = np.sqrt(cfg.P / d_I)
    idx_enc = pam_index(est_enc, cfg.q)
    x_n = scale * (idx_enc - v_ints).astype(np.float64)
    y_n, z_n = forward_step(x_n, cfg, streams)
    y_fb_n, z_fb_n = feedback_step(y_n, z_n, cfg, streams)

    # MAP over candidate symbols j, uniform prior.
    est = theta_hat[:, -1][:, None]
    idx_dec = pam_index(theta_hat[:, -1], cfg.q)[:, None]
    cand = np.arange(1 << cfg.q)[None, :]
    log_post = -((est - points[None, :]) ** 2) / (2.0 * d[-1])
    mean_yn = scale * (idx_dec - cand).astype(np.float64)
    log_post -= (y_n[:, None] - mean_yn) ** 2 / (2.0 * cfg.sigma2_yf)
    v_hat = np.argmax(log_post, axis=1).astype(np.int64)

    transcript = Transcript(
        x=np.column_stack([tr.x, x_n]),
        y=np.column_stack([tr.y, y_n]),
        z=np.column_stack([tr.z, z_n]),
        y_fb=np.column_stack([tr.y_fb, y_fb_n]),
        z_fb=np.column_stack([tr.z_fb, z_fb_n]),
    )
    return v_hat, transcript


def sk_analytic_bler(P: float, sigma2: float, k: int, n: int) -> float:
    """Closed-form SK block-error approximation 2 (1 - 2^{-k}) Q(eta / sqrt(D_n)).

    Neglects the conditional-bias term of order D_n * theta, so treat it
    as a cross-check target rather than an exact value.
    """
    if sigma2 <= 0:
        raise SchemeError("sigma2 must be positive")
    d_n = d_sequence(P, sigma2, n)[-1]
    arg = pam_eta(k) / np.sqrt(d_n)
    q_tail = 0.5 * erfc(arg / np.sqrt(2.0))
    return float(np.clip(2.0 * (1.0 - 2.0 ** (-k)) * q_tail, 0.0, 1.0))
