"""Gaussian wiretap channel with delayed, possibly noisy, output feedback.

Forward links add independent Gaussian noise for Bob and Eve; feedback
links return each receiver's output to the transmitter, optionally with
additional Gaussian noise (variance 0 means noiseless feedback).  All
randomness flows through named, seedable substreams so that trials are
reproducible and embarrassingly parallel.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ChannelConfig:
    """Power budget, noise variances, and block geometry for one link."""

    P: float
    sigma2_yf: float
    sigma2_zf: float
    sigma2_yfb: float
    sigma2_zfb: float
    n: int
    k: int
    q: int

    def __post_init__(self):
        if self.P <= 0:
            raise ValueError("power budget P must be positive")
        for name in ("sigma2_yf", "sigma2_zf", "sigma2_yfb", "sigma2_zfb"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n < 1:
            raise ValueError("blocklength n must be >= 1")
        if not 1 <= self.k <= self.q:
            raise ValueError("need 1 <= k <= q")

    @property
    def rate(self) -> float:
        return self.k / self.n

    @property
    def reliability_rate(self) -> float:
        return self.q / self.n

    @classmethod
    def from_snr_db(cls, P, snr_yf_db, snr_zf_db, n, k, q,
                    snr_yfb_db=None, snr_zfb_db=None) -> "ChannelConfig":
        """Build a config from SNRs in dB; None feedback SNR = noiseless."""
        return cls(
            P=P,
            sigma2_yf=snr_db_to_sigma2(snr_yf_db, P),
            sigma2_zf=snr_db_to_sigma2(snr_zf_db, P),
            sigma2_yfb=0.0 if snr_yfb_db is None else snr_db_to_sigma2(snr_yfb_db, P),
            sigma2_zfb=0.0 if snr_zfb_db is None else snr_db_to_sigma2(snr_zfb_db, P),
            n=n, k=k, q=q,
        )


def snr_db_to_sigma2(snr_db: float, P: float) -> float:
    """Noise variance from an SNR in dB under S = P / sigma^2."""
    if P <= 0:
        raise ValueError("P must be positive")
    return P / 10.0 ** (snr_db / 10.0)


def sigma2_to_snr_db(sigma2: float, P: float) -> float:
    return 10.0 * np.log10(P / sigma2)


@dataclass
class Transcript:
    """Per-round record of transmitted and observed sequences (trials x n)."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    y_fb: np.ndarray
    z_fb: np.ndarray


# Stable role tags for RNG substream derivation.
_ROLES = ("bob_forward", "eve_forward", "bob_feedback", "eve_feedback",
          "message", "randomizer", "train", "mi")


def substream(seed: int, *keys) -> np.random.Generator:
    """Independent Philox stream derived from (seed, keys).

    String keys are hashed with CRC32; integer keys pass through, so
    (role, round, trial) tuples give disjoint streams.
    """
    entropy = [seed & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode()))
        else:
            entropy.append(int(key) & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass
class NoiseStreams:
    """The four mutually independent noise streams of one simulation."""

    bob_forward: np.random.Generator
    eve_forward: np.random.Generator
    bob_feedback: np.random.Generator
    eve_feedback: np.random.Generator


def make_noise_streams(seed: int, trial_block: int = 0) -> NoiseStreams:
    return NoiseStreams(
        bob_forward=substream(seed, "bob_forward", trial_block),
        eve_forward=substream(seed, "eve_forward", trial_block),
        bob_feedback=substream(seed, "bob_feedback", trial_block),
        eve_feedback=substream(seed, "eve_feedback", trial_block),
    )


def forward_step(x, cfg: ChannelConfig, streams: NoiseStreams):
    """One channel use: y = x + N(0, sigma2_yf), z = x + N(0, sigma2_zf)."""
    x = np.asarray(x, dtype=np.float64)
    y = x + _noise(streams.bob_forward, cfg.sigma2_yf, x.shape)
    z = x + _noise(streams.eve_forward, cfg.sigma2_zf, x.shape)
    return y, z


def feedback_step(y, z, cfg: ChannelConfig, streams: NoiseStreams):
    """Feedback copies; exact when the feedback variances are zero."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    y_fb = y + _noise(streams.bob_feedback, cfg.sigma2_yfb, y.shape)
    z_fb = z + _noise(streams.eve_feedback, cfg.sigma2_zfb, z.shape)
    return y_fb, z_fb


def _noise(rng: np.random.Generator, sigma2: float, shape):
    if sigma2 == 0.0:
        return np.zeros(shape)
    return rng.normal(0.0, np.sqrt(sigma2), size=shape)


@dataclass(frozen=True)
class PowerCheck:
    passed: bool
    measured: float
    budget: float
    tolerance: float


def check_power(xs: np.ndarray, P: float, delta: float = 0.05) -> PowerCheck:
    """Average-power constraint as a measured batch statistic.

    xs is a (trials, n) batch of transmitted sequences; the constraint is
    on the batch mean of (1/n) sum_i x_i^2.  A violation is reported, not
    raised.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    measured = float(np.mean(xs * xs))
    return PowerCheck(passed=measured <= P * (1.0 + delta),
                      measured=measured, budget=P, tolerance=delta)
