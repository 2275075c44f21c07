"""Experiment plumbing: BLER Monte Carlo, capacity formulas, the SNR
advantage gap search, and config-driven sweeps written as versioned CSV.

Everything here composes the scheme, security, channel, and estimator
modules; it adds no physics of its own.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.special import erfc
from scipy.stats import beta as beta_dist

from .channel import ChannelConfig, make_noise_streams, substream
from .deep_code import (
    CodeArchitecture,
    TrainedCode,
    collect_code_samples,
    evaluate_bler,
    run_code,
    train_cce,
)
from .linear_schemes import estimate_DI, pb_transmit, sk_transmit
from .mi import (
    MiSampleSet,
    default_mi_train_config,
    exact_mixture_leakage,
    leakage_max_over_variants,
    mine_estimate,
)
from .nn_core import TrainConfig
from .security import Seed, decoding_table, encoding_table

SCHEMA_VERSION = "wtcsim-rows-1"
CSV_COLUMNS = ["schema", "scheme", "k", "q", "n", "snr_yf_db", "snr_yfb_db",
               "snr_zf_db", "snr_zfb_db", "seed", "bler", "i_bob_bits",
               "l_eve_bits", "sag_bits", "tau", "beta_final", "runtime_s"]

LINEAR_SCHEMES = ("sk", "pb")
ALL_SCHEMES = LINEAR_SCHEMES + ("lightcode",)


class HarnessError(ValueError):
    pass


# --- capacity formulas and Q ------------------------------------------------

def q_function(x) -> float:
    """Standard normal tail probability."""
    return 0.5 * erfc(np.asarray(x, dtype=np.float64) / np.sqrt(2.0))


def secrecy_capacity_nofb(P: float, sigma2_yf: float, sigma2_zf: float) -> float:
    """No-feedback Gaussian wiretap secrecy capacity, bits per use."""
    if sigma2_yf <= 0 or sigma2_zf <= 0:
        raise HarnessError("capacity formula needs positive noise variances")
    diff = 0.5 * (np.log2(1 + P / sigma2_yf) - np.log2(1 + P / sigma2_zf))
    return max(diff, 0.0)


def sk_secrecy_capacity(P: float, sigma2_yf: float) -> float:
    """With feedback the main-channel capacity is securely achievable."""
    if sigma2_yf <= 0:
        raise HarnessError("capacity formula needs a positive noise variance")
    return 0.5 * np.log2(1 + P / sigma2_yf)


# --- BLER Monte Carlo -------------------------------------------------------

@dataclass(frozen=True)
class BlerResult:
    trials: int
    errors: int
    ci_half: float  # 95% half-width

    @property
    def bler(self) -> float:
        return self.errors / self.trials

    def __post_init__(self):
        if self.trials < 1 or not 0 <= self.errors <= self.trials:
            raise HarnessError("inconsistent trial/error counts")


def _bler_interval(errors: int, trials: int) -> float:
    """95% half-width: normal approximation, exact binomial for rare errors."""
    p = errors / trials
    if errors >= 20:
        return 1.96 * np.sqrt(p * (1 - p) / trials)
    lo = 0.0 if errors == 0 else beta_dist.ppf(0.025, errors, trials - errors + 1)
    hi = 1.0 if errors == trials else beta_dist.ppf(0.975, errors + 1, trials - errors)
    return (hi - lo) / 2.0


def transmit_block(scheme: str, v: np.ndarray, cfg: ChannelConfig,
                   streams, d_I: float | None = None):
    """Dispatch a batch of secured blocks through the named scheme."""
    if scheme == "sk":
        v_hat, transcript, _ = sk_transmit(v, cfg, streams)
    elif scheme == "pb":
        if d_I is None:
            raise HarnessError("PB needs a pilot-estimated d_I")
        v_hat, transcript = pb_transmit(v, cfg, d_I, streams)
    else:
        raise HarnessError(f"unknown linear scheme {scheme!r}")
    return v_hat, transcript


def bler_monte_carlo(scheme: str, cfg: ChannelConfig, trials: int, seed: int,
                     seed_bits=None, code: TrainedCode | None = None,
                     chunk: int = 100_000) -> BlerResult:
    """Block error rate of the full pipeline: security encode, scheme
    transport, security decode.  Fresh message, randomizer, and noises per
    trial; error iff the decoded message differs."""
    if trials < 1_000:
        raise HarnessError("need at least 10^3 trials")
    if scheme not in ALL_SCHEMES:
        raise HarnessError(f"unknown scheme {scheme!r}")
    if cfg.q > cfg.k:
        if seed_bits is None:
            raise HarnessError("q > k requires seed_bits")
        s = Seed.from_bits(seed_bits)
        enc_table = encoding_table(s, cfg.k)
        dec_table = decoding_table(s, cfg.k)
    else:
        enc_table = np.arange(1 << cfg.q)
        dec_table = np.arange(1 << cfg.q)

    msg_rng = substream(seed, "messages")
    d_I = None
    if scheme == "pb":
        d_I = estimate_DI(cfg, 50_000, make_noise_streams(seed, trial_block=-1))
    errors = 0
    done = 0
    block = 0
    while done < trials:
        B = min(chunk, trials - done)
        mb = msg_rng.integers(0, 1 << cfg.q, size=B)  # uniform (M, B) jointly
        v = enc_table[mb]
        if scheme == "lightcode":
            if code is None:
                raise HarnessError("lightcode BLER needs a trained code")
            v_hat, _ = run_code(code, v, substream(seed, "lc_eval", block), cfg=cfg)
        else:
            v_hat, _ = transmit_block(scheme, v, cfg,
                                      make_noise_streams(seed, trial_block=block),
                                      d_I=d_I)
        # block error iff the decoded message differs from the true one
        errors += int(np.sum(dec_table[v_hat] != dec_table[v]))
        done += B
        block += 1
    return BlerResult(trials=trials, errors=errors,
                      ci_half=_bler_interval(errors, trials))


# --- SK sample collection for neural MI -------------------------------------

def collect_sk_samples(cfg: ChannelConfig, count: int, seed: int,
                       seed_bits=None, observer: str = "eve",
                       label: str = "message",
                       chunk: int = 200_000) -> MiSampleSet:
    """(label, observation) pairs from SK transmissions."""
    if observer not in ("bob", "eve"):
        raise HarnessError("observer must be 'bob' or 'eve'")
    if cfg.q > cfg.k and label == "message":
        if seed_bits is None:
            raise HarnessError("message labels with q > k require seed_bits")
        dec_table = decoding_table(Seed.from_bits(seed_bits), cfg.k)
        n_classes = 1 << cfg.k
    else:
        dec_table = np.arange(1 << cfg.q)
        n_classes = (1 << cfg.k) if label == "message" else (1 << cfg.q)
    rng = substream(seed, "sk_mi")
    labels = np.empty(count, dtype=np.int64)
    obs = np.empty((count, cfg.n))
    done = 0
    block = 0
    while done < count:
        B = min(chunk, count - done)
        v = rng.integers(0, 1 << cfg.q, size=B)
        _, transcript, _ = sk_transmit(v, cfg,
                                       make_noise_streams(seed, trial_block=block))
        labels[done:done + B] = dec_table[v]
        obs[done:done + B] = transcript.z if observer == "eve" else transcript.y
        done += B
        block += 1
    return MiSampleSet(labels=labels, observations=obs, num_classes=n_classes)


# --- SNR advantage gap ------------------------------------------------------

@dataclass(frozen=True)
class SagResult:
    gap_bits: float | None
    eve_snr_linear: float | None
    epsilon: float
    matched: bool
    trace: tuple = ()  # (eve_snr_db, leakage_bits) evaluations in order


def sag(i_bob_at, l_eve_at, s_yf_linear: float, epsilon: float = 0.05,
        range_db: tuple = (-5.0, 40.0), monotone_probes: int = 5) -> SagResult:
    """Smallest Eve forward SNR whose leakage matches Bob's rate, and the
    resulting advantage gap in bits.

    i_bob_at and l_eve_at map linear forward SNRs to bits.  The leakage
    must be nondecreasing in SNR over the range (probed empirically).
    The search runs a binary scan over a 0.25 dB grid, then bisects the
    bracketing interval down to 0.05 dB.
    """
    if epsilon <= 0:
        raise HarnessError("epsilon must be positive")
    s_yf_db = 10.0 * np.log10(s_yf_linear)
    lo_db, hi_db = s_yf_db + range_db[0], s_yf_db + range_db[1]
    target = float(i_bob_at(s_yf_linear))
    trace = []

    def leak_db(db):
        val = float(l_eve_at(10.0 ** (db / 10.0)))
        trace.append((db, val))
        return val

    probes_db = np.linspace(lo_db, hi_db, monotone_probes)
    probes = [leak_db(d) for d in probes_db]
    if any(b < a - epsilon for a, b in zip(probes, probes[1:])):
        raise HarnessError("leakage is not nondecreasing over the search range")

    # crossing of target - epsilon; below that level |target - leakage| >= eps
    level = target - epsilon
    if probes[-1] < level:
        return SagResult(gap_bits=None, eve_snr_linear=None, epsilon=epsilon,
                         matched=False, trace=tuple(trace))
    grid = np.arange(lo_db, hi_db + 0.25, 0.25)
    lo_i, hi_i = 0, len(grid) - 1
    if leak_db(grid[0]) >= level:
        hi_i = 0
    else:
        while hi_i - lo_i > 1:  # smallest grid index at or above the level
            mid = (lo_i + hi_i) // 2
            if leak_db(grid[mid]) >= level:
                hi_i = mid
            else:
                lo_i = mid
    lo_db_b, hi_db_b = (grid[max(hi_i - 1, 0)], grid[hi_i])
    while hi_db_b - lo_db_b > 0.05:
        mid = (lo_db_b + hi_db_b) / 2.0
        if leak_db(mid) >= level:
            hi_db_b = mid
        else:
            lo_db_b = mid
    s_star = 10.0 ** (hi_db_b / 10.0)
    gap = 0.5 * np.log2((1.0 + s_star) / (1.0 + s_yf_linear))
    return SagResult(gap_bits=float(gap), eve_snr_linear=float(s_star),
                     epsilon=epsilon, matched=True, trace=tuple(trace))


# --- config-driven sweeps ---------------------------------------------------

@dataclass
class ExperimentRow:
    scheme: str
    k: int
    q: int
    n: int
    snr_yf_db: float
    snr_yfb_db: float | None
    snr_zf_db: float
    snr_zfb_db: float | None
    seed: int
    bler: float | None = None
    i_bob_bits: float | None = None
    l_eve_bits: float | None = None
    sag_bits: float | None = None
    tau: float | None = None
    beta_final: float | None = None
    runtime_s: float = 0.0

    def as_csv(self) -> list:
        def fmt(v):
            return "" if v is None else repr(v) if isinstance(v, float) else str(v)

        return [SCHEMA_VERSION, self.scheme, self.k, self.q, self.n,
                fmt(self.snr_yf_db), fmt(self.snr_yfb_db), fmt(self.snr_zf_db),
                fmt(self.snr_zfb_db), self.seed, fmt(self.bler),
                fmt(self.i_bob_bits), fmt(self.l_eve_bits), fmt(self.sag_bits),
                fmt(self.tau), fmt(self.beta_final), fmt(self.runtime_s)]


_CONFIG_KEYS = {"scheme", "P", "k", "q", "n", "snr_yf_db", "snr_zf_db",
                "snr_yfb_db", "snr_zfb_db", "seeds", "seed_bits", "trials",
                "mi_samples", "estimate_bob", "estimate_eve", "compute_sag",
                "train", "output"}
_SWEEP_KEYS = ("n", "snr_yf_db", "snr_zf_db", "snr_yfb_db", "snr_zfb_db")


def load_config(path) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise HarnessError(f"{path}: config must be a mapping")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise HarnessError(f"{path}: unknown config fields {sorted(unknown)}")
    for req in ("scheme", "k", "q", "n", "snr_yf_db", "seeds"):
        if req not in raw:
            raise HarnessError(f"{path}: missing required field {req!r}")
    if raw["scheme"] not in ALL_SCHEMES:
        raise HarnessError(f"{path}: unknown scheme {raw['scheme']!r}")
    return raw


def _as_list(v):
    return v if isinstance(v, list) else [v]


def _train_code_for(cfg: ChannelConfig, train_opts: dict, seed: int) -> TrainedCode:
    arch = CodeArchitecture(q=cfg.q, n=cfg.n,
                            d_h=int(train_opts.get("d_h", 32)))
    tr = TrainConfig(batch_size=int(train_opts.get("batch_size", 2048)),
                     learning_rate=float(train_opts.get("learning_rate", 1e-3)),
                     steps=int(train_opts.get("steps", 1000)),
                     seed=seed)
    return train_cce(arch, cfg, tr)


def run_experiment(config_path, output_path=None) -> list:
    """Expand the sweep in a config file into CSV rows plus a manifest.

    Deterministic given the config and seeds; the manifest records the
    config content hash so any row can be re-run from it.
    """
    config = load_config(config_path)
    out = output_path or config.get("output")
    if out is None:
        raise HarnessError("no output path given (config 'output' or argument)")
    scheme = config["scheme"]
    P = float(config.get("P", 1.0))
    seed_bits = config.get("seed_bits")
    trials = int(config.get("trials", 0))
    mi_samples = int(config.get("mi_samples", 0))
    est_bob = config.get("estimate_bob", "none")
    est_eve = config.get("estimate_eve", "none")
    rows = []
    for n in _as_list(config["n"]):
        for syf in _as_list(config["snr_yf_db"]):
            for szf in _as_list(config.get("snr_zf_db", syf)):
                for syfb in _as_list(config.get("snr_yfb_db", None)):
                    for szfb in _as_list(config.get("snr_zfb_db", syfb)):
                        for seed in config["seeds"]:
                            rows.append(_run_one(
                                scheme, P, config["k"], config["q"], n,
                                syf, szf, syfb, szfb, int(seed), seed_bits,
                                trials, mi_samples, est_bob, est_eve,
                                bool(config.get("compute_sag", False)),
                                config.get("train", {})))
    _write_rows(out, rows)
    _write_manifest(out, config_path, config)
    return rows


def _run_one(scheme, P, k, q, n, syf, szf, syfb, szfb, seed, seed_bits,
             trials, mi_samples, est_bob, est_eve, compute_sag, train_opts):
    t0 = time.time()
    cfg = ChannelConfig.from_snr_db(P=P, snr_yf_db=syf, snr_zf_db=szf,
                                    n=n, k=k, q=q, snr_yfb_db=syfb,
                                    snr_zfb_db=szfb)
    row = ExperimentRow(scheme=scheme, k=k, q=q, n=n, snr_yf_db=syf,
                        snr_yfb_db=syfb, snr_zf_db=szf, snr_zfb_db=szfb,
                        seed=seed)
    code = None
    if scheme == "lightcode":
        code = _train_code_for(cfg, train_opts, seed)
    if trials:
        row.bler = bler_monte_carlo(scheme, cfg, trials, seed,
                                    seed_bits=seed_bits, code=code).bler

    def eve_leakage_at(s_lin):
        snr_db = 10.0 * np.log10(s_lin)
        ecfg = ChannelConfig.from_snr_db(P=P, snr_yf_db=syf, snr_zf_db=snr_db,
                                         n=n, k=k, q=q, snr_yfb_db=syfb,
                                         snr_zfb_db=szfb)
        return _estimate(ecfg, est_eve, "eve", mi_samples, seed, seed_bits,
                         scheme, code)

    if est_bob != "none":
        row.i_bob_bits = _estimate(cfg, est_bob, "bob", mi_samples, seed,
                                   seed_bits, scheme, code)
    if est_eve != "none":
        row.l_eve_bits = _estimate(cfg, est_eve, "eve", mi_samples, seed,
                                   seed_bits, scheme, code)
    if compute_sag:
        if row.i_bob_bits is None:
            raise HarnessError("SAG needs estimate_bob enabled")
        res = sag(lambda _s: row.i_bob_bits, eve_leakage_at, P / cfg.sigma2_yf)
        row.sag_bits = res.gap_bits
    row.runtime_s = time.time() - t0
    return row


def _estimate(cfg, method, which, mi_samples, seed, seed_bits, scheme, code):
    if method == "oracle":
        if scheme not in ("sk",):
            raise HarnessError("the exact oracle only covers the SK scheme")
        return exact_mixture_leakage(cfg, which, mc_samples=mi_samples or 100_000,
                                     seed_bits=seed_bits,
                                     rng=substream(seed, "oracle", which)).value_bits
    if method not in ("mine", "dime"):
        raise HarnessError(f"unknown estimator method {method!r}")
    count = mi_samples or 100_000
    if scheme == "lightcode":
        samples = collect_code_samples(code, count, seed, seed_bits=seed_bits,
                                       observer=which, cfg=cfg)
    else:
        samples = collect_sk_samples(cfg, count, seed, seed_bits=seed_bits,
                                     observer=which)
    mi_cfg = default_mi_train_config(seed)
    if method == "mine":
        return mine_estimate(samples, mi_cfg).value_bits
    return leakage_max_over_variants(samples, mi_cfg).value_bits


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv())


def _write_manifest(out_path, config_path, config):
    with open(config_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    manifest = {
        "schema": SCHEMA_VERSION,
        "config_path": str(config_path),
        "config_sha256": digest,
        "config": config,
        "rows_csv": str(out_path),
    }
    with open(f"{out_path}.manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
