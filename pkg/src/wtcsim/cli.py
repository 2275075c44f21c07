"""Command-line front end for simulations, training, and sweeps."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .channel import ChannelConfig, substream
from .deep_code import (
    CodeArchitecture,
    evaluate_bler,
    load_code,
    save_code,
    train_cce,
    train_tradeoff,
)
from .harness import (
    bler_monte_carlo,
    collect_sk_samples,
    exact_mixture_leakage,
    run_experiment,
    sag,
    secrecy_capacity_nofb,
    sk_secrecy_capacity,
)
from .mi import (
    NEURAL_VARIANTS,
    default_mi_train_config,
    estimate_mi,
    leakage_max_over_variants,
    mine_estimate,
)
from .nn_core import TrainConfig


def _add_channel_args(p: argparse.ArgumentParser):
    p.add_argument("--power", type=float, default=1.0)
    p.add_argument("--snr-yf-db", type=float, default=0.0)
    p.add_argument("--snr-zf-db", type=float, default=None,
                   help="defaults to the Bob forward SNR")
    p.add_argument("--snr-yfb-db", type=float, default=None,
                   help="omit for noiseless feedback")
    p.add_argument("--snr-zfb-db", type=float, default=None)
    p.add_argument("-n", "--blocklength", type=int, default=9)
    p.add_argument("-k", "--message-bits", type=int, default=3)
    p.add_argument("-q", "--block-bits", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seed-bits", type=str, default=None,
                   help="hash seed as a bit string, e.g. 1101")


def _channel_from(args) -> ChannelConfig:
    szf = args.snr_zf_db if args.snr_zf_db is not None else args.snr_yf_db
    return ChannelConfig.from_snr_db(
        P=args.power, snr_yf_db=args.snr_yf_db, snr_zf_db=szf,
        n=args.blocklength, k=args.message_bits, q=args.block_bits,
        snr_yfb_db=args.snr_yfb_db, snr_zfb_db=args.snr_zfb_db)


def _seed_bits(args):
    if args.seed_bits is None:
        return None
    return [int(c) for c in args.seed_bits]


def cmd_simulate(args) -> int:
    cfg = _channel_from(args)
    code = load_code(args.code) if args.code else None
    res = bler_monte_carlo(args.scheme, cfg, args.trials, args.seed,
                           seed_bits=_seed_bits(args), code=code)
    print(json.dumps({"scheme": args.scheme, "trials": res.trials,
                      "errors": res.errors, "bler": res.bler,
                      "ci_half": res.ci_half}))
    return 0


def cmd_train(args) -> int:
    cfg = _channel_from(args)
    tr = TrainConfig(batch_size=args.batch_size, learning_rate=args.learning_rate,
                     steps=args.steps, seed=args.seed)
    if args.tau is None:
        arch = CodeArchitecture(q=cfg.q, n=cfg.n, d_h=args.hidden)
        code = train_cce(arch, cfg, tr)
        extra = {"final_loss": code.telemetry["loss"][-1]}
    else:
        pre = load_code(args.code)
        res = train_tradeoff(pre, tau=args.tau, tr=tr,
                             seed_bits=_seed_bits(args))
        code = res.code
        extra = {"tau": args.tau, "beta_final": res.beta_trace[-1],
                 "leakage_trace": res.leakage_trace}
    save_code(args.out, code)
    bler = evaluate_bler(code, args.eval_trials, seed=args.seed + 1)
    print(json.dumps({"checkpoint": args.out, "bler": bler, **extra}))
    return 0


def cmd_estimate_mi(args) -> int:
    cfg = _channel_from(args)
    mi_cfg = default_mi_train_config(args.seed)
    if args.estimator == "oracle":
        est = exact_mixture_leakage(cfg, args.observer, mc_samples=args.samples,
                                    seed_bits=_seed_bits(args),
                                    rng=substream(args.seed, "oracle"))
    else:
        samples = collect_sk_samples(cfg, args.samples, args.seed,
                                     seed_bits=_seed_bits(args),
                                     observer=args.observer)
        if args.estimator == "dime-max":
            est = leakage_max_over_variants(samples, mi_cfg)
        elif args.estimator == "MINE":
            est = mine_estimate(samples, mi_cfg)
        else:
            est = estimate_mi(samples.features(), samples.observations,
                              args.estimator, mi_cfg,
                              ceiling_bits=samples.entropy_bits)
    print(json.dumps({"estimator": est.variant, "bits": est.value_bits,
                      "stderr_bits": est.stderr_bits}))
    return 0


def cmd_sag(args) -> int:
    cfg = _channel_from(args)
    seed_bits = _seed_bits(args)

    def i_bob(_s):
        return exact_mixture_leakage(cfg, "bob", mc_samples=args.samples,
                                     seed_bits=seed_bits,
                                     rng=substream(args.seed, "bob")).value_bits

    def l_eve(s_lin):
        snr_db = 10.0 * np.log10(s_lin)
        ecfg = ChannelConfig.from_snr_db(
            P=cfg.P, snr_yf_db=args.snr_yf_db, snr_zf_db=snr_db, n=cfg.n,
            k=cfg.k, q=cfg.q, snr_yfb_db=args.snr_yfb_db,
            snr_zfb_db=args.snr_zfb_db)
        return exact_mixture_leakage(ecfg, "eve", mc_samples=args.samples,
                                     seed_bits=seed_bits,
                                     rng=substream(args.seed, "eve")).value_bits

    res = sag(i_bob, l_eve, cfg.P / cfg.sigma2_yf, epsilon=args.epsilon)
    print(json.dumps({"matched": res.matched, "gap_bits": res.gap_bits,
                      "eve_snr_linear": res.eve_snr_linear,
                      "evaluations": len(res.trace)}))
    return 0


def cmd_sweep(args) -> int:
    rows = run_experiment(args.config, args.out)
    print(json.dumps({"rows": len(rows), "csv": args.out or "from config"}))
    return 0


def cmd_capacity(args) -> int:
    cfg = _channel_from(args)
    out = {
        "secrecy_capacity_nofb_bits":
            secrecy_capacity_nofb(cfg.P, cfg.sigma2_yf, cfg.sigma2_zf),
        "feedback_secrecy_capacity_bits":
            sk_secrecy_capacity(cfg.P, cfg.sigma2_yf),
    }
    print(json.dumps(out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wtcsim",
        description="Gaussian wiretap channel with feedback: simulation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo block error rate")
    _add_channel_args(p)
    p.add_argument("--scheme", choices=("sk", "pb", "lightcode"), default="sk")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--code", type=str, default=None,
                   help="checkpoint prefix for the learned scheme")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the learned code")
    _add_channel_args(p)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=2048)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--tau", type=float, default=None,
                   help="run leakage-constrained training toward this target")
    p.add_argument("--code", type=str, default=None,
                   help="pretrained checkpoint prefix (required with --tau)")
    p.add_argument("--eval-trials", type=int, default=100_000)
    p.add_argument("--out", type=str, required=True,
                   help="checkpoint prefix to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate-mi", help="leakage / rate estimation")
    _add_channel_args(p)
    p.add_argument("--estimator",
                   choices=("oracle", "dime-max") + NEURAL_VARIANTS,
                   default="oracle")
    p.add_argument("--observer", choices=("bob", "eve"), default="eve")
    p.add_argument("--samples", type=int, default=100_000)
    p.set_defaults(func=cmd_estimate_mi)

    p = sub.add_parser("sag", help="SNR advantage gap search")
    _add_channel_args(p)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--samples", type=int, default=100_000)
    p.set_defaults(func=cmd_sag)

    p = sub.add_parser("sweep", help="run a config-file sweep to CSV")
    p.add_argument("config")
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("capacity", help="closed-form capacity values")
    _add_channel_args(p)
    p.set_defaults(func=cmd_capacity)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
