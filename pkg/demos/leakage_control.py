"""Steer the learned code toward a target leakage level.

Starting from a reliability-only pretrained code, the trade-off loss adds
a Lagrangian penalty on the estimated leakage toward Eve.  Dual ascent on
the multiplier trades block error rate for secrecy: lower targets cost
reliability.  Expect a few minutes of runtime.
"""

from wtcsim.channel import ChannelConfig
from wtcsim.deep_code import (
    CodeArchitecture,
    collect_code_samples,
    evaluate_bler,
    train_cce,
    train_tradeoff,
)
from wtcsim.mi import default_mi_train_config, leakage_max_over_variants
from wtcsim.nn_core import TrainConfig

cfg = ChannelConfig.from_snr_db(P=1.0, snr_yf_db=1.0, snr_zf_db=1.0,
                                n=9, k=3, q=3)
arch = CodeArchitecture(q=3, n=9, d_h=32)
pre = train_cce(arch, cfg, TrainConfig(batch_size=2048, learning_rate=1e-3,
                                       steps=800, seed=0))

samples = collect_code_samples(pre, 40_000, seed=1)
base = leakage_max_over_variants(samples, default_mi_train_config(0))
print(f"unconstrained: leakage {base.value_bits:.2f} bits, "
      f"BLER {evaluate_bler(pre, 50_000, seed=2):.1e}")

for tau in (0.6, 0.3):
    res = train_tradeoff(pre, tau=tau,
                         tr=TrainConfig(batch_size=1024, learning_rate=3e-4,
                                        steps=300, seed=3),
                         refresh_every=50)
    samples = collect_code_samples(res.code, 40_000, seed=4)
    leak = leakage_max_over_variants(samples, default_mi_train_config(0))
    bler = evaluate_bler(res.code, 50_000, seed=5)
    print(f"tau = {tau}: leakage {leak.value_bits:.2f} bits, BLER {bler:.1e}, "
          f"multiplier path {[round(b, 3) for b in res.beta_trace]}")
