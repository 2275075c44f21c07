import csv
import json

import numpy as np
import pytest

from wtcsim.channel import ChannelConfig
from wtcsim.cli import main as cli_main
from wtcsim.harness import (
    CSV_COLUMNS,
    BlerResult,
    HarnessError,
    _bler_interval,
    bler_monte_carlo,
    collect_sk_samples,
    load_config,
    q_function,
    run_experiment,
    sag,
    secrecy_capacity_nofb,
    sk_secrecy_capacity,
)
from wtcsim.linear_schemes import sk_analytic_bler


def make_cfg(n=9, k=3, q=3, snr_db=0.0):
    return ChannelConfig.from_snr_db(P=1.0, snr_yf_db=snr_db, snr_zf_db=snr_db,
                                     n=n, k=k, q=q)


# --- closed forms -----------------------------------------------------------

def test_q_function_values():
    assert q_function(0.0) == pytest.approx(0.5)
    assert q_function(1.2816) == pytest.approx(0.1, abs=1e-4)
    assert q_function(-30.0) == pytest.approx(1.0)
    assert q_function(30.0) == pytest.approx(0.0, abs=1e-12)


def test_secrecy_capacity_nofb():
    assert secrecy_capacity_nofb(1.0, 1.0, 1.0) == 0.0
    # reversely degraded channels clip at zero
    assert secrecy_capacity_nofb(1.0, 2.0, 1.0) == 0.0
    expected = 0.5 * (1.0 - np.log2(4.0 / 3.0))
    assert secrecy_capacity_nofb(1.0, 1.0, 3.0) == pytest.approx(expected)
    with pytest.raises(HarnessError):
        secrecy_capacity_nofb(1.0, 0.0, 1.0)


def test_sk_secrecy_capacity():
    assert sk_secrecy_capacity(1.0, 1.0) == pytest.approx(0.5)
    assert sk_secrecy_capacity(3.0, 1.0) == pytest.approx(1.0)
    assert sk_secrecy_capacity(1e-12, 1.0) == pytest.approx(0.0, abs=1e-11)


# --- BLER -------------------------------------------------------------------

def test_bler_result_validation():
    r = BlerResult(trials=100, errors=7, ci_half=0.05)
    assert r.bler == pytest.approx(0.07)
    with pytest.raises(HarnessError):
        BlerResult(trials=10, errors=11, ci_half=0.0)


def test_bler_interval_regimes():
    # plenty of errors: plain normal approximation
    assert _bler_interval(500, 10_000) == pytest.approx(
        1.96 * np.sqrt(0.05 * 0.95 / 10_000))
    # zero errors: exact upper bound ~ 3/N scale, never zero
    half = _bler_interval(0, 10_000)
    assert 0 < half < 3e-4


def test_bler_monte_carlo_matches_analytic():
    cfg = make_cfg(n=6)
    res = bler_monte_carlo("sk", cfg, 100_000, seed=3)
    expected = sk_analytic_bler(1.0, 1.0, 3, 6)
    assert abs(res.bler - expected) < max(0.2 * expected, 3 * res.ci_half)


def test_bler_monte_carlo_near_noise_free():
    cfg = make_cfg(n=4, snr_db=40.0)
    res = bler_monte_carlo("sk", cfg, 5_000, seed=1)
    assert res.errors == 0


def test_bler_monte_carlo_deterministic():
    cfg = make_cfg(n=5)
    a = bler_monte_carlo("sk", cfg, 20_000, seed=9)
    b = bler_monte_carlo("sk", cfg, 20_000, seed=9)
    assert a.errors == b.errors


def test_bler_monte_carlo_security_layer():
    cfg = ChannelConfig.from_snr_db(P=1.0, snr_yf_db=0.0, snr_zf_db=0.0,
                                    n=9, k=3, q=4)
    with pytest.raises(HarnessError):
        bler_monte_carlo("sk", cfg, 2_000, seed=0)
    res = bler_monte_carlo("sk", cfg, 2_000, seed=0, seed_bits=[1, 1, 0, 1])
    assert 0.0 <= res.bler <= 1.0


def test_bler_monte_carlo_requires_enough_trials():
    with pytest.raises(HarnessError):
        bler_monte_carlo("sk", make_cfg(), 100, seed=0)


# --- SK sample collection ---------------------------------------------------

def test_collect_sk_samples_shapes():
    cfg = make_cfg(n=5)
    s = collect_sk_samples(cfg, 3_000, seed=4)
    assert s.observations.shape == (3_000, 5)
    assert s.num_classes == 8
    s_bob = collect_sk_samples(cfg, 3_000, seed=4, observer="bob")
    assert not np.allclose(s.observations, s_bob.observations)


def test_collect_sk_samples_deterministic():
    cfg = make_cfg(n=4)
    a = collect_sk_samples(cfg, 2_000, seed=5)
    b = collect_sk_samples(cfg, 2_000, seed=5)
    np.testing.assert_array_equal(a.observations, b.observations)
    np.testing.assert_array_equal(a.labels, b.labels)


# --- SAG --------------------------------------------------------------------

def awgn_bits(s):
    return 0.5 * np.log2(1.0 + s)


def test_sag_identity_gap_is_zero():
    res = sag(lambda s: awgn_bits(s), awgn_bits, s_yf_linear=1.0)
    assert res.matched
    assert res.gap_bits == pytest.approx(0.0, abs=0.05)


def test_sag_known_arithmetic():
    # target 1.5 bits is matched by the AWGN curve at S = 7
    res = sag(lambda s: 1.5, awgn_bits, s_yf_linear=1.0, epsilon=1e-4)
    assert res.matched
    assert res.eve_snr_linear == pytest.approx(7.0, rel=0.02)
    assert res.gap_bits == pytest.approx(1.0, abs=0.02)


def test_sag_no_match():
    res = sag(lambda s: 50.0, awgn_bits, s_yf_linear=1.0)
    assert not res.matched
    assert res.gap_bits is None


def test_sag_rejects_decreasing_leakage():
    with pytest.raises(HarnessError):
        sag(lambda s: 1.0, lambda s: -awgn_bits(s), s_yf_linear=1.0)


def test_sag_resolution():
    res = sag(lambda s: 1.5, awgn_bits, s_yf_linear=1.0, epsilon=1e-4)
    # final bracket width is at most 0.05 dB
    db = sorted(d for d, _ in res.trace)
    star_db = 10 * np.log10(res.eve_snr_linear)
    assert min(abs(d - star_db) for d in db) < 1e-9  # s* was evaluated
    assert awgn_bits(res.eve_snr_linear) >= 1.5 - 1e-4


# --- config sweeps ----------------------------------------------------------

def write_config(tmp_path, **overrides):
    import yaml

    config = {"scheme": "sk", "k": 3, "q": 3, "n": [3, 4], "snr_yf_db": 0.0,
              "seeds": [0], "trials": 2000, "estimate_bob": "none",
              "estimate_eve": "none"}
    config.update(overrides)
    path = tmp_path / "sweep.yaml"
    path.write_text(yaml.safe_dump(config))
    return path


def test_run_experiment_cardinality_and_schema(tmp_path):
    path = write_config(tmp_path)
    out = tmp_path / "rows.csv"
    rows = run_experiment(path, out)
    assert len(rows) == 2
    with open(out) as fh:
        reader = list(csv.reader(fh))
    assert reader[0] == CSV_COLUMNS
    assert len(reader) == 3
    assert all(r[0] == "wtcsim-rows-1" for r in reader[1:])
    manifest = json.loads((tmp_path / "rows.csv.manifest.json").read_text())
    assert len(manifest["config_sha256"]) == 64


def test_run_experiment_empty_sweep(tmp_path):
    path = write_config(tmp_path, seeds=[])
    out = tmp_path / "rows.csv"
    rows = run_experiment(path, out)
    assert rows == []
    with open(out) as fh:
        assert len(list(csv.reader(fh))) == 1  # header only


def test_run_experiment_reproducible(tmp_path):
    path = write_config(tmp_path, n=[3])
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    run_experiment(path, out1)
    run_experiment(path, out2)
    strip = lambda p: [r[:-1] for r in csv.reader(open(p))]  # drop runtime col
    assert strip(out1) == strip(out2)


def test_run_experiment_with_oracle_estimates(tmp_path):
    path = write_config(tmp_path, n=[4], trials=0, estimate_bob="oracle",
                        estimate_eve="oracle", mi_samples=5000)
    rows = run_experiment(path, tmp_path / "rows.csv")
    assert rows[0].i_bob_bits > rows[0].l_eve_bits  # feedback advantage


def test_load_config_rejects_bad_fields(tmp_path):
    path = write_config(tmp_path, bogus_key=1)
    with pytest.raises(HarnessError, match="bogus_key"):
        load_config(path)
    import yaml

    p2 = tmp_path / "missing.yaml"
    p2.write_text(yaml.safe_dump({"scheme": "sk", "k": 3}))
    with pytest.raises(HarnessError, match="missing required"):
        load_config(p2)
    p3 = tmp_path / "scheme.yaml"
    p3.write_text(yaml.safe_dump({"scheme": "nope", "k": 3, "q": 3, "n": 3,
                                  "snr_yf_db": 0.0, "seeds": [0]}))
    with pytest.raises(HarnessError, match="unknown scheme"):
        load_config(p3)


# --- CLI --------------------------------------------------------------------

def test_cli_capacity(capsys):
    assert cli_main(["capacity", "--snr-yf-db", "0", "--snr-zf-db", "0"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["secrecy_capacity_nofb_bits"] == 0.0
    assert out["feedback_secrecy_capacity_bits"] == pytest.approx(0.5)


def test_cli_simulate(capsys):
    rc = cli_main(["simulate", "--scheme", "sk", "-n", "5", "--trials", "5000",
                   "--seed", "2"])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["trials"] == 5000
    assert 0.0 <= out["bler"] <= 1.0


def test_cli_estimate_mi_oracle(capsys):
    rc = cli_main(["estimate-mi", "--estimator", "oracle", "-n", "4",
                   "--samples", "5000", "--observer", "eve"])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert 0.0 <= out["bits"] <= 3.0


def test_cli_sweep(tmp_path, capsys):
    path = write_config(tmp_path, n=[3])
    out = tmp_path / "rows.csv"
    rc = cli_main(["sweep", str(path), "--out", str(out)])
    assert rc == 0
    assert out.exists()


def test_cli_reports_errors(capsys):
    rc = cli_main(["simulate", "--trials", "10"])
    assert rc == 1
    assert "error" in capsys.readouterr().err
