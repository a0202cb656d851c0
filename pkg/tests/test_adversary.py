import math
from dataclasses import replace

import numpy as np
import pytest

from b92qkd.adversary import (
    AttackConfig,
    AttackOutcome,
    apply_attack,
    detect_attack,
    intercept_block,
    run_attack_experiment,
    usd_measure,
)
from b92qkd.exceptions import ConfigurationError
from b92qkd.optics import Origin, SourceParams, emit_pulse
from b92qkd.protocol import run_session, sift

from conftest import ideal_config


def test_usd_success_probability():
    cfg = AttackConfig(theta=45)
    r = np.random.default_rng(0)
    n = 200_000
    hits = sum(usd_measure(0.0, cfg, r) is not None for _ in range(n))
    p = 1 - math.cos(math.pi / 4)
    assert abs(hits / n - p) < 3 * math.sqrt(p * (1 - p) / n)
    big = intercept_block(1_000_000, cfg, r)
    assert abs(big.mean() - 0.29289) < 3 * math.sqrt(p * (1 - p) / 1e6)


def test_usd_orthogonal_states_always_conclusive():
    cfg = AttackConfig(theta=90)
    r = np.random.default_rng(1)
    assert all(usd_measure(45.0, cfg, r) == 1 for _ in range(1000))


def test_usd_never_wrong():
    cfg = AttackConfig()
    r = np.random.default_rng(2)
    for angle, bit in ((0.0, 0), (45.0, 1)):
        outcomes = {usd_measure(angle, cfg, r) for _ in range(5000)}
        assert outcomes <= {bit, None}


def test_usd_rejects_foreign_state():
    with pytest.raises(ConfigurationError):
        usd_measure(30.0, AttackConfig(), np.random.default_rng())


def test_attack_config_validation():
    with pytest.raises(ConfigurationError):
        AttackConfig(substitute_channel_loss=-1)


def test_apply_attack_counters_and_states():
    r = np.random.default_rng(3)
    src = SourceParams(mean_photon_number=0.5)
    bits = r.integers(0, 2, 20_000)
    pulses = [emit_pulse(int(b), k, src, r) for k, b in enumerate(bits)]
    out, outcome = apply_attack(pulses, AttackConfig(), r, src)
    assert len(out) == len(pulses)
    assert outcome.unambiguous <= outcome.intercepted
    assert outcome.resent == outcome.unambiguous
    assert outcome.intercepted == sum(p.n_photons > 0 for p in pulses)
    for slot, bit in outcome.eve_known_bits.items():
        assert bit == bits[slot]
    for p_in, p_out in zip(pulses, out):
        assert p_out.n_photons <= 1 or not p_out.from_eve
        if p_out.from_eve:
            assert p_out.polarization == src.angle(p_in.bit)
        if p_in.n_photons == 0:
            assert p_out.n_photons == 0


def test_degenerate_theta_forwards_nothing():
    r = np.random.default_rng(4)
    src = SourceParams(mean_photon_number=1.0)
    pulses = [emit_pulse(k % 2, k, src, r) for k in range(2000)]
    out, outcome = apply_attack(pulses, AttackConfig(theta=0), r, src)
    assert outcome.unambiguous == 0 and sum(p.n_photons for p in out) == 0


def test_apply_attack_requires_enabled():
    with pytest.raises(ConfigurationError):
        apply_attack([], AttackConfig(enabled=False), np.random.default_rng())


@pytest.mark.parametrize(
    "baseline,observed,tol,verdict", [(18_278, 5_355, 0.1, "suspect"), (1000, 1000, 0.1, "clear"), (1000, 950, 0.1, "clear")]
)
def test_detect_attack(baseline, observed, tol, verdict):
    assert detect_attack(baseline, observed, tol) == verdict


def test_detect_attack_requires_positive_baseline():
    with pytest.raises(ConfigurationError):
        detect_attack(0, 1, 0.1)


def test_session_attack_tags_and_full_information():
    cfg = replace(ideal_config(collection_time=2e-4), attack=AttackConfig())
    rec = run_session(cfg)
    assert set(np.unique(rec.events.origin).tolist()) <= {int(Origin.EVE_RESEND)}
    known = dict(zip(rec.eve.slots.tolist(), rec.eve.bits.tolist()))
    key = sift(rec, 1.0)
    assert all(known[s] == a for s, a in zip(key.accepted_slots.tolist(), key.alice_key.tolist()))
    assert key.errors == 0


def test_rate_ratio_closed_form_with_lossy_original_channel():
    base = ideal_config(collection_time=5e-4)
    cfg = replace(base, channel=replace(base.channel, extra_attenuation=3.0))
    out = run_attack_experiment(cfg, AttackConfig(), 1.0)
    expected = (1 - math.cos(math.pi / 4)) / 10 ** (-0.3)
    assert out.rate_ratio == pytest.approx(expected, abs=0.01)
    assert out.eve_information == 1.0


def test_outcome_summary_keys():
    s = AttackOutcome().summary()
    assert {"rate_ratio", "induced_qber_delta", "eve_information_fraction", "intercepted"} <= set(s)
