"""Intercept-resend attack based on unambiguous state discrimination.

Eve sits directly after Alice. For every nonempty pulse she performs an
optimal unambiguous discrimination between the two signal states. A
conclusive outcome is always correct; she then re-sends exactly one photon in
that state through her own (possibly lossless) channel. Inconclusive pulses
are blocked. No polarisation errors are introduced, only a rate change, which
a lower-loss substitute channel can hide.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigurationError
from .optics import SourceParams, transmittance_from_db


@dataclass(frozen=True)
class AttackConfig:
    enabled: bool = True
    theta: float = 45.0
    substitute_channel_loss: float = 0.0
    resend_photon_number: int = 1

    def __post_init__(self):
        if self.substitute_channel_loss < 0:
            raise ConfigurationError("substitute_channel_loss must be >= 0")
        if not 0 <= self.theta <= 90:
            raise ConfigurationError("theta must lie in [0, 90] degrees")
        if self.resend_photon_number != 1:
            raise ConfigurationError("only single-photon resending is modelled")

    @property
    def success_probability(self) -> float:
        return 1.0 - abs(math.cos(math.radians(self.theta)))

    @property
    def substitute_transmittance(self) -> float:
        return transmittance_from_db(self.substitute_channel_loss)


@dataclass
class AttackOutcome:
    """Counters and derived signatures of one attack run.

    ``eve_known_bits`` maps slot index to the bit Eve learned. ``rate_ratio``
    and ``induced_qber_delta`` are only known once Bob's statistics have been
    compared with an attack-free baseline; they are NaN otherwise.
    """

    intercepted: int = 0
    unambiguous: int = 0
    resent: int = 0
    eve_known_bits: dict = field(default_factory=dict)
    induced_qber_delta: float = float("nan")
    rate_ratio: float = float("nan")
    qber_delta_sigma: float = float("nan")
    eve_information: float = float("nan")

    def summary(self) -> dict:
        return {
            "intercepted": self.intercepted,
            "unambiguous": self.unambiguous,
            "resent": self.resent,
            "rate_ratio": self.rate_ratio,
            "induced_qber_delta": self.induced_qber_delta,
            "qber_delta_sigma": self.qber_delta_sigma,
            "eve_information_fraction": self.eve_information,
        }


def usd_measure(state_angle: float, cfg: AttackConfig, rng: np.random.Generator, angles=(0.0, 45.0)):
    """Unambiguously discriminate one photon.

    Returns the bit encoded by ``state_angle`` with probability
    ``1 - |cos(theta)|`` and None (inconclusive) otherwise.
    """
    if math.isclose(state_angle, angles[0]):
        bit = 0
    elif math.isclose(state_angle, angles[1]):
        bit = 1
    else:
        raise ConfigurationError(f"state angle {state_angle} is not a signal state {angles}")
    if rng.random() < cfg.success_probability:
        return bit
    return None


def apply_attack(pulses, cfg: AttackConfig, rng: np.random.Generator, source: SourceParams | None = None):
    """Run the attack over an iterable of pulses fresh from Alice.

    Returns the list of pulses Eve forwards (one per input pulse, possibly
    empty) and the :class:`AttackOutcome` counters.
    """
    if not cfg.enabled:
        raise ConfigurationError("attack is disabled")
    source = source or SourceParams()
    angles = (source.polarization_angle_bit0, source.polarization_angle_bit1)
    t_sub = cfg.substitute_transmittance
    outcome = AttackOutcome()
    forwarded = []
    for p in pulses:
        if p.n_photons == 0:
            forwarded.append(p)
            continue
        outcome.intercepted += 1
        bit = usd_measure(p.polarization, cfg, rng, angles)
        if bit is None:
            forwarded.append(replace(p, photon_times=()))
            continue
        outcome.unambiguous += 1
        outcome.resent += 1
        outcome.eve_known_bits[p.slot_index] = bit
        survives = rng.random() < t_sub
        forwarded.append(
            replace(
                p,
                photon_times=(p.photon_times[0],) if survives else (),
                polarization=angles[bit],
                from_eve=True,
            )
        )
    return forwarded, outcome


def intercept_block(n_pulses: int, cfg: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    """Vectorised conclusive-outcome mask for ``n_pulses`` nonempty pulses."""
    return rng.random(n_pulses) < cfg.success_probability


def detect_attack(baseline_rate: float, observed_rate: float, tolerance: float) -> str:
    """Rate-monitoring verdict: ``"suspect"`` when the rate drops by more than ``tolerance``."""
    if baseline_rate <= 0:
        raise ConfigurationError("baseline_rate must be > 0")
    return "suspect" if observed_rate < baseline_rate * (1.0 - tolerance) else "clear"


def run_attack_experiment(config, attack: AttackConfig | None = None, window_fraction: float = 1.0, workers=None):
    """Paired sessions with and without the attack on the same seed.

    Rates compared are Bob's total click rates. The QBER delta uses gated
    counts at ``window_fraction``; its standard error is the binomial error of
    the difference of the two estimates.
    """
    from . import analytics, protocol

    attack = attack or AttackConfig()
    base = protocol.run_session(replace(config, attack=None), workers=workers)
    hit = protocol.run_session(replace(config, attack=attack), workers=workers)

    r0 = len(base.events) / base.duration
    r1 = len(hit.events) / hit.duration
    s0 = analytics.window_stats(base, window_fraction)
    s1 = analytics.window_stats(hit, window_fraction)

    def q_and_var(s):
        n = s.c_correct + s.c_incorrect
        if n == 0:
            return float("nan"), float("nan")
        q = s.c_incorrect / n
        return q, q * (1 - q) / n

    q0, v0 = q_and_var(s0)
    q1, v1 = q_and_var(s1)
    log = hit.eve
    key = protocol.sift(hit, window_fraction)
    known = set(log.slots.tolist()) if log is not None else set()
    info = (
        sum(1 for s in key.accepted_slots.tolist() if s in known) / len(key.accepted_slots)
        if len(key.accepted_slots)
        else float("nan")
    )
    return AttackOutcome(
        intercepted=log.intercepted,
        unambiguous=log.unambiguous,
        resent=log.unambiguous,
        eve_known_bits=dict(zip(log.slots.tolist(), log.bits.tolist())),
        induced_qber_delta=q1 - q0,
        rate_ratio=r1 / r0 if r0 > 0 else float("nan"),
        qber_delta_sigma=math.sqrt(v0 + v1),
        eve_information=info,
    )
