"""Photon-level model of the sources, the fibre and the passive B92 receiver.

Angles are in degrees, times in seconds, losses in dB unless a name says
otherwise. Bob's receiver is a 50:50 coupler feeding two polarising beam
splitters, one per channel, each followed by a single-photon detector.
Channel 0 analyses at -45 deg (crossed with Alice's "1" state at 45 deg) and
so only registers unambiguous zeros; channel 1 analyses at 90 deg and only
registers unambiguous ones.

The per-pulse functions (:func:`emit_pulse`, :func:`propagate`,
:func:`detect`, :func:`dark_events`) follow one pulse at a time. The session
engine in :mod:`b92qkd.protocol` uses the vectorised helpers at the bottom of
this module, which sample the same distributions for whole blocks of slots.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
PS = 1e-12


def transmittance_from_db(loss: float) -> float:
    """Power transmittance ``10**(-loss/10)`` of a ``loss`` dB element."""
    if loss < 0:
        raise ConfigurationError(f"loss must be >= 0 dB, got {loss}")
    return 10.0 ** (-loss / 10.0)


def _check(cond, msg):
    if not cond:
        raise ConfigurationError(msg)


@dataclass(frozen=True)
class SourceParams:
    """Weak coherent transmitter.

    ``single_photon`` replaces the Poisson photon number by exactly one photon
    per pulse; it is used for idealised protocol checks.
    """

    mean_photon_number: float = 0.1
    clock_frequency: float = 1e9
    pulse_timing_fwhm: float = 0.0
    polarization_angle_bit0: float = 0.0
    polarization_angle_bit1: float = 45.0
    single_photon: bool = False

    def __post_init__(self):
        _check(self.mean_photon_number > 0, "mean_photon_number must be > 0")
        _check(self.clock_frequency > 0, "clock_frequency must be > 0")
        _check(self.pulse_timing_fwhm >= 0, "pulse_timing_fwhm must be >= 0")

    @property
    def theta(self) -> float:
        """Separation of the two signal states, in degrees."""
        return abs(self.polarization_angle_bit1 - self.polarization_angle_bit0)

    def angle(self, bit):
        return np.where(
            np.asarray(bit) == 1, self.polarization_angle_bit1, self.polarization_angle_bit0
        )


@dataclass(frozen=True)
class ChannelParams:
    fiber_length: float = 0.0
    attenuation: float = 2.2
    extra_attenuation: float = 0.0
    dispersion: float = 100.0
    source_linewidth: float = 0.1
    polarization_drift_rate: float = 0.0

    def __post_init__(self):
        for name in (
            "fiber_length",
            "attenuation",
            "extra_attenuation",
            "dispersion",
            "source_linewidth",
            "polarization_drift_rate",
        ):
            _check(getattr(self, name) >= 0, f"{name} must be >= 0")

    @property
    def loss_db(self) -> float:
        return self.fiber_length * self.attenuation + self.extra_attenuation

    @property
    def transmittance(self) -> float:
        return transmittance_from_db(self.loss_db)

    @property
    def dispersion_sigma(self) -> float:
        """Chromatic-dispersion timing spread in seconds (ps/(nm km) * nm * km)."""
        return self.dispersion * self.source_linewidth * self.fiber_length * PS


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 0.40
    dark_rate: float = 180.0
    jitter_fwhm: float = 350e-12
    dead_time: float = 50e-9
    afterpulse_prob: float = 0.0
    afterpulse_time: float = 100e-9

    def __post_init__(self):
        _check(0.0 <= self.efficiency <= 1.0, "efficiency must lie in [0, 1]")
        _check(self.dark_rate >= 0, "dark_rate must be >= 0")
        _check(self.jitter_fwhm >= 0, "jitter_fwhm must be >= 0")
        _check(self.dead_time >= 0, "dead_time must be >= 0")
        _check(0.0 <= self.afterpulse_prob < 1.0, "afterpulse_prob must lie in [0, 1)")
        _check(self.afterpulse_time > 0, "afterpulse_time must be > 0")

    @property
    def jitter_sigma(self) -> float:
        return self.jitter_fwhm * FWHM_TO_SIGMA


@dataclass(frozen=True)
class ReceiverParams:
    """Bob's passive receiver.

    ``extra_dark_rate`` is an additive background per detector, e.g. residual
    synchronisation-laser cross-talk; it is zero by default.
    """

    coupler_split: float = 0.5
    pbs_extinction: float = 0.002
    analyzer_angle_ch0: float = -45.0
    analyzer_angle_ch1: float = 90.0
    insertion_loss: float = 7.0
    detectors: tuple = field(default_factory=lambda: (DetectorParams(), DetectorParams()))
    extra_dark_rate: float = 0.0

    def __post_init__(self):
        _check(0.0 < self.coupler_split < 1.0, "coupler_split must lie in (0, 1)")
        _check(0.0 <= self.pbs_extinction < 0.5, "pbs_extinction must lie in [0, 0.5)")
        _check(self.insertion_loss >= 0, "insertion_loss must be >= 0")
        _check(self.extra_dark_rate >= 0, "extra_dark_rate must be >= 0")
        _check(len(self.detectors) == 2, "receiver needs exactly two detectors")
        object.__setattr__(self, "detectors", tuple(self.detectors))

    @property
    def analyzer_angles(self) -> np.ndarray:
        return np.array([self.analyzer_angle_ch0, self.analyzer_angle_ch1])


def analyzer_pass_probability(delta, extinction: float):
    """Probability that a photon at ``delta`` degrees to the axis passes the PBS."""
    c = np.cos(np.deg2rad(delta))
    return (1.0 - 2.0 * extinction) * c * c + extinction


class Origin(enum.IntEnum):
    SIGNAL = 0
    LEAKAGE = 1
    DARK = 2
    EVE_RESEND = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, text: str) -> "Origin":
        return cls[text.strip().upper()]


@dataclass(frozen=True)
class DetectionEvent:
    channel: int
    timestamp: float
    slot_index: int | None
    origin: Origin
    truth_bit: int | None


@dataclass(frozen=True)
class Pulse:
    """One clock slot as it leaves (or travels through) the optics.

    ``photon_times`` are offsets from the start of the slot. ``timing_sigma``
    accumulates Gaussian timing spread that is applied at detection.
    """

    slot_index: int
    bit: int
    photon_times: tuple
    polarization: float
    bit_width: float
    timing_sigma: float = 0.0
    from_eve: bool = False

    @property
    def n_photons(self) -> int:
        return len(self.photon_times)


def emit_pulse(bit: int, slot: int, params: SourceParams, rng: np.random.Generator) -> Pulse:
    """Emit one NRZ pulse: Poisson photon number, emission times uniform in the slot."""
    if bit not in (0, 1):
        raise ConfigurationError(f"bit must be 0 or 1, got {bit}")
    n = 1 if params.single_photon else int(rng.poisson(params.mean_photon_number))
    width = 1.0 / params.clock_frequency
    times = tuple(rng.random(n) * width)
    return Pulse(
        slot_index=slot,
        bit=bit,
        photon_times=times,
        polarization=float(params.angle(bit)),
        bit_width=width,
        timing_sigma=params.pulse_timing_fwhm * FWHM_TO_SIGMA,
    )


def propagate(pulse: Pulse, ch: ChannelParams, elapsed: float, rng: np.random.Generator) -> Pulse:
    """Send a pulse through the fibre.

    Photons survive independently with the channel transmittance; survivors
    pick up a Gaussian dispersion delay and the polarisation is rotated by a
    random-walk drift accumulated over ``elapsed`` seconds.
    """
    t = np.asarray(pulse.photon_times, dtype=float)
    keep = rng.random(t.size) < ch.transmittance
    t = t[keep]
    sigma = ch.dispersion_sigma
    if sigma > 0 and t.size:
        t = t + rng.normal(0.0, sigma, t.size)
    pol = pulse.polarization
    if ch.polarization_drift_rate > 0 and elapsed > 0:
        pol += rng.normal(0.0, ch.polarization_drift_rate * math.sqrt(elapsed))
    return Pulse(
        slot_index=pulse.slot_index,
        bit=pulse.bit,
        photon_times=tuple(t),
        polarization=pol,
        bit_width=pulse.bit_width,
        timing_sigma=pulse.timing_sigma,
        from_eve=pulse.from_eve,
    )


def detect(pulse: Pulse, rx: ReceiverParams, rng: np.random.Generator) -> list[DetectionEvent]:
    """Route each photon of ``pulse`` through Bob's receiver and return the clicks."""
    n = pulse.n_photons
    if n == 0:
        return []
    arrival = pulse.slot_index * pulse.bit_width + np.asarray(pulse.photon_times)
    t_ins = transmittance_from_db(rx.insertion_loss)
    residual = np.array([t_ins * d.efficiency for d in rx.detectors])
    chan, times, origin = route_and_detect(
        arrival,
        np.full(n, pulse.bit),
        np.full(n, pulse.polarization),
        np.full(n, pulse.from_eve),
        pulse.timing_sigma,
        rx,
        residual,
        rng,
    )
    events = []
    for c in (0, 1):
        sel = np.flatnonzero(chan == c)
        order = sel[np.argsort(times[sel], kind="stable")]
        keep = dead_time_mask(times[order], rx.detectors[c].dead_time)
        for i in order[keep]:
            events.append(
                DetectionEvent(c, float(times[i]), None, Origin(int(origin[i])), pulse.bit)
            )
    events.sort(key=lambda e: (e.timestamp, e.channel))
    return events


def dark_events(
    det: DetectorParams, duration: float, channel: int, rng: np.random.Generator, start: float = 0.0
) -> list[DetectionEvent]:
    """Homogeneous Poisson dark counts on one detector over ``[start, start+duration)``."""
    if duration <= 0:
        raise ConfigurationError("duration must be > 0")
    times = poisson_times(det.dark_rate, start, duration, rng)
    return [DetectionEvent(channel, float(t), None, Origin.DARK, None) for t in times]


# --- vectorised helpers used by the session engine ---------------------------


def poisson_times(rate: float, start: float, duration: float, rng: np.random.Generator) -> np.ndarray:
    if rate <= 0:
        return np.empty(0)
    n = rng.poisson(rate * duration)
    return np.sort(start + rng.random(n) * duration)


def route_and_detect(arrival, bits, pol, from_eve, extra_sigma, rx, residual, rng):
    """Coupler, analyser, residual loss and timing jitter for an array of photons.

    Args:
        arrival: photon arrival times in seconds, before detector jitter.
        bits: Alice's bit for each photon's pulse.
        pol: polarisation angle of each photon, degrees.
        from_eve: whether each photon was re-sent by an eavesdropper.
        extra_sigma: timing spread (s) added in quadrature to detector jitter.
        rx: receiver parameters.
        residual: per-channel survival probability applied after the analyser
            (insertion loss and detector efficiency, possibly pre-thinned).
        rng: random stream; draws are consumed in a fixed order.

    Returns:
        ``(channel, click_time, origin)`` arrays for the photons that clicked.
    """
    n = arrival.size
    u_route = rng.random(n)
    u_pass = rng.random(n)
    u_res = rng.random(n)
    z = rng.standard_normal(n)
    chan = (u_route >= rx.coupler_split).astype(np.int8)
    delta = pol - rx.analyzer_angles[chan]
    passed = u_pass < analyzer_pass_probability(delta, rx.pbs_extinction)
    hit = passed & (u_res < np.asarray(residual)[chan])
    chan = chan[hit]
    sig = np.array(
        [math.hypot(d.jitter_sigma, extra_sigma) for d in rx.detectors], dtype=float
    )
    times = arrival[hit] + z[hit] * sig[chan]
    good = np.asarray(bits)[hit] == chan
    eve = np.asarray(from_eve)[hit]
    origin = np.where(good, np.where(eve, Origin.EVE_RESEND, Origin.SIGNAL), Origin.LEAKAGE)
    return chan, times, origin.astype(np.int8)


def dead_time_mask(times: np.ndarray, dead_time: float) -> np.ndarray:
    """Non-paralysable dead time: keep-mask for sorted click times on one detector."""
    n = times.size
    keep = np.ones(n, dtype=bool)
    if dead_time <= 0 or n < 2:
        return keep
    close = np.diff(times) < dead_time
    if not close.any():
        return keep
    # Only events inside clusters of close clicks need a sequential pass; the
    # first event of each cluster is always kept.
    members = np.unique(np.concatenate([np.flatnonzero(close), np.flatnonzero(close) + 1]))
    last = -np.inf
    prev = -2
    for i in members:
        if i != prev + 1:
            last = -np.inf
        t = times[i]
        if t - last < dead_time:
            keep[i] = False
        else:
            last = t
        prev = i
    return keep


@dataclass(frozen=True, eq=False)
class EventTable:
    """Column-oriented detection events (one row per click).

    ``truth_bit`` is -1 where it is not known.
    """

    channel: np.ndarray
    timestamp: np.ndarray
    slot: np.ndarray
    origin: np.ndarray
    truth_bit: np.ndarray

    COLUMNS = ("channel", "timestamp_ps", "slot", "origin", "truth_bit")

    def __post_init__(self):
        for name, dtype in (
            ("channel", np.int8),
            ("timestamp", np.float64),
            ("slot", np.int64),
            ("origin", np.int8),
            ("truth_bit", np.int8),
        ):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        sizes = {a.size for a in (self.channel, self.timestamp, self.slot, self.origin, self.truth_bit)}
        if len(sizes) != 1:
            raise ConfigurationError("event columns must have equal length")

    def __len__(self):
        return int(self.timestamp.size)

    def __eq__(self, other):
        if not isinstance(other, EventTable):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("channel", "timestamp", "slot", "origin", "truth_bit")
        )

    @classmethod
    def empty(cls) -> "EventTable":
        return cls(*(np.empty(0) for _ in range(5)))

    @classmethod
    def from_events(cls, events) -> "EventTable":
        events = list(events)
        return cls(
            [e.channel for e in events],
            [e.timestamp for e in events],
            [-1 if e.slot_index is None else e.slot_index for e in events],
            [int(e.origin) for e in events],
            [-1 if e.truth_bit is None else e.truth_bit for e in events],
        )

    def take(self, mask) -> "EventTable":
        return EventTable(
            self.channel[mask], self.timestamp[mask], self.slot[mask], self.origin[mask], self.truth_bit[mask]
        )

    def __iter__(self):
        for c, t, s, o, b in zip(self.channel, self.timestamp, self.slot, self.origin, self.truth_bit):
            yield DetectionEvent(int(c), float(t), int(s), Origin(int(o)), None if b < 0 else int(b))

    def to_csv(self, fh=None) -> str | None:
        """Write ``channel,timestamp_ps,slot,origin,truth_bit`` rows.

        Returns the CSV text when ``fh`` is None.
        """
        out = io.StringIO() if fh is None else fh
        w = csv.writer(out, lineterminator="\n")
        w.writerow(self.COLUMNS)
        ps = np.rint(self.timestamp / PS).astype(np.int64)
        labels = [o.label for o in Origin]
        for c, t, s, o, b in zip(
            self.channel.tolist(), ps.tolist(), self.slot.tolist(), self.origin.tolist(), self.truth_bit.tolist()
        ):
            w.writerow((c, t, s, labels[o], b))
        return out.getvalue() if fh is None else None

    @classmethod
    def from_csv(cls, fh) -> "EventTable":
        if isinstance(fh, str):
            fh = io.StringIO(fh)
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != cls.COLUMNS:
            raise ConfigurationError(f"unexpected event CSV header: {header}")
        cols = [[], [], [], [], []]
        for row in reader:
            if not row:
                continue
            c, t, s, o, b = row
            cols[0].append(int(c))
            cols[1].append(int(t) * PS)
            cols[2].append(int(s))
            cols[3].append(int(Origin.from_label(o)))
            cols[4].append(int(b))
        return cls(*cols)
