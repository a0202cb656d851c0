"""B92 characterisation sessions: clocking, detection, synchronisation, sifting.

A session runs ``N = round(clock * collection_time * duration_scale)`` slots.
Every reported quantity is a per-second rate, so a reduced ``duration_scale``
gives the same expected rates with proportionally fewer counts.

Slots are simulated in fixed blocks of :data:`BLOCK_SLOTS`. Each block draws
from its own counter-based random stream, so the result depends only on the
configuration and seed, never on evaluation order or the number of workers.
Within a block only photons that can still click are sampled: a Poisson
number of photons per slot thinned by polarisation-independent losses is
again Poisson, so the block draws one Poisson total and scatters it uniformly
over the block's slots.
"""
from __future__ import annotations

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _random
from .adversary import AttackConfig, intercept_block
from .bitsource import PRBS15_PERIOD, BitSequence, SequenceKind, generate_sequence
from .exceptions import ConfigurationError
from .optics import (
    FWHM_TO_SIGMA,
    PS,
    ChannelParams,
    EventTable,
    Origin,
    ReceiverParams,
    SourceParams,
    dead_time_mask,
    poisson_times,
    route_and_detect,
    transmittance_from_db,
)

BLOCK_SLOTS = 1 << 22
SYNC_CARD_LIMIT = 200e6
_SYNC_CHUNK = 1 << 16


def sync_frequency(clock: float, mode) -> float:
    """Synchronisation frequency used by the acquisition card for a pattern kind."""
    if clock <= 0:
        raise ConfigurationError("clock must be > 0")
    kind = SequenceKind(mode)
    if kind is SequenceKind.PRBS15:
        f = clock / (16 * PRBS15_PERIOD)
    else:
        f = clock / 16
    if f > SYNC_CARD_LIMIT:
        raise ConfigurationError(f"sync frequency {f:.4g} Hz exceeds the 200 MHz card limit")
    return f


def default_sync_divisor(seq: BitSequence) -> int:
    return math.lcm(16, seq.period)


@dataclass(frozen=True)
class SessionConfig:
    bit_sequence: BitSequence = field(default_factory=lambda: generate_sequence("word8", 8))
    clock_frequency: float = 1e9
    collection_time: float = 60.0
    source: SourceParams = field(default_factory=SourceParams)
    channel: ChannelParams = field(default_factory=ChannelParams)
    receiver: ReceiverParams = field(default_factory=ReceiverParams)
    sync_divisor: int | None = None
    seed: int = 0
    duration_scale: float = 1.0
    sync_jitter: float = 0.0
    attack: AttackConfig | None = None
    emulate_card: bool = True

    def __post_init__(self):
        if self.clock_frequency <= 0:
            raise ConfigurationError("clock_frequency must be > 0")
        if self.collection_time <= 0:
            raise ConfigurationError("collection_time must be > 0")
        if not 0 < self.duration_scale <= 1:
            raise ConfigurationError("duration_scale must lie in (0, 1]")
        if self.sync_jitter < 0:
            raise ConfigurationError("sync_jitter must be >= 0")
        if not 0 <= self.seed < 1 << 64:
            raise ConfigurationError("seed must be a 64-bit non-negative integer")
        if self.sync_divisor is None:
            object.__setattr__(self, "sync_divisor", default_sync_divisor(self.bit_sequence))
        if self.sync_divisor < 1:
            raise ConfigurationError("sync_divisor must be >= 1")
        if self.emulate_card and self.clock_frequency / self.sync_divisor > SYNC_CARD_LIMIT:
            raise ConfigurationError("sync frequency exceeds the 200 MHz card limit")
        if self.source.clock_frequency != self.clock_frequency:
            object.__setattr__(self, "source", replace(self.source, clock_frequency=self.clock_frequency))
        if self.attack is not None and not self.attack.enabled:
            object.__setattr__(self, "attack", None)
        if self.n_slots < 1:
            raise ConfigurationError("session has no slots; increase collection_time or duration_scale")

    @property
    def bit_width(self) -> float:
        return 1.0 / self.clock_frequency

    @property
    def n_slots(self) -> int:
        return int(round(self.clock_frequency * self.collection_time * self.duration_scale))

    @property
    def duration(self) -> float:
        return self.n_slots / self.clock_frequency

    @property
    def sync_period(self) -> float:
        return self.sync_divisor / self.clock_frequency


@dataclass(frozen=True)
class TimeSlot:
    index: int
    start: float
    width: float

    @property
    def center(self) -> float:
        return self.start + self.width / 2


def time_slot(index: int, clock: float) -> TimeSlot:
    return TimeSlot(index, index / clock, 1.0 / clock)


@dataclass(frozen=True, eq=False)
class EveLog:
    intercepted: int
    unambiguous: int
    slots: np.ndarray
    bits: np.ndarray


@dataclass(frozen=True, eq=False)
class SessionRecord:
    config: SessionConfig
    events: EventTable
    duration: float
    n_slots: int
    eve: EveLog | None = None

    def __eq__(self, other):
        if not isinstance(other, SessionRecord):
            return NotImplemented
        return (
            self.config == other.config
            and self.events == other.events
            and self.duration == other.duration
            and self.n_slots == other.n_slots
        )

    def alice_bits(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        stop = self.n_slots if stop is None else min(stop, self.n_slots)
        return self.config.bit_sequence.bit_at(np.arange(start, stop))

    def sync_timestamps(self, start: float = 0.0, stop: float | None = None) -> np.ndarray:
        """Sync pulse times within ``[start, stop)`` (defaults to the whole session)."""
        stop = self.duration if stop is None else min(stop, self.duration)
        period = self.config.sync_period
        k0 = max(0, math.ceil(start / period - 1e-9))
        k1 = math.ceil(stop / period - 1e-9)
        k = np.arange(k0, k1, dtype=np.int64)
        times = k * period
        if self.config.sync_jitter > 0 and k.size:
            times = times + self.config.sync_jitter * _sync_noise(self.config.seed, k)
        return times

    def slot_from_sync(self, timestamp: float) -> int:
        """Slot index recovered from the nearest preceding sync pulse."""
        cfg = self.config
        k = int(timestamp // cfg.sync_period)
        tk = self.sync_timestamps(k * cfg.sync_period, (k + 1) * cfg.sync_period)
        if tk.size and tk[0] > timestamp and k > 0:
            k -= 1
            tk = self.sync_timestamps(k * cfg.sync_period, (k + 1) * cfg.sync_period)
        t0 = tk[0] if tk.size else k * cfg.sync_period
        return k * cfg.sync_divisor + int(math.floor((timestamp - t0) * cfg.clock_frequency))

    def to_text(self) -> str:
        from .config import format_config

        out = io.StringIO()
        for line in format_config(self.config).splitlines():
            out.write(f"# {line}\n")
        out.write(f"# record.duration = {self.duration!r}\n")
        out.write(f"# record.n_slots = {self.n_slots}\n")
        self.events.to_csv(out)
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "SessionRecord":
        from .config import parse_config

        header, body, meta = [], [], {}
        for line in text.splitlines():
            if line.startswith("# record."):
                k, v = line[2:].split("=", 1)
                meta[k.strip()] = v.strip()
            elif line.startswith("# "):
                header.append(line[2:])
            else:
                body.append(line)
        spec = parse_config("\n".join(header))
        events = EventTable.from_csv(io.StringIO("\n".join(body)))
        return cls(spec.session, events, float(meta["record.duration"]), int(meta["record.n_slots"]))


def _sync_noise(seed: int, k: np.ndarray) -> np.ndarray:
    out = np.empty(k.size)
    chunks = k // _SYNC_CHUNK
    for c in np.unique(chunks):
        z = _random.stream(seed, _random.SYNC, int(c)).standard_normal(_SYNC_CHUNK)
        sel = chunks == c
        out[sel] = z[k[sel] % _SYNC_CHUNK]
    return out


def slot_of_event(timestamp: float, clock: float) -> tuple[int, float]:
    """Slot index and offset into the slot for an absolute timestamp."""
    if timestamp < 0:
        raise ConfigurationError("timestamp must be >= 0")
    slot = math.floor(timestamp * clock)
    return slot, timestamp - slot / clock


def slot_of_ticks(ticks: np.ndarray, clock: float) -> np.ndarray:
    """Slot indices of picosecond tick counts, exact when the bit width is a whole number of ps."""
    width_ps = 1.0 / (clock * PS)
    if abs(width_ps - round(width_ps)) < 1e-9:
        return np.asarray(ticks, dtype=np.int64) // int(round(width_ps))
    return np.floor(np.asarray(ticks) / width_ps).astype(np.int64)


# --- engine -------------------------------------------------------------------


def _drift_path(cfg: SessionConfig, n_blocks: int) -> np.ndarray:
    rate = cfg.channel.polarization_drift_rate
    if rate <= 0 or cfg.attack is not None:
        return np.zeros(n_blocks)
    dt = BLOCK_SLOTS / cfg.clock_frequency
    steps = np.array(
        [_random.stream(cfg.seed, _random.DRIFT, b).normal(0.0, rate * math.sqrt(dt)) for b in range(n_blocks)]
    )
    # angle is held constant within a block at the value reached at its start
    return np.concatenate([[0.0], np.cumsum(steps)[:-1]])


def _simulate_block(args):
    cfg, b, drift = args
    clock = cfg.clock_frequency
    s0 = b * BLOCK_SLOTS
    nb = min(BLOCK_SLOTS, cfg.n_slots - s0)
    src, rx, atk = cfg.source, cfg.receiver, cfg.attack
    rng = _random.stream(cfg.seed, _random.PHOTONS, b)

    eta = np.array([d.efficiency for d in rx.detectors])
    eta_max = float(eta.max())
    residual = eta / eta_max if eta_max > 0 else np.zeros(2)
    g_rx = transmittance_from_db(rx.insertion_loss) * eta_max

    eve_slots = np.empty(0, dtype=np.int64)
    intercepted = 0
    if atk is None:
        g = cfg.channel.transmittance * g_rx
        if src.single_photon:
            slots = s0 + np.flatnonzero(rng.random(nb) < g)
        else:
            m = rng.poisson(nb * src.mean_photon_number * g)
            slots = s0 + np.sort(rng.integers(0, nb, m))
        bits = cfg.bit_sequence.bit_at(slots)
        pol = src.angle(bits) + drift
        arrival = (slots + rng.random(slots.size)) / clock
        sigma_cd = cfg.channel.dispersion_sigma
        if sigma_cd > 0:
            arrival = arrival + rng.normal(0.0, sigma_cd, slots.size)
        from_eve = np.zeros(slots.size, dtype=bool)
    else:
        if src.single_photon:
            pulses = s0 + np.arange(nb)
        else:
            m = rng.poisson(nb * src.mean_photon_number)
            pulses = s0 + np.unique(rng.integers(0, nb, m))
        intercepted = int(pulses.size)
        ok = intercept_block(pulses.size, atk, rng)
        eve_slots = pulses[ok]
        survive = rng.random(eve_slots.size) < atk.substitute_transmittance * g_rx
        slots = eve_slots[survive]
        bits = cfg.bit_sequence.bit_at(slots)
        pol = src.angle(bits)
        arrival = (slots + rng.random(slots.size)) / clock
        from_eve = np.ones(slots.size, dtype=bool)

    chan, times, origin = route_and_detect(
        arrival, bits, pol, from_eve, src.pulse_timing_fwhm * FWHM_TO_SIGMA, rx, residual, rng
    )

    drng = _random.stream(cfg.seed, _random.DARK, b)
    d_chan, d_times = [], []
    for c in (0, 1):
        t = poisson_times(rx.detectors[c].dark_rate + rx.extra_dark_rate, s0 / clock, nb / clock, drng)
        d_times.append(t)
        d_chan.append(np.full(t.size, c, dtype=np.int8))
    d_times = np.concatenate(d_times)
    chan = np.concatenate([chan, *d_chan])
    times = np.concatenate([times, d_times])
    origin = np.concatenate([origin, np.full(d_times.size, Origin.DARK, dtype=np.int8)])
    eve_bits = cfg.bit_sequence.bit_at(eve_slots).astype(np.int8)
    return chan, times, origin, eve_slots, eve_bits, intercepted


def _finish_channel(cfg: SessionConfig, c: int, times: np.ndarray, origin: np.ndarray):
    det = cfg.receiver.detectors[c]
    order = np.argsort(times, kind="stable")
    times, origin = times[order], origin[order]
    keep = dead_time_mask(times, det.dead_time)
    times, origin = times[keep], origin[keep]
    if det.afterpulse_prob > 0 and times.size:
        arng = _random.stream(cfg.seed, _random.AFTERPULSE, c)
        fire = arng.random(times.size) < det.afterpulse_prob
        delay = det.dead_time + arng.exponential(det.afterpulse_time, times.size)
        ap = (times + delay)[fire]
        times = np.concatenate([times, ap])
        origin = np.concatenate([origin, np.full(ap.size, Origin.DARK, dtype=np.int8)])
        order = np.argsort(times, kind="stable")
        times, origin = times[order], origin[order]
        keep = dead_time_mask(times, det.dead_time)
        times, origin = times[keep], origin[keep]
    return times, origin


def run_session(config: SessionConfig, workers: int | None = None) -> SessionRecord:
    """Simulate a full session and return the slot-indexed detection record.

    Args:
        config: session configuration.
        workers: number of worker processes for block simulation; ``None`` or
            1 runs serially. The result is identical either way.
    """
    n_blocks = -(-config.n_slots // BLOCK_SLOTS)
    drift = _drift_path(config, n_blocks)
    jobs = [(config, b, drift[b]) for b in range(n_blocks)]
    if workers and workers > 1 and n_blocks > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_block, jobs, chunksize=max(1, n_blocks // (4 * workers))))
    else:
        parts = [_simulate_block(j) for j in jobs]

    chan = np.concatenate([p[0] for p in parts])
    times = np.concatenate([p[1] for p in parts])
    origin = np.concatenate([p[2] for p in parts])
    duration = config.duration
    inside = (times >= 0) & (times < duration)
    chan, times, origin = chan[inside], times[inside], origin[inside]

    out_t, out_o, out_c = [], [], []
    for c in (0, 1):
        sel = chan == c
        t, o = _finish_channel(config, c, times[sel], origin[sel])
        ok = t < duration
        out_t.append(t[ok])
        out_o.append(o[ok])
        out_c.append(np.full(int(ok.sum()), c, dtype=np.int8))
    # timestamps are truncated to the 1 ps resolution of the event format, like a TDC
    ticks = np.floor(np.concatenate(out_t) / PS).astype(np.int64)
    times = ticks * PS
    origin = np.concatenate(out_o)
    chan = np.concatenate(out_c)
    ok = times < duration
    ticks, times, origin, chan = ticks[ok], times[ok], origin[ok], chan[ok]
    order = np.lexsort((chan, ticks))
    ticks, times, origin, chan = ticks[order], times[order], origin[order], chan[order]
    slots = slot_of_ticks(ticks, config.clock_frequency)
    truth = config.bit_sequence.bit_at(slots).astype(np.int8)
    events = EventTable(chan, times, slots, origin, truth)

    eve = None
    if config.attack is not None:
        eve = EveLog(
            intercepted=sum(p[5] for p in parts),
            unambiguous=sum(p[3].size for p in parts),
            slots=np.concatenate([p[3] for p in parts]),
            bits=np.concatenate([p[4] for p in parts]),
        )
    return SessionRecord(config, events, duration, config.n_slots, eve)


# --- sifting -------------------------------------------------------------------


def gate_mask(events: EventTable, clock: float, window_fraction: float) -> np.ndarray:
    """Events whose offset lies in the window of ``window_fraction`` bit widths centred on the slot."""
    if not 0 < window_fraction <= 1:
        raise ConfigurationError("window_fraction must lie in (0, 1]")
    # work in picoseconds so that offsets of recorded timestamps are exact
    width = 1.0 / (clock * PS)
    if abs(width - round(width)) < 1e-9:
        width = round(width)
        offset = np.rint(events.timestamp / PS).astype(np.int64) - events.slot * width
    else:
        offset = events.timestamp / PS - events.slot * width
    return np.abs(offset - width / 2) <= window_fraction * width / 2


@dataclass(frozen=True, eq=False)
class SiftedKey:
    accepted_slots: np.ndarray
    alice_key: np.ndarray
    bob_key: np.ndarray
    window_fraction: float

    def __len__(self):
        return int(self.accepted_slots.size)

    @property
    def errors(self) -> int:
        return int(np.count_nonzero(self.alice_key != self.bob_key))

    def to_text(self) -> str:
        a = "".join(map(str, self.alice_key.tolist()))
        b = "".join(map(str, self.bob_key.tolist()))
        s = ",".join(map(str, self.accepted_slots.tolist()))
        return f"window_fraction={self.window_fraction!r}\nalice={a}\nbob={b}\nslots={s}\n"

    @classmethod
    def from_text(cls, text: str) -> "SiftedKey":
        fields = dict(line.split("=", 1) for line in text.strip().splitlines())

        def bits(s):
            return np.array([int(ch) for ch in s], dtype=np.int8)

        slots = np.array([int(x) for x in fields["slots"].split(",") if x], dtype=np.int64)
        return cls(slots, bits(fields["alice"]), bits(fields["bob"]), float(fields["window_fraction"]))


def sift(record: SessionRecord, window_fraction: float) -> SiftedKey:
    """Keep slots with gated clicks on exactly one channel; Bob's bit is that channel.

    A slot in which both detectors fire anywhere within the bit period is
    ambiguous and discarded whatever the window, which keeps accepted-slot sets
    nested as the window shrinks.
    """
    ev = record.events
    g = gate_mask(ev, record.config.clock_frequency, window_fraction)
    slots = ev.slot[g]
    chans = ev.channel[g].astype(np.int8)
    accepted, first = np.unique(slots, return_index=True)
    bob = chans[first]
    both = np.intersect1d(ev.slot[ev.channel == 0], ev.slot[ev.channel == 1], assume_unique=False)
    keep = ~np.isin(accepted, both)
    accepted, bob = accepted[keep], bob[keep]
    alice = record.config.bit_sequence.bit_at(accepted).astype(np.int8)
    return SiftedKey(accepted, alice, bob, window_fraction)
