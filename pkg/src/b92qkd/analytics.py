"""Figures of merit: histograms, bit rates, QBER, error budget, window choice."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, UndefinedStatisticError
from .optics import PS, EventTable, Origin, analyzer_pass_probability, transmittance_from_db
from .protocol import SessionRecord, gate_mask

WORST_CASE_THETA = 45.0
# reconciliation cost per error bit, as used by the key-rate estimate
EC_FACTOR = 3.5
# window grid from 0.1 to 0.98 of the bit width
WINDOW_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.98)
DEFAULT_BINS_PER_PERIOD = 1024


@dataclass(frozen=True, eq=False)
class Histogram:
    bin_width: float
    period: float
    counts_ch0: np.ndarray
    counts_ch1: np.ndarray
    collection_time: float
    start: float = 0.0

    @property
    def n_bins(self) -> int:
        return int(self.counts_ch0.size)

    @property
    def bin_starts(self) -> np.ndarray:
        return self.start + np.arange(self.n_bins) * self.bin_width

    @property
    def total(self) -> int:
        return int(self.counts_ch0.sum() + self.counts_ch1.sum())

    def channel(self, c: int) -> np.ndarray:
        return self.counts_ch0 if c == 0 else self.counts_ch1

    def window(self, start: float, stop: float) -> "Histogram":
        """Bins covering ``[start, stop)`` within the folded period."""
        i0 = int(round((start - self.start) / self.bin_width))
        i1 = int(round((stop - self.start) / self.bin_width))
        if not 0 <= i0 < i1 <= self.n_bins:
            raise ConfigurationError("histogram window outside the folded period")
        return Histogram(
            self.bin_width,
            self.period,
            self.counts_ch0[i0:i1],
            self.counts_ch1[i0:i1],
            self.collection_time,
            self.start + i0 * self.bin_width,
        )

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("bin_start_ps", "ch0", "ch1"))
        starts = np.rint(self.bin_starts / PS).astype(np.int64)
        for row in zip(starts.tolist(), self.counts_ch0.tolist(), self.counts_ch1.tolist()):
            w.writerow(row)
        return out.getvalue()


def accumulate_histogram(
    events: EventTable, sync_period: float, bin_width: float | None = None, collection_time: float = float("nan")
) -> Histogram:
    """Fold event times modulo ``sync_period`` into per-channel bins.

    ``bin_width`` defaults to 1/1024 of the period and must divide it.
    """
    if sync_period <= 0:
        raise ConfigurationError("sync_period must be > 0")
    if bin_width is None:
        bin_width = sync_period / DEFAULT_BINS_PER_PERIOD
    ratio = sync_period / bin_width
    n_bins = int(round(ratio))
    if bin_width <= 0 or n_bins < 1 or abs(ratio - n_bins) > 1e-6 * max(1.0, ratio):
        raise ConfigurationError(f"bin width {bin_width} does not divide the period {sync_period}")
    phase = np.mod(events.timestamp, sync_period)
    idx = np.minimum((phase / bin_width).astype(np.int64), n_bins - 1)
    counts = [np.bincount(idx[events.channel == c], minlength=n_bins) for c in (0, 1)]
    return Histogram(bin_width, sync_period, counts[0], counts[1], collection_time)


@dataclass(frozen=True)
class WindowStats:
    window_fraction: float
    c_correct: int
    c_incorrect: int
    n_slots: int
    collection_time: float

    def __post_init__(self):
        if not 0 < self.window_fraction <= 1:
            raise ConfigurationError("window_fraction must lie in (0, 1]")
        if self.c_correct < 0 or self.c_incorrect < 0:
            raise ConfigurationError("counts must be >= 0")


def window_stats(record: SessionRecord, window_fraction: float) -> WindowStats:
    """Gated correct/incorrect click counts, both channels pooled.

    A click is correct when its channel equals Alice's bit for the slot it
    falls in.
    """
    ev = record.events
    g = gate_mask(ev, record.config.clock_frequency, window_fraction)
    wrong = ev.channel[g] != ev.truth_bit[g]
    n_wrong = int(np.count_nonzero(wrong))
    return WindowStats(window_fraction, int(g.sum()) - n_wrong, n_wrong, record.n_slots, record.duration)


def raw_rate(system_loss: float, fiber_loss: float, mu: float, clock: float) -> float:
    """Expected raw detection rate from the loss budget."""
    if mu <= 0 or clock <= 0:
        raise ConfigurationError("mu and clock must be > 0")
    if math.isinf(fiber_loss):
        return 0.0
    return transmittance_from_db(system_loss) * transmittance_from_db(fiber_loss) * mu * clock


def expected_click_rate(config) -> float:
    """Mean total click rate of a session predicted from its loss budget.

    Accounts for the coupler split, analyser transmission of both states,
    multi-photon saturation of each detector within a pulse, dark counts and
    non-paralysable dead time. The bit sequence enters only through its bit
    balance.
    """
    src, ch, rx = config.source, config.channel, config.receiver
    t = ch.transmittance * transmittance_from_db(rx.insertion_loss)
    ones = float(np.mean(config.bit_sequence.cycle))
    split = np.array([rx.coupler_split, 1.0 - rx.coupler_split])
    eta = np.array([d.efficiency for d in rx.detectors])
    total = 0.0
    for c in (0, 1):
        per_pulse = 0.0
        for bit, weight in ((0, 1.0 - ones), (1, ones)):
            delta = float(src.angle(bit)) - rx.analyzer_angles[c]
            p = t * split[c] * eta[c] * float(analyzer_pass_probability(delta, rx.pbs_extinction))
            per_pulse += weight * (p if src.single_photon else -math.expm1(-src.mean_photon_number * p))
        det = rx.detectors[c]
        n = per_pulse * config.clock_frequency + det.dark_rate + rx.extra_dark_rate
        total += n / (1.0 + n * det.dead_time)
    return total


def sift_rate(stats: WindowStats) -> float:
    if stats.collection_time <= 0:
        raise ConfigurationError("collection_time must be > 0")
    return (stats.c_correct + stats.c_incorrect) / stats.collection_time


def qber(stats: WindowStats) -> float:
    n = stats.c_correct + stats.c_incorrect
    if n == 0:
        raise UndefinedStatisticError("no gated counts: QBER is undefined")
    return stats.c_incorrect / n


def eavesdropper_info(theta: float) -> float:
    """Maximum information per bit available to an eavesdropper, ``1 - cos(theta)``."""
    if not 0 <= theta <= 90:
        raise ConfigurationError("theta must lie in [0, 90] degrees")
    return 1.0 - math.cos(math.radians(theta))


def net_rate_factor(q: float, i_ae: float) -> float:
    """Unclamped fraction of sifted bits surviving error correction and privacy amplification."""
    if not 0 <= q < 1:
        raise ConfigurationError("QBER must lie in [0, 1)")
    q_log_q = q * math.log2(q) if q > 0 else 0.0
    p_log_p = (1 - q) * math.log2(1 - q)
    return 1 + q_log_q - EC_FACTOR * q - i_ae * (1 - p_log_p - EC_FACTOR * q)


def net_rate(q: float, r_sift: float, i_ae: float) -> float:
    """Estimated net key rate, clamped at zero in the insecure regime."""
    return max(0.0, net_rate_factor(q, i_ae) * r_sift)


@dataclass(frozen=True)
class ErrorBudget:
    r_leak: float
    r_dark: float
    r_v: float
    r_sift: float

    @property
    def qber(self) -> float:
        if self.r_sift == 0:
            raise UndefinedStatisticError("no gated counts: QBER is undefined")
        return (self.r_leak + self.r_dark + self.r_v) / self.r_sift


def error_budget(events: EventTable, window_fraction: float, clock: float, collection_time: float) -> ErrorBudget:
    """Split the gated incorrect-count rate by physical origin.

    Leakage and dark clicks go to their own terms; signal (or re-sent) photons
    counted in a slot carrying the other bit are timing errors.
    """
    if np.any(events.truth_bit < 0) or np.any((events.origin < 0) | (events.origin > max(Origin))):
        raise ConfigurationError("error budget needs origin-tagged events with ground truth")
    g = gate_mask(events, clock, window_fraction)
    wrong = g & (events.channel != events.truth_bit)
    o = events.origin[wrong]
    leak = np.count_nonzero(o == Origin.LEAKAGE)
    dark = np.count_nonzero(o == Origin.DARK)
    timing = np.count_nonzero((o == Origin.SIGNAL) | (o == Origin.EVE_RESEND))
    return ErrorBudget(leak / collection_time, dark / collection_time, timing / collection_time, float(g.sum()) / collection_time)


@dataclass(frozen=True)
class RateReport:
    r_raw: float
    r_sift: float
    r_net: float
    qber: float
    i_ae: float
    theta: float
    distance: float
    window_fraction: float
    clock: float
    insecure: bool = False

    CSV_COLUMNS = (
        "distance_km",
        "clock_hz",
        "window_fraction",
        "r_raw",
        "r_sift",
        "r_net",
        "qber_percent",
        "insecure",
    )

    def csv_row(self) -> tuple:
        """Table-style row: rates as integers, QBER in percent to one decimal."""
        return (
            f"{self.distance:.2f}",
            f"{self.clock:.0f}",
            f"{self.window_fraction:.4f}",
            f"{self.r_raw:.0f}",
            f"{self.r_sift:.0f}",
            "" if self.insecure else f"{self.r_net:.0f}",
            f"{100 * self.qber:.1f}",
            "1" if self.insecure else "0",
        )

    def as_dict(self) -> dict:
        return {
            "distance_km": self.distance,
            "clock_hz": self.clock,
            "window_fraction": self.window_fraction,
            "r_raw": self.r_raw,
            "r_sift": self.r_sift,
            "r_net": self.r_net,
            "qber": self.qber,
            "i_ae": self.i_ae,
            "theta": self.theta,
            "insecure": self.insecure,
        }


def reports_to_csv(reports) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(RateReport.CSV_COLUMNS)
    for r in sorted(reports, key=lambda r: (r.clock, r.distance, r.window_fraction)):
        w.writerow(r.csv_row())
    return out.getvalue()


def rate_report(
    record: SessionRecord, window_fraction: float, theta: float = WORST_CASE_THETA, distance: float = 0.0
) -> RateReport:
    stats = window_stats(record, window_fraction)
    q = qber(stats)
    i_ae = eavesdropper_info(theta)
    r_sift = sift_rate(stats)
    factor = net_rate_factor(q, i_ae) if q < 1 else -1.0
    return RateReport(
        r_raw=len(record.events) / record.duration,
        r_sift=r_sift,
        r_net=max(0.0, factor * r_sift),
        qber=q,
        i_ae=i_ae,
        theta=theta,
        distance=distance,
        window_fraction=window_fraction,
        clock=record.config.clock_frequency,
        insecure=factor <= 0,
    )


def optimize_window(record: SessionRecord, grid=WINDOW_GRID, theta: float = WORST_CASE_THETA, distance: float = 0.0):
    """Evaluate every window in ``grid`` on one record; return the net-rate maximiser and all reports."""
    grid = list(grid)
    if not grid:
        raise ConfigurationError("window grid is empty")
    reports = [rate_report(record, w, theta, distance) for w in grid]
    best = max(range(len(grid)), key=lambda i: (reports[i].r_net, grid[i]))
    return grid[best], reports
