"""Measured link figures at 100 MHz and 1 GHz, and loss calibration against them.

Each row holds the distance, the raw rate and, for the two reported windows,
the sifted rate, net rate and QBER. ``None`` marks a net rate that was not
quoted because the estimate is negative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .analytics import RateReport, expected_click_rate, rate_report
from .exceptions import ConfigurationError
from .protocol import SessionConfig, run_session


@dataclass(frozen=True)
class MeasuredRow:
    distance: float
    r_raw: float
    r_sift: tuple
    r_net: tuple
    qber_percent: tuple


@dataclass(frozen=True)
class MeasuredTable:
    clock: float
    windows: tuple
    rows: tuple

    def row(self, distance: float) -> MeasuredRow:
        for r in self.rows:
            if math.isclose(r.distance, distance):
                return r
        raise KeyError(distance)


def _rows(data):
    return tuple(MeasuredRow(d, raw, (s1, s2), (n1, n2), (q1, q2)) for d, raw, s1, s2, n1, n2, q1, q2 in data)


TABLE_100MHZ = MeasuredTable(
    clock=100e6,
    windows=(0.5, 0.9),
    rows=_rows(
        [
            (0.0, 119_257, 61_948, 117_698, 41_147, 77_671, 0.4, 0.4),
            (2.15, 39_450, 20_419, 38_675, 12_930, 24_329, 0.7, 0.8),
            (3.75, 16_298, 8_569, 15_839, 4_971, 9_073, 1.4, 1.5),
            (4.19, 15_122, 7_805, 14_807, 4_583, 8_639, 1.3, 1.4),
            (6.16, 5_595, 2_882, 5_361, 1_357, 2_505, 3.0, 3.0),
            (8.08, 2_401, 1_220, 2_192, 293, 520, 6.9, 7.0),
            (9.96, 1_109, 554, 917, None, None, 15.6, 15.7),
            (11.07, 990, 493, 717, None, None, 24.3, 28.4),
            (11.85, 611, 291, 425, None, None, 31.8, 32.3),
        ]
    ),
)

TABLE_1GHZ = MeasuredTable(
    clock=1e9,
    windows=(0.5, 0.98),
    rows=_rows(
        [
            (0.0, 1_415_588, 1_011_117, 1_409_336, 570_123, 465_665, 1.6, 5.3),
            (2.15, 856_095, 623_867, 853_987, 360_616, 311_190, 1.4, 4.7),
            (3.75, 354_372, 260_216, 353_866, 147_660, 126_302, 1.6, 4.8),
            (4.19, 307_738, 228_251, 307_103, 132_350, 116_868, 1.4, 4.4),
            (6.16, 112_844, 84_237, 112_565, 48_366, 42_799, 1.5, 4.4),
            (8.08, 43_282, 32_299, 43_128, 18_076, 15_824, 1.7, 4.7),
            (9.96, 18_278, 13_363, 18_174, 7_111, 6_062, 2.1, 5.2),
            (11.07, 16_277, 8_502, 11_679, 4_073, 3_045, 2.8, 6.6),
            (11.85, 7_231, 5_223, 7_145, 2_494, 1_908, 2.9, 6.4),
            (13.15, 3_494, 2_467, 3_429, 882, 432, 4.8, 9.2),
            (15.45, 1_317, 865, 1_265, 53, None, 10.6, 15.8),
            (17.20, 725, 435, 682, None, None, 18.4, 24.3),
        ]
    ),
)

TABLES = {100e6: TABLE_100MHZ, 1e9: TABLE_1GHZ}


def fit_extra_attenuation(config: SessionConfig, target_rate: float, tol: float = 1e-9) -> float:
    """Extra attenuation (dB) that makes the predicted click rate equal ``target_rate``.

    Returns 0 when the configuration already clicks at or below the target.

    Raises:
        ConfigurationError: the target is below the dark-count floor.
    """
    def rate(extra):
        ch = replace(config.channel, extra_attenuation=extra)
        return expected_click_rate(replace(config, channel=ch))

    floor = rate(400.0)
    if target_rate <= floor:
        raise ConfigurationError(f"target rate {target_rate} is below the dark-count floor {floor:.1f}")
    if rate(0.0) <= target_rate:
        return 0.0
    lo, hi = 0.0, 400.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rate(mid) > target_rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrated_session(base: SessionConfig, clock: float, target_rate: float) -> SessionConfig:
    """``base`` at ``clock`` with all fibre loss replaced by a fitted attenuator setting."""
    cfg = replace(base, clock_frequency=clock, channel=replace(base.channel, fiber_length=0.0, extra_attenuation=0.0))
    extra = fit_extra_attenuation(cfg, target_rate)
    return replace(cfg, channel=replace(cfg.channel, extra_attenuation=extra))


def reproduce_table(table: MeasuredTable, base: SessionConfig, theta: float = 45.0) -> list[RateReport]:
    """Simulate every row of ``table`` with losses fitted to its raw rate."""
    reports = []
    for row in table.rows:
        cfg = calibrated_session(base, table.clock, row.r_raw)
        record = run_session(cfg)
        reports.extend(rate_report(record, w, theta, row.distance) for w in table.windows)
    return reports
