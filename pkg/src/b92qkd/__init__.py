"""Monte Carlo simulator and analysis toolkit for a gated B92 polarisation QKD link."""
from .adversary import AttackConfig, AttackOutcome, apply_attack, detect_attack, run_attack_experiment, usd_measure
from .analytics import (
    ErrorBudget,
    Histogram,
    RateReport,
    WindowStats,
    accumulate_histogram,
    eavesdropper_info,
    error_budget,
    net_rate,
    optimize_window,
    qber,
    rate_report,
    raw_rate,
    sift_rate,
    window_stats,
)
from .bitsource import BitSequence, SequenceKind, generate_sequence, slice_window
from .exceptions import ConfigParseError, ConfigurationError, UndefinedStatisticError
from .optics import ChannelParams, DetectionEvent, DetectorParams, EventTable, Origin, ReceiverParams, SourceParams
from .protocol import SessionConfig, SessionRecord, SiftedKey, gate_mask, run_session, sift, sync_frequency

__version__ = "0.1.0"
