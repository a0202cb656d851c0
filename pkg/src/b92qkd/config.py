"""Flat ``key = value`` experiment documents.

Keys carry a section prefix (``source.``, ``channel.``, ``receiver.``,
``protocol.``, ``attack.``, ``experiment.``). A bare key is accepted when its
name is unique across sections, so ``clock = 1e9`` means ``protocol.clock``.
Lines starting with ``#`` and blank lines are ignored. Units are SI except
where the key says otherwise: distances in km, losses in dB, angles in
degrees, dispersion in ps/(nm km), linewidth in nm.

Example::

    protocol.clock = 1e9
    protocol.sequence = word8
    channel.attenuation = 2.2
    distances = 0, 2.15, 3.75
    windows = 0.5, 0.98
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .adversary import AttackConfig
from .bitsource import BitSequence, SequenceKind, generate_sequence
from .exceptions import ConfigParseError, ConfigurationError
from .optics import ChannelParams, DetectorParams, ReceiverParams, SourceParams
from .protocol import SessionConfig


class Mode(str, enum.Enum):
    SIMULATE = "simulate"
    SWEEP = "sweep"
    HISTOGRAM = "histogram"
    ATTACK = "attack"
    OPTIMIZE_WINDOW = "optimize-window"
    TABLES = "tables"


def _float(s):
    return float(s)


def _int(s):
    return int(float(s)) if "e" in s.lower() else int(s, 0)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


def _opt_int(s):
    return None if s.strip().lower() in ("", "none", "auto") else _int(s)


def _opt_float(s):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _nonneg(v):
    return v >= 0


def _pos(v):
    return v > 0


def _prob(v):
    return 0 <= v <= 1


def _fractions(vs):
    return all(0 < v <= 1 for v in vs)


def _distances(vs):
    return all(v >= 0 for v in vs)


# key -> (parser, range check or None, range message, default)
_KEYS = {
    "protocol.sequence": (str, lambda v: v in {k.value for k in SequenceKind}, "word8, prbs15 or custom", "word8"),
    "protocol.pattern": (str, lambda v: v == "" or set(v) <= {"0", "1"}, "a string of 0/1", ""),
    "protocol.prbs_seed": (_int, lambda v: 0 < v < 1 << 15, "a nonzero 15-bit value", 0x7FFF),
    "protocol.clock": (_float, _pos, "> 0", 1e9),
    "protocol.collection_time": (_opt_float, lambda v: v is None or v > 0, "> 0", None),
    "protocol.sync_divisor": (_opt_int, lambda v: v is None or v >= 1, ">= 1", None),
    "protocol.sync_jitter": (_float, _nonneg, ">= 0", 0.0),
    "protocol.seed": (_int, lambda v: 0 <= v < 1 << 64, "a 64-bit non-negative integer", 0),
    "protocol.duration_scale": (_float, lambda v: 0 < v <= 1, "in (0, 1]", 1.0),
    "protocol.emulate_card": (_bool, None, "", True),
    "source.mu": (_float, _pos, "> 0", 0.1),
    "source.pulse_timing_fwhm": (_float, _nonneg, ">= 0", 0.0),
    "source.angle_bit0": (_float, None, "", 0.0),
    "source.angle_bit1": (_float, None, "", 45.0),
    "source.single_photon": (_bool, None, "", False),
    "channel.length": (_float, _nonneg, ">= 0", 0.0),
    "channel.attenuation": (_float, _nonneg, ">= 0", 2.2),
    "channel.extra_attenuation": (_float, _nonneg, ">= 0", 0.0),
    "channel.dispersion": (_float, _nonneg, ">= 0", 100.0),
    "channel.linewidth": (_float, _nonneg, ">= 0", 0.1),
    "channel.drift_rate": (_float, _nonneg, ">= 0", 0.0),
    "receiver.coupler_split": (_float, lambda v: 0 < v < 1, "in (0, 1)", 0.5),
    "receiver.pbs_extinction": (_float, lambda v: 0 <= v < 0.5, "in [0, 0.5)", 0.002),
    "receiver.analyzer_angle_ch0": (_float, None, "", -45.0),
    "receiver.analyzer_angle_ch1": (_float, None, "", 90.0),
    "receiver.insertion_loss": (_float, _nonneg, ">= 0", 7.0),
    "receiver.extra_dark_rate": (_float, _nonneg, ">= 0", 0.0),
    "receiver.efficiency": (_float, _prob, "in [0, 1]", 0.40),
    "receiver.dark_rate": (_float, _nonneg, ">= 0", 180.0),
    "receiver.jitter_fwhm": (_float, _nonneg, ">= 0", 350e-12),
    "receiver.dead_time": (_float, _nonneg, ">= 0", 50e-9),
    "receiver.afterpulse_prob": (_float, lambda v: 0 <= v < 1, "in [0, 1)", 0.0),
    "receiver.afterpulse_time": (_float, _pos, "> 0", 100e-9),
    "attack.enabled": (_bool, None, "", False),
    "attack.theta": (_float, lambda v: 0 <= v <= 90, "in [0, 90]", 45.0),
    "attack.substitute_loss": (_float, _nonneg, ">= 0", 0.0),
    "experiment.mode": (str, lambda v: v in {m.value for m in Mode}, "a known mode", "simulate"),
    "experiment.distances": (_floats, _distances, "non-negative km values", (0.0,)),
    "experiment.windows": (_floats, _fractions, "fractions in (0, 1]", (0.5,)),
    "experiment.physical_length": (_bool, None, "", False),
    "experiment.theta": (_float, lambda v: 0 <= v <= 90, "in [0, 90]", 45.0),
    "experiment.bin_width": (_opt_float, lambda v: v is None or v > 0, "> 0", None),
    "experiment.output": (str, None, "", ""),
    "experiment.format": (str, lambda v: v in ("csv", "json"), "csv or json", "csv"),
    "experiment.workers": (_int, lambda v: v >= 1, ">= 1", 1),
}

_LEAVES: dict[str, list[str]] = {}
for _k in _KEYS:
    _LEAVES.setdefault(_k.split(".", 1)[1], []).append(_k)


@dataclass(frozen=True)
class ExperimentSpec:
    session: SessionConfig = field(default_factory=SessionConfig)
    distances: tuple = (0.0,)
    windows: tuple = (0.5,)
    mode: Mode = Mode.SIMULATE
    output_path: str = ""
    output_format: str = "csv"
    physical_length: bool = False
    theta: float = 45.0
    bin_width: float | None = None
    workers: int = 1
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(enabled=False))

    def __post_init__(self):
        if not all(0 < w <= 1 for w in self.windows):
            raise ConfigurationError("window fractions must lie in (0, 1]")
        if self.mode is Mode.SWEEP and not self.distances:
            raise ConfigurationError("a sweep needs at least one distance")

    def session_at(self, distance: float) -> SessionConfig:
        """Session for one sweep point, as fibre length or as equivalent attenuation."""
        ch = self.session.channel
        if self.physical_length:
            ch = replace(ch, fiber_length=distance)
        else:
            ch = replace(ch, fiber_length=0.0, extra_attenuation=ch.extra_attenuation + distance * ch.attenuation)
        return replace(self.session, channel=ch)


def _resolve(key: str, lineno: int) -> str:
    if key in _KEYS:
        return key
    if "." not in key:
        hits = _LEAVES.get(key, [])
        if len(hits) == 1:
            return hits[0]
        if len(hits) > 1:
            raise ConfigParseError(f"ambiguous key, use one of {hits}", key, lineno)
    raise ConfigParseError("unknown key", key, lineno)


def parse_values(text: str) -> dict:
    """Parse a document into a dict of fully-qualified keys and typed values."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigParseError("expected 'key = value'", None, lineno)
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigParseError("empty key", None, lineno)
        key = _resolve(k, lineno)
        if key in values:
            raise ConfigParseError("duplicate key", key, lineno)
        parser, check, rule, _ = _KEYS[key]
        try:
            value = parser(v)
        except ValueError as e:
            raise ConfigParseError(f"bad value {v!r} ({e})", key, lineno) from None
        if check is not None and not check(value):
            raise ConfigParseError(f"value {v!r} out of range, must be {rule}", key, lineno)
        values[key] = value
    return values


def build_spec(values: dict) -> ExperimentSpec:
    v = {k: d[3] for k, d in _KEYS.items()}
    v.update(values)
    kind = SequenceKind(v["protocol.sequence"])
    if kind is SequenceKind.CUSTOM:
        if not v["protocol.pattern"]:
            raise ConfigParseError("custom sequences need protocol.pattern", "protocol.pattern")
        seq = BitSequence.from_text(v["protocol.pattern"])
    else:
        seq = generate_sequence(kind, 8 if kind is SequenceKind.WORD8 else 32767, seed=v["protocol.prbs_seed"])
    collection_time = v["protocol.collection_time"]
    if collection_time is None:
        collection_time = 600.0 if kind is SequenceKind.PRBS15 else 60.0
    det = DetectorParams(
        efficiency=v["receiver.efficiency"],
        dark_rate=v["receiver.dark_rate"],
        jitter_fwhm=v["receiver.jitter_fwhm"],
        dead_time=v["receiver.dead_time"],
        afterpulse_prob=v["receiver.afterpulse_prob"],
        afterpulse_time=v["receiver.afterpulse_time"],
    )
    attack = AttackConfig(
        enabled=v["attack.enabled"], theta=v["attack.theta"], substitute_channel_loss=v["attack.substitute_loss"]
    )
    session = SessionConfig(
        bit_sequence=seq,
        clock_frequency=v["protocol.clock"],
        collection_time=collection_time,
        source=SourceParams(
            mean_photon_number=v["source.mu"],
            clock_frequency=v["protocol.clock"],
            pulse_timing_fwhm=v["source.pulse_timing_fwhm"],
            polarization_angle_bit0=v["source.angle_bit0"],
            polarization_angle_bit1=v["source.angle_bit1"],
            single_photon=v["source.single_photon"],
        ),
        channel=ChannelParams(
            fiber_length=v["channel.length"],
            attenuation=v["channel.attenuation"],
            extra_attenuation=v["channel.extra_attenuation"],
            dispersion=v["channel.dispersion"],
            source_linewidth=v["channel.linewidth"],
            polarization_drift_rate=v["channel.drift_rate"],
        ),
        receiver=ReceiverParams(
            coupler_split=v["receiver.coupler_split"],
            pbs_extinction=v["receiver.pbs_extinction"],
            analyzer_angle_ch0=v["receiver.analyzer_angle_ch0"],
            analyzer_angle_ch1=v["receiver.analyzer_angle_ch1"],
            insertion_loss=v["receiver.insertion_loss"],
            detectors=(det, det),
            extra_dark_rate=v["receiver.extra_dark_rate"],
        ),
        sync_divisor=v["protocol.sync_divisor"],
        seed=v["protocol.seed"],
        duration_scale=v["protocol.duration_scale"],
        sync_jitter=v["protocol.sync_jitter"],
        attack=attack if attack.enabled else None,
        emulate_card=v["protocol.emulate_card"],
    )
    return ExperimentSpec(
        session=session,
        distances=v["experiment.distances"],
        windows=v["experiment.windows"],
        mode=Mode(v["experiment.mode"]),
        output_path=v["experiment.output"],
        output_format=v["experiment.format"],
        physical_length=v["experiment.physical_length"],
        theta=v["experiment.theta"],
        bin_width=v["experiment.bin_width"],
        workers=v["experiment.workers"],
        attack=attack,
    )


def parse_config(text: str) -> ExperimentSpec:
    """Parse a ``key = value`` document into a fully resolved :class:`ExperimentSpec`.

    Raises:
        ConfigParseError: malformed line, unknown key or out-of-range value;
            the message names the key and line.
    """
    values = parse_values(text)
    try:
        return build_spec(values)
    except ConfigParseError:
        raise
    except ConfigurationError as e:
        raise ConfigParseError(str(e)) from None


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ", ".join(repr(float(x)) for x in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def session_values(cfg: SessionConfig) -> dict:
    seq, src, ch, rx = cfg.bit_sequence, cfg.source, cfg.channel, cfg.receiver
    d0, d1 = rx.detectors
    if d0 != d1:
        raise ConfigurationError("per-detector parameters differ; the flat format holds one detector model")
    if seq.kind is SequenceKind.PRBS15:
        seed_reg = _prbs_seed_of(seq)
        pattern = ""
    elif seq.kind is SequenceKind.WORD8:
        seed_reg, pattern = 0x7FFF, ""
    else:
        seed_reg = 0x7FFF
        pattern = "".join(map(str, seq.cycle.tolist()))
    atk = cfg.attack or AttackConfig(enabled=False)
    return {
        "protocol.sequence": seq.kind.value,
        "protocol.pattern": pattern,
        "protocol.prbs_seed": seed_reg,
        "protocol.clock": float(cfg.clock_frequency),
        "protocol.collection_time": float(cfg.collection_time),
        "protocol.sync_divisor": cfg.sync_divisor,
        "protocol.sync_jitter": float(cfg.sync_jitter),
        "protocol.seed": cfg.seed,
        "protocol.duration_scale": float(cfg.duration_scale),
        "protocol.emulate_card": cfg.emulate_card,
        "source.mu": float(src.mean_photon_number),
        "source.pulse_timing_fwhm": float(src.pulse_timing_fwhm),
        "source.angle_bit0": float(src.polarization_angle_bit0),
        "source.angle_bit1": float(src.polarization_angle_bit1),
        "source.single_photon": src.single_photon,
        "channel.length": float(ch.fiber_length),
        "channel.attenuation": float(ch.attenuation),
        "channel.extra_attenuation": float(ch.extra_attenuation),
        "channel.dispersion": float(ch.dispersion),
        "channel.linewidth": float(ch.source_linewidth),
        "channel.drift_rate": float(ch.polarization_drift_rate),
        "receiver.coupler_split": float(rx.coupler_split),
        "receiver.pbs_extinction": float(rx.pbs_extinction),
        "receiver.analyzer_angle_ch0": float(rx.analyzer_angle_ch0),
        "receiver.analyzer_angle_ch1": float(rx.analyzer_angle_ch1),
        "receiver.insertion_loss": float(rx.insertion_loss),
        "receiver.extra_dark_rate": float(rx.extra_dark_rate),
        "receiver.efficiency": float(d0.efficiency),
        "receiver.dark_rate": float(d0.dark_rate),
        "receiver.jitter_fwhm": float(d0.jitter_fwhm),
        "receiver.dead_time": float(d0.dead_time),
        "receiver.afterpulse_prob": float(d0.afterpulse_prob),
        "receiver.afterpulse_time": float(d0.afterpulse_time),
        "attack.enabled": atk.enabled,
        "attack.theta": float(atk.theta),
        "attack.substitute_loss": float(atk.substitute_channel_loss),
    }


def _prbs_seed_of(seq: BitSequence) -> int:
    # the first 15 output bits of the generator are the seed register, MSB first
    head = seq.cycle[:15]
    return int("".join(map(str, head.tolist())), 2)


def format_config(cfg: SessionConfig) -> str:
    """Render a session as a document that :func:`parse_config` reads back."""
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in session_values(cfg).items())


def format_spec(spec: ExperimentSpec) -> str:
    values = session_values(spec.session)
    values.update(
        {
            "attack.enabled": spec.attack.enabled,
            "attack.theta": float(spec.attack.theta),
            "attack.substitute_loss": float(spec.attack.substitute_channel_loss),
            "experiment.mode": spec.mode.value,
            "experiment.distances": tuple(spec.distances),
            "experiment.windows": tuple(spec.windows),
            "experiment.physical_length": spec.physical_length,
            "experiment.theta": float(spec.theta),
            "experiment.bin_width": spec.bin_width,
            "experiment.output": spec.output_path,
            "experiment.format": spec.output_format,
            "experiment.workers": spec.workers,
        }
    )
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in values.items())
