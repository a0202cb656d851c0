"""Driving bit patterns for the two transmitter sources.

Two characterisation patterns are provided: the repetitive 8-bit word
``10101010`` and the maximal-length 15-stage pseudo-random bit sequence
(period 32767). Arbitrary user patterns are supported as ``Custom`` sequences.

The PRBS generator is a Fibonacci LFSR with feedback polynomial
``x^15 + x^14 + 1``. The output bit is the top register bit, read before the
register shifts::

    >>> state = PrbsState()
    >>> bit, state = prbs15_next(state)
    >>> bit
    1
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .exceptions import ConfigurationError

PRBS15_PERIOD = (1 << 15) - 1
WORD8_PATTERN = (1, 0, 1, 0, 1, 0, 1, 0)
DEFAULT_ANALYSIS_WINDOW = 127

_REG_MASK = PRBS15_PERIOD
_TAPS = (14, 13)


class SequenceKind(str, enum.Enum):
    WORD8 = "word8"
    PRBS15 = "prbs15"
    CUSTOM = "custom"


@dataclass(frozen=True)
class PrbsState:
    """15-bit shift register contents plus the fixed feedback taps."""

    register: int = _REG_MASK
    taps: tuple = _TAPS

    def __post_init__(self):
        if not 0 < self.register <= _REG_MASK:
            raise ConfigurationError(
                f"PRBS register must be a nonzero 15-bit value, got {self.register}"
            )


def prbs15_next(state: PrbsState) -> tuple[int, PrbsState]:
    reg = state.register
    out = (reg >> 14) & 1
    fb = ((reg >> state.taps[0]) ^ (reg >> state.taps[1])) & 1
    nxt = ((reg << 1) | fb) & _REG_MASK
    return out, PrbsState(nxt, state.taps)


@lru_cache(maxsize=16)
def _prbs15_cycle(seed: int) -> bytes:
    # One full period as raw bytes; cached because it is re-used by every session.
    reg = seed
    out = bytearray(PRBS15_PERIOD)
    for i in range(PRBS15_PERIOD):
        out[i] = (reg >> 14) & 1
        fb = ((reg >> 14) ^ (reg >> 13)) & 1
        reg = ((reg << 1) | fb) & _REG_MASK
    return bytes(out)


def prbs15_cycle(seed: int = _REG_MASK) -> np.ndarray:
    """Return one full period of the PRBS15 stream started from ``seed``."""
    PrbsState(seed)  # validates
    return np.frombuffer(_prbs15_cycle(seed), dtype=np.uint8).copy()


@dataclass(frozen=True, eq=False)
class BitSequence:
    """A finite view onto an infinite periodic bit stream.

    ``cycle`` holds exactly one period of the stream. The view starts at
    ``offset`` (reduced modulo the period) and is ``length`` bits long; the
    bits themselves are exposed through :attr:`bits`. Keeping the full cycle
    lets windows of a window keep wrapping around the original stream.
    """

    cycle: np.ndarray
    kind: SequenceKind
    length: int
    offset: int = 0
    _bits: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cycle = np.asarray(self.cycle, dtype=np.uint8)
        if cycle.ndim != 1 or cycle.size == 0:
            raise ConfigurationError("sequence cycle must be a nonempty 1-D array")
        if np.any(cycle > 1):
            raise ConfigurationError("sequence elements must be 0 or 1")
        if self.length < 1:
            raise ConfigurationError("sequence length must be >= 1")
        cycle.setflags(write=False)
        object.__setattr__(self, "cycle", cycle)
        object.__setattr__(self, "offset", int(self.offset) % cycle.size)
        idx = (self.offset + np.arange(self.length)) % cycle.size
        bits = cycle[idx]
        bits.setflags(write=False)
        object.__setattr__(self, "_bits", bits)

    @property
    def period(self) -> int:
        return int(self.cycle.size)

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    def bit_at(self, index):
        """Bit of the underlying infinite stream at ``index`` (array-friendly)."""
        return self.cycle[(self.offset + np.asarray(index)) % self.period]

    def __len__(self):
        return self.length

    def __eq__(self, other):
        if not isinstance(other, BitSequence):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.length == other.length
            and self.offset == other.offset
            and np.array_equal(self.cycle, other.cycle)
        )

    def __hash__(self):
        return hash((self.kind, self.length, self.offset, self.cycle.tobytes()))

    def to_text(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    @classmethod
    def from_text(cls, text: str) -> "BitSequence":
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise ConfigurationError("bit text must be a nonempty string of '0'/'1'")
        bits = np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0")
        return cls(bits, SequenceKind.CUSTOM, len(bits))


def generate_sequence(kind, n: int, seed: int = _REG_MASK, pattern=None) -> BitSequence:
    """First ``n`` bits of the periodic stream of the given kind.

    Args:
        kind: a :class:`SequenceKind` or its string value.
        n: number of bits, at least 1.
        seed: initial PRBS register, ignored for other kinds.
        pattern: one period of bits, required for ``custom``.
    """
    kind = SequenceKind(kind)
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if kind is SequenceKind.WORD8:
        cycle = np.array(WORD8_PATTERN, dtype=np.uint8)
    elif kind is SequenceKind.PRBS15:
        if seed == 0:
            raise ConfigurationError("PRBS seed register must be nonzero")
        cycle = prbs15_cycle(seed)
    else:
        if pattern is None:
            raise ConfigurationError("custom sequences need an explicit pattern")
        cycle = np.asarray(
            [int(c) for c in pattern] if isinstance(pattern, str) else pattern,
            dtype=np.uint8,
        )
    return BitSequence(cycle, kind, n)


def slice_window(seq: BitSequence, start: int, length: int) -> BitSequence:
    """``length`` consecutive bits starting ``start`` bits into ``seq``.

    Indices wrap at the period boundary, so any start is valid.
    """
    if length < 1:
        raise ConfigurationError("window length must be >= 1")
    return BitSequence(seq.cycle, seq.kind, length, seq.offset + start)
