"""Counter-based random streams.

Every stream is addressed by ``(seed, stream_id, counter)``. Two calls with the
same address return generators producing identical draws, independently of the
order in which streams are created. The session engine uses one stream per
(block of slots, physical process), which makes block evaluation order and
process-level parallelism irrelevant to the result.
"""
import numpy as np

# Stream identifiers. Changing any of these changes every simulated realisation.
PHOTONS = 1
DARK = 2
DRIFT = 3
AFTERPULSE = 4
SYNC = 5
USD = 6

_MASK64 = (1 << 64) - 1


def stream(seed: int, stream_id: int, counter: int = 0) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence([seed & _MASK64, seed >> 64, stream_id, counter])
    return np.random.Generator(np.random.Philox(ss))
