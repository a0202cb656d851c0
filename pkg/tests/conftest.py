import pytest

from b92qkd.optics import ChannelParams, DetectorParams, ReceiverParams, SourceParams
from b92qkd.protocol import SessionConfig

IDEAL_DET = DetectorParams(efficiency=1.0, dark_rate=0.0, jitter_fwhm=0.0, dead_time=0.0)
IDEAL_RX = ReceiverParams(pbs_extinction=0.0, insertion_loss=0.0, detectors=(IDEAL_DET, IDEAL_DET))
LOSSLESS = ChannelParams(attenuation=0.0, dispersion=0.0)


def ideal_config(collection_time=1e-4, clock=1e9, **kw):
    """Single-photon source, lossless channel, ideal receiver."""
    return SessionConfig(
        clock_frequency=clock,
        collection_time=collection_time,
        source=SourceParams(single_photon=True),
        channel=LOSSLESS,
        receiver=IDEAL_RX,
        **kw,
    )


@pytest.fixture
def ideal():
    return ideal_config


@pytest.fixture(scope="session")
def default_record():
    from b92qkd.protocol import run_session

    return run_session(SessionConfig(collection_time=0.01, seed=11))


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    results = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" not in rep.nodeid or rep.when not in ("call", "setup"):
                continue
            crit = next((m for m in rep.keywords if m.startswith("criterion_")), None)
            if crit is None:
                continue
            ok = outcome == "passed"
            results.setdefault(crit, []).append((ok, rep.nodeid.split("::")[-1]))
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(results, key=lambda c: int(c.split("_")[1])):
        checks = results[crit]
        ok = all(o for o, _ in checks)
        failed = [name for o, name in checks if not o]
        line = f"criterion {crit.split('_')[1]:>2}: {'PASS' if ok else 'FAIL'} ({len(checks) - len(failed)}/{len(checks)} checks)"
        if failed:
            line += " failing: " + ", ".join(failed)
        terminalreporter.write_line(line)


def pytest_configure(config):
    for n in range(1, 11):
        config.addinivalue_line("markers", f"criterion_{n}: acceptance criterion {n}")
