import csv
import io
import json

import pytest

from b92qkd import __version__
from b92qkd.cli import EXIT_IO, EXIT_OK, EXIT_UNDEFINED, EXIT_VALIDATION, main, run_sweep
from b92qkd.config import parse_config
from b92qkd.exceptions import ConfigurationError

SHORT = "clock = 1e9\nprotocol.collection_time = 0.005\n"


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_sweep_rows_and_columns(tmp_path):
    cfg = _write(tmp_path, SHORT + "distances = 0, 2.15, 3.75\nwindows = 0.5, 0.98\n")
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 6
    assert list(rows[0]) == [
        "distance_km", "clock_hz", "window_fraction", "r_raw", "r_sift", "r_net", "qber_percent", "insecure",
    ]
    assert [(r["distance_km"], r["window_fraction"]) for r in rows] == sorted(
        (r["distance_km"], r["window_fraction"]) for r in rows
    )
    assert all(r["r_raw"].isdigit() and len(r["qber_percent"].split(".")[1]) == 1 for r in rows)


def test_same_seed_gives_identical_files(tmp_path):
    cfg = _write(tmp_path, SHORT + "distances = 0, 5\n")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert main(["sweep", "--config", cfg, "--out", str(p), "--format", "json", "--seed", "5"]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert doc["seed"] == 5 and doc["version"] == __version__
    assert doc["config"]["protocol.clock"] == 1e9


def test_empty_sweep_is_a_validation_error(tmp_path):
    spec = parse_config(SHORT)
    with pytest.raises(ConfigurationError):
        run_sweep(spec.__class__(session=spec.session, distances=()))
    cfg = _write(tmp_path, SHORT + "distances =\n")
    assert main(["sweep", "--config", cfg]) == EXIT_VALIDATION


def test_histogram_mode_covers_one_sync_period(tmp_path, capsys):
    cfg = _write(tmp_path, SHORT + "experiment.bin_width = 1e-9\n")
    assert main(["histogram", "--config", cfg]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "bin_start_ps,ch0,ch1"
    assert len(lines) == 17 and lines[-1].startswith("15000,")


def test_attack_mode_reports_rate_ratio(tmp_path):
    cfg = _write(
        tmp_path,
        "clock = 1e9\nprotocol.collection_time = 0.002\nsource.single_photon = true\n"
        "channel.attenuation = 0\nreceiver.insertion_loss = 0\nreceiver.efficiency = 1\n"
        "receiver.dark_rate = 0\nreceiver.dead_time = 0\nreceiver.pbs_extinction = 0\n",
    )
    out = tmp_path / "attack.json"
    assert main(["attack", "--config", cfg, "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["results"]["rate_ratio"] == pytest.approx(0.293, abs=0.01)


def test_optimize_window_mode(tmp_path):
    cfg = _write(tmp_path, SHORT)
    out = tmp_path / "opt.json"
    assert main(["optimize-window", "--config", cfg, "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["results"]["reports"]) == 10
    assert 0.4 <= doc["results"]["best_window_fraction"] <= 0.7


def test_exit_codes(tmp_path):
    assert main(["simulate", "--config", _write(tmp_path, "pbs_extinction = 0.7\n")]) == EXIT_VALIDATION
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == EXIT_IO
    assert main(["simulate", "--config", _write(tmp_path, SHORT), "--out", str(tmp_path / "no" / "x.csv")]) == EXIT_IO
    dark = "protocol.collection_time = 1e-6\nchannel.extra_attenuation = 300\nreceiver.dark_rate = 0\n"
    assert main(["simulate", "--config", _write(tmp_path, dark)]) == EXIT_UNDEFINED
    assert main(["simulate", "--config", _write(tmp_path, SHORT), "--duration-scale", "2"]) == EXIT_VALIDATION


def test_simulate_without_config_uses_defaults(capsys):
    assert main(["simulate", "--duration-scale", "1e-5"]) == 0
    assert capsys.readouterr().out.startswith("distance_km,")
