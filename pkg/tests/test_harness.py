import csv
import json

import numpy as np
import pytest

from ospr import QuantizationScheme, rotate_180
from ospr import harness
from ospr.cli import main
from ospr.errors import ConfigError
from ospr.field import read_pgm
from ospr.harness import (
    COMPONENT_COLUMNS,
    COMPONENT_SUMMARY_COLUMNS,
    CONVERGE_COLUMNS,
    FIT_COLUMNS,
    SSIM_CONVERGE_COLUMNS,
    TABLE1_COLUMNS,
    build_config,
    cmd_converge,
    read_config_file,
)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def small(tmp_path, **kw):
    base = dict(size=16, runs=3, sweep=(1, 2, 4), out=tmp_path, seed=5, bins=8)
    base.update(kw)
    return build_config(None, base)


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# campaign\nruns = 7\nsweep = 1, 2, 3  # inline comment\nscheme = phase-only-continuous\n")
    c = build_config(cfg, {"runs": "9", "seed": None})
    assert c.runs == 9
    assert c.sweep == (1, 2, 3)
    assert c.scheme is QuantizationScheme.PHASE_ONLY
    assert read_config_file(cfg)["runs"] == ("7", 2)


@pytest.mark.parametrize("text, where", [
    ("runs = 3\nbogus = 1\n", ":2:"),
    ("runs = three\n", ":1:"),
    ("runs 3\n", ":1:"),
])
def test_config_errors_carry_line_numbers(tmp_path, text, where):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    with pytest.raises(ConfigError, match=where):
        build_config(cfg)


def test_config_validation():
    for bad in ({"runs": 0}, {"sweep": "4,2"}, {"size": 4}, {"threads": 0}, {"sweep": "0,1"}):
        with pytest.raises(ConfigError):
            build_config(None, bad)


def test_cli_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nope = 1\n")
    assert main(["converge", "--config", str(cfg)]) == 1
    assert main(["converge", "--runs", "x"]) == 1
    assert main(["converge", "--target", str(tmp_path / "missing.pgm"), "--out", str(tmp_path)]) == 2
    junk = tmp_path / "junk.pgm"
    junk.write_bytes(b"GIF89a")
    assert main(["generate", "--target", str(junk), "--out", str(tmp_path)]) == 2
    assert main(["table1", "--mandrill", str(tmp_path / "none.pgm"), "--size", "16", "--runs", "2",
                 "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_nonconvergence_exit(tmp_path, monkeypatch):
    from ospr.errors import NonConvergenceError

    def boom(config):
        raise NonConvergenceError("did not converge")

    monkeypatch.setitem(harness.COMMANDS, "table1", boom)
    assert main(["table1", "--out", str(tmp_path)]) == 3


def test_generate_constant_unquantized(tmp_path):
    c = small(tmp_path, target="constant", scheme="none", subframes=1)
    lines = []
    harness.cmd_generate(c, lines.append)
    img = read_pgm(tmp_path / "replay_mean.pgm")
    assert np.all(img == 255)
    assert (tmp_path / "hologram_0000.pgm").is_file()
    assert "relative mismatch" in lines[0]


def test_generate_binary_replay_symmetric(tmp_path):
    harness.cmd_generate(small(tmp_path, subframes=2), lambda s: None)
    img = read_pgm(tmp_path / "replay_mean.pgm")
    np.testing.assert_array_equal(img, rotate_180(img))
    holo = read_pgm(tmp_path / "hologram_0001.pgm")
    assert set(np.unique(holo)) <= {0, 255}
    meta = json.loads((tmp_path / "generate.meta.json").read_text())
    assert meta["config"]["subframes"] == 2 and "tool_version" in meta


def test_converge_schema_and_fields(tmp_path):
    res = cmd_converge(small(tmp_path))
    header, rows = read_csv(tmp_path / "converge.csv")
    assert tuple(header) == CONVERGE_COLUMNS
    assert [int(r[0]) for r in rows] == [1, 2, 4]
    for r in rows:
        vals = [float(v) for v in r]
        assert vals[3] == pytest.approx(2 * vals[2], rel=1e-15)
        assert vals[7] == pytest.approx(2 * vals[6], rel=1e-15)
    header, rows = read_csv(tmp_path / "converge_fit.csv")
    assert tuple(header) == FIT_COLUMNS and len(rows) == 1
    assert res.fit.r_squared <= 1
    meta = json.loads((tmp_path / "converge.meta.json").read_text())
    assert meta["default_sweep"] == list(harness.DEFAULT_SWEEP)
    assert meta["rician_path"] == "amplitude"


def test_converge_unquantized_is_exact(tmp_path):
    res = cmd_converge(small(tmp_path, scheme="none"))
    for row in res.rows:
        assert row["mse_mean"] < 1e-10
        assert row["ssim_mean"] > 1 - 1e-9


def test_converge_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cmd_converge(small(a))
    cmd_converge(small(b))
    for name in ("converge.csv", "converge_fit.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_threads_do_not_change_results(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cmd_converge(small(a))
    cmd_converge(small(b, threads=3))
    assert (a / "converge.csv").read_bytes() == (b / "converge.csv").read_bytes()


def test_table1_schema(tmp_path, camera_pgm):
    rows = harness.cmd_table1(small(tmp_path, mandrill=str(camera_pgm), size=32))
    header, body = read_csv(tmp_path / "table1.csv")
    assert tuple(header) == TABLE1_COLUMNS
    assert [r[0] for r in body] == ["uniform", "constant", "mandrill"]
    assert rows[1]["measured_bias_sq"] < 0.05


def test_ssim_components_schema(tmp_path):
    summary = harness.cmd_ssim_components(small(tmp_path, sweep=(1, 4)))
    header, rows = read_csv(tmp_path / "ssim_components.csv")
    assert tuple(header) == COMPONENT_COLUMNS
    assert len(rows) == 2 * 7 * 8
    header, rows = read_csv(tmp_path / "ssim_components_summary.csv")
    assert tuple(header) == COMPONENT_SUMMARY_COLUMNS
    windows = 9 * 9 * 3
    assert all(int(r[-1]) == windows for r in rows)
    assert int(summary[("s1", 1)]["counts"].sum()) == windows
    with pytest.raises(ConfigError):
        harness.cmd_ssim_components(small(tmp_path, sweep=(1,)))


def test_ssim_converge_schema(tmp_path):
    rows = harness.cmd_ssim_converge(small(tmp_path))
    header, body = read_csv(tmp_path / "ssim_converge.csv")
    assert tuple(header) == SSIM_CONVERGE_COLUMNS
    assert len(body) == 3
    assert all(0 < r["ssim_model_full"] < 1 for r in rows)
    assert "ssim_asymptote" in json.loads((tmp_path / "ssim-converge.meta.json").read_text())


def test_interrupt_keeps_complete_rows(tmp_path, monkeypatch):
    real = harness.run_ospr
    calls = {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] > 7:
            raise KeyboardInterrupt
        return real(*args, **kw)

    monkeypatch.setattr(harness, "run_ospr", flaky)
    code = main(["converge", "--size", "16", "--runs", "3", "--sweep", "1,2,4", "--out", str(tmp_path)])
    assert code == 130
    text = (tmp_path / "converge.csv").read_text()
    assert text.endswith("\n")
    header, rows = read_csv(tmp_path / "converge.csv")
    assert len(rows) == 2
    assert all(len(r) == len(header) for r in rows)
