import json
import textwrap

import pytest

from stablab import cli
from stablab.config import DEFAULTS, config_from_dict, load_config
from stablab.errors import ConfigError, InvariantViolation, SolverError

SMALL = textwrap.dedent("""\
    seed = 3
    label = "smoke"
    [grid]
    n_axis = 16
    [chain]
    widths = [4, 3, 2, 1]
    min_width = 1
    transition = 1
    min_transition = 1
    [patches]
    gd = {face = "x0"}
    gn = {face = "z1", rect = [[0.25, 0.75], [0.25, 0.75]]}
    [solver]
    ks = [2.0]
    [carleman]
    n_test = 3
    [probe]
    k = 2.0
    a = 3.0
    xi = [[0.0, 0.0, 0.0]]
    [sweep]
    n_axis = 20
    widths = [5, 4, 3, 2]
    ks = [2.0, 3.0]
    pad = 2
    r3_a = []
    dq = {type = "bump", center = [0.5, 0.5, 0.5], radius = 0.2, amplitude = 0.0}
    """)


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def test_defaults_valid():
    cfg = load_config(None)
    assert cfg.data["grid"]["n_axis"] == DEFAULTS["grid"]["n_axis"]


def test_unknown_key_reports_line(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[grid]\nn_axis = 16\nbogus = 1\n")
    with pytest.raises(ConfigError, match="line 3"):
        load_config(p)


def test_malformed_reports_position(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[grid]\nn_axis = = 16\n")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)


def test_wrong_type_rejected():
    with pytest.raises(ConfigError, match="grid.n_axis|n_axis"):
        config_from_dict({"grid": {"n_axis": "big"}})


def test_pollution_limit_and_override():
    raw = {"grid": {"n_axis": 16}, "chain": {"widths": [4, 3, 2, 1], "min_width": 1,
                                             "transition": 1, "min_transition": 1},
           "solver": {"ks": [20.0]}}
    with pytest.raises(ConfigError, match="k\\*h"):
        config_from_dict(raw)
    cfg = config_from_dict(raw, validate=False)
    cfg.set_override()
    cfg.validate()


def test_selftest_exit_zero(tmp_path):
    assert cli.main(["selftest", "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "selftest.csv").exists()


def test_malformed_config_exit_one(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[solver]\nks = [2.0,\n")
    assert cli.main(["forward", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "line" in capsys.readouterr().err


def test_invalid_field_exit_one(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[sweep]\nwidths = [4, 4, 3, 2]\n")
    assert cli.main(["sweep", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "sweep.widths" in capsys.readouterr().err


def test_sweep_identical_pair_exit_zero(small_config, tmp_path):
    out = tmp_path / "o"
    assert cli.main(["sweep", "--config", str(small_config), "--out", str(out)]) == 0
    rep = json.loads((out / "sweep_report.json").read_text())
    assert rep["rows"] == [] and len(rep["skipped"]) == 2
    assert all("delta = 0" in s["reason"] for s in rep["skipped"])
    text = (out / "sweep_rows.csv").read_text()
    assert "# grid_hash:" in text and "# deviations:" in text and "# schedule:" in text


def test_exit_codes_for_failures(monkeypatch, tmp_path):
    def invariant(run):
        raise InvariantViolation("broken")

    def numerical(run):
        raise SolverError("diverged", stage="krylov")

    monkeypatch.setitem(cli.COMMANDS, "selftest", invariant)
    assert cli.main(["selftest", "--out", str(tmp_path / "a")]) == 3
    monkeypatch.setitem(cli.COMMANDS, "selftest", numerical)
    assert cli.main(["selftest", "--out", str(tmp_path / "b")]) == 2


@pytest.mark.parametrize("cmd", ["forward", "dtn", "cgo", "runge", "carleman", "ucp", "probe"])
def test_subcommands_write_outputs(cmd, small_config, tmp_path):
    out = tmp_path / cmd
    assert cli.main([cmd, "--config", str(small_config), "--out", str(out), "--threads", "1"]) == 0
    files = list(out.iterdir())
    assert any(f.suffix in (".csv", ".json") for f in files)
    for f in files:
        if f.suffix == ".csv":
            assert f.read_text().startswith("# ")


def test_outputs_deterministic(small_config, tmp_path):
    texts = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["carleman", "--config", str(small_config), "--out", str(out)]) == 0
        texts.append({f.name: f.read_bytes() for f in sorted(out.iterdir())})
    assert texts[0] == texts[1]
