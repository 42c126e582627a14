import json
import math
from pathlib import Path

import numpy as np
import pytest

from mildns.cli import load_config, main
from mildns.grid import Field, make_grid, random_field, write_snapshot
from mildns.reference import taylor_green

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = """
scenario = "picard-taylor-green"
seed = 3

[grid]
n = 16

[time]
T = 0.5
n_geometric = 6
n_uniform = 16

[datum]
profile = "perturbed-taylor-green"
amplitude = 0.3

[reference]
dt = 0.005
"""


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_list(capsys):
    assert main(["list"]) == 0
    first = capsys.readouterr().out
    for name in ("kernel-decay", "bilinear-scaling", "threshold-scan", "picard-taylor-green",
                 "norm-equivalence"):
        assert name in first
    main(["list"])
    assert capsys.readouterr().out == first


def test_missing_grid_size(tmp_path, capsys):
    cfg = _write(tmp_path, 'scenario = "picard-taylor-green"\n')
    assert main(["run", str(cfg)]) == 2
    assert "grid.n required" in capsys.readouterr().err


@pytest.mark.parametrize("text,needle", [
    ('scenario = "nope"\n[grid]\nn = 8\n', "scenario"),
    ('scenario = "kernel-decay"\n[grid]\nn = 8\nbogus = 1\n', "grid.bogus"),
    ('scenario = "kernel-decay"\n[grid]\nn = "eight"\n', "grid.n"),
    ('scenario = "kernel-decay"\n[grid]\nn = 8\n[datum]\nprofile = "snapshot"\npath = "/nonexistent.mnsf"\n',
     "datum.path"),
])
def test_config_errors_name_the_field(tmp_path, capsys, text, needle):
    assert main(["run", str(_write(tmp_path, text))]) == 2
    assert needle in capsys.readouterr().err


def test_norm_equivalence_needs_critical_indexes(tmp_path, capsys):
    cfg = _write(tmp_path, 'scenario = "norm-equivalence"\n[grid]\nn = 8\n[params]\ns = 0.25\nq_tilde = 3.5\n')
    assert main(["run", str(cfg), "--set", f"output.dir={json.dumps(str(tmp_path / 'o'))}"]) == 2
    assert "params" in capsys.readouterr().err


def test_io_errors(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.toml")]) == 3
    assert main(["check", str(tmp_path / "missing.mnsf")]) == 3
    bad = tmp_path / "bad.mnsf"
    bad.write_bytes(b"not a snapshot")
    assert main(["check", str(bad)]) == 3


def test_overrides_are_typed(tmp_path):
    cfg = load_config(_write(tmp_path, SMALL), ["grid.n=32", "datum.amplitude=2", "output.figures=false",
                                                "scaling.T_ladder=[0.5, 1.0]"])
    assert cfg["grid.n"] == 32
    assert cfg["datum.amplitude"] == 2.0 and isinstance(cfg["datum.amplitude"], float)
    assert cfg["output.figures"] is False
    assert cfg["scaling.T_ladder"] == [0.5, 1.0]
    with pytest.raises(Exception, match="key=value"):
        load_config(_write(tmp_path, SMALL), ["grid.n"])


def test_check_snapshot(tmp_path, capsys):
    g = make_grid(2, 8, 2 * math.pi)
    good, bad = tmp_path / "tg.mnsf", tmp_path / "rand.mnsf"
    write_snapshot(good, taylor_green(g))
    write_snapshot(bad, random_field(g, 1, channels=2))
    assert main(["check", str(good)]) == 0
    assert "divergence-free: yes" in capsys.readouterr().out
    assert main(["check", str(bad)]) == 0
    assert "divergence-free: no" in capsys.readouterr().out


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = _write(base, SMALL)
    out = []
    for name in ("a", "b"):
        root = base / name
        assert main(["run", str(cfg), "--threads", "1", "--set", f'output.dir="{root}"']) == 0
        out.append(root)
    return out


def test_run_writes_report_tables_snapshots_and_figures(two_runs):
    root = two_runs[0]
    report = json.loads((root / "report.json").read_text())
    result = report["result"]
    assert result["converged"] is True
    assert result["comparison"] <= 1e-3
    for f in ("tables/iterates.csv", "tables/energy.csv", "snapshots/initial.mnsf",
              "snapshots/final.mnsf", "figures/contraction.png"):
        assert (root / f).is_file()
        assert f in report["files"]
    assert report["result"]["report"]["resolution"]["n"] == 16


def test_reruns_are_byte_identical(two_runs):
    a, b = (_tree(r) for r in two_runs)
    assert a.keys() == b.keys()
    # the report echoes its own output directory, everything else must match exactly
    for k in a:
        if k == "report.json":
            ja, jb = json.loads(a[k]), json.loads(b[k])
            ja["config"].pop("output.dir"), jb["config"].pop("output.dir")
            assert ja == jb
        else:
            assert a[k] == b[k], k


def test_env_overrides_output_dir(tmp_path, monkeypatch):
    cfg = _write(tmp_path, SMALL)
    target = tmp_path / "env-out"
    monkeypatch.setenv("MILDNS_OUT", str(target))
    assert main(["run", str(cfg), "--set", "output.figures=false"]) == 0
    assert (target / "report.json").is_file()
    assert not (target / "figures").exists()


def test_divergence_is_a_finding(tmp_path):
    cfg = _write(tmp_path, SMALL)
    root = tmp_path / "div"
    assert main(["run", str(cfg), "--set", "datum.amplitude=60", "--set", "solver.max_iter=20",
                 "--set", f'output.dir="{root}"', "--set", "output.figures=false"]) == 0
    assert json.loads((root / "report.json").read_text())["result"]["diverged"] is True


def test_shipped_configs_parse():
    paths = sorted(CONFIGS.glob("*.toml"))
    assert len(paths) >= 5
    for p in paths:
        load_config(p)
