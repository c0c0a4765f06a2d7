import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from rdpdhg import cli
from rdpdhg.fieldio import read_field


def _run(tmp_path, *args, out="out"):
    return cli.main([*args, "--out", str(tmp_path / out)])


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_theory_output(tmp_path, capsys):
    code = _run(tmp_path, "theory", "--equation", "allen_cahn", "--eps0", "0.1", "--nx", "16", "--ht", "0.001", "--nt", "7")
    assert code == 0
    text = capsys.readouterr().out
    line = next(l for l in text.splitlines() if l.startswith("tau_p"))
    assert line.split()[-1] == "0.0574"
    rows = {r["quantity"]: r["value"] for r in _rows(tmp_path / "out" / "theory.csv")}
    assert float(rows["theta_tilde"]) == pytest.approx(0.21)
    assert float(rows["phi"]) == pytest.approx(0.014104, abs=1e-6)


def test_manifest_and_config(tmp_path):
    assert _run(tmp_path, "theory", "--nx", "8") == 0
    out = tmp_path / "out"
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "theory" and man["exit_code"] == 0
    assert {"numpy", "scipy", "numba", "python"} <= set(man["versions"])
    cfg = dict(l.split("=", 1) for l in (out / "config.txt").read_text().splitlines())
    assert cfg["nx"] == "8" and cfg["equation"] == "allen_cahn"


def test_config_roundtrip_reproduces_snapshots(tmp_path):
    args = ["solve", "--equation", "allen_cahn", "--eps0", "0.1", "--nx", "16", "--ht", "0.002", "--nt", "2",
            "--windows", "2", "--snapshots", "0.004,0.008", "--pgm", "true"]
    assert _run(tmp_path, *args, out="a") == 0
    assert cli.main(["solve", "--config", str(tmp_path / "a" / "config.txt"), "--out", str(tmp_path / "b")]) == 0
    for k in range(2):
        pa = tmp_path / "a" / "snapshots" / f"snap_{k:04d}.rdf"
        pb = tmp_path / "b" / "snapshots" / f"snap_{k:04d}.rdf"
        assert pa.read_bytes() == pb.read_bytes()
    u, t = read_field(tmp_path / "a" / "snapshots" / "snap_0001.rdf")
    assert t == pytest.approx(0.008) and u.shape == (16, 16)
    rows = _rows(tmp_path / "a" / "windows.csv")
    assert len(rows) == 2 and all(r["converged"] == "1" for r in rows)


def test_flags_override_file(tmp_path):
    cfgfile = tmp_path / "c.txt"
    cfgfile.write_text("# settings\nnx = 8\nht=0.5  # trailing\n")
    args = cli.build_parser().parse_args(["theory", "--config", str(cfgfile), "--ht", "0.25"])
    cfg = cli.resolve_config(args)
    assert cfg["nx"] == 8 and cfg["ht"] == 0.25 and cfg["tol"] == 1e-6


@pytest.mark.parametrize(
    "args,code",
    [
        (["solve", "--equation", "burgers"], 3),
        (["solve", "--solver", "magic"], 3),
        (["solve", "--nx", "ten"], 4),
        (["solve", "--ht", "-1"], 4),
        (["solve", "--adaptive", "maybe"], 4),
    ],
)
def test_error_codes(tmp_path, args, code):
    assert _run(tmp_path, *args) == code


def test_unknown_key_in_file(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("colour=red\n")
    assert cli.main(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == 3
    p.write_text("no equals sign\n")
    assert cli.main(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == 4


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["theory", "--out", str(blocker / "sub")]) == 5


def test_solver_failure_exit(tmp_path):
    assert _run(tmp_path, "solve", "--nx", "16", "--eps0", "0.1", "--ht", "0.001", "--max-iter", "3") == 6
    rows = _rows(tmp_path / "out" / "windows.csv")
    assert rows[0]["converged"] == "0"


def test_flow_command(tmp_path, capsys):
    code = _run(tmp_path, "flow", "--nx", "8", "--eps0", "0.1", "--ht", "0.001", "--nt", "2", "--t-end", "2", "--dt", "0.1")
    assert code == 0
    rows = _rows(tmp_path / "out" / "trajectory.csv")
    assert len(rows) == 21 and float(rows[-1]["fhat_l2"]) < float(rows[0]["fhat_l2"])
    assert "fitted_rate" in capsys.readouterr().out


def test_sweep_command(tmp_path):
    code = _run(tmp_path, "sweep", "--nx", "16", "--eps0", "0.1", "--ht-list", "0.001,0.002", "--nt-list", "1,2",
                "--rate-prefix", "20")
    assert code == 0
    rows = _rows(tmp_path / "out" / "sweep.csv")
    assert [(r["nt"], r["ht"]) for r in rows] == [("1", "0.001"), ("1", "0.002"), ("2", "0.001"), ("2", "0.002")]
    assert all(r["converged"] == "1" and float(r["rbar"]) > 0 for r in rows)
    stats = _rows(tmp_path / "out" / "runs" / "run_0000" / "stats.csv")
    assert list(stats[0]) == ["iter", "res_inf", "fhat_l2", "rate"] and stats[0]["rate"] == ""


def test_compare_command(tmp_path):
    code = _run(tmp_path, "compare", "--nx", "32", "--eps0", "0.02", "--ht", "0.002", "--windows", "2",
                "--ref-solver", "imex", "--ref-ht", "0.0005")
    assert code == 0
    rows = _rows(tmp_path / "out" / "compare.csv")
    assert len(rows) == 2
    for r in rows:
        assert float(r["l1_discrepancy"]) < 5e-3
        assert float(r["front_radius"]) == pytest.approx(float(r["front_radius_ref"]), abs=2e-3)
    timing = _rows(tmp_path / "out" / "timing.csv")
    assert [t["solver"] for t in timing] == ["pdhg", "imex"] and timing[1]["steps"] == "8"


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "rdpdhg", "theory", "--nx", "8", "--out", str(tmp_path / "o")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0 and "kappa" in proc.stdout
    assert np.isfinite(float(_rows(tmp_path / "o" / "theory.csv")[0]["value"]))
