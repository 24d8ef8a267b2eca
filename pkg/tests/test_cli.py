import json
import subprocess
import sys

import numpy as np
import pytest

from powerdense.acquisition import save_power_density, synthesize_H
from powerdense.cli import main
from powerdense.fields import read_field
from powerdense.recon3d import (
    anchor_frame_from_fluxes,
    build_covering,
    cgo_exact_fluxes,
    save_covering,
)

from conftest import unit_grid3


CONSTANT_2D = """\
[experiment]
dimension = 2

[grid]
resolution = {n}, {n}
extents = 0, 1; 0, 1

[phantom]
kind = constant
value = 1.0

[solver]
tol = 1e-11
"""

BUMP_2D = """\
[experiment]
dimension = 2
seed = 5

[grid]
resolution = 17, 17
extents = 0, 1; 0, 1

[phantom]
kind = gaussian_bump

[anchors]
x0 = 0.0, 0.5
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_help_and_usage_exit_codes(capsys):
    assert main(["--help"]) == 0
    assert main(["verify", "--help"]) == 0
    assert main([]) == 2  # missing subcommand
    assert main(["frobnicate"]) == 2  # unknown subcommand
    assert main(["forward"]) == 2  # missing --config
    capsys.readouterr()


def test_config_errors_exit_two(tmp_path, capsys):
    assert main(["forward", "--config", str(tmp_path / "absent.ini")]) == 2
    bad = write(tmp_path, "bad.ini", "[experiment]\nseed = 1\n")
    assert main(["forward", "--config", bad]) == 2
    err = capsys.readouterr().err
    assert "config error" in err and "missing [experiment] dimension" in err


def test_forward_writes_outputs(tmp_path):
    cfg = write(tmp_path, "c.ini", CONSTANT_2D.format(n=9))
    out = tmp_path / "fwd"
    assert main(["forward", "--config", cfg, "--out", str(out)]) == 0
    for name in ("u_g1.field", "u_g2.field", "S_g1.field", "g1.csv", "report.csv"):
        assert (out / name).exists(), name
    u1 = read_field(out / "u_g1.field")
    x1 = u1.grid.mesh()[0]
    assert np.max(np.abs(u1.values - x1)) < 1e-9  # affine solution is exact


def test_acquire_then_reconstruct2d(tmp_path, capsys):
    cfg = write(tmp_path, "c.ini", CONSTANT_2D.format(n=17))
    acq = tmp_path / "acq"
    assert main(["acquire", "--config", cfg, "--out", str(acq)]) == 0
    assert (acq / "data.json").exists() and (acq / "g1.csv").exists()

    rec = tmp_path / "rec"
    assert (
        main(
            [
                "reconstruct2d",
                "--data",
                str(acq / "data.json"),
                "--anchor-x0",
                "0.0,0.5",
                "--log-sigma0",
                "0.0",
                "--out",
                str(rec),
            ]
        )
        == 0
    )
    ls = read_field(rec / "log_sigma.field")
    assert np.max(np.abs(ls.values)) < 1e-6  # constant unit conductivity
    assert (rec / "theta.field").exists()
    assert (rec / "report.csv").exists()
    man = json.loads((rec / "manifest.json").read_text())
    assert man["anchor_x0"] == [0.0, 0.5]

    # bad anchor arity is a usage error; an anchor outside the closed domain
    # is a numerical-domain failure (exit 3)
    assert (
        main(
            ["reconstruct2d", "--data", str(acq / "data.json"),
             "--anchor-x0", "0.5", "--log-sigma0", "0", "--out", str(rec)]
        )
        == 2
    )
    assert (
        main(
            ["reconstruct2d", "--data", str(acq / "data.json"),
             "--anchor-x0", "2.0,0.5", "--log-sigma0", "0", "--out", str(rec)]
        )
        == 3
    )
    err = capsys.readouterr().err
    assert "DomainError" in err


def test_reconstruct2d_missing_illumination(tmp_path, capsys):
    cfg = write(tmp_path, "c.ini", CONSTANT_2D.format(n=9))
    acq = tmp_path / "acq"
    assert main(["acquire", "--config", cfg, "--out", str(acq)]) == 0
    (acq / "g1.csv").unlink()
    code = main(
        ["reconstruct2d", "--data", str(acq / "data.json"),
         "--anchor-x0", "0.0,0.5", "--log-sigma0", "0", "--out", str(tmp_path / "r")]
    )
    assert code == 2
    assert "illumination" in capsys.readouterr().err
    capsys.readouterr()


def test_verify_pass_and_corrupt(tmp_path, capsys):
    cfg = write(tmp_path, "c.ini", CONSTANT_2D.format(n=9))
    out = tmp_path / "v"
    assert main(["verify", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "report.csv").exists()
    assert main(["verify", "--config", cfg, "--corrupt"]) == 1
    assert "identity failure" in capsys.readouterr().err


def test_sweep_cli(tmp_path):
    cfg = write(tmp_path, "b.ini", BUMP_2D)
    out = tmp_path / "sw"
    assert (
        main(["sweep", "--config", cfg, "--amplitudes", "1e-3,1e-2", "--out", str(out)])
        == 0
    )
    text = (out / "report.csv").read_text()
    assert "sweep" in text and "fit" in text
    assert main(["sweep", "--config", cfg, "--amplitudes", "1e-3,oops"]) == 2


@pytest.fixture(scope="module")
def cgo_data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cgo3d")
    grid = unit_grid3(17)
    rho = np.pi
    fluxes = cgo_exact_fluxes(grid, rho)
    covering = build_covering(fluxes, rho, grid)
    data = synthesize_H(fluxes, rho=rho)
    save_power_density(data, root)
    save_covering(covering, root / "covering.txt")
    frame, _, _ = anchor_frame_from_fluxes(fluxes, data, covering, (0.5, 0.5, 0.5))
    np.savetxt(root / "frame.txt", frame)
    return root


def test_reconstruct3d_cli(cgo_data_dir, tmp_path):
    out = tmp_path / "r3"
    code = main(
        [
            "reconstruct3d",
            "--data",
            str(cgo_data_dir / "data.json"),
            "--covering",
            str(cgo_data_dir / "covering.txt"),
            "--anchor",
            f"0.5,0.5,0.5,0.0,{cgo_data_dir / 'frame.txt'}",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    ls = read_field(out / "log_sigma.field")
    assert np.max(np.abs(ls.values)) < 0.1  # interpolation-limited at 17^3
    nodes = (out / "recon3d_nodes.csv").read_text().splitlines()
    assert nodes[0] == "chain_length,max_drift,max_projection,min_log_det_sqrt"
    assert len(nodes) == 1 + 17**3
    text = (out / "report.csv").read_text()
    assert "reconstruct3d" in text
    man = json.loads((out / "manifest.json").read_text())
    assert man["num_slabs"] == 3


def test_reconstruct3d_anchor_errors(cgo_data_dir, tmp_path, capsys):
    args = ["reconstruct3d", "--data", str(cgo_data_dir / "data.json"),
            "--out", str(tmp_path / "x")]
    assert main(args + ["--anchor", "0.5,0.5,0.5"]) == 2
    bad_frame = tmp_path / "f8.txt"
    np.savetxt(bad_frame, np.arange(8.0))
    assert main(args + ["--anchor", f"0.5,0.5,0.5,0.0,{bad_frame}"]) == 2
    assert "9 numbers" in capsys.readouterr().err
    capsys.readouterr()


def test_console_script_and_module_smoke():
    got = subprocess.run(
        ["powerdense", "--help"], capture_output=True, text=True, timeout=120
    )
    assert got.returncode == 0 and "reconstruct3d" in got.stdout
    got = subprocess.run(
        [sys.executable, "-m", "powerdense", "--help"],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert got.returncode == 0 and "verify" in got.stdout
