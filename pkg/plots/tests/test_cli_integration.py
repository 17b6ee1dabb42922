"""End-to-end: drive the bufwer CLI for real CSVs, then render them.

These tests exercise the cross-package file contracts; they are skipped when
the engine CLI is not installed (the plotting package stands alone).
"""

import shutil
import subprocess

import pytest

from buplots.cli import main

bufwer_missing = shutil.which("bufwer") is None
pytestmark = pytest.mark.skipif(bufwer_missing, reason="bufwer CLI not installed")


def sh(args):
    return subprocess.run([str(a) for a in args], capture_output=True, text=True)


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("e2e") / "sim.csv"
    res = sh(["bufwer", "simulate", "--k", 4, "--alpha", 0.05,
              "--theta-true", -2.05, "--k1", "0..4,mix", "--reps", 2000,
              "--seed", 5, "--procedures", "hommel,gou,bu-mix:-2.05,ih-mix:-2.05",
              "--b", 5000, "-o", path])
    assert res.returncode == 0, res.stderr
    return path


@pytest.fixture(scope="module")
def region_csv(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("e2e-region")
    parts = []
    for p3 in (0.01, 0.03):
        part = tmp / f"region-{p3}.csv"
        res = sh(["bufwer", "region", "--procedure", "gou", "--k", 3,
                  "--alpha", 0.05, "--fix", f"p3={p3}", "--res", 8, "-o", part])
        assert res.returncode == 0, res.stderr
        parts.append(part)
    merged = tmp / "region.csv"
    merged.write_text("".join(p.read_text() for p in parts))
    return merged


def test_power_curves_from_real_simulation(sim_csv, tmp_path):
    out = tmp_path / "curves.png"
    assert main(["power_curves", str(sim_csv), "-o", str(out)]) == 0
    assert out.stat().st_size > 0


def test_improvement_from_real_simulation(sim_csv, tmp_path):
    out = tmp_path / "improvement.svg"
    assert main(["improvement", str(sim_csv), "-o", str(out)]) == 0
    assert out.stat().st_size > 0


def test_heatmap_from_concatenated_region_exports(region_csv, tmp_path):
    out = tmp_path / "heat.png"
    assert main(["region_heatmap", str(region_csv), "-o", str(out)]) == 0
    assert out.stat().st_size > 0
