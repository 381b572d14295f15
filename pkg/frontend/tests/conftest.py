import json
import os
import subprocess
import sys

import pytest

TINY_TOML = """\
schema = 1
name = "viz_fixture"

[grid]
dim = 1
half_extent = 30.0
points = 256

[potential]
family = "gaussian_well"
depth = 1.0
width = 1.0

[state]
kind = "gaussian"
sigma0 = 1.0
k0 = [1.5]
center = [0.0]
project_out_bound = true

[time]
t_final = 4.0
dt = 0.005
frame_stride = 10
t_asym = 3.0

[ensemble]
count = 48
seed = 99
output_stride = 4
chunk_size = 16
interpolation = "cubic"

[analysis]
onset_time = 1.5
gamma = 0.5
alpha = 1.0
speed_floor = 0.3
equivariance_times = [0.0, 2.0, 4.0]
ladder_base = 1.0

[output]
directory = "unused"
"""


@pytest.fixture(scope="session")
def run_dir(tmp_path_factory):
    """A real (downscaled) run directory produced through the primary CLI."""
    base = tmp_path_factory.mktemp("viz_run")
    cfg = base / "exp.toml"
    cfg.write_text(TINY_TOML)
    out = base / "run"
    proc = subprocess.run(
        [sys.executable, "-m", "bohmflow.cli", "all", "-c", str(cfg), "-o", str(out)],
        capture_output=True,
        text=True,
    )
    # exit 3 just means some physics claim failed at toy scale; artifacts exist
    assert proc.returncode in (0, 3), proc.stderr
    assert (out / "ensemble.ndjson").exists()
    return str(out)


@pytest.fixture()
def empty_run_dir(tmp_path, run_dir):
    """A run directory whose ensemble is empty (schema intact)."""
    import shutil

    dst = tmp_path / "empty_run"
    shutil.copytree(run_dir, dst)
    (dst / "ensemble.ndjson").write_text("")
    analysis = json.loads((dst / "analysis.json").read_text())
    analysis["trajectories"] = []
    (dst / "analysis.json").write_text(json.dumps(analysis))
    return str(dst)
