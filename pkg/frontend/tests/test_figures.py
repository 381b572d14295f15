import os

import numpy as np
import pytest

from bohmflow_viz import cli, io
from bohmflow_viz.figures import KINDS, FigureSpec, render


class TestReaders:
    def test_field_container(self, run_dir):
        snap = io.read_field(os.path.join(run_dir, "psi0.bfld"))
        assert snap.dim == 1
        assert snap.points == 256
        assert snap.values.shape == (256,)
        norm = np.sqrt(np.sum(np.abs(snap.values) ** 2) * (2 * snap.half_extent / snap.points))
        assert norm == pytest.approx(1.0, abs=1e-9)

    def test_field_container_rejects_garbage(self, tmp_path):
        bad = tmp_path / "bad.bfld"
        bad.write_bytes(b"JUNKJUNKJUNK" + b"\0" * 64)
        with pytest.raises(io.SchemaError):
            io.read_field(bad)

    def test_ensemble_reader(self, run_dir):
        ens = io.read_ensemble(os.path.join(run_dir, "ensemble.ndjson"))
        assert len(ens) == 48
        assert all(s in ("completed", "node_encounter", "left_box") for s in ens.status)

    def test_analysis_reader(self, run_dir):
        payload = io.read_analysis(run_dir)
        assert {"a", "t_onset", "gamma"} <= payload["slow_ball"].keys()
        assert payload["trajectories"]

    def test_manifest_reader(self, run_dir):
        manifest = io.read_manifest(run_dir)
        assert manifest["version"] == 1
        assert manifest["times"][0] == 0.0


class TestRender:
    @pytest.mark.parametrize("kind", KINDS)
    def test_all_kinds_render(self, run_dir, tmp_path, kind):
        out = tmp_path / f"{kind}.png"
        path = render(FigureSpec(kind=kind, run_dir=run_dir, output=str(out)))
        assert os.path.exists(path)
        assert os.path.getsize(path) > 5000

    def test_render_is_deterministic(self, run_dir, tmp_path):
        a = tmp_path / "a.png"
        b = tmp_path / "b.png"
        render(FigureSpec(kind="v_inf_histogram", run_dir=run_dir, output=str(a)))
        render(FigureSpec(kind="v_inf_histogram", run_dir=run_dir, output=str(b)))
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_kind_rejected(self, run_dir, tmp_path):
        with pytest.raises(io.SchemaError):
            FigureSpec(kind="pie_chart", run_dir=run_dir, output=str(tmp_path / "x.png"))

    def test_missing_run_dir_rejected(self, tmp_path):
        with pytest.raises(io.SchemaError):
            FigureSpec(kind="trajectory_fan", run_dir=str(tmp_path / "nope"),
                       output=str(tmp_path / "x.png"))

    def test_empty_ensemble_errors_without_file(self, empty_run_dir, tmp_path):
        out = tmp_path / "fan.png"
        with pytest.raises(io.SchemaError):
            render(FigureSpec(kind="trajectory_fan", run_dir=empty_run_dir, output=str(out)))
        assert not out.exists()


class TestCli:
    def test_cli_renders(self, run_dir, tmp_path):
        out = tmp_path / "fan.png"
        rc = cli.main(["trajectory_fan", "--run", run_dir, "-o", str(out)])
        assert rc == 0
        assert out.exists()

    def test_cli_empty_ensemble_exit_code(self, empty_run_dir, tmp_path, capsys):
        out = tmp_path / "fan.png"
        rc = cli.main(["trajectory_fan", "--run", empty_run_dir, "-o", str(out)])
        assert rc == 1
        assert not out.exists()
        assert "error" in capsys.readouterr().err
