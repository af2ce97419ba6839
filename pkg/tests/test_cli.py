"""CLI subcommands: outputs, determinism, and exit codes."""

from __future__ import annotations

import json
import subprocess
import sys

import numpy as np

from trajfield.cli import main
from trajfield.fields import GridSpec, write_field
from trajfield.labeling import label_potentials, rasterize

from conftest import constant_velocity_scene_text


def run_cli(*argv):
    return main(list(argv))


def _scene_file(tmp_path, rng, name="walkers.txt", **kwargs):
    path = tmp_path / name
    path.write_text(constant_velocity_scene_text(rng, **kwargs))
    return path


class TestIngest:
    def test_jsonl_output(self, tmp_path, rng):
        src = _scene_file(tmp_path, rng, n_agents=3)
        out = tmp_path / "samples.jsonl"
        assert run_cli("ingest", str(src), str(out)) == 0
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert records
        first = records[0]
        assert set(first) == {"sample_id", "scene_id", "agent_id", "start_time_index",
                              "past", "future"}
        assert len(first["past"]) == 8 and len(first["future"]) == 12

    def test_respects_config_lengths(self, tmp_path, rng):
        src = _scene_file(tmp_path, rng, n_agents=2, length=16)
        out = tmp_path / "samples.jsonl"
        assert run_cli("--set", "obs_len=4", "--set", "pred_len=6", "--set", "stride=2",
                       "ingest", str(src), str(out)) == 0
        records = [json.loads(line) for line in out.read_text().splitlines()]
        assert all(len(r["past"]) == 4 and len(r["future"]) == 6 for r in records)


class TestLabel:
    def test_field_files_and_manifest(self, tmp_path, rng):
        # 1 sample per agent; slow walkers stay inside the canonical grid
        src = _scene_file(tmp_path, rng, n_agents=3, length=20, vel_range=0.4)
        out = tmp_path / "fields"
        assert run_cli("label", str(src), str(out), "--jobs", "1") == 0
        manifest = (out / "manifest.txt").read_text().splitlines()
        rows = [line.split() for line in manifest if not line.startswith("#")]
        assert len(rows) == 3
        ok_rows = [r for r in rows if r[1] == "ok"]
        assert len(ok_rows) == 3
        for row in ok_rows:
            assert row[2] == "+1.0" and row[3] == "-1.0"
            assert (out / row[4]).exists()

    def test_stationary_sample_marked_degenerate(self, tmp_path, rng):
        lines = [f"{i * 10} 1 2.0 3.0" for i in range(20)]
        src = tmp_path / "still.txt"
        src.write_text("\n".join(lines) + "\n")
        out = tmp_path / "fields"
        assert run_cli("label", str(src), str(out), "--jobs", "1") == 0
        manifest = (out / "manifest.txt").read_text()
        assert "degenerate" in manifest
        assert len(list(out.glob("*.pfld"))) == 0

    def test_rerun_byte_identical(self, tmp_path, rng):
        src = _scene_file(tmp_path, rng, n_agents=2, length=20)
        out1, out2 = tmp_path / "f1", tmp_path / "f2"
        assert run_cli("label", str(src), str(out1), "--jobs", "1") == 0
        assert run_cli("label", str(src), str(out2), "--jobs", "1") == 0
        files1 = sorted(p.name for p in out1.iterdir())
        assert files1 == sorted(p.name for p in out2.iterdir())
        for name in files1:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


class TestFitPredict:
    def test_fit_writes_bundle(self, tmp_path, rng):
        src = _scene_file(tmp_path, rng)
        bundle_path = tmp_path / "model.pfeb"
        assert run_cli("fit", str(src), str(bundle_path)) == 0
        assert bundle_path.read_bytes()[:4] == b"PFEB"

    def test_predict_rows_and_determinism(self, tmp_path, rng):
        src = _scene_file(tmp_path, rng, n_agents=4, length=20)
        out1, out2 = tmp_path / "p1.txt", tmp_path / "p2.txt"
        args = ("--set", "K=4", "--set", "seed=7")
        assert run_cli(*args, "predict", str(src), str(out1), "--jobs", "1") == 0
        assert run_cli(*args, "predict", str(src), str(out2), "--jobs", "1") == 0
        assert out1.read_bytes() == out2.read_bytes()
        rows = [line.split() for line in out1.read_text().splitlines()
                if not line.startswith("#")]
        modes = {row[1] for row in rows}
        assert modes == {"mean", "1", "2", "3", "4"}
        by_sample_mean = {}
        for row in rows:
            assert len(row) == 6
            if row[1] == "mean":
                by_sample_mean.setdefault(row[0], []).append(row)
        assert all(len(v) == 12 for v in by_sample_mean.values())

    def test_predict_with_fitted_bundle(self, tmp_path, rng):
        src = _scene_file(tmp_path, rng, n_agents=3, length=20)
        bundle_path = tmp_path / "model.pfeb"
        assert run_cli("fit", str(src), str(bundle_path)) == 0
        out = tmp_path / "pred.txt"
        assert run_cli("--set", f"bundle={bundle_path}", "--set", "K=2",
                       "predict", str(src), str(out), "--jobs", "1") == 0
        assert out.exists()

    def test_predict_linear_bundle(self, tmp_path, rng):
        src = _scene_file(tmp_path, rng, n_agents=2, length=20)
        out = tmp_path / "pred.txt"
        assert run_cli("--set", "bundle=linear", "predict", str(src), str(out),
                       "--jobs", "1") == 0
        rows = [line.split() for line in out.read_text().splitlines()
                if not line.startswith("#")]
        assert {row[1] for row in rows} == {"mean", "1"}

    def test_dump_fields(self, tmp_path, rng):
        src = _scene_file(tmp_path, rng, n_agents=2, length=20)
        out = tmp_path / "pred.txt"
        dump = tmp_path / "dump"
        assert run_cli("--set", "K=1", "predict", str(src), str(out),
                       "--jobs", "1", "--dump-fields", str(dump)) == 0
        assert list(dump.glob("*_inertial_potential.pfld"))
        assert list(dump.glob("*_direction.pfld"))

    def test_parallel_jobs_match_serial(self, tmp_path, rng):
        src = _scene_file(tmp_path, rng, n_agents=3, length=20)
        serial, parallel = tmp_path / "s.txt", tmp_path / "p.txt"
        args = ("--set", "K=3", "--set", "seed=5")
        assert run_cli(*args, "predict", str(src), str(serial), "--jobs", "1") == 0
        assert run_cli(*args, "predict", str(src), str(parallel), "--jobs", "2") == 0
        assert serial.read_bytes() == parallel.read_bytes()


class TestEval:
    def _data_dir(self, tmp_path, rng, n=2):
        data = tmp_path / "data"
        data.mkdir()
        for i in range(n):
            (data / f"scene{i}.txt").write_text(constant_velocity_scene_text(rng))
        return data

    def test_oracle_report_zero(self, tmp_path, rng, capsys):
        data = self._data_dir(tmp_path, rng)
        out = tmp_path / "report.txt"
        code = run_cli("--set", f"data_dir={data}", "--set", "bundle=oracle",
                       "--set", "K=1", "eval", "--output", str(out))
        assert code == 0
        text = out.read_text()
        assert "ade=0.0" in text
        assert "average" in text

    def test_linear_on_constant_velocity(self, tmp_path, rng):
        data = self._data_dir(tmp_path, rng)
        out = tmp_path / "report.txt"
        code = run_cli("--set", f"data_dir={data}", "--set", "bundle=linear",
                       "--set", "K=1", "eval", "--output", str(out))
        assert code == 0
        ade = float([l for l in out.read_text().splitlines()
                     if l.startswith("ade=")][0].split("=")[1])
        assert ade < 1e-9


class TestRender:
    def _field_file(self, tmp_path, rng, channels=1):
        grid = GridSpec(32, 32, resolution=0.25)
        if channels == 1:
            pts = grid.center_world + np.array([[-3.0, 0.0], [3.0, 0.0]])
            field = rasterize(pts, label_potentials(pts), grid, width=0.75)
            path = tmp_path / "band.pfld"
            field.save(path)
        else:
            data = rng.standard_normal(grid.shape + (channels,)).astype(np.float32)
            path = tmp_path / f"vec{channels}.pfld"
            write_field(path, grid, data, np.ones(grid.shape, np.float32))
        return path

    def test_scalar_render_byte_stable(self, tmp_path, rng):
        src = self._field_file(tmp_path, rng)
        out1, out2 = tmp_path / "a.png", tmp_path / "b.png"
        assert run_cli("render", str(src), str(out1)) == 0
        assert run_cli("render", str(src), str(out2)) == 0
        data = out1.read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
        assert data == out2.read_bytes()

    def test_constant_field_uniform_color(self, tmp_path, rng):
        from PIL import Image

        grid = GridSpec(16, 16, resolution=1.0)
        path = tmp_path / "const.pfld"
        write_field(path, grid, np.full(grid.shape + (1,), 2.0, np.float32),
                    np.ones(grid.shape, np.float32))
        out = tmp_path / "const.png"
        assert run_cli("render", str(path), str(out)) == 0
        img = np.asarray(Image.open(out))
        assert (img == img[0, 0]).all()

    def test_band_is_yellow_to_blue(self, tmp_path, rng):
        from PIL import Image

        src = self._field_file(tmp_path, rng)
        out = tmp_path / "band.png"
        assert run_cli("render", str(src), str(out), "--scale", "4") == 0
        img = np.asarray(Image.open(out)).astype(int)
        h, w, _ = img.shape
        start = img[h // 2, int(w * 0.2)]   # high potential end
        end = img[h // 2, int(w * 0.8)]     # low potential end
        assert start[0] > start[2]  # yellow-ish: red above blue
        assert end[2] > end[0]      # blue-ish: blue above red

    def test_vector_field_arrows_point_right(self, tmp_path, rng):
        from PIL import Image

        grid = GridSpec(16, 16, resolution=1.0)
        data = np.zeros(grid.shape + (2,), np.float32)
        data[..., 0] = 1.0
        path = tmp_path / "unit.pfld"
        write_field(path, grid, data, np.ones(grid.shape, np.float32))
        out = tmp_path / "unit.png"
        assert run_cli("render", str(path), str(out)) == 0
        img = np.asarray(Image.open(out))
        dark = img.sum(axis=2) < 200
        assert dark.any()  # arrows drawn over the background
        # every glyph anchors at a subsampled pixel center and extends to +u:
        # dark pixels sit at or right of their glyph center (scale 8, step 4)
        vv, uu = np.nonzero(dark)
        anchors_u = (uu // 32) * 32 + 4  # glyph center x for each 4-pixel cell
        assert (uu >= anchors_u - 1).all()
        assert (uu - anchors_u).max() > 4  # strokes extend rightward

    def test_three_channels_rejected(self, tmp_path, rng):
        src = self._field_file(tmp_path, rng, channels=3)
        assert run_cli("render", str(src), str(tmp_path / "x.png")) == 3


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path, rng):
        src = _scene_file(tmp_path, rng)
        assert run_cli("--set", "bogus=1", "ingest", str(src), str(tmp_path / "o")) == 2
        assert run_cli("--set", "protocol=weird", "eval") == 2

    def test_data_error_is_3(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("0 1 oops 2\n")
        assert run_cli("ingest", str(bad), str(tmp_path / "o")) == 3
        missing = tmp_path / "missing.txt"
        assert run_cli("ingest", str(missing), str(tmp_path / "o")) == 3

    def test_config_errors_enumerate_all_keys(self, tmp_path, rng, capsys):
        src = _scene_file(tmp_path, rng)
        code = run_cli("--set", "bogus=1", "--set", "dt=zzz", "ingest", str(src),
                       str(tmp_path / "o"))
        assert code == 2
        err = capsys.readouterr().err
        assert "bogus" in err and "dt" in err

    def test_module_entrypoint(self, tmp_path, rng):
        src = _scene_file(tmp_path, rng, n_agents=2, length=20)
        out = tmp_path / "samples.jsonl"
        proc = subprocess.run([sys.executable, "-m", "trajfield", "ingest", str(src),
                               str(out)], capture_output=True, text=True)
        assert proc.returncode == 0
        assert out.exists()
