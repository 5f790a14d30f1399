"""Command-line behavior: round-trips, exit codes, determinism."""

import json

import numpy as np
import pytest

from ms3d.cli import main
from ms3d.data import write_csv_array, write_field_dump, write_pgm
from ms3d.diagnostics import aggregation_metric
from ms3d.gan import TrainConfig, initial_model, save_checkpoint
from ms3d.rg import embed_square, ms3d, normalize

TINY_CONFIG = """
# toy run, small enough for tests
data_n = 12
batch_size = 4
steps = 6
metric_cadence = 3
metric_eval_n = 2
metric_fake_n = 4
fisher_probes = 2
g_hidden = 16
d_hidden = 8
latent_dim = 8
penalty_weight = 10.0
"""


def write_config(tmp_path, text=TINY_CONFIG, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestDescriptorCommand:
    def test_constant_image_total_zero(self, tmp_path, capsys):
        path = tmp_path / "gray.pgm"
        write_pgm(path, np.full((16, 16), 128, dtype=np.uint8))
        assert main(["descriptor", str(path)]) == 0
        out = capsys.readouterr().out
        assert out.strip().endswith("total: 0.0")

    def test_output_matches_library_bit_exactly(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, (16, 16), dtype=np.uint8)
        path = tmp_path / "img.pgm"
        write_pgm(path, img)
        assert main(["descriptor", str(path)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        printed = [float(line.split(": ")[1]) for line in lines]
        profile = ms3d(normalize(embed_square(img[:, :, None] / 255.0, 2)), 2)
        assert printed[:-1] == profile.per_scale
        assert printed[-1] == profile.total

    def test_json_report_schema(self, tmp_path, capsys):
        path = tmp_path / "img.pgm"
        write_pgm(path, np.eye(16, dtype=np.uint8) * 255)
        assert main(["descriptor", str(path), "--json", "--zeta", "2"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["schema"] == 1
        assert report["zeta"] == 2
        profile = ms3d(normalize(embed_square(np.eye(16)[:, :, None], 2)), 2)
        assert report["per_scale"] == profile.per_scale
        assert report["total"] == profile.total

    def test_gaussian_filter_flag(self, tmp_path, capsys):
        path = tmp_path / "img.pgm"
        write_pgm(path, (np.arange(256) % 256).reshape(16, 16).astype(np.uint8))
        assert main(["descriptor", str(path), "--filter", "gaussian"]) == 0
        assert "total:" in capsys.readouterr().out

    def test_unreadable_input_is_runtime_error(self, tmp_path, capsys):
        assert main(["descriptor", str(tmp_path / "absent.pgm")]) == 2
        assert capsys.readouterr().err.strip()

    def test_equal_value_multisets_tie_and_match_library(self, tmp_path, capsys):
        # block averaging scores a field by its value distribution, so a
        # solid square and the same mass scattered tie exactly; the CLI must
        # reproduce the library's numbers for both
        solid = np.zeros((16, 16), dtype=np.uint8)
        solid[2:6, 2:6] = 255
        scattered = np.zeros((16, 16), dtype=np.uint8)
        scattered[::4, ::4] = 255
        totals = []
        for name, img in (("solid.pgm", solid), ("scattered.pgm", scattered)):
            path = tmp_path / name
            write_pgm(path, img)
            assert main(["descriptor", str(path), "--json"]) == 0
            report = json.loads(capsys.readouterr().out)
            library = ms3d(normalize(embed_square(img[:, :, None] / 255.0, 2)), 2)
            assert report["total"] == library.total
            totals.append(report["total"])
        assert totals[0] == totals[1]


class TestTrainCommand:
    def test_zero_steps_writes_header_and_initial_checkpoint(self, tmp_path, capsys):
        config = write_config(tmp_path)
        out = tmp_path / "run"
        assert main(["train", str(config), "--steps", "0", "--out", str(out)]) == 0
        assert (out / "metrics.csv").read_text() == \
            "step,d_train,d_val,d_fake,r_agg,ms3d,fisher,cosine\n"
        assert (out / "checkpoint_initial.npz").exists()
        assert (out / "checkpoint_final.npz").exists()
        assert (out / "samples.png").exists()

    def test_seeded_runs_are_byte_identical(self, tmp_path, capsys):
        config = write_config(tmp_path)
        contents = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["train", str(config), "--out", str(out), "--seed", "3"]) == 0
            contents.append((out / "metrics.csv").read_bytes())
        assert contents[0] == contents[1]
        assert contents[0].count(b"\n") == 3  # header plus two records

    def test_show_config_lists_every_key(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert main(["train", str(config), "--show-config"]) == 0
        out = capsys.readouterr().out
        from dataclasses import fields
        for f in fields(TrainConfig):
            assert f"{f.name} = " in out

    def test_unknown_config_key_rejected_by_name(self, tmp_path, capsys):
        config = write_config(tmp_path, TINY_CONFIG + "\nwarmup_epochs = 5\n")
        assert main(["train", str(config)]) == 1
        assert "warmup_epochs" in capsys.readouterr().err

    def test_invalid_config_value_rejected(self, tmp_path, capsys):
        config = write_config(tmp_path, TINY_CONFIG + "\nzeta = 7\n")
        assert main(["train", str(config)]) == 1
        assert "zeta" in capsys.readouterr().err

    def test_checkpoint_cadence_writes_step_checkpoints(self, tmp_path, capsys):
        config = write_config(tmp_path, TINY_CONFIG + "\ncheckpoint_cadence = 3\n")
        out = tmp_path / "run"
        assert main(["train", str(config), "--out", str(out)]) == 0
        assert (out / "checkpoint_step3.npz").exists()
        assert (out / "checkpoint_step6.npz").exists()


class TestAnalyzeCommand:
    def test_zero_dump(self, tmp_path, capsys):
        path = tmp_path / "zero.f64"
        write_field_dump(path, np.zeros((8, 8)))
        assert main(["analyze", "--dump", str(path)]) == 0
        assert "n_agg=0" in capsys.readouterr().out

    def test_two_blob_fixture(self, tmp_path, capsys):
        field = np.zeros((8, 8))
        field[0:2, 0:2] = 1.0
        field[5:7, 5:7] = 1.0
        path = tmp_path / "blobs.f64"
        write_field_dump(path, field)
        assert main(["analyze", "--dump", str(path), "--tau", "0.5",
                     "--connectivity", "4"]) == 0
        assert "n_agg=2" in capsys.readouterr().out

    def test_csv_dump_matches_library_bit_exactly(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        field = rng.uniform(-1.0, 1.0, (16, 16))
        path = tmp_path / "field.csv"
        write_csv_array(path, field)
        report = tmp_path / "report.csv"
        assert main(["analyze", "--dump", str(path), "--csv", str(report)]) == 0
        name, n_agg, r_agg = report.read_text().splitlines()[1].split(",")
        expected = aggregation_metric(normalize(field), 0.2, 8)
        assert int(n_agg) == expected.n_agg
        assert float(r_agg) == expected.r_agg

    def test_checkpoint_mode_reports_fisher(self, tmp_path, capsys):
        config = TrainConfig(data_n=12, batch_size=4, d_hidden=8, g_hidden=16, latent_dim=8)
        path = tmp_path / "model.npz"
        save_checkpoint(path, initial_model(config), config=config)
        assert main(["analyze", "--checkpoint", str(path), "--samples", "2",
                     "--data-n", "12", "--probes", "2"]) == 0
        out = capsys.readouterr().out
        assert "fisher_trace:" in out and "sample0:" in out

    def test_requires_exactly_one_source(self, tmp_path, capsys):
        assert main(["analyze"]) == 1
        path = tmp_path / "zero.f64"
        write_field_dump(path, np.zeros((4, 4)))
        assert main(["analyze", "--dump", str(path), "--checkpoint", "x.npz"]) == 1


class TestLandscapeCommand:
    def _checkpoint(self, tmp_path):
        config = TrainConfig(data_n=12, batch_size=4, d_hidden=8, g_hidden=16,
                             latent_dim=8, penalty_weight=0.0)
        path = tmp_path / "model.npz"
        save_checkpoint(path, initial_model(config), config=config)
        return path

    def test_radius_zero_constant_grid(self, tmp_path, capsys):
        ckpt = self._checkpoint(tmp_path)
        out = tmp_path / "grid.csv"
        assert main(["landscape", str(ckpt), "--out", str(out), "--grid", "3",
                     "--radius", "0", "--samples", "4", "--data-n", "12"]) == 0
        grid = np.loadtxt(out, delimiter=",")
        assert grid.shape == (3, 3)
        assert np.all(grid == grid[0, 0])

    def test_seeded_grid_is_byte_identical(self, tmp_path, capsys):
        ckpt = self._checkpoint(tmp_path)
        blobs = []
        for name in ("g1.csv", "g2.csv"):
            out = tmp_path / name
            assert main(["landscape", str(ckpt), "--out", str(out), "--grid", "3",
                         "--radius", "0.5", "--seed", "7", "--samples", "4",
                         "--data-n", "12"]) == 0
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]


class TestUsage:
    def test_bad_flag_is_usage_error(self, capsys):
        assert main(["descriptor", "img.pgm", "--bogus"]) == 1

    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["transmogrify"]) == 1
