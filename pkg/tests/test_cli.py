import os

import pytest

from direplab.cli import main
from direplab.harness import fingerprint_value, load_pgm


def run_blobs(out, algo="gan", seeds=2, extra=()):
    argv = ["run", "--dataset", "blobs", "--algo", algo,
            "--iters", "4", "--batch", "8", "--cadence", "2",
            "--seeds", str(seeds), "--n-per-class", "10",
            "--seed", "1", "--out", out]
    return main(argv + list(extra))


class TestRun:
    def test_blob_run_succeeds(self, tmp_path, capsys):
        out = str(tmp_path / "run")
        assert run_blobs(out) == 0
        text = capsys.readouterr().out
        assert "seed 1:" in text and "seed 2:" in text
        assert "mean target accuracy over 2 seeds" in text
        assert os.path.exists(os.path.join(out, "results.csv"))
        assert os.path.exists(os.path.join(out, "seed1.ckpt"))

    def test_no_out_dir_is_fine(self, capsys):
        code = main(["run", "--dataset", "blobs", "--algo", "gan",
                     "--iters", "2", "--batch", "8", "--cadence", "1",
                     "--seeds", "1", "--n-per-class", "10"])
        assert code == 0
        assert "results in" not in capsys.readouterr().out

    def test_invalid_combination_exits_2(self, tmp_path, capsys):
        code = run_blobs(str(tmp_path / "r"), extra=["--ablation", "dsn_star"])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_bad_flag_value_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["run", "--dataset", "mnist"])
        assert exc.value.code == 2
        with pytest.raises(SystemExit) as exc:
            main(["run", "--no-such-flag"])
        assert exc.value.code == 2

    def test_missing_image_data_exits_2(self, tmp_path, capsys, monkeypatch):
        monkeypatch.delenv("DIREP_DATA_DIR", raising=False)
        code = main(["run", "--dataset", "fm", "--iters", "2",
                     "--data-dir", str(tmp_path)])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_blowup_exits_3(self, tmp_path, capsys):
        cfg = tmp_path / "hot.cfg"
        cfg.write_text("dataset = blobs\nalgorithm = vaegan\n"
                       "iterations = 50\nbatch_size = 8\nn_per_class = 10\n"
                       "n_seeds = 1\nalpha_e = 100.0\n")
        code = main(["run", "--config", str(cfg)])
        assert code == 3
        assert "aborted" in capsys.readouterr().err


class TestConfigFile:
    def test_config_file_drives_run(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        out = str(tmp_path / "run")
        cfg.write_text("dataset = blobs\nalgorithm = gan_based\n"
                       "iterations = 3\nbatch_size = 8\neval_cadence = 2\n"
                       "n_per_class = 10\nn_seeds = 1\n"
                       f"out = {out}\n")
        assert main(["run", "--config", str(cfg)]) == 0
        fp = open(os.path.join(out, "config.txt")).read()
        assert fingerprint_value(fp, "algorithm") == "gan_based"
        assert fingerprint_value(fp, "iterations") == 3

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        out = str(tmp_path / "run")
        cfg.write_text("dataset = blobs\nalgorithm = gan_based\n"
                       "iterations = 3\nbatch_size = 8\neval_cadence = 2\n"
                       "n_per_class = 10\nn_seeds = 1\n")
        assert main(["run", "--config", str(cfg), "--iters", "2",
                     "--out", out]) == 0
        fp = open(os.path.join(out, "config.txt")).read()
        assert fingerprint_value(fp, "iterations") == 2

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("dataset = blobs\nlerning_rate = 0.1\n")
        assert main(["run", "--config", str(cfg)]) == 2
        assert "unknown key" in capsys.readouterr().err


class TestCompare:
    def test_two_runs_compared(self, tmp_path, capsys):
        a = str(tmp_path / "a")
        b = str(tmp_path / "b")
        assert run_blobs(a, algo="gan") == 0
        assert run_blobs(b, algo="source-only") == 0
        capsys.readouterr()
        assert main(["compare", "--a", a, "--b", b]) == 0
        text = capsys.readouterr().out
        assert "gan_based/none" in text and "source_only/none" in text
        assert "significant" in text

    def test_missing_directory_exits_2(self, tmp_path, capsys):
        assert main(["compare", "--a", str(tmp_path / "nope"),
                     "--b", str(tmp_path / "nada")]) == 2
        assert "error:" in capsys.readouterr().err


class TestDumpRecon:
    def test_blob_checkpoint_round_trip(self, tmp_path, capsys):
        run_dir = str(tmp_path / "run")
        out = str(tmp_path / "pgms")
        assert run_blobs(run_dir, algo="explicit", seeds=1) == 0
        capsys.readouterr()
        code = main(["dump-recon", "--run", run_dir, "--out", out,
                     "--count", "2", "--side", "1"])
        assert code == 0
        assert "wrote 6 PGM files" in capsys.readouterr().out
        files = sorted(os.listdir(out))
        assert files[0] == "sample000_flipped.pgm"
        assert load_pgm(os.path.join(out, files[0])).shape == (1, 1)

    def test_side_required_for_non_square_rows(self, tmp_path, capsys):
        run_dir = str(tmp_path / "run")
        assert run_blobs(run_dir, algo="explicit", seeds=1) == 0
        code = main(["dump-recon", "--run", run_dir,
                     "--out", str(tmp_path / "pgms")])
        assert code == 2
        assert "side" in capsys.readouterr().err

    def test_missing_checkpoint_exits_2(self, tmp_path, capsys):
        run_dir = str(tmp_path / "run")
        assert run_blobs(run_dir, algo="explicit", seeds=1) == 0
        code = main(["dump-recon", "--run", run_dir, "--seed", "9",
                     "--out", str(tmp_path / "pgms"), "--side", "1"])
        assert code == 2
        assert "no checkpoint" in capsys.readouterr().err


class TestVerifyGeometry:
    def test_small_sweep_passes(self, tmp_path, capsys):
        csv_path = str(tmp_path / "sweep.csv")
        code = main(["verify-geometry", "--instances", "3", "--thetas", "50",
                     "--out", csv_path])
        assert code == 0
        text = capsys.readouterr().out
        assert "verified 4 instances x 50 angles" in text
        assert "theta=pi/2" in text
        assert len(open(csv_path).readlines()) == 51
