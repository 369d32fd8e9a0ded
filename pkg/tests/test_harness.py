import math
import os

import numpy as np
import pytest

from direplab.datasets import synthetic_blobs
from direplab.harness import (CSV_HEADER, ComparisonReport, RunResult,
                              append_result, build_pair, compare,
                              compare_result_dirs, config_from_values,
                              dump_reconstructions, fingerprint_value,
                              load_metrics_csv, load_pgm, parse_config_file,
                              run_experiment, run_fingerprint,
                              summary_accuracies, write_metrics_csv, z_score)
from direplab.losses import LossWeights
from direplab.networks import blob_arch, build_models
from direplab.trainers import StepReport, TrainConfig, train


def tiny_pair(seed=1):
    return synthetic_blobs(n_per_class=25, cheat_scenario="none", seed=seed)


def tiny_config(**kw):
    args = dict(algorithm="gan_based", iterations=6, batch_size=8, seed=3,
                eval_cadence=3)
    args.update(kw)
    return TrainConfig(**args)


class TestZScore:
    def test_worked_example(self):
        a = [0.66, 0.68, 0.67, 0.66, 0.68]
        b = [0.60, 0.62, 0.61, 0.63, 0.59]
        assert z_score(a, b) == pytest.approx(7.171371656, rel=1e-8)

    def test_identical_lists_zero(self):
        assert z_score([0.5, 0.6, 0.7], [0.5, 0.6, 0.7]) == 0.0
        assert z_score([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_exact_separation_sentinel(self):
        z = z_score([0.70, 0.70], [0.60, 0.60])
        assert math.isinf(z) and z > 0
        z = z_score([0.60, 0.60], [0.70, 0.70])
        assert math.isinf(z) and z < 0

    def test_one_sided_zero_variance_is_finite(self):
        z = z_score([0.70, 0.70], [0.60, 0.62])
        assert math.isfinite(z) and z > 0

    def test_antisymmetric(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.random(5).tolist()
            b = rng.random(4).tolist()
            assert z_score(a, b) == pytest.approx(-z_score(b, a), rel=1e-12)

    def test_shift_invariant(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = rng.random(5)
            b = rng.random(5)
            c = rng.uniform(-3, 3)
            assert z_score(a + c, b + c) == pytest.approx(z_score(a, b),
                                                          rel=1e-6)

    def test_needs_two_per_side(self):
        with pytest.raises(ValueError):
            z_score([0.5], [0.6, 0.7])
        with pytest.raises(ValueError):
            z_score([0.5, 0.6], [0.7])

    def test_compare_report(self):
        report = compare("va", [0.66, 0.68, 0.67, 0.66, 0.68],
                         "gan", [0.60, 0.62, 0.61, 0.63, 0.59])
        assert report.mean_a == pytest.approx(0.67)
        assert report.mean_b == pytest.approx(0.61)
        assert report.significant and not report.exact
        assert "z=7.17" in report.summary()
        exact = compare("a", [0.7, 0.7], "b", [0.6, 0.6])
        assert exact.exact and exact.significant
        assert "exact" in exact.summary()


def fake_result(seed=0, n_reports=3, fingerprint=None):
    if fingerprint is None:
        fingerprint = run_fingerprint(tiny_config(eval_cadence=2, iterations=6),
                                      tiny_pair())
    history = [StepReport(iteration=2 * i + 1, lam=0.1 * i, loss_c=1.0 / (i + 1),
                          loss_d=0.693, loss_g=0.693,
                          loss_r=None, loss_kl=None)
               for i in range(n_reports)]
    return RunResult(fingerprint=fingerprint, seed=seed, source_acc=0.912345678,
                     target_acc=0.76543210987, history=history,
                     wall_seconds=1.5)


class TestMetricsCsv:
    def test_empty_results_header_only(self, tmp_path):
        path = str(tmp_path / "m.csv")
        write_metrics_csv([], path)
        assert open(path).read() == ",".join(CSV_HEADER) + "\n"

    def test_round_trip_six_significant_digits(self, tmp_path):
        path = str(tmp_path / "m.csv")
        result = fake_result()
        write_metrics_csv([result], path)
        rows = load_metrics_csv(path)
        assert len(rows) == 4  # 3 reports + summary
        for row, rep in zip(rows, result.history):
            assert row["iteration"] == rep.iteration
            assert row["loss_c"] == pytest.approx(rep.loss_c, rel=1e-5)
            assert row["loss_r"] is None
            assert row["source_acc"] is None
            assert row["algo"] == "gan_based"
            assert row["cheating_mode"] == "none"
            assert row["bias"] is None
        summary = rows[-1]
        assert summary["source_acc"] == pytest.approx(0.912345678, rel=1e-5)
        assert summary["target_acc"] == pytest.approx(0.76543210987, rel=1e-5)
        assert summary["iteration"] == 6

    def test_row_count_contract(self, tmp_path):
        # a 10000-iteration run at cadence 100 persists as 101 rows
        result = fake_result(n_reports=100)
        path = str(tmp_path / "m.csv")
        write_metrics_csv([result], path)
        assert len(load_metrics_csv(path)) == 101

    def test_append_and_summary_extraction(self, tmp_path):
        path = str(tmp_path / "m.csv")
        append_result(path, fake_result(seed=0))
        append_result(path, fake_result(seed=1))
        rows = load_metrics_csv(path)
        accs = summary_accuracies(rows)
        assert set(accs) == {0, 1}
        assert accs[0][1] == pytest.approx(0.765432, rel=1e-5)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError, match="header"):
            load_metrics_csv(str(path))


class TestFingerprint:
    def test_round_trip_values(self):
        cfg = tiny_config(ablation="none")
        pair = tiny_pair()
        fp = run_fingerprint(cfg, pair)
        assert fingerprint_value(fp, "algorithm") == "gan_based"
        assert fingerprint_value(fp, "iterations") == 6
        assert fingerprint_value(fp, "beta") == 1.0
        assert fingerprint_value(fp, "bias") is None
        assert fingerprint_value(fp, "dataset") == "blobs"
        with pytest.raises(KeyError):
            fingerprint_value(fp, "nonsense")

    def test_stable_and_sensitive(self):
        pair = tiny_pair()
        assert run_fingerprint(tiny_config(), pair) == run_fingerprint(
            tiny_config(), pair)
        assert run_fingerprint(tiny_config(), pair) != run_fingerprint(
            tiny_config(iterations=7), pair)


class TestRunExperiment:
    def test_single_seed_reproduces_train(self):
        pair = tiny_pair()
        cfg = tiny_config()
        results = run_experiment(cfg, pair, n_seeds=1)
        _, reports = train(cfg, pair)
        assert len(results) == 1
        assert [r.loss_c for r in results[0].history] == [r.loss_c
                                                          for r in reports]
        assert results[0].seed == cfg.seed
        assert results[0].wall_seconds > 0

    def test_seed_range_and_invariants(self):
        results = run_experiment(tiny_config(), tiny_pair(), n_seeds=3)
        assert [r.seed for r in results] == [3, 4, 5]
        for r in results:
            assert 0.0 <= r.target_acc <= 1.0
            assert len(r.history) == 2  # 6 iterations at cadence 3

    def test_invalid_config_rejected_exhaustively(self, tmp_path):
        out = str(tmp_path / "results")
        cfg = tiny_config(algorithm="adda", batch_size=0)
        with pytest.raises(ValueError) as err:
            run_experiment(cfg, tiny_pair(), n_seeds=1, out_dir=out)
        assert "algorithm" in str(err.value) and "batch_size" in str(err.value)
        assert not os.path.exists(out)

    def test_persistence_layout(self, tmp_path):
        out = str(tmp_path / "run")
        cfg = tiny_config()
        pair = tiny_pair()
        results = run_experiment(cfg, pair, n_seeds=2, out_dir=out)
        assert os.path.exists(os.path.join(out, "config.txt"))
        assert os.path.exists(os.path.join(out, "seed3.ckpt"))
        assert os.path.exists(os.path.join(out, "seed4.ckpt"))
        rows = load_metrics_csv(os.path.join(out, "results.csv"))
        accs = summary_accuracies(rows)
        assert accs[3] == (pytest.approx(results[0].source_acc, rel=1e-5),
                           pytest.approx(results[0].target_acc, rel=1e-5))
        recorded = open(os.path.join(out, "config.txt")).read().strip()
        assert recorded == run_fingerprint(cfg, pair)

    def test_resume_skips_completed_seeds(self, tmp_path):
        out = str(tmp_path / "run")
        cfg = tiny_config()
        pair = tiny_pair()
        first = run_experiment(cfg, pair, n_seeds=1, out_dir=out)
        n_rows = len(load_metrics_csv(os.path.join(out, "results.csv")))
        both = run_experiment(cfg, pair, n_seeds=2, out_dir=out)
        rows = load_metrics_csv(os.path.join(out, "results.csv"))
        assert len(rows) == 2 * n_rows  # one more run appended, none repeated
        assert both[0].wall_seconds is None  # rebuilt from disk, not re-run
        assert both[1].wall_seconds > 0
        assert both[0].target_acc == pytest.approx(first[0].target_acc,
                                                   rel=1e-5)
        assert [r.iteration for r in both[0].history] == [
            r.iteration for r in first[0].history]

    def test_config_mismatch_detected(self, tmp_path):
        out = str(tmp_path / "run")
        pair = tiny_pair()
        run_experiment(tiny_config(), pair, n_seeds=1, out_dir=out)
        with pytest.raises(ValueError, match="different configuration"):
            run_experiment(tiny_config(iterations=9), pair, n_seeds=1,
                           out_dir=out)

    def test_parallel_jobs_match_serial(self, tmp_path):
        pair = tiny_pair()
        cfg = tiny_config()
        serial = run_experiment(cfg, pair, n_seeds=2, jobs=1)
        parallel = run_experiment(cfg, pair, n_seeds=2, jobs=2,
                                  out_dir=str(tmp_path / "par"))
        for a, b in zip(serial, parallel):
            assert a.seed == b.seed
            assert a.target_acc == b.target_acc
            assert a.source_acc == b.source_acc
            assert [r.loss_c for r in a.history] == [r.loss_c
                                                     for r in b.history]


class TestCompareDirs:
    def test_report_from_persisted_runs(self, tmp_path):
        pair = tiny_pair()
        dir_a = str(tmp_path / "a")
        dir_b = str(tmp_path / "b")
        res_a = run_experiment(tiny_config(), pair, n_seeds=2, out_dir=dir_a)
        res_b = run_experiment(tiny_config(algorithm="source_only"), pair,
                               n_seeds=2, out_dir=dir_b)
        report = compare_result_dirs(dir_a, dir_b)
        assert report.label_a == "gan_based/none"
        assert report.label_b == "source_only/none"
        assert report.accs_a == [r.target_acc for r in res_a]
        assert report.accs_b == [r.target_acc for r in res_b]
        # the persisted files alone determine the statistic
        want = z_score(report.accs_a, report.accs_b)
        assert report.z == want or (math.isnan(want) and math.isnan(report.z))

    def test_needs_two_seeds(self, tmp_path):
        d = str(tmp_path / "a")
        run_experiment(tiny_config(), tiny_pair(), n_seeds=1, out_dir=d)
        with pytest.raises(ValueError, match="at least 2"):
            compare_result_dirs(d, d)


class TestReconstructionDump:
    def test_pgm_contract(self, tmp_path):
        models = build_models(blob_arch(input_width=4), 5,
                              algorithm="explicit_ddrep")
        x = np.array([[-0.5, 0.0, 0.4, 1.5]], dtype=np.float32)
        paths = dump_reconstructions(models, x, str(tmp_path), d=0.0, side=2)
        assert len(paths) == 3
        names = {os.path.basename(p) for p in paths}
        assert names == {"sample000_original.pgm", "sample000_recon.pgm",
                         "sample000_flipped.pgm"}
        raw = open(paths[0], "rb").read()
        assert raw.startswith(b"P5\n2 2\n255\n")
        original = load_pgm(paths[0])
        assert original.tolist() == [[0, 0], [102, 255]]  # clamped then scaled

    def test_bitless_decoder_skips_the_flipped_probe(self, tmp_path):
        models = build_models(blob_arch(input_width=4), 8, algorithm="vaegan")
        x = np.zeros((2, 4), dtype=np.float32)
        paths = dump_reconstructions(models, x, str(tmp_path), d=1.0, side=2)
        names = {os.path.basename(p) for p in paths}
        assert names == {"sample000_original.pgm", "sample000_recon.pgm",
                         "sample001_original.pgm", "sample001_recon.pgm"}

    def test_square_width_inferred(self, tmp_path):
        models = build_models(blob_arch(input_width=9), 6,
                              algorithm="explicit_ddrep")
        x = np.zeros((2, 9), dtype=np.float32)
        paths = dump_reconstructions(models, x, str(tmp_path))
        assert len(paths) == 6
        assert np.all(load_pgm(paths[0]) == 0)  # zero image stays zero

    def test_non_square_width_rejected(self, tmp_path):
        models = build_models(blob_arch(input_width=5), 7,
                              algorithm="explicit_ddrep")
        with pytest.raises(ValueError, match="square"):
            dump_reconstructions(models, np.zeros((1, 5)), str(tmp_path))
        with pytest.raises(ValueError, match="narrower"):
            dump_reconstructions(models, np.zeros((1, 5)), str(tmp_path),
                                 side=3)


class TestConfigFiles:
    def test_parse_and_build(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(
            "# comparison sweep\n"
            "algorithm = vaegan\n"
            "iterations = 40   # short\n"
            "batch_size = 16\n"
            "gamma = 0.5\n"
            "alpha_g = 0.001\n"
            "\n"
            "dataset = blobs\n"
            "n_seeds = 2\n")
        values = parse_config_file(str(path))
        config, extras = config_from_values(values)
        assert config.algorithm == "vaegan"
        assert config.iterations == 40
        assert config.weights.gamma == 0.5
        assert config.weights.alpha_g == 0.001
        assert config.weights.beta == 1.0  # untouched default
        assert extras == {"n_seeds": 2, "dataset": "blobs"}

    def test_unknown_key_is_hard_error(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("algorithm = vaegan\nlearning_rate = 0.1\n")
        with pytest.raises(ValueError, match="unknown key 'learning_rate'"):
            parse_config_file(str(path))

    def test_bad_value_and_missing_equals(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("iterations = soon\n")
        with pytest.raises(ValueError, match="bad iterations"):
            parse_config_file(str(path))
        path.write_text("iterations\n")
        with pytest.raises(ValueError, match="key = value"):
            parse_config_file(str(path))

    def test_line_numbers_in_errors(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("algorithm = vaegan\n\n# hm\nwat = 1\n")
        with pytest.raises(ValueError, match=":4:"):
            parse_config_file(str(path))


class TestBuildPair:
    def test_blobs_dispatch(self):
        pair = build_pair("blobs", cheating="shift", seed=4, n_per_class=10)
        assert pair.name == "blobs"
        assert pair.cheating_mode == "shift"
        assert len(pair.source_train) == 20

    def test_unknown_dataset(self):
        with pytest.raises(ValueError, match="dataset"):
            build_pair("svhn")

    def test_fm_needs_data(self, tmp_path, monkeypatch):
        monkeypatch.delenv("DIREP_DATA_DIR", raising=False)
        with pytest.raises(FileNotFoundError):
            build_pair("fm", cheating="none", seed=0, data_dir=str(tmp_path))


class TestRunResultValidation:
    def test_accuracy_range_enforced(self):
        with pytest.raises(ValueError):
            RunResult(fingerprint="", seed=0, source_acc=1.2, target_acc=0.5,
                      history=[])
        with pytest.raises(ValueError):
            RunResult(fingerprint="", seed=0, source_acc=0.5, target_acc=-0.1,
                      history=[])
