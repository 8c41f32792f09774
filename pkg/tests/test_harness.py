"""IDX parsing, generators, config, metrics files, and the CLI surface."""

import json
import os
import struct

import numpy as np
import pytest

from symgrad import cli
from symgrad.checks import _scalar_closure
from symgrad.config import ConfigError, load_config, parse_config
from symgrad.datasets import (
    IdxBadMagic,
    IdxCountMismatch,
    IdxFormatError,
    IdxTruncated,
    all_edges,
    gen_hwf_dataset,
    gen_path_dataset,
    gen_sum_samples,
    gen_synthetic_digits,
    parse_idx,
    parse_idx_images,
    parse_idx_labels,
    reachable,
    write_idx_images,
    write_idx_labels,
)
from symgrad.metrics import MetricsRecord, emit_metrics, read_metrics
from symgrad.programs import reference_formula_eval


class TestIdx:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(2, 4, 3), dtype=np.uint8)
        labels = [7, 1]
        ipath, lpath = tmp_path / "img.idx", tmp_path / "lab.idx"
        write_idx_images(ipath, images)
        write_idx_labels(lpath, labels)
        got_images, got_labels = parse_idx(ipath, lpath)
        np.testing.assert_array_equal(
            got_images, images.reshape(2, 12).astype(np.float64) / 255.0
        )
        assert got_labels == labels

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(struct.pack(">IIII", 1234, 1, 2, 2) + b"\x00" * 4)
        with pytest.raises(IdxBadMagic, match="bad magic"):
            parse_idx_images(path)

    def test_label_magic_checked(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(struct.pack(">II", 2051, 1) + b"\x00")
        with pytest.raises(IdxBadMagic):
            parse_idx_labels(path)

    def test_truncated_pixels_rejected(self, tmp_path):
        path = tmp_path / "cut.idx"
        path.write_bytes(struct.pack(">IIII", 2051, 2, 2, 2) + b"\x00" * 5)
        with pytest.raises(IdxTruncated):
            parse_idx_images(path)

    def test_count_mismatch_rejected(self, tmp_path, rng):
        ipath, lpath = tmp_path / "img.idx", tmp_path / "lab.idx"
        write_idx_images(ipath, rng.integers(0, 255, (3, 2, 2), dtype=np.uint8))
        write_idx_labels(lpath, [1, 2])
        with pytest.raises(IdxCountMismatch):
            parse_idx(ipath, lpath)

    def test_fuzzed_truncations_always_structured_errors(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(3, 5, 5), dtype=np.uint8)
        full = tmp_path / "full.idx"
        write_idx_images(full, images)
        blob = full.read_bytes()
        for cut in range(0, len(blob), 7):
            part = tmp_path / "part.idx"
            part.write_bytes(blob[:cut])
            with pytest.raises(IdxFormatError):
                parse_idx_images(part)


class TestGenerators:
    def test_synthetic_digits_deterministic(self):
        a = gen_synthetic_digits(5, 20, seed=3, dim=30)
        b = gen_synthetic_digits(5, 20, seed=3, dim=30)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_synthetic_digits_class_counts(self):
        _, labels = gen_synthetic_digits(7, 11, seed=0, dim=10)
        assert all((labels == c).sum() == 11 for c in range(7))

    def test_separation_limit_nearest_mean_is_perfect(self):
        from symgrad.datasets import class_means

        feats, labels = gen_synthetic_digits(4, 50, separation=200.0, seed=1, dim=20)
        means = class_means(4, 20, 200.0, 1)
        pred = np.argmin(
            ((feats[:, None, :] - means[None]) ** 2).sum(axis=2), axis=1
        )
        assert (pred == labels).mean() == 1.0

    def test_linear_probe_reaches_95_percent(self):
        # Nearest-class-mean is the Bayes-optimal linear rule for these
        # isotropic clusters; centroids are fit on the train half.
        feats, labels = gen_synthetic_digits(10, 120, seed=0, dim=784)
        half = feats.shape[0] // 2
        Xtr, ytr = feats[:half], labels[:half]
        Xte, yte = feats[half:], labels[half:]
        means = np.stack([Xtr[ytr == c].mean(axis=0) for c in range(10)])
        pred = np.argmin(((Xte[:, None, :] - means[None]) ** 2).sum(axis=2), axis=1)
        assert (pred == yte).mean() >= 0.95

    def test_separation_must_be_positive(self):
        with pytest.raises(ValueError):
            gen_synthetic_digits(3, 5, separation=0.0)

    def test_sum_samples_share_means_across_seeds(self):
        a = gen_sum_samples(2, 5, seed=0, dim=12, means_seed=42)
        b = gen_sum_samples(2, 5, seed=1, dim=12, means_seed=42)
        assert not np.array_equal(a[0][0], b[0][0])  # draws differ

    def test_hwf_dataset_self_consistent(self):
        samples = gen_hwf_dataset(5, 1000, seed=0, dim=8)
        assert len(samples) == 1000
        for feats, tokens, value in samples:
            assert reference_formula_eval(tokens) == value

    def test_hwf_even_length_rejected(self):
        with pytest.raises(ValueError):
            gen_hwf_dataset(4, 10)

    def test_hwf_single_token(self):
        samples = gen_hwf_dataset(1, 50, seed=0, dim=4)
        for _, tokens, value in samples:
            assert value == int(tokens[0])

    def test_path_edge_prob_extremes(self):
        none = gen_path_dataset(5, 0.0, 30, seed=0, dim=4)
        assert all(not s[2] for s in none)
        full = gen_path_dataset(5, 1.0, 30, seed=0, dim=4)
        assert all(s[2] for s in full)

    def test_path_labels_match_second_oracle(self):
        samples = gen_path_dataset(6, 0.25, 100, seed=1, dim=4)
        for feats, (u, v), label, edges in samples:
            # independent recomputation: scalar closure over certain edges
            closure = _scalar_closure({e: 1.0 for e in edges}) if edges else {}
            assert label == ((u, v) in closure)

    def test_path_node_guard(self):
        with pytest.raises(ValueError):
            gen_path_dataset(65, 0.1, 1)

    def test_reachable_matches_edge_list(self):
        pairs = reachable(4, [(0, 1), (1, 2)])
        assert pairs == {(0, 1), (1, 2), (0, 2)}
        assert len(all_edges(4)) == 12


class TestConfig:
    def test_defaults_per_task(self):
        cfg = parse_config("task = hwf")
        assert cfg.lr == 1e-4 and cfg.k == 3 and cfg.dim == 64
        cfg = parse_config("task = sum")
        assert cfg.lr == 1e-3 and cfg.k == 1 and cfg.batch_size == 64

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("task = sum\ntrain.lrate = 0.1")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("task = sum\ntask = hwf")

    def test_bad_value_type_rejected(self):
        with pytest.raises(ConfigError, match="bad value"):
            parse_config("task = sum\ntrain.batch_size = many")

    def test_missing_task_rejected(self):
        with pytest.raises(ConfigError, match="task"):
            parse_config("seed = 3")

    def test_unknown_task_and_provenance_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("task = chess")
        with pytest.raises(ConfigError):
            parse_config("task = sum\nprovenance = exact")

    def test_even_hwf_length_rejected(self):
        with pytest.raises(ConfigError, match="odd"):
            parse_config("task = hwf\nhwf.length = 4")

    def test_mnist_requires_existing_paths(self, tmp_path):
        text = "task = sum\ndata.source = mnist\n"
        with pytest.raises(ConfigError, match="requires"):
            parse_config(text)
        text += "data.mnist_train_images = missing.idx\n"
        text += "data.mnist_train_labels = missing.idx\n"
        text += "data.mnist_test_images = missing.idx\n"
        text += "data.mnist_test_labels = missing.idx\n"
        with pytest.raises(ConfigError, match="does not exist"):
            parse_config(text, base_dir=str(tmp_path))

    def test_comments_and_blank_lines_ignored(self):
        cfg = parse_config("# a comment\n\ntask = sum\n")
        assert cfg.task == "sum"

    def test_load_config_roundtrip(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("task = toy\nseed = 9\n")
        assert load_config(str(path)).seed == 9


class TestMetrics:
    def records(self):
        return [
            MetricsRecord(0, 2.5, 0.1, 1.25, "damp", 0, 7),
            MetricsRecord(1, 1.0, 0.8, 1.5, "damp", 0, 7),
        ]

    def test_round_trip(self, tmp_path):
        csv_path, _ = emit_metrics(self.records(), tmp_path)
        assert read_metrics(csv_path) == self.records()

    def test_empty_records_give_header_only(self, tmp_path):
        csv_path, summary_path = emit_metrics([], tmp_path)
        lines = open(csv_path).read().splitlines()
        assert lines == ["epoch,loss,accuracy,epoch_seconds,provenance,k,seed"]
        summary = json.load(open(summary_path))
        assert summary["best_accuracy"] == 0.0

    def test_idempotent_overwrite(self, tmp_path):
        emit_metrics(self.records(), tmp_path)
        first = open(tmp_path / "metrics.csv").read()
        emit_metrics(self.records(), tmp_path)
        assert open(tmp_path / "metrics.csv").read() == first

    def test_noncontiguous_epochs_rejected(self, tmp_path):
        bad = [MetricsRecord(1, 1.0, 0.5, 1.0, "damp", 0, 0)]
        with pytest.raises(ValueError, match="contiguous"):
            emit_metrics(bad, tmp_path)

    def test_accepts_train_dicts(self, tmp_path):
        rows = [dict(epoch=0, loss=1.0, accuracy=0.5, epoch_seconds=0.1,
                     provenance="dtkp", k=3, seed=1)]
        csv_path, _ = emit_metrics(rows, tmp_path)
        assert read_metrics(csv_path)[0].provenance == "dtkp"

    def test_full_precision_round_trip(self, tmp_path):
        rec = [MetricsRecord(0, 1 / 3, 2 / 3, 0.1234567890123456789, "damp", 0, 0)]
        csv_path, _ = emit_metrics(rec, tmp_path)
        got = read_metrics(csv_path)[0]
        assert got.loss == rec[0].loss and got.epoch_seconds == rec[0].epoch_seconds


SMOKE_CFG = """
task = sum
provenance = damp
sum.n = 2
train.epochs = 1
data.train_count = 200
data.test_count = 60
output_dir = {out}
"""


class TestCli:
    def write_cfg(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(SMOKE_CFG.format(out=tmp_path / "out"))
        return str(path)

    def test_run_emits_metrics(self, tmp_path, capsys):
        code = cli.main(["run", self.write_cfg(tmp_path)])
        assert code == 0
        rows = read_metrics(tmp_path / "out" / "metrics.csv")
        assert len(rows) == 1
        assert "metrics written" in capsys.readouterr().out

    def test_seed_and_output_dir_overrides(self, tmp_path):
        other = tmp_path / "elsewhere"
        code = cli.main(
            ["run", self.write_cfg(tmp_path), "--seed", "5",
             "--output-dir", str(other)]
        )
        assert code == 0
        assert read_metrics(other / "metrics.csv")[0].seed == 5

    def test_unknown_subcommand_exits_2(self, capsys):
        assert cli.main(["frobnicate"]) == 2

    def test_bad_config_exits_2(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("task = sum\nnot_a_key = 1\n")
        assert cli.main(["run", str(path)]) == 2

    def test_oracle_passes(self, tmp_path, capsys):
        assert cli.main(["oracle", self.write_cfg(tmp_path)]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_compare_provenances_grid_shape(self, tmp_path, capsys):
        cfg = tmp_path / "toy.cfg"
        out = tmp_path / "cells"
        cfg.write_text(
            "task = toy\ntoy.classes = 4\ntrain.epochs = 1\n"
            f"data.train_count = 120\ndata.test_count = 40\noutput_dir = {out}\n"
        )
        assert cli.main(["compare-provenances", str(cfg), "--ks", "1,3"]) == 0
        lines = open(out / "provenances.csv").read().splitlines()
        assert lines[0] == "provenance,k,mean_best_accuracy,total_seconds"
        assert len(lines) == 4  # damp + dtkp k in {1,3}


REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


class TestBundledConfigs:
    def test_gradcheck_exits_zero_on_bundled_config(self, tmp_path, capsys):
        cfg = os.path.join(REPO_ROOT, "configs", "sum2.cfg")
        assert cli.main(["gradcheck", cfg, "--output-dir", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "all" in out and "passed" in out

    def test_every_bundled_config_parses(self):
        import glob

        paths = glob.glob(os.path.join(REPO_ROOT, "configs", "*.cfg"))
        assert len(paths) >= 5
        for path in paths:
            load_config(path)

    def test_bench_reports_speedup(self, tmp_path, capsys):
        cfg = tmp_path / "bench.cfg"
        cfg.write_text(
            "task = sum\nsum.n = 3\ntrain.batch_size = 64\n"
            "data.train_count = 256\ndata.test_count = 64\n"
            f"output_dir = {tmp_path / 'out'}\n"
        )
        assert cli.main(["bench", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "speedup" in out
        report = json.load(open(tmp_path / "out" / "bench.json"))
        assert report["batched_vs_sequential"]["speedup"] > 1.0
        assert all(c["match"] for c in report["product_symbol_counts"])

    def test_bench_assert_speedup_can_fail(self, tmp_path):
        cfg = tmp_path / "bench.cfg"
        cfg.write_text(
            "task = sum\nsum.n = 2\ntrain.batch_size = 8\n"
            "data.train_count = 64\ndata.test_count = 16\n"
            f"output_dir = {tmp_path / 'out'}\n"
        )
        # an impossible bar trips the check-failure exit code
        assert cli.main(["bench", str(cfg), "--assert-speedup", "1e9"]) == 3
