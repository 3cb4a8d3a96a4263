"""Experiment runner: stage graph, idempotence, config handling."""

import pytest

from dmt.errors import ConfigError, ExperimentError
from dmt.experiment import ExperimentConfig, aggregate_report, run_experiment
from dmt.training import TrainConfig

class TestConfigParsing:
    def test_from_pairs_types(self):
        cfg = ExperimentConfig.from_pairs({
            "name": "x", "src_lang": "kn", "tgt_lang": "ml",
            "bpe_merges": "123", "joint_bpe": "True", "beam": "3",
            "length_penalty": "0.5", "train.epochs": "7", "model.d_model": "64",
        })
        assert cfg.bpe_merges == 123
        assert cfg.joint_bpe is True
        assert cfg.length_penalty == 0.5
        assert cfg.train_overrides == {"epochs": "7"}
        assert cfg.model_overrides == {"d_model": "64"}

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            ExperimentConfig.from_pairs({"nonsense": "1"})

    def test_file_with_comments(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\nname=foo\n\nsrc_lang=kn\n", encoding="utf-8")
        cfg = ExperimentConfig.from_file(p)
        assert cfg.name == "foo"

    def test_flag_overrides_win(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("name=foo\nseed=1\n", encoding="utf-8")
        cfg = ExperimentConfig.from_file(p, overrides={"seed": "9"})
        assert cfg.seed == 9

    def test_train_config_resolution(self):
        cfg = ExperimentConfig.from_pairs({
            "name": "x", "arch": "lstm", "train.epochs": "3",
        })
        tc = cfg.train_config()
        assert isinstance(tc, TrainConfig)
        assert tc.arch == "lstm"
        assert tc.epochs == 3             # override applied
        assert tc.learning_rate == 0.005  # from the lstm preset
        assert tc.max_tokens == 12000

    def test_bad_train_key(self):
        cfg = ExperimentConfig.from_pairs({"name": "x", "train.bogus": "1"})
        with pytest.raises(ConfigError, match="bogus"):
            cfg.train_config()

    def test_validation_missing_paths(self, tmp_path):
        cfg = ExperimentConfig.from_pairs({
            "name": "x", "src_lang": "kn", "tgt_lang": "ml",
            "train_src": str(tmp_path / "missing.kn"),
        })
        with pytest.raises(ConfigError, match="no such file|required"):
            cfg.validate()

    def test_snapshot_round_trip(self):
        cfg = ExperimentConfig.from_pairs({
            "name": "x", "src_lang": "kn", "tgt_lang": "ml",
            "train.epochs": "7", "model.d_model": "64", "beam": "2",
        })
        lines = dict(ln.split("=", 1) for ln in cfg.snapshot().splitlines())
        again = ExperimentConfig.from_pairs(lines)
        assert again == cfg


class TestRunExperiment:
    def test_artifacts_and_score(self, copy_experiment):
        run_dir = copy_experiment["run_dir"]
        for rel in ("config.txt", "log.txt", "best.dmt", "report.tsv",
                    "prep/train.src", "bpe/src.model", "vocab/tgt.vocab",
                    "bin/train.src.ids", "outputs/test.hyp",
                    "outputs/test.score.tsv", "results.tsv"):
            assert (run_dir / rel).exists(), rel
        results = (run_dir / "results.tsv").read_text().splitlines()
        assert results[0] == "system\tpair\tmean_sentence_bleu"
        system, pair, score = results[1].split("\t")
        assert (system, pair) == ("transformer", "kn-ml")
        assert float(score) > 0.5

    def test_stage_order_in_log(self, copy_experiment):
        log = (copy_experiment["run_dir"] / "log.txt").read_text()
        order = [stage for stage in ("prep", "bpe", "vocab", "binarize",
                                     "train", "decode", "score")
                 if f"stage {stage}: running" in log]
        assert order == ["prep", "bpe", "vocab", "binarize", "train",
                         "decode", "score"]

    def test_rerun_performs_no_stage_work(self, copy_experiment):
        run_dir = copy_experiment["run_dir"]
        best_mtime = (run_dir / "best.dmt").stat().st_mtime_ns
        results_mtime = (run_dir / "results.tsv").stat().st_mtime_ns
        run_experiment(copy_experiment["config"],
                       runs_dir=copy_experiment["runs_dir"])
        assert (run_dir / "best.dmt").stat().st_mtime_ns == best_mtime
        assert (run_dir / "results.tsv").stat().st_mtime_ns == results_mtime
        assert "nothing to do" in (run_dir / "log.txt").read_text()

    def test_lock_blocks_concurrent_run(self, copy_experiment):
        run_dir = copy_experiment["run_dir"]
        lock = run_dir / ".lock"
        lock.write_text("held\n")
        try:
            with pytest.raises(ExperimentError, match="locked"):
                run_experiment(copy_experiment["config"],
                               runs_dir=copy_experiment["runs_dir"])
        finally:
            lock.unlink()

    def test_config_change_rejected(self, copy_experiment):
        import dataclasses
        changed = dataclasses.replace(copy_experiment["config"], seed=999)
        with pytest.raises(ExperimentError, match="different configuration"):
            run_experiment(changed, runs_dir=copy_experiment["runs_dir"])

    def test_misaligned_sides_fail_at_prep(self, tmp_path):
        (tmp_path / "t.kn").write_text("a b c d\ne f g h\n", encoding="utf-8")
        (tmp_path / "t.ml").write_text("a b c d\n", encoding="utf-8")
        (tmp_path / "d.kn").write_text("a b c d\n", encoding="utf-8")
        (tmp_path / "d.ml").write_text("a b c d\n", encoding="utf-8")
        cfg = ExperimentConfig.from_pairs({
            "name": "skew", "src_lang": "kn", "tgt_lang": "ml",
            "train_src": str(tmp_path / "t.kn"), "train_tgt": str(tmp_path / "t.ml"),
            "dev_src": str(tmp_path / "d.kn"), "dev_tgt": str(tmp_path / "d.ml"),
        })
        with pytest.raises(ExperimentError, match="misaligned"):
            run_experiment(cfg, runs_dir=tmp_path / "runs")

    def test_validation_before_any_stage(self, tmp_path):
        cfg = ExperimentConfig.from_pairs({
            "name": "ghost", "src_lang": "kn", "tgt_lang": "ml",
            "train_src": str(tmp_path / "nope.kn"),
            "train_tgt": str(tmp_path / "nope.ml"),
            "dev_src": str(tmp_path / "nope.kn"),
            "dev_tgt": str(tmp_path / "nope.ml"),
        })
        with pytest.raises(ConfigError):
            run_experiment(cfg, runs_dir=tmp_path / "runs")
        assert not (tmp_path / "runs" / "ghost").exists()


class TestScoringSurface:
    def run_score_stage(self, tmp_path, detranslit_score):
        from dmt.experiment import _Runner
        run_dir = tmp_path / "run"
        (run_dir / "outputs").mkdir(parents=True)
        (run_dir / "outputs" / "test.hyp").write_text(
            "ಕ ಖ ಗ ಕ\n", encoding="utf-8")  # Kannada
        ref = tmp_path / "ref.ml"
        ref.write_text("ಕ ಖ ಗ ಕ\n", encoding="utf-8")
        cfg = ExperimentConfig.from_pairs({
            "name": "surf", "src_lang": "kn", "tgt_lang": "tu",
            "test_tgt": str(ref),
            "detranslit_score": str(detranslit_score),
        })
        runner = _Runner(cfg, run_dir)
        runner.do_score()
        return run_dir

    def test_native_surface_recorded(self, tmp_path):
        run_dir = self.run_score_stage(tmp_path, True)
        meta = (run_dir / "outputs" / "score.meta").read_text()
        assert "surface=native-script" in meta
        assert "1.0000" in (run_dir / "results.tsv").read_text()

    def test_devanagari_surface(self, tmp_path):
        run_dir = self.run_score_stage(tmp_path, False)
        meta = (run_dir / "outputs" / "score.meta").read_text()
        assert "surface=devanagari" in meta
        pooled = (run_dir / "outputs" / "test.hyp.dev").read_text()
        assert "क" in pooled  # Kannada KA mapped into Devanagari
        assert "1.0000" in (run_dir / "results.tsv").read_text()


class TestAggregateReport:
    def fabricate(self, root, name, system, pair, score):
        d = root / name
        d.mkdir(parents=True)
        (d / "results.tsv").write_text(
            f"system\tpair\tmean_sentence_bleu\n{system}\t{pair}\t{score}\n")

    def test_matrix_tsv(self, tmp_path):
        self.fabricate(tmp_path, "r1", "lstm", "kn-ml", "0.3531")
        self.fabricate(tmp_path, "r2", "lstm", "kn-ta", "0.3537")
        self.fabricate(tmp_path, "r3", "transformer", "kn-ml", "0.3431")
        out = aggregate_report(runs_dir=tmp_path).splitlines()
        assert out[0] == "system\tkn-ml\tkn-ta"
        assert out[1] == "lstm\t0.3531\t0.3537"
        assert out[2] == "transformer\t0.3431\t-"

    def test_matrix_markdown(self, tmp_path):
        self.fabricate(tmp_path, "r1", "conv", "kn-te", "0.0701")
        out = aggregate_report(runs_dir=tmp_path, fmt="markdown")
        assert "| conv | 0.0701 |" in out
