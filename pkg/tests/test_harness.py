"""Experiment harness, reports, benchmarking, artifacts and the command line."""

import json

import numpy as np
import pytest

from engine.AppCli import EXIT_DATA, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, cli
from engine.core.ArtifactManager import ArtifactManager, load_config_file
from engine.core.commons import CONFIG_PATH, ConfigError, ContractError, DataError, FormatError, SID_TASK
from embeddingCorpus import SyntheticConfig, generate_synthetic, read_corpus, split_indices
from harness import (
    Arm,
    ArmConfig,
    ExperimentConfig,
    ExperimentReport,
    LaplaceArm,
    TransformerArm,
    bench,
    epsilon_sweep,
    read_report,
    render_report,
    run_experiment,
)
from harness.bench import Efficiency
from laplaceBaseline import LaplaceConfig
from probes import ProbeConfig, compute_metrics, run_task

TINY_PROBE = {"hidden": [16], "epochs": 3, "patience": 2, "batch": 16, "seed": 0}
TINY_SYNTHETIC = {"n_speakers": 4, "n_contents": 10, "L": 3, "d": 6, "p": 2, "q": 2, "seed": 5}


def _experiment(**overrides):
    payload = {
        "name": "tiny",
        "synthetic": TINY_SYNTHETIC,
        "tasks": ["sid", "content_group"],
        "arms": [{"name": "original"}, {"name": "laplace", "kind": "laplace", "epsilon": 5.0, "seed": 2}],
        "probe": TINY_PROBE,
    }
    payload.update(overrides)
    return ExperimentConfig.from_json(payload)


def _report():
    m = compute_metrics([0, 0, 1, 1], [0, 1, 1, 1])
    return ExperimentReport(
        name="fixture", arms=["original", "laplace"], tasks=[SID_TASK, "content_group"],
        metrics={"original": {SID_TASK: m, "content_group": m}, "laplace": {SID_TASK: m, "content_group": None}},
        efficiency={"original": Efficiency(0.001, 1 << 20)},
        extraction=Efficiency(0.5, 2 << 20),
        errors={"laplace": "DataError: boom"},
        provenance={"config_hash": "abc"},
    )


class TestReport:

    def test_json_round_trip(self):
        report = _report()
        assert ExperimentReport.from_json(json.loads(render_report(report, "json"))) == report

    def test_markdown_grid(self):
        md = render_report(_report(), "markdown")
        header = next(line for line in md.splitlines() if line.startswith("| Method"))
        assert "SID Acc. ↓" in header and "content_group F1" in header
        assert "| original | 75.00 | 75.00 | 73.33 |" in md
        assert "| laplace | 75.00 | error | error |" in md
        assert "| extraction | 0.500 | 2.0 |" in md
        assert "- laplace: DataError: boom" in md

    def test_csv_has_one_row_per_arm_task_metric(self):
        rows = render_report(_report(), "csv").strip().splitlines()
        assert rows[0] == "arm,task,metric,value"
        assert len(rows) - 1 == 2 * 2 * 2
        assert rows[-1] == "laplace,content_group,f1,"

    def test_unknown_format(self):
        with pytest.raises(ConfigError):
            render_report(_report(), "html")

    def test_malformed_payload(self, tmp_path):
        path = tmp_path / "report.json"
        path.write_text(json.dumps({"name": "x"}))
        with pytest.raises(DataError):
            read_report(path)


class TestArms:

    def test_identity_arm_returns_the_corpus(self, small_corpus):
        assert Arm("original").anonymize(small_corpus) is small_corpus

    def test_transformer_arm_needs_one_source(self):
        with pytest.raises(ConfigError):
            ArmConfig("pt", kind="privacy_transformer")
        with pytest.raises(ConfigError):
            ArmConfig("x", kind="rot13")

    def test_laplace_arm_is_seeded(self, small_corpus):
        arm = LaplaceArm("laplace", LaplaceConfig(epsilon=3.0))
        np.testing.assert_array_equal(arm.anonymize(small_corpus, 4).matrices(), arm.anonymize(small_corpus, 4).matrices())
        assert not np.array_equal(arm.anonymize(small_corpus, 4).matrices(), arm.anonymize(small_corpus, 5).matrices())


class TestExperiment:

    def test_sid_task_is_always_present(self):
        cfg = _experiment(tasks=["content_group"])
        assert [t.name for t in cfg.tasks] == [SID_TASK, "content_group"]

    @pytest.mark.parametrize("overrides", [
        {"corpus": "x.pemb"},
        {"arms": []},
        {"arms": [{"name": "a"}, {"name": "a"}]},
        {"max_workers": 0},
        {"unexpected": 1},
    ])
    def test_invalid_configs(self, overrides):
        with pytest.raises(ConfigError):
            _experiment(**overrides)

    def test_arm_cells_equal_standalone_runs(self):
        cfg = _experiment()
        report = run_experiment(cfg)
        corpus = generate_synthetic(SyntheticConfig(**TINY_SYNTHETIC))
        parts = split_indices(corpus, cfg.split_ratios, unit="stratified", seed=cfg.split_seed)
        noised = LaplaceArm("laplace", LaplaceConfig(epsilon=5.0, seed=2)).anonymize(corpus, 2)
        for task in cfg.tasks:
            expected = run_task(noised, corpus.labels(task.labels), parts, cfg.probe)
            assert report.cell("laplace", task.name) == expected
        assert report.errors == {}
        assert set(report.efficiency) == {"original", "laplace"}
        assert report.provenance["seeds"]["arms"] == {"original": 0, "laplace": 2}

    def test_same_config_same_report(self):
        a, b = run_experiment(_experiment()), run_experiment(_experiment())
        assert a.metrics == b.metrics and a.provenance == b.provenance

    def test_parallel_arms_match_sequential(self):
        sequential = run_experiment(_experiment())
        parallel = run_experiment(_experiment(max_workers=2))
        assert parallel.metrics == sequential.metrics

    def test_failing_arm_is_recorded(self, tmp_path):
        arms = [{"name": "original"}, {"name": "broken", "kind": "privacy_transformer", "checkpoint": "missing.ptck"}]
        cfg = _experiment(arms=arms, base_dir=str(tmp_path))
        report = run_experiment(cfg)
        assert report.errors["broken"].startswith("FileNotFoundError")
        assert report.cell("broken", SID_TASK) is None
        assert report.cell("original", SID_TASK) is not None

    def test_epsilon_sweep_shape(self, small_corpus):
        probe = ProbeConfig(hidden=(8,), epochs=2, batch=16)
        points = epsilon_sweep(small_corpus, [100.0, 1.0], seeds=(0, 1), probe_cfg=probe)
        assert [p.epsilon for p in points] == [100.0, 1.0]
        for point in points:
            assert len(point.accuracies) == 2
            assert point.mean_accuracy == pytest.approx(np.mean(point.accuracies))


class TestBench:

    def test_zero_utterances(self, small_corpus):
        result = bench(Arm("original"), small_corpus, n=0)
        assert result.n == 0 and result.per_utterance == 0.0 and result.seconds >= 0.0

    def test_bad_arguments(self, small_corpus):
        with pytest.raises(ConfigError):
            bench(Arm("original"), small_corpus, n=10, batch=0)
        with pytest.raises(ContractError):
            bench(Arm("original"), small_corpus.subset([]), n=3)

    def test_laplace_is_cheaper_than_the_transformer(self, toy_model):
        corpus = generate_synthetic(SyntheticConfig(n_speakers=3, n_contents=10, L=4, d=8))
        laplace = bench(LaplaceArm("laplace", LaplaceConfig()), corpus, n=60)
        transformer = bench(TransformerArm("pt", toy_model), corpus, n=60)
        assert laplace.seconds < transformer.seconds
        assert transformer.peak_rss_bytes > 0


class TestArtifacts:

    def test_bundled_toml_config(self):
        cfg = load_config_file(f"{CONFIG_PATH}/default_experiment.toml")
        assert [a.kind for a in cfg.arms] == ["original", "laplace", "privacy_transformer"]
        assert cfg.arms[2].train.model["d_ff"] == 512 and cfg.arms[2].train.model["dropout"] == 0.0
        assert (cfg.arms[2].train.optimizer, cfg.arms[2].train.schedule) == ("adam", "linear")
        assert cfg.synthetic.n_speakers == 40

    def test_bundled_json_config(self):
        cfg = load_config_file(f"{CONFIG_PATH}/styles_experiment.json")
        assert cfg.synthetic.n_styles == 4 and cfg.max_workers == 2

    def test_unreadable_config(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("name = ")
        with pytest.raises(FormatError):
            load_config_file(path)

    def test_json_syntax_error_carries_its_offset(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"name": "x",, }')
        with pytest.raises(FormatError) as info:
            load_config_file(path)
        assert info.value.offset == 13

    def test_save_and_reload_by_key(self, tmp_path, small_corpus):
        artifacts = ArtifactManager(tmp_path)
        path = artifacts.save(small_corpus, "small", "corpus")
        assert path == tmp_path / "corpora" / "small.pemb"
        assert artifacts.list_artifacts("corpus") == ["small"]
        fresh = ArtifactManager(tmp_path)
        loaded = fresh.load("small", "corpus")
        assert fresh.get("small", "corpus") is loaded
        np.testing.assert_allclose(loaded.matrices(), small_corpus.matrices(), atol=1e-6)
        with pytest.raises(ConfigError):
            fresh.artifact_dir("spreadsheet")


class TestCli:

    def _gen(self, path):
        args = ["--seed", "3", "gen", "--speakers", "3", "--contents", "6", "--layers", "2", "--dim", "4",
                "--speaker-latent", "2", "--content-latent", "2", "--out", str(path)]
        assert cli(args) == EXIT_OK

    def test_gen_then_laplace_anonymize(self, tmp_path):
        source, target = tmp_path / "c.pemb", tmp_path / "anon.pemb"
        self._gen(source)
        assert cli(["anonymize", "--in", str(source), "--out", str(target), "--laplace", "15"]) == EXIT_OK
        original, anonymized = read_corpus(source), read_corpus(target)
        assert anonymized.matrices().shape == original.matrices().shape
        np.testing.assert_array_equal(anonymized.utterance_ids(), original.utterance_ids())
        assert anonymized.manifest.label_maps == original.manifest.label_maps

    def test_corrupt_corpus_is_a_data_error(self, tmp_path):
        path = tmp_path / "bad.pemb"
        path.write_bytes(b"NOPE" + bytes(20))
        assert cli(["probe", "--in", str(path)]) == EXIT_DATA

    def test_missing_file_is_a_data_error(self, tmp_path):
        assert cli(["probe", "--in", str(tmp_path / "absent.pemb")]) == EXIT_DATA

    @pytest.mark.parametrize("name,text", [("broken.toml", "name = "), ("broken.json", "{not json")])
    def test_eval_on_a_malformed_config_is_a_data_error(self, tmp_path, name, text):
        config = tmp_path / name
        config.write_text(text)
        assert cli(["eval", "--config", str(config), "--out-dir", str(tmp_path / "out")]) == EXIT_DATA

    def test_usage_errors(self, tmp_path):
        assert cli(["gen", "--out", str(tmp_path / "x.pemb"), "--frobnicate"]) == EXIT_USAGE
        assert cli(["anonymize", "--in", "a", "--out", "b"]) == EXIT_USAGE
        assert cli(["--threads", "0", "gen", "--out", str(tmp_path / "x.pemb")]) == EXIT_USAGE

    def test_eval_writes_reports_and_report_rerenders(self, tmp_path):
        config = tmp_path / "tiny.json"
        config.write_text(json.dumps({
            "name": "tiny", "synthetic": TINY_SYNTHETIC, "tasks": ["content_group"],
            "arms": [{"name": "original"}, {"name": "laplace", "kind": "laplace"}], "probe": TINY_PROBE,
        }))
        out_dir = tmp_path / "out"
        assert cli(["eval", "--config", str(config), "--out-dir", str(out_dir)]) == EXIT_OK
        assert (out_dir / "report.json").is_file() and (out_dir / "report.md").is_file()

        rerendered = tmp_path / "again.md"
        assert cli(["report", "--in", str(out_dir / "report.json"), "--out", str(rerendered)]) == EXIT_OK
        assert rerendered.read_bytes() == (out_dir / "report.md").read_bytes()

    def test_eval_with_a_failing_arm_exits_3(self, tmp_path):
        config = tmp_path / "broken.json"
        config.write_text(json.dumps({
            "synthetic": TINY_SYNTHETIC, "probe": TINY_PROBE,
            "arms": [{"name": "pt", "kind": "privacy_transformer", "checkpoint": "nowhere.ptck"}],
        }))
        assert cli(["eval", "--config", str(config), "--out-dir", str(tmp_path)]) == EXIT_RUNTIME
        assert "pt" in json.loads((tmp_path / "report.json").read_text())["errors"]
