"""End-to-end runs on the default synthetic corpus. Minutes each; deselect with `-m "not slow"`."""

import pytest

from engine.core.ArtifactManager import load_config_file
from engine.core.commons import CONFIG_PATH, HUBERT_BASE_DIM, HUBERT_BASE_LAYERS, SID_TASK
from embeddingCorpus import SyntheticConfig, generate_synthetic
from harness import LaplaceArm, TransformerArm, bench, epsilon_sweep, run_experiment
from laplaceBaseline import LaplaceConfig
from privacyTransformer import PrivacyTransformer, PrivacyTransformerConfig

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def default_report():
    return run_experiment(load_config_file(f"{CONFIG_PATH}/default_experiment.toml"))


def test_raw_embeddings_carry_speaker_and_content(default_report):
    assert default_report.cell("original", SID_TASK).accuracy >= 0.9
    assert default_report.cell("original", "content_group").accuracy >= 0.9


def test_privacy_transformer_trades_identity_for_little_utility(default_report):
    assert default_report.errors == {}
    chance = 1.0 / 40
    raw_content = default_report.cell("original", "content_group").accuracy
    assert default_report.cell("privacy_transformer", SID_TASK).accuracy <= 2 * chance
    assert default_report.cell("privacy_transformer", "content_group").accuracy >= 0.8 * raw_content


def test_laplace_attack_accuracy_falls_with_epsilon():
    corpus = generate_synthetic(SyntheticConfig())
    points = epsilon_sweep(corpus, [100.0, 15.0, 1.0], seeds=(0, 1, 2))
    means = [p.mean_accuracy for p in points]
    # neighbours that both saturate may swap by a few test utterances
    assert means[0] + 0.01 >= means[1] >= means[2] - 0.01
    assert means[0] > means[2]


def test_full_dimension_cost():
    corpus = generate_synthetic(SyntheticConfig(n_speakers=40, n_contents=13, L=HUBERT_BASE_LAYERS, d=HUBERT_BASE_DIM))
    model = PrivacyTransformer(PrivacyTransformerConfig.for_corpus(corpus))
    transformer = bench(TransformerArm("privacy_transformer", model), corpus, n=500, threads=1)
    laplace = bench(LaplaceArm("laplace", LaplaceConfig()), corpus, n=500, threads=1)
    assert transformer.per_utterance <= 1.0
    assert laplace.seconds < transformer.seconds
