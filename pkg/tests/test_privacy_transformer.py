"""Privacy Transformer: shapes, equivariance, gradients, training and checkpoints."""

import struct

import numpy as np
import pytest

from engine.core.commons import ConfigError, ContractError, FormatError, SpeakerIndexError
from engine.core.gradcheck import grad_check
from engine.core.tensor import Tensor, mse_loss, no_grad
from embeddingCorpus import SyntheticConfig, generate_synthetic, sample_parallel_pairs
from privacyTransformer import (
    PrivacyTransformer,
    PrivacyTransformerConfig,
    TrainConfig,
    load,
    pair_loss,
    save,
    scheduled_lr,
    train,
    train_from_config,
    train_step,
)


def _expected_parameters(cfg):
    width = cfg.d + cfg.d_spk + cfg.d_L
    per_layer = 4 * (width * width + width) + (width * cfg.d_ff + cfg.d_ff) + (cfg.d_ff * width + width) + 4 * width
    return cfg.n_speakers * cfg.d_spk + cfg.L * cfg.d_L + cfg.n_layers * per_layer + width * cfg.d + cfg.d


def _inputs(cfg, rng, batch=3):
    z = rng.standard_normal((batch, cfg.L, cfg.d))
    targets = rng.integers(cfg.n_speakers, size=(batch, cfg.L))
    return z, targets


class TestConfig:

    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigError):
            PrivacyTransformer(PrivacyTransformerConfig(L=4, d=8, n_speakers=3, d_spk=4, d_L=3, n_heads=2))

    def test_pool_must_match_table(self):
        with pytest.raises(ConfigError):
            PrivacyTransformer(PrivacyTransformerConfig(L=2, d=4, n_speakers=3, d_spk=2, d_L=2, n_heads=2,
                                                        speaker_pool=(1, 2)))

    def test_parameter_count(self, toy_model, toy_config):
        assert toy_model.num_parameters() == _expected_parameters(toy_config)

    def test_parameter_names_are_dotted_paths(self, toy_model):
        names = list(toy_model.named_parameters())
        assert names[0] == "spk_emb.weight"
        assert "enc.1.ffn.w2.bias" in names
        assert names[-1] == "out_proj.bias"
        assert all(p.name == n for n, p in toy_model.named_parameters().items())


class TestForward:

    def test_output_shape(self, toy_model, toy_config, rng):
        z, targets = _inputs(toy_config, rng, batch=5)
        assert toy_model(z, targets).shape == (5, toy_config.L, toy_config.d)

    def test_wrong_input_layout(self, toy_model, rng):
        with pytest.raises(ContractError):
            toy_model(rng.standard_normal((2, 4, 9)), np.zeros((2, 4), dtype=int))
        with pytest.raises(ContractError):
            toy_model(rng.standard_normal((2, 4, 8)), np.zeros((2, 3), dtype=int))

    def test_target_outside_table(self, toy_model, rng):
        z, targets = _inputs(toy_model.config, rng)
        targets[0, 0] = toy_model.config.n_speakers
        with pytest.raises(SpeakerIndexError):
            toy_model(z, targets)

    def test_unknown_mode(self, toy_model, rng):
        with pytest.raises(ContractError):
            toy_model(*_inputs(toy_model.config, rng), mode="inference")

    def test_eval_mode_is_deterministic_with_dropout(self, toy_config, rng):
        cfg = PrivacyTransformerConfig(**{**toy_config.to_json(), "dropout": 0.5})
        model = PrivacyTransformer(cfg)
        z, targets = _inputs(cfg, rng)
        np.testing.assert_array_equal(model(z, targets).data, model(z, targets).data)
        assert not np.array_equal(model(z, targets, mode="train").data, model(z, targets).data)

    def test_target_speaker_changes_output(self, toy_model, rng):
        z, targets = _inputs(toy_model.config, rng, batch=1)
        other = (targets + 1) % toy_model.config.n_speakers
        assert not np.allclose(toy_model(z, targets).data, toy_model(z, other).data)

    def test_token_permutation_equivariance(self, toy_model, toy_config):
        rng = np.random.default_rng(99)
        worst = 0.0
        for _ in range(100):
            z, targets = _inputs(toy_config, rng, batch=1)
            layer_ids = np.arange(toy_config.L)[None]
            perm = rng.permutation(toy_config.L)
            with no_grad():
                base = toy_model(z, targets, layer_ids=layer_ids).data
                permuted = toy_model(z[:, perm], targets[:, perm], layer_ids=layer_ids[:, perm]).data
            worst = max(worst, float(np.max(np.abs(permuted - base[:, perm]))))
        assert worst < 1e-10


class TestGradients:

    def test_full_loss_passes_gradient_check(self, toy_model, toy_config, rng):
        z, targets = _inputs(toy_config, rng, batch=2)
        z_tgt = Tensor(rng.standard_normal(z.shape))
        f = lambda *params: mse_loss(toy_model.forward(z, targets, mode="train"), z_tgt)
        assert grad_check(f, toy_model.parameters()) < 1e-4

    def test_every_parameter_receives_a_gradient(self, toy_model, toy_config, rng):
        z, targets = _inputs(toy_config, rng)
        toy_model.zero_grad()
        mse_loss(toy_model(z, targets, mode="train"), Tensor(np.zeros(z.shape))).backward()
        assert all(p.grad is not None and p.grad.shape == p.shape for p in toy_model.parameters())


class TestTraining:

    def test_train_step_lowers_loss_on_a_fixed_batch(self, small_corpus):
        model = PrivacyTransformer(PrivacyTransformerConfig.for_corpus(
            small_corpus, d_spk=4, d_L=4, n_layers=1, n_heads=2, d_ff=16, dropout=0.0))
        pairs = sample_parallel_pairs(small_corpus, 16, np.random.default_rng(0))
        first = train_step(model, pairs, lr=0.05)
        for _ in range(40):
            train_step(model, pairs, lr=0.05)
        assert pair_loss(model, pairs) < first

    def test_empty_batch(self, toy_model):
        with pytest.raises(ContractError):
            train_step(toy_model, [], lr=0.1)

    def test_zero_epochs_leaves_parameters(self, small_corpus):
        model = PrivacyTransformer(PrivacyTransformerConfig.for_corpus(
            small_corpus, d_spk=4, d_L=4, n_layers=1, n_heads=2, d_ff=16))
        before = model.state_dict()
        report = train(model, small_corpus, epochs=0)
        assert report.steps == 0 and report.train_losses == []
        for name, values in model.state_dict().items():
            np.testing.assert_array_equal(values, before[name])

    def test_same_seed_same_run(self, small_corpus):
        cfg = TrainConfig(epochs=2, lr=0.01, batch=16, seed=3,
                          model={"d_spk": 4, "d_L": 4, "n_layers": 1, "n_heads": 2, "d_ff": 16})
        model_a, report_a = train_from_config(small_corpus, cfg)
        model_b, report_b = train_from_config(small_corpus, cfg)
        assert report_a == report_b
        assert report_a.best_epoch in (0, 1)
        for name, values in model_a.state_dict().items():
            np.testing.assert_array_equal(values, model_b.state_dict()[name])

    def test_layout_overrides_are_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(model={"d": 12})

    def test_training_halves_the_loss(self, small_corpus):
        cfg = TrainConfig(epochs=30, lr=1e-2, batch=8, seed=0, optimizer="adam", schedule="linear",
                          model={"d_spk": 4, "d_L": 4, "n_layers": 1, "n_heads": 2, "d_ff": 16, "dropout": 0.0})
        _, report = train_from_config(small_corpus, cfg)
        assert report.steps == 30 * (report.n_train_records // 8)
        assert report.train_losses[-1] < 0.5 * report.initial_loss

    def test_linear_schedule(self):
        assert scheduled_lr(0.1, 0, 10, "linear") == pytest.approx(0.1)
        assert scheduled_lr(0.1, 5, 10, "linear") == pytest.approx(0.05)
        assert scheduled_lr(0.1, 9, 10, "linear") > 0.0
        assert scheduled_lr(0.1, 9, 10) == 0.1
        with pytest.raises(ConfigError):
            scheduled_lr(0.1, 0, 10, "cosine")

    @pytest.mark.parametrize("overrides", [{"optimizer": "rmsprop"}, {"schedule": "step"}])
    def test_unknown_optimizer_settings(self, overrides):
        with pytest.raises(ConfigError):
            TrainConfig(**overrides)


class TestAnonymize:

    def test_array_keeps_shape_and_dtype(self, toy_model, toy_config, rng):
        z = rng.standard_normal((7, toy_config.L, toy_config.d)).astype(np.float32)
        out = toy_model.anonymize(z, seed=1, batch_size=3)
        assert out.shape == z.shape and out.dtype == np.float32

    def test_same_seed_same_output(self, toy_model, toy_config, rng):
        z = rng.standard_normal((4, toy_config.L, toy_config.d))
        np.testing.assert_array_equal(toy_model.anonymize(z, seed=5), toy_model.anonymize(z, seed=5))

    def test_chunking_does_not_change_output(self, toy_model, toy_config, rng):
        z = rng.standard_normal((9, toy_config.L, toy_config.d))
        np.testing.assert_allclose(toy_model.anonymize(z, seed=2, batch_size=2),
                                   toy_model.anonymize(z, seed=2, batch_size=64), atol=1e-12)

    def test_pool_limits_targets(self, small_corpus):
        model = PrivacyTransformer(PrivacyTransformerConfig.for_corpus(
            small_corpus, d_spk=4, d_L=4, n_layers=1, n_heads=2, d_ff=16))
        rows = model.draw_targets(200, np.random.default_rng(0), pool=[2, 4])
        assert set(np.unique(rows).tolist()) == set(model.speaker_rows([2, 4]).tolist())
        with pytest.raises(SpeakerIndexError):
            model.draw_targets(1, np.random.default_rng(0), pool=[99])

    def test_corpus_in_corpus_out(self, small_corpus):
        model = PrivacyTransformer(PrivacyTransformerConfig.for_corpus(
            small_corpus, d_spk=4, d_L=4, n_layers=1, n_heads=2, d_ff=16))
        anonymized = model.anonymize(small_corpus, seed=0)
        assert len(anonymized) == len(small_corpus)
        np.testing.assert_array_equal(anonymized.speaker_ids(), small_corpus.speaker_ids())
        assert not np.allclose(anonymized.matrices(), small_corpus.matrices())

    def test_corpus_layout_mismatch(self, toy_model):
        other = generate_synthetic(SyntheticConfig(n_speakers=2, n_contents=3, L=4, d=6))
        with pytest.raises(ContractError):
            toy_model.anonymize(other)

    def test_targets_are_uniform_per_layer(self, toy_model, toy_config):
        n, k = 10_000, toy_config.n_speakers
        rows = toy_model.draw_targets(n, np.random.default_rng(11))
        sigma = np.sqrt((1 / k) * (1 - 1 / k) / n)
        for layer in range(toy_config.L):
            freq = np.bincount(rows[:, layer], minlength=k) / n
            assert np.max(np.abs(freq - 1 / k)) < 4 * sigma

    def test_output_is_forward_with_drawn_targets(self, toy_model, toy_config, rng):
        z = rng.standard_normal((6, toy_config.L, toy_config.d))
        targets = toy_model.draw_targets(6, np.random.default_rng(8))
        np.testing.assert_allclose(toy_model.anonymize(z, seed=8), toy_model(z, targets).data, rtol=0, atol=1e-12)

    def test_single_speaker_pool_ignores_the_seed(self, toy_model, toy_config, rng):
        z = rng.standard_normal((5, toy_config.L, toy_config.d))
        first = toy_model.anonymize(z, seed=0, pool=[3])
        np.testing.assert_array_equal(first, toy_model.anonymize(z, seed=123, pool=[3]))
        forced = toy_model(z, np.full((5, toy_config.L), 3)).data
        np.testing.assert_allclose(first, forced, rtol=0, atol=1e-12)

    def test_different_seeds_differ(self, toy_model, toy_config, rng):
        z = rng.standard_normal((8, toy_config.L, toy_config.d))
        assert not np.allclose(toy_model.anonymize(z, seed=1), toy_model.anonymize(z, seed=2))


class TestCheckpoint:

    def test_round_trip(self, toy_model, toy_config, tmp_path, rng):
        path = tmp_path / "model.ptck"
        save(toy_model, path)
        restored = load(path)
        assert restored.config == toy_config
        for name, values in toy_model.state_dict().items():
            np.testing.assert_allclose(restored.state_dict()[name], values, rtol=1e-6, atol=1e-7)
        z, targets = _inputs(toy_config, rng)
        np.testing.assert_allclose(restored(z, targets).data, toy_model(z, targets).data, atol=1e-5)

    def test_bad_magic(self, toy_model, tmp_path):
        path = tmp_path / "model.ptck"
        save(toy_model, path)
        path.write_bytes(b"NOPE" + path.read_bytes()[4:])
        with pytest.raises(FormatError) as info:
            load(path)
        assert info.value.offset == 0

    def test_truncated(self, toy_model, tmp_path):
        path = tmp_path / "model.ptck"
        save(toy_model, path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError, match="truncated"):
            load(path)

    def test_shape_mismatch_names_the_parameter(self, toy_model, tmp_path):
        path = tmp_path / "model.ptck"
        save(toy_model, path)
        blob = bytearray(path.read_bytes())
        (config_len,) = struct.unpack_from("<I", blob, 8)
        first_entry = 12 + config_len + 4
        name_len = struct.unpack_from("<H", blob, first_entry)[0]
        extent_at = first_entry + 2 + name_len + 1
        struct.pack_into("<I", blob, extent_at, 6)
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="spk_emb.weight") as info:
            load(path)
        assert info.value.offset == first_entry
