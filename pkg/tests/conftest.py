import numpy as np
import pytest

from embeddingCorpus.synthetic import SyntheticConfig, generate_synthetic
from privacyTransformer.model import PrivacyTransformer, PrivacyTransformerConfig
from probes.model import ProbeConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_config():
    """Small float64 model used for gradient and equivariance checks."""
    return PrivacyTransformerConfig(L=4, d=8, n_speakers=5, d_spk=4, d_L=4, n_layers=2, n_heads=2, d_ff=16,
                                    dropout=0.0, seed=0)


@pytest.fixture
def toy_model(toy_config):
    return PrivacyTransformer(toy_config)


@pytest.fixture
def small_synthetic_config():
    return SyntheticConfig(n_speakers=6, n_contents=12, L=4, d=8, p=3, q=3, noise_sigma=0.05, seed=7)


@pytest.fixture
def small_corpus(small_synthetic_config):
    return generate_synthetic(small_synthetic_config)


@pytest.fixture
def fast_probe():
    return ProbeConfig(hidden=(32, 16), epochs=40, patience=5, batch=16, seed=0)
