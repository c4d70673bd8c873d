from engine.core.commons import *
from engine.core.modules import Linear, Module
from engine.core.tensor import Parameter, Tensor, matmul, no_grad, relu, softmax_last


FEATURIZER_MODES = ("softmax", "raw")
F1_AVERAGES = ("macro", "micro")


@dataclass
class ProbeConfig:
    hidden: tuple = PROBE_HIDDEN
    lr: float = PROBE_LR
    epochs: int = PROBE_EPOCHS
    patience: int = PROBE_PATIENCE
    batch: int = PROBE_BATCH
    seed: int = 0
    featurizer: str = "softmax"
    average: str = "macro"
    val_fraction: float = VAL_FRACTION

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden sizes must be positive, got {self.hidden}")
        if self.patience < 1:
            raise ConfigError(f"patience must be at least 1, got {self.patience}")
        if self.epochs < 0 or self.batch < 1:
            raise ConfigError(f"epochs must be >= 0 and batch >= 1, got {self.epochs}/{self.batch}")
        if self.featurizer not in FEATURIZER_MODES:
            raise ConfigError(f"featurizer must be one of {FEATURIZER_MODES}, got {self.featurizer!r}")
        if self.average not in F1_AVERAGES:
            raise ConfigError(f"average must be one of {F1_AVERAGES}, got {self.average!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")


class ProbeModel(Module):
    """
    L learnable layer scalars fuse the L x d matrix into one d vector, then an
    MLP (ReLU between layers) classifies it. `classes` maps output index to label.
    """

    def __init__(self, L: int, d: int, classes: Sequence[int], cfg: ProbeConfig,
                 rng: Optional[np.random.Generator] = None):
        cfg.validate()
        rng = make_rng(cfg.seed) if rng is None else rng
        self.classes = tuple(int(c) for c in classes)
        self._mode = cfg.featurizer
        self._L = L
        self._d = d
        # softmax of zeros and raw 1/L both start at the layer mean
        start = np.zeros(L) if cfg.featurizer == "softmax" else np.full(L, 1.0 / L)
        self.featurizer_logits = Parameter(start)

        widths = (d,) + tuple(cfg.hidden) + (len(self.classes),)
        self.mlp = [Linear(widths[i], widths[i + 1], rng) for i in range(len(widths) - 1)]
        self.name_parameters()

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def layer_weights(self) -> Tensor:
        if self._mode == "softmax":
            return softmax_last(self.featurizer_logits)
        return self.featurizer_logits

    def featurize_batch(self, z) -> Tensor:
        """(batch, L, d) -> (batch, d) weighted layer sum"""
        z = z if isinstance(z, Tensor) else Tensor(z)
        if z.ndim != 3 or z.shape[1:] != (self._L, self._d):
            raise ContractError(f"expected (batch, {self._L}, {self._d}) embeddings, got {z.shape}")
        batch = z.shape[0]
        fused = matmul(z.transpose(0, 2, 1), self.layer_weights().reshape(self._L, 1))
        return fused.reshape(batch, self._d)

    def __call__(self, z) -> Tensor:
        h = self.featurize_batch(z)
        for i, layer in enumerate(self.mlp):
            h = layer(h)
            if i < len(self.mlp) - 1:
                h = relu(h)
        return h

    def predict_indices(self, z, batch_size: int = 1024) -> np.ndarray:
        """Argmax class index per utterance; ties go to the lowest index."""
        z = np.asarray(z, dtype=np.float64)
        out = np.empty(z.shape[0], dtype=np.int64)
        with no_grad():
            for start in range(0, z.shape[0], batch_size):
                out[start:start + batch_size] = np.argmax(self(z[start:start + batch_size]).data, axis=1)
        return out

    def predict(self, z) -> np.ndarray:
        return np.asarray(self.classes, dtype=np.int64)[self.predict_indices(z)]


def featurize(model: ProbeModel, z) -> np.ndarray:
    """Fused d vector of one L x d matrix."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ContractError(f"featurize expects one (L, d) matrix, got shape {z.shape}")
    with no_grad():
        return model.featurize_batch(z[None]).data[0]
