from engine.core.commons import *
from engine.core.modules import Embedding, LayerNorm, Linear, Module
from engine.core.tensor import Tensor, concat_last, dropout, matmul, no_grad, relu, scale, softmax_last
from embeddingCorpus.corpus import Corpus


logger = logging.getLogger(__name__)

MODES = ("train", "eval")


@dataclass
class PrivacyTransformerConfig:
    """
    L tokens of width d per utterance, conditioned on a target speaker (d_spk)
    and a layer id (d_L) per token. speaker_pool maps table rows to corpus
    speaker ids; empty means rows are the ids themselves.
    """
    L: int
    d: int
    n_speakers: int
    d_spk: int = SPEAKER_EMBED_DIM
    d_L: int = LAYER_EMBED_DIM
    n_layers: int = ENCODER_DEPTH
    n_heads: int = ATTENTION_HEADS
    d_ff: int = FFN_DIM
    dropout: float = DROPOUT
    seed: int = 0
    speaker_pool: tuple = ()

    def __post_init__(self):
        self.speaker_pool = tuple(int(s) for s in self.speaker_pool)

    @property
    def model_dim(self) -> int:
        return self.d + self.d_spk + self.d_L

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads

    def validate(self):
        for name in ("L", "d", "n_speakers", "d_spk", "d_L", "n_layers", "n_heads", "d_ff"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.model_dim % self.n_heads != 0:
            raise ConfigError(
                f"model width d + d_spk + d_L = {self.model_dim} is not divisible by {self.n_heads} heads"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.speaker_pool and len(self.speaker_pool) != self.n_speakers:
            raise ConfigError(f"speaker_pool has {len(self.speaker_pool)} ids for {self.n_speakers} table rows")
        if len(set(self.speaker_pool)) != len(self.speaker_pool):
            raise ConfigError("speaker_pool contains duplicates")

    def to_json(self) -> dict:
        payload = asdict(self)
        payload["speaker_pool"] = list(self.speaker_pool)
        return payload

    @classmethod
    def for_corpus(cls, corpus: Corpus, **overrides) -> "PrivacyTransformerConfig":
        """Layout and speaker pool taken from a training corpus."""
        return cls(L=corpus.L, d=corpus.d, n_speakers=len(corpus.speakers),
                   speaker_pool=corpus.speakers, **overrides)


class SelfAttention(Module):
    """Multi-head self-attention over the L tokens of each utterance"""

    def __init__(self, width: int, n_heads: int, rng: np.random.Generator):
        self.q = Linear(width, width, rng)
        self.k = Linear(width, width, rng)
        self.v = Linear(width, width, rng)
        self.out = Linear(width, width, rng)
        self._heads = n_heads
        self._head_dim = width // n_heads

    def _split_heads(self, x, batch, tokens):
        return x.reshape(batch, tokens, self._heads, self._head_dim).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor) -> Tensor:
        batch, tokens, width = x.shape
        q = self._split_heads(self.q(x), batch, tokens)
        k = self._split_heads(self.k(x), batch, tokens)
        v = self._split_heads(self.v(x), batch, tokens)

        scores = scale(matmul(q, k.transpose(0, 1, 3, 2)), 1.0 / math.sqrt(self._head_dim))
        context = matmul(softmax_last(scores), v)
        merged = context.transpose(0, 2, 1, 3).reshape(batch, tokens, width)
        return self.out(merged)


class FeedForward(Module):

    def __init__(self, width: int, hidden: int, rng: np.random.Generator):
        self.w1 = Linear(width, hidden, rng)
        self.w2 = Linear(hidden, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.w2(relu(self.w1(x)))


class EncoderLayer(Module):
    """Post-norm block: x = LN(x + drop(attn(x))); x = LN(x + drop(ffn(x))). No positional encoding."""

    def __init__(self, width: int, n_heads: int, hidden: int, dropout_p: float, rng: np.random.Generator):
        self.attn = SelfAttention(width, n_heads, rng)
        self.norm1 = LayerNorm(width)
        self.ffn = FeedForward(width, hidden, rng)
        self.norm2 = LayerNorm(width)
        self._dropout = dropout_p

    def __call__(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        p = self._dropout if rng is not None else 0.0
        x = self.norm1(x + dropout(self.attn(x), p, rng))
        return self.norm2(x + dropout(self.ffn(x), p, rng))


class PrivacyTransformer(Module):
    """
    Maps an utterance's L x d embedding plus per-layer target speakers to an
    estimate of the same content spoken by those speakers.
    """

    def __init__(self, config: PrivacyTransformerConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        width = config.model_dim

        self.spk_emb = Embedding(config.n_speakers, config.d_spk, rng)
        self.layer_emb = Embedding(config.L, config.d_L, rng)
        self.enc = [EncoderLayer(width, config.n_heads, config.d_ff, config.dropout, rng)
                    for _ in range(config.n_layers)]
        self.out_proj = Linear(width, config.d, rng)
        self.name_parameters()

        pool = config.speaker_pool or tuple(range(config.n_speakers))
        self._rows = {speaker: row for row, speaker in enumerate(pool)}
        self._train_rng = np.random.default_rng([config.seed, 1])
        logger.debug("PrivacyTransformer: width %d, head dim %d, %d parameters",
                     width, config.head_dim, self.num_parameters())

    @property
    def speaker_pool(self) -> tuple:
        return tuple(self._rows)

    def speaker_rows(self, speaker_ids) -> np.ndarray:
        """Table rows for corpus speaker ids."""
        rows = []
        for speaker in np.asarray(speaker_ids).reshape(-1).tolist():
            if speaker not in self._rows:
                raise SpeakerIndexError(f"target speaker {speaker} is not in the model's speaker table")
            rows.append(self._rows[speaker])
        return np.asarray(rows, dtype=np.int64)

    def forward(self, z_src, targets, mode: str = "eval", layer_ids=None,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        """
        z_src: (batch, L, d). targets: (batch, L) speaker table rows, one per token.
        layer_ids defaults to 0..L-1 for every utterance. Dropout runs only in train mode.
        """
        cfg = self.config
        if mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
        z = z_src if isinstance(z_src, Tensor) else Tensor(z_src)
        if z.ndim != 3 or z.shape[1:] != (cfg.L, cfg.d):
            raise ContractError(f"expected input (batch, {cfg.L}, {cfg.d}), got {z.shape}")
        batch = z.shape[0]

        targets = np.asarray(targets, dtype=np.int64)
        if targets.shape != (batch, cfg.L):
            raise ContractError(f"targets must have shape ({batch}, {cfg.L}), got {targets.shape}")
        if layer_ids is None:
            layer_ids = np.tile(np.arange(cfg.L), (batch, 1))
        layer_ids = np.asarray(layer_ids, dtype=np.int64)
        if layer_ids.shape != (batch, cfg.L):
            raise ContractError(f"layer_ids must have shape ({batch}, {cfg.L}), got {layer_ids.shape}")

        z_spk = self.spk_emb(targets).reshape(batch, cfg.L, cfg.d_spk)
        z_layer = self.layer_emb(layer_ids).reshape(batch, cfg.L, cfg.d_L)
        x = concat_last([z, z_spk, z_layer])

        drop_rng = None
        if mode == "train" and cfg.dropout > 0:
            drop_rng = rng if rng is not None else self._train_rng
        for layer in self.enc:
            x = layer(x, drop_rng)
        return self.out_proj(x)

    def __call__(self, z_src, targets, mode: str = "eval", layer_ids=None, rng=None) -> Tensor:
        return self.forward(z_src, targets, mode, layer_ids, rng)

    def draw_targets(self, batch: int, rng: np.random.Generator, pool=None) -> np.ndarray:
        """(batch, L) table rows, each drawn i.i.d. uniformly from the pool."""
        rows = np.arange(self.config.n_speakers) if pool is None else self.speaker_rows(pool)
        if rows.size == 0:
            raise ContractError("inference speaker pool is empty")
        return rows[rng.integers(rows.size, size=(batch, self.config.L))]

    def anonymize(self, data, seed=0, pool=None, batch_size: int = 64):
        """
        Converts every utterance to randomly chosen speakers, independently per layer.
        Accepts a Corpus (returns an anonymized Corpus) or a (batch, L, d) array
        (returns an array of the same shape and dtype).
        """
        cfg = self.config
        rng = make_rng(seed)
        if isinstance(data, Corpus):
            if (data.L, data.d) != (cfg.L, cfg.d):
                raise ContractError(f"corpus layout ({data.L}, {data.d}) does not match the model ({cfg.L}, {cfg.d})")
            anonymized = self._anonymize_array(data.matrices(), rng, pool, batch_size)
            return data.with_matrices(anonymized, name=f"{data.manifest.name}+privacy_transformer")

        array = np.asarray(data)
        if array.ndim != 3 or array.shape[1:] != (cfg.L, cfg.d):
            raise ContractError(f"expected embeddings (batch, {cfg.L}, {cfg.d}), got {array.shape}")
        return self._anonymize_array(array, rng, pool, batch_size).astype(array.dtype, copy=False)

    def _anonymize_array(self, array, rng, pool, batch_size) -> np.ndarray:
        targets = self.draw_targets(array.shape[0], rng, pool)
        out = np.empty(array.shape, dtype=np.float64)
        with no_grad():
            for start in range(0, array.shape[0], batch_size):
                stop = start + batch_size
                chunk = np.asarray(array[start:stop], dtype=np.float64)
                out[start:stop] = self.forward(chunk, targets[start:stop], mode="eval").data
        return out
