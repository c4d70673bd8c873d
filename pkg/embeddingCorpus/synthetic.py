"""
Synthetic layer-wise embedding corpora.

Row l of the matrix for (speaker k, content m) is

    W_l^s s_k + W_l^c c_m + noise_sigma * eta

with latent s_k in R^p, c_m in R^q, eta standard normal, and per-layer mixing
maps with entries of standard deviation 1/sqrt(p+q). Optional styles add a
third, utterance-level factor W_l^e e_style drawn from an independent stream,
so enabling them leaves the base embeddings unchanged.
"""
from engine.core.commons import *
from embeddingCorpus.corpus import Corpus, CorpusManifest, UtteranceEmbedding


logger = logging.getLogger(__name__)


@dataclass
class SyntheticConfig:
    n_speakers: int = 40
    n_contents: int = 200
    L: int = 4
    d: int = 32
    p: int = 8
    q: int = 8
    noise_sigma: float = 0.05
    seed: int = 0
    n_styles: int = 0
    style_dim: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_speakers < 2:
            raise ConfigError(f"n_speakers must be at least 2, got {self.n_speakers}")
        for name in ("n_contents", "L", "d", "p", "q", "style_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.n_styles < 0:
            raise ConfigError(f"n_styles must be non-negative, got {self.n_styles}")


@dataclass
class SyntheticLatents:
    """The draws behind a synthetic corpus, kept for analysis and tests"""
    speakers: np.ndarray          # (n_speakers, p)
    contents: np.ndarray          # (n_contents, q)
    speaker_maps: np.ndarray      # (L, d, p)
    content_maps: np.ndarray      # (L, d, q)


def draw_latents(cfg: SyntheticConfig, rng: Optional[np.random.Generator] = None) -> SyntheticLatents:
    """Latent vectors and mixing maps; the first draws of the corpus's seed stream."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    std = 1.0 / math.sqrt(cfg.p + cfg.q)
    return SyntheticLatents(
        speakers=rng.standard_normal((cfg.n_speakers, cfg.p)),
        contents=rng.standard_normal((cfg.n_contents, cfg.q)),
        speaker_maps=rng.normal(0.0, std, size=(cfg.L, cfg.d, cfg.p)),
        content_maps=rng.normal(0.0, std, size=(cfg.L, cfg.d, cfg.q)),
    )


def generate_synthetic(cfg: SyntheticConfig) -> Corpus:
    """One record per (speaker, content); utterance ids are speaker-major."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    latents = draw_latents(cfg, rng)
    std = 1.0 / math.sqrt(cfg.p + cfg.q)

    n_records = cfg.n_speakers * cfg.n_contents
    noise = rng.standard_normal((n_records, cfg.L, cfg.d))

    speaker_part = np.einsum("ldp,kp->kld", latents.speaker_maps, latents.speakers)
    content_part = np.einsum("ldq,mq->mld", latents.content_maps, latents.contents)

    style_labels = None
    style_part = None
    if cfg.n_styles > 0:
        style_rng = np.random.default_rng([cfg.seed, 1])
        style_vectors = style_rng.standard_normal((cfg.n_styles, cfg.style_dim))
        style_maps = style_rng.normal(0.0, std, size=(cfg.L, cfg.d, cfg.style_dim))
        style_labels = style_rng.integers(cfg.n_styles, size=n_records)
        style_part = np.einsum("ldr,sr->sld", style_maps, style_vectors)

    records = []
    label_maps = {"content_group": {}}
    if style_labels is not None:
        label_maps["style"] = {}
        label_maps["style_binary"] = {}

    for k in range(cfg.n_speakers):
        for m in range(cfg.n_contents):
            i = k * cfg.n_contents + m
            matrix = speaker_part[k] + content_part[m] + cfg.noise_sigma * noise[i]
            if style_part is not None:
                matrix = matrix + style_part[style_labels[i]]
                label_maps["style"][i] = int(style_labels[i])
                label_maps["style_binary"][i] = int(style_labels[i] % 2)
            records.append(UtteranceEmbedding(i, k, m, matrix))
            label_maps["content_group"][i] = m % CONTENT_GROUPS

    manifest = CorpusManifest(name="synthetic", source=json.dumps(asdict(cfg), sort_keys=True), label_maps=label_maps)
    logger.info("generated synthetic corpus: %d speakers x %d contents, L=%d, d=%d",
                cfg.n_speakers, cfg.n_contents, cfg.L, cfg.d)
    return Corpus(cfg.L, cfg.d, range(cfg.n_speakers), records, manifest)
