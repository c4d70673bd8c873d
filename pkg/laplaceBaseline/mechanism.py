from engine.core.commons import *
from embeddingCorpus.corpus import Corpus


@dataclass
class LaplaceConfig:
    """Element-wise clip to [clip_lo, clip_hi], then Lap(0, (clip_hi - clip_lo) / epsilon) per element"""
    epsilon: float = LAPLACE_EPSILON
    clip_lo: float = CLIP_LO
    clip_hi: float = CLIP_HI
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not self.clip_lo < self.clip_hi:
            raise ConfigError(f"clip range [{self.clip_lo}, {self.clip_hi}] is empty")

    @property
    def scale(self) -> float:
        """b = sensitivity / epsilon; 2 / epsilon on the default [-1, 1] range."""
        return (self.clip_hi - self.clip_lo) / self.epsilon


def laplace_inverse_cdf(u, b):
    # u in (-0.5, 0.5): -b * sign(u) * ln(1 - 2|u|)
    return -b * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def _uniform_open(rng: np.random.Generator, size=None):
    u = rng.uniform(-0.5, 0.5, size=size)
    # rng.uniform is half-open; -0.5 would map to -inf
    return np.where(u <= -0.5, 0.0, u)


def sample_laplace(b: float, rng) -> float:
    """One draw from Lap(0, b) by inverse-CDF sampling."""
    if not b > 0:
        raise ConfigError(f"Laplace scale must be positive, got {b}")
    return float(laplace_inverse_cdf(_uniform_open(make_rng(rng)), b))


def laplace_noise(b: float, shape, rng) -> np.ndarray:
    if not b > 0:
        raise ConfigError(f"Laplace scale must be positive, got {b}")
    return laplace_inverse_cdf(_uniform_open(make_rng(rng), size=shape), b)


def laplace_anonymize(z, cfg: LaplaceConfig, rng: Optional[np.random.Generator] = None):
    """
    Clips every element, then adds independent Laplace noise; no clipping after noising.
    Accepts a Corpus (returns a Corpus) or an array (returns the same shape and dtype).
    Noise comes from `rng` when given, otherwise from a fresh stream seeded with cfg.seed.
    """
    cfg.validate()
    if isinstance(z, Corpus):
        noised = laplace_anonymize(z.matrices(), cfg, rng)
        return z.with_matrices(noised, name=f"{z.manifest.name}+laplace(eps={cfg.epsilon:g})")

    array = np.asarray(z)
    require_finite(array, "Laplace input")
    clipped = np.clip(array.astype(np.float64), cfg.clip_lo, cfg.clip_hi)
    noised = clipped + laplace_noise(cfg.scale, clipped.shape, make_rng(cfg.seed if rng is None else rng))
    return noised.astype(array.dtype, copy=False) if np.issubdtype(array.dtype, np.floating) else noised
