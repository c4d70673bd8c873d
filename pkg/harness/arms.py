from engine.core.commons import *
from embeddingCorpus.corpus import Corpus
from laplaceBaseline.mechanism import LaplaceConfig, laplace_anonymize
from privacyTransformer import checkpoint
from privacyTransformer.managers.trainManager import TrainConfig, train_from_config
from privacyTransformer.model import PrivacyTransformer


logger = logging.getLogger(__name__)

ARM_KINDS = ("original", "laplace", "privacy_transformer")


@dataclass
class ArmConfig:
    """
    One anonymization method. `laplace` uses epsilon and the clip range;
    `privacy_transformer` needs either a checkpoint path or a `train` table.
    `seed` drives the anonymization randomness (noise or target speakers).
    """
    name: str
    kind: str = "original"
    epsilon: float = LAPLACE_EPSILON
    clip_lo: float = CLIP_LO
    clip_hi: float = CLIP_HI
    checkpoint: Optional[str] = None
    train: Optional[TrainConfig] = None
    pool: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if self.pool is not None:
            self.pool = tuple(int(s) for s in self.pool)
        self.validate()

    def validate(self):
        if self.kind not in ARM_KINDS:
            raise ConfigError(f"arm {self.name!r}: kind must be one of {ARM_KINDS}, got {self.kind!r}")
        if self.kind == "laplace":
            self.laplace_config().validate()
        if self.kind == "privacy_transformer" and (self.checkpoint is None) == (self.train is None):
            raise ConfigError(f"arm {self.name!r}: give exactly one of `checkpoint` or `train`")

    def laplace_config(self) -> LaplaceConfig:
        return LaplaceConfig(self.epsilon, self.clip_lo, self.clip_hi, self.seed)

    def to_json(self) -> dict:
        payload = {"name": self.name, "kind": self.kind, "seed": self.seed}
        if self.kind == "laplace":
            payload.update(epsilon=self.epsilon, clip_lo=self.clip_lo, clip_hi=self.clip_hi)
        if self.kind == "privacy_transformer":
            if self.checkpoint is not None:
                payload["checkpoint"] = self.checkpoint
            if self.train is not None:
                payload["train"] = self.train.to_json()
            if self.pool is not None:
                payload["pool"] = list(self.pool)
        return payload


class Arm:
    """Identity arm; subclasses override `anonymize_array`."""
    kind = "original"

    def __init__(self, name: str):
        self.name = name

    def anonymize_array(self, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return z

    def anonymize(self, corpus: Corpus, seed=0) -> Corpus:
        if type(self).anonymize_array is Arm.anonymize_array:
            return corpus
        return corpus.with_matrices(self.anonymize_array(corpus.matrices(), make_rng(seed)),
                                    name=f"{corpus.manifest.name}+{self.name}")

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class LaplaceArm(Arm):
    kind = "laplace"

    def __init__(self, name: str, cfg: LaplaceConfig):
        super().__init__(name)
        self.cfg = cfg

    def anonymize_array(self, z, rng):
        return laplace_anonymize(z, self.cfg, rng)


class TransformerArm(Arm):
    kind = "privacy_transformer"

    def __init__(self, name: str, model: PrivacyTransformer, pool=None):
        super().__init__(name)
        self.model = model
        self.pool = pool

    def anonymize_array(self, z, rng):
        return self.model.anonymize(z, seed=rng, pool=self.pool, batch_size=max(1, len(z)))

    def anonymize(self, corpus: Corpus, seed=0) -> Corpus:
        return self.model.anonymize(corpus, seed=seed, pool=self.pool)


def resolve_path(path, base_dir=None) -> Path:
    path = Path(path)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    return path


def build_arm(cfg: ArmConfig, corpus: Optional[Corpus] = None, base_dir=None, progress: bool = False) -> tuple:
    """Returns (arm, training report or None). A `train` table fits a fresh model on `corpus`."""
    cfg.validate()
    if cfg.kind == "original":
        return Arm(cfg.name), None
    if cfg.kind == "laplace":
        return LaplaceArm(cfg.name, cfg.laplace_config()), None

    if cfg.checkpoint is not None:
        model = checkpoint.load(resolve_path(cfg.checkpoint, base_dir))
        return TransformerArm(cfg.name, model, cfg.pool), None
    if corpus is None:
        raise ContractError(f"arm {cfg.name!r} trains a model and needs a corpus")
    model, report = train_from_config(corpus, cfg.train, progress=progress)
    return TransformerArm(cfg.name, model, cfg.pool), report
