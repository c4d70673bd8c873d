from tqdm import tqdm

from engine.core.commons import *
from engine.core.optimizers import AdamState, adam_step, sgd_step
from engine.core.tensor import Tensor, mse_loss, no_grad
from embeddingCorpus.corpus import Corpus
from embeddingCorpus.sampling import PairSampler
from privacyTransformer.model import PrivacyTransformer, PrivacyTransformerConfig


logger = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")
SCHEDULES = ("constant", "linear")


@dataclass
class TrainConfig:
    """Training settings plus PrivacyTransformerConfig overrides (`model`)"""
    epochs: int = TRANSFORMER_EPOCHS
    lr: float = TRANSFORMER_LR
    batch: int = TRANSFORMER_BATCH
    val_fraction: float = VAL_FRACTION
    seed: int = 0
    optimizer: str = "sgd"
    schedule: str = "constant"
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs < 0 or self.batch < 1:
            raise ConfigError(f"epochs must be >= 0 and batch >= 1, got epochs={self.epochs}, batch={self.batch}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        _check_choice("optimizer", self.optimizer, OPTIMIZERS)
        _check_choice("schedule", self.schedule, SCHEDULES)
        # layout, speaker pool and seed come from the corpus and this config
        allowed = set(PrivacyTransformerConfig.__dataclass_fields__) - {"L", "d", "n_speakers", "speaker_pool", "seed"}
        unknown = set(self.model) - allowed
        if unknown:
            raise ConfigError(f"model settings {sorted(unknown)} cannot be overridden; allowed: {sorted(allowed)}")

    def to_json(self) -> dict:
        return asdict(self)


def _check_choice(name, value, choices):
    if value not in choices:
        raise ConfigError(f"{name} must be one of {choices}, got {value!r}")


def scheduled_lr(lr: float, step: int, total_steps: int, schedule: str = "constant") -> float:
    """Learning rate for a 0-based step; `linear` decays towards zero at the last step."""
    _check_choice("schedule", schedule, SCHEDULES)
    if schedule == "constant" or total_steps <= 0:
        return lr
    return lr * (1.0 - step / total_steps)


@dataclass
class TrainReport:
    """Loss curves of one training run. Epoch losses are means over that epoch's steps."""
    initial_loss: Optional[float] = None
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: Optional[float] = None
    steps: int = 0
    n_train_records: int = 0
    n_val_pairs: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def _pair_arrays(model: PrivacyTransformer, pairs):
    z_src = np.stack([p.src.matrix for p in pairs]).astype(np.float64)
    z_tgt = np.stack([p.tgt.matrix for p in pairs]).astype(np.float64)
    rows = model.speaker_rows([p.tgt.speaker_id for p in pairs])
    # One target speaker for every layer of an utterance during training
    targets = np.repeat(rows[:, None], model.config.L, axis=1)
    return z_src, z_tgt, targets


def train_step(model: PrivacyTransformer, pairs, lr: float, rng: Optional[np.random.Generator] = None,
               adam: Optional[AdamState] = None) -> float:
    """
    One optimizer step on a batch of parallel pairs: plain SGD, or Adam when
    its state is passed. Returns the loss before the step.
    """
    if not pairs:
        raise ContractError("train_step needs at least one pair")
    z_src, z_tgt, targets = _pair_arrays(model, pairs)

    model.zero_grad()
    prediction = model.forward(z_src, targets, mode="train", rng=rng)
    loss = mse_loss(prediction, Tensor(z_tgt))
    loss.backward()
    if adam is None:
        sgd_step(model.parameters(), lr)
    else:
        adam_step(model.parameters(), adam, lr)
    return loss.item()


def pair_loss(model: PrivacyTransformer, pairs, batch_size: int = 256) -> float:
    """Eval-mode mean squared error over a fixed pair set."""
    if not pairs:
        raise ContractError("pair_loss needs at least one pair")
    z_src, z_tgt, targets = _pair_arrays(model, pairs)
    total = 0.0
    with no_grad():
        for start in range(0, len(pairs), batch_size):
            stop = start + batch_size
            prediction = model.forward(z_src[start:stop], targets[start:stop], mode="eval")
            total += float(np.sum((prediction.data - z_tgt[start:stop]) ** 2))
    return total / z_tgt.size


def _holdout_contents(corpus: Corpus, val_fraction: float, rng: np.random.Generator):
    """Content-disjoint (train, val) corpora; val is None when nothing is held out."""
    contents = np.unique(corpus.content_ids())
    n_val = int(round(val_fraction * contents.size))
    if n_val == 0 or n_val >= contents.size:
        return corpus, None
    held_out = rng.permutation(contents)[:n_val]
    is_val = np.isin(corpus.content_ids(), held_out)
    return corpus.subset(np.flatnonzero(~is_val)), corpus.subset(np.flatnonzero(is_val))


def train(model: PrivacyTransformer, corpus: Corpus, epochs: int = TRANSFORMER_EPOCHS, lr: float = TRANSFORMER_LR,
          batch: int = TRANSFORMER_BATCH, val_fraction: float = VAL_FRACTION, seed=0,
          progress: bool = False, optimizer: str = "sgd", schedule: str = "constant") -> TrainReport:
    """
    Fits the model on parallel pairs drawn with replacement; one epoch is
    n_train_records / batch steps. Validation uses a fixed pair set from
    held-out contents; the best-validation parameters are restored at the end.
    """
    if epochs < 0 or batch < 1:
        raise ConfigError(f"epochs must be >= 0 and batch >= 1, got epochs={epochs}, batch={batch}")
    _check_choice("optimizer", optimizer, OPTIMIZERS)
    _check_choice("schedule", schedule, SCHEDULES)
    rng = make_rng(seed)
    train_corpus, val_corpus = _holdout_contents(corpus, val_fraction, rng)
    sampler = PairSampler(train_corpus)

    val_pairs = []
    if val_corpus is not None:
        try:
            val_pairs = PairSampler(val_corpus).sample(max(batch, len(val_corpus)), rng)
        except UnsatisfiableError:
            logger.warning("held-out contents have no parallel pairs; selecting on training loss")

    steps_per_epoch = max(1, len(train_corpus) // batch)
    report = TrainReport(n_train_records=len(train_corpus), n_val_pairs=len(val_pairs))
    if epochs == 0:
        return report

    total_steps = epochs * steps_per_epoch
    adam = AdamState() if optimizer == "adam" else None
    logger.debug("%s, %s schedule from lr %g, %d steps", optimizer, schedule, lr, total_steps)
    best_state = model.state_dict()
    for epoch in tqdm(range(epochs), desc="privacy transformer", disable=not progress):
        losses = []
        for _ in range(steps_per_epoch):
            step_lr = scheduled_lr(lr, report.steps, total_steps, schedule)
            losses.append(train_step(model, sampler.sample(batch, rng), step_lr, rng, adam))
            if report.steps == 0:
                report.initial_loss = losses[0]
            report.steps += 1
        train_loss = float(np.mean(losses))
        report.train_losses.append(train_loss)

        score = pair_loss(model, val_pairs) if val_pairs else train_loss
        report.val_losses.append(score)
        if report.best_val_loss is None or score < report.best_val_loss:
            report.best_val_loss = score
            report.best_epoch = epoch
            best_state = model.state_dict()
        logger.info("epoch %d/%d: train loss %.6f, val loss %.6f%s", epoch + 1, epochs, train_loss, score,
                    " (best)" if report.best_epoch == epoch else "")

    model.load_state_dict(best_state)
    logger.info("restored parameters from epoch %d (val loss %.6f)", report.best_epoch + 1, report.best_val_loss)
    return report


def train_from_config(corpus: Corpus, cfg: TrainConfig, progress: bool = False) -> tuple:
    """Builds a model sized for the corpus and trains it. Returns (model, report)."""
    cfg.validate()
    overrides = {"seed": cfg.seed, **cfg.model}
    model = PrivacyTransformer(PrivacyTransformerConfig.for_corpus(corpus, **overrides))
    logger.info("training privacy transformer: %d parameters, %d speakers, %d records",
                model.num_parameters(), model.config.n_speakers, len(corpus))
    report = train(model, corpus, cfg.epochs, cfg.lr, cfg.batch, cfg.val_fraction, seed=cfg.seed, progress=progress,
                   optimizer=cfg.optimizer, schedule=cfg.schedule)
    return model, report
