from tqdm import tqdm

from engine.core.commons import *
from engine.core.optimizers import AdamState, adam_step
from engine.core.tensor import Tensor, cross_entropy
from embeddingCorpus.corpus import Corpus
from embeddingCorpus.sampling import split_indices
from probes.managers.earlyStopping import EarlyStopping
from probes.metrics import Metrics, compute_metrics
from probes.model import ProbeConfig, ProbeModel


logger = logging.getLogger(__name__)


def label_array(corpus: Corpus, labels: dict) -> np.ndarray:
    """Label of every record, in record order."""
    missing = [r.utterance_id for r in corpus.records if r.utterance_id not in labels]
    if missing:
        raise ContractError(f"{len(missing)} utterance(s) have no label, first: {missing[0]}")
    return np.array([int(labels[r.utterance_id]) for r in corpus.records], dtype=np.int64)


def _stratified_holdout(y: np.ndarray, fraction: float, rng: np.random.Generator):
    """(train, val) index arrays; each class keeps at least one training record."""
    val = []
    for cls in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == cls))
        n_val = min(int(round(fraction * members.size)), members.size - 1)
        val.extend(members[:n_val])
    val = np.sort(np.asarray(val, dtype=np.int64))
    return np.setdiff1d(np.arange(y.size), val), val


def _accuracy(model: ProbeModel, z: np.ndarray, class_index: np.ndarray) -> float:
    return float(np.mean(model.predict_indices(z) == class_index))


def train_probe(corpus: Corpus, labels: dict, cfg: Optional[ProbeConfig] = None, val: Optional[Corpus] = None,
                progress: bool = False) -> ProbeModel:
    """
    Adam on softmax cross-entropy. After each epoch the validation accuracy is
    checked; training stops after `patience` epochs without improvement and the
    best-validation parameters are returned. Without `val`, a class-stratified
    `cfg.val_fraction` of the training records is held out.
    """
    cfg = cfg or ProbeConfig()
    cfg.validate()
    y = label_array(corpus, labels)
    classes = np.unique(y)
    if classes.size < 2:
        raise DegenerateTaskError(f"probe task needs at least 2 classes, found {classes.tolist()}")

    rng = make_rng(cfg.seed)
    model = ProbeModel(corpus.L, corpus.d, classes, cfg, rng)
    if cfg.epochs == 0:
        return model

    z = corpus.matrices()
    target = np.searchsorted(classes, y)
    if val is not None:
        z_val = val.matrices()
        y_val = label_array(val, labels)
        # unseen classes can never be predicted; index them past the output range
        known = np.isin(y_val, classes)
        val_target = np.where(known, np.searchsorted(classes, y_val), classes.size)
        train_idx = np.arange(len(corpus))
    else:
        train_idx, val_idx = _stratified_holdout(y, cfg.val_fraction, rng)
        if val_idx.size == 0:
            val_idx = train_idx
        z_val, val_target = z[val_idx], target[val_idx]

    state = AdamState()
    stopper = EarlyStopping(cfg.patience)
    for epoch in tqdm(range(cfg.epochs), desc="probe", disable=not progress):
        order = rng.permutation(train_idx)
        losses = []
        for start in range(0, order.size, cfg.batch):
            chunk = order[start:start + cfg.batch]
            model.zero_grad()
            loss = cross_entropy(model(Tensor(z[chunk])), target[chunk])
            loss.backward()
            adam_step(model.parameters(), state, cfg.lr)
            losses.append(loss.item())

        accuracy = _accuracy(model, z_val, val_target)
        stop = stopper.update(accuracy, epoch, model.state_dict)
        logger.debug("probe epoch %d: loss %.5f, val acc %.4f", epoch + 1, float(np.mean(losses)), accuracy)
        if stop:
            logger.info("early stop after epoch %d, best epoch %d (val acc %.4f)",
                        epoch + 1, stopper.best_epoch + 1, stopper.best_score)
            break

    model.load_state_dict(stopper.best_state)
    return model


def evaluate(model: ProbeModel, corpus: Corpus, labels: dict) -> Metrics:
    """Argmax predictions scored against the labels; classes the model never saw count as misses."""
    if len(corpus) == 0:
        raise ContractError("cannot evaluate on an empty corpus")
    y_true = label_array(corpus, labels)
    y_pred = model.predict(corpus.matrices())
    return compute_metrics(y_true, y_pred, np.union1d(model.classes, y_true))


def run_task(corpus: Corpus, labels: dict, parts: tuple, cfg: Optional[ProbeConfig] = None) -> Metrics:
    """Trains on parts[0], selects on parts[1] and scores on parts[2] (record index arrays)."""
    train_idx, val_idx, test_idx = parts
    val = corpus.subset(val_idx) if len(val_idx) else None
    model = train_probe(corpus.subset(train_idx), labels, cfg, val=val)
    return evaluate(model, corpus.subset(test_idx), labels)


def sid_attack(corpus: Corpus, labels: Optional[dict] = None, cfg: Optional[ProbeConfig] = None,
               ratios=(0.8, 0.1, 0.1), split_seed=0) -> Metrics:
    """
    Speaker-identification attacker on (anonymized) embeddings. The split is
    speaker-stratified at utterance level so every speaker is seen in training.
    Lower accuracy means better privacy.
    """
    labels = corpus.labels(SID_TASK) if labels is None else labels
    parts = split_indices(corpus, ratios, unit="stratified", seed=split_seed)
    return run_task(corpus, labels, parts, cfg)
