from sklearn.metrics import confusion_matrix

from engine.core.commons import *


@dataclass
class Metrics:
    """Classification scores. Every scalar is derived from `confusion` (rows = true class)."""
    accuracy: float
    macro_f1: float
    micro_f1: float
    classes: list
    precision: list
    recall: list
    f1: list
    support: list
    confusion: list

    def score(self, average: str = "macro") -> float:
        return self.macro_f1 if average == "macro" else self.micro_f1

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, payload: dict) -> "Metrics":
        return cls(**payload)


def _safe_ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    out = np.zeros(numerator.shape, dtype=np.float64)
    np.divide(numerator, denominator, out=out, where=denominator > 0)
    return out


def metrics_from_confusion(confusion, classes: Sequence[int]) -> Metrics:
    """
    Per-class precision/recall/F1 from a confusion matrix. A class with no true
    and no predicted samples scores 0 on all three.
    """
    cm = np.asarray(confusion, dtype=np.int64)
    total = int(cm.sum())
    if total == 0:
        raise ContractError("cannot score an empty evaluation set")
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp

    f1 = _safe_ratio(2.0 * tp, 2.0 * tp + fp + fn)
    accuracy = float(tp.sum() / total)
    return Metrics(
        accuracy=accuracy,
        macro_f1=float(f1.mean()),
        # single-label micro F1 coincides with accuracy
        micro_f1=accuracy,
        classes=[int(c) for c in classes],
        precision=_safe_ratio(tp, tp + fp).tolist(),
        recall=_safe_ratio(tp, tp + fn).tolist(),
        f1=f1.tolist(),
        support=cm.sum(axis=1).astype(int).tolist(),
        confusion=cm.tolist(),
    )


def compute_metrics(y_true, y_pred, classes: Optional[Sequence[int]] = None) -> Metrics:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ContractError("cannot score an empty evaluation set")
    if y_true.shape != y_pred.shape:
        raise DimensionError(f"labels {y_true.shape} and predictions {y_pred.shape} differ in length")
    if classes is None:
        classes = np.union1d(y_true, y_pred)
    classes = [int(c) for c in classes]
    return metrics_from_confusion(confusion_matrix(y_true, y_pred, labels=classes), classes)
