from engine.core.commons import *


class EarlyStopping:
    """Keeps the best-scoring snapshot and signals once `patience` epochs pass without improvement"""

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigError(f"patience must be at least 1, got {patience}")
        self.patience = patience
        self.best_score = None
        self.best_epoch = -1
        self.best_state = None
        self.stale_epochs = 0

    def is_exhausted(self) -> bool:
        return self.stale_epochs >= self.patience

    def update(self, score: float, epoch: int, snapshot: Callable[[], dict]) -> bool:
        """Records one epoch's score. Returns True when training should stop."""
        if self.best_score is None or score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.best_state = snapshot()
            self.stale_epochs = 0
        else:
            self.stale_epochs += 1
        return self.is_exhausted()
