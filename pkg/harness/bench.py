import threading
import time

import psutil
from threadpoolctl import threadpool_limits

from engine.core.commons import *
from embeddingCorpus.corpus import Corpus
from harness.arms import Arm


logger = logging.getLogger(__name__)

# bench runs exclusively, one at a time per process
_BENCH_LOCK = threading.Lock()


class PeakMemorySampler:
    """Polls the process resident set size on a background thread and keeps the high-water mark"""

    def __init__(self, interval: float = 0.002):
        self.interval = interval
        self.baseline = 0
        self.peak = 0
        self._process = psutil.Process()
        self._stop = threading.Event()
        self._thread = None

    def _sample(self):
        self.peak = max(self.peak, self._process.memory_info().rss)

    def _run(self):
        while not self._stop.wait(self.interval):
            self._sample()

    def __enter__(self):
        self.baseline = self._process.memory_info().rss
        self.peak = self.baseline
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, name="rss-sampler", daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join()
        self._sample()
        return False


@dataclass
class Efficiency:
    """Wall time and peak process RSS of one measured step"""
    seconds: float
    peak_rss_bytes: int

    def to_json(self) -> dict:
        return asdict(self)


def measure(fn: Callable, *args, **kwargs) -> tuple:
    """Runs fn once. Returns (result, Efficiency)."""
    with PeakMemorySampler() as memory:
        start = time.perf_counter()
        result = fn(*args, **kwargs)
        seconds = time.perf_counter() - start
    return result, Efficiency(seconds, memory.peak)


@dataclass
class BenchResult:
    arm: str
    n: int
    batch: int
    threads: int
    seconds: float
    peak_rss_bytes: int

    @property
    def per_utterance(self) -> float:
        return self.seconds / self.n if self.n else 0.0

    def as_tuple(self) -> tuple:
        return self.seconds, self.peak_rss_bytes

    def to_json(self) -> dict:
        return asdict(self)


def bench(arm: Arm, corpus: Corpus, n: int = BENCH_UTTERANCES, batch: int = BENCH_BATCH,
          threads: int = BENCH_THREADS, seed=0) -> BenchResult:
    """
    Times the anonymization pass alone over n utterances (corpus records cycled
    when n exceeds the corpus), `batch` at a time, with BLAS capped at `threads`.
    Memory is the peak RSS of the whole process during the pass.
    """
    if n < 0 or batch < 1 or threads < 1:
        raise ConfigError(f"bench needs n >= 0, batch >= 1 and threads >= 1, got {n}/{batch}/{threads}")
    if n and len(corpus) == 0:
        raise ContractError("cannot bench on an empty corpus")
    z = corpus.matrices()[np.arange(n) % max(1, len(corpus))] if n else np.empty((0, corpus.L, corpus.d))
    rng = make_rng(seed)

    def _pass():
        for start in range(0, n, batch):
            arm.anonymize_array(z[start:start + batch], rng)

    with _BENCH_LOCK, threadpool_limits(limits=threads):
        _, cost = measure(_pass)
    result = BenchResult(arm.name, n, batch, threads, cost.seconds, cost.peak_rss_bytes)
    logger.info("bench %s: %d utterances in %.3f s (%.2f ms/utt), peak RSS %.1f MB",
                arm.name, n, result.seconds, 1e3 * result.per_utterance, result.peak_rss_bytes / 2 ** 20)
    return result
