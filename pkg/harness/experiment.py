import platform
from concurrent.futures import ThreadPoolExecutor

from engine import __version__
from engine.core.commons import *
from embeddingCorpus.corpus import Corpus
from embeddingCorpus.pemb_io import read_corpus
from embeddingCorpus.sampling import split_indices
from embeddingCorpus.synthetic import SyntheticConfig, generate_synthetic
from harness.arms import ArmConfig, LaplaceArm, build_arm, resolve_path
from harness.bench import Efficiency, measure
from harness.report import ExperimentReport
from laplaceBaseline.mechanism import LaplaceConfig
from probes.model import ProbeConfig
from probes.probe import run_task


logger = logging.getLogger(__name__)


@dataclass
class TaskConfig:
    """`labels` names the corpus label map; "sid" uses the record speaker ids"""
    name: str
    labels: Optional[str] = None

    def __post_init__(self):
        self.labels = self.labels or self.name

    @classmethod
    def from_json(cls, payload) -> "TaskConfig":
        return cls(payload) if isinstance(payload, str) else cls(**payload)


@dataclass
class ExperimentConfig:
    """Exactly one of `corpus` (.pemb path) or `synthetic` supplies the data."""
    name: str = "experiment"
    corpus: Optional[str] = None
    synthetic: Optional[SyntheticConfig] = None
    arms: list = field(default_factory=lambda: [ArmConfig("original")])
    tasks: list = field(default_factory=lambda: [TaskConfig(SID_TASK)])
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    split_ratios: tuple = (0.8, 0.1, 0.1)
    split_seed: int = 0
    output_dir: Optional[str] = None
    max_workers: int = 1
    base_dir: Optional[str] = None

    def __post_init__(self):
        self.split_ratios = tuple(float(r) for r in self.split_ratios)
        if not any(task.labels == SID_TASK for task in self.tasks):
            self.tasks = [TaskConfig(SID_TASK)] + list(self.tasks)
        self.validate()

    def validate(self):
        if (self.corpus is None) == (self.synthetic is None):
            raise ConfigError("experiment needs exactly one of `corpus` or `synthetic`")
        if not self.arms:
            raise ConfigError("experiment needs at least one arm")
        for what, names in (("arm", [a.name for a in self.arms]), ("task", [t.name for t in self.tasks])):
            if len(set(names)) != len(names):
                raise ConfigError(f"duplicate {what} names in {names}")
        if self.max_workers < 1:
            raise ConfigError(f"max_workers must be at least 1, got {self.max_workers}")
        for arm in self.arms:
            arm.validate()
        self.probe.validate()

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "corpus": self.corpus,
            "synthetic": asdict(self.synthetic) if self.synthetic is not None else None,
            "arms": [arm.to_json() for arm in self.arms],
            "tasks": [asdict(task) for task in self.tasks],
            "probe": asdict(self.probe),
            "split_ratios": list(self.split_ratios),
            "split_seed": self.split_seed,
            "output_dir": self.output_dir,
            "max_workers": self.max_workers,
        }

    @classmethod
    def from_json(cls, payload: dict, base_dir=None) -> "ExperimentConfig":
        payload = dict(payload)
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment settings: {sorted(unknown)}")
        try:
            if payload.get("synthetic") is not None:
                payload["synthetic"] = SyntheticConfig(**payload["synthetic"])
            if "arms" in payload:
                payload["arms"] = [ArmConfig(**arm) for arm in payload["arms"]]
            if "tasks" in payload:
                payload["tasks"] = [TaskConfig.from_json(task) for task in payload["tasks"]]
            if "probe" in payload:
                payload["probe"] = ProbeConfig(**payload["probe"])
        except TypeError as exc:
            raise ConfigError(f"malformed experiment config: {exc}") from exc
        payload.setdefault("base_dir", None if base_dir is None else str(base_dir))
        return cls(**payload)


def load_experiment_corpus(cfg: ExperimentConfig) -> Corpus:
    if cfg.corpus is not None:
        return read_corpus(resolve_path(cfg.corpus, cfg.base_dir))
    return generate_synthetic(cfg.synthetic)


def _run_arm(arm_cfg: ArmConfig, corpus: Corpus, labels: dict, parts: tuple, cfg: ExperimentConfig) -> tuple:
    arm, training = build_arm(arm_cfg, corpus, cfg.base_dir)
    anonymized, cost = measure(arm.anonymize, corpus, arm_cfg.seed)
    logger.info("arm %s: anonymized %d utterances in %.3f s", arm.name, len(corpus), cost.seconds)
    metrics = {}
    for task in cfg.tasks:
        metrics[task.name] = run_task(anonymized, labels[task.name], parts, cfg.probe)
        logger.info("arm %s, task %s: accuracy %.4f, %s-F1 %.4f", arm.name, task.name,
                    metrics[task.name].accuracy, cfg.probe.average, metrics[task.name].score(cfg.probe.average))
    return metrics, cost, training


def _guarded(arm_cfg: ArmConfig, *args) -> tuple:
    try:
        return _run_arm(arm_cfg, *args), None
    except Exception as exc:
        logger.error("arm %s failed: %s: %s", arm_cfg.name, type(exc).__name__, exc)
        return None, f"{type(exc).__name__}: {exc}"


def provenance(cfg: ExperimentConfig) -> dict:
    return {
        "config_hash": config_hash(cfg.to_json()),
        "seeds": {
            "split": cfg.split_seed,
            "probe": cfg.probe.seed,
            "synthetic": cfg.synthetic.seed if cfg.synthetic is not None else None,
            "arms": {arm.name: arm.seed for arm in cfg.arms},
        },
        "code_version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """
    Loads the corpus once, then per arm: anonymize the whole corpus, and train
    and score a probe for every task. All arms share one stratified split.
    A failing arm is recorded in `errors` and the others still run.
    """
    cfg.validate()
    corpus, extraction = measure(load_experiment_corpus, cfg)
    labels = {task.name: corpus.labels(task.labels) for task in cfg.tasks}
    parts = split_indices(corpus, cfg.split_ratios, unit="stratified", seed=cfg.split_seed)
    logger.info("experiment %s: %d records, split %d/%d/%d, %d arm(s) x %d task(s)", cfg.name, len(corpus),
                *(len(p) for p in parts), len(cfg.arms), len(cfg.tasks))

    args = (corpus, labels, parts, cfg)
    if cfg.max_workers == 1:
        outcomes = [_guarded(arm_cfg, *args) for arm_cfg in cfg.arms]
    else:
        logger.warning("running arms in parallel; peak RSS figures include concurrent arms")
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
            outcomes = list(pool.map(lambda arm_cfg: _guarded(arm_cfg, *args), cfg.arms))

    report = ExperimentReport(name=cfg.name, arms=[a.name for a in cfg.arms], tasks=[t.name for t in cfg.tasks],
                              average=cfg.probe.average, extraction=extraction, provenance=provenance(cfg))
    for arm_cfg, (outcome, error) in zip(cfg.arms, outcomes):
        if error is not None:
            report.errors[arm_cfg.name] = error
            report.metrics[arm_cfg.name] = {task.name: None for task in cfg.tasks}
            continue
        metrics, cost, training = outcome
        report.metrics[arm_cfg.name] = metrics
        report.efficiency[arm_cfg.name] = cost
        if training is not None:
            report.training[arm_cfg.name] = training.to_json()
    return report


@dataclass
class SweepPoint:
    epsilon: float
    accuracies: list
    mean_accuracy: float

    def to_json(self) -> dict:
        return asdict(self)


def epsilon_sweep(corpus: Corpus, epsilons: Sequence[float], seeds: Sequence[int] = (0,),
                  probe_cfg: Optional[ProbeConfig] = None, ratios=(0.8, 0.1, 0.1), split_seed: int = 0) -> list:
    """
    SID accuracy of the Laplace mechanism per epsilon, averaged over seeds.
    Each seed sets both the noise and the attacker initialisation.
    """
    probe_cfg = probe_cfg or ProbeConfig()
    labels = corpus.labels(SID_TASK)
    parts = split_indices(corpus, ratios, unit="stratified", seed=split_seed)
    points = []
    for epsilon in epsilons:
        accuracies = []
        for seed in seeds:
            arm = LaplaceArm(f"laplace(eps={epsilon:g})", LaplaceConfig(epsilon=float(epsilon), seed=seed))
            attack_cfg = ProbeConfig(**{**asdict(probe_cfg), "seed": seed})
            accuracies.append(run_task(arm.anonymize(corpus, seed), labels, parts, attack_cfg).accuracy)
        points.append(SweepPoint(float(epsilon), accuracies, float(np.mean(accuracies))))
        logger.info("epsilon %g: mean SID accuracy %.4f over %d seed(s)", epsilon, points[-1].mean_accuracy, len(seeds))
    return points
