from probes.metrics import Metrics, compute_metrics, metrics_from_confusion
from probes.model import ProbeConfig, ProbeModel, featurize
from probes.probe import evaluate, label_array, run_task, sid_attack, train_probe
