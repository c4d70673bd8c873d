import csv
import io

from rich.table import Table

from engine.core.commons import *
from harness.bench import Efficiency
from probes.metrics import Metrics


REPORT_FORMATS = ("markdown", "csv", "json")
TASK_METRICS = ("accuracy", "f1")
EXTRACTION_ROW = "extraction"


@dataclass
class ExperimentReport:
    """
    metrics[arm][task] holds Metrics, or None when the arm failed (see errors[arm]).
    efficiency[arm] times the anonymization pass only; `extraction` is the
    cost of materialising the input corpus.
    """
    name: str
    arms: list
    tasks: list
    average: str = "macro"
    metrics: dict = field(default_factory=dict)
    efficiency: dict = field(default_factory=dict)
    extraction: Optional[Efficiency] = None
    training: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def cell(self, arm: str, task: str) -> Optional[Metrics]:
        return self.metrics.get(arm, {}).get(task)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "arms": list(self.arms),
            "tasks": list(self.tasks),
            "average": self.average,
            "metrics": {arm: {task: (m.to_json() if m is not None else None) for task, m in cells.items()}
                        for arm, cells in self.metrics.items()},
            "efficiency": {arm: e.to_json() for arm, e in self.efficiency.items()},
            "extraction": self.extraction.to_json() if self.extraction is not None else None,
            "training": self.training,
            "errors": self.errors,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "ExperimentReport":
        try:
            return cls(
                name=payload["name"],
                arms=list(payload["arms"]),
                tasks=list(payload["tasks"]),
                average=payload.get("average", "macro"),
                metrics={arm: {task: (Metrics.from_json(m) if m is not None else None) for task, m in cells.items()}
                         for arm, cells in payload.get("metrics", {}).items()},
                efficiency={arm: Efficiency(**e) for arm, e in payload.get("efficiency", {}).items()},
                extraction=Efficiency(**payload["extraction"]) if payload.get("extraction") else None,
                training=payload.get("training", {}),
                errors=payload.get("errors", {}),
                provenance=payload.get("provenance", {}),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"report JSON is missing or mistypes a field: {exc}") from exc


def _percent(value: Optional[float]) -> str:
    return "error" if value is None else f"{100.0 * value:.2f}"


def task_header(task: str, metric: str) -> str:
    if task == SID_TASK:
        return "SID Acc. ↓" if metric == "accuracy" else "SID F1 ↓"
    return f"{task} Acc." if metric == "accuracy" else f"{task} F1"


def _task_columns(report: ExperimentReport) -> list:
    """SID shows accuracy only; utility tasks show accuracy and F1."""
    columns = []
    for task in report.tasks:
        columns.append((task, "accuracy"))
        if task != SID_TASK:
            columns.append((task, "f1"))
    return columns


def _metric_value(report: ExperimentReport, arm: str, task: str, metric: str) -> Optional[float]:
    m = report.cell(arm, task)
    if m is None:
        return None
    return m.accuracy if metric == "accuracy" else m.score(report.average)


def render_markdown(report: ExperimentReport) -> str:
    columns = _task_columns(report)
    lines = [f"# {report.name}", ""]
    lines.append("| Method | " + " | ".join(task_header(t, m) for t, m in columns) + " |")
    lines.append("|---|" + "---:|" * len(columns))
    for arm in report.arms:
        cells = [_percent(_metric_value(report, arm, t, m)) for t, m in columns]
        lines.append(f"| {arm} | " + " | ".join(cells) + " |")
    lines.append("")
    lines.append(f"Scores in %. F1 is {report.average}-averaged. ↓ marks lower-is-better.")

    lines += ["", "## Efficiency", "", "| Step | Time (s) | Peak RSS (MB) |", "|---|---:|---:|"]
    rows = [(EXTRACTION_ROW, report.extraction)] if report.extraction is not None else []
    rows += [(arm, report.efficiency.get(arm)) for arm in report.arms]
    for label, cost in rows:
        if cost is None:
            lines.append(f"| {label} | error | error |")
        else:
            lines.append(f"| {label} | {cost.seconds:.3f} | {cost.peak_rss_bytes / 2 ** 20:.1f} |")

    if report.errors:
        lines += ["", "## Errors", ""]
        lines += [f"- {arm}: {message}" for arm, message in sorted(report.errors.items())]
    if report.provenance:
        lines += ["", "## Provenance", ""]
        lines += [f"- {key}: {json.dumps(value, sort_keys=True)}" for key, value in sorted(report.provenance.items())]
    return "\n".join(lines) + "\n"


def render_csv(report: ExperimentReport) -> str:
    """One row per (arm, task, metric); failed arms leave the value empty."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["arm", "task", "metric", "value"])
    for arm in report.arms:
        for task in report.tasks:
            for metric in TASK_METRICS:
                value = _metric_value(report, arm, task, metric)
                writer.writerow([arm, task, metric, "" if value is None else repr(value)])
    return buffer.getvalue()


def render_report(report: ExperimentReport, fmt: str) -> str:
    if fmt == "markdown":
        return render_markdown(report)
    if fmt == "csv":
        return render_csv(report)
    if fmt == "json":
        return json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"
    raise ConfigError(f"unknown report format {fmt!r}; expected one of {REPORT_FORMATS}")


def emit_report(report: ExperimentReport, fmt: str, path) -> Path:
    path = Path(path)
    text = render_report(report, fmt)
    path.write_text(text, encoding="utf-8")
    return path


def read_report(path) -> ExperimentReport:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a JSON report ({exc})") from exc
    return ExperimentReport.from_json(payload)


def report_table(report: ExperimentReport) -> Table:
    """The markdown grid as a rich table, for the terminal."""
    columns = _task_columns(report)
    table = Table(title=report.name, show_header=True, header_style="bold cyan")
    table.add_column("Method")
    for task, metric in columns:
        table.add_column(task_header(task, metric), justify="right")
    table.add_column("Time (s)", justify="right")
    for arm in report.arms:
        cost = report.efficiency.get(arm)
        table.add_row(arm, *[_percent(_metric_value(report, arm, t, m)) for t, m in columns],
                      "error" if cost is None else f"{cost.seconds:.3f}")
    return table
