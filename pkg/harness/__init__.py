from harness.arms import Arm, ArmConfig, LaplaceArm, TransformerArm, build_arm
from harness.bench import BenchResult, Efficiency, PeakMemorySampler, bench, measure
from harness.experiment import ExperimentConfig, SweepPoint, TaskConfig, epsilon_sweep, run_experiment
from harness.report import ExperimentReport, emit_report, read_report, render_report, report_table
