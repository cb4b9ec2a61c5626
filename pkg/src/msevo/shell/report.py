import os
from dataclasses import replace
from typing import List, Optional

from pandas import DataFrame, read_csv

from msevo.error import ConfigError
from msevo.integrate import Trajectory, evaluate, trajectory_frame
from msevo.optimizer import RunConfig, SolveReport, dump_config, load_config
from msevo.problem import ProblemDef, get_problem, with_penalty_weight
from msevo.structure import dump_structure, load_structure

REPORT_FILE = "report.txt"
STRUCTURE_FILE = "structure.txt"
CONFIG_FILE = "run.cfg"
SIGMA_FILE = "sigma.csv"
EVENTS_FILE = "events.csv"
STAGES_FILE = "stages.csv"
TRAJECTORY_FILE = "trajectory.csv"
PLOT_FILE = "plot.gp"

"""
Files a saved report cannot be traced without
"""
REQUIRED_FILES = (CONFIG_FILE, STRUCTURE_FILE, SIGMA_FILE, EVENTS_FILE)

"""
Enough digits for every double to be read back exactly
"""
FLOAT_FORMAT = "%.17g"


def write_table(frame: DataFrame, path: str) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_table(path: str) -> DataFrame:
    return read_csv(path, float_precision="round_trip")


def make_problem(run: RunConfig) -> ProblemDef:
    """
    Build the problem named by a run configuration
    """
    params = {} if run.x3max is None else {"x3max": run.x3max}
    try:
        return get_problem(run.problem, **params)
    except TypeError:
        raise ConfigError(f"`x3max` does not apply to problem `{run.problem}`")


def final_problem(run: RunConfig) -> ProblemDef:
    """
    Problem the final structure of a run solves, with the last penalty weight when it is penalized
    """
    prob = make_problem(run)
    if prob.penalty is not None:
        prob = with_penalty_weight(prob, run.solver.penalty_schedule()[-1])
    return prob


def final_trajectory(run: RunConfig, record: str) -> Trajectory:
    """
    Integrate a saved structure record on the default mesh of the run
    """
    prob = final_problem(run)
    return evaluate(prob, load_structure(record, prob), run.solver.h_max)


def save_report(directory: str, run: RunConfig, report: SolveReport) -> List[str]:
    """
    Write the outcome of a solve to ``directory``, which must exist, and return the paths written

    The trajectory is integrated again from the written structure record, as ``trace_report`` does.
    """
    run = replace(run, out=directory)
    record = dump_structure(report.structure)
    written = []

    def text(name: str, content: str) -> None:
        path = os.path.join(directory, name)
        with open(path, "w") as file:
            file.write(content)
        written.append(path)

    def table(name: str, frame: DataFrame) -> None:
        path = os.path.join(directory, name)
        write_table(frame, path)
        written.append(path)

    text(REPORT_FILE, report.summary())
    text(STRUCTURE_FILE, record)
    text(CONFIG_FILE, dump_config(run))
    table(SIGMA_FILE, report.sigma_history)
    table(EVENTS_FILE, report.events)
    if report.stages is not None:
        table(STAGES_FILE, report.stages)
    table(TRAJECTORY_FILE, trajectory_frame(final_trajectory(run, record)))
    text(PLOT_FILE, plot_script(report.structure.problem))
    return written


def trace_report(directory: str, out: Optional[str] = None) -> List[str]:
    """
    Emit again the tables of a saved report into ``out`` (the report directory by default) and return the paths written

    Recorded tables are read back and rewritten, the trajectory is integrated again from the structure record.
    """
    missing = [name for name in REQUIRED_FILES if not os.path.isfile(os.path.join(directory, name))]
    if missing:
        raise ConfigError(f"`{directory}` is not a saved report (missing {', '.join(missing)})")

    out = out if out is not None else directory
    run = load_config(os.path.join(directory, CONFIG_FILE))
    with open(os.path.join(directory, STRUCTURE_FILE)) as file:
        record = file.read()
    trajectory = trajectory_frame(final_trajectory(run, record))

    written = []
    for name in (SIGMA_FILE, EVENTS_FILE, STAGES_FILE):
        source = os.path.join(directory, name)
        if not os.path.isfile(source):
            continue
        path = os.path.join(out, name)
        write_table(read_table(source), path)
        written.append(path)
    path = os.path.join(out, TRAJECTORY_FILE)
    write_table(trajectory, path)
    written.append(path)
    return written


def plot_script(prob: ProblemDef) -> str:
    """
    Gnuplot script drawing the control, the states and the history of the performance index from the tables next to it
    """
    return "\n".join(
        [
            f"# {prob.name}: run `gnuplot -p {PLOT_FILE}` from the report directory",
            'set datafile separator ","',
            "set key autotitle columnhead",
            "set multiplot layout 3,1",
            'set title "control"',
            f'plot "{TRAJECTORY_FILE}" using "t":"u" with lines',
            'set title "state"',
            f'plot for [k=1:{prob.n}] "{TRAJECTORY_FILE}" using "t":(column(sprintf("x%d", k))) with lines title sprintf("x%d", k)',
            'set title "performance index"',
            f'plot "{SIGMA_FILE}" using 0:"sigma" with linespoints',
            "unset multiplot",
            "",
        ]
    )
