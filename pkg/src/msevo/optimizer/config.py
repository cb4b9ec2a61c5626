from dataclasses import dataclass, field, fields, replace
from typing import Dict, Iterable, List, Optional, Tuple

from msevo.error import ConfigError
from msevo.evolution import GenerationKind

"""
Generation kinds enabled when a configuration does not list them
"""
DEFAULT_GENERATIONS = (
    GenerationKind.SATURATION,
    GenerationKind.SPIKE,
    GenerationKind.NODE_INSERTION,
)


@dataclass(frozen=True)
class SolverConfig:
    """
    Tuning of the structural evolution solver

    ``h_max`` defaults to ``T / 2000`` of the solved problem. ``max_iterations`` bounds the quasi-Newton iterations between two structural changes. The linesearch collapses arcs it shrinks below ``min_arc_fraction * T``.
    """

    h_max: Optional[float] = None
    efficiency_threshold: float = 0.1
    efficiency_floor: float = 1e-8
    min_arc_fraction: float = 1e-6
    cadence: float = 0.5
    mp_tolerance: float = 1e-3
    max_iterations: int = 500
    sufficient_decrease: float = 1e-4
    backtracking: float = 0.5
    min_step: float = 1e-14
    memory: int = 10
    rho0: float = 10.0
    rho_multiplier: float = 10.0
    rho_max: float = 1e7
    max_structural_changes: int = 100
    candidates_per_arc: int = 2
    generations: Tuple[GenerationKind, ...] = DEFAULT_GENERATIONS

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (int, float)) and not isinstance(value, bool) and not value > 0:
                raise ConfigError(f"`{f.name}` must be positive, got {value}")
        if self.h_max is not None and not self.h_max > 0:
            raise ConfigError(f"`h_max` must be positive, got {self.h_max}")
        if not self.cadence < 1 or not self.backtracking < 1 or not self.sufficient_decrease < 1:
            raise ConfigError("`cadence`, `backtracking` and `sufficient_decrease` must be below 1")
        if self.rho_max < self.rho0:
            raise ConfigError(f"`rho_max` ({self.rho_max}) is below `rho0` ({self.rho0})")
        if self.rho_multiplier <= 1:
            raise ConfigError("`rho_multiplier` must exceed 1")

    def penalty_schedule(self) -> List[float]:
        """
        ``rho0 * multiplier^k`` up to ``rho_max`` included
        """
        schedule = [self.rho0]
        while schedule[-1] * self.rho_multiplier <= self.rho_max * (1 + 1e-12):
            schedule.append(schedule[-1] * self.rho_multiplier)
        return schedule


@dataclass(frozen=True)
class RunConfig:
    """
    Everything a run configuration file can tell: the solver tuning, the problem and where to write results

    ``stages`` lists the generation kinds of successive solves, each one warm-started from the previous.
    """

    problem: str = "lq"
    x3max: Optional[float] = None
    out: Optional[str] = None
    stages: Tuple[Tuple[GenerationKind, ...], ...] = ()
    solver: SolverConfig = field(default_factory=SolverConfig)


_RUN_KEYS = ("problem", "x3max", "out", "stages")


def parse_config(text: str) -> Dict[str, str]:
    """
    Read ``key = value`` lines, ignoring blank lines and ``#`` comments
    """
    entries = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"Line {number}: `{raw.strip()}` is not a `key = value` pair")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"Line {number}: missing key")
        entries[key] = value
    return entries


def parse_overrides(pairs: Iterable[str]) -> Dict[str, str]:
    """
    Read ``key=value`` command line overrides
    """
    entries = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"`{pair}` is not a `key=value` override")
        key, value = pair.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def make_config(entries: Dict[str, str], base: Optional[RunConfig] = None) -> RunConfig:
    """
    Apply parsed entries on top of ``base``

    Unknown keys and malformed values raise ``ConfigError``.
    """
    base = base if base is not None else RunConfig()
    solver_fields = {f.name: f for f in fields(SolverConfig)}
    run_changes: Dict[str, object] = {}
    solver_changes: Dict[str, object] = {}

    for key, value in entries.items():
        if key == "problem":
            run_changes[key] = value
        elif key == "out":
            run_changes[key] = value or None
        elif key == "x3max":
            run_changes[key] = _optional_float(key, value)
        elif key == "stages":
            run_changes[key] = parse_stages(value)
        elif key == "generations":
            solver_changes[key] = parse_kinds(value)
        elif key == "h_max":
            solver_changes[key] = _optional_float(key, value)
        elif key in solver_fields:
            kind = int if isinstance(getattr(base.solver, key), int) else float
            solver_changes[key] = _number(key, value, kind)
        else:
            known = ", ".join(sorted([*_RUN_KEYS, *solver_fields]))
            raise ConfigError(f"Unknown configuration key `{key}` (known: {known})")

    return replace(base, **run_changes, solver=replace(base.solver, **solver_changes))


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> RunConfig:
    """
    Read a run configuration file, if any, then apply the ``key=value`` overrides
    """
    entries: Dict[str, str] = {}
    if path is not None:
        try:
            with open(path) as file:
                entries.update(parse_config(file.read()))
        except OSError as e:
            raise ConfigError(f"Cannot read configuration `{path}`: {e.strerror}")
    entries.update(parse_overrides(overrides))
    return make_config(entries)


def dump_config(run: RunConfig) -> str:
    """
    Configuration file reproducing ``run``
    """
    lines = [
        f"problem = {run.problem}",
        f"x3max = {'' if run.x3max is None else repr(run.x3max)}",
        f"out = {run.out or ''}",
        f"stages = {format_stages(run.stages)}",
    ]
    for f in fields(SolverConfig):
        value = getattr(run.solver, f.name)
        if f.name == "generations":
            text = format_kinds(value)
        elif value is None:
            text = ""
        else:
            text = repr(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def parse_kinds(text: str) -> Tuple[GenerationKind, ...]:
    """
    Comma separated generation kinds, such as ``saturation,insertion``
    """
    kinds = []
    for word in filter(None, (part.strip() for part in text.split(","))):
        try:
            kinds.append(GenerationKind(word))
        except ValueError:
            known = ", ".join(kind.value for kind in GenerationKind)
            raise ConfigError(f"Unknown generation kind `{word}` (known: {known})")
    return tuple(kinds)


def parse_stages(text: str) -> Tuple[Tuple[GenerationKind, ...], ...]:
    """
    Semicolon separated stages of comma separated kinds, such as ``saturation; saturation,insertion``
    """
    return tuple(parse_kinds(stage) for stage in text.split(";") if stage.strip())


def format_kinds(kinds: Iterable[GenerationKind]) -> str:
    return ",".join(kind.value for kind in kinds)


def format_stages(stages) -> str:
    return "; ".join(format_kinds(stage) for stage in stages)


def _number(key: str, value: str, kind):
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"`{key}` expects a {kind.__name__}, got `{value}`")


def _optional_float(key: str, value: str) -> Optional[float]:
    if value in ("", "none", "None"):
        return None
    return _number(key, value, float)
