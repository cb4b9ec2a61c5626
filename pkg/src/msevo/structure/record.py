from typing import Dict, List

from msevo.error import InvalidArgumentError
from msevo.problem import ProblemDef

from .arc import (
    Arc,
    Bound,
    BoundaryArc,
    CanonicalArc,
    ConstrainedArc,
    HermiteArc,
    SingularArc,
    TimePolynomialArc,
)
from .structure import ControlStructure

RECORD_HEADER = "# msevo control structure"

_FLAGS = ("link_value", "link_slope", "pin_start", "pin_end")


def dump_structure(s: ControlStructure) -> str:
    """
    Plain text record of a structure, one line per arc

    Each line reads ``arc <start> <end> <kind> [key=value ...]``; floats are written with ``repr`` so that loading the record gives back the same structure.
    """
    lines = [RECORD_HEADER, f"problem {s.problem.name}"]
    for i, arc in enumerate(s.arcs):
        a, b = s.interval(i)
        fields = [f"arc {a!r} {b!r} {arc.kind}"]
        if isinstance(arc, BoundaryArc):
            fields.append(f"bound={arc.bound.value}")
        if arc.explicit:
            fields.append("p=" + ",".join(repr(float(v)) for v in arc.params))
        if isinstance(arc, CanonicalArc):
            fields.append(f"alpha={arc.alpha!r}")
            fields.append(f"beta={arc.beta!r}")
        flags = [flag for flag in _FLAGS if getattr(arc, flag, False)]
        if flags:
            fields.append("flags=" + ",".join(flags))
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def load_structure(text: str, prob: ProblemDef) -> ControlStructure:
    """
    Rebuild a structure written by ``dump_structure`` for the problem ``prob``
    """
    nodes: List[float] = []
    arcs: List[Arc] = []

    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        words = line.split()
        if words[0] == "problem":
            if len(words) != 2 or words[1] != prob.name:
                raise InvalidArgumentError(
                    f"Line {number}: record of problem `{' '.join(words[1:])}`, not `{prob.name}`"
                )
            continue
        if words[0] != "arc" or len(words) < 4:
            raise InvalidArgumentError(f"Line {number}: cannot parse `{line}`")

        start, end = float(words[1]), float(words[2])
        if not nodes:
            nodes.append(start)
        elif nodes[-1] != start:
            raise InvalidArgumentError(f"Line {number}: arc starts at {start}, previous one ends at {nodes[-1]}")
        nodes.append(end)
        arcs.append(_parse_arc(words[3], _options(words[4:], number), number))

    if not arcs:
        raise InvalidArgumentError("The record contains no arc")
    return ControlStructure(nodes=tuple(nodes), arcs=tuple(arcs), problem=prob)


def _options(words: List[str], number: int) -> Dict[str, str]:
    options = {}
    for word in words:
        key, sep, value = word.partition("=")
        if not sep:
            raise InvalidArgumentError(f"Line {number}: `{word}` is not a key=value pair")
        options[key] = value
    return options


def _parse_arc(kind: str, options: Dict[str, str], number: int) -> Arc:
    flags = {flag: True for flag in options.pop("flags", "").split(",") if flag}
    unknown = set(flags) - set(_FLAGS)
    if unknown:
        raise InvalidArgumentError(f"Line {number}: unknown flags {sorted(unknown)}")
    p = tuple(float(v) for v in options.pop("p", "").split(",") if v)

    try:
        if kind == BoundaryArc.kind:
            return BoundaryArc(bound=Bound(options["bound"]))
        if kind == SingularArc.kind:
            return SingularArc()
        if kind == ConstrainedArc.kind:
            return ConstrainedArc()
        if kind == HermiteArc.kind:
            return HermiteArc(p=p, **flags)
        if kind == TimePolynomialArc.kind:
            return TimePolynomialArc(p=p)
        if kind == CanonicalArc.kind:
            return CanonicalArc(
                p=p, alpha=float(options["alpha"]), beta=float(options["beta"]), **flags
            )
    except (KeyError, ValueError, TypeError) as e:
        raise InvalidArgumentError(f"Line {number}: malformed {kind} arc ({e})")

    raise InvalidArgumentError(f"Line {number}: unknown arc kind `{kind}`")
