from io import StringIO

import pytest
import terminology as tmg

from msevo.utility.match import Match
from msevo.utility.runs import runs
from msevo.utility.synchronized_ostream import SynchronizedOStream


def test_match_value():
    assert Match(2) & {1: "one", 2: "two", int: "number"} == "two"


def test_match_type():
    assert Match(3) & {1: "one", int: lambda x: x * 10} == 30
    assert Match(KeyError()) & {LookupError: "lookup", Exception: "other"} == "lookup"


def test_match_calls_value_patterns_without_argument():
    assert Match("go") & {"go": lambda: "went"} == "went"


def test_match_returns_classes():
    assert Match("int") & {"int": int} is int


def test_match_unhashable_value():
    assert Match([1, 2]) & {list: len} == 2


def test_match_nothing():
    with pytest.raises(LookupError):
        Match(1.5) & {int: "number"}


def test_deferred_match():
    matcher = Match() & {ValueError: 2, Exception: 1}

    assert matcher(ValueError()) == 2
    assert matcher(RuntimeError()) == 1


def test_log_without_colors():
    ostream = StringIO()
    stream = SynchronizedOStream(ostream, use_colors=False, modifier=tmg.in_yellow)

    stream.log("plain", tmg.in_red)

    assert ostream.getvalue() == "plain\n"


def test_log_with_colors():
    ostream = StringIO()
    stream = SynchronizedOStream(ostream, use_colors=True, modifier=tmg.in_yellow)

    stream.log("red", tmg.in_red)

    assert ostream.getvalue() == tmg.in_red("red") + "\n"


def test_write_holds_the_stream_until_newline():
    ostream = StringIO()
    stream = SynchronizedOStream(ostream, use_colors=False, modifier=tmg.in_yellow)

    stream.write("partial")
    stream.write(" line\n")
    stream.writelines(["a\n", "b\n"])

    assert ostream.getvalue() == "partial line\na\nb\n"


def test_runs():
    assert runs([False, True, True, False, True]) == [(1, 2), (4, 4)]
    assert runs([True] * 3) == [(0, 2)]
    assert runs([False, False]) == []
    assert runs([]) == []
