from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional

from pandas import DataFrame

from msevo.annotation import LogLike

SIGMA_COLUMNS = ("stage", "iteration", "kind", "sigma", "dimension", "step", "norm")
EVENT_COLUMNS = (
    "stage",
    "iteration",
    "kind",
    "tau",
    "dimension_before",
    "dimension_after",
    "sigma_before",
    "sigma_after",
    "arcs",
)


class Tracker:
    def __init__(self, log: Optional[LogLike] = None):
        """
        Record the history of a solve, forwarding a one-line message per structural event to ``log``
        """

        self.__log = log
        self.__stage = ""
        self.__sigma_rows: List[Dict] = []
        self.__event_rows: List[Dict] = []

    @property
    def stage(self) -> str:
        """
        Label attached to the rows recorded so far, such as the penalty weight of a stage
        """
        return self.__stage

    @contextmanager
    def staged(self, label: str) -> Iterator["Tracker"]:
        """
        Attach ``label``, after the label of an enclosing stage, to every row recorded within the context
        """
        previous, self.__stage = self.__stage, f"{self.__stage} {label}".strip()
        try:
            yield self
        finally:
            self.__stage = previous

    def record_sigma(
        self,
        iteration: int,
        kind: str,
        sigma: float,
        dimension: int,
        step: float = 0.0,
        norm: float = float("nan"),
    ) -> None:
        """
        Append a value of the performance index, after an accepted step or a structural change
        """
        self.__sigma_rows.append(
            {
                "stage": self.__stage,
                "iteration": iteration,
                "kind": kind,
                "sigma": sigma,
                "dimension": dimension,
                "step": step,
                "norm": norm,
            }
        )

    def record_event(
        self,
        iteration: int,
        kind: str,
        tau: float,
        dimension_before: int,
        dimension_after: int,
        sigma_before: float,
        sigma_after: float,
        arcs: str = "",
    ) -> None:
        """
        Append a generation or a reduction and report it
        """
        self.__event_rows.append(
            {
                "stage": self.__stage,
                "iteration": iteration,
                "kind": kind,
                "tau": tau,
                "dimension_before": dimension_before,
                "dimension_after": dimension_after,
                "sigma_before": sigma_before,
                "sigma_after": sigma_after,
                "arcs": arcs,
            }
        )
        self.log(
            f"[{iteration}] {kind} at t = {tau:.6g}: dimension {dimension_before} -> {dimension_after}, sigma = {sigma_after:.10g}"
        )

    def log(self, msg: str) -> None:
        """
        Forward a message to the log callback, if any
        """
        if self.__log is not None:
            self.__log(f"{self.__stage} {msg}" if self.__stage else msg)

    @property
    def sigma_frame(self) -> DataFrame:
        """
        Make a ``DataFrame`` out of the values of the performance index recorded so far
        """
        return DataFrame(self.__sigma_rows, columns=list(SIGMA_COLUMNS))

    @property
    def events_frame(self) -> DataFrame:
        """
        Make a ``DataFrame`` out of the structural events recorded so far
        """
        return DataFrame(self.__event_rows, columns=list(EVENT_COLUMNS))
