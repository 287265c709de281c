"""
Solve clock module for the congestion toolkit.

This module provides the SolveClock class for timing the phases of a solve.
"""
import time
from contextlib import contextmanager
from typing import Dict, Iterator


class SolveClock:
    """
    Wall-clock timer for the phases of a solve.

    Phases are named (e.g. "dual", "projection") and their durations are
    accumulated, so a phase entered several times reports its total.
    """

    def __init__(self):
        """Initialize the clock."""
        self.start_time = time.perf_counter()
        self.last_time = self.start_time
        self.phase_times: Dict[str, float] = {}
        self.phase_counts: Dict[str, int] = {}

    def tick(self) -> float:
        """
        Return the time elapsed since the previous tick.

        Returns:
            float: Seconds since the last call (or since construction).
        """
        current_time = time.perf_counter()
        delta_time = current_time - self.last_time
        self.last_time = current_time
        return delta_time

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        """
        Time the enclosed block under the given phase name.

        Args:
            name: Phase name.
        """
        begin = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - begin
            self.phase_times[name] = self.phase_times.get(name, 0.0) + elapsed
            self.phase_counts[name] = self.phase_counts.get(name, 0) + 1

    def total(self) -> float:
        """Seconds since the clock was created."""
        return time.perf_counter() - self.start_time

    def summary(self) -> str:
        """One-line description of the phase totals, in milliseconds."""
        parts = [f"{name}={seconds * 1000.0:.1f}ms"
                 for name, seconds in self.phase_times.items()]
        return ", ".join(parts) if parts else "no phases"
