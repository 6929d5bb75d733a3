"""Abstract sensor and motor-controller roles the navigation code programs against.

Nothing here knows about sockets or the simulator: a simulation-backed
implementation (``igvsim.client``) and a stand-in for physical hardware
(``igvsim.stubs``) both fill the same roles, so the control loop is unchanged
when switching between them.
"""

from __future__ import annotations

import abc
import threading
import time
from typing import Any, NamedTuple, Optional


class Reading(NamedTuple):
    """A value together with its receive sequence number (1 for the first message)."""

    value: Any
    seq: int


class LatestCell:
    """Single-slot, replace-on-write cell shared by one writer and one reader."""

    def __init__(self):
        self._cond = threading.Condition()
        self._reading: Optional[Reading] = None
        self._seq = 0
        self._closed = False

    def put(self, value) -> int:
        with self._cond:
            self._seq += 1
            self._reading = Reading(value, self._seq)
            self._cond.notify_all()
            return self._seq

    def get(self) -> Optional[Reading]:
        with self._cond:
            return self._reading

    def mark_closed(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        return self._closed

    def wait_newer(self, seq: int, timeout: Optional[float]) -> Optional[Reading]:
        """Block until a reading with sequence > ``seq`` exists, the cell closes,
        or ``timeout`` elapses. Returns the newest reading if it is newer, else None."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while self._seq <= seq and not self._closed:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    break
                self._cond.wait(remaining)
            return self._reading if self._seq > seq else None


class SensorRole(abc.ABC):
    """Common interface for retrieving a sensor's output."""

    kind: str = "sensor"

    def __init__(self):
        self._cell = LatestCell()

    @abc.abstractmethod
    def initialize(self, endpoint=None) -> None:
        """Set up whatever communication the sensor needs."""

    def latest(self) -> Optional[Reading]:
        """Newest value and its sequence number, or None before the first message.

        Never blocks. Check :attr:`closed` to tell a silent sensor from a dead one.
        """
        return self._cell.get()

    def wait_newer(self, seq: int, timeout: Optional[float] = None) -> Optional[Reading]:
        return self._cell.wait_newer(seq, timeout)

    def publish(self, value) -> int:
        """Store ``value`` as the newest reading; returns its sequence number."""
        return self._cell.put(value)

    @property
    def closed(self) -> bool:
        return self._cell.closed

    def close(self) -> None:
        """Release resources. Safe to call more than once."""
        self._cell.mark_closed()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class MotorControllerRole(abc.ABC):
    """Accepts speed commands; the last call wins."""

    @abc.abstractmethod
    def initialize(self, endpoint=None) -> None:
        """Set up whatever communication the controller needs."""

    @abc.abstractmethod
    def set_speeds(self, linear: float, angular: float) -> None:
        """Command forward speed in m/s and turn rate in deg/s (positive = counter-clockwise)."""

    @abc.abstractmethod
    def close(self) -> None:
        """Release resources. Safe to call more than once."""

    @property
    def closed(self) -> bool:
        return False

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
