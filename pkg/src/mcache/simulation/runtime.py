"""Drivers for generator-based client processes.

A process is a generator that yields :class:`Delay` (advance time) or
:class:`Wait` (block on a lock ticket).  :class:`VirtualRuntime` runs all
processes on one thread against a simulated clock, so a run is a pure
function of its seeds.  :class:`ThreadRuntime` gives each process a real
thread and sleeps for real.
"""
from __future__ import annotations

import heapq
import itertools
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Generator, Optional

from ..resource_manager import LockTicket


@dataclass(frozen=True)
class Delay:
    seconds: float


@dataclass(frozen=True)
class Wait:
    ticket: LockTicket


Process = Generator[Any, Any, Any]


class ProcessHandle:
    def __init__(self, name: str):
        self.name = name
        self.done = False
        self.result: Any = None
        self.error: Optional[BaseException] = None

    def __repr__(self) -> str:
        state = "done" if self.done else "running"
        return f"ProcessHandle({self.name}, {state})"


class VirtualRuntime:
    """Deterministic discrete-event loop over a heap of (time, seq) events."""

    def __init__(self) -> None:
        self.now = 0.0
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = itertools.count()
        self.handles: list[ProcessHandle] = []

    def clock(self) -> float:
        return self.now

    def _schedule(self, at: float, fn: Callable[[], None]) -> None:
        heapq.heappush(self._heap, (at, next(self._seq), fn))

    def spawn(self, gen: Process, name: str = "proc", at: float | None = None) -> ProcessHandle:
        handle = ProcessHandle(name)
        self.handles.append(handle)
        self._schedule(self.now if at is None else at, lambda: self._step(gen, handle, None))
        return handle

    def _step(self, gen: Process, handle: ProcessHandle, value: Any) -> None:
        while True:
            try:
                instr = gen.send(value)
            except StopIteration as stop:
                handle.done, handle.result = True, stop.value
                return
            except BaseException as exc:  # surfaced to the caller of run()
                handle.done, handle.error = True, exc
                raise
            if isinstance(instr, Delay):
                if instr.seconds <= 0:
                    value = None
                    continue
                self._schedule(self.now + instr.seconds, lambda: self._step(gen, handle, None))
                return
            if isinstance(instr, Wait):
                if instr.ticket.done:
                    value = instr.ticket
                    continue
                instr.ticket.add_done_callback(
                    lambda t: self._schedule(self.now, lambda: self._step(gen, handle, t))
                )
                return
            raise TypeError(f"process {handle.name} yielded {instr!r}")

    def run(self, until: float | None = None) -> None:
        while self._heap:
            at, _, fn = self._heap[0]
            if until is not None and at > until:
                self.now = until
                return
            heapq.heappop(self._heap)
            self.now = max(self.now, at)
            fn()

    def idle(self) -> bool:
        return not self._heap


class ThreadRuntime:
    """One OS thread per process; delays sleep for ``seconds * time_scale``."""

    def __init__(self, time_scale: float = 1.0):
        self.time_scale = time_scale
        self._start = time.monotonic()
        self._threads: list[threading.Thread] = []
        self.handles: list[ProcessHandle] = []

    def clock(self) -> float:
        return (time.monotonic() - self._start) / self.time_scale if self.time_scale else 0.0

    def spawn(self, gen: Process, name: str = "proc", at: float | None = None) -> ProcessHandle:
        handle = ProcessHandle(name)
        self.handles.append(handle)

        def body() -> None:
            value: Any = None
            try:
                while True:
                    instr = gen.send(value)
                    value = None
                    if isinstance(instr, Delay):
                        if instr.seconds > 0 and self.time_scale > 0:
                            time.sleep(instr.seconds * self.time_scale)
                    elif isinstance(instr, Wait):
                        instr.ticket.wait()
                        value = instr.ticket
                    else:
                        raise TypeError(f"process {name} yielded {instr!r}")
            except StopIteration as stop:
                handle.result = stop.value
            except BaseException as exc:
                handle.error = exc
            finally:
                handle.done = True

        th = threading.Thread(target=body, name=name, daemon=True)
        self._threads.append(th)
        th.start()
        return handle

    def run(self, until: float | None = None) -> None:
        for th in self._threads:
            th.join()
        for h in self.handles:
            if h.error is not None:
                raise h.error


def run_to_completion(gen: Process) -> Any:
    """Drive a process that never has to wait for another one."""
    value: Any = None
    while True:
        try:
            instr = gen.send(value)
        except StopIteration as stop:
            return stop.value
        value = None
        if isinstance(instr, Wait):
            if not instr.ticket.done:
                raise RuntimeError(f"{instr.ticket!r} would block")
            value = instr.ticket
