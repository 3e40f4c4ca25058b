"""Multi-lane buffer pipeline with overlap events between consecutive buffers.

Buffer ``seq`` runs on lane ``seq % num_streams``. A chain is a list of
stages; a *sequential* stage receives the continuity payload signalled by
the same stage for buffer ``seq - 1`` and signals its own successor payload
when done. Everything else runs freely in parallel. Outputs are released in
``seq`` order regardless of completion order.
"""

from __future__ import annotations

import heapq
import os
import queue
import threading
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

COLD = object()


class PipelineFault(RuntimeError):
    """Raised when the pipeline stops on a gap, a double signal or a stage error."""


@dataclass(frozen=True)
class PipelineConfig:
    num_streams: int = 5
    overlap_len: int = 512
    queue_depth: int | None = None
    max_active: int | None = None

    def __post_init__(self):
        if self.num_streams < 1:
            raise ValueError("num_streams must be >= 1")
        if self.overlap_len < 0:
            raise ValueError("overlap_len must be >= 0")
        if self.queue_depth is not None and self.queue_depth < 1:
            raise ValueError("queue_depth must be >= 1")
        if self.max_active is not None and self.max_active < 1:
            raise ValueError("max_active must be >= 1")

    @property
    def depth(self):
        return self.queue_depth if self.queue_depth is not None else 2 * self.num_streams

    @property
    def active(self):
        """Lanes allowed to compute at once; defaults to the usable CPU count."""
        if self.max_active is not None:
            return min(self.max_active, self.num_streams)
        return min(self.num_streams, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


@dataclass(frozen=True)
class Stage:
    """One processing step.

    Parallel stages are called as ``run(item) -> item``. Sequential stages
    are called as ``run(item, state) -> (item, next_state)`` where ``state``
    is the payload from the previous buffer, or ``cold()`` for the first one.
    """

    name: str
    run: Callable
    sequential: bool = False
    cold: Callable[[], Any] | None = None


@dataclass
class Chain:
    """A receiver: its stages plus how to seed an item from a buffer."""

    name: str
    stages: list
    overlap_len: int = 512
    prepare: Callable = lambda buf: {"buffer": buf}

    def run_serial(self, buffers):
        """Reference single-threaded execution."""
        states = {}
        out = []
        for buf in buffers:
            item = self.prepare(buf)
            for st in self.stages:
                if st.sequential:
                    prev = states.get(st.name, COLD)
                    if prev is COLD:
                        prev = st.cold() if st.cold else None
                    item, states[st.name] = st.run(item, prev)
                else:
                    item = st.run(item)
            out.append(item)
        return out


class OverlapEvents:
    """Write-once continuity payloads keyed by (stage, seq).

    Each key has its own event, so a signal wakes only the lane waiting for it.
    """

    PENDING, SIGNALLED, CONSUMED = range(3)

    def __init__(self):
        self._lock = threading.Lock()
        self._entries = {}
        self._fault = None

    def _entry(self, k):
        e = self._entries.get(k)
        if e is None:
            e = self._entries[k] = [threading.Event(), None, self.PENDING]
            if self._fault is not None:
                e[0].set()
        return e

    def signal(self, key, seq, payload):
        with self._lock:
            e = self._entry((key, seq))
            if e[2] != self.PENDING:
                raise PipelineFault(f"overlap event {key!r} for seq {seq} signalled twice")
            e[1], e[2] = payload, self.SIGNALLED
        e[0].set()

    def wait(self, key, seq, cold=None):
        """Block until ``(key, seq)`` is signalled and take its payload.

        ``seq == -1`` returns the cold-start state immediately.
        """
        if seq < 0:
            return cold() if cold else None
        with self._lock:
            e = self._entry((key, seq))
            if e[2] == self.CONSUMED:
                raise PipelineFault(f"overlap event {key!r} for seq {seq} consumed twice")
        e[0].wait()
        with self._lock:
            if e[2] != self.SIGNALLED:
                raise PipelineFault("pipeline faulted upstream") from self._fault
            payload, e[1], e[2] = e[1], None, self.CONSUMED
        return payload

    def poison(self, exc):
        with self._lock:
            if self._fault is None:
                self._fault = exc
            pending = [e[0] for e in self._entries.values()]
        for ev in pending:
            ev.set()

    @property
    def fault(self):
        return self._fault


class SeqSlots:
    """Counting semaphore that hands a released slot to the lowest waiting seq.

    Oldest-first service keeps few buffers half-processed at a time, which
    matters when lanes outnumber cores.
    """

    def __init__(self, n):
        self._lock = threading.Lock()
        self._free = n
        self._waiting = []
        self._tick = 0

    def acquire(self, seq):
        with self._lock:
            if self._free:
                self._free -= 1
                return
            ev = threading.Event()
            self._tick += 1
            heapq.heappush(self._waiting, (seq, self._tick, ev))
        ev.wait()

    def release(self):
        with self._lock:
            if self._waiting:
                heapq.heappop(self._waiting)[2].set()
            else:
                self._free += 1

    @contextmanager
    def hold(self, seq):
        self.acquire(seq)
        try:
            yield
        finally:
            self.release()


@dataclass
class StageClock:
    totals: dict = field(default_factory=lambda: defaultdict(float))
    lock: threading.Lock = field(default_factory=threading.Lock)

    def add(self, name, dt):
        with self.lock:
            self.totals[name] += dt


@dataclass
class RunResult:
    """Ordered chain outputs plus timing for :func:`throughput_report`."""

    items: list
    num_buffers: int = 0
    samples: int = 0
    wall_time: float = 0.0
    sample_rate: float = 0.0
    stage_time: dict = field(default_factory=dict)
    num_streams: int = 1


def _run_stages(chain, item, seq, events, clock, slots):
    # a lane gives up its compute slot while it waits for a predecessor
    for st in chain.stages:
        if st.sequential:
            state = events.wait(st.name, seq - 1, st.cold)
            with slots.hold(seq):
                t0 = time.perf_counter()
                item, nxt = st.run(item, state)
                clock.add(st.name, time.perf_counter() - t0)
            events.signal(st.name, seq, nxt)
        else:
            with slots.hold(seq):
                t0 = time.perf_counter()
                item = st.run(item)
                clock.add(st.name, time.perf_counter() - t0)
    return item


def iter_pipeline(source: Iterable, chain: Chain, cfg: PipelineConfig, clock=None):
    """Generator over chain outputs in ``seq`` order.

    Raises :class:`PipelineFault` on a sequence gap or any stage failure;
    outputs already yielded stay valid.
    """
    S = cfg.num_streams
    events = OverlapEvents()
    clock = clock or StageClock()
    lane_depth = max(1, cfg.depth // S)
    inboxes = [queue.Queue(maxsize=lane_depth) for _ in range(S)]
    done = queue.Queue()
    stop = threading.Event()
    slots = SeqSlots(cfg.active)

    def fail(exc):
        # report before poisoning so the root cause reaches the consumer first
        done.put(("fault", exc))
        events.poison(exc)
        stop.set()

    def put(q, obj):
        while not stop.is_set():
            try:
                q.put(obj, timeout=0.05)
                return True
            except queue.Full:
                continue
        return False

    def lane(i):
        box = inboxes[i]
        while not stop.is_set():
            try:
                job = box.get(timeout=0.05)
            except queue.Empty:
                continue
            if job is None:
                return
            seq, buf = job
            try:
                item = _run_stages(chain, chain.prepare(buf), seq, events, clock, slots)
            except BaseException as exc:  # noqa: BLE001 - forwarded to the consumer
                fail(exc)
                return
            done.put(("item", seq, item))

    def feed():
        expected = 0
        try:
            for buf in source:
                if stop.is_set():
                    return
                if buf.seq != expected:
                    raise PipelineFault(f"source gap: expected seq {expected}, got {buf.seq}")
                if not put(inboxes[buf.seq % S], (buf.seq, buf)):
                    return
                expected += 1
            done.put(("end", expected))
        except BaseException as exc:  # noqa: BLE001
            fail(exc)
        finally:
            for box in inboxes:
                put(box, None)

    threads = [threading.Thread(target=lane, args=(i,), daemon=True, name=f"lane{i}") for i in range(S)]
    threads.append(threading.Thread(target=feed, daemon=True, name="feeder"))
    for t in threads:
        t.start()
    pending = {}
    nxt = 0
    total = None
    try:
        while total is None or nxt < total:
            msg = done.get()
            if msg[0] == "fault":
                exc = msg[1]
                if isinstance(exc, PipelineFault):
                    raise exc
                raise PipelineFault(f"stage failure: {exc!r}") from exc
            if msg[0] == "end":
                total = msg[1]
                continue
            _, seq, item = msg
            pending[seq] = item
            while nxt in pending:
                yield pending.pop(nxt)
                nxt += 1
    finally:
        stop.set()
        events.poison(PipelineFault("pipeline closed"))
        for t in threads:
            t.join(timeout=5)


def run_pipeline(source, chain, cfg: PipelineConfig):
    """Run every buffer of ``source`` through ``chain``; returns a :class:`RunResult`."""
    clock = StageClock()
    counted = []

    def tap():
        for buf in source:
            counted.append((len(buf.samples), buf.adc.sample_rate))
            yield buf

    t0 = time.perf_counter()
    items = list(iter_pipeline(tap(), chain, cfg, clock))
    wall = time.perf_counter() - t0
    return RunResult(
        items=items,
        num_buffers=len(items),
        samples=sum(n for n, _ in counted[: len(items)]),
        wall_time=wall,
        sample_rate=counted[0][1] if counted else 0.0,
        stage_time=dict(clock.totals),
        num_streams=cfg.num_streams,
    )


@dataclass(frozen=True)
class ThroughputReport:
    buffers: int
    samples: int
    wall_time: float
    samples_per_s: float
    buffers_per_s: float
    realtime_factor: float
    stage_share: dict
    num_streams: int = 1


def throughput_report(run: RunResult):
    if run.num_buffers == 0 or run.wall_time <= 0:
        return ThroughputReport(0, 0, run.wall_time, 0.0, 0.0, 0.0, {}, run.num_streams)
    sps = run.samples / run.wall_time
    busy = sum(run.stage_time.values())
    share = {k: v / busy for k, v in run.stage_time.items()} if busy > 0 else {}
    return ThroughputReport(
        run.num_buffers,
        run.samples,
        run.wall_time,
        sps,
        run.num_buffers / run.wall_time,
        sps / run.sample_rate if run.sample_rate else 0.0,
        share,
        run.num_streams,
    )
