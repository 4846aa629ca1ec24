"""Calibrated host-contention generators and their orchestration.

Four stressor kinds, each running in separate processes so the GIL never
caps the pressure they generate: CPU duty-cycle spinners, a memory walker
that keeps pages hot, a paced disk writer, and a loopback UDP flood. Every
handle reports the intensity it actually achieved, because on a loaded or
small host the requested figure is a target, not a guarantee.

Stressors never run unsupervised: orchestrate() brackets a measurement body
with startup, a settle pause, and teardown that runs even when the body
throws.
"""

from __future__ import annotations

import multiprocessing
import os
import socket
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import psutil

SCRATCH_ENV = "INFERSENTRY_SCRATCH"
DEFAULT_SCRATCH = ".infersentry-scratch"

# Duty-cycle period for CPU workers. Short enough that contention looks
# continuous to a sub-100ms measurement window, long enough that the
# sleep/spin switching cost is negligible.
CPU_PERIOD_S = 0.010

MAX_UDP_PAYLOAD = 65_507

# Fraction of total RAM the memory stressor may claim without an override.
MEMORY_CAP_FRACTION = 0.5

_STRESSOR_KINDS = ("cpu", "memory", "disk", "network")


class StressorError(RuntimeError):
    """A stressor could not be started, validated, or crashed on startup."""


def scratch_dir() -> Path:
    """Directory for stressor scratch files; override via INFERSENTRY_SCRATCH."""
    return Path(os.environ.get(SCRATCH_ENV, DEFAULT_SCRATCH))


@dataclass(frozen=True)
class StressorSpec:
    """One stressor request. Fields beyond 'kind' apply per kind only.

    cpu:     utilization_pct (0..100), workers (0 means one per online core)
    memory:  megabytes (0 is a no-op), override_cap
    disk:    rate_mbps (0 means hold the file open, write nothing), path
    network: datagrams_per_s (0 means open sockets, send nothing), payload_bytes
    """

    kind: str
    workers: int = 0
    utilization_pct: float = 0.0
    megabytes: int = 0
    override_cap: bool = False
    rate_mbps: float = 0.0
    path: str | None = None
    datagrams_per_s: float = 0.0
    payload_bytes: int = 1024

    def __post_init__(self) -> None:
        if self.kind not in _STRESSOR_KINDS:
            raise StressorError(f"unknown stressor kind {self.kind!r}")
        if self.workers < 0:
            raise StressorError("workers must be >= 0")
        if not 0.0 <= self.utilization_pct <= 100.0:
            raise StressorError(
                f"utilization_pct {self.utilization_pct!r} outside [0, 100]"
            )
        if self.megabytes < 0:
            raise StressorError("megabytes must be >= 0")
        if self.rate_mbps < 0:
            raise StressorError("rate_mbps must be >= 0")
        if self.datagrams_per_s < 0:
            raise StressorError("datagrams_per_s must be >= 0")
        if not 1 <= self.payload_bytes <= MAX_UDP_PAYLOAD:
            raise StressorError(
                f"payload_bytes {self.payload_bytes} outside [1, {MAX_UDP_PAYLOAD}]"
            )

    @classmethod
    def from_dict(cls, raw: dict) -> "StressorSpec":
        """Parse one stressor object from a plan; unknown keys are rejected."""
        if not isinstance(raw, dict):
            raise StressorError(f"stressor entry must be an object, got {raw!r}")
        kind = raw.get("kind")
        allowed_by_kind = {
            "cpu": {"kind", "utilization_pct", "workers"},
            "memory": {"kind", "megabytes", "override_cap"},
            "disk": {"kind", "rate_mbps", "path"},
            "network": {"kind", "datagrams_per_s", "payload_bytes"},
        }
        required_by_kind = {
            "cpu": "utilization_pct",
            "memory": "megabytes",
            "disk": "rate_mbps",
            "network": "datagrams_per_s",
        }
        if kind not in allowed_by_kind:
            raise StressorError(f"unknown stressor kind {kind!r}")
        unknown = sorted(set(raw) - allowed_by_kind[kind])
        if unknown:
            raise StressorError(f"{kind} stressor has unknown keys {unknown}")
        required = required_by_kind[kind]
        if required not in raw:
            raise StressorError(f"{kind} stressor needs {required!r}")
        if kind == "cpu":
            return cls(
                kind="cpu",
                utilization_pct=float(raw["utilization_pct"]),
                workers=int(raw.get("workers", 0)),
            )
        if kind == "memory":
            return cls(
                kind="memory",
                megabytes=int(raw["megabytes"]),
                override_cap=bool(raw.get("override_cap", False)),
            )
        if kind == "disk":
            path = raw.get("path")
            return cls(
                kind="disk",
                rate_mbps=float(raw["rate_mbps"]),
                path=str(path) if path is not None else None,
            )
        return cls(
            kind="network",
            datagrams_per_s=float(raw["datagrams_per_s"]),
            payload_bytes=int(raw.get("payload_bytes", 1024)),
        )

    def to_dict(self) -> dict:
        if self.kind == "cpu":
            return {
                "kind": "cpu",
                "utilization_pct": self.utilization_pct,
                "workers": self.workers,
            }
        if self.kind == "memory":
            out = {"kind": "memory", "megabytes": self.megabytes}
            if self.override_cap:
                out["override_cap"] = True
            return out
        if self.kind == "disk":
            out = {"kind": "disk", "rate_mbps": self.rate_mbps}
            if self.path is not None:
                out["path"] = self.path
            return out
        return {
            "kind": "network",
            "datagrams_per_s": self.datagrams_per_s,
            "payload_bytes": self.payload_bytes,
        }


class StressorHandle:
    """A running stressor. stop() is idempotent and leaves nothing behind."""

    def __init__(
        self,
        kind: str,
        requested: float,
        unit: str,
        procs: list[multiprocessing.Process],
        stop_event,
        achieved_fn: Callable[[], float],
        cleanup_fns: Sequence[Callable[[], None]] = (),
        failed_flag=None,
    ) -> None:
        self.kind = kind
        self.requested = requested
        self.unit = unit
        self._procs = procs
        self._stop_event = stop_event
        self._achieved_fn = achieved_fn
        self._cleanup_fns = list(cleanup_fns)
        self._failed_flag = failed_flag
        self._stopped = False
        self._final_achieved: float | None = None

    @property
    def running(self) -> bool:
        return not self._stopped and any(p.is_alive() for p in self._procs)

    @property
    def failed(self) -> bool:
        """True when the stressor hit a mid-run fault (e.g. a write error)."""
        return bool(self._failed_flag.value) if self._failed_flag is not None else False

    @property
    def pids(self) -> list[int]:
        return [p.pid for p in self._procs if p.pid is not None]

    def achieved(self) -> float:
        """Measured intensity, in the same unit as 'requested'."""
        if self._final_achieved is not None:
            return self._final_achieved
        return self._achieved_fn()

    def stop(self) -> None:
        if self._stopped:
            return
        self._final_achieved = self._achieved_fn()
        self._stop_event.set()
        for p in self._procs:
            p.join(timeout=3.0)
        for p in self._procs:
            if p.is_alive():
                p.terminate()
                p.join(timeout=2.0)
            if p.is_alive():
                p.kill()
                p.join(timeout=2.0)
        for fn in self._cleanup_fns:
            try:
                fn()
            except OSError:
                pass
        self._stopped = True

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "requested": self.requested,
            "achieved": self.achieved(),
            "unit": self.unit,
            "failed": self.failed,
        }


def _pin_to_core(core: int) -> None:
    try:
        os.sched_setaffinity(0, {core})
    except (AttributeError, OSError):
        pass  # pinning is best-effort; unavailable off Linux or in tight cgroups


def _cpu_duty_worker(stop_event, utilization_pct: float, busy_ns, core: int) -> None:
    """Spin for utilization_pct of each period, sleep the rest.

    Deadlines are absolute so the duty ratio cannot drift when a sleep
    overshoots; a period that falls behind resyncs instead of bursting to
    catch up.
    """
    _pin_to_core(core)
    busy_target = CPU_PERIOD_S * (utilization_pct / 100.0)
    next_period = time.perf_counter()
    while not stop_event.is_set():
        next_period += CPU_PERIOD_S
        if busy_target > 0.0:
            deadline = time.perf_counter() + busy_target
            # account CPU actually consumed, not the wall window: on an
            # oversubscribed core the spin is descheduled part of the time
            cpu0 = time.process_time_ns()
            while time.perf_counter() < deadline:
                pass
            busy_ns.value += time.process_time_ns() - cpu0
        remaining = next_period - time.perf_counter()
        if remaining > 0:
            time.sleep(remaining)
        else:
            next_period = time.perf_counter()


def _memory_touch_worker(stop_event, megabytes: int, ready) -> None:
    """Allocate the block, then keep one byte per page hot until stopped."""
    if megabytes == 0:
        ready.value = 1
        while not stop_event.is_set():
            time.sleep(0.05)
        return
    block = bytearray(megabytes * 1024 * 1024)
    page = 4096
    for i in range(0, len(block), page):
        block[i] = 1
    ready.value = 1
    while not stop_event.is_set():
        for i in range(0, len(block), page):
            block[i] = (block[i] + 1) & 0xFF
        # stop check once per sweep; a multi-GB sweep still finishes in
        # well under the handle's join timeout


def _disk_write_worker(stop_event, path_str: str, rate_mbps: float, bytes_written, failed) -> None:
    """Append 1 MiB blocks at the requested rate, flushing each to the device."""
    block = b"\x00" * (1 << 20)
    try:
        with open(path_str, "wb") as f:
            if rate_mbps <= 0.0:
                while not stop_event.is_set():
                    time.sleep(0.05)
                return
            interval = 1.0 / rate_mbps
            next_write = time.perf_counter()
            while not stop_event.is_set():
                f.write(block)
                f.flush()
                os.fsync(f.fileno())
                bytes_written.value += len(block)
                next_write += interval
                pause = next_write - time.perf_counter()
                if pause > 0:
                    time.sleep(pause)
                else:
                    next_write = time.perf_counter()
    except OSError:
        failed.value = 1


def _udp_flood_worker(
    stop_event, rate: float, payload_bytes: int, sent, received, ready
) -> None:
    """Send datagrams to a loopback sink in the same process and count arrivals."""
    sink = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sink.bind(("127.0.0.1", 0))
    sink.setblocking(False)
    try:
        sink.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 21)
    except OSError:
        pass
    sender = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sender.connect(sink.getsockname())
    sender.setblocking(False)
    payload = b"\x55" * payload_bytes
    ready.value = 1

    def drain() -> int:
        got = 0
        while True:
            try:
                sink.recv(MAX_UDP_PAYLOAD + 1)
            except (BlockingIOError, OSError):
                return got
            got += 1

    try:
        if rate <= 0.0:
            while not stop_event.is_set():
                time.sleep(0.05)
            return
        interval = 1.0 / rate
        next_send = time.perf_counter()
        local_sent = 0
        local_recv = 0
        while not stop_event.is_set():
            now = time.perf_counter()
            if next_send < now - 0.5:
                next_send = now  # fell far behind; skip instead of bursting
            burst = 0
            while next_send <= now and burst < 256:
                try:
                    sender.send(payload)
                    local_sent += 1
                except (BlockingIOError, OSError):
                    pass
                next_send += interval
                burst += 1
            local_recv += drain()
            sent.value += local_sent
            received.value += local_recv
            local_sent = 0
            local_recv = 0
            pause = next_send - time.perf_counter()
            if pause > 0:
                time.sleep(min(pause, 0.005))
        received.value += drain()
    finally:
        sender.close()
        sink.close()


def start_cpu_stress(utilization_pct: float, workers: int = 0) -> StressorHandle:
    """One duty-cycle spinner per worker, pinned round-robin across cores."""
    if not 0.0 <= utilization_pct <= 100.0:
        raise StressorError(f"utilization_pct {utilization_pct!r} outside [0, 100]")
    if workers < 0:
        raise StressorError("workers must be >= 0")
    ncores = os.cpu_count() or 1
    if workers == 0:
        workers = ncores
    stop_event = multiprocessing.Event()
    counters = []
    procs: list[multiprocessing.Process] = []
    started_at = time.perf_counter()
    try:
        for i in range(workers):
            busy = multiprocessing.Value("Q", 0)
            p = multiprocessing.Process(
                target=_cpu_duty_worker,
                args=(stop_event, utilization_pct, busy, i % ncores),
                daemon=True,
            )
            p.start()
            counters.append(busy)
            procs.append(p)
    except OSError as exc:
        stop_event.set()
        for p in procs:
            p.join(timeout=2.0)
        raise StressorError(f"cannot start cpu stress worker: {exc}") from exc

    def achieved() -> float:
        elapsed = time.perf_counter() - started_at
        if elapsed <= 0.0:
            return 0.0
        busy_s = sum(c.value for c in counters) / 1e9
        return 100.0 * busy_s / (elapsed * len(counters))

    return StressorHandle(
        kind="cpu",
        requested=utilization_pct,
        unit="pct",
        procs=procs,
        stop_event=stop_event,
        achieved_fn=achieved,
    )


def start_memory_stress(megabytes: int, override_cap: bool = False) -> StressorHandle:
    """Committed, continuously touched allocation in a child process.

    Requests above half of total RAM are refused unless override_cap is set;
    an allocation failure in the child surfaces as a startup error, never as
    a silent retry.
    """
    if megabytes < 0:
        raise StressorError("megabytes must be >= 0")
    cap_mb = int(psutil.virtual_memory().total * MEMORY_CAP_FRACTION / (1 << 20))
    if megabytes > cap_mb and not override_cap:
        raise StressorError(
            f"requested {megabytes} MB exceeds the safety cap of {cap_mb} MB "
            f"(half of total RAM); set override_cap to exceed it"
        )
    stop_event = multiprocessing.Event()
    ready = multiprocessing.Value("i", 0)
    p = multiprocessing.Process(
        target=_memory_touch_worker, args=(stop_event, megabytes, ready), daemon=True
    )
    p.start()
    # Wait for the first full touch; generous budget since committing pages
    # on a loaded host is slow.
    deadline = time.monotonic() + 60.0
    while time.monotonic() < deadline:
        if ready.value:
            break
        if not p.is_alive():
            stop_event.set()
            p.join(timeout=2.0)
            raise StressorError(
                f"memory stress worker died during allocation of {megabytes} MB "
                f"(exit code {p.exitcode})"
            )
        time.sleep(0.01)
    else:
        stop_event.set()
        p.join(timeout=2.0)
        if p.is_alive():
            p.kill()
        raise StressorError(f"memory stress worker failed to commit {megabytes} MB in time")

    procs = [p]

    def achieved() -> float:
        total_rss = 0
        for proc in procs:
            if proc.pid is None:
                continue
            try:
                total_rss += psutil.Process(proc.pid).memory_info().rss
            except psutil.Error:
                pass
        return total_rss / (1 << 20)

    return StressorHandle(
        kind="memory",
        requested=float(megabytes),
        unit="MB",
        procs=procs,
        stop_event=stop_event,
        achieved_fn=achieved,
    )


def start_disk_stress(rate_mbps: float, path: str | None = None) -> StressorHandle:
    """Paced writer appending flushed 1 MiB blocks to a scratch file.

    The scratch file lives under the scratch directory (or 'path' when given),
    is uniquely named, and is deleted when the handle stops. An unwritable
    location fails here, in the parent, before any child starts.
    """
    if rate_mbps < 0:
        raise StressorError("rate_mbps must be >= 0")
    base = Path(path) if path is not None else scratch_dir()
    try:
        base.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StressorError(f"cannot create scratch directory {base}: {exc}") from exc
    target = base / f"disk-stress-{uuid.uuid4().hex}.bin"
    try:
        target.touch(exist_ok=False)
    except OSError as exc:
        raise StressorError(f"scratch path {target} is not writable: {exc}") from exc

    stop_event = multiprocessing.Event()
    bytes_written = multiprocessing.Value("Q", 0)
    failed = multiprocessing.Value("i", 0)
    started_at = time.perf_counter()
    p = multiprocessing.Process(
        target=_disk_write_worker,
        args=(stop_event, str(target), rate_mbps, bytes_written, failed),
        daemon=True,
    )
    p.start()

    def achieved() -> float:
        elapsed = time.perf_counter() - started_at
        if elapsed <= 0.0:
            return 0.0
        return bytes_written.value / (1 << 20) / elapsed

    def cleanup() -> None:
        target.unlink(missing_ok=True)
        try:
            base.rmdir()  # only succeeds when nothing else lives there
        except OSError:
            pass

    return StressorHandle(
        kind="disk",
        requested=rate_mbps,
        unit="MB/s",
        procs=[p],
        stop_event=stop_event,
        achieved_fn=achieved,
        cleanup_fns=[cleanup],
        failed_flag=failed,
    )


def start_network_stress(datagrams_per_s: float, payload_bytes: int = 1024) -> StressorHandle:
    """Loopback UDP flood; the sink lives in the same child and counts arrivals."""
    if datagrams_per_s < 0:
        raise StressorError("datagrams_per_s must be >= 0")
    if not 1 <= payload_bytes <= MAX_UDP_PAYLOAD:
        raise StressorError(
            f"payload_bytes {payload_bytes} outside [1, {MAX_UDP_PAYLOAD}]"
        )
    stop_event = multiprocessing.Event()
    sent = multiprocessing.Value("Q", 0)
    received = multiprocessing.Value("Q", 0)
    ready = multiprocessing.Value("i", 0)
    started_at = time.perf_counter()
    p = multiprocessing.Process(
        target=_udp_flood_worker,
        args=(stop_event, datagrams_per_s, payload_bytes, sent, received, ready),
        daemon=True,
    )
    p.start()
    deadline = time.monotonic() + 10.0
    while time.monotonic() < deadline:
        if ready.value:
            break
        if not p.is_alive():
            raise StressorError(
                f"network stress worker died on startup (exit code {p.exitcode})"
            )
        time.sleep(0.005)
    else:
        stop_event.set()
        p.join(timeout=2.0)
        raise StressorError("network stress worker failed to open its sockets in time")

    def achieved() -> float:
        elapsed = time.perf_counter() - started_at
        if elapsed <= 0.0:
            return 0.0
        return received.value / elapsed

    return StressorHandle(
        kind="network",
        requested=datagrams_per_s,
        unit="datagrams/s",
        procs=[p],
        stop_event=stop_event,
        achieved_fn=achieved,
    )


def start_stressor(spec: StressorSpec) -> StressorHandle:
    if spec.kind == "cpu":
        return start_cpu_stress(spec.utilization_pct, workers=spec.workers)
    if spec.kind == "memory":
        return start_memory_stress(spec.megabytes, override_cap=spec.override_cap)
    if spec.kind == "disk":
        return start_disk_stress(spec.rate_mbps, path=spec.path)
    if spec.kind == "network":
        return start_network_stress(spec.datagrams_per_s, payload_bytes=spec.payload_bytes)
    raise StressorError(f"unknown stressor kind {spec.kind!r}")


@dataclass
class OrchestrationResult:
    value: object
    achieved: list[dict]


def orchestrate(
    specs: Iterable[StressorSpec],
    settle_ms: int,
    body: Callable[[list[StressorHandle]], object],
) -> OrchestrationResult:
    """Start every stressor, settle, run body(handles), then always stop them.

    A startup failure on the k-th stressor stops the k-1 already running and
    re-raises. With no specs the body runs immediately at zero load. Achieved
    intensities are sampled after the body returns, before teardown.
    """
    if settle_ms < 0:
        raise StressorError("settle_ms must be >= 0")
    handles: list[StressorHandle] = []
    try:
        for spec in specs:
            handles.append(start_stressor(spec))
        if handles and settle_ms > 0:
            time.sleep(settle_ms / 1000.0)
        value = body(handles)
        achieved = [h.describe() for h in handles]
        return OrchestrationResult(value=value, achieved=achieved)
    finally:
        for h in reversed(handles):
            h.stop()


def host_cpu_busy_fraction(interval_s: float = 1.0) -> float:
    """System-wide CPU busy fraction over the interval, in [0, 1]."""
    return psutil.cpu_percent(interval=interval_s) / 100.0
