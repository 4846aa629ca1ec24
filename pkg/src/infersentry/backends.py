"""Inference backends: deterministic fixture model, fault wrappers, external processes.

The fixture model is a tiny two-layer MLP evaluated in pure Python with a
fixed summation order, so repeated calls are bit-identical and the reference
profile captured from it subtracts to exactly zero. The wrappers inject the
two failure modes the harness exists to catch (output drift, added latency)
without touching anything else. The external adapter runs any executable that
speaks the newline-delimited JSON protocol over stdin/stdout.
"""

from __future__ import annotations

import json
import subprocess
import time
from dataclasses import dataclass
from typing import Sequence

from .metrics import SoftmaxVector, softmax
from .prng import MASK64, SplitMix64


class BackendError(RuntimeError):
    """Backend failed to start, answer, or shut down cleanly."""


class DriftCapError(BackendError):
    """Requested drift mass exceeds the activation's argmax probability."""


@dataclass(frozen=True)
class InputVector:
    """One test input; components in [0, 1], stable identity via input_index."""

    values: tuple[float, ...]
    input_index: int

    def __post_init__(self) -> None:
        for v in self.values:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"input component {v!r} outside [0, 1]")
        if self.input_index < 0:
            raise ValueError("input_index must be >= 0")


@dataclass(frozen=True)
class FixtureModelSpec:
    """Seeded layout of the fixture MLP. The seed fixes every parameter."""

    seed: int
    f_in: int = 64
    hidden: int = 32
    classes: int = 10

    def __post_init__(self) -> None:
        if min(self.f_in, self.hidden, self.classes) < 2:
            raise ValueError("f_in, hidden and classes must all be >= 2")


@dataclass(frozen=True)
class FixtureModel:
    spec: FixtureModelSpec
    w1: tuple[tuple[float, ...], ...]
    b1: tuple[float, ...]
    w2: tuple[tuple[float, ...], ...]
    b2: tuple[float, ...]


def generate_fixture_model(spec: FixtureModelSpec) -> FixtureModel:
    """Draw all parameters from a single splitmix64 stream.

    Consumption order is W1 row-major, then b1, then W2 row-major, then b2;
    each draw maps to [0, 1) and shifts to [-0.5, 0.5). The layout is therefore
    reproducible bit-for-bit from the seed alone, in any implementation.
    """
    stream = SplitMix64(spec.seed)

    def draw() -> float:
        return stream.next_unit() - 0.5

    w1 = tuple(tuple(draw() for _ in range(spec.f_in)) for _ in range(spec.hidden))
    b1 = tuple(draw() for _ in range(spec.hidden))
    w2 = tuple(tuple(draw() for _ in range(spec.hidden)) for _ in range(spec.classes))
    b2 = tuple(draw() for _ in range(spec.classes))
    return FixtureModel(spec=spec, w1=w1, b1=b1, w2=w2, b2=b2)


def generate_test_set(seed: int, count: int, f_in: int) -> list[InputVector]:
    """Deterministic input set: input i draws from a stream seeded (seed XOR i).

    Each input is regenerable individually, without replaying the whole set.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if f_in < 2:
        raise ValueError("f_in must be >= 2")
    inputs = []
    for i in range(count):
        stream = SplitMix64((seed ^ i) & MASK64)
        values = tuple(stream.next_unit() for _ in range(f_in))
        inputs.append(InputVector(values=values, input_index=i))
    return inputs


def infer_fixture(model: FixtureModel, inp: InputVector) -> tuple[float, ...]:
    """Forward pass of the fixture MLP: linear, ReLU, linear.

    Accumulation runs in ascending index order; with identical inputs the
    logits are bit-identical on every call, which is what the zero-deviation
    properties downstream lean on.
    """
    x = inp.values
    if len(x) != model.spec.f_in:
        raise BackendError(
            f"input width {len(x)} does not match model f_in {model.spec.f_in}"
        )
    hidden = []
    for row, bias in zip(model.w1, model.b1):
        acc = 0.0
        for w, v in zip(row, x):
            acc += w * v
        acc += bias
        hidden.append(acc if acc > 0.0 else 0.0)
    logits = []
    for row, bias in zip(model.w2, model.b2):
        acc = 0.0
        for w, h in zip(row, hidden):
            acc += w * h
        acc += bias
        logits.append(acc)
    return tuple(logits)


class Backend:
    """Single-consumer backend: one softmax vector per infer() call.

    start()/stop() bracket a measurement session; in-process backends need no
    setup so the defaults are no-ops.
    """

    classes: int = 0
    f_in: int = 0
    deterministic: bool = False

    def start(self) -> None:
        pass

    def stop(self) -> None:
        pass

    def infer(self, inp: InputVector) -> SoftmaxVector:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError


class FixtureBackend(Backend):
    """The seeded MLP behind the Backend interface."""

    deterministic = True

    def __init__(self, spec: FixtureModelSpec) -> None:
        self._model = generate_fixture_model(spec)
        self._spec = spec
        self.classes = spec.classes
        self.f_in = spec.f_in

    def infer(self, inp: InputVector) -> SoftmaxVector:
        return softmax(infer_fixture(self._model, inp))

    def descriptor(self) -> dict:
        return {
            "kind": "fixture",
            "seed": self._spec.seed,
            "f_in": self._spec.f_in,
            "hidden": self._spec.hidden,
            "classes": self._spec.classes,
        }


class StaticBackend(Backend):
    """Returns a fixed probability vector instantly; for harness calibration.

    Measuring a backend that does no work exposes the harness's own overhead
    inside the timed window.
    """

    deterministic = True

    def __init__(self, probs: Sequence[float], f_in: int = 2) -> None:
        self._vec = SoftmaxVector(tuple(float(p) for p in probs))
        self.classes = len(self._vec)
        self.f_in = f_in

    def infer(self, inp: InputVector) -> SoftmaxVector:
        return self._vec

    def descriptor(self) -> dict:
        return {"kind": "static", "probs": list(self._vec.probs), "f_in": self.f_in}


def _runner_up(probs: Sequence[float], top: int) -> int:
    """Largest component excluding top; ties resolve to the lowest index."""
    best = 1 if top == 0 else 0
    for k in range(len(probs)):
        if k == top:
            continue
        if probs[k] > probs[best]:
            best = k
    return best


class DriftBackend(Backend):
    """Moves probability mass mu from the top class to the runner-up.

    Against the unwrapped output the resulting deviation equals mu up to a
    couple of ulps of double rounding, so an exceedance decision at any
    threshold with more margin than that is sharp. An activation whose argmax
    probability cannot give up mu raises DriftCapError rather than leaving the
    simplex.
    """

    def __init__(self, inner: Backend, mu: float) -> None:
        if not 0.0 <= mu < 1.0:
            raise ValueError(f"drift mass {mu!r} outside [0, 1)")
        self._inner = inner
        self.mu = mu
        self.classes = inner.classes
        self.f_in = inner.f_in
        self.deterministic = inner.deterministic

    def start(self) -> None:
        self._inner.start()

    def stop(self) -> None:
        self._inner.stop()

    def infer(self, inp: InputVector) -> SoftmaxVector:
        vec = self._inner.infer(inp)
        if self.mu == 0.0:
            return vec
        probs = list(vec.probs)
        top = vec.argmax()
        if probs[top] < self.mu:
            raise DriftCapError(
                f"argmax probability {probs[top]:.6f} on input "
                f"{inp.input_index} is below drift mass {self.mu}"
            )
        runner = _runner_up(probs, top)
        probs[top] -= self.mu
        probs[runner] += self.mu
        return SoftmaxVector(tuple(probs))

    def descriptor(self) -> dict:
        return {"kind": "drift", "mu": self.mu, "inner": self._inner.descriptor()}


@dataclass(frozen=True)
class DelaySpec:
    """Pre-inference delay in nanoseconds; constant when lo == hi."""

    lo_ns: int
    hi_ns: int

    def __post_init__(self) -> None:
        if self.lo_ns < 0 or self.hi_ns < self.lo_ns:
            raise ValueError(f"invalid delay range [{self.lo_ns}, {self.hi_ns}] ns")

    @classmethod
    def constant(cls, ns: int) -> "DelaySpec":
        return cls(lo_ns=ns, hi_ns=ns)

    @classmethod
    def uniform(cls, lo_ns: int, hi_ns: int) -> "DelaySpec":
        return cls(lo_ns=lo_ns, hi_ns=hi_ns)


class JitterBackend(Backend):
    """Sleeps before each inner call; output bits pass through untouched."""

    def __init__(self, inner: Backend, delay: DelaySpec, seed: int = 0) -> None:
        self._inner = inner
        self._delay = delay
        self._seed = seed
        self._stream = SplitMix64(seed)
        self.classes = inner.classes
        self.f_in = inner.f_in
        self.deterministic = inner.deterministic

    def start(self) -> None:
        self._inner.start()

    def stop(self) -> None:
        self._inner.stop()

    def infer(self, inp: InputVector) -> SoftmaxVector:
        d = self._delay.lo_ns
        span = self._delay.hi_ns - self._delay.lo_ns
        if span > 0:
            d = self._delay.lo_ns + int(self._stream.next_unit() * span)
        if d > 0:
            time.sleep(d / 1e9)
        return self._inner.infer(inp)

    def descriptor(self) -> dict:
        return {
            "kind": "jitter",
            "lo_ns": self._delay.lo_ns,
            "hi_ns": self._delay.hi_ns,
            "seed": self._seed,
            "inner": self._inner.descriptor(),
        }


class ExternalBackend(Backend):
    """Adapter for a child process speaking newline-delimited JSON.

    Handshake: the harness sends {"hello": {"f_in": F}} and expects
    {"ready": {"classes": C}}. Each inference is one {"id": i, "input": [...]}
    request answered in order by {"id": i, "logits": [...]}; the id must echo.
    The timed window covers the full round trip, so IPC overhead is part of
    the measured latency by design. The child is spawned by start() and torn
    down by stop(); a crash mid-session aborts with a diagnostic naming the
    last successfully answered request.
    """

    def __init__(
        self,
        command: Sequence[str],
        f_in: int,
        deterministic: bool = False,
    ) -> None:
        if not command:
            raise ValueError("external backend command must be non-empty")
        if f_in < 2:
            raise ValueError("f_in must be >= 2")
        self._command = [str(c) for c in command]
        self.f_in = f_in
        self.classes = 0  # learned at handshake
        self.deterministic = deterministic
        self._proc: subprocess.Popen | None = None
        self._next_id = 0
        self._last_good: int | None = None

    def start(self) -> None:
        if self._proc is not None:
            raise BackendError("external backend already started")
        try:
            self._proc = subprocess.Popen(
                self._command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BackendError(
                f"cannot spawn external backend {self._command!r}: {exc}"
            ) from exc
        reply = self._round_trip({"hello": {"f_in": self.f_in}})
        ready = reply.get("ready")
        if not isinstance(ready, dict) or "classes" not in ready:
            self._fail(f"handshake reply missing 'ready': {reply!r}")
        classes = ready["classes"]
        if not isinstance(classes, int) or classes < 2:
            self._fail(f"handshake advertised invalid class count {classes!r}")
        self.classes = classes

    def infer(self, inp: InputVector) -> SoftmaxVector:
        if self._proc is None:
            raise BackendError("external backend not started")
        req_id = self._next_id
        self._next_id += 1
        reply = self._round_trip({"id": req_id, "input": list(inp.values)})
        if reply.get("id") != req_id:
            self._fail(f"response id {reply.get('id')!r} does not echo request id {req_id}")
        logits = reply.get("logits")
        if not isinstance(logits, list) or len(logits) != self.classes:
            self._fail(
                f"request {req_id}: expected {self.classes} logits, got {logits!r}"
            )
        vec = softmax(logits)
        self._last_good = req_id
        return vec

    def stop(self) -> None:
        proc = self._proc
        if proc is None:
            return
        self._proc = None
        try:
            if proc.stdin is not None:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=5.0)
        except subprocess.TimeoutExpired:
            proc.terminate()
            try:
                proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        if proc.returncode not in (0, None):
            raise BackendError(
                f"external backend exited with status {proc.returncode}"
            )

    def descriptor(self) -> dict:
        return {
            "kind": "external",
            "command": list(self._command),
            "f_in": self.f_in,
            "deterministic": self.deterministic,
        }

    def _round_trip(self, obj: dict) -> dict:
        proc = self._proc
        assert proc is not None and proc.stdin is not None and proc.stdout is not None
        try:
            proc.stdin.write(json.dumps(obj) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError):
            self._fail("child closed its stdin pipe")
        line = proc.stdout.readline()
        if not line:
            self._fail("child produced no response (process exited?)")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            self._fail(f"child wrote a non-JSON line: {line!r}")
        if not isinstance(reply, dict):
            self._fail(f"child reply is not an object: {reply!r}")
        return reply

    def _fail(self, msg: str) -> None:
        """Tear the child down and raise with the last good request id."""
        proc = self._proc
        self._proc = None
        if proc is not None:
            try:
                proc.kill()
                proc.wait(timeout=2.0)
            except (OSError, subprocess.TimeoutExpired):
                pass
        if self._last_good is None:
            context = "no request completed"
        else:
            context = f"last good request id {self._last_good}"
        raise BackendError(f"external backend failure ({context}): {msg}")


def wrap_drift(backend: Backend, mu: float) -> DriftBackend:
    return DriftBackend(backend, mu)


def wrap_jitter(backend: Backend, delay: DelaySpec, seed: int = 0) -> JitterBackend:
    return JitterBackend(backend, delay, seed=seed)


def _parse_delay(raw: dict) -> DelaySpec:
    if not isinstance(raw, dict):
        raise ValueError(f"delay must be an object, got {raw!r}")
    keys = set(raw)
    if keys == {"constant_ms"}:
        return DelaySpec.constant(round(float(raw["constant_ms"]) * 1e6))
    if keys == {"uniform_ms"}:
        pair = raw["uniform_ms"]
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
            raise ValueError(f"uniform_ms must be a [lo, hi] pair, got {pair!r}")
        return DelaySpec.uniform(round(float(pair[0]) * 1e6), round(float(pair[1]) * 1e6))
    raise ValueError(
        f"delay must have exactly one of 'constant_ms' or 'uniform_ms', got {sorted(keys)}"
    )


def build_backend(descriptor: dict, expect_f_in: int | None = None) -> Backend:
    """Construct a backend tree from its JSON descriptor.

    Raises ValueError on unknown kinds, missing keys, or an f_in that does not
    match what the experiment's test set will feed it. Construction never
    spawns processes; that is deferred to start().
    """
    if not isinstance(descriptor, dict):
        raise ValueError(f"backend descriptor must be an object, got {descriptor!r}")
    kind = descriptor.get("kind")
    if kind == "fixture":
        allowed = {"kind", "seed", "f_in", "hidden", "classes"}
        _reject_unknown(descriptor, allowed, "fixture backend")
        if "seed" not in descriptor:
            raise ValueError("fixture backend needs a 'seed'")
        spec = FixtureModelSpec(
            seed=int(descriptor["seed"]),
            f_in=int(descriptor.get("f_in", 64)),
            hidden=int(descriptor.get("hidden", 32)),
            classes=int(descriptor.get("classes", 10)),
        )
        backend = FixtureBackend(spec)
    elif kind == "static":
        _reject_unknown(descriptor, {"kind", "probs", "f_in"}, "static backend")
        backend = StaticBackend(descriptor["probs"], f_in=int(descriptor.get("f_in", 2)))
    elif kind == "drift":
        _reject_unknown(descriptor, {"kind", "mu", "inner"}, "drift wrapper")
        if "inner" not in descriptor or "mu" not in descriptor:
            raise ValueError("drift wrapper needs 'mu' and 'inner'")
        backend = DriftBackend(
            build_backend(descriptor["inner"], expect_f_in), float(descriptor["mu"])
        )
    elif kind == "jitter":
        _reject_unknown(descriptor, {"kind", "delay", "seed", "inner"}, "jitter wrapper")
        if "inner" not in descriptor or "delay" not in descriptor:
            raise ValueError("jitter wrapper needs 'delay' and 'inner'")
        backend = JitterBackend(
            build_backend(descriptor["inner"], expect_f_in),
            _parse_delay(descriptor["delay"]),
            seed=int(descriptor.get("seed", 0)),
        )
    elif kind == "external":
        _reject_unknown(
            descriptor, {"kind", "command", "f_in", "deterministic"}, "external backend"
        )
        if "command" not in descriptor or "f_in" not in descriptor:
            raise ValueError("external backend needs 'command' and 'f_in'")
        command = descriptor["command"]
        if not (isinstance(command, list) and command):
            raise ValueError(f"external command must be a non-empty list, got {command!r}")
        backend = ExternalBackend(
            command,
            f_in=int(descriptor["f_in"]),
            deterministic=bool(descriptor.get("deterministic", False)),
        )
    else:
        raise ValueError(f"unknown backend kind {kind!r}")
    if expect_f_in is not None and backend.f_in != expect_f_in:
        raise ValueError(
            f"backend expects f_in={backend.f_in} but the test set provides {expect_f_in}"
        )
    return backend


def _reject_unknown(descriptor: dict, allowed: set[str], what: str) -> None:
    unknown = sorted(set(descriptor) - allowed)
    if unknown:
        raise ValueError(f"{what} has unknown keys {unknown}")
