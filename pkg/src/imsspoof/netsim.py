"""Deterministic discrete-event datagram fabric and routing-table text.

Everything runs on one virtual clock in integer milliseconds. Datagrams and
timers share a single heap keyed on ``(time, sequence)`` so that two events at
the same instant fire in the order they were scheduled.
"""

from __future__ import annotations

import heapq
import random
import re
from dataclasses import dataclass
from typing import Callable, Optional

DEFAULT_LATENCY_MS = 50


class BindError(RuntimeError):
    pass


class RoutingTableError(ValueError):
    pass


@dataclass
class SimClock:
    now: int = 0

    def advance(self, t: int) -> None:
        if t < self.now:
            raise ValueError(f"clock cannot go back from {self.now} to {t}")
        self.now = t


@dataclass(frozen=True)
class Datagram:
    src_addr: str
    src_port: int
    dst_addr: str
    dst_port: int
    payload: bytes
    deliver_at: int = 0
    sent_at: int = 0
    tag: str = ""


Handler = Callable[[Datagram], None]


def _hostport(addr: str, port: int) -> str:
    return f"[{addr}]:{port}" if ":" in addr else f"{addr}:{port}"


def _default_tag(payload: bytes) -> str:
    first = payload.split(b"\r\n", 1)[0][:40]
    words = first.decode("latin-1").split(" ")
    if words and words[0] == "SIP/2.0" and len(words) > 1:
        return words[1]
    return words[0] if words and words[0] else "data"


class Fabric:
    """Single-threaded event loop carrying datagrams between bound endpoints."""

    def __init__(
        self,
        seed: int = 0,
        latency_ms: int = DEFAULT_LATENCY_MS,
        jitter_ms: int = 0,
        link_latency: Optional[dict[tuple[str, str], int]] = None,
    ) -> None:
        self.clock = SimClock()
        self.rng = random.Random(seed)
        self.latency_ms = latency_ms
        self.jitter_ms = jitter_ms
        self.link_latency = dict(link_latency or {})
        self._heap: list[tuple[int, int, str, object]] = []
        self._seq = 0
        self._endpoints: dict[tuple[str, int], tuple[int, Handler]] = {}
        self._next_endpoint_id = 1
        self.log: list[str] = []
        self.sent = 0
        self.delivered = 0
        self.dropped = 0

    @property
    def now(self) -> int:
        return self.clock.now

    def register_endpoint(self, addr: str, port: int, handler: Handler) -> int:
        key = (addr, port)
        if key in self._endpoints:
            raise BindError(f"{_hostport(addr, port)} already bound")
        eid = self._next_endpoint_id
        self._next_endpoint_id += 1
        self._endpoints[key] = (eid, handler)
        return eid

    bind = register_endpoint

    def unbind(self, addr: str, port: int) -> None:
        self._endpoints.pop((addr, port), None)

    def is_bound(self, addr: str, port: int) -> bool:
        return (addr, port) in self._endpoints

    def free_port(self, addr: str, lo: int = 32768, hi: int = 60999) -> int:
        """A random unbound port on ``addr`` drawn from the fabric RNG."""
        for _ in range(hi - lo + 1):
            port = self.rng.randint(lo, hi)
            if (addr, port) not in self._endpoints:
                return port
        raise BindError(f"no free port on {addr}")

    def _push(self, t: int, kind: str, item: object) -> None:
        heapq.heappush(self._heap, (t, self._seq, kind, item))
        self._seq += 1

    def send_datagram(
        self,
        src_addr: str,
        src_port: int,
        dst_addr: str,
        dst_port: int,
        payload: bytes,
        tag: Optional[str] = None,
    ) -> Datagram:
        latency = self.link_latency.get((src_addr, dst_addr), self.latency_ms)
        if self.jitter_ms:
            latency += self.rng.randint(0, self.jitter_ms)
        d = Datagram(
            src_addr,
            src_port,
            dst_addr,
            dst_port,
            payload,
            deliver_at=self.now + latency,
            sent_at=self.now,
            tag=tag if tag is not None else _default_tag(payload),
        )
        self.sent += 1
        self._push(d.deliver_at, "dgram", d)
        return d

    def call_at(self, t: int, fn: Callable[..., None], *args) -> None:
        if t < self.now:
            raise ValueError(f"cannot schedule at {t}, now is {self.now}")
        self._push(t, "timer", (fn, args))

    def call_later(self, delay: int, fn: Callable[..., None], *args) -> None:
        self.call_at(self.now + max(delay, 0), fn, *args)

    def _deliver(self, d: Datagram) -> None:
        entry = self._endpoints.get((d.dst_addr, d.dst_port))
        line = f"t={d.deliver_at} {_hostport(d.src_addr, d.src_port)} -> {_hostport(d.dst_addr, d.dst_port)} {len(d.payload)} bytes {d.tag}"
        if entry is None:
            self.dropped += 1
            self.log.append(line + " [dropped]")
            return
        self.delivered += 1
        self.log.append(line)
        entry[1](d)

    def step(self) -> bool:
        if not self._heap:
            return False
        t, _, kind, item = heapq.heappop(self._heap)
        self.clock.advance(t)
        if kind == "dgram":
            self._deliver(item)  # type: ignore[arg-type]
        else:
            fn, args = item  # type: ignore[misc]
            fn(*args)
        return True

    def run_until(self, t: int) -> int:
        """Process every event with timestamp <= t; returns the number processed."""
        count = 0
        while self._heap and self._heap[0][0] <= t:
            self.step()
            count += 1
        if t > self.now:
            self.clock.advance(t)
        return count

    def run(self, limit: Optional[int] = None) -> int:
        count = 0
        while self._heap and (limit is None or self._heap[0][0] <= limit):
            self.step()
            count += 1
        return count

    @property
    def pending(self) -> int:
        return len(self._heap)


@dataclass(frozen=True)
class RouteEntry:
    prefix: str
    via: str
    dev: str
    metric: Optional[int] = None


_ROUTE_RE = re.compile(r"^(\S+) via (\S+) dev (\S+)(?: metric (\d+))?$")


def render_routing_table(entries: list[RouteEntry]) -> str:
    lines = []
    for e in entries:
        line = f"{e.prefix} via {e.via} dev {e.dev}"
        if e.metric is not None:
            line += f" metric {e.metric}"
        lines.append(line)
    return "\n".join(lines) + ("\n" if lines else "")


def parse_routing_table(text: str) -> list[RouteEntry]:
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        m = _ROUTE_RE.match(line)
        if m is None:
            raise RoutingTableError(f"line {lineno}: cannot parse route {line!r}")
        metric = m.group(4)
        entries.append(RouteEntry(m.group(1), m.group(2), m.group(3), int(metric) if metric else None))
    defaults = sum(1 for e in entries if e.prefix == "default")
    if defaults != 1:
        raise RoutingTableError(f"expected exactly one default route, found {defaults}")
    return entries


class EventLog:
    """Semantic events (``t=<ms> <component>: <text>``) plus named counters."""

    def __init__(self) -> None:
        self.entries: list[str] = []
        self.counters: dict[str, int] = {}

    def record(self, t: int, component: str, text: str) -> None:
        self.entries.append(f"t={t} {component}: {text}")

    def count(self, name: str, n: int = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + n

    def get(self, name: str) -> int:
        return self.counters.get(name, 0)
