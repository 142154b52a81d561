"""Deterministic tick-based packet network.

Every node sits one hop from every other node, optionally behind a single
NAT device.  Delivery latency is a fixed number of ticks and packets that
become due in the same tick are delivered in the order they were enqueued.
Only nodes flagged ``can_spoof`` may put a foreign address in ``src``.
"""
from __future__ import annotations

import enum
import random
import zlib
from collections import Counter, deque
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np


class Proto(enum.Enum):
    DNS = "DNS"
    TCP = "TCP"
    RAW = "RAW"


class Endpoint(NamedTuple):
    address: str
    port: int

    def __str__(self) -> str:
        return f"{self.address}:{self.port}"


class Packet(NamedTuple):
    src: Endpoint
    dst: Endpoint
    proto: Proto
    payload: bytes
    send_tick: int = 0


@dataclass(frozen=True)
class SimParams:
    """Field widths and timing for one simulation.

    The real protocols use 16-bit ports, 16-bit DNS transaction IDs and
    32-bit TCP sequence numbers; shrinking the widths keeps every search
    space small enough to brute-force on a laptop.
    """

    port_bits: int = 16
    txid_bits: int = 16
    seq_bits: int = 32
    wnd_size: int = 1 << 14
    latency_ticks: int = 1
    loss: float = 0.0

    def __post_init__(self):
        if not 2 <= self.port_bits <= 16:
            raise ValueError(f"port_bits must be in [2, 16], got {self.port_bits}")
        if not 2 <= self.txid_bits <= 16:
            raise ValueError(f"txid_bits must be in [2, 16], got {self.txid_bits}")
        if not 8 <= self.seq_bits <= 32:
            raise ValueError(f"seq_bits must be in [8, 32], got {self.seq_bits}")
        if not 1 <= self.wnd_size < (1 << self.seq_bits):
            raise ValueError(f"wnd_size must be in [1, 2^seq_bits), got {self.wnd_size}")
        if self.latency_ticks < 1:
            raise ValueError("latency_ticks must be >= 1")
        if not 0.0 <= self.loss < 1.0:
            raise ValueError("loss must be in [0, 1)")

    @property
    def port_space(self) -> int:
        return 1 << self.port_bits

    @property
    def txid_space(self) -> int:
        return 1 << self.txid_bits

    @property
    def seq_space(self) -> int:
        return 1 << self.seq_bits


class SpoofDenied(Exception):
    """A node without spoofing capability used a foreign source address."""


def seeded_rng(seed: int, stream: str = "") -> random.Random:
    """Independent deterministic stream for ``(seed, stream)``.

    Streams with different names are statistically independent, so adding
    draws to one component never perturbs another.
    """
    key = [seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(stream.encode())]
    state = np.random.SeedSequence(key).generate_state(4, dtype=np.uint64)
    return random.Random(int.from_bytes(state.tobytes(), "little"))


# Per-protocol one-line summaries for the trace log; protocol modules
# register theirs on import.
SUMMARIZERS: dict[Proto, Callable[[bytes], str]] = {
    Proto.RAW: lambda payload: f"len={len(payload)} data={payload[:16].hex()}",
}


def summarize(packet: Packet) -> str:
    fn = SUMMARIZERS.get(packet.proto)
    if fn is not None:
        try:
            return fn(packet.payload)
        except Exception:
            pass
    return f"len={len(packet.payload)}"


class TraceEvent(NamedTuple):
    tick: int
    kind: str
    src: Endpoint
    dst: Endpoint
    proto: Proto
    summary: str

    def line(self) -> str:
        return "\t".join((str(self.tick), self.kind, str(self.src), str(self.dst),
                          self.proto.value, self.summary))

    @classmethod
    def parse(cls, line: str) -> "TraceEvent":
        tick, kind, src, dst, proto, summary = line.rstrip("\n").split("\t", 5)
        return cls(int(tick), kind, _parse_endpoint(src), _parse_endpoint(dst),
                   Proto(proto), summary)


def _parse_endpoint(text: str) -> Endpoint:
    address, _, port = text.rpartition(":")
    return Endpoint(address, int(port))


class Node:
    """Anything with an address that packets can be delivered to."""

    can_spoof = False
    kind = "host"

    def __init__(self, address: str):
        self.address = address
        self.net: Network | None = None

    def send(self, packet: Packet) -> None:
        self.net.schedule_send(self.address, packet)

    def receive(self, packet: Packet) -> None:
        pass

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.address}>"


class Network:
    def __init__(self, params: SimParams, seed: int = 0, trace: bool = False):
        self.params = params
        self.seed = seed
        self.now = 0
        self.nodes: dict[str, Node] = {}
        self.internal: set[str] = set()
        self.nat = None
        self.tracing = trace
        self.events: list[TraceEvent] = []
        self.enqueued = 0
        self.delivered = 0
        self.dropped = 0
        self.drops: Counter = Counter()
        self.sent_by: Counter = Counter()
        self._queue: deque = deque()
        self._latency = params.latency_ticks
        self._port_space = params.port_space
        self._loss_rng = seeded_rng(seed, "loss") if params.loss else None

    def rng(self, stream: str) -> random.Random:
        return seeded_rng(self.seed, stream)

    def attach(self, node: Node, internal: bool = False) -> Node:
        if node.address in self.nodes:
            raise ValueError(f"duplicate address {node.address}")
        self.nodes[node.address] = node
        node.net = self
        if internal:
            self.internal.add(node.address)
        return node

    def attach_nat(self, nat) -> None:
        self.nat = nat
        nat.clock = lambda: self.now

    @property
    def in_flight(self) -> int:
        return len(self._queue)

    @property
    def idle(self) -> bool:
        return not self._queue

    def schedule_send(self, sender: str, packet: Packet) -> None:
        if packet.src.address != sender and not self.nodes[sender].can_spoof:
            raise SpoofDenied(f"{sender} may not send as {packet.src.address}")
        m = self._port_space
        if not (0 <= packet.src.port < m and 0 <= packet.dst.port < m):
            raise ValueError(f"port outside {self.params.port_bits}-bit range: {packet}")
        if packet.send_tick != self.now:
            packet = packet._replace(send_tick=self.now)
        if (self.nat is not None and sender in self.internal
                and packet.dst.address not in self.internal):
            packet = self.nat.translate_outbound(packet)
        self._queue.append((self.now + self._latency, sender, packet))
        self.enqueued += 1
        self.sent_by[sender] += 1
        if self.tracing:
            self._record("send", packet, f"by={sender} " + summarize(packet))

    def schedule_batch(self, sender: str, packets: list[Packet]) -> None:
        """Same contract as :meth:`schedule_send` for many packets at once."""
        if self.tracing or (self.nat is not None and sender in self.internal):
            for packet in packets:
                self.schedule_send(sender, packet)
            return
        spoofer = self.nodes[sender].can_spoof
        m = self._port_space
        now = self.now
        for packet in packets:
            if not spoofer and packet.src.address != sender:
                raise SpoofDenied(f"{sender} may not send as {packet.src.address}")
            if not (0 <= packet.src.port < m and 0 <= packet.dst.port < m):
                raise ValueError(f"port outside {self.params.port_bits}-bit range: {packet}")
        due = now + self._latency
        self._queue.extend([(due, sender, p if p.send_tick == now else p._replace(send_tick=now))
                            for p in packets])
        self.enqueued += len(packets)
        self.sent_by[sender] += len(packets)

    def step(self) -> list[tuple[str, Packet]]:
        self.now += 1
        now = self.now
        queue = self._queue
        deliveries: list[tuple[str, Packet]] = []
        if not queue or queue[0][0] > now:
            return deliveries
        if self.nat is None and self._loss_rng is None and not self.tracing:
            # hot path for large floods: plain routing, nothing to record
            nodes = self.nodes
            popleft = queue.popleft
            append = deliveries.append
            n = 0
            try:
                while queue and queue[0][0] <= now:
                    packet = popleft()[2]
                    dst = packet.dst.address
                    node = nodes.get(dst)
                    if node is None:
                        self._drop(packet, "no-route")
                        continue
                    n += 1
                    append((dst, packet))
                    node.receive(packet)
            finally:
                self.delivered += n
            return deliveries
        while queue and queue[0][0] <= now:
            _, sender, packet = queue.popleft()
            if self._loss_rng is not None and self._loss_rng.random() < self.params.loss:
                self._drop(packet, "loss")
                continue
            dst = packet.dst.address
            if self.nat is not None:
                if dst == self.nat.address:
                    translated = self.nat.translate_inbound(packet)
                    if translated is None:
                        self._drop(packet, "nat")
                        continue
                    packet = translated
                    dst = packet.dst.address
                elif dst in self.internal and sender not in self.internal:
                    self._drop(packet, "unroutable")
                    continue
            node = self.nodes.get(dst)
            if node is None:
                self._drop(packet, "no-route")
                continue
            self.delivered += 1
            if self.tracing:
                self._record("deliver", packet, f"at={dst} " + summarize(packet))
            deliveries.append((dst, packet))
            node.receive(packet)
        return deliveries

    def run(self, max_ticks: int = 10_000, until: Callable[[], bool] | None = None) -> int:
        """Step until the queue drains (or ``until()`` holds); returns ticks used."""
        start = self.now
        while self.now - start < max_ticks:
            if until is not None and until():
                break
            if until is None and not self._queue:
                break
            self.step()
        return self.now - start

    def advance(self, ticks: int) -> None:
        for _ in range(ticks):
            self.step()

    def _drop(self, packet: Packet, reason: str) -> None:
        self.dropped += 1
        self.drops[reason] += 1
        if self.tracing:
            self._record("drop", packet, f"reason={reason} " + summarize(packet))

    def _record(self, kind: str, packet: Packet, summary: str) -> None:
        self.events.append(TraceEvent(self.now, kind, packet.src, packet.dst,
                                      packet.proto, summary))

    def trace_lines(self) -> list[str]:
        return [e.line() for e in self.events]

    def note(self, kind: str, text: str) -> None:
        """Record a non-packet event (attack phase markers and the like)."""
        if self.tracing:
            nowhere = Endpoint("-", 0)
            self.events.append(TraceEvent(self.now, kind, nowhere, nowhere, Proto.RAW, text))
