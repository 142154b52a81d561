"""NAT device with per-destination (sequential) and fully random port allocation."""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Callable, NamedTuple

from .ports import NoFreePort, uniform_free_port
from .simnet import Endpoint, Packet, Proto, SimParams


class NatPolicy(enum.Enum):
    PER_DESTINATION = "per_destination"
    FULLY_RANDOM = "fully_random"


class InboundMode(enum.Enum):
    SYMMETRIC = "symmetric"      # src endpoint must equal the mapping's destination
    ADDRESS = "address"          # src address must equal the mapping's destination address
    FULL_CONE = "full_cone"      # any src reaching the external port


class PortSpaceExhausted(NoFreePort):
    pass


class NatTupleKey(NamedTuple):
    src: Endpoint
    dst: Endpoint
    proto: Proto


@dataclass
class NatMapping:
    key: NatTupleKey
    external_port: int
    last_used: int


class Nat:
    def __init__(self, address: str, params: SimParams, rng: random.Random,
                 policy: NatPolicy = NatPolicy.PER_DESTINATION,
                 shared_counter: bool = True,
                 inbound: InboundMode = InboundMode.ADDRESS,
                 idle_timeout: int | None = None):
        self.address = address
        self.space = params.port_space
        self.rng = rng
        self.policy = policy
        self.shared_counter = shared_counter
        self.inbound = inbound
        self.idle_timeout = idle_timeout
        self.clock: Callable[[], int] = lambda: 0
        self.mappings: dict[NatTupleKey, NatMapping] = {}
        self.allocations: list[tuple[int, NatTupleKey, int]] = []
        self.inbound_drops = 0
        self._by_dest: dict[tuple, dict[int, NatMapping]] = {}
        self._by_port: dict[int, list[NatMapping]] = {}
        self._counters: dict[tuple, int] = {}

    def _live(self, m: NatMapping, now: int) -> bool:
        return self.idle_timeout is None or now - m.last_used < self.idle_timeout

    def _expire(self, m: NatMapping) -> None:
        del self.mappings[m.key]
        del self._by_dest[(m.key.dst, m.key.proto)][m.external_port]
        self._by_port[m.external_port].remove(m)

    def _used_ports(self, dest: tuple, now: int) -> dict[int, NatMapping]:
        used = self._by_dest.setdefault(dest, {})
        if self.idle_timeout is not None:
            for m in [m for m in used.values() if not self._live(m, now)]:
                self._expire(m)
        return used

    def allocate_external_port(self, key: NatTupleKey) -> int:
        now = self.clock()
        dest = (key.dst, key.proto)
        used = self._used_ports(dest, now)
        if len(used) >= self.space:
            raise PortSpaceExhausted(f"all {self.space} ports toward {key.dst} are live")
        if self.policy is NatPolicy.FULLY_RANDOM:
            return uniform_free_port(self.rng, self.space, used)
        counter = dest if self.shared_counter else (key.src.address, *dest)
        prev = self._counters.get(counter)
        if prev is None:
            port = uniform_free_port(self.rng, self.space, used)
        else:
            port = (prev + 1) % self.space
            while port in used:
                port = (port + 1) % self.space
        self._counters[counter] = port
        return port

    def lookup(self, key: NatTupleKey) -> NatMapping | None:
        m = self.mappings.get(key)
        if m is not None and not self._live(m, self.clock()):
            self._expire(m)
            return None
        return m

    def translate_outbound(self, packet: Packet) -> Packet:
        key = NatTupleKey(packet.src, packet.dst, packet.proto)
        now = self.clock()
        m = self.lookup(key)
        if m is None:
            port = self.allocate_external_port(key)
            m = NatMapping(key, port, now)
            self.mappings[key] = m
            self._by_dest[(key.dst, key.proto)][port] = m
            self._by_port.setdefault(port, []).append(m)
            self.allocations.append((now, key, port))
        m.last_used = now
        return packet._replace(src=Endpoint(self.address, m.external_port))

    def translate_inbound(self, packet: Packet) -> Packet | None:
        """Rewrite toward the internal host, or ``None`` when nothing matches."""
        now = self.clock()
        for m in self._by_port.get(packet.dst.port, ()):
            if m.key.proto is not packet.proto or not self._live(m, now):
                continue
            if self.inbound is InboundMode.SYMMETRIC:
                ok = packet.src == m.key.dst
            elif self.inbound is InboundMode.ADDRESS:
                ok = packet.src.address == m.key.dst.address
            else:
                ok = True
            if ok:
                m.last_used = now
                return packet._replace(dst=m.key.src)
        self.inbound_drops += 1
        return None

    def external_port_of(self, src: Endpoint, dst: Endpoint, proto: Proto) -> int | None:
        m = self.mappings.get(NatTupleKey(src, dst, proto))
        return None if m is None else m.external_port
