"""The victim's client machine: TCP stack, stub resolver and browser."""
from __future__ import annotations

import random

from .dns import StubResolver
from .http import Browser
from .ports import PortPolicy
from .simnet import Endpoint, Packet, Proto, SimParams
from .tcp import TcpHost


class ClientHost(TcpHost):
    def __init__(self, address: str, params: SimParams, rng: random.Random,
                 hosts: dict[str, str], resolver: Endpoint | None = None,
                 port_policy: PortPolicy | None = None, strict_ack: bool = False):
        super().__init__(address, params, rng, port_policy, strict_ack)
        self.browser = Browser(self, hosts)
        self.stub = StubResolver(self, resolver, rng) if resolver is not None else None

    def on_other(self, packet: Packet) -> None:
        if packet.proto is Proto.DNS and self.stub is not None:
            self.stub.on_packet(packet)
