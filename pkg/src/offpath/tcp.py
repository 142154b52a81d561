"""Minimal TCP: handshake, windowed reassembly, client port policies.

Segment wire format: ``seq:u32 ack:u32 flags:u8`` followed by payload.
There is no retransmission, congestion control or MSS splitting; each
``send`` call becomes exactly one segment.
"""
from __future__ import annotations

import enum
import random
import struct
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

from .ports import PortAllocator, PortPolicy
from .simnet import SUMMARIZERS, Endpoint, Node, Packet, Proto, SimParams

_SEG = struct.Struct("!IIB")


class Flag(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    ACK = 0x10


class TcpState(enum.Enum):
    CLOSED = "Closed"
    SYN_SENT = "SynSent"
    SYN_RCVD = "SynRcvd"
    ESTABLISHED = "Established"


class SegmentResult(enum.Enum):
    ACCEPTED = "Accepted"
    OUT_OF_WINDOW = "OutOfWindow"
    TUPLE_MISMATCH = "TupleMismatch"
    BAD_ACK = "BadAck"
    NOT_ESTABLISHED = "NotEstablished"


class FourTuple(NamedTuple):
    client: Endpoint
    server: Endpoint

    def __str__(self) -> str:
        return f"{self.client}-{self.server}"

    @classmethod
    def parse(cls, text: str) -> "FourTuple":
        client, server = text.split("-")
        a, _, p = client.rpartition(":")
        b, _, q = server.rpartition(":")
        return cls(Endpoint(a, int(p)), Endpoint(b, int(q)))


@dataclass(frozen=True)
class TcpSegment:
    src: Endpoint
    dst: Endpoint
    seq: int
    ack: int
    flags: Flag
    payload: bytes = b""

    def encode(self) -> bytes:
        return _SEG.pack(self.seq, self.ack, int(self.flags)) + self.payload

    def packet(self) -> Packet:
        return Packet(self.src, self.dst, Proto.TCP, self.encode())

    @classmethod
    def decode(cls, packet: Packet) -> "TcpSegment":
        seq, ack, flags = _SEG.unpack_from(packet.payload)
        return cls(packet.src, packet.dst, seq, ack, Flag(flags), packet.payload[_SEG.size:])


def summarize(payload: bytes) -> str:
    seq, ack, flags = _SEG.unpack_from(payload)
    names = "".join(ch for f, ch in ((Flag.SYN, "S"), (Flag.ACK, "A"), (Flag.FIN, "F"),
                                     (Flag.RST, "R")) if flags & f)
    return f"seq={seq} ack={ack} flags={names or '-'} len={len(payload) - _SEG.size}"


SUMMARIZERS[Proto.TCP] = summarize


def seq_in_window(seq, rcv_nxt, wnd, mask):
    """True when ``seq`` falls in ``[rcv_nxt, rcv_nxt + wnd)`` modulo ``mask + 1``.

    Plain arithmetic only, so it also works elementwise on integer arrays.
    """
    return ((seq - rcv_nxt) & mask) < wnd


class TcpEndpoint:
    """One side of a connection.

    A data segment is accepted when its first sequence number lies inside
    the receive window; its whole payload is then buffered, even the part
    reaching past the right window edge.  Overlapping bytes are overwritten
    by whichever segment arrives last.
    """

    def __init__(self, local: Endpoint, remote: Endpoint, params: SimParams,
                 strict_ack: bool = False, is_client: bool = True):
        self.local = local
        self.remote = remote
        self.is_client = is_client
        self.mask = params.seq_space - 1
        self.rcv_wnd = params.wnd_size
        self.strict_ack = strict_ack
        self.state = TcpState.CLOSED
        self.iss = 0
        self.irs = 0
        self.snd_nxt = 0
        self.snd_una = 0
        self.rcv_nxt = 0
        self.stream_out = bytearray()
        self.results: Counter = Counter()
        self.app = None
        self._buf = bytearray()
        self._have = bytearray()

    @property
    def tuple(self) -> FourTuple:
        if self.is_client:
            return FourTuple(self.local, self.remote)
        return FourTuple(self.remote, self.local)

    @property
    def buffered(self) -> int:
        """Out-of-order bytes held past a gap."""
        return self._have.count(1)

    def _ack_ok(self, ack: int) -> bool:
        return ((ack - self.snd_una) & self.mask) <= ((self.snd_nxt - self.snd_una) & self.mask)

    def on_segment(self, seg: TcpSegment) -> SegmentResult:
        result = self._on_segment(seg)
        self.results[result] += 1
        return result

    def _on_segment(self, seg: TcpSegment) -> SegmentResult:
        if seg.src != self.remote or seg.dst != self.local:
            return SegmentResult.TUPLE_MISMATCH
        if self.state is not TcpState.ESTABLISHED:
            return SegmentResult.NOT_ESTABLISHED
        ack_ok = bool(seg.flags & Flag.ACK) and self._ack_ok(seg.ack)
        if self.strict_ack and not ack_ok:
            return SegmentResult.BAD_ACK
        off = (seg.seq - self.rcv_nxt) & self.mask
        if off >= self.rcv_wnd:
            return SegmentResult.OUT_OF_WINDOW
        if ack_ok:
            self.snd_una = seg.ack
        if seg.flags & Flag.RST:
            self.state = TcpState.CLOSED
            return SegmentResult.ACCEPTED
        data = seg.payload
        if data:
            end = off + len(data)
            if len(self._buf) < end:
                grow = end - len(self._buf)
                self._buf.extend(bytes(grow))
                self._have.extend(bytes(grow))
            self._buf[off:end] = data
            self._have[off:end] = b"\x01" * len(data)
            k = self._have.find(0)
            if k < 0:
                k = len(self._have)
            if k:
                self.stream_out += self._buf[:k]
                del self._buf[:k]
                del self._have[:k]
                self.rcv_nxt = (self.rcv_nxt + k) & self.mask
        if seg.flags & Flag.FIN:
            self.state = TcpState.CLOSED
        return SegmentResult.ACCEPTED

    def read_stream(self) -> bytes:
        """Consume the contiguous received bytes."""
        data = bytes(self.stream_out)
        self.stream_out.clear()
        return data


class TcpHost(Node):
    """A host with a TCP stack; subclasses add their own non-TCP handling."""

    def __init__(self, address: str, params: SimParams, rng: random.Random,
                 port_policy: PortPolicy | None = None, strict_ack: bool = False):
        super().__init__(address)
        self.params = params
        self.rng = rng
        self.strict_ack = strict_ack
        self.ports = PortAllocator(port_policy or PortPolicy.sequential(),
                                   params.port_space, rng)
        self.conns: dict[tuple[int, Endpoint], TcpEndpoint] = {}
        self.listeners: dict[int, object] = {}
        self.accepted: list[TcpEndpoint] = []
        self.stray = 0
        self._ports_in_use: Counter = Counter()

    def listen(self, port: int, app_factory) -> None:
        """``app_factory(endpoint)`` builds the per-connection application."""
        self.listeners[port] = app_factory

    def _register(self, ep: TcpEndpoint) -> None:
        self.conns[(ep.local.port, ep.remote)] = ep
        self._ports_in_use[ep.local.port] += 1

    def _unregister(self, ep: TcpEndpoint) -> None:
        if self.conns.pop((ep.local.port, ep.remote), None) is not None:
            self._ports_in_use[ep.local.port] -= 1
            if not self._ports_in_use[ep.local.port]:
                del self._ports_in_use[ep.local.port]

    def _emit(self, ep: TcpEndpoint, seq: int, flags: Flag, payload: bytes = b"") -> None:
        seg = TcpSegment(ep.local, ep.remote, seq, ep.rcv_nxt, flags, payload)
        self.send(seg.packet())

    def connection(self, four: FourTuple) -> TcpEndpoint | None:
        local, remote = (four.client, four.server) if four.client.address == self.address \
            else (four.server, four.client)
        return self.conns.get((local.port, remote))

    def open_connection(self, server: Endpoint, app=None) -> FourTuple:
        """Allocate a client port, draw an ISN and send the SYN."""
        in_use = set(self._ports_in_use) | set(self.listeners)
        port = self.ports.allocate(in_use)
        ep = TcpEndpoint(Endpoint(self.address, port), server, self.params,
                         strict_ack=self.strict_ack, is_client=True)
        ep.app = app
        ep.iss = self.rng.randrange(self.params.seq_space)
        ep.snd_una = ep.iss
        ep.snd_nxt = (ep.iss + 1) & ep.mask
        ep.state = TcpState.SYN_SENT
        self._register(ep)
        self._emit(ep, ep.iss, Flag.SYN)
        return ep.tuple

    def send_data(self, ep: TcpEndpoint, data: bytes) -> None:
        if ep.state is not TcpState.ESTABLISHED:
            raise ConnectionError(f"connection {ep.tuple} is {ep.state.value}")
        self._emit(ep, ep.snd_nxt, Flag.ACK, data)
        ep.snd_nxt = (ep.snd_nxt + len(data)) & ep.mask

    def close(self, ep: TcpEndpoint) -> None:
        if ep.state is TcpState.ESTABLISHED:
            self._emit(ep, ep.snd_nxt, Flag.FIN | Flag.ACK)
        ep.state = TcpState.CLOSED
        self._unregister(ep)

    def reset(self, ep: TcpEndpoint) -> None:
        self._emit(ep, ep.snd_nxt, Flag.RST | Flag.ACK)
        ep.state = TcpState.CLOSED
        self._unregister(ep)

    def receive(self, packet: Packet) -> None:
        if packet.proto is Proto.TCP:
            self._on_tcp(packet)
        else:
            self.on_other(packet)

    def on_other(self, packet: Packet) -> None:
        pass

    def _on_tcp(self, packet: Packet) -> None:
        try:
            seg = TcpSegment.decode(packet)
        except struct.error:
            self.stray += 1
            return
        ep = self.conns.get((seg.dst.port, seg.src))
        if ep is None:
            factory = self.listeners.get(seg.dst.port)
            if factory is not None and seg.flags & Flag.SYN and not seg.flags & Flag.ACK:
                self._accept(seg, factory)
            else:
                self.stray += 1
            return
        if ep.state is TcpState.SYN_SENT:
            if seg.flags & Flag.SYN and seg.flags & Flag.ACK and seg.ack == ep.snd_nxt:
                ep.irs = seg.seq
                ep.rcv_nxt = (seg.seq + 1) & ep.mask
                ep.snd_una = seg.ack
                ep.state = TcpState.ESTABLISHED
                self._emit(ep, ep.snd_nxt, Flag.ACK)
                _notify(ep, "on_established")
            else:
                self.stray += 1
            return
        if ep.state is TcpState.SYN_RCVD:
            if seg.flags & Flag.ACK and seg.ack == ep.snd_nxt and not seg.flags & Flag.SYN:
                ep.snd_una = seg.ack
                ep.state = TcpState.ESTABLISHED
                _notify(ep, "on_established")
                if not seg.payload and not seg.flags & (Flag.FIN | Flag.RST):
                    return
            else:
                self.stray += 1
                return
        before = len(ep.stream_out)
        result = ep.on_segment(seg)
        if result is not SegmentResult.ACCEPTED:
            return
        if len(ep.stream_out) > before:
            _notify(ep, "on_data")
        if ep.state is TcpState.CLOSED:
            self._unregister(ep)
            _notify(ep, "on_closed")

    def _accept(self, seg: TcpSegment, factory) -> None:
        ep = TcpEndpoint(seg.dst, seg.src, self.params, strict_ack=self.strict_ack,
                         is_client=False)
        ep.irs = seg.seq
        ep.rcv_nxt = (seg.seq + 1) & ep.mask
        ep.iss = self.rng.randrange(self.params.seq_space)
        ep.snd_una = ep.iss
        ep.snd_nxt = (ep.iss + 1) & ep.mask
        ep.state = TcpState.SYN_RCVD
        self._register(ep)
        self.accepted.append(ep)
        ep.app = factory(ep)
        self._emit(ep, ep.iss, Flag.SYN | Flag.ACK)


def _notify(ep: TcpEndpoint, event: str) -> None:
    handler = getattr(ep.app, event, None)
    if handler is not None:
        handler(ep)
