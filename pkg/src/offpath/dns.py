"""Recursive resolver, authoritative name server and stub client.

Wire format (all integers big-endian)::

    txid:u16  flags:u8  qname
    [response only]  has_answer:u8 [record]  has_referral:u8 [record]

    name   := len:u8 bytes
    record := name address:name ttl:u32

flags bit 0 marks a response, bit 1 marks NXDOMAIN.
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

DNS_PORT = 53

_RESPONSE = 0x01
_NXDOMAIN = 0x02
_HEAD = struct.Struct("!HBB")


class MalformedDns(ValueError):
    pass


class DuplicatePending(Exception):
    """A query for the same (qname, nameserver) is already in flight."""

    def __init__(self, pending: "PendingRequest"):
        super().__init__(f"query for {pending.qname} already pending")
        self.pending = pending


class RejectReason(enum.Enum):
    NO_PENDING = "NoPending"
    TXID_MISMATCH = "TxidMismatch"
    PORT_MISMATCH = "PortMismatch"
    SOURCE_MISMATCH = "SourceMismatch"
    QNAME_MISMATCH = "QnameMismatch"

    # members are singletons; identity hashing keeps reject counting cheap
    __hash__ = object.__hash__


class Record(NamedTuple):
    name: str
    address: str
    ttl: int


@dataclass(frozen=True)
class DnsQuery:
    qname: str
    txid: int
    src: Endpoint
    dst: Endpoint


@dataclass(frozen=True)
class DnsResponse:
    txid: int
    qname: str
    answer: Record | None
    referral: Record | None
    src: Endpoint
    dst: Endpoint
    nxdomain: bool = False

    def __post_init__(self):
        if self.answer is None and self.referral is None and not self.nxdomain:
            raise ValueError("response needs an answer, a referral, or NXDOMAIN")


@dataclass
class CacheEntry:
    name: str
    address: str
    ttl_ticks: int
    inserted_at: int

    def fresh(self, now: int) -> bool:
        return now < self.inserted_at + self.ttl_ticks


@dataclass
class PendingRequest:
    qname: str
    txid: int
    resolver_port: int
    nameserver: Endpoint
    client: Endpoint | None
    zone: str = ""
    client_txid: int = 0
    sent_at: int = 0


def _put_name(out: bytearray, name: str) -> None:
    raw = name.encode()
    if len(raw) > 255:
        raise ValueError(f"name too long: {name!r}")
    out.append(len(raw))
    out += raw


def _get_name(buf: bytes, off: int) -> tuple[str, int]:
    n = buf[off]
    end = off + 1 + n
    if end > len(buf):
        raise MalformedDns("truncated name")
    return buf[off + 1:end].decode(), end


def _put_record(out: bytearray, rec: Record | None) -> None:
    if rec is None:
        out.append(0)
        return
    out.append(1)
    _put_name(out, rec.name)
    _put_name(out, rec.address)
    out += rec.ttl.to_bytes(4, "big")


def _get_record(buf: bytes, off: int) -> tuple[Record | None, int]:
    flag = buf[off]
    off += 1
    if not flag:
        return None, off
    name, off = _get_name(buf, off)
    addr, off = _get_name(buf, off)
    if off + 4 > len(buf):
        raise MalformedDns("truncated ttl")
    return Record(name, addr, int.from_bytes(buf[off:off + 4], "big")), off + 4


def encode_query(qname: str, txid: int) -> bytes:
    out = bytearray(txid.to_bytes(2, "big"))
    out.append(0)
    _put_name(out, qname)
    return bytes(out)


def encode_response(txid: int, qname: str, answer: Record | None = None,
                    referral: Record | None = None, nxdomain: bool = False) -> bytes:
    out = bytearray(txid.to_bytes(2, "big"))
    out.append(_RESPONSE | (_NXDOMAIN if nxdomain else 0))
    _put_name(out, qname)
    _put_record(out, answer)
    _put_record(out, referral)
    return bytes(out)


def decode(packet: Packet) -> DnsQuery | DnsResponse:
    buf = packet.payload
    try:
        txid, flags, n = _HEAD.unpack_from(buf)
        qname = buf[4:4 + n].decode()
        off = 4 + n
        if len(buf) < off:
            raise MalformedDns("truncated qname")
        if not flags & _RESPONSE:
            return DnsQuery(qname, txid, packet.src, packet.dst)
        answer, off = _get_record(buf, off)
        referral, off = _get_record(buf, off)
        return DnsResponse(txid, qname, answer, referral, packet.src, packet.dst,
                           bool(flags & _NXDOMAIN))
    except (struct.error, IndexError, UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, MalformedDns):
            raise
        raise MalformedDns(str(exc)) from exc


def summarize(payload: bytes) -> str:
    nowhere = Endpoint("", 0)
    msg = decode(Packet(nowhere, nowhere, Proto.DNS, payload))
    if isinstance(msg, DnsQuery):
        return f"query txid={msg.txid} qname={msg.qname}"
    text = f"response txid={msg.txid} qname={msg.qname}"
    if msg.nxdomain:
        text += " nxdomain"
    for label, rec in (("answer", msg.answer), ("referral", msg.referral)):
        if rec is not None:
            text += f" {label}={rec.name}->{rec.address}"
    return text


SUMMARIZERS[Proto.DNS] = summarize


def in_bailiwick(name: str, zone: str) -> bool:
    return name == zone or name.endswith("." + zone)


class Resolver(Node):
    """Caching recursive resolver.

    ``delegations`` maps a zone to the host name of its name server and
    ``hints`` gives the configured address of each such host; a fresh
    cache entry for the host name takes precedence over the hint, which is
    exactly what a poisoned referral exploits.
    """

    def __init__(self, address: str, params: SimParams, rng: random.Random,
                 port_policy: PortPolicy, delegations: dict[str, str],
                 hints: dict[str, str]):
        super().__init__(address)
        self.params = params
        self.rng = rng
        self.ports = PortAllocator(port_policy, params.port_space, rng)
        self.delegations = dict(delegations)
        self.hints = dict(hints)
        self.cache: dict[str, CacheEntry] = {}
        self.pending: dict[tuple[str, Endpoint], PendingRequest] = {}
        self.waiters: dict[tuple[str, Endpoint], list[tuple[Endpoint, int]]] = {}
        self.accept_log: list[tuple[int, PendingRequest, DnsResponse]] = []
        self.rejects: Counter = Counter()
        self.bailiwick_rejects = 0
        self.malformed = 0
        self._by_port: dict[int, list[PendingRequest]] = {}

    @property
    def now(self) -> int:
        return self.net.now if self.net is not None else 0

    def lookup(self, name: str) -> CacheEntry | None:
        entry = self.cache.get(name)
        if entry is not None and entry.fresh(self.now):
            return entry
        return None

    def nameserver_for(self, qname: str) -> tuple[str, Endpoint]:
        """Longest-suffix delegated zone for ``qname`` and where to ask."""
        best = None
        for zone in self.delegations:
            if in_bailiwick(qname, zone) and (best is None or len(zone) > len(best)):
                best = zone
        if best is None:
            raise KeyError(f"no delegation covers {qname}")
        ns_name = self.delegations[best]
        cached = self.lookup(ns_name)
        address = cached.address if cached is not None else self.hints[ns_name]
        return best, Endpoint(address, DNS_PORT)

    def resolve(self, qname: str, client: Endpoint | None = None,
                client_txid: int = 0) -> CacheEntry | DnsQuery:
        """Serve ``qname`` from cache, or send a query upstream.

        Raises DuplicatePending (after queueing the client) when the same
        query is already in flight.
        """
        hit = self.lookup(qname)
        if hit is not None:
            return hit
        zone, ns = self.nameserver_for(qname)
        key = (qname, ns)
        if key in self.pending:
            if client is not None:
                self.waiters[key].append((client, client_txid))
            raise DuplicatePending(self.pending[key])
        in_use = self._by_port.keys()
        port = self.ports.allocate(in_use)
        txid = self.rng.randrange(self.params.txid_space)
        req = PendingRequest(qname, txid, port, ns, client, zone, client_txid, self.now)
        self.pending[key] = req
        self._by_port.setdefault(port, []).append(req)
        self.waiters[key] = [(client, client_txid)] if client is not None else []
        query = DnsQuery(qname, txid, Endpoint(self.address, port), ns)
        self.send(Packet(query.src, ns, Proto.DNS, encode_query(qname, txid)))
        return query

    def validate_response(self, response: DnsResponse) -> PendingRequest | RejectReason:
        """Match a response against the pending table.

        Returns the matched request (now consumed) or the reason for the
        drop.  Checks run in socket order: port, source, TXID, question.
        """
        if not self.pending:
            return RejectReason.NO_PENDING
        candidates = self._by_port.get(response.dst.port)
        if not candidates:
            return RejectReason.PORT_MISMATCH
        candidates = [p for p in candidates if p.nameserver == response.src]
        if not candidates:
            return RejectReason.SOURCE_MISMATCH
        candidates = [p for p in candidates if p.txid == response.txid]
        if not candidates:
            return RejectReason.TXID_MISMATCH
        for req in candidates:
            if req.qname == response.qname:
                self._consume(req)
                return req
        return RejectReason.QNAME_MISMATCH

    def _prefilter(self, packet: Packet) -> RejectReason | None:
        """The port, source and TXID checks of :meth:`validate_response`,
        run on the raw header so floods of wrong guesses skip decoding."""
        payload = packet.payload
        if len(payload) < 3 or not payload[2] & _RESPONSE:
            return None
        if not self.pending:
            return RejectReason.NO_PENDING
        candidates = self._by_port.get(packet.dst.port)
        if not candidates:
            return RejectReason.PORT_MISMATCH
        src = packet.src
        txid = (payload[0] << 8) | payload[1]
        same_src = False
        for p in candidates:
            if p.nameserver == src:
                if p.txid == txid:
                    return None
                same_src = True
        return RejectReason.TXID_MISMATCH if same_src else RejectReason.SOURCE_MISMATCH

    def _consume(self, req: PendingRequest) -> None:
        del self.pending[(req.qname, req.nameserver)]
        same_port = self._by_port[req.resolver_port]
        same_port.remove(req)
        if not same_port:
            del self._by_port[req.resolver_port]

    def cache_insert(self, response: DnsResponse, req: PendingRequest) -> list[CacheEntry]:
        """Store the in-bailiwick records of an accepted response and answer
        every client queued on the request."""
        stored = []
        now = self.now
        for rec, must_match in ((response.answer, True), (response.referral, False)):
            if rec is None:
                continue
            if must_match and rec.name != req.qname:
                continue
            if not in_bailiwick(rec.name, req.zone):
                self.bailiwick_rejects += 1
                continue
            entry = CacheEntry(rec.name, rec.address, rec.ttl, now)
            self.cache[rec.name] = entry
            stored.append(entry)
        self.accept_log.append((now, req, response))
        for client, ctxid in self.waiters.pop((req.qname, req.nameserver), []):
            payload = encode_response(ctxid, req.qname, response.answer,
                                      response.referral, response.nxdomain)
            self.send(Packet(Endpoint(self.address, DNS_PORT), client, Proto.DNS, payload))
        return stored

    def receive(self, packet: Packet) -> None:
        if packet.proto is not Proto.DNS:
            return
        payload = packet.payload
        if len(payload) > 2 and payload[2] & _RESPONSE:
            early = self._prefilter(packet)
            if early is not None:
                self.rejects[early] += 1
                return
        try:
            msg = decode(packet)
        except MalformedDns:
            self.malformed += 1
            return
        if isinstance(msg, DnsQuery):
            self._serve_client(msg)
            return
        result = self.validate_response(msg)
        if isinstance(result, RejectReason):
            self.rejects[result] += 1
            return
        self.cache_insert(msg, result)

    def _serve_client(self, query: DnsQuery) -> None:
        try:
            result = self.resolve(query.qname, query.src, query.txid)
        except DuplicatePending:
            return
        if isinstance(result, CacheEntry):
            answer = Record(result.name, result.address,
                            result.inserted_at + result.ttl_ticks - self.now)
            self.send(Packet(Endpoint(self.address, DNS_PORT), query.src, Proto.DNS,
                             encode_response(query.txid, query.qname, answer=answer)))


class Nameserver(Node):
    """Authoritative server for one zone; unknown names get NXDOMAIN."""

    def __init__(self, address: str, zone: str, records: dict[str, str], ttl: int = 300):
        super().__init__(address)
        self.zone = zone
        self.records = dict(records)
        self.ttl = ttl
        self.queries: list[DnsQuery] = []

    def respond(self, query: DnsQuery) -> DnsResponse:
        address = self.records.get(query.qname)
        answer = None if address is None else Record(query.qname, address, self.ttl)
        return DnsResponse(query.txid, query.qname, answer, None, query.dst, query.src,
                           nxdomain=answer is None)

    def receive(self, packet: Packet) -> None:
        if packet.proto is not Proto.DNS:
            return
        try:
            msg = decode(packet)
        except MalformedDns:
            return
        if not isinstance(msg, DnsQuery):
            return
        self.queries.append(msg)
        resp = self.respond(msg)
        self.send(Packet(resp.src, resp.dst, Proto.DNS,
                         encode_response(resp.txid, resp.qname, resp.answer,
                                         resp.referral, resp.nxdomain)))


class StubResolver:
    """Client-side resolver library living on an ordinary host."""

    def __init__(self, host: Node, resolver: Endpoint, rng: random.Random, port: int | None = None):
        self.host = host
        self.resolver = resolver
        self.rng = rng
        self.port = port
        self.answers: list[DnsResponse] = []

    def query(self, qname: str) -> DnsQuery:
        space = self.host.net.params
        port = self.port if self.port is not None else self.rng.randrange(space.port_space)
        txid = self.rng.randrange(space.txid_space)
        src = Endpoint(self.host.address, port)
        self.host.send(Packet(src, self.resolver, Proto.DNS, encode_query(qname, txid)))
        return DnsQuery(qname, txid, src, self.resolver)

    def on_packet(self, packet: Packet) -> None:
        try:
            msg = decode(packet)
        except MalformedDns:
            return
        if isinstance(msg, DnsResponse):
            self.answers.append(msg)
