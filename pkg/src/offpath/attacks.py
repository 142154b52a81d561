"""Off-path attacker strategies.

Three kinds of adversarial agent appear here:

* :class:`Oscar` -- a host on the open Internet that may spoof source
  addresses and runs a web site, but only ever sees packets addressed to
  itself;
* :class:`Zombie` -- an unprivileged process inside the victim's LAN that
  sends and receives packets from its own address;
* :class:`Puppet` -- a script in the victim's browser whose only power is to
  make the browser issue requests.

Every strategy reads what Oscar legitimately learns (his inbox, his web
server's log, reports from his agents) and nothing else; ground truth is
left to the callers' assertions.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dns import DnsQuery, MalformedDns, Record, decode, encode_query, encode_response
from .hosts import ClientHost
from .http import Delivered, InjectPayload, WebServer, format_response, split_url
from .simnet import Endpoint, Node, Packet, Proto, SimParams
from .tcp import Flag, FourTuple, TcpHost, TcpSegment

POISON_TTL = 1 << 20
PROBE_TAG = b"PRB"
REPORT_TAG = b"RPT"


class Restart(Exception):
    """Port sequentiality was broken by cross traffic; start over."""


class NoProbeArrived(Exception):
    """None of the NAT probes reached the zombie."""


class MarkerLost(Exception):
    """The injected marker page was overwritten before it could render."""


class ObserveTimeout(Exception):
    """The observe budget ran out before the marker surfaced."""


class AgentKind(enum.Enum):
    ZOMBIE = "Zombie"
    PUPPET = "Puppet"


@dataclass
class AttackOutcome:
    success: bool
    rounds: int
    packets_sent: int
    recovered: object = None
    trace_id: str = ""
    detail: dict = field(default_factory=dict)


# --- agents ---------------------------------------------------------------

class Oscar(TcpHost):
    """The spoofing attacker; also hosts ``site`` (default ``oscar.com``)."""

    can_spoof = True
    kind = "attacker"

    def __init__(self, address: str, params: SimParams, rng, site: str = "oscar.com"):
        super().__init__(address, params, rng)
        self.site_name = site
        self.inbox: list[Packet] = []
        self.site = WebServer(self, fallback=lambda path: b"ok", close_after_response=True)

    def receive(self, packet: Packet) -> None:
        self.inbox.append(packet)
        super().receive(packet)

    @property
    def packets_sent(self) -> int:
        return self.net.sent_by[self.address]

    def flood(self, packets: list[Packet]) -> None:
        self.net.schedule_batch(self.address, packets)


class Zombie(Node):
    """LAN-side agent.  Reports the port of the first probe it receives."""

    kind = "attacker"
    agent = AgentKind.ZOMBIE

    def __init__(self, address: str, port: int):
        super().__init__(address)
        self.port = port
        self.inbox: list[Packet] = []
        self.report_to: Endpoint | None = None

    @property
    def packets_sent(self) -> int:
        return self.net.sent_by[self.address]

    def open_mapping(self, dst: Endpoint, proto: Proto = Proto.DNS) -> None:
        payload = encode_query("zombie." + dst.address, 0) if proto is Proto.DNS else b""
        self.send(Packet(Endpoint(self.address, self.port), dst, proto, payload))

    def receive(self, packet: Packet) -> None:
        self.inbox.append(packet)
        if self.report_to is None or not packet.payload.startswith(PROBE_TAG):
            return
        probed = int.from_bytes(packet.payload[len(PROBE_TAG):], "big")
        nxt = (probed + 1) % self.net.params.port_space
        self.send(Packet(Endpoint(self.address, self.port), self.report_to, Proto.RAW,
                         REPORT_TAG + nxt.to_bytes(2, "big")))
        self.report_to = None


class Puppet:
    """Script running in the client's browser; it can only make requests."""

    agent = AgentKind.PUPPET

    def __init__(self, client: ClientHost):
        self._client = client

    @property
    def browser(self):
        return self._client.browser

    def request(self, url: str, on_delivery: Callable[[Delivered], None] | None = None,
                fresh: bool = False):
        return self._client.browser.fetch(url, "puppet", on_delivery, fresh)

    def load(self, hostname: str) -> None:
        """Reference a resource on ``hostname``, forcing a name lookup."""
        self._client.stub.query(hostname)


def _attacker_packets(*agents) -> int:
    return sum(a.packets_sent for a in agents if a is not None)


# --- DNS: Kaminsky ----------------------------------------------------------

def _random_label(rng) -> str:
    return f"{rng.getrandbits(32):08x}"


def _spoof_plan(rng, params: SimParams, k: int, port: int | None) -> list[tuple[int, int]]:
    """``k`` distinct (txid, port) guesses; all TXIDs on ``port`` when it is known."""
    t = params.txid_space
    space = t if port is not None else t * params.port_space
    if k > space:
        raise ValueError(f"{k} guesses exceed the {space} possible guesses")
    picks = _distinct(rng, space, k)
    if port is not None:
        return [(txid, port) for txid in picks]
    return [(g % t, g // t) for g in picks]


def _distinct(rng, space: int, k: int) -> list[int]:
    """``k`` distinct values drawn uniformly from ``range(space)``."""
    gen = np.random.default_rng(rng.getrandbits(64))
    return gen.choice(space, size=k, replace=False).tolist()


_TXID_BYTES = [t.to_bytes(2, "big") for t in range(1 << 16)]


def _referral_batch(rng, params: SimParams, k: int, port: int | None, src: Endpoint,
                    target: str, template: bytes, now: int) -> list[Packet]:
    """Spoofed copies of ``template`` (a response minus its TXID), one per guess."""
    make = tuple.__new__
    dns = Proto.DNS
    txb = _TXID_BYTES
    plan = _spoof_plan(rng, params, k, port)
    if port is not None:
        dst = Endpoint(target, port)
        return [make(Packet, (src, dst, dns, txb[txid] + template, now)) for txid, _ in plan]
    dsts = [Endpoint(target, p) for p in range(params.port_space)]
    return [make(Packet, (src, dsts[p], dns, txb[txid] + template, now)) for txid, p in plan]


def kaminsky_poison(oscar: Oscar, puppet: Puppet, target: str, nameserver: Endpoint,
                    victim_domain: str, guesses_per_round: int, max_rounds: int,
                    port: int | None = None, track_port: bool = False,
                    ns_name: str | None = None, rng=None) -> AttackOutcome:
    """Race spoofed referrals against the name server, one subdomain per round.

    ``target`` is the resolver's public address (the NAT's when there is
    one).  With ``port=None`` guesses are spread over (TXID, port) pairs.
    ``track_port`` advances the guessed port by one for every query the
    resolver sends to the name server, as a per-destination NAT does.
    Success is confirmed by having the puppet look up one more fresh name
    and checking whether the query lands at Oscar.
    """
    net = oscar.net
    rng = rng or net.rng("oscar")
    ns_name = ns_name or f"ns.{victim_domain}"
    referral = Record(ns_name, oscar.address, POISON_TTL)
    start = oscar.packets_sent
    for rnd in range(1, max_rounds + 1):
        qname = f"{_random_label(rng)}.{victim_domain}"
        puppet.load(qname)
        net.advance(net.params.latency_ticks)
        template = encode_response(0, qname, referral=referral)[2:]
        batch = _referral_batch(rng, net.params, guesses_per_round, port, nameserver,
                                target, template, net.now)
        oscar.flood(batch)
        net.run()
        if verify_poisoned(oscar, puppet, victim_domain, rng):
            return AttackOutcome(True, rnd, oscar.packets_sent - start, port,
                                 detail={"qname": qname})
        if track_port:
            # one query for the round, one for the failed check
            port = (port + 2) % net.params.port_space
    return AttackOutcome(False, max_rounds, oscar.packets_sent - start, None)


def verify_poisoned(oscar: Oscar, puppet: Puppet, victim_domain: str, rng) -> bool:
    """Does a fresh lookup under ``victim_domain`` now get sent to Oscar?"""
    name = f"{_random_label(rng)}.{victim_domain}"
    mark = len(oscar.inbox)
    puppet.load(name)
    oscar.net.run()
    for pkt in oscar.inbox[mark:]:
        if pkt.proto is Proto.DNS:
            try:
                msg = decode(pkt)
            except MalformedDns:
                continue
            if isinstance(msg, DnsQuery) and msg.qname == name:
                return True
    return False


# --- DNS: NAT port prediction ---------------------------------------------

def predict_external_port(zombie: Zombie, oscar: Oscar, public_address: str,
                          nameserver: Endpoint, gap_ticks: int = 0) -> int:
    """Learn the next external port the NAT will use toward ``nameserver``.

    The zombie opens a mapping toward the name server, Oscar probes every
    external port with the name server's spoofed address, and the zombie
    reports the port of the one probe that gets through, plus one.
    """
    net = oscar.net
    space = net.params.port_space
    zombie.report_to = Endpoint(oscar.address, space - 1)
    zombie.open_mapping(nameserver)
    net.advance(net.params.latency_ticks + gap_ticks)
    now = net.now
    oscar.flood([Packet(nameserver, Endpoint(public_address, p), Proto.DNS,
                        PROBE_TAG + p.to_bytes(2, "big"), now) for p in range(space)])
    mark = len(oscar.inbox)
    net.run()
    for pkt in oscar.inbox[mark:]:
        if pkt.proto is Proto.RAW and pkt.payload.startswith(REPORT_TAG):
            return int.from_bytes(pkt.payload[len(REPORT_TAG):], "big")
    zombie.report_to = None
    raise NoProbeArrived(f"no probe reached the zombie behind {public_address}")


def predict_then_poison(zombie: Zombie, oscar: Oscar, puppet: Puppet, public_address: str,
                        nameserver: Endpoint, victim_domain: str, guesses_per_round: int,
                        max_rounds: int, gap_ticks: int = 0, rng=None) -> AttackOutcome:
    """Port prediction followed by Kaminsky's attack on the predicted port."""
    start = _attacker_packets(oscar, zombie)
    predicted = predict_external_port(zombie, oscar, public_address, nameserver, gap_ticks)
    out = kaminsky_poison(oscar, puppet, public_address, nameserver, victim_domain,
                          guesses_per_round, max_rounds, port=predicted, track_port=True,
                          rng=rng)
    out.packets_sent = _attacker_packets(oscar, zombie) - start
    out.detail["predicted"] = predicted
    out.recovered = predicted
    return out


# --- TCP: connection tuple --------------------------------------------------

def learn_connection_tuple(oscar: Oscar, puppet: Puppet, victim_server: Endpoint,
                           victim_host: str = "victim.com",
                           cross_traffic: Callable[[], None] | None = None,
                           attempt: int = 0) -> FourTuple:
    """Sandwich the victim connection between two connections to Oscar.

    With sequential client ports the two ports Oscar sees differ by two
    and the victim connection holds the one in between; anything else
    means some other connection interleaved, and :class:`Restart` is raised.
    ``cross_traffic`` (a test hook) runs between the victim connection and
    the second connection to Oscar.
    """
    net = oscar.net
    site = oscar.site_name
    mark = len(oscar.site.connections)
    puppet.request(f"http://a{attempt}.{site}/p1", fresh=True)
    net.run()
    puppet.request(f"http://{victim_host}/", fresh=True)
    net.run()
    if cross_traffic is not None:
        cross_traffic()
        net.run()
    puppet.request(f"http://b{attempt}.{site}/p2", fresh=True)
    net.run()
    seen = oscar.site.connections[mark:]
    if len(seen) != 2:
        raise Restart(f"saw {len(seen)} connections instead of 2")
    first, second = seen
    space = net.params.port_space
    if first.address != second.address or (second.port - first.port) % space != 2:
        raise Restart(f"ports {first.port} and {second.port} are not two apart")
    return FourTuple(Endpoint(first.address, (first.port + 1) % space), victim_server)


def find_connection_tuple(oscar: Oscar, puppet: Puppet, victim_server: Endpoint,
                          victim_host: str = "victim.com", max_attempts: int = 10,
                          cross_traffic: Callable[[int], None] | None = None) -> AttackOutcome:
    """:func:`learn_connection_tuple` with restarts."""
    start = oscar.packets_sent
    for attempt in range(1, max_attempts + 1):
        hook = None if cross_traffic is None else (lambda a=attempt: cross_traffic(a))
        try:
            four = learn_connection_tuple(oscar, puppet, victim_server, victim_host,
                                          hook, attempt)
        except Restart:
            continue
        return AttackOutcome(True, attempt, oscar.packets_sent - start, four)
    return AttackOutcome(False, max_attempts, oscar.packets_sent - start, None)


# --- TCP: sequence number --------------------------------------------------

_MARKER_PATH = re.compile(r"/(\d+)\.html")


def injection_count(params: SimParams, wnd: int) -> int:
    """Segments needed so that one lands in any window of size ``wnd``."""
    space = params.seq_space
    return space // wnd if space % wnd == 0 else -(-space // wnd) + 1


def inject_markers(oscar: Oscar, four: FourTuple, wnd: int, pad_len: int) -> int:
    """Inject step: the ``i``-th spoofed segment sits at ``i * wnd``."""
    net = oscar.net
    mask = net.params.seq_space - 1
    now = net.now
    batch = []
    for i in range(injection_count(net.params, wnd)):
        data = InjectPayload.build(i, pad_len, oscar.site_name).data
        seg = TcpSegment(four.server, four.client, (i * wnd) & mask, 0, Flag.ACK, data)
        batch.append(Packet(seg.src, seg.dst, Proto.TCP, seg.encode(), now))
    oscar.flood(batch)
    return len(batch)


@dataclass
class ObserveReport:
    index: int
    requests: int
    consumed_after_render: int
    ticks: int


def observe_marker(oscar: Oscar, puppet: Puppet, url: str, wnd: int, pad_len: int,
                   max_page: int, budget_ticks: int = 10_000, pipeline_depth: int = 1,
                   requests_per_tick: int = 1, stall_ticks: int | None = None) -> ObserveReport:
    """Observe step: the puppet keeps requesting ``url`` until a response it
    receives makes the browser fetch from Oscar's site; Oscar reads the
    marker index off his own web log.

    The marker counts as lost once more bytes than it could have been hidden
    behind were consumed without a render, or when the puppet's requests stop
    being answered for ``stall_ticks`` (an overwritten marker can leave the
    server's later bytes behind the client's window).
    """
    net = oscar.net
    if stall_ticks is None:
        stall_ticks = 8 * (2 * net.params.latency_ticks + 2)
    state = {"outstanding": 0, "consumed": 0, "after": 0, "rendered": False, "requests": 0,
             "progress": net.now}
    site_host = oscar.site_name

    def on_delivery(d: Delivered) -> None:
        state["outstanding"] -= 1
        state["consumed"] += d.raw_len
        state["progress"] = net.now
        if state["rendered"]:
            state["after"] += d.raw_len
        elif any(split_url(f)[0] == site_host for f in d.fetches):
            state["rendered"] = True

    mark = len(oscar.site.log)
    limit = wnd + pad_len + max_page
    index = None
    start = net.now
    while net.now - start < budget_ticks:
        if not state["rendered"]:
            issued = 0
            while issued < requests_per_tick and state["outstanding"] < pipeline_depth:
                puppet.request(url, on_delivery)
                state["outstanding"] += 1
                state["requests"] += 1
                issued += 1
        net.step()
        for _, _, path in oscar.site.log[mark:]:
            m = _MARKER_PATH.fullmatch(path)
            if m:
                index = int(m.group(1))
                break
        if index is not None:
            break
        if not state["rendered"]:
            if state["consumed"] >= limit:
                raise MarkerLost(f"{state['consumed']} bytes consumed without a marker")
            if net.now - state["progress"] > stall_ticks:
                raise MarkerLost(f"no response for {stall_ticks} ticks; stream desynchronised")
    else:
        raise ObserveTimeout(f"no marker within {budget_ticks} ticks")
    net.run()
    return ObserveReport(index, state["requests"], state["after"], net.now - start)


def learn_sequence_number(oscar: Oscar, puppet: Puppet, four: FourTuple, wnd: int,
                          pad_len: int | None = None, url: str | None = None,
                          budget_ticks: int = 10_000, pipeline_depth: int = 1,
                          requests_per_tick: int = 1) -> tuple[int, ObserveReport]:
    """Return the client's next expected server sequence number.

    The accepted marker segment ``i`` starts at ``i * wnd``; once its page has
    rendered the client has consumed the whole marker payload plus whatever
    the puppet was delivered afterwards.
    """
    net = oscar.net
    pad_len = wnd if pad_len is None else pad_len
    url = url or "http://victim.com/"
    n = injection_count(net.params, wnd)
    max_page = len(InjectPayload.build(n - 1, 0, oscar.site_name).page)
    inject_markers(oscar, four, wnd, pad_len)
    report = observe_marker(oscar, puppet, url, wnd, pad_len, max_page, budget_ticks,
                            pipeline_depth, requests_per_tick)
    landed = InjectPayload.build(report.index, pad_len, oscar.site_name).data
    mask = net.params.seq_space - 1
    nxt = (report.index * wnd + len(landed) + report.consumed_after_render) & mask
    return nxt, report


def inject_data(oscar: Oscar, four: FourTuple, seq: int, payload: bytes) -> Packet:
    """One spoofed server segment carrying ``payload`` at ``seq``."""
    seg = TcpSegment(four.server, four.client, seq, 0, Flag.ACK, payload)
    pkt = seg.packet()
    oscar.send(pkt)
    return pkt


def attacker_page(beacon: str = "oscar.com/owned.html") -> bytes:
    """Demonstration response: a well-formed page that calls home once rendered."""
    return format_response(f'<HTML><BODY>\nhello from oscar\n<iframe src = "{beacon}" />\n'
                           f"</BODY></HTML>\n".encode())


def tcp_injection(oscar: Oscar, puppet: Puppet, victim_server: Endpoint, wnd: int,
                  victim_host: str = "victim.com", pad_len: int | None = None,
                  max_attempts: int = 10, budget_ticks: int = 10_000) -> AttackOutcome:
    """Learn the tuple, learn the sequence number, then inject a response."""
    net = oscar.net
    start = oscar.packets_sent
    found = find_connection_tuple(oscar, puppet, victim_server, victim_host, max_attempts)
    if not found.success:
        found.packets_sent = oscar.packets_sent - start
        return found
    four = found.recovered
    try:
        nxt, report = learn_sequence_number(oscar, puppet, four, wnd, pad_len,
                                            f"http://{victim_host}/", budget_ticks)
    except (MarkerLost, ObserveTimeout) as exc:
        return AttackOutcome(False, found.rounds, oscar.packets_sent - start, four,
                             detail={"error": type(exc).__name__})
    beacon = f"{oscar.site_name}/owned.html"
    mark = len(oscar.site.log)
    inject_data(oscar, four, nxt, attacker_page(beacon))
    puppet.request(f"http://{victim_host}/")
    net.run()
    landed = any(path == "/owned.html" for _, _, path in oscar.site.log[mark:])
    return AttackOutcome(landed, found.rounds, oscar.packets_sent - start, (four, nxt),
                         detail={"marker": report.index})
