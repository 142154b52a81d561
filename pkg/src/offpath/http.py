"""Pipelining browser and in-order web server on top of :mod:`offpath.tcp`.

Only the framing matters here: a request line plus ``Host``, and a status
line plus ``Content-Type``/``Content-Length``.  When the bytes at the head
of a connection do not form a complete, parsable response, the browser
hands *all* available bytes to the waiting request under a default 200
header, the behaviour the sequence-learning attack relies on.
"""
from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .simnet import Endpoint
from .tcp import TcpEndpoint, TcpHost, TcpState

HTTP_PORT = 80
DEFAULT_CONTENT_TYPE = "text/html; charset=us-ascii"

_STATUS_LINE = re.compile(r"(HTTP/1\.[01]) (\d{3})(?: (.*))?")
_REQUEST_LINE = re.compile(r"(GET|HEAD) (\S+) (HTTP/1\.[01])")
_IFRAME = re.compile(rb'<iframe src\s*=\s*"([^"]+)"')
_MAX_HEAD = 8192


class ConnClosed(Exception):
    pass


class MalformedHttp(ValueError):
    pass


@dataclass(frozen=True)
class HttpRequest:
    method: str
    path: str
    host: str
    raw_len: int


@dataclass(frozen=True)
class HttpResponse:
    status: int
    headers: dict
    body: bytes
    raw_len: int


def format_request(host: str, path: str) -> bytes:
    return f"GET {path} HTTP/1.1\r\nHost: {host}\r\n\r\n".encode()


def format_response(body: bytes, status: int = 200, reason: str = "OK",
                    content_type: str = "text/html") -> bytes:
    head = (f"HTTP/1.1 {status} {reason}\r\nContent-Type: {content_type}\r\n"
            f"Content-Length: {len(body)}\r\n\r\n")
    return head.encode() + body


def _split_head(buf) -> tuple[list[str], int] | None:
    idx = bytes(buf[:_MAX_HEAD]).find(b"\r\n\r\n")
    if idx < 0:
        return None
    return bytes(buf[:idx]).decode("latin-1").split("\r\n"), idx + 4


def _headers(lines: list[str]) -> dict | None:
    headers = {}
    for line in lines:
        name, sep, value = line.partition(":")
        if not sep or not name or name != name.strip():
            return None
        headers[name.lower()] = value.strip()
    return headers


def parse_response(buf) -> HttpResponse | None:
    """Complete response at the head of ``buf``, or ``None`` if not parsable.

    A response is parsable only if the status line, the header block and
    all ``Content-Length`` body bytes are present.
    """
    split = _split_head(buf)
    if split is None:
        return None
    lines, body_start = split
    if _STATUS_LINE.fullmatch(lines[0]) is None:
        return None
    headers = _headers(lines[1:])
    if headers is None:
        return None
    length = headers.get("content-length", "")
    if not length.isdigit():
        return None
    end = body_start + int(length)
    if end > len(buf):
        return None
    status = int(_STATUS_LINE.fullmatch(lines[0]).group(2))
    return HttpResponse(status, headers, bytes(buf[body_start:end]), end)


def parse_request(buf) -> HttpRequest | None:
    """Next request in ``buf``; ``None`` while incomplete, MalformedHttp if junk."""
    split = _split_head(buf)
    if split is None:
        if len(buf) >= _MAX_HEAD or (buf and not bytes(buf[:3]).isalpha()):
            raise MalformedHttp("no request head")
        return None
    lines, end = split
    m = _REQUEST_LINE.fullmatch(lines[0])
    headers = _headers(lines[1:])
    if m is None or headers is None or "host" not in headers:
        raise MalformedHttp(f"bad request head {lines[0]!r}")
    return HttpRequest(m.group(1), m.group(2), headers["host"], end)


def iframe_sources(body: bytes) -> list[str]:
    return [m.group(1).decode("latin-1") for m in _IFRAME.finditer(body)]


def split_url(url: str) -> tuple[str, str]:
    if "://" in url:
        url = url.split("://", 1)[1]
    host, slash, path = url.partition("/")
    return host, slash + path if slash else "/"


def page(index: int, site: str = "oscar.com") -> bytes:
    """Marker page whose rendering fetches ``<site>/<index>.html``."""
    return (f'<HTML><BODY>\n<iframe src = "{site}/{index}.html" />\n'
            f"</BODY></HTML>\n").encode()


@dataclass(frozen=True)
class InjectPayload:
    index: int
    pad: bytes
    page: bytes

    def __post_init__(self):
        refs = iframe_sources(self.page)
        if len(refs) != 1 or not refs[0].endswith(f"/{self.index}.html"):
            raise ValueError(f"page must reference exactly one {self.index}.html")

    @classmethod
    def build(cls, index: int, pad_len: int, site: str = "oscar.com") -> "InjectPayload":
        return cls(index, b" " * pad_len, page(index, site))

    @property
    def data(self) -> bytes:
        return self.pad + self.page


# --- server ---------------------------------------------------------------

class WebServer:
    """Answers pipelined requests strictly in arrival order."""

    def __init__(self, host: TcpHost, routes: dict[str, bytes] | None = None,
                 port: int = HTTP_PORT, fallback: Callable[[str], bytes] | None = None,
                 close_after_response: bool = False):
        self.host = host
        self.close_after_response = close_after_response
        self.routes = dict(routes or {})
        self.fallback = fallback
        self.log: list[tuple[int, Endpoint, str]] = []
        self.connections: list[Endpoint] = []
        self.resets = 0
        host.listen(port, self._open)

    def _open(self, ep: TcpEndpoint) -> "_ServerConn":
        self.connections.append(ep.remote)
        return _ServerConn(self)

    def body_for(self, path: str) -> tuple[int, bytes]:
        if path in self.routes:
            return 200, self.routes[path]
        if self.fallback is not None:
            return 200, self.fallback(path)
        return 404, b"not found"

    def server_process(self, ep: TcpEndpoint, buffer: bytearray) -> int:
        """Answer every complete request in ``buffer``; returns how many."""
        n = 0
        while True:
            try:
                req = parse_request(buffer)
            except MalformedHttp:
                self.resets += 1
                buffer.clear()
                self.host.reset(ep)
                return n
            if req is None:
                return n
            del buffer[:req.raw_len]
            self.log.append((self.host.net.now, ep.remote, req.path))
            status, body = self.body_for(req.path)
            reason = "OK" if status == 200 else "Not Found"
            self.host.send_data(ep, format_response(body, status, reason))
            n += 1
            if self.close_after_response:
                buffer.clear()
                self.host.close(ep)
                return n


class _ServerConn:
    def __init__(self, server: WebServer):
        self.server = server
        self.buffer = bytearray()

    def on_data(self, ep: TcpEndpoint) -> None:
        self.buffer += ep.read_stream()
        if ep.state is TcpState.ESTABLISHED:
            self.server.server_process(ep, self.buffer)


# --- browser --------------------------------------------------------------

@dataclass
class RequestRecord:
    url: str
    host: str
    path: str
    issued_at: int
    origin: str = "page"
    on_delivery: Callable | None = None
    response: "Delivered | None" = None


@dataclass
class Delivered:
    request: RequestRecord
    status: int
    headers: dict
    body: bytes
    raw_len: int
    wrapped: bool
    tick: int
    fetches: list[str] = field(default_factory=list)


@dataclass
class BrowserConn:
    host: str
    endpoint: TcpEndpoint
    pending: deque = field(default_factory=deque)
    fetch_log: list = field(default_factory=list)
    delivered: list = field(default_factory=list)
    buffer: bytearray = field(default_factory=bytearray)
    unsent: list = field(default_factory=list)

    @property
    def closed(self) -> bool:
        return self.endpoint.state is TcpState.CLOSED


class Browser:
    """HTTP/1.1 client keeping one persistent connection per host name."""

    def __init__(self, host: TcpHost, hosts: dict[str, str], port: int = HTTP_PORT):
        self.host = host
        self.hosts = dict(hosts)
        self.port = port
        self.conns: dict[str, BrowserConn] = {}
        self.fetch_log: list[tuple[int, str]] = []
        self.unresolved: list[str] = []

    @property
    def now(self) -> int:
        return self.host.net.now

    def resolve(self, hostname: str) -> str | None:
        """Static host table; ``*.zone`` entries match any subdomain."""
        if hostname in self.hosts:
            return self.hosts[hostname]
        parts = hostname.split(".")
        for i in range(1, len(parts)):
            wild = "*." + ".".join(parts[i:])
            if wild in self.hosts:
                return self.hosts[wild]
        return None

    def connect(self, hostname: str) -> BrowserConn:
        server = Endpoint(self.resolve(hostname), self.port)
        four = self.host.open_connection(server, app=self)
        conn = BrowserConn(hostname, self.host.connection(four))
        self.conns[hostname] = conn
        return conn

    def fetch(self, url: str, origin: str = "page", on_delivery=None,
              fresh: bool = False) -> RequestRecord | None:
        """Request ``url``, reusing the host's connection unless ``fresh``."""
        hostname, _ = split_url(url)
        if self.resolve(hostname) is None:
            self.unresolved.append(url)
            return None
        conn = self.conns.get(hostname)
        if fresh or conn is None or conn.closed:
            conn = self.connect(hostname)
        return self.browser_request(conn, url, origin, on_delivery)

    def browser_request(self, conn: BrowserConn, url: str, origin: str = "page",
                        on_delivery=None) -> RequestRecord:
        if conn.closed:
            raise ConnClosed(f"connection to {conn.host} is closed")
        hostname, path = split_url(url)
        rec = RequestRecord(url, hostname, path, self.now, origin, on_delivery)
        conn.pending.append(rec)
        data = format_request(hostname, path)
        if conn.endpoint.state is TcpState.ESTABLISHED:
            self.host.send_data(conn.endpoint, data)
        else:
            conn.unsent.append(data)
        self.browser_consume(conn)
        return rec

    def browser_consume(self, conn: BrowserConn) -> list[Delivered]:
        conn.buffer += conn.endpoint.read_stream()
        out = []
        while conn.pending and conn.buffer:
            parsed = parse_response(conn.buffer)
            if parsed is not None:
                status, headers, body, n = parsed.status, parsed.headers, parsed.body, parsed.raw_len
                wrapped = False
            else:
                n = len(conn.buffer)
                body = bytes(conn.buffer)
                status = 200
                headers = {"content-type": DEFAULT_CONTENT_TYPE, "content-length": str(n)}
                wrapped = True
            del conn.buffer[:n]
            req = conn.pending.popleft()
            d = Delivered(req, status, headers, body, n, wrapped, self.now)
            req.response = d
            conn.delivered.append(d)
            out.append(d)
            for src in iframe_sources(body):
                conn.fetch_log.append((self.now, src))
                self.fetch_log.append((self.now, src))
                d.fetches.append(src)
                self.fetch(src, origin="iframe")
            if req.on_delivery is not None:
                req.on_delivery(d)
        return out

    def _conn_of(self, ep: TcpEndpoint) -> BrowserConn | None:
        for conn in self.conns.values():
            if conn.endpoint is ep:
                return conn
        return None

    # TcpHost application callbacks
    def on_established(self, ep: TcpEndpoint) -> None:
        conn = self._conn_of(ep)
        if conn is None:
            return
        for data in conn.unsent:
            self.host.send_data(ep, data)
        conn.unsent.clear()

    def on_data(self, ep: TcpEndpoint) -> None:
        conn = self._conn_of(ep)
        if conn is not None:
            self.browser_consume(conn)

    def on_closed(self, ep: TcpEndpoint) -> None:
        pass
