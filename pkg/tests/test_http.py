from collections import deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offpath.http import (Browser, BrowserConn, ConnClosed, InjectPayload, MalformedHttp, WebServer,
                          format_request, format_response, iframe_sources, page,
                          parse_request, parse_response, RequestRecord, split_url)
from offpath.simnet import Network, SimParams
from offpath.tcp import Flag, TcpHost, TcpSegment, TcpState

P = SimParams(seq_bits=16, wnd_size=256)


def web(seed=0, routes=None, **server_kw):
    net = Network(P, seed=seed)
    client = net.attach(TcpHost("10.0.0.2", P, net.rng("client")))
    victim = net.attach(TcpHost("1.2.3.80", P, net.rng("victim")))
    oscar = net.attach(TcpHost("6.6.6.6", P, net.rng("oscar")))
    server = WebServer(victim, routes or {"/": b"home", "/a": b"A" * 10, "/b": b"B"}, **server_kw)
    site = WebServer(oscar, fallback=lambda path: b"ok")
    browser = Browser(client, {"victim.com": "1.2.3.80", "oscar.com": "6.6.6.6"})
    return net, browser, server, site


def test_pipelined_responses_match_in_order():
    net, browser, server, _ = web()
    recs = [browser.fetch(f"http://victim.com{p}") for p in ("/a", "/b", "/")]
    net.run()
    assert [r.response.body for r in recs] == [b"A" * 10, b"B", b"home"]
    assert [path for _, _, path in server.log] == ["/a", "/b", "/"]
    assert not any(r.response.wrapped for r in recs)


def test_single_connection_is_reused():
    net, browser, server, _ = web()
    browser.fetch("victim.com/a")
    net.run()
    browser.fetch("victim.com/b")
    net.run()
    assert len(server.connections) == 1
    browser.fetch("victim.com/", fresh=True)
    net.run()
    assert len(server.connections) == 2


def test_request_on_closed_connection():
    net, browser, _, _ = web()
    browser.fetch("victim.com/")
    net.run()
    conn = browser.conns["victim.com"]
    conn.endpoint.state = TcpState.CLOSED
    with pytest.raises(ConnClosed):
        browser.browser_request(conn, "victim.com/a")


def test_unknown_route_is_404():
    net, browser, _, _ = web()
    rec = browser.fetch("victim.com/missing")
    net.run()
    assert rec.response.status == 404


def test_malformed_request_resets():
    net, browser, server, _ = web()
    browser.fetch("victim.com/")
    net.run()
    conn = browser.conns["victim.com"]
    browser.host.send_data(conn.endpoint, b"\x00\x01garbage\r\n\r\n")
    net.run()
    assert server.resets == 1
    assert conn.closed


def test_content_length_frames_back_to_back_responses():
    data = format_response(b"one") + format_response(b"two!")
    first = parse_response(data)
    assert first.body == b"one"
    assert parse_response(data[first.raw_len:]).body == b"two!"
    assert parse_response(data[:first.raw_len - 1]) is None


def test_response_without_length_is_unparsable():
    assert parse_response(b"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\n\r\nbody") is None
    assert parse_response(b"garbage\r\n\r\n") is None


def test_parse_request():
    req = parse_request(bytearray(format_request("victim.com", "/x")))
    assert (req.method, req.path, req.host) == ("GET", "/x", "victim.com")
    assert parse_request(bytearray(b"GET / HT")) is None
    with pytest.raises(MalformedHttp):
        parse_request(bytearray(b"GET / HTTP/1.1\r\n\r\n"))


def test_corrupt_head_is_wrapped_and_rendered():
    """Bytes that are not a response go to the waiting request, whole."""
    net, browser, _, site = web()
    browser.fetch("victim.com/")
    net.run()
    conn = browser.conns["victim.com"]
    rec = browser.browser_request(conn, "victim.com/a")
    net.step()
    # Race the real response: plant the marker at the head of the stream.
    ep = conn.endpoint
    marker = b"   " + page(3)
    ep.on_segment(TcpSegment(ep.remote, ep.local, ep.rcv_nxt, 0, Flag.ACK, marker))
    browser.browser_consume(conn)
    d = rec.response
    assert d.wrapped and d.status == 200 and d.body.startswith(marker)
    assert d.headers["content-type"] == "text/html; charset=us-ascii"
    assert d.fetches == ["oscar.com/3.html"]
    net.run()
    assert [p for _, _, p in site.log] == ["/3.html"]


def test_page_references_one_marker():
    assert iframe_sources(page(7)) == ["oscar.com/7.html"]


def test_inject_payload_validation():
    p = InjectPayload.build(5, 10)
    assert p.data == b" " * 10 + page(5)
    with pytest.raises(ValueError):
        InjectPayload(5, b"", page(6))
    with pytest.raises(ValueError):
        InjectPayload(5, b"", b"no frame")


def test_split_url():
    assert split_url("http://a.com/x/y") == ("a.com", "/x/y")
    assert split_url("a.com") == ("a.com", "/")


def test_wildcard_hosts():
    net, browser, _, _ = web()
    browser.hosts["*.oscar.com"] = "6.6.6.6"
    assert browser.resolve("a1.oscar.com") == "6.6.6.6"
    assert browser.resolve("nowhere.org") is None
    assert browser.fetch("nowhere.org/") is None
    assert browser.unresolved == ["nowhere.org/"]


@settings(max_examples=200)
@given(st.binary(max_size=300))
def test_every_byte_string_is_delivered(blob):
    """Whatever is at the head, a pending request gets something."""
    class _Ep:
        state = TcpState.ESTABLISHED

        def read_stream(self):
            return b""

    net, browser, _, _ = web()
    conn = BrowserConn("victim.com", _Ep())
    conn.buffer += blob
    rec = RequestRecord("victim.com/", "victim.com", "/", 0)
    conn.pending = deque([rec])
    browser.hosts.clear()
    out = browser.browser_consume(conn)
    if blob:
        assert len(out) == 1 and rec.response is not None
        parsed = parse_response(blob)
        assert rec.response.wrapped == (parsed is None)
        assert rec.response.raw_len == (len(blob) if parsed is None else parsed.raw_len)
    else:
        assert out == []
