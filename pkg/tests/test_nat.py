import random

import numpy as np
import pytest
from scipy import stats

from offpath.nat import InboundMode, Nat, NatPolicy, NatTupleKey, PortSpaceExhausted
from offpath.simnet import Endpoint, Network, Packet, Proto, SimParams, seeded_rng

from conftest import Recorder

NS = Endpoint("8.8.8.8", 53)


def key(port, dst=NS, host="192.168.1.2"):
    return NatTupleKey(Endpoint(host, port), dst, Proto.DNS)


def out(nat, port, dst=NS, host="192.168.1.2"):
    return nat.translate_outbound(Packet(Endpoint(host, port), dst, Proto.DNS, b""))


def make(policy=NatPolicy.PER_DESTINATION, bits=16, seed=0, **kw):
    return Nat("5.5.5.5", SimParams(port_bits=bits), random.Random(seed), policy, **kw)


def test_first_port_uniform_then_sequential():
    nat = make()
    first = out(nat, 1000).src.port
    assert [out(nat, p).src.port for p in (1001, 1002)] == [first + 1, first + 2]


def test_seed_reproduces_6666_then_6667():
    # seed 143539 is the one shipped with the predict_then_poison scenario
    nat = Nat("5.5.5.5", SimParams(), seeded_rng(143539, "nat"))
    assert out(nat, 4000).src == Endpoint("5.5.5.5", 6666)
    assert out(nat, 5000, host="192.168.1.53").src.port == 6667


def test_mapping_reuse():
    nat = make()
    assert out(nat, 1000).src == out(nat, 1000).src
    assert len(nat.mappings) == 1


def test_destinations_have_separate_counters():
    nat = make(seed=3)
    a = out(nat, 1000).src.port
    out(nat, 1001, dst=Endpoint("9.9.9.9", 53))
    assert out(nat, 1002).src.port == a + 1


def test_wraparound_skips_live_ports():
    nat = make(bits=4)
    nat._counters[(NS, Proto.DNS)] = 14
    nat.mappings  # live: none yet
    first = out(nat, 1)
    assert first.src.port == 15
    assert out(nat, 2).src.port == 0


def test_wraparound_skips_a_live_mapping():
    nat = make(bits=2, seed=1)
    ports = [out(nat, p).src.port for p in range(4)]
    assert sorted(ports) == [0, 1, 2, 3]
    with pytest.raises(PortSpaceExhausted):
        out(nat, 9)


def test_per_host_counter_option():
    nat = make(shared_counter=False, seed=2)
    a = out(nat, 1000, host="h1").src.port
    b = out(nat, 1000, host="h2").src.port
    assert out(nat, 1001, host="h1").src.port == a + 1
    assert out(nat, 1001, host="h2").src.port == b + 1


def inbound(nat, port, src=NS):
    return nat.translate_inbound(Packet(src, Endpoint("5.5.5.5", port), Proto.DNS, b""))


def test_probe_sweep_only_mapped_port_traverses():
    nat = Nat("5.5.5.5", SimParams(), seeded_rng(143539, "nat"))
    out(nat, 4000)
    passed = [p for p in range(1 << 16) if inbound(nat, p) is not None]
    assert passed == [6666]
    assert nat.inbound_drops == (1 << 16) - 1


def test_inbound_rewrites_to_internal_endpoint():
    nat = make()
    port = out(nat, 1000).src.port
    assert inbound(nat, port).dst == Endpoint("192.168.1.2", 1000)


@pytest.mark.parametrize("mode,src,ok", [
    (InboundMode.SYMMETRIC, NS, True),
    (InboundMode.SYMMETRIC, Endpoint("8.8.8.8", 54), False),
    (InboundMode.ADDRESS, Endpoint("8.8.8.8", 54), True),
    (InboundMode.ADDRESS, Endpoint("6.6.6.6", 53), False),
    (InboundMode.FULL_CONE, Endpoint("6.6.6.6", 1), True),
])
def test_inbound_modes(mode, src, ok):
    nat = make(inbound=mode)
    port = out(nat, 1000).src.port
    assert (inbound(nat, port, src) is not None) == ok


def test_inbound_never_creates_mappings():
    nat = make()
    for p in range(100):
        inbound(nat, p)
    assert not nat.mappings


def test_idle_timeout_expires_mapping():
    nat = make(idle_timeout=5)
    clock = [0]
    nat.clock = lambda: clock[0]
    port = out(nat, 1000).src.port
    clock[0] = 4
    assert inbound(nat, port) is not None
    clock[0] = 10
    assert inbound(nat, port) is None


def test_fully_random_two_distinct_ports():
    nat = make(NatPolicy.FULLY_RANDOM, seed=9)
    a, b = out(nat, 1).src.port, out(nat, 2).src.port
    assert a != b


def test_fully_random_second_port_uniform():
    # 10^4 seeded devices; the second allocation should be uniform over the
    # free ports (all but the first one)
    bits = 6
    diffs = []
    for seed in range(10_000):
        nat = make(NatPolicy.FULLY_RANDOM, bits=bits, seed=seed)
        a, b = out(nat, 1).src.port, out(nat, 2).src.port
        diffs.append((b - a) % (1 << bits))
    counts = np.bincount(diffs, minlength=1 << bits)
    assert counts[0] == 0
    assert stats.chisquare(counts[1:]).pvalue > 0.001


def test_network_routes_through_nat():
    net = Network(SimParams())
    nat = make()
    net.attach_nat(nat)
    inside = net.attach(Recorder("192.168.1.2"), internal=True)
    ns = net.attach(Recorder("8.8.8.8"))
    inside.send(Packet(Endpoint("192.168.1.2", 1000), NS, Proto.DNS, b"q"))
    net.run()
    seen = ns.got[0].src
    assert seen.address == "5.5.5.5"
    ns.send(Packet(NS, seen, Proto.DNS, b"r"))
    ns.send(Packet(NS, Endpoint("192.168.1.2", 1000), Proto.DNS, b"direct"))
    net.run()
    assert [p.payload for p in inside.got] == [b"r"]
    assert net.drops["unroutable"] == 1
