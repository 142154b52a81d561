import pytest

from offpath import scenario_path
from offpath.harness import build_world, load_scenario
from offpath.simnet import Network, Node, SimParams


class Recorder(Node):
    """Node that just remembers what it was handed."""

    def __init__(self, address, can_spoof=False):
        super().__init__(address)
        self.can_spoof = can_spoof
        self.got = []

    def receive(self, packet):
        self.got.append(packet)


@pytest.fixture
def net():
    return Network(SimParams(port_bits=16, txid_bits=8, seq_bits=16, wnd_size=256))


@pytest.fixture
def shipped():
    """Load a shipped scenario by name."""
    return lambda name: load_scenario(scenario_path(name))


@pytest.fixture
def world_of(shipped):
    def make(name, seed=0, trace=False, **changes):
        sc = shipped(name)
        for key, value in changes.items():
            sc = sc.with_value(key, value)
        return build_world(sc, seed, trace)
    return make
