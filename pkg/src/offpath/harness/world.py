"""Builds a simulated network from a scenario's topology."""
from __future__ import annotations

from dataclasses import dataclass

from ..attacks import Oscar, Puppet, Zombie
from ..dns import DNS_PORT, Nameserver, Resolver
from ..hosts import ClientHost
from ..http import HTTP_PORT, WebServer
from ..nat import InboundMode, Nat, NatPolicy
from ..ports import PortPolicy
from ..simnet import Endpoint, Network, SimParams
from ..tcp import TcpHost
from .scenario import Scenario

DEFAULT_PAGE = "<html>victim</html>"


@dataclass
class World:
    net: Network
    params: SimParams
    client: ClientHost | None = None
    resolver: Resolver | None = None
    nameserver: Nameserver | None = None
    oscar: Oscar | None = None
    zombie: Zombie | None = None
    puppet: Puppet | None = None
    nat: Nat | None = None
    server: TcpHost | None = None
    web: WebServer | None = None
    victim_host: str = "victim.com"

    @property
    def public_resolver_address(self) -> str:
        return self.nat.address if self.nat is not None else self.resolver.address

    @property
    def nameserver_endpoint(self) -> Endpoint:
        return Endpoint(self.nameserver.address, DNS_PORT)

    @property
    def server_endpoint(self) -> Endpoint:
        return Endpoint(self.server.address, HTTP_PORT)

    @property
    def attackers(self) -> dict[str, str]:
        """Address -> role for every attacker-controlled node."""
        out = {}
        if self.oscar is not None:
            out[self.oscar.address] = "oscar"
        if self.zombie is not None:
            out[self.zombie.address] = "zombie"
        return out


def build_world(scenario: Scenario, seed: int, trace: bool = False) -> World:
    params = scenario.params
    topo = scenario.topology
    net = Network(params, seed=seed, trace=trace)
    world = World(net, params)
    behind_nat = "nat" in topo

    if behind_nat:
        spec = topo["nat"]
        world.nat = Nat(spec["address"], params, net.rng("nat"),
                        NatPolicy(spec.get("policy", "per_destination")),
                        spec.get("shared_counter", True),
                        InboundMode(spec.get("inbound", "address")),
                        spec.get("idle_timeout"))
        net.attach_nat(world.nat)

    if "nameserver" in topo:
        spec = topo["nameserver"]
        world.nameserver = net.attach(Nameserver(spec["address"], spec["zone"],
                                                 spec.get("records", {}), spec.get("ttl", 300)))

    if "resolver" in topo:
        spec = topo["resolver"]
        policy = PortPolicy.from_dict(spec.get("port_policy", {"kind": "random"}))
        delegations, hints = {}, {}
        if world.nameserver is not None:
            ns = topo["nameserver"]
            delegations[ns["zone"]] = ns["name"]
            hints[ns["name"]] = ns["address"]
        world.resolver = net.attach(Resolver(spec["address"], params, net.rng("resolver"),
                                             policy, delegations, hints), internal=behind_nat)

    if "victim_server" in topo:
        spec = topo["victim_server"]
        world.victim_host = spec.get("host", "victim.com")
        world.server = net.attach(TcpHost(spec["address"], params, net.rng("server")))
        routes = {path: body.encode() for path, body in
                  spec.get("routes", {"/": DEFAULT_PAGE}).items()}
        world.web = WebServer(world.server, routes)

    oscar_spec = topo.get("oscar")
    if "client" in topo:
        spec = topo["client"]
        hosts = {}
        if world.server is not None:
            hosts[world.victim_host] = world.server.address
        if oscar_spec is not None:
            site = oscar_spec.get("site", "oscar.com")
            hosts[site] = hosts["*." + site] = oscar_spec["address"]
        resolver = (Endpoint(world.resolver.address, DNS_PORT)
                    if world.resolver is not None else None)
        world.client = net.attach(
            ClientHost(spec["address"], params, net.rng("client"), hosts, resolver,
                       PortPolicy.from_dict(spec.get("port_policy", {"kind": "sequential"})),
                       spec.get("strict_ack", False)),
            internal=behind_nat)
        if topo.get("puppet"):
            world.puppet = Puppet(world.client)

    if oscar_spec is not None:
        world.oscar = net.attach(Oscar(oscar_spec["address"], params, net.rng("oscar-host"),
                                       oscar_spec.get("site", "oscar.com")))

    if "zombie" in topo:
        spec = topo["zombie"]
        world.zombie = net.attach(Zombie(spec["address"], spec.get("port", 4000 % params.port_space)),
                                  internal=behind_nat)
    return world
