"""Scenario files: JSON documents describing parameters, topology and attack."""
from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from ..nat import InboundMode, NatPolicy
from ..ports import PortPolicy
from ..simnet import SimParams


class InvalidScenario(ValueError):
    """Raised with a ``field: message`` description of the first problem found."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# Which topology roles each strategy needs.
STRATEGY_ROLES = {
    "kaminsky": ("client", "resolver", "nameserver", "oscar", "puppet"),
    "predict_then_poison": ("client", "resolver", "nameserver", "oscar", "puppet",
                            "zombie", "nat"),
    "learn_tuple": ("client", "oscar", "victim_server", "puppet"),
    "learn_seq": ("client", "oscar", "victim_server", "puppet"),
    "end_to_end": ("client", "oscar", "victim_server", "puppet"),
}

_ROLE_FIELDS = {
    "client": {"address", "port_policy", "strict_ack"},
    "resolver": {"address", "port_policy"},
    "nameserver": {"address", "name", "zone", "records", "ttl"},
    "oscar": {"address", "site"},
    "zombie": {"address", "port"},
    "victim_server": {"address", "host", "routes"},
    "nat": {"address", "policy", "shared_counter", "inbound", "idle_timeout"},
}

_ATTACK_FIELDS = {
    "kaminsky": {"strategy", "guesses_per_round", "max_rounds", "port", "track_port"},
    "predict_then_poison": {"strategy", "guesses_per_round", "max_rounds", "gap_ticks"},
    "learn_tuple": {"strategy", "max_attempts", "cross_traffic"},
    "learn_seq": {"strategy", "max_attempts", "pad_len", "budget_ticks", "pipeline_depth",
                  "requests_per_tick"},
    "end_to_end": {"strategy", "max_attempts", "pad_len", "budget_ticks"},
}

_PARAM_FIELDS = {f.name for f in dataclasses.fields(SimParams)}


@dataclass
class Scenario:
    name: str
    params: SimParams
    topology: dict
    attack: dict
    trials: int = 1
    seed: int = 0

    @property
    def strategy(self) -> str:
        return self.attack["strategy"]

    @property
    def victim_domain(self) -> str | None:
        ns = self.topology.get("nameserver")
        return ns["zone"] if ns else None

    def to_dict(self) -> dict:
        return {"name": self.name, "params": dataclasses.asdict(self.params),
                "topology": copy.deepcopy(self.topology), "attack": dict(self.attack),
                "trials": self.trials, "seed": self.seed}

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        return _validate(doc)

    def with_value(self, param: str, value) -> "Scenario":
        """Copy with one field replaced; ``param`` is dotted or a bare name."""
        doc = self.to_dict()
        path = resolve_param(doc, param)
        node = doc
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = value
        return _validate(doc)


def resolve_param(doc: dict, param: str) -> list[str]:
    """Dotted path for ``param`` inside a scenario document."""
    if "." in param:
        path = param.split(".")
        node = doc
        for key in path[:-1]:
            if not isinstance(node, dict) or key not in node:
                raise InvalidScenario(param, "no such parameter")
            node = node[key]
        if not isinstance(node, dict):
            raise InvalidScenario(param, "no such parameter")
        return path
    if param in _PARAM_FIELDS:
        return ["params", param]
    if param in _ATTACK_FIELDS.get(doc.get("attack", {}).get("strategy"), ()):
        return ["attack", param]
    if param in ("trials", "seed"):
        return [param]
    raise InvalidScenario(param, "no such parameter")


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file.  OSError propagates for I/O trouble."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidScenario(str(path), f"not valid JSON ({exc})") from exc
    return _validate(doc)


def _require(cond: bool, field: str, message: str) -> None:
    if not cond:
        raise InvalidScenario(field, message)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _validate(doc) -> Scenario:
    _require(isinstance(doc, dict), "scenario", "must be a JSON object")
    unknown = set(doc) - {"name", "params", "topology", "attack", "trials", "seed"}
    _require(not unknown, "scenario", f"unknown keys {sorted(unknown)}")

    raw_params = doc.get("params", {})
    _require(isinstance(raw_params, dict), "params", "must be an object")
    for key in raw_params:
        _require(key in _PARAM_FIELDS, f"params.{key}", "unknown parameter")
    try:
        params = SimParams(**raw_params)
    except (TypeError, ValueError) as exc:
        raise InvalidScenario("params", str(exc)) from exc

    topo = doc.get("topology")
    _require(isinstance(topo, dict), "topology", "missing or not an object")
    topo = copy.deepcopy(topo)
    attack = doc.get("attack")
    _require(isinstance(attack, dict), "attack", "missing or not an object")
    attack = dict(attack)
    strategy = attack.get("strategy")
    _require(strategy in STRATEGY_ROLES, "attack.strategy",
             f"unknown strategy {strategy!r}; expected one of {sorted(STRATEGY_ROLES)}")
    for key in attack:
        _require(key in _ATTACK_FIELDS[strategy], f"attack.{key}",
                 f"not a parameter of {strategy}")

    addresses = {}
    for role, spec in topo.items():
        if role == "puppet":
            _require(isinstance(spec, bool), "topology.puppet", "must be true or false")
            continue
        _require(role in _ROLE_FIELDS, f"topology.{role}", "unknown role")
        _require(isinstance(spec, dict), f"topology.{role}", "must be an object")
        for key in spec:
            _require(key in _ROLE_FIELDS[role], f"topology.{role}.{key}", "unknown field")
        addr = spec.get("address")
        _require(isinstance(addr, str) and addr and ":" not in addr and "\t" not in addr,
                 f"topology.{role}.address", "must be a non-empty string without ':'")
        _require(addr not in addresses, f"topology.{role}.address",
                 f"duplicates the address of {addresses.get(addr)}")
        addresses[addr] = role
    for role in STRATEGY_ROLES[strategy]:
        present = topo.get(role) is True if role == "puppet" else role in topo
        _require(present, f"topology.{role}", f"required by strategy {strategy}")

    space = params.port_space
    if "nameserver" in topo or "resolver" in topo:
        _require(space > 53, "params.port_bits", "DNS servers listen on port 53")
    for role in ("client", "resolver"):
        if role in topo and "port_policy" in topo[role]:
            field = f"topology.{role}.port_policy"
            pol = topo[role]["port_policy"]
            _require(isinstance(pol, dict), field, "must be an object")
            try:
                policy = PortPolicy.from_dict(pol)
            except (KeyError, ValueError) as exc:
                raise InvalidScenario(field, str(exc)) from exc
            for key in ("port", "start"):
                v = getattr(policy, key)
                _require(v is None or (_is_int(v) and 0 <= v < space), f"{field}.{key}",
                         f"must be a port in [0, {space})")
    if "client" in topo:
        _require(isinstance(topo["client"].get("strict_ack", False), bool),
                 "topology.client.strict_ack", "must be a boolean")
    if "nameserver" in topo:
        ns = topo["nameserver"]
        zone = ns.get("zone")
        _require(isinstance(zone, str) and zone, "topology.nameserver.zone", "required")
        ns.setdefault("name", f"ns.{zone}")
        _require(isinstance(ns["name"], str), "topology.nameserver.name", "must be a string")
        _require(isinstance(ns.get("records", {}), dict), "topology.nameserver.records",
                 "must be an object")
        _require(_is_int(ns.get("ttl", 300)) and ns.get("ttl", 300) > 0,
                 "topology.nameserver.ttl", "must be a positive integer")
    if "zombie" in topo:
        port = topo["zombie"].get("port", 4000 % space)
        _require(_is_int(port) and 0 <= port < space, "topology.zombie.port",
                 f"must be a port in [0, {space})")
    if "victim_server" in topo:
        vs = topo["victim_server"]
        _require(isinstance(vs.get("host", "victim.com"), str), "topology.victim_server.host",
                 "must be a string")
        _require(space > 80, "params.port_bits", "web servers listen on port 80")
        routes = vs.get("routes", {})
        _require(isinstance(routes, dict) and all(isinstance(v, str) for v in routes.values()),
                 "topology.victim_server.routes", "must map paths to strings")
    if "nat" in topo:
        nat = topo["nat"]
        try:
            NatPolicy(nat.get("policy", "per_destination"))
        except ValueError as exc:
            raise InvalidScenario("topology.nat.policy", str(exc)) from exc
        try:
            InboundMode(nat.get("inbound", "address"))
        except ValueError as exc:
            raise InvalidScenario("topology.nat.inbound", str(exc)) from exc
        _require(isinstance(nat.get("shared_counter", True), bool),
                 "topology.nat.shared_counter", "must be a boolean")
        t = nat.get("idle_timeout")
        _require(t is None or (_is_int(t) and t > 0), "topology.nat.idle_timeout",
                 "must be null or a positive integer")

    _validate_attack(strategy, attack, params)

    trials = doc.get("trials", 1)
    _require(_is_int(trials) and trials >= 1, "trials", "must be a positive integer")
    seed = doc.get("seed", 0)
    _require(_is_int(seed) and 0 <= seed < 1 << 64, "seed", "must be a 64-bit unsigned integer")
    name = doc.get("name", strategy)
    _require(isinstance(name, str), "name", "must be a string")
    return Scenario(name, params, topo, attack, trials, seed)


def _validate_attack(strategy: str, attack: dict, params: SimParams) -> None:
    def positive(key, default):
        v = attack.get(key, default)
        _require(_is_int(v) and v >= 1, f"attack.{key}", "must be a positive integer")
        return v

    if strategy in ("kaminsky", "predict_then_poison"):
        k = positive("guesses_per_round", params.txid_space)
        positive("max_rounds", 1)
        port = attack.get("port")
        known = strategy == "predict_then_poison" or port is not None
        limit = params.txid_space if known else params.txid_space * params.port_space
        _require(k <= limit, "attack.guesses_per_round", f"exceeds the {limit} possible guesses")
        if strategy == "kaminsky":
            _require(port is None or (_is_int(port) and 0 <= port < params.port_space),
                     "attack.port", f"must be null or a port in [0, {params.port_space})")
            _require(isinstance(attack.get("track_port", False), bool), "attack.track_port",
                     "must be a boolean")
            _require(not attack.get("track_port") or port is not None, "attack.track_port",
                     "needs a known port")
        else:
            g = attack.get("gap_ticks", 0)
            _require(_is_int(g) and g >= 0, "attack.gap_ticks", "must be a non-negative integer")
    else:
        positive("max_attempts", 10)
        if strategy == "learn_tuple":
            c = attack.get("cross_traffic", 0)
            _require(_is_int(c) and c >= 0, "attack.cross_traffic",
                     "must be a non-negative integer")
        else:
            pad = attack.get("pad_len", params.wnd_size)
            _require(_is_int(pad) and pad >= 0, "attack.pad_len", "must be a non-negative integer")
            positive("budget_ticks", 10_000)
            positive("pipeline_depth", 1)
            positive("requests_per_tick", 1)
