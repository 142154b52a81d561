"""Source-port allocation policies shared by the DNS resolver and TCP hosts."""
from __future__ import annotations

import random
from dataclasses import dataclass


class NoFreePort(Exception):
    pass


@dataclass(frozen=True)
class PortPolicy:
    """``fixed`` always uses ``port``; ``random`` draws uniformly from the
    free ports; ``sequential`` starts at ``start`` and then counts up."""

    kind: str
    port: int | None = None
    start: int | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "random", "sequential"):
            raise ValueError(f"unknown port policy {self.kind!r}")
        if self.kind == "fixed" and self.port is None:
            raise ValueError("fixed policy needs a port")

    @classmethod
    def fixed(cls, port: int) -> "PortPolicy":
        return cls("fixed", port=port)

    @classmethod
    def random(cls) -> "PortPolicy":
        return cls("random")

    @classmethod
    def sequential(cls, start: int | None = None) -> "PortPolicy":
        return cls("sequential", start=start)

    @classmethod
    def from_dict(cls, d: dict) -> "PortPolicy":
        return cls(d["kind"], port=d.get("port"), start=d.get("start"))

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.port is not None:
            out["port"] = self.port
        if self.start is not None:
            out["start"] = self.start
        return out


class PortAllocator:
    def __init__(self, policy: PortPolicy, space: int, rng: random.Random):
        self.policy = policy
        self.space = space
        self.rng = rng
        self.last: int | None = None
        if policy.kind == "fixed" and not 0 <= policy.port < space:
            raise ValueError(f"fixed port {policy.port} outside [0, {space})")

    def allocate(self, in_use=frozenset()) -> int:
        kind = self.policy.kind
        if kind == "fixed":
            return self.policy.port
        if len(in_use) >= self.space:
            raise NoFreePort("every port is in use")
        if kind == "random":
            port = uniform_free_port(self.rng, self.space, in_use)
        else:
            if self.last is None:
                start = self.policy.start if self.policy.start is not None else self.space // 2
                port = start % self.space
            else:
                port = (self.last + 1) % self.space
            while port in in_use:
                port = (port + 1) % self.space
        self.last = port
        return port


def uniform_free_port(rng: random.Random, space: int, in_use) -> int:
    """Uniform draw from ``range(space)`` minus ``in_use``."""
    if len(in_use) * 2 < space:
        while True:
            port = rng.randrange(space)
            if port not in in_use:
                return port
    free = [p for p in range(space) if p not in in_use]
    if not free:
        raise NoFreePort("every port is in use")
    return free[rng.randrange(len(free))]
