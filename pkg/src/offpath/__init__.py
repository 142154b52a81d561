"""Deterministic simulator of off-path DNS poisoning and TCP injection attacks."""
from importlib import resources
from pathlib import Path

from .simnet import Endpoint, Network, Packet, Proto, SimParams, SpoofDenied, seeded_rng

__version__ = "0.1.0"


def scenario_path(name: str) -> Path:
    """Path of a scenario file shipped with the package, e.g. ``"kaminsky"``."""
    if not name.endswith(".json"):
        name += ".json"
    return Path(str(resources.files(__package__) / "scenarios" / name))


def shipped_scenarios() -> list[Path]:
    return sorted(Path(str(resources.files(__package__) / "scenarios")).glob("*.json"))


__all__ = ["Endpoint", "Network", "Packet", "Proto", "SimParams", "SpoofDenied", "scenario_path",
           "seeded_rng", "shipped_scenarios"]
