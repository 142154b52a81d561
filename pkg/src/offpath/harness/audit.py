"""Off-path audit over event-log traces.

An off-path attacker may only ever be handed packets whose destination is
one of its own addresses.  The audit replays a trace and flags any
delivery to an attacker node that breaks this.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..simnet import TraceEvent


@dataclass(frozen=True)
class Violation:
    line_no: int
    attacker: str
    event: TraceEvent


def delivered_at(event: TraceEvent) -> str | None:
    head = event.summary.split(" ", 1)[0]
    return head[3:] if head.startswith("at=") else None


def audit_trace(lines, attackers) -> list[Violation]:
    """Deliveries to any address in ``attackers`` whose destination differs."""
    attackers = set(attackers)
    bad = []
    for no, line in enumerate(lines, 1):
        event = TraceEvent.parse(line)
        if event.kind != "deliver":
            continue
        node = delivered_at(event)
        if node in attackers and event.dst.address != node:
            bad.append(Violation(no, node, event))
    return bad


def deliveries_to(lines, address: str) -> int:
    return sum(1 for line in lines
               if (e := TraceEvent.parse(line)).kind == "deliver" and delivered_at(e) == address)
