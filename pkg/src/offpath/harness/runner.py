"""Monte Carlo trials over a scenario, and parameter sweeps."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..attacks import (AttackOutcome, MarkerLost, NoProbeArrived, ObserveTimeout,
                       find_connection_tuple, kaminsky_poison, learn_sequence_number,
                       predict_then_poison, tcp_injection)
from ..simnet import Endpoint
from .scenario import Scenario
from .stats import wilson_interval
from .world import World, build_world


# --- strategies -------------------------------------------------------------

def _kaminsky(world: World, attack: dict) -> AttackOutcome:
    return kaminsky_poison(world.oscar, world.puppet, world.public_resolver_address,
                           world.nameserver_endpoint, world.nameserver.zone,
                           attack.get("guesses_per_round", world.params.txid_space),
                           attack.get("max_rounds", 1), port=attack.get("port"),
                           track_port=attack.get("track_port", False),
                           rng=world.net.rng("attack"))


def _predict_then_poison(world: World, attack: dict) -> AttackOutcome:
    try:
        return predict_then_poison(world.zombie, world.oscar, world.puppet,
                                   world.nat.address, world.nameserver_endpoint,
                                   world.nameserver.zone,
                                   attack.get("guesses_per_round", world.params.txid_space),
                                   attack.get("max_rounds", 1), attack.get("gap_ticks", 0),
                                   rng=world.net.rng("attack"))
    except NoProbeArrived:
        sent = world.oscar.packets_sent + world.zombie.packets_sent
        return AttackOutcome(False, 0, sent, None, detail={"error": "NoProbeArrived"})


def cross_traffic_hook(world: World, count: int) -> Callable[[int], None] | None:
    """Opens ``count`` unrelated client connections to the victim server."""
    if not count:
        return None

    def hook(attempt: int) -> None:
        for _ in range(count):
            world.client.open_connection(Endpoint(world.server.address, 80))
    return hook


def _learn_tuple(world: World, attack: dict) -> AttackOutcome:
    return find_connection_tuple(world.oscar, world.puppet, world.server_endpoint,
                                 world.victim_host, attack.get("max_attempts", 10),
                                 cross_traffic_hook(world, attack.get("cross_traffic", 0)))


def _learn_seq(world: World, attack: dict) -> AttackOutcome:
    oscar = world.oscar
    start = oscar.packets_sent
    found = find_connection_tuple(oscar, world.puppet, world.server_endpoint,
                                  world.victim_host, attack.get("max_attempts", 10))
    if not found.success:
        return found
    try:
        nxt, report = learn_sequence_number(
            oscar, world.puppet, found.recovered, world.params.wnd_size,
            attack.get("pad_len"), f"http://{world.victim_host}/",
            attack.get("budget_ticks", 10_000), attack.get("pipeline_depth", 1),
            attack.get("requests_per_tick", 1))
    except (MarkerLost, ObserveTimeout) as exc:
        return AttackOutcome(False, found.rounds, oscar.packets_sent - start, None,
                             detail={"error": type(exc).__name__})
    return AttackOutcome(True, found.rounds, oscar.packets_sent - start, nxt,
                         detail={"tuple": found.recovered, "marker": report.index})


def _end_to_end(world: World, attack: dict) -> AttackOutcome:
    return tcp_injection(world.oscar, world.puppet, world.server_endpoint,
                         world.params.wnd_size, world.victim_host, attack.get("pad_len"),
                         attack.get("max_attempts", 10), attack.get("budget_ticks", 10_000))


STRATEGIES: dict[str, Callable[[World, dict], AttackOutcome]] = {
    "kaminsky": _kaminsky,
    "predict_then_poison": _predict_then_poison,
    "learn_tuple": _learn_tuple,
    "learn_seq": _learn_seq,
    "end_to_end": _end_to_end,
}


# --- reports ----------------------------------------------------------------

def format_recovered(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple) and len(value) == 2 and not isinstance(value[0], Endpoint):
        return f"{value[0]}#{value[1]}"
    return str(value)


@dataclass
class TrialRow:
    trial: int
    success: bool
    rounds: int
    packets_sent: int
    recovered: str = ""


@dataclass
class TrialReport:
    scenario: dict
    rows: list[TrialRow] = field(default_factory=list)

    @property
    def aggregates(self) -> dict:
        n = len(self.rows)
        wins = sum(r.success for r in self.rows)
        packets = np.array([r.packets_sent for r in self.rows], dtype=float)
        rounds = sum(r.rounds for r in self.rows)
        lo, hi = wilson_interval(wins, n)
        return {
            "trials": n,
            "successes": wins,
            "success_rate": wins / n if n else 0.0,
            "ci_low": lo,
            "ci_high": hi,
            "mean_packets": float(packets.mean()) if n else 0.0,
            "median_packets": float(np.median(packets)) if n else 0.0,
            "total_packets": int(packets.sum()),
            "mean_rounds": rounds / n if n else 0.0,
            "total_rounds": rounds,
            "per_round_success": wins / rounds if rounds else 0.0,
            "per_packet_success": wins / packets.sum() if n and packets.sum() else 0.0,
        }


def run_trial(scenario: Scenario, seed: int, trace: bool = False) -> tuple[AttackOutcome, World]:
    world = build_world(scenario, seed, trace)
    world.net.note("attack", f"strategy={scenario.strategy} seed={seed}")
    outcome = STRATEGIES[scenario.strategy](world, scenario.attack)
    outcome.trace_id = f"{scenario.name}:{seed}"
    return outcome, world


def _row(args) -> TrialRow:
    scenario, k, seed = args
    outcome, _ = run_trial(scenario, seed)
    return TrialRow(k, bool(outcome.success), outcome.rounds, outcome.packets_sent,
                    format_recovered(outcome.recovered))


def run_scenario(scenario: Scenario, seed: int | None = None, trials: int | None = None,
                 workers: int = 1) -> TrialReport:
    """Trial ``k`` runs with seed ``seed + k``; rows come back in trial order."""
    seed = scenario.seed if seed is None else seed
    trials = scenario.trials if trials is None else trials
    jobs = [(scenario, k, seed + k) for k in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_row, jobs, chunksize=max(1, trials // (4 * workers))))
    else:
        rows = [_row(job) for job in jobs]
    doc = scenario.to_dict()
    doc.update(seed=seed, trials=trials)
    return TrialReport(doc, rows)


def sweep(scenario: Scenario, param: str, values: list, seed: int | None = None,
          trials: int | None = None, workers: int = 1) -> list[tuple[object, TrialReport]]:
    """One run per value; value ``j`` starts from seed ``seed + j * trials``."""
    seed = scenario.seed if seed is None else seed
    trials = scenario.trials if trials is None else trials
    table = []
    for j, value in enumerate(values):
        variant = scenario.with_value(param, value)
        table.append((value, run_scenario(variant, seed + j * trials, trials, workers)))
    return table
