"""Round-robin scheduling and checkpointed tournament execution.

The schedule covers every ordered pair of agents (including self-play) once
per exercise, so each agent occupies both role seats against every opponent.
Execution runs under a bounded worker pool, flushes a checkpoint after every
completed negotiation, and skips already-completed pairings on resume.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from random import Random

from .agents import AgentSpec, ChatModelClient
from .catalog import ScenarioSpec
from .errors import ConfigurationError, NotFoundError, ParleyError
from .scoring import Outcome
from .session import Transcript, negotiation_id, run_session

CHECKPOINT_SCHEMA_VERSION = 1


def stable_seed(*parts) -> int:
    """Order-independent reproducible seed from arbitrary parts."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class Pairing:
    exercise: str
    first_role_agent: str
    second_role_agent: str
    seed: int
    first_mover_seat: int = 0  # 0 = first role opens, 1 = second role opens

    def role_map(self, scenario: ScenarioSpec) -> dict[str, str]:
        first, second = scenario.role_names
        return {first: self.first_role_agent, second: self.second_role_agent}

    def negotiation_id(self, scenario: ScenarioSpec) -> str:
        return negotiation_id(scenario.scenario_id, self.role_map(scenario), self.seed)


@dataclass
class TournamentState:
    roster: list[AgentSpec]
    schedule: list[Pairing]
    completed: set[str] = field(default_factory=set)
    failed: list[tuple[Pairing, str]] = field(default_factory=list)

    def pending(self, scenarios: dict[str, ScenarioSpec]) -> list[Pairing]:
        failed_ids = {
            p.negotiation_id(scenarios[p.exercise]) for p, _ in self.failed
        }
        return [
            p
            for p in self.schedule
            if p.negotiation_id(scenarios[p.exercise]) not in self.completed
            and p.negotiation_id(scenarios[p.exercise]) not in failed_ids
        ]


def build_schedule(
    roster: list[AgentSpec], exercises: list[str], base_seed: int
) -> list[Pairing]:
    """All ordered agent pairs (self-play included) once per exercise.

    Seeds derive from (base_seed, exercise, i, j) so resuming or reordering
    never changes them; the opening seat alternates with pair parity so each
    agent opens half its sessions.
    """
    if not roster:
        raise ConfigurationError("roster is empty")
    ids = [a.agent_id for a in roster]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ConfigurationError(f"duplicate agent_id(s) in roster: {', '.join(dupes)}")

    schedule = []
    for exercise in exercises:
        for i, first in enumerate(ids):
            for j, second in enumerate(ids):
                schedule.append(
                    Pairing(
                        exercise=exercise,
                        first_role_agent=first,
                        second_role_agent=second,
                        seed=stable_seed(base_seed, exercise, first, second),
                        first_mover_seat=(i + j) % 2,
                    )
                )
    return schedule


# ---------------------------------------------------------------------------
# Transcript store


class TranscriptStore:
    """Append-only, line-delimited transcript records, one negotiation per line.

    Enforces negotiation_id uniqueness: appending an id that is already stored
    is a no-op, so no pairing can execute twice. When a config hash is given,
    new stores are stamped with it and existing stores must carry the same
    stamp.
    """

    def __init__(self, path: str | Path, config_hash: str | None = None):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._ids: set[str] = set()
        if self.path.exists():
            if config_hash is not None:
                stamped = self._stamped_config()
                if stamped != config_hash:
                    from .errors import ArtifactMismatchError

                    raise ArtifactMismatchError(
                        f"{self.path} was produced under config {stamped!r}, "
                        f"expected {config_hash!r}"
                    )
            for record in self._iter_records():
                self._ids.add(record["negotiation_id"])
        elif config_hash is not None:
            from . import __version__

            self.path.write_text(f"# parley={__version__} config={config_hash}\n")

    def _stamped_config(self) -> str | None:
        with open(self.path) as fh:
            first = fh.readline().strip()
        if not first.startswith("#"):
            return None
        for token in first.lstrip("#").split():
            if token.startswith("config="):
                return token.split("=", 1)[1]
        return None

    def _iter_records(self):
        with open(self.path) as fh:
            for line in fh:
                line = line.strip()
                if line and not line.startswith("#"):
                    yield json.loads(line)

    def __contains__(self, neg_id: str) -> bool:
        return neg_id in self._ids

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> frozenset[str]:
        return frozenset(self._ids)

    def append(self, transcript: Transcript) -> bool:
        with self._lock:
            if transcript.negotiation_id in self._ids:
                return False
            with open(self.path, "a") as fh:
                fh.write(json.dumps(transcript.to_record(), sort_keys=True) + "\n")
            self._ids.add(transcript.negotiation_id)
            return True

    def load(self) -> list[Transcript]:
        if not self.path.exists():
            return []
        return [Transcript.from_record(r) for r in self._iter_records()]


# ---------------------------------------------------------------------------
# Checkpointing


def write_checkpoint(path: str | Path, state: TournamentState) -> None:
    """Atomic write-then-rename so a crash never leaves a torn checkpoint."""
    path = Path(path)
    payload = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "completed": sorted(state.completed),
        "failed": [
            {
                "exercise": p.exercise,
                "first_role_agent": p.first_role_agent,
                "second_role_agent": p.second_role_agent,
                "seed": p.seed,
                "first_mover_seat": p.first_mover_seat,
                "cause": cause,
            }
            for p, cause in state.failed
        ],
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=1, sort_keys=True))
    os.replace(tmp, path)


def read_checkpoint(path: str | Path, state: TournamentState) -> TournamentState:
    path = Path(path)
    if not path.exists():
        return state
    payload = json.loads(path.read_text())
    state.completed = set(payload.get("completed", []))
    state.failed = [
        (
            Pairing(
                exercise=f["exercise"],
                first_role_agent=f["first_role_agent"],
                second_role_agent=f["second_role_agent"],
                seed=f["seed"],
                first_mover_seat=f.get("first_mover_seat", 0),
            ),
            f["cause"],
        )
        for f in payload.get("failed", [])
    ]
    return state


# ---------------------------------------------------------------------------
# Execution


@dataclass
class RunReport:
    scheduled: int
    executed: int
    skipped: int
    failed: int
    wall_clock_seconds: float


def run_tournament(
    state: TournamentState,
    scenarios: dict[str, ScenarioSpec],
    store: TranscriptStore,
    checkpoint_path: str | Path,
    concurrency_limit: int = 4,
    client: ChatModelClient | None = None,
    retry_budget: int = 1,
    svi_items: list[dict] | None = None,
) -> RunReport:
    """Execute every pending pairing at most ``concurrency_limit`` at a time.

    The checkpoint is flushed after each completion; a rerun with the same
    state skips completed pairings, making the tournament idempotent under
    kill-and-resume with scripted agents.
    """
    for pairing in state.schedule:
        if pairing.exercise not in scenarios:
            raise ConfigurationError(f"no scenario loaded for exercise {pairing.exercise!r}")

    # prove the checkpoint is writable before any session starts
    try:
        read_checkpoint(checkpoint_path, state)
        write_checkpoint(checkpoint_path, state)
    except OSError as exc:
        raise ConfigurationError(f"checkpoint {checkpoint_path} unwritable: {exc}") from exc

    agents = {a.agent_id: a for a in state.roster}
    pending = state.pending(scenarios)
    skipped = len(state.schedule) - len(pending)
    start = time.monotonic()
    lock = threading.Lock()
    executed = 0

    def execute(pairing: Pairing) -> tuple[Pairing, Transcript | None, str]:
        scenario = scenarios[pairing.exercise]
        role_map = pairing.role_map(scenario)
        first_mover = scenario.role_names[pairing.first_mover_seat]
        attempts = 0
        transcript = None
        while attempts <= retry_budget:
            transcript = run_session(
                scenario,
                role_map,
                agents,
                pairing.seed,
                client=client,
                first_mover=first_mover,
                svi_items=svi_items,
            )
            if transcript.termination != "aborted":
                return pairing, transcript, ""
            attempts += 1
        return pairing, None, "backend aborted past retry budget"

    with ThreadPoolExecutor(max_workers=max(1, concurrency_limit)) as pool:
        futures = [pool.submit(execute, pairing) for pairing in pending]
        for future in as_completed(futures):
            pairing, transcript, cause = future.result()
            with lock:
                if transcript is None:
                    state.failed.append((pairing, cause))
                else:
                    store.append(transcript)
                    state.completed.add(transcript.negotiation_id)
                    executed += 1
                write_checkpoint(checkpoint_path, state)

    return RunReport(
        scheduled=len(state.schedule),
        executed=executed,
        skipped=skipped,
        failed=len(state.failed),
        wall_clock_seconds=time.monotonic() - start,
    )


# ---------------------------------------------------------------------------
# Ranking stability


RANKING_METRICS = (
    "value_claimed",
    "points",
    "proportion_of_pie",
    "value_created",
    "counterpart_sv",
    "efficiency",
    "deal",
)


@dataclass
class RankingTrajectory:
    metric: str
    sample_counts: list[int]
    curves: dict[str, list[float]]  # agent -> cumulative mean at each count
    ranks: dict[str, list[int]]  # agent -> rank (1 = best) at each count


def _metric_value(outcome: Outcome, role_name: str, metric: str) -> float | None:
    seat = outcome.per_role[role_name]
    if metric == "value_claimed":
        return seat.value_claimed
    if metric == "points":
        return None if seat.points is None else float(seat.points)
    if metric == "proportion_of_pie":
        return seat.proportion_of_pie
    if metric == "value_created":
        return outcome.value_created
    if metric == "counterpart_sv":
        return seat.counterpart_sv
    if metric == "efficiency":
        return float(outcome.efficiency)
    if metric == "deal":
        return float(outcome.deal)
    raise NotFoundError(
        f"unknown metric {metric!r}; valid metrics: {', '.join(RANKING_METRICS)}"
    )


def ranking_trajectory(
    outcomes: list[Outcome], metric: str, order_seed: int
) -> RankingTrajectory:
    """Cumulative-mean curves over a seeded shuffle of each agent's outcomes,
    plus each agent's rank at every sample count (higher mean = better rank;
    ties broken by agent id)."""
    if metric not in RANKING_METRICS:
        raise NotFoundError(
            f"unknown metric {metric!r}; valid metrics: {', '.join(RANKING_METRICS)}"
        )
    values: dict[str, list[float]] = {}
    for outcome in outcomes:
        for role_name, seat in outcome.per_role.items():
            value = _metric_value(outcome, role_name, metric)
            if value is not None:
                values.setdefault(seat.agent_id, []).append(value)
    if not values:
        raise ParleyError(f"no observations carry metric {metric!r}")

    curves: dict[str, list[float]] = {}
    for agent_id, agent_values in sorted(values.items()):
        shuffled = list(agent_values)
        Random(stable_seed(order_seed, agent_id)).shuffle(shuffled)
        running, curve = 0.0, []
        for k, value in enumerate(shuffled, start=1):
            running += value
            curve.append(running / k)
        curves[agent_id] = curve

    max_n = max(len(c) for c in curves.values())
    sample_counts = list(range(1, max_n + 1))
    ranks: dict[str, list[int]] = {agent: [] for agent in curves}
    for k in sample_counts:
        snapshot = sorted(
            ((-(curve[min(k, len(curve)) - 1]), agent) for agent, curve in curves.items())
        )
        for rank, (_, agent) in enumerate(snapshot, start=1):
            ranks[agent].append(rank)
    return RankingTrajectory(
        metric=metric, sample_counts=sample_counts, curves=curves, ranks=ranks
    )
