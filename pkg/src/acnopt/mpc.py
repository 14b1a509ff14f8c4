"""Receding-horizon online controller.

Arrivals are revealed over time; each step re-solves the phase relaxation
with already-connected EVs pinned, commits phases for the newcomers, solves
the fixed-phase SOCP over the remaining window, and executes only its first
column.  Phases never change once committed (they are physical plugs).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conic import build_socp_fixed_phase, schedule_from_primal, solve_conic
from .model import (
    ChargingSchedule,
    Fleet,
    NetworkSpec,
    PhaseSelection,
    SelectionConstraint,
    SessionProfile,
    quick_charge_weights,
)
from .pxa import BnBConfig, ContractViolation, branch_and_bound

_CONSTRAINT_BUILDERS = {
    "identity": SelectionConstraint.identity,
    "m_tilde": SelectionConstraint.m_tilde,
}


@dataclass(frozen=True)
class MpcConfig:
    """Controls for one online episode.

    ``constraint`` picks the per-step (M, W) builder, re-derived from the
    updated profiles every step.  ``full_information`` reveals every
    session at step 0 (the offline-equivalent mode used for consistency
    checks).  ``seed`` is echoed into reports only; the controller itself
    is deterministic.
    """

    bnb: BnBConfig = BnBConfig()
    constraint: str = "m_tilde"
    objective: str = "quick-charge"
    full_information: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.constraint not in _CONSTRAINT_BUILDERS:
            raise ValueError(
                f"constraint must be one of {tuple(_CONSTRAINT_BUILDERS)}"
            )
        if self.objective not in ("quick-charge", "ones"):
            raise ValueError("objective must be 'quick-charge' or 'ones'")


def reveal(fleet: Fleet, t: int, seen: Sequence[int] = ()) -> tuple[int, ...]:
    """Indices of sessions visible at step t (arrival <= t) that are not in
    ``seen``."""
    if not 0 <= t < fleet.t:
        raise ValueError(f"step {t} outside horizon [0, {fleet.t})")
    seen_set = set(seen)
    return tuple(
        i
        for i, s in enumerate(fleet.sessions)
        if s.arrival <= t and i not in seen_set
    )


@dataclass
class SimState:
    """Mutable bookkeeping for one episode.

    ``residual_energy`` tracks demand left per EV; ``committed_phases`` is
    append-only (an EV's phase never changes once set); ``delivered`` is
    the executed power matrix filled column by column.
    """

    fleet: Fleet
    clock: int = 0
    residual_energy: np.ndarray = field(init=False)
    committed_phases: dict[int, str] = field(default_factory=dict)
    revealed: set[int] = field(default_factory=set)
    delivered: np.ndarray = field(init=False)
    failed_steps: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.residual_energy = self.fleet.energies()
        self.delivered = np.zeros((self.fleet.n, self.fleet.t))

    def profiles_t(self) -> np.ndarray:
        """The updated N x 3 profile matrix at the current clock: clamped
        arrival, remaining window, residual energy."""
        t = self.clock
        out = np.zeros((self.fleet.n, 3))
        for i, s in enumerate(self.fleet.sessions):
            out[i, 0] = max(s.arrival, t)
            out[i, 1] = min(s.departure - t, s.duration)
            out[i, 2] = self.residual_energy[i]
        return out

    def commit(self, ev: int, phase: str) -> None:
        old = self.committed_phases.get(ev)
        if old is not None and old != phase:
            raise ContractViolation(
                f"phase for EV {ev} already committed to {old}, got {phase}"
            )
        self.committed_phases[ev] = phase


@dataclass(frozen=True)
class StepEvent:
    """Per-step log record (serialized to JSON lines by the CLI)."""

    t: int
    revealed_ids: tuple[str, ...]
    phase_decisions: dict[str, str]
    executed: np.ndarray
    objective: float
    solve_ms: float
    failed: bool = False

    def to_json_dict(self) -> dict:
        return {
            "t": self.t,
            "revealed": list(self.revealed_ids),
            "phases": dict(self.phase_decisions),
            "executed": self.executed.tolist(),
            "objective": None if np.isnan(self.objective) else self.objective,
            "solve_ms": self.solve_ms,
            "failed": self.failed,
        }


def _local_weights(cfg: MpcConfig, remaining: int) -> np.ndarray:
    if cfg.objective == "quick-charge":
        return quick_charge_weights(remaining)
    return np.ones(remaining)


def _sub_fleet(
    state: SimState, active: list[int], t: int
) -> Fleet:
    """Remaining-horizon fleet over local steps [0, T - t)."""
    fleet = state.fleet
    sessions = []
    for i in active:
        s = fleet.sessions[i]
        start = max(s.arrival, t)
        end = min(s.departure, fleet.t)
        sessions.append(
            SessionProfile(
                id=s.id,
                arrival=start - t,
                duration=end - start,
                energy=max(float(state.residual_energy[i]), 0.0),
                declared_phase=s.declared_phase,
            )
        )
    return Fleet(tuple(sessions), fleet.t - t, fleet.step_hours)


def mpc_step(state: SimState, spec: NetworkSpec, cfg: MpcConfig = MpcConfig()) -> StepEvent:
    """Run one controller step at the current clock and advance the state.

    Reveals arrivals, solves the pinned relaxation for new phases, solves
    the remaining-horizon SOCP, executes its first column, and applies the
    profile updates.  A solver failure marks the step failed and executes
    zero power; the episode continues.
    """
    fleet = state.fleet
    t = state.clock
    if t >= fleet.t:
        raise ValueError("episode is already finished")
    started = time.perf_counter()

    if cfg.full_information:
        newly = tuple(i for i in range(fleet.n) if i not in state.revealed)
    else:
        newly = reveal(fleet, t, state.revealed)
    state.revealed.update(newly)

    active = [
        i
        for i in sorted(state.revealed)
        if min(fleet.sessions[i].departure, fleet.t) > t
    ]
    executed = np.zeros(fleet.n)
    phase_decisions: dict[str, str] = {}
    objective = float("nan")
    failed = False

    if active:
        local = _sub_fleet(state, active, t)
        weights = _local_weights(cfg, fleet.t - t)
        builder = _CONSTRAINT_BUILDERS[cfg.constraint]
        preassigned = {
            pos: state.committed_phases[i]
            for pos, i in enumerate(active)
            if i in state.committed_phases
        }
        try:
            constraint = builder(local, spec)
            bnb = branch_and_bound(
                local, spec, constraint, cfg.bnb, weights=weights,
                preassigned=preassigned,
            )
            for pos, i in enumerate(active):
                if i not in state.committed_phases:
                    phase = bnb.phases.assignment[pos]
                    state.commit(i, phase)
                    phase_decisions[fleet.sessions[i].id] = phase
            full = PhaseSelection(
                tuple(state.committed_phases[i] for i in active)
            )
            res = solve_conic(
                build_socp_fixed_phase(full, local, spec, weights), cfg.bnb.tol
            )
            if not res.optimal:
                raise ContractViolation(f"step SOCP failed: {res.status}")
            objective = res.objective
            plan = schedule_from_primal(res.primal, local)
            for pos, i in enumerate(active):
                executed[i] = plan[pos, 0]
        except ContractViolation:
            failed = True
            executed[:] = 0.0
            state.failed_steps.append(t)

    state.delivered[:, t] = executed
    state.residual_energy = state.residual_energy - executed * fleet.step_hours
    state.clock = t + 1

    return StepEvent(
        t=t,
        revealed_ids=tuple(fleet.sessions[i].id for i in newly),
        phase_decisions=phase_decisions,
        executed=executed,
        objective=objective,
        solve_ms=(time.perf_counter() - started) * 1e3,
        failed=failed,
    )


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome of a full online episode."""

    session_ids: tuple[str, ...]
    delivered: np.ndarray
    committed_phases: dict[int, str]
    events: tuple[StepEvent, ...]
    failed_steps: tuple[int, ...]
    step_hours: float

    @property
    def per_step_ms(self) -> np.ndarray:
        return np.array([e.solve_ms for e in self.events])

    @property
    def objective_trace(self) -> np.ndarray:
        return np.array([e.objective for e in self.events])

    def executed_schedule(self) -> ChargingSchedule:
        return ChargingSchedule(self.delivered)

    def phases(self, default: str = "ab") -> PhaseSelection:
        """Committed phases as a dense selection; EVs that never received
        one (e.g. every step at their plug time failed) get ``default``."""
        return PhaseSelection(
            tuple(
                self.committed_phases.get(i, default)
                for i in range(len(self.session_ids))
            )
        )

    def delivered_kwh(self) -> float:
        return float(self.delivered.sum()) * self.step_hours


def run_episode(
    fleet: Fleet, spec: NetworkSpec, cfg: MpcConfig = MpcConfig()
) -> EpisodeResult:
    """Iterate the controller over every step of the horizon."""
    state = SimState(fleet)
    events = []
    for _ in range(fleet.t):
        events.append(mpc_step(state, spec, cfg))
    return EpisodeResult(
        session_ids=fleet.ids(),
        delivered=state.delivered,
        committed_phases=dict(state.committed_phases),
        events=tuple(events),
        failed_steps=tuple(state.failed_steps),
        step_hours=fleet.step_hours,
    )


def write_event_log(events: Sequence[StepEvent], path) -> None:
    """Write per-step events as JSON lines."""
    with open(path, "w") as f:
        for e in events:
            f.write(json.dumps(e.to_json_dict()) + "\n")
