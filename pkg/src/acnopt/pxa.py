"""Phase-assignment algorithms.

Branch-and-bound over the aggregate-power relaxation, the two-step solver
(relaxation for phases, then the fixed-phase SOCP for the schedule), the
zero-laxity schedule reconstruction, the exhaustive brute-force oracle, and
the simulated-annealing baseline.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .conic import (
    SolveStatus,
    ToleranceConfig,
    build_relaxed_node,
    build_socp_fixed_phase,
    node_aggregate_power,
    schedule_from_primal,
    solve_conic,
)
from .model import (
    AggregatePower,
    CapExceededError,
    ChargingSchedule,
    Fleet,
    NetworkSpec,
    PHASES,
    PhaseSelection,
    SelectionConstraint,
    build_presence,
    check_feasibility,
    objective_value,
)

DEFAULT_ENUM_CAP = 3 ** 8
_FEAS_CHECK_TOL = 1e-6


class ContractViolation(RuntimeError):
    """An internal solver contract was broken (e.g. the fixed-phase problem
    came back infeasible for a phase selection produced by a relaxation)."""


@dataclass(frozen=True)
class BnBConfig:
    """Branch-and-bound controls.

    ``node_selection`` is best-bound or depth-first; ``branch_order``
    decides which EV each tree level fixes (largest energy demand first by
    default, ties by arrival then id).  ``gap_tol`` is relative to
    max(1, |incumbent|).  ``symmetry_breaking`` fixes the first branched
    EV to phase ab when nothing is preassigned: cyclically relabeling all
    phases permutes the line magnitudes within each transformer side and
    the side limits are uniform, so one representative per orbit suffices.
    """

    node_selection: str = "best-bound"
    integrality_tol: float = 1e-6
    gap_tol: float = 1e-7
    node_limit: int = 10 ** 9
    branch_order: str = "energy-desc"
    symmetry_breaking: bool = True
    tol: ToleranceConfig = ToleranceConfig()

    def __post_init__(self):
        if self.node_selection not in ("best-bound", "depth-first"):
            raise ValueError("node_selection must be best-bound or depth-first")
        if self.branch_order not in ("energy-desc", "input"):
            raise ValueError("branch_order must be energy-desc or input")
        if not (self.integrality_tol > 0 and self.gap_tol > 0):
            raise ValueError("tolerances must be > 0")
        if self.node_limit < 1:
            raise ValueError("node_limit must be >= 1")


@dataclass(frozen=True)
class BnBResult:
    phases: PhaseSelection
    objective: float
    best_bound: float
    aggregate_power: AggregatePower
    node_count: int
    status: str  # "optimal" | "node-limit"
    wall_time: float

    @property
    def gap(self) -> float:
        return self.objective - self.best_bound


@dataclass(frozen=True)
class PxaSolution:
    phases: PhaseSelection
    schedule: ChargingSchedule
    relaxation_objective: float
    final_objective: float
    node_count: int
    wall_time: float


@dataclass(frozen=True)
class BruteForceResult:
    phases: PhaseSelection
    schedule: ChargingSchedule
    objective: float
    solve_count: int


def _branch_order(fleet: Fleet, free: Iterable[int], rule: str) -> list[int]:
    free = list(free)
    if rule == "input":
        return free
    return sorted(
        free,
        key=lambda i: (
            -fleet.sessions[i].energy,
            fleet.sessions[i].arrival,
            fleet.sessions[i].id,
        ),
    )


def _round_robin(fleet: Fleet, free: list[int]) -> dict[int, str]:
    """Arrival-ordered round-robin start assignment for the incumbent."""
    order = sorted(free, key=lambda i: (fleet.sessions[i].arrival, fleet.sessions[i].id))
    return {i: PHASES[pos % 3] for pos, i in enumerate(order)}


def branch_and_bound(
    fleet: Fleet,
    spec: NetworkSpec,
    constraint: SelectionConstraint,
    cfg: BnBConfig = BnBConfig(),
    *,
    weights: np.ndarray | None = None,
    preassigned: Mapping[int, str] | None = None,
) -> BnBResult:
    """Solve the mixed-integer aggregate-power problem by ternary-tree
    branch-and-bound.

    Each tree level fixes one EV's phase to ab/bc/ca; node relaxations keep
    the remaining selection columns on the simplex.  Nodes whose relaxation
    bound cannot improve the incumbent by more than the gap tolerance are
    pruned, so the returned objective is within ``cfg.gap_tol`` (relative)
    of the true optimum.  ``preassigned`` pins phases (the online setting).
    """
    start = time.perf_counter()
    preassigned = dict(preassigned or {})
    order = _branch_order(
        fleet, (i for i in range(fleet.n) if i not in preassigned), cfg.branch_order
    )
    n_free = len(order)

    def solve_node(fixed: dict[int, str]):
        prog = build_relaxed_node(fleet, spec, constraint, fixed, weights)
        return prog, solve_conic(prog, cfg.tol)

    def full_assignment(fixed: Mapping[int, str]) -> PhaseSelection:
        return PhaseSelection(tuple(fixed[i] for i in range(fleet.n)))

    # Warm incumbent: round-robin over the free EVs, solved with X constant.
    incumbent_fixed = {**preassigned, **_round_robin(fleet, order)}
    _, warm = solve_node(incumbent_fixed)
    incumbent_value = math.inf
    incumbent_phases: dict[int, str] | None = None
    incumbent_power: np.ndarray | None = None
    if warm.optimal:
        incumbent_value = warm.objective
        incumbent_phases = dict(incumbent_fixed)
        incumbent_power = node_aggregate_power(warm.primal, fleet.t)

    def prune_eps() -> float:
        return cfg.gap_tol * max(1.0, abs(incumbent_value))

    node_count = 0
    status = "optimal"
    counter = itertools.count()
    # frontier entries: (bound, tiebreak, depth, fixed-phases dict)
    frontier: list = []

    def push(bound: float, depth: int, fixed: dict[int, str]):
        if cfg.node_selection == "best-bound":
            heapq.heappush(frontier, (bound, next(counter), depth, fixed))
        else:
            frontier.append((bound, next(counter), depth, fixed))

    def pop():
        if cfg.node_selection == "best-bound":
            return heapq.heappop(frontier)
        return frontier.pop()

    def try_integral(fixed: dict[int, str], res) -> None:
        """Accept a fully integral relaxation solution as incumbent."""
        nonlocal incumbent_value, incumbent_phases, incumbent_power
        if res.objective < incumbent_value:
            incumbent_value = res.objective
            incumbent_phases = dict(fixed)
            incumbent_power = node_aggregate_power(res.primal, fleet.t)

    _, root = solve_node(preassigned)
    node_count += 1
    if root.status is SolveStatus.INFEASIBLE:
        raise ContractViolation("root relaxation is infeasible")
    if not root.optimal:
        raise ContractViolation(f"root relaxation failed: {root.status}")
    best_bound = root.objective

    def frac_columns(res, fixed) -> dict[int, np.ndarray]:
        free = [i for i in range(fleet.n) if i not in fixed]
        cols = {}
        base = 3 * fleet.t
        for pos, j in enumerate(free):
            cols[j] = res.primal[base + 3 * pos : base + 3 * pos + 3]
        return cols

    def is_integral(res, fixed) -> dict[int, str] | None:
        cols = frac_columns(res, fixed)
        full = dict(fixed)
        for j, col in cols.items():
            top = int(np.argmax(col))
            if abs(col[top] - 1.0) > cfg.integrality_tol:
                return None
            full[j] = PHASES[top]
        return full

    rounded = is_integral(root, preassigned)
    if rounded is not None and len(rounded) == fleet.n:
        if n_free == 0:
            try_integral(rounded, root)
        else:
            # re-solve with the rounding pinned so the incumbent value is exact
            _, res = solve_node(rounded)
            if res.optimal:
                try_integral(rounded, res)
    if n_free and incumbent_value > best_bound + prune_eps():
        push(root.objective, 0, dict(preassigned))

    while frontier:
        bound, _, depth, fixed = pop()
        if bound >= incumbent_value - prune_eps():
            continue
        if node_count + 3 > cfg.node_limit:
            status = "node-limit"
            open_bounds = [bound] + [entry[0] for entry in frontier]
            best_bound = min(min(open_bounds), incumbent_value)
            break
        ev = order[depth]
        choices = PHASES
        if depth == 0 and cfg.symmetry_breaking and not preassigned:
            choices = PHASES[:1]  # one representative of each cyclic orbit
        for phase in choices:
            child_fixed = {**fixed, ev: phase}
            _, res = solve_node(child_fixed)
            node_count += 1
            if res.status is SolveStatus.INFEASIBLE:
                continue
            if not res.optimal:
                continue  # failed node: treated as exhausted, recorded via status
            if res.objective >= incumbent_value - prune_eps():
                continue
            if depth + 1 == n_free:
                try_integral(child_fixed, res)
                continue
            rounded = is_integral(res, child_fixed)
            if rounded is not None:
                _, exact = solve_node(rounded)
                if exact.optimal:
                    try_integral(rounded, exact)
                if res.objective >= incumbent_value - prune_eps():
                    continue
            push(res.objective, depth + 1, child_fixed)

    if status == "optimal":
        best_bound = max(best_bound, incumbent_value - prune_eps())
        best_bound = min(best_bound, incumbent_value)

    if incumbent_phases is None:
        raise ContractViolation("branch-and-bound found no feasible assignment")

    return BnBResult(
        phases=full_assignment(incumbent_phases),
        objective=incumbent_value,
        best_bound=best_bound,
        aggregate_power=AggregatePower(incumbent_power),
        node_count=node_count,
        status=status,
        wall_time=time.perf_counter() - start,
    )


def pxa(
    fleet: Fleet,
    spec: NetworkSpec,
    constraint: SelectionConstraint | None = None,
    cfg: BnBConfig = BnBConfig(),
    *,
    weights: np.ndarray | None = None,
    schedule_mode: str = "socp",
) -> PxaSolution:
    """Two-step phase optimization: pick phases via the branch-and-bound
    relaxation, then schedule via the fixed-phase SOCP.

    ``schedule_mode="reconstruct"`` splits the relaxation's aggregate power
    across co-phased EVs instead of re-solving; valid for zero-laxity
    fleets with the identity selection constraint.
    """
    start = time.perf_counter()
    if constraint is None:
        constraint = SelectionConstraint.m_tilde(fleet, spec)
    bnb = branch_and_bound(fleet, spec, constraint, cfg, weights=weights)

    if schedule_mode == "reconstruct":
        schedule = reconstruct_schedule_zero_laxity(
            bnb.aggregate_power, bnb.phases, fleet
        )
    elif schedule_mode == "socp":
        res = solve_conic(
            build_socp_fixed_phase(bnb.phases, fleet, spec, weights), cfg.tol
        )
        if res.status is SolveStatus.INFEASIBLE:
            # cannot happen when (M, W) is a true relaxation of the charging set
            raise ContractViolation("fixed-phase SOCP infeasible after relaxation")
        if not res.optimal:
            raise ContractViolation(f"fixed-phase SOCP failed: {res.status}")
        schedule = ChargingSchedule(schedule_from_primal(res.primal, fleet))
    else:
        raise ValueError("schedule_mode must be 'socp' or 'reconstruct'")

    report = check_feasibility(bnb.phases, schedule, fleet, spec, tol=_FEAS_CHECK_TOL)
    if not report.feasible:
        raise ContractViolation(
            f"returned schedule violates constraints by {report.max_violation:.3e}"
        )
    w = np.ones(fleet.t) if weights is None else np.asarray(weights, dtype=float)
    return PxaSolution(
        phases=bnb.phases,
        schedule=schedule,
        relaxation_objective=bnb.objective,
        final_objective=objective_value(schedule, w),
        node_count=bnb.node_count,
        wall_time=time.perf_counter() - start,
    )


def reconstruct_schedule_zero_laxity(
    p: AggregatePower, x: PhaseSelection, fleet: Fleet, tol: float = 1e-6
) -> ChargingSchedule:
    """Split each phase's aggregate power equally across the EVs present on
    that phase at each step.

    For a zero-laxity fleet and an aggregate power feasible under the
    identity selection constraint, the split never exceeds the charger rate
    and reproduces P exactly as X A.
    """
    if x.n != fleet.n or p.power.shape != (3, fleet.t):
        raise ValueError("dimensions must match fleet")
    presence = build_presence(fleet)
    phase_idx = x.indices()
    power = np.zeros((fleet.n, fleet.t))
    for m in range(3):
        members = np.flatnonzero(phase_idx == m)
        counts = presence[members].sum(axis=0) if members.size else np.zeros(fleet.t)
        for step in range(fleet.t):
            load = p.power[m, step]
            if counts[step] == 0:
                if load > tol:
                    raise ValueError(
                        f"phase {PHASES[m]} carries {load:.4g} kW at step {step} "
                        "with no EV present to deliver it"
                    )
                continue
            share = load / counts[step]
            power[members, step] = share * presence[members, step]
    return ChargingSchedule(power)


def bfsocp(
    fleet: Fleet,
    spec: NetworkSpec,
    *,
    weights: np.ndarray | None = None,
    cap: int = DEFAULT_ENUM_CAP,
    tol: ToleranceConfig = ToleranceConfig(),
) -> BruteForceResult:
    """Exhaustive oracle: solve the fixed-phase SOCP for every one of the
    3^N phase selections and keep the best.

    Exact up to solver tolerance, exponential in N; refuses to start when
    3^N exceeds ``cap``.
    """
    total = 3 ** fleet.n
    if total > cap:
        raise CapExceededError(
            f"brute force needs 3^{fleet.n} = {total} solves, cap is {cap}"
        )
    best: tuple[float, PhaseSelection, np.ndarray] | None = None
    solves = 0
    for combo in itertools.product(PHASES, repeat=fleet.n):
        phases = PhaseSelection(combo)
        res = solve_conic(build_socp_fixed_phase(phases, fleet, spec, weights), tol)
        solves += 1
        if not res.optimal:
            raise ContractViolation(
                f"fixed-phase SOCP failed for {combo}: {res.status}"
            )
        if best is None or res.objective < best[0]:
            best = (res.objective, phases, schedule_from_primal(res.primal, fleet))
    assert best is not None
    return BruteForceResult(
        phases=best[1],
        schedule=ChargingSchedule(best[2]),
        objective=best[0],
        solve_count=solves,
    )


@dataclass(frozen=True)
class SAConfig:
    """Simulated-annealing controls.

    ``iterations`` counts energy evaluations including the initial
    assignment, so a budget of 1 returns the start point untouched.  When
    ``initial_temperature`` is None it is set to the standard deviation of
    20 random-assignment objectives; the geometric schedule ends at
    ``final_fraction`` times the start temperature.
    """

    iterations: int = 10_000
    seed: int = 0
    initial_temperature: float | None = None
    final_fraction: float = 1e-3
    tol: ToleranceConfig = ToleranceConfig()

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.final_fraction <= 1:
            raise ValueError("final_fraction must be in (0, 1]")


@dataclass(frozen=True)
class SAResult:
    phases: PhaseSelection
    objective: float
    best_trace: np.ndarray
    evaluated: int


def simulated_annealing(
    fleet: Fleet,
    spec: NetworkSpec,
    cfg: SAConfig = SAConfig(),
    *,
    weights: np.ndarray | None = None,
) -> SAResult:
    """Metropolis chain over phase selections with the fixed-phase SOCP
    objective as energy.

    Proposals reassign one uniformly chosen EV to a uniformly chosen phase;
    repeated assignments hit a cache rather than re-solving.  Fully
    reproducible from the seed.
    """
    rng = np.random.default_rng(cfg.seed)
    cache: dict[tuple[str, ...], float] = {}

    def energy(combo: tuple[str, ...]) -> float:
        if combo not in cache:
            res = solve_conic(
                build_socp_fixed_phase(PhaseSelection(combo), fleet, spec, weights),
                cfg.tol,
            )
            if not res.optimal:
                raise ContractViolation(f"SOCP failed for {combo}: {res.status}")
            cache[combo] = res.objective
        return cache[combo]

    def random_combo() -> tuple[str, ...]:
        return tuple(PHASES[j] for j in rng.integers(0, 3, size=fleet.n))

    current = random_combo()
    current_e = energy(current)

    t0 = cfg.initial_temperature
    if t0 is None:
        probe = [energy(random_combo()) for _ in range(20)]
        t0 = float(np.std(probe))

    steps = cfg.iterations - 1
    if t0 > 0 and steps > 0:
        temperatures = np.geomspace(t0, t0 * cfg.final_fraction, num=steps)
    else:
        temperatures = np.zeros(max(steps, 0))

    best = current
    best_e = current_e
    trace = np.empty(cfg.iterations)
    trace[0] = best_e

    for k in range(steps):
        if fleet.n:
            ev = int(rng.integers(0, fleet.n))
            phase = PHASES[int(rng.integers(0, 3))]
            proposal = current[:ev] + (phase,) + current[ev + 1 :]
        else:
            proposal = current
        delta = energy(proposal) - current_e
        temp = temperatures[k]
        accept = delta <= 0 or (
            temp > 0 and rng.random() < math.exp(-delta / temp)
        )
        if accept:
            current = proposal
            current_e += delta
            if current_e < best_e:
                best, best_e = current, current_e
        trace[k + 1] = best_e

    return SAResult(
        phases=PhaseSelection(best),
        objective=best_e,
        best_trace=trace,
        evaluated=len(cache),
    )
