"""Bundled synthetic instances: seeded random generators for property and
acceptance suites, plus a fixed nine-scenario toy set on which balanced
phase assignment can serve all demand while the naive strategies shed load.

The toy scenarios use a 12-step horizon at 0.2 h per step and 3 kW chargers.
Scenarios 1-4 are zero-laxity (every EV must charge at full rate for its
whole stay); 5-9 leave slack between dwell time and demand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Fleet, NetworkSpec, PHASES, SessionProfile

TOY_STEP_HOURS = 0.2
TOY_HORIZON = 12
TOY_R_MAX = 3.0
TOY_N_R = 4.0


def random_fleet(
    rng: np.random.Generator,
    n: int,
    t: int,
    *,
    step_hours: float = 0.2,
    r_max: float = 3.0,
    zero_laxity: bool = False,
    min_fill: float = 0.2,
) -> Fleet:
    """A fleet of n sessions with uniform random windows.

    Zero-laxity sessions demand exactly their full-rate dwell energy;
    otherwise demand is a uniform fraction of it in [min_fill, 1].
    """
    sessions = []
    for i in range(n):
        duration = int(rng.integers(1, t + 1))
        arrival = int(rng.integers(0, t - duration + 1))
        full = r_max * duration * step_hours
        energy = full if zero_laxity else float(rng.uniform(min_fill, 1.0)) * full
        declared = PHASES[int(rng.integers(0, 3))]
        sessions.append(
            SessionProfile(f"ev{i:02d}", arrival, duration, energy, declared)
        )
    return Fleet(tuple(sessions), t, step_hours)


def random_network(
    rng: np.random.Generator,
    n: int,
    *,
    r_max: float = 3.0,
    n_r: float = 4.0,
    step_hours: float = 0.2,
) -> NetworkSpec:
    """Random line capacities scaled so they sometimes bind.

    The secondary limit ranges from below one charger's balanced line load
    up to loose; the primary limit is scaled by the balanced secondary to
    primary ratio (sqrt(3) : 3 / n_r) with its own jitter.
    """
    per_phase = max(n / 3.0, 1.0) * r_max
    c1 = float(rng.uniform(0.7, 2.2)) * np.sqrt(3.0) * per_phase
    c2 = c1 * (3.0 / n_r) / np.sqrt(3.0) * float(rng.uniform(0.8, 1.6))
    return NetworkSpec(r_max=r_max, c1=c1, c2=c2, n_r=n_r, step_hours=step_hours)


def random_instance(
    seed: int,
    n: int,
    t: int,
    *,
    zero_laxity: bool = False,
    r_max: float = 3.0,
    step_hours: float = 0.2,
) -> tuple[Fleet, NetworkSpec]:
    rng = np.random.default_rng(seed)
    fleet = random_fleet(
        rng, n, t, step_hours=step_hours, r_max=r_max, zero_laxity=zero_laxity
    )
    spec = random_network(rng, n, r_max=r_max, step_hours=step_hours)
    return fleet, spec


def ample_instance(
    seed: int,
    n: int,
    t: int,
    *,
    r_max: float = 3.0,
    step_hours: float = 0.2,
) -> tuple[Fleet, NetworkSpec]:
    """Zero-laxity instance with capacity high enough that every demand is
    servable regardless of phase placement."""
    rng = np.random.default_rng(seed)
    fleet = random_fleet(
        rng, n, t, step_hours=step_hours, r_max=r_max, zero_laxity=True
    )
    # all EVs on one phase at full rate is the worst case any X can reach
    c1 = 2.0 * n * r_max
    spec = NetworkSpec(
        r_max=r_max, c1=c1, c2=c1, n_r=4.0, step_hours=step_hours
    )
    return fleet, spec


@dataclass(frozen=True)
class ToyScenario:
    name: str
    fleet: Fleet
    spec: NetworkSpec
    zero_laxity: bool


def _zl(duration: int) -> float:
    return TOY_R_MAX * duration * TOY_STEP_HOURS


def _session(i, arrival, duration, energy, phase):
    return SessionProfile(f"s{i:02d}", arrival, duration, energy, phase)


def _fleet(rows) -> Fleet:
    sessions = tuple(_session(i, *row) for i, row in enumerate(rows))
    return Fleet(sessions, TOY_HORIZON, TOY_STEP_HOURS)


def _spec(c1: float, c2: float) -> NetworkSpec:
    return NetworkSpec(TOY_R_MAX, c1, c2, TOY_N_R, TOY_STEP_HOURS)


def toy_suite() -> tuple[ToyScenario, ...]:
    """The fixed nine scenarios used for strategy comparisons."""
    scenarios = []

    # 1. six identical full-horizon EVs; balanced 2-2-2 split fits, a single
    #    phase carrying all six does not
    scenarios.append(
        ToyScenario(
            "full-horizon-six",
            _fleet(
                [
                    (0, 12, _zl(12), "ab"),
                    (0, 12, _zl(12), "ab"),
                    (0, 12, _zl(12), "bc"),
                    (0, 12, _zl(12), "ab"),
                    (0, 12, _zl(12), "ca"),
                    (0, 12, _zl(12), "ab"),
                ]
            ),
            _spec(c1=11.0, c2=8.0),
            zero_laxity=True,
        )
    )

    # 2. two long sessions at positions 0 and 3 of the arrival order, so the
    #    round-robin cycle stacks both on phase ab; short sessions never
    #    overlap each other, keeping concurrency at three so a balanced
    #    split stays inside the line limit
    scenarios.append(
        ToyScenario(
            "round-robin-trap",
            _fleet(
                [
                    (0, 12, _zl(12), "ab"),
                    (1, 2, _zl(2), "ab"),
                    (3, 2, _zl(2), "bc"),
                    (5, 7, _zl(7), "ab"),
                    (6, 2, _zl(2), "ca"),
                    (8, 2, _zl(2), "ab"),
                ]
            ),
            _spec(c1=5.5, c2=4.5),
            zero_laxity=True,
        )
    )

    # 3. two concurrent pairs in disjoint half-horizons; any same-phase pair
    #    overloads its line
    scenarios.append(
        ToyScenario(
            "pair-overload",
            _fleet(
                [
                    (0, 6, _zl(6), "ab"),
                    (0, 6, _zl(6), "ab"),
                    (6, 6, _zl(6), "bc"),
                    (6, 6, _zl(6), "bc"),
                ]
            ),
            _spec(c1=5.5, c2=4.5),
            zero_laxity=True,
        )
    )

    # 4. five staggered zero-laxity sessions; the 5-concurrent peak needs a
    #    2-2-1 split (worst line sqrt(3) * 6), a single phase needs 15
    scenarios.append(
        ToyScenario(
            "staggered-five",
            _fleet(
                [
                    (0, 10, _zl(10), "ab"),
                    (1, 8, _zl(8), "ab"),
                    (2, 10, _zl(10), "bc"),
                    (4, 8, _zl(8), "ca"),
                    (6, 6, _zl(6), "ab"),
                ]
            ),
            _spec(c1=10.9, c2=8.5),
            zero_laxity=True,
        )
    )

    # 5. six flexible full-horizon EVs at half load; one phase cannot move
    #    the total energy through its line even with perfect shifting
    scenarios.append(
        ToyScenario(
            "flexible-six",
            _fleet(
                [
                    (0, 12, 0.5 * _zl(12), "ab"),
                    (0, 12, 0.5 * _zl(12), "ab"),
                    (0, 12, 0.5 * _zl(12), "bc"),
                    (0, 12, 0.5 * _zl(12), "ab"),
                    (0, 12, 0.5 * _zl(12), "ca"),
                    (0, 12, 0.5 * _zl(12), "ab"),
                ]
            ),
            _spec(c1=7.0, c2=5.5),
            zero_laxity=False,
        )
    )

    # 6. afternoon rush: overlapping mid-horizon windows, moderate laxity
    scenarios.append(
        ToyScenario(
            "midday-rush",
            _fleet(
                [
                    (2, 8, 0.75 * _zl(8), "ab"),
                    (3, 8, 0.75 * _zl(8), "ab"),
                    (3, 9, 0.75 * _zl(9), "bc"),
                    (4, 8, 0.75 * _zl(8), "ca"),
                    (4, 7, 0.75 * _zl(7), "ab"),
                    (5, 7, 0.75 * _zl(7), "ab"),
                ]
            ),
            _spec(c1=8.0, c2=6.5),
            zero_laxity=False,
        )
    )

    # 7. short tight windows (near-zero laxity) arriving in waves
    scenarios.append(
        ToyScenario(
            "tight-waves",
            _fleet(
                [
                    (0, 4, 0.9 * _zl(4), "ab"),
                    (0, 4, 0.9 * _zl(4), "ab"),
                    (4, 4, 0.9 * _zl(4), "bc"),
                    (4, 4, 0.9 * _zl(4), "ab"),
                    (8, 4, 0.9 * _zl(4), "ca"),
                    (8, 4, 0.9 * _zl(4), "ab"),
                ]
            ),
            _spec(c1=4.8, c2=4.0),
            zero_laxity=False,
        )
    )

    # 8. mixed long/short with laxity and a round-robin-hostile arrival order
    scenarios.append(
        ToyScenario(
            "mixed-order",
            _fleet(
                [
                    (0, 12, 0.8 * _zl(12), "ab"),
                    (1, 3, 0.8 * _zl(3), "bc"),
                    (2, 3, 0.8 * _zl(3), "ca"),
                    (3, 9, 0.8 * _zl(9), "ab"),
                    (4, 3, 0.8 * _zl(3), "ab"),
                    (5, 3, 0.8 * _zl(3), "bc"),
                ]
            ),
            _spec(c1=6.4, c2=5.2),
            zero_laxity=False,
        )
    )

    # 9. seven EVs, uneven demands, generous dwell
    scenarios.append(
        ToyScenario(
            "uneven-seven",
            _fleet(
                [
                    (0, 12, 0.6 * _zl(12), "ab"),
                    (0, 10, 0.6 * _zl(10), "bc"),
                    (1, 10, 0.6 * _zl(10), "ab"),
                    (2, 10, 0.6 * _zl(10), "ca"),
                    (2, 8, 0.6 * _zl(8), "ab"),
                    (3, 8, 0.6 * _zl(8), "ab"),
                    (4, 8, 0.6 * _zl(8), "bc"),
                ]
            ),
            _spec(c1=8.5, c2=7.0),
            zero_laxity=False,
        )
    )

    return tuple(scenarios)
