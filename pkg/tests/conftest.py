import numpy as np
import pytest

from acnopt import Fleet, NetworkSpec, SessionProfile


@pytest.fixture
def spec():
    return NetworkSpec(r_max=3.0, c1=20.0, c2=20.0, n_r=4.0, step_hours=0.2)


def make_fleet(rows, horizon, step_hours=0.2):
    """rows: (arrival, duration, energy[, declared_phase]) tuples."""
    sessions = []
    for i, row in enumerate(rows):
        phase = row[3] if len(row) > 3 else None
        sessions.append(SessionProfile(f"ev{i}", row[0], row[1], row[2], phase))
    return Fleet(tuple(sessions), horizon, step_hours)


def zero_laxity_fleet(rng, n, t, r_max=3.0, step_hours=0.2):
    rows = []
    for _ in range(n):
        d = int(rng.integers(1, t + 1))
        a = int(rng.integers(0, t - d + 1))
        rows.append((a, d, r_max * d * step_hours))
    return make_fleet(rows, t, step_hours)


def random_feasible_pair(rng, fleet, spec):
    """A random (X, A) feasible for the charger, demand, and line sets."""
    from acnopt import PHASES, PhaseSelection, build_phasors, build_presence
    from acnopt.model import line_magnitudes, AggregatePower

    e = build_presence(fleet)
    a = rng.uniform(0.0, 1.0, size=e.shape) * spec.r_max * e
    # scale rows into the demand set
    delivered = a.sum(axis=1) * fleet.step_hours
    for i in range(fleet.n):
        cap = fleet.energies()[i]
        if delivered[i] > cap > 0:
            a[i] *= cap / delivered[i]
        elif cap == 0:
            a[i] = 0.0
    phases = PhaseSelection(tuple(PHASES[int(j)] for j in rng.integers(0, 3, fleet.n)))
    # scale globally into the line-limit set
    mags = line_magnitudes(
        AggregatePower(phases.matrix() @ a), build_phasors(spec.n_r)
    )
    worst = float((mags / spec.c_max(fleet.t)).max(initial=0.0))
    if worst > 1.0:
        a /= worst * (1 + 1e-12)
    return phases, a
