"""Comparison phase-selection strategies and evaluation metrics.

Baselines only pick phases; charging is always scheduled by the same
fixed-phase SOCP so that comparisons isolate the phase decision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    ChargingSchedule,
    Fleet,
    NetworkSpec,
    PHASES,
    PhaseSelection,
    build_phasors,
    line_magnitudes,
    AggregatePower,
)

#: strategy names accepted by :func:`baseline_phases`
STRATEGIES = ("ev-declared", "uniform-random", "round-robin", "worst")


def baseline_phases(fleet: Fleet, strategy: str, seed: int = 0) -> PhaseSelection:
    """Assign phases by one of the empirical strategies.

    ev-declared uses each session's reported phase; uniform-random draws
    iid from the seed; round-robin cycles ab -> bc -> ca in arrival order
    (ties by id); worst puts every EV on phase ab.
    """
    if strategy == "ev-declared":
        labels = []
        for s in fleet.sessions:
            if s.declared_phase is None:
                raise ValueError(f"session {s.id} has no declared phase")
            labels.append(s.declared_phase)
        return PhaseSelection(tuple(labels))
    if strategy == "uniform-random":
        rng = np.random.default_rng(seed)
        return PhaseSelection(
            tuple(PHASES[j] for j in rng.integers(0, 3, size=fleet.n))
        )
    if strategy == "round-robin":
        order = sorted(
            range(fleet.n),
            key=lambda i: (fleet.sessions[i].arrival, fleet.sessions[i].id),
        )
        labels = [""] * fleet.n
        for pos, i in enumerate(order):
            labels[i] = PHASES[pos % 3]
        return PhaseSelection(tuple(labels))
    if strategy == "worst":
        return PhaseSelection(("ab",) * fleet.n)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation summary of a (schedule, phases) pair.

    ``cost`` and ``average_price`` are None when no price vector was given;
    ``average_price`` is also None for a zero-delivery schedule.
    """

    delivered_kwh: float
    demanded_kwh: float
    delivered_per_ev: np.ndarray
    satisfaction_rate: float
    per_phase_energy: np.ndarray
    peak_line_load: float
    cost: float | None = None
    average_price: float | None = None

    @property
    def unmet_kwh(self) -> float:
        return max(self.demanded_kwh - self.delivered_kwh, 0.0)

    def to_dict(self) -> dict:
        return {
            "delivered_kwh": self.delivered_kwh,
            "demanded_kwh": self.demanded_kwh,
            "unmet_kwh": self.unmet_kwh,
            "delivered_per_ev": self.delivered_per_ev.tolist(),
            "satisfaction_rate": self.satisfaction_rate,
            "per_phase_energy_kwh": dict(zip(PHASES, self.per_phase_energy.tolist())),
            "peak_line_load_kw": self.peak_line_load,
            "cost": self.cost,
            "average_price": self.average_price,
        }

    CSV_FIELDS = (
        "delivered_kwh",
        "demanded_kwh",
        "unmet_kwh",
        "satisfaction_rate",
        "energy_ab_kwh",
        "energy_bc_kwh",
        "energy_ca_kwh",
        "peak_line_load_kw",
        "cost",
        "average_price",
    )

    def csv_row(self) -> dict:
        return {
            "delivered_kwh": self.delivered_kwh,
            "demanded_kwh": self.demanded_kwh,
            "unmet_kwh": self.unmet_kwh,
            "satisfaction_rate": self.satisfaction_rate,
            "energy_ab_kwh": self.per_phase_energy[0],
            "energy_bc_kwh": self.per_phase_energy[1],
            "energy_ca_kwh": self.per_phase_energy[2],
            "peak_line_load_kw": self.peak_line_load,
            "cost": "" if self.cost is None else self.cost,
            "average_price": "" if self.average_price is None else self.average_price,
        }


def evaluate(
    schedule: ChargingSchedule,
    phases: PhaseSelection,
    fleet: Fleet,
    spec: NetworkSpec,
    price: np.ndarray | None = None,
) -> MetricsReport:
    """Compute delivered energy, satisfaction, per-phase split, peak line
    load, and (given a per-step price vector) electricity cost."""
    if schedule.power.shape != (fleet.n, fleet.t) or phases.n != fleet.n:
        raise ValueError("schedule / phases dimensions must match fleet")
    dt = fleet.step_hours
    per_ev = schedule.power.sum(axis=1) * dt
    delivered = float(per_ev.sum())
    demanded = float(fleet.energies().sum())
    satisfaction = 1.0 if demanded == 0 else min(delivered / demanded, 1.0)

    aggregate = phases.matrix() @ schedule.power
    per_phase = aggregate.sum(axis=1) * dt
    if fleet.n:
        mags = line_magnitudes(AggregatePower(aggregate), build_phasors(spec.n_r))
        peak = float(mags.max(initial=0.0))
    else:
        peak = 0.0

    cost = average_price = None
    if price is not None:
        price = np.asarray(price, dtype=float)
        if price.shape != (fleet.t,):
            raise ValueError(
                f"price vector length {price.shape} does not match horizon {fleet.t}"
            )
        cost = float(schedule.power.sum(axis=0) @ price * dt)
        average_price = cost / delivered if delivered > 0 else None

    return MetricsReport(
        delivered_kwh=delivered,
        demanded_kwh=demanded,
        delivered_per_ev=per_ev,
        satisfaction_rate=satisfaction,
        per_phase_energy=per_phase,
        peak_line_load=peak,
        cost=cost,
        average_price=average_price,
    )
