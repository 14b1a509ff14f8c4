"""Session-file ingestion, emission, and run configuration.

Sessions are JSON-lines records ``{id, arrival_hours, duration_hours,
energy_kwh, declared_phase?}``; a header-bearing CSV with the same columns
is accepted too.  Hours convert to steps with ``arrival = floor(a / dt)``
and ``duration = ceil(d / dt)`` (with a small epsilon so exact multiples do
not straddle a step boundary).  Sessions crossing an episode boundary
(midnight) are split into one piece per day with energy prorated by
duration.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .model import Fleet, PHASES, SessionProfile

SCHEMA_VERSION = 1

_REQUIRED = ("id", "arrival_hours", "duration_hours", "energy_kwh")
_OPTIONAL = ("declared_phase",)
_ROUND_EPS = 1e-9

#: hard ceiling on the step count T implied by a configuration
MAX_STEPS = 100_000


class IngestError(ValueError):
    """A session file could not be parsed; the message names the line."""


def hours_to_steps(arrival_hours: float, duration_hours: float, step_hours: float):
    """(floor, ceil) conversion of an (arrival, duration) pair to steps."""
    arrival = int(math.floor(arrival_hours / step_hours + _ROUND_EPS))
    duration = int(math.ceil(duration_hours / step_hours - _ROUND_EPS))
    return arrival, max(duration, 1 if duration_hours > 0 else 0)


def _parse_record(raw: dict, line_no: int) -> dict:
    unknown = set(raw) - set(_REQUIRED) - set(_OPTIONAL)
    if unknown:
        warnings.warn(
            f"line {line_no}: ignoring unknown fields {sorted(unknown)}",
            stacklevel=3,
        )
    missing = [k for k in _REQUIRED if raw.get(k) in (None, "")]
    if missing:
        raise IngestError(f"line {line_no}: missing fields {missing}")
    try:
        rec = {
            "id": str(raw["id"]),
            "arrival_hours": float(raw["arrival_hours"]),
            "duration_hours": float(raw["duration_hours"]),
            "energy_kwh": float(raw["energy_kwh"]),
        }
    except (TypeError, ValueError) as exc:
        raise IngestError(f"line {line_no}: {exc}") from exc
    phase = raw.get("declared_phase")
    if phase in ("", None):
        phase = None
    elif phase not in PHASES:
        raise IngestError(f"line {line_no}: bad declared_phase {phase!r}")
    rec["declared_phase"] = phase
    if rec["arrival_hours"] < 0:
        raise IngestError(f"line {line_no}: arrival_hours must be >= 0")
    if rec["duration_hours"] < 0:
        raise IngestError(f"line {line_no}: duration_hours must be >= 0")
    if rec["energy_kwh"] < 0:
        raise IngestError(f"line {line_no}: energy_kwh must be >= 0")
    return rec


def read_session_records(path) -> list[dict]:
    """Raw records from a JSON-lines or CSV session file."""
    path = Path(path)
    records = []
    if path.suffix.lower() == ".csv":
        with open(path, newline="") as f:
            for line_no, row in enumerate(csv.DictReader(f), start=2):
                records.append(_parse_record(row, line_no))
        return records
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(raw, dict):
                raise IngestError(f"line {line_no}: expected an object")
            records.append(_parse_record(raw, line_no))
    return records


def split_at_midnight(records: list[dict], horizon_hours: float) -> dict[int, list[dict]]:
    """Assign records to day episodes, splitting boundary-crossing sessions
    into one piece per day with energy prorated by duration."""
    episodes: dict[int, list[dict]] = {}
    for rec in records:
        start = rec["arrival_hours"]
        remaining = rec["duration_hours"]
        total = rec["duration_hours"]
        while True:
            day = int(math.floor(start / horizon_hours + _ROUND_EPS))
            day_end = (day + 1) * horizon_hours
            piece_hours = remaining if total == 0 else min(remaining, day_end - start)
            share = 1.0 if total == 0 else piece_hours / total
            episodes.setdefault(day, []).append(
                {
                    "id": rec["id"],
                    "arrival_hours": start - day * horizon_hours,
                    "duration_hours": piece_hours,
                    "energy_kwh": rec["energy_kwh"] * share,
                    "declared_phase": rec["declared_phase"],
                }
            )
            remaining -= piece_hours
            start = day_end
            if remaining <= _ROUND_EPS:
                break
    return episodes


def _fleet_from_records(
    records: list[dict], horizon_hours: float, step_hours: float
) -> Fleet:
    horizon = steps_in_horizon(horizon_hours, step_hours)
    sessions = []
    for rec in records:
        arrival, duration = hours_to_steps(
            rec["arrival_hours"], rec["duration_hours"], step_hours
        )
        arrival = min(arrival, horizon - 1)
        sessions.append(
            SessionProfile(
                id=rec["id"],
                arrival=arrival,
                duration=duration,
                energy=rec["energy_kwh"],
                declared_phase=rec["declared_phase"],
            )
        )
    sessions.sort(key=lambda s: (s.arrival, s.id))
    return Fleet(tuple(sessions), horizon, step_hours)


def steps_in_horizon(horizon_hours: float, step_hours: float) -> int:
    """Integer step count implied by the horizon, validated."""
    steps = horizon_hours / step_hours
    rounded = round(steps)
    if abs(steps - rounded) > 1e-9 or rounded < 1:
        raise ValueError(
            f"horizon {horizon_hours} h is not an integer number of "
            f"{step_hours} h steps"
        )
    if rounded > MAX_STEPS:
        raise ValueError(f"step count {rounded} exceeds the limit {MAX_STEPS}")
    return int(rounded)


def ingest(
    path,
    *,
    horizon_hours: float = 24.0,
    step_hours: float = 0.2,
    day: int = 0,
) -> Fleet:
    """One day's episode from a session file (see :func:`ingest_all`)."""
    episodes = ingest_all(path, horizon_hours=horizon_hours, step_hours=step_hours)
    if not episodes:
        return Fleet((), steps_in_horizon(horizon_hours, step_hours), step_hours)
    if day not in episodes:
        raise IngestError(
            f"no sessions on day {day}; file covers days {sorted(episodes)}"
        )
    return episodes[day]


def ingest_all(
    path, *, horizon_hours: float = 24.0, step_hours: float = 0.2
) -> dict[int, Fleet]:
    """Every day's episode from a session file, keyed by day index.

    Ordering within an episode is deterministic by (arrival, id).
    """
    records = read_session_records(path)
    episodes = split_at_midnight(records, horizon_hours)
    return {
        day: _fleet_from_records(recs, horizon_hours, step_hours)
        for day, recs in sorted(episodes.items())
    }


def emit(fleet: Fleet, path) -> None:
    """Write a fleet as native JSON-lines (inverse of single-day ingest)."""
    with open(path, "w") as f:
        for s in fleet.sessions:
            rec = {
                "id": s.id,
                "arrival_hours": s.arrival * fleet.step_hours,
                "duration_hours": s.duration * fleet.step_hours,
                "energy_kwh": s.energy,
            }
            if s.declared_phase is not None:
                rec["declared_phase"] = s.declared_phase
            f.write(json.dumps(rec) + "\n")


def read_price(path, t: int) -> np.ndarray:
    """A length-T price vector from a JSON list or a CSV ``price`` column."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        if rows and "price" not in rows[0]:
            raise ValueError("price CSV needs a 'price' column")
        values = [float(r["price"]) for r in rows]
    else:
        with open(path) as f:
            values = [float(v) for v in json.load(f)]
    if len(values) != t:
        raise ValueError(f"price vector has {len(values)} entries, horizon is {t}")
    return np.asarray(values, dtype=float)


@dataclass(frozen=True)
class NetworkConfig:
    r_max: float = 3.0
    c1: float = 20.0
    c2: float = 20.0
    n_r: float = 4.0
    t_hours: float = 24.0
    delta_t_hours: float = 0.2


@dataclass(frozen=True)
class ToleranceBlock:
    feas: float = 1e-7
    gap: float = 1e-7
    bnb_gap: float = 1e-7
    feasibility_check: float = 1e-6


@dataclass(frozen=True)
class RunConfig:
    """Resolved run configuration (defaults follow the reference network:
    3 kW chargers, 20 kW line limits, turning ratio 4, 24 h day at 0.2 h
    steps; the single published line limit is applied to both transformer
    sides)."""

    network: NetworkConfig = NetworkConfig()
    algorithm: str = "pxa"
    m_choice: str = "m_tilde"
    column_cap: int = 1 << 16
    enum_cap: int = 3 ** 8
    sa_iterations: int = 2000
    seed: int = 0
    seeds: tuple[int, ...] = ()
    tolerances: ToleranceBlock = ToleranceBlock()
    price_path: str | None = None
    c1_grid: tuple[float, ...] = ()

    def __post_init__(self):
        if self.m_choice not in ("identity", "m_tilde", "full"):
            raise ValueError("m_choice must be identity, m_tilde, or full")
        base = self.algorithm.split(":", 1)[0]
        if base not in ("pxa", "bfsocp", "sa", "baseline", "mpc"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        steps_in_horizon(self.network.t_hours, self.network.delta_t_hours)

    @property
    def horizon_steps(self) -> int:
        return steps_in_horizon(self.network.t_hours, self.network.delta_t_hours)

    def network_spec(self):
        from .model import NetworkSpec

        return NetworkSpec(
            r_max=self.network.r_max,
            c1=self.network.c1,
            c2=self.network.c2,
            n_r=self.network.n_r,
            step_hours=self.network.delta_t_hours,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["schema_version"] = SCHEMA_VERSION
        out["seeds"] = list(self.seeds)
        out["c1_grid"] = list(self.c1_grid)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        data.pop("schema_version", None)
        network = NetworkConfig(**data.pop("network", {}))
        tolerances = ToleranceBlock(**data.pop("tolerances", {}))
        if "seeds" in data:
            data["seeds"] = tuple(data["seeds"])
        if "c1_grid" in data:
            data["c1_grid"] = tuple(data["c1_grid"])
        return cls(network=network, tolerances=tolerances, **data)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))
