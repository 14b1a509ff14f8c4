"""Domain model for three-phase EV charging networks.

Holds the session/network types, the presence and phasor matrices, the
relaxed-constraint (M, W) builders, and feasibility checking.  All types are
immutable after construction and all operations are pure functions, so they
can be shared freely across concurrent solver workers.

Conventions: time is measured in integer step indices (0-based), with
``step_hours`` giving the step length.  A session occupies the half-open
window ``[arrival, arrival + duration)``.  Power is in kW, energy in kWh.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

PHASES = ("ab", "bc", "ca")
PHASE_INDEX = {p: i for i, p in enumerate(PHASES)}

# Unit phasors for the three line-to-line angles (30deg, -90deg, 150deg).
# Written with exact sqrt constants so balanced-load identities hold to
# machine precision.
_SQRT3 = math.sqrt(3.0)
_ANGLE_UNITS = np.array(
    [
        complex(_SQRT3 / 2.0, 0.5),   # 1 /_ 30deg
        complex(0.0, -1.0),           # 1 /_ -90deg
        complex(-_SQRT3 / 2.0, 0.5),  # 1 /_ 150deg
    ]
)
_PHI1_COEFF = np.array([[1, 0, -1], [-1, 1, 0], [0, -1, 1]], dtype=float)
_PHI2_COEFF = np.array([[1, 1, -2], [-2, 1, 1], [1, -2, 1]], dtype=float)

#: default guard against exponentially large selection matrices
DEFAULT_COLUMN_CAP = 1 << 16


class CapExceededError(ValueError):
    """A requested enumeration exceeds its configured size cap."""


class HorizonClipWarning(UserWarning):
    """A session extends past the horizon and its presence was clipped."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SessionProfile:
    """One EV charging session: arrival step, dwell steps, energy demand.

    ``declared_phase`` is the phase label the driver reported, used only by
    the declared-phase baseline strategy.
    """

    id: str
    arrival: int
    duration: int
    energy: float
    declared_phase: str | None = None

    def __post_init__(self):
        if self.arrival < 0:
            raise ValueError(f"session {self.id}: arrival must be >= 0")
        if self.duration < 0:
            raise ValueError(f"session {self.id}: duration must be >= 0")
        if not math.isfinite(self.energy) or self.energy < 0:
            raise ValueError(f"session {self.id}: energy must be finite and >= 0")
        if self.energy > 0 and self.duration < 1:
            raise ValueError(f"session {self.id}: positive energy needs duration >= 1")
        if self.declared_phase is not None and self.declared_phase not in PHASES:
            raise ValueError(
                f"session {self.id}: declared_phase must be one of {PHASES}"
            )

    @property
    def departure(self) -> int:
        return self.arrival + self.duration


@dataclass(frozen=True)
class Fleet:
    """An ordered collection of sessions over a discrete horizon."""

    sessions: tuple[SessionProfile, ...]
    horizon: int
    step_hours: float

    def __post_init__(self):
        object.__setattr__(self, "sessions", tuple(self.sessions))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not (self.step_hours > 0):
            raise ValueError("step_hours must be > 0")
        for s in self.sessions:
            if s.arrival >= self.horizon:
                raise ValueError(
                    f"session {s.id}: arrival {s.arrival} outside horizon "
                    f"[0, {self.horizon})"
                )

    @property
    def n(self) -> int:
        return len(self.sessions)

    @property
    def t(self) -> int:
        return self.horizon

    def arrivals(self) -> np.ndarray:
        return np.array([s.arrival for s in self.sessions], dtype=int)

    def durations(self) -> np.ndarray:
        return np.array([s.duration for s in self.sessions], dtype=int)

    def clipped_durations(self) -> np.ndarray:
        """Dwell lengths after clipping windows to the horizon."""
        return np.array(
            [min(s.duration, self.horizon - s.arrival) for s in self.sessions],
            dtype=int,
        )

    def energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.sessions], dtype=float)

    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.sessions)


@dataclass(frozen=True)
class NetworkSpec:
    """Transformer and charger parameters.

    ``c1`` limits the secondary-side line power, ``c2`` the primary side;
    ``n_r`` is the transformer turning ratio.  All limits are in kW: the
    nominal line voltage is treated as metadata only.
    """

    r_max: float
    c1: float
    c2: float
    n_r: float
    step_hours: float

    def __post_init__(self):
        for name in ("r_max", "c1", "c2", "n_r", "step_hours"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0")

    def c_max(self, t: int) -> np.ndarray:
        """The 6 x T line-limit matrix: rows 1-3 at c1, rows 4-6 at c2."""
        out = np.empty((6, t))
        out[:3] = self.c1
        out[3:] = self.c2
        return out

    def line_limits(self) -> np.ndarray:
        """Length-6 vector of per-line limits (time-invariant)."""
        return np.array([self.c1] * 3 + [self.c2] * 3)


@dataclass(frozen=True)
class PhasorPair:
    """The complex transformation matrices from phase powers to line powers."""

    phi1: np.ndarray
    phi2: np.ndarray

    def __post_init__(self):
        for name in ("phi1", "phi2"):
            m = np.asarray(getattr(self, name), dtype=complex)
            if m.shape != (3, 3):
                raise ValueError(f"{name} must be 3x3")
            object.__setattr__(self, name, _readonly(m))

    def stacked(self) -> np.ndarray:
        """Vertical concatenation [phi1; phi2], shape 6 x 3."""
        return np.vstack([self.phi1, self.phi2])


@dataclass(frozen=True)
class PhaseSelection:
    """Assignment of each EV to one line-to-line phase (dense encoding of
    the binary one-hot selection matrix)."""

    assignment: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "assignment", tuple(self.assignment))
        for p in self.assignment:
            if p not in PHASES:
                raise ValueError(f"unknown phase label {p!r}")

    @property
    def n(self) -> int:
        return len(self.assignment)

    def indices(self) -> np.ndarray:
        return np.array([PHASE_INDEX[p] for p in self.assignment], dtype=int)

    def matrix(self) -> np.ndarray:
        """The 3 x N binary matrix with one-hot columns."""
        x = np.zeros((3, self.n))
        if self.n:
            x[self.indices(), np.arange(self.n)] = 1.0
        return x

    @classmethod
    def from_matrix(cls, x: np.ndarray) -> "PhaseSelection":
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] != 3:
            raise ValueError("selection matrix must be 3 x N")
        if not np.all(np.isin(np.round(x, 9), (0.0, 1.0))) or not np.allclose(
            x.sum(axis=0), 1.0
        ):
            raise ValueError("selection matrix columns must be one-hot")
        return cls(tuple(PHASES[int(j)] for j in np.argmax(x, axis=0)))


@dataclass(frozen=True)
class ChargingSchedule:
    """N x T matrix of charging power (kW) per EV and step."""

    power: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.power, dtype=float)
        if p.ndim != 2:
            raise ValueError("power must be an N x T matrix")
        if not np.all(np.isfinite(p)):
            raise ValueError("power must be finite")
        object.__setattr__(self, "power", _readonly(p))

    @property
    def n(self) -> int:
        return self.power.shape[0]

    @property
    def t(self) -> int:
        return self.power.shape[1]


@dataclass(frozen=True)
class AggregatePower:
    """3 x T matrix of per-phase aggregate power (kW)."""

    power: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.power, dtype=float)
        if p.ndim != 2 or p.shape[0] != 3:
            raise ValueError("power must be a 3 x T matrix")
        if p.size and p.min() < -1e-9:
            raise ValueError("aggregate power must be nonnegative")
        object.__setattr__(self, "power", _readonly(np.maximum(p, 0.0)))

    @property
    def t(self) -> int:
        return self.power.shape[1]


@dataclass(frozen=True)
class SelectionConstraint:
    """A paired (M, W) bundle encoding the relaxed charging constraints
    ``P M <= X W`` over the aggregate phase power P.

    Columns of M select subsets of time steps; the matching column of W
    bounds each EV's possible contribution over that subset.
    """

    m_matrix: np.ndarray
    w_matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m_matrix, dtype=float)
        w = np.asarray(self.w_matrix, dtype=float)
        if m.ndim != 2 or w.ndim != 2:
            raise ValueError("m_matrix and w_matrix must be 2-D")
        if m.shape[1] != w.shape[1]:
            raise ValueError("m_matrix and w_matrix must share the column count K")
        if not np.all(np.isin(m, (0.0, 1.0))):
            raise ValueError("m_matrix must be binary")
        if m.shape[1] and not np.all(m.sum(axis=0) > 0):
            raise ValueError("m_matrix columns must be nonzero")
        if w.size and w.min() < 0:
            raise ValueError("w_matrix must be nonnegative")
        object.__setattr__(self, "m_matrix", _readonly(m))
        object.__setattr__(self, "w_matrix", _readonly(w))

    @property
    def k(self) -> int:
        return self.m_matrix.shape[1]

    @classmethod
    def from_matrices(cls, m: np.ndarray, w: np.ndarray) -> "SelectionConstraint":
        """Build from raw (M, W), dropping zero columns of M (they encode
        vacuous constraints, e.g. from zero-duration sessions)."""
        m = np.asarray(m, dtype=float)
        w = np.asarray(w, dtype=float)
        keep = m.sum(axis=0) > 0
        return cls(m[:, keep], w[:, keep])

    @classmethod
    def identity(cls, fleet: Fleet, spec: NetworkSpec) -> "SelectionConstraint":
        """The per-step pair M = I_T, W = E * r_max (exact for zero laxity)."""
        presence = build_presence(fleet)
        return cls.from_matrices(np.eye(fleet.t), presence * spec.r_max)

    @classmethod
    def m_tilde(cls, fleet: Fleet, spec: NetworkSpec) -> "SelectionConstraint":
        """The compact pair (M~, W2) used for general instances."""
        m = build_m_tilde(fleet)
        return cls.from_matrices(m, build_w(fleet, spec, m))

    @classmethod
    def full(
        cls, fleet: Fleet, spec: NetworkSpec, cap: int = DEFAULT_COLUMN_CAP
    ) -> "SelectionConstraint":
        """The exponential pair (M_T, W3); guarded by ``cap``."""
        m = build_full_selection(fleet.t, cap=cap)
        return cls.from_matrices(m, build_w(fleet, spec, m))


@dataclass(frozen=True)
class FeasibilityReport:
    """Maximum constraint violations of a candidate (X, A) pair.

    Violations are data, not errors: ``c_r`` and ``c_soc`` are in kW,
    ``c_d`` in kWh.  The pair is feasible iff every residual is <= tol.
    """

    c_r: float
    c_d: float
    c_soc: float
    tol: float

    @property
    def max_violation(self) -> float:
        return max(self.c_r, self.c_d, self.c_soc)

    @property
    def feasible(self) -> bool:
        return self.max_violation <= self.tol


def build_presence(fleet: Fleet) -> np.ndarray:
    """The binary N x T presence matrix E.

    ``E[i, j] = 1`` iff session i occupies step j under the half-open
    window convention.  Sessions extending past the horizon are clipped
    with a warning; their energy demand is left untouched.
    """
    e = np.zeros((fleet.n, fleet.t))
    for i, s in enumerate(fleet.sessions):
        end = s.arrival + s.duration
        if end > fleet.horizon:
            warnings.warn(
                f"session {s.id} extends past the horizon "
                f"({end} > {fleet.horizon}); presence clipped, energy kept",
                HorizonClipWarning,
                stacklevel=2,
            )
            end = fleet.horizon
        e[i, s.arrival : end] = 1.0
    return e


def build_phasors(n_r: float) -> PhasorPair:
    """The pair (phi1, phi2) mapping phase powers to secondary / primary
    line powers for a Delta-Wye transformer with turning ratio ``n_r``."""
    if not (math.isfinite(n_r) and n_r > 0):
        raise ValueError("turning ratio n_r must be finite and > 0")
    phi1 = _PHI1_COEFF * _ANGLE_UNITS
    phi2 = (_PHI2_COEFF / n_r) * _ANGLE_UNITS
    return PhasorPair(phi1, phi2)


def line_magnitudes(p: AggregatePower, phasors: PhasorPair) -> np.ndarray:
    """Elementwise magnitudes of the 6 x T complex line-power matrix
    [phi1; phi2] @ P; row block 1-3 is the secondary side, 4-6 primary."""
    power = p.power if isinstance(p, AggregatePower) else np.asarray(p, dtype=float)
    if power.ndim != 2 or power.shape[0] != 3:
        raise ValueError("aggregate power must be 3 x T")
    return np.abs(phasors.stacked() @ power)


def objective_value(a: ChargingSchedule, w: np.ndarray) -> float:
    """The weighted charging objective f_w(A) = -sum_i (A w)_i.

    With all-ones weights this is the (negated) aggregate power; weights
    decreasing in time give the quick-charge objective.
    """
    power = a.power if isinstance(a, ChargingSchedule) else np.asarray(a, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.shape[0] != power.shape[1]:
        raise ValueError("weight vector length must equal the horizon")
    if w.size and w.min() < 0:
        raise ValueError("weights must be nonnegative")
    return -float(np.sum(power @ w))


def quick_charge_weights(t: int) -> np.ndarray:
    """Weights T - t for t = 0..T-1 (earlier delivery weighted higher)."""
    return np.arange(t, 0, -1, dtype=float)


def build_selection_matrix(
    m: int, t: int, cap: int = DEFAULT_COLUMN_CAP
) -> np.ndarray:
    """The T x C(T, m) binary matrix whose columns enumerate all m-subsets
    of {0..T-1} in lexicographic order."""
    if not 1 <= m <= t:
        raise ValueError(f"need 1 <= m <= T, got m={m}, T={t}")
    count = math.comb(t, m)
    if count > cap:
        raise CapExceededError(
            f"selection matrix needs C({t},{m}) = {count} columns, cap is {cap}"
        )
    out = np.zeros((t, count))
    for j, subset in enumerate(itertools.combinations(range(t), m)):
        out[list(subset), j] = 1.0
    return out


def build_full_selection(t: int, cap: int = DEFAULT_COLUMN_CAP) -> np.ndarray:
    """The concatenation [M(1,T) | ... | M(T,T)] with 2^T - 1 columns."""
    total = (1 << t) - 1
    if total > cap:
        raise CapExceededError(
            f"full selection matrix needs 2^{t} - 1 = {total} columns, cap is {cap}"
        )
    return np.hstack([build_selection_matrix(m, t, cap=cap) for m in range(1, t + 1)])


def build_m_tilde(fleet: Fleet) -> np.ndarray:
    """The compact T x (T + N + 1) selection matrix [I | E^T | 1]."""
    e = build_presence(fleet)
    return np.hstack([np.eye(fleet.t), e.T, np.ones((fleet.t, 1))])


def build_w(fleet: Fleet, spec: NetworkSpec, m: np.ndarray) -> np.ndarray:
    """The N x K bound matrix min(E M r_max, V) paired with M.

    Entry (i, k) caps EV i's energy-equivalent power over the steps column
    k selects: the smaller of its charger-rate budget and its total demand
    expressed as power (e_i / step_hours).
    """
    if fleet.step_hours <= 0 or spec.step_hours <= 0:
        raise ValueError("step_hours must be > 0")
    m = np.asarray(m, dtype=float)
    if m.shape[0] != fleet.t:
        raise ValueError("selection matrix row count must equal the horizon")
    e = build_presence(fleet)
    rate_budget = e @ m * spec.r_max
    demand_budget = np.repeat(
        (fleet.energies() / fleet.step_hours)[:, None], m.shape[1], axis=1
    )
    return np.minimum(rate_budget, demand_budget)


def check_feasibility(
    x: PhaseSelection,
    a: ChargingSchedule,
    fleet: Fleet,
    spec: NetworkSpec,
    tol: float = 1e-6,
) -> FeasibilityReport:
    """Report the worst violation of the charger, demand, and network
    constraints for a candidate phase selection and schedule."""
    if x.n != fleet.n or a.power.shape != (fleet.n, fleet.t):
        raise ValueError("phase selection / schedule dimensions must match fleet")
    if fleet.step_hours != spec.step_hours:
        raise ValueError("fleet and network step_hours disagree")
    e = build_presence(fleet)
    power = a.power

    over_rate = power - spec.r_max * e
    below_zero = -power
    c_r = float(max(over_rate.max(initial=0.0), below_zero.max(initial=0.0), 0.0))

    delivered = power.sum(axis=1) * fleet.step_hours
    c_d = float(max((delivered - fleet.energies()).max(initial=0.0), 0.0))

    aggregate = x.matrix() @ power
    mags = line_magnitudes(AggregatePower(aggregate), build_phasors(spec.n_r))
    c_soc = float(max((mags - spec.c_max(fleet.t)).max(initial=0.0), 0.0))

    return FeasibilityReport(c_r=c_r, c_d=c_d, c_soc=c_soc, tol=tol)
