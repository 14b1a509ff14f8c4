"""Second-order-cone programming layer.

Defines a standard-form container (:class:`ConicProgram`) for the fixed-phase
charging problem and for the continuous node relaxations used inside
branch-and-bound, and solves it with an embedded interior-point conic method
(Clarabel).  Every Optimal result is re-verified against the container's own
constraints, so the solver backend stays swappable.

Variable layouts produced by the builders:

* :func:`build_socp_fixed_phase` -- the N*T schedule entries, row-major
  (``A[i, t]`` at index ``i * T + t``).
* :func:`build_relaxed_node` -- the 3*T aggregate-power entries, row-major
  (``P[m, t]`` at index ``m * T + t``), followed by one [ab, bc, ca] block
  per *free* (not pre-fixed) EV in ascending fleet order.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import sparse

import clarabel

from .model import (
    Fleet,
    NetworkSpec,
    PHASES,
    PHASE_INDEX,
    PhaseSelection,
    SelectionConstraint,
    build_phasors,
    build_presence,
)

_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ToleranceConfig:
    """Contract tolerances for a conic solve: primal feasibility and the
    certified duality gap of an Optimal result."""

    feas: float = 1e-7
    gap: float = 1e-7

    def __post_init__(self):
        if not (self.feas > 0 and self.gap > 0):
            raise ValueError("tolerances must be > 0")


@dataclass(frozen=True)
class SocConstraint:
    """One 2-dimensional cone sqrt(u^2 + v^2) <= bound with u, v affine.

    The affine parts are stored sparsely as (index, value) pairs over the
    program's variable vector plus a constant offset.
    """

    u_idx: np.ndarray
    u_val: np.ndarray
    u_const: float
    v_idx: np.ndarray
    v_val: np.ndarray
    v_const: float
    bound: float

    def __post_init__(self):
        if not (math.isfinite(self.bound) and self.bound >= 0):
            raise ValueError("SOC bound must be finite and >= 0")
        for name in ("u_idx", "v_idx"):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), dtype=np.int64)
            )
        for name in ("u_val", "v_val"):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), dtype=float)
            )

    def evaluate(self, x: np.ndarray) -> float:
        u = float(x[self.u_idx] @ self.u_val) + self.u_const
        v = float(x[self.v_idx] @ self.v_val) + self.v_const
        return math.hypot(u, v)


@dataclass(frozen=True)
class ConicProgram:
    """min c @ x  s.t.  lower <= x <= upper,  lin_rows @ x <= lin_rhs,
    and every SOC constraint holds."""

    objective: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    lin_rows: sparse.csr_matrix
    lin_rhs: np.ndarray
    socs: tuple[SocConstraint, ...] = ()

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float)
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "lin_rhs", np.asarray(self.lin_rhs, dtype=float))
        object.__setattr__(self, "socs", tuple(self.socs))
        n = c.shape[0]
        rows = sparse.csr_matrix(self.lin_rows)
        if rows.shape[1] != n and rows.shape[0] > 0:
            raise ValueError("linear constraint width must match variable count")
        if rows.shape[0] != self.lin_rhs.shape[0]:
            raise ValueError("linear rhs length must match row count")
        if lo.shape != (n,) or hi.shape != (n,):
            raise ValueError("box bounds must match variable count")
        object.__setattr__(self, "lin_rows", rows)

    @property
    def n_vars(self) -> int:
        return self.objective.shape[0]

    def residual(self, x: np.ndarray) -> float:
        """Maximum primal constraint violation of a candidate point."""
        viol = 0.0
        if self.n_vars:
            viol = max(viol, float((self.lower - x).max(initial=0.0)))
            finite = np.isfinite(self.upper)
            if finite.any():
                viol = max(viol, float((x[finite] - self.upper[finite]).max()))
        if self.lin_rows.shape[0]:
            viol = max(viol, float((self.lin_rows @ x - self.lin_rhs).max()))
        for soc in self.socs:
            viol = max(viol, soc.evaluate(x) - soc.bound)
        return max(viol, 0.0)

    def to_json_dict(self) -> dict:
        """Debug dump for solver cross-checking.

        Schema: ``{schema_version, n_vars, objective, lower, upper,
        linear: {rows: [[col, val], ...] per row, rhs}, socs: [{u: {idx,
        val, const}, v: {...}, bound}, ...]}``; infinite bounds are null.
        """

        def _bound(v: float):
            return None if math.isinf(v) else v

        rows = []
        lil = self.lin_rows.tolil()
        for cols, vals in zip(lil.rows, lil.data):
            rows.append([[int(c), float(v)] for c, v in zip(cols, vals)])
        return {
            "schema_version": _SCHEMA_VERSION,
            "n_vars": self.n_vars,
            "objective": self.objective.tolist(),
            "lower": [_bound(v) for v in self.lower],
            "upper": [_bound(v) for v in self.upper],
            "linear": {"rows": rows, "rhs": self.lin_rhs.tolist()},
            "socs": [
                {
                    "u": {
                        "idx": s.u_idx.tolist(),
                        "val": s.u_val.tolist(),
                        "const": s.u_const,
                    },
                    "v": {
                        "idx": s.v_idx.tolist(),
                        "val": s.v_val.tolist(),
                        "const": s.v_const,
                    },
                    "bound": s.bound,
                }
                for s in self.socs
            ],
        }

    def dump_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2)


def conic_program_from_json_dict(data: Mapping) -> ConicProgram:
    """Inverse of :meth:`ConicProgram.to_json_dict`."""
    if data.get("schema_version") != _SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {data.get('schema_version')}")
    n = int(data["n_vars"])

    def _bound(v, default):
        return default if v is None else float(v)

    rows = data["linear"]["rows"]
    mat = sparse.lil_matrix((len(rows), n))
    for r, entries in enumerate(rows):
        for c, v in entries:
            mat[r, c] = v
    socs = tuple(
        SocConstraint(
            u_idx=np.array(s["u"]["idx"], dtype=np.int64),
            u_val=np.array(s["u"]["val"], dtype=float),
            u_const=float(s["u"]["const"]),
            v_idx=np.array(s["v"]["idx"], dtype=np.int64),
            v_val=np.array(s["v"]["val"], dtype=float),
            v_const=float(s["v"]["const"]),
            bound=float(s["bound"]),
        )
        for s in data["socs"]
    )
    return ConicProgram(
        objective=np.array(data["objective"], dtype=float),
        lower=np.array([_bound(v, -np.inf) for v in data["lower"]]),
        upper=np.array([_bound(v, np.inf) for v in data["upper"]]),
        lin_rows=mat.tocsr(),
        lin_rhs=np.array(data["linear"]["rhs"], dtype=float),
        socs=socs,
    )


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITERATION_LIMIT = "iteration-limit"
    NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class SolveResult:
    """Outcome of one conic solve; ``residuals`` is the max primal
    infeasibility of ``primal`` measured against the input program."""

    status: SolveStatus
    objective: float
    primal: np.ndarray
    residuals: float

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


_STATUS_MAP = {
    "Solved": "solved",
    "AlmostSolved": "solved",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "MaxIterations": "limit",
    "MaxTime": "limit",
}


def solve_conic(
    prog: ConicProgram, tol: ToleranceConfig = ToleranceConfig()
) -> SolveResult:
    """Solve a conic program with an interior-point method.

    Optimal means the returned point is primal feasible within ``tol.feas``
    (re-verified on the container, not trusted from the backend) and the
    objective is duality-gap certified within ``tol.gap``.  Deterministic
    for identical inputs and tolerances.
    """
    n = prog.n_vars
    if n == 0:
        # Constant program: only the constant parts of constraints matter.
        resid = prog.residual(np.zeros(0))
        status = SolveStatus.OPTIMAL if resid <= tol.feas else SolveStatus.INFEASIBLE
        return SolveResult(status, 0.0, np.zeros(0), resid)

    # Assemble the single stacked constraint matrix (slack form s = b - A x)
    # from raw triplets; one nonnegative cone, then one 3-cone per SOC row.
    row_parts, col_parts, val_parts, b_parts, cones = [], [], [], [], []
    offset = 0

    n_lin = prog.lin_rows.shape[0]
    finite_up = np.flatnonzero(np.isfinite(prog.upper))
    finite_lo = np.flatnonzero(np.isfinite(prog.lower))
    n_nonneg = n_lin + finite_up.size + finite_lo.size
    if n_nonneg:
        if n_lin:
            coo = prog.lin_rows.tocoo()
            row_parts.append(coo.row.astype(np.int64))
            col_parts.append(coo.col.astype(np.int64))
            val_parts.append(coo.data)
            b_parts.append(prog.lin_rhs)
        if finite_up.size:  # x_i <= u_i
            row_parts.append(n_lin + np.arange(finite_up.size, dtype=np.int64))
            col_parts.append(finite_up.astype(np.int64))
            val_parts.append(np.ones(finite_up.size))
            b_parts.append(prog.upper[finite_up])
        if finite_lo.size:  # -x_i <= -l_i
            row_parts.append(
                n_lin + finite_up.size + np.arange(finite_lo.size, dtype=np.int64)
            )
            col_parts.append(finite_lo.astype(np.int64))
            val_parts.append(-np.ones(finite_lo.size))
            b_parts.append(-prog.lower[finite_lo])
        cones.append(clarabel.NonnegativeConeT(n_nonneg))
        offset = n_nonneg

    if prog.socs:
        n_soc = len(prog.socs)
        bases = offset + 3 * np.arange(n_soc, dtype=np.int64)
        u_sizes = np.array([s.u_idx.size for s in prog.socs])
        v_sizes = np.array([s.v_idx.size for s in prog.socs])
        row_parts.append(np.repeat(bases + 1, u_sizes))
        row_parts.append(np.repeat(bases + 2, v_sizes))
        col_parts.append(np.concatenate([s.u_idx for s in prog.socs]))
        col_parts.append(np.concatenate([s.v_idx for s in prog.socs]))
        val_parts.append(-np.concatenate([s.u_val for s in prog.socs]))
        val_parts.append(-np.concatenate([s.v_val for s in prog.socs]))
        b_soc = np.empty(3 * n_soc)
        b_soc[0::3] = [s.bound for s in prog.socs]
        b_soc[1::3] = [s.u_const for s in prog.socs]
        b_soc[2::3] = [s.v_const for s in prog.socs]
        b_parts.append(b_soc)
        cones.extend([clarabel.SecondOrderConeT(3)] * n_soc)

    m_total = offset + 3 * len(prog.socs)
    if row_parts:
        a = sparse.csc_matrix(
            (
                np.concatenate(val_parts),
                (np.concatenate(row_parts), np.concatenate(col_parts)),
            ),
            shape=(m_total, n),
        )
    else:
        a = sparse.csc_matrix((0, n))
    b = np.concatenate(b_parts) if b_parts else np.zeros(0)

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_threads = 1  # determinism
    settings.presolve_enable = False  # rows are all finite; scan costs more than it saves
    # solve 100x tighter than the contract; the reduced (fallback) band is
    # the contract itself, so an almost-solved result still honors it
    settings.tol_feas = max(tol.feas * 1e-2, 1e-12)
    settings.tol_gap_rel = max(tol.gap * 1e-2, 1e-12)
    settings.tol_gap_abs = max(tol.gap * 1e-2, 1e-12)
    settings.reduced_tol_feas = tol.feas
    settings.reduced_tol_gap_rel = tol.gap
    settings.reduced_tol_gap_abs = tol.gap

    solver = clarabel.DefaultSolver(
        sparse.csc_matrix((n, n)), prog.objective, a, b, cones, settings
    )
    solution = solver.solve()

    kind = _STATUS_MAP.get(str(solution.status), "failure")
    x = np.asarray(solution.x, dtype=float)
    if kind == "solved":
        resid = prog.residual(x)
        status = (
            SolveStatus.OPTIMAL if resid <= tol.feas else SolveStatus.NUMERICAL_FAILURE
        )
        return SolveResult(status, float(prog.objective @ x), x, resid)
    if kind == "infeasible":
        return SolveResult(SolveStatus.INFEASIBLE, math.nan, x, math.inf)
    if kind == "limit":
        return SolveResult(
            SolveStatus.ITERATION_LIMIT, float(prog.objective @ x), x, prog.residual(x)
        )
    return SolveResult(
        SolveStatus.NUMERICAL_FAILURE, math.nan, x, prog.residual(x) if x.size else math.inf
    )


def _line_coefficients(spec: NetworkSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked phasor matrix split into real/imag parts plus line limits."""
    phi = build_phasors(spec.n_r).stacked()
    return phi.real, phi.imag, spec.line_limits()


def build_socp_fixed_phase(
    x: PhaseSelection,
    fleet: Fleet,
    spec: NetworkSpec,
    weights: np.ndarray | None = None,
) -> ConicProgram:
    """The convex charging problem with the phase selection fixed.

    Decision variables are the N*T schedule entries.  Encodes the charger
    box, the per-EV demand rows, and one 2-D cone per (line, step) bounding
    the complex line power, which is linear in A once X is fixed.
    """
    n, t = fleet.n, fleet.t
    if x.n != n:
        raise ValueError("phase selection size must match fleet")
    w = np.ones(t) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (t,) or (w.size and w.min() < 0):
        raise ValueError("weights must be a nonnegative length-T vector")

    presence = build_presence(fleet)
    objective = np.tile(-w, n)
    lower = np.zeros(n * t)
    upper = (spec.r_max * presence).ravel()

    # demand rows: sum_t A[i, t] <= e_i / step_hours
    cols = np.arange(n * t)
    rows = np.repeat(np.arange(n), t)
    lin = sparse.csr_matrix((np.ones(n * t), (rows, cols)), shape=(n, n * t))
    rhs = fleet.energies() / fleet.step_hours

    re, im, limits = _line_coefficients(spec)
    phase_idx = x.indices()
    socs = []
    for line in range(6):
        u_coef = re[line, phase_idx] if n else np.zeros(0)
        v_coef = im[line, phase_idx] if n else np.zeros(0)
        u_keep = np.flatnonzero(u_coef)
        v_keep = np.flatnonzero(v_coef)
        for step in range(t):
            socs.append(
                SocConstraint(
                    u_idx=u_keep * t + step,
                    u_val=u_coef[u_keep],
                    u_const=0.0,
                    v_idx=v_keep * t + step,
                    v_val=v_coef[v_keep],
                    v_const=0.0,
                    bound=limits[line],
                )
            )
    return ConicProgram(objective, lower, upper, lin, rhs, tuple(socs))


def schedule_from_primal(primal: np.ndarray, fleet: Fleet) -> np.ndarray:
    """Reshape a fixed-phase primal vector into the N x T schedule,
    clamping solver-level negative noise to zero."""
    return np.maximum(primal.reshape(fleet.n, fleet.t), 0.0)


def build_relaxed_node(
    fleet: Fleet,
    spec: NetworkSpec,
    constraint: SelectionConstraint,
    fixed_phases: Mapping[int, str] | None = None,
    weights: np.ndarray | None = None,
) -> ConicProgram:
    """The continuous relaxation of the aggregate-power phase problem.

    Variables are P (3 x T, row-major) followed by the simplex-relaxed
    columns of X for every EV not in ``fixed_phases``; pinned columns are
    folded into the right-hand side of the coupling rows P M <= X W.
    """
    n, t = fleet.n, fleet.t
    fixed = dict(fixed_phases or {})
    for i, p in fixed.items():
        if not 0 <= i < n:
            raise ValueError(f"fixed phase for unknown EV index {i}")
        if p not in PHASES:
            raise ValueError(f"unknown phase label {p!r}")
    free = [i for i in range(n) if i not in fixed]
    w = np.ones(t) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (t,) or (w.size and w.min() < 0):
        raise ValueError("weights must be a nonnegative length-T vector")

    m_mat, w_mat = constraint.m_matrix, constraint.w_matrix
    if m_mat.shape[0] != t or w_mat.shape[0] != n:
        raise ValueError("selection constraint dimensions must match fleet")
    k = constraint.k

    p_dim = 3 * t
    n_free = len(free)
    n_vars = p_dim + 3 * n_free

    objective = np.zeros(n_vars)
    objective[:p_dim] = np.tile(-w, 3)
    lower = np.zeros(n_vars)
    upper = np.full(n_vars, np.inf)
    upper[p_dim:] = 1.0

    # coupling rows (one per (k, m), k-major):
    #   sum_t M[t,k] P[m,t] - sum_{j free} W[j,k] X[m,j] <= sum_{j fixed} ...
    x_fixed_w = np.zeros((3, k))
    for j, p in fixed.items():
        x_fixed_w[PHASE_INDEX[p]] += w_mat[j]

    c_k_idx, c_t_idx = np.nonzero(m_mat.T)  # (k, t) pairs, k-major
    w_free = w_mat[free] if n_free else np.zeros((0, k))
    w_pos_idx, w_k_idx = np.nonzero(w_free != 0.0)
    w_vals = w_free[w_pos_idx, w_k_idx]

    row_parts, col_parts, val_parts = [], [], []
    for m in range(3):
        row_parts.append(3 * c_k_idx + m)
        col_parts.append(m * t + c_t_idx)
        val_parts.append(np.ones(c_t_idx.size))
        row_parts.append(3 * w_k_idx + m)
        col_parts.append(p_dim + 3 * w_pos_idx + m)
        val_parts.append(-w_vals)
    n_couple = 3 * k
    rhs_couple = x_fixed_w.T.ravel()

    # simplex rows: column sums of the free X columns equal one
    pos = np.arange(n_free)
    base = p_dim + 3 * np.repeat(pos, 3) + np.tile(np.arange(3), n_free)
    row_parts.append(n_couple + 2 * np.repeat(pos, 3))
    col_parts.append(base)
    val_parts.append(np.ones(3 * n_free))
    row_parts.append(n_couple + 2 * np.repeat(pos, 3) + 1)
    col_parts.append(base)
    val_parts.append(-np.ones(3 * n_free))
    rhs_simplex = np.tile([1.0, -1.0], n_free)

    n_rows = n_couple + 2 * n_free
    lin = sparse.csr_matrix(
        (
            np.concatenate(val_parts),
            (
                np.concatenate(row_parts).astype(np.int64),
                np.concatenate(col_parts).astype(np.int64),
            ),
        ),
        shape=(n_rows, n_vars),
    )
    rhs_arr = np.concatenate([rhs_couple, rhs_simplex])

    re, im, limits = _line_coefficients(spec)
    socs = []
    for line in range(6):
        u_keep = np.flatnonzero(re[line])
        v_keep = np.flatnonzero(im[line])
        for step in range(t):
            socs.append(
                SocConstraint(
                    u_idx=u_keep * t + step,
                    u_val=re[line, u_keep],
                    u_const=0.0,
                    v_idx=v_keep * t + step,
                    v_val=im[line, v_keep],
                    v_const=0.0,
                    bound=limits[line],
                )
            )
    return ConicProgram(objective, lower, upper, lin, rhs_arr, tuple(socs))


def node_aggregate_power(primal: np.ndarray, t: int) -> np.ndarray:
    """The 3 x T aggregate-power block of a relaxed-node primal vector."""
    return np.maximum(primal[: 3 * t].reshape(3, t), 0.0)
