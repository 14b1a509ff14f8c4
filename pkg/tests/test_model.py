import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acnopt import (
    AggregatePower,
    CapExceededError,
    ChargingSchedule,
    Fleet,
    HorizonClipWarning,
    NetworkSpec,
    PHASES,
    PhaseSelection,
    SelectionConstraint,
    SessionProfile,
    build_m_tilde,
    build_phasors,
    build_presence,
    build_selection_matrix,
    build_w,
    check_feasibility,
    line_magnitudes,
    objective_value,
    quick_charge_weights,
)
from acnopt.model import build_full_selection

from conftest import make_fleet, random_feasible_pair


def _hand_phasor(mag_coeffs, angles_deg, p):
    """Independent complex arithmetic for one line: sum of coeff * 1<angle * p."""
    return abs(
        sum(
            c * cmath.rect(1.0, math.radians(ang)) * pi
            for c, ang, pi in zip(mag_coeffs, angles_deg, p)
        )
    )


class TestPresence:
    def test_simple_window(self):
        fleet = make_fleet([(2, 3, 1.0)], horizon=6)
        e = build_presence(fleet)
        assert e.tolist() == [[0, 0, 1, 1, 1, 0]]

    def test_empty_fleet(self):
        e = build_presence(Fleet((), 4, 0.2))
        assert e.shape == (0, 4)

    def test_full_horizon(self):
        fleet = make_fleet([(0, 6, 1.0)], horizon=6)
        assert build_presence(fleet).tolist() == [[1] * 6]

    def test_clipping_warns_and_keeps_energy(self):
        fleet = make_fleet([(4, 5, 2.0)], horizon=6)
        with pytest.warns(HorizonClipWarning):
            e = build_presence(fleet)
        assert e.tolist() == [[0, 0, 0, 0, 1, 1]]
        assert fleet.energies()[0] == 2.0

    @given(st.integers(1, 20), st.data())
    @settings(max_examples=50, deadline=None)
    def test_row_sums_equal_clipped_durations(self, t, data):
        n = data.draw(st.integers(0, 5))
        rows = []
        for _ in range(n):
            a = data.draw(st.integers(0, t - 1))
            d = data.draw(st.integers(1, 2 * t))
            rows.append((a, d, 0.1))
        fleet = make_fleet(rows, t)
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", HorizonClipWarning)
            e = build_presence(fleet)
        assert np.array_equal(e.sum(axis=1), fleet.clipped_durations())
        assert set(np.unique(e)) <= {0.0, 1.0}


class TestPhasors:
    def test_table_ratio_magnitudes(self):
        pair = build_phasors(4.0)
        assert set(np.round(np.abs(pair.phi2), 12).ravel()) == {0.25, 0.5}

    def test_unit_ratio_magnitudes(self):
        pair = build_phasors(1.0)
        assert set(np.round(np.abs(pair.phi2), 12).ravel()) == {1.0, 2.0}

    def test_secondary_magnitudes_binary(self):
        for n_r in (0.5, 1.0, 4.0, 9.7):
            pair = build_phasors(n_r)
            assert set(np.round(np.abs(pair.phi1), 12).ravel()) == {0.0, 1.0}

    def test_column_angles(self):
        pair = build_phasors(4.0)
        for mat in (pair.phi1, pair.phi2):
            for col, expect in enumerate((30.0, -90.0, 150.0)):
                for entry in mat[:, col]:
                    if abs(entry) < 1e-15:
                        continue
                    ang = math.degrees(cmath.phase(entry)) % 180.0
                    assert ang == pytest.approx(expect % 180.0, abs=1e-9)

    def test_invalid_ratio(self):
        with pytest.raises(ValueError):
            build_phasors(0.0)
        with pytest.raises(ValueError):
            build_phasors(-2.0)


class TestLineMagnitudes:
    def test_zero_load(self):
        mags = line_magnitudes(AggregatePower(np.zeros((3, 4))), build_phasors(4.0))
        assert np.all(mags == 0.0)

    def test_balanced_secondary_sqrt3(self):
        p = 5.0
        expect = _hand_phasor([1, 0, -1], [30, -90, 150], [p, p, p])
        mags = line_magnitudes(
            AggregatePower(np.full((3, 2), p)), build_phasors(4.0)
        )
        assert expect == pytest.approx(math.sqrt(3) * p, abs=1e-12)
        assert np.allclose(mags[:3], math.sqrt(3) * p, atol=1e-12)

    def test_balanced_primary_three_quarters(self):
        p, n_r = 5.0, 4.0
        expect = _hand_phasor(
            [1 / n_r, 1 / n_r, -2 / n_r], [30, -90, 150], [p, p, p]
        )
        mags = line_magnitudes(
            AggregatePower(np.full((3, 2), p)), build_phasors(n_r)
        )
        assert expect == pytest.approx(3 * p / n_r, abs=1e-12)
        assert np.allclose(mags[3:], 3 * p / n_r, atol=1e-12)

    @given(
        st.lists(st.floats(0.0, 50.0), min_size=6, max_size=6),
        st.floats(0.0, 7.0),
    )
    @settings(max_examples=80)
    def test_positive_homogeneity(self, entries, alpha):
        p = np.array(entries).reshape(3, 2)
        pair = build_phasors(4.0)
        base = line_magnitudes(AggregatePower(p), pair)
        scaled = line_magnitudes(AggregatePower(alpha * p), pair)
        assert np.allclose(scaled, alpha * base, rtol=1e-12, atol=1e-9)

    @given(st.lists(st.floats(0.0, 50.0), min_size=9, max_size=9))
    @settings(max_examples=80)
    def test_cyclic_relabel_preserves_magnitude_multisets(self, entries):
        p = np.array(entries).reshape(3, 3)
        pair = build_phasors(4.0)
        base = line_magnitudes(AggregatePower(p), pair)
        shifted = line_magnitudes(AggregatePower(np.roll(p, 1, axis=0)), pair)
        for block in (slice(0, 3), slice(3, 6)):
            for t in range(3):
                assert np.allclose(
                    np.sort(base[block, t]), np.sort(shifted[block, t]), atol=1e-9
                )


class TestObjective:
    def test_zero_schedule(self):
        a = ChargingSchedule(np.zeros((2, 3)))
        assert objective_value(a, np.ones(3)) == 0.0

    def test_all_ones(self):
        a = ChargingSchedule(np.ones((2, 2)))
        assert objective_value(a, np.ones(2)) == -4.0

    def test_quick_charge_single_unit(self):
        a = np.zeros((1, 3))
        a[0, 0] = 1.0
        w = quick_charge_weights(3)
        assert w.tolist() == [3.0, 2.0, 1.0]
        assert objective_value(ChargingSchedule(a), w) == -3.0

    def test_rejects_negative_weights(self):
        with pytest.raises(ValueError):
            objective_value(ChargingSchedule(np.ones((1, 2))), np.array([1.0, -0.1]))


class TestSelectionMatrices:
    def test_singletons_are_identity(self):
        assert np.array_equal(build_selection_matrix(1, 3), np.eye(3))

    def test_full_subset_single_column(self):
        assert build_selection_matrix(2, 2).tolist() == [[1.0], [1.0]]

    def test_full_concatenation_column_count(self):
        m = build_full_selection(4)
        assert m.shape == (4, 2 ** 4 - 1)
        assert np.all(m.sum(axis=0) >= 1)

    def test_lexicographic_order(self):
        m = build_selection_matrix(2, 4)
        # first column selects {0,1}, last selects {2,3}
        assert m[:, 0].tolist() == [1, 1, 0, 0]
        assert m[:, -1].tolist() == [0, 0, 1, 1]

    def test_cap_error_names_count(self):
        with pytest.raises(CapExceededError, match=r"C\(20,10\) = 184756"):
            build_selection_matrix(10, 20, cap=1000)

    def test_bad_m(self):
        with pytest.raises(ValueError):
            build_selection_matrix(0, 3)
        with pytest.raises(ValueError):
            build_selection_matrix(4, 3)


class TestMTilde:
    def test_empty_fleet(self):
        m = build_m_tilde(Fleet((), 3, 0.2))
        assert m.shape == (3, 4)
        assert np.array_equal(m[:, :3], np.eye(3))
        assert np.array_equal(m[:, 3], np.ones(3))

    def test_middle_block_is_presence_transpose(self):
        fleet = make_fleet([(0, 2, 1.0), (1, 2, 1.0)], horizon=3)
        m = build_m_tilde(fleet)
        assert m.shape == (3, 3 + 2 + 1)
        assert np.array_equal(m[:, 3:5], build_presence(fleet).T)

    def test_column_count(self):
        for n, t in ((0, 4), (3, 5), (5, 2)):
            fleet = make_fleet([(0, 1, 0.1)] * n, horizon=t)
            assert build_m_tilde(fleet).shape[1] == t + n + 1


class TestBuildW:
    def test_identity_selection(self, spec):
        fleet = make_fleet([(0, 2, 0.9), (1, 3, 3.0)], horizon=4)
        w = build_w(fleet, spec, np.eye(4))
        e = build_presence(fleet)
        expect = np.minimum(
            spec.r_max * e, (fleet.energies() / 0.2)[:, None] * np.ones((1, 4))
        )
        assert np.allclose(w, expect)

    def test_whole_horizon_column(self, spec):
        fleet = make_fleet([(0, 2, 0.9), (1, 3, 3.0)], horizon=4)
        w = build_w(fleet, spec, np.ones((4, 1)))
        assert w[0, 0] == pytest.approx(min(3.0 * 2, 0.9 / 0.2))
        assert w[1, 0] == pytest.approx(min(3.0 * 3, 3.0 / 0.2))

    def test_zero_laxity_arguments_coincide(self, spec):
        d = 3
        fleet = make_fleet([(0, d, spec.r_max * d * 0.2)], horizon=4)
        w = build_w(fleet, spec, np.ones((4, 1)))
        assert w[0, 0] == pytest.approx(spec.r_max * d)
        assert w[0, 0] == pytest.approx(fleet.energies()[0] / 0.2)

    @given(e1=st.floats(0.0, 10.0), e2=st.floats(0.0, 10.0))
    @settings(max_examples=50)
    def test_monotone_in_energy(self, e1, e2):
        spec = NetworkSpec(r_max=3.0, c1=20.0, c2=20.0, n_r=4.0, step_hours=0.2)
        lo, hi = sorted((e1, e2))
        t = 4
        base = make_fleet([(0, 3, lo)], horizon=t) if lo > 0 else make_fleet(
            [(0, 3, 0.0)], horizon=t
        )
        more = make_fleet([(0, 3, hi)], horizon=t)
        m = np.hstack([np.eye(t), np.ones((t, 1))])
        assert np.all(
            build_w(more, spec, m) >= build_w(base, spec, m) - 1e-12
        )


class TestCheckFeasibility:
    def test_zero_schedule_feasible(self, spec):
        fleet = make_fleet([(0, 3, 1.0), (1, 2, 1.0)], horizon=4)
        rep = check_feasibility(
            PhaseSelection(("ab", "bc")),
            ChargingSchedule(np.zeros((2, 4))),
            fleet,
            spec,
        )
        assert rep.feasible
        assert rep.c_r == rep.c_d == rep.c_soc == 0.0

    def test_rate_violation_reported_exactly(self, spec):
        fleet = make_fleet([(0, 4, 5.0)], horizon=4)
        a = np.zeros((1, 4))
        a[0, 1] = spec.r_max + 0.25
        rep = check_feasibility(
            PhaseSelection(("ab",)), ChargingSchedule(a), fleet, spec
        )
        assert rep.c_r == pytest.approx(0.25)

    def test_line_violation_on_loaded_phase(self):
        spec = NetworkSpec(r_max=10.0, c1=2.0, c2=20.0, n_r=4.0, step_hours=0.2)
        fleet = make_fleet([(0, 1, 100.0)], horizon=1)
        p = 5.0
        rep = check_feasibility(
            PhaseSelection(("ab",)),
            ChargingSchedule(np.array([[p]])),
            fleet,
            spec,
        )
        assert rep.c_soc == pytest.approx(p - spec.c1)
        mags = line_magnitudes(
            AggregatePower(np.array([[p], [0.0], [0.0]])), build_phasors(4.0)
        )
        assert mags[0, 0] == pytest.approx(p)
        assert mags[1, 0] == pytest.approx(p)
        assert mags[2, 0] == pytest.approx(0.0)

    def test_random_feasible_pairs_satisfy_relaxation(self, spec):
        # every (8)-feasible point maps into the relaxed constraint set
        rng = np.random.default_rng(5)
        for _ in range(20):
            n, t = int(rng.integers(1, 5)), int(rng.integers(2, 7))
            fleet = make_fleet(
                [
                    (
                        int(rng.integers(0, t)),
                        int(rng.integers(1, t + 1)),
                        float(rng.uniform(0.1, 2.0)),
                    )
                    for _ in range(n)
                ],
                horizon=t,
            )
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", HorizonClipWarning)
                phases, a = random_feasible_pair(rng, fleet, spec)
                constraint = SelectionConstraint.full(fleet, spec)
                x = phases.matrix()
                p = x @ a
                lhs = p @ constraint.m_matrix
                rhs = x @ constraint.w_matrix
                assert np.all(lhs <= rhs + 1e-9)
                mags = line_magnitudes(AggregatePower(p), build_phasors(spec.n_r))
                assert np.all(mags <= spec.c_max(t) + 1e-9)


class TestTypes:
    def test_session_validation(self):
        with pytest.raises(ValueError):
            SessionProfile("x", -1, 2, 1.0)
        with pytest.raises(ValueError):
            SessionProfile("x", 0, 0, 1.0)  # positive energy needs dwell
        with pytest.raises(ValueError):
            SessionProfile("x", 0, 2, -0.5)
        with pytest.raises(ValueError):
            SessionProfile("x", 0, 2, 1.0, declared_phase="xy")
        SessionProfile("x", 0, 0, 0.0)  # degenerate but allowed

    def test_fleet_validation(self):
        with pytest.raises(ValueError):
            make_fleet([(5, 1, 1.0)], horizon=4)
        with pytest.raises(ValueError):
            Fleet((), 0, 0.2)
        with pytest.raises(ValueError):
            Fleet((), 4, 0.0)

    def test_network_validation(self):
        for kwargs in (
            dict(r_max=0.0),
            dict(c1=-1.0),
            dict(c2=0.0),
            dict(n_r=0.0),
            dict(step_hours=0.0),
        ):
            base = dict(r_max=3.0, c1=20.0, c2=20.0, n_r=4.0, step_hours=0.2)
            base.update(kwargs)
            with pytest.raises(ValueError):
                NetworkSpec(**base)

    def test_c_max_rows(self, spec):
        c = spec.c_max(5)
        assert c.shape == (6, 5)
        assert np.all(c[:3] == spec.c1)
        assert np.all(c[3:] == spec.c2)

    def test_phase_selection(self):
        sel = PhaseSelection(("ab", "ca"))
        x = sel.matrix()
        assert x.shape == (3, 2)
        assert x.sum(axis=0).tolist() == [1.0, 1.0]
        assert PhaseSelection.from_matrix(x) == sel
        with pytest.raises(ValueError):
            PhaseSelection(("zz",))
        with pytest.raises(ValueError):
            PhaseSelection.from_matrix(np.array([[0.5, 1], [0.5, 0], [0, 0]]))

    def test_aggregate_power_clamps_noise_rejects_negative(self):
        p = AggregatePower(np.array([[0.0, -1e-12], [1.0, 2.0], [0.0, 0.0]]))
        assert p.power.min() == 0.0
        with pytest.raises(ValueError):
            AggregatePower(np.array([[-1.0], [0.0], [0.0]]))

    def test_selection_constraint_validation(self):
        with pytest.raises(ValueError):
            SelectionConstraint(np.array([[2.0]]), np.array([[1.0]]))
        with pytest.raises(ValueError):
            SelectionConstraint(np.eye(2), np.ones((3, 3)))
        with pytest.raises(ValueError):
            SelectionConstraint(np.zeros((2, 1)), np.ones((1, 1)))
        dropped = SelectionConstraint.from_matrices(
            np.array([[1.0, 0.0], [0.0, 0.0]]), np.ones((1, 2))
        )
        assert dropped.k == 1
