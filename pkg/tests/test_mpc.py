import json

import numpy as np
import pytest

from acnopt import (
    MpcConfig,
    NetworkSpec,
    SimState,
    check_feasibility,
    mpc_step,
    pxa,
    quick_charge_weights,
    reveal,
    run_episode,
)
from acnopt.mpc import write_event_log

from conftest import make_fleet, zero_laxity_fleet


class TestReveal:
    def test_before_first_arrival(self):
        fleet = make_fleet([(3, 2, 1.0)], horizon=6)
        assert reveal(fleet, 1) == ()

    def test_simultaneous_arrivals(self):
        fleet = make_fleet([(2, 2, 1.0), (2, 3, 1.0)], horizon=6)
        assert reveal(fleet, 2) == (0, 1)

    def test_future_arrival_hidden(self):
        fleet = make_fleet([(3, 2, 1.0)], horizon=6)
        assert reveal(fleet, 2) == ()
        assert reveal(fleet, 3) == (0,)

    def test_seen_excluded(self):
        fleet = make_fleet([(0, 2, 1.0), (1, 2, 1.0)], horizon=4)
        assert reveal(fleet, 1, seen=(0,)) == (1,)

    def test_out_of_horizon(self):
        fleet = make_fleet([(0, 2, 1.0)], horizon=4)
        with pytest.raises(ValueError):
            reveal(fleet, 4)


class TestMpcStep:
    def test_no_evs_present(self, spec):
        fleet = make_fleet([(3, 2, 1.0)], horizon=6)
        state = SimState(fleet)
        event = mpc_step(state, spec)
        assert np.all(event.executed == 0.0)
        assert event.phase_decisions == {}
        assert state.clock == 1

    def test_single_zero_laxity_ev_charges_flat_out(self, spec):
        # with ample capacity the only schedule meeting demand is r_max on
        # every remaining step, so the residual hits zero at departure
        fleet = make_fleet([(1, 3, 3.0 * 3 * 0.2)], horizon=6)
        state = SimState(fleet)
        for t in range(6):
            mpc_step(state, spec)
        assert np.allclose(state.delivered[0, 1:4], 3.0, atol=1e-6)
        assert np.allclose(state.delivered[0, [0, 4, 5]], 0.0, atol=1e-9)
        assert state.residual_energy[0] == pytest.approx(0.0, abs=1e-6)

    def test_phase_committed_once(self, spec):
        fleet = make_fleet([(0, 4, 2.0)], horizon=4)
        state = SimState(fleet)
        mpc_step(state, spec)
        committed = dict(state.committed_phases)
        for _ in range(3):
            mpc_step(state, spec)
        assert dict(state.committed_phases) == committed

    def test_profiles_update_rule(self, spec):
        fleet = make_fleet([(1, 3, 1.0)], horizon=6)
        state = SimState(fleet)
        assert state.profiles_t()[0].tolist() == [1.0, 3.0, 1.0]
        mpc_step(state, spec)
        mpc_step(state, spec)
        mpc_step(state, spec)  # clock now 3
        prof = state.profiles_t()[0]
        assert prof[0] == 3.0  # arrival clamped to the clock
        assert prof[1] == 1.0  # one step of the window left


class TestEpisode:
    def test_empty_fleet(self, spec):
        result = run_episode(make_fleet([], horizon=4), spec)
        assert result.delivered.shape == (0, 4)
        assert result.failed_steps == ()
        assert len(result.events) == 4

    def test_full_service_when_capacity_ample(self, spec):
        rng = np.random.default_rng(14)
        fleet = zero_laxity_fleet(rng, 3, 6)
        result = run_episode(fleet, spec)
        assert result.delivered_kwh() == pytest.approx(
            fleet.energies().sum(), rel=1e-6
        )
        rep = check_feasibility(
            result.phases(), result.executed_schedule(), fleet, spec, tol=1e-6
        )
        assert rep.feasible

    def test_starved_network_sheds_but_respects_lines(self):
        spec = NetworkSpec(r_max=3.0, c1=1.5, c2=1.2, n_r=4.0, step_hours=0.2)
        fleet = make_fleet([(0, 4, 3.0 * 4 * 0.2)], horizon=4)
        result = run_episode(fleet, spec)
        assert result.delivered_kwh() < fleet.energies().sum()
        rep = check_feasibility(
            result.phases(), result.executed_schedule(), fleet, spec, tol=1e-6
        )
        assert rep.c_soc <= 1e-6

    def test_residuals_nonnegative_and_monotone(self, spec):
        rng = np.random.default_rng(15)
        fleet = zero_laxity_fleet(rng, 3, 5)
        state = SimState(fleet)
        prev = state.residual_energy.copy()
        for _ in range(fleet.t):
            mpc_step(state, spec)
            cur = state.residual_energy
            assert np.all(cur <= prev + 1e-12)
            assert np.all(cur >= -1e-6)
            prev = cur.copy()

    def test_causality_truncation(self, spec):
        rng = np.random.default_rng(16)
        rows = [(0, 3, 1.2), (1, 4, 1.8), (4, 2, 0.9)]
        fleet = make_fleet(rows, horizon=6)
        full = run_episode(fleet, spec)
        truncated_fleet = make_fleet(rows[:2], horizon=6)
        truncated = run_episode(truncated_fleet, spec)
        # before the deleted session arrives (t < 4) nothing may change
        assert np.allclose(
            full.delivered[:2, :4], truncated.delivered[:, :4], atol=1e-9
        )
        for i in range(2):
            assert full.committed_phases[i] == truncated.committed_phases[i]

    def test_full_information_matches_offline(self, spec):
        rng = np.random.default_rng(18)
        rows = [
            (
                int(rng.integers(0, 4)),
                int(rng.integers(2, 5)),
                float(rng.uniform(0.4, 1.0)) * 3 * 2 * 0.2,
            )
            for _ in range(3)
        ]
        fleet = make_fleet(rows, horizon=8)
        tight = NetworkSpec(r_max=3.0, c1=4.0, c2=3.2, n_r=4.0, step_hours=0.2)
        online = run_episode(fleet, tight, MpcConfig(full_information=True))
        offline = pxa(fleet, tight, weights=quick_charge_weights(fleet.t))
        offline_kwh = float(offline.schedule.power.sum()) * fleet.step_hours
        assert online.delivered_kwh() == pytest.approx(offline_kwh, rel=1e-4)

    def test_zero_laxity_simultaneous_arrivals_match_offline_satisfaction(self):
        # all EVs visible from step 0 with no schedule slack: the online
        # controller must deliver exactly what the offline solver does
        rng = np.random.default_rng(19)
        rows = [(0, int(rng.integers(2, 6)), 0.0) for _ in range(4)]
        rows = [(a, d, 3.0 * d * 0.2) for a, d, _ in rows]
        fleet = make_fleet(rows, horizon=6)
        tight = NetworkSpec(r_max=3.0, c1=6.2, c2=5.0, n_r=4.0, step_hours=0.2)
        episode = run_episode(fleet, tight)
        offline = pxa(fleet, tight, weights=quick_charge_weights(fleet.t))
        offline_kwh = float(offline.schedule.power.sum()) * fleet.step_hours
        assert episode.delivered_kwh() == pytest.approx(offline_kwh, rel=1e-4)

    def test_event_log_round_trip(self, tmp_path, spec):
        fleet = make_fleet([(0, 2, 0.8), (2, 2, 0.6)], horizon=4)
        result = run_episode(fleet, spec)
        path = tmp_path / "events.jsonl"
        write_event_log(result.events, path)
        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert len(lines) == 4
        assert {"t", "revealed", "phases", "executed", "objective", "solve_ms",
                "failed"} <= set(lines[0])
        assert lines[0]["revealed"] == ["ev0"]
        assert lines[2]["revealed"] == ["ev1"]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MpcConfig(constraint="nope")
        with pytest.raises(ValueError):
            MpcConfig(objective="nope")
