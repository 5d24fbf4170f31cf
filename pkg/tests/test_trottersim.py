import numpy as np
import pytest

from stringmelt.spin1 import (
    ChainState,
    StringSpec,
    basis_rotation,
    exact_evolve,
    quench_hamiltonian,
    string_expectation_direct,
    string_weights,
    symmetry_group_elements,
)
from stringmelt.trottersim import (
    GateSet,
    default_string_specs,
    ideal_gate_set,
    measurement_circuit,
    run_quench,
    trotter_step,
)


def _measurement_limit(rotated: ChainState, spec: StringSpec) -> float:
    """Infinite-shot limit of the sampled estimator on a rotated state."""
    w = string_weights(spec, rotated.n_sites)
    return float(w @ np.abs(rotated.amplitudes) ** 2)


class TestTrotterStep:
    def test_identity_gates_leave_state_alone(self, ground6):
        gates = GateSet(
            g_x=np.eye(3, dtype=complex),
            g_xyz=np.eye(9, dtype=complex),
            g_zx=basis_rotation("x"),
            g_zy=basis_rotation("y"),
            tau=0.1,
        )
        out = trotter_step(ground6, gates, n_x=0)
        assert np.abs(out.amplitudes - ground6.amplitudes).max() < 1e-15

    def test_ideal_gates_track_exact_dynamics(self, ground6, quench6):
        gates = ideal_gate_set(0.01, lam=0.2, delta_b=0.2)
        state = ground6
        for _ in range(250):
            state = trotter_step(state, gates, n_x=1)
        exact = exact_evolve(ground6, quench6, 2.5)
        fidelity = abs(exact.overlap(state)) ** 2
        assert fidelity >= 0.999

    def test_unperturbed_layer_commutes_with_symmetry(self, ground6):
        gates = ideal_gate_set(0.1, lam=0.2, delta_b=0.2)
        g = symmetry_group_elements(6)[1]
        rotated = ChainState(6, g @ ground6.amplitudes)
        a = trotter_step(rotated, gates, n_x=0)
        b = ChainState(6, g @ trotter_step(ground6, gates, n_x=0).amplitudes)
        assert np.abs(a.amplitudes - b.amplitudes).max() < 1e-10

    def test_rejects_negative_nx(self, ground6):
        with pytest.raises(ValueError):
            trotter_step(ground6, ideal_gate_set(0.1), -1)


class TestRunQuench:
    def test_t0_row_is_initial_state(self, ground6):
        gates = ideal_gate_set(0.1)
        record = run_quench(ground6, gates, 1, 1, 3)
        assert record.times[0] == 0.0
        assert record.infidelities[0] < 1e-12
        assert record.norms[0] == pytest.approx(1.0, abs=1e-12)
        spec = StringSpec(1, 6, "z")
        assert record.observables["z_1_6"][0] == pytest.approx(
            string_expectation_direct(ground6, spec), abs=1e-12
        )

    def test_exact_columns_match_oracle(self, ground6, quench6):
        gates = ideal_gate_set(0.1)
        record = run_quench(ground6, gates, 1, 1, 5)
        spec = StringSpec(1, 6, "z")
        exact = exact_evolve(ground6, quench6, 0.5)
        assert record.exact_observables["z_1_6"][5] == pytest.approx(
            string_expectation_direct(exact, spec), abs=1e-10
        )

    def test_x_direction_melts_less_than_z(self, ground6):
        gates = ideal_gate_set(0.1)
        record = run_quench(ground6, gates, 1, 1, 25)
        drop = {
            a: record.observables[f"{a}_1_6"][0]
            - record.observables[f"{a}_1_6"].min()
            for a in ("x", "z")
        }
        assert drop["x"] < drop["z"]

    def test_tau_spacing_mismatch_rejected(self, ground6):
        gates = ideal_gate_set(0.03)
        with pytest.raises(ValueError, match="sample spacing"):
            run_quench(ground6, gates, 1, 3, 2)

    def test_norm_accounting_with_contractive_gates(self, ground6):
        shrink = 1.0 - 1e-6
        ideal = ideal_gate_set(0.1)
        gates = GateSet(
            g_x=shrink * ideal.g_x,
            g_xyz=shrink * ideal.g_xyz,
            g_zx=ideal.g_zx,
            g_zy=ideal.g_zy,
            tau=0.1,
        )
        n_layers = 25
        record = run_quench(ground6, gates, 1, 1, n_layers)
        deficits = gates.unitarity_deficits()
        per_layer = 6 * 1 * deficits["g_x"] + 5 * deficits["g_xyz"]
        norm_loss = 1.0 - record.norms[-1] ** 2
        assert 0.0 < norm_loss <= 1.01 * n_layers * per_layer

    def test_too_many_sites_rejected(self):
        amps = np.zeros(3**9, dtype=complex)
        amps[0] = 1.0
        state = ChainState(9, amps)
        with pytest.raises(ValueError, match="sites"):
            run_quench(state, ideal_gate_set(0.1), 1, 1, 1)

    def test_sampled_observables_recorded(self, ground6):
        gates = ideal_gate_set(0.1)
        record = run_quench(
            ground6, gates, 1, 1, 2,
            string_specs=[StringSpec(1, 6, "z")], shots=2000, shot_seed=3,
        )
        est, err = record.sampled["z_1_6"]
        assert est.shape == (3,)
        assert np.all(err >= 0)

    def test_round_trip_files(self, ground6, tmp_path):
        gates = ideal_gate_set(0.1)
        record = run_quench(
            ground6, gates, 1, 1, 2, string_specs=[StringSpec(1, 4, "y")]
        )
        csv_path = tmp_path / "traj.csv"
        json_path = tmp_path / "traj.json"
        record.to_csv(csv_path)
        record.to_json(json_path)
        rows = csv_path.read_text().strip().split("\n")
        header = rows[0].split(",")
        assert header[:3] == ["t", "norm", "infidelity"]
        assert "obs_y_1_4" in header and "exact_y_1_4" in header
        values = [float(x) for x in rows[1].split(",")]
        assert values[0] == 0.0
        import json

        payload = json.loads(json_path.read_text())
        assert payload["metadata"]["n_sites"] == 6
        assert payload["observables"]["y_1_4"][0] == pytest.approx(
            record.observables["y_1_4"][0]
        )


class TestMeasurementCircuit:
    def test_z_direction_is_identity(self, ground6):
        out = measurement_circuit(ground6, "z")
        assert out is ground6

    @pytest.mark.parametrize("direction", ["x", "y"])
    def test_ideal_rotation_reproduces_direct_expectation(self, ground6, direction):
        spec = StringSpec(1, 6, direction)
        rotated = measurement_circuit(ground6, direction)
        limit = _measurement_limit(rotated, spec)
        direct = string_expectation_direct(ground6, spec)
        assert limit == pytest.approx(direct, abs=1e-12)

    def test_imperfect_rotation_shifts_bounded(self, ground6):
        spec = StringSpec(1, 6, "x")
        rng = np.random.default_rng(0)
        noise = 1e-4 * (rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))
        ideal = ideal_gate_set(0.1)
        dirty = GateSet(
            g_x=ideal.g_x, g_xyz=ideal.g_xyz,
            g_zx=basis_rotation("x") + noise, g_zy=ideal.g_zy, tau=0.1,
        )
        clean_limit = _measurement_limit(measurement_circuit(ground6, "x"), spec)
        dirty_limit = _measurement_limit(
            measurement_circuit(ground6, "x", dirty), spec
        )
        scale = np.linalg.norm(noise)
        assert abs(dirty_limit - clean_limit) < 10 * scale

    def test_default_specs_cover_lengths(self):
        specs = default_string_specs(6)
        assert len(specs) == 15
        assert {s.direction for s in specs} == {"x", "y", "z"}
        assert all(s.k == 1 for s in specs)
