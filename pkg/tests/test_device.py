import numpy as np
import pytest
import scipy.linalg

from stringmelt.device import (
    DEFAULT_TRANSMON_1,
    ControlChannel,
    DeviceModel,
    TransmonParams,
    computational_indices,
    computational_projector,
    embed_target,
    excitation_block_check,
    extract_block,
    hamiltonian_at,
    rotating_frame_generator,
    rotating_frame_hamiltonian,
    single_transmon_model,
    two_transmon_model,
)
from stringmelt.optimize import make_target
from stringmelt.spin1 import basis_rotation

TWO_PI = 2 * np.pi


class TestTransmonParams:
    def test_defaults_match_hardware(self):
        assert DEFAULT_TRANSMON_1.frequency == 5.634
        assert DEFAULT_TRANSMON_1.anharmonicity == -0.266
        assert DEFAULT_TRANSMON_1.levels == 5

    def test_rejects_positive_anharmonicity(self):
        with pytest.raises(ValueError):
            TransmonParams(5.0, 0.1)

    def test_rejects_too_few_levels(self):
        with pytest.raises(ValueError):
            TransmonParams(5.0, -0.2, levels=2)


class TestLabHamiltonian:
    def test_duffing_spectrum_with_controls_off(self):
        model = single_transmon_model()
        h = hamiltonian_at(model, [0.0, 0.0])
        w, d = 5.634, -0.266
        expected = TWO_PI * np.array(
            [0.0, w, 2 * w + d, 3 * w + 3 * d, 4 * w + 6 * d]
        )
        assert np.abs(h - np.diag(expected)).max() < 1e-12

    def test_one_two_transition_frequency(self):
        model = single_transmon_model()
        h = np.real(np.diag(hamiltonian_at(model, [0.0, 0.0])))
        w12 = (h[2] - h[1]) / TWO_PI
        assert abs(w12 - 5.368) < 1e-12

    def test_coupled_hamiltonian_conserves_excitations(self):
        model = two_transmon_model()
        h = hamiltonian_at(model, [0.3, -0.2, 0.01])
        n_tot = np.diag(model.number_op(0) + model.number_op(1)).real
        comm = h @ np.diag(n_tot) - np.diag(n_tot) @ h
        assert np.abs(comm).max() < 1e-12

    def test_value_count_mismatch_rejected(self):
        model = single_transmon_model()
        with pytest.raises(ValueError):
            hamiltonian_at(model, [0.1])


class TestRotatingFrame:
    def test_idle_terms_cancel(self):
        model = single_transmon_model()
        h_rot = rotating_frame_hamiltonian(model, [0.0, 0.0], t=0.4)
        n = np.arange(5)
        expected = np.diag(TWO_PI * (-0.266) / 2 * n * (n - 1))
        assert np.abs(h_rot - expected).max() < 1e-12

    @pytest.mark.parametrize("t", [0.0, 0.3, 1.7])
    def test_hermitian_at_all_times(self, t):
        model = two_transmon_model()
        h = rotating_frame_hamiltonian(model, [0.2, -0.1, 0.005], t)
        assert np.abs(h - h.conj().T).max() < 1e-12

    def test_matches_numerical_conjugation(self):
        # analytic frame transform vs R H R^dag + i(dR/dt)R^dag at t=0.3
        model = two_transmon_model()
        t = 0.3
        values = [0.15, -0.07, 0.008]
        gen = rotating_frame_generator(model)
        r = scipy.linalg.expm(1j * gen * t)
        h_lab = hamiltonian_at(model, values, t)
        numeric = -gen + r @ h_lab @ r.conj().T
        analytic = rotating_frame_hamiltonian(model, values, t)
        assert np.abs(numeric - analytic).max() < 1e-12

    def test_coupling_phase_at_difference_frequency(self):
        model = two_transmon_model()
        t = 0.3
        h = rotating_frame_hamiltonian(model, [0.0, 0.0, 1.0 / TWO_PI], t)
        hop = model.hop_op()
        dw = TWO_PI * (5.634 - 5.447)
        expected = np.exp(1j * dw * t) * hop
        expected = expected + expected.conj().T
        assert np.abs(h - np.diag(np.diag(h)) - expected).max() < 1e-12


class TestProjectors:
    def test_single_transmon_trace_three(self):
        proj = computational_projector(single_transmon_model())
        assert abs(np.trace(proj.p_c).real - 3.0) < 1e-14
        assert np.abs(proj.p_c @ proj.p_c - proj.p_c).max() < 1e-14

    def test_two_transmon_trace_nine(self):
        proj = computational_projector(two_transmon_model())
        assert abs(np.trace(proj.p_c).real - 9.0) < 1e-14

    def test_leakage_weights(self):
        proj = computational_projector(single_transmon_model())
        assert np.allclose(np.diag(proj.p_d).real, [0, 0, 0, 0.1, 1.0])

    def test_leakage_nonnegative_diagonal(self):
        proj = computational_projector(two_transmon_model())
        diag = np.diag(proj.p_d).real
        assert np.all(diag >= 0)
        assert np.abs(proj.p_d - np.diag(diag)).max() == 0.0


class TestEmbedding:
    def test_identity_target(self):
        model = single_transmon_model()
        full = embed_target(np.eye(3, dtype=complex), model)
        assert np.allclose(np.diag(full).real, [1, 1, 1, 0, 0])

    def test_measurement_rotation_block(self):
        model = single_transmon_model()
        u = basis_rotation("x")
        full = embed_target(u, model)
        assert np.abs(full[:3, :3] - u).max() == 0.0
        assert np.abs(full[3:, :]).max() == 0.0

    def test_two_site_trotter_target_embeds(self):
        model = two_transmon_model()
        target = make_target("xyz_bond", lam=0.2, tau=0.1)
        full = embed_target(target, model)
        comp = computational_indices(model)
        assert np.abs(full[np.ix_(comp, comp)] - target).max() == 0.0
        assert extract_block(full, model) == pytest.approx(target)
        # oracle: eigendecomposition exponential of the printed generator
        from stringmelt.spin1 import SPIN1

        gen = (
            np.kron(SPIN1.sx, SPIN1.sx)
            + np.kron(SPIN1.sy, SPIN1.sy)
            + 0.2 * np.kron(SPIN1.sz, SPIN1.sz)
        )
        ref = scipy.linalg.expm(-1j * 0.1 * gen)
        assert np.abs(target - ref).max() < 1e-12

    def test_wrong_dimension_rejected(self):
        with pytest.raises(ValueError):
            embed_target(np.eye(4, dtype=complex), single_transmon_model())


class TestExcitationBlocks:
    def test_hop_conserves(self):
        model = two_transmon_model()
        hop = model.hop_op()
        assert excitation_block_check(hop + hop.conj().T, model) == 0.0

    def test_drive_connects_blocks(self):
        model = two_transmon_model()
        a = model.lowering_op(0)
        assert excitation_block_check(a + a.conj().T, model) > 0.9

    def test_single_transmon_rejected(self):
        with pytest.raises(ValueError):
            excitation_block_check(np.eye(5), single_transmon_model())


class TestModelValidation:
    def test_single_model_rejects_detuning(self):
        t = TransmonParams(5.0, -0.2)
        with pytest.raises(ValueError):
            DeviceModel(
                transmons=(t,),
                channels=(ControlChannel("detuning", (0,), 0.0, 0.5),),
            )

    def test_two_transmon_rejects_microwave(self):
        t = TransmonParams(5.0, -0.2)
        with pytest.raises(ValueError):
            DeviceModel(
                transmons=(t, t),
                channels=(ControlChannel("microwave", (0,), 5.0, 0.08),),
            )

    def test_level_mapping_is_identity(self):
        # spin labels (-,0,+) <-> oscillator levels (0,1,2): index map only
        model = two_transmon_model()
        comp = computational_indices(model)
        spin_digits = [(i // 3, i % 3) for i in range(9)]
        level_pairs = [(int(c) // 5, int(c) % 5) for c in comp]
        assert spin_digits == level_pairs
