import numpy as np
import pytest
import scipy.linalg

from stringmelt.spin1 import (
    ChainState,
    StringSpec,
    aklt_ground_state,
    aklt_hamiltonian,
    basis_rotation,
    build_spin1_ops,
    exact_evolve,
    product_state,
    quench_hamiltonian,
    string_expectation_direct,
    string_expectation_sampled,
    string_operator,
    symmetry_group_elements,
    total_sz_diagonal,
)

SQ2 = np.sqrt(2.0)


class TestSpin1Ops:
    def test_sz_diagonal_minus_zero_plus(self):
        ops = build_spin1_ops()
        assert np.allclose(np.diag(ops.sz), [-1.0, 0.0, 1.0])

    def test_commutation_relations(self):
        ops = build_spin1_ops()
        pairs = [(ops.sx, ops.sy, ops.sz), (ops.sy, ops.sz, ops.sx), (ops.sz, ops.sx, ops.sy)]
        for a, b, c in pairs:
            assert np.abs(a @ b - b @ a - 1j * c).max() < 1e-14

    def test_hermitian_with_spin1_eigenvalues(self):
        ops = build_spin1_ops()
        for s in (ops.sx, ops.sy, ops.sz):
            assert np.abs(s - s.conj().T).max() == 0.0
            assert np.allclose(np.linalg.eigvalsh(s), [-1.0, 0.0, 1.0], atol=1e-14)

    def test_casimir(self):
        ops = build_spin1_ops()
        total = ops.sx @ ops.sx + ops.sy @ ops.sy + ops.sz @ ops.sz
        assert np.abs(total - 2.0 * np.eye(3)).max() < 1e-14


class TestAKLTHamiltonian:
    def test_two_site_projector_rank_five(self):
        h = aklt_hamiltonian(2)
        evals = np.linalg.eigvalsh(h.matrix)
        assert np.allclose(np.sort(evals), [0, 0, 0, 0, 1, 1, 1, 1, 1], atol=1e-12)

    def test_ground_energy_zero(self):
        for n in (2, 3, 4):
            evals = np.linalg.eigvalsh(aklt_hamiltonian(n).matrix)
            assert abs(evals[0]) < 1e-10

    def test_six_site_ground_degeneracy_four(self, aklt6):
        evals = np.linalg.eigvalsh(aklt6.matrix)
        assert int(np.sum(evals < 1e-10)) == 4

    def test_rejects_single_site(self):
        with pytest.raises(ValueError):
            aklt_hamiltonian(1)


class TestQuenchHamiltonian:
    def test_two_site_xx_spectrum_symmetric(self):
        h = quench_hamiltonian(2, 0.0, 0.0).matrix
        evals = np.linalg.eigvalsh(h)
        assert np.abs(np.sort(evals) + np.sort(-evals)[::-1]).max() < 1e-12

    def test_hermitian(self, quench6):
        assert np.abs(quench6.matrix - quench6.matrix.conj().T).max() < 1e-14

    def test_transverse_field_breaks_symmetry_partially(self, quench6):
        elems = symmetry_group_elements(6)
        h = quench6.matrix
        comm_x = np.linalg.norm(h @ elems[1] - elems[1] @ h)
        comm_z = np.linalg.norm(h @ elems[3] - elems[3] @ h)
        assert comm_x < 1e-10
        assert comm_z > 1e-3

    def test_unperturbed_commutes_with_whole_group(self):
        h = quench_hamiltonian(6, 0.2, 0.0).matrix
        for g in symmetry_group_elements(6):
            assert np.linalg.norm(h @ g - g @ h) < 1e-10


class TestAKLTGroundState:
    def test_zero_energy(self, aklt6, ground6):
        energy = np.vdot(ground6.amplitudes, aklt6.matrix @ ground6.amplitudes)
        assert abs(energy) < 1e-10

    def test_total_sz_zero(self, ground6):
        jz = total_sz_diagonal(6)
        val = np.sum(jz * np.abs(ground6.amplitudes) ** 2)
        assert abs(val) < 1e-10

    def test_deterministic(self, ground6):
        again = aklt_ground_state(6)
        assert np.array_equal(again.amplitudes, ground6.amplitudes)

    def test_reference_string_value_at_t0(self, ground6):
        # the z-direction end-to-end string on the initial state seeds every
        # melting trajectory; it must be a robust nonzero negative value
        val = string_expectation_direct(ground6, StringSpec(1, 6, "z"))
        assert -1.0 < val < -0.3


class TestStringOperator:
    def test_adjacent_pair_is_plain_product(self):
        op = string_operator(StringSpec(1, 2, "z"), 2)
        ops = build_spin1_ops()
        assert np.abs(op.matrix - np.kron(ops.sz, ops.sz)).max() < 1e-14

    def test_pi_rotation_diagonal(self):
        op = string_operator(StringSpec(1, 3, "z"), 3)
        ops = build_spin1_ops()
        middle = np.diag([-1.0, 1.0, -1.0])
        expected = np.kron(np.kron(ops.sz, middle), ops.sz)
        assert np.abs(op.matrix - expected).max() < 1e-14

    def test_uniform_zero_state_annihilates(self):
        state = product_state("000000")
        assert string_expectation_direct(state, StringSpec(1, 6, "z")) == 0.0

    @pytest.mark.parametrize("direction", ["x", "y", "z"])
    def test_hermitian_and_real_expectation(self, direction, ground6):
        for l in (2, 4, 6):
            spec = StringSpec(1, l, direction)
            op = string_operator(spec, 6)
            assert np.abs(op.matrix - op.matrix.conj().T).max() < 1e-12
            val = op.expectation(ground6)
            assert abs(val.imag) < 1e-10

    def test_index_validation(self):
        with pytest.raises(ValueError):
            StringSpec(3, 3, "z")
        with pytest.raises(ValueError):
            string_operator(StringSpec(1, 7, "z"), 6)


class TestBasisRotation:
    def test_x_middle_row_as_published(self):
        # row for <0| reads (-1/sqrt2, 0, +1/sqrt2) against (+,0,-) ordering
        u = basis_rotation("x")
        assert np.allclose(u[1], [1 / SQ2, 0.0, -1 / SQ2])

    def test_y_middle_row_as_published(self):
        u = basis_rotation("y")
        assert np.allclose(u[1], [1 / SQ2, 0.0, 1 / SQ2])

    @pytest.mark.parametrize("direction", ["x", "y"])
    def test_unitary(self, direction):
        u = basis_rotation(direction)
        assert np.abs(u @ u.conj().T - np.eye(3)).max() < 1e-15

    @pytest.mark.parametrize("direction", ["x", "y", "z"])
    def test_measurement_identity(self, direction):
        ops = build_spin1_ops()
        u = basis_rotation(direction)
        s = ops.component(direction)
        assert np.abs(u @ s @ u.conj().T - ops.sz).max() < 1e-14

    def test_z_is_identity(self):
        assert np.array_equal(basis_rotation("z"), np.eye(3))


class TestExactEvolve:
    def test_t_zero_identity(self, quench6, ground6):
        out = exact_evolve(ground6, quench6, 0.0)
        assert np.abs(out.amplitudes - ground6.amplitudes).max() < 1e-12

    def test_aklt_ground_state_stationary(self, aklt6, ground6):
        out = exact_evolve(ground6, aklt6, 1.7)
        overlap = ground6.overlap(out)
        assert abs(abs(overlap) - 1.0) < 1e-10

    def test_against_pade_exponential(self, quench6, ground6):
        t = 2.5
        out = exact_evolve(ground6, quench6, t)
        u = scipy.linalg.expm(-1j * quench6.matrix * t)
        ref = u @ ground6.amplitudes
        assert np.abs(out.amplitudes - ref).max() < 1e-8

    def test_norm_preserved(self, quench6, ground6):
        for t in (0.5, 1.5, 2.5):
            out = exact_evolve(ground6, quench6, t)
            assert abs(out.norm() - 1.0) < 1e-10

    def test_rejects_non_hermitian(self, ground6):
        from stringmelt.spin1 import ChainOperator

        bad = np.zeros((729, 729), dtype=complex)
        bad[0, 1] = 1.0
        with pytest.raises(ValueError):
            exact_evolve(ground6, ChainOperator(6, bad), 0.1)

    def test_evolution_preserves_symmetry_group(self):
        h = quench_hamiltonian(6, 0.2, 0.0).matrix
        u = scipy.linalg.expm(-1j * h * 0.7)
        for g in symmetry_group_elements(6):
            assert np.linalg.norm(u @ g - g @ u) < 1e-10


class TestSampledStrings:
    def test_matches_direct_at_large_shots(self, ground6):
        for direction in ("x", "y", "z"):
            spec = StringSpec(1, 6, direction)
            direct = string_expectation_direct(ground6, spec)
            est, err = string_expectation_sampled(ground6, spec, 10**6, rng_seed=11)
            assert abs(est - direct) < 5 * max(err, 1e-12)

    def test_z_product_state_zero_variance(self):
        state = product_state("+0-0+-")
        spec = StringSpec(1, 6, "z")
        est, err = string_expectation_sampled(state, spec, 5000, rng_seed=3)
        assert err == 0.0
        assert est == string_expectation_direct(state, spec)

    def test_unbiased_over_seeds(self, ground6):
        spec = StringSpec(1, 6, "y")
        direct = string_expectation_direct(ground6, spec)
        estimates = [
            string_expectation_sampled(ground6, spec, 10**4, rng_seed=s)[0]
            for s in range(100)
        ]
        estimates = np.array(estimates)
        sem = estimates.std(ddof=1) / np.sqrt(len(estimates))
        assert abs(estimates.mean() - direct) < 4 * sem

    def test_reproducible(self, ground6):
        spec = StringSpec(1, 4, "x")
        a = string_expectation_sampled(ground6, spec, 1000, rng_seed=5)
        b = string_expectation_sampled(ground6, spec, 1000, rng_seed=5)
        assert a == b

    def test_requires_positive_shots(self, ground6):
        with pytest.raises(ValueError):
            string_expectation_sampled(ground6, StringSpec(1, 3, "z"), 0, 1)


class TestChainState:
    def test_normalized_constructor_rejects_bad_norm(self):
        amps = np.ones(9, dtype=complex)
        with pytest.raises(ValueError):
            ChainState.normalized(2, amps)

    def test_subnormalized_states_allowed_raw(self):
        amps = np.zeros(9, dtype=complex)
        amps[0] = 0.5
        state = ChainState(2, amps)
        assert state.norm() == 0.5
