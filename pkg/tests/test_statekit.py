"""State preparation, circuits, reduced density matrices, and state files."""

import numpy as np
import pytest
import scipy.linalg

from conftest import partial_trace_oracle, vn_entropy_oracle
from ehtkit.errors import DeflationError, ValidationError
from ehtkit.spinmodel import build_xxz, dense_hamiltonian_real, power_law_couplings
from ehtkit.statekit import (
    CircuitParams,
    DensityMatrix,
    PureState,
    apply_xy_evolution,
    apply_z_rotation,
    estimate_energy,
    excited_states,
    ground_state,
    load_state,
    magnetization_sector_norms,
    neel_state,
    reduced_density_matrix,
    partial_trace_dm,
    run_circuit,
    save_state,
    symmetrized_rdm,
    vqe_optimize,
)


class TestNeelState:
    def test_two_sites(self):
        psi = neel_state(2)
        assert abs(psi.amplitudes[int("01", 2)] - 1.0) < 1e-15
        assert np.count_nonzero(psi.amplitudes) == 1

    def test_three_sites(self):
        psi = neel_state(3)
        assert abs(psi.amplitudes[int("010", 2)] - 1.0) < 1e-15

    @pytest.mark.parametrize("n", [2, 3, 4, 7])
    def test_magnetization(self, n):
        norms = magnetization_sector_norms(neel_state(n))
        expected = 0 if n % 2 == 0 else -1  # one extra down site for odd chains
        assert norms == {expected: 1.0}


class TestGroundState:
    def test_two_site_singlet(self):
        energy, psi = ground_state(build_xxz(2, 1.0, 1.0))
        assert abs(energy + 0.75) < 1e-12
        singlet = np.zeros(4, dtype=complex)
        singlet[int("01", 2)] = 1 / np.sqrt(2)
        singlet[int("10", 2)] = -1 / np.sqrt(2)
        assert abs(abs(np.vdot(singlet, psi.amplitudes)) - 1.0) < 1e-10

    def test_sector_12_matches_dense_oracle(self, xxx12_ground):
        model, energy, state = xxx12_ground
        h = dense_hamiltonian_real(model)
        oracle = scipy.linalg.eigh(h, eigvals_only=True, subset_by_index=(0, 0))[0]
        assert abs(energy - oracle) < 1e-10
        assert magnetization_sector_norms(state) == {0: pytest.approx(1.0, abs=1e-12)}

    def test_odd_chain_degenerate_sectors(self):
        model = build_xxz(11, 1.0, 1.0)
        e_plus, _ = ground_state(model, sector=1)
        e_minus, _ = ground_state(model, sector=-1)
        assert abs(e_plus - e_minus) < 1e-10

    def test_full_solve_matches_sector_solve(self):
        model = build_xxz(8, 1.0, 1.0)
        e_full, _ = ground_state(model)
        e_sec, _ = ground_state(model, sector=0)
        assert abs(e_full - e_sec) < 1e-10

    def test_lanczos_path_matches_dense(self):
        # 13 sites exceeds the dense threshold; check it against the dense
        # solve of the same sector Hamiltonian
        from ehtkit.statekit import sector_basis, sector_hamiltonian

        model = build_xxz(13, 1.0, 1.0)
        e_lan, psi = ground_state(model, sector=1)
        h = sector_hamiltonian(model, (13 + 1) // 2).toarray()
        oracle = scipy.linalg.eigh(h, eigvals_only=True, subset_by_index=(0, 0))[0]
        assert abs(e_lan - oracle) < 1e-9
        assert abs(np.linalg.norm(psi.amplitudes) - 1.0) < 1e-10

    def test_invalid_sector(self):
        with pytest.raises(ValidationError):
            ground_state(build_xxz(4, 1.0, 1.0), sector=1)  # parity mismatch


class TestExcitedStates:
    def test_two_site_spectrum(self):
        states = excited_states(build_xxz(2, 1.0, 1.0), 4, 10.0)
        np.testing.assert_allclose(
            [e for e, _ in states], [-0.75, 0.25, 0.25, 0.25], atol=1e-9
        )

    def test_matches_dense_spectrum(self):
        model = build_xxz(10, 1.0, 1.0)
        states = excited_states(model, 20, 50.0)
        dense = np.linalg.eigvalsh(dense_hamiltonian_real(model))[:20]
        np.testing.assert_allclose([e for e, _ in states], dense, atol=1e-8)

    def test_orthonormal_degenerate_multiplets(self):
        states = excited_states(build_xxz(4, 1.0, 1.0), 8)
        vecs = np.stack([s.amplitudes for _, s in states])
        gram = vecs.conj() @ vecs.T
        np.testing.assert_allclose(gram, np.eye(8), atol=1e-8)

    def test_small_weight_detected(self):
        with pytest.raises(DeflationError):
            excited_states(build_xxz(2, 1.0, 1.0), 4, weight=0.6)

    def test_invalid_weight(self):
        with pytest.raises(ValidationError):
            excited_states(build_xxz(2, 1.0, 1.0), 2, weight=-1.0)


class TestEvolutions:
    def test_xy_zero_theta_identity(self):
        psi = neel_state(4)
        coup = power_law_couplings(4, 1.0, 0.82)
        out = apply_xy_evolution(psi, coup, 0.0)
        np.testing.assert_allclose(out.amplitudes, psi.amplitudes, atol=1e-15)

    def test_single_excitation_single_particle_oracle(self):
        n, theta = 6, 0.7
        coup = power_law_couplings(n, 1.0, 0.82)
        amp = np.zeros(2**n, dtype=complex)
        amp[int("100000", 2)] = 1.0
        out = apply_xy_evolution(PureState(n, amp), coup, theta)
        # single-excitation block evolves with the bare coupling matrix
        prop = scipy.linalg.expm(-1j * theta * coup.values)
        a0 = np.zeros(n, dtype=complex)
        a0[0] = 1.0
        expected = prop @ a0
        single_indices = [int("0" * k + "1" + "0" * (n - k - 1), 2) for k in range(n)]
        np.testing.assert_allclose(out.amplitudes[single_indices], expected, atol=1e-10)
        others = np.delete(np.arange(2**n), single_indices)
        assert np.max(np.abs(out.amplitudes[others])) < 1e-12

    def test_unit_norm_and_magnetization(self, rng):
        n = 5
        coup = power_law_couplings(n, 1.0, 0.82)
        amp = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
        psi = PureState(n, amp / np.linalg.norm(amp))
        out = apply_xy_evolution(psi, coup, 1.3)
        assert abs(np.linalg.norm(out.amplitudes) - 1.0) < 1e-10
        before = magnetization_sector_norms(psi)
        after = magnetization_sector_norms(out)
        for sector, weight in before.items():
            assert abs(after.get(sector, 0.0) - weight) < 1e-10

    def test_z_rotation_trivial_cases(self):
        psi = neel_state(4)
        np.testing.assert_allclose(
            apply_z_rotation(psi, 0.0).amplitudes, psi.amplitudes, atol=1e-15
        )
        out = apply_z_rotation(psi, 4 * np.pi)
        phase = out.amplitudes[np.argmax(np.abs(out.amplitudes))]
        np.testing.assert_allclose(out.amplitudes, phase * psi.amplitudes, atol=1e-12)

    def test_z_rotation_preserves_z_probabilities(self, rng):
        amp = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        psi = PureState(3, amp / np.linalg.norm(amp))
        out = apply_z_rotation(psi, 0.9)
        np.testing.assert_allclose(
            np.abs(out.amplitudes) ** 2, np.abs(psi.amplitudes) ** 2, atol=1e-12
        )


class TestRunCircuit:
    def test_zero_parameters_identity(self):
        psi = neel_state(4)
        coup = power_law_couplings(4, 1.0, 0.82)
        out = run_circuit(psi, CircuitParams((0.0, 0.0, 0.0, 0.0)), coup)
        np.testing.assert_allclose(out.amplitudes, psi.amplitudes, atol=1e-12)

    def test_two_layers_vs_dense_unitary_oracle(self):
        from ehtkit.spinmodel import xy_hamiltonian

        n = 4
        coup = power_law_couplings(n, 1.0, 0.82)
        th = (0.37, 0.81)
        psi = neel_state(n)
        out = run_circuit(psi, CircuitParams(th), coup)
        u_xy = scipy.linalg.expm(-1j * th[0] * xy_hamiltonian(coup))
        z_vals = np.zeros(2**n)
        for idx in range(2**n):
            for site in (2, 4):
                z_vals[idx] += 2 * ((idx >> (n - site)) & 1) - 1
        u_z = np.diag(np.exp(-0.5j * th[1] * z_vals))
        expected = u_z @ (u_xy @ psi.amplitudes)
        np.testing.assert_allclose(out.amplitudes, expected, atol=1e-10)

    def test_heating_quench_applied_before_circuit(self):
        n = 4
        coup = power_law_couplings(n, 1.0, 0.82)
        psi = neel_state(n)
        heated = run_circuit(psi, CircuitParams((0.4, 0.2), heating_theta=0.9), coup)
        manual = run_circuit(
            apply_xy_evolution(psi, coup, 0.9), CircuitParams((0.4, 0.2)), coup
        )
        np.testing.assert_allclose(heated.amplitudes, manual.amplitudes, atol=1e-12)

    def test_magnetization_distribution_conserved(self):
        n = 5
        coup = power_law_couplings(n, 1.0, 0.82)
        psi = neel_state(n)
        out = run_circuit(psi, CircuitParams((0.3, 0.8, 0.5, 0.1)), coup)
        assert magnetization_sector_norms(out) == {
            -1: pytest.approx(1.0, abs=1e-10)
        }


class TestVQE:
    @pytest.mark.slow
    def test_four_site_normalized_energy_target(self):
        model = build_xxz(4, 1.0, 1.0)
        coup = power_law_couplings(4, 1.0, 0.82)
        w = np.linalg.eigvalsh(dense_hamiltonian_real(model))
        params, trace = vqe_optimize(model, coup, layers=2, shots_per_basis=None,
                                     seed=7, iterations=60)
        psi = run_circuit(neel_state(4), params, coup)
        energy = estimate_energy(psi, model, None)
        normalized = (energy - w[0]) / (w[-1] - w[0])
        assert normalized <= 0.05

    def test_zero_iterations_returns_init(self):
        model = build_xxz(4, 1.0, 1.0)
        coup = power_law_couplings(4, 1.0, 0.82)
        init = np.array([0.1, 0.2, 0.3, 0.4])
        params, trace = vqe_optimize(model, coup, layers=2, shots_per_basis=None,
                                     seed=3, iterations=0, init=init)
        assert params.thetas == tuple(init)
        assert len(trace) == 0

    def test_seed_determinism_with_shots(self):
        model = build_xxz(4, 1.0, 1.0)
        coup = power_law_couplings(4, 1.0, 0.82)
        init = np.array([0.5, 0.3])
        runs = [
            vqe_optimize(model, coup, layers=1, shots_per_basis=30, seed=11,
                         iterations=15, init=init)
            for _ in range(2)
        ]
        assert runs[0][0].thetas == runs[1][0].thetas
        np.testing.assert_array_equal(runs[0][1], runs[1][1])


class TestReducedDensityMatrix:
    def test_bell_pair_single_site(self):
        amp = np.zeros(4, dtype=complex)
        amp[int("00", 2)] = amp[int("11", 2)] = 1 / np.sqrt(2)
        rho = reduced_density_matrix(PureState(2, amp), [1])
        np.testing.assert_allclose(rho.matrix, np.eye(2) / 2, atol=1e-12)

    def test_product_state_rank_one(self):
        psi = neel_state(5)
        rho = reduced_density_matrix(psi, [2, 3])
        ev = np.sort(rho.eigenvalues())
        np.testing.assert_allclose(ev, [0, 0, 0, 1], atol=1e-12)

    def test_eight_site_vs_loop_oracle(self):
        model = build_xxz(8, 1.0, 1.0)
        _, psi = ground_state(model, sector=0)
        rho = reduced_density_matrix(psi, [3, 4, 5])
        oracle = partial_trace_oracle(psi.amplitudes, [3, 4, 5], 8)
        np.testing.assert_allclose(rho.matrix, oracle, atol=1e-12)

    def test_disjoint_sites_vs_loop_oracle(self, xxx10_ground):
        _, _, psi = xxx10_ground
        sites = [2, 3, 7, 8]
        rho = reduced_density_matrix(psi, sites)
        oracle = partial_trace_oracle(psi.amplitudes, sites, 10)
        np.testing.assert_allclose(rho.matrix, oracle, atol=1e-12)

    def test_partial_trace_consistency(self, xxx10_ground):
        _, _, psi = xxx10_ground
        rho_ab = reduced_density_matrix(psi, [3, 4, 5, 6])
        rho_a = reduced_density_matrix(psi, [3, 4])
        traced = partial_trace_dm(rho_ab, [0, 1])
        np.testing.assert_allclose(traced.matrix, rho_a.matrix, atol=1e-12)

    def test_site_cap_and_bad_sites(self, xxx10_ground):
        _, _, psi = xxx10_ground
        with pytest.raises(ValidationError):
            reduced_density_matrix(psi, [0, 1])  # site labels start at 1
        big = neel_state(13)
        with pytest.raises(ValidationError):
            reduced_density_matrix(big, range(1, 14))  # exceeds the 12-site cap


class TestSymmetrizedRdm:
    def test_symmetric_input_unchanged(self):
        rho = DensityMatrix(1, np.eye(2) / 2)
        out = symmetrized_rdm(rho)
        np.testing.assert_allclose(out.matrix, rho.matrix, atol=1e-15)

    def test_down_down_projector(self):
        m = np.zeros((4, 4), dtype=complex)
        m[0, 0] = 1.0  # |down down><down down|
        out = symmetrized_rdm(DensityMatrix(2, m))
        expected = np.zeros((4, 4), dtype=complex)
        expected[0, 0] = expected[3, 3] = 0.5
        np.testing.assert_allclose(out.matrix, expected, atol=1e-15)

    def test_fidelity_grows_with_chain_length(self):
        # bulk-window mixture converges to the symmetric superposition state
        from ehtkit.analysis import uhlmann_fidelity

        fids = []
        for n in (8, 10):
            model = build_xxz(n, 1.0, 1.0)
            _, psi = ground_state(model, sector=2)
            sym_amp = psi.amplitudes + psi.amplitudes[::-1]
            sym = PureState(n, sym_amp / np.linalg.norm(sym_amp))
            start = (n - 5) // 2 + 1
            window = range(start, start + 5)
            rho_sym = reduced_density_matrix(sym, window)
            rho_mod = symmetrized_rdm(reduced_density_matrix(psi, window))
            fids.append(uhlmann_fidelity(rho_sym, rho_mod))
        assert fids[1] > fids[0]


class TestStateFile:
    def test_round_trip(self, tmp_path, rng):
        amp = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        psi = PureState(4, amp / np.linalg.norm(amp))
        path = tmp_path / "state.bin"
        save_state(psi, path)
        again = load_state(path)
        assert again.n_sites == 4
        np.testing.assert_allclose(again.amplitudes, psi.amplitudes, atol=0)
        raw = path.read_bytes()
        assert raw[:9] == b"EHTSTATE1"
        assert len(raw) == 9 + 4 + 16 * 16

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTASTATE" + b"\0" * 20)
        with pytest.raises(ValidationError):
            load_state(path)
