"""Error-channel algebra, application, and magnetization-based calibration."""

import itertools

import numpy as np
import pytest

from conftest import kron_chain, random_density_matrix
from ehtkit.errors import CalibrationError, ValidationError
from ehtkit.measurement import MeasurementDataset, sample_dataset
from ehtkit.noise import (
    NoiseParams,
    apply_channel,
    calibrate_noise,
    flip_probabilities,
    kraus_operators,
    magnetization_moments,
)
from ehtkit.statekit import DensityMatrix, PureState, ground_state, neel_state
from ehtkit.spinmodel import build_xxz


def random_valid_params(rng):
    p2 = rng.uniform(0.0, 1.0)
    p1 = rng.uniform(0.0, 4.0 / 3.0 * (1.0 - p2))
    return NoiseParams(p1, p2)


def kraus_sum_oracle(rho, params, n):
    """Global Kraus sum over all 5^n operator combinations."""
    ops = kraus_operators(params)
    out = np.zeros_like(rho)
    for combo in itertools.product(range(5), repeat=n):
        big = kron_chain([ops[k] for k in combo])
        out += big @ rho @ big.conj().T
    return out


class TestKrausAlgebra:
    def test_trace_preservation_random_region(self, rng):
        for _ in range(100):
            params = random_valid_params(rng)
            total = sum(e.conj().T @ e for e in kraus_operators(params))
            assert np.max(np.abs(total - np.eye(2))) <= 1e-14

    def test_invalid_params(self):
        with pytest.raises(ValidationError):
            NoiseParams(-0.1, 0.0)
        with pytest.raises(ValidationError):
            NoiseParams(1.0, 0.5)  # 1 - 3/4 - 0.5 < 0

    def test_flip_probabilities(self):
        up_down, down_up = flip_probabilities(NoiseParams(0.04, 0.03))
        assert abs(up_down - 0.05) < 1e-15
        assert abs(down_up - 0.02) < 1e-15

    def test_preparation_fidelity_scale(self):
        # single-particle preparation fidelity around 0.994 corresponds to a
        # 0.6% flip probability on an ideal down site
        params = NoiseParams(0.012, 0.0)
        _, down_up = flip_probabilities(params)
        assert abs((1.0 - down_up) - 0.994) < 1e-12


class TestApplyChannel:
    def test_identity_at_zero(self, rng):
        rho = random_density_matrix(rng, 2)
        out = apply_channel(rho, NoiseParams(0.0, 0.0))
        np.testing.assert_allclose(out.matrix, rho.matrix, atol=0)

    def test_complete_decay(self):
        up = DensityMatrix(1, np.diag([0.0, 1.0]).astype(complex))
        out = apply_channel(up, NoiseParams(0.0, 1.0))
        np.testing.assert_allclose(out.matrix, np.diag([1.0, 0.0]), atol=1e-15)

    def test_three_site_vs_kraus_sum_oracle(self, rng):
        rho = random_density_matrix(rng, 3)
        params = NoiseParams(0.05, 0.02)
        out = apply_channel(rho, params)
        oracle = kraus_sum_oracle(rho.matrix, params, 3)
        np.testing.assert_allclose(out.matrix, oracle, atol=1e-12)

    def test_trace_and_positivity(self, rng):
        rho = random_density_matrix(rng, 3)
        out = apply_channel(rho, NoiseParams(0.4, 0.3))
        assert abs(np.trace(out.matrix).real - 1.0) < 1e-12
        assert np.min(out.eigenvalues()) > -1e-10

    def test_site_maps_commute(self, rng):
        from ehtkit.noise import _apply_site_kraus

        rho = random_density_matrix(rng, 2).matrix
        ops = kraus_operators(NoiseParams(0.1, 0.05))
        order_a = _apply_site_kraus(_apply_site_kraus(rho, ops, 1, 2, False), ops, 2, 2, False)
        order_b = _apply_site_kraus(_apply_site_kraus(rho, ops, 2, 2, False), ops, 1, 2, False)
        np.testing.assert_allclose(order_a, order_b, atol=1e-14)


def mc_trajectory_z_statistics(psi, params, shots, rng):
    """Independent per-shot unraveling: pick one Kraus operator per site with
    its Born weight, then measure Z.  Returns per-shot magnetizations."""
    ops = kraus_operators(params)
    n = psi.n_sites
    mags = np.empty(shots)
    for shot in range(shots):
        vec = psi.amplitudes.copy()
        for site in range(1, n + 1):
            da, db = 2 ** (site - 1), 2 ** (n - site)
            t = vec.reshape(da, 2, db)
            candidates = [np.einsum("pq,aqb->apb", e, t).reshape(-1) for e in ops]
            weights = np.array([np.vdot(c, c).real for c in candidates])
            k = rng.choice(5, p=weights / weights.sum())
            vec = candidates[k] / np.sqrt(weights[k])
        probs = np.abs(vec) ** 2
        outcome = rng.choice(len(probs), p=probs / probs.sum())
        mags[shot] = 2 * bin(outcome).count("1") - n
    return mags


class TestMoments:
    def test_moment_formulas_vs_trajectory_oracle(self):
        params = NoiseParams(0.08, 0.05)
        psi = neel_state(4)  # fixed magnetization 0
        rng = np.random.default_rng(99)
        shots = 4000
        mags = mc_trajectory_z_statistics(psi, params, shots, rng)
        mean_pred, var_pred = magnetization_moments(4, 0, params.p1, params.p2)
        # sample moments agree within 5 standard errors
        se_mean = np.sqrt(var_pred / shots)
        assert abs(mags.mean() - mean_pred) < 5 * se_mean
        se_var = var_pred * np.sqrt(8.0 / shots)
        assert abs(mags.var() - var_pred) < 5 * se_var

    def test_moments_against_channel_diagonal(self):
        # analytic moments match the exact channel output for an entangled
        # fixed-magnetization state, not just product states
        model = build_xxz(6, 1.0, 1.0)
        _, ground6 = ground_state(model, sector=0)
        params = NoiseParams(0.06, 0.04)
        noisy = apply_channel(
            DensityMatrix(6, np.outer(ground6.amplitudes, ground6.amplitudes.conj())),
            params,
        )
        probs = np.real(np.diag(noisy.matrix))
        mags = np.array([2 * bin(s).count("1") - 6 for s in range(64)])
        mean_exact = float(probs @ mags)
        var_exact = float(probs @ (mags - mean_exact) ** 2)
        mean_pred, var_pred = magnetization_moments(6, 0, params.p1, params.p2)
        assert abs(mean_exact - mean_pred) < 1e-10
        assert abs(var_exact - var_pred) < 1e-10


class TestCalibration:
    def test_noiseless_data_recovers_zero(self):
        model = build_xxz(6, 1.0, 1.0)
        _, psi = ground_state(model, sector=0)
        data = sample_dataset(psi, ["Z" * 6], shots=20000, seed=31)
        params = calibrate_noise(data, 0)
        assert params.p1 == 0.0 and params.p2 == 0.0

    def test_planted_rates_recovered(self):
        model = build_xxz(6, 1.0, 1.0)
        _, psi = ground_state(model, sector=0)
        planted = NoiseParams(0.04, 0.03)
        data = sample_dataset(psi, ["Z" * 6], shots=100000, noise=planted, seed=32)
        out = calibrate_noise(data, 0)
        assert abs(out.p1 - 0.04) < 0.005
        assert abs(out.p2 - 0.03) < 0.005

    def test_requires_z_settings(self):
        data = sample_dataset(neel_state(3), ["XXX"], shots=10, seed=1)
        with pytest.raises(ValidationError):
            calibrate_noise(data, -1)

    def test_impossible_variance_fails(self):
        data = MeasurementDataset(
            register=(1, 2, 3, 4),
            settings=("ZZZZ",),
            counts=({"0000": 50, "1111": 50},),
            shots=100,
        )
        with pytest.raises(CalibrationError):
            calibrate_noise(data, 0)

    def test_nonmixed_state_rejected(self):
        data = MeasurementDataset(
            register=(1, 2), settings=("ZZ",), counts=({"11": 10},), shots=10
        )
        with pytest.raises(ValidationError):
            calibrate_noise(data, 2)
