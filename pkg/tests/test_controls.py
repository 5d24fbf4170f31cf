import json

import numpy as np
import pytest

from stringmelt.controls import (
    ArtifactError,
    ChannelAnsatz,
    ControlParameters,
    field_gradient,
    field_spectrum,
    field_value,
    load_pulse_artifact,
    random_initial_parameters,
    sample_field,
    saturation,
    saturation_derivative,
    save_pulse_artifact,
    standard_ansatz,
    window,
    window_derivative,
)
from stringmelt.device import single_transmon_model, two_transmon_model


@pytest.fixture
def microwave_ansatz():
    model = single_transmon_model()
    return standard_ansatz(model)[0]


class TestWindow:
    def test_starts_at_zero(self):
        assert window(0.0, 15.0, 50.0) == 0.0

    def test_reaches_peak_at_ramp_end(self):
        assert window(15.0, 15.0, 50.0, omega_m=1.0) == pytest.approx(1.0)

    def test_returns_to_zero(self):
        assert window(50.0, 15.0, 50.0) == pytest.approx(0.0, abs=1e-15)

    def test_flat_in_the_middle(self):
        assert window(25.0, 15.0, 50.0) == 1.0

    def test_first_derivative_continuous_at_joins(self):
        eps = 1e-7
        for t0 in (15.0, 35.0):
            left = (window(t0, 15.0, 50.0) - window(t0 - eps, 15.0, 50.0)) / eps
            right = (window(t0 + eps, 15.0, 50.0) - window(t0, 15.0, 50.0)) / eps
            assert abs(left - right) < 1e-5
            assert abs(window_derivative(t0, 15.0, 50.0) - left) < 1e-5

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            window(-1.0, 15.0, 50.0)
        with pytest.raises(ValueError):
            window(51.0, 15.0, 50.0)


class TestSaturation:
    def test_published_formula_zero_at_origin(self):
        assert saturation(0.0, 0.08, mode="logistic-printed") == pytest.approx(0.0)

    def test_default_mode_odd_and_zero_at_origin(self):
        assert saturation(0.0, 0.08) == 0.0
        x = np.linspace(-1, 1, 101)
        assert np.abs(saturation(x, 0.08) + saturation(-x, 0.08)).max() < 1e-15

    def test_default_mode_asymptotes(self):
        b = 0.08
        assert saturation(100.0 * b, b) == pytest.approx(b, rel=1e-12)
        assert saturation(-100.0 * b, b) == pytest.approx(-b, rel=1e-12)
        assert abs(saturation(1e6, b)) <= b

    def test_default_mode_monotone(self):
        # strict increase where float64 can resolve it; never decreasing
        # (tanh rounds to exactly +-1 beyond |2x/B| ~ 19)
        b = 0.5
        x = np.linspace(-10 * b, 10 * b, 10**4)
        y = saturation(x, b)
        assert np.all(np.diff(y) >= 0)
        core = np.abs(x) <= 2 * b
        assert np.all(np.diff(y[core]) > 0)

    def test_derivatives_match_finite_differences(self):
        # points inside the active region; deep saturation is flat to
        # machine precision and FD there measures only roundoff
        b = 0.08
        for mode in ("tanh", "logistic-printed"):
            for x in (-0.08, -0.01, 0.0, 0.02, 0.06):
                if mode == "logistic-printed" and abs(x - b / 4 * np.log(3)) < 0.03:
                    continue
                fd = (saturation(x + 1e-7, b, mode) - saturation(x - 1e-7, b, mode)) / 2e-7
                assert saturation_derivative(x, b, mode) == pytest.approx(fd, rel=1e-5)

    def test_published_formula_has_a_pole(self):
        # the printed logistic diverges near x = (B/4) ln 3; the default
        # mode exists precisely because of this
        b = 0.08
        x_pole = b / 4 * np.log(3)
        assert abs(saturation(x_pole + 1e-9, b, mode="logistic-printed")) > 1e4


class TestFieldValue:
    def test_zero_parameters_give_zero_field(self, microwave_ansatz):
        params = np.zeros(microwave_ansatz.n_params)
        for t in (0.0, 7.0, 25.0, 50.0):
            assert field_value(microwave_ansatz, params, t) == 0.0

    def test_gradient_matches_finite_differences(self, microwave_ansatz):
        # every component matches to 1e-6 relative, or to the absolute
        # noise floor of central differences at step 1e-6
        rng = np.random.default_rng(5)
        for _ in range(20):
            params = random_initial_parameters([microwave_ansatz], rng).values
            t = rng.uniform(1.0, 49.0)
            grad = field_gradient(microwave_ansatz, params, t)
            for i in range(params.size):
                p_plus = params.copy()
                p_plus[i] += 1e-6
                p_minus = params.copy()
                p_minus[i] -= 1e-6
                fd = (
                    field_value(microwave_ansatz, p_plus, t)
                    - field_value(microwave_ansatz, p_minus, t)
                ) / 2e-6
                err = abs(fd - grad[i])
                assert err < max(1e-6 * max(abs(grad[i]), abs(fd)), 1e-9)

    def test_field_bounded_by_window_times_bound(self, microwave_ansatz):
        rng = np.random.default_rng(8)
        bound = microwave_ansatz.channel.bound
        for _ in range(10):
            params = rng.normal(scale=3.0, size=microwave_ansatz.n_params)
            _, values = sample_field(microwave_ansatz, params, dt=0.05)
            assert np.abs(values).max() < microwave_ansatz.omega_m * bound

    def test_out_of_range_time_rejected(self, microwave_ansatz):
        params = np.zeros(microwave_ansatz.n_params)
        with pytest.raises(ValueError):
            field_value(microwave_ansatz, params, 51.0)


class TestParameterLayout:
    def test_single_transmon_has_sixty(self):
        ansatz = standard_ansatz(single_transmon_model())
        params = ControlParameters.for_channels(ansatz, np.zeros(60))
        assert len(params) == 60
        assert params.offsets == (0, 30, 60)

    def test_two_transmon_has_sixty_three(self):
        ansatz = standard_ansatz(two_transmon_model())
        params = ControlParameters.for_channels(ansatz, np.zeros(63))
        assert len(params) == 63
        assert params.offsets == (0, 21, 42, 63)

    def test_wrong_length_rejected(self):
        ansatz = standard_ansatz(single_transmon_model())
        with pytest.raises(ValueError):
            ControlParameters.for_channels(ansatz, np.zeros(61))

    def test_ansatz_validation(self):
        ch = single_transmon_model().channels[0]
        with pytest.raises(ValueError):
            ChannelAnsatz(channel=ch, n_terms=0, tau_r=15.0, tau_c=50.0)
        with pytest.raises(ValueError):
            ChannelAnsatz(channel=ch, n_terms=5, tau_r=30.0, tau_c=50.0)

    def test_random_initialization_ranges(self):
        ansatz = standard_ansatz(single_transmon_model())
        rng = np.random.default_rng(0)
        params = random_initial_parameters(ansatz, rng)
        block = params.values.reshape(-1, 3)
        assert np.abs(block[:, 0]).max() <= 0.1 * 0.08
        assert block[:, 1].min() >= 0.0
        assert block[:, 1].max() <= 2 * np.pi * 0.1
        assert block[:, 2].min() >= 0.0
        assert block[:, 2].max() <= 2 * np.pi


class TestPulseArtifacts:
    def _save(self, path):
        model = single_transmon_model()
        ansatz = standard_ansatz(model)
        rng = np.random.default_rng(123)
        params = random_initial_parameters(ansatz, rng)
        save_pulse_artifact(
            path, "x_field_tau0.1", model, ansatz, params.values,
            infidelity=3.2e-9, leakage=1.1e-5,
            metadata={"tau": 0.1, "note": "roundtrip"},
        )
        return params

    def test_round_trip_bit_exact(self, tmp_path):
        path = tmp_path / "pulse.json"
        params = self._save(path)
        art = load_pulse_artifact(path)
        assert np.array_equal(art.parameters, params.values)
        assert art.infidelity == 3.2e-9
        assert art.label == "x_field_tau0.1"
        assert art.ansatz == standard_ansatz(single_transmon_model())
        # saving again from the loaded artifact reproduces the file exactly
        path2 = tmp_path / "pulse2.json"
        save_pulse_artifact(
            path2, art.label, art.model, art.ansatz, art.parameters,
            art.infidelity, art.leakage, art.metadata,
        )
        assert path.read_text() == path2.read_text()

    def test_tampered_artifact_refused(self, tmp_path):
        path = tmp_path / "pulse.json"
        self._save(path)
        payload = json.loads(path.read_text())
        payload["infidelity"] = 1e-12
        path.write_text(json.dumps(payload))
        with pytest.raises(ArtifactError, match="hash"):
            load_pulse_artifact(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ArtifactError, match="not found"):
            load_pulse_artifact(tmp_path / "nope.json")


class TestSpectrum:
    def test_spectrum_peaks_at_carrier(self, microwave_ansatz):
        rng = np.random.default_rng(2)
        params = random_initial_parameters([microwave_ansatz], rng).values
        freqs, power = field_spectrum(microwave_ansatz, params, dt=0.01)
        peak = freqs[np.argmax(power)]
        assert abs(peak - microwave_ansatz.channel.carrier) < 0.2
