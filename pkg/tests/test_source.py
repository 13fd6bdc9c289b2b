import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from qdpairs.source import (HBAR, CavityParams, ExcitationParams, NoRealSolutionError,
                            QDotParams, TwoPhotonState, cavity_lifetime, fit_cavity_to_lifetimes,
                            mean_coherence, predict_visibilities, purcell_factor,
                            rabi_preparation_probability, rho_at_delay, rho_time_integrated)

CAV = CavityParams(lambda_c=890.0, q_factor=150.0, f_max=11.3)


def random_weights(draw_floats):
    w = np.array(draw_floats) + 1e-3
    return tuple(w / w.sum())


qdots = st.builds(
    lambda s, g, eps, w: QDotParams(fss_s=s, gamma_cross=g, eps_depol=eps,
                                    noise_weights=random_weights(w)),
    st.floats(0, 20), st.floats(0, 10), st.floats(0, 1),
    st.lists(st.floats(0, 1), min_size=4, max_size=4))


class TestPurcell:
    def test_on_resonance(self):
        assert purcell_factor(890.0, CAV) == 11.3

    def test_half_width(self):
        assert purcell_factor(890.0 + 890.0 / 300.0, CAV) == pytest.approx(11.3 / 2, rel=1e-12)

    @given(st.floats(-50, 50))
    def test_even_in_detuning(self, d):
        assert purcell_factor(890 + d, CAV) == pytest.approx(purcell_factor(890 - d, CAV), rel=1e-12)

    @given(st.floats(800, 1000), st.floats(10, 1e4), st.floats(1, 100))
    def test_matches_oracle(self, lam, q, f):
        cav = CavityParams(890.0, q, f)
        assert purcell_factor(lam, cav) == pytest.approx(oracles.purcell(lam, 890.0, q, f), rel=1e-12)

    def test_array_input(self):
        out = purcell_factor(np.array([889.0, 890.0]), CAV)
        assert out.shape == (2,) and out[1] == 11.3

    def test_invalid_cavity(self):
        with pytest.raises(ValueError):
            CavityParams(q_factor=0)
        with pytest.raises(ValueError):
            CavityParams(f_max=0.5)
        with pytest.raises(ValueError):
            CavityParams(eta_extr_max=1.2)


class TestLifetime:
    def test_device_values(self):
        assert cavity_lifetime(750.3, 11.3) == pytest.approx(66.4, abs=0.005)
        assert cavity_lifetime(1102.3, 8.7) == pytest.approx(126.7, abs=0.005)

    def test_no_enhancement(self):
        assert cavity_lifetime(123.0, 1.0) == 123.0

    def test_rejects_inhibition(self):
        with pytest.raises(ValueError):
            cavity_lifetime(100.0, 0.9)


class TestCavityFit:
    def test_device_fit(self):
        fit = fit_cavity_to_lifetimes(66.4, 126.7, 750.3, 1102.3, 1.6, 150)
        assert fit.cavity.f_max == pytest.approx(11.3, abs=0.01)
        assert fit.detuning_xx == pytest.approx(0.02, abs=0.005)
        assert fit.detuning_x == pytest.approx(1.62, abs=0.005)
        assert purcell_factor(fit.lambda_x, fit.cavity) == pytest.approx(8.70, abs=1e-3)
        assert purcell_factor(fit.lambda_xx, fit.cavity) == pytest.approx(750.3 / 66.4, abs=1e-9)
        assert fit.lambda_xx > fit.lambda_x

    def test_against_independent_root_finder(self):
        fit = fit_cavity_to_lifetimes(66.4, 126.7, 750.3, 1102.3, 1.6, 150)
        f_max, d = oracles.solve_cavity(750.3 / 66.4, 1102.3 / 126.7, 1.6, 150, 890.0)
        assert fit.cavity.f_max == pytest.approx(f_max, rel=1e-8)
        assert fit.detuning_xx == pytest.approx(d, abs=1e-8)

    @given(st.floats(1.5, 30), st.floats(0.0, 3.0), st.floats(0.05, 4.0), st.floats(50, 500))
    def test_round_trip(self, f_max, d_xx, split, q):
        cav = CavityParams(890.0, q, f_max)
        f1 = purcell_factor(890 - d_xx, cav)
        f2 = purcell_factor(890 - d_xx - split, cav)
        fit = fit_cavity_to_lifetimes(100 / f1 * 1.0, 200 / f2, 100.0, 200.0, split, q)
        assert purcell_factor(fit.lambda_xx, fit.cavity) == pytest.approx(f1, rel=1e-8)
        assert purcell_factor(fit.lambda_x, fit.cavity) == pytest.approx(f2, rel=1e-8)
        assert fit.detuning_x - fit.detuning_xx == pytest.approx(split, rel=1e-9)
        assert fit.cavity.f_max <= f_max * (1 + 1e-9)

    def test_degenerate_split(self):
        fit = fit_cavity_to_lifetimes(50.0, 100.0, 500.0, 1000.0, 0.0, 150)
        assert fit.detuning_xx == fit.detuning_x == 0.0
        assert fit.cavity.f_max == pytest.approx(10.0)

    def test_inconsistent_targets(self):
        # X enhanced more than XX although it sits further from resonance
        with pytest.raises(NoRealSolutionError):
            fit_cavity_to_lifetimes(100.0, 50.0, 500.0, 1000.0, 1.6, 150)
        with pytest.raises(NoRealSolutionError):
            fit_cavity_to_lifetimes(50.0, 50.0, 500.0, 500.0, 0.0 + 1.0, 150)


class TestRabi:
    def test_values(self):
        assert rabi_preparation_probability(ExcitationParams(power=16, p_pi_power=16)) == pytest.approx(1.0)
        assert rabi_preparation_probability(ExcitationParams(power=0)) == 0.0
        assert rabi_preparation_probability(ExcitationParams(power=4, p_pi_power=16)) == pytest.approx(0.5)

    @given(st.floats(0, 50))
    def test_periodic_and_bounded(self, area_pi):
        p = 16 * area_pi ** 2
        p2 = 16 * (area_pi + 2) ** 2
        a = rabi_preparation_probability(ExcitationParams(power=p, p_pi_power=16))
        b = rabi_preparation_probability(ExcitationParams(power=p2, p_pi_power=16))
        assert 0 <= a <= 1
        assert a == pytest.approx(b, abs=1e-9)
        assert a == pytest.approx(oracles.rabi(p, 16), abs=1e-12)


class TestState:
    def test_bell_limit(self):
        qd = QDotParams(fss_s=0, gamma_cross=0, eps_depol=0)
        for tau in (0.0, 10.0, 1e4):
            assert rho_at_delay(qd, tau).fidelity() == pytest.approx(1.0, abs=1e-12)

    def test_phase_at_x_lifetime(self):
        rho = rho_at_delay(QDotParams(fss_s=1.2), 126.7).rho
        assert np.angle(rho[0, 3]) == pytest.approx(1.2 * 126.7 / HBAR, abs=1e-12)
        assert np.angle(rho[0, 3]) == pytest.approx(0.231, abs=5e-4)
        assert abs(rho[0, 3]) == pytest.approx(0.5, abs=1e-12)

    def test_fully_depolarized(self):
        rho = rho_at_delay(QDotParams(eps_depol=1.0), 50.0)
        assert np.allclose(rho.rho, np.eye(4) / 4, atol=1e-15)
        assert rho.fidelity() == pytest.approx(0.25)

    @given(qdots, st.floats(0, 1e5))
    def test_state_invariants(self, qd, tau):
        rho = rho_at_delay(qd, tau)  # validated on construction
        assert np.allclose(rho.rho, oracles.model_rho(tau, qd.fss_s, qd.gamma_cross, qd.eps_depol,
                                                      qd.noise_weights), atol=1e-13)

    def test_invalid_states(self):
        with pytest.raises(ValueError):
            TwoPhotonState(np.eye(4))
        with pytest.raises(ValueError):
            TwoPhotonState(np.diag([1.5, -0.5, 0, 0]).astype(complex))
        bad = np.eye(4, dtype=complex) / 4
        bad[0, 1] = 0.1j
        with pytest.raises(ValueError):
            TwoPhotonState(bad)

    def test_mean_coherence_values(self):
        assert mean_coherence(QDotParams(fss_s=0), 0.01) == pytest.approx(1.0)
        m = mean_coherence(QDotParams(fss_s=1.2), 1 / 126.7)
        assert abs(m) == pytest.approx(1 / math.sqrt(1 + 0.231 ** 2), abs=1e-3)
        assert m.real == pytest.approx(0.949, abs=1e-3)
        assert abs(mean_coherence(QDotParams(fss_s=1e9), 0.01)) < 1e-6

    @pytest.mark.parametrize("s,g,eps,w,gx", [
        (1.2, 0.0, 0.0817, (0, 0.02, 0.43, 0.55), 1 / 126.7),
        (3.0, 2.0, 0.2, (0.25, 0.25, 0.25, 0.25), 1 / 300.0),
        (0.0, 0.5, 0.0, (1, 0, 0, 0), 1 / 50.0),
        (10.0, 0.0, 0.5, (0.1, 0.2, 0.3, 0.4), 1 / 126.7),
    ])
    def test_integrated_matches_quadrature(self, s, g, eps, w, gx):
        qd = QDotParams(fss_s=s, gamma_cross=g, eps_depol=eps, noise_weights=w)
        ref = oracles.rho_by_quadrature(s, g, eps, w, gx)
        assert np.abs(rho_time_integrated(qd, gx).rho - ref).max() < 1e-6

    @given(qdots, st.floats(1e-4, 1.0))
    def test_fidelity_identity(self, qd, gx):
        rho = rho_time_integrated(qd, gx)
        v = predict_visibilities(rho)
        assert rho.fidelity() == pytest.approx((1 + v[0] + v[1] - v[2]) / 4, abs=1e-12)
        assert np.allclose(v, oracles.visibilities(rho.rho), atol=1e-12)

    def test_visibility_limits(self):
        assert np.allclose(predict_visibilities(TwoPhotonState.bell()), (1, 1, -1))
        assert np.allclose(predict_visibilities(TwoPhotonState.maximally_mixed()), (0, 0, 0))

    def test_white_noise_model(self):
        qd = QDotParams(fss_s=1.2, eps_depol=0.16)
        m = mean_coherence(qd, 1 / 126.7).real
        v = predict_visibilities(rho_time_integrated(qd, 1 / 126.7))
        assert v == pytest.approx((0.84, 0.84 * m, -0.84 * m), abs=1e-12)

    def test_invalid_qdot(self):
        with pytest.raises(ValueError):
            QDotParams(noise_weights=(0.5, 0.5, 0.5, 0.5))
        with pytest.raises(ValueError):
            QDotParams(lambda_x=889.978)
        with pytest.raises(ValueError):
            QDotParams(eps_depol=1.1)
