import numpy as np
import pytest

from sgdclt import schedules as sch
from sgdclt.errors import IncompatiblePair, InvalidRange, NonConvergent


class TestAlphaAt:
    def test_power_law_at_one(self):
        assert sch.alpha_at(sch.PowerLaw(K=0.1, a=0.25), 1) == pytest.approx(0.1)

    def test_power_law_sqrt(self):
        assert sch.alpha_at(sch.PowerLaw(K=0.1, a=0.5), 4) == pytest.approx(0.05)

    def test_power_law_log_formula(self):
        # alpha_k = C k^-a ln k for k >= 2; check against direct arithmetic
        s = sch.PowerLawLog(C=1.0, a=0.5)
        k = np.exp(2.0)  # the sequence's closed form evaluated off-grid
        assert float(s.alpha(k)) == pytest.approx(2.0 * np.exp(-1.0), rel=1e-12)
        assert sch.alpha_at(s, 1000) == pytest.approx(1000.0**-0.5 * np.log(1000.0))

    def test_power_law_log_positive_at_one(self):
        assert sch.alpha_at(sch.PowerLawLog(C=1.0, a=0.5), 1) > 0

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            sch.alpha_at(sch.PowerLaw(K=1.0, a=0.5), 0)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            sch.PowerLaw(K=-1.0, a=0.5)
        with pytest.raises(ValueError):
            sch.PowerLaw(K=1.0, a=1.5)
        with pytest.raises(ValueError):
            sch.PowerLawLog(C=1.0, a=0.0)


class TestEstimateD0:
    def test_inverse_k_gives_inverse_K(self):
        d0 = sch.estimate_d0(sch.PowerLaw(K=2.0, a=1.0), (1, 10**6))
        assert d0 == pytest.approx(0.5, abs=1e-3)

    def test_slow_power_law_gives_zero(self):
        d0 = sch.estimate_d0(sch.PowerLaw(K=0.1, a=0.25), (1, 10**6))
        assert abs(d0) < 1e-3

    def test_power_law_log_gives_zero(self):
        d0 = sch.estimate_d0(sch.PowerLawLog(C=1.0, a=0.5), (1, 10**6))
        assert abs(d0) < 1e-2

    def test_diverging_quotient_raises(self):
        # alpha_k = k^-3 has (alpha_k - alpha_{k+1})/alpha_k^2 ~ 3k^2, which
        # keeps drifting across the tail window instead of settling
        fast = sch.CustomSchedule(lambda k: np.asarray(k, float) ** -3.0)
        with pytest.raises(NonConvergent):
            sch.estimate_d0(fast, (1, 10**5))

    def test_overflowing_quotient_raises(self):
        geo = sch.CustomSchedule(lambda k: 2.0 ** (-np.asarray(k, float)))
        with pytest.raises(NonConvergent):
            sch.estimate_d0(geo, (1, 10**4))

    def test_too_short_range(self):
        with pytest.raises(ValueError):
            sch.estimate_d0(sch.PowerLaw(K=1.0, a=0.5), (1, 50))


class TestH0Slow:
    def test_sqrt_schedule_passes(self):
        ok, ks = sch.check_h0_slow(sch.PowerLaw(K=0.1, a=0.5), h0=0.1)
        assert ok and ks > 0

    def test_fast_harmonic_fails(self):
        # K=3, a=1 has d0 = 1/3 > h0 = 0.1, so the required constant decays
        ok, _ = sch.check_h0_slow(sch.PowerLaw(K=3.0, a=1.0), h0=0.1)
        assert not ok

    def test_equal_endpoints_ratio_is_one(self):
        s = sch.PowerLaw(K=0.5, a=0.75)
        assert sch.slow_condition_ratio(s, 1000, 1000, h0=2.0) == 1.0

    def test_invalid_range_raises(self):
        with pytest.raises(InvalidRange):
            sch.check_h0_slow(sch.PowerLaw(K=1.0, a=0.1), h0=5.0, horizon=10**4)

    def test_monotone_in_h0(self):
        # once satisfied at h0 it stays satisfied at every larger rate
        for s in (sch.PowerLaw(0.1, 0.5), sch.PowerLaw(2.0, 1.0), sch.PowerLaw(0.1, 0.25)):
            results = [sch.check_h0_slow(s, h0)[0] for h0 in (0.2, 0.6, 1.0, 2.0, 5.0)]
            first_pass = results.index(True) if True in results else len(results)
            assert all(results[first_pass:])

    def test_witness_grows_with_h0(self):
        s = sch.PowerLaw(K=0.1, a=0.5)
        _, ks1 = sch.check_h0_slow(s, 0.1)
        _, ks2 = sch.check_h0_slow(s, 1.0)
        assert ks2 >= ks1

    def test_bounded_modulation_shifts_rate(self):
        # alpha_k * eta_k with eta in [c1, c2] passes at h0/c1 when alpha passes at h0
        base = sch.PowerLaw(K=0.1, a=0.5)
        rng = np.random.default_rng(3)
        eta = rng.uniform(0.5, 2.0, size=10**5 + 1)
        mod = sch.CustomSchedule(
            lambda k: 0.1 * np.asarray(k, float) ** -0.5
            * eta[np.minimum(np.round(k).astype(int), 10**5)]
        )
        ok_base, _ = sch.check_h0_slow(base, h0=0.3, horizon=10**5)
        ok_mod, _ = sch.check_h0_slow(mod, h0=0.3 / 0.5, horizon=10**5)
        assert ok_base and ok_mod


class TestDivergence:
    def test_sqrt_power_law(self):
        assert sch.check_divergence(sch.PowerLaw(K=0.1, a=0.5), 10**4)

    def test_harmonic(self):
        assert sch.check_divergence(sch.PowerLaw(K=0.1, a=1.0), 10**4)

    def test_geometric_fails(self):
        geo = sch.CustomSchedule(lambda k: 2.0 ** (-np.asarray(k, float)))
        assert not sch.check_divergence(geo, 10**3)

    def test_constant_fails_decay_proxy(self):
        const = sch.CustomSchedule(lambda k: np.full_like(np.asarray(k, float), 0.1))
        assert not sch.check_divergence(const, 10**3)


class TestVanishingDamping:
    def test_paper_pair_passes(self):
        cert = sch.check_vanishing_damping(
            sch.PowerLaw(K=1.0, a=0.75), sch.PowerLawDamping(K_mu=1.0, b=0.15),
            horizon=10**5,
        )
        assert cert.divergence_ok and cert.sufficient_decrease_ok
        assert cert.Ks_witness > 0

    def test_growing_beta_raises(self):
        with pytest.raises(IncompatiblePair):
            sch.check_vanishing_damping(
                sch.PowerLaw(K=1.0, a=0.3), sch.PowerLawDamping(K_mu=1.0, b=0.5),
                horizon=10**4,
            )

    def test_constant_damping_raises(self):
        with pytest.raises(IncompatiblePair):
            sch.check_vanishing_damping(
                sch.PowerLaw(K=1.0, a=0.75), sch.ConstantDamping(0.2), horizon=10**4
            )

    def test_convergent_product_flagged(self):
        # a + b > 1: sum alpha_k mu_k converges and the decrease ratio grows
        cert = sch.check_vanishing_damping(
            sch.PowerLaw(K=1.0, a=0.9), sch.PowerLawDamping(K_mu=1.0, b=0.3),
            horizon=10**5,
        )
        assert not cert.divergence_ok
        assert not cert.sufficient_decrease_ok

    def test_inverse_partial_sum_damping(self):
        base = sch.PowerLaw(K=1.0, a=0.75)
        damp = sch.InversePartialSumDamping(K_mu=2.0, base=base)
        mu = damp.mu(np.array([1.0, 10.0, 100.0]))
        assert np.all(np.diff(mu) < 0)
        cert = sch.check_vanishing_damping(base, damp, horizon=10**5)
        assert cert.divergence_ok

    def test_certificate_invariant(self):
        cert = sch.check_vanishing_damping(
            sch.PowerLaw(K=1.0, a=0.75), sch.PowerLawDamping(K_mu=1.0, b=0.15),
            horizon=10**5,
        )
        if cert.sufficient_decrease_ok:
            assert np.isfinite(cert.d0_estimate) and cert.d0_estimate >= 0


class TestCertify:
    def test_power_law_certificate(self):
        cert = sch.certify_schedule(sch.PowerLaw(K=0.1, a=0.25), horizon=10**6)
        assert cert.divergence_ok and cert.sufficient_decrease_ok
        assert abs(cert.d0_estimate) < 1e-3

    def test_harmonic_reports_d0(self):
        cert = sch.certify_schedule(sch.PowerLaw(K=0.1, a=1.0), horizon=10**6)
        assert cert.d0_estimate == pytest.approx(10.0, rel=1e-3)

    def test_json_roundtrip_shape(self):
        cert = sch.certify_schedule(sch.PowerLaw(K=0.1, a=0.5), horizon=10**5)
        doc = cert.to_json_dict()
        assert {"d0_estimate", "h0_witness", "Ks_witness", "divergence_ok",
                "sufficient_decrease_ok", "conditions"} <= set(doc)
        assert all({"name", "value"} <= set(row) for row in doc["conditions"])
