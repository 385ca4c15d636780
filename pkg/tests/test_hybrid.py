import math

import numpy as np
import pytest

from gpyield.gpr import GaussianProcessSurrogate
from gpyield.hybrid import (
    ClassificationOutcome,
    HybridSettings,
    PerformanceClause,
    PerformanceSpec,
    SurrogateBank,
    classify,
    egl_criterion,
    egl_scores,
    hybrid_criterion,
    hybrid_scores,
)

LE24 = PerformanceSpec(clauses=(PerformanceClause(threshold_db=-24.0, direction="le"),))
GAMMA2 = HybridSettings(safety_factor=2.0)


class StubChannel:
    """Constant-prediction channel standing in for a fitted surrogate."""

    def __init__(self, mean, std=0.0):
        self.mean = float(mean)
        self.std = float(std)

    def predict_one(self, p):
        return self.mean, self.std

    def predict(self, X, return_std=False):
        n = np.atleast_2d(X).shape[0]
        means = np.full(n, self.mean)
        if return_std:
            return means, np.full(n, self.std)
        return means


def bank_from_db_bands(bands, gamma=2.0):
    """Per-frequency stub pairs whose dB band is exactly [lo, hi] at gamma."""
    real, imag = [], []
    for lo_db, hi_db in bands:
        lo = 10.0 ** (lo_db / 20.0)
        hi = 10.0 ** (hi_db / 20.0)
        real.append(StubChannel(mean=(lo + hi) / 2.0, std=(hi - lo) / (2.0 * gamma)))
        imag.append(StubChannel(mean=0.0, std=0.0))
    return SurrogateBank(real=real, imag=imag)


def forbid_hf(p, j):
    raise AssertionError("the oracle must not be called for band-decided points")


P = np.zeros(4)


class TestSpecTypes:
    def test_clause_direction_validation(self):
        with pytest.raises(ValueError, match="direction"):
            PerformanceClause(threshold_db=-24.0, direction="lt")

    def test_clauses_must_cover_grid(self):
        spec = PerformanceSpec(
            clauses=(PerformanceClause(threshold_db=-20.0, frequencies=(0, 1)),)
        )
        with pytest.raises(ValueError, match="not covered"):
            spec.per_frequency(4)

    def test_clauses_must_not_overlap(self):
        spec = PerformanceSpec(
            clauses=(
                PerformanceClause(threshold_db=-20.0, frequencies=(0, 1)),
                PerformanceClause(threshold_db=-1.0, direction="ge", frequencies=(1,)),
            )
        )
        with pytest.raises(ValueError, match="more than one clause"):
            spec.per_frequency(2)

    def test_two_band_filter_style_spec_resolves(self):
        spec = PerformanceSpec(
            clauses=(
                PerformanceClause(threshold_db=-1.0, direction="ge", frequencies=(0, 1, 2)),
                PerformanceClause(threshold_db=-20.0, direction="le", frequencies=(3, 4)),
            )
        )
        rules = spec.per_frequency(5)
        assert rules[0] == (-1.0, "ge")
        assert rules[4] == (-20.0, "le")

    def test_outcome_invariants(self):
        with pytest.raises(ValueError, match="stop frequency"):
            ClassificationOutcome(verdict="rejected")
        with pytest.raises(ValueError, match="keyed exactly"):
            ClassificationOutcome(verdict="accepted", critical_frequencies=(1,))

    def test_settings_gamma_positive(self):
        with pytest.raises(ValueError, match="safety_factor"):
            HybridSettings(safety_factor=0.0)


class TestClassify:
    def test_band_inside_spec_accepts_without_oracle(self):
        bank = bank_from_db_bands([(-32.0, -28.0)] * 5)
        outcome = classify(P, bank, LE24, GAMMA2, forbid_hf)
        assert outcome.accepted
        assert outcome.critical_frequencies == ()
        assert outcome.stop_frequency is None

    def test_band_outside_spec_rejects_at_first_frequency(self):
        bank = bank_from_db_bands([(-22.0, -18.0)] + [(-32.0, -28.0)] * 4)
        outcome = classify(P, bank, LE24, GAMMA2, forbid_hf)
        assert outcome.verdict == "rejected"
        assert outcome.stop_frequency == 0
        assert outcome.critical_frequencies == ()

    def test_straddling_band_escalates_and_obeys_oracle(self):
        bank = bank_from_db_bands([(-26.5, -22.5)] + [(-32.0, -28.0)] * 2)
        calls = []

        def hf(p, j):
            calls.append(j)
            return complex(10.0 ** (-24.5 / 20.0))  # -24.5 dB: satisfies the clause

        outcome = classify(P, bank, LE24, GAMMA2, hf)
        assert outcome.accepted
        assert calls == [0]
        assert outcome.critical_frequencies == (0,)
        assert -24.5 == pytest.approx(
            20 * math.log10(abs(outcome.hf_values[0])), rel=1e-12
        )

    def test_straddling_band_with_failing_oracle_rejects(self):
        bank = bank_from_db_bands([(-26.5, -22.5)] + [(-32.0, -28.0)] * 2)
        outcome = classify(P, bank, LE24, GAMMA2, lambda p, j: 10.0 ** (-23.0 / 20.0))
        assert outcome.verdict == "rejected"
        assert outcome.stop_frequency == 0

    def test_short_circuit_skips_remaining_frequencies(self):
        bands = [(-32.0, -28.0), (-22.0, -18.0), (-26.5, -22.5)]
        bank = bank_from_db_bands(bands)
        outcome = classify(P, bank, LE24, GAMMA2, forbid_hf)
        assert outcome.verdict == "rejected"
        assert outcome.stop_frequency == 1
        # frequency 2 never inspected: no oracle call happened (forbid_hf)

    def test_ge_clause_mirrors(self):
        spec = PerformanceSpec(
            clauses=(PerformanceClause(threshold_db=-1.0, direction="ge"),)
        )
        passing = bank_from_db_bands([(-0.8, -0.2)])
        failing = bank_from_db_bands([(-3.0, -2.0)])
        critical = bank_from_db_bands([(-1.5, -0.5)])
        assert classify(P, passing, spec, GAMMA2, forbid_hf).accepted
        assert classify(P, failing, spec, GAMMA2, forbid_hf).verdict == "rejected"
        out = classify(P, critical, spec, GAMMA2, lambda p, j: 10 ** (-0.5 / 20))
        assert out.critical_frequencies == (0,)
        assert out.accepted

    def test_zero_std_band_is_a_point(self):
        bank = SurrogateBank(
            real=[StubChannel(mean=10 ** (-30.0 / 20.0), std=0.0)],
            imag=[StubChannel(mean=0.0, std=0.0)],
        )
        outcome = classify(P, bank, LE24, GAMMA2, forbid_hf)
        assert outcome.accepted

    def test_disabling_short_circuit_never_changes_verdict(self, rng):
        for _ in range(50):
            n_freq = int(rng.integers(1, 6))
            bands = []
            for _ in range(n_freq):
                lo = rng.uniform(-40, -10)
                bands.append((lo, lo + rng.uniform(0.5, 8.0)))
            bank = bank_from_db_bands(bands)
            hf = lambda p, j: complex(10 ** (rng.uniform(-30, -18) / 20.0))
            rng_state = rng.bit_generator.state
            fast = classify(P, bank, LE24, GAMMA2, hf)
            rng.bit_generator.state = rng_state  # identical oracle draws
            slow = classify(P, bank, LE24, GAMMA2, hf, short_circuit=False)
            assert fast.verdict == slow.verdict
            assert fast.stop_frequency == slow.stop_frequency


class TestCriteria:
    def test_egl_example_two_sigma_away(self):
        # dB mean -20 with a dB-space std of 2 against c = -24 scores 2.0.
        m_lin = 10.0 ** (-20.0 / 20.0)
        s_lin = 2.0 * math.log(10.0) / 20.0 * m_lin
        bank = SurrogateBank(
            real=[StubChannel(mean=m_lin, std=s_lin)], imag=[StubChannel(0.0)]
        )
        assert egl_criterion(P, bank, LE24) == pytest.approx(2.0, rel=1e-9)

    def test_egl_on_threshold_is_most_urgent(self):
        m_lin = 10.0 ** (-24.0 / 20.0)
        bank = SurrogateBank(
            real=[StubChannel(mean=m_lin, std=0.01 * m_lin)], imag=[StubChannel(0.0)]
        )
        assert egl_criterion(P, bank, LE24) == pytest.approx(0.0, abs=1e-9)

    def test_egl_zero_std_contributes_infinity(self):
        m_far = 10.0 ** (-30.0 / 20.0)
        m_near = 10.0 ** (-23.0 / 20.0)
        s_near = math.log(10.0) / 20.0 * m_near  # 1 dB
        bank = SurrogateBank(
            real=[StubChannel(m_far, 0.0), StubChannel(m_near, s_near)],
            imag=[StubChannel(0.0), StubChannel(0.0)],
        )
        # min over frequencies must come from the finite-sigma one: |(-23)-(-24)|/1.
        assert egl_criterion(P, bank, LE24) == pytest.approx(1.0, rel=1e-9)

    def test_hybrid_example_straddling(self):
        bank = bank_from_db_bands([(-26.5, -22.5)])
        assert hybrid_criterion(P, bank, LE24, GAMMA2) == pytest.approx(3.75, rel=1e-9)

    def test_hybrid_example_noncritical_is_negative(self):
        bank = bank_from_db_bands([(-32.0, -28.0)])
        assert hybrid_criterion(P, bank, LE24, GAMMA2) == pytest.approx(-32.0, rel=1e-9)

    def test_sign_consistency_with_classify_on_fitted_models(self, rng):
        # Real surrogates fitted on waveguide-like data: the criterion is
        # positive exactly when classification escalates to the oracle.
        from gpyield.oracle import FrequencyGrid, WaveguideConfig, waveguide_s11

        grid = FrequencyGrid.equidistant((2 * math.pi * 6.5e9, 2 * math.pi * 7.5e9), 3)
        config = WaveguideConfig()
        mean = np.array([10.36, 4.76, 0.58, 0.64])
        half = np.array([3.0, 3.0, 0.3, 0.3])
        train = mean + rng.uniform(-1, 1, size=(8, 4)) * half
        S = waveguide_s11(config, train, grid.points)
        real = [GaussianProcessSurrogate().fit(train, S[:, j].real) for j in range(3)]
        imag = [GaussianProcessSurrogate().fit(train, S[:, j].imag) for j in range(3)]
        bank = SurrogateBank(real=real, imag=imag)
        mismatches = 0
        for _ in range(200):
            p = mean + rng.uniform(-1, 1, size=4) * half
            calls = []

            def hf(q, j):
                calls.append(j)
                return complex(waveguide_s11(config, q, grid.points[j : j + 1])[0, 0])

            classify(p, bank, LE24, GAMMA2, hf, short_circuit=False)
            score = hybrid_criterion(p, bank, LE24, GAMMA2)
            if (score > 0) != bool(calls):
                mismatches += 1
        assert mismatches == 0

    def test_safety_monotonicity(self, rng):
        # Widening the buffer can only turn decided points critical, never
        # the other way around.
        for _ in range(100):
            lo = rng.uniform(-35, -15)
            bank1 = bank_from_db_bands([(lo, lo + rng.uniform(0.1, 6))], gamma=1.0)
            crit_small = hybrid_scores(P[np.newaxis], bank1, LE24, HybridSettings(1.0))[0]
            crit_large = hybrid_scores(P[np.newaxis], bank1, LE24, HybridSettings(3.0))[0]
            if crit_small > 0:
                assert crit_large > 0

    def test_vectorized_scores_match_scalar(self, rng):
        bands = [(-30.0, -27.0), (-26.0, -22.0)]
        bank = bank_from_db_bands(bands)
        pts = rng.normal(size=(7, 4))
        egl_vec = egl_scores(pts, bank, LE24)
        hyb_vec = hybrid_scores(pts, bank, LE24, GAMMA2)
        for i, p in enumerate(pts):
            assert egl_vec[i] == pytest.approx(egl_criterion(p, bank, LE24), rel=1e-12)
            assert hyb_vec[i] == pytest.approx(
                hybrid_criterion(p, bank, LE24, GAMMA2), rel=1e-12
            )


class TestConservativeExactness:
    def test_truth_inside_band_implies_mc_agreement(self, rng):
        # Bands built to contain the truth by construction: the hybrid
        # decision must agree with direct threshold checks everywhere.
        for _ in range(100):
            n_freq = int(rng.integers(1, 5))
            truth_db = rng.uniform(-32, -16, size=n_freq)
            bands = []
            for t in truth_db:
                below = rng.uniform(0.1, 4.0)
                above = rng.uniform(0.1, 4.0)
                bands.append((t - below, t + above))
            bank = bank_from_db_bands(bands)
            truth_lin = 10.0 ** (truth_db / 20.0)
            outcome = classify(
                P, bank, LE24, GAMMA2, lambda p, j: complex(truth_lin[j])
            )
            direct = bool(np.all(truth_db <= -24.0))
            assert outcome.accepted == direct
