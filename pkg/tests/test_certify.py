"""Certification engine tests.

Oracle values were frozen from mpmath (50 decimal digits) and scipy;
the end-to-end references rebuild counts and bounds from scipy primitives
on the same noise stream, independently of the engine's own chain.
"""

import math

import numpy as np
import pytest
from scipy import stats

from smoothcert.bounds import lower_conf_bound
from smoothcert.certify import (
    ABSTAIN,
    AdaptiveSchedule,
    batch_certify,
    certify,
    certify_adaptive,
    min_final_stage_size,
    sample_under_noise,
    stage_thresholds,
)
from smoothcert.classifiers import (
    LinearGaussianClassifier,
    NoiseSource,
    TabularClassifier,
)
from smoothcert.ensemble import EnsembleClassifier

# mpmath, 50 dps: 0.05**(1/1000) and 0.25 * quantile of it
P_CONST_1000 = 0.9970087504549047
R_CONST_1000 = 0.68718476574065861
# mpmath: (0.001/3)**(1/1000), the stage-1 bound for a perfect count
P_ADAPTIVE_STAGE1 = 0.99202559802684308

PHI_1 = 0.8413447460685429


def constant_clf(class_count=4, label=2, dim=3):
    return TabularClassifier.constant(class_count, label, dim)


def coin_clf(dim=3):
    w = np.zeros(dim)
    w[0] = 1.0
    return LinearGaussianClassifier(weight=w, bias=0.0)


class TestSampleUnderNoise:
    def test_counts_sum_and_accounting(self):
        clf = constant_clf()
        noise = NoiseSource(seed=1, sigma=0.25)
        sc = sample_under_noise(clf, np.zeros(3), 137, noise, 0, 1)
        assert sc.counts.sum() == 137
        assert sc.total == 137
        assert sc.model_evaluations == 137
        assert sc.consensus_hits == 0
        assert sc.counts[2] == 137

    def test_matches_unchunked_evaluation(self):
        # 40000 samples cross the internal evaluation chunk boundary twice;
        # counts must match a single direct pass over the same stream.
        w = np.array([0.6, -0.8, 0.0])
        clf = LinearGaussianClassifier(weight=w, bias=0.1)
        noise = NoiseSource(seed=17, sigma=0.5)
        x = np.array([0.2, -0.1, 0.4])
        sc = sample_under_noise(clf, x, 40000, noise, 5, 2)
        eps = noise.perturbations(5, 2, 0, 40000, 3)
        wins = ((x + eps) @ w + 0.1 > 0).sum()
        assert sc.counts[1] == wins
        assert sc.counts[0] == 40000 - wins

    def test_rejects_zero_samples(self):
        clf = constant_clf()
        noise = NoiseSource(seed=1, sigma=0.25)
        with pytest.raises(ValueError):
            sample_under_noise(clf, np.zeros(3), 0, noise, 0, 0)


class TestCertify:
    def test_constant_classifier_closed_form(self):
        # A unanimous count gives p_lower = alpha**(1/n) exactly.
        clf = constant_clf()
        noise = NoiseSource(seed=5, sigma=0.25)
        res = certify(clf, np.zeros(3), 50, 1000, 0.05, noise)
        assert res.predicted_class == 2
        assert res.p_lower == pytest.approx(P_CONST_1000, abs=5e-12)
        assert res.radius == pytest.approx(R_CONST_1000, abs=1e-9)
        assert res.samples_used == 1050
        assert res.models_evaluated == 1050
        assert res.stage_returned is None
        assert not res.abstained

    def test_fair_coin_abstains(self):
        clf = coin_clf()
        noise = NoiseSource(seed=11, sigma=0.25)
        res = certify(clf, np.zeros(3), 100, 1000, 0.05, noise)
        assert res.predicted_class == ABSTAIN
        assert res.radius == 0.0
        assert res.p_lower < 0.5
        assert res.samples_used == 1100

    def test_linear_oracle_against_scipy_reference(self):
        # Rebuild both sampling stages and the bound from scipy primitives.
        sigma = 0.25
        w = np.array([0.6, -0.8, 0.0])
        bias = sigma * stats.norm.ppf(0.9)
        clf = LinearGaussianClassifier(weight=w, bias=bias)
        x = np.zeros(3)
        noise = NoiseSource(seed=7, sigma=sigma)
        n0, n, alpha, sid = 100, 2000, 0.01, 3

        res = certify(clf, x, n0, n, alpha, noise, sample_id=sid)

        eps0 = noise.perturbations(sid, 0, 0, n0, 3)
        ones0 = int(((x + eps0) @ w + bias > 0).sum())
        counts0 = np.array([n0 - ones0, ones0])
        candidate = int(np.argmax(counts0))
        eps1 = noise.perturbations(sid, 1, 0, n, 3)
        ones1 = int(((x + eps1) @ w + bias > 0).sum())
        k = ones1 if candidate == 1 else n - ones1
        p_ref = float(stats.beta.ppf(alpha, k, n - k + 1)) if k > 0 else 0.0

        assert res.predicted_class == candidate == 1
        assert res.p_lower == pytest.approx(p_ref, abs=5e-12)
        assert p_ref > 0.5
        assert res.radius == pytest.approx(sigma * stats.norm.ppf(p_ref), abs=1e-9)
        assert res.samples_used == n0 + n
        assert res.models_evaluated == n0 + n

    def test_selection_counts_never_feed_the_bound(self):
        # With a near-coin classifier the selection stage may be lopsided;
        # p_lower must still come from the estimation stage count alone.
        clf = coin_clf()
        noise = NoiseSource(seed=19, sigma=0.25)
        res = certify(clf, np.zeros(3), 100, 400, 0.05, noise, sample_id=2)
        eps1 = noise.perturbations(2, 1, 0, 400, 3)
        ones = int((eps1[:, 0] > 0).sum())
        k = ones if res.predicted_class == 1 else 400 - ones
        if res.predicted_class == ABSTAIN:
            eps0 = noise.perturbations(2, 0, 0, 100, 3)
            sel = int((eps0[:, 0] > 0).sum())
            cand = 1 if sel > 100 - sel else 0
            k = ones if cand == 1 else 400 - ones
        assert res.p_lower == lower_conf_bound(k, 400, 0.95)

    def test_radius_grows_with_n_at_unanimous_counts(self):
        clf = constant_clf()
        noise = NoiseSource(seed=5, sigma=0.25)
        radii = [
            certify(clf, np.zeros(3), 10, n, 0.05, noise).radius
            for n in (100, 200, 400)
        ]
        assert radii[0] < radii[1] < radii[2]

    def test_rerun_is_bit_identical(self):
        clf = coin_clf()
        noise = NoiseSource(seed=13, sigma=0.25)
        a = certify(clf, np.zeros(3), 100, 500, 0.05, noise)
        b = certify(clf, np.zeros(3), 100, 500, 0.05, noise)
        assert a == b

    def test_rejects_bad_parameters(self):
        clf = constant_clf()
        noise = NoiseSource(seed=1, sigma=0.25)
        with pytest.raises(ValueError):
            certify(clf, np.zeros(3), 0, 100, 0.05, noise)
        with pytest.raises(ValueError):
            certify(clf, np.zeros(3), 10, 0, 0.05, noise)
        with pytest.raises(ValueError):
            certify(clf, np.zeros(3), 10, 100, 0.0, noise)
        with pytest.raises(ValueError):
            certify(clf, np.zeros(3), 10, 100, 1.0, noise)


class TestAdaptiveSchedule:
    def test_validates_fields(self):
        ok = dict(
            stage_sizes=(100, 200), alpha=0.01, beta=0.01, target_radius=0.5, sigma=0.5
        )
        AdaptiveSchedule(**ok)
        for bad in (
            dict(ok, stage_sizes=()),
            dict(ok, stage_sizes=(200, 100)),
            dict(ok, stage_sizes=(100, 100)),
            dict(ok, stage_sizes=(0, 100)),
            dict(ok, alpha=0.0),
            dict(ok, alpha=1.0),
            dict(ok, beta=0.0),
            dict(ok, target_radius=0.0),
            dict(ok, target_radius=-1.0),
            dict(ok, sigma=0.0),
            dict(ok, n0=0),
        ):
            with pytest.raises(ValueError):
                AdaptiveSchedule(**bad)

    def test_stage_count(self):
        sched = AdaptiveSchedule(
            stage_sizes=(10, 20, 40), alpha=0.1, beta=0.1, target_radius=0.1, sigma=0.5
        )
        assert sched.stages == 3
        assert sched.stage_sizes == (10, 20, 40)


FIG3 = AdaptiveSchedule(
    stage_sizes=(1000, 10000, 125000),
    alpha=0.001,
    beta=0.0001,
    target_radius=0.25,
    sigma=0.25,
)


class TestCertifyAdaptive:
    def test_constant_certifies_at_stage_one(self):
        clf = constant_clf()
        noise = NoiseSource(seed=5, sigma=0.25)
        res = certify_adaptive(clf, np.zeros(3), FIG3, noise)
        assert res.predicted_class == 2
        assert res.radius == 0.25  # the target, exactly
        assert res.stage_returned == 1
        assert res.samples_used == 100 + 1000
        assert res.p_lower == pytest.approx(P_ADAPTIVE_STAGE1, abs=5e-12)

    def test_fair_coin_aborts_at_stage_one(self):
        sched = AdaptiveSchedule(
            stage_sizes=(1000, 10000),
            alpha=0.001,
            beta=0.0001,
            target_radius=0.25,
            sigma=0.25,
        )
        clf = coin_clf()
        noise = NoiseSource(seed=21, sigma=0.25)
        res = certify_adaptive(clf, np.zeros(3), sched, noise)
        assert res.predicted_class == ABSTAIN
        assert res.radius == 0.0
        assert res.stage_returned == 1
        assert res.samples_used == 100 + 1000

    def test_matches_scipy_stage_replay(self):
        # Replay the staged protocol with scipy bounds on the same stream.
        sched = AdaptiveSchedule(
            stage_sizes=(500, 1000),
            alpha=0.001,
            beta=0.0001,
            target_radius=0.25,
            sigma=0.25,
        )
        w = np.array([1.0, 0.0, 0.0])
        clf = LinearGaussianClassifier(weight=w, bias=0.25)  # true p = Phi(1)
        x = np.zeros(3)
        noise = NoiseSource(seed=31, sigma=0.25)
        res = certify_adaptive(clf, x, sched, noise)

        s = 2
        target_p = stats.norm.cdf(sched.target_radius / sched.sigma)
        eps = noise.perturbations(0, 0, 0, sched.n0, 3)
        ones = int(((x + eps) @ w + 0.25 > 0).sum())
        cand = 1 if ones > sched.n0 - ones else 0
        expected = None
        for i, n_i in enumerate(sched.stage_sizes, start=1):
            eps = noise.perturbations(0, i, 0, n_i, 3)
            ones = int(((x + eps) @ w + 0.25 > 0).sum())
            k = ones if cand == 1 else n_i - ones
            p_lo = float(stats.beta.ppf(sched.alpha / s, k, n_i - k + 1)) if k else 0.0
            if p_lo >= target_p:
                expected = (cand, i, p_lo)
                break
            if i < s:
                p_up = (
                    float(stats.beta.ppf(1 - sched.beta / (s - 1), k + 1, n_i - k))
                    if k < n_i
                    else 1.0
                )
                if p_up < target_p:
                    expected = (ABSTAIN, i, p_lo)
                    break
        else:
            expected = (ABSTAIN, s, p_lo)

        assert (res.predicted_class, res.stage_returned) == expected[:2]
        assert res.p_lower == pytest.approx(expected[2], abs=5e-12)
        # this seed survives both stages without certifying
        assert res.stage_returned == 2
        assert res.predicted_class == ABSTAIN
        assert res.samples_used == 100 + 500 + 1000

    def test_single_stage_never_aborts_early(self):
        sched = AdaptiveSchedule(
            stage_sizes=(1000,),
            alpha=0.05,
            beta=0.0001,
            target_radius=0.25,
            sigma=0.25,
        )
        clf = coin_clf()
        noise = NoiseSource(seed=2, sigma=0.25)
        res = certify_adaptive(clf, np.zeros(3), sched, noise)
        assert res.predicted_class == ABSTAIN
        assert res.stage_returned == 1
        assert res.samples_used == 100 + 1000

    def test_single_stage_uses_full_alpha(self):
        sched = AdaptiveSchedule(
            stage_sizes=(1000,),
            alpha=0.05,
            beta=0.5,
            target_radius=0.25,
            sigma=0.25,
        )
        clf = constant_clf()
        noise = NoiseSource(seed=2, sigma=0.25)
        res = certify_adaptive(clf, np.zeros(3), sched, noise)
        assert res.predicted_class == 2
        assert res.p_lower == pytest.approx(P_CONST_1000, abs=5e-12)

    def test_sigma_mismatch_rejected(self):
        clf = constant_clf()
        noise = NoiseSource(seed=2, sigma=0.5)
        with pytest.raises(ValueError):
            certify_adaptive(clf, np.zeros(3), FIG3, noise)

    def test_rerun_is_bit_identical(self):
        clf = coin_clf()
        noise = NoiseSource(seed=21, sigma=0.25)
        sched = AdaptiveSchedule(
            stage_sizes=(200, 400),
            alpha=0.01,
            beta=0.001,
            target_radius=0.25,
            sigma=0.25,
        )
        assert certify_adaptive(clf, np.zeros(3), sched, noise) == certify_adaptive(
            clf, np.zeros(3), sched, noise
        )


class TestStageThresholds:
    def test_reference_schedule_counts(self):
        rows = stage_thresholds(FIG3)
        assert [(r.certify_count, r.abort_count) for r in rows] == [
            (880, 795),
            (8538, 8270),
            (105607, None),
        ]
        assert [r.samples for r in rows] == [1000, 10000, 125000]

    def test_exhaustive_small_stage(self):
        # n_1 = 10 at alpha/s = 0.05: enumerate all counts against scipy.
        sched = AdaptiveSchedule(
            stage_sizes=(10, 20),
            alpha=0.1,
            beta=0.1,
            target_radius=0.25,
            sigma=0.25,
        )
        target_p = stats.norm.cdf(1.0)
        rows = stage_thresholds(sched)

        def scipy_lower(k, n, conf):
            return float(stats.beta.ppf(1 - conf, k, n - k + 1)) if k else 0.0

        def scipy_upper(k, n, conf):
            return float(stats.beta.ppf(conf, k + 1, n - k)) if k < n else 1.0

        for row, (n_i, last) in zip(rows, [(10, False), (20, True)]):
            want_cert = next(
                (c for c in range(n_i + 1) if scipy_lower(c, n_i, 0.95) >= target_p),
                None,
            )
            assert row.certify_count == want_cert
            if last:
                assert row.abort_count is None
            else:
                want_abort = next(
                    (c for c in range(n_i + 1) if scipy_upper(c, n_i, 0.9) >= target_p),
                    None,
                )
                assert row.abort_count == want_abort

    def test_never_certifiable_stage(self):
        # Target success probability so close to 1 that even a perfect
        # count cannot reach it.
        sched = AdaptiveSchedule(
            stage_sizes=(10, 20),
            alpha=0.001,
            beta=0.0001,
            target_radius=3.0,
            sigma=0.25,
        )
        rows = stage_thresholds(sched)
        assert rows[0].certify_count is None
        assert rows[1].certify_count is None

    def test_vanishing_target_approaches_majority_test(self):
        sched = AdaptiveSchedule(
            stage_sizes=(50,),
            alpha=0.05,
            beta=0.5,
            target_radius=1e-12,
            sigma=1.0,
        )
        rows = stage_thresholds(sched)
        want = next(
            c
            for c in range(51)
            if (float(stats.beta.ppf(0.05, c, 51 - c)) if c else 0.0) > 0.5
        )
        assert rows[0].certify_count == want

    def test_consistent_with_adaptive_decisions(self):
        # Feeding a count at/below the thresholds must reproduce the
        # stage-one decision of the live protocol.
        rows = stage_thresholds(FIG3)
        n1 = FIG3.stage_sizes[0]
        conf = 1 - FIG3.alpha / 3
        target_p = stats.norm.cdf(1.0)
        c = rows[0].certify_count
        assert lower_conf_bound(c, n1, conf) >= target_p
        assert lower_conf_bound(c - 1, n1, conf) < target_p


class TestMinFinalStageSize:
    def test_single_stage_is_identity(self):
        assert min_final_stage_size(100000, 0.001, 1) == 100000
        assert min_final_stage_size(17, 0.3, 1) == 17

    def test_reference_values(self):
        # mpmath, 50 dps: raw 115904.04182398875 and 120068.66637759875
        assert min_final_stage_size(100000, 0.001, 3) == 115905
        assert min_final_stage_size(100000, 0.001, 4) == 120069
        assert min_final_stage_size(123, 0.05, 2) == 152

    def test_matches_direct_formula(self):
        for n in (10, 1000, 100000):
            for alpha in (0.05, 0.001):
                for s in (1, 2, 3, 5, 8):
                    want = math.ceil(n * (1 - math.log(s) / math.log(alpha)))
                    assert min_final_stage_size(n, alpha, s) == want

    def test_grows_with_stage_count(self):
        sizes = [min_final_stage_size(100000, 0.001, s) for s in range(1, 8)]
        assert sizes == sorted(sizes)
        assert all(v >= 100000 for v in sizes)

    def test_preserves_reachable_p(self):
        # The final stage at confidence 1-alpha/s reaches the one-shot
        # ceiling: (alpha/s)**(1/n_s) >= alpha**(1/n).
        for s in (2, 3, 4, 6):
            n, alpha = 50000, 0.01
            n_s = min_final_stage_size(n, alpha, s)
            assert (alpha / s) ** (1.0 / n_s) >= alpha ** (1.0 / n)

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            min_final_stage_size(0, 0.001, 3)
        with pytest.raises(ValueError):
            min_final_stage_size(100, 0.0, 3)
        with pytest.raises(ValueError):
            min_final_stage_size(100, 1.0, 3)
        with pytest.raises(ValueError):
            min_final_stage_size(100, 0.001, 0)


class TestBatchCertify:
    def test_single_certified_input_definitions(self):
        clf = TabularClassifier.constant(3, 1, 2)
        noise = NoiseSource(seed=9, sigma=0.33)
        rep = batch_certify(
            clf,
            np.zeros((1, 2)),
            [1],
            noise,
            n0=100,
            n=1000,
            alpha=0.001,
            radius_grid=(0.75, 1.0),
        )
        res = rep.results[0]
        assert 0.75 < res.radius < 1.0
        assert rep.acr == res.radius
        assert rep.certified_accuracy == ((0.75, 1.0), (1.0, 0.0))
        assert rep.sample_rf == pytest.approx(100100 / 1100)
        assert rep.kcr == 0.0
        assert rep.asr is None

    def test_wrong_label_scores_zero(self):
        clf = TabularClassifier.constant(3, 1, 2)
        noise = NoiseSource(seed=9, sigma=0.33)
        rep = batch_certify(
            clf, np.zeros((1, 2)), [0], noise, n=1000, radius_grid=(0.75, 1.0)
        )
        assert rep.acr == 0.0
        assert rep.certified_accuracy == ((0.75, 0.0), (1.0, 0.0))

    def test_all_abstain_population(self):
        clf = coin_clf(dim=2)
        noise = NoiseSource(seed=3, sigma=0.25)
        rep = batch_certify(clf, np.zeros((3, 2)), [1, 1, 0], noise, n0=50, n=500)
        assert rep.acr == 0.0
        assert all(v == 0.0 for _, v in rep.certified_accuracy)
        assert rep.mean_samples == 550.0
        assert all(r.predicted_class == ABSTAIN for r in rep.results)

    def test_per_input_streams_match_manual_calls(self):
        clf = TabularClassifier.constant(3, 1, 2)
        noise = NoiseSource(seed=6, sigma=0.25)
        xs = np.array([[0.0, 0.0], [1.0, -1.0]])
        rep = batch_certify(clf, xs, [1, 1], noise, n0=20, n=200, alpha=0.05)
        for i, x in enumerate(xs):
            assert rep.results[i] == certify(
                clf, x, 20, 200, 0.05, noise, sample_id=i
            )

    def test_worker_count_does_not_change_results(self):
        clf = TabularClassifier.constant(3, 1, 2)
        xs = np.arange(8, dtype=float).reshape(4, 2) * 0.1
        noise = NoiseSource(seed=3, sigma=0.25)
        one = batch_certify(clf, xs, [1] * 4, noise, n0=20, n=200, alpha=0.05)
        two = batch_certify(
            clf, xs, [1] * 4, noise, n0=20, n=200, alpha=0.05, workers=2
        )
        assert one.results == two.results
        assert one.acr == two.acr
        assert one.certified_accuracy == two.certified_accuracy

    def test_adaptive_metrics(self):
        sched = AdaptiveSchedule(
            stage_sizes=(1000, 10000),
            alpha=0.001,
            beta=0.0001,
            target_radius=0.25,
            sigma=0.25,
            n0=100,
        )
        clf = TabularClassifier.constant(3, 1, 2)
        noise = NoiseSource(seed=4, sigma=0.25)
        rep = batch_certify(clf, np.zeros((2, 2)), [1, 1], noise, schedule=sched)
        assert rep.asr == (1.0, 0.0)
        assert rep.mean_samples == 1100.0
        assert rep.sample_rf == pytest.approx(100100 / 1100)
        assert all(r.radius == 0.25 for r in rep.results)
        assert rep.acr == 0.25

    def test_consensus_accounting_flows_into_kcr(self):
        w = np.array([1.0, 0.0])
        member = LinearGaussianClassifier(weight=w, bias=0.5)
        ens = EnsembleClassifier(
            members=(member, member, member), mode="soft", consensus_k=2
        )
        noise = NoiseSource(seed=8, sigma=0.25)
        rep = batch_certify(ens, np.zeros((1, 2)), [1], noise, n0=100, n=1000)
        assert rep.kcr == 1.0
        assert rep.results[0].models_evaluated == 2 * 1100
        assert rep.time_rf == pytest.approx((100100 * 3) / (2 * 1100))

    def test_rejects_shape_mismatches(self):
        clf = TabularClassifier.constant(3, 1, 2)
        noise = NoiseSource(seed=3, sigma=0.25)
        with pytest.raises(ValueError):
            batch_certify(clf, np.zeros((2, 2)), [1], noise, n=100)
        with pytest.raises(ValueError):
            batch_certify(clf, np.zeros(4), [1], noise, n=100)
        with pytest.raises(ValueError):
            batch_certify(clf, np.zeros((2, 2)), [1, 1], noise, n=100, ids=["a"])
        with pytest.raises(ValueError):
            batch_certify(clf, np.zeros((2, 2)), [1, 1], noise, n=100, workers=0)
