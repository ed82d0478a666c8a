"""Constellation constructors, transforms and their invariants.

Frozen regression constants in this file were computed by exhaustive
enumeration over the integer coordinate grids before the implementation
existed (see the brute-force oracles at the bottom), then pinned:

    DISTINCT_ENERGIES_PAM16_4D = 94   # |{a^2+b^2+c^2+d^2 : a..d odd <= 15}|
    DISTINCT_ENERGIES_QAM64SQ  = 21   # pairwise sums of the nine 64QAM 2D energies
    MU4_QAM64SQ                = 25/21
"""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import shapeopt as so
from shapeopt.constellation import PMF_ATOL

DISTINCT_ENERGIES_PAM16_4D = 94
DISTINCT_ENERGIES_QAM64SQ = 21
MU4_QAM64SQ = 25.0 / 21.0

PAPR_PAM16_4D = 2.6470588235294117  # 900/340, by direct evaluation
PAPR_MD_BALL_8192 = 1.5097813578826238  # direct evaluation of the pruned set


def brute_force_distinct_4d_energies(levels) -> int:
    energies = {
        a * a + b * b + c * c + d * d
        for a, b, c, d in itertools.product(levels, repeat=4)
    }
    return len(energies)


def test_frozen_energy_counts_match_brute_force():
    assert brute_force_distinct_4d_energies(range(1, 16, 2)) == DISTINCT_ENERGIES_PAM16_4D
    assert brute_force_distinct_4d_energies(range(1, 8, 2)) == DISTINCT_ENERGIES_QAM64SQ


class TestBuildProductQam:
    def test_qam64_point_count_and_pmf(self, qam64sq):
        assert qam64sq.n_points == 4096
        assert np.allclose(qam64sq.pmf, 1.0 / 4096)

    def test_qpsk_single_amplitude_class(self, qpsk_sq):
        assert qpsk_sq.n_points == 16
        assert so.amplitude_classes(qpsk_sq).n_classes == 1

    def test_qam16_unit_mean_energy(self, qam16sq):
        assert qam16sq.n_points == 256
        assert abs(qam16sq.mean_energy() - 1.0) < 1e-12

    @pytest.mark.parametrize("bad", [2, 3, 8, 9, 15, 0, -4])
    def test_rejects_bad_orders(self, bad):
        with pytest.raises(ValueError):
            so.build_product_qam(bad)

    def test_deterministic_order(self):
        a = so.build_product_qam(16)
        b = so.build_product_qam(16)
        assert np.array_equal(a.points, b.points)


class TestPam16:
    def test_point_count(self, pam16_4d):
        assert pam16_4d.n_points == 16**4

    def test_equals_qam256_product_as_set(self, pam16_4d):
        q = so.build_product_qam(256)
        a = np.array(sorted(map(tuple, pam16_4d.points.round(12))))
        b = np.array(sorted(map(tuple, q.points.round(12))))
        assert np.allclose(a, b, atol=1e-12)

    def test_distinct_energy_count(self, pam16_4d):
        assert so.amplitude_classes(pam16_4d).n_classes == DISTINCT_ENERGIES_PAM16_4D


class TestAmplitudeClasses:
    def test_qam64_class_count(self, qam64sq):
        assert so.amplitude_classes(qam64sq).n_classes == DISTINCT_ENERGIES_QAM64SQ

    def test_partition_and_probability(self, qam64sq):
        acs = so.amplitude_classes(qam64sq)
        seen = np.concatenate([c.member_indices for c in acs.classes])
        assert np.array_equal(np.sort(seen), np.arange(qam64sq.n_points))
        assert abs(sum(c.class_probability for c in acs.classes) - 1.0) < PMF_ATOL

    def test_sorted_ascending_with_agreeing_energies(self, qam16sq):
        acs = so.amplitude_classes(qam16sq)
        e = qam16sq.energies()
        last = -np.inf
        for c in acs.classes:
            assert c.energy > last
            member_e = e[c.member_indices]
            assert np.all(np.abs(member_e - c.energy) <= 1e-9 * c.energy)
            last = c.energy


class TestMbPmf:
    def test_lambda_zero_is_uniform(self, qam16sq):
        c = so.mb_pmf(qam16sq, 0.0)
        assert np.allclose(c.pmf, 1.0 / c.n_points)

    def test_positive_lambda_favors_lowest_energy(self, qam64sq):
        c = so.mb_pmf(qam64sq, 1.3)
        acs = so.amplitude_classes(c)
        per_point = [cl.class_probability / cl.size for cl in acs.classes]
        assert all(a > b for a, b in zip(per_point, per_point[1:]))

    def test_negative_lambda_favors_highest_energy(self, qam64sq):
        c = so.mb_pmf(qam64sq, -0.9)
        acs = so.amplitude_classes(c)
        per_point = [cl.class_probability / cl.size for cl in acs.classes]
        assert all(a < b for a, b in zip(per_point, per_point[1:]))

    @given(lam=st.floats(-5.0, 5.0))
    @settings(max_examples=25, deadline=None)
    def test_normalization_invariants(self, lam):
        c = so.mb_pmf(so.build_product_qam(16), lam)
        assert abs(c.pmf.sum() - 1.0) < PMF_ATOL
        assert np.all(c.pmf >= 0)
        assert abs(c.mean_energy() - 1.0) < 1e-12

    def test_extreme_lambda_is_overflow_safe(self, qam16sq):
        c = so.mb_pmf(qam16sq, 500.0)
        assert np.all(np.isfinite(c.pmf))
        assert abs(c.pmf.sum() - 1.0) < PMF_ATOL


class TestMdBall:
    def test_no_pruning_keeps_everything(self, qam16sq):
        c = so.md_ball(qam16sq, qam16sq.n_points)
        assert c.n_points == qam16sq.n_points
        assert np.allclose(c.points, qam16sq.points, atol=1e-12)

    def test_energy_cut(self, qam16sq):
        n = 50
        c = so.md_ball(qam16sq, n)
        e = qam16sq.energies()
        kept = np.argsort(e, kind="stable")[:n]
        expected = qam16sq.points[np.sort(kept)]
        expected = expected / math.sqrt(np.mean(np.sum(expected**2, axis=1)))
        assert np.allclose(c.points, expected, atol=1e-12)
        # cut property on the source energies
        assert e[kept].max() <= e[np.argsort(e, kind="stable")[n:]].min() + 1e-15

    def test_whole_shell_option_expands_to_shell_boundary(self, qam16sq):
        e = qam16sq.energies()
        order = np.argsort(e, kind="stable")
        # choose a cut strictly inside a shell
        n = 20
        cut_energy = e[order[n - 1]]
        shell = np.sum(np.abs(e - cut_energy) <= 1e-9 * cut_energy)
        c = so.md_ball(qam16sq, n, include_full_shell=True)
        below = np.sum(e < cut_energy - 1e-9 * cut_energy)
        assert c.n_points == below + shell
        assert c.n_points > n

    def test_papr_reduction_on_pam16(self, pam16_4d):
        ball = so.md_ball(pam16_4d, 8192)
        papr_base = so.moments(pam16_4d).papr
        papr_ball = so.moments(ball).papr
        assert papr_ball < papr_base
        assert papr_base == pytest.approx(PAPR_PAM16_4D, rel=1e-12)
        assert papr_ball == pytest.approx(PAPR_MD_BALL_8192, rel=1e-12)

    @pytest.mark.parametrize("bad", [0, -1, 257])
    def test_rejects_bad_budget(self, qam16sq, bad):
        with pytest.raises(ValueError):
            so.md_ball(qam16sq, bad)


def naive_moments(points, pmf):
    live = [p > 0 for p in pmf]
    e = [sum(x * x for x in p) for p, keep in zip(points, live) if keep]
    w = [p for p, keep in zip(pmf, live) if keep]
    m1 = sum(pi * ei for pi, ei in zip(w, e))
    return dict(
        mean=m1,
        papr=max(e) / m1,
        mu4=sum(pi * ei**2 for pi, ei in zip(w, e)) / m1**2,
        mu6=sum(pi * ei**3 for pi, ei in zip(w, e)) / m1**3,
        entropy=-sum(pi * math.log2(pi) for pi in w),
    )


class TestMoments:
    def test_constant_modulus(self, qpsk_sq):
        m = so.moments(qpsk_sq)
        assert m.papr == pytest.approx(1.0, abs=1e-12)
        assert m.mu4 == pytest.approx(1.0, abs=1e-12)
        assert m.mu6 == pytest.approx(1.0, abs=1e-12)

    def test_uniform_entropy(self, qam64sq):
        assert so.moments(qam64sq).entropy_bits == pytest.approx(12.0, abs=1e-12)

    def test_mu4_qam64_frozen(self, qam64sq):
        assert so.moments(qam64sq).mu4 == pytest.approx(MU4_QAM64SQ, rel=1e-12)

    @given(lam=st.floats(-2.0, 3.0))
    @settings(max_examples=15, deadline=None)
    def test_brute_force_equivalence_small(self, lam):
        c = so.mb_pmf(so.build_product_qam(16), lam)  # 256 points
        m = so.moments(c)
        ref = naive_moments(c.points.tolist(), c.pmf.tolist())
        assert m.mean_energy == pytest.approx(ref["mean"], abs=1e-12)
        assert m.papr == pytest.approx(ref["papr"], abs=1e-12)
        assert m.mu4 == pytest.approx(ref["mu4"], abs=1e-12)
        assert m.mu6 == pytest.approx(ref["mu6"], abs=1e-12)
        assert m.entropy_bits == pytest.approx(ref["entropy"], abs=1e-12)

    def test_papr_and_mu4_lower_bounds(self, qam64sq):
        for lam in (-1.0, 0.0, 2.0):
            m = so.moments(so.mb_pmf(qam64sq, lam))
            assert m.papr >= 1.0
            assert m.mu4 >= 1.0 - 1e-15


class TestApplyClassState:
    def test_uniform_state_recovers_uniform(self, qam16sq):
        acs = so.amplitude_classes(qam16sq)
        sizes = np.array([c.size for c in acs.classes], float)
        state = acs.with_state(sizes / sizes.sum(), np.ones(acs.n_classes))
        c = so.apply_class_state(qam16sq, state)
        assert np.allclose(c.pmf, 1.0 / c.n_points)
        assert np.allclose(c.points, qam16sq.points, atol=1e-12)

    def test_single_class_gives_constant_modulus(self, qam16sq):
        acs = so.amplitude_classes(qam16sq)
        probs = np.zeros(acs.n_classes)
        probs[2] = 1.0
        c = so.apply_class_state(qam16sq, acs.with_state(probs, np.ones(acs.n_classes)))
        assert so.moments(c).papr == pytest.approx(1.0, abs=1e-12)
        assert np.count_nonzero(c.pmf) == acs.classes[2].size

    @given(data=st.data())
    @settings(max_examples=25, deadline=None)
    def test_power_normalized_after_any_state(self, data):
        base = so.build_product_qam(16)
        acs = so.amplitude_classes(base)
        k = acs.n_classes
        raw = data.draw(
            st.lists(st.floats(0.0, 1.0), min_size=k, max_size=k).filter(
                lambda v: sum(v) > 1e-6
            )
        )
        probs = np.array(raw) / sum(raw)
        scales = np.array(
            data.draw(st.lists(st.floats(0.5, 2.0), min_size=k, max_size=k))
        )
        c = so.apply_class_state(base, acs.with_state(probs, scales))
        assert abs(c.mean_energy() - 1.0) < 1e-12
        assert abs(c.pmf.sum() - 1.0) < PMF_ATOL

    def test_round_trip_recovers_partition_cardinalities(self, qam16sq):
        acs = so.amplitude_classes(qam16sq)
        k = acs.n_classes
        rng = np.random.default_rng(5)
        probs = rng.random(k)
        probs /= probs.sum()
        scales = 1.0 + 0.02 * np.arange(k)  # keeps class energies distinct
        c = so.apply_class_state(qam16sq, acs.with_state(probs, scales))
        again = so.amplitude_classes(c)
        assert sorted(cl.size for cl in again.classes) == sorted(
            cl.size for cl in acs.classes
        )

    def test_all_zero_probability_rejected(self, qam16sq):
        acs = so.amplitude_classes(qam16sq)
        # the class-set invariant already refuses an all-zero state ...
        with pytest.raises(ValueError):
            acs.with_state(np.zeros(acs.n_classes), np.ones(acs.n_classes))
        # ... and apply_class_state has its own guard should one slip through
        for cl in acs.classes:
            cl.class_probability = 0.0
        with pytest.raises(so.DegeneratePmfError):
            so.apply_class_state(qam16sq, acs)


class TestValidation:
    def test_pmf_must_sum_to_one(self):
        pts = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
        with pytest.raises(ValueError):
            so.Constellation4D(pts, np.array([0.6, 0.6]))

    def test_pmf_nonnegative(self):
        pts = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
        with pytest.raises(ValueError):
            so.Constellation4D(pts, np.array([1.5, -0.5]))

    def test_duplicate_live_points_rejected(self):
        pts = np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0]])
        with pytest.raises(ValueError):
            so.Constellation4D(pts, np.array([0.5, 0.5]))

    def test_duplicate_allowed_if_pruned(self):
        pts = np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0], [0, 1.0, 0, 0]])
        c = so.Constellation4D(pts, np.array([0.5, 0.0, 0.5]))
        assert np.count_nonzero(c.pmf) == 2

    def test_scale_zero_forbidden_in_class_set(self, qam16sq):
        acs = so.amplitude_classes(qam16sq)
        probs = acs.probabilities()
        scales = acs.scales()
        scales[0] = 0.0
        with pytest.raises(ValueError):
            acs.with_state(probs, scales)
