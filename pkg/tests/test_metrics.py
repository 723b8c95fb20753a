import numpy as np
import pytest

from hashguard.metrics import REJECTED, compute_metrics


class TestWorkedExample:
    def test_hand_counted_confusion(self):
        labels = [1, 1, 1, 1, 0, 0, 0, 0, 1, 1]
        preds = [1, 0, REJECTED, 1, 0, 1, REJECTED, 0, REJECTED, 0]
        adv = [False] * 8 + [True, True]
        # by hand: tp = {0, 3}; fn = {1, rejected-clean 2, adversarial miss 9}
        # tn = {4, 7}; fp = {5, rejected-clean 6}; rejected adversarial = {8}
        r = compute_metrics(preds, labels, adv)
        assert (r.tp, r.tn, r.fp, r.fn) == (2, 2, 2, 3)
        assert r.rejected_adversarial == 1
        assert r.rejected_clean == 2
        assert r.accuracy == pytest.approx((2 + 2 + 1) / 10)
        assert r.fnr == pytest.approx(3 / 5)
        assert r.fpr == pytest.approx(2 / 4)

    def test_partition_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            k = int(rng.integers(1, 50))
            preds = rng.choice([REJECTED, 0, 1], k)
            labels = rng.integers(0, 2, k)
            adv = rng.random(k) < 0.3
            r = compute_metrics(preds, labels, adv)
            assert r.tp + r.tn + r.fp + r.fn + r.rejected_adversarial == r.total == k
            assert 0.0 <= r.accuracy <= 1.0
            assert 0.0 <= r.fnr <= 1.0 and 0.0 <= r.fpr <= 1.0


class TestRejectionRule:
    def test_rejected_adversarial_counts_correct(self):
        r = compute_metrics([REJECTED] * 4, [1] * 4, [True] * 4)
        assert r.accuracy == 1.0
        assert r.fnr == 0.0
        assert r.rejected_adversarial == 4

    def test_rejected_clean_counts_as_error(self):
        r = compute_metrics([REJECTED, REJECTED], [1, 0], [False, False])
        assert r.accuracy == 0.0
        assert r.fn == 1 and r.fp == 1
        assert r.fnr == 1.0 and r.fpr == 1.0

    def test_classified_adversarial_scores_normally(self):
        # caught adversarial malware is a tp; missed one is a fn
        r = compute_metrics([1, 0], [1, 1], [True, True])
        assert r.tp == 1 and r.fn == 1
        assert r.accuracy == 0.5


class TestNoRejection:
    def test_plain_confusion(self):
        r = compute_metrics([1, 1, 0, 0], [1, 0, 1, 0])
        assert (r.tp, r.fp, r.fn, r.tn) == (1, 1, 1, 1)
        assert r.accuracy == 0.5 and r.fnr == 0.5 and r.fpr == 0.5
        assert r.rejected_adversarial == 0 and r.rejected_clean == 0

    def test_all_correct(self):
        r = compute_metrics([0, 1], [0, 1])
        assert r.accuracy == 1.0 and r.fnr == 0.0 and r.fpr == 0.0

    def test_degenerate_rates_are_zero(self):
        r = compute_metrics([0, 0], [0, 0])
        assert r.fnr == 0.0 and r.fpr == 0.0


class TestValidation:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            compute_metrics([0, 1], [0])
        with pytest.raises(ValueError):
            compute_metrics([0, 1], [0, 1], [True])

    def test_bad_values(self):
        with pytest.raises(ValueError):
            compute_metrics([2], [1])
        with pytest.raises(ValueError):
            compute_metrics([1], [3])

    def test_empty(self):
        with pytest.raises(ValueError):
            compute_metrics([], [])

    def test_to_dict_round_trip(self):
        r = compute_metrics([1, 0], [1, 0])
        d = r.to_dict()
        assert d["tp"] == 1 and d["accuracy"] == 1.0
