"""Accuracy, FNR, FPR with the rejection accounting rule.

A model with a reconstruction-error gate may answer REJECTED (-1) instead of
a label. Rejections are scored by sample origin: rejecting an adversarial
sample is a win (the attack failed), rejecting a clean sample is an error
charged to the usual cell for its label (missed malware -> FN, flagged
benign -> FP). Classified samples score as usual regardless of origin.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

REJECTED = -1


@dataclass
class MetricsReport:
    total: int
    tp: int
    tn: int
    fp: int
    fn: int
    rejected_adversarial: int
    rejected_clean: int
    accuracy: float
    fnr: float
    fpr: float

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(predictions, labels, adversarial=None) -> MetricsReport:
    """Score predictions (labels or REJECTED) against ground truth.

    adversarial is a boolean flag per sample (default: all clean). The counts
    always satisfy tp + tn + fp + fn + rejected_adversarial == total.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if adversarial is None:
        adversarial = np.zeros(predictions.shape, bool)
    adversarial = np.asarray(adversarial, dtype=bool)
    if predictions.shape != labels.shape or predictions.shape != adversarial.shape:
        raise ValueError("predictions, labels, adversarial must share a shape")
    if predictions.size == 0:
        raise ValueError("cannot score an empty prediction set")
    if not np.isin(predictions, (REJECTED, 0, 1)).all():
        raise ValueError("predictions must be 0, 1, or REJECTED")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")

    rej = predictions == REJECTED
    rej_adv = int(np.count_nonzero(rej & adversarial))
    rej_clean_mal = int(np.count_nonzero(rej & ~adversarial & (labels == 1)))
    rej_clean_ben = int(np.count_nonzero(rej & ~adversarial & (labels == 0)))

    ans = ~rej
    tp = int(np.count_nonzero(ans & (predictions == 1) & (labels == 1)))
    tn = int(np.count_nonzero(ans & (predictions == 0) & (labels == 0)))
    fp = int(np.count_nonzero(ans & (predictions == 1) & (labels == 0))) + rej_clean_ben
    fn = int(np.count_nonzero(ans & (predictions == 0) & (labels == 1))) + rej_clean_mal

    total = predictions.size
    return MetricsReport(
        total=total, tp=tp, tn=tn, fp=fp, fn=fn,
        rejected_adversarial=rej_adv,
        rejected_clean=rej_clean_mal + rej_clean_ben,
        accuracy=(tp + tn + rej_adv) / total,
        fnr=fn / (fn + tp) if fn + tp else 0.0,
        fpr=fp / (fp + tn) if fp + tn else 0.0,
    )
