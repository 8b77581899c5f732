"""Image-quality and binary-classification metrics.

PSNR/SSIM follow the [0,1] dynamic-range convention (SSIM with a uniform
8x8 sliding window). Classification metrics use the Mann-Whitney rank AUC
with half credit for ties, rectangle-rule average precision, and an EER
read off a fixed 1001-point threshold sweep so results reproduce bit-exactly.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError

SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
EER_GRID = 1001
PSNR_LOG_CAP = 99.0


def _as_batch(x):
    # unwrap ImageBatch -> Tensor -> ndarray
    while not isinstance(x, np.ndarray) and hasattr(x, "data"):
        x = x.data
    data = np.asarray(x, dtype=np.float64)
    if data.ndim != 4:
        raise DimensionError("expected (B,C,H,W) images", data.shape)
    return data


def psnr(a, b):
    """Peak signal-to-noise ratio in dB per item (inf for identical pairs)."""
    a, b = _as_batch(a), _as_batch(b)
    if a.shape != b.shape:
        raise DimensionError("image batches must match", a.shape, b.shape)
    mse = ((a - b) ** 2).reshape(a.shape[0], -1).mean(axis=1)
    out = np.full(a.shape[0], np.inf)
    nz = mse > 0
    out[nz] = 10.0 * np.log10(1.0 / mse[nz])
    return out


def _grayscale(x):
    return x.mean(axis=1)


def ssim(a, b):
    """Mean structural similarity per item over all 8x8 windows."""
    a, b = _as_batch(a), _as_batch(b)
    if a.shape != b.shape:
        raise DimensionError("image batches must match", a.shape, b.shape)
    h, w = a.shape[2:]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ContractError("images smaller than the %dx%d SSIM window"
                            % (SSIM_WINDOW, SSIM_WINDOW))
    ga, gb = _grayscale(a), _grayscale(b)
    out = np.empty(a.shape[0])
    for i in range(a.shape[0]):
        wa = sliding_window_view(ga[i], (SSIM_WINDOW, SSIM_WINDOW))
        wb = sliding_window_view(gb[i], (SSIM_WINDOW, SSIM_WINDOW))
        mu_a = wa.mean(axis=(2, 3))
        mu_b = wb.mean(axis=(2, 3))
        var_a = (wa ** 2).mean(axis=(2, 3)) - mu_a ** 2
        var_b = (wb ** 2).mean(axis=(2, 3)) - mu_b ** 2
        cov = (wa * wb).mean(axis=(2, 3)) - mu_a * mu_b
        num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
        out[i] = (num / den).mean()
    return out


def _validate_scores(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise DimensionError("scores and labels differ in length",
                             scores.shape, labels.shape)
    if not np.isin(labels, (0, 1)).all():
        raise ContractError("labels must be 0 or 1")
    return scores, labels.astype(int)


def accuracy(scores, labels, threshold=0.5):
    """Fraction correct when predicting positive at score >= threshold."""
    scores, labels = _validate_scores(scores, labels)
    return float(((scores >= threshold).astype(int) == labels).mean())


def _average_ranks(scores):
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_rank(scores, labels):
    """Mann-Whitney AUC; tied pairs count half."""
    scores, labels = _validate_scores(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("auc needs both classes present")
    ranks = _average_ranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels):
    """Area under precision-recall via the step-wise rectangle rule."""
    scores, labels = _validate_scores(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise ContractError("average precision needs both classes present")
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1 - sorted_labels)
    # evaluate only at the last index of each tied-score group
    last = np.nonzero(np.append(sorted_scores[1:] != sorted_scores[:-1], True))[0]
    recall = tp[last] / n_pos
    precision = tp[last] / (tp[last] + fp[last])
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - prev_recall) * precision).sum())


def equal_error_rate(scores, labels):
    """(FPR+FNR)/2 at the sweep point minimizing their gap."""
    scores, labels = _validate_scores(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("eer needs both classes present")
    thresholds = np.linspace(0.0, 1.0, EER_GRID)
    pos, neg = scores[labels == 1], scores[labels == 0]
    fpr = (neg[None, :] >= thresholds[:, None]).mean(axis=1)
    fnr = (pos[None, :] < thresholds[:, None]).mean(axis=1)
    i = int(np.argmin(np.abs(fpr - fnr)))
    return float((fpr[i] + fnr[i]) / 2.0)


def binary_metrics(scores, labels):
    """{auc, acc, ap, eer} for probability scores against 0/1 labels."""
    return {
        "auc": auc_rank(scores, labels),
        "acc": accuracy(scores, labels),
        "ap": average_precision(scores, labels),
        "eer": equal_error_rate(scores, labels),
    }
