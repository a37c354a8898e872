"""Evaluation metrics: PR/ROC AUC, Rand index, pairwise precision/recall.

Conventions are pinned so independent oracles can reproduce every value
exactly. PR AUC: thresholds are the distinct scores, prediction is
score >= threshold, the curve is anchored at (recall 0, precision 1) and
integrated trapezoidally over recall. ROC AUC: Mann-Whitney U statistic
normalized by n_pos * n_neg, with tied scores given average ranks.
"""

import numpy as np

from .errors import MetricError


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError(f"scores and labels must align 1-d, got {scores.shape} vs {labels.shape}")
    if scores.size == 0:
        raise MetricError("empty inputs")
    uniq = set(np.unique(labels).tolist())
    if not uniq <= {0, 1}:
        raise MetricError(f"labels must be 0/1, got {sorted(uniq)}")
    if len(uniq) < 2:
        raise MetricError("metric undefined with a single class")
    return scores, labels.astype(np.int64)


def pr_curve(scores, labels):
    """(recall, precision, threshold) points at each distinct score, descending."""
    scores, labels = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    l_sorted = labels[order]
    tp = np.cumsum(l_sorted == 1)
    fp = np.cumsum(l_sorted == 0)
    ends = np.nonzero(np.append(np.diff(s_sorted) != 0, True))[0]
    tp = tp[ends].astype(np.float64)
    fp = fp[ends].astype(np.float64)
    pos = float((labels == 1).sum())
    recall = tp / pos
    precision = tp / (tp + fp)
    return recall, precision, s_sorted[ends]


def pr_auc(scores, labels) -> float:
    """Area under the precision-recall curve, trapezoidal over recall."""
    recall, precision, _ = pr_curve(scores, labels)
    r = np.concatenate(([0.0], recall))
    p = np.concatenate(([1.0], precision))
    return float(np.sum(np.diff(r) * (p[1:] + p[:-1]) / 2.0))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney U normalization with average ranks for ties."""
    scores, labels = _check_binary(scores, labels)
    ranks = _average_ranks(scores)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ends = np.nonzero(np.append(np.diff(sorted_vals) != 0, True))[0]
    starts = np.concatenate(([0], ends[:-1] + 1))
    # 1-based ranks; ties share the mean rank of their run
    avg = (starts + ends) / 2.0 + 1.0
    run_ranks = np.repeat(avg, ends - starts + 1)
    ranks = np.empty(values.size, dtype=np.float64)
    ranks[order] = run_ranks
    return ranks


def rand_index(assignment_a: dict, assignment_b: dict) -> float:
    """Fraction of image pairs on which two clusterings agree.

    Both arguments map image id -> cluster label and must cover the same
    ids. Agreement means the pair is together in both or apart in both.
    """
    ids = sorted(assignment_a)
    if set(assignment_b) != set(ids):
        raise MetricError("clusterings cover different id sets")
    n = len(ids)
    if n < 2:
        raise MetricError("need at least two images")
    total = n * (n - 1) // 2
    pairs_a = _co_clustered_pairs(assignment_a)
    pairs_b = _co_clustered_pairs(assignment_b)
    joint = {}
    for i in ids:
        key = (assignment_a[i], assignment_b[i])
        joint[key] = joint.get(key, 0) + 1
    pairs_both = sum(c * (c - 1) // 2 for c in joint.values())
    disagreements = (pairs_a - pairs_both) + (pairs_b - pairs_both)
    return (total - disagreements) / total


def _co_clustered_pairs(assignment: dict) -> int:
    sizes = {}
    for label in assignment.values():
        sizes[label] = sizes.get(label, 0) + 1
    return sum(c * (c - 1) // 2 for c in sizes.values())


def pairwise_precision_recall(predicted: dict, truth: dict):
    """Precision/recall of co-clustered pairs against ground truth.

    Both map image id -> label over the same ids. An empty pair set on
    either side makes the corresponding metric 1.0 by convention.
    """
    if set(predicted) != set(truth):
        raise MetricError("clusterings cover different id sets")
    pred_pairs = _co_clustered_pairs(predicted)
    true_pairs = _co_clustered_pairs(truth)
    joint = {}
    for i in predicted:
        key = (predicted[i], truth[i])
        joint[key] = joint.get(key, 0) + 1
    tp = sum(c * (c - 1) // 2 for c in joint.values())
    precision = tp / pred_pairs if pred_pairs else 1.0
    recall = tp / true_pairs if true_pairs else 1.0
    return precision, recall
