"""
studies.py

Category breakdowns of evaluation results by UAV flight height and ground
speed, and equal-size resampling so categories with very different sample
counts can be compared on Top-1 accuracy.
"""
from collections import OrderedDict

import numpy

from .exceptions import EmptySet, UsageError
from .metrics import average_power_loss, top_k_accuracy
from .utils import derive_rng, STREAM_RESAMPLE

HEIGHT_EDGES_M = (40.0, 80.0)
HEIGHT_LABELS = ("low", "medium", "high")

SPEED_EDGES_MPS = (8.0, 14.0)
SPEED_LABELS = ("slow", "medium", "fast")


def _categorize(value, edges, labels):
    lo, hi = edges
    if not lo < hi:
        raise UsageError("category edges must be ascending, got {0}".format(edges))
    if value <= lo:
        return labels[0]
    if value <= hi:
        return labels[1]
    return labels[2]


def categorize_height(height_m, edges=HEIGHT_EDGES_M):
    """low (<= 40 m), medium (<= 80 m) or high"""
    return _categorize(height_m, edges, HEIGHT_LABELS)


def categorize_speed(speed_mps, edges=SPEED_EDGES_MPS):
    return _categorize(speed_mps, edges, SPEED_LABELS)


def _by_category(per_step, categories):
    if len(categories) != len(per_step[0]):
        raise UsageError("{0} categories for {1} samples".format(len(categories), len(per_step[0])))
    groups = OrderedDict()
    for i, c in enumerate(categories):
        groups.setdefault(c, []).append(i)
    return groups


def category_breakdown(per_step, categories):
    """per category: count, per-step Top-1 and (when powers exist) per-step mean
    power loss. categories is one label per window, aligned with every step list."""
    if not per_step or not per_step[0]:
        raise EmptySet("no samples to break down")
    rows = []
    for name, idx in sorted(_by_category(per_step, categories).items()):
        row = OrderedDict([("category", name), ("count", len(idx))])
        for v, step in enumerate(per_step):
            row["top1.step{0}".format(v)] = top_k_accuracy([step[i] for i in idx], 1)
        if all(s.powers is not None for s in per_step[0]):
            for v, step in enumerate(per_step):
                row["mean_pl_db.step{0}".format(v)] = average_power_loss([step[i] for i in idx])
        rows.append(row)
    return rows


def resampled_top1(per_step, categories, n_samples=56, rounds=20, seed=0):
    """mean and std of per-step Top-1 over `rounds` equal-size draws per category.

    Draws are without replacement within a round. A category with fewer than
    n_samples windows is evaluated once on its full set (std 0).
    """
    if not per_step or not per_step[0]:
        raise EmptySet("no samples to resample")
    if n_samples < 1 or rounds < 1:
        raise UsageError("n_samples and rounds must be positive")
    rows = []
    for ci, (name, idx) in enumerate(sorted(_by_category(per_step, categories).items())):
        idx = numpy.asarray(idx)
        if len(idx) < n_samples:
            draws = [idx]
        else:
            rng = derive_rng(seed, STREAM_RESAMPLE, ci)
            draws = [rng.choice(idx, size=n_samples, replace=False) for _ in range(rounds)]
        row = OrderedDict([("category", name), ("count", len(idx)), ("rounds", len(draws))])
        for v, step in enumerate(per_step):
            accs = numpy.array([top_k_accuracy([step[i] for i in d], 1) for d in draws])
            row["top1_mean.step{0}".format(v)] = float(accs.mean())
            row["top1_std.step{0}".format(v)] = float(accs.std())
        rows.append(row)
    return rows
