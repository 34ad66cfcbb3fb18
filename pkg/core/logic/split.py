"""
split.py

Raw dataset model, sequential and adjusted (label-distribution aware)
splitting, label-distribution diagnostics, and construction of the windowed
(observation, label-sequence) samples the model trains on.

All splitting keeps exact partitions: every raw sample lands in exactly one of
train/val/test, and each split is returned in ascending (q, t) order.
"""
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy

from .exceptions import (
    DataValidationError, EmptyDataset, NoValidChunkSize, UsageError
)
from .geo import GeodeticPosition, feature_matrix, ecef_arrays, METERS_TO_KM
from .utils import msg

SPLIT_NAMES = ("train", "val", "test")

# label groups smaller than this go to train in full
MIN_LABEL_GROUP = 3

# guards floor(f * n) against representation error (0.29 * 100 -> 28.999...)
_FLOOR_EPS = 1e-9


# -----------------------------------------------------------------------------
# Types

@dataclass(frozen=True)
class RawSample:
    """one timestamped record. ue_pos carries the flight height as its altitude,
    bs_pos sits at 0 m. beam is 0-based."""
    seq_index: int
    sample_index: int
    bs_pos: GeodeticPosition
    ue_pos: GeodeticPosition
    height_m: float
    beam: int
    powers: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.seq_index < 0 or self.sample_index < 0:
            raise DataValidationError("negative sequence/sample index ({0}, {1})".format(self.seq_index, self.sample_index))
        if self.height_m < 0:
            raise DataValidationError("negative height {0}".format(self.height_m))
        if self.beam < 0:
            raise DataValidationError("negative beam index {0}".format(self.beam))
        if self.powers is not None:
            p = numpy.asarray(self.powers, dtype=numpy.float64)
            if numpy.any(p < 0):
                raise DataValidationError("negative received power at ({0}, {1})".format(self.seq_index, self.sample_index))
            if int(numpy.argmax(p)) != self.beam:
                raise DataValidationError(
                    "argmax(powers) = {0} disagrees with beam {1} at ({2}, {3})".format(
                        int(numpy.argmax(p)), self.beam, self.seq_index, self.sample_index)
                )

    @property
    def key(self):
        return (self.seq_index, self.sample_index)


@dataclass
class RawDataset:
    samples: list
    codebook_size: int

    def __post_init__(self):
        if self.codebook_size < 2:
            raise DataValidationError("codebook size must be >= 2, got {0}".format(self.codebook_size))
        prev = None
        for s in self.samples:
            if s.beam >= self.codebook_size:
                raise DataValidationError(
                    "beam {0} at {1} outside codebook of size {2}".format(s.beam, s.key, self.codebook_size))
            if s.powers is not None and len(s.powers) != self.codebook_size:
                raise DataValidationError(
                    "power vector at {0} has {1} entries, expected {2}".format(s.key, len(s.powers), self.codebook_size))
            if prev is not None and s.key <= prev:
                raise DataValidationError("samples not strictly ascending by (q, t) at {0}".format(s.key))
            prev = s.key

    def __len__(self):
        return len(self.samples)

    def subset(self, samples):
        """a new dataset over the given samples, re-sorted by (q, t)"""
        return RawDataset(sorted(samples, key=lambda s: s.key), self.codebook_size)

    @property
    def has_powers(self):
        return bool(self.samples) and all(s.powers is not None for s in self.samples)

    def beams(self):
        return numpy.array([s.beam for s in self.samples], dtype=numpy.int64)


@dataclass(frozen=True)
class SplitConfig:
    f_train: float = 0.65
    f_val: float = 0.15
    f_test: float = 0.20
    chunk_percentages: Tuple[float, ...] = (0.01, 0.02, 0.05, 0.10, 0.20)
    min_seq_len: int = 11

    def __post_init__(self):
        fractions = (self.f_train, self.f_val, self.f_test)
        if any(f <= 0 for f in fractions):
            raise UsageError("split fractions must be positive, got {0}".format(fractions))
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise UsageError("split fractions must sum to 1, got {0}".format(sum(fractions)))
        if any(not 0 < p <= 1 for p in self.chunk_percentages):
            raise UsageError("chunk percentages must lie in (0, 1], got {0}".format(self.chunk_percentages))
        if self.min_seq_len < 1:
            raise UsageError("min_seq_len must be >= 1")

    def to_dict(self):
        return {
            "f_train": self.f_train,
            "f_val": self.f_val,
            "f_test": self.f_test,
            "chunk_percentages": list(self.chunk_percentages),
            "min_seq_len": self.min_seq_len,
        }


@dataclass(frozen=True)
class LabelDistribution:
    counts: Tuple[int, ...]
    total: int

    def __post_init__(self):
        if sum(self.counts) != self.total:
            raise DataValidationError("label counts do not sum to total")

    def probabilities(self):
        c = numpy.asarray(self.counts, dtype=numpy.float64)
        if self.total == 0:
            return numpy.zeros_like(c)
        return c / self.total


@dataclass
class WindowedSample:
    """model input (W x 5, oldest row first, zero rows padding the front) with
    its V+1 label sequence; origin is the (q, t) of the anchor sample"""
    features: numpy.ndarray
    labels: numpy.ndarray
    origin: Tuple[int, int]
    n_padded: int = field(default=0)

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] != 5:
            raise DataValidationError("window features must be W x 5, got {0}".format(self.features.shape))
        if self.labels.ndim != 1 or len(self.labels) < 1:
            raise DataValidationError("window labels must be a non-empty vector")
        zero_rows = ~numpy.any(self.features != 0.0, axis=1)
        if numpy.any(zero_rows[self.n_padded:]) or not numpy.all(zero_rows[:self.n_padded]):
            raise DataValidationError("padding rows must be the leading {0} rows only".format(self.n_padded))


# -----------------------------------------------------------------------------
# Ratio helpers

def _ratio_counts(n, cfg, rule="floor"):
    """split n items into (train, val, test) counts.

    rule "floor": floor for train and val, remainder to test
    rule "round": round-half-up for train and val, remainder to test
    """
    if rule == "floor":
        n_train = int(math.floor(cfg.f_train * n + _FLOOR_EPS))
        n_val = int(math.floor(cfg.f_val * n + _FLOOR_EPS))
    else:
        n_train = int(math.floor(cfg.f_train * n + 0.5))
        n_val = int(math.floor(cfg.f_val * n + 0.5))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def _cut(items, counts):
    n_train, n_val, _ = counts
    return items[:n_train], items[n_train:n_train + n_val], items[n_train + n_val:]


# -----------------------------------------------------------------------------
# Splitting

def sequential_split(d, cfg):
    """first floor(f_train*K) samples -> train, next floor(f_val*K) -> val, rest -> test"""
    if len(d) == 0:
        raise EmptyDataset("cannot split an empty dataset")
    parts = _cut(d.samples, _ratio_counts(len(d), cfg, "floor"))
    return tuple(d.subset(p) for p in parts)


def label_distribution(d):
    counts = numpy.bincount(d.beams(), minlength=d.codebook_size) if len(d) else numpy.zeros(d.codebook_size, dtype=int)
    return LabelDistribution(tuple(int(c) for c in counts), len(d))


def distribution_similarity_score(ref, train, val, test):
    """L1 distance of each split's label distribution from the reference, summed.

    An empty split contributes the full mass of the reference (its P is all zero).
    """
    if not len(ref.counts) == len(train.counts) == len(val.counts) == len(test.counts):
        raise DataValidationError("label distributions must share the codebook size")
    p = ref.probabilities()
    return float(sum(numpy.abs(p - other.probabilities()).sum() for other in (train, val, test)))


def candidate_chunk_sizes(n, cfg):
    """chunk sizes from the configured percentages, deduplicated, ascending,
    filtered by the minimum sequence length"""
    sizes = sorted({max(1, int(math.floor(p * n + 0.5))) for p in cfg.chunk_percentages})
    return [c for c in sizes if c >= cfg.min_seq_len]


def chunked_split(d, chunk_size, cfg):
    """split the (q, t) ordered stream into contiguous chunks of chunk_size
    (the last one may be short), split each chunk by the ratios and aggregate"""
    train, val, test = [], [], []
    for start in range(0, len(d), chunk_size):
        chunk = d.samples[start:start + chunk_size]
        a, b, c = _cut(chunk, _ratio_counts(len(chunk), cfg, "floor"))
        train.extend(a)
        val.extend(b)
        test.extend(c)
    return d.subset(train), d.subset(val), d.subset(test)


def adjusted_split(d, cfg):
    """label-distribution aware splitting.

    Stage (i): every candidate chunk size is tried with chunked_split and
    scored against the label distribution of the whole dataset; the lowest
    score wins (ties go to the smaller chunk size).

    Stage (ii): the winning splits are regrouped per label and each label group
    is re-split by the ratios, preserving (q, t) order inside the group. Groups
    with fewer than MIN_LABEL_GROUP samples go to train in full.
    """
    if len(d) == 0:
        raise EmptyDataset("cannot split an empty dataset")
    sizes = candidate_chunk_sizes(len(d), cfg)
    if not sizes:
        raise NoValidChunkSize(
            "no chunk size from {0} of {1} samples reaches the minimum sequence length {2}".format(
                list(cfg.chunk_percentages), len(d), cfg.min_seq_len)
        )

    ref = label_distribution(d)
    best = None
    for c in sizes:
        parts = chunked_split(d, c, cfg)
        score = distribution_similarity_score(ref, *[label_distribution(p) for p in parts])
        if best is None or score < best[0]:
            best = (score, c, parts)
    msg("chunk stage: best chunk size {0} (score {1:.6f}) of {2}".format(best[1], best[0], sizes))

    # stage (ii)
    pooled = sorted([s for p in best[2] for s in p.samples], key=lambda s: s.key)
    groups = OrderedDict((b, []) for b in range(d.codebook_size))
    for s in pooled:
        groups[s.beam].append(s)

    train, val, test = [], [], []
    for b, group in groups.items():
        if not group:
            continue
        if len(group) < MIN_LABEL_GROUP:
            msg("label {0} has only {1} sample(s); assigning all to train".format(b, len(group)), "warning")
            train.extend(group)
            continue
        a, v, t = _cut(group, _ratio_counts(len(group), cfg, "round"))
        train.extend(a)
        val.extend(v)
        test.extend(t)
    return d.subset(train), d.subset(val), d.subset(test)


def split_dataset(d, cfg, method="adjusted"):
    if method == "adjusted":
        return adjusted_split(d, cfg)
    elif method == "sequential":
        return sequential_split(d, cfg)
    raise UsageError("unknown split method '{0}' (sequential|adjusted)".format(method))


def split_report(d, splits):
    """per-label table comparing the reference distribution with each split.

    Returns (rows, score); rows are OrderedDicts with counts and proportions.
    """
    ref = label_distribution(d)
    dists = [label_distribution(s) for s in splits]
    p_ref = ref.probabilities()
    probs = [x.probabilities() for x in dists]
    rows = []
    for b in range(d.codebook_size):
        row = OrderedDict([("label", b), ("count_all", ref.counts[b]), ("p_all", float(p_ref[b]))])
        for name, dist, p in zip(SPLIT_NAMES, dists, probs):
            row["count_" + name] = dist.counts[b]
            row["p_" + name] = float(p[b])
        rows.append(row)
    return rows, distribution_similarity_score(ref, *dists)


# -----------------------------------------------------------------------------
# Windowing

def _runs(samples):
    """maximal runs of same-q samples with consecutive t, as index lists"""
    runs = []
    current = []
    prev = None
    for i, s in enumerate(samples):
        if prev is not None and s.seq_index == prev.seq_index and s.sample_index == prev.sample_index + 1:
            current.append(i)
        else:
            if current:
                runs.append(current)
            current = [i]
        prev = s
    if current:
        runs.append(current)
    return runs


def dataset_features(d, bounds):
    """K x 5 feature rows for every sample (UE at its height, BS at 0 m)"""
    s = d.samples
    return feature_matrix(
        [x.ue_pos.latitude_deg for x in s],
        [x.ue_pos.longitude_deg for x in s],
        [x.height_m for x in s],
        [x.bs_pos.latitude_deg for x in s],
        [x.bs_pos.longitude_deg for x in s],
        numpy.zeros(len(s)),
        bounds,
    )


def build_windows(d, bounds, W, V):
    """(observation window, label sequence) pairs for every admissible anchor.

    An anchor at t is admissible when t..t+V are consecutive samples of the
    same sequence. Its observation holds the features of t-W+1..t; history
    missing at the start of a consecutive run is replaced by leading zero rows.
    """
    if W < 1 or V < 0:
        raise UsageError("window needs W >= 1 and V >= 0 (got W={0}, V={1})".format(W, V))
    if len(d) == 0:
        return []
    feats = dataset_features(d, bounds)
    beams = d.beams()
    windows = []
    for run in _runs(d.samples):
        for pos in range(len(run) - V):
            lo = pos - W + 1
            n_pad = max(0, -lo)
            rows = feats[run[max(lo, 0):pos + 1]]
            x = numpy.zeros((W, 5), dtype=numpy.float64)
            x[n_pad:] = rows
            y = beams[run[pos:pos + V + 1]].copy()
            anchor = d.samples[run[pos]]
            windows.append(WindowedSample(x, y, anchor.key, n_pad))
    return windows


def window_arrays(windows):
    """stack windows into X (N x W x 5) and Y (N x V+1)"""
    if not windows:
        raise EmptyDataset("no windows to stack")
    X = numpy.stack([w.features for w in windows])
    Y = numpy.stack([w.labels for w in windows]).astype(numpy.int64)
    return X, Y


# -----------------------------------------------------------------------------
# Dataset transforms

def reduce_codebook(d, new_M):
    """merge adjacent beams so the codebook shrinks from M to new_M.

    The merged beam's power is the max over its group, which keeps
    argmax(powers) consistent with the merged label.
    """
    M = d.codebook_size
    if new_M < 2 or M % new_M != 0:
        raise UsageError("new codebook size {0} must divide {1}".format(new_M, M))
    factor = M // new_M
    out = []
    for s in d.samples:
        powers = None
        if s.powers is not None:
            powers = tuple(float(v) for v in numpy.asarray(s.powers).reshape(new_M, factor).max(axis=1))
        out.append(RawSample(s.seq_index, s.sample_index, s.bs_pos, s.ue_pos, s.height_m, s.beam // factor, powers))
    return RawDataset(out, new_M)


def sample_speeds(d):
    """ground speed (m/s) per sample from the ECEF step to the previous sample of
    the same consecutive run; a run's first sample copies its successor"""
    if len(d) == 0:
        return numpy.zeros(0)
    s = d.samples
    xyz = ecef_arrays(
        [x.ue_pos.latitude_deg for x in s],
        [x.ue_pos.longitude_deg for x in s],
        [x.height_m for x in s],
    ) / METERS_TO_KM
    speeds = numpy.zeros(len(s), dtype=numpy.float64)
    for run in _runs(s):
        if len(run) < 2:
            continue
        steps = numpy.linalg.norm(numpy.diff(xyz[run], axis=0), axis=1)
        speeds[run[1:]] = steps
        speeds[run[0]] = steps[0]
    return speeds
