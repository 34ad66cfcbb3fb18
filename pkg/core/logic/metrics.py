"""
metrics.py

Evaluation metrics over per-step beam predictions:

* Top-K accuracy (and the full K=1..M curve)
* average power loss in dB, with half the noise power added as an offset
* overhead savings: the fewest candidate beams that reach a target accuracy
* power-loss reliability: the fraction of samples within a dB threshold

Every metric is computed per prediction step. The report also carries pooled
overhead figures over all steps.
"""
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy

from .exceptions import EmptySet, MissingPowers, UsageError, DataValidationError
from .utils import msg

DEFAULT_TARGETS = (0.80, 0.85, 0.90, 0.95, 0.99)
DEFAULT_THRESHOLDS_DB = (1.0, 3.0)
SUM_TOL = 1e-6


@dataclass
class EvalSample:
    step: int
    true_beam: int
    scores: numpy.ndarray
    powers: Optional[numpy.ndarray] = None

    def __post_init__(self):
        self.scores = numpy.asarray(self.scores, dtype=numpy.float64)
        if abs(float(self.scores.sum()) - 1.0) > SUM_TOL:
            raise DataValidationError("score row sums to {0}, not 1".format(self.scores.sum()))
        if not 0 <= self.true_beam < len(self.scores):
            raise DataValidationError("true beam {0} outside [0, {1})".format(self.true_beam, len(self.scores)))
        if self.powers is not None:
            self.powers = numpy.asarray(self.powers, dtype=numpy.float64)
            if self.powers.shape != self.scores.shape:
                raise DataValidationError("power vector length {0} != codebook size {1}".format(
                    len(self.powers), len(self.scores)))


def eval_samples(scores, labels, powers=None):
    """per-step EvalSample lists from stacked arrays.

    scores: (N, S, M); labels: (N, S); powers: (N, S, M) or None
    """
    N, S, _ = scores.shape
    return [
        [EvalSample(v, int(labels[n, v]), scores[n, v], None if powers is None else powers[n, v]) for n in range(N)]
        for v in range(S)
    ]


# -----------------------------------------------------------------------------
# helpers

def _stack(samples):
    if not samples:
        raise EmptySet("no samples to evaluate")
    S = numpy.stack([s.scores for s in samples])
    y = numpy.array([s.true_beam for s in samples], dtype=numpy.int64)
    return S, y


def _powers(samples):
    if not samples:
        raise EmptySet("no samples to evaluate")
    if any(s.powers is None for s in samples):
        raise MissingPowers("power vectors are required for power-loss metrics")
    return numpy.stack([s.powers for s in samples])


def _ranks(S, y):
    """position of the true beam in a descending sort, ties broken by lower index:
    #(score > true) + #(score == true at a lower index)"""
    true = S[numpy.arange(len(y)), y][:, None]
    lower = numpy.arange(S.shape[1])[None, :] < y[:, None]
    return (S > true).sum(axis=1) + ((S == true) & lower).sum(axis=1)


def _power_ratio(S, y, P, noise_power=None):
    pn = P.min(axis=1) if noise_power is None else numpy.full(len(y), float(noise_power))
    rows = numpy.arange(len(y))
    pred = numpy.argmax(S, axis=1)
    num = P[rows, y] - 0.5 * pn
    den = P[rows, pred] - 0.5 * pn
    bad = (den <= 0) | (num <= 0)
    if bad.any():
        i = int(numpy.flatnonzero(bad)[0])
        raise DataValidationError(
            "power loss undefined for sample {0}: beam powers must exceed half the noise floor "
            "(true {1!r}, predicted {2!r}, noise {3!r})".format(i, float(P[i, y[i]]), float(P[i, pred[i]]), float(pn[i])))
    return num / den


# -----------------------------------------------------------------------------
# metrics

def top_k_accuracy(samples, K):
    S, y = _stack(samples)
    if not 1 <= K <= S.shape[1]:
        raise UsageError("K must lie in [1, {0}], got {1}".format(S.shape[1], K))
    return float(numpy.count_nonzero(_ranks(S, y) < K)) / len(y)


def top_k_curve(samples):
    """[Top-K accuracy for K = 1..M]"""
    S, y = _stack(samples)
    counts = numpy.bincount(_ranks(S, y), minlength=S.shape[1]).cumsum()
    return [float(c) / len(y) for c in counts]


def per_sample_power_loss(sample, noise_power=None):
    """10 log10((P_true - Pn/2) / (P_pred - Pn/2)) for one sample; Pn is the
    smallest power in the sample unless noise_power is given"""
    if sample.powers is None:
        raise MissingPowers("sample has no power vector")
    ratio = _power_ratio(sample.scores[None], numpy.array([sample.true_beam]), sample.powers[None], noise_power)
    return float(10.0 * numpy.log10(ratio[0]))


def per_sample_power_losses(samples, noise_power=None):
    S, y = _stack(samples)
    return 10.0 * numpy.log10(_power_ratio(S, y, _powers(samples), noise_power))


def average_power_loss(samples, noise_power=None):
    """10 log10 of the mean power ratio over the samples"""
    S, y = _stack(samples)
    ratio = _power_ratio(S, y, _powers(samples), noise_power)
    return float(10.0 * math.log10(float(ratio.mean())))


def overhead_savings(samples, reliability_target):
    """(b_min, 1 - b_min/M): b_min is the smallest K whose Top-K accuracy reaches
    the target, or M when none does"""
    if not 0 < reliability_target <= 1:
        raise UsageError("reliability target must lie in (0, 1], got {0}".format(reliability_target))
    curve = top_k_curve(samples)
    M = len(curve)
    b_min = next((k for k, acc in enumerate(curve, start=1) if acc >= reliability_target), M)
    return b_min, 1.0 - b_min / M


def power_loss_reliability(samples, threshold_db, noise_power=None):
    losses = per_sample_power_losses(samples, noise_power)
    return float(numpy.count_nonzero(losses <= threshold_db)) / len(losses)


def overhead_curve(samples, targets=DEFAULT_TARGETS):
    rows = []
    for target in targets:
        b_min, savings = overhead_savings(samples, target)
        rows.append(OrderedDict([("target", target), ("b_min", b_min), ("savings", savings)]))
    return rows


def reliability_curve(samples, thresholds_db, noise_power=None):
    losses = per_sample_power_losses(samples, noise_power)
    return [
        OrderedDict([("threshold_db", float(t)), ("reliability", float(numpy.count_nonzero(losses <= t)) / len(losses))])
        for t in thresholds_db
    ]


def power_footprint(samples):
    """mean power vector re-centred on the true beam, relative to the true-beam power.

    Returns (offsets, mean) with offsets -(M-1)..(M-1); each offset averages
    only the samples whose codebook reaches it.
    """
    P = _powers(samples)
    y = numpy.array([s.true_beam for s in samples], dtype=numpy.int64)
    N, M = P.shape
    total = numpy.zeros(2 * M - 1)
    count = numpy.zeros(2 * M - 1, dtype=numpy.int64)
    rel = P / P[numpy.arange(N), y][:, None]
    for n in range(N):
        idx = numpy.arange(M) - y[n] + (M - 1)
        total[idx] += rel[n]
        count[idx] += 1
    offsets = numpy.arange(-(M - 1), M)
    covered = count > 0
    return offsets[covered], total[covered] / count[covered]


# -----------------------------------------------------------------------------
# reports

@dataclass
class MetricsReport:
    M: int
    n_samples: list
    top_k: list
    mean_pl_db: Optional[list] = None
    reliability: Optional[list] = None
    overhead: list = field(default_factory=list)
    overhead_by_step: list = field(default_factory=list)
    param_count: Optional[int] = None
    size_bytes: Optional[int] = None
    noise_floor: str = "sample"
    thresholds_db: tuple = DEFAULT_THRESHOLDS_DB

    @property
    def steps(self):
        return len(self.top_k)

    @property
    def has_powers(self):
        return self.mean_pl_db is not None


def scenario_noise_power(per_step):
    return float(min(s.powers.min() for step in per_step for s in step))


def build_report(per_step, M, param_count=None, size_bytes=None, noise_floor="sample",
                 targets=DEFAULT_TARGETS, thresholds_db=DEFAULT_THRESHOLDS_DB):
    """full MetricsReport from per-step sample lists.

    Power metrics are left out (with a warning) when any sample lacks powers.
    noise_floor "sample" takes Pn per sample; "scenario" uses the smallest power
    over the whole evaluated set.
    """
    if noise_floor not in ("sample", "scenario"):
        raise UsageError("noise floor must be 'sample' or 'scenario'")
    if not per_step or any(not step for step in per_step):
        raise EmptySet("every prediction step needs at least one sample")

    report = MetricsReport(
        M=M,
        n_samples=[len(step) for step in per_step],
        top_k=[top_k_curve(step) for step in per_step],
        overhead=overhead_curve([s for step in per_step for s in step], targets),
        overhead_by_step=[overhead_curve(step, targets) for step in per_step],
        param_count=param_count,
        size_bytes=size_bytes,
        noise_floor=noise_floor,
        thresholds_db=tuple(thresholds_db),
    )

    if all(s.powers is not None for step in per_step for s in step):
        noise = scenario_noise_power(per_step) if noise_floor == "scenario" else None
        report.mean_pl_db = [average_power_loss(step, noise) for step in per_step]
        report.reliability = [
            [row["reliability"] for row in reliability_curve(step, thresholds_db, noise)] for step in per_step
        ]
    else:
        msg("power vectors missing; power-loss metrics omitted", "warning")
    return report


def _threshold_key(t):
    return "{0:g}db".format(t)


def _target_key(t):
    return "{0:g}".format(round(t * 100, 6))


def report_lines(report, topk=(1,)):
    """fixed-key `key=value` lines, in a stable order"""
    ks = sorted({1, *[k for k in topk if 1 <= k <= report.M]})
    out = []
    if report.param_count is not None:
        out.append(("params.count", report.param_count))
        out.append(("params.size_bytes", report.size_bytes))
    out.append(("noise_floor", report.noise_floor))
    for v in range(report.steps):
        out.append(("samples.step{0}".format(v), report.n_samples[v]))
    for k in ks:
        for v in range(report.steps):
            out.append(("top{0}_acc.step{1}".format(k, v), report.top_k[v][k - 1]))
    if report.has_powers:
        for v in range(report.steps):
            out.append(("mean_pl_db.step{0}".format(v), report.mean_pl_db[v]))
        for i, t in enumerate(report.thresholds_db):
            for v in range(report.steps):
                out.append(("reliability.{0}.step{1}".format(_threshold_key(t), v), report.reliability[v][i]))
    for row in report.overhead:
        out.append(("overhead.b" + _target_key(row["target"]), row["b_min"]))
        out.append(("overhead.savings" + _target_key(row["target"]), row["savings"]))
    for v, rows in enumerate(report.overhead_by_step):
        for row in rows:
            out.append(("overhead.b{0}.step{1}".format(_target_key(row["target"]), v), row["b_min"]))
    return ["{0}={1}".format(k, repr(val) if isinstance(val, float) else val) for k, val in out]


def top_k_table(report):
    """rows K, top_k.step0 .. top_k.step{V} for plotting accuracy against K"""
    rows = []
    for k in range(1, report.M + 1):
        row = OrderedDict([("K", k)])
        for v in range(report.steps):
            row["step{0}".format(v)] = report.top_k[v][k - 1]
        rows.append(row)
    return rows
