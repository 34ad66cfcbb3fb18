import math

import numpy
import pytest

from core.logic.exceptions import DataValidationError, EmptySet, MissingPowers, UsageError
from core.logic.metrics import (
    EvalSample, eval_samples, top_k_accuracy, top_k_curve, per_sample_power_loss, per_sample_power_losses,
    average_power_loss, overhead_savings, power_loss_reliability, overhead_curve, reliability_curve, power_footprint,
    build_report, report_lines, top_k_table, scenario_noise_power
)


def one_hot_scores(M, beam, mass=0.9):
    s = numpy.full(M, (1.0 - mass) / (M - 1))
    s[beam] = mass
    return s


def random_samples(rng, N=500, M=32, ties=False):
    out = []
    for _ in range(N):
        raw = rng.integers(1, 5, M).astype(float) if ties else rng.uniform(0, 1, M)
        p = rng.uniform(0.01, 1.0, M)
        out.append(EvalSample(0, int(rng.integers(0, M)), raw / raw.sum(), p))
    return out


def brute_force_topk(samples, K):
    hits = 0
    for s in samples:
        order = sorted(range(len(s.scores)), key=lambda m: (-s.scores[m], m))
        hits += s.true_beam in order[:K]
    return hits / len(samples)


def brute_force_power_loss(samples):
    ratios = []
    for s in samples:
        pn = min(s.powers)
        pred = max(range(len(s.scores)), key=lambda m: (s.scores[m], -m))
        ratios.append((s.powers[s.true_beam] - pn / 2) / (s.powers[pred] - pn / 2))
    return 10 * math.log10(sum(ratios) / len(ratios))


class TestEvalSample(object):

    def test_scores_must_sum_to_one(self):
        with pytest.raises(DataValidationError):
            EvalSample(0, 0, [0.5, 0.6])

    def test_true_beam_in_range(self):
        with pytest.raises(DataValidationError):
            EvalSample(0, 2, [0.5, 0.5])

    def test_power_shape(self):
        with pytest.raises(DataValidationError):
            EvalSample(0, 0, [0.5, 0.5], [1.0, 0.2, 0.1])

    def test_from_arrays(self, rng):
        scores = rng.dirichlet(numpy.ones(4), size=(3, 2))
        labels = rng.integers(0, 4, (3, 2))
        per_step = eval_samples(scores, labels)
        assert len(per_step) == 2 and len(per_step[0]) == 3
        assert per_step[1][2].true_beam == labels[2, 1]
        assert per_step[1][0].step == 1


class TestTopK(object):

    def test_matches_brute_force(self, rng):
        samples = random_samples(rng)
        for K in (1, 2, 5, 32):
            assert top_k_accuracy(samples, K) == pytest.approx(brute_force_topk(samples, K))

    def test_ties_match_brute_force(self, rng):
        samples = random_samples(rng, M=8, ties=True)
        curve = top_k_curve(samples)
        for K in range(1, 9):
            assert curve[K - 1] == pytest.approx(brute_force_topk(samples, K))

    def test_tie_goes_to_lower_index(self):
        low = EvalSample(0, 1, [0.2, 0.4, 0.4])
        high = EvalSample(0, 2, [0.2, 0.4, 0.4])
        assert top_k_accuracy([low], 1) == 1.0
        assert top_k_accuracy([high], 1) == 0.0
        assert top_k_accuracy([high], 2) == 1.0

    def test_curve_monotone_and_complete(self, rng):
        curve = top_k_curve(random_samples(rng, N=100, M=16))
        assert len(curve) == 16
        assert all(a <= b for a, b in zip(curve, curve[1:]))
        assert curve[-1] == 1.0

    def test_k_out_of_range(self):
        with pytest.raises(UsageError):
            top_k_accuracy([EvalSample(0, 0, [0.5, 0.5])], 3)

    def test_empty(self):
        with pytest.raises(EmptySet):
            top_k_accuracy([], 1)


class TestPowerLoss(object):

    def test_hand_case(self):
        s = EvalSample(0, 0, [0.2, 0.7, 0.1], [3.05, 1.05, 0.1])
        assert per_sample_power_loss(s) == pytest.approx(10 * math.log10(3.0), abs=1e-9)
        assert per_sample_power_loss(s) == pytest.approx(4.7712, abs=1e-4)

    def test_correct_prediction_is_lossless(self):
        s = EvalSample(0, 1, one_hot_scores(4, 1), [0.2, 1.0, 0.5, 0.1])
        assert per_sample_power_loss(s) == 0.0

    def test_scenario_noise_power(self):
        s = EvalSample(0, 0, [0.2, 0.7, 0.1], [3.05, 1.05, 0.1])
        assert per_sample_power_loss(s, noise_power=0.0) == pytest.approx(10 * math.log10(3.05 / 1.05))

    def test_average_matches_brute_force(self, rng):
        samples = random_samples(rng)
        assert average_power_loss(samples) == pytest.approx(brute_force_power_loss(samples), abs=1e-9)

    def test_missing_powers(self):
        with pytest.raises(MissingPowers):
            average_power_loss([EvalSample(0, 0, [0.5, 0.5])])

    def test_zero_powers_are_rejected(self):
        s = EvalSample(0, 0, [0.2, 0.7, 0.1], [0.0, 0.0, 0.0])
        with pytest.raises(DataValidationError):
            per_sample_power_loss(s)
        with pytest.raises(DataValidationError):
            average_power_loss([s])
        with pytest.raises(DataValidationError):
            reliability_curve([s], [1.0])


class TestOverhead(object):

    def test_hand_case(self):
        samples = []
        for b in range(10):
            s = numpy.full(32, 0.2 / 30)
            s[(b + 1) % 32] = 0.5
            s[b] = 0.3
            samples.append(EvalSample(0, b, s))
        # true beam always second best
        assert overhead_savings(samples, 0.95) == (2, pytest.approx(0.9375))

    def test_worst_case_needs_full_codebook(self):
        s = [EvalSample(0, 3, [0.4, 0.3, 0.2, 0.1])]
        assert overhead_savings(s, 0.99) == (4, 0.0)

    def test_curve_is_monotone_in_target(self, rng):
        rows = overhead_curve(random_samples(rng, N=200, M=16))
        bs = [r["b_min"] for r in rows]
        assert all(a <= b for a, b in zip(bs, bs[1:]))

    def test_invalid_target(self):
        with pytest.raises(UsageError):
            overhead_savings([EvalSample(0, 0, [0.5, 0.5])], 1.5)


class TestReliability(object):

    def test_monotone_in_threshold(self, rng):
        samples = random_samples(rng, N=200, M=16)
        rows = reliability_curve(samples, numpy.arange(0, 10.5, 0.5))
        values = [r["reliability"] for r in rows]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_hand_case(self):
        good = EvalSample(0, 0, [0.6, 0.3, 0.1], [3.05, 1.05, 0.1])
        bad = EvalSample(0, 0, [0.2, 0.7, 0.1], [3.05, 1.05, 0.1])
        assert power_loss_reliability([good, bad], 1.0) == 0.5
        assert power_loss_reliability([good, bad], 5.0) == 1.0


class TestFootprint(object):

    def test_centered_on_true_beam(self):
        samples = [
            EvalSample(0, 1, [0.1, 0.8, 0.1], [0.5, 1.0, 0.25]),
            EvalSample(0, 0, [0.8, 0.1, 0.1], [2.0, 1.0, 0.5]),
        ]
        offsets, mean = power_footprint(samples)
        assert list(offsets) == [-1, 0, 1, 2]
        assert mean[1] == 1.0
        assert mean[0] == pytest.approx(0.5)
        assert mean[2] == pytest.approx((0.25 + 0.5) / 2)
        assert mean[3] == pytest.approx(0.25)


class TestReport(object):

    def per_step(self, rng, powers=True):
        out = []
        for v in range(2):
            step = random_samples(rng, N=40, M=8)
            for s in step:
                s.step = v
                if not powers:
                    s.powers = None
            out.append(step)
        return out

    def test_lines(self, rng):
        per_step = self.per_step(rng)
        report = build_report(per_step, 8, param_count=260064, size_bytes=1040256)
        lines = report_lines(report, topk=(3,))
        keys = [line.split("=")[0] for line in lines]
        assert keys[:3] == ["params.count", "params.size_bytes", "noise_floor"]
        for key in ("samples.step1", "top1_acc.step0", "top3_acc.step1", "mean_pl_db.step0",
                    "reliability.1db.step0", "reliability.3db.step1", "overhead.b80", "overhead.savings99",
                    "overhead.b95.step1"):
            assert key in keys
        assert len(keys) == len(set(keys))
        top1 = dict(line.split("=") for line in lines)["top1_acc.step0"]
        assert float(top1) == top_k_accuracy(per_step[0], 1)

    def test_lines_are_stable(self, rng):
        per_step = self.per_step(rng)
        assert report_lines(build_report(per_step, 8)) == report_lines(build_report(per_step, 8))

    def test_without_powers(self, rng):
        report = build_report(self.per_step(rng, powers=False), 8)
        assert not report.has_powers
        assert not any(line.startswith("mean_pl_db") for line in report_lines(report))

    def test_scenario_noise_floor(self, rng):
        per_step = self.per_step(rng)
        report = build_report(per_step, 8, noise_floor="scenario")
        noise = scenario_noise_power(per_step)
        assert report.mean_pl_db[0] == pytest.approx(average_power_loss(per_step[0], noise))

    def test_empty_step(self):
        with pytest.raises(EmptySet):
            build_report([[]], 8)

    def test_top_k_table(self, rng):
        report = build_report(self.per_step(rng), 8)
        rows = top_k_table(report)
        assert len(rows) == 8
        assert list(rows[0]) == ["K", "step0", "step1"]
        assert rows[-1]["step0"] == 1.0


def fixed_per_step():
    """two steps of four samples; ranks [0, 1, 1, 0] and [0, 0, 0, 3]"""
    down = [0.4, 0.3, 0.2, 0.1]
    up = [0.1, 0.2, 0.3, 0.4]
    step0 = [
        EvalSample(0, 0, down, [1.0, 0.5, 0.25, 0.1]),
        EvalSample(0, 1, down, [0.5, 1.0, 0.25, 0.1]),
        EvalSample(0, 2, up, [0.1, 0.25, 1.0, 0.5]),
        EvalSample(0, 3, up, [0.1, 0.25, 0.5, 1.0]),
    ]
    step1 = [
        EvalSample(1, 0, down, [1.0, 0.5, 0.25, 0.1]),
        EvalSample(1, 1, [0.1, 0.4, 0.3, 0.2], [0.1, 1.0, 0.5, 0.25]),
        EvalSample(1, 2, [0.1, 0.2, 0.4, 0.3], [0.1, 0.25, 1.0, 0.5]),
        EvalSample(1, 0, up, [1.0, 0.5, 0.1, 0.8]),
    ]
    return [step0, step1]


class TestGoldenReport(object):

    expected = [
        "params.count=10",
        "params.size_bytes=40",
        "noise_floor=sample",
        "samples.step0=4",
        "samples.step1=4",
        "top1_acc.step0=0.5",
        "top1_acc.step1=0.75",
        "top2_acc.step0=1.0",
        "top2_acc.step1=0.75",
        "mean_pl_db.step0",
        "mean_pl_db.step1",
        "reliability.1db.step0=0.5",
        "reliability.1db.step1=0.75",
        "reliability.3db.step0=0.5",
        "reliability.3db.step1=1.0",
        "overhead.b80=2",
        "overhead.savings80=0.5",
        "overhead.b85=2",
        "overhead.savings85=0.5",
        "overhead.b90=4",
        "overhead.savings90=0.0",
        "overhead.b95=4",
        "overhead.savings95=0.0",
        "overhead.b99=4",
        "overhead.savings99=0.0",
        "overhead.b80.step0=2",
        "overhead.b85.step0=2",
        "overhead.b90.step0=2",
        "overhead.b95.step0=2",
        "overhead.b99.step0=2",
        "overhead.b80.step1=4",
        "overhead.b85.step1=4",
        "overhead.b90.step1=4",
        "overhead.b95.step1=4",
        "overhead.b99.step1=4",
    ]

    def test_report(self):
        report = build_report(fixed_per_step(), 4, param_count=10, size_bytes=40)
        assert report.top_k == [[0.5, 1.0, 1.0, 1.0], [0.75, 0.75, 0.75, 1.0]]
        # mean ratios 14/9 and 16/15
        assert report.mean_pl_db[0] == pytest.approx(1.918855262389, abs=1e-9)
        assert report.mean_pl_db[1] == pytest.approx(0.280287236002, abs=1e-9)
        assert report.reliability == [[0.5, 0.5], [0.75, 1.0]]

    def test_lines(self):
        lines = report_lines(build_report(fixed_per_step(), 4, param_count=10, size_bytes=40), topk=(2,))
        assert len(lines) == len(self.expected)
        for line, want in zip(lines, self.expected):
            if "=" in want:
                assert line == want
            else:
                assert line.split("=")[0] == want

    def test_per_sample_losses(self):
        losses = per_sample_power_losses(fixed_per_step()[0])
        assert list(losses) == pytest.approx([0.0, 3.245110915135, 3.245110915135, 0.0], abs=1e-9)
